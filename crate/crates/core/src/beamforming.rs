//! Beam solutions: zero-forcing transmit beams at the BS and closed-form
//! reflect phases at the IRSs.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{planar_steering, CMatrix, CVector, ChannelSet};
use crate::error::{Error, Result};
use crate::geometry::{vec3, Position, Scenario};

/// Transmit powers, reflect vectors and the active IRS set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamSolution {
    /// p_k = e_k^2 for every IRS (zero when deactivated).
    pub power: Vec<f64>,
    /// Unit-modulus reflect vector per IRS, `None` when deactivated.
    pub theta: Vec<Option<CVector>>,
    /// Active IRS indices in ascending order.
    pub active: Vec<usize>,
    /// Transmit beams, N_T x K; columns of inactive IRSs are zero.
    pub w: CMatrix,
}

impl BeamSolution {
    /// Builds the zero-forcing beams for `power` over `active` and attaches `theta`.
    pub fn assemble(
        channels: &ChannelSet,
        active: &[usize],
        power: Vec<f64>,
        theta: Vec<Option<CVector>>,
    ) -> Result<Self> {
        let e: Vec<f64> = active.iter().map(|&k| power[k].max(0.0).sqrt()).collect();
        let w = zf_transmit(channels, active, &e)?;
        Ok(Self { power, theta, active: active.to_vec(), w })
    }

    /// tr(W W^H).
    pub fn transmit_power(&self) -> f64 {
        self.w.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest |a_B2I,k1^H w_k2| over distinct active IRSs.
    pub fn max_cross_term(&self, channels: &ChannelSet) -> f64 {
        let mut worst: f64 = 0.0;
        for &k1 in &self.active {
            for &k2 in &self.active {
                if k1 != k2 {
                    let v = channels.a_b2i_tx[k1].dotc(&self.w.column(k2)).norm();
                    worst = worst.max(v);
                }
            }
        }
        worst
    }

    /// Scales every beam power by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = factor.sqrt();
        Self {
            power: self.power.iter().map(|p| p * factor).collect(),
            theta: self.theta.clone(),
            active: self.active.clone(),
            w: &self.w * Complex64::from(s),
        }
    }
}

/// Rows a_B2I,k^H of the active IRSs.
fn steering_rows(channels: &ChannelSet, active: &[usize]) -> CMatrix {
    let mut a = CMatrix::zeros(active.len(), channels.n_tx);
    for (r, &k) in active.iter().enumerate() {
        a.row_mut(r).copy_from(&channels.a_b2i_tx[k].adjoint());
    }
    a
}

/// Whether the Gram matrix is far enough from singular for zero forcing:
/// smallest eigenvalue above 1e-10 of the largest.
fn gram_is_regular(gram: &CMatrix) -> bool {
    let eig = gram.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    lo > 1e-10 * hi
}

/// Whether BS steering vectors toward a set of IRSs admit zero forcing.
pub fn steering_is_regular(vectors: &[CVector]) -> bool {
    let Some(first) = vectors.first() else { return true };
    let mut a = CMatrix::zeros(vectors.len(), first.len());
    for (r, v) in vectors.iter().enumerate() {
        a.row_mut(r).copy_from(&v.adjoint());
    }
    gram_is_regular(&(&a * a.adjoint()))
}

/// Inverse of the Gram matrix A A^H, or the pair of IRSs that makes it singular.
fn gram_inverse(channels: &ChannelSet, active: &[usize]) -> Result<(CMatrix, CMatrix)> {
    let a = steering_rows(channels, active);
    let gram = &a * a.adjoint();
    let chol = if gram_is_regular(&gram) { Cholesky::new(gram) } else { None };
    match chol {
        Some(c) => Ok((a, c.inverse())),
        None => Err(most_collinear_pair(channels, active)),
    }
}

fn most_collinear_pair(channels: &ChannelSet, active: &[usize]) -> Error {
    let n = channels.n_tx as f64;
    let mut best = (0.0, active[0], *active.last().unwrap());
    for (i, &k1) in active.iter().enumerate() {
        for &k2 in &active[i + 1..] {
            let c = channels.a_b2i_tx[k1].dotc(&channels.a_b2i_tx[k2]).norm() / n;
            if c > best.0 {
                best = (c, k1, k2);
            }
        }
    }
    Error::RankDeficientSteering(best.1, best.2)
}

/// Power weights h_k = [(A A^H)^{-1}]_{k,k} over the active set, so that
/// tr(W W^H) = sum_k e_k^2 h_k.
pub fn zf_power_weights(channels: &ChannelSet, active: &[usize]) -> Result<Vec<f64>> {
    let (_, inv) = gram_inverse(channels, active)?;
    Ok((0..active.len()).map(|i| inv[(i, i)].re).collect())
}

/// Zero-forcing beams W = A^H (A A^H)^{-1} diag(e) over the active set.
/// Returns an N_T x K matrix with zero columns for inactive IRSs.
pub fn zf_transmit(channels: &ChannelSet, active: &[usize], e: &[f64]) -> Result<CMatrix> {
    assert_eq!(active.len(), e.len(), "one amplitude per active IRS");
    let mut w = CMatrix::zeros(channels.n_tx, channels.num_irs);
    if active.is_empty() {
        return Ok(w);
    }
    let (a, inv) = gram_inverse(channels, active)?;
    let diag = DMatrix::from_diagonal(&CVector::from_iterator(e.len(), e.iter().map(|&v| Complex64::from(v))));
    let mut wa = a.adjoint() * &inv * &diag;
    // One refinement step against the residual A W - diag(e); near-collinear
    // IRS directions otherwise leave cross terms well above rounding level.
    let residual = &a * &wa - &diag;
    wa -= a.adjoint() * &inv * residual;
    for (c, &k) in active.iter().enumerate() {
        w.set_column(k, &wa.column(c));
    }
    Ok(w)
}

/// Reflect phases maximizing |a_I2T,k,q^H diag(theta) H_B2I,k w_k|:
/// each element cancels the phase of its effective channel.
pub fn optimal_theta(channels: &ChannelSet, k: usize, q: usize, w_k: &CVector) -> Result<CVector> {
    let hw = &channels.h_b2i[k] * w_k;
    let eff = channels.a_i2t(k, q).zip_map(&hw, |a, h| a.conj() * h);
    align_phases(&eff).ok_or(Error::ZeroEffectiveChannel(k))
}

/// theta_n = conj(g_n) / |g_n|; entries with |g_n| = 0 get phase zero.
pub(crate) fn align_phases(eff: &CVector) -> Option<CVector> {
    let scale = eff.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    Some(eff.map(|g| {
        let m = g.norm();
        if m <= 1e-300 {
            Complex64::new(1.0, 0.0)
        } else {
            g.conj() / m
        }
    }))
}

/// Closed-form phases of IRS k when its transmit beam is aligned with the
/// BS->IRS direction (any zero-forcing beam is, up to a positive scale).
pub fn aligned_theta(channels: &ChannelSet, k: usize, q: usize) -> CVector {
    align_phases(&channels.reflect_vector(q, k).map(|z| z.conj()))
        .expect("steering vectors have unit-modulus entries")
}

/// Closed-form phases of IRS k toward an arbitrary ground point, e.g. the
/// centroid of several targets.
pub fn theta_toward_point(scenario: &Scenario, channels: &ChannelSet, k: usize, point: &Position) -> CVector {
    let irs = vec3(&scenario.irs_positions[k]);
    let u = (vec3(point) - irs).normalize();
    let sp = scenario.element_spacing;
    let toward = planar_steering(sp * u.x, scenario.n_elem_x, sp * u.z, scenario.n_elem_z);
    let w = toward.zip_map(&channels.a_i2b[k], |t, b| t * b.conj());
    align_phases(&w.map(|z| z.conj())).expect("steering vectors have unit-modulus entries")
}

/// Unweighted centroid of the targets.
pub fn target_centroid(scenario: &Scenario) -> Position {
    let n = scenario.num_targets() as f64;
    let mut c = [0.0; 3];
    for t in &scenario.target_positions {
        for i in 0..3 {
            c[i] += t[i] / n;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{generate_scenario, ScenarioParams};
    use crate::channel::build_channels;

    fn channels(k: usize, nt: usize, seed: u64) -> ChannelSet {
        let mut p = ScenarioParams::default();
        p.n_irs = k;
        p.n_tx = nt;
        build_channels(&generate_scenario(&p, seed).unwrap()).unwrap()
    }

    #[test]
    fn single_irs_zf_is_matched_filter() {
        let ch = channels(1, 8, 3);
        let w = zf_transmit(&ch, &[0], &[2.0]).unwrap();
        let expect = &ch.a_b2i_tx[0] * Complex64::from(2.0 / 8.0);
        assert!((w.column(0) - expect).norm() < 1e-12);
    }

    #[test]
    fn zf_nulls_cross_terms_and_matches_power_weights() {
        for seed in 0..20 {
            let ch = channels(6, 12, seed);
            let active: Vec<usize> = (0..6).collect();
            let e: Vec<f64> = (0..6).map(|i| 0.5 + i as f64).collect();
            let w = zf_transmit(&ch, &active, &e).unwrap();
            let h = zf_power_weights(&ch, &active).unwrap();
            for k1 in 0..6 {
                for k2 in 0..6 {
                    let v = ch.a_b2i_tx[k1].dotc(&w.column(k2));
                    if k1 == k2 {
                        assert!((v - Complex64::from(e[k1])).norm() < 1e-9);
                    } else {
                        assert!(v.norm() < 1e-9);
                    }
                }
            }
            let tr: f64 = w.iter().map(|z| z.norm_sqr()).sum();
            let weighted: f64 = e.iter().zip(&h).map(|(e, h)| e * e * h).sum();
            assert!((tr / weighted - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn shared_direction_is_rank_deficient() {
        let mut ch = channels(3, 6, 5);
        ch.a_b2i_tx[2] = ch.a_b2i_tx[0].clone();
        match zf_transmit(&ch, &[0, 1, 2], &[1.0, 1.0, 1.0]) {
            Err(Error::RankDeficientSteering(a, b)) => assert_eq!((a, b), (0, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aligned_entries_need_no_phase() {
        let mut ch = channels(1, 4, 1);
        let n = ch.n_elements;
        ch.a_i2t[0] = CVector::from_element(n, Complex64::new(1.0, 0.0));
        ch.h_b2i[0] = CMatrix::from_element(n, ch.n_tx, Complex64::new(0.25, 0.0));
        let w = CVector::from_element(ch.n_tx, Complex64::new(1.0, 0.0));
        let theta = optimal_theta(&ch, 0, 0, &w).unwrap();
        assert!(theta.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        // Coherent gain of N unit-modulus entries.
        let hw = &ch.h_b2i[0] * &w;
        let g: Complex64 = (0..n).map(|i| ch.a_i2t[0][i].conj() * theta[i] * hw[i]).sum();
        assert!((g.norm() - n as f64 * hw[0].norm()).abs() < 1e-12);
    }

    #[test]
    fn zero_beam_is_an_error() {
        let ch = channels(1, 4, 2);
        let w = CVector::zeros(ch.n_tx);
        assert!(matches!(optimal_theta(&ch, 0, 0, &w), Err(Error::ZeroEffectiveChannel(0))));
    }
}
