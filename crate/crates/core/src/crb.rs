//! Delay-domain FIM, position-domain FIM via the chain rule, and the
//! per-target CRB.
//!
//! Under zero-forcing transmit beams the delay FIM is diagonal: entry
//! (q, k, l) is (eta / sigma^2) * ||H_{q,k,l} w_k||^2 and every cross term
//! vanishes. The position FIM is then block diagonal across targets with
//! 2 x 2 blocks
//!
//! ```text
//! G_q = eta / (c^2 sigma^2) * sum_{k,l} E_{q,k,l} [[a^2, a b], [a b, b^2]]_{q,k,l}
//! ```
//!
//! and CRB_q = tr(G_q^{-1}) = c0 (A + B) / (A B - C^2) with c0 = c^2 sigma^2 / eta.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::beamforming::BeamSolution;
use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::geometry::{GeometryCoefficients, SPEED_OF_LIGHT};
use crate::model::Network;

/// Relative determinant below which a 2x2 FIM block counts as singular.
const SINGULAR_REL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FimBlocks {
    /// Position FIM block per target.
    pub g: Vec<Matrix2<f64>>,
    /// Diagonal delay-FIM entries (eta / sigma^2) E_{q,k,l}, in (q, k, l) order.
    pub delay_fim: Vec<f64>,
    /// Energy-weighted sums (A, B, C) per target, without the FIM scale.
    pub sums: Vec<[f64; 3]>,
    /// c0 = c^2 sigma^2 / eta.
    pub c0: f64,
    /// Targets whose block is singular.
    pub singular: Vec<usize>,
}

impl FimBlocks {
    /// eta / (c^2 sigma^2), the factor between energy sums and FIM entries.
    pub fn scale(&self) -> f64 {
        1.0 / self.c0
    }
}

/// ||H_I2I,q,k,l Theta_k H_B2I,k w_k||^2; zero for a deactivated IRS.
pub fn echo_energy(channels: &ChannelSet, beams: &BeamSolution, q: usize, k: usize, l: usize) -> f64 {
    let Some(theta) = &beams.theta[k] else {
        return 0.0;
    };
    let incident = &channels.h_b2i[k] * beams.w.column(k);
    let reflected = theta.component_mul(&incident);
    // H_I2I is rank one: alpha a_T2I a_I2T^H.
    let toward_target = channels.a_i2t(k, q).dotc(&reflected);
    let alpha = channels.alpha_i2i(q, k, l);
    alpha * alpha * channels.a_t2i(q, l).norm_squared() * toward_target.norm_sqr()
}

pub fn position_fim(network: &Network, beams: &BeamSolution) -> FimBlocks {
    let s = &network.scenario;
    let geo = &network.geometry;
    let ch = &network.channels;
    let (nq, nk) = (s.num_targets(), s.num_irs());
    let c0 = s.c0();
    let delay_scale = s.eta / s.noise_power;

    let mut delay_fim = Vec::with_capacity(nq * nk * nk);
    let mut g = Vec::with_capacity(nq);
    let mut sums = Vec::with_capacity(nq);
    let mut singular = Vec::new();
    for q in 0..nq {
        let (mut sa, mut sb, mut sc) = (0.0, 0.0, 0.0);
        for k in 0..nk {
            for l in 0..nk {
                let e = echo_energy(ch, beams, q, k, l);
                delay_fim.push(delay_scale * e);
                let (a, b) = (geo.a(q, k, l), geo.b(q, k, l));
                sa += e * a * a;
                sb += e * b * b;
                sc += e * a * b;
            }
        }
        let block = Matrix2::new(sa, sc, sc, sb) / c0;
        if is_singular(&block) {
            singular.push(q);
        }
        g.push(block);
        sums.push([sa, sb, sc]);
    }
    FimBlocks { g, delay_fim, sums, c0, singular }
}

fn is_singular(g: &Matrix2<f64>) -> bool {
    let tr = g.trace();
    !(tr > 0.0) || g.determinant() <= SINGULAR_REL * tr * tr
}

/// c0 (A + B) / (A B - C^2).
pub fn crb_closed_form(sums: [f64; 3], c0: f64) -> f64 {
    let [a, b, c] = sums;
    c0 * (a + b) / (a * b - c * c)
}

/// tr(G^{-1}) of a 2x2 block, or `None` when singular.
pub fn trace_inverse(g: &Matrix2<f64>) -> Option<f64> {
    if is_singular(g) {
        return None;
    }
    g.try_inverse().map(|inv| inv.trace())
}

/// Per-target CRB (m^2) as the trace of each inverse FIM block.
pub fn crb_trace(fim: &FimBlocks) -> Result<Vec<f64>> {
    fim.g
        .iter()
        .zip(&fim.sums)
        .enumerate()
        .map(|(q, (g, &sums))| {
            let crb = trace_inverse(g).ok_or(Error::SingularFim(q))?;
            let closed = crb_closed_form(sums, fim.c0);
            if ((crb - closed) / crb).abs() > 1e-9 {
                log::warn!("target {q}: trace-of-inverse {crb:e} disagrees with closed form {closed:e}");
            }
            Ok(crb)
        })
        .collect()
}

/// Recomputes every target's CRB from scratch: channels -> FIM -> trace.
pub fn evaluate_crb(network: &Network, beams: &BeamSolution) -> Result<Vec<f64>> {
    crb_trace(&position_fim(network, beams))
}

/// Whether adding `weight * [[a^2, ab], [ab, b^2]]` to `g` does not increase tr(g^{-1}).
pub fn rank_one_update_is_monotone(g: &Matrix2<f64>, dir: (f64, f64), weight: f64) -> bool {
    let Some(before) = trace_inverse(g) else {
        return false;
    };
    let (a, b) = dir;
    let update = Matrix2::new(a * a, a * b, a * b, b * b) * weight;
    let after = (g + update).try_inverse().map(|m| m.trace()).unwrap_or(f64::INFINITY);
    after <= before + 1e-12 * before.max(1.0)
}

/// Checks that raising the echo energy of path (q, k, l) by `delta` never
/// increases the CRB of target q.
pub fn weyl_monotonicity_check(
    fim: &FimBlocks,
    geometry: &GeometryCoefficients,
    q: usize,
    k: usize,
    l: usize,
    delta: f64,
) -> bool {
    assert!(delta >= 0.0, "energy increments are nonnegative");
    let dir = (geometry.a(q, k, l), geometry.b(q, k, l));
    rank_one_update_is_monotone(&fim.g[q], dir, delta * fim.scale())
}

/// Worst violation of the orthogonality design across active IRSs.
pub fn orthogonality_residual(channels: &ChannelSet, beams: &BeamSolution) -> f64 {
    beams.max_cross_term(channels)
}

/// One named benchmark value attached to a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineValue {
    pub scheme: String,
    pub worst_crb: f64,
}

/// Iteration bookkeeping of a solve.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolverTrace {
    /// Objective after each outer step (normalized CRB or transmit power).
    pub objective: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub stages: usize,
    /// |tr(W W^H) - P_max| / P_max of the last bisection probe.
    #[serde(default)]
    pub exit_power_mismatch: Option<f64>,
    /// Worst-target CRB after randomization over the relaxed value.
    #[serde(default)]
    pub randomization_loss: Option<f64>,
    /// Sum of SDR residuals per SCA iteration, one list per reflect step.
    #[serde(default)]
    pub residual_sums: Vec<Vec<f64>>,
    /// Free-form diagnostics.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrbReport {
    pub crb: Vec<f64>,
    pub worst_crb: f64,
    pub beams: BeamSolution,
    pub trace: SolverTrace,
    #[serde(default)]
    pub baselines: Vec<BaselineValue>,
}

impl CrbReport {
    /// Evaluates `beams` from scratch and packages the result.
    pub fn evaluate(network: &Network, beams: BeamSolution, trace: SolverTrace) -> Result<Self> {
        let crb = evaluate_crb(network, &beams)?;
        let worst_crb = crb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { crb, worst_crb, beams, trace, baselines: Vec::new() })
    }
}

/// Speed of light squared, exposed for oracle code that rebuilds the FIM.
pub fn c_squared() -> f64 {
    SPEED_OF_LIGHT * SPEED_OF_LIGHT
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_identities() {
        let g = Matrix2::new(4.0, 0.0, 0.0, 4.0);
        assert_eq!(trace_inverse(&g), Some(0.5));
        let g = Matrix2::new(2.0, 0.0, 0.0, 5.0);
        assert!((trace_inverse(&g).unwrap() - (0.5 + 0.2)).abs() < 1e-15);
        let g = Matrix2::new(3.0, 1.2, 1.2, 2.0);
        let closed = (3.0 + 2.0) / (3.0 * 2.0 - 1.44);
        assert!((trace_inverse(&g).unwrap() / closed - 1.0).abs() < 1e-14);
        assert!((crb_closed_form([3.0, 2.0, 1.2], 1.0) / closed - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_paths_give_scaled_identity() {
        // Two paths along x and y with equal energy.
        let g = Matrix2::new(1.0, 0.0, 0.0, 0.0) * 3.0 + Matrix2::new(0.0, 0.0, 0.0, 1.0) * 3.0;
        assert_eq!(g, Matrix2::identity() * 3.0);
        assert!(!is_singular(&g));
        // A single path is rank one.
        let single = Matrix2::new(0.36, 0.48, 0.48, 0.64);
        assert!(is_singular(&single));
        assert!(trace_inverse(&single).is_none());
    }

    #[test]
    fn zero_increment_is_neutral() {
        let g = Matrix2::new(2.0, 0.3, 0.3, 1.0);
        assert!(rank_one_update_is_monotone(&g, (0.4, -1.2), 0.0));
        assert!(rank_one_update_is_monotone(&g, (0.4, -1.2), 1.0));
    }
}
