//! Array steering vectors, free-space path gains and the cascaded
//! BS -> IRS -> target -> IRS channels.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::Result;
use crate::geometry::{vec3, Scenario};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Uniform linear array response: entry n is exp(j 2 pi n theta).
///
/// `theta` is the phase progression between adjacent elements in cycles
/// (element spacing in wavelengths times the direction cosine).
pub fn steering(theta: f64, count: usize) -> CVector {
    CVector::from_fn(count, |n, _| Complex64::from_polar(1.0, 2.0 * PI * n as f64 * theta))
}

/// Uniform planar array response `a(theta_x, N_x) ⊗ a(theta_z, N_z)`.
pub fn planar_steering(theta_x: f64, nx: usize, theta_z: f64, nz: usize) -> CVector {
    let ax = steering(theta_x, nx);
    let az = steering(theta_z, nz);
    ax.kronecker(&az)
}

/// BS -> IRS amplitude gain sqrt(lambda^2 / (16 pi^2 d^2)).
pub fn pathloss_b2i(wavelength: f64, distance: f64) -> f64 {
    (wavelength * wavelength / (16.0 * PI * PI * distance * distance)).sqrt()
}

/// IRS -> target -> IRS amplitude gain sqrt(lambda^2 kappa / (64 pi^3 d1^2 d2^2)).
pub fn pathloss_i2i(wavelength: f64, rcs: f64, d1: f64, d2: f64) -> f64 {
    let dd = d1 * d2;
    (wavelength * wavelength * rcs / (64.0 * PI.powi(3) * dd * dd)).sqrt()
}

/// Every steering vector and path gain of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSet {
    pub num_irs: usize,
    pub num_targets: usize,
    pub n_tx: usize,
    pub n_elements: usize,
    pub m_sensors: usize,
    /// H_B2I,k = alpha_B2I,k a_I2B,k a_B2I,k^H, each N x N_T.
    pub h_b2i: Vec<CMatrix>,
    /// Receive response of IRS k's reflecting elements toward the BS.
    pub a_i2b: Vec<CVector>,
    /// BS transmit response toward IRS k, length N_T.
    pub a_b2i_tx: Vec<CVector>,
    /// Reflect response of IRS k toward target q, indexed `k * Q + q`.
    pub a_i2t: Vec<CVector>,
    /// Sensor response of IRS l toward target q, indexed `q * K + l`.
    pub a_t2i: Vec<CVector>,
    pub alpha_b2i: Vec<f64>,
    /// Two-hop gains indexed (q, k, l) like the geometry coefficients.
    pub alpha_i2i: Vec<f64>,
}

impl ChannelSet {
    pub fn a_i2t(&self, k: usize, q: usize) -> &CVector {
        &self.a_i2t[k * self.num_targets + q]
    }

    pub fn a_t2i(&self, q: usize, l: usize) -> &CVector {
        &self.a_t2i[q * self.num_irs + l]
    }

    pub fn alpha_i2i(&self, q: usize, k: usize, l: usize) -> f64 {
        self.alpha_i2i[(q * self.num_irs + k) * self.num_irs + l]
    }

    /// H_I2I,q,k,l = alpha a_T2I,q,l a_I2T,k,q^H (M x N).
    pub fn h_i2i(&self, q: usize, k: usize, l: usize) -> CMatrix {
        self.a_t2i(q, l) * self.a_i2t(k, q).adjoint() * Complex64::from(self.alpha_i2i(q, k, l))
    }

    /// Conjugate-free reflect vector w_{q,k} with |w^H theta| the array gain of
    /// IRS k toward target q for reflect vector theta.
    pub fn reflect_vector(&self, q: usize, k: usize) -> CVector {
        self.a_i2t(k, q).zip_map(&self.a_i2b[k], |t, b| t * b.conj())
    }
}

/// Unit direction from `from` toward `to`.
fn direction(from: &Vector3<f64>, to: &Vector3<f64>) -> Vector3<f64> {
    (to - from).normalize()
}

pub fn build_channels(scenario: &Scenario) -> Result<ChannelSet> {
    scenario.validate()?;
    let nk = scenario.num_irs();
    let nq = scenario.num_targets();
    let s = scenario.element_spacing;
    let (nx, nz) = (scenario.n_elem_x, scenario.n_elem_z);
    let (mx, mz) = (scenario.m_sens_x, scenario.m_sens_z);
    let bs = vec3(&scenario.bs_position);
    let irs: Vec<_> = scenario.irs_positions.iter().map(vec3).collect();
    let targets: Vec<_> = scenario.target_positions.iter().map(vec3).collect();

    let mut h_b2i = Vec::with_capacity(nk);
    let mut a_i2b = Vec::with_capacity(nk);
    let mut a_b2i_tx = Vec::with_capacity(nk);
    let mut alpha_b2i = Vec::with_capacity(nk);
    for p in &irs {
        let d = (p - bs).norm();
        let alpha = pathloss_b2i(scenario.wavelength, d);
        let tx = steering(s * direction(&bs, p).x, scenario.n_tx);
        let back = direction(p, &bs);
        let rx = planar_steering(s * back.x, nx, s * back.z, nz);
        h_b2i.push(&rx * tx.adjoint() * Complex64::from(alpha));
        a_i2b.push(rx);
        a_b2i_tx.push(tx);
        alpha_b2i.push(alpha);
    }

    let mut a_i2t = Vec::with_capacity(nk * nq);
    for p in &irs {
        for t in &targets {
            let u = direction(p, t);
            a_i2t.push(planar_steering(s * u.x, nx, s * u.z, nz));
        }
    }
    let mut a_t2i = Vec::with_capacity(nq * nk);
    for t in &targets {
        for p in &irs {
            let u = direction(p, t);
            a_t2i.push(planar_steering(s * u.x, mx, s * u.z, mz));
        }
    }

    let mut alpha_i2i = Vec::with_capacity(nq * nk * nk);
    for t in &targets {
        for pk in &irs {
            for pl in &irs {
                alpha_i2i.push(pathloss_i2i(scenario.wavelength, scenario.rcs, (pk - t).norm(), (pl - t).norm()));
            }
        }
    }

    Ok(ChannelSet {
        num_irs: nk,
        num_targets: nq,
        n_tx: scenario.n_tx,
        n_elements: nx * nz,
        m_sensors: mx * mz,
        h_b2i,
        a_i2b,
        a_b2i_tx,
        a_i2t,
        a_t2i,
        alpha_b2i,
        alpha_i2i,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{generate_scenario, ScenarioParams};

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn steering_examples() {
        let one = Complex64::new(1.0, 0.0);
        let j = Complex64::new(0.0, 1.0);
        assert!(steering(0.0, 4).iter().all(|&v| close(v, one)));
        let q = steering(0.25, 4);
        for (v, e) in q.iter().zip([one, j, -one, -j]) {
            assert!(close(*v, e));
        }
        let h = steering(0.5, 2);
        assert!(close(h[0], one) && close(h[1], -one));
    }

    #[test]
    fn planar_matches_elementwise_construction() {
        for nx in 1..=4 {
            for nz in 1..=4 {
                let (tx, tz) = (0.31, -0.17);
                let a = planar_steering(tx, nx, tz, nz);
                for i in 0..nx {
                    for k in 0..nz {
                        let e = Complex64::from_polar(1.0, 2.0 * PI * (i as f64 * tx + k as f64 * tz));
                        assert!(close(a[i * nz + k], e));
                    }
                }
            }
        }
    }

    #[test]
    fn pathloss_values() {
        assert!((pathloss_b2i(0.3, 50.0) - 4.7746e-4).abs() < 1e-8);
        assert!((pathloss_b2i(0.3, 100.0) - 2.3873e-4).abs() < 1e-8);
        assert!((pathloss_b2i(0.3, 50.0) / pathloss_b2i(0.3, 100.0) - 2.0).abs() < 1e-14);

        let kappa = 10f64.powf(0.7);
        let g = pathloss_i2i(0.3, kappa, 50.0, 50.0);
        assert!((g / 6.03e-6 - 1.0).abs() < 5e-3, "{g}");
        assert!((g / pathloss_i2i(0.3, kappa, 100.0, 100.0) - 4.0).abs() < 1e-12);
        assert!((pathloss_i2i(0.3, 4.0 * kappa, 50.0, 50.0) / g - 2.0).abs() < 1e-12);
    }

    #[test]
    fn channel_invariants() {
        let mut params = ScenarioParams::default();
        params.n_targets = 3;
        params.n_elem_x = 4;
        params.n_elem_z = 3;
        params.m_sens_x = 2;
        params.m_sens_z = 5;
        let s = generate_scenario(&params, 11).unwrap();
        let ch = build_channels(&s).unwrap();
        let all = ch.a_i2b.iter().chain(&ch.a_b2i_tx).chain(&ch.a_i2t).chain(&ch.a_t2i);
        for v in all {
            let dev = v.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-12);
            assert!((v.norm_squared() - v.len() as f64).abs() < 1e-9);
        }
        for h in &ch.h_b2i {
            let sv = h.clone().svd(false, false).singular_values;
            assert!(sv[1] < 1e-12 * sv[0]);
        }
        let (m, n) = (ch.m_sensors as f64, ch.n_elements as f64);
        for q in 0..ch.num_targets {
            for k in 0..ch.num_irs {
                for l in 0..ch.num_irs {
                    assert_eq!(ch.alpha_i2i(q, k, l), ch.alpha_i2i(q, l, k));
                    assert!(ch.alpha_i2i(q, k, l) > 0.0);
                    let fro = ch.h_i2i(q, k, l).norm();
                    let expect = ch.alpha_i2i(q, k, l) * (m * n).sqrt();
                    assert!((fro / expect - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
