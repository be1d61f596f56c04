//! Brute-force references for the test suite.
//!
//! Everything here is deliberately slow and recomputes its quantities from
//! first principles (explicit distances, dense matrix chains, exhaustive
//! grids) instead of calling the solver code it is used to check.

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

use crate::beamforming::BeamSolution;
use crate::channel::{CMatrix, CVector, ChannelSet};
use crate::error::{Error, Result};
use crate::geometry::{Scenario, SPEED_OF_LIGHT};
use crate::single_target::FractionalProblem;

/// Upper bound on the number of grid points any oracle will enumerate.
pub const MAX_GRID_POINTS: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum GridRegion {
    /// `{x >= 0 : weights^T x = total}` sampled on barycentric steps of 1/resolution.
    Simplex { weights: Vec<f64>, total: f64 },
    /// Axis-aligned box.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dims: usize,
    pub resolution: usize,
    pub region: GridRegion,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

impl GridSpec {
    pub fn num_points(&self) -> u128 {
        let r = self.resolution as u128;
        match &self.region {
            // Compositions of r into `dims` nonnegative parts.
            GridRegion::Simplex { .. } => binomial(r + self.dims as u128 - 1, self.dims as u128 - 1),
            GridRegion::Box { .. } => (r + 1).saturating_pow(self.dims as u32),
        }
    }

    pub fn check(&self) -> Result<()> {
        let n = self.num_points();
        if n > MAX_GRID_POINTS {
            return Err(Error::GridTooLarge(n));
        }
        Ok(())
    }

    /// Calls `visit` on every grid point.
    pub fn for_each(&self, mut visit: impl FnMut(&[f64])) -> Result<()> {
        self.check()?;
        let d = self.dims;
        let r = self.resolution;
        match &self.region {
            GridRegion::Simplex { weights, total } => {
                let mut counts = vec![0usize; d];
                let mut point = vec![0.0; d];
                fn rec(
                    i: usize,
                    left: usize,
                    counts: &mut [usize],
                    point: &mut [f64],
                    r: usize,
                    w: &[f64],
                    total: f64,
                    visit: &mut dyn FnMut(&[f64]),
                ) {
                    let d = counts.len();
                    if i == d - 1 {
                        counts[i] = left;
                        for j in 0..d {
                            point[j] = total * counts[j] as f64 / (r as f64 * w[j]);
                        }
                        visit(point);
                        return;
                    }
                    for c in 0..=left {
                        counts[i] = c;
                        rec(i + 1, left - c, counts, point, r, w, total, visit);
                    }
                }
                rec(0, r, &mut counts, &mut point, r, weights, *total, &mut visit);
            }
            GridRegion::Box { lower, upper } => {
                let mut idx = vec![0usize; d];
                let mut point = vec![0.0; d];
                loop {
                    for j in 0..d {
                        point[j] = lower[j] + (upper[j] - lower[j]) * idx[j] as f64 / r.max(1) as f64;
                    }
                    visit(&point);
                    let mut j = 0;
                    while j < d {
                        idx[j] += 1;
                        if idx[j] <= r {
                            break;
                        }
                        idx[j] = 0;
                        j += 1;
                    }
                    if j == d {
                        break;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exhaustive minimization of `(a + b)^T p / ((a^T p)(b^T p) - (c^T p)^2)`
/// over `{h^T p = P_max, p >= 0}` at barycentric step 1/resolution.
pub fn grid_power_search(problem: &FractionalProblem, resolution: usize) -> Result<(DVector<f64>, f64)> {
    let k = problem.a.len();
    if k > 4 {
        return Err(Error::GridTooLarge(u128::MAX));
    }
    let spec = GridSpec {
        dims: k,
        resolution,
        region: GridRegion::Simplex { weights: problem.h.iter().cloned().collect(), total: problem.p_max },
    };
    let mut best = (f64::INFINITY, vec![0.0; k]);
    spec.for_each(|p| {
        let (mut sa, mut sb, mut sc) = (0.0, 0.0, 0.0);
        for i in 0..k {
            sa += problem.a[i] * p[i];
            sb += problem.b[i] * p[i];
            sc += problem.c[i] * p[i];
        }
        let det = sa * sb - sc * sc;
        if det > 0.0 {
            let v = (sa + sb) / det;
            if v < best.0 {
                best = (v, p.to_vec());
            }
        }
    })?;
    Ok((DVector::from_vec(best.1), best.0))
}

fn distance(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

fn path_delay(irs_k: &[f64; 3], irs_l: &[f64; 3], target: &[f64; 3]) -> f64 {
    (distance(irs_k, target) + distance(irs_l, target)) / SPEED_OF_LIGHT
}

/// Central finite differences of the two-leg delays, scaled by -c. Returns
/// (a, b) flattened in (q, k, l) order.
pub fn fd_jacobian(scenario: &Scenario, step: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(step > 0.0 && step <= 1.0, "step must lie in (0, 1] m");
    let irs = &scenario.irs_positions;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for t in &scenario.target_positions {
        for ik in irs {
            for il in irs {
                let shifted = |dx: f64, dy: f64| path_delay(ik, il, &[t[0] + dx, t[1] + dy, t[2]]);
                let dtx = (shifted(step, 0.0) - shifted(-step, 0.0)) / (2.0 * step);
                let dty = (shifted(0.0, step) - shifted(0.0, -step)) / (2.0 * step);
                a.push(-SPEED_OF_LIGHT * dtx);
                b.push(-SPEED_OF_LIGHT * dty);
            }
        }
    }
    (a, b)
}

/// Full 2Q x 2Q position FIM J F(tau) J^T, with the QK^2 x QK^2 diagonal
/// delay FIM built from dense channel products. Rows 2q and 2q + 1 are the
/// x and y coordinates of target q.
pub fn dense_chain_rule_fim(scenario: &Scenario, channels: &ChannelSet, beams: &BeamSolution) -> DMatrix<f64> {
    let nq = scenario.target_positions.len();
    let nk = scenario.irs_positions.len();
    let paths = nq * nk * nk;
    let mut jac = DMatrix::<f64>::zeros(2 * nq, paths);
    let mut fim_tau = DMatrix::<f64>::zeros(paths, paths);
    let mut col = 0;
    for q in 0..nq {
        let t = scenario.target_positions[q];
        for k in 0..nk {
            for l in 0..nk {
                let (ik, il) = (scenario.irs_positions[k], scenario.irs_positions[l]);
                let (dk, dl) = (distance(&ik, &t), distance(&il, &t));
                jac[(2 * q, col)] = ((t[0] - ik[0]) / dk + (t[0] - il[0]) / dl) / SPEED_OF_LIGHT;
                jac[(2 * q + 1, col)] = ((t[1] - ik[1]) / dk + (t[1] - il[1]) / dl) / SPEED_OF_LIGHT;
                let energy = match &beams.theta[k] {
                    None => 0.0,
                    Some(theta) => {
                        let diag = CMatrix::from_diagonal(theta);
                        let chain = channels.h_i2i(q, k, l) * diag * &channels.h_b2i[k] * beams.w.column(k);
                        chain.norm_squared()
                    }
                };
                fim_tau[(col, col)] = scenario.eta / scenario.noise_power * energy;
                col += 1;
            }
        }
    }
    &jac * fim_tau * jac.transpose()
}

/// The 2 x 2 diagonal block of target q.
pub fn target_block(full: &DMatrix<f64>, q: usize) -> Matrix2<f64> {
    let (i, j) = (2 * q, 2 * q + 1);
    Matrix2::new(full[(i, i)], full[(i, j)], full[(j, i)], full[(j, j)])
}

/// Largest |w^H diag(theta) g| over `draws` uniformly random unit-modulus
/// phase vectors, where `g` is the per-element effective channel.
pub fn random_phase_best(effective: &CVector, draws: usize, rng: &mut impl Rng) -> f64 {
    let n = effective.len();
    let mut best: f64 = 0.0;
    for _ in 0..draws {
        let s: Complex64 = (0..n)
            .map(|i| effective[i] * Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI)))
            .sum();
        best = best.max(s.norm());
    }
    best
}

/// Best value of `objective` over theta = [1, exp(j phi)] on `steps` phases.
pub fn phase_grid_two(steps: usize, objective: impl Fn(&CVector) -> f64) -> (CVector, f64) {
    let mut best = (CVector::zeros(2), f64::INFINITY);
    for s in 0..steps {
        let phi = 2.0 * PI * s as f64 / steps as f64;
        let theta = CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::from_polar(1.0, phi)]);
        let v = objective(&theta);
        if v < best.1 {
            best = (theta, v);
        }
    }
    best
}

/// Minimum of tr(C R) over 2 x 2 unit-diagonal PSD R = [[1, r], [r*, 1]],
/// |r| <= 1, on a polar grid of the disc.
pub fn unit_diagonal_2x2_grid(c: &CMatrix, radial: usize, angular: usize) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..=radial {
        let m = i as f64 / radial as f64;
        for j in 0..angular {
            let r = Complex64::from_polar(m, 2.0 * PI * j as f64 / angular as f64);
            let v = c[(0, 0)].re + c[(1, 1)].re + 2.0 * (c[(1, 0)] * r).re;
            best = best.min(v);
        }
    }
    best
}

/// `min f^T x  s.t.  x^T H x + l^T x + r <= 0, x >= 0` for positive definite H,
/// by bisection on the multiplier mu of the quadratic constraint, solving each
/// `min f^T x + mu (x^T H x + l^T x)` over x >= 0 with projected gradient.
pub fn qcqp_projected_gradient(f: &DVector<f64>, h: &DMatrix<f64>, l: &DVector<f64>, r: f64) -> DVector<f64> {
    let n = f.len();
    let lmax = h.clone().symmetric_eigen().eigenvalues.max();
    let inner = |mu: f64| -> DVector<f64> {
        let step = 1.0 / (2.0 * mu * lmax);
        let mut x = DVector::zeros(n);
        for _ in 0..200_000 {
            let grad = f + (h * &x * 2.0 + l) * mu;
            let next = (&x - grad * step).map(|v| v.max(0.0));
            let moved = (&next - &x).norm();
            x = next;
            if moved < 1e-15 {
                break;
            }
        }
        x
    };
    let g = |x: &DVector<f64>| (x.transpose() * h * x)[(0, 0)] + l.dot(x) + r;
    // Larger mu pulls x toward the constraint's interior.
    let (mut lo, mut hi) = (1e-6, 1.0);
    while g(&inner(hi)) > 0.0 {
        hi *= 2.0;
        assert!(hi < 1e12, "constraint appears infeasible");
    }
    if g(&inner(lo)) <= 0.0 {
        return inner(lo);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if g(&inner(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi {
            break;
        }
    }
    inner(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_grid_counts() {
        let spec = GridSpec { dims: 3, resolution: 200, region: GridRegion::Simplex { weights: vec![1.0; 3], total: 1.0 } };
        assert_eq!(spec.num_points(), 20_301);
        let mut n = 0;
        spec.for_each(|p| {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            n += 1;
        })
        .unwrap();
        assert_eq!(n, 20_301);
        let big = GridSpec { dims: 8, resolution: 1000, region: GridRegion::Simplex { weights: vec![1.0; 8], total: 1.0 } };
        assert!(matches!(big.check(), Err(Error::GridTooLarge(_))));
    }

    #[test]
    fn single_point_grid() {
        let p = FractionalProblem::new(
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 0.25),
            3.0,
            1.0,
        );
        let (x, _) = grid_power_search(&p, 200).unwrap();
        assert!((x[0] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_grid_minimizer() {
        let p = FractionalProblem::new(
            DVector::from_column_slice(&[1.0, 0.1]),
            DVector::from_column_slice(&[0.1, 1.0]),
            DVector::zeros(2),
            DVector::from_element(2, 1.0),
            1.0,
            1.0,
        );
        let (x, _) = grid_power_search(&p, 200).unwrap();
        assert!((x[0] - x[1]).abs() < 1e-12);
    }

    #[test]
    fn central_difference_is_second_order() {
        let s = crate::experiment::table_one_scenario(vec![[10.0, 20.0, 30.0], [-30.0, 5.0, 30.0]], vec![[3.0, -7.0, 0.0]]);
        let exact = crate::geometry::delay_gradients(&s).unwrap();
        let err = |h: f64| {
            let (a, _) = fd_jacobian(&s, h);
            a.iter().zip(&exact.a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.2), err(0.1));
        assert!((e1 / e2 - 4.0).abs() < 0.1, "{e1} {e2}");
    }

    #[test]
    fn disc_grid_on_identity_cost() {
        // tr(C R) with C = [[1, 1], [1, 1]] is minimized at r = -1.
        let c = CMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        assert!(unit_diagonal_2x2_grid(&c, 50, 360).abs() < 1e-12);
    }
}
