//! Max-min CRB over several targets.
//!
//! The worst-target CRB under a power budget is found through its QoS dual:
//! for a level phi, minimize the transmit power subject to CRB_q <= 1/phi for
//! every target, and bisect phi until that power meets P_max. Each QoS
//! problem alternates between
//!
//! - a power step: SCA on the indefinite quadratic constraints, each round a
//!   convex QCQP;
//! - a reflect step: SDR over R_k = theta_k theta_k^H with the bilinear gain
//!   products written as differences of squares and linearized, followed by
//!   Gaussian randomization back to unit-modulus phases.
//!
//! Internally powers are measured in units of P_max and the path
//! coefficients are scaled so the largest is one; the QoS level is rescaled
//! accordingly. Gains are measured in units of N^2, their largest value.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::beamforming::{aligned_theta, target_centroid, theta_toward_point, zf_power_weights, BeamSolution};
use crate::channel::{CMatrix, CVector};
use crate::convex::{
    solve_qcqp, solve_sdp, AffineForm, QcqpProblem, QuadraticConstraint, SdpConstraint, SdpProblem, SolveStatus,
};
use crate::crb::{CrbReport, SolverTrace};
use crate::error::{Error, Result};
use crate::geometry::{check_separability, ReflectInit, SolverSettings};
use crate::model::Network;
use crate::single_target::{dinkelbach_solve, fractional_problem, FractionalProblem};

/// Stream of the per-scenario generator used for randomization.
const RANDOMIZATION_STREAM: u64 = 3;

/// Everything the power and reflect steps need, in normalized units.
#[derive(Debug, Clone)]
pub struct QosSubproblemData {
    /// Active IRS indices; vectors below are indexed by position in this list.
    pub active: Vec<usize>,
    /// Normalized path coefficients without the reflect gain, Q x K_active.
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Reflect vectors w_{q,k}, indexed `[k][q]`; the gain is |w^H theta|^2 / N^2.
    pub w: Vec<Vec<CVector>>,
    pub h: DVector<f64>,
    /// Powers in units of P_max.
    pub p: DVector<f64>,
    pub theta: Vec<CVector>,
    /// Normalized QoS level.
    pub phi: f64,
    /// phi_true = phi * phi_unit.
    pub phi_unit: f64,
    pub p_max: f64,
    pub n_elements: usize,
}

impl QosSubproblemData {
    pub fn new(network: &Network, active: &[usize], theta: Vec<CVector>, phi_true: f64) -> Result<Self> {
        let s = &network.scenario;
        let ch = &network.channels;
        let geo = &network.geometry;
        let (nq, nk, ka) = (network.num_targets(), network.num_irs(), active.len());
        let n2 = (ch.n_elements * ch.n_elements) as f64;
        let m = ch.m_sensors as f64;
        let mut a = DMatrix::<f64>::zeros(nq, ka);
        let mut b = DMatrix::<f64>::zeros(nq, ka);
        let mut c = DMatrix::<f64>::zeros(nq, ka);
        for q in 0..nq {
            for (i, &k) in active.iter().enumerate() {
                let ab = ch.alpha_b2i[k];
                for l in 0..nk {
                    let ai = ch.alpha_i2i(q, k, l);
                    let wgt = ai * ai * ab * ab * m * n2;
                    let (ga, gb) = (geo.a(q, k, l), geo.b(q, k, l));
                    a[(q, i)] += wgt * ga * ga;
                    b[(q, i)] += wgt * gb * gb;
                    c[(q, i)] += wgt * ga * gb;
                }
            }
        }
        let sigma = (&a + &b).max();
        if !(sigma > 0.0) {
            return Err(Error::DegenerateGeometry(0));
        }
        let w = active.iter().map(|&k| (0..nq).map(|q| ch.reflect_vector(q, k)).collect()).collect();
        let h = DVector::from_vec(zf_power_weights(ch, active)?);
        let phi_unit = sigma * s.p_max / s.c0();
        let p = h.map(|hk| 1.0 / (ka as f64 * hk));
        Ok(Self {
            active: active.to_vec(),
            a: a / sigma,
            b: b / sigma,
            c: c / sigma,
            w,
            h,
            p,
            theta,
            phi: phi_true / phi_unit,
            phi_unit,
            p_max: s.p_max,
            n_elements: ch.n_elements,
        })
    }

    pub fn num_targets(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_active(&self) -> usize {
        self.active.len()
    }

    pub fn phi_true(&self) -> f64 {
        self.phi * self.phi_unit
    }

    pub fn set_phi_true(&mut self, phi: f64) {
        self.phi = phi / self.phi_unit;
    }

    /// Transmit power in watts.
    pub fn power_watts(&self) -> f64 {
        self.h.dot(&self.p) * self.p_max
    }

    fn n2(&self) -> f64 {
        (self.n_elements * self.n_elements) as f64
    }

    /// Normalized gains x_{q,k} = |w_{q,k}^H theta_k|^2 / N^2.
    pub fn gains(&self, theta: &[CVector]) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_targets(), self.num_active(), |q, k| {
            self.w[k][q].dotc(&theta[k]).norm_sqr() / self.n2()
        })
    }

    /// Normalized gains tr(R_k V_{q,k}) / N^2 of relaxed reflect matrices.
    pub fn relaxed_gains(&self, r: &[CMatrix]) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_targets(), self.num_active(), |q, k| {
            let w = &self.w[k][q];
            (w.adjoint() * &r[k] * w)[(0, 0)].re / self.n2()
        })
    }

    /// Per-target (s, D) of `phi s^T p - p^T D p <= 0` at gains `x`.
    fn power_form(&self, q: usize, x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.num_active();
        let a = DVector::from_fn(k, |i, _| self.a[(q, i)] * x[(q, i)]);
        let b = DVector::from_fn(k, |i, _| self.b[(q, i)] * x[(q, i)]);
        let c = DVector::from_fn(k, |i, _| self.c[(q, i)] * x[(q, i)]);
        let d = (&a * b.transpose() + &b * a.transpose()) * 0.5 - &c * c.transpose();
        (a + b, d)
    }

    /// phi * CRB_q in normalized units, +inf when target q is unobservable.
    pub fn target_ratio(&self, q: usize, p: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
        let (s, d) = self.power_form(q, x);
        let den = (p.transpose() * d * p)[(0, 0)];
        if den > 0.0 {
            self.phi * s.dot(p) / den
        } else {
            f64::INFINITY
        }
    }

    /// max_q phi * CRB_q; at most one means every QoS constraint holds.
    pub fn worst_ratio(&self, p: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
        (0..self.num_targets()).map(|q| self.target_ratio(q, p, x)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct PowerStepOutcome {
    pub status: SolveStatus,
    /// Transmit power (units of P_max) after each SCA iteration.
    pub objective: Vec<f64>,
}

/// Scales `p` up or down onto the QoS boundary; `None` if some target has no
/// information in this direction.
fn scale_to_boundary(data: &QosSubproblemData, p: &DVector<f64>, x: &DMatrix<f64>) -> Option<DVector<f64>> {
    // phi s^T (t p) <= t^2 p^T D p is tight at t = max_q phi s^T p / p^T D p.
    let t = data.worst_ratio(p, x);
    (t.is_finite() && t > 0.0).then(|| p * t)
}

/// Iteration cap of one power-step SCA run. Each iteration is a small SOCP,
/// and the majorizer is loose when beta_q is large, so this is well above
/// the reflect step's cap.
const POWER_SCA_MAX_ITERS: usize = 200;

/// SCA on the QoS power problem at fixed phases, updating `data.p`.
///
/// At p_r the concave part of `-p^T D p` is bounded through
/// `p^T D p >= 2 beta p_r^T p - beta ||p_r||^2 - p^T (beta I - D) p`,
/// giving convex quadratic constraints that are tight at p_r. The problem is
/// nonconvex, so SCA runs from the current powers, the equal-power direction
/// and each target's single-target optimum, and keeps the cheapest result.
pub fn sca_power_step(data: &mut QosSubproblemData, settings: &SolverSettings) -> PowerStepOutcome {
    power_step(data, settings, true)
}

/// Power step; without `explore` only the current powers seed the SCA.
fn power_step(data: &mut QosSubproblemData, settings: &SolverSettings, explore: bool) -> PowerStepOutcome {
    let x = data.gains(&data.theta);
    let mut starts = vec![data.p.clone()];
    if explore {
        starts.push(data.h.map(|h| 1.0 / h));
    }
    if explore && data.num_active() > 1 {
        starts.extend((0..data.num_targets()).filter_map(|q| single_target_direction(data, q, &x, settings)));
    }
    let mut best: Option<(DVector<f64>, PowerStepOutcome)> = None;
    for start in &starts {
        let Some(pr) = scale_to_boundary(data, start, &x) else { continue };
        let (p, out) = sca_from(data, &x, pr, settings);
        if best.as_ref().map_or(true, |(bp, _)| data.h.dot(&p) < data.h.dot(bp)) {
            best = Some((p, out));
        }
    }
    match best {
        Some((p, out)) => {
            data.p = p;
            out
        }
        None => PowerStepOutcome { status: SolveStatus::Infeasible, objective: vec![] },
    }
}

/// Best power direction for target q alone at gains `x`, from the
/// single-target fractional solver.
fn single_target_direction(
    data: &QosSubproblemData,
    q: usize,
    x: &DMatrix<f64>,
    settings: &SolverSettings,
) -> Option<DVector<f64>> {
    let k = data.num_active();
    let row = |m: &DMatrix<f64>| DVector::from_fn(k, |i, _| m[(q, i)] * x[(q, i)]);
    let problem = FractionalProblem::new(row(&data.a), row(&data.b), row(&data.c), data.h.clone(), 1.0, 1.0);
    dinkelbach_solve(&problem, settings).ok().map(|r| r.p)
}

fn sca_from(
    data: &QosSubproblemData,
    x: &DMatrix<f64>,
    mut pr: DVector<f64>,
    settings: &SolverSettings,
) -> (DVector<f64>, PowerStepOutcome) {
    let k = data.num_active();
    let forms: Vec<_> = (0..data.num_targets()).map(|q| data.power_form(q, x)).collect();
    let betas: Vec<f64> =
        forms.iter().map(|(_, d)| d.clone().symmetric_eigen().eigenvalues.max().max(0.0)).collect();
    let mut objective = vec![data.h.dot(&pr)];
    let mut status = SolveStatus::Optimal;
    for _ in 0..POWER_SCA_MAX_ITERS {
        let mut prob = QcqpProblem::new(data.h.clone());
        prob.nonnegative = true;
        for ((s, d), &beta) in forms.iter().zip(&betas) {
            prob.constraints.push(QuadraticConstraint {
                hessian: DMatrix::identity(k, k) * beta - d,
                linear: s * data.phi - &pr * (2.0 * beta),
                constant: beta * pr.norm_squared(),
            });
        }
        let sol = solve_qcqp(&prob);
        if sol.status != SolveStatus::Optimal {
            status = sol.status;
            break;
        }
        // Clean solver-tolerance violations of the true constraints.
        let Some(next) = scale_to_boundary(data, &sol.x.map(|v| v.max(0.0)), x) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let (old, new) = (data.h.dot(&pr), data.h.dot(&next));
        if new > old {
            break;
        }
        pr = next;
        objective.push(new);
        if old - new <= settings.sca_eps * old {
            break;
        }
    }
    (pr, PowerStepOutcome { status, objective })
}

/// f(u, v) = (u + v)^2 / 4 and g(u, v) = (u - v)^2 / 4, so that u v = f - g.
pub fn bilinear_split(u: f64, v: f64) -> (f64, f64) {
    ((u + v).powi(2) / 4.0, (u - v).powi(2) / 4.0)
}

/// First-order expansions of f and g at (ur, vr), evaluated at (u, v); each
/// is a global lower bound of the convex original.
pub fn bilinear_lower_bounds(ur: f64, vr: f64, u: f64, v: f64) -> (f64, f64) {
    let (sr, dr) = (ur + vr, ur - vr);
    (sr * (u + v) / 2.0 - sr * sr / 4.0, dr * (u - v) / 2.0 - dr * dr / 4.0)
}

/// Convex restriction of target q's QoS constraint in the gains at fixed
/// power, tight at `xr`: returns (H, l, c0) with
/// `x^T H x + l^T x + c0 >= phi s^T x - (a^T x)(b^T x) + (c^T x)^2`.
fn gain_restriction(data: &QosSubproblemData, q: usize, xr: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let k = data.num_active();
    let at: Vec<f64> = (0..k).map(|i| data.a[(q, i)] * data.p[i]).collect();
    let bt: Vec<f64> = (0..k).map(|i| data.b[(q, i)] * data.p[i]).collect();
    let ct: Vec<f64> = (0..k).map(|i| data.c[(q, i)] * data.p[i]).collect();
    let mut hess = DMatrix::zeros(k, k);
    let mut lin = DVector::from_fn(k, |i, _| data.phi * (at[i] + bt[i]));
    let mut constant = 0.0;

    // weight * f(x_i, x_j) and weight * g(x_i, x_j), weight >= 0.
    let add_f = |hess: &mut DMatrix<f64>, i: usize, j: usize, w: f64| {
        for (r, s) in [(i, i), (j, j), (i, j), (j, i)] {
            hess[(r, s)] += w / 4.0;
        }
    };
    let add_g = |hess: &mut DMatrix<f64>, i: usize, j: usize, w: f64| {
        for (r, s, sign) in [(i, i, 1.0), (j, j, 1.0), (i, j, -1.0), (j, i, -1.0)] {
            hess[(r, s)] += sign * w / 4.0;
        }
    };
    // -weight * f_lb and -weight * g_lb, linear in x.
    let sub_f_lb = |lin: &mut DVector<f64>, constant: &mut f64, i: usize, j: usize, w: f64| {
        let sr = xr[i] + xr[j];
        lin[i] -= w * sr / 2.0;
        lin[j] -= w * sr / 2.0;
        *constant += w * sr * sr / 4.0;
    };
    let sub_g_lb = |lin: &mut DVector<f64>, constant: &mut f64, i: usize, j: usize, w: f64| {
        let dr = xr[i] - xr[j];
        lin[i] -= w * dr / 2.0;
        lin[j] += w * dr / 2.0;
        *constant += w * dr * dr / 4.0;
    };

    for i in 0..k {
        for j in 0..k {
            // -(a_i b_j) x_i x_j = a_i b_j (g - f) <= a_i b_j (g - f_lb).
            let wa = at[i] * bt[j];
            if wa != 0.0 {
                add_g(&mut hess, i, j, wa);
                sub_f_lb(&mut lin, &mut constant, i, j, wa);
            }
            // (c_i c_j) x_i x_j = C (f - g).
            let wc = ct[i] * ct[j];
            if wc > 0.0 {
                add_f(&mut hess, i, j, wc);
                sub_g_lb(&mut lin, &mut constant, i, j, wc);
            } else if wc < 0.0 {
                add_g(&mut hess, i, j, -wc);
                sub_f_lb(&mut lin, &mut constant, i, j, -wc);
            }
        }
    }
    (hess, lin, constant)
}

/// SCA iterations per reflect step. The alternation re-expands around the
/// new phases anyway, so each step only needs to make progress.
const REFLECT_SCA_MAX_ITERS: usize = 3;

#[derive(Debug, Clone)]
pub struct ReflectStepOutcome {
    pub status: SolveStatus,
    /// Relaxed reflect matrices, unit diagonal and PSD.
    pub r: Vec<CMatrix>,
    /// Residuals r_q of the last successful iteration.
    pub residuals: Vec<f64>,
    /// Sum of residuals after each SCA iteration.
    pub residual_sums: Vec<f64>,
}

/// SDR + SCA reflect design at fixed power: maximizes the total QoS margin
/// sum_q r_q over unit-diagonal PSD R_k, starting from theta theta^H. The
/// margins are tied together, r_q proportional to target q's current
/// p^T D_q p, so the step improves the worst target instead of trading it
/// away.
pub fn sdr_reflect_step(data: &QosSubproblemData, settings: &SolverSettings) -> ReflectStepOutcome {
    let (nq, k, n) = (data.num_targets(), data.num_active(), data.n_elements);
    let mut r: Vec<CMatrix> = data.theta.iter().map(|t| t * t.adjoint()).collect();
    let n2 = data.n2();
    // V_{q,k} / N^2 so that tr(R V) is the normalized gain.
    let v: Vec<Vec<CMatrix>> = (0..k)
        .map(|i| (0..nq).map(|q| &data.w[i][q] * data.w[i][q].adjoint() / Complex64::from(n2)).collect())
        .collect();
    let mut out = ReflectStepOutcome { status: SolveStatus::Optimal, r: r.clone(), residuals: vec![0.0; nq], residual_sums: vec![] };
    let mut last_sum: Option<f64> = None;
    // Residuals are held in proportion to each target's current p^T D_q p so
    // that the margin goes to the binding targets rather than the easy ones.
    let x0 = data.gains(&data.theta);
    let dens: Vec<f64> = (0..nq)
        .map(|q| {
            let (_, d) = data.power_form(q, &x0);
            (data.p.transpose() * d * &data.p)[(0, 0)]
        })
        .collect();
    let floor = dens.iter().cloned().fold(0.0, f64::max).max(1e-300) * 1e-9;
    let weights: Vec<f64> = dens.iter().map(|d| d.max(floor)).collect();

    for _ in 0..settings.sca_max_iters.min(REFLECT_SCA_MAX_ITERS) {
        let xr = data.relaxed_gains(&r);
        let mut prob = SdpProblem::new(vec![n; k], nq);
        prob.unit_diagonal = vec![true; k];
        prob.objective.scalars = (0..nq).map(|q| (q, -1.0)).collect();
        for q in 0..nq {
            prob.constraints.push(SdpConstraint::LessEqual(AffineForm { scalars: vec![(q, -1.0)], ..Default::default() }));
            if q > 0 {
                prob.constraints.push(SdpConstraint::Equal(AffineForm {
                    scalars: vec![(q, 1.0 / weights[q]), (0, -1.0 / weights[0])],
                    ..Default::default()
                }));
            }
            let row: Vec<f64> = (0..k).map(|i| xr[(q, i)]).collect();
            let (hess, lin, constant) = gain_restriction(data, q, &row);
            let terms = (0..k)
                .map(|i| AffineForm { matrices: vec![(i, v[i][q].clone())], ..Default::default() })
                .collect();
            let linear = AffineForm {
                matrices: (0..k).map(|i| (i, &v[i][q] * Complex64::from(lin[i]))).collect(),
                scalars: vec![(q, 1.0)],
                constant,
            };
            prob.constraints.push(SdpConstraint::Quadratic { terms, hessian: hess, linear });
        }
        let sol = solve_sdp(&prob);
        if sol.status != SolveStatus::Optimal {
            if last_sum.is_none() {
                out.status = sol.status;
            }
            break;
        }
        let sum: f64 = sol.scalars.iter().sum();
        // The previous iterate is feasible here, so a drop is solver noise;
        // keep the previous point.
        if matches!(last_sum, Some(prev) if sum < prev) {
            break;
        }
        out.residual_sums.push(sum);
        r = sol.matrices;
        out.r = r.clone();
        out.residuals = sol.scalars;
        let done = matches!(last_sum, Some(prev) if sum - prev <= settings.sca_eps * prev.abs().max(1e-12));
        last_sum = Some(sum);
        if done {
            break;
        }
    }
    out
}

/// Entrywise projection onto the unit circle; zero entries map to 1.
fn unit_modulus(v: &CVector) -> CVector {
    v.map(|z| if z.norm() > 1e-300 { z / z.norm() } else { Complex64::new(1.0, 0.0) })
}

/// Principal eigenvector projected to unit modulus, and whether R is rank one
/// (second eigenvalue below 1e-6 of the first).
fn principal_phases(r: &CMatrix) -> (CVector, bool, CMatrix) {
    let eig = r.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]];
    let second = order.get(1).map(|&i| eig.eigenvalues[i]).unwrap_or(0.0);
    let theta = unit_modulus(&eig.eigenvectors.column(order[0]).into_owned());
    let sqrt_vals = eig.eigenvalues.map(|v| Complex64::from(v.max(0.0).sqrt()));
    let factor = &eig.eigenvectors * CMatrix::from_diagonal(&sqrt_vals);
    (theta, second < 1e-6 * top, factor)
}

/// Gaussian randomization of relaxed reflect matrices.
///
/// Rank-one matrices give their principal phases directly. Otherwise each
/// trial draws xi_k ~ CN(0, R_k) for every IRS and projects entrywise to unit
/// modulus; the trial with the smallest true worst-case phi * CRB at the
/// current power wins. The principal phases and `data.theta` are candidates
/// too, so the result is never worse than the current phases.
pub fn gaussian_randomize(r: &[CMatrix], trials: usize, data: &QosSubproblemData, rng: &mut impl Rng) -> Vec<CVector> {
    let decomposed: Vec<_> = r.iter().map(principal_phases).collect();
    let principal: Vec<CVector> = decomposed.iter().map(|d| d.0.clone()).collect();
    let score = |theta: &[CVector]| data.worst_ratio(&data.p, &data.gains(theta));

    let mut best = (score(&data.theta), data.theta.clone());
    let s = score(&principal);
    if s < best.0 || !best.0.is_finite() {
        best = (s, principal.clone());
    }
    if decomposed.iter().all(|d| d.1) {
        // Every matrix is rank one: keep the deterministic answer unless the
        // current phases are strictly better.
        return best.1;
    }
    for _ in 0..trials {
        let cand: Vec<CVector> = decomposed
            .iter()
            .map(|(theta, rank_one, factor)| {
                if *rank_one {
                    return theta.clone();
                }
                let n = factor.nrows();
                let z = CVector::from_fn(n, |_, _| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                });
                unit_modulus(&(factor * z))
            })
            .collect();
        let s = score(&cand);
        if s < best.0 {
            best = (s, cand);
        }
    }
    best.1
}

/// Phases tried per element by [`refine_phases`] before bisecting the step.
const REFINE_GRID: usize = 32;
const REFINE_MAX_SWEEPS: usize = 20;

/// Element-wise descent on the true worst-case phi * CRB at the current
/// power: each element's phase is set to the best of a coarse grid, then
/// refined by halving the step. Sweeps stop when one no longer gains 1e-9
/// relative.
pub fn refine_phases(data: &QosSubproblemData, theta: Vec<CVector>) -> Vec<CVector> {
    let score = |t: &[CVector]| data.worst_ratio(&data.p, &data.gains(t));
    let mut theta = theta;
    let mut best = score(&theta);
    if !best.is_finite() {
        return theta;
    }
    for _ in 0..REFINE_MAX_SWEEPS {
        let start = best;
        for i in 0..theta.len() {
            for e in 0..theta[i].len() {
                let current = theta[i][e].arg();
                let try_phase = |psi: f64, theta: &mut Vec<CVector>, best: &mut f64| {
                    let old = theta[i][e];
                    theta[i][e] = Complex64::from_polar(1.0, psi);
                    let s = score(theta);
                    if s < *best {
                        *best = s;
                        true
                    } else {
                        theta[i][e] = old;
                        false
                    }
                };
                let mut psi = current;
                for g in 1..REFINE_GRID {
                    let cand = current + std::f64::consts::TAU * g as f64 / REFINE_GRID as f64;
                    if try_phase(cand, &mut theta, &mut best) {
                        psi = cand;
                    }
                }
                let mut step = std::f64::consts::TAU / REFINE_GRID as f64;
                for _ in 0..12 {
                    step *= 0.5;
                    if try_phase(psi + step, &mut theta, &mut best) {
                        psi += step;
                    } else if try_phase(psi - step, &mut theta, &mut best) {
                        psi -= step;
                    }
                }
            }
        }
        if start - best <= 1e-9 * start {
            break;
        }
    }
    theta
}

#[derive(Debug, Clone)]
pub struct AlternationOutcome {
    pub rounds: usize,
    pub status: SolveStatus,
    /// Transmit power (units of P_max) after each power step.
    pub power: Vec<f64>,
    pub residual_sums: Vec<Vec<f64>>,
    /// Worst phi * CRB of the relaxed gains over that of the randomized phases,
    /// from the last reflect step.
    pub relaxed_ratio: Option<(f64, f64)>,
}

fn reflect_round(data: &mut QosSubproblemData, settings: &SolverSettings, rng: &mut impl Rng, out: &mut AlternationOutcome) {
    let reflect = sdr_reflect_step(data, settings);
    out.residual_sums.push(reflect.residual_sums.clone());
    if reflect.status != SolveStatus::Optimal {
        log::debug!("reflect step ended with {:?}", reflect.status);
        return;
    }
    let relaxed = data.worst_ratio(&data.p, &data.relaxed_gains(&reflect.r));
    let theta = gaussian_randomize(&reflect.r, settings.randomization_trials, data, rng);
    data.theta = refine_phases(data, theta);
    let achieved = data.worst_ratio(&data.p, &data.gains(&data.theta));
    out.relaxed_ratio = Some((relaxed, achieved));
}

/// How an alternation starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// Phases are an untuned initial guess. The phases are first designed
    /// at the equal-power allocation: a power step on poor phases tends to
    /// starve IRSs whose phases have not been designed yet, after which the
    /// reflect step has nothing to gain from them.
    Cold,
    /// Phases come from an earlier design; powers are not yet tuned.
    Phases,
    /// (p, theta) is the result of an earlier alternation at a proportional
    /// QoS level; the loop may stop after a single power step.
    Warm,
}

/// Power/reflect alternation at the current QoS level, until the transmit
/// power changes by less than `alternation_eps` relative.
pub fn alternate(
    data: &mut QosSubproblemData,
    settings: &SolverSettings,
    rng: &mut impl Rng,
    start: Start,
) -> AlternationOutcome {
    let mut out = AlternationOutcome { rounds: 0, status: SolveStatus::Optimal, power: vec![], residual_sums: vec![], relaxed_ratio: None };
    let x0 = data.gains(&data.theta);
    let mut prev = f64::INFINITY;
    match start {
        Start::Warm => {
            if let Some(p) = scale_to_boundary(data, &data.p, &x0) {
                prev = data.h.dot(&p);
            }
        }
        Start::Cold => {
            if let Some(p) = scale_to_boundary(data, &data.h.map(|h| 1.0 / h), &x0) {
                data.p = p;
                reflect_round(data, settings, rng, &mut out);
            }
        }
        Start::Phases => {}
    }
    for round in 0..settings.max_alternations {
        out.rounds = round + 1;
        let step = power_step(data, settings, start != Start::Warm && round == 0);
        if step.status == SolveStatus::Infeasible && step.objective.is_empty() {
            out.status = SolveStatus::Infeasible;
            return out;
        }
        let power = data.h.dot(&data.p);
        out.power.push(power);
        if (prev - power).abs() <= settings.alternation_eps * power {
            break;
        }
        prev = power;
        reflect_round(data, settings, rng, &mut out);
    }
    out
}

/// Initial reflect phases of the active IRSs.
pub fn initial_theta(network: &Network, active: &[usize], init: ReflectInit) -> Vec<CVector> {
    let n = network.channels.n_elements;
    match init {
        ReflectInit::AllOnes => vec![CVector::from_element(n, Complex64::new(1.0, 0.0)); active.len()],
        ReflectInit::Centroid => {
            let c = target_centroid(&network.scenario);
            active.iter().map(|&k| theta_toward_point(&network.scenario, &network.channels, k, &c)).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiOutcome {
    pub beams: BeamSolution,
    pub report: CrbReport,
}

fn assemble(network: &Network, data: &QosSubproblemData, scale: f64) -> Result<BeamSolution> {
    let nk = network.num_irs();
    let mut power = vec![0.0; nk];
    let mut theta = vec![None; nk];
    for (i, &k) in data.active.iter().enumerate() {
        power[k] = data.p[i] * data.p_max * scale;
        theta[k] = Some(data.theta[i].clone());
    }
    BeamSolution::assemble(&network.channels, &data.active, power, theta)
}

/// Upper end of the QoS bracket: no target can beat its own single-target
/// optimum, so phi above 1 / max_q CRB_q^single is infeasible at P_max.
fn phi_upper(network: &Network, active: &[usize]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for q in 0..network.num_targets() {
        let prob = fractional_problem(network, q, active)?;
        let res = dinkelbach_solve(&prob, &network.scenario.solver)?;
        worst = worst.max(res.crb);
    }
    if !(worst.is_finite() && worst > 0.0) {
        return Err(Error::Bracket("a target is unobservable even with all power".into()));
    }
    Ok(1.05 / worst)
}

/// Max-min CRB over `active` by geometric bisection on the QoS level,
/// starting from `theta` (one vector per active IRS) when given.
pub fn bisection_solve_active(network: &Network, active: &[usize], theta: Option<Vec<CVector>>) -> Result<MultiOutcome> {
    let settings = &network.scenario.solver;
    if network.num_targets() > 1 {
        let (ok, violations) = check_separability(&network.scenario);
        if !ok {
            return Err(Error::NotSeparable(violations.len()));
        }
    }
    if active.is_empty() {
        return Err(Error::AllDeactivated);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(network.scenario.rng_seed);
    rng.set_stream(RANDOMIZATION_STREAM);

    // Lower end: equal power with the initial phases meets phi_min at P_max.
    let first_start = if theta.is_some() { Start::Phases } else { Start::Cold };
    let theta0 = theta.unwrap_or_else(|| initial_theta(network, active, settings.reflect_init));
    let mut data = QosSubproblemData::new(network, active, theta0, 1.0)?;
    let x0 = data.gains(&data.theta);
    data.phi = 1.0;
    let mut ratio0 = data.worst_ratio(&data.p, &x0);
    if !ratio0.is_finite() {
        data.theta = initial_theta(network, active, ReflectInit::Centroid);
        ratio0 = data.worst_ratio(&data.p, &data.gains(&data.theta));
    }
    if !ratio0.is_finite() {
        return Err(Error::Bracket("no target information at the initial point".into()));
    }
    let mut phi_min = data.phi_unit / ratio0;
    let mut phi_max = phi_upper(network, active)?;
    if phi_max <= phi_min {
        phi_max = phi_min * 1.05;
    }

    let mut trace = SolverTrace::default();
    let mut best: Option<(f64, QosSubproblemData)> = None;
    let mut last_phi = phi_min;
    let mut mismatch = f64::INFINITY;
    data.set_phi_true(phi_min);
    for _ in 0..settings.max_bisections {
        let phi = (phi_min * phi_max).sqrt();
        // Powers scale linearly with phi at fixed phases.
        data.p *= phi / last_phi;
        data.set_phi_true(phi);
        last_phi = phi;
        let start = if trace.outer_iterations > 0 { Start::Warm } else { first_start };
        let alt = alternate(&mut data, settings, &mut rng, start);
        trace.outer_iterations += 1;
        trace.inner_iterations += alt.rounds;
        trace.residual_sums.extend(alt.residual_sums);
        if let Some((relaxed, achieved)) = alt.relaxed_ratio {
            trace.randomization_loss = Some(achieved / relaxed);
        }
        if alt.status == SolveStatus::Infeasible {
            phi_max = phi;
            continue;
        }
        let power = data.h.dot(&data.p);
        trace.objective.push(power * data.p_max);
        mismatch = (power - 1.0).abs();
        // Candidate after scaling to exactly P_max: worst CRB = power / phi.
        let worst = power / phi;
        if best.as_ref().map_or(true, |(w, _)| worst < *w) {
            best = Some((worst, data.clone()));
        }
        if power <= 1.0 {
            phi_min = phi;
        } else {
            phi_max = phi;
        }
        if mismatch <= settings.bisection_eps {
            break;
        }
    }
    trace.exit_power_mismatch = Some(mismatch);
    if mismatch > settings.bisection_eps {
        trace.notes.push(format!("bisection stopped with power mismatch {mismatch:.3e}"));
    }
    let (best_worst, best) = best.ok_or_else(|| Error::Bracket("no QoS level produced a solution".into()))?;
    let scale = 1.0 / best.h.dot(&best.p);
    let beams = assemble(network, &best, scale)?;
    trace.stages = 1;
    let mut report = CrbReport::evaluate(network, beams.clone(), trace)?;
    // The recomputed CRB must honour the QoS level the solver certified.
    let promised = best_worst / best.phi_unit;
    if report.worst_crb > promised * (1.0 + 1e-6) {
        let msg = format!("recomputed worst CRB {:.6e} exceeds the certified {promised:.6e}", report.worst_crb);
        log::warn!("{msg}");
        report.trace.notes.push(msg);
    }
    Ok(MultiOutcome { beams, report })
}

/// Bisection solve with every IRS active.
pub fn bisection_solve(network: &Network) -> Result<(BeamSolution, CrbReport)> {
    let all: Vec<usize> = (0..network.num_irs()).collect();
    let out = bisection_solve_active(network, &all, None)?;
    Ok((out.beams, out.report))
}

/// Stage reports: all IRSs, then without IRSs whose power fell below
/// `multi_zero_power_rel * P_max`, until every active IRS carries power.
pub fn multi_stages(network: &Network) -> Result<Vec<CrbReport>> {
    let threshold = network.scenario.solver.multi_zero_power_rel * network.scenario.p_max;
    let mut active: Vec<usize> = (0..network.num_irs()).collect();
    let mut stages = Vec::new();
    let mut theta = None;
    loop {
        let out = bisection_solve_active(network, &active, theta)?;
        let keep: Vec<usize> = active.iter().copied().filter(|&k| out.beams.power[k] >= threshold).collect();
        // Later stages start from the phases of the previous one.
        theta = Some(keep.iter().map(|&k| out.beams.theta[k].clone().expect("active IRS has phases")).collect());
        stages.push(out.report);
        if keep.is_empty() {
            return Err(Error::AllDeactivated);
        }
        if keep.len() == active.len() {
            return Ok(stages);
        }
        active = keep;
    }
}

/// Two-stage multi-target solve; returns the best stage.
pub fn two_stage_multi(network: &Network) -> Result<(BeamSolution, CrbReport)> {
    let stages = multi_stages(network)?;
    let n = stages.len();
    let mut best = stages.into_iter().min_by(|x, y| x.worst_crb.total_cmp(&y.worst_crb)).expect("one stage");
    best.trace.stages = n;
    Ok((best.beams.clone(), best))
}

/// Minimum-power allocation at fixed phases scaled to the full budget. Used
/// by the random-phase benchmark.
pub fn fixed_theta_power(network: &Network, active: &[usize], theta: Vec<CVector>) -> Result<(BeamSolution, CrbReport)> {
    let mut data = QosSubproblemData::new(network, active, theta, 1.0)?;
    data.phi = 1.0;
    let step = sca_power_step(&mut data, &network.scenario.solver);
    if step.objective.is_empty() {
        return Err(Error::SingularFim(0));
    }
    let scale = 1.0 / data.h.dot(&data.p);
    let beams = assemble(network, &data, scale)?;
    let trace = SolverTrace { objective: step.objective, stages: 1, ..Default::default() };
    let report = CrbReport::evaluate(network, beams.clone(), trace)?;
    Ok((beams, report))
}

/// Phases aligned to each IRS's own best target, for diagnostics.
pub fn per_target_theta(network: &Network, active: &[usize], q: usize) -> Vec<CVector> {
    active.iter().map(|&k| aligned_theta(&network.channels, k, q)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_of_squares() {
        let (f, g) = bilinear_split(2.0, 3.0);
        assert_eq!((f, g), (6.25, 0.25));
        assert_eq!(f - g, 6.0);
    }

    #[test]
    fn expansions_are_tight_and_below() {
        let (ur, vr) = (0.7, 0.2);
        let (f, g) = bilinear_split(ur, vr);
        let (fl, gl) = bilinear_lower_bounds(ur, vr, ur, vr);
        assert!((f - fl).abs() < 1e-15 && (g - gl).abs() < 1e-15);
        for (u, v) in [(0.0, 1.0), (1.0, 0.3), (0.4, 0.4), (2.0, -1.0)] {
            let (f, g) = bilinear_split(u, v);
            let (fl, gl) = bilinear_lower_bounds(ur, vr, u, v);
            assert!(fl <= f + 1e-15 && gl <= g + 1e-15);
        }
    }

    #[test]
    fn rank_one_matrix_gives_its_phases_back() {
        let theta = CVector::from_fn(6, |i, _| Complex64::from_polar(1.0, 0.7 * i as f64 * i as f64));
        let r = &theta * theta.adjoint();
        let (phases, rank_one, _) = principal_phases(&r);
        assert!(rank_one);
        assert!((phases.dotc(&theta).norm() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn projection_is_unit_modulus() {
        let v = CVector::from_vec(vec![Complex64::new(3.0, -4.0), Complex64::new(0.0, 0.0), Complex64::new(-1e-3, 2e-3)]);
        assert!(unit_modulus(&v).iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn geometric_mean_probe() {
        let (lo, hi): (f64, f64) = (1.0, 4.0);
        assert_eq!((lo * hi).sqrt(), 2.0);
    }
}
