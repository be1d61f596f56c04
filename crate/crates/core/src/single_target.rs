//! Single-target CRB minimization.
//!
//! With closed-form reflect phases and zero-forcing beams the CRB becomes a
//! ratio of a linear and an indefinite quadratic function of the beam powers
//! p_k = e_k^2:
//!
//! ```text
//! CRB(p) = c0 (a + b)^T p / (p^T D p),   D = (a b^T + b a^T) / 2 - c c^T,
//! subject to h^T p = P_max, p >= 0.
//! ```
//!
//! A Dinkelbach outer loop turns the ratio into a sequence of parametric
//! problems `max p^T D p - alpha (a + b)^T p`, each solved by ADMM with a
//! closed-form p-update (linear solve) and z-update (KKT on the weighted
//! simplex). IRSs that end up with zero power are then switched off and the
//! problem is re-solved on the remaining ones.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub use crate::beamforming::{aligned_theta, optimal_theta, zf_power_weights, zf_transmit};
use crate::beamforming::BeamSolution;
use crate::crb::{CrbReport, SolverTrace};
use crate::error::{Error, Result};
use crate::geometry::SolverSettings;
use crate::model::Network;

/// Power-allocation ratio program over the active IRSs.
#[derive(Debug, Clone)]
pub struct FractionalProblem {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    /// ZF power weights: tr(W W^H) = h^T p.
    pub h: DVector<f64>,
    pub p_max: f64,
    /// CRB = c0 * objective.
    pub c0: f64,
    /// Largest eigenvalue of D.
    pub beta: f64,
    /// ADMM penalty, strictly above 2 beta.
    pub rho: f64,
}

impl FractionalProblem {
    pub fn new(a: DVector<f64>, b: DVector<f64>, c: DVector<f64>, h: DVector<f64>, p_max: f64, c0: f64) -> Self {
        let d = denominator_matrix(&a, &b, &c);
        let beta = d.symmetric_eigen().eigenvalues.max().max(0.0);
        let rho = 2.5 * beta + 1e-9 * (1.0 + beta);
        Self { a, b, c, h, p_max, c0, beta, rho }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn d_matrix(&self) -> DMatrix<f64> {
        denominator_matrix(&self.a, &self.b, &self.c)
    }

    /// (a + b)^T p.
    pub fn numerator(&self, p: &DVector<f64>) -> f64 {
        (&self.a + &self.b).dot(p)
    }

    /// (a^T p)(b^T p) - (c^T p)^2 = p^T D p.
    pub fn denominator(&self, p: &DVector<f64>) -> f64 {
        let cp = self.c.dot(p);
        self.a.dot(p) * self.b.dot(p) - cp * cp
    }

    /// The ratio, +inf where the denominator is not positive.
    pub fn objective(&self, p: &DVector<f64>) -> f64 {
        let den = self.denominator(p);
        if den > 0.0 {
            self.numerator(p) / den
        } else {
            f64::INFINITY
        }
    }

    pub fn crb(&self, p: &DVector<f64>) -> f64 {
        self.c0 * self.objective(p)
    }

    /// Equal-power point p_k = P_max / (K h_k), which satisfies h^T p = P_max.
    pub fn equal_power(&self) -> DVector<f64> {
        let k = self.len() as f64;
        self.h.map(|h| self.p_max / (k * h))
    }

    /// Same problem with P_max = 1 and max(a + b) = 1. The minimizer maps
    /// back as p = P_max * p_hat, and objective = objective_hat / (s P_max).
    fn normalized(&self) -> (Self, f64) {
        let s = (&self.a + &self.b).max();
        let s = if s > 0.0 { s } else { 1.0 };
        let prob = Self::new(&self.a / s, &self.b / s, &self.c / s, self.h.clone(), 1.0, 1.0);
        (prob, s)
    }
}

fn denominator_matrix(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    (a * b.transpose() + b * a.transpose()) * 0.5 - c * c.transpose()
}

/// ADMM iterate.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub p: DVector<f64>,
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub state: AdmmState,
    pub iterations: usize,
    pub converged: bool,
    /// (||dp||^2, ||dz||^2, ||p - z||^2) per iteration.
    pub residuals: Vec<[f64; 3]>,
}

/// z-update: minimizes `-beta ||z||^2 - lambda^T z + rho/2 ||p - z||^2`
/// over `{h^T z = P_max, z >= 0}`.
///
/// Stationarity gives z_i = (rho p_i + lambda_i - mu h_i) / (rho - 2 beta) on
/// the support S, with mu fixed by the equality. Entries that come out
/// negative are clamped to zero and mu is recomputed on the smaller support;
/// mu only grows, so clamped entries stay clamped.
pub fn z_update(problem: &FractionalProblem, p: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
    let kappa = problem.rho - 2.0 * problem.beta;
    assert!(kappa > 0.0, "ADMM penalty must exceed twice the curvature");
    let v: DVector<f64> = p * problem.rho + lambda;
    let h = &problem.h;
    let mut support: Vec<bool> = vec![true; v.len()];
    loop {
        let (mut num, mut den) = (-kappa * problem.p_max, 0.0);
        for i in 0..v.len() {
            if support[i] {
                num += v[i] * h[i];
                den += h[i] * h[i];
            }
        }
        let mu = num / den;
        let z = DVector::from_fn(v.len(), |i, _| if support[i] { (v[i] - mu * h[i]) / kappa } else { 0.0 });
        let mut changed = false;
        for i in 0..v.len() {
            if support[i] && z[i] < 0.0 {
                support[i] = false;
                changed = true;
            }
        }
        if !changed {
            return z;
        }
        if !support.iter().any(|&s| s) {
            // Cannot happen for positive h and P_max; keep the largest entry.
            let best = (0..v.len()).max_by(|&i, &j| (v[i] / h[i]).total_cmp(&(v[j] / h[j]))).unwrap();
            let mut z = DVector::zeros(v.len());
            z[best] = problem.p_max / h[best];
            return z;
        }
    }
}

/// Factor of 2 (beta I - D) + rho I, shared by every p-update.
fn p_system(problem: &FractionalProblem) -> Cholesky<f64, Dyn> {
    let k = problem.len();
    let m = (DMatrix::identity(k, k) * problem.beta - problem.d_matrix()) * 2.0
        + DMatrix::identity(k, k) * problem.rho;
    Cholesky::new(m).expect("2(beta I - D) + rho I is positive definite")
}

/// ADMM for `min alpha (a + b)^T p - p^T D p` over the weighted simplex, split
/// as a convex part `alpha (a + b)^T p + p^T (beta I - D) p` in p and
/// `-beta ||z||^2` plus the constraints in z.
pub fn admm_inner(
    problem: &FractionalProblem,
    alpha: f64,
    init: AdmmState,
    settings: &SolverSettings,
) -> AdmmOutcome {
    let chol = p_system(problem);
    admm_with_factor(problem, &chol, alpha, init, settings)
}

fn admm_with_factor(
    problem: &FractionalProblem,
    chol: &Cholesky<f64, Dyn>,
    alpha: f64,
    init: AdmmState,
    settings: &SolverSettings,
) -> AdmmOutcome {
    let ab = &problem.a + &problem.b;
    let AdmmState { mut p, mut z, mut lambda } = init;
    let mut residuals = Vec::new();
    for it in 1..=settings.admm_max_inner {
        let rhs = &z * problem.rho - &lambda - &ab * alpha;
        let p_new = chol.solve(&rhs);
        let z_new = z_update(problem, &p_new, &lambda);
        lambda += (&p_new - &z_new) * problem.rho;
        let r = [(&p_new - &p).norm_squared(), (&z_new - &z).norm_squared(), (&p_new - &z_new).norm_squared()];
        p = p_new;
        z = z_new;
        residuals.push(r);
        if r.iter().all(|&v| v <= settings.admm_eps) {
            return AdmmOutcome { state: AdmmState { p, z, lambda }, iterations: it, converged: true, residuals };
        }
    }
    let iterations = residuals.len();
    AdmmOutcome { state: AdmmState { p, z, lambda }, iterations, converged: false, residuals }
}

#[derive(Debug, Clone)]
pub struct DinkelbachResult {
    /// Optimal powers (W) in the problem's index order.
    pub p: DVector<f64>,
    /// Ratio value at `p`.
    pub objective: f64,
    pub crb: f64,
    pub converged: bool,
    pub trace: SolverTrace,
}

/// Dinkelbach outer loop: alpha <- f_d(p) / f_n(p) after each ADMM solve,
/// until alpha changes by less than `dinkelbach_eps` relative.
pub fn dinkelbach_solve(problem: &FractionalProblem, settings: &SolverSettings) -> Result<DinkelbachResult> {
    if problem.is_empty() {
        return Err(Error::AllDeactivated);
    }
    if problem.len() == 1 {
        // The equality constraint leaves a single feasible point.
        let p = DVector::from_element(1, problem.p_max / problem.h[0]);
        let objective = problem.objective(&p);
        let trace = SolverTrace { objective: vec![problem.c0 * objective], ..Default::default() };
        return Ok(DinkelbachResult { crb: problem.c0 * objective, objective, p, converged: true, trace });
    }
    let (norm, scale) = problem.normalized();
    let chol = p_system(&norm);
    let k = norm.len();
    let center = norm.equal_power();

    let mut trace = SolverTrace::default();
    let mut state = AdmmState { p: center.clone(), z: center.clone(), lambda: DVector::zeros(k) };
    let mut restarts = 0;
    let mut alpha = match ratio_parameter(&norm, &center) {
        Some(a) => a,
        None => return Err(Error::DegenerateGeometry(0)),
    };
    let mut best = (norm.objective(&center), center.clone());
    trace.objective.push(best.0);
    let mut converged = false;

    for _ in 0..settings.dinkelbach_max_outer {
        trace.outer_iterations += 1;
        let out = admm_with_factor(&norm, &chol, alpha, state, settings);
        trace.inner_iterations += out.iterations;
        if !out.converged {
            trace.notes.push(format!("ADMM stopped after {} iterations without converging", out.iterations));
        }
        state = out.state;
        let z = state.z.clone();
        let Some(next) = ratio_parameter(&norm, &z) else {
            restarts += 1;
            if restarts > 3 {
                return Err(Error::DegenerateGeometry(0));
            }
            let p = &z * 0.99 + &center * 0.01;
            trace.notes.push(format!("nonpositive denominator, restart {restarts}"));
            state = AdmmState { p: p.clone(), z: p, lambda: DVector::zeros(k) };
            continue;
        };
        let obj = norm.objective(&z);
        trace.objective.push(obj);
        if obj < best.0 {
            best = (obj, z);
        }
        if next <= alpha * (1.0 + settings.dinkelbach_eps) {
            // No further ascent in the ratio parameter.
            converged = (next - alpha).abs() <= settings.dinkelbach_eps * alpha;
            if next < alpha {
                trace.notes.push("ratio parameter decreased; keeping the best iterate".into());
                converged = true;
            }
            break;
        }
        alpha = next;
    }

    let p = best.1 * problem.p_max;
    let objective = best.0 / (scale * problem.p_max);
    for v in trace.objective.iter_mut() {
        *v *= problem.c0 / (scale * problem.p_max);
    }
    Ok(DinkelbachResult { crb: problem.c0 * objective, objective, p, converged, trace })
}

/// f_d(p) / f_n(p), or `None` when the denominator is not positive.
fn ratio_parameter(problem: &FractionalProblem, p: &DVector<f64>) -> Option<f64> {
    let den = problem.denominator(p);
    (den > 0.0).then(|| den / problem.numerator(p))
}

/// Ratio program of target `q` over `active` with reflect gains
/// `gains[k] = |a_I2T^H diag(theta_k) a_I2B|^2` (N^2 for aligned phases).
pub fn fractional_problem_with_gains(
    network: &Network,
    q: usize,
    active: &[usize],
    gains: &[f64],
) -> Result<FractionalProblem> {
    let s = &network.scenario;
    let ch = &network.channels;
    let geo = &network.geometry;
    let m = ch.m_sensors as f64;
    let nk = network.num_irs();
    let mut a = DVector::zeros(active.len());
    let mut b = DVector::zeros(active.len());
    let mut c = DVector::zeros(active.len());
    for (i, &k) in active.iter().enumerate() {
        let ab = ch.alpha_b2i[k];
        // Every IRS keeps listening, so the sensor index spans all K.
        for l in 0..nk {
            let ai = ch.alpha_i2i(q, k, l);
            let w = ai * ai * ab * ab * m * gains[k];
            let (ga, gb) = (geo.a(q, k, l), geo.b(q, k, l));
            a[i] += w * ga * ga;
            b[i] += w * gb * gb;
            c[i] += w * ga * gb;
        }
    }
    let h = DVector::from_vec(zf_power_weights(ch, active)?);
    Ok(FractionalProblem::new(a, b, c, h, s.p_max, s.c0()))
}

/// Ratio program of target `q` with reflect phases aligned toward it.
pub fn fractional_problem(network: &Network, q: usize, active: &[usize]) -> Result<FractionalProblem> {
    let n = network.channels.n_elements as f64;
    let gains = vec![n * n; network.num_irs()];
    fractional_problem_with_gains(network, q, active, &gains)
}

/// Solves the power allocation over `active` with phases aligned to target 0.
pub fn solve_stage(network: &Network, active: &[usize]) -> Result<CrbReport> {
    let problem = fractional_problem(network, 0, active)?;
    let result = dinkelbach_solve(&problem, &network.scenario.solver)?;
    let nk = network.num_irs();
    let mut power = vec![0.0; nk];
    let mut theta = vec![None; nk];
    for (i, &k) in active.iter().enumerate() {
        power[k] = result.p[i].max(0.0);
        theta[k] = Some(aligned_theta(&network.channels, k, 0));
    }
    let beams = BeamSolution::assemble(&network.channels, active, power, theta)?;
    let mut trace = result.trace;
    trace.stages = 1;
    if !result.converged {
        trace.notes.push("Dinkelbach loop hit its iteration limit".into());
    }
    CrbReport::evaluate(network, beams, trace)
}

/// Stage reports in order: all IRSs first, then each reduced set, until every
/// active IRS carries power.
pub fn solve_stages(network: &Network) -> Result<Vec<CrbReport>> {
    if network.num_targets() != 1 {
        return Err(Error::InvalidScenario(format!(
            "the single-target solver needs exactly one target, got {}",
            network.num_targets()
        )));
    }
    let threshold = network.scenario.solver.zero_power_rel * network.scenario.p_max;
    let mut active: Vec<usize> = (0..network.num_irs()).collect();
    let mut stages = Vec::new();
    loop {
        let report = solve_stage(network, &active)?;
        let keep: Vec<usize> = active.iter().copied().filter(|&k| report.beams.power[k] >= threshold).collect();
        stages.push(report);
        if keep.is_empty() {
            return Err(Error::AllDeactivated);
        }
        if keep.len() == active.len() {
            return Ok(stages);
        }
        active = keep;
    }
}

fn best_stage(stages: Vec<CrbReport>) -> CrbReport {
    let n = stages.len();
    let mut best = stages
        .into_iter()
        .min_by(|x, y| x.worst_crb.total_cmp(&y.worst_crb))
        .expect("at least one stage");
    best.trace.stages = n;
    best
}

/// Two-stage solve: all IRSs, then repeatedly without the zero-power ones.
/// Returns the best stage.
pub fn two_stage_solve(network: &Network) -> Result<(BeamSolution, CrbReport)> {
    let report = best_stage(solve_stages(network)?);
    Ok((report.beams.clone(), report))
}

/// One stage with every IRS active.
pub fn one_stage_solve(network: &Network) -> Result<(BeamSolution, CrbReport)> {
    let all: Vec<usize> = (0..network.num_irs()).collect();
    let report = solve_stage(network, &all)?;
    Ok((report.beams.clone(), report))
}
