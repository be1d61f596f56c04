//! Benchmark schemes the proposed design is compared against.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beamforming::{aligned_theta, target_centroid, theta_toward_point, zf_power_weights, BeamSolution};
use crate::channel::CVector;
use crate::crb::{CrbReport, SolverTrace};
use crate::error::Result;
use crate::model::Network;
use crate::multi_target::{bisection_solve, fixed_theta_power};
use crate::single_target::{dinkelbach_solve, fractional_problem_with_gains, one_stage_solve};

/// Stream of the per-scenario generator used for random phases.
const RANDOM_PHASE_STREAM: u64 = 4;

/// Phases of the equal-power benchmark: aligned to the target when there is
/// one, otherwise steered toward the target centroid.
pub fn benchmark_theta(network: &Network, k: usize) -> CVector {
    if network.num_targets() == 1 {
        aligned_theta(&network.channels, k, 0)
    } else {
        let c = target_centroid(&network.scenario);
        theta_toward_point(&network.scenario, &network.channels, k, &c)
    }
}

/// Equal beam energy e_k^2 = P_max / (K h_k) on every IRS.
pub fn baseline_equal_power(network: &Network) -> Result<CrbReport> {
    let nk = network.num_irs();
    let active: Vec<usize> = (0..nk).collect();
    let h = zf_power_weights(&network.channels, &active)?;
    let power = h.iter().map(|hk| network.scenario.p_max / (nk as f64 * hk)).collect();
    let theta = (0..nk).map(|k| Some(benchmark_theta(network, k))).collect();
    let beams = BeamSolution::assemble(&network.channels, &active, power, theta)?;
    CrbReport::evaluate(network, beams, SolverTrace { stages: 1, ..Default::default() })
}

/// I.i.d. uniform reflect phases for every IRS.
pub fn random_phases(network: &Network) -> Vec<CVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(network.scenario.rng_seed);
    rng.set_stream(RANDOM_PHASE_STREAM);
    let n = network.channels.n_elements;
    (0..network.num_irs())
        .map(|_| CVector::from_fn(n, |_, _| Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))))
        .collect()
}

/// Random phases with the power allocation optimized for them.
pub fn baseline_random_phase(network: &Network) -> Result<CrbReport> {
    let nk = network.num_irs();
    let active: Vec<usize> = (0..nk).collect();
    let theta = random_phases(network);
    if network.num_targets() > 1 {
        return Ok(fixed_theta_power(network, &active, theta)?.1);
    }
    let gains: Vec<f64> =
        (0..nk).map(|k| network.channels.reflect_vector(0, k).dotc(&theta[k]).norm_sqr()).collect();
    let problem = fractional_problem_with_gains(network, 0, &active, &gains)?;
    let result = dinkelbach_solve(&problem, &network.scenario.solver)?;
    let power = result.p.iter().map(|p| p.max(0.0)).collect();
    let beams = BeamSolution::assemble(&network.channels, &active, power, theta.into_iter().map(Some).collect())?;
    let mut trace = result.trace;
    trace.stages = 1;
    CrbReport::evaluate(network, beams, trace)
}

/// The proposed design run once with every IRS active.
pub fn baseline_one_stage(network: &Network) -> Result<CrbReport> {
    if network.num_targets() == 1 {
        Ok(one_stage_solve(network)?.1)
    } else {
        Ok(bisection_solve(network)?.1)
    }
}
