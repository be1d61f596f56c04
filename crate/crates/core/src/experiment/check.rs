//! Oracle and invariant checks on a single scenario.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::beamforming::{optimal_theta, BeamSolution};
use crate::crb::{crb_closed_form, crb_trace, orthogonality_residual, position_fim, weyl_monotonicity_check, CrbReport};
use crate::geometry::check_separability;
use crate::model::Network;
use crate::oracles::{dense_chain_rule_fim, fd_jacobian, random_phase_best, target_block};

/// Stream of the per-scenario generator used by the checks.
const CHECK_STREAM: u64 = 5;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Runs every check against `report`, a solver output for `network`.
pub fn run_checks(network: &Network, report: &CrbReport) -> Vec<CheckResult> {
    let s = &network.scenario;
    let beams = &report.beams;
    let mut out = Vec::new();

    let (fa, fb) = fd_jacobian(s, 1e-3);
    let geo = &network.geometry;
    let jac_err = (0..fa.len())
        .map(|i| (geo.a[i] - fa[i]).abs().max((geo.b[i] - fb[i]).abs()))
        .fold(0.0, f64::max);
    out.push(CheckResult::new("delay-gradients", jac_err <= 1e-6, format!("max |analytic - finite difference| = {jac_err:.3e}")));

    let fim = position_fim(network, beams);
    let dense = dense_chain_rule_fim(s, &network.channels, beams);
    let fim_err = (0..network.num_targets())
        .map(|q| {
            let d = target_block(&dense, q);
            (fim.g[q] - d).norm() / d.norm().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    out.push(CheckResult::new("fim-chain-rule", fim_err <= 1e-9, format!("max relative block error = {fim_err:.3e}")));

    match crb_trace(&fim) {
        Ok(traces) => {
            let err = traces
                .iter()
                .zip(&fim.sums)
                .map(|(t, sums)| (crb_closed_form(*sums, fim.c0) - t).abs() / t)
                .fold(0.0, f64::max);
            out.push(CheckResult::new("crb-closed-form", err <= 1e-9, format!("max relative error = {err:.3e}")));
        }
        Err(e) => out.push(CheckResult::new("crb-closed-form", false, e.to_string())),
    }

    let cross = orthogonality_residual(&network.channels, beams);
    let power_err = (beams.transmit_power() - s.p_max).abs() / s.p_max;
    out.push(CheckResult::new(
        "zero-forcing",
        cross < 1e-9 && power_err <= 1e-6,
        format!("max cross term {cross:.3e}, relative power error {power_err:.3e}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(s.rng_seed);
    rng.set_stream(CHECK_STREAM);
    out.push(phase_check(network, beams, &mut rng));

    // Echo energies of the current design set the scale of the increments.
    let energy_scale = fim.delay_fim.iter().cloned().fold(0.0, f64::max) * s.noise_power / s.eta;
    let mut violations = 0;
    let mut draws = 0;
    for q in 0..network.num_targets() {
        for k in 0..network.num_irs() {
            for l in 0..network.num_irs() {
                let delta = rng.gen_range(0.0..1.0) * energy_scale;
                draws += 1;
                if !weyl_monotonicity_check(&fim, geo, q, k, l, delta) {
                    violations += 1;
                }
            }
        }
    }
    out.push(CheckResult::new(
        "crb-monotone-in-energy",
        violations == 0,
        format!("{violations} violations in {draws} rank-one updates"),
    ));

    if network.num_targets() > 1 {
        let (ok, v) = check_separability(s);
        out.push(CheckResult::new("delay-separability", ok, format!("{} violating path pairs", v.len())));
    }
    out
}

/// Closed-form phases against random unit-modulus draws, per active IRS and
/// target.
fn phase_check(network: &Network, beams: &BeamSolution, rng: &mut impl Rng) -> CheckResult {
    let ch = &network.channels;
    let mut worst_gap: f64 = 0.0;
    let mut worst_gain_err: f64 = 0.0;
    for &k in &beams.active {
        let w_k = beams.w.column(k).into_owned();
        for q in 0..network.num_targets() {
            let hw = &ch.h_b2i[k] * &w_k;
            let eff = ch.a_i2t(k, q).zip_map(&hw, |a, h| a.conj() * h);
            let bound: f64 = eff.iter().map(|z| z.norm()).sum();
            let Ok(theta) = optimal_theta(ch, k, q, &w_k) else { continue };
            let achieved: Complex64 = eff.iter().zip(theta.iter()).map(|(g, t)| g * t).sum();
            worst_gain_err = worst_gain_err.max((achieved.norm() - bound).abs() / bound);
            let random = random_phase_best(&eff, 10_000, rng);
            worst_gap = worst_gap.max(random / bound - 1.0);
        }
    }
    CheckResult::new(
        "closed-form-phases",
        worst_gap <= 1e-12 && worst_gain_err <= 1e-9,
        format!("best random draw exceeds the optimum by {worst_gap:.3e}; gain error {worst_gain_err:.3e}"),
    )
}
