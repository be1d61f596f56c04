//! Property tests for the model invariants.

use irs_crb::beamforming::{optimal_theta, zf_power_weights, BeamSolution};
use irs_crb::channel::CVector;
use irs_crb::crb::{c_squared, crb_trace, evaluate_crb, position_fim, rank_one_update_is_monotone};
use irs_crb::experiment::{generate_scenario, ScenarioParams};
use irs_crb::single_target::{fractional_problem, z_update};
use irs_crb::Network;
use nalgebra::{DVector, Matrix2};
use num_complex::Complex64;
use proptest::prelude::*;

fn net(k: usize, q: usize, seed: u64) -> Network {
    let p = ScenarioParams { n_irs: k, n_targets: q, ..Default::default() };
    Network::new(generate_scenario(&p, seed).unwrap()).unwrap()
}

fn beams(n: &Network, powers: &[f64], phases: &[f64]) -> BeamSolution {
    let k = n.num_irs();
    let ne = n.channels.n_elements;
    let power = (0..k).map(|i| powers[i % powers.len()] * n.scenario.p_max / k as f64).collect();
    let theta = (0..k)
        .map(|i| Some(CVector::from_fn(ne, |e, _| Complex64::from_polar(1.0, phases[(i * ne + e) % phases.len()]))))
        .collect();
    BeamSolution::assemble(&n.channels, &(0..k).collect::<Vec<_>>(), power, theta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn delay_coefficients_are_bounded_and_symmetric(k in 1usize..7, q in 1usize..4, seed in 0u64..10_000) {
        let n = net(k, q, seed);
        let g = &n.geometry;
        let c = c_squared().sqrt();
        for t in 0..q {
            let target = n.scenario.target_positions[t];
            for i in 0..k {
                for l in 0..k {
                    prop_assert!((g.a(t, i, l) - g.a(t, l, i)).abs() < 1e-12);
                    prop_assert!((g.b(t, i, l) - g.b(t, l, i)).abs() < 1e-12);
                    prop_assert!(g.a(t, i, l).abs() <= 2.0 && g.b(t, i, l).abs() <= 2.0);
                    let dist = |p: [f64; 3]| ((p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2) + (p[2] - target[2]).powi(2)).sqrt();
                    let legs = dist(n.scenario.irs_positions[i]) + dist(n.scenario.irs_positions[l]);
                    prop_assert!((c * g.delay(t, i, l) - legs).abs() <= 1e-9 * legs);
                }
            }
        }
    }

    #[test]
    fn steering_vectors_have_unit_entries(k in 1usize..7, q in 1usize..4, seed in 0u64..10_000) {
        let ch = net(k, q, seed).channels;
        for v in ch.a_i2b.iter().chain(&ch.a_b2i_tx).chain(&ch.a_i2t).chain(&ch.a_t2i) {
            prop_assert!(v.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            prop_assert!((v.norm_squared() - v.len() as f64).abs() < 1e-9);
        }
        prop_assert!(ch.alpha_b2i.iter().chain(&ch.alpha_i2i).all(|&a| a > 0.0));
    }

    #[test]
    fn fim_blocks_are_psd_and_crb_scales_inversely_with_power(
        k in 2usize..6,
        q in 1usize..4,
        seed in 0u64..10_000,
        powers in prop::collection::vec(0.05f64..1.0, 6),
        phases in prop::collection::vec(0.0f64..std::f64::consts::TAU, 16),
        scale in 0.01f64..100.0,
    ) {
        let n = net(k, q, seed);
        let b = beams(&n, &powers, &phases);
        let fim = position_fim(&n, &b);
        for g in &fim.g {
            prop_assert!((g[(0, 1)] - g[(1, 0)]).abs() <= 1e-12 * g.norm());
            prop_assert!(g.symmetric_eigen().eigenvalues.min() >= -1e-9 * g.norm());
        }
        prop_assert!(fim.delay_fim.iter().all(|&d| d >= 0.0));
        let crb = crb_trace(&fim).unwrap();
        prop_assert!(crb.iter().all(|&c| c > 0.0));
        let scaled = evaluate_crb(&n, &b.scaled(scale)).unwrap();
        for (s, c) in scaled.iter().zip(&crb) {
            prop_assert!((s * scale / c - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_forcing_nulls_every_cross_term(
        k in 1usize..9,
        seed in 0u64..10_000,
        powers in prop::collection::vec(0.05f64..1.0, 8),
        phases in prop::collection::vec(0.0f64..std::f64::consts::TAU, 8),
    ) {
        let n = net(k, 1, seed);
        let b = beams(&n, &powers, &phases);
        prop_assert!(b.max_cross_term(&n.channels) < 1e-9);
        let h = zf_power_weights(&n.channels, &b.active).unwrap();
        prop_assert!(h.iter().all(|&x| x > 0.0));
        let tx: f64 = b.active.iter().map(|&i| h[i] * b.power[i]).sum();
        prop_assert!((b.transmit_power() - tx).abs() <= 1e-6 * tx);
        for i in 0..k {
            let gain = n.channels.a_b2i_tx[i].dotc(&b.w.column(i).into_owned());
            prop_assert!((gain.norm_sqr() - b.power[i]).abs() <= 1e-9 * b.power[i]);
        }
    }

    #[test]
    fn closed_form_phases_reach_the_triangle_bound(
        k in 1usize..7,
        q in 1usize..4,
        seed in 0u64..10_000,
        powers in prop::collection::vec(0.05f64..1.0, 6),
    ) {
        let n = net(k, q, seed);
        let b = beams(&n, &powers, &[0.0]);
        for i in 0..k {
            let w = b.w.column(i).into_owned();
            for t in 0..q {
                let theta = optimal_theta(&n.channels, i, t, &w).unwrap();
                prop_assert!(theta.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
                let hw = &n.channels.h_b2i[i] * &w;
                let eff = n.channels.a_i2t(i, t).zip_map(&hw, |a, h| a.conj() * h);
                let bound: f64 = eff.iter().map(|z| z.norm()).sum();
                let got: Complex64 = eff.iter().zip(theta.iter()).map(|(g, z)| g * z).sum();
                prop_assert!((got.norm() - bound).abs() <= 1e-9 * bound);
            }
        }
    }

    #[test]
    fn fractional_data_invariants(k in 1usize..9, seed in 0u64..10_000, lam in prop::collection::vec(-1.0f64..1.0, 8)) {
        let n = net(k, 1, seed);
        let prob = fractional_problem(&n, 0, &(0..k).collect::<Vec<_>>()).unwrap();
        for i in 0..k {
            prop_assert!(prob.a[i] >= 0.0 && prob.b[i] >= 0.0 && prob.h[i] > 0.0);
            prop_assert!(prob.c[i] * prob.c[i] <= prob.a[i] * prob.b[i] * (1.0 + 1e-12));
        }
        prop_assert!(prob.rho > 2.0 * prob.beta);
        let p = prob.equal_power();
        // Multipliers live on the scale rho * p of the ADMM iterates.
        let scale = prob.rho * prob.p_max / k as f64;
        let lambda = DVector::from_fn(k, |i, _| lam[i] * scale);
        let z = z_update(&prob, &p, &lambda);
        prop_assert!(z.iter().all(|&v| v >= 0.0));
        prop_assert!((prob.h.dot(&z) - prob.p_max).abs() <= 1e-9 * prob.p_max);
    }

    #[test]
    fn rank_one_updates_never_raise_the_bound(
        a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, ridge in 1e-3f64..1.0,
        da in -2.0f64..2.0, db in -2.0f64..2.0, w in 0.0f64..100.0,
    ) {
        let l = Matrix2::new(a, 0.0, b, c);
        let g = l * l.transpose() + Matrix2::identity() * ridge;
        prop_assert!(rank_one_update_is_monotone(&g, (da, db), w));
    }
}
