//! Scenario generation, benchmark schemes and parameter sweeps.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub mod baselines;
pub mod check;
pub mod plan;

use crate::beamforming::steering_is_regular;
use crate::channel::steering;
use crate::error::{Error, Result};
use crate::geometry::{Position, Scenario, SolverSettings};

pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn dbsm_to_m2(dbsm: f64) -> f64 {
    10f64.powf(dbsm / 10.0)
}

const MAX_REJECTIONS: usize = 100;

/// Knobs of a randomly drawn scenario, in configuration units.
///
/// Defaults are the reference simulation parameters: N_T = 12, N = 10,
/// M = 10, K = 6, 7 dBsm, 20 dBW, -110 dBm, 0.3 m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub n_targets: usize,
    pub n_irs: usize,
    pub n_tx: usize,
    pub n_elem_x: usize,
    pub n_elem_z: usize,
    pub m_sens_x: usize,
    pub m_sens_z: usize,
    pub p_max_dbw: f64,
    pub noise_dbm: f64,
    pub rcs_dbsm: f64,
    pub wavelength_m: f64,
    pub pulse_width_s: f64,
    pub element_spacing: f64,
    pub eta: f64,
    /// IRSs and targets are drawn in [-half_width, half_width]^2.
    pub area_half_width_m: f64,
    pub bs_height_m: f64,
    pub irs_height_m: f64,
    pub solver: SolverSettings,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n_targets: 1,
            n_irs: 6,
            n_tx: 12,
            n_elem_x: 10,
            n_elem_z: 1,
            m_sens_x: 10,
            m_sens_z: 1,
            p_max_dbw: 20.0,
            noise_dbm: -110.0,
            rcs_dbsm: 7.0,
            wavelength_m: 0.3,
            pulse_width_s: 0.0,
            element_spacing: 0.5,
            eta: 1.0,
            area_half_width_m: 100.0,
            bs_height_m: 50.0,
            irs_height_m: 30.0,
            solver: SolverSettings::default(),
        }
    }
}

impl ScenarioParams {
    /// Builds a scenario at fixed positions with these radio parameters.
    pub fn scenario_with(&self, irs: Vec<Position>, targets: Vec<Position>, seed: u64) -> Scenario {
        Scenario {
            bs_position: [0.0, 0.0, self.bs_height_m],
            irs_positions: irs,
            target_positions: targets,
            n_tx: self.n_tx,
            n_elem_x: self.n_elem_x,
            n_elem_z: self.n_elem_z,
            m_sens_x: self.m_sens_x,
            m_sens_z: self.m_sens_z,
            wavelength: self.wavelength_m,
            rcs: dbsm_to_m2(self.rcs_dbsm),
            p_max: dbw_to_watts(self.p_max_dbw),
            noise_power: dbm_to_watts(self.noise_dbm),
            eta: self.eta,
            pulse_width: self.pulse_width_s,
            element_spacing: self.element_spacing,
            rng_seed: seed,
            solver: self.solver.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_targets", self.n_targets),
            ("n_irs", self.n_irs),
            ("n_tx", self.n_tx),
            ("n_elem_x", self.n_elem_x),
            ("n_elem_z", self.n_elem_z),
            ("m_sens_x", self.m_sens_x),
            ("m_sens_z", self.m_sens_z),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_tx < self.n_irs {
            return Err(Error::Config(format!(
                "n_tx = {} must be at least n_irs = {}",
                self.n_tx, self.n_irs
            )));
        }
        for (name, v) in [
            ("wavelength_m", self.wavelength_m),
            ("element_spacing", self.element_spacing),
            ("eta", self.eta),
            ("area_half_width_m", self.area_half_width_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.pulse_width_s >= 0.0) {
            return Err(Error::Config("pulse_width_s must be nonnegative".into()));
        }
        if self.irs_height_m == 0.0 || self.irs_height_m == self.bs_height_m {
            return Err(Error::Config("IRS height must differ from BS and target heights".into()));
        }
        Ok(())
    }
}

/// Reference parameters at the given positions.
pub fn table_one_scenario(irs: Vec<Position>, targets: Vec<Position>) -> Scenario {
    ScenarioParams::default().scenario_with(irs, targets, 0)
}

fn bs_cosine(bs: &Position, p: &Position) -> f64 {
    let d = [p[0] - bs[0], p[1] - bs[1], p[2] - bs[2]];
    d[0] / (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Draws a random layout. IRSs and targets come from separate streams of the
/// same seed, so the first K IRSs of a larger draw equal a K-IRS draw.
///
/// An IRS is redrawn when its BS direction cosine is within 1e-6 of an
/// earlier IRS or its BS steering vector makes zero forcing ill-conditioned; a target is redrawn when it lies within 1 m horizontally of
/// any IRS.
pub fn generate_scenario(params: &ScenarioParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let w = params.area_half_width_m;
    let bs = [0.0, 0.0, params.bs_height_m];

    let mut irs_rng = ChaCha8Rng::seed_from_u64(seed);
    irs_rng.set_stream(1);
    let mut irs: Vec<Position> = Vec::with_capacity(params.n_irs);
    let mut tx = Vec::with_capacity(params.n_irs);
    while irs.len() < params.n_irs {
        let mut tries = 0;
        loop {
            let p = [irs_rng.gen_range(-w..=w), irs_rng.gen_range(-w..=w), params.irs_height_m];
            let c = bs_cosine(&bs, &p);
            if irs.iter().all(|o| (bs_cosine(&bs, o) - c).abs() > 1e-6) {
                tx.push(steering(params.element_spacing * c, params.n_tx));
                if steering_is_regular(&tx) {
                    irs.push(p);
                    break;
                }
                tx.pop();
            }
            tries += 1;
            if tries >= MAX_REJECTIONS {
                return Err(Error::GenerationRejected(tries));
            }
        }
    }

    let mut target_rng = ChaCha8Rng::seed_from_u64(seed);
    target_rng.set_stream(2);
    let mut targets: Vec<Position> = Vec::with_capacity(params.n_targets);
    while targets.len() < params.n_targets {
        let mut tries = 0;
        loop {
            let t = [target_rng.gen_range(-w..=w), target_rng.gen_range(-w..=w), 0.0];
            if irs.iter().all(|p| (p[0] - t[0]).hypot(p[1] - t[1]) >= 1.0) {
                targets.push(t);
                break;
            }
            tries += 1;
            if tries >= MAX_REJECTIONS {
                return Err(Error::GenerationRejected(tries));
            }
        }
    }
    Ok(params.scenario_with(irs, targets, seed))
}

/// Fixed positions of a hand-placed layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub irs: Vec<Position>,
    pub targets: Vec<Position>,
}

/// A scenario file: radio parameters plus either a fixed layout or a seed
/// for a random one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub seed: u64,
    pub layout: Option<Layout>,
    pub params: ScenarioParams,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.params.validate()?;
        Ok(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Builds the scenario; `seed` overrides the file's seed.
    pub fn build(&self, seed: Option<u64>) -> Result<Scenario> {
        let seed = seed.unwrap_or(self.seed);
        let scenario = match &self.layout {
            Some(l) => self.params.scenario_with(l.irs.clone(), l.targets.clone(), seed),
            None => generate_scenario(&self.params, seed)?,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
