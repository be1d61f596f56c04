//! Parameter sweeps written as CSV tables.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_equal_power, baseline_random_phase};
use super::{generate_scenario, ScenarioParams};
use crate::crb::CrbReport;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::multi_target::multi_stages;
use crate::single_target::solve_stages;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    TwoStage,
    OneStage,
    EqualPower,
    RandomPhase,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::TwoStage, Scheme::OneStage, Scheme::EqualPower, Scheme::RandomPhase];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::TwoStage => "two-stage",
            Scheme::OneStage => "one-stage",
            Scheme::EqualPower => "equal-power",
            Scheme::RandomPhase => "random-phase",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// The swept parameter. Counts set the matching scenario knob; `P_max` values
/// are in dBW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    K,
    #[serde(rename = "N_T")]
    NT,
    N,
    M,
    #[serde(rename = "P_max")]
    PMax,
    Q,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "K",
            SweepParam::NT => "N_T",
            SweepParam::N => "N",
            SweepParam::M => "M",
            SweepParam::PMax => "P_max",
            SweepParam::Q => "Q",
        }
    }

    fn is_count(self) -> bool {
        self != SweepParam::PMax
    }

    /// Copy of `base` with this parameter set to `value`. Array sizes are
    /// swept as linear arrays along x.
    pub fn apply(self, base: &ScenarioParams, value: f64) -> ScenarioParams {
        let mut p = base.clone();
        let n = value.round() as usize;
        match self {
            SweepParam::K => p.n_irs = n,
            SweepParam::NT => p.n_tx = n,
            SweepParam::N => (p.n_elem_x, p.n_elem_z) = (n, 1),
            SweepParam::M => (p.m_sens_x, p.m_sens_z) = (n, 1),
            SweepParam::PMax => p.p_max_dbw = value,
            SweepParam::Q => p.n_targets = n,
        }
        p
    }
}

fn default_trials() -> usize {
    50
}

/// A sweep as read from a TOML plan file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub sweep: SweepParam,
    pub values: Vec<f64>,
    /// Independent scenario draws per value, seeded `first_seed..first_seed + trials`.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub first_seed: u64,
    pub schemes: Vec<Scheme>,
    pub out: PathBuf,
    #[serde(default)]
    pub params: ScenarioParams,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("values must not be empty".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes must not be empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        for &v in &self.values {
            let ok = if self.sweep.is_count() { v >= 1.0 && v.fract() == 0.0 } else { v.is_finite() };
            if !ok {
                return Err(Error::Config(format!("invalid {} value {v}", self.sweep.name())));
            }
            self.sweep.apply(&self.params, v).validate()?;
        }
        Ok(())
    }
}

/// One CSV line: a (value, seed, scheme) solve together with the scenario
/// knobs it ran with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub scheme: Scheme,
    pub sweep: String,
    pub value: f64,
    /// `ok` or the error message.
    pub status: String,
    pub worst_crb: Option<f64>,
    /// Per-target CRBs separated by `;`.
    pub crb: String,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub stages: usize,
    pub wall_time_s: f64,
    pub n_targets: usize,
    pub n_irs: usize,
    pub n_tx: usize,
    pub n_elements: usize,
    pub m_sensors: usize,
    pub p_max_dbw: f64,
    pub noise_dbm: f64,
    pub rcs_dbsm: f64,
    pub wavelength_m: f64,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn crb_values(&self) -> Vec<f64> {
        self.crb.split(';').filter(|s| !s.is_empty()).filter_map(|s| s.parse().ok()).collect()
    }
}

/// Outcome of one scheme on one network; errors are kept as messages.
pub type SchemeOutcome = std::result::Result<CrbReport, String>;

/// Runs every requested scheme on one network, returning wall times in
/// seconds. Two-stage and one-stage share the first stage.
pub fn run_schemes(network: &Network, schemes: &[Scheme]) -> Vec<(Scheme, SchemeOutcome, f64)> {
    let mut stages: Option<(std::result::Result<Vec<CrbReport>, String>, f64)> = None;
    let mut out = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let t = Instant::now();
        let (report, time) = match scheme {
            Scheme::TwoStage | Scheme::OneStage => {
                let (r, time) = stages.get_or_insert_with(|| {
                    let r = if network.num_targets() == 1 { solve_stages(network) } else { multi_stages(network) };
                    (r.map_err(|e| e.to_string()), t.elapsed().as_secs_f64())
                });
                let r = match (scheme, r.as_ref()) {
                    (_, Err(e)) => Err(e.clone()),
                    (Scheme::TwoStage, Ok(s)) => Ok(best_stage(s)),
                    (_, Ok(s)) => Ok(s[0].clone()),
                };
                (r, *time)
            }
            Scheme::EqualPower => (baseline_equal_power(network).map_err(|e| e.to_string()), t.elapsed().as_secs_f64()),
            Scheme::RandomPhase => (baseline_random_phase(network).map_err(|e| e.to_string()), t.elapsed().as_secs_f64()),
        };
        out.push((scheme, report, time));
    }
    out
}

fn best_stage(stages: &[CrbReport]) -> CrbReport {
    let mut best = stages.iter().min_by(|a, b| a.worst_crb.total_cmp(&b.worst_crb)).expect("at least one stage").clone();
    best.trace.stages = stages.len();
    best
}

fn row(params: &ScenarioParams, plan: &ExperimentPlan, value: f64, seed: u64, scheme: Scheme) -> ResultRow {
    ResultRow {
        seed,
        scheme,
        sweep: plan.sweep.name().into(),
        value,
        status: String::new(),
        worst_crb: None,
        crb: String::new(),
        outer_iterations: 0,
        inner_iterations: 0,
        stages: 0,
        wall_time_s: 0.0,
        n_targets: params.n_targets,
        n_irs: params.n_irs,
        n_tx: params.n_tx,
        n_elements: params.n_elem_x * params.n_elem_z,
        m_sensors: params.m_sens_x * params.m_sens_z,
        p_max_dbw: params.p_max_dbw,
        noise_dbm: params.noise_dbm,
        rcs_dbsm: params.rcs_dbsm,
        wavelength_m: params.wavelength_m,
    }
}

fn run_job(plan: &ExperimentPlan, value: f64, seed: u64) -> Vec<ResultRow> {
    let params = plan.sweep.apply(&plan.params, value);
    let network = generate_scenario(&params, seed).and_then(Network::new);
    let network = match network {
        Ok(n) => n,
        Err(e) => {
            return plan
                .schemes
                .iter()
                .map(|&s| ResultRow { status: e.to_string(), ..row(&params, plan, value, seed, s) })
                .collect()
        }
    };
    run_schemes(&network, &plan.schemes)
        .into_iter()
        .map(|(scheme, report, time)| {
            let mut r = row(&params, plan, value, seed, scheme);
            r.wall_time_s = time;
            match report {
                Ok(rep) => {
                    r.status = "ok".into();
                    r.worst_crb = Some(rep.worst_crb);
                    r.crb = rep.crb.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(";");
                    r.outer_iterations = rep.trace.outer_iterations;
                    r.inner_iterations = rep.trace.inner_iterations;
                    r.stages = rep.trace.stages;
                }
                Err(e) => r.status = e,
            }
            r
        })
        .collect()
}

/// Runs the whole plan on the rayon pool. Rows come back in (value, seed,
/// scheme) order regardless of completion order.
pub fn run_rows(plan: &ExperimentPlan) -> Vec<ResultRow> {
    let jobs: Vec<(f64, u64)> = plan
        .values
        .iter()
        .flat_map(|&v| (0..plan.trials as u64).map(move |t| (v, t)))
        .map(|(v, t)| (v, plan.first_seed + t))
        .collect();
    jobs.par_iter().map(|&(v, seed)| run_job(plan, v, seed)).collect::<Vec<_>>().concat()
}

/// Writes rows as CSV through a temporary file in the target directory,
/// renamed into place once complete.
pub fn write_csv(rows: &[ResultRow], out: &Path) -> Result<()> {
    let dir = match out.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = csv::Writer::from_writer(tmp.as_file_mut());
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    tmp.as_file_mut().flush()?;
    tmp.persist(out).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub rows: usize,
    pub failures: usize,
}

/// Runs the plan and writes `plan.out`.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RunSummary> {
    plan.validate()?;
    let rows = run_rows(plan);
    write_csv(&rows, &plan.out)?;
    let failures = rows.iter().filter(|r| !r.is_ok()).count();
    Ok(RunSummary { rows: rows.len(), failures })
}

/// Mean worst-case CRB of successful rows per (value, scheme), in plan order.
pub fn mean_worst_crb(rows: &[ResultRow]) -> Vec<(f64, Scheme, f64, usize)> {
    let mut out: Vec<(f64, Scheme, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let v = r.worst_crb.unwrap_or(f64::NAN);
        match out.iter_mut().find(|e| e.0 == r.value && e.1 == r.scheme) {
            Some(e) => {
                e.2 += v;
                e.3 += 1;
            }
            None => out.push((r.value, r.scheme, v, 1)),
        }
    }
    for e in &mut out {
        e.2 /= e.3 as f64;
    }
    out
}
