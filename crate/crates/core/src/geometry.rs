//! Network geometry: positions, bistatic delays and the delay-gradient
//! coefficients that map TOA information onto target (x, y) coordinates.
//!
//! Angles are never materialized. The gradient of a two-leg delay with
//! respect to the target's horizontal position is the (negated) sum of the
//! horizontal direction cosines from the target toward both IRSs, which is
//! what the azimuth/elevation products reduce to.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Cartesian position in meters.
pub type Position = [f64; 3];

pub(crate) fn vec3(p: &Position) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// Initial reflect configuration used by the multi-target alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReflectInit {
    /// theta = all ones (R = 11^H).
    #[default]
    AllOnes,
    /// Closed-form phases toward the target centroid.
    Centroid,
}

/// Iteration limits and tolerances for both solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// ADMM inner stopping threshold on squared residuals (normalized powers).
    pub admm_eps: f64,
    /// Relative Dinkelbach stopping threshold on the ratio parameter.
    pub dinkelbach_eps: f64,
    pub admm_max_inner: usize,
    pub dinkelbach_max_outer: usize,
    /// Powers below `zero_power_rel * p_max` count as zero when selecting IRSs.
    pub zero_power_rel: f64,
    /// Same threshold for the multi-target solver, whose interior-point
    /// iterates never reach exact zeros.
    pub multi_zero_power_rel: f64,
    /// Relative transmit-power change that ends the power/reflect alternation.
    pub alternation_eps: f64,
    /// Relative mismatch |tr(WW^H) - P_max| / P_max that ends the bisection.
    pub bisection_eps: f64,
    pub max_alternations: usize,
    pub max_bisections: usize,
    /// Relative improvement that ends an SCA loop.
    pub sca_eps: f64,
    pub sca_max_iters: usize,
    pub randomization_trials: usize,
    pub reflect_init: ReflectInit,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            admm_eps: 1e-8,
            dinkelbach_eps: 1e-6,
            admm_max_inner: 5_000,
            dinkelbach_max_outer: 50,
            zero_power_rel: 1e-8,
            multi_zero_power_rel: 1e-5,
            alternation_eps: 1e-3,
            bisection_eps: 1e-2,
            max_alternations: 30,
            max_bisections: 60,
            sca_eps: 1e-6,
            sca_max_iters: 20,
            randomization_trials: 200,
            reflect_init: ReflectInit::AllOnes,
        }
    }
}

/// A complete localization network: geometry, array sizes, radio constants
/// (all linear SI) and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bs_position: Position,
    pub irs_positions: Vec<Position>,
    pub target_positions: Vec<Position>,
    /// BS antennas (uniform linear array along x).
    pub n_tx: usize,
    pub n_elem_x: usize,
    pub n_elem_z: usize,
    pub m_sens_x: usize,
    pub m_sens_z: usize,
    /// Carrier wavelength, m.
    pub wavelength: f64,
    /// Radar cross section, m^2.
    pub rcs: f64,
    /// Transmit power budget, W.
    pub p_max: f64,
    /// Sensor noise power, W.
    pub noise_power: f64,
    /// Energy of the waveform derivative.
    pub eta: f64,
    /// Effective radar pulse width, s.
    pub pulse_width: f64,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
    pub rng_seed: u64,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl Scenario {
    pub fn num_irs(&self) -> usize {
        self.irs_positions.len()
    }

    pub fn num_targets(&self) -> usize {
        self.target_positions.len()
    }

    /// N = N_x * N_z reflecting elements per IRS.
    pub fn n_elements(&self) -> usize {
        self.n_elem_x * self.n_elem_z
    }

    /// M = M_x * M_z sensors per IRS.
    pub fn m_sensors(&self) -> usize {
        self.m_sens_x * self.m_sens_z
    }

    /// c0 = c^2 sigma^2 / eta, the constant in front of the closed-form CRB.
    pub fn c0(&self) -> f64 {
        SPEED_OF_LIGHT * SPEED_OF_LIGHT * self.noise_power / self.eta
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_irs();
        let q = self.num_targets();
        if k == 0 {
            return Err(Error::InvalidScenario("at least one IRS is required".into()));
        }
        if q == 0 {
            return Err(Error::InvalidScenario("at least one target is required".into()));
        }
        if self.n_tx < k {
            return Err(Error::InvalidScenario(format!(
                "n_tx = {} must be at least the number of IRSs ({k}) for zero-forcing",
                self.n_tx
            )));
        }
        if self.n_elements() == 0 || self.m_sensors() == 0 {
            return Err(Error::InvalidScenario("array sizes must be positive".into()));
        }
        for (name, v) in [
            ("wavelength", self.wavelength),
            ("rcs", self.rcs),
            ("p_max", self.p_max),
            ("noise_power", self.noise_power),
            ("eta", self.eta),
            ("element_spacing", self.element_spacing),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidScenario(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.pulse_width >= 0.0) {
            return Err(Error::InvalidScenario("pulse_width must be nonnegative".into()));
        }
        let bs = vec3(&self.bs_position);
        for (i, irs) in self.irs_positions.iter().enumerate() {
            if (vec3(irs) - bs).norm() <= 0.0 {
                return Err(Error::InvalidScenario(format!("IRS {i} coincides with the BS")));
            }
            for (t, target) in self.target_positions.iter().enumerate() {
                if (vec3(irs) - vec3(target)).norm() <= 0.0 {
                    return Err(Error::ZeroDistance { target: t, irs: i });
                }
            }
        }
        Ok(())
    }
}

/// Delay-gradient coefficients and bistatic delays, flattened in (q, k, l) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryCoefficients {
    pub num_targets: usize,
    pub num_irs: usize,
    /// a_{q,k,l} = -c * d tau_{q,k,l} / d x_q.
    pub a: Vec<f64>,
    /// b_{q,k,l} = -c * d tau_{q,k,l} / d y_q.
    pub b: Vec<f64>,
    /// tau_{q,k,l}, seconds.
    pub delays: Vec<f64>,
}

impl GeometryCoefficients {
    #[inline]
    pub fn index(&self, q: usize, k: usize, l: usize) -> usize {
        (q * self.num_irs + k) * self.num_irs + l
    }

    pub fn a(&self, q: usize, k: usize, l: usize) -> f64 {
        self.a[self.index(q, k, l)]
    }

    pub fn b(&self, q: usize, k: usize, l: usize) -> f64 {
        self.b[self.index(q, k, l)]
    }

    pub fn delay(&self, q: usize, k: usize, l: usize) -> f64 {
        self.delays[self.index(q, k, l)]
    }
}

/// Two-leg delay IRS k -> target q -> IRS l, in seconds.
pub fn bistatic_delay(scenario: &Scenario, q: usize, k: usize, l: usize) -> f64 {
    let t = vec3(&scenario.target_positions[q]);
    let dk = (vec3(&scenario.irs_positions[k]) - t).norm();
    let dl = (vec3(&scenario.irs_positions[l]) - t).norm();
    (dk + dl) / SPEED_OF_LIGHT
}

/// Closed-form delay gradients for every (target, IRS, IRS) triple.
pub fn delay_gradients(scenario: &Scenario) -> Result<GeometryCoefficients> {
    let nq = scenario.num_targets();
    let nk = scenario.num_irs();
    // Horizontal direction cosines from each target toward each IRS.
    let mut cos_x = vec![0.0; nq * nk];
    let mut cos_y = vec![0.0; nq * nk];
    let mut dist = vec![0.0; nq * nk];
    for q in 0..nq {
        let t = vec3(&scenario.target_positions[q]);
        for k in 0..nk {
            let d = vec3(&scenario.irs_positions[k]) - t;
            let n = d.norm();
            if n <= 0.0 {
                return Err(Error::ZeroDistance { target: q, irs: k });
            }
            cos_x[q * nk + k] = d.x / n;
            cos_y[q * nk + k] = d.y / n;
            dist[q * nk + k] = n;
        }
    }

    let len = nq * nk * nk;
    let mut a = Vec::with_capacity(len);
    let mut b = Vec::with_capacity(len);
    let mut delays = Vec::with_capacity(len);
    for q in 0..nq {
        for k in 0..nk {
            for l in 0..nk {
                let (ik, il) = (q * nk + k, q * nk + l);
                a.push(cos_x[ik] + cos_x[il]);
                b.push(cos_y[ik] + cos_y[il]);
                delays.push((dist[ik] + dist[il]) / SPEED_OF_LIGHT);
            }
        }
    }
    Ok(GeometryCoefficients { num_targets: nq, num_irs: nk, a, b, delays })
}

/// A pair of paths from two different targets whose delays are within a pulse width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeparabilityViolation {
    pub targets: (usize, usize),
    pub paths: ((usize, usize), (usize, usize)),
}

/// Checks that every path delay of one target differs from every path delay
/// of every other target by more than the pulse width.
pub fn check_separability(scenario: &Scenario) -> (bool, Vec<SeparabilityViolation>) {
    let nq = scenario.num_targets();
    let nk = scenario.num_irs();
    let tau_r = scenario.pulse_width;
    let delays: Vec<Vec<((usize, usize), f64)>> = (0..nq)
        .map(|q| {
            (0..nk)
                .flat_map(|k| (0..nk).map(move |l| (k, l)))
                .map(|(k, l)| ((k, l), bistatic_delay(scenario, q, k, l)))
                .collect()
        })
        .collect();

    let mut violations = Vec::new();
    for q1 in 0..nq {
        for q2 in (q1 + 1)..nq {
            for &(p1, t1) in &delays[q1] {
                for &(p2, t2) in &delays[q2] {
                    if (t1 - t2).abs() <= tau_r {
                        violations.push(SeparabilityViolation { targets: (q1, q2), paths: (p1, p2) });
                    }
                }
            }
        }
    }
    (violations.is_empty(), violations)
}
