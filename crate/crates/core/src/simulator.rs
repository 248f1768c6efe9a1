//! Three-ODE limit-cycle ECG generator integrated with fixed-step explicit
//! Euler.
//!
//! The (x, y) state circles a unit-radius attractor whose angle is the
//! cardiac phase; z is the voltage, kicked by five Gaussian terms placed at
//! the P, Q, R, S and T landmark phases and pulled back to a (possibly
//! wandering) baseline.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{beat_window, Lead};

/// Indices of the five deflections inside the parameter arrays.
pub const WAVE_NAMES: [&str; 5] = ["P", "Q", "R", "S", "T"];
pub const R_WAVE: usize = 2;

/// Wrap an angle into `[-pi, pi)`.
pub fn wrap_phase(angle: f64) -> f64 {
    let w = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2 pi
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Morphology and rate parameters for one (class, lead).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    #[serde(rename = "class")]
    pub class_label: String,
    pub lead: Lead,
    /// Landmark phases in radians, P Q R S T order.
    pub theta: [f64; 5],
    pub a: [f64; 5],
    /// Gaussian widths in radians.
    pub b: [f64; 5],
    /// Angular velocity in rad/s.
    pub omega: f64,
    /// Respiratory baseline amplitude in mV.
    #[serde(default)]
    pub baseline_amp: f64,
    /// Respiratory frequency in Hz.
    #[serde(default = "default_f_resp")]
    pub f_resp: f64,
}

fn default_f_resp() -> f64 {
    0.25
}

impl WaveParams {
    /// The classic single-lead template at 60 bpm with baseline wander off.
    pub fn mcsharry(class_label: impl Into<String>, lead: Lead) -> Self {
        Self {
            class_label: class_label.into(),
            lead,
            theta: [-PI / 3.0, -PI / 12.0, 0.0, PI / 12.0, PI / 2.0],
            a: [1.2, -5.0, 30.0, -7.5, 0.75],
            b: [0.25, 0.1, 0.1, 0.1, 0.4],
            omega: 2.0 * PI,
            baseline_amp: 0.0,
            f_resp: default_f_resp(),
        }
    }

    pub fn with_heart_rate(mut self, bpm: f64) -> Self {
        self.omega = omega_for_bpm(bpm);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .theta
            .iter()
            .chain(&self.a)
            .chain(&self.b)
            .chain([&self.omega, &self.baseline_amp, &self.f_resp]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("parameters must be finite".into()));
        }
        if let Some(i) = self.b.iter().position(|&b| b <= 0.0) {
            return Err(Error::Invalid(format!(
                "width b_{} = {} must be > 0",
                WAVE_NAMES[i], self.b[i]
            )));
        }
        if self.omega <= 0.0 {
            return Err(Error::Invalid(format!("omega = {} must be > 0", self.omega)));
        }
        if let Some(i) = self.theta.iter().position(|t| !(-PI..=PI).contains(t)) {
            return Err(Error::Invalid(format!(
                "theta_{} = {} outside [-pi, pi]",
                WAVE_NAMES[i], self.theta[i]
            )));
        }
        if self.baseline_amp < 0.0 {
            return Err(Error::Invalid("baseline_amp must be >= 0".into()));
        }
        if self.baseline_amp > 0.0 && self.f_resp <= 0.0 {
            return Err(Error::Invalid("f_resp must be > 0 when wander is on".into()));
        }
        Ok(())
    }

    /// Validation plus strict P < Q < R < S < T phase ordering.
    pub fn validate_ordered(&self) -> Result<()> {
        self.validate()?;
        if self.theta.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!(
                "phases not strictly increasing: {:?}",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn heart_rate(&self) -> f64 {
        self.omega * 60.0 / (2.0 * PI)
    }

    /// Respiratory baseline at time `t`.
    pub fn baseline(&self, t: f64) -> f64 {
        if self.baseline_amp == 0.0 {
            0.0
        } else {
            self.baseline_amp * (2.0 * PI * self.f_resp * t).sin()
        }
    }
}

pub fn omega_for_bpm(bpm: f64) -> f64 {
    2.0 * PI * bpm / 60.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
}

impl SimState {
    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn phase(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub fs: f64,
    pub duration_s: f64,
    pub burn_in_s: f64,
    pub sub_steps: usize,
    pub init: (f64, f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fs: 500.0,
            duration_s: 10.0,
            burn_in_s: 1.0,
            sub_steps: 8,
            init: (1.0, 0.0, 0.0),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::Invalid(format!("fs must be > 0, got {}", self.fs)));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Invalid("duration_s must be > 0".into()));
        }
        if !(self.burn_in_s.is_finite() && self.burn_in_s >= 0.0) {
            return Err(Error::Invalid("burn_in_s must be >= 0".into()));
        }
        if self.sub_steps == 0 {
            return Err(Error::Invalid("sub_steps must be >= 1".into()));
        }
        let (x, y, z) = self.init;
        if ![x, y, z].iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("initial state must be finite".into()));
        }
        Ok(())
    }

    pub fn output_len(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }
}

/// Voltage derivative `f_z` at a phase-plane point.
pub fn voltage_rhs(x: f64, y: f64, z: f64, t: f64, params: &WaveParams) -> f64 {
    let phase = y.atan2(x);
    let mut kick = 0.0;
    for i in 0..5 {
        let d = wrap_phase(phase - params.theta[i]);
        let b = params.b[i];
        kick -= params.a[i] * d * (-d * d / (2.0 * b * b)).exp();
    }
    kick - (z - params.baseline(t))
}

/// Right-hand side of the three ODEs.
pub fn rhs(state: &SimState, params: &WaveParams) -> (f64, f64, f64) {
    let alpha = 1.0 - state.radius();
    let dx = alpha * state.x - params.omega * state.y;
    let dy = alpha * state.y + params.omega * state.x;
    let dz = voltage_rhs(state.x, state.y, state.z, state.t, params);
    (dx, dy, dz)
}

fn check_state(s: &SimState, step: usize) -> Result<()> {
    let bound = 1e6;
    let ok = [s.x, s.y, s.z]
        .iter()
        .all(|v| v.is_finite() && v.abs() <= bound);
    if ok {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

/// Advance one explicit Euler step of size `h`; `t_next` is the new time.
#[inline]
pub fn euler_step(state: &SimState, params: &WaveParams, h: f64, t_next: f64) -> SimState {
    let (dx, dy, dz) = rhs(state, params);
    SimState {
        x: state.x + dx * h,
        y: state.y + dy * h,
        z: state.z + dz * h,
        t: t_next,
    }
}

/// Integrate and return the emitted states (one per output sample).
pub fn simulate_states(params: &WaveParams, config: &SimConfig) -> Result<Vec<SimState>> {
    params.validate()?;
    config.validate()?;
    let h = 1.0 / (config.fs * config.sub_steps as f64);
    let burn = (config.burn_in_s * config.fs).round() as usize * config.sub_steps;
    let n_out = config.output_len();
    let (x, y, z) = config.init;
    let mut state = SimState { x, y, z, t: 0.0 };
    let mut step = 0usize;
    let mut advance = |state: &mut SimState| -> Result<()> {
        step += 1;
        *state = euler_step(state, params, h, step as f64 * h);
        check_state(state, step)
    };
    for _ in 0..burn {
        advance(&mut state)?;
    }
    let mut out = Vec::with_capacity(n_out);
    for _ in 0..n_out {
        out.push(state);
        for _ in 0..config.sub_steps {
            advance(&mut state)?;
        }
    }
    Ok(out)
}

/// Single-lead voltage trace of `round(duration_s * fs)` samples.
pub fn simulate(params: &WaveParams, config: &SimConfig) -> Result<Vec<f64>> {
    Ok(simulate_states(params, config)?
        .into_iter()
        .map(|s| s.z)
        .collect())
}

/// One R-aligned cycle and the phase-plane trajectory that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatTrajectory {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
}

impl BeatTrajectory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Start phase that puts the R landmark at sample `round(0.2 fs)`.
pub fn beat_start_phase(params: &WaveParams, fs: f64) -> f64 {
    let (pre, _) = beat_window(fs);
    params.theta[R_WAVE] - params.omega * pre as f64 / fs
}

/// Integrate one crop-length cycle with step `1 / fs`, starting on the unit
/// circle at [`beat_start_phase`] with z at 0.
pub fn simulate_beat(params: &WaveParams, fs: f64) -> Result<BeatTrajectory> {
    params.validate()?;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Invalid(format!("fs must be > 0, got {fs}")));
    }
    integrate_beat(params, fs)
}

/// [`simulate_beat`] without parameter validation, for finite-difference
/// probes that may step a phase just past +-pi.
pub(crate) fn integrate_beat(params: &WaveParams, fs: f64) -> Result<BeatTrajectory> {
    let (pre, post) = beat_window(fs);
    let n = pre + post;
    let h = 1.0 / fs;
    let phi0 = beat_start_phase(params, fs);
    let mut state = SimState {
        x: phi0.cos(),
        y: phi0.sin(),
        z: 0.0,
        t: 0.0,
    };
    let mut traj = BeatTrajectory {
        z: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
    };
    for l in 0..n {
        traj.z.push(state.z);
        traj.x.push(state.x);
        traj.y.push(state.y);
        traj.t.push(state.t);
        if l + 1 < n {
            state = euler_step(&state, params, h, (l + 1) as f64 * h);
            check_state(&state, l + 1)?;
        }
    }
    Ok(traj)
}

/// Class- and lead-keyed parameter sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamRegistry {
    entries: BTreeMap<(String, Lead), WaveParams>,
}

const BUILTIN_REGISTRY: &str = include_str!("../data/default_registry.json");

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped `default` class: one template entry per lead.
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN_REGISTRY, "builtin registry").expect("builtin registry parses")
    }

    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let raw: Vec<serde_json::Value> =
            serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        let mut reg = Self::new();
        for (i, value) in raw.into_iter().enumerate() {
            let name = describe_entry(i, &value);
            let params: WaveParams = serde_json::from_value(value)
                .map_err(|e| Error::parse(format!("{context}, {name}"), e))?;
            params
                .validate()
                .map_err(|e| Error::Invalid(format!("{name}: {e}")))?;
            reg.insert(params);
        }
        Ok(reg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn to_json_string(&self) -> String {
        let list: Vec<&WaveParams> = self.entries.values().collect();
        let mut s = serde_json::to_string_pretty(&list).expect("params serialise");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    /// Insert or replace the entry for `(params.class_label, params.lead)`.
    pub fn insert(&mut self, params: WaveParams) -> Option<WaveParams> {
        self.entries
            .insert((params.class_label.clone(), params.lead), params)
    }

    pub fn get(&self, class: &str, lead: Lead) -> Result<&WaveParams> {
        self.entries
            .get(&(class.to_string(), lead))
            .ok_or_else(|| Error::MissingEntry {
                class: class.to_string(),
                lead,
            })
    }

    /// Parameters for all twelve leads of a class, in [`Lead::ALL`] order.
    pub fn class_leads(&self, class: &str) -> Result<Vec<WaveParams>> {
        Lead::ALL
            .iter()
            .map(|&l| self.get(class, l).cloned())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &WaveParams> {
        self.entries.values()
    }

    pub fn classes(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.entries.keys().map(|(c, _)| c.as_str()).collect();
        out.dedup();
        out
    }
}

fn describe_entry(i: usize, v: &serde_json::Value) -> String {
    let class = v.get("class").and_then(|c| c.as_str()).unwrap_or("?");
    let lead = v.get("lead").and_then(|c| c.as_str()).unwrap_or("?");
    format!("entry {i} (class `{class}`, lead {lead})")
}
