//! Config-driven runs: parse a TOML scenario, integrate it, and emit a
//! time series, field snapshots and a JSON summary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controllers::{observe, ControlLaw, ControllerGains};
use crate::energy::{compute_energy, EnergyBreakdown, Quadrature};
use crate::error::{Error, Result};
use crate::integrator::{BeamDynamics, IntegratorConfig, Stepper};
use crate::models::{ModelOptions, SemiDiscreteSystem};
use crate::params::{GridSpec, MaterialParams};
use crate::state::{make_initial_state, BeamState, Field, InitialCondition, ModelKind, OFFSET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    /// Number of grid intervals.
    pub n: usize,
    /// Final nondimensional time.
    pub t_final: f64,
    /// Steps between time-series rows.
    pub output_every: usize,
    pub snapshot_times: Vec<f64>,
    pub output_dir: Option<PathBuf>,
    pub energy_quadrature: Quadrature,
    /// Decay fits use t in [fit_start * t_final, t_final], cut where the
    /// component first drops below fit_floor times its initial value.
    pub fit_start: f64,
    pub fit_floor: f64,
    pub params: MaterialParams,
    pub integrator: IntegratorConfig,
    pub gains: ControllerGains,
    pub initial: InitialCondition,
    pub options: ModelOptions,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::EbNonlinear,
            n: 60,
            t_final: 300.0,
            output_every: 100,
            snapshot_times: vec![0.0, 150.0, 300.0],
            output_dir: None,
            energy_quadrature: Quadrature::Scheme,
            fit_start: 0.1,
            fit_floor: 1e-8,
            params: MaterialParams::default(),
            integrator: IntegratorConfig::default(),
            gains: ControllerGains::default(),
            initial: InitialCondition::default(),
            options: ModelOptions::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses TOML text, applies `key.path=value` overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let config: ScenarioConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.grid().map_err(cfg)?;
        self.params.validate(self.model).map_err(cfg)?;
        self.gains.validate().map_err(cfg)?;
        self.integrator.validate().map_err(cfg)?;
        self.initial.validate().map_err(cfg)?;
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("t_final must be positive, got {}", self.t_final)));
        }
        if self.output_every == 0 {
            return Err(Error::Config("output_every must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.fit_start) {
            return Err(Error::Config("fit_start must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.fit_floor) {
            return Err(Error::Config("fit_floor must lie in [0, 1)".into()));
        }
        if let Some(t) = self.snapshot_times.iter().find(|t| !(0.0..=self.t_final).contains(*t)) {
            return Err(Error::Config(format!("snapshot time {t} outside [0, t_final]")));
        }
        if self.gains.continuous_law && !self.model.is_nonlinear() {
            return Err(Error::Config("continuous_law only applies to the nonlinear models".into()));
        }
        if self.gains.c_axial != 0.0 && !self.model.is_fully_dynamic() {
            return Err(Error::Config("c_axial only applies to the fully dynamic model".into()));
        }
        if self.options.kelvin_voigt && self.params.kv_alpha_tilde == 0.0 {
            return Err(Error::Config("kelvin_voigt needs params.kv_alpha_tilde > 0".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.integrator.dt).round() as usize
    }
}

/// Sets `a.b.c = value` in a TOML table; the value is parsed as TOML and
/// taken as a bare string if that fails.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    node.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// Field values and rates on every stored node, ghosts included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub fields: Vec<(Field, Vec<f64>, Vec<f64>)>,
}

impl Snapshot {
    pub fn from_state(state: &BeamState) -> Self {
        let fields = state
            .model
            .fields()
            .iter()
            .map(|&f| (f, state.value(f).unwrap().to_vec(), state.rate(f).unwrap().to_vec()))
            .collect();
        Self { t: state.t, x: state.grid.coordinates(), fields }
    }

    pub fn to_state(&self, model: ModelKind, grid: GridSpec) -> BeamState {
        let mut s = BeamState::zeros(model, grid);
        s.t = self.t;
        for (f, values, rates) in &self.fields {
            s.value_mut(*f).unwrap().copy_from_slice(values);
            s.rate_mut(*f).unwrap().copy_from_slice(rates);
        }
        s
    }

    fn csv(&self) -> String {
        let mut header = vec!["x".to_string()];
        header.extend(self.fields.iter().map(|(f, _, _)| f.name().to_string()));
        header.extend(self.fields.iter().map(|(f, _, _)| format!("{}_t", f.name())));
        let rows = self.x.iter().enumerate().map(|(k, x)| {
            let mut row = vec![*x];
            row.extend(self.fields.iter().map(|(_, v, _)| v[k]));
            row.extend(self.fields.iter().map(|(_, _, r)| r[k]));
            row
        });
        to_csv(&header, rows)
    }
}

fn to_csv(header: &[String], rows: impl IntoIterator<Item = impl AsRef<[f64]>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.as_ref().iter().map(|v| v.to_string())).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Shrinks `window` to end before the first sample below `floor * values[0]`;
/// past that point a component sits at its numerical floor.
pub fn floor_window(times: &[f64], values: &[f64], window: (f64, f64), floor: f64) -> (f64, f64) {
    let threshold = floor * values.first().copied().unwrap_or(0.0);
    let end = times
        .iter()
        .zip(values)
        .find(|(t, v)| **t >= window.0 && **v < threshold)
        .map_or(window.1, |(t, _)| t.min(window.1));
    (window.0, end)
}

/// Least-squares fits of log E against t and against log t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// E ~ exp(-rate t).
    pub rate: f64,
    /// E ~ t^(-exponent).
    pub exponent: f64,
    pub r2_exponential: f64,
    pub r2_polynomial: f64,
    pub samples: usize,
}

impl DecayFit {
    pub fn prefers_exponential(&self) -> bool {
        self.r2_exponential > self.r2_polynomial
    }
}

/// Fits the positive samples with t in `window`.
pub fn decay_fit(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    let (a, b) = window;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, e)| **t >= a && **t <= b && **t > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(t, e)| (*t, e.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Inconclusive(format!("decay window [{a}, {b}] holds {} usable samples", pts.len())));
    }
    let (slope_t, r2_t) = linear_fit(pts.iter().map(|&(t, y)| (t, y)));
    let (slope_l, r2_l) = linear_fit(pts.iter().map(|&(t, y)| (t.ln(), y)));
    Ok(DecayFit { rate: -slope_t, exponent: -slope_l, r2_exponential: r2_t, r2_polynomial: r2_l, samples: pts.len() })
}

/// Slope and R^2 of an ordinary least-squares line.
fn linear_fit(points: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub completed: bool,
    pub failure: Option<String>,
    pub steps: usize,
    pub t_end: f64,
    pub initial_energy: EnergyBreakdown,
    pub final_energy: EnergyBreakdown,
    /// E(T) / E(0).
    pub energy_ratio: f64,
    pub stretching_ratio: f64,
    /// Ratio of the axial energy (axial kinetic plus stretching).
    pub axial_ratio: f64,
    pub bending_ratio: f64,
    pub shear_ratio: f64,
    /// Energy removed by the filter and Kelvin-Voigt terms (positive).
    pub viscous_dissipation: f64,
    /// max_t |E(t) + dissipated(t) - E(0)| / E(0).
    pub balance_deviation: f64,
    /// Largest single-step energy increase relative to E(0).
    pub max_step_increase: f64,
    /// Time integrals of V^2, m^2 and g^2.
    pub effort_v: f64,
    pub effort_m: f64,
    pub effort_g: f64,
    pub max_newton_iterations: usize,
    pub decay_total: Option<DecayFit>,
    pub decay_stretching: Option<DecayFit>,
    pub decay_axial: Option<DecayFit>,
    pub decay_bending: Option<DecayFit>,
    pub decay_shear: Option<DecayFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ScenarioConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
    pub summary: RunSummary,
}

impl RunRecord {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn timeseries_csv(&self) -> String {
        to_csv(&self.columns, &self.rows)
    }

    /// Writes timeseries.csv, snapshot_*.csv, summary.json and config.toml.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("timeseries.csv"), self.timeseries_csv())?;
        for s in &self.snapshots {
            fs::write(dir.join(format!("snapshot_t{:.6}.csv", s.t)), s.csv())?;
        }
        let summary = serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join("summary.json"), summary)?;
        fs::write(dir.join("config.toml"), self.config.to_toml_string())?;
        Ok(())
    }
}

pub fn columns_for(model: ModelKind) -> Vec<String> {
    let mut c = vec!["t", "E_total", "E_kinetic", "E_stretch", "E_bend"];
    if model.is_timoshenko() {
        c.push("E_shear");
    }
    if model.is_fully_dynamic() {
        c.extend(["E_magnetic", "E_electric"]);
    }
    c.extend(["E_axial", "E_visc_dissip", "V", "m", "g"]);
    if model.is_fully_dynamic() {
        c.push("g1");
    }
    c.extend(["vdot_tip", "wdot_tip"]);
    if model.is_timoshenko() {
        c.push("psidot_tip");
    }
    if model.is_fully_dynamic() {
        c.push("pdot_tip");
    }
    c.into_iter().map(String::from).collect()
}

/// Integrates `config` and collects every output. Solver failures end the
/// run early and are reported through `summary.completed`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunRecord> {
    config.validate()?;
    let model = config.model;
    let grid = config.grid()?;
    let sys = SemiDiscreteSystem::new(model, &config.params, grid, config.options)?;
    let gains = config.gains;
    let dynamics = BeamDynamics::new(&sys, &gains);
    let mut stepper = Stepper::new(&dynamics, config.integrator)?;
    let coef = *sys.coefficients();
    let dt = config.integrator.dt;
    let steps = config.steps();
    let snapshot_steps: BTreeSet<usize> =
        config.snapshot_times.iter().map(|t| ((t / dt).round() as usize).min(steps)).collect();

    let s0 = make_initial_state(grid, &config.initial, model)?;
    let (mut q, mut qd) = sys.pack(&s0)?;

    struct Sample {
        state: BeamState,
        energy: EnergyBreakdown,
        v: f64,
        m: f64,
        g: f64,
        g1: f64,
        visc_power: f64,
    }
    let sample = |q: &[f64], qd: &[f64], t: f64| -> Result<Sample> {
        let state = dynamics.state(q, qd, t);
        let u = gains.controls(&state, false);
        let energy = compute_energy(&state, &coef, config.energy_quadrature)?;
        Ok(Sample { energy, v: u.v, m: u.m, g: u.g, g1: u.g1, visc_power: sys.viscous_power(&state), state })
    };

    let columns = columns_for(model);
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut dissipated = 0.0;
    let (mut effort_v, mut effort_m, mut effort_g) = (0.0, 0.0, 0.0);
    let mut max_iter = 0;

    let push_row = |rows: &mut Vec<Vec<f64>>, s: &Sample, dissipated: f64| {
        let e = &s.energy;
        let obs = observe(&s.state, &gains);
        let mut r = vec![s.state.t, e.total, e.kinetic, e.stretching, e.bending];
        if model.is_timoshenko() {
            r.push(e.shear);
        }
        if model.is_fully_dynamic() {
            r.extend([e.magnetic, e.electric]);
        }
        r.extend([e.axial(), dissipated, s.v, s.m, s.g]);
        if model.is_fully_dynamic() {
            r.push(s.g1);
        }
        r.extend([obs.vdot_tip, obs.wdot_tip]);
        if model.is_timoshenko() {
            r.push(obs.psidot_tip);
        }
        if model.is_fully_dynamic() {
            r.push(obs.pdot_tip);
        }
        rows.push(r);
    };

    let first = sample(&q, &qd, 0.0)?;
    let e0 = first.energy;
    push_row(&mut rows, &first, 0.0);
    if snapshot_steps.contains(&0) {
        snapshots.push(Snapshot::from_state(&first.state));
    }
    let mut prev = first;
    let mut balance_deviation = 0.0f64;
    let mut max_step_increase = f64::NEG_INFINITY;
    let mut failure = None;
    let mut done = 0;
    for k in 0..steps {
        let t = k as f64 * dt;
        if let Err(e) = stepper.advance(&mut q, &mut qd, t) {
            failure = Some(e.to_string());
            break;
        }
        max_iter = max_iter.max(stepper.last_iterations);
        let cur = sample(&q, &qd, (k + 1) as f64 * dt)?;
        dissipated -= 0.5 * dt * (prev.visc_power + cur.visc_power);
        effort_v += 0.5 * dt * (prev.v * prev.v + cur.v * cur.v);
        effort_m += 0.5 * dt * (prev.m * prev.m + cur.m * cur.m);
        effort_g += 0.5 * dt * (prev.g * prev.g + cur.g * cur.g);
        if e0.total > 0.0 {
            max_step_increase = max_step_increase.max((cur.energy.total - prev.energy.total) / e0.total);
            balance_deviation = balance_deviation.max((cur.energy.total + dissipated - e0.total).abs() / e0.total);
        }
        done = k + 1;
        let snap = snapshot_steps.contains(&done);
        if done % config.output_every == 0 || done == steps || snap {
            push_row(&mut rows, &cur, dissipated);
        }
        if snap {
            snapshots.push(Snapshot::from_state(&cur.state));
        }
        prev = cur;
    }
    if failure.is_some() && rows.last().map(|r| r[0]) != Some(prev.state.t) {
        push_row(&mut rows, &prev, dissipated);
    }

    let ef = prev.energy;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let window = (config.fit_start * config.t_final, config.t_final);
    let fit = |name: &str| {
        let k = columns.iter().position(|c| c == name)?;
        let vals: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        decay_fit(&times, &vals, floor_window(&times, &vals, window, config.fit_floor)).ok()
    };
    let summary = RunSummary {
        completed: failure.is_none(),
        failure,
        steps: done,
        t_end: prev.state.t,
        initial_energy: e0,
        final_energy: ef,
        energy_ratio: ratio(ef.total, e0.total),
        stretching_ratio: ratio(ef.stretching, e0.stretching),
        axial_ratio: ratio(ef.axial(), e0.axial()),
        bending_ratio: ratio(ef.bending, e0.bending),
        shear_ratio: ratio(ef.shear, e0.shear),
        viscous_dissipation: dissipated,
        balance_deviation,
        max_step_increase: if done > 0 { max_step_increase } else { 0.0 },
        effort_v,
        effort_m,
        effort_g,
        max_newton_iterations: max_iter,
        decay_total: fit("E_total"),
        decay_stretching: fit("E_stretch"),
        decay_axial: fit("E_axial"),
        decay_bending: fit("E_bend"),
        decay_shear: if model.is_timoshenko() { fit("E_shear") } else { None },
    };
    Ok(RunRecord { config: config.clone(), columns, rows, snapshots, summary })
}

/// Runs `config` and writes its outputs to `dir` (or `config.output_dir`).
pub fn run_to_dir(config: &ScenarioConfig, dir: Option<&Path>) -> Result<RunRecord> {
    let record = run_scenario(config)?;
    if let Some(dir) = dir.or(config.output_dir.as_deref()) {
        record.write(dir)?;
    }
    Ok(record)
}

/// Recomputes the energy of each snapshot.
pub fn snapshot_energies(record: &RunRecord) -> Result<Vec<(f64, EnergyBreakdown)>> {
    let grid = record.config.grid()?;
    let coef = record.config.params.coefficients();
    record
        .snapshots
        .iter()
        .map(|s| {
            let state = s.to_state(record.config.model, grid);
            Ok((s.t, compute_energy(&state, &coef, record.config.energy_quadrature)?))
        })
        .collect()
}

/// Tip displacement w_N of a snapshot.
pub fn tip_value(s: &Snapshot, field: Field, n: usize) -> Option<f64> {
    s.fields.iter().find(|(f, _, _)| *f == field).map(|(_, v, _)| v[n + OFFSET])
}
