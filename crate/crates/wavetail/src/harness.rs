//! Scenario configuration, pipeline stages and artifact persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{causal_extent, convergence_study, evolve, CauchyData, EvolveParams, GridMeta, TimeSeries, CFL_LIMIT};
use crate::grid::Grid1D;
use crate::metric::{check_assumptions, normalize, MetricPreset, MetricSpec, NormalizedMetric};
use crate::operator::{build_operator, radial_reduce, OperatorCoeffs, RadialOperator};
use crate::par::ExecMode;
use crate::poisson::{zero_resolvent_expand, BootstrapParams};
use crate::resolvent::{geometric_taus, low_freq_scan, z_source, ResolventSolver, Source};
use crate::symbolic::profile::{bump_pulse, windowed_gaussian};
use crate::symbolic::{chi_below, RadialProfile, Verdict};
use crate::synthesis::{transform, SynthesisPlan};
use crate::tails::{decay_report, fit_tail, target_exponent, DecayScenario, Observable, RowStatus};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "WAVETAIL_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "wavetail-out";
pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("i/o error at {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl HarnessError {
    /// 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Stage { .. } => 3,
            _ => 2,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Validation { field: field.into(), reason: reason.into() }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    CheckMetric,
    Normalize,
    BuildOperator,
    Evolve,
    Resolvent,
    ExpandR0,
    LowfreqScan,
    Synthesize,
    FitTail,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::CheckMetric,
        Stage::Normalize,
        Stage::BuildOperator,
        Stage::Evolve,
        Stage::Resolvent,
        Stage::ExpandR0,
        Stage::LowfreqScan,
        Stage::Synthesize,
        Stage::FitTail,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::CheckMetric => "check-metric",
            Stage::Normalize => "normalize",
            Stage::BuildOperator => "build-operator",
            Stage::Evolve => "evolve",
            Stage::Resolvent => "resolvent",
            Stage::ExpandR0 => "expand-r0",
            Stage::LowfreqScan => "lowfreq-scan",
            Stage::Synthesize => "synthesize",
            Stage::FitTail => "fit-tail",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// `flat`, `price_k1`, `family_k<kappa>` or `custom`.
    pub preset: String,
    pub mass: f64,
    /// Family amplitude; defaults to `0.1 * 8^kappa`.
    pub eps: Option<f64>,
    /// Profile table for `custom`.
    pub path: Option<String>,
    /// Falloff order for `custom`.
    pub kappa: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: f64,
    pub cfl: f64,
    /// Evolution extent; defaults to the causality margin.
    pub r_max: Option<f64>,
    pub order: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileFamily {
    Bump,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub profile: ProfileFamily,
    pub support: [f64; 2],
    /// `u1 = u0` when set, otherwise `u1 = 0`.
    pub moving: bool,
    pub harmonics: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub t_max: f64,
    pub observers: Vec<f64>,
    pub output_every: f64,
    /// Tail fitting window.
    pub window: [f64; 2],
    /// Window of the three-grid convergence study attached to reports.
    pub convergence_window: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventConfig {
    pub lambda: u32,
    pub taus: Vec<f64>,
    /// Shift of every `tau` into the lower half plane (`<= 0`).
    pub tau_im: f64,
    pub h: f64,
    pub r_max: f64,
    /// Node stride of the written profiles.
    pub stride: usize,
    pub bootstrap_ds: f64,
    pub bootstrap_per_doubling: f64,
    pub bootstrap_r_max: f64,
    pub bootstrap_theta: f64,
    pub bootstrap_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub t_max: f64,
    pub tau_max: f64,
    pub n_tau: usize,
    pub taper_from: f64,
    pub damping: Option<f64>,
    pub split_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub parallel: bool,
    /// Artifact directory; defaults to `$WAVETAIL_OUTPUT_ROOT/<name>`.
    pub output_dir: Option<String>,
    pub metric: MetricConfig,
    pub grid: GridConfig,
    pub data: DataConfig,
    pub run: RunConfig,
    pub resolvent: ResolventConfig,
    pub synthesis: SynthesisConfig,
}

impl ScenarioConfig {
    /// Defaults for a named metric preset.
    pub fn preset(name: &str) -> Self {
        ScenarioConfig {
            name: name.to_string(),
            parallel: true,
            output_dir: None,
            metric: MetricConfig { preset: name.to_string(), mass: 0.1, eps: None, path: None, kappa: None },
            grid: GridConfig { h: 0.05, cfl: 0.5, r_max: None, order: 4 },
            data: DataConfig { profile: ProfileFamily::Bump, support: [6.0, 10.0], moving: true, harmonics: vec![0] },
            run: RunConfig {
                t_max: 1500.0,
                observers: vec![10.0, 20.0],
                output_every: 0.5,
                window: [400.0, 1400.0],
                convergence_window: [20.0, 80.0],
            },
            resolvent: ResolventConfig {
                lambda: 1,
                taus: geometric_taus(0.25, 13),
                tau_im: 0.0,
                h: 0.05,
                r_max: 512.0,
                stride: 10,
                bootstrap_ds: 0.01,
                bootstrap_per_doubling: 256.0,
                bootstrap_r_max: 4096.0,
                bootstrap_theta: 0.5,
                bootstrap_tol: 1e-13,
            },
            synthesis: SynthesisConfig {
                t_max: 50.0,
                tau_max: 16.0,
                n_tau: 3201,
                taper_from: 0.5,
                damping: None,
                split_scale: 1.0,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text)
    }

    /// TOML with every float written to 17 significant digits.
    pub fn to_toml(&self) -> String {
        let value = toml::Table::try_from(self).expect("config is a table");
        emit_table(&value)
    }

    pub fn mode(&self) -> ExecMode {
        if self.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    pub fn metric_preset(&self) -> Result<MetricPreset, HarnessError> {
        let m = &self.metric;
        if m.preset == "custom" {
            let path = m.path.clone().ok_or_else(|| invalid("metric.path", "required for the custom preset"))?;
            let kappa = m.kappa.ok_or_else(|| invalid("metric.kappa", "required for the custom preset"))?;
            return Ok(MetricPreset::Custom { path, kappa });
        }
        let probe = MetricPreset::from_name(&m.preset, m.mass, 0.0)
            .ok_or_else(|| invalid("metric.preset", format!("unknown preset `{}`", m.preset)))?;
        Ok(match probe {
            MetricPreset::Family { kappa, .. } => {
                MetricPreset::Family { kappa, eps: m.eps.unwrap_or_else(|| MetricPreset::default_eps(kappa)) }
            }
            other => other,
        })
    }

    /// Falloff order implied by the preset (`None` for flat).
    pub fn kappa(&self) -> Result<Option<u32>, HarnessError> {
        Ok(match self.metric_preset()? {
            MetricPreset::Flat => None,
            MetricPreset::PriceK1 { .. } => Some(1),
            MetricPreset::Family { kappa, .. } | MetricPreset::Custom { kappa, .. } => Some(kappa),
        })
    }

    pub fn evolution_r_max(&self) -> f64 {
        self.grid.r_max.unwrap_or_else(|| causal_extent(self.run.t_max, self.data.support[1]))
    }

    pub fn output_path(&self) -> PathBuf {
        match &self.output_dir {
            Some(d) => PathBuf::from(d),
            None => {
                let root = std::env::var(OUTPUT_ROOT_ENV).unwrap_or_else(|_| DEFAULT_OUTPUT_ROOT.to_string());
                Path::new(&root).join(&self.name)
            }
        }
    }

    /// Every field is checked here, before any computation.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let pos = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} must be positive and finite")))
            }
        };
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a non-empty plain file name"));
        }
        let preset = self.metric_preset()?;
        if let MetricPreset::PriceK1 { mass } = preset {
            pos("metric.mass", mass)?;
        }
        if let MetricPreset::Family { eps, .. } = preset {
            pos("metric.eps", eps)?;
        }
        let g = &self.grid;
        pos("grid.h", g.h)?;
        pos("grid.cfl", g.cfl)?;
        if g.cfl > CFL_LIMIT {
            return Err(invalid("grid.cfl", format!("{} exceeds the stability limit {CFL_LIMIT}", g.cfl)));
        }
        if g.order != 4 {
            return Err(invalid("grid.order", format!("only order 4 is implemented, got {}", g.order)));
        }
        let d = &self.data;
        let [lo, hi] = d.support;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(invalid("data.support", format!("[{lo}, {hi}] is not an interval in r >= 0")));
        }
        if d.harmonics.is_empty() {
            return Err(invalid("data.harmonics", "empty"));
        }
        let r = &self.run;
        pos("run.t_max", r.t_max)?;
        pos("run.output_every", r.output_every)?;
        if r.output_every > r.t_max {
            return Err(invalid("run.output_every", "longer than run.t_max"));
        }
        let needed = causal_extent(r.t_max, hi);
        if let Some(rm) = g.r_max {
            if rm < needed {
                return Err(invalid("grid.r_max", format!("{rm} is inside the causality margin {needed}")));
            }
        }
        let r_max = self.evolution_r_max();
        if r.observers.is_empty() {
            return Err(invalid("run.observers", "empty"));
        }
        for &o in &r.observers {
            if !(o > 0.0 && o <= r_max) {
                return Err(invalid("run.observers", format!("{o} lies outside (0, {r_max}]")));
            }
        }
        for (field, [a, b]) in [("run.window", r.window), ("run.convergence_window", r.convergence_window)] {
            if !(a >= 0.0 && b > a) {
                return Err(invalid(field, format!("[{a}, {b}] is not an increasing window")));
            }
        }
        if r.window[1] > r.t_max {
            return Err(invalid("run.window", format!("ends after run.t_max = {}", r.t_max)));
        }
        let s = &self.resolvent;
        let kappa = self.kappa()?.unwrap_or(0);
        if s.lambda < 1 || s.lambda > kappa + 1 {
            return Err(invalid("resolvent.lambda", format!("{} outside 1..={}", s.lambda, kappa + 1)));
        }
        if s.taus.is_empty() || s.taus.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(invalid("resolvent.taus", "need a non-empty list in (0, 1]"));
        }
        if !(s.tau_im <= 0.0) {
            return Err(invalid("resolvent.tau_im", "must be <= 0 (lower half plane)"));
        }
        pos("resolvent.h", s.h)?;
        pos("resolvent.r_max", s.r_max)?;
        if s.stride == 0 {
            return Err(invalid("resolvent.stride", "must be at least 1"));
        }
        pos("resolvent.bootstrap_ds", s.bootstrap_ds)?;
        pos("resolvent.bootstrap_per_doubling", s.bootstrap_per_doubling)?;
        pos("resolvent.bootstrap_r_max", s.bootstrap_r_max)?;
        if !(s.bootstrap_theta > 0.0 && s.bootstrap_theta <= 1.0) {
            return Err(invalid("resolvent.bootstrap_theta", "must lie in (0, 1]"));
        }
        pos("resolvent.bootstrap_tol", s.bootstrap_tol)?;
        let y = &self.synthesis;
        pos("synthesis.t_max", y.t_max)?;
        pos("synthesis.tau_max", y.tau_max)?;
        if y.n_tau < 3 {
            return Err(invalid("synthesis.n_tau", "need at least 3 nodes"));
        }
        if !(y.taper_from > 0.0 && y.taper_from < 1.0) {
            return Err(invalid("synthesis.taper_from", "must lie in (0, 1)"));
        }
        if let Some(dm) = y.damping {
            if !(dm >= 0.0 && dm.is_finite()) {
                return Err(invalid("synthesis.damping", "must be >= 0"));
            }
        }
        pos("synthesis.split_scale", y.split_scale)?;
        let dtau = y.tau_max / (y.n_tau - 1) as f64;
        if y.t_max * dtau > std::f64::consts::PI {
            return Err(invalid("synthesis.n_tau", format!("frequency step {dtau} under-resolves t = {}", y.t_max)));
        }
        Ok(())
    }
}

/// Floats with 17 significant digits; valid TOML.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn emit_value(v: &toml::Value) -> String {
    match v {
        toml::Value::Float(x) => fmt_f64(*x),
        toml::Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(emit_value).collect();
            format!("[{}]", parts.join(", "))
        }
        toml::Value::Table(t) => {
            let parts: Vec<String> = t.iter().map(|(k, v)| format!("{} = {}", emit_key(k), emit_value(v))).collect();
            format!("{{ {} }}", parts.join(", "))
        }
        other => other.to_string(),
    }
}

fn emit_key(k: &str) -> String {
    if !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        k.to_string()
    } else {
        toml::Value::String(k.to_string()).to_string()
    }
}

fn emit_table(t: &toml::Table) -> String {
    let mut out = String::new();
    emit_into(t, "", &mut out);
    out
}

fn emit_into(t: &toml::Table, prefix: &str, out: &mut String) {
    for (k, v) in t.iter().filter(|(_, v)| !v.is_table()) {
        let _ = writeln!(out, "{} = {}", emit_key(k), emit_value(v));
    }
    for (k, v) in t.iter() {
        if let toml::Value::Table(sub) = v {
            let path = if prefix.is_empty() { emit_key(k) } else { format!("{prefix}.{}", emit_key(k)) };
            let _ = writeln!(out, "\n[{path}]");
            emit_into(sub, &path, out);
        }
    }
}

/// Files written by one stage run.
#[derive(Clone, Debug, Default)]
pub struct ArtifactDir {
    pub path: PathBuf,
    /// File name and byte count.
    pub files: BTreeMap<String, u64>,
    /// Derived constants recorded in the manifest.
    pub derived: BTreeMap<String, f64>,
    pub notes: BTreeMap<String, String>,
}

impl ArtifactDir {
    fn create(path: PathBuf) -> Result<Self, HarnessError> {
        fs::create_dir_all(&path).map_err(|e| io_err(&path, e))?;
        Ok(ArtifactDir { path, ..Default::default() })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let p = self.path.join(name);
        let mut f = fs::File::create(&p).map_err(|e| io_err(&p, e))?;
        f.write_all(bytes).map_err(|e| io_err(&p, e))?;
        self.files.insert(name.to_string(), bytes.len() as u64);
        Ok(())
    }

    /// CSV with a `# wavetail-csv schema=N kind=...` first line.
    pub fn write_csv(&mut self, name: &str, kind: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), HarnessError> {
        let bytes = csv_bytes(kind, header, rows);
        self.put(name, &bytes)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<(), HarnessError> {
        self.put(name, text.as_bytes())
    }

    fn derive(&mut self, key: &str, v: f64) {
        self.derived.insert(key.to_string(), v);
    }

    fn note(&mut self, key: &str, v: impl Into<String>) {
        self.notes.insert(key.to_string(), v.into());
    }
}

pub fn csv_bytes(kind: &str, header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut buf = format!("# wavetail-csv schema={CSV_SCHEMA_VERSION} kind={kind}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(r).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    buf
}

fn nums(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|&x| fmt_f64(x)).collect()
}

pub fn series_rows(s: &TimeSeries) -> Vec<Vec<String>> {
    (0..s.times.len())
        .map(|k| {
            let e = s.energy_trace.get(k).copied().unwrap_or(f64::NAN);
            nums(&[s.times[k], s.u_values[k], s.dtu_values[k], e])
        })
        .collect()
}

pub const SERIES_HEADER: [&str; 4] = ["t", "u", "dtu", "energy"];

/// Read a series written by the `evolve` stage.
pub fn read_series_csv(path: &Path, observer_r: f64) -> Result<TimeSeries, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.starts_with("# wavetail-csv schema=1 kind=series") => {}
        _ => return Err(invalid("series", format!("{} is not a schema 1 series CSV", path.display()))),
    }
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut s = TimeSeries {
        observer_r,
        times: vec![],
        u_values: vec![],
        dtu_values: vec![],
        energy_trace: vec![],
        grid_meta: GridMeta { h: 0.0, dt: 0.0, cfl: 0.0, order: 4, nodes: 0, r_max: 0.0 },
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| invalid("series", e.to_string()))?;
        let f = |i: usize| -> Result<f64, HarnessError> {
            rec.get(i)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| invalid("series", format!("bad field {i} in {}", path.display())))
        };
        s.times.push(f(0)?);
        s.u_values.push(f(1)?);
        s.dtu_values.push(f(2)?);
        s.energy_trace.push(f(3)?);
    }
    Ok(s)
}

fn stage_err(stage: Stage) -> impl Fn(&dyn std::fmt::Display) -> HarnessError {
    move |e| HarnessError::Stage { stage, message: e.to_string() }
}

struct Pipeline<'a> {
    cfg: &'a ScenarioConfig,
    stage: Stage,
}

impl Pipeline<'_> {
    fn fail(&self, e: impl std::fmt::Display) -> HarnessError {
        stage_err(self.stage)(&e)
    }

    fn spec(&self) -> Result<MetricSpec, HarnessError> {
        MetricSpec::from_preset(&self.cfg.metric_preset()?).map_err(|e| self.fail(e))
    }

    fn normalized(&self) -> Result<NormalizedMetric, HarnessError> {
        normalize(&self.spec()?).map_err(|e| self.fail(e))
    }

    fn coeffs(&self) -> Result<OperatorCoeffs, HarnessError> {
        build_operator(&self.normalized()?).map_err(|e| self.fail(e))
    }

    fn data(&self, ell: u32) -> CauchyData {
        let d = &self.cfg.data;
        let [lo, hi] = d.support;
        let u0 = match d.profile {
            ProfileFamily::Bump => bump_pulse(lo, hi),
            ProfileFamily::Gaussian => windowed_gaussian(0.5 * (lo + hi), (hi - lo) / 8.0, lo, hi),
        };
        let u1 = if d.moving { u0.clone() } else { RadialProfile::zero() };
        CauchyData::new(ell, u0, u1, (lo, hi))
    }

    fn evolve_params(&self) -> EvolveParams {
        let g = &self.cfg.grid;
        EvolveParams {
            h: g.h,
            cfl: g.cfl,
            output_every: self.cfg.run.output_every,
            r_max: g.r_max,
            mode: self.cfg.mode(),
        }
    }

    fn radial(&self, oc: &OperatorCoeffs, ell: u32) -> RadialOperator {
        radial_reduce(oc, ell)
    }
}

fn series_name(ell: u32, r: f64) -> String {
    format!("series_l{ell}_r{}.csv", fmt_compact(r))
}

fn fmt_compact(r: f64) -> String {
    let s = format!("{r}");
    s.replace('.', "p")
}

fn record_grid(art: &mut ArtifactDir, prefix: &str, m: &GridMeta) {
    art.derive(&format!("{prefix}.h"), m.h);
    art.derive(&format!("{prefix}.dt"), m.dt);
    art.derive(&format!("{prefix}.cfl"), m.cfl);
    art.derive(&format!("{prefix}.nodes"), m.nodes as f64);
    art.derive(&format!("{prefix}.r_max"), m.r_max);
}

/// Run one stage; validation happens before anything is computed or
/// written. The manifest is written first with `status = "incomplete"` and
/// rewritten on success.
pub fn run_scenario(cfg: &ScenarioConfig, stage: Stage) -> Result<ArtifactDir, HarnessError> {
    cfg.validate()?;
    let mut art = ArtifactDir::create(cfg.output_path())?;
    write_manifest(cfg, stage, &art, false)?;
    let p = Pipeline { cfg, stage };
    let res = match stage {
        Stage::CheckMetric => check_metric_stage(&p, &mut art),
        Stage::Normalize => normalize_stage(&p, &mut art),
        Stage::BuildOperator => operator_stage(&p, &mut art),
        Stage::Evolve => evolve_stage(&p, &mut art).map(|_| ()),
        Stage::Resolvent => resolvent_stage(&p, &mut art),
        Stage::ExpandR0 => expand_stage(&p, &mut art),
        Stage::LowfreqScan => lowfreq_stage(&p, &mut art),
        Stage::Synthesize => synthesize_stage(&p, &mut art),
        Stage::FitTail => fit_stage(&p, &mut art),
        Stage::Report => report_stage(&p, &mut art),
    };
    match res {
        Ok(()) => {
            write_manifest(cfg, stage, &art, true)?;
            Ok(art)
        }
        Err(e) => {
            art.note("error", e.to_string());
            write_manifest(cfg, stage, &art, false)?;
            Err(e)
        }
    }
}

fn write_manifest(cfg: &ScenarioConfig, stage: Stage, art: &ArtifactDir, complete: bool) -> Result<(), HarnessError> {
    let mut t = toml::Table::new();
    let s = |v: &str| toml::Value::String(v.to_string());
    t.insert("status".into(), s(if complete { "complete" } else { "incomplete" }));
    t.insert("stage".into(), s(stage.name()));
    t.insert("crate_version".into(), s(env!("CARGO_PKG_VERSION")));
    t.insert("csv_schema".into(), toml::Value::Integer(CSV_SCHEMA_VERSION as i64));
    t.insert("parallel_feature".into(), toml::Value::Boolean(cfg!(feature = "parallel")));
    let mut conv = toml::Table::new();
    conv.insert("transform".into(), s("u_hat(tau) = int_0^inf e^{-i t tau} u(t) dt, Im tau <= 0"));
    conv.insert("outgoing".into(), s("v ~ e^{-i tau r} / r"));
    conv.insert("inverse".into(), s("u(t) = (2/pi) Re int_0^inf u_hat(tau) cos(t tau) d tau"));
    t.insert("conventions".into(), toml::Value::Table(conv));
    t.insert("config".into(), toml::Value::Table(toml::Table::try_from(cfg).expect("config is a table")));
    let derived: toml::Table = art.derived.iter().map(|(k, v)| (k.clone(), toml::Value::Float(*v))).collect();
    t.insert("derived".into(), toml::Value::Table(derived));
    let files: toml::Table = art.files.iter().map(|(k, v)| (k.clone(), toml::Value::Integer(*v as i64))).collect();
    t.insert("files".into(), toml::Value::Table(files));
    let notes: toml::Table = art.notes.iter().map(|(k, v)| (k.clone(), s(v))).collect();
    t.insert("notes".into(), toml::Value::Table(notes));
    let p = art.path.join(MANIFEST_NAME);
    fs::write(&p, emit_table(&t)).map_err(|e| io_err(&p, e))
}

fn check_metric_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<(), HarnessError> {
    let rep = check_assumptions(&p.spec()?).map_err(|e| p.fail(e))?;
    let mut rows = vec![
        vec!["stationary".to_string(), rep.stationary.to_string()],
        vec!["spacelike_slices".to_string(), rep.spacelike_slices.to_string()],
    ];
    for (name, v) in &rep.falloff {
        rows.push(vec![format!("falloff_{name}"), (*v == Verdict::Consistent).to_string()]);
    }
    art.write_csv("metric_check.csv", "metric-check", &["check", "pass"], &rows)?;
    let mut text = String::new();
    for r in &rows {
        let _ = writeln!(text, "{:<24} {}", r[0], if r[1] == "true" { "pass" } else { "FAIL" });
    }
    if let Some(r) = rep.first_failure {
        let _ = writeln!(text, "first failure at r = {}", fmt_f64(r));
    }
    let _ = writeln!(text, "all checks {}", if rep.all_pass() { "pass" } else { "do not pass" });
    art.write_text("metric_check.txt", &text)?;
    art.derive("metric.all_pass", if rep.all_pass() { 1.0 } else { 0.0 });
    if rep.all_pass() {
        Ok(())
    } else {
        Err(p.fail("metric assumptions fail; see metric_check.txt"))
    }
}

fn normalize_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<(), HarnessError> {
    let nm = p.normalized()?;
    let (tr, sum) = nm.residuals();
    art.derive("normalize.radius", nm.radius);
    art.derive("normalize.compensator", nm.compensator);
    art.derive("normalize.residual_htr", tr);
    art.derive("normalize.residual_htt_plus_hrr", sum);
    let rho: Vec<f64> = (0..=400).map(|k| 0.25 * k as f64).collect();
    let r = nm.radii_at(&rho);
    let rows: Vec<Vec<String>> = rho.iter().zip(&r).map(|(&x, &y)| nums(&[x, y, nm.q.eval(y)])).collect();
    art.write_csv("normalization.csv", "normalization", &["rho", "r", "q"], &rows)
}

fn operator_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<(), HarnessError> {
    let oc = p.coeffs()?;
    let grid = Grid1D::uniform(p.cfg.grid.h, p.cfg.evolution_r_max().min(200.0)).map_err(|e| p.fail(e))?;
    for &ell in &p.cfg.data.harmonics {
        let rop = p.radial(&oc, ell);
        let table = rop.coefficient_table(&grid).map_err(|e| p.fail(e))?;
        let rows: Vec<Vec<String>> = table.iter().map(|row| nums(row)).collect();
        art.write_csv(
            &format!("operator_l{ell}.csv"),
            "operator",
            &["r", "a2", "a1", "w", "c", "b1"],
            &rows,
        )?;
    }
    art.derive("operator.kappa", oc.kappa as f64);
    art.derive("operator.table_nodes", grid.len() as f64);
    Ok(())
}

fn evolve_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<Vec<(u32, Vec<TimeSeries>)>, HarnessError> {
    let oc = p.coeffs()?;
    let params = p.evolve_params();
    let mut all = Vec::new();
    for &ell in &p.cfg.data.harmonics {
        let rop = p.radial(&oc, ell);
        let series = evolve(&rop, &p.data(ell), p.cfg.run.t_max, &p.cfg.run.observers, &params).map_err(|e| p.fail(e))?;
        for s in &series {
            art.write_csv(&series_name(ell, s.observer_r), "series", &SERIES_HEADER, &series_rows(s))?;
        }
        if let Some(s) = series.first() {
            record_grid(art, &format!("evolve.l{ell}"), &s.grid_meta);
        }
        all.push((ell, series));
    }
    Ok(all)
}

fn resolvent_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<(), HarnessError> {
    let s = &p.cfg.resolvent;
    let oc = p.coeffs()?;
    let grid = Grid1D::uniform(s.h, s.r_max).map_err(|e| p.fail(e))?;
    let src = Source::Profile(z_source(s.lambda));
    let mut summary = Vec::new();
    let mut profiles = Vec::new();
    for &ell in &p.cfg.data.harmonics {
        let solver = ResolventSolver::new(&p.radial(&oc, ell), &grid).map_err(|e| p.fail(e))?;
        for &t in &s.taus {
            let tau = num_complex::Complex64::new(t, s.tau_im);
            let sol = solver.solve(tau, &src).map_err(|e| p.fail(e))?;
            let mut row = vec![ell.to_string()];
            row.extend(nums(&[t, s.tau_im, sol.radiation_residual, sol.defect, sol.le_tau_norm]));
            summary.push(row);
            for i in (0..grid.len()).step_by(s.stride) {
                let mut row = vec![ell.to_string()];
                row.extend(nums(&[t, grid.r()[i], sol.v[i].re, sol.v[i].im]));
                profiles.push(row);
            }
        }
    }
    art.derive("resolvent.nodes", grid.len() as f64);
    art.write_csv(
        "resolvent_summary.csv",
        "resolvent-summary",
        &["ell", "tau_re", "tau_im", "radiation_residual", "defect", "le_tau_norm"],
        &summary,
    )?;
    art.write_csv("resolvent_profiles.csv", "resolvent-profile", &["ell", "tau_re", "r", "v_re", "v_im"], &profiles)
}

fn bootstrap_grid(p: &Pipeline) -> Result<Grid1D, HarnessError> {
    let s = &p.cfg.resolvent;
    Grid1D::sinh(s.bootstrap_ds, s.bootstrap_per_doubling, s.bootstrap_r_max).map_err(|e| p.fail(e))
}

fn expand_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<(), HarnessError> {
    let s = &p.cfg.resolvent;
    let rop = p.radial(&p.coeffs()?, 0);
    let grid = bootstrap_grid(p)?;
    let params = BootstrapParams { theta: s.bootstrap_theta, tol: s.bootstrap_tol, ..Default::default() };
    let ex = zero_resolvent_expand(&rop, &z_source(s.lambda), s.lambda, &grid, &params).map_err(|e| p.fail(e))?;
    if let Some(&c0) = ex.c.first() {
        art.derive("expand.c0", c0);
    }
    art.derive("expand.iterations", ex.report.iterations as f64);
    art.derive("expand.contraction", ex.report.contraction);
    art.derive("expand.final_residual", ex.report.final_residual);
    art.derive("expand.r_split", ex.report.r_split);
    art.derive("expand.nodes", grid.len() as f64);
    art.note("expand.class_of_e0", ex.class_of_e0.to_string());
    let rows: Vec<Vec<String>> = (0..grid.len())
        .step_by(s.stride)
        .map(|i| {
            let e0 = ex.e.first().map_or(0.0, |e| e[i]);
            nums(&[grid.r()[i], ex.v[i], e0, ex.d[i], ex.q[i]])
        })
        .collect();
    art.write_csv("expansion_r0.csv", "expansion-r0", &["r", "v", "e0", "d", "q"], &rows)
}

fn lowfreq_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<(), HarnessError> {
    let s = &p.cfg.resolvent;
    let rop = p.radial(&p.coeffs()?, 0);
    let grid = Grid1D::uniform(s.h, s.r_max).map_err(|e| p.fail(e))?;
    let rep = low_freq_scan(&rop, &z_source(s.lambda), s.lambda, &s.taus, &grid, p.cfg.mode()).map_err(|e| p.fail(e))?;
    art.derive("lowfreq.fitted_slope", rep.fitted_slope);
    art.derive("lowfreq.nodes", grid.len() as f64);
    let rows: Vec<Vec<String>> = (0..rep.tau_grid.len())
        .map(|k| nums(&[rep.tau_grid[k], rep.error_norms[k], rep.radiation_residuals[k], rep.le_tau_norms[k]]))
        .collect();
    art.write_csv("lowfreq.csv", "lowfreq", &["tau", "error_norm", "radiation_residual", "le_tau_norm"], &rows)?;
    if !rep.epsilon_profile.is_empty() {
        let rows: Vec<Vec<String>> =
            rep.epsilon_profile.iter().map(|f| nums(&[f.r, f.slope, f.intercept, f.r_squared])).collect();
        art.write_csv("log_template.csv", "log-template", &["r", "slope", "intercept", "r_squared"], &rows)?;
    }
    Ok(())
}

fn synthesize_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<(), HarnessError> {
    let y = &p.cfg.synthesis;
    let oc = p.coeffs()?;
    let r_obs = p.cfg.run.observers.iter().cloned().fold(0.0, f64::max);
    let mut plan = SynthesisPlan::causal(y.t_max, r_obs, p.cfg.data.support[1], p.cfg.grid.h).map_err(|e| p.fail(e))?;
    plan.tau_max = y.tau_max;
    plan.n_tau = y.n_tau;
    plan.taper_from = y.taper_from;
    plan.damping = y.damping;
    plan.split_scale = y.split_scale;
    plan.mode = p.cfg.mode();
    let n_t = (y.t_max / p.cfg.run.output_every).round() as usize;
    let times: Vec<f64> = (0..=n_t).map(|k| k as f64 * p.cfg.run.output_every).collect();
    let scale = y.split_scale;
    for &ell in &p.cfg.data.harmonics {
        let spec = transform(&p.radial(&oc, ell), &p.data(ell), &p.cfg.run.observers, &plan).map_err(|e| p.fail(e))?;
        art.derive(&format!("synthesis.l{ell}.plancherel_gap"), spec.plancherel_gap);
        for (k, &r) in spec.observers.iter().enumerate() {
            let eval = |f: &dyn Fn(f64) -> f64| spec.evaluate(k, &times, f).map_err(|e| p.fail(e));
            let (u, du) = eval(&|_| 1.0)?;
            let (lo, _) = eval(&|t| chi_below(t, scale))?;
            let (hi, _) = eval(&|t| 1.0 - chi_below(t, scale))?;
            let rows: Vec<Vec<String>> =
                (0..times.len()).map(|j| nums(&[times[j], u[j], du[j], lo[j], hi[j]])).collect();
            art.write_csv(
                &format!("synthesis_l{ell}_r{}.csv", fmt_compact(r)),
                "synthesis",
                &["t", "u", "dtu", "u_low", "u_high"],
                &rows,
            )?;
        }
    }
    art.derive("synthesis.dtau", plan.dtau());
    art.derive("synthesis.r_max", plan.grid.r_max());
    art.derive("synthesis.nodes", plan.grid.len() as f64);
    Ok(())
}

fn fit_rows(series: &[(u32, Vec<TimeSeries>)], kappa: u32, window: (f64, f64), art: &mut ArtifactDir, p: &Pipeline) -> Result<(), HarnessError> {
    let mut summary = Vec::new();
    for (ell, list) in series {
        for s in list {
            for obs in [Observable::U, Observable::DtU] {
                let fit = fit_tail(s, obs, window).map_err(|e| p.fail(e))?.with_target(target_exponent(kappa, obs));
                let tag = match obs {
                    Observable::U => "u",
                    Observable::DtU => "dtu",
                };
                let rows: Vec<Vec<String>> = fit.lpi_curve.iter().map(|&(t, q)| nums(&[t, q])).collect();
                art.write_csv(&format!("lpi_l{ell}_r{}_{tag}.csv", fmt_compact(s.observer_r)), "lpi", &["t", "p"], &rows)?;
                let mut row = vec![ell.to_string(), tag.to_string()];
                row.extend(nums(&[s.observer_r, fit.p_infinity, fit.p_uncertainty, fit.target.unwrap_or(f64::NAN)]));
                summary.push(row);
            }
        }
    }
    art.write_csv("tail_fits.csv", "tail-fit", &["ell", "observable", "r", "p_infinity", "uncertainty", "target"], &summary)
}

fn fit_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<(), HarnessError> {
    let kappa = p.cfg.kappa()?.ok_or_else(|| invalid("metric.preset", "fit-tail needs a perturbed metric"))?;
    let series = evolve_stage(p, art)?;
    let w = p.cfg.run.window;
    fit_rows(&series, kappa, (w[0], w[1]), art, p)
}

fn report_stage(p: &Pipeline, art: &mut ArtifactDir) -> Result<(), HarnessError> {
    let kappa = p.cfg.kappa()?;
    let series = evolve_stage(p, art)?;
    let oc = p.coeffs()?;
    let w = p.cfg.run.window;
    let cw = p.cfg.run.convergence_window;
    let mut scenarios = Vec::new();
    for (ell, list) in series {
        let rop = p.radial(&oc, ell);
        for s in list {
            let conv = convergence_study(&rop, &p.data(ell), s.observer_r, (cw[0], cw[1]), p.cfg.grid.h, &p.evolve_params())
                .map_err(|e| p.fail(e))?;
            art.derive(&format!("report.l{ell}.r{}.observed_order", fmt_compact(s.observer_r)), conv.observed_order);
            scenarios.push(DecayScenario {
                label: p.cfg.name.clone(),
                kappa,
                ell,
                series: s,
                window: (w[0], w[1]),
                convergence: Some(conv),
                refined: None,
            });
        }
    }
    let rows = decay_report(&scenarios);
    let opt = |v: Option<f64>| v.map_or(String::new(), fmt_f64);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.kappa.map_or("flat".into(), |k| k.to_string()),
                r.ell.to_string(),
                fmt_f64(r.observer_r),
                opt(r.p_u),
                opt(r.p_dtu),
                fmt_f64(r.uncertainty),
                opt(r.target),
                opt(r.floor_ratio),
                format!("{:?}", r.status).to_lowercase(),
                r.note.clone(),
            ]
        })
        .collect();
    art.write_csv(
        "decay_report.csv",
        "decay-report",
        &["label", "kappa", "ell", "r", "p_u", "p_dtu", "uncertainty", "target", "floor_ratio", "status", "note"],
        &table,
    )?;
    let mut text = String::new();
    for r in &rows {
        let what = match (r.p_u, r.floor_ratio) {
            (Some(pu), _) => format!("p_u = {pu:.4}, p_dtu = {:.4}, target {:?}", r.p_dtu.unwrap_or(f64::NAN), r.target),
            (None, Some(fr)) => format!("late/peak = {fr:.3e}"),
            _ => r.note.clone(),
        };
        let _ = writeln!(text, "{} l={} r={}: {} [{:?}]", r.label, r.ell, r.observer_r, what, r.status);
    }
    art.write_text("report.txt", &text)?;
    if rows.iter().any(|r| r.status == RowStatus::Fail) {
        return Err(p.fail("decay report contains failing rows; see report.txt"));
    }
    Ok(())
}
