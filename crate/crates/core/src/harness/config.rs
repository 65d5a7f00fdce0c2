//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are comma separated.
//! Every key has a default except `experiment`. Unknown or repeated keys are
//! rejected. [`ExperimentConfig::canonical`] prints every key in a fixed
//! order, and the config hash is the SHA-256 of that text.
//!
//! | key | type | default |
//! |-----|------|---------|
//! | `name` | string | file stem |
//! | `experiment` | see [`ExperimentKind`] | required |
//! | `dim`, `n`, `period`, `seed` | lattice and RNG | `3`, `16`, `1`, `0` |
//! | `background` | `flat`, `warped`, `file` | `flat` |
//! | `background.axis`, `.amplitude`, `.frequency`, `.file` | warped or file background | `0`, `0.1`, `1`, none |
//! | `rough.kind` | `loglog_spike`, `fourier_multiscale`, `point_singular_demo`, `smooth_warp` | `loglog_spike` |
//! | `rough.lambda0`, `.epsilon`, `.amplitude` | bounds; amplitude may be `auto` | `2`, `0.1`, `auto` |
//! | `rough.beta`, `.r0`, `.alpha`, `.levels`, `.frequency` | generator shape | `4`, `0.25`, `0.5`, `4`, `1` |
//! | `rough.warp` | `warped_product`, `profile`, `pullback` | `warped_product` |
//! | `rough.center` | fractions of the period | `0.5,0.5,0.5` |
//! | `rough.file` | snapshot used instead of the generator | none |
//! | `mollify.kernel`, `mollify.sigmas` | ladder, coarse to fine | `gaussian`, empty |
//! | `compare.kernel`, `compare.beta`, `compare.amplitude` | second ladder for `uniqueness` | `box`, same as rough |
//! | `step.cfl`, `.dt_max`, `.integrator`, `.order` | time stepping | `0.8`, `inf`, `rk4`, `4` |
//! | `steps` | fixed step count for `fixed_point` | `1000` |
//! | `t_end` | final time | `0.01` |
//! | `observe.times` or `observe.count` + `observe.spacing` + `observe.t_min` | sample times | 10 geometric from `t_end/1000` |
//! | `diag.radii`, `.stride`, `.order` | concentration radii and stencils | `0.0625,0.125,0.25`, `2`, `4` |
//! | `refine.n` | lattice sizes for refinement studies | `16,32` |
//! | `kappa` | scalar floor of the data, or `auto` | `auto` |
//! | `rigidity.ladder`, `rigidity.scale` | members `i` with floor `−1/i`; amplitude factor | `1,2,4,8`, `1` |
//! | `w1n.radius`, `w1n.outer_radius` | balls `B ⊂ B′` at the rough centre | `0.125`, `0.25` |
//! | `control.t_end`, `.amplitude`, `.samples` | smooth control of the smoothing experiment | `0.002`, `0.1`, `6` |
//! | `diffeo.seeds`, `diffeo.substeps` | traced points and RK4 substeps | `4`, `4` |
//! | `diffeo.gauge` | `ricci_pullback` or `de_turck` | `ricci_pullback` |
//! | `output.snapshots` | write final metrics | `true` |
//! | `verdict.*` | thresholds, see [`Thresholds`] | |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::background::BackgroundSpec;
use crate::error::{Error, Result};
use crate::flow::{Gauge, Integrator, StepPolicy};
use crate::lattice::{Lattice, StencilOrder, MAX_DIM};
use crate::rough_init::{KernelKind, RoughKind, RoughSpec, WarpMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// `hflow_rhs` against the geometric form under refinement.
    ConvergenceOrder,
    /// `g = h` held for a fixed number of steps, evolved twice.
    FixedPoint,
    /// Bi-Lipschitz persistence and smoothing rates on a mollification ladder.
    Smoothing,
    /// Ball energy growth on the ladder.
    W1nGrowth,
    /// Time-Lipschitz `L²` bound on the ladder.
    TimeLipschitz,
    /// `W^{1,n}` distance to the rough data along the diagonal `t = σ²/4`.
    InitialContinuity,
    /// All ladder verdicts from one set of runs.
    RoughFamily,
    /// Ladder on the conical point-singular data.
    SingularPointDemo,
    Uniqueness,
    ScalarPersistence,
    TorusRigidity,
    LongtimeFlat,
    /// Pulled-back metric along DeTurck trajectories against Ricci flow.
    DiffeoConsistency,
}

impl ExperimentKind {
    pub fn is_ladder(self) -> bool {
        matches!(
            self,
            Self::Smoothing
                | Self::W1nGrowth
                | Self::TimeLipschitz
                | Self::InitialContinuity
                | Self::RoughFamily
                | Self::SingularPointDemo
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Geometric,
}

/// Verdict thresholds, keys `verdict.<field>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub min_order: f64,
    pub fixed_point_tol: f64,
    pub upsilon_max: f64,
    pub smoothing_spread: f64,
    pub control_drop: f64,
    pub w1n_slack: f64,
    pub w1n_fit_fraction: f64,
    pub lipschitz_spread: f64,
    pub continuity_factor: f64,
    pub uniqueness_slack: f64,
    pub uniqueness_tol: f64,
    pub tol_ratio: f64,
    pub tol_floor: f64,
    pub rigidity_slack: f64,
    pub decay_factor: f64,
    pub transient: f64,
    pub diffeo_ratio: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_order: 1.9,
            fixed_point_tol: 1e-10,
            upsilon_max: 4.0,
            smoothing_spread: 0.2,
            control_drop: 0.1,
            w1n_slack: 0.1,
            w1n_fit_fraction: 0.5,
            lipschitz_spread: 2.0,
            continuity_factor: 2.0,
            uniqueness_slack: 0.1,
            uniqueness_tol: 1e-3,
            tol_ratio: 0.65,
            tol_floor: 1e-12,
            rigidity_slack: 0.1,
            decay_factor: 100.0,
            transient: 0.2,
            diffeo_ratio: 0.5,
        }
    }
}

macro_rules! threshold_keys {
    ($m:ident, $($f:ident),*) => {
        impl Thresholds {
            fn entries(&self) -> Vec<(&'static str, f64)> {
                vec![$((stringify!($f), self.$f)),*]
            }
            fn read(&mut self, $m: &mut Raw) -> Result<()> {
                $(self.$f = $m.take_or(concat!("verdict.", stringify!($f)), self.$f)?;)*
                Ok(())
            }
        }
    };
}

threshold_keys!(
    raw,
    min_order,
    fixed_point_tol,
    upsilon_max,
    smoothing_spread,
    control_drop,
    w1n_slack,
    w1n_fit_fraction,
    lipschitz_spread,
    continuity_factor,
    uniqueness_slack,
    uniqueness_tol,
    tol_ratio,
    tol_floor,
    rigidity_slack,
    decay_factor,
    transient,
    diffeo_ratio
);

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    pub dim: usize,
    pub n: usize,
    pub period: f64,
    pub seed: u64,
    pub background: BackgroundSpec,
    pub rough: RoughSpec,
    pub rough_file: Option<PathBuf>,
    pub kernel: KernelKind,
    pub sigmas: Vec<f64>,
    pub compare_kernel: KernelKind,
    pub compare: RoughSpec,
    pub step: StepPolicy,
    pub steps: usize,
    pub t_end: f64,
    pub observe_times: Vec<f64>,
    pub radii: Vec<f64>,
    pub stride: usize,
    pub diag_order: StencilOrder,
    pub refine: Vec<usize>,
    pub kappa: Option<f64>,
    pub ladder: Vec<u32>,
    pub rigidity_scale: f64,
    pub w1n_radius: f64,
    pub w1n_outer_radius: f64,
    pub control_t_end: f64,
    pub control_amplitude: f64,
    pub control_samples: usize,
    pub diffeo_seeds: usize,
    pub diffeo_substeps: usize,
    pub diffeo_gauge: Gauge,
    pub snapshots: bool,
    pub verdict: Thresholds,
}

/// Remaining `key -> (value, line)` pairs of a config text.
struct Raw(BTreeMap<String, (String, usize)>);

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_scalar<T: FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| cfg_err(format!("line {line}: cannot parse `{v}` for `{key}`")))
}

fn parse_enum<T: DeserializeOwned>(key: &str, v: &str, line: usize) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| cfg_err(format!("line {line}: `{v}` is not a valid value for `{key}`")))
}

pub(crate) fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("unit enum expected, got {other:?}"),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str, line: usize) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_scalar(key, s.trim(), line)).collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) =
                content.split_once('=').ok_or_else(|| cfg_err(format!("line {}: expected `key = value`", i + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(cfg_err(format!("line {}: empty key", i + 1)));
            }
            if map.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(cfg_err(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self(map))
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.0.remove(key)
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            Some((v, line)) => parse_scalar(key, &v, line),
            None => Ok(default),
        }
    }

    fn take_enum<T: DeserializeOwned>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            Some((v, line)) => parse_enum(key, &v, line),
            None => Ok(default),
        }
    }

    fn take_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.take(key) {
            Some((v, line)) => parse_list(key, &v, line),
            None => Ok(default),
        }
    }

    /// `auto` maps to `None`.
    fn take_auto(&mut self, key: &str, default: Option<f64>) -> Result<Option<f64>> {
        match self.take(key) {
            Some((v, _)) if v == "auto" => Ok(None),
            Some((v, line)) => parse_scalar(key, &v, line).map(Some),
            None => Ok(default),
        }
    }
}

fn show_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        let mut cfg = Self::parse(&text, stem)?;
        // relative file references resolve against the config's directory
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(f) = &mut cfg.rough_file {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        if let BackgroundSpec::File { path: f } = &mut cfg.background {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, default_name: &str) -> Result<Self> {
        let mut raw = Raw::parse(text)?;
        let name = raw.take("name").map_or_else(|| default_name.to_string(), |v| v.0);
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(cfg_err(format!("`{name}` is not a usable run name")));
        }
        let experiment = match raw.take("experiment") {
            Some((v, line)) => parse_enum("experiment", &v, line)?,
            None => return Err(cfg_err("missing required key `experiment`")),
        };
        let dim = raw.take_or("dim", 3usize)?;
        let n = raw.take_or("n", 16usize)?;
        let period = raw.take_or("period", 1.0f64)?;
        let seed = raw.take_or("seed", 0u64)?;

        let bg_kind = raw.take("background").map_or_else(|| "flat".to_string(), |v| v.0);
        let axis = raw.take_or("background.axis", 0usize)?;
        let amplitude = raw.take_or("background.amplitude", 0.1f64)?;
        let frequency = raw.take_or("background.frequency", 1u32)?;
        let bg_file = raw.take("background.file").map(|v| PathBuf::from(v.0));
        let background = match bg_kind.as_str() {
            "flat" => BackgroundSpec::Flat,
            "warped" => BackgroundSpec::Warped { axis, amplitude, frequency },
            "file" => BackgroundSpec::File {
                path: bg_file.clone().ok_or_else(|| cfg_err("`background = file` needs `background.file`"))?,
            },
            other => return Err(cfg_err(format!("unknown background `{other}`"))),
        };

        let kind = raw.take_enum("rough.kind", RoughKind::LoglogSpike)?;
        let mut rough = RoughSpec::new(kind);
        rough.lambda0 = raw.take_or("rough.lambda0", rough.lambda0)?;
        rough.epsilon = raw.take_or("rough.epsilon", rough.epsilon)?;
        rough.amplitude = raw.take_auto("rough.amplitude", None)?;
        rough.beta = raw.take_or("rough.beta", rough.beta)?;
        rough.r0 = raw.take_or("rough.r0", rough.r0)?;
        rough.alpha = raw.take_or("rough.alpha", rough.alpha)?;
        rough.levels = raw.take_or("rough.levels", rough.levels)?;
        rough.frequency = raw.take_or("rough.frequency", rough.frequency)?;
        rough.warp = raw.take_enum("rough.warp", WarpMode::WarpedProduct)?;
        rough.seed = seed;
        let center: Vec<f64> = raw.take_list("rough.center", vec![0.5; MAX_DIM])?;
        if center.len() < dim {
            return Err(cfg_err(format!("rough.center needs {dim} entries")));
        }
        for (a, c) in center.iter().take(MAX_DIM).enumerate() {
            rough.center[a] = *c;
        }
        let rough_file = raw.take("rough.file").map(|v| PathBuf::from(v.0));

        let kernel = raw.take_enum("mollify.kernel", KernelKind::Gaussian)?;
        let sigmas = raw.take_list("mollify.sigmas", Vec::new())?;
        let compare_kernel = raw.take_enum("compare.kernel", KernelKind::Box)?;
        let mut compare = rough.clone();
        compare.beta = raw.take_or("compare.beta", rough.beta)?;
        compare.amplitude = raw.take_auto("compare.amplitude", rough.amplitude)?;

        let step = StepPolicy {
            cfl_safety: raw.take_or("step.cfl", 0.8)?,
            dt_max: raw.take_or("step.dt_max", f64::INFINITY)?,
            integrator: raw.take_enum("step.integrator", Integrator::Rk4)?,
            stencil_order: StencilOrder::from_int(raw.take_or("step.order", 4u32)?)
                .map_err(|e| cfg_err(e.to_string()))?,
        };
        let steps = raw.take_or("steps", 1000usize)?;
        let t_end = raw.take_or("t_end", 0.01f64)?;

        let explicit = raw.take_list::<f64>("observe.times", Vec::new())?;
        let count = raw.take_or("observe.count", 10usize)?;
        let spacing = raw.take_enum("observe.spacing", Spacing::Geometric)?;
        let t_min = raw.take_or("observe.t_min", t_end * 1e-3)?;
        let observe_times = if explicit.is_empty() { sample_times(t_min, t_end, count, spacing)? } else { explicit };

        let radii = raw.take_list("diag.radii", vec![0.0625, 0.125, 0.25])?;
        let stride = raw.take_or("diag.stride", 2usize)?;
        let diag_order =
            StencilOrder::from_int(raw.take_or("diag.order", 4u32)?).map_err(|e| cfg_err(e.to_string()))?;
        let refine = raw.take_list("refine.n", vec![16, 32])?;
        let kappa = raw.take_auto("kappa", None)?;
        let ladder = raw.take_list("rigidity.ladder", vec![1, 2, 4, 8])?;
        let rigidity_scale = raw.take_or("rigidity.scale", 1.0)?;
        let w1n_radius = raw.take_or("w1n.radius", 0.125)?;
        let w1n_outer_radius = raw.take_or("w1n.outer_radius", 0.25)?;
        let control_t_end = raw.take_or("control.t_end", 0.002)?;
        let control_amplitude = raw.take_or("control.amplitude", 0.1)?;
        let control_samples = raw.take_or("control.samples", 6usize)?;
        let diffeo_seeds = raw.take_or("diffeo.seeds", 4usize)?;
        let diffeo_substeps = raw.take_or("diffeo.substeps", 4usize)?;
        let diffeo_gauge = raw.take_enum("diffeo.gauge", Gauge::RicciPullback)?;
        let snapshots = raw.take_or("output.snapshots", true)?;
        let mut verdict = Thresholds::default();
        verdict.read(&mut raw)?;

        if let Some((key, (_, line))) = raw.0.iter().next() {
            return Err(cfg_err(format!("line {line}: unknown key `{key}`")));
        }
        let cfg = Self {
            name,
            experiment,
            dim,
            n,
            period,
            seed,
            background,
            rough,
            rough_file,
            kernel,
            sigmas,
            compare_kernel,
            compare,
            step,
            steps,
            t_end,
            observe_times,
            radii,
            stride,
            diag_order,
            refine,
            kappa,
            ladder,
            rigidity_scale,
            w1n_radius,
            w1n_outer_radius,
            control_t_end,
            control_amplitude,
            control_samples,
            diffeo_seeds,
            diffeo_substeps,
            diffeo_gauge,
            snapshots,
            verdict,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn lattice(&self) -> Result<Lattice> {
        self.lattice_with(self.n)
    }

    pub fn lattice_with(&self, n: usize) -> Result<Lattice> {
        Lattice::new(self.dim, n, self.period).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dim) {
            return Err(cfg_err(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        self.lattice()?;
        for &n in &self.refine {
            self.lattice_with(n)?;
        }
        if self.refine.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg_err("refine.n must increase"));
        }
        self.step.validate().map_err(|e| cfg_err(e.to_string()))?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(cfg_err(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.observe_times.iter().any(|&t| !(t > 0.0 && t <= self.t_end)) {
            return Err(cfg_err("observe.times must lie in (0, t_end]"));
        }
        if self.observe_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg_err("observe.times must increase"));
        }
        let half = 0.5 * self.period;
        for &r in self.radii.iter().chain([self.w1n_radius, self.w1n_outer_radius].iter()) {
            if !(r > 0.0 && r <= half) {
                return Err(cfg_err(format!("radius {r} must lie in (0, L/2 = {half}]")));
            }
        }
        if self.w1n_radius > self.w1n_outer_radius {
            return Err(cfg_err("w1n.radius must not exceed w1n.outer_radius"));
        }
        if self.sigmas.iter().any(|&s| !(s > 0.0)) || self.sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(cfg_err("mollify.sigmas must be positive and decreasing"));
        }
        if self.stride == 0 {
            return Err(cfg_err("diag.stride must be at least 1"));
        }
        let needs_ladder = self.experiment.is_ladder() || self.experiment == ExperimentKind::Uniqueness;
        if needs_ladder && self.sigmas.is_empty() {
            return Err(cfg_err("this experiment needs mollify.sigmas"));
        }
        let needs_refine = matches!(
            self.experiment,
            ExperimentKind::ConvergenceOrder | ExperimentKind::ScalarPersistence | ExperimentKind::DiffeoConsistency
        );
        if needs_refine && self.refine.len() < 2 {
            return Err(cfg_err("this experiment needs at least two refine.n entries"));
        }
        if self.experiment == ExperimentKind::TorusRigidity && (self.ladder.is_empty() || self.ladder.contains(&0)) {
            return Err(cfg_err("rigidity.ladder needs positive members"));
        }
        if !(self.control_t_end > 0.0) || self.control_samples < 2 {
            return Err(cfg_err("control.t_end must be positive and control.samples at least 2"));
        }
        if self.diffeo_seeds == 0 {
            return Err(cfg_err("diffeo.seeds must be at least 1"));
        }
        Ok(())
    }

    /// Every key in a fixed order; parsing this text reproduces `self`.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("experiment", enum_name(&self.experiment));
        kv("dim", self.dim.to_string());
        kv("n", self.n.to_string());
        kv("period", self.period.to_string());
        kv("seed", self.seed.to_string());
        match &self.background {
            BackgroundSpec::Flat => kv("background", "flat".into()),
            BackgroundSpec::Warped { axis, amplitude, frequency } => {
                kv("background", "warped".into());
                kv("background.axis", axis.to_string());
                kv("background.amplitude", amplitude.to_string());
                kv("background.frequency", frequency.to_string());
            }
            BackgroundSpec::File { path } => {
                kv("background", "file".into());
                kv("background.file", path.display().to_string());
            }
        }
        let r = &self.rough;
        kv("rough.kind", enum_name(&r.kind));
        kv("rough.lambda0", r.lambda0.to_string());
        kv("rough.epsilon", r.epsilon.to_string());
        kv("rough.amplitude", show_auto(r.amplitude));
        kv("rough.beta", r.beta.to_string());
        kv("rough.r0", r.r0.to_string());
        kv("rough.alpha", r.alpha.to_string());
        kv("rough.levels", r.levels.to_string());
        kv("rough.frequency", r.frequency.to_string());
        kv("rough.warp", enum_name(&r.warp));
        kv("rough.center", join(&r.center));
        if let Some(f) = &self.rough_file {
            kv("rough.file", f.display().to_string());
        }
        kv("mollify.kernel", enum_name(&self.kernel));
        kv("mollify.sigmas", join(&self.sigmas));
        kv("compare.kernel", enum_name(&self.compare_kernel));
        kv("compare.beta", self.compare.beta.to_string());
        kv("compare.amplitude", show_auto(self.compare.amplitude));
        kv("step.cfl", self.step.cfl_safety.to_string());
        kv("step.dt_max", self.step.dt_max.to_string());
        kv("step.integrator", enum_name(&self.step.integrator));
        kv("step.order", self.step.stencil_order.as_int().to_string());
        kv("steps", self.steps.to_string());
        kv("t_end", self.t_end.to_string());
        kv("observe.times", join(&self.observe_times));
        kv("diag.radii", join(&self.radii));
        kv("diag.stride", self.stride.to_string());
        kv("diag.order", self.diag_order.as_int().to_string());
        kv("refine.n", join(&self.refine));
        kv("kappa", show_auto(self.kappa));
        kv("rigidity.ladder", join(&self.ladder));
        kv("rigidity.scale", self.rigidity_scale.to_string());
        kv("w1n.radius", self.w1n_radius.to_string());
        kv("w1n.outer_radius", self.w1n_outer_radius.to_string());
        kv("control.t_end", self.control_t_end.to_string());
        kv("control.amplitude", self.control_amplitude.to_string());
        kv("control.samples", self.control_samples.to_string());
        kv("diffeo.seeds", self.diffeo_seeds.to_string());
        kv("diffeo.substeps", self.diffeo_substeps.to_string());
        kv("diffeo.gauge", enum_name(&self.diffeo_gauge));
        kv("output.snapshots", self.snapshots.to_string());
        for (k, v) in self.verdict.entries() {
            kv(&format!("verdict.{k}"), v.to_string());
        }
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `count` times ending at `t_end`, linear from `t_end/count` or geometric from `t_min`.
pub fn sample_times(t_min: f64, t_end: f64, count: usize, spacing: Spacing) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(cfg_err("observe.count must be at least 1"));
    }
    if count == 1 {
        return Ok(vec![t_end]);
    }
    let mut out: Vec<f64> = match spacing {
        Spacing::Linear => (1..=count).map(|k| t_end * k as f64 / count as f64).collect(),
        Spacing::Geometric => {
            if !(t_min > 0.0 && t_min < t_end) {
                return Err(cfg_err(format!("observe.t_min must lie in (0, t_end), got {t_min}")));
            }
            let ratio = (t_end / t_min).ln() / (count - 1) as f64;
            (0..count).map(|k| t_min * (ratio * k as f64).exp()).collect()
        }
    };
    *out.last_mut().expect("count >= 2") = t_end;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "experiment = smoothing\nn = 8\nmollify.sigmas = 0.25, 0.125\n";

    #[test]
    fn canonical_text_round_trips() {
        let cfg = ExperimentConfig::parse(BASIC, "basic").unwrap();
        let again = ExperimentConfig::parse(&cfg.canonical(), "other").unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let e = ExperimentConfig::parse(&format!("{BASIC}colour = blue\n"), "x").unwrap_err();
        assert!(e.to_string().contains("unknown key `colour`"));
        let e = ExperimentConfig::parse(&format!("{BASIC}n = 8\n"), "x").unwrap_err();
        assert!(e.to_string().contains("duplicate"));
    }

    #[test]
    fn radius_beyond_half_period_is_rejected() {
        let e = ExperimentConfig::parse(&format!("{BASIC}diag.radii = 0.6\n"), "x").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn observe_times_must_fit_the_run() {
        let text = format!("{BASIC}t_end = 0.1\nobserve.times = 0.05, 0.2\n");
        assert!(ExperimentConfig::parse(&text, "x").is_err());
    }

    #[test]
    fn geometric_times_end_exactly_at_t_end() {
        let t = sample_times(1e-4, 0.01, 5, Spacing::Geometric).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t[4], 0.01);
        assert!((t[0] - 1e-4).abs() < 1e-18);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn threshold_override_changes_hash() {
        let a = ExperimentConfig::parse(BASIC, "x").unwrap();
        let b = ExperimentConfig::parse(&format!("{BASIC}verdict.upsilon_max = 3\n"), "x").unwrap();
        assert_eq!(b.verdict.upsilon_max, 3.0);
        assert_ne!(a.hash(), b.hash());
    }
}
