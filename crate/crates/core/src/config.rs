//! Run configuration: flat `section.key = value` files (or the equivalent
//! JSON object) resolved into typed, validated sections.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Number, Value};

use crate::collision::{CrossSection, QuadratureConfig};
use crate::error::{KacError, Result};
use crate::grid::{GridSpec, PhaseField, SpectralField, Transform};
use crate::multiplier::MultiplierParams;
use crate::solver::{Scheme, SolverConfig};
use crate::verify::VerifyConfig;

/// The subcommand a configuration is resolved for; it picks grid defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Kolmogorov,
    Simulate,
    Verify,
    Fit,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Kolmogorov => "kolmogorov",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Fit => "fit",
        }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 7 }
    }
}

/// Grid sizes default per command (64x256 for the Kolmogorov run, 32x64 otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "Nx")]
    pub nx: Option<usize>,
    #[serde(rename = "Nv")]
    pub nv: Option<usize>,
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Lv")]
    pub lv: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { nx: None, nv: None, lx: PI, lv: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollisionSection {
    pub s: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
}

impl Default for CollisionSection {
    fn default() -> Self {
        CollisionSection { s: 0.25, c0: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiplierSection {
    /// Weight strength; the upper end of the search when `c0_search` is set.
    pub c0: f64,
    pub r: f64,
    #[serde(deserialize_with = "one_or_many")]
    pub deltas: Vec<f64>,
    pub c0_search: bool,
    pub c0_iterations: usize,
}

impl Default for MultiplierSection {
    fn default() -> Self {
        MultiplierSection { c0: 0.5, r: 1.0, deltas: vec![1e-1, 1e-2, 1e-3, 1e-4], c0_search: true, c0_iterations: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub scheme: Scheme,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub eps0: f64,
    pub stability_limit: f64,
    /// Relative tolerance on the finite-difference derivative in the energy audit.
    pub audit_fd_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            dt: 0.05,
            t_end: 0.5,
            scheme: Scheme::Picard,
            picard_tol: 1e-8,
            picard_max_iter: 30,
            eps0: 1e-3,
            stability_limit: 2.5,
            audit_fd_tol: 0.05,
        }
    }
}

/// Initial datum shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Unit point source: every Fourier coefficient equal to one.
    Point,
    /// `(1 + cos(x)/2 + sin(2x)/3)(1 + v + sin(1.3 v)/3) e^{-v^2/4}`.
    Smooth,
    /// First field of the seeded verification corpus.
    Corpus,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub kind: Option<InitKind>,
    pub amplitude: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection { kind: None, amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KolmogorovSection {
    #[serde(deserialize_with = "one_or_many")]
    pub times: Vec<f64>,
}

impl Default for KolmogorovSection {
    fn default() -> Self {
        KolmogorovSection { times: vec![0.0, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Lowest |eta| used by the x-direction fit.
    pub x_lo: f64,
    /// Highest |eta|; defaults to the smaller of the lower half of the band
    /// and `xi_max / t_max`, so the shifted frequency stays inside the v band.
    pub x_hi: Option<f64>,
    pub min_modes: usize,
    /// Directory of snapshot files read by the `fit` command.
    pub input: Option<String>,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { x_lo: 4.0, x_hi: None, min_modes: 8, input: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    #[serde(rename = "Nx")]
    pub nx: usize,
    #[serde(rename = "Nv")]
    pub nv: usize,
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Lv")]
    pub lv: f64,
    pub s: f64,
    pub c0: f64,
    pub t: f64,
    pub r: f64,
    #[serde(deserialize_with = "one_or_many")]
    pub deltas: Vec<f64>,
    pub n_items: usize,
    /// Exponent for the `bd` check; defaults to `verify.s`.
    pub bd_s: Option<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        let v = VerifyConfig::default();
        VerifySection {
            nx: v.nx,
            nv: v.nv,
            lx: v.lx,
            lv: v.lv,
            s: v.s,
            c0: v.c0,
            t: v.t,
            r: v.r,
            deltas: v.deltas,
            n_items: v.n_items,
            bd_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write a field snapshot every this many stored times (0 disables).
    pub snapshot_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { snapshot_every: 5 }
    }
}

/// Every configurable block; missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub grid: GridSection,
    pub collision: CollisionSection,
    pub quadrature: QuadratureConfig,
    pub multiplier: MultiplierSection,
    pub solver: SolverSection,
    pub init: InitSection,
    pub kolmogorov: KolmogorovSection,
    pub fit: FitSection,
    pub verify: VerifySection,
    pub output: OutputSection,
}

/// Parses one scalar or comma-separated list value.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    let unquoted = raw.strip_prefix('"').and_then(|r| r.strip_suffix('"'));
    if let Some(s) = unquoted {
        return Value::String(s.into());
    }
    let list = raw.strip_prefix('[').and_then(|r| r.strip_suffix(']'));
    if list.is_some() || raw.contains(',') {
        let body = list.unwrap_or(raw);
        return Value::Array(body.split(',').map(str::trim).filter(|p| !p.is_empty()).map(parse_value).collect());
    }
    match raw {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        _ => {}
    }
    if let Ok(u) = raw.parse::<u64>() {
        return Value::Number(u.into());
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Value::Number(i.into());
    }
    if let Ok(x) = raw.parse::<f64>() {
        if let Some(n) = Number::from_f64(x) {
            return Value::Number(n);
        }
    }
    Value::String(raw.into())
}

/// Reads `key = value` lines into a flat map. `[section]` headers prefix the
/// keys that follow; `#` starts a comment.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| KacError::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
        let k = k.trim();
        if k.is_empty() || v.trim().is_empty() {
            return Err(KacError::Config(format!("line {}: empty key or value", n + 1)));
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(KacError::Config(format!("line {}: duplicate key {key}", n + 1)));
        }
    }
    Ok(out)
}

fn nest(flat: &BTreeMap<String, String>) -> Result<Value> {
    let mut root = Map::new();
    for (key, raw) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(KacError::Config(format!("malformed key {key:?}")));
        }
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
            node = entry.as_object_mut().ok_or_else(|| KacError::Config(format!("key {key:?} conflicts with a value")))?;
        }
        let last = parts[parts.len() - 1];
        if node.contains_key(last) {
            return Err(KacError::Config(format!("key {key:?} conflicts with a section")));
        }
        node.insert(last.to_string(), parse_value(raw));
    }
    Ok(Value::Object(root))
}

impl RunConfig {
    /// Parses a key=value file, or a JSON object when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| KacError::Config(format!("json: {e}")))?
        } else {
            nest(&parse_flat(text)?)?
        };
        serde_json::from_value(value).map_err(|e| KacError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KacError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fills the per-command defaults and checks every derived object.
    pub fn resolve(mut self, cmd: Command) -> Result<Self> {
        let (nx, nv) = match cmd {
            Command::Kolmogorov => (64, 256),
            _ => (32, 64),
        };
        self.grid.nx.get_or_insert(nx);
        self.grid.nv.get_or_insert(nv);
        self.init.kind.get_or_insert(match cmd {
            Command::Kolmogorov => InitKind::Point,
            _ => InitKind::Smooth,
        });
        self.validate(cmd)?;
        Ok(self)
    }

    /// Every section is checked whatever the command, so a file is either
    /// valid or rejected as a whole.
    fn validate(&self, cmd: Command) -> Result<()> {
        let cfg = |e: KacError| KacError::Config(e.to_string());
        self.grid_spec().map_err(cfg)?;
        self.check_deltas()?;
        self.solver_config().map_err(cfg)?.validate().map_err(cfg)?;
        self.verify_config().validate().map_err(cfg)?;
        self.check_fit()?;
        let t = &self.kolmogorov.times;
        if t.is_empty() || t.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KacError::Config("kolmogorov.times must be nonnegative and strictly increasing".into()));
        }
        if self.multiplier.c0_search && self.multiplier.c0_iterations == 0 {
            return Err(KacError::Config("multiplier.c0_iterations must be positive".into()));
        }
        if !self.init.amplitude.is_finite() {
            return Err(KacError::Config("init.amplitude must be finite".into()));
        }
        if cmd == Command::Fit && self.fit.input.is_none() {
            return Err(KacError::Config("fit.input (snapshot directory) is required".into()));
        }
        Ok(())
    }

    fn check_deltas(&self) -> Result<()> {
        let d = &self.multiplier.deltas;
        if d.is_empty() || d.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(KacError::Config("multiplier.deltas must be a nonempty list in (0,1)".into()));
        }
        Ok(())
    }

    fn check_fit(&self) -> Result<()> {
        let f = &self.fit;
        if !(f.x_lo >= 0.0 && f.x_lo.is_finite()) || f.x_hi.is_some_and(|h| !(h > f.x_lo)) || f.min_modes < 2 {
            return Err(KacError::Config("fit window needs 0 <= x_lo < x_hi and min_modes >= 2".into()));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let missing = || KacError::Config("grid size unresolved".into());
        GridSpec::new(self.grid.nx.ok_or_else(missing)?, self.grid.nv.ok_or_else(missing)?, self.grid.lx, self.grid.lv)
    }

    pub fn cross_section(&self) -> Result<CrossSection> {
        CrossSection::new(self.collision.s, self.collision.c0)
    }

    pub fn multiplier_params(&self, delta: f64) -> Result<MultiplierParams> {
        MultiplierParams::new(self.collision.s, self.multiplier.c0, delta, self.multiplier.r)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let mut cfg = SolverConfig::new(self.cross_section()?, self.multiplier_params(self.multiplier.deltas[0])?);
        cfg.quadrature = self.quadrature;
        cfg.dt = s.dt;
        cfg.t_end = s.t_end;
        cfg.scheme = s.scheme;
        cfg.picard_tol = s.picard_tol;
        cfg.picard_max_iter = s.picard_max_iter;
        cfg.eps0 = s.eps0;
        cfg.stability_limit = s.stability_limit;
        Ok(cfg)
    }

    pub fn verify_config(&self) -> VerifyConfig {
        let v = &self.verify;
        VerifyConfig {
            nx: v.nx,
            nv: v.nv,
            lx: v.lx,
            lv: v.lv,
            s: v.s,
            c0: v.c0,
            t: v.t,
            r: v.r,
            deltas: v.deltas.clone(),
            n_items: v.n_items,
            seed: self.run.seed,
            quadrature: self.quadrature,
        }
    }

    /// The configured initial datum on `spec`, times `init.amplitude`.
    pub fn initial_field(&self, spec: GridSpec) -> Result<PhaseField> {
        let a = self.init.amplitude;
        let g = match self.init.kind.unwrap_or(InitKind::Smooth) {
            InitKind::Zero => PhaseField::zeros(spec),
            InitKind::Smooth => PhaseField::from_fn(spec, |x, v| {
                (1.0 + 0.5 * x.cos() + 0.3 * (2.0 * x).sin()) * (1.0 + v + 0.3 * (1.3 * v).sin()) * (-v * v / 4.0).exp()
            }),
            InitKind::Corpus => crate::verify::corpus(&spec, 1, self.run.seed).remove(0),
            InitKind::Point => {
                let mut sf = SpectralField::zeros(spec);
                sf.coef.iter_mut().for_each(|c| *c = Complex64::new(1.0, 0.0));
                Transform::new(spec).inverse(&sf)?
            }
        };
        Ok(g.scaled(a))
    }
}
