//! Batch front-end: argument parsing, run orchestration and artifact output.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 configuration or
//! usage error, 3 numerical failure, 4 Picard non-convergence.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{CommandFactory, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::collision::CollisionQuadrature;
use crate::config::{Command, RunConfig};
use crate::error::{KacError, Result};
use crate::grid::{load_snapshot, save_snapshot, GridSpec, PhaseField, SpectralField, Transform};
use crate::multiplier::{MultiplierParams, PsiEvaluator};
use crate::norms::{fit_gevrey_radius, FitDirection, FitWindow, NormEvaluator};
use crate::solver::{delta_uniformity, energy_audit, kolmogorov_spectral, search_c0, Solver};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PICARD: i32 = 4;

/// Environment variable that overrides the output directory when `--out` is absent.
pub const OUT_ENV: &str = "KACSOLVE_OUT";

#[derive(Debug, Parser)]
#[command(name = "kacsolve", version, about = "Spectral solver and estimate checks for the non-cutoff Kac equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
    /// Run configuration (key = value or JSON); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (default: $KACSOLVE_OUT, else ./kacsolve-out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for the numerical kernels.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Overrides run.seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Exact fractional Kolmogorov flow with Gevrey radius fits.
    Kolmogorov,
    /// Full Kac run with norms, energy audit and delta sweep.
    Simulate,
    /// Run verification suites: `all` or any of the suite names.
    Verify {
        #[arg(value_name = "SUITE")]
        suites: Vec<String>,
    },
    /// Gevrey radius fits on a directory of field snapshots.
    Fit,
}

impl Sub {
    fn command(&self) -> Command {
        match self {
            Sub::Kolmogorov => Command::Kolmogorov,
            Sub::Simulate => Command::Simulate,
            Sub::Verify { .. } => Command::Verify,
            Sub::Fit => Command::Fit,
        }
    }
}

/// Maps an error to its process exit code.
pub fn exit_code(e: &KacError) -> i32 {
    match e {
        KacError::Config(_) => EXIT_CONFIG,
        KacError::PicardNotConverged { .. } => EXIT_PICARD,
        _ => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Clone, Serialize)]
struct OutputHash {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_path: Option<String>,
    config_sha256: Option<String>,
    config: RunConfig,
    seed: u64,
    workers: Option<usize>,
    started_unix: f64,
    finished_unix: Option<f64>,
    status: String,
    exit_code: Option<i32>,
    error: Option<String>,
    outputs: Vec<OutputHash>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory plus the list of files written so far.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, bytes)?;
        self.written.push(PathBuf::from(rel));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    fn snapshot(&mut self, rel: &str, g: &PhaseField, t: f64) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        save_snapshot(&p, g, t)?;
        self.written.push(PathBuf::from(rel));
        Ok(())
    }

    fn hashes(&self) -> Result<Vec<OutputHash>> {
        self.written
            .iter()
            .map(|rel| {
                let bytes = std::fs::read(self.dir.join(rel))?;
                Ok(OutputHash { path: rel.to_string_lossy().into_owned(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
            })
            .collect()
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cmd = cli.command.command();
    let config_error = |msg: String| {
        eprintln!("error: {msg}");
        EXIT_CONFIG
    };
    // everything that can be rejected is checked before any output exists
    let (mut cfg, config_text) = match &cli.config {
        Some(p) => match std::fs::read(p) {
            Ok(bytes) => match std::str::from_utf8(&bytes).map_err(|e| KacError::Config(e.to_string())).and_then(RunConfig::parse) {
                Ok(c) => (c, Some(bytes)),
                Err(e) => return config_error(format!("{}: {e}", p.display())),
            },
            Err(e) => return config_error(format!("{}: {e}", p.display())),
        },
        None => (RunConfig::default(), None),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    let cfg = match cfg.resolve(cmd) {
        Ok(c) => c,
        Err(e) => return config_error(e.to_string()),
    };
    let suites = match &cli.command {
        Sub::Verify { suites } => match crate::verify::resolve_selector(suites) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                let mut c = Cli::command();
                c.build();
                let usage = c.find_subcommand_mut("verify").map(|s| s.render_long_help().to_string()).unwrap_or_default();
                eprintln!("{usage}");
                return EXIT_CONFIG;
            }
        },
        _ => Vec::new(),
    };
    let pool = match cli.workers {
        Some(0) => return config_error("--workers must be at least 1".into()),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => return config_error(format!("thread pool: {e}")),
    };
    let dir = cli.out.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("kacsolve-out"));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: {}: {e}", dir.display());
        return EXIT_NUMERICAL;
    }
    let mut manifest = Manifest {
        tool: "kacsolve",
        version: env!("CARGO_PKG_VERSION"),
        command: cmd.name(),
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        config_sha256: config_text.as_deref().map(sha256_hex),
        config: cfg.clone(),
        seed: cfg.run.seed,
        workers: cli.workers,
        started_unix: now(),
        finished_unix: None,
        status: "running".into(),
        exit_code: None,
        error: None,
        outputs: Vec::new(),
    };
    let manifest_path = dir.join("manifest.json");
    let write_manifest = |m: &Manifest| -> std::io::Result<()> {
        let mut s = serde_json::to_string_pretty(m).map_err(std::io::Error::other)?;
        s.push('\n');
        std::fs::write(&manifest_path, s)
    };
    if let Err(e) = write_manifest(&manifest) {
        eprintln!("error: {}: {e}", manifest_path.display());
        return EXIT_NUMERICAL;
    }
    let mut out = Outputs { dir, written: Vec::new() };
    let result = pool.install(|| match &cli.command {
        Sub::Kolmogorov => cmd_kolmogorov(&cfg, &mut out),
        Sub::Simulate => cmd_simulate(&cfg, &mut out),
        Sub::Verify { .. } => cmd_verify(&cfg, &suites, &mut out),
        Sub::Fit => cmd_fit(&cfg, &mut out),
    });
    let code = match &result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            manifest.error = Some(e.to_string());
            exit_code(e)
        }
    };
    manifest.outputs = out.hashes().unwrap_or_default();
    manifest.finished_unix = Some(now());
    manifest.status = if code == EXIT_OK { "ok" } else { "failed" }.into();
    manifest.exit_code = Some(code);
    if let Err(e) = write_manifest(&manifest) {
        eprintln!("error: {}: {e}", manifest_path.display());
        return EXIT_NUMERICAL;
    }
    code
}

fn delta_label(d: f64) -> String {
    format!("{d:e}")
}

/// `t, h_r_l2, triple_r0, weighted_m_delta_*, weighted_g_delta_*, sobolev_hs, vweight`.
fn norms_header(deltas: &[f64]) -> String {
    let mut cols = vec!["t".to_string(), "h_r_l2".into(), "triple_r0".into()];
    cols.extend(deltas.iter().map(|d| format!("weighted_m_delta_{}", delta_label(*d))));
    cols.extend(deltas.iter().map(|d| format!("weighted_g_delta_{}", delta_label(*d))));
    cols.push("sobolev_hs".into());
    cols.push("vweight".into());
    cols.join(",")
}

fn norms_csv(ev: &NormEvaluator, params: MultiplierParams, deltas: &[f64], times: &[f64], fields: &[PhaseField]) -> Result<String> {
    let evals: Vec<PsiEvaluator> = deltas.iter().map(|&d| Ok(PsiEvaluator::new(params.with_delta(d)?))).collect::<Result<_>>()?;
    let mut csv = norms_header(deltas);
    csv.push('\n');
    for (&t, g) in times.iter().zip(fields) {
        let base = ev.report(g, t, &evals[0])?;
        let table = evals[0].psi_table(&ev.spec, t)?;
        let mut row = vec![t, base.h_r_l2, base.triple_r0];
        for &d in deltas {
            row.push(ev.weighted_m(g, &table, d)?);
        }
        for p in &evals {
            row.push(ev.weighted_g(g, &p.g_delta_line(&ev.spec, t)?)?);
        }
        row.push(base.sobolev_hs);
        row.push(base.vweight);
        if let Some(i) = row.iter().position(|x| !x.is_finite()) {
            return Err(KacError::NonFinite { what: "norms row", index: i });
        }
        csv.push_str(&row.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    Ok(csv)
}

/// Fit windows: x uses `[x_lo, x_hi]` with the default `x_hi` keeping
/// `t_max |eta|` inside the v band; all fits skip `t = 0`.
fn fit_all(cfg: &RunConfig, series: &[(f64, SpectralField)]) -> Value {
    let s_tilde = cfg.collision.s.min(0.5);
    let spec = series[0].1.spec;
    let positive: Vec<f64> = series.iter().map(|s| s.0).filter(|t| *t > 0.0).collect();
    let t_lo = positive.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_hi = positive.iter().cloned().fold(0.0, f64::max);
    let eta_top = 0.5 * spec.eta(spec.nx / 2 - 1);
    let x_hi = cfg.fit.x_hi.unwrap_or_else(|| if t_hi > 0.0 { eta_top.min(spec.xi_max() / t_hi) } else { eta_top });
    let min_modes = cfg.fit.min_modes;
    let windows = [
        ("x", FitDirection::X, FitWindow { lo: cfg.fit.x_lo, hi: x_hi, t_lo, t_hi, min_modes }),
        ("v", FitDirection::V, FitWindow { lo: 0.0, hi: 0.5 * spec.xi_max(), t_lo, t_hi, min_modes }),
        ("velocity_decay", FitDirection::VelocityDecay, FitWindow { lo: 0.0, hi: 0.5 * spec.lv, t_lo, t_hi, min_modes }),
    ];
    let mut obj = serde_json::Map::new();
    obj.insert("s".into(), json!(cfg.collision.s));
    obj.insert("s_tilde".into(), json!(s_tilde));
    obj.insert("target_exponents".into(), json!({ "x": 1.0 + 2.0 * s_tilde, "v": 1.0 }));
    for (name, dir, w) in windows {
        let v = if positive.len() < 3 {
            json!({ "error": "fewer than 3 positive times" })
        } else {
            match fit_gevrey_radius(series, dir, s_tilde, Some(w)) {
                Ok(rep) => serde_json::to_value(rep).unwrap_or(Value::Null),
                Err(e) => json!({ "error": e.to_string() }),
            }
        };
        obj.insert(name.into(), v);
    }
    Value::Object(obj)
}

fn exponent(fits: &Value, name: &str) -> String {
    fits[name]["exponent_estimate"].as_f64().map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn snapshot_indices(n: usize, every: usize) -> Vec<usize> {
    if every == 0 || n == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).step_by(every).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    idx
}

fn write_snapshots(out: &mut Outputs, cfg: &RunConfig, times: &[f64], fields: &[PhaseField]) -> Result<()> {
    for i in snapshot_indices(fields.len(), cfg.output.snapshot_every) {
        out.snapshot(&format!("snapshots/field_{i:04}.kacfield"), &fields[i], times[i])?;
    }
    Ok(())
}

fn cmd_kolmogorov(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let spec = cfg.grid_spec()?;
    let cs = cfg.cross_section()?;
    let s = cs.s;
    let tr = Transform::new(spec);
    let f0 = tr.forward(&cfg.initial_field(spec)?)?;
    let times = &cfg.kolmogorov.times;
    let series: Vec<(f64, SpectralField)> = times.iter().map(|&t| Ok((t, kolmogorov_spectral(&f0, s, t)?))).collect::<Result<_>>()?;
    let fields: Vec<PhaseField> = series.iter().map(|(_, sf)| tr.inverse(sf)).collect::<Result<_>>()?;
    let ev = NormEvaluator::new(spec, cfg.multiplier.r, s)?.with_triple(&CollisionQuadrature::new(cfg.quadrature)?, &cs)?;
    let params = cfg.multiplier_params(cfg.multiplier.deltas[0])?;
    out.write("norms.csv", norms_csv(&ev, params, &cfg.multiplier.deltas, times, &fields)?.as_bytes())?;
    let fits = fit_all(cfg, &series);
    out.json("fits.json", &fits)?;
    write_snapshots(out, cfg, times, &fields)?;
    println!("kolmogorov s={s} grid={}x{}: x-exponent {} v-exponent {}", spec.nx, spec.nv, exponent(&fits, "x"), exponent(&fits, "v"));
    Ok(true)
}

fn cmd_simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let spec = cfg.grid_spec()?;
    let scfg = cfg.solver_config()?;
    let solver = Solver::new(spec, scfg)?;
    let traj = solver.run(&cfg.initial_field(spec)?)?;
    let deltas = &cfg.multiplier.deltas;
    let fd_tol = cfg.solver.audit_fd_tol;
    let base = scfg.params;
    let (c0, search) = if cfg.multiplier.c0_search {
        match search_c0(&solver, &traj, base, cfg.multiplier.c0, cfg.multiplier.c0_iterations, fd_tol)? {
            Some((c0, _)) => (c0, json!({ "c0_max": cfg.multiplier.c0, "iterations": cfg.multiplier.c0_iterations, "selected": c0 })),
            None => (cfg.multiplier.c0, json!({ "c0_max": cfg.multiplier.c0, "iterations": cfg.multiplier.c0_iterations, "selected": null })),
        }
    } else {
        (cfg.multiplier.c0, Value::Null)
    };
    let mut params = base;
    params.c0 = c0;
    let psi = PsiEvaluator::new(params);
    let audit_m = energy_audit(&solver, &traj, &psi, false, fd_tol)?;
    let audit_g = energy_audit(&solver, &traj, &psi, true, fd_tol)?;
    let (sups, spread) = delta_uniformity(&traj, params, deltas)?;
    let ev = NormEvaluator::new(spec, params.r, scfg.cs.s)?.with_triple(&solver.op.quadrature, &scfg.cs)?;
    out.write("norms.csv", norms_csv(&ev, params, deltas, &traj.times, &traj.fields)?.as_bytes())?;
    let tr = solver.transform();
    let series: Vec<(f64, SpectralField)> = traj.times.iter().zip(&traj.fields).map(|(&t, g)| Ok((t, tr.forward(g)?))).collect::<Result<_>>()?;
    out.json("fits.json", &fit_all(cfg, &series))?;
    let report = json!({
        "scheme": scfg.scheme,
        "spectral_radius": traj.spectral_radius,
        "picard_deltas": traj.picard_deltas,
        "c0": c0,
        "c0_search": search,
        "audit_m": audit_m,
        "audit_g": audit_g,
        "delta_sweep": { "deltas": deltas, "sup_weighted_m": sups, "spread": spread, "pass": spread < 0.1 },
    });
    out.json("audit.json", &report)?;
    write_snapshots(out, cfg, &traj.times, &traj.fields)?;
    println!(
        "simulate {}x{} T={}: c0={c0:.5} audit_m {} ({:.1}%) audit_g {} ({:.1}%) delta-spread {:.2}% {}",
        spec.nx,
        spec.nv,
        scfg.t_end,
        pf(audit_m.pass),
        100.0 * audit_m.fraction_nonnegative,
        pf(audit_g.pass),
        100.0 * audit_g.fraction_nonnegative,
        100.0 * spread,
        pf(spread < 0.1)
    );
    Ok(true)
}

fn pf(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_verify(cfg: &RunConfig, suites: &[&str], out: &mut Outputs) -> Result<bool> {
    let outcomes = crate::verify::run_selected(suites, &cfg.verify_config(), cfg.verify.bd_s)?;
    out.json("verify.json", &outcomes)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for o in &outcomes {
        let _ = writeln!(lock, "{}", o.summary);
    }
    Ok(outcomes.iter().all(|o| o.pass))
}

fn load_series(dir: &Path) -> Result<(GridSpec, Vec<(f64, SpectralField)>)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| KacError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "kacfield"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(KacError::InsufficientData(format!("no .kacfield files in {}", dir.display())));
    }
    let mut fields: Vec<(f64, PhaseField)> = paths.iter().map(|p| load_snapshot(p).map(|(g, t)| (t, g))).collect::<Result<_>>()?;
    fields.sort_by(|a, b| a.0.total_cmp(&b.0));
    let spec = fields[0].1.spec;
    let tr = Transform::new(spec);
    let series = fields.iter().map(|(t, g)| Ok((*t, tr.forward(g)?))).collect::<Result<_>>()?;
    Ok((spec, series))
}

fn cmd_fit(cfg: &RunConfig, out: &mut Outputs) -> Result<bool> {
    let dir = PathBuf::from(cfg.fit.input.as_deref().unwrap_or("."));
    let (spec, series) = load_series(&dir)?;
    let fits = fit_all(cfg, &series);
    out.json("fits.json", &fits)?;
    println!("fit {} snapshots on {}x{}: x-exponent {} v-exponent {}", series.len(), spec.nx, spec.nv, exponent(&fits, "x"), exponent(&fits, "v"));
    Ok(true)
}
