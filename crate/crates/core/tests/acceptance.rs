//! Acceptance run: one PASS/FAIL line per criterion. The process fails only
//! when an attainable check fails; items that are reported as FAIL for a
//! documented structural reason are marked `(expected)`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use kac_core::collision::*;
use kac_core::grid::{signed_index, GridSpec, PhaseField, SpectralField, Transform};
use kac_core::maxwellian::{kernel_basis, sample_profile, Profile};
use kac_core::multiplier::{check_bd_lemma, random_bd_samples, MultiplierParams, PsiEvaluator};
use kac_core::solver::*;
use kac_core::verify::{check_a_decomposition, check_commutator_l_g, check_commutator_l_m, run_selected, Bench, VerifyConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    /// Every item of the criterion holds.
    pass: bool,
    /// Every attainable item holds; equals `pass` unless an item is known to fail.
    required: bool,
    detail: String,
}

impl Outcome {
    fn strict(pass: bool, detail: String) -> Self {
        Outcome { pass, required: pass, detail }
    }
}

fn smooth(spec: GridSpec) -> PhaseField {
    PhaseField::from_fn(spec, |x, v| {
        (1.0 + 0.5 * x.cos() + 0.3 * (2.0 * x).sin()) * (1.0 + v + 0.3 * (1.3 * v).sin()) * (-v * v / 4.0).exp()
    })
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|y| y * y).sum::<f64>().sqrt()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    l2(&d) / l2(b)
}

/// Closed-form `s = 1/2` solution on 10^3 random modes of a 64x128 grid.
fn kolmogorov_exactness() -> Outcome {
    let spec = GridSpec::with_defaults(64, 128).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut f0 = SpectralField::zeros(spec);
    for c in f0.coef.iter_mut() {
        *c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    // with Lx = pi, t = j pi / Lv puts every shift t * eta on the xi grid
    let big_f = |z: f64| 0.5 * (z * (1.0 + z * z).sqrt() + z.asinh());
    let times: Vec<f64> = (1..=3).map(|j| j as f64 * std::f64::consts::PI / spec.lv).collect();
    let sols: Vec<SpectralField> = times.iter().map(|&t| kolmogorov_spectral(&f0, 0.5, t).unwrap()).collect();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let (j, k, m) = (rng.gen_range(0..3), rng.gen_range(0..spec.nx), rng.gen_range(0..spec.nv));
        let (t, eta, xi) = (times[j], spec.eta(k), spec.xi(m));
        let shifted = signed_index(m, spec.nv) + (j as i64 + 1) * signed_index(k, spec.nx);
        if shifted.abs() >= (spec.nv / 2) as i64 {
            continue;
        }
        let src = f0.get(k, shifted.rem_euclid(spec.nv as i64) as usize);
        let integral = if eta == 0.0 { t * (1.0 + xi * xi).sqrt() } else { (big_f(xi + t * eta) - big_f(xi)) / eta };
        let expect = src * (-integral).exp();
        max_rel = max_rel.max((sols[j].get(k, m) - expect).norm() / expect.norm());
        checked += 1;
    }
    let clock = Instant::now();
    solve_kolmogorov_exact(&smooth(spec), 0.25, 0.37).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    Outcome::strict(max_rel <= 1e-10 && secs < 5.0, format!("{checked} modes max_rel={max_rel:.2e} (<= 1e-10); 64x128 solve {secs:.3}s (< 5s)"))
}

fn kacsolve(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kacsolve")).args(args).current_dir(dir).env_remove("KACSOLVE_OUT").output().expect("spawn kacsolve")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Gevrey exponents from the exact Kolmogorov run through the CLI.
fn gevrey_exponents(tmp: &Path) -> Outcome {
    let clock = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [0.25f64, 0.5] {
        let cfg = tmp.join(format!("kolmogorov_{s}.cfg"));
        std::fs::write(&cfg, format!("collision.s = {s}\n")).unwrap();
        let dir = format!("kolmogorov_{s}");
        let out = kacsolve(&["kolmogorov", "--config", cfg.to_str().unwrap(), "--out", &dir], tmp);
        let fits = read_json(&tmp.join(&dir).join("fits.json"));
        let x = fits["x"]["exponent_estimate"].as_f64().unwrap_or(f64::NAN);
        let v = fits["v"]["exponent_estimate"].as_f64().unwrap_or(f64::NAN);
        let target = 1.0 + 2.0 * s.min(0.5);
        let ok = out.status.success() && (x - target).abs() <= 0.15 && (v - 1.0).abs() <= 0.1;
        pass &= ok;
        parts.push(format!("s={s}: x={x:.4} (target {target}+-0.15) v={v:.4} (1+-0.1)"));
    }
    let secs = clock.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    Outcome::strict(pass, format!("{}; {secs:.2}s (< 60s)", parts.join("; ")))
}

fn bd_lemma() -> Outcome {
    let clock = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in [0.3, 0.7, 1.0] {
        let rep = check_bd_lemma(s, &random_bd_samples(&mut rng, 1_000_000, 50.0)).unwrap();
        let note = |name: &str| rep.notes.iter().find(|n| n.0 == name).map_or(f64::NAN, |n| n.1);
        let (viol, dev) = (note("violations"), note("max_dev_from_one"));
        pass &= rep.pass && viol == 0.0 && (s < 1.0 || dev <= 1e-12);
        parts.push(format!("s={s}: [{:.4}, {:.4}] violations={viol}{}", rep.inf_ratio, rep.sup_ratio, if s == 1.0 { format!(" max_dev={dev:.1e}") } else { String::new() }));
    }
    let secs = clock.elapsed().as_secs_f64();
    pass &= secs < 10.0;
    Outcome::strict(pass, format!("10^6 triples each; {}; {secs:.2}s (< 10s)", parts.join("; ")))
}

fn ukai() -> Outcome {
    let o = run_selected(&["ukai"], &VerifyConfig::default(), None).unwrap().remove(0);
    Outcome::strict(o.pass, o.summary)
}

/// Spectral operator vs the physical oracle, `K(mu, mu)` and the kernel of `L`.
fn collision_correctness() -> Outcome {
    let clock = Instant::now();
    let spec = GridSpec::with_defaults(8, 32).unwrap();
    let cs = CrossSection::new(0.25, 1.0).unwrap();
    let q = CollisionQuadrature::default_rule();
    let fine = q.refined().unwrap();
    let tr = Transform::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let line = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let a: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let k: f64 = rng.gen_range(0.3..1.5);
        spec.v_points().iter().map(|&v| (a[0] + a[1] * v + a[2] * (k * v).sin() + a[3] * v * v / 4.0) * (-v * v / 4.0).exp()).collect()
    };
    let mut oracle_err: f64 = 0.0;
    for _ in 0..5 {
        let (f, g) = (line(&mut rng), line(&mut rng));
        let ks = apply_calk_spectral(&spec, &tr.v_forward_real(&f), &tr.v_forward_real(&g), &q, &cs).unwrap();
        oracle_err = oracle_err.max(rel(&tr.v_inverse_real(&ks), &apply_calk_oracle(&spec, &f, &g, &fine, &cs).unwrap()));
    }
    let spec64 = GridSpec::with_defaults(8, 64).unwrap();
    let mu = sample_profile(Profile::Mu, &spec64);
    let kmm = l2(&apply_k_oracle(&spec64, &mu, &mu, &q, &cs).unwrap()) / l2(&mu);
    let op = CollisionOperator::new(spec64, cs, q).unwrap();
    let basis = kernel_basis(&spec64);
    let mut out = vec![0.0; 64];
    let mut kernel = Vec::new();
    for (name, f) in [("sqrt_mu", &basis.sqrt_mu), ("v_sqrt_mu", &basis.v_sqrt_mu), ("v2_sqrt_mu", &basis.v2_sqrt_mu)] {
        op.apply_l_phys(f, &mut out);
        kernel.push((name, l2(&out) / l2(f)));
    }
    let secs = clock.elapsed().as_secs_f64();
    let kernel_ok = |n: &str| kernel.iter().find(|k| k.0 == n).unwrap().1 <= 1e-6;
    let required = oracle_err <= 1e-4 && kmm <= 1e-6 && kernel_ok("sqrt_mu") && kernel_ok("v2_sqrt_mu") && secs < 120.0;
    let pass = required && kernel_ok("v_sqrt_mu");
    let items: Vec<String> = kernel
        .iter()
        .map(|(n, r)| {
            let note = if *n == "v_sqrt_mu" && *r > 1e-6 { format!(" FAIL (expected: eigenvalue {:.4}, momentum not conserved)", cs.momentum_eigenvalue()) } else { String::new() };
            format!("L({n})={r:.2e}{note}")
        })
        .collect();
    Outcome {
        pass,
        required,
        detail: format!("oracle rel={oracle_err:.2e} (<= 1e-4); K(mu,mu)={kmm:.2e} (<= 1e-6); {} (<= 1e-6); {secs:.2}s (< 120s)", items.join(", ")),
    }
}

struct Reference {
    solver: Solver,
    traj: Trajectory,
    params: MultiplierParams,
    c0: Option<f64>,
    secs: f64,
}

/// The 32x64, s = 1/4, eps0 = 1e-3, T = 1/2 run with the c0 search from 1/2.
fn reference_run() -> Reference {
    let clock = Instant::now();
    let spec = GridSpec::with_defaults(32, 64).unwrap();
    let cs = CrossSection::new(0.25, 1.0).unwrap();
    let params = MultiplierParams::new(0.25, 0.5, 1e-1, 1.0).unwrap();
    let mut cfg = SolverConfig::new(cs, params);
    cfg.eps0 = 1e-3;
    cfg.t_end = 0.5;
    let solver = Solver::new(spec, cfg).unwrap();
    let traj = solver.run_picard(&smooth(spec)).unwrap();
    let c0 = search_c0(&solver, &traj, params, 0.5, 8, 0.05).unwrap().map(|(c, _)| c);
    let mut p = params;
    p.c0 = c0.unwrap_or(params.c0);
    Reference { secs: clock.elapsed().as_secs_f64(), solver, traj, params: p, c0 }
}

const DELTAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

fn delta_uniformity_check(r: &Reference) -> Outcome {
    let clock = Instant::now();
    let (sups, spread) = delta_uniformity(&r.traj, r.params, &DELTAS).unwrap();
    let secs = r.secs + clock.elapsed().as_secs_f64();
    let sups: Vec<String> = sups.iter().map(|x| format!("{x:.4e}")).collect();
    Outcome::strict(
        r.c0.is_some() && spread < 0.1 && secs < 600.0,
        format!("c0={:.5} sups=[{}] spread={:.2}% (< 10%); {secs:.2}s (< 600s)", r.params.c0, sups.join(", "), 100.0 * spread),
    )
}

fn energy_audit_check(r: &Reference) -> Outcome {
    let psi = PsiEvaluator::new(r.params);
    let m = energy_audit(&r.solver, &r.traj, &psi, false, 0.05).unwrap();
    let g = energy_audit(&r.solver, &r.traj, &psi, true, 0.05).unwrap();
    let spec = GridSpec::with_defaults(16, 64).unwrap();
    let f0 = Transform::new(spec).forward(&smooth(spec)).unwrap();
    let kpsi = PsiEvaluator::new(MultiplierParams::new(0.25, 0.5, 0.1, 1.0).unwrap());
    let kinetic = [0.2, 0.5].iter().map(|&t| kinetic_identity_residual(&f0, 0.25, &kpsi, t, 1e-3).unwrap()).fold(0.0, f64::max);
    Outcome::strict(
        m.fraction_nonnegative >= 0.95 && kinetic <= 1e-6,
        format!(
            "M_delta audit {:.1}% of steps (>= 95%, c1={:.3e}, C~1={:.3e}); G_delta audit {:.1}%; kinetic identity residual {kinetic:.2e} (<= 1e-6)",
            100.0 * m.fraction_nonnegative,
            m.c1,
            m.c_tilde1,
            100.0 * g.fraction_nonnegative
        ),
    )
}

fn commutator_suites() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [0.25, 0.75] {
        let bench = Bench::new(&VerifyConfig { s, ..VerifyConfig::default() }).unwrap();
        for suite in [check_commutator_l_m(&bench).unwrap(), check_commutator_l_g(&bench).unwrap()] {
            let finite = suite.entries.iter().all(|e| e.sup_ratio.is_finite());
            let spread = suite.delta_spread.unwrap_or(f64::NAN);
            let ok = suite.pass && finite && spread < 0.1 && suite.grid_drift < 0.2;
            pass &= ok;
            parts.push(format!("s={s} {}: spread={:.2}% grid={:.2}%", suite.name, 100.0 * spread, 100.0 * suite.grid_drift));
        }
    }
    Outcome::strict(pass, parts.join("; "))
}

fn a_decomposition() -> Outcome {
    let bench = Bench::new(&VerifyConfig::default()).unwrap();
    let rep = check_a_decomposition(&bench).unwrap();
    Outcome::strict(
        rep.identity_residual <= 1e-8 && rep.a1_at_t0 <= 1e-12,
        format!("identity residual {:.2e} (<= 1e-8); A1 at t=0 {:.1e} (<= 1e-12, zero to rounding)", rep.identity_residual, rep.a1_at_t0),
    )
}

fn splitting_order() -> Outcome {
    let spec = GridSpec::with_defaults(16, 32).unwrap();
    let g0 = smooth(spec).scaled(1e-3);
    let t_end = 0.4;
    let run = |dt: f64| {
        let cs = CrossSection::new(0.25, 1.0).unwrap();
        let mut cfg = SolverConfig::new(cs, MultiplierParams::new(0.25, 0.5, 0.1, 1.0).unwrap());
        cfg.dt = dt;
        cfg.t_end = t_end;
        Solver::new(spec, cfg).unwrap().run_linear(&g0, None).unwrap().pop().unwrap()
    };
    let dts = [0.2, 0.1, 0.05];
    let reference = run(dts[2] / 8.0);
    let errs: Vec<f64> = dts.iter().map(|&dt| run(dt).sub(&reference).unwrap().l2() / reference.l2()).collect();
    let lx: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (_, order, _) = kac_core::norms::linear_fit(&lx, &ly);
    let errs: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    Outcome::strict((order - 2.0).abs() <= 0.2, format!("dt={dts:?} errors=[{}] vs dt/8 reference; order {order:.3} (2+-0.2)", errs.join(", ")))
}

fn determinism(tmp: &Path) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for cmd in ["simulate", "kolmogorov"] {
        let a = format!("{cmd}_a");
        let b = format!("{cmd}_b");
        pass &= kacsolve(&[cmd, "--out", &a, "--seed", "42"], tmp).status.success();
        pass &= kacsolve(&[cmd, "--out", &b, "--seed", "42"], tmp).status.success();
        for f in ["norms.csv", "fits.json"] {
            let same = std::fs::read(tmp.join(&a).join(f)).ok() == std::fs::read(tmp.join(&b).join(f)).ok();
            pass &= same;
            parts.push(format!("{cmd}/{f} {}", if same { "identical" } else { "DIFFERENT" }));
        }
    }
    Outcome::strict(pass, parts.join("; "))
}

fn main() {
    // honour `cargo test -- <filter>` style invocations that target other tests
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let reference = reference_run();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("kolmogorov_exactness", Box::new(kolmogorov_exactness)),
        ("gevrey_exponents", Box::new(|| gevrey_exponents(tmp.path()))),
        ("bd_lemma", Box::new(bd_lemma)),
        ("ukai_band", Box::new(ukai)),
        ("collision_correctness", Box::new(collision_correctness)),
        ("delta_uniformity", Box::new(|| delta_uniformity_check(&reference))),
        ("energy_audit", Box::new(|| energy_audit_check(&reference))),
        ("commutator_suites", Box::new(commutator_suites)),
        ("a_decomposition", Box::new(a_decomposition)),
        ("splitting_order", Box::new(splitting_order)),
        ("determinism", Box::new(|| determinism(tmp.path()))),
    ];
    let mut failed_required = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.pass {
            "PASS"
        } else if o.required {
            "FAIL (expected)"
        } else {
            "FAIL"
        };
        println!("{tag} criterion {}: {name}: {}", i + 1, o.detail);
        if !o.required {
            failed_required.push(*name);
        }
    }
    if !failed_required.is_empty() {
        eprintln!("acceptance failures: {}", failed_required.join(", "));
        std::process::exit(1);
    }
}
