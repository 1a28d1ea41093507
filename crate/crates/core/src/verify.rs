//! Empirical constants for the operator inequalities: trilinear bounds,
//! commutators with the multipliers, the three-term split of the weighted
//! collision pairing, the cancellation identity, the even/odd reduction and
//! the coercivity pair of `L`. Every ratio suite is evaluated on a seeded
//! corpus, re-run under quadrature refinement and grid doubling, and swept
//! over delta where a multiplier is involved.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{apply_calk_full, apply_l_full, CollisionOperator, CollisionQuadrature, CrossSection, QuadratureConfig};
use crate::error::{KacError, Result};
use crate::grid::{offgrid_weights, GridSpec, PhaseField, Transform};
use crate::multiplier::{bracket_pow, MultiplierParams, PsiEvaluator};
use crate::norms::{norm_hr_l2, sobolev_hs, vweight, TripleForm};
use crate::quadrature::composite_legendre;
use crate::solver::{hr_inner, Weight};

/// Parameters shared by the ratio suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub nx: usize,
    pub nv: usize,
    pub lx: f64,
    pub lv: f64,
    /// Cross-section exponent; the multiplier uses the same value for `s~`.
    pub s: f64,
    pub c0: f64,
    /// Time at which the multipliers are evaluated.
    pub t: f64,
    pub r: f64,
    pub deltas: Vec<f64>,
    pub n_items: usize,
    pub seed: u64,
    pub quadrature: QuadratureConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            nx: 8,
            nv: 32,
            lx: std::f64::consts::PI,
            lv: 10.0,
            s: 0.25,
            c0: 0.025,
            t: 0.5,
            r: 1.0,
            deltas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            n_items: 50,
            seed: 7,
            quadrature: QuadratureConfig::default(),
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.nx, self.nv, self.lx, self.lv)?;
        CrossSection::new(self.s, 1.0)?;
        MultiplierParams::new(self.s, self.c0, 0.5, self.r)?;
        self.quadrature.validate()?;
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(KacError::InvalidParameter("deltas must be a nonempty list in (0,1)".into()));
        }
        if self.n_items < 3 {
            return Err(KacError::InvalidParameter("corpus needs at least 3 items".into()));
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(KacError::NegativeTime(self.t));
        }
        Ok(())
    }

    fn params(&self, delta: f64) -> Result<MultiplierParams> {
        MultiplierParams::new(self.s, self.c0, delta, self.r)
    }
}

const CORPUS_KMAX: usize = 2;
const CORPUS_MMAX: i64 = 4;

/// Seeded corpus of real fields `e^{-v^2/4} sum a_km cos(k x + xi_m v) + b_km sin(k x + xi_m v)`
/// with `0 <= k <= 2`, `|m| <= 4` and Gaussian amplitudes scaled by
/// `<eta>^{-2} <xi>^{-2}`. The same seed gives the same functions on every
/// grid with the same `lv`, and all modes stay well below Nyquist.
pub fn corpus(spec: &GridSpec, n: usize, seed: u64) -> Vec<PhaseField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dxi = std::f64::consts::PI / spec.lv;
    (0..n)
        .map(|_| {
            let mut modes = Vec::new();
            for k in 0..=CORPUS_KMAX {
                for m in -CORPUS_MMAX..=CORPUS_MMAX {
                    let (eta, xi) = (k as f64, m as f64 * dxi);
                    let amp = bracket_pow(eta, -2.0) * bracket_pow(xi, -2.0);
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    modes.push((eta, xi, amp * a, amp * b));
                }
            }
            PhaseField::from_fn(*spec, |x, v| {
                let s: f64 = modes.iter().map(|&(e, q, a, b)| {
                    let ph = e * x + q * v;
                    a * ph.cos() + b * ph.sin()
                }).sum();
                s * (-v * v / 4.0).exp()
            })
        })
        .collect()
}

/// Operators, norms and corpus on one grid with one quadrature.
pub struct Setup {
    pub label: String,
    pub spec: GridSpec,
    pub tr: Transform,
    pub op: CollisionOperator,
    pub form: TripleForm,
    pub corpus: Vec<PhaseField>,
    pub t: f64,
    pub r: f64,
    pub s: f64,
}

impl Setup {
    pub fn new(label: &str, spec: GridSpec, cfg: &VerifyConfig, q: QuadratureConfig, alpha: f64) -> Result<Self> {
        let cs = CrossSection::new(cfg.s, 1.0)?;
        let quad = CollisionQuadrature::new(q)?;
        let op = CollisionOperator::new(spec, cs, quad.clone())?.with_weight_exponent(alpha)?;
        let form = TripleForm::new(spec, &quad, &cs)?;
        Ok(Setup {
            label: label.into(),
            spec,
            tr: Transform::new(spec),
            op,
            form,
            corpus: corpus(&spec, cfg.n_items, cfg.seed),
            t: cfg.t,
            r: cfg.r,
            s: cfg.s,
        })
    }

    fn inner(&self, a: &PhaseField, b: &PhaseField) -> Result<f64> {
        hr_inner(&self.tr, a, b, self.r)
    }

    fn hr(&self, g: &PhaseField) -> Result<f64> {
        norm_hr_l2(g, self.r)
    }

    fn triple(&self, g: &PhaseField) -> Result<f64> {
        self.form.value_r0(&self.tr, g, self.r)
    }

    fn m_weight(&self, params: MultiplierParams) -> Result<Weight> {
        Weight::m_delta(&PsiEvaluator::new(params), &self.spec, self.t)
    }

    fn g_weight(&self, params: MultiplierParams) -> Result<Weight> {
        Weight::g_delta(&PsiEvaluator::new(params), &self.spec, self.t)
    }
}

/// Relative size below which a majorant counts as degenerate.
const DEGENERATE: f64 = 1e-12;

fn ratio(num: f64, den: f64, den_scale: f64) -> Option<f64> {
    (den > DEGENERATE * den_scale).then(|| num.abs() / den)
}

/// Sup ratio of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub grid: String,
    pub delta: Option<f64>,
    pub sup_ratio: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Result of one ratio suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSuite {
    pub name: String,
    pub params: serde_json::Value,
    pub entries: Vec<RatioEntry>,
    /// Relative change of the sup ratio under quadrature refinement.
    pub refine_change: f64,
    /// Relative change of the sup ratio under grid doubling.
    pub grid_drift: f64,
    /// `(max - min) / max` of the sup ratio over delta, if swept.
    pub delta_spread: Option<f64>,
    /// Relative change of one ratio under rescaling of the arguments.
    pub homogeneity_error: f64,
    pub pass: bool,
}

impl RatioSuite {
    pub fn summary(&self) -> String {
        let base = self.entries.first().map_or(f64::NAN, |e| e.sup_ratio);
        format!(
            "{} {} sup={:.4e} refine={:.2e} grid={:.2e} delta_spread={} homogeneity={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            base,
            self.refine_change,
            self.grid_drift,
            self.delta_spread.map_or("n/a".into(), |d| format!("{d:.2e}")),
            self.homogeneity_error
        )
    }
}

/// The three setups every suite is evaluated on.
pub struct Bench {
    pub cfg: VerifyConfig,
    pub base: Setup,
    pub refined: Setup,
    pub doubled: Setup,
}

impl Bench {
    pub fn new(cfg: &VerifyConfig) -> Result<Self> {
        Self::with_alpha(cfg, 0.5)
    }

    pub fn with_alpha(cfg: &VerifyConfig, alpha: f64) -> Result<Self> {
        cfg.validate()?;
        let spec = GridSpec::new(cfg.nx, cfg.nv, cfg.lx, cfg.lv)?;
        let doubled = GridSpec::new(2 * cfg.nx, 2 * cfg.nv, cfg.lx, cfg.lv)?;
        Ok(Bench {
            cfg: cfg.clone(),
            base: Setup::new("base", spec, cfg, cfg.quadrature, alpha)?,
            refined: Setup::new("refined", spec, cfg, cfg.quadrature.refined(), alpha)?,
            doubled: Setup::new("doubled", doubled, cfg, cfg.quadrature, alpha)?,
        })
    }
}

/// Per triple: one `(numerator, majorant)` pair per suite.
type RatioFn<'a> = dyn Fn(&Setup, MultiplierParams, [&PhaseField; 3]) -> Result<Vec<(f64, f64)>> + Sync + 'a;

fn triples(setup: &Setup) -> Vec<[&PhaseField; 3]> {
    let n = setup.corpus.len();
    (0..n).map(|i| [&setup.corpus[i], &setup.corpus[(i + 1) % n], &setup.corpus[(i + 2) % n]]).collect()
}

fn evaluate(setup: &Setup, params: MultiplierParams, f: &RatioFn<'_>) -> Result<Vec<Vec<(f64, f64)>>> {
    triples(setup).par_iter().map(|t| f(setup, params, *t)).collect()
}

fn entry(setup: &Setup, delta: Option<f64>, vals: &[Vec<(f64, f64)>], which: usize) -> RatioEntry {
    let pairs: Vec<(f64, f64)> = vals.iter().map(|v| v[which]).collect();
    let den_scale = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    let ratios: Vec<f64> = pairs.iter().filter_map(|&(n, d)| ratio(n, d, den_scale)).collect();
    RatioEntry {
        grid: setup.label.clone(),
        delta,
        sup_ratio: ratios.iter().cloned().fold(0.0, f64::max),
        n_used: ratios.len(),
        n_excluded: pairs.len() - ratios.len(),
    }
}

fn rel_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Evaluates `f` on the corpus for each delta on the base setup and for the
/// first delta on the refined and doubled setups, producing one suite per
/// name. `scales` are the homogeneity factors applied to the three arguments.
fn run_suites(names: &[&str], bench: &Bench, sweep: bool, scales: [f64; 3], f: &RatioFn<'_>) -> Result<Vec<RatioSuite>> {
    let cfg = &bench.cfg;
    let deltas: Vec<f64> = if sweep { cfg.deltas.clone() } else { vec![cfg.deltas[0]] };
    let mut base_vals = Vec::new();
    for &d in &deltas {
        base_vals.push(evaluate(&bench.base, cfg.params(d)?, f)?);
    }
    let p0 = cfg.params(deltas[0])?;
    let refined_vals = evaluate(&bench.refined, p0, f)?;
    let doubled_vals = evaluate(&bench.doubled, p0, f)?;
    let t = triples(&bench.base)[0];
    let scaled: Vec<PhaseField> = t.iter().zip(scales).map(|(g, a)| g.scaled(a)).collect();
    let h1 = f(&bench.base, p0, t)?;
    let h2 = f(&bench.base, p0, [&scaled[0], &scaled[1], &scaled[2]])?;
    let d0 = sweep.then_some(deltas[0]);
    let mut out = Vec::new();
    for (which, name) in names.iter().enumerate() {
        let mut entries: Vec<RatioEntry> =
            deltas.iter().zip(&base_vals).map(|(&d, v)| entry(&bench.base, sweep.then_some(d), v, which)).collect();
        let refined = entry(&bench.refined, d0, &refined_vals, which);
        let doubled = entry(&bench.doubled, d0, &doubled_vals, which);
        let base = entries[0].sup_ratio;
        let refine_change = rel_change(base, refined.sup_ratio);
        let grid_drift = rel_change(base, doubled.sup_ratio);
        entries.push(refined);
        entries.push(doubled);
        let delta_spread = sweep.then(|| {
            let sups: Vec<f64> = entries[..deltas.len()].iter().map(|e| e.sup_ratio).collect();
            let max = sups.iter().cloned().fold(0.0, f64::max);
            let min = sups.iter().cloned().fold(f64::INFINITY, f64::min);
            if max > 0.0 { (max - min) / max } else { 0.0 }
        });
        let homogeneity_error = match (h1[which], h2[which]) {
            ((n1, d1), (n2, d2)) if d1 > 0.0 && d2 > 0.0 => rel_change(n1.abs() / d1, n2.abs() / d2),
            _ => 0.0,
        };
        let finite = entries.iter().all(|e| e.sup_ratio.is_finite() && e.n_used > 0);
        let pass = finite
            && refine_change < 0.05
            && grid_drift < 0.2
            && homogeneity_error < 1e-8
            && delta_spread.is_none_or(|d| d < 0.1);
        out.push(RatioSuite {
            name: (*name).into(),
            params: serde_json::json!({
                "s": cfg.s, "c0": cfg.c0, "t": cfg.t, "r": cfg.r, "nx": cfg.nx, "nv": cfg.nv,
                "n_items": cfg.n_items, "seed": cfg.seed, "alpha": bench.base.op.alpha,
            }),
            entries,
            refine_change,
            grid_drift,
            delta_spread,
            homogeneity_error,
            pass,
        });
    }
    Ok(out)
}

fn run_suite(name: &str, bench: &Bench, sweep: bool, scales: [f64; 3], f: &RatioFn<'_>) -> Result<RatioSuite> {
    Ok(run_suites(&[name], bench, sweep, scales, f)?.remove(0))
}

/// `|(calK(f, g), h)| <= C ||f||_{H^r} |||g|||_{(r,0)} |||h|||_{(r,0)}`.
pub fn check_trilinear_k(bench: &Bench) -> Result<RatioSuite> {
    let f = |s: &Setup, _: MultiplierParams, [f, g, h]: [&PhaseField; 3]| -> Result<Vec<(f64, f64)>> {
        let k = apply_calk_full(&s.op, f, g)?;
        Ok(vec![(s.inner(&k, h)?, s.hr(f)? * s.triple(g)? * s.triple(h)?)])
    };
    let name = if bench.base.op.alpha == 0.5 { "trilinear_K".to_string() } else { format!("trilinear_T_alpha_{}", bench.base.op.alpha) };
    run_suite(&name, bench, false, [2.0, 3.0, 5.0], &f)
}

/// The same bound for `T(f, g, mu^alpha)`; `bench` must be built with that `alpha`.
pub fn check_trilinear_t(bench: &Bench) -> Result<RatioSuite> {
    check_trilinear_k(bench)
}

/// `|([L, M_delta] g, h)| <= C ||M_delta g|| ||h||` with the commutator
/// `M L g - L M g`, swept over delta.
pub fn check_commutator_l_m(bench: &Bench) -> Result<RatioSuite> {
    let f = |s: &Setup, p: MultiplierParams, [_, g, h]: [&PhaseField; 3]| -> Result<Vec<(f64, f64)>> {
        let w = s.m_weight(p)?;
        let c = w.apply(&s.tr, &apply_l_full(&s.op, g)?)?.sub(&apply_l_full(&s.op, &w.apply(&s.tr, g)?)?)?;
        Ok(vec![(s.inner(&c, h)?, s.hr(&w.apply(&s.tr, g)?)? * s.hr(h)?)])
    };
    run_suite("commutator_L_M", bench, true, [1.0, 3.0, 5.0], &f)
}

/// `|([L, G_delta] g, h)| <= C ||<v>^s G_delta g|| ||h||`, swept over delta.
pub fn check_commutator_l_g(bench: &Bench) -> Result<RatioSuite> {
    let f = |s: &Setup, p: MultiplierParams, [_, g, h]: [&PhaseField; 3]| -> Result<Vec<(f64, f64)>> {
        let w = s.g_weight(p)?;
        let wg = w.apply(&s.tr, g)?;
        let c = w.apply(&s.tr, &apply_l_full(&s.op, g)?)?.sub(&apply_l_full(&s.op, &wg)?)?;
        Ok(vec![(s.inner(&c, h)?, vweight(&wg, s.r, s.s)? * s.hr(h)?)])
    };
    run_suite("commutator_L_G", bench, true, [1.0, 3.0, 5.0], &f)
}

/// `|(calK(f, G g) - G calK(f, g), h)| <= C ||G f|| ||G g|| |||h|||_{(r,0)}`.
pub fn check_nonlinear_g_commutator(bench: &Bench) -> Result<RatioSuite> {
    let f = |s: &Setup, p: MultiplierParams, [f, g, h]: [&PhaseField; 3]| -> Result<Vec<(f64, f64)>> {
        let w = s.g_weight(p)?;
        let c = apply_calk_full(&s.op, f, &w.apply(&s.tr, g)?)?.sub(&w.apply(&s.tr, &apply_calk_full(&s.op, f, g)?)?)?;
        let den = s.hr(&w.apply(&s.tr, f)?)? * s.hr(&w.apply(&s.tr, g)?)? * s.triple(h)?;
        Ok(vec![(s.inner(&c, h)?, den)])
    };
    run_suite("nonlinear_G_commutator", bench, true, [2.0, 3.0, 5.0], &f)
}

/// The three terms of `(M calK(f, g), h)` on the dual grid. With
/// `K_v(a, b)` the velocity form on coefficient lines and
/// `calK(f, g)^(eta) = Nx^{-1/2} sum_{eta'} K_v(f^(eta - eta'), g^(eta'))`:
/// `A1` collects `M(eta, xi) K_v(f, g) - K_v(f, M(eta, .) g)`, the multiplier
/// difference between the output and post-collision velocity frequencies;
/// `A2 = (calK(f, M g), h)`;
/// `A3` collects `K_v(f, {M(eta, .) - M(eta', .)} g)`, the x-frequency shift,
/// a complete gain-minus-loss form.
/// Returns the terms and the undecomposed pairing, computed in physical space.
pub fn a_terms(s: &Setup, p: MultiplierParams, f: &PhaseField, g: &PhaseField, h: &PhaseField) -> Result<([f64; 3], f64)> {
    use num_complex::Complex64;
    let spec = s.spec;
    let (nx, nv) = (spec.nx, spec.nv);
    let table = PsiEvaluator::new(p).psi_table(&spec, s.t)?;
    let m: Vec<f64> = table.iter().map(|&psi| crate::multiplier::m_from_psi(psi, p.delta)).collect();
    let (ff, gg, hh) = (s.tr.forward(f)?, s.tr.forward(g)?, s.tr.forward(h)?);
    let active = |sf: &crate::grid::SpectralField| -> Vec<bool> {
        let norms: Vec<f64> = (0..nx).map(|k| sf.line(k).iter().map(|c| c.norm_sqr()).sum::<f64>()).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        norms.iter().map(|&n| n > 1e-30 * max && n > 0.0).collect()
    };
    let (fa, ga) = (active(&ff), active(&gg));
    let scale = 1.0 / (nx as f64).sqrt();
    let etas = spec.eta_points();
    let meas = spec.dx() * spec.dv();
    let terms: Vec<[f64; 3]> = (0..nx)
        .into_par_iter()
        .map(|k| {
            let zero = Complex64::new(0.0, 0.0);
            let (mut a1, mut a2, mut a3) = (vec![zero; nv], vec![zero; nv], vec![zero; nv]);
            let mk = &m[k * nv..(k + 1) * nv];
            for kp in 0..nx {
                let kk = (k + nx - kp) % nx;
                if !fa[kk] || !ga[kp] {
                    continue;
                }
                let (fl, gl) = (ff.line(kk), gg.line(kp));
                let mkp = &m[kp * nv..(kp + 1) * nv];
                let g_k: Vec<Complex64> = gl.iter().zip(mk).map(|(c, w)| c * w).collect();
                let g_kp: Vec<Complex64> = gl.iter().zip(mkp).map(|(c, w)| c * w).collect();
                let t1 = s.op.apply_calk_spec(fl, gl);
                let t2 = s.op.apply_calk_spec(fl, &g_k);
                let t3 = s.op.apply_calk_spec(fl, &g_kp);
                for j in 0..nv {
                    a1[j] += mk[j] * t1[j] - t2[j];
                    a3[j] += t2[j] - t3[j];
                    a2[j] += t3[j];
                }
            }
            let w = bracket_pow(etas[k], 2.0 * s.r) * scale * meas;
            let hl = hh.line(k);
            let dot = |a: &[Complex64]| w * a.iter().zip(hl).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
            [dot(&a1), dot(&a2), dot(&a3)]
        })
        .collect();
    let mut a = [0.0; 3];
    for t in &terms {
        for i in 0..3 {
            a[i] += t[i];
        }
    }
    let whole = s.inner(&Weight::Spectral(m).apply(&s.tr, &apply_calk_full(&s.op, f, g)?)?, h)?;
    Ok((a, whole))
}

/// Result of the three-term split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ADecomposition {
    /// Max over corpus and delta of `|A1 + A2 + A3 - whole| / scale`, with
    /// `scale = |A1| + |A2| + |A3| + |whole|`.
    pub identity_residual: f64,
    /// Max `|A1| + |A3|` at `t = 0` relative to the scale.
    pub a1_at_t0: f64,
    pub terms: Vec<RatioSuite>,
    pub pass: bool,
}

impl ADecomposition {
    pub fn summary(&self) -> String {
        format!(
            "{} A_decomposition identity={:.2e} a1_t0={:.2e} [{}]",
            if self.pass { "PASS" } else { "FAIL" },
            self.identity_residual,
            self.a1_at_t0,
            self.terms.iter().map(|t| t.summary()).collect::<Vec<_>>().join("; ")
        )
    }
}

fn rel_residual(a: &[f64; 3], whole: f64) -> f64 {
    let scale = a.iter().map(|x| x.abs()).sum::<f64>() + whole.abs();
    if scale > 0.0 {
        (a.iter().sum::<f64>() - whole).abs() / scale
    } else {
        0.0
    }
}

/// Identity `A1 + A2 + A3 = (M calK(f, g), h)` on the corpus, `A1 = 0` at
/// `t = 0`, and the ratio of each term to its majorant:
/// `||M f|| ||M g||_{H^r H^s} ||h||` for A1,
/// `||M f|| |||M g||| |||h|||` for A2 and `||M f|| ||M g|| ||h||` for A3.
pub fn check_a_decomposition(bench: &Bench) -> Result<ADecomposition> {
    let s = &bench.base;
    let mut identity: f64 = 0.0;
    for &d in &bench.cfg.deltas {
        let p = bench.cfg.params(d)?;
        let res: Vec<f64> = triples(s)
            .par_iter()
            .map(|[f, g, h]| a_terms(s, p, f, g, h).map(|(a, whole)| rel_residual(&a, whole)))
            .collect::<Result<_>>()?;
        identity = res.iter().cloned().fold(identity, f64::max);
    }
    let at0 = Setup { t: 0.0, ..Setup::new("base_t0", s.spec, &bench.cfg, bench.cfg.quadrature, s.op.alpha)? };
    let p0 = bench.cfg.params(bench.cfg.deltas[0])?;
    let a1_at_t0 = triples(&at0)
        .par_iter()
        .map(|[f, g, h]| {
            let (a, whole) = a_terms(&at0, p0, f, g, h)?;
            let scale = a.iter().map(|x| x.abs()).sum::<f64>() + whole.abs();
            Ok(if scale > 0.0 { (a[0].abs() + a[2].abs()) / scale } else { 0.0 })
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let f = |s: &Setup, p: MultiplierParams, [f, g, h]: [&PhaseField; 3]| -> Result<Vec<(f64, f64)>> {
        let (a, _) = a_terms(s, p, f, g, h)?;
        let w = s.m_weight(p)?;
        let (mf, mg) = (w.apply(&s.tr, f)?, w.apply(&s.tr, g)?);
        let (nf, nh) = (s.hr(&mf)?, s.hr(h)?);
        Ok(vec![
            (a[0], nf * sobolev_hs(&mg, s.r, s.s)? * nh),
            (a[1], nf * s.triple(&mg)? * s.triple(h)?),
            (a[2], nf * s.hr(&mg)? * nh),
        ])
    };
    let terms = run_suites(&["A1", "A2", "A3"], bench, true, [2.0, 3.0, 5.0], &f)?;
    let pass = identity <= 1e-8 && a1_at_t0 <= 1e-12 && terms.iter().all(|t| t.pass);
    Ok(ADecomposition { identity_residual: identity, a1_at_t0, terms, pass })
}

/// Result of the cancellation identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancellationReport {
    pub n_lines: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    pub pass: bool,
}

/// `int beta(theta) int {F(xi sin(theta) + u cos(theta)) - F(u)} du dtheta
///  = int beta(theta) {1/cos(theta) - 1} dtheta int F(u) du`
/// for the trigonometric interpolant `F` of each coefficient line, with the
/// u-integrals done by composite Gauss-Legendre in the original variables.
pub fn check_cancellation(setup: &Setup, xis: &[f64], tol: f64) -> Result<CancellationReport> {
    let spec = setup.spec;
    let q = &setup.op.quadrature;
    let wb = q.beta_weights(&setup.op.cs);
    let xi_n = spec.xi_max();
    // one Gauss-Legendre panel per two grid spacings of the argument
    let dz = 2.0 * std::f64::consts::PI / spec.lv;
    let lines: Vec<Vec<num_complex::Complex64>> = setup.corpus.iter().map(|g| setup.tr.v_forward_real(g.row(0))).collect();
    let errs: Vec<f64> = lines
        .par_iter()
        .map(|line| {
            let mut w = vec![0.0; spec.nv];
            let mut eval = |z: f64| -> num_complex::Complex64 {
                offgrid_weights(spec.nv, spec.lv, z, &mut w);
                line.iter().zip(&w).map(|(c, &x)| c * x).sum()
            };
            // integral of F(a + c u) du over the u-range where the argument stays in band
            let mut integral = |a: f64, c: f64| -> num_complex::Complex64 {
                let (u0, u1) = ((-xi_n - a) / c, (xi_n - a) / c);
                let n = ((u1 - u0) * c / dz).ceil() as usize;
                let breaks: Vec<f64> = (0..=n).map(|i| u0 + (u1 - u0) * i as f64 / n as f64).collect();
                let rule = composite_legendre(&breaks, 8);
                rule.nodes.iter().zip(&rule.weights).map(|(&u, &w)| w * eval(a + c * u)).sum()
            };
            let i0 = integral(0.0, 1.0);
            let mut worst: f64 = 0.0;
            for &xi in xis {
                let (mut lhs, mut rhs) = (num_complex::Complex64::new(0.0, 0.0), num_complex::Complex64::new(0.0, 0.0));
                for (&th, &wt) in q.theta.iter().zip(&wb) {
                    let (st, ct) = th.sin_cos();
                    lhs += wt * (integral(xi * st, ct) - i0);
                    rhs += wt * (1.0 / ct - 1.0) * i0;
                }
                worst = worst.max((lhs - rhs).norm() / (lhs.norm() + rhs.norm()).max(f64::MIN_POSITIVE));
            }
            worst
        })
        .collect();
    let max = errs.iter().cloned().fold(0.0, f64::max);
    Ok(CancellationReport { n_lines: lines.len(), max_rel_error: max, tol, pass: max <= tol })
}

/// Result of the even/odd reduction check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvenOddReport {
    pub n_items: usize,
    pub max_rel_change: f64,
    pub tol: f64,
    pub pass: bool,
}

/// `f(x, v) -> (f(x, v) + f(x, -v)) / 2` on the grid (index `j -> N - j`).
pub fn even_part(f: &PhaseField) -> PhaseField {
    let nv = f.spec.nv;
    let mut out = f.clone();
    for (o, row) in out.data.chunks_mut(nv).zip(f.rows()) {
        for j in 0..nv {
            o[j] = 0.5 * (row[j] + row[(nv - j) % nv]);
        }
    }
    out
}

/// Replacing `f` by its even part in `v` leaves the A1 term unchanged: the
/// odd part cancels between the paired nodes `(theta, u)` and `(-theta, -u)`.
pub fn check_even_odd(bench: &Bench, tol: f64) -> Result<EvenOddReport> {
    let s = &bench.base;
    let p = bench.cfg.params(bench.cfg.deltas[0])?;
    let errs: Vec<f64> = triples(s)
        .par_iter()
        .map(|[f, g, h]| {
            let (a, _) = a_terms(s, p, f, g, h)?;
            let (b, _) = a_terms(s, p, &even_part(f), g, h)?;
            Ok((a[0] - b[0]).abs() / a[0].abs().max(f64::MIN_POSITIVE))
        })
        .collect::<Result<_>>()?;
    let max = errs.iter().cloned().fold(0.0, f64::max);
    Ok(EvenOddReport { n_items: errs.len(), max_rel_change: max, tol, pass: max <= tol })
}

/// Empirical pair for `(L g, g) + C ||g||^2 >= c |||g|||^2` on v-lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub c: f64,
    pub big_c: f64,
    /// Largest `(c |||g|||^2 - (L g, g)) / ||g||^2` over the corpus lines.
    pub corpus_c: f64,
    pub n_lines: usize,
    /// Lines of a held-out corpus violating the inequality.
    pub violations: usize,
    pub pass: bool,
}

fn coercivity_samples(setup: &Setup, corpus: &[PhaseField]) -> Vec<(f64, f64, f64)> {
    let nv = setup.spec.nv;
    let dv = setup.spec.dv();
    let mut out = Vec::new();
    for g in corpus {
        for line in g.rows() {
            let mut lg = vec![0.0; nv];
            setup.op.apply_l_phys(line, &mut lg);
            let a = dv * lg.iter().zip(line).map(|(x, y)| x * y).sum::<f64>();
            let n = dv * line.iter().map(|x| x * x).sum::<f64>();
            if n > 0.0 {
                out.push((a, n, setup.form.value_sq(line)));
            }
        }
    }
    out
}

/// `c` is half the median of `(L g, g) / |||g|||^2` over the corpus lines.
/// `C` is the smallest constant valid for every grid line: the largest
/// eigenvalue of `(c Q - sym(L)) / dv` with `Q` the matrix of the triple
/// form. A corpus drawn from the next seed is held out as a check.
pub fn coercivity_pair(setup: &Setup, seed: u64) -> Result<CoercivityReport> {
    let samples = coercivity_samples(setup, &setup.corpus);
    let mut ratios: Vec<f64> = samples.iter().filter(|s| s.2 > 0.0).map(|s| s.0 / s.2).collect();
    if ratios.len() < 2 {
        return Err(KacError::InsufficientData("coercivity needs at least two nonzero lines".into()));
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite ratio"));
    let c = 0.5 * ratios[ratios.len() / 2];
    let nv = setup.spec.nv;
    let dv = setup.spec.dv();
    let q = setup.form.matrix();
    let l = &setup.op.l_phys;
    let m = nalgebra::DMatrix::from_fn(nv, nv, |i, j| (c * q[i * nv + j] - 0.5 * dv * (l[i * nv + j] + l[j * nv + i])) / dv);
    let big_c = m.symmetric_eigenvalues().max().max(0.0);
    let corpus_c = samples.iter().map(|&(a, n, b)| (c * b - a) / n).fold(0.0, f64::max);
    let held_out = corpus(&setup.spec, setup.corpus.len(), seed.wrapping_add(1));
    let violations = coercivity_samples(setup, &held_out)
        .iter()
        .filter(|&&(a, n, b)| a + big_c * n < c * b - 1e-12 * (c * b).abs())
        .count();
    Ok(CoercivityReport { c, big_c, corpus_c, n_lines: samples.len(), violations, pass: c > 0.0 && big_c.is_finite() && violations == 0 })
}

/// One selectable check and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub pass: bool,
    pub summary: String,
    pub report: serde_json::Value,
}

fn outcome<T: Serialize>(name: &str, pass: bool, summary: String, report: &T) -> SuiteOutcome {
    SuiteOutcome { name: name.into(), pass, summary, report: serde_json::to_value(report).unwrap_or_default() }
}

/// Names accepted by [`run_selected`]; `all` selects every one.
pub const SUITES: &[&str] = &[
    "bd",
    "ukai",
    "transport",
    "mdelta",
    "gdelta",
    "factorization",
    "trilinear_k",
    "trilinear_t",
    "commutator_lm",
    "commutator_lg",
    "a_decomposition",
    "nonlinear_g",
    "cancellation",
    "evenodd",
    "coercivity",
];

/// Expands a selector list (`all` or suite names) and rejects unknown or empty selections.
pub fn resolve_selector(selector: &[String]) -> Result<Vec<&'static str>> {
    if selector.is_empty() {
        return Err(KacError::InvalidParameter(format!("empty suite selector; choose from all, {}", SUITES.join(", "))));
    }
    let mut out = Vec::new();
    for name in selector {
        if name == "all" {
            return Ok(SUITES.to_vec());
        }
        match SUITES.iter().find(|s| **s == name) {
            Some(s) => out.push(*s),
            None => return Err(KacError::InvalidParameter(format!("unknown suite {name:?}; choose from all, {}", SUITES.join(", ")))),
        }
    }
    Ok(out)
}

/// Runs the named checks in order. `s` for the bd check is the configured
/// `s` unless overridden by `bd_s`.
pub fn run_selected(names: &[&str], cfg: &VerifyConfig, bd_s: Option<f64>) -> Result<Vec<SuiteOutcome>> {
    use crate::multiplier::*;
    cfg.validate()?;
    let mut bench: Option<Bench> = None;
    let mut out = Vec::new();
    let needs_bench = |n: &str| {
        matches!(n, "trilinear_k" | "commutator_lm" | "commutator_lg" | "a_decomposition" | "nonlinear_g" | "cancellation" | "evenodd" | "coercivity")
    };
    for &name in names {
        if needs_bench(name) && bench.is_none() {
            bench = Some(Bench::new(cfg)?);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let p = PsiEvaluator::new(cfg.params(cfg.deltas[0])?);
        let o = match name {
            "bd" => {
                let s = bd_s.unwrap_or(cfg.s);
                let rep = check_bd_lemma(s, &random_bd_samples(&mut rng, 1_000_000, 50.0))?;
                let dev = rep.notes.iter().find(|n| n.0 == "max_dev_from_one").map_or(f64::NAN, |n| n.1);
                let summary = format!("{} bd s={s} range=[{:.6}, {:.6}] max_dev={dev:.2e}", pf(rep.pass), rep.inf_ratio, rep.sup_ratio);
                outcome(name, rep.pass, summary, &rep)
            }
            "ukai" => {
                let mut reps = Vec::new();
                let mut pass = true;
                for alpha in [0.5, 1.0] {
                    let a = check_ukai(alpha, &random_log_samples(&mut rng, 10_000, 1e-3, 1e3), 32)?;
                    let b = check_ukai(alpha, &random_log_samples(&mut rng, 100_000, 1e-3, 1e3), 32)?;
                    let stable = rel_change(a.c_low, b.c_low) < 0.05 && rel_change(a.c_high, b.c_high) < 0.05;
                    pass &= a.c_low > 0.0 && stable;
                    reps.push((a, b, stable));
                }
                let summary = format!(
                    "{} ukai {}",
                    pf(pass),
                    reps.iter()
                        .map(|(a, b, _)| format!("alpha={} band=[{:.4}, {:.4}] 10x=[{:.4}, {:.4}]", a.alpha, a.c_low, a.c_high, b.c_low, b.c_high))
                        .collect::<Vec<_>>()
                        .join("; ")
                );
                outcome(name, pass, summary, &reps)
            }
            "transport" => {
                let rep = check_transport_identity(&p, &random_tx_samples(&mut rng, 1000, 2.0, 50.0), 1e-6);
                outcome(name, rep.pass, format!("{} transport_identity max_dev={:.2e}", pf(rep.pass), rep.sup_ratio), &rep)
            }
            "mdelta" => {
                let rep = check_mdelta_derivatives(&p, &random_tx_samples(&mut rng, 1000, 2.0, 50.0));
                outcome(name, rep.pass, format!("{} mdelta_derivatives sup={:.4e}", pf(rep.pass), rep.sup_ratio), &rep)
            }
            "gdelta" => {
                use rand::Rng;
                let smp: Vec<(f64, f64)> = (0..1000).map(|_| (rng.gen_range(0.0..2.0), rng.gen_range(-50.0..50.0))).collect();
                let rep = check_gdelta_derivatives(&p, &smp);
                outcome(name, rep.pass, format!("{} gdelta_derivatives sup={:.4e}", pf(rep.pass), rep.sup_ratio), &rep)
            }
            "factorization" => {
                let rep = check_factorization_lemma(&p, &random_factorization_samples(&mut rng, 10_000, 2.0, 20.0));
                outcome(name, rep.pass, format!("{} factorization sup={:.4e}", pf(rep.pass), rep.sup_ratio), &rep)
            }
            "trilinear_k" => {
                let b = bench.as_ref().expect("bench built");
                let rep = check_trilinear_k(b)?;
                outcome(name, rep.pass, rep.summary(), &rep)
            }
            "trilinear_t" => {
                let mut reps = Vec::new();
                for alpha in [0.3, 1.0] {
                    reps.push(check_trilinear_t(&Bench::with_alpha(cfg, alpha)?)?);
                }
                let ordered = reps[0].entries[0].sup_ratio > reps[1].entries[0].sup_ratio;
                let pass = reps.iter().all(|r| r.pass);
                let summary = format!(
                    "{} trilinear_T alpha=0.3 sup={:.4e} alpha=1 sup={:.4e} ordered={ordered} [{}]",
                    pf(pass),
                    reps[0].entries[0].sup_ratio,
                    reps[1].entries[0].sup_ratio,
                    reps.iter().map(|r| r.summary()).collect::<Vec<_>>().join("; ")
                );
                outcome(name, pass, summary, &reps)
            }
            "commutator_lm" => {
                let rep = check_commutator_l_m(bench.as_ref().expect("bench built"))?;
                outcome(name, rep.pass, rep.summary(), &rep)
            }
            "commutator_lg" => {
                let rep = check_commutator_l_g(bench.as_ref().expect("bench built"))?;
                outcome(name, rep.pass, rep.summary(), &rep)
            }
            "a_decomposition" => {
                let rep = check_a_decomposition(bench.as_ref().expect("bench built"))?;
                outcome(name, rep.pass, rep.summary(), &rep)
            }
            "nonlinear_g" => {
                let rep = check_nonlinear_g_commutator(bench.as_ref().expect("bench built"))?;
                outcome(name, rep.pass, rep.summary(), &rep)
            }
            "cancellation" => {
                let rep = check_cancellation(&bench.as_ref().expect("bench built").base, &[0.0, 0.7, 1.9], 1e-8)?;
                outcome(name, rep.pass, format!("{} cancellation max_rel={:.2e}", pf(rep.pass), rep.max_rel_error), &rep)
            }
            "evenodd" => {
                let rep = check_even_odd(bench.as_ref().expect("bench built"), 1e-10)?;
                outcome(name, rep.pass, format!("{} evenodd max_rel={:.2e}", pf(rep.pass), rep.max_rel_change), &rep)
            }
            "coercivity" => {
                let rep = coercivity_pair(&bench.as_ref().expect("bench built").base, cfg.seed)?;
                let summary = format!("{} coercivity c={:.4e} C={:.4e} violations={}", pf(rep.pass), rep.c, rep.big_c, rep.violations);
                outcome(name, rep.pass, summary, &rep)
            }
            other => return Err(KacError::InvalidParameter(format!("unknown suite {other:?}"))),
        };
        out.push(o);
    }
    Ok(out)
}

/// `(t, eta, xi)` with `t`, `|eta|`, `|xi|` log-uniform on `[lo, hi]` and random signs.
pub fn random_log_samples<R: rand::Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<crate::multiplier::TxSample> {
    let (a, b) = (lo.ln(), hi.ln());
    let draw = |rng: &mut R| (rng.gen_range(a..b)).exp();
    (0..n)
        .map(|_| {
            let t = draw(rng);
            let eta = draw(rng) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let xi = draw(rng) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            crate::multiplier::TxSample { t, eta, xi }
        })
        .collect()
}

fn pf(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
