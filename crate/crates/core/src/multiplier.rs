//! Exponential weights `Psi`, `M_delta`, `G_delta` and executable checks of
//! their elementary calculus.
//!
//! `Psi(t, eta, xi) = c0 int_0^t <xi + rho eta>^{2 s~} d rho` with
//! `s~ = min(s, 1/2)`, `M_delta = e^Psi / (1 + delta e^Psi)` and
//! `G_delta(t, v) = e^{c0 t <v>^{2 s~}} / (1 + delta e^{c0 t <v>^{2 s~}})`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::grid::GridSpec;
use crate::quadrature::{gauss_legendre, Rule};

/// Japanese bracket `<x> = sqrt(1 + x^2)`.
#[inline]
pub fn bracket(x: f64) -> f64 {
    x.hypot(1.0)
}

/// `<x>^p`.
#[inline]
pub fn bracket_pow(x: f64, p: f64) -> f64 {
    (1.0 + x * x).powf(0.5 * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierParams {
    pub s: f64,
    pub s_tilde: f64,
    pub c0: f64,
    pub delta: f64,
    pub r: f64,
}

impl MultiplierParams {
    pub fn new(s: f64, c0: f64, delta: f64, r: f64) -> Result<Self> {
        let p = MultiplierParams { s, s_tilde: s.min(0.5), c0, delta, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(KacError::InvalidParameter(format!("s = {} must lie in (0,1)", self.s)));
        }
        if self.s_tilde != self.s.min(0.5) {
            return Err(KacError::InvalidParameter("s_tilde must equal min(s, 1/2)".into()));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(KacError::InvalidParameter(format!("c0 = {} must be positive", self.c0)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(KacError::InvalidParameter(format!(
                "delta = {} must lie in (0,1)",
                self.delta
            )));
        }
        if !(self.r > 0.5 && self.r.is_finite()) {
            return Err(KacError::InvalidParameter(format!("r = {} must exceed 1/2", self.r)));
        }
        Ok(())
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let mut p = *self;
        p.delta = delta;
        p.validate()?;
        Ok(p)
    }

    /// Exponent `2 s~` of the bracket weights.
    pub fn sigma(&self) -> f64 {
        2.0 * self.s_tilde
    }
}

/// Evaluates `int_0^t <xi + rho eta>^p d rho` by composite Gauss–Legendre.
///
/// The integrand is analytic with branch points at `xi + rho eta = +-i`, so
/// panels are split at `z = 0` and `z = +-2^k` in the variable
/// `z = xi + rho eta`, keeping every panel within a fixed ratio of its
/// distance to the singularities.
#[derive(Debug, Clone)]
pub struct BracketIntegrator {
    rule: Rule,
}

impl BracketIntegrator {
    pub fn new(order: usize) -> Self {
        BracketIntegrator { rule: gauss_legendre(order.max(2)) }
    }

    pub fn order(&self) -> usize {
        self.rule.len()
    }

    /// Signed integral; `t < 0` integrates backwards.
    pub fn integrate(&self, t: f64, eta: f64, xi: f64, p: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        if eta == 0.0 {
            return t * bracket_pow(xi, p);
        }
        let z0 = xi;
        let z1 = xi + t * eta;
        let (lo, hi) = if z0 < z1 { (z0, z1) } else { (z1, z0) };
        let mut breaks = vec![lo];
        let top = lo.abs().max(hi.abs());
        let mut cuts = vec![0.0];
        let mut k = 1.0;
        while k < top {
            cuts.push(k);
            cuts.push(-k);
            k *= 2.0;
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cut"));
        for c in cuts {
            if c > lo && c < hi {
                breaks.push(c);
            }
        }
        breaks.push(hi);
        // map back to rho so that small |t eta| never divides by eta
        let to_rho = |z: f64| if z == z0 { 0.0 } else if z == z1 { t } else { (z - xi) / eta };
        let mut total = 0.0;
        for w in breaks.windows(2) {
            let (ra, rb) = (to_rho(w[0]), to_rho(w[1]));
            let half = 0.5 * (rb - ra);
            let mid = 0.5 * (rb + ra);
            let mut acc = 0.0;
            for (&x, &wt) in self.rule.nodes.iter().zip(&self.rule.weights) {
                acc += wt * bracket_pow(xi + (mid + half * x) * eta, p);
            }
            total += half * acc;
        }
        // the integrand is positive, so only the orientation of [0, t] matters
        total.abs() * t.signum()
    }
}

/// Evaluator for `Psi`, `M_delta` and `G_delta`.
#[derive(Debug, Clone)]
pub struct PsiEvaluator {
    pub params: MultiplierParams,
    pub rho_quadrature_order: usize,
    integrator: BracketIntegrator,
}

impl PsiEvaluator {
    pub fn new(params: MultiplierParams) -> Self {
        Self::with_order(params, 32)
    }

    pub fn with_order(params: MultiplierParams, order: usize) -> Self {
        PsiEvaluator { params, rho_quadrature_order: order, integrator: BracketIntegrator::new(order) }
    }

    pub fn with_params(&self, params: MultiplierParams) -> Self {
        PsiEvaluator { params, rho_quadrature_order: self.rho_quadrature_order, integrator: self.integrator.clone() }
    }

    /// `Psi` for any real `t` (negative `t` integrates backwards).
    pub fn psi_signed(&self, t: f64, eta: f64, xi: f64) -> f64 {
        self.params.c0 * self.integrator.integrate(t, eta, xi, self.params.sigma())
    }

    pub fn psi(&self, t: f64, eta: f64, xi: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.psi_signed(t, eta, xi))
    }

    pub fn m_delta(&self, t: f64, eta: f64, xi: f64) -> Result<f64> {
        Ok(m_from_psi(self.psi(t, eta, xi)?, self.params.delta))
    }

    pub fn g_delta(&self, t: f64, v: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.g_delta_unchecked(t, v))
    }

    pub fn g_delta_unchecked(&self, t: f64, v: f64) -> f64 {
        let e = self.params.c0 * t * bracket_pow(v, self.params.sigma());
        m_from_psi(e, self.params.delta)
    }

    /// `Psi(t, eta_k, xi_m)` on the dual grid, FFT-ordered, row-major in k.
    pub fn psi_table(&self, spec: &GridSpec, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        let etas = spec.eta_points();
        let xis = spec.xi_points();
        let mut out = Vec::with_capacity(spec.len());
        for &eta in &etas {
            for &xi in &xis {
                out.push(self.psi_signed(t, eta, xi));
            }
        }
        Ok(out)
    }

    /// `G_delta(t, v_j)` on the velocity grid.
    pub fn g_delta_line(&self, spec: &GridSpec, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        Ok(spec.v_points().iter().map(|&v| self.g_delta_unchecked(t, v)).collect())
    }
}

fn check_time(t: f64) -> Result<()> {
    if t < 0.0 || t.is_nan() {
        return Err(KacError::NegativeTime(t));
    }
    Ok(())
}

/// `e^Psi / (1 + delta e^Psi)` in the overflow-safe form `1 / (delta + e^{-Psi})`.
#[inline]
pub fn m_from_psi(psi: f64, delta: f64) -> f64 {
    1.0 / (delta + (-psi).exp())
}

/// Report of one lemma checker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub n_samples: usize,
    pub sup_ratio: f64,
    pub inf_ratio: f64,
    pub params: serde_json::Value,
    pub pass: bool,
    #[serde(default)]
    pub notes: Vec<(String, f64)>,
}

fn step(scale: f64) -> f64 {
    f64::EPSILON.cbrt() * scale.max(1.0)
}

/// Richardson-extrapolated central first derivative.
pub fn richardson_d1(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

/// Richardson-extrapolated central second derivative.
pub fn richardson_d2(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let fx = f(x);
    let d = |h: f64| (f(x + h) - 2.0 * fx + f(x - h)) / (h * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

/// One `(t, eta, xi)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxSample {
    pub t: f64,
    pub eta: f64,
    pub xi: f64,
}

pub fn random_tx_samples<R: Rng>(rng: &mut R, n: usize, t_max: f64, freq_max: f64) -> Vec<TxSample> {
    (0..n)
        .map(|_| TxSample {
            t: rng.gen_range(0.0..t_max),
            eta: rng.gen_range(-freq_max..freq_max),
            xi: rng.gen_range(-freq_max..freq_max),
        })
        .collect()
}

/// Checks `(d_t - eta d_xi) Psi = c0 <xi>^{2 s~}` by directional finite differences.
pub fn check_transport_identity(p: &PsiEvaluator, samples: &[TxSample], tol: f64) -> LemmaReport {
    let c0 = p.params.c0;
    let sigma = p.params.sigma();
    let mut sup: f64 = 0.0;
    for smp in samples {
        let f = |h: f64| p.psi_signed(smp.t + h, smp.eta, smp.xi - smp.eta * h);
        let h = step(smp.t.abs().max(1.0 / (1.0 + smp.eta.abs())));
        let lhs = richardson_d1(f, 0.0, h);
        let rhs = c0 * bracket_pow(smp.xi, sigma);
        sup = sup.max((lhs - rhs).abs() / rhs);
    }
    LemmaReport {
        lemma: "transport_identity".into(),
        n_samples: samples.len(),
        sup_ratio: sup,
        inf_ratio: 0.0,
        params: serde_json::to_value(p.params).unwrap_or_default(),
        pass: sup <= tol,
        notes: vec![("max_rel_deviation".into(), sup)],
    }
}

/// `(t, xi, eta)` samples on a tensor log-grid with both signs of the frequencies.
pub fn ukai_log_grid(n: usize, lo: f64, hi: f64) -> Vec<TxSample> {
    let pts: Vec<f64> = (0..n)
        .map(|i| {
            let a = i as f64 / (n - 1).max(1) as f64;
            (lo.ln() + a * (hi.ln() - lo.ln())).exp()
        })
        .collect();
    let mut out = Vec::with_capacity(4 * n * n * n);
    for &t in &pts {
        for &x in &pts {
            for &e in &pts {
                for (sx, se) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    out.push(TxSample { t, eta: se * e, xi: sx * x });
                }
            }
        }
    }
    out
}

/// Band of `int_0^t <xi + rho eta>^alpha d rho / (t (1 + |xi|^alpha + t^alpha |eta|^alpha))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UkaiBand {
    pub alpha: f64,
    pub c_low: f64,
    pub c_high: f64,
    pub n_samples: usize,
}

pub fn ukai_ratio(integrator: &BracketIntegrator, alpha: f64, smp: &TxSample) -> f64 {
    let lhs = integrator.integrate(smp.t, smp.eta, smp.xi, alpha);
    let rhs = smp.t * (1.0 + smp.xi.abs().powf(alpha) + (smp.t * smp.eta.abs()).powf(alpha));
    lhs / rhs
}

pub fn check_ukai(alpha: f64, samples: &[TxSample], order: usize) -> Result<UkaiBand> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(KacError::InvalidParameter(format!("alpha = {alpha} must lie in (0,2]")));
    }
    let valid: Vec<&TxSample> = samples.iter().filter(|s| s.t > 0.0).collect();
    if valid.len() < 2 {
        return Err(KacError::InsufficientData("ukai check needs samples with t > 0".into()));
    }
    let integrator = BracketIntegrator::new(order);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for smp in &valid {
        let r = ukai_ratio(&integrator, alpha, smp);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(UkaiBand { alpha, c_low: lo, c_high: hi, n_samples: valid.len() })
}

/// Sup of `|d_xi M| / M` and `|d_xi^2 M| / M` over the samples.
pub fn check_mdelta_derivatives(p: &PsiEvaluator, samples: &[TxSample]) -> LemmaReport {
    let delta = p.params.delta;
    let (mut s1, mut s2) = (0.0_f64, 0.0_f64);
    for smp in samples {
        let m = |xi: f64| m_from_psi(p.psi_signed(smp.t, smp.eta, xi), delta);
        let h = step(smp.xi.abs());
        let m0 = m(smp.xi);
        s1 = s1.max(richardson_d1(m, smp.xi, h).abs() / m0);
        s2 = s2.max(richardson_d2(m, smp.xi, f64::EPSILON.powf(0.25) * smp.xi.abs().max(1.0)).abs() / m0);
    }
    LemmaReport {
        lemma: "mdelta_derivatives".into(),
        n_samples: samples.len(),
        sup_ratio: s1.max(s2),
        inf_ratio: 0.0,
        params: serde_json::to_value(p.params).unwrap_or_default(),
        pass: s1.is_finite() && s2.is_finite(),
        notes: vec![("sup_d1".into(), s1), ("sup_d2".into(), s2)],
    }
}

/// Sup of `|d_v G| / (<v>^{2s~-1} G)` and `|d_v^2 G| / (<v>^{4s~-2} G)` over `(t, v)` samples.
pub fn check_gdelta_derivatives(p: &PsiEvaluator, samples: &[(f64, f64)]) -> LemmaReport {
    let sigma = p.params.sigma();
    let (mut s1, mut s2) = (0.0_f64, 0.0_f64);
    for &(t, v) in samples {
        let g = |v: f64| p.g_delta_unchecked(t, v);
        let g0 = g(v);
        let d1 = richardson_d1(g, v, step(v.abs()));
        let d2 = richardson_d2(g, v, f64::EPSILON.powf(0.25) * v.abs().max(1.0));
        s1 = s1.max(d1.abs() / (bracket_pow(v, sigma - 1.0) * g0));
        s2 = s2.max(d2.abs() / (bracket_pow(v, 2.0 * sigma - 2.0) * g0));
    }
    LemmaReport {
        lemma: "gdelta_derivatives".into(),
        n_samples: samples.len(),
        sup_ratio: s1.max(s2),
        inf_ratio: 0.0,
        params: serde_json::to_value(p.params).unwrap_or_default(),
        pass: s1.is_finite() && s2.is_finite(),
        notes: vec![("sup_d1".into(), s1), ("sup_d2".into(), s2)],
    }
}

/// One sample of the factorization lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizationSample {
    pub t: f64,
    pub eta: f64,
    pub eta1: f64,
    pub xi: f64,
    pub u: f64,
    pub theta: f64,
    pub tau: f64,
}

/// `LHS / RHS` of the factorization inequality without the guard factor.
pub fn factorization_ratio(p: &PsiEvaluator, smp: &FactorizationSample) -> (f64, f64) {
    let (st, ct) = smp.theta.sin_cos();
    let xi_p = smp.xi * ct - smp.u * st;
    let u_p = smp.xi * st + smp.u * ct;
    let xi_tau = xi_p - smp.tau * (xi_p - smp.xi);
    let d = p.params.delta;
    let m = |eta: f64, xi: f64| m_from_psi(p.psi_signed(smp.t, eta, xi), d);
    let lhs = m(smp.eta, xi_tau);
    let de = smp.eta - smp.eta1;
    let core = m(smp.eta1, xi_p) * m(de, u_p).max(m(de, -u_p));
    let bu = bracket_pow(smp.u, p.params.sigma());
    let plain = lhs / (core * bu.exp());
    let guard = (p.params.c0 * smp.t).max(1.0);
    let guarded = lhs / (core * (guard * bu).exp());
    (plain, guarded)
}

/// Checks `M(t, eta, xi_tau) <= 9 M(t, eta1, xi') max(M(t, eta-eta1, +-u')) e^{max(c0 t, 1) <u>^{2s~}}`.
pub fn check_factorization_lemma(p: &PsiEvaluator, samples: &[FactorizationSample]) -> LemmaReport {
    let (mut sup_plain, mut sup_guarded) = (0.0_f64, 0.0_f64);
    for smp in samples {
        let (a, b) = factorization_ratio(p, smp);
        sup_plain = sup_plain.max(a);
        sup_guarded = sup_guarded.max(b);
    }
    LemmaReport {
        lemma: "factorization".into(),
        n_samples: samples.len(),
        sup_ratio: sup_plain,
        inf_ratio: 0.0,
        params: serde_json::to_value(p.params).unwrap_or_default(),
        pass: sup_guarded <= 9.0,
        notes: vec![("sup_guarded_ratio".into(), sup_guarded)],
    }
}

pub fn random_factorization_samples<R: Rng>(
    rng: &mut R,
    n: usize,
    t_max: f64,
    freq_max: f64,
) -> Vec<FactorizationSample> {
    use std::f64::consts::FRAC_PI_2;
    (0..n)
        .map(|_| FactorizationSample {
            t: rng.gen_range(0.0..t_max),
            eta: rng.gen_range(-freq_max..freq_max),
            eta1: rng.gen_range(-freq_max..freq_max),
            xi: rng.gen_range(-freq_max..freq_max),
            u: rng.gen_range(-freq_max..freq_max),
            theta: rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
            tau: rng.gen_range(0.0..1.0),
        })
        .collect()
}

/// `(<v*>^{2s} + <v>^{2s}) / (<v*'>^{2s} + <v'>^{2s})` for the rotation by `theta`.
pub fn bd_ratio(s: f64, v: f64, vs: f64, theta: f64) -> f64 {
    let (st, ct) = theta.sin_cos();
    let vp = v * ct - vs * st;
    let vsp = v * st + vs * ct;
    let p = 2.0 * s;
    (bracket_pow(vs, p) + bracket_pow(v, p)) / (bracket_pow(vsp, p) + bracket_pow(vp, p))
}

/// Checks `2^{s-1} <= ratio <= 2^{1-s}` (and ratio = 1 at s = 1).
pub fn check_bd_lemma(s: f64, samples: &[(f64, f64, f64)]) -> Result<LemmaReport> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(KacError::InvalidParameter(format!("s = {s} must lie in (0,1]")));
    }
    let (lo_b, hi_b) = (2f64.powf(s - 1.0), 2f64.powf(1.0 - s));
    let (mut lo, mut hi, mut dev) = (f64::INFINITY, 0.0_f64, 0.0_f64);
    let mut violations = 0usize;
    for &(v, vs, th) in samples {
        let r = bd_ratio(s, v, vs, th);
        lo = lo.min(r);
        hi = hi.max(r);
        dev = dev.max((r - 1.0).abs());
        // one ulp of slack for the boundary cases
        if r < lo_b * (1.0 - 4.0 * f64::EPSILON) || r > hi_b * (1.0 + 4.0 * f64::EPSILON) {
            violations += 1;
        }
    }
    let mut pass = violations == 0;
    if s == 1.0 {
        pass &= dev <= 1e-12;
    }
    Ok(LemmaReport {
        lemma: "bd".into(),
        n_samples: samples.len(),
        sup_ratio: hi,
        inf_ratio: lo,
        params: serde_json::json!({ "s": s }),
        pass,
        notes: vec![("violations".into(), violations as f64), ("max_dev_from_one".into(), dev)],
    })
}

pub fn random_bd_samples<R: Rng>(rng: &mut R, n: usize, v_max: f64) -> Vec<(f64, f64, f64)> {
    use std::f64::consts::PI;
    (0..n)
        .map(|_| {
            // mix of bulk and large-velocity samples
            let scale = if rng.gen_bool(0.5) { v_max } else { v_max * 1e3 };
            (
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
                rng.gen_range(-PI..PI),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval(s: f64, c0: f64, delta: f64) -> PsiEvaluator {
        PsiEvaluator::new(MultiplierParams::new(s, c0, delta, 1.0).unwrap())
    }

    #[test]
    fn params_validation() {
        assert!(MultiplierParams::new(0.0, 1.0, 0.1, 1.0).is_err());
        assert!(MultiplierParams::new(0.3, 0.0, 0.1, 1.0).is_err());
        assert!(MultiplierParams::new(0.3, 1.0, 1.0, 1.0).is_err());
        assert!(MultiplierParams::new(0.3, 1.0, 0.1, 0.5).is_err());
        let p = MultiplierParams::new(0.75, 1.0, 0.1, 1.0).unwrap();
        assert_eq!(p.s_tilde, 0.5);
        let mut bad = p;
        bad.s_tilde = 0.75;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn psi_basic_values() {
        let e = eval(0.5, 1.0, 0.1);
        assert_eq!(e.psi(0.0, 3.0, 2.0).unwrap(), 0.0);
        assert!((e.psi(1.7, 0.0, 2.0).unwrap() - 1.7 * 5f64.sqrt()).abs() < 1e-14);
        let exact = 0.5 * (2.0 * 5f64.sqrt() + 2f64.asinh());
        assert!((e.psi(2.0, 1.0, 0.0).unwrap() - exact).abs() < 1e-12 * exact);
        assert!(matches!(e.psi(-1.0, 0.0, 0.0), Err(KacError::NegativeTime(_))));
    }

    #[test]
    fn psi_matches_closed_form_over_many_scales() {
        // antiderivative of sqrt(1+z^2)
        let anti = |z: f64| 0.5 * (z * bracket(z) + z.asinh());
        let e = eval(0.5, 1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let t: f64 = rng.gen_range(0.0..3.0);
            let eta: f64 = rng.gen_range(-200.0..200.0);
            let xi: f64 = rng.gen_range(-200.0..200.0);
            let got = e.psi(t, eta, xi).unwrap();
            let exact = if eta.abs() < 1e-3 {
                continue;
            } else {
                (anti(xi + t * eta) - anti(xi)) / eta
            };
            assert!((got - exact).abs() <= 1e-10 * exact.abs().max(1e-300), "{t} {eta} {xi}");
        }
    }

    #[test]
    fn psi_symmetry_and_lower_bound() {
        let e = eval(0.25, 0.7, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for smp in random_tx_samples(&mut rng, 10_000, 2.0, 50.0) {
            let a = e.psi_signed(smp.t, smp.eta, smp.xi);
            let b = e.psi_signed(smp.t, smp.eta, -smp.t * smp.eta - smp.xi);
            assert!((a - b).abs() <= 1e-10 * (1.0 + a));
            assert!(a >= 0.7 * smp.t * (1.0 - 1e-14));
        }
    }

    #[test]
    fn m_delta_limits() {
        let e = eval(0.25, 1.0, 0.1);
        for (eta, xi) in [(0.0, 0.0), (5.0, -3.0)] {
            assert!((e.m_delta(0.0, eta, xi).unwrap() - 1.0 / 1.1).abs() < 1e-15);
        }
        // relative gap to e^Psi is exactly delta e^Psi / (1 + delta e^Psi)
        for psi in [0.0, 1.0, 3.3, 4.5, 5.0] {
            let gap = (m_from_psi(psi, 1e-8) / psi.exp() - 1.0).abs();
            let d = 1e-8 * psi.exp();
            assert!((gap - d / (1.0 + d)).abs() < 1e-12);
            if psi <= 4.5 {
                assert!(gap < 1e-6);
            }
        }
        assert!((m_from_psi(200.0, 1e-2) - 100.0).abs() < 1e-6);
        assert!(m_from_psi(1e6, 1e-2).is_finite());
    }

    #[test]
    fn g_delta_values() {
        let e = eval(0.5, 1.0, 0.1);
        assert!((e.g_delta(0.0, 3.0).unwrap() - 1.0 / 1.1).abs() < 1e-15);
        let expected = 1f64.exp() / (1.0 + 0.1 * 1f64.exp());
        assert!((e.g_delta(1.0, 0.0).unwrap() - expected).abs() < 1e-14);
        for v in [0.3, 2.0, 17.0] {
            assert_eq!(e.g_delta(0.8, v).unwrap(), e.g_delta(0.8, -v).unwrap());
            assert!(e.g_delta(0.8, v).unwrap() < e.g_delta(0.8, v + 0.5).unwrap());
            assert!(e.g_delta(0.8, v).unwrap() <= 10.0);
        }
    }

    #[test]
    fn transport_identity_holds() {
        let e = eval(0.5, 1.0, 0.1);
        let r = check_transport_identity(&e, &[TxSample { t: 1.0, eta: 1.0, xi: 0.0 }], 1e-6);
        assert!(r.pass, "{r:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in [0.25, 0.5, 0.8] {
            let e = eval(s, 0.6, 0.1);
            let r = check_transport_identity(&e, &random_tx_samples(&mut rng, 1000, 2.0, 10.0), 1e-6);
            assert!(r.pass, "s={s}: {r:?}");
        }
    }

    #[test]
    fn ukai_trivial_cases() {
        let integ = BracketIntegrator::new(32);
        assert_eq!(ukai_ratio(&integ, 1.0, &TxSample { t: 0.5, eta: 0.0, xi: 0.0 }), 1.0 / 1.0);
        let r = ukai_ratio(&integ, 1.0, &TxSample { t: 1.0, eta: 0.0, xi: 1e6 });
        assert!((r - 1.0).abs() < 1e-3);
        assert!(check_ukai(0.0, &[], 32).is_err());
        assert!(check_ukai(1.0, &[TxSample { t: 0.0, eta: 1.0, xi: 1.0 }], 32).is_err());
    }

    #[test]
    fn mdelta_derivative_ratios() {
        let e = eval(0.25, 1.0, 0.1);
        let r0 = check_mdelta_derivatives(&e, &[TxSample { t: 0.0, eta: 2.0, xi: 1.0 }]);
        assert!(r0.sup_ratio < 1e-6);
        // eta = 0: |d_xi M|/M <= c0 t sigma <xi>^{sigma-1} <= 2 c0 t
        let t = 0.9;
        let samples: Vec<TxSample> =
            (0..200).map(|i| TxSample { t, eta: 0.0, xi: -20.0 + 0.2 * i as f64 }).collect();
        let r = check_mdelta_derivatives(&e, &samples);
        assert!(r.notes[0].1 <= 2.0 * t * 1.0001);
    }

    #[test]
    fn gdelta_derivative_ratios() {
        let e = eval(0.5, 1.0, 0.1);
        let d1 = richardson_d1(|v| e.g_delta_unchecked(1.0, v), 0.0, 1e-5);
        assert!(d1.abs() < 1e-9);
        let r = check_gdelta_derivatives(&e, &[(0.0, 3.0)]);
        assert!(r.sup_ratio < 1e-5);
        let samples: Vec<(f64, f64)> = (0..401).map(|i| (1.0, -20.0 + 0.1 * i as f64)).collect();
        let r = check_gdelta_derivatives(&e, &samples);
        assert!(r.pass && r.sup_ratio < 10.0);
    }

    #[test]
    fn factorization_trivial_collapses() {
        let e = eval(0.25, 1.0, 0.1);
        let base = FactorizationSample { t: 0.0, eta: 1.0, eta1: 0.3, xi: 2.0, u: -1.0, theta: 0.4, tau: 0.3 };
        let (plain, _) = factorization_ratio(&e, &base);
        let bu = bracket_pow(-1.0, 0.5).exp();
        assert!((plain - 1.1 / bu).abs() < 1e-12);
        let th0 = FactorizationSample { t: 0.8, theta: 0.0, ..base };
        let (plain, _) = factorization_ratio(&e, &th0);
        assert!(plain <= 9.0);
    }

    #[test]
    fn bd_lemma_at_s_one_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = random_bd_samples(&mut rng, 10_000, 10.0);
        let r = check_bd_lemma(1.0, &samples).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((bd_ratio(0.3, 2.0, -1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!(check_bd_lemma(1.5, &samples).is_err());
    }

    #[test]
    fn subadditivity_of_low_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let sigma: f64 = rng.gen_range(0.01..=1.0);
            let xi: f64 = rng.gen_range(-1e3..1e3);
            let eta: f64 = rng.gen_range(-1e3..1e3);
            let l = bracket_pow(xi, sigma);
            let r = bracket_pow(xi - eta, sigma) + bracket_pow(eta, sigma);
            assert!(l <= r * (1.0 + 1e-14));
        }
    }

    #[test]
    fn monotonicity_in_delta() {
        for psi in [0.0, 0.5, 4.0, 50.0] {
            let mut prev = f64::INFINITY;
            for d in [1e-4, 1e-3, 1e-2, 1e-1, 0.5] {
                let m = m_from_psi(psi, d);
                assert!(m < prev && m <= 1.0 / d);
                prev = m;
            }
        }
    }
}
