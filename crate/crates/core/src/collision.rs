//! The Kac collision operator: bilinear `K`, the normalized form
//! `calK(f, g) = mu^{-1/2} K(mu^{1/2} f, mu^{1/2} g)`, the weighted trilinear
//! form `T(f, g, omega)`, the linearization `L = L1 + L2`, and a slow
//! physical-space oracle.
//!
//! For an even weight `omega` the operator
//! `T(f, g, omega)(v) = int int beta(theta) omega(v*) {f(v*') g(v') - f(v*) g(v)} dtheta dv*`
//! has the Fourier representation
//! `(1/2pi) int int beta(theta) omega^(u) {f^(u') g^(xi') - f^(u) g^(xi)} du dtheta`
//! with `u' = xi sin(theta) + u cos(theta)`, `xi' = xi cos(theta) - u sin(theta)`.
//! `calK` is the case `omega = mu^{1/2}`, whose transform is
//! `(2pi)^{-1/4} sqrt(4pi) e^{-u^2}`, so the u-integral is Gauss–Hermite.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};
use crate::grid::{offgrid_weights, GridSpec, LineInterpolant, PhaseField, Transform};
use crate::maxwellian::sqrt_mu_hat;
use crate::quadrature::{composite_legendre, gauss_hermite, Rule};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `beta(theta) = C0 |cos(theta)| / |sin(theta)|^{1+2s}` on `(-pi/2, pi/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub s: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
}

impl CrossSection {
    pub fn new(s: f64, c0: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(KacError::InvalidParameter(format!("s = {s} must lie in (0,1)")));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(KacError::InvalidParameter(format!("C0 = {c0} must be positive")));
        }
        Ok(CrossSection { s, c0 })
    }

    pub fn beta(&self, theta: f64) -> f64 {
        self.c0 * theta.cos().abs() / theta.sin().abs().powf(1.0 + 2.0 * self.s)
    }

    /// `int beta(theta) (1 - cos theta) dtheta` over `(-pi/2, pi/2)`, the
    /// eigenvalue of `L` on `v sqrt(mu)`.
    pub fn momentum_eigenvalue(&self) -> f64 {
        let rule = composite_legendre(&geometric_breaks(1e-14, FRAC_PI_2, 80), 16);
        2.0 * rule.integrate(|t| {
            let one_minus = 2.0 * (0.5 * t).sin().powi(2);
            self.beta(t) * one_minus
        })
    }
}

fn geometric_breaks(a: f64, b: f64, n: usize) -> Vec<f64> {
    let r = (b / a).powf(1.0 / n as f64);
    let mut out: Vec<f64> = (0..=n).map(|i| a * r.powi(i as i32)).collect();
    out[n] = b;
    out
}

/// Quadrature parameters for the collision integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub eps: f64,
    pub panels: usize,
    pub panel_ratio: f64,
    pub hermite_order: usize,
    pub panel_order: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { eps: 1e-4, panels: 16, panel_ratio: 1.8, hermite_order: 40, panel_order: 8 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(KacError::InvalidParameter(format!("eps = {} must lie in (0, 0.5)", self.eps)));
        }
        if self.panels == 0 || self.hermite_order < 2 || self.panel_order < 2 {
            return Err(KacError::InvalidParameter("quadrature orders must be positive".into()));
        }
        if !(self.panel_ratio >= 1.0 && self.panel_ratio.is_finite()) {
            return Err(KacError::InvalidParameter("panel_ratio must be >= 1".into()));
        }
        Ok(())
    }

    /// Halve `eps`, double the panels (keeping the overall grading), and
    /// raise the Hermite order by half.
    pub fn refined(&self) -> Self {
        QuadratureConfig {
            eps: 0.5 * self.eps,
            panels: 2 * self.panels,
            panel_ratio: self.panel_ratio.sqrt(),
            hermite_order: self.hermite_order + self.hermite_order.div_ceil(2),
            panel_order: self.panel_order,
        }
    }
}

/// Symmetric graded theta rule on `[-pi/2, -eps] U [eps, pi/2]` plus a
/// Gauss–Hermite rule for the u-integral.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionQuadrature {
    pub config: QuadratureConfig,
    /// Nodes ordered so that `theta[i] = -theta[n-1-i]`.
    pub theta: Vec<f64>,
    pub theta_weights: Vec<f64>,
    pub hermite: Rule,
}

impl CollisionQuadrature {
    pub fn new(config: QuadratureConfig) -> Result<Self> {
        config.validate()?;
        let span = FRAC_PI_2 - config.eps;
        let r = config.panel_ratio;
        let n = config.panels;
        let first = if (r - 1.0).abs() < 1e-14 { span / n as f64 } else { span * (r - 1.0) / (r.powi(n as i32) - 1.0) };
        let mut breaks = vec![config.eps];
        let mut len = first;
        for _ in 0..n {
            let last = *breaks.last().expect("nonempty");
            breaks.push(last + len);
            len *= r;
        }
        breaks[n] = FRAC_PI_2;
        let half = composite_legendre(&breaks, config.panel_order);
        let mut theta: Vec<f64> = half.nodes.iter().rev().map(|t| -t).collect();
        let mut weights: Vec<f64> = half.weights.iter().rev().copied().collect();
        theta.extend_from_slice(&half.nodes);
        weights.extend_from_slice(&half.weights);
        Ok(CollisionQuadrature { config, theta, theta_weights: weights, hermite: gauss_hermite(config.hermite_order) })
    }

    pub fn default_rule() -> Self {
        Self::new(QuadratureConfig::default()).expect("default quadrature is valid")
    }

    pub fn refined(&self) -> Result<Self> {
        Self::new(self.config.refined())
    }

    /// `w_i beta(theta_i)`.
    pub fn beta_weights(&self, cs: &CrossSection) -> Vec<f64> {
        self.theta.iter().zip(&self.theta_weights).map(|(&t, &w)| w * cs.beta(t)).collect()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }
}

/// u-rule for `(1/2pi) int omega^(u) h(u) du` with `omega = mu^alpha`.
#[derive(Debug, Clone)]
pub(crate) struct WeightRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub(crate) fn weight_rule(hermite: &Rule, alpha: f64) -> WeightRule {
    // omega^(u) = (2pi)^{-alpha/2} sqrt(2pi/alpha) e^{-u^2/(2 alpha)}, u = sqrt(2 alpha) y
    let scale = (2.0 * alpha).sqrt();
    let norm = (2.0 * PI).powf(-0.5 * alpha) * (2.0 * PI / alpha).sqrt() * scale / (2.0 * PI);
    WeightRule {
        nodes: hermite.nodes.iter().map(|y| scale * y).collect(),
        weights: hermite.weights.iter().map(|w| w * norm).collect(),
    }
}

fn check_line(spec: &GridSpec, len: usize, what: &str) -> Result<()> {
    if len != spec.nv {
        return Err(KacError::GridMismatch(format!("{what} has length {len}, expected Nv = {}", spec.nv)));
    }
    Ok(())
}

fn eval_line(line: &[Complex64], lv: f64, zeta: f64, w: &mut [f64]) -> Complex64 {
    offgrid_weights(line.len(), lv, zeta, w);
    line.iter().zip(w.iter()).map(|(c, &x)| c * x).sum()
}

/// Direct quadrature of the spectral form for arbitrary coefficient-unit
/// evaluators `f(zeta)`, `g(zeta)`; output in coefficient units on the xi-grid.
fn bilinear_direct<F, G>(spec: &GridSpec, f: F, g: G, alpha: f64, q: &CollisionQuadrature, cs: &CrossSection) -> Vec<Complex64>
where
    F: Fn(f64) -> Complex64 + Sync,
    G: Fn(f64) -> Complex64 + Sync,
{
    let rule = weight_rule(&q.hermite, alpha);
    let wb = q.beta_weights(cs);
    let sc: Vec<(f64, f64)> = q.theta.iter().map(|t| t.sin_cos()).collect();
    let fu: Vec<Complex64> = rule.nodes.iter().map(|&u| f(u)).collect();
    let sv = spec.v_scale();
    (0..spec.nv)
        .into_par_iter()
        .map(|m| {
            let xi = spec.xi(m);
            let gx = g(xi);
            let mut acc = ZERO;
            for (&(st, ct), &wt) in sc.iter().zip(&wb) {
                let mut inner = ZERO;
                for ((&u, &wu), &fu0) in rule.nodes.iter().zip(&rule.weights).zip(&fu) {
                    let up = xi * st + u * ct;
                    let xp = xi * ct - u * st;
                    inner += wu * (f(up) * g(xp) - fu0 * gx);
                }
                acc += wt * inner;
            }
            sv * acc
        })
        .collect()
}

fn line_evaluator(line: &[Complex64], lv: f64) -> impl Fn(f64) -> Complex64 + Sync + '_ {
    move |zeta| {
        let mut w = vec![0.0; line.len()];
        eval_line(line, lv, zeta, &mut w)
    }
}

fn sqrt_mu_evaluator(spec: &GridSpec) -> impl Fn(f64) -> Complex64 + Sync {
    let sv = spec.v_scale();
    move |zeta| Complex64::new(sqrt_mu_hat(zeta) / sv, 0.0)
}

/// `calK(f, g)` on a v-spectral line by direct quadrature of the spectral form.
pub fn apply_calk_spectral(
    spec: &GridSpec,
    fhat: &[Complex64],
    ghat: &[Complex64],
    q: &CollisionQuadrature,
    cs: &CrossSection,
) -> Result<Vec<Complex64>> {
    apply_t_spectral(spec, fhat, ghat, 0.5, q, cs)
}

/// `T(f, g, mu^alpha)` on a v-spectral line, `alpha > 1/4`.
pub fn apply_t_spectral(
    spec: &GridSpec,
    fhat: &[Complex64],
    ghat: &[Complex64],
    alpha: f64,
    q: &CollisionQuadrature,
    cs: &CrossSection,
) -> Result<Vec<Complex64>> {
    check_line(spec, fhat.len(), "fhat")?;
    check_line(spec, ghat.len(), "ghat")?;
    if !(alpha > 0.25 && alpha.is_finite()) {
        return Err(KacError::InvalidParameter(format!("weight exponent alpha = {alpha} must exceed 1/4")));
    }
    Ok(bilinear_direct(spec, line_evaluator(fhat, spec.lv), line_evaluator(ghat, spec.lv), alpha, q, cs))
}

/// `L g = -calK(sqrt(mu), g) - calK(g, sqrt(mu))` by direct quadrature, with
/// the closed-form transform of `sqrt(mu)`.
pub fn apply_l_spectral(
    spec: &GridSpec,
    ghat: &[Complex64],
    q: &CollisionQuadrature,
    cs: &CrossSection,
) -> Result<Vec<Complex64>> {
    check_line(spec, ghat.len(), "ghat")?;
    let a = bilinear_direct(spec, sqrt_mu_evaluator(spec), line_evaluator(ghat, spec.lv), 0.5, q, cs);
    let b = bilinear_direct(spec, line_evaluator(ghat, spec.lv), sqrt_mu_evaluator(spec), 0.5, q, cs);
    Ok(a.iter().zip(&b).map(|(x, y)| -(x + y)).collect())
}

/// Weight `omega(v*)` of the physical-space oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleWeight {
    /// `omega = 1`: the plain operator `K`.
    One,
    /// `omega = mu^alpha`; `alpha = 1/2` gives `calK`.
    MuPow(f64),
}

/// Physical-space evaluation of `T(f, g, omega)` at the v-grid points.
///
/// Off-grid values come from trigonometric interpolation, extended by zero
/// outside the box. The v*-integral uses a Gauss–Hermite rule matched to
/// the Gaussian weight, or composite Gauss–Legendre on the disc that can
/// reach the box when `omega = 1`. Loss and gain share each quadrature node.
pub fn apply_weighted_oracle(
    spec: &GridSpec,
    f: &[f64],
    g: &[f64],
    weight: OracleWeight,
    q: &CollisionQuadrature,
    cs: &CrossSection,
) -> Result<Vec<f64>> {
    check_line(spec, f.len(), "f")?;
    check_line(spec, g.len(), "g")?;
    let (vs, ws): (Vec<f64>, Vec<f64>) = match weight {
        OracleWeight::MuPow(a) => {
            if !(a > 0.0) {
                return Err(KacError::InvalidParameter(format!("alpha = {a} must be positive")));
            }
            let h = gauss_hermite(80);
            let c = (2.0 / a).sqrt();
            let norm = (2.0 * PI).powf(-0.5 * a) * c;
            (h.nodes.iter().map(|y| c * y).collect(), h.weights.iter().map(|w| w * norm).collect())
        }
        OracleWeight::One => {
            let reach = std::f64::consts::SQRT_2 * spec.lv;
            let panels = spec.nv / 2;
            let breaks: Vec<f64> = (0..=panels).map(|i| -reach + 2.0 * reach * i as f64 / panels as f64).collect();
            let r = composite_legendre(&breaks, 8);
            (r.nodes, r.weights)
        }
    };
    let nv = spec.nv;
    let tr = Transform::new(*spec);
    let fi = LineInterpolant::new(&tr, f);
    let gi = LineInterpolant::new(&tr, g);
    let f_star: Vec<f64> = vs.iter().map(|&v| fi.eval(v)).collect();
    let wb = q.beta_weights(cs);
    let sc: Vec<(f64, f64)> = q.theta.iter().map(|t| t.sin_cos()).collect();
    let out = (0..nv)
        .into_par_iter()
        .map(|i| {
            let v = spec.v(i);
            let gv = g[i];
            let mut acc = 0.0;
            for (&(st, ct), &wt) in sc.iter().zip(&wb) {
                let mut inner = 0.0;
                for ((&vstar, &w), &fs) in vs.iter().zip(&ws).zip(&f_star) {
                    let vp = v * ct - vstar * st;
                    let vsp = v * st + vstar * ct;
                    let gain = if vp.abs() > spec.lv || vsp.abs() > spec.lv {
                        0.0
                    } else {
                        fi.eval(vsp) * gi.eval(vp)
                    };
                    inner += w * (gain - fs * gv);
                }
                acc += wt * inner;
            }
            acc
        })
        .collect();
    Ok(out)
}

/// Physical-space `K(f, g)`.
pub fn apply_k_oracle(spec: &GridSpec, f: &[f64], g: &[f64], q: &CollisionQuadrature, cs: &CrossSection) -> Result<Vec<f64>> {
    apply_weighted_oracle(spec, f, g, OracleWeight::One, q, cs)
}

/// Physical-space `calK(f, g)` via `omega = sqrt(mu)`, which equals
/// `mu^{-1/2} K(mu^{1/2} f, mu^{1/2} g)` pointwise because `mu mu* = mu' mu*'`.
pub fn apply_calk_oracle(spec: &GridSpec, f: &[f64], g: &[f64], q: &CollisionQuadrature, cs: &CrossSection) -> Result<Vec<f64>> {
    apply_weighted_oracle(spec, f, g, OracleWeight::MuPow(0.5), q, cs)
}

/// Unitary v-transform as a dense matrix: `coef_m = sum_j F[m][j] g_j`.
pub(crate) fn dft_matrix(nv: usize) -> Vec<Complex64> {
    let mut f = vec![ZERO; nv * nv];
    let s = 1.0 / (nv as f64).sqrt();
    for m in 0..nv {
        let sign = if m % 2 == 0 { s } else { -s };
        for j in 0..nv {
            let ph = -2.0 * PI * ((m * j) % nv) as f64 / nv as f64;
            f[m * nv + j] = Complex64::from_polar(sign, ph);
        }
    }
    f
}

/// Precomputed discrete operators on one velocity grid.
///
/// `l_spec` is the real Nv x Nv matrix of `L` acting on v-coefficients;
/// `l_phys` is the same operator on grid values. The optional tensors hold
/// the bilinear form in both representations,
/// `calK(f, g)_m = sum_{j,k} T[m][j][k] f_j g_k`.
#[derive(Debug, Clone)]
pub struct CollisionOperator {
    pub spec: GridSpec,
    pub cs: CrossSection,
    pub quadrature: CollisionQuadrature,
    pub l_spec: Vec<f64>,
    pub l_phys: Vec<f64>,
    pub k_spec: Option<Vec<f64>>,
    pub k_phys: Option<Vec<f64>>,
    /// Loss part on physical lines: the loss term of the bilinear form is
    /// `(sum_j loss_phys[j] f_j) g`.
    pub loss_phys: Option<Vec<f64>>,
    /// Weight exponent `alpha` of the bilinear tensors (`1/2` for `calK`).
    pub alpha: f64,
}

struct NodeSet {
    /// per node: (sin, cos, weight) with weight = beta w_theta w_u
    theta: Vec<(f64, f64, f64)>,
    u: Vec<f64>,
    uw: Vec<f64>,
}

impl NodeSet {
    fn new(q: &CollisionQuadrature, cs: &CrossSection, alpha: f64) -> Self {
        let rule = weight_rule(&q.hermite, alpha);
        let wb = q.beta_weights(cs);
        NodeSet {
            theta: q.theta.iter().zip(&wb).map(|(t, &w)| {
                let (s, c) = t.sin_cos();
                (s, c, w)
            }).collect(),
            u: rule.nodes,
            uw: rule.weights,
        }
    }
}

impl CollisionOperator {
    /// Builds the linear operator; call [`CollisionOperator::with_bilinear`]
    /// to add the bilinear tensors.
    pub fn new(spec: GridSpec, cs: CrossSection, quadrature: CollisionQuadrature) -> Result<Self> {
        spec.validate()?;
        let l_spec = build_l_spec(&spec, &cs, &quadrature);
        let l_phys = spec_to_phys_matrix(&l_spec, spec.nv);
        Ok(CollisionOperator { spec, cs, quadrature, l_spec, l_phys, k_spec: None, k_phys: None, loss_phys: None, alpha: 0.5 })
    }

    pub fn with_bilinear(self) -> Self {
        self.with_weight_exponent(0.5).expect("alpha = 1/2 is valid")
    }

    /// Bilinear tensors of `T(f, g, mu^alpha)`; the `calK` methods then apply `T`.
    pub fn with_weight_exponent(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.25 && alpha.is_finite()) {
            return Err(KacError::InvalidParameter(format!("weight exponent alpha = {alpha} must exceed 1/4")));
        }
        let nv = self.spec.nv;
        let (t, loss) = build_bilinear_tensor(&self.spec, &self.cs, &self.quadrature, alpha);
        let f = dft_matrix(nv);
        self.loss_phys = Some((0..nv).map(|j| (0..nv).map(|k| loss[k] * f[k * nv + j].re).sum()).collect());
        self.k_phys = Some(spec_to_phys_tensor(&t, nv));
        self.k_spec = Some(t);
        self.alpha = alpha;
        Ok(self)
    }

    /// Coefficient of `g` in the loss term of the bilinear form on one line.
    pub fn loss_factor(&self, f: &[f64]) -> f64 {
        let l = self.loss_phys.as_deref().expect("bilinear tensor not built; call with_bilinear");
        l.iter().zip(f).map(|(a, b)| a * b).sum()
    }

    pub fn nv(&self) -> usize {
        self.spec.nv
    }

    /// `L` on a physical v-line.
    pub fn apply_l_phys(&self, g: &[f64], out: &mut [f64]) {
        matvec(&self.l_phys, g, out);
    }

    /// `L` on a v-coefficient line.
    pub fn apply_l_spec(&self, ghat: &[Complex64]) -> Vec<Complex64> {
        let nv = self.nv();
        (0..nv)
            .map(|m| self.l_spec[m * nv..(m + 1) * nv].iter().zip(ghat).map(|(a, c)| c * a).sum())
            .collect()
    }

    fn k_phys(&self) -> &[f64] {
        self.k_phys.as_deref().expect("bilinear tensor not built; call with_bilinear")
    }

    /// Matrix `A[i][k] = sum_j P[i][j][k] f_j`, so that `calK(f, g) = A g`.
    pub fn frozen_first(&self, f: &[f64]) -> Vec<f64> {
        let nv = self.nv();
        let p = self.k_phys();
        let mut a = vec![0.0; nv * nv];
        for i in 0..nv {
            let row = &mut a[i * nv..(i + 1) * nv];
            for (j, &fj) in f.iter().enumerate() {
                if fj == 0.0 {
                    continue;
                }
                let slab = &p[(i * nv + j) * nv..(i * nv + j + 1) * nv];
                for (r, &x) in row.iter_mut().zip(slab) {
                    *r += fj * x;
                }
            }
        }
        a
    }

    /// `calK(f, g)` on physical v-lines via the precomputed tensor.
    pub fn apply_calk_phys(&self, f: &[f64], g: &[f64], out: &mut [f64]) {
        let a = self.frozen_first(f);
        matvec(&a, g, out);
    }

    /// `calK(f, g)` on coefficient lines via the precomputed tensor.
    pub fn apply_calk_spec(&self, fhat: &[Complex64], ghat: &[Complex64]) -> Vec<Complex64> {
        let nv = self.nv();
        let t = self.k_spec.as_deref().expect("bilinear tensor not built; call with_bilinear");
        (0..nv)
            .map(|m| {
                let mut acc = ZERO;
                for (j, fj) in fhat.iter().enumerate() {
                    let slab = &t[(m * nv + j) * nv..(m * nv + j + 1) * nv];
                    let inner: Complex64 = slab.iter().zip(ghat).map(|(a, c)| c * a).sum();
                    acc += fj * inner;
                }
                acc
            })
            .collect()
    }

    /// Self-convergence of `L` under quadrature refinement on a test line.
    pub fn refinement_report(&self, g: &[f64], tol: f64) -> Result<ConvergenceReport> {
        let fine = CollisionOperator::new(self.spec, self.cs, self.quadrature.refined()?)?;
        let mut a = vec![0.0; self.nv()];
        let mut b = vec![0.0; self.nv()];
        self.apply_l_phys(g, &mut a);
        fine.apply_l_phys(g, &mut b);
        let delta = rel_diff(&a, &b);
        Ok(ConvergenceReport { op: "L".into(), eps: self.quadrature.config.eps, delta_refine: delta, tol, pass: delta <= tol })
    }
}

/// Result of comparing an operator against a refined quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub op: String,
    pub eps: f64,
    pub delta_refine: f64,
    pub tol: f64,
    pub pass: bool,
}

pub(crate) fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub(crate) fn matvec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

fn build_l_spec(spec: &GridSpec, cs: &CrossSection, q: &CollisionQuadrature) -> Vec<f64> {
    let nv = spec.nv;
    let lv = spec.lv;
    let sv = spec.v_scale();
    let nodes = NodeSet::new(q, cs, 0.5);
    let shat = |z: f64| sqrt_mu_hat(z) / sv;
    // W_k(u) and shat(u) do not depend on xi
    let mut wu = vec![0.0; nodes.u.len() * nv];
    for (qi, &u) in nodes.u.iter().enumerate() {
        offgrid_weights(nv, lv, u, &mut wu[qi * nv..(qi + 1) * nv]);
    }
    let rows: Vec<Vec<f64>> = (0..nv)
        .into_par_iter()
        .map(|m| {
            let xi = spec.xi(m);
            let mut wx = vec![0.0; nv];
            offgrid_weights(nv, lv, xi, &mut wx);
            let sx = shat(xi);
            let mut row = vec![0.0; nv];
            let mut node = vec![0.0; nv];
            let mut w1 = vec![0.0; nv];
            let mut w2 = vec![0.0; nv];
            for &(st, ct, wt) in &nodes.theta {
                for (qi, (&u, &wq)) in nodes.u.iter().zip(&nodes.uw).enumerate() {
                    let up = xi * st + u * ct;
                    let xp = xi * ct - u * st;
                    offgrid_weights(nv, lv, xp, &mut w1);
                    offgrid_weights(nv, lv, up, &mut w2);
                    let (su, sup, sxp) = (shat(u), shat(up), shat(xp));
                    let wuq = &wu[qi * nv..(qi + 1) * nv];
                    // gain minus loss of L1 and L2 at this node, before weighting
                    for k in 0..nv {
                        node[k] = sup * w1[k] - su * wx[k] + sxp * w2[k] - sx * wuq[k];
                    }
                    let c = -sv * wt * wq;
                    for k in 0..nv {
                        row[k] += c * node[k];
                    }
                }
            }
            row
        })
        .collect();
    rows.concat()
}

/// Real tensor `T[m][j][k]` of the bilinear form `T(f, g, mu^alpha)` in
/// coefficient space, and the loss weights `l` with loss term `(sum_j l_j f_j) g_m`.
pub(crate) fn build_bilinear_tensor(spec: &GridSpec, cs: &CrossSection, q: &CollisionQuadrature, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let nv = spec.nv;
    let lv = spec.lv;
    let sv = spec.v_scale();
    let nodes = NodeSet::new(q, cs, alpha);
    let nq = nodes.theta.len() * nodes.u.len();
    // loss weights: l_j = sv sum_q w_q W_j(u_q)
    let mut loss = vec![0.0; nv];
    let mut w = vec![0.0; nv];
    let wsum_theta: f64 = nodes.theta.iter().map(|t| t.2).sum();
    for (&u, &wq) in nodes.u.iter().zip(&nodes.uw) {
        offgrid_weights(nv, lv, u, &mut w);
        for j in 0..nv {
            loss[j] += sv * wsum_theta * wq * w[j];
        }
    }
    let slabs: Vec<Vec<f64>> = (0..nv)
        .into_par_iter()
        .map(|m| {
            let xi = spec.xi(m);
            let mut a = vec![0.0; nv * nq];
            let mut b = vec![0.0; nq * nv];
            let mut w1 = vec![0.0; nv];
            let mut qi = 0;
            for &(st, ct, wt) in &nodes.theta {
                for (&u, &wq) in nodes.u.iter().zip(&nodes.uw) {
                    let up = xi * st + u * ct;
                    let xp = xi * ct - u * st;
                    offgrid_weights(nv, lv, up, &mut w1);
                    let c = sv * wt * wq;
                    for j in 0..nv {
                        a[j * nq + qi] = c * w1[j];
                    }
                    offgrid_weights(nv, lv, xp, &mut b[qi * nv..(qi + 1) * nv]);
                    qi += 1;
                }
            }
            let mut t = vec![0.0; nv * nv];
            unsafe {
                matrixmultiply::dgemm(
                    nv, nq, nv, 1.0,
                    a.as_ptr(), nq as isize, 1,
                    b.as_ptr(), nv as isize, 1,
                    0.0, t.as_mut_ptr(), nv as isize, 1,
                );
            }
            let mut wx = vec![0.0; nv];
            offgrid_weights(nv, lv, xi, &mut wx);
            for j in 0..nv {
                for k in 0..nv {
                    t[j * nv + k] -= loss[j] * wx[k];
                }
            }
            t
        })
        .collect();
    (slabs.concat(), loss)
}

/// `Re(F^{-1} A F)` for a real coefficient-space matrix `A`.
pub fn spec_to_phys_matrix(a: &[f64], nv: usize) -> Vec<f64> {
    let f = dft_matrix(nv);
    // A F
    let mut af = vec![ZERO; nv * nv];
    for m in 0..nv {
        for k in 0..nv {
            let amk = a[m * nv + k];
            if amk == 0.0 {
                continue;
            }
            for j in 0..nv {
                af[m * nv + j] += amk * f[k * nv + j];
            }
        }
    }
    // F^{-1} = F^H
    let mut out = vec![0.0; nv * nv];
    for i in 0..nv {
        for j in 0..nv {
            let mut acc = ZERO;
            for m in 0..nv {
                acc += f[m * nv + i].conj() * af[m * nv + j];
            }
            out[i * nv + j] = acc.re;
        }
    }
    out
}

/// Physical tensor `P[i][j][k] = Re sum_m Finv[i][m] sum_{j',k'} T[m][j'][k'] F[j'][j] F[k'][k]`.
pub(crate) fn spec_to_phys_tensor(t: &[f64], nv: usize) -> Vec<f64> {
    let f = dft_matrix(nv);
    // X_m = F^T T_m F for each m
    let xs: Vec<Vec<Complex64>> = (0..nv)
        .into_par_iter()
        .map(|m| {
            let tm = &t[m * nv * nv..(m + 1) * nv * nv];
            let mut tf = vec![ZERO; nv * nv];
            for jp in 0..nv {
                for kp in 0..nv {
                    let v = tm[jp * nv + kp];
                    if v == 0.0 {
                        continue;
                    }
                    for k in 0..nv {
                        tf[jp * nv + k] += v * f[kp * nv + k];
                    }
                }
            }
            let mut x = vec![ZERO; nv * nv];
            for jp in 0..nv {
                for j in 0..nv {
                    let fj = f[jp * nv + j];
                    for k in 0..nv {
                        x[j * nv + k] += fj * tf[jp * nv + k];
                    }
                }
            }
            x
        })
        .collect();
    let slabs: Vec<Vec<f64>> = (0..nv)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; nv * nv];
            for (m, x) in xs.iter().enumerate() {
                let c = f[m * nv + i].conj();
                for (o, v) in out.iter_mut().zip(x) {
                    *o += (c * v).re;
                }
            }
            out
        })
        .collect();
    slabs.concat()
}

/// `calK(f, g)` slice by slice in x using the operator's tensor.
pub fn apply_calk_full(op: &CollisionOperator, f: &PhaseField, g: &PhaseField) -> Result<PhaseField> {
    if f.spec != op.spec || g.spec != op.spec {
        return Err(KacError::GridMismatch("calK operands must share the operator grid".into()));
    }
    let nv = op.nv();
    let mut data = vec![0.0; op.spec.len()];
    data.par_chunks_mut(nv).enumerate().for_each(|(i, out)| {
        op.apply_calk_phys(f.row(i), g.row(i), out);
    });
    Ok(PhaseField { spec: op.spec, data })
}

/// `L g` slice by slice in x.
pub fn apply_l_full(op: &CollisionOperator, g: &PhaseField) -> Result<PhaseField> {
    if g.spec != op.spec {
        return Err(KacError::GridMismatch("L operand must share the operator grid".into()));
    }
    let nv = op.nv();
    let mut data = vec![0.0; op.spec.len()];
    data.par_chunks_mut(nv).enumerate().for_each(|(i, out)| op.apply_l_phys(g.row(i), out));
    Ok(PhaseField { spec: op.spec, data })
}

/// Contribution of grazing angles `0 < |theta| < eps` to `calK(f, g)`:
/// one-sided (`theta > 0` only) or symmetrized over `+-theta`.
pub fn grazing_tail(
    spec: &GridSpec,
    fhat: &[Complex64],
    ghat: &[Complex64],
    cs: &CrossSection,
    eps: f64,
    hermite_order: usize,
    symmetric: bool,
) -> Result<Vec<Complex64>> {
    check_line(spec, fhat.len(), "fhat")?;
    check_line(spec, ghat.len(), "ghat")?;
    // a lower limit of eps 1e-4 keeps the rounding of the gain-loss difference
    // negligible; the omitted piece scales with the same power of eps
    let rule = composite_legendre(&geometric_breaks(eps * 1e-4, eps, 24), 8);
    let (mut theta, mut weights) = (rule.nodes.clone(), rule.weights.clone());
    if symmetric {
        theta.extend(rule.nodes.iter().map(|t| -t));
        weights.extend_from_slice(&rule.weights);
    }
    let q = CollisionQuadrature {
        config: QuadratureConfig { eps, ..QuadratureConfig::default() },
        theta,
        theta_weights: weights,
        hermite: gauss_hermite(hermite_order),
    };
    Ok(bilinear_direct(spec, line_evaluator(fhat, spec.lv), line_evaluator(ghat, spec.lv), 0.5, &q, cs))
}
