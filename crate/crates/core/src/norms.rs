//! Sobolev, weighted and anisotropic norms, and Gevrey radius fits.
//!
//! All norms use the box measure `dx dv`, so for a field sampled on the grid
//! `||g||^2 = dx dv sum |g_ij|^2 = dx dv sum |c_km|^2`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{spec_to_phys_matrix, CollisionQuadrature, CrossSection};
use crate::error::{KacError, Result};
use crate::grid::{offgrid_weights, GridSpec, PhaseField, SpectralField, Transform};
use crate::multiplier::{bracket_pow, m_from_psi, PsiEvaluator};

/// One row of the norm time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub t: f64,
    pub h_r_l2: f64,
    pub triple_r0: f64,
    pub weighted_m: f64,
    pub weighted_g: f64,
    pub sobolev_hs: f64,
    pub vweight: f64,
}

impl NormReport {
    pub const CSV_HEADER: &'static str = "t,h_r_l2,triple_r0,weighted_m,weighted_g,sobolev_hs,vweight";

    pub fn csv_row(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.t, self.h_r_l2, self.triple_r0, self.weighted_m, self.weighted_g, self.sobolev_hs, self.vweight
        )
    }

    pub fn is_valid(&self) -> bool {
        [self.h_r_l2, self.triple_r0, self.weighted_m, self.weighted_g, self.sobolev_hs, self.vweight]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

fn measure(spec: &GridSpec) -> f64 {
    spec.dx() * spec.dv()
}

/// `sqrt(dx dv sum_{k,m} w(eta_k, xi_m) |c_km|^2)`.
fn weighted_spectral(sf: &SpectralField, w: impl Fn(usize, usize) -> f64) -> f64 {
    let spec = sf.spec;
    let mut acc = 0.0;
    for k in 0..spec.nx {
        for (m, c) in sf.line(k).iter().enumerate() {
            acc += w(k, m) * c.norm_sqr();
        }
    }
    (acc * measure(&spec)).sqrt()
}

/// `||g||_{H^r_x(L^2_v)}` by Plancherel on the grid.
pub fn norm_hr_l2(g: &PhaseField, r: f64) -> Result<f64> {
    if r < 0.0 {
        return Err(KacError::InvalidParameter(format!("r = {r} must be nonnegative")));
    }
    let tr = Transform::new(g.spec);
    Ok(hr_of_spectral(&tr.forward(g)?, r))
}

fn hr_of_spectral(sf: &SpectralField, r: f64) -> f64 {
    let etas = sf.spec.eta_points();
    weighted_spectral(sf, |k, _| bracket_pow(etas[k], 2.0 * r))
}

/// `||M_delta g||_{H^r_x(L^2_v)}` with `M_delta` from the multiplier parameters.
pub fn weighted_norm_m(g: &PhaseField, p: &PsiEvaluator, t: f64) -> Result<f64> {
    let tr = Transform::new(g.spec);
    let table = p.psi_table(&g.spec, t)?;
    Ok(weighted_m_spectral(&tr.forward(g)?, &table, p.params.delta, p.params.r))
}

fn weighted_m_spectral(sf: &SpectralField, psi: &[f64], delta: f64, r: f64) -> f64 {
    let etas = sf.spec.eta_points();
    let nv = sf.spec.nv;
    weighted_spectral(sf, |k, m| {
        let w = m_from_psi(psi[k * nv + m], delta);
        w * w * bracket_pow(etas[k], 2.0 * r)
    })
}

/// `||G_delta g||_{H^r_x(L^2_v)}`; `G_delta` acts in physical v.
pub fn weighted_norm_g(g: &PhaseField, p: &PsiEvaluator, t: f64) -> Result<f64> {
    let line = p.g_delta_line(&g.spec, t)?;
    norm_hr_l2(&times_v(g, &line), p.params.r)
}

fn times_v(g: &PhaseField, w: &[f64]) -> PhaseField {
    let nv = g.spec.nv;
    let data = g.data.iter().enumerate().map(|(i, x)| x * w[i % nv]).collect();
    PhaseField { spec: g.spec, data }
}

/// `||g||_{H^r_x(H^s_v)}`.
pub fn sobolev_hs(g: &PhaseField, r: f64, s: f64) -> Result<f64> {
    let tr = Transform::new(g.spec);
    Ok(hs_of_spectral(&tr.forward(g)?, r, s))
}

fn hs_of_spectral(sf: &SpectralField, r: f64, s: f64) -> f64 {
    let etas = sf.spec.eta_points();
    let xis = sf.spec.xi_points();
    weighted_spectral(sf, |k, m| bracket_pow(etas[k], 2.0 * r) * bracket_pow(xis[m], 2.0 * s))
}

/// `||<v>^s g||_{H^r_x(L^2_v)}`.
pub fn vweight(g: &PhaseField, r: f64, s: f64) -> Result<f64> {
    let w: Vec<f64> = g.spec.v_points().iter().map(|&v| bracket_pow(v, s)).collect();
    norm_hr_l2(&times_v(g, &w), r)
}

/// Apply `<D_x>^r` spectrally in x.
pub fn apply_dx_power(tr: &Transform, g: &PhaseField, r: f64) -> PhaseField {
    let spec = g.spec;
    let nv = spec.nv;
    let etas = spec.eta_points();
    let mut buf: Vec<Complex64> = g.data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    tr.x_forward(&mut buf);
    for (i, c) in buf.iter_mut().enumerate() {
        *c *= bracket_pow(etas[i / nv], r);
    }
    tr.x_inverse(&mut buf);
    PhaseField { spec, data: buf.iter().map(|c| c.re).collect() }
}

/// The anisotropic norm as a quadratic form on grid values of one v-line:
/// `|||g|||^2 = g^T (A + diag(d)) g`.
///
/// With `v' = v cos(theta) - v* sin(theta)`, the first term
/// `int int int beta mu* (g' - g)^2` reduces for each theta to
/// `(1 + 1/cos) int g^2 - 2 int g(v) (g * N_{sin^2})(v cos) dv`, evaluated on
/// the dual grid with exact off-grid frequencies. The second term
/// `int int int beta g*^2 (sqrt(mu') - sqrt(mu))^2` has the v-integral in
/// closed form, leaving a grid sum over `v*`.
#[derive(Debug, Clone)]
pub struct TripleForm {
    pub spec: GridSpec,
    pub quadrature: CollisionQuadrature,
    pub cs: CrossSection,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl TripleForm {
    pub fn new(spec: GridSpec, q: &CollisionQuadrature, cs: &CrossSection) -> Result<Self> {
        spec.validate()?;
        let nv = spec.nv;
        let lv = spec.lv;
        let xis = spec.xi_points();
        let wb = q.beta_weights(cs);
        // P[m][k] = W_k(xi_m): the identity except for the split Nyquist mode
        let mut p = vec![0.0; nv * nv];
        for m in 0..nv {
            offgrid_weights(nv, lv, xis[m], &mut p[m * nv..(m + 1) * nv]);
        }
        // sigma = sum w beta (1/cos - 1), X = sum w beta 2 (P - E W_theta)
        let sigma: f64 = q
            .theta
            .iter()
            .zip(&wb)
            .map(|(&t, &w)| w * 2.0 * (0.5 * t).sin().powi(2) / t.cos())
            .sum();
        // rows in parallel, theta summed in a fixed order so the result is
        // independent of the worker count
        let x: Vec<f64> = (0..nv)
            .into_par_iter()
            .flat_map_iter(|m| {
                let mut row = vec![0.0; nv];
                let mut w = vec![0.0; nv];
                for (&theta, &wt) in q.theta.iter().zip(&wb) {
                    let (st, ct) = theta.sin_cos();
                    let e = (-0.5 * st * st * xis[m] * xis[m]).exp();
                    offgrid_weights(nv, lv, ct * xis[m], &mut w);
                    for k in 0..nv {
                        row[k] += 2.0 * wt * (p[m * nv + k] - e * w[k]);
                    }
                }
                row
            })
            .collect();
        // M = sigma P^T P + P^T X
        let mut mspec = vec![0.0; nv * nv];
        for i in 0..nv {
            for j in 0..nv {
                let mut acc = 0.0;
                for m in 0..nv {
                    acc += p[m * nv + i] * (sigma * p[m * nv + j] + x[m * nv + j]);
                }
                mspec[i * nv + j] = acc;
            }
        }
        let phys = spec_to_phys_matrix(&mspec, nv);
        let dv = spec.dv();
        let mut first = vec![0.0; nv * nv];
        for i in 0..nv {
            for j in 0..nv {
                first[i * nv + j] = 0.5 * dv * (phys[i * nv + j] + phys[j * nv + i]);
            }
        }
        let second = spec
            .v_points()
            .iter()
            .map(|&vs| dv * q.theta.iter().zip(&wb).map(|(&t, &w)| w * sqrt_mu_gap(t, vs)).sum::<f64>())
            .collect();
        Ok(TripleForm { spec, quadrature: q.clone(), cs: *cs, first, second })
    }

    /// `(first term, second term)` of `|||g|||^2`.
    pub fn terms(&self, g: &[f64]) -> (f64, f64) {
        let nv = self.spec.nv;
        let mut t1 = 0.0;
        for i in 0..nv {
            let row = &self.first[i * nv..(i + 1) * nv];
            t1 += g[i] * row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
        }
        let t2 = self.second.iter().zip(g).map(|(d, x)| d * x * x).sum();
        (t1.max(0.0), t2)
    }

    /// Symmetric matrix `Q` with `|||g|||^2 = g^T Q g` on one line.
    pub fn matrix(&self) -> Vec<f64> {
        let nv = self.spec.nv;
        let mut q = self.first.clone();
        for (i, d) in self.second.iter().enumerate() {
            q[i * nv + i] += d;
        }
        q
    }

    pub fn value_sq(&self, g: &[f64]) -> f64 {
        let (a, b) = self.terms(g);
        a + b
    }

    pub fn value(&self, g: &[f64]) -> f64 {
        self.value_sq(g).sqrt()
    }

    /// `|||g|||_{(r,0)}`: `<D_x>^r` in x, then the form on each x-line, times `dx`.
    pub fn value_r0(&self, tr: &Transform, g: &PhaseField, r: f64) -> Result<f64> {
        self.spec.check_same(&g.spec)?;
        let h = apply_dx_power(tr, g, r);
        let sum: f64 = h.rows().map(|row| self.value_sq(row)).sum();
        Ok((sum * g.spec.dx()).sqrt())
    }
}

/// `int (sqrt(mu(v cos - v* sin)) - sqrt(mu(v)))^2 dv`
/// `= 1 + 1/cos - 2 sqrt(2/(1+cos^2)) exp(-sin^2 v*^2 / (4 (1+cos^2)))`,
/// rearranged so the O(theta^2) result carries no cancellation.
fn sqrt_mu_gap(theta: f64, vs: f64) -> f64 {
    let (st, ct) = theta.sin_cos();
    let s2 = st * st;
    let l = -0.5 * (-0.5 * s2).ln_1p() - s2 * vs * vs / (4.0 * (2.0 - s2));
    2.0 * (0.5 * theta).sin().powi(2) / ct - 2.0 * l.exp_m1()
}

/// `|||g|||` of a single v-line.
pub fn triple_norm(spec: &GridSpec, g: &[f64], q: &CollisionQuadrature, cs: &CrossSection) -> Result<f64> {
    check_line(spec, g)?;
    Ok(TripleForm::new(*spec, q, cs)?.value(g))
}

/// `|||g|||` together with a refinement check: fails if the refined rule
/// changes the value by more than `tol` relative.
pub fn triple_norm_checked(
    spec: &GridSpec,
    g: &[f64],
    q: &CollisionQuadrature,
    cs: &CrossSection,
    tol: f64,
) -> Result<f64> {
    let a = triple_norm(spec, g, q, cs)?;
    let b = triple_norm(spec, g, &q.refined()?, cs)?;
    let gap = (a - b).abs() / b.max(f64::MIN_POSITIVE);
    if gap > tol {
        return Err(KacError::QuadratureNotConverged { what: "triple norm", gap, tol });
    }
    Ok(b)
}

pub fn triple_norm_r0(g: &PhaseField, r: f64, q: &CollisionQuadrature, cs: &CrossSection) -> Result<f64> {
    let form = TripleForm::new(g.spec, q, cs)?;
    form.value_r0(&Transform::new(g.spec), g, r)
}

fn check_line(spec: &GridSpec, g: &[f64]) -> Result<()> {
    if g.len() != spec.nv {
        return Err(KacError::GridMismatch(format!("line has length {}, expected {}", g.len(), spec.nv)));
    }
    Ok(())
}

/// Reusable evaluator of the full norm report on one grid.
#[derive(Debug, Clone)]
pub struct NormEvaluator {
    pub spec: GridSpec,
    pub r: f64,
    pub s: f64,
    transform: Transform,
    triple: Option<TripleForm>,
}

impl NormEvaluator {
    pub fn new(spec: GridSpec, r: f64, s: f64) -> Result<Self> {
        spec.validate()?;
        if r < 0.0 || !(s > 0.0 && s < 1.0) {
            return Err(KacError::InvalidParameter(format!("need r >= 0 and s in (0,1), got r={r}, s={s}")));
        }
        Ok(NormEvaluator { spec, r, s, transform: Transform::new(spec), triple: None })
    }

    pub fn with_triple(mut self, q: &CollisionQuadrature, cs: &CrossSection) -> Result<Self> {
        self.triple = Some(TripleForm::new(self.spec, q, cs)?);
        Ok(self)
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    pub fn triple_form(&self) -> Option<&TripleForm> {
        self.triple.as_ref()
    }

    pub fn h_r_l2(&self, g: &PhaseField) -> Result<f64> {
        Ok(hr_of_spectral(&self.transform.forward(g)?, self.r))
    }

    /// `|||g|||_{(r,0)}`; zero when the evaluator carries no triple form.
    pub fn triple_r0(&self, g: &PhaseField) -> Result<f64> {
        match &self.triple {
            Some(f) => f.value_r0(&self.transform, g, self.r),
            None => Ok(0.0),
        }
    }

    /// `||M_delta g||` given a precomputed `Psi` table at the same time.
    pub fn weighted_m(&self, g: &PhaseField, psi_table: &[f64], delta: f64) -> Result<f64> {
        Ok(weighted_m_spectral(&self.transform.forward(g)?, psi_table, delta, self.r))
    }

    pub fn weighted_g(&self, g: &PhaseField, g_line: &[f64]) -> Result<f64> {
        self.h_r_l2(&times_v(g, g_line))
    }

    pub fn report(&self, g: &PhaseField, t: f64, p: &PsiEvaluator) -> Result<NormReport> {
        g.spec.check_same(&self.spec)?;
        let sf = self.transform.forward(g)?;
        let table = p.psi_table(&self.spec, t)?;
        let gl = p.g_delta_line(&self.spec, t)?;
        let w: Vec<f64> = self.spec.v_points().iter().map(|&v| bracket_pow(v, self.s)).collect();
        let rep = NormReport {
            t,
            h_r_l2: hr_of_spectral(&sf, self.r),
            triple_r0: self.triple_r0(g)?,
            weighted_m: weighted_m_spectral(&sf, &table, p.params.delta, self.r),
            weighted_g: self.weighted_g(g, &gl)?,
            sobolev_hs: hs_of_spectral(&sf, self.r, self.s),
            vweight: self.h_r_l2(&times_v(g, &w))?,
        };
        if !rep.is_valid() {
            return Err(KacError::NonFinite { what: "norm report", index: 0 });
        }
        Ok(rep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitDirection {
    X,
    V,
    VelocityDecay,
}

/// Abscissa range (in |eta|, |xi| or |v|) and time range used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lo: f64,
    pub hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub min_modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub direction: FitDirection,
    pub radius_estimate: f64,
    pub exponent_estimate: f64,
    pub r2: f64,
    pub window: FitWindow,
    /// `(t, rho(t), r2 of the per-time fit)`.
    pub per_time: Vec<(f64, f64, f64)>,
}

/// Least squares `y = a + b x`; returns `(a, b, r2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}

/// Fit `log|g| = a - rho(t) <z>^{2 s~}` at each time, then `rho(t) = c t^p`.
///
/// `X` uses `|g^(t, eta, 0)|`, `V` uses `|g^(t, 0, xi)|` and `VelocityDecay`
/// uses `|g(t, x_0, v)|` with `x_0` the first grid point. Modes below
/// `10 eps max|g|` are dropped. With `window = None` the abscissa range is
/// `[0, z_max/2]`, excluding the top octave.
pub fn fit_gevrey_radius(
    series: &[(f64, SpectralField)],
    direction: FitDirection,
    s_tilde: f64,
    window: Option<FitWindow>,
) -> Result<FitReport> {
    if series.len() < 3 {
        return Err(KacError::InsufficientData(format!("need >= 3 times, got {}", series.len())));
    }
    let spec = series[0].1.spec;
    let t_lo = series.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let t_hi = series.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let zmax = match direction {
        FitDirection::X => spec.eta(spec.nx / 2 - 1),
        FitDirection::V => spec.xi_max(),
        FitDirection::VelocityDecay => spec.lv,
    };
    let window = window.unwrap_or(FitWindow { lo: 0.0, hi: 0.5 * zmax, t_lo, t_hi, min_modes: 8 });
    let sigma = 2.0 * s_tilde;
    let tr = Transform::new(spec);
    let mut per_time = Vec::new();
    for (t, sf) in series {
        sf.spec.check_same(&spec)?;
        if *t < window.t_lo || *t > window.t_hi {
            continue;
        }
        let samples: Vec<(f64, f64)> = match direction {
            FitDirection::X => (1..spec.nx / 2).map(|k| (spec.eta(k), sf.get(k, 0).norm())).collect(),
            FitDirection::V => (1..spec.nv / 2).map(|m| (spec.xi(m), sf.get(0, m).norm())).collect(),
            FitDirection::VelocityDecay => {
                let g = tr.inverse(sf)?;
                (0..spec.nv).map(|j| (spec.v(j).abs(), g.get(0, j).abs())).collect()
            }
        };
        let top = match direction {
            FitDirection::VelocityDecay => samples.iter().map(|s| s.1).fold(0.0, f64::max),
            _ => sf.coef.iter().map(|c| c.norm()).fold(0.0, f64::max),
        };
        let floor = 10.0 * f64::EPSILON * top;
        let (xs, ys): (Vec<f64>, Vec<f64>) = samples
            .iter()
            .filter(|(z, a)| *z >= window.lo && *z <= window.hi && *a > floor)
            .map(|(z, a)| (bracket_pow(*z, sigma), a.ln()))
            .unzip();
        if xs.len() < window.min_modes {
            return Err(KacError::InsufficientData(format!(
                "{} usable modes at t = {t} (need {})",
                xs.len(),
                window.min_modes
            )));
        }
        let (_, slope, r2) = linear_fit(&xs, &ys);
        per_time.push((*t, -slope, r2));
    }
    let usable: Vec<&(f64, f64, f64)> = per_time.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
    if usable.len() < 3 {
        return Err(KacError::InsufficientData("fewer than 3 times with positive t and decaying spectrum".into()));
    }
    let lx: Vec<f64> = usable.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
    let (a, p, r2) = linear_fit(&lx, &ly);
    Ok(FitReport { direction, radius_estimate: a.exp(), exponent_estimate: p, r2, window, per_time })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_mu_gap_matches_direct_integral() {
        use crate::maxwellian::sqrt_mu;
        use crate::quadrature::gauss_legendre_on;
        let rule = gauss_legendre_on(400, -60.0, 60.0);
        for (theta, vs) in [(0.3, 1.0), (1.2, -2.5), (0.01, 3.0)] {
            let (st, ct) = f64::sin_cos(theta);
            let direct = rule.integrate(|v| (sqrt_mu(v * ct - vs * st) - sqrt_mu(v)).powi(2));
            assert!((direct - sqrt_mu_gap(theta, vs)).abs() < 1e-12 * (1.0 + direct), "{theta} {vs} {direct} {}", sqrt_mu_gap(theta, vs));
        }
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (a, b, r2) = linear_fit(&x, &y);
        assert!((a - 2.0).abs() < 1e-14 && (b + 0.5).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
    }
}
