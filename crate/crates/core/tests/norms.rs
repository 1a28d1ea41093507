use kac_core::collision::{CollisionQuadrature, CrossSection, QuadratureConfig};
use kac_core::grid::{GridSpec, LineInterpolant, PhaseField, SpectralField, Transform};
use kac_core::maxwellian::{mu, sqrt_mu};
use kac_core::multiplier::{bracket_pow, MultiplierParams, PsiEvaluator};
use kac_core::norms::*;
use kac_core::quadrature::{gauss_hermite, gauss_legendre_on};
use num_complex::Complex64;
use proptest::prelude::*;

fn bump(spec: GridSpec) -> PhaseField {
    PhaseField::from_fn(spec, |x, v| (1.0 + 0.4 * x.cos() - 0.2 * (2.0 * x).sin()) * (v - 0.3 * v * v) * (-v * v / 2.0).exp())
}

#[test]
fn hr_norm_basics() {
    let spec = GridSpec::with_defaults(16, 32).unwrap();
    assert_eq!(norm_hr_l2(&PhaseField::zeros(spec), 1.0).unwrap(), 0.0);
    let g = bump(spec);
    let phys = (g.data.iter().map(|x| x * x).sum::<f64>() * spec.dx() * spec.dv()).sqrt();
    assert!((norm_hr_l2(&g, 0.0).unwrap() - phys).abs() <= 1e-12 * phys);
    // a single x-mode carries the weight <eta_0>^r
    let k = 3.0;
    let single = PhaseField::from_fn(spec, |x, v| (k * x).cos() * (-v * v / 2.0).exp());
    let l2 = norm_hr_l2(&single, 0.0).unwrap();
    let hr = norm_hr_l2(&single, 1.5).unwrap();
    assert!((hr - bracket_pow(k, 1.5) * l2).abs() <= 1e-12 * hr);
    assert!(norm_hr_l2(&g, -1.0).is_err());
}

#[test]
fn sobolev_and_velocity_weights_dominate_l2() {
    let spec = GridSpec::with_defaults(16, 32).unwrap();
    let g = bump(spec);
    let base = norm_hr_l2(&g, 1.0).unwrap();
    assert!(sobolev_hs(&g, 1.0, 0.25).unwrap() >= base);
    assert!(vweight(&g, 1.0, 0.25).unwrap() >= base);
    assert!((sobolev_hs(&g, 1.0, 0.0).unwrap_or(0.0) - base).abs() <= 1e-12 * base);
}

fn params(delta: f64) -> PsiEvaluator {
    PsiEvaluator::new(MultiplierParams::new(0.25, 0.5, delta, 1.0).unwrap())
}

#[test]
fn weighted_norms_at_time_zero() {
    let spec = GridSpec::with_defaults(16, 32).unwrap();
    let g = bump(spec);
    let p = params(0.1);
    let hr = norm_hr_l2(&g, 1.0).unwrap();
    assert!((weighted_norm_m(&g, &p, 0.0).unwrap() - hr / 1.1).abs() <= 1e-12 * hr);
    assert!((weighted_norm_g(&g, &p, 0.0).unwrap() - hr / 1.1).abs() <= 1e-12 * hr);
}

#[test]
fn weighted_m_saturates_at_one_over_delta() {
    let spec = GridSpec::with_defaults(8, 16).unwrap();
    let g = bump(spec);
    let p = PsiEvaluator::new(MultiplierParams::new(0.5, 50.0, 0.9, 1.0).unwrap());
    let hr = norm_hr_l2(&g, 1.0).unwrap();
    let w = weighted_norm_m(&g, &p, 10.0).unwrap();
    assert!((w - hr / 0.9).abs() <= 1e-10 * hr, "{w} {}", hr / 0.9);
}

#[test]
fn weighted_g_matches_direct_quadrature() {
    let spec = GridSpec::with_defaults(8, 64).unwrap();
    let g = PhaseField::from_fn(spec, |_, v| mu(v));
    let p = params(0.01);
    let t = 0.7;
    let rule = gauss_legendre_on(200, -spec.lv, spec.lv);
    let direct = (2.0 * spec.lx * rule.integrate(|v| (p.g_delta(t, v).unwrap() * mu(v)).powi(2))).sqrt();
    let got = weighted_norm_g(&g, &p, t).unwrap();
    assert!((got - direct).abs() <= 1e-10 * direct, "{got} {direct}");
    // data concentrated near v = 0 gain at most the weight's value on the support
    let narrow = PhaseField::from_fn(spec, |_, v| (-8.0 * v * v).exp());
    let ratio = weighted_norm_g(&narrow, &p, t).unwrap() / norm_hr_l2(&narrow, 1.0).unwrap();
    assert!(ratio <= (0.5 * t * bracket_pow(2.0, 0.5)).exp());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn weighted_m_nonincreasing_in_delta(d1 in 1e-4f64..0.5, d2 in 1e-4f64..0.5, t in 0.0f64..2.0) {
        let spec = GridSpec::with_defaults(8, 16).unwrap();
        let g = bump(spec);
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let a = weighted_norm_m(&g, &params(lo), t).unwrap();
        let b = weighted_norm_m(&g, &params(hi), t).unwrap();
        prop_assert!(b <= a * (1.0 + 1e-14));
    }
}

fn quad(panels: usize, eps: f64) -> CollisionQuadrature {
    CollisionQuadrature::new(QuadratureConfig { eps, panels, ..Default::default() }).unwrap()
}

/// First term of the triple norm from its definition: `int g^2 (1 + 1/cos)`
/// exactly, and the cross term `int g(v) int mu* g(v') dv* dv` by brute force
/// with the zero-extended interpolant.
fn first_term_oracle(spec: &GridSpec, g: &[f64], q: &CollisionQuadrature, cs: &CrossSection) -> f64 {
    let tr = Transform::new(*spec);
    let gi = LineInterpolant::new(&tr, g);
    let h = gauss_hermite(120);
    let norm2 = g.iter().map(|x| x * x).sum::<f64>() * spec.dv();
    let vs = spec.v_points();
    let mut total = 0.0;
    for (&theta, &w) in q.theta.iter().zip(&q.beta_weights(cs)) {
        let (st, ct) = theta.sin_cos();
        let mut cross = 0.0;
        for (j, &v) in vs.iter().enumerate() {
            let inner: f64 = h
                .nodes
                .iter()
                .zip(&h.weights)
                .map(|(&y, &wy)| wy * gi.eval(v * ct - 2f64.sqrt() * y * st))
                .sum::<f64>()
                / std::f64::consts::PI.sqrt();
            cross += g[j] * inner;
        }
        cross *= spec.dv();
        total += w * ((1.0 + 1.0 / ct) * norm2 - 2.0 * cross);
    }
    total
}

#[test]
fn triple_form_matches_definition() {
    let spec = GridSpec::with_defaults(8, 64).unwrap();
    let q = quad(6, 1e-3);
    for s in [0.25, 0.75] {
        let cs = CrossSection::new(s, 1.0).unwrap();
        let form = TripleForm::new(spec, &q, &cs).unwrap();
        let g: Vec<f64> = spec.v_points().iter().map(|&v| (1.0 + v - 0.2 * v * v) * (-v * v / 2.0).exp()).collect();
        let (t1, t2) = form.terms(&g);
        let o1 = first_term_oracle(&spec, &g, &q, &cs);
        assert!((t1 - o1).abs() <= 1e-8 * o1, "s={s}: {t1} vs {o1}");
        // second term: each Gaussian product integrated on its own window
        let window = |center: f64, width: f64, f: &dyn Fn(f64) -> f64| {
            gauss_legendre_on(200, center - width, center + width).integrate(f)
        };
        let mut o2 = 0.0;
        for (&theta, &w) in q.theta.iter().zip(&q.beta_weights(&cs)) {
            let (st, ct) = theta.sin_cos();
            for (j, &vs) in spec.v_points().iter().enumerate() {
                let a = window(vs * st / ct, 40.0 / ct, &|v| mu(v * ct - vs * st));
                let b = window(0.0, 40.0, &|v| mu(v));
                let ab = window(vs * st * ct / (1.0 + ct * ct), 40.0, &|v| sqrt_mu(v * ct - vs * st) * sqrt_mu(v));
                o2 += w * g[j] * g[j] * spec.dv() * (a + b - 2.0 * ab);
            }
        }
        assert!((t2 - o2).abs() <= 1e-10 * o2, "{t2} vs {o2}");
    }
}

#[test]
fn triple_norm_converges_under_refinement() {
    let spec = GridSpec::with_defaults(8, 64).unwrap();
    let cs = CrossSection::new(0.25, 1.0).unwrap();
    let g: Vec<f64> = spec.v_points().iter().map(|&v| v * sqrt_mu(v)).collect();
    let base = triple_norm(&spec, &g, &CollisionQuadrature::default_rule(), &cs).unwrap();
    let c = QuadratureConfig::default();
    let fine = CollisionQuadrature::new(QuadratureConfig { eps: c.eps / 10.0, panels: 10 * c.panels, ..c }).unwrap();
    let reference = triple_norm(&spec, &g, &fine, &cs).unwrap();
    assert!((base - reference).abs() <= 1e-4 * reference, "{base} {reference}");
    assert!(triple_norm_checked(&spec, &g, &CollisionQuadrature::default_rule(), &cs, 1e-4).is_ok());
    assert_eq!(triple_norm(&spec, &vec![0.0; 64], &CollisionQuadrature::default_rule(), &cs).unwrap(), 0.0);
}

#[test]
fn triple_r0_of_x_independent_field() {
    let spec = GridSpec::with_defaults(8, 32).unwrap();
    let cs = CrossSection::new(0.25, 1.0).unwrap();
    let q = quad(8, 1e-4);
    let line: Vec<f64> = spec.v_points().iter().map(|&v| (v - 0.5) * (-v * v / 2.0).exp()).collect();
    let g = PhaseField::from_fn(spec, |_, v| (v - 0.5) * (-v * v / 2.0).exp());
    let one_d = triple_norm(&spec, &line, &q, &cs).unwrap();
    let r0 = triple_norm_r0(&g, 1.0, &q, &cs).unwrap();
    assert!((r0 * r0 - 2.0 * spec.lx * one_d * one_d).abs() <= 1e-10 * r0 * r0);
    assert_eq!(triple_norm_r0(&PhaseField::zeros(spec), 1.0, &q, &cs).unwrap(), 0.0);
}

#[test]
fn norm_report_columns() {
    let spec = GridSpec::with_defaults(8, 32).unwrap();
    let cs = CrossSection::new(0.25, 1.0).unwrap();
    let ev = NormEvaluator::new(spec, 1.0, 0.25).unwrap().with_triple(&quad(8, 1e-4), &cs).unwrap();
    let g = bump(spec);
    let p = params(0.1);
    let rep = ev.report(&g, 0.0, &p).unwrap();
    assert!(rep.is_valid());
    assert!(rep.weighted_m >= rep.h_r_l2 / 1.1 * (1.0 - 1e-12));
    assert!(rep.triple_r0 > 0.0);
    assert_eq!(NormReport::CSV_HEADER.split(',').count(), rep.csv_row().split(',').count());
}

fn synthetic_series(spec: GridSpec, times: &[f64], c: f64, p: f64, s: f64, x_dir: bool) -> Vec<(f64, SpectralField)> {
    times
        .iter()
        .map(|&t| {
            let mut sf = SpectralField::zeros(spec);
            for k in 0..spec.nx {
                for m in 0..spec.nv {
                    let z = if x_dir { spec.eta(k) } else { spec.xi(m) };
                    let other = if x_dir { spec.xi(m) } else { spec.eta(k) };
                    let amp = (-c * t.powf(p) * bracket_pow(z, 2.0 * s) - other * other).exp();
                    sf.coef[k * spec.nv + m] = Complex64::new(amp, 0.0);
                }
            }
            (t, sf)
        })
        .collect()
}

#[test]
fn gevrey_fit_recovers_synthetic_rates() {
    let spec = GridSpec::with_defaults(64, 64).unwrap();
    let times = [0.5, 0.75, 1.0, 1.25, 1.5];
    let rep = fit_gevrey_radius(&synthetic_series(spec, &times, 0.3, 1.5, 0.5, true), FitDirection::X, 0.5, None).unwrap();
    assert!((rep.exponent_estimate - 1.5).abs() < 1e-8, "{rep:?}");
    assert!((rep.radius_estimate - 0.3).abs() < 1e-8);
    let rep = fit_gevrey_radius(&synthetic_series(spec, &times, 0.7, 1.0, 0.25, false), FitDirection::V, 0.25, None).unwrap();
    assert!((rep.exponent_estimate - 1.0).abs() < 1e-8, "{rep:?}");
    // time-independent spectrum
    let still = synthetic_series(spec, &[1.0; 4], 0.4, 1.0, 0.5, true);
    let still: Vec<(f64, SpectralField)> = still.into_iter().enumerate().map(|(i, (_, f))| (1.0 + i as f64, f)).collect();
    let rep = fit_gevrey_radius(&still, FitDirection::X, 0.5, None).unwrap();
    assert!(rep.exponent_estimate.abs() < 1e-8);
    // too few times or modes
    assert!(fit_gevrey_radius(&still[..2], FitDirection::X, 0.5, None).is_err());
    let zero = vec![(1.0, SpectralField::zeros(spec)), (2.0, SpectralField::zeros(spec)), (3.0, SpectralField::zeros(spec))];
    assert!(fit_gevrey_radius(&zero, FitDirection::X, 0.5, None).is_err());
}

#[test]
fn velocity_decay_fit() {
    let spec = GridSpec::with_defaults(8, 128).unwrap();
    let tr = Transform::new(spec);
    let times = [1.0, 1.5, 2.0, 2.5];
    let series: Vec<(f64, SpectralField)> = times
        .iter()
        .map(|&t| {
            let g = PhaseField::from_fn(spec, |_, v| (-0.4 * t * bracket_pow(v, 1.0)).exp());
            (t, tr.forward(&g).unwrap())
        })
        .collect();
    let rep = fit_gevrey_radius(&series, FitDirection::VelocityDecay, 0.5, None).unwrap();
    assert!((rep.exponent_estimate - 1.0).abs() < 1e-6, "{rep:?}");
    assert!((rep.radius_estimate - 0.4).abs() < 1e-6);
}
