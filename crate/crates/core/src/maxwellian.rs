//! The standard Maxwellian `mu(v) = (2 pi)^{-1/2} exp(-v^2/2)`, its powers,
//! their Fourier transforms and the sampled collision invariants.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Mu,
    SqrtMu,
    MuSq,
    MuQuarter,
}

impl Profile {
    /// Exponent `a` with the profile equal to `mu^a`.
    pub fn power(self) -> f64 {
        match self {
            Profile::Mu => 1.0,
            Profile::SqrtMu => 0.5,
            Profile::MuSq => 2.0,
            Profile::MuQuarter => 0.25,
        }
    }
}

pub fn mu(v: f64) -> f64 {
    mu_pow(v, 1.0)
}

pub fn sqrt_mu(v: f64) -> f64 {
    mu_pow(v, 0.5)
}

/// `mu(v)^a` in closed form.
pub fn mu_pow(v: f64, a: f64) -> f64 {
    (2.0 * PI).powf(-0.5 * a) * (-0.5 * a * v * v).exp()
}

/// Continuous Fourier transform `int mu^a(v) e^{-i v xi} dv`.
pub fn mu_pow_hat(xi: f64, a: f64) -> f64 {
    (2.0 * PI).powf(-0.5 * a) * (2.0 * PI / a).sqrt() * (-xi * xi / (2.0 * a)).exp()
}

/// Transform of `sqrt(mu)`: `(2 pi)^{-1/4} sqrt(4 pi) exp(-xi^2)`.
pub fn sqrt_mu_hat(xi: f64) -> f64 {
    mu_pow_hat(xi, 0.5)
}

pub fn sample_profile(which: Profile, spec: &GridSpec) -> Vec<f64> {
    let a = which.power();
    spec.v_points().iter().map(|&v| mu_pow(v, a)).collect()
}

/// Sampled `sqrt(mu)`, `v sqrt(mu)`, `v^2 sqrt(mu)`, each with unit discrete L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    pub sqrt_mu: Vec<f64>,
    pub v_sqrt_mu: Vec<f64>,
    pub v2_sqrt_mu: Vec<f64>,
}

impl KernelBasis {
    pub fn as_array(&self) -> [&[f64]; 3] {
        [&self.sqrt_mu, &self.v_sqrt_mu, &self.v2_sqrt_mu]
    }

    pub fn names() -> [&'static str; 3] {
        ["sqrt_mu", "v_sqrt_mu", "v2_sqrt_mu"]
    }
}

pub fn kernel_basis(spec: &GridSpec) -> KernelBasis {
    let vs = spec.v_points();
    let make = |p: i32| {
        let mut f: Vec<f64> = vs.iter().map(|&v| v.powi(p) * sqrt_mu(v)).collect();
        let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        f.iter_mut().for_each(|x| *x /= n);
        f
    };
    KernelBasis { sqrt_mu: make(0), v_sqrt_mu: make(1), v2_sqrt_mu: make(2) }
}
