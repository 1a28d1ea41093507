//! Periodic phase-space grid, unitary Fourier transforms and off-grid
//! trigonometric evaluation.
//!
//! Points are `x_i = -Lx + i dx`, `v_j = -Lv + j dv`. Spectral arrays use FFT
//! storage order, so index `k` holds the signed mode `k` for `k < N/2` and
//! `k - N` otherwise; the dual frequencies are `eta_k = pi k / Lx` and
//! `xi_m = pi m / Lv`.
//!
//! The transform is `c(eta, xi) = N^{-1/2} sum g(x, v) exp(-i(x eta + v xi))`
//! with `N = Nx Nv`. Multiplying a v-coefficient by `2 Lv / sqrt(Nv)` gives the
//! continuous Fourier transform of the band-limited interpolant.

use std::f64::consts::PI;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{KacError, Result};

/// Discretization of the periodic box `[-Lx, Lx) x [-Lv, Lv)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "Nx")]
    pub nx: usize,
    #[serde(rename = "Nv")]
    pub nv: usize,
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Lv")]
    pub lv: f64,
}

impl GridSpec {
    pub fn new(nx: usize, nv: usize, lx: f64, lv: f64) -> Result<Self> {
        let spec = GridSpec { nx, nv, lx, lv };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid with the default box `Lx = pi`, `Lv = 10`.
    pub fn with_defaults(nx: usize, nv: usize) -> Result<Self> {
        Self::new(nx, nv, PI, 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("Nx", self.nx), ("Nv", self.nv)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(KacError::InvalidGrid(format!(
                    "{name} = {n} must be a power of two >= 8"
                )));
            }
        }
        if !(self.lx.is_finite() && self.lx > 0.0) {
            return Err(KacError::InvalidGrid(format!("Lx = {} must be positive", self.lx)));
        }
        if !(self.lv.is_finite() && self.lv >= 8.0) {
            return Err(KacError::InvalidGrid(format!("Lv = {} must be >= 8", self.lv)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.lx / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.lv / self.nv as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.lx + i as f64 * self.dx()
    }

    pub fn v(&self, j: usize) -> f64 {
        -self.lv + j as f64 * self.dv()
    }

    pub fn v_points(&self) -> Vec<f64> {
        (0..self.nv).map(|j| self.v(j)).collect()
    }

    pub fn x_points(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    /// Dual x-frequency at FFT-ordered index `k`.
    pub fn eta(&self, k: usize) -> f64 {
        PI * signed_index(k, self.nx) as f64 / self.lx
    }

    /// Dual v-frequency at FFT-ordered index `m`.
    pub fn xi(&self, m: usize) -> f64 {
        PI * signed_index(m, self.nv) as f64 / self.lv
    }

    pub fn eta_points(&self) -> Vec<f64> {
        (0..self.nx).map(|k| self.eta(k)).collect()
    }

    pub fn xi_points(&self) -> Vec<f64> {
        (0..self.nv).map(|m| self.xi(m)).collect()
    }

    /// Largest representable |xi|.
    pub fn xi_max(&self) -> f64 {
        PI * (self.nv / 2) as f64 / self.lv
    }

    /// Factor converting a unitary v-coefficient to the continuous transform.
    pub fn v_scale(&self) -> f64 {
        2.0 * self.lv / (self.nv as f64).sqrt()
    }

    /// Factor converting a unitary x-coefficient to the continuous transform.
    pub fn x_scale(&self) -> f64 {
        2.0 * self.lx / (self.nx as f64).sqrt()
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(KacError::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Signed mode number of FFT-ordered index `k` on an `n`-point grid.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Real field `g(x_i, v_j)` stored row-major with v fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub spec: GridSpec,
    pub data: Vec<f64>,
}

impl PhaseField {
    pub fn new(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(KacError::GridMismatch(format!(
                "data length {} does not match {}x{}",
                data.len(),
                spec.nx,
                spec.nv
            )));
        }
        Ok(PhaseField { spec, data })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        PhaseField { spec, data: vec![0.0; spec.len()] }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(spec.len());
        for i in 0..spec.nx {
            let x = spec.x(i);
            for j in 0..spec.nv {
                data.push(f(x, spec.v(j)));
            }
        }
        PhaseField { spec, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.spec.nv + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.spec.nv..(i + 1) * self.spec.nv]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.spec.nv)
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        check_finite_real(&self.data, what)
    }

    /// Discrete L2 norm `sqrt(sum g^2)` (unit cell measure).
    pub fn l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, a: f64) -> Self {
        PhaseField { spec: self.spec, data: self.data.iter().map(|v| a * v).collect() }
    }

    pub fn axpy(&mut self, a: f64, other: &PhaseField) -> Result<()> {
        self.spec.check_same(&other.spec)?;
        for (y, x) in self.data.iter_mut().zip(&other.data) {
            *y += a * x;
        }
        Ok(())
    }

    pub fn sub(&self, other: &PhaseField) -> Result<PhaseField> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }
}

/// Complex Fourier coefficients on the dual grid, FFT-ordered in both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub spec: GridSpec,
    pub coef: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(spec: GridSpec) -> Self {
        SpectralField { spec, coef: vec![Complex64::new(0.0, 0.0); spec.len()] }
    }

    pub fn get(&self, k: usize, m: usize) -> Complex64 {
        self.coef[k * self.spec.nv + m]
    }

    pub fn line(&self, k: usize) -> &[Complex64] {
        &self.coef[k * self.spec.nv..(k + 1) * self.spec.nv]
    }

    pub fn l2(&self) -> f64 {
        self.coef.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        for (index, c) in self.coef.iter().enumerate() {
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(KacError::NonFinite { what, index });
            }
        }
        Ok(())
    }
}

pub(crate) fn check_finite_real(data: &[f64], what: &'static str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(KacError::NonFinite { what, index }),
        None => Ok(()),
    }
}

/// Reusable FFT plans for one grid.
#[derive(Clone)]
pub struct Transform {
    spec: GridSpec,
    fx: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    fv: Arc<dyn Fft<f64>>,
    iv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform").field("spec", &self.spec).finish()
    }
}

fn parity(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl Transform {
    pub fn new(spec: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Transform {
            spec,
            fx: planner.plan_fft_forward(spec.nx),
            ix: planner.plan_fft_inverse(spec.nx),
            fv: planner.plan_fft_forward(spec.nv),
            iv: planner.plan_fft_inverse(spec.nv),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Unitary forward transform in v of one line, in place.
    pub fn v_forward(&self, line: &mut [Complex64]) {
        self.fv.process(line);
        let s = 1.0 / (self.spec.nv as f64).sqrt();
        for (m, c) in line.iter_mut().enumerate() {
            *c *= s * parity(m);
        }
    }

    /// Unitary inverse transform in v of one line, in place.
    pub fn v_inverse(&self, line: &mut [Complex64]) {
        let s = 1.0 / (self.spec.nv as f64).sqrt();
        for (m, c) in line.iter_mut().enumerate() {
            *c *= s * parity(m);
        }
        self.iv.process(line);
    }

    /// Forward transform of a real v-line.
    pub fn v_forward_real(&self, line: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = line.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.v_forward(&mut buf);
        buf
    }

    /// Inverse transform of a v-line whose physical counterpart is real.
    pub fn v_inverse_real(&self, line: &[Complex64]) -> Vec<f64> {
        let mut buf = line.to_vec();
        self.v_inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Unitary transform along x for every v column of a complex array.
    pub fn x_forward(&self, data: &mut [Complex64]) {
        self.along_x(data, true);
    }

    pub fn x_inverse(&self, data: &mut [Complex64]) {
        self.along_x(data, false);
    }

    fn along_x(&self, data: &mut [Complex64], forward: bool) {
        let (nx, nv) = (self.spec.nx, self.spec.nv);
        let s = 1.0 / (nx as f64).sqrt();
        let mut col = vec![Complex64::new(0.0, 0.0); nx];
        for j in 0..nv {
            for i in 0..nx {
                col[i] = data[i * nv + j];
            }
            if forward {
                self.fx.process(&mut col);
                for (k, c) in col.iter_mut().enumerate() {
                    *c *= s * parity(k);
                }
            } else {
                for (k, c) in col.iter_mut().enumerate() {
                    *c *= s * parity(k);
                }
                self.ix.process(&mut col);
            }
            for i in 0..nx {
                data[i * nv + j] = col[i];
            }
        }
    }

    pub fn forward(&self, field: &PhaseField) -> Result<SpectralField> {
        self.spec.check_same(&field.spec)?;
        field.check_finite("forward input")?;
        let mut coef: Vec<Complex64> = field.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for line in coef.chunks_exact_mut(self.spec.nv) {
            self.v_forward(line);
        }
        self.x_forward(&mut coef);
        Ok(SpectralField { spec: self.spec, coef })
    }

    /// Inverse transform returning the full complex physical field.
    pub fn inverse_complex(&self, sf: &SpectralField) -> Result<Vec<Complex64>> {
        self.spec.check_same(&sf.spec)?;
        sf.check_finite("inverse input")?;
        let mut data = sf.coef.clone();
        self.x_inverse(&mut data);
        for line in data.chunks_exact_mut(self.spec.nv) {
            self.v_inverse(line);
        }
        Ok(data)
    }

    /// Inverse transform keeping the real part.
    pub fn inverse(&self, sf: &SpectralField) -> Result<PhaseField> {
        let data = self.inverse_complex(sf)?;
        Ok(PhaseField { spec: self.spec, data: data.into_iter().map(|c| c.re).collect() })
    }
}

/// One-shot forward transform.
pub fn forward(field: &PhaseField) -> Result<SpectralField> {
    Transform::new(field.spec).forward(field)
}

/// One-shot inverse transform (real part of the result).
pub fn inverse(sf: &SpectralField) -> Result<PhaseField> {
    Transform::new(sf.spec).inverse(sf)
}

/// Weights `W_m(zeta)` with `sum_m c_m W_m(zeta)` the off-grid coefficient.
///
/// The weights are the exact Fourier transform over the box of the
/// trigonometric interpolant, expressed in coefficient units:
/// `W_m(zeta) = sinc((xi_m - zeta) Lv)`. The Nyquist mode is split evenly
/// between `+xi_max` and `-xi_max` so that real data stay real.
pub fn offgrid_weights(nv: usize, lv: f64, zeta: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), nv);
    let a = zeta * lv;
    let sa = a.sin();
    let half = nv / 2;
    for (m, w) in out.iter_mut().enumerate() {
        let sm = signed_index(m, nv);
        *w = if sm == -(half as i64) {
            0.5 * (sinc_shift(a, sa, sm) + sinc_shift(a, sa, half as i64))
        } else {
            sinc_shift(a, sa, sm)
        };
    }
}

/// `sinc(a - pi m)` using the precomputed `sin(a)`.
#[inline]
fn sinc_shift(a: f64, sa: f64, m: i64) -> f64 {
    let d = a - PI * m as f64;
    if d.abs() < 0.5 {
        if d == 0.0 {
            1.0
        } else {
            d.sin() / d
        }
    } else if m % 2 == 0 {
        sa / d
    } else {
        -sa / d
    }
}

/// Off-grid value of a v-spectral line at an arbitrary real frequency.
pub fn eval_offgrid_v(line: &[Complex64], lv: f64, zeta: f64) -> Complex64 {
    let mut w = vec![0.0; line.len()];
    offgrid_weights(line.len(), lv, zeta, &mut w);
    line.iter().zip(&w).map(|(c, &wm)| c * wm).sum()
}

/// Weights `D_j(v)` with `sum_j g_j D_j(v)` the trigonometric interpolant of
/// the samples `g_j` at `v`; zero outside `[-Lv, Lv]`.
pub fn interp_weights(spec: &GridSpec, v: f64, out: &mut [f64]) {
    let nv = spec.nv;
    debug_assert_eq!(out.len(), nv);
    if v < -spec.lv || v > spec.lv {
        out.iter_mut().for_each(|w| *w = 0.0);
        return;
    }
    let dv = spec.dv();
    let t = (v + spec.lv) / dv;
    let snt = (PI * t).sin();
    let inv_n = 1.0 / nv as f64;
    for (j, w) in out.iter_mut().enumerate() {
        let y = t - j as f64;
        // phi / 2 = pi y / N
        let h = PI * y * inv_n;
        let sh = h.sin();
        if sh.abs() < 1e-6 {
            // near a node (mod the period): fall back to the cosine sum
            let mut acc = 1.0;
            for m in 1..nv / 2 {
                acc += 2.0 * (2.0 * h * m as f64).cos();
            }
            acc += (h * nv as f64).cos();
            *w = acc * inv_n;
        } else {
            let sj = if j % 2 == 0 { snt } else { -snt };
            *w = sj * h.cos() / sh * inv_n;
        }
    }
}

/// Trigonometric interpolant of a real v-line at `v`, zero outside the box.
pub fn interp_v(spec: &GridSpec, line: &[f64], v: f64) -> f64 {
    let mut w = vec![0.0; spec.nv];
    interp_weights(spec, v, &mut w);
    line.iter().zip(&w).map(|(a, b)| a * b).sum()
}

/// Trigonometric interpolant of a real v-line evaluated through its
/// coefficients, zero outside the box.
#[derive(Debug, Clone)]
pub struct LineInterpolant {
    lv: f64,
    /// `c_0 / sqrt(N)`, `2 c_m / sqrt(N)` for `0 < m < N/2`, and the real Nyquist term.
    coef: Vec<Complex64>,
}

impl LineInterpolant {
    pub fn new(transform: &Transform, line: &[f64]) -> Self {
        let spec = transform.spec();
        let nv = spec.nv;
        let c = transform.v_forward_real(line);
        let s = 1.0 / (nv as f64).sqrt();
        let mut coef = Vec::with_capacity(nv / 2 + 1);
        coef.push(c[0] * s);
        for cm in &c[1..nv / 2] {
            coef.push(cm * (2.0 * s));
        }
        coef.push(Complex64::new(c[nv / 2].re * s, 0.0));
        LineInterpolant { lv: spec.lv, coef }
    }

    pub fn eval(&self, v: f64) -> f64 {
        if v < -self.lv || v > self.lv {
            return 0.0;
        }
        let z = Complex64::from_polar(1.0, PI * v / self.lv);
        let mut w = Complex64::new(1.0, 0.0);
        let last = self.coef.len() - 1;
        let mut acc = self.coef[0].re;
        for c in &self.coef[1..last] {
            w *= z;
            acc += (c * w).re;
        }
        acc + self.coef[last].re * (PI * v / self.lv * last as f64).cos()
    }
}

const MAGIC: &[u8; 24] = b"KACFIELD-v1            \n";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct SnapshotHeader {
    #[serde(rename = "Nx")]
    nx: usize,
    #[serde(rename = "Nv")]
    nv: usize,
    #[serde(rename = "Lx")]
    lx: f64,
    #[serde(rename = "Lv")]
    lv: f64,
    t: f64,
}

/// Write a field snapshot: 24-byte magic, JSON header line, little-endian f64 data.
pub fn write_snapshot<W: Write>(mut w: W, field: &PhaseField, t: f64) -> Result<()> {
    let header = SnapshotHeader {
        nx: field.spec.nx,
        nv: field.spec.nv,
        lx: field.spec.lx,
        lv: field.spec.lv,
        t,
    };
    w.write_all(MAGIC)?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(8 * field.data.len());
    for v in &field.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Read a field snapshot, returning the field and its time stamp.
pub fn read_snapshot<R: Read>(r: R) -> Result<(PhaseField, f64)> {
    let mut r = std::io::BufReader::new(r);
    let mut magic = [0u8; 24];
    r.read_exact(&mut magic)
        .map_err(|_| KacError::Format("truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(KacError::Format("bad magic".into()));
    }
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| KacError::Format(format!("bad header: {e}")))?;
    let spec = GridSpec::new(header.nx, header.nv, header.lx, header.lv)?;
    let mut bytes = vec![0u8; 8 * spec.len()];
    r.read_exact(&mut bytes)
        .map_err(|_| KacError::Format("truncated data".into()))?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let field = PhaseField::new(spec, data)?;
    field.check_finite("snapshot")?;
    Ok((field, header.t))
}

pub fn save_snapshot(path: &Path, field: &PhaseField, t: f64) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_snapshot(&mut w, field, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<(PhaseField, f64)> {
    read_snapshot(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(nx: usize, nv: usize) -> GridSpec {
        GridSpec::with_defaults(nx, nv).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(12, 16, 1.0, 10.0).is_err());
        assert!(GridSpec::new(4, 16, 1.0, 10.0).is_err());
        assert!(GridSpec::new(8, 16, 1.0, 7.0).is_err());
        assert!(GridSpec::new(8, 16, 0.0, 10.0).is_err());
    }

    #[test]
    fn constant_field_concentrates_at_origin() {
        let s = spec(8, 16);
        let sf = forward(&PhaseField::from_fn(s, |_, _| 1.0)).unwrap();
        assert!((sf.get(0, 0).re - (s.len() as f64).sqrt()).abs() < 1e-12);
        for (idx, c) in sf.coef.iter().enumerate().skip(1) {
            assert!(c.norm() < 1e-13, "idx {idx}");
        }
    }

    #[test]
    fn cosine_in_x_hits_two_modes() {
        let s = spec(16, 16);
        let sf = forward(&PhaseField::from_fn(s, |x, _| (PI * x / s.lx).cos())).unwrap();
        let a = sf.get(1, 0);
        let b = sf.get(s.nx - 1, 0);
        assert!(a.norm() > 1.0);
        assert!((a - b).norm() < 1e-12);
        let rest: f64 = sf
            .coef
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != s.nv && *i != (s.nx - 1) * s.nv)
            .map(|(_, c)| c.norm())
            .fold(0.0, f64::max);
        assert!(rest < 1e-12);
    }

    #[test]
    fn delta_coefficient_is_constant_field() {
        let s = spec(8, 8);
        let mut sf = SpectralField::zeros(s);
        sf.coef[0] = Complex64::new(1.0, 0.0);
        let f = inverse(&sf).unwrap();
        let expected = 1.0 / (s.len() as f64).sqrt();
        assert!(f.data.iter().all(|v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn rejects_non_finite() {
        let s = spec(8, 8);
        let mut f = PhaseField::zeros(s);
        f.data[3] = f64::NAN;
        assert!(matches!(forward(&f), Err(KacError::NonFinite { index: 3, .. })));
    }

    #[test]
    fn offgrid_on_grid_matches_coefficients() {
        let s = spec(8, 32);
        let t = Transform::new(s);
        let line: Vec<f64> = (0..s.nv).map(|j| (0.3 * j as f64).sin() + 0.1).collect();
        let c = t.v_forward_real(&line);
        for m in 0..s.nv {
            if m == s.nv / 2 {
                continue;
            }
            let got = eval_offgrid_v(&c, s.lv, s.xi(m));
            assert!((got - c[m]).norm() < 1e-12);
        }
    }

    #[test]
    fn gaussian_transform_matches_closed_form() {
        let s = GridSpec::new(8, 128, PI, 10.0).unwrap();
        let t = Transform::new(s);
        let line: Vec<f64> = s.v_points().iter().map(|v| (-v * v / 4.0).exp()).collect();
        let c = t.v_forward_real(&line);
        for zeta in [0.0, 0.123, 0.77, 1.5, -2.31, 3.9] {
            let got = eval_offgrid_v(&c, s.lv, zeta) * s.v_scale();
            let exact = (4.0 * PI).sqrt() * (-zeta * zeta).exp();
            assert!((got.re - exact).abs() < 1e-8, "zeta {zeta}: {got} vs {exact}");
            assert!(got.im.abs() < 1e-8);
        }
    }

    #[test]
    fn interpolant_reproduces_samples_and_smooth_functions() {
        let s = GridSpec::new(8, 64, PI, 10.0).unwrap();
        let line: Vec<f64> = s.v_points().iter().map(|v| (-v * v / 2.0).exp()).collect();
        for j in [0, 5, 31, 63] {
            assert!((interp_v(&s, &line, s.v(j)) - line[j]).abs() < 1e-13);
        }
        for v in [0.01, 1.234, -3.3, 7.77] {
            let got = interp_v(&s, &line, v);
            assert!((got - (-v * v / 2.0_f64).exp()).abs() < 1e-12, "v={v}");
        }
        assert_eq!(interp_v(&s, &line, 10.5), 0.0);
        let fast = LineInterpolant::new(&Transform::new(s), &line);
        for v in [0.01, 1.234, -3.3, 7.77, -9.99] {
            assert!((fast.eval(v) - interp_v(&s, &line, v)).abs() < 1e-13);
        }
        assert_eq!(fast.eval(-10.01), 0.0);
    }

    #[test]
    fn snapshot_round_trip() {
        let s = spec(8, 16);
        let f = PhaseField::from_fn(s, |x, v| x * v + 0.25);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &f, 0.75).unwrap();
        assert_eq!(&buf[..24], MAGIC);
        let (g, t) = read_snapshot(&buf[..]).unwrap();
        assert_eq!(g, f);
        assert_eq!(t, 0.75);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_snapshot(&bad[..]), Err(KacError::Format(_))));
        assert!(read_snapshot(&buf[..buf.len() - 3]).is_err());
    }
}
