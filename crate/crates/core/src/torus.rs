//! Band-limited functions on the flat torus `(R/2πZ)^n`.
//!
//! A [`TorusFunction`] is stored through its Fourier coefficients on the
//! lattice box `|m_j| <= band`, with the orthonormal convention
//! `‖e^{im·x}‖ = 1`. Only nonzero coefficients are kept, so functions with a
//! handful of very high frequencies (the `u_k` quasimodes reach `k²`) stay
//! cheap.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice frequency `m ∈ Z^n`.
pub type Mode = Vec<i64>;

/// Extra lattice radius added around generated families so probe operators
/// with a few x-modes do not truncate.
pub const DEFAULT_HEADROOM: i64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FunctionDoc", into = "FunctionDoc")]
pub struct TorusFunction {
    dim: usize,
    band: i64,
    coeffs: BTreeMap<Mode, Complex64>,
}

impl TorusFunction {
    pub fn zero(dim: usize, band: i64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("torus dimension must be positive".into()));
        }
        if band < 0 {
            return Err(Error::InvalidArgument(format!("band radius {band} is negative")));
        }
        Ok(Self { dim, band, coeffs: BTreeMap::new() })
    }

    /// Builds a function from `(mode, amplitude)` pairs. Repeated modes are
    /// summed; exact zeros are dropped.
    pub fn from_modes<I>(dim: usize, band: i64, modes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Mode, Complex64)>,
    {
        let mut u = Self::zero(dim, band)?;
        for (m, c) in modes {
            u.check_mode(&m)?;
            *u.coeffs.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        u.coeffs.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        Ok(u)
    }

    /// `e^{i m·x}`.
    pub fn plane_wave(dim: usize, band: i64, mode: Mode) -> Result<Self> {
        Self::from_modes(dim, band, [(mode, Complex64::new(1.0, 0.0))])
    }

    /// Random coefficients (standard complex normal-ish) on every lattice
    /// point of the box.
    pub fn random_dense(dim: usize, band: i64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<_> = box_modes(dim, band)
            .into_iter()
            .map(|m| {
                let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                (m, c)
            })
            .collect();
        Self::from_modes(dim, band, modes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn band(&self) -> i64 {
        self.band
    }

    pub fn coeffs(&self) -> &BTreeMap<Mode, Complex64> {
        &self.coeffs
    }

    pub fn coeff(&self, m: &[i64]) -> Complex64 {
        self.coeffs.get(m).copied().unwrap_or_default()
    }

    pub fn num_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn in_band(&self, m: &[i64]) -> bool {
        m.len() == self.dim && m.iter().all(|&c| c.abs() <= self.band)
    }

    fn check_mode(&self, m: &[i64]) -> Result<()> {
        if m.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: m.len() });
        }
        if !self.in_band(m) {
            return Err(Error::OutOfBand { mode: m.to_vec(), band: self.band });
        }
        Ok(())
    }

    /// L2 norm via Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.values().fold(0.0, |acc, c| acc + c.norm_sqr()).sqrt()
    }

    /// `⟨self, other⟩ = Σ û(m) conj(v̂(m))`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        self.coeffs.iter().filter_map(|(m, c)| other.coeffs.get(m).map(|d| c * d.conj())).sum()
    }

    /// Pointwise evaluation of the Fourier series.
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(m, c)| {
                let phase: f64 = m.iter().zip(x).map(|(&mj, &xj)| mj as f64 * xj).sum();
                c * Complex64::from_polar(1.0, phase)
            })
            .sum()
    }

    /// Same coefficients in a different box. Fails if a stored mode would
    /// fall outside the new box.
    pub fn with_band(&self, band: i64) -> Result<Self> {
        let mut out = Self::zero(self.dim, band)?;
        for (m, c) in &self.coeffs {
            out.check_mode(m)?;
            out.coeffs.insert(m.clone(), *c);
        }
        Ok(out)
    }

    /// `x ↦ u(x − a)`.
    pub fn translate(&self, a: &[f64]) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|(m, c)| {
                let phase: f64 = m.iter().zip(a).map(|(&mj, &aj)| mj as f64 * aj).sum();
                (m.clone(), c * Complex64::from_polar(1.0, -phase))
            })
            .collect();
        Self { dim: self.dim, band: self.band, coeffs }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        out.coeffs.values_mut().for_each(|c| *c *= s);
        out.coeffs.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        out
    }

    /// Sum of two functions; the result lives in the larger box.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let band = self.band.max(other.band);
        let modes = self.coeffs.iter().chain(other.coeffs.iter()).map(|(m, c)| (m.clone(), *c));
        Self::from_modes(self.dim, band, modes)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Multiplies each coefficient by a function of its mode.
    pub fn multiply_modes<F>(&self, mut f: F) -> Self
    where
        F: FnMut(&[i64]) -> Complex64,
    {
        let mut coeffs = BTreeMap::new();
        for (m, c) in &self.coeffs {
            let v = c * f(m);
            if v != Complex64::new(0.0, 0.0) {
                coeffs.insert(m.clone(), v);
            }
        }
        Self { dim: self.dim, band: self.band, coeffs }
    }

    /// The semiclassical Fourier transform: `û(m)` relabelled at `ξ = h·m`.
    pub fn semiclassical_fourier(&self, h: f64) -> Result<SemiclassicalSpectrum> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("h = {h} must be positive")));
        }
        let points = self.coeffs.iter().map(|(m, c)| (m.iter().map(|&mj| h * mj as f64).collect(), *c)).collect();
        Ok(SemiclassicalSpectrum { h, points })
    }
}

/// Every lattice point of the box `|m_j| <= band`, in lexicographic order.
pub fn box_modes(dim: usize, band: i64) -> Vec<Mode> {
    let mut out = vec![Vec::with_capacity(dim)];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-band..=band).map(move |c| {
                    let mut m = prefix.clone();
                    m.push(c);
                    m
                })
            })
            .collect();
    }
    out
}

/// `û(m)` placed at `ξ = h·m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemiclassicalSpectrum {
    pub h: f64,
    pub points: Vec<(Vec<f64>, Complex64)>,
}

impl SemiclassicalSpectrum {
    pub fn l2_norm(&self) -> f64 {
        self.points.iter().fold(0.0, |acc, (_, c)| acc + c.norm_sqr()).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyEntry {
    pub h: f64,
    #[serde(rename = "function")]
    pub u: TorusFunction,
}

/// An h-family `u_h`, with `h` strictly decreasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyDoc", into = "FamilyDoc")]
pub struct SemiclassicalFamily {
    label: String,
    entries: Vec<FamilyEntry>,
}

impl SemiclassicalFamily {
    pub fn new(label: impl Into<String>, entries: Vec<FamilyEntry>) -> Result<Self> {
        let label = label.into();
        let Some(first) = entries.first() else {
            return Err(Error::InvalidFamily(format!("family '{label}' is empty")));
        };
        let dim = first.u.dim();
        for (i, e) in entries.iter().enumerate() {
            // h = 1 is admitted so reciprocal schedules may start at j = 1.
            if !(e.h > 0.0 && e.h <= 1.0) {
                return Err(Error::InvalidFamily(format!("h = {} outside (0, 1]", e.h)));
            }
            if e.u.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: e.u.dim() });
            }
            if i > 0 && !(e.h < entries[i - 1].h) {
                return Err(Error::InvalidFamily(format!(
                    "h values must strictly decrease ({} then {})",
                    entries[i - 1].h,
                    e.h
                )));
            }
        }
        Ok(Self { label, entries })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn entries(&self) -> &[FamilyEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries[0].u.dim()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.h).collect()
    }

    /// Entry-wise map, keeping the h schedule.
    pub fn map<F>(&self, label: impl Into<String>, mut f: F) -> Result<Self>
    where
        F: FnMut(f64, &TorusFunction) -> Result<TorusFunction>,
    {
        let entries =
            self.entries.iter().map(|e| Ok(FamilyEntry { h: e.h, u: f(e.h, &e.u)? })).collect::<Result<Vec<_>>>()?;
        Self::new(label, entries)
    }
}

/// `h_j = 1/j` for `j = j_min..=j_max`, strictly decreasing.
pub fn reciprocal_schedule(j_min: u64, j_max: u64) -> Vec<f64> {
    (j_min.max(1)..=j_max).map(|j| 1.0 / j as f64).collect()
}

/// The quasimode `u_k = exp[i(k(x_1 + … + x_{n−1}) + k² x_n)]` together with
/// `h_k = ((n−1)k² + k⁴)^{−1/2}`, so that `(h_k²Δ − 1)u_k = 0`.
pub fn make_uk(n: usize, k: i64) -> Result<(f64, TorusFunction)> {
    make_uk_with_headroom(n, k, DEFAULT_HEADROOM)
}

pub fn make_uk_with_headroom(n: usize, k: i64, headroom: i64) -> Result<(f64, TorusFunction)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("u_k needs n >= 2, got {n}")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("u_k is undefined for k = 0".into()));
    }
    let (h, mode) = uk_mode(n, k);
    let band = k * k + headroom;
    Ok((h, TorusFunction::plane_wave(n, band, mode)?))
}

/// `(h_k, (k, …, k, k²))`.
pub fn uk_mode(n: usize, k: i64) -> (f64, Mode) {
    let kf = k as f64;
    let h = 1.0 / ((n as f64 - 1.0) * kf * kf + kf.powi(4)).sqrt();
    let mut mode = vec![k; n - 1];
    mode.push(k * k);
    (h, mode)
}

/// The family `{u_k}` ordered so that `h` decreases, i.e. by increasing `|k|`.
pub fn make_uk_family(n: usize, ks: &[i64]) -> Result<SemiclassicalFamily> {
    let mut ks = ks.to_vec();
    ks.sort_by_key(|k| k.abs());
    ks.dedup();
    let band = ks.iter().map(|k| k * k).max().unwrap_or(0) + DEFAULT_HEADROOM;
    let entries = ks
        .iter()
        .map(|&k| {
            let (h, u) = make_uk(n, k)?;
            Ok(FamilyEntry { h, u: u.with_band(band)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let sign = if ks.first().is_some_and(|k| *k < 0) { "-" } else { "+" };
    SemiclassicalFamily::new(format!("uk-n{n}{sign}"), entries)
}

/// `e^{i j (m₀·x)}` for each `h = 1/j` of the schedule, so the
/// semiclassical frequency stays locked at `ξ = m₀`.
pub fn make_plane_wave_family(m0: &[i64], hs: &[f64]) -> Result<SemiclassicalFamily> {
    if m0.iter().all(|&c| c == 0) {
        return Err(Error::InvalidArgument("plane-wave direction must be nonzero".into()));
    }
    let js = hs
        .iter()
        .map(|&h| {
            let j = (1.0 / h).round();
            if !(h > 0.0) || j < 1.0 || (j * h - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "h = {h} is not a reciprocal integer; frequency would leave the lattice"
                )));
            }
            Ok(j as i64)
        })
        .collect::<Result<Vec<_>>>()?;
    let amax = m0.iter().map(|c| c.abs()).max().unwrap_or(0);
    let band = js.iter().copied().max().unwrap_or(0) * amax + DEFAULT_HEADROOM;
    let entries = hs
        .iter()
        .zip(&js)
        .map(|(&h, &j)| {
            let mode = m0.iter().map(|&c| c * j).collect();
            Ok(FamilyEntry { h, u: TorusFunction::plane_wave(m0.len(), band, mode)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let label = format!("plane-wave{m0:?}");
    SemiclassicalFamily::new(label, entries)
}

/// A family of identically zero functions on the given schedule.
pub fn make_zero_family(dim: usize, hs: &[f64]) -> Result<SemiclassicalFamily> {
    let entries = hs
        .iter()
        .map(|&h| Ok(FamilyEntry { h, u: TorusFunction::zero(dim, DEFAULT_HEADROOM)? }))
        .collect::<Result<Vec<_>>>()?;
    SemiclassicalFamily::new("zero", entries)
}

/// A wave packet `Σ_q g(q) e^{i(m + q e_axis)·x}` with gaussian weights of
/// width `sigma` modes, concentrated near `x_axis = center`.
pub fn axis_packet(base: &[i64], axis: usize, sigma: f64, center: f64, band: i64) -> Result<TorusFunction> {
    if axis >= base.len() {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("packet width must be positive".into()));
    }
    let reach = (8.0 * sigma).ceil() as i64;
    let norm = (PI.sqrt() * sigma).sqrt();
    let modes = (-reach..=reach).map(|q| {
        let mut m = base.to_vec();
        m[axis] += q;
        let qf = q as f64;
        let amp = (-(qf * qf) / (2.0 * sigma * sigma)).exp() / norm;
        (m, Complex64::from_polar(amp, -qf * center))
    });
    let u = TorusFunction::from_modes(base.len(), band, modes)?;
    let n = u.l2_norm();
    Ok(u.scale(Complex64::new(1.0 / n, 0.0)))
}

#[derive(Serialize, Deserialize)]
struct FunctionDoc {
    dim: usize,
    band: i64,
    coeffs: Vec<(Mode, f64, f64)>,
}

impl From<TorusFunction> for FunctionDoc {
    fn from(u: TorusFunction) -> Self {
        let coeffs = u.coeffs.into_iter().map(|(m, c)| (m, c.re, c.im)).collect();
        Self { dim: u.dim, band: u.band, coeffs }
    }
}

impl TryFrom<FunctionDoc> for TorusFunction {
    type Error = Error;

    fn try_from(doc: FunctionDoc) -> Result<Self> {
        let modes = doc.coeffs.into_iter().map(|(m, re, im)| (m, Complex64::new(re, im)));
        TorusFunction::from_modes(doc.dim, doc.band, modes)
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyDoc {
    label: String,
    entries: Vec<FamilyEntry>,
}

impl From<SemiclassicalFamily> for FamilyDoc {
    fn from(f: SemiclassicalFamily) -> Self {
        Self { label: f.label, entries: f.entries }
    }
}

impl TryFrom<FamilyDoc> for SemiclassicalFamily {
    type Error = Error;

    fn try_from(doc: FamilyDoc) -> Result<Self> {
        SemiclassicalFamily::new(doc.label, doc.entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn constant_has_unit_norm() {
        let u = TorusFunction::plane_wave(2, 3, vec![0, 0]).unwrap();
        assert_eq!(u.l2_norm(), 1.0);
    }

    #[test]
    fn pythagorean_pair() {
        let u = TorusFunction::from_modes(2, 4, [(vec![3, 0], c(0.6)), (vec![0, 4], c(0.8))]).unwrap();
        assert!((u.l2_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parseval_matches_grid_quadrature() {
        // Trapezoidal rule on 2B+1 points per axis integrates |u|² exactly:
        // its frequencies stay below 2B+1 in modulus.
        let band = 3;
        let u = TorusFunction::random_dense(2, band, 11).unwrap();
        let npts = (2 * band + 1) as usize;
        let step = 2.0 * PI / npts as f64;
        let mut acc = 0.0;
        for i in 0..npts {
            for j in 0..npts {
                acc += u.eval(&[i as f64 * step, j as f64 * step]).norm_sqr();
            }
        }
        let quad = (acc / (npts * npts) as f64).sqrt();
        assert!((quad - u.l2_norm()).abs() < 1e-10, "{quad} vs {}", u.l2_norm());
    }

    #[test]
    fn out_of_band_modes_are_rejected() {
        let err = TorusFunction::plane_wave(2, 2, vec![3, 0]).unwrap_err();
        assert!(matches!(err, Error::OutOfBand { .. }));
        let u = TorusFunction::plane_wave(2, 5, vec![4, 0]).unwrap();
        assert!(u.with_band(3).is_err());
    }

    #[test]
    fn semiclassical_fourier_of_plane_wave() {
        let u = TorusFunction::plane_wave(3, 5, vec![1, -2, 3]).unwrap();
        let s = u.semiclassical_fourier(0.25).unwrap();
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.points[0].0, vec![0.25, -0.5, 0.75]);
        assert_eq!(s.points[0].1, c(1.0));
        let z = TorusFunction::zero(3, 5).unwrap();
        assert!(z.semiclassical_fourier(0.1).unwrap().points.is_empty());
        assert!(u.semiclassical_fourier(0.0).is_err());
    }

    #[test]
    fn semiclassical_fourier_of_uk() {
        let (h, u) = make_uk(3, 5).unwrap();
        let s = u.semiclassical_fourier(h).unwrap();
        assert_eq!(s.points.len(), 1);
        let expect = [5.0 * h, 5.0 * h, 25.0 * h];
        for (a, b) in s.points[0].0.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn uk_small_cases() {
        let (h, u) = make_uk(3, 1).unwrap();
        assert!((h - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(u.coeff(&[1, 1, 1]), c(1.0));
        let (h, u) = make_uk(2, 2).unwrap();
        assert!((h - 1.0 / 20f64.sqrt()).abs() < 1e-15);
        assert_eq!(u.coeff(&[2, 4]), c(1.0));
        assert!(make_uk(3, 0).is_err());
        assert!(make_uk(1, 3).is_err());
    }

    #[test]
    fn uk_is_an_exact_eigenfunction() {
        for n in 2..=4 {
            for k in (-60..=60).filter(|&k| k != 0) {
                let (h, u) = make_uk(n, k).unwrap();
                let r = u.multiply_modes(|m| {
                    let m2: f64 = m.iter().map(|&v| (v * v) as f64).sum();
                    c(h * h * m2 - 1.0)
                });
                assert!(r.l2_norm() <= 4.0 * f64::EPSILON, "n={n} k={k}: {}", r.l2_norm());
            }
        }
    }

    #[test]
    fn uk_family_is_ordered_by_h() {
        let f = make_uk_family(3, &[-8, -9, -10]).unwrap();
        assert!(f.hs().windows(2).all(|w| w[1] < w[0]));
        assert_eq!(f.entries()[0].u.coeff(&[-8, -8, 64]), c(1.0));
    }

    #[test]
    fn plane_wave_family_locks_frequency() {
        let hs = reciprocal_schedule(1, 50);
        let f = make_plane_wave_family(&[0, 0, 1], &hs).unwrap();
        assert_eq!(f.len(), 50);
        for e in f.entries() {
            let s = e.u.semiclassical_fourier(e.h).unwrap();
            assert_eq!(s.points.len(), 1);
            let xi = &s.points[0].0;
            assert!(xi[0] == 0.0 && xi[1] == 0.0 && (xi[2] - 1.0).abs() < 1e-14);
        }
        assert!(make_plane_wave_family(&[0, 0, 1], &[0.3]).is_err());
        assert!(make_plane_wave_family(&[0, 0, 0], &[0.5]).is_err());
    }

    #[test]
    fn family_invariants_are_enforced() {
        let u = TorusFunction::zero(2, 1).unwrap();
        let e = |h| FamilyEntry { h, u: u.clone() };
        assert!(SemiclassicalFamily::new("x", vec![e(0.5), e(0.5)]).is_err());
        assert!(SemiclassicalFamily::new("x", vec![e(0.2), e(0.5)]).is_err());
        assert!(SemiclassicalFamily::new("x", vec![e(1.5)]).is_err());
        assert!(SemiclassicalFamily::new("x", vec![]).is_err());
        let v = TorusFunction::zero(3, 1).unwrap();
        let bad = vec![e(0.5), FamilyEntry { h: 0.25, u: v }];
        assert!(matches!(SemiclassicalFamily::new("x", bad), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn translation_keeps_modulus() {
        let u = TorusFunction::random_dense(2, 2, 5).unwrap();
        let t = u.translate(&[0.3, -1.1]);
        for (m, cu) in u.coeffs() {
            assert!((t.coeff(m).norm() - cu.norm()).abs() < 1e-15);
        }
        let x = [0.7, 0.2];
        let shifted = [x[0] - 0.3, x[1] + 1.1];
        assert!((t.eval(&x) - u.eval(&shifted)).norm() < 1e-12);
    }

    #[test]
    fn packet_is_normalized_and_localized() {
        let p = axis_packet(&[0, 0, 100], 2, 6.0, 1.0, 200).unwrap();
        assert!((p.l2_norm() - 1.0).abs() < 1e-12);
        let near = p.eval(&[0.0, 0.0, 1.0]).norm();
        let far = p.eval(&[0.0, 0.0, 1.0 + PI]).norm();
        assert!(far < 1e-10 * near);
    }

    #[test]
    fn json_round_trip() {
        let u = TorusFunction::random_dense(2, 2, 3).unwrap();
        let s = serde_json::to_string(&u).unwrap();
        let back: TorusFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(u, back);
        let f = make_uk_family(2, &[3, 4]).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        let back: SemiclassicalFamily = serde_json::from_str(&s).unwrap();
        assert_eq!(f, back);
    }
}
