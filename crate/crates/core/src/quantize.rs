//! Left, right and Weyl quantization on the torus as exact lattice sums.
//!
//! For `a = Σ_k e^{ik·x} â_k(ξ)` and `u = Σ_m û(m) e^{im·x}`:
//!
//! * left:  `(Au)^(m) = Σ_k â_k(h(m−k)) û(m−k)`
//! * right: `(Au)^(m) = Σ_k â_k(hm) û(m−k)`
//! * Weyl:  `(Au)^(m) = Σ_k â_k(h(m−k/2)) û(m−k)`

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::loglog_fit;
use crate::symbol::{Monomial, Profile, Symbol};
use crate::torus::{box_modes, Mode, TorusFunction};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantization {
    Left,
    Right,
    Weyl,
}

impl Quantization {
    pub const ALL: [Quantization; 3] = [Quantization::Left, Quantization::Right, Quantization::Weyl];

    pub fn name(self) -> &'static str {
        match self {
            Quantization::Left => "left",
            Quantization::Right => "right",
            Quantization::Weyl => "weyl",
        }
    }
}

impl std::str::FromStr for Quantization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Quantization::Left),
            "right" => Ok(Quantization::Right),
            "weyl" => Ok(Quantization::Weyl),
            other => Err(Error::InvalidArgument(format!("unknown quantization `{other}`"))),
        }
    }
}

/// Quantization with optional deliberate defects, used as negative controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quantizer {
    pub kind: Quantization,
    /// Evaluates Weyl profiles at `hm + k/2` instead of `h(m + k/2)`.
    #[doc(hidden)]
    pub drop_weyl_h: bool,
}

impl From<Quantization> for Quantizer {
    fn from(kind: Quantization) -> Self {
        Self { kind, drop_weyl_h: false }
    }
}

impl Quantizer {
    fn accumulate(&self, a: &Symbol, u: &TorusFunction, h: f64) -> HashMap<Mode, Complex64> {
        let mut out: HashMap<Mode, Complex64> = HashMap::new();
        let mut xi = vec![0.0; u.dim()];
        for term in &a.terms {
            let modes: Vec<(&Mode, Complex64)> = term.mode_coeffs().collect();
            match self.kind {
                Quantization::Left => {
                    for (m, c) in u.coeffs() {
                        for (x, &mj) in xi.iter_mut().zip(m) {
                            *x = h * mj as f64;
                        }
                        let pv = term.profile.eval(&xi, h) * c;
                        if pv == ZERO {
                            continue;
                        }
                        for (k, ck) in &modes {
                            *out.entry(shift(m, k)).or_insert(ZERO) += ck * pv;
                        }
                    }
                }
                Quantization::Right => {
                    let mut acc: HashMap<Mode, Complex64> = HashMap::new();
                    for (m, c) in u.coeffs() {
                        for (k, ck) in &modes {
                            *acc.entry(shift(m, k)).or_insert(ZERO) += ck * c;
                        }
                    }
                    let mut acc: Vec<_> = acc.into_iter().collect();
                    acc.sort_by(|a, b| a.0.cmp(&b.0));
                    for (mk, v) in acc {
                        for (x, &mj) in xi.iter_mut().zip(&mk) {
                            *x = h * mj as f64;
                        }
                        let pv = term.profile.eval(&xi, h) * v;
                        if pv != ZERO {
                            *out.entry(mk).or_insert(ZERO) += pv;
                        }
                    }
                }
                Quantization::Weyl => {
                    for (m, c) in u.coeffs() {
                        for (k, ck) in &modes {
                            for ((x, &mj), &kj) in xi.iter_mut().zip(m).zip(k.iter()) {
                                *x = if self.drop_weyl_h {
                                    h * mj as f64 + 0.5 * kj as f64
                                } else {
                                    h * (mj as f64 + 0.5 * kj as f64)
                                };
                            }
                            let pv = term.profile.eval(&xi, h);
                            if pv != ZERO {
                                *out.entry(shift(m, k)).or_insert(ZERO) += ck * pv * c;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Applies `Op_h(a)` and keeps the modes inside the box of radius `band`.
    /// Returns the result and the L2 norm of the discarded part.
    pub fn apply_lossy(&self, a: &Symbol, u: &TorusFunction, h: f64, band: i64) -> Result<(TorusFunction, f64)> {
        check(a, u, h)?;
        let mut lost = 0.0;
        let mut kept = Vec::new();
        for (m, c) in self.accumulate(a, u, h) {
            if m.iter().all(|v| v.abs() <= band) {
                kept.push((m, c));
            } else {
                lost += c.norm_sqr();
            }
        }
        Ok((TorusFunction::from_modes(u.dim(), band, kept)?, lost.sqrt()))
    }

    /// Output in the input box; any mass leaving it is an error.
    pub fn apply(&self, a: &Symbol, u: &TorusFunction, h: f64) -> Result<TorusFunction> {
        let (out, lost) = self.apply_lossy(a, u, h, u.band())?;
        if lost > 0.0 {
            return Err(Error::Truncation { lost, band: u.band() });
        }
        Ok(out)
    }

    /// Output in a box enlarged by the x-band of `a`, so nothing is lost.
    pub fn apply_exact(&self, a: &Symbol, u: &TorusFunction, h: f64) -> Result<TorusFunction> {
        Ok(self.apply_lossy(a, u, h, u.band() + a.x_band())?.0)
    }
}

fn shift(m: &[i64], k: &[i64]) -> Mode {
    m.iter().zip(k).map(|(a, b)| a + b).collect()
}

fn check(a: &Symbol, u: &TorusFunction, h: f64) -> Result<()> {
    if a.dim != u.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim, got: u.dim() });
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("h = {h} must be positive")));
    }
    Ok(())
}

pub fn apply(a: &Symbol, kind: Quantization, u: &TorusFunction, h: f64) -> Result<TorusFunction> {
    Quantizer::from(kind).apply(a, u, h)
}

pub fn apply_lossy(
    a: &Symbol,
    kind: Quantization,
    u: &TorusFunction,
    h: f64,
    band: i64,
) -> Result<(TorusFunction, f64)> {
    Quantizer::from(kind).apply_lossy(a, u, h, band)
}

pub fn apply_exact(a: &Symbol, kind: Quantization, u: &TorusFunction, h: f64) -> Result<TorusFunction> {
    Quantizer::from(kind).apply_exact(a, u, h)
}

/// Symbol and quantization realising the L2 adjoint of `Op(a)`.
pub fn adjoint_symbol(a: &Symbol, kind: Quantization) -> (Symbol, Quantization) {
    let kind = match kind {
        Quantization::Left => Quantization::Right,
        Quantization::Right => Quantization::Left,
        Quantization::Weyl => Quantization::Weyl,
    };
    (a.conj(), kind)
}

/// `Op(a)* u`, computed without truncation.
pub fn adjoint_apply(a: &Symbol, kind: Quantization, u: &TorusFunction, h: f64) -> Result<TorusFunction> {
    let (b, k) = adjoint_symbol(a, kind);
    apply_exact(&b, k, u, h)
}

/// Matrix of `P Op(a) P` on the box of radius `band`, indexed by
/// [`box_modes`] order.
pub fn operator_matrix(a: &Symbol, kind: Quantization, h: f64, band: i64) -> Result<DMatrix<Complex64>> {
    let modes = box_modes(a.dim, band);
    let index: BTreeMap<&Mode, usize> = modes.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut mat = DMatrix::from_element(modes.len(), modes.len(), ZERO);
    for (j, m) in modes.iter().enumerate() {
        let e = TorusFunction::plane_wave(a.dim, band, m.clone())?;
        let (col, _) = apply_lossy(a, kind, &e, h, band)?;
        for (mm, c) in col.coeffs() {
            mat[(index[mm], j)] = *c;
        }
    }
    Ok(mat)
}

/// `max |M_ij − conj(M_ji)|`.
pub fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    let adj = m.adjoint();
    (m - adj).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Hermitian defect of `i(P A P B P − P B P A P)`.
pub fn commutator_hermitian_defect(a: &Symbol, b: &Symbol, kind: Quantization, h: f64, band: i64) -> Result<f64> {
    let ma = operator_matrix(a, kind, h, band)?;
    let mb = operator_matrix(b, kind, h, band)?;
    let c = (&ma * &mb - &mb * &ma) * Complex64::new(0.0, 1.0);
    Ok(hermitian_defect(&c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectRow {
    pub h: f64,
    pub defect: f64,
}

/// Defect as a function of `h` and its fitted power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub kind: Quantization,
    pub rows: Vec<DefectRow>,
    /// Fitted exponent; `+∞` when every defect is at rounding level.
    #[serde(with = "crate::fit::extended")]
    pub slope: f64,
    pub exact: bool,
}

/// Defects at or below this (relative to the probe norm) count as
/// rounding noise.
pub const ROUNDING_LEVEL: f64 = 1e-12;

fn convergence(kind: Quantization, hs: &[f64], defects: Vec<f64>) -> Result<ConvergenceReport> {
    let exact = defects.iter().all(|d| *d <= ROUNDING_LEVEL);
    let slope = if exact { f64::INFINITY } else { loglog_fit(hs, &defects)?.slope };
    let rows = hs.iter().zip(defects).map(|(&h, defect)| DefectRow { h, defect }).collect();
    Ok(ConvergenceReport { kind, rows, slope, exact })
}

fn max_relative<F>(probes: &[TorusFunction], mut f: F) -> Result<f64>
where
    F: FnMut(&TorusFunction) -> Result<f64>,
{
    let mut worst: f64 = 0.0;
    for v in probes {
        let n = v.l2_norm();
        if n > 0.0 {
            worst = worst.max(f(v)? / n);
        }
    }
    Ok(worst)
}

/// `max_v ‖Op(a)Op(b)v − Op(ab)v‖ / ‖v‖` for each `h`.
pub fn compose_check(
    a: &Symbol,
    b: &Symbol,
    q: Quantizer,
    hs: &[f64],
    probes: &[TorusFunction],
) -> Result<ConvergenceReport> {
    let ab = a.product(b)?;
    let defects = hs
        .iter()
        .map(|&h| {
            max_relative(probes, |v| {
                let bv = q.apply_exact(b, v, h)?;
                let abv = q.apply_exact(a, &bv, h)?;
                let direct = q.apply_exact(&ab, v, h)?;
                Ok(abv.sub(&direct)?.l2_norm())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    convergence(q.kind, hs, defects)
}

/// `max_v ‖[A, B]v − (h/i) Op({a, b})v‖ / ‖v‖` for each `h`.
pub fn commutator_check(
    a: &Symbol,
    b: &Symbol,
    q: Quantizer,
    hs: &[f64],
    probes: &[TorusFunction],
) -> Result<ConvergenceReport> {
    let bracket = a.poisson_bracket(b)?;
    let defects = hs
        .iter()
        .map(|&h| {
            max_relative(probes, |v| {
                let ab = q.apply_exact(a, &q.apply_exact(b, v, h)?, h)?;
                let ba = q.apply_exact(b, &q.apply_exact(a, v, h)?, h)?;
                let pb = q.apply_exact(&bracket, v, h)?.scale(Complex64::new(0.0, -h));
                let diff = ab.sub(&ba)?.sub(&pb)?;
                let worst = diff.coeffs().values().map(|c| c.norm()).fold(0.0, f64::max);
                if !worst.is_finite() {
                    return Err(Error::InvalidArgument("symbol is not differentiable at a lattice point".into()));
                }
                Ok(diff.l2_norm())
            })
        })
        .collect::<Result<Vec<_>>>()?;
    convergence(q.kind, hs, defects)
}

/// `max_v |⟨Op(a)u, v⟩ − ⟨u, Op(a)* v⟩|` over pairs of probes.
pub fn adjoint_defect(a: &Symbol, kind: Quantization, h: f64, probes: &[TorusFunction]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for u in probes {
        let au = apply_exact(a, kind, u, h)?;
        for v in probes {
            let asv = adjoint_apply(a, kind, v, h)?;
            let lhs = au.inner(v);
            let rhs = u.inner(&asv);
            worst = worst.max((lhs - rhs).norm());
        }
    }
    Ok(worst)
}

/// `e^{ix₁}·e^{−ξ₁²/2}`: the registered mixed symbol for algebra checks.
pub fn registered_mixed_symbol(dim: usize) -> Symbol {
    let mut k = vec![0; dim];
    k[0] = 1;
    Symbol::single(dim, k, Complex64::new(1.0, 0.0), Profile::axis_gaussian(dim, 0))
}

/// `ξ₁²/2`, the multiplier paired with the mixed symbol in commutator checks.
pub fn registered_kinetic_symbol(dim: usize) -> Symbol {
    let mut powers = vec![0; dim];
    powers[0] = 2;
    Symbol::multiplier(dim, Profile::Polynomial { terms: vec![Monomial { re: 0.5, im: 0.0, powers }] })
}
