//! Symbols `a(x, ξ; h)` that are band-limited in `x`.
//!
//! A [`Symbol`] is a finite sum of terms `Σ_k c_k e^{ik·x} · P(ξ; h)`, one
//! shared ξ-profile `P` per term. Profiles are evaluable at any real `ξ` so
//! the half-lattice points used by Weyl quantization are available.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::Mode;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// `C^∞` step: 0 for `t <= 0`, 1 for `t >= 1`, built from `e^{-1/t}`.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

pub fn smoothstep_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - t;
    let a = (-1.0 / t).exp();
    let b = (-1.0 / s).exp();
    let da = a / (t * t);
    let db = -b / (s * s);
    (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub re: f64,
    pub im: f64,
    pub powers: Vec<u32>,
}

/// A ξ-profile. `rows`, where present, maps ξ to `Lξ` before the profile
/// acts (`None` means the identity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `Σ c_α ξ^α`.
    Polynomial {
        terms: Vec<Monomial>,
    },
    /// `exp(−|Lξ − c|² / w²)`.
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<Vec<f64>>>,
        center: Vec<f64>,
        width: f64,
    },
    /// `ψ(sign · (d·ξ) / s)` with `s = scale·h` when `semiclassical`, else
    /// `s = scale`; `ψ` is [`smoothstep`], supported in `(0, ∞)`.
    HalfLine {
        direction: Vec<f64>,
        scale: f64,
        sign: f64,
        #[serde(default)]
        semiclassical: bool,
    },
    /// Radial window in `r = |Lξ − c|`: equal to 1 for `lower <= r <= upper`
    /// and vanishing for `r >= upper + margin` (and `r <= lower − margin`).
    Plateau {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<Vec<Vec<f64>>>,
        center: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
        upper: f64,
        margin: f64,
    },
    /// Angular window of `g = Lξ` around the unit vector `axis`, vanishing
    /// outside the cone of half-angle `radius` and at `g = 0`. A radius of
    /// at least π gives the constant 1.
    Cone {
        rows: Vec<Vec<f64>>,
        axis: Vec<f64>,
        radius: f64,
    },
    Product {
        factors: Vec<Profile>,
    },
    /// `∂_{ξ_axis}` of the inner profile.
    Partial {
        axis: usize,
        of: Box<Profile>,
    },
}

fn apply_rows(rows: &Option<Vec<Vec<f64>>>, xi: &[f64]) -> Vec<f64> {
    match rows {
        None => xi.to_vec(),
        Some(rows) => rows.iter().map(|r| dot(r, xi)).collect(),
    }
}

fn row_entry(rows: &Option<Vec<Vec<f64>>>, i: usize, axis: usize) -> f64 {
    match rows {
        None => {
            if i == axis {
                1.0
            } else {
                0.0
            }
        }
        Some(rows) => rows[i].get(axis).copied().unwrap_or(0.0),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Profile {
    pub fn constant(c: Complex64) -> Self {
        Profile::Polynomial { terms: vec![Monomial { re: c.re, im: c.im, powers: vec![] }] }
    }

    pub fn one() -> Self {
        Self::constant(ONE)
    }

    /// `ξ_axis`.
    pub fn coordinate(axis: usize) -> Self {
        let mut powers = vec![0; axis + 1];
        powers[axis] = 1;
        Profile::Polynomial { terms: vec![Monomial { re: 1.0, im: 0.0, powers }] }
    }

    /// `exp(−ξ_axis²)` in dimension `dim`.
    pub fn axis_gaussian(dim: usize, axis: usize) -> Self {
        let mut row = vec![0.0; dim];
        row[axis] = 1.0;
        Profile::Gaussian { rows: Some(vec![row]), center: vec![0.0], width: 1.0 }
    }

    /// Compact bump equal to 1 at `center`, vanishing for `|Lξ − c| >= radius`.
    pub fn bump(rows: Option<Vec<Vec<f64>>>, center: Vec<f64>, radius: f64) -> Self {
        Profile::Plateau { rows, center, lower: None, upper: 0.0, margin: radius }
    }

    pub fn product(factors: Vec<Profile>) -> Self {
        Profile::Product { factors }
    }

    pub fn eval(&self, xi: &[f64], h: f64) -> Complex64 {
        match self {
            Profile::Polynomial { terms } => terms
                .iter()
                .map(|t| {
                    let mono: f64 = t
                        .powers
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| xi.get(i).copied().unwrap_or(0.0).powi(p as i32))
                        .product();
                    Complex64::new(t.re, t.im) * mono
                })
                .sum(),
            Profile::Gaussian { rows, center, width } => {
                let g = apply_rows(rows, xi);
                let r2: f64 = g.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                Complex64::new((-r2 / (width * width)).exp(), 0.0)
            }
            Profile::HalfLine { direction, scale, sign, semiclassical } => {
                let s = if *semiclassical { scale * h } else { *scale };
                Complex64::new(smoothstep(sign * dot(direction, xi) / s), 0.0)
            }
            Profile::Plateau { rows, center, lower, upper, margin } => {
                let g = apply_rows(rows, xi);
                let r = g.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                let outer = smoothstep((upper + margin - r) / margin);
                let inner = lower.map_or(1.0, |lo| smoothstep((r - lo + margin) / margin));
                Complex64::new(outer * inner, 0.0)
            }
            Profile::Cone { rows, axis, radius } => {
                if *radius >= PI {
                    return ONE;
                }
                let g: Vec<f64> = rows.iter().map(|r| dot(r, xi)).collect();
                let rho = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if rho == 0.0 {
                    return ZERO;
                }
                let cos_angle = dot(&g, axis) / rho;
                let c0 = radius.cos();
                Complex64::new(smoothstep((cos_angle - c0) / (1.0 - c0)), 0.0)
            }
            Profile::Product { factors } => factors.iter().map(|f| f.eval(xi, h)).product(),
            Profile::Partial { axis, of } => of.partial(xi, h, *axis),
        }
    }

    /// `∂_{ξ_axis}` of the profile: closed form for polynomial, gaussian,
    /// half-line and product profiles, central differences with step
    /// `1e−5·(1+|ξ|)` otherwise.
    pub fn partial(&self, xi: &[f64], h: f64, axis: usize) -> Complex64 {
        match self {
            Profile::Polynomial { terms } => terms
                .iter()
                .map(|t| {
                    let p_axis = t.powers.get(axis).copied().unwrap_or(0);
                    if p_axis == 0 {
                        return ZERO;
                    }
                    let mono: f64 = t
                        .powers
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| {
                            let v = xi.get(i).copied().unwrap_or(0.0);
                            if i == axis {
                                p as f64 * v.powi(p as i32 - 1)
                            } else {
                                v.powi(p as i32)
                            }
                        })
                        .product();
                    Complex64::new(t.re, t.im) * mono
                })
                .sum(),
            Profile::Gaussian { rows, center, width } => {
                let g = apply_rows(rows, xi);
                let w2 = width * width;
                let r2: f64 = g.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                let dr2: f64 =
                    g.iter().zip(center).enumerate().map(|(i, (a, c))| 2.0 * (a - c) * row_entry(rows, i, axis)).sum();
                Complex64::new(-dr2 / w2 * (-r2 / w2).exp(), 0.0)
            }
            Profile::HalfLine { direction, scale, sign, semiclassical } => {
                let s = if *semiclassical { scale * h } else { *scale };
                let t = sign * dot(direction, xi) / s;
                let d = direction.get(axis).copied().unwrap_or(0.0);
                Complex64::new(smoothstep_derivative(t) * sign * d / s, 0.0)
            }
            Profile::Product { factors } => (0..factors.len())
                .map(|i| {
                    factors
                        .iter()
                        .enumerate()
                        .map(|(j, f)| if i == j { f.partial(xi, h, axis) } else { f.eval(xi, h) })
                        .product::<Complex64>()
                })
                .sum(),
            _ => self.partial_numeric(xi, h, axis),
        }
    }

    pub fn partial_numeric(&self, xi: &[f64], h: f64, axis: usize) -> Complex64 {
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step = 1e-5 * (1.0 + norm);
        let mut plus = xi.to_vec();
        let mut minus = xi.to_vec();
        plus[axis] += step;
        minus[axis] -= step;
        (self.eval(&plus, h) - self.eval(&minus, h)) / (2.0 * step)
    }

    /// Complex conjugate profile. Every non-polynomial kind is real-valued.
    pub fn conj(&self) -> Self {
        match self {
            Profile::Polynomial { terms } => Profile::Polynomial {
                terms: terms.iter().map(|t| Monomial { re: t.re, im: -t.im, powers: t.powers.clone() }).collect(),
            },
            Profile::Product { factors } => Profile::Product { factors: factors.iter().map(Profile::conj).collect() },
            Profile::Partial { axis, of } => Profile::Partial { axis: *axis, of: Box::new(of.conj()) },
            other => other.clone(),
        }
    }

    /// True when the profile depends on `h`.
    pub fn is_h_dependent(&self) -> bool {
        match self {
            Profile::HalfLine { semiclassical, .. } => *semiclassical,
            Profile::Product { factors } => factors.iter().any(Profile::is_h_dependent),
            Profile::Partial { of, .. } => of.is_h_dependent(),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolTerm {
    /// `(k, c_k)`: the x-dependence `Σ c_k e^{ik·x}` of this term.
    pub modes: Vec<(Mode, f64, f64)>,
    pub profile: Profile,
}

impl SymbolTerm {
    pub fn new(modes: Vec<(Mode, Complex64)>, profile: Profile) -> Self {
        Self { modes: modes.into_iter().map(|(k, c)| (k, c.re, c.im)).collect(), profile }
    }

    pub fn mode_coeffs(&self) -> impl Iterator<Item = (&Mode, Complex64)> + '_ {
        self.modes.iter().map(|(k, re, im)| (k, Complex64::new(*re, *im)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orders {
    pub m: f64,
    pub l: f64,
}

/// A symbol `Σ_terms Σ_k c_k e^{ik·x} P_term(ξ; h)` with orders `(m, l)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Symbol {
    pub dim: usize,
    pub orders: Orders,
    pub terms: Vec<SymbolTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_hint: Option<Vec<(f64, f64)>>,
}

impl Symbol {
    pub fn new(dim: usize, terms: Vec<SymbolTerm>) -> Result<Self> {
        for t in &terms {
            for (k, _, _) in &t.modes {
                if k.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: k.len() });
                }
            }
        }
        Ok(Self { dim, orders: Orders { m: 0.0, l: 0.0 }, terms, support_hint: None })
    }

    pub fn with_orders(mut self, m: f64, l: f64) -> Self {
        self.orders = Orders { m, l };
        self
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, orders: Orders { m: 0.0, l: 0.0 }, terms: vec![], support_hint: None }
    }

    /// A Fourier multiplier `P(ξ)` (only the mode `k = 0`).
    pub fn multiplier(dim: usize, profile: Profile) -> Self {
        Self::single(dim, vec![0; dim], ONE, profile)
    }

    pub fn identity(dim: usize) -> Self {
        Self::multiplier(dim, Profile::one())
    }

    /// `c e^{ik·x} P(ξ)`.
    pub fn single(dim: usize, k: Mode, c: Complex64, profile: Profile) -> Self {
        Self {
            dim,
            orders: Orders { m: 0.0, l: 0.0 },
            terms: vec![SymbolTerm::new(vec![(k, c)], profile)],
            support_hint: None,
        }
    }

    /// Largest `|k_j|` over stored x-modes.
    pub fn x_band(&self) -> i64 {
        self.terms
            .iter()
            .flat_map(|t| t.modes.iter().flat_map(|(k, _, _)| k.iter().map(|c| c.abs())))
            .max()
            .unwrap_or(0)
    }

    pub fn is_h_dependent(&self) -> bool {
        self.terms.iter().any(|t| t.profile.is_h_dependent())
    }

    /// `â_k(ξ)` summed over terms.
    pub fn mode_profile(&self, k: &[i64], xi: &[f64], h: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| {
                let c: Complex64 = t.mode_coeffs().filter(|(kk, _)| kk.as_slice() == k).map(|(_, c)| c).sum();
                if c == ZERO {
                    ZERO
                } else {
                    c * t.profile.eval(xi, h)
                }
            })
            .sum()
    }

    /// Full evaluation `a(x, ξ; h)`.
    pub fn eval(&self, x: &[f64], xi: &[f64], h: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| {
                let xpart: Complex64 = t.mode_coeffs().map(|(k, c)| c * Complex64::from_polar(1.0, dot_i(k, x))).sum();
                xpart * t.profile.eval(xi, h)
            })
            .sum()
    }

    pub fn distinct_modes(&self) -> Vec<Mode> {
        let mut ks: Vec<Mode> = self.terms.iter().flat_map(|t| t.modes.iter().map(|(k, _, _)| k.clone())).collect();
        ks.sort();
        ks.dedup();
        ks
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            for m in &mut t.modes {
                let c = Complex64::new(m.1, m.2) * s;
                m.1 = c.re;
                m.2 = c.im;
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        Ok(out)
    }

    /// Pointwise product `a·b`.
    pub fn product(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut terms = Vec::new();
        for s in &self.terms {
            for t in &other.terms {
                terms.push(SymbolTerm::new(
                    convolve(s, t, |_, _| ONE),
                    Profile::product(vec![s.profile.clone(), t.profile.clone()]),
                ));
            }
        }
        let orders = Orders { m: self.orders.m + other.orders.m, l: self.orders.l + other.orders.l };
        Ok(Self { dim: self.dim, orders, terms, support_hint: None })
    }

    /// `conj(a)`: mode `k` with profile `P` becomes mode `−k` with `conj P`.
    pub fn conj(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let modes = t.mode_coeffs().map(|(k, c)| (k.iter().map(|v| -v).collect(), c.conj())).collect();
                SymbolTerm::new(modes, t.profile.conj())
            })
            .collect();
        Self { dim: self.dim, orders: self.orders, terms, support_hint: self.support_hint.clone() }
    }

    /// Samples `â_{−k}(ξ) = conj(â_k(ξ))` at the given points.
    pub fn is_real(&self, samples: &[Vec<f64>], h: f64, tol: f64) -> bool {
        let ks = self.distinct_modes();
        samples.iter().all(|xi| {
            ks.iter().all(|k| {
                let neg: Mode = k.iter().map(|v| -v).collect();
                let a = self.mode_profile(k, xi, h);
                let b = self.mode_profile(&neg, xi, h);
                (a - b.conj()).norm() <= tol * (1.0 + a.norm())
            })
        })
    }

    /// `{a, b} = Σ_i ∂_{ξ_i}a ∂_{x_i}b − ∂_{x_i}a ∂_{ξ_i}b`, with x-derivatives
    /// taken exactly on modes.
    pub fn poisson_bracket(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let i = Complex64::new(0.0, 1.0);
        let mut terms = Vec::new();
        for axis in 0..self.dim {
            for s in &self.terms {
                for t in &other.terms {
                    // ∂_ξ a · ∂_x b
                    let modes = convolve(s, t, |_, q| i * q[axis] as f64);
                    if !modes.is_empty() {
                        terms.push(SymbolTerm::new(
                            modes,
                            Profile::product(vec![
                                Profile::Partial { axis, of: Box::new(s.profile.clone()) },
                                t.profile.clone(),
                            ]),
                        ));
                    }
                    // −∂_x a · ∂_ξ b
                    let modes = convolve(s, t, |k, _| -i * k[axis] as f64);
                    if !modes.is_empty() {
                        terms.push(SymbolTerm::new(
                            modes,
                            Profile::product(vec![
                                s.profile.clone(),
                                Profile::Partial { axis, of: Box::new(t.profile.clone()) },
                            ]),
                        ));
                    }
                }
            }
        }
        let orders = Orders { m: self.orders.m + other.orders.m, l: self.orders.l + other.orders.l };
        Ok(Self { dim: self.dim, orders, terms, support_hint: None })
    }
}

fn dot_i(k: &[i64], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
}

/// Mode convolution with a per-pair weight; zero coefficients dropped.
fn convolve<W>(a: &SymbolTerm, b: &SymbolTerm, weight: W) -> Vec<(Mode, Complex64)>
where
    W: Fn(&[i64], &[i64]) -> Complex64,
{
    let mut acc: BTreeMap<Mode, Complex64> = BTreeMap::new();
    for (k, ck) in a.mode_coeffs() {
        for (q, cq) in b.mode_coeffs() {
            let w = weight(k, q);
            if w == ZERO {
                continue;
            }
            let kq: Mode = k.iter().zip(q).map(|(x, y)| x + y).collect();
            *acc.entry(kq).or_insert(ZERO) += ck * cq * w;
        }
    }
    acc.into_iter().filter(|(_, c)| *c != ZERO).collect()
}
