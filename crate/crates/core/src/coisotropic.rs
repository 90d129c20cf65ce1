//! Linear coisotropics `𝒞 = 𝕋ⁿ × {v₁·ξ = … = v_d·ξ = 0}`, their
//! characteristic operators `B_j = v_j·hD_x`, and coisotropic regularity.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{loglog_fit, NORM_FLOOR};
use crate::torus::{SemiclassicalFamily, TorusFunction};

/// Smallest singular value relative to the largest below which rows are
/// treated as dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// `v` rows (codimension `d`) and completion rows `w`; `M = (v; w)` is
/// invertible and `ξ̃ = Mξ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoisotropicDoc", into = "CoisotropicDoc")]
pub struct LinearCoisotropic {
    dim: usize,
    v: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    m: DMatrix<f64>,
    m_inv: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct CoisotropicDoc {
    v: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

impl TryFrom<CoisotropicDoc> for LinearCoisotropic {
    type Error = Error;

    fn try_from(d: CoisotropicDoc) -> Result<Self> {
        Self::with_completion(d.v, d.w)
    }
}

impl From<LinearCoisotropic> for CoisotropicDoc {
    fn from(c: LinearCoisotropic) -> Self {
        Self { v: c.v, w: c.w }
    }
}

/// How missing completion rows are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    /// Standard basis vectors, scanned from the last axis down and kept
    /// when they raise the rank; stored in ascending axis order.
    #[default]
    Integer,
    /// Orthonormal basis of the orthogonal complement of `span(v)`.
    Orthogonal,
}

fn rank_ratio(rows: &[Vec<f64>], n: usize) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    let mat = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let sv = mat.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

impl LinearCoisotropic {
    /// Completes `v` with [`Completion::Integer`].
    pub fn new(v: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_strategy(v, Completion::Integer)
    }

    pub fn with_strategy(v: Vec<Vec<f64>>, strategy: Completion) -> Result<Self> {
        let n = Self::check_rows(&v)?;
        let w = match strategy {
            Completion::Integer => {
                let mut chosen: Vec<usize> = Vec::new();
                let mut rows = v.clone();
                for axis in (0..n).rev() {
                    if rows.len() == n {
                        break;
                    }
                    let mut e = vec![0.0; n];
                    e[axis] = 1.0;
                    rows.push(e);
                    if rank_ratio(&rows, n) > RANK_TOLERANCE {
                        chosen.push(axis);
                    } else {
                        rows.pop();
                    }
                }
                chosen.sort_unstable();
                chosen.into_iter().map(|a| (0..n).map(|j| if j == a { 1.0 } else { 0.0 }).collect()).collect()
            }
            Completion::Orthogonal => {
                let mut basis: Vec<DVector<f64>> = Vec::new();
                for row in &v {
                    let mut r = DVector::from_vec(row.clone());
                    for b in &basis {
                        r -= b * b.dot(&r);
                    }
                    basis.push(r.normalize());
                }
                let mut w = Vec::new();
                for axis in 0..n {
                    let mut e = DVector::zeros(n);
                    e[axis] = 1.0;
                    for b in &basis {
                        e -= b * b.dot(&e);
                    }
                    if e.norm() > 1e-8 {
                        let e = e.normalize();
                        basis.push(e.clone());
                        w.push(e.iter().copied().collect());
                    }
                    if basis.len() == n {
                        break;
                    }
                }
                w
            }
        };
        Self::with_completion(v, w)
    }

    /// Explicit completion rows.
    pub fn with_completion(v: Vec<Vec<f64>>, w: Vec<Vec<f64>>) -> Result<Self> {
        let n = Self::check_rows(&v)?;
        if v.len() + w.len() != n {
            return Err(Error::Degenerate(format!("completion has {} rows, need {}", w.len(), n - v.len())));
        }
        if let Some(r) = w.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: r.len() });
        }
        let rows: Vec<Vec<f64>> = v.iter().chain(&w).cloned().collect();
        if rank_ratio(&rows, n) <= RANK_TOLERANCE {
            return Err(Error::Degenerate("(v; w) is not invertible".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let m_inv = m.clone().try_inverse().ok_or_else(|| Error::Degenerate("(v; w) is not invertible".into()))?;
        Ok(Self { dim: n, v, w, m, m_inv })
    }

    fn check_rows(v: &[Vec<f64>]) -> Result<usize> {
        let n = v
            .first()
            .map(|r| r.len())
            .ok_or_else(|| Error::Degenerate("a coisotropic needs at least one row".into()))?;
        if n == 0 {
            return Err(Error::Degenerate("rows must be nonempty".into()));
        }
        if let Some(r) = v.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: r.len() });
        }
        if v.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Degenerate("rows must be finite".into()));
        }
        if v.len() > n {
            return Err(Error::Degenerate(format!("{} rows in dimension {n}", v.len())));
        }
        if rank_ratio(v, n) <= RANK_TOLERANCE {
            return Err(Error::Degenerate("rows of v are linearly dependent".into()));
        }
        Ok(n)
    }

    /// `{ξ_i = 0 : i ∈ axes}`.
    pub fn coordinate(dim: usize, axes: &[usize]) -> Result<Self> {
        let v = axes
            .iter()
            .map(|&a| {
                if a >= dim {
                    return Err(Error::InvalidArgument(format!("axis {a} out of range")));
                }
                Ok((0..dim).map(|j| if j == a { 1.0 } else { 0.0 }).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(v)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codim(&self) -> usize {
        self.v.len()
    }

    pub fn v(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn w(&self) -> &[Vec<f64>] {
        &self.w
    }

    /// `M = (v; w)`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn basis_inverse(&self) -> &DMatrix<f64> {
        &self.m_inv
    }

    /// `ξ̃ = Mξ`.
    pub fn to_tilde(&self, xi: &[f64]) -> Vec<f64> {
        (&self.m * DVector::from_column_slice(xi)).iter().copied().collect()
    }

    /// `ξ = M⁻¹ξ̃`.
    pub fn from_tilde(&self, xt: &[f64]) -> Vec<f64> {
        (&self.m_inv * DVector::from_column_slice(xt)).iter().copied().collect()
    }

    /// `(v₁·ξ, …, v_d·ξ)`.
    pub fn normal_part(&self, xi: &[f64]) -> Vec<f64> {
        self.v.iter().map(|r| r.iter().zip(xi).map(|(a, b)| a * b).sum()).collect()
    }

    /// `(v₁·m, …, v_d·m)` on a lattice mode.
    pub fn normal_part_mode(&self, m: &[i64]) -> Vec<f64> {
        self.v.iter().map(|r| r.iter().zip(m).map(|(a, &b)| a * b as f64).sum()).collect()
    }
}

/// `B_j u`: multiplies `û(m)` by `h(v_j·m)`. `j` is zero-based.
pub fn characteristic_apply(c: &LinearCoisotropic, j: usize, u: &TorusFunction, h: f64) -> Result<TorusFunction> {
    if j >= c.codim() {
        return Err(Error::InvalidArgument(format!("generator {j} out of range 0..{}", c.codim())));
    }
    if u.dim() != c.dim() {
        return Err(Error::DimensionMismatch { expected: c.dim(), got: u.dim() });
    }
    let v = &c.v()[j];
    Ok(u.multiply_modes(|m| {
        let vm: f64 = v.iter().zip(m).map(|(a, &b)| a * b as f64).sum();
        (h * vm).into()
    }))
}

/// `‖(1 + |h(v·m)|²)^{k/2} h^{−s} û‖` as an exact lattice sum.
pub fn regularity_norm(u: &TorusFunction, c: &LinearCoisotropic, k: u32, s: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("h = {h} must be positive")));
    }
    if u.dim() != c.dim() {
        return Err(Error::DimensionMismatch { expected: c.dim(), got: u.dim() });
    }
    if k == 0 && s == 0.0 {
        return Ok(u.l2_norm());
    }
    let sum: f64 = u
        .coeffs()
        .iter()
        .map(|(m, a)| {
            let q: f64 = c.normal_part_mode(m).iter().map(|p| (h * p).powi(2)).sum();
            (1.0 + q).powi(k as i32) * a.norm_sqr()
        })
        .sum();
    Ok(h.powf(-s) * sum.sqrt())
}

/// `‖𝐁^β u‖` in one pass. Generators commute, so the order is immaterial.
pub fn monomial_norm(u: &TorusFunction, c: &LinearCoisotropic, beta: &[u32], h: f64) -> f64 {
    u.coeffs()
        .iter()
        .map(|(m, a)| {
            let w: f64 = c.normal_part_mode(m).iter().zip(beta).map(|(p, &b)| (h * p).powi(b as i32)).product();
            w * w * a.norm_sqr()
        })
        .sum::<f64>()
        .sqrt()
}

/// Multi-indices `β ∈ ℕ^d` with `|β| <= k_max`, graded then lexicographic.
pub fn multi_indices(d: usize, k_max: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=k_max {
        let mut cur = vec![0u32; d];
        fill(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, rest: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = rest;
        out.push(cur.clone());
        return;
    }
    for b in (0..=rest).rev() {
        cur[pos] = b;
        fill(out, cur, pos + 1, rest - b);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundednessThresholds {
    /// Growth exponents at or above this count as bounded.
    #[serde(default = "default_slope_min")]
    pub slope_min: f64,
    /// Maximal ratio between the last sample and the sample two earlier.
    #[serde(default = "default_ratio_max")]
    pub ratio_max: f64,
}

fn default_slope_min() -> f64 {
    -0.1
}

fn default_ratio_max() -> f64 {
    1.2
}

impl Default for BoundednessThresholds {
    fn default() -> Self {
        Self { slope_min: default_slope_min(), ratio_max: default_ratio_max() }
    }
}

pub const MIN_REGULARITY_SAMPLES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: Vec<u32>,
    /// `(h, h^{−|β|−s}‖𝐁^β u_h‖)`.
    pub table: Vec<(f64, f64)>,
    #[serde(with = "crate::fit::extended")]
    pub sup: f64,
    /// Fitted exponent `p` in `norm ~ h^p`; `+∞` for an all-zero table.
    #[serde(with = "crate::fit::extended")]
    pub growth_exponent: f64,
    #[serde(with = "crate::fit::extended")]
    pub tail_ratio: f64,
    pub bounded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub label: String,
    pub s: f64,
    pub k_max: u32,
    pub thresholds: BoundednessThresholds,
    pub rows: Vec<BetaRow>,
    /// `verdicts[j]`: every `|β| <= j` is bounded.
    pub verdicts: Vec<bool>,
    /// Largest `j` with `verdicts[j]`, if any.
    pub regular_through: Option<u32>,
    /// Smallest failing order, if any.
    pub first_failure: Option<u32>,
}

impl RegularityReport {
    pub fn is_coisotropic_through(&self, k: u32) -> bool {
        self.verdicts.get(k as usize).copied().unwrap_or(false)
    }

    /// Worst growth exponent among multi-indices of order exactly `k`.
    pub fn growth_at_order(&self, k: u32) -> Option<f64> {
        self.rows.iter().filter(|r| r.beta.iter().sum::<u32>() == k).map(|r| r.growth_exponent).reduce(f64::min)
    }

    /// CSV with columns `beta,h,norm`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["beta", "h", "norm"])?;
        for row in &self.rows {
            let beta: Vec<String> = row.beta.iter().map(u32::to_string).collect();
            let beta = beta.join(" ");
            for (h, n) in &row.table {
                w.write_record([beta.clone(), format!("{h:e}"), format!("{n:e}")])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Tabulates `h^{−|β|−s}‖𝐁^β u_h‖` for `|β| <= k_max` and fits growth.
pub fn regularity_order(
    fam: &SemiclassicalFamily,
    c: &LinearCoisotropic,
    s: f64,
    k_max: u32,
    thresholds: BoundednessThresholds,
) -> Result<RegularityReport> {
    if fam.dim() != c.dim() {
        return Err(Error::DimensionMismatch { expected: c.dim(), got: fam.dim() });
    }
    if fam.len() < MIN_REGULARITY_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_REGULARITY_SAMPLES, have: fam.len() });
    }
    let betas = multi_indices(c.codim(), k_max);
    let rows = betas
        .into_par_iter()
        .map(|beta| {
            let order: u32 = beta.iter().sum();
            let table: Vec<(f64, f64)> = fam
                .entries()
                .iter()
                .map(|e| {
                    let norm = monomial_norm(&e.u, c, &beta, e.h);
                    (e.h, e.h.powf(-(order as f64) - s) * norm)
                })
                .collect();
            beta_row(beta, table, thresholds)
        })
        .collect::<Result<Vec<_>>>()?;
    let verdicts: Vec<bool> =
        (0..=k_max).map(|j| rows.iter().filter(|r| r.beta.iter().sum::<u32>() <= j).all(|r| r.bounded)).collect();
    let first_failure = verdicts.iter().position(|v| !v).map(|j| j as u32);
    let regular_through = match first_failure {
        Some(0) => None,
        Some(j) => Some(j - 1),
        None => Some(k_max),
    };
    Ok(RegularityReport {
        label: fam.label().to_string(),
        s,
        k_max,
        thresholds,
        rows,
        verdicts,
        regular_through,
        first_failure,
    })
}

fn beta_row(beta: Vec<u32>, table: Vec<(f64, f64)>, th: BoundednessThresholds) -> Result<BetaRow> {
    let hs: Vec<f64> = table.iter().map(|t| t.0).collect();
    let ns: Vec<f64> = table.iter().map(|t| t.1).collect();
    let sup = ns.iter().copied().fold(0.0, f64::max);
    let growth_exponent = loglog_fit(&hs, &ns)?.slope;
    let len = ns.len();
    let tail_ratio = if ns[len - 3] < NORM_FLOOR {
        if ns[len - 1] < NORM_FLOOR {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        ns[len - 1] / ns[len - 3]
    };
    let bounded = growth_exponent >= th.slope_min && tail_ratio <= th.ratio_max;
    Ok(BetaRow { beta, table, sup, growth_exponent, tail_ratio, bounded })
}
