//! Charts on the blown-up symbol spaces.
//!
//! Projective chart with pivot `j`: `ζ = v_j·ξ`, `H = h/ζ`,
//! `Ξ_i = (v_i·ξ)/ζ` for `i ≠ j`, `W = w·ξ`, so `ζH = h`.
//! Polar chart: `ρ_ff = |v·ξ|`, `Γ' = v·ξ/ρ_ff`, `ξ'' = w·ξ`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::coisotropic::LinearCoisotropic;
use crate::error::{Error, Result};

/// Central-difference step used by [`lift_check`].
pub const LIFT_STEP: f64 = 1e-5;

/// A point `(x, ξ, h)` of `T*𝕋ⁿ × [0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectivePoint {
    pub x: Vec<f64>,
    pub zeta: f64,
    #[serde(rename = "H")]
    pub big_h: f64,
    /// `Ξ_i` for `i ≠ pivot`, in increasing `i`.
    #[serde(rename = "Xi")]
    pub ratios: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
}

impl ProjectivePoint {
    /// `(ρ_ff, ρ_sf) = (|ζ|, |H|)`.
    pub fn defining_functions(&self) -> (f64, f64) {
        (self.zeta.abs(), self.big_h.abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectiveChart {
    pub c: LinearCoisotropic,
    pub pivot: usize,
    /// `+1` or `−1`: the chart covers `sign · v_pivot·ξ > 0`.
    pub sign: i8,
}

impl ProjectiveChart {
    pub fn new(c: LinearCoisotropic, pivot: usize, sign: i8) -> Result<Self> {
        if pivot >= c.codim() {
            return Err(Error::InvalidArgument(format!("pivot {pivot} out of range 0..{}", c.codim())));
        }
        if sign != 1 && sign != -1 {
            return Err(Error::InvalidArgument(format!("sign must be ±1, got {sign}")));
        }
        Ok(Self { c, pivot, sign })
    }

    fn covers(&self, zeta: f64) -> bool {
        zeta * f64::from(self.sign) > 0.0
    }

    pub fn to_projective(&self, p: &PhasePoint) -> Result<ProjectivePoint> {
        let n = self.c.dim();
        if p.xi.len() != n || p.x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: p.xi.len() });
        }
        let vq = self.c.normal_part(&p.xi);
        let zeta = vq[self.pivot];
        if !self.covers(zeta) {
            return Err(Error::ChartDomain(format!(
                "v_{}·ξ = {zeta} is outside the chart with sign {}",
                self.pivot, self.sign
            )));
        }
        let ratios = vq.iter().enumerate().filter(|(i, _)| *i != self.pivot).map(|(_, q)| q / zeta).collect();
        let w = self.c.w().iter().map(|r| r.iter().zip(&p.xi).map(|(a, b)| a * b).sum()).collect();
        Ok(ProjectivePoint { x: p.x.clone(), zeta, big_h: p.h / zeta, ratios, w })
    }

    pub fn from_projective(&self, q: &ProjectivePoint) -> Result<PhasePoint> {
        let d = self.c.codim();
        if q.ratios.len() + 1 != d || q.w.len() != self.c.dim() - d {
            return Err(Error::DimensionMismatch { expected: self.c.dim(), got: q.ratios.len() + 1 + q.w.len() });
        }
        let mut xt = Vec::with_capacity(self.c.dim());
        let mut it = q.ratios.iter();
        for i in 0..d {
            xt.push(if i == self.pivot { q.zeta } else { it.next().unwrap() * q.zeta });
        }
        xt.extend_from_slice(&q.w);
        Ok(PhasePoint { x: q.x.clone(), xi: self.c.from_tilde(&xt), h: q.big_h * q.zeta })
    }

    /// `H·V⃗f`, with `V⃗ = v_j^i ζ∂_ζ − v_j^i H∂_H + w^i·ζ∂_W + v^i·∂_Ξ − v_j^i Ξ·∂_Ξ`.
    pub fn lifted_derivative(&self, i: usize, f: &dyn ChartFunction, q: &ProjectivePoint) -> f64 {
        let g = f.gradient(q);
        let v = self.c.v();
        let vj = v[self.pivot][i];
        let mut out = vj * q.zeta * g.d_zeta - vj * q.big_h * g.d_h;
        for (wr, dw) in self.c.w().iter().zip(&g.d_w) {
            out += wr[i] * q.zeta * dw;
        }
        let others = (0..v.len()).filter(|&k| k != self.pivot);
        for ((k, xi), dxi) in others.zip(&q.ratios).zip(&g.d_ratios) {
            out += (v[k][i] - vj * xi) * dxi;
        }
        q.big_h * out
    }
}

/// Partial derivatives of a chart function in chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartGradient {
    pub d_x: Vec<f64>,
    pub d_zeta: f64,
    pub d_h: f64,
    pub d_ratios: Vec<f64>,
    pub d_w: Vec<f64>,
}

/// A smooth function on a projective chart with a closed-form gradient.
pub trait ChartFunction: Sync {
    fn name(&self) -> &str;
    fn value(&self, q: &ProjectivePoint) -> f64;
    fn gradient(&self, q: &ProjectivePoint) -> ChartGradient;
}

fn zero_gradient(q: &ProjectivePoint) -> ChartGradient {
    ChartGradient {
        d_x: vec![0.0; q.x.len()],
        d_zeta: 0.0,
        d_h: 0.0,
        d_ratios: vec![0.0; q.ratios.len()],
        d_w: vec![0.0; q.w.len()],
    }
}

/// `f = H`.
pub struct SideFace;

impl ChartFunction for SideFace {
    fn name(&self) -> &str {
        "H"
    }
    fn value(&self, q: &ProjectivePoint) -> f64 {
        q.big_h
    }
    fn gradient(&self, q: &ProjectivePoint) -> ChartGradient {
        ChartGradient { d_h: 1.0, ..zero_gradient(q) }
    }
}

/// The first `Ξ` coordinate, or the first `W` coordinate when `d = 1`.
pub struct FirstFiber;

impl ChartFunction for FirstFiber {
    fn name(&self) -> &str {
        "first-fiber"
    }
    fn value(&self, q: &ProjectivePoint) -> f64 {
        q.ratios.first().or(q.w.first()).copied().unwrap_or(0.0)
    }
    fn gradient(&self, q: &ProjectivePoint) -> ChartGradient {
        let mut g = zero_gradient(q);
        if !g.d_ratios.is_empty() {
            g.d_ratios[0] = 1.0;
        } else if !g.d_w.is_empty() {
            g.d_w[0] = 1.0;
        }
        g
    }
}

/// `sin(ζ) e^{−H²} cos(ΣW) (1 + ΣΞ²) cos(x₁)`.
pub struct Mixed;

impl ChartFunction for Mixed {
    fn name(&self) -> &str {
        "mixed"
    }
    fn value(&self, q: &ProjectivePoint) -> f64 {
        let (a, b, c, d, e) = Mixed::factors(q);
        a * b * c * d * e
    }
    fn gradient(&self, q: &ProjectivePoint) -> ChartGradient {
        let (a, b, c, d, e) = Mixed::factors(q);
        let sw: f64 = q.w.iter().sum();
        let mut g = zero_gradient(q);
        g.d_zeta = q.zeta.cos() * b * c * d * e;
        g.d_h = a * (-2.0 * q.big_h * b) * c * d * e;
        g.d_w = vec![a * b * (-sw.sin()) * d * e; q.w.len()];
        g.d_ratios = q.ratios.iter().map(|r| a * b * c * 2.0 * r * e).collect();
        g.d_x[0] = a * b * c * d * (-q.x[0].sin());
        g
    }
}

impl Mixed {
    fn factors(q: &ProjectivePoint) -> (f64, f64, f64, f64, f64) {
        let sw: f64 = q.w.iter().sum();
        let sr: f64 = q.ratios.iter().map(|r| r * r).sum();
        (q.zeta.sin(), (-q.big_h * q.big_h).exp(), sw.cos(), 1.0 + sr, q.x[0].cos())
    }
}

/// The registered chart functions.
pub fn registered_chart_functions() -> Vec<Box<dyn ChartFunction>> {
    vec![Box::new(SideFace), Box::new(FirstFiber), Box::new(Mixed)]
}

/// Random chart points with `|ζ| ∈ [0.5, 2]`, `|H| ∈ [0.05, 1]`,
/// `Ξ ∈ [−1, 1]`, `W ∈ [−2, 2]`.
pub fn random_chart_points(chart: &ProjectiveChart, count: usize, seed: u64) -> Vec<ProjectivePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = f64::from(chart.sign);
    let n = chart.c.dim();
    let d = chart.c.codim();
    (0..count)
        .map(|_| ProjectivePoint {
            x: (0..n).map(|_| rng.gen_range(0.0..TAU)).collect(),
            zeta: s * rng.gen_range(0.5..2.0),
            big_h: s * rng.gen_range(0.05..1.0),
            ratios: (0..d - 1).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            w: (0..n - d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        })
        .collect()
}

/// Max over samples of `|h·∂_{ξ_i}(f∘chart) − H·V⃗f|`, the left side by
/// central differences with step [`LIFT_STEP`].
pub fn lift_check(
    chart: &ProjectiveChart,
    i: usize,
    f: &dyn ChartFunction,
    samples: &[ProjectivePoint],
) -> Result<f64> {
    if i >= chart.c.dim() {
        return Err(Error::InvalidArgument(format!("axis {i} out of range")));
    }
    let vj = chart.c.v()[chart.pivot][i];
    let mut worst: f64 = 0.0;
    for q in samples {
        if q.zeta.abs() <= 10.0 * LIFT_STEP * vj.abs() {
            return Err(Error::ChartDomain(format!(
                "ζ = {} is too close to the chart boundary for differencing",
                q.zeta
            )));
        }
        let p = chart.from_projective(q)?;
        let eval = |delta: f64| -> Result<f64> {
            let mut xi = p.xi.clone();
            xi[i] += delta;
            let shifted = PhasePoint { x: p.x.clone(), xi, h: p.h };
            Ok(f.value(&chart.to_projective(&shifted)?))
        };
        let lhs = p.h * (eval(LIFT_STEP)? - eval(-LIFT_STEP)?) / (2.0 * LIFT_STEP);
        let rhs = chart.lifted_derivative(i, f, q);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// A point of the polar chart; `gamma` is a unit vector in `ℝ^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub x: Vec<f64>,
    pub rho: f64,
    pub gamma: Vec<f64>,
    pub xi2: Vec<f64>,
}

impl PolarPoint {
    /// `θ = atan2(Γ₂, Γ₁)`; only in codimension 2.
    pub fn theta(&self) -> Result<f64> {
        match self.gamma.as_slice() {
            [a, b] => Ok(b.atan2(*a)),
            g => Err(Error::InvalidArgument(format!("angle needs codimension 2, got {}", g.len()))),
        }
    }
}

/// `(x, ξ) ↦ (x, ρ_ff, Γ', ξ'')`. On `𝒞` itself `gamma` must be supplied.
pub fn to_polar(c: &LinearCoisotropic, x: &[f64], xi: &[f64], gamma: Option<&[f64]>) -> Result<PolarPoint> {
    let n = c.dim();
    if xi.len() != n || x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: xi.len() });
    }
    let xt = c.to_tilde(xi);
    let d = c.codim();
    let rho = xt[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
    let gamma = if rho > 0.0 {
        xt[..d].iter().map(|v| v / rho).collect()
    } else {
        let g = gamma.ok_or_else(|| Error::ChartDomain("ρ_ff = 0 and no direction Γ' supplied".into()))?;
        unit(g, d)?
    };
    Ok(PolarPoint { x: x.to_vec(), rho, gamma, xi2: xt[d..].to_vec() })
}

/// `(x, ρ_ff, Γ', ξ'') ↦ (x, ξ)`.
pub fn from_polar(c: &LinearCoisotropic, p: &PolarPoint) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = c.codim();
    if p.gamma.len() != d || p.xi2.len() != c.dim() - d {
        return Err(Error::DimensionMismatch { expected: c.dim(), got: p.gamma.len() + p.xi2.len() });
    }
    let mut xt: Vec<f64> = p.gamma.iter().map(|g| p.rho * g).collect();
    xt.extend_from_slice(&p.xi2);
    Ok((p.x.clone(), c.from_tilde(&xt)))
}

pub(crate) fn unit(g: &[f64], d: usize) -> Result<Vec<f64>> {
    if g.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: g.len() });
    }
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || (n - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("Γ' must be a unit vector, |Γ'| = {n}")));
    }
    Ok(g.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c3() -> LinearCoisotropic {
        LinearCoisotropic::coordinate(3, &[0, 1]).unwrap()
    }

    #[test]
    fn projective_example() {
        let chart = ProjectiveChart::new(c3(), 0, 1).unwrap();
        let p = PhasePoint { x: vec![0.0; 3], xi: vec![2.0, 1.0, 5.0], h: 0.5 };
        let q = chart.to_projective(&p).unwrap();
        assert_eq!((q.zeta, q.big_h, q.ratios.clone(), q.w.clone()), (2.0, 0.25, vec![0.5], vec![5.0]));
        assert_eq!(q.zeta * q.big_h, 0.5);
        assert_eq!(chart.from_projective(&q).unwrap(), p);
        let p0 = PhasePoint { h: 0.0, ..p };
        let q0 = chart.to_projective(&p0).unwrap();
        assert_eq!(q0.big_h, 0.0);
        assert_eq!(chart.from_projective(&q0).unwrap().h, 0.0);
    }

    #[test]
    fn wrong_sign_or_zero_pivot_rejected() {
        let chart = ProjectiveChart::new(c3(), 0, -1).unwrap();
        let p = PhasePoint { x: vec![0.0; 3], xi: vec![2.0, 1.0, 5.0], h: 0.5 };
        assert!(matches!(chart.to_projective(&p), Err(Error::ChartDomain(_))));
        let p = PhasePoint { x: vec![0.0; 3], xi: vec![0.0, 1.0, 5.0], h: 0.5 };
        assert!(chart.to_projective(&p).is_err());
    }

    #[test]
    fn random_round_trip_and_transition() {
        let c = LinearCoisotropic::new(vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]).unwrap();
        let a = ProjectiveChart::new(c.clone(), 0, 1).unwrap();
        let b = ProjectiveChart::new(c, 1, -1).unwrap();
        for q in random_chart_points(&a, 100, 3) {
            let p = a.from_projective(&q).unwrap();
            let back = a.to_projective(&p).unwrap();
            assert!((back.zeta - q.zeta).abs() < 1e-12);
            assert!((back.big_h - q.big_h).abs() < 1e-12);
            assert!(back.ratios.iter().zip(&q.ratios).all(|(x, y)| (x - y).abs() < 1e-12));
            assert!(back.w.iter().zip(&q.w).all(|(x, y)| (x - y).abs() < 1e-12));
            if let Ok(qb) = b.to_projective(&p) {
                let pb = b.from_projective(&qb).unwrap();
                let qa = a.to_projective(&pb).unwrap();
                assert!((qa.big_h - q.big_h).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lift_formula_on_registered_functions() {
        let chart = ProjectiveChart::new(c3(), 1, 1).unwrap();
        let pts = random_chart_points(&chart, 50, 11);
        for f in registered_chart_functions() {
            for i in 0..3 {
                let d = lift_check(&chart, i, f.as_ref(), &pts).unwrap();
                assert!(d <= 1e-6, "{} axis {i}: {d}", f.name());
            }
        }
    }

    #[test]
    fn x_only_function_has_zero_lift() {
        struct CosX;
        impl ChartFunction for CosX {
            fn name(&self) -> &str {
                "cos-x"
            }
            fn value(&self, q: &ProjectivePoint) -> f64 {
                q.x[0].cos()
            }
            fn gradient(&self, q: &ProjectivePoint) -> ChartGradient {
                let mut g = zero_gradient(q);
                g.d_x[0] = -q.x[0].sin();
                g
            }
        }
        let chart = ProjectiveChart::new(c3(), 0, 1).unwrap();
        let pts = random_chart_points(&chart, 10, 2);
        assert_eq!(lift_check(&chart, 1, &CosX, &pts).unwrap(), 0.0);
    }

    #[test]
    fn polar_examples() {
        let c = LinearCoisotropic::coordinate(4, &[0, 1]).unwrap();
        let p = to_polar(&c, &[0.0; 4], &[3.0, 4.0, 1.0, 2.0], None).unwrap();
        assert_eq!(p.rho, 5.0);
        assert_eq!(p.gamma, vec![0.6, 0.8]);
        assert_eq!(p.xi2, vec![1.0, 2.0]);
        assert!(to_polar(&c, &[0.0; 4], &[0.0, 0.0, 1.0, 2.0], None).is_err());
        let on = to_polar(&c, &[0.0; 4], &[0.0, 0.0, 1.0, 2.0], Some(&[0.0, 1.0])).unwrap();
        assert_eq!(on.rho, 0.0);
        let (_, xi) = from_polar(&c, &p).unwrap();
        assert_eq!(xi, vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn angle_matches_cosine_form() {
        let c = c3();
        for xi in [[1.0, 2.0, 0.3], [-0.5, 0.1, 1.0], [0.2, -3.0, 0.0]] {
            let p = to_polar(&c, &[0.0; 3], &xi, None).unwrap();
            let th = p.theta().unwrap();
            let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            assert!((th.cos() - xi[0] / r).abs() < 1e-15);
            assert!((th.sin() - xi[1] / r).abs() < 1e-15);
        }
    }
}
