//! Hamiltonian vector fields of fiber symbols `p₀(ξ)` near `SN(𝒞)`.
//!
//! In the adapted coordinates `ξ̃ = Mξ`, `x = Mᵀx̃`, the field of `p₀` is
//! `𝐇 = ∇_{ξ̃}p̃ · ∂_{x̃}` with `p̃ = p₀∘M⁻¹`. Writing `ξ̃' = ρΓ`, the split
//! is `𝐇 = H₁ + ρ H₂ + O(ρ²)` with
//! `H₁ = ∇p̃(0, ξ̃'')` and `H₂ = ∇²p̃(0, ξ̃'')·(Γ, 0)`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coisotropic::LinearCoisotropic;
use crate::error::{Error, Result};

/// A real fiber symbol with gradient and Hessian.
///
/// The default derivatives are central differences with step
/// `1e−4·(1+|ξ|)`.
pub trait PrincipalSymbol: Sync {
    fn dim(&self) -> usize;
    fn value(&self, xi: &[f64]) -> f64;

    fn gradient(&self, xi: &[f64]) -> Vec<f64> {
        let step = fd_step(xi);
        (0..xi.len())
            .map(|i| {
                let mut p = xi.to_vec();
                let mut m = xi.to_vec();
                p[i] += step;
                m[i] -= step;
                (self.value(&p) - self.value(&m)) / (2.0 * step)
            })
            .collect()
    }

    fn hessian(&self, xi: &[f64]) -> Vec<Vec<f64>> {
        let step = fd_step(xi);
        let n = xi.len();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut p = xi.to_vec();
            let mut m = xi.to_vec();
            p[i] += step;
            m[i] -= step;
            let gp = self.gradient(&p);
            let gm = self.gradient(&m);
            for j in 0..n {
                out[i][j] = (gp[j] - gm[j]) / (2.0 * step);
            }
        }
        let sym: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (out[i][j] + out[j][i])).collect()).collect();
        out = sym;
        out
    }
}

fn fd_step(xi: &[f64]) -> f64 {
    1e-4 * (1.0 + xi.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Fiber symbols with closed-form derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegisteredSymbol {
    /// `|ξ|²/2`.
    HalfSquaredNorm { dim: usize },
    /// `c·ξ`.
    Linear { c: Vec<f64> },
    /// `ξ_i ξ_j`.
    Bilinear { dim: usize, i: usize, j: usize },
    /// `|ξ|²/2 + |ξ|⁴/4`.
    Quartic { dim: usize },
}

impl PrincipalSymbol for RegisteredSymbol {
    fn dim(&self) -> usize {
        match self {
            RegisteredSymbol::HalfSquaredNorm { dim }
            | RegisteredSymbol::Bilinear { dim, .. }
            | RegisteredSymbol::Quartic { dim } => *dim,
            RegisteredSymbol::Linear { c } => c.len(),
        }
    }

    fn value(&self, xi: &[f64]) -> f64 {
        let r2: f64 = xi.iter().map(|v| v * v).sum();
        match self {
            RegisteredSymbol::HalfSquaredNorm { .. } => 0.5 * r2,
            RegisteredSymbol::Linear { c } => c.iter().zip(xi).map(|(a, b)| a * b).sum(),
            RegisteredSymbol::Bilinear { i, j, .. } => xi[*i] * xi[*j],
            RegisteredSymbol::Quartic { .. } => 0.5 * r2 + 0.25 * r2 * r2,
        }
    }

    fn gradient(&self, xi: &[f64]) -> Vec<f64> {
        match self {
            RegisteredSymbol::HalfSquaredNorm { .. } => xi.to_vec(),
            RegisteredSymbol::Linear { c } => c.clone(),
            RegisteredSymbol::Bilinear { i, j, .. } => {
                let mut g = vec![0.0; xi.len()];
                g[*i] += xi[*j];
                g[*j] += xi[*i];
                g
            }
            RegisteredSymbol::Quartic { .. } => {
                let r2: f64 = xi.iter().map(|v| v * v).sum();
                xi.iter().map(|v| v * (1.0 + r2)).collect()
            }
        }
    }

    fn hessian(&self, xi: &[f64]) -> Vec<Vec<f64>> {
        let n = xi.len();
        let eye = |s: f64| -> Vec<Vec<f64>> {
            (0..n).map(|a| (0..n).map(|b| if a == b { s } else { 0.0 }).collect()).collect()
        };
        match self {
            RegisteredSymbol::HalfSquaredNorm { .. } => eye(1.0),
            RegisteredSymbol::Linear { .. } => eye(0.0),
            RegisteredSymbol::Bilinear { i, j, .. } => {
                let mut h = eye(0.0);
                h[*i][*j] += 1.0;
                h[*j][*i] += 1.0;
                h
            }
            RegisteredSymbol::Quartic { .. } => {
                let r2: f64 = xi.iter().map(|v| v * v).sum();
                let mut h = eye(1.0 + r2);
                for a in 0..n {
                    for b in 0..n {
                        h[a][b] += 2.0 * xi[a] * xi[b];
                    }
                }
                h
            }
        }
    }
}

/// A fiber symbol given by a closure; derivatives by differences.
pub struct FnSymbol<F: Fn(&[f64]) -> f64 + Sync> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> PrincipalSymbol for FnSymbol<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, xi: &[f64]) -> f64 {
        (self.f)(xi)
    }
}

/// A point `(x, ρ_ff, Γ', ξ̃'')` near `SN(𝒞)`; `x` in the original torus
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitState {
    pub x: Vec<f64>,
    pub rho: f64,
    pub gamma: Vec<f64>,
    pub xi2: Vec<f64>,
}

impl SplitState {
    pub fn fiber(&self) -> Vec<f64> {
        let mut f = vec![self.rho];
        f.extend_from_slice(&self.gamma);
        f.extend_from_slice(&self.xi2);
        f
    }

    pub fn from_parts(x: Vec<f64>, fiber: &[f64], d: usize) -> Self {
        Self { x, rho: fiber[0], gamma: fiber[1..=d].to_vec(), xi2: fiber[d + 1..].to_vec() }
    }
}

pub const DEFAULT_COLLAR: f64 = 0.5;

/// The split `𝐇 = H₁ + ρ H̃₂` of a fiber symbol at a linear coisotropic.
pub struct TaylorSplit<P: PrincipalSymbol> {
    pub symbol: P,
    pub c: LinearCoisotropic,
    /// `H̃₂` is defined for `ρ_ff < collar`.
    pub collar: f64,
}

/// Builds the split; fails on dimension mismatch.
pub fn taylor_split<P: PrincipalSymbol>(symbol: P, c: LinearCoisotropic) -> Result<TaylorSplit<P>> {
    if symbol.dim() != c.dim() {
        return Err(Error::DimensionMismatch { expected: c.dim(), got: symbol.dim() });
    }
    Ok(TaylorSplit { symbol, c, collar: DEFAULT_COLLAR })
}

impl<P: PrincipalSymbol> TaylorSplit<P> {
    pub fn codim(&self) -> usize {
        self.c.codim()
    }

    fn tilde_point(&self, rho: f64, gamma: &[f64], xi2: &[f64]) -> Vec<f64> {
        let mut xt: Vec<f64> = gamma.iter().map(|g| rho * g).collect();
        xt.extend_from_slice(xi2);
        xt
    }

    /// `∇_{ξ̃}p̃ = M⁻ᵀ ∇p₀(M⁻¹ξ̃)`.
    pub fn tilde_gradient(&self, xt: &[f64]) -> Vec<f64> {
        let xi = self.c.from_tilde(xt);
        let g = DVector::from_vec(self.symbol.gradient(&xi));
        (self.c.basis_inverse().transpose() * g).iter().copied().collect()
    }

    /// `∇²_{ξ̃}p̃ = M⁻ᵀ ∇²p₀ M⁻¹`.
    pub fn tilde_hessian(&self, xt: &[f64]) -> DMatrix<f64> {
        let xi = self.c.from_tilde(xt);
        let h = self.symbol.hessian(&xi);
        let n = xi.len();
        let h = DMatrix::from_fn(n, n, |i, j| h[i][j]);
        let mi = self.c.basis_inverse();
        mi.transpose() * h * mi
    }

    /// `x̃`-components of `H₁` at `ξ̃''`.
    pub fn h1(&self, xi2: &[f64]) -> Vec<f64> {
        let gamma = vec![0.0; self.codim()];
        self.tilde_gradient(&self.tilde_point(0.0, &gamma, xi2))
    }

    /// `x̃`-components of `H₂` at `(Γ', ξ̃'')`.
    pub fn h2(&self, gamma: &[f64], xi2: &[f64]) -> Vec<f64> {
        let d = self.codim();
        let hess = self.tilde_hessian(&self.tilde_point(0.0, &vec![0.0; d], xi2));
        let n = self.c.dim();
        (0..n).map(|a| (0..d).map(|b| hess[(a, b)] * gamma[b]).sum()).collect()
    }

    /// `x̃`-components of `𝐇` at `(ρ, Γ', ξ̃'')`.
    pub fn full(&self, rho: f64, gamma: &[f64], xi2: &[f64]) -> Vec<f64> {
        self.tilde_gradient(&self.tilde_point(rho, gamma, xi2))
    }

    /// `H̃₂ = (𝐇 − H₁)/ρ` in the collar, `H₂` on `ρ = 0`.
    pub fn h2_extended(&self, rho: f64, gamma: &[f64], xi2: &[f64]) -> Result<Vec<f64>> {
        if !(rho >= 0.0) || rho >= self.collar {
            return Err(Error::LeftCollar { rho, collar: self.collar });
        }
        if rho == 0.0 {
            return Ok(self.h2(gamma, xi2));
        }
        let f = self.full(rho, gamma, xi2);
        let h1 = self.h1(xi2);
        Ok(f.iter().zip(&h1).map(|(a, b)| (a - b) / rho).collect())
    }

    /// `‖𝐇 − H₁ − ρH₂‖`.
    pub fn remainder(&self, rho: f64, gamma: &[f64], xi2: &[f64]) -> f64 {
        let f = self.full(rho, gamma, xi2);
        let h1 = self.h1(xi2);
        let h2 = self.h2(gamma, xi2);
        f.iter().zip(&h1).zip(&h2).map(|((a, b), c)| (a - b - rho * c).powi(2)).sum::<f64>().sqrt()
    }

    /// `x`-components `Mᵀ v` of an `x̃` vector.
    pub fn to_x(&self, vt: &[f64]) -> Vec<f64> {
        (self.c.basis().transpose() * DVector::from_column_slice(vt)).iter().copied().collect()
    }

    pub fn field(&self, which: SplitPart) -> SplitField<'_, P> {
        SplitField { split: self, which }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    H1,
    /// `H̃₂`, defined in the collar.
    H2,
    Full,
}

/// A vector field on `𝕋ⁿ × fiber`; `x` wraps mod 2π.
pub trait Field: Sync {
    /// `(ẋ, fiber velocity)`.
    fn velocity(&self, x: &[f64], fiber: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

pub struct SplitField<'a, P: PrincipalSymbol> {
    split: &'a TaylorSplit<P>,
    which: SplitPart,
}

impl<P: PrincipalSymbol> Field for SplitField<'_, P> {
    fn velocity(&self, x: &[f64], fiber: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = SplitState::from_parts(x.to_vec(), fiber, self.split.codim());
        let vt = match self.which {
            SplitPart::H1 => self.split.h1(&s.xi2),
            SplitPart::H2 => self.split.h2_extended(s.rho, &s.gamma, &s.xi2)?,
            SplitPart::Full => self.split.full(s.rho, &s.gamma, &s.xi2),
        };
        Ok((self.split.to_x(&vt), vec![0.0; fiber.len()]))
    }
}

/// `c·∂_x`.
pub struct ConstantField(pub Vec<f64>);

impl Field for ConstantField {
    fn velocity(&self, _x: &[f64], fiber: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.0.clone(), vec![0.0; fiber.len()]))
    }
}

/// `base + amplitude·sin(Σ (i+1) x_i)·∂_{x_axis}`: an x-dependent perturbation.
pub struct PerturbedField<'a> {
    pub base: &'a dyn Field,
    pub amplitude: f64,
    pub axis: usize,
}

impl Field for PerturbedField<'_> {
    fn velocity(&self, x: &[f64], fiber: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut vx, vf) = self.base.velocity(x, fiber)?;
        let phase: f64 = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
        vx[self.axis] += self.amplitude * phase.sin();
        Ok((vx, vf))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub fiber: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn end(&self) -> (&[f64], &[f64]) {
        (self.x.last().expect("nonempty"), self.fiber.last().expect("nonempty"))
    }

    /// CSV with columns `t, x1..xn, f1..fk`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let n = self.x.first().map_or(0, Vec::len);
        let k = self.fiber.first().map_or(0, Vec::len);
        let mut head = vec!["t".to_string()];
        head.extend((1..=n).map(|i| format!("x{i}")));
        head.extend((1..=k).map(|i| format!("f{i}")));
        w.write_record(&head)?;
        for ((t, x), f) in self.times.iter().zip(&self.x).zip(&self.fiber) {
            let mut row = vec![format!("{t:e}")];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            row.extend(f.iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub const DEFAULT_DT: f64 = 1e-3;
const MAX_STEPS: f64 = 1e9;

fn wrap(x: f64) -> f64 {
    x.rem_euclid(TAU)
}

/// Fixed-step RK4 for time `t` with step at most `dt`. Fiber coordinates
/// are left bit-identical when the field has no fiber component.
pub fn flow(field: &dyn Field, x0: &[f64], fiber0: &[f64], t: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("t = {t} must be finite")));
    }
    let steps = (t.abs() / dt).ceil();
    if steps > MAX_STEPS {
        return Err(Error::InvalidArgument(format!("step underflow: {steps} steps requested")));
    }
    let steps = steps as usize;
    let mut traj =
        Trajectory { times: vec![0.0], x: vec![x0.iter().map(|v| wrap(*v)).collect()], fiber: vec![fiber0.to_vec()] };
    if steps == 0 {
        return Ok(traj);
    }
    let h = t / steps as f64;
    if h == 0.0 {
        return Err(Error::InvalidArgument("step underflow".into()));
    }
    let mut x = traj.x[0].clone();
    let mut f = fiber0.to_vec();
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * q).collect() };
    for step in 1..=steps {
        let (k1x, k1f) = field.velocity(&x, &f)?;
        let (k2x, k2f) = field.velocity(&axpy(&x, h / 2.0, &k1x), &axpy(&f, h / 2.0, &k1f))?;
        let (k3x, k3f) = field.velocity(&axpy(&x, h / 2.0, &k2x), &axpy(&f, h / 2.0, &k2f))?;
        let (k4x, k4f) = field.velocity(&axpy(&x, h, &k3x), &axpy(&f, h, &k3f))?;
        for i in 0..x.len() {
            x[i] = wrap(x[i] + h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]));
        }
        let moving = [&k1f, &k2f, &k3f, &k4f].iter().any(|k| k.iter().any(|v| *v != 0.0));
        if moving {
            for i in 0..f.len() {
                f[i] += h / 6.0 * (k1f[i] + 2.0 * k2f[i] + 2.0 * k3f[i] + k4f[i]);
            }
        }
        traj.times.push(h * step as f64);
        traj.x.push(x.clone());
        traj.fiber.push(f.clone());
    }
    Ok(traj)
}

/// Lie bracket `[X, Y]` at a point by central differences along each
/// field; `(x, fiber)` components concatenated.
pub fn lie_bracket(a: &dyn Field, b: &dyn Field, x: &[f64], fiber: &[f64], eps: f64) -> Result<Vec<f64>> {
    let directional = |g: &dyn Field, dir_x: &[f64], dir_f: &[f64]| -> Result<Vec<f64>> {
        let shift = |s: f64| -> (Vec<f64>, Vec<f64>) {
            (
                x.iter().zip(dir_x).map(|(p, q)| p + s * q).collect(),
                fiber.iter().zip(dir_f).map(|(p, q)| p + s * q).collect(),
            )
        };
        let (xp, fp) = shift(eps);
        let (xm, fm) = shift(-eps);
        let (gpx, gpf) = g.velocity(&xp, &fp)?;
        let (gmx, gmf) = g.velocity(&xm, &fm)?;
        Ok(gpx.iter().chain(&gpf).zip(gmx.iter().chain(&gmf)).map(|(p, m)| (p - m) / (2.0 * eps)).collect())
    };
    let (ax, af) = a.velocity(x, fiber)?;
    let (bx, bf) = b.velocity(x, fiber)?;
    let db_along_a = directional(b, &ax, &af)?;
    let da_along_b = directional(a, &bx, &bf)?;
    Ok(db_along_a.iter().zip(&da_along_b).map(|(p, q)| p - q).collect())
}

/// Random points in the collar: `x ∈ [0, 2π)ⁿ`, `ρ ∈ [0, collar)`,
/// `Γ'` uniform on the sphere, `ξ̃'' ∈ [−2, 2]`.
pub fn random_split_states(c: &LinearCoisotropic, collar: f64, count: usize, seed: u64) -> Vec<SplitState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = c.dim();
    let d = c.codim();
    (0..count)
        .map(|_| {
            let gamma = loop {
                let g: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let r = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r > 0.1 && r <= 1.0 {
                    break g.iter().map(|v| v / r).collect();
                }
            };
            SplitState {
                x: (0..n).map(|_| rng.gen_range(0.0..TAU)).collect(),
                rho: rng.gen_range(0.0..collar),
                gamma,
                xi2: (0..n - d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            }
        })
        .collect()
}

/// Max norm of `[H₁, H̃₂]` over samples.
pub fn commutation_check<P: PrincipalSymbol>(split: &TaylorSplit<P>, samples: &[SplitState]) -> Result<f64> {
    let h1 = split.field(SplitPart::H1);
    let h2 = split.field(SplitPart::H2);
    bracket_norm(&h1, &h2, samples)
}

/// Max norm of `[X, Y]` over samples.
pub fn bracket_norm(a: &dyn Field, b: &dyn Field, samples: &[SplitState]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in samples {
        let br = lie_bracket(a, b, &s.x, &s.fiber(), 1e-4)?;
        worst = worst.max(br.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(worst)
}

/// An x-dependent symbol on `T*𝕋³` with closed-form derivatives, in
/// Cartesian coordinates; used for the polar-field check.
pub trait PhaseSymbol3: Sync {
    fn value(&self, x: &[f64; 3], xi: &[f64; 3]) -> f64;
    fn d_x(&self, x: &[f64; 3], xi: &[f64; 3]) -> [f64; 3];
    fn d_xi(&self, x: &[f64; 3], xi: &[f64; 3]) -> [f64; 3];
}

/// `|ξ|²/2 + a cos(x₁) ξ₁ξ₂ + b sin(x₂ + x₃) ξ₃ + c ξ₁ξ₃²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySymbol {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PhaseSymbol3 for ToySymbol {
    fn value(&self, x: &[f64; 3], xi: &[f64; 3]) -> f64 {
        0.5 * (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2])
            + self.a * x[0].cos() * xi[0] * xi[1]
            + self.b * (x[1] + x[2]).sin() * xi[2]
            + self.c * xi[0] * xi[2] * xi[2]
    }
    fn d_x(&self, x: &[f64; 3], xi: &[f64; 3]) -> [f64; 3] {
        let s = self.b * (x[1] + x[2]).cos() * xi[2];
        [-self.a * x[0].sin() * xi[0] * xi[1], s, s]
    }
    fn d_xi(&self, x: &[f64; 3], xi: &[f64; 3]) -> [f64; 3] {
        [
            xi[0] + self.a * x[0].cos() * xi[1] + self.c * xi[2] * xi[2],
            xi[1] + self.a * x[0].cos() * xi[0],
            xi[2] + self.b * (x[1] + x[2]).sin() + 2.0 * self.c * xi[0] * xi[2],
        ]
    }
}

/// Any fiber symbol on `T*𝕋³`, viewed as x-independent.
pub struct FiberSymbol3<'a>(pub &'a dyn PrincipalSymbol);

impl PhaseSymbol3 for FiberSymbol3<'_> {
    fn value(&self, _x: &[f64; 3], xi: &[f64; 3]) -> f64 {
        self.0.value(xi)
    }
    fn d_x(&self, _x: &[f64; 3], _xi: &[f64; 3]) -> [f64; 3] {
        [0.0; 3]
    }
    fn d_xi(&self, _x: &[f64; 3], xi: &[f64; 3]) -> [f64; 3] {
        let g = self.0.gradient(xi);
        [g[0], g[1], g[2]]
    }
}

/// `(x, ρ, θ, ξ₃)` for `𝒞 = {ξ₁ = ξ₂ = 0} ⊂ T*𝕋³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarSample {
    pub x: [f64; 3],
    pub rho: f64,
    pub theta: f64,
    pub xi3: f64,
}

impl PolarSample {
    pub fn xi(&self) -> [f64; 3] {
        [self.rho * self.theta.cos(), self.rho * self.theta.sin(), self.xi3]
    }
}

/// Samples with `ρ ∈ (0.1, 2)`.
pub fn random_polar_samples(count: usize, seed: u64) -> Vec<PolarSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| PolarSample {
            x: [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)],
            rho: rng.gen_range(0.1..2.0),
            theta: rng.gen_range(0.0..TAU),
            xi3: rng.gen_range(-2.0..2.0),
        })
        .collect()
}

const STENCIL: f64 = 1e-3;

fn five_point(f: impl Fn(f64) -> f64, t: f64, step: f64) -> f64 {
    (-f(t + 2.0 * step) + 8.0 * f(t + step) - 8.0 * f(t - step) + f(t - 2.0 * step)) / (12.0 * step)
}

/// Field components `(ẋ₁, ẋ₂, ẋ₃, θ̇, ρ̇, ξ̇₃)` from the displayed polar
/// formula, with `∂_ρ`, `∂_θ` of `p∘β` by a five-point stencil.
pub fn polar_field(p: &dyn PhaseSymbol3, s: &PolarSample) -> [f64; 6] {
    let (c, sn) = (s.theta.cos(), s.theta.sin());
    let pb = |rho: f64, theta: f64| p.value(&s.x, &[rho * theta.cos(), rho * theta.sin(), s.xi3]);
    let p_rho = five_point(|r| pb(r, s.theta), s.rho, STENCIL);
    let p_theta = five_point(|t| pb(s.rho, t), s.theta, STENCIL);
    let xi = s.xi();
    let dx = p.d_x(&s.x, &xi);
    let p_xi3 = p.d_xi(&s.x, &xi)[2];
    [
        p_rho * c - p_theta * sn / s.rho,
        p_rho * sn + p_theta * c / s.rho,
        p_xi3,
        (dx[0] * sn - dx[1] * c) / s.rho,
        -(c * dx[0] + sn * dx[1]),
        -dx[2],
    ]
}

/// The same components from the Cartesian field `(∂_ξ p, −∂_x p)` pushed
/// forward through `ρ = |ξ'|`, `θ = atan2(ξ₂, ξ₁)`.
pub fn cartesian_field_in_polar(p: &dyn PhaseSymbol3, s: &PolarSample) -> [f64; 6] {
    let xi = s.xi();
    let dxi = p.d_xi(&s.x, &xi);
    let dx = p.d_x(&s.x, &xi);
    let (v1, v2, v3) = (-dx[0], -dx[1], -dx[2]);
    let r2 = s.rho * s.rho;
    [dxi[0], dxi[1], dxi[2], (xi[0] * v2 - xi[1] * v1) / r2, (xi[0] * v1 + xi[1] * v2) / s.rho, v3]
}

/// Max over samples of the componentwise gap between [`polar_field`] and
/// [`cartesian_field_in_polar`].
pub fn polar_field_check(p: &dyn PhaseSymbol3, samples: &[PolarSample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let a = polar_field(p, s);
            let b = cartesian_field_in_polar(p, s);
            a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Max over samples of `|∂_θ(p∘β) − ρ(cos θ ∂_{ξ₂}p − sin θ ∂_{ξ₁}p)|`,
/// the left side by a five-point stencil.
pub fn cancellation_check(p: &dyn PhaseSymbol3, samples: &[PolarSample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let lhs = five_point(|t| p.value(&s.x, &[s.rho * t.cos(), s.rho * t.sin(), s.xi3]), s.theta, STENCIL);
            let g = p.d_xi(&s.x, &s.xi());
            let rhs = s.rho * (s.theta.cos() * g[1] - s.theta.sin() * g[0]);
            (lhs - rhs).abs()
        })
        .fold(0.0, f64::max)
}

/// A symbol on the polar chart of a codimension-`d` coisotropic, as a
/// function of `(x̃, ρ, Γ', ξ̃'')` with partial derivatives.
pub trait ChartSymbol: Sync {
    fn d_rho(&self, s: &SplitState) -> f64;
    /// Gradient in `Γ'` of any extension off the sphere.
    fn d_gamma(&self, s: &SplitState) -> Vec<f64>;
    fn d_xi2(&self, s: &SplitState) -> Vec<f64>;
    fn d_x(&self, s: &SplitState) -> Vec<f64>;
}

/// `ρ^{l−m+1}` times the Hamiltonian field of a chart symbol `q`:
/// `ẋ' = q_ρΓ + ρ⁻¹P⊥∇_Γq`, `ẋ'' = ∂_{ξ''}q`, `ρ̇ = −Γ·∂_{x'}q`,
/// `Γ̇ = −ρ⁻¹P⊥∂_{x'}q`, `ξ̇'' = −∂_{x''}q`, all in adapted coordinates.
pub struct RescaledField<'a> {
    pub q: &'a dyn ChartSymbol,
    pub codim: usize,
    pub m: f64,
    pub l: f64,
    pub tangency_tol: f64,
}

fn project_perp(gamma: &[f64], v: &[f64]) -> Vec<f64> {
    let dot: f64 = gamma.iter().zip(v).map(|(a, b)| a * b).sum();
    v.iter().zip(gamma).map(|(a, g)| a - dot * g).collect()
}

/// `(ẋ̃, ρ̇, Γ̇, ξ̇'')`.
pub type RescaledComponents = (Vec<f64>, f64, Vec<f64>, Vec<f64>);

impl RescaledField<'_> {
    /// Components at a state with `ρ > 0`.
    pub fn components(&self, s: &SplitState) -> Result<RescaledComponents> {
        if !(s.rho > 0.0) {
            return Err(Error::ChartDomain("the unrescaled field needs ρ_ff > 0".into()));
        }
        let d = self.codim;
        let scale = s.rho.powf(self.l - self.m + 1.0);
        let qx = self.q.d_x(s);
        let (qx1, qx2) = qx.split_at(d);
        let tang = project_perp(&s.gamma, &self.q.d_gamma(s));
        let q_rho = self.q.d_rho(s);
        let mut xdot: Vec<f64> = s.gamma.iter().zip(&tang).map(|(g, t)| scale * (q_rho * g + t / s.rho)).collect();
        xdot.extend(self.q.d_xi2(s).iter().map(|v| scale * v));
        let rho_dot = -scale * s.gamma.iter().zip(qx1).map(|(g, v)| g * v).sum::<f64>();
        let gamma_dot = project_perp(&s.gamma, qx1).iter().map(|v| -scale * v / s.rho).collect();
        let xi2_dot = qx2.iter().map(|v| -scale * v).collect();
        Ok((xdot, rho_dot, gamma_dot, xi2_dot))
    }

    /// Checks `|ρ̇| <= tol` at `ρ = probe` with the other coordinates fixed.
    pub fn assert_tangent(&self, s: &SplitState, probe: f64) -> Result<()> {
        let t = SplitState { rho: probe, ..s.clone() };
        let (_, rho_dot, _, _) = self.components(&t)?;
        if rho_dot.abs() > self.tangency_tol {
            return Err(Error::Tangency { defect: rho_dot.abs(), rho: probe });
        }
        Ok(())
    }
}

/// A fiber symbol as a chart symbol: `q(ρ, Γ', ξ̃'') = p₀(M⁻¹(ρΓ', ξ̃''))`.
pub struct FiberChartSymbol<'a, P: PrincipalSymbol>(pub &'a TaylorSplit<P>);

impl<P: PrincipalSymbol> ChartSymbol for FiberChartSymbol<'_, P> {
    fn d_rho(&self, s: &SplitState) -> f64 {
        let g = self.0.full(s.rho, &s.gamma, &s.xi2);
        s.gamma.iter().zip(&g).map(|(a, b)| a * b).sum()
    }
    fn d_gamma(&self, s: &SplitState) -> Vec<f64> {
        let g = self.0.full(s.rho, &s.gamma, &s.xi2);
        g[..s.gamma.len()].iter().map(|v| s.rho * v).collect()
    }
    fn d_xi2(&self, s: &SplitState) -> Vec<f64> {
        let g = self.0.full(s.rho, &s.gamma, &s.xi2);
        g[s.gamma.len()..].to_vec()
    }
    fn d_x(&self, s: &SplitState) -> Vec<f64> {
        vec![0.0; s.x.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c4a() -> LinearCoisotropic {
        LinearCoisotropic::coordinate(4, &[0, 1]).unwrap()
    }

    fn c4b() -> LinearCoisotropic {
        LinearCoisotropic::new(vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]).unwrap()
    }

    #[test]
    fn registered_derivatives_match_differences() {
        let xi = [0.3, -0.7, 1.1];
        let symbols = [
            RegisteredSymbol::HalfSquaredNorm { dim: 3 },
            RegisteredSymbol::Linear { c: vec![1.0, -2.0, 0.5] },
            RegisteredSymbol::Bilinear { dim: 3, i: 0, j: 1 },
            RegisteredSymbol::Bilinear { dim: 3, i: 2, j: 2 },
            RegisteredSymbol::Quartic { dim: 3 },
        ];
        for s in &symbols {
            let fd = FnSymbol { dim: 3, f: |x: &[f64]| s.value(x) };
            let (g, gf) = (s.gradient(&xi), fd.gradient(&xi));
            for (a, b) in g.iter().zip(&gf) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{s:?}");
            }
            let (h, hf) = (s.hessian(&xi), fd.hessian(&xi));
            for (ra, rb) in h.iter().zip(&hf) {
                for (a, b) in ra.iter().zip(rb) {
                    assert!((a - b).abs() < 1e-5, "{s:?}");
                }
            }
        }
    }

    #[test]
    fn first_example_split() {
        let s = taylor_split(RegisteredSymbol::HalfSquaredNorm { dim: 4 }, c4a()).unwrap();
        let xi2 = [0.7, -1.3];
        let g = [0.6, 0.8];
        assert_eq!(s.to_x(&s.h1(&xi2)), vec![0.0, 0.0, 0.7, -1.3]);
        assert_eq!(s.to_x(&s.h2(&g, &xi2)), vec![0.6, 0.8, 0.0, 0.0]);
        assert_eq!(s.remainder(0.1, &g, &xi2), 0.0);
    }

    #[test]
    fn second_example_split() {
        let s = taylor_split(RegisteredSymbol::HalfSquaredNorm { dim: 4 }, c4b()).unwrap();
        let xi2 = [0.7, -1.3];
        let g = [0.6, 0.8];
        assert_eq!(s.to_x(&s.h1(&xi2)), vec![-0.7, 1.3, 0.7, -1.3]);
        assert_eq!(s.to_x(&s.h2(&g, &xi2)), vec![0.6, 0.8, 0.0, 0.0]);
    }

    #[test]
    fn linear_symbol_has_no_h2() {
        let s = taylor_split(
            RegisteredSymbol::Linear { c: vec![1.0, 2.0, 3.0] },
            LinearCoisotropic::coordinate(3, &[0, 1]).unwrap(),
        )
        .unwrap();
        assert_eq!(s.h2(&[0.6, 0.8], &[1.0]), vec![0.0; 3]);
        assert_eq!(s.to_x(&s.h1(&[5.0])), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn quartic_remainder_is_quadratic() {
        let s = taylor_split(RegisteredSymbol::Quartic { dim: 4 }, c4b()).unwrap();
        let (g, xi2) = ([0.6, 0.8], [0.5, -0.25]);
        let r1 = s.remainder(1e-2, &g, &xi2);
        let r2 = s.remainder(1e-3, &g, &xi2);
        assert!(((r1 / r2).log10() - 2.0).abs() < 0.05);
    }

    #[test]
    fn h2_extension_and_collar() {
        let s = taylor_split(RegisteredSymbol::Quartic { dim: 3 }, LinearCoisotropic::coordinate(3, &[0, 1]).unwrap())
            .unwrap();
        let g = [0.6, 0.8];
        let a = s.h2_extended(1e-7, &g, &[0.5]).unwrap();
        let b = s.h2_extended(0.0, &g, &[0.5]).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-6));
        assert!(matches!(s.h2_extended(0.6, &g, &[0.5]), Err(Error::LeftCollar { .. })));
    }

    #[test]
    fn flows_of_simple_fields() {
        let tr = flow(&ConstantField(vec![0.0, 0.0, 2.5]), &[0.1, 0.2, 0.3], &[], 1.0, DEFAULT_DT).unwrap();
        assert!((tr.end().0[2] - 2.8).abs() < 1e-12);
        let tr = flow(&ConstantField(vec![0.0; 3]), &[0.1, 0.2, 0.3], &[], 1.0, DEFAULT_DT).unwrap();
        assert_eq!(tr.end().0, &[0.1, 0.2, 0.3]);
        let s = taylor_split(RegisteredSymbol::HalfSquaredNorm { dim: 4 }, c4a()).unwrap();
        let fiber = [0.0, 0.6, 0.8, 1.0, 0.0];
        let tr =
            flow(&s.field(SplitPart::H1), &[0.0, 0.0, 0.5, 0.0], &fiber, std::f64::consts::PI, DEFAULT_DT).unwrap();
        assert!((tr.end().0[2] - (0.5 + std::f64::consts::PI)).abs() < 1e-12);
        assert_eq!(tr.end().1, &fiber);
        assert!(flow(&ConstantField(vec![1.0]), &[0.0], &[], 1.0, 0.0).is_err());
        assert!(flow(&ConstantField(vec![1.0]), &[0.0], &[], 1.0, 1e-300).is_err());
    }

    #[test]
    fn rk4_is_fourth_order() {
        struct Pendulum;
        impl Field for Pendulum {
            fn velocity(&self, x: &[f64], f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
                Ok((vec![f[0]], vec![-x[0].sin()]))
            }
        }
        let end = |dt: f64| flow(&Pendulum, &[1.0], &[0.0], 1.0, dt).unwrap().end().1[0];
        let (a, b, c) = (end(0.1), end(0.05), end(0.025));
        let ratio = (a - b) / (b - c);
        assert!((ratio.log2() - 4.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn commutation_and_negative_control() {
        for c in [c4a(), c4b()] {
            let s = taylor_split(RegisteredSymbol::HalfSquaredNorm { dim: 4 }, c.clone()).unwrap();
            let pts = random_split_states(&c, 0.5, 30, 4);
            assert!(commutation_check(&s, &pts).unwrap() <= 1e-12);
            let h1 = s.field(SplitPart::H1);
            let h2 = s.field(SplitPart::H2);
            let bad = PerturbedField { base: &h2, amplitude: 0.1, axis: 0 };
            assert!(bracket_norm(&h1, &bad, &pts).unwrap() >= 1e-3);
        }
    }

    #[test]
    fn polar_formula_and_cancellation() {
        let pts = random_polar_samples(100, 9);
        let toy = ToySymbol { a: 0.3, b: -0.7, c: 0.2 };
        assert!(polar_field_check(&toy, &pts) <= 1e-8);
        assert!(cancellation_check(&toy, &pts) <= 1e-8);
        let sq = RegisteredSymbol::HalfSquaredNorm { dim: 3 };
        assert!(cancellation_check(&FiberSymbol3(&sq), &pts) <= 1e-10);
        let lin = RegisteredSymbol::Linear { c: vec![1.0, 0.0, 0.0] };
        let s = pts[0];
        let p_theta = five_point(|t| s.rho * t.cos(), s.theta, STENCIL);
        assert!((p_theta + s.rho * s.theta.sin()).abs() < 1e-10);
        assert!(cancellation_check(&FiberSymbol3(&lin), &pts) <= 1e-8);
    }

    #[test]
    fn rescaled_fiber_field_is_tangent() {
        let c = LinearCoisotropic::coordinate(3, &[0, 1]).unwrap();
        let s = taylor_split(RegisteredSymbol::Bilinear { dim: 3, i: 0, j: 2 }, c.clone()).unwrap();
        let q = FiberChartSymbol(&s);
        let rf = RescaledField { q: &q, codim: 2, m: 0.0, l: 0.0, tangency_tol: 1e-10 };
        for st in random_split_states(&c, 0.5, 20, 1) {
            let st = SplitState { rho: st.rho.max(1e-3), ..st };
            rf.assert_tangent(&st, 1e-8).unwrap();
            let (xdot, rho_dot, _, _) = rf.components(&st).unwrap();
            assert_eq!(rho_dot, 0.0);
            let x = s.to_x(&xdot);
            let direct = s.to_x(&s.full(st.rho, &st.gamma, &st.xi2));
            let scale = st.rho;
            assert!(x.iter().zip(&direct).all(|(a, b)| (a - scale * b).abs() < 1e-12));
        }
    }

    #[test]
    fn angular_toy_term_is_finite_after_rescaling() {
        // q = ρ sin θ · x₁-free, so ρ⁻¹∂_θ q stays bounded; with l − m + 1 = 1
        // the rescaled field vanishes on the front face.
        struct Toy;
        impl ChartSymbol for Toy {
            fn d_rho(&self, s: &SplitState) -> f64 {
                s.gamma[1]
            }
            fn d_gamma(&self, s: &SplitState) -> Vec<f64> {
                vec![0.0, s.rho]
            }
            fn d_xi2(&self, _s: &SplitState) -> Vec<f64> {
                vec![0.0]
            }
            fn d_x(&self, s: &SplitState) -> Vec<f64> {
                vec![s.rho * s.x[0].cos(), 0.0, 0.0]
            }
        }
        let rf = RescaledField { q: &Toy, codim: 2, m: 0.0, l: 0.0, tangency_tol: 1e-6 };
        let st = SplitState { x: vec![0.2, 0.0, 0.0], rho: 1e-6, gamma: vec![0.6, 0.8], xi2: vec![1.0] };
        let (xdot, _, _, _) = rf.components(&st).unwrap();
        assert!(xdot.iter().all(|v| v.is_finite() && v.abs() < 1e-5));
        rf.assert_tangent(&st, 1e-8).unwrap();
    }
}
