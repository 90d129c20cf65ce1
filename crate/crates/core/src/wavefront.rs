//! Wavefront detection by decay of probe outputs `‖Op_h(a)u_h‖` as `h → 0`.
//!
//! Probes localize in `x` with a trigonometric window `Π cos^{2p}((x−x₀)/2)`
//! and in the fiber with compactly supported smoothstep windows, so a probe
//! away from the frequencies of a single-mode family returns exactly zero.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::coisotropic::LinearCoisotropic;
use crate::error::{Error, Result};
use crate::fit::loglog_fit;
use crate::hamiltonian::{flow, PrincipalSymbol, SplitPart, TaylorSplit, DEFAULT_DT};
use crate::quantize::{apply_exact, Quantization};
use crate::symbol::{Profile, Symbol, SymbolTerm};
use crate::torus::{axis_packet, uk_mode, FamilyEntry, SemiclassicalFamily, DEFAULT_HEADROOM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbePoint {
    Interior {
        x0: Vec<f64>,
        xi0: Vec<f64>,
    },
    /// A point of `SN(𝒞)`: base `x0`, direction `gamma0` on `S^{d−1}` and
    /// `xi2` in the span of the completion rows.
    Boundary {
        x0: Vec<f64>,
        gamma0: Vec<f64>,
        xi2: Vec<f64>,
    },
    /// The half-line probe `ψ(direction·ξ / h)` times the `x` window.
    Sign {
        x0: Vec<f64>,
        direction: Vec<f64>,
    },
}

impl ProbePoint {
    pub fn x0(&self) -> &[f64] {
        match self {
            ProbePoint::Interior { x0, .. } | ProbePoint::Boundary { x0, .. } | ProbePoint::Sign { x0, .. } => x0,
        }
    }

    pub fn with_x0(&self, x: Vec<f64>) -> Self {
        let mut p = self.clone();
        match &mut p {
            ProbePoint::Interior { x0, .. } | ProbePoint::Boundary { x0, .. } | ProbePoint::Sign { x0, .. } => *x0 = x,
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeWidths {
    /// Radius of the `x` window; `>= π` means no localization in `x`.
    #[serde(default = "default_x_radius", with = "crate::fit::extended")]
    pub x_radius: f64,
    /// Radius of the fiber ball; infinite means no localization.
    #[serde(default = "default_xi_radius", with = "crate::fit::extended")]
    pub xi_radius: f64,
    /// Half-angle of the cone around `Γ'₀`; `>= π` means the full sphere.
    #[serde(default = "default_angular_radius", with = "crate::fit::extended")]
    pub angular_radius: f64,
    /// Boundary probes vanish for `ρ_ff >= collar`.
    #[serde(default = "default_collar", with = "crate::fit::extended")]
    pub collar: f64,
}

fn default_x_radius() -> f64 {
    1.2
}
fn default_xi_radius() -> f64 {
    0.25
}
fn default_angular_radius() -> f64 {
    PI / 8.0
}
fn default_collar() -> f64 {
    0.5
}

impl Default for ProbeWidths {
    fn default() -> Self {
        Self {
            x_radius: default_x_radius(),
            xi_radius: default_xi_radius(),
            angular_radius: default_angular_radius(),
            collar: default_collar(),
        }
    }
}

/// Exponent `p` of the window `cos^{2p}((x−x₀)/2)`: the smallest `p >= 1`
/// with window value at most 1/2 at distance `radius`.
pub fn window_power(radius: f64) -> u32 {
    if radius >= PI {
        return 0;
    }
    let c = (radius / 2.0).cos();
    ((0.5f64.ln() / (2.0 * c.ln())).ceil() as u32).max(1)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Fourier modes of `Π_j cos^{2p}((x_j − x₀_j)/2)`.
pub fn x_window_modes(x0: &[f64], radius: f64) -> Vec<(Vec<i64>, Complex64)> {
    let p = window_power(radius) as i64;
    let one_d: Vec<Vec<(i64, Complex64)>> = x0
        .iter()
        .map(|&c| {
            (-p..=p)
                .map(|q| {
                    let mag = binomial(2 * p as u32, (p + q) as u32) / 4f64.powi(p as i32);
                    (q, Complex64::from_polar(mag, -(q as f64) * c))
                })
                .collect()
        })
        .collect();
    let mut out: Vec<(Vec<i64>, Complex64)> = vec![(vec![], Complex64::new(1.0, 0.0))];
    for axis in &one_d {
        out = out
            .into_iter()
            .flat_map(|(m, c)| {
                axis.iter().map(move |(q, a)| {
                    let mut mm = m.clone();
                    mm.push(*q);
                    (mm, c * a)
                })
            })
            .collect();
    }
    out
}

fn check_widths(w: &ProbeWidths) -> Result<()> {
    for (name, v) in [
        ("x_radius", w.x_radius),
        ("xi_radius", w.xi_radius),
        ("angular_radius", w.angular_radius),
        ("collar", w.collar),
    ] {
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!("probe width {name} = {v} must be positive")));
        }
    }
    Ok(())
}

/// The canonical probe at a point. Boundary probes need the coisotropic.
pub fn probe_symbol(point: &ProbePoint, widths: &ProbeWidths, c: Option<&LinearCoisotropic>) -> Result<Symbol> {
    check_widths(widths)?;
    let x0 = point.x0();
    let dim = x0.len();
    let ball = |rows: Option<Vec<Vec<f64>>>, center: Vec<f64>| {
        if widths.xi_radius.is_infinite() {
            Profile::one()
        } else {
            Profile::bump(rows, center, widths.xi_radius)
        }
    };
    let profile = match point {
        ProbePoint::Interior { xi0, .. } => {
            if xi0.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: xi0.len() });
            }
            ball(None, xi0.clone())
        }
        ProbePoint::Boundary { gamma0, xi2, .. } => {
            let c = c.ok_or_else(|| Error::InvalidArgument("boundary probes need a coisotropic".into()))?;
            if c.dim() != dim {
                return Err(Error::DimensionMismatch { expected: c.dim(), got: dim });
            }
            let gamma0 = crate::blowup::unit(gamma0, c.codim())?;
            if xi2.len() != dim - c.codim() {
                return Err(Error::DimensionMismatch { expected: dim - c.codim(), got: xi2.len() });
            }
            let half = widths.collar / 2.0;
            let mut factors = vec![
                Profile::Cone { rows: c.v().to_vec(), axis: gamma0, radius: widths.angular_radius },
                Profile::Plateau {
                    rows: Some(c.v().to_vec()),
                    center: vec![0.0; c.codim()],
                    lower: None,
                    upper: half,
                    margin: half,
                },
            ];
            if !xi2.is_empty() {
                factors.push(ball(Some(c.w().to_vec()), xi2.clone()));
            }
            Profile::product(factors)
        }
        ProbePoint::Sign { direction, .. } => {
            if direction.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: direction.len() });
            }
            Profile::HalfLine { direction: direction.clone(), scale: 1.0, sign: 1.0, semiclassical: true }
        }
    };
    let modes = if widths.x_radius >= PI {
        vec![(vec![0; dim], Complex64::new(1.0, 0.0))]
    } else {
        x_window_modes(x0, widths.x_radius)
    };
    Symbol::new(dim, vec![SymbolTerm::new(modes, profile)])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// `+∞` when every norm is below the floor.
    #[serde(with = "crate::fit::extended")]
    pub slope: f64,
    #[serde(with = "crate::fit::extended")]
    pub residual: f64,
    pub table: Vec<(f64, f64)>,
}

pub const MIN_DECAY_SAMPLES: usize = 5;

/// Least-squares slope of `log‖Op(a)u_h‖` against `log h`.
pub fn decay_fit(fam: &SemiclassicalFamily, a: &Symbol, kind: Quantization) -> Result<DecayFit> {
    if fam.len() < MIN_DECAY_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_DECAY_SAMPLES, have: fam.len() });
    }
    if fam.dim() != a.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, got: fam.dim() });
    }
    let table = fam
        .entries()
        .iter()
        .map(|e| Ok((e.h, apply_exact(a, kind, &e.u, e.h)?.l2_norm())))
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = table.iter().map(|t| t.0).collect();
    let ns: Vec<f64> = table.iter().map(|t| t.1).collect();
    let fit = loglog_fit(&hs, &ns)?;
    Ok(DecayFit { slope: fit.slope, residual: fit.residual, table })
}

/// The order `m` of a wavefront level; `Infinite` is the `m = ∞` level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Order {
    Finite(f64),
    Infinite,
}

impl Serialize for Order {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Order::Finite(m) => s.serialize_f64(*m),
            Order::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Order {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Num(f64),
            Text(String),
        }
        match Doc::deserialize(d)? {
            Doc::Num(m) => Ok(Order::Finite(m)),
            Doc::Text(t) if t == "inf" => Ok(Order::Infinite),
            Doc::Text(t) => Err(serde::de::Error::custom(format!("order `{t}` is neither a number nor \"inf\""))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    #[serde(default = "default_eps")]
    pub eps_slope: f64,
    /// Effective `m` used for the `m = ∞` level.
    #[serde(default = "default_m_max")]
    pub m_max: f64,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
    /// Required ratio `h_max / h_min`.
    #[serde(default = "default_min_span")]
    pub min_span: f64,
    /// Largest fit residual accepted for a PRESENT verdict.
    #[serde(default = "default_max_residual")]
    pub max_residual: f64,
    #[serde(default = "default_kind")]
    pub quantization: Quantization,
}

fn default_eps() -> f64 {
    0.5
}
fn default_m_max() -> f64 {
    3.0
}
fn default_min_samples() -> usize {
    6
}
fn default_min_span() -> f64 {
    8.0
}
fn default_max_residual() -> f64 {
    1.0
}
fn default_kind() -> Quantization {
    Quantization::Right
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            eps_slope: default_eps(),
            m_max: default_m_max(),
            min_samples: default_min_samples(),
            min_span: default_min_span(),
            max_residual: default_max_residual(),
            quantization: default_kind(),
        }
    }
}

impl ClassifyConfig {
    /// Decay exponent separating bounded from unbounded weighted output.
    pub fn threshold(&self, m: Order, l: f64) -> f64 {
        match m {
            Order::Finite(m) => m + l,
            Order::Infinite => self.m_max + l,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    Absent,
    Present,
    Inconclusive,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::Absent => "ABSENT",
            Classification::Present => "PRESENT",
            Classification::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavefrontVerdict {
    pub point: ProbePoint,
    pub m: Order,
    pub l: f64,
    pub threshold: f64,
    #[serde(with = "crate::fit::extended")]
    pub slope: f64,
    #[serde(with = "crate::fit::extended")]
    pub residual: f64,
    pub table: Vec<(f64, f64)>,
    pub classification: Classification,
}

/// Pure decision rule on a fit.
pub fn decide(slope: f64, residual: f64, threshold: f64, cfg: &ClassifyConfig) -> Classification {
    if slope >= threshold + cfg.eps_slope {
        Classification::Absent
    } else if slope <= threshold - cfg.eps_slope && residual <= cfg.max_residual {
        Classification::Present
    } else {
        Classification::Inconclusive
    }
}

fn check_schedule(fam: &SemiclassicalFamily, cfg: &ClassifyConfig) -> Result<()> {
    if fam.len() < cfg.min_samples {
        return Err(Error::TooFewSamples { needed: cfg.min_samples, have: fam.len() });
    }
    let hs = fam.hs();
    let span = hs[0] / hs[hs.len() - 1];
    if span < cfg.min_span {
        return Err(Error::InvalidFamily(format!("h range spans a factor {span:.3}, need at least {}", cfg.min_span)));
    }
    Ok(())
}

pub fn classify(
    fam: &SemiclassicalFamily,
    point: &ProbePoint,
    c: Option<&LinearCoisotropic>,
    widths: &ProbeWidths,
    m: Order,
    l: f64,
    cfg: &ClassifyConfig,
) -> Result<WavefrontVerdict> {
    check_schedule(fam, cfg)?;
    if point.x0().len() != fam.dim() {
        return Err(Error::DimensionMismatch { expected: fam.dim(), got: point.x0().len() });
    }
    let a = probe_symbol(point, widths, c)?;
    let fit = decay_fit(fam, &a, cfg.quantization)?;
    let threshold = cfg.threshold(m, l);
    Ok(WavefrontVerdict {
        point: point.clone(),
        m,
        l,
        threshold,
        slope: fit.slope,
        residual: fit.residual,
        classification: decide(fit.slope, fit.residual, threshold, cfg),
        table: fit.table,
    })
}

/// `classify` over a grid, in grid order.
pub fn wf_scan(
    fam: &SemiclassicalFamily,
    grid: &[ProbePoint],
    c: Option<&LinearCoisotropic>,
    widths: &ProbeWidths,
    m: Order,
    l: f64,
    cfg: &ClassifyConfig,
) -> Result<Vec<WavefrontVerdict>> {
    grid.par_iter().map(|p| classify(fam, p, c, widths, m, l, cfg)).collect()
}

/// `cells` boundary points `Γ' = (cos θ_i, sin θ_i)`, `θ_i = 2πi/cells`, for
/// codimension 2. The matching angular radius is `π/cells`.
pub fn angular_grid(x0: &[f64], xi2: &[f64], cells: usize) -> Vec<ProbePoint> {
    (0..cells)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / cells as f64;
            ProbePoint::Boundary { x0: x0.to_vec(), gamma0: vec![th.cos(), th.sin()], xi2: xi2.to_vec() }
        })
        .collect()
}

/// Interior points on the cubic grid `ξ_j ∈ {−extent, …, extent}` with the
/// given spacing.
pub fn interior_grid(x0: &[f64], spacing: f64, extent: f64) -> Vec<ProbePoint> {
    let steps = (extent / spacing).round() as i64;
    let axis: Vec<f64> = (-steps..=steps).map(|i| i as f64 * spacing).collect();
    let mut pts: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..x0.len() {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    pts.into_iter().map(|xi0| ProbePoint::Interior { x0: x0.to_vec(), xi0 }).collect()
}

/// `‖χ(|ξ|)(p₀(ξ) − energy)û‖` at `ξ = hm`, with `χ ≡ 1` on
/// `0.8 <= |ξ| <= 1.2`: the truncated operator as a Fourier multiplier.
pub fn quasimode_residual(fam: &SemiclassicalFamily, p: &dyn PrincipalSymbol, energy: f64) -> Vec<(f64, f64)> {
    let chi = Profile::Plateau { rows: None, center: vec![0.0; fam.dim()], lower: Some(0.8), upper: 1.2, margin: 0.2 };
    fam.entries()
        .iter()
        .map(|FamilyEntry { h, u }| {
            let r = u.multiply_modes(|m| {
                let xi: Vec<f64> = m.iter().map(|&c| h * c as f64).collect();
                chi.eval(&xi, *h) * (p.value(&xi) - energy)
            });
            (*h, r.l2_norm())
        })
        .collect()
}

pub const QUASIMODE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationPair {
    pub seed: ProbePoint,
    pub t: f64,
    pub flowed: ProbePoint,
    pub seed_class: Classification,
    pub flowed_class: Classification,
    #[serde(with = "crate::fit::extended")]
    pub seed_slope: f64,
    #[serde(with = "crate::fit::extended")]
    pub flowed_slope: f64,
    pub agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub label: String,
    pub part: SplitPart,
    pub m: Order,
    pub l: f64,
    pub residuals: Vec<(f64, f64)>,
    pub quasimode_certified: bool,
    pub pairs: Vec<PropagationPair>,
    pub pass: bool,
}

/// Classifies each boundary seed and its image under the `H₁` or `H̃₂` flow
/// for each time; PASS iff every pair agrees.
#[allow(clippy::too_many_arguments)]
pub fn verify_propagation<P: PrincipalSymbol>(
    fam: &SemiclassicalFamily,
    split: &TaylorSplit<P>,
    energy: f64,
    seeds: &[ProbePoint],
    times: &[f64],
    part: SplitPart,
    m: Order,
    l: f64,
    widths: &ProbeWidths,
    cfg: &ClassifyConfig,
) -> Result<PropagationReport> {
    let residuals = quasimode_residual(fam, &split.symbol, energy);
    let quasimode_certified = residuals.iter().all(|(_, r)| *r <= QUASIMODE_TOLERANCE);
    let field = split.field(part);
    let c = &split.c;
    let mut jobs = Vec::new();
    for seed in seeds {
        let ProbePoint::Boundary { x0, gamma0, xi2 } = seed else {
            return Err(Error::InvalidArgument("propagation seeds must be boundary points".into()));
        };
        let mut fiber = vec![0.0];
        fiber.extend_from_slice(gamma0);
        fiber.extend_from_slice(xi2);
        for &t in times {
            let tr = flow(&field, x0, &fiber, t, DEFAULT_DT)?;
            let (x_end, f_end) = tr.end();
            if f_end[0] >= split.collar {
                return Err(Error::LeftCollar { rho: f_end[0], collar: split.collar });
            }
            jobs.push((seed.clone(), t, seed.with_x0(x_end.to_vec())));
        }
    }
    let mut points: Vec<ProbePoint> = seeds.to_vec();
    points.extend(jobs.iter().map(|j| j.2.clone()));
    let verdicts = wf_scan(fam, &points, Some(c), widths, m, l, cfg)?;
    let (seed_v, flowed_v) = verdicts.split_at(seeds.len());
    let per_seed = times.len();
    let pairs: Vec<PropagationPair> = jobs
        .into_iter()
        .zip(flowed_v)
        .enumerate()
        .map(|(i, ((seed, t, flowed), fv))| {
            let sv = &seed_v[i / per_seed];
            PropagationPair {
                seed,
                t,
                flowed,
                seed_class: sv.classification,
                flowed_class: fv.classification,
                seed_slope: sv.slope,
                flowed_slope: fv.slope,
                agree: sv.classification == fv.classification,
            }
        })
        .collect();
    let pass = pairs.iter().all(|p| p.agree);
    Ok(PropagationReport { label: fam.label().to_string(), part, m, l, residuals, quasimode_certified, pairs, pass })
}

/// Normalized packets around the `u_k` modes, concentrated near
/// `x_axis = center` with width `sigma_scale·k²` modes. Not translation
/// invariant along `axis`, so `H₁` propagation fails for it.
pub fn packet_family(n: usize, ks: &[i64], axis: usize, sigma_scale: f64, center: f64) -> Result<SemiclassicalFamily> {
    let mut ks = ks.to_vec();
    ks.sort_by_key(|k| k.abs());
    ks.dedup();
    let reach = |k: i64| (8.0 * sigma_scale * (k * k) as f64).ceil() as i64;
    let band = ks.iter().map(|&k| k * k + reach(k)).max().unwrap_or(0) + DEFAULT_HEADROOM;
    let entries = ks
        .iter()
        .map(|&k| {
            let (h, mode) = uk_mode(n, k);
            let sigma = sigma_scale * (k * k) as f64;
            Ok(FamilyEntry { h, u: axis_packet(&mode, axis, sigma, center, band)? })
        })
        .collect::<Result<Vec<_>>>()?;
    SemiclassicalFamily::new(format!("packet-n{n}-axis{axis}"), entries)
}
