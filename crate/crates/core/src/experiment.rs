//! Experiment configuration, command runners and run reports.
//!
//! A run produces a [`RunReport`] whose body depends only on the resolved
//! configuration and the crate version; timing lives in the header.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::blowup::{lift_check, random_chart_points, registered_chart_functions, ProjectiveChart};
use crate::coisotropic::{regularity_order, BoundednessThresholds, LinearCoisotropic};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    bracket_norm, cancellation_check, commutation_check, flow, polar_field_check, random_polar_samples,
    random_split_states, taylor_split, FiberSymbol3, PerturbedField, RegisteredSymbol, SplitPart, ToySymbol,
    DEFAULT_DT,
};
use crate::quantize::{
    adjoint_defect, commutator_check, compose_check, registered_kinetic_symbol, registered_mixed_symbol, Quantization,
    Quantizer,
};
use crate::symbol::{Monomial, Profile, Symbol};
use crate::torus::{
    make_plane_wave_family, make_uk_family, make_zero_family, reciprocal_schedule, SemiclassicalFamily, TorusFunction,
};
use crate::wavefront::{
    angular_grid, interior_grid, packet_family, verify_propagation, wf_scan, Classification, ClassifyConfig, Order,
    ProbePoint, ProbeWidths,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoisotropicSpec {
    pub v: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<Vec<f64>>>,
}

impl CoisotropicSpec {
    pub fn build(&self) -> Result<LinearCoisotropic> {
        match &self.w {
            Some(w) => LinearCoisotropic::with_completion(self.v.clone(), w.clone()),
            None => LinearCoisotropic::new(self.v.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    /// `u_k` for `k` from `k_min` to `k_max`.
    Uk {
        n: usize,
        k_min: i64,
        k_max: i64,
    },
    /// `e^{i m·x / h}` with `h = 1/j`.
    PlaneWave {
        mode: Vec<i64>,
        j_min: u64,
        j_max: u64,
    },
    Zero {
        dim: usize,
        j_min: u64,
        j_max: u64,
    },
    /// Wave packets around the `u_k` modes, concentrated along one axis.
    Packet {
        n: usize,
        k_min: i64,
        k_max: i64,
        axis: usize,
        #[serde(default = "default_sigma_scale")]
        sigma_scale: f64,
        #[serde(default)]
        center: f64,
    },
}

fn default_sigma_scale() -> f64 {
    0.05
}

fn k_range(k_min: i64, k_max: i64) -> Result<Vec<i64>> {
    if k_min > k_max {
        return Err(Error::Config(format!("empty family: k_min = {k_min} > k_max = {k_max}")));
    }
    if k_min <= 0 && k_max >= 0 {
        return Err(Error::Config("k range must not contain 0".into()));
    }
    Ok((k_min..=k_max).collect())
}

fn j_range(j_min: u64, j_max: u64) -> Result<Vec<f64>> {
    if j_min == 0 || j_min > j_max {
        return Err(Error::Config(format!("empty family: need 1 <= j_min <= j_max, got {j_min}..{j_max}")));
    }
    Ok(reciprocal_schedule(j_min, j_max))
}

impl FamilySpec {
    pub fn build(&self) -> Result<SemiclassicalFamily> {
        match self {
            FamilySpec::Uk { n, k_min, k_max } => make_uk_family(*n, &k_range(*k_min, *k_max)?),
            FamilySpec::PlaneWave { mode, j_min, j_max } => make_plane_wave_family(mode, &j_range(*j_min, *j_max)?),
            FamilySpec::Zero { dim, j_min, j_max } => make_zero_family(*dim, &j_range(*j_min, *j_max)?),
            FamilySpec::Packet { n, k_min, k_max, axis, sigma_scale, center } => {
                packet_family(*n, &k_range(*k_min, *k_max)?, *axis, *sigma_scale, *center)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FamilySpec::Uk { n, .. } | FamilySpec::Packet { n, .. } => *n,
            FamilySpec::PlaneWave { mode, .. } => mode.len(),
            FamilySpec::Zero { dim, .. } => *dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Boundary points on `SN(𝒞)` for codimension 2.
    Angular {
        #[serde(default = "default_cells")]
        cells: usize,
        #[serde(default = "default_xi2")]
        xi2: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
    Interior {
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default = "default_extent")]
        extent: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
    /// Interior points drawn uniformly from the cube of half-width
    /// `extent`, seeded by the run seed.
    RandomInterior {
        count: usize,
        #[serde(default = "default_extent")]
        extent: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x0: Option<Vec<f64>>,
    },
    Points {
        points: Vec<ProbePoint>,
    },
}

fn default_cells() -> usize {
    8
}
fn default_xi2() -> Vec<f64> {
    vec![1.0]
}
fn default_spacing() -> f64 {
    0.5
}
fn default_extent() -> f64 {
    1.5
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Angular { cells: default_cells(), xi2: default_xi2(), x0: None }
    }
}

impl GridSpec {
    pub fn points(&self, dim: usize, seed: u64) -> Result<Vec<ProbePoint>> {
        let x0_or = |x0: &Option<Vec<f64>>| x0.clone().unwrap_or_else(|| vec![0.0; dim]);
        let pts = match self {
            GridSpec::Angular { cells, xi2, x0 } => {
                if *cells == 0 {
                    return Err(Error::Config("angular grid needs at least one cell".into()));
                }
                angular_grid(&x0_or(x0), xi2, *cells)
            }
            GridSpec::Interior { spacing, extent, x0 } => {
                if !(*spacing > 0.0) || !(*extent >= 0.0) {
                    return Err(Error::Config("interior grid needs spacing > 0 and extent >= 0".into()));
                }
                interior_grid(&x0_or(x0), *spacing, *extent)
            }
            GridSpec::RandomInterior { count, extent, x0 } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x0 = x0_or(x0);
                (0..*count)
                    .map(|_| ProbePoint::Interior {
                        x0: x0.clone(),
                        xi0: (0..dim).map(|_| rng.gen_range(-*extent..=*extent)).collect(),
                    })
                    .collect()
            }
            GridSpec::Points { points } => points.clone(),
        };
        if pts.is_empty() {
            return Err(Error::Config("probe grid is empty".into()));
        }
        Ok(pts)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub widths: ProbeWidths,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrdersSpec {
    #[serde(default = "default_order")]
    pub m: Order,
    #[serde(default)]
    pub l: f64,
}

fn default_order() -> Order {
    Order::Infinite
}

impl Default for OrdersSpec {
    fn default() -> Self {
        Self { m: Order::Infinite, l: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub boundedness: BoundednessThresholds,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularitySpec {
    #[serde(default)]
    pub s: f64,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
}

fn default_k_max() -> u32 {
    4
}

impl Default for RegularitySpec {
    fn default() -> Self {
        Self { s: 0.0, k_max: default_k_max() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateSpec {
    #[serde(default = "default_energy")]
    pub energy: f64,
    #[serde(default = "default_part")]
    pub part: SplitPart,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Boundary seeds; the probe grid is used when empty.
    #[serde(default)]
    pub seeds: Vec<ProbePoint>,
}

fn default_energy() -> f64 {
    0.5
}
fn default_part() -> SplitPart {
    SplitPart::H1
}
fn default_times() -> Vec<f64> {
    vec![1.0]
}

impl Default for PropagateSpec {
    fn default() -> Self {
        Self { energy: default_energy(), part: default_part(), times: default_times(), seeds: vec![] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi2: Option<Vec<f64>>,
    #[serde(default = "default_flow_t")]
    pub t: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_part")]
    pub part: SplitPart,
}

fn default_flow_t() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    DEFAULT_DT
}

impl Default for FlowSpec {
    fn default() -> Self {
        Self { x0: None, rho: 0.0, gamma: None, xi2: None, t: default_flow_t(), dt: default_dt(), part: default_part() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    #[serde(default)]
    pub pivot: usize,
    #[serde(default = "default_sign")]
    pub sign: i8,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_lift_tol")]
    pub tolerance: f64,
}

fn default_sign() -> i8 {
    1
}
fn default_samples() -> usize {
    100
}
fn default_lift_tol() -> f64 {
    1e-6
}

impl Default for ChartSpec {
    fn default() -> Self {
        Self { pivot: 0, sign: 1, samples: default_samples(), tolerance: default_lift_tol() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeSpec {
    #[serde(default = "default_qdim")]
    pub dim: usize,
    #[serde(default = "default_band")]
    pub band: i64,
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// The schedule `h = 1/j`.
    #[serde(default = "default_js")]
    pub j_values: Vec<u64>,
    #[serde(default = "default_min_comm_slope")]
    pub min_commutator_slope: f64,
}

fn default_qdim() -> usize {
    2
}
fn default_band() -> i64 {
    8
}
fn default_probes() -> usize {
    3
}
fn default_js() -> Vec<u64> {
    vec![8, 16, 32, 64]
}
fn default_min_comm_slope() -> f64 {
    1.8
}

impl Default for QuantizeSpec {
    fn default() -> Self {
        Self {
            dim: default_qdim(),
            band: default_band(),
            probes: default_probes(),
            j_values: default_js(),
            min_commutator_slope: default_min_comm_slope(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub plot_data: bool,
}

/// Expected outcomes; a run whose verdicts differ exits with status 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regular_through: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<u32>,
    /// Growth exponent at the first failing order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_at_failure: Option<f64>,
    #[serde(default = "default_growth_tol")]
    pub growth_tolerance: f64,
    /// Grid indices expected PRESENT; every other cell must be ABSENT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub present: Option<Vec<usize>>,
    /// Propagation outcome; defaults to PASS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

fn default_growth_tol() -> f64 {
    0.1
}

impl Default for ExpectSpec {
    fn default() -> Self {
        Self {
            regular_through: None,
            first_failure: None,
            growth_at_failure: None,
            growth_tolerance: default_growth_tol(),
            present: None,
            pass: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_scenario")]
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    /// Principal symbol for `propagate` and `flow`; `|ξ|²/2` by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol: Option<RegisteredSymbol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coisotropic: Option<CoisotropicSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub orders: OrdersSpec,
    #[serde(default)]
    pub thresholds: ThresholdSpec,
    #[serde(default)]
    pub regularity: RegularitySpec,
    #[serde(default)]
    pub propagate: PropagateSpec,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub chart: ChartSpec,
    #[serde(default)]
    pub quantize: QuantizeSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub expect: ExpectSpec,
}

fn default_scenario() -> String {
    "default".into()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn coisotropic(&self) -> Result<LinearCoisotropic> {
        self.coisotropic.as_ref().ok_or_else(|| Error::Config("missing [coisotropic] section".into()))?.build()
    }

    fn family(&self) -> Result<SemiclassicalFamily> {
        self.family.as_ref().ok_or_else(|| Error::Config("missing [family] section".into()))?.build()
    }

    fn symbol_for(&self, dim: usize) -> RegisteredSymbol {
        self.symbol.clone().unwrap_or(RegisteredSymbol::HalfSquaredNorm { dim })
    }

    /// Fills derived defaults (completion rows, symbol) so that the echoed
    /// config fully determines the run.
    fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        if let Some(spec) = &self.coisotropic {
            let c = spec.build()?;
            out.coisotropic = Some(CoisotropicSpec { v: c.v().to_vec(), w: Some(c.w().to_vec()) });
            if out.symbol.is_none() {
                out.symbol = Some(RegisteredSymbol::HalfSquaredNorm { dim: c.dim() });
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportHeader {
    pub started_unix_ms: u128,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub results: Value,
    pub checks: Vec<Check>,
    pub ok: bool,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub header: ReportHeader,
    pub body: ReportBody,
    /// CSV tables by name.
    pub tables: BTreeMap<String, String>,
    /// Long-format `series,x,y` CSV files, written with `plot_data`.
    pub plot_data: BTreeMap<String, String>,
}

impl RunReport {
    pub fn body_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.body)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&json!({ "header": self.header, "body": self.body }))?)
    }

    pub fn exit_code(&self) -> i32 {
        if self.body.ok {
            0
        } else {
            1
        }
    }

    fn stem(&self) -> String {
        let clean: String = self
            .body
            .config
            .scenario
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        format!("{clean}.{}", self.body.command)
    }

    /// Writes `<stem>.report.json`, `<stem>.body.json`, the CSV tables
    /// and, when enabled, plot data. Returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let stem = self.stem();
        let mut files = vec![
            (dir.join(format!("{stem}.report.json")), self.to_json()?),
            (dir.join(format!("{stem}.body.json")), self.body_json()?),
        ];
        for (name, csv) in &self.tables {
            files.push((dir.join(format!("{stem}.{name}.csv")), csv.clone()));
        }
        if self.body.config.output.plot_data {
            for (name, csv) in &self.plot_data {
                files.push((dir.join(format!("{stem}.{name}.plot.csv")), csv.clone()));
            }
        }
        for (path, text) in &files {
            std::fs::write(path, text)?;
        }
        Ok(files.into_iter().map(|f| f.0).collect())
    }
}

#[derive(Default)]
struct Outcome {
    results: Value,
    checks: Vec<Check>,
    tables: BTreeMap<String, String>,
    plot_data: BTreeMap<String, String>,
}

fn run<F>(command: &str, cfg: &ExperimentConfig, f: F) -> Result<RunReport>
where
    F: FnOnce(&ExperimentConfig) -> Result<Outcome>,
{
    let started = Instant::now();
    let started_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    let cfg = cfg.resolved()?;
    let out = f(&cfg)?;
    let ok = out.checks.iter().all(|c| c.pass);
    Ok(RunReport {
        header: ReportHeader { started_unix_ms, wall_clock_seconds: started.elapsed().as_secs_f64() },
        body: ReportBody {
            tool: "smlab".into(),
            version: VERSION.into(),
            command: command.into(),
            config: cfg,
            results: out.results,
            checks: out.checks,
            ok,
        },
        tables: out.tables,
        plot_data: out.plot_data,
    })
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt(*x)).collect::<Vec<_>>().join(" ")
}

pub fn cmd_regularity(cfg: &ExperimentConfig) -> Result<RunReport> {
    run("regularity", cfg, |cfg| {
        let c = cfg.coisotropic()?;
        let fam = cfg.family()?;
        let r = regularity_order(&fam, &c, cfg.regularity.s, cfg.regularity.k_max, cfg.thresholds.boundedness)?;
        let e = &cfg.expect;
        let mut checks = vec![];
        if let Some(k) = e.regular_through {
            checks.push(Check::new(
                "regular_through",
                r.regular_through == Some(k),
                format!("expected {k}, got {:?}", r.regular_through),
            ));
        }
        if let Some(k) = e.first_failure {
            checks.push(Check::new(
                "first_failure",
                r.first_failure == Some(k),
                format!("expected {k}, got {:?}", r.first_failure),
            ));
        }
        if let Some(g) = e.growth_at_failure {
            let got = r.first_failure.and_then(|k| r.growth_at_order(k));
            let pass = got.is_some_and(|x| (x - g).abs() <= e.growth_tolerance);
            checks.push(Check::new(
                "growth_at_failure",
                pass,
                format!("expected {g} ± {}, got {got:?}", e.growth_tolerance),
            ));
        }
        let plot = csv_string(
            &["series", "h", "norm"],
            r.rows.iter().flat_map(|row| {
                let beta = row.beta.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
                row.table.iter().map(move |(h, n)| vec![beta.clone(), fmt(*h), fmt(*n)])
            }),
        )?;
        Ok(Outcome {
            tables: BTreeMap::from([("regularity".into(), r.to_csv()?)]),
            plot_data: BTreeMap::from([("regularity".into(), plot)]),
            results: serde_json::to_value(&r)?,
            checks,
        })
    })
}

fn point_center(p: &ProbePoint) -> String {
    match p {
        ProbePoint::Interior { xi0, .. } => join(xi0),
        ProbePoint::Boundary { gamma0, xi2, .. } => format!("{} | {}", join(gamma0), join(xi2)),
        ProbePoint::Sign { direction, .. } => join(direction),
    }
}

fn point_kind(p: &ProbePoint) -> &'static str {
    match p {
        ProbePoint::Interior { .. } => "interior",
        ProbePoint::Boundary { .. } => "boundary",
        ProbePoint::Sign { .. } => "sign",
    }
}

pub fn cmd_wavefront(cfg: &ExperimentConfig) -> Result<RunReport> {
    run("wavefront", cfg, |cfg| {
        let fam = cfg.family()?;
        let c = cfg.coisotropic.as_ref().map(|s| s.build()).transpose()?;
        let grid = cfg.probe.grid.points(fam.dim(), cfg.seed)?;
        let v =
            wf_scan(&fam, &grid, c.as_ref(), &cfg.probe.widths, cfg.orders.m, cfg.orders.l, &cfg.thresholds.classify)?;
        let mut checks = vec![];
        if let Some(present) = &cfg.expect.present {
            let bad: Vec<String> = v
                .iter()
                .enumerate()
                .filter(|(i, v)| {
                    let want = if present.contains(i) { Classification::Present } else { Classification::Absent };
                    v.classification != want
                })
                .map(|(i, v)| format!("{i}:{}", v.classification.label()))
                .collect();
            checks.push(Check::new(
                "present_cells",
                bad.is_empty(),
                if bad.is_empty() { format!("PRESENT exactly at {present:?}") } else { format!("mismatched {bad:?}") },
            ));
        }
        let table = csv_string(
            &["index", "kind", "x0", "center", "classification", "slope", "residual", "threshold"],
            v.iter().enumerate().map(|(i, v)| {
                vec![
                    i.to_string(),
                    point_kind(&v.point).into(),
                    join(v.point.x0()),
                    point_center(&v.point),
                    v.classification.label().into(),
                    fmt(v.slope),
                    fmt(v.residual),
                    fmt(v.threshold),
                ]
            }),
        )?;
        let plot = csv_string(
            &["series", "h", "norm"],
            v.iter()
                .enumerate()
                .flat_map(|(i, v)| v.table.iter().map(move |(h, n)| vec![i.to_string(), fmt(*h), fmt(*n)])),
        )?;
        let verdicts: Vec<Value> = v
            .iter()
            .enumerate()
            .map(|(i, v)| {
                json!({
                    "index": i,
                    "point": v.point,
                    "classification": v.classification,
                    "slope": crate_float(v.slope),
                    "residual": crate_float(v.residual),
                    "threshold": v.threshold,
                })
            })
            .collect();
        Ok(Outcome {
            results: json!({ "family": fam.label(), "samples": fam.len(), "verdicts": verdicts }),
            checks,
            tables: BTreeMap::from([("wavefront".into(), table)]),
            plot_data: BTreeMap::from([("decay".into(), plot)]),
        })
    })
}

fn crate_float(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format!("{v}"))
    }
}

pub fn cmd_propagate(cfg: &ExperimentConfig) -> Result<RunReport> {
    run("propagate", cfg, |cfg| {
        let c = cfg.coisotropic()?;
        let fam = cfg.family()?;
        let split = taylor_split(cfg.symbol_for(c.dim()), c)?;
        let seeds = if cfg.propagate.seeds.is_empty() {
            cfg.probe.grid.points(fam.dim(), cfg.seed)?
        } else {
            cfg.propagate.seeds.clone()
        };
        let r = verify_propagation(
            &fam,
            &split,
            cfg.propagate.energy,
            &seeds,
            &cfg.propagate.times,
            cfg.propagate.part,
            cfg.orders.m,
            cfg.orders.l,
            &cfg.probe.widths,
            &cfg.thresholds.classify,
        )?;
        let expected = cfg.expect.pass.unwrap_or(true);
        let verdict = |p: bool| if p { "PASS" } else { "FAIL" };
        let checks = vec![Check::new(
            "propagation",
            r.pass == expected,
            format!("expected {}, got {}", verdict(expected), verdict(r.pass)),
        )];
        let table = csv_string(
            &["seed", "t", "x_seed", "x_flowed", "seed_class", "flowed_class", "seed_slope", "flowed_slope", "agree"],
            r.pairs.iter().enumerate().map(|(i, p)| {
                vec![
                    (i / cfg.propagate.times.len().max(1)).to_string(),
                    fmt(p.t),
                    join(p.seed.x0()),
                    join(p.flowed.x0()),
                    p.seed_class.label().into(),
                    p.flowed_class.label().into(),
                    fmt(p.seed_slope),
                    fmt(p.flowed_slope),
                    p.agree.to_string(),
                ]
            }),
        )?;
        Ok(Outcome {
            results: serde_json::to_value(&r)?,
            checks,
            tables: BTreeMap::from([("propagation".into(), table)]),
            plot_data: BTreeMap::new(),
        })
    })
}

pub fn cmd_flow(cfg: &ExperimentConfig) -> Result<RunReport> {
    run("flow", cfg, |cfg| {
        let c = cfg.coisotropic()?;
        let (n, d) = (c.dim(), c.codim());
        let split = taylor_split(cfg.symbol_for(n), c)?;
        let f = &cfg.flow;
        let x0 = f.x0.clone().unwrap_or_else(|| vec![0.0; n]);
        let gamma = f.gamma.clone().unwrap_or_else(|| {
            let mut g = vec![0.0; d];
            g[0] = 1.0;
            g
        });
        let xi2 = f.xi2.clone().unwrap_or_else(|| vec![0.0; n - d]);
        if x0.len() != n || gamma.len() != d || xi2.len() != n - d {
            return Err(Error::Config(format!("flow start needs x0 of length {n}, gamma {d}, xi2 {}", n - d)));
        }
        let mut fiber = vec![f.rho];
        fiber.extend(&gamma);
        fiber.extend(&xi2);
        let field = split.field(f.part);
        let tr = flow(&field, &x0, &fiber, f.t, f.dt)?;
        let (x_end, f_end) = tr.end();
        let csv = tr.to_csv()?;
        Ok(Outcome {
            results: json!({
                "steps": tr.times.len() - 1,
                "x_end": x_end,
                "fiber_end": f_end,
            }),
            checks: vec![],
            tables: BTreeMap::from([("trajectory".into(), csv.clone())]),
            plot_data: BTreeMap::from([("trajectory".into(), csv)]),
        })
    })
}

pub fn cmd_chart(cfg: &ExperimentConfig) -> Result<RunReport> {
    run("chart", cfg, |cfg| {
        let c = cfg.coisotropic()?;
        let n = c.dim();
        let chart = ProjectiveChart::new(c, cfg.chart.pivot, cfg.chart.sign)?;
        let pts = random_chart_points(&chart, cfg.chart.samples, cfg.seed);
        let mut roundtrip: f64 = 0.0;
        for q in &pts {
            let back = chart.to_projective(&chart.from_projective(q)?)?;
            let diff = (back.zeta - q.zeta)
                .abs()
                .max((back.big_h - q.big_h).abs())
                .max(back.ratios.iter().zip(&q.ratios).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .max(back.w.iter().zip(&q.w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            roundtrip = roundtrip.max(diff);
        }
        let mut checks = vec![Check::new("chart_roundtrip", roundtrip <= 1e-12, format!("max defect {roundtrip:e}"))];
        let mut rows = vec![];
        for f in registered_chart_functions() {
            let mut worst: f64 = 0.0;
            for i in 0..n {
                worst = worst.max(lift_check(&chart, i, f.as_ref(), &pts)?);
            }
            checks.push(Check::new(
                format!("lift_{}", f.name()),
                worst <= cfg.chart.tolerance,
                format!("max defect {worst:e}"),
            ));
            rows.push(vec![f.name().to_string(), fmt(worst)]);
        }
        Ok(Outcome {
            results: json!({ "roundtrip_defect": roundtrip, "lift": rows }),
            tables: BTreeMap::from([("lift".into(), csv_string(&["function", "max_defect"], rows)?)]),
            checks,
            plot_data: BTreeMap::new(),
        })
    })
}

fn random_probes(dim: usize, band: i64, count: usize, seed: u64) -> Result<Vec<TorusFunction>> {
    (0..count as u64).map(|i| TorusFunction::random_dense(dim, band, seed.wrapping_mul(1000).wrapping_add(i))).collect()
}

/// Functions with small integer coefficients, so products with dyadic
/// multiplier values stay exact.
fn integer_probes(dim: usize, band: i64, count: usize, seed: u64) -> Result<Vec<TorusFunction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let modes: Vec<_> = crate::torus::box_modes(dim, band)
                .into_iter()
                .map(|m| (m, Complex64::new(rng.gen_range(-8..=8) as f64, rng.gen_range(-8..=8) as f64)))
                .collect();
            TorusFunction::from_modes(dim, band, modes)
        })
        .collect()
}

fn poly(dim: usize, terms: &[(f64, &[u32])]) -> Symbol {
    Symbol::multiplier(
        dim,
        Profile::Polynomial {
            terms: terms
                .iter()
                .map(|(c, p)| {
                    let mut powers = p.to_vec();
                    powers.resize(dim, 0);
                    Monomial { re: *c, im: 0.0, powers }
                })
                .collect(),
        },
    )
}

/// Max deviation from associativity, commutativity and `Op(p)Op(q) =
/// Op(pq)` for integer polynomial multipliers at dyadic `h`.
pub fn multiplier_algebra_defects(seed: u64) -> Result<(f64, f64, f64)> {
    let dim = 2;
    let p = poly(dim, &[(1.0, &[1, 0]), (-3.0, &[0, 2])]);
    let q = poly(dim, &[(2.0, &[0, 0]), (1.0, &[1, 1])]);
    let r = poly(dim, &[(1.0, &[2, 0]), (5.0, &[0, 1])]);
    let probes = integer_probes(dim, 4, 3, seed)?;
    let (mut assoc, mut comm, mut prod): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for kind in Quantization::ALL {
        for j in [8u32, 16, 32, 64] {
            let h = 1.0 / j as f64;
            let op = |a: &Symbol, u: &TorusFunction| crate::quantize::apply_exact(a, kind, u, h);
            for u in &probes {
                let pq_r = op(&p, &op(&q, &op(&r, u)?)?)?;
                let pqr = op(&p.product(&q)?, &op(&r, u)?)?;
                assoc = assoc.max(pq_r.sub(&pqr)?.l2_norm());
                let qp = op(&q, &op(&p, u)?)?;
                let pq = op(&p, &op(&q, u)?)?;
                comm = comm.max(pq.sub(&qp)?.l2_norm());
                prod = prod.max(pq.sub(&op(&p.product(&q)?, u)?)?.l2_norm());
            }
        }
    }
    Ok((assoc, comm, prod))
}

fn hs_of(js: &[u64]) -> Result<Vec<f64>> {
    if js.len() < 2 || js.contains(&0) {
        return Err(Error::Config("j_values needs at least two positive entries".into()));
    }
    Ok(js.iter().map(|&j| 1.0 / j as f64).collect())
}

pub fn cmd_quantize(cfg: &ExperimentConfig) -> Result<RunReport> {
    run("quantize", cfg, |cfg| {
        let qs = &cfg.quantize;
        let hs = hs_of(&qs.j_values)?;
        let probes = random_probes(qs.dim, qs.band, qs.probes, cfg.seed)?;
        let a = registered_mixed_symbol(qs.dim);
        let b = registered_kinetic_symbol(qs.dim);
        let mut checks = vec![];
        let mut results = serde_json::Map::new();
        for kind in Quantization::ALL {
            let adj = adjoint_defect(&a, kind, hs[0], &probes)?;
            let comp = compose_check(&a, &b, kind.into(), &hs, &probes)?;
            let comm = commutator_check(&a, &b, kind.into(), &hs, &probes)?;
            checks.push(Check::new(format!("adjoint_{}", kind.name()), adj <= 1e-12, format!("defect {adj:e}")));
            checks.push(Check::new(
                format!("commutator_{}", kind.name()),
                comm.slope >= qs.min_commutator_slope,
                format!("slope {}", comm.slope),
            ));
            results
                .insert(kind.name().into(), json!({ "adjoint_defect": adj, "composition": comp, "commutator": comm }));
        }
        let (assoc, comm, prod) = multiplier_algebra_defects(cfg.seed)?;
        checks.push(Check::new(
            "multiplier_algebra",
            assoc == 0.0 && comm == 0.0 && prod == 0.0,
            format!("associativity {assoc:e}, commutativity {comm:e}, product {prod:e}"),
        ));
        Ok(Outcome { results: Value::Object(results), checks, ..Default::default() })
    })
}

/// The invariant suite. `perturb` evaluates Weyl symbols without the `h`
/// factor in the half shift, which must break the composition check.
pub fn cmd_selftest(cfg: &ExperimentConfig, perturb: bool) -> Result<RunReport> {
    run("selftest", cfg, |cfg| {
        let seed = cfg.seed;
        let mut checks = vec![];

        // Parseval against quadrature on a grid finer than the band.
        let u = TorusFunction::random_dense(2, 3, seed)?;
        let grid = 8usize;
        let mut mean = 0.0;
        for a in 0..grid {
            for b in 0..grid {
                let x = [2.0 * PI * a as f64 / grid as f64, 2.0 * PI * b as f64 / grid as f64];
                mean += u.eval(&x).norm_sqr();
            }
        }
        mean /= (grid * grid) as f64;
        let parseval = (mean - u.l2_norm().powi(2)).abs();
        checks.push(Check::new("parseval", parseval <= 1e-12, format!("defect {parseval:e}")));

        let probes = random_probes(2, 8, 3, seed)?;
        let a = registered_mixed_symbol(2);
        let adj = Quantization::ALL
            .iter()
            .map(|&k| adjoint_defect(&a, k, 0.125, &probes))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        checks.push(Check::new("adjointness", adj <= 1e-12, format!("max defect {adj:e}")));

        let small = random_probes(2, 4, 2, seed)?;
        let hs = [0.125, 0.0625, 0.03125, 0.015625];
        let xi1 = Symbol::multiplier(2, Profile::coordinate(0));
        let left = compose_check(&a, &xi1, Quantization::Left.into(), &hs, &small)?;
        let weyl = compose_check(&a, &xi1, Quantizer { kind: Quantization::Weyl, drop_weyl_h: perturb }, &hs, &small)?;
        checks.push(Check::new(
            "composition_slope",
            left.exact && weyl.slope >= 0.8,
            format!("left exact {}, weyl slope {}", left.exact, weyl.slope),
        ));
        let comm = commutator_check(&a, &registered_kinetic_symbol(2), Quantization::Left.into(), &hs, &small)?;
        checks.push(Check::new("commutator_slope", comm.slope >= 1.8, format!("slope {}", comm.slope)));
        let (assoc, commute, prod) = multiplier_algebra_defects(seed)?;
        checks.push(Check::new(
            "multiplier_algebra",
            assoc == 0.0 && commute == 0.0 && prod == 0.0,
            format!("{assoc:e} {commute:e} {prod:e}"),
        ));

        let mut lift: f64 = 0.0;
        for (n, axes) in [(3usize, vec![0usize]), (3, vec![0, 1]), (4, vec![0]), (4, vec![0, 1])] {
            let c = LinearCoisotropic::coordinate(n, &axes)?;
            let chart = ProjectiveChart::new(c, 0, 1)?;
            let pts = random_chart_points(&chart, 100, seed);
            for f in registered_chart_functions() {
                for i in 0..n {
                    lift = lift.max(lift_check(&chart, i, f.as_ref(), &pts)?);
                }
            }
        }
        checks.push(Check::new("lift_check", lift <= 1e-6, format!("max defect {lift:e}")));

        let mut comm_defect: f64 = 0.0;
        let mut control: f64 = f64::INFINITY;
        for c in worked_coisotropics()? {
            let n = c.dim();
            let split = taylor_split(RegisteredSymbol::HalfSquaredNorm { dim: n }, c.clone())?;
            let pts = random_split_states(&c, split.collar, 100, seed);
            comm_defect = comm_defect.max(commutation_check(&split, &pts)?);
            let h1 = split.field(SplitPart::H1);
            let h2 = split.field(SplitPart::H2);
            let bad = PerturbedField { base: &h2, amplitude: 0.1, axis: 0 };
            control = control.min(bracket_norm(&h1, &bad, &pts)?);
        }
        checks.push(Check::new(
            "commutation_check",
            comm_defect <= 1e-12 && control >= 1e-3,
            format!("defect {comm_defect:e}, perturbed {control:e}"),
        ));

        let samples = random_polar_samples(100, seed);
        let toy = ToySymbol { a: 0.3, b: -0.7, c: 0.2 };
        let sq = RegisteredSymbol::HalfSquaredNorm { dim: 3 };
        let canc = cancellation_check(&toy, &samples).max(cancellation_check(&FiberSymbol3(&sq), &samples));
        let polar = polar_field_check(&toy, &samples);
        checks.push(Check::new("cancellation_check", canc <= 1e-8, format!("defect {canc:e}")));
        checks.push(Check::new("polar_field", polar <= 1e-8, format!("defect {polar:e}")));

        let results = Value::Array(checks.iter().map(|c| json!(c)).collect());
        Ok(Outcome { results, checks, ..Default::default() })
    })
}

/// The worked coisotropics: `{ξ₁ = ξ₂ = 0}` in `𝕋³` and `𝕋⁴` and
/// `{ξ₁ + ξ₃ = ξ₂ + ξ₄ = 0}` in `𝕋⁴`.
pub fn worked_coisotropics() -> Result<Vec<LinearCoisotropic>> {
    Ok(vec![
        LinearCoisotropic::coordinate(3, &[0, 1])?,
        LinearCoisotropic::coordinate(4, &[0, 1])?,
        LinearCoisotropic::new(vec![vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]])?,
    ])
}
