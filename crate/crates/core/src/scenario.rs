//! Scenario configuration and the built-in library of manifolds and
//! sequence families.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::atlas::FramePolicy;
use crate::charts::Ball;
use crate::discretization::Region;
use crate::error::{Error, Result};
use crate::geometry::{bump, bump_d1, ManifoldSpec, Point};
use crate::spotlight::{critical_exponent, SequenceFamily};
use crate::verification::Tolerances;

/// Scenario files shipped with the crate, as `(name, json)`.
pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("flat_one_bump", include_str!("../../../scenarios/flat_one_bump.json")),
    ("flat_two_bumps", include_str!("../../../scenarios/flat_two_bumps.json")),
    ("flat_fixed_bump", include_str!("../../../scenarios/flat_fixed_bump.json")),
    ("flat_flattening", include_str!("../../../scenarios/flat_flattening.json")),
    ("flat_oscillating", include_str!("../../../scenarios/flat_oscillating.json")),
    ("zero_sequence", include_str!("../../../scenarios/zero_sequence.json")),
    ("perturbed_flat_escape", include_str!("../../../scenarios/perturbed_flat_escape.json")),
    ("hyperbolic_fixed_bump", include_str!("../../../scenarios/hyperbolic_fixed_bump.json")),
    ("flat3_one_bump", include_str!("../../../scenarios/flat3_one_bump.json")),
];

pub const DEFAULT_SCHEDULE: [u32; 6] = [1, 2, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    pub catalog_id: String,
    pub dim: usize,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub family_id: String,
    #[serde(default)]
    pub params: Value,
}

/// A validated scenario with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub manifold: ManifoldConfig,
    pub region: Region,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub rho_hat: Option<f64>,
    /// Alias of `rho_hat`; must agree with it when both are given.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub spacing: Option<f64>,
    #[serde(default = "default_schedule")]
    pub k_schedule: Vec<u32>,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub p: Option<f64>,
    pub sequence: SequenceConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_frames")]
    pub frames: FramePolicy,
    #[serde(default = "default_transition_fraction")]
    pub transition_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_rho() -> f64 {
    1.0
}

fn default_schedule() -> Vec<u32> {
    DEFAULT_SCHEDULE.to_vec()
}

fn default_i_max() -> usize {
    25
}

fn default_n_max() -> usize {
    8
}

fn default_frames() -> FramePolicy {
    FramePolicy::GramSchmidt
}

fn default_transition_fraction() -> f64 {
    0.25
}

fn violation(msg: impl Into<String>) -> Error {
    Error::ConstraintViolation(msg.into())
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        BUILTIN_SCENARIOS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_json_str(text))
            .unwrap_or_else(|| Err(violation(format!("unknown scenario '{name}'"))))
    }

    pub fn rho_hat(&self) -> f64 {
        self.rho_hat.expect("resolved config")
    }

    pub fn p(&self) -> f64 {
        self.p.expect("resolved config")
    }

    pub fn spacing(&self) -> f64 {
        self.spacing.expect("resolved config")
    }

    /// Fills defaults and checks every constraint; messages name the
    /// violated bound.
    pub fn resolve(&mut self) -> Result<()> {
        let n = self.manifold.dim;
        if n != 2 && n != 3 {
            return Err(violation(format!("dim must be 2 or 3 (got {n})")));
        }
        if self.region.dim() != n {
            return Err(violation(format!("region has dimension {}, manifold has {n}", self.region.dim())));
        }
        let r = inj_radius(&self.manifold)?;
        if !(self.rho > 0.0) {
            return Err(violation("rho must be positive"));
        }
        if self.rho >= r / 8.0 {
            return Err(violation(format!("rho must be < r(M)/8 (rho = {}, r(M) = {r})", self.rho)));
        }
        if 2.0 * self.rho >= 0.75 * r {
            return Err(violation("2*rho must be < a = 3r(M)/4"));
        }
        let rho_hat = match (self.rho_hat, self.epsilon) {
            (Some(a), Some(b)) if a != b => {
                return Err(violation("epsilon is an alias of rho_hat and must equal it"));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => 0.75 * self.rho,
        };
        if !(rho_hat > 0.5 * self.rho && rho_hat < self.rho) {
            return Err(violation(format!(
                "rho_hat must satisfy rho/2 < rho_hat < rho (rho_hat = {rho_hat}, rho = {})",
                self.rho
            )));
        }
        self.rho_hat = Some(rho_hat);
        self.epsilon = Some(rho_hat);
        let p = self.p.unwrap_or(4.0);
        if !(p > 2.0 && p < critical_exponent(n)) {
            return Err(violation(format!("p must lie in the open interval (2, 2*) (p = {p})")));
        }
        self.p = Some(p);
        let h = self
            .spacing
            .unwrap_or(if n == 2 { self.rho / 24.0 } else { self.rho / 12.0 });
        if !(h > 0.0 && h <= self.rho / 4.0) {
            return Err(violation(format!("spacing must lie in (0, rho/4] (got {h})")));
        }
        self.spacing = Some(h);
        if self.k_schedule.len() < 3 {
            return Err(violation("k_schedule needs at least 3 entries"));
        }
        if self.k_schedule[0] == 0 || self.k_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(violation("k_schedule must be strictly increasing positive integers"));
        }
        if !(self.transition_fraction > 0.0 && self.transition_fraction <= 1.0) {
            return Err(violation("transition_fraction must lie in (0, 1]"));
        }
        if let FramePolicy::Alternating { angle } = self.frames {
            if !angle.is_finite() {
                return Err(violation("frame angle must be finite"));
            }
        }
        // Fail early on unknown ids and bad parameters.
        match n {
            2 => {
                build_manifold::<2>(self)?;
                build_family::<2>(self)?;
            }
            _ => {
                build_manifold::<3>(self)?;
                build_family::<3>(self)?;
            }
        }
        Ok(())
    }

    /// Keeps only the scheduled `k ≤ kmax`.
    pub fn truncate_schedule(&mut self, kmax: u32) -> Result<()> {
        self.k_schedule.retain(|&k| k <= kmax);
        self.resolve()
    }
}

fn params<T: for<'de> Deserialize<'de> + Default>(v: &Value, what: &str) -> Result<T> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone()).map_err(|e| violation(format!("invalid {what} params: {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlatParams {
    inj_radius: f64,
}

impl Default for FlatParams {
    fn default() -> Self {
        FlatParams { inj_radius: 10.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PerturbedParams {
    beta: f64,
    radius: f64,
    center: Option<Vec<f64>>,
    inj_radius: f64,
}

impl Default for PerturbedParams {
    fn default() -> Self {
        PerturbedParams {
            beta: 0.2,
            radius: 2.0,
            center: None,
            inj_radius: 10.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct HyperbolicParams {
    /// `upper_half` (any dimension) or `polar` (2D).
    model: String,
    inj_radius: f64,
}

impl Default for HyperbolicParams {
    fn default() -> Self {
        HyperbolicParams {
            model: "upper_half".into(),
            inj_radius: 10.0,
        }
    }
}

fn inj_radius(m: &ManifoldConfig) -> Result<f64> {
    match m.catalog_id.as_str() {
        "flat" => Ok(params::<FlatParams>(&m.params, "flat")?.inj_radius),
        "perturbed_flat" => Ok(params::<PerturbedParams>(&m.params, "perturbed_flat")?.inj_radius),
        "hyperbolic" => Ok(params::<HyperbolicParams>(&m.params, "hyperbolic")?.inj_radius),
        other => Err(violation(format!("unknown catalog_id '{other}'"))),
    }
}

fn vector<const N: usize>(v: &Option<Vec<f64>>, what: &str) -> Result<Point<N>> {
    match v {
        None => Ok(Point::<N>::zeros()),
        Some(c) if c.len() == N => Ok(Point::<N>::from_column_slice(c)),
        Some(c) => Err(violation(format!("{what} has {} components, expected {N}", c.len()))),
    }
}

pub fn build_manifold<const N: usize>(cfg: &ScenarioConfig) -> Result<ManifoldSpec<N>> {
    let m = &cfg.manifold;
    match m.catalog_id.as_str() {
        "flat" => Ok(ManifoldSpec::flat(params::<FlatParams>(&m.params, "flat")?.inj_radius)),
        "perturbed_flat" => {
            let p: PerturbedParams = params(&m.params, "perturbed_flat")?;
            if !(p.beta > -1.0 && p.radius > 0.0) {
                return Err(violation("perturbed_flat needs beta > -1 and radius > 0"));
            }
            Ok(ManifoldSpec::perturbed_flat(p.beta, vector(&p.center, "center")?, p.radius, p.inj_radius))
        }
        "hyperbolic" => {
            let p: HyperbolicParams = params(&m.params, "hyperbolic")?;
            let (lo, hi) = cfg.region.bounds();
            match p.model.as_str() {
                "upper_half" => {
                    if lo[N - 1] <= 0.0 {
                        return Err(violation("hyperbolic upper_half region must satisfy x_N > 0"));
                    }
                    Ok(ManifoldSpec::hyperbolic_upper_half(p.inj_radius, 1.0 / (hi[N - 1] + 2.0 * cfg.rho)))
                }
                "polar" if N == 2 => {
                    if lo[0] <= 0.0 {
                        return Err(violation("hyperbolic polar region must satisfy t > 0"));
                    }
                    let t_min = (lo[0] - 2.0 * cfg.rho).max(1e-3);
                    let scale = t_min.sinh().min(1.0);
                    let spec = ManifoldSpec::<2>::hyperbolic_polar(p.inj_radius, scale);
                    Ok(same_dim(spec))
                }
                other => Err(violation(format!("unknown hyperbolic model '{other}' for dim {N}"))),
            }
        }
        other => Err(violation(format!("unknown catalog_id '{other}'"))),
    }
}

/// `ManifoldSpec<2>` as `ManifoldSpec<N>` when `N == 2`.
fn same_dim<const N: usize>(spec: ManifoldSpec<2>) -> ManifoldSpec<N> {
    let boxed: Box<dyn std::any::Any> = Box::new(spec);
    *boxed
        .downcast::<ManifoldSpec<N>>()
        .expect("called only with N = 2")
}

/// `A·b(|x − c_k|/R)` with `c_k = start + k·velocity`, optionally snapped to
/// the discretization lattice.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BumpParams {
    pub amplitude: f64,
    pub radius: f64,
    pub start: Option<Vec<f64>>,
    pub velocity: Option<Vec<f64>>,
}

impl Default for BumpParams {
    fn default() -> Self {
        BumpParams {
            amplitude: 1.0,
            radius: 1.0,
            start: None,
            velocity: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MovingParams {
    #[serde(flatten)]
    bump: BumpParams,
    /// Snap centers to the nearest point of the `ρ̂`-lattice through the
    /// region's lower corner.
    snap_to_lattice: bool,
}

impl Default for MovingParams {
    fn default() -> Self {
        MovingParams {
            bump: BumpParams::default(),
            snap_to_lattice: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MultiParams {
    bumps: Vec<BumpParams>,
    snap_to_lattice: bool,
}

impl Default for MultiParams {
    fn default() -> Self {
        let b = |a: f64, x: f64, v: f64| BumpParams {
            amplitude: a,
            radius: 1.0,
            start: Some(vec![x, 0.0]),
            velocity: Some(vec![v, 0.0]),
        };
        MultiParams {
            bumps: vec![b(1.0, 3.0, 0.75), b(0.6, -3.0, -0.75)],
            snap_to_lattice: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlatteningParams {
    amplitude: f64,
    r0: f64,
    center: Option<Vec<f64>>,
    /// `u_k = A k^{-e} b(|x − c|/(r0 k))`; `None` means `e = N/2`, which keeps
    /// the `L²` norm fixed.
    exponent: Option<f64>,
}

impl Default for FlatteningParams {
    fn default() -> Self {
        FlatteningParams {
            amplitude: 1.0,
            r0: 0.3,
            center: None,
            exponent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MovingBump<const N: usize> {
    pub amplitude: f64,
    pub radius: f64,
    pub start: Point<N>,
    pub velocity: Point<N>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Modulation {
    None,
    /// `cos(π log₂ k)`, i.e. `±1` on powers of two.
    CosLog2,
}

/// The built-in sequence families.
#[derive(Debug, Clone, PartialEq)]
pub enum Family<const N: usize> {
    Bumps {
        bumps: Vec<MovingBump<N>>,
        modulation: Modulation,
        /// Lattice origin and spacing for snapped centers.
        snap: Option<(Point<N>, f64)>,
        bound: Option<f64>,
    },
    Flattening {
        amplitude: f64,
        r0: f64,
        center: Point<N>,
        exponent: f64,
        bound: Option<f64>,
    },
    Zero,
}

/// `(∫_{|s|<1} b², ∫_{|s|<1} |∇b|²)` in `R^N` by radial quadrature.
pub fn unit_bump_energies(n: usize) -> (f64, f64) {
    let steps = 100_000;
    let ds = 1.0 / steps as f64;
    let area = if n == 2 { 2.0 * std::f64::consts::PI } else { 4.0 * std::f64::consts::PI };
    let (mut m, mut g) = (0.0, 0.0);
    for i in 0..steps {
        let s = (i as f64 + 0.5) * ds;
        let w = area * s.powi(n as i32 - 1) * ds;
        m += bump(s).powi(2) * w;
        g += bump_d1(s).powi(2) * w;
    }
    (m, g)
}

/// `‖A b(|x|/R)‖_{H^{1,2}(R^N)}`.
fn bump_h12(n: usize, a: f64, r: f64) -> f64 {
    let (m, g) = unit_bump_energies(n);
    (a * a * (r.powi(n as i32) * m + r.powi(n as i32 - 2) * g)).sqrt()
}

impl<const N: usize> Family<N> {
    fn bump_center(&self, b: &MovingBump<N>, k: u32) -> Point<N> {
        let c = b.start + b.velocity * k as f64;
        match self {
            Family::Bumps { snap: Some((o, h)), .. } => {
                o + (c - o).map(|v| (v / h).round() * h)
            }
            _ => c,
        }
    }
}

impl<const N: usize> SequenceFamily<N> for Family<N> {
    fn eval(&self, k: u32, x: &Point<N>) -> f64 {
        match self {
            Family::Bumps { bumps, modulation, .. } => {
                let m = match modulation {
                    Modulation::None => 1.0,
                    Modulation::CosLog2 => (std::f64::consts::PI * (k as f64).log2()).cos(),
                };
                let v: f64 = bumps
                    .iter()
                    .map(|b| b.amplitude * bump((x - self.bump_center(b, k)).norm() / b.radius))
                    .sum();
                m * v
            }
            Family::Flattening {
                amplitude,
                r0,
                center,
                exponent,
                ..
            } => {
                let kf = k as f64;
                amplitude * kf.powf(-exponent) * bump((x - center).norm() / (r0 * kf))
            }
            Family::Zero => 0.0,
        }
    }

    fn support(&self, k: u32) -> Option<Vec<Ball<N>>> {
        Some(match self {
            Family::Bumps { bumps, .. } => bumps
                .iter()
                .filter(|b| b.amplitude != 0.0)
                .map(|b| Ball {
                    center: self.bump_center(b, k),
                    radius: b.radius,
                })
                .collect(),
            Family::Flattening { r0, center, amplitude, .. } if *amplitude != 0.0 => vec![Ball {
                center: *center,
                radius: r0 * k as f64,
            }],
            _ => Vec::new(),
        })
    }

    fn h12_bound(&self) -> Option<f64> {
        match self {
            Family::Bumps { bound, .. } | Family::Flattening { bound, .. } => *bound,
            Family::Zero => Some(0.0),
        }
    }
}

fn moving<const N: usize>(b: &BumpParams) -> Result<MovingBump<N>> {
    if !(b.radius > 0.0) {
        return Err(violation("bump radius must be positive"));
    }
    Ok(MovingBump {
        amplitude: b.amplitude,
        radius: b.radius,
        start: vector(&b.start, "start")?,
        velocity: vector(&b.velocity, "velocity")?,
    })
}

/// Builds the configured family. Declared `H^{1,2}` bounds are computed on
/// flat manifolds only.
pub fn build_family<const N: usize>(cfg: &ScenarioConfig) -> Result<Family<N>> {
    let s = &cfg.sequence;
    let flat = cfg.manifold.catalog_id == "flat";
    let (lo, _) = cfg.region.bounds();
    let origin = Point::<N>::from_column_slice(&lo);
    let snap = |on: bool| on.then_some((origin, cfg.rho_hat.unwrap_or(0.75 * cfg.rho)));
    let bumps_bound = |bs: &[MovingBump<N>]| {
        flat.then(|| bs.iter().map(|b| bump_h12(N, b.amplitude, b.radius)).sum())
    };
    match s.family_id.as_str() {
        "zero" => Ok(Family::Zero),
        "fixed_bump" | "oscillating" => {
            let mut p: BumpParams = params(&s.params, &s.family_id)?;
            if p.velocity.is_some() {
                return Err(violation(format!("{} takes no velocity", s.family_id)));
            }
            p.velocity = None;
            let bumps = vec![moving::<N>(&p)?];
            Ok(Family::Bumps {
                bound: bumps_bound(&bumps),
                bumps,
                modulation: if s.family_id == "oscillating" {
                    Modulation::CosLog2
                } else {
                    Modulation::None
                },
                snap: None,
            })
        }
        "traveling_bump" | "perturbation_escape" => {
            let mut p: MovingParams = params(&s.params, &s.family_id)?;
            if s.family_id == "perturbation_escape" && s.params.get("snap_to_lattice").is_none() {
                p.snap_to_lattice = true;
            }
            if p.bump.velocity.is_none() {
                let mut v = vec![0.0; N];
                v[0] = if s.family_id == "perturbation_escape" { 1.0 } else { 0.75 };
                p.bump.velocity = Some(v);
            }
            let bumps = vec![moving::<N>(&p.bump)?];
            Ok(Family::Bumps {
                bound: bumps_bound(&bumps),
                bumps,
                modulation: Modulation::None,
                snap: snap(p.snap_to_lattice),
            })
        }
        "two_bump" => {
            let p: MultiParams = params(&s.params, "two_bump")?;
            if p.bumps.is_empty() {
                return Err(violation("two_bump needs at least one bump"));
            }
            let bumps = p.bumps.iter().map(moving::<N>).collect::<Result<Vec<_>>>()?;
            Ok(Family::Bumps {
                bound: bumps_bound(&bumps),
                bumps,
                modulation: Modulation::None,
                snap: snap(p.snap_to_lattice),
            })
        }
        "flattening" => {
            let p: FlatteningParams = params(&s.params, "flattening")?;
            if !(p.r0 > 0.0) {
                return Err(violation("flattening r0 must be positive"));
            }
            let exponent = p.exponent.unwrap_or(N as f64 / 2.0);
            let bound = flat.then(|| {
                cfg.k_schedule
                    .iter()
                    .map(|&k| {
                        let kf = k as f64;
                        bump_h12(N, p.amplitude * kf.powf(-exponent), p.r0 * kf)
                    })
                    .fold(0.0, f64::max)
            });
            Ok(Family::Flattening {
                amplitude: p.amplitude,
                r0: p.r0,
                center: vector(&p.center, "center")?,
                exponent,
                bound,
            })
        }
        other => Err(violation(format!("unknown family_id '{other}'"))),
    }
}
