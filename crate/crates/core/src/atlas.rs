//! Transition maps between trailing charts, their limits along the
//! schedule, and the glued atlas of the manifold at infinity.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charts::{pullback_metric, ChartMetric, CHART_FD_STEP};
use crate::discretization::{Discretization, TrailingSystem};
use crate::error::{Error, Result};
use crate::geometry::{bump, Frame, ManifoldSpec, Mat, Point};
use crate::lattice::{GridFunction, GridMap, Lattice};
use crate::spotlight::{check_exponent, NormsOnM};

/// How the frame `i_y` at a trailing point is chosen along the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FramePolicy {
    /// Gram–Schmidt of the coordinate basis; deterministic in `y`.
    GramSchmidt,
    /// Gram–Schmidt rotated by `angle` at odd schedule steps. Forces frame
    /// incoherence across `k`.
    Alternating { angle: f64 },
}

impl FramePolicy {
    pub fn frame<const N: usize>(&self, spec: &ManifoldSpec<N>, y: &Point<N>, step: usize) -> Result<Frame<N>> {
        let f = Frame::gram_schmidt(spec, y)?;
        Ok(match *self {
            FramePolicy::Alternating { angle } if step % 2 == 1 => f.rotated(angle),
            _ => f,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtlasConfig {
    /// Threshold on the discrete C² increment of transition maps and on the
    /// sup increment of chart metrics.
    pub tol_c2: f64,
    /// Lattice spacing for transition maps on `Ω̄_{2ρ}`, as a fraction of `ρ`.
    pub transition_fraction: f64,
    pub frames: FramePolicy,
    /// Cap on triple-overlap cocycle checks.
    pub max_triples: usize,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        AtlasConfig {
            tol_c2: 1e-4,
            transition_fraction: 0.25,
            frames: FramePolicy::GramSchmidt,
            max_triples: 200,
        }
    }
}

pub fn transition_lattice(dim: usize, rho: f64, fraction: f64) -> Result<Lattice> {
    Lattice::new(dim, 2.0 * rho, fraction * rho)
}

/// `e_i^{-1}(e_j(ξ))`, or `None` when `e_j(ξ)` leaves `B(y_i, a)`.
pub fn compose_charts<const N: usize>(
    spec: &ManifoldSpec<N>,
    frame_i: &Frame<N>,
    frame_j: &Frame<N>,
    xi: &Point<N>,
) -> Result<Option<Point<N>>> {
    let z = spec.exp_map(frame_j, xi)?;
    log_within(spec, frame_i, &z)
}

fn log_within<const N: usize>(spec: &ManifoldSpec<N>, frame: &Frame<N>, z: &Point<N>) -> Result<Option<Point<N>>> {
    let a = spec.chart_radius();
    if spec.distance_lower_bound(&frame.base_point, z) >= a {
        return Ok(None);
    }
    match spec.log_map(frame, z) {
        Ok(v) if v.norm() < a => Ok(Some(v)),
        // Shooting stalls only near folds of the exponential map, where no
        // unique short geodesic exists.
        Ok(_) | Err(Error::OutsideInjectivity { .. }) | Err(Error::NoConvergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `ψ_{ij,k} = e_{y_{k;i}}^{-1} ∘ e_{y_{k;j}}` sampled on `lattice`.
pub fn transition_map_k<const N: usize>(
    spec: &ManifoldSpec<N>,
    frame_i: &Frame<N>,
    frame_j: &Frame<N>,
    lattice: &Lattice,
) -> Result<GridMap> {
    let images = chart_images(spec, frame_j, lattice)?;
    transition_from_images(spec, frame_i, lattice, &images)
}

fn chart_images<const N: usize>(spec: &ManifoldSpec<N>, frame: &Frame<N>, lattice: &Lattice) -> Result<Vec<(usize, Point<N>)>> {
    lattice
        .active_indices()
        .into_iter()
        .map(|idx| Ok((idx, spec.exp_map(frame, &lattice.point::<N>(idx))?)))
        .collect()
}

fn transition_from_images<const N: usize>(
    spec: &ManifoldSpec<N>,
    frame_i: &Frame<N>,
    lattice: &Lattice,
    images: &[(usize, Point<N>)],
) -> Result<GridMap> {
    let mut map = GridMap::undefined(*lattice);
    for (idx, z) in images {
        if let Some(v) = log_within(spec, frame_i, z)? {
            map.set(*idx, v.as_slice());
        }
    }
    Ok(map)
}

/// Sup over the lattice of `|f| + |∂f| + |∂²f|`, maximized over components.
/// Derivatives are lattice differences; masked entries are skipped.
fn c2_sup(components: &[GridFunction]) -> f64 {
    let mut out: f64 = 0.0;
    for f in components {
        let d = f.lattice.dim;
        let firsts: Vec<GridFunction> = (0..d)
            .map(|a| GridFunction {
                lattice: f.lattice,
                values: (0..f.values.len())
                    .map(|i| if f.is_active(i) { f.partial(i, a) } else { f64::NAN })
                    .collect(),
            })
            .collect();
        let (mut s0, mut s1, mut s2): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for (i, v) in f.active_values() {
            s0 = s0.max(v.abs());
            for (a, g) in firsts.iter().enumerate() {
                s1 = s1.max(g.values[i].abs());
                for b in a..d {
                    s2 = s2.max(firsts[b].partial(i, a).abs());
                }
            }
        }
        out = out.max(s0 + s1 + s2);
    }
    out
}

/// Discrete C² norm of a map, by components.
pub fn c2_norm(map: &GridMap) -> f64 {
    let comps: Vec<_> = (0..map.lattice.dim).map(|c| map.component(c)).collect();
    c2_sup(&comps)
}

/// Discrete C² distance; infinite when the masks differ.
pub fn c2_distance(a: &GridMap, b: &GridMap) -> f64 {
    if !a.lattice.matches(&b.lattice) || a.defined != b.defined {
        return f64::INFINITY;
    }
    let comps: Vec<_> = (0..a.lattice.dim)
        .map(|c| {
            a.component(c)
                .combine(1.0, &b.component(c), -1.0)
                .expect("matching lattices")
        })
        .collect();
    c2_sup(&comps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionStatus {
    Converged,
    MaskUnstable,
    NotCauchy,
}

#[derive(Debug, Clone)]
pub struct TransitionLimit {
    pub map: GridMap,
    pub status: TransitionStatus,
    /// C² distance between consecutive samples (infinite across mask changes).
    pub increments: Vec<f64>,
}

/// Converged iff the last three samples are fully defined, the last C²
/// increment is below `tol_c2` and it does not exceed the one before.
pub fn limit_transition(maps: &[GridMap], tol_c2: f64) -> TransitionLimit {
    let increments: Vec<f64> = maps.windows(2).map(|w| c2_distance(&w[0], &w[1])).collect();
    let map = maps.last().cloned().expect("at least one sample");
    let n = maps.len();
    let status = if n < 3 || !maps[n - 3..].iter().all(GridMap::fully_defined) {
        TransitionStatus::MaskUnstable
    } else {
        let last = increments[n - 2];
        let prev = increments[n - 3];
        if last < tol_c2 && last <= prev * (1.0 + 1e-9) + 1e-14 {
            TransitionStatus::Converged
        } else {
            TransitionStatus::NotCauchy
        }
    };
    TransitionLimit {
        map,
        status,
        increments,
    }
}

/// One ordered pair `(i, j)` of trailing charts.
#[derive(Debug, Clone)]
pub struct PairTransition {
    pub i: usize,
    pub j: usize,
    pub limit: TransitionLimit,
    pub c2_norm: f64,
    /// Fully defined on `Ω̄_{2ρ}` over the schedule tail and jointly converged with `(j, i)`.
    pub in_k: bool,
    /// Lattice indices of the chart-`i` lattice in `Ω_ij = ψ_ij(Ω_ρ) ∩ Ω_ρ`.
    pub omega: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct GluingData {
    pub pairs: BTreeMap<(usize, usize), PairTransition>,
}

impl GluingData {
    pub fn k_set(&self) -> BTreeSet<(usize, usize)> {
        self.pairs.values().filter(|p| p.in_k).map(|p| (p.i, p.j)).collect()
    }

    pub fn overlap_k(&self) -> BTreeSet<(usize, usize)> {
        self.pairs
            .values()
            .filter(|p| p.in_k && !p.omega.is_empty())
            .map(|p| (p.i, p.j))
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&PairTransition> {
        self.pairs.get(&(i, j))
    }
}

/// `frames[s][i]` for every schedule step and trailing index.
pub fn trailing_frames<const N: usize>(
    spec: &ManifoldSpec<N>,
    disc: &Discretization<N>,
    trailing: &TrailingSystem,
    policy: FramePolicy,
) -> Result<Vec<Vec<Frame<N>>>> {
    (0..trailing.len())
        .map(|s| {
            trailing.orderings[s]
                .iter()
                .map(|&y| policy.frame(spec, &disc.points[y], s))
                .collect()
        })
        .collect()
}

/// Transition maps for all ordered pairs along the schedule, their limits,
/// the set `𝒦`, and the overlaps `Ω_ij` (from exact final-sample compositions
/// on `chart_lattice`, eroded by one cell).
pub fn build_gluing<const N: usize>(
    spec: &ManifoldSpec<N>,
    frames: &[Vec<Frame<N>>],
    chart_lattice: &Lattice,
    cfg: &AtlasConfig,
) -> Result<GluingData> {
    let rho = chart_lattice.radius;
    let tl = transition_lattice(N, rho, cfg.transition_fraction)?;
    let charts = frames.last().map_or(0, Vec::len);
    let steps = frames.len();
    // Chart images are shared by every pair with the same j.
    let images: Vec<Vec<Vec<(usize, Point<N>)>>> = frames
        .iter()
        .map(|fs| fs.par_iter().map(|f| chart_images(spec, f, &tl)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..charts)
        .flat_map(|i| (0..charts).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let limits: Vec<TransitionLimit> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let maps = (0..steps)
                .map(|s| transition_from_images(spec, &frames[s][i], &tl, &images[s][j]))
                .collect::<Result<Vec<_>>>()?;
            Ok(limit_transition(&maps, cfg.tol_c2))
        })
        .collect::<Result<_>>()?;
    let converged: BTreeSet<(usize, usize)> = pairs
        .iter()
        .zip(&limits)
        .filter(|(_, l)| l.status == TransitionStatus::Converged)
        .map(|(p, _)| *p)
        .collect();
    if charts > 1 && converged.is_empty() {
        return Err(Error::NoConvergedPairs);
    }
    let last = frames.last().map(Vec::as_slice).unwrap_or(&[]);
    let mut out = GluingData::default();
    let records: Vec<PairTransition> = pairs
        .par_iter()
        .zip(limits)
        .map(|(&(i, j), limit)| {
            let in_k = converged.contains(&(i, j)) && converged.contains(&(j, i));
            let omega = if in_k {
                overlap_mask(spec, &last[i], &last[j], chart_lattice)?
            } else {
                Vec::new()
            };
            Ok(PairTransition {
                i,
                j,
                c2_norm: c2_norm(&limit.map),
                limit,
                in_k,
                omega,
            })
        })
        .collect::<Result<_>>()?;
    for r in records {
        out.pairs.insert((r.i, r.j), r);
    }
    Ok(out)
}

/// Chart-`i` lattice entries `ξ` with `|ξ| ≤ ρ − h` and `|ψ_ji(ξ)| ≤ ρ − h`.
fn overlap_mask<const N: usize>(
    spec: &ManifoldSpec<N>,
    frame_i: &Frame<N>,
    frame_j: &Frame<N>,
    lattice: &Lattice,
) -> Result<Vec<usize>> {
    let inner = (lattice.radius - lattice.spacing) * (1.0 + 1e-12);
    if spec.coord_scale * (frame_i.base_point - frame_j.base_point).norm() >= 2.0 * lattice.radius {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for idx in lattice.active_indices() {
        let xi = lattice.point::<N>(idx);
        if xi.norm() > inner {
            continue;
        }
        if let Some(eta) = compose_charts(spec, frame_j, frame_i, &xi)? {
            if eta.norm() <= inner {
                out.push(idx);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricStatus {
    Converged,
    NotCauchy,
}

/// Limit metric of one trailing chart: the final-sample pullback field
/// (`None` is the identity field) with sup increments over the tail.
#[derive(Debug, Clone)]
pub struct LimitMetric<const N: usize> {
    pub field: Option<ChartMetric<N>>,
    pub increments: Vec<f64>,
    pub status: MetricStatus,
}

fn metric_field<const N: usize>(spec: &ManifoldSpec<N>, frame: &Frame<N>, lattice: &Lattice) -> Result<ChartMetric<N>> {
    let active = lattice.active_indices();
    let geo = crate::charts::ChartGeometry::compute(spec, *frame, lattice, &active, true)?;
    Ok(geo.metric().cloned().expect("metric requested"))
}

/// `g^{(i)} = lim_k (de)ᵀ g (de)` for chart `i`, judged on the last three
/// samples of `frames_i` (one frame per schedule step).
pub fn limit_metric<const N: usize>(
    spec: &ManifoldSpec<N>,
    frames_i: &[Frame<N>],
    lattice: &Lattice,
    tol: f64,
) -> Result<LimitMetric<N>> {
    if spec.is_flat() {
        return Ok(LimitMetric {
            field: None,
            increments: vec![0.0; frames_i.len().saturating_sub(1).min(2)],
            status: MetricStatus::Converged,
        });
    }
    let tail = &frames_i[frames_i.len().saturating_sub(3)..];
    let fields: Vec<ChartMetric<N>> = tail
        .iter()
        .map(|f| metric_field(spec, f, lattice))
        .collect::<Result<_>>()?;
    let active = lattice.active_indices();
    let increments: Vec<f64> = fields
        .windows(2)
        .map(|w| {
            active
                .iter()
                .map(|&i| (w[0].metric[i] - w[1].metric[i]).abs().max())
                .fold(0.0, f64::max)
        })
        .collect();
    let status = if increments.last().is_some_and(|&d| d >= tol) {
        MetricStatus::NotCauchy
    } else {
        MetricStatus::Converged
    };
    Ok(LimitMetric {
        field: fields.into_iter().last(),
        increments,
        status,
    })
}

/// The manifold at infinity: charts `φ_i` on `Ω_ρ` glued by the limit
/// transition maps, represented by final-sample frames.
#[derive(Debug, Clone)]
pub struct InfinityAtlas<const N: usize> {
    pub lattice: Lattice,
    /// `y_{K;i}` at the final scheduled `k`.
    pub centers: Vec<Point<N>>,
    pub frames: Vec<Frame<N>>,
    pub gluing: GluingData,
    pub metrics: Vec<LimitMetric<N>>,
    /// Partition of unity on `M_∞` per chart:
    /// `χ_i(ξ) = b(|ξ|/ρ) / Σ_j b(|ψ_ji(ξ)|/ρ)`.
    pub chi: Vec<Vec<f64>>,
}

impl<const N: usize> InfinityAtlas<N> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rho(&self) -> f64 {
        self.lattice.radius
    }

    /// Exact limit transition `ψ_ij(ξ)` from the final-sample charts.
    pub fn psi(&self, spec: &ManifoldSpec<N>, i: usize, j: usize, xi: &Point<N>) -> Result<Option<Point<N>>> {
        if i == j {
            return Ok(Some(*xi));
        }
        if xi.norm() >= spec.chart_radius() {
            return Ok(None);
        }
        compose_charts(spec, &self.frames[i], &self.frames[j], xi)
    }

    /// `g^{(i)}` at an arbitrary `ξ`.
    pub fn metric_at(&self, spec: &ManifoldSpec<N>, i: usize, xi: &Point<N>) -> Result<Mat<N>> {
        if spec.is_flat() {
            return Ok(Mat::<N>::identity());
        }
        let x = spec.exp_map(&self.frames[i], xi)?;
        pullback_metric(spec, &self.frames[i], xi, &x)
    }

    /// `g^{(i)}` at lattice entry `idx`.
    pub fn metric_field(&self, i: usize, idx: usize) -> Mat<N> {
        self.metrics[i]
            .field
            .as_ref()
            .map_or(Mat::<N>::identity(), |m| m.metric[idx])
    }

    pub fn sqrt_det(&self, i: usize, idx: usize) -> f64 {
        self.metrics[i].field.as_ref().map_or(1.0, |m| m.sqrt_det[idx])
    }

    /// Charts glued to `i` through a nonempty overlap.
    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        self.gluing
            .overlap_k()
            .into_iter()
            .filter(|&(a, _)| a == i)
            .map(|(_, b)| b)
            .collect()
    }
}

/// Builds the atlas for a trailing system: gluing data, limit metrics and
/// the partition of unity on `M_∞`.
pub fn build_atlas<const N: usize>(
    spec: &ManifoldSpec<N>,
    disc: &Discretization<N>,
    trailing: &TrailingSystem,
    chart_lattice: &Lattice,
    cfg: &AtlasConfig,
) -> Result<InfinityAtlas<N>> {
    let frames = trailing_frames(spec, disc, trailing, cfg.frames)?;
    let gluing = build_gluing(spec, &frames, chart_lattice, cfg)?;
    let last = frames.last().cloned().unwrap_or_default();
    let charts = last.len();
    let metrics: Vec<LimitMetric<N>> = (0..charts)
        .into_par_iter()
        .map(|i| {
            let fi: Vec<Frame<N>> = frames.iter().map(|fs| fs[i]).collect();
            limit_metric(spec, &fi, chart_lattice, cfg.tol_c2)
        })
        .collect::<Result<_>>()?;
    let mut atlas = InfinityAtlas {
        lattice: *chart_lattice,
        centers: last.iter().map(|f| f.base_point).collect(),
        frames: last,
        gluing,
        metrics,
        chi: Vec::new(),
    };
    atlas.chi = atlas_partition(spec, &atlas)?;
    Ok(atlas)
}

fn atlas_partition<const N: usize>(spec: &ManifoldSpec<N>, atlas: &InfinityAtlas<N>) -> Result<Vec<Vec<f64>>> {
    let rho = atlas.rho();
    let lat = atlas.lattice;
    (0..atlas.len())
        .into_par_iter()
        .map(|i| {
            let nbrs = atlas.neighbours(i);
            let mut chi = vec![0.0; lat.len()];
            for idx in lat.active_indices() {
                let xi = lat.point::<N>(idx);
                let own = bump(xi.norm() / rho);
                if own == 0.0 {
                    continue;
                }
                let mut total = own;
                for &j in &nbrs {
                    if let Some(eta) = atlas.psi(spec, j, i, &xi)? {
                        total += bump(eta.norm() / rho);
                    }
                }
                chi[idx] = own / total;
            }
            Ok(chi)
        })
        .collect()
}

/// Sup-norm residuals of the atlas compatibility conditions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AtlasQuality {
    pub charts: usize,
    pub converged_pairs: usize,
    pub mask_unstable_pairs: usize,
    pub not_cauchy_pairs: usize,
    pub k_pairs: usize,
    pub overlap_pairs: usize,
    /// Largest final C² increment over pairs in `𝒦`.
    pub max_final_increment: f64,
    /// Largest discrete C² norm of a limit transition in `𝒦`.
    pub max_transition_c2: f64,
    pub identity_residual: f64,
    pub inverse_residual: f64,
    pub cocycle_triples: usize,
    pub cocycle_residual: f64,
    pub metric_residual: f64,
    /// `sup |g^{(i)} − I|` over all charts.
    pub flat_limit_residual: f64,
    pub metric_not_cauchy_charts: usize,
    pub min_eigenvalue: f64,
    pub max_condition: f64,
}

/// Checks `ψ_ii = id`, `ψ_ji ∘ ψ_ij = id` on `Ω_ij`, the cocycle relation on
/// triple overlaps, and `g^{(j)} = (dψ_ij)ᵀ g^{(i)}∘ψ_ij (dψ_ij)` on overlaps.
pub fn verify_atlas<const N: usize>(
    spec: &ManifoldSpec<N>,
    atlas: &InfinityAtlas<N>,
    max_triples: usize,
) -> Result<AtlasQuality> {
    let lat = atlas.lattice;
    let pairs = &atlas.gluing.pairs;
    let overlap = atlas.gluing.overlap_k();
    let count = |s: TransitionStatus| pairs.values().filter(|p| p.limit.status == s).count();
    let in_k: Vec<&PairTransition> = pairs.values().filter(|p| p.in_k).collect();

    let identity_residual = lat
        .active_indices()
        .iter()
        .take(1)
        .map(|&idx| {
            let xi = lat.point::<N>(idx);
            atlas.psi(spec, 0, 0, &xi).map(|v| v.map_or(f64::INFINITY, |v| (v - xi).norm()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let inverse_residual = overlap
        .par_iter()
        .map(|&(i, j)| {
            let mut worst: f64 = 0.0;
            for &idx in &atlas.gluing.pairs[&(i, j)].omega {
                let xi = lat.point::<N>(idx);
                let back = match atlas.psi(spec, j, i, &xi)? {
                    Some(eta) => atlas.psi(spec, i, j, &eta)?,
                    None => None,
                };
                worst = worst.max(back.map_or(f64::INFINITY, |b| (b - xi).norm()));
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    // Triples with pairwise overlaps, closest first.
    let mut triples = Vec::new();
    for &(i, j) in &overlap {
        for &(j2, l) in overlap.range((j, 0)..(j + 1, 0)) {
            debug_assert_eq!(j2, j);
            if l != i && overlap.contains(&(i, l)) {
                let c = &atlas.centers;
                let spread = (c[i] - c[j]).norm() + (c[j] - c[l]).norm() + (c[i] - c[l]).norm();
                triples.push((spread, i, j, l));
            }
        }
    }
    triples.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    triples.truncate(max_triples);
    let inner = lat.radius - lat.spacing;
    let cocycle_residual = triples
        .par_iter()
        .map(|&(_, i, j, l)| {
            let mut worst: f64 = 0.0;
            for &idx in &atlas.gluing.pairs[&(l, j)].omega {
                let xi = lat.point::<N>(idx);
                let (Some(a), Some(b)) = (atlas.psi(spec, j, l, &xi)?, atlas.psi(spec, i, l, &xi)?) else {
                    continue;
                };
                if a.norm() > inner || b.norm() > inner {
                    continue;
                }
                if let Some(c) = atlas.psi(spec, i, j, &a)? {
                    worst = worst.max((c - b).norm());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let metric_residual = overlap
        .par_iter()
        .map(|&(j, i)| {
            // Ω_ji lives in chart j and is where ψ_ij lands inside Ω_ρ.
            let mut worst: f64 = 0.0;
            for &idx in &atlas.gluing.pairs[&(j, i)].omega {
                let xi = lat.point::<N>(idx);
                let Some(eta) = atlas.psi(spec, i, j, &xi)? else {
                    continue;
                };
                let mut d = Mat::<N>::zeros();
                for a in 0..N {
                    let mut p = xi;
                    let mut m = xi;
                    p[a] += CHART_FD_STEP;
                    m[a] -= CHART_FD_STEP;
                    let (Some(fp), Some(fm)) = (atlas.psi(spec, i, j, &p)?, atlas.psi(spec, i, j, &m)?) else {
                        continue;
                    };
                    d.set_column(a, &((fp - fm) / (2.0 * CHART_FD_STEP)));
                }
                let pulled = d.transpose() * atlas.metric_at(spec, i, &eta)? * d;
                worst = worst.max((atlas.metric_field(j, idx) - pulled).abs().max());
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut flat_limit_residual: f64 = 0.0;
    let mut min_eigenvalue = f64::INFINITY;
    let mut max_condition: f64 = 1.0;
    for m in &atlas.metrics {
        match &m.field {
            None => min_eigenvalue = min_eigenvalue.min(1.0),
            Some(f) => {
                for idx in lat.active_indices() {
                    let g = f.metric[idx];
                    flat_limit_residual = flat_limit_residual.max((g - Mat::<N>::identity()).abs().max());
                    let eig = DMatrix::from_fn(N, N, |r, c| g[(r, c)]).symmetric_eigenvalues();
                    let (lo, hi) = (eig.min(), eig.max());
                    min_eigenvalue = min_eigenvalue.min(lo);
                    max_condition = max_condition.max(hi / lo);
                }
            }
        }
    }
    if atlas.metrics.is_empty() {
        min_eigenvalue = 1.0;
    }

    Ok(AtlasQuality {
        charts: atlas.len(),
        converged_pairs: count(TransitionStatus::Converged),
        mask_unstable_pairs: count(TransitionStatus::MaskUnstable),
        not_cauchy_pairs: count(TransitionStatus::NotCauchy),
        k_pairs: in_k.len(),
        overlap_pairs: overlap.len(),
        max_final_increment: in_k
            .iter()
            .filter_map(|p| p.limit.increments.last().copied())
            .fold(0.0, f64::max),
        max_transition_c2: in_k.iter().map(|p| p.c2_norm).fold(0.0, f64::max),
        identity_residual,
        inverse_residual,
        cocycle_triples: triples.len(),
        cocycle_residual,
        metric_residual,
        flat_limit_residual,
        metric_not_cauchy_charts: atlas
            .metrics
            .iter()
            .filter(|m| m.status == MetricStatus::NotCauchy)
            .count(),
        min_eigenvalue,
        max_condition,
    })
}

/// `∫_{M_∞} |w|^p dv` and `‖w‖²_{H^{1,2}(M_∞)}` from chart values `w∘φ_i`.
pub fn norms_on_infinity<const N: usize>(
    atlas: &InfinityAtlas<N>,
    chart_values: &[GridFunction],
    p: f64,
) -> Result<NormsOnM> {
    check_exponent(N, p)?;
    if chart_values.len() != atlas.len() {
        return Err(Error::IncompatibleProfile(format!(
            "{} chart values for {} charts",
            chart_values.len(),
            atlas.len()
        )));
    }
    let lat = atlas.lattice;
    let dv = lat.cell_volume();
    let mut out = NormsOnM {
        lp_power: 0.0,
        h12_squared: 0.0,
    };
    for (i, w) in chart_values.iter().enumerate() {
        if !w.lattice.matches(&lat) {
            return Err(Error::IncompatibleProfile(format!("chart {i} lattice differs from the atlas")));
        }
        if w.is_zero() {
            continue;
        }
        let metric = atlas.metrics[i].field.as_ref();
        for (idx, v) in w.active_values() {
            let chi = atlas.chi[i][idx];
            if chi == 0.0 {
                continue;
            }
            let wgt = chi * atlas.sqrt_det(i, idx) * dv;
            out.lp_power += v.abs().powf(p) * wgt;
            let mut g = Point::<N>::zeros();
            for a in 0..N {
                g[a] = w.partial(idx, a);
            }
            let g2 = match metric {
                Some(m) => g.dot(&(m.inverse[idx] * g)),
                None => g.norm_squared(),
            };
            out.h12_squared += (v * v + g2) * wgt;
        }
    }
    Ok(out)
}

/// Serializable summary; grid payloads are referenced by the strings the
/// `store` callback returns.
#[derive(Debug, Clone, Serialize)]
pub struct AtlasSummary {
    pub i_max: usize,
    pub rho: f64,
    pub spacing: f64,
    pub transition_spacing: f64,
    pub centers: Vec<Vec<f64>>,
    pub k_set: Vec<[usize; 2]>,
    pub overlap_k: Vec<[usize; 2]>,
    pub transitions: Vec<TransitionSummary>,
    pub metrics: Vec<MetricSummary>,
    pub quality: AtlasQuality,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitionSummary {
    pub i: usize,
    pub j: usize,
    pub status: TransitionStatus,
    pub increments: Vec<f64>,
    pub c2_norm: f64,
    pub omega_size: usize,
    pub psi: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSummary {
    pub chart: usize,
    pub status: MetricStatus,
    pub increments: Vec<f64>,
    /// Payload reference, or `"identity"`.
    pub metric: String,
}

impl<const N: usize> InfinityAtlas<N> {
    /// Summary for pairs in `𝒦` and every chart metric.
    pub fn summary(
        &self,
        quality: AtlasQuality,
        mut store: impl FnMut(&str, &[u8]) -> Result<String>,
    ) -> Result<AtlasSummary> {
        let mut transitions = Vec::new();
        for p in self.gluing.pairs.values().filter(|p| p.in_k) {
            let psi = store(&p.limit.map.content_hash(), &p.limit.map.to_bytes())?;
            transitions.push(TransitionSummary {
                i: p.i,
                j: p.j,
                status: p.limit.status,
                increments: p.limit.increments.clone(),
                c2_norm: p.c2_norm,
                omega_size: p.omega.len(),
                psi,
            });
        }
        let mut metrics = Vec::new();
        for (i, m) in self.metrics.iter().enumerate() {
            let metric = match &m.field {
                None => "identity".to_string(),
                Some(f) => {
                    let mut bytes = Vec::new();
                    for r in 0..N {
                        for c in r..N {
                            let comp = GridFunction {
                                lattice: self.lattice,
                                values: (0..self.lattice.len())
                                    .map(|idx| {
                                        if self.lattice.is_active(idx) {
                                            f.metric[idx][(r, c)]
                                        } else {
                                            f64::NAN
                                        }
                                    })
                                    .collect(),
                            };
                            bytes.extend(comp.to_bytes());
                        }
                    }
                    store(&crate::lattice::hex_digest(&bytes), &bytes)?
                }
            };
            metrics.push(MetricSummary {
                chart: i,
                status: m.status,
                increments: m.increments.clone(),
                metric,
            });
        }
        let tl = self
            .gluing
            .pairs
            .values()
            .next()
            .map_or(0.0, |p| p.limit.map.lattice.spacing);
        Ok(AtlasSummary {
            i_max: self.len().saturating_sub(1),
            rho: self.rho(),
            spacing: self.lattice.spacing,
            transition_spacing: tl,
            centers: self.centers.iter().map(|c| c.as_slice().to_vec()).collect(),
            k_set: self.gluing.k_set().into_iter().map(|(a, b)| [a, b]).collect(),
            overlap_k: self.gluing.overlap_k().into_iter().map(|(a, b)| [a, b]).collect(),
            transitions,
            metrics,
            quality,
        })
    }
}
