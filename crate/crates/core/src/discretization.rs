//! ε-separated point sets `Y` over bounded working regions, and trailing
//! systems ordering `Y` by distance from a moving center.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{fmt_point, Error, Result};
use crate::geometry::{Frame, ManifoldSpec, Point};

/// Relative slack on the separation test, absorbing round-off in distances
/// that are exact multiples of the ambient spacing.
const SEPARATION_SLACK: f64 = 1e-12;

/// Working subset of coordinate space: a closed box or an open ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Box { min: Vec<f64>, max: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Box { min, max } => x
                .iter()
                .zip(min.iter().zip(max))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi),
            Region::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                d2 < radius * radius
            }
        }
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Box { min, max } => (min.clone(), max.clone()),
            Region::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box { min, .. } => min.len(),
            Region::Ball { center, .. } => center.len(),
        }
    }
}

/// Row-major walk over `min + h·i` inside the bounding box of `region`.
fn ambient_points<const N: usize>(region: &Region, h: f64) -> Vec<Point<N>> {
    let (lo, hi) = region.bounds();
    let counts: Vec<usize> = (0..N)
        .map(|a| ((hi[a] - lo[a]) / h * (1.0 + 1e-12)).floor() as usize + 1)
        .collect();
    let total: usize = counts.iter().product();
    let mut out = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut p = Point::<N>::zeros();
        for a in (0..N).rev() {
            let i = rem % counts[a];
            rem /= counts[a];
            p[a] = lo[a] + h * i as f64;
        }
        if region.contains(p.as_slice()) {
            out.push(p);
        }
    }
    out
}

/// Uniform bucket grid over coordinates.
#[derive(Debug, Clone, Default)]
struct BucketIndex {
    cell: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl BucketIndex {
    fn new(cell: f64) -> Self {
        BucketIndex {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, x: &[f64]) -> Vec<i64> {
        x.iter().map(|v| (v / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, x: &[f64], id: usize) {
        let k = self.key(x);
        self.buckets.entry(k).or_default().push(id);
    }

    /// Ids in buckets meeting the cube of half-width `r` around `x`, ascending.
    fn candidates(&self, x: &[f64], r: f64) -> Vec<usize> {
        let lo: Vec<i64> = x.iter().map(|v| ((v - r) / self.cell).floor() as i64).collect();
        let hi: Vec<i64> = x.iter().map(|v| ((v + r) / self.cell).floor() as i64).collect();
        let mut out = Vec::new();
        let mut key = lo.clone();
        'outer: loop {
            if let Some(ids) = self.buckets.get(&key) {
                out.extend_from_slice(ids);
            }
            for a in (0..key.len()).rev() {
                if key[a] < hi[a] {
                    key[a] += 1;
                    for b in a + 1..key.len() {
                        key[b] = lo[b];
                    }
                    continue 'outer;
                }
            }
            break;
        }
        out.sort_unstable();
        out
    }
}

/// Distance between two points of `M` when it is below `cutoff`; `None` when
/// a lower bound rules that out or `y` lies outside the injectivity ball.
pub(crate) fn near_distance<const N: usize>(
    spec: &ManifoldSpec<N>,
    frame: &Frame<N>,
    y: &Point<N>,
    cutoff: f64,
) -> Result<Option<f64>> {
    if let Some(d) = spec.closed_form_distance(&frame.base_point, y) {
        return Ok((d < spec.inj_radius).then_some(d));
    }
    if spec.distance_lower_bound(&frame.base_point, y) > cutoff {
        return Ok(None);
    }
    match spec.log_map(frame, y) {
        Ok(xi) => Ok(Some(xi.norm())),
        Err(Error::OutsideInjectivity { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct Discretization<const N: usize> {
    pub points: Vec<Point<N>>,
    /// Separation and covering radius `ρ̂`.
    pub epsilon: f64,
    pub rho: f64,
    pub region: Region,
    index: BucketIndex,
    coord_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct DiscretizationJson {
    epsilon: f64,
    rho: f64,
    points: Vec<Vec<f64>>,
    region: Region,
}

/// Worst covering distance seen on a test grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveringReport {
    pub test_points: usize,
    pub uncovered: usize,
    /// Max over test points of the distance to the nearest `y`.
    pub max_gap: f64,
}

impl<const N: usize> Discretization<N> {
    /// Wraps an explicit point list (no separation check).
    pub fn from_points(
        spec: &ManifoldSpec<N>,
        points: Vec<Point<N>>,
        epsilon: f64,
        rho: f64,
        region: Region,
    ) -> Self {
        let coord_scale = spec.coord_scale;
        let mut index = BucketIndex::new(epsilon / coord_scale);
        for (i, p) in points.iter().enumerate() {
            index.insert(p.as_slice(), i);
        }
        Discretization {
            points,
            epsilon,
            rho,
            region,
            index,
            coord_scale,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of points within coordinate distance `r` of `x`, ascending.
    pub fn within_coord(&self, x: &Point<N>, r: f64) -> Vec<usize> {
        self.index
            .candidates(x.as_slice(), r)
            .into_iter()
            .filter(|&i| (self.points[i] - x).norm() <= r)
            .collect()
    }

    /// Indices of points with geodesic distance `< r` from `x`, with distances.
    pub fn within(
        &self,
        spec: &ManifoldSpec<N>,
        x: &Point<N>,
        r: f64,
    ) -> Result<Vec<(usize, f64)>> {
        let cands = self.within_coord(x, r / self.coord_scale);
        if cands.is_empty() {
            return Ok(Vec::new());
        }
        let frame = Frame::gram_schmidt(spec, x)?;
        let mut out = Vec::new();
        for i in cands {
            if let Some(d) = near_distance(spec, &frame, &self.points[i], r)? {
                if d < r {
                    out.push((i, d));
                }
            }
        }
        Ok(out)
    }

    /// Index of the coordinate-nearest point (lowest index on ties).
    pub fn nearest(&self, x: &Point<N>) -> Option<usize> {
        let mut r = self.epsilon / self.coord_scale;
        loop {
            let c = self.within_coord(x, r);
            if let Some(best) = c.into_iter().min_by(|&a, &b| {
                (self.points[a] - x)
                    .norm()
                    .total_cmp(&(self.points[b] - x).norm())
                    .then(a.cmp(&b))
            }) {
                return Some(best);
            }
            if self.points.is_empty() {
                return None;
            }
            r *= 2.0;
        }
    }

    /// Index of a point equal to `x` up to round-off.
    pub fn index_of(&self, x: &Point<N>) -> Option<usize> {
        let tol = 1e-9 * x.norm().max(1.0);
        self.within_coord(x, tol).into_iter().next()
    }

    /// Minimum pairwise distance, by brute force over all pairs within `2ε`.
    pub fn min_separation(&self, spec: &ManifoldSpec<N>) -> Result<f64> {
        let mut best = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let frame = Frame::gram_schmidt(spec, p)?;
            for j in self.within_coord(p, 2.0 * self.epsilon / self.coord_scale) {
                if j <= i {
                    continue;
                }
                if let Some(d) = near_distance(spec, &frame, &self.points[j], best.min(2.0 * self.epsilon))? {
                    best = best.min(d);
                }
            }
        }
        Ok(best)
    }

    /// Checks that every test point of the region is within `ε` of `Y`.
    pub fn check_covering(&self, spec: &ManifoldSpec<N>, test_spacing: f64) -> Result<CoveringReport> {
        let tests: Vec<Point<N>> = ambient_points(&self.region, test_spacing)
            .into_iter()
            .filter(|p| spec.in_domain(p))
            .collect();
        let mut uncovered = 0;
        let mut max_gap: f64 = 0.0;
        for t in &tests {
            let near = self.within(spec, t, 2.0 * self.epsilon)?;
            let d = near.iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
            if d >= self.epsilon {
                uncovered += 1;
            }
            max_gap = max_gap.max(d);
        }
        Ok(CoveringReport {
            test_points: tests.len(),
            uncovered,
            max_gap,
        })
    }

    /// Max over test points of `#{y : d(test, y) < t·ε}`.
    pub fn covering_multiplicity(
        &self,
        spec: &ManifoldSpec<N>,
        t: f64,
        test_spacing: f64,
    ) -> Result<usize> {
        let mut best = 0;
        for p in ambient_points::<N>(&self.region, test_spacing) {
            if !spec.in_domain(&p) {
                continue;
            }
            best = best.max(self.within(spec, &p, t * self.epsilon)?.len());
        }
        Ok(best)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(DiscretizationJson {
            epsilon: self.epsilon,
            rho: self.rho,
            points: self.points.iter().map(|p| p.iter().copied().collect()).collect(),
            region: self.region.clone(),
        })
        .expect("plain data serializes")
    }

    pub fn from_json(spec: &ManifoldSpec<N>, v: &serde_json::Value) -> Result<Self> {
        let d: DiscretizationJson = serde_json::from_value(v.clone())?;
        let mut points = Vec::with_capacity(d.points.len());
        for p in &d.points {
            if p.len() != N {
                return Err(Error::Parse(format!(
                    "point of dimension {} in a {N}-dimensional discretization",
                    p.len()
                )));
            }
            points.push(Point::<N>::from_column_slice(p));
        }
        Ok(Self::from_points(spec, points, d.epsilon, d.rho, d.region))
    }
}

/// Greedy maximal packing: walk an ambient lattice of spacing `≤ ε/4`
/// (default `ε/4`) and keep each candidate at distance `≥ ε` from all kept
/// points. `rho` defaults to `ε/0.75`.
pub fn build_discretization<const N: usize>(
    spec: &ManifoldSpec<N>,
    region: &Region,
    epsilon: f64,
    rho: Option<f64>,
    ambient_spacing: Option<f64>,
) -> Result<Discretization<N>> {
    if !(epsilon > 0.0 && epsilon < spec.inj_radius) {
        return Err(Error::ConstraintViolation(format!(
            "epsilon must lie in (0, r(M)) = (0, {})",
            spec.inj_radius
        )));
    }
    if region.dim() != N {
        return Err(Error::ConstraintViolation(format!(
            "region has dimension {}, manifold has {N}",
            region.dim()
        )));
    }
    let limit = epsilon / 4.0;
    let h = ambient_spacing.unwrap_or(limit);
    if h > limit * (1.0 + 1e-12) {
        return Err(Error::RegionTooFine { spacing: h, limit });
    }
    let rho = rho.unwrap_or(epsilon / 0.75);
    let mut disc = Discretization::from_points(spec, Vec::new(), epsilon, rho, region.clone());
    let cut = epsilon * (1.0 - SEPARATION_SLACK);
    for cand in ambient_points::<N>(region, h) {
        if !spec.in_domain(&cand) {
            continue;
        }
        let near = disc.within_coord(&cand, epsilon / disc.coord_scale);
        let mut ok = true;
        if !near.is_empty() {
            let frame = Frame::gram_schmidt(spec, &cand)?;
            for j in near {
                if let Some(d) = near_distance(spec, &frame, &disc.points[j], cut)? {
                    if d < cut {
                        ok = false;
                        break;
                    }
                }
            }
        }
        if ok {
            let id = disc.points.len();
            disc.index.insert(cand.as_slice(), id);
            disc.points.push(cand);
        }
    }
    Ok(disc)
}

/// Per-`k` orderings `(y_{k;i})_{i ≤ I_max}` of `Y` by distance from `y_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrailingSystem {
    pub k_schedule: Vec<u32>,
    pub i_max: usize,
    /// Index of `y_k` in `Y`, per scheduled `k`.
    pub core: Vec<usize>,
    /// `orderings[s][i]` is the index of `y_{k_s;i}`.
    pub orderings: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

impl TrailingSystem {
    pub fn len(&self) -> usize {
        self.k_schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_schedule.is_empty()
    }

    /// Index into `Y` of `y_{k_s;i}`.
    pub fn point_index(&self, s: usize, i: usize) -> usize {
        self.orderings[s][i]
    }
}

/// Builds the trailing system for a core sequence given as points of `Y`.
/// Ties in distance keep the build order of `Y`.
pub fn trailing_system<const N: usize>(
    spec: &ManifoldSpec<N>,
    disc: &Discretization<N>,
    core_sequence: &[Point<N>],
    i_max: usize,
    k_schedule: &[u32],
) -> Result<TrailingSystem> {
    if core_sequence.len() != k_schedule.len() {
        return Err(Error::ConstraintViolation(
            "core sequence and k schedule differ in length".into(),
        ));
    }
    let need = i_max + 1;
    let mut core = Vec::new();
    let mut orderings = Vec::new();
    let mut distances = Vec::new();
    for y in core_sequence {
        let c = disc
            .index_of(y)
            .ok_or_else(|| Error::NotInDiscretization(fmt_point(y.as_slice())))?;
        let frame = Frame::gram_schmidt(spec, &disc.points[c])?;
        let mut reach = disc.epsilon * 2.0 * (need as f64).powf(1.0 / N as f64);
        let ranked = loop {
            let capped = reach.min(spec.inj_radius);
            let mut found: Vec<(f64, usize)> = Vec::new();
            for j in disc.within_coord(&disc.points[c], spec.coord_radius(capped)) {
                if let Some(d) = near_distance(spec, &frame, &disc.points[j], capped)? {
                    if d <= capped {
                        found.push((d, j));
                    }
                }
            }
            if found.len() >= need {
                break found;
            }
            if capped >= spec.inj_radius {
                return Err(Error::TrailingTooShort {
                    needed: need,
                    found: found.len(),
                });
            }
            reach *= 2.0;
        };
        let mut ranked = ranked;
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked.truncate(need);
        core.push(c);
        orderings.push(ranked.iter().map(|r| r.1).collect());
        distances.push(ranked.iter().map(|r| r.0).collect());
    }
    Ok(TrailingSystem {
        k_schedule: k_schedule.to_vec(),
        i_max,
        core,
        orderings,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn square(half: f64) -> Region {
        Region::Box {
            min: vec![-half, -half],
            max: vec![half, half],
        }
    }

    #[test]
    fn ball_region_of_radius_half_epsilon_gives_one_point() {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let region = Region::Ball {
            center: vec![0.3, -0.2],
            radius: 0.5,
        };
        let d = build_discretization(&spec, &region, 1.0, None, None).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d.rho - 1.0 / 0.75).abs() < 1e-15);
    }

    #[test]
    fn coarse_ambient_lattice_is_rejected() {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let r = build_discretization(&spec, &square(2.0), 1.0, None, Some(0.3));
        assert!(matches!(r, Err(Error::RegionTooFine { .. })));
    }

    #[test]
    fn separation_and_covering_on_a_small_square() {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let d = build_discretization(&spec, &square(3.0), 1.0, None, None).unwrap();
        let mut min = f64::INFINITY;
        for i in 0..d.len() {
            for j in i + 1..d.len() {
                min = min.min((d.points[i] - d.points[j]).norm());
            }
        }
        assert!(min >= 1.0 - 1e-12);
        assert!((d.min_separation(&spec).unwrap() - min).abs() < 1e-15);
        let cov = d.check_covering(&spec, 0.1).unwrap();
        assert_eq!(cov.uncovered, 0);
        assert!(cov.max_gap < 1.0);
    }

    #[test]
    fn multiplicity_is_monotone_and_single_point_is_one() {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let d = build_discretization(&spec, &square(2.0), 1.0, None, None).unwrap();
        let m: Vec<usize> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&t| d.covering_multiplicity(&spec, t, 0.25).unwrap())
            .collect();
        assert!(m[0] <= m[1] && m[1] <= m[2], "{m:?}");
        let one = Discretization::from_points(
            &spec,
            vec![Vector2::zeros()],
            1.0,
            1.2,
            Region::Ball {
                center: vec![0.0, 0.0],
                radius: 0.5,
            },
        );
        assert_eq!(one.covering_multiplicity(&spec, 1.0, 0.1).unwrap(), 1);
    }

    fn integer_lattice(spec: &ManifoldSpec<2>) -> Discretization<2> {
        let mut pts = Vec::new();
        for a in -12..=12 {
            for b in -6..=6 {
                pts.push(Vector2::new(a as f64, b as f64));
            }
        }
        Discretization::from_points(spec, pts, 1.0, 1.2, square(12.0))
    }

    #[test]
    fn trailing_order_on_the_integer_lattice() {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let d = integer_lattice(&spec);
        let ts = trailing_system(&spec, &d, &[Vector2::new(10.0, 0.0)], 4, &[10]).unwrap();
        let got: Vec<Vector2<f64>> = ts.orderings[0].iter().map(|&i| d.points[i]).collect();
        // Build order runs over the first axis, then the second: ties at
        // distance one come out as (9,0), (10,-1), (10,1), (11,0).
        let want = [(10.0, 0.0), (9.0, 0.0), (10.0, -1.0), (10.0, 1.0), (11.0, 0.0)];
        for (g, w) in got.iter().zip(want) {
            assert_eq!((g.x, g.y), w);
        }
    }

    #[test]
    fn trailing_with_zero_order_is_the_center() {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let d = integer_lattice(&spec);
        let ts = trailing_system(&spec, &d, &[Vector2::new(2.0, 1.0)], 0, &[1]).unwrap();
        assert_eq!(ts.orderings[0].len(), 1);
        assert_eq!(d.points[ts.orderings[0][0]], Vector2::new(2.0, 1.0));
    }

    #[test]
    fn points_outside_y_are_rejected() {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let d = integer_lattice(&spec);
        let r = trailing_system(&spec, &d, &[Vector2::new(0.5, 0.0)], 3, &[1]);
        assert!(matches!(r, Err(Error::NotInDiscretization(_))));
    }

    #[test]
    fn json_roundtrip_preserves_points_bitwise() {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let d = build_discretization(&spec, &square(1.7), 0.7, None, None).unwrap();
        let text = crate::report::to_json_string(&d.to_json());
        let back =
            Discretization::<2>::from_json(&spec, &serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.points, d.points);
        assert_eq!(back.epsilon.to_bits(), d.epsilon.to_bits());
    }
}
