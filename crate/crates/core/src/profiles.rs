//! Local and global profiles along trailing systems, elementary
//! concentrations, and the greedy profile decomposition.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atlas::{
    build_atlas, norms_on_infinity, trailing_frames, verify_atlas, AtlasConfig, AtlasQuality, InfinityAtlas,
};
use crate::charts::{Ball, ManifoldFunction, Workspace};
use crate::discretization::{trailing_system, TrailingSystem};
use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, Frame, ManifoldSpec, Point};
use crate::lattice::GridFunction;
use crate::spotlight::{
    chart_stats, check_exponent, pullback, weak_limit, AtK, LimitStatus, NormsOnM,
    SequenceFamily, TestBank,
};

/// Local profiles `w_i`, `i ≤ I_max`, relative to one trailing system.
#[derive(Debug, Clone)]
pub struct ProfileArray {
    /// Zero grids where the status is not `Converged`.
    pub entries: Vec<GridFunction>,
    pub statuses: Vec<LimitStatus>,
    pub max_increments: Vec<f64>,
    /// Unsmoothed pullbacks at the final scheduled `k`.
    pub final_samples: Vec<GridFunction>,
}

impl ProfileArray {
    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(GridFunction::is_zero)
    }
}

/// Pulls `u_k` back through `e_{y_{k;i}}` along the schedule and detects the
/// weak limit of each chart sequence.
pub fn extract_local_profiles<const N: usize, F: SequenceFamily<N> + ?Sized>(
    ws: &Workspace<N>,
    family: &F,
    trailing: &TrailingSystem,
    frames: &[Vec<Frame<N>>],
    atlas: &InfinityAtlas<N>,
    bank: &TestBank,
    tol_w: f64,
) -> Result<ProfileArray> {
    let charts = trailing.i_max + 1;
    let results: Vec<(GridFunction, LimitStatus, f64, GridFunction)> = (0..charts)
        .into_par_iter()
        .map(|i| {
            let seq = trailing
                .k_schedule
                .iter()
                .enumerate()
                .map(|(s, &k)| pullback(&ws.spec, &frames[s][i], &AtK { family, k }, &ws.lattice))
                .collect::<Result<Vec<_>>>()?;
            let wl = weak_limit(&seq, bank, atlas.metrics[i].field.as_ref(), tol_w)?;
            let entry = match wl.status {
                LimitStatus::Converged => wl.limit,
                _ => GridFunction::zeros(ws.lattice),
            };
            let last = seq.into_iter().last().expect("nonempty schedule");
            Ok((entry, wl.status, wl.max_increment, last))
        })
        .collect::<Result<_>>()?;
    let mut pa = ProfileArray {
        entries: Vec::new(),
        statuses: Vec::new(),
        max_increments: Vec::new(),
        final_samples: Vec::new(),
    };
    for (e, s, m, f) in results {
        pa.entries.push(e);
        pa.statuses.push(s);
        pa.max_increments.push(m);
        pa.final_samples.push(f);
    }
    Ok(pa)
}

/// A function on `M_∞` given by its chart values `w∘φ_i`.
#[derive(Debug, Clone)]
pub struct GlobalProfile {
    pub chart_values: Vec<GridFunction>,
    pub compat_residual: f64,
}

/// `sup |w_j − w_i∘ψ_ij|` over `Ω_ji` for all glued pairs, with `w_i`
/// interpolated multilinearly. Entries within the smoothing radius `2h` of
/// either chart rim are skipped: the smoothed limit is one-sided there.
pub fn compat_residual<const N: usize>(
    spec: &ManifoldSpec<N>,
    atlas: &InfinityAtlas<N>,
    values: &[GridFunction],
) -> Result<f64> {
    let lat = atlas.lattice;
    let inner = (lat.radius - 2.0 * lat.spacing) * (1.0 + 1e-12);
    let pairs: Vec<(usize, usize)> = atlas.gluing.overlap_k().into_iter().collect();
    let worst = pairs
        .par_iter()
        .map(|&(j, i)| {
            if values[i].is_zero() && values[j].is_zero() {
                return Ok(0.0);
            }
            let mut worst: f64 = 0.0;
            for &idx in &atlas.gluing.pairs[&(j, i)].omega {
                let xi = lat.point::<N>(idx);
                if xi.norm() > inner {
                    continue;
                }
                let Some(eta) = atlas.psi(spec, i, j, &xi)? else {
                    continue;
                };
                if eta.norm() > inner {
                    continue;
                }
                if let Some(wi) = values[i].interpolate_cubic(eta.as_slice()) {
                    worst = worst.max((values[j].values[idx] - wi).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// Glues local profiles into a global profile, checking `w∘φ_i = w_i` on
/// every overlap.
pub fn assemble_global<const N: usize>(
    spec: &ManifoldSpec<N>,
    pa: &ProfileArray,
    atlas: &InfinityAtlas<N>,
    tol_profile: f64,
) -> Result<GlobalProfile> {
    if pa.entries.len() != atlas.len() {
        return Err(Error::IncompatibleProfile(format!(
            "{} local profiles for {} charts",
            pa.entries.len(),
            atlas.len()
        )));
    }
    let residual = compat_residual(spec, atlas, &pa.entries)?;
    if residual >= tol_profile {
        return Err(Error::IncompatibleProfiles {
            residual,
            tolerance: tol_profile,
        });
    }
    Ok(GlobalProfile {
        chart_values: pa.entries.clone(),
        compat_residual: residual,
    })
}

/// `W_k = Σ_i χ_{y_{k;i}} · w∘φ_i∘e_{y_{k;i}}^{-1}` for the scheduled `k`.
pub struct ElementaryConcentration<'a, const N: usize> {
    ws: &'a Workspace<N>,
    trailing: &'a TrailingSystem,
    frames: &'a [Vec<Frame<N>>],
    values: &'a [GridFunction],
    step_of: BTreeMap<u32, usize>,
    /// Per step: index in `Y` → trailing position `i` (nonzero profiles only).
    position: Vec<HashMap<usize, usize>>,
}

impl<'a, const N: usize> ElementaryConcentration<'a, N> {
    pub fn new(
        ws: &'a Workspace<N>,
        trailing: &'a TrailingSystem,
        frames: &'a [Vec<Frame<N>>],
        gp: &'a GlobalProfile,
    ) -> Self {
        let values = &gp.chart_values[..];
        let step_of = trailing.k_schedule.iter().enumerate().map(|(s, &k)| (k, s)).collect();
        let position = trailing
            .orderings
            .iter()
            .map(|ord| {
                ord.iter()
                    .enumerate()
                    .filter(|(i, _)| !values[*i].is_zero())
                    .map(|(i, &y)| (y, i))
                    .collect()
            })
            .collect();
        ElementaryConcentration {
            ws,
            trailing,
            frames,
            values,
            step_of,
            position,
        }
    }

    /// `W_k(x)` at schedule step `s`; terms visited in `order`.
    fn eval_terms(&self, s: usize, x: &Point<N>, reverse: bool) -> Result<f64> {
        if self.position[s].is_empty() {
            return Ok(0.0);
        }
        let mut weights = match self.ws.partition_weights(x) {
            Ok(w) => w,
            Err(Error::CoveringGap { .. }) => return Ok(0.0),
            Err(e) => return Err(e),
        };
        if reverse {
            weights.reverse();
        }
        let rho = self.ws.rho();
        let mut acc = 0.0;
        for (y, chi) in weights {
            let Some(&i) = self.position[s].get(&y) else {
                continue;
            };
            let xi = self.ws.spec.log_map(&self.frames[s][i], x)?;
            if xi.norm() >= rho {
                continue;
            }
            if let Some(v) = self.values[i].interpolate_cubic(xi.as_slice()) {
                acc += chi * v;
            }
        }
        Ok(acc)
    }

    pub fn eval_step(&self, s: usize, x: &Point<N>) -> Result<f64> {
        self.eval_terms(s, x, false)
    }

    /// Same sum with the partition terms visited in reverse order.
    pub fn eval_step_reversed(&self, s: usize, x: &Point<N>) -> Result<f64> {
        self.eval_terms(s, x, true)
    }

    fn support_step(&self, s: usize) -> Vec<Ball<N>> {
        let r = self.ws.spec.coord_radius(self.ws.rho());
        let mut ys: Vec<usize> = self.position[s].keys().copied().collect();
        ys.sort_unstable();
        ys.into_iter()
            .map(|y| Ball {
                center: self.ws.disc.points[y],
                radius: r,
            })
            .collect()
    }

    pub fn trailing(&self) -> &TrailingSystem {
        self.trailing
    }
}

impl<const N: usize> SequenceFamily<N> for ElementaryConcentration<'_, N> {
    fn eval(&self, k: u32, x: &Point<N>) -> f64 {
        match self.step_of.get(&k) {
            Some(&s) => self.eval_step(s, x).unwrap_or(f64::NAN),
            None => f64::NAN,
        }
    }

    fn support(&self, k: u32) -> Option<Vec<Ball<N>>> {
        Some(self.step_of.get(&k).map_or_else(Vec::new, |&s| self.support_step(s)))
    }
}

/// The weak limit `w^{(0)}` as chart values on a fixed cover, blended with
/// the partition of unity on `M`.
pub struct ChartField<'a, const N: usize> {
    ws: &'a Workspace<N>,
    pub charts: BTreeMap<usize, GridFunction>,
}

impl<const N: usize> ChartField<'_, N> {
    pub fn is_zero(&self) -> bool {
        self.charts.is_empty()
    }

    /// `Σ_y ∫ χ_y (|w|^p, |w|² + |∇w|²) dv` from the chart values.
    pub fn norms(&self, p: f64) -> Result<NormsOnM> {
        let dv = self.ws.lattice.cell_volume();
        let mut out = NormsOnM {
            lp_power: 0.0,
            h12_squared: 0.0,
        };
        for (&y, w) in &self.charts {
            let chart = self.ws.chart(y)?;
            let metric = chart.metric();
            for (idx, v) in w.active_values() {
                let chi = chart.chi[idx];
                if chi == 0.0 {
                    continue;
                }
                let wgt = chi * chart.sqrt_det(idx) * dv;
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

    fn eval_at(&self, x: &Point<N>) -> Result<f64> {
        if self.charts.is_empty() {
            return Ok(0.0);
        }
        let weights = match self.ws.partition_weights(x) {
            Ok(w) => w,
            Err(Error::CoveringGap { .. }) => return Ok(0.0),
            Err(e) => return Err(e),
        };
        let mut acc = 0.0;
        for (y, chi) in weights {
            let Some(w) = self.charts.get(&y) else {
                continue;
            };
            let frame = self.ws.chart(y)?.frame;
            let xi = self.ws.spec.log_map(&frame, x)?;
            if let Some(v) = w.interpolate_cubic(xi.as_slice()) {
                acc += chi * v;
            }
        }
        Ok(acc)
    }
}

impl<const N: usize> ManifoldFunction<N> for ChartField<'_, N> {
    fn eval(&self, x: &Point<N>) -> f64 {
        self.eval_at(x).unwrap_or(f64::NAN)
    }

    fn support(&self) -> Option<Vec<Ball<N>>> {
        let r = self.ws.spec.coord_radius(self.ws.rho());
        Some(
            self.charts
                .keys()
                .map(|&y| Ball {
                    center: self.ws.disc.points[y],
                    radius: r,
                })
                .collect(),
        )
    }
}

/// Counts of chart statuses in the estimate of `w^{(0)}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeakLimitSummary {
    pub charts: usize,
    pub converged: usize,
    pub zero: usize,
    pub undetermined: usize,
    pub lp_power: f64,
    pub h12_squared: f64,
}

/// Estimates `w^{(0)}` from stationary spotlights on every chart that meets
/// the support of some `u_k`.
pub fn stationary_weak_limit<'a, const N: usize, F: SequenceFamily<N> + ?Sized>(
    ws: &'a Workspace<N>,
    family: &F,
    schedule: &[u32],
    bank: &TestBank,
    tol_w: f64,
    p: f64,
) -> Result<(ChartField<'a, N>, WeakLimitSummary)> {
    let mut cover = BTreeSet::new();
    for &k in schedule {
        cover.extend(ws.charts_meeting(family.support(k).as_deref()));
    }
    let cover: Vec<usize> = cover.into_iter().collect();
    let limits: Vec<(usize, LimitStatus, GridFunction)> = cover
        .par_iter()
        .map(|&y| {
            let chart = ws.chart(y)?;
            let seq = schedule
                .iter()
                .map(|&k| ws.pull_back(y, &AtK { family, k }))
                .collect::<Result<Vec<_>>>()?;
            let wl = weak_limit(&seq, bank, chart.metric(), tol_w)?;
            Ok((y, wl.status, wl.limit))
        })
        .collect::<Result<_>>()?;
    let mut summary = WeakLimitSummary {
        charts: cover.len(),
        ..Default::default()
    };
    let mut charts = BTreeMap::new();
    for (y, status, limit) in limits {
        match status {
            LimitStatus::Converged => {
                summary.converged += 1;
                if !limit.is_zero() {
                    charts.insert(y, limit);
                }
            }
            LimitStatus::Zero => summary.zero += 1,
            LimitStatus::Undetermined => summary.undetermined += 1,
        }
    }
    let field = ChartField { ws, charts };
    let norms = field.norms(p)?;
    summary.lp_power = norms.lp_power;
    summary.h12_squared = norms.h12_squared;
    Ok((field, summary))
}

/// `u_k − w^{(0)} − Σ_n W_k^{(n)}`.
pub struct Residual<'a, const N: usize, F: ?Sized> {
    pub family: &'a F,
    pub w0: &'a ChartField<'a, N>,
    pub branches: Vec<ElementaryConcentration<'a, N>>,
}

impl<const N: usize, F: SequenceFamily<N> + ?Sized> SequenceFamily<N> for Residual<'_, N, F> {
    fn eval(&self, k: u32, x: &Point<N>) -> f64 {
        let mut v = self.family.eval(k, x) - self.w0.eval(x);
        for b in &self.branches {
            v -= b.eval(k, x);
        }
        v
    }

    fn support(&self, k: u32) -> Option<Vec<Ball<N>>> {
        let mut balls = self.family.support(k)?;
        balls.extend(self.w0.support().unwrap_or_default());
        for b in &self.branches {
            balls.extend(b.support(k).unwrap_or_default());
        }
        Some(balls)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    pub i_max: usize,
    pub n_max: usize,
    pub p: f64,
    pub tol_w: f64,
    /// `tol_mass = tol_mass_rel · ∫|u_{k_1}|^p`.
    pub tol_mass_rel: f64,
    pub tol_profile: f64,
    pub atlas: AtlasConfig,
}

/// Per-branch record in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub index: usize,
    /// `y_k^{(n)}` per scheduled `k`.
    pub centers: Vec<Vec<f64>>,
    pub center_indices: Vec<usize>,
    /// Largest local mass `∫_{B(y,ρ)} |r_k|^p` at the final `k`.
    pub captured_mass: f64,
    pub profile_statuses: Vec<LimitStatus>,
    pub compat_residual: f64,
    pub lp_power: f64,
    pub h12_squared: f64,
    /// Relative `L²(M_∞)` distance between the global profile and the final
    /// residual sample seen through the same charts.
    pub profile_error: f64,
    /// `‖r_K‖_p` after subtracting this branch.
    pub residual_after: f64,
    pub atlas: AtlasQuality,
}

/// A branch attempt that produced no usable profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncapturedBranch {
    pub centers: Vec<Vec<f64>>,
    pub captured_mass: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plancherel {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrezisLieb {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MassBelowTolerance,
    BranchLimitReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub p: f64,
    pub k_schedule: Vec<u32>,
    pub tol_mass: f64,
    pub stop_reason: StopReason,
    pub w0: WeakLimitSummary,
    pub branches: Vec<BranchReport>,
    pub uncaptured: Vec<UncapturedBranch>,
    /// `‖u_k‖_{L^p(M)}`.
    pub sequence_lp: Vec<f64>,
    /// `‖u_k‖²_{H^{1,2}(M)}`.
    pub sequence_h12_squared: Vec<f64>,
    pub remainder_curve: Vec<f64>,
    pub separation_curve: Vec<f64>,
    pub plancherel: Plancherel,
    pub brezis_lieb: BrezisLieb,
}

/// Data behind one branch, kept for output.
pub struct BranchData<const N: usize> {
    pub trailing: TrailingSystem,
    pub frames: Vec<Vec<Frame<N>>>,
    pub atlas: InfinityAtlas<N>,
    pub profile: GlobalProfile,
}

pub struct Decomposition<'a, const N: usize> {
    pub report: DecompositionReport,
    pub w0: ChartField<'a, N>,
    pub branches: Vec<BranchData<N>>,
}

fn greedy_centers<const N: usize, F: SequenceFamily<N> + ?Sized>(
    ws: &Workspace<N>,
    residual: &F,
    schedule: &[u32],
    excluded: &[BTreeSet<usize>],
    p: f64,
) -> Result<Vec<(usize, f64)>> {
    schedule
        .iter()
        .enumerate()
        .map(|(s, &k)| {
            let u = AtK { family: residual, k };
            let charts: Vec<usize> = ws
                .charts_meeting(u.support().as_deref())
                .into_iter()
                .filter(|y| !excluded[s].contains(y))
                .collect();
            let stats = chart_stats(ws, &u, p, &charts, false)?;
            Ok(stats
                .iter()
                .fold((usize::MAX, 0.0), |best, st| {
                    if st.local_mass > best.1 {
                        (st.index, st.local_mass)
                    } else {
                        best
                    }
                }))
        })
        .collect()
}

fn lp_power_along<const N: usize, F: SequenceFamily<N> + ?Sized>(
    ws: &Workspace<N>,
    family: &F,
    schedule: &[u32],
    p: f64,
) -> Result<Vec<f64>> {
    schedule
        .iter()
        .map(|&k| {
            let u = AtK { family, k };
            let charts = ws.charts_meeting(u.support().as_deref());
            Ok(chart_stats(ws, &u, p, &charts, false)?.iter().map(|s| s.lp_power).sum())
        })
        .collect()
}

/// Relative `L²(M_∞)` distance between chart values and reference samples.
fn relative_l2<const N: usize>(atlas: &InfinityAtlas<N>, values: &[GridFunction], reference: &[GridFunction]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..atlas.len() {
        for (idx, r) in reference[i].active_values() {
            let w = atlas.chi[i][idx] * atlas.sqrt_det(i, idx);
            let d = values[i].values[idx] - r;
            num += w * d * d;
            den += w * r * r;
        }
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Greedy profile decomposition: weak limit from stationary spotlights, then
/// repeated extraction of the strongest concentration along the schedule.
pub fn decompose<'a, const N: usize, F: SequenceFamily<N> + ?Sized>(
    ws: &'a Workspace<N>,
    family: &F,
    schedule: &[u32],
    bank: &TestBank,
    cfg: &DecomposeConfig,
) -> Result<Decomposition<'a, N>> {
    check_exponent(N, cfg.p)?;
    let p = cfg.p;
    let spec = &ws.spec;
    let mut seq_norms = Vec::new();
    for &k in schedule {
        let u = AtK { family, k };
        let charts = ws.charts_meeting(u.support().as_deref());
        let stats = chart_stats(ws, &u, p, &charts, true)?;
        seq_norms.push(NormsOnM {
            lp_power: stats.iter().map(|s| s.lp_power).sum(),
            h12_squared: stats.iter().map(|s| s.h12_squared).sum(),
        });
    }
    let tol_mass = cfg.tol_mass_rel * seq_norms[0].lp_power;
    let (w0, w0_summary) = stationary_weak_limit(ws, family, schedule, bank, cfg.tol_w, p)?;

    let mut data: Vec<BranchData<N>> = Vec::new();
    let mut reports: Vec<BranchReport> = Vec::new();
    let mut uncaptured = Vec::new();
    let mut excluded: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); schedule.len()];
    let mut stop_reason = StopReason::BranchLimitReached;
    let mut attempts = 0;
    loop {
        let residual = Residual {
            family,
            w0: &w0,
            branches: data
                .iter()
                .map(|b| ElementaryConcentration::new(ws, &b.trailing, &b.frames, &b.profile))
                .collect(),
        };
        let picks = greedy_centers(ws, &residual, schedule, &excluded, p)?;
        let final_mass = picks.last().map_or(0.0, |p| p.1);
        if final_mass < tol_mass || picks.iter().any(|p| p.0 == usize::MAX) {
            stop_reason = StopReason::MassBelowTolerance;
            break;
        }
        if attempts >= cfg.n_max {
            break;
        }
        attempts += 1;
        let core: Vec<Point<N>> = picks.iter().map(|&(y, _)| ws.disc.points[y]).collect();
        let centers: Vec<Vec<f64>> = core.iter().map(|c| c.as_slice().to_vec()).collect();
        let trailing = trailing_system(spec, &ws.disc, &core, cfg.i_max, schedule)?;
        for (s, ord) in trailing.orderings.iter().enumerate() {
            excluded[s].extend(ord.iter().copied());
        }
        let attempt = (|| -> Result<Option<(BranchData<N>, ProfileArray)>> {
            let frames = trailing_frames(spec, &ws.disc, &trailing, cfg.atlas.frames)?;
            let atlas = build_atlas(spec, &ws.disc, &trailing, &ws.lattice, &cfg.atlas)?;
            let pa = extract_local_profiles(ws, &residual, &trailing, &frames, &atlas, bank, cfg.tol_w)?;
            if pa.is_zero() {
                return Ok(None);
            }
            let profile = assemble_global(spec, &pa, &atlas, cfg.tol_profile)?;
            Ok(Some((
                BranchData {
                    trailing: trailing.clone(),
                    frames,
                    atlas,
                    profile,
                },
                pa,
            )))
        })();
        let (branch, pa) = match attempt {
            Ok(Some(b)) => b,
            Ok(None) => {
                uncaptured.push(UncapturedBranch {
                    centers,
                    captured_mass: final_mass,
                    reason: "all local profiles vanish or are undetermined".into(),
                });
                continue;
            }
            Err(e) => {
                uncaptured.push(UncapturedBranch {
                    centers,
                    captured_mass: final_mass,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let quality = verify_atlas(spec, &branch.atlas, cfg.atlas.max_triples)?;
        let norms = norms_on_infinity(&branch.atlas, &branch.profile.chart_values, p)?;
        let profile_error = relative_l2(&branch.atlas, &branch.profile.chart_values, &pa.final_samples);
        reports.push(BranchReport {
            index: reports.len() + 1,
            centers,
            center_indices: picks.iter().map(|p| p.0).collect(),
            captured_mass: final_mass,
            profile_statuses: pa.statuses.clone(),
            compat_residual: branch.profile.compat_residual,
            lp_power: norms.lp_power,
            h12_squared: norms.h12_squared,
            profile_error,
            residual_after: 0.0,
            atlas: quality,
        });
        data.push(branch);
        let residual = Residual {
            family,
            w0: &w0,
            branches: data
                .iter()
                .map(|b| ElementaryConcentration::new(ws, &b.trailing, &b.frames, &b.profile))
                .collect(),
        };
        let last = *schedule.last().expect("nonempty schedule");
        let after = lp_power_along(ws, &residual, &[last], p)?[0];
        if let Some(r) = reports.last_mut() {
            r.residual_after = after.powf(1.0 / p);
        }
    }

    let residual = Residual {
        family,
        w0: &w0,
        branches: data
            .iter()
            .map(|b| ElementaryConcentration::new(ws, &b.trailing, &b.frames, &b.profile))
            .collect(),
    };
    let remainder_curve: Vec<f64> = lp_power_along(ws, &residual, schedule, p)?
        .into_iter()
        .map(|v| v.powf(1.0 / p))
        .collect();
    let mut separation_curve = Vec::new();
    if data.len() >= 2 {
        for s in 0..schedule.len() {
            let mut best = f64::INFINITY;
            for a in 0..data.len() {
                for b in a + 1..data.len() {
                    let ya = ws.disc.points[data[a].trailing.core[s]];
                    let yb = ws.disc.points[data[b].trailing.core[s]];
                    best = best.min(geodesic_distance(spec, &ya, &yb, Some(&ws.disc.points))?);
                }
            }
            separation_curve.push(best);
        }
    }
    let report = DecompositionReport {
        p,
        k_schedule: schedule.to_vec(),
        tol_mass,
        stop_reason,
        sequence_lp: seq_norms.iter().map(|n| n.lp(p)).collect(),
        sequence_h12_squared: seq_norms.iter().map(|n| n.h12_squared).collect(),
        plancherel: check_plancherel(&w0_summary, &reports, &seq_norms),
        brezis_lieb: check_brezis_lieb(&w0_summary, &reports, &seq_norms),
        w0: w0_summary,
        branches: reports,
        uncaptured,
        remainder_curve,
        separation_curve,
    };
    Ok(Decomposition {
        report,
        w0,
        branches: data,
    })
}

/// `lhs = ‖w^{(0)}‖² + Σ_n ‖w^{(n)}‖²`, `rhs = max` of `‖u_k‖²` over the last
/// three scheduled `k`.
pub fn check_plancherel(w0: &WeakLimitSummary, branches: &[BranchReport], seq: &[NormsOnM]) -> Plancherel {
    let lhs = w0.h12_squared + branches.iter().map(|b| b.h12_squared).sum::<f64>();
    let rhs = seq[seq.len().saturating_sub(3)..]
        .iter()
        .map(|n| n.h12_squared)
        .fold(0.0, f64::max);
    Plancherel {
        lhs,
        rhs,
        slack: rhs - lhs,
    }
}

/// Compares `∫|u_K|^p` with `∫|w^{(0)}|^p + Σ_n ∫|w^{(n)}|^p`.
pub fn check_brezis_lieb(w0: &WeakLimitSummary, branches: &[BranchReport], seq: &[NormsOnM]) -> BrezisLieb {
    let lhs = seq.last().map_or(0.0, |n| n.lp_power);
    let rhs = w0.lp_power + branches.iter().map(|b| b.lp_power).sum::<f64>();
    BrezisLieb {
        lhs,
        rhs,
        relative_error: (lhs - rhs).abs() / lhs.max(f64::MIN_POSITIVE),
    }
}
