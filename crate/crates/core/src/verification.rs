//! Pass/fail verdicts read off decomposition, atlas and spotlight reports.

use serde::{Deserialize, Serialize};

use crate::atlas::AtlasQuality;
use crate::discretization::TrailingSystem;
use crate::geometry::CurvatureReport;
use crate::profiles::{DecompositionReport, StopReason};
use crate::spotlight::SpotlightReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    pub measured: Vec<f64>,
    pub tolerance: f64,
    pub notes: String,
}

impl Verdict {
    fn new(name: &str, pass: bool, measured: Vec<f64>, tolerance: f64, notes: impl Into<String>) -> Self {
        Verdict {
            name: name.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            measured,
            tolerance,
            notes: notes.into(),
        }
    }

    pub fn not_applicable(name: &str, notes: impl Into<String>) -> Self {
        Verdict {
            name: name.into(),
            status: Status::NotApplicable,
            measured: Vec::new(),
            tolerance: 0.0,
            notes: notes.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

/// Tolerances of the scenario checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tol_w: f64,
    pub tol_c2: f64,
    pub tol_profile: f64,
    pub tol_final: f64,
    pub min_decay_ratio: f64,
    /// Plancherel slack floor, relative to the right-hand side.
    pub tol_energy: f64,
    pub tol_brezis_lieb: f64,
    pub tol_cocycle: f64,
    pub tol_metric: f64,
    pub tol_spotlight: f64,
    pub tol_mass: f64,
    pub min_growth: f64,
    /// Allowed excess of `‖u_k‖_{H^{1,2}}` over the declared bound.
    pub bound_slack: f64,
    /// Spotlight pairings may exceed the duality bound by this factor.
    pub soundness_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_w: 1e-3,
            tol_c2: 1e-4,
            tol_profile: 5e-3,
            tol_final: 5e-2,
            min_decay_ratio: 0.5,
            tol_energy: 2e-2,
            tol_brezis_lieb: 2e-2,
            tol_cocycle: 1e-5,
            tol_metric: 1e-3,
            tol_spotlight: 0.25,
            tol_mass: 1e-3,
            min_growth: 2.0,
            bound_slack: 0.05,
            soundness_factor: 10.0,
        }
    }
}

/// Final remainder below `tol_final·‖u_1‖_p`, and either decaying by
/// `min_decay_ratio` or already below that level at the first `k`.
pub fn check_remainder_decay(report: &DecompositionReport, tol_final: f64, min_decay_ratio: f64) -> Verdict {
    let name = "remainder_decay";
    let curve = &report.remainder_curve;
    let u1 = report.sequence_lp.first().copied().unwrap_or(0.0);
    let (Some(&first), Some(&last)) = (curve.first(), curve.last()) else {
        return Verdict::not_applicable(name, "empty schedule");
    };
    if u1 == 0.0 {
        let pass = curve.iter().all(|&v| v == 0.0);
        return Verdict::new(name, pass, vec![last, 0.0], tol_final, "zero sequence");
    }
    let ratio = if first > 0.0 { last / first } else { 0.0 };
    let level = tol_final * u1;
    let pass = last < level && (ratio < min_decay_ratio || first < level);
    Verdict::new(
        name,
        pass,
        vec![last / u1, ratio],
        tol_final,
        format!("measured: final remainder / ‖u_1‖_p, final / first; decay ratio bound {min_decay_ratio}"),
    )
}

/// Separation curve non-decreasing with `final/first ≥ min_growth`.
pub fn check_separation(report: &DecompositionReport, min_growth: f64) -> Verdict {
    let name = "separation_growth";
    if report.branches.len() < 2 {
        return Verdict::not_applicable(name, "fewer than two branches");
    }
    let c = &report.separation_curve;
    let monotone = c.windows(2).all(|w| w[1] >= w[0]);
    let ratio = c.last().unwrap_or(&0.0) / c.first().copied().unwrap_or(f64::INFINITY);
    Verdict::new(
        name,
        monotone && ratio >= min_growth,
        vec![ratio],
        min_growth,
        if monotone {
            "measured: final / first separation"
        } else {
            "separation curve decreases"
        },
    )
}

pub fn check_plancherel_verdict(report: &DecompositionReport, tol_energy: f64) -> Verdict {
    let pl = &report.plancherel;
    Verdict::new(
        "plancherel",
        pl.slack >= -tol_energy * pl.rhs,
        vec![pl.lhs, pl.rhs, pl.slack],
        tol_energy,
        "measured: lhs, rhs, slack; pass iff slack ≥ −tol·rhs",
    )
}

/// The L^p identity holds up to the remainder; it is only checked when the
/// remainder mass at the final `k` is below the tolerance.
pub fn check_brezis_lieb_verdict(report: &DecompositionReport, tol: f64) -> Verdict {
    let name = "brezis_lieb";
    let bl = &report.brezis_lieb;
    let rem = report.remainder_curve.last().copied().unwrap_or(0.0).powf(report.p);
    if bl.lhs > 0.0 && rem > tol * bl.lhs {
        return Verdict::not_applicable(
            name,
            format!("remainder mass {rem:.3e} exceeds tol·∫|u_K|^p; the identity only holds in the limit"),
        );
    }
    Verdict::new(
        name,
        bl.relative_error < tol,
        vec![bl.relative_error, bl.lhs, bl.rhs],
        tol,
        "measured: relative error, ∫|u_K|^p, profile sum",
    )
}

pub fn check_energy_monotonicity(report: &DecompositionReport, tol: f64) -> Verdict {
    let name = "energy_monotonicity";
    if report.branches.is_empty() {
        return Verdict::not_applicable(name, "no branches");
    }
    let u1 = report.sequence_lp.first().copied().unwrap_or(0.0);
    let first = report.sequence_lp.last().copied().unwrap_or(0.0);
    let mut prev = first;
    let mut worst: f64 = 0.0;
    for b in &report.branches {
        worst = worst.max(b.residual_after - prev);
        prev = b.residual_after;
    }
    Verdict::new(
        name,
        worst <= tol * u1,
        vec![worst],
        tol,
        "measured: largest increase of ‖r_K‖_p across subtractions",
    )
}

pub fn check_profile_compatibility(report: &DecompositionReport, tol_profile: f64) -> Verdict {
    let name = "profile_compatibility";
    let failed: Vec<&str> = report
        .uncaptured
        .iter()
        .filter(|u| u.reason.contains("incompatible"))
        .map(|u| u.reason.as_str())
        .collect();
    if report.branches.is_empty() && failed.is_empty() {
        return Verdict::not_applicable(name, "no branches");
    }
    let worst = report
        .branches
        .iter()
        .map(|b| b.compat_residual)
        .fold(0.0, f64::max);
    Verdict::new(
        name,
        failed.is_empty() && worst < tol_profile,
        vec![worst],
        tol_profile,
        if failed.is_empty() {
            String::from("measured: largest overlap residual")
        } else {
            failed.join("; ")
        },
    )
}

pub fn check_branch_limit(report: &DecompositionReport) -> Verdict {
    Verdict::new(
        "branch_limit",
        report.stop_reason == StopReason::MassBelowTolerance,
        vec![report.branches.len() as f64, report.uncaptured.len() as f64],
        report.tol_mass,
        match report.stop_reason {
            StopReason::MassBelowTolerance => "residual local mass fell below tol_mass",
            StopReason::BranchLimitReached => "N_max reached with residual mass above tol_mass",
        },
    )
}

pub fn check_spotlight(report: &SpotlightReport, soundness_factor: f64) -> Verdict {
    let top = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let rel = |v: &[f64]| {
        let t = top(v);
        if t > 0.0 {
            v.last().copied().unwrap_or(0.0) / t
        } else {
            0.0
        }
    };
    Verdict::new(
        "spotlight_consistency",
        report.consistent && report.soundness_ratio <= soundness_factor,
        vec![report.soundness_ratio, rel(&report.lp), rel(&report.max_pairing)],
        soundness_factor,
        format!(
            "measured: soundness ratio, final/max L^p, final/max pairing; L^p decays: {}, pairings vanish: {}",
            report.lp_decays, report.pairings_vanish
        ),
    )
}

pub fn check_sequence_bounded(h12_squared: &[f64], bound: Option<f64>, slack: f64) -> Verdict {
    let name = "sequence_bounded";
    let Some(bound) = bound else {
        return Verdict::not_applicable(name, "family declares no H^{1,2} bound");
    };
    let worst = h12_squared.iter().copied().fold(0.0, f64::max).sqrt();
    Verdict::new(
        name,
        worst <= (1.0 + slack) * bound,
        vec![worst, bound],
        slack,
        "measured: max ‖u_k‖_{H^{1,2}}, declared bound",
    )
}

pub fn check_curvature(report: &CurvatureReport) -> Verdict {
    Verdict::new(
        "curvature_bounds",
        report.violations.is_empty(),
        vec![report.max_riemann, report.min_sectional, report.max_sectional],
        0.1,
        if report.violations.is_empty() {
            String::from("measured: max |R|, min and max sectional curvature")
        } else {
            report.violations.join("; ")
        },
    )
}

pub fn check_discretization(min_separation: f64, epsilon: f64, uncovered: usize, max_gap: f64) -> Verdict {
    Verdict::new(
        "discretization",
        min_separation >= epsilon * (1.0 - 1e-12) && uncovered == 0,
        vec![min_separation, max_gap, uncovered as f64],
        epsilon,
        "measured: min separation, max covering gap, uncovered test points",
    )
}

/// Distances along every trailing ordering are non-decreasing.
pub fn check_trailing(systems: &[&TrailingSystem]) -> Verdict {
    let name = "trailing_monotonicity";
    if systems.is_empty() {
        return Verdict::not_applicable(name, "no trailing systems");
    }
    let bad = systems
        .iter()
        .flat_map(|t| t.distances.iter())
        .filter(|d| d.windows(2).any(|w| w[1] < w[0]))
        .count();
    Verdict::new(name, bad == 0, vec![bad as f64], 0.0, "measured: non-monotone orderings")
}

pub fn check_partition(max_defect: f64, samples: usize) -> Verdict {
    Verdict::new(
        "partition_of_unity",
        max_defect < 1e-10,
        vec![max_defect, samples as f64],
        1e-10,
        "measured: max |Σχ − 1|, sample count",
    )
}

/// Worst atlas quality over branches, one verdict per property.
pub fn check_atlases(qualities: &[&AtlasQuality], tol: &Tolerances, expect_flat_limit: bool) -> Vec<Verdict> {
    let names = [
        "atlas_transition_convergence",
        "atlas_inverse_cocycle",
        "atlas_metric_compatibility",
        "atlas_metric_spd",
        "atlas_flat_limit",
    ];
    if qualities.is_empty() {
        return names
            .iter()
            .map(|n| Verdict::not_applicable(n, "no branches"))
            .collect();
    }
    let max = |f: &dyn Fn(&AtlasQuality) -> f64| qualities.iter().map(|q| f(q)).fold(0.0, f64::max);
    let min = |f: &dyn Fn(&AtlasQuality) -> f64| qualities.iter().map(|q| f(q)).fold(f64::INFINITY, f64::min);
    let increment = max(&|q| if q.charts > 1 { q.max_final_increment } else { 0.0 });
    let no_pairs = qualities.iter().any(|q| q.charts > 1 && q.k_pairs == 0);
    let inverse = max(&|q| q.inverse_residual.max(q.identity_residual));
    let cocycle = max(&|q| q.cocycle_residual);
    let metric = max(&|q| q.metric_residual);
    let not_cauchy = max(&|q| q.metric_not_cauchy_charts as f64);
    let eig = min(&|q| q.min_eigenvalue);
    let cond = max(&|q| q.max_condition);
    let flat = max(&|q| q.flat_limit_residual);
    vec![
        Verdict::new(
            names[0],
            !no_pairs && increment < tol.tol_c2,
            vec![increment],
            tol.tol_c2,
            "measured: largest final C² increment over converged pairs",
        ),
        Verdict::new(
            names[1],
            inverse < tol.tol_cocycle && cocycle < tol.tol_cocycle,
            vec![inverse, cocycle],
            tol.tol_cocycle,
            "measured: inverse residual, cocycle residual",
        ),
        Verdict::new(
            names[2],
            metric < tol.tol_metric && not_cauchy == 0.0,
            vec![metric, not_cauchy],
            tol.tol_metric,
            "measured: overlap metric residual, charts with non-Cauchy metric",
        ),
        Verdict::new(
            names[3],
            eig > 0.0,
            vec![eig, cond],
            0.0,
            "measured: min eigenvalue, max condition number",
        ),
        if expect_flat_limit {
            Verdict::new(
                names[4],
                flat < tol.tol_metric,
                vec![flat],
                tol.tol_metric,
                "measured: sup |g^{(i)} − I|",
            )
        } else {
            Verdict::not_applicable(names[4], "limit metric is not expected to be Euclidean")
        },
    ]
}
