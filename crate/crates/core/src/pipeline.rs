//! End-to-end scenario runs: geometry checks, discretization, spotlight,
//! decomposition, verdicts, and artifact output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use serde::Serialize;

use crate::atlas::{AtlasConfig, AtlasSummary};
use crate::charts::Workspace;
use crate::discretization::{build_discretization, CoveringReport};
use crate::error::Error;
use crate::geometry::{validate_bounded_geometry, CurvatureReport, Point};
use crate::profiles::{decompose, DecomposeConfig, DecompositionReport};
use crate::report::{to_json_bytes, write_curve_csv};
use crate::scenario::{build_family, build_manifold, ScenarioConfig};
use crate::spotlight::{SequenceFamily, SpotlightReport, TestBank};
use crate::verification::{self as v, Verdict};

/// A pipeline failure tagged with the stage that raised it.
#[derive(Debug, Clone, PartialEq)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

trait Stage<T> {
    fn stage(self, name: &'static str) -> Result<T, StageError>;
}

impl<T> Stage<T> for crate::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizationSummary {
    pub points: usize,
    pub epsilon: f64,
    pub rho: f64,
    pub min_separation: f64,
    pub covering: CoveringReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeSummary {
    pub radius: f64,
    pub spacing: f64,
    pub entries: usize,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionSummary {
    pub samples: usize,
    pub max_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartPayload {
    pub chart: usize,
    pub center: Vec<f64>,
    pub grid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPayload {
    pub branch: usize,
    pub atlas: String,
    /// Chart values `w∘φ_i`, `i ≤ I_max`.
    pub profile: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub description: String,
    pub config: ScenarioConfig,
    pub curvature: CurvatureReport,
    pub discretization: DiscretizationSummary,
    pub lattice: LatticeSummary,
    pub partition: PartitionSummary,
    pub spotlight: SpotlightReport,
    pub decomposition: DecompositionReport,
    pub weak_limit_charts: Vec<ChartPayload>,
    pub branches: Vec<BranchPayload>,
}

/// Everything a run produces, ready to be written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub verdicts: Vec<Verdict>,
    pub atlases: Vec<AtlasSummary>,
    /// `grids/<hash>.bin` → bytes.
    pub payloads: BTreeMap<String, Vec<u8>>,
}

impl RunOutcome {
    pub fn has_failures(&self) -> bool {
        self.verdicts.iter().any(Verdict::failed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

/// Decomposition settings of a scenario.
pub fn decompose_config(cfg: &ScenarioConfig) -> DecomposeConfig {
    let tol = &cfg.tolerances;
    DecomposeConfig {
        i_max: cfg.i_max,
        n_max: cfg.n_max,
        p: cfg.p(),
        tol_w: tol.tol_w,
        tol_mass_rel: tol.tol_mass,
        tol_profile: tol.tol_profile,
        atlas: AtlasConfig {
            tol_c2: tol.tol_c2,
            transition_fraction: cfg.transition_fraction,
            frames: cfg.frames,
            ..AtlasConfig::default()
        },
    }
}

/// Runs the scenario end to end.
pub fn run_suite(cfg: &ScenarioConfig) -> Result<RunOutcome, StageError> {
    match cfg.manifold.dim {
        2 => run_dim::<2>(cfg),
        3 => run_dim::<3>(cfg),
        n => Err(StageError {
            stage: "config",
            error: Error::ConstraintViolation(format!("dim must be 2 or 3 (got {n})")),
        }),
    }
}

/// Coarse sample grid (`m` points per axis) over the region.
fn region_samples<const N: usize>(cfg: &ScenarioConfig, m: usize) -> Vec<Point<N>> {
    let (lo, hi) = cfg.region.bounds();
    let total = m.pow(N as u32);
    (0..total)
        .map(|flat| {
            let mut p = Point::<N>::zeros();
            let mut rest = flat;
            for a in (0..N).rev() {
                let t = (rest % m) as f64 / (m - 1) as f64;
                rest /= m;
                p[a] = lo[a] + t * (hi[a] - lo[a]);
            }
            p
        })
        .filter(|p| cfg.region.contains(p.as_slice()))
        .collect()
}

fn run_dim<const N: usize>(cfg: &ScenarioConfig) -> Result<RunOutcome, StageError> {
    let tol = cfg.tolerances;
    let spec = build_manifold::<N>(cfg).stage("geometry")?;
    let family = build_family::<N>(cfg).stage("sequence")?;
    let samples = region_samples::<N>(cfg, 9);
    let samples: Vec<Point<N>> = samples.into_iter().filter(|p| spec.in_domain(p)).collect();
    let curvature = validate_bounded_geometry(&spec, &samples, 1).stage("geometry")?;

    let disc = build_discretization(&spec, &cfg.region, cfg.rho_hat(), Some(cfg.rho), None)
        .stage("discretization")?;
    let min_separation = disc.min_separation(&spec).stage("discretization")?;
    let covering = disc
        .check_covering(&spec, cfg.rho_hat() / 5.0)
        .stage("discretization")?;
    let disc_summary = DiscretizationSummary {
        points: disc.len(),
        epsilon: disc.epsilon,
        rho: disc.rho,
        min_separation,
        covering,
    };
    let ws = Workspace::new(spec, disc, cfg.spacing()).stage("charts")?;

    let mut rng = rand::rngs::StdRng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.region.bounds();
    let mut max_defect: f64 = 0.0;
    let mut drawn = 0;
    while drawn < 1000 {
        let x = Point::<N>::from_fn(|a, _| rng.random_range(lo[a]..=hi[a]));
        if !cfg.region.contains(x.as_slice()) || !ws.spec.in_domain(&x) {
            continue;
        }
        drawn += 1;
        let s: f64 = ws.partition_weights(&x).stage("partition")?.iter().map(|w| w.1).sum();
        max_defect = max_defect.max((s - 1.0).abs());
    }

    let bank = TestBank::new(ws.lattice);
    let spotlight = crate::spotlight::spotlight_test(&ws, &family, &cfg.k_schedule, &bank, cfg.p(), tol.tol_spotlight)
        .stage("spotlight")?;
    let dec = decompose(&ws, &family, &cfg.k_schedule, &bank, &decompose_config(cfg)).stage("decomposition")?;

    let mut payloads = BTreeMap::new();
    let mut store = |hash: &str, bytes: &[u8]| -> crate::Result<String> {
        let rel = format!("grids/{hash}.bin");
        payloads.entry(rel.clone()).or_insert_with(|| bytes.to_vec());
        Ok(rel)
    };
    let weak_limit_charts = dec
        .w0
        .charts
        .iter()
        .map(|(&y, g)| {
            Ok(ChartPayload {
                chart: y,
                center: ws.disc.points[y].as_slice().to_vec(),
                grid: store(&g.content_hash(), &g.to_bytes())?,
            })
        })
        .collect::<crate::Result<Vec<_>>>()
        .stage("output")?;
    let mut atlases = Vec::new();
    let mut branches = Vec::new();
    for (n, (b, r)) in dec.branches.iter().zip(&dec.report.branches).enumerate() {
        let profile = b
            .profile
            .chart_values
            .iter()
            .map(|g| store(&g.content_hash(), &g.to_bytes()))
            .collect::<crate::Result<Vec<_>>>()
            .stage("output")?;
        atlases.push(b.atlas.summary(r.atlas.clone(), &mut store).stage("output")?);
        branches.push(BranchPayload {
            branch: n + 1,
            atlas: format!("atlas_{}.json", n + 1),
            profile,
        });
    }

    let report = &dec.report;
    let trailing: Vec<_> = dec.branches.iter().map(|b| &b.trailing).collect();
    let qualities: Vec<_> = report.branches.iter().map(|b| &b.atlas).collect();
    let expect_flat_limit = matches!(cfg.manifold.catalog_id.as_str(), "flat" | "perturbed_flat");
    let mut verdicts = vec![
        v::check_curvature(&curvature),
        v::check_discretization(
            disc_summary.min_separation,
            disc_summary.epsilon,
            disc_summary.covering.uncovered,
            disc_summary.covering.max_gap,
        ),
        v::check_trailing(&trailing),
        v::check_partition(max_defect, drawn),
        v::check_sequence_bounded(&report.sequence_h12_squared, family.h12_bound(), tol.bound_slack),
        v::check_spotlight(&spotlight, tol.soundness_factor),
    ];
    verdicts.extend(v::check_atlases(&qualities, &tol, expect_flat_limit));
    verdicts.extend([
        v::check_profile_compatibility(report, tol.tol_profile),
        v::check_branch_limit(report),
        v::check_remainder_decay(report, tol.tol_final, tol.min_decay_ratio),
        v::check_energy_monotonicity(report, 1e-3),
        v::check_plancherel_verdict(report, tol.tol_energy),
        v::check_brezis_lieb_verdict(report, tol.tol_brezis_lieb),
        v::check_separation(report, tol.min_growth),
    ]);

    let lattice = ws.lattice;
    let run = RunReport {
        scenario: cfg.name.clone(),
        description: cfg.description.clone(),
        config: cfg.clone(),
        curvature,
        discretization: disc_summary,
        lattice: LatticeSummary {
            radius: lattice.radius,
            spacing: lattice.spacing,
            entries: lattice.len(),
            active: ws.active().len(),
        },
        partition: PartitionSummary {
            samples: drawn,
            max_defect,
        },
        spotlight,
        decomposition: dec.report.clone(),
        weak_limit_charts,
        branches,
    };
    Ok(RunOutcome {
        report: run,
        verdicts,
        atlases,
        payloads,
    })
}

/// Writes `report.json`, `verdicts.json`, the curve CSVs, one
/// `atlas_<n>.json` per branch, and the grid payloads.
pub fn write_outputs(dir: &Path, out: &RunOutcome) -> crate::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), to_json_bytes(&out.report))?;
    std::fs::write(dir.join("verdicts.json"), to_json_bytes(&out.verdicts))?;
    let d = &out.report.decomposition;
    let curve = |c: &[f64]| -> Vec<(u32, f64)> { d.k_schedule.iter().copied().zip(c.iter().copied()).collect() };
    write_curve_csv(&dir.join("remainder.csv"), &curve(&d.remainder_curve))?;
    write_curve_csv(&dir.join("separation.csv"), &curve(&d.separation_curve))?;
    for (n, a) in out.atlases.iter().enumerate() {
        std::fs::write(dir.join(format!("atlas_{}.json", n + 1)), to_json_bytes(a))?;
    }
    for (rel, bytes) in &out.payloads {
        crate::report::store_payload(dir, rel.trim_start_matches("grids/").trim_end_matches(".bin"), bytes)?;
    }
    Ok(())
}

/// Fixed-width table of verdicts.
pub fn verdict_table(verdicts: &[Verdict]) -> String {
    let mut s = format!("{:<32} {:<15} {:<36} {}\n", "check", "status", "measured", "tolerance");
    for v in verdicts {
        let status = match v.status {
            v::Status::Pass => "pass",
            v::Status::Fail => "FAIL",
            v::Status::NotApplicable => "not_applicable",
        };
        let measured: Vec<String> = v.measured.iter().map(|m| format!("{:.3e}", m + 0.0)).collect();
        s.push_str(&format!(
            "{:<32} {:<15} {:<36} {:.1e}\n",
            v.name,
            status,
            measured.join(" "),
            v.tolerance
        ));
    }
    s
}
