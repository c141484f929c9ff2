//! Chart pullbacks, weak-limit detection against a finite test bank, and
//! Sobolev/Lebesgue norms on `M` assembled from chart quadratures.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charts::{Ball, ChartGeometry, ChartMetric, ManifoldFunction, Workspace};
use crate::error::{Error, Result};
use crate::geometry::{bump, bump_d1, bump_d2, Frame, ManifoldSpec, Point};
use crate::lattice::{GridFunction, Lattice};

/// A sequence `(u_k)` on `M`, evaluated analytically for any `k`.
pub trait SequenceFamily<const N: usize>: Sync {
    fn eval(&self, k: u32, x: &Point<N>) -> f64;

    /// Coordinate balls containing the support of `u_k`.
    fn support(&self, k: u32) -> Option<Vec<Ball<N>>>;

    /// Declared uniform bound on `‖u_k‖_{H^{1,2}(M)}`.
    fn h12_bound(&self) -> Option<f64> {
        None
    }
}

/// `u_k` for a fixed `k` as a function on `M`.
pub struct AtK<'a, const N: usize, F: ?Sized> {
    pub family: &'a F,
    pub k: u32,
}

impl<const N: usize, F: SequenceFamily<N> + ?Sized> ManifoldFunction<N> for AtK<'_, N, F> {
    fn eval(&self, x: &Point<N>) -> f64 {
        self.family.eval(self.k, x)
    }

    fn support(&self) -> Option<Vec<Ball<N>>> {
        self.family.support(self.k)
    }
}

/// `2* = 2N/(N−2)`, infinite for `N ≤ 2`.
pub fn critical_exponent(n: usize) -> f64 {
    if n <= 2 {
        f64::INFINITY
    } else {
        2.0 * n as f64 / (n as f64 - 2.0)
    }
}

/// Accepts `p ∈ [2, 2*)`.
pub fn check_exponent(n: usize, p: f64) -> Result<()> {
    if p >= 2.0 && p < critical_exponent(n) {
        Ok(())
    } else {
        Err(Error::UnsupportedExponent { p })
    }
}

/// Samples `u ∘ e` on `lattice` for an arbitrary frame.
pub fn pullback<const N: usize, F: ManifoldFunction<N> + ?Sized>(
    spec: &ManifoldSpec<N>,
    frame: &Frame<N>,
    u: &F,
    lattice: &Lattice,
) -> Result<GridFunction> {
    let active = lattice.active_indices();
    let chart = ChartGeometry::compute(spec, *frame, lattice, &active, false)?;
    let vals: Vec<f64> = active
        .iter()
        .map(|&i| u.eval(&chart.image(lattice, i)))
        .collect();
    Ok(GridFunction::from_active(*lattice, &active, &vals))
}

/// `|f|² + ∇fᵀ G⁻¹ ∇f` at `idx`.
fn h12_density<const N: usize>(f: &GridFunction, metric: Option<&ChartMetric<N>>, idx: usize) -> f64 {
    let v = f.values[idx];
    let mut grad = Point::<N>::zeros();
    for a in 0..N {
        grad[a] = f.partial(idx, a);
    }
    let g2 = match metric {
        Some(m) => grad.dot(&(m.inverse[idx] * grad)),
        None => grad.norm_squared(),
    };
    v * v + g2
}

/// `‖f‖²_{H^{1,2}(Ω)}` on a chart lattice with volume weights.
pub fn chart_h12_squared<const N: usize>(f: &GridFunction, metric: Option<&ChartMetric<N>>) -> f64 {
    let dv = f.lattice.cell_volume();
    f.active_values()
        .map(|(i, _)| {
            let w = metric.map_or(1.0, |m| m.sqrt_det[i]);
            h12_density(f, metric, i) * w * dv
        })
        .sum()
}

/// Per-chart quadratures of a function on `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartStats {
    pub index: usize,
    /// `∫_{B(y,ρ)} |f|^p dv`.
    pub local_mass: f64,
    /// `∫ χ_y |f|^p dv`.
    pub lp_power: f64,
    /// `∫ χ_y (|f|² + |∇f|²) dv`; zero unless requested.
    pub h12_squared: f64,
}

/// Pulls `f` back onto each chart in `charts` and integrates.
pub fn chart_stats<const N: usize, F: ManifoldFunction<N> + ?Sized>(
    ws: &Workspace<N>,
    f: &F,
    p: f64,
    charts: &[usize],
    with_h12: bool,
) -> Result<Vec<ChartStats>> {
    let dv = ws.lattice.cell_volume();
    charts
        .par_iter()
        .map(|&y| {
            let chart = ws.chart(y)?;
            let grid = ws.pull_back(y, f)?;
            let metric = chart.metric();
            let mut s = ChartStats {
                index: y,
                local_mass: 0.0,
                lp_power: 0.0,
                h12_squared: 0.0,
            };
            for &idx in ws.active() {
                let w = chart.sqrt_det(idx) * dv;
                let a = grid.values[idx].abs().powf(p) * w;
                s.local_mass += a;
                s.lp_power += chart.chi[idx] * a;
                if with_h12 && chart.chi[idx] > 0.0 {
                    s.h12_squared += chart.chi[idx] * h12_density(&grid, metric, idx) * w;
                }
            }
            Ok(s)
        })
        .collect()
}

/// `∫_M |u|^p dv` and `‖u‖²_{H^{1,2}(M)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormsOnM {
    pub lp_power: f64,
    pub h12_squared: f64,
}

impl NormsOnM {
    pub fn lp(&self, p: f64) -> f64 {
        self.lp_power.powf(1.0 / p)
    }

    pub fn h12(&self) -> f64 {
        self.h12_squared.sqrt()
    }
}

pub fn norms_on_m<const N: usize, F: ManifoldFunction<N> + ?Sized>(
    ws: &Workspace<N>,
    u: &F,
    p: f64,
) -> Result<NormsOnM> {
    check_exponent(N, p)?;
    let charts = ws.charts_meeting(u.support().as_deref());
    let stats = chart_stats(ws, u, p, &charts, true)?;
    Ok(NormsOnM {
        lp_power: stats.iter().map(|s| s.lp_power).sum(),
        h12_squared: stats.iter().map(|s| s.h12_squared).sum(),
    })
}

/// `(Σ_y ∫_{Ω_ρ} χ_y∘e_y |u∘e_y|^p √det g dξ)^{1/p}`.
pub fn lp_norm_m<const N: usize, F: ManifoldFunction<N> + ?Sized>(
    ws: &Workspace<N>,
    u: &F,
    p: f64,
) -> Result<f64> {
    check_exponent(N, p)?;
    let charts = ws.charts_meeting(u.support().as_deref());
    let stats = chart_stats(ws, u, p, &charts, false)?;
    Ok(stats.iter().map(|s| s.lp_power).sum::<f64>().powf(1.0 / p))
}

pub fn h12_norm_m<const N: usize, F: ManifoldFunction<N> + ?Sized>(
    ws: &Workspace<N>,
    u: &F,
) -> Result<f64> {
    Ok(norms_on_m(ws, u, 2.0)?.h12())
}

/// Scaled and translated mollifier `t(ξ) = b(|ξ − c|/r)` on a chart lattice,
/// stored on its support with gradient and `t − Δt`.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub center: Vec<f64>,
    pub radius: f64,
    /// `(lattice index, t, ∇t, t − Δt)`.
    entries: Vec<(usize, f64, [f64; 3], f64)>,
    /// Euclidean `‖t‖_{H^{1,2}}`.
    pub h12_norm: f64,
}

impl TestFunction {
    fn new(lattice: &Lattice, center: &[f64], radius: f64) -> Self {
        let d = lattice.dim;
        let mut entries = Vec::new();
        let mut norm2 = 0.0;
        for idx in lattice.active_indices() {
            let x = lattice.coords(idx);
            let mut diff = [0.0; 3];
            for a in 0..d {
                diff[a] = x[a] - center[a];
            }
            let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            let s = dist / radius;
            if s >= 1.0 {
                continue;
            }
            let t = bump(s);
            let b1 = bump_d1(s);
            let b2 = bump_d2(s);
            let mut grad = [0.0; 3];
            // b'(s)/s is smooth with limit b''(0) at the center.
            let b1_over_s = if s > 1e-8 { b1 / s } else { b2 };
            for a in 0..d {
                grad[a] = b1_over_s * diff[a] / (radius * radius);
            }
            let lap = (b2 + (d as f64 - 1.0) * b1_over_s) / (radius * radius);
            norm2 += (t * t + grad.iter().map(|g| g * g).sum::<f64>()) * lattice.cell_volume();
            entries.push((idx, t, grad, t - lap));
        }
        TestFunction {
            center: center[..d].to_vec(),
            radius,
            entries,
            h12_norm: norm2.sqrt(),
        }
    }

    /// `‖t − Δt‖_{L^{p'}}`, the constant in `|⟨f, t⟩| ≤ ‖f‖_{L^p}·‖t − Δt‖_{L^{p'}}`
    /// for Euclidean charts.
    pub fn dual_norm(&self, lattice: &Lattice, p: f64) -> f64 {
        let q = p / (p - 1.0);
        let s: f64 = self
            .entries
            .iter()
            .map(|e| e.3.abs().powf(q) * lattice.cell_volume())
            .sum();
        s.powf(1.0 / q)
    }
}

/// Finite family of bumps at three scales `ρ/4, ρ/2, 3ρ/4`, centered on
/// sublattices of spacing equal to their radius and kept inside `Ω_ρ`.
#[derive(Debug, Clone)]
pub struct TestBank {
    pub lattice: Lattice,
    pub tests: Vec<TestFunction>,
}

impl TestBank {
    pub fn new(lattice: Lattice) -> Self {
        let rho = lattice.radius;
        let h = lattice.spacing;
        let d = lattice.dim;
        let mut tests = Vec::new();
        for frac in [0.25, 0.5, 0.75] {
            let r = frac * rho;
            let reach = rho - h - r;
            if reach < -1e-12 {
                continue;
            }
            let m = (reach / r + 1e-9).floor() as i64;
            let side = (2 * m + 1) as usize;
            for flat in 0..side.pow(d as u32) {
                let mut rem = flat;
                let mut c = vec![0.0; d];
                for a in (0..d).rev() {
                    c[a] = ((rem % side) as i64 - m) as f64 * r;
                    rem /= side;
                }
                if c.iter().map(|v| v * v).sum::<f64>().sqrt() <= reach + 1e-12 {
                    tests.push(TestFunction::new(&lattice, &c, r));
                }
            }
        }
        TestBank { lattice, tests }
    }

    pub fn len(&self) -> usize {
        self.tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tests.is_empty()
    }

    /// `max_t ‖t − Δt‖_{L^{p'}} / ‖t‖_{H^{1,2}}`.
    pub fn duality_constant(&self, p: f64) -> f64 {
        self.tests
            .iter()
            .map(|t| t.dual_norm(&self.lattice, p) / t.h12_norm)
            .fold(0.0, f64::max)
    }
}

/// `⟨f, t⟩_{H^{1,2}(Ω_ρ)} = ∫ (f t + ∇f·G⁻¹∇t) √det G dξ`.
pub fn weak_pairing<const N: usize>(
    f: &GridFunction,
    t: &TestFunction,
    bank: &TestBank,
    metric: Option<&ChartMetric<N>>,
) -> Result<f64> {
    if !f.lattice.matches(&bank.lattice) || N != bank.lattice.dim {
        return Err(Error::LatticeMismatch);
    }
    let dv = bank.lattice.cell_volume();
    let mut acc = 0.0;
    for (idx, tv, tg, _) in &t.entries {
        let fv = f.values[*idx];
        let mut gf = Point::<N>::zeros();
        let mut gt = Point::<N>::zeros();
        for a in 0..N {
            gf[a] = f.partial(*idx, a);
            gt[a] = tg[a];
        }
        let (cross, w) = match metric {
            Some(m) => (gf.dot(&(m.inverse[*idx] * gt)), m.sqrt_det[*idx]),
            None => (gf.dot(&gt), 1.0),
        };
        acc += (fv * tv + cross) * w * dv;
    }
    Ok(acc)
}

pub fn pairings<const N: usize>(
    f: &GridFunction,
    bank: &TestBank,
    metric: Option<&ChartMetric<N>>,
) -> Result<Vec<f64>> {
    bank.tests
        .iter()
        .map(|t| weak_pairing(f, t, bank, metric))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitStatus {
    Converged,
    Zero,
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct WeakLimit {
    pub limit: GridFunction,
    pub status: LimitStatus,
    /// Largest pairing increment over the last three samples, relative to `‖t‖·S`.
    pub max_increment: f64,
    /// Largest final pairing relative to `‖t‖·S`.
    pub max_final_pairing: f64,
    /// `S = max_k ‖f_k‖_{H^{1,2}(Ω)}`.
    pub scale: f64,
}

/// Classifies a sampled sequence of chart functions against the bank.
/// Pairings are measured relative to `‖t‖·S`; the sequence is `Zero` when
/// the last two samples pair below `tol_w` with every test function, and
/// `Converged` when the last three samples are pairwise Cauchy within `tol_w`.
pub fn weak_limit<const N: usize>(
    seq: &[GridFunction],
    bank: &TestBank,
    metric: Option<&ChartMetric<N>>,
    tol_w: f64,
) -> Result<WeakLimit> {
    let last = seq.last().ok_or(Error::LatticeMismatch)?;
    let zero = || GridFunction::zeros(bank.lattice);
    let scale = seq
        .iter()
        .map(|f| chart_h12_squared(f, metric).sqrt())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(WeakLimit {
            limit: zero(),
            status: LimitStatus::Zero,
            max_increment: 0.0,
            max_final_pairing: 0.0,
            scale,
        });
    }
    let tail = &seq[seq.len().saturating_sub(3)..];
    let rel: Vec<Vec<f64>> = tail
        .iter()
        .map(|f| {
            pairings(f, bank, metric).map(|ps| {
                ps.iter()
                    .zip(&bank.tests)
                    .map(|(p, t)| p / (t.h12_norm * scale))
                    .collect()
            })
        })
        .collect::<Result<_>>()?;
    let max_abs = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let n = rel.len();
    let max_final_pairing = max_abs(&rel[n - 1]);
    let recent_small = rel[n.saturating_sub(2)..].iter().all(|r| max_abs(r) < tol_w);
    let mut max_increment: f64 = 0.0;
    for w in rel.windows(2) {
        for (a, b) in w[0].iter().zip(&w[1]) {
            max_increment = max_increment.max((a - b).abs());
        }
    }
    let status = if n >= 2 && recent_small {
        LimitStatus::Zero
    } else if n >= 3 && max_increment < tol_w {
        LimitStatus::Converged
    } else {
        LimitStatus::Undetermined
    };
    let limit = match status {
        LimitStatus::Zero => zero(),
        _ => last.smoothed(),
    };
    Ok(WeakLimit {
        limit,
        status,
        max_increment,
        max_final_pairing,
        scale,
    })
}

/// Outcome of comparing `L^p(M)` decay with spotlight pairings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotlightReport {
    pub k: Vec<u32>,
    pub lp: Vec<f64>,
    /// `max_{y,t} |⟨u_k∘e_y, t⟩| / ‖t‖` per scheduled `k`.
    pub max_pairing: Vec<f64>,
    /// Index in `Y` attaining the maximum, per `k`.
    pub argmax_chart: Vec<usize>,
    /// `max_t ‖t − Δt‖_{p'} / ‖t‖`.
    pub bank_constant: f64,
    /// `max_k max_pairing_k / (‖u_k‖_p · bank_constant)`; at most one on
    /// Euclidean charts by duality.
    pub soundness_ratio: f64,
    pub lp_decays: bool,
    pub pairings_vanish: bool,
    pub consistent: bool,
}

/// Tracks `‖u_k‖_p` and the strongest spotlight pairing along the schedule.
/// "Decay" means the final value is at most `tol` times the largest value.
pub fn spotlight_test<const N: usize, F: SequenceFamily<N> + ?Sized>(
    ws: &Workspace<N>,
    family: &F,
    schedule: &[u32],
    bank: &TestBank,
    p: f64,
    tol: f64,
) -> Result<SpotlightReport> {
    check_exponent(N, p)?;
    let bank_constant = bank.duality_constant(p);
    let mut lp = Vec::new();
    let mut max_pairing = Vec::new();
    let mut argmax_chart = Vec::new();
    for &k in schedule {
        let u = AtK { family, k };
        let charts = ws.charts_meeting(u.support().as_deref());
        let stats = chart_stats(ws, &u, p, &charts, false)?;
        lp.push(stats.iter().map(|s| s.lp_power).sum::<f64>().powf(1.0 / p));
        let per_chart: Vec<(usize, f64)> = charts
            .par_iter()
            .map(|&y| {
                let chart = ws.chart(y)?;
                let g = ws.pull_back(y, &u)?;
                let m = pairings(&g, bank, chart.metric())?
                    .iter()
                    .zip(&bank.tests)
                    .map(|(v, t)| v.abs() / t.h12_norm)
                    .fold(0.0, f64::max);
                Ok((y, m))
            })
            .collect::<Result<_>>()?;
        let (arg, best) = per_chart
            .into_iter()
            .fold((usize::MAX, 0.0), |acc, (y, m)| if m > acc.1 { (y, m) } else { acc });
        max_pairing.push(best);
        argmax_chart.push(arg);
    }
    let decays = |v: &[f64]| {
        let top = v.iter().copied().fold(0.0, f64::max);
        *v.last().unwrap_or(&0.0) <= tol * top
    };
    let lp_decays = decays(&lp);
    let pairings_vanish = decays(&max_pairing);
    let soundness_ratio = lp
        .iter()
        .zip(&max_pairing)
        .map(|(l, m)| if *m == 0.0 { 0.0 } else { m / (l * bank_constant) })
        .fold(0.0, f64::max);
    Ok(SpotlightReport {
        k: schedule.to_vec(),
        lp,
        max_pairing,
        argmax_chart,
        bank_constant,
        soundness_ratio,
        lp_decays,
        pairings_vanish,
        consistent: lp_decays == pairings_vanish,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::Pointwise;
    use crate::discretization::{build_discretization, Region};
    use nalgebra::Vector2;
    use proptest::prelude::*;

    fn lattice() -> Lattice {
        Lattice::new(2, 1.0, 1.0 / 24.0).unwrap()
    }

    #[test]
    fn bank_members_sit_inside_the_ball() {
        let bank = TestBank::new(lattice());
        assert_eq!(bank.len(), 27);
        for t in &bank.tests {
            let c = (t.center[0].powi(2) + t.center[1].powi(2)).sqrt();
            assert!(c + t.radius <= 1.0 - 1.0 / 24.0 + 1e-12);
            assert!(t.h12_norm > 0.0);
        }
    }

    #[test]
    fn flat_pullbacks_of_coordinates_and_constants() {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let y = Vector2::new(2.0, -1.0);
        let frame = Frame::gram_schmidt(&spec, &y).unwrap();
        let lat = lattice();
        let x1 = pullback(&spec, &frame, &Pointwise::new(|x: &Point<2>| x[0], None), &lat).unwrap();
        let c = pullback(&spec, &frame, &Pointwise::new(|_: &Point<2>| 3.5, None), &lat).unwrap();
        for (idx, v) in x1.active_values() {
            assert!((v - (2.0 + lat.coords(idx)[0])).abs() < 1e-14);
            assert_eq!(c.values[idx], 3.5);
        }
        let b = Pointwise::new(|x: &Point<2>| bump((x - y).norm() / 0.6), None);
        let g = pullback(&spec, &frame, &b, &lat).unwrap();
        for (idx, v) in g.active_values() {
            let xi = lat.coords(idx);
            assert!((v - bump((xi[0] * xi[0] + xi[1] * xi[1]).sqrt() / 0.6)).abs() < 1e-9);
        }
    }

    #[test]
    fn self_pairing_converges_to_one_under_refinement() {
        // ⟨t/‖t‖, t/‖t‖⟩ against the exact H¹ norm from a fine radial quadrature.
        let exact = {
            let (r, n) = (0.5f64, 200_000);
            let dr = r / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                let s = (i as f64 + 0.5) * dr;
                let b = bump(s / r);
                let db = bump_d1(s / r) / r;
                acc += (b * b + db * db) * 2.0 * std::f64::consts::PI * s * dr;
            }
            acc
        };
        let mut errs = Vec::new();
        for h in [1.0 / 12.0, 1.0 / 24.0, 1.0 / 48.0] {
            let lat = Lattice::new(2, 1.0, h).unwrap();
            let t = TestFunction::new(&lat, &[0.0, 0.0], 0.5);
            let f = GridFunction::from_fn(lat, |x| bump((x[0] * x[0] + x[1] * x[1]).sqrt() / 0.5));
            let bank = TestBank {
                lattice: lat,
                tests: vec![t.clone()],
            };
            let v = weak_pairing::<2>(&f, &t, &bank, None).unwrap();
            errs.push((v / exact - 1.0).abs());
        }
        assert!(errs[2] < 1e-3, "{errs:?}");
        assert!(errs[1] < errs[0]);
    }

    #[test]
    fn pairing_vanishes_on_zero_and_disjoint_supports() {
        let bank = TestBank::new(lattice());
        let zero = GridFunction::zeros(bank.lattice);
        assert_eq!(weak_pairing::<2>(&zero, &bank.tests[0], &bank, None).unwrap(), 0.0);
        let t = bank
            .tests
            .iter()
            .find(|t| t.radius == 0.25 && t.center[0] < -0.4)
            .unwrap();
        let far = GridFunction::from_fn(bank.lattice, |x| bump(((x[0] - 0.6).powi(2) + x[1] * x[1]).sqrt() / 0.2));
        assert_eq!(weak_pairing::<2>(&far, t, &bank, None).unwrap(), 0.0);
    }

    #[test]
    fn lattice_mismatch_is_reported() {
        let bank = TestBank::new(lattice());
        let other = GridFunction::zeros(Lattice::new(2, 1.0, 0.1).unwrap());
        assert!(matches!(
            weak_pairing::<2>(&other, &bank.tests[0], &bank, None),
            Err(Error::LatticeMismatch)
        ));
    }

    fn bump_grid(lat: Lattice, cx: f64, amp: f64) -> GridFunction {
        GridFunction::from_fn(lat, |x| amp * bump(((x[0] - cx).powi(2) + x[1] * x[1]).sqrt() / 0.5))
    }

    #[test]
    fn stationary_sequence_converges_to_itself() {
        let bank = TestBank::new(lattice());
        let f = bump_grid(bank.lattice, 0.1, 1.0);
        let wl = weak_limit::<2>(&vec![f.clone(); 5], &bank, None, 1e-3).unwrap();
        assert_eq!(wl.status, LimitStatus::Converged);
        let d = wl.limit.max_abs_diff(&f).unwrap();
        assert!(d < 1e-2, "{d}");
    }

    #[test]
    fn exiting_bump_has_zero_limit() {
        let bank = TestBank::new(lattice());
        let seq: Vec<_> = [0.0, 0.5, 1.0, 1.6, 3.0, 6.0]
            .iter()
            .map(|&c| bump_grid(bank.lattice, c, 1.0))
            .collect();
        let wl = weak_limit::<2>(&seq, &bank, None, 1e-3).unwrap();
        assert_eq!(wl.status, LimitStatus::Zero);
        assert!(wl.limit.is_zero());
    }

    #[test]
    fn alternating_sign_is_undetermined() {
        let bank = TestBank::new(lattice());
        let seq: Vec<_> = (0..6)
            .map(|k| bump_grid(bank.lattice, 0.0, if k % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
        let wl = weak_limit::<2>(&seq, &bank, None, 1e-3).unwrap();
        assert_eq!(wl.status, LimitStatus::Undetermined);
    }

    fn flat_ws(half: f64, h: f64) -> Workspace<2> {
        let spec = ManifoldSpec::<2>::flat(10.0);
        let region = Region::Box {
            min: vec![-half, -half],
            max: vec![half, half],
        };
        let disc = build_discretization(&spec, &region, 0.75, Some(1.0), None).unwrap();
        Workspace::new(spec, disc, h).unwrap()
    }

    /// `∫ |A b(|x|/R)|^q dx` and `∫ |∇·|²` by fine radial quadrature.
    fn radial(amp: f64, r: f64, q: f64) -> (f64, f64) {
        let n = 400_000;
        let dr = r / n as f64;
        let (mut m, mut g) = (0.0, 0.0);
        for i in 0..n {
            let s = (i as f64 + 0.5) * dr;
            let area = 2.0 * std::f64::consts::PI * s * dr;
            m += (amp * bump(s / r)).abs().powf(q) * area;
            g += (amp * bump_d1(s / r) / r).powi(2) * area;
        }
        (m, g)
    }

    #[test]
    fn norms_on_flat_plane_match_radial_oracle() {
        let ws = flat_ws(4.0, 1.0 / 24.0);
        let c = Vector2::new(0.3, -0.2);
        let u = Pointwise::new(
            move |x: &Point<2>| 1.5 * bump((x - c).norm() / 1.2),
            Some(vec![Ball { center: c, radius: 1.2 }]),
        );
        let lp = lp_norm_m(&ws, &u, 4.0).unwrap();
        let (m4, _) = radial(1.5, 1.2, 4.0);
        assert!((lp / m4.powf(0.25) - 1.0).abs() < 1e-3, "{lp} {}", m4.powf(0.25));
        let h1 = h12_norm_m(&ws, &u).unwrap();
        let (m2, g2) = radial(1.5, 1.2, 2.0);
        assert!((h1 / (m2 + g2).sqrt() - 1.0).abs() < 1e-3, "{h1} {}", (m2 + g2).sqrt());
    }

    #[test]
    fn zero_function_and_disjoint_additivity() {
        let ws = flat_ws(4.0, 1.0 / 12.0);
        let zero = Pointwise::new(|_: &Point<2>| 0.0, None);
        assert_eq!(lp_norm_m(&ws, &zero, 4.0).unwrap(), 0.0);
        let a = Vector2::new(-1.5, 0.0);
        let b = Vector2::new(1.5, 0.5);
        let one = |c: Point<2>| move |x: &Point<2>| bump((x - c).norm() / 0.8);
        let fa = Pointwise::new(one(a), None);
        let fb = Pointwise::new(one(b), None);
        let both = Pointwise::new(move |x: &Point<2>| one(a)(x) + one(b)(x), None);
        let pa = lp_norm_m(&ws, &fa, 4.0).unwrap().powi(4);
        let pb = lp_norm_m(&ws, &fb, 4.0).unwrap().powi(4);
        let pab = lp_norm_m(&ws, &both, 4.0).unwrap().powi(4);
        assert!((pab - pa - pb).abs() < 1e-6 * pab);
    }

    #[test]
    fn p_at_or_above_critical_is_rejected_in_3d() {
        assert!(check_exponent(3, 6.0).is_err());
        assert!(check_exponent(3, 4.0).is_ok());
        assert!(check_exponent(2, 1e6).is_ok());
        assert!(check_exponent(2, 1.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn pairing_is_bilinear(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -0.5f64..0.5) {
            let bank = TestBank::new(Lattice::new(2, 1.0, 1.0 / 12.0).unwrap());
            let f = bump_grid(bank.lattice, c, 1.0);
            let g = GridFunction::from_fn(bank.lattice, |x| (3.0 * x[0]).sin() * x[1]);
            let comb = f.combine(a, &g, b).unwrap();
            for t in bank.tests.iter().step_by(5) {
                let lhs = weak_pairing::<2>(&comb, t, &bank, None).unwrap();
                let rhs = a * weak_pairing::<2>(&f, t, &bank, None).unwrap()
                    + b * weak_pairing::<2>(&g, t, &bank, None).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }
        }
    }
}
