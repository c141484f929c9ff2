//! Normal-coordinate charts `e_y` over the discretization, their cached
//! lattice geometry, and the partition of unity `{χ_y}`.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::discretization::Discretization;
use crate::error::{fmt_point, Error, Result};
use crate::geometry::{bump, determinant, Frame, ManifoldSpec, Mat, Point};
use crate::lattice::Lattice;

/// Finite-difference step for differentials of chart maps.
pub const CHART_FD_STEP: f64 = 1e-4;

/// Coordinate ball, used as a support hint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball<const N: usize> {
    pub center: Point<N>,
    pub radius: f64,
}

/// A real function on `M` given pointwise in global coordinates.
pub trait ManifoldFunction<const N: usize>: Sync {
    fn eval(&self, x: &Point<N>) -> f64;

    /// Coordinate balls outside of which the function vanishes; `None`
    /// when no such hint is available.
    fn support(&self) -> Option<Vec<Ball<N>>> {
        None
    }
}

/// Adapter turning a closure into a [`ManifoldFunction`].
pub struct Pointwise<const N: usize, F> {
    f: F,
    support: Option<Vec<Ball<N>>>,
}

impl<const N: usize, F: Fn(&Point<N>) -> f64 + Sync> Pointwise<N, F> {
    pub fn new(f: F, support: Option<Vec<Ball<N>>>) -> Self {
        Pointwise { f, support }
    }
}

impl<const N: usize, F: Fn(&Point<N>) -> f64 + Sync> ManifoldFunction<N> for Pointwise<N, F> {
    fn eval(&self, x: &Point<N>) -> f64 {
        (self.f)(x)
    }

    fn support(&self) -> Option<Vec<Ball<N>>> {
        self.support.clone()
    }
}

/// Pullback metric `G = (de)ᵀ g (de)` of a chart on its lattice.
#[derive(Debug, Clone)]
pub struct ChartMetric<const N: usize> {
    pub metric: Vec<Mat<N>>,
    pub inverse: Vec<Mat<N>>,
    pub sqrt_det: Vec<f64>,
}

/// Lattice images and metric of one chart. Flat manifolds keep neither:
/// images are affine and the metric is the identity.
#[derive(Debug, Clone)]
pub struct ChartGeometry<const N: usize> {
    pub frame: Frame<N>,
    images: Option<Vec<Point<N>>>,
    metric: Option<ChartMetric<N>>,
    /// `χ_y` at each lattice entry (zero where masked); empty for charts
    /// not centered at a point of `Y`.
    pub chi: Vec<f64>,
}

impl<const N: usize> ChartGeometry<N> {
    /// Computes images (and the pullback metric when `with_metric`) on the
    /// active entries of `lattice`.
    pub fn compute(
        spec: &ManifoldSpec<N>,
        frame: Frame<N>,
        lattice: &Lattice,
        active: &[usize],
        with_metric: bool,
    ) -> Result<Self> {
        if spec.is_flat() {
            return Ok(ChartGeometry {
                frame,
                images: None,
                metric: None,
                chi: Vec::new(),
            });
        }
        let per_point: Vec<Result<(Point<N>, Option<Mat<N>>)>> = active
            .par_iter()
            .map(|&idx| {
                let xi = lattice.point::<N>(idx);
                let x = spec.exp_map(&frame, &xi)?;
                let g = if with_metric {
                    Some(pullback_metric(spec, &frame, &xi, &x)?)
                } else {
                    None
                };
                Ok((x, g))
            })
            .collect();
        let mut images = vec![frame.base_point; lattice.len()];
        let mut metric = with_metric.then(|| ChartMetric {
            metric: vec![Mat::<N>::identity(); lattice.len()],
            inverse: vec![Mat::<N>::identity(); lattice.len()],
            sqrt_det: vec![1.0; lattice.len()],
        });
        for (&idx, r) in active.iter().zip(per_point) {
            let (x, g) = r?;
            images[idx] = x;
            if let (Some(m), Some(g)) = (metric.as_mut(), g) {
                let inv = g.try_inverse().ok_or_else(|| Error::NotSpd {
                    at: fmt_point(x.as_slice()),
                })?;
                m.sqrt_det[idx] = determinant(&g).max(0.0).sqrt();
                m.metric[idx] = g;
                m.inverse[idx] = inv;
            }
        }
        Ok(ChartGeometry {
            frame,
            images: Some(images),
            metric,
            chi: Vec::new(),
        })
    }

    /// `e_y(ξ)` at lattice entry `idx`.
    pub fn image(&self, lattice: &Lattice, idx: usize) -> Point<N> {
        match &self.images {
            Some(v) => v[idx],
            None => self.frame.base_point + self.frame.to_tangent(&lattice.point::<N>(idx)),
        }
    }

    /// Pullback metric; `None` means the identity.
    pub fn metric(&self) -> Option<&ChartMetric<N>> {
        self.metric.as_ref()
    }

    pub fn sqrt_det(&self, idx: usize) -> f64 {
        self.metric.as_ref().map_or(1.0, |m| m.sqrt_det[idx])
    }
}

/// `(de)ᵀ g (de)` at `ξ`, with `de` by central differences of step
/// [`CHART_FD_STEP`].
pub fn pullback_metric<const N: usize>(
    spec: &ManifoldSpec<N>,
    frame: &Frame<N>,
    xi: &Point<N>,
    x: &Point<N>,
) -> Result<Mat<N>> {
    let d = CHART_FD_STEP;
    let mut jac = Mat::<N>::zeros();
    for a in 0..N {
        let mut p = *xi;
        let mut m = *xi;
        p[a] += d;
        m[a] -= d;
        let col = (spec.shoot(frame, &p)? - spec.shoot(frame, &m)?) / (2.0 * d);
        jac.set_column(a, &col);
    }
    let g = spec.metric_at(x)?;
    let out = jac.transpose() * g * jac;
    Ok((out + out.transpose()) * 0.5)
}

/// Everything tied to one manifold, discretization and chart lattice:
/// charts centered at points of `Y` are built lazily and cached.
pub struct Workspace<const N: usize> {
    pub spec: ManifoldSpec<N>,
    pub disc: Discretization<N>,
    /// Lattice over `Ω_ρ` shared by all charts.
    pub lattice: Lattice,
    active: Vec<usize>,
    charts: Vec<OnceLock<Arc<ChartGeometry<N>>>>,
}

impl<const N: usize> Workspace<N> {
    pub fn new(spec: ManifoldSpec<N>, disc: Discretization<N>, spacing: f64) -> Result<Self> {
        let lattice = Lattice::new(N, disc.rho, spacing)?;
        let active = lattice.active_indices();
        let charts = (0..disc.len()).map(|_| OnceLock::new()).collect();
        Ok(Workspace {
            spec,
            disc,
            lattice,
            active,
            charts,
        })
    }

    pub fn rho(&self) -> f64 {
        self.disc.rho
    }

    pub fn spacing(&self) -> f64 {
        self.lattice.spacing
    }

    /// Active entries of [`Workspace::lattice`].
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// The chart `e_y` for `y = Y[index]` with its Gram–Schmidt frame.
    pub fn chart(&self, index: usize) -> Result<Arc<ChartGeometry<N>>> {
        if let Some(c) = self.charts[index].get() {
            return Ok(c.clone());
        }
        let y = self.disc.points[index];
        let frame = Frame::gram_schmidt(&self.spec, &y)?;
        let mut geo = ChartGeometry::compute(&self.spec, frame, &self.lattice, &self.active, true)?;
        let mut chi = vec![0.0; self.lattice.len()];
        let rho = self.rho();
        for &idx in &self.active {
            // The own weight is taken from |ξ| so that round-off in d(x, y)
            // cannot leave a rim point with no weight at all.
            let own = bump(self.lattice.point::<N>(idx).norm() / rho);
            if own == 0.0 {
                continue;
            }
            let x = geo.image(&self.lattice, idx);
            let others: f64 = self
                .raw_weights(&x)?
                .iter()
                .filter(|(j, _)| *j != index)
                .map(|(_, b)| b)
                .sum();
            chi[idx] = own / (own + others);
        }
        geo.chi = chi;
        let arc = Arc::new(geo);
        let _ = self.charts[index].set(arc.clone());
        Ok(self.charts[index].get().cloned().unwrap_or(arc))
    }

    /// Nonzero `χ_y(x)` as `(index of y, weight)`, where
    /// `χ_y = b(d(·,y)/ρ) / Σ_{y'} b(d(·,y')/ρ)`.
    pub fn partition_weights(&self, x: &Point<N>) -> Result<Vec<(usize, f64)>> {
        let mut w = self.raw_weights(x)?;
        let total: f64 = w.iter().map(|(_, b)| b).sum();
        if total <= 0.0 {
            return Err(Error::CoveringGap {
                at: fmt_point(x.as_slice()),
            });
        }
        for (_, b) in w.iter_mut() {
            *b /= total;
        }
        Ok(w)
    }

    /// Unnormalized `b(d(x, y)/ρ)` over `y` with a positive value.
    fn raw_weights(&self, x: &Point<N>) -> Result<Vec<(usize, f64)>> {
        let rho = self.rho();
        Ok(self
            .disc
            .within(&self.spec, x, rho)?
            .into_iter()
            .map(|(i, d)| (i, bump(d / rho)))
            .filter(|(_, b)| *b > 0.0)
            .collect())
    }

    /// Indices of `Y` whose chart ball can meet the given support; all of
    /// `Y` without a hint.
    pub fn charts_meeting(&self, support: Option<&[Ball<N>]>) -> Vec<usize> {
        let Some(balls) = support else {
            return (0..self.disc.len()).collect();
        };
        let reach = self.spec.coord_radius(self.rho());
        let mut out: Vec<usize> = balls
            .iter()
            .flat_map(|b| self.disc.within_coord(&b.center, b.radius + reach))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Samples `f ∘ e_y` on the chart lattice.
    pub fn pull_back<F: ManifoldFunction<N> + ?Sized>(
        &self,
        index: usize,
        f: &F,
    ) -> Result<crate::lattice::GridFunction> {
        let chart = self.chart(index)?;
        let vals: Vec<f64> = self
            .active
            .iter()
            .map(|&idx| f.eval(&chart.image(&self.lattice, idx)))
            .collect();
        Ok(crate::lattice::GridFunction::from_active(
            self.lattice,
            &self.active,
            &vals,
        ))
    }
}
