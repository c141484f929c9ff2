//! Analytic Riemannian manifolds in a single global coordinate system.
//!
//! A [`ManifoldSpec`] carries the metric field, an optional analytic metric
//! gradient, and the declared geometric constants (injectivity radius,
//! coordinate scale, curvature bounds). Geodesic calculus lives in the
//! submodules: [`ode`] integrates the geodesic equation, [`maps`] builds
//! frames and the exponential/logarithm charts, [`curvature`] estimates the
//! Riemann tensor by finite differences.

pub mod curvature;
pub mod maps;
pub mod ode;

use std::fmt;
use std::sync::Arc;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{fmt_point, Error, Result};

pub use curvature::{validate_bounded_geometry, CurvatureReport};
pub use maps::{geodesic_distance, Frame, GeodesicState};

pub type Point<const N: usize> = SVector<f64, N>;
pub type Mat<const N: usize> = SMatrix<f64, N, N>;

/// Γ^k_{ij}, stored as `gamma[k][i][j]`.
pub type Christoffel<const N: usize> = [[[f64; N]; N]; N];

/// Step for central differences of the metric when no analytic gradient is given.
pub const H_FD_FIRST: f64 = 1e-4;
/// Step for the second-derivative stencils used by curvature estimates.
pub const H_FD_CURVATURE: f64 = 1e-3;

type MetricFn<const N: usize> = Arc<dyn Fn(&Point<N>) -> Mat<N> + Send + Sync>;
type MetricGradFn<const N: usize> = Arc<dyn Fn(&Point<N>) -> [Mat<N>; N] + Send + Sync>;

#[derive(Clone)]
enum MetricKind<const N: usize> {
    Flat,
    /// `diag(1, sinh²t)` in coordinates `(t, θ)`; two-dimensional only.
    HyperbolicPolar,
    /// `Id / x_N²` on the upper half space.
    HyperbolicUpperHalf,
    /// `(1 + β·b(|x − c|/R))·Id` with the standard mollifier profile `b`.
    PerturbedFlat {
        beta: f64,
        center: Point<N>,
        radius: f64,
    },
    Custom {
        metric: MetricFn<N>,
        grad: Option<MetricGradFn<N>>,
    },
}

/// Coordinate region on which the metric is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoordDomain {
    Whole,
    /// `x[axis] > min`.
    HalfSpace { axis: usize, min: f64 },
}

impl CoordDomain {
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            CoordDomain::Whole => x.iter().all(|v| v.is_finite()),
            CoordDomain::HalfSpace { axis, min } => {
                x.iter().all(|v| v.is_finite()) && x[axis] > min
            }
        }
    }
}

/// Declared sup-norms of `R` and `∇R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBounds {
    pub riemann: f64,
    pub nabla_riemann: f64,
}

/// A manifold of bounded geometry given by a metric field in global coordinates.
#[derive(Clone)]
pub struct ManifoldSpec<const N: usize> {
    kind: MetricKind<N>,
    /// Declared lower bound r(M) of the injectivity radius.
    pub inj_radius: f64,
    /// Declared constant `c` with `d(x, y) >= c·|x − y|` for nearby points.
    /// Used to turn geodesic radii into coordinate search radii.
    pub coord_scale: f64,
    pub curvature_bounds: Option<CurvatureBounds>,
    pub catalog_id: Option<String>,
    pub domain: CoordDomain,
}

impl<const N: usize> fmt::Debug for ManifoldSpec<N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManifoldSpec")
            .field("dim", &N)
            .field("catalog_id", &self.catalog_id)
            .field("inj_radius", &self.inj_radius)
            .field("coord_scale", &self.coord_scale)
            .field("domain", &self.domain)
            .finish()
    }
}

/// Mollifier profile `b(s) = exp(1 − 1/(1 − s²))` for `|s| < 1`, zero otherwise.
/// `b(0) = 1` and every derivative vanishes at `|s| = 1`.
pub fn bump(s: f64) -> f64 {
    let s2 = s * s;
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s2)).exp()
    }
}

/// Derivative `b'(s)`.
pub fn bump_d1(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        bump(s) * (-2.0 * s / (q * q))
    }
}

/// Second derivative `b''(s)`.
pub fn bump_d2(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        let s2 = s * s;
        bump(s) * (4.0 * s2 / q.powi(4) - 2.0 / (q * q) - 8.0 * s2 / q.powi(3))
    }
}

impl<const N: usize> ManifoldSpec<N> {
    fn with_kind(kind: MetricKind<N>, inj_radius: f64, catalog_id: Option<&str>) -> Self {
        ManifoldSpec {
            kind,
            inj_radius,
            coord_scale: 1.0,
            curvature_bounds: None,
            catalog_id: catalog_id.map(str::to_owned),
            domain: CoordDomain::Whole,
        }
    }

    /// Euclidean `R^N`. The injectivity radius is infinite; `inj_radius` is the
    /// declared working value.
    pub fn flat(inj_radius: f64) -> Self {
        let mut spec = Self::with_kind(MetricKind::Flat, inj_radius, Some("flat"));
        spec.curvature_bounds = Some(CurvatureBounds {
            riemann: 0.0,
            nabla_riemann: 0.0,
        });
        spec
    }

    /// Hyperbolic space in the upper-half-space model `Id / x_N²`.
    /// `coord_scale` should be `1 / sup x_N` over the working region.
    pub fn hyperbolic_upper_half(inj_radius: f64, coord_scale: f64) -> Self {
        let mut spec = Self::with_kind(
            MetricKind::HyperbolicUpperHalf,
            inj_radius,
            Some("hyperbolic"),
        );
        spec.coord_scale = coord_scale;
        spec.domain = CoordDomain::HalfSpace {
            axis: N - 1,
            min: 0.0,
        };
        // |R| = sqrt(2N(N-1)) for constant curvature -1.
        spec.curvature_bounds = Some(CurvatureBounds {
            riemann: (2.0 * (N * (N - 1)) as f64).sqrt(),
            nabla_riemann: 0.0,
        });
        spec
    }

    /// A compactly supported conformal perturbation of flat space.
    pub fn perturbed_flat(beta: f64, center: Point<N>, radius: f64, inj_radius: f64) -> Self {
        let mut spec = Self::with_kind(
            MetricKind::PerturbedFlat {
                beta,
                center,
                radius,
            },
            inj_radius,
            Some("perturbed_flat"),
        );
        spec.coord_scale = (1.0 + beta.min(0.0)).sqrt();
        spec
    }

    /// A metric supplied as a closure. Derivatives fall back to central differences
    /// unless [`ManifoldSpec::with_metric_grad`] is used.
    pub fn custom<F>(metric: F, inj_radius: f64) -> Self
    where
        F: Fn(&Point<N>) -> Mat<N> + Send + Sync + 'static,
    {
        Self::with_kind(
            MetricKind::Custom {
                metric: Arc::new(metric),
                grad: None,
            },
            inj_radius,
            None,
        )
    }

    pub fn with_metric_grad<G>(mut self, grad: G) -> Self
    where
        G: Fn(&Point<N>) -> [Mat<N>; N] + Send + Sync + 'static,
    {
        if let MetricKind::Custom { grad: g, .. } = &mut self.kind {
            *g = Some(Arc::new(grad));
        }
        self
    }

    pub fn with_coord_scale(mut self, c: f64) -> Self {
        self.coord_scale = c;
        self
    }

    /// `d_g(x, y)` where a closed form exists: flat space, the upper half
    /// space, and the polar model for `|θ₁ − θ₂| < π`.
    pub fn closed_form_distance(&self, x: &Point<N>, y: &Point<N>) -> Option<f64> {
        match &self.kind {
            MetricKind::Flat => Some((x - y).norm()),
            MetricKind::HyperbolicUpperHalf => {
                let (a, b) = (x[N - 1], y[N - 1]);
                (a > 0.0 && b > 0.0).then(|| (1.0 + (x - y).norm_squared() / (2.0 * a * b)).acosh())
            }
            MetricKind::HyperbolicPolar => {
                let dtheta = (x[1] - y[1]).abs();
                (dtheta < std::f64::consts::PI).then(|| {
                    let c = x[0].cosh() * y[0].cosh() - x[0].sinh() * y[0].sinh() * dtheta.cos();
                    c.max(1.0).acosh()
                })
            }
            _ => None,
        }
    }

    /// A lower bound for `d_g(x, y)`: the closed form where available,
    /// `|t₁ − t₂|` in polar coordinates, `coord_scale·|x − y|` otherwise.
    pub fn distance_lower_bound(&self, x: &Point<N>, y: &Point<N>) -> f64 {
        if let Some(d) = self.closed_form_distance(x, y) {
            return d;
        }
        match &self.kind {
            MetricKind::HyperbolicPolar => (x[0] - y[0]).abs(),
            _ => self.coord_scale * (x - y).norm(),
        }
    }

    pub fn with_domain(mut self, domain: CoordDomain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_curvature_bounds(mut self, bounds: CurvatureBounds) -> Self {
        self.curvature_bounds = Some(bounds);
        self
    }

    pub fn dim(&self) -> usize {
        N
    }

    /// Radius `a = (3/4)·r(M)` of the Euclidean balls on which charts are used.
    pub fn chart_radius(&self) -> f64 {
        0.75 * self.inj_radius
    }

    /// True when the Christoffel symbols vanish identically.
    pub fn is_flat(&self) -> bool {
        matches!(self.kind, MetricKind::Flat)
    }

    pub fn in_domain(&self, x: &Point<N>) -> bool {
        self.domain.contains(x.as_slice())
    }

    /// True when the coordinate segment `x + t·v`, `t ∈ [0, 1]`, stays where the
    /// metric is exactly Euclidean, so that it is itself a geodesic.
    pub(crate) fn segment_is_flat(&self, x: &Point<N>, v: &Point<N>) -> bool {
        match &self.kind {
            MetricKind::Flat => true,
            MetricKind::PerturbedFlat { center, radius, .. } => {
                let vv = v.norm_squared();
                let t = if vv > 0.0 {
                    ((center - x).dot(v) / vv).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (x + v * t - center).norm() >= *radius
            }
            _ => false,
        }
    }

    /// Metric without validation; hot path for integration.
    pub fn metric_raw(&self, x: &Point<N>) -> Mat<N> {
        match &self.kind {
            MetricKind::Flat => Mat::<N>::identity(),
            MetricKind::HyperbolicPolar => {
                let s = x[0].sinh();
                let mut g = Mat::<N>::identity();
                g[(1, 1)] = s * s;
                g
            }
            MetricKind::HyperbolicUpperHalf => {
                let y = x[N - 1];
                Mat::<N>::identity() / (y * y)
            }
            MetricKind::PerturbedFlat {
                beta,
                center,
                radius,
            } => {
                let s = (x - center).norm() / radius;
                Mat::<N>::identity() * (1.0 + beta * bump(s))
            }
            MetricKind::Custom { metric, .. } => metric(x),
        }
    }

    /// Metric at `x`, checked for domain membership, symmetry and positive definiteness.
    pub fn metric_at(&self, x: &Point<N>) -> Result<Mat<N>> {
        if !self.in_domain(x) {
            return Err(Error::DomainEscape {
                at: fmt_point(x.as_slice()),
            });
        }
        let g = self.metric_raw(x);
        let asym = (g - g.transpose()).abs().max();
        let scale = g.abs().max().max(1.0);
        if !g.iter().all(|v| v.is_finite()) || asym > 1e-12 * scale {
            return Err(Error::NotSpd {
                at: fmt_point(x.as_slice()),
            });
        }
        let sym = (g + g.transpose()) * 0.5;
        let dynamic = nalgebra::DMatrix::from_column_slice(N, N, sym.as_slice());
        if dynamic.cholesky().is_none() {
            return Err(Error::NotSpd {
                at: fmt_point(x.as_slice()),
            });
        }
        Ok(sym)
    }

    /// `∂g/∂x_a` for each coordinate `a`, analytic where available.
    pub fn metric_grad(&self, x: &Point<N>) -> [Mat<N>; N] {
        match &self.kind {
            MetricKind::Flat => [Mat::<N>::zeros(); N],
            MetricKind::HyperbolicPolar => {
                let mut out = [Mat::<N>::zeros(); N];
                out[0][(1, 1)] = 2.0 * x[0].sinh() * x[0].cosh();
                out
            }
            MetricKind::HyperbolicUpperHalf => {
                let mut out = [Mat::<N>::zeros(); N];
                let y = x[N - 1];
                out[N - 1] = Mat::<N>::identity() * (-2.0 / (y * y * y));
                out
            }
            MetricKind::PerturbedFlat {
                beta,
                center,
                radius,
            } => {
                let mut out = [Mat::<N>::zeros(); N];
                let d = x - center;
                let r = d.norm();
                let s = r / radius;
                if s < 1.0 && r > 0.0 {
                    let db = beta * bump_d1(s) / (radius * r);
                    for (a, m) in out.iter_mut().enumerate() {
                        *m = Mat::<N>::identity() * (db * d[a]);
                    }
                }
                out
            }
            MetricKind::Custom { grad: Some(g), .. } => g(x),
            MetricKind::Custom { grad: None, .. } => self.metric_grad_fd(x),
        }
    }

    /// Central-difference metric gradient with step [`H_FD_FIRST`].
    pub fn metric_grad_fd(&self, x: &Point<N>) -> [Mat<N>; N] {
        let mut out = [Mat::<N>::zeros(); N];
        for (a, m) in out.iter_mut().enumerate() {
            let mut xp = *x;
            let mut xm = *x;
            xp[a] += H_FD_FIRST;
            xm[a] -= H_FD_FIRST;
            *m = (self.metric_raw(&xp) - self.metric_raw(&xm)) / (2.0 * H_FD_FIRST);
        }
        out
    }

    /// Christoffel symbols of the second kind.
    pub fn christoffel(&self, x: &Point<N>) -> Result<Christoffel<N>> {
        let g = self.metric_at(x)?;
        let ginv = g.try_inverse().ok_or_else(|| Error::NotSpd {
            at: fmt_point(x.as_slice()),
        })?;
        Ok(christoffel_from(&ginv, &self.metric_grad(x)))
    }

    /// Christoffel symbols through the finite-difference path regardless of
    /// analytic gradients.
    pub fn christoffel_fd(&self, x: &Point<N>) -> Result<Christoffel<N>> {
        let g = self.metric_at(x)?;
        let ginv = g.try_inverse().ok_or_else(|| Error::NotSpd {
            at: fmt_point(x.as_slice()),
        })?;
        Ok(christoffel_from(&ginv, &self.metric_grad_fd(x)))
    }

    /// Geodesic acceleration `−Γ^k_{ij} v^i v^j`. Returns `None` outside the
    /// domain or where the metric is singular.
    pub(crate) fn geodesic_accel(&self, x: &Point<N>, v: &Point<N>) -> Option<Point<N>> {
        if !self.in_domain(x) {
            return None;
        }
        match &self.kind {
            MetricKind::Flat => Some(Point::<N>::zeros()),
            MetricKind::PerturbedFlat {
                beta,
                center,
                radius,
            } => {
                // Conformal metric φ·Id: a = −(2(∇φ·v)v − |v|²∇φ) / (2φ).
                let d = x - center;
                let r = d.norm();
                let s = r / radius;
                if s >= 1.0 || r == 0.0 {
                    return Some(Point::<N>::zeros());
                }
                let phi = 1.0 + beta * bump(s);
                let grad_phi = d * (beta * bump_d1(s) / (radius * r));
                let a = (v * (2.0 * grad_phi.dot(v)) - grad_phi * v.norm_squared()) / (-2.0 * phi);
                Some(a)
            }
            _ => {
                let g = self.metric_raw(x);
                let ginv = g.try_inverse()?;
                let dg = self.metric_grad(x);
                // c_l = Σ_i v^i (∂_i g v)_l − ½ vᵀ(∂_l g)v
                let mut c = Point::<N>::zeros();
                for (i, dgi) in dg.iter().enumerate() {
                    c += (dgi * v) * v[i];
                }
                for (l, dgl) in dg.iter().enumerate() {
                    c[l] -= 0.5 * v.dot(&(dgl * v));
                }
                let a = -(ginv * c);
                if a.iter().all(|t| t.is_finite()) {
                    Some(a)
                } else {
                    None
                }
            }
        }
    }
}

/// Γ^k_{ij} = ½ g^{kl}(∂_i g_{lj} + ∂_j g_{li} − ∂_l g_{ij}).
pub fn christoffel_from<const N: usize>(ginv: &Mat<N>, dg: &[Mat<N>; N]) -> Christoffel<N> {
    let mut lower = [[[0.0; N]; N]; N];
    for (l, row) in lower.iter_mut().enumerate() {
        for (i, col) in row.iter_mut().enumerate() {
            for (j, v) in col.iter_mut().enumerate() {
                *v = 0.5 * (dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)]);
            }
        }
    }
    let mut gamma = [[[0.0; N]; N]; N];
    for (k, gk) in gamma.iter_mut().enumerate() {
        for i in 0..N {
            for j in 0..N {
                gk[i][j] = (0..N).map(|l| ginv[(k, l)] * lower[l][i][j]).sum();
            }
        }
    }
    gamma
}

impl ManifoldSpec<2> {
    /// The hyperbolic plane in geodesic polar coordinates `(t, θ)`, `t > 0`,
    /// with `θ` treated as a real line. `coord_scale` is `min(1, sinh t_min)`
    /// over the working region.
    pub fn hyperbolic_polar(inj_radius: f64, coord_scale: f64) -> Self {
        let mut spec = Self::with_kind(MetricKind::HyperbolicPolar, inj_radius, Some("hyperbolic"));
        spec.coord_scale = coord_scale;
        spec.domain = CoordDomain::HalfSpace { axis: 0, min: 0.0 };
        spec.curvature_bounds = Some(CurvatureBounds {
            riemann: 2.0,
            nabla_riemann: 0.0,
        });
        spec
    }
}

/// Determinant of a small square matrix.
pub fn determinant<const N: usize>(m: &Mat<N>) -> f64 {
    nalgebra::DMatrix::from_column_slice(N, N, m.as_slice()).determinant()
}

/// Solves `m z = b` by LU with partial pivoting; `None` if `m` is singular.
pub(crate) fn solve_small<const N: usize>(m: &Mat<N>, b: &Point<N>) -> Option<Point<N>> {
    let dm = nalgebra::DMatrix::from_column_slice(N, N, m.as_slice());
    let db = nalgebra::DVector::from_column_slice(b.as_slice());
    let z = dm.lu().solve(&db)?;
    Some(Point::<N>::from_column_slice(z.as_slice()))
}
