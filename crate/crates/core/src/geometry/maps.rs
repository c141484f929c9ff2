//! Orthonormal frames, the chart maps `e_x = exp_x ∘ i_x` and their inverses.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::ode::{integrate_geodesic, Tolerances};
use super::{solve_small, ManifoldSpec, Mat, Point};
use crate::error::{fmt_point, Error, Result};

/// Newton iteration cap for the logarithm.
pub const MAX_NEWTON: usize = 50;
const LOG_RESIDUAL_TOL: f64 = 1e-11;
const JACOBIAN_STEP: f64 = 1e-6;

/// An orthonormal basis of `T_xM`; columns of `basis` are tangent vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame<const N: usize> {
    pub base_point: Point<N>,
    pub basis: Mat<N>,
    inverse: Mat<N>,
}

impl<const N: usize> Frame<N> {
    /// Gram–Schmidt of the coordinate basis `∂_0, ∂_1, …` with respect to `g_x`.
    pub fn gram_schmidt(spec: &ManifoldSpec<N>, x: &Point<N>) -> Result<Self> {
        let g = spec.metric_at(x)?;
        let ip = |a: &Point<N>, b: &Point<N>| a.dot(&(g * b));
        let mut basis = Mat::<N>::zeros();
        for k in 0..N {
            let mut v = Point::<N>::zeros();
            v[k] = 1.0;
            // Two passes for stability.
            for _ in 0..2 {
                for j in 0..k {
                    let e = basis.column(j).into_owned();
                    v -= e * ip(&v, &e);
                }
            }
            let n = ip(&v, &v).sqrt();
            if !(n > 0.0) {
                return Err(Error::NotSpd {
                    at: fmt_point(x.as_slice()),
                });
            }
            basis.set_column(k, &(v / n));
        }
        Self::from_basis(*x, basis)
    }

    pub fn from_basis(base_point: Point<N>, basis: Mat<N>) -> Result<Self> {
        let inverse = basis.try_inverse().ok_or_else(|| Error::NotSpd {
            at: fmt_point(base_point.as_slice()),
        })?;
        Ok(Frame {
            base_point,
            basis,
            inverse,
        })
    }

    /// The same frame rotated by `angle` in the plane of its first two vectors.
    pub fn rotated(&self, angle: f64) -> Self {
        let mut r = Mat::<N>::identity();
        if N >= 2 {
            let (s, c) = angle.sin_cos();
            r[(0, 0)] = c;
            r[(0, 1)] = -s;
            r[(1, 0)] = s;
            r[(1, 1)] = c;
        }
        let basis = self.basis * r;
        Frame {
            base_point: self.base_point,
            basis,
            inverse: r.transpose() * self.inverse,
        }
    }

    /// Tangent vector `i_x(ξ)` in coordinate components.
    pub fn to_tangent(&self, xi: &Point<N>) -> Point<N> {
        self.basis * xi
    }

    /// Inverse identification `i_x^{-1}(v)`.
    pub fn from_tangent(&self, v: &Point<N>) -> Point<N> {
        self.inverse * v
    }

    /// `max |Bᵀ g B − Id|`.
    pub fn orthonormality_defect(&self, spec: &ManifoldSpec<N>) -> f64 {
        let g = spec.metric_raw(&self.base_point);
        (self.basis.transpose() * g * self.basis - Mat::<N>::identity())
            .abs()
            .max()
    }
}

/// Position, velocity and elapsed parameter along a geodesic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicState<const N: usize> {
    pub position: Point<N>,
    pub velocity: Point<N>,
    pub arc_time: f64,
}

impl<const N: usize> ManifoldSpec<N> {
    /// Follows the geodesic from `x` with initial velocity `v` for time `t`.
    pub fn geodesic(&self, x: &Point<N>, v: &Point<N>, t: f64) -> Result<GeodesicState<N>> {
        if !self.in_domain(x) {
            return Err(Error::DomainEscape {
                at: fmt_point(x.as_slice()),
            });
        }
        if self.segment_is_flat(x, &(v * t)) {
            return Ok(GeodesicState {
                position: x + v * t,
                velocity: *v,
                arc_time: t,
            });
        }
        let tr = integrate_geodesic(self, x, v, t, &Tolerances::default())?;
        Ok(GeodesicState {
            position: tr.x,
            velocity: tr.v,
            arc_time: t,
        })
    }

    /// Chart map without the radius check; used internally by shooting.
    pub(crate) fn shoot(&self, frame: &Frame<N>, xi: &Point<N>) -> Result<Point<N>> {
        if xi.iter().all(|&c| c == 0.0) {
            return Ok(frame.base_point);
        }
        let v = frame.to_tangent(xi);
        if self.segment_is_flat(&frame.base_point, &v) {
            return Ok(frame.base_point + v);
        }
        let tr = integrate_geodesic(self, &frame.base_point, &v, 1.0, &Tolerances::default())?;
        Ok(tr.x)
    }

    /// `e_x(ξ) = exp_x(i_x ξ)` for `|ξ| < a`.
    pub fn exp_map(&self, frame: &Frame<N>, xi: &Point<N>) -> Result<Point<N>> {
        let a = self.chart_radius();
        let len = xi.norm();
        if len >= a {
            return Err(Error::OutsideChartBall { len, limit: a });
        }
        self.shoot(frame, xi)
    }

    /// `e_x^{-1}(y)` by shooting with damped Newton iterations from the flat guess.
    pub fn log_map(&self, frame: &Frame<N>, y: &Point<N>) -> Result<Point<N>> {
        let r = self.inj_radius;
        let mut xi = frame.from_tangent(&(y - frame.base_point));
        if xi.iter().all(|&c| c == 0.0) {
            return Ok(xi);
        }
        if self.is_flat() {
            let len = xi.norm();
            if len >= r {
                return Err(Error::OutsideInjectivity {
                    estimate: len,
                    radius: r,
                });
            }
            return Ok(xi);
        }
        // Cheap rejection: a distance lower bound already exceeds the radius.
        let coord_est = self.distance_lower_bound(&frame.base_point, y);
        if coord_est >= 1.5 * r {
            return Err(Error::OutsideInjectivity {
                estimate: coord_est,
                radius: r,
            });
        }
        let scale = y.norm().max(1.0);
        let residual_of = |xi: &Point<N>| -> Option<(Point<N>, f64)> {
            let z = self.shoot(frame, xi).ok()?;
            let res = z - y;
            Some((res, res.norm()))
        };
        let (mut res, mut res_norm) = residual_of(&xi).ok_or_else(|| Error::DomainEscape {
            at: fmt_point(y.as_slice()),
        })?;
        let mut iterations = 0;
        while res_norm > LOG_RESIDUAL_TOL * scale {
            if iterations >= MAX_NEWTON {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: res_norm,
                });
            }
            iterations += 1;
            let base = y + res;
            let mut jac = Mat::<N>::zeros();
            let step = JACOBIAN_STEP * xi.norm().max(1.0);
            for a in 0..N {
                let mut xp = xi;
                xp[a] += step;
                let zp = self.shoot(frame, &xp)?;
                jac.set_column(a, &((zp - base) / step));
            }
            let delta = solve_small(&jac, &res).ok_or_else(|| Error::NoConvergence {
                iterations,
                residual: res_norm,
            })?;
            let mut lambda = 1.0;
            let mut improved = false;
            while lambda > 1e-4 {
                let cand = xi - delta * lambda;
                if let Some((cres, cnorm)) = residual_of(&cand) {
                    if cnorm < res_norm {
                        xi = cand;
                        res = cres;
                        res_norm = cnorm;
                        improved = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !improved {
                // Stagnation at the integration noise floor.
                if res_norm < 1e-9 * scale {
                    break;
                }
                return Err(Error::NoConvergence {
                    iterations,
                    residual: res_norm,
                });
            }
            if xi.norm() > 1.5 * r {
                return Err(Error::OutsideInjectivity {
                    estimate: xi.norm(),
                    radius: r,
                });
            }
        }
        let len = xi.norm();
        if len >= r {
            return Err(Error::OutsideInjectivity {
                estimate: len,
                radius: r,
            });
        }
        Ok(xi)
    }

    /// Distance between points known to be within the injectivity radius of each other.
    pub fn local_distance(&self, frame_x: &Frame<N>, y: &Point<N>) -> Result<f64> {
        Ok(self.log_map(frame_x, y)?.norm())
    }

    /// Coordinate radius guaranteed to contain the geodesic ball of radius `r`.
    pub fn coord_radius(&self, r: f64) -> f64 {
        r / self.coord_scale
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Geodesic distance. Points inside the injectivity ball use the logarithm;
/// otherwise the shortest path through `nodes` is taken, with edges between
/// nodes closer than half the injectivity radius weighted by local distances.
pub fn geodesic_distance<const N: usize>(
    spec: &ManifoldSpec<N>,
    x: &Point<N>,
    y: &Point<N>,
    nodes: Option<&[Point<N>]>,
) -> Result<f64> {
    if x == y {
        return Ok(0.0);
    }
    let r = spec.inj_radius;
    match spec.closed_form_distance(x, y) {
        Some(d) if d < r => return Ok(d),
        Some(_) => {
            let nodes = nodes.ok_or(Error::Disconnected)?;
            return graph_distance(spec, x, y, nodes, 0.5 * r);
        }
        None => {}
    }
    if spec.coord_scale * (y - x).norm() < r {
        let frame = Frame::gram_schmidt(spec, x)?;
        match spec.log_map(&frame, y) {
            Ok(xi) => return Ok(xi.norm()),
            Err(Error::OutsideInjectivity { .. }) | Err(Error::NoConvergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let nodes = nodes.ok_or(Error::Disconnected)?;
    graph_distance(spec, x, y, nodes, 0.5 * r)
}

/// Dijkstra over `{x, y} ∪ nodes` with local-distance edges shorter than `edge_radius`.
pub fn graph_distance<const N: usize>(
    spec: &ManifoldSpec<N>,
    x: &Point<N>,
    y: &Point<N>,
    nodes: &[Point<N>],
    edge_radius: f64,
) -> Result<f64> {
    let mut all = Vec::with_capacity(nodes.len() + 2);
    all.push(*x);
    all.push(*y);
    all.extend_from_slice(nodes);
    let coord_r = spec.coord_radius(edge_radius);
    let mut dist = vec![f64::INFINITY; all.len()];
    let mut done = vec![false; all.len()];
    let mut heap = BinaryHeap::new();
    dist[0] = 0.0;
    heap.push(HeapItem(0.0, 0));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == 1 {
            return Ok(d);
        }
        let frame = Frame::gram_schmidt(spec, &all[u])?;
        for v in 0..all.len() {
            if done[v] || (all[v] - all[u]).norm() > coord_r {
                continue;
            }
            let w = match spec.log_map(&frame, &all[v]) {
                Ok(xi) => xi.norm(),
                Err(_) => continue,
            };
            if w < edge_radius && d + w < dist[v] {
                dist[v] = d + w;
                heap.push(HeapItem(d + w, v));
            }
        }
    }
    Err(Error::Disconnected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};

    #[test]
    fn flat_exp_and_log_are_affine() {
        let spec = ManifoldSpec::<3>::flat(10.0);
        let x = Vector3::new(1.0, 2.0, 3.0);
        let f = Frame::gram_schmidt(&spec, &x).unwrap();
        let xi = Vector3::new(0.5, -1.0, 2.0);
        assert!((spec.exp_map(&f, &xi).unwrap() - (x + xi)).norm() < 1e-10);
        assert!((spec.log_map(&f, &(x + xi)).unwrap() - xi).norm() < 1e-10);
    }

    #[test]
    fn exp_at_zero_is_base_point() {
        let spec = ManifoldSpec::hyperbolic_polar(4.0, 0.3);
        let x = Vector2::new(1.3, 0.2);
        let f = Frame::gram_schmidt(&spec, &x).unwrap();
        assert_eq!(spec.exp_map(&f, &Vector2::zeros()).unwrap(), x);
        assert_eq!(spec.log_map(&f, &x).unwrap(), Vector2::zeros());
    }

    #[test]
    fn gram_schmidt_is_orthonormal() {
        let spec = ManifoldSpec::hyperbolic_polar(4.0, 0.3);
        let f = Frame::gram_schmidt(&spec, &Vector2::new(2.0, 0.0)).unwrap();
        assert!(f.orthonormality_defect(&spec) < 1e-12);
        let g = f.rotated(0.7);
        assert!(g.orthonormality_defect(&spec) < 1e-12);
        let v = Vector2::new(0.3, -0.2);
        assert!((g.from_tangent(&g.to_tangent(&v)) - v).norm() < 1e-14);
    }

    #[test]
    fn chart_radius_is_enforced() {
        let spec = ManifoldSpec::<2>::flat(4.0);
        let f = Frame::gram_schmidt(&spec, &Vector2::zeros()).unwrap();
        assert!(matches!(
            spec.exp_map(&f, &Vector2::new(3.0, 0.0)),
            Err(Error::OutsideChartBall { .. })
        ));
    }

    #[test]
    fn hyperbolic_log_inverts_exp() {
        let spec = ManifoldSpec::hyperbolic_polar(4.0, 0.3);
        let x = Vector2::new(1.5, 0.4);
        let f = Frame::gram_schmidt(&spec, &x).unwrap();
        let xi = Vector2::new(0.7, -1.1);
        let y = spec.exp_map(&f, &xi).unwrap();
        let back = spec.log_map(&f, &y).unwrap();
        assert!((back - xi).norm() < 1e-7, "{back:?}");
    }

    #[test]
    fn graph_distance_on_flat_line() {
        let spec = ManifoldSpec::<2>::flat(2.0);
        let nodes: Vec<_> = (0..=20).map(|i| Vector2::new(i as f64 * 0.5, 0.0)).collect();
        let d = geodesic_distance(&spec, &nodes[0], &nodes[20], Some(&nodes)).unwrap();
        assert!((d - 10.0).abs() < 1e-12);
        assert!(matches!(
            geodesic_distance(&spec, &nodes[0], &nodes[20], None),
            Err(Error::Disconnected)
        ));
    }
}
