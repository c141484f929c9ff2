//! Dormand–Prince 5(4) integration of the geodesic equation.

use super::{ManifoldSpec, Point};
use crate::error::{fmt_point, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            atol: 1e-10,
            rtol: 1e-10,
            max_steps: 100_000,
        }
    }
}

/// Outcome of one integration: final position and velocity plus step counts.
#[derive(Debug, Clone, Copy)]
pub struct Trajectory<const N: usize> {
    pub x: Point<N>,
    pub v: Point<N>,
    pub accepted: usize,
    pub rejected: usize,
}

// Autonomous system: the node coefficients c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b − b̂ (fifth minus embedded fourth order weights)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Copy)]
struct State<const N: usize> {
    x: Point<N>,
    v: Point<N>,
}

impl<const N: usize> State<N> {
    fn axpy(&self, h: f64, terms: &[(f64, &State<N>)]) -> State<N> {
        let mut out = *self;
        for (c, s) in terms {
            out.x += s.x * (h * c);
            out.v += s.v * (h * c);
        }
        out
    }
}

fn rhs<const N: usize>(spec: &ManifoldSpec<N>, s: &State<N>) -> Option<State<N>> {
    let a = spec.geodesic_accel(&s.x, &s.v)?;
    Some(State { x: s.v, v: a })
}

fn err_norm<const N: usize>(
    y0: &State<N>,
    y1: &State<N>,
    e: &State<N>,
    tol: &Tolerances,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let sx = tol.atol + tol.rtol * y0.x[i].abs().max(y1.x[i].abs());
        let sv = tol.atol + tol.rtol * y0.v[i].abs().max(y1.v[i].abs());
        acc += (e.x[i] / sx).powi(2) + (e.v[i] / sv).powi(2);
    }
    (acc / (2 * N) as f64).sqrt()
}

/// Integrates `x'' = −Γ(x)(x', x')` from `(x0, v0)` over time `t_end`.
pub fn integrate_geodesic<const N: usize>(
    spec: &ManifoldSpec<N>,
    x0: &Point<N>,
    v0: &Point<N>,
    t_end: f64,
    tol: &Tolerances,
) -> Result<Trajectory<N>> {
    let escape = |x: &Point<N>| Error::DomainEscape {
        at: fmt_point(x.as_slice()),
    };
    let mut y = State { x: *x0, v: *v0 };
    if t_end == 0.0 || v0.iter().all(|&c| c == 0.0) {
        return Ok(Trajectory {
            x: y.x,
            v: y.v,
            accepted: 0,
            rejected: 0,
        });
    }
    let mut k1 = rhs(spec, &y).ok_or_else(|| escape(x0))?;

    // Initial step after Hairer–Nørsett–Wanner.
    let mut h = {
        let scale = |i: usize, pos: bool| {
            let c = if pos { y.x[i] } else { y.v[i] };
            tol.atol + tol.rtol * c.abs()
        };
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            d0 += (y.x[i] / scale(i, true)).powi(2) + (y.v[i] / scale(i, false)).powi(2);
            d1 += (k1.x[i] / scale(i, true)).powi(2) + (k1.v[i] / scale(i, false)).powi(2);
        }
        let n2 = (2 * N) as f64;
        let (d0, d1) = ((d0 / n2).sqrt(), (d1 / n2).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(t_end);
        let y1 = y.axpy(h0, &[(1.0, &k1)]);
        let d2 = match rhs(spec, &y1) {
            Some(k) => {
                let mut acc = 0.0;
                for i in 0..N {
                    acc += ((k.x[i] - k1.x[i]) / scale(i, true)).powi(2)
                        + ((k.v[i] - k1.v[i]) / scale(i, false)).powi(2);
                }
                (acc / n2).sqrt() / h0
            }
            None => f64::INFINITY,
        };
        let m = d1.max(d2);
        let h1 = if m <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / m).powf(0.2)
        };
        (100.0 * h0).min(h1).min(t_end)
    };

    let mut t = 0.0;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let h_min = 1e-14 * t_end.abs().max(1.0);
    while t < t_end {
        if accepted + rejected > tol.max_steps {
            return Err(Error::IntegrationFailure(format!(
                "step budget exhausted at t = {t}"
            )));
        }
        if t + h > t_end {
            h = t_end - t;
        }
        let stages = (|| {
            let k2 = rhs(spec, &y.axpy(h, &[(A21, &k1)]))?;
            let k3 = rhs(spec, &y.axpy(h, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = rhs(spec, &y.axpy(h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
            let k5 = rhs(
                spec,
                &y.axpy(h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            )?;
            let k6 = rhs(
                spec,
                &y.axpy(
                    h,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            )?;
            let ynew = y.axpy(
                h,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            let k7 = rhs(spec, &ynew)?;
            let err = State {
                x: Point::<N>::zeros(),
                v: Point::<N>::zeros(),
            }
            .axpy(
                h,
                &[
                    (E1, &k1),
                    (E3, &k3),
                    (E4, &k4),
                    (E5, &k5),
                    (E6, &k6),
                    (E7, &k7),
                ],
            );
            Some((ynew, k7, err))
        })();
        match stages {
            None => {
                // A stage left the domain: shrink and retry.
                rejected += 1;
                h *= 0.25;
                if h < h_min {
                    return Err(escape(&y.x));
                }
            }
            Some((ynew, k7, e)) => {
                let err = err_norm(&y, &ynew, &e, tol);
                if !err.is_finite() {
                    rejected += 1;
                    h *= 0.25;
                    if h < h_min {
                        return Err(Error::IntegrationFailure(format!(
                            "non-finite error estimate at t = {t}"
                        )));
                    }
                    continue;
                }
                if err <= 1.0 {
                    t += h;
                    y = ynew;
                    k1 = k7;
                    accepted += 1;
                    let fac = if err == 0.0 {
                        10.0
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
                    };
                    h *= fac;
                } else {
                    rejected += 1;
                    h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                    if h < h_min {
                        return Err(Error::IntegrationFailure(format!(
                            "step size underflow at t = {t}"
                        )));
                    }
                }
            }
        }
    }
    Ok(Trajectory {
        x: y.x,
        v: y.v,
        accepted,
        rejected,
    })
}
