//! Finite-difference estimates of `R^M` and `∇R^M`.

use serde::{Deserialize, Serialize};

use super::{christoffel_from, Christoffel, ManifoldSpec, Mat, Point, H_FD_CURVATURE};
use crate::error::Result;

const CURVATURE_NOISE_FLOOR: f64 = 1e-3;

/// Fully covariant Riemann tensor `R_{abcd}`, indexed `r[a][b][c][d]`.
pub type Riemann<const N: usize> = [[[[f64; N]; N]; N]; N];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub point: Vec<f64>,
    /// `|R| = sqrt(R_{abcd} R^{abcd})`.
    pub riemann_norm: f64,
    /// `|∇R|`; `None` when not requested.
    pub nabla_riemann_norm: Option<f64>,
    /// Sectional curvatures of the coordinate planes `(∂_a, ∂_b)`, `a < b`.
    pub sectional: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub samples: Vec<CurvatureSample>,
    pub max_riemann: f64,
    pub max_nabla_riemann: Option<f64>,
    pub min_sectional: f64,
    pub max_sectional: f64,
    /// Declared bounds exceeded by more than 10%.
    pub violations: Vec<String>,
}

fn gamma_at<const N: usize>(spec: &ManifoldSpec<N>, x: &Point<N>) -> Result<Christoffel<N>> {
    let g = spec.metric_at(x)?;
    let ginv = g.try_inverse().expect("SPD metric is invertible");
    Ok(christoffel_from(&ginv, &spec.metric_grad(x)))
}

/// `R_{abcd}` at `x`, with `∂Γ` from central differences of step [`H_FD_CURVATURE`].
pub fn riemann_lower<const N: usize>(spec: &ManifoldSpec<N>, x: &Point<N>) -> Result<Riemann<N>> {
    let h = H_FD_CURVATURE;
    let gamma = gamma_at(spec, x)?;
    // dgamma[m][a][b][c] = ∂_m Γ^a_{bc}
    let mut dgamma = [[[[0.0; N]; N]; N]; N];
    for (m, dm) in dgamma.iter_mut().enumerate() {
        let mut xp = *x;
        let mut xm = *x;
        xp[m] += h;
        xm[m] -= h;
        let gp = gamma_at(spec, &xp)?;
        let gm = gamma_at(spec, &xm)?;
        for a in 0..N {
            for b in 0..N {
                for c in 0..N {
                    dm[a][b][c] = (gp[a][b][c] - gm[a][b][c]) / (2.0 * h);
                }
            }
        }
    }
    // R^a_{bcd} = ∂_c Γ^a_{db} − ∂_d Γ^a_{cb} + Γ^a_{ce}Γ^e_{db} − Γ^a_{de}Γ^e_{cb}
    let mut up = [[[[0.0; N]; N]; N]; N];
    for a in 0..N {
        for b in 0..N {
            for c in 0..N {
                for d in 0..N {
                    let mut v = dgamma[c][a][d][b] - dgamma[d][a][c][b];
                    for e in 0..N {
                        v += gamma[a][c][e] * gamma[e][d][b] - gamma[a][d][e] * gamma[e][c][b];
                    }
                    up[a][b][c][d] = v;
                }
            }
        }
    }
    let g = spec.metric_raw(x);
    let mut low = [[[[0.0; N]; N]; N]; N];
    for a in 0..N {
        for b in 0..N {
            for c in 0..N {
                for d in 0..N {
                    low[a][b][c][d] = (0..N).map(|e| g[(a, e)] * up[e][b][c][d]).sum();
                }
            }
        }
    }
    Ok(low)
}

fn full_contraction_4<const N: usize>(r: &Riemann<N>, ginv: &Mat<N>) -> f64 {
    // R_{abcd} R^{abcd}
    let mut raised = *r;
    for _ in 0..4 {
        // Raise the first index, then rotate indices so each is raised once.
        let mut next = [[[[0.0; N]; N]; N]; N];
        for a in 0..N {
            for b in 0..N {
                for c in 0..N {
                    for d in 0..N {
                        let v: f64 = (0..N).map(|e| ginv[(a, e)] * raised[e][b][c][d]).sum();
                        next[b][c][d][a] = v;
                    }
                }
            }
        }
        raised = next;
    }
    let mut acc = 0.0;
    for a in 0..N {
        for b in 0..N {
            for c in 0..N {
                for d in 0..N {
                    acc += r[a][b][c][d] * raised[a][b][c][d];
                }
            }
        }
    }
    acc
}

fn nabla_riemann_norm<const N: usize>(spec: &ManifoldSpec<N>, x: &Point<N>) -> Result<f64> {
    let h = H_FD_CURVATURE;
    let r0 = riemann_lower(spec, x)?;
    let gamma = gamma_at(spec, x)?;
    let ginv = spec.metric_raw(x).try_inverse().expect("SPD metric");
    let mut total = 0.0;
    // |∇R|² = g^{mm'} ∇_m R_{abcd} ∇_{m'} R^{abcd}
    let mut nabla = vec![[[[[0.0; N]; N]; N]; N]; N];
    for (m, nm) in nabla.iter_mut().enumerate() {
        let mut xp = *x;
        let mut xm = *x;
        xp[m] += h;
        xm[m] -= h;
        let rp = riemann_lower(spec, &xp)?;
        let rm = riemann_lower(spec, &xm)?;
        for a in 0..N {
            for b in 0..N {
                for c in 0..N {
                    for d in 0..N {
                        let mut v = (rp[a][b][c][d] - rm[a][b][c][d]) / (2.0 * h);
                        for e in 0..N {
                            v -= gamma[e][m][a] * r0[e][b][c][d]
                                + gamma[e][m][b] * r0[a][e][c][d]
                                + gamma[e][m][c] * r0[a][b][e][d]
                                + gamma[e][m][d] * r0[a][b][c][e];
                        }
                        nm[a][b][c][d] = v;
                    }
                }
            }
        }
    }
    for m in 0..N {
        for mp in 0..N {
            if ginv[(m, mp)] == 0.0 {
                continue;
            }
            // Contract the 4-tensors through the metric.
            let mut acc = 0.0;
            let mut raised = nabla[mp];
            for _ in 0..4 {
                let mut next = [[[[0.0; N]; N]; N]; N];
                for a in 0..N {
                    for b in 0..N {
                        for c in 0..N {
                            for d in 0..N {
                                next[b][c][d][a] =
                                    (0..N).map(|e| ginv[(a, e)] * raised[e][b][c][d]).sum();
                            }
                        }
                    }
                }
                raised = next;
            }
            for a in 0..N {
                for b in 0..N {
                    for c in 0..N {
                        for d in 0..N {
                            acc += nabla[m][a][b][c][d] * raised[a][b][c][d];
                        }
                    }
                }
            }
            total += ginv[(m, mp)] * acc;
        }
    }
    Ok(total.max(0.0).sqrt())
}

/// Samples curvature at `samples` and compares with the declared bounds.
/// `k_max >= 1` additionally estimates `|∇R|`; higher orders are not computed.
pub fn validate_bounded_geometry<const N: usize>(
    spec: &ManifoldSpec<N>,
    samples: &[Point<N>],
    k_max: usize,
) -> Result<CurvatureReport> {
    let mut out = Vec::with_capacity(samples.len());
    for x in samples {
        let r = riemann_lower(spec, x)?;
        let g = spec.metric_raw(x);
        let ginv = g.try_inverse().expect("SPD metric");
        let norm = full_contraction_4(&r, &ginv).max(0.0).sqrt();
        let mut sectional = Vec::new();
        for a in 0..N {
            for b in (a + 1)..N {
                let area = g[(a, a)] * g[(b, b)] - g[(a, b)] * g[(a, b)];
                sectional.push(r[a][b][a][b] / area);
            }
        }
        let nabla = if k_max >= 1 {
            Some(nabla_riemann_norm(spec, x)?)
        } else {
            None
        };
        out.push(CurvatureSample {
            point: x.iter().copied().collect(),
            riemann_norm: norm,
            nabla_riemann_norm: nabla,
            sectional,
        });
    }
    let max_riemann = out.iter().map(|s| s.riemann_norm).fold(0.0, f64::max);
    let max_nabla = if k_max >= 1 {
        Some(
            out.iter()
                .filter_map(|s| s.nabla_riemann_norm)
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    let all_sec = out.iter().flat_map(|s| s.sectional.iter().copied());
    let (min_sectional, max_sectional) = all_sec.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let mut violations = Vec::new();
    if let Some(b) = spec.curvature_bounds {
        // Absolute floor covers finite-difference noise against zero bounds.
        let exceeds = |est: f64, bound: f64| est > 1.1 * bound + CURVATURE_NOISE_FLOOR;
        if exceeds(max_riemann, b.riemann) {
            violations.push(format!(
                "|R| estimate {max_riemann:.6e} exceeds declared {:.6e}",
                b.riemann
            ));
        }
        if let Some(n) = max_nabla {
            if exceeds(n, b.nabla_riemann) {
                violations.push(format!(
                    "|∇R| estimate {n:.6e} exceeds declared {:.6e}",
                    b.nabla_riemann
                ));
            }
        }
    }
    Ok(CurvatureReport {
        samples: out,
        max_riemann,
        max_nabla_riemann: max_nabla,
        min_sectional,
        max_sectional,
        violations,
    })
}
