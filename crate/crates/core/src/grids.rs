//! The six Gegenbauer grids on [-1, 1] and their quadrature weights.
//!
//! A grid of order N has N + 1 nodes. The Chebyshev family comes from the
//! cosine map tau_j = -cos(pi xi_j) with
//!
//! ```text
//!     Lobatto: xi_j = j/N          Radau: xi_j = 2j/(2N+1)      Gauss: xi_j = (2j+1)/(2N+2)
//! ```
//!
//! and the Legendre family collects the N + 1 roots of
//!
//! ```text
//!     Lobatto: (1-tau^2) P'_N      Radau: P_N + P_{N+1}         Gauss: P_{N+1},
//! ```
//!
//! found by Newton iteration seeded with the same-kind Chebyshev nodes.
//! Weights are the interpolatory quadrature weights of each node set:
//! closed forms for the Legendre grids, Clenshaw-Curtis and Fejer cosine
//! sums for the Chebyshev grids.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::poly;

/// Largest supported grid order.
pub const MAX_ORDER: usize = 4096;

/// Newton stops when |z| <= NEWTON_TOL * max(1, |z'|).
const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITERS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFamily {
    Legendre,
    Chebyshev,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Lobatto,
    Radau,
    Gauss,
}

/// Grid identity: family, kind, and order N (N + 1 nodes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub family: GridFamily,
    pub kind: GridKind,
    pub order: usize,
}

impl GridSpec {
    pub fn new(family: GridFamily, kind: GridKind, order: usize) -> Result<Self> {
        check_order(order)?;
        Ok(GridSpec { family, kind, order })
    }

    pub fn num_nodes(&self) -> usize {
        self.order + 1
    }

    /// Short code used by the command line and file formats: lgl, lgr, lg,
    /// cgl, cgr, cg.
    pub fn code(&self) -> &'static str {
        match (self.family, self.kind) {
            (GridFamily::Legendre, GridKind::Lobatto) => "lgl",
            (GridFamily::Legendre, GridKind::Radau) => "lgr",
            (GridFamily::Legendre, GridKind::Gauss) => "lg",
            (GridFamily::Chebyshev, GridKind::Lobatto) => "cgl",
            (GridFamily::Chebyshev, GridKind::Radau) => "cgr",
            (GridFamily::Chebyshev, GridKind::Gauss) => "cg",
        }
    }

    pub fn from_code(code: &str, order: usize) -> Result<Self> {
        let (family, kind) = match code {
            "lgl" => (GridFamily::Legendre, GridKind::Lobatto),
            "lgr" => (GridFamily::Legendre, GridKind::Radau),
            "lg" => (GridFamily::Legendre, GridKind::Gauss),
            "cgl" => (GridFamily::Chebyshev, GridKind::Lobatto),
            "cgr" => (GridFamily::Chebyshev, GridKind::Radau),
            "cg" => (GridFamily::Chebyshev, GridKind::Gauss),
            other => {
                return Err(Error::UnknownProblem(
                    other.to_string(),
                    "lgl, lgr, lg, cgl, cgr, cg".to_string(),
                ))
            }
        };
        GridSpec::new(family, kind, order)
    }

    /// Whether tau_0 = -1 belongs to the grid.
    pub fn has_left_endpoint(&self) -> bool {
        matches!(self.kind, GridKind::Lobatto | GridKind::Radau)
    }

    /// Whether tau_N = +1 belongs to the grid.
    pub fn has_right_endpoint(&self) -> bool {
        self.kind == GridKind::Lobatto
    }
}

/// Nodes and quadrature weights of one grid, ascending in tau.
#[derive(Clone, Debug)]
pub struct Grid {
    pub spec: GridSpec,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid {
    pub fn order(&self) -> usize {
        self.spec.order
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }
}

fn check_order(order: usize) -> Result<()> {
    if order < 1 {
        return Err(Error::OrderTooSmall(order));
    }
    if order > MAX_ORDER {
        return Err(Error::OrderTooLarge(order, MAX_ORDER));
    }
    Ok(())
}

/// Chebyshev nodes of the requested kind, ascending. Lobatto endpoints are
/// pinned to exactly -1 and +1 (the cosine map lands within one ulp).
pub fn chebyshev_nodes(kind: GridKind, order: usize) -> Result<Vec<f64>> {
    check_order(order)?;
    let n = order as f64;
    let mut nodes: Vec<f64> = (0..=order)
        .map(|j| {
            let xi = match kind {
                GridKind::Lobatto => j as f64 / n,
                GridKind::Radau => 2.0 * j as f64 / (2.0 * n + 1.0),
                GridKind::Gauss => (2.0 * j as f64 + 1.0) / (2.0 * n + 2.0),
            };
            -(PI * xi).cos()
        })
        .collect();
    match kind {
        GridKind::Lobatto => {
            nodes[0] = -1.0;
            nodes[order] = 1.0;
        }
        GridKind::Radau => nodes[0] = -1.0,
        GridKind::Gauss => {}
    }
    Ok(nodes)
}

/// Legendre nodes of the requested kind: Newton iteration on the defining
/// polynomial, seeded with the same-kind Chebyshev nodes.
pub fn legendre_nodes(kind: GridKind, order: usize) -> Result<Vec<f64>> {
    check_order(order)?;
    let seeds = chebyshev_nodes(kind, order)?;
    let n = order;
    let mut nodes = seeds;
    match kind {
        GridKind::Lobatto => {
            // Interior nodes are roots of z = (1-t^2) P'_N = N (P_{N-1} - t P_N),
            // whose derivative collapses to z' = -N(N+1) P_N by the Legendre ODE.
            nodes[0] = -1.0;
            nodes[n] = 1.0;
            for j in 1..n {
                nodes[j] = newton_root("lgl", j, nodes[j], |t| {
                    let (pn, pn1) = poly::legendre_pair(n, t);
                    let nf = n as f64;
                    (nf * (pn1 - t * pn), -nf * (nf + 1.0) * pn)
                })?;
            }
        }
        GridKind::Radau => {
            // z = P_N + P_{N+1} always vanishes at t = -1; the other N roots
            // are interior.
            nodes[0] = -1.0;
            for j in 1..=n {
                nodes[j] = newton_root("lgr", j, nodes[j], |t| {
                    let (pn1, pn) = poly::legendre_pair(n + 1, t);
                    let z = pn + pn1;
                    let dz = poly::legendre_deriv(n, t) + poly::legendre_deriv(n + 1, t);
                    (z, dz)
                })?;
            }
        }
        GridKind::Gauss => {
            for j in 0..=n {
                nodes[j] = newton_root("lg", j, nodes[j], |t| {
                    let (pn1, pn) = poly::legendre_pair(n + 1, t);
                    let nf = (n + 1) as f64;
                    (pn1, nf * (pn - t * pn1) / (1.0 - t * t))
                })?;
            }
        }
    }
    if kind != GridKind::Radau {
        symmetrize(&mut nodes);
    }
    for j in 1..nodes.len() {
        if !(nodes[j] > nodes[j - 1]) {
            return Err(Error::RootFailure {
                kind: format!("legendre-{:?}", kind).to_lowercase(),
                index: j,
            });
        }
    }
    Ok(nodes)
}

fn newton_root(
    kind: &str,
    index: usize,
    seed: f64,
    f: impl Fn(f64) -> (f64, f64),
) -> Result<f64> {
    let mut t = seed;
    for _ in 0..NEWTON_MAX_ITERS {
        let (z, dz) = f(t);
        if z.abs() <= NEWTON_TOL * dz.abs().max(1.0) {
            // One polishing step: the stopping bound alone leaves ~1e-14 in
            // the node, which the weight formulas amplify.
            let step = z / dz;
            if step.is_finite() {
                t -= step;
            }
            return Ok(t);
        }
        let step = z / dz;
        if !step.is_finite() {
            break;
        }
        t -= step;
    }
    Err(Error::RootFailure {
        kind: kind.to_string(),
        index,
    })
}

/// Averages mirror pairs so symmetric grids are symmetric to the last bit.
fn symmetrize(nodes: &mut [f64]) {
    let n = nodes.len();
    for j in 0..n / 2 {
        let s = 0.5 * (nodes[j] - nodes[n - 1 - j]);
        nodes[j] = s;
        nodes[n - 1 - j] = -s;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
}

/// Quadrature weights paired with the given nodes. Legendre kinds use the
/// classical closed forms; Chebyshev kinds use explicit cosine sums
/// (Clenshaw-Curtis for Lobatto, Fejer for Radau and Gauss).
pub fn quadrature_weights(spec: &GridSpec, nodes: &[f64]) -> Result<Vec<f64>> {
    check_order(spec.order)?;
    if nodes.len() != spec.num_nodes() {
        return Err(Error::LengthMismatch {
            nodes: nodes.len(),
            weights: spec.num_nodes(),
        });
    }
    let n = spec.order;
    let w = match (spec.family, spec.kind) {
        (GridFamily::Legendre, GridKind::Lobatto) => {
            let c = 2.0 / (n as f64 * (n + 1) as f64);
            nodes
                .iter()
                .map(|&t| {
                    let p = poly::legendre(n, t);
                    c / (p * p)
                })
                .collect()
        }
        (GridFamily::Legendre, GridKind::Radau) => {
            let c = ((n + 1) as f64).powi(2);
            nodes
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    if j == 0 {
                        2.0 / c
                    } else {
                        let p = poly::legendre(n, t);
                        (1.0 - t) / (c * p * p)
                    }
                })
                .collect()
        }
        (GridFamily::Legendre, GridKind::Gauss) => nodes
            .iter()
            .map(|&t| {
                let dp = poly::legendre_deriv(n + 1, t);
                2.0 / ((1.0 - t * t) * dp * dp)
            })
            .collect(),
        (GridFamily::Chebyshev, GridKind::Lobatto) => clenshaw_curtis_weights(n),
        (GridFamily::Chebyshev, GridKind::Radau) => chebyshev_radau_weights(n),
        (GridFamily::Chebyshev, GridKind::Gauss) => fejer_weights(n),
    };
    Ok(w)
}

/// Clenshaw-Curtis weights for the N + 1 Lobatto angles theta_j = j pi / N:
///
/// ```text
///     w_j = (c_j / N) [1 - sum_{k=1}^{floor(N/2)} b_k cos(2 k theta_j) / (4k^2 - 1)]
/// ```
///
/// with b_k = 2 except b_{N/2} = 1 for even N, and c_j = 2 except at the ends.
fn clenshaw_curtis_weights(n: usize) -> Vec<f64> {
    let nf = n as f64;
    (0..=n)
        .map(|j| {
            let theta = j as f64 * PI / nf;
            let mut s = 0.0;
            for k in 1..=n / 2 {
                let b = if 2 * k == n { 1.0 } else { 2.0 };
                s += b * (2.0 * k as f64 * theta).cos() / ((4 * k * k - 1) as f64);
            }
            let c = if j == 0 || j == n { 1.0 } else { 2.0 };
            c / nf * (1.0 - s)
        })
        .collect()
}

/// Fejer weights for the N + 1 Gauss angles theta_j = (2j+1) pi / (2N+2):
///
/// ```text
///     w_j = (2 / n) [1 - 2 sum_{m=1}^{floor(n/2)} cos(2 m theta_j) / (4m^2 - 1)],  n = N + 1.
/// ```
fn fejer_weights(order: usize) -> Vec<f64> {
    let n = order + 1;
    let nf = n as f64;
    (0..n)
        .map(|j| {
            let theta = (2 * j + 1) as f64 * PI / (2.0 * nf);
            let mut s = 0.0;
            for m in 1..=n / 2 {
                s += (2.0 * m as f64 * theta).cos() / ((4 * m * m - 1) as f64);
            }
            2.0 / nf * (1.0 - 2.0 * s)
        })
        .collect()
}

/// Fejer-type weights for the Radau angles theta_j = 2 pi j / (2N+1).
///
/// The interpolatory conditions sum_j w_j T_m(tau_j) = int T_m, m = 0..N,
/// reduce under the discrete orthogonality of cos(m theta_j) on these angles
/// to an explicit cosine sum w_j = sum_m y_m cos(m theta_j) with
///
/// ```text
///     g_m = int_{-1}^{1} T_m = 2/(1 - m^2) for even m, 0 for odd m,
///     s   = (g_0 + 2 sum_{m>=1} g_m) / n,          n = 2N + 1,
///     y_0 = (2/n)(g_0 - s/2),   y_m = (4/n)(g_m - s/2).
/// ```
fn chebyshev_radau_weights(order: usize) -> Vec<f64> {
    let n = (2 * order + 1) as f64;
    let g: Vec<f64> = (0..=order)
        .map(|m| {
            if m % 2 == 0 {
                2.0 / (1.0 - (m * m) as f64)
            } else {
                0.0
            }
        })
        .collect();
    let s = (g[0] + 2.0 * g[1..].iter().sum::<f64>()) / n;
    let y: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(m, &gm)| {
            let scale = if m == 0 { 2.0 } else { 4.0 };
            scale / n * (gm - 0.5 * s)
        })
        .collect();
    (0..=order)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / n;
            y.iter()
                .enumerate()
                .map(|(m, &ym)| ym * (m as f64 * theta).cos())
                .sum()
        })
        .collect()
}

/// Builds nodes and weights for the requested grid.
pub fn make_grid(spec: GridSpec) -> Result<Grid> {
    let nodes = match spec.family {
        GridFamily::Chebyshev => chebyshev_nodes(spec.kind, spec.order)?,
        GridFamily::Legendre => legendre_nodes(spec.kind, spec.order)?,
    };
    let weights = quadrature_weights(&spec, &nodes)?;
    Ok(Grid {
        spec,
        nodes,
        weights,
    })
}

/// Quadrature defect Q^N(y) = sum_i y(tau_i) w_i - int_{-1}^{1} y dtau,
/// with the exact integral supplied by the caller.
pub fn quadrature_defect(grid: &Grid, y: impl Fn(f64) -> f64, exact_integral: f64) -> f64 {
    let q: f64 = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .map(|(&t, &w)| y(t) * w)
        .sum();
    q - exact_integral
}

pub fn all_specs(order: usize) -> Result<Vec<GridSpec>> {
    ["lgl", "lgr", "lg", "cgl", "cgr", "cg"]
        .iter()
        .map(|code| GridSpec::from_code(code, order))
        .collect()
}
