//! Birkhoff interpolation matrices of a grid.
//!
//! With L_j the Lagrange cardinal functions of the nodes,
//!
//! ```text
//!     Ba[k][j] =  int_{-1}^{tau_k} L_j(s) ds
//!     Bb[k][j] = -int_{tau_k}^{1}  L_j(s) ds
//! ```
//!
//! so that, given samples ydot_j of a derivative, the two anchored
//! reconstructions are y(-1) + Ba ydot and y(+1) + Bb ydot.
//!
//! Each cardinal is expanded in the Legendre basis with coefficients obtained
//! by Gauss quadrature of high enough degree to be exact, then integrated
//! termwise through int P_n = (P_{n+1} - P_{n-1}) / (2n+1). The column of
//! zeroth-order coefficients yields the Birkhoff quadrature weights
//! wB_j = int_{-1}^{1} L_j, which must reproduce the grid weights.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::grids::{self, Grid, GridFamily, GridKind, GridSpec};
use crate::poly;

#[derive(Clone, Debug)]
pub struct BirkhoffSystem {
    pub grid: Grid,
    pub ba: DMatrix<f64>,
    pub bb: DMatrix<f64>,
    pub wb: DVector<f64>,
}

/// Max-abs residuals of the structural identities. Identities that only hold
/// for particular kinds are `None` elsewhere.
#[derive(Clone, Copy, Debug)]
pub struct IdentityResiduals {
    /// max |Ba - Bb - 1 wB^T|: the a/b difference carries the weights in
    /// every row.
    pub prop3: f64,
    /// max |wB_j - grid weight_j|.
    pub weights_match: f64,
    /// Lobatto only: max |Ba + E Bb E| for the exchange matrix E.
    pub exchange: Option<f64>,
    /// Lobatto only: max |Ba[N][j] - wB_j|.
    pub last_row: Option<f64>,
    /// Grids containing tau_0 = -1: max |Ba[0][j]|.
    pub row0: Option<f64>,
}

impl IdentityResiduals {
    pub fn worst(&self) -> f64 {
        [
            Some(self.prop3),
            Some(self.weights_match),
            self.exchange,
            self.last_row,
            self.row0,
        ]
        .into_iter()
        .flatten()
        .fold(0.0, f64::max)
    }
}

/// Condition numbers of the transcription blocks built from one grid.
#[derive(Clone, Copy, Debug)]
pub struct CondReport {
    pub order: usize,
    /// cond of [A_a, -C_a], the full linear constraint matrix.
    pub cond_full: f64,
    /// cond of [I, -Ba], the square-free sub-block.
    pub cond_block: f64,
}

/// Barycentric cardinal-function evaluator over fixed nodes. Weights are
/// normalized in log space so large orders cannot overflow the products.
struct Cardinals<'a> {
    nodes: &'a [f64],
    lambda: Vec<f64>,
}

impl<'a> Cardinals<'a> {
    fn new(nodes: &'a [f64]) -> Self {
        let n = nodes.len();
        let mut log_lambda = vec![0.0f64; n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                if i != j {
                    acc -= (nodes[j] - nodes[i]).abs().ln();
                }
            }
            log_lambda[j] = acc;
        }
        let top = log_lambda.iter().cloned().fold(f64::MIN, f64::max);
        let lambda = log_lambda
            .iter()
            .enumerate()
            .map(|(j, &l)| {
                // Ascending nodes: sign of prod (tau_j - tau_i) is (-1)^(n-1-j).
                let sign = if (n - 1 - j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * (l - top).exp()
            })
            .collect();
        Cardinals { nodes, lambda }
    }

    /// Values of every cardinal at `x`, written into `out`.
    fn eval_all(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.nodes.len());
        for (i, &t) in self.nodes.iter().enumerate() {
            if x == t {
                out.fill(0.0);
                out[i] = 1.0;
                return;
            }
        }
        let mut denom = 0.0;
        for (o, (&l, &t)) in out.iter_mut().zip(self.lambda.iter().zip(self.nodes)) {
            let term = l / (x - t);
            *o = term;
            denom += term;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
    }
}

/// Builds Ba, Bb, and the Birkhoff weights for a grid.
pub fn build_birkhoff(grid: &Grid) -> Result<BirkhoffSystem> {
    let n = grid.order();
    let num = grid.num_nodes();

    // Gauss rule exact through degree 2(N+1)+1, enough for cardinal times
    // Legendre products of degree 2N.
    let quad = grids::make_grid(GridSpec::new(
        GridFamily::Legendre,
        GridKind::Gauss,
        n + 1,
    )?)?;
    let m = quad.num_nodes();

    // lmat[j][q] = L_j(x_q), pmat[r][q] = P_r(x_q) for r = 0..N+1.
    let cards = Cardinals::new(&grid.nodes);
    let mut lmat = DMatrix::zeros(num, m);
    let mut col = vec![0.0; num];
    for q in 0..m {
        cards.eval_all(quad.nodes[q], &mut col);
        for j in 0..num {
            lmat[(j, q)] = col[j];
        }
    }
    let mut pmat = DMatrix::zeros(num + 1, m);
    let mut prow = vec![0.0; num + 1];
    for q in 0..m {
        poly::legendre_row(num, quad.nodes[q], &mut prow);
        for r in 0..=num {
            pmat[(r, q)] = prow[r];
        }
    }

    // coeff[j][r] = (2r+1)/2 * sum_q gw_q L_j(x_q) P_r(x_q), r = 0..N.
    let gw = DMatrix::from_diagonal(&DVector::from_column_slice(&quad.weights));
    let mut coeff = &lmat * &gw * pmat.rows(0, num).transpose();
    for r in 0..num {
        let scale = (2 * r + 1) as f64 / 2.0;
        for j in 0..num {
            coeff[(j, r)] *= scale;
        }
    }

    // phi_a[k][r] = int_{-1}^{tau_k} P_r, phi_b[k][r] = -int_{tau_k}^{1} P_r.
    // For r >= 1 both equal (P_{r+1} - P_{r-1})/(2r+1) at tau_k; the constant
    // term integrates to tau_k + 1 and tau_k - 1 respectively.
    let mut phi_a = DMatrix::zeros(num, num);
    let mut phi_b = DMatrix::zeros(num, num);
    let mut pnode = vec![0.0; num + 1];
    for k in 0..num {
        let t = grid.nodes[k];
        poly::legendre_row(num, t, &mut pnode);
        phi_a[(k, 0)] = t + 1.0;
        phi_b[(k, 0)] = t - 1.0;
        for r in 1..num {
            let v = (pnode[r + 1] - pnode[r - 1]) / ((2 * r + 1) as f64);
            phi_a[(k, r)] = v;
            phi_b[(k, r)] = v;
        }
    }

    let ba = &phi_a * coeff.transpose();
    let bb = &phi_b * coeff.transpose();
    let wb = DVector::from_fn(num, |j, _| 2.0 * coeff[(j, 0)]);

    Ok(BirkhoffSystem {
        grid: grid.clone(),
        ba,
        bb,
        wb,
    })
}

impl BirkhoffSystem {
    /// A_a = [[I, -Ba], [0^T, wB^T]], shape (N+2) x (2N+2).
    pub fn a_matrix(&self) -> DMatrix<f64> {
        let num = self.grid.num_nodes();
        let mut a = DMatrix::zeros(num + 1, 2 * num);
        for k in 0..num {
            a[(k, k)] = 1.0;
            for j in 0..num {
                a[(k, num + j)] = -self.ba[(k, j)];
            }
        }
        for j in 0..num {
            a[(num, num + j)] = self.wb[j];
        }
        a
    }

    /// C_a = [[1, 0], ..., [1, 0], [-1, 1]], shape (N+2) x 2.
    pub fn c_matrix(&self) -> DMatrix<f64> {
        let num = self.grid.num_nodes();
        let mut c = DMatrix::zeros(num + 1, 2);
        for k in 0..num {
            c[(k, 0)] = 1.0;
        }
        c[(num, 0)] = -1.0;
        c[(num, 1)] = 1.0;
        c
    }
}

/// Max-abs residuals of the structural identities of one Birkhoff system.
pub fn identity_residuals(sys: &BirkhoffSystem) -> IdentityResiduals {
    let num = sys.grid.num_nodes();
    let n = num - 1;

    let mut prop3 = 0.0f64;
    for k in 0..num {
        for j in 0..num {
            prop3 = prop3.max((sys.ba[(k, j)] - sys.bb[(k, j)] - sys.wb[j]).abs());
        }
    }

    let mut weights_match = 0.0f64;
    for j in 0..num {
        weights_match = weights_match.max((sys.wb[j] - sys.grid.weights[j]).abs());
    }

    let exchange = (sys.grid.spec.kind == GridKind::Lobatto).then(|| {
        let mut r = 0.0f64;
        for k in 0..num {
            for j in 0..num {
                // (E Bb E)[k][j] = Bb[N-k][N-j]
                r = r.max((sys.ba[(k, j)] + sys.bb[(n - k, n - j)]).abs());
            }
        }
        r
    });

    let last_row = (sys.grid.spec.kind == GridKind::Lobatto).then(|| {
        (0..num).fold(0.0f64, |r, j| r.max((sys.ba[(n, j)] - sys.wb[j]).abs()))
    });

    let row0 = sys.grid.spec.has_left_endpoint().then(|| {
        (0..num).fold(0.0f64, |r, j| r.max(sys.ba[(0, j)].abs()))
    });

    IdentityResiduals {
        prop3,
        weights_match,
        exchange,
        last_row,
        row0,
    }
}

fn cond_of(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &s in sv.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    hi / lo
}

/// Condition numbers of [A_a, -C_a] and of the sub-block [I, -Ba].
pub fn condition_report(grid: &Grid) -> Result<CondReport> {
    let sys = build_birkhoff(grid)?;
    let num = grid.num_nodes();

    let a = sys.a_matrix();
    let c = sys.c_matrix();
    let mut full = DMatrix::zeros(num + 1, 2 * num + 2);
    full.view_mut((0, 0), (num + 1, 2 * num)).copy_from(&a);
    for k in 0..num + 1 {
        full[(k, 2 * num)] = -c[(k, 0)];
        full[(k, 2 * num + 1)] = -c[(k, 1)];
    }

    let mut block = DMatrix::zeros(num, 2 * num);
    for k in 0..num {
        block[(k, k)] = 1.0;
        for j in 0..num {
            block[(k, num + j)] = -sys.ba[(k, j)];
        }
    }

    Ok(CondReport {
        order: grid.order(),
        cond_full: cond_of(&full),
        cond_block: cond_of(&block),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn system(code: &str, order: usize) -> BirkhoffSystem {
        let g = grids::make_grid(GridSpec::from_code(code, order).unwrap()).unwrap();
        build_birkhoff(&g).unwrap()
    }

    #[test]
    fn lobatto_order_one_closed_form() {
        // Nodes {-1, 1}: L_0 = (1-t)/2, L_1 = (1+t)/2, integrals by hand.
        for code in ["cgl", "lgl"] {
            let sys = system(code, 1);
            let want_ba = [[0.0, 0.0], [1.0, 1.0]];
            let want_bb = [[-1.0, -1.0], [0.0, 0.0]];
            for k in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(sys.ba[(k, j)], want_ba[k][j], epsilon = 1e-14);
                    assert_abs_diff_eq!(sys.bb[(k, j)], want_bb[k][j], epsilon = 1e-14);
                }
                assert_abs_diff_eq!(sys.wb[k], 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn lobatto_order_two_closed_form() {
        // Nodes {-1, 0, 1}: cardinals t(t-1)/2, 1-t^2, t(t+1)/2; the middle
        // row integrates them over [-1, 0].
        let sys = system("cgl", 2);
        let want_ba = [
            [0.0, 0.0, 0.0],
            [5.0 / 12.0, 2.0 / 3.0, -1.0 / 12.0],
            [1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0],
        ];
        for k in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(sys.ba[(k, j)], want_ba[k][j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn identities_hold_across_kinds_and_orders() {
        for code in ["lgl", "lgr", "lg", "cgl", "cgr", "cg"] {
            for order in [1, 2, 3, 5, 8, 16, 32] {
                let sys = system(code, order);
                let r = identity_residuals(&sys);
                assert!(r.worst() <= 1e-11, "{code} N={order}: {r:?}");
                match sys.grid.spec.kind {
                    GridKind::Lobatto => {
                        assert!(r.exchange.is_some() && r.last_row.is_some() && r.row0.is_some())
                    }
                    GridKind::Radau => {
                        assert!(r.exchange.is_none() && r.last_row.is_none() && r.row0.is_some())
                    }
                    GridKind::Gauss => {
                        assert!(r.exchange.is_none() && r.last_row.is_none() && r.row0.is_none())
                    }
                }
            }
        }
    }

    #[test]
    fn last_row_reproduces_clenshaw_curtis_weights() {
        let sys = system("cgl", 16);
        for j in 0..17 {
            assert!(
                (sys.ba[(16, j)] - sys.grid.weights[j]).abs() <= 1e-12,
                "column {j}"
            );
        }
    }

    #[test]
    fn a_form_reconstructs_polynomials() {
        for code in ["lgl", "lgr", "lg", "cgl", "cgr", "cg"] {
            for order in [1, 2, 4, 9, 16] {
                let sys = system(code, order);
                let nodes = &sys.grid.nodes;
                for m in 0..=order {
                    let y: Vec<f64> = nodes.iter().map(|t| t.powi(m as i32)).collect();
                    let ydot = DVector::from_iterator(
                        nodes.len(),
                        nodes.iter().map(|t| {
                            if m == 0 {
                                0.0
                            } else {
                                m as f64 * t.powi(m as i32 - 1)
                            }
                        }),
                    );
                    let ya = if m == 0 { 1.0 } else { (-1.0f64).powi(m as i32) };
                    let rec_a = &sys.ba * &ydot;
                    let rec_b = &sys.bb * &ydot;
                    for k in 0..nodes.len() {
                        assert!(
                            (ya + rec_a[k] - y[k]).abs() <= 1e-12,
                            "{code} N={order} m={m} a-form node {k}"
                        );
                        assert!(
                            (1.0 + rec_b[k] - y[k]).abs() <= 1e-12,
                            "{code} N={order} m={m} b-form node {k}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn ab_discrepancy_vanishes_for_smooth_functions() {
        // The two anchored reconstructions of e^t differ by the quadrature
        // defect of its derivative, which is negligible by N = 20.
        for code in ["lgl", "lgr", "lg", "cgl", "cgr", "cg"] {
            let sys = system(code, 20);
            let ydot = DVector::from_iterator(
                sys.grid.num_nodes(),
                sys.grid.nodes.iter().map(|t| t.exp()),
            );
            let rec_a = &sys.ba * &ydot;
            let rec_b = &sys.bb * &ydot;
            let ya = (-1.0f64).exp();
            let yb = 1.0f64.exp();
            for k in 0..sys.grid.num_nodes() {
                assert!(
                    ((ya + rec_a[k]) - (yb + rec_b[k])).abs() <= 1e-10,
                    "{code} node {k}"
                );
            }
        }
    }

    #[test]
    fn assembled_blocks_match_order_one_example() {
        let sys = system("cgl", 1);
        let a = sys.a_matrix();
        let want_a = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, -1.0, -1.0],
            [0.0, 0.0, 1.0, 1.0],
        ];
        for k in 0..3 {
            for j in 0..4 {
                assert_abs_diff_eq!(a[(k, j)], want_a[k][j], epsilon = 1e-14);
            }
        }
        let c = sys.c_matrix();
        let want_c = [[1.0, 0.0], [1.0, 0.0], [-1.0, 1.0]];
        for k in 0..3 {
            for j in 0..2 {
                assert_abs_diff_eq!(c[(k, j)], want_c[k][j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn condition_numbers_small_order_sanity() {
        let g = grids::make_grid(GridSpec::from_code("cgl", 50).unwrap()).unwrap();
        let r = condition_report(&g).unwrap();
        // The sub-block flatlines early; the full matrix tracks sqrt(N).
        assert!(r.cond_block > 1.3 && r.cond_block < 2.2, "{}", r.cond_block);
        let sqrt_n = (50.0f64).sqrt();
        assert!(
            r.cond_full > 0.6 * sqrt_n && r.cond_full < 1.6 * sqrt_n,
            "{}",
            r.cond_full
        );
    }

    #[test]
    fn order_guard() {
        let g = grids::make_grid(GridSpec::from_code("cgl", 8).unwrap()).unwrap();
        assert!(build_birkhoff(&g).is_ok());
        assert!(GridSpec::from_code("cgl", grids::MAX_ORDER + 1).is_err());
    }
}
