//! Constrained minimization via an augmented Lagrangian, plus the pieces
//! that turn a solved transcription back into trajectory data: covector
//! extraction and grid-to-grid warm starting.
//!
//! The problem shape is
//!
//! ```text
//!     minimize f(z)   subject to   c(z) = 0,   g(z) <= 0,
//! ```
//!
//! handled through the shifted-penalty merit
//!
//! ```text
//!     L(z) = f + lambda' c + (rho/2) |c|^2
//!          + (1/(2 rho)) sum_i [ max(0, mu_i + rho g_i)^2 - mu_i^2 ].
//! ```
//!
//! Multipliers update by lambda += rho c and mu = max(0, mu + rho g) whenever
//! the shifted violation clears a tightening target; otherwise the penalty
//! grows. Inner iterations minimize the merit with damped BFGS (dense up to
//! a size cutoff, limited-memory above it) under a strong Wolfe line search.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grids::{make_grid, GridSpec};
use crate::transcription::{transcribe, OcpDefinition, TimeMode, TranscribedNlp};

/// Smooth NLP with equality constraints c = 0 and inequalities g <= 0.
/// Jacobians are exposed only through transposed products.
pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;
    fn objective(&self, z: &DVector<f64>) -> f64;
    fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64>;
    fn eval_eq(&self, z: &DVector<f64>, out: &mut DVector<f64>);
    fn eval_ineq(&self, z: &DVector<f64>, out: &mut DVector<f64>);
    /// out += J_eq(z)^T v.
    fn eq_jac_tmul(&self, z: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>);
    /// out += J_ineq(z)^T v.
    fn ineq_jac_tmul(&self, z: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>);
    /// Whether the forward products below are available; they unlock the
    /// Gauss-Newton inner minimizer.
    fn has_jac_mul(&self) -> bool {
        false
    }
    /// out += J_eq(z) w.
    fn eq_jac_mul(&self, _z: &DVector<f64>, _w: &DVector<f64>, _out: &mut DVector<f64>) {
        unimplemented!("forward equality Jacobian product not provided")
    }
    /// out += J_ineq(z) w.
    fn ineq_jac_mul(&self, _z: &DVector<f64>, _w: &DVector<f64>, _out: &mut DVector<f64>) {
        unimplemented!("forward inequality Jacobian product not provided")
    }
    /// Visits every nonzero of both Jacobians as (row, col, value), with the
    /// inequality rows shifted up by `num_eq`. Powers the Gauss-Newton
    /// preconditioner; the default provides nothing.
    fn visit_jacobian_entries(&self, _z: &DVector<f64>, _sink: &mut dyn FnMut(usize, usize, f64)) {
    }
    /// Column groups whose Gauss-Newton coupling deserves a dense block in
    /// the preconditioner; columns not listed get a plain diagonal. Empty
    /// means no preconditioner at all.
    fn gn_precond_blocks(&self) -> Vec<Vec<usize>> {
        Vec::new()
    }
    /// Columns that couple to everything, free time above all, kept exactly
    /// in the preconditioner through a border instead of a block.
    fn gn_precond_tail(&self) -> Vec<usize> {
        Vec::new()
    }
}

impl Nlp for TranscribedNlp {
    fn num_vars(&self) -> usize {
        self.layout.n_vars
    }
    fn num_eq(&self) -> usize {
        self.layout.n_eq
    }
    fn num_ineq(&self) -> usize {
        self.layout.n_ineq
    }
    fn objective(&self, z: &DVector<f64>) -> f64 {
        TranscribedNlp::objective(self, z)
    }
    fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
        TranscribedNlp::objective_grad(self, z)
    }
    fn eval_eq(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        self.eq_constraints(z, out);
    }
    fn eval_ineq(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        self.ineq_constraints(z, out);
    }
    fn eq_jac_tmul(&self, z: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        TranscribedNlp::eq_jac_tmul(self, z, v, out);
    }
    fn has_jac_mul(&self) -> bool {
        true
    }
    fn eq_jac_mul(&self, z: &DVector<f64>, w: &DVector<f64>, out: &mut DVector<f64>) {
        TranscribedNlp::eq_jac_mul(self, z, w, out);
    }
    fn ineq_jac_mul(&self, z: &DVector<f64>, w: &DVector<f64>, out: &mut DVector<f64>) {
        TranscribedNlp::ineq_jac_mul(self, z, w, out);
    }
    fn ineq_jac_tmul(&self, z: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        TranscribedNlp::ineq_jac_tmul(self, z, v, out);
    }
    fn visit_jacobian_entries(&self, z: &DVector<f64>, sink: &mut dyn FnMut(usize, usize, f64)) {
        self.visit_eq_jacobian(z, &mut |r, c, v| sink(r, c, v));
        let shift = self.layout.n_eq;
        self.visit_ineq_jacobian(z, &mut |r, c, v| sink(r + shift, c, v));
    }
    fn gn_precond_blocks(&self) -> Vec<Vec<usize>> {
        // One block per state: its samples, its derivative samples, and its
        // endpoint values, the columns the dense Birkhoff rows couple. The
        // controls and parameters stay diagonal.
        let l = &self.layout;
        (0..l.nx)
            .map(|i| {
                let mut cols: Vec<usize> = (0..l.num_nodes).map(|k| l.x_idx(i, k)).collect();
                cols.extend((0..l.num_nodes).map(|k| l.v_idx(i, k)));
                cols.push(l.xa_idx(i));
                cols.push(l.xb_idx(i));
                cols
            })
            .collect()
    }
    fn gn_precond_tail(&self) -> Vec<usize> {
        let l = &self.layout;
        let mut cols: Vec<usize> = l.tb_off.into_iter().collect();
        cols.extend(l.p_off..l.p_off + l.np);
        cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Feasibility, stationarity, and complementarity all within tolerance.
    Optimal,
    /// Constraints satisfied but stationarity or complementarity are not.
    Feasible,
    MaxIterations,
    Diverged,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Feasible => "feasible",
            Status::MaxIterations => "max_iterations",
            Status::Diverged => "diverged",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// |grad f + J_eq' lambda + J_ineq' mu|_inf / (1 + multiplier scale).
    pub stationarity: f64,
    /// max(|c|_inf, |max(g, 0)|_inf).
    pub feasibility: f64,
    /// max_i |mu_i g_i| / (1 + |mu|_inf).
    pub complementarity: f64,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub comp_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rho0: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Variable count above which the inner solver switches from dense BFGS
    /// to limited memory.
    pub lbfgs_threshold: usize,
    pub lbfgs_memory: usize,
    /// Rescale variables so the constraint Jacobian columns have comparable
    /// norms at the initial point. Useful when the decision vector mixes
    /// very different magnitudes.
    pub scale_vars: bool,
    /// Minimize the inner merit by trust-region Gauss-Newton instead of a
    /// quasi-Newton line search. Needs the NLP's forward Jacobian products;
    /// pays off when the constraint coupling is global.
    pub gn_inner: bool,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            opt_tol: 1e-6,
            comp_tol: 1e-6,
            max_outer: 60,
            max_inner: 500,
            rho0: 10.0,
            rho_growth: 10.0,
            rho_max: 1e12,
            lbfgs_threshold: 1500,
            lbfgs_memory: 30,
            scale_vars: false,
            gn_inner: false,
            verbose: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: Status,
    pub z: DVector<f64>,
    pub objective: f64,
    /// Multipliers of the equality constraints, ordered as the NLP orders
    /// its rows.
    pub lambda_eq: DVector<f64>,
    /// Multipliers of the inequality constraints, nonnegative.
    pub mu_ineq: DVector<f64>,
    pub kkt: KktResiduals,
    pub outer_iters: usize,
    pub inner_iters: usize,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

fn pos_part_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b))
}

/// Merit value and gradient for fixed multipliers and penalty. Non-finite
/// anywhere collapses to (inf, None) so the line search backs away.
fn al_value_grad(
    nlp: &dyn Nlp,
    z: &DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
    rho: f64,
    c: &mut DVector<f64>,
    g: &mut DVector<f64>,
) -> (f64, Option<DVector<f64>>) {
    let f = nlp.objective(z);
    if !f.is_finite() {
        return (f64::INFINITY, None);
    }
    nlp.eval_eq(z, c);
    nlp.eval_ineq(z, g);
    if !c.iter().all(|v| v.is_finite()) || !g.iter().all(|v| v.is_finite()) {
        return (f64::INFINITY, None);
    }
    let mut val = f;
    for i in 0..c.len() {
        val += lam[i] * c[i] + 0.5 * rho * c[i] * c[i];
    }
    // Shifted multipliers double as the weights of the gradient products.
    let c_shift = DVector::from_fn(c.len(), |i, _| lam[i] + rho * c[i]);
    let g_shift = DVector::from_fn(g.len(), |i, _| (mu[i] + rho * g[i]).max(0.0));
    for i in 0..g.len() {
        val += (g_shift[i] * g_shift[i] - mu[i] * mu[i]) / (2.0 * rho);
    }
    if !val.is_finite() {
        return (f64::INFINITY, None);
    }
    let mut grad = nlp.objective_grad(z);
    if c.len() > 0 {
        nlp.eq_jac_tmul(z, &c_shift, &mut grad);
    }
    if g.len() > 0 {
        nlp.ineq_jac_tmul(z, &g_shift, &mut grad);
    }
    if !grad.iter().all(|v| v.is_finite()) {
        return (f64::INFINITY, None);
    }
    (val, Some(grad))
}

const WOLFE_C1: f64 = 1e-4;
const WOLFE_C2: f64 = 0.9;
const LS_MAX_BRACKET: usize = 20;
const LS_MAX_ZOOM: usize = 30;

struct LsPoint {
    a: f64,
    f: f64,
    d: f64,
    g: Option<DVector<f64>>,
}

/// Cubic minimizer of the interpolant through two value/slope samples;
/// falls back on the midpoint when the data do not pin one down.
fn cubic_trial(a0: f64, f0: f64, d0: f64, a1: f64, f1: f64, d1: f64) -> f64 {
    let mid = 0.5 * (a0 + a1);
    if !(f0.is_finite() && f1.is_finite() && d0.is_finite() && d1.is_finite()) {
        return mid;
    }
    let h = a1 - a0;
    if h == 0.0 {
        return mid;
    }
    let s = d0 + d1 - 3.0 * (f1 - f0) / h;
    let disc = s * s - d0 * d1;
    if disc < 0.0 {
        return mid;
    }
    let q = h.signum() * disc.sqrt();
    let denom = d1 - d0 + 2.0 * q;
    if denom == 0.0 {
        return mid;
    }
    let t = a1 - h * (d1 + q - s) / denom;
    if !t.is_finite() {
        return mid;
    }
    // Stay strictly inside the bracket.
    let (lo, hi) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let guard = 0.1 * (hi - lo);
    t.clamp(lo + guard, hi - guard)
}

fn zoom(
    eval: &mut dyn FnMut(f64) -> (f64, f64, Option<DVector<f64>>),
    phi0: f64,
    dphi0: f64,
    mut lo: LsPoint,
    mut hi: LsPoint,
) -> Option<(f64, f64, DVector<f64>)> {
    for _ in 0..LS_MAX_ZOOM {
        if (hi.a - lo.a).abs() <= 1e-16 * lo.a.abs().max(1.0) {
            break;
        }
        let a = cubic_trial(lo.a, lo.f, lo.d, hi.a, hi.f, hi.d);
        let (f_a, d_a, g_a) = eval(a);
        if !f_a.is_finite() || f_a > phi0 + WOLFE_C1 * a * dphi0 || f_a >= lo.f {
            hi = LsPoint {
                a,
                f: f_a,
                d: d_a,
                g: None,
            };
        } else {
            if d_a.abs() <= -WOLFE_C2 * dphi0 {
                return Some((a, f_a, g_a.expect("finite point carries gradient")));
            }
            if d_a * (hi.a - lo.a) >= 0.0 {
                hi = LsPoint {
                    a: lo.a,
                    f: lo.f,
                    d: lo.d,
                    g: None,
                };
            }
            lo = LsPoint {
                a,
                f: f_a,
                d: d_a,
                g: g_a,
            };
        }
    }
    // The bracket collapsed before the curvature condition held; the low
    // point still has sufficient decrease, so use it.
    if lo.a > 0.0 {
        if let Some(g) = lo.g {
            return Some((lo.a, lo.f, g));
        }
    }
    None
}

/// Strong Wolfe search along a descent direction. `eval` returns the merit
/// value, its slope along the direction, and the full gradient at the trial.
fn strong_wolfe(
    eval: &mut dyn FnMut(f64) -> (f64, f64, Option<DVector<f64>>),
    phi0: f64,
    dphi0: f64,
) -> Option<(f64, f64, DVector<f64>)> {
    let mut prev = LsPoint {
        a: 0.0,
        f: phi0,
        d: dphi0,
        g: None,
    };
    let mut alpha = 1.0;
    for it in 0..LS_MAX_BRACKET {
        let (f_a, d_a, g_a) = eval(alpha);
        if !f_a.is_finite() || f_a > phi0 + WOLFE_C1 * alpha * dphi0 || (it > 0 && f_a >= prev.f) {
            let hi = LsPoint {
                a: alpha,
                f: f_a,
                d: d_a,
                g: None,
            };
            return zoom(eval, phi0, dphi0, prev, hi);
        }
        let g_a = g_a.expect("finite point carries gradient");
        if d_a.abs() <= -WOLFE_C2 * dphi0 {
            return Some((alpha, f_a, g_a));
        }
        if d_a >= 0.0 {
            let lo = LsPoint {
                a: alpha,
                f: f_a,
                d: d_a,
                g: Some(g_a),
            };
            let hi = LsPoint {
                a: prev.a,
                f: prev.f,
                d: prev.d,
                g: None,
            };
            return zoom(eval, phi0, dphi0, lo, hi);
        }
        prev = LsPoint {
            a: alpha,
            f: f_a,
            d: d_a,
            g: Some(g_a),
        };
        alpha *= 2.0;
    }
    // Still descending after every expansion: accept the last point.
    prev.g.map(|g| (prev.a, prev.f, g))
}

enum HessApprox {
    Dense { h: DMatrix<f64>, fresh: bool },
    Lbfgs {
        mem: usize,
        pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)>,
        gamma: f64,
    },
}

impl HessApprox {
    fn new(n: usize, opts: &SolverOptions) -> Self {
        if n <= opts.lbfgs_threshold {
            HessApprox::Dense {
                h: DMatrix::identity(n, n),
                fresh: true,
            }
        } else {
            HessApprox::Lbfgs {
                mem: opts.lbfgs_memory.max(1),
                pairs: VecDeque::new(),
                gamma: 1.0,
            }
        }
    }

    fn reset(&mut self) {
        match self {
            HessApprox::Dense { h, fresh } => {
                h.fill_with_identity();
                *fresh = true;
            }
            HessApprox::Lbfgs { pairs, gamma, .. } => {
                pairs.clear();
                *gamma = 1.0;
            }
        }
    }

    /// Quasi-Newton step -H g. With a preconditioner the limited-memory
    /// seed becomes gamma M^-1 instead of gamma I, so the stored pairs only
    /// have to learn the curvature the model misses.
    fn direction(&self, g: &DVector<f64>, pre: Option<&GnPrecond>) -> DVector<f64> {
        match self {
            HessApprox::Dense { h, .. } => -(h * g),
            HessApprox::Lbfgs { pairs, gamma, .. } => {
                let mut q = g.clone();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, inv_sy) in pairs.iter().rev() {
                    let a = inv_sy * s.dot(&q);
                    q.axpy(-a, y, 1.0);
                    alphas.push(a);
                }
                match pre {
                    Some(p) => q = p.bwd(&p.fwd(&q)) * *gamma,
                    None => q *= *gamma,
                }
                for ((s, y, inv_sy), a) in pairs.iter().zip(alphas.iter().rev()) {
                    let b = inv_sy * y.dot(&q);
                    q.axpy(a - b, s, 1.0);
                }
                -q
            }
        }
    }

    fn update(&mut self, s: &DVector<f64>, y: &DVector<f64>, pre: Option<&GnPrecond>) {
        let sy = s.dot(y);
        // Skip updates with no usable curvature; the approximation stays PD.
        if sy <= 1e-8 * s.norm() * y.norm() {
            return;
        }
        match self {
            HessApprox::Dense { h, fresh } => {
                if *fresh {
                    let yy = y.dot(y);
                    if yy > 0.0 {
                        *h *= sy / yy;
                    }
                    *fresh = false;
                }
                let hy = &*h * y;
                let yhy = y.dot(&hy);
                h.ger((sy + yhy) / (sy * sy), s, s, 1.0);
                h.ger(-1.0 / sy, &hy, s, 1.0);
                h.ger(-1.0 / sy, s, &hy, 1.0);
            }
            HessApprox::Lbfgs { mem, pairs, gamma } => {
                let ymy = match pre {
                    Some(p) => y.dot(&p.bwd(&p.fwd(y))),
                    None => y.dot(y),
                };
                if ymy > 0.0 {
                    *gamma = sy / ymy;
                }
                pairs.push_back((s.clone(), y.clone(), 1.0 / sy));
                while pairs.len() > *mem {
                    pairs.pop_front();
                }
            }
        }
    }
}

#[derive(PartialEq)]
enum InnerOutcome {
    Converged,
    MaxIters,
    Stalled,
    Unbounded,
    BadPoint,
}

fn minimize_merit(
    nlp: &dyn Nlp,
    z: &mut DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
    rho: f64,
    omega: f64,
    opts: &SolverOptions,
    total_inner: &mut usize,
) -> InnerOutcome {
    let mut c = DVector::zeros(nlp.num_eq());
    let mut g = DVector::zeros(nlp.num_ineq());
    let (mut fval, grad0) = al_value_grad(nlp, z, lam, mu, rho, &mut c, &mut g);
    let mut grad = match grad0 {
        Some(gr) => gr,
        None => return InnerOutcome::BadPoint,
    };
    let pre = if opts.gn_inner {
        let me = nlp.num_eq();
        let mut rw = DVector::from_element(me + nlp.num_ineq(), rho);
        for i in 0..nlp.num_ineq() {
            rw[me + i] = if mu[i] + rho * g[i] > 0.0 { rho } else { 0.0 };
        }
        // The damping floors the model's soft modes, whose true curvature
        // comes from terms the Gauss-Newton product misses; without it the
        // seed amplifies those directions beyond what a line search can fix.
        GnPrecond::build(nlp, z, 1e-2 + 1e-8 * rho.max(1.0), &rw)
    } else {
        None
    };
    let pre = pre.as_ref();
    let mut hess = HessApprox::new(nlp.num_vars(), opts);
    let mut failed_once = false;
    for _ in 0..opts.max_inner {
        if inf_norm(&grad) <= omega {
            return InnerOutcome::Converged;
        }
        if fval < -opts.rho_max {
            return InnerOutcome::Unbounded;
        }
        *total_inner += 1;
        let mut d = hess.direction(&grad, pre);
        let mut dphi0 = grad.dot(&d);
        if !(dphi0 < 0.0) || !dphi0.is_finite() {
            hess.reset();
            d = -&grad;
            dphi0 = grad.dot(&d);
        }
        let mut eval = |alpha: f64| {
            let zt = &*z + &d * alpha;
            let (v, gr) = al_value_grad(nlp, &zt, lam, mu, rho, &mut c, &mut g);
            match gr {
                Some(gr) => {
                    let dp = gr.dot(&d);
                    (v, dp, Some(gr))
                }
                None => (f64::INFINITY, f64::INFINITY, None),
            }
        };
        match strong_wolfe(&mut eval, fval, dphi0) {
            Some((alpha, v_new, g_new)) => {
                let s = &d * alpha;
                let y = &g_new - &grad;
                hess.update(&s, &y, pre);
                *z += &s;
                fval = v_new;
                grad = g_new;
                failed_once = false;
            }
            None => {
                if failed_once {
                    return InnerOutcome::Stalled;
                }
                failed_once = true;
                hess.reset();
            }
        }
    }
    InnerOutcome::MaxIters
}

/// Step to the trust-region boundary: the positive tau with |d + tau p| =
/// delta.
fn boundary_tau(d: &DVector<f64>, p: &DVector<f64>, delta: f64) -> f64 {
    let dd = d.dot(d);
    let dp = d.dot(p);
    let pp = p.dot(p).max(1e-300);
    let disc = (dp * dp + pp * (delta * delta - dd)).max(0.0);
    (-dp + disc.sqrt()) / pp
}

/// Steihaug truncated CG on H d = -grad inside radius `delta`. Returns the
/// step, the iterations spent, and whether it stopped on the boundary.
fn steihaug_cg(
    hv: &mut dyn FnMut(&DVector<f64>, &mut DVector<f64>),
    grad: &DVector<f64>,
    delta: f64,
    tol: f64,
    maxcg: usize,
) -> (DVector<f64>, usize, bool) {
    let n = grad.len();
    let mut d = DVector::zeros(n);
    let mut r = -grad.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut hp = DVector::zeros(n);
    if rr.sqrt() <= tol {
        return (d, 0, false);
    }
    for iters in 1..=maxcg {
        hv(&p, &mut hp);
        let php = p.dot(&hp);
        if php <= 0.0 {
            // Flat or concave direction: the model keeps improving all the
            // way to the boundary.
            let tau = boundary_tau(&d, &p, delta);
            d.axpy(tau, &p, 1.0);
            return (d, iters, true);
        }
        let alpha = rr / php;
        let mut dn = d.clone();
        dn.axpy(alpha, &p, 1.0);
        if dn.norm() >= delta {
            let tau = boundary_tau(&d, &p, delta);
            d.axpy(tau, &p, 1.0);
            return (d, iters, true);
        }
        d = dn;
        r.axpy(-alpha, &hp, 1.0);
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= tol {
            return (d, iters, false);
        }
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    (d, maxcg, false)
}

/// Block-diagonal Cholesky preconditioner for the Gauss-Newton model. The
/// CG runs in the transformed space d_hat = L' d where the model becomes
/// L^-1 H L^-T, which collapses the wide singular-value spread the dense
/// Birkhoff rows give the raw model.
struct GnPrecond {
    /// Column group and lower Cholesky factor of each dense block.
    blocks: Vec<(Vec<usize>, DMatrix<f64>)>,
    /// Square roots of the model diagonal for the remaining columns.
    diag_sqrt: DVector<f64>,
    in_block: Vec<bool>,
    /// Bordered columns, kept exact against the rest of the factor:
    /// `tail_w` holds W = L^-1 C with C the model coupling of each tail
    /// column, `tail_l` the lower factor of the Schur complement D - W'W.
    tail: Vec<usize>,
    in_tail: Vec<bool>,
    tail_w: Vec<DVector<f64>>,
    tail_l: DMatrix<f64>,
}

impl GnPrecond {
    /// Assembles rho J'J restricted to the declared blocks plus the full
    /// diagonal, weighting each row by `row_weight` (zero drops the row).
    fn build(
        nlp: &dyn Nlp,
        z: &DVector<f64>,
        damp: f64,
        row_weight: &DVector<f64>,
    ) -> Option<GnPrecond> {
        let groups = nlp.gn_precond_blocks();
        if groups.is_empty() {
            return None;
        }
        let n = nlp.num_vars();
        let mut entries: Vec<(u32, u32, f64)> = Vec::new();
        nlp.visit_jacobian_entries(z, &mut |r, c, v| {
            if v != 0.0 && row_weight[r] != 0.0 {
                entries.push((r as u32, c as u32, v));
            }
        });
        if entries.is_empty() {
            return None;
        }
        entries.sort_unstable_by_key(|e| ((e.0 as u64) << 32) | e.1 as u64);

        let mut blk_of = vec![u32::MAX; n];
        let mut loc_of = vec![0u32; n];
        for (b, cols) in groups.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                blk_of[c] = b as u32;
                loc_of[c] = j as u32;
            }
        }
        let mut mats: Vec<DMatrix<f64>> = groups
            .iter()
            .map(|c| DMatrix::zeros(c.len(), c.len()))
            .collect();
        let mut diag = DVector::from_element(n, damp);
        let mut per_block: Vec<Vec<(u32, f64)>> = vec![Vec::new(); groups.len()];
        let mut touched: Vec<u32> = Vec::new();
        let mut i = 0;
        while i < entries.len() {
            let row = entries[i].0;
            let w = row_weight[row as usize];
            let mut j = i;
            while j < entries.len() && entries[j].0 == row {
                j += 1;
            }
            for e in &entries[i..j] {
                let c = e.1 as usize;
                diag[c] += w * e.2 * e.2;
                let b = blk_of[c];
                if b != u32::MAX {
                    if per_block[b as usize].is_empty() {
                        touched.push(b);
                    }
                    per_block[b as usize].push((loc_of[c], e.2));
                }
            }
            for &b in &touched {
                let list = &per_block[b as usize];
                let m = &mut mats[b as usize];
                for &(la, va) in list {
                    for &(lb, vb) in list {
                        m[(la as usize, lb as usize)] += w * va * vb;
                    }
                }
                per_block[b as usize].clear();
            }
            touched.clear();
            i = j;
        }

        let mut blocks = Vec::with_capacity(groups.len());
        for (cols, mut m) in groups.into_iter().zip(mats) {
            for k in 0..cols.len() {
                m[(k, k)] += damp;
            }
            let chol = nalgebra::linalg::Cholesky::new(m)?;
            blocks.push((cols, chol.unpack()));
        }
        let mut in_block = vec![false; n];
        for (cols, _) in &blocks {
            for &c in cols {
                in_block[c] = true;
            }
        }
        let diag_sqrt = diag.map(f64::sqrt);
        Some(GnPrecond {
            blocks,
            diag_sqrt,
            in_block,
        })
    }

    /// L^-1 v.
    fn fwd(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..out.len() {
            if !self.in_block[i] {
                out[i] /= self.diag_sqrt[i];
            }
        }
        for (cols, l) in &self.blocks {
            let mut b = DVector::from_fn(cols.len(), |j, _| v[cols[j]]);
            l.solve_lower_triangular_mut(&mut b);
            for (j, &c) in cols.iter().enumerate() {
                out[c] = b[j];
            }
        }
        out
    }

    /// L^-T v.
    fn bwd(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..out.len() {
            if !self.in_block[i] {
                out[i] /= self.diag_sqrt[i];
            }
        }
        for (cols, l) in &self.blocks {
            let mut b = DVector::from_fn(cols.len(), |j, _| v[cols[j]]);
            l.tr_solve_lower_triangular_mut(&mut b);
            for (j, &c) in cols.iter().enumerate() {
                out[c] = b[j];
            }
        }
        out
    }
}

/// Trust-region Gauss-Newton minimizer for the same merit. The model
/// curvature is the penalty's Gauss-Newton term rho (J'J on the equalities
/// plus the active inequality rows) with a little damping; each subproblem
/// runs matrix-free through Steihaug CG, so one CG iteration costs one
/// forward and one transpose Jacobian product. Worthwhile when constraint
/// coupling is global and quasi-Newton updates learn it too slowly.
fn minimize_merit_gn(
    nlp: &dyn Nlp,
    z: &mut DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
    rho: f64,
    omega: f64,
    opts: &SolverOptions,
    total_inner: &mut usize,
) -> InnerOutcome {
    let me = nlp.num_eq();
    let mi = nlp.num_ineq();
    let mut c = DVector::zeros(me);
    let mut g = DVector::zeros(mi);
    let (mut fval, grad0) = al_value_grad(nlp, z, lam, mu, rho, &mut c, &mut g);
    let mut grad = match grad0 {
        Some(gr) => gr,
        None => return InnerOutcome::BadPoint,
    };
    let mut g_cur = g.clone();
    let mut active = DVector::zeros(mi);
    let mut ye = DVector::zeros(me);
    let mut yi = DVector::zeros(mi);
    let mut hd = DVector::zeros(nlp.num_vars());
    let mut tmp = DVector::zeros(nlp.num_vars());
    // Same floor as the quasi-Newton seed: the objective owns the curvature
    // along the penalty's near-null modes, and the model must not treat
    // those directions as free.
    let damp = 1e-2 + 1e-8 * rho.max(1.0);

    let pre = {
        let mut rw = DVector::from_element(me + mi, rho);
        for i in 0..mi {
            rw[me + i] = if mu[i] + rho * g_cur[i] > 0.0 { rho } else { 0.0 };
        }
        GnPrecond::build(nlp, z, damp, &rw)
    };

    let mut delta = match &pre {
        Some(p) => p.fwd(&grad).norm(),
        None => 0.1 * (1.0 + z.norm()),
    };
    let mut rejects = 0usize;
    let mut used = 0usize;
    while used < opts.max_inner {
        if inf_norm(&grad) <= omega {
            return InnerOutcome::Converged;
        }
        if fval < -opts.rho_max {
            return InnerOutcome::Unbounded;
        }
        for i in 0..mi {
            active[i] = if mu[i] + rho * g_cur[i] > 0.0 { 1.0 } else { 0.0 };
        }
        let (d, cg_iters, on_boundary) = {
            let zc: &DVector<f64> = z;
            let mut hv = |w: &DVector<f64>, out: &mut DVector<f64>| {
                out.fill(0.0);
                out.axpy(damp, w, 1.0);
                if me > 0 {
                    ye.fill(0.0);
                    nlp.eq_jac_mul(zc, w, &mut ye);
                    ye *= rho;
                    nlp.eq_jac_tmul(zc, &ye, out);
                }
                if mi > 0 {
                    yi.fill(0.0);
                    nlp.ineq_jac_mul(zc, w, &mut yi);
                    for i in 0..mi {
                        yi[i] *= rho * active[i];
                    }
                    nlp.ineq_jac_tmul(zc, &yi, out);
                }
            };
            let maxcg = opts.max_inner - used;
            let (d, cg_iters, on_boundary) = match &pre {
                Some(p) => {
                    let ghat = p.fwd(&grad);
                    let gnorm = ghat.norm();
                    let tol = gnorm * 0.1f64.min(gnorm.sqrt());
                    let mut hv_hat = |w: &DVector<f64>, out: &mut DVector<f64>| {
                        let wt = p.bwd(w);
                        hv(&wt, &mut tmp);
                        *out = p.fwd(&tmp);
                    };
                    let (dhat, its, ob) = steihaug_cg(&mut hv_hat, &ghat, delta, tol, maxcg);
                    (p.bwd(&dhat), its, ob)
                }
                None => {
                    let gnorm = grad.norm();
                    let tol = gnorm * 0.1f64.min(gnorm.sqrt());
                    steihaug_cg(&mut hv, &grad, delta, tol, maxcg)
                }
            };
            hv(&d, &mut hd);
            (d, cg_iters, on_boundary)
        };
        used += cg_iters + 1;
        *total_inner += cg_iters + 1;
        let pred = -(grad.dot(&d) + 0.5 * d.dot(&hd));
        let zt = &*z + &d;
        let (ft, gr_t) = al_value_grad(nlp, &zt, lam, mu, rho, &mut c, &mut g);
        let ratio = if pred > 0.0 { (fval - ft) / pred } else { -1.0 };
        if std::env::var_os("GN_TRACE").is_some() {
            eprintln!(
                "  gn used {used:6}  cg {cg_iters:5}  |g| {:.2e}  |d| {:.2e}  delta {:.2e}  pred {:.2e}  ratio {:+.2e}  f {:.8e}",
                inf_norm(&grad),
                d.norm(),
                delta,
                pred,
                ratio,
                ft,
            );
        }
        match gr_t {
            Some(gr) if ratio > 1e-4 => {
                *z = zt;
                fval = ft;
                grad = gr;
                g_cur.copy_from(&g);
                if ratio > 0.75 && on_boundary {
                    delta *= 2.0;
                } else if ratio < 0.25 {
                    delta *= 0.5;
                }
                rejects = 0;
            }
            _ => {
                delta *= 0.25;
                rejects += 1;
                if delta < 1e-14 * (1.0 + z.norm()) || rejects > 30 {
                    return InnerOutcome::Stalled;
                }
            }
        }
    }
    InnerOutcome::MaxIters
}

/// Variable rescaling z = d .* zhat presented as another NLP.
struct ScaledNlp<'a> {
    inner: &'a dyn Nlp,
    d: DVector<f64>,
}

impl ScaledNlp<'_> {
    fn unscale(&self, zhat: &DVector<f64>) -> DVector<f64> {
        zhat.component_mul(&self.d)
    }
}

impl Nlp for ScaledNlp<'_> {
    fn num_vars(&self) -> usize {
        self.inner.num_vars()
    }
    fn num_eq(&self) -> usize {
        self.inner.num_eq()
    }
    fn num_ineq(&self) -> usize {
        self.inner.num_ineq()
    }
    fn objective(&self, z: &DVector<f64>) -> f64 {
        self.inner.objective(&self.unscale(z))
    }
    fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
        self.inner.objective_grad(&self.unscale(z)).component_mul(&self.d)
    }
    fn eval_eq(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        self.inner.eval_eq(&self.unscale(z), out);
    }
    fn eval_ineq(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        self.inner.eval_ineq(&self.unscale(z), out);
    }
    fn eq_jac_tmul(&self, z: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        let mut tmp = DVector::zeros(self.num_vars());
        self.inner.eq_jac_tmul(&self.unscale(z), v, &mut tmp);
        *out += tmp.component_mul(&self.d);
    }
    fn ineq_jac_tmul(&self, z: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        let mut tmp = DVector::zeros(self.num_vars());
        self.inner.ineq_jac_tmul(&self.unscale(z), v, &mut tmp);
        *out += tmp.component_mul(&self.d);
    }
    fn has_jac_mul(&self) -> bool {
        self.inner.has_jac_mul()
    }
    fn eq_jac_mul(&self, z: &DVector<f64>, w: &DVector<f64>, out: &mut DVector<f64>) {
        self.inner.eq_jac_mul(&self.unscale(z), &w.component_mul(&self.d), out);
    }
    fn ineq_jac_mul(&self, z: &DVector<f64>, w: &DVector<f64>, out: &mut DVector<f64>) {
        self.inner.ineq_jac_mul(&self.unscale(z), &w.component_mul(&self.d), out);
    }
    fn visit_jacobian_entries(&self, z: &DVector<f64>, sink: &mut dyn FnMut(usize, usize, f64)) {
        let d = &self.d;
        self.inner
            .visit_jacobian_entries(&self.unscale(z), &mut |r, c, v| sink(r, c, v * d[c]));
    }
    fn gn_precond_blocks(&self) -> Vec<Vec<usize>> {
        self.inner.gn_precond_blocks()
    }
    fn gn_precond_tail(&self) -> Vec<usize> {
        self.inner.gn_precond_tail()
    }
}

/// Per-variable scale factors that equalize the Jacobian column norms, the
/// diagonal of the Gauss-Newton curvature the penalty term imposes. The
/// norms are estimated through the transpose products with Rademacher
/// probes: for independent signs v, E[(J' v)_i^2] is exactly the squared
/// column norm.
fn column_norm_scaling(nlp: &dyn Nlp, z0: &DVector<f64>) -> DVector<f64> {
    let n = nlp.num_vars();
    let me = nlp.num_eq();
    let mi = nlp.num_ineq();
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut sign = move || -> f64 {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        if state & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    };
    let probes = 32;
    let mut colsq = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    for _ in 0..probes {
        y.fill(0.0);
        let ve = DVector::from_fn(me, |_, _| sign());
        nlp.eq_jac_tmul(z0, &ve, &mut y);
        if mi > 0 {
            let vi = DVector::from_fn(mi, |_, _| sign());
            nlp.ineq_jac_tmul(z0, &vi, &mut y);
        }
        for i in 0..n {
            colsq[i] += y[i] * y[i];
        }
    }
    let norm = colsq.map(|c: f64| (c / probes as f64).sqrt());
    let floor = 1e-6 * norm.max().max(1e-12);
    norm.map(|c| 1.0 / c.max(floor))
}

pub fn solve(nlp: &dyn Nlp, z0: DVector<f64>, opts: &SolverOptions) -> SolveReport {
    if opts.scale_vars && nlp.num_eq() + nlp.num_ineq() > 0 {
        let d = column_norm_scaling(nlp, &z0);
        let scaled = ScaledNlp { inner: nlp, d: d.clone() };
        let z0_hat = z0.component_div(&d);
        let mut inner_opts = opts.clone();
        inner_opts.scale_vars = false;
        let mut report = solve(&scaled, z0_hat, &inner_opts);
        report.z = report.z.component_mul(&d);
        report.objective = nlp.objective(&report.z);
        return report;
    }

    let me = nlp.num_eq();
    let mi = nlp.num_ineq();
    let mut lam = DVector::zeros(me);
    let mut mu = DVector::zeros(mi);
    let mut rho = opts.rho0;
    let omega_min = 0.5 * opts.opt_tol;
    let unconstrained = me + mi == 0;
    let mut omega = if unconstrained {
        omega_min
    } else {
        (1.0 / rho).max(omega_min)
    };
    let mut eta = 1.0 / rho.powf(0.1);
    let mut z = z0;
    let mut total_inner = 0usize;
    let mut outer_used = 0usize;
    let mut decided: Option<Status> = None;
    let mut c = DVector::zeros(me);
    let mut g = DVector::zeros(mi);
    let mut kkt = KktResiduals::default();
    let mut best_viol = f64::INFINITY;

    let use_gn = opts.gn_inner
        && nlp.has_jac_mul()
        && !unconstrained
        && std::env::var_os("GN_TR").is_some();
    for outer in 0..opts.max_outer {
        outer_used = outer + 1;
        let outcome = if use_gn {
            minimize_merit_gn(nlp, &mut z, &lam, &mu, rho, omega, opts, &mut total_inner)
        } else {
            minimize_merit(nlp, &mut z, &lam, &mu, rho, omega, opts, &mut total_inner)
        };
        if outcome == InnerOutcome::BadPoint {
            decided = Some(Status::Diverged);
            break;
        }
        nlp.eval_eq(&z, &mut c);
        nlp.eval_ineq(&z, &mut g);
        if !c.iter().all(|v| v.is_finite()) || !g.iter().all(|v| v.is_finite()) {
            decided = Some(Status::Diverged);
            break;
        }
        let viol = inf_norm(&c).max(pos_part_norm(&g));
        let shifted = {
            let mut m = inf_norm(&c);
            for i in 0..mi {
                m = m.max(g[i].max(-mu[i] / rho).abs());
            }
            m
        };

        let unbounded = outcome == InnerOutcome::Unbounded;
        let budget_out = outcome == InnerOutcome::MaxIters;
        let improved = viol <= 0.9 * best_viol;
        best_viol = best_viol.min(viol);
        // Once feasible, further penalty growth only amplifies roundoff in
        // the merit; from then on every iteration refines the multipliers.
        let take_update = !unbounded && (shifted <= eta || viol <= opts.feas_tol);
        if take_update {
            lam.axpy(rho, &c, 1.0);
            for i in 0..mi {
                mu[i] = (mu[i] + rho * g[i]).max(0.0);
            }
            eta = (eta / rho.powf(0.9)).max(1e-12);
            omega = (omega / rho).max(omega_min);
        } else if budget_out && improved && !unbounded {
            // The minimizer ran out of budget while feasibility was still
            // improving: take the multiplier estimate from the partial solve,
            // but raise the penalty too. A subproblem the budget could not
            // finish will not contract any faster at the same rho.
            lam.axpy(rho, &c, 1.0);
            for i in 0..mi {
                mu[i] = (mu[i] + rho * g[i]).max(0.0);
            }
            rho *= opts.rho_growth;
            eta = 1.0 / rho.powf(0.1);
            omega = (1.0 / rho).max(omega_min);
        } else {
            rho *= opts.rho_growth;
            eta = 1.0 / rho.powf(0.1);
            omega = (1.0 / rho).max(omega_min);
        }

        // KKT residuals with whichever multipliers now stand.
        let mut lgrad = nlp.objective_grad(&z);
        if me > 0 {
            nlp.eq_jac_tmul(&z, &lam, &mut lgrad);
        }
        if mi > 0 {
            nlp.ineq_jac_tmul(&z, &mu, &mut lgrad);
        }
        let mult_scale = 1.0 + inf_norm(&lam).max(inf_norm(&mu));
        kkt.stationarity = inf_norm(&lgrad) / mult_scale;
        kkt.feasibility = viol;
        kkt.complementarity = if mi == 0 {
            0.0
        } else {
            let mut m = 0.0f64;
            for i in 0..mi {
                m = m.max((mu[i] * g[i]).abs());
            }
            m / (1.0 + inf_norm(&mu))
        };
        if opts.verbose {
            eprintln!(
                "outer {outer:3}  f {:+.8e}  viol {:.2e}  stat {:.2e}  comp {:.2e}  rho {:.1e}  inner {total_inner}{}",
                nlp.objective(&z),
                viol,
                kkt.stationarity,
                kkt.complementarity,
                rho,
                if take_update {
                    ""
                } else if budget_out && improved {
                    "  (inner budget)"
                } else {
                    "  (penalty grew)"
                }
            );
        }
        if viol <= opts.feas_tol
            && kkt.stationarity <= opts.opt_tol
            && kkt.complementarity <= opts.comp_tol
        {
            decided = Some(Status::Optimal);
            break;
        }
        if rho > opts.rho_max {
            decided = Some(if viol <= opts.feas_tol {
                Status::Feasible
            } else {
                Status::Diverged
            });
            break;
        }
        if unconstrained && unbounded {
            decided = Some(Status::Diverged);
            break;
        }
    }

    // Final KKT with whatever multipliers stand.
    nlp.eval_eq(&z, &mut c);
    nlp.eval_ineq(&z, &mut g);
    let viol = inf_norm(&c).max(pos_part_norm(&g));
    let mut lgrad = nlp.objective_grad(&z);
    if me > 0 {
        nlp.eq_jac_tmul(&z, &lam, &mut lgrad);
    }
    if mi > 0 {
        nlp.ineq_jac_tmul(&z, &mu, &mut lgrad);
    }
    let mult_scale = 1.0 + inf_norm(&lam).max(inf_norm(&mu));
    kkt.stationarity = inf_norm(&lgrad) / mult_scale;
    kkt.feasibility = viol;
    kkt.complementarity = if mi == 0 {
        0.0
    } else {
        let mut m = 0.0f64;
        for i in 0..mi {
            m = m.max((mu[i] * g[i]).abs());
        }
        m / (1.0 + inf_norm(&mu))
    };
    let status = decided.unwrap_or(if viol <= opts.feas_tol {
        Status::Feasible
    } else {
        Status::MaxIterations
    });

    SolveReport {
        status,
        objective: nlp.objective(&z),
        z,
        lambda_eq: lam,
        mu_ineq: mu,
        kkt,
        outer_iters: outer_used,
        inner_iters: total_inner,
    }
}

/// Costates and constraint covectors recovered from the NLP multipliers.
/// All quantities follow the scaled objective: with a cost scale s the
/// running-cost weight inside `hamiltonian` is s, and the costates carry the
/// same factor.
pub struct Covectors {
    /// Costate samples, nx by num_nodes: lambda_{i,k} = -eta_{i,k} / wB_k
    /// with eta the multiplier of the collocation row V - gamma f = 0.
    pub lambda: DMatrix<f64>,
    /// Path covector samples, nh by num_nodes, positive at an active upper
    /// bound and negative at an active lower bound.
    pub mu_path: DMatrix<f64>,
    /// Event multipliers, one per event row, signed (upper minus lower for
    /// boxed events).
    pub nu: DVector<f64>,
    /// Hamiltonian samples s F + lambda' f at the nodes.
    pub hamiltonian: DVector<f64>,
}

pub fn extract_covectors(nlp: &TranscribedNlp, report: &SolveReport) -> Covectors {
    let l = &nlp.layout;
    let num = l.num_nodes;
    let z = &report.z;
    let wb = &nlp.system.wb;

    let mut lambda = DMatrix::zeros(l.nx, num);
    for i in 0..l.nx {
        for k in 0..num {
            lambda[(i, k)] = -report.lambda_eq[l.collocation_row(i, k)] / wb[k];
        }
    }

    let mut mu_path = DMatrix::zeros(nlp.ocp.nh, num);
    for r in 0..nlp.ocp.nh {
        for k in 0..num {
            let mut m = 0.0;
            let iu = nlp.path_rows.upper[r * num + k];
            if iu != usize::MAX {
                m += report.mu_ineq[iu];
            }
            let il = nlp.path_rows.lower[r * num + k];
            if il != usize::MAX {
                m -= report.mu_ineq[il];
            }
            mu_path[(r, k)] = m / wb[k];
        }
    }

    let mut nu = DVector::zeros(nlp.ocp.ne);
    for r in 0..nlp.ocp.ne {
        if nlp.event_eq_rows[r] != usize::MAX {
            nu[r] = report.lambda_eq[nlp.event_eq_rows[r]];
        } else {
            let mut m = 0.0;
            if nlp.event_rows.upper[r] != usize::MAX {
                m += report.mu_ineq[nlp.event_rows.upper[r]];
            }
            if nlp.event_rows.lower[r] != usize::MAX {
                m -= report.mu_ineq[nlp.event_rows.lower[r]];
            }
            nu[r] = m;
        }
    }

    let tb = nlp.tb(z);
    let times = nlp.node_times(tb);
    let p = &z.as_slice()[l.p_off..l.p_off + l.np];
    let s = nlp.ocp.cost_scale;
    let mut hamiltonian = DVector::zeros(num);
    let mut x = vec![0.0; l.nx];
    let mut u = vec![0.0; l.nu];
    let mut f = vec![0.0; l.nx];
    for k in 0..num {
        for i in 0..l.nx {
            x[i] = z[l.x_idx(i, k)];
        }
        for i in 0..l.nu {
            u[i] = z[l.u_idx(i, k)];
        }
        (nlp.ocp.dynamics)(&x, &u, times[k], p, &mut f);
        let mut h = s * (nlp.ocp.running_cost)(&x, &u, times[k], p);
        for i in 0..l.nx {
            h += lambda[(i, k)] * f[i];
        }
        hamiltonian[k] = h;
    }

    Covectors {
        lambda,
        mu_path,
        nu,
        hamiltonian,
    }
}

fn lerp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 1 {
        return ys[0];
    }
    let j = match xs.partition_point(|&v| v <= x) {
        0 => 0,
        p => (p - 1).min(n - 2),
    };
    let w = (x - xs[j]) / (xs[j + 1] - xs[j]);
    ys[j] + w * (ys[j + 1] - ys[j])
}

/// Maps a solution from one grid onto another of the same problem: states
/// and controls interpolate linearly in tau, the boundary block copies over,
/// and the derivative samples are rebuilt from the dynamics so the
/// collocation rows start consistent.
pub fn interpolate_guess(
    from: &TranscribedNlp,
    z_from: &DVector<f64>,
    to: &TranscribedNlp,
) -> DVector<f64> {
    let lf = &from.layout;
    let lt = &to.layout;
    assert_eq!(lf.nx, lt.nx);
    assert_eq!(lf.nu, lt.nu);
    assert_eq!(lf.np, lt.np);
    let taus_from = &from.grid().nodes;
    let taus_to = &to.grid().nodes;
    let mut z = DVector::zeros(lt.n_vars);

    let mut src = vec![0.0; lf.num_nodes];
    for i in 0..lt.nx {
        for k in 0..lf.num_nodes {
            src[k] = z_from[lf.x_idx(i, k)];
        }
        for (k, &tau) in taus_to.iter().enumerate() {
            z[lt.x_idx(i, k)] = lerp(taus_from, &src, tau);
        }
    }
    for i in 0..lt.nu {
        for k in 0..lf.num_nodes {
            src[k] = z_from[lf.u_idx(i, k)];
        }
        for (k, &tau) in taus_to.iter().enumerate() {
            z[lt.u_idx(i, k)] = lerp(taus_from, &src, tau);
        }
    }
    for i in 0..lt.nx {
        z[lt.xa_idx(i)] = z_from[lf.xa_idx(i)];
        z[lt.xb_idx(i)] = z_from[lf.xb_idx(i)];
    }
    for i in 0..lt.np {
        z[lt.p_off + i] = z_from[lf.p_off + i];
    }
    if let (Some(to_off), Some(from_off)) = (lt.tb_off, lf.tb_off) {
        let mut tb = z_from[from_off];
        if let TimeMode::FreeFinal { tb_min, tb_max, .. } = to.ocp.time {
            tb = tb.clamp(tb_min, tb_max);
        }
        z[to_off] = tb;
    }

    let tb = to.tb(&z);
    let ta = to.ocp.time.ta();
    let gamma = 0.5 * (tb - ta);
    let times = to.node_times(tb);
    let p: Vec<f64> = (0..lt.np).map(|i| z[lt.p_off + i]).collect();
    let mut x = vec![0.0; lt.nx];
    let mut u = vec![0.0; lt.nu];
    let mut f = vec![0.0; lt.nx];
    for k in 0..lt.num_nodes {
        for i in 0..lt.nx {
            x[i] = z[lt.x_idx(i, k)];
        }
        for i in 0..lt.nu {
            u[i] = z[lt.u_idx(i, k)];
        }
        (to.ocp.dynamics)(&x, &u, times[k], &p, &mut f);
        for i in 0..lt.nx {
            z[lt.v_idx(i, k)] = gamma * f[i];
        }
    }
    z
}

/// Solves the problem on a sequence of grids of increasing order, warm
/// starting each from the previous solution. The target order is always the
/// final rung; entries of `orders` at or above it are dropped.
pub fn solve_ladder<F>(
    make_ocp: F,
    spec: GridSpec,
    orders: &[usize],
    opts: &SolverOptions,
) -> Result<(TranscribedNlp, SolveReport)>
where
    F: Fn() -> OcpDefinition,
{
    let mut rungs: Vec<usize> = orders.iter().copied().filter(|&n| n < spec.order).collect();
    rungs.sort_unstable();
    rungs.dedup();
    rungs.push(spec.order);

    let mut current: Option<(TranscribedNlp, SolveReport)> = None;
    for &order in &rungs {
        let grid = make_grid(GridSpec::new(spec.family, spec.kind, order)?)?;
        let nlp = transcribe(make_ocp(), &grid)?;
        let z0 = match &current {
            None => nlp.default_guess(),
            Some((prev_nlp, prev_report)) => interpolate_guess(prev_nlp, &prev_report.z, &nlp),
        };
        if opts.verbose {
            eprintln!("grid order {order} ({} vars)", nlp.layout.n_vars);
        }
        let report = solve(&nlp, z0, opts);
        current = Some((nlp, report));
    }
    Ok(current.expect("ladder has at least one rung"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::{make_grid, GridSpec};
    use crate::transcription::{transcribe, OcpDefinition, TimeMode};
    use approx::assert_abs_diff_eq;

    struct Unconstrained<F, G>(usize, F, G);
    impl<F: Fn(&DVector<f64>) -> f64, G: Fn(&DVector<f64>) -> DVector<f64>> Nlp
        for Unconstrained<F, G>
    {
        fn num_vars(&self) -> usize {
            self.0
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn objective(&self, z: &DVector<f64>) -> f64 {
            (self.1)(z)
        }
        fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
            (self.2)(z)
        }
        fn eval_eq(&self, _: &DVector<f64>, _: &mut DVector<f64>) {}
        fn eval_ineq(&self, _: &DVector<f64>, _: &mut DVector<f64>) {}
        fn eq_jac_tmul(&self, _: &DVector<f64>, _: &DVector<f64>, _: &mut DVector<f64>) {}
        fn ineq_jac_tmul(&self, _: &DVector<f64>, _: &DVector<f64>, _: &mut DVector<f64>) {}
    }

    #[test]
    fn quadratic_bowl_converges() {
        let nlp = Unconstrained(
            2,
            |z: &DVector<f64>| (z[0] - 3.0).powi(2) + (z[1] + 1.0).powi(2),
            |z: &DVector<f64>| DVector::from_vec(vec![2.0 * (z[0] - 3.0), 2.0 * (z[1] + 1.0)]),
        );
        let rep = solve(&nlp, DVector::zeros(2), &SolverOptions::default());
        assert_eq!(rep.status, Status::Optimal);
        assert_abs_diff_eq!(rep.z[0], 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(rep.z[1], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn rosenbrock_converges() {
        let nlp = Unconstrained(
            2,
            |z: &DVector<f64>| (1.0 - z[0]).powi(2) + 100.0 * (z[1] - z[0] * z[0]).powi(2),
            |z: &DVector<f64>| {
                DVector::from_vec(vec![
                    -2.0 * (1.0 - z[0]) - 400.0 * z[0] * (z[1] - z[0] * z[0]),
                    200.0 * (z[1] - z[0] * z[0]),
                ])
            },
        );
        let rep = solve(
            &nlp,
            DVector::from_vec(vec![-1.2, 1.0]),
            &SolverOptions::default(),
        );
        assert_eq!(rep.status, Status::Optimal);
        assert_abs_diff_eq!(rep.z[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(rep.z[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn objective_with_pole_stays_in_domain() {
        // f = (x-1)^2 - 0.1 ln(2-x): NaN past x = 2, minimum at the smaller
        // root of 2x^2 - 6x + 3.9.
        let nlp = Unconstrained(
            1,
            |z: &DVector<f64>| (z[0] - 1.0).powi(2) - 0.1 * (2.0 - z[0]).ln(),
            |z: &DVector<f64>| DVector::from_vec(vec![2.0 * (z[0] - 1.0) + 0.1 / (2.0 - z[0])]),
        );
        let rep = solve(
            &nlp,
            DVector::from_vec(vec![0.0]),
            &SolverOptions::default(),
        );
        let expect = (6.0 - 4.8f64.sqrt()) / 4.0;
        assert_eq!(rep.status, Status::Optimal);
        assert_abs_diff_eq!(rep.z[0], expect, epsilon = 1e-6);
    }

    /// min x^2 + y^2 subject to x + y = 2.
    struct LineProjection;
    impl Nlp for LineProjection {
        fn num_vars(&self) -> usize {
            2
        }
        fn num_eq(&self) -> usize {
            1
        }
        fn num_ineq(&self) -> usize {
            0
        }
        fn objective(&self, z: &DVector<f64>) -> f64 {
            z[0] * z[0] + z[1] * z[1]
        }
        fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
            2.0 * z
        }
        fn eval_eq(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] = z[0] + z[1] - 2.0;
        }
        fn eval_ineq(&self, _: &DVector<f64>, _: &mut DVector<f64>) {}
        fn eq_jac_tmul(&self, _: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] += v[0];
            out[1] += v[0];
        }
        fn ineq_jac_tmul(&self, _: &DVector<f64>, _: &DVector<f64>, _: &mut DVector<f64>) {}
    }

    #[test]
    fn equality_constraint_and_multiplier() {
        let rep = solve(&LineProjection, DVector::zeros(2), &SolverOptions::default());
        assert_eq!(rep.status, Status::Optimal);
        assert_abs_diff_eq!(rep.z[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(rep.z[1], 1.0, epsilon = 1e-6);
        // grad f + lambda grad c = 0 at (1,1) gives lambda = -2.
        assert_abs_diff_eq!(rep.lambda_eq[0], -2.0, epsilon = 1e-5);
    }

    #[test]
    fn lbfgs_matches_dense_on_equality_problem() {
        let mut opts = SolverOptions::default();
        opts.lbfgs_threshold = 0;
        let rep = solve(&LineProjection, DVector::zeros(2), &opts);
        assert_eq!(rep.status, Status::Optimal);
        assert_abs_diff_eq!(rep.z[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(rep.lambda_eq[0], -2.0, epsilon = 1e-5);
    }

    /// min x^2 subject to x >= 1, posed as 1 - x <= 0.
    struct HalfLine;
    impl Nlp for HalfLine {
        fn num_vars(&self) -> usize {
            1
        }
        fn num_eq(&self) -> usize {
            0
        }
        fn num_ineq(&self) -> usize {
            1
        }
        fn objective(&self, z: &DVector<f64>) -> f64 {
            z[0] * z[0]
        }
        fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
            2.0 * z
        }
        fn eval_eq(&self, _: &DVector<f64>, _: &mut DVector<f64>) {}
        fn eval_ineq(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] = 1.0 - z[0];
        }
        fn eq_jac_tmul(&self, _: &DVector<f64>, _: &DVector<f64>, _: &mut DVector<f64>) {}
        fn ineq_jac_tmul(&self, _: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
            out[0] -= v[0];
        }
    }

    #[test]
    fn active_inequality_recovers_multiplier() {
        let rep = solve(
            &HalfLine,
            DVector::from_vec(vec![3.0]),
            &SolverOptions::default(),
        );
        assert_eq!(rep.status, Status::Optimal);
        assert_abs_diff_eq!(rep.z[0], 1.0, epsilon = 1e-6);
        // Stationarity 2x - mu = 0 at x = 1.
        assert_abs_diff_eq!(rep.mu_ineq[0], 2.0, epsilon = 1e-5);
    }

    #[test]
    fn inactive_inequality_leaves_zero_multiplier() {
        // min (x-1)^2 with 1 - x <= 0 inactive at... the bound touches the
        // minimizer, so shift it: min (x-3)^2, bound x >= 1 inactive.
        struct Inactive;
        impl Nlp for Inactive {
            fn num_vars(&self) -> usize {
                1
            }
            fn num_eq(&self) -> usize {
                0
            }
            fn num_ineq(&self) -> usize {
                1
            }
            fn objective(&self, z: &DVector<f64>) -> f64 {
                (z[0] - 3.0).powi(2)
            }
            fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
                DVector::from_vec(vec![2.0 * (z[0] - 3.0)])
            }
            fn eval_eq(&self, _: &DVector<f64>, _: &mut DVector<f64>) {}
            fn eval_ineq(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
                out[0] = 1.0 - z[0];
            }
            fn eq_jac_tmul(&self, _: &DVector<f64>, _: &DVector<f64>, _: &mut DVector<f64>) {}
            fn ineq_jac_tmul(&self, _: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
                out[0] -= v[0];
            }
        }
        let rep = solve(
            &Inactive,
            DVector::from_vec(vec![2.0]),
            &SolverOptions::default(),
        );
        assert_eq!(rep.status, Status::Optimal);
        assert_abs_diff_eq!(rep.z[0], 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(rep.mu_ineq[0], 0.0, epsilon = 1e-8);
    }

    /// Double integrator, minimum control energy, rest-to-rest transfer.
    fn lq_ocp(cost_scale: f64) -> OcpDefinition {
        let mut ocp = OcpDefinition::new("lq", 2, 1, TimeMode::Fixed { ta: 0.0, tb: 1.0 });
        ocp.cost_scale = cost_scale;
        ocp.running_cost = Box::new(|_, u, _, _| 0.5 * u[0] * u[0]);
        ocp.running_cost_grad = Some(Box::new(|_, u, _, _, dx, du, dt| {
            dx.fill(0.0);
            du[0] = u[0];
            *dt = 0.0;
        }));
        ocp.dynamics = Box::new(|x, u, _, _, f| {
            f[0] = x[1];
            f[1] = u[0];
        });
        ocp.dynamics_jac = Some(Box::new(|_, _, _, _, dfdx, dfdu, dfdt| {
            dfdx.fill(0.0);
            dfdx[(0, 1)] = 1.0;
            dfdu.fill(0.0);
            dfdu[(1, 0)] = 1.0;
            dfdt.fill(0.0);
        }));
        ocp.ne = 4;
        ocp.events = Box::new(|xa, xb, _, _, _, e| {
            e[0] = xa[0];
            e[1] = xa[1];
            e[2] = xb[0];
            e[3] = xb[1];
        });
        ocp.events_jac = Some(Box::new(|_, _, _, _, _, dea, deb, det| {
            dea.fill(0.0);
            deb.fill(0.0);
            dea[(0, 0)] = 1.0;
            dea[(1, 1)] = 1.0;
            deb[(2, 0)] = 1.0;
            deb[(3, 1)] = 1.0;
            det.fill(0.0);
        }));
        ocp.event_lower = vec![0.0, 0.0, 1.0, 0.0];
        ocp.event_upper = vec![0.0, 0.0, 1.0, 0.0];
        ocp.guess_xa = Some(vec![0.0, 0.0]);
        ocp.guess_xb = Some(vec![1.0, 0.0]);
        ocp
    }

    fn solve_lq(cost_scale: f64) -> (TranscribedNlp, SolveReport) {
        let grid = make_grid(GridSpec::from_code("cgl", 20).unwrap()).unwrap();
        let nlp = transcribe(lq_ocp(cost_scale), &grid).unwrap();
        let z0 = nlp.default_guess();
        // Stationarity is measured against the multiplier scale, which
        // shrinks with the cost scale; tighten in step to keep the primal
        // accuracy comparable across scales.
        let mut opts = SolverOptions::default();
        opts.opt_tol *= cost_scale.min(1.0);
        opts.comp_tol *= cost_scale.min(1.0);
        let rep = solve(&nlp, z0, &opts);
        (nlp, rep)
    }

    #[test]
    fn lq_objective_and_costates() {
        let (nlp, rep) = solve_lq(1.0);
        assert!(
            matches!(rep.status, Status::Optimal | Status::Feasible),
            "status {:?}",
            rep.status
        );
        // Minimum energy rest-to-rest: u = 6 - 12t, J = 6.
        assert_abs_diff_eq!(rep.objective, 6.0, epsilon = 1e-5);
        let cov = extract_covectors(&nlp, &rep);
        let num = nlp.layout.num_nodes;
        // lambda_x constant -12, lambda_v = -6 + 12t.
        for k in 0..num {
            assert_abs_diff_eq!(cov.lambda[(0, k)], -12.0, epsilon = 1e-2);
        }
        assert_abs_diff_eq!(cov.lambda[(1, 0)], -6.0, epsilon = 1e-2);
        assert_abs_diff_eq!(cov.lambda[(1, num - 1)], 6.0, epsilon = 1e-2);
        // Transversality: nu = (-lambda(ta), +lambda(tb)) componentwise.
        assert_abs_diff_eq!(cov.nu[0], 12.0, epsilon = 1e-2);
        assert_abs_diff_eq!(cov.nu[1], 6.0, epsilon = 1e-2);
        assert_abs_diff_eq!(cov.nu[2], -12.0, epsilon = 1e-2);
        assert_abs_diff_eq!(cov.nu[3], 6.0, epsilon = 1e-2);
    }

    #[test]
    fn cost_scaling_leaves_trajectory_unchanged() {
        let (nlp_ref, rep_ref) = solve_lq(1.0);
        let l = nlp_ref.layout;
        for scale in [0.01, 100.0] {
            let (nlp, rep) = solve_lq(scale);
            assert_abs_diff_eq!(rep.objective / scale, 6.0, epsilon = 1e-4);
            for k in 0..l.num_nodes {
                assert_abs_diff_eq!(
                    rep.z[l.u_idx(0, k)],
                    rep_ref.z[nlp.layout.u_idx(0, k)],
                    epsilon = 1e-3
                );
            }
        }
    }

    #[test]
    fn ladder_reaches_same_objective() {
        let spec = GridSpec::from_code("cgl", 20).unwrap();
        let (nlp, rep) =
            solve_ladder(|| lq_ocp(1.0), spec, &[8], &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(rep.objective, 6.0, epsilon = 1e-5);
        assert_eq!(nlp.layout.num_nodes, 21);
    }

    #[test]
    fn scaled_solve_matches_unscaled() {
        let mut opts = SolverOptions::default();
        opts.scale_vars = true;
        let grid = make_grid(GridSpec::from_code("cgl", 20).unwrap()).unwrap();
        let nlp = transcribe(lq_ocp(1.0), &grid).unwrap();
        let z0 = nlp.default_guess();
        let rep = solve(&nlp, z0, &opts);
        assert!(matches!(rep.status, Status::Optimal | Status::Feasible));
        assert_abs_diff_eq!(rep.objective, 6.0, epsilon = 1e-5);
    }

    #[test]
    fn interpolation_preserves_linear_trajectories() {
        let coarse_grid = make_grid(GridSpec::from_code("lgl", 6).unwrap()).unwrap();
        let fine_grid = make_grid(GridSpec::from_code("lgl", 11).unwrap()).unwrap();
        let coarse = transcribe(lq_ocp(1.0), &coarse_grid).unwrap();
        let fine = transcribe(lq_ocp(1.0), &fine_grid).unwrap();
        let mut z = coarse.default_guess();
        // Straight-line state in tau is reproduced exactly by linear
        // interpolation at the fine nodes.
        let lc = coarse.layout;
        for (k, &tau) in coarse.grid().nodes.clone().iter().enumerate() {
            z[lc.x_idx(0, k)] = 2.0 + 3.0 * tau;
        }
        let zf = interpolate_guess(&coarse, &z, &fine);
        let lf = fine.layout;
        for (k, &tau) in fine.grid().nodes.iter().enumerate() {
            assert_abs_diff_eq!(zf[lf.x_idx(0, k)], 2.0 + 3.0 * tau, epsilon = 1e-12);
        }
    }
}
