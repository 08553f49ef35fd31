//! Transcription of an optimal control problem into a nonlinear program.
//!
//! States are interpolated through the a-form Birkhoff system: for each state
//! dimension the decision variables X (state samples) and V (scaled
//! derivative samples) satisfy the linear block
//!
//! ```text
//!     A_a [X^T; V^T] - C_a [x^a; x^b] = 0,
//!     A_a = [[I, -Ba], [0^T, wB^T]],   C_a = [[1, 0], ..., [1, 0], [-1, 1]],
//! ```
//!
//! while the nonlinear collocation block ties V to the dynamics,
//! V_k = gamma f(x_k, u_k, t_k, p), with gamma the half-width of the time
//! horizon. Events bound e(x^a, x^b, t^a, t^b, p) and path constraints bound
//! h(x_k, u_k, t_k, p) at every node. The objective is
//!
//! ```text
//!     cost_scale * (E + gamma sum_k wB_k F(x_k, u_k, t_k, p)).
//! ```

use nalgebra::{DMatrix, DVector};

use crate::birkhoff::{build_birkhoff, BirkhoffSystem};
use crate::error::{Error, Result};
use crate::grids::Grid;

/// Affine map from tau in [-1, 1] to t in [t^a, t^b].
#[derive(Clone, Copy, Debug)]
pub struct DomainMap {
    pub ta: f64,
    pub tb: f64,
}

impl DomainMap {
    pub fn new(ta: f64, tb: f64) -> Result<Self> {
        if !(tb > ta) || !ta.is_finite() || !tb.is_finite() {
            return Err(Error::DegenerateInterval { ta, tb });
        }
        Ok(DomainMap { ta, tb })
    }

    pub fn map(&self, tau: f64) -> f64 {
        0.5 * (self.tb - self.ta) * tau + 0.5 * (self.tb + self.ta)
    }

    /// dt/dtau, half the horizon width.
    pub fn gamma(&self) -> f64 {
        0.5 * (self.tb - self.ta)
    }
}

/// Fixed horizon, or free final time boxed into [tb_min, tb_max].
/// The initial time is always fixed.
#[derive(Clone, Copy, Debug)]
pub enum TimeMode {
    Fixed { ta: f64, tb: f64 },
    FreeFinal { ta: f64, tb_min: f64, tb_max: f64 },
}

impl TimeMode {
    pub fn ta(&self) -> f64 {
        match *self {
            TimeMode::Fixed { ta, .. } | TimeMode::FreeFinal { ta, .. } => ta,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, TimeMode::FreeFinal { .. })
    }
}

pub type DynamicsFn = Box<dyn Fn(&[f64], &[f64], f64, &[f64], &mut [f64]) + Send + Sync>;
/// Fills df/dx (nx by nx), df/du (nx by nu), df/dt (nx).
pub type DynamicsJacFn = Box<
    dyn Fn(&[f64], &[f64], f64, &[f64], &mut DMatrix<f64>, &mut DMatrix<f64>, &mut [f64])
        + Send
        + Sync,
>;
pub type RunningCostFn = Box<dyn Fn(&[f64], &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// Fills dF/dx, dF/du, dF/dt.
pub type RunningCostGradFn =
    Box<dyn Fn(&[f64], &[f64], f64, &[f64], &mut [f64], &mut [f64], &mut f64) + Send + Sync>;
/// E(x^a, x^b, t^a, t^b, p).
pub type EndpointCostFn = Box<dyn Fn(&[f64], &[f64], f64, f64, &[f64]) -> f64 + Send + Sync>;
/// Fills dE/dx^a, dE/dx^b, dE/dt^b.
pub type EndpointCostGradFn =
    Box<dyn Fn(&[f64], &[f64], f64, f64, &[f64], &mut [f64], &mut [f64], &mut f64) + Send + Sync>;
/// e(x^a, x^b, t^a, t^b, p) into the output slice.
pub type EventsFn = Box<dyn Fn(&[f64], &[f64], f64, f64, &[f64], &mut [f64]) + Send + Sync>;
/// Fills de/dx^a (ne by nx), de/dx^b (ne by nx), de/dt^b (ne).
pub type EventsJacFn = Box<
    dyn Fn(&[f64], &[f64], f64, f64, &[f64], &mut DMatrix<f64>, &mut DMatrix<f64>, &mut [f64])
        + Send
        + Sync,
>;
/// h(x, u, t, p) into the output slice.
pub type PathFn = Box<dyn Fn(&[f64], &[f64], f64, &[f64], &mut [f64]) + Send + Sync>;
/// Fills dh/dx (nh by nx), dh/du (nh by nu), dh/dt (nh).
pub type PathJacFn = Box<
    dyn Fn(&[f64], &[f64], f64, &[f64], &mut DMatrix<f64>, &mut DMatrix<f64>, &mut [f64])
        + Send
        + Sync,
>;
/// Trajectory guess (x, u) at time t for horizon end tb.
pub type GuessFn = Box<dyn Fn(f64, f64) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

/// Continuous-time problem data: evaluators, bounds, and optional analytic
/// derivatives (finite differences fill in for any that are absent).
pub struct OcpDefinition {
    pub name: String,
    pub nx: usize,
    pub nu: usize,
    pub np: usize,
    pub time: TimeMode,
    pub cost_scale: f64,
    pub endpoint_cost: EndpointCostFn,
    pub running_cost: RunningCostFn,
    pub dynamics: DynamicsFn,
    pub ne: usize,
    pub events: EventsFn,
    pub event_lower: Vec<f64>,
    pub event_upper: Vec<f64>,
    pub nh: usize,
    pub path: Option<PathFn>,
    pub path_lower: Vec<f64>,
    pub path_upper: Vec<f64>,
    pub dynamics_jac: Option<DynamicsJacFn>,
    pub running_cost_grad: Option<RunningCostGradFn>,
    pub endpoint_cost_grad: Option<EndpointCostGradFn>,
    pub events_jac: Option<EventsJacFn>,
    pub path_jac: Option<PathJacFn>,
    pub guess_xa: Option<Vec<f64>>,
    pub guess_xb: Option<Vec<f64>>,
    pub guess_tb: Option<f64>,
    pub guess_trajectory: Option<GuessFn>,
}

impl OcpDefinition {
    /// Problem with zero cost, zero dynamics, and no events or path
    /// constraints; callers fill the fields they need.
    pub fn new(name: &str, nx: usize, nu: usize, time: TimeMode) -> Self {
        OcpDefinition {
            name: name.to_string(),
            nx,
            nu,
            np: 0,
            time,
            cost_scale: 1.0,
            endpoint_cost: Box::new(|_, _, _, _, _| 0.0),
            running_cost: Box::new(|_, _, _, _| 0.0),
            dynamics: Box::new(|_, _, _, _, f| f.fill(0.0)),
            ne: 0,
            events: Box::new(|_, _, _, _, _, _| {}),
            event_lower: Vec::new(),
            event_upper: Vec::new(),
            nh: 0,
            path: None,
            path_lower: Vec::new(),
            path_upper: Vec::new(),
            dynamics_jac: None,
            running_cost_grad: None,
            endpoint_cost_grad: None,
            events_jac: None,
            path_jac: None,
            guess_xa: None,
            guess_xb: None,
            guess_tb: None,
            guess_trajectory: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |what: &str, lo: &[f64], up: &[f64], n: usize| -> Result<()> {
            if lo.len() != n || up.len() != n {
                return Err(Error::ShapeMismatch {
                    what: format!("{what} bounds"),
                    expected: format!("{n}"),
                    got: format!("{} lower / {} upper", lo.len(), up.len()),
                });
            }
            for (row, (&l, &u)) in lo.iter().zip(up).enumerate() {
                if l > u {
                    return Err(Error::InvalidBounds {
                        what: what.to_string(),
                        lower: l,
                        upper: u,
                        row,
                    });
                }
            }
            Ok(())
        };
        check("event", &self.event_lower, &self.event_upper, self.ne)?;
        check("path", &self.path_lower, &self.path_upper, self.nh)?;
        if self.nh > 0 && self.path.is_none() {
            return Err(Error::ShapeMismatch {
                what: "path evaluator".to_string(),
                expected: format!("present for nh = {}", self.nh),
                got: "absent".to_string(),
            });
        }
        match self.time {
            TimeMode::Fixed { ta, tb } => {
                DomainMap::new(ta, tb)?;
            }
            TimeMode::FreeFinal { ta, tb_min, tb_max } => {
                DomainMap::new(ta, tb_min)?;
                if !(tb_max > tb_min) {
                    return Err(Error::DegenerateInterval {
                        ta: tb_min,
                        tb: tb_max,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Where each variable group lives in the decision vector
/// z = [vec X, vec V, vec U, x^a, x^b, t^b (free time only), p].
/// vec stacks one row per state or control dimension, nodes fastest.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub nx: usize,
    pub nu: usize,
    pub np: usize,
    pub num_nodes: usize,
    pub free_tb: bool,
    pub n_vars: usize,
    pub v_off: usize,
    pub u_off: usize,
    pub xa_off: usize,
    pub xb_off: usize,
    pub tb_off: Option<usize>,
    pub p_off: usize,
    /// Rows of the linear Birkhoff block: nx (N + 2).
    pub n_eq_linear: usize,
    /// Rows of the collocation block: nx (N + 1).
    pub n_eq_collocation: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
}

impl Layout {
    pub fn x_idx(&self, i: usize, k: usize) -> usize {
        i * self.num_nodes + k
    }
    pub fn v_idx(&self, i: usize, k: usize) -> usize {
        self.v_off + i * self.num_nodes + k
    }
    pub fn u_idx(&self, i: usize, k: usize) -> usize {
        self.u_off + i * self.num_nodes + k
    }
    pub fn xa_idx(&self, i: usize) -> usize {
        self.xa_off + i
    }
    pub fn xb_idx(&self, i: usize) -> usize {
        self.xb_off + i
    }
    pub fn lin_row(&self, i: usize, k: usize) -> usize {
        i * (self.num_nodes + 1) + k
    }
    pub fn collocation_row(&self, i: usize, k: usize) -> usize {
        self.n_eq_linear + i * self.num_nodes + k
    }
}

/// Which inequality rows, if any, guard each bounded quantity. `usize::MAX`
/// marks an absent side (infinite bound).
#[derive(Clone, Debug)]
pub struct BoundIndex {
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
}

impl BoundIndex {
    fn none(n: usize) -> Self {
        BoundIndex {
            upper: vec![usize::MAX; n],
            lower: vec![usize::MAX; n],
        }
    }
}

/// The transcribed problem: grid, Birkhoff system, layout, and row maps.
pub struct TranscribedNlp {
    pub ocp: OcpDefinition,
    pub system: BirkhoffSystem,
    pub layout: Layout,
    /// Inequality rows for path constraints, indexed r * (N+1) + k.
    pub path_rows: BoundIndex,
    /// Inequality rows for non-equality events, indexed by event row.
    pub event_rows: BoundIndex,
    /// Equality rows (offset into the full equality vector) for pinned events.
    pub event_eq_rows: Vec<usize>,
    /// Inequality rows boxing t^b in free-time mode.
    pub tb_rows: Option<(usize, usize)>,
}

const FD_STEP: f64 = 1e-6;

fn fd_step(v: f64) -> f64 {
    FD_STEP * v.abs().max(1.0)
}

pub fn transcribe(ocp: OcpDefinition, grid: &Grid) -> Result<TranscribedNlp> {
    ocp.validate()?;
    let system = build_birkhoff(grid)?;
    let num = grid.num_nodes();
    let (nx, nu, np) = (ocp.nx, ocp.nu, ocp.np);
    let free_tb = ocp.time.is_free();

    let v_off = nx * num;
    let u_off = 2 * nx * num;
    let xa_off = u_off + nu * num;
    let xb_off = xa_off + nx;
    let tb_off = free_tb.then_some(xb_off + nx);
    let p_off = xb_off + nx + usize::from(free_tb);
    let n_vars = p_off + np;

    let n_eq_linear = nx * (num + 1);
    let n_eq_collocation = nx * num;

    let mut event_rows = BoundIndex::none(ocp.ne);
    let mut event_eq_rows = vec![usize::MAX; ocp.ne];
    let mut n_eq = n_eq_linear + n_eq_collocation;
    let mut n_ineq = 0;
    let mut path_rows = BoundIndex::none(ocp.nh * num);
    for r in 0..ocp.nh {
        for k in 0..num {
            if ocp.path_upper[r].is_finite() {
                path_rows.upper[r * num + k] = n_ineq;
                n_ineq += 1;
            }
            if ocp.path_lower[r].is_finite() {
                path_rows.lower[r * num + k] = n_ineq;
                n_ineq += 1;
            }
        }
    }
    for r in 0..ocp.ne {
        if ocp.event_lower[r] == ocp.event_upper[r] {
            event_eq_rows[r] = n_eq;
            n_eq += 1;
        } else {
            if ocp.event_upper[r].is_finite() {
                event_rows.upper[r] = n_ineq;
                n_ineq += 1;
            }
            if ocp.event_lower[r].is_finite() {
                event_rows.lower[r] = n_ineq;
                n_ineq += 1;
            }
        }
    }
    let tb_rows = free_tb.then(|| {
        let rows = (n_ineq, n_ineq + 1);
        n_ineq += 2;
        rows
    });

    let layout = Layout {
        nx,
        nu,
        np,
        num_nodes: num,
        free_tb,
        n_vars,
        v_off,
        u_off,
        xa_off,
        xb_off,
        tb_off,
        p_off,
        n_eq_linear,
        n_eq_collocation,
        n_eq,
        n_ineq,
    };

    let nlp = TranscribedNlp {
        ocp,
        system,
        layout,
        path_rows,
        event_rows,
        event_eq_rows,
        tb_rows,
    };
    nlp.probe_evaluators()?;
    Ok(nlp)
}

impl TranscribedNlp {
    pub fn grid(&self) -> &Grid {
        &self.system.grid
    }

    /// t^b stored in z, or the fixed horizon end.
    pub fn tb(&self, z: &DVector<f64>) -> f64 {
        match self.layout.tb_off {
            Some(off) => z[off],
            None => match self.ocp.time {
                TimeMode::Fixed { tb, .. } => tb,
                TimeMode::FreeFinal { .. } => unreachable!(),
            },
        }
    }

    pub fn domain(&self, z: &DVector<f64>) -> Result<DomainMap> {
        DomainMap::new(self.ocp.time.ta(), self.tb(z))
    }

    /// Physical node times for the horizon ending at tb.
    pub fn node_times(&self, tb: f64) -> Vec<f64> {
        let ta = self.ocp.time.ta();
        self.grid()
            .nodes
            .iter()
            .map(|&tau| 0.5 * (tb - ta) * tau + 0.5 * (tb + ta))
            .collect()
    }

    fn gather_node(&self, z: &DVector<f64>, k: usize, x: &mut [f64], u: &mut [f64]) {
        let l = &self.layout;
        for i in 0..l.nx {
            x[i] = z[l.x_idx(i, k)];
        }
        for i in 0..l.nu {
            u[i] = z[l.u_idx(i, k)];
        }
    }

    fn params<'a>(&self, z: &'a DVector<f64>) -> &'a [f64] {
        &z.as_slice()[self.layout.p_off..self.layout.p_off + self.layout.np]
    }

    /// Default guess: straight-line states between the boundary hints, zero
    /// V and U, midpoint t^b. A preset-supplied trajectory guess overrides
    /// the straight line and fills V = gamma f.
    pub fn default_guess(&self) -> DVector<f64> {
        let l = &self.layout;
        let num = l.num_nodes;
        let mut z = DVector::zeros(l.n_vars);
        let xa = self
            .ocp
            .guess_xa
            .clone()
            .unwrap_or_else(|| vec![0.0; l.nx]);
        let xb = self
            .ocp
            .guess_xb
            .clone()
            .unwrap_or_else(|| xa.clone());
        let tb = match self.ocp.time {
            TimeMode::Fixed { tb, .. } => tb,
            TimeMode::FreeFinal { tb_min, tb_max, .. } => self
                .ocp
                .guess_tb
                .unwrap_or(0.5 * (tb_min + tb_max))
                .clamp(tb_min, tb_max),
        };
        let ta = self.ocp.time.ta();
        let gamma = 0.5 * (tb - ta);
        if let Some(guess) = &self.ocp.guess_trajectory {
            let mut f = vec![0.0; l.nx];
            let p = vec![0.0; l.np];
            for (k, &tau) in self.grid().nodes.iter().enumerate() {
                let t = 0.5 * (tb - ta) * tau + 0.5 * (tb + ta);
                let (x, u) = guess(t, tb);
                for i in 0..l.nx {
                    z[l.x_idx(i, k)] = x[i];
                }
                for i in 0..l.nu {
                    z[l.u_idx(i, k)] = u[i];
                }
                (self.ocp.dynamics)(&x, &u, t, &p, &mut f);
                for i in 0..l.nx {
                    z[l.v_idx(i, k)] = gamma * f[i];
                }
            }
            let (x0, _) = guess(ta, tb);
            let (x1, _) = guess(tb, tb);
            for i in 0..l.nx {
                z[l.xa_idx(i)] = x0[i];
                z[l.xb_idx(i)] = x1[i];
            }
        } else {
            for k in 0..num {
                let s = 0.5 * (self.grid().nodes[k] + 1.0);
                for i in 0..l.nx {
                    z[l.x_idx(i, k)] = (1.0 - s) * xa[i] + s * xb[i];
                }
            }
            for i in 0..l.nx {
                z[l.xa_idx(i)] = xa[i];
                z[l.xb_idx(i)] = xb[i];
            }
        }
        if let Some(off) = l.tb_off {
            z[off] = tb;
        }
        z
    }

    /// Errors if any evaluator produces a non-finite value at the guess.
    fn probe_evaluators(&self) -> Result<()> {
        let z = self.default_guess();
        let l = &self.layout;
        let tb = self.tb(&z);
        let ta = self.ocp.time.ta();
        let times = self.node_times(tb);
        let p = self.params(&z);
        let mut x = vec![0.0; l.nx];
        let mut u = vec![0.0; l.nu];
        let mut f = vec![0.0; l.nx];
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        for k in 0..l.num_nodes {
            self.gather_node(&z, k, &mut x, &mut u);
            (self.ocp.dynamics)(&x, &u, times[k], p, &mut f);
            if !finite(&f) {
                return Err(Error::NonFiniteEvaluator {
                    name: "dynamics".to_string(),
                });
            }
            if !(self.ocp.running_cost)(&x, &u, times[k], p).is_finite() {
                return Err(Error::NonFiniteEvaluator {
                    name: "running_cost".to_string(),
                });
            }
            if let Some(path) = &self.ocp.path {
                let mut h = vec![0.0; self.ocp.nh];
                path(&x, &u, times[k], p, &mut h);
                if !finite(&h) {
                    return Err(Error::NonFiniteEvaluator {
                        name: "path".to_string(),
                    });
                }
            }
        }
        let xa = &z.as_slice()[l.xa_off..l.xa_off + l.nx];
        let xb = &z.as_slice()[l.xb_off..l.xb_off + l.nx];
        if !(self.ocp.endpoint_cost)(xa, xb, ta, tb, p).is_finite() {
            return Err(Error::NonFiniteEvaluator {
                name: "endpoint_cost".to_string(),
            });
        }
        let mut e = vec![0.0; self.ocp.ne];
        (self.ocp.events)(xa, xb, ta, tb, p, &mut e);
        if !finite(&e) {
            return Err(Error::NonFiniteEvaluator {
                name: "events".to_string(),
            });
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        let l = &self.layout;
        let tb = self.tb(z);
        let ta = self.ocp.time.ta();
        let gamma = 0.5 * (tb - ta);
        if gamma <= 0.0 {
            return f64::INFINITY;
        }
        let times = self.node_times(tb);
        let p = self.params(z);
        let mut x = vec![0.0; l.nx];
        let mut u = vec![0.0; l.nu];
        let mut quad = 0.0;
        for k in 0..l.num_nodes {
            self.gather_node(z, k, &mut x, &mut u);
            quad += self.system.wb[k] * (self.ocp.running_cost)(&x, &u, times[k], p);
        }
        let xa = &z.as_slice()[l.xa_off..l.xa_off + l.nx];
        let xb = &z.as_slice()[l.xb_off..l.xb_off + l.nx];
        let e = (self.ocp.endpoint_cost)(xa, xb, ta, tb, p);
        self.ocp.cost_scale * (e + gamma * quad)
    }

    /// Running-cost gradient at one node, analytic or central differences.
    fn running_cost_grad(
        &self,
        x: &[f64],
        u: &[f64],
        t: f64,
        p: &[f64],
        dx: &mut [f64],
        du: &mut [f64],
        dt: &mut f64,
    ) {
        if let Some(g) = &self.ocp.running_cost_grad {
            g(x, u, t, p, dx, du, dt);
            return;
        }
        let f = &self.ocp.running_cost;
        let mut xm = x.to_vec();
        for i in 0..x.len() {
            let h = fd_step(x[i]);
            xm[i] = x[i] + h;
            let hi = f(&xm, u, t, p);
            xm[i] = x[i] - h;
            let lo = f(&xm, u, t, p);
            xm[i] = x[i];
            dx[i] = (hi - lo) / (2.0 * h);
        }
        let mut um = u.to_vec();
        for i in 0..u.len() {
            let h = fd_step(u[i]);
            um[i] = u[i] + h;
            let hi = f(x, &um, t, p);
            um[i] = u[i] - h;
            let lo = f(x, &um, t, p);
            um[i] = u[i];
            du[i] = (hi - lo) / (2.0 * h);
        }
        let h = fd_step(t);
        *dt = (f(x, u, t + h, p) - f(x, u, t - h, p)) / (2.0 * h);
    }

    fn dynamics_jacobian(
        &self,
        x: &[f64],
        u: &[f64],
        t: f64,
        p: &[f64],
        dfdx: &mut DMatrix<f64>,
        dfdu: &mut DMatrix<f64>,
        dfdt: &mut [f64],
    ) {
        if let Some(j) = &self.ocp.dynamics_jac {
            j(x, u, t, p, dfdx, dfdu, dfdt);
            return;
        }
        let nx = self.ocp.nx;
        let f = &self.ocp.dynamics;
        let mut hi = vec![0.0; nx];
        let mut lo = vec![0.0; nx];
        let mut xm = x.to_vec();
        for c in 0..nx {
            let h = fd_step(x[c]);
            xm[c] = x[c] + h;
            f(&xm, u, t, p, &mut hi);
            xm[c] = x[c] - h;
            f(&xm, u, t, p, &mut lo);
            xm[c] = x[c];
            for r in 0..nx {
                dfdx[(r, c)] = (hi[r] - lo[r]) / (2.0 * h);
            }
        }
        let mut um = u.to_vec();
        for c in 0..self.ocp.nu {
            let h = fd_step(u[c]);
            um[c] = u[c] + h;
            f(x, &um, t, p, &mut hi);
            um[c] = u[c] - h;
            f(x, &um, t, p, &mut lo);
            um[c] = u[c];
            for r in 0..nx {
                dfdu[(r, c)] = (hi[r] - lo[r]) / (2.0 * h);
            }
        }
        let h = fd_step(t);
        f(x, u, t + h, p, &mut hi);
        f(x, u, t - h, p, &mut lo);
        for r in 0..nx {
            dfdt[r] = (hi[r] - lo[r]) / (2.0 * h);
        }
    }

    fn path_jacobian(
        &self,
        x: &[f64],
        u: &[f64],
        t: f64,
        p: &[f64],
        dhdx: &mut DMatrix<f64>,
        dhdu: &mut DMatrix<f64>,
        dhdt: &mut [f64],
    ) {
        if let Some(j) = &self.ocp.path_jac {
            j(x, u, t, p, dhdx, dhdu, dhdt);
            return;
        }
        let nh = self.ocp.nh;
        let path = self.ocp.path.as_ref().expect("path jacobian without path");
        let mut hi = vec![0.0; nh];
        let mut lo = vec![0.0; nh];
        let mut xm = x.to_vec();
        for c in 0..self.ocp.nx {
            let h = fd_step(x[c]);
            xm[c] = x[c] + h;
            path(&xm, u, t, p, &mut hi);
            xm[c] = x[c] - h;
            path(&xm, u, t, p, &mut lo);
            xm[c] = x[c];
            for r in 0..nh {
                dhdx[(r, c)] = (hi[r] - lo[r]) / (2.0 * h);
            }
        }
        let mut um = u.to_vec();
        for c in 0..self.ocp.nu {
            let h = fd_step(u[c]);
            um[c] = u[c] + h;
            path(x, &um, t, p, &mut hi);
            um[c] = u[c] - h;
            path(x, &um, t, p, &mut lo);
            um[c] = u[c];
            for r in 0..nh {
                dhdu[(r, c)] = (hi[r] - lo[r]) / (2.0 * h);
            }
        }
        let h = fd_step(t);
        path(x, u, t + h, p, &mut hi);
        path(x, u, t - h, p, &mut lo);
        for r in 0..nh {
            dhdt[r] = (hi[r] - lo[r]) / (2.0 * h);
        }
    }

    fn events_jacobian(
        &self,
        xa: &[f64],
        xb: &[f64],
        ta: f64,
        tb: f64,
        p: &[f64],
        dedxa: &mut DMatrix<f64>,
        dedxb: &mut DMatrix<f64>,
        dedtb: &mut [f64],
    ) {
        if let Some(j) = &self.ocp.events_jac {
            j(xa, xb, ta, tb, p, dedxa, dedxb, dedtb);
            return;
        }
        let ne = self.ocp.ne;
        let ev = &self.ocp.events;
        let mut hi = vec![0.0; ne];
        let mut lo = vec![0.0; ne];
        let mut m = xa.to_vec();
        for c in 0..self.ocp.nx {
            let h = fd_step(xa[c]);
            m[c] = xa[c] + h;
            ev(&m, xb, ta, tb, p, &mut hi);
            m[c] = xa[c] - h;
            ev(&m, xb, ta, tb, p, &mut lo);
            m[c] = xa[c];
            for r in 0..ne {
                dedxa[(r, c)] = (hi[r] - lo[r]) / (2.0 * h);
            }
        }
        let mut m = xb.to_vec();
        for c in 0..self.ocp.nx {
            let h = fd_step(xb[c]);
            m[c] = xb[c] + h;
            ev(xa, &m, ta, tb, p, &mut hi);
            m[c] = xb[c] - h;
            ev(xa, &m, ta, tb, p, &mut lo);
            m[c] = xb[c];
            for r in 0..ne {
                dedxb[(r, c)] = (hi[r] - lo[r]) / (2.0 * h);
            }
        }
        let h = fd_step(tb);
        ev(xa, xb, ta, tb + h, p, &mut hi);
        ev(xa, xb, ta, tb - h, p, &mut lo);
        for r in 0..ne {
            dedtb[r] = (hi[r] - lo[r]) / (2.0 * h);
        }
    }

    fn endpoint_cost_grad(
        &self,
        xa: &[f64],
        xb: &[f64],
        ta: f64,
        tb: f64,
        p: &[f64],
        dxa: &mut [f64],
        dxb: &mut [f64],
        dtb: &mut f64,
    ) {
        if let Some(g) = &self.ocp.endpoint_cost_grad {
            g(xa, xb, ta, tb, p, dxa, dxb, dtb);
            return;
        }
        let f = &self.ocp.endpoint_cost;
        let mut m = xa.to_vec();
        for c in 0..self.ocp.nx {
            let h = fd_step(xa[c]);
            m[c] = xa[c] + h;
            let hi = f(&m, xb, ta, tb, p);
            m[c] = xa[c] - h;
            let lo = f(&m, xb, ta, tb, p);
            m[c] = xa[c];
            dxa[c] = (hi - lo) / (2.0 * h);
        }
        let mut m = xb.to_vec();
        for c in 0..self.ocp.nx {
            let h = fd_step(xb[c]);
            m[c] = xb[c] + h;
            let hi = f(xa, &m, ta, tb, p);
            m[c] = xb[c] - h;
            let lo = f(xa, &m, ta, tb, p);
            m[c] = xb[c];
            dxb[c] = (hi - lo) / (2.0 * h);
        }
        let h = fd_step(tb);
        *dtb = (f(xa, xb, ta, tb + h, p) - f(xa, xb, ta, tb - h, p)) / (2.0 * h);
    }

    pub fn objective_grad(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = &self.layout;
        let tb = self.tb(z);
        let ta = self.ocp.time.ta();
        let gamma = 0.5 * (tb - ta);
        let times = self.node_times(tb);
        let taus = &self.grid().nodes;
        let p = self.params(z);
        let s = self.ocp.cost_scale;
        let mut grad = DVector::zeros(l.n_vars);
        let mut x = vec![0.0; l.nx];
        let mut u = vec![0.0; l.nu];
        let mut dx = vec![0.0; l.nx];
        let mut du = vec![0.0; l.nu];
        let mut dt = 0.0;
        let mut quad = 0.0;
        for k in 0..l.num_nodes {
            self.gather_node(z, k, &mut x, &mut u);
            let w = self.system.wb[k];
            quad += w * (self.ocp.running_cost)(&x, &u, times[k], p);
            self.running_cost_grad(&x, &u, times[k], p, &mut dx, &mut du, &mut dt);
            for i in 0..l.nx {
                grad[l.x_idx(i, k)] += s * gamma * w * dx[i];
            }
            for i in 0..l.nu {
                grad[l.u_idx(i, k)] += s * gamma * w * du[i];
            }
            if let Some(off) = l.tb_off {
                grad[off] += s * gamma * w * dt * 0.5 * (taus[k] + 1.0);
            }
        }
        if let Some(off) = l.tb_off {
            grad[off] += s * 0.5 * quad;
        }
        let xa = &z.as_slice()[l.xa_off..l.xa_off + l.nx];
        let xb = &z.as_slice()[l.xb_off..l.xb_off + l.nx];
        let mut dxa = vec![0.0; l.nx];
        let mut dxb = vec![0.0; l.nx];
        let mut dtb = 0.0;
        self.endpoint_cost_grad(xa, xb, ta, tb, p, &mut dxa, &mut dxb, &mut dtb);
        for i in 0..l.nx {
            grad[l.xa_idx(i)] += s * dxa[i];
            grad[l.xb_idx(i)] += s * dxb[i];
        }
        if let Some(off) = l.tb_off {
            grad[off] += s * dtb;
        }
        grad
    }

    /// All equality constraint values: linear Birkhoff block, collocation,
    /// then pinned events.
    pub fn eq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        let l = &self.layout;
        debug_assert_eq!(out.len(), l.n_eq);
        let num = l.num_nodes;
        let tb = self.tb(z);
        let ta = self.ocp.time.ta();
        let gamma = 0.5 * (tb - ta);
        let times = self.node_times(tb);
        let p = self.params(z);

        for i in 0..l.nx {
            let xs = &z.as_slice()[i * num..(i + 1) * num];
            let vs = z.rows(l.v_off + i * num, num);
            let xa = z[l.xa_idx(i)];
            let xb = z[l.xb_idx(i)];
            let acc = &self.system.ba * &vs;
            for k in 0..num {
                out[l.lin_row(i, k)] = xs[k] - acc[k] - xa;
            }
            out[l.lin_row(i, num)] = self.system.wb.dot(&vs) + xa - xb;
        }

        let mut x = vec![0.0; l.nx];
        let mut u = vec![0.0; l.nu];
        let mut f = vec![0.0; l.nx];
        for k in 0..num {
            self.gather_node(z, k, &mut x, &mut u);
            (self.ocp.dynamics)(&x, &u, times[k], p, &mut f);
            for i in 0..l.nx {
                out[l.collocation_row(i, k)] = z[l.v_idx(i, k)] - gamma * f[i];
            }
        }

        if self.ocp.ne > 0 {
            let xa = &z.as_slice()[l.xa_off..l.xa_off + l.nx];
            let xb = &z.as_slice()[l.xb_off..l.xb_off + l.nx];
            let mut e = vec![0.0; self.ocp.ne];
            (self.ocp.events)(xa, xb, ta, tb, p, &mut e);
            for r in 0..self.ocp.ne {
                if self.event_eq_rows[r] != usize::MAX {
                    out[self.event_eq_rows[r]] = e[r] - self.ocp.event_lower[r];
                }
            }
        }
    }

    /// All inequality constraints in g <= 0 form: path bounds node by node,
    /// boxed events, then the t^b box.
    pub fn ineq_constraints(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        let l = &self.layout;
        debug_assert_eq!(out.len(), l.n_ineq);
        if l.n_ineq == 0 {
            return;
        }
        let num = l.num_nodes;
        let tb = self.tb(z);
        let ta = self.ocp.time.ta();
        let times = self.node_times(tb);
        let p = self.params(z);

        if let Some(path) = &self.ocp.path {
            let mut x = vec![0.0; l.nx];
            let mut u = vec![0.0; l.nu];
            let mut h = vec![0.0; self.ocp.nh];
            for k in 0..num {
                self.gather_node(z, k, &mut x, &mut u);
                path(&x, &u, times[k], p, &mut h);
                for r in 0..self.ocp.nh {
                    let iu = self.path_rows.upper[r * num + k];
                    if iu != usize::MAX {
                        out[iu] = h[r] - self.ocp.path_upper[r];
                    }
                    let il = self.path_rows.lower[r * num + k];
                    if il != usize::MAX {
                        out[il] = self.ocp.path_lower[r] - h[r];
                    }
                }
            }
        }

        if self.ocp.ne > 0 {
            let xa = &z.as_slice()[l.xa_off..l.xa_off + l.nx];
            let xb = &z.as_slice()[l.xb_off..l.xb_off + l.nx];
            let mut e = vec![0.0; self.ocp.ne];
            (self.ocp.events)(xa, xb, ta, tb, p, &mut e);
            for r in 0..self.ocp.ne {
                let iu = self.event_rows.upper[r];
                if iu != usize::MAX {
                    out[iu] = e[r] - self.ocp.event_upper[r];
                }
                let il = self.event_rows.lower[r];
                if il != usize::MAX {
                    out[il] = self.ocp.event_lower[r] - e[r];
                }
            }
        }

        if let Some((up, lo)) = self.tb_rows {
            if let TimeMode::FreeFinal { tb_min, tb_max, .. } = self.ocp.time {
                out[up] = tb - tb_max;
                out[lo] = tb_min - tb;
            }
        }
    }

    /// Visits every nonzero of the equality Jacobian as (row, col, value).
    pub fn visit_eq_jacobian(
        &self,
        z: &DVector<f64>,
        sink: &mut impl FnMut(usize, usize, f64),
    ) {
        let l = &self.layout;
        let num = l.num_nodes;
        for i in 0..l.nx {
            for k in 0..num {
                let row = l.lin_row(i, k);
                sink(row, l.x_idx(i, k), 1.0);
                for j in 0..num {
                    sink(row, l.v_idx(i, j), -self.system.ba[(k, j)]);
                }
                sink(row, l.xa_idx(i), -1.0);
            }
            let row = l.lin_row(i, num);
            for j in 0..num {
                sink(row, l.v_idx(i, j), self.system.wb[j]);
            }
            sink(row, l.xa_idx(i), 1.0);
            sink(row, l.xb_idx(i), -1.0);
        }
        self.visit_eq_jacobian_nonlinear(z, sink);
    }

    /// Collocation and event rows of the equality Jacobian; the dense linear
    /// block is handled separately so the transpose products can run through
    /// matrix kernels instead of per-entry callbacks.
    fn visit_eq_jacobian_nonlinear(
        &self,
        z: &DVector<f64>,
        sink: &mut impl FnMut(usize, usize, f64),
    ) {
        let l = &self.layout;
        let num = l.num_nodes;
        let tb = self.tb(z);
        let ta = self.ocp.time.ta();
        let gamma = 0.5 * (tb - ta);
        let times = self.node_times(tb);
        let taus = &self.grid().nodes;
        let p = self.params(z);

        let mut x = vec![0.0; l.nx];
        let mut u = vec![0.0; l.nu];
        let mut f = vec![0.0; l.nx];
        let mut dfdx = DMatrix::zeros(l.nx, l.nx);
        let mut dfdu = DMatrix::zeros(l.nx, l.nu);
        let mut dfdt = vec![0.0; l.nx];
        for k in 0..num {
            self.gather_node(z, k, &mut x, &mut u);
            self.dynamics_jacobian(&x, &u, times[k], p, &mut dfdx, &mut dfdu, &mut dfdt);
            if l.tb_off.is_some() {
                (self.ocp.dynamics)(&x, &u, times[k], p, &mut f);
            }
            for i in 0..l.nx {
                let row = l.collocation_row(i, k);
                sink(row, l.v_idx(i, k), 1.0);
                for m in 0..l.nx {
                    let d = dfdx[(i, m)];
                    if d != 0.0 {
                        sink(row, l.x_idx(m, k), -gamma * d);
                    }
                }
                for m in 0..l.nu {
                    let d = dfdu[(i, m)];
                    if d != 0.0 {
                        sink(row, l.u_idx(m, k), -gamma * d);
                    }
                }
                if let Some(off) = l.tb_off {
                    let d = 0.5 * f[i] + gamma * dfdt[i] * 0.5 * (taus[k] + 1.0);
                    sink(row, off, -d);
                }
            }
        }

        if self.ocp.ne > 0 && self.event_eq_rows.iter().any(|&r| r != usize::MAX) {
            let xa = &z.as_slice()[l.xa_off..l.xa_off + l.nx];
            let xb = &z.as_slice()[l.xb_off..l.xb_off + l.nx];
            let mut dedxa = DMatrix::zeros(self.ocp.ne, l.nx);
            let mut dedxb = DMatrix::zeros(self.ocp.ne, l.nx);
            let mut dedtb = vec![0.0; self.ocp.ne];
            self.events_jacobian(xa, xb, ta, tb, p, &mut dedxa, &mut dedxb, &mut dedtb);
            for r in 0..self.ocp.ne {
                let row = self.event_eq_rows[r];
                if row == usize::MAX {
                    continue;
                }
                for c in 0..l.nx {
                    if dedxa[(r, c)] != 0.0 {
                        sink(row, l.xa_idx(c), dedxa[(r, c)]);
                    }
                    if dedxb[(r, c)] != 0.0 {
                        sink(row, l.xb_idx(c), dedxb[(r, c)]);
                    }
                }
                if let Some(off) = l.tb_off {
                    if dedtb[r] != 0.0 {
                        sink(row, off, dedtb[r]);
                    }
                }
            }
        }
    }

    /// Visits every nonzero of the inequality Jacobian as (row, col, value).
    pub fn visit_ineq_jacobian(
        &self,
        z: &DVector<f64>,
        sink: &mut impl FnMut(usize, usize, f64),
    ) {
        let l = &self.layout;
        if l.n_ineq == 0 {
            return;
        }
        let num = l.num_nodes;
        let tb = self.tb(z);
        let ta = self.ocp.time.ta();
        let times = self.node_times(tb);
        let taus = &self.grid().nodes;
        let p = self.params(z);

        if self.ocp.path.is_some() {
            let mut x = vec![0.0; l.nx];
            let mut u = vec![0.0; l.nu];
            let mut dhdx = DMatrix::zeros(self.ocp.nh, l.nx);
            let mut dhdu = DMatrix::zeros(self.ocp.nh, l.nu);
            let mut dhdt = vec![0.0; self.ocp.nh];
            for k in 0..num {
                self.gather_node(z, k, &mut x, &mut u);
                self.path_jacobian(&x, &u, times[k], p, &mut dhdx, &mut dhdu, &mut dhdt);
                for r in 0..self.ocp.nh {
                    for (idx, sign) in [
                        (self.path_rows.upper[r * num + k], 1.0),
                        (self.path_rows.lower[r * num + k], -1.0),
                    ] {
                        if idx == usize::MAX {
                            continue;
                        }
                        for c in 0..l.nx {
                            let d = dhdx[(r, c)];
                            if d != 0.0 {
                                sink(idx, l.x_idx(c, k), sign * d);
                            }
                        }
                        for c in 0..l.nu {
                            let d = dhdu[(r, c)];
                            if d != 0.0 {
                                sink(idx, l.u_idx(c, k), sign * d);
                            }
                        }
                        if let Some(off) = l.tb_off {
                            let d = dhdt[r] * 0.5 * (taus[k] + 1.0);
                            if d != 0.0 {
                                sink(idx, off, sign * d);
                            }
                        }
                    }
                }
            }
        }

        let has_boxed_events = (0..self.ocp.ne).any(|r| {
            self.event_rows.upper[r] != usize::MAX || self.event_rows.lower[r] != usize::MAX
        });
        if has_boxed_events {
            let xa = &z.as_slice()[l.xa_off..l.xa_off + l.nx];
            let xb = &z.as_slice()[l.xb_off..l.xb_off + l.nx];
            let mut dedxa = DMatrix::zeros(self.ocp.ne, l.nx);
            let mut dedxb = DMatrix::zeros(self.ocp.ne, l.nx);
            let mut dedtb = vec![0.0; self.ocp.ne];
            self.events_jacobian(xa, xb, ta, tb, p, &mut dedxa, &mut dedxb, &mut dedtb);
            for r in 0..self.ocp.ne {
                for (idx, sign) in [
                    (self.event_rows.upper[r], 1.0),
                    (self.event_rows.lower[r], -1.0),
                ] {
                    if idx == usize::MAX {
                        continue;
                    }
                    for c in 0..l.nx {
                        if dedxa[(r, c)] != 0.0 {
                            sink(idx, l.xa_idx(c), sign * dedxa[(r, c)]);
                        }
                        if dedxb[(r, c)] != 0.0 {
                            sink(idx, l.xb_idx(c), sign * dedxb[(r, c)]);
                        }
                    }
                    if let Some(off) = l.tb_off {
                        if dedtb[r] != 0.0 {
                            sink(idx, off, sign * dedtb[r]);
                        }
                    }
                }
            }
        }

        if let Some((up, lo)) = self.tb_rows {
            let off = l.tb_off.expect("tb rows without tb variable");
            sink(up, off, 1.0);
            sink(lo, off, -1.0);
        }
    }

    /// out += J_eq(z)^T v. The dense linear block goes through gemv; only
    /// the node-local collocation and event rows use the entry visitor.
    pub fn eq_jac_tmul(&self, z: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        let l = &self.layout;
        let num = l.num_nodes;
        for i in 0..l.nx {
            let w = v.rows(l.lin_row(i, 0), num);
            let wq = v[l.lin_row(i, num)];
            for k in 0..num {
                out[l.x_idx(i, k)] += w[k];
            }
            let mut seg = out.rows_mut(l.v_off + i * num, num);
            seg.gemv_tr(-1.0, &self.system.ba, &w, 1.0);
            seg.axpy(wq, &self.system.wb, 1.0);
            out[l.xa_idx(i)] += wq - w.sum();
            out[l.xb_idx(i)] -= wq;
        }
        self.visit_eq_jacobian_nonlinear(z, &mut |row, col, val| {
            out[col] += val * v[row];
        });
    }

    /// out += J_ineq(z)^T v.
    pub fn ineq_jac_tmul(&self, z: &DVector<f64>, v: &DVector<f64>, out: &mut DVector<f64>) {
        self.visit_ineq_jacobian(z, &mut |row, col, val| {
            out[col] += val * v[row];
        });
    }

    /// out += J_eq(z) w, the forward product matching `eq_jac_tmul`.
    pub fn eq_jac_mul(&self, z: &DVector<f64>, w: &DVector<f64>, out: &mut DVector<f64>) {
        let l = &self.layout;
        let num = l.num_nodes;
        for i in 0..l.nx {
            let wv = w.rows(l.v_off + i * num, num);
            let wxa = w[l.xa_idx(i)];
            let mut seg = out.rows_mut(l.lin_row(i, 0), num);
            seg.gemv(-1.0, &self.system.ba, &wv, 1.0);
            for k in 0..num {
                seg[k] += w[l.x_idx(i, k)] - wxa;
            }
            out[l.lin_row(i, num)] += self.system.wb.dot(&wv) + wxa - w[l.xb_idx(i)];
        }
        self.visit_eq_jacobian_nonlinear(z, &mut |row, col, val| {
            out[row] += val * w[col];
        });
    }

    /// out += J_ineq(z) w.
    pub fn ineq_jac_mul(&self, z: &DVector<f64>, w: &DVector<f64>, out: &mut DVector<f64>) {
        self.visit_ineq_jacobian(z, &mut |row, col, val| {
            out[row] += val * w[col];
        });
    }

    /// Dense Jacobians, for tests and small problems.
    pub fn jacobians_dense(&self, z: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let l = &self.layout;
        let mut jeq = DMatrix::zeros(l.n_eq, l.n_vars);
        self.visit_eq_jacobian(z, &mut |row, col, val| {
            jeq[(row, col)] += val;
        });
        let mut jineq = DMatrix::zeros(l.n_ineq, l.n_vars);
        self.visit_ineq_jacobian(z, &mut |row, col, val| {
            jineq[(row, col)] += val;
        });
        (jeq, jineq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::{make_grid, GridSpec};
    use approx::assert_abs_diff_eq;

    fn grid(code: &str, order: usize) -> Grid {
        make_grid(GridSpec::from_code(code, order).unwrap()).unwrap()
    }

    /// Double integrator with quadratic control cost, fixed boundary states.
    fn double_integrator(time: TimeMode, with_jac: bool) -> OcpDefinition {
        let mut ocp = OcpDefinition::new("di", 2, 1, time);
        ocp.running_cost = Box::new(|_, u, _, _| 0.5 * u[0] * u[0]);
        ocp.dynamics = Box::new(|x, u, _, _, f| {
            f[0] = x[1];
            f[1] = u[0];
        });
        ocp.ne = 4;
        ocp.events = Box::new(|xa, xb, _, _, _, e| {
            e[0] = xa[0];
            e[1] = xa[1];
            e[2] = xb[0];
            e[3] = xb[1];
        });
        ocp.event_lower = vec![0.0, 0.0, 1.0, 0.0];
        ocp.event_upper = vec![0.0, 0.0, 1.0, 0.0];
        ocp.guess_xa = Some(vec![0.0, 0.0]);
        ocp.guess_xb = Some(vec![1.0, 0.0]);
        if with_jac {
            ocp.dynamics_jac = Some(Box::new(|_, _, _, _, dfdx, dfdu, dfdt| {
                dfdx.fill(0.0);
                dfdx[(0, 1)] = 1.0;
                dfdu.fill(0.0);
                dfdu[(1, 0)] = 1.0;
                dfdt.fill(0.0);
            }));
            ocp.running_cost_grad = Some(Box::new(|_, u, _, _, dx, du, dt| {
                dx.fill(0.0);
                du[0] = u[0];
                *dt = 0.0;
            }));
        }
        ocp
    }

    #[test]
    fn domain_map_basics() {
        let d = DomainMap::new(0.0, 10.0).unwrap();
        assert_abs_diff_eq!(d.map(-1.0), 0.0);
        assert_abs_diff_eq!(d.map(1.0), 10.0);
        assert_abs_diff_eq!(d.map(0.0), 5.0);
        assert_abs_diff_eq!(d.gamma(), 5.0);
        assert!(DomainMap::new(1.0, 1.0).is_err());
        assert!(DomainMap::new(2.0, 1.0).is_err());
    }

    #[test]
    fn layout_arithmetic_double_integrator() {
        let ocp = double_integrator(TimeMode::Fixed { ta: 0.0, tb: 1.0 }, false);
        let nlp = transcribe(ocp, &grid("cgl", 10)).unwrap();
        let l = &nlp.layout;
        // 2*11 states + 2*11 derivatives + 1*11 controls + 2 + 2 boundary.
        assert_eq!(l.n_vars, 59);
        assert_eq!(l.n_eq_linear, 24);
        assert_eq!(l.n_eq_collocation, 22);
        assert_eq!(l.n_eq, 24 + 22 + 4);
        assert_eq!(l.n_ineq, 0);
        assert!(l.tb_off.is_none());
    }

    #[test]
    fn free_time_adds_variable_and_box() {
        let ocp = double_integrator(
            TimeMode::FreeFinal {
                ta: 0.0,
                tb_min: 0.5,
                tb_max: 4.0,
            },
            false,
        );
        let nlp = transcribe(ocp, &grid("cgl", 10)).unwrap();
        assert_eq!(nlp.layout.n_vars, 60);
        assert_eq!(nlp.layout.n_ineq, 2);
        assert!(nlp.layout.tb_off.is_some());
    }

    #[test]
    fn constant_dynamics_satisfied_exactly() {
        // f = c constant: X_k = x^a + gamma c (tau_k + 1), V = gamma c solves
        // the linear and collocation blocks without an optimizer.
        let c = [0.7, -0.3];
        let mut ocp = OcpDefinition::new("const", 2, 1, TimeMode::Fixed { ta: 0.0, tb: 3.0 });
        ocp.dynamics = Box::new(move |_, _, _, _, f| f.copy_from_slice(&c));
        let nlp = transcribe(ocp, &grid("lgl", 7)).unwrap();
        let l = nlp.layout;
        let gamma = 1.5;
        let mut z = DVector::zeros(l.n_vars);
        for (k, &tau) in nlp.grid().nodes.clone().iter().enumerate() {
            for i in 0..2 {
                z[l.x_idx(i, k)] = 0.5 + gamma * c[i] * (tau + 1.0);
                z[l.v_idx(i, k)] = gamma * c[i];
            }
        }
        for i in 0..2 {
            z[l.xa_idx(i)] = 0.5;
            z[l.xb_idx(i)] = 0.5 + 2.0 * gamma * c[i];
        }
        let mut eq = DVector::zeros(l.n_eq);
        nlp.eq_constraints(&z, &mut eq);
        for r in 0..l.n_eq {
            assert!(eq[r].abs() <= 1e-12, "row {r}: {}", eq[r]);
        }
    }

    #[test]
    fn polynomial_trajectory_satisfies_linear_block() {
        // x(t) = t^3 on [0, 1]; V carries gamma xdot at the nodes.
        let mut ocp = OcpDefinition::new("poly", 1, 1, TimeMode::Fixed { ta: 0.0, tb: 1.0 });
        ocp.dynamics = Box::new(|_, _, _, _, f| f[0] = 0.0);
        let nlp = transcribe(ocp, &grid("cgl", 5)).unwrap();
        let l = nlp.layout;
        let gamma = 0.5;
        let mut z = DVector::zeros(l.n_vars);
        for (k, &tau) in nlp.grid().nodes.clone().iter().enumerate() {
            let t = 0.5 * (tau + 1.0);
            z[l.x_idx(0, k)] = t.powi(3);
            z[l.v_idx(0, k)] = gamma * 3.0 * t * t;
        }
        z[l.xa_idx(0)] = 0.0;
        z[l.xb_idx(0)] = 1.0;
        let mut eq = DVector::zeros(l.n_eq);
        nlp.eq_constraints(&z, &mut eq);
        for r in 0..l.n_eq_linear {
            assert!(eq[r].abs() <= 1e-9, "row {r}: {}", eq[r]);
        }
    }

    #[test]
    fn constant_running_cost_integrates_to_scaled_width() {
        for scale in [1.0, 0.01, 100.0] {
            let mut ocp =
                OcpDefinition::new("unit", 1, 1, TimeMode::Fixed { ta: -1.0, tb: 1.0 });
            ocp.running_cost = Box::new(|_, _, _, _| 1.0);
            ocp.cost_scale = scale;
            let nlp = transcribe(ocp, &grid("cg", 6)).unwrap();
            let z = nlp.default_guess();
            assert_abs_diff_eq!(nlp.objective(&z), 2.0 * scale, epsilon = 1e-12);
        }
    }

    #[test]
    fn polynomial_running_cost_matches_integral() {
        // F = t^2 over [0, 2]: integral 8/3, inside quadrature exactness.
        let mut ocp = OcpDefinition::new("quad", 1, 1, TimeMode::Fixed { ta: 0.0, tb: 2.0 });
        ocp.running_cost = Box::new(|_, _, t, _| t * t);
        let nlp = transcribe(ocp, &grid("cgl", 8)).unwrap();
        let z = nlp.default_guess();
        assert_abs_diff_eq!(nlp.objective(&z), 8.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn linear_rows_match_assembled_blocks() {
        let ocp = double_integrator(TimeMode::Fixed { ta: 0.0, tb: 1.0 }, false);
        let nlp = transcribe(ocp, &grid("cgl", 1)).unwrap();
        let z = nlp.default_guess();
        let (jeq, _) = nlp.jacobians_dense(&z);
        let a = nlp.system.a_matrix();
        let c = nlp.system.c_matrix();
        let l = nlp.layout;
        // State dimension 0 rows against [A_a | -C_a] columns.
        for k in 0..3 {
            for j in 0..2 {
                assert_abs_diff_eq!(jeq[(k, l.x_idx(0, j))], a[(k, j)], epsilon = 1e-14);
                assert_abs_diff_eq!(jeq[(k, l.v_idx(0, j))], a[(k, 2 + j)], epsilon = 1e-14);
            }
            assert_abs_diff_eq!(jeq[(k, l.xa_idx(0))], -c[(k, 0)], epsilon = 1e-14);
            assert_abs_diff_eq!(jeq[(k, l.xb_idx(0))], -c[(k, 1)], epsilon = 1e-14);
        }
    }

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        let mk = |with_jac| {
            double_integrator(
                TimeMode::FreeFinal {
                    ta: 0.0,
                    tb_min: 0.5,
                    tb_max: 4.0,
                },
                with_jac,
            )
        };
        let g = grid("cgl", 6);
        let analytic = transcribe(mk(true), &g).unwrap();
        let fd = transcribe(mk(false), &g).unwrap();
        let mut z = analytic.default_guess();
        // Perturb off the trivial point so nothing cancels by accident.
        for (i, v) in z.iter_mut().enumerate() {
            *v += 0.01 * ((i as f64) * 0.7).sin();
        }
        let (ja, _) = analytic.jacobians_dense(&z);
        let (jf, _) = fd.jacobians_dense(&z);
        let scale = ja.amax().max(1.0);
        let mut worst = 0.0f64;
        for r in 0..ja.nrows() {
            for c in 0..ja.ncols() {
                worst = worst.max((ja[(r, c)] - jf[(r, c)]).abs() / scale);
            }
        }
        assert!(worst < 1e-5, "relative disagreement {worst}");
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let ocp = double_integrator(
            TimeMode::FreeFinal {
                ta: 0.0,
                tb_min: 0.5,
                tb_max: 4.0,
            },
            true,
        );
        let nlp = transcribe(ocp, &grid("cgl", 5)).unwrap();
        let mut z = nlp.default_guess();
        for (i, v) in z.iter_mut().enumerate() {
            *v += 0.05 * ((i as f64) * 1.3).cos();
        }
        let grad = nlp.objective_grad(&z);
        for i in 0..nlp.layout.n_vars {
            let h = fd_step(z[i]);
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (nlp.objective(&zp) - nlp.objective(&zm)) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "component {i}: {} vs {}",
                grad[i],
                fd
            );
        }
    }

    #[test]
    fn eq_jac_tmul_agrees_with_dense() {
        let ocp = double_integrator(
            TimeMode::FreeFinal {
                ta: 0.0,
                tb_min: 0.5,
                tb_max: 4.0,
            },
            true,
        );
        let nlp = transcribe(ocp, &grid("lgr", 4)).unwrap();
        let mut z = nlp.default_guess();
        for (i, v) in z.iter_mut().enumerate() {
            *v += 0.02 * ((i as f64) * 0.9).sin();
        }
        let (jeq, jineq) = nlp.jacobians_dense(&z);
        let v_eq = DVector::from_fn(nlp.layout.n_eq, |i, _| (i as f64 * 0.31).sin());
        let mut got = DVector::zeros(nlp.layout.n_vars);
        nlp.eq_jac_tmul(&z, &v_eq, &mut got);
        let want = jeq.transpose() * &v_eq;
        assert!((got - want).amax() < 1e-12);

        let v_in = DVector::from_fn(nlp.layout.n_ineq, |i, _| (i as f64 * 0.17).cos());
        let mut got = DVector::zeros(nlp.layout.n_vars);
        nlp.ineq_jac_tmul(&z, &v_in, &mut got);
        let want = jineq.transpose() * &v_in;
        assert!((got - want).amax() < 1e-12);
    }

    #[test]
    fn eq_jac_mul_agrees_with_dense() {
        let ocp = double_integrator(
            TimeMode::FreeFinal {
                ta: 0.0,
                tb_min: 0.5,
                tb_max: 4.0,
            },
            true,
        );
        let nlp = transcribe(ocp, &grid("lgl", 5)).unwrap();
        let mut z = nlp.default_guess();
        for (i, v) in z.iter_mut().enumerate() {
            *v += 0.03 * ((i as f64) * 1.7).cos();
        }
        let (jeq, jineq) = nlp.jacobians_dense(&z);
        let w = DVector::from_fn(nlp.layout.n_vars, |i, _| (i as f64 * 0.23).sin());
        let mut got = DVector::zeros(nlp.layout.n_eq);
        nlp.eq_jac_mul(&z, &w, &mut got);
        let want = &jeq * &w;
        assert!((got - want).amax() < 1e-12);

        let mut got = DVector::zeros(nlp.layout.n_ineq);
        nlp.ineq_jac_mul(&z, &w, &mut got);
        let want = &jineq * &w;
        assert!((got - want).amax() < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_bounds() {
        let mut ocp = double_integrator(TimeMode::Fixed { ta: 0.0, tb: 1.0 }, false);
        ocp.event_lower[2] = 2.0; // above the upper bound of 1.0
        assert!(transcribe(ocp, &grid("cgl", 4)).is_err());
    }

    #[test]
    fn reports_non_finite_evaluator() {
        let mut ocp = double_integrator(TimeMode::Fixed { ta: 0.0, tb: 1.0 }, false);
        ocp.dynamics = Box::new(|x, _, _, _, f| {
            f[0] = 1.0 / (x[0] - x[0]); // NaN everywhere
            f[1] = 0.0;
        });
        match transcribe(ocp, &grid("cgl", 4)) {
            Err(Error::NonFiniteEvaluator { name }) => assert_eq!(name, "dynamics"),
            Err(other) => panic!("expected NonFiniteEvaluator, got {other:?}"),
            Ok(_) => panic!("expected NonFiniteEvaluator, got Ok"),
        }
    }
}
