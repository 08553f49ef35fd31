//! Independent verification of computed trajectories. A solution file is
//! judged only through its samples and the continuous problem data: the
//! control is rebuilt as an interpolated signal, propagated with an adaptive
//! Runge-Kutta integrator, and measured against the boundary and path
//! requirements. A second layer checks the first-order optimality
//! conditions carried by the multiplier samples. None of this touches the
//! collocation machinery, so agreement here is evidence, not tautology.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problems::CheckResult;
use crate::solution::SolutionFile;
use crate::transcription::OcpDefinition;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    PiecewiseLinear,
    ZeroOrderHold,
}

/// Control samples on strictly increasing breakpoints; evaluation clamps to
/// the end values outside the span.
pub struct ControlSignal {
    t: Vec<f64>,
    u: Vec<Vec<f64>>,
    interp: Interpolation,
}

impl ControlSignal {
    pub fn new(t: Vec<f64>, u: Vec<Vec<f64>>, interp: Interpolation) -> Result<Self> {
        if t.len() < 2 || t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadBreakpoints);
        }
        for row in &u {
            if row.len() != t.len() {
                return Err(Error::ShapeMismatch {
                    what: "control signal row".into(),
                    expected: t.len().to_string(),
                    got: row.len().to_string(),
                });
            }
        }
        Ok(ControlSignal { t, u, interp })
    }

    pub fn from_solution(sol: &SolutionFile) -> Result<Self> {
        ControlSignal::new(sol.t.clone(), sol.u.clone(), Interpolation::PiecewiseLinear)
    }

    pub fn num_channels(&self) -> usize {
        self.u.len()
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let n = self.t.len();
        if t <= self.t[0] {
            for (o, row) in out.iter_mut().zip(&self.u) {
                *o = row[0];
            }
            return;
        }
        if t >= self.t[n - 1] {
            for (o, row) in out.iter_mut().zip(&self.u) {
                *o = row[n - 1];
            }
            return;
        }
        let hi = self.t.partition_point(|&tk| tk <= t).min(n - 1);
        let lo = hi - 1;
        match self.interp {
            Interpolation::ZeroOrderHold => {
                for (o, row) in out.iter_mut().zip(&self.u) {
                    *o = row[lo];
                }
            }
            Interpolation::PiecewiseLinear => {
                let w = (t - self.t[lo]) / (self.t[hi] - self.t[lo]);
                for (o, row) in out.iter_mut().zip(&self.u) {
                    *o = row[lo] + w * (row[hi] - row[lo]);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IntegrationOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 2_000_000,
        }
    }
}

/// Propagated trajectory: one state row per dimension, sampled at the
/// requested output times.
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

// Dormand-Prince 5(4) tableau. The last stage sits at the step endpoint, so
// an accepted step hands its final slope to the next one.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
// Fifth-order weights minus the embedded fourth-order ones.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Stepper<'a> {
    ocp: &'a OcpDefinition,
    signal: &'a ControlSignal,
    p: &'a [f64],
    ubuf: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(ocp: &'a OcpDefinition, signal: &'a ControlSignal, p: &'a [f64]) -> Self {
        Stepper {
            ocp,
            signal,
            p,
            ubuf: vec![0.0; ocp.nu],
        }
    }

    fn rate(&mut self, t: f64, y: &[f64], out: &mut [f64]) {
        self.signal.eval(t, &mut self.ubuf);
        (self.ocp.dynamics)(y, &self.ubuf, t, self.p, out);
    }

    /// One trial step of size h from (t, y, k1); fills the remaining stages,
    /// the fifth-order result, and its endpoint slope. Returns the weighted
    /// rms error against the tolerances, infinite when anything blows up.
    fn trial(
        &mut self,
        t: f64,
        y: &[f64],
        h: f64,
        k: &mut [Vec<f64>; 7],
        ynew: &mut [f64],
        opts: &IntegrationOptions,
    ) -> f64 {
        let nx = y.len();
        let mut stage = vec![0.0; nx];
        for s in 1..7 {
            for i in 0..nx {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += DP_A[s][j] * kj[i];
                }
                stage[i] = y[i] + h * acc;
            }
            let (done, rest) = k.split_at_mut(s);
            let _ = done;
            self.rate(t + DP_C[s] * h, &stage, &mut rest[0]);
        }
        let mut err = 0.0;
        for i in 0..nx {
            let mut acc5 = 0.0;
            let mut acce = 0.0;
            for s in 0..7 {
                acc5 += DP_B5[s] * k[s][i];
                acce += DP_E[s] * k[s][i];
            }
            ynew[i] = y[i] + h * acc5;
            if !ynew[i].is_finite() {
                return f64::INFINITY;
            }
            let scale = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err += (h * acce / scale).powi(2);
        }
        (err / nx as f64).sqrt()
    }
}

/// Integrate the dynamics under an interpolated control from x0 over
/// [ta, tb], reporting the state at every requested output time. Output
/// times must be strictly increasing within the span; the step size adapts
/// freely between them and is clipped to land on each one exactly.
pub fn propagate(
    ocp: &OcpDefinition,
    signal: &ControlSignal,
    x0: &[f64],
    ta: f64,
    tb: f64,
    p: &[f64],
    out_times: &[f64],
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    if tb <= ta {
        return Err(Error::DegenerateInterval { ta, tb });
    }
    if out_times.windows(2).any(|w| w[1] <= w[0])
        || out_times.first().is_some_and(|&t| t < ta - 1e-12)
        || out_times.last().is_some_and(|&t| t > tb + 1e-12)
    {
        return Err(Error::BadBreakpoints);
    }
    let nx = x0.len();
    let span = tb - ta;
    let hmin = 1e-13 * span;
    let mut stepper = Stepper::new(ocp, signal, p);

    let mut t = ta;
    let mut y = x0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; nx]);
    stepper.rate(t, &y, &mut k[0]);
    let mut ynew = vec![0.0; nx];
    let mut h = span * 1e-3;

    let mut traj = Trajectory {
        t: Vec::with_capacity(out_times.len()),
        x: vec![Vec::with_capacity(out_times.len()); nx],
    };
    let mut next_out = 0;
    let record_due = |t: f64, y: &[f64], next_out: &mut usize, traj: &mut Trajectory| {
        while *next_out < out_times.len() && out_times[*next_out] <= t + 1e-12 * span {
            traj.t.push(out_times[*next_out]);
            for (row, &yi) in traj.x.iter_mut().zip(y) {
                row.push(yi);
            }
            *next_out += 1;
        }
    };
    record_due(t, &y, &mut next_out, &mut traj);

    let mut steps = 0;
    while t < tb - 1e-12 * span {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::TooManySteps {
                t,
                max_steps: opts.max_steps,
            });
        }
        let mut target = tb;
        if next_out < out_times.len() && out_times[next_out] < target {
            target = out_times[next_out];
        }
        let h_try = h.min(target - t).max(hmin);
        let err = stepper.trial(t, &y, h_try, &mut k, &mut ynew, opts);
        if err <= 1.0 {
            t += h_try;
            std::mem::swap(&mut y, &mut ynew);
            let (first, rest) = k.split_at_mut(6);
            std::mem::swap(&mut first[0], &mut rest[0]);
            record_due(t, &y, &mut next_out, &mut traj);
            let grow = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h_try * grow).min(span);
        } else {
            let shrink = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.5)
            } else {
                0.1
            };
            h = h_try * shrink;
            if h < hmin {
                return Err(Error::StepUnderflow { t });
            }
            // The endpoint slope was overwritten by the failed trial.
            stepper.rate(t, &y, &mut k[0]);
        }
    }
    record_due(t + 2e-12 * span, &y, &mut next_out, &mut traj);
    Ok(traj)
}

/// Fixed-step fifth-order propagation; returns the final state. Exists so
/// the integrator's order can be measured directly.
pub fn propagate_fixed(
    ocp: &OcpDefinition,
    signal: &ControlSignal,
    x0: &[f64],
    ta: f64,
    tb: f64,
    p: &[f64],
    n_steps: usize,
) -> Result<Vec<f64>> {
    if tb <= ta {
        return Err(Error::DegenerateInterval { ta, tb });
    }
    let nx = x0.len();
    let mut stepper = Stepper::new(ocp, signal, p);
    let mut t = ta;
    let mut y = x0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; nx]);
    let mut ynew = vec![0.0; nx];
    let h = (tb - ta) / n_steps as f64;
    let opts = IntegrationOptions::default();
    for step in 0..n_steps {
        stepper.rate(t, &y, &mut k[0]);
        let err = stepper.trial(t, &y, h, &mut k, &mut ynew, &opts);
        if !err.is_finite() {
            return Err(Error::StepUnderflow { t });
        }
        std::mem::swap(&mut y, &mut ynew);
        t = ta + (step + 1) as f64 * h;
    }
    Ok(y)
}

#[derive(Clone, Copy, Debug)]
pub struct CertificateOptions {
    pub tol_bc: f64,
    pub tol_path: f64,
    /// Dense sample multiplier: this many propagation samples per stored
    /// node, in addition to the nodes themselves.
    pub samples_per_node: usize,
    pub integration: IntegrationOptions,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions {
            tol_bc: 1e-3,
            tol_path: 1e-3,
            samples_per_node: 10,
            integration: IntegrationOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Certificate {
    /// Worst clipped boundary-event residual of the propagated endpoint.
    pub event_violation: f64,
    /// Worst clipped path-constraint violation over the dense samples.
    pub path_violation: f64,
    /// Largest gap between the propagated state and the stored samples.
    pub state_defect: f64,
    /// Gap between the propagated endpoint and the stored terminal state.
    pub terminal_defect: f64,
    pub passed: bool,
}

/// Rebuild the control signal from a solution file, integrate it from the
/// stored initial state, and measure the boundary and path residuals of the
/// propagated trajectory. The stored states only enter the defect
/// diagnostics, never the pass judgement.
pub fn feasibility_certificate(
    ocp: &OcpDefinition,
    sol: &SolutionFile,
    opts: &CertificateOptions,
) -> Result<Certificate> {
    let signal = ControlSignal::from_solution(sol)?;
    let (ta, tb) = (sol.ta, sol.tf);
    let n_nodes = sol.t.len();

    // Dense output grid: uniform samples merged with the stored node times.
    let n_dense = opts.samples_per_node.max(1) * n_nodes;
    let mut times: Vec<f64> = (0..=n_dense)
        .map(|i| ta + (tb - ta) * i as f64 / n_dense as f64)
        .collect();
    times.extend_from_slice(&sol.t);
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (tb - ta));

    let traj = propagate(
        ocp,
        &signal,
        &sol.xa,
        ta,
        tb,
        &sol.p,
        &times,
        &opts.integration,
    )?;

    let mut path_violation = 0.0f64;
    if ocp.nh > 0 {
        let mut h = vec![0.0; ocp.nh];
        let mut u = vec![0.0; ocp.nu];
        let mut x = vec![0.0; ocp.nx];
        let path = ocp.path.as_ref().expect("validated problems have a path evaluator when nh > 0");
        for (idx, &t) in traj.t.iter().enumerate() {
            for (xi, row) in x.iter_mut().zip(&traj.x) {
                *xi = row[idx];
            }
            signal.eval(t, &mut u);
            path(&x, &u, t, &sol.p, &mut h);
            for r in 0..ocp.nh {
                path_violation = path_violation
                    .max(h[r] - ocp.path_upper[r])
                    .max(ocp.path_lower[r] - h[r]);
            }
        }
        path_violation = path_violation.max(0.0);
    }

    let last = traj.t.len() - 1;
    let xb_prop: Vec<f64> = traj.x.iter().map(|row| row[last]).collect();
    let mut event_violation = 0.0f64;
    if ocp.ne > 0 {
        let mut e = vec![0.0; ocp.ne];
        (ocp.events)(&sol.xa, &xb_prop, ta, tb, &sol.p, &mut e);
        for r in 0..ocp.ne {
            event_violation = event_violation
                .max(e[r] - ocp.event_upper[r])
                .max(ocp.event_lower[r] - e[r]);
        }
        event_violation = event_violation.max(0.0);
    }

    let mut state_defect = 0.0f64;
    for (k, &tk) in sol.t.iter().enumerate() {
        let idx = traj
            .t
            .binary_search_by(|probe| probe.total_cmp(&tk))
            .unwrap_or_else(|i| i.min(traj.t.len() - 1));
        for i in 0..ocp.nx {
            state_defect = state_defect.max((traj.x[i][idx] - sol.x[i][k]).abs());
        }
    }
    let terminal_defect = (0..ocp.nx).fold(0.0f64, |m, i| {
        m.max((xb_prop[i] - sol.xb[i]).abs())
    });

    Ok(Certificate {
        event_violation,
        path_violation,
        state_defect,
        terminal_defect,
        passed: event_violation <= opts.tol_bc && path_violation <= opts.tol_path,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct OptimalityOptions {
    /// Relative tolerance shared by all first-order checks.
    pub tol: f64,
    /// Slack below which a path bound counts as active.
    pub active_tol: f64,
}

impl Default for OptimalityOptions {
    fn default() -> Self {
        OptimalityOptions {
            tol: 1e-2,
            active_tol: 1e-6,
        }
    }
}

fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// df/dx, df/du, df/dt of the dynamics, analytic when provided.
fn dynamics_partials(
    ocp: &OcpDefinition,
    x: &[f64],
    u: &[f64],
    t: f64,
    p: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let (nx, nu) = (ocp.nx, ocp.nu);
    let mut dfdx = DMatrix::zeros(nx, nx);
    let mut dfdu = DMatrix::zeros(nx, nu);
    let mut dfdt = vec![0.0; nx];
    if let Some(jac) = &ocp.dynamics_jac {
        jac(x, u, t, p, &mut dfdx, &mut dfdu, &mut dfdt);
        return (dfdx, dfdu, dfdt);
    }
    let mut fp = vec![0.0; nx];
    let mut fm = vec![0.0; nx];
    let mut xx = x.to_vec();
    for j in 0..nx {
        let h = fd_step(x[j]);
        xx[j] = x[j] + h;
        (ocp.dynamics)(&xx, u, t, p, &mut fp);
        xx[j] = x[j] - h;
        (ocp.dynamics)(&xx, u, t, p, &mut fm);
        xx[j] = x[j];
        for i in 0..nx {
            dfdx[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let mut uu = u.to_vec();
    for j in 0..nu {
        let h = fd_step(u[j]);
        uu[j] = u[j] + h;
        (ocp.dynamics)(x, &uu, t, p, &mut fp);
        uu[j] = u[j] - h;
        (ocp.dynamics)(x, &uu, t, p, &mut fm);
        uu[j] = u[j];
        for i in 0..nx {
            dfdu[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let h = fd_step(t);
    (ocp.dynamics)(x, u, t + h, p, &mut fp);
    (ocp.dynamics)(x, u, t - h, p, &mut fm);
    for i in 0..nx {
        dfdt[i] = (fp[i] - fm[i]) / (2.0 * h);
    }
    (dfdx, dfdu, dfdt)
}

/// dF/dx and dF/dt of the running cost.
fn running_cost_partials(
    ocp: &OcpDefinition,
    x: &[f64],
    u: &[f64],
    t: f64,
    p: &[f64],
) -> (Vec<f64>, f64) {
    let nx = ocp.nx;
    let mut dx = vec![0.0; nx];
    if let Some(grad) = &ocp.running_cost_grad {
        let mut du = vec![0.0; ocp.nu];
        let mut dt = 0.0;
        grad(x, u, t, p, &mut dx, &mut du, &mut dt);
        return (dx, dt);
    }
    let mut xx = x.to_vec();
    for j in 0..nx {
        let h = fd_step(x[j]);
        xx[j] = x[j] + h;
        let fp = (ocp.running_cost)(&xx, u, t, p);
        xx[j] = x[j] - h;
        let fm = (ocp.running_cost)(&xx, u, t, p);
        xx[j] = x[j];
        dx[j] = (fp - fm) / (2.0 * h);
    }
    let h = fd_step(t);
    let dt = ((ocp.running_cost)(x, u, t + h, p) - (ocp.running_cost)(x, u, t - h, p)) / (2.0 * h);
    (dx, dt)
}

/// dh/dx and dh/dt of the path constraints.
fn path_partials(
    ocp: &OcpDefinition,
    x: &[f64],
    u: &[f64],
    t: f64,
    p: &[f64],
) -> (DMatrix<f64>, Vec<f64>) {
    let (nx, nh) = (ocp.nx, ocp.nh);
    let mut dhdx = DMatrix::zeros(nh, nx);
    let mut dhdt = vec![0.0; nh];
    let path = ocp.path.as_ref().expect("caller checks nh > 0");
    if let Some(jac) = &ocp.path_jac {
        let mut dhdu = DMatrix::zeros(nh, ocp.nu);
        jac(x, u, t, p, &mut dhdx, &mut dhdu, &mut dhdt);
        return (dhdx, dhdt);
    }
    let mut hp = vec![0.0; nh];
    let mut hm = vec![0.0; nh];
    let mut xx = x.to_vec();
    for j in 0..nx {
        let h = fd_step(x[j]);
        xx[j] = x[j] + h;
        path(&xx, u, t, p, &mut hp);
        xx[j] = x[j] - h;
        path(&xx, u, t, p, &mut hm);
        xx[j] = x[j];
        for r in 0..nh {
            dhdx[(r, j)] = (hp[r] - hm[r]) / (2.0 * h);
        }
    }
    let h = fd_step(t);
    path(x, u, t + h, p, &mut hp);
    path(x, u, t - h, p, &mut hm);
    for r in 0..nh {
        dhdt[r] = (hp[r] - hm[r]) / (2.0 * h);
    }
    (dhdx, dhdt)
}

/// dE/dx^a, dE/dx^b, dE/dt^b of the endpoint cost.
fn endpoint_partials(
    ocp: &OcpDefinition,
    xa: &[f64],
    xb: &[f64],
    ta: f64,
    tb: f64,
    p: &[f64],
) -> (Vec<f64>, Vec<f64>, f64) {
    let nx = ocp.nx;
    let mut dxa = vec![0.0; nx];
    let mut dxb = vec![0.0; nx];
    let mut dtb = 0.0;
    if let Some(grad) = &ocp.endpoint_cost_grad {
        grad(xa, xb, ta, tb, p, &mut dxa, &mut dxb, &mut dtb);
        return (dxa, dxb, dtb);
    }
    let cost = &ocp.endpoint_cost;
    let mut buf = xa.to_vec();
    for j in 0..nx {
        let h = fd_step(xa[j]);
        buf[j] = xa[j] + h;
        let fp = cost(&buf, xb, ta, tb, p);
        buf[j] = xa[j] - h;
        let fm = cost(&buf, xb, ta, tb, p);
        buf[j] = xa[j];
        dxa[j] = (fp - fm) / (2.0 * h);
    }
    let mut buf = xb.to_vec();
    for j in 0..nx {
        let h = fd_step(xb[j]);
        buf[j] = xb[j] + h;
        let fp = cost(xa, &buf, ta, tb, p);
        buf[j] = xb[j] - h;
        let fm = cost(xa, &buf, ta, tb, p);
        buf[j] = xb[j];
        dxb[j] = (fp - fm) / (2.0 * h);
    }
    let h = fd_step(tb);
    dtb = (cost(xa, xb, ta, tb + h, p) - cost(xa, xb, ta, tb - h, p)) / (2.0 * h);
    (dxa, dxb, dtb)
}

/// de/dx^a, de/dx^b, de/dt^b of the boundary events.
fn event_partials(
    ocp: &OcpDefinition,
    xa: &[f64],
    xb: &[f64],
    ta: f64,
    tb: f64,
    p: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let (nx, ne) = (ocp.nx, ocp.ne);
    let mut dea = DMatrix::zeros(ne, nx);
    let mut deb = DMatrix::zeros(ne, nx);
    let mut det = vec![0.0; ne];
    if let Some(jac) = &ocp.events_jac {
        jac(xa, xb, ta, tb, p, &mut dea, &mut deb, &mut det);
        return (dea, deb, det);
    }
    let mut ep = vec![0.0; ne];
    let mut em = vec![0.0; ne];
    let mut buf = xa.to_vec();
    for j in 0..nx {
        let h = fd_step(xa[j]);
        buf[j] = xa[j] + h;
        (ocp.events)(&buf, xb, ta, tb, p, &mut ep);
        buf[j] = xa[j] - h;
        (ocp.events)(&buf, xb, ta, tb, p, &mut em);
        buf[j] = xa[j];
        for r in 0..ne {
            dea[(r, j)] = (ep[r] - em[r]) / (2.0 * h);
        }
    }
    let mut buf = xb.to_vec();
    for j in 0..nx {
        let h = fd_step(xb[j]);
        buf[j] = xb[j] + h;
        (ocp.events)(xa, &buf, ta, tb, p, &mut ep);
        buf[j] = xb[j] - h;
        (ocp.events)(xa, &buf, ta, tb, p, &mut em);
        buf[j] = xb[j];
        for r in 0..ne {
            deb[(r, j)] = (ep[r] - em[r]) / (2.0 * h);
        }
    }
    let h = fd_step(tb);
    (ocp.events)(xa, xb, ta, tb + h, p, &mut ep);
    (ocp.events)(xa, xb, ta, tb - h, p, &mut em);
    for r in 0..ne {
        det[r] = (ep[r] - em[r]) / (2.0 * h);
    }
    (dea, deb, det)
}

/// Marks nodes adjacent to a jump in any of the given rows. A difference
/// counts as a jump when it dwarfs both the typical difference and the
/// overall range of the row, so smooth rows on badly non-uniform grids are
/// left alone.
fn jump_mask(rows: &[&[f64]], n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for row in rows {
        let diffs: Vec<f64> = row.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        if diffs.is_empty() {
            continue;
        }
        let mut sorted = diffs.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let lo = row.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let span = hi - lo;
        let threshold = (5.0 * median).max(0.05 * span).max(1e-9);
        for (kk, &d) in diffs.iter().enumerate() {
            if d > threshold {
                mask[kk] = true;
                mask[kk + 1] = true;
            }
        }
    }
    mask
}

/// Derivative of a sampled function at interior nodes of a non-uniform
/// grid, by the three-point formula.
fn central_slope(t: &[f64], f: &[f64], k: usize) -> f64 {
    let dm = t[k] - t[k - 1];
    let dp = t[k + 1] - t[k];
    -dp / (dm * (dm + dp)) * f[k - 1] + (dp - dm) / (dm * dp) * f[k]
        + dm / (dp * (dm + dp)) * f[k + 1]
}

/// First-order optimality checks on the multiplier samples of a solution:
/// path-multiplier signs and complementarity, the adjoint equation away
/// from multiplier jumps, constancy (or the analytic drift) of the
/// Hamiltonian, the free-time Hamiltonian value, and transversality at both
/// endpoints. Requires a solution file that carries duals.
pub fn pontryagin_report(
    ocp: &OcpDefinition,
    sol: &SolutionFile,
    opts: &OptimalityOptions,
) -> Result<Vec<CheckResult>> {
    let lam = sol.lambda.as_ref().ok_or_else(|| {
        Error::SolutionFormat("optimality report needs multiplier samples".into())
    })?;
    let n = sol.t.len();
    let s = sol.cost_scale;
    let gamma = 0.5 * (sol.tf - sol.ta);
    let p = &sol.p;
    let tol = opts.tol;
    let mut out = Vec::new();

    let node_x = |k: usize| -> Vec<f64> { (0..ocp.nx).map(|i| sol.x[i][k]).collect() };
    let node_u = |k: usize| -> Vec<f64> { (0..ocp.nu).map(|i| sol.u[i][k]).collect() };
    let node_lam = |k: usize| -> Vec<f64> { (0..ocp.nx).map(|i| lam[i][k]).collect() };

    // Constraints on the state carry measure-valued multipliers whose
    // atoms make the discrete costates accurate only on average, not node
    // by node. The pointwise checks below stand down when such an arc is
    // active; the sign rule and any averaged checks still apply.
    let mut state_constrained = false;
    if ocp.nh > 0 {
        let mut h = vec![0.0; ocp.nh];
        let path = ocp.path.as_ref().expect("nh > 0 implies a path evaluator");
        for k in 0..n {
            let x = node_x(k);
            let u = node_u(k);
            path(&x, &u, sol.t[k], p, &mut h);
            for r in 0..ocp.nh {
                let slack = (ocp.path_upper[r] - h[r]).min(h[r] - ocp.path_lower[r]);
                if slack <= opts.active_tol * (1.0 + h[r].abs()) {
                    let (dhdx, _) = path_partials(ocp, &x, &u, sol.t[k], p);
                    if (0..ocp.nx).any(|j| dhdx[(r, j)].abs() > 1e-9) {
                        state_constrained = true;
                    }
                }
            }
            if state_constrained {
                break;
            }
        }
    }
    let not_pointwise =
        "not checked: an active state constraint makes the costates accurate only on average";

    // Sign rule and complementarity of the path multipliers: positive only
    // against the upper bound, negative only against the lower, zero when
    // the constraint is slack.
    if ocp.nh > 0 {
        match &sol.mu {
            Some(mu) => {
                let mu_scale = mu
                    .iter()
                    .flat_map(|row| row.iter())
                    .fold(0.0f64, |m, &v| m.max(v.abs()));
                let mut worst = 0.0f64;
                let mut h = vec![0.0; ocp.nh];
                let path = ocp.path.as_ref().expect("nh > 0 implies a path evaluator");
                for k in 0..n {
                    path(&node_x(k), &node_u(k), sol.t[k], p, &mut h);
                    for r in 0..ocp.nh {
                        let near_upper = ocp.path_upper[r] - h[r] <= opts.active_tol.max(tol);
                        let near_lower = h[r] - ocp.path_lower[r] <= opts.active_tol.max(tol);
                        let v = mu[r][k];
                        let bad = if near_upper && near_lower {
                            0.0
                        } else if near_upper {
                            (-v).max(0.0)
                        } else if near_lower {
                            v.max(0.0)
                        } else {
                            v.abs()
                        };
                        worst = worst.max(bad);
                    }
                }
                out.push(CheckResult {
                    name: "path multiplier signs".into(),
                    passed: worst <= tol * (1.0 + mu_scale),
                    detail: format!("worst violation {worst:.2e} against scale {mu_scale:.2e}"),
                });
            }
            None => out.push(CheckResult {
                name: "path multiplier signs".into(),
                passed: true,
                detail: "not checked: no path multiplier samples".into(),
            }),
        }
    }

    // Jump exclusion: the adjoint and Hamiltonian-drift checks use finite
    // differences, so nodes straddling a multiplier or control jump are
    // skipped.
    let mask = {
        let mut rows: Vec<&[f64]> = lam.iter().map(|r| r.as_slice()).collect();
        for row in &sol.u {
            rows.push(row.as_slice());
        }
        jump_mask(&rows, n)
    };

    // Adjoint equation at interior nodes: the slope of each costate must
    // match the negative state-gradient of the Hamiltonian, with active
    // path terms included. Interpolation wiggles radiate outward from any
    // kink and the differences amplify them, so the judgement falls on the
    // 90th percentile of the residuals; sign or scale mistakes in the
    // multipliers corrupt every node and still fail.
    if state_constrained {
        out.push(CheckResult {
            name: "adjoint equation".into(),
            passed: true,
            detail: not_pointwise.into(),
        });
    } else {
        let mut residuals = Vec::new();
        let mut grad_scale = 0.0f64;
        for k in 1..n - 1 {
            if mask[k] || mask[k - 1] || mask[k + 1] {
                continue;
            }
            let x = node_x(k);
            let u = node_u(k);
            let lk = node_lam(k);
            let (dfdx, _, _) = dynamics_partials(ocp, &x, &u, sol.t[k], p);
            let (dldx, _) = running_cost_partials(ocp, &x, &u, sol.t[k], p);
            let mut hx: Vec<f64> = (0..ocp.nx)
                .map(|j| s * dldx[j] + (0..ocp.nx).map(|i| dfdx[(i, j)] * lk[i]).sum::<f64>())
                .collect();
            if ocp.nh > 0 {
                if let Some(mu) = &sol.mu {
                    let (dhdx, _) = path_partials(ocp, &x, &u, sol.t[k], p);
                    for j in 0..ocp.nx {
                        for r in 0..ocp.nh {
                            hx[j] += mu[r][k] / gamma * dhdx[(r, j)];
                        }
                    }
                }
            }
            for i in 0..ocp.nx {
                let slope = central_slope(&sol.t, &lam[i], k);
                residuals.push((slope + hx[i]).abs());
                grad_scale = grad_scale.max(hx[i].abs());
            }
        }
        residuals.sort_by(f64::total_cmp);
        let p90 = residuals
            .get((residuals.len() * 9).div_euclid(10).min(residuals.len().saturating_sub(1)))
            .copied()
            .unwrap_or(f64::INFINITY);
        let worst = residuals.last().copied().unwrap_or(f64::INFINITY);
        out.push(CheckResult {
            name: "adjoint equation".into(),
            passed: !residuals.is_empty() && p90 <= tol * (1.0 + grad_scale),
            detail: format!(
                "p90 residual {p90:.2e}, worst {worst:.2e} over {} samples",
                residuals.len()
            ),
        });
    }

    match &sol.hamiltonian {
        Some(_) if state_constrained => out.push(CheckResult {
            name: "hamiltonian drift".into(),
            passed: true,
            detail: not_pointwise.into(),
        }),
        Some(ham) => {
            // The Hamiltonian drifts at exactly its explicit time
            // sensitivity; a least-squares slope over the clean nodes
            // stands in for the derivative.
            let (mut st, mut sh, mut stt, mut sth, mut count, mut drift) =
                (0.0, 0.0, 0.0, 0.0, 0usize, 0.0);
            let mut h_scale = 0.0f64;
            for k in 0..n {
                if mask[k] {
                    continue;
                }
                let x = node_x(k);
                let u = node_u(k);
                let (_, _, dfdt) = dynamics_partials(ocp, &x, &u, sol.t[k], p);
                let (_, dldt) = running_cost_partials(ocp, &x, &u, sol.t[k], p);
                let mut dh = s * dldt
                    + (0..ocp.nx).map(|i| lam[i][k] * dfdt[i]).sum::<f64>();
                if ocp.nh > 0 {
                    if let Some(mu) = &sol.mu {
                        let (_, dhdt) = path_partials(ocp, &x, &u, sol.t[k], p);
                        dh += (0..ocp.nh).map(|r| mu[r][k] / gamma * dhdt[r]).sum::<f64>();
                    }
                }
                drift += dh;
                st += sol.t[k];
                sh += ham[k];
                stt += sol.t[k] * sol.t[k];
                sth += sol.t[k] * ham[k];
                count += 1;
                h_scale = h_scale.max(ham[k].abs());
            }
            if count >= 3 {
                let c = count as f64;
                let slope = (c * sth - st * sh) / (c * stt - st * st);
                let want = drift / c;
                let scale = (1.0 + h_scale) / (sol.tf - sol.ta);
                out.push(CheckResult {
                    name: "hamiltonian drift".into(),
                    passed: (slope - want).abs() <= tol * scale,
                    detail: format!("fitted {slope:.2e} vs analytic {want:.2e}"),
                });
            }

            if ocp.time.is_free() {
                // Free final time trades the Hamiltonian endpoint against
                // the explicit final-time sensitivity of the endpoint
                // quantities.
                let (_, _, de_dtb) = endpoint_partials(ocp, &sol.xa, &sol.xb, sol.ta, sol.tf, p);
                let mut want = -s * de_dtb;
                if ocp.ne > 0 {
                    if let Some(nu) = &sol.nu {
                        let (_, _, det) = event_partials(ocp, &sol.xa, &sol.xb, sol.ta, sol.tf, p);
                        want -= (0..ocp.ne).map(|r| nu[r] * det[r]).sum::<f64>();
                    }
                }
                let got = ham[n - 1];
                out.push(CheckResult {
                    name: "free-time hamiltonian".into(),
                    passed: (got - want).abs() <= tol * (1.0 + want.abs()),
                    detail: format!("H(tb) = {got:.4e} vs {want:.4e}"),
                });
            }
        }
        None => out.push(CheckResult {
            name: "hamiltonian drift".into(),
            passed: true,
            detail: "not checked: no hamiltonian samples".into(),
        }),
    }

    // Transversality: the costates at the endpoints are pinned by the
    // endpoint cost and the event multipliers.
    match &sol.nu {
        Some(_) if ocp.ne > 0 && state_constrained => out.push(CheckResult {
            name: "transversality".into(),
            passed: true,
            detail: not_pointwise.into(),
        }),
        Some(nu) if ocp.ne > 0 => {
            let (de_dxa, de_dxb, _) = endpoint_partials(ocp, &sol.xa, &sol.xb, sol.ta, sol.tf, p);
            let (dea, deb, _) = event_partials(ocp, &sol.xa, &sol.xb, sol.ta, sol.tf, p);
            let lam_scale = lam
                .iter()
                .flat_map(|row| row.iter())
                .fold(0.0f64, |m, &v| m.max(v.abs()));
            let mut worst_a = 0.0f64;
            let mut worst_b = 0.0f64;
            for i in 0..ocp.nx {
                let pin_a: f64 =
                    s * de_dxa[i] + (0..ocp.ne).map(|r| nu[r] * dea[(r, i)]).sum::<f64>();
                let pin_b: f64 =
                    s * de_dxb[i] + (0..ocp.ne).map(|r| nu[r] * deb[(r, i)]).sum::<f64>();
                worst_a = worst_a.max((lam[i][0] + pin_a).abs());
                worst_b = worst_b.max((lam[i][n - 1] - pin_b).abs());
            }
            let scale = 1.0 + lam_scale;
            out.push(CheckResult {
                name: "initial transversality".into(),
                passed: worst_a <= tol * scale,
                detail: format!("worst residual {worst_a:.2e}"),
            });
            out.push(CheckResult {
                name: "terminal transversality".into(),
                passed: worst_b <= tol * scale,
                detail: format!("worst residual {worst_b:.2e}"),
            });
        }
        _ => out.push(CheckResult {
            name: "transversality".into(),
            passed: true,
            detail: "not checked: no event multiplier samples".into(),
        }),
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_breakwell, make_ml1, make_lq, reference, BREAKWELL_CEILING};
    use crate::solution::SolutionFile;
    use crate::solver::{KktResiduals, Status};
    use approx::assert_abs_diff_eq;

    fn bare_ocp(nx: usize, nu: usize) -> OcpDefinition {
        OcpDefinition::new(
            "test",
            nx,
            nu,
            crate::transcription::TimeMode::Fixed { ta: 0.0, tb: 1.0 },
        )
    }

    fn zero_signal(nu: usize, ta: f64, tb: f64) -> ControlSignal {
        ControlSignal::new(
            vec![ta, tb],
            vec![vec![0.0; 2]; nu],
            Interpolation::PiecewiseLinear,
        )
        .unwrap()
    }

    #[test]
    fn signal_interpolates_and_clamps() {
        let sig = ControlSignal::new(
            vec![0.0, 1.0, 3.0],
            vec![vec![0.0, 2.0, 2.0], vec![1.0, 1.0, -3.0]],
            Interpolation::PiecewiseLinear,
        )
        .unwrap();
        let mut u = [0.0; 2];
        sig.eval(0.5, &mut u);
        assert_abs_diff_eq!(u[0], 1.0);
        assert_abs_diff_eq!(u[1], 1.0);
        sig.eval(2.0, &mut u);
        assert_abs_diff_eq!(u[0], 2.0);
        assert_abs_diff_eq!(u[1], -1.0);
        // Breakpoints are reproduced exactly and the ends clamp.
        sig.eval(1.0, &mut u);
        assert_abs_diff_eq!(u[0], 2.0);
        sig.eval(-5.0, &mut u);
        assert_abs_diff_eq!(u[0], 0.0);
        sig.eval(7.0, &mut u);
        assert_abs_diff_eq!(u[1], -3.0);
    }

    #[test]
    fn zero_order_hold_holds_left_value() {
        let sig = ControlSignal::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![5.0, -1.0, 9.0]],
            Interpolation::ZeroOrderHold,
        )
        .unwrap();
        let mut u = [0.0];
        sig.eval(0.99, &mut u);
        assert_abs_diff_eq!(u[0], 5.0);
        sig.eval(1.0, &mut u);
        assert_abs_diff_eq!(u[0], -1.0);
        sig.eval(1.5, &mut u);
        assert_abs_diff_eq!(u[0], -1.0);
        sig.eval(2.5, &mut u);
        assert_abs_diff_eq!(u[0], 9.0);
    }

    #[test]
    fn rejects_bad_breakpoints() {
        assert!(matches!(
            ControlSignal::new(vec![0.0], vec![vec![1.0]], Interpolation::ZeroOrderHold),
            Err(Error::BadBreakpoints)
        ));
        assert!(matches!(
            ControlSignal::new(
                vec![0.0, 0.0, 1.0],
                vec![vec![1.0, 1.0, 1.0]],
                Interpolation::PiecewiseLinear
            ),
            Err(Error::BadBreakpoints)
        ));
        assert!(ControlSignal::new(
            vec![0.0, 1.0],
            vec![vec![1.0, 1.0, 1.0]],
            Interpolation::PiecewiseLinear
        )
        .is_err());
    }

    #[test]
    fn oscillator_round_trip() {
        let mut ocp = bare_ocp(2, 1);
        ocp.dynamics = Box::new(|x, _, _, _, f| {
            f[0] = x[1];
            f[1] = -x[0];
        });
        let tb = 2.0 * std::f64::consts::PI;
        let sig = zero_signal(1, 0.0, tb);
        let times: Vec<f64> = (0..=100).map(|i| tb * i as f64 / 100.0).collect();
        let traj = propagate(
            &ocp,
            &sig,
            &[1.0, 0.0],
            0.0,
            tb,
            &[],
            &times,
            &IntegrationOptions::default(),
        )
        .unwrap();
        assert_eq!(traj.t.len(), 101);
        let last = traj.t.len() - 1;
        assert_abs_diff_eq!(traj.x[0][last], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(traj.x[1][last], 0.0, epsilon = 1e-7);
        // Mid-trajectory samples follow the cosine too.
        for (idx, &t) in traj.t.iter().enumerate() {
            assert_abs_diff_eq!(traj.x[0][idx], t.cos(), epsilon = 1e-7);
        }
    }

    #[test]
    fn requested_sample_times_are_reproduced() {
        let mut ocp = bare_ocp(1, 1);
        ocp.dynamics = Box::new(|x, _, _, _, f| f[0] = -x[0]);
        let sig = zero_signal(1, 0.0, 2.0);
        let times = vec![0.0, 0.123456, 0.5, 1.9, 2.0];
        let traj = propagate(
            &ocp,
            &sig,
            &[1.0],
            0.0,
            2.0,
            &[],
            &times,
            &IntegrationOptions::default(),
        )
        .unwrap();
        assert_eq!(traj.t, times);
        for (idx, &t) in traj.t.iter().enumerate() {
            assert_abs_diff_eq!(traj.x[0][idx], (-t).exp(), epsilon = 1e-9);
        }
    }

    #[test]
    fn fixed_step_order_is_at_least_four() {
        // Riccati growth toward its pole at t = 1 has enough curvature to
        // expose the order; the step counts keep the errors well above
        // roundoff.
        let mut ocp = bare_ocp(1, 1);
        ocp.dynamics = Box::new(|x, _, _, _, f| f[0] = x[0] * x[0]);
        let sig = zero_signal(1, 0.0, 0.9);
        let exact = 10.0;
        let err = |steps: usize| -> f64 {
            let y = propagate_fixed(&ocp, &sig, &[1.0], 0.0, 0.9, &[], steps).unwrap();
            (y[0] - exact).abs()
        };
        let (e1, e2) = (err(30), err(60));
        let order = (e1 / e2).log2();
        assert!(order >= 4.0, "observed order {order:.2} (errors {e1:.3e}, {e2:.3e})");
    }

    #[test]
    fn underflow_is_reported_for_a_blowup() {
        // Solution escapes to infinity at t = 1; the step collapses there.
        let mut ocp = bare_ocp(1, 1);
        ocp.dynamics = Box::new(|x, _, _, _, f| f[0] = x[0] * x[0]);
        let sig = zero_signal(1, 0.0, 2.0);
        let res = propagate(
            &ocp,
            &sig,
            &[1.0],
            0.0,
            2.0,
            &[],
            &[2.0],
            &IntegrationOptions::default(),
        );
        match res {
            Err(Error::StepUnderflow { t }) => assert!((t - 1.0).abs() < 0.05, "t = {t}"),
            Err(Error::TooManySteps { .. }) => {}
            other => panic!("expected a step failure, got {:?}", other.map(|tr| tr.t.len())),
        }
    }

    /// Solution file skeleton used by the certificate tests.
    fn handmade_solution(
        ocp: &OcpDefinition,
        t: Vec<f64>,
        x: Vec<Vec<f64>>,
        u: Vec<Vec<f64>>,
        objective: f64,
    ) -> SolutionFile {
        let xa: Vec<f64> = x.iter().map(|row| row[0]).collect();
        let xb: Vec<f64> = x.iter().map(|row| row[row.len() - 1]).collect();
        SolutionFile {
            schema: crate::solution::SCHEMA_VERSION,
            problem: ocp.name.clone(),
            grid: None,
            cost_scale: ocp.cost_scale,
            status: Status::Optimal,
            objective,
            ta: t[0],
            tf: t[t.len() - 1],
            kkt: Some(KktResiduals::default()),
            t,
            x,
            u,
            v: None,
            xa,
            xb,
            p: Vec::new(),
            lambda: None,
            mu: None,
            nu: None,
            hamiltonian: None,
        }
    }

    #[test]
    fn zeroed_control_fails_the_certificate() {
        let ocp = make_ml1();
        let n = 50;
        let tf = 1.4;
        let t: Vec<f64> = (0..=n).map(|i| tf * i as f64 / n as f64).collect();
        // A lazily interpolated state history with the thruster off: the
        // lander keeps accelerating downward, so the terminal events fail.
        let x = vec![
            t.iter().map(|&tk| 1.0 - tk / tf).collect(),
            t.iter().map(|&tk| -0.783 * (1.0 - tk / tf)).collect(),
            vec![1.0; n + 1],
        ];
        let u = vec![vec![0.0; n + 1]];
        let sol = handmade_solution(&ocp, t, x, u, 0.0);
        let cert = feasibility_certificate(&ocp, &sol, &CertificateOptions::default()).unwrap();
        assert!(!cert.passed);
        assert!(cert.event_violation > 0.5, "violation {}", cert.event_violation);
    }

    #[test]
    fn analytic_control_passes_the_certificate() {
        let ocp = make_breakwell();
        let l = BREAKWELL_CEILING;
        let n = 400;
        let t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut x = vec![Vec::with_capacity(n + 1), Vec::with_capacity(n + 1)];
        let mut u = vec![Vec::with_capacity(n + 1)];
        for &tk in &t {
            let (xk, vk) = reference::breakwell_state(tk, l);
            x[0].push(xk);
            x[1].push(vk);
            u[0].push(reference::breakwell_control(tk, l));
        }
        let sol = handmade_solution(&ocp, t, x, u, reference::breakwell_objective(l));
        let opts = CertificateOptions {
            tol_bc: 1e-3,
            tol_path: 1e-3,
            ..CertificateOptions::default()
        };
        let cert = feasibility_certificate(&ocp, &sol, &opts).unwrap();
        assert!(
            cert.passed,
            "events {:.2e}, path {:.2e}",
            cert.event_violation, cert.path_violation
        );
        assert!(cert.state_defect < 1e-3, "defect {:.2e}", cert.state_defect);
    }

    /// The rest-to-rest double integrator written out from its closed
    /// forms, duals included, on a uniform grid.
    fn analytic_lq_solution(n: usize) -> SolutionFile {
        let t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut x = vec![Vec::new(), Vec::new()];
        let mut v = vec![Vec::new(), Vec::new()];
        let mut u = vec![Vec::new()];
        let mut lam = vec![Vec::new(), Vec::new()];
        let mut h = Vec::new();
        for &tk in &t {
            let (xk, vk) = reference::lq_state(tk);
            let uk = reference::lq_control(tk);
            let (lx, lv) = reference::lq_costate(tk);
            x[0].push(xk);
            x[1].push(vk);
            v[0].push(vk);
            v[1].push(uk);
            u[0].push(uk);
            lam[0].push(lx);
            lam[1].push(lv);
            h.push(0.5 * uk * uk + lx * vk + lv * uk);
        }
        SolutionFile {
            schema: crate::solution::SCHEMA_VERSION,
            problem: "lq".into(),
            grid: None,
            cost_scale: 1.0,
            status: Status::Optimal,
            objective: reference::LQ_OBJECTIVE,
            ta: 0.0,
            tf: 1.0,
            kkt: Some(KktResiduals::default()),
            t,
            x,
            u,
            v: Some(v),
            xa: vec![0.0, 0.0],
            xb: vec![1.0, 0.0],
            p: Vec::new(),
            lambda: Some(lam),
            mu: None,
            nu: Some(reference::LQ_NU.to_vec()),
            hamiltonian: Some(h),
        }
    }

    #[test]
    fn analytic_lq_passes_the_optimality_report() {
        let ocp = make_lq();
        let sol = analytic_lq_solution(20);
        let report = pontryagin_report(&ocp, &sol, &OptimalityOptions::default()).unwrap();
        assert!(!report.is_empty());
        for c in &report {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        // The analytic Hamiltonian is the constant -18.
        for &hk in sol.hamiltonian.as_ref().unwrap() {
            assert_abs_diff_eq!(hk, -18.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn flipped_costates_fail_the_optimality_report() {
        let ocp = make_lq();
        let mut sol = analytic_lq_solution(20);
        if let Some(lam) = &mut sol.lambda {
            for row in lam.iter_mut() {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
        }
        let report = pontryagin_report(&ocp, &sol, &OptimalityOptions::default()).unwrap();
        assert!(report.iter().any(|c| !c.passed));
    }

    #[test]
    fn optimality_report_requires_duals() {
        let ocp = make_lq();
        let mut sol = analytic_lq_solution(10);
        sol.lambda = None;
        assert!(matches!(
            pontryagin_report(&ocp, &sol, &OptimalityOptions::default()),
            Err(Error::SolutionFormat(_))
        ));
    }
}
