//! Geometric programs and a log-barrier interior-point solver.
//!
//! A program `min f(x) s.t. q_i(x) <= 1, h_j(x) = 1` is solved in `y = log x`,
//! where it reads `min F(y) s.t. Q_i(y) <= 0, b_j . y + log d_j = 0` with
//! `F`, `Q_i` log-sum-exp functions. Equalities are eliminated by an affine
//! parametrization `y = y_p + Z z` and the barrier subproblems are minimized
//! in `z` with damped Newton steps. Phase I minimizes a common slack `s`
//! subject to `Q_i(y) <= s`.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::posy::{CompiledPosynomial, LogDerivs, Monomial, PosyError, Posynomial, VarId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("program has no variables")]
    NoVariables,
    #[error("{what} references unregistered variable {var}")]
    UnknownVariable { what: String, var: VarId },
    #[error("program has no objective")]
    NoObjective,
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Posy(#[from] PosyError),
}

/// `min objective(x) s.t. ineq_i(x) <= 1, eq_j(x) = 1, x > 0`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GpProgram {
    variables: Vec<String>,
    objective: Option<Posynomial>,
    ineqs: Vec<Posynomial>,
    eqs: Vec<Monomial>,
}

impl GpProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> VarId {
        self.variables.push(name.into());
        VarId(self.variables.len() - 1)
    }

    pub fn set_objective(&mut self, f: impl Into<Posynomial>) {
        self.objective = Some(f.into());
    }

    /// Adds `q(x) <= 1` and returns its index.
    pub fn add_ineq(&mut self, q: impl Into<Posynomial>) -> usize {
        self.ineqs.push(q.into());
        self.ineqs.len() - 1
    }

    /// Adds `h(x) = 1` and returns its index.
    pub fn add_eq(&mut self, h: Monomial) -> usize {
        self.eqs.push(h);
        self.eqs.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.variables[v.0]
    }

    pub fn objective(&self) -> Option<&Posynomial> {
        self.objective.as_ref()
    }

    pub fn ineqs(&self) -> &[Posynomial] {
        &self.ineqs
    }

    pub fn eqs(&self) -> &[Monomial] {
        &self.eqs
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let n = self.variables.len();
        if n == 0 {
            return Err(GpError::NoVariables);
        }
        let obj = self.objective.as_ref().ok_or(GpError::NoObjective)?;
        let check = |what: String, max: Option<VarId>| match max {
            Some(v) if v.0 >= n => Err(GpError::UnknownVariable { what, var: v }),
            _ => Ok(()),
        };
        check("objective".into(), obj.max_var())?;
        for (i, q) in self.ineqs.iter().enumerate() {
            check(format!("inequality {i}"), q.max_var())?;
        }
        for (j, h) in self.eqs.iter().enumerate() {
            check(format!("equality {j}"), h.max_var())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Bound on the duality gap of the log-transformed problem.
    pub tol: f64,
    /// Cap on the total number of Newton steps (phase I and II together).
    pub max_newton: usize,
    /// Factor by which the barrier weight grows between centering steps.
    pub barrier_mu: f64,
    /// Phase I stops once every `log q_i` is below `-feas_margin`.
    pub feas_margin: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_newton: 5000, barrier_mu: 10.0, feas_margin: 1e-3 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.tol > 0.0) {
            return Err(GpError::BadConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.barrier_mu > 1.0) {
            return Err(GpError::BadConfig(format!("barrier_mu must exceed 1, got {}", self.barrier_mu)));
        }
        if !(self.feas_margin > 0.0) {
            return Err(GpError::BadConfig("feas_margin must be positive".into()));
        }
        if self.max_newton == 0 {
            return Err(GpError::BadConfig("max_newton must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    /// Original (positive) variables.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    /// Duality-gap bound `m / t` at termination (log-space objective).
    pub gap: f64,
    /// `1 - q_i(x)` per inequality.
    pub constraint_residuals: Vec<f64>,
    /// `b_j . y + log d_j` per equality.
    pub equality_residuals: Vec<f64>,
    /// Barrier estimates of the inequality multipliers in log space.
    pub duals: Vec<f64>,
    /// Norm of the reduced Lagrangian gradient at `y`.
    pub kkt_residual: f64,
    /// Objective after each completed centering step.
    pub outer_objectives: Vec<f64>,
    pub newton_iterations: usize,
    /// Phase I optimum when infeasibility was detected.
    pub infeasibility_certificate: Option<f64>,
}

/// Strictly feasible starting point from phase I.
#[derive(Debug, Clone)]
pub enum PhaseOne {
    Feasible { y: Vec<f64>, max_log_constraint: f64, newton_iterations: usize },
    Infeasible { certificate: f64, newton_iterations: usize },
    IterationLimit { newton_iterations: usize },
}

/// `y = base + Z z` over the affine set of the equality constraints.
#[derive(Debug, Clone)]
enum Reduction {
    /// Equalities fix individual variables; `free[k]` is the y-index of `z_k`.
    Selection { base: Vec<f64>, free: Vec<usize>, slot: Vec<Option<usize>> },
    Dense { base: DVector<f64>, basis: DMatrix<f64> },
}

impl Reduction {
    fn build(nvars: usize, eqs: &[Monomial]) -> Result<Reduction, f64> {
        let rows: Vec<(Vec<(usize, f64)>, f64)> = eqs
            .iter()
            .map(|h| {
                let a: Vec<(usize, f64)> = h.exponents().iter().map(|(v, &a)| (v.0, a)).collect();
                (a, -h.coeff().ln())
            })
            .collect();
        if rows.iter().all(|(a, _)| a.len() == 1) {
            let mut fixed: Vec<Option<f64>> = vec![None; nvars];
            for (a, rhs) in &rows {
                let (v, coef) = a[0];
                let val = rhs / coef;
                match fixed[v] {
                    Some(prev) if (prev - val).abs() > 1e-12 * (1.0 + val.abs()) => {
                        return Err((prev - val).abs());
                    }
                    _ => fixed[v] = Some(val),
                }
            }
            let base: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
            let mut slot = vec![None; nvars];
            let mut free = Vec::new();
            for v in 0..nvars {
                if fixed[v].is_none() {
                    slot[v] = Some(free.len());
                    free.push(v);
                }
            }
            // Any empty row is a constant equality d = 1.
            return Ok(Reduction::Selection { base, free, slot });
        }

        let p = rows.len();
        let mut a = DMatrix::zeros(p, nvars);
        let mut b = DVector::zeros(p);
        for (i, (row, rhs)) in rows.iter().enumerate() {
            for &(v, coef) in row {
                a[(i, v)] = coef;
            }
            b[i] = *rhs;
        }
        let svd = SVD::new(a.clone(), true, true);
        let smax = svd.singular_values.max();
        let cutoff = 1e-12 * smax.max(1.0);
        let base = svd
            .solve(&b, cutoff)
            .unwrap_or_else(|_| DVector::zeros(nvars));
        let resid = (&a * &base - &b).amax();
        if resid > 1e-9 {
            return Err(resid);
        }
        let vt = svd.v_t.expect("requested V^T");
        let mut ortho: Vec<DVector<f64>> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > cutoff)
            .map(|k| vt.row(k).transpose())
            .collect();
        let rank = ortho.len();
        let mut null = Vec::with_capacity(nvars - rank);
        for j in 0..nvars {
            if ortho.len() == nvars {
                break;
            }
            let mut e = DVector::zeros(nvars);
            e[j] = 1.0;
            for _ in 0..2 {
                for q in &ortho {
                    let c = q.dot(&e);
                    e.axpy(-c, q, 1.0);
                }
            }
            let nrm = e.norm();
            if nrm > 1e-8 {
                e /= nrm;
                ortho.push(e.clone());
                null.push(e);
            }
        }
        let basis = if null.is_empty() {
            DMatrix::zeros(nvars, 0)
        } else {
            DMatrix::from_columns(&null)
        };
        Ok(Reduction::Dense { base, basis })
    }

    fn dim(&self) -> usize {
        match self {
            Reduction::Selection { free, .. } => free.len(),
            Reduction::Dense { basis, .. } => basis.ncols(),
        }
    }

    fn lift(&self, z: &DVector<f64>) -> Vec<f64> {
        match self {
            Reduction::Selection { base, free, .. } => {
                let mut y = base.clone();
                for (k, &v) in free.iter().enumerate() {
                    y[v] = base[v] + z[k];
                }
                y
            }
            Reduction::Dense { base, basis } => (base + basis * z).iter().copied().collect(),
        }
    }

    /// Coordinates of a point already on the affine set.
    fn project(&self, y: &[f64]) -> DVector<f64> {
        match self {
            Reduction::Selection { base, free, .. } => {
                DVector::from_iterator(free.len(), free.iter().map(|&v| y[v] - base[v]))
            }
            Reduction::Dense { base, basis } => {
                basis.transpose() * (DVector::from_column_slice(y) - base)
            }
        }
    }

    fn start(&self) -> Vec<f64> {
        match self {
            Reduction::Selection { base, .. } => base.clone(),
            Reduction::Dense { base, .. } => base.iter().copied().collect(),
        }
    }
}

/// Barrier machinery over the compiled log-space program.
struct Barrier<'a> {
    objective: &'a CompiledPosynomial,
    ineqs: &'a [CompiledPosynomial],
    reduction: &'a Reduction,
    nvars: usize,
}

struct Eval {
    phi: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    /// Reduced objective and constraint gradients, for dual recovery.
    obj_grad: DVector<f64>,
    con_grads: Vec<DVector<f64>>,
}

impl Barrier<'_> {
    /// `t F(y) - sum log(-Q_i(y))`, or `None` outside the strict domain.
    fn phi(&self, t: f64, y: &[f64]) -> Option<f64> {
        let mut phi = t * self.objective.value(y);
        for q in self.ineqs {
            let v = q.value(y);
            if !(v < 0.0) {
                return None;
            }
            phi -= (-v).ln();
        }
        phi.is_finite().then_some(phi)
    }

    fn eval(&self, t: f64, y: &[f64], scratch: &mut LogDerivs) -> Option<Eval> {
        let dim = self.reduction.dim();
        let mut grad_y = vec![0.0; self.nvars];
        let mut hess_y = match self.reduction {
            Reduction::Selection { .. } => DMatrix::zeros(dim, dim),
            Reduction::Dense { .. } => DMatrix::zeros(self.nvars, self.nvars),
        };
        let slot = |v: usize| -> Option<usize> {
            match self.reduction {
                Reduction::Selection { slot, .. } => slot[v],
                Reduction::Dense { .. } => Some(v),
            }
        };

        self.objective.derivs(y, scratch);
        let mut phi = t * scratch.value;
        let k = self.objective.support.len();
        let mut obj_grad_y = vec![0.0; self.nvars];
        for (a, &va) in self.objective.support.iter().enumerate() {
            obj_grad_y[va] = scratch.grad[a];
            grad_y[va] += t * scratch.grad[a];
            if let Some(ia) = slot(va) {
                for (b, &vb) in self.objective.support.iter().enumerate() {
                    if let Some(ib) = slot(vb) {
                        hess_y[(ia, ib)] += t * scratch.hess[a * k + b];
                    }
                }
            }
        }

        let mut con_grads = Vec::with_capacity(self.ineqs.len());
        for q in self.ineqs {
            q.derivs(y, scratch);
            let f = scratch.value;
            if !(f < 0.0) {
                return None;
            }
            phi -= (-f).ln();
            let inv = 1.0 / (-f);
            let k = q.support.len();
            let mut cg = vec![0.0; self.nvars];
            for (a, &va) in q.support.iter().enumerate() {
                cg[va] = scratch.grad[a];
                grad_y[va] += inv * scratch.grad[a];
                if let Some(ia) = slot(va) {
                    for (b, &vb) in q.support.iter().enumerate() {
                        if let Some(ib) = slot(vb) {
                            hess_y[(ia, ib)] += inv * scratch.hess[a * k + b]
                                + inv * inv * scratch.grad[a] * scratch.grad[b];
                        }
                    }
                }
            }
            con_grads.push(self.reduce_vec(&cg));
        }
        if !phi.is_finite() {
            return None;
        }
        let grad = self.reduce_vec(&grad_y);
        let hess = match self.reduction {
            Reduction::Selection { .. } => hess_y,
            Reduction::Dense { basis, .. } => basis.transpose() * hess_y * basis,
        };
        Some(Eval { phi, grad, hess, obj_grad: self.reduce_vec(&obj_grad_y), con_grads })
    }

    fn reduce_vec(&self, g: &[f64]) -> DVector<f64> {
        match self.reduction {
            Reduction::Selection { free, .. } => {
                DVector::from_iterator(free.len(), free.iter().map(|&v| g[v]))
            }
            Reduction::Dense { basis, .. } => basis.transpose() * DVector::from_column_slice(g),
        }
    }
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let n = grad.len();
    if n == 0 {
        return DVector::zeros(0);
    }
    let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    loop {
        let mut h = hess.clone();
        if ridge > 0.0 {
            for i in 0..n {
                h[(i, i)] += ridge;
            }
        }
        if let Some(chol) = h.cholesky() {
            let d = chol.solve(&(-grad));
            if d.iter().all(|x| x.is_finite()) {
                return d;
            }
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
        if ridge > 1e6 * scale {
            return -grad / scale;
        }
    }
}

/// Largest per-coordinate Newton step in log space.
const MAX_STEP: f64 = 20.0;
/// Newton decrement below which full steps are taken without a line search.
const QUADRATIC: f64 = 1e-4;
/// Half-width in log space of the region phase I searches.
const PHASE_ONE_RADIUS: f64 = 60.0;

enum CenterOutcome {
    Done,
    Stop,
    IterationLimit,
}

struct Runner<'a> {
    barrier: Barrier<'a>,
    budget: usize,
    used: usize,
    scratch: LogDerivs,
}

impl Runner<'_> {
    /// Minimizes the barrier at weight `t` from `z`. `stop` is polled after
    /// every accepted step.
    fn center(
        &mut self,
        t: f64,
        z: &mut DVector<f64>,
        stop: &dyn Fn(&[f64]) -> bool,
    ) -> CenterOutcome {
        let mut prev_dec = f64::INFINITY;
        loop {
            let y = self.barrier.reduction.lift(z);
            if stop(&y) {
                return CenterOutcome::Stop;
            }
            let Some(ev) = self.barrier.eval(t, &y, &mut self.scratch) else {
                // Iterates are kept strictly feasible by the line search.
                return CenterOutcome::Done;
            };
            let mut dz = newton_direction(&ev.hess, &ev.grad);
            let slope = ev.grad.dot(&dz);
            let dec = -slope;
            // Past the quadratic regime the decrement stalls at roundoff level.
            if !(dec > 0.0) || dec <= 1e-24 || (dec < QUADRATIC && dec > 0.25 * prev_dec) {
                return CenterOutcome::Done;
            }
            prev_dec = dec;
            // Nearly singular Hessians (unbounded directions) give huge steps.
            let big = dz.amax();
            let slope = if big > MAX_STEP {
                dz *= MAX_STEP / big;
                slope * MAX_STEP / big
            } else {
                slope
            };
            if self.used >= self.budget {
                return CenterOutcome::IterationLimit;
            }
            self.used += 1;
            if dec < QUADRATIC {
                let trial = &*z + &dz;
                if self.barrier.phi(t, &self.barrier.reduction.lift(&trial)).is_some() {
                    *z = trial;
                    continue;
                }
            }
            let mut step = 1.0;
            let accepted = loop {
                let trial = &*z + &dz * step;
                let ty = self.barrier.reduction.lift(&trial);
                if let Some(p) = self.barrier.phi(t, &ty) {
                    if p < ev.phi && p <= ev.phi + 0.01 * step * slope {
                        *z = trial;
                        break true;
                    }
                }
                step *= 0.5;
                if step < 1e-16 {
                    break false;
                }
            };
            if !accepted {
                return CenterOutcome::Done;
            }
        }
    }
}

struct Compiled {
    objective: CompiledPosynomial,
    ineqs: Vec<CompiledPosynomial>,
}

fn compile(prog: &GpProgram) -> Compiled {
    Compiled {
        objective: prog.objective.as_ref().expect("validated").compile(),
        ineqs: prog.ineqs.iter().map(Posynomial::compile).collect(),
    }
}

/// Finds `y` on the equality set with every `log q_i(y) < 0`.
pub fn phase_one(prog: &GpProgram, cfg: &SolverConfig) -> Result<PhaseOne, GpError> {
    prog.validate()?;
    cfg.validate()?;
    let reduction = match Reduction::build(prog.num_vars(), &prog.eqs) {
        Ok(r) => r,
        Err(resid) => return Ok(PhaseOne::Infeasible { certificate: resid, newton_iterations: 0 }),
    };
    phase_one_reduced(prog, cfg, &reduction, cfg.max_newton)
}

fn phase_one_reduced(
    prog: &GpProgram,
    cfg: &SolverConfig,
    reduction: &Reduction,
    budget: usize,
) -> Result<PhaseOne, GpError> {
    let y0 = reduction.start();
    let compiled = compile(prog);
    let max_q = compiled
        .ineqs
        .iter()
        .map(|q| q.value(&y0))
        .fold(f64::NEG_INFINITY, f64::max);
    if compiled.ineqs.is_empty() || max_q <= -cfg.feas_margin {
        return Ok(PhaseOne::Feasible { y: y0, max_log_constraint: max_q, newton_iterations: 0 });
    }

    // Augmented program in (x, sigma): min sigma s.t. q_i(x) / sigma <= 1.
    let n = prog.num_vars();
    let sigma = VarId(n);
    let aug_objective = Posynomial::from(Monomial::var(sigma)).compile();
    let mut aug_ineqs: Vec<CompiledPosynomial> = prog
        .ineqs
        .iter()
        .map(|q| (q.clone() / Monomial::var(sigma)).compile())
        .collect();
    // Slack constraints can make the phase-I barrier unbounded below; a wide
    // box around the start keeps its centers finite.
    let movable: Vec<usize> = match reduction {
        Reduction::Selection { free, .. } => free.clone(),
        Reduction::Dense { .. } => (0..n).collect(),
    };
    for v in movable {
        let (lo, hi) = (y0[v] - PHASE_ONE_RADIUS, y0[v] + PHASE_ONE_RADIUS);
        aug_ineqs.push(Posynomial::from(Monomial::power((-hi).exp(), VarId(v), 1.0)).compile());
        aug_ineqs.push(Posynomial::from(Monomial::power(lo.exp(), VarId(v), -1.0)).compile());
    }
    let aug_reduction = match reduction {
        Reduction::Selection { base, free, .. } => {
            let mut base = base.clone();
            base.push(0.0);
            let mut free = free.clone();
            free.push(n);
            let mut slot = vec![None; n + 1];
            for (k, &v) in free.iter().enumerate() {
                slot[v] = Some(k);
            }
            Reduction::Selection { base, free, slot }
        }
        Reduction::Dense { base, basis } => {
            let mut b = base.clone().insert_row(n, 0.0);
            b[n] = 0.0;
            let mut z = basis.clone().insert_row(n, 0.0).insert_column(basis.ncols(), 0.0);
            z[(n, basis.ncols())] = 1.0;
            Reduction::Dense { base: b, basis: z }
        }
    };
    let mut y_start = y0.clone();
    let s0 = max_q + 1.0;
    y_start.push(s0);
    let mut z = aug_reduction.project(&y_start);
    // Base carries s = 0, so the projection already places s0 in z.

    let mut runner = Runner {
        barrier: Barrier {
            objective: &aug_objective,
            ineqs: &aug_ineqs,
            reduction: &aug_reduction,
            nvars: n + 1,
        },
        budget,
        used: 0,
        scratch: LogDerivs::default(),
    };
    let margin = cfg.feas_margin;
    let stop = move |y: &[f64]| y[n] < -margin;
    let m = aug_ineqs.len() as f64;
    let mut t = 1.0;
    loop {
        match runner.center(t, &mut z, &stop) {
            CenterOutcome::Stop => break,
            CenterOutcome::IterationLimit => {
                return Ok(PhaseOne::IterationLimit { newton_iterations: runner.used })
            }
            CenterOutcome::Done => {}
        }
        let y = aug_reduction.lift(&z);
        if y[n] < -margin || m / t < cfg.tol.min(1e-10) {
            break;
        }
        t *= cfg.barrier_mu;
    }
    let y_aug = aug_reduction.lift(&z);
    let y: Vec<f64> = y_aug[..n].to_vec();
    let max_q = compiled.ineqs.iter().map(|q| q.value(&y)).fold(f64::NEG_INFINITY, f64::max);
    if max_q < 0.0 {
        Ok(PhaseOne::Feasible { y, max_log_constraint: max_q, newton_iterations: runner.used })
    } else {
        Ok(PhaseOne::Infeasible { certificate: max_q, newton_iterations: runner.used })
    }
}

/// Solves the program to a duality-gap bound of `cfg.tol`.
pub fn solve(prog: &GpProgram, cfg: &SolverConfig) -> Result<Solution, GpError> {
    prog.validate()?;
    cfg.validate()?;
    let n = prog.num_vars();
    let reduction = match Reduction::build(n, &prog.eqs) {
        Ok(r) => r,
        Err(resid) => return Ok(infeasible_solution(prog, resid, 0)),
    };
    let (y0, used) = match phase_one_reduced(prog, cfg, &reduction, cfg.max_newton)? {
        PhaseOne::Feasible { y, newton_iterations, .. } => (y, newton_iterations),
        PhaseOne::Infeasible { certificate, newton_iterations } => {
            return Ok(infeasible_solution(prog, certificate, newton_iterations))
        }
        PhaseOne::IterationLimit { newton_iterations } => {
            let y = reduction.start();
            return Ok(finish(prog, SolveStatus::IterationLimit, y, f64::INFINITY, newton_iterations, &[], None, 1.0, &reduction));
        }
    };

    let compiled = compile(prog);
    let mut runner = Runner {
        barrier: Barrier {
            objective: &compiled.objective,
            ineqs: &compiled.ineqs,
            reduction: &reduction,
            nvars: n,
        },
        budget: cfg.max_newton.saturating_sub(used),
        used: 0,
        scratch: LogDerivs::default(),
    };
    let mut z = reduction.project(&y0);
    let m = compiled.ineqs.len();
    let never = |_: &[f64]| false;
    let mut outer = Vec::new();
    let mut t = 1.0;
    let status = if m == 0 {
        // Unconstrained: one long centering at unit weight is plain Newton.
        match runner.center(1.0, &mut z, &never) {
            CenterOutcome::IterationLimit => SolveStatus::IterationLimit,
            _ => SolveStatus::Optimal,
        }
    } else {
        loop {
            if let CenterOutcome::IterationLimit = runner.center(t, &mut z, &never) {
                break SolveStatus::IterationLimit;
            }
            let y = reduction.lift(&z);
            outer.push(compiled.objective.value(&y).exp());
            if m as f64 / t < cfg.tol {
                break SolveStatus::Optimal;
            }
            // Land on the target gap instead of overshooting it: duals lose
            // accuracy as constraints approach activity.
            t = (t * cfg.barrier_mu).min(m as f64 / (0.999 * cfg.tol));
        }
    };
    let y = reduction.lift(&z);
    let gap = if m == 0 { 0.0 } else { m as f64 / t };
    Ok(finish(prog, status, y, gap, used + runner.used, &outer, None, t, &reduction))
}

/// Least-squares multipliers on the constraints the barrier marks active.
/// Barrier duals carry relative error about `eps * t` once `-Q_i` is near
/// roundoff; the refit removes it. `None` if any refit multiplier is negative.
fn polish_duals(ev: &Eval, barrier_duals: &[f64]) -> Option<Vec<f64>> {
    let top = barrier_duals.iter().copied().fold(0.0, f64::max);
    let active: Vec<usize> = (0..barrier_duals.len()).filter(|&i| barrier_duals[i] > 1e-6 * top.max(1.0)).collect();
    let dim = ev.obj_grad.len();
    if active.is_empty() || dim == 0 {
        return None;
    }
    let g = DMatrix::from_fn(dim, active.len(), |r, c| ev.con_grads[active[c]][r]);
    let mu_a = g.svd(true, true).solve(&(-&ev.obj_grad), 1e-12).ok()?;
    if mu_a.iter().any(|&m| !(m >= 0.0)) {
        return None;
    }
    let mut mu = barrier_duals.to_vec();
    for (k, &i) in active.iter().enumerate() {
        mu[i] = mu_a[k];
    }
    Some(mu)
}

fn infeasible_solution(prog: &GpProgram, certificate: f64, iters: usize) -> Solution {
    let n = prog.num_vars();
    Solution {
        status: SolveStatus::Infeasible,
        x: vec![1.0; n],
        y: vec![0.0; n],
        objective: f64::NAN,
        gap: f64::INFINITY,
        constraint_residuals: Vec::new(),
        equality_residuals: Vec::new(),
        duals: Vec::new(),
        kkt_residual: f64::NAN,
        outer_objectives: Vec::new(),
        newton_iterations: iters,
        infeasibility_certificate: Some(certificate),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    prog: &GpProgram,
    status: SolveStatus,
    y: Vec<f64>,
    gap: f64,
    iters: usize,
    outer: &[f64],
    certificate: Option<f64>,
    t: f64,
    reduction: &Reduction,
) -> Solution {
    let x: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    let objective = prog.objective.as_ref().map_or(f64::NAN, |f| f.log_eval(&y).exp());
    let con_logs: Vec<f64> = prog.ineqs.iter().map(|q| q.log_eval(&y)).collect();
    let constraint_residuals = con_logs.iter().map(|l| 1.0 - l.exp()).collect();
    let equality_residuals = prog.eqs.iter().map(|h| h.log_eval(&y)).collect();
    let mut duals: Vec<f64> = con_logs.iter().map(|&l| 1.0 / (t * -l)).collect();

    // Reduced Lagrangian gradient grad F + sum_i mu_i grad Q_i.
    let compiled = compile(prog);
    let barrier = Barrier {
        objective: &compiled.objective,
        ineqs: &compiled.ineqs,
        reduction,
        nvars: prog.num_vars(),
    };
    let lagrangian = |ev: &Eval, mu: &[f64]| {
        let mut g = ev.obj_grad.clone();
        for (cg, &m) in ev.con_grads.iter().zip(mu) {
            g.axpy(m, cg, 1.0);
        }
        g.norm()
    };
    let kkt_residual = match barrier.eval(t, &y, &mut LogDerivs::default()) {
        Some(ev) => {
            let resid = lagrangian(&ev, &duals);
            match polish_duals(&ev, &duals) {
                Some(mu) if lagrangian(&ev, &mu) < resid => {
                    let r = lagrangian(&ev, &mu);
                    duals = mu;
                    r
                }
                _ => resid,
            }
        }
        None => f64::NAN,
    };
    Solution {
        status,
        x,
        y,
        objective,
        gap,
        constraint_residuals,
        equality_residuals,
        duals,
        kkt_residual,
        outer_objectives: outer.to_vec(),
        newton_iterations: iters,
        infeasibility_certificate: certificate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn x_over(c: f64, v: VarId) -> Posynomial {
        Monomial::power(c, v, -1.0).into()
    }

    #[test]
    fn single_lower_bound() {
        let mut p = GpProgram::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        p.add_ineq(x_over(2.0, x));
        let s = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_relative_eq!(s.x[0], 2.0, max_relative = 1e-7);
        assert_relative_eq!(s.objective, 2.0, max_relative = 1e-7);
        assert!(s.constraint_residuals[0] >= 0.0);
    }

    #[test]
    fn separable_product() {
        let mut p = GpProgram::new();
        let x1 = p.add_var("x1");
        let x2 = p.add_var("x2");
        p.set_objective(Monomial::var(x1) * Monomial::var(x2));
        p.add_ineq(x_over(2.0, x1));
        p.add_ineq(x_over(3.0, x2));
        let s = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_relative_eq!(s.objective, 6.0, max_relative = 1e-7);
        assert_relative_eq!(s.x[0], 2.0, max_relative = 1e-6);
        assert_relative_eq!(s.x[1], 3.0, max_relative = 1e-6);
    }

    #[test]
    fn unconstrained_posynomial() {
        // d/dx (x + 1/x) = 0 at x = 1; a golden-section search agrees.
        let f = |x: f64| x + 1.0 / x;
        let (mut a, mut b) = (0.1f64, 10.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) { b = d } else { a = c }
        }
        let line_search_min = f((a + b) / 2.0);

        let mut p = GpProgram::new();
        let x = p.add_var("x");
        p.set_objective(Posynomial::from(Monomial::var(x)) + Monomial::power(1.0, x, -1.0));
        let s = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_relative_eq!(s.objective, 2.0, epsilon = 1e-10);
        assert_relative_eq!(s.objective, line_search_min, epsilon = 1e-10);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn phase_one_box() {
        let mut p = GpProgram::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        p.add_ineq(Monomial::power(0.5, x, 1.0)); // x <= 2
        p.add_ineq(x_over(0.5, x)); // x >= 0.5
        match phase_one(&p, &SolverConfig::default()).unwrap() {
            PhaseOne::Feasible { y, max_log_constraint, .. } => {
                assert!(max_log_constraint < 0.0);
                assert!(y[0].exp() > 0.5 && y[0].exp() < 2.0);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn phase_one_point_outside_box() {
        // Start y = 0 violates x >= 3; phase I must move.
        let mut p = GpProgram::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        p.add_ineq(Monomial::power(0.2, x, 1.0));
        p.add_ineq(x_over(3.0, x));
        let s = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_relative_eq!(s.x[0], 3.0, max_relative = 1e-7);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = GpProgram::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        p.add_ineq(Monomial::var(x)); // x <= 1
        p.add_ineq(x_over(2.0, x)); // x >= 2
        assert!(matches!(
            phase_one(&p, &SolverConfig::default()).unwrap(),
            PhaseOne::Infeasible { certificate, .. } if certificate > 0.0
        ));
        let s = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        // Best common violation is at x = sqrt 2: log(sqrt 2).
        assert_relative_eq!(s.infeasibility_certificate.unwrap(), 2f64.sqrt().ln(), epsilon = 1e-6);
    }

    #[test]
    fn monomial_equality_is_enforced() {
        // min x + y s.t. x y = 4 -> x = y = 2.
        let mut p = GpProgram::new();
        let x = p.add_var("x");
        let y = p.add_var("y");
        p.set_objective(Posynomial::from(Monomial::var(x)) + Monomial::var(y));
        p.add_eq(Monomial::new(0.25, [(x, 1.0), (y, 1.0)]).unwrap());
        p.add_ineq(Monomial::power(0.1, x, 1.0));
        let s = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_relative_eq!(s.objective, 4.0, max_relative = 1e-7);
        assert!(s.equality_residuals[0].abs() <= 1e-9);
    }

    #[test]
    fn inconsistent_equalities() {
        let mut p = GpProgram::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        p.add_eq(Monomial::var(x));
        p.add_eq(Monomial::power(0.5, x, 1.0));
        assert_eq!(solve(&p, &SolverConfig::default()).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn objective_scaling_keeps_argmin() {
        let build = |c: f64| {
            let mut p = GpProgram::new();
            let x1 = p.add_var("x1");
            let x2 = p.add_var("x2");
            p.set_objective(
                (Posynomial::from(Monomial::power(1.0, x1, -1.0)) + Monomial::power(2.0, x2, -1.0)).scale(c),
            );
            p.add_ineq(Posynomial::from(Monomial::power(0.5, x1, 1.0)) + Monomial::power(0.25, x2, 2.0));
            p
        };
        let a = solve(&build(1.0), &SolverConfig::default()).unwrap();
        let b = solve(&build(37.0), &SolverConfig::default()).unwrap();
        for i in 0..2 {
            assert_relative_eq!(a.x[i], b.x[i], max_relative = 1e-6);
        }
        assert_relative_eq!(b.objective, 37.0 * a.objective, max_relative = 1e-7);
    }

    #[test]
    fn kkt_and_monotone_outer_iterates() {
        let mut p = GpProgram::new();
        let x1 = p.add_var("x1");
        let x2 = p.add_var("x2");
        p.set_objective(Monomial::power(1.0, x1, -1.0) * Monomial::power(1.0, x2, -0.5));
        p.add_ineq(Posynomial::from(Monomial::power(0.3, x1, 1.0)) + Monomial::power(0.2, x2, 1.0));
        let s = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.kkt_residual <= 1e-6, "kkt {}", s.kkt_residual);
        for w in s.outer_objectives.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dense_equality_reduction() {
        // x1 x2 x3 = 1 and x1 / x2 = 2 couple variables beyond fixing them.
        let mut p = GpProgram::new();
        let v: Vec<VarId> = (0..3).map(|i| p.add_var(format!("x{i}"))).collect();
        p.set_objective(
            Posynomial::from(Monomial::var(v[0])) + Monomial::var(v[1]) + Monomial::var(v[2]),
        );
        p.add_eq(Monomial::new(1.0, [(v[0], 1.0), (v[1], 1.0), (v[2], 1.0)]).unwrap());
        p.add_eq(Monomial::new(0.5, [(v[0], 1.0), (v[1], -1.0)]).unwrap());
        p.add_ineq(Monomial::power(1e-3, v[0], 1.0));
        let s = solve(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.equality_residuals.iter().all(|r| r.abs() <= 1e-9));
        // x1 = 2 x2, x3 = 1 / (2 x2^2); minimize 3 x2 + 1/(2 x2^2) -> x2^3 = 1/3.
        let x2 = (1.0f64 / 3.0).cbrt();
        assert_relative_eq!(s.objective, 3.0 * x2 + 0.5 / (x2 * x2), max_relative = 1e-7);
    }

    #[test]
    fn rejects_unregistered_variables() {
        let mut p = GpProgram::new();
        p.add_var("x");
        p.set_objective(Monomial::var(VarId(3)));
        assert!(matches!(solve(&p, &SolverConfig::default()), Err(GpError::UnknownVariable { .. })));
        assert_eq!(GpProgram::new().validate().unwrap_err(), GpError::NoVariables);
    }

    #[test]
    fn rejects_bad_config() {
        let mut p = GpProgram::new();
        let x = p.add_var("x");
        p.set_objective(Monomial::var(x));
        let cfg = SolverConfig { barrier_mu: 1.0, ..Default::default() };
        assert!(matches!(solve(&p, &cfg), Err(GpError::BadConfig(_))));
    }
}
