//! Budget-constrained allocation of prevention, correction and traffic-control
//! resources, posed as a geometric program over the shifted spreading matrix.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpsolve::{self, GpError, GpProgram, SolveStatus, SolverConfig};
use crate::netgraph::ContactNetwork;
use crate::posy::{Monomial, PosyError, Posynomial, VarId};
use crate::spectral::{self, SpectralError};

/// Recovery rates below this are raised to it.
pub const MIN_RATE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("network is not strongly connected")]
    NotStronglyConnected,
    #[error("problem is infeasible (phase-I certificate {certificate:.3e})")]
    Infeasible { certificate: f64 },
    #[error("solver hit its iteration limit after {newton_iterations} Newton steps")]
    IterationLimit { newton_iterations: usize },
    #[error("verification failed: recomputed abscissa {abscissa} exceeds bound {bound}")]
    Verification { abscissa: f64, bound: f64 },
    #[error("decision dimension {0} exceeds the brute-force limit of {MAX_GRID_DIM}")]
    DimensionTooLarge(usize),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Posy(#[from] PosyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceBounds {
    pub beta_lo: Vec<f64>,
    pub beta_hi: Vec<f64>,
    pub delta_lo: Vec<f64>,
    pub delta_hi: Vec<f64>,
    pub w_lo: Vec<f64>,
    pub w_hi: Vec<f64>,
}

impl ResourceBounds {
    /// Every box collapsed to the given nominal rates and the network weights.
    pub fn fixed(net: &ContactNetwork, beta: &[f64], delta: &[f64]) -> Self {
        let w = net.weights();
        Self {
            beta_lo: beta.to_vec(),
            beta_hi: beta.to_vec(),
            delta_lo: delta.to_vec(),
            delta_hi: delta.to_vec(),
            w_lo: w.clone(),
            w_hi: w,
        }
    }

    pub fn uniform(
        net: &ContactNetwork,
        beta: (f64, f64),
        delta: (f64, f64),
        w_floor_fraction: f64,
    ) -> Self {
        let n = net.node_count();
        let w = net.weights();
        Self {
            beta_lo: vec![beta.0; n],
            beta_hi: vec![beta.1; n],
            delta_lo: vec![delta.0; n],
            delta_hi: vec![delta.1; n],
            w_lo: w.iter().map(|x| x * w_floor_fraction).collect(),
            w_hi: w,
        }
    }

    /// Raises recovery bounds to [`MIN_RATE`].
    pub fn clamp_rates(mut self) -> Self {
        for d in self.delta_lo.iter_mut().chain(self.delta_hi.iter_mut()) {
            *d = d.max(MIN_RATE);
        }
        self
    }

    /// `max_i delta_hi[i]`.
    pub fn delta_max(&self) -> f64 {
        self.delta_hi.iter().copied().fold(0.0, f64::max)
    }

    pub fn validate(&self, net: &ContactNetwork) -> Result<(), AllocationError> {
        let n = net.node_count();
        let m = net.edge_count();
        let groups: [(&str, &[f64], &[f64], usize); 3] = [
            ("beta", &self.beta_lo, &self.beta_hi, n),
            ("delta", &self.delta_lo, &self.delta_hi, n),
            ("w", &self.w_lo, &self.w_hi, m),
        ];
        for (name, lo, hi, len) in groups {
            if lo.len() != len || hi.len() != len {
                return Err(AllocationError::Invalid(format!(
                    "{name} bounds need {len} entries, got {} and {}",
                    lo.len(),
                    hi.len()
                )));
            }
            for (k, (&l, &h)) in lo.iter().zip(hi).enumerate() {
                if !(l.is_finite() && h.is_finite() && l > 0.0 && l <= h) {
                    return Err(AllocationError::Invalid(format!(
                        "{name}[{k}]: need 0 < lo <= hi, got [{l}, {h}]"
                    )));
                }
            }
        }
        for (k, (&h, e)) in self.w_hi.iter().zip(net.edges()).enumerate() {
            if (h - e.weight).abs() > 1e-12 * e.weight.abs().max(1.0) {
                return Err(AllocationError::Invalid(format!(
                    "w_hi[{k}] = {h} differs from the edge weight {}",
                    e.weight
                )));
            }
        }
        Ok(())
    }
}

/// `cost(x) = sum_k c_k x^a_k + offset` with `c_k > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateCost {
    pub terms: Vec<(f64, f64)>,
    pub offset: f64,
}

impl UnivariateCost {
    pub fn zero() -> Self {
        Self { terms: Vec::new(), offset: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.terms.iter().map(|&(c, a)| c * x.powf(a)).sum::<f64>() + self.offset
    }

    /// The variable part as a posynomial in `v`; `None` when there are no terms.
    pub fn posynomial(&self, v: VarId) -> Result<Option<Posynomial>, PosyError> {
        if self.terms.is_empty() {
            return Ok(None);
        }
        let terms = self
            .terms
            .iter()
            .map(|&(c, a)| Monomial::new(c, [(v, a)]))
            .collect::<Result<Vec<_>, _>>()?;
        Posynomial::new(terms).map(Some)
    }

    fn validate(&self, what: &str) -> Result<(), AllocationError> {
        if !self.offset.is_finite()
            || self.terms.iter().any(|&(c, a)| !(c.is_finite() && c > 0.0 && a.is_finite()))
        {
            return Err(AllocationError::Invalid(format!("{what}: bad cost coefficients")));
        }
        Ok(())
    }
}

/// `p w^(-1/p) - p w_bar^(-1/p)`: zero at `w_bar`, growing as traffic is cut.
pub fn traffic_cost(p_exp: f64, w_bar: f64) -> Result<UnivariateCost, AllocationError> {
    if !(p_exp > 0.0 && p_exp.is_finite() && w_bar > 0.0 && w_bar.is_finite()) {
        return Err(AllocationError::Invalid(format!(
            "traffic cost needs p > 0 and w_bar > 0, got p = {p_exp}, w_bar = {w_bar}"
        )));
    }
    Ok(UnivariateCost {
        terms: vec![(p_exp, -1.0 / p_exp)],
        offset: -p_exp * w_bar.powf(-1.0 / p_exp),
    })
}

/// `c (1/beta - 1/beta_hi)`: zero at the uncontrolled infection rate.
pub fn prevention_cost(c: f64, beta_hi: f64) -> Result<UnivariateCost, AllocationError> {
    if !(c > 0.0 && beta_hi > 0.0) {
        return Err(AllocationError::Invalid("prevention cost needs c > 0, beta_hi > 0".into()));
    }
    Ok(UnivariateCost { terms: vec![(c, -1.0)], offset: -c / beta_hi })
}

/// `c (delta - delta_lo)`: zero at the uncontrolled recovery rate.
pub fn correction_cost(c: f64, delta_lo: f64) -> Result<UnivariateCost, AllocationError> {
    if !(c > 0.0 && delta_lo > 0.0) {
        return Err(AllocationError::Invalid("correction cost needs c > 0, delta_lo > 0".into()));
    }
    Ok(UnivariateCost { terms: vec![(c, 1.0)], offset: -c * delta_lo })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Per-node prevention cost in `beta_i`.
    pub f: Vec<UnivariateCost>,
    /// Per-node correction cost in the recovery rate.
    pub g: Vec<UnivariateCost>,
    /// Per-edge traffic-control cost in `w_e`.
    pub h: Vec<UnivariateCost>,
}

impl CostModel {
    /// Traffic costs with exponent `p` and linear-inverse / linear node costs.
    pub fn standard(
        net: &ContactNetwork,
        bounds: &ResourceBounds,
        p_exp: f64,
        c_prevention: f64,
        c_correction: f64,
    ) -> Result<Self, AllocationError> {
        Ok(Self {
            f: bounds
                .beta_hi
                .iter()
                .map(|&b| prevention_cost(c_prevention, b))
                .collect::<Result<_, _>>()?,
            g: bounds
                .delta_lo
                .iter()
                .map(|&d| correction_cost(c_correction, d))
                .collect::<Result<_, _>>()?,
            h: net
                .edges()
                .iter()
                .map(|e| traffic_cost(p_exp, e.weight))
                .collect::<Result<_, _>>()?,
        })
    }

    /// Sum of all constant terms, moved to the budget's right-hand side.
    pub fn budget_offset(&self) -> f64 {
        self.f.iter().chain(&self.g).chain(&self.h).map(|c| c.offset).sum()
    }

    fn validate(&self, net: &ContactNetwork, bounds: &ResourceBounds) -> Result<(), AllocationError> {
        let n = net.node_count();
        if self.f.len() != n || self.g.len() != n || self.h.len() != net.edge_count() {
            return Err(AllocationError::Invalid("cost model does not match network size".into()));
        }
        let tol = |a: f64, b: f64| 1e-12 * (1.0 + a.abs().max(b.abs()));
        for i in 0..n {
            self.f[i].validate("f")?;
            self.g[i].validate("g")?;
            let (fl, fh) = (self.f[i].eval(bounds.beta_lo[i]), self.f[i].eval(bounds.beta_hi[i]));
            if fl < fh - tol(fl, fh) {
                return Err(AllocationError::Invalid(format!("f[{i}] is not decreasing on its box")));
            }
            let (gl, gh) = (self.g[i].eval(bounds.delta_lo[i]), self.g[i].eval(bounds.delta_hi[i]));
            if gl > gh + tol(gl, gh) {
                return Err(AllocationError::Invalid(format!("g[{i}] is not increasing on its box")));
            }
        }
        for (e, h) in self.h.iter().enumerate() {
            h.validate("h")?;
            let (hl, hh) = (h.eval(bounds.w_lo[e]), h.eval(bounds.w_hi[e]));
            if hl < hh - tol(hl, hh) {
                return Err(AllocationError::Invalid(format!("h[{e}] is not decreasing on its box")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modes {
    pub traffic: bool,
    pub prevention: bool,
    pub correction: bool,
}

impl Modes {
    pub const ALL: Modes = Modes { traffic: true, prevention: true, correction: true };
    pub const NONE: Modes = Modes { traffic: false, prevention: false, correction: false };
    pub const TRAFFIC: Modes = Modes { traffic: true, prevention: false, correction: false };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetProblem {
    pub network: ContactNetwork,
    pub bounds: ResourceBounds,
    pub costs: CostModel,
    pub budget: f64,
    pub modes: Modes,
}

impl BudgetProblem {
    /// Validates the problem; for disabled resource types `lo = hi` is required.
    pub fn new(
        network: ContactNetwork,
        bounds: ResourceBounds,
        costs: CostModel,
        budget: f64,
        modes: Modes,
    ) -> Result<Self, AllocationError> {
        let p = Self { network, bounds: bounds.clamp_rates(), costs, budget, modes };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AllocationError> {
        if !self.network.is_strongly_connected() {
            return Err(AllocationError::NotStronglyConnected);
        }
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return Err(AllocationError::Invalid(format!("budget must be >= 0, got {}", self.budget)));
        }
        self.bounds.validate(&self.network)?;
        self.costs.validate(&self.network, &self.bounds)?;
        let b = &self.bounds;
        let fixed = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).all(|(l, h)| l == h);
        for (on, name, lo, hi) in [
            (self.modes.prevention, "prevention", &b.beta_lo, &b.beta_hi),
            (self.modes.correction, "correction", &b.delta_lo, &b.delta_hi),
            (self.modes.traffic, "traffic", &b.w_lo, &b.w_hi),
        ] {
            if !on && !fixed(lo, hi) {
                return Err(AllocationError::Invalid(format!(
                    "{name} is disabled but its bounds are not collapsed"
                )));
            }
        }
        Ok(())
    }

    /// Same problem with another budget.
    pub fn with_budget(&self, budget: f64) -> Self {
        Self { budget, ..self.clone() }
    }

    /// Decision count over which the brute-force oracle would grid.
    pub fn decision_dimension(&self) -> usize {
        self.items().iter().filter(|it| it.free).count()
    }

    /// Lowest-cost allocation: no prevention, no correction, full traffic.
    pub fn nominal(&self) -> Allocation {
        Allocation {
            beta: self.bounds.beta_hi.clone(),
            delta: self.bounds.delta_lo.clone(),
            w: self.bounds.w_hi.clone(),
        }
    }

    /// Cheapest allocation the brute-force and saturation checks compare against:
    /// every enabled resource at its most effective bound.
    pub fn saturated(&self) -> Allocation {
        let b = &self.bounds;
        Allocation {
            beta: if self.modes.prevention { b.beta_lo.clone() } else { b.beta_hi.clone() },
            delta: if self.modes.correction { b.delta_hi.clone() } else { b.delta_lo.clone() },
            w: if self.modes.traffic { b.w_lo.clone() } else { b.w_hi.clone() },
        }
    }

    /// Total spend of an allocation (disabled resource types cost nothing).
    pub fn spend(&self, a: &Allocation) -> Spend {
        let c = &self.costs;
        let pick = |on: bool, costs: &[crate::allocation::UnivariateCost], x: &[f64]| -> Vec<f64> {
            costs.iter().zip(x).map(|(f, &v)| if on { f.eval(v) } else { 0.0 }).collect()
        };
        Spend {
            prevention: pick(self.modes.prevention, &c.f, &a.beta),
            correction: pick(self.modes.correction, &c.g, &a.delta),
            traffic: pick(self.modes.traffic, &c.h, &a.w),
        }
    }

    pub fn abscissa(&self, a: &Allocation, tol: f64) -> Result<f64, SpectralError> {
        let adj = self.network.adjacency_with(&a.w);
        spectral::metzler_abscissa(&adj, &a.beta, &a.delta, tol)
    }

    fn items(&self) -> Vec<Item> {
        let b = &self.bounds;
        let mut out = Vec::new();
        let mut push = |kind, index, on: bool, lo: f64, hi: f64| {
            out.push(Item { kind, index, lo, hi, free: on && lo < hi });
        };
        for i in 0..self.network.node_count() {
            push(Kind::Beta, i, self.modes.prevention, b.beta_lo[i], b.beta_hi[i]);
        }
        for i in 0..self.network.node_count() {
            push(Kind::Delta, i, self.modes.correction, b.delta_lo[i], b.delta_hi[i]);
        }
        for e in 0..self.network.edge_count() {
            push(Kind::W, e, self.modes.traffic, b.w_lo[e], b.w_hi[e]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Beta,
    Delta,
    W,
}

#[derive(Debug, Clone, Copy)]
struct Item {
    kind: Kind,
    index: usize,
    lo: f64,
    hi: f64,
    free: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spend {
    pub prevention: Vec<f64>,
    pub correction: Vec<f64>,
    pub traffic: Vec<f64>,
}

impl Spend {
    pub fn total(&self) -> f64 {
        self.prevention.iter().chain(&self.correction).chain(&self.traffic).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Eigen,
    Budget,
    TTrick,
    TFloor,
    Box,
}

/// Where each quantity lives in the program: a variable or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Slot {
    Var(VarId),
    Fixed(f64),
}

impl Slot {
    fn monomial(self) -> Monomial {
        match self {
            Slot::Var(v) => Monomial::var(v),
            Slot::Fixed(c) => Monomial::constant(c),
        }
    }

    fn value(self, x: &[f64]) -> f64 {
        match self {
            Slot::Var(v) => x[v.0],
            Slot::Fixed(c) => c,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpLayout {
    pub lambda: VarId,
    pub u: Vec<VarId>,
    pub beta: Vec<Slot>,
    pub delta_hat: Vec<Slot>,
    /// Correction-cost argument; present where `delta_hat` is a variable.
    pub t: Vec<Option<VarId>>,
    pub w: Vec<Slot>,
    /// `Delta_bar + 1`.
    pub shift: f64,
    pub kinds: Vec<ConstraintKind>,
    /// Right-hand side of the budget after moving constants across.
    pub budget_rhs: f64,
    /// All boxes were collapsed to the nominal point for lack of budget.
    pub collapsed: bool,
}

impl GpLayout {
    pub fn count(&self, kind: ConstraintKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }
}

/// Builds the program `min lambda` over `(lambda, u, beta, delta_hat, t, w)`.
pub fn build_gp(prob: &BudgetProblem) -> Result<(GpProgram, GpLayout), AllocationError> {
    prob.validate()?;
    let net = &prob.network;
    let n = net.node_count();
    let shift = prob.bounds.delta_max() + 1.0;

    let nominal = prob.nominal();
    let nominal_cost = prob.spend(&nominal).total();
    let slack_tol = 1e-9 * prob.budget.abs().max(1.0);
    if prob.budget < nominal_cost - slack_tol {
        return Err(AllocationError::Infeasible { certificate: nominal_cost - prob.budget });
    }
    let collapsed = prob.budget <= nominal_cost + slack_tol && prob.decision_dimension() > 0;

    let mut prog = GpProgram::new();
    let lambda = prog.add_var("lambda");
    let u: Vec<VarId> = (0..n).map(|i| prog.add_var(format!("u{i}"))).collect();

    let mut beta = Vec::with_capacity(n);
    let mut delta_hat = Vec::with_capacity(n);
    let mut t = vec![None; n];
    let mut w = Vec::with_capacity(net.edge_count());
    let mut budget_terms: Vec<Monomial> = Vec::new();
    let mut fixed_cost = 0.0;
    let mut kinds = Vec::new();
    let mut boxes: Vec<Posynomial> = Vec::new();

    let add_box = |boxes: &mut Vec<Posynomial>, v: VarId, lo: f64, hi: f64| {
        boxes.push(Monomial::power(lo, v, -1.0).into());
        boxes.push(Monomial::power(1.0 / hi, v, 1.0).into());
    };
    let add_cost = |terms: &mut Vec<Monomial>,
                        fixed: &mut f64,
                        cost: &UnivariateCost,
                        on: bool,
                        slot: Slot|
     -> Result<(), AllocationError> {
        if !on {
            return Ok(());
        }
        match slot {
            Slot::Fixed(x) => *fixed += cost.eval(x),
            Slot::Var(v) => {
                *fixed += cost.offset;
                if let Some(p) = cost.posynomial(v)? {
                    terms.extend(p.terms().iter().cloned());
                }
            }
        }
        Ok(())
    };

    let items = prob.items();
    for it in &items {
        let free = it.free && !collapsed;
        let nominal_value = match it.kind {
            Kind::Beta => nominal.beta[it.index],
            Kind::Delta => nominal.delta[it.index],
            Kind::W => nominal.w[it.index],
        };
        match it.kind {
            Kind::Beta => {
                let slot = if free {
                    let v = prog.add_var(format!("beta{}", it.index));
                    add_box(&mut boxes, v, it.lo, it.hi);
                    Slot::Var(v)
                } else {
                    Slot::Fixed(if collapsed { nominal_value } else { it.lo })
                };
                add_cost(&mut budget_terms, &mut fixed_cost, &prob.costs.f[it.index], prob.modes.prevention, slot)?;
                beta.push(slot);
            }
            Kind::Delta => {
                let i = it.index;
                if free {
                    let dh = prog.add_var(format!("delta_hat{i}"));
                    add_box(&mut boxes, dh, shift - it.hi, shift - it.lo);
                    let tv = prog.add_var(format!("t{i}"));
                    t[i] = Some(tv);
                    delta_hat.push(Slot::Var(dh));
                    add_cost(&mut budget_terms, &mut fixed_cost, &prob.costs.g[i], true, Slot::Var(tv))?;
                } else {
                    let d = if collapsed { nominal_value } else { it.lo };
                    delta_hat.push(Slot::Fixed(shift - d));
                    add_cost(&mut budget_terms, &mut fixed_cost, &prob.costs.g[i], prob.modes.correction, Slot::Fixed(d))?;
                }
            }
            Kind::W => {
                let slot = if free {
                    let v = prog.add_var(format!("w{}", it.index));
                    add_box(&mut boxes, v, it.lo, it.hi);
                    Slot::Var(v)
                } else {
                    Slot::Fixed(if collapsed { nominal_value } else { it.lo })
                };
                add_cost(&mut budget_terms, &mut fixed_cost, &prob.costs.h[it.index], prob.modes.traffic, slot)?;
                w.push(slot);
            }
        }
    }

    prog.set_objective(Monomial::var(lambda));

    // Eigen constraints: (beta_i sum_e w_e u_src + delta_hat_i u_i) / (lambda u_i) <= 1.
    let in_edges = net.in_edges();
    for i in 0..n {
        let denom = Monomial::var(lambda) * Monomial::var(u[i]);
        let mut terms = vec![delta_hat[i].monomial() * Monomial::var(u[i]) / denom.clone()];
        for &e in &in_edges[i] {
            let src = net.edges()[e].src;
            terms.push(beta[i].monomial() * w[e].monomial() * Monomial::var(u[src]) / denom.clone());
        }
        prog.add_ineq(Posynomial::new(terms)?);
        kinds.push(ConstraintKind::Eigen);
    }

    let budget_rhs = prob.budget - fixed_cost;
    if !budget_terms.is_empty() {
        if !(budget_rhs > 0.0) {
            return Err(AllocationError::Infeasible { certificate: -budget_rhs });
        }
        prog.add_ineq(Posynomial::new(budget_terms)?.scale(1.0 / budget_rhs));
        kinds.push(ConstraintKind::Budget);
    }

    for i in 0..n {
        if let (Some(tv), Slot::Var(dh)) = (t[i], delta_hat[i]) {
            prog.add_ineq(
                (Posynomial::from(Monomial::var(tv)) + Monomial::var(dh)).scale(1.0 / shift),
            );
            kinds.push(ConstraintKind::TTrick);
        }
    }
    // The cost argument is a recovery rate, so it cannot drop below delta_lo.
    for i in 0..n {
        if let Some(tv) = t[i] {
            prog.add_ineq(Monomial::power(prob.bounds.delta_lo[i], tv, -1.0));
            kinds.push(ConstraintKind::TFloor);
        }
    }
    for b in boxes {
        prog.add_ineq(b);
        kinds.push(ConstraintKind::Box);
    }
    prog.add_eq(Monomial::var(u[0]));

    Ok((
        prog,
        GpLayout { lambda, u, beta, delta_hat, t, w, shift, kinds, budget_rhs, collapsed },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationResult {
    pub beta_star: Vec<f64>,
    pub delta_star: Vec<f64>,
    pub w_star: Vec<f64>,
    pub delta_hat_star: Vec<f64>,
    /// Correction-cost arguments; `None` where correction is not a decision.
    pub t_star: Vec<Option<f64>>,
    pub epsilon_star: f64,
    /// Spectral abscissa guaranteed by the program, `-epsilon_star`.
    pub lambda_star: f64,
    /// Optimal value of the program's `lambda` (shifted).
    pub gp_lambda: f64,
    pub shift: f64,
    pub spend: Spend,
    pub total_spend: f64,
    /// Spend with correction charged at `delta_star` instead of `t_star`.
    /// Exceeds `total_spend` when the t-slack is loose.
    pub spend_at_rates: f64,
    pub budget: f64,
    pub perron_u: Vec<f64>,
    /// Abscissa of the recovered allocation, recomputed independently.
    pub verified_abscissa: f64,
    /// Largest left-hand side among the eigen constraints.
    pub eigen_max_lhs: f64,
    pub gap: f64,
    pub newton_iterations: usize,
}

impl AllocationResult {
    pub fn allocation(&self) -> Allocation {
        Allocation {
            beta: self.beta_star.clone(),
            delta: self.delta_star.clone(),
            w: self.w_star.clone(),
        }
    }

    /// `t_i + delta_hat_i - shift` for every node with a correction decision.
    pub fn t_saturation_gaps(&self) -> Vec<f64> {
        self.t_star
            .iter()
            .zip(&self.delta_hat_star)
            .filter_map(|(t, dh)| t.map(|t| t + dh - self.shift))
            .collect()
    }
}

pub fn solve_allocation(
    prob: &BudgetProblem,
    cfg: &SolverConfig,
) -> Result<AllocationResult, AllocationError> {
    let (prog, layout) = build_gp(prob)?;
    let sol = gpsolve::solve(&prog, cfg)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(AllocationError::Infeasible {
                certificate: sol.infeasibility_certificate.unwrap_or(f64::NAN),
            })
        }
        SolveStatus::IterationLimit => {
            return Err(AllocationError::IterationLimit { newton_iterations: sol.newton_iterations })
        }
    }
    let x = &sol.x;
    let b = &prob.bounds;
    let clamp = |v: f64, lo: f64, hi: f64| v.clamp(lo, hi);
    let n = prob.network.node_count();
    let beta_star: Vec<f64> =
        (0..n).map(|i| clamp(layout.beta[i].value(x), b.beta_lo[i], b.beta_hi[i])).collect();
    let delta_hat_star: Vec<f64> = (0..n).map(|i| layout.delta_hat[i].value(x)).collect();
    let delta_star: Vec<f64> = (0..n)
        .map(|i| clamp(layout.shift - delta_hat_star[i], b.delta_lo[i], b.delta_hi[i]))
        .collect();
    let w_star: Vec<f64> = (0..prob.network.edge_count())
        .map(|e| clamp(layout.w[e].value(x), b.w_lo[e], b.w_hi[e]))
        .collect();
    let t_star: Vec<Option<f64>> = layout.t.iter().map(|t| t.map(|v| x[v.0])).collect();
    let gp_lambda = x[layout.lambda.0];
    let epsilon_star = layout.shift - gp_lambda;

    // Spend is charged on the program's cost arguments (t for correction).
    let alloc = Allocation { beta: beta_star.clone(), delta: delta_star.clone(), w: w_star.clone() };
    let mut spend = prob.spend(&alloc);
    let spend_at_rates = spend.total();
    for i in 0..n {
        if let Some(t) = t_star[i] {
            spend.correction[i] = prob.costs.g[i].eval(t);
        }
    }
    let total_spend = spend.total();

    let eigen_max_lhs = layout
        .kinds
        .iter()
        .zip(prog.ineqs())
        .filter(|(k, _)| **k == ConstraintKind::Eigen)
        .map(|(_, q)| q.log_eval(&sol.y).exp())
        .fold(f64::NEG_INFINITY, f64::max);

    let verified_abscissa = prob.abscissa(&alloc, spectral::DEFAULT_TOL)?;
    let bound = -epsilon_star + 1e-6;
    if verified_abscissa > bound {
        return Err(AllocationError::Verification { abscissa: verified_abscissa, bound });
    }
    Ok(AllocationResult {
        beta_star,
        delta_star,
        w_star,
        delta_hat_star,
        t_star,
        epsilon_star,
        lambda_star: -epsilon_star,
        gp_lambda,
        shift: layout.shift,
        spend,
        total_spend,
        spend_at_rates,
        budget: prob.budget,
        perron_u: layout.u.iter().map(|v| x[v.0]).collect(),
        verified_abscissa,
        eigen_max_lhs,
        gap: sol.gap,
        newton_iterations: sol.newton_iterations,
    })
}

/// Largest decision dimension the grid oracle accepts.
pub const MAX_GRID_DIM: usize = 4;
/// Largest per-axis step count the grid oracle accepts.
pub const MAX_GRID_STEPS: usize = 400;

/// Exhaustive search over a uniform grid on every decision interval.
/// Returns the smallest abscissa among grid points within budget.
pub fn brute_force_allocation(
    prob: &BudgetProblem,
    grid_steps: usize,
) -> Result<(f64, Allocation), AllocationError> {
    prob.validate()?;
    let items: Vec<Item> = prob.items().into_iter().filter(|it| it.free).collect();
    if items.len() > MAX_GRID_DIM {
        return Err(AllocationError::DimensionTooLarge(items.len()));
    }
    if grid_steps == 0 || grid_steps > MAX_GRID_STEPS {
        return Err(AllocationError::Invalid(format!(
            "grid_steps must be in 1..={MAX_GRID_STEPS}, got {grid_steps}"
        )));
    }
    let nominal = prob.nominal();
    let tol = 1e-12;
    let cap = prob.budget * (1.0 + 1e-12) + 1e-12;
    let mut best_alloc = nominal.clone();
    let mut best = prob.abscissa(&nominal, tol)?;
    if items.is_empty() {
        return Ok((best, best_alloc));
    }

    let adj0 = prob.network.adjacency();
    let n = adj0.nrows();
    let mut v = DVector::from_element(n, 1.0);
    let mut wl = DVector::from_element(n, 1.0);
    let value = |it: &Item, k: usize| it.lo + (it.hi - it.lo) * k as f64 / grid_steps as f64;
    let set = |a: &mut Allocation, it: &Item, x: f64| match it.kind {
        Kind::Beta => a.beta[it.index] = x,
        Kind::Delta => a.delta[it.index] = x,
        Kind::W => a.w[it.index] = x,
    };
    // The abscissa is monotone in every resource and spend is monotone along
    // each axis, so on the last axis only the most aggressive affordable grid
    // point can be optimal. It is found by bisection.
    let (last, outer) = items.split_last().expect("nonempty");
    let aggressive = |k: usize| if last.kind == Kind::Delta { grid_steps - k } else { k };
    let mut idx = vec![0usize; outer.len()];
    let mut a = nominal;
    loop {
        for (it, &k) in outer.iter().zip(&idx) {
            set(&mut a, it, value(it, k));
        }
        // Count of affordable points in aggressive-first order.
        let (mut lo, mut hi) = (0usize, grid_steps + 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            set(&mut a, last, value(last, aggressive(mid)));
            if prob.spend(&a).total() <= cap {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if lo <= grid_steps {
            set(&mut a, last, value(last, aggressive(lo)));
            let adj = prob.network.adjacency_with(&a.w);
            let (m, shift) = spectral::shifted_system(&adj, &a.beta, &a.delta);
            let pair = spectral::perron_from(&m, tol, v.clone(), wl.clone())?;
            let lam = pair.rho - shift;
            v = pair.right;
            wl = pair.left;
            if lam < best {
                best = lam;
                best_alloc = a.clone();
            }
        }
        // Odometer increment.
        let mut d = 0;
        loop {
            if d == idx.len() {
                return Ok((best, best_alloc));
            }
            idx[d] += 1;
            if idx[d] <= grid_steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}
