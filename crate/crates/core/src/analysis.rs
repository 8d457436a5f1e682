//! Node and edge centralities, budget sweeps and investment-vs-centrality
//! scatter data.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{self, AllocationError, AllocationResult, BudgetProblem};
use crate::gpsolve::SolverConfig;
use crate::netgraph::ContactNetwork;
use crate::spectral::{self, SpectralError};

pub const DEFAULT_DAMPING: f64 = 0.85;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

/// Right Perron vector of the adjacency matrix, summing to 1.
pub fn eigenvector_centrality(net: &ContactNetwork) -> Result<Vec<f64>, AnalysisError> {
    let pair = spectral::perron(&net.adjacency(), 1e-13)?;
    let s = pair.right.sum();
    Ok(pair.right.iter().map(|x| x / s).collect())
}

/// Stationary distribution of the walk that follows an out-edge with
/// probability proportional to its weight, teleporting uniformly with
/// probability `1 - damping`.
pub fn pagerank(net: &ContactNetwork, damping: f64) -> Result<Vec<f64>, AnalysisError> {
    if !(damping > 0.0 && damping < 1.0) {
        return Err(AnalysisError::Invalid(format!("damping must lie in (0, 1), got {damping}")));
    }
    let n = net.node_count();
    let mut out_weight = vec![0.0; n];
    for e in net.edges() {
        out_weight[e.src] += e.weight;
    }
    if let Some(i) = out_weight.iter().position(|&w| w == 0.0) {
        return Err(AnalysisError::Invalid(format!("node {i} has no out-edges")));
    }
    let teleport = (1.0 - damping) / n as f64;
    let mut r = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..100_000 {
        next.iter_mut().for_each(|x| *x = teleport);
        for e in net.edges() {
            next[e.dst] += damping * r[e.src] * e.weight / out_weight[e.src];
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let resid: f64 = next.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut r, &mut next);
        if resid <= 1e-12 {
            return Ok(r);
        }
    }
    Err(AnalysisError::Invalid("pagerank did not converge".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeCentrality {
    pub src: usize,
    pub dst: usize,
    /// `v_src * v_dst` with `v` the eigenvector centrality.
    pub eig: f64,
    /// `r_src * r_dst` with `r` the PageRank.
    pub pagerank: f64,
}

pub fn edge_centralities(net: &ContactNetwork) -> Result<Vec<EdgeCentrality>, AnalysisError> {
    let v = eigenvector_centrality(net)?;
    let r = pagerank(net, DEFAULT_DAMPING)?;
    Ok(net
        .edges()
        .iter()
        .map(|e| EdgeCentrality {
            src: e.src,
            dst: e.dst,
            eig: v[e.src] * v[e.dst],
            pagerank: r[e.src] * r[e.dst],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RowStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    Failed(String),
}

impl RowStatus {
    pub fn label(&self) -> &str {
        match self {
            RowStatus::Optimal => "optimal",
            RowStatus::Infeasible => "infeasible",
            RowStatus::IterationLimit => "iteration_limit",
            RowStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: f64,
    pub epsilon_star: f64,
    pub lambda_star: f64,
    pub total_spend: f64,
    pub status: RowStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Decay rate with every enabled resource at its most effective bound.
    pub epsilon_sat: f64,
    /// Cost of that allocation; larger budgets cannot help.
    pub saturation_cost: f64,
    /// Decay rate with no investment.
    pub epsilon_uncontrolled: f64,
}

impl Sweep {
    /// CSV with header `budget,epsilon_star,lambda_star,total_spend,status`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("budget,epsilon_star,lambda_star,total_spend,status\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.budget,
                r.epsilon_star,
                r.lambda_star,
                r.total_spend,
                r.status.label()
            );
        }
        out
    }
}

/// Solves `template` once per budget. Failures are recorded per row.
pub fn budget_sweep(
    template: &BudgetProblem,
    budgets: &[f64],
    cfg: &SolverConfig,
) -> Result<Sweep, AnalysisError> {
    if budgets.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(AnalysisError::Invalid("budgets must be finite and nonnegative".into()));
    }
    if budgets.windows(2).any(|w| w[1] < w[0]) {
        return Err(AnalysisError::Invalid("budgets must be sorted in increasing order".into()));
    }
    template.validate()?;
    let sat = template.saturated();
    let epsilon_sat = -template.abscissa(&sat, spectral::DEFAULT_TOL)?;
    let saturation_cost = template.spend(&sat).total();
    let epsilon_uncontrolled = -template.abscissa(&template.nominal(), spectral::DEFAULT_TOL)?;
    let rows = budgets
        .par_iter()
        .map(|&budget| {
            let prob = template.with_budget(budget);
            match allocation::solve_allocation(&prob, cfg) {
                Ok(r) => SweepRow {
                    budget,
                    epsilon_star: r.epsilon_star,
                    lambda_star: r.lambda_star,
                    total_spend: r.total_spend,
                    status: RowStatus::Optimal,
                },
                Err(e) => {
                    let status = match e {
                        AllocationError::Infeasible { .. } => RowStatus::Infeasible,
                        AllocationError::IterationLimit { .. } => RowStatus::IterationLimit,
                        other => RowStatus::Failed(other.to_string()),
                    };
                    SweepRow {
                        budget,
                        epsilon_star: f64::NAN,
                        lambda_star: f64::NAN,
                        total_spend: f64::NAN,
                        status,
                    }
                }
            }
        })
        .collect();
    Ok(Sweep { rows, epsilon_sat, saturation_cost, epsilon_uncontrolled })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub edge: usize,
    pub src: usize,
    pub dst: usize,
    /// Traffic-control spend on the edge, zero when no traffic is cut.
    pub investment: f64,
    pub eig_centrality: f64,
    pub pagerank_centrality: f64,
}

/// Per-edge investment against edge centrality, sorted by eigenvector
/// centrality (ties by edge index).
pub fn scatter_export(
    result: &AllocationResult,
    net: &ContactNetwork,
) -> Result<Vec<ScatterRecord>, AnalysisError> {
    if result.spend.traffic.len() != net.edge_count() {
        return Err(AnalysisError::Invalid(format!(
            "result has {} edges, network has {}",
            result.spend.traffic.len(),
            net.edge_count()
        )));
    }
    let cent = edge_centralities(net)?;
    let mut recs: Vec<ScatterRecord> = cent
        .iter()
        .enumerate()
        .map(|(k, c)| ScatterRecord {
            edge: k,
            src: c.src,
            dst: c.dst,
            investment: result.spend.traffic[k],
            eig_centrality: c.eig,
            pagerank_centrality: c.pagerank,
        })
        .collect();
    recs.sort_by(|a, b| a.eig_centrality.total_cmp(&b.eig_centrality).then(a.edge.cmp(&b.edge)));
    Ok(recs)
}

/// CSV with header `src,dst,investment,eig_centrality,pagerank_centrality`.
pub fn scatter_csv(records: &[ScatterRecord]) -> String {
    let mut out = String::from("src,dst,investment,eig_centrality,pagerank_centrality\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.src, r.dst, r.investment, r.eig_centrality, r.pagerank_centrality
        );
    }
    out
}

/// Pairs where the edge of strictly lower eigenvector centrality receives
/// strictly more investment (beyond `tol`).
pub fn centrality_inversions(records: &[ScatterRecord], tol: f64) -> usize {
    inversions_by(records, |r| r.eig_centrality, tol)
}

/// As [`centrality_inversions`], ranking edges by `key`.
pub fn inversions_by(records: &[ScatterRecord], key: impl Fn(&ScatterRecord) -> f64, tol: f64) -> usize {
    let mut count = 0;
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            let (lo, hi) = if key(a) < key(b) { (a, b) } else { (b, a) };
            if key(lo) < key(hi) && lo.investment > hi.investment + tol {
                count += 1;
            }
        }
    }
    count
}
