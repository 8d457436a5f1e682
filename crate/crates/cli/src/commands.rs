use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spreadgp::allocation::{self, AllocationResult, BudgetProblem};
use spreadgp::analysis;
use spreadgp::dynamics::{self, DynamicsError, TrajectorySeries};
use spreadgp::gpsolve::SolverConfig;
use spreadgp::netgraph::{self, load_edgelist, ContactNetwork};
use spreadgp::spectral;

use crate::config::{self, Loaded};
use crate::error::CliError;
use crate::svg::{self, Series};

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub enum GenerateKind {
    Cycle { n: usize, extra: usize, w_lo: f64, w_hi: f64 },
    Hub { hubs: usize, leaves: usize, hub_weight: f64, leaf_weight: f64 },
}

pub fn generate(kind: &GenerateKind, seed: u64, out: &Path) -> Result<(), CliError> {
    let net = match *kind {
        GenerateKind::Cycle { n, extra, w_lo, w_hi } => {
            netgraph::generate_cycle_plus_random(n, extra, (w_lo, w_hi), seed)?
        }
        GenerateKind::Hub { hubs, leaves, hub_weight, leaf_weight } => {
            netgraph::generate_hub_spoke(hubs, leaves, hub_weight, leaf_weight, seed)?
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    net.save_edgelist(out)?;
    let rho = spectral::perron(&net.adjacency(), spectral::DEFAULT_TOL)?.rho;
    println!("wrote {}", out.display());
    println!("n = {}, |E| = {}, rho(A) = {rho}", net.node_count(), net.edge_count());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verification {
    pub recomputed_abscissa: f64,
    pub abscissa_bound: f64,
    pub abscissa_ok: bool,
    pub budget: f64,
    pub total_spend: f64,
    pub budget_residual: f64,
    pub budget_ok: bool,
    /// `None` when the trajectory reached numerical zero.
    pub fitted_decay_rate: Option<f64>,
    pub decay_bound: f64,
    pub decay_ok: bool,
    pub passed: bool,
}

struct Simulated {
    nonlinear: TrajectorySeries,
    linear: TrajectorySeries,
    decay: Option<f64>,
    domination_violation: f64,
}

fn initial_state(
    loaded: &Loaded,
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    p0_override: Option<f64>,
) -> Result<Vec<f64>, CliError> {
    let n = net.node_count();
    if let Some(x) = p0_override {
        return Ok(vec![x; n]);
    }
    let sim = &loaded.config.simulation;
    if let Some(p0) = &sim.p0 {
        return p0.expand(n, "simulation.p0");
    }
    // Dominant mode of the linearization, scaled to max entry p0_scale.
    let (pair, _) = spectral::metzler_perron(&net.adjacency(), beta, delta, spectral::DEFAULT_TOL)?;
    let m = pair.right.max();
    Ok(pair.right.iter().map(|v| sim.p0_scale * v / m).collect())
}

fn simulate_allocation(
    loaded: &Loaded,
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    p0: &[f64],
) -> Result<Simulated, CliError> {
    let sim = &loaded.config.simulation;
    let nonlinear = dynamics::integrate(p0, net, beta, delta, sim.t_end, sim.dt)?;
    let linear = dynamics::linear_bound_trajectory(p0, net, beta, delta, sim.t_end, sim.dt)?;
    let decay = match dynamics::decay_rate(&nonlinear, None) {
        Ok(r) => Some(r),
        Err(DynamicsError::Underflow { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let mut domination_violation: f64 = 0.0;
    for (a, b) in linear.states.iter().zip(&nonlinear.states) {
        for (x, y) in a.iter().zip(b) {
            domination_violation = domination_violation.max(y - x);
        }
    }
    Ok(Simulated { nonlinear, linear, decay, domination_violation })
}

fn verify_result(
    loaded: &Loaded,
    prob: &BudgetProblem,
    r: &AllocationResult,
) -> Result<(Verification, Simulated), CliError> {
    let abscissa_bound = -r.epsilon_star + 1e-6;
    let budget_residual = prob.budget - r.total_spend;
    let budget_ok = r.total_spend <= prob.budget + 1e-6 * prob.budget.max(1.0);
    let net = prob.network.reweighted(&r.w_star)?;
    let p0 = initial_state(loaded, &net, &r.beta_star, &r.delta_star, None)?;
    let sim = simulate_allocation(loaded, &net, &r.beta_star, &r.delta_star, &p0)?;
    let decay_bound = r.epsilon_star - 1e-3;
    let decay_ok = sim.decay.is_none_or(|d| d >= decay_bound);
    let abscissa_ok = r.verified_abscissa <= abscissa_bound;
    Ok((
        Verification {
            recomputed_abscissa: r.verified_abscissa,
            abscissa_bound,
            abscissa_ok,
            budget: prob.budget,
            total_spend: r.total_spend,
            budget_residual,
            budget_ok,
            fitted_decay_rate: sim.decay,
            decay_bound,
            decay_ok,
            passed: abscissa_ok && budget_ok && decay_ok,
        },
        sim,
    ))
}

fn allocation_csvs(prob: &BudgetProblem, r: &AllocationResult) -> (String, String) {
    let mut nodes = String::from("node,beta,delta,prevention_spend,correction_spend\n");
    for i in 0..prob.network.node_count() {
        let _ = writeln!(
            nodes,
            "{i},{},{},{},{}",
            r.beta_star[i], r.delta_star[i], r.spend.prevention[i], r.spend.correction[i]
        );
    }
    let mut edges = String::from("src,dst,w,w_nominal,spend\n");
    for (k, e) in prob.network.edges().iter().enumerate() {
        let _ = writeln!(edges, "{},{},{},{},{}", e.src, e.dst, r.w_star[k], e.weight, r.spend.traffic[k]);
    }
    (nodes, edges)
}

pub fn solve(config_path: &Path, out_dir: &Path, tol: Option<f64>) -> Result<(), CliError> {
    let loaded = config::load(config_path)?;
    let cfg = loaded.solver(tol)?;
    let prob = loaded.problem(loaded.budget()?)?;
    let r = allocation::solve_allocation(&prob, &cfg)?;
    let (v, _) = verify_result(&loaded, &prob, &r)?;
    write(out_dir, "result.json", &json(&r)?)?;
    let (nodes, edges) = allocation_csvs(&prob, &r);
    write(out_dir, "nodes.csv", &nodes)?;
    write(out_dir, "edges.csv", &edges)?;
    write(out_dir, "verification.json", &json(&v)?)?;
    println!("epsilon* = {}, lambda* = {}", r.epsilon_star, r.lambda_star);
    println!("total spend = {} of budget {}", r.total_spend, prob.budget);
    if r.spend_at_rates > r.total_spend + 1e-6 * prob.budget.max(1.0) {
        println!("note: charged at the recovered rates the spend is {}", r.spend_at_rates);
    }
    println!(
        "[{}] recomputed abscissa {} <= {}",
        pass(v.abscissa_ok),
        v.recomputed_abscissa,
        v.abscissa_bound
    );
    println!("[{}] budget residual {}", pass(v.budget_ok), v.budget_residual);
    match v.fitted_decay_rate {
        Some(d) => println!("[{}] fitted decay rate {d} >= {}", pass(v.decay_ok), v.decay_bound),
        None => println!("[{}] trajectory reached numerical zero", pass(v.decay_ok)),
    }
    if !v.passed {
        return Err(CliError::Verification("see verification.json".into()));
    }
    Ok(())
}

pub fn sweep(config_path: &Path, out_dir: &Path, tol: Option<f64>) -> Result<(), CliError> {
    let loaded = config::load(config_path)?;
    let cfg = loaded.solver(tol)?;
    let budgets = loaded.budgets()?;
    let prob = loaded.problem(budgets[0])?;
    let sweep = analysis::budget_sweep(&prob, &budgets, &cfg)?;
    write(out_dir, "sweep.csv", &sweep.to_csv())?;
    let pts: Vec<(f64, f64)> = sweep.rows.iter().map(|r| (r.budget, r.epsilon_star)).collect();
    let sat: Vec<(f64, f64)> = [budgets[0], *budgets.last().unwrap()]
        .iter()
        .map(|&b| (b, sweep.epsilon_sat))
        .collect();
    let chart = svg::line_chart(
        "decay rate vs budget",
        "budget",
        "epsilon*",
        &[Series { label: "epsilon*(C)", points: pts }, Series { label: "saturation", points: sat }],
    );
    write(out_dir, "sweep.svg", &chart)?;
    println!(
        "uncontrolled epsilon = {}, saturation epsilon = {} at cost {}",
        sweep.epsilon_uncontrolled, sweep.epsilon_sat, sweep.saturation_cost
    );
    for r in &sweep.rows {
        println!("C = {}: epsilon* = {} ({})", r.budget, r.epsilon_star, r.status.label());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    epsilon_star: Option<f64>,
    fitted_decay_rate: Option<f64>,
    decay_ok: Option<bool>,
    max_clamp: f64,
    max_domination_violation: f64,
    linear_dominates: bool,
    exact_max_mass_error: Option<f64>,
    gillespie_runs: usize,
}

pub fn simulate(
    config_path: &Path,
    allocation_path: Option<&Path>,
    out_dir: &Path,
    p0: Option<f64>,
    exact: bool,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let loaded = config::load(config_path)?;
    let base = &loaded.network;
    let (beta, delta, w, eps) = match allocation_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let r: AllocationResult = serde_json::from_str(&text)?;
            if r.beta_star.len() != base.node_count() || r.w_star.len() != base.edge_count() {
                return Err(CliError::Validation(format!(
                    "allocation has {} nodes and {} edges, network has {} and {}",
                    r.beta_star.len(),
                    r.w_star.len(),
                    base.node_count(),
                    base.edge_count()
                )));
            }
            (r.beta_star, r.delta_star, r.w_star, Some(r.epsilon_star))
        }
        None => {
            let prob = loaded.problem(0.0)?;
            let a = prob.nominal();
            (a.beta, a.delta, a.w, None)
        }
    };
    let n = base.node_count();
    if exact && n > dynamics::MAX_EXACT_NODES {
        return Err(CliError::Validation(format!(
            "--exact needs n <= {}, network has {n}",
            dynamics::MAX_EXACT_NODES
        )));
    }
    let net = base.reweighted(&w)?;
    let p0v = initial_state(&loaded, &net, &beta, &delta, p0)?;
    let sim = simulate_allocation(&loaded, &net, &beta, &delta, &p0v)?;
    write(out_dir, "trajectory.csv", &sim.nonlinear.to_csv())?;
    write(out_dir, "linear_bound.csv", &sim.linear.to_csv())?;

    let norm_pts = |t: &TrajectorySeries| -> Vec<(f64, f64)> {
        t.times.iter().zip(t.norms()).step_by(10).map(|(&a, b)| (a, b)).collect()
    };
    let mut series = vec![
        Series { label: "mean field", points: norm_pts(&sim.nonlinear) },
        Series { label: "linear bound", points: norm_pts(&sim.linear) },
    ];

    let sim_cfg = &loaded.config.simulation;
    let mut exact_err = None;
    if exact {
        let joint = dynamics::product_distribution(&p0v);
        let ex = dynamics::exact_marginals(&joint, &net, &beta, &delta, sim_cfg.t_end, sim_cfg.dt)?;
        write(out_dir, "exact_marginals.csv", &ex.marginals.to_csv())?;
        series.push(Series { label: "exact", points: norm_pts(&ex.marginals) });
        exact_err = Some(ex.max_mass_error);
    }
    let runs = sim_cfg.gillespie_runs;
    if runs > 0 {
        // Initial infected set: nodes with p0 >= 1/2, else the most likely node.
        let mut x0: Vec<bool> = p0v.iter().map(|&p| p >= 0.5).collect();
        if !x0.contains(&true) {
            let top = (0..n).fold(0, |b, i| if p0v[i] > p0v[b] { i } else { b });
            x0[top] = true;
        }
        let times: Vec<f64> = (1..=10).map(|k| sim_cfg.t_end * k as f64 / 10.0).collect();
        let g = dynamics::gillespie(&x0, &net, &beta, &delta, &times, seed.unwrap_or(loaded.config.seed), runs)?;
        write(out_dir, "gillespie.csv", &g.series().to_csv())?;
    }
    let chart = svg::line_chart("infection norm", "t", "||p(t)||", &series);
    write(out_dir, "trajectory.svg", &chart)?;

    let decay_ok = eps.map(|e| sim.decay.is_none_or(|d| d >= e - 1e-3));
    let summary = SimulationSummary {
        epsilon_star: eps,
        fitted_decay_rate: sim.decay,
        decay_ok,
        max_clamp: sim.nonlinear.max_clamp,
        max_domination_violation: sim.domination_violation,
        linear_dominates: sim.domination_violation <= 1e-9,
        exact_max_mass_error: exact_err,
        gillespie_runs: runs,
    };
    write(out_dir, "simulation.json", &json(&summary)?)?;
    match sim.decay {
        Some(d) => println!("fitted decay rate = {d}"),
        None => println!("trajectory is identically zero or underflowed"),
    }
    if let (Some(e), Some(ok)) = (eps, decay_ok) {
        println!("[{}] decay rate >= epsilon* - 1e-3 = {}", pass(ok), e - 1e-3);
    }
    println!("[{}] linear bound dominates (max violation {})", pass(summary.linear_dominates), sim.domination_violation);
    if let Some(m) = exact_err {
        println!("exact model: max mass error {m}");
    }
    Ok(())
}

pub fn analyze(
    network: &Path,
    result_path: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let net = load_edgelist(network)?;
    let text = std::fs::read_to_string(result_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", result_path.display())))?;
    let r: AllocationResult = serde_json::from_str(&text)?;
    if r.beta_star.len() != net.node_count() {
        return Err(CliError::Validation("result does not match network".into()));
    }
    let recs = analysis::scatter_export(&r, &net)?;
    write(out_dir, "scatter.csv", &analysis::scatter_csv(&recs))?;
    let v = analysis::eigenvector_centrality(&net)?;
    let pr = analysis::pagerank(&net, analysis::DEFAULT_DAMPING)?;
    let mut cent = String::from("node,eig_centrality,pagerank\n");
    for i in 0..net.node_count() {
        let _ = writeln!(cent, "{i},{},{}", v[i], pr[i]);
    }
    write(out_dir, "centrality.csv", &cent)?;
    let eig: Vec<(f64, f64)> = recs.iter().map(|r| (r.eig_centrality, r.investment)).collect();
    let prk: Vec<(f64, f64)> = recs.iter().map(|r| (r.pagerank_centrality, r.investment)).collect();
    write(
        out_dir,
        "scatter_eig.svg",
        &svg::scatter_chart("investment vs eigenvector centrality", "edge eigenvector centrality", "investment", &eig),
    )?;
    write(
        out_dir,
        "scatter_pagerank.svg",
        &svg::scatter_chart("investment vs PageRank centrality", "edge PageRank centrality", "investment", &prk),
    )?;
    println!("{} edges exported", recs.len());
    println!(
        "edge pairs where the less central edge receives more investment: {} (eigenvector), {} (PageRank)",
        analysis::centrality_inversions(&recs, 1e-9),
        analysis::inversions_by(&recs, |r| r.pagerank_centrality, 1e-9)
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

pub fn verify(config_path: &Path, out_dir: &Path, tol: Option<f64>) -> Result<(), CliError> {
    let loaded = config::load(config_path)?;
    let cfg: SolverConfig = loaded.solver(tol)?;
    let budget = loaded.budget()?;
    let prob = loaded.problem(budget)?;
    let net = &prob.network;
    let mut checks = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| {
        println!("[{}] {name}: {detail}", pass(passed));
        checks.push(Check { name: name.into(), passed, detail });
    };

    let adj = net.adjacency();
    let stol = spectral::DEFAULT_TOL;
    let pair = spectral::perron(&adj, stol)?;
    let oracle = spectral::perron_oracle(&adj, 40);
    check(
        "perron",
        pair.residual <= stol
            && pair.right.iter().chain(pair.left.iter()).all(|&x| x > 0.0)
            && (pair.rho - oracle).abs() <= 10.0 * stol * pair.rho.max(1.0),
        format!("rho = {}, oracle = {oracle}, residual = {:.3e}", pair.rho, pair.residual),
    );

    let nominal = prob.nominal();
    let uniform = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if uniform(&nominal.beta) && uniform(&nominal.delta) {
        let lam = spectral::spectral_abscissa(net, &nominal.beta, &nominal.delta, stol)?;
        let closed = nominal.beta[0] * pair.rho - nominal.delta[0];
        check("homogeneous closed form", (lam - closed).abs() <= 1e-8, format!("{lam} vs {closed}"));
    }

    let (m, s) = spectral::shifted_system(&adj, &nominal.beta, &nominal.delta);
    let lam_hat = spectral::perron(&m, stol)?.rho;
    let lam = spectral::spectral_abscissa(net, &nominal.beta, &nominal.delta, stol)?;
    check(
        "shift identity",
        (lam_hat - (lam + s)).abs() <= 1e-8 && (s - (nominal.delta.iter().copied().fold(0.0, f64::max) + 1.0)).abs() < 1e-15,
        format!("{lam_hat} vs {} + {s}", lam),
    );

    let r = allocation::solve_allocation(&prob, &cfg)?;
    let (v, sim) = verify_result(&loaded, &prob, &r)?;
    check("recomputed abscissa", v.abscissa_ok, format!("{} <= {}", v.recomputed_abscissa, v.abscissa_bound));
    check("budget", v.budget_ok, format!("spend {} of {}", v.total_spend, v.budget));
    check(
        "decay rate",
        v.decay_ok,
        format!("{:?} >= {}", v.fitted_decay_rate, v.decay_bound),
    );
    check(
        "eigen constraint tightness",
        (r.eigen_max_lhs - 1.0).abs() <= 1e-6,
        format!("max lhs = {}", r.eigen_max_lhs),
    );
    let gaps = r.t_saturation_gaps();
    if !gaps.is_empty() {
        let worst = gaps.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        check("t saturation", worst <= 1e-6, format!("max |t + delta_hat - shift| = {worst}"));
    }
    check(
        "linear bound dominates",
        sim.domination_violation <= 1e-9,
        format!("max violation {}", sim.domination_violation),
    );
    check("clamp magnitude", sim.nonlinear.max_clamp <= 1e-9, format!("{}", sim.nonlinear.max_clamp));
    let half = allocation::solve_allocation(&prob.with_budget(budget / 2.0), &cfg)?;
    check(
        "budget monotonicity",
        half.epsilon_star <= r.epsilon_star + 1e-8,
        format!("epsilon*(C/2) = {} <= epsilon*(C) = {}", half.epsilon_star, r.epsilon_star),
    );

    let failed = checks.iter().filter(|c| !c.passed).count();
    write(out_dir, "verify.json", &json(&checks)?)?;
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} check(s) failed")));
    }
    Ok(())
}
