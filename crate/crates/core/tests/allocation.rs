use proptest::prelude::*;
use spreadgp::allocation::{
    brute_force_allocation, solve_allocation, AllocationResult, BudgetProblem, CostModel, Modes,
    ResourceBounds,
};
use spreadgp::gpsolve::SolverConfig;
use spreadgp::netgraph::{generate_cycle_plus_random, ContactNetwork, Edge};
use spreadgp::spectral::{perron, shifted_system, spectral_abscissa};

fn problem(net: ContactNetwork, modes: Modes, budget: f64) -> BudgetProblem {
    let n = net.node_count();
    let bounds = ResourceBounds::uniform(&net, (0.1, 0.4), (0.1, 0.3), 0.2);
    let bounds = ResourceBounds {
        beta_lo: if modes.prevention { bounds.beta_lo } else { vec![0.4; n] },
        delta_hi: if modes.correction { bounds.delta_hi } else { vec![0.1; n] },
        w_lo: if modes.traffic { bounds.w_lo } else { bounds.w_hi.clone() },
        ..bounds
    };
    let costs = CostModel::standard(&net, &bounds, 2.0, 0.05, 5.0).unwrap();
    BudgetProblem::new(net, bounds, costs, budget, modes).unwrap()
}

fn small_net() -> impl Strategy<Value = ContactNetwork> {
    (2usize..=5, 0usize..4, any::<u64>()).prop_map(|(n, extra, seed)| {
        let avail = n * (n - 1) - n.min(n * (n - 1));
        generate_cycle_plus_random(n, extra.min(avail), (0.5, 2.0), seed).unwrap()
    })
}

fn modes() -> impl Strategy<Value = Modes> {
    (any::<bool>(), any::<bool>(), any::<bool>())
        .prop_filter("at least one resource", |&(a, b, c)| a || b || c)
        .prop_map(|(traffic, prevention, correction)| Modes { traffic, prevention, correction })
}

fn check_feasible(prob: &BudgetProblem, r: &AllocationResult) -> Result<(), TestCaseError> {
    let b = &prob.bounds;
    let inside = |x: f64, lo: f64, hi: f64| x >= lo * (1.0 - 1e-7) && x <= hi * (1.0 + 1e-7);
    for i in 0..prob.network.node_count() {
        prop_assert!(inside(r.beta_star[i], b.beta_lo[i], b.beta_hi[i]));
        prop_assert!(inside(r.delta_star[i], b.delta_lo[i], b.delta_hi[i]));
    }
    for k in 0..prob.network.edge_count() {
        prop_assert!(inside(r.w_star[k], b.w_lo[k], b.w_hi[k]));
    }
    prop_assert!(r.total_spend <= prob.budget + 1e-6 * prob.budget.max(1.0));
    let at_rates = prob.spend(&r.allocation()).total();
    prop_assert!((r.spend_at_rates - at_rates).abs() <= 1e-9 * at_rates.max(1.0));
    if prob.modes.correction {
        prop_assert!(r.spend_at_rates >= r.total_spend - 1e-9);
    } else {
        prop_assert!((r.spend_at_rates - r.total_spend).abs() <= 1e-12 * r.total_spend.max(1.0));
    }
    let lam = prob.abscissa(&r.allocation(), 1e-12).unwrap();
    prop_assert!(lam <= -r.epsilon_star + 1e-6, "abscissa {lam} vs bound {}", -r.epsilon_star);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn results_are_feasible_and_tight(net in small_net(), m in modes(), frac in 0.05f64..1.5) {
        let full = problem(net, m, 1.0);
        let sat = full.spend(&full.saturated()).total();
        let prob = full.with_budget(frac * sat);
        let r = solve_allocation(&prob, &SolverConfig::default()).unwrap();
        check_feasible(&prob, &r)?;
        prop_assert!((r.eigen_max_lhs - 1.0).abs() <= 1e-6, "max lhs {}", r.eigen_max_lhs);
        prop_assert!((r.epsilon_star + r.lambda_star).abs() <= 1e-15);
        prop_assert!((r.epsilon_star - (r.shift - r.gp_lambda)).abs() <= 1e-12);
    }

    #[test]
    fn larger_budgets_never_hurt(net in small_net(), m in modes(), a in 0.0f64..1.2, b in 0.0f64..1.2) {
        let full = problem(net, m, 1.0);
        let sat = full.spend(&full.saturated()).total();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let cfg = SolverConfig::default();
        let r_lo = solve_allocation(&full.with_budget(lo * sat), &cfg).unwrap();
        let r_hi = solve_allocation(&full.with_budget(hi * sat), &cfg).unwrap();
        prop_assert!(r_lo.epsilon_star <= r_hi.epsilon_star + 1e-8, "{} > {}", r_lo.epsilon_star, r_hi.epsilon_star);
        // Bracketed by the uncontrolled and saturated abscissas.
        let nominal = full.abscissa(&full.nominal(), 1e-12).unwrap();
        let saturated = full.abscissa(&full.saturated(), 1e-12).unwrap();
        prop_assert!(r_lo.epsilon_star >= -nominal - 1e-6);
        prop_assert!(r_hi.epsilon_star <= -saturated + 1e-6);
    }

    #[test]
    fn shift_identity_at_optimum(net in small_net(), m in modes(), frac in 0.1f64..1.0) {
        let full = problem(net, m, 1.0);
        let sat = full.spend(&full.saturated()).total();
        let prob = full.with_budget(frac * sat);
        let r = solve_allocation(&prob, &SolverConfig::default()).unwrap();
        // B W + D_hat with D_hat = (Dbar + 1) - D.
        let g = prob.network.reweighted(&r.w_star).unwrap();
        let a = g.adjacency();
        let n = g.node_count();
        let mut m_hat = a.clone();
        for i in 0..n {
            for j in 0..n {
                m_hat[(i, j)] *= r.beta_star[i];
            }
            m_hat[(i, i)] += r.shift - r.delta_star[i];
        }
        let lam_hat = perron(&m_hat, 1e-13).unwrap().rho;
        let lam = spectral_abscissa(&g, &r.beta_star, &r.delta_star, 1e-13).unwrap();
        prop_assert!((lam_hat - (lam + r.shift)).abs() <= 1e-8);
        prop_assert!((r.shift - (prob.bounds.delta_max() + 1.0)).abs() <= 1e-15);
        let (_, s) = shifted_system(&a, &r.beta_star, &r.delta_star);
        prop_assert!(s <= r.shift + 1e-15);
    }
}

fn two_cycle(w: f64) -> ContactNetwork {
    ContactNetwork::new(2, vec![Edge { src: 0, dst: 1, weight: w }, Edge { src: 1, dst: 0, weight: w }])
        .unwrap()
}

/// Grid oracle agreement on decision dimension <= 3.
#[test]
fn agrees_with_grid_oracle() {
    let three = ContactNetwork::new(
        3,
        vec![
            Edge { src: 0, dst: 1, weight: 1.0 },
            Edge { src: 1, dst: 2, weight: 1.5 },
            Edge { src: 2, dst: 0, weight: 0.7 },
        ],
    )
    .unwrap();
    let cases = [
        (problem(two_cycle(1.0), Modes::TRAFFIC, 1.0), 200),
        (problem(two_cycle(1.0), Modes { traffic: false, prevention: true, correction: false }, 2.0), 200),
        (problem(two_cycle(1.4), Modes { traffic: false, prevention: true, correction: false }, 0.3), 200),
        (problem(three.clone(), Modes::TRAFFIC, 1.5), 200),
        (problem(three, Modes::TRAFFIC, 4.0), 200),
    ];
    let cfg = SolverConfig::default();
    for (prob, steps) in cases {
        let (grid, alloc) = brute_force_allocation(&prob, steps).unwrap();
        assert!(prob.spend(&alloc).total() <= prob.budget * (1.0 + 1e-9));
        let r = solve_allocation(&prob, &cfg).unwrap();
        assert!(r.lambda_star <= grid + 1e-6, "gp {} grid {grid}", r.lambda_star);
        assert!((r.lambda_star - grid).abs() <= 1e-2, "gp {} grid {grid}", r.lambda_star);
    }
}

/// The grid oracle's last-axis bisection against plain enumeration.
#[test]
fn grid_oracle_matches_full_enumeration() {
    let steps = 24;
    let cases = [
        problem(two_cycle(1.0), Modes { traffic: false, prevention: true, correction: true }, 0.6),
        problem(two_cycle(1.3), Modes { traffic: true, prevention: false, correction: true }, 0.9),
        problem(
            ContactNetwork::new(3, vec![Edge { src: 0, dst: 1, weight: 1.0 }, Edge { src: 1, dst: 2, weight: 1.5 }, Edge { src: 2, dst: 0, weight: 0.7 }])
                .unwrap(),
            Modes::TRAFFIC,
            1.5,
        ),
    ];
    for prob in cases {
        let (fast, _) = brute_force_allocation(&prob, steps).unwrap();
        let b = &prob.bounds;
        // Decision axes in the oracle's order: beta, delta, then w.
        let mut axes: Vec<(usize, usize, f64, f64)> = Vec::new();
        for i in 0..prob.network.node_count() {
            if prob.modes.prevention && b.beta_lo[i] < b.beta_hi[i] {
                axes.push((0, i, b.beta_lo[i], b.beta_hi[i]));
            }
        }
        for i in 0..prob.network.node_count() {
            if prob.modes.correction && b.delta_lo[i] < b.delta_hi[i] {
                axes.push((1, i, b.delta_lo[i], b.delta_hi[i]));
            }
        }
        for k in 0..prob.network.edge_count() {
            if prob.modes.traffic && b.w_lo[k] < b.w_hi[k] {
                axes.push((2, k, b.w_lo[k], b.w_hi[k]));
            }
        }
        let total = (steps + 1).pow(axes.len() as u32);
        let mut best = f64::INFINITY;
        for code in 0..total {
            let mut a = prob.nominal();
            let mut c = code;
            for &(kind, i, lo, hi) in &axes {
                let x = lo + (hi - lo) * (c % (steps + 1)) as f64 / steps as f64;
                c /= steps + 1;
                match kind {
                    0 => a.beta[i] = x,
                    1 => a.delta[i] = x,
                    _ => a.w[i] = x,
                }
            }
            if prob.spend(&a).total() <= prob.budget * (1.0 + 1e-12) + 1e-12 {
                best = best.min(prob.abscissa(&a, 1e-12).unwrap());
            }
        }
        assert!((fast - best).abs() <= 1e-10, "bisection {fast} vs enumeration {best}");
    }
}
