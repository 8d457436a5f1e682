use proptest::prelude::*;
use spreadgp::allocation::{solve_allocation, BudgetProblem, CostModel, Modes, ResourceBounds};
use spreadgp::analysis::{
    budget_sweep, edge_centralities, eigenvector_centrality, pagerank, scatter_export, RowStatus,
};
use spreadgp::gpsolve::SolverConfig;
use spreadgp::netgraph::{generate_cycle_plus_random, generate_hub_spoke, ContactNetwork};

fn network() -> impl Strategy<Value = ContactNetwork> {
    (2usize..=12, 0.0f64..1.0, any::<u64>()).prop_map(|(n, frac, seed)| {
        let avail = n * (n - 1) - n.min(n * (n - 1));
        generate_cycle_plus_random(n, (avail as f64 * frac) as usize, (0.1, 5.0), seed).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn centralities_are_positive_and_normalized(g in network(), damping in 0.05f64..0.99) {
        for v in [eigenvector_centrality(&g).unwrap(), pagerank(&g, damping).unwrap()] {
            prop_assert!(v.iter().all(|&x| x > 0.0));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        for e in edge_centralities(&g).unwrap() {
            prop_assert!(e.eig > 0.0 && e.pagerank > 0.0);
        }
    }

    #[test]
    fn pagerank_ignores_uniform_scaling(g in network(), c in 1e-3f64..1e3) {
        let scaled = g.reweighted(&g.weights().iter().map(|w| w * c).collect::<Vec<_>>()).unwrap();
        let a = pagerank(&g, 0.85).unwrap();
        let b = pagerank(&scaled, 0.85).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }
}

fn traffic_problem(net: ContactNetwork, budget: f64) -> BudgetProblem {
    let bounds = ResourceBounds::uniform(&net, (0.1, 0.1), (0.4, 0.4), 0.2);
    let costs = CostModel::standard(&net, &bounds, 2.0, 1.0, 1.0).unwrap();
    BudgetProblem::new(net, bounds, costs, budget, Modes::TRAFFIC).unwrap()
}

#[test]
fn sweeps_are_monotone_and_capped() {
    for seed in 0..4 {
        let net = generate_hub_spoke(3, 6, 1.0, 0.5, seed).unwrap();
        let prob = traffic_problem(net, 0.0);
        let sat = prob.spend(&prob.saturated()).total();
        let budgets: Vec<f64> = (0..=8).map(|k| sat * k as f64 / 6.0).collect();
        let s = budget_sweep(&prob, &budgets, &SolverConfig::default()).unwrap();
        assert_eq!(s.rows.len(), budgets.len());
        assert!((s.saturation_cost - sat).abs() <= 1e-9 * sat);
        for (row, b) in s.rows.iter().zip(&budgets) {
            assert_eq!(row.budget, *b);
            assert_eq!(row.status, RowStatus::Optimal);
            assert!(row.epsilon_star <= s.epsilon_sat + 1e-6);
        }
        for w in s.rows.windows(2) {
            assert!(w[0].epsilon_star <= w[1].epsilon_star + 1e-8);
        }
        // Zero budget: the GP optimum is the uncontrolled abscissa up to its log-space gap.
        let d = (s.rows[0].epsilon_star - s.epsilon_uncontrolled).abs();
        assert!(d <= 1e-7, "{d}");
        // Past the saturation cost the curve is flat at the saturated value.
        for row in s.rows.iter().filter(|r| r.budget >= sat) {
            assert!((row.epsilon_star - s.epsilon_sat).abs() <= 1e-6);
        }
    }
}

#[test]
fn scatter_row_per_edge() {
    let net = generate_hub_spoke(3, 6, 1.0, 0.5, 2).unwrap();
    let prob = traffic_problem(net.clone(), 2.0);
    let r = solve_allocation(&prob, &SolverConfig::default()).unwrap();
    let recs = scatter_export(&r, &net).unwrap();
    assert_eq!(recs.len(), net.edge_count());
    let total: f64 = recs.iter().map(|r| r.investment).sum();
    assert!((total - r.total_spend).abs() <= 1e-9 * r.total_spend.max(1.0));
    assert!(recs.windows(2).all(|w| w[0].eig_centrality <= w[1].eig_centrality));
}
