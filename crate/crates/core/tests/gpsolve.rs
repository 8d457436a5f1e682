use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spreadgp::gpsolve::{solve, GpProgram, SolveStatus, SolverConfig};
use spreadgp::posy::{Monomial, Posynomial, VarId};

const LO: f64 = 0.1;
const HI: f64 = 10.0;

/// Random GP on a box with `x = 1` strictly feasible, plus the raw pieces for
/// direct evaluation.
struct Instance {
    prog: GpProgram,
    objective: Posynomial,
    ineqs: Vec<Posynomial>,
    eq: Option<Monomial>,
}

fn random_posy(rng: &mut ChaCha8Rng, vars: &[VarId], max_terms: usize) -> Posynomial {
    let terms = rng.random_range(1..=max_terms);
    let ms = (0..terms)
        .map(|_| {
            let exps: Vec<(VarId, f64)> = vars.iter().map(|&v| (v, rng.random_range(-2.0..2.0))).collect();
            Monomial::new(rng.random_range(0.1..2.0), exps).unwrap()
        })
        .collect();
    Posynomial::new(ms).unwrap()
}

fn instance(seed: u64, with_eq: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(2..=4);
    let mut prog = GpProgram::new();
    let vars: Vec<VarId> = (0..k).map(|i| prog.add_var(format!("x{i}"))).collect();
    let objective = random_posy(&mut rng, &vars, 4);
    prog.set_objective(objective.clone());
    let mut ineqs = Vec::new();
    for &v in &vars {
        ineqs.push(Posynomial::from(Monomial::power(1.0 / HI, v, 1.0)));
        ineqs.push(Posynomial::from(Monomial::power(LO, v, -1.0)));
    }
    let ones = vec![1.0; k];
    for _ in 0..rng.random_range(0..=3) {
        let q = random_posy(&mut rng, &vars, 3);
        // Value at x = 1 set to a random level in (0.2, 0.9).
        let level = rng.random_range(0.2..0.9);
        ineqs.push(q.scale(level / q.eval(&ones).unwrap()));
    }
    for q in &ineqs {
        prog.add_ineq(q.clone());
    }
    let eq = with_eq.then(|| {
        let exps: Vec<(VarId, f64)> = vars.iter().map(|&v| (v, rng.random_range(-1.0..1.0))).collect();
        let h = Monomial::new(1.0, exps).unwrap();
        prog.add_eq(h.clone());
        h
    });
    Instance { prog, objective, ineqs, eq }
}

fn feasible(inst: &Instance, x: &[f64]) -> bool {
    inst.ineqs.iter().all(|q| q.eval(x).unwrap() <= 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn optimum_satisfies_kkt_and_constraints(seed: u64, with_eq: bool) {
        let inst = instance(seed, with_eq);
        let cfg = SolverConfig::default();
        let sol = solve(&inst.prog, &cfg).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        for q in &inst.ineqs {
            prop_assert!(q.eval(&sol.x).unwrap() <= 1.0 + 10.0 * cfg.tol);
        }
        for r in &sol.equality_residuals {
            prop_assert!(r.abs() <= 1e-9);
        }
        if let Some(h) = &inst.eq {
            prop_assert!((h.log_eval(&sol.y)).abs() <= 1e-9);
        }
        prop_assert!(sol.kkt_residual <= 1e-6, "kkt {}", sol.kkt_residual);
        prop_assert!(sol.duals.iter().all(|&d| d >= 0.0));
        for w in sol.outer_objectives.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", sol.outer_objectives);
        }
    }

    /// Sampled feasible points never beat the reported optimum.
    #[test]
    fn optimum_dominates_feasible_samples(seed: u64) {
        let inst = instance(seed, false);
        let sol = solve(&inst.prog, &SolverConfig::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let f_opt = inst.objective.eval(&sol.x).unwrap();
        let k = inst.prog.num_vars();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..2000 {
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(LO.ln()..HI.ln()).exp()).collect();
            if feasible(&inst, &x) {
                let f = inst.objective.eval(&x).unwrap();
                prop_assert!(f_opt <= f * (1.0 + 1e-6), "sample {f} beats {f_opt}");
            }
        }
        // x = 1 is feasible by construction, so at least that one is checked.
        prop_assert!(f_opt <= inst.objective.eval(&vec![1.0; k]).unwrap() * (1.0 + 1e-6));
    }

    #[test]
    fn objective_scaling_keeps_argmin(seed: u64, c in 1e-3f64..1e3) {
        let inst = instance(seed, false);
        let sol = solve(&inst.prog, &SolverConfig::default()).unwrap();
        let mut scaled = inst.prog.clone();
        scaled.set_objective(inst.objective.scale(c));
        let sol2 = solve(&scaled, &SolverConfig::default()).unwrap();
        prop_assert_eq!(sol2.status, SolveStatus::Optimal);
        let f1 = inst.objective.eval(&sol.x).unwrap();
        let f2 = inst.objective.eval(&sol2.x).unwrap();
        prop_assert!((f1 - f2).abs() <= 1e-6 * f1, "{f1} vs {f2}");
    }
}

#[test]
fn contradictory_random_bounds_are_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut prog = GpProgram::new();
        let x = prog.add_var("x");
        let y = prog.add_var("y");
        prog.set_objective(Monomial::var(x) * Monomial::var(y));
        let a = rng.random_range(0.5..2.0);
        let gap = rng.random_range(1.1..3.0);
        // x y <= a and x y >= gap a
        prog.add_ineq(Monomial::new(1.0 / a, [(x, 1.0), (y, 1.0)]).unwrap());
        prog.add_ineq(Monomial::new(gap * a, [(x, -1.0), (y, -1.0)]).unwrap());
        let sol = solve(&prog, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.infeasibility_certificate.unwrap() > 0.0);
    }
}
