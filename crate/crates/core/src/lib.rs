//! Spreading-process control on weighted contact networks via geometric programming.
//!
//! ```no_run
//! use spreadgp::{allocation::*, gpsolve::SolverConfig, netgraph::load_edgelist};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let net = load_edgelist("demo/demo_network.csv")?;
//! let bounds = ResourceBounds::uniform(&net, (0.033, 0.033), (0.1, 0.1), 0.2);
//! let costs = CostModel::standard(&net, &bounds, 2.0, 1.0, 1.0)?;
//! let prob = BudgetProblem::new(net, bounds, costs, 300.0, Modes::TRAFFIC)?;
//! let r = solve_allocation(&prob, &SolverConfig::default())?;
//! println!("epsilon* = {}", r.epsilon_star);
//! # Ok(())
//! # }
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::suspicious_arithmetic_impl)]

pub mod allocation;
pub mod analysis;
pub mod dynamics;
pub mod gpsolve;
pub mod netgraph;
pub mod posy;
pub mod spectral;
