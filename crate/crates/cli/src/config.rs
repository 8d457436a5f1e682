use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;
use spreadgp::allocation::{BudgetProblem, CostModel, Modes, ResourceBounds};
use spreadgp::gpsolve::SolverConfig;
use spreadgp::netgraph::{load_edgelist, ContactNetwork};

use crate::error::CliError;

/// A scalar applied to every item, or one value per item.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Broadcast {
    Scalar(f64),
    Items(Vec<f64>),
}

impl Broadcast {
    pub fn expand(&self, len: usize, what: &str) -> Result<Vec<f64>, CliError> {
        match self {
            Broadcast::Scalar(x) => Ok(vec![*x; len]),
            Broadcast::Items(v) if v.len() == len => Ok(v.clone()),
            Broadcast::Items(v) => Err(CliError::Validation(format!(
                "{what}: expected {len} values, got {}",
                v.len()
            ))),
        }
    }
}

/// A fixed rate, or `{"lo": .., "hi": ..}` when it can be controlled.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Range { lo: Broadcast, hi: Broadcast },
    Fixed(Broadcast),
}

impl RateSpec {
    fn expand(&self, len: usize, what: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        match self {
            RateSpec::Fixed(b) => {
                let v = b.expand(len, what)?;
                Ok((v.clone(), v))
            }
            RateSpec::Range { lo, hi } => Ok((lo.expand(len, what)?, hi.expand(len, what)?)),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    /// Exponent `p` of the traffic cost `p (w^(-1/p) - w_bar^(-1/p))`.
    #[serde(default = "default_p")]
    pub traffic_exponent: f64,
    /// Coefficient of `1/beta - 1/beta_hi`.
    #[serde(default = "one")]
    pub prevention: f64,
    /// Coefficient of `delta - delta_lo`.
    #[serde(default = "one")]
    pub correction: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        Self { traffic_exponent: 2.0, prevention: 1.0, correction: 1.0 }
    }
}

fn default_p() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    #[serde(default)]
    pub traffic: bool,
    #[serde(default)]
    pub prevention: bool,
    #[serde(default)]
    pub correction: bool,
}

impl Default for ModeSpec {
    fn default() -> Self {
        Self { traffic: true, prevention: false, correction: false }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub tol: Option<f64>,
    pub max_newton: Option<usize>,
    pub barrier_mu: Option<f64>,
    pub feas_margin: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Initial infection probabilities; by default a small multiple of the
    /// dominant mode of the controlled system.
    pub p0: Option<Broadcast>,
    #[serde(default = "default_p0_scale")]
    pub p0_scale: f64,
    #[serde(default)]
    pub gillespie_runs: usize,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            t_end: default_t_end(),
            dt: default_dt(),
            p0: None,
            p0_scale: default_p0_scale(),
            gillespie_runs: 0,
        }
    }
}

fn default_t_end() -> f64 {
    spreadgp::dynamics::DEFAULT_T_END
}

fn default_dt() -> f64 {
    spreadgp::dynamics::DEFAULT_DT
}

fn default_p0_scale() -> f64 {
    0.01
}

#[derive(Debug, Clone, Deserialize)]
pub struct RunConfig {
    /// Edge list, relative to the config file.
    pub network: PathBuf,
    pub beta: RateSpec,
    pub delta: RateSpec,
    /// `w_lo` as a fraction of each nominal weight.
    pub w_floor_fraction: Option<f64>,
    /// Absolute `w_lo`, overriding `w_floor_fraction`.
    pub w_lo: Option<Broadcast>,
    #[serde(default)]
    pub costs: CostSpec,
    pub budget: Option<f64>,
    pub budgets: Option<Vec<f64>>,
    #[serde(default)]
    pub modes: ModeSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub seed: u64,
    /// Keys starting with `_` hold comments such as units.
    #[serde(flatten)]
    pub annotations: BTreeMap<String, Value>,
}

pub struct Loaded {
    pub config: RunConfig,
    pub network: ContactNetwork,
    pub network_path: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if let Some(k) = config.annotations.keys().find(|k| !k.starts_with('_')) {
        return Err(CliError::Validation(format!("unknown config key {k:?}")));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let network_path = base.join(&config.network);
    let network = load_edgelist(&network_path)?;
    Ok(Loaded { config, network, network_path })
}

impl Loaded {
    pub fn solver(&self, tol: Option<f64>) -> Result<SolverConfig, CliError> {
        let d = SolverConfig::default();
        let s = &self.config.solver;
        let cfg = SolverConfig {
            tol: tol.or(s.tol).unwrap_or(d.tol),
            max_newton: s.max_newton.unwrap_or(d.max_newton),
            barrier_mu: s.barrier_mu.unwrap_or(d.barrier_mu),
            feas_margin: s.feas_margin.unwrap_or(d.feas_margin),
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    /// The problem at `budget`. Disabled resource types are pinned at their
    /// uncontrolled value: `beta_hi`, `delta_lo`, the nominal weight.
    pub fn problem(&self, budget: f64) -> Result<BudgetProblem, CliError> {
        let c = &self.config;
        let net = &self.network;
        let n = net.node_count();
        let (mut beta_lo, beta_hi) = c.beta.expand(n, "beta")?;
        let (delta_lo, mut delta_hi) = c.delta.expand(n, "delta")?;
        let w_hi = net.weights();
        let mut w_lo = match (&c.w_lo, c.w_floor_fraction) {
            (Some(b), _) => b.expand(net.edge_count(), "w_lo")?,
            (None, Some(f)) => w_hi.iter().map(|w| w * f).collect(),
            (None, None) => w_hi.clone(),
        };
        let modes = Modes {
            traffic: c.modes.traffic,
            prevention: c.modes.prevention,
            correction: c.modes.correction,
        };
        if !modes.prevention {
            beta_lo = beta_hi.clone();
        }
        if !modes.correction {
            delta_hi = delta_lo.clone();
        }
        if !modes.traffic {
            w_lo = w_hi.clone();
        }
        let bounds = ResourceBounds { beta_lo, beta_hi, delta_lo, delta_hi, w_lo, w_hi }.clamp_rates();
        bounds.validate(net)?;
        let costs = CostModel::standard(
            net,
            &bounds,
            c.costs.traffic_exponent,
            c.costs.prevention,
            c.costs.correction,
        )?;
        Ok(BudgetProblem::new(net.clone(), bounds, costs, budget, modes)?)
    }

    pub fn budget(&self) -> Result<f64, CliError> {
        self.config
            .budget
            .ok_or_else(|| CliError::Validation("config has no \"budget\"".into()))
    }

    pub fn budgets(&self) -> Result<Vec<f64>, CliError> {
        let b = self
            .config
            .budgets
            .clone()
            .or_else(|| self.config.budget.map(|b| vec![b]))
            .ok_or_else(|| CliError::Validation("config has no \"budgets\"".into()))?;
        if b.is_empty() {
            return Err(CliError::Validation("\"budgets\" is empty".into()));
        }
        if b.windows(2).any(|w| w[1] < w[0]) {
            return Err(CliError::Validation("\"budgets\" must be sorted in increasing order".into()));
        }
        if b.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(CliError::Validation("budgets must be finite and nonnegative".into()));
        }
        Ok(b)
    }
}
