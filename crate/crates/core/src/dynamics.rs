//! Mean-field SIS dynamics, its linear upper bound, and two desk-scale
//! references for the underlying Markov process: the exact forward equations
//! over all `2^n` joint states and a Gillespie sampler.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::ContactNetwork;

pub const DEFAULT_DT: f64 = 1e-2;
pub const DEFAULT_T_END: f64 = 50.0;
/// Largest network the exact joint-state integrator accepts.
pub const MAX_EXACT_NODES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("norm underflow at t = {t}")]
    Underflow { t: f64 },
    #[error("exact model limited to n <= {MAX_EXACT_NODES}, got {0}")]
    TooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicState {
    pub p: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySeries {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub integrator: String,
    pub dt: f64,
    /// Largest amount any component was moved by clamping to `[0, 1]`.
    pub max_clamp: f64,
}

impl TrajectorySeries {
    pub fn state(&self, k: usize) -> EpidemicState {
        EpidemicState { p: self.states[k].clone(), t: self.times[k] }
    }

    pub fn last(&self) -> Option<EpidemicState> {
        (!self.times.is_empty()).then(|| self.state(self.times.len() - 1))
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|p| l2(p)).collect()
    }

    /// CSV with header `t,p_0,...,p_{n-1}`.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 0..n {
            let _ = write!(out, ",p_{i}");
        }
        out.push('\n');
        for (t, p) in self.times.iter().zip(&self.states) {
            let _ = write!(out, "{t}");
            for x in p {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }
}

fn l2(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// In-edge lists with rates, shared by every integrator.
struct Sis {
    beta: Vec<f64>,
    delta: Vec<f64>,
    /// `(src, weight)` for edges into each node.
    inbound: Vec<Vec<(usize, f64)>>,
}

impl Sis {
    fn new(net: &ContactNetwork, beta: &[f64], delta: &[f64]) -> Result<Self, DynamicsError> {
        let n = net.node_count();
        if beta.len() != n || delta.len() != n {
            return Err(DynamicsError::Invalid(format!(
                "need {n} rates, got {} infection and {} recovery",
                beta.len(),
                delta.len()
            )));
        }
        if beta.iter().chain(delta).any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(DynamicsError::Invalid("rates must be finite and nonnegative".into()));
        }
        let mut inbound = vec![Vec::new(); n];
        for e in net.edges() {
            inbound[e.dst].push((e.src, e.weight));
        }
        Ok(Self { beta: beta.to_vec(), delta: delta.to_vec(), inbound })
    }

    fn n(&self) -> usize {
        self.beta.len()
    }

    fn pressure(&self, i: usize, p: &[f64]) -> f64 {
        self.inbound[i].iter().map(|&(j, w)| w * p[j]).sum()
    }

    fn nonlinear(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..self.n() {
            out[i] = (1.0 - p[i]) * self.beta[i] * self.pressure(i, p) - self.delta[i] * p[i];
        }
    }

    fn linear(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..self.n() {
            out[i] = self.beta[i] * self.pressure(i, p) - self.delta[i] * p[i];
        }
    }
}

/// `dp_i/dt = (1 - p_i) beta_i sum_j w_ij p_j - delta_i p_i`.
pub fn meanfield_rhs(
    p: &[f64],
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
) -> Result<Vec<f64>, DynamicsError> {
    let sys = Sis::new(net, beta, delta)?;
    check_state(p, sys.n())?;
    let mut out = vec![0.0; p.len()];
    sys.nonlinear(p, &mut out);
    Ok(out)
}

fn check_state(p: &[f64], n: usize) -> Result<(), DynamicsError> {
    if p.len() != n {
        return Err(DynamicsError::Invalid(format!("state has {} entries, need {n}", p.len())));
    }
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(DynamicsError::Invalid("state entries must lie in [0, 1]".into()));
    }
    Ok(())
}

fn check_grid(t_end: f64, dt: f64) -> Result<usize, DynamicsError> {
    if !(dt > 0.0 && dt.is_finite() && t_end >= 0.0 && t_end.is_finite()) {
        return Err(DynamicsError::Invalid(format!("need dt > 0 and t_end >= 0, got {dt}, {t_end}")));
    }
    Ok((t_end / dt - 1e-9).ceil().max(0.0) as usize)
}

/// Fixed-step classical Runge-Kutta. `clamp` projects onto `[0, 1]` after
/// each step and records how far it moved.
fn rk4(
    p0: &[f64],
    t_end: f64,
    dt: f64,
    clamp: bool,
    f: &dyn Fn(&[f64], &mut [f64]),
) -> Result<TrajectorySeries, DynamicsError> {
    let steps = check_grid(t_end, dt)?;
    let n = p0.len();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut p = p0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut max_clamp: f64 = 0.0;
    times.push(0.0);
    states.push(p.clone());
    for s in 0..steps {
        let t = s as f64 * dt;
        let h = dt.min(t_end - t);
        f(&p, &mut k1);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * h * k1[i];
        }
        f(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * h * k2[i];
        }
        f(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = p[i] + h * k3[i];
        }
        f(&tmp, &mut k4);
        for i in 0..n {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite { t: t + h });
        }
        if clamp {
            for x in &mut p {
                let c = x.clamp(0.0, 1.0);
                max_clamp = max_clamp.max((c - *x).abs());
                *x = c;
            }
        }
        times.push(if s + 1 == steps { t_end } else { (s + 1) as f64 * dt });
        states.push(p.clone());
    }
    Ok(TrajectorySeries { times, states, integrator: "rk4".into(), dt, max_clamp })
}

/// Mean-field trajectory from `p0`.
pub fn integrate(
    p0: &[f64],
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<TrajectorySeries, DynamicsError> {
    let sys = Sis::new(net, beta, delta)?;
    check_state(p0, sys.n())?;
    rk4(p0, t_end, dt, true, &|p, out| sys.nonlinear(p, out))
}

/// Trajectory of `dp/dt = (B A - D) p`, which bounds the mean field from above.
pub fn linear_bound_trajectory(
    p0: &[f64],
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<TrajectorySeries, DynamicsError> {
    let sys = Sis::new(net, beta, delta)?;
    check_state(p0, sys.n())?;
    rk4(p0, t_end, dt, false, &|p, out| sys.linear(p, out))
}

/// Least-squares slope of `-log ||p(t)||_2` over `window`, by default the
/// second half of the trajectory.
pub fn decay_rate(traj: &TrajectorySeries, window: Option<(f64, f64)>) -> Result<f64, DynamicsError> {
    let t_last = *traj
        .times
        .last()
        .ok_or_else(|| DynamicsError::Invalid("empty trajectory".into()))?;
    let (a, b) = window.unwrap_or((t_last / 2.0, t_last));
    if !(a < b) || b > t_last + 1e-12 || a < traj.times[0] - 1e-12 {
        return Err(DynamicsError::Invalid(format!("window [{a}, {b}] outside trajectory")));
    }
    let mut pts = Vec::new();
    for (t, p) in traj.times.iter().zip(&traj.states) {
        if *t >= a - 1e-12 && *t <= b + 1e-12 {
            let nrm = l2(p);
            if !(nrm > f64::MIN_POSITIVE) {
                return Err(DynamicsError::Underflow { t: *t });
            }
            pts.push((*t, -nrm.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(DynamicsError::Invalid("window holds fewer than two samples".into()));
    }
    let k = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm) * (p.0 - tm)).sum();
    Ok(sxy / sxx)
}

/// Exact marginals and the worst drift of total probability mass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactMarginals {
    pub marginals: TrajectorySeries,
    pub max_mass_error: f64,
    /// Joint distribution at the final time, indexed by infected-set bitmask.
    pub final_joint: Vec<f64>,
}

/// Joint distribution of independent nodes with `Pr(X_i = 1) = p[i]`.
pub fn product_distribution(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    (0..1usize << n)
        .map(|s| (0..n).map(|i| if s >> i & 1 == 1 { p[i] } else { 1.0 - p[i] }).product())
        .collect()
}

/// Point mass on one infected set.
pub fn point_distribution(state: &[bool]) -> Vec<f64> {
    let mut out = vec![0.0; 1usize << state.len()];
    out[bitmask(state)] = 1.0;
    out
}

fn bitmask(state: &[bool]) -> usize {
    state.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| 1usize << i).sum()
}

/// Integrates the forward equations of the SIS Markov chain over all `2^n`
/// infected sets from the joint distribution `p0_joint`.
pub fn exact_marginals(
    p0_joint: &[f64],
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<ExactMarginals, DynamicsError> {
    let n = net.node_count();
    if n > MAX_EXACT_NODES {
        return Err(DynamicsError::TooLarge(n));
    }
    let sys = Sis::new(net, beta, delta)?;
    let size = 1usize << n;
    if p0_joint.len() != size {
        return Err(DynamicsError::Invalid(format!(
            "joint distribution needs {size} entries, got {}",
            p0_joint.len()
        )));
    }
    let mass: f64 = p0_joint.iter().sum();
    if p0_joint.iter().any(|&x| !(x >= 0.0)) || (mass - 1.0).abs() > 1e-12 {
        return Err(DynamicsError::Invalid("initial joint distribution must be a probability vector".into()));
    }
    // Outgoing transitions of every state: (target, rate).
    let mut transitions: Vec<Vec<(usize, f64)>> = Vec::with_capacity(size);
    for s in 0..size {
        let mut out = Vec::new();
        for i in 0..n {
            if s >> i & 1 == 1 {
                if sys.delta[i] > 0.0 {
                    out.push((s & !(1 << i), sys.delta[i]));
                }
            } else {
                let r: f64 = sys.inbound[i]
                    .iter()
                    .filter(|&&(j, _)| s >> j & 1 == 1)
                    .map(|&(_, w)| w)
                    .sum::<f64>()
                    * sys.beta[i];
                if r > 0.0 {
                    out.push((s | 1 << i, r));
                }
            }
        }
        transitions.push(out);
    }
    let forward = |p: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (s, trans) in transitions.iter().enumerate() {
            let ps = p[s];
            if ps == 0.0 {
                continue;
            }
            for &(target, rate) in trans {
                out[s] -= rate * ps;
                out[target] += rate * ps;
            }
        }
    };
    let joint = rk4(p0_joint, t_end, dt, false, &forward)?;
    let mut max_mass_error: f64 = 0.0;
    let states = joint
        .states
        .iter()
        .map(|pj| {
            max_mass_error = max_mass_error.max((pj.iter().sum::<f64>() - 1.0).abs());
            let mut m = vec![0.0; n];
            for (s, &ps) in pj.iter().enumerate() {
                for (i, mi) in m.iter_mut().enumerate() {
                    if s >> i & 1 == 1 {
                        *mi += ps;
                    }
                }
            }
            m
        })
        .collect();
    let final_joint = joint.states.last().cloned().unwrap_or_default();
    Ok(ExactMarginals {
        marginals: TrajectorySeries {
            times: joint.times,
            states,
            integrator: "rk4-forward-equations".into(),
            dt,
            max_clamp: 0.0,
        },
        max_mass_error,
        final_joint,
    })
}

/// Run-averaged occupancy of the stochastic process at fixed sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GillespieSummary {
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    /// Standard error of each mean.
    pub std_err: Vec<Vec<f64>>,
    /// Fraction of runs with no infected node at each sample time.
    pub extinct_fraction: Vec<f64>,
    pub n_runs: usize,
    pub seed: u64,
}

impl GillespieSummary {
    pub fn series(&self) -> TrajectorySeries {
        TrajectorySeries {
            times: self.times.clone(),
            states: self.mean.clone(),
            integrator: "gillespie".into(),
            dt: f64::NAN,
            max_clamp: 0.0,
        }
    }
}

/// Direct-method stochastic simulation. Run `r` draws from its own ChaCha8
/// stream of `seed`, so results do not depend on thread scheduling.
#[allow(clippy::too_many_arguments)]
pub fn gillespie(
    x0: &[bool],
    net: &ContactNetwork,
    beta: &[f64],
    delta: &[f64],
    sample_times: &[f64],
    seed: u64,
    n_runs: usize,
) -> Result<GillespieSummary, DynamicsError> {
    let sys = Sis::new(net, beta, delta)?;
    let n = sys.n();
    if x0.len() != n {
        return Err(DynamicsError::Invalid(format!("initial state has {} entries, need {n}", x0.len())));
    }
    if n_runs == 0 {
        return Err(DynamicsError::Invalid("need at least one run".into()));
    }
    if sample_times.windows(2).any(|w| !(w[0] < w[1])) || sample_times.iter().any(|t| !(*t >= 0.0)) {
        return Err(DynamicsError::Invalid("sample times must be nonnegative and increasing".into()));
    }
    let runs: Vec<Vec<Vec<bool>>> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            one_run(&sys, x0, sample_times, &mut rng)
        })
        .collect();

    let k = sample_times.len();
    let mut sum = vec![vec![0.0; n]; k];
    let mut extinct = vec![0usize; k];
    for run in &runs {
        for (s, snap) in run.iter().enumerate() {
            for (i, &x) in snap.iter().enumerate() {
                if x {
                    sum[s][i] += 1.0;
                }
            }
            if snap.iter().all(|x| !x) {
                extinct[s] += 1;
            }
        }
    }
    let nr = n_runs as f64;
    let mean: Vec<Vec<f64>> = sum.iter().map(|row| row.iter().map(|c| c / nr).collect()).collect();
    // Bernoulli samples: the sample variance is m (1 - m) n / (n - 1).
    let std_err = mean
        .iter()
        .map(|row| {
            row.iter()
                .map(|&m| if n_runs > 1 { (m * (1.0 - m) / (nr - 1.0)).sqrt() } else { f64::NAN })
                .collect()
        })
        .collect();
    Ok(GillespieSummary {
        times: sample_times.to_vec(),
        mean,
        std_err,
        extinct_fraction: extinct.iter().map(|&c| c as f64 / nr).collect(),
        n_runs,
        seed,
    })
}

fn one_run(sys: &Sis, x0: &[bool], sample_times: &[f64], rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let n = sys.n();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut rates = vec![0.0; n];
    let mut snaps = Vec::with_capacity(sample_times.len());
    let mut next = 0;
    loop {
        let mut total = 0.0;
        for i in 0..n {
            rates[i] = if x[i] {
                sys.delta[i]
            } else {
                sys.beta[i] * sys.inbound[i].iter().filter(|&&(j, _)| x[j]).map(|&(_, w)| w).sum::<f64>()
            };
            total += rates[i];
        }
        let t_next = if total > 0.0 {
            t - (1.0 - rng.random::<f64>()).ln() / total
        } else {
            f64::INFINITY
        };
        while next < sample_times.len() && sample_times[next] < t_next {
            snaps.push(x.clone());
            next += 1;
        }
        if next == sample_times.len() {
            return snaps;
        }
        t = t_next;
        let mut target = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, &r) in rates.iter().enumerate() {
            if target < r {
                chosen = i;
                break;
            }
            target -= r;
        }
        // Guard against landing on a zero-rate tail through rounding.
        while rates[chosen] == 0.0 {
            chosen -= 1;
        }
        x[chosen] = !x[chosen];
    }
}
