//! Mean-field epidemics (Reed-Frost SIR, Binomial-escape SIS) and the
//! diffusions describing their critical scaling limits.

use crate::error::{invalid, Result};
use crate::rng::{edge_coin, Key, KeyedRng, Purpose};
use rand_distr::{Binomial, Distribution, StandardNormal};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeanFieldState {
    pub n: u64,
    pub infected: u64,
    pub susceptible: u64,
    pub removed: u64,
}

impl MeanFieldState {
    pub fn new(n: u64, infected: u64) -> Result<Self> {
        if infected > n {
            return invalid(format!("J0 = {infected} exceeds N = {n}"));
        }
        Ok(Self {
            n,
            infected,
            susceptible: n - infected,
            removed: 0,
        })
    }
}

/// Infected counts `J_0, J_1, …` up to and including the first zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeanFieldRun {
    pub infected: Vec<u64>,
    /// Number of individuals ever infected, `Σ_n J_n`.
    pub size: u64,
    /// First `n` with `J_n = 0` (the last recorded index when truncated).
    pub duration: usize,
    pub truncated: bool,
}

fn escape_binomial(trials: u64, j: u64, n: u64, rng: &mut KeyedRng) -> u64 {
    if trials == 0 || j == 0 {
        return 0;
    }
    let q = -((j as f64) * (-1.0 / n as f64).ln_1p()).exp_m1();
    Binomial::new(trials, q.min(1.0))
        .expect("valid binomial parameters")
        .sample(rng)
}

fn step_stream(rep: Key, generation: usize) -> KeyedRng {
    rep.purpose(Purpose::MeanField).push(generation as u64).stream()
}

/// Reed-Frost epidemic with `p = 1/N`:
/// `J_{n+1} ~ Binomial(S_n, 1 - (1 - 1/N)^{J_n})`, `S_{n+1} = S_n - J_{n+1}`.
pub fn reedfrost_run(n: u64, j0: u64, rep: Key) -> Result<MeanFieldRun> {
    if n == 0 {
        return invalid("population size must be positive");
    }
    let mut state = MeanFieldState::new(n, j0)?;
    let mut infected = vec![j0];
    while state.infected > 0 {
        let new = escape_binomial(state.susceptible, state.infected, n, &mut step_stream(rep, infected.len()));
        state.removed += state.infected;
        state.susceptible -= new;
        state.infected = new;
        infected.push(new);
    }
    debug_assert_eq!(state.removed + state.susceptible, n);
    Ok(MeanFieldRun {
        size: state.removed,
        duration: infected.len() - 1,
        infected,
        truncated: false,
    })
}

/// Mean-field SIS: `J_{n+1} ~ Binomial(N - J_n, 1 - (1 - 1/N)^{J_n})`.
pub fn sis_meanfield_run(n: u64, j0: u64, rep: Key, max_gens: usize) -> Result<MeanFieldRun> {
    if n == 0 {
        return invalid("population size must be positive");
    }
    MeanFieldState::new(n, j0)?;
    let mut infected = vec![j0];
    let mut j = j0;
    while j > 0 && infected.len() <= max_gens {
        j = escape_binomial(n - j, j, n, &mut step_stream(rep, infected.len()));
        infected.push(j);
    }
    Ok(MeanFieldRun {
        size: infected.iter().sum(),
        duration: infected.len() - 1,
        truncated: j > 0,
        infected,
    })
}

/// Reed-Frost size computed from the Erdős–Rényi graph on `[N]` with edge
/// probability `1/N`: the number of vertices in components meeting
/// `0..j0`. Edges are the undirected coins of [`edge_coin`] at site 0.
pub fn reedfrost_graph_size(n: u32, j0: u32, rep: Key) -> u64 {
    let p = 1.0 / n as f64;
    let mut seen = vec![false; n as usize];
    let mut queue: VecDeque<u32> = (0..j0.min(n)).collect();
    for &i in &queue {
        seen[i as usize] = true;
    }
    let mut count = queue.len() as u64;
    while let Some(a) = queue.pop_front() {
        for b in 0..n {
            if !seen[b as usize] && b != a && edge_coin(rep, None, (0, a), (0, b)).uniform() < p {
                seen[b as usize] = true;
                count += 1;
                queue.push_back(b);
            }
        }
    }
    count
}

/// Reed-Frost generations driven by the same pair coins as
/// [`reedfrost_graph_size`]: susceptible `b` is infected at `n+1` if some
/// `a` infected at `n` has a successful coin with it.
pub fn reedfrost_pairwise(n: u32, j0: u32, rep: Key) -> MeanFieldRun {
    let p = 1.0 / n as f64;
    let mut susceptible = vec![true; n as usize];
    let mut current: Vec<u32> = (0..j0.min(n)).collect();
    for &i in &current {
        susceptible[i as usize] = false;
    }
    let mut infected = vec![current.len() as u64];
    while !current.is_empty() {
        let mut next = Vec::new();
        for b in 0..n {
            if susceptible[b as usize]
                && current.iter().any(|&a| edge_coin(rep, None, (0, a), (0, b)).uniform() < p)
            {
                next.push(b);
            }
        }
        for &b in &next {
            susceptible[b as usize] = false;
        }
        infected.push(next.len() as u64);
        current = next;
    }
    MeanFieldRun {
        size: infected.iter().sum(),
        duration: infected.len() - 1,
        infected,
        truncated: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FellerDrift {
    None,
    /// `-c Y²`.
    MinusSquare(f64),
}

/// Euler–Maruyama path of `dY = drift(Y) dt + √Y dW` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPath {
    pub dt: f64,
    pub values: Vec<f64>,
    pub absorbed: bool,
}

impl DiffusionPath {
    /// Value at time `t` (the grid point at or before `t`).
    pub fn at(&self, t: f64) -> f64 {
        let i = ((t / self.dt) + 1e-9).floor() as usize;
        self.values.get(i).copied().unwrap_or(if self.absorbed { 0.0 } else { f64::NAN })
    }
}

/// Full-truncation Euler–Maruyama; the path is cut at absorption.
pub fn feller_em(b: f64, drift: FellerDrift, dt: f64, horizon: f64, rep: Key) -> Result<DiffusionPath> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    if !(b >= 0.0) {
        return invalid(format!("start must be nonnegative, got {b}"));
    }
    let steps = (horizon / dt).round() as usize;
    let mut rng = rep.purpose(Purpose::Diffusion).stream();
    let mut y = b;
    let mut values = vec![y];
    let sdt = dt.sqrt();
    for _ in 0..steps {
        if y == 0.0 {
            return Ok(DiffusionPath { dt, values, absorbed: true });
        }
        let d = match drift {
            FellerDrift::None => 0.0,
            FellerDrift::MinusSquare(c) => -c * y * y,
        };
        let xi: f64 = StandardNormal.sample(&mut rng);
        y = (y + d * dt + y.sqrt() * sdt * xi).max(0.0);
        values.push(y);
    }
    Ok(DiffusionPath {
        dt,
        absorbed: y == 0.0,
        values,
    })
}

/// Extinction time of a [`feller_em`] path; `None` if it survives to
/// `horizon`.
pub fn feller_extinction_time(b: f64, drift: FellerDrift, dt: f64, horizon: f64, rep: Key) -> Result<Option<f64>> {
    let path = feller_em(b, drift, dt, horizon, rep)?;
    Ok(path.absorbed.then(|| (path.values.len() - 1) as f64 * dt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WienerDrift {
    None,
    /// `X_t = W_t + t²/2`.
    LinearT,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Passage {
    pub time: f64,
    pub censored: bool,
}

/// First time the discretely sampled `X` reaches `b`; censored at `horizon`.
pub fn wiener_passage(b: f64, drift: WienerDrift, dt: f64, horizon: f64, rep: Key) -> Result<Passage> {
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    if b <= 0.0 {
        return Ok(Passage { time: 0.0, censored: false });
    }
    let mut rng = rep.purpose(Purpose::Diffusion).stream();
    let sdt = dt.sqrt();
    let (mut x, mut k) = (0.0f64, 0u64);
    loop {
        let t = k as f64 * dt;
        if t >= horizon {
            return Ok(Passage { time: horizon, censored: true });
        }
        let xi: f64 = StandardNormal.sample(&mut rng);
        x += sdt * xi;
        if drift == WienerDrift::LinearT {
            x += t * dt + dt * dt / 2.0;
        }
        k += 1;
        if x >= b {
            return Ok(Passage { time: k as f64 * dt, censored: false });
        }
    }
}

/// `P(τ_b ≤ t) = 2(1 - Φ(b/√t))` for standard Brownian motion.
pub fn driftless_passage_cdf(b: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return if b <= 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * (1.0 - crate::stats::normal_cdf(b / t.sqrt()))
}
