//! Direct simulation of the SIS-1 and SIR-1 epidemics.
//!
//! Each lattice site holds a village of `N` individuals. In every generation
//! each (infected at `x`, susceptible at `y`) pair with `|x - y| <= 1`
//! transmits independently with probability `p = 1/(3N)`; infected
//! individuals then recover, becoming susceptible again (SIS) or immune (SIR).
//!
//! The fast path aggregates per site: a susceptible at `y` escapes all
//! `M(y) = I(y-1) + I(y) + I(y+1)` infectives with probability `(1-p)^M`, so
//! the number of new infections is Binomial(S(y), 1 - (1-p)^M). The labelled
//! reference simulator ([`LabeledEpidemic`]) tosses every pair coin
//! explicitly so that paths can be compared with the envelope, the couplings
//! and the percolation graphs.

use crate::envelope::ParticleField;
use crate::error::{invalid, Error, Result};
use crate::rng::{edge_coin, particle_coin, Key, Purpose};
use rand_distr::{Binomial, Distribution};
use std::collections::BTreeMap;
use std::io::{self, Write};
use std::ops::ControlFlow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Sis,
    Sir,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sis" => Ok(Variant::Sis),
            "sir" => Ok(Variant::Sir),
            other => invalid(format!("unknown epidemic variant {other:?}")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Sis => "SIS",
            Variant::Sir => "SIR",
        })
    }
}

/// Village size and model variant. The infection probability is always the
/// critical value `1/(3N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpidemicParams {
    pub n: u32,
    pub variant: Variant,
}

impl EpidemicParams {
    pub fn new(n: u32, variant: Variant) -> Result<Self> {
        if n == 0 {
            return invalid("village size must be positive");
        }
        Ok(Self { n, variant })
    }

    /// Per-pair infection probability.
    pub fn p(&self) -> f64 {
        1.0 / (3.0 * self.n as f64)
    }

    /// Probability that a susceptible is infected by at least one of `m`
    /// infectives.
    pub fn infection_probability(&self, m: u64) -> f64 {
        -((m as f64) * (-self.p()).ln_1p()).exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SiteState {
    pub infected: u32,
    pub recovered: u32,
}

/// Per-site infected and recovered counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpidemicState {
    n: u32,
    sites: BTreeMap<i64, SiteState>,
}

impl EpidemicState {
    pub fn new(n: u32) -> Self {
        Self {
            n,
            sites: BTreeMap::new(),
        }
    }

    /// State with the given infected counts and nobody recovered.
    pub fn from_infected(n: u32, infected: &ParticleField) -> Result<Self> {
        let mut s = Self::new(n);
        for (x, c) in infected.iter() {
            s.set(x, c as u32, 0)?;
        }
        Ok(s)
    }

    pub fn village_size(&self) -> u32 {
        self.n
    }

    pub fn set(&mut self, x: i64, infected: u32, recovered: u32) -> Result<()> {
        if infected as u64 + recovered as u64 > self.n as u64 {
            return Err(Error::InvalidState(format!(
                "site {x}: I + R = {} exceeds N = {}",
                infected as u64 + recovered as u64,
                self.n
            )));
        }
        if infected == 0 && recovered == 0 {
            self.sites.remove(&x);
        } else {
            self.sites.insert(x, SiteState { infected, recovered });
        }
        Ok(())
    }

    pub fn site(&self, x: i64) -> SiteState {
        self.sites.get(&x).copied().unwrap_or_default()
    }

    pub fn infected(&self, x: i64) -> u32 {
        self.site(x).infected
    }

    pub fn recovered(&self, x: i64) -> u32 {
        self.site(x).recovered
    }

    pub fn susceptible(&self, x: i64) -> u32 {
        let s = self.site(x);
        self.n - s.infected - s.recovered
    }

    pub fn total_infected(&self) -> u64 {
        self.sites.values().map(|s| s.infected as u64).sum()
    }

    pub fn total_recovered(&self) -> u64 {
        self.sites.values().map(|s| s.recovered as u64).sum()
    }

    pub fn is_extinct(&self) -> bool {
        self.sites.values().all(|s| s.infected == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, SiteState)> + '_ {
        self.sites.iter().map(|(&x, &s)| (x, s))
    }

    /// Infected counts as a particle field.
    pub fn infected_field(&self) -> ParticleField {
        ParticleField::from_counts(self.iter().map(|(x, s)| (x, s.infected as u64)))
    }

    /// Check the state invariants, including `R ≡ 0` for SIS.
    pub fn validate(&self, params: &EpidemicParams) -> Result<()> {
        if self.n != params.n {
            return Err(Error::InvalidState(format!(
                "state village size {} differs from parameters {}",
                self.n, params.n
            )));
        }
        for (x, s) in self.iter() {
            if s.infected as u64 + s.recovered as u64 > self.n as u64 {
                return Err(Error::InvalidState(format!("site {x}: I + R exceeds N")));
            }
            if params.variant == Variant::Sis && s.recovered != 0 {
                return Err(Error::InvalidState(format!("site {x}: SIS state has recovered individuals")));
            }
        }
        Ok(())
    }
}

/// One generation of the epidemic (aggregated per-site sampling).
pub fn epidemic_step(
    state: &EpidemicState,
    params: &EpidemicParams,
    rep: Key,
    generation: u64,
) -> Result<EpidemicState> {
    state.validate(params)?;
    let mut next = EpidemicState::new(params.n);
    if params.variant == Variant::Sir {
        for (x, s) in state.iter() {
            next.set(x, 0, s.recovered + s.infected)?;
        }
    }
    let infected = state.infected_field();
    let key = rep.purpose(Purpose::Infection).push(generation);
    for y in infected.neighbourhood() {
        let m = infected.get(y - 1) + infected.get(y) + infected.get(y + 1);
        let s = state.susceptible(y);
        if m == 0 || s == 0 {
            continue;
        }
        let q = params.infection_probability(m);
        let mut rng = key.push_i64(y).stream();
        let new = Binomial::new(s as u64, q)
            .expect("valid binomial parameters")
            .sample(&mut rng) as u32;
        if new > 0 {
            let r = next.recovered(y);
            next.set(y, new, r)?;
        }
    }
    Ok(next)
}

/// Result of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicRun {
    pub trajectory: Vec<EpidemicState>,
    pub summary: EpidemicSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpidemicSummary {
    /// Last generation with an infected individual (0 if none ever).
    pub duration: usize,
    /// SIR: `Σ_x R_final(x)`; SIS: `Σ_t Σ_x I_t(x)`.
    pub size: u64,
    /// `max |x|` over sites ever infected.
    pub extent: u64,
    pub truncated: bool,
}

/// Iterate, handing each state to `observe`; returns the summary.
pub fn epidemic_run_with(
    init: EpidemicState,
    params: &EpidemicParams,
    rep: Key,
    max_gens: usize,
    mut observe: impl FnMut(usize, &EpidemicState) -> ControlFlow<()>,
) -> Result<EpidemicSummary> {
    init.validate(params)?;
    let mut state = init;
    let mut summary = EpidemicSummary::default();
    let mut infected_total = 0u64;
    let mut t = 0usize;
    loop {
        if state.total_infected() > 0 {
            summary.duration = t;
            infected_total += state.total_infected();
            for (x, s) in state.iter() {
                if s.infected > 0 {
                    summary.extent = summary.extent.max(x.unsigned_abs());
                }
            }
        }
        let stop = observe(t, &state).is_break();
        if stop || state.is_extinct() || t >= max_gens {
            summary.truncated = !state.is_extinct();
            summary.size = match params.variant {
                Variant::Sis => infected_total,
                Variant::Sir => state.total_recovered() + state.total_infected(),
            };
            return Ok(summary);
        }
        state = epidemic_step(&state, params, rep, t as u64)?;
        t += 1;
    }
}

/// Run to extinction or `max_gens`, recording every generation.
pub fn epidemic_run(
    init: EpidemicState,
    params: &EpidemicParams,
    rep: Key,
    max_gens: usize,
) -> Result<EpidemicRun> {
    if max_gens < 1 {
        return invalid("max_gens must be at least 1");
    }
    let mut trajectory = Vec::new();
    let summary = epidemic_run_with(init, params, rep, max_gens, |_, s| {
        trajectory.push(s.clone());
        ControlFlow::Continue(())
    })?;
    Ok(EpidemicRun { trajectory, summary })
}

/// CSV rows `replicate,t,x,I,R`.
pub fn write_csv(
    w: &mut impl Write,
    replicate: u64,
    trajectory: &[EpidemicState],
    header: bool,
) -> io::Result<()> {
    if header {
        writeln!(w, "replicate,t,x,I,R")?;
    }
    for (t, s) in trajectory.iter().enumerate() {
        for (x, site) in s.iter() {
            writeln!(w, "{replicate},{t},{x},{},{}", site.infected, site.recovered)?;
        }
    }
    Ok(())
}

/// Which explicit coins drive the labelled reference simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinScheme {
    /// Coins indexed by `(generation, source site, rank of the infective among
    /// the site's infected labels, offset, target label)`. Shared with the
    /// pair-coin envelope and the standard coupling.
    ByParticle,
    /// Coins indexed by the individuals at both ends: undirected and
    /// time-independent for SIR, directed and per-generation for SIS. Shared
    /// with the percolation graphs.
    ByPair,
}

/// Sorted label sets of one village.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledSite {
    pub infected: Vec<u32>,
    pub recovered: Vec<u32>,
}

/// Epidemic with individual identities, optionally confined to the sites
/// `lo..=hi`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledEpidemic {
    pub params: EpidemicParams,
    pub domain: Option<(i64, i64)>,
    pub sites: BTreeMap<i64, LabeledSite>,
}

impl LabeledEpidemic {
    /// Labels `0..I(x)` infected and `I(x)..I(x)+R(x)` recovered.
    pub fn from_state(state: &EpidemicState, params: EpidemicParams) -> Result<Self> {
        state.validate(&params)?;
        let sites = state
            .iter()
            .map(|(x, s)| {
                (
                    x,
                    LabeledSite {
                        infected: (0..s.infected).collect(),
                        recovered: (s.infected..s.infected + s.recovered).collect(),
                    },
                )
            })
            .collect();
        Ok(Self {
            params,
            domain: None,
            sites,
        })
    }

    pub fn from_sets(
        params: EpidemicParams,
        domain: Option<(i64, i64)>,
        infected: impl IntoIterator<Item = (i64, u32)>,
    ) -> Result<Self> {
        let mut sites: BTreeMap<i64, LabeledSite> = BTreeMap::new();
        for (x, j) in infected {
            if j >= params.n {
                return invalid(format!("label {j} outside village of size {}", params.n));
            }
            if let Some((lo, hi)) = domain {
                if x < lo || x > hi {
                    return invalid(format!("site {x} outside domain"));
                }
            }
            sites.entry(x).or_default().infected.push(j);
        }
        for s in sites.values_mut() {
            s.infected.sort_unstable();
            s.infected.dedup();
        }
        Ok(Self {
            params,
            domain,
            sites,
        })
    }

    fn in_domain(&self, y: i64) -> bool {
        self.domain.is_none_or(|(lo, hi)| y >= lo && y <= hi)
    }

    fn is_susceptible(&self, y: i64, j: u32) -> bool {
        match self.sites.get(&y) {
            None => true,
            Some(s) => s.infected.binary_search(&j).is_err() && s.recovered.binary_search(&j).is_err(),
        }
    }

    pub fn is_extinct(&self) -> bool {
        self.sites.values().all(|s| s.infected.is_empty())
    }

    /// Infected individuals as `(site, label)`, sorted.
    pub fn infected_set(&self) -> Vec<(i64, u32)> {
        self.sites
            .iter()
            .flat_map(|(&x, s)| s.infected.iter().map(move |&j| (x, j)))
            .collect()
    }

    pub fn to_state(&self) -> EpidemicState {
        let mut st = EpidemicState::new(self.params.n);
        for (&x, s) in &self.sites {
            st.set(x, s.infected.len() as u32, s.recovered.len() as u32)
                .expect("labelled state respects capacity");
        }
        st
    }

    /// One generation with explicit coins.
    pub fn step(&self, scheme: CoinScheme, rep: Key, generation: u64) -> Self {
        let p = self.params.p();
        let n = self.params.n;
        let mut newly: BTreeMap<i64, Vec<u32>> = BTreeMap::new();
        for (&x, site) in &self.sites {
            for (rank, &i) in site.infected.iter().enumerate() {
                for o in [-1i64, 0, 1] {
                    let y = x + o;
                    if !self.in_domain(y) {
                        continue;
                    }
                    for j in 0..n {
                        if !self.is_susceptible(y, j) {
                            continue;
                        }
                        let key = match scheme {
                            CoinScheme::ByParticle => {
                                particle_coin(rep, generation, x, rank as u64, o, j)
                            }
                            CoinScheme::ByPair => {
                                if (x, i) == (y, j) {
                                    continue;
                                }
                                let layer = match self.params.variant {
                                    Variant::Sir => None,
                                    Variant::Sis => Some(generation),
                                };
                                edge_coin(rep, layer, (x, i), (y, j))
                            }
                        };
                        if key.uniform() < p {
                            newly.entry(y).or_default().push(j);
                        }
                    }
                }
            }
        }
        let mut sites: BTreeMap<i64, LabeledSite> = BTreeMap::new();
        if self.params.variant == Variant::Sir {
            for (&x, s) in &self.sites {
                let mut rec: Vec<u32> = s.recovered.iter().chain(&s.infected).copied().collect();
                rec.sort_unstable();
                sites.insert(
                    x,
                    LabeledSite {
                        infected: Vec::new(),
                        recovered: rec,
                    },
                );
            }
        }
        for (y, mut js) in newly {
            js.sort_unstable();
            js.dedup();
            sites.entry(y).or_default().infected = js;
        }
        sites.retain(|_, s| !s.infected.is_empty() || !s.recovered.is_empty());
        Self {
            params: self.params,
            domain: self.domain,
            sites,
        }
    }

    /// Run to extinction or `max_gens`, returning every generation.
    pub fn run(&self, scheme: CoinScheme, rep: Key, max_gens: usize) -> Vec<LabeledEpidemic> {
        let mut out = vec![self.clone()];
        let mut t = 0;
        while !out[t].is_extinct() && t < max_gens {
            let next = out[t].step(scheme, rep, t as u64);
            out.push(next);
            t += 1;
        }
        out
    }
}
