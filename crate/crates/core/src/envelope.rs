//! The branching envelope: a critical branching random walk on ℤ.

use crate::error::{invalid, Result};
use crate::offspring::{OffspringLaw, OFFSETS};
use crate::rng::{particle_coin, Key, KeyedRng, Purpose};
use std::collections::BTreeMap;
use std::io::{self, Write};
use std::ops::ControlFlow;

/// Sparse nonnegative occupation numbers over lattice sites.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParticleField {
    counts: BTreeMap<i64, u64>,
    total: u64,
}

impl ParticleField {
    pub fn new() -> Self {
        Self::default()
    }

    /// `count` particles at a single site.
    pub fn point(site: i64, count: u64) -> Self {
        let mut f = Self::new();
        f.add(site, count);
        f
    }

    /// `per_site` particles at every site of `x0..=x1`.
    pub fn block(x0: i64, x1: i64, per_site: u64) -> Self {
        let mut f = Self::new();
        for x in x0..=x1 {
            f.add(x, per_site);
        }
        f
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (i64, u64)>) -> Self {
        let mut f = Self::new();
        for (x, c) in counts {
            f.add(x, c);
        }
        f
    }

    pub fn get(&self, site: i64) -> u64 {
        self.counts.get(&site).copied().unwrap_or(0)
    }

    pub fn add(&mut self, site: i64, count: u64) {
        if count > 0 {
            *self.counts.entry(site).or_insert(0) += count;
            self.total += count;
        }
    }

    pub fn set(&mut self, site: i64, count: u64) {
        let old = if count == 0 {
            self.counts.remove(&site).unwrap_or(0)
        } else {
            self.counts.insert(site, count).unwrap_or(0)
        };
        self.total = self.total - old + count;
    }

    /// Total mass.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Smallest interval containing every occupied site.
    pub fn support(&self) -> Option<(i64, i64)> {
        let lo = *self.counts.keys().next()?;
        let hi = *self.counts.keys().next_back()?;
        Some((lo, hi))
    }

    /// `max |x|` over occupied sites (0 when empty).
    pub fn extent(&self) -> u64 {
        self.support()
            .map(|(lo, hi)| lo.unsigned_abs().max(hi.unsigned_abs()))
            .unwrap_or(0)
    }

    pub fn max_count(&self) -> u64 {
        self.counts.values().copied().max().unwrap_or(0)
    }

    /// Occupied sites in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.counts.iter().map(|(&x, &c)| (x, c))
    }

    pub fn num_sites(&self) -> usize {
        self.counts.len()
    }

    /// `(Y(x-1) + Y(x) + Y(x+1)) / 3`, the conditional mean of the next
    /// generation's count at `x`.
    pub fn neighbour_mean(&self, x: i64) -> f64 {
        (self.get(x - 1) + self.get(x) + self.get(x + 1)) as f64 / 3.0
    }

    /// Sites `x` where [`neighbour_mean`](Self::neighbour_mean) is positive.
    pub fn neighbourhood(&self) -> Vec<i64> {
        let mut out: Vec<i64> = Vec::with_capacity(self.counts.len() + 2);
        for &x in self.counts.keys() {
            for y in x - 1..=x + 1 {
                if out.last().is_none_or(|&l| l < y) {
                    out.push(y);
                }
            }
        }
        out
    }
}

/// How particles draw their offspring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reproduction {
    /// Per-particle draws from the offspring law.
    Law(OffspringLaw),
    /// Village law realised through the individual transmission coins of
    /// [`particle_coin`]: particle `rank` at `x` has one offspring at
    /// `x + o` for every label `j` whose coin succeeds.
    PairCoins { n: u32 },
}

impl From<OffspringLaw> for Reproduction {
    fn from(law: OffspringLaw) -> Self {
        Reproduction::Law(law)
    }
}

/// Stream used by the `rank`-th particle at `site` in `generation`.
#[inline]
pub(crate) fn particle_stream(rep: Key, generation: u64, site: i64, rank: u64) -> KeyedRng {
    rep.purpose(Purpose::Offspring)
        .push(generation)
        .push_i64(site)
        .push(rank)
        .stream()
}

/// Labels `j ∈ [n]` whose transmission coin from (`site`, `rank`) at `offset`
/// succeeds in `generation`.
pub(crate) fn coin_labels(
    rep: Key,
    generation: u64,
    site: i64,
    rank: u64,
    offset: i64,
    n: u32,
) -> impl Iterator<Item = u32> {
    let p = 1.0 / (3.0 * n as f64);
    (0..n).filter(move |&j| particle_coin(rep, generation, site, rank, offset, j).uniform() < p)
}

/// Offspring counts of one particle under `repro`.
#[inline]
pub(crate) fn particle_offspring(
    repro: Reproduction,
    rep: Key,
    generation: u64,
    site: i64,
    rank: u64,
) -> [u32; 3] {
    match repro {
        Reproduction::Law(law) => law.sample(&mut particle_stream(rep, generation, site, rank)),
        Reproduction::PairCoins { n } => {
            let mut out = [0u32; 3];
            for (slot, &o) in out.iter_mut().zip(OFFSETS.iter()) {
                *slot = coin_labels(rep, generation, site, rank, o, n).count() as u32;
            }
            out
        }
    }
}

/// One generation of the branching random walk.
///
/// Every particle reproduces independently using the stream keyed by
/// `(rep, generation, site, rank)`, where `rank` numbers the particles at a
/// site from zero. Adding particles to a site therefore never changes the
/// offspring of the ones already there.
pub fn brw_step(
    field: &ParticleField,
    repro: impl Into<Reproduction>,
    rep: Key,
    generation: u64,
) -> ParticleField {
    let repro = repro.into();
    let Some((lo, hi)) = field.support() else {
        return ParticleField::new();
    };
    let base = lo - 1;
    let mut dense = vec![0u64; (hi - lo + 3) as usize];
    for (x, c) in field.iter() {
        let i = (x - base) as usize;
        for rank in 0..c {
            let kids = particle_offspring(repro, rep, generation, x, rank);
            dense[i - 1] += kids[0] as u64;
            dense[i] += kids[1] as u64;
            dense[i + 1] += kids[2] as u64;
        }
    }
    ParticleField::from_counts(
        dense
            .into_iter()
            .enumerate()
            .map(|(i, c)| (base + i as i64, c)),
    )
}

/// Generations `Y_0, Y_1, …` of one envelope run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeTrajectory {
    pub generations: Vec<ParticleField>,
    /// Set when the generation cap was reached before extinction.
    pub truncated: bool,
}

impl EnvelopeTrajectory {
    /// Per-generation total masses `Z_n`.
    pub fn masses(&self) -> Vec<u64> {
        self.generations.iter().map(|g| g.total()).collect()
    }
}

/// How a streamed run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    Extinct { generations: usize },
    Truncated { generations: usize },
    Stopped { generations: usize },
}

/// Iterate the walk, handing each generation to `observe` (including the
/// initial one). Stops at extinction, after `max_gens` steps, or when the
/// observer breaks.
pub fn brw_run_with(
    init: ParticleField,
    repro: impl Into<Reproduction>,
    rep: Key,
    max_gens: usize,
    mut observe: impl FnMut(usize, &ParticleField) -> ControlFlow<()>,
) -> RunEnd {
    let repro = repro.into();
    let mut field = init;
    let mut t = 0usize;
    loop {
        if observe(t, &field).is_break() {
            return RunEnd::Stopped { generations: t };
        }
        if field.is_empty() {
            return RunEnd::Extinct { generations: t };
        }
        if t >= max_gens {
            return RunEnd::Truncated { generations: t };
        }
        field = brw_step(&field, repro, rep, t as u64);
        t += 1;
    }
}

/// Run until extinction or `max_gens` steps, recording every generation.
pub fn brw_run(
    init: ParticleField,
    repro: impl Into<Reproduction>,
    rep: Key,
    max_gens: usize,
) -> Result<EnvelopeTrajectory> {
    if max_gens < 1 {
        return invalid("max_gens must be at least 1");
    }
    let mut generations = Vec::new();
    let end = brw_run_with(init, repro, rep, max_gens, |_, f| {
        generations.push(f.clone());
        ControlFlow::Continue(())
    });
    Ok(EnvelopeTrajectory {
        generations,
        truncated: matches!(end, RunEnd::Truncated { .. }),
    })
}

/// Summary statistics of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnvelopeStats {
    /// Last generation with positive mass.
    pub duration: usize,
    /// `Σ_n Z_n`.
    pub total_progeny: u64,
    /// `max |x|` over all occupied sites.
    pub extent: u64,
    pub max_site_count: u64,
    /// Leftmost and rightmost sites ever occupied.
    pub range: Option<(i64, i64)>,
    /// The run was truncated; every figure is a lower bound.
    pub lower_bound: bool,
}

/// Incremental version of [`envelope_stats`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StatsAccumulator {
    stats: EnvelopeStats,
}

impl StatsAccumulator {
    pub fn observe(&mut self, t: usize, field: &ParticleField) {
        let s = &mut self.stats;
        if let Some((lo, hi)) = field.support() {
            s.duration = t;
            s.total_progeny += field.total();
            s.extent = s.extent.max(field.extent());
            s.max_site_count = s.max_site_count.max(field.max_count());
            s.range = Some(match s.range {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
    }

    pub fn finish(mut self, truncated: bool) -> EnvelopeStats {
        self.stats.lower_bound = truncated;
        self.stats
    }
}

pub fn envelope_stats(traj: &EnvelopeTrajectory) -> EnvelopeStats {
    let mut acc = StatsAccumulator::default();
    for (t, g) in traj.generations.iter().enumerate() {
        acc.observe(t, g);
    }
    acc.finish(traj.truncated)
}

/// Run and summarise without keeping the trajectory.
pub fn brw_summary(
    init: ParticleField,
    repro: impl Into<Reproduction>,
    rep: Key,
    max_gens: usize,
) -> EnvelopeStats {
    let mut acc = StatsAccumulator::default();
    let end = brw_run_with(init, repro, rep, max_gens, |t, f| {
        acc.observe(t, f);
        ControlFlow::Continue(())
    });
    acc.finish(matches!(end, RunEnd::Truncated { .. }))
}

/// Default generation cap `50 · scale`, where `scale` is `N^α`.
pub fn default_cap(scale: f64) -> usize {
    (50.0 * scale).ceil().max(1.0) as usize
}

/// CSV rows `replicate,t,x,count`.
pub fn write_csv(
    w: &mut impl Write,
    replicate: u64,
    traj: &EnvelopeTrajectory,
    header: bool,
) -> io::Result<()> {
    if header {
        writeln!(w, "replicate,t,x,count")?;
    }
    for (t, g) in traj.generations.iter().enumerate() {
        for (x, c) in g.iter() {
            writeln!(w, "{replicate},{t},{x},{c}")?;
        }
    }
    Ok(())
}
