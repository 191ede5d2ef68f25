//! Red/blue couplings of the epidemic inside its branching envelope.
//!
//! Every particle of the envelope is red (an actual infection) or blue (a
//! suppressed one). Particles at a site are ranked reds first, in label
//! order, then blues, and reproduce through the same keyed streams as
//! [`brw_step`](crate::envelope::brw_step), so red + blue is pathwise the
//! envelope started from the same configuration.
//!
//! In the standard coupling the red-parent offspring arriving at a site pick
//! labels in `[N]`; a label that is unavailable turns all of its choosers
//! blue, otherwise one chooser stays red and the rest turn blue. A label is
//! unavailable if it is currently red at the site (SIS) or has ever been red
//! there (SIR). In the modified coupling at most one red-parent offspring
//! per site turns blue, with probability `κ_N(y)`.

use crate::envelope::{coin_labels, particle_offspring, ParticleField, Reproduction};
use crate::epidemic::Variant;
use crate::error::{invalid, Error, Result};
use crate::offspring::{OffspringLaw, OFFSETS};
use crate::rng::{Key, KeyedRng, Purpose};
use std::collections::BTreeMap;
use std::io::{self, Write};
use std::ops::ControlFlow;

/// Probability that one of `y` red-parent offspring turns blue in the
/// modified coupling, before clamping. `recovered` is only read for SIR.
pub fn kappa(variant: Variant, y: u64, recovered: u64, n: u32) -> f64 {
    let (y, r, n) = (y as f64, recovered as f64, n as f64);
    match variant {
        Variant::Sis => y * (y - 1.0).max(0.0) / (2.0 * n),
        Variant::Sir => y * r / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CouplingConfig {
    pub n: u32,
    pub variant: Variant,
    pub repro: Reproduction,
}

impl CouplingConfig {
    pub fn new(n: u32, variant: Variant, repro: impl Into<Reproduction>) -> Result<Self> {
        if n == 0 {
            return invalid("village size must be positive");
        }
        let repro = repro.into();
        if let Reproduction::PairCoins { n: m } = repro {
            if m != n {
                return invalid(format!("pair-coin village size {m} differs from N = {n}"));
            }
        }
        Ok(Self { n, variant, repro })
    }

    /// Poisson offspring, the default reproduction law.
    pub fn poisson(n: u32, variant: Variant) -> Result<Self> {
        Self::new(n, variant, OffspringLaw::PoissonLimit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    Standard,
    Modified,
}

/// Red and blue particles, with the label bookkeeping of the standard
/// coupling and telemetry of the step that produced the field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColoredField {
    pub red: ParticleField,
    pub blue: ParticleField,
    /// Current red labels per site (standard coupling).
    labels: BTreeMap<i64, Vec<u32>>,
    /// Labels ever red per site (standard coupling, SIR).
    used: BTreeMap<i64, Vec<u32>>,
    /// `Σ_{s ≤ t} red_s(x)`.
    ever_red: ParticleField,
    /// Blue offspring of red parents created by the last step.
    pub attrition: u64,
    /// Clamp events (`κ > 1`) in the last step.
    pub clamps: u64,
}

impl ColoredField {
    /// All-red field; the reds at `x` carry labels `0..red(x)`.
    pub fn initial(red: &ParticleField, n: u32) -> Result<Self> {
        Self::with_blue(red, &ParticleField::new(), n)
    }

    pub fn with_blue(red: &ParticleField, blue: &ParticleField, n: u32) -> Result<Self> {
        let mut labels = BTreeMap::new();
        for (x, c) in red.iter() {
            if c > n as u64 {
                return Err(Error::InvalidState(format!(
                    "site {x}: {c} red particles exceed village size {n}"
                )));
            }
            labels.insert(x, (0..c as u32).collect::<Vec<_>>());
        }
        Ok(Self {
            red: red.clone(),
            blue: blue.clone(),
            used: labels.clone(),
            labels,
            ever_red: red.clone(),
            attrition: 0,
            clamps: 0,
        })
    }

    pub fn total(&self) -> u64 {
        self.red.total() + self.blue.total()
    }

    pub fn is_empty(&self) -> bool {
        self.red.is_empty() && self.blue.is_empty()
    }

    /// Red plus blue.
    pub fn envelope(&self) -> ParticleField {
        let mut f = self.red.clone();
        for (x, c) in self.blue.iter() {
            f.add(x, c);
        }
        f
    }

    /// Number of red particles ever at each site, current generation included.
    pub fn ever_red(&self) -> &ParticleField {
        &self.ever_red
    }

    pub fn red_labels(&self, x: i64) -> &[u32] {
        self.labels.get(&x).map_or(&[], Vec::as_slice)
    }

    fn support(&self) -> Option<(i64, i64)> {
        match (self.red.support(), self.blue.support()) {
            (None, None) => None,
            (Some(a), None) | (None, Some(a)) => Some(a),
            (Some(a), Some(b)) => Some((a.0.min(b.0), a.1.max(b.1))),
        }
    }
}

/// Per-target-site lists: red-parent offspring (with labels when tracked)
/// and blue total.
struct Arrivals {
    base: i64,
    red_count: Vec<u64>,
    red_labels: Vec<Vec<u32>>,
    blue: Vec<u64>,
}

impl Arrivals {
    fn new(lo: i64, hi: i64, with_labels: bool) -> Self {
        let len = (hi - lo + 3) as usize;
        Self {
            base: lo - 1,
            red_count: vec![0; len],
            red_labels: if with_labels { vec![Vec::new(); len] } else { Vec::new() },
            blue: vec![0; len],
        }
    }

    fn idx(&self, y: i64) -> usize {
        (y - self.base) as usize
    }

    fn sites(&self) -> impl Iterator<Item = (usize, i64)> + '_ {
        (0..self.blue.len()).map(|i| (i, self.base + i as i64))
    }
}

/// Reproduce every particle; red-parent offspring are collected separately.
fn reproduce(
    field: &ColoredField,
    cfg: &CouplingConfig,
    rep: Key,
    generation: u64,
    with_labels: bool,
) -> Option<Arrivals> {
    let (lo, hi) = field.support()?;
    let mut arr = Arrivals::new(lo, hi, with_labels);
    for x in lo..=hi {
        let red = field.red.get(x);
        let total = red + field.blue.get(x);
        let i = arr.idx(x);
        for rank in 0..total {
            let is_red = rank < red;
            if is_red && with_labels {
                for (k, &o) in OFFSETS.iter().enumerate() {
                    let labels = offspring_labels(cfg, rep, generation, x, rank, o);
                    let t = i + k - 1;
                    arr.red_count[t] += labels.len() as u64;
                    arr.red_labels[t].extend(labels);
                }
                continue;
            }
            let kids = particle_offspring(cfg.repro, rep, generation, x, rank);
            let dst = if is_red { &mut arr.red_count } else { &mut arr.blue };
            dst[i - 1] += kids[0] as u64;
            dst[i] += kids[1] as u64;
            dst[i + 1] += kids[2] as u64;
        }
    }
    Some(arr)
}

fn label_stream(rep: Key, generation: u64, site: i64, rank: u64, offset: i64) -> KeyedRng {
    rep.purpose(Purpose::Label)
        .push(generation)
        .push_i64(site)
        .push(rank)
        .push_i64(offset)
        .stream()
}

/// Labels chosen by the offspring of red particle `rank` at `site` that land
/// at `site + offset`. The offspring count is the one the envelope uses.
fn offspring_labels(
    cfg: &CouplingConfig,
    rep: Key,
    generation: u64,
    site: i64,
    rank: u64,
    offset: i64,
) -> Vec<u32> {
    let n = cfg.n;
    match cfg.repro {
        Reproduction::PairCoins { n } => coin_labels(rep, generation, site, rank, offset, n).collect(),
        Reproduction::Law(law) => {
            let kids = particle_offspring(cfg.repro, rep, generation, site, rank);
            let k = kids[(offset + 1) as usize];
            let mut rng = label_stream(rep, generation, site, rank, offset);
            match law {
                // independent uniform labels
                OffspringLaw::PoissonLimit => (0..k).map(|_| rng.below(n as u64) as u32).collect(),
                // a uniform k-subset, as produced by independent pair coins
                OffspringLaw::VillageBinomial { .. } => distinct_subset(n, k, &mut rng),
            }
        }
    }
}

/// Uniform `k`-subset of `0..n` (Floyd's algorithm).
fn distinct_subset(n: u32, k: u32, rng: &mut KeyedRng) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(k as usize);
    for j in n - k..n {
        let t = rng.below(j as u64 + 1) as u32;
        if out.contains(&t) {
            out.push(j);
        } else {
            out.push(t);
        }
    }
    out
}

/// Resolve the labels chosen at one site. Returns the labels that turn red
/// (sorted, distinct) and the number of choosers turned blue.
fn resolve_labels(mut chosen: Vec<u32>, unavailable: &[u32]) -> (Vec<u32>, u64) {
    let total = chosen.len() as u64;
    chosen.sort_unstable();
    chosen.dedup();
    chosen.retain(|j| unavailable.binary_search(j).is_err());
    let blue = total - chosen.len() as u64;
    (chosen, blue)
}

fn merge_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// One generation of the standard coupling.
pub fn standard_step(
    field: &ColoredField,
    cfg: &CouplingConfig,
    rep: Key,
    generation: u64,
) -> ColoredField {
    let mut next = ColoredField {
        red: ParticleField::new(),
        blue: ParticleField::new(),
        labels: BTreeMap::new(),
        used: if cfg.variant == Variant::Sir { field.used.clone() } else { BTreeMap::new() },
        ever_red: field.ever_red.clone(),
        attrition: 0,
        clamps: 0,
    };
    let Some(mut arr) = reproduce(field, cfg, rep, generation, true) else {
        return next;
    };
    for (i, y) in arr.sites().collect::<Vec<_>>() {
        let chosen = std::mem::take(&mut arr.red_labels[i]);
        let unavailable: &[u32] = match cfg.variant {
            Variant::Sis => field.red_labels(y),
            Variant::Sir => field.used.get(&y).map_or(&[], Vec::as_slice),
        };
        let (red, blue) = resolve_labels(chosen, unavailable);
        next.attrition += blue;
        next.blue.add(y, arr.blue[i] + blue);
        if red.is_empty() {
            continue;
        }
        next.red.add(y, red.len() as u64);
        next.ever_red.add(y, red.len() as u64);
        if cfg.variant == Variant::Sir {
            let u = next.used.entry(y).or_default();
            *u = merge_sorted(u, &red);
        }
        next.labels.insert(y, red);
    }
    next
}

/// One generation of the modified coupling: at each site at most one
/// red-parent offspring turns blue, with probability `min(κ_N(y), 1)`.
pub fn modified_step(
    field: &ColoredField,
    cfg: &CouplingConfig,
    rep: Key,
    generation: u64,
) -> ColoredField {
    let mut next = ColoredField {
        red: ParticleField::new(),
        blue: ParticleField::new(),
        labels: BTreeMap::new(),
        used: BTreeMap::new(),
        ever_red: field.ever_red.clone(),
        attrition: 0,
        clamps: 0,
    };
    let Some(arr) = reproduce(field, cfg, rep, generation, false) else {
        return next;
    };
    let coin = rep.purpose(Purpose::Blue).push(generation);
    for (i, y) in arr.sites() {
        let reds = arr.red_count[i];
        let mut blue = 0;
        if reds > 0 {
            let k = kappa(cfg.variant, reds, field.ever_red.get(y), cfg.n);
            if k > 1.0 {
                next.clamps += 1;
            }
            if coin.push_i64(y).uniform() < k.min(1.0) {
                blue = 1;
            }
        }
        next.attrition += blue;
        next.red.add(y, reds - blue);
        next.ever_red.add(y, reds - blue);
        next.blue.add(y, arr.blue[i] + blue);
    }
    next
}

pub fn coupling_step(
    kind: CouplingKind,
    field: &ColoredField,
    cfg: &CouplingConfig,
    rep: Key,
    generation: u64,
) -> ColoredField {
    match kind {
        CouplingKind::Standard => standard_step(field, cfg, rep, generation),
        CouplingKind::Modified => modified_step(field, cfg, rep, generation),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CouplingSummary {
    /// Last generation with any particle.
    pub envelope_duration: usize,
    /// Last generation with a red particle.
    pub red_duration: usize,
    /// `Σ_t` total particles.
    pub envelope_size: u64,
    /// Red size, with the epidemic's convention: `Σ_t Σ_x red` (SIS) or the
    /// number of individuals ever infected (SIR).
    pub red_size: u64,
    pub attrition: u64,
    pub clamps: u64,
    pub truncated: bool,
}

/// Iterate a coupling, handing every generation to `observe`.
pub fn coupling_run_with(
    init: ColoredField,
    cfg: &CouplingConfig,
    kind: CouplingKind,
    rep: Key,
    max_gens: usize,
    mut observe: impl FnMut(usize, &ColoredField) -> ControlFlow<()>,
) -> CouplingSummary {
    let mut s = CouplingSummary::default();
    let mut field = init;
    let mut red_total = 0;
    let mut t = 0;
    loop {
        if !field.is_empty() {
            s.envelope_duration = t;
            s.envelope_size += field.total();
        }
        if !field.red.is_empty() {
            s.red_duration = t;
            red_total += field.red.total();
        }
        s.attrition += field.attrition;
        s.clamps += field.clamps;
        let stop = observe(t, &field).is_break();
        if stop || field.is_empty() || t >= max_gens {
            s.truncated = !field.is_empty();
            s.red_size = match cfg.variant {
                Variant::Sis => red_total,
                Variant::Sir => field.ever_red.total(),
            };
            return s;
        }
        field = coupling_step(kind, &field, cfg, rep, t as u64);
        t += 1;
    }
}

/// Run to extinction of the envelope or `max_gens`, recording every field.
pub fn coupling_run(
    init: ColoredField,
    cfg: &CouplingConfig,
    kind: CouplingKind,
    rep: Key,
    max_gens: usize,
) -> (Vec<ColoredField>, CouplingSummary) {
    let mut traj = Vec::new();
    let s = coupling_run_with(init, cfg, kind, rep, max_gens, |_, f| {
        traj.push(f.clone());
        ControlFlow::Continue(())
    });
    (traj, s)
}

/// Blue offspring of red parents created in each generation (entry `t` is
/// the attrition of the step producing generation `t`; entry 0 is zero).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttritionSeries(pub Vec<u64>);

impl AttritionSeries {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

pub fn attrition_series(trajectory: &[ColoredField]) -> AttritionSeries {
    AttritionSeries(
        trajectory
            .iter()
            .enumerate()
            .map(|(t, f)| if t == 0 { 0 } else { f.attrition })
            .collect(),
    )
}

/// `⌈N^α⌉` red particles spread as evenly as possible over `⌈N^{α/2}⌉`
/// consecutive sites centred at the origin.
pub fn threshold_initial(n: u32, alpha: f64) -> Result<ParticleField> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("alpha must lie in (0, 1], got {alpha}"));
    }
    let nf = n as f64;
    let mass = nf.powf(alpha).ceil() as u64;
    let sites = (nf.powf(alpha / 2.0).ceil() as u64).clamp(1, mass);
    let lo = -((sites as i64 - 1) / 2);
    let mut f = ParticleField::new();
    for i in 0..sites {
        let c = mass / sites + u64::from(i < mass % sites);
        f.add(lo + i as i64, c);
    }
    Ok(f)
}

/// CSV rows `replicate,t,x,red,blue`.
pub fn write_csv(
    w: &mut impl Write,
    replicate: u64,
    trajectory: &[ColoredField],
    header: bool,
) -> io::Result<()> {
    if header {
        writeln!(w, "replicate,t,x,red,blue")?;
    }
    for (t, f) in trajectory.iter().enumerate() {
        for (x, c) in f.envelope().iter() {
            writeln!(w, "{replicate},{t},{x},{},{}", f.red.get(x), c - f.red.get(x))?;
        }
    }
    Ok(())
}

/// CSV rows `replicate,t,blue_from_red`.
pub fn write_attrition_csv(
    w: &mut impl Write,
    replicate: u64,
    series: &AttritionSeries,
    header: bool,
) -> io::Result<()> {
    if header {
        writeln!(w, "replicate,t,blue_from_red")?;
    }
    for (t, a) in series.0.iter().enumerate() {
        writeln!(w, "{replicate},{t},{a}")?;
    }
    Ok(())
}
