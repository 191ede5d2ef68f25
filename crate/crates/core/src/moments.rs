//! Exact moments of branching-random-walk occupation counts by last common
//! ancestor decomposition.
//!
//! For one ancestor at displacement `d` from the target site, write
//! `f_n^{(m)}(d) = E[Y_n(x)^m]`. Expanding `Y^m` as a sum over `m`-tuples of
//! generation-`n` particles at `x` and grouping tuples by their last common
//! ancestor (generation `k`, site `z`) and the set partition of `[m]` induced
//! by the ancestor's children gives
//!
//! ```text
//! f_n^{(m)}(d) = P^n(d) + Σ_{k<n} Σ_z P^k(z) G_{n-k-1}^{(m)}(d - z)
//! G_h^{(m)}(w) = Σ_{r≥2} Σ_{p ∈ P_r(m)} c(p) Σ_{e ∈ {-1,0,1}^r} μ(e) Π_i f_h^{(m_i)}(w - e_i)
//! ```
//!
//! where `c(p) = m!/(Π m_i! Π mult_j!)` counts the set partitions with block
//! sizes `p`, and `μ(e)` is the expected number of ordered `r`-tuples of
//! distinct children with offsets `e` (the product of per-offset factorial
//! moments). For the Poisson law `μ(e) = 3^{-r}`.
//!
//! The same recursion with a different generation-`s` leaf function yields
//! the moments of increments `Y_s(x) - Y_t(x)`.

use crate::envelope::{brw_run_with, ParticleField};
use crate::error::{invalid, Result};
use crate::offspring::OffspringLaw;
use crate::rng::Key;
use crate::stats::MeanSe;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use std::io::{self, Write};
use std::ops::{Add, Mul, Sub};
use std::ops::ControlFlow;

/// Largest generation evaluated in exact rational arithmetic by [`moment`].
pub const EXACT_MAX_N: usize = 12;

/// Number field for the recursion.
pub trait Scalar:
    Clone + Zero + One + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self>
{
    fn from_rational(r: &BigRational) -> Self;
    fn as_f64(&self) -> f64;
}

impl Scalar for BigRational {
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn from_rational(r: &BigRational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }
    fn as_f64(&self) -> f64 {
        *self
    }
}

/// Integer partition `m_1 ≥ … ≥ m_r ≥ 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Partition(pub Vec<u32>);

impl Partition {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Number of set partitions of `[m]` whose block sizes are these parts.
    pub fn set_partition_count(&self) -> BigInt {
        let mut den = BigInt::one();
        for &p in &self.0 {
            den *= factorial(p);
        }
        let mut i = 0;
        while i < self.0.len() {
            let j = self.0[i..].iter().take_while(|&&q| q == self.0[i]).count();
            den *= factorial(j as u32);
            i += j;
        }
        factorial(self.total()) / den
    }
}

fn factorial(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |a, k| a * BigInt::from(k))
}

/// All partitions of `m` into exactly `r` parts, in decreasing
/// lexicographic order.
pub fn partitions(m: u32, r: u32) -> Vec<Partition> {
    fn rec(rest: u32, parts: u32, max: u32, cur: &mut Vec<u32>, out: &mut Vec<Partition>) {
        if parts == 0 {
            if rest == 0 {
                out.push(Partition(cur.clone()));
            }
            return;
        }
        // each remaining part is at least 1 and at most `max`
        let hi = max.min(rest.saturating_sub(parts - 1));
        for p in (1..=hi).rev() {
            if p * parts < rest {
                break;
            }
            cur.push(p);
            rec(rest - p, parts - 1, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if r >= 1 && r <= m {
        rec(m, r, m, &mut Vec::new(), &mut out);
    }
    out
}

/// A finitely supported function on ℤ.
#[derive(Debug, Clone, PartialEq)]
struct Profile<S> {
    lo: i64,
    vals: Vec<S>,
}

impl<S: Scalar> Profile<S> {
    fn zeros(lo: i64, hi: i64) -> Self {
        Self {
            lo,
            vals: vec![S::zero(); (hi - lo + 1).max(0) as usize],
        }
    }

    fn hi(&self) -> i64 {
        self.lo + self.vals.len() as i64 - 1
    }

    fn get(&self, d: i64) -> S {
        if d < self.lo || d > self.hi() {
            S::zero()
        } else {
            self.vals[(d - self.lo) as usize].clone()
        }
    }

    fn add_at(&mut self, d: i64, v: S) {
        let i = (d - self.lo) as usize;
        self.vals[i] = self.vals[i].clone() + v;
    }

    fn convolve(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.lo + other.lo, self.hi() + other.hi());
        for (i, a) in self.vals.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.vals.iter().enumerate() {
                if b.is_zero() {
                    continue;
                }
                let d = self.lo + other.lo + (i + j) as i64;
                out.add_at(d, a.clone() * b.clone());
            }
        }
        out
    }

    fn add(&mut self, other: &Self) {
        for (i, v) in other.vals.iter().enumerate() {
            self.add_at(other.lo + i as i64, v.clone());
        }
    }
}

/// Rows `P^n(0, ·)` of the uniform nearest-neighbour kernel.
#[derive(Debug, Clone)]
pub struct KernelTable<S> {
    rows: Vec<Profile<S>>,
}

impl<S: Scalar> KernelTable<S> {
    pub fn new(n_max: usize) -> Self {
        let third = S::from_rational(&BigRational::new(1.into(), 3.into()));
        let mut rows = vec![Profile {
            lo: 0,
            vals: vec![S::one()],
        }];
        let step = Profile {
            lo: -1,
            vals: vec![third.clone(), third.clone(), third],
        };
        for n in 1..=n_max {
            let next = rows[n - 1].convolve(&step);
            rows.push(next);
        }
        Self { rows }
    }

    /// `P^n(0, x)`.
    pub fn get(&self, n: usize, x: i64) -> S {
        self.rows[n].get(x)
    }

    fn row(&self, n: usize) -> &Profile<S> {
        &self.rows[n]
    }
}

/// `P^n(0, x)` exactly.
pub fn kernel_power(n: usize, x: i64) -> BigRational {
    KernelTable::<BigRational>::new(n).get(n, x)
}

/// Branching weights `Σ_{p ∈ P_r(q)} c(p) μ(e)` laid out per order `q`.
struct Branching<S> {
    /// For each `q`, a list of (parts, offset tuples with weights).
    terms: Vec<Vec<(Vec<usize>, Vec<(Vec<i64>, S)>)>>,
}

impl<S: Scalar> Branching<S> {
    fn new(law: OffspringLaw, m_max: u32) -> Self {
        let phi: Vec<BigRational> = (0..=m_max).map(|j| law.offset_factorial_moment(j)).collect();
        let mut terms = vec![Vec::new(); m_max as usize + 1];
        for q in 2..=m_max {
            for r in 2..=q {
                let tuples = offset_tuples(r as usize, &phi);
                for p in partitions(q, r) {
                    let c = BigRational::from_integer(p.set_partition_count());
                    let weighted = tuples
                        .iter()
                        .map(|(e, w)| (e.clone(), S::from_rational(&(w * &c))))
                        .collect();
                    terms[q as usize].push((p.0.iter().map(|&v| v as usize).collect(), weighted));
                }
            }
        }
        Self { terms }
    }
}

/// All `e ∈ {-1,0,1}^r` with `μ(e) = Π_o φ_{#{i: e_i = o}}`.
fn offset_tuples(r: usize, phi: &[BigRational]) -> Vec<(Vec<i64>, BigRational)> {
    let mut out = Vec::new();
    for code in 0..3usize.pow(r as u32) {
        let mut c = code;
        let mut e = Vec::with_capacity(r);
        let mut counts = [0usize; 3];
        for _ in 0..r {
            counts[c % 3] += 1;
            e.push(c as i64 % 3 - 1);
            c /= 3;
        }
        let w = counts.iter().fold(BigRational::one(), |a, &k| a * &phi[k]);
        if !w.is_zero() {
            out.push((e, w));
        }
    }
    out
}

/// `G^{(q)}(w) = Σ c(p) Σ_e μ(e) Π_i h^{(m_i)}(w - e_i)` for `q = 1..=m_max`
/// (entry 0 unused, entry 1 zero).
fn split_terms<S: Scalar>(h: &[Profile<S>], br: &Branching<S>, m_max: usize) -> Vec<Profile<S>> {
    let lo = h[1].lo - 1;
    let hi = h[1].hi() + 1;
    let mut out = vec![Profile::zeros(lo, hi); m_max + 1];
    for q in 2..=m_max {
        for (parts, tuples) in &br.terms[q] {
            for w in lo..=hi {
                let mut acc = S::zero();
                for (e, weight) in tuples {
                    let mut prod = weight.clone();
                    for (i, &mi) in parts.iter().enumerate() {
                        prod = prod * h[mi].get(w - e[i]);
                        if prod.is_zero() {
                            break;
                        }
                    }
                    acc = acc + prod;
                }
                out[q].add_at(w, acc);
            }
        }
    }
    out
}

/// Last-common-ancestor recursion from a leaf function `b^{(q)}` at
/// generation 0 up to `horizon`: returns `h_horizon^{(q)}` for
/// `q = 0..=m_max` (entry 0 unused).
fn lca<S: Scalar>(
    law: OffspringLaw,
    leaf: &[Profile<S>],
    horizon: usize,
    m_max: usize,
) -> Vec<Profile<S>> {
    let kernel = KernelTable::<S>::new(horizon);
    let br = Branching::<S>::new(law, m_max as u32);
    let mut splits: Vec<Vec<Profile<S>>> = Vec::with_capacity(horizon);
    let mut h: Vec<Profile<S>> = Vec::new();
    for j in 0..=horizon {
        // h_j^{(q)} = P^j * b^{(q)} + Σ_{k<j} P^k * G_{j-k-1}^{(q)}
        let mut next = Vec::with_capacity(m_max + 1);
        next.push(Profile::zeros(0, 0));
        for q in 1..=m_max {
            let mut v = kernel.row(j).convolve(&leaf[q]);
            for k in 0..j {
                let g = &splits[j - k - 1][q];
                let c = kernel.row(k).convolve(g);
                let mut widened = Profile::zeros(v.lo.min(c.lo), v.hi().max(c.hi()));
                widened.add(&v);
                widened.add(&c);
                v = widened;
            }
            next.push(v);
        }
        h = next;
        if j < horizon {
            splits.push(split_terms(&h, &br, m_max));
        }
    }
    h
}

fn point_leaf<S: Scalar>(m_max: usize) -> Vec<Profile<S>> {
    let mut leaf = vec![Profile::zeros(0, 0)];
    for _ in 1..=m_max {
        leaf.push(Profile {
            lo: 0,
            vals: vec![S::one()],
        });
    }
    leaf
}

fn check_law(law: OffspringLaw) -> Result<()> {
    if let OffspringLaw::VillageBinomial { n: 0 } = law {
        return invalid("village size must be positive");
    }
    Ok(())
}

/// `E^0[Y_n(x)^q]` for every `q ≤ m` and every `x`, in the chosen arithmetic.
pub struct MomentTable<S> {
    values: Vec<Profile<S>>,
}

impl<S: Scalar> MomentTable<S> {
    pub fn new(n: usize, m: u32, law: OffspringLaw) -> Result<Self> {
        if m == 0 {
            return invalid("moment order must be at least 1");
        }
        check_law(law)?;
        Ok(Self {
            values: lca(law, &point_leaf(m as usize), n, m as usize),
        })
    }

    pub fn get(&self, x: i64, m: u32) -> S {
        self.values[m as usize].get(x)
    }
}

/// `E^0[Y_n(x)^m]` exactly.
pub fn moment_exact(n: usize, x: i64, m: u32, law: OffspringLaw) -> Result<BigRational> {
    Ok(MomentTable::<BigRational>::new(n, m, law)?.get(x, m))
}

/// `E^0[Y_n(x)^m]`: rational arithmetic for `n ≤ EXACT_MAX_N`, `f64` beyond.
pub fn moment(n: usize, x: i64, m: u32, law: OffspringLaw) -> Result<f64> {
    if n <= EXACT_MAX_N {
        Ok(moment_exact(n, x, m, law)?.as_f64())
    } else {
        Ok(MomentTable::<f64>::new(n, m, law)?.get(x, m))
    }
}

/// Leaf for increments: `g^{(q)}(d) = E[(1{d=0} - f_Δ)^q]` expanded
/// binomially in the moments of `Y_Δ` from one ancestor.
fn increment_leaf<S: Scalar>(law: OffspringLaw, delta: usize, m_max: usize) -> Vec<Profile<S>> {
    let f = lca(law, &point_leaf::<S>(m_max), delta, m_max);
    let r = delta as i64;
    let mut leaf = vec![Profile::zeros(0, 0)];
    for q in 1..=m_max {
        let mut g = Profile::zeros(-r, r);
        for d in -r..=r {
            let mut acc = S::zero();
            let mut binom = BigInt::one();
            for i in 0..=q {
                // C(q, i) 1{d=0}^{q-i} (-1)^i E[Y_Δ^i]
                let indicator_pow = if q - i == 0 || d == 0 { S::one() } else { S::zero() };
                let moment_i = if i == 0 { S::one() } else { f[i].get(d) };
                let c = S::from_rational(&BigRational::from_integer(binom.clone()));
                let term = c * indicator_pow * moment_i;
                acc = if i % 2 == 0 { acc + term } else { acc - term };
                binom = binom * BigInt::from(q - i) / BigInt::from(i + 1);
            }
            g.add_at(d, acc);
        }
        leaf.push(g);
    }
    leaf
}

/// `E^0[(Y_s(x) - Y_t(x))^m]` with `s = n` and `t = n + ⌊αn⌋`, exactly.
pub fn increment_moment_exact(n: usize, alpha: f64, x: i64, m: u32, law: OffspringLaw) -> Result<BigRational> {
    let delta = increment_lag(n, alpha)?;
    if m == 0 {
        return invalid("moment order must be at least 1");
    }
    check_law(law)?;
    let leaf = increment_leaf::<BigRational>(law, delta, m as usize);
    Ok(lca(law, &leaf, n, m as usize)[m as usize].get(x))
}

pub fn increment_moment(n: usize, alpha: f64, x: i64, m: u32, law: OffspringLaw) -> Result<f64> {
    let delta = increment_lag(n, alpha)?;
    if n + delta <= EXACT_MAX_N {
        return Ok(increment_moment_exact(n, alpha, x, m, law)?.as_f64());
    }
    if m == 0 {
        return invalid("moment order must be at least 1");
    }
    check_law(law)?;
    let leaf = increment_leaf::<f64>(law, delta, m as usize);
    Ok(lca(law, &leaf, n, m as usize)[m as usize].get(x))
}

/// `⌊αn⌋`.
pub fn increment_lag(n: usize, alpha: f64) -> Result<usize> {
    if n < 1 {
        return invalid("increment moments need n ≥ 1");
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid(format!("alpha must lie in (0, 1], got {alpha}"));
    }
    Ok((alpha * n as f64 + 1e-12).floor() as usize)
}

/// Monte Carlo estimates of `E^0[Y_n(x)^m]` for all `n ≤ n_max`,
/// `x ∈ xs`, `m ≤ m_max` from one set of single-ancestor runs. Entry
/// `[n][i][m-1]` belongs to `xs[i]`.
pub fn mc_moment_table(
    n_max: usize,
    xs: &[i64],
    m_max: u32,
    law: OffspringLaw,
    reps: u64,
    root: Key,
) -> Vec<Vec<Vec<MeanSe>>> {
    let mut acc = vec![vec![vec![MeanSe::new(); m_max as usize]; xs.len()]; n_max + 1];
    for r in 0..reps {
        let mut seen = 0;
        brw_run_with(ParticleField::point(0, 1), law, root.replicate(r), n_max, |t, f| {
            for (i, &x) in xs.iter().enumerate() {
                let y = f.get(x) as f64;
                let mut p = 1.0;
                for q in 0..m_max as usize {
                    p *= y;
                    acc[t][i][q].push(p);
                }
            }
            seen = t;
            ControlFlow::Continue(())
        });
        // extinct runs contribute zeros to the remaining generations
        for row in acc.iter_mut().skip(seen + 1) {
            for cell in row.iter_mut() {
                for c in cell.iter_mut() {
                    c.push(0.0);
                }
            }
        }
    }
    acc
}

/// Monte Carlo estimate of `E^0[Y_n(x)^m]`.
pub fn mc_moment(n: usize, x: i64, m: u32, law: OffspringLaw, reps: u64, root: Key) -> Result<MeanSe> {
    if m == 0 {
        return invalid("moment order must be at least 1");
    }
    Ok(mc_moment_table(n, &[x], m, law, reps, root)[n][0][m as usize - 1])
}

/// Monte Carlo estimate of `E^0[(Y_s(x) - Y_t(x))^m]`.
pub fn mc_increment_moment(
    n: usize,
    alpha: f64,
    x: i64,
    m: u32,
    law: OffspringLaw,
    reps: u64,
    root: Key,
) -> Result<MeanSe> {
    let t = n + increment_lag(n, alpha)?;
    let mut acc = MeanSe::new();
    for r in 0..reps {
        let (mut ys, mut yt) = (0.0, 0.0);
        brw_run_with(ParticleField::point(0, 1), law, root.replicate(r), t, |g, f| {
            if g == n {
                ys = f.get(x) as f64;
            }
            if g == t {
                yt = f.get(x) as f64;
            }
            ControlFlow::Continue(())
        });
        acc.push((ys - yt).powi(m as i32));
    }
    Ok(acc)
}

/// CSV rows `n,x,m,exact,mc,se`.
pub fn write_csv(w: &mut impl Write, rows: &[(usize, i64, u32, f64, f64, f64)], header: bool) -> io::Result<()> {
    if header {
        writeln!(w, "n,x,m,exact,mc,se")?;
    }
    for (n, x, m, exact, mc, se) in rows {
        writeln!(w, "{n},{x},{m},{exact},{mc},{se}")?;
    }
    Ok(())
}
