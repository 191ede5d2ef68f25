//! Keyed, counter-based randomness.
//!
//! Every random draw in the crate is addressed by a [`Key`]: a 64-bit digest
//! of a path such as `(seed, replicate, generation, site, particle, purpose)`.
//! A key either yields a single uniform directly ([`Key::uniform`]) or opens a
//! [`KeyedRng`] stream whose `i`-th output depends only on `(key, i)`.
//!
//! Because nothing is drawn from a shared sequential generator, results do not
//! depend on thread count or iteration order, and two simulations that use
//! the same key for "the same" particle see the same randomness. The coupling
//! tests rely on this.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Tags separating independent uses of randomness at the same location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Offspring = 1,
    Label = 2,
    PairCoin = 3,
    Infection = 4,
    Blue = 5,
    Initial = 6,
    MeanField = 7,
    Diffusion = 8,
    GraphEdge = 9,
    Replicate = 10,
    Experiment = 11,
}

/// A position in the keyed random space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key(u64);

impl Key {
    /// Root key for a master seed.
    pub fn root(seed: u64) -> Self {
        Key(mix64(mix64(seed ^ 0x5851_f42d_4c95_7f2d)))
    }

    /// Descend one level, absorbing `word`.
    #[inline]
    pub fn push(self, word: u64) -> Self {
        // two rounds so that nearby words in nearby parents land far apart
        Key(mix64(mix64(self.0 ^ word.wrapping_mul(GOLDEN)).wrapping_add(self.0)))
    }

    #[inline]
    pub fn push_i64(self, word: i64) -> Self {
        self.push(word as u64)
    }

    #[inline]
    pub fn purpose(self, p: Purpose) -> Self {
        self.push(0xa076_1d64_78bd_642f ^ p as u64)
    }

    /// Key for replicate `r` below this key.
    pub fn replicate(self, r: u64) -> Self {
        self.purpose(Purpose::Replicate).push(r)
    }

    /// Raw 64-bit digest.
    pub fn raw(self) -> u64 {
        self.0
    }

    /// A single uniform in `[0, 1)` determined by the key alone.
    #[inline]
    pub fn uniform(self) -> f64 {
        to_unit(mix64(self.0 ^ 0xe703_7ed1_a0b4_28db))
    }

    /// Counter-based stream rooted at this key.
    #[inline]
    pub fn stream(self) -> KeyedRng {
        KeyedRng {
            key: self.0,
            counter: 0,
        }
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// SplitMix64 evaluated at `key + counter * GOLDEN`: the `i`-th output is a
/// pure function of `(key, i)`.
#[derive(Debug, Clone)]
pub struct KeyedRng {
    key: u64,
    counter: u64,
}

impl KeyedRng {
    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform in the open interval `(0, 1)`.
    #[inline]
    pub fn open_uniform(&mut self) -> f64 {
        loop {
            let u = self.uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform integer in `0..n` (`n > 0`), by multiply-shift with rejection.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return ((v as u128 * n as u128) >> 64) as u64;
            }
        }
    }

    pub fn position(&self) -> u64 {
        self.counter
    }
}

impl RngCore for KeyedRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Key of the p-coin attached to the potential transmission from the
/// `rank`-th infective at `src_site` to individual `label` at
/// `src_site + offset` in generation `generation`.
///
/// The envelope (pair-coin mode), the labelled reference epidemic and the
/// standard coupling all read transmissions through this function, which is
/// what makes their paths comparable.
#[inline]
pub fn particle_coin(
    replicate: Key,
    generation: u64,
    src_site: i64,
    rank: u64,
    offset: i64,
    label: u32,
) -> Key {
    replicate
        .purpose(Purpose::PairCoin)
        .push(generation)
        .push_i64(src_site)
        .push(rank)
        .push_i64(offset)
        .push(label as u64)
}

/// Key of the percolation coin on the edge between individuals `a` and `b`,
/// each given as `(site, label)`.
///
/// For undirected (SIR) graphs pass `layer = None`; the endpoints are ordered
/// canonically. For time-layered (SIS) graphs pass the generation and the
/// coin is directed `a -> b`.
#[inline]
pub fn edge_coin(replicate: Key, layer: Option<u64>, a: (i64, u32), b: (i64, u32)) -> Key {
    let base = replicate.purpose(Purpose::GraphEdge);
    match layer {
        None => {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            base.push(u64::MAX)
                .push_i64(lo.0)
                .push(lo.1 as u64)
                .push_i64(hi.0)
                .push(hi.1 as u64)
        }
        Some(t) => base
            .push(t)
            .push_i64(a.0)
            .push(a.1 as u64)
            .push_i64(b.0)
            .push(b.1 as u64),
    }
}
