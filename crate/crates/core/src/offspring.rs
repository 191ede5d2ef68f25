//! Offspring laws of the branching envelope.
//!
//! A particle at `x` places independent numbers of offspring at `x - 1`, `x`
//! and `x + 1`. Under the village law each count is Binomial(N, 1/(3N)); under
//! the Poisson limit each is Poisson(1/3). Either way the mean total is one.

use crate::error::{invalid, Result};
use crate::rng::KeyedRng;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand_distr::{Binomial, Distribution};

/// Fan-out offsets in the order used by [`OffspringLaw::sample`].
pub const OFFSETS: [i64; 3] = [-1, 0, 1];

/// Largest village size sampled by CDF inversion.
const INVERSION_MAX_N: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OffspringLaw {
    /// Per-offset Binomial(N, 1/(3N)).
    VillageBinomial { n: u32 },
    /// Per-offset Poisson(1/3).
    PoissonLimit,
}

fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

impl OffspringLaw {
    pub fn village(n: u32) -> Result<Self> {
        if n == 0 {
            return invalid("village size must be positive");
        }
        Ok(OffspringLaw::VillageBinomial { n })
    }

    /// Mean number of offspring placed at a single offset (always 1/3).
    pub fn per_offset_mean(&self) -> BigRational {
        match *self {
            OffspringLaw::VillageBinomial { n } => {
                BigRational::from_integer(BigInt::from(n)) * ratio(1, 3 * n as i64)
            }
            OffspringLaw::PoissonLimit => ratio(1, 3),
        }
    }

    /// Mean total offspring, the sum of the three per-offset means.
    pub fn mean_total(&self) -> BigRational {
        self.per_offset_mean() * BigRational::from_integer(BigInt::from(3))
    }

    /// Probability of each per-offset success coin, for the village law.
    pub fn coin_probability(&self) -> Option<f64> {
        match *self {
            OffspringLaw::VillageBinomial { n } => Some(1.0 / (3.0 * n as f64)),
            OffspringLaw::PoissonLimit => None,
        }
    }

    /// `j`-th descending factorial moment of one per-offset count.
    pub(crate) fn offset_factorial_moment(&self, j: u32) -> BigRational {
        match *self {
            OffspringLaw::VillageBinomial { n } => {
                // (N)_j p^j with p = 1/(3N)
                let mut acc = BigRational::one();
                for i in 0..j {
                    if i >= n {
                        return BigRational::zero();
                    }
                    acc *= ratio((n - i) as i64, 3 * n as i64);
                }
                acc
            }
            OffspringLaw::PoissonLimit => {
                let mut acc = BigRational::one();
                for _ in 0..j {
                    acc *= ratio(1, 3);
                }
                acc
            }
        }
    }

    /// `r`-th descending factorial moment `E[ξ(ξ-1)...(ξ-r+1)]` of the total
    /// offspring count, exactly.
    ///
    /// Factorial moments of a sum of independent counts obey the Vandermonde
    /// convolution `E[(X+Y)_r] = Σ_j C(r,j) E[(X)_j] E[(Y)_{r-j}]`; it is
    /// applied twice to combine the three offsets.
    pub fn factorial_moment(&self, r: u32) -> Result<BigRational> {
        if r == 0 {
            return invalid("factorial moment order must be at least 1");
        }
        let single: Vec<BigRational> = (0..=r).map(|j| self.offset_factorial_moment(j)).collect();
        let mut acc = single.clone();
        for _ in 0..2 {
            acc = convolve_factorial(&acc, &single);
        }
        Ok(acc[r as usize].clone())
    }

    /// Probability generating function of the total offspring count.
    pub fn pgf(&self, s: f64) -> f64 {
        match *self {
            OffspringLaw::VillageBinomial { n } => {
                let p = 1.0 / (3.0 * n as f64);
                (1.0 - p + p * s).powi(3 * n as i32)
            }
            OffspringLaw::PoissonLimit => (s - 1.0).exp(),
        }
    }

    /// Draw one per-offset count.
    #[inline]
    pub fn sample_offset(&self, rng: &mut KeyedRng) -> u32 {
        match *self {
            OffspringLaw::PoissonLimit => poisson_third(rng),
            OffspringLaw::VillageBinomial { n } if n <= INVERSION_MAX_N => {
                binomial_inversion(n, 1.0 / (3.0 * n as f64), rng)
            }
            OffspringLaw::VillageBinomial { n } => {
                let b = Binomial::new(n as u64, 1.0 / (3.0 * n as f64))
                    .expect("valid binomial parameters");
                b.sample(rng) as u32
            }
        }
    }

    /// Offspring counts at offsets −1, 0, +1, drawn independently.
    #[inline]
    pub fn sample(&self, rng: &mut KeyedRng) -> [u32; 3] {
        [
            self.sample_offset(rng),
            self.sample_offset(rng),
            self.sample_offset(rng),
        ]
    }
}

fn convolve_factorial(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let r = a.len().min(b.len());
    (0..r)
        .map(|k| {
            let mut s = BigRational::zero();
            let mut binom = BigInt::one();
            for j in 0..=k {
                s += BigRational::from_integer(binom.clone()) * &a[j] * &b[k - j];
                binom = binom * BigInt::from(k - j) / BigInt::from(j + 1);
            }
            s
        })
        .collect()
}

const EXP_MINUS_THIRD: f64 = 0.716_531_310_573_789_3;

/// Poisson(1/3) by sequential inversion.
#[inline]
fn poisson_third(rng: &mut KeyedRng) -> u32 {
    let u = rng.uniform();
    let mut k = 0u32;
    let mut p = EXP_MINUS_THIRD;
    let mut cdf = p;
    while u >= cdf {
        k += 1;
        p *= (1.0 / 3.0) / k as f64;
        let next = cdf + p;
        if next == cdf {
            break;
        }
        cdf = next;
    }
    k
}

/// Binomial(n, p) by sequential inversion; suited to small `n p`.
#[inline]
fn binomial_inversion(n: u32, p: f64, rng: &mut KeyedRng) -> u32 {
    let u = rng.uniform();
    let odds = p / (1.0 - p);
    let mut k = 0u32;
    let mut pk = (1.0 - p).powi(n as i32);
    let mut cdf = pk;
    while u >= cdf && k < n {
        pk *= odds * (n - k) as f64 / (k + 1) as f64;
        k += 1;
        cdf += pk;
    }
    k
}
