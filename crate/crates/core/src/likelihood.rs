//! Likelihood ratio of the modified-coupling epidemic law `Q` against the
//! Poisson envelope law `P`, along one sample path `(y_t(x))`.
//!
//! Under `P`, `Y_t(x)` is Poisson(`λ_t(x)`) given the past. Under `Q` the
//! value `y` arises either from `y` red-parent offspring none of which turns
//! blue, or from `y + 1` of which one does, so each site contributes
//!
//! ```text
//! L(t, x) = (1 - κ(y)) + λ/(y + 1) · κ(y + 1)
//! ```
//!
//! with `κ` the (clamped) blue probability of the modified coupling and
//! `R = Σ_{s<t} y_s(x)` for SIR.

use crate::coupling::kappa;
use crate::envelope::ParticleField;
use crate::epidemic::Variant;
use crate::error::{invalid, Error, Result};
use crate::rescale::lambda;
use crate::stats::CompensatedSum;
use std::io::{self, Write};

/// Ratio of the `Q` and `P` probabilities of observing `y` given mean `λ`.
pub fn site_factor(y: u64, lambda: f64, kappa_y: f64, kappa_y1: f64) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("mean must be nonnegative, got {lambda}"));
    }
    for k in [kappa_y, kappa_y1] {
        if !(0.0..=1.0).contains(&k) {
            return invalid(format!("blue probability {k} outside [0, 1]"));
        }
    }
    if lambda == 0.0 && y > 0 {
        return invalid(format!("y = {y} is impossible with λ = 0"));
    }
    Ok((1.0 - kappa_y) + lambda / (y as f64 + 1.0) * kappa_y1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodConfig {
    pub n: u32,
    pub variant: Variant,
    /// Scaling exponent; only used to normalise the diagnostics.
    pub alpha: f64,
}

/// Small-`1/N` expansions of `log L`, kept for comparison with the exact sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diagnostics {
    /// Sums of `A = λ(y-λ)/2N`, `B = λ²(y-λ)²/8N²`, `C = (y-λ)²/N - y/N`;
    /// the expansion is `log L ≈ -ΣA - ΣB - ΣC/2`.
    Sis { a: f64, b: f64, c: f64 },
    /// Sums of `Δρ` and `Δ²ρ²` with `Δ = (y-λ)/N^α`, `ρ = R/N^{1-α}`; the
    /// expansion is `log L ≈ -ΣΔρ - ΣΔ²ρ²/2`.
    Sir { delta_rho: f64, quad: f64 },
}

impl Diagnostics {
    pub fn reduced_log(&self) -> f64 {
        match *self {
            Diagnostics::Sis { a, b, c } => -a - b - c / 2.0,
            Diagnostics::Sir { delta_rho, quad } => -delta_rho - quad / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik {
    pub log_l: f64,
    pub diagnostics: Diagnostics,
    /// Factors different from one.
    pub nontrivial: u64,
    /// Factors in which `κ` had to be clamped at one.
    pub clamps: u64,
}

impl LogLik {
    /// `log L` minus its reduced expansion.
    pub fn residual(&self) -> f64 {
        self.log_l - self.diagnostics.reduced_log()
    }
}

/// Streaming evaluation of `log L` over successive generations.
#[derive(Debug, Clone)]
pub struct LikelihoodAccumulator {
    cfg: LikelihoodConfig,
    t: usize,
    prev: Option<ParticleField>,
    recovered: ParticleField,
    log: CompensatedSum,
    d1: CompensatedSum,
    d2: CompensatedSum,
    d3: CompensatedSum,
    nontrivial: u64,
    clamps: u64,
    impossible: Option<(usize, i64)>,
}

impl LikelihoodAccumulator {
    pub fn new(cfg: LikelihoodConfig) -> Result<Self> {
        if cfg.n == 0 {
            return invalid("village size must be positive");
        }
        Ok(Self {
            cfg,
            t: 0,
            prev: None,
            recovered: ParticleField::new(),
            log: CompensatedSum::default(),
            d1: CompensatedSum::default(),
            d2: CompensatedSum::default(),
            d3: CompensatedSum::default(),
            nontrivial: 0,
            clamps: 0,
            impossible: None,
        })
    }

    fn kappa(&mut self, y: u64, r: u64) -> f64 {
        let k = kappa(self.cfg.variant, y, r, self.cfg.n);
        if k > 1.0 {
            self.clamps += 1;
            1.0
        } else {
            k
        }
    }

    /// Feed generation `t` (starting from the initial state).
    pub fn push(&mut self, field: &ParticleField) {
        let Some(prev) = self.prev.take() else {
            self.recovered = field.clone();
            self.prev = Some(field.clone());
            return;
        };
        self.t += 1;
        let mut sites = prev.neighbourhood();
        sites.extend(field.iter().map(|(x, _)| x));
        sites.sort_unstable();
        sites.dedup();
        let n = self.cfg.n as f64;
        for x in sites {
            let y = field.get(x);
            let lam = lambda(&prev, x);
            if lam == 0.0 {
                if y > 0 && self.impossible.is_none() {
                    self.impossible = Some((self.t, x));
                }
                continue;
            }
            let r = self.recovered.get(x);
            let (ky, ky1) = (self.kappa(y, r), self.kappa(y + 1, r));
            let f = (1.0 - ky) + lam / (y as f64 + 1.0) * ky1;
            if f != 1.0 {
                self.nontrivial += 1;
            }
            self.log.add(f.ln());
            let (yf, d) = (y as f64, y as f64 - lam);
            match self.cfg.variant {
                Variant::Sis => {
                    self.d1.add(lam * d / (2.0 * n));
                    self.d2.add(lam * lam * d * d / (8.0 * n * n));
                    self.d3.add(d * d / n - yf / n);
                }
                Variant::Sir => {
                    let delta = d / n.powf(self.cfg.alpha);
                    let rho = r as f64 / n.powf(1.0 - self.cfg.alpha);
                    self.d1.add(delta * rho);
                    self.d2.add(delta * delta * rho * rho);
                }
            }
        }
        for (x, c) in field.iter() {
            self.recovered.add(x, c);
        }
        self.prev = Some(field.clone());
    }

    pub fn finish(&self) -> Result<LogLik> {
        if let Some((generation, site)) = self.impossible {
            return Err(Error::ImpossibleTransition { generation, site });
        }
        let diagnostics = match self.cfg.variant {
            Variant::Sis => Diagnostics::Sis {
                a: self.d1.value(),
                b: self.d2.value(),
                c: self.d3.value(),
            },
            Variant::Sir => Diagnostics::Sir {
                delta_rho: self.d1.value(),
                quad: self.d2.value(),
            },
        };
        Ok(LogLik {
            log_l: self.log.value(),
            diagnostics,
            nontrivial: self.nontrivial,
            clamps: self.clamps,
        })
    }
}

/// `log L` of a recorded path `Y_0, Y_1, …`. Include the first empty
/// generation after extinction: it still carries nontrivial factors.
pub fn loglik(generations: &[ParticleField], cfg: LikelihoodConfig) -> Result<LogLik> {
    let mut acc = LikelihoodAccumulator::new(cfg)?;
    for g in generations {
        acc.push(g);
    }
    acc.finish()
}

/// CSV header for [`write_csv_row`].
pub fn csv_header(variant: Variant) -> &'static str {
    match variant {
        Variant::Sis => "replicate,logL,A_sum,B_sum,C_sum",
        Variant::Sir => "replicate,logL,delta_rho_sum,quad_sum",
    }
}

pub fn write_csv_row(w: &mut impl Write, replicate: u64, l: &LogLik) -> io::Result<()> {
    match l.diagnostics {
        Diagnostics::Sis { a, b, c } => writeln!(w, "{replicate},{},{a},{b},{c}", l.log_l),
        Diagnostics::Sir { delta_rho, quad } => {
            writeln!(w, "{replicate},{},{delta_rho},{quad}", l.log_l)
        }
    }
}
