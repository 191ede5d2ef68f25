//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p critepi --test acceptance`; pass criterion
//! numbers as arguments to run a subset. Failures make the process exit
//! nonzero only when `CRITEPI_ACCEPTANCE_STRICT` is set.

use critepi::coupling::{coupling_run_with, threshold_initial, ColoredField, CouplingConfig, CouplingKind};
use critepi::envelope::{brw_run_with, ParticleField, RunEnd};
use critepi::epidemic::{CoinScheme, EpidemicParams, LabeledEpidemic, Variant};
use critepi::extent::{exit_probability, solve_exit_ode, ENVELOPE_C};
use critepi::graphs::{build_graph, graph_epidemic, Vertex};
use critepi::likelihood::{LikelihoodAccumulator, LikelihoodConfig};
use critepi::meanfield::{driftless_passage_cdf, reedfrost_run, wiener_passage, WienerDrift};
use critepi::moments::{kernel_power, moment, moment_exact, mc_moment_table};
use critepi::offspring::OffspringLaw;
use critepi::stats::{ks_one_sample, ks_two_sample, MeanSe};
use critepi::Key;
use std::ops::ControlFlow;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criticality() -> Outcome {
    let root = Key::root(101);
    let (mut z8, mut z32) = (MeanSe::new(), MeanSe::new());
    for r in 0..100_000 {
        let (mut a, mut b) = (0.0, 0.0);
        brw_run_with(ParticleField::point(0, 64), OffspringLaw::PoissonLimit, root.replicate(r), 32, |t, f| {
            match t {
                8 => a = f.total() as f64 / 64.0,
                32 => b = f.total() as f64 / 64.0,
                _ => {}
            }
            ControlFlow::Continue(())
        });
        z8.push(a);
        z32.push(b);
    }
    outcome(
        z8.z_score(1.0) <= 3.0 && z32.z_score(1.0) <= 3.0,
        format!(
            "E[Z8/Z0] = {:.4} ± {:.4}, E[Z32/Z0] = {:.4} ± {:.4}",
            z8.mean(),
            z8.se(),
            z32.mean(),
            z32.se()
        ),
    )
}

fn survival() -> Outcome {
    let reps = 1_000_000u64;
    let mut q = vec![0.0f64];
    for k in 0..64 {
        q.push((q[k] - 1.0).exp());
    }
    let root = Key::root(102);
    let (mut s16, mut s64) = (0u64, 0u64);
    for r in 0..reps {
        brw_run_with(ParticleField::point(0, 1), OffspringLaw::PoissonLimit, root.replicate(r), 64, |t, f| {
            if !f.is_empty() {
                s16 += u64::from(t == 16);
                s64 += u64::from(t == 64);
            }
            ControlFlow::Continue(())
        });
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, hits) in [(16usize, s16), (64, s64)] {
        let exact = 1.0 - q[n];
        let p = hits as f64 / reps as f64;
        let se = (exact * (1.0 - exact) / reps as f64).sqrt();
        pass &= (p - exact).abs() <= 3.0 * se;
        parts.push(format!("P(Z{n}>0) = {p:.5} vs {exact:.5} (se {se:.5})"));
    }
    outcome(pass, parts.join(", "))
}

fn moments() -> Outcome {
    let law = OffspringLaw::PoissonLimit;
    let xs = [0i64, 1, 2, 3];
    let mc = mc_moment_table(6, &xs, 3, law, 1_000_000, Key::root(103));
    let mut worst: f64 = 0.0;
    let mut exact_first = true;
    for n in 1..=6 {
        for (i, &x) in xs.iter().enumerate() {
            exact_first &= moment_exact(n, x, 1, law).unwrap() == kernel_power(n, x);
            for m in 1..=3u32 {
                let exact = moment(n, x, m, law).unwrap();
                let est = mc[n][i][m as usize - 1];
                // moments vanishing exactly (x > n) have zero MC variance
                let z = if est.se() == 0.0 {
                    if est.mean() == exact { 0.0 } else { f64::INFINITY }
                } else {
                    est.z_score(exact)
                };
                worst = worst.max(z);
            }
        }
    }
    outcome(
        worst <= 4.0 && exact_first,
        format!("max |z| over 72 cells = {worst:.2}, first moments exact: {exact_first}"),
    )
}

fn likelihood() -> Outcome {
    let horizon = 100;
    let mut pass = true;
    let mut parts = Vec::new();
    for (variant, seed) in [(Variant::Sis, 104u64), (Variant::Sir, 204)] {
        let cfg = LikelihoodConfig {
            n: 50,
            variant,
            alpha: (16f64).ln() / (50f64).ln(),
        };
        let root = Key::root(seed);
        let mut acc = MeanSe::new();
        for r in 0..100_000 {
            let mut lik = LikelihoodAccumulator::new(cfg).unwrap();
            brw_run_with(ParticleField::point(0, 16), OffspringLaw::PoissonLimit, root.replicate(r), horizon, |_, f| {
                lik.push(f);
                ControlFlow::Continue(())
            });
            acc.push(lik.finish().unwrap().log_l.exp());
        }
        pass &= acc.z_score(1.0) <= 3.0;
        parts.push(format!("{variant}: E[L] = {:.4} ± {:.4}", acc.mean(), acc.se()));
    }
    outcome(pass, parts.join(", "))
}

/// Mean total standard-coupling attrition over `⌈N^α⌉` generations.
fn mean_attrition(n: u32, alpha: f64, variant: Variant, reps: u64, seed: u64) -> (MeanSe, usize) {
    let cfg = CouplingConfig::poisson(n, variant).unwrap();
    let init = ColoredField::initial(&threshold_initial(n, alpha).unwrap(), n).unwrap();
    let horizon = (n as f64).powf(alpha).ceil() as usize;
    let root = Key::root(seed);
    let mut acc = MeanSe::new();
    for r in 0..reps {
        let s = coupling_run_with(init.clone(), &cfg, CouplingKind::Standard, root.replicate(r), horizon, |_, f| {
            if f.red.is_empty() {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        acc.push(s.attrition as f64);
    }
    (acc, horizon)
}

fn threshold(variant: Variant, at: f64, below: f64, seed: u64) -> Outcome {
    let reps = 1000;
    let (mut per_gen, mut ratio) = (Vec::new(), Vec::new());
    for (i, n) in [1000u32, 10_000].into_iter().enumerate() {
        let (a, h) = mean_attrition(n, at, variant, reps, seed + i as u64);
        per_gen.push((a.mean() / h as f64, a.se() / h as f64));
        let (b, _) = mean_attrition(n, below, variant, reps, seed + 10 + i as u64);
        let scale = (n as f64).powf(below);
        ratio.push((b.mean() / scale, b.se() / scale));
    }
    let band = per_gen[0].0.max(per_gen[1].0) / per_gen[0].0.min(per_gen[1].0);
    let drop = ratio[0].0 / ratio[1].0;
    outcome(
        band <= 2.0 && drop >= 3.0,
        format!(
            "α={at:.3}: per-generation attrition {:.3}±{:.3} / {:.3}±{:.3} (factor {band:.2}); \
             α={below:.3}: attrition/N^α {:.4}±{:.4} / {:.4}±{:.4} (drop {drop:.2}x)",
            per_gen[0].0, per_gen[0].1, per_gen[1].0, per_gen[1].1, ratio[0].0, ratio[0].1, ratio[1].0, ratio[1].1
        ),
    )
}

fn meanfield() -> Outcome {
    let n = 10_000u64;
    let reps = 10_000u64;
    let root = Key::root(107);
    let mut pass = true;
    let mut parts = Vec::new();
    // drift case, J0 = N^{1/3}
    let j0 = (n as f64).powf(1.0 / 3.0).ceil() as u64;
    let b = j0 as f64 / (n as f64).powf(1.0 / 3.0);
    let sizes: Vec<f64> = (0..reps)
        .map(|r| reedfrost_run(n, j0, root.push(1).replicate(r)).unwrap().size as f64 / (n as f64).powf(2.0 / 3.0))
        .collect();
    let taus: Vec<f64> = (0..reps)
        .map(|r| wiener_passage(b, WienerDrift::LinearT, 1e-4, 50.0, root.push(2).replicate(r)).unwrap().time)
        .collect();
    let d1 = ks_two_sample(&sizes, &taus);
    pass &= d1 <= 0.06;
    parts.push(format!("J0={j0}: KS vs drifted passage {d1:.4}"));
    // driftless case, J0 = N^{1/5}
    let j0 = (n as f64).powf(0.2).ceil() as u64;
    let b = j0 as f64 / (n as f64).powf(0.2);
    let sizes: Vec<f64> = (0..reps)
        .map(|r| reedfrost_run(n, j0, root.push(3).replicate(r)).unwrap().size as f64 / (n as f64).powf(0.4))
        .collect();
    let d2 = ks_one_sample(&sizes, |t| driftless_passage_cdf(b, t));
    pass &= d2 <= 0.06;
    // same sizes against the passage law that keeps the depletion drift
    // εt²/2, ε = N^{-2/5}; by Brownian scaling this is the drifted law at
    // level J0/N^{1/3} on the N^{2/3} time scale
    let nf = n as f64;
    let drifted: Vec<f64> = (0..reps)
        .map(|r| {
            let t = wiener_passage(j0 as f64 / nf.powf(1.0 / 3.0), WienerDrift::LinearT, 1e-5, 50.0, root.push(4).replicate(r))
                .unwrap()
                .time;
            t * nf.powf(2.0 / 3.0) / nf.powf(0.4)
        })
        .collect();
    let d3 = ks_two_sample(&sizes, &drifted);
    parts.push(format!(
        "J0={j0}: KS vs driftless passage law {d2:.4} (vs passage with depletion drift {d3:.4}, not gated)"
    ));
    outcome(pass, parts.join(", "))
}

/// `∫_1^∞ ds/√(s³-1)` via `s = 1 + tan²θ` and composite Simpson.
fn first_integral_constant() -> f64 {
    let f = |theta: f64| {
        let w: f64 = theta.tan();
        2.0 * (1.0 + w * w) / (3.0 + 3.0 * w * w + w.powi(4)).sqrt()
    };
    let (a, b, n) = (0.0, std::f64::consts::FRAC_PI_2 - 1e-12, 200_000);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn extent() -> Outcome {
    let c = ENVELOPE_C;
    let mut pass = true;
    let mut parts = Vec::new();
    // ODE against the first integral at the midpoint
    let i = first_integral_constant();
    let mut worst: f64 = 0.0;
    for a in [1.25, 1.75, 2.5] {
        let p = solve_exit_ode(a, c).unwrap();
        let u0 = 3.0 / (2.0 * c) * (2.0 * i / a).powi(2);
        worst = worst.max(((p.u_mid - u0) / u0).abs());
    }
    pass &= worst <= 1e-6;
    parts.push(format!("ODE vs quadrature rel. err {worst:.1e}"));
    // half-line limit
    let far = solve_exit_ode(200.0, c).unwrap();
    let mut half: f64 = 0.0;
    for x in [0.5, 1.0, 2.0] {
        let exact = 6.0 / (c * x * x);
        half = half.max(((far.value(x).unwrap() - exact) / exact).abs());
    }
    pass &= half <= 1e-4;
    parts.push(format!("half-line rel. err {half:.1e}"));
    // envelope Monte Carlo at k = 256
    let k = 256.0f64;
    let sk = k.sqrt();
    let count = (0.2 * k).ceil() as u64;
    let reps = 10_000;
    for (j, a) in [3.5f64, 4.0, 4.5].into_iter().enumerate() {
        let site = (0.5 * sk * a).floor() as i64;
        let right = (sk * a).round() as i64;
        let pred = exit_probability(&[(site as f64 / sk, count as f64 / k)], a, c)
            .unwrap()
            .probability;
        let root = Key::root(108 + j as u64);
        let mut stay = 0u64;
        let mut truncated = 0u64;
        for r in 0..reps {
            let end = brw_run_with(
                ParticleField::point(site, count),
                OffspringLaw::PoissonLimit,
                root.replicate(r),
                1_000_000,
                |_, f| match f.support() {
                    Some((lo, hi)) if lo <= 0 || hi >= right => ControlFlow::Break(()),
                    _ => ControlFlow::Continue(()),
                },
            );
            match end {
                RunEnd::Extinct { .. } => stay += 1,
                RunEnd::Truncated { .. } => truncated += 1,
                RunEnd::Stopped { .. } => {}
            }
        }
        let mc = stay as f64 / reps as f64;
        let ok = (0.2..=0.8).contains(&pred) && (mc - pred).abs() <= 0.05 && truncated == 0;
        pass &= ok;
        parts.push(format!("a={a}: predicted {pred:.4}, MC {mc:.4}"));
    }
    outcome(pass, parts.join(", "))
}

fn percolation() -> Outcome {
    let mut mismatches = 0;
    let mut generations = 0;
    for seed in 0..100u64 {
        let n = 2 + (seed % 19) as u32;
        let length = 5 + (seed * 7 % 46) as i64;
        let rep = Key::root(109).replicate(seed);
        let mid = length / 2;
        let init: Vec<Vertex> = vec![(mid, 0), (mid, n - 1)];
        let g = build_graph(n, length, None, Variant::Sir, 0, rep).unwrap();
        let run = graph_epidemic(&g, &init).unwrap();
        let params = EpidemicParams::new(n, Variant::Sir).unwrap();
        let lab = LabeledEpidemic::from_sets(params, Some((0, length - 1)), init)
            .unwrap()
            .run(CoinScheme::ByPair, rep, usize::MAX);
        let reference: Vec<Vec<Vertex>> = lab.iter().map(|e| e.infected_set()).collect();
        generations += reference.len();
        mismatches += usize::from(run.generations != reference);
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatching seeds of 100 ({generations} generations compared)"),
    )
}

fn binomial_poisson() -> Outcome {
    let cap = 100_000u64;
    let sizes = |law: OffspringLaw, seed: u64| -> Vec<f64> {
        let root = Key::root(seed);
        (0..10_000)
            .map(|r| {
                let mut total = 0u64;
                brw_run_with(ParticleField::point(0, 1), law, root.replicate(r), usize::MAX, |_, f| {
                    total += f.total();
                    if total >= cap {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    }
                });
                total.min(cap) as f64
            })
            .collect()
    };
    let a = sizes(OffspringLaw::village(1000).unwrap(), 110);
    let b = sizes(OffspringLaw::PoissonLimit, 210);
    let d = ks_two_sample(&a, &b);
    outcome(d <= 0.02, format!("KS = {d:.4} (sizes censored at {cap})"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "criticality / martingale", criticality),
        (2, "survival vs pgf iteration", survival),
        (3, "moment recursion vs Monte Carlo", moments),
        (4, "likelihood normalisation", likelihood),
        (5, "SIS threshold", || threshold(Variant::Sis, 2.0 / 3.0, 1.0 / 3.0, 105)),
        (6, "SIR threshold", || threshold(Variant::Sir, 2.0 / 5.0, 1.0 / 5.0, 106)),
        (7, "mean-field SIR passage laws", meanfield),
        (8, "exit probability", extent),
        (9, "percolation equivalence", percolation),
        (10, "binomial vs Poisson envelope", binomial_poisson),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {id:>2} {}: {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var_os("CRITEPI_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
