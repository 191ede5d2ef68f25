//! Distributional checks that span several modules.

use critepi::coupling::{coupling_run_with, threshold_initial, ColoredField, CouplingConfig, CouplingKind};
use critepi::envelope::{brw_run_with, ParticleField};
use critepi::epidemic::{epidemic_run, EpidemicParams, EpidemicState, Variant};
use critepi::graphs::{build_graph, graph_epidemic};
use critepi::offspring::OffspringLaw;
use critepi::stats::{ks_two_sample, MeanSe};
use critepi::Key;
use std::ops::ControlFlow;

const CAP: u64 = 100_000;

fn envelope_sizes(reps: u64, seed: u64) -> Vec<f64> {
    let root = Key::root(seed);
    (0..reps)
        .map(|r| {
            let mut total = 0;
            brw_run_with(ParticleField::point(0, 1), OffspringLaw::PoissonLimit, root.replicate(r), usize::MAX, |_, f| {
                total += f.total();
                if total >= CAP {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            });
            total.min(CAP) as f64
        })
        .collect()
}

#[test]
fn sis_size_law_approaches_poisson_envelope() {
    let params = EpidemicParams::new(1000, Variant::Sis).unwrap();
    let init = EpidemicState::from_infected(1000, &ParticleField::point(0, 1)).unwrap();
    let root = Key::root(501);
    let epi: Vec<f64> = (0..10_000)
        .map(|r| {
            let run = epidemic_run(init.clone(), &params, root.replicate(r), 1_000_000).unwrap();
            run.summary.size.min(CAP) as f64
        })
        .collect();
    let env = envelope_sizes(10_000, 502);
    let d = ks_two_sample(&epi, &env);
    assert!(d <= 0.02, "KS {d}");
}

#[test]
fn graph_and_direct_sir_sizes_agree_in_law() {
    let n = 50;
    let length = 201;
    let graph_root = Key::root(503);
    let graph_sizes: Vec<f64> = (0..10_000)
        .map(|r| {
            let g = build_graph(n, length, None, Variant::Sir, 0, graph_root.replicate(r)).unwrap();
            let run = graph_epidemic(&g, &[(length / 2, 0)]).unwrap();
            assert!(run.generations.iter().flatten().all(|&(x, _)| x > 0 && x < length - 1));
            run.total_size() as f64
        })
        .collect();
    let params = EpidemicParams::new(n, Variant::Sir).unwrap();
    let init = EpidemicState::from_infected(n, &ParticleField::point(0, 1)).unwrap();
    let direct_root = Key::root(504);
    let direct: Vec<f64> = (0..10_000)
        .map(|r| epidemic_run(init.clone(), &params, direct_root.replicate(r), 100_000).unwrap().summary.size as f64)
        .collect();
    let d = ks_two_sample(&graph_sizes, &direct);
    assert!(d <= 0.02, "KS {d}");
}

#[test]
fn sub_threshold_sir_size_tracks_envelope() {
    let n = 10_000;
    let alpha = 1.0 / 3.0;
    let cfg = CouplingConfig::poisson(n, Variant::Sir).unwrap();
    let init = ColoredField::initial(&threshold_initial(n, alpha).unwrap(), n).unwrap();
    let horizon = (n as f64).powf(alpha).ceil() as usize;
    let root = Key::root(505);
    let ratio: MeanSe = (0..1000)
        .map(|r| {
            let s = coupling_run_with(init.clone(), &cfg, CouplingKind::Standard, root.replicate(r), horizon, |_, _| {
                ControlFlow::Continue(())
            });
            s.red_size as f64 / s.envelope_size as f64
        })
        .collect();
    assert!(ratio.mean() >= 0.95 && ratio.mean() <= 1.0, "ratio {} ± {}", ratio.mean(), ratio.se());
}
