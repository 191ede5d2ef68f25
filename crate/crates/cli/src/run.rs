//! Execute an experiment and write its CSV, summary and manifest files.

use crate::config::{CouplingSpec, ExperimentConfig, Kind, LawSpec, Manifest, Reference};
use crate::init::init_profile;
use crate::CliError;
use critepi::coupling::{self, attrition_series, coupling_run, coupling_run_with, ColoredField, CouplingConfig, CouplingKind};
use critepi::envelope::{self, brw_run, brw_summary, envelope_stats, Reproduction};
use critepi::epidemic::{self, epidemic_run_with, EpidemicParams, EpidemicState, Variant};
use critepi::extent::{exit_probability, solve_exit_ode, weierstrass_profile};
use critepi::graphs::{build_graph, graph_epidemic, Vertex};
use critepi::likelihood::{self, LikelihoodAccumulator, LikelihoodConfig};
use critepi::meanfield::{driftless_passage_cdf, reedfrost_run, sis_meanfield_run, wiener_passage, WienerDrift};
use critepi::moments::{self, mc_moment_table, moment};
use critepi::offspring::OffspringLaw;
use critepi::stats::{ks_one_sample, ks_two_sample, MeanSe};
use critepi::Key;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

/// What a run produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
    /// Replicates that ended in an error (listed in `errors.csv`).
    pub failures: usize,
}

struct Sink<'a> {
    dir: &'a Path,
    outputs: Vec<PathBuf>,
}

impl Sink<'_> {
    fn write(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)?;
        self.outputs.push(path);
        Ok(())
    }
}

fn stat(acc: &MeanSe, unit: &str) -> Value {
    json!({ "mean": acc.mean(), "se": acc.se(), "count": acc.count(), "unit": unit })
}

/// Evaluate `f` on every replicate in parallel; results keep replicate order.
fn replicates<T: Send>(
    reps: u64,
    root: Key,
    f: impl Fn(Key) -> critepi::Result<T> + Sync,
) -> Vec<critepi::Result<T>> {
    (0..reps).into_par_iter().map(|r| f(root.replicate(r))).collect()
}

/// Split results into successes and `replicate,error` rows.
fn partition<T>(results: Vec<critepi::Result<T>>) -> (Vec<(u64, T)>, String) {
    let mut ok = Vec::new();
    let mut errors = String::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => ok.push((r as u64, v)),
            Err(e) => {
                let _ = writeln!(errors, "{r},\"{}\"", e.to_string().replace('"', "'"));
            }
        }
    }
    (ok, errors)
}

fn reproduction(cfg: &ExperimentConfig) -> Result<Reproduction, CliError> {
    Ok(match cfg.law {
        LawSpec::Poisson => OffspringLaw::PoissonLimit.into(),
        LawSpec::Village => OffspringLaw::village(cfg.n)?.into(),
        LawSpec::PairCoins => Reproduction::PairCoins { n: cfg.n },
    })
}

fn offspring_law(cfg: &ExperimentConfig) -> Result<OffspringLaw, CliError> {
    match cfg.law {
        LawSpec::Poisson => Ok(OffspringLaw::PoissonLimit),
        LawSpec::Village => Ok(OffspringLaw::village(cfg.n)?),
        LawSpec::PairCoins => Err(CliError::Config("pair-coins has no closed-form law here; use village".into())),
    }
}

/// Run `kind` under `cfg`, writing into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, kind: Kind, out: &Path) -> Result<Report, CliError> {
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(CliError::Config(format!("config is for '{}', not '{}'", k.name(), kind.name())));
        }
    }
    cfg.validate()?;
    let cfg = ExperimentConfig { kind: Some(kind), ..cfg.clone() };
    std::fs::create_dir_all(out)?;
    let mut sink = Sink { dir: out, outputs: Vec::new() };
    let root = Key::root(cfg.seed);
    let (summary, errors) = match kind {
        Kind::Envelope => run_envelope(&cfg, root, &mut sink)?,
        Kind::Epidemic => run_epidemic(&cfg, root, &mut sink)?,
        Kind::Coupling => run_coupling(&cfg, root, &mut sink)?,
        Kind::Likelihood => run_likelihood(&cfg, root, &mut sink)?,
        Kind::Meanfield => run_meanfield(&cfg, root, &mut sink)?,
        Kind::Moments => (run_moments(&cfg, root, &mut sink)?, String::new()),
        Kind::Extent => (run_extent(&cfg, &mut sink)?, String::new()),
        Kind::Graphs => run_graphs(&cfg, root, &mut sink)?,
        Kind::ThresholdSweep => (run_sweep(&cfg, root, &mut sink)?, String::new()),
    };
    let failures = errors.lines().count();
    if failures > 0 {
        sink.write("errors.csv", &format!("replicate,error\n{errors}"))?;
    }
    let summary = json!({ "kind": kind.name(), "seed": cfg.seed, "failures": failures, "results": summary });
    sink.write("summary.json", &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
    let outputs: Vec<String> = sink
        .outputs
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .chain(["manifest.json".to_string()])
        .collect();
    let manifest = Manifest {
        program: "critepi".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind,
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        config: cfg.clone(),
        outputs,
    };
    sink.write("manifest.json", &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    Ok(Report {
        outputs: sink.outputs,
        summary,
        failures,
    })
}

type Outcome = Result<(Value, String), CliError>;

fn run_envelope(cfg: &ExperimentConfig, root: Key, sink: &mut Sink) -> Outcome {
    let init = init_profile(&cfg.init, cfg.n)?;
    let repro = reproduction(cfg)?;
    let cap = cfg.generation_cap();
    let results = replicates(cfg.replicates, root, |rep| {
        Ok(if cfg.trajectories {
            let traj = brw_run(init.clone(), repro, rep, cap)?;
            let mut csv = Vec::new();
            envelope::write_csv(&mut csv, 0, &traj, false).expect("in-memory write");
            (envelope_stats(&traj), Some(traj_rows(csv)))
        } else {
            (brw_summary(init.clone(), repro, rep, cap), None)
        })
    });
    let (ok, errors) = partition(results);
    let mut rows = String::from("replicate,duration,total_progeny,extent,max_site_count,truncated\n");
    let mut traj = String::from("replicate,t,x,count\n");
    let (mut duration, mut progeny, mut survived) = (MeanSe::new(), MeanSe::new(), 0u64);
    for (r, (s, csv)) in &ok {
        let _ = writeln!(
            rows,
            "{r},{},{},{},{},{}",
            s.duration, s.total_progeny, s.extent, s.max_site_count, s.lower_bound
        );
        duration.push(s.duration as f64);
        progeny.push(s.total_progeny as f64);
        survived += u64::from(s.lower_bound);
        if let Some(csv) = csv {
            push_replicate_rows(&mut traj, *r, csv);
        }
    }
    sink.write("replicates.csv", &rows)?;
    if cfg.trajectories {
        sink.write("trajectories.csv", &traj)?;
    }
    Ok((
        json!({
            "initial_mass": init.total(),
            "generation_cap": cap,
            "duration": stat(&duration, "generations"),
            "total_progeny": stat(&progeny, "particles"),
            "truncated_fraction": survived as f64 / ok.len().max(1) as f64,
        }),
        errors,
    ))
}

/// Strip the placeholder replicate column written by the library helpers.
fn traj_rows(csv: Vec<u8>) -> String {
    String::from_utf8(csv)
        .expect("utf8")
        .lines()
        .map(|l| l.split_once(',').map_or(l, |(_, rest)| rest).to_string() + "\n")
        .collect()
}

fn push_replicate_rows(out: &mut String, r: u64, rows: &str) {
    for line in rows.lines() {
        let _ = writeln!(out, "{r},{line}");
    }
}

fn run_epidemic(cfg: &ExperimentConfig, root: Key, sink: &mut Sink) -> Outcome {
    let params = EpidemicParams::new(cfg.n, cfg.variant.into())?;
    let init = EpidemicState::from_infected(cfg.n, &init_profile(&cfg.init, cfg.n)?)?;
    let cap = cfg.generation_cap();
    let results = replicates(cfg.replicates, root, |rep| {
        let mut traj = Vec::new();
        let s = epidemic_run_with(init.clone(), &params, rep, cap, |_, st| {
            if cfg.trajectories {
                traj.push(st.clone());
            }
            ControlFlow::Continue(())
        })?;
        let csv = cfg.trajectories.then(|| {
            let mut csv = Vec::new();
            epidemic::write_csv(&mut csv, 0, &traj, false).expect("in-memory write");
            traj_rows(csv)
        });
        Ok((s, csv))
    });
    let (ok, errors) = partition(results);
    let mut rows = String::from("replicate,duration,size,extent,truncated\n");
    let mut traj = String::from("replicate,t,x,I,R\n");
    let (mut duration, mut size) = (MeanSe::new(), MeanSe::new());
    for (r, (s, csv)) in &ok {
        let _ = writeln!(rows, "{r},{},{},{},{}", s.duration, s.size, s.extent, s.truncated);
        duration.push(s.duration as f64);
        size.push(s.size as f64);
        if let Some(csv) = csv {
            push_replicate_rows(&mut traj, *r, csv);
        }
    }
    sink.write("replicates.csv", &rows)?;
    if cfg.trajectories {
        sink.write("trajectories.csv", &traj)?;
    }
    Ok((
        json!({
            "variant": params.variant.to_string(),
            "generation_cap": cap,
            "duration": stat(&duration, "generations"),
            "size": stat(&size, "individuals"),
        }),
        errors,
    ))
}

fn coupling_kind(cfg: &ExperimentConfig) -> CouplingKind {
    match cfg.coupling {
        CouplingSpec::Standard => CouplingKind::Standard,
        CouplingSpec::Modified => CouplingKind::Modified,
    }
}

fn run_coupling(cfg: &ExperimentConfig, root: Key, sink: &mut Sink) -> Outcome {
    let ccfg = CouplingConfig::new(cfg.n, cfg.variant.into(), reproduction(cfg)?)?;
    let init = ColoredField::initial(&init_profile(&cfg.init, cfg.n)?, cfg.n)?;
    let kind = coupling_kind(cfg);
    let cap = cfg.generation_cap();
    let results = replicates(cfg.replicates, root, |rep| {
        Ok(if cfg.trajectories {
            let (traj, s) = coupling_run(init.clone(), &ccfg, kind, rep, cap);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            coupling::write_csv(&mut a, 0, &traj, false).expect("in-memory write");
            coupling::write_attrition_csv(&mut b, 0, &attrition_series(&traj), false).expect("in-memory write");
            (s, Some((traj_rows(a), traj_rows(b))))
        } else {
            (coupling_run_with(init.clone(), &ccfg, kind, rep, cap, |_, _| ControlFlow::Continue(())), None)
        })
    });
    let (ok, errors) = partition(results);
    let mut rows =
        String::from("replicate,envelope_duration,red_duration,envelope_size,red_size,attrition,clamps,truncated\n");
    let mut traj = String::from("replicate,t,x,red,blue\n");
    let mut attr = String::from("replicate,t,blue_from_red\n");
    let (mut attrition, mut ratio) = (MeanSe::new(), MeanSe::new());
    for (r, (s, csv)) in &ok {
        let _ = writeln!(
            rows,
            "{r},{},{},{},{},{},{},{}",
            s.envelope_duration, s.red_duration, s.envelope_size, s.red_size, s.attrition, s.clamps, s.truncated
        );
        attrition.push(s.attrition as f64);
        if s.envelope_size > 0 {
            ratio.push(s.red_size as f64 / s.envelope_size as f64);
        }
        if let Some((t, a)) = csv {
            push_replicate_rows(&mut traj, *r, t);
            push_replicate_rows(&mut attr, *r, a);
        }
    }
    sink.write("replicates.csv", &rows)?;
    if cfg.trajectories {
        sink.write("trajectories.csv", &traj)?;
        sink.write("attrition.csv", &attr)?;
    }
    Ok((
        json!({
            "coupling": format!("{kind:?}").to_lowercase(),
            "generation_cap": cap,
            "attrition": stat(&attrition, "particles"),
            "red_to_envelope_size": stat(&ratio, "ratio"),
        }),
        errors,
    ))
}

fn run_likelihood(cfg: &ExperimentConfig, root: Key, sink: &mut Sink) -> Outcome {
    if cfg.law != LawSpec::Poisson {
        return Err(CliError::Config("likelihood ratios are taken against the Poisson envelope".into()));
    }
    let init = init_profile(&cfg.init, cfg.n)?;
    let variant: Variant = cfg.variant.into();
    let alpha = cfg
        .alpha
        .unwrap_or_else(|| ((init.total().max(2)) as f64).ln() / (cfg.n.max(2) as f64).ln());
    let lcfg = LikelihoodConfig { n: cfg.n, variant, alpha };
    let cap = cfg.generation_cap();
    let results = replicates(cfg.replicates, root, |rep| {
        let mut acc = LikelihoodAccumulator::new(lcfg)?;
        envelope::brw_run_with(init.clone(), OffspringLaw::PoissonLimit, rep, cap, |_, f| {
            acc.push(f);
            ControlFlow::Continue(())
        });
        acc.finish()
    });
    let (ok, errors) = partition(results);
    let mut rows = String::from(likelihood::csv_header(variant)) + "\n";
    let (mut lr, mut residual) = (MeanSe::new(), MeanSe::new());
    for (r, l) in &ok {
        let mut buf = Vec::new();
        likelihood::write_csv_row(&mut buf, *r, l).expect("in-memory write");
        rows.push_str(&String::from_utf8(buf).expect("utf8"));
        lr.push(l.log_l.exp());
        residual.push(l.residual());
    }
    sink.write("loglik.csv", &rows)?;
    Ok((
        json!({
            "variant": variant.to_string(),
            "alpha": alpha,
            "generation_cap": cap,
            "likelihood_ratio": stat(&lr, "dimensionless"),
            "expansion_residual": stat(&residual, "log"),
        }),
        errors,
    ))
}

fn run_meanfield(cfg: &ExperimentConfig, root: Key, sink: &mut Sink) -> Outcome {
    let n = cfg.n as u64;
    let nf = n as f64;
    let alpha = cfg.alpha.unwrap_or(1.0 / 3.0);
    let j0 = cfg.j0.unwrap_or_else(|| nf.powf(alpha).ceil() as u64);
    let variant: Variant = cfg.variant.into();
    let cap = cfg.generation_cap();
    let results = replicates(cfg.replicates, root.push(1), |rep| match variant {
        Variant::Sir => reedfrost_run(n, j0, rep),
        Variant::Sis => sis_meanfield_run(n, j0, rep, cap),
    });
    let (ok, errors) = partition(results);
    let mut rows = String::from("replicate,size,duration,truncated\n");
    let (mut size, mut duration) = (MeanSe::new(), MeanSe::new());
    for (r, run) in &ok {
        let _ = writeln!(rows, "{r},{},{},{}", run.size, run.duration, run.truncated);
        size.push(run.size as f64);
        duration.push(run.duration as f64);
    }
    sink.write("runs.csv", &rows)?;
    let mut summary = json!({
        "variant": variant.to_string(),
        "j0": j0,
        "size": stat(&size, "individuals"),
        "duration": stat(&duration, "generations"),
    });
    if variant == Variant::Sir && cfg.reference != Reference::None {
        let (level, scale) = match cfg.reference {
            Reference::Drifted => (j0 as f64 / nf.powf(1.0 / 3.0), nf.powf(2.0 / 3.0)),
            _ => {
                let a = (j0 as f64).ln() / nf.ln();
                (j0 as f64 / nf.powf(a), nf.powf(2.0 * a))
            }
        };
        let scaled: Vec<f64> = ok.iter().map(|(_, run)| run.size as f64 / scale).collect();
        let ks = if cfg.reference == Reference::Drifted {
            let taus: Vec<critepi::Result<_>> = replicates(cfg.replicates, root.push(2), |rep| {
                wiener_passage(level, WienerDrift::LinearT, cfg.dt, cfg.horizon, rep)
            });
            let mut csv = String::from("replicate,tau,censored\n");
            let mut times = Vec::new();
            for (r, p) in taus.into_iter().enumerate() {
                let p = p?;
                let _ = writeln!(csv, "{r},{},{}", p.time, p.censored);
                times.push(p.time);
            }
            sink.write("passages.csv", &csv)?;
            ks_two_sample(&scaled, &times)
        } else {
            ks_one_sample(&scaled, |t| driftless_passage_cdf(level, t))
        };
        summary["reference"] = json!({
            "law": format!("{:?}", cfg.reference).to_lowercase(),
            "level": level,
            "size_scale": scale,
            "ks": ks,
        });
    }
    Ok((summary, errors))
}

fn run_moments(cfg: &ExperimentConfig, root: Key, sink: &mut Sink) -> Result<Value, CliError> {
    let law = offspring_law(cfg)?;
    let mc = (cfg.replicates > 0).then(|| mc_moment_table(cfg.n_max, &cfg.xs, cfg.m_max, law, cfg.replicates, root));
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for n in 0..=cfg.n_max {
        for (i, &x) in cfg.xs.iter().enumerate() {
            for m in 1..=cfg.m_max {
                let exact = moment(n, x, m, law)?;
                let (est, se) = match &mc {
                    Some(t) => {
                        let c = t[n][i][m as usize - 1];
                        if c.se() > 0.0 {
                            worst = worst.max(c.z_score(exact));
                        }
                        (c.mean(), c.se())
                    }
                    None => (f64::NAN, f64::NAN),
                };
                rows.push((n, x, m, exact, est, se));
            }
        }
    }
    let mut buf = Vec::new();
    moments::write_csv(&mut buf, &rows, true)?;
    sink.write("moments.csv", &String::from_utf8(buf).expect("utf8"))?;
    Ok(json!({
        "law": format!("{:?}", cfg.law).to_lowercase(),
        "cells": rows.len(),
        "max_abs_z": if mc.is_some() { json!(worst) } else { Value::Null },
    }))
}

/// Exit probability for point masses; also printed by the binary.
pub fn extent_json(a: f64, c: f64, masses: &[(f64, f64)]) -> Result<Value, CliError> {
    let pred = exit_probability(masses, a, c)?;
    let u: Vec<Value> = pred
        .u_values
        .iter()
        .map(|&u| if u.is_finite() { json!(u) } else { Value::Null })
        .collect();
    Ok(json!({ "u_values": u, "probability": pred.probability, "outside": pred.outside }))
}

fn run_extent(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Value, CliError> {
    let result = extent_json(cfg.a, cfg.c, &cfg.masses)?;
    if cfg.grid > 0 {
        let profile = solve_exit_ode(cfg.a, cfg.c)?;
        let mut csv = String::from("x,u_ode,u_weierstrass\n");
        for (x, u) in profile.grid(cfg.grid)? {
            let _ = writeln!(csv, "{x},{u},{}", weierstrass_profile(x, cfg.a, cfg.c)?);
        }
        sink.write("profile.csv", &csv)?;
    }
    Ok(result)
}

fn run_graphs(cfg: &ExperimentConfig, root: Key, sink: &mut Sink) -> Outcome {
    let field = init_profile(&cfg.init, cfg.n)?;
    let mut initial: Vec<Vertex> = Vec::new();
    for (x, c) in field.iter() {
        if !(0..cfg.length).contains(&x) || c > cfg.n as u64 {
            return Err(CliError::Config(format!(
                "initial site {x} with {c} infected does not fit sites 0..{} of size {}",
                cfg.length, cfg.n
            )));
        }
        initial.extend((0..c as u32).map(|j| (x, j)));
    }
    let variant: Variant = cfg.variant.into();
    let cap = cfg.generation_cap();
    let results = replicates(cfg.replicates, root, |rep| {
        let g = build_graph(cfg.n, cfg.length, cfg.p, variant, cap, rep)?;
        graph_epidemic(&g, &initial).map(|run| (g, run))
    });
    let (ok, errors) = partition(results);
    let mut rows = String::from("replicate,size,duration,truncated\n");
    let mut size = MeanSe::new();
    for (r, (_, run)) in &ok {
        let distinct: std::collections::BTreeSet<_> = run.generations.iter().flatten().collect();
        let total = match variant {
            Variant::Sir => distinct.len(),
            Variant::Sis => run.total_size(),
        };
        let duration = run.generations.iter().rposition(|g| !g.is_empty()).unwrap_or(0);
        let _ = writeln!(rows, "{r},{total},{duration},{}", run.truncated);
        size.push(total as f64);
    }
    sink.write("replicates.csv", &rows)?;
    if cfg.trajectories {
        if let Some((_, (g, run))) = ok.first() {
            let mut edges = Vec::new();
            g.write_edges_csv(&mut edges, 0)?;
            sink.write("edges.csv", &String::from_utf8(edges).expect("utf8"))?;
            let mut gens = Vec::new();
            run.write_csv(&mut gens)?;
            sink.write("generations.csv", &String::from_utf8(gens).expect("utf8"))?;
        }
    }
    Ok((
        json!({
            "variant": variant.to_string(),
            "length": cfg.length,
            "p": cfg.p.unwrap_or(1.0 / (3.0 * cfg.n as f64)),
            "size": stat(&size, "individuals"),
        }),
        errors,
    ))
}

fn run_sweep(cfg: &ExperimentConfig, root: Key, sink: &mut Sink) -> Result<Value, CliError> {
    let variant: Variant = cfg.variant.into();
    let alphas = if cfg.alphas.is_empty() {
        match variant {
            Variant::Sis => vec![2.0 / 3.0, 1.0 / 3.0],
            Variant::Sir => vec![2.0 / 5.0, 1.0 / 5.0],
        }
    } else {
        cfg.alphas.clone()
    };
    let kind = coupling_kind(cfg);
    let mut csv = String::from(
        "variant,alpha,n,replicates,horizon,mean_attrition,se,per_generation,per_generation_se,normalized,normalized_se\n",
    );
    let mut cells = Vec::new();
    for (i, &alpha) in alphas.iter().enumerate() {
        for (j, &n) in cfg.ns.iter().enumerate() {
            let ccfg = CouplingConfig::new(n, variant, reproduction(&ExperimentConfig { n, ..cfg.clone() })?)?;
            let init = ColoredField::initial(&coupling::threshold_initial(n, alpha)?, n)?;
            let scale = (n as f64).powf(alpha);
            let horizon = (cfg.horizon_factor * scale).ceil() as usize;
            let cell_root = root.push(i as u64).push(j as u64);
            let attr: Vec<f64> = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| {
                    let s = coupling_run_with(init.clone(), &ccfg, kind, cell_root.replicate(r), horizon, |_, f| {
                        if f.red.is_empty() {
                            ControlFlow::Break(())
                        } else {
                            ControlFlow::Continue(())
                        }
                    });
                    s.attrition as f64
                })
                .collect();
            let acc: MeanSe = attr.into_iter().collect();
            let h = horizon as f64;
            let _ = writeln!(
                csv,
                "{variant},{alpha},{n},{},{horizon},{},{},{},{},{},{}",
                cfg.replicates,
                acc.mean(),
                acc.se(),
                acc.mean() / h,
                acc.se() / h,
                acc.mean() / scale,
                acc.se() / scale
            );
            cells.push(json!({
                "alpha": alpha,
                "n": n,
                "horizon": horizon,
                "attrition": stat(&acc, "particles"),
                "per_generation": acc.mean() / h,
                "normalized": acc.mean() / scale,
            }));
        }
    }
    sink.write("sweep.csv", &csv)?;
    Ok(json!({ "variant": variant.to_string(), "coupling": format!("{kind:?}").to_lowercase(), "cells": cells }))
}
