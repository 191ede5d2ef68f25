//! Experiment configuration: TOML files, manifests and their hash.

use crate::CliError;
use clap::ValueEnum;
use critepi::epidemic::Variant;
use critepi::extent::ENVELOPE_C;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Envelope,
    Epidemic,
    Coupling,
    Likelihood,
    Meanfield,
    Moments,
    Extent,
    Graphs,
    ThresholdSweep,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Envelope => "envelope",
            Kind::Epidemic => "epidemic",
            Kind::Coupling => "coupling",
            Kind::Likelihood => "likelihood",
            Kind::Meanfield => "meanfield",
            Kind::Moments => "moments",
            Kind::Extent => "extent",
            Kind::Graphs => "graphs",
            Kind::ThresholdSweep => "threshold-sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VariantSpec {
    Sis,
    Sir,
}

impl From<VariantSpec> for Variant {
    fn from(v: VariantSpec) -> Self {
        match v {
            VariantSpec::Sis => Variant::Sis,
            VariantSpec::Sir => Variant::Sir,
        }
    }
}

/// Envelope reproduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LawSpec {
    /// Poisson(1/3) per offset.
    Poisson,
    /// Binomial(N, 1/(3N)) per offset.
    Village,
    /// Binomial offspring read from explicit pair coins.
    PairCoins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CouplingSpec {
    Standard,
    Modified,
}

/// Reference law for mean-field SIR sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    None,
    /// Passage of `W_t + t²/2` to `J0/N^{1/3}`, sizes scaled by `N^{2/3}`.
    Drifted,
    /// Passage of `W` to `J0/N^α`, sizes scaled by `N^{2α}`.
    Driftless,
}

/// Every parameter of a run. Fields irrelevant to the chosen kind are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    pub seed: u64,
    pub replicates: u64,
    /// Village size.
    pub n: u32,
    pub variant: VariantSpec,
    pub law: LawSpec,
    pub alpha: Option<f64>,
    /// Initial profile, see [`crate::init::init_profile`].
    pub init: String,
    /// Generation cap; defaults to `50 N^α` when `alpha` is set.
    pub max_gens: Option<usize>,
    pub coupling: CouplingSpec,
    /// Also write full per-generation output.
    pub trajectories: bool,
    pub j0: Option<u64>,
    pub reference: Reference,
    pub dt: f64,
    /// Time horizon of diffusion paths.
    pub horizon: f64,
    pub n_max: usize,
    pub m_max: u32,
    pub xs: Vec<i64>,
    pub a: f64,
    pub c: f64,
    /// Point masses `(x, m)` for exit probabilities.
    pub masses: Vec<(f64, f64)>,
    /// Number of profile grid points written by `extent`.
    pub grid: usize,
    pub length: i64,
    pub p: Option<f64>,
    pub ns: Vec<u32>,
    /// Defaults to the threshold and a sub-threshold exponent of the variant.
    pub alphas: Vec<f64>,
    /// Sweep horizon in units of `N^α` generations.
    pub horizon_factor: f64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            seed: 0,
            replicates: 100,
            n: 100,
            variant: VariantSpec::Sis,
            law: LawSpec::Poisson,
            alpha: None,
            init: "point(0, 1)".into(),
            max_gens: None,
            coupling: CouplingSpec::Standard,
            trajectories: false,
            j0: None,
            reference: Reference::None,
            dt: 1e-4,
            horizon: 50.0,
            n_max: 6,
            m_max: 3,
            xs: vec![0, 1, 2, 3],
            a: 1.0,
            c: ENVELOPE_C,
            masses: Vec::new(),
            grid: 0,
            length: 50,
            p: None,
            ns: vec![1000, 10_000],
            alphas: Vec::new(),
            horizon_factor: 1.0,
            out: None,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    check(alpha > 0.0 && alpha <= 1.0, || format!("alpha must lie in (0, 1], got {alpha}"))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check(self.n > 0, || "n must be positive".into())?;
        if let Some(alpha) = self.alpha {
            check_alpha(alpha)?;
        }
        for &alpha in &self.alphas {
            check_alpha(alpha)?;
        }
        check(self.dt > 0.0, || format!("dt must be positive, got {}", self.dt))?;
        check(self.horizon > 0.0, || format!("horizon must be positive, got {}", self.horizon))?;
        check(self.m_max >= 1, || "m_max must be at least 1".into())?;
        check(self.a > 0.0 && self.c > 0.0, || "a and c must be positive".into())?;
        check(self.length > 0, || "length must be positive".into())?;
        if let Some(p) = self.p {
            check((0.0..=1.0).contains(&p), || format!("p must lie in [0, 1], got {p}"))?;
        }
        check(self.ns.iter().all(|&n| n > 0), || "ns must be positive".into())?;
        check(self.horizon_factor > 0.0, || "horizon_factor must be positive".into())?;
        check(self.max_gens != Some(0), || "max_gens must be positive".into())
    }

    /// `N^α` when `alpha` is set.
    pub fn scale(&self) -> Option<f64> {
        self.alpha.map(|a| (self.n as f64).powf(a))
    }

    pub fn generation_cap(&self) -> usize {
        self.max_gens
            .unwrap_or_else(|| self.scale().map_or(10_000, critepi::envelope::default_cap))
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = Self { out: None, ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Read a TOML config, or the `config` entry of a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            m.config
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub program: String,
    pub version: String,
    pub kind: Kind,
    pub seed: u64,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            kind = "threshold-sweep"
            seed = 9
            n = 1000
            variant = "sir"
            alphas = [0.4, 0.2]
            masses = [[0.5, 0.2]]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.kind, Some(Kind::ThresholdSweep));
        assert_eq!(cfg.variant, VariantSpec::Sir);
        assert_eq!(cfg.masses, vec![(0.5, 0.2)]);
        assert_eq!(cfg.replicates, 100);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(toml::from_str::<ExperimentConfig>("nn = 3").is_err());
        let cfg = ExperimentConfig { alpha: Some(1.5), ..Default::default() };
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let cfg = ExperimentConfig { n: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { out: Some("elsewhere".into()), ..a.clone() };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn generation_cap_defaults() {
        let cfg = ExperimentConfig { n: 100, alpha: Some(0.5), ..Default::default() };
        assert_eq!(cfg.generation_cap(), 500);
        assert_eq!(ExperimentConfig::default().generation_cap(), 10_000);
    }
}
