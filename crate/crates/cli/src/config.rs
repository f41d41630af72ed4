//! Experiment files: a flat TOML table.
//!
//! Only `dataset` and `algorithm` (or the sweep form `algorithms`) are
//! required; every other key has the default listed on [`RunConfig`].
//! Unknown keys are rejected.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spikefed_core::data::{generate_blobs, load_idx, Dataset, PartitionScheme};
use spikefed_core::fl::ExperimentConfig;
use spikefed_core::losses::{CalibrationConfig, LossVariant};
use spikefed_core::seed::derive_seed;
use spikefed_core::snn::LifParams;

use crate::error::CliError;

/// Seed-stream tags for the synthetic train and test sets.
const TAG_TRAIN_DATA: u64 = 0x7472_6e64;
const TAG_TEST_DATA: u64 = 0x7473_7464;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedLec,
    FedAvg,
    FedProx,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedLec => "fedlec",
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fedlec" => Ok(Algorithm::FedLec),
            "fedavg" => Ok(Algorithm::FedAvg),
            "fedprox" => Ok(Algorithm::FedProx),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Idx,
}

/// One experiment file.
///
/// | key | default |
/// |---|---|
/// | `n_clients` | 10 |
/// | `rounds` | 30 |
/// | `local_epochs` | 2 |
/// | `time_steps` | 4 |
/// | `lr` | see [`ExperimentConfig::default`] |
/// | `batch_size` | see [`ExperimentConfig::default`] |
/// | `participation_rate` | 1.0 |
/// | `partition` | `"dir:0.1"` |
/// | `seed` | 0 |
/// | `theta`, `lambda` | 0.1, 1.0 |
/// | `mu` | 0.01 |
/// | `hidden` | `[128, 64]` |
/// | `tau`, `v_threshold`, `v_reset` | 2.0, 1.0, 0.0 |
/// | `inverted_leak` | false |
/// | `classes`, `per_class`, `test_per_class`, `dim`, `spread` | 8, 500, 200, 16, 1.0 |
/// | `checkpoint_every` | 0 (final weights only) |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithms: Option<Vec<Algorithm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,

    #[serde(default = "d::n_clients")]
    pub n_clients: usize,
    #[serde(default = "d::rounds")]
    pub rounds: usize,
    #[serde(default = "d::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "d::time_steps")]
    pub time_steps: usize,
    #[serde(default = "d::lr")]
    pub lr: f64,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default = "d::participation_rate")]
    pub participation_rate: f64,
    #[serde(default = "d::partition")]
    pub partition: String,
    #[serde(default = "d::theta")]
    pub theta: f64,
    #[serde(default = "d::lambda")]
    pub lambda: f64,
    #[serde(default = "d::mu")]
    pub mu: f64,
    #[serde(default = "d::hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d::tau")]
    pub tau: f64,
    #[serde(default = "d::v_threshold")]
    pub v_threshold: f64,
    #[serde(default = "d::v_reset")]
    pub v_reset: f64,
    #[serde(default)]
    pub inverted_leak: bool,

    #[serde(default = "d::classes")]
    pub classes: usize,
    #[serde(default = "d::per_class")]
    pub per_class: usize,
    #[serde(default = "d::test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "d::dim")]
    pub dim: usize,
    #[serde(default = "d::spread")]
    pub spread: f64,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,

    #[serde(default)]
    pub checkpoint_every: usize,
}

mod d {
    use spikefed_core::fl::ExperimentConfig;
    use spikefed_core::losses::CalibrationConfig;
    use spikefed_core::snn::LifParams;

    pub fn n_clients() -> usize {
        ExperimentConfig::default().n_clients
    }
    pub fn rounds() -> usize {
        ExperimentConfig::default().rounds
    }
    pub fn local_epochs() -> usize {
        ExperimentConfig::default().local_epochs
    }
    pub fn time_steps() -> usize {
        ExperimentConfig::default().time_steps
    }
    pub fn lr() -> f64 {
        ExperimentConfig::default().lr
    }
    pub fn batch_size() -> usize {
        ExperimentConfig::default().batch_size
    }
    pub fn participation_rate() -> f64 {
        ExperimentConfig::default().participation_rate
    }
    pub fn partition() -> String {
        ExperimentConfig::default().partition.to_string()
    }
    pub fn theta() -> f64 {
        CalibrationConfig::default().theta
    }
    pub fn lambda() -> f64 {
        CalibrationConfig::default().lambda
    }
    pub fn mu() -> f64 {
        0.01
    }
    pub fn hidden() -> Vec<usize> {
        ExperimentConfig::default().hidden
    }
    pub fn tau() -> f64 {
        LifParams::default().tau
    }
    pub fn v_threshold() -> f64 {
        LifParams::default().v_threshold
    }
    pub fn v_reset() -> f64 {
        LifParams::default().v_reset
    }
    pub fn classes() -> usize {
        8
    }
    pub fn per_class() -> usize {
        500
    }
    pub fn test_per_class() -> usize {
        200
    }
    pub fn dim() -> usize {
        16
    }
    pub fn spread() -> f64 {
        1.0
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a file. Relative IDX paths are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.train_images,
            &mut cfg.train_labels,
            &mut cfg.test_images,
            &mut cfg.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        match (&self.algorithm, &self.algorithms) {
            (None, None) => return bad("algorithm", "missing (set `algorithm` or `algorithms`)".into()),
            (Some(_), Some(_)) => return bad("algorithm", "set only one of `algorithm` and `algorithms`".into()),
            (None, Some(list)) if list.is_empty() => return bad("algorithms", "empty list".into()),
            _ => {}
        }
        if self.seed.is_some() && self.seeds.is_some() {
            return bad("seed", "set only one of `seed` and `seeds`".into());
        }
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            return bad("seeds", "empty list".into());
        }
        for (name, v) in [
            ("n_clients", self.n_clients),
            ("rounds", self.rounds),
            ("local_epochs", self.local_epochs),
            ("time_steps", self.time_steps),
            ("batch_size", self.batch_size),
            ("classes", self.classes),
            ("per_class", self.per_class),
            ("test_per_class", self.test_per_class),
            ("dim", self.dim),
        ] {
            if v == 0 {
                return bad(name, "must be >= 1".into());
            }
        }
        if !(self.participation_rate > 0.0 && self.participation_rate <= 1.0) {
            return bad(
                "participation_rate",
                format!("must be in (0, 1], got {}", self.participation_rate),
            );
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        for (name, v) in [("theta", self.theta), ("lambda", self.lambda), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, format!("must be >= 0, got {v}"));
            }
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return bad("spread", format!("must be >= 0, got {}", self.spread));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one non-empty layer".into());
        }
        self.partition_scheme()?;
        self.lif()
            .validate()
            .map_err(|e| CliError::Config(format!("tau/v_threshold/v_reset: {e}")))?;
        if self.dataset == DatasetKind::Idx {
            for (name, p) in [
                ("train_images", &self.train_images),
                ("train_labels", &self.train_labels),
                ("test_images", &self.test_images),
                ("test_labels", &self.test_labels),
            ] {
                if p.is_none() {
                    return bad(name, "required when dataset = \"idx\"".into());
                }
            }
        }
        Ok(())
    }

    pub fn partition_scheme(&self) -> Result<PartitionScheme, CliError> {
        self.partition
            .parse()
            .map_err(|e| CliError::Config(format!("partition: {e}")))
    }

    pub fn algorithm_list(&self) -> Vec<Algorithm> {
        match (&self.algorithm, &self.algorithms) {
            (Some(a), _) => vec![*a],
            (None, Some(list)) => list.clone(),
            (None, None) => vec![],
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match (&self.seed, &self.seeds) {
            (Some(s), _) => vec![*s],
            (None, Some(list)) => list.clone(),
            (None, None) => vec![0],
        }
    }

    pub fn is_sweep(&self) -> bool {
        self.algorithm_list().len() * self.seed_list().len() > 1
    }

    /// The single-run config for one point of the sweep.
    pub fn single(&self, algorithm: Algorithm, seed: u64) -> RunConfig {
        RunConfig {
            algorithm: Some(algorithm),
            algorithms: None,
            seed: Some(seed),
            seeds: None,
            ..self.clone()
        }
    }

    fn lif(&self) -> LifParams {
        LifParams {
            tau: self.tau,
            v_threshold: self.v_threshold,
            v_reset: self.v_reset,
            inverted_leak: self.inverted_leak,
        }
    }

    pub fn experiment(&self, algorithm: Algorithm, seed: u64) -> Result<ExperimentConfig, CliError> {
        let variant = match algorithm {
            Algorithm::FedLec => LossVariant::FedLec,
            Algorithm::FedAvg => LossVariant::FedAvg,
            Algorithm::FedProx => LossVariant::FedProx { mu: self.mu },
        };
        let cfg = ExperimentConfig {
            n_clients: self.n_clients,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            time_steps: self.time_steps,
            lr: self.lr,
            batch_size: self.batch_size,
            participation_rate: self.participation_rate,
            partition: self.partition_scheme()?,
            seed,
            calibration: CalibrationConfig {
                theta: self.theta,
                lambda: self.lambda,
                variant,
            },
            hidden: self.hidden.clone(),
            lif: self.lif(),
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Train and test sets. Synthetic sets are drawn from streams keyed by
    /// the run seed, so every algorithm sees the same data for a given seed.
    pub fn datasets(&self, seed: u64) -> Result<(Dataset, Dataset), CliError> {
        match self.dataset {
            DatasetKind::Blobs => {
                let make = |per_class, tag| {
                    generate_blobs(
                        self.classes,
                        per_class,
                        self.dim,
                        self.spread,
                        derive_seed(seed, &[tag]),
                    )
                };
                Ok((
                    make(self.per_class, TAG_TRAIN_DATA)?,
                    make(self.test_per_class, TAG_TEST_DATA)?,
                ))
            }
            DatasetKind::Idx => {
                let need = |p: &Option<PathBuf>| p.clone().expect("validated");
                let train = load_idx(need(&self.train_images), need(&self.train_labels))?;
                let test = load_idx(need(&self.test_images), need(&self.test_labels))?;
                // a test set may lack the highest labels of the training set
                let classes = train.num_classes().max(test.num_classes());
                Ok((widen(train, classes)?, widen(test, classes)?))
            }
        }
    }
}

fn widen(ds: Dataset, classes: usize) -> Result<Dataset, CliError> {
    if ds.num_classes() == classes {
        return Ok(ds);
    }
    Ok(Dataset::new(ds.features().clone(), ds.labels().to_vec(), classes)?)
}
