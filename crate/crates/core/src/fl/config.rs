use crate::data::PartitionScheme;
use crate::error::{Error, Result};
use crate::losses::CalibrationConfig;
use crate::snn::{LifParams, ModelSpec};

/// Everything that determines a federated run, apart from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub time_steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub participation_rate: f64,
    pub partition: PartitionScheme,
    pub seed: u64,
    pub calibration: CalibrationConfig,
    pub hidden: Vec<usize>,
    pub lif: LifParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            rounds: 30,
            local_epochs: 2,
            time_steps: 4,
            lr: 0.1,
            batch_size: 32,
            participation_rate: 1.0,
            partition: PartitionScheme::Dirichlet { alpha: 0.1 },
            seed: 0,
            calibration: CalibrationConfig::default(),
            hidden: vec![128, 64],
            lif: LifParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_clients", self.n_clients),
            ("rounds", self.rounds),
            ("local_epochs", self.local_epochs),
            ("time_steps", self.time_steps),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.participation_rate > 0.0 && self.participation_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "participation_rate must be in (0, 1], got {}",
                self.participation_rate
            )));
        }
        self.calibration.validate()?;
        self.lif.validate()
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: self.hidden.clone(),
            num_classes,
            lif: self.lif,
            time_steps: self.time_steps,
        }
    }
}
