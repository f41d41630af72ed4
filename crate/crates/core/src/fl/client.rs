use rand::seq::SliceRandom;

use crate::data::{Dataset, LabelStats};
use crate::error::{Error, Result};
use crate::losses::{fedlec_loss, prox_term, CalibrationConfig, LossVariant};
use crate::params::{sgd_step, ParamVector};
use crate::seed::{rng_for, TAG_SHUFFLE};
use crate::snn::{ModelSpec, SpikingMlp};

/// Settings shared by every client's local run in an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTraining {
    pub spec: ModelSpec,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub calibration: CalibrationConfig,
    pub seed: u64,
}

/// Batch-averaged loss components from one local run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossSummary {
    pub total: f64,
    pub lc: f64,
    pub lgc: f64,
    pub lad: f64,
    pub prox: f64,
}

impl LossSummary {
    fn add(&mut self, other: &LossSummary) {
        self.total += other.total;
        self.lc += other.lc;
        self.lgc += other.lgc;
        self.lad += other.lad;
        self.prox += other.prox;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.total *= s;
        self.lc *= s;
        self.lgc *= s;
        self.lad *= s;
        self.prox *= s;
        self
    }

    pub fn mean<'a>(items: impl IntoIterator<Item = &'a LossSummary>) -> LossSummary {
        let mut acc = LossSummary::default();
        let mut n = 0usize;
        for item in items {
            acc.add(item);
            n += 1;
        }
        if n == 0 {
            acc
        } else {
            acc.scaled(1.0 / n as f64)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Post-training local weights.
    pub params: ParamVector,
    pub shard_size: usize,
    pub local_metrics: LossSummary,
}

/// Trains a copy of `global` on one client's shard.
///
/// Batch order is drawn from a stream keyed by `(seed, round, client_id)`;
/// indices inside a batch are sorted so a batch is a set, not a sequence.
/// Under the calibrated objective a frozen copy of `global` acts as the
/// teacher for every batch.
pub fn local_train(
    data: &Dataset,
    shard: &[usize],
    stats: &LabelStats,
    global: &ParamVector,
    job: &LocalTraining,
    round: usize,
    client_id: usize,
) -> Result<ClientUpdate> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    if job.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut student = SpikingMlp::from_params(&job.spec, global)?;
    let teacher = job.calibration.needs_teacher().then(|| student.clone());
    let mut params = global.clone();
    let mut rng = rng_for(job.seed, &[TAG_SHUFFLE, round as u64, client_id as u64]);
    let mut order = shard.to_vec();
    let mut summary = LossSummary::default();
    let mut batches = 0usize;

    for _ in 0..job.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(job.batch_size) {
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let (x, labels) = data.gather(&idx);
            let logits = student.forward(&x)?;
            let teacher_logits = teacher.as_ref().map(|t| t.infer(&x)).transpose()?;
            let loss = fedlec_loss(&logits, teacher_logits.as_ref(), &labels, stats, &job.calibration)?;
            let mut grads = student.backward(&loss.grad_logits)?;
            let mut prox = 0.0;
            if let LossVariant::FedProx { mu } = job.calibration.variant {
                let (value, g) = prox_term(&params, global, mu)?;
                grads.axpy(1.0, &g)?;
                prox = value;
            }
            params = sgd_step(&params, &grads, job.lr)?;
            student.set_params(&params)?;
            summary.add(&LossSummary {
                total: loss.total + prox,
                lc: loss.lc,
                lgc: loss.lgc,
                lad: loss.lad,
                prox,
            });
            batches += 1;
        }
    }
    let local_metrics = if batches == 0 {
        summary
    } else {
        summary.scaled(1.0 / batches as f64)
    };
    Ok(ClientUpdate {
        client_id,
        params,
        shard_size: shard.len(),
        local_metrics,
    })
}
