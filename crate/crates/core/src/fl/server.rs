//! Server side of the round loop: sampling, aggregation, evaluation.

use rayon::prelude::*;

use super::client::{local_train, ClientUpdate, LocalTraining, LossSummary};
use super::config::ExperimentConfig;
use crate::data::{label_stats, partition, Dataset, LabelStats, PartitionPlan};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::seed::{rng_for, TAG_INIT, TAG_SAMPLE};
use crate::snn::{ModelSpec, SpikingMlp};

const EVAL_BATCH: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub global_accuracy: f64,
    pub per_label_accuracy: Vec<f64>,
    pub mean_local_losses: LossSummary,
    pub participating_clients: Vec<usize>,
}

/// Top-1 accuracy of a model on a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Per-label accuracy; 0 for labels with no test samples.
    pub per_label_accuracy: Vec<f64>,
    pub label_counts: Vec<usize>,
    pub correct: Vec<usize>,
}

/// Number of clients drawn per round: `ceil(rate · n)`, at least one.
pub fn clients_per_round(n_clients: usize, rate: f64) -> usize {
    // tolerate representation error such as 0.3 * 10 = 3.0000000000000004
    let raw = rate * n_clients as f64;
    ((raw - 1e-9).ceil() as usize).clamp(1, n_clients)
}

/// Fixed-fraction sampling without replacement, sorted by client id.
pub fn sample_clients(n_clients: usize, rate: f64, seed: u64, round: usize) -> Result<Vec<usize>> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("n_clients must be positive".into()));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "participation_rate must be in (0, 1], got {rate}"
        )));
    }
    let m = clients_per_round(n_clients, rate);
    if m == n_clients {
        return Ok((0..n_clients).collect());
    }
    let mut rng = rng_for(seed, &[TAG_SAMPLE, round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, n_clients, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Shard-size weighted average of client weights, over the given updates
/// only.
///
/// Computed in delta form around the lowest-id update,
/// `w = a + Σ_i (|D_i| / Σ_j |D_j|) · (w_i − a)`, which is algebraically the
/// plain weighted mean but returns `a` exactly when every client agrees.
/// Updates are processed in client-id order, so the result does not depend
/// on the order of the input slice.
pub fn aggregate(updates: &[ClientUpdate], w_prev: &ParamVector) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::InvalidArgument("no client updates to aggregate".into()));
    }
    for u in updates {
        u.params.check_layout(w_prev)?;
        if u.shard_size == 0 {
            return Err(Error::EmptyShard);
        }
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    let total: usize = ordered.iter().map(|u| u.shard_size).sum();
    let anchor = &ordered[0].params;
    let mut out = anchor.clone();
    for u in &ordered {
        let weight = u.shard_size as f64 / total as f64;
        for ((o, &p), &a) in out.data_mut().iter_mut().zip(u.params.data()).zip(anchor.data()) {
            *o += weight * (p - a);
        }
    }
    Ok(out)
}

/// Spike-mode top-1 evaluation; ties go to the lowest class index.
pub fn evaluate(params: &ParamVector, test: &Dataset, spec: &ModelSpec) -> Result<Evaluation> {
    let model = SpikingMlp::from_params(spec, params)?;
    evaluate_model(&model, test)
}

pub fn evaluate_model(model: &SpikingMlp, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let classes = model.num_classes();
    if test.num_classes() != classes {
        return Err(Error::InvalidArgument(format!(
            "test set has {} classes, model has {classes}",
            test.num_classes()
        )));
    }
    let mut correct = vec![0usize; classes];
    let mut label_counts = vec![0usize; classes];
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let (x, labels) = test.gather(chunk);
        let logits = model.infer(&x)?;
        for (i, &y) in labels.iter().enumerate() {
            label_counts[y] += 1;
            if argmax(logits.row(i)) == y {
                correct[y] += 1;
            }
        }
    }
    let per_label_accuracy = correct
        .iter()
        .zip(&label_counts)
        .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect();
    Ok(Evaluation {
        accuracy: correct.iter().sum::<usize>() as f64 / test.len() as f64,
        per_label_accuracy,
        label_counts,
        correct,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Xavier initialization keyed by the experiment seed.
pub fn initial_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    let mut rng = rng_for(seed, &[TAG_INIT]);
    Ok(SpikingMlp::new(spec, &mut rng)?.params())
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<RoundReport>,
    pub final_params: ParamVector,
}

/// A partitioned federation ready to run.
pub struct Simulation<'a> {
    cfg: ExperimentConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    plan: PartitionPlan,
    stats: Vec<LabelStats>,
    job: LocalTraining,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &ExperimentConfig, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if train.num_classes() != test.num_classes() || train.dim() != test.dim() {
            return Err(Error::InvalidArgument(
                "train and test sets disagree on classes or feature width".into(),
            ));
        }
        let plan = partition(train, cfg.n_clients, cfg.partition, cfg.seed)?;
        let stats = plan
            .shards
            .iter()
            .map(|s| label_stats(train, s))
            .collect::<Result<Vec<_>>>()?;
        let spec = cfg.model_spec(train.dim(), train.num_classes());
        spec.validate()?;
        let job = LocalTraining {
            spec,
            epochs: cfg.local_epochs,
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            calibration: cfg.calibration,
            seed: cfg.seed,
        };
        Ok(Self {
            cfg: cfg.clone(),
            train,
            test,
            plan,
            stats,
            job,
        })
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn stats(&self) -> &[LabelStats] {
        &self.stats
    }

    pub fn job(&self) -> &LocalTraining {
        &self.job
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.job.spec
    }

    /// Local training for one client against the given global weights.
    pub fn train_client(&self, client: usize, global: &ParamVector, round: usize) -> Result<ClientUpdate> {
        local_train(
            self.train,
            &self.plan.shards[client],
            &self.stats[client],
            global,
            &self.job,
            round,
            client,
        )
    }

    /// Runs every round with `workers` threads for client training.
    /// `on_round` sees each report and the freshly aggregated weights.
    pub fn run<F>(&self, workers: usize, mut on_round: F) -> Result<ExperimentOutcome>
    where
        F: FnMut(&RoundReport, &ParamVector) -> Result<()>,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        let mut global = initial_params(&self.job.spec, self.cfg.seed)?;
        let mut reports = Vec::with_capacity(self.cfg.rounds);
        for round in 0..self.cfg.rounds {
            let selected = sample_clients(self.cfg.n_clients, self.cfg.participation_rate, self.cfg.seed, round)?;
            let updates: Vec<ClientUpdate> = pool.install(|| {
                selected
                    .par_iter()
                    .map(|&c| self.train_client(c, &global, round))
                    .collect::<Result<Vec<_>>>()
            })?;
            global = aggregate(&updates, &global)?;
            let eval = evaluate(&global, self.test, &self.job.spec)?;
            let report = RoundReport {
                round,
                global_accuracy: eval.accuracy,
                per_label_accuracy: eval.per_label_accuracy,
                mean_local_losses: LossSummary::mean(updates.iter().map(|u| &u.local_metrics)),
                participating_clients: selected,
            };
            on_round(&report, &global)?;
            reports.push(report);
        }
        Ok(ExperimentOutcome {
            reports,
            final_params: global,
        })
    }
}

/// Runs a full experiment single-threaded-per-round semantics with the
/// default worker count.
pub fn run_experiment(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<Vec<RoundReport>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    Ok(Simulation::new(cfg, train, test)?.run(workers, |_, _| Ok(()))?.reports)
}

/// Non-federated reference: the whole training set on one learner, with the
/// same round/epoch structure and random streams as a one-client federation.
pub fn train_centralized(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(Vec<RoundReport>, Vec<ParamVector>)> {
    cfg.validate()?;
    let spec = cfg.model_spec(train.dim(), train.num_classes());
    let job = LocalTraining {
        spec: spec.clone(),
        epochs: cfg.local_epochs,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        calibration: cfg.calibration,
        seed: cfg.seed,
    };
    let all: Vec<usize> = (0..train.len()).collect();
    let stats = label_stats(train, &all)?;
    let mut params = initial_params(&spec, cfg.seed)?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    let mut history = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let update = local_train(train, &all, &stats, &params, &job, round, 0)?;
        params = update.params;
        let eval = evaluate(&params, test, &spec)?;
        reports.push(RoundReport {
            round,
            global_accuracy: eval.accuracy,
            per_label_accuracy: eval.per_label_accuracy,
            mean_local_losses: update.local_metrics,
            participating_clients: vec![0],
        });
        history.push(params.clone());
    }
    Ok((reports, history))
}
