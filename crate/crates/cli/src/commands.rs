use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use spikefed_core::data::partition;
use spikefed_core::fl::checkpoint::write_checkpoint;
use spikefed_core::fl::{evaluate, Simulation};

use crate::config::{Algorithm, RunConfig};
use crate::error::CliError;
use crate::output::{
    artifact_version, metrics_csv, read_json, read_metrics, write_json, MetricsRow, PerLabelReport, RunManifest,
    CHECKPOINT_DIR, MANIFEST_FILE, METRICS_FILE, PER_LABEL_FILE,
};

pub const THREADS_ENV: &str = "FEDLEC_THREADS";

/// Worker count: the explicit flag, then `FEDLEC_THREADS`, then the number
/// of available cores.
pub fn resolve_workers(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(w) = flag {
        return if w == 0 {
            Err(CliError::Config("--workers must be >= 1".into()))
        } else {
            Ok(w)
        };
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(CliError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        };
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Directory name of one point of a sweep.
pub fn run_dir_name(algorithm: Algorithm, seed: u64) -> String {
    format!("{algorithm}-seed{seed}")
}

/// Executes every (algorithm, seed) pair of the config. A single pair
/// writes straight into `out`; a sweep writes one subdirectory per pair
/// plus a top-level manifest.
pub fn run(cfg: &RunConfig, out: &Path, workers: usize, mut log: impl FnMut(&str)) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out)?;
    let algorithms = cfg.algorithm_list();
    let seeds = cfg.seed_list();
    if !cfg.is_sweep() {
        run_single(&cfg.single(algorithms[0], seeds[0]), out, workers, &mut log)?;
        return Ok(vec![out.to_path_buf()]);
    }
    let mut dirs = vec![];
    for &seed in &seeds {
        for &algorithm in &algorithms {
            let name = run_dir_name(algorithm, seed);
            let dir = out.join(&name);
            log(&format!("== {name}"));
            run_single(&cfg.single(algorithm, seed), &dir, workers, &mut log)?;
            dirs.push(PathBuf::from(name));
        }
    }
    let hash = cfg.hash();
    write_json(
        &out.join(MANIFEST_FILE),
        &RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: artifact_version(&hash),
            config_hash: hash,
            config: cfg.to_toml(),
            seeds,
            algorithms: algorithms.iter().map(|a| a.to_string()).collect(),
            partition: cfg.partition.clone(),
            outputs: dirs.clone(),
        },
    )?;
    Ok(dirs.into_iter().map(|d| out.join(d)).collect())
}

fn run_single(cfg: &RunConfig, out: &Path, workers: usize, log: &mut impl FnMut(&str)) -> Result<(), CliError> {
    let algorithm = cfg.algorithm.expect("single run");
    let seed = cfg.seed.expect("single run");
    let exp = cfg.experiment(algorithm, seed)?;
    let (train, test) = cfg.datasets(seed)?;
    let sim = Simulation::new(&exp, &train, &test)?;

    fs::create_dir_all(out)?;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    if ckpt_dir.exists() {
        fs::remove_dir_all(&ckpt_dir)?;
    }
    fs::create_dir_all(&ckpt_dir)?;

    let partition_name = cfg.partition.clone();
    let mut rows = Vec::with_capacity(exp.rounds);
    let mut outputs = vec![
        PathBuf::from(METRICS_FILE),
        PathBuf::from(PER_LABEL_FILE),
    ];
    let outcome = sim.run(workers, |report, params| {
        log(&format!(
            "round {:>3}  accuracy {:.4}  loss {:.4}",
            report.round, report.global_accuracy, report.mean_local_losses.total
        ));
        rows.push(MetricsRow::from_report(algorithm.name(), &partition_name, seed, report));
        let round = report.round + 1;
        if cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0 {
            let rel = PathBuf::from(CHECKPOINT_DIR).join(format!("round-{round:04}.flsn"));
            write_checkpoint(out.join(&rel), params)?;
            outputs.push(rel);
        }
        Ok(())
    })?;
    let final_rel = PathBuf::from(CHECKPOINT_DIR).join("final.flsn");
    write_checkpoint(out.join(&final_rel), &outcome.final_params)?;
    outputs.push(final_rel);

    fs::write(out.join(METRICS_FILE), metrics_csv(&rows)?)?;
    let eval = evaluate(&outcome.final_params, &test, sim.spec())?;
    write_json(
        &out.join(PER_LABEL_FILE),
        &PerLabelReport {
            algorithm: algorithm.to_string(),
            partition: partition_name.clone(),
            seed,
            final_round: exp.rounds - 1,
            accuracy: eval.accuracy,
            per_label_accuracy: eval.per_label_accuracy,
            test_label_counts: eval.label_counts,
            client_label_counts: sim.plan().allocation(&train),
        },
    )?;
    let hash = cfg.hash();
    write_json(
        &out.join(MANIFEST_FILE),
        &RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: artifact_version(&hash),
            config_hash: hash,
            config: cfg.to_toml(),
            seeds: vec![seed],
            algorithms: vec![algorithm.to_string()],
            partition: partition_name,
            outputs,
        },
    )?;
    Ok(())
}

/// Final accuracy of one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub algorithm: String,
    pub partition: String,
    pub seed: u64,
    pub final_accuracy: f64,
}

/// Finds completed runs under `dir`: the directory itself if it holds
/// metrics, else the outputs listed by its sweep manifest.
pub fn collect_runs(dir: &Path) -> Result<Vec<RunSummary>, CliError> {
    let metrics = dir.join(METRICS_FILE);
    if metrics.exists() {
        let rows = read_metrics(&metrics)?;
        let last = rows
            .iter()
            .max_by_key(|r| r.round)
            .ok_or_else(|| CliError::Runtime(format!("{} has no rows", metrics.display())))?;
        return Ok(vec![RunSummary {
            dir: dir.to_path_buf(),
            algorithm: last.algorithm.clone(),
            partition: last.partition.clone(),
            seed: last.seed,
            final_accuracy: last.accuracy,
        }]);
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CliError::Runtime(format!("{} is not a run directory", dir.display())));
    }
    let manifest: RunManifest = read_json(&manifest_path)?;
    let mut runs = vec![];
    for sub in &manifest.outputs {
        runs.extend(collect_runs(&dir.join(sub))?);
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDelta {
    pub algorithm: String,
    pub seed: u64,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub partition: String,
    pub baseline: String,
    pub deltas: Vec<PairedDelta>,
    /// Per algorithm: (mean final accuracy, mean paired delta, pairs).
    pub summary: Vec<(String, f64, f64, usize)>,
}

/// Pairs every run with the baseline run of the same seed.
pub fn compare(runs: &[RunSummary], baseline: Option<&str>) -> Result<Comparison, CliError> {
    if runs.len() < 2 {
        return Err(CliError::Runtime("compare needs at least two runs".into()));
    }
    let partition = runs[0].partition.clone();
    if let Some(other) = runs.iter().find(|r| r.partition != partition) {
        return Err(CliError::Runtime(format!(
            "refusing to compare different partitions: {} uses {partition}, {} uses {}",
            runs[0].dir.display(),
            other.dir.display(),
            other.partition
        )));
    }
    let baseline = baseline.map_or_else(|| runs[0].algorithm.clone(), str::to_owned);
    let base: BTreeMap<u64, f64> = runs
        .iter()
        .rev()
        .filter(|r| r.algorithm == baseline)
        .map(|r| (r.seed, r.final_accuracy))
        .collect();
    if base.is_empty() {
        return Err(CliError::Runtime(format!("no runs of baseline algorithm {baseline:?}")));
    }
    let mut deltas = vec![];
    let mut order: Vec<String> = vec![];
    for r in runs {
        if !order.contains(&r.algorithm) {
            order.push(r.algorithm.clone());
        }
        if let Some(&b) = base.get(&r.seed) {
            deltas.push(PairedDelta {
                algorithm: r.algorithm.clone(),
                seed: r.seed,
                accuracy: r.final_accuracy,
                baseline_accuracy: b,
                delta: r.final_accuracy - b,
            });
        }
    }
    let summary = order
        .into_iter()
        .map(|alg| {
            let mine: Vec<&PairedDelta> = deltas.iter().filter(|d| d.algorithm == alg).collect();
            let n = mine.len();
            let mean = |f: fn(&PairedDelta) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    mine.iter().map(|d| f(d)).sum::<f64>() / n as f64
                }
            };
            (alg, mean(|d| d.accuracy), mean(|d| d.delta), n)
        })
        .collect();
    Ok(Comparison {
        partition,
        baseline,
        deltas,
        summary,
    })
}

pub fn comparison_csv(c: &Comparison) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["algorithm", "partition", "seed", "final_accuracy", "baseline", "baseline_accuracy", "delta"])?;
    for d in &c.deltas {
        w.write_record([
            d.algorithm.clone(),
            c.partition.clone(),
            d.seed.to_string(),
            d.accuracy.to_string(),
            c.baseline.clone(),
            d.baseline_accuracy.to_string(),
            d.delta.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn format_comparison(c: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "partition {}  baseline {}", c.partition, c.baseline);
    let _ = writeln!(s, "{:<10} {:>6} {:>10} {:>10}", "algorithm", "pairs", "mean_acc", "mean_delta");
    for (alg, acc, delta, n) in &c.summary {
        let _ = writeln!(s, "{alg:<10} {n:>6} {:>10.2} {:>+10.2}", 100.0 * acc, 100.0 * delta);
    }
    let _ = writeln!(s, "per seed:");
    for d in &c.deltas {
        let _ = writeln!(
            s,
            "  {:<10} seed {:<6} {:>7.2} vs {:>7.2}  {:>+7.2}",
            d.algorithm,
            d.seed,
            100.0 * d.accuracy,
            100.0 * d.baseline_accuracy,
            100.0 * d.delta
        );
    }
    s
}

/// Share of each label held by each client, in percent.
pub fn partition_report(cfg: &RunConfig) -> Result<String, CliError> {
    let seed = cfg.seed_list()[0];
    let (train, _) = cfg.datasets(seed)?;
    let plan = partition(&train, cfg.n_clients, cfg.partition_scheme()?, seed)?;
    let pct = plan.allocation_percent(&train);
    let counts = plan.allocation(&train);
    let mut s = String::new();
    let _ = writeln!(s, "partition {}  seed {seed}  clients {}", cfg.partition, cfg.n_clients);
    let _ = write!(s, "{:<8}", "client");
    for label in 0..train.num_classes() {
        let _ = write!(s, " {:>7}", format!("L{label}"));
    }
    let _ = writeln!(s, " {:>7}", "size");
    for (client, row) in pct.iter().enumerate() {
        let _ = write!(s, "{client:<8}");
        for p in row {
            let _ = write!(s, " {p:>7.1}");
        }
        let _ = writeln!(s, " {:>7}", counts[client].iter().sum::<usize>());
    }
    Ok(s)
}
