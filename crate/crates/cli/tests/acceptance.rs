//! Acceptance criteria 1–9. Runs without the libtest harness so every
//! criterion prints exactly one `PASS`/`FAIL` line; the process fails if any
//! criterion does.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use spikefed_cli::{Algorithm, RunConfig};
use spikefed_core::data::{partition, Dataset, LabelStats, PartitionPlan, PartitionScheme};
use spikefed_core::fl::{
    aggregate, evaluate, initial_params, local_train, sample_clients, train_centralized, ClientUpdate, Simulation,
};
use spikefed_core::losses::{
    ad_penalty, calibrated_ce, cross_entropy, fedlec_loss, gc_penalty, prox_term, CalibrationConfig, LossVariant,
};
use spikefed_core::seed::rng_for;
use spikefed_core::snn::{smooth_spike, surrogate_grad, LifParams, ModelSpec, NeuronMode, SpikingMlp};
use spikefed_core::{ParamLayout, ParamSpec, ParamVector, Tensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 gradient correctness", c1_gradients),
        ("2 surrogate identities", c2_surrogate),
        ("3 partitioner properties", c3_partitions),
        ("4 loss unit vectors", c4_losses),
        ("5 federation degeneracy", c5_degeneracy),
        ("6 determinism under parallelism", c6_parallel_determinism),
        ("7 fedlec beats fedavg under skew", c7_headline),
        ("8 missing-label accuracy after one epoch", c8_missing_labels),
        ("9 ablation direction", c9_ablation),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed > limit {
        return Err(format!("{what} took {elapsed:?}, limit {limit:?}"));
    }
    Ok(())
}

// ---- 1 ----

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let variants = [
        CalibrationConfig::default(),
        CalibrationConfig {
            variant: LossVariant::FedAvg,
            ..Default::default()
        },
        CalibrationConfig {
            variant: LossVariant::FedProx { mu: 0.2 },
            ..Default::default()
        },
    ];
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = rng_for(seed, &[0xacc1]);
        let classes = rng.random_range(2..=4);
        let spec = ModelSpec {
            input_dim: rng.random_range(2..=8),
            hidden: vec![rng.random_range(2..=8)],
            num_classes: classes,
            lif: LifParams::default(),
            time_steps: rng.random_range(1..=4),
        };
        let batch = rng.random_range(1..=4);
        let mut params = SpikingMlp::new(&spec, &mut rng).unwrap().params();
        for v in params.data_mut() {
            *v = 3.0 * *v + rng.random_range(-0.3..0.3);
        }
        let mut anchor = params.clone();
        for v in anchor.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        let x = Tensor::new(
            vec![batch, spec.input_dim],
            (0..batch * spec.input_dim).map(|_| rng.random_range(-1.5..2.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let teacher = Tensor::new(
            vec![batch, classes],
            (0..batch * classes).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let mut counts: Vec<usize> = (0..classes).map(|_| rng.random_range(0..20)).collect();
        counts[0] = 0;
        counts[classes - 1] += 1;
        let stats = LabelStats::from_counts(counts).unwrap();

        for cfg in &variants {
            let objective = |p: &ParamVector| {
                let model = SpikingMlp::from_params(&spec, p).unwrap().with_mode(NeuronMode::Smooth);
                let logits = model.infer(&x).unwrap();
                let mut l = fedlec_loss(&logits, Some(&teacher), &labels, &stats, cfg).unwrap().total;
                if let LossVariant::FedProx { mu } = cfg.variant {
                    l += prox_term(p, &anchor, mu).unwrap().0;
                }
                l
            };
            let mut model = SpikingMlp::from_params(&spec, &params).unwrap().with_mode(NeuronMode::Smooth);
            let logits = model.forward(&x).unwrap();
            let loss = fedlec_loss(&logits, Some(&teacher), &labels, &stats, cfg).unwrap();
            let mut grads = model.backward(&loss.grad_logits).unwrap();
            if let LossVariant::FedProx { mu } = cfg.variant {
                grads.axpy(1.0, &prox_term(&params, &anchor, mu).unwrap().1).unwrap();
            }
            for k in 0..params.len() {
                let mut plus = params.clone();
                plus.data_mut()[k] += h;
                let mut minus = params.clone();
                minus.data_mut()[k] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let a = grads.data()[k];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
    }
    ensure!(worst < 1e-4, "max relative error {worst:.3e}");
    within(start.elapsed(), Duration::from_secs(30), "gradient check")?;
    Ok(format!("max relative error {worst:.2e} over 20 fixtures x 3 variants"))
}

// ---- 2 ----

fn c2_surrogate() -> Outcome {
    let at = |x: f64| surrogate_grad(&Tensor::new(vec![1, 1], vec![x]).unwrap()).data()[0];
    ensure!(at(0.0) == 1.0, "surrogate_grad(0) = {}", at(0.0));
    ensure!(at(1.0 / PI) == 0.5, "surrogate_grad(1/pi) = {}", at(1.0 / PI));
    // g(x) - g(-3) against a composite Simpson integral of the surrogate
    let n = 6000;
    let step = 6.0 / n as f64;
    let mut worst: f64 = 0.0;
    let mut integral = 0.0;
    for i in (0..n).step_by(2) {
        let a = -3.0 + i as f64 * step;
        integral += step / 3.0 * (at(a) + 4.0 * at(a + step) + at(a + 2.0 * step));
        let b = a + 2.0 * step;
        let expect = smooth_spike(b) - smooth_spike(-3.0);
        worst = worst.max((integral - expect).abs());
    }
    ensure!(worst < 1e-6, "antiderivative error {worst:.3e}");
    Ok(format!("antiderivative error {worst:.1e}"))
}

// ---- 3 ----

fn check_cover(plan: &PartitionPlan, ds: &Dataset) -> Result<(), String> {
    let mut owner = vec![usize::MAX; ds.len()];
    for (c, shard) in plan.shards.iter().enumerate() {
        for &i in shard {
            ensure!(owner[i] == usize::MAX, "sample {i} allocated twice");
            owner[i] = c;
        }
    }
    ensure!(owner.iter().all(|&o| o != usize::MAX), "sample left unallocated");
    let mut per_label = vec![0; ds.num_classes()];
    for shard in &plan.shards {
        for &i in shard {
            per_label[ds.labels()[i]] += 1;
        }
    }
    ensure!(per_label == ds.label_counts(), "label counts not conserved");
    Ok(())
}

fn c3_partitions() -> Outcome {
    let ds = RunConfig::parse("dataset = \"blobs\"\nalgorithm = \"fedavg\"\n").unwrap().datasets(0).unwrap().0;
    for seed in 0..100 {
        let plan = partition(&ds, 10, PartitionScheme::Quantity { k: 2 }, seed).unwrap();
        check_cover(&plan, &ds)?;
        for shard in &plan.shards {
            let labels: BTreeSet<usize> = shard.iter().map(|&i| ds.labels()[i]).collect();
            ensure!(labels.len() == 2, "quantity seed {seed}: {} labels", labels.len());
        }
        let plan = partition(&ds, 10, PartitionScheme::Dirichlet { alpha: 0.1 }, seed).unwrap();
        check_cover(&plan, &ds)?;
        let plan = partition(&ds, 10, PartitionScheme::Iid, seed).unwrap();
        check_cover(&plan, &ds)?;
    }
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let plan = partition(&ds, 10, PartitionScheme::Dirichlet { alpha: 1e6 }, seed).unwrap();
        for row in plan.allocation(&ds) {
            for (label, &n) in row.iter().enumerate() {
                let share = n as f64 / ds.label_counts()[label] as f64;
                worst = worst.max((share - 0.1).abs());
            }
        }
    }
    ensure!(worst < 0.02, "alpha=1e6 deviation {worst}");
    Ok(format!("300 draws exact; alpha=1e6 max deviation {worst:.4}"))
}

// ---- 4 ----

fn c4_losses() -> Outcome {
    let mut rng = rng_for(4, &[0xacc4]);
    let logits = Tensor::new(vec![6, 5], (0..30).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let labels = [0, 4, 2, 2, 1, 3];
    let uniform = LabelStats::uniform(5);
    let (ce, g) = cross_entropy(&logits, &labels).unwrap();
    let (lc, gl) = calibrated_ce(&logits, &labels, &uniform).unwrap();
    ensure!(ce == lc && g == gl, "uniform calibrated CE differs from CE: {ce} vs {lc}");

    let skewed = LabelStats::from_counts(vec![10, 0, 5, 0, 3]).unwrap();
    let (ad, _) = ad_penalty(&logits, &logits, &skewed).unwrap();
    ensure!(ad.abs() < 1e-15, "ad on identical logits = {ad}");
    let full = LabelStats::from_counts(vec![2, 2, 2, 2, 2]).unwrap();
    let other = logits.map(|v| -v);
    let (ad, _) = ad_penalty(&logits, &other, &full).unwrap();
    ensure!(ad == 0.0, "ad with no missing labels = {ad}");

    let k = 1.7;
    let constant = Tensor::filled(vec![6, 5], k);
    let (gc, _) = gc_penalty(&constant, &labels, &uniform).unwrap();
    ensure!((gc - k).abs() < 1e-12, "gc on constant logits = {gc}, expected {k}");

    let layout = std::sync::Arc::new(ParamLayout::new(vec![ParamSpec {
        layer: 0,
        name: "w".into(),
        shape: vec![2],
    }]));
    let w_prev = ParamVector::zeros(layout.clone());
    let update = |v: f64, n: usize, id: usize| ClientUpdate {
        client_id: id,
        params: ParamVector::new(layout.clone(), vec![v, v]).unwrap(),
        shard_size: n,
        local_metrics: Default::default(),
    };
    let avg = aggregate(&[update(1.0, 1, 0), update(3.0, 3, 1)], &w_prev).unwrap();
    ensure!(avg.data() == [2.5, 2.5], "aggregate = {:?}", avg.data());
    Ok("all unit vectors hold".into())
}

// ---- 5 ----

fn c5_degeneracy() -> Outcome {
    let base = RunConfig::parse(
        "dataset = \"blobs\"\nalgorithm = \"fedavg\"\nn_clients = 1\nrounds = 3\nlocal_epochs = 1\n\
         time_steps = 2\nhidden = [16]\nper_class = 40\ntest_per_class = 10\npartition = \"iid\"\n",
    )
    .unwrap();
    let (train, test) = base.datasets(3).unwrap();
    for alg in [Algorithm::FedAvg, Algorithm::FedProx, Algorithm::FedLec] {
        let cfg = base.experiment(alg, 3).unwrap();
        let sim = Simulation::new(&cfg, &train, &test).unwrap();
        let mut fed = vec![];
        let outcome = sim
            .run(1, |_, p| {
                fed.push(p.clone());
                Ok(())
            })
            .unwrap();
        let (central_reports, central) = train_centralized(&cfg, &train, &test).unwrap();
        ensure!(fed == central, "{alg}: one-client run differs from centralized");
        ensure!(
            outcome.reports.iter().zip(&central_reports).all(|(a, b)| a.global_accuracy == b.global_accuracy),
            "{alg}: accuracies differ"
        );
    }

    // identical shards: four clients holding the same samples
    let (small, _) = base.datasets(4).unwrap();
    let n = small.len();
    let idx: Vec<usize> = (0..4 * n).map(|i| i % n).collect();
    let repeated = small.subset(&idx).unwrap();
    let mut cfg = base.experiment(Algorithm::FedAvg, 4).unwrap();
    cfg.n_clients = 4;
    cfg.batch_size = 4 * n;
    let sim = Simulation::new(&cfg, &repeated, &test).unwrap();
    let global = initial_params(sim.spec(), 4).unwrap();
    // every client trains on the same index set, full batch
    let shard0 = &sim.plan().shards[0];
    let stats0 = &sim.stats()[0];
    let same: Vec<ClientUpdate> = (0..4)
        .map(|c| local_train(&repeated, shard0, stats0, &global, sim.job(), 0, c).unwrap())
        .collect();
    let merged = aggregate(&same, &global).unwrap();
    ensure!(
        same.iter().all(|u| u.params == same[0].params),
        "full-batch local training depends on client id"
    );
    ensure!(merged == same[0].params, "aggregate of identical updates moved");
    Ok("bit-exact for fedavg, fedprox, fedlec".into())
}

// ---- 6 ----

fn c6_parallel_determinism() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c6.toml");
    fs::write(
        &cfg,
        "dataset = \"blobs\"\nalgorithm = \"fedlec\"\nseed = 11\nn_clients = 10\nrounds = 5\n\
         local_epochs = 1\npartition = \"dir:0.1\"\nper_class = 100\ntest_per_class = 50\n",
    )
    .unwrap();
    let mut csvs = vec![];
    for workers in ["1", "4"] {
        let out = tmp.path().join(format!("w{workers}"));
        let res = Command::new(env!("CARGO_BIN_EXE_spikefed"))
            .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers, "-q"])
            .output()
            .unwrap();
        ensure!(res.status.success(), "run failed: {}", String::from_utf8_lossy(&res.stderr));
        csvs.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    ensure!(csvs[0] == csvs[1], "metrics differ between 1 and 4 workers");
    within(start.elapsed(), Duration::from_secs(120), "two runs")?;
    Ok(format!("{} identical bytes", csvs[0].len()))
}

// ---- 7, 8, 9 ----

const SEEDS: [u64; 3] = [0, 1, 2];

/// Loss weights used for FedLEC in criteria 7–9, chosen on tuning seeds
/// disjoint from `SEEDS`.
const THETA: f64 = 0.01;
const LAMBDA: f64 = 0.01;

fn desk_config(partition: &str) -> RunConfig {
    let mut cfg = RunConfig::parse(&format!(
        "dataset = \"blobs\"\nalgorithm = \"fedavg\"\nn_clients = 10\nrounds = 30\nlocal_epochs = 2\n\
         time_steps = 4\nparticipation_rate = 1.0\npartition = \"{partition}\"\nclasses = 8\nper_class = 500\n\
         dim = 16\nspread = 1.0\n"
    ))
    .unwrap();
    cfg.theta = THETA;
    cfg.lambda = LAMBDA;
    cfg
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn final_accuracy(partition: &str, alg: Algorithm, theta: f64, lambda: f64, seed: u64) -> f64 {
    let mut rc = desk_config(partition);
    rc.theta = theta;
    rc.lambda = lambda;
    let cfg = rc.experiment(alg, seed).unwrap();
    let (train, test) = rc.datasets(seed).unwrap();
    let sim = Simulation::new(&cfg, &train, &test).unwrap();
    let out = sim.run(workers(), |_, _| Ok(())).unwrap();
    out.reports.last().unwrap().global_accuracy
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|a| format!("{:.2}", 100.0 * a)).collect::<Vec<_>>().join("/")
}

struct Headline {
    fedavg: Vec<f64>,
    fedlec: Vec<f64>,
}

/// Final accuracies per seed, shared between criteria 7 and 9.
fn headline(partition: &'static str) -> &'static Headline {
    static CNUM: OnceLock<Headline> = OnceLock::new();
    static DIR: OnceLock<Headline> = OnceLock::new();
    let cell = if partition == "cnum:2" { &CNUM } else { &DIR };
    cell.get_or_init(|| Headline {
        fedavg: SEEDS.iter().map(|&s| final_accuracy(partition, Algorithm::FedAvg, 0.0, 0.0, s)).collect(),
        fedlec: SEEDS.iter().map(|&s| final_accuracy(partition, Algorithm::FedLec, THETA, LAMBDA, s)).collect(),
    })
}

fn c7_headline() -> Outcome {
    let start = Instant::now();
    let mut lines = vec![];
    let mut ok = true;
    for partition in ["cnum:2", "dir:0.1"] {
        let h = headline(partition);
        let delta = 100.0 * (mean(&h.fedlec) - mean(&h.fedavg));
        ok &= delta >= 5.0;
        lines.push(format!(
            "{partition}: fedavg {} fedlec {} delta {delta:+.2} pts",
            fmt(&h.fedavg),
            fmt(&h.fedlec)
        ));
    }
    within(start.elapsed(), Duration::from_secs(15 * 60), "sweep")?;
    let detail = lines.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(format!("need delta >= +5 on both; {detail}"))
    }
}

/// Mean test accuracy over the labels a client never saw.
fn missing_label_accuracy(sim: &Simulation, params: &ParamVector, client: usize, test: &Dataset) -> f64 {
    let eval = evaluate(params, test, sim.spec()).unwrap();
    let missing = &sim.stats()[client].missing;
    missing.iter().map(|&l| eval.per_label_accuracy[l]).sum::<f64>() / missing.len() as f64
}

fn c8_missing_labels() -> Outcome {
    let seed = SEEDS[0];
    let mut rc = desk_config("cnum:2");
    rc.local_epochs = 1;
    let (train, test) = rc.datasets(seed).unwrap();
    let avg_cfg = rc.experiment(Algorithm::FedAvg, seed).unwrap();
    let lec_cfg = rc.experiment(Algorithm::FedLec, seed).unwrap();
    let avg = Simulation::new(&avg_cfg, &train, &test).unwrap();
    let lec = Simulation::new(&lec_cfg, &train, &test).unwrap();
    // a shared, partly trained global model as the starting point
    let mut warm = avg_cfg.clone();
    warm.rounds = 5;
    let global = Simulation::new(&warm, &train, &test).unwrap().run(workers(), |_, _| Ok(())).unwrap().final_params;

    let clients = sample_clients(10, 0.3, seed, 0).unwrap();
    let mut a = vec![];
    let mut l = vec![];
    for &c in &clients {
        let up = avg.train_client(c, &global, 5).unwrap();
        a.push(missing_label_accuracy(&avg, &up.params, c, &test));
        let up = lec.train_client(c, &global, 5).unwrap();
        l.push(missing_label_accuracy(&lec, &up.params, c, &test));
    }
    let (ma, ml) = (mean(&a), mean(&l));
    let detail = format!(
        "clients {clients:?}: fedavg {} (mean {:.2}%) fedlec {} (mean {:.2}%)",
        fmt(&a),
        100.0 * ma,
        fmt(&l),
        100.0 * ml
    );
    if ma < 0.02 && ml >= 0.10 {
        Ok(detail)
    } else {
        Err(format!("need fedavg < 2% and fedlec >= 10%; {detail}"))
    }
}

fn c9_ablation() -> Outcome {
    let h = headline("dir:0.1");
    let gc_only: Vec<f64> = SEEDS
        .iter()
        .map(|&s| final_accuracy("dir:0.1", Algorithm::FedLec, THETA, 0.0, s))
        .collect();
    let ad_only: Vec<f64> = SEEDS
        .iter()
        .map(|&s| final_accuracy("dir:0.1", Algorithm::FedLec, 0.0, LAMBDA, s))
        .collect();
    let (full, gc, ad, avg) = (mean(&h.fedlec), mean(&gc_only), mean(&ad_only), mean(&h.fedavg));
    let detail = format!(
        "full {:.2} gc-only {:.2} ad-only {:.2} fedavg {:.2}",
        100.0 * full,
        100.0 * gc,
        100.0 * ad,
        100.0 * avg
    );
    if full >= gc && full >= ad && ad > avg {
        Ok(detail)
    } else {
        Err(format!("need full >= gc-only, full >= ad-only, ad-only > fedavg; {detail}"))
    }
}
