//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; pass a substring to run a subset, e.g.
//! `cargo test --test acceptance -- ablation`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dgakt::autodiff::{finite_difference_check, Tape};
use dgakt::eval::unseen::{unseen_protocol, TypePartition};
use dgakt::eval::{auc, blended_bce, evaluate_graphs, exercise_mean_baseline, Variant};
use dgakt::model::{GraphBatch, Hyperparams, Model, ModelSpec};
use dgakt::store::{chronological_split, segment_into_subsequences, InteractionLog, SplitRatios};
use dgakt::subgraph::{build, EnclosingSubgraph, SubgraphConfig, Target};
use dgakt::synth::{overfit_set, planted_mastery, random_log, PlantedConfig, RandomLogConfig};
use dgakt::train::{split_target_sets, train, train_on_graphs, TargetSet, TrainConfig};
use dgakt_cli::config::RunConfig;
use dgakt_cli::pipeline::{train_run, HISTORY_FILE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, started: Instant) -> (bool, String) {
    let t = started.elapsed();
    (t < limit, format!("{:.1}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

/// All targets of a random log, segmented at `n`.
fn random_graphs(seed: u64, cfg: &RandomLogConfig, n: usize, sub: &SubgraphConfig) -> Vec<EnclosingSubgraph> {
    let log = InteractionLog::from_records(random_log(seed, cfg)).unwrap();
    let set = TargetSet::new(log.clone(), &log, n).unwrap();
    set.build(sub).unwrap()
}

fn small_log_config() -> RandomLogConfig {
    RandomLogConfig {
        students: 6,
        exercises: 8,
        kcs: 5,
        max_kcs_per_exercise: 3,
        rows: 40,
        max_timestamp: 1000,
    }
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let graph = (0..)
        .flat_map(|seed| random_graphs(seed, &small_log_config(), 8, &SubgraphConfig::default()))
        .find(|g| g.node_count() == 10 && g.edges.len() >= 8)
        .unwrap();
    let model = Model::new(Hyperparams::default(), Default::default(), 11).unwrap();
    let batch = GraphBatch::new(&[&graph]).unwrap();
    let report = finite_difference_check(&model.params, 1e-5, None, |tape: &mut Tape, vars| {
        let out = model.forward(tape, vars, &batch)?;
        Ok(model.loss(tape, &out, &batch.labels)?.total)
    })
    .unwrap();
    let (fast, time) = within(Duration::from_secs(60), started);
    outcome(
        report.max_relative_error < 1e-4 && fast && report.coordinates_checked == model.count_parameters(),
        format!(
            "max rel err {:.3e} over {} coordinates (limit 1e-4), {time}",
            report.max_relative_error, report.coordinates_checked
        ),
    )
}

fn attention_normalization() -> Outcome {
    let model = Model::new(Hyperparams::default(), Default::default(), 5).unwrap();
    let heads = model.hyper.heads;
    let mut graphs = Vec::new();
    let mut seed = 100;
    while graphs.len() < 1000 {
        graphs.extend(random_graphs(seed, &small_log_config(), 6, &SubgraphConfig::default()));
        seed += 1;
    }
    graphs.truncate(1000);
    let mut worst: f64 = 0.0;
    let mut sums = 0usize;
    for chunk in graphs.chunks(50) {
        let refs: Vec<&EnclosingSubgraph> = chunk.iter().collect();
        let batch = GraphBatch::new(&refs).unwrap();
        let record = model.predict(&batch).unwrap();
        for alpha in &record.alpha {
            let mut per_node = vec![vec![0.0; heads]; batch.node_count()];
            let mut has_in = vec![false; batch.node_count()];
            for (row, &dst) in batch.edge_dst.iter().enumerate() {
                has_in[dst as usize] = true;
                for (h, sum) in per_node[dst as usize].iter_mut().enumerate() {
                    *sum += alpha.get(row, h);
                }
            }
            for s in per_node.iter().zip(&has_in).filter(|(_, &h)| h).map(|(s, _)| s) {
                for v in s {
                    worst = worst.max((v - 1.0).abs());
                    sums += 1;
                }
            }
        }
        for beta in &record.beta {
            for g in 0..batch.graph_count {
                for h in 0..heads {
                    let s: f64 = (batch.offsets[g]..batch.offsets[g + 1]).map(|i| beta.get(i, h)).sum();
                    worst = worst.max((s - 1.0).abs());
                    sums += 1;
                }
            }
        }
    }
    outcome(
        worst < 1e-6,
        format!("{sums} sums over 1000 subgraphs, max |sum - 1| = {worst:.2e} (limit 1e-6)"),
    )
}

fn permutation_invariance() -> Outcome {
    let model = Model::new(Hyperparams::default(), Default::default(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut graphs = Vec::new();
    let mut seed = 500;
    while graphs.len() < 100 {
        graphs.extend(random_graphs(seed, &small_log_config(), 8, &SubgraphConfig::default()));
        seed += 1;
    }
    graphs.truncate(100);
    let mut worst: f64 = 0.0;
    for g in &graphs {
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut rng);
        let shuffled = g.permute(&perm).unwrap();
        let a = model.predict(&GraphBatch::new(&[g]).unwrap()).unwrap().triples[0];
        let b = model.predict(&GraphBatch::new(&[&shuffled]).unwrap()).unwrap().triples[0];
        worst = worst
            .max((a.blended - b.blended).abs())
            .max((a.local - b.local).abs())
            .max((a.global.unwrap() - b.global.unwrap()).abs());
    }
    outcome(worst < 1e-8, format!("max |Δr̂| = {worst:.2e} over 100 subgraphs (limit 1e-8)"))
}

fn subgraph_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut targets = 0usize;
    for trial in 0..500u64 {
        let cfg = RandomLogConfig {
            students: rng.gen_range(1..=8),
            exercises: rng.gen_range(1..=10),
            kcs: rng.gen_range(1..=6),
            max_kcs_per_exercise: rng.gen_range(0..=3),
            rows: rng.gen_range(1..=50),
            max_timestamp: rng.gen_range(0..=200),
        };
        let records = random_log(trial, &cfg);
        let log = InteractionLog::from_records(records.clone()).unwrap();
        let order = common::chronological(&records);
        let n = rng.gen_range(2..=8);
        let include_kcs = trial % 4 != 3;
        let sub_cfg = SubgraphConfig {
            neighbor_cap: None,
            include_kcs,
            ..SubgraphConfig::default()
        };
        for sub in segment_into_subsequences(&log, n).unwrap() {
            let members: Vec<usize> = sub.rows.iter().map(|r| order[r.id as usize]).collect();
            for pos in 0..sub.rows.len() {
                let built = build(&log, Target::new(&sub, pos).unwrap(), &sub_cfg).unwrap();
                let expected = common::enumerate(&records, &members, members[pos], include_kcs);
                let actual = common::from_builder(&built, log.vocab());
                if let Err(msg) = expected.matches(&actual, 1e-6) {
                    return outcome(false, format!("log {trial}, target {pos}: {msg}"));
                }
                targets += 1;
            }
        }
    }
    outcome(true, format!("500 logs, {targets} targets, all equal to the enumeration"))
}

fn overfit() -> Outcome {
    let started = Instant::now();
    let log = InteractionLog::from_records(overfit_set(0)).unwrap();
    let cfg = TrainConfig {
        max_epochs: 500,
        early_stopping: false,
        ..TrainConfig::default()
    };
    let set = TargetSet::new(log.clone(), &log, cfg.spec.hyper.subsequence_len).unwrap();
    let graphs = set.build(&cfg.spec.subgraph_config()).unwrap();
    let out = train_on_graphs(&graphs, &graphs, &cfg, &mut |_| Ok(())).unwrap();
    let bce = blended_bce(&evaluate_graphs(&out.last, &graphs, 64).unwrap());
    let (fast, time) = within(Duration::from_secs(300), started);
    outcome(
        bce < 0.05 && fast && graphs.len() == 64,
        format!("train BCE {bce:.4} after 500 epochs on {} targets (limit 0.05), {time}", graphs.len()),
    )
}

fn planted_log(config: &PlantedConfig) -> InteractionLog {
    InteractionLog::from_records(planted_mastery(config).records).unwrap()
}

fn planted_learning() -> Outcome {
    let started = Instant::now();
    let log = planted_log(&PlantedConfig::default());
    let cfg = TrainConfig::default();
    let [train_set, val_set, test_set] =
        split_target_sets(&log, SplitRatios::default(), cfg.spec.hyper.subsequence_len).unwrap();
    let out = train(&train_set, &val_set, &cfg, None, &mut |_| Ok(())).unwrap();
    let test_graphs = test_set.build(&cfg.spec.subgraph_config()).unwrap();
    let model_auc = evaluate_graphs(&out.best.model().unwrap(), &test_graphs, 256).unwrap().metrics.auc;

    let (train_log, val_log, test_log) = chronological_split(&log, SplitRatios::default()).unwrap();
    let history = InteractionLog::merge(&[&train_log, &val_log]).unwrap();
    let baseline = exercise_mean_baseline(&history, &test_log);
    let labels: Vec<bool> = test_log.rows().iter().map(|r| r.response).collect();
    let baseline_auc = auc(&baseline, &labels).unwrap().value;
    let (fast, time) = within(Duration::from_secs(600), started);
    outcome(
        model_auc >= 0.85 && model_auc - baseline_auc >= 0.10 && fast,
        format!(
            "test AUC {model_auc:.4} (min 0.85), exercise-mean baseline {baseline_auc:.4}, \
             margin {:.4} (min 0.10), best epoch {}, {time}",
            model_auc - baseline_auc,
            out.best.epoch
        ),
    )
}

/// Trains one spec per seed on shared prebuilt graphs; returns test AUCs.
fn seeded_aucs(log: &InteractionLog, base: &TrainConfig, spec: &ModelSpec, seeds: &[u64]) -> Vec<f64> {
    let n = spec.hyper.subsequence_len;
    let [train_set, val_set, test_set] = split_target_sets(log, SplitRatios::default(), n).unwrap();
    let sub = spec.subgraph_config();
    let (tr, va, te) = (
        train_set.build(&sub).unwrap(),
        val_set.build(&sub).unwrap(),
        test_set.build(&sub).unwrap(),
    );
    seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                spec: spec.clone(),
                seed,
                ..base.clone()
            };
            let out = train_on_graphs(&tr, &va, &cfg, &mut |_| Ok(())).unwrap();
            evaluate_graphs(&out.best.model().unwrap(), &te, 256).unwrap().metrics.auc
        })
        .collect()
}

/// Epoch budget for the multi-run experiments below.
fn short_training() -> TrainConfig {
    TrainConfig {
        max_epochs: 12,
        patience: 3,
        ..TrainConfig::default()
    }
}

fn ablation_ordering() -> Outcome {
    let log = planted_log(&PlantedConfig::default());
    let base = short_training();
    let seeds = [0, 1, 2, 3, 4];
    let means: Vec<(Variant, f64)> = Variant::ALL
        .iter()
        .map(|&v| {
            let aucs = seeded_aucs(&log, &base, &v.apply(&base.spec), &seeds);
            (v, aucs.iter().sum::<f64>() / aucs.len() as f64)
        })
        .collect();
    let full = means[0].1;
    let pass = means[1..].iter().all(|&(_, m)| full >= m);
    let table: Vec<String> = means.iter().map(|(v, m)| format!("{v} {m:.4}")).collect();
    outcome(pass, format!("mean test AUC over 5 seeds: {}", table.join(", ")))
}

fn unseen_types() -> Outcome {
    let log = planted_log(&PlantedConfig {
        exercise_types: 3,
        ..PlantedConfig::default()
    });
    let partition: TypePartition = "1,2/3".parse().unwrap();
    let results = unseen_protocol(&log, &[partition], &TrainConfig::default()).unwrap();
    let r = &results[0];
    outcome(
        r.metrics.auc >= 0.70,
        format!(
            "types 1,2 -> 3: test AUC {:.4} on {} targets (min 0.70)",
            r.metrics.auc, r.test_targets
        ),
    )
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi && !yj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    if pairs == 0.0 {
        0.5
    } else {
        wins / pairs
    }
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut tied = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=200);
        let levels = rng.gen_range(1..=20);
        let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let p = rng.gen_range(0.05..0.95);
        let labels: Vec<bool> = (0..len).map(|_| rng.gen_bool(p)).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        tied += usize::from(sorted.windows(2).any(|w| w[0] == w[1]));
        let fast = auc(&scores, &labels).unwrap().value;
        worst = worst.max((fast - pairwise_auc(&scores, &labels)).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("1000 vectors ({tied} with ties), max |Δ| = {worst:.2e} (limit 1e-12)"),
    )
}

fn parameter_count() -> Outcome {
    let count = Model::new(Hyperparams::default(), Default::default(), 0)
        .unwrap()
        .count_parameters();
    outcome(
        (10_000..=100_000).contains(&count),
        format!("{count} parameters (range 1e4..1e5)"),
    )
}

fn length_sweep() -> Outcome {
    let log = planted_log(&PlantedConfig::default());
    let base = short_training();
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [4, 8, 16] {
        let mut spec = base.spec.clone();
        spec.hyper.subsequence_len = n;
        let a = seeded_aucs(&log, &base, &spec, &[0])[0];
        pass &= a.is_finite();
        parts.push(format!("n={n} AUC {a:.4}"));
    }
    outcome(pass, parts.join(", "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("planted.csv");
    let data = planted_mastery(&PlantedConfig {
        students: 40,
        ..PlantedConfig::default()
    });
    let log = InteractionLog::from_records(data.records).unwrap();
    dgakt::store::write_interaction_log(&log, std::fs::File::create(&input).unwrap()).unwrap();
    let config = RunConfig {
        input: input.display().to_string(),
        max_epochs: 4,
        seed: 7,
        ..RunConfig::default()
    };
    let run = |name: &str| {
        let out = dir.path().join(name);
        train_run(&config, &out).unwrap();
        std::fs::read(out.join(HISTORY_FILE)).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    outcome(
        a == b && lines > 0,
        format!("{} history lines, {} vs {} bytes, identical: {}", lines, a.len(), b.len(), a == b),
    )
}

type Criterion = (u8, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 12] = [
    (1, "gradient check", gradient_check),
    (2, "attention normalization", attention_normalization),
    (3, "permutation invariance", permutation_invariance),
    (4, "subgraph oracle", subgraph_oracle),
    (5, "overfit", overfit),
    (6, "planted mastery", planted_learning),
    (7, "ablation ordering", ablation_ordering),
    (8, "unseen types", unseen_types),
    (9, "auc oracle", auc_oracle),
    (10, "parameter count", parameter_count),
    (11, "length sweep", length_sweep),
    (12, "determinism", determinism),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str()) || id.to_string() == *f) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!result.pass);
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
