//! Synthetic interaction logs with known structure.
//!
//! The planted-mastery generator draws each student's exercises at random
//! and answers correctly exactly when the student already has correct
//! answers on at least `threshold` other exercises that share a KC with the
//! current one, before flipping each label with probability `noise`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::store::RawInteraction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub students: usize,
    pub exercises: usize,
    pub kcs: usize,
    pub interactions_per_student: usize,
    pub min_kcs_per_exercise: usize,
    pub max_kcs_per_exercise: usize,
    /// Number of exercise types, named "1", "2", ...
    pub exercise_types: usize,
    pub threshold: usize,
    pub noise: f64,
    /// Student start times are uniform in `[0, stagger_ms)`.
    pub stagger_ms: i64,
    /// Gaps between a student's interactions are uniform in `[1, max_gap_ms]`.
    pub max_gap_ms: i64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            students: 200,
            exercises: 50,
            kcs: 10,
            interactions_per_student: 30,
            min_kcs_per_exercise: 2,
            max_kcs_per_exercise: 3,
            exercise_types: 1,
            threshold: 2,
            noise: 0.1,
            stagger_ms: 20_000,
            max_gap_ms: 120,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedDataset {
    pub records: Vec<RawInteraction>,
    /// Noise-free label of each record.
    pub truth: Vec<bool>,
}

pub fn planted_mastery(config: &PlantedConfig) -> PlantedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let kc_sets: Vec<Vec<usize>> = (0..config.exercises)
        .map(|_| {
            let size = rng
                .gen_range(config.min_kcs_per_exercise..=config.max_kcs_per_exercise)
                .min(config.kcs);
            let mut kcs = sample(&mut rng, config.kcs, size).into_vec();
            kcs.sort_unstable();
            kcs
        })
        .collect();
    let types: Vec<usize> = (0..config.exercises)
        .map(|_| rng.gen_range(0..config.exercise_types.max(1)))
        .collect();
    let shares = |a: usize, b: usize| kc_sets[a].iter().any(|k| kc_sets[b].contains(k));

    let mut records = Vec::new();
    let mut truth = Vec::new();
    for s in 0..config.students {
        let mut t = if config.stagger_ms > 0 {
            rng.gen_range(0..config.stagger_ms)
        } else {
            0
        };
        let mut solved = vec![false; config.exercises];
        for _ in 0..config.interactions_per_student {
            let e = rng.gen_range(0..config.exercises);
            let support = (0..config.exercises)
                .filter(|&c| c != e && solved[c] && shares(c, e))
                .count();
            let clean = support >= config.threshold;
            let observed = clean ^ (rng.gen::<f64>() < config.noise);
            if observed {
                solved[e] = true;
            }
            records.push(RawInteraction {
                student_id: format!("s{s:04}"),
                exercise_id: format!("e{e:03}"),
                timestamp: t,
                response: u8::from(observed),
                exercise_type: (types[e] + 1).to_string(),
                kc_ids: kc_sets[e].iter().map(|k| format!("k{k:02}")).collect(),
            });
            truth.push(clean);
            t += rng.gen_range(1..=config.max_gap_ms.max(1));
        }
    }
    PlantedDataset { records, truth }
}

/// Small noise-free planted log: 8 students with 8 interactions each.
pub fn overfit_set(seed: u64) -> Vec<RawInteraction> {
    planted_mastery(&PlantedConfig {
        students: 8,
        exercises: 16,
        kcs: 4,
        interactions_per_student: 8,
        min_kcs_per_exercise: 1,
        max_kcs_per_exercise: 2,
        threshold: 1,
        noise: 0.0,
        seed,
        ..PlantedConfig::default()
    })
    .records
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomLogConfig {
    pub students: usize,
    pub exercises: usize,
    pub kcs: usize,
    pub max_kcs_per_exercise: usize,
    pub rows: usize,
    /// Timestamps are drawn from `[0, max_timestamp]`, so ties occur.
    pub max_timestamp: i64,
}

/// Unstructured log for property tests: uniform students, exercises,
/// timestamps and responses; exercises carry 0..=max KCs.
pub fn random_log(seed: u64, config: &RandomLogConfig) -> Vec<RawInteraction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kc_sets: Vec<Vec<String>> = (0..config.exercises)
        .map(|_| {
            let size = rng.gen_range(0..=config.max_kcs_per_exercise.min(config.kcs));
            sample(&mut rng, config.kcs, size)
                .into_iter()
                .map(|k| format!("k{k}"))
                .collect()
        })
        .collect();
    (0..config.rows)
        .map(|_| {
            let e = rng.gen_range(0..config.exercises);
            RawInteraction {
                student_id: format!("s{}", rng.gen_range(0..config.students)),
                exercise_id: format!("e{e}"),
                timestamp: rng.gen_range(0..=config.max_timestamp),
                response: rng.gen_range(0..=1),
                exercise_type: format!("{}", e % 3 + 1),
                kc_ids: kc_sets[e].clone(),
            }
        })
        .collect()
}
