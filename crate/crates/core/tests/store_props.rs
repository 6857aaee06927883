use std::collections::HashMap;

use dgakt::store::{
    chronological_split, parse_interaction_log, segment_into_subsequences, write_interaction_log, ColumnMap,
    InteractionLog, SplitRatios,
};
use dgakt::synth::{random_log, RandomLogConfig};
use proptest::prelude::*;

fn log_for(seed: u64, rows: usize) -> (Vec<dgakt::store::RawInteraction>, InteractionLog) {
    let config = RandomLogConfig {
        students: 6,
        exercises: 9,
        kcs: 5,
        max_kcs_per_exercise: 3,
        rows,
        max_timestamp: 40,
    };
    let records = random_log(seed, &config);
    let log = InteractionLog::from_records(records.clone()).unwrap();
    (records, log)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_sizes_and_order(seed in any::<u64>(), rows in 1usize..120, train in 1u32..8, val in 1u32..8, test in 1u32..8) {
        let (_, log) = log_for(seed, rows);
        let total = f64::from(train + val + test);
        let ratios = SplitRatios { train: f64::from(train) / total, val: f64::from(val) / total, test: f64::from(test) / total };
        let (a, b, c) = chronological_split(&log, ratios).unwrap();
        // Integer form of floor(N * cumulative ratio), free of rounding.
        let cut1 = rows * train as usize / (train + val + test) as usize;
        let cut2 = rows * (train + val) as usize / (train + val + test) as usize;
        prop_assert_eq!(a.len(), cut1);
        prop_assert_eq!(b.len(), cut2 - cut1);
        prop_assert_eq!(c.len(), rows - cut2);
        let stamps: Vec<i64> = [&a, &b, &c].iter().flat_map(|l| l.rows().iter().map(|r| r.timestamp)).collect();
        prop_assert!(stamps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn segmentation_covers_all_but_singletons(seed in any::<u64>(), rows in 0usize..150, n in 2usize..9) {
        let (_, log) = log_for(seed, rows);
        let subs = segment_into_subsequences(&log, n).unwrap();
        let mut covered = HashMap::new();
        for sub in &subs {
            prop_assert!(sub.rows.len() >= 2 && sub.rows.len() <= n);
            prop_assert!(sub.rows.iter().all(|r| r.student == sub.student));
            for r in &sub.rows {
                prop_assert!(covered.insert(r.id, ()).is_none(), "row {} in two subsequences", r.id);
            }
        }
        let mut per_student: HashMap<_, usize> = HashMap::new();
        for r in log.rows() {
            *per_student.entry(r.student).or_default() += 1;
        }
        let lost: usize = per_student.values().filter(|&&k| k % n == 1).count();
        prop_assert_eq!(covered.len() + lost, log.len());
    }

    #[test]
    fn prior_count_counts_earlier_rows(seed in any::<u64>(), rows in 0usize..100) {
        let (records, log) = log_for(seed, rows);
        for r in log.rows() {
            let raw = &records[..];
            let name = log.vocab().student_name(r.student);
            // Ties are ordered by file position, checked separately below.
            let before = raw.iter().filter(|x| x.student_id == name && x.timestamp < r.timestamp).count() as u32;
            let ties = raw.iter().filter(|x| x.student_id == name && x.timestamp == r.timestamp).count() as u32;
            prop_assert!(r.prior_count >= before && r.prior_count < before + ties, "{} not in [{before}, {})", r.prior_count, before + ties);
        }
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), rows in 0usize..80) {
        let (_, log) = log_for(seed, rows);
        let mut bytes = Vec::new();
        write_interaction_log(&log, &mut bytes).unwrap();
        let back = parse_interaction_log(bytes.as_slice(), &ColumnMap::default()).unwrap();
        prop_assert_eq!(back.len(), log.len());
        let (va, vb) = (log.vocab(), back.vocab());
        for (a, b) in log.rows().iter().zip(back.rows()) {
            prop_assert_eq!(va.student_name(a.student), vb.student_name(b.student));
            prop_assert_eq!(va.exercise_name(a.exercise), vb.exercise_name(b.exercise));
            prop_assert_eq!(va.type_name(a.exercise_type), vb.type_name(b.exercise_type));
            prop_assert_eq!((a.timestamp, a.response, a.prior_count), (b.timestamp, b.response, b.prior_count));
            let names = |v: &dgakt::store::Vocabulary, e| v.kcs_of(e).iter().map(|&k| v.kc_name(k).to_owned()).collect::<Vec<_>>();
            prop_assert_eq!(names(va, a.exercise), names(vb, b.exercise));
        }
        let mut again = Vec::new();
        write_interaction_log(&back, &mut again).unwrap();
        prop_assert_eq!(bytes, again);
    }
}

#[test]
fn prior_count_ties_follow_file_order() {
    let src = "student_id,exercise_id,timestamp_ms,response,exercise_type,kc_ids\n\
               s1,e2,5,1,1,\n\
               s1,e1,5,0,1,\n\
               s1,e3,1,1,1,\n";
    let log = parse_interaction_log(src.as_bytes(), &ColumnMap::default()).unwrap();
    let order: Vec<(&str, u32)> = log
        .rows()
        .iter()
        .map(|r| (log.vocab().exercise_name(r.exercise), r.prior_count))
        .collect();
    assert_eq!(order, [("e3", 0), ("e2", 1), ("e1", 2)]);
}
