//! Interaction logs: CSV ingestion, indexing, chronological splitting and
//! per-student segmentation.
//!
//! A log is an immutable, chronologically ordered list of [`Interaction`]s
//! whose string keys are interned into a [`Vocabulary`] shared by every log
//! derived from it (splits, partitions, merges). Interaction ids are the
//! positions in the original ingested log, so a row keeps its identity
//! across all derived logs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(StudentId);
id_type!(ExerciseId);
id_type!(KcId);
id_type!(TypeId);

#[derive(Debug, Default, Clone)]
struct Interner {
    names: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.lookup.get(key) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(key.to_owned());
        self.lookup.insert(key.to_owned(), id);
        id
    }

    fn get(&self, key: &str) -> Option<u32> {
        self.lookup.get(key).copied()
    }
}

/// Interned keys plus the exercise→KC and KC→exercise maps.
#[derive(Debug, Default, Clone)]
pub struct Vocabulary {
    students: Interner,
    exercises: Interner,
    kcs: Interner,
    types: Interner,
    exercise_kcs: Vec<Vec<KcId>>,
    kc_exercises: Vec<Vec<ExerciseId>>,
}

impl Vocabulary {
    pub fn student_count(&self) -> usize {
        self.students.names.len()
    }

    pub fn exercise_count(&self) -> usize {
        self.exercises.names.len()
    }

    pub fn kc_count(&self) -> usize {
        self.kcs.names.len()
    }

    pub fn student_name(&self, id: StudentId) -> &str {
        &self.students.names[id.index()]
    }

    pub fn exercise_name(&self, id: ExerciseId) -> &str {
        &self.exercises.names[id.index()]
    }

    pub fn kc_name(&self, id: KcId) -> &str {
        &self.kcs.names[id.index()]
    }

    pub fn type_name(&self, id: TypeId) -> &str {
        &self.types.names[id.index()]
    }

    pub fn student(&self, key: &str) -> Option<StudentId> {
        self.students.get(key).map(StudentId)
    }

    pub fn exercise(&self, key: &str) -> Option<ExerciseId> {
        self.exercises.get(key).map(ExerciseId)
    }

    pub fn kc(&self, key: &str) -> Option<KcId> {
        self.kcs.get(key).map(KcId)
    }

    pub fn exercise_type(&self, key: &str) -> Option<TypeId> {
        self.types.get(key).map(TypeId)
    }

    pub fn kcs_of(&self, exercise: ExerciseId) -> &[KcId] {
        &self.exercise_kcs[exercise.index()]
    }

    pub fn exercises_of(&self, kc: KcId) -> &[ExerciseId] {
        &self.kc_exercises[kc.index()]
    }
}

/// One logged attempt of a student on an exercise.
///
/// `prior_count` is the number of interactions the student had before this
/// one in the full ingested log; it does not change when the row is copied
/// into a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub id: u32,
    pub student: StudentId,
    pub exercise: ExerciseId,
    pub timestamp: i64,
    pub response: bool,
    pub exercise_type: TypeId,
    pub prior_count: u32,
}

/// An interaction with its keys still as strings, before interning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawInteraction {
    pub student_id: String,
    pub exercise_id: String,
    pub timestamp: i64,
    pub response: u8,
    pub exercise_type: String,
    pub kc_ids: Vec<String>,
}

/// Mapping from canonical column names to the names used in a source file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnMap {
    pub student_id: String,
    pub exercise_id: String,
    pub timestamp_ms: String,
    pub response: String,
    pub exercise_type: String,
    pub kc_ids: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            student_id: "student_id".into(),
            exercise_id: "exercise_id".into(),
            timestamp_ms: "timestamp_ms".into(),
            response: "response".into(),
            exercise_type: "exercise_type".into(),
            kc_ids: "kc_ids".into(),
        }
    }
}

impl ColumnMap {
    /// Parses `canonical=actual` pairs separated by commas, starting from the
    /// canonical mapping. Example: `student_id=user,kc_ids=skills`.
    pub fn from_overrides(spec: &str) -> Result<Self> {
        let mut map = Self::default();
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("schema entry `{pair}` is not key=value"))
            })?;
            let slot = match key.trim() {
                "student_id" => &mut map.student_id,
                "exercise_id" => &mut map.exercise_id,
                "timestamp_ms" => &mut map.timestamp_ms,
                "response" => &mut map.response,
                "exercise_type" => &mut map.exercise_type,
                "kc_ids" => &mut map.kc_ids,
                other => {
                    return Err(Error::UnknownKey {
                        kind: "schema column",
                        key: other.to_owned(),
                    })
                }
            };
            *slot = value.trim().to_owned();
        }
        Ok(map)
    }
}

/// A chronologically sorted, indexed interaction log.
#[derive(Debug, Clone)]
pub struct InteractionLog {
    vocab: Arc<Vocabulary>,
    rows: Vec<Interaction>,
    by_student: Vec<Vec<usize>>,
    by_exercise: Vec<Vec<usize>>,
}

impl InteractionLog {
    /// Builds a log from raw records. Rows are stably sorted by timestamp.
    pub fn from_records(records: Vec<RawInteraction>) -> Result<Self> {
        Self::from_numbered_records(records.into_iter().enumerate().map(|(i, r)| (i as u64 + 1, r)))
    }

    fn from_numbered_records(records: impl IntoIterator<Item = (u64, RawInteraction)>) -> Result<Self> {
        let mut vocab = Vocabulary::default();
        let mut pending = Vec::new();
        for (row, rec) in records {
            if rec.response > 1 {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("response must be 0 or 1, got {}", rec.response),
                });
            }
            if rec.timestamp < 0 {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("negative timestamp {}", rec.timestamp),
                });
            }
            let student = StudentId(vocab.students.intern(&rec.student_id));
            let exercise = ExerciseId(vocab.exercises.intern(&rec.exercise_id));
            let exercise_type = TypeId(vocab.types.intern(&rec.exercise_type));

            let mut seen = HashSet::new();
            let kcs: Vec<KcId> = rec
                .kc_ids
                .iter()
                .filter(|k| seen.insert(k.as_str()))
                .map(|k| KcId(vocab.kcs.intern(k)))
                .collect();

            if exercise.index() == vocab.exercise_kcs.len() {
                vocab.exercise_kcs.push(kcs);
            } else {
                let known = &vocab.exercise_kcs[exercise.index()];
                let a: BTreeSet<_> = known.iter().collect();
                let b: BTreeSet<_> = kcs.iter().collect();
                if a != b {
                    let names = |ids: &[KcId]| -> Vec<String> {
                        ids.iter().map(|k| vocab.kcs.names[k.index()].clone()).collect()
                    };
                    return Err(Error::InconsistentKcs {
                        exercise: rec.exercise_id,
                        first: names(known),
                        second: names(&kcs),
                    });
                }
            }
            pending.push((rec.timestamp, student, exercise, rec.response == 1, exercise_type));
        }

        vocab.kc_exercises = vec![Vec::new(); vocab.kcs.names.len()];
        for (e, kcs) in vocab.exercise_kcs.iter().enumerate() {
            for kc in kcs {
                vocab.kc_exercises[kc.index()].push(ExerciseId(e as u32));
            }
        }

        // Stable: ties keep input order.
        pending.sort_by_key(|p| p.0);
        let mut seen_per_student = vec![0u32; vocab.students.names.len()];
        let rows = pending
            .into_iter()
            .enumerate()
            .map(|(i, (timestamp, student, exercise, response, exercise_type))| {
                let prior = &mut seen_per_student[student.index()];
                let row = Interaction {
                    id: i as u32,
                    student,
                    exercise,
                    timestamp,
                    response,
                    exercise_type,
                    prior_count: *prior,
                };
                *prior += 1;
                row
            })
            .collect();
        Ok(Self::with_rows(Arc::new(vocab), rows))
    }

    /// A log over `rows` (which must be sorted by id) sharing `vocab`.
    fn with_rows(vocab: Arc<Vocabulary>, rows: Vec<Interaction>) -> Self {
        let mut by_student = vec![Vec::new(); vocab.student_count()];
        let mut by_exercise = vec![Vec::new(); vocab.exercise_count()];
        for (pos, row) in rows.iter().enumerate() {
            by_student[row.student.index()].push(pos);
            by_exercise[row.exercise.index()].push(pos);
        }
        Self {
            vocab,
            rows,
            by_student,
            by_exercise,
        }
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn rows(&self) -> &[Interaction] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Positions (into [`rows`](Self::rows)) of the student's interactions,
    /// in chronological order.
    pub fn student_positions(&self, student: StudentId) -> &[usize] {
        self.by_student.get(student.index()).map_or(&[], Vec::as_slice)
    }

    pub fn exercise_positions(&self, exercise: ExerciseId) -> &[usize] {
        self.by_exercise.get(exercise.index()).map_or(&[], Vec::as_slice)
    }

    pub fn student_rows(&self, student: StudentId) -> impl Iterator<Item = &Interaction> + '_ {
        self.student_positions(student).iter().map(|&p| &self.rows[p])
    }

    pub fn exercise_rows(&self, exercise: ExerciseId) -> impl Iterator<Item = &Interaction> + '_ {
        self.exercise_positions(exercise).iter().map(|&p| &self.rows[p])
    }

    /// Students with at least one interaction in this log, in id order.
    pub fn students(&self) -> impl Iterator<Item = StudentId> + '_ {
        self.by_student
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty())
            .map(|(s, _)| StudentId(s as u32))
    }

    /// A new log holding the rows that satisfy `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&Interaction) -> bool) -> Self {
        let rows = self.rows.iter().copied().filter(|r| keep(r)).collect();
        Self::with_rows(self.vocab.clone(), rows)
    }

    /// Union of logs derived from the same ingested log.
    pub fn merge(logs: &[&InteractionLog]) -> Result<Self> {
        let Some(first) = logs.first() else {
            return Err(Error::InvalidArgument("cannot merge zero logs".into()));
        };
        if logs.iter().any(|l| !Arc::ptr_eq(&l.vocab, &first.vocab)) {
            return Err(Error::InvalidArgument(
                "logs do not share a vocabulary".into(),
            ));
        }
        let mut rows: Vec<Interaction> = logs.iter().flat_map(|l| l.rows.iter().copied()).collect();
        rows.sort_by_key(|r| r.id);
        rows.dedup_by_key(|r| r.id);
        Ok(Self::with_rows(first.vocab.clone(), rows))
    }

    pub fn kcs_of(&self, exercise: ExerciseId) -> &[KcId] {
        self.vocab.kcs_of(exercise)
    }
}

/// Parses a CSV byte stream with a header row into an indexed log.
///
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn parse_interaction_log<R: Read>(source: R, columns: &ColumnMap) -> Result<InteractionLog> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let idx = [
        find(&columns.student_id)?,
        find(&columns.exercise_id)?,
        find(&columns.timestamp_ms)?,
        find(&columns.response)?,
        find(&columns.exercise_type)?,
        find(&columns.kc_ids)?,
    ];

    let mut records = Vec::new();
    for result in reader.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let row = e.position().map_or(0, |p| p.line());
                let reason = match e.kind() {
                    csv::ErrorKind::UnequalLengths {
                        expected_len, len, ..
                    } => format!("expected {expected_len} fields, found {len}"),
                    _ => e.to_string(),
                };
                return Err(Error::MalformedRow { row, reason });
            }
        };
        let row = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let timestamp = field(idx[2]).parse::<i64>().map_err(|_| Error::MalformedRow {
            row,
            reason: format!("unparsable timestamp `{}`", field(idx[2])),
        })?;
        let response = match field(idx[3]) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("response must be 0 or 1, got `{other}`"),
                })
            }
        };
        let kc_ids = field(idx[5])
            .split(';')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(str::to_owned)
            .collect();
        records.push((
            row,
            RawInteraction {
                student_id: field(idx[0]).to_owned(),
                exercise_id: field(idx[1]).to_owned(),
                timestamp,
                response,
                exercise_type: field(idx[4]).to_owned(),
                kc_ids,
            },
        ));
    }
    InteractionLog::from_numbered_records(records)
}

/// Writes the log back out as canonical CSV, in chronological order.
pub fn write_interaction_log<W: Write>(log: &InteractionLog, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record([
        "student_id",
        "exercise_id",
        "timestamp_ms",
        "response",
        "exercise_type",
        "kc_ids",
    ])?;
    let vocab = log.vocab();
    for row in log.rows() {
        let kcs: Vec<&str> = vocab.kcs_of(row.exercise).iter().map(|&k| vocab.kc_name(k)).collect();
        writer.write_record([
            vocab.student_name(row.student),
            vocab.exercise_name(row.exercise),
            &row.timestamp.to_string(),
            if row.response { "1" } else { "0" },
            vocab.type_name(row.exercise_type),
            &kcs.join(";"),
        ])?;
    }
    writer.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

/// Dataset statistics in the layout of the usual KT dataset tables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub students: usize,
    pub exercises: usize,
    pub kcs: usize,
    pub kcs_per_exercise: f64,
    pub exercise_types: usize,
    pub interactions: usize,
    pub interactions_per_student: f64,
    pub percent_correct: f64,
}

impl Stats {
    pub fn to_text(&self) -> String {
        format!(
            "students: {}\nexercises: {}\nkcs: {}\nkcs_per_exercise: {:.4}\nexercise_types: {}\n\
             interactions: {}\ninteractions_per_student: {:.4}\npercent_correct: {:.4}\n",
            self.students,
            self.exercises,
            self.kcs,
            self.kcs_per_exercise,
            self.exercise_types,
            self.interactions,
            self.interactions_per_student,
            self.percent_correct
        )
    }
}

pub fn dataset_stats(log: &InteractionLog) -> Stats {
    let students = log.students().count();
    let exercises: BTreeSet<ExerciseId> = log.rows().iter().map(|r| r.exercise).collect();
    let types: BTreeSet<TypeId> = log.rows().iter().map(|r| r.exercise_type).collect();
    let mut kcs = BTreeSet::new();
    let mut kc_links = 0usize;
    for &e in &exercises {
        let attached = log.kcs_of(e);
        kc_links += attached.len();
        kcs.extend(attached.iter().copied());
    }
    let interactions = log.len();
    let correct = log.rows().iter().filter(|r| r.response).count();
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    Stats {
        students,
        exercises: exercises.len(),
        kcs: kcs.len(),
        kcs_per_exercise: ratio(kc_links as f64, exercises.len()),
        exercise_types: types.len(),
        interactions,
        interactions_per_student: ratio(interactions as f64, students),
        percent_correct: ratio(100.0 * correct as f64, interactions),
    }
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| p <= 0.0 || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be positive, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Splits by global chronological order at `floor(N * cumulative ratio)`.
pub fn chronological_split(
    log: &InteractionLog,
    ratios: SplitRatios,
) -> Result<(InteractionLog, InteractionLog, InteractionLog)> {
    ratios.validate()?;
    let n = log.len() as f64;
    // Cumulative products like 10 * (0.6 + 0.2) land a hair under the integer.
    let a = ((n * ratios.train) + 1e-9).floor() as usize;
    let b = ((n * (ratios.train + ratios.val)) + 1e-9).floor().min(n) as usize;
    let part = |range: std::ops::Range<usize>| {
        InteractionLog::with_rows(log.vocab.clone(), log.rows[range].to_vec())
    };
    Ok((part(0..a), part(a..b), part(b..log.len())))
}

/// Cuts at `floor(N * fraction)` in chronological order.
pub fn chronological_cut(log: &InteractionLog, fraction: f64) -> Result<(InteractionLog, InteractionLog)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "cut fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let a = ((log.len() as f64 * fraction) + 1e-9).floor().min(log.len() as f64) as usize;
    let part = |range: std::ops::Range<usize>| {
        InteractionLog::with_rows(log.vocab.clone(), log.rows[range].to_vec())
    };
    Ok((part(0..a), part(a..log.len())))
}

/// A contiguous, non-overlapping chunk of one student's sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subsequence {
    pub student: StudentId,
    pub rows: Vec<Interaction>,
}

/// Cuts every student's sequence into consecutive chunks of length `n`.
/// A trailing remainder is kept when it has at least two interactions.
pub fn segment_into_subsequences(log: &InteractionLog, n: usize) -> Result<Vec<Subsequence>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "subsequence length must be at least 2, got {n}"
        )));
    }
    let mut out = Vec::new();
    for student in log.students() {
        let rows: Vec<Interaction> = log.student_rows(student).copied().collect();
        for chunk in rows.chunks(n) {
            if chunk.len() >= 2 {
                out.push(Subsequence {
                    student,
                    rows: chunk.to_vec(),
                });
            }
        }
    }
    Ok(out)
}

/// Number of interactions the student had before the `position`-th one of
/// their sequence in this log, counted over the full ingested history.
pub fn previous_interaction_count(log: &InteractionLog, student: &str, position: usize) -> Result<u32> {
    let id = log
        .vocab
        .student(student)
        .filter(|&s| !log.student_positions(s).is_empty())
        .ok_or_else(|| Error::UnknownKey {
            kind: "student",
            key: student.to_owned(),
        })?;
    let positions = log.student_positions(id);
    let pos = positions.get(position).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "position {position} out of range for student `{student}` with {} interactions",
            positions.len()
        ))
    })?;
    Ok(log.rows[*pos].prior_count)
}

/// Routes interactions by exercise type into (train, test) logs. Rows whose
/// type is in neither set are dropped.
pub fn exercise_type_partition(
    log: &InteractionLog,
    train_types: &[String],
    test_types: &[String],
) -> Result<(InteractionLog, InteractionLog)> {
    let train: HashSet<&str> = train_types.iter().map(String::as_str).collect();
    let test: HashSet<&str> = test_types.iter().map(String::as_str).collect();
    if let Some(shared) = train.intersection(&test).next() {
        return Err(Error::InvalidArgument(format!(
            "exercise type `{shared}` is in both the train and test sets"
        )));
    }
    let vocab = log.vocab.clone();
    let is_in = |set: &HashSet<&str>, r: &Interaction| set.contains(vocab.type_name(r.exercise_type));
    Ok((log.filter(|r| is_in(&train, r)), log.filter(|r| is_in(&test, r))))
}
