//! Interaction log parsing, vocabulary building, sequence preparation and
//! student level splits.
//!
//! The on-disk format is CSV with header
//! `student_id,exercise_id,concept_ids,correct,order`. The `concept_ids`
//! field holds one or more concept labels separated by `;` (quote the
//! field when it lists several). `correct` must be 0 or 1 and `order` an
//! integer sort key per student.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DgektError, Result};

pub const CSV_HEADER: [&str; 5] = ["student_id", "exercise_id", "concept_ids", "correct", "order"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub student_id: String,
    pub exercise_id: String,
    pub concept_ids: Vec<String>,
    pub correct: bool,
    pub order: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
}

/// Parse result; rows whose concept list is empty are dropped, not fatal.
#[derive(Debug)]
pub struct ParsedLog {
    pub records: Vec<InteractionRecord>,
    pub dropped_no_concepts: usize,
}

pub fn parse_log<R: Read>(reader: R, format: LogFormat) -> Result<ParsedLog> {
    match format {
        LogFormat::Csv => parse_csv(reader),
    }
}

fn parse_csv<R: Read>(reader: R) -> Result<ParsedLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    {
        let headers = rdr.headers().map_err(|e| DgektError::Parse {
            row: 0,
            message: format!("unreadable header: {e}"),
        })?;
        let got: Vec<&str> = headers.iter().collect();
        if got != CSV_HEADER {
            return Err(DgektError::Parse {
                row: 0,
                message: format!("expected header {:?}, found {:?}", CSV_HEADER.join(","), got.join(",")),
            });
        }
    }

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| DgektError::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        if row.len() != 5 {
            return Err(DgektError::Parse {
                row: row_no,
                message: format!("expected 5 fields, found {}", row.len()),
            });
        }
        let student_id = row[0].to_string();
        let exercise_id = row[1].to_string();
        if student_id.is_empty() || exercise_id.is_empty() {
            return Err(DgektError::Parse {
                row: row_no,
                message: "student_id and exercise_id must be non-empty".into(),
            });
        }
        let concept_ids: Vec<String> = row[2]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let correct = match &row[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(DgektError::Parse {
                    row: row_no,
                    message: format!("correct must be 0 or 1, found {other:?}"),
                })
            }
        };
        let order: i64 = row[4].parse().map_err(|_| DgektError::Parse {
            row: row_no,
            message: format!("order must be an integer, found {:?}", &row[4]),
        })?;
        if concept_ids.is_empty() {
            dropped += 1;
            continue;
        }
        records.push(InteractionRecord {
            student_id,
            exercise_id,
            concept_ids,
            correct,
            order,
        });
    }
    Ok(ParsedLog {
        records,
        dropped_no_concepts: dropped,
    })
}

/// Exercise and concept index spaces. Indices are assigned in lexicographic
/// id order, so the mapping depends only on the set of ids present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    exercises: Vec<String>,
    concepts: Vec<String>,
    /// Sorted concept indices per exercise, the union over all rows
    /// mentioning the exercise.
    exercise_concepts: Vec<Vec<usize>>,
}

impl Vocabulary {
    pub fn num_exercises(&self) -> usize {
        self.exercises.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// Interaction nodes: one correct and one incorrect node per exercise.
    pub fn num_nodes(&self) -> usize {
        2 * self.exercises.len()
    }

    pub fn exercise_index(&self, id: &str) -> Option<usize> {
        self.exercises.binary_search_by(|e| e.as_str().cmp(id)).ok()
    }

    pub fn concept_index(&self, id: &str) -> Option<usize> {
        self.concepts.binary_search_by(|c| c.as_str().cmp(id)).ok()
    }

    pub fn exercise_id(&self, index: usize) -> &str {
        &self.exercises[index]
    }

    pub fn concept_id(&self, index: usize) -> &str {
        &self.concepts[index]
    }

    pub fn concepts_of(&self, exercise: usize) -> &[usize] {
        &self.exercise_concepts[exercise]
    }
}

pub fn build_vocabulary(records: &[InteractionRecord]) -> Result<Vocabulary> {
    if records.is_empty() {
        return Err(DgektError::Data(
            "cannot build a vocabulary from an empty record set".into(),
        ));
    }
    let mut exercise_ids: BTreeSet<&str> = BTreeSet::new();
    let mut concept_ids: BTreeSet<&str> = BTreeSet::new();
    for r in records {
        exercise_ids.insert(&r.exercise_id);
        for c in &r.concept_ids {
            concept_ids.insert(c);
        }
    }
    let exercises: Vec<String> = exercise_ids.iter().map(|s| s.to_string()).collect();
    let concepts: Vec<String> = concept_ids.iter().map(|s| s.to_string()).collect();

    let mut exercise_concepts: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); exercises.len()];
    for r in records {
        let e = exercises
            .binary_search(&r.exercise_id)
            .expect("exercise collected above");
        for c in &r.concept_ids {
            let ci = concepts.binary_search(c).expect("concept collected above");
            exercise_concepts[e].insert(ci);
        }
    }
    Ok(Vocabulary {
        exercises,
        concepts,
        exercise_concepts: exercise_concepts
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect(),
    })
}

/// Node index of an (exercise, response) pair: correct responses take the
/// even index `2 * exercise`, incorrect the odd `2 * exercise + 1`.
pub fn node_index(exercise: usize, correct: bool) -> usize {
    2 * exercise + usize::from(!correct)
}

/// Inverse of [`node_index`].
pub fn node_interaction(node: usize) -> (usize, bool) {
    (node / 2, node % 2 == 0)
}

/// One contiguous chunk of a student's history, kept in time order.
/// `steps` holds (exercise index, correct) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentSequence {
    pub student_id: String,
    pub steps: Vec<(usize, bool)>,
}

/// Groups records by student, orders each history by the `order` field
/// (ties keep input order), and cuts it into chunks of at most `max_len`
/// steps. A trailing chunk of one step is dropped: it admits no
/// next-exercise prediction.
pub fn make_sequences(
    records: &[InteractionRecord],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<StudentSequence>> {
    if max_len < 2 {
        return Err(DgektError::Config(format!(
            "max_seq_len must be at least 2, got {max_len}"
        )));
    }
    let mut by_student: BTreeMap<&str, Vec<&InteractionRecord>> = BTreeMap::new();
    for r in records {
        by_student.entry(&r.student_id).or_default().push(r);
    }
    let mut sequences = Vec::new();
    for (student, mut rows) in by_student {
        rows.sort_by_key(|r| r.order);
        let mut steps = Vec::with_capacity(rows.len());
        for r in rows {
            let e = vocab.exercise_index(&r.exercise_id).ok_or_else(|| {
                DgektError::Data(format!("exercise {:?} not in vocabulary", r.exercise_id))
            })?;
            steps.push((e, r.correct));
        }
        for chunk in steps.chunks(max_len) {
            if chunk.len() < 2 {
                continue;
            }
            sequences.push(StudentSequence {
                student_id: student.to_string(),
                steps: chunk.to_vec(),
            });
        }
    }
    Ok(sequences)
}

/// Train / validation / test sequences split at student granularity.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<StudentSequence>,
    pub validation: Vec<StudentSequence>,
    pub test: Vec<StudentSequence>,
}

/// Splits by student: `train_frac` of students go to train plus
/// validation, the rest to test; `val_frac_of_train` of the former are
/// then held out for validation. Assignment shuffles the sorted student
/// id list with a seeded generator, so it depends only on the id set and
/// the seed.
pub fn split_students(
    sequences: &[StudentSequence],
    train_frac: f64,
    val_frac_of_train: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DgektError::Config(format!(
            "train_frac must be in (0, 1), got {train_frac}"
        )));
    }
    if !(0.0..1.0).contains(&val_frac_of_train) {
        return Err(DgektError::Config(format!(
            "val_frac_of_train must be in [0, 1), got {val_frac_of_train}"
        )));
    }
    let students: Vec<&str> = {
        let set: BTreeSet<&str> = sequences.iter().map(|s| s.student_id.as_str()).collect();
        set.into_iter().collect()
    };
    let n = students.len();
    if n < 3 {
        return Err(DgektError::Data(format!(
            "need at least 3 students to split, found {n}"
        )));
    }

    let mut shuffled = students;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let train_total = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
    let val_count =
        ((train_total as f64 * val_frac_of_train).round() as usize).min(train_total - 1);

    let val_set: BTreeSet<&str> = shuffled[..val_count].iter().copied().collect();
    let train_set: BTreeSet<&str> = shuffled[val_count..train_total].iter().copied().collect();

    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for s in sequences {
        let id = s.student_id.as_str();
        if train_set.contains(id) {
            split.train.push(s.clone());
        } else if val_set.contains(id) {
            split.validation.push(s.clone());
        } else {
            split.test.push(s.clone());
        }
    }
    Ok(split)
}
