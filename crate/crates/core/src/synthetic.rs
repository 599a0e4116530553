//! Synthetic interaction corpora with a known mastery rule. Tests use
//! them to check that training actually learns something without
//! shipping real student data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::InteractionRecord;

/// Generator settings. Every exercise belongs to exactly one concept
/// (`exercise % concepts`). A student answers correctly when the concept
/// is mastered: either it was strong from the start (a seeded head
/// start), or the student has already answered `mastery_threshold`
/// exercises of that concept correctly. `lucky_prob` adds label noise
/// that can bootstrap mid-sequence mastery.
#[derive(Debug, Clone, PartialEq)]
pub struct MasteryCorpusSpec {
    pub students: usize,
    pub steps_per_student: usize,
    pub exercises: usize,
    pub concepts: usize,
    pub head_start_prob: f64,
    pub lucky_prob: f64,
    pub mastery_threshold: usize,
    pub seed: u64,
}

impl Default for MasteryCorpusSpec {
    fn default() -> MasteryCorpusSpec {
        MasteryCorpusSpec {
            students: 20,
            steps_per_student: 40,
            exercises: 10,
            concepts: 3,
            head_start_prob: 0.5,
            lucky_prob: 0.0,
            mastery_threshold: 2,
            seed: 11,
        }
    }
}

impl MasteryCorpusSpec {
    pub fn concept_of(&self, exercise: usize) -> usize {
        exercise % self.concepts
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

/// Generates the corpus. Ids are zero padded so lexicographic and
/// numeric orders agree.
pub fn mastery_corpus(spec: &MasteryCorpusSpec) -> Vec<InteractionRecord> {
    assert!(spec.students > 0 && spec.steps_per_student > 0);
    assert!(spec.exercises > 0 && spec.concepts > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sw = digits(spec.students);
    let ew = digits(spec.exercises);
    let cw = digits(spec.concepts);
    let mut records = Vec::with_capacity(spec.students * spec.steps_per_student);
    for s in 0..spec.students {
        let head_start: Vec<bool> = (0..spec.concepts)
            .map(|_| rng.gen_bool(spec.head_start_prob))
            .collect();
        let mut correct_so_far = vec![0usize; spec.concepts];
        for step in 0..spec.steps_per_student {
            let e = rng.gen_range(0..spec.exercises);
            let c = spec.concept_of(e);
            let mastered = head_start[c] || correct_so_far[c] >= spec.mastery_threshold;
            let lucky = spec.lucky_prob > 0.0 && rng.gen_bool(spec.lucky_prob);
            let correct = mastered || lucky;
            if correct {
                correct_so_far[c] += 1;
            }
            records.push(InteractionRecord {
                student_id: format!("s{s:0sw$}"),
                exercise_id: format!("e{e:0ew$}"),
                concept_ids: vec![format!("c{c:0cw$}")],
                correct,
                order: step as i64,
            });
        }
    }
    records
}
