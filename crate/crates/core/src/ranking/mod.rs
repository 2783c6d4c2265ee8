//! Triplet preference study: question sampling, answer ingestion, the
//! counting score estimator, per-style normalization and export of the
//! metric-regression dataset.

mod dataset;
mod log;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

pub use dataset::{build_metric_dataset, read_metric_dataset, write_metric_dataset, MetricRow};
pub use log::{load_answers, AnswerLog};

use crate::corpus::{step_rng, StyleTag};
use crate::error::{Error, Result};

/// One answered triplet. `order` lists the ids from worst to best.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceAnswer {
    pub question_id: String,
    pub style: StyleTag,
    pub drawing_ids: [String; 3],
    pub order: [String; 3],
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub annotator: String,
}

impl PreferenceAnswer {
    pub fn validate(&self) -> Result<()> {
        let ids: BTreeSet<&String> = self.drawing_ids.iter().collect();
        if ids.len() != 3 {
            return Err(Error::Validation(format!(
                "question {}: drawing ids must be distinct",
                self.question_id
            )));
        }
        let ordered: BTreeSet<&String> = self.order.iter().collect();
        if ordered != ids {
            return Err(Error::Validation(format!(
                "question {}: order must be a permutation of the drawing ids",
                self.question_id
            )));
        }
        if self.style == StyleTag::Untagged {
            return Err(Error::Validation(format!(
                "question {}: answers need a tagged style",
                self.question_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreEntry {
    pub style: StyleTag,
    pub raw_score: i64,
    pub n_appearances: u64,
    /// Set by [`ScoreTable::normalize`] for drawings that have appeared.
    pub normalized: Option<f64>,
}

/// Scores over a registered pool of drawings.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    entries: BTreeMap<String, ScoreEntry>,
    answered: HashSet<String>,
}

impl ScoreTable {
    /// All-zero table over `(drawing id, style)` pairs.
    pub fn new(pool: impl IntoIterator<Item = (String, StyleTag)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (id, style) in pool {
            if style == StyleTag::Untagged {
                return Err(Error::Validation(format!(
                    "drawing {id} has no style; untagged drawings are not ranked"
                )));
            }
            let entry = ScoreEntry {
                style,
                raw_score: 0,
                n_appearances: 0,
                normalized: None,
            };
            if entries.insert(id.clone(), entry).is_some() {
                return Err(Error::Validation(format!("drawing {id} registered twice")));
            }
        }
        Ok(Self {
            entries,
            answered: HashSet::new(),
        })
    }

    pub fn get(&self, id: &str) -> Option<&ScoreEntry> {
        self.entries.get(id)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ScoreEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn raw(&self, id: &str) -> Option<i64> {
        self.entries.get(id).map(|e| e.raw_score)
    }

    pub fn answered_count(&self) -> usize {
        self.answered.len()
    }

    pub fn has_answered(&self, question_id: &str) -> bool {
        self.answered.contains(question_id)
    }

    /// Drawing ids of one style, sorted.
    pub fn pool(&self, style: StyleTag) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.style == style)
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Applies one answer: the worst drawing loses 2, the best gains 2.
    /// The table is untouched when the answer is rejected.
    pub fn record_answer(&mut self, answer: &PreferenceAnswer) -> Result<()> {
        answer.validate()?;
        if self.answered.contains(&answer.question_id) {
            return Err(Error::Replay(answer.question_id.clone()));
        }
        let unknown: Vec<String> = answer
            .drawing_ids
            .iter()
            .filter(|id| !self.entries.contains_key(*id))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownDrawing(unknown));
        }
        for id in &answer.drawing_ids {
            let style = self.entries[id].style;
            if style != answer.style {
                return Err(Error::Validation(format!(
                    "question {}: drawing {id} is {style}, not {}",
                    answer.question_id, answer.style
                )));
            }
        }
        for (id, delta) in answer.order.iter().zip([-2i64, 0, 2]) {
            let e = self.entries.get_mut(id).expect("checked above");
            e.raw_score += delta;
            e.n_appearances += 1;
            e.normalized = None;
        }
        self.answered.insert(answer.question_id.clone());
        Ok(())
    }

    /// Per-style affine map of raw scores onto `[0.1, 1]` over drawings that
    /// have appeared; a style whose scores are all equal maps to 0.55.
    pub fn normalize(&mut self) -> Result<()> {
        let mut any = false;
        for style in StyleTag::TAGGED {
            let raws: Vec<i64> = self
                .entries
                .values()
                .filter(|e| e.style == style && e.n_appearances > 0)
                .map(|e| e.raw_score)
                .collect();
            let (Some(&lo), Some(&hi)) = (raws.iter().min(), raws.iter().max()) else {
                continue;
            };
            any = true;
            for e in self.entries.values_mut() {
                if e.style != style || e.n_appearances == 0 {
                    continue;
                }
                e.normalized = Some(normalized_value(e.raw_score, lo, hi));
            }
        }
        if !any {
            return Err(Error::Validation("no scored drawings to normalize".into()));
        }
        Ok(())
    }

    pub fn normalized(&self, id: &str) -> Option<f64> {
        self.entries.get(id).and_then(|e| e.normalized)
    }
}

fn normalized_value(raw: i64, lo: i64, hi: i64) -> f64 {
    if hi == lo {
        0.55
    } else if raw == lo {
        0.1
    } else if raw == hi {
        1.0
    } else {
        0.1 + 0.9 * (raw - lo) as f64 / (hi - lo) as f64
    }
}

/// Functional form of [`ScoreTable::record_answer`].
pub fn record_answer(answer: &PreferenceAnswer, table: &ScoreTable) -> Result<ScoreTable> {
    let mut t = table.clone();
    t.record_answer(answer)?;
    Ok(t)
}

/// Folds every answer into a fresh table over `pool`. Errors carry the index
/// of the offending answer.
pub fn aggregate_scores(
    pool: impl IntoIterator<Item = (String, StyleTag)>,
    answers: &[PreferenceAnswer],
) -> Result<ScoreTable> {
    let mut t = ScoreTable::new(pool)?;
    for (index, a) in answers.iter().enumerate() {
        t.record_answer(a).map_err(|e| Error::AtAnswer {
            index,
            source: Box::new(e),
        })?;
    }
    Ok(t)
}

/// `normalize_scores` in functional form.
pub fn normalize_scores(table: &ScoreTable) -> Result<ScoreTable> {
    let mut t = table.clone();
    t.normalize()?;
    Ok(t)
}

fn triplet_key(ids: &[String]) -> [String; 3] {
    let mut k = [ids[0].clone(), ids[1].clone(), ids[2].clone()];
    k.sort();
    k
}

/// Question-sampling history: unordered triplets already asked.
#[derive(Clone, Debug, Default)]
pub struct TripletHistory {
    asked: HashSet<[String; 3]>,
}

impl TripletHistory {
    pub fn insert(&mut self, ids: &[String; 3]) {
        self.asked.insert(triplet_key(ids));
    }

    pub fn contains(&self, ids: &[String; 3]) -> bool {
        self.asked.contains(&triplet_key(ids))
    }

    pub fn len(&self) -> usize {
        self.asked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asked.is_empty()
    }
}

/// A uniformly random triplet of distinct drawings from one style's pool
/// that has not been asked before. Deterministic in `(seed, history size)`.
pub fn sample_triplet(
    style: StyleTag,
    pool: &[String],
    seed: u64,
    history: &TripletHistory,
) -> Result<[String; 3]> {
    let n = pool.len();
    if n < 3 {
        return Err(Error::Validation(format!(
            "{style} pool has {n} drawings; a triplet needs 3"
        )));
    }
    let total = n * (n - 1) * (n - 2) / 6;
    let mut rng = step_rng(seed, history.len() as u64);
    if total <= 4096 {
        // Small pools: draw uniformly among the remaining triplets.
        let mut remaining = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    let t = [pool[a].clone(), pool[b].clone(), pool[c].clone()];
                    if !history.contains(&t) {
                        remaining.push(t);
                    }
                }
            }
        }
        if remaining.is_empty() {
            return Err(Error::Exhausted(format!(
                "every {style} triplet has been asked"
            )));
        }
        let i = sample(&mut rng, remaining.len(), 1).index(0);
        let mut t = remaining.swap_remove(i);
        shuffle3(&mut t, &mut rng);
        return Ok(t);
    }
    for _ in 0..10_000 {
        let idx = sample(&mut rng, n, 3);
        let t = [
            pool[idx.index(0)].clone(),
            pool[idx.index(1)].clone(),
            pool[idx.index(2)].clone(),
        ];
        if !history.contains(&t) {
            return Ok(t);
        }
    }
    Err(Error::Exhausted(format!(
        "could not find an unasked {style} triplet"
    )))
}

fn shuffle3(t: &mut [String; 3], rng: &mut impl rand::Rng) {
    use rand::seq::SliceRandom;
    t.shuffle(rng);
}

/// Kendall's tau-b between two paired samples.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Validation(
            "kendall tau needs two equal-length samples of at least 2".into(),
        ));
    }
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = (x[i] - x[j]).partial_cmp(&0.0).expect("finite");
            let dy = (y[i] - y[j]).partial_cmp(&0.0).expect("finite");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tx += 1,
                (_, Equal) => ty += 1,
                (a, b) if a == b => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let denom = (((conc + disc + tx) * (conc + disc + ty)) as f64).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((conc - disc) as f64 / denom)
}
