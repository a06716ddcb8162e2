//! Data curation: instruction templating, symmetric/asymmetric reformatting,
//! example-based multi-class labeling, rank-windowed hard-negative mining,
//! and batch assembly. JSONL is the interchange format at every stage
//! boundary.

mod batch;
mod mining;
pub mod toy;

pub use batch::{assemble_batch, assemble_batch_cached, AssembledBatch};
pub use mining::mine_hard_negatives;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// One instructed query with a positive passage and optional hard negatives;
/// the unit of all three training stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    #[serde(default)]
    pub instruction: String,
    pub query: String,
    #[serde(rename = "pos")]
    pub positive: String,
    #[serde(rename = "negs", default)]
    pub hard_negatives: Vec<String>,
    /// Symmetric tasks prepend the instruction to passages too.
    #[serde(default)]
    pub symmetric: bool,
}

impl TrainingSample {
    pub fn validate(&self) -> Result<()> {
        if self.query.trim().is_empty() {
            return Err(Error::Data("training sample with empty query".into()));
        }
        if self.positive.trim().is_empty() {
            return Err(Error::Data("training sample with empty positive".into()));
        }
        if self.hard_negatives.iter().any(|n| n == &self.positive) {
            return Err(Error::Data(format!(
                "positive appears among its own hard negatives (query: {:?})",
                self.query
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreScale {
    Continuous,
    Binary,
}

/// A scored text pair from an STS or pair-classification dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub text_a: String,
    pub text_b: String,
    pub score: f64,
    pub scale: ScoreScale,
}

impl ScoredPair {
    pub fn validate(&self) -> Result<()> {
        match self.scale {
            ScoreScale::Continuous => {
                if !(0.0..=5.0).contains(&self.score) {
                    return Err(Error::Data(format!(
                        "continuous score {} outside [0, 5]",
                        self.score
                    )));
                }
            }
            ScoreScale::Binary => {
                if self.score != 0.0 && self.score != 1.0 {
                    return Err(Error::Data(format!(
                        "binary score {} not in {{0, 1}}",
                        self.score
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A labeled text from a classification or clustering dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
    pub dataset_id: String,
}

/// Retrieval corpus with stable indices and no exact duplicate passages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    passages: Vec<String>,
}

impl CandidatePool {
    pub fn new(passages: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, p) in passages.iter().enumerate() {
            if !seen.insert(p.as_str()) {
                return Err(Error::Data(format!(
                    "candidate pool has duplicate passage at index {i}"
                )));
            }
        }
        Ok(Self { passages })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, idx: usize) -> &str {
        &self.passages[idx]
    }

    pub fn passages(&self) -> &[String] {
        &self.passages
    }

    pub fn index_of(&self, passage: &str) -> Option<usize> {
        self.passages.iter().position(|p| p == passage)
    }
}

/// Render the instructed query template. An empty instruction returns the
/// query unchanged.
pub fn format_query(instruction: &str, query: &str) -> Result<String> {
    if query.trim().is_empty() {
        return Err(Error::Input("format_query: empty query".into()));
    }
    if instruction.is_empty() {
        Ok(query.to_string())
    } else {
        Ok(format!("Instruct: {instruction} \n Query: {query}"))
    }
}

/// Symmetric processing of scored pairs: every qualifying pair (continuous
/// score strictly above 4, or binary score of 1) yields both direction
/// samples with no offline negatives.
pub fn process_symmetric(
    pairs: &[ScoredPair],
    instruction: &str,
) -> Result<Vec<TrainingSample>> {
    if pairs.is_empty() {
        return Err(Error::Input("process_symmetric: no pairs".into()));
    }
    let mut out = Vec::new();
    for pair in pairs {
        pair.validate()?;
        let qualifies = match pair.scale {
            ScoreScale::Continuous => pair.score > 4.0,
            ScoreScale::Binary => pair.score == 1.0,
        };
        if !qualifies {
            continue;
        }
        for (q, p) in [(&pair.text_a, &pair.text_b), (&pair.text_b, &pair.text_a)] {
            let sample = TrainingSample {
                instruction: instruction.to_string(),
                query: q.clone(),
                positive: p.clone(),
                hard_negatives: Vec::new(),
                symmetric: true,
            };
            sample.validate()?;
            out.push(sample);
        }
    }
    Ok(out)
}

/// Asymmetric processing of labeled texts: one sample per item with the label
/// as positive. Negatives come from other labels in the same dataset first,
/// topped up from the global label pool when fewer than M exist.
pub fn process_asymmetric(
    items: &[LabeledText],
    global_label_pool: &[String],
    m: usize,
    instruction: &str,
    rng: &mut SeededRng,
) -> Result<Vec<TrainingSample>> {
    if m == 0 {
        return Err(Error::Config("process_asymmetric: M must be >= 1".into()));
    }
    // Distinct labels per dataset, in first-appearance order for determinism.
    let mut dataset_labels: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for item in items {
        let labels = dataset_labels.entry(&item.dataset_id).or_default();
        if !labels.iter().any(|l| *l == item.label) {
            labels.push(&item.label);
        }
    }

    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let in_dataset: Vec<&str> = dataset_labels[item.dataset_id.as_str()]
            .iter()
            .copied()
            .filter(|l| *l != item.label)
            .collect();

        let mut negatives: Vec<String> = if in_dataset.len() > m {
            rng.sample_indices(in_dataset.len(), m)
                .into_iter()
                .map(|i| in_dataset[i].to_string())
                .collect()
        } else {
            in_dataset.iter().map(|l| l.to_string()).collect()
        };

        if negatives.len() < m {
            let chosen: BTreeSet<&str> = negatives.iter().map(String::as_str).collect();
            let mut candidates: Vec<&str> = Vec::new();
            let mut seen = BTreeSet::new();
            for label in global_label_pool {
                if label != &item.label && !chosen.contains(label.as_str()) && seen.insert(label)
                {
                    candidates.push(label);
                }
            }
            let need = m - negatives.len();
            if candidates.len() < need {
                return Err(Error::Data(format!(
                    "cannot draw {m} label negatives for {:?} in dataset {:?}: \
                     {} in-dataset + {} global candidates",
                    item.label,
                    item.dataset_id,
                    negatives.len(),
                    candidates.len()
                )));
            }
            for i in rng.sample_indices(candidates.len(), need) {
                negatives.push(candidates[i].to_string());
            }
        }

        let sample = TrainingSample {
            instruction: instruction.to_string(),
            query: item.text.clone(),
            positive: item.label.clone(),
            hard_negatives: negatives,
            symmetric: false,
        };
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

/// Example-based multi-class labeling: query and positive are distinct texts
/// of one class; negatives are texts of other classes. This is a symmetric
/// setting, so the instruction is prepended to passages as well.
pub fn example_based_labeling(
    groups: &BTreeMap<String, Vec<String>>,
    samples_per_class: usize,
    m: usize,
    instruction: &str,
    rng: &mut SeededRng,
) -> Result<Vec<TrainingSample>> {
    if groups.len() < 2 {
        return Err(Error::Data(
            "example_based_labeling: need at least 2 classes".into(),
        ));
    }
    let usable: Vec<(&String, &Vec<String>)> =
        groups.iter().filter(|(_, texts)| texts.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::Data(
            "example_based_labeling: no class has two texts".into(),
        ));
    }

    let mut out = Vec::new();
    for (label, texts) in &usable {
        let others: Vec<&String> = groups
            .iter()
            .filter(|(l, _)| l != label)
            .flat_map(|(_, ts)| ts.iter())
            .collect();
        if others.len() < m {
            return Err(Error::Data(format!(
                "class {label:?}: only {} other-class texts for M={m}",
                others.len()
            )));
        }
        for _ in 0..samples_per_class {
            let picked = rng.sample_indices(texts.len(), 2);
            let negatives: Vec<String> = rng
                .sample_indices(others.len(), m)
                .into_iter()
                .map(|i| others[i].clone())
                .collect();
            let sample = TrainingSample {
                instruction: instruction.to_string(),
                query: texts[picked[0]].clone(),
                positive: texts[picked[1]].clone(),
                hard_negatives: negatives,
                symmetric: true,
            };
            sample.validate()?;
            out.push(sample);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_query_template() {
        assert_eq!(format_query("", "hello").unwrap(), "hello");
        assert_eq!(
            format_query("Retrieve semantically similar text", "cats purr").unwrap(),
            "Instruct: Retrieve semantically similar text \n Query: cats purr"
        );
        assert_eq!(
            format_query("Categorizing the given news title", "q").unwrap(),
            "Instruct: Categorizing the given news title \n Query: q"
        );
        assert!(matches!(format_query("x", "  "), Err(Error::Input(_))));
    }

    fn pair(a: &str, b: &str, score: f64, scale: ScoreScale) -> ScoredPair {
        ScoredPair {
            text_a: a.into(),
            text_b: b.into(),
            score,
            scale,
        }
    }

    #[test]
    fn symmetric_processing_thresholds() {
        let pairs = vec![
            pair("a", "b", 4.5, ScoreScale::Continuous),
            pair("c", "d", 4.0, ScoreScale::Continuous),
            pair("e", "f", 1.0, ScoreScale::Binary),
            pair("g", "h", 0.0, ScoreScale::Binary),
        ];
        let out = process_symmetric(&pairs, "inst").unwrap();
        assert_eq!(out.len(), 4); // 2 qualifying pairs * 2 directions
        assert_eq!(out[0].query, "a");
        assert_eq!(out[0].positive, "b");
        assert_eq!(out[1].query, "b");
        assert_eq!(out[1].positive, "a");
        assert!(out.iter().all(|s| s.symmetric));
        assert_eq!(out[2].query, "e");
    }

    #[test]
    fn symmetric_rejects_out_of_scale_scores() {
        let bad = vec![pair("a", "b", 6.0, ScoreScale::Continuous)];
        assert!(matches!(
            process_symmetric(&bad, ""),
            Err(Error::Data(_))
        ));
        let bad = vec![pair("a", "b", 0.5, ScoreScale::Binary)];
        assert!(matches!(process_symmetric(&bad, ""), Err(Error::Data(_))));
    }

    fn labeled(text: &str, label: &str, ds: &str) -> LabeledText {
        LabeledText {
            text: text.into(),
            label: label.into(),
            dataset_id: ds.into(),
        }
    }

    #[test]
    fn asymmetric_exact_fit_uses_all_other_labels() {
        let items: Vec<LabeledText> = (0..8)
            .map(|i| labeled(&format!("text{i}"), &format!("label{i}"), "ds"))
            .collect();
        let mut rng = SeededRng::new(1);
        let out = process_asymmetric(&items, &[], 7, "inst", &mut rng).unwrap();
        assert_eq!(out.len(), 8);
        for (i, s) in out.iter().enumerate() {
            assert_eq!(s.positive, format!("label{i}"));
            assert_eq!(s.hard_negatives.len(), 7);
            assert!(!s.hard_negatives.contains(&s.positive));
            assert!(!s.symmetric);
        }
    }

    #[test]
    fn asymmetric_top_up_from_global_pool() {
        let items: Vec<LabeledText> = (0..3)
            .map(|i| labeled(&format!("t{i}"), &format!("local{i}"), "ds"))
            .collect();
        let global: Vec<String> = (0..10).map(|i| format!("global{i}")).collect();
        let mut rng = SeededRng::new(2);
        let out = process_asymmetric(&items, &global, 7, "", &mut rng).unwrap();
        for s in &out {
            assert_eq!(s.hard_negatives.len(), 7);
            let mut uniq = s.hard_negatives.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), 7, "duplicate negatives in {:?}", s.hard_negatives);
            assert!(!s.hard_negatives.contains(&s.positive));
            let local: Vec<_> = s
                .hard_negatives
                .iter()
                .filter(|n| n.starts_with("local"))
                .collect();
            assert_eq!(local.len(), 2, "both other in-dataset labels used first");
        }
    }

    #[test]
    fn asymmetric_impossible_request_errors() {
        let items = vec![labeled("t", "only", "ds")];
        let mut rng = SeededRng::new(3);
        assert!(matches!(
            process_asymmetric(&items, &[], 7, "", &mut rng),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn example_based_class_membership() {
        let mut groups = BTreeMap::new();
        for c in 0..5 {
            groups.insert(
                format!("class{c}"),
                (0..4).map(|t| format!("c{c}_text{t}")).collect::<Vec<_>>(),
            );
        }
        let mut rng = SeededRng::new(4);
        let out = example_based_labeling(&groups, 3, 2, "inst", &mut rng).unwrap();
        assert_eq!(out.len(), 15);
        for s in &out {
            assert!(s.symmetric);
            assert_ne!(s.query, s.positive);
            let class_of = |t: &str| t[1..2].to_string();
            assert_eq!(class_of(&s.query), class_of(&s.positive));
            for n in &s.hard_negatives {
                assert_ne!(class_of(n), class_of(&s.query));
            }
        }
    }

    #[test]
    fn example_based_two_class_negatives() {
        let mut groups = BTreeMap::new();
        groups.insert("a".to_string(), vec!["a1".to_string(), "a2".to_string()]);
        groups.insert("b".to_string(), vec!["b1".to_string(), "b2".to_string()]);
        let mut rng = SeededRng::new(5);
        let out = example_based_labeling(&groups, 2, 1, "", &mut rng).unwrap();
        for s in &out {
            let neg = &s.hard_negatives[0];
            assert_ne!(&neg[..1], &s.query[..1]);
        }
    }

    #[test]
    fn example_based_single_class_errors() {
        let mut groups = BTreeMap::new();
        groups.insert("only".to_string(), vec!["t1".to_string(), "t2".to_string()]);
        let mut rng = SeededRng::new(6);
        assert!(matches!(
            example_based_labeling(&groups, 1, 1, "", &mut rng),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn candidate_pool_rejects_duplicates() {
        assert!(CandidatePool::new(vec!["a".into(), "b".into(), "a".into()]).is_err());
        let pool = CandidatePool::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(pool.index_of("b"), Some(1));
    }

    #[test]
    fn sample_rejects_positive_among_negatives() {
        let s = TrainingSample {
            instruction: String::new(),
            query: "q".into(),
            positive: "p".into(),
            hard_negatives: vec!["x".into(), "p".into()],
            symmetric: false,
        };
        assert!(matches!(s.validate(), Err(Error::Data(_))));
    }
}
