use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{format_query, TrainingSample};
use crate::encoder::{encode, EncoderParams, Tokenizer};
use crate::error::{Error, Result};
use crate::ioutil::{read_jsonl, write_jsonl};
use crate::numerics::cosine_sim;

/// Cached teacher similarity rows, keyed by sample id (the 0-based position
/// of the sample in its training file, rendered as a decimal string). Row
/// layout: [s(q, p+), s(q, p1-), ..., s(q, pM-)]. The teacher is frozen once
/// the cache is built.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TeacherCache {
    rows: BTreeMap<String, Vec<f64>>,
}

/// One line of the external teacher embedding file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherEmbeddingRecord {
    pub sample_id: String,
    pub q: Vec<f64>,
    pub pos: Vec<f64>,
    #[serde(default)]
    pub negs: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRow {
    sample_id: String,
    scores: Vec<f64>,
}

/// Where teacher similarity rows come from: a checkpoint of this artifact's
/// own encoder (any size), or a plain embedding file.
pub enum TeacherSource<'a> {
    Checkpoint(&'a EncoderParams, &'a Tokenizer),
    Embeddings(&'a [TeacherEmbeddingRecord]),
}

pub fn sample_id(index: usize) -> String {
    index.to_string()
}

/// Compute and cache teacher score rows for every sample.
pub fn build_teacher_cache(source: &TeacherSource, data: &[TrainingSample]) -> Result<TeacherCache> {
    let mut rows = BTreeMap::new();
    match source {
        TeacherSource::Checkpoint(params, tokenizer) => {
            for (idx, sample) in data.iter().enumerate() {
                sample.validate()?;
                let embed = |text: &str| -> Result<Vec<f64>> {
                    encode(&tokenizer.tokenize(text)?, params)
                };
                let q = embed(&format_query(&sample.instruction, &sample.query)?)?;
                let passage = |p: &str| -> Result<String> {
                    if sample.symmetric {
                        format_query(&sample.instruction, p)
                    } else {
                        Ok(p.to_string())
                    }
                };
                let mut row = Vec::with_capacity(1 + sample.hard_negatives.len());
                row.push(cosine_sim(&q, &embed(&passage(&sample.positive)?)?)?);
                for neg in &sample.hard_negatives {
                    row.push(cosine_sim(&q, &embed(&passage(neg)?)?)?);
                }
                rows.insert(sample_id(idx), row);
            }
        }
        TeacherSource::Embeddings(records) => {
            let by_id: BTreeMap<&str, &TeacherEmbeddingRecord> = records
                .iter()
                .map(|r| (r.sample_id.as_str(), r))
                .collect();
            let mut missing = Vec::new();
            for (idx, sample) in data.iter().enumerate() {
                let id = sample_id(idx);
                let Some(record) = by_id.get(id.as_str()) else {
                    missing.push(id);
                    continue;
                };
                if record.negs.len() != sample.hard_negatives.len() {
                    return Err(Error::Data(format!(
                        "teacher record {id} has {} negative embeddings, sample has {}",
                        record.negs.len(),
                        sample.hard_negatives.len()
                    )));
                }
                let mut row = Vec::with_capacity(1 + record.negs.len());
                row.push(cosine_sim(&record.q, &record.pos)?);
                for neg in &record.negs {
                    row.push(cosine_sim(&record.q, neg)?);
                }
                rows.insert(id, row);
            }
            if !missing.is_empty() {
                return Err(Error::Data(format!(
                    "teacher embeddings missing sample ids: {}",
                    missing.join(", ")
                )));
            }
        }
    }
    Ok(TeacherCache { rows })
}

impl TeacherCache {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, id: &str) -> Option<&Vec<f64>> {
        self.rows.get(id)
    }

    pub fn insert(&mut self, id: String, scores: Vec<f64>) {
        self.rows.insert(id, scores);
    }

    /// Check that every sample has a cached row of width M+1; returns the
    /// missing ids otherwise.
    pub fn verify_coverage(&self, data: &[TrainingSample]) -> Result<()> {
        let mut missing = Vec::new();
        for (idx, sample) in data.iter().enumerate() {
            let id = sample_id(idx);
            match self.rows.get(&id) {
                None => missing.push(id),
                Some(row) => {
                    if row.len() != 1 + sample.hard_negatives.len() {
                        return Err(Error::Data(format!(
                            "teacher row {id} has width {}, sample needs {}",
                            row.len(),
                            1 + sample.hard_negatives.len()
                        )));
                    }
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "teacher cache missing sample ids: {}",
                missing.join(", ")
            )))
        }
    }

    /// Rows for a batch given by original sample indices.
    pub fn rows_for(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        indices
            .iter()
            .map(|&idx| {
                self.rows
                    .get(&sample_id(idx))
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("teacher cache missing sample id {idx}")))
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<CacheRow> = self
            .rows
            .iter()
            .map(|(id, scores)| CacheRow {
                sample_id: id.clone(),
                scores: scores.clone(),
            })
            .collect();
        write_jsonl(path, &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<CacheRow> = read_jsonl(path)?;
        Ok(Self {
            rows: rows
                .into_iter()
                .map(|r| (r.sample_id, r.scores))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, MaskMode};
    use crate::numerics::SeededRng;
    use crate::objectives::student_score_rows;

    fn fixture() -> (EncoderParams, Tokenizer, Vec<TrainingSample>) {
        let tokenizer = Tokenizer::from_corpus(
            ["alpha beta gamma delta epsilon zeta instruct query given a retrieve"],
            64,
        );
        let mut rng = SeededRng::new(3);
        let params = EncoderParams::init(
            EncoderConfig::new(8, 2, 1, MaskMode::Bidirectional),
            tokenizer.vocab_size(),
            &mut rng,
        )
        .unwrap();
        let data = vec![
            TrainingSample {
                instruction: "given a".into(),
                query: "alpha beta".into(),
                positive: "gamma".into(),
                hard_negatives: vec!["delta".into(), "epsilon".into()],
                symmetric: false,
            },
            TrainingSample {
                instruction: "given a".into(),
                query: "zeta".into(),
                positive: "delta".into(),
                hard_negatives: vec!["gamma".into(), "alpha beta".into()],
                symmetric: false,
            },
        ];
        (params, tokenizer, data)
    }

    #[test]
    fn self_distillation_rows_match_student_scores() {
        let (params, tokenizer, data) = fixture();
        let cache =
            build_teacher_cache(&TeacherSource::Checkpoint(&params, &tokenizer), &data).unwrap();
        assert_eq!(cache.len(), 2);
        cache.verify_coverage(&data).unwrap();

        let batch = crate::data::assemble_batch(&data, &params, &tokenizer).unwrap();
        let student = student_score_rows(&batch).unwrap();
        let cached = cache.rows_for(&[0, 1]).unwrap();
        for (a, b) in cached.iter().zip(&student) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embedding_file_source_and_locality() {
        let (_, _, data) = fixture();
        let rec = |id: &str, shift: f64| TeacherEmbeddingRecord {
            sample_id: id.into(),
            q: vec![1.0, shift, 0.0],
            pos: vec![0.9, 0.1, 0.2],
            negs: vec![vec![0.0, 1.0, 0.0], vec![0.3, 0.3, 0.3]],
        };
        let records = vec![rec("0", 0.0), rec("1", 0.0)];
        let cache = build_teacher_cache(&TeacherSource::Embeddings(&records), &data).unwrap();
        assert_eq!(cache.len(), 2);

        // Perturbing one teacher embedding changes exactly one cached row.
        let perturbed = vec![rec("0", 0.0), rec("1", 0.5)];
        let cache2 = build_teacher_cache(&TeacherSource::Embeddings(&perturbed), &data).unwrap();
        assert_eq!(cache.row("0"), cache2.row("0"));
        assert_ne!(cache.row("1"), cache2.row("1"));
    }

    #[test]
    fn coverage_gaps_list_missing_ids() {
        let (_, _, data) = fixture();
        let records = vec![TeacherEmbeddingRecord {
            sample_id: "0".into(),
            q: vec![1.0, 0.0],
            pos: vec![0.5, 0.5],
            negs: vec![vec![0.1, 0.9], vec![0.9, 0.1]],
        }];
        let err = build_teacher_cache(&TeacherSource::Embeddings(&records), &data).unwrap_err();
        assert!(err.to_string().contains('1'), "{err}");
    }

    #[test]
    fn cache_round_trips_through_jsonl() {
        let (params, tokenizer, data) = fixture();
        let cache =
            build_teacher_cache(&TeacherSource::Checkpoint(&params, &tokenizer), &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        cache.save(&path).unwrap();
        let loaded = TeacherCache::load(&path).unwrap();
        assert_eq!(cache, loaded);
    }
}
