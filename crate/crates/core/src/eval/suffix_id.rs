use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::corpus::{
    extract_pairs, sample_inbook_negatives, CorpusConfig, Document, TrainingTriple,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::scorers::Scorer;

/// One suffix-identification problem: pick the gold continuation among the candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffixIdInstance {
    pub prefix: Vec<String>,
    pub candidates: Vec<Vec<String>>,
    pub gold_index: usize,
}

impl SuffixIdInstance {
    pub fn validate(&self, index: usize) -> Result<()> {
        if self.candidates.len() < 2 {
            return Err(Error::BadInstance {
                index,
                reason: "needs at least 2 candidates".into(),
            });
        }
        if self.gold_index >= self.candidates.len() {
            return Err(Error::BadInstance {
                index,
                reason: format!("gold_index {} out of range", self.gold_index),
            });
        }
        Ok(())
    }
}

/// Fraction of instances where the gold candidate scores strictly highest; ties count as misses.
pub fn suffix_id_accuracy(
    instances: &[SuffixIdInstance],
    scorer: &dyn Scorer,
) -> Result<EvalReport> {
    if instances.is_empty() {
        return Err(Error::invalid("instances", "empty instance list"));
    }
    for (i, inst) in instances.iter().enumerate() {
        inst.validate(i)?;
    }
    let hits: Vec<bool> = instances
        .par_iter()
        .map(|inst| {
            let scores = scorer.score_many(&inst.prefix, &inst.candidates)?;
            let gold = scores[inst.gold_index];
            Ok(scores
                .iter()
                .enumerate()
                .all(|(j, &s)| j == inst.gold_index || gold > s))
        })
        .collect::<Result<_>>()?;
    let correct = hits.iter().filter(|&&h| h).count();
    let k = instances[0].candidates.len();
    Ok(EvalReport::new(
        format!("suffix_id_acc[{}]", scorer.name()),
        correct as f64 / instances.len() as f64,
        instances.len(),
    )
    .with_config(serde_json::json!({ "scorer": scorer.name(), "ways": k })))
}

/// Gold-vs-InBook instances: every extracted pair with `negatives` length-matched
/// distractors from its own document. Pairs without enough distractors are skipped.
/// The gold position is drawn uniformly from the same per-pair stream.
pub fn inbook_instances(
    docs: &[Document],
    cfg: &CorpusConfig,
    negatives: usize,
    seed: u64,
) -> Vec<SuffixIdInstance> {
    docs.par_iter()
        .map(|doc| {
            let doc_seed = rng::derive(seed, rng::hash_str(&doc.doc_id));
            extract_pairs(doc, cfg)
                .into_iter()
                .enumerate()
                .filter_map(|(i, pair)| {
                    let pair_seed = rng::derive(doc_seed, i as u64);
                    let negs =
                        sample_inbook_negatives(doc, pair.continuation, negatives, pair_seed)
                            .ok()?;
                    let mut candidates: Vec<Vec<String>> =
                        negs.into_iter().map(|s| doc.slice(s).to_vec()).collect();
                    let gold_index =
                        rng::below(&mut rng::seeded(rng::derive(pair_seed, 1)), negatives + 1);
                    candidates.insert(gold_index, doc.slice(pair.continuation).to_vec());
                    Some(SuffixIdInstance {
                        prefix: doc.slice(pair.prefix).to_vec(),
                        candidates,
                        gold_index,
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Gold-vs-Generative 2-way instances from triples that carry a generation.
pub fn generative_instances(triples: &[TrainingTriple]) -> Vec<SuffixIdInstance> {
    triples
        .iter()
        .filter_map(|t| {
            let g = t.generation.as_ref().filter(|g| !g.is_empty())?;
            Some(SuffixIdInstance {
                prefix: t.prefix.clone(),
                candidates: vec![t.continuation.clone(), g.clone()],
                gold_index: 0,
            })
        })
        .collect()
}

pub fn read_instances(path: &Path) -> Result<Vec<SuffixIdInstance>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: SuffixIdInstance =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        inst.validate(out.len())?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_instances(path: &Path, instances: &[SuffixIdInstance]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct GoldMarker;

    impl Scorer for GoldMarker {
        fn score(&self, _p: &[String], c: &[String]) -> Result<f64> {
            Ok(if c.first().map(String::as_str) == Some("GOLD") {
                1.0
            } else {
                0.0
            })
        }
        fn name(&self) -> String {
            "marker".into()
        }
    }

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn perfect_scorer_gets_one() {
        let insts = vec![
            SuffixIdInstance {
                prefix: s("p"),
                candidates: vec![s("x"), s("y"), s("GOLD z")],
                gold_index: 2,
            };
            5
        ];
        let r = suffix_id_accuracy(&insts, &GoldMarker).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.n, 5);
    }

    #[test]
    fn ties_count_as_failures() {
        let inst = SuffixIdInstance {
            prefix: s("p"),
            candidates: vec![s("a"), s("b")],
            gold_index: 0,
        };
        assert_eq!(suffix_id_accuracy(&[inst], &GoldMarker).unwrap().value, 0.0);
    }

    #[test]
    fn invalid_instances_rejected() {
        assert!(suffix_id_accuracy(&[], &GoldMarker).is_err());
        let one = SuffixIdInstance {
            prefix: s("p"),
            candidates: vec![s("a")],
            gold_index: 0,
        };
        assert!(matches!(
            suffix_id_accuracy(&[one], &GoldMarker),
            Err(Error::BadInstance { index: 0, .. })
        ));
    }
}
