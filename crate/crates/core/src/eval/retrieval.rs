use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalReport;
use crate::corpus::{extract_pairs, CorpusConfig, Document, Span};
use crate::error::{Error, Result};
use crate::scorers::Scorer;

pub const DEFAULT_RECALL_KS: [usize; 5] = [1, 3, 5, 10, 50];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub span: Span,
    pub score: f64,
}

/// One window per sentence start: the longest sentence-aligned span from that start
/// holding at most `window_words` word tokens. Starts whose first sentence is already
/// too long yield nothing.
pub fn candidate_windows(doc: &Document, window_words: usize) -> Vec<Span> {
    let words = doc.word_prefix();
    let bounds = doc.boundaries();
    doc.sentence_starts
        .iter()
        .filter_map(|&s| {
            bounds
                .iter()
                .copied()
                .rfind(|&e| e > s && words[e] - words[s] <= window_words)
                .map(|e| Span::new(s, e))
        })
        .collect()
}

/// The `count` highest-scoring windows other than `gold`, by score descending then start.
pub fn mine_hard_negatives(
    doc: &Document,
    prefix: &[String],
    gold: Span,
    scorer: &dyn Scorer,
    window_words: usize,
    count: usize,
) -> Result<Vec<ScoredSpan>> {
    if window_words == 0 {
        return Err(Error::invalid("window_words", "must be >= 1"));
    }
    let windows: Vec<Span> = candidate_windows(doc, window_words)
        .into_iter()
        .filter(|&w| w != gold)
        .collect();
    if windows.is_empty() {
        return Err(Error::InsufficientCandidates {
            requested: count.max(1),
            available: 0,
        });
    }
    let texts: Vec<Vec<String>> = windows.iter().map(|&w| doc.slice(w).to_vec()).collect();
    let scores = scorer.score_many(prefix, &texts)?;
    let mut scored: Vec<ScoredSpan> = windows
        .into_iter()
        .zip(scores)
        .map(|(span, score)| ScoredSpan { span, score })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.span.start.cmp(&b.span.start))
    });
    scored.truncate(count);
    Ok(scored)
}

/// All prefixes of one document ranked against the shared pool of its continuations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalGroup {
    pub doc_id: String,
    pub prefixes: Vec<Vec<String>>,
    pub candidates: Vec<Vec<String>>,
    /// `golds[i]` indexes the gold continuation of `prefixes[i]` in `candidates`.
    pub golds: Vec<usize>,
}

/// One group per document with at least two distinct continuations. Candidate order
/// follows continuation start.
pub fn retrieval_groups(docs: &[Document], cfg: &CorpusConfig) -> Vec<RetrievalGroup> {
    docs.par_iter()
        .filter_map(|doc| {
            let pairs = extract_pairs(doc, cfg);
            let mut spans: Vec<Span> = pairs.iter().map(|p| p.continuation).collect();
            spans.sort_by_key(|s| (s.start, s.end));
            spans.dedup();
            if spans.len() < 2 {
                return None;
            }
            let index: HashMap<Span, usize> =
                spans.iter().enumerate().map(|(i, &s)| (s, i)).collect();
            Some(RetrievalGroup {
                doc_id: doc.doc_id.clone(),
                prefixes: pairs.iter().map(|p| doc.slice(p.prefix).to_vec()).collect(),
                candidates: spans.iter().map(|&s| doc.slice(s).to_vec()).collect(),
                golds: pairs.iter().map(|p| index[&p.continuation]).collect(),
            })
        })
        .collect()
}

/// 1-based rank of the gold; every other candidate scoring at least as high counts ahead.
fn gold_rank(scores: &[f64], gold: usize) -> usize {
    let g = scores[gold];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != gold && s >= g)
        .count()
}

/// One report per `k`: fraction of prefixes whose gold ranks within the top `k` of its
/// group's candidates.
pub fn retrieval_recall(
    groups: &[RetrievalGroup],
    scorer: &dyn Scorer,
    ks: &[usize],
) -> Result<Vec<EvalReport>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::invalid(
            "ks",
            "must be a non-empty list of positive integers",
        ));
    }
    let mut offset = 0;
    for g in groups {
        if g.golds.len() != g.prefixes.len() {
            return Err(Error::BadInstance {
                index: offset,
                reason: format!(
                    "group {}: {} prefixes but {} golds",
                    g.doc_id,
                    g.prefixes.len(),
                    g.golds.len()
                ),
            });
        }
        if let Some(i) = g.golds.iter().position(|&x| x >= g.candidates.len()) {
            return Err(Error::BadInstance {
                index: offset + i,
                reason: format!("gold missing from candidate set of group {}", g.doc_id),
            });
        }
        offset += g.prefixes.len();
    }
    if offset == 0 {
        return Err(Error::invalid("groups", "no retrieval instances"));
    }
    let ranks: Vec<usize> = groups
        .par_iter()
        .map(|g| {
            let m = scorer.score_matrix(&g.prefixes, &g.candidates)?;
            Ok(m.iter()
                .zip(&g.golds)
                .map(|(row, &gold)| gold_rank(row, gold))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let pool: Vec<usize> = groups.iter().map(|g| g.candidates.len()).collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hit = ranks.iter().filter(|&&r| r <= k).count();
            EvalReport::new(
                format!("recall@{k}[{}]", scorer.name()),
                hit as f64 / ranks.len() as f64,
                ranks.len(),
            )
            .with_config(serde_json::json!({
                "k": k,
                "groups": groups.len(),
                "max_candidates": pool.iter().max(),
                "mean_candidates": pool.iter().sum::<usize>() as f64 / pool.len() as f64,
            }))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::UnigramOverlapScorer;

    struct Table(Vec<f64>);

    impl Scorer for Table {
        fn score(&self, _p: &[String], c: &[String]) -> Result<f64> {
            Ok(self.0[c[0].parse::<usize>().unwrap()])
        }
        fn name(&self) -> String {
            "table".into()
        }
    }

    fn group(scores_for: usize, gold: usize) -> RetrievalGroup {
        RetrievalGroup {
            doc_id: "d".into(),
            prefixes: vec![vec!["p".into()]],
            candidates: (0..scores_for).map(|i| vec![i.to_string()]).collect(),
            golds: vec![gold],
        }
    }

    #[test]
    fn hand_ranking() {
        let scorer = Table(vec![0.1, 0.9, 0.5, 0.3]);
        let r = retrieval_recall(&[group(4, 1)], &scorer, &[1, 2, 4]).unwrap();
        assert_eq!(
            r.iter().map(|x| x.value).collect::<Vec<_>>(),
            vec![1.0, 1.0, 1.0]
        );
        let r = retrieval_recall(&[group(4, 3)], &scorer, &[1, 2, 3, 4]).unwrap();
        assert_eq!(
            r.iter().map(|x| x.value).collect::<Vec<_>>(),
            vec![0.0, 0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn tie_ranks_gold_behind() {
        let scorer = Table(vec![0.5, 0.5]);
        let r = retrieval_recall(&[group(2, 0)], &scorer, &[1]).unwrap();
        assert_eq!(r[0].value, 0.0);
    }

    #[test]
    fn missing_gold_names_instance() {
        let err =
            retrieval_recall(&[group(2, 0), group(2, 5)], &Table(vec![0.0; 6]), &[1]).unwrap_err();
        assert!(matches!(err, Error::BadInstance { index: 1, .. }), "{err}");
    }

    #[test]
    fn only_gold_window_is_an_error() {
        let doc = Document::from_text("d", "a b c .");
        let gold = Span::new(0, doc.len());
        let p = vec!["a".to_string()];
        assert!(mine_hard_negatives(&doc, &p, gold, &UnigramOverlapScorer, 128, 10).is_err());
    }

    #[test]
    fn windows_respect_word_budget() {
        let doc = Document::from_text("d", "a b . c . d e f . g .");
        let w = candidate_windows(&doc, 3);
        let texts: Vec<String> = w.iter().map(|&s| doc.slice(s).join(" ")).collect();
        assert_eq!(texts, vec!["a b . c .", "c .", "d e f .", "g ."]);
    }
}
