use super::EvalReport;
use crate::error::{Error, Result};
use crate::scorers::unigram_overlap;

pub const DEFAULT_REP_WINDOW: usize = 20;

/// Fraction of tokens that also occur among the `window` tokens before them.
/// The denominator counts every token, including the first.
pub fn rep_of<S: AsRef<str> + PartialEq>(tokens: &[S], window: usize) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let repeated = (1..tokens.len())
        .filter(|&t| tokens[t.saturating_sub(window)..t].contains(&tokens[t]))
        .count();
    repeated as f64 / tokens.len() as f64
}

/// Mean of [`rep_of`] over sequences.
pub fn rep_score(continuations: &[Vec<String>], window: usize) -> Result<EvalReport> {
    if window == 0 {
        return Err(Error::invalid("window", "must be >= 1"));
    }
    if continuations.is_empty() {
        return Err(Error::invalid("continuations", "empty set"));
    }
    if let Some(i) = continuations.iter().position(Vec::is_empty) {
        return Err(Error::BadInstance {
            index: i,
            reason: "empty continuation".into(),
        });
    }
    let total: f64 = continuations.iter().map(|c| rep_of(c, window)).sum();
    Ok(EvalReport::new(
        "rep",
        total / continuations.len() as f64,
        continuations.len(),
    )
    .with_config(serde_json::json!({ "window": window })))
}

/// Mean type-level share of continuation unigrams also present in the prefix.
pub fn prefix_overlap(pairs: &[(Vec<String>, Vec<String>)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("pairs", "empty set"));
    }
    if let Some(i) = pairs.iter().position(|(_, c)| c.is_empty()) {
        return Err(Error::BadInstance {
            index: i,
            reason: "empty continuation".into(),
        });
    }
    let total: f64 = pairs.iter().map(|(p, c)| unigram_overlap(p, c)).sum();
    Ok(EvalReport::new(
        "prefix_overlap",
        total / pairs.len() as f64,
        pairs.len(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn rep_examples() {
        assert_eq!(rep_of(&s("a b c d"), 20), 0.0);
        assert_eq!(rep_of(&s("a a a a a"), 20), 0.8);
        // "a" at position 3 is outside a window of 2.
        assert_eq!(rep_of(&s("a b c a"), 2), 0.0);
        assert_eq!(rep_of(&s("a b c a"), 3), 0.25);
    }

    #[test]
    fn rep_score_averages_sequences() {
        let r = rep_score(&[s("a a a a a"), s("x y")], 20).unwrap();
        assert!((r.value - 0.4).abs() < 1e-15);
        assert!(rep_score(&[s("a"), vec![]], 20).is_err());
    }

    #[test]
    fn overlap_examples() {
        let r = prefix_overlap(&[
            (s("a b c"), s("a b")),
            (s("a b c"), s("x y")),
            (s("a b c"), s("a a d")),
        ])
        .unwrap();
        assert!((r.value - 0.5).abs() < 1e-15);
    }
}
