//! Documents, tokenization, sentence segmentation and training-pair construction.
//!
//! Tokenization splits on whitespace and peels the punctuation characters
//! `. , ! ? ; : " ' ( )` off both ends of every chunk into single-character tokens.
//! A sentence starts at token 0 and at every token that follows `.`, `!` or `?`.
//! All length rules count *word* tokens: punctuation tokens are carried inside spans but
//! never counted.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::Generator;
use crate::rng;
use crate::sampling::SamplingStrategy;

pub const PUNCTUATION: [char; 10] = ['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')'];
pub const TERMINATORS: [&str; 3] = [".", "!", "?"];

pub fn is_punctuation(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCTUATION.contains(&c))
}

pub fn is_word(token: &str) -> bool {
    !is_punctuation(token)
}

pub fn is_terminator(token: &str) -> bool {
    TERMINATORS.contains(&token)
}

pub fn word_count<S: AsRef<str>>(tokens: &[S]) -> usize {
    tokens.iter().filter(|t| is_word(t.as_ref())).count()
}

/// Splits `text` into tokens and returns them with the indices where sentences begin.
pub fn tokenize(text: &str) -> (Vec<String>, Vec<usize>) {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let body = chunk.trim_start_matches(PUNCTUATION);
        for c in chunk[..chunk.len() - body.len()].chars() {
            tokens.push(c.to_string());
        }
        let core = body.trim_end_matches(PUNCTUATION);
        if !core.is_empty() {
            tokens.push(core.to_string());
        }
        for c in body[core.len()..].chars() {
            tokens.push(c.to_string());
        }
    }
    let starts = sentence_starts(&tokens);
    (tokens, starts)
}

pub fn sentence_starts<S: AsRef<str>>(tokens: &[S]) -> Vec<usize> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut starts = vec![0];
    starts.extend((1..tokens.len()).filter(|&i| is_terminator(tokens[i - 1].as_ref())));
    starts
}

/// Half-open token range `[start, end)` within a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub sentence_starts: Vec<usize>,
}

impl Document {
    pub fn from_text(doc_id: impl Into<String>, text: &str) -> Self {
        let (tokens, sentence_starts) = tokenize(text);
        Document {
            doc_id: doc_id.into(),
            tokens,
            sentence_starts,
        }
    }

    pub fn from_tokens(doc_id: impl Into<String>, tokens: Vec<String>) -> Self {
        let sentence_starts = sentence_starts(&tokens);
        Document {
            doc_id: doc_id.into(),
            tokens,
            sentence_starts,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn slice(&self, span: Span) -> &[String] {
        &self.tokens[span.start..span.end]
    }

    /// Valid span end points: every sentence start after 0, plus the document end.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self
            .sentence_starts
            .iter()
            .copied()
            .filter(|&s| s > 0)
            .collect();
        if !self.tokens.is_empty() {
            b.push(self.tokens.len());
        }
        b
    }

    /// `out[i]` = number of word tokens in `tokens[..i]`.
    pub fn word_prefix(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.tokens.len() + 1);
        out.push(0);
        let mut n = 0;
        for t in &self.tokens {
            n += is_word(t) as usize;
            out.push(n);
        }
        out
    }

    pub fn is_sentence_start(&self, idx: usize) -> bool {
        self.sentence_starts.binary_search(&idx).is_ok()
    }

    pub fn is_aligned(&self, span: Span) -> bool {
        self.is_sentence_start(span.start)
            && (span.end == self.tokens.len() || self.is_sentence_start(span.end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One `{"doc_id", "text"}` object per line.
    Jsonl,
    /// Every `*.txt` file of a directory, in file-name order; the stem is the doc id.
    PlainDir,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "plain_dir" | "dir" => Ok(CorpusFormat::PlainDir),
            other => Err(Error::invalid(
                "format",
                format!("unknown corpus format `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub text: String,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Document>> {
    let raw = match format {
        CorpusFormat::Jsonl => read_jsonl_raw(path)?,
        CorpusFormat::PlainDir => read_dir_raw(path)?,
    };
    if raw.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(raw
        .par_iter()
        .map(|r| Document::from_text(r.doc_id.clone(), &r.text))
        .collect())
}

fn read_jsonl_raw(path: &Path) -> Result<Vec<RawDocument>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(doc);
    }
    Ok(out)
}

fn read_dir_raw(path: &Path) -> Result<Vec<RawDocument>> {
    let mut files: Vec<_> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let doc_id = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            Ok(RawDocument { doc_id, text })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub prefix_len_words: usize,
    pub cont_min_words: usize,
    pub cont_max_words: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            prefix_len_words: 256,
            cont_min_words: 10,
            cont_max_words: 128,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prefix_len_words == 0 {
            return Err(Error::invalid("prefix_len_words", "must be >= 1"));
        }
        if self.cont_min_words == 0 || self.cont_min_words > self.cont_max_words {
            return Err(Error::invalid(
                "cont_min_words",
                format!(
                    "need 0 < min <= max, got [{}, {}]",
                    self.cont_min_words, self.cont_max_words
                ),
            ));
        }
        Ok(())
    }

    /// Shortest acceptable prefix when no boundary lands exactly on `prefix_len_words`:
    /// three quarters of the target, rounded up.
    pub fn min_prefix_words(&self) -> usize {
        (3 * self.prefix_len_words).div_ceil(4).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpans {
    pub prefix: Span,
    pub continuation: Span,
}

/// Extracts every sentence-aligned prefix of the target word length and draws a
/// sentence-aligned continuation for it.
///
/// For each sentence start `s`, the prefix ends at the largest boundary `e < len` with
/// `words(s, e) <= prefix_len_words`, kept only if `words(s, e) >= min_prefix_words()`.
/// The continuation end is drawn uniformly among boundaries `f > e` with
/// `words(e, f)` in `[cont_min_words, cont_max_words]`, one draw per kept prefix from the
/// stream `derive(seed, hash(doc_id))`.
pub fn extract_pairs(doc: &Document, cfg: &CorpusConfig) -> Vec<PairSpans> {
    if doc.is_empty() {
        return Vec::new();
    }
    let words = doc.word_prefix();
    let bounds = doc.boundaries();
    let n = doc.len();
    let mut rng = rng::seeded(rng::derive(cfg.seed, rng::hash_str(&doc.doc_id)));
    let mut out = Vec::new();
    for &s in &doc.sentence_starts {
        let Some(e) = bounds
            .iter()
            .copied()
            .rfind(|&e| e > s && e < n && words[e] - words[s] <= cfg.prefix_len_words)
        else {
            continue;
        };
        if words[e] - words[s] < cfg.min_prefix_words() {
            continue;
        }
        let ends: Vec<usize> = bounds
            .iter()
            .copied()
            .filter(|&f| {
                f > e && (cfg.cont_min_words..=cfg.cont_max_words).contains(&(words[f] - words[e]))
            })
            .collect();
        if ends.is_empty() {
            continue;
        }
        let f = ends[rng::below(&mut rng, ends.len())];
        out.push(PairSpans {
            prefix: Span::new(s, e),
            continuation: Span::new(e, f),
        });
    }
    out
}

/// All sentence-aligned spans with the same token length as `gold`, excluding `gold`,
/// ordered by start.
pub fn inbook_candidates(doc: &Document, gold: Span) -> Vec<Span> {
    let target = gold.len();
    doc.sentence_starts
        .iter()
        .map(|&s| Span::new(s, s + target))
        .filter(|&sp| sp != gold && sp.end <= doc.len() && doc.is_aligned(sp))
        .collect()
}

/// Samples `count` distinct length-matched, sentence-aligned spans other than `gold`.
///
/// Candidates are [`inbook_candidates`] in start order; selection is
/// [`rng::choose_distinct`] on a generator seeded with `seed`.
pub fn sample_inbook_negatives(
    doc: &Document,
    gold: Span,
    count: usize,
    seed: u64,
) -> Result<Vec<Span>> {
    let candidates = inbook_candidates(doc, gold);
    if candidates.len() < count || candidates.is_empty() {
        return Err(Error::InsufficientCandidates {
            requested: count,
            available: candidates.len(),
        });
    }
    let mut rng = rng::seeded(seed);
    Ok(rng::choose_distinct(&mut rng, candidates.len(), count)
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTriple {
    pub doc_id: String,
    pub prefix: Vec<String>,
    pub continuation: Vec<String>,
    pub generation: Option<Vec<String>>,
}

pub fn build_triples(doc: &Document, cfg: &CorpusConfig) -> Vec<TrainingTriple> {
    extract_pairs(doc, cfg)
        .into_iter()
        .map(|p| TrainingTriple {
            doc_id: doc.doc_id.clone(),
            prefix: doc.slice(p.prefix).to_vec(),
            continuation: doc.slice(p.continuation).to_vec(),
            generation: None,
        })
        .collect()
}

/// Extracts triples from every document, preserving document order.
pub fn build_dataset(docs: &[Document], cfg: &CorpusConfig) -> Vec<TrainingTriple> {
    docs.par_iter()
        .map(|d| build_triples(d, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Splits pairs into the half that trains the generator and the half that receives
/// generations. Membership is a seeded shuffle; both halves keep input order.
pub fn split_for_generator(
    triples: Vec<TrainingTriple>,
    seed: u64,
) -> (Vec<TrainingTriple>, Vec<TrainingTriple>) {
    let n = triples.len();
    let mut rng = rng::seeded(seed);
    let mut lm_half = vec![false; n];
    for i in rng::choose_distinct(&mut rng, n, n / 2) {
        lm_half[i] = true;
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (t, is_lm) in triples.into_iter().zip(lm_half) {
        if is_lm {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    (a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeNegativeConfig {
    pub min_words: usize,
    pub max_words: usize,
    pub strategy: SamplingStrategy,
}

impl Default for GenerativeNegativeConfig {
    fn default() -> Self {
        GenerativeNegativeConfig {
            min_words: 10,
            max_words: 128,
            strategy: SamplingStrategy::Nucleus(crate::sampling::DEFAULT_TOP_P),
        }
    }
}

/// Tokens requested from the generator to cover `words` word tokens.
pub fn generation_request_len(words: usize) -> usize {
    2 * words
}

/// Longest prefix of `tokens` containing at most `words` word tokens.
pub fn truncate_words(tokens: &[String], words: usize) -> Vec<String> {
    let mut seen = 0;
    let mut end = tokens.len();
    for (i, t) in tokens.iter().enumerate() {
        if is_word(t) {
            if seen == words {
                end = i;
                break;
            }
            seen += 1;
        }
    }
    tokens[..end].to_vec()
}

/// Gives every triple one generated continuation.
///
/// Triple `i` draws its word length uniformly from `[min_words, max_words]` with the stream
/// `derive(seed, i)`, asks the generator for [`generation_request_len`] tokens with seed
/// `derive(seed, i)`, and keeps the first `length` words.
pub fn build_generative_negatives(
    triples: Vec<TrainingTriple>,
    generator: &dyn Generator,
    cfg: &GenerativeNegativeConfig,
    seed: u64,
) -> Result<Vec<TrainingTriple>> {
    if cfg.min_words == 0 || cfg.min_words > cfg.max_words {
        return Err(Error::invalid(
            "min_words",
            "need 0 < min_words <= max_words",
        ));
    }
    triples
        .into_par_iter()
        .enumerate()
        .map(|(i, mut t)| {
            let item_seed = rng::derive(seed, i as u64);
            let mut r = rng::seeded(item_seed);
            let words = cfg.min_words + rng::below(&mut r, cfg.max_words - cfg.min_words + 1);
            let samples = generator
                .generate(
                    &t.prefix,
                    generation_request_len(words),
                    1,
                    &cfg.strategy,
                    item_seed,
                )
                .map_err(|e| Error::Generation {
                    index: i,
                    source: Box::new(e),
                })?;
            let sample = samples.into_iter().next().unwrap_or_default();
            t.generation = Some(truncate_words(&sample, words));
            Ok(t)
        })
        .collect()
}

pub fn write_dataset(path: &Path, triples: &[TrainingTriple]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in triples {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrainingTriple>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_core::RngCore;

    #[test]
    fn tokenizer_examples() {
        assert_eq!(
            tokenize("Hello world."),
            (vec!["Hello".into(), "world".into(), ".".into()], vec![0])
        );
        assert_eq!(tokenize(""), (vec![], vec![]));
        assert_eq!(tokenize("A. B? C!").1, vec![0, 2, 4]);
        let (t, _) = tokenize("(\"quoted,\" she said.)");
        assert_eq!(
            t,
            vec!["(", "\"", "quoted", ",", "\"", "she", "said", ".", ")"]
        );
        assert_eq!(word_count(&t), 3);
    }

    #[test]
    fn tokenizer_is_idempotent_on_rejoined_text() {
        let (t, s) = tokenize("It was late. \"Go!\" he said; then (quietly) left?");
        assert_eq!(tokenize(&t.join(" ")), (t, s));
    }

    #[test]
    fn load_corpus_examples() {
        let dir = tempfile::tempdir().unwrap();
        let one = dir.path().join("one.jsonl");
        fs::write(&one, "{\"doc_id\":\"d1\",\"text\":\"A b. C d.\"}\n").unwrap();
        let docs = load_corpus(&one, CorpusFormat::Jsonl).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(word_count(&docs[0].tokens), 4);
        assert_eq!(docs[0].tokens.iter().filter(|t| *t == ".").count(), 2);
        assert_eq!(docs[0].sentence_starts, vec![0, 3]);

        let empty = dir.path().join("empty.jsonl");
        fs::write(&empty, "").unwrap();
        assert!(matches!(
            load_corpus(&empty, CorpusFormat::Jsonl),
            Err(Error::EmptyCorpus)
        ));

        let three = dir.path().join("three.jsonl");
        fs::write(&three, "{\"doc_id\":\"z\",\"text\":\"x.\"}\n\n{\"doc_id\":\"a\",\"text\":\"y.\"}\n{\"doc_id\":\"m\",\"text\":\"w.\"}\n").unwrap();
        let ids: Vec<_> = load_corpus(&three, CorpusFormat::Jsonl)
            .unwrap()
            .into_iter()
            .map(|d| d.doc_id)
            .collect();
        assert_eq!(ids, vec!["z", "a", "m"]);

        let bad = dir.path().join("bad.jsonl");
        fs::write(
            &bad,
            "{\"doc_id\":\"a\",\"text\":\"y.\"}\n{\"doc_id\": 3}\n",
        )
        .unwrap();
        assert!(matches!(
            load_corpus(&bad, CorpusFormat::Jsonl),
            Err(Error::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn plain_dir_uses_file_order_and_stems() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "Second doc.").unwrap();
        fs::write(dir.path().join("a.txt"), "First doc.").unwrap();
        fs::write(dir.path().join("skip.md"), "ignored").unwrap();
        let docs = load_corpus(dir.path(), CorpusFormat::PlainDir).unwrap();
        assert_eq!(
            docs.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>(),
            vec!["a", "b"]
        );
    }

    #[test]
    fn short_document_yields_no_pairs() {
        let doc = Document::from_text("d", &"w ".repeat(19).replace("w w", "w. w"));
        assert!(doc.len() <= 40);
        assert!(extract_pairs(&doc, &CorpusConfig::default()).is_empty());
    }

    /// All (prefix, continuation) span pairs allowed by the length rules, found by checking
    /// every triple of token indices.
    fn brute_force_options(doc: &Document, cfg: &CorpusConfig) -> Vec<(Span, Vec<Span>)> {
        let n = doc.len();
        let starts_sentence = |i: usize| i == 0 || is_terminator(&doc.tokens[i - 1]);
        let ends_sentence = |i: usize| i == n || starts_sentence(i);
        let mut out = Vec::new();
        for s in 0..n {
            if !starts_sentence(s) {
                continue;
            }
            let best = (s + 1..n)
                .filter(|&e| {
                    ends_sentence(e) && word_count(&doc.tokens[s..e]) <= cfg.prefix_len_words
                })
                .max();
            let Some(e) = best else { continue };
            let w = word_count(&doc.tokens[s..e]);
            if 4 * w < 3 * cfg.prefix_len_words {
                continue;
            }
            let conts: Vec<Span> = (e + 1..=n)
                .filter(|&f| {
                    let c = word_count(&doc.tokens[e..f]);
                    ends_sentence(f) && c >= cfg.cont_min_words && c <= cfg.cont_max_words
                })
                .map(|f| Span::new(e, f))
                .collect();
            if !conts.is_empty() {
                out.push((Span::new(s, e), conts));
            }
        }
        out
    }

    fn oracle_pairs(doc: &Document, cfg: &CorpusConfig) -> Vec<PairSpans> {
        let mut r = rng::seeded(rng::derive(cfg.seed, rng::hash_str(&doc.doc_id)));
        brute_force_options(doc, cfg)
            .into_iter()
            .map(|(prefix, conts)| {
                let x = r.next_u64();
                let k = ((x as u128 * conts.len() as u128) >> 64) as usize;
                PairSpans {
                    prefix,
                    continuation: conts[k],
                }
            })
            .collect()
    }

    #[test]
    fn twelve_one_word_sentences_match_oracle() {
        let text: String = (0..12).map(|i| format!("w{i}. ")).collect();
        let doc = Document::from_text("twelve", &text);
        let cfg = CorpusConfig {
            prefix_len_words: 4,
            cont_min_words: 1,
            cont_max_words: 4,
            seed: 5,
        };
        let pairs = extract_pairs(&doc, &cfg);
        assert_eq!(pairs, oracle_pairs(&doc, &cfg));
        // 4-word prefixes start at sentences 0..=7; sentence 8 falls back to 3 words (= ceil(3 * 4 / 4))
        // and still leaves one word to continue with.
        let lens: Vec<usize> = pairs
            .iter()
            .map(|p| word_count(doc.slice(p.prefix)))
            .collect();
        assert_eq!(lens, vec![4, 4, 4, 4, 4, 4, 4, 4, 3]);
    }

    fn random_doc() -> impl Strategy<Value = Document> {
        prop::collection::vec((1usize..9, 0u8..4), 1..60).prop_map(|sents| {
            let mut tokens = Vec::new();
            for (i, (len, punct)) in sents.into_iter().enumerate() {
                for j in 0..len {
                    tokens.push(format!("w{}", (i * 7 + j) % 13));
                    if punct == 0 && j == 0 && len > 1 {
                        tokens.push(",".into());
                    }
                }
                tokens.push([".", "!", "?", "."][punct as usize].into());
            }
            Document::from_tokens("p", tokens)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn pairs_match_brute_force_and_are_aligned(
            doc in random_doc(),
            plen in 1usize..30,
            cmin in 1usize..10,
            extra in 0usize..20,
            seed in any::<u64>(),
        ) {
            let cfg = CorpusConfig { prefix_len_words: plen, cont_min_words: cmin, cont_max_words: cmin + extra, seed };
            let pairs = extract_pairs(&doc, &cfg);
            prop_assert_eq!(&pairs, &oracle_pairs(&doc, &cfg));
            for p in &pairs {
                prop_assert!(doc.is_sentence_start(p.prefix.start));
                prop_assert!(doc.is_sentence_start(p.prefix.end));
                prop_assert_eq!(p.prefix.end, p.continuation.start);
                prop_assert!(doc.is_aligned(p.continuation));
            }
        }

        #[test]
        fn inbook_negatives_are_length_matched_and_distinct(doc in random_doc(), pick in any::<prop::sample::Index>(), seed in any::<u64>()) {
            let bounds = doc.boundaries();
            let start = doc.sentence_starts[pick.index(doc.sentence_starts.len())];
            let end = *bounds.iter().find(|&&b| b > start).unwrap();
            let gold = Span::new(start, end);
            let available = inbook_candidates(&doc, gold).len();
            match sample_inbook_negatives(&doc, gold, 3, seed) {
                Ok(negs) => {
                    prop_assert!(available >= 3);
                    let mut seen = std::collections::HashSet::new();
                    for n in negs {
                        prop_assert!(n != gold && n.len() == gold.len() && doc.is_aligned(n));
                        prop_assert!(seen.insert(n));
                    }
                }
                Err(Error::InsufficientCandidates { available: a, .. }) => prop_assert_eq!(a, available),
                Err(e) => prop_assert!(false, "{}", e),
            }
        }
    }

    #[test]
    fn inbook_sampler_hand_simulation() {
        let doc = Document::from_text("d", "a. b. c. d.");
        let gold = Span::new(0, 2);
        assert_eq!(
            inbook_candidates(&doc, gold),
            vec![Span::new(2, 4), Span::new(4, 6), Span::new(6, 8)]
        );
        let seed = 17;
        let mut r = rng::seeded(seed);
        let (x1, x2) = (r.next_u64() as u128, r.next_u64() as u128);
        let mut order = [Span::new(2, 4), Span::new(4, 6), Span::new(6, 8)];
        order.swap(0, ((x1 * 3) >> 64) as usize);
        order.swap(1, 1 + ((x2 * 2) >> 64) as usize);
        assert_eq!(
            sample_inbook_negatives(&doc, gold, 2, seed).unwrap(),
            order[..2].to_vec()
        );
    }

    #[test]
    fn only_gold_window_is_insufficient() {
        let doc = Document::from_text("d", "a b c.");
        let err = sample_inbook_negatives(&doc, Span::new(0, 4), 1, 0).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientCandidates { available: 0, .. }
        ));
    }

    struct Greedy;

    impl Generator for Greedy {
        fn generate(
            &self,
            prefix: &[String],
            n: usize,
            k: usize,
            _s: &SamplingStrategy,
            _seed: u64,
        ) -> Result<Vec<Vec<String>>> {
            let last = prefix.last().cloned().unwrap_or_default();
            let out: Vec<String> = (0..n)
                .map(|i| {
                    if i % 3 == 2 {
                        ".".into()
                    } else {
                        format!("{last}{i}")
                    }
                })
                .collect();
            Ok(vec![out; k])
        }
    }

    #[test]
    fn generative_negatives_follow_seeded_lengths() {
        assert!(
            build_generative_negatives(vec![], &Greedy, &Default::default(), 0)
                .unwrap()
                .is_empty()
        );
        let triples: Vec<TrainingTriple> = (0..20)
            .map(|i| TrainingTriple {
                doc_id: "d".into(),
                prefix: vec![format!("p{i}")],
                continuation: vec!["c".into()],
                generation: None,
            })
            .collect();
        let cfg = GenerativeNegativeConfig::default();
        assert_eq!(cfg.strategy, SamplingStrategy::Nucleus(0.9));
        let out = build_generative_negatives(triples.clone(), &Greedy, &cfg, 11).unwrap();
        for (i, t) in out.iter().enumerate() {
            let mut r = rng::seeded(rng::derive(11, i as u64));
            let words = 10 + ((r.next_u64() as u128 * 119) >> 64) as usize;
            let full = Greedy
                .generate(&triples[i].prefix, 2 * words, 1, &cfg.strategy, 0)
                .unwrap()
                .remove(0);
            let g = t.generation.as_ref().unwrap();
            assert_eq!(word_count(g), words);
            assert_eq!(&full[..g.len()], &g[..]);
        }
    }

    #[test]
    fn split_is_half_and_order_preserving() {
        let triples: Vec<TrainingTriple> = (0..11)
            .map(|i| TrainingTriple {
                doc_id: format!("{i:02}"),
                prefix: vec![],
                continuation: vec![],
                generation: None,
            })
            .collect();
        let (a, b) = split_for_generator(triples, 3);
        assert_eq!((a.len(), b.len()), (5, 6));
        assert!(a.windows(2).all(|w| w[0].doc_id < w[1].doc_id));
        assert!(b.windows(2).all(|w| w[0].doc_id < w[1].doc_id));
    }

    #[test]
    fn dataset_round_trip_is_byte_identical() {
        let doc = Document::from_text(
            "d",
            &"one two three. four five! six seven eight? ".repeat(10),
        );
        let cfg = CorpusConfig {
            prefix_len_words: 8,
            cont_min_words: 2,
            cont_max_words: 9,
            seed: 1,
        };
        let data = build_dataset(std::slice::from_ref(&doc), &cfg);
        assert!(!data.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        write_dataset(&p1, &data).unwrap();
        write_dataset(&p2, &build_dataset(&[doc], &cfg)).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(read_dataset(&p1).unwrap(), data);
    }

    #[test]
    fn truncate_words_keeps_trailing_punctuation_only_within_budget() {
        let t: Vec<String> = ["a", ",", "b", ".", "c"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(truncate_words(&t, 2), vec!["a", ",", "b", "."]);
        assert_eq!(truncate_words(&t, 0), Vec::<String>::new());
        assert_eq!(truncate_words(&t, 9), t);
    }
}
