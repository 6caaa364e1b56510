//! Corpus ingestion: tokenization, vocabulary building, tf-idf
//! vectorization, sparse matrix file IO, and split management.
//!
//! Conventions, fixed so replication differences stay attributable:
//!
//! - tokens are lowercased maximal alphanumeric runs, no stemming or
//!   stopword removal;
//! - the vocabulary keeps the terms with the highest document frequency,
//!   ties broken lexicographically;
//! - tf is the raw in-document count and idf is the smoothed
//!   `ln((1 + N) / (1 + df)) + 1`;
//! - columns are normalized to unit Euclidean length on request, with
//!   all-zero columns left alone and reported;
//! - labels live in `{-1, +1}`; a `0` label token on input maps to `-1`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::LabeledSet;
use crate::error::{Error, Result};
use crate::moments::DataMatrix;

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Ordered term list with its inverse index. Terms are sorted by
/// descending document frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    requested: usize,
}

impl Vocabulary {
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn size(&self) -> usize {
        self.terms.len()
    }

    /// True when the corpus had fewer distinct terms than requested.
    pub fn truncated(&self) -> bool {
        self.terms.len() < self.requested
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for term in &self.terms {
            writeln!(w, "{term}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut terms = Vec::new();
        for line in BufReader::new(file).lines() {
            let term = line.map_err(|e| Error::io(path, e))?;
            if !term.is_empty() {
                terms.push(term);
            }
        }
        if terms.is_empty() {
            return Err(Error::InvalidInput(format!(
                "vocabulary file {} is empty",
                path.display()
            )));
        }
        let requested = terms.len();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect::<HashMap<_, _>>();
        if index.len() != terms.len() {
            return Err(Error::InvalidInput(format!(
                "vocabulary file {} contains duplicate terms",
                path.display()
            )));
        }
        Ok(Self {
            terms,
            index,
            requested,
        })
    }
}

/// Top-`size` terms by document frequency across all provided documents.
/// A corpus with fewer distinct terms yields a shorter vocabulary (check
/// [`Vocabulary::truncated`]) rather than an error.
pub fn build_vocabulary(docs: &[Vec<String>], size: usize) -> Result<Vocabulary> {
    if size == 0 {
        return Err(Error::InvalidInput("vocabulary size must be at least 1".into()));
    }
    if docs.is_empty() {
        return Err(Error::InvalidInput("cannot build a vocabulary from zero documents".into()));
    }
    let mut document_frequency: HashMap<&str, usize> = HashMap::new();
    let mut seen: Vec<&str> = Vec::new();
    for doc in docs {
        seen.clear();
        for token in doc {
            if !seen.contains(&token.as_str()) {
                seen.push(token);
                *document_frequency.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = document_frequency.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(size);
    let terms: Vec<String> = ranked.into_iter().map(|(t, _)| t.to_owned()).collect();
    let index = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary {
        terms,
        index,
        requested: size,
    })
}

/// Smoothed inverse document frequencies for a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfWeights {
    idf: Vec<f64>,
    fitted_on: usize,
}

impl IdfWeights {
    pub fn values(&self) -> &[f64] {
        &self.idf
    }

    /// Number of documents the statistics were fit on.
    pub fn fitted_on(&self) -> usize {
        self.fitted_on
    }
}

/// Document-frequency statistics over `docs`:
/// `idf_i = ln((1 + N) / (1 + df_i)) + 1`.
pub fn fit_idf(docs: &[Vec<String>], vocab: &Vocabulary) -> IdfWeights {
    let mut df = vec![0usize; vocab.size()];
    let mut seen = vec![false; vocab.size()];
    for doc in docs {
        seen.fill(false);
        for token in doc {
            if let Some(i) = vocab.index_of(token) {
                if !seen[i] {
                    seen[i] = true;
                    df[i] += 1;
                }
            }
        }
    }
    let n = docs.len();
    let idf = df
        .iter()
        .map(|&dfi| ((1 + n) as f64 / (1 + dfi) as f64).ln() + 1.0)
        .collect();
    IdfWeights { idf, fitted_on: n }
}

/// tf-idf matrix plus the indices of columns that matched no vocabulary
/// term; those columns are all zeros and callers typically drop them.
#[derive(Debug, Clone)]
pub struct Vectorized {
    pub matrix: DataMatrix,
    pub zero_columns: Vec<usize>,
}

/// One-shot vectorization: fits the idf statistics on `docs` and encodes
/// the same documents. Entry `(i, j)` is
/// `count(term_i, doc_j) * idf_i`, optionally column-normalized to unit
/// Euclidean length.
pub fn tfidf_vectorize(
    docs: &[Vec<String>],
    vocab: &Vocabulary,
    unit_normalize: bool,
) -> Result<Vectorized> {
    let idf = fit_idf(docs, vocab);
    tfidf_vectorize_with_idf(docs, vocab, &idf, unit_normalize)
}

/// Vectorization with externally fitted idf statistics (for source-only
/// idf or out-of-sample encoding).
pub fn tfidf_vectorize_with_idf(
    docs: &[Vec<String>],
    vocab: &Vocabulary,
    idf: &IdfWeights,
    unit_normalize: bool,
) -> Result<Vectorized> {
    if docs.is_empty() {
        return Err(Error::InvalidInput("cannot vectorize zero documents".into()));
    }
    if idf.idf.len() != vocab.size() {
        return Err(Error::DimensionMismatch(format!(
            "idf has {} entries for a vocabulary of {}",
            idf.idf.len(),
            vocab.size()
        )));
    }
    let d = vocab.size();
    let n = docs.len();
    let mut matrix = DMatrix::zeros(d, n);
    let mut zero_columns = Vec::new();
    for (j, doc) in docs.iter().enumerate() {
        let mut matched = false;
        for token in doc {
            if let Some(i) = vocab.index_of(token) {
                matrix[(i, j)] += idf.idf[i];
                matched = true;
            }
        }
        if !matched {
            zero_columns.push(j);
            continue;
        }
        if unit_normalize {
            let norm = matrix.column(j).norm();
            if norm > 0.0 {
                for i in 0..d {
                    matrix[(i, j)] /= norm;
                }
            }
        }
    }
    Ok(Vectorized {
        matrix: DataMatrix::new(matrix)?,
        zero_columns,
    })
}

/// Writes the sparse sample file: header `#d <dimension>`, then one line
/// per sample with an optional leading label and 1-based ascending
/// `index:value` pairs. Values carry 17 significant digits so the f64
/// round trip is exact.
pub fn write_sparse(path: &Path, matrix: &DataMatrix, labels: Option<&[i8]>) -> Result<()> {
    if let Some(labels) = labels {
        if labels.len() != matrix.sample_count() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} samples",
                labels.len(),
                matrix.sample_count()
            )));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    writeln!(w, "#d {}", matrix.feature_count()).map_err(|e| Error::io(path, e))?;
    for j in 0..matrix.sample_count() {
        line.clear();
        if let Some(labels) = labels {
            line.push_str(if labels[j] > 0 { "+1" } else { "-1" });
        }
        for i in 0..matrix.feature_count() {
            let v = matrix.values()[(i, j)];
            if v != 0.0 {
                if !line.is_empty() {
                    line.push(' ');
                }
                line.push_str(&format!("{}:{:.16e}", i + 1, v));
            }
        }
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the sparse sample file written by [`write_sparse`]. Labels are
/// returned when every line carries one; mixing labeled and unlabeled
/// lines is a parse error, as is an index outside the declared dimension.
pub fn read_sparse(path: &Path) -> Result<(DataMatrix, Option<Vec<i8>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty file, expected `#d <dimension>` header".into(),
    })?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let d: usize = header
        .strip_prefix("#d ")
        .and_then(|s| s.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("bad header {header:?}, expected `#d <dimension>`"),
        })?;

    let mut columns: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels: Vec<i8> = Vec::new();
    let mut labeled_lines = 0usize;

    for (zero_index, line) in lines {
        let line_no = zero_index + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut entries = Vec::new();
        let mut label: Option<i8> = None;
        for (t, token) in trimmed.split_whitespace().enumerate() {
            if t == 0 && !token.contains(':') {
                label = Some(parse_label(token, line_no)?);
                continue;
            }
            let (idx_str, val_str) = token.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected index:value, got {token:?}"),
            })?;
            let idx: usize = idx_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad feature index {idx_str:?}"),
            })?;
            if idx == 0 || idx > d {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("feature index {idx} outside 1..={d}"),
                });
            }
            let value: f64 = val_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad feature value {val_str:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite feature value {val_str:?}"),
                });
            }
            if let Some(&(last, _)) = entries.last() {
                if idx <= last {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("feature indices must be ascending, {idx} after {last}"),
                    });
                }
            }
            entries.push((idx, value));
        }
        if let Some(l) = label {
            labels.push(l);
            labeled_lines += 1;
        }
        columns.push(entries);
    }

    if columns.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "file declares a dimension but contains no samples".into(),
        });
    }
    if labeled_lines != 0 && labeled_lines != columns.len() {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "{labeled_lines} of {} lines carry labels; label all lines or none",
                columns.len()
            ),
        });
    }

    let mut matrix = DMatrix::zeros(d, columns.len());
    for (j, entries) in columns.iter().enumerate() {
        for &(idx, value) in entries {
            matrix[(idx - 1, j)] = value;
        }
    }
    let labels = if labeled_lines == 0 { None } else { Some(labels) };
    Ok((DataMatrix::new(matrix)?, labels))
}

fn parse_label(token: &str, line: usize) -> Result<i8> {
    match token {
        "+1" | "1" => Ok(1),
        "-1" => Ok(-1),
        "0" => Ok(-1), // 0/1 labels map to -1/+1 at ingestion
        other => Err(Error::Parse {
            line,
            message: format!("bad label token {other:?}"),
        }),
    }
}

/// Draws a deterministic pseudo-random validation subset of the given
/// size; the remainder keeps the pool's original order and is `None` when
/// the whole pool was selected. The same seed always selects the same
/// samples.
pub fn sample_validation(
    pool: &LabeledSet,
    size: usize,
    seed: u64,
) -> Result<(LabeledSet, Option<LabeledSet>)> {
    let n = pool.len();
    if size == 0 || size > n {
        return Err(Error::InvalidInput(format!(
            "validation size {size} outside 1..={n}"
        )));
    }
    let chosen = sample_indices(n, size, seed);
    let mut picked = vec![false; n];
    for &i in &chosen {
        picked[i] = true;
    }
    let remainder: Vec<usize> = (0..n).filter(|&i| !picked[i]).collect();
    let validation = pool.select(&chosen)?;
    let rest = if remainder.is_empty() {
        None
    } else {
        Some(pool.select(&remainder)?)
    };
    Ok((validation, rest))
}

/// Partial Fisher-Yates over `0..n`, returning `size` distinct indices in
/// ascending order.
pub fn sample_indices(n: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for k in 0..size.min(n) {
        let j = rng.random_range(k..n);
        pool.swap(k, j);
    }
    let mut chosen = pool[..size].to_vec();
    chosen.sort_unstable();
    chosen
}

/// A raw document prior to vectorization.
#[derive(Debug, Clone)]
pub struct RawDoc {
    pub id: String,
    pub label: Option<i8>,
    pub tokens: Vec<String>,
}

/// Reads a raw corpus either from a directory laid out as
/// `<label>/<docid>.txt` (label directories `pos`, `+1`, `1` are positive;
/// `neg`, `-1`, `0` negative; `unlabeled` or `unk` unlabeled) or from a
/// manifest file with tab- or space-separated `path label` lines (label
/// `?` or `unlabeled` marks unlabeled documents; paths are relative to the
/// manifest). Documents come back sorted by id so ingestion is
/// deterministic regardless of filesystem order.
pub fn read_corpus(path: &Path) -> Result<Vec<RawDoc>> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut docs = if meta.is_dir() {
        read_corpus_dir(path)?
    } else {
        read_corpus_manifest(path)?
    };
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    if docs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "corpus {} contains no documents",
            path.display()
        )));
    }
    Ok(docs)
}

fn read_corpus_dir(dir: &Path) -> Result<Vec<RawDoc>> {
    let mut docs = Vec::new();
    let mut label_dirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    label_dirs.sort_by_key(|e| e.file_name());
    for entry in label_dirs {
        let label_path = entry.path();
        if !label_path.is_dir() {
            continue;
        }
        let label_name = entry.file_name().to_string_lossy().to_string();
        let label = dir_label(&label_name).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown label directory {label_name:?}; use pos/neg/unlabeled"
            ))
        })?;
        let mut files: Vec<_> = std::fs::read_dir(&label_path)
            .map_err(|e| Error::io(&label_path, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(&label_path, e))?;
        files.sort_by_key(|e| e.file_name());
        for file in files {
            let file_path = file.path();
            if !file_path.is_file() {
                continue;
            }
            let text =
                std::fs::read_to_string(&file_path).map_err(|e| Error::io(&file_path, e))?;
            docs.push(RawDoc {
                id: format!("{}/{}", label_name, file.file_name().to_string_lossy()),
                label,
                tokens: tokenize(&text),
            });
        }
    }
    Ok(docs)
}

fn dir_label(name: &str) -> Option<Option<i8>> {
    match name {
        "pos" | "+1" | "1" => Some(Some(1)),
        "neg" | "-1" | "0" => Some(Some(-1)),
        "unlabeled" | "unk" => Some(None),
        _ => None,
    }
}

fn read_corpus_manifest(manifest: &Path) -> Result<Vec<RawDoc>> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let file = File::open(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut docs = Vec::new();
    for (zero_index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = zero_index + 1;
        let line = line.map_err(|e| Error::io(manifest, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (doc_path, label_token) =
            trimmed.rsplit_once(|c: char| c == '\t' || c == ' ').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `path label`, got {trimmed:?}"),
            })?;
        let label = match label_token {
            "?" | "unlabeled" | "unk" => None,
            token => Some(parse_label(token, line_no)?),
        };
        let full = base.join(doc_path.trim());
        let text = std::fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
        docs.push(RawDoc {
            id: doc_path.trim().to_owned(),
            label,
            tokens: tokenize(&text),
        });
    }
    Ok(docs)
}

/// The standard partition of an adaptation task: labeled source samples,
/// an unlabeled target feature block used for representation learning,
/// and the held-out labeled target pool that validation and test subsets
/// are drawn from.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub source_labeled: LabeledSet,
    pub target_unlabeled: DataMatrix,
    pub target_labeled_pool: LabeledSet,
    pub seed: u64,
}

impl CorpusSplit {
    pub fn new(
        source_labeled: LabeledSet,
        target_unlabeled: DataMatrix,
        target_labeled_pool: LabeledSet,
        seed: u64,
    ) -> Result<Self> {
        let d = source_labeled.matrix().feature_count();
        if target_unlabeled.feature_count() != d
            || target_labeled_pool.matrix().feature_count() != d
        {
            return Err(Error::DimensionMismatch(
                "all partitions must share one feature dimension".into(),
            ));
        }
        Ok(Self {
            source_labeled,
            target_unlabeled,
            target_labeled_pool,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts.iter().map(|t| tokenize(t)).collect()
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(
            tokenize("Hello, WORLD!  it's 42"),
            vec!["hello", "world", "it", "s", "42"]
        );
        assert!(tokenize("...").is_empty());
    }

    #[test]
    fn vocabulary_prefers_frequency_then_lexicographic() {
        let corpus = docs(&["a b", "a c"]);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(vocab.terms(), ["a"]);

        let vocab = build_vocabulary(&corpus, 2).unwrap();
        assert_eq!(vocab.terms(), ["a", "b"]);
    }

    #[test]
    fn vocabulary_truncates_with_flag() {
        let corpus = docs(&["a b"]);
        let vocab = build_vocabulary(&corpus, 10).unwrap();
        assert_eq!(vocab.size(), 2);
        assert!(vocab.truncated());
    }

    #[test]
    fn vocabulary_matches_counting_oracle() {
        // planted Zipf-ish frequencies: term t_k appears in 100 / (k + 1) docs
        let mut texts = Vec::new();
        for doc_index in 0..100usize {
            let mut words = Vec::new();
            for k in 0..20usize {
                if doc_index % (k + 1) == 0 {
                    words.push(format!("t{k:02}"));
                }
            }
            texts.push(words.join(" "));
        }
        let corpus: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let vocab = build_vocabulary(&corpus, 5).unwrap();
        // hash-map counting oracle
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in &corpus {
            let mut uniq: Vec<&String> = doc.iter().collect();
            uniq.sort();
            uniq.dedup();
            for t in uniq {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let expected: Vec<String> = ranked.into_iter().take(5).map(|(t, _)| t).collect();
        assert_eq!(vocab.terms(), expected.as_slice());
    }

    #[test]
    fn idf_of_ubiquitous_term_is_one() {
        let corpus = docs(&["a b", "a c", "a d"]);
        let vocab = build_vocabulary(&corpus, 4).unwrap();
        let idf = fit_idf(&corpus, &vocab);
        let a = vocab.index_of("a").unwrap();
        assert_abs_diff_eq!(idf.values()[a], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn tfidf_hand_computed_single_doc() {
        let corpus = docs(&["a a b"]);
        let vocab = build_vocabulary(&corpus, 2).unwrap();
        let out = tfidf_vectorize(&corpus, &vocab, true).unwrap();
        let a = vocab.index_of("a").unwrap();
        let b = vocab.index_of("b").unwrap();
        let norm = (5.0f64).sqrt();
        assert_abs_diff_eq!(out.matrix.values()[(a, 0)], 2.0 / norm, epsilon = 1e-15);
        assert_abs_diff_eq!(out.matrix.values()[(b, 0)], 1.0 / norm, epsilon = 1e-15);
        assert!(out.zero_columns.is_empty());
    }

    #[test]
    fn tfidf_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let words = ["w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7"];
        let mut texts = Vec::new();
        for _ in 0..20 {
            let len = rng.random_range(1..12);
            let mut t = Vec::new();
            for _ in 0..len {
                t.push(words[rng.random_range(0..words.len())]);
            }
            texts.push(t.join(" "));
        }
        let corpus: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let vocab = build_vocabulary(&corpus, 8).unwrap();
        let out = tfidf_vectorize(&corpus, &vocab, false).unwrap();
        // brute-force per-term oracle
        for (i, term) in vocab.terms().iter().enumerate() {
            let df = corpus.iter().filter(|doc| doc.iter().any(|t| t == term)).count();
            let idf = ((1.0 + 20.0) / (1.0 + df as f64)).ln() + 1.0;
            for (j, doc) in corpus.iter().enumerate() {
                let tf = doc.iter().filter(|t| *t == term).count() as f64;
                assert_abs_diff_eq!(out.matrix.values()[(i, j)], tf * idf, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tfidf_flags_documents_without_vocabulary_terms() {
        let corpus = docs(&["a b", "zzz qqq", "a"]);
        let vocab = build_vocabulary(&docs(&["a b", "a"]), 2).unwrap();
        let out = tfidf_vectorize(&corpus, &vocab, true).unwrap();
        assert_eq!(out.zero_columns, vec![1]);
        assert!(out.matrix.values().column(1).iter().all(|v| *v == 0.0));
        // non-flagged columns have unit norm
        for j in [0usize, 2] {
            assert_abs_diff_eq!(out.matrix.values().column(j).norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn idf_is_document_order_invariant() {
        let forward = docs(&["a b", "b c", "c d"]);
        let backward = docs(&["c d", "b c", "a b"]);
        let vocab = build_vocabulary(&forward, 4).unwrap();
        assert_eq!(fit_idf(&forward, &vocab), fit_idf(&backward, &vocab));
    }

    #[test]
    fn sparse_file_round_trip_hand_case() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sparse");
        std::fs::write(&path, "#d 3\n+1 1:0.5 3:0.25\n-1\n").unwrap();
        let (matrix, labels) = read_sparse(&path).unwrap();
        assert_eq!(matrix.feature_count(), 3);
        assert_eq!(matrix.sample_count(), 2);
        assert_eq!(matrix.values()[(0, 0)], 0.5);
        assert_eq!(matrix.values()[(1, 0)], 0.0);
        assert_eq!(matrix.values()[(2, 0)], 0.25);
        assert!(matrix.values().column(1).iter().all(|v| *v == 0.0));
        assert_eq!(labels, Some(vec![1, -1]));
    }

    #[test]
    fn sparse_file_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, content: &str| {
            let p = dir.path().join(name);
            std::fs::write(&p, content).unwrap();
            p
        };
        for (name, content) in [
            ("no_header", "1:0.5\n"),
            ("bad_index", "#d 2\n+1 3:0.5\n"),
            ("zero_index", "#d 2\n+1 0:0.5\n"),
            ("bad_value", "#d 2\n+1 1:abc\n"),
            ("descending", "#d 3\n+1 2:1.0 1:2.0\n"),
            ("mixed_labels", "#d 2\n+1 1:1.0\n1:2.0\n"),
            ("no_samples", "#d 2\n"),
            ("bad_label", "#d 2\n+2 1:1.0\n"),
        ] {
            let p = write(name, content);
            assert!(
                matches!(read_sparse(&p), Err(Error::Parse { .. })),
                "{name} should fail to parse"
            );
        }
    }

    #[test]
    fn validation_sampling_is_deterministic_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let matrix =
            DataMatrix::new(DMatrix::from_fn(2, 10, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let labels: Vec<i8> = (0..10).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let pool = LabeledSet::new(matrix, labels).unwrap();

        let (v1, r1) = sample_validation(&pool, 4, 7).unwrap();
        let (v2, _) = sample_validation(&pool, 4, 7).unwrap();
        assert_eq!(v1.matrix().values(), v2.matrix().values());
        assert_eq!(v1.len() + r1.as_ref().map_or(0, |r| r.len()), 10);

        // selecting the full pool leaves an empty remainder
        let (v_all, rest) = sample_validation(&pool, 10, 7).unwrap();
        assert_eq!(v_all.len(), 10);
        assert!(rest.is_none());

        assert!(sample_validation(&pool, 11, 7).is_err());
        assert!(sample_validation(&pool, 0, 7).is_err());
    }

    #[test]
    fn validation_sampling_is_roughly_uniform() {
        let n = 10usize;
        let mut inclusion = vec![0usize; n];
        for seed in 0..100u64 {
            for i in sample_indices(n, n / 2, seed) {
                inclusion[i] += 1;
            }
        }
        // inclusion frequency should be within 3 sigma of 0.5 over 100 draws
        for (i, &count) in inclusion.iter().enumerate() {
            let freq = count as f64 / 100.0;
            assert!(
                (freq - 0.5).abs() <= 3.0 * (0.25f64 / 100.0).sqrt(),
                "sample {i} included with frequency {freq}"
            );
        }
    }

    #[test]
    fn corpus_dir_and_manifest_agree() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        for (label, name, text) in [
            ("pos", "d1.txt", "good great"),
            ("neg", "d2.txt", "bad awful"),
            ("unlabeled", "d3.txt", "plain words"),
        ] {
            let sub = root.join(label);
            std::fs::create_dir_all(&sub).unwrap();
            std::fs::write(sub.join(name), text).unwrap();
        }
        let from_dir = read_corpus(&root).unwrap();
        assert_eq!(from_dir.len(), 3);
        assert_eq!(from_dir[0].label, Some(-1)); // neg/d2.txt sorts first
        assert_eq!(from_dir[1].label, Some(1));
        assert_eq!(from_dir[2].label, None);

        let manifest = dir.path().join("manifest.txt");
        std::fs::write(
            &manifest,
            "corpus/pos/d1.txt +1\ncorpus/neg/d2.txt -1\ncorpus/unlabeled/d3.txt ?\n",
        )
        .unwrap();
        let from_manifest = read_corpus(&manifest).unwrap();
        assert_eq!(from_manifest.len(), 3);
        let labels: Vec<Option<i8>> = from_manifest.iter().map(|d| d.label).collect();
        assert!(labels.contains(&Some(1)) && labels.contains(&Some(-1)) && labels.contains(&None));
    }

    proptest! {
        #[test]
        fn sparse_round_trip_is_lossless(
            entries in proptest::collection::vec(
                (0usize..4, 0usize..6, -1.0e3f64..1.0e3),
                0..30,
            ),
            labeled in proptest::bool::ANY,
        ) {
            let mut m = DMatrix::zeros(4, 6);
            for (i, j, v) in entries {
                m[(i, j)] = v;
            }
            let matrix = DataMatrix::new(m).unwrap();
            let labels: Vec<i8> = (0..6).map(|j| if j % 2 == 0 { 1 } else { -1 }).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("round.sparse");
            write_sparse(&path, &matrix, labeled.then_some(labels.as_slice())).unwrap();
            let (back, back_labels) = read_sparse(&path).unwrap();
            prop_assert_eq!(back.values(), matrix.values());
            prop_assert_eq!(back_labels, labeled.then_some(labels));
        }

        #[test]
        fn unit_normalization_yields_unit_columns(
            texts in proptest::collection::vec("[a-d ]{0,16}", 1..8),
        ) {
            let corpus: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
            prop_assume!(corpus.iter().any(|d| !d.is_empty()));
            let vocab = build_vocabulary(&corpus, 4);
            prop_assume!(vocab.is_ok());
            let vocab = vocab.unwrap();
            let out = tfidf_vectorize(&corpus, &vocab, true).unwrap();
            for j in 0..out.matrix.sample_count() {
                if out.zero_columns.contains(&j) {
                    continue;
                }
                let norm = out.matrix.values().column(j).norm();
                prop_assert!((norm - 1.0).abs() <= 1e-10);
            }
        }

        #[test]
        fn vocabulary_is_deterministic(
            texts in proptest::collection::vec("[a-e ]{0,12}", 1..10),
        ) {
            let corpus: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
            prop_assume!(corpus.iter().any(|d| !d.is_empty()));
            let a = build_vocabulary(&corpus, 3);
            let b = build_vocabulary(&corpus, 3);
            prop_assume!(a.is_ok());
            prop_assert_eq!(a.unwrap().terms(), b.unwrap().terms());
        }
    }
}
