use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::tokenizer::{MarkerConvention, TokenizerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FertilityReport {
    pub corpus_label: String,
    pub tokenizer_label: String,
    pub document_count: usize,
    pub word_count: u64,
    pub token_count: u64,
    pub fertility: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_document: Option<Vec<f64>>,
}

fn count_document(model: &TokenizerModel, doc: &str, buf: &mut String) -> Result<(u64, u64), AnalysisError> {
    let (mut words, mut tokens) = (0u64, 0u64);
    for word in doc.split_whitespace() {
        buf.clear();
        if model.marker() != MarkerConvention::None {
            buf.push(' ');
        }
        buf.push_str(word);
        tokens += model.tokenize(buf)?.len() as u64;
        words += 1;
    }
    Ok((words, tokens))
}

/// Tokens per whitespace-delimited word, each word tokenized as if preceded
/// by a space. Counts are integers, so the result does not depend on how the
/// documents are split across threads.
pub fn fertility<S: AsRef<str> + Sync>(
    model: &TokenizerModel,
    documents: &[S],
    per_document: bool,
) -> Result<FertilityReport, AnalysisError> {
    let counts: Vec<(u64, u64)> = documents
        .par_iter()
        .map_init(String::new, |buf, doc| count_document(model, doc.as_ref(), buf))
        .collect::<Result<_, _>>()?;
    let word_count: u64 = counts.iter().map(|c| c.0).sum();
    let token_count: u64 = counts.iter().map(|c| c.1).sum();
    if word_count == 0 {
        return Err(AnalysisError::EmptyCorpus);
    }
    let per_document = per_document.then(|| {
        counts.iter().filter(|(w, _)| *w > 0).map(|(w, t)| *t as f64 / *w as f64).collect()
    });
    Ok(FertilityReport {
        corpus_label: String::new(),
        tokenizer_label: String::new(),
        document_count: documents.len(),
        word_count,
        token_count,
        fertility: token_count as f64 / word_count as f64,
        per_document,
    })
}

/// One document per non-blank line. A directory contributes every `.txt`
/// file in it, in file-name order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<String>, AnalysisError> {
    let path = path.as_ref();
    let io = |p: &Path, source| AnalysisError::Io { path: p.to_owned(), source };
    let files = if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .map_err(|e| io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_owned()]
    };
    let mut docs = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| io(&f, e))?;
        docs.extend(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned));
    }
    Ok(docs)
}

/// `bin_start,bin_end,count` rows covering every per-document value, with
/// bins of width `width` aligned to multiples of it.
pub fn histogram_csv(values: &[f64], width: f64) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    if values.is_empty() || width.is_nan() || width <= 0.0 {
        return out;
    }
    // Nudge before flooring so 0.3 / 0.1 lands in bin 3.
    let bin = |v: f64| (v / width + 1e-9).floor() as i64;
    let lo = values.iter().map(|&v| bin(v)).min().expect("non-empty");
    let hi = values.iter().map(|&v| bin(v)).max().expect("non-empty");
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in values {
        counts[(bin(v) - lo) as usize] += 1;
    }
    let digits = (-width.log10()).ceil().max(0.0) as usize;
    for (i, c) in counts.iter().enumerate() {
        let start = (lo + i as i64) as f64 * width;
        out.push_str(&format!("{start:.digits$},{:.digits$},{c}\n", start + width));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Vocabulary;

    fn model() -> TokenizerModel {
        let vocab = Vocabulary::from_tokens(["▁", "i", "l", "g", "a", "t", "o", "▁i", "▁il", "▁g", "▁ga", "tt", "tto"])
            .unwrap();
        let merges = [("▁", "i"), ("▁i", "l"), ("▁", "g"), ("▁g", "a"), ("t", "t"), ("tt", "o")];
        TokenizerModel::new(vocab, &merges, MarkerConvention::MetaSpace).unwrap()
    }

    #[test]
    fn il_gatto() {
        let r = fertility(&model(), &["il gatto"], true).unwrap();
        assert_eq!((r.word_count, r.token_count), (2, 3));
        assert_eq!(r.fertility, 1.5);
        assert_eq!(r.per_document, Some(vec![1.5]));
    }

    #[test]
    fn single_token_words_give_one() {
        let r = fertility(&model(), &["il  il\til\n"], false).unwrap();
        assert_eq!(r.fertility, 1.0);
        assert_eq!(r.per_document, None);
    }

    #[test]
    fn pooled_not_averaged() {
        // doc fertilities 1.0 (1 word) and 1.5 (2 words): pooled 4/3, not 1.25.
        let r = fertility(&model(), &["il", "il gatto"], true).unwrap();
        assert_eq!((r.word_count, r.token_count), (3, 4));
        assert_eq!(r.fertility, 4.0 / 3.0);
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(fertility(&model(), &["   ", ""], false), Err(AnalysisError::EmptyCorpus)));
    }

    #[test]
    fn histogram_bins() {
        let csv = histogram_csv(&[1.0, 1.05, 1.3, 1.5], 0.1);
        assert_eq!(
            csv,
            "bin_start,bin_end,count\n1.0,1.1,2\n1.1,1.2,0\n1.2,1.3,0\n1.3,1.4,1\n1.4,1.5,0\n1.5,1.6,1\n"
        );
    }

    #[test]
    fn corpus_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "two\n\nthree\n").unwrap();
        fs::write(dir.path().join("a.txt"), "one\n").unwrap();
        fs::write(dir.path().join("skip.md"), "nope\n").unwrap();
        assert_eq!(load_corpus(dir.path()).unwrap(), vec!["one", "two", "three"]);
    }
}
