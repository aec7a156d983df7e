//! Tokenization, vocabulary, front-padded encoding and embedding setup.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Half-width of the uniform range used for words without a pretrained vector.
pub const EMBED_INIT_RANGE: f64 = 0.25;

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '"', '\''];

/// Lowercases and splits on whitespace, with punctuation split off as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for ch in text.chars() {
        if PUNCT.contains(&ch) {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.extend(ch.to_lowercase());
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_freq` times, ordered by descending
    /// frequency then lexicographically. Id 0 is always UNK.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::arg("min_freq must be at least 1"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sent in corpus {
            for tok in sent {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq && t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_tokens(
            std::iter::once(UNK.to_owned()).chain(kept.into_iter().map(|(t, _)| t.to_owned())).collect(),
        )
        .expect("UNK first"))
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::arg("vocabulary must start with the UNK token"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::arg(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { index, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// One sentence encoded to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedRow {
    pub ids: Vec<usize>,
    /// True at padding positions, always a prefix of the row.
    pub pad_mask: Vec<bool>,
}

impl EncodedRow {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn pad_count(&self) -> usize {
        self.pad_mask.iter().take_while(|&&p| p).count()
    }
}

/// Front-pads with UNK up to `len`, or truncates at the end.
pub fn encode_and_pad<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, len: usize) -> EncodedRow {
    let kept = &tokens[..tokens.len().min(len)];
    let pads = len - kept.len();
    let mut ids = vec![UNK_ID; pads];
    ids.extend(kept.iter().map(|t| vocab.id(t.as_ref())));
    let mut pad_mask = vec![true; pads];
    pad_mask.resize(len, false);
    EncodedRow { ids, pad_mask }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedBatch {
    pub rows: Vec<EncodedRow>,
    pub labels: Vec<usize>,
    pub len: usize,
}

impl EncodedBatch {
    pub fn encode(examples: &[Example], vocab: &Vocabulary, len: usize) -> Self {
        let rows = examples
            .iter()
            .map(|e| encode_and_pad(&tokenize(&e.text), vocab, len))
            .collect();
        EncodedBatch {
            rows,
            labels: examples.iter().map(|e| e.label).collect(),
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sub-batch made of the given row indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        EncodedBatch {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            len: self.len,
        }
    }
}

/// `V × k` embedding table; pretrained rows are copied, the rest drawn
/// uniformly from `[−0.25, 0.25]`.
pub fn init_embeddings<R: Rng>(
    vocab: &Vocabulary,
    dim: usize,
    pretrained: Option<&HashMap<String, Vec<f64>>>,
    rng: &mut R,
) -> Result<Tensor> {
    if dim == 0 {
        return Err(Error::arg("embedding dimension must be at least 1"));
    }
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for tok in vocab.tokens() {
        // Draw for every row so the random rows do not depend on pretrained coverage.
        let random: Vec<f64> = (0..dim)
            .map(|_| rng.gen_range(-EMBED_INIT_RANGE..=EMBED_INIT_RANGE))
            .collect();
        match pretrained.and_then(|p| p.get(tok)) {
            Some(v) if v.len() != dim => {
                return Err(Error::Format {
                    line: 0,
                    msg: format!("pretrained vector for {tok:?} has {} dims, expected {dim}", v.len()),
                })
            }
            Some(v) => data.extend_from_slice(v),
            None => data.extend(random),
        }
    }
    Tensor::matrix(vocab.len(), dim, data)
}

/// Reads word2vec text format: a `"V k"` header then `V` lines of `token v1 … vk`.
pub fn load_word2vec_text(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    parse_word2vec_text(&fs::read_to_string(path)?)
}

pub fn parse_word2vec_text(text: &str) -> Result<HashMap<String, Vec<f64>>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Format {
        line: 1,
        msg: "missing header".into(),
    })?;
    let fmt = |line: usize, msg: String| Error::Format { line: line + 1, msg };
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| fmt(0, format!("bad header {header:?}: {e}")))?;
    let [count, dim] = nums[..] else {
        return Err(fmt(0, format!("header must be \"V k\", got {header:?}")));
    };
    let mut out = HashMap::with_capacity(count);
    for (ln, line) in lines {
        let mut parts = line.split_whitespace();
        let tok = parts.next().expect("non-empty line");
        let vec: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fmt(ln, format!("bad number: {e}")))?;
        if vec.len() != dim {
            return Err(fmt(ln, format!("expected {dim} values, found {}", vec.len())));
        }
        out.insert(tok.to_owned(), vec);
    }
    if out.len() != count {
        return Err(fmt(0, format!("header declares {count} vectors, found {}", out.len())));
    }
    Ok(out)
}

/// Writes vectors in word2vec text format, sorted by token.
pub fn write_word2vec_text(path: &Path, vectors: &HashMap<String, Vec<f64>>) -> Result<()> {
    let dim = vectors.values().next().map_or(0, Vec::len);
    let mut keys: Vec<&String> = vectors.keys().collect();
    keys.sort();
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{} {dim}", vectors.len())?;
    for k in keys {
        write!(f, "{k}")?;
        for v in &vectors[k] {
            write!(f, " {v:.9}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub label: usize,
    pub text: String,
}

/// Reads `label<TAB>text` lines. Blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn parse_dataset(text: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line.split_once('\t').ok_or_else(|| Error::Format {
            line: i + 1,
            msg: "expected \"label<TAB>text\"".into(),
        })?;
        let label = label.trim().parse::<usize>().map_err(|_| Error::Format {
            line: i + 1,
            msg: format!("label {label:?} is not a non-negative integer"),
        })?;
        out.push(Example {
            label,
            text: body.to_owned(),
        });
    }
    Ok(out)
}

/// Fails if any label is outside `[0, classes)`.
pub fn check_labels(examples: &[Example], classes: usize) -> Result<()> {
    match examples.iter().position(|e| e.label >= classes) {
        Some(i) => Err(Error::arg(format!(
            "example {} has label {} but the model has {classes} classes",
            i + 1,
            examples[i].label
        ))),
        None => Ok(()),
    }
}

/// Longest tokenized sentence, at least 1.
pub fn max_token_len(examples: &[Example]) -> usize {
    examples
        .iter()
        .map(|e| tokenize(&e.text).len())
        .max()
        .unwrap_or(0)
        .max(1)
}
