//! The EMB1 embedding store.
//!
//! An EMB1 file holds every layer of a contextual encoder's output for one
//! corpus in one language: a `[cls]` vector and the per-token states of each
//! sentence, plus the grouping of subword tokens into surface words.
//!
//! Layout (all integers `u32`, all floats `f32`, little-endian):
//!
//! ```text
//! "EMB1" | version=1 | num_layers L | hidden_dim D | num_sentences N
//! | manifest_len | manifest JSON (UTF-8 object: "lang", "model", "tokenizer", extras)
//! | per sentence:
//!     num_tokens T | num_words W | W x (group_len, group_len x token index)
//!     | per layer: D floats ([cls]) then T*D floats (row-major token states)
//! ```
//!
//! Layer 0 is the embedding-layer output; indices grow toward the output.
//! Token states never include special tokens.

use std::io::{self, Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u32 = 1;

/// Which single vector represents a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReprSource {
    /// The stored `[cls]` vector.
    Cls,
    /// Arithmetic mean of the token states.
    Mean,
}

impl std::fmt::Display for ReprSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReprSource::Cls => f.write_str("cls"),
            ReprSource::Mean => f.write_str("mean"),
        }
    }
}

/// The layer and pooling a fitted model expects its inputs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub layer: usize,
    pub source: ReprSource,
}

/// States of one sentence at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStates {
    pub cls: Vec<f32>,
    /// Row-major `[num_tokens x hidden_dim]`.
    pub tokens: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbeddings {
    pub num_tokens: usize,
    /// Contiguous, disjoint, ordered partition of `0..num_tokens`.
    pub word_groups: Vec<Vec<u32>>,
    /// One entry per layer.
    pub layers: Vec<LayerStates>,
}

impl SentenceEmbeddings {
    pub fn token(&self, layer: usize, token: usize, hidden_dim: usize) -> &[f32] {
        &self.layers[layer].tokens[token * hidden_dim..(token + 1) * hidden_dim]
    }

    pub fn num_words(&self) -> usize {
        self.word_groups.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub lang: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub sentences: Vec<SentenceEmbeddings>,
    /// Manifest entries other than `lang` (model, tokenizer, extras).
    pub manifest: Map<String, Value>,
}

/// One fixed-width vector per sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRepr {
    pub vector: Vec<f64>,
    pub source: ReprSource,
    pub layer: usize,
}

impl SentenceRepr {
    pub fn new(vector: Vec<f64>, source: ReprSource, layer: usize) -> Self {
        SentenceRepr {
            vector,
            source,
            layer,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Checks that `groups` is a contiguous, disjoint, ordered partition of
/// `0..num_tokens` with no empty group.
pub fn validate_word_groups(groups: &[Vec<u32>], num_tokens: usize) -> Result<()> {
    let mut next = 0usize;
    for (g, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::invariant(
                format!("word_groups[{g}]"),
                "empty word group",
            ));
        }
        for &tok in group {
            if tok as usize != next {
                return Err(Error::invariant(
                    format!("word_groups[{g}]"),
                    format!("expected token index {next}, found {tok}"),
                ));
            }
            next += 1;
        }
    }
    if next != num_tokens {
        return Err(Error::invariant(
            "word_groups",
            format!("groups cover {next} tokens but the sentence has {num_tokens}"),
        ));
    }
    Ok(())
}

impl EmbeddingSet {
    pub fn new(lang: impl Into<String>, num_layers: usize, hidden_dim: usize) -> Self {
        EmbeddingSet {
            lang: lang.into(),
            num_layers,
            hidden_dim,
            sentences: Vec::new(),
            manifest: Map::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// The manifest exactly as written to disk, `lang` included.
    pub fn manifest_json(&self) -> Map<String, Value> {
        let mut m = self.manifest.clone();
        m.insert("lang".into(), Value::String(self.lang.clone()));
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::invariant("num_layers", "must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invariant("hidden_dim", "must be at least 1"));
        }
        for (s, sent) in self.sentences.iter().enumerate() {
            validate_word_groups(&sent.word_groups, sent.num_tokens).map_err(|e| match e {
                Error::InvariantViolation { field, detail } => {
                    Error::invariant(format!("sentence {s} {field}"), detail)
                }
                other => other,
            })?;
            if sent.layers.len() != self.num_layers {
                return Err(Error::invariant(
                    format!("sentence {s} layers"),
                    format!("{} layers, expected {}", sent.layers.len(), self.num_layers),
                ));
            }
            for (l, layer) in sent.layers.iter().enumerate() {
                if layer.cls.len() != self.hidden_dim {
                    return Err(Error::invariant(
                        format!("sentence {s} layer {l} cls"),
                        format!("length {}, expected {}", layer.cls.len(), self.hidden_dim),
                    ));
                }
                if layer.tokens.len() != sent.num_tokens * self.hidden_dim {
                    return Err(Error::invariant(
                        format!("sentence {s} layer {l} tokens"),
                        format!(
                            "length {}, expected {}",
                            layer.tokens.len(),
                            sent.num_tokens * self.hidden_dim
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_indices(&self, sentence: usize, layer: usize) -> Result<&SentenceEmbeddings> {
        if layer >= self.num_layers {
            return Err(Error::IndexOutOfRange {
                what: "layer",
                index: layer,
                len: self.num_layers,
            });
        }
        self.sentences.get(sentence).ok_or(Error::IndexOutOfRange {
            what: "sentence",
            index: sentence,
            len: self.sentences.len(),
        })
    }

    /// A single sentence vector: the stored `[cls]` state or the mean of the
    /// token states at `layer`.
    pub fn sentence_repr(
        &self,
        sentence: usize,
        layer: usize,
        source: ReprSource,
    ) -> Result<SentenceRepr> {
        let sent = self.check_indices(sentence, layer)?;
        let states = &sent.layers[layer];
        let vector = match source {
            ReprSource::Cls => states.cls.iter().map(|&x| x as f64).collect(),
            ReprSource::Mean => {
                if sent.num_tokens == 0 {
                    return Err(Error::EmptyInput(format!(
                        "sentence {sentence} has no tokens to mean-pool"
                    )));
                }
                let mut acc = vec![0f64; self.hidden_dim];
                for row in states.tokens.chunks_exact(self.hidden_dim) {
                    for (a, &x) in acc.iter_mut().zip(row) {
                        *a += x as f64;
                    }
                }
                let n = sent.num_tokens as f64;
                acc.iter_mut().for_each(|a| *a /= n);
                acc
            }
        };
        Ok(SentenceRepr::new(vector, source, layer))
    }

    /// Sentence vectors for the whole corpus at one layer.
    pub fn sentence_reprs(&self, layer: usize, source: ReprSource) -> Result<Vec<SentenceRepr>> {
        (0..self.sentences.len())
            .map(|s| self.sentence_repr(s, layer, source))
            .collect()
    }

    /// `[num_words x hidden_dim]`: row `w` is the mean of the token states of
    /// word group `w`.
    pub fn word_vectors(&self, sentence: usize, layer: usize) -> Result<DMatrix<f64>> {
        let sent = self.check_indices(sentence, layer)?;
        let d = self.hidden_dim;
        let mut out = DMatrix::zeros(sent.word_groups.len(), d);
        for (w, group) in sent.word_groups.iter().enumerate() {
            for &tok in group {
                let row = sent.token(layer, tok as usize, d);
                for (j, &x) in row.iter().enumerate() {
                    out[(w, j)] += x as f64;
                }
            }
            let n = group.len() as f64;
            for j in 0..d {
                out[(w, j)] /= n;
            }
        }
        Ok(out)
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize, what: &str) -> Result<u64> {
    let v = u32::try_from(v)
        .map_err(|_| Error::invariant(what.to_string(), format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(4)
}

fn put_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<u64> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(buf.len() as u64)
}

/// Serializes `set` as EMB1. The set is validated before any byte is written.
pub fn write_embedding_set<W: Write>(set: &EmbeddingSet, mut sink: W) -> Result<u64> {
    set.validate()?;
    let manifest = serde_json::to_vec(&Value::Object(set.manifest_json()))?;

    let mut n = 0u64;
    sink.write_all(MAGIC)?;
    n += 4;
    n += put_u32(&mut sink, VERSION as usize, "version")?;
    n += put_u32(&mut sink, set.num_layers, "num_layers")?;
    n += put_u32(&mut sink, set.hidden_dim, "hidden_dim")?;
    n += put_u32(&mut sink, set.sentences.len(), "num_sentences")?;
    n += put_u32(&mut sink, manifest.len(), "manifest length")?;
    sink.write_all(&manifest)?;
    n += manifest.len() as u64;

    for sent in &set.sentences {
        n += put_u32(&mut sink, sent.num_tokens, "num_tokens")?;
        n += put_u32(&mut sink, sent.word_groups.len(), "num_words")?;
        for group in &sent.word_groups {
            n += put_u32(&mut sink, group.len(), "group_len")?;
            for &t in group {
                sink.write_all(&t.to_le_bytes())?;
                n += 4;
            }
        }
        for layer in &sent.layers {
            n += put_f32s(&mut sink, &layer.cls)?;
            n += put_f32s(&mut sink, &layer.tokens)?;
        }
    }
    sink.flush()?;
    Ok(n)
}

/// Byte reader that knows its offset so that truncation errors can name it.
struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, len: usize, field: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner).take(len as u64).read_to_end(&mut buf)?;
        if got < len {
            return Err(Error::TruncatedPayload {
                offset: self.offset + got as u64,
                field: field.to_string(),
            });
        }
        self.offset += len as u64;
        Ok(buf)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        match self.inner.read_exact(&mut b) {
            Ok(()) => {
                self.offset += 4;
                Ok(u32::from_le_bytes(b))
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(Error::TruncatedPayload {
                offset: self.offset,
                field: field.to_string(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn f32s(&mut self, count: usize, field: &str) -> Result<Vec<f32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| Error::invariant(field.to_string(), "payload size overflows"))?;
        let raw = self.bytes(len, field)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Parses an EMB1 stream, validating the header and every invariant.
pub fn read_embedding_set<R: Read>(source: R) -> Result<EmbeddingSet> {
    let mut cur = Cursor {
        inner: source,
        offset: 0,
    };
    let magic = cur.bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let num_layers = cur.u32("num_layers")? as usize;
    let hidden_dim = cur.u32("hidden_dim")? as usize;
    let num_sentences = cur.u32("num_sentences")? as usize;
    if num_layers == 0 {
        return Err(Error::invariant("num_layers", "must be at least 1"));
    }
    if hidden_dim == 0 {
        return Err(Error::invariant("hidden_dim", "must be at least 1"));
    }

    let manifest_len = cur.u32("manifest length")? as usize;
    let manifest_offset = cur.offset;
    let raw = cur.bytes(manifest_len, "manifest")?;
    let mut manifest = match serde_json::from_slice::<Value>(&raw) {
        Ok(Value::Object(m)) => m,
        Ok(_) => {
            return Err(Error::invariant(
                format!("manifest at offset {manifest_offset}"),
                "not a JSON object",
            ))
        }
        Err(e) => {
            return Err(Error::invariant(
                format!("manifest at offset {manifest_offset}"),
                e.to_string(),
            ))
        }
    };
    let lang = match manifest.remove("lang") {
        Some(Value::String(s)) => s,
        _ => {
            return Err(Error::invariant(
                "manifest.lang",
                "missing or not a string",
            ))
        }
    };

    let mut sentences = Vec::with_capacity(num_sentences.min(1 << 16));
    for s in 0..num_sentences {
        let num_tokens = cur.u32(&format!("sentence {s} num_tokens"))? as usize;
        let num_words = cur.u32(&format!("sentence {s} num_words"))? as usize;
        let mut word_groups = Vec::with_capacity(num_words.min(num_tokens.max(1)));
        for w in 0..num_words {
            let len = cur.u32(&format!("sentence {s} word {w} group_len"))? as usize;
            if len > num_tokens {
                return Err(Error::invariant(
                    format!("sentence {s} word_groups[{w}] at offset {}", cur.offset),
                    format!("group length {len} exceeds num_tokens {num_tokens}"),
                ));
            }
            let mut group = Vec::with_capacity(len);
            for _ in 0..len {
                group.push(cur.u32(&format!("sentence {s} word {w} token index"))?);
            }
            word_groups.push(group);
        }
        validate_word_groups(&word_groups, num_tokens).map_err(|e| match e {
            Error::InvariantViolation { field, detail } => Error::invariant(
                format!("sentence {s} {field} (ending at offset {})", cur.offset),
                detail,
            ),
            other => other,
        })?;
        let token_count = num_tokens.checked_mul(hidden_dim).ok_or_else(|| {
            Error::invariant(format!("sentence {s} num_tokens"), "payload size overflows")
        })?;
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let cls = cur.f32s(hidden_dim, &format!("sentence {s} layer {l} [cls]"))?;
            let tokens = cur.f32s(token_count, &format!("sentence {s} layer {l} tokens"))?;
            layers.push(LayerStates { cls, tokens });
        }
        sentences.push(SentenceEmbeddings {
            num_tokens,
            word_groups,
            layers,
        });
    }

    Ok(EmbeddingSet {
        lang,
        num_layers,
        hidden_dim,
        sentences,
        manifest,
    })
}

pub fn read_embedding_file(path: &std::path::Path) -> Result<EmbeddingSet> {
    let f = std::fs::File::open(path)?;
    read_embedding_set(io::BufReader::new(f))
}

pub fn write_embedding_file(set: &EmbeddingSet, path: &std::path::Path) -> Result<u64> {
    set.validate()?;
    let f = std::fs::File::create(path)?;
    write_embedding_set(set, io::BufWriter::new(f))
}
