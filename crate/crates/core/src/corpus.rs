//! Documents, tokenization, and the on-disk formats for corpora and
//! embedding matrices.
//!
//! A corpus file holds one JSON object per line with an `id`, the raw
//! `text`, and an optional reference `label`. Embedding files are a small
//! little-endian binary format: the magic `EMB1`, `u32` row count, `u32`
//! column count, then the values as row-major `f32`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Splits `text` into lowercase maximal runs of alphanumeric characters.
///
/// Everything that is not alphanumeric acts as a separator, so `"1-0"`
/// becomes `["1", "0"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// One text unit of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    id: String,
    text: String,
    tokens: Vec<String>,
    /// Reference label carried by the corpus file, if any.
    pub label: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self {
            id: id.into(),
            text,
            tokens,
            label,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// An ordered collection of documents with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if index.insert(doc.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Self { docs, index })
    }

    /// Parses line-delimited JSON records. Blank lines are skipped; line
    /// numbers in errors are 1-based physical lines.
    pub fn parse(input: &str) -> Result<Self> {
        let mut docs = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: DocumentRecord =
                serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            docs.push(Document::new(record.id, record.text, record.label));
        }
        Self::new(docs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.docs {
            let record = DocumentRecord {
                id: doc.id.clone(),
                text: doc.text.clone(),
                label: doc.label.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, i: usize) -> Option<&Document> {
        self.docs.get(i)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// True when every document carries a reference label.
    pub fn fully_labeled(&self) -> bool {
        !self.docs.is_empty() && self.docs.iter().all(|d| d.label.is_some())
    }
}

/// Dense row-major `n_rows × n_cols` matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f32>,
}

const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

impl EmbeddingMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::Shape(format!(
                "{} values for a {n_rows}×{n_cols} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite value at row {}, column {}",
                pos / n_cols.max(1),
                pos % n_cols.max(1)
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            values,
        })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != n_cols) {
            return Err(Error::Shape(format!(
                "row {bad} has {} columns, expected {n_cols}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), n_cols, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        let width = self.n_cols.max(1);
        self.values
            .chunks_exact(width)
            .take(if self.n_cols == 0 { 0 } else { self.n_rows })
    }

    /// Returns the sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n_rows: indices.len(),
            n_cols: self.n_cols,
            values,
        }
    }

    /// Row values widened to `f64`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.values.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.n_rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_cols as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (n_rows, n_cols, body) = read_header(bytes, EMBEDDING_MAGIC)?;
        Self::new(n_rows, n_cols, read_f32s(body, n_rows * n_cols)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Reads `magic`, then two little-endian `u32` dimensions.
pub(crate) fn read_header<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 12 {
        return Err(Error::Format(format!(
            "file too short for header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let a = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let b = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    Ok((a, b, &bytes[12..]))
}

pub(crate) fn read_f32s(body: &[u8], count: usize) -> Result<Vec<f32>> {
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} payload bytes, found {}",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("World Cup final!"), ["world", "cup", "final"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("W L 1-0"), ["w", "l", "1", "0"]);
        assert_eq!(tokenize("  --  "), Vec::<String>::new());
        assert_eq!(tokenize("Zürich’s ÉTÉ"), ["zürich", "s", "été"]);
    }

    #[test]
    fn tokenize_idempotent_on_joined_output() {
        let once = tokenize("Apr 9 Ajax H W 1-0, (reuters) verified!");
        assert_eq!(tokenize(&once.join(" ")), once);
    }

    #[test]
    fn parse_in_file_order() {
        let c = Corpus::parse(
            "{\"id\":\"a\",\"text\":\"Hello there\"}\n{\"id\":\"b\",\"text\":\"x\",\"label\":\"L\"}\n",
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.docs()[0].id(), "a");
        assert_eq!(c.docs()[0].tokens(), ["hello", "there"]);
        assert_eq!(c.docs()[1].label.as_deref(), Some("L"));
        assert_eq!(c.position("b"), Some(1));
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = Corpus::parse("{\"id\":\"a\",\"text\":\"1\"}\n{\"id\":\"a\",\"text\":\"2\"}\n")
            .unwrap_err();
        match err {
            Error::DuplicateId(id) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_text_names_line() {
        let err = Corpus::parse("{\"id\":\"a\",\"text\":\"1\"}\n{\"id\":\"b\"}\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("text"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn embeddings_round_trip() {
        let m = EmbeddingMatrix::zeros(2, 3);
        assert_eq!(EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
        let empty = EmbeddingMatrix::zeros(0, 4);
        let back = EmbeddingMatrix::from_bytes(&empty.to_bytes()).unwrap();
        assert_eq!(back.n_rows(), 0);
        assert_eq!(back.rows().count(), 0);
    }

    #[test]
    fn embeddings_bad_magic_and_truncation() {
        let m = EmbeddingMatrix::zeros(2, 3);
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
        let bytes = m.to_bytes();
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes[..7]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(EmbeddingMatrix::new(1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(EmbeddingMatrix::new(1, 2, vec![f32::INFINITY, 0.0]).is_err());
    }
}
