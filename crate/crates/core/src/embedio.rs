//! Readers and writers for word2vec text embeddings and bilingual dictionaries.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use log::warn;

use crate::error::{Error, Result};
use crate::vecmath::DenseMatrix;

/// A vocabulary paired with one vector per word.
///
/// Word order is frequency rank, most frequent first.
#[derive(Clone, Debug)]
pub struct Embedding {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: DenseMatrix,
}

impl Embedding {
    pub fn new(words: Vec<String>, vectors: DenseMatrix) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if words.len() != vectors.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} words for {} vectors",
                words.len(),
                vectors.rows()
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate word {w:?}")));
            }
        }
        Ok(Self {
            words,
            index,
            vectors,
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Same vocabulary with replaced vectors (e.g. after normalization or
    /// mapping).
    pub fn with_vectors(&self, vectors: DenseMatrix) -> Result<Self> {
        Self::new(self.words.clone(), vectors)
    }
}

/// Gold-standard translation pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordPairList {
    pairs: Vec<(String, String)>,
}

impl WordPairList {
    /// Builds a list, dropping repeated identical pairs.
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut seen = HashSet::new();
        let pairs = pairs
            .into_iter()
            .filter(|p| seen.insert(p.clone()))
            .collect();
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn read_line<R: BufRead>(reader: &mut R, buf: &mut Vec<u8>) -> Result<bool> {
    buf.clear();
    if reader.read_until(b'\n', buf)? == 0 {
        return Ok(false);
    }
    while matches!(buf.last(), Some(b'\n' | b'\r')) {
        buf.pop();
    }
    Ok(true)
}

/// Reads a word2vec text file: a `count dim` header followed by one
/// `word v1 ... vdim` line per word.
///
/// Returns at most `max_vocab` rows in file order. Later duplicates of a word
/// and all-zero vectors are skipped.
pub fn load_embeddings<R: BufRead>(mut reader: R, max_vocab: Option<usize>) -> Result<Embedding> {
    if max_vocab == Some(0) {
        return Err(Error::InvalidConfig("max_vocab must be positive".into()));
    }
    let mut buf = Vec::new();
    if !read_line(&mut reader, &mut buf)? {
        return Err(parse_err(1, "missing header"));
    }
    let header = std::str::from_utf8(&buf).map_err(|_| parse_err(1, "header is not UTF-8"))?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        [c, d] => (
            c.parse::<usize>()
                .map_err(|_| parse_err(1, format!("bad word count {c:?}")))?,
            d.parse::<usize>()
                .map_err(|_| parse_err(1, format!("bad dimension {d:?}")))?,
        ),
        _ => return Err(parse_err(1, "header must be `count dim`")),
    };
    if dim == 0 {
        return Err(parse_err(1, "dimension must be positive"));
    }

    let limit = max_vocab.map_or(count, |m| m.min(count));
    let mut words = Vec::with_capacity(limit);
    let mut seen = HashSet::with_capacity(limit);
    let mut data = Vec::with_capacity(limit * dim);
    let mut zero_rows = 0usize;

    for row in 0..count {
        if words.len() == limit {
            break;
        }
        let line_no = row + 2;
        if !read_line(&mut reader, &mut buf)? {
            return Err(parse_err(
                line_no,
                format!("expected {count} rows, file ended after {row}"),
            ));
        }
        let line = std::str::from_utf8(&buf).map_err(|_| parse_err(line_no, "row is not UTF-8"))?;
        let mut tokens = line.split(' ').filter(|t| !t.is_empty());
        let word = tokens
            .next()
            .ok_or_else(|| parse_err(line_no, "empty row"))?;
        let start = data.len();
        for tok in tokens {
            let v: f32 = tok
                .parse()
                .map_err(|_| parse_err(line_no, format!("non-numeric component {tok:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite component {tok:?}")));
            }
            data.push(v);
        }
        let found = data.len() - start;
        if found != dim {
            return Err(parse_err(
                line_no,
                format!("expected {dim} components, found {found}"),
            ));
        }
        if seen.contains(word) {
            data.truncate(start);
            continue;
        }
        if data[start..].iter().all(|v| *v == 0.0) {
            zero_rows += 1;
            data.truncate(start);
            continue;
        }
        seen.insert(word.to_owned());
        words.push(word.to_owned());
    }

    if zero_rows > 0 {
        warn!("dropped {zero_rows} all-zero embedding rows");
    }
    if words.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let vectors = DenseMatrix::from_shape_vec(words.len(), dim, data)?;
    Embedding::new(words, vectors)
}

/// Writes `emb` in the format read by [`load_embeddings`]. Values use the
/// shortest representation that parses back to the same `f32`.
pub fn save_embeddings<W: Write>(emb: &Embedding, mut writer: W) -> Result<()> {
    if emb.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    writeln!(writer, "{} {}", emb.len(), emb.dim())?;
    let mut line = String::new();
    for (i, word) in emb.words().iter().enumerate() {
        use std::fmt::Write as _;
        line.clear();
        line.push_str(word);
        for v in emb.vectors().row(i) {
            write!(line, " {v}").expect("formatting into a String");
        }
        line.push('\n');
        writer.write_all(line.as_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads `source<whitespace>target` lines. Blank lines are ignored; extra
/// fields after the target are ignored.
pub fn load_dictionary<R: BufRead>(mut reader: R) -> Result<WordPairList> {
    let mut buf = Vec::new();
    let mut pairs = Vec::new();
    let mut line_no = 0;
    while read_line(&mut reader, &mut buf)? {
        line_no += 1;
        let line =
            std::str::from_utf8(&buf).map_err(|_| parse_err(line_no, "line is not UTF-8"))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        match (fields.next(), fields.next()) {
            (Some(src), Some(tgt)) => pairs.push((src.to_owned(), tgt.to_owned())),
            _ => return Err(parse_err(line_no, "expected `source target`")),
        }
    }
    Ok(WordPairList::new(pairs))
}

/// Writes one tab-separated pair per line.
pub fn save_dictionary<W: Write>(pairs: &WordPairList, mut writer: W) -> Result<()> {
    for (s, t) in pairs.pairs() {
        writeln!(writer, "{s}\t{t}")?;
    }
    writer.flush()?;
    Ok(())
}
