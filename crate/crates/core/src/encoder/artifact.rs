//! Binary model artifact.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "HSXAI1"
//! u32 header length, header JSON {format, version, dim, vocab_size, num_labels, n_docs, min_count}
//! vocabulary: vocab_size x (u32 length, UTF-8 bytes)
//! idf: f64 oov weight, vocab_size x f64
//! token embeddings: vocab_size x dim f64, row-major
//! head: dim x num_labels f64, row-major
//! labels: num_labels x 6 ASCII digits
//! f64 temperature
//! u32 config length, config JSON
//! optional "RSRC", u32 length + manual JSONL, u32 length + knowledge-base JSONL
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, ModelArtifact};
use crate::corpus::{HsCode, HsLevel, KnowledgeBase, Manual};
use crate::error::{Error, Result};
use crate::text::{IdfTable, Vocabulary};

pub const ARTIFACT_MAGIC: &[u8; 6] = b"HSXAI1";
const RESOURCES_MAGIC: &[u8; 4] = b"RSRC";
const FORMAT: u32 = 1;

/// Manual and knowledge base bundled alongside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Resources {
    pub manual: Manual,
    pub kb: KnowledgeBase,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: u32,
    version: String,
    dim: usize,
    vocab_size: usize,
    num_labels: usize,
    n_docs: usize,
    min_count: usize,
}

fn put_u32<W: Write>(out: &mut W, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "section too large"))?;
    out.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(out: &mut W, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn put_blob<W: Write>(out: &mut W, bytes: &[u8]) -> io::Result<()> {
    put_u32(out, bytes.len())?;
    out.write_all(bytes)
}

pub(super) fn write_body<W: Write>(model: &ModelArtifact, out: &mut W) -> io::Result<()> {
    for token in model.vocab.tokens() {
        put_blob(out, token.as_bytes())?;
    }
    put_f64s(out, [model.idf.oov_weight()])?;
    put_f64s(out, model.idf.weights().iter().copied())?;
    put_f64s(out, model.token_embeddings.iter().copied())?;
    put_f64s(out, model.head.iter().copied())?;
    for label in &model.labels {
        out.write_all(label.as_str().as_bytes())?;
    }
    put_f64s(out, [model.temperature])?;
    let config = serde_json::to_vec(&model.config).map_err(io::Error::other)?;
    put_blob(out, &config)
}

pub fn write_artifact<W: Write>(model: &ModelArtifact, resources: Option<&Resources>, mut out: W) -> io::Result<()> {
    let header = Header {
        format: FORMAT,
        version: model.version.clone(),
        dim: model.dim(),
        vocab_size: model.vocab.len(),
        num_labels: model.num_labels(),
        n_docs: model.idf.n_docs(),
        min_count: model.vocab.min_count(),
    };
    out.write_all(ARTIFACT_MAGIC)?;
    put_blob(&mut out, &serde_json::to_vec(&header).map_err(io::Error::other)?)?;
    write_body(model, &mut out)?;
    if let Some(res) = resources {
        let mut manual = Vec::new();
        res.manual.write_jsonl(&mut manual)?;
        let mut kb = Vec::new();
        res.kb.write_jsonl(&mut kb)?;
        out.write_all(RESOURCES_MAGIC)?;
        put_blob(&mut out, &manual)?;
        put_blob(&mut out, &kb)?;
    }
    out.flush()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Artifact(format!("truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::Artifact("matrix too large".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }

    fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::Artifact(e.to_string()))
}

pub fn read_artifact<R: Read>(mut input: R) -> Result<(ModelArtifact, Option<Resources>)> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Artifact(e.to_string()))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(ARTIFACT_MAGIC.len())? != ARTIFACT_MAGIC {
        return Err(Error::Artifact("bad magic".into()));
    }
    let header: Header = serde_json::from_slice(cur.blob()?).map_err(|e| Error::Artifact(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Artifact(format!("unsupported format {}", header.format)));
    }

    let mut tokens = Vec::with_capacity(header.vocab_size.min(1 << 20));
    for _ in 0..header.vocab_size {
        tokens.push(utf8(cur.blob()?)?.to_owned());
    }
    let vocab = Vocabulary::from_tokens(tokens, header.min_count)?;
    let oov = cur.f64()?;
    let idf = IdfTable::from_parts(cur.f64s(header.vocab_size)?, header.n_docs, oov)?;
    let shape_err = |e: ndarray::ShapeError| Error::Artifact(e.to_string());
    let embeddings = Array2::from_shape_vec(
        (header.vocab_size, header.dim),
        cur.f64s(header.vocab_size.saturating_mul(header.dim))?,
    )
    .map_err(shape_err)?;
    let head = Array2::from_shape_vec(
        (header.dim, header.num_labels),
        cur.f64s(header.dim.saturating_mul(header.num_labels))?,
    )
    .map_err(shape_err)?;
    let mut labels = Vec::with_capacity(header.num_labels.min(1 << 20));
    for _ in 0..header.num_labels {
        let code = utf8(cur.take(6)?)?;
        labels.push(HsCode::parse_at(code, HsLevel::Subheading)?);
    }
    let temperature = cur.f64()?;
    let config: EncoderConfig =
        serde_json::from_slice(cur.blob()?).map_err(|e| Error::Artifact(format!("config: {e}")))?;

    let mut model = ModelArtifact::unversioned(vocab, idf, embeddings, head, labels, temperature, config)?;
    model.set_version(header.version);

    if cur.is_done() {
        return Ok((model, None));
    }
    if cur.take(RESOURCES_MAGIC.len())? != RESOURCES_MAGIC {
        return Err(Error::Artifact("unexpected trailing bytes".into()));
    }
    let manual = Manual::parse(cur.blob()?)?;
    let kb = KnowledgeBase::parse(cur.blob()?, &manual)?;
    if !cur.is_done() {
        return Err(Error::Artifact("unexpected trailing bytes".into()));
    }
    Ok((model, Some(Resources { manual, kb })))
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<(ModelArtifact, Option<Resources>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_artifact(BufReader::new(file))
}

pub fn save_artifact(path: impl AsRef<Path>, model: &ModelArtifact, resources: Option<&Resources>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_artifact(model, resources, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::tests::tiny_model;

    #[test]
    fn round_trip_is_byte_exact() {
        let head = Array2::from_shape_vec((2, 2), vec![0.1, -0.25, 1e-300, f64::MAX]).unwrap();
        let model = tiny_model(head, &["847110", "854370"]).with_temperature(1.7).unwrap();
        let mut bytes = Vec::new();
        write_artifact(&model, None, &mut bytes).unwrap();
        assert_eq!(&bytes[..6], b"HSXAI1");
        let (back, res) = read_artifact(bytes.as_slice()).unwrap();
        assert!(res.is_none());
        assert_eq!(back, model);
        let mut again = Vec::new();
        write_artifact(&back, None, &mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn resources_round_trip() {
        let model = tiny_model(Array2::zeros((2, 1)), &["847110"]);
        let manual = Manual::parse(
            r#"{"heading":"8471","title":"t","sentences":["a b","c d"],"subheadings":{"847110":"x"}}"#.as_bytes(),
        )
        .unwrap();
        let kb = KnowledgeBase::parse(
            r#"{"case_id":"k","description":"a","hs6":"847110","evidence":[{"sid":"8471:1"}]}"#.as_bytes(),
            &manual,
        )
        .unwrap();
        let res = Resources { manual, kb };
        let mut bytes = Vec::new();
        write_artifact(&model, Some(&res), &mut bytes).unwrap();
        let (back, back_res) = read_artifact(bytes.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_res.as_ref().unwrap().manual, res.manual);
        assert_eq!(back_res.unwrap().kb.entries(), res.kb.entries());
    }

    #[test]
    fn rejects_corruption() {
        let model = tiny_model(Array2::zeros((2, 1)), &["847110"]);
        let mut bytes = Vec::new();
        write_artifact(&model, None, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_artifact(bad.as_slice()), Err(Error::Artifact(_))));
        assert!(read_artifact(&bytes[..bytes.len() - 3]).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(read_artifact(trailing.as_slice()).is_err());
    }
}
