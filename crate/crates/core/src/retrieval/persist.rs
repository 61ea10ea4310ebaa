//! On-disk index directory.
//!
//! ```text
//! <dir>/manifest.json   analyzer + fingerprint, N, avgdl, BM25 params, dense info
//! <dir>/sparse.bin      doc table and postings (little endian)
//! <dir>/dense.bin       optional vector matrix
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::analyzer::AnalyzerConfig;
use super::dense::{Similarity, VectorIndex};
use super::sparse::{Bm25Params, InvertedIndex, Posting};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const SPARSE_MAGIC: &[u8; 8] = b"CHIQSPR\0";
const DENSE_MAGIC: &[u8; 8] = b"CHIQDNS\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseManifest {
    pub dim: usize,
    pub similarity: Similarity,
    pub embedder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub analyzer: AnalyzerConfig,
    pub analyzer_fingerprint: String,
    pub num_docs: usize,
    pub avgdl: f64,
    pub num_terms: usize,
    pub bm25: Bm25Params,
    pub passage_token_limit: usize,
    pub dense: Option<DenseManifest>,
}

/// A loaded index directory.
pub struct StoredIndex {
    pub manifest: IndexManifest,
    pub sparse: InvertedIndex,
    pub dense: Option<VectorIndex>,
}

type Io<T> = std::io::Result<T>;
type DenseEntries = Vec<(String, Vec<f32>)>;

fn write_str(w: &mut impl Write, s: &str) -> Io<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Io<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn check_magic(r: &mut impl Read, magic: &[u8; 8], path: &Path) -> Result<()> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got).map_err(|e| Error::io(path, e))?;
    if &got != magic {
        return Err(Error::parse(path, 0, "bad magic"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    if version != FORMAT_VERSION {
        return Err(Error::IndexVersion(version));
    }
    Ok(())
}

fn write_sparse(path: &Path, index: &InvertedIndex) -> Io<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SPARSE_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(index.doc_ids.len() as u64)?;
    for i in 0..index.doc_ids.len() {
        write_str(&mut w, &index.doc_ids[i])?;
        w.write_u32::<LittleEndian>(index.doc_lengths[i])?;
        write_str(&mut w, &index.texts[i])?;
    }
    w.write_u64::<LittleEndian>(index.postings.len() as u64)?;
    for (term, list) in &index.postings {
        write_str(&mut w, term)?;
        w.write_u32::<LittleEndian>(list.len() as u32)?;
        for p in list {
            w.write_u32::<LittleEndian>(p.doc)?;
            w.write_u32::<LittleEndian>(p.tf)?;
        }
    }
    w.flush()
}

fn read_sparse(path: &Path, manifest: &IndexManifest) -> Result<InvertedIndex> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    check_magic(&mut r, SPARSE_MAGIC, path)?;
    let mut body = || -> Io<InvertedIndex> {
        let n = r.read_u64::<LittleEndian>()? as usize;
        let mut doc_ids = Vec::with_capacity(n);
        let mut doc_lengths = Vec::with_capacity(n);
        let mut texts = Vec::with_capacity(n);
        for _ in 0..n {
            doc_ids.push(read_str(&mut r)?);
            doc_lengths.push(r.read_u32::<LittleEndian>()?);
            texts.push(read_str(&mut r)?);
        }
        let n_terms = r.read_u64::<LittleEndian>()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = read_str(&mut r)?;
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let doc = r.read_u32::<LittleEndian>()?;
                let tf = r.read_u32::<LittleEndian>()?;
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        Ok(InvertedIndex::from_parts(
            postings,
            doc_lengths,
            doc_ids,
            texts,
            manifest.analyzer.clone(),
            manifest.passage_token_limit,
        ))
    };
    let index = body().map_err(|e| Error::io(path, e))?;
    if index.num_docs() != manifest.num_docs {
        return Err(Error::parse(path, 0, "document count disagrees with manifest"));
    }
    Ok(index)
}

fn write_dense(path: &Path, index: &VectorIndex) -> Io<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DENSE_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(index.len() as u64)?;
    w.write_u32::<LittleEndian>(index.dim() as u32)?;
    w.write_u8(match index.similarity() {
        Similarity::Dot => 0,
        Similarity::Cosine => 1,
    })?;
    for (i, id) in index.doc_ids().iter().enumerate() {
        write_str(&mut w, id)?;
        for &x in index.vector(i) {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()
}

fn read_dense(path: &Path) -> Result<VectorIndex> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    check_magic(&mut r, DENSE_MAGIC, path)?;
    let mut body = || -> Io<(DenseEntries, Similarity)> {
        let n = r.read_u64::<LittleEndian>()? as usize;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let sim = if r.read_u8()? == 0 { Similarity::Dot } else { Similarity::Cosine };
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let id = read_str(&mut r)?;
            let mut v = vec![0f32; dim];
            r.read_f32_into::<LittleEndian>(&mut v)?;
            entries.push((id, v));
        }
        Ok((entries, sim))
    };
    let (entries, sim) = body().map_err(|e| Error::io(path, e))?;
    VectorIndex::build(entries, sim)
}

impl StoredIndex {
    pub fn new(sparse: InvertedIndex, dense: Option<(VectorIndex, String)>, bm25: Bm25Params) -> Self {
        let manifest = IndexManifest {
            format_version: FORMAT_VERSION,
            analyzer: sparse.analyzer().clone(),
            analyzer_fingerprint: sparse.analyzer().fingerprint(),
            num_docs: sparse.num_docs(),
            avgdl: sparse.avgdl(),
            num_terms: sparse.postings.len(),
            bm25,
            passage_token_limit: sparse.passage_token_limit(),
            dense: dense.as_ref().map(|(v, embedder)| DenseManifest {
                dim: v.dim(),
                similarity: v.similarity(),
                embedder: embedder.clone(),
            }),
        };
        Self { manifest, sparse, dense: dense.map(|(v, _)| v) }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("sparse.bin");
        write_sparse(&p, &self.sparse).map_err(|e| Error::io(&p, e))?;
        if let Some(dense) = &self.dense {
            let p = dir.join("dense.bin");
            write_dense(&p, dense).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("manifest.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let manifest: IndexManifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(&p, e.line(), e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::IndexVersion(manifest.format_version));
        }
        let actual = manifest.analyzer.fingerprint();
        if actual != manifest.analyzer_fingerprint {
            return Err(Error::AnalyzerMismatch { index: manifest.analyzer_fingerprint.clone(), query: actual });
        }
        let sparse = read_sparse(&dir.join("sparse.bin"), &manifest)?;
        let dense = match &manifest.dense {
            Some(_) => Some(read_dense(&dir.join("dense.bin"))?),
            None => None,
        };
        Ok(Self { manifest, sparse, dense })
    }
}
