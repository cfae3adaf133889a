//! `corpus.jsonl` + `corpus.emb` (+ `corpus.pix`) shards and `terms.jsonl`.
//!
//! A shard is a directory holding the three files for a contiguous run of records.
//! A shard set is a directory with a [`SHARD_MANIFEST`] listing its shard
//! subdirectories in record order.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Annotation, ContentRecord, Corpus, PixelGrid, TermRecord};
use crate::error::IoContext;
use crate::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"AEMB";
pub const PIX_MAGIC: &[u8; 4] = b"APIX";
const FORMAT_VERSION: u32 = 1;

pub const SHARD_MANIFEST: &str = "shards.json";
const JSONL: &str = "corpus.jsonl";
const EMB: &str = "corpus.emb";
const PIX: &str = "corpus.pix";

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    ann: Vec<(u32, f64)>,
    ints: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub dir: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub version: u32,
    pub dim: usize,
    pub count: usize,
    pub shards: Vec<ShardEntry>,
}

/// Writes one shard (`corpus.jsonl`, `corpus.emb`, and `corpus.pix` when the
/// records carry pixels) into `dir`.
pub fn write_shard(dir: &Path, records: &[ContentRecord]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let dim = records.first().map_or(0, |r| r.embedding.len());

    let path = dir.join(JSONL);
    let mut out = BufWriter::new(File::create(&path).at(&path)?);
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            ann: r
                .annotations
                .iter()
                .map(|a| (a.term_id, a.confidence))
                .collect(),
            ints: r.interests.iter().copied().collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").at(&path)?;
    }
    out.flush().at(&path)?;

    let path = dir.join(EMB);
    let mut out = BufWriter::new(File::create(&path).at(&path)?);
    out.write_all(EMB_MAGIC).at(&path)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes()).at(&path)?;
    out.write_all(&(dim as u32).to_le_bytes()).at(&path)?;
    out.write_all(&(records.len() as u64).to_le_bytes())
        .at(&path)?;
    for r in records {
        if r.embedding.len() != dim {
            return Err(Error::DimensionMismatch {
                context: format!("embedding of record {:?}", r.id),
                expected: dim,
                found: r.embedding.len(),
            });
        }
        for v in &r.embedding {
            out.write_all(&v.to_le_bytes()).at(&path)?;
        }
    }
    out.flush().at(&path)?;

    let pix_path = dir.join(PIX);
    if let Some(first) = records.first().and_then(|r| r.pixels.as_ref()) {
        let (h, w) = (first.height(), first.width());
        let mut out = BufWriter::new(File::create(&pix_path).at(&pix_path)?);
        out.write_all(PIX_MAGIC).at(&pix_path)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes()).at(&pix_path)?;
        out.write_all(&(h as u32).to_le_bytes()).at(&pix_path)?;
        out.write_all(&(w as u32).to_le_bytes()).at(&pix_path)?;
        out.write_all(&(records.len() as u64).to_le_bytes())
            .at(&pix_path)?;
        for r in records {
            let p = r
                .pixels
                .as_ref()
                .filter(|p| p.height() == h && p.width() == w);
            let p = p.ok_or_else(|| {
                Error::shape(format!("record {:?} lacks a {h}x{w} pixel grid", r.id))
            })?;
            for v in p.as_slice() {
                out.write_all(&v.to_le_bytes()).at(&pix_path)?;
            }
        }
        out.flush().at(&pix_path)?;
    } else if pix_path.exists() {
        fs::remove_file(&pix_path).at(&pix_path)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::malformed(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::malformed(
                self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::malformed(
                self.path,
                format!("unsupported version {version}"),
            ));
        }
        Ok(())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::malformed(self.path, "payload size overflows"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::malformed(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Reads and validates an `AEMB` file: returns `(dim, flat values)`.
fn read_emb(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).at(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    c.header(EMB_MAGIC)?;
    let dim = c.u32()? as usize;
    let count = c.u64()? as usize;
    let values = c.f32s(count.saturating_mul(dim))?;
    c.finish()?;
    Ok((dim, count, values))
}

fn read_pix(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).at(path)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    c.header(PIX_MAGIC)?;
    let h = c.u32()? as usize;
    let w = c.u32()? as usize;
    let count = c.u64()? as usize;
    let values = c.f32s(count.saturating_mul(h * w * 3))?;
    c.finish()?;
    Ok((h, w, count, values))
}

/// Reads one shard directory. Ids must be unique within the shard.
pub fn read_shard(dir: &Path) -> Result<Vec<ContentRecord>> {
    let path = dir.join(JSONL);
    let reader = BufReader::new(File::open(&path).at(&path)?);
    let mut lines = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line.at(&path)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(&path, format!("line {}: {e}", no + 1)))?;
        lines.push(parsed);
    }

    let emb_path = dir.join(EMB);
    let (dim, count, values) = read_emb(&emb_path)?;
    if count != lines.len() {
        return Err(Error::malformed(
            &emb_path,
            format!("{count} embeddings for {} records", lines.len()),
        ));
    }

    let pix_path = dir.join(PIX);
    let mut pixels = if pix_path.exists() {
        let (h, w, pcount, pvalues) = read_pix(&pix_path)?;
        if pcount != lines.len() {
            return Err(Error::malformed(
                &pix_path,
                format!("{pcount} pixel grids for {} records", lines.len()),
            ));
        }
        let stride = h * w * 3;
        Some(
            (0..pcount)
                .map(|i| PixelGrid::new(h, w, pvalues[i * stride..(i + 1) * stride].to_vec()))
                .collect::<Result<Vec<_>>>()?
                .into_iter(),
        )
    } else {
        None
    };

    let mut seen = HashSet::with_capacity(lines.len());
    let mut records = Vec::with_capacity(lines.len());
    for (i, line) in lines.into_iter().enumerate() {
        if !seen.insert(line.id.clone()) {
            return Err(Error::DuplicateId(line.id));
        }
        records.push(ContentRecord {
            id: line.id,
            annotations: line
                .ann
                .into_iter()
                .map(|(t, c)| Annotation::new(t, c))
                .collect(),
            interests: line.ints.into_iter().collect(),
            embedding: values[i * dim..(i + 1) * dim].to_vec(),
            pixels: pixels.as_mut().and_then(|p| p.next()),
        });
    }
    Ok(records)
}

/// Writes a whole corpus as a single shard.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    write_shard(dir, corpus.records())
}

/// Reads either a single shard or a shard set (detected by its manifest).
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    if dir.join(SHARD_MANIFEST).exists() {
        read_shard_set(dir)
    } else {
        Corpus::new(read_shard(dir)?)
    }
}

/// Splits `corpus` into shards of at most `shard_size` records under `root`.
/// An empty corpus produces a manifest with no shards.
pub fn write_shard_set(root: &Path, corpus: &Corpus, shard_size: usize) -> Result<ShardManifest> {
    if shard_size == 0 {
        return Err(Error::invalid("shard_size must be positive"));
    }
    fs::create_dir_all(root).at(root)?;
    let chunks: Vec<_> = corpus.records().chunks(shard_size).collect();
    let shards: Vec<ShardEntry> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| ShardEntry {
            dir: format!("shard-{i:05}"),
            count: c.len(),
        })
        .collect();
    chunks
        .par_iter()
        .zip(shards.par_iter())
        .map(|(records, entry)| write_shard(&root.join(&entry.dir), records))
        .collect::<Result<Vec<()>>>()?;
    let manifest = ShardManifest {
        version: FORMAT_VERSION,
        dim: corpus.embedding_dim(),
        count: corpus.len(),
        shards,
    };
    let path = root.join(SHARD_MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).at(&path)?;
    Ok(manifest)
}

/// Reads every shard listed in the manifest (in parallel) and concatenates them
/// in manifest order.
pub fn read_shard_set(root: &Path) -> Result<Corpus> {
    let path = root.join(SHARD_MANIFEST);
    let manifest: ShardManifest = serde_json::from_slice(&fs::read(&path).at(&path)?)
        .map_err(|e| Error::malformed(&path, e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::malformed(
            &path,
            format!("unsupported version {}", manifest.version),
        ));
    }
    let shards = manifest
        .shards
        .par_iter()
        .map(|entry| {
            let dir = root.join(&entry.dir);
            let records = read_shard(&dir)?;
            if records.len() != entry.count {
                return Err(Error::malformed(
                    &dir,
                    format!(
                        "manifest lists {} records, shard has {}",
                        entry.count,
                        records.len()
                    ),
                ));
            }
            if let Some(r) = records.iter().find(|r| r.embedding.len() != manifest.dim) {
                return Err(Error::DimensionMismatch {
                    context: format!("shard {}", entry.dir),
                    expected: manifest.dim,
                    found: r.embedding.len(),
                });
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(shards.into_iter().flatten().collect())
}

pub fn write_terms(path: &Path, terms: &[TermRecord]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).at(parent)?;
    }
    let mut out = BufWriter::new(File::create(path).at(path)?);
    for t in terms {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").at(path)?;
    }
    out.flush().at(path)
}

pub fn read_terms(path: &Path) -> Result<Vec<TermRecord>> {
    let reader = BufReader::new(File::open(path).at(path)?);
    let mut terms = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        terms.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::malformed(path, format!("line {}: {e}", no + 1)))?,
        );
    }
    Ok(terms)
}

/// SHA-256 over a canonical binary serialization of the records, hex encoded.
pub fn corpus_digest(records: &[ContentRecord]) -> String {
    let mut h = Sha256::new();
    h.update((records.len() as u64).to_le_bytes());
    for r in records {
        h.update((r.id.len() as u64).to_le_bytes());
        h.update(r.id.as_bytes());
        h.update((r.annotations.len() as u64).to_le_bytes());
        for a in &r.annotations {
            h.update(a.term_id.to_le_bytes());
            h.update(a.confidence.to_bits().to_le_bytes());
        }
        h.update((r.interests.len() as u64).to_le_bytes());
        for i in &r.interests {
            h.update(i.to_le_bytes());
        }
        h.update((r.embedding.len() as u64).to_le_bytes());
        for v in &r.embedding {
            h.update(v.to_bits().to_le_bytes());
        }
        match &r.pixels {
            None => h.update([0u8]),
            Some(p) => {
                h.update([1u8]);
                h.update((p.height() as u64).to_le_bytes());
                h.update((p.width() as u64).to_le_bytes());
                for v in p.as_slice() {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
    }
    hex::encode(h.finalize())
}
