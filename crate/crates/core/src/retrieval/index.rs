use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;

use super::{binarize, hamming};
use crate::error::IoContext;
use crate::{Error, Result};

const INDEX_MAGIC: &[u8; 4] = b"ABIX";
const INDEX_VERSION: u32 = 1;

/// Packed binary codes with a parallel id list and optional LSH bands.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryIndex {
    bits: usize,
    words: usize,
    codes: Vec<u64>,
    ids: Vec<String>,
    bands: Option<Bands>,
}

#[derive(Clone, Debug, PartialEq)]
struct Bands {
    width: usize,
    /// One table per band: band bits → item indices (ascending).
    tables: Vec<BTreeMap<Vec<u64>, Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub id: String,
    pub index: usize,
    pub distance: u32,
}

/// Bits `[start, start + width)` of a packed code, repacked from bit 0.
fn band_key(code: &[u64], start: usize, width: usize) -> Vec<u64> {
    let mut key = vec![0u64; width.div_ceil(64)];
    for b in 0..width {
        let j = start + b;
        if code[j / 64] >> (j % 64) & 1 == 1 {
            key[b / 64] |= 1 << (b % 64);
        }
    }
    key
}

impl BinaryIndex {
    /// `codes` holds `ids.len()` codes of `bits / 64` words each, back to back.
    pub fn new(bits: usize, ids: Vec<String>, codes: Vec<u64>) -> Result<Self> {
        if bits == 0 || bits % 64 != 0 {
            return Err(Error::invalid(format!(
                "code length {bits} is not a positive multiple of 64"
            )));
        }
        let words = bits / 64;
        if codes.len() != ids.len() * words {
            return Err(Error::shape(format!(
                "{} code words for {} ids of {bits} bits",
                codes.len(),
                ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        Ok(Self {
            bits,
            words,
            codes,
            ids,
            bands: None,
        })
    }

    /// Sign-binarizes each embedding; all must have the same multiple-of-64 length.
    pub fn from_embeddings(ids: Vec<String>, embeddings: &[Vec<f64>]) -> Result<Self> {
        if ids.len() != embeddings.len() {
            return Err(Error::shape(format!(
                "{} ids for {} embeddings",
                ids.len(),
                embeddings.len()
            )));
        }
        let bits = embeddings.first().map_or(64, Vec::len);
        let coded: Vec<Vec<u64>> = embeddings
            .par_iter()
            .map(|e| {
                if e.len() != bits {
                    return Err(Error::DimensionMismatch {
                        context: "index embeddings".into(),
                        expected: bits,
                        found: e.len(),
                    });
                }
                binarize(e)
            })
            .collect::<Result<_>>()?;
        Self::new(bits, ids, coded.concat())
    }

    /// Splits codes into `bands` equal-width bands and buckets items by band value.
    pub fn with_bands(mut self, bands: usize) -> Result<Self> {
        if bands == 0 || self.bits % bands != 0 {
            return Err(Error::invalid(format!(
                "{bands} bands do not divide {} bits",
                self.bits
            )));
        }
        let width = self.bits / bands;
        let tables = (0..bands)
            .into_par_iter()
            .map(|b| {
                let mut t: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
                for i in 0..self.len() {
                    t.entry(band_key(self.code(i), b * width, width))
                        .or_default()
                        .push(i);
                }
                t
            })
            .collect();
        self.bands = Some(Bands { width, tables });
        Ok(self)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn code(&self, i: usize) -> &[u64] {
        &self.codes[i * self.words..(i + 1) * self.words]
    }

    pub fn n_bands(&self) -> Option<usize> {
        self.bands.as_ref().map(|b| b.tables.len())
    }

    pub fn band_width(&self) -> Option<usize> {
        self.bands.as_ref().map(|b| b.width)
    }

    /// `ABIX`, version, code bits, count, the packed codes, then length-prefixed ids.
    /// Little-endian throughout. Bands are not stored.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(
            20 + self.codes.len() * 8 + self.ids.iter().map(|i| i.len() + 4).sum::<usize>(),
        );
        b.extend_from_slice(INDEX_MAGIC);
        b.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.bits as u32).to_le_bytes());
        b.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for w in &self.codes {
            b.extend_from_slice(&w.to_le_bytes());
        }
        for id in &self.ids {
            b.extend_from_slice(&(id.len() as u32).to_le_bytes());
            b.extend_from_slice(id.as_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::malformed(path, format!("binary index: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos.checked_add(n).ok_or_else(|| bad("length overflow"))?);
            let s = s.ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != INDEX_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let bits = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if bits == 0 || bits % 64 != 0 {
            return Err(bad(&format!(
                "code length {bits} is not a positive multiple of 64"
            )));
        }
        let n_words = count
            .checked_mul(bits / 64)
            .ok_or_else(|| bad("count overflow"))?;
        let raw = take(
            n_words
                .checked_mul(8)
                .ok_or_else(|| bad("count overflow"))?,
        )?;
        let codes = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(len)?).map_err(|_| bad("id is not UTF-8"))?;
            ids.push(id.to_owned());
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Self::new(bits, ids, codes).map_err(|e| match e {
            Error::DuplicateId(id) => bad(&format!("duplicate id {id:?}")),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }
}

/// Exact top-`k` by Hamming distance, ties broken by ascending id.
pub fn knn_search(index: &BinaryIndex, query: &[u64], k: usize) -> Result<Vec<Neighbor>> {
    if index.is_empty() {
        return Err(Error::EmptyInput("binary index".into()));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if query.len() != index.words {
        return Err(Error::DimensionMismatch {
            context: "query code words".into(),
            expected: index.words,
            found: query.len(),
        });
    }
    let mut scored: Vec<(u32, usize)> = (0..index.len())
        .map(|i| (hamming(query, index.code(i)), i))
        .collect();
    let cmp = |a: &(u32, usize), b: &(u32, usize)| {
        a.0.cmp(&b.0)
            .then_with(|| index.ids[a.1].cmp(&index.ids[b.1]))
    };
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored
        .into_iter()
        .map(|(distance, i)| Neighbor {
            id: index.ids[i].clone(),
            index: i,
            distance,
        })
        .collect())
}

/// Index pairs `(i, j)`, `i < j`, that share at least one band and lie within
/// Hamming distance `radius`.
///
/// Any pair closer than the number of bands differs in fewer bands than there are,
/// so it shares at least one band and is always found.
pub fn near_dup_pairs(index: &BinaryIndex, radius: u32) -> Result<BTreeSet<(usize, usize)>> {
    if radius as usize >= index.bits {
        return Err(Error::invalid(format!(
            "radius {radius} must be below the code length {}",
            index.bits
        )));
    }
    let bands = index
        .bands
        .as_ref()
        .ok_or_else(|| Error::invalid("near-duplicate detection needs LSH bands"))?;
    if bands.tables.len() as u32 <= radius {
        log::warn!(
            "{} bands with radius {radius}: pairs at distance >= {} may be missed",
            bands.tables.len(),
            bands.tables.len()
        );
    }
    let buckets: Vec<&Vec<usize>> = bands
        .tables
        .iter()
        .flat_map(|t| t.values())
        .filter(|b| b.len() > 1)
        .collect();
    let found: Vec<Vec<(usize, usize)>> = buckets
        .par_iter()
        .map(|members| {
            let mut out = Vec::new();
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[x + 1..] {
                    if hamming(index.code(i), index.code(j)) <= radius {
                        out.push((i.min(j), i.max(j)));
                    }
                }
            }
            out
        })
        .collect();
    Ok(found.into_iter().flatten().collect())
}

/// Verified near-duplicate pairs as ids, each pair ordered and the list sorted.
pub fn near_dup_detect(index: &BinaryIndex, radius: u32) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = near_dup_pairs(index, radius)?
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = (&index.ids[i], &index.ids[j]);
            if a <= b {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            }
        })
        .collect();
    pairs.sort();
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(codes: &[u64]) -> BinaryIndex {
        let ids = (0..codes.len()).map(|i| format!("id{i}")).collect();
        BinaryIndex::new(64, ids, codes.to_vec()).unwrap()
    }

    #[test]
    fn exact_match_first_and_ties_by_id() {
        let index = BinaryIndex::new(
            64,
            vec!["b".into(), "a".into(), "c".into()],
            vec![0b11, 0b11, 0b1],
        )
        .unwrap();
        let r = knn_search(&index, &[0b1], 3).unwrap();
        assert_eq!(r[0].id, "c");
        assert_eq!(r[0].distance, 0);
        assert_eq!((r[1].id.as_str(), r[2].id.as_str()), ("a", "b"));
    }

    #[test]
    fn duplicates_and_radius_checks() {
        let index = idx(&[5, 5, u64::MAX]).with_bands(8).unwrap();
        assert_eq!(near_dup_pairs(&index, 0).unwrap(), BTreeSet::from([(0, 1)]));
        assert!(near_dup_pairs(&index, 64).is_err());
        assert!(near_dup_pairs(&idx(&[1]), 1).is_err());
    }

    #[test]
    fn distance_seven_collides_in_eight_bands() {
        let index = idx(&[0, 0x0001_0101_0101_0101]).with_bands(8).unwrap();
        assert_eq!(near_dup_pairs(&index, 7).unwrap().len(), 1);
    }

    #[test]
    fn bytes_round_trip() {
        let index = BinaryIndex::new(128, vec!["x".into(), "yy".into()], vec![1, 2, 3, 4]).unwrap();
        let back = BinaryIndex::from_bytes(&index.to_bytes(), Path::new("i")).unwrap();
        assert_eq!(back, index);
        let mut b = index.to_bytes();
        b[0] = b'X';
        assert!(BinaryIndex::from_bytes(&b, Path::new("i")).is_err());
    }
}
