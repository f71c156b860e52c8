//! Binary embedding container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "AVDE" | version u16 | provider_id (u32 len + UTF-8) | dim u32 | count u32
//! count x { chunk_id (u32 len + UTF-8) | dim x f32 }
//! CRC32 (IEEE) of every preceding byte, u32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FeatureError, FeatureVector};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"AVDE";
pub const EMBEDDING_FILE_VERSION: u16 = 1;

/// Decoded file contents, records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub provider_id: String,
    pub dim: usize,
    pub records: Vec<FeatureVector>,
}

impl EmbeddingSet {
    pub fn into_map(self) -> Result<BTreeMap<String, FeatureVector>, FeatureError> {
        let mut map = BTreeMap::new();
        for r in self.records {
            let id = r.chunk_id.clone();
            if map.insert(id.clone(), r).is_some() {
                return Err(FeatureError::DuplicateChunkId(id));
            }
        }
        Ok(map)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_embedding_file(records: &[FeatureVector]) -> Result<Vec<u8>, FeatureError> {
    let (provider_id, dim) = match records.first() {
        Some(r) => (r.provider_id.as_str(), r.dim()),
        None => ("", 0),
    };
    if let Some(r) = records.iter().find(|r| r.provider_id != provider_id) {
        return Err(FeatureError::InconsistentRecords(format!(
            "provider_id ({provider_id} vs {})",
            r.provider_id
        )));
    }
    if let Some(r) = records.iter().find(|r| r.dim() != dim) {
        return Err(FeatureError::InconsistentRecords(format!("dim ({dim} vs {} for {})", r.dim(), r.chunk_id)));
    }
    let mut out = Vec::with_capacity(32 + records.len() * (dim * 4 + 24));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_FILE_VERSION.to_le_bytes());
    put_str(&mut out, provider_id);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        put_str(&mut out, &r.chunk_id);
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FeatureError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FeatureError::CorruptFile(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, FeatureError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FeatureError::CorruptFile("invalid UTF-8 string".into()))
    }
}

pub fn decode_embedding_file(bytes: &[u8]) -> Result<EmbeddingSet, FeatureError> {
    if bytes.len() < 4 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(FeatureError::CorruptFile("bad magic".into()));
    }
    if bytes.len() < 4 + 2 + 4 + 4 + 4 + 4 {
        return Err(FeatureError::CorruptFile("truncated header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(FeatureError::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != EMBEDDING_FILE_VERSION {
        return Err(FeatureError::CorruptFile(format!("unsupported version {version}")));
    }
    let provider_id = r.string()?;
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    if count > 0 && dim == 0 {
        return Err(FeatureError::CorruptFile("records with zero dimension".into()));
    }
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(count.min(body.len() / 4));
    for _ in 0..count {
        let chunk_id = r.string()?;
        let raw = r.take(dim.checked_mul(4).ok_or_else(|| FeatureError::CorruptFile("dimension overflow".into()))?)?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::CorruptFile(format!("non-finite value for {chunk_id}")));
        }
        if !seen.insert(chunk_id.clone()) {
            return Err(FeatureError::DuplicateChunkId(chunk_id));
        }
        records.push(FeatureVector {
            values,
            provider_id: provider_id.clone(),
            chunk_id,
        });
    }
    if r.pos != body.len() {
        return Err(FeatureError::CorruptFile(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(EmbeddingSet {
        provider_id,
        dim,
        records,
    })
}

/// Writes `records` to `path`, returning the number written.
pub fn write_embedding_file(records: &[FeatureVector], path: &Path) -> Result<usize, FeatureError> {
    let bytes = encode_embedding_file(records)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(records.len())
}

pub fn read_embedding_set(path: &Path) -> Result<EmbeddingSet, FeatureError> {
    decode_embedding_file(&fs::read(path)?)
}

pub fn read_embedding_file(path: &Path) -> Result<BTreeMap<String, FeatureVector>, FeatureError> {
    read_embedding_set(path)?.into_map()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(id: &str, values: Vec<f32>) -> FeatureVector {
        FeatureVector {
            values,
            provider_id: "mock:1".into(),
            chunk_id: id.into(),
        }
    }

    #[test]
    fn three_record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.avde");
        let recs = vec![
            fv("a#0", vec![0.1, -2.5, 3.0]),
            fv("a#1", vec![1e-7, 0.0, -0.0]),
            fv("b#0", vec![f32::MAX, f32::MIN_POSITIVE, 7.25]),
        ];
        assert_eq!(write_embedding_file(&recs, &path).unwrap(), 3);
        let map = read_embedding_file(&path).unwrap();
        assert_eq!(map.len(), 3);
        for r in &recs {
            assert_eq!(&map[&r.chunk_id], r);
        }
    }

    #[test]
    fn empty_file_is_valid() {
        let bytes = encode_embedding_file(&[]).unwrap();
        let set = decode_embedding_file(&bytes).unwrap();
        assert!(set.records.is_empty());
        assert!(set.into_map().unwrap().is_empty());
    }

    #[test]
    fn corruption_is_detected() {
        let good = encode_embedding_file(&[fv("a#0", vec![1.0, 2.0])]).unwrap();

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_embedding_file(&magic), Err(FeatureError::CorruptFile(m)) if m.contains("magic")));

        let mut flipped = good.clone();
        flipped[20] ^= 0x40;
        assert!(matches!(decode_embedding_file(&flipped), Err(FeatureError::CorruptFile(_))));

        assert!(matches!(decode_embedding_file(&good[..good.len() - 3]), Err(FeatureError::CorruptFile(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let bytes = encode_embedding_file(&[fv("a#0", vec![1.0]), fv("a#0", vec![2.0])]).unwrap();
        assert!(matches!(decode_embedding_file(&bytes), Err(FeatureError::DuplicateChunkId(id)) if id == "a#0"));
    }

    #[test]
    fn mixed_records_refused() {
        let mut other = fv("b#0", vec![1.0]);
        other.provider_id = "mfcc".into();
        assert!(matches!(
            encode_embedding_file(&[fv("a#0", vec![1.0]), other]),
            Err(FeatureError::InconsistentRecords(_))
        ));
        assert!(matches!(
            encode_embedding_file(&[fv("a#0", vec![1.0]), fv("a#1", vec![1.0, 2.0])]),
            Err(FeatureError::InconsistentRecords(_))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(
            dim in 1usize..16,
            rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 16), 0..20),
        ) {
            let recs: Vec<FeatureVector> = rows
                .iter()
                .enumerate()
                .map(|(i, v)| fv(&format!("clip #{i}"), v[..dim].to_vec()))
                .collect();
            let set = decode_embedding_file(&encode_embedding_file(&recs).unwrap()).unwrap();
            prop_assert_eq!(set.records, recs);
        }
    }
}
