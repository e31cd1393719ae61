//! Feature cache: a magic header followed by records until end of file.
//!
//! ```text
//! magic      8 bytes "MNFEAT01"
//! per record:
//!   id_len   u32, track id (UTF-8)
//!   kind_len u32, kind tag (UTF-8), e.g. "mel" or "classical"
//!   rank     u32, dims (u64 each)
//!   data     f64 x product(dims)
//! ```
//! Integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::DspError;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MNFEAT01";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub track_id: String,
    pub kind: String,
    pub values: Tensor,
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_feature_cache(path: impl AsRef<Path>, records: &[FeatureRecord]) -> Result<(), DspError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for r in records {
        put_str(&mut w, &r.track_id)?;
        put_str(&mut w, &r.kind)?;
        w.write_all(&(r.values.rank() as u32).to_le_bytes())?;
        for &d in r.values.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in r.values.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32, DspError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64, DspError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String, DspError> {
    let n = get_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(truncated)?;
    String::from_utf8(b).map_err(|_| DspError::MalformedCache("string is not UTF-8".into()))
}

fn truncated(e: std::io::Error) -> DspError {
    if e.kind() == ErrorKind::UnexpectedEof {
        DspError::MalformedCache("truncated record".into())
    } else {
        DspError::Io(e)
    }
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<Vec<FeatureRecord>, DspError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(DspError::MalformedCache("bad magic".into()));
    }
    let mut out = Vec::new();
    loop {
        let mut first = [0u8; 4];
        match r.read(&mut first[..1])? {
            0 => break,
            _ => r.read_exact(&mut first[1..]).map_err(truncated)?,
        }
        let id_len = u32::from_le_bytes(first) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(truncated)?;
        let track_id = String::from_utf8(id).map_err(|_| DspError::MalformedCache("track id is not UTF-8".into()))?;
        let kind = get_str(&mut r)?;
        let rank = get_u32(&mut r)? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| get_u64(&mut r).map(|d| d as usize)).collect::<Result<_, _>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| get_u64(&mut r).map(f64::from_bits)).collect::<Result<Vec<_>, _>>()?;
        let values = Tensor::new(shape, data).map_err(|e| DspError::MalformedCache(e.to_string()))?;
        out.push(FeatureRecord { track_id, kind, values });
    }
    Ok(out)
}
