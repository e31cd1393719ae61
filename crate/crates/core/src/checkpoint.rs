//! `MOODNET1` container: an ordered list of named `f64` tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "MOODNET1"
//! version   u32      currently 1
//! count     u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8 bytes)
//!   rank     u32, dims (u64 each)
//!   data     f64 x product(dims)
//! ```
//!
//! Strings (model kinds, activation names) travel as rank-1 tensors whose
//! first entry is the byte count followed by one entry per byte.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MOODNET1";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(io::Error),
    BadMagic,
    UnsupportedVersion(u32),
    Malformed(String),
    Missing(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "checkpoint io: {e}"),
            Self::BadMagic => write!(f, "not a MOODNET1 checkpoint"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported checkpoint version {v}"),
            Self::Malformed(m) => write!(f, "malformed checkpoint: {m}"),
            Self::Missing(name) => write!(f, "checkpoint has no tensor named {name:?}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensors(pub Vec<(String, Tensor)>);

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.push((name.into(), t));
    }

    pub fn push_str(&mut self, name: impl Into<String>, s: &str) {
        self.push(name, string_tensor(s));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn get_str(&self, name: &str) -> Result<String, CheckpointError> {
        tensor_string(self.get(name)?)
            .ok_or_else(|| CheckpointError::Malformed(format!("{name} is not a string tensor")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(n, _)| n.as_str())
    }
}

pub fn string_tensor(s: &str) -> Tensor {
    let mut data = vec![s.len() as f64];
    data.extend(s.bytes().map(f64::from));
    Tensor::from_vec(data)
}

pub fn tensor_string(t: &Tensor) -> Option<String> {
    let (&len, bytes) = t.data().split_first()?;
    if t.rank() != 1 || len as usize != bytes.len() {
        return None;
    }
    let bytes: Option<Vec<u8>> = bytes
        .iter()
        .map(|&b| (b.fract() == 0.0 && (0.0..=255.0).contains(&b)).then_some(b as u8))
        .collect();
    String::from_utf8(bytes?).ok()
}

pub fn write_to(mut w: impl Write, tensors: &NamedTensors) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.0.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors.0 {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_from(mut r: impl Read) -> Result<NamedTensors, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = read_u32(&mut r)?;
    let mut out = NamedTensors::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<_, _>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        out.push(name, t);
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &NamedTensors) -> Result<(), CheckpointError> {
    let f = File::create(path)?;
    write_to(BufWriter::new(f), tensors)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<NamedTensors, CheckpointError> {
    read_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let mut t = NamedTensors::new();
        t.push("w", Tensor::new(vec![1, 2], vec![1.5, -0.0]).unwrap());
        let mut buf = Vec::new();
        write_to(&mut buf, &t).unwrap();
        assert_eq!(&buf[..8], b"MOODNET1");
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1u32.to_le_bytes());
        assert_eq!(buf[20], b'w');
        assert_eq!(&buf[21..25], &2u32.to_le_bytes());
        assert_eq!(&buf[25..33], &1u64.to_le_bytes());
        assert_eq!(&buf[33..41], &2u64.to_le_bytes());
        assert_eq!(&buf[41..49], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 57);
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        assert!(matches!(read_from(&b"NOTMOOD!\x01\0\0\0"[..]), Err(CheckpointError::BadMagic)));
        let mut t = NamedTensors::new();
        t.push("x", Tensor::from_vec(vec![1.0, 2.0]));
        let mut buf = Vec::new();
        write_to(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_from(&buf[..]), Err(CheckpointError::Io(_))));
    }

    #[test]
    fn strings_round_trip() {
        let t = string_tensor("lyrics:ConvNet+LSTM");
        assert_eq!(tensor_string(&t).as_deref(), Some("lyrics:ConvNet+LSTM"));
        assert_eq!(tensor_string(&string_tensor("")).as_deref(), Some(""));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in prop::collection::vec(
                ("[a-z.]{1,12}", prop::collection::vec(any::<f64>(), 1..20)),
                1..5,
            )
        ) {
            let mut t = NamedTensors::new();
            for (name, data) in &entries {
                t.push(name.clone(), Tensor::from_vec(data.clone()));
            }
            let mut buf = Vec::new();
            write_to(&mut buf, &t).unwrap();
            let back = read_from(&buf[..]).unwrap();
            prop_assert_eq!(back.0.len(), t.0.len());
            for ((n1, a), (n2, b)) in t.0.iter().zip(&back.0) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(a.shape(), b.shape());
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
