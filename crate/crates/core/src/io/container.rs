//! Binary container shared by checkpoints and packed models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DSFT" | u16 version | u32 meta_len | meta (JSON, UTF-8) | u32 n_records
//! record: u16 name_len | name | u8 dtype | u8 rank | rank × u32 dim | payload
//! ```
//!
//! Payload sizes follow from the dims: 8 bytes per element for `f64`, 4 for
//! `i32`, 1 for `i8`, and `ceil(6n/8)` bytes for 6-bit packed codes.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DSFT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F64 = 1,
    I32 = 2,
    I8 = 3,
    Packed6 = 4,
}

impl DType {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Self::F64),
            2 => Ok(Self::I32),
            3 => Ok(Self::I8),
            4 => Ok(Self::Packed6),
            _ => Err(Error::Format(format!("unknown dtype tag {tag}"))),
        }
    }

    fn payload_len(self, numel: usize) -> usize {
        match self {
            Self::F64 => 8 * numel,
            Self::I32 => 4 * numel,
            Self::I8 => numel,
            Self::Packed6 => (6 * numel).div_ceil(8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    I32(Vec<i32>),
    I8(Vec<i8>),
    /// Bit stream of 6-bit codes, see `kernel::PackedShiftTensor`.
    Packed6(Vec<u8>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Self::F64(_) => DType::F64,
            Self::I32(_) => DType::I32,
            Self::I8(_) => DType::I8,
            Self::Packed6(_) => DType::Packed6,
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            Self::F64(v) => 8 * v.len(),
            Self::I32(v) => 4 * v.len(),
            Self::I8(v) => v.len(),
            Self::Packed6(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl Record {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Elements as `f64`; packed payloads are rejected.
    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match &self.payload {
            Payload::F64(v) => Ok(v.clone()),
            Payload::I32(v) => Ok(v.iter().map(|&x| f64::from(x)).collect()),
            Payload::I8(v) => Ok(v.iter().map(|&x| f64::from(x)).collect()),
            Payload::Packed6(_) => Err(Error::Format(format!("record {} is packed", self.name))),
        }
    }
}

/// JSON metadata plus an ordered list of named records.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub records: Vec<Record>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::UnexpectedEof(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, dims: &[usize], payload: Payload) {
        self.records.push(Record {
            name: name.into(),
            dims: dims.to_vec(),
            payload,
        });
    }

    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(64 + self.records.iter().map(|r| r.payload.byte_len() + 32).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(meta.len(), "metadata")?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&len_u32(self.records.len(), "record count")?.to_le_bytes());
        for r in &self.records {
            let name = r.name.as_bytes();
            let name_len =
                u16::try_from(name.len()).map_err(|_| Error::Format(format!("record name {} too long", r.name)))?;
            let rank =
                u8::try_from(r.dims.len()).map_err(|_| Error::Format(format!("record {} rank too large", r.name)))?;
            let dtype = r.payload.dtype();
            if dtype.payload_len(r.numel()) != r.payload.byte_len() {
                return Err(Error::Format(format!(
                    "record {} has {} payload bytes for dims {:?}",
                    r.name,
                    r.payload.byte_len(),
                    r.dims
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(dtype as u8);
            out.push(rank);
            for &d in &r.dims {
                out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
            }
            match &r.payload {
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
                Payload::Packed6(v) => out.extend_from_slice(v),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("bad magic, not a DSFT file".into()));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = serde_json::from_slice(r.take(meta_len, "metadata")?)?;
        let n = r.u32("record count")? as usize;
        let mut records = Vec::new();
        for i in 0..n {
            let what = format!("record {i}");
            let name_len = r.u16(&what)? as usize;
            let name = String::from_utf8(r.take(name_len, &what)?.to_vec())
                .map_err(|_| Error::Format(format!("{what}: name is not UTF-8")))?;
            let dtype = DType::from_tag(r.u8(&name)?)?;
            let rank = r.u8(&name)? as usize;
            let dims = (0..rank)
                .map(|_| r.u32(&name).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some())
                .map(|n| dtype.payload_len(n))
                .ok_or_else(|| Error::Format(format!("{name}: dims {dims:?} overflow")))?;
            let bytes = r.take(len, &name)?;
            let payload = match dtype {
                DType::F64 => Payload::F64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::I32 => Payload::I32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                DType::I8 => Payload::I8(bytes.iter().map(|&b| b as i8).collect()),
                DType::Packed6 => Payload::Packed6(bytes.to_vec()),
            };
            records.push(Record { name, dims, payload });
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { meta, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| io_err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(serde_json::json!({"kind": "test", "epoch": 3}));
        c.push("a", &[2, 2], Payload::F64(vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300]));
        c.push("b", &[3], Payload::I32(vec![i32::MIN, 0, i32::MAX]));
        c.push("c", &[], Payload::I8(vec![-7]));
        c.push("d", &[5], Payload::Packed6(vec![0xff, 0x00, 0x12, 0x34]));
        c
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        let Payload::F64(v) = &back.records[0].payload else {
            panic!()
        };
        assert_eq!(v[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"DSFT");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), VERSION);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Container::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Container::from_bytes(&bad),
            Err(Error::Version { found: 9, .. })
        ));
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(
                Container::from_bytes(&bytes[..cut]),
                Err(Error::UnexpectedEof(_))
            ));
        }
        let mut long = bytes;
        long.push(0);
        assert!(Container::from_bytes(&long).is_err());
    }

    #[test]
    fn payload_must_match_dims() {
        let mut c = Container::new(serde_json::json!({}));
        c.push("x", &[3], Payload::F64(vec![1.0]));
        assert!(c.to_bytes().is_err());
    }
}
