//! `TFC1` tensor files.
//!
//! Layout of one record: magic `b"TFC1"`, version byte `0x01`, four `u32`
//! little-endian dims `(N, C, H, W)`, dtype byte (`0x01` f32, `0x02` f64),
//! then the payload little-endian in row-major order. Packed files are plain
//! concatenations of records.

use std::fs;
use std::path::{Path, PathBuf};

use super::{numel, Precision, Real, Shape, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TFC1";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 16 + 1;

pub fn encode<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.reserve(HEADER_LEN + t.numel() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(T::PRECISION.dtype_byte());
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn write<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_packed(path, std::slice::from_ref(t))
}

pub fn write_packed<T: Real>(path: &Path, tensors: &[Tensor<T>]) -> Result<()> {
    let mut buf = Vec::new();
    for t in tensors {
        encode(t, &mut buf);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Sequential record reader over an in-memory file.
pub struct Reader {
    path: PathBuf,
    bytes: Vec<u8>,
    pos: usize,
}

impl Reader {
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Reader {
            path: path.to_path_buf(),
            bytes,
            pos: 0,
        })
    }

    pub fn from_bytes(path: impl Into<PathBuf>, bytes: Vec<u8>) -> Self {
        Reader {
            path: path.into(),
            bytes,
            pos: 0,
        }
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.fail(
                self.pos,
                format!(
                    "truncated {what}: need {len} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    /// Reads the next header, returning the shape and stored precision.
    fn header(&mut self) -> Result<(Shape, Precision)> {
        let start = self.pos;
        if self.take(4, "magic")? != MAGIC {
            return Err(self.fail(start, "bad magic, expected TFC1"));
        }
        let version = self.take(1, "version")?[0];
        if version != VERSION {
            return Err(self.fail(start + 4, format!("unsupported version {version:#04x}")));
        }
        let mut shape = [0usize; 4];
        for d in shape.iter_mut() {
            let b = self.take(4, "dims")?;
            *d = u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(self.fail(start + 5, format!("zero dimension in {shape:?}")));
        }
        let dtype_pos = self.pos;
        let precision = match self.take(1, "dtype")?[0] {
            0x01 => Precision::Single,
            0x02 => Precision::Double,
            other => return Err(self.fail(dtype_pos, format!("unknown dtype {other:#04x}"))),
        };
        Ok((shape, precision))
    }

    /// Reads one record, converting to `T` if the file stores the other precision.
    pub fn next<T: Real>(&mut self) -> Result<Tensor<T>> {
        let (shape, precision) = self.header()?;
        let n = numel(shape);
        let width = match precision {
            Precision::Single => 4,
            Precision::Double => 8,
        };
        let payload = self.take(n * width, "payload")?;
        let data: Vec<T> = match precision {
            Precision::Single => payload
                .chunks_exact(4)
                .map(|b| T::from_f64_lossy(f32::read_le(b) as f64))
                .collect(),
            Precision::Double => payload
                .chunks_exact(8)
                .map(|b| T::from_f64_lossy(f64::read_le(b)))
                .collect(),
        };
        Tensor::from_vec(shape, data)
    }
}

pub fn read<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let mut r = Reader::open(path)?;
    let t = r.next()?;
    if !r.at_end() {
        return Err(r.fail(r.pos, "trailing bytes after tensor record"));
    }
    Ok(t)
}

pub fn read_packed<T: Real>(path: &Path) -> Result<Vec<Tensor<T>>> {
    let mut r = Reader::open(path)?;
    let mut out = Vec::new();
    while !r.at_end() {
        out.push(r.next()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::from_vec([1, 1, 1, 2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        encode(&t, &mut buf);
        let mut expected = b"TFC1\x01".to_vec();
        for d in [1u32, 1, 1, 2] {
            expected.extend_from_slice(&d.to_le_bytes());
        }
        expected.push(0x01);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn double_roundtrip_is_bitwise() {
        let t = Tensor::<f64>::from_fn([2, 3, 2, 2], |[a, b, c, d]| {
            (a as f64 * 0.1 + b as f64).sin() + c as f64 / 3.0 - d as f64 * 1e-9
        });
        let mut buf = Vec::new();
        encode(&t, &mut buf);
        encode(&t, &mut buf);
        let mut r = Reader::from_bytes("mem", buf);
        assert_eq!(r.next::<f64>().unwrap(), t);
        assert_eq!(r.next::<f64>().unwrap(), t);
        assert!(r.at_end());
    }

    #[test]
    fn rejects_bad_magic_and_truncation_with_offset() {
        let t = Tensor::<f32>::ones([1, 2, 2, 2]);
        let mut buf = Vec::new();
        encode(&t, &mut buf);

        let mut bad = buf.clone();
        bad[0] = b'X';
        let err = Reader::from_bytes("a.tfc", bad).next::<f32>().unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");

        let mut old = buf.clone();
        old[4] = 0x02;
        let err = Reader::from_bytes("a.tfc", old).next::<f32>().unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        buf.truncate(buf.len() - 3);
        let err = Reader::from_bytes("a.tfc", buf).next::<f32>().unwrap_err();
        match err {
            Error::Format {
                offset, message, ..
            } => {
                assert_eq!(offset, HEADER_LEN as u64);
                assert!(message.contains("truncated payload"));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
