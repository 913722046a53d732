//! `.fvecs` / `.ivecs` codecs (the TEXMEX corpus format used by SIFT1M).
//!
//! A file is a sequence of records `[d: i32 LE][d elements, 4 bytes LE each]`
//! with `f32` elements for fvecs and `i32` for ivecs. Every record carries
//! the same `d`; the row count follows from the file length.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use approxtopk_core::DenseMatrix;

use crate::error::{Error, Result};

/// Element type of a vecs file.
pub trait VecsElem: Copy {
    fn from_le(bytes: [u8; 4]) -> Self;
    fn to_le(self) -> [u8; 4];
}

impl VecsElem for f32 {
    fn from_le(bytes: [u8; 4]) -> Self {
        f32::from_le_bytes(bytes)
    }

    fn to_le(self) -> [u8; 4] {
        self.to_le_bytes()
    }
}

impl VecsElem for i32 {
    fn from_le(bytes: [u8; 4]) -> Self {
        i32::from_le_bytes(bytes)
    }

    fn to_le(self) -> [u8; 4] {
        self.to_le_bytes()
    }
}

/// Decoded contents of a vecs file, rows in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vecs<T> {
    pub dim: usize,
    pub rows: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Vecs<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

impl Vecs<f32> {
    pub fn into_matrix(self) -> Result<DenseMatrix> {
        if self.rows == 0 {
            return Err(Error::Invalid("vecs file holds no rows".into()));
        }
        Ok(DenseMatrix::new(self.rows, self.dim, self.data)?)
    }
}

/// Decodes vecs bytes. An empty input has no record to take `d` from, so it
/// needs `dim_hint`; when both are present they must agree.
pub fn parse_vecs<T: VecsElem>(bytes: &[u8], dim_hint: Option<usize>) -> Result<Vecs<T>> {
    if bytes.is_empty() {
        let dim = dim_hint.ok_or_else(|| Error::format(0, "cannot infer dimension from an empty file"))?;
        return Ok(Vecs {
            dim,
            rows: 0,
            data: Vec::new(),
        });
    }
    let mut data = Vec::new();
    let mut dim: Option<usize> = dim_hint;
    let mut offset = 0usize;
    let mut rows = 0;
    while offset < bytes.len() {
        let header: [u8; 4] = bytes
            .get(offset..offset + 4)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::format(offset as u64, "truncated record header"))?;
        let d = i32::from_le_bytes(header);
        if d <= 0 {
            return Err(Error::format(offset as u64, format!("non-positive dimension {d}")));
        }
        let d = d as usize;
        match dim {
            Some(expected) if expected != d => {
                return Err(Error::format(
                    offset as u64,
                    format!("dimension {d} differs from {expected}"),
                ))
            }
            _ => dim = Some(d),
        }
        let body = offset + 4;
        let end = body + 4 * d;
        let payload = bytes
            .get(body..end)
            .ok_or_else(|| Error::format(offset as u64, format!("truncated record: {d} elements announced")))?;
        data.extend(
            payload
                .chunks_exact(4)
                .map(|c| T::from_le(c.try_into().unwrap())),
        );
        rows += 1;
        offset = end;
    }
    Ok(Vecs {
        dim: dim.unwrap_or(0),
        rows,
        data,
    })
}

pub fn encode_vecs<T: VecsElem>(dim: usize, data: &[T]) -> Result<Vec<u8>> {
    if dim == 0 || dim > i32::MAX as usize || !data.len().is_multiple_of(dim) {
        return Err(Error::Invalid(format!(
            "{} elements do not form rows of dimension {dim}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(data.len() / dim * (4 + 4 * dim));
    for row in data.chunks_exact(dim) {
        out.extend_from_slice(&(dim as i32).to_le_bytes());
        for &v in row {
            out.extend_from_slice(&v.to_le());
        }
    }
    Ok(out)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Reads an fvecs file into a matrix.
pub fn read_fvecs(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    parse_vecs::<f32>(&read_bytes(path)?, None)?.into_matrix()
}

/// Reads an fvecs file, accepting an empty file when `dim` is given.
pub fn read_fvecs_with_dim(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Vecs<f32>> {
    let path = path.as_ref();
    parse_vecs(&read_bytes(path)?, dim)
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vecs<i32>> {
    let path = path.as_ref();
    parse_vecs(&read_bytes(path)?, None)
}

pub fn write_fvecs(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write_bytes(path.as_ref(), &encode_vecs(m.cols(), m.as_slice())?)
}

pub fn write_ivecs(path: impl AsRef<Path>, dim: usize, data: &[i32]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_vecs(dim, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(d: i32, values: &[f32]) -> Vec<u8> {
        let mut b = d.to_le_bytes().to_vec();
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn single_record() {
        let v: Vecs<f32> = parse_vecs(&record(2, &[1.0, 2.0]), None).unwrap();
        assert_eq!((v.rows, v.dim), (1, 2));
        let m = v.into_matrix().unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn empty_input_needs_a_dimension() {
        let err = parse_vecs::<f32>(&[], None).unwrap_err();
        assert!(err.to_string().contains("cannot infer dimension"));
        assert_eq!(err.exit_code(), 2);
        let v = parse_vecs::<f32>(&[], Some(128)).unwrap();
        assert_eq!((v.rows, v.dim), (0, 128));
        assert!(v.into_matrix().is_err());
    }

    #[test]
    fn format_errors_carry_offsets() {
        let mut bytes = record(2, &[1.0, 2.0]);
        bytes.extend(record(3, &[1.0, 2.0, 3.0]));
        match parse_vecs::<f32>(&bytes, None) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
        let mut bytes = record(2, &[1.0, 2.0]);
        bytes.extend(record(2, &[1.0]));
        assert!(matches!(parse_vecs::<f32>(&bytes, None), Err(Error::Format { offset: 12, .. })));
        assert!(matches!(parse_vecs::<f32>(&record(0, &[]), None), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_vecs::<f32>(&record(-4, &[]), None), Err(Error::Format { .. })));
        assert!(matches!(parse_vecs::<f32>(&[1, 0], None), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(parse_vecs::<f32>(&record(2, &[1.0, 2.0]), Some(3)), Err(Error::Format { .. })));
    }

    #[test]
    fn ivecs_layout_is_bit_exact() {
        let bytes = encode_vecs(2, &[7i32, -1, 0, 65536]).unwrap();
        assert_eq!(
            bytes,
            [2, 0, 0, 0, 7, 0, 0, 0, 255, 255, 255, 255, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0]
        );
        let v: Vecs<i32> = parse_vecs(&bytes, None).unwrap();
        assert_eq!(v.row(1), &[0, 65536]);
        assert!(encode_vecs(3, &[1i32, 2]).is_err());
    }
}
