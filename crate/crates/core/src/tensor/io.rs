//! PVT1 binary tensor files and CSV matrices.
//!
//! PVT1 layout: magic `PVT1`, dtype byte (0 = f32, 1 = f64), rank byte,
//! two zero bytes, `rank` little-endian u64 extents, then the row-major
//! little-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

const MAGIC: &[u8; 4] = b"PVT1";
const MAX_RANK: usize = 8;

pub fn write_pvt1<T: Scalar>(mut w: impl Write, t: &Tensor<T>) -> Result<()> {
    if t.rank() > MAX_RANK {
        return Err(Error::Format(format!(
            "rank {} exceeds {MAX_RANK}",
            t.rank()
        )));
    }
    let mut buf = Vec::with_capacity(8 + 8 * t.rank() + t.len() * T::DTYPE.size());
    buf.extend_from_slice(MAGIC);
    buf.push(T::DTYPE as u8);
    buf.push(t.rank() as u8);
    buf.extend_from_slice(&[0, 0]);
    for &d in t.dims() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a PVT1 stream, converting the stored element type to `T`.
pub fn read_pvt1<T: Scalar>(mut r: impl Read) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad PVT1 magic".into()));
    }
    let dtype = DType::from_code(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[4])))?;
    let rank = bytes[5] as usize;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated PVT1 header".into()));
    }
    let dims: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("extent product overflows".into()))?;
    let payload = &bytes[header..];
    if n.checked_mul(dtype.size()) != Some(payload.len()) {
        return Err(Error::Format(format!(
            "payload is {} bytes, dims {:?} need {}",
            payload.len(),
            dims,
            n.saturating_mul(dtype.size())
        )));
    }
    let data: Vec<T> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| T::lit(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| T::lit(f64::read_le(c)))
            .collect(),
    };
    let dims = if dims.is_empty() { vec![1] } else { dims };
    Tensor::new(dims, data)
}

pub fn write_pvt1_file<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let f = fs::File::create(path)?;
    write_pvt1(std::io::BufWriter::new(f), t)
}

pub fn read_pvt1_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    read_pvt1(std::io::BufReader::new(fs::File::open(path)?))
}

/// One sample per row, no header.
pub fn read_csv_matrix<T: Scalar>(r: impl Read) -> Result<Tensor<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Format(format!(
                    "row {rows} has {} fields, expected {w}",
                    rec.len()
                )))
            }
            _ => {}
        }
        for f in rec.iter() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Format(format!("row {rows}: cannot parse {f:?}")))?;
            data.push(T::lit(v));
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Format("empty CSV".into()))?;
    Tensor::new(vec![rows, width], data)
}

/// Loads a matrix from `.csv` (by extension) or PVT1 (anything else).
pub fn read_matrix_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    if is_csv {
        read_csv_matrix(fs::File::open(path)?)
    } else {
        read_pvt1_file(path)
    }
}
