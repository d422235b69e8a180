//! Point batch formats.
//!
//! Binary: the magic bytes `PWLB`, a little-endian `u32` version (1), `u32`
//! column count `d`, `u64` row count `n`, then `n·d` little-endian `f64`
//! values in row-major order.
//!
//! CSV: one point per line, no header, every row the same width.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimate::MomentAccumulator;

pub const MAGIC: &[u8; 4] = b"PWLB";
pub const BINARY_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Rows read per chunk by the streaming helpers.
pub const READ_CHUNK: usize = 1 << 14;

pub fn write_binary<W: Write>(w: &mut W, points: &DMatrix<f64>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(points.ncols() as u32).to_le_bytes())?;
    w.write_all(&(points.nrows() as u64).to_le_bytes())?;
    for row in points.row_iter() {
        for x in row.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Streaming reader over a binary batch.
pub struct BinaryReader<R> {
    inner: R,
    d: usize,
    remaining: u64,
}

fn parse_header(h: &[u8]) -> Result<(usize, u64)> {
    if h.len() < HEADER_LEN || &h[..4] != MAGIC {
        return Err(Error::Format("missing PWLB header".into()));
    }
    let version = u32::from_le_bytes(h[4..8].try_into().unwrap());
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported batch version {version}")));
    }
    let d = u32::from_le_bytes(h[8..12].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(h[12..20].try_into().unwrap());
    if d == 0 {
        return Err(Error::Format("batch dimension must be positive".into()));
    }
    Ok((d, n))
}

impl<R: Read> BinaryReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut h = [0u8; HEADER_LEN];
        inner
            .read_exact(&mut h)
            .map_err(|_| Error::Format("truncated batch header".into()))?;
        let (d, remaining) = parse_header(&h)?;
        Ok(Self { inner, d, remaining })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Up to `max_rows` further rows, or `None` at the end.
    pub fn next_chunk(&mut self, max_rows: usize) -> Result<Option<DMatrix<f64>>> {
        if self.remaining == 0 {
            return Ok(None);
        }
        let rows = (max_rows.max(1) as u64).min(self.remaining) as usize;
        let mut buf = vec![0u8; rows * self.d * 8];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("batch body shorter than its header declares".into()))?;
        self.remaining -= rows as u64;
        let vals = decode_f64s(&buf)?;
        Ok(Some(DMatrix::from_row_slice(rows, self.d, &vals)))
    }
}

fn decode_f64s(buf: &[u8]) -> Result<Vec<f64>> {
    let vals: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if vals.iter().any(|x| !x.is_finite()) {
        return Err(Error::Format("non-finite coordinate in batch".into()));
    }
    Ok(vals)
}

/// Decodes a complete in-memory binary batch; trailing bytes are an error.
pub fn decode_binary(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let (d, n) = parse_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let want = (n as u128) * (d as u128) * 8;
    if body.len() as u128 != want {
        return Err(Error::Format(format!(
            "batch body has {} bytes, header declares {want}",
            body.len()
        )));
    }
    let vals = decode_f64s(body)?;
    Ok(DMatrix::from_row_slice(n as usize, d, &vals))
}

pub fn write_csv<W: Write>(w: W, points: &DMatrix<f64>) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in points.row_iter() {
        wr.write_record(row.iter().map(|x| format!("{x:e}")))?;
    }
    wr.flush()?;
    Ok(())
}

/// Streaming reader over CSV points.
pub struct CsvReader<R> {
    inner: csv::Reader<R>,
    d: Option<usize>,
    record: csv::StringRecord,
}

impl<R: Read> CsvReader<R> {
    pub fn new(r: R) -> Self {
        Self {
            inner: csv::ReaderBuilder::new()
                .has_headers(false)
                .trim(csv::Trim::All)
                .flexible(true)
                .from_reader(r),
            d: None,
            record: csv::StringRecord::new(),
        }
    }

    /// Width of the rows seen so far.
    pub fn dim(&self) -> Option<usize> {
        self.d
    }

    pub fn next_chunk(&mut self, max_rows: usize) -> Result<Option<DMatrix<f64>>> {
        let mut vals = Vec::new();
        let mut rows = 0;
        while rows < max_rows.max(1) && self.inner.read_record(&mut self.record)? {
            let width = self.record.len();
            match self.d {
                None if width == 0 => return Err(Error::Format("empty CSV row".into())),
                None => self.d = Some(width),
                Some(d) if d != width => {
                    return Err(Error::Format(format!(
                        "CSV row {} has {width} fields, expected {d}",
                        self.record.position().map_or(0, |p| p.line())
                    )))
                }
                _ => {}
            }
            for field in self.record.iter() {
                let x: f64 = field
                    .parse()
                    .map_err(|_| Error::Format(format!("not a number: {field:?}")))?;
                if !x.is_finite() {
                    return Err(Error::Format(format!("non-finite value {field:?}")));
                }
                vals.push(x);
            }
            rows += 1;
        }
        if rows == 0 {
            return Ok(None);
        }
        Ok(Some(DMatrix::from_row_slice(rows, self.d.unwrap(), &vals)))
    }
}

pub fn decode_csv(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut r = CsvReader::new(bytes);
    let mut chunks = Vec::new();
    while let Some(c) = r.next_chunk(READ_CHUNK)? {
        chunks.push(c);
    }
    concat_rows(&chunks, r.dim().unwrap_or(0))
}

fn concat_rows(chunks: &[DMatrix<f64>], d: usize) -> Result<DMatrix<f64>> {
    let n: usize = chunks.iter().map(|c| c.nrows()).sum();
    let mut out = DMatrix::zeros(n, d);
    let mut at = 0;
    for c in chunks {
        out.rows_mut(at, c.nrows()).copy_from(c);
        at += c.nrows();
    }
    Ok(out)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes CSV for a `.csv` path and the binary format otherwise.
pub fn write_points(path: &Path, points: &DMatrix<f64>) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_csv(f, points)
    } else {
        let mut f = f;
        write_binary(&mut f, points)?;
        f.flush()?;
        Ok(())
    }
}

/// Visits the points of a file chunk by chunk.
pub fn for_each_chunk(path: &Path, mut f: impl FnMut(&DMatrix<f64>) -> Result<()>) -> Result<()> {
    let file = BufReader::new(File::open(path)?);
    if is_csv(path) {
        let mut r = CsvReader::new(file);
        while let Some(c) = r.next_chunk(READ_CHUNK)? {
            f(&c)?;
        }
    } else {
        let mut r = BinaryReader::new(file)?;
        while let Some(c) = r.next_chunk(READ_CHUNK)? {
            f(&c)?;
        }
    }
    Ok(())
}

pub fn read_points(path: &Path) -> Result<DMatrix<f64>> {
    let mut chunks = Vec::new();
    let mut d = 0;
    for_each_chunk(path, |c| {
        d = c.ncols();
        chunks.push(c.clone());
        Ok(())
    })?;
    concat_rows(&chunks, d)
}

/// Streams a point file into `acc`, creating it from the first chunk when absent.
pub fn accumulate_file(path: &Path, acc: &mut Option<MomentAccumulator>) -> Result<()> {
    for_each_chunk(path, |c| acc.get_or_insert_with(|| MomentAccumulator::new(c.ncols())).accumulate(c))
}
