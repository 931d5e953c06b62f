//! File formats.
//!
//! Binary files are little-endian: the magic `DILI`, a `u32` version, two
//! `u64` dimensions (rows, columns), the matrix in column-major `f64`, and
//! for LIS files the eigenvalues (one per column). Sample files store one
//! column per stored iteration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lowrank::LowRankEig;
use crate::model::ObservationSet;
use crate::samplers::IterationRecord;

pub const MAGIC: &[u8; 4] = b"DILI";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 8 + 8;

fn write_header<W: Write>(w: &mut W, rows: u64, cols: u64) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_header<R: Read>(r: &mut R) -> Result<(usize, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    Ok((rows, cols))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(|_| Error::Format(format!("expected {count} values")))?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(())
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, m.nrows() as u64, m.ncols() as u64)?;
    write_f64s(&mut w, m.as_slice())?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let (rows, cols) = read_header(&mut r)?;
    let data = read_f64s(&mut r, rows * cols)?;
    expect_eof(&mut r)?;
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_matrix(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Error::Format(format!("expected a single column, found {}", m.ncols())));
    }
    Ok(m.column(0).into_owned())
}

pub fn write_lis(path: &Path, lis: &LowRankEig) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, lis.basis.nrows() as u64, lis.basis.ncols() as u64)?;
    write_f64s(&mut w, lis.basis.as_slice())?;
    write_f64s(&mut w, lis.values.as_slice())?;
    w.flush()?;
    Ok(())
}

pub fn read_lis(path: &Path) -> Result<LowRankEig> {
    let mut r = BufReader::new(File::open(path)?);
    let (rows, cols) = read_header(&mut r)?;
    let basis = DMatrix::from_vec(rows, cols, read_f64s(&mut r, rows * cols)?);
    let values = DVector::from_vec(read_f64s(&mut r, cols)?);
    expect_eof(&mut r)?;
    Ok(LowRankEig { basis, values })
}

/// Incremental writer for sample files; the column count is patched on finish.
pub struct SampleWriter {
    w: BufWriter<File>,
    dim: usize,
    count: u64,
}

impl SampleWriter {
    pub fn create(path: &Path, dim: usize) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        write_header(&mut w, dim as u64, 0)?;
        Ok(Self { w, dim, count: 0 })
    }

    pub fn push(&mut self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: v.len() });
        }
        write_f64s(&mut self.w, v.as_slice())?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        self.w.flush()?;
        let mut f = self.w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        f.seek(SeekFrom::Start(HEADER_LEN - 8))?;
        f.write_all(&self.count.to_le_bytes())?;
        f.flush()?;
        Ok(self.count)
    }
}

/// Observations as CSV: `index, coordinates..., value, sigma`.
pub fn write_observations(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dims = obs.locations.first().map_or(0, |l| l.len());
    let mut header = vec!["index".to_string()];
    header.extend((0..dims).map(|d| format!("coord{d}")));
    header.push("value".into());
    header.push("sigma".into());
    w.write_record(&header)?;
    for i in 0..obs.len() {
        let mut row = vec![i.to_string()];
        if let Some(loc) = obs.locations.get(i) {
            row.extend(loc.iter().map(|x| x.to_string()));
        }
        row.push(obs.y()[i].to_string());
        row.push(obs.noise_var()[i].sqrt().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path) -> Result<ObservationSet> {
    let mut r = csv::Reader::from_path(path)?;
    let mut y = Vec::new();
    let mut var = Vec::new();
    let mut locations = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let n = rec.len();
        if n < 3 {
            return Err(Error::Format("observation rows need index, value and sigma".into()));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number '{s}': {e}")));
        locations.push((1..n - 2).map(|k| parse(&rec[k])).collect::<Result<Vec<_>>>()?);
        y.push(parse(&rec[n - 2])?);
        let s = parse(&rec[n - 1])?;
        var.push(s * s);
    }
    ObservationSet::new(DVector::from_vec(y), DVector::from_vec(var))?.with_locations(locations)
}

/// Column names of the trace CSV.
pub fn trace_header(gibbs: bool) -> Vec<&'static str> {
    let mut h = vec!["iteration", "misfit", "omf", "alpha", "accepted", "lis_dim", "d_f"];
    if gibbs {
        h.extend(["alpha_cs", "accepted_cs"]);
    }
    h
}

pub struct TraceWriter {
    w: csv::Writer<File>,
    gibbs: bool,
}

impl TraceWriter {
    pub fn create(path: &Path, gibbs: bool) -> Result<Self> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(trace_header(gibbs))?;
        Ok(Self { w, gibbs })
    }

    pub fn push(&mut self, r: &IterationRecord) -> Result<()> {
        let mut row = vec![
            r.iteration.to_string(),
            r.misfit.to_string(),
            r.omf.to_string(),
            r.alpha.to_string(),
            u8::from(r.accepted).to_string(),
            r.lis_dim.to_string(),
            r.d_f.to_string(),
        ];
        if self.gibbs {
            row.push(r.alpha_cs.unwrap_or(f64::NAN).to_string());
            row.push(u8::from(r.accepted_cs.unwrap_or(false)).to_string());
        }
        self.w.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let gibbs = headers.len() == 9;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |k: usize| rec[k].parse::<f64>().map_err(|e| Error::Format(format!("bad number '{}': {e}", &rec[k])));
        let u = |k: usize| rec[k].parse::<usize>().map_err(|e| Error::Format(format!("bad integer '{}': {e}", &rec[k])));
        out.push(IterationRecord {
            iteration: u(0)?,
            misfit: f(1)?,
            omf: f(2)?,
            alpha: f(3)?,
            accepted: u(4)? == 1,
            lis_dim: u(5)?,
            d_f: f(6)?,
            alpha_cs: if gibbs { Some(f(7)?) } else { None },
            accepted_cs: if gibbs { Some(u(8)? == 1) } else { None },
        });
    }
    Ok(out)
}
