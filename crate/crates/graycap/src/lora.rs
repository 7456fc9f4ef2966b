//! Low-rank adapter arithmetic.
//!
//! An adapter attaches a rank-`r` update to a base weight matrix: the
//! effective weights are `W + alpha * A * B` with `A` of shape
//! `d_out x r` and `B` of shape `r x d_in`. Only `A` and `B` would train,
//! which is the entire point: `2*d*r` parameters instead of `d^2`. The
//! forward path applies the update as `W x + alpha * A (B x)` without ever
//! materializing `A * B`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Seed};

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite entry {bad}")));
        }
        Ok(WeightMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        WeightMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = WeightMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "vector of {} against {}x{}",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out.push(row.iter().zip(x).map(|(a, b)| a * b).sum());
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &WeightMatrix) -> Result<WeightMatrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = WeightMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.at(k, c);
                }
            }
        }
        Ok(out)
    }
}

/// A rank-`r` adapter pair for a `d_out x d_in` base matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: WeightMatrix, // d_out x r
    pub b: WeightMatrix, // r x d_in
    pub rank: usize,
    pub alpha: f64,
}

/// Standard-deviation of the Gaussian init for `A`.
pub const INIT_STD: f64 = 0.02;

/// Fresh adapter: `A ~ N(0, 0.02^2)`, `B = 0`, so the initial update is the
/// zero matrix and merging a fresh adapter is the identity on `W`.
pub fn init_adapter(d_out: usize, d_in: usize, rank: usize, seed: Seed) -> Result<LoraAdapter> {
    if rank == 0 || rank >= d_out.min(d_in) {
        return Err(Error::InvalidRank(format!(
            "rank must satisfy 1 <= r < min(d_out, d_in) = {}, got {rank}",
            d_out.min(d_in)
        )));
    }
    let mut rng = rng_for(seed, "lora-init");
    let normal = Normal::new(0.0, INIT_STD).expect("constant std");
    let a: Vec<f64> = (0..d_out * rank).map(|_| normal.sample(&mut rng)).collect();
    Ok(LoraAdapter {
        a: WeightMatrix::new(d_out, rank, a)?,
        b: WeightMatrix::zeros(rank, d_in),
        rank,
        alpha: 1.0,
    })
}

fn check_shapes(w: &WeightMatrix, adapter: &LoraAdapter) -> Result<()> {
    if adapter.a.rows() != w.rows()
        || adapter.b.cols() != w.cols()
        || adapter.a.cols() != adapter.rank
        || adapter.b.rows() != adapter.rank
    {
        return Err(Error::ShapeMismatch(format!(
            "adapter ({}x{}, {}x{}) does not fit base {}x{}",
            adapter.a.rows(),
            adapter.a.cols(),
            adapter.b.rows(),
            adapter.b.cols(),
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

/// Effective weights `W + alpha * A * B`. The base is untouched.
pub fn merge(w: &WeightMatrix, adapter: &LoraAdapter) -> Result<WeightMatrix> {
    check_shapes(w, adapter)?;
    let update = adapter.a.matmul(&adapter.b)?;
    let data: Vec<f64> = w
        .data()
        .iter()
        .zip(update.data())
        .map(|(base, up)| base + adapter.alpha * up)
        .collect();
    WeightMatrix::new(w.rows(), w.cols(), data)
}

/// Apply the adapted weights to a vector without materializing `A * B`:
/// `W x + alpha * A (B x)`.
pub fn forward(w: &WeightMatrix, adapter: &LoraAdapter, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_counted(w, adapter, x)?.0)
}

/// [`forward`] plus a multiply count, to show the low-rank path costs
/// `d_out*d_in + r*(d_in + d_out)` multiplies rather than anything cubic.
pub fn forward_counted(
    w: &WeightMatrix,
    adapter: &LoraAdapter,
    x: &[f64],
) -> Result<(Vec<f64>, u64)> {
    check_shapes(w, adapter)?;
    let base = w.matvec(x)?;
    let bx = adapter.b.matvec(x)?;
    let abx = adapter.a.matvec(&bx)?;
    let out = base
        .iter()
        .zip(&abx)
        .map(|(b, u)| b + adapter.alpha * u)
        .collect();
    let flops = (w.rows() * w.cols() + adapter.rank * w.cols() + w.rows() * adapter.rank) as u64;
    Ok((out, flops))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBudget {
    pub adapter_params: u64,
    pub full_params: u64,
    pub ratio: f64,
}

/// Trainable-parameter accounting for a square `d x d` layer at rank `r`:
/// `2*d*r` adapter parameters against `d^2` full parameters.
pub fn param_budget(d: usize, r: usize) -> ParamBudget {
    let adapter_params = 2 * (d as u64) * (r as u64);
    let full_params = (d as u64) * (d as u64);
    ParamBudget {
        adapter_params,
        full_params,
        ratio: adapter_params as f64 / full_params as f64,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AdapterHeader {
    format: String,
    d_out: usize,
    d_in: usize,
    r: usize,
    alpha: f64,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixHeader {
    format: String,
    rows: usize,
    cols: usize,
}

const ADAPTER_FORMAT: &str = "graycap-adapter-v1";
const MATRIX_FORMAT: &str = "graycap-matrix-v1";

fn write_payload(file: &mut fs::File, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut payload = Vec::new();
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&payload)?;
    Ok(())
}

fn split_header(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::InvalidConfig("file has no header line".into()))?;
    Ok((&bytes[..newline], &bytes[newline + 1..]))
}

fn payload_f64(bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(Error::ShapeMismatch(format!(
            "payload holds {} bytes, header implies {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Save an adapter: JSON header line, then `A` then `B` as little-endian f64.
pub fn save_adapter(path: impl AsRef<Path>, adapter: &LoraAdapter, seed: Seed) -> Result<()> {
    let header = AdapterHeader {
        format: ADAPTER_FORMAT.into(),
        d_out: adapter.a.rows(),
        d_in: adapter.b.cols(),
        r: adapter.rank,
        alpha: adapter.alpha,
        seed: seed.0,
    };
    let mut file = fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    write_payload(
        &mut file,
        adapter.a.data().iter().chain(adapter.b.data()).copied(),
    )
}

pub fn load_adapter(path: impl AsRef<Path>) -> Result<LoraAdapter> {
    let mut bytes = Vec::new();
    fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let (header, payload) = split_header(&bytes)?;
    let header: AdapterHeader = serde_json::from_slice(header)?;
    if header.format != ADAPTER_FORMAT {
        return Err(Error::InvalidConfig(format!("unsupported adapter format {:?}", header.format)));
    }
    let a_len = header.d_out * header.r;
    let b_len = header.r * header.d_in;
    let values = payload_f64(payload, a_len + b_len)?;
    Ok(LoraAdapter {
        a: WeightMatrix::new(header.d_out, header.r, values[..a_len].to_vec())?,
        b: WeightMatrix::new(header.r, header.d_in, values[a_len..].to_vec())?,
        rank: header.r,
        alpha: header.alpha,
    })
}

/// Save a plain weight matrix in the same header+payload layout.
pub fn save_matrix(path: impl AsRef<Path>, matrix: &WeightMatrix) -> Result<()> {
    let header = MatrixHeader {
        format: MATRIX_FORMAT.into(),
        rows: matrix.rows(),
        cols: matrix.cols(),
    };
    let mut file = fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    write_payload(&mut file, matrix.data().iter().copied())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<WeightMatrix> {
    let mut bytes = Vec::new();
    fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let (header, payload) = split_header(&bytes)?;
    let header: MatrixHeader = serde_json::from_slice(header)?;
    if header.format != MATRIX_FORMAT {
        return Err(Error::InvalidConfig(format!("unsupported matrix format {:?}", header.format)));
    }
    let values = payload_f64(payload, header.rows * header.cols)?;
    WeightMatrix::new(header.rows, header.cols, values)
}
