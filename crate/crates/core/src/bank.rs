//! Reusable banks of baseline draws.
//!
//! A bank is an n x dim matrix of standard normal draws generated from a
//! ChaCha12 stream. Banks can be symmetrized (row m + n/2 is the exact
//! floating-point negation of row m) and standardized (rows are rescaled so
//! the sample covariance with divisor n is the identity). Symmetrization is
//! applied before standardization; the standardizing transform is a
//! triangular solve, which commutes exactly with negation under IEEE
//! round-to-nearest, so negation pairs survive standardization bit for bit.

use crate::error::{Error, Result};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// File header magic for persisted banks.
pub const BANK_MAGIC: &[u8; 8] = b"PWEBANK1";
/// Persisted format version.
pub const BANK_VERSION: u32 = 1;

const FLAG_STANDARDIZED: u8 = 0b01;
const FLAG_SYMMETRIZED: u8 = 0b10;

/// An immutable matrix of baseline draws, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawBank {
    seed: u64,
    dim: usize,
    standardized: bool,
    symmetrized: bool,
    data: Vec<f64>,
}

impl DrawBank {
    /// Generate a bank of `n` rows of dimension `dim` from `seed`.
    ///
    /// With `symmetrize`, only n/2 rows are drawn and the second half is the
    /// negation of the first (n must be even). With `standardize`, rows are
    /// transformed by the inverse Cholesky factor of the sample covariance
    /// (divisor n); requires n >= 2 * dim.
    pub fn generate(
        seed: u64,
        n: usize,
        dim: usize,
        standardize: bool,
        symmetrize: bool,
    ) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::Bank(format!("bank shape {n} x {dim} is empty")));
        }
        if symmetrize && n % 2 != 0 {
            return Err(Error::Bank(format!(
                "symmetrized bank needs an even row count, got {n}"
            )));
        }
        if standardize && n < 2 * dim {
            return Err(Error::Bank(format!(
                "standardized bank needs at least {} rows for dimension {dim}, got {n}",
                2 * dim
            )));
        }

        let fresh = if symmetrize { n / 2 } else { n };
        let mut data = vec![0.0f64; n * dim];
        fill_standard_normal(seed, &mut data[..fresh * dim]);
        if symmetrize {
            for i in 0..fresh * dim {
                data[fresh * dim + i] = -data[i];
            }
        }

        if standardize {
            // Sample mean. Exactly zero under symmetrization, so the
            // centering step is skipped there to keep negation pairs exact.
            let mut mean = vec![0.0f64; dim];
            if !symmetrize {
                for row in data.chunks_exact(dim) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= n as f64;
                }
                for row in data.chunks_exact_mut(dim) {
                    for (v, m) in row.iter_mut().zip(&mean) {
                        *v -= m;
                    }
                }
            }

            // Sample covariance with divisor n, about zero (rows are
            // centered by now or exactly symmetric).
            let mut cov = vec![0.0f64; dim * dim];
            for row in data.chunks_exact(dim) {
                for j in 0..dim {
                    for k in j..dim {
                        cov[j * dim + k] += row[j] * row[k];
                    }
                }
            }
            for j in 0..dim {
                for k in j..dim {
                    cov[j * dim + k] /= n as f64;
                    cov[k * dim + j] = cov[j * dim + k];
                }
            }

            let chol = cholesky(&cov, dim).ok_or_else(|| {
                Error::Bank("sample covariance is not positive definite".into())
            })?;
            for row in data.chunks_exact_mut(dim) {
                forward_solve_in_place(&chol, dim, row);
            }
        }

        Ok(DrawBank {
            seed,
            dim,
            standardized: standardize,
            symmetrized: symmetrize,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standardized(&self) -> bool {
        self.standardized
    }

    pub fn symmetrized(&self) -> bool {
        self.symmetrized
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.dim..(m + 1) * self.dim]
    }

    /// Full row-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sample mean of the rows.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0f64; self.dim];
        for row in self.data.chunks_exact(self.dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.n() as f64;
        for m in &mut mean {
            *m /= n;
        }
        mean
    }

    /// Sample covariance about the sample mean, divisor n, row-major dim x dim.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mean = self.mean();
        let mut cov = vec![0.0f64; d * d];
        for row in self.data.chunks_exact(d) {
            for j in 0..d {
                for k in j..d {
                    cov[j * d + k] += (row[j] - mean[j]) * (row[k] - mean[k]);
                }
            }
        }
        let n = self.n() as f64;
        for j in 0..d {
            for k in j..d {
                cov[j * d + k] /= n;
                cov[k * d + j] = cov[j * d + k];
            }
        }
        cov
    }

    /// Persist to a binary file: magic, version, seed, n, dim, flags, then
    /// row-major little-endian f64 data.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(BANK_MAGIC)?;
        w.write_all(&BANK_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        let mut flags = 0u8;
        if self.standardized {
            flags |= FLAG_STANDARDIZED;
        }
        if self.symmetrized {
            flags |= FLAG_SYMMETRIZED;
        }
        w.write_all(&[flags])?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a bank persisted by `save`, verifying header and data integrity.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BANK_MAGIC {
            return Err(Error::Bank(format!(
                "{} is not a draw bank (bad magic)",
                path.display()
            )));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != BANK_VERSION {
            return Err(Error::Bank(format!(
                "unsupported bank version {version}, expected {BANK_VERSION}"
            )));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let flags = b1[0];

        if n == 0 || dim == 0 {
            return Err(Error::Bank(format!("bank file declares shape {n} x {dim}")));
        }
        let mut data = vec![0.0f64; n * dim];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
            if !v.is_finite() {
                return Err(Error::Bank(format!(
                    "bank file {} contains a non-finite value",
                    path.display()
                )));
            }
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Bank(format!(
                "bank file {} has trailing bytes",
                path.display()
            )));
        }

        Ok(DrawBank {
            seed,
            dim,
            standardized: flags & FLAG_STANDARDIZED != 0,
            symmetrized: flags & FLAG_SYMMETRIZED != 0,
            data,
        })
    }
}

/// Standard normal stream: ChaCha12 plus Box-Muller. The seed-to-value
/// mapping is part of the reproducibility contract, so the transform is
/// pinned here rather than delegated to a distribution crate.
pub(crate) struct NormalStream {
    rng: rand_chacha::ChaCha12Rng,
    pending: Option<f64>,
}

impl NormalStream {
    pub(crate) fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        NormalStream {
            rng: rand_chacha::ChaCha12Rng::seed_from_u64(seed),
            pending: None,
        }
    }

    pub(crate) fn next(&mut self) -> f64 {
        use rand::Rng;
        if let Some(v) = self.pending.take() {
            return v;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>(); // (0, 1]
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        self.pending = Some(r * a.sin());
        r * a.cos()
    }

    pub(crate) fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next();
        }
    }
}

fn fill_standard_normal(seed: u64, out: &mut [f64]) {
    NormalStream::new(seed).fill(out);
}

/// Lower Cholesky factor of a symmetric matrix, row-major d x d.
/// Returns None when the matrix is not positive definite. Hand-rolled so
/// the arithmetic sequence is fixed across platforms and dependency bumps;
/// d is at most a few dozen here.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solve L z = x in place for lower-triangular L.
fn forward_solve_in_place(l: &[f64], d: usize, x: &mut [f64]) {
    for i in 0..d {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * d + k] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
}
