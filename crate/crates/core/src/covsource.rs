//! Covariance builders and the row-on-demand "data center".
//!
//! Estimators in this crate never need the whole covariance matrix: they ask
//! a [`CovarianceSource`] for the diagonals once and then for individual rows.
//! Two sources are provided, a dense in-memory matrix and a file-backed store
//! that reads exactly one row per request.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PcsError, Result};

/// An `n x p` sample matrix, stored row-major (one row per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(PcsError::InvalidInput(format!(
                "n >= 2 required, got {n} sample(s)"
            )));
        }
        if p < 2 {
            return Err(PcsError::InvalidInput(format!(
                "p >= 2 required, got {p} feature(s)"
            )));
        }
        if values.len() != n * p {
            return Err(PcsError::InvalidInput(format!(
                "expected {} values for a {n}x{p} matrix, got {}",
                n * p,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(PcsError::NonFinite {
                row: k / p,
                col: k % p,
            });
        }
        Ok(Self { n, p, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some((k, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(PcsError::InvalidInput(format!(
                "sample {k} has {} fields, expected {p}",
                r.len()
            )));
        }
        Self::new(n, p, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, sample: usize, feature: usize) -> f64 {
        self.values[sample * self.p + feature]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.p, &self.values)
    }

    /// Sub-matrix made of the listed samples, in the listed order.
    pub fn select_samples(&self, samples: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(samples.len() * self.p);
        for &s in samples {
            if s >= self.n {
                return Err(PcsError::IndexOutOfRange {
                    index: s,
                    dim: self.n,
                });
            }
            values.extend_from_slice(self.sample(s));
        }
        Self::new(samples.len(), self.p, values)
    }
}

/// Samples with two-class labels over {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    data: DataMatrix,
    labels: Vec<i8>,
}

impl LabeledData {
    pub fn new(data: DataMatrix, labels: Vec<i8>) -> Result<Self> {
        if labels.len() != data.n() {
            return Err(PcsError::InvalidInput(format!(
                "{} labels for {} samples",
                labels.len(),
                data.n()
            )));
        }
        if let Some(k) = labels.iter().position(|&y| y != 1 && y != -1) {
            return Err(PcsError::InvalidInput(format!(
                "label {} at sample {k} is not -1 or +1",
                labels[k]
            )));
        }
        let out = Self { data, labels };
        if out.n_plus() < 2 || out.n_minus() < 2 {
            return Err(PcsError::InvalidInput(format!(
                "each class needs at least 2 samples (n1 = {}, n2 = {})",
                out.n_plus(),
                out.n_minus()
            )));
        }
        Ok(out)
    }

    pub fn data(&self) -> &DataMatrix {
        &self.data
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    /// Size of class +1 (n1).
    pub fn n_plus(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Size of class -1 (n2).
    pub fn n_minus(&self) -> usize {
        self.labels.len() - self.n_plus()
    }

    pub fn select_samples(&self, samples: &[usize]) -> Result<Self> {
        let data = self.data.select_samples(samples)?;
        let labels = samples.iter().map(|&s| self.labels[s]).collect();
        Self::new(data, labels)
    }
}

/// Provider of covariance diagonals and rows on demand.
///
/// Implementations must be safe to read from several row tasks at once.
/// Every call to [`CovarianceSource::row`] is counted.
pub trait CovarianceSource: Sync {
    fn dim(&self) -> usize;

    fn diagonals(&self) -> &[f64];

    /// Owned copy of row `i`.
    fn row(&self, i: usize) -> Result<Vec<f64>>;

    fn telemetry(&self) -> &FetchTelemetry;
}

/// Per-row fetch counters.
#[derive(Debug)]
pub struct FetchTelemetry {
    per_row: Vec<AtomicU64>,
}

impl FetchTelemetry {
    pub fn new(p: usize) -> Self {
        Self {
            per_row: (0..p).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    fn record(&self, i: usize) {
        self.per_row[i].fetch_add(1, Ordering::Relaxed);
    }

    /// Total number of row fetches so far.
    pub fn total(&self) -> u64 {
        self.per_row.iter().map(|c| c.load(Ordering::Relaxed)).sum()
    }

    pub fn row_count(&self, i: usize) -> u64 {
        self.per_row[i].load(Ordering::Relaxed)
    }

    /// Number of distinct rows fetched at least once.
    pub fn distinct_rows(&self) -> usize {
        self.per_row
            .iter()
            .filter(|c| c.load(Ordering::Relaxed) > 0)
            .count()
    }

    pub fn reset(&self) {
        for c in &self.per_row {
            c.store(0, Ordering::Relaxed);
        }
    }
}

fn check_diagonals(diag: &[f64]) -> Result<()> {
    match diag.iter().position(|&d| !(d > 0.0 && d.is_finite())) {
        Some(j) => Err(PcsError::InvalidInput(format!(
            "covariance diagonal at index {j} is {} (must be positive)",
            diag[j]
        ))),
        None => Ok(()),
    }
}

/// Fully materialized, symmetric covariance (or correlation) matrix.
#[derive(Debug)]
pub struct DenseCovariance {
    p: usize,
    values: Vec<f64>,
    diag: Vec<f64>,
    telemetry: FetchTelemetry,
}

impl DenseCovariance {
    /// Wraps a symmetric matrix. The strict lower triangle is overwritten by
    /// the upper one so that row access is exactly symmetric.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let p = m.nrows();
        if m.ncols() != p {
            return Err(PcsError::InvalidInput(format!(
                "covariance must be square, got {}x{}",
                p,
                m.ncols()
            )));
        }
        let mut values = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                let v = m[(i, j)];
                if !v.is_finite() {
                    return Err(PcsError::NonFinite { row: i, col: j });
                }
                values[i * p + j] = v;
                values[j * p + i] = v;
            }
        }
        let diag: Vec<f64> = (0..p).map(|i| values[i * p + i]).collect();
        check_diagonals(&diag)?;
        Ok(Self {
            p,
            values,
            diag,
            telemetry: FetchTelemetry::new(p),
        })
    }

    /// Uncounted entry access, for callers that already hold the full matrix.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    /// Uncounted borrowed row.
    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p, self.p, &self.values)
    }
}

impl CovarianceSource for DenseCovariance {
    fn dim(&self) -> usize {
        self.p
    }

    fn diagonals(&self) -> &[f64] {
        &self.diag
    }

    fn row(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.p {
            return Err(PcsError::IndexOutOfRange {
                index: i,
                dim: self.p,
            });
        }
        self.telemetry.record(i);
        Ok(self.row_slice(i).to_vec())
    }

    fn telemetry(&self) -> &FetchTelemetry {
        &self.telemetry
    }
}

/// Empirical covariance `(x_i, x_j) / n` of uncentered columns.
pub fn empirical_covariance(data: &DataMatrix) -> Result<DenseCovariance> {
    let x = data.to_dmatrix();
    let mut gram = x.tr_mul(&x);
    gram /= data.n() as f64;
    DenseCovariance::from_dmatrix(&gram)
}

/// Per-feature class means and pooled standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMoments {
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub pooled_sd: Vec<f64>,
    pub n_plus: usize,
    pub n_minus: usize,
}

/// Class means and the pooled standard deviation with the `n1 + n2 - 2` divisor.
pub fn class_moments(data: &LabeledData) -> Result<ClassMoments> {
    let (n, p) = (data.n(), data.p());
    let x = data.data();
    let (n1, n2) = (data.n_plus(), data.n_minus());
    let mut mu_plus = vec![0.0; p];
    let mut mu_minus = vec![0.0; p];
    for (i, &y) in data.labels().iter().enumerate() {
        let target = if y == 1 { &mut mu_plus } else { &mut mu_minus };
        for (m, v) in target.iter_mut().zip(x.sample(i)) {
            *m += v;
        }
    }
    mu_plus.iter_mut().for_each(|m| *m /= n1 as f64);
    mu_minus.iter_mut().for_each(|m| *m /= n2 as f64);

    let mut ss = vec![0.0; p];
    let mut scale = vec![0.0f64; p];
    for (i, &y) in data.labels().iter().enumerate() {
        let mu = if y == 1 { &mu_plus } else { &mu_minus };
        for j in 0..p {
            let v = x.get(i, j);
            let c = v - mu[j];
            ss[j] += c * c;
            scale[j] = scale[j].max(v.abs());
        }
    }
    let dof = (n - 2) as f64;
    let mut pooled_sd = Vec::with_capacity(p);
    for j in 0..p {
        let s = (ss[j] / dof).sqrt();
        // Rounding in the class means leaves ~1e-17 residue on constant features.
        if !(s > 1e-12 * scale[j].max(f64::MIN_POSITIVE)) {
            return Err(PcsError::ZeroPooledSd(j));
        }
        pooled_sd.push(s);
    }
    Ok(ClassMoments {
        mu_plus,
        mu_minus,
        pooled_sd,
        n_plus: n1,
        n_minus: n2,
    })
}

/// Pooled within-class correlation matrix.
///
/// Each sample is centered by its own class mean and each feature is scaled by
/// its pooled standard deviation. The cross-product sum is divided by
/// `n - 2`, the same divisor the pooled variance uses, so the result is a
/// proper correlation matrix with unit diagonal.
pub fn pooled_correlation(data: &LabeledData) -> Result<DenseCovariance> {
    let moments = class_moments(data)?;
    let (n, p) = (data.n(), data.p());
    let x = data.data();
    let mut centered = DMatrix::<f64>::zeros(n, p);
    for (i, &y) in data.labels().iter().enumerate() {
        let mu = if y == 1 {
            &moments.mu_plus
        } else {
            &moments.mu_minus
        };
        for j in 0..p {
            centered[(i, j)] = (x.get(i, j) - mu[j]) / moments.pooled_sd[j];
        }
    }
    let mut r = centered.tr_mul(&centered);
    r /= (n - 2) as f64;
    for j in 0..p {
        r[(j, j)] = 1.0;
    }
    DenseCovariance::from_dmatrix(&r)
}

const STORE_MAGIC: &[u8; 4] = b"PCS1";
const STORE_VERSION: u32 = 1;
const STORE_HEADER: u64 = 16;

fn write_header(w: &mut impl Write, p: usize) -> Result<()> {
    w.write_all(STORE_MAGIC)?;
    w.write_all(&STORE_VERSION.to_le_bytes())?;
    w.write_all(&(p as u64).to_le_bytes())?;
    Ok(())
}

fn write_row(w: &mut impl Write, row: &[f64]) -> Result<()> {
    for v in row {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes every row of `source` to the binary store format.
pub fn write_store(source: &dyn CovarianceSource, path: impl AsRef<Path>) -> Result<()> {
    let p = source.dim();
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, p)?;
    for i in 0..p {
        write_row(&mut w, &source.row(i)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Sample count and dimension of a store, kept next to it in
/// `<store>.meta.json`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub n: usize,
    pub p: usize,
}

pub fn store_meta_path(path: impl AsRef<Path>) -> PathBuf {
    let mut name = path.as_ref().as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Reads the sidecar of a store; `None` when there is none.
pub fn read_store_meta(path: impl AsRef<Path>) -> Result<Option<StoreMeta>> {
    let meta = store_meta_path(path);
    match std::fs::read_to_string(&meta) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Computes the empirical covariance one row at a time and streams it to disk,
/// never holding more than one row of the `p x p` matrix. Also writes the
/// [`StoreMeta`] sidecar.
pub fn build_store(data: &DataMatrix, path: impl AsRef<Path>) -> Result<()> {
    let (n, p) = (data.n(), data.p());
    let path = path.as_ref();
    let columns: Vec<Vec<f64>> = (0..p).map(|j| data.column(j)).collect();
    std::fs::write(store_meta_path(path), serde_json::to_string(&StoreMeta { n, p })?)?;
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, p)?;
    let mut row = vec![0.0; p];
    for ci in &columns {
        for (r, cj) in row.iter_mut().zip(&columns) {
            *r = ci.iter().zip(cj).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        }
        write_row(&mut w, &row)?;
    }
    w.flush()?;
    Ok(())
}

/// File-backed covariance source. Each row request performs one positioned
/// read of `8 p` bytes.
#[derive(Debug)]
pub struct CovarianceStore {
    file: File,
    p: usize,
    diag: Vec<f64>,
    telemetry: FetchTelemetry,
}

/// Reads the header of a store file and returns `p`.
pub fn read_store_header(file: &mut File) -> Result<usize> {
    let mut header = [0u8; STORE_HEADER as usize];
    file.read_exact(&mut header)
        .map_err(|_| PcsError::Format("file shorter than the 16-byte header".into()))?;
    if &header[0..4] != STORE_MAGIC {
        return Err(PcsError::Format("bad magic bytes (expected \"PCS1\")".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != STORE_VERSION {
        return Err(PcsError::Format(format!(
            "unsupported version {version} (expected {STORE_VERSION})"
        )));
    }
    let p = u64::from_le_bytes(header[8..16].try_into().unwrap());
    usize::try_from(p).map_err(|_| PcsError::Format(format!("dimension {p} too large")))
}

pub fn open_store(path: impl AsRef<Path>) -> Result<CovarianceStore> {
    let mut file = File::open(path)?;
    let p = read_store_header(&mut file)?;
    if p < 1 {
        return Err(PcsError::Format("dimension 0".into()));
    }
    let expected = STORE_HEADER + 8 * (p as u64) * (p as u64);
    let actual = file.metadata()?.len();
    if actual != expected {
        return Err(PcsError::Format(format!(
            "dimension mismatch: p = {p} needs {expected} bytes, file has {actual}"
        )));
    }
    let mut store = CovarianceStore {
        file,
        p,
        diag: Vec::new(),
        telemetry: FetchTelemetry::new(p),
    };
    let mut diag = Vec::with_capacity(p);
    for i in 0..p {
        let mut buf = [0u8; 8];
        store.read_at(&mut buf, store.offset(i, i))?;
        diag.push(f64::from_le_bytes(buf));
    }
    check_diagonals(&diag)?;
    store.diag = diag;
    Ok(store)
}

impl CovarianceStore {
    fn offset(&self, i: usize, j: usize) -> u64 {
        STORE_HEADER + 8 * ((i as u64) * (self.p as u64) + j as u64)
    }

    #[cfg(unix)]
    fn read_at(&self, buf: &mut [u8], offset: u64) -> Result<()> {
        use std::os::unix::fs::FileExt;
        self.file.read_exact_at(buf, offset)?;
        Ok(())
    }

    #[cfg(windows)]
    fn read_at(&self, mut buf: &mut [u8], mut offset: u64) -> Result<()> {
        use std::os::windows::fs::FileExt;
        while !buf.is_empty() {
            let k = self.file.seek_read(buf, offset)?;
            if k == 0 {
                return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into());
            }
            buf = &mut buf[k..];
            offset += k as u64;
        }
        Ok(())
    }
}

impl CovarianceSource for CovarianceStore {
    fn dim(&self) -> usize {
        self.p
    }

    fn diagonals(&self) -> &[f64] {
        &self.diag
    }

    fn row(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.p {
            return Err(PcsError::IndexOutOfRange {
                index: i,
                dim: self.p,
            });
        }
        let mut buf = vec![0u8; 8 * self.p];
        self.read_at(&mut buf, self.offset(i, 0))?;
        self.telemetry.record(i);
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn telemetry(&self) -> &FetchTelemetry {
        &self.telemetry
    }
}
