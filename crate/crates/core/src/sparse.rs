//! Symmetric sparse matrix in upper-triangle triplet form, and its text format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PcsError, Result};

/// Symmetric `p x p` matrix stored as `(i, j, value)` triplets with `i <= j`.
///
/// Every diagonal entry is stored, even when it is zero. Off-diagonal triplets
/// are structural nonzeros; an off-diagonal entry that is absent is exactly 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTriplets", into = "RawTriplets")]
pub struct SparseSymmetricMatrix {
    p: usize,
    triplets: Vec<(usize, usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct RawTriplets {
    p: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl TryFrom<RawTriplets> for SparseSymmetricMatrix {
    type Error = PcsError;

    fn try_from(raw: RawTriplets) -> Result<Self> {
        Self::new(raw.p, raw.triplets)
    }
}

impl From<SparseSymmetricMatrix> for RawTriplets {
    fn from(m: SparseSymmetricMatrix) -> Self {
        RawTriplets {
            p: m.p,
            triplets: m.triplets,
        }
    }
}

impl SparseSymmetricMatrix {
    /// Builds from upper-triangle triplets. Triplets with `i > j` are
    /// transposed; duplicate keys are rejected.
    pub fn new(p: usize, triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, j, v) in triplets {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            if b >= p {
                return Err(PcsError::IndexOutOfRange { index: b, dim: p });
            }
            if !v.is_finite() {
                return Err(PcsError::NonFinite { row: a, col: b });
            }
            if map.insert((a, b), v).is_some() {
                return Err(PcsError::InvalidInput(format!(
                    "duplicate entry ({a}, {b})"
                )));
            }
        }
        Ok(Self::from_map(p, map))
    }

    fn from_map(p: usize, mut map: BTreeMap<(usize, usize), f64>) -> Self {
        for i in 0..p {
            map.entry((i, i)).or_insert(0.0);
        }
        let triplets = map
            .into_iter()
            .filter(|&((i, j), v)| i == j || v != 0.0)
            .map(|((i, j), v)| (i, j, v))
            .collect();
        Self { p, triplets }
    }

    /// `(A + A') / 2` for a matrix given row by row as `(diagonal, off-diagonal
    /// pairs)`.
    pub fn symmetrize_rows<'a, I>(p: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = (usize, f64, &'a [(usize, f64)])>,
    {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, diagonal, support) in rows {
            map.insert((i, i), diagonal);
            for &(j, v) in support {
                let key = if i <= j { (i, j) } else { (j, i) };
                *map.entry(key).or_insert(0.0) += 0.5 * v;
            }
        }
        Self::from_map(p, map)
    }

    pub fn identity(p: usize) -> Self {
        Self::from_diagonal(&vec![1.0; p])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            p: d.len(),
            triplets: d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect(),
        }
    }

    /// Upper triangle of a dense matrix; off-diagonal exact zeros are dropped.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let p = m.nrows();
        let mut map = BTreeMap::new();
        for i in 0..p {
            for j in i..p {
                let v = m[(i, j)];
                if i == j || v != 0.0 {
                    map.insert((i, j), v);
                }
            }
        }
        Self::from_map(p, map)
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.triplets
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&key))
            .map_or(0.0, |k| self.triplets[k].2)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.p];
        for &(i, j, v) in &self.triplets {
            if i == j {
                d[i] = v;
            }
        }
        d
    }

    /// Number of nonzero entries of the full (both triangles) matrix.
    pub fn nnz(&self) -> usize {
        self.triplets
            .iter()
            .map(|&(i, j, v)| match (i == j, v != 0.0) {
                (_, false) => 0,
                (true, true) => 1,
                (false, true) => 2,
            })
            .sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p {
            return Err(PcsError::DimensionMismatch {
                expected: self.p,
                actual: x.len(),
            });
        }
        let mut y = vec![0.0; self.p];
        for &(i, j, v) in &self.triplets {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        Ok(y)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            p: self.p,
            triplets: self.triplets.iter().map(|&(i, j, v)| (i, j, c * v)).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for &(i, j, v) in &self.triplets {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// Writes `p <dim> format <tag>` followed by one `i j value` line per
    /// triplet.
    pub fn write_triplets(&self, w: &mut impl Write, tag: &str) -> Result<()> {
        writeln!(w, "p {} format {tag}", self.p)?;
        for &(i, j, v) in &self.triplets {
            writeln!(w, "{i} {j} {v}")?;
        }
        Ok(())
    }

    /// Parses the text triplet format. Returns the format tag and the matrix.
    pub fn read_triplets(r: impl BufRead) -> Result<(String, Self)> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| PcsError::Format("empty triplet file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (p, tag) = match fields.as_slice() {
            ["p", dim, "format", tag] => {
                let p = dim
                    .parse::<usize>()
                    .map_err(|_| PcsError::Format(format!("bad dimension {dim:?}")))?;
                (p, tag.to_string())
            }
            _ => {
                return Err(PcsError::Format(format!(
                    "bad triplet header {header:?}"
                )))
            }
        };
        let mut triplets = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || PcsError::Format(format!("bad triplet on line {}: {line:?}", k + 2));
            let mut it = line.split_whitespace();
            let i = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let j = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let v = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if it.next().is_some() {
                return Err(bad());
            }
            triplets.push((i, j, v));
        }
        Ok((tag, Self::new(p, triplets)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_halves_one_sided_entries() {
        let r0: Vec<(usize, f64)> = vec![(1, -0.4)];
        let r1: Vec<(usize, f64)> = vec![(0, -0.2), (2, 0.6)];
        let r2: Vec<(usize, f64)> = vec![];
        let m = SparseSymmetricMatrix::symmetrize_rows(
            3,
            [(0, 1.0, &r0[..]), (1, 2.0, &r1[..]), (2, 3.0, &r2[..])],
        );
        assert_eq!(m.get(0, 1), -0.30000000000000004);
        assert_eq!(m.get(1, 0), m.get(0, 1));
        assert_eq!(m.get(1, 2), 0.3);
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.diagonal(), vec![1.0, 2.0, 3.0]);
        assert_eq!(m.nnz(), 7);
    }

    #[test]
    fn cancelling_entries_are_dropped() {
        let r0: Vec<(usize, f64)> = vec![(1, 0.5)];
        let r1: Vec<(usize, f64)> = vec![(0, -0.5)];
        let m = SparseSymmetricMatrix::symmetrize_rows(2, [(0, 1.0, &r0[..]), (1, 1.0, &r1[..])]);
        assert_eq!(m.triplets(), &[(0, 0, 1.0), (1, 1, 1.0)]);
    }

    #[test]
    fn duplicate_keys_rejected() {
        assert!(SparseSymmetricMatrix::new(3, vec![(0, 1, 1.0), (1, 0, 2.0)]).is_err());
    }

    #[test]
    fn text_format_round_trip() {
        let m = SparseSymmetricMatrix::new(3, vec![(0, 0, 1.0), (0, 2, -0.1), (1, 1, 0.7)]).unwrap();
        let mut buf = Vec::new();
        m.write_triplets(&mut buf, "pcs-triplet-v1").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "p 3 format pcs-triplet-v1\n0 0 1\n0 2 -0.1\n1 1 0.7\n2 2 0\n"
        );
        let (tag, back) = SparseSymmetricMatrix::read_triplets(&buf[..]).unwrap();
        assert_eq!(tag, "pcs-triplet-v1");
        assert_eq!(back, m);
    }

    #[test]
    fn mul_vec_matches_dense() {
        let m = SparseSymmetricMatrix::new(3, vec![(0, 0, 2.0), (0, 1, 0.5), (1, 2, -1.0)]).unwrap();
        let x = [1.0, 2.0, 3.0];
        let dense = m.to_dense() * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(m.mul_vec(&x).unwrap(), dense.as_slice());
    }
}
