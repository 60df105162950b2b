//! Dense pairwise-distance structures consumed by the greedy region search.
//!
//! A [`SortedDistanceIndex`] holds the full distance matrix `D`, its row-sorted
//! copy, the permutation `perm` mapping sorted positions back to columns and
//! the inverse `loc` with `loc[i][perm[i][j]] = j`. Condensing removes the
//! columns of absorbed samples from every sorted row while keeping the order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metric::{self, MetricKind, MetricSpace};
use crate::samples::SampleSet;

/// Magic bytes of the binary distance cache.
pub const CACHE_MAGIC: &[u8; 4] = b"ADVD";
pub const CACHE_VERSION: u32 = 1;

/// Row-major `n × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Copy> SquareMatrix<T> {
    pub fn from_vec(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionError {
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionError {
                expected: n,
                got: r.len(),
            });
        }
        Ok(Self {
            n,
            data: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// Symmetric matrix of metric distances between all samples of a set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    metric: MetricKind,
    matrix: SquareMatrix<f64>,
}

impl DistanceMatrix {
    /// Computes all pairwise distances; rows are filled in parallel.
    pub fn compute(samples: &SampleSet, metric: &MetricSpace) -> Result<Self> {
        let n = samples.len();
        samples.validate_for(metric.kind)?;
        let prepared = match metric.kind {
            MetricKind::TraceAmplitude => samples.normalized()?,
            _ => samples.clone(),
        };
        let scale = metric.angle_scale;
        let kind = metric.kind;
        let pair = |a: &[f64], b: &[f64]| -> f64 {
            match kind {
                MetricKind::L2 => metric::l2_unchecked(a, b),
                MetricKind::TraceAmplitude => metric::unit_trace_distance(a, b),
                MetricKind::TraceAngle => metric::angle_trace_distance_unchecked(a, b, scale),
            }
        };
        // upper triangle only; the lower half is mirrored below
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let a = prepared.row(i);
                (i + 1..n).map(|j| pair(a, prepared.row(j))).collect()
            })
            .collect();
        let mut data = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (offset, &v) in row.iter().enumerate() {
                let j = i + 1 + offset;
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Ok(Self {
            metric: kind,
            matrix: SquareMatrix { n, data },
        })
    }

    pub fn from_matrix(metric: MetricKind, matrix: SquareMatrix<f64>) -> Result<Self> {
        let n = matrix.n();
        for i in 0..n {
            if matrix.get(i, i) != 0.0 {
                return Err(Error::FormatError(format!("non-zero diagonal at row {i}")));
            }
            for j in 0..i {
                let (a, b) = (matrix.get(i, j), matrix.get(j, i));
                if !(a >= 0.0) || (a - b).abs() > 1e-12 {
                    return Err(Error::FormatError(format!(
                        "distance matrix not symmetric and non-negative at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { metric, matrix })
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.matrix.n()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.n() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn matrix(&self) -> &SquareMatrix<f64> {
        &self.matrix
    }

    /// Distances among the samples at `indices`, in that order.
    pub fn submatrix(&self, indices: &[usize]) -> DistanceMatrix {
        let m = indices.len();
        let mut data = Vec::with_capacity(m * m);
        for &i in indices {
            let row = self.matrix.row(i);
            data.extend(indices.iter().map(|&j| row[j]));
        }
        DistanceMatrix {
            metric: self.metric,
            matrix: SquareMatrix { n: m, data },
        }
    }

    /// Writes the little-endian `ADVD` cache: magic, u32 version, u64 n,
    /// u8 metric code, then `n²` f64 values row-major.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_cache_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_cache_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_u32::<LittleEndian>(CACHE_VERSION)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u8(self.metric.code())?;
        for &v in self.matrix.as_slice() {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_cache_from(&mut r)
    }

    pub fn read_cache_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::FormatError(format!("bad cache magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CACHE_VERSION {
            return Err(Error::FormatError(format!(
                "unsupported cache version {version}"
            )));
        }
        let n = usize::try_from(r.read_u64::<LittleEndian>()?)
            .map_err(|_| Error::FormatError("cache size overflows usize".into()))?;
        let code = r.read_u8()?;
        let metric = MetricKind::from_code(code)
            .ok_or_else(|| Error::FormatError(format!("unknown metric code {code}")))?;
        let count = n
            .checked_mul(n)
            .ok_or_else(|| Error::FormatError("cache size overflows usize".into()))?;
        let mut data = vec![0.0; count];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::FormatError("truncated distance cache".into())
            } else {
                Error::Io(e)
            }
        })?;
        Self::from_matrix(metric, SquareMatrix { n, data })
    }
}

/// Row-wise stable sort; ties keep ascending column order.
pub fn sort_rows(dist: &SquareMatrix<f64>) -> (SquareMatrix<f64>, SquareMatrix<u32>) {
    let n = dist.n();
    let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = dist.row(i);
            let mut order: Vec<u32> = (0..n as u32).collect();
            // sort_by is stable, so equal distances stay in column order
            order.sort_by(|&a, &b| row[a as usize].total_cmp(&row[b as usize]));
            let sorted = order.iter().map(|&j| row[j as usize]).collect();
            (sorted, order)
        })
        .collect();
    let mut sorted = Vec::with_capacity(n * n);
    let mut perm = Vec::with_capacity(n * n);
    for (s, p) in rows {
        sorted.extend(s);
        perm.extend(p);
    }
    (
        SquareMatrix { n, data: sorted },
        SquareMatrix { n, data: perm },
    )
}

/// Inverse of `perm` row by row: `loc[i][perm[i][j]] = j`.
pub fn location_index(perm: &SquareMatrix<u32>) -> Result<SquareMatrix<u32>> {
    let n = perm.n();
    let mut loc = vec![u32::MAX; n * n];
    for i in 0..n {
        let out = &mut loc[i * n..(i + 1) * n];
        for (j, &p) in perm.row(i).iter().enumerate() {
            let p = p as usize;
            if p >= n || out[p] != u32::MAX {
                return Err(Error::IndexError(format!("row {i} is not a permutation")));
            }
            out[p] = j as u32;
        }
    }
    Ok(SquareMatrix { n, data: loc })
}

/// Number of elements `<= threshold` in an ascending row, by bisection.
#[inline]
pub fn find_rank(row: &[f64], threshold: f64) -> usize {
    row.partition_point(|&v| v <= threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SortedDistanceIndex {
    pub dist: DistanceMatrix,
    pub sorted: SquareMatrix<f64>,
    pub perm: SquareMatrix<u32>,
    pub loc: SquareMatrix<u32>,
}

impl SortedDistanceIndex {
    pub fn from_distances(dist: DistanceMatrix) -> Self {
        let (sorted, perm) = sort_rows(dist.matrix());
        let loc = location_index(&perm).expect("sort_rows yields permutations");
        Self {
            dist,
            sorted,
            perm,
            loc,
        }
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    /// The uncondensed view (nothing removed).
    pub fn full_view(&self) -> CondensedView {
        CondensedView {
            rows: self.len(),
            stride: self.len(),
            width: self.len(),
            distances: self.sorted.as_slice().to_vec(),
            survivors: self.perm.as_slice().to_vec(),
        }
    }
}

/// Builds the full sorted index for `samples` under `metric`.
pub fn pairwise_distances(samples: &SampleSet, metric: &MetricSpace) -> Result<SortedDistanceIndex> {
    Ok(SortedDistanceIndex::from_distances(DistanceMatrix::compute(
        samples, metric,
    )?))
}

/// Sorted distances from every sample to the samples outside a removed set.
#[derive(Debug, Clone)]
pub struct CondensedView {
    rows: usize,
    stride: usize,
    width: usize,
    distances: Vec<f64>,
    survivors: Vec<u32>,
}

impl PartialEq for CondensedView {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.width == other.width
            && (0..self.rows).all(|i| self.row(i) == other.row(i) && self.survivors(i) == other.survivors(i))
    }
}

impl CondensedView {
    pub fn num_rows(&self) -> usize {
        self.rows
    }

    /// Length of every row: the number of surviving samples.
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.distances[i * self.stride..i * self.stride + self.width]
    }

    #[inline]
    pub fn survivors(&self, i: usize) -> &[u32] {
        &self.survivors[i * self.stride..i * self.stride + self.width]
    }

    /// Drops every entry whose sample is flagged in `removed`, compacting each
    /// row in place. Equivalent to re-condensing the full index by the union
    /// of all masks applied so far.
    pub fn retain(&mut self, removed: &[bool]) -> Result<()> {
        if removed.len() != self.rows {
            return Err(Error::DimensionError {
                expected: self.rows,
                got: removed.len(),
            });
        }
        let width = self.width;
        if width == 0 || self.stride == 0 {
            return Ok(());
        }
        let kept: Vec<usize> = self
            .distances
            .par_chunks_mut(self.stride)
            .zip(self.survivors.par_chunks_mut(self.stride))
            .map(|(d, s)| {
                let mut w = 0;
                for j in 0..width {
                    let k = s[j];
                    if !removed[k as usize] {
                        d[w] = d[j];
                        s[w] = k;
                        w += 1;
                    }
                }
                w
            })
            .collect();
        self.width = kept[0];
        debug_assert!(kept.iter().all(|&w| w == self.width));
        Ok(())
    }
}

/// Removes the samples flagged in `removed` from every sorted row.
///
/// The positions to delete in row `i` are `loc[i][k]` for each removed `k`.
pub fn condense_mask(index: &SortedDistanceIndex, removed: &[bool]) -> Result<CondensedView> {
    let n = index.len();
    if removed.len() != n {
        return Err(Error::DimensionError {
            expected: n,
            got: removed.len(),
        });
    }
    let gone: Vec<usize> = (0..n).filter(|&k| removed[k]).collect();
    let width = n - gone.len();
    let mut distances = vec![0.0; n * width];
    let mut survivors = vec![0u32; n * width];
    if width > 0 {
        distances
            .par_chunks_mut(width)
            .zip(survivors.par_chunks_mut(width))
            .enumerate()
            .for_each_init(
                || vec![false; n],
                |drop, (i, (d, s))| {
                    let loc = index.loc.row(i);
                    for &k in &gone {
                        drop[loc[k] as usize] = true;
                    }
                    let sorted = index.sorted.row(i);
                    let perm = index.perm.row(i);
                    let mut w = 0;
                    for j in 0..n {
                        if drop[j] {
                            drop[j] = false;
                        } else {
                            d[w] = sorted[j];
                            s[w] = perm[j];
                            w += 1;
                        }
                    }
                },
            );
    }
    Ok(CondensedView {
        rows: n,
        stride: width,
        width,
        distances,
        survivors,
    })
}

/// Condenses `index` by the sample indices in `removed` (duplicates allowed).
pub fn condense(index: &SortedDistanceIndex, removed: &[usize]) -> Result<CondensedView> {
    let n = index.len();
    let mut mask = vec![false; n];
    for &k in removed {
        if k >= n {
            return Err(Error::IndexError(format!(
                "removal index {k} out of range for {n} samples"
            )));
        }
        mask[k] = true;
    }
    condense_mask(index, &mask)
}
