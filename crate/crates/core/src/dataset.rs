//! Dataset ingestion: CSV, IDX image/label pairs, and the binary distance cache.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::DistanceMatrix;
use crate::samples::SampleSet;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    Csv,
    Idx,
    BinaryCache,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    #[default]
    None,
    UnitL2,
    #[serde(rename = "scale_1_over_255")]
    Scale1Over255,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSource {
    pub path: PathBuf,
    pub format: DatasetFormat,
    /// IDX label file accompanying an IDX image file.
    pub labels_path: Option<PathBuf>,
    /// Zero-based CSV column holding integer class labels.
    pub label_column: Option<usize>,
    pub normalize: Normalize,
    /// Keep only these labels, relabelled `0..classes.len()` in the given order.
    pub classes: Option<Vec<u32>>,
    pub subsample: Option<usize>,
    pub subsample_seed: u64,
}

impl DatasetSource {
    pub fn new(path: impl Into<PathBuf>, format: DatasetFormat) -> Self {
        Self {
            path: path.into(),
            format,
            labels_path: None,
            label_column: None,
            normalize: Normalize::None,
            classes: None,
            subsample: None,
            subsample_seed: 0,
        }
    }
}

fn parse_label(field: &str, row: usize) -> Result<u32> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::FormatError(format!("row {row}: label {field:?} is not a number")))?;
    if v < 0.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
        return Err(Error::FormatError(format!(
            "row {row}: label {field:?} is not a non-negative integer"
        )));
    }
    Ok(v as u32)
}

/// Parses comma-separated numeric rows. A first row that does not parse is
/// treated as a header.
pub fn read_csv<R: Read>(reader: R, label_column: Option<usize>) -> Result<SampleSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::FormatError(e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::FormatError(format!(
                "row {row} has {} fields, expected {w}",
                rec.len()
            )));
        }
        if let Some(c) = label_column {
            if c >= w {
                return Err(Error::FormatError(format!("label column {c} out of range for width {w}")));
            }
        }
        let mut values = Vec::with_capacity(w);
        let mut label = None;
        let mut bad = false;
        for (j, field) in rec.iter().enumerate() {
            if Some(j) == label_column {
                match parse_label(field, row) {
                    Ok(l) => label = Some(l),
                    Err(e) if row > 0 => return Err(e),
                    Err(_) => bad = true,
                }
            } else {
                match field.parse::<f64>() {
                    Ok(v) => values.push(v),
                    Err(_) if row > 0 => {
                        return Err(Error::FormatError(format!("row {row}: {field:?} is not a number")))
                    }
                    Err(_) => bad = true,
                }
            }
        }
        if bad {
            continue;
        }
        features.extend(values);
        labels.extend(label);
    }
    let w = width.ok_or_else(|| Error::FormatError("CSV input has no rows".into()))?;
    let d = w - usize::from(label_column.is_some());
    if d == 0 {
        return Err(Error::FormatError("CSV rows have no feature columns".into()));
    }
    SampleSet::new(features, d, label_column.map(|_| labels))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::FormatError("IDX file is truncated".into())
    } else {
        Error::Io(e)
    }
}

/// Reads an IDX `u8` image tensor as rows of `rows × cols` features.
pub fn read_idx_images<R: Read>(mut r: R) -> Result<SampleSet> {
    let magic = r.read_u32::<BigEndian>().map_err(truncated)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::FormatError(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = r.read_u32::<BigEndian>().map_err(truncated)? as usize;
    let rows = r.read_u32::<BigEndian>().map_err(truncated)? as usize;
    let cols = r.read_u32::<BigEndian>().map_err(truncated)? as usize;
    let d = rows * cols;
    let mut bytes = vec![0u8; n * d];
    r.read_exact(&mut bytes).map_err(truncated)?;
    SampleSet::new(bytes.into_iter().map(f64::from).collect(), d, None)
}

pub fn read_idx_labels<R: Read>(mut r: R) -> Result<Vec<u32>> {
    let magic = r.read_u32::<BigEndian>().map_err(truncated)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::FormatError(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = r.read_u32::<BigEndian>().map_err(truncated)? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes).map_err(truncated)?;
    Ok(bytes.into_iter().map(u32::from).collect())
}

/// `count` distinct indices out of `0..n`, sorted ascending.
pub fn subsample_indices(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > n {
        return Err(Error::Config(format!("subsample {count} exceeds the {n} available rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = rand::seq::index::sample(&mut rng, n, count).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

fn filter_classes(set: SampleSet, classes: &[u32]) -> Result<SampleSet> {
    let labels = set.require_labels()?;
    let keep: Vec<usize> = (0..set.len()).filter(|&i| classes.contains(&labels[i])).collect();
    let remapped: Vec<u32> = keep
        .iter()
        .map(|&i| classes.iter().position(|&c| c == labels[i]).unwrap() as u32)
        .collect();
    let picked = set.select(&keep);
    SampleSet::new(picked.features().to_vec(), set.dim(), Some(remapped))
}

/// Loads a feature dataset (CSV or IDX) and applies class filtering,
/// subsampling and normalization, in that order.
pub fn load_dataset(source: &DatasetSource) -> Result<SampleSet> {
    let mut set = match source.format {
        DatasetFormat::Csv => read_csv(open(&source.path)?, source.label_column)?,
        DatasetFormat::Idx => {
            let images = read_idx_images(open(&source.path)?)?;
            match &source.labels_path {
                Some(p) => {
                    let labels = read_idx_labels(open(p)?)?;
                    if labels.len() != images.len() {
                        return Err(Error::FormatError(format!(
                            "{} images but {} labels",
                            images.len(),
                            labels.len()
                        )));
                    }
                    SampleSet::new(images.features().to_vec(), images.dim(), Some(labels))?
                }
                None => images,
            }
        }
        DatasetFormat::BinaryCache => {
            return Err(Error::Config(
                "a distance cache holds no features; load it with load_distances".into(),
            ))
        }
    };
    if let Some(classes) = &source.classes {
        set = filter_classes(set, classes)?;
    }
    if let Some(count) = source.subsample {
        set = set.select(&subsample_indices(set.len(), count, source.subsample_seed)?);
    }
    match source.normalize {
        Normalize::None => Ok(set),
        Normalize::UnitL2 => set.normalized(),
        Normalize::Scale1Over255 => Ok(set.scaled(1.0 / 255.0)),
    }
}

/// Loads a binary distance cache, optionally subsampled.
pub fn load_distances(source: &DatasetSource) -> Result<DistanceMatrix> {
    if source.format != DatasetFormat::BinaryCache {
        return Err(Error::Config("load_distances expects a binary cache source".into()));
    }
    let dist = DistanceMatrix::read_cache(&source.path)?;
    match source.subsample {
        Some(count) => Ok(dist.submatrix(&subsample_indices(dist.len(), count, source.subsample_seed)?)),
        None => Ok(dist),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use byteorder::WriteBytesExt;

    fn idx_pair(n: usize) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
        for v in [n as u32, 28, 28] {
            img.write_u32::<BigEndian>(v).unwrap();
        }
        img.extend((0..n * 784).map(|i| (i % 256) as u8));
        let mut lab = Vec::new();
        lab.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
        lab.write_u32::<BigEndian>(n as u32).unwrap();
        lab.extend((0..n).map(|i| (i % 10) as u8));
        (img, lab)
    }

    #[test]
    fn csv_with_label_column() {
        let s = read_csv("1,2,0\n3,4,1\n5,6,0".as_bytes(), Some(2)).unwrap();
        assert_eq!((s.len(), s.dim()), (3, 2));
        assert_eq!(s.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(s.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn csv_header_and_errors() {
        let s = read_csv("a,b\n1,2\n".as_bytes(), None).unwrap();
        assert_eq!(s.len(), 1);
        assert!(matches!(read_csv("1,2\n3\n".as_bytes(), None), Err(Error::FormatError(_))));
        assert!(matches!(read_csv("1,2\n3,x\n".as_bytes(), None), Err(Error::FormatError(_))));
        assert!(matches!(read_csv("1,2\n3,4\n".as_bytes(), Some(5)), Err(Error::FormatError(_))));
    }

    #[test]
    fn idx_header_arithmetic() {
        let (img, lab) = idx_pair(10);
        let s = read_idx_images(img.as_slice()).unwrap();
        assert_eq!((s.len(), s.dim()), (10, 784));
        assert_eq!(read_idx_labels(lab.as_slice()).unwrap().len(), 10);
        assert!(matches!(read_idx_images(lab.as_slice()), Err(Error::FormatError(_))));
        assert!(matches!(read_idx_labels(img.as_slice()), Err(Error::FormatError(_))));
        assert!(matches!(read_idx_images(&img[..100]), Err(Error::FormatError(_))));
    }

    #[test]
    fn load_with_filter_subsample_and_scale() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = idx_pair(50);
        std::fs::write(dir.path().join("img"), img).unwrap();
        std::fs::write(dir.path().join("lab"), lab).unwrap();
        let mut src = DatasetSource::new(dir.path().join("img"), DatasetFormat::Idx);
        src.labels_path = Some(dir.path().join("lab"));
        src.classes = Some(vec![7, 3]);
        src.subsample = Some(5);
        src.subsample_seed = 9;
        src.normalize = Normalize::Scale1Over255;
        let a = load_dataset(&src).unwrap();
        let b = load_dataset(&src).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.labels().unwrap().iter().all(|&l| l < 2));
        assert!(a.features().iter().all(|&v| (0.0..=1.0).contains(&v)));
        src.subsample = Some(11);
        assert!(load_dataset(&src).is_err());
    }

    #[test]
    fn subsample_is_deterministic() {
        assert_eq!(subsample_indices(100, 5, 3).unwrap(), subsample_indices(100, 5, 3).unwrap());
        assert_ne!(subsample_indices(100, 5, 3).unwrap(), subsample_indices(100, 5, 4).unwrap());
    }
}
