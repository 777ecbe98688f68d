//! Dataset ingestion, normalization, subsampling and minibatch iteration.
//!
//! Examples are stored row-wise (`n_examples × n_features`); the network
//! consumes feature-major batches, which [`Dataset::batch`] produces.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const DEFAULT_BATCH_SIZE: usize = 128;
const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InsufficientData("dataset has no examples".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        features.ensure_finite("dataset features")?;
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// The examples at `indices` as a `(features × indices.len())` matrix
    /// plus their labels.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let f = self.n_features();
        let b = indices.len();
        let mut x = Matrix::zeros(f, b);
        let data = x.as_mut_slice();
        for (j, &i) in indices.iter().enumerate() {
            for (k, &v) in self.features.row(i).iter().enumerate() {
                data[k * b + j] = v;
            }
        }
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Every example, feature-major.
    pub fn all(&self) -> (Matrix, Vec<usize>) {
        (self.features.transpose(), self.labels.clone())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

fn open_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    let gz = path.extension().is_some_and(|e| e == "gz");
    if gz {
        GzDecoder::new(BufReader::new(file))
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.into(),
            offset: offset as u64,
            detail: "truncated header".into(),
        })
}

fn expect_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let got = read_u32(bytes, 0, path)?;
    if got != want {
        return Err(Error::Format {
            path: path.into(),
            offset: 0,
            detail: format!("bad magic {got:#010x}, expected {want:#010x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Format {
        path: path.into(),
        offset: bytes.len() as u64,
        detail: format!("truncated data: need {len} bytes from offset {start}"),
    })
}

/// Reads an IDX image/label pair; `.gz` files are decompressed transparently.
/// Pixels are scaled to [0, 1]; the class count is `max(label) + 1`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = open_maybe_gz(ip)?;
    expect_magic(&images, IDX_IMAGES_MAGIC, ip)?;
    let n = read_u32(&images, 4, ip)? as usize;
    let rows = read_u32(&images, 8, ip)? as usize;
    let cols = read_u32(&images, 12, ip)? as usize;
    let f = rows * cols;
    let pixels = payload(&images, 16, n * f, ip)?;

    let labels = open_maybe_gz(lp)?;
    expect_magic(&labels, IDX_LABELS_MAGIC, lp)?;
    let m = read_u32(&labels, 4, lp)? as usize;
    if m != n {
        return Err(Error::Format {
            path: lp.into(),
            offset: 4,
            detail: format!("label count {m} does not match image count {n}"),
        });
    }
    let raw = payload(&labels, 8, n, lp)?;

    let features = Matrix::from_vec(n, f, pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let labels: Vec<usize> = raw.iter().map(|&l| usize::from(l)).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, n_classes)
}

/// Writes raw IDX bytes (gzip when the path ends in `.gz`).
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    if pixels.len() != labels.len() * rows * cols {
        return Err(Error::LengthMismatch {
            left: pixels.len(),
            right: labels.len() * rows * cols,
        });
    }
    let dim = |v: usize| -> Result<[u8; 4]> {
        u32::try_from(v)
            .map(u32::to_be_bytes)
            .map_err(|_| Error::InvalidArgument(format!("dimension {v} exceeds u32")))
    };
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend(dim(labels.len())?);
    img.extend(dim(rows)?);
    img.extend(dim(cols)?);
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend(IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend(dim(labels.len())?);
    lab.extend_from_slice(labels);
    write_bytes(images_path.as_ref(), &img)?;
    write_bytes(labels_path.as_ref(), &lab)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        let mut file = file;
        file.write_all(bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Parses a numeric CSV; column `label_column` holds integral class labels.
pub fn load_csv(path: impl AsRef<Path>, label_column: usize, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, path, label_column, has_header)
}

fn parse_csv<R: Read>(reader: R, path: &Path, label_column: usize, has_header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut width = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |detail: String| Error::Parse {
            path: path.into(),
            line,
            detail,
        };
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(err(format!("expected {w} fields, found {}", record.len())));
        }
        if label_column >= w {
            return Err(err(format!("label column {label_column} out of range for {w} fields")));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| err(format!("non-numeric cell {cell:?} in column {c}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite cell {cell:?} in column {c}")));
            }
            if c == label_column {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(err(format!("label {cell:?} is not a non-negative integer")));
                }
                labels.push(v as usize);
            } else {
                features.push(v);
            }
        }
    }
    let w = width.ok_or_else(|| Error::InsufficientData(format!("{} has no data rows", path.display())))?;
    let n = labels.len();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Matrix::from_vec(n, w - 1, features)?, labels, n_classes)
}

/// Per-example contrast normalization: `(x − mean) / (std + 1e-8)` with the
/// population standard deviation over that example's features.
pub fn normalize_per_example(ds: &Dataset) -> Result<Dataset> {
    let f = ds.n_features();
    if f < 2 {
        return Err(Error::InvalidArgument(format!(
            "per-example normalization needs at least 2 features, got {f}"
        )));
    }
    let mut features = ds.features.clone();
    for i in 0..features.rows() {
        let row = features.row_mut(i);
        let mean = row.iter().sum::<f64>() / f as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
        let denom = var.sqrt() + NORMALIZE_EPS;
        for v in row.iter_mut() {
            *v = (*v - mean) / denom;
        }
    }
    Ok(Dataset {
        features,
        labels: ds.labels.clone(),
        n_classes: ds.n_classes,
    })
}

/// Draws `n` examples without replacement, stratified by class.
///
/// Each class receives its proportional share, rounded by largest remainder
/// (ties to the lower class index); the result is shuffled so classes are
/// interleaved.
pub fn subset(ds: &Dataset, n: usize, rng: &mut RngState) -> Result<Dataset> {
    if n == 0 || n > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "subset size {n} outside [1, {}]",
            ds.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let total = ds.len();
    let mut quota: Vec<usize> = by_class.iter().map(|c| c.len() * n / total).collect();
    let mut short = n - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    // remainder numerators; larger first, lower index on ties
    order.sort_by_key(|&c| std::cmp::Reverse(by_class[c].len() * n % total));
    for &c in order.iter().cycle() {
        if short == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            short -= 1;
        }
    }
    let mut chosen = Vec::with_capacity(n);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        rng.shuffle(members);
        chosen.extend_from_slice(&members[..q]);
    }
    rng.shuffle(&mut chosen);
    Ok(ds.select(&chosen))
}

/// Seeded per-epoch shuffling into fixed-size minibatches.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    batch_size: usize,
    n: usize,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || n == 0 {
            return Err(Error::InvalidArgument("batch size and dataset size must be positive".into()));
        }
        Ok(Self { batch_size, n })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Index batches for one epoch; the last one may be short.
    pub fn epoch(&self, rng: &mut RngState) -> Vec<Vec<usize>> {
        rng.permutation(self.n)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Two isotropic Gaussian blobs in `dims` dimensions, centred at ±`separation`/2
/// along every axis; classes alternate.
pub fn two_gaussians(n: usize, dims: usize, separation: f64, rng: &mut RngState) -> Result<Dataset> {
    if n == 0 || dims == 0 {
        return Err(Error::InvalidArgument("two_gaussians needs n ≥ 1 and dims ≥ 1".into()));
    }
    let mut features = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let centre = if class == 0 { -0.5 } else { 0.5 } * separation;
        features.extend((0..dims).map(|_| centre + rng.normal()));
        labels.push(class);
    }
    Dataset::new(Matrix::from_vec(n, dims, features)?, labels, 2)
}

/// Interleaved 2-D spirals, one arm per class, with Gaussian jitter `noise`.
pub fn spirals(n: usize, classes: usize, noise: f64, rng: &mut RngState) -> Result<Dataset> {
    if n == 0 || classes < 2 {
        return Err(Error::InvalidArgument("spirals needs n ≥ 1 and at least 2 classes".into()));
    }
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let t = rng.uniform();
        let r = 0.1 + 0.9 * t;
        let angle = 3.0 * std::f64::consts::PI * t + class as f64 * std::f64::consts::TAU / classes as f64;
        features.push(r * angle.cos() + noise * rng.normal());
        features.push(r * angle.sin() + noise * rng.normal());
        labels.push(class);
    }
    Dataset::new(Matrix::from_vec(n, 2, features)?, labels, classes)
}
