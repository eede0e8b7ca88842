//! Datasets: synthetic generators, CSV interchange, binary MNIST from IDX
//! files and a seeded shuffle-split.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::linalg::{Matrix, Prng};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("idx format error: {0}")]
    Idx(String),
    #[error("unknown class {0} (expected a digit 0-9 with examples in the file)")]
    UnknownClass(u8),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: Option<u64>,
    /// One row per example.
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self, DataError> {
        if xs.is_empty() {
            return Err(DataError::Invalid("no examples".into()));
        }
        if xs.len() != ys.len() {
            return Err(DataError::Invalid(format!("{} inputs, {} labels", xs.len(), ys.len())));
        }
        let d_in = xs[0].len();
        if d_in == 0 || xs.iter().any(|x| x.len() != d_in) {
            return Err(DataError::Invalid("inconsistent input dimension".into()));
        }
        if !xs.iter().flatten().chain(&ys).all(|v| v.is_finite()) {
            return Err(DataError::Invalid("non-finite value".into()));
        }
        Ok(Self { name: name.into(), seed: None, xs, ys })
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn d_in(&self) -> usize {
        self.xs[0].len()
    }

    /// `d_in × n`, one column per example.
    pub fn x_matrix(&self) -> Matrix {
        Matrix::from_fn(self.d_in(), self.n(), |i, s| self.xs[s][i])
    }

    pub fn is_binary(&self) -> bool {
        self.ys.iter().all(|&y| y == 1.0 || y == -1.0)
    }

    fn seeded(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn subset(&self, idx: &[usize], name: &str) -> Dataset {
        Dataset {
            name: name.into(),
            seed: self.seed,
            xs: idx.iter().map(|&i| self.xs[i].clone()).collect(),
            ys: idx.iter().map(|&i| self.ys[i]).collect(),
        }
    }
}

/// `x_s = 1`, `y_s ~ U[-1, 1]`.
pub fn gen_experiment1(n: usize, seed: u64) -> Result<Dataset, DataError> {
    let mut rng = Prng::new(seed);
    let ys = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Ok(Dataset::new("experiment1", vec![vec![1.0]; n], ys)?.seeded(seed))
}

/// `x_s ~ U[-1, 1]²`, `y_s ~ U[-1, 1]`.
pub fn gen_experiment2(n: usize, seed: u64) -> Result<Dataset, DataError> {
    let mut rng = Prng::new(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        xs.push(vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)]);
        ys.push(rng.uniform_in(-1.0, 1.0));
    }
    Ok(Dataset::new("experiment2", xs, ys)?.seeded(seed))
}

/// Distance of each class mean from the origin in [`gen_two_gaussians`].
pub const GAUSSIAN_SEPARATION: f64 = 1.5;

/// Two unit-variance Gaussian clouds centred at `±1.5·u`, `u` the unit
/// diagonal of `R^d_in`; labels alternate `+1, -1`.
pub fn gen_two_gaussians(n: usize, d_in: usize, seed: u64) -> Result<Dataset, DataError> {
    let mut rng = Prng::new(seed);
    let shift = GAUSSIAN_SEPARATION / (d_in as f64).sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for s in 0..n {
        let y = if s % 2 == 0 { 1.0 } else { -1.0 };
        xs.push((0..d_in).map(|_| y * shift + rng.normal()).collect());
        ys.push(y);
    }
    Ok(Dataset::new("two-gaussians", xs, ys)?.seeded(seed))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Reads `d_in` feature columns followed by one label column. A first line
/// that does not parse as numbers is taken as a header.
pub fn load_csv(path: impl AsRef<Path>, d_in: usize) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut name = path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    if name.is_empty() {
        name = "csv".into();
    }
    parse_csv(&text, d_in, &name)
}

pub fn parse_csv(text: &str, d_in: usize, name: &str) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let vals = match parsed {
            Ok(v) => v,
            Err(_) if k == 0 => continue,
            Err(e) => return Err(DataError::Parse { line, msg: format!("non-numeric cell: {e}") }),
        };
        if vals.len() != d_in + 1 {
            return Err(DataError::Parse {
                line,
                msg: format!("expected {} columns, found {}", d_in + 1, vals.len()),
            });
        }
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(DataError::Parse { line, msg: "non-finite value".into() });
        }
        ys.push(vals[d_in]);
        xs.push(vals[..d_in].to_vec());
    }
    Dataset::new(name, xs, ys)
}

/// Header `x1,…,x{d_in},y`, then one row per example.
pub fn save_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    let wrap = |e: csv::Error| DataError::Io { path: path.display().to_string(), source: std::io::Error::other(e) };
    let mut header: Vec<String> = (1..=ds.d_in()).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(wrap)?;
    for (x, y) in ds.xs.iter().zip(&ds.ys) {
        let row: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| format!("{v:?}")).collect();
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DataError::Idx("truncated header".into()))
}

/// Parsed IDX image file: count, rows, cols and raw pixels.
fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES {
        return Err(DataError::Idx(format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let pixels = be_u32(bytes, 8)? as usize * be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() < n * pixels {
        return Err(DataError::Idx(format!("image payload truncated: {} of {} bytes", body.len(), n * pixels)));
    }
    Ok((n, pixels, body[..n * pixels].to_vec()))
}

fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS {
        return Err(DataError::Idx(format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(DataError::Idx(format!("label payload truncated: {} of {n} bytes", body.len())));
    }
    Ok(body[..n].to_vec())
}

/// Two-digit subset of an MNIST-style IDX pair: `class_a ↦ -1`,
/// `class_b ↦ +1`, pixels scaled to `[0, 1]`, the first `limit` of each class.
pub fn idx_binary_from_bytes(
    images: &[u8],
    labels: &[u8],
    class_a: u8,
    class_b: u8,
    limit: usize,
) -> Result<Dataset, DataError> {
    for c in [class_a, class_b] {
        if c > 9 {
            return Err(DataError::UnknownClass(c));
        }
    }
    if class_a == class_b {
        return Err(DataError::Invalid("the two classes must differ".into()));
    }
    let (n, pixels, raw) = parse_idx_images(images)?;
    let labs = parse_idx_labels(labels)?;
    if labs.len() != n {
        return Err(DataError::Idx(format!("{n} images but {} labels", labs.len())));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let (mut na, mut nb) = (0, 0);
    for (i, &lab) in labs.iter().enumerate() {
        let y = if lab == class_a && na < limit {
            na += 1;
            -1.0
        } else if lab == class_b && nb < limit {
            nb += 1;
            1.0
        } else {
            continue;
        };
        xs.push(raw[i * pixels..(i + 1) * pixels].iter().map(|&p| p as f64 / 255.0).collect());
        ys.push(y);
    }
    if na == 0 {
        return Err(DataError::UnknownClass(class_a));
    }
    if nb == 0 {
        return Err(DataError::UnknownClass(class_b));
    }
    Dataset::new(format!("mnist-{class_a}-vs-{class_b}"), xs, ys)
}

pub fn load_idx_binary_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    class_a: u8,
    class_b: u8,
    limit: usize,
) -> Result<Dataset, DataError> {
    let images = fs::read(images_path.as_ref()).map_err(io_err(images_path.as_ref()))?;
    let labels = fs::read(labels_path.as_ref()).map_err(io_err(labels_path.as_ref()))?;
    idx_binary_from_bytes(&images, &labels, class_a, class_b, limit)
}

/// Seeded permutation, then the last `⌈test_fraction·n⌉` examples go to the
/// test split (at least one example stays in training).
pub fn shuffle_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DataError::Invalid(format!("test fraction {test_fraction} not in [0, 1)")));
    }
    let mut idx: Vec<usize> = (0..ds.n()).collect();
    Prng::new(seed).shuffle(&mut idx);
    let n_test = ((test_fraction * ds.n() as f64).ceil() as usize).min(ds.n() - 1);
    if n_test == 0 {
        return Err(DataError::Invalid("test split would be empty".into()));
    }
    let (train, test) = idx.split_at(ds.n() - n_test);
    Ok((ds.subset(train, &format!("{}-train", ds.name)), ds.subset(test, &format!("{}-test", ds.name))))
}
