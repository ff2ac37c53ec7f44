//! Dataset construction: planted instances, CSV ingestion, splits and
//! normalization, plus the binary cache format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::QsdpError;
use crate::model::{BilinearNetwork, InputKind};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

/// Where a dataset came from; recorded so experiment outputs can be
/// regenerated from their logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seed(u64),
    File(PathBuf),
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n x d` samples-by-features matrix.
    pub x: DMatrix<f64>,
    /// `n x C` targets (`C = 1` for scalar/binary tasks).
    pub y: DMatrix<f64>,
    pub name: String,
    pub split: SplitTag,
    pub provenance: Provenance,
    /// Max row norm, recorded by [`normalize`].
    pub max_row_norm: Option<f64>,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        name: impl Into<String>,
        split: SplitTag,
        provenance: Provenance,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(QsdpError::DimensionMismatch(format!(
                "features have {} rows, targets {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(QsdpError::InvalidInput("dataset contains NaN/Inf".into()));
        }
        Ok(Self { x, y, name: name.into(), split, provenance, max_row_norm: None })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn classes(&self) -> usize {
        self.y.ncols()
    }

    /// Scalar targets for single-output tasks.
    pub fn targets_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.y.column(0).as_slice())
    }

    /// Max Euclidean row norm of the features.
    pub fn compute_max_row_norm(&self) -> f64 {
        (0..self.n()).map(|i| self.x.row(i).norm()).fold(0.0, f64::max)
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }
}

/// Distribution of the planted second layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondLayer {
    /// `|N(0, 1)| / planted_m` — the nonnegative planted model.
    Nonnegative,
    /// `N(0, 1) / planted_m`.
    Free,
    /// All-zero second layer (targets identically zero).
    Zero,
}

/// A planted instance: Gaussian features, targets generated by a known
/// sign-weight bilinear network, noiseless.
#[derive(Debug, Clone)]
pub struct PlantedData {
    pub train: Dataset,
    pub test: Dataset,
    pub network: BilinearNetwork,
}

pub fn planted_dataset(
    n: usize,
    d: usize,
    planted_m: usize,
    seed: u64,
    second_layer: SecondLayer,
) -> Result<PlantedData> {
    if n == 0 || d == 0 || planted_m == 0 {
        return Err(QsdpError::InvalidInput("planted dimensions must be positive".into()));
    }
    let mut net_rng = stream_rng(seed, 0);
    let u = DMatrix::from_fn(planted_m, d, |_, _| sign_of(net_rng.gen::<bool>()));
    let v = DMatrix::from_fn(planted_m, d, |_, _| sign_of(net_rng.gen::<bool>()));
    let alpha = DVector::from_fn(planted_m, |_, _| {
        let g: f64 = net_rng.sample(StandardNormal);
        match second_layer {
            SecondLayer::Nonnegative => g.abs() / planted_m as f64,
            SecondLayer::Free => g / planted_m as f64,
            SecondLayer::Zero => 0.0,
        }
    });
    let network = BilinearNetwork::new(u, v, alpha, InputKind::Raw)?;

    let make = |stream: u64, split: SplitTag, tag: &str| -> Result<Dataset> {
        let mut rng = stream_rng(seed, stream);
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, 1, |i, _| {
            network.forward_raw(&x.row(i).transpose()).expect("dims agree")
        });
        Dataset::new(x, y, format!("planted-{tag}"), split, Provenance::Seed(seed))
    };
    Ok(PlantedData {
        train: make(1, SplitTag::Train, "train")?,
        test: make(2, SplitTag::Test, "test")?,
        network,
    })
}

/// Multiclass planted instance: labels are the argmax over per-class planted
/// bilinear score functions, one-hot encoded.
pub fn planted_multiclass_dataset(
    n: usize,
    d: usize,
    classes: usize,
    planted_m: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(QsdpError::InvalidInput("multiclass needs at least two classes".into()));
    }
    let mut nets = Vec::with_capacity(classes);
    for k in 0..classes {
        let mut rng = stream_rng(seed, 10 + k as u64);
        let u = DMatrix::from_fn(planted_m, d, |_, _| sign_of(rng.gen::<bool>()));
        let v = DMatrix::from_fn(planted_m, d, |_, _| sign_of(rng.gen::<bool>()));
        let alpha = DVector::from_fn(planted_m, |_, _| {
            rng.sample::<f64, _>(StandardNormal).abs() / planted_m as f64
        });
        nets.push(BilinearNetwork::new(u, v, alpha, InputKind::Raw)?);
    }
    let make = |stream: u64, split: SplitTag, tag: &str| -> Result<Dataset> {
        let mut rng = stream_rng(seed, stream);
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = DMatrix::zeros(n, classes);
        for i in 0..n {
            let xi = x.row(i).transpose();
            let scores: Vec<f64> =
                nets.iter().map(|net| net.forward_raw(&xi).expect("dims agree")).collect();
            let best = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
                .map(|(k, _)| k)
                .expect("at least one class");
            y[(i, best)] = 1.0;
        }
        Dataset::new(x, y, format!("planted-multiclass-{tag}"), split, Provenance::Seed(seed))
    };
    Ok((make(1, SplitTag::Train, "train")?, make(2, SplitTag::Test, "test")?))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sign_of(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

/// Label encoding declared by the CSV schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    /// Two label strings mapped to +1 / −1.
    Binary { positive: String, negative: String },
    /// Ordered class list mapped to one-hot rows.
    MultiClass { classes: Vec<String> },
    /// Label column parsed as a real-valued regression target.
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    pub encoding: LabelEncoding,
    #[serde(default = "default_delimiter")]
    pub delimiter: u8,
}

fn default_delimiter() -> u8 {
    b','
}

/// Parses a headered CSV file into a dataset: every non-label column is a
/// feature parsed as f64, labels encode per the schema.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == schema.label_column)
        .ok_or_else(|| {
            QsdpError::InvalidInput(format!("label column {:?} not found", schema.label_column))
        })?;
    let feature_idx: Vec<usize> =
        (0..headers.len()).filter(|&i| i != label_idx).collect();

    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (row_num, record) in reader.records().enumerate() {
        let record = record?;
        for &col in &feature_idx {
            let cell = record.get(col).unwrap_or("");
            let value: f64 = cell.trim().parse().map_err(|_| QsdpError::CsvCell {
                row: row_num + 1,
                col: headers.get(col).unwrap_or("?").to_string(),
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(QsdpError::CsvCell {
                    row: row_num + 1,
                    col: headers.get(col).unwrap_or("?").to_string(),
                    message: "non-finite value".into(),
                });
            }
            features.push(value);
        }
        labels.push(record.get(label_idx).unwrap_or("").trim().to_string());
    }
    if labels.is_empty() {
        return Err(QsdpError::InvalidInput(format!("{} has no data rows", path.display())));
    }

    let n = labels.len();
    let d = feature_idx.len();
    let x = DMatrix::from_row_slice(n, d, &features);
    let y = match &schema.encoding {
        LabelEncoding::Binary { positive, negative } => {
            let mut y = DMatrix::zeros(n, 1);
            for (i, label) in labels.iter().enumerate() {
                y[(i, 0)] = if label == positive {
                    1.0
                } else if label == negative {
                    -1.0
                } else {
                    return Err(QsdpError::UnknownLabel { row: i + 1, label: label.clone() });
                };
            }
            y
        }
        LabelEncoding::MultiClass { classes } => {
            let mut y = DMatrix::zeros(n, classes.len());
            for (i, label) in labels.iter().enumerate() {
                let k = classes.iter().position(|c| c == label).ok_or_else(|| {
                    QsdpError::UnknownLabel { row: i + 1, label: label.clone() }
                })?;
                y[(i, k)] = 1.0;
            }
            y
        }
        LabelEncoding::Regression => {
            let mut y = DMatrix::zeros(n, 1);
            for (i, label) in labels.iter().enumerate() {
                y[(i, 0)] = label.parse().map_err(|_| QsdpError::CsvCell {
                    row: i + 1,
                    col: schema.label_column.clone(),
                    message: format!("cannot parse {label:?} as a number"),
                })?;
            }
            y
        }
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::new(x, y, name, SplitTag::Train, Provenance::File(path.to_path_buf()))
}

/// Seeded permutation split with `floor(train_fraction * n)` training rows
/// (an epsilon guard keeps exact fractions like 228/286 from rounding down).
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(QsdpError::InvalidInput(format!(
            "train fraction {train_fraction} must lie in [0, 1]"
        )));
    }
    let n = dataset.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 3);
    order.shuffle(&mut rng);
    let n_train = ((train_fraction * n as f64) + 1e-9).floor() as usize;

    let take = |rows: &[usize], split_tag: SplitTag, tag: &str| -> Result<Dataset> {
        let x = DMatrix::from_fn(rows.len(), dataset.d(), |i, j| dataset.x[(rows[i], j)]);
        let y = DMatrix::from_fn(rows.len(), dataset.classes(), |i, j| dataset.y[(rows[i], j)]);
        Dataset::new(x, y, format!("{}-{tag}", dataset.name), split_tag, Provenance::Derived)
    };
    Ok((
        take(&order[..n_train], SplitTag::Train, "train")?,
        take(&order[n_train..], SplitTag::Test, "test")?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    None,
    UnitRows,
    Standardize,
}

/// Feature statistics fitted on the training split.
#[derive(Debug, Clone)]
pub struct Normalizer {
    mode: NormalizeMode,
    means: DVector<f64>,
    /// Scale factors; zero-variance features keep scale 1 (centered only).
    scales: DVector<f64>,
}

impl Normalizer {
    pub fn fit(train: &Dataset, mode: NormalizeMode) -> Self {
        let d = train.d();
        let n = train.n() as f64;
        let mut means = DVector::zeros(d);
        let mut scales = DVector::from_element(d, 1.0);
        if mode == NormalizeMode::Standardize {
            for j in 0..d {
                means[j] = train.x.column(j).sum() / n;
            }
            for j in 0..d {
                let var =
                    train.x.column(j).iter().map(|v| (v - means[j]) * (v - means[j])).sum::<f64>()
                        / n;
                if var > 1e-24 {
                    scales[j] = var.sqrt();
                }
            }
        }
        Self { mode, means, scales }
    }

    pub fn apply(&self, dataset: &Dataset) -> Dataset {
        let mut out = dataset.clone();
        match self.mode {
            NormalizeMode::None => {}
            NormalizeMode::UnitRows => {
                for i in 0..out.n() {
                    let norm = out.x.row(i).norm();
                    if norm > 0.0 {
                        out.x.row_mut(i).scale_mut(1.0 / norm);
                    }
                }
            }
            NormalizeMode::Standardize => {
                for i in 0..out.n() {
                    for j in 0..out.d() {
                        out.x[(i, j)] = (out.x[(i, j)] - self.means[j]) / self.scales[j];
                    }
                }
            }
        }
        out.max_row_norm = Some(out.compute_max_row_norm());
        out
    }
}

/// Fits the transform on the train split and applies it to both splits;
/// records the max row norm in each dataset's metadata.
pub fn normalize(train: &Dataset, test: &Dataset, mode: NormalizeMode) -> (Dataset, Dataset) {
    let normalizer = Normalizer::fit(train, mode);
    (normalizer.apply(train), normalizer.apply(test))
}

const DATA_MAGIC: &[u8; 4] = b"QDAT";
const DATA_VERSION: u16 = 1;

/// Writes the binary dataset cache: magic, version, dims, split tag, then
/// row-major f64 features and targets.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATA_MAGIC)?;
    w.write_all(&DATA_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.n() as u32).to_le_bytes())?;
    w.write_all(&(dataset.d() as u32).to_le_bytes())?;
    w.write_all(&(dataset.classes() as u32).to_le_bytes())?;
    w.write_all(&[match dataset.split {
        SplitTag::Train => 0u8,
        SplitTag::Test => 1u8,
    }])?;
    for i in 0..dataset.n() {
        for j in 0..dataset.d() {
            w.write_all(&dataset.x[(i, j)].to_le_bytes())?;
        }
    }
    for i in 0..dataset.n() {
        for j in 0..dataset.classes() {
            w.write_all(&dataset.y[(i, j)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATA_MAGIC {
        return Err(QsdpError::Format(format!("bad dataset magic {magic:?}")));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != DATA_VERSION {
        return Err(QsdpError::Format(format!("unsupported dataset version {version}")));
    }
    let n = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let d = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let c = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let split_tag = match tag[0] {
        0 => SplitTag::Train,
        1 => SplitTag::Test,
        other => return Err(QsdpError::Format(format!("unknown split tag {other}"))),
    };
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = f64::from_le_bytes(read_array(&mut r)?);
        }
    }
    let mut y = DMatrix::zeros(n, c);
    for i in 0..n {
        for j in 0..c {
            y[(i, j)] = f64::from_le_bytes(read_array(&mut r)?);
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cached".into());
    Dataset::new(x, y, name, split_tag, Provenance::File(path.to_path_buf()))
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}
