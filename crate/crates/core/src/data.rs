//! Dataset ingestion (CSV features, IDX image files), a seeded synthetic
//! generator, and the prediction-dump format shared by evaluation and
//! training.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::{validate_prediction, InputMode, LabelSpace, LabeledPrediction};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An in-memory feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub space: LabelSpace,
}

impl TabularDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, space: LabelSpace) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        for &label in &labels {
            space.check_label(label)?;
        }
        Ok(TabularDataset {
            features,
            labels,
            space,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.features.ncols()
    }

    /// Z-score every column in place; constant columns map to zeros.
    pub fn normalize(&mut self) {
        let n = self.features.nrows() as f64;
        for mut col in self.features.columns_mut() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt().max(1e-12);
            col.mapv_inplace(|v| (v - mean) / std);
        }
    }
}

/// Which CSV column carries the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Last,
}

/// Parse a headerless numeric CSV into features and labels.
pub fn load_csv_dataset(
    path: impl AsRef<Path>,
    label_column: LabelColumn,
    normalize: bool,
) -> Result<TabularDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width = None;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::parse(
                path,
                line_no + 1,
                format!("ragged row: {} fields, expected {expected}", fields.len()),
            ));
        }
        if expected < 2 {
            return Err(Error::parse(path, line_no + 1, "need at least one feature and a label"));
        }
        let label_idx = match label_column {
            LabelColumn::Index(i) if i < expected => i,
            LabelColumn::Index(i) => {
                return Err(Error::parse(
                    path,
                    line_no + 1,
                    format!("label column {i} out of range for {expected} fields"),
                ))
            }
            LabelColumn::Last => expected - 1,
        };
        let mut features = Vec::with_capacity(expected - 1);
        for (i, field) in fields.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                Error::parse(path, line_no + 1, format!("non-numeric field `{field}`"))
            })?;
            if i == label_idx {
                if !value.is_finite() || value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::parse(
                        path,
                        line_no + 1,
                        format!("label must be a non-negative integer, got `{field}`"),
                    ));
                }
                labels.push(value as usize);
            } else {
                features.push(value);
            }
        }
        rows.push(features);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((labels.len(), d), flat)
        .expect("row arity checked per line");
    let class_count = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut dataset = TabularDataset::new(features, labels, LabelSpace::new(class_count)?)?;
    if normalize {
        dataset.normalize();
    }
    Ok(dataset)
}

fn read_be_u32(path: &Path, bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::parse(path, 0, "file truncated in header"));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Load an IDX image/label file pair. Pixels are scaled to `[0, 1]` and
/// flattened row-major.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<TabularDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let magic = read_be_u32(images_path, &image_bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(
            images_path,
            0,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_be_u32(images_path, &image_bytes, 4)? as usize;
    let rows = read_be_u32(images_path, &image_bytes, 8)? as usize;
    let cols = read_be_u32(images_path, &image_bytes, 12)? as usize;
    let pixels = rows * cols;
    if image_bytes.len() != 16 + count * pixels {
        return Err(Error::parse(
            images_path,
            0,
            format!(
                "payload is {} bytes, header promises {}",
                image_bytes.len() - 16.min(image_bytes.len()),
                count * pixels
            ),
        ));
    }

    let magic = read_be_u32(labels_path, &label_bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(
            labels_path,
            0,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let label_count = read_be_u32(labels_path, &label_bytes, 4)? as usize;
    if label_count != count {
        return Err(Error::parse(
            labels_path,
            0,
            format!("{label_count} labels for {count} images"),
        ));
    }
    if label_bytes.len() != 8 + count {
        return Err(Error::parse(labels_path, 0, "label payload truncated"));
    }

    let features: Vec<f64> = image_bytes[16..]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = label_bytes[8..].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().copied().unwrap_or(0) + 1;
    TabularDataset::new(
        Array2::from_shape_vec((count, pixels), features).expect("size checked"),
        labels,
        LabelSpace::new(class_count.max(2))?,
    )
}

/// Parameters of the seeded Gaussian-blob generator.
///
/// Class centers sit on a ring of radius `spread` with a little seeded
/// jitter; each confusable pair's second center is pulled most of the way
/// toward the first, so the pair's mutual confusion dominates a weak
/// classifier's error mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub noise_std: f64,
    pub confusable: Vec<(usize, usize)>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            classes: 3,
            per_class: 200,
            dim: 2,
            spread: 4.0,
            noise_std: 1.0,
            confusable: Vec::new(),
        }
    }
}

/// Fraction of the original center distance kept between a confusable pair.
const CONFUSABLE_SEPARATION: f64 = 0.25;

/// Generate a deterministic multi-class blob dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TabularDataset> {
    if spec.classes < 2 {
        return Err(Error::DatasetSpec(format!(
            "need at least 2 classes, got {}",
            spec.classes
        )));
    }
    if spec.per_class == 0 || spec.dim == 0 {
        return Err(Error::DatasetSpec("per_class and dim must be positive".into()));
    }
    if !(spec.spread.is_finite() && spec.noise_std.is_finite() && spec.noise_std >= 0.0) {
        return Err(Error::DatasetSpec("spread and noise_std must be finite".into()));
    }
    for &(a, b) in &spec.confusable {
        if a >= spec.classes || b >= spec.classes || a == b {
            return Err(Error::DatasetSpec(format!(
                "confusable pair ({a}, {b}) out of range"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = Normal::new(0.0, 0.05 * spec.spread.abs().max(1e-9)).unwrap();
    let mut centers = vec![vec![0.0; spec.dim]; spec.classes];
    for (j, center) in centers.iter_mut().enumerate() {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / spec.classes as f64;
        center[0] = spec.spread * theta.cos();
        if spec.dim > 1 {
            center[1] = spec.spread * theta.sin();
        }
        for v in center.iter_mut() {
            *v += jitter.sample(&mut rng);
        }
    }
    for &(a, b) in &spec.confusable {
        let anchor = centers[a].clone();
        for (v, &anchor) in centers[b].iter_mut().zip(&anchor) {
            *v = anchor + CONFUSABLE_SEPARATION * (*v - anchor);
        }
    }

    let n = spec.classes * spec.per_class;
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            for &coord in center.iter() {
                let offset = if spec.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                features.push(coord + offset);
            }
            labels.push(class);
        }
    }
    TabularDataset::new(
        Array2::from_shape_vec((n, spec.dim), features).expect("constructed to size"),
        labels,
        LabelSpace::new(spec.classes)?,
    )
}

/// Metadata carried in a dump's header line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpMeta {
    pub class_count: usize,
    pub tag: String,
    pub epoch: usize,
}

/// Serialize predictions as `sample_id,true_label,p_0,...,p_{c-1}` rows
/// under a `#c=<c>,tag=<tag>,epoch=<e>` header. Probabilities are printed
/// with 17 significant digits, so reading a dump back reproduces the exact
/// bits that were written.
pub fn write_dump(
    path: impl AsRef<Path>,
    meta: &DumpMeta,
    preds: &[LabeledPrediction],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    write_dump_string(&mut out, meta, preds);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_dump_string(out: &mut String, meta: &DumpMeta, preds: &[LabeledPrediction]) {
    use std::fmt::Write as _;
    writeln!(out, "#c={},tag={},epoch={}", meta.class_count, meta.tag, meta.epoch).unwrap();
    for pred in preds {
        write!(out, "{},{}", pred.sample_id, pred.true_label).unwrap();
        for &p in pred.probs.as_slice() {
            write!(out, ",{p:.16e}").unwrap();
        }
        out.push('\n');
    }
}

/// Read a prediction dump back; every row is re-validated.
pub fn read_dump(path: impl AsRef<Path>) -> Result<(DumpMeta, Vec<LabeledPrediction>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file, expected a #c=... header"))?;
    let meta = parse_header(path, header)?;
    let space = LabelSpace::new(meta.class_count)?;

    let mut preds = Vec::new();
    for (line_no, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + meta.class_count {
            return Err(Error::parse(
                path,
                line_no + 1,
                format!(
                    "row has {} fields, expected {}",
                    fields.len(),
                    2 + meta.class_count
                ),
            ));
        }
        let parse_int = |field: &str, what: &str| {
            field.parse::<usize>().map_err(|_| {
                Error::parse(path, line_no + 1, format!("bad {what} `{field}`"))
            })
        };
        let sample_id = parse_int(fields[0], "sample id")?;
        let true_label = parse_int(fields[1], "label")?;
        let mut probs = Vec::with_capacity(meta.class_count);
        for field in &fields[2..] {
            probs.push(field.parse::<f64>().map_err(|_| {
                Error::parse(path, line_no + 1, format!("bad probability `{field}`"))
            })?);
        }
        let pred = validate_prediction(sample_id, true_label, &probs, &space, InputMode::Probs)
            .map_err(|e| Error::for_sample(sample_id, e))?;
        preds.push(pred);
    }
    Ok((meta, preds))
}

fn parse_header(path: &Path, header: &str) -> Result<DumpMeta> {
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(path, 1, "missing #c=... header"))?;
    let mut class_count = None;
    let mut tag = None;
    let mut epoch = None;
    for part in body.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(path, 1, format!("bad header field `{part}`")))?;
        match key.trim() {
            "c" => {
                class_count = Some(value.parse::<usize>().map_err(|_| {
                    Error::parse(path, 1, format!("bad class count `{value}`"))
                })?)
            }
            "tag" => tag = Some(value.to_string()),
            "epoch" => {
                epoch = Some(value.parse::<usize>().map_err(|_| {
                    Error::parse(path, 1, format!("bad epoch `{value}`"))
                })?)
            }
            other => return Err(Error::parse(path, 1, format!("unknown header key `{other}`"))),
        }
    }
    Ok(DumpMeta {
        class_count: class_count
            .ok_or_else(|| Error::parse(path, 1, "header missing c=<classes>"))?,
        tag: tag.unwrap_or_default(),
        epoch: epoch.unwrap_or(0),
    })
}
