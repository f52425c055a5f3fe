//! Synthetic classification datasets and the prediction-record interop format.
//!
//! The generators stand in for image benchmarks at desk scale: features live
//! in `[0,1]^d` like normalized pixels, so ℓ∞ budgets such as 8/255 keep
//! their usual meaning. `blobs` produces Gaussian clusters whose centers are
//! `separation` apart (linearly separable for large separation); `rings`
//! produces concentric annuli in the first two dimensions (not linearly
//! separable). Both are pure functions of their arguments.
//!
//! Prediction records carry one sample's primal and auxiliary confidence
//! vectors plus the ground truth and adversarial flag; they are the unit of
//! interop with external models (one JSON object per line, optional `{"k": n}`
//! header line).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ConfidenceVector;
use crate::rng;

/// One labeled sample with features in `[0,1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub k: usize,
    pub d: usize,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Rings,
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetKind::Blobs => write!(f, "blobs"),
            DatasetKind::Rings => write!(f, "rings"),
        }
    }
}

/// Generate a synthetic dataset. Identical arguments give bit-identical
/// output; all coordinates are affinely rescaled into `[0,1]`.
pub fn gen_synthetic(
    kind: DatasetKind,
    k: usize,
    d: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be >= 2, got {k}")));
    }
    if d < 2 {
        return Err(Error::InvalidParameter(format!("d must be >= 2, got {d}")));
    }
    if n_per_class < 1 {
        return Err(Error::InvalidParameter("n_per_class must be >= 1".into()));
    }
    if !(separation > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "separation must be > 0, got {separation}"
        )));
    }

    let mut gen_rng = rng::stream(seed, "data/gen");
    let mut examples = Vec::with_capacity(k * n_per_class);
    match kind {
        DatasetKind::Blobs => {
            // Centers on a circle in the first two dims, adjacent centers
            // `separation` apart; unit Gaussian noise in every dim.
            let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
            for class in 0..k {
                let angle = 2.0 * std::f64::consts::PI * class as f64 / k as f64;
                let (cy, cx) = angle.sin_cos();
                for _ in 0..n_per_class {
                    let mut x: Vec<f64> =
                        (0..d).map(|_| gen_rng.sample::<f64, _>(StandardNormal)).collect();
                    x[0] += radius * cx;
                    x[1] += radius * cy;
                    examples.push(Example { x, y: class });
                }
            }
        }
        DatasetKind::Rings => {
            // Concentric annuli of width separation/2 in the first two dims;
            // the remaining dims are uninformative uniform noise.
            for class in 0..k {
                let ring_radius = (class as f64 + 0.5) * separation;
                for _ in 0..n_per_class {
                    let r = ring_radius + gen_rng.gen_range(-separation / 4.0..=separation / 4.0);
                    let theta = gen_rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                    let mut x = vec![0.0; d];
                    x[0] = r * theta.cos();
                    x[1] = r * theta.sin();
                    for coord in x.iter_mut().skip(2) {
                        *coord = gen_rng.gen_range(0.0..1.0);
                    }
                    examples.push(Example { x, y: class });
                }
            }
        }
    }

    rescale_to_unit_box(&mut examples, d);
    Ok(Dataset {
        name: format!("{kind}-k{k}-d{d}-n{n_per_class}-sep{separation}-seed{seed}"),
        k,
        d,
        examples,
    })
}

// Per-coordinate min-max rescale into [0,1]; a constant coordinate maps to 0.5.
fn rescale_to_unit_box(examples: &mut [Example], d: usize) {
    for coord in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ex in examples.iter() {
            lo = lo.min(ex.x[coord]);
            hi = hi.max(ex.x[coord]);
        }
        let range = hi - lo;
        for ex in examples.iter_mut() {
            ex.x[coord] = if range > 0.0 {
                ((ex.x[coord] - lo) / range).clamp(0.0, 1.0)
            } else {
                0.5
            };
        }
    }
}

/// Split a dataset into disjoint (train, calibrate, test) partitions with a
/// seeded shuffle. Sizes follow largest-remainder apportionment so they sum
/// exactly to the input size.
pub fn split(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let fracs = [fractions.0, fractions.1, fractions.2];
    if fracs.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::InvalidParameter(
            "split fractions must all be positive".into(),
        ));
    }
    let total: f64 = fracs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }

    let n = ds.examples.len();
    let sizes = largest_remainder_sizes(n, &fracs);

    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(seed, "data/split"));
    }

    let mut parts = Vec::with_capacity(3);
    let mut cursor = 0;
    for (i, &size) in sizes.iter().enumerate() {
        let examples: Vec<Example> = order[cursor..cursor + size]
            .iter()
            .map(|&idx| ds.examples[idx].clone())
            .collect();
        cursor += size;
        parts.push(Dataset {
            name: format!("{}-{}", ds.name, ["train", "calibrate", "test"][i]),
            k: ds.k,
            d: ds.d,
            examples,
        });
    }
    let test = parts.pop().expect("three parts");
    let calibrate = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok((train, calibrate, test))
}

fn largest_remainder_sizes(n: usize, fracs: &[f64]) -> Vec<usize> {
    let mut sizes: Vec<usize> = fracs.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut remainders: Vec<(usize, f64)> = fracs
        .iter()
        .enumerate()
        .map(|(i, f)| (i, f * n as f64 - (f * n as f64).floor()))
        .collect();
    // Largest remainder first; ties go to the lower index.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.iter().take(n - assigned) {
        sizes[*i] += 1;
    }
    sizes
}

/// One scored sample: ground truth, primal and auxiliary confidence vectors,
/// and whether the sample is adversarial. The interop unit between this
/// toolkit and external models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub y_true: usize,
    pub f_scores: ConfidenceVector,
    pub g_scores: ConfidenceVector,
    pub is_adversarial: bool,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    k: usize,
}

/// Load prediction records from a line-delimited file, validating simplex
/// invariants and a consistent class count across the file.
pub fn load_prediction_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut expected_k: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // Optional file-level header: {"k": n} on the first non-empty line.
        if records.is_empty() && expected_k.is_none() {
            if let Ok(header) = serde_json::from_str::<RecordHeader>(&line) {
                expected_k = Some(header.k);
                continue;
            }
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| map_record_error(e, &line, line_no))?;
        validate_record(&record, &mut expected_k, line_no)?;
        records.push(record);
    }
    Ok(records)
}

// serde_json reports a simplex/validation failure raised inside
// ConfidenceVector::new as a custom data error; separate it from syntax
// errors so callers see a validation error, not a parse error.
fn map_record_error(e: serde_json::Error, line: &str, line_no: usize) -> Error {
    if e.is_data() && serde_json::from_str::<serde_json::Value>(line).is_ok() {
        Error::Validation(format!("line {line_no}: {e}"))
    } else {
        Error::Parse {
            line: line_no,
            message: e.to_string(),
        }
    }
}

fn validate_record(
    record: &PredictionRecord,
    expected_k: &mut Option<usize>,
    line_no: usize,
) -> Result<()> {
    if record.f_scores.k() != record.g_scores.k() {
        return Err(Error::Validation(format!(
            "line {line_no}: f_scores has {} classes but g_scores has {}",
            record.f_scores.k(),
            record.g_scores.k()
        )));
    }
    match expected_k {
        Some(k) if *k != record.f_scores.k() => Err(Error::Validation(format!(
            "line {line_no}: record has {} classes, file uses {}",
            record.f_scores.k(),
            k
        ))),
        Some(_) => check_label(record, line_no),
        None => {
            *expected_k = Some(record.f_scores.k());
            check_label(record, line_no)
        }
    }
}

fn check_label(record: &PredictionRecord, line_no: usize) -> Result<()> {
    if record.y_true >= record.f_scores.k() {
        return Err(Error::Validation(format!(
            "line {line_no}: y_true {} out of range for {} classes",
            record.y_true,
            record.f_scores.k()
        )));
    }
    Ok(())
}

/// Write prediction records as line-delimited JSON with a `{"k": n}` header.
/// `load_prediction_records` reproduces the input exactly, and re-writing the
/// loaded records reproduces the file byte for byte.
pub fn write_prediction_records(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidParameter(
            "refusing to write an empty record file".into(),
        ));
    }
    let k = records[0].f_scores.k();
    if records.iter().any(|r| r.f_scores.k() != k || r.g_scores.k() != k) {
        return Err(Error::InvalidParameter(
            "records have inconsistent class counts".into(),
        ));
    }
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut writer, &RecordHeader { k })
        .map_err(|e| Error::Numeric(format!("record serialization failed: {e}")))?;
    writer.write_all(b"\n")?;
    for record in records {
        serde_json::to_writer(&mut writer, record)
            .map_err(|e| Error::Numeric(format!("record serialization failed: {e}")))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
