use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use valley_core::data::{blobs, BlobsConfig, Dataset, Splits};

use crate::error::{LabError, LabResult};

static DIGITS_GZ: &[u8] = include_bytes!("../data/digits.csv.gz");

pub const DIGITS_SAMPLES: usize = 1797;
const CIFAR_RECORD: usize = 1 + 3072;

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Digits,
    Blobs(BlobsConfig),
    Cifar10 { dir: PathBuf, subset: Option<usize> },
}

/// The 8×8 handwritten digits, pixel values divided by 16.
pub fn digits() -> Dataset {
    let mut text = String::new();
    GzDecoder::new(DIGITS_GZ).read_to_string(&mut text).expect("embedded digits archive");
    parse_label_last_csv(&text, 64, 10, 16.0).expect("embedded digits parse")
}

/// Rows of `width` numeric features followed by an integer label.
pub fn parse_label_last_csv(text: &str, width: usize, classes: usize, scale: f64) -> LabResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| LabError::Format(format!("line {}: {e}", line + 1)))?;
        if rec.len() != width + 1 {
            return Err(LabError::Format(format!("line {}: expected {} fields, got {}", line + 1, width + 1, rec.len())));
        }
        for f in rec.iter().take(width) {
            let v: f64 = f.trim().parse().map_err(|_| LabError::Format(format!("line {}: bad value `{f}`", line + 1)))?;
            features.push(v / scale);
        }
        let l = &rec[width];
        labels.push(l.trim().parse().map_err(|_| LabError::Format(format!("line {}: bad label `{l}`", line + 1)))?);
    }
    Ok(Dataset::new(features, vec![width], labels, classes)?)
}

/// CIFAR-10 binary batches (`data_batch_1.bin` … `data_batch_5.bin` for
/// training, `test_batch.bin` for test), optionally truncated to the first
/// `subset` training records. Pixels are scaled to `[0, 1]`.
pub fn cifar10(dir: &Path, subset: Option<usize>) -> LabResult<Splits> {
    let mut train = Vec::new();
    for i in 1..=5 {
        train.extend(read_cifar_file(&dir.join(format!("data_batch_{i}.bin")))?);
        if subset.is_some_and(|n| train.len() >= n * CIFAR_RECORD) {
            break;
        }
    }
    if let Some(n) = subset {
        train.truncate(n * CIFAR_RECORD);
    }
    let test_path = dir.join("test_batch.bin");
    let test = if test_path.exists() { read_cifar_file(&test_path)? } else { Vec::new() };
    Ok(Splits { train: cifar_records(&train)?, test: cifar_records(&test)? })
}

fn read_cifar_file(path: &Path) -> LabResult<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(|e| LabError::io(path, e))?)
        .read_to_end(&mut buf)
        .map_err(|e| LabError::io(path, e))?;
    if buf.len() % CIFAR_RECORD != 0 {
        return Err(LabError::Format(format!(
            "{}: {} bytes is not a whole number of {CIFAR_RECORD}-byte records",
            path.display(),
            buf.len()
        )));
    }
    Ok(buf)
}

fn cifar_records(bytes: &[u8]) -> LabResult<Dataset> {
    let n = bytes.len() / CIFAR_RECORD;
    let mut features = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0] as usize);
        features.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Ok(Dataset::new(features, vec![3, 32, 32], labels, 10)?)
}

/// Load a source and split it. Digits and blobs use a seeded 80/20 split.
pub fn load(source: &Source, split_seed: u64) -> LabResult<Splits> {
    match source {
        Source::Digits => Ok(digits().split(0.2, split_seed)?),
        Source::Blobs(cfg) => Ok(blobs(cfg)?.split(0.2, split_seed)?),
        Source::Cifar10 { dir, subset } => cifar10(dir, *subset),
    }
}

impl std::str::FromStr for Source {
    type Err = LabError;

    /// `digits`, `blobs`, `blobs:classes=3,samples=300,dim=16,seed=1`, `cifar10:/path[,subset=N]`.
    fn from_str(s: &str) -> LabResult<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        match name {
            "digits" if rest.is_empty() => Ok(Source::Digits),
            "blobs" => {
                let mut cfg = BlobsConfig::default();
                for kv in rest.split(',').filter(|p| !p.is_empty()) {
                    let (k, v) = kv.split_once('=').ok_or_else(|| LabError::Config(format!("bad blobs option `{kv}`")))?;
                    let bad = || LabError::Config(format!("bad value for blobs option `{k}`: `{v}`"));
                    match k {
                        "classes" => cfg.classes = v.parse().map_err(|_| bad())?,
                        "samples" => cfg.samples = v.parse().map_err(|_| bad())?,
                        "dim" => cfg.dim = v.parse().map_err(|_| bad())?,
                        "spread" => cfg.spread = v.parse().map_err(|_| bad())?,
                        "noise" => cfg.noise = v.parse().map_err(|_| bad())?,
                        "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                        _ => return Err(LabError::Config(format!("unknown blobs option `{k}`"))),
                    }
                }
                Ok(Source::Blobs(cfg))
            }
            "cifar10" if !rest.is_empty() => {
                let mut parts = rest.split(',');
                let dir = PathBuf::from(parts.next().unwrap());
                let mut subset = None;
                for kv in parts {
                    match kv.split_once('=') {
                        Some(("subset", v)) => {
                            subset = Some(v.parse().map_err(|_| LabError::Config(format!("bad subset `{v}`")))?)
                        }
                        _ => return Err(LabError::Config(format!("unknown cifar10 option `{kv}`"))),
                    }
                }
                Ok(Source::Cifar10 { dir, subset })
            }
            _ => Err(LabError::Config(format!("unknown dataset source `{s}`"))),
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Digits => f.write_str("digits"),
            Source::Blobs(c) => write!(
                f,
                "blobs:classes={},samples={},dim={},spread={},noise={},seed={}",
                c.classes, c.samples, c.dim, c.spread, c.noise, c.seed
            ),
            Source::Cifar10 { dir, subset: None } => write!(f, "cifar10:{}", dir.display()),
            Source::Cifar10 { dir, subset: Some(n) } => write!(f, "cifar10:{},subset={n}", dir.display()),
        }
    }
}
