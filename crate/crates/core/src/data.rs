//! Datasets on disk, train/validation/test splits and a synthetic generator
//! with per-dimension homophily.
//!
//! Directory layout:
//!
//! * `edges.tsv`: `src<TAB>dst` per line, 0-indexed, `#` comments;
//! * `features.tsv`: one row per node, tab-separated decimals;
//! * `labels.tsv`: one class index per line, optionally preceded by a
//!   `# classes: C` header;
//! * `splits.json` (optional): `{"train":[..],"val":[..],"test":[..]}` or an
//!   array of such objects;
//! * `synth.json` (optional): the generator spec of a synthetic dataset.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;
use crate::tensor::Matrix;

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SPLITS_FILE: &str = "splits.json";
pub const SYNTH_FILE: &str = "synth.json";

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.48, 0.32, 0.20);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if part.is_empty() {
                return Err(Error::Data(format!("{name} split is empty")));
            }
            for &i in part {
                if i >= n {
                    return Err(Error::Data(format!("{name} split index {i} >= {n}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Data(format!("node {i} appears in more than one split")));
                }
            }
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n`, then contiguous slices. Cut points are
/// `floor(r_train·n)` and `floor((r_train + r_val)·n)`; the remainder is test.
pub fn random_split(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(*r > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    // Guards against products like 0.8 * 100 landing just below an integer.
    let cut = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let (t, v) = (cut(a), cut(a + b));
    if t == 0 || v == t || v >= n {
        return Err(Error::Config(format!(
            "{n} nodes are too few for non-empty {ratios:?} splits"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    Ok(Split {
        train: order[..t].to_vec(),
        val: order[t..v].to_vec(),
        test: order[v..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub features: Arc<Matrix>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Splits shipped with the dataset, if any.
    pub splits: Vec<Split>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowNormalize {
    /// On unless the directory holds a synthetic dataset.
    #[default]
    Auto,
    On,
    Off,
}

impl std::str::FromStr for RowNormalize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "on" => Ok(Self::On),
            "off" => Ok(Self::Off),
            _ => Err(Error::Config(format!("row normalization must be auto|on|off, got {s:?}"))),
        }
    }
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graph: Graph,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = graph.n();
        if features.rows() != n || labels.len() != n {
            return Err(Error::Data(format!(
                "graph has {n} nodes but {} feature rows and {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let mut present = vec![false; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::Data(format!("label {y} >= {num_classes} classes")));
            }
            present[y] = true;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(Error::Data(format!("class {c} has no nodes")));
        }
        Ok(Self {
            name: name.into(),
            graph,
            features: Arc::new(features),
            labels,
            num_classes,
            splits: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Same dataset on a different graph (e.g. after noise injection).
    pub fn with_graph(&self, graph: Graph) -> Self {
        assert_eq!(graph.n(), self.n());
        Self {
            graph,
            ..self.clone()
        }
    }

    pub fn row_normalized(&self) -> Self {
        let mut f = (*self.features).clone();
        for r in 0..f.rows() {
            let row = f.row_mut(r);
            let norm: f64 = row.iter().map(|x| x.abs()).sum();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Self {
            features: Arc::new(f),
            ..self.clone()
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_labels(path: &Path, text: &str) -> Result<(Vec<usize>, usize)> {
    let declared = text.lines().find_map(|l| {
        l.trim()
            .strip_prefix('#')
            .and_then(|rest| rest.trim().strip_prefix("classes:"))
            .map(|v| (v.trim().to_string(), l))
    });
    let declared = match declared {
        Some((v, _)) => Some(v.parse::<usize>().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("invalid class count {v:?}"),
        })?),
        None => None,
    };
    let mut labels = Vec::new();
    for (line, l) in content_lines(text) {
        let y: i64 = l.parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            line,
            msg: format!("invalid label {l:?}"),
        })?;
        let classes = declared.unwrap_or(usize::MAX);
        if y < 0 || y as u64 >= classes as u64 {
            return Err(Error::LabelOutOfRange {
                path: path.to_path_buf(),
                line,
                label: y,
                classes: declared.unwrap_or(0),
            });
        }
        labels.push(y as usize);
    }
    let classes = declared.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Ok((labels, classes))
}

fn parse_features(path: &Path, text: &str, n: usize) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, l) in content_lines(text) {
        let before = data.len();
        for tok in l.split('\t') {
            let v = tok
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("invalid feature value {tok:?}"),
                })?;
            data.push(v);
        }
        let found = data.len() - before;
        match cols {
            None => cols = Some(found),
            Some(expected) if expected != found => {
                return Err(Error::RaggedFeatures {
                    path: path.to_path_buf(),
                    line,
                    expected,
                    found,
                })
            }
            _ => {}
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Data(format!(
            "{} has {rows} rows but {} lists {n} labels",
            path.display(),
            LABELS_FILE
        )));
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SplitsFile {
    One(Split),
    Many(Vec<Split>),
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path, normalize: RowNormalize) -> Result<Dataset> {
    let labels_path = dir.join(LABELS_FILE);
    let (labels, classes) = parse_labels(&labels_path, &read(&labels_path)?)?;
    let n = labels.len();
    let features_path = dir.join(FEATURES_FILE);
    let features = parse_features(&features_path, &read(&features_path)?, n)?;
    let graph = Graph::read_edge_file(&dir.join(EDGES_FILE), n)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut ds = Dataset::new(name, graph, features, labels, classes)?;

    let splits_path = dir.join(SPLITS_FILE);
    if splits_path.exists() {
        let parsed: SplitsFile = serde_json::from_str(&read(&splits_path)?).map_err(|e| {
            Error::Format {
                path: splits_path.clone(),
                line: e.line(),
                msg: e.to_string(),
            }
        })?;
        ds.splits = match parsed {
            SplitsFile::One(s) => vec![s],
            SplitsFile::Many(v) => v,
        };
        for s in &ds.splits {
            s.validate(n)?;
        }
    }

    let synthetic = dir.join(SYNTH_FILE).exists();
    let normalize = match normalize {
        RowNormalize::On => true,
        RowNormalize::Off => false,
        RowNormalize::Auto => !synthetic,
    };
    Ok(if normalize { ds.row_normalized() } else { ds })
}

/// Writes `ds` in the directory layout read by [`load_dataset`].
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ds.graph.write_edge_file(&dir.join(EDGES_FILE))?;

    let mut feats = String::new();
    for r in 0..ds.features.rows() {
        let row: Vec<String> = ds.features.row(r).iter().map(|x| x.to_string()).collect();
        feats.push_str(&row.join("\t"));
        feats.push('\n');
    }
    let path = dir.join(FEATURES_FILE);
    fs::write(&path, feats).map_err(|e| Error::io(&path, e))?;

    let mut labels = format!("# classes: {}\n", ds.num_classes);
    for y in &ds.labels {
        labels.push_str(&format!("{y}\n"));
    }
    let path = dir.join(LABELS_FILE);
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;

    if !ds.splits.is_empty() {
        let path = dir.join(SPLITS_FILE);
        let json = if ds.splits.len() == 1 {
            serde_json::to_string(&ds.splits[0])
        } else {
            serde_json::to_string(&ds.splits)
        }
        .expect("splits serialize");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// SHA-256 over git-style blob encodings (`blob <len>\0<bytes>`) of the
/// dataset files, combined as a tree-like listing of `name digest` lines.
pub fn content_hash(dir: &Path) -> Result<String> {
    let mut listing = String::new();
    for name in [EDGES_FILE, FEATURES_FILE, LABELS_FILE, SPLITS_FILE, SYNTH_FILE] {
        let path: PathBuf = dir.join(name);
        if !path.exists() {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", bytes.len()).as_bytes());
        h.update(&bytes);
        listing.push_str(&format!("{name} {}\n", hex(&h.finalize())));
    }
    Ok(hex(&Sha256::digest(listing.as_bytes())))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stochastic-block-model graph with class-dependent features on a chosen
/// subset of dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub classes: usize,
    pub dims: usize,
    /// Dimensions carrying label signal; the rest are pure noise.
    pub homophilous_dims: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    /// Mean shift `μ` on the signal dimensions.
    pub signal: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.n < self.classes {
            return Err(Error::Config(format!(
                "need at least one node per class ({} nodes, {} classes)",
                self.n, self.classes
            )));
        }
        if let Some(&d) = self.homophilous_dims.iter().find(|&&d| d >= self.dims) {
            return Err(Error::Config(format!("homophilous dim {d} >= {}", self.dims)));
        }
        let mut sorted = self.homophilous_dims.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.homophilous_dims.len() {
            return Err(Error::Config("homophilous dims must be distinct".into()));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if !self.signal.is_finite() {
            return Err(Error::Config("signal strength must be finite".into()));
        }
        Ok(())
    }
}

/// Labels are a shuffled balanced assignment (each class gets `⌊n/C⌋` or
/// `⌈n/C⌉` nodes). Each pair `i < j` is linked with probability `p_in` when
/// labels match and `p_out` otherwise. The `t`-th homophilous dimension has
/// mean `μ` for nodes of class `t mod C` and 0 otherwise; every entry gets
/// unit Gaussian noise.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, c, d) = (spec.n, spec.classes, spec.dims);
    let mut rng = rng::seeded(spec.seed);

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;

    let mut signal_class = vec![None; d];
    for (t, &dim) in spec.homophilous_dims.iter().enumerate() {
        signal_class[dim] = Some(t % c);
    }
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        for class in &signal_class {
            let noise: f64 = rng.sample(StandardNormal);
            let mean = if *class == Some(y) { spec.signal } else { 0.0 };
            data.push(mean + noise);
        }
    }
    let features = Matrix::from_vec(n, d, data)?;
    Dataset::new("synthetic", graph, features, labels, c)
}

/// Writes a generated dataset together with its spec.
pub fn write_synthetic(spec: &SynthSpec, ds: &Dataset, dir: &Path) -> Result<()> {
    write_dataset(ds, dir)?;
    let path = dir.join(SYNTH_FILE);
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}
