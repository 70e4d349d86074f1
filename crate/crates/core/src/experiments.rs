//! Experiment drivers: class-pair accuracy sweep, bond-dimension sweep and
//! Gram-matrix figures, configured from a TOML file.
//!
//! Every CSV starts with `#` comment lines carrying the crate version and the
//! fully resolved configuration, so each artifact records how it was made.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encodings::GRAY_BITS;
use crate::error::{Error, Result};
use crate::image_io::{load_idx, resample_set, select_pair, GrayImage, LabeledSet, RawImage, Role};
use crate::kernels::{
    cross_gram, encode_all, entropy, gram, storage_cost, GramMatrix, KernelId, StorageCost,
};
use crate::svm::{evaluate, labels_from_classes, train, TrainParams};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Optional expected SHA-256 digests, checked by `fetch-check`.
    pub train_images_sha256: Option<String>,
    pub train_labels_sha256: Option<String>,
    pub test_images_sha256: Option<String>,
    pub test_labels_sha256: Option<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let dir = Path::new("data/fashion-mnist");
        Self {
            train_images: dir.join("train-images-idx3-ubyte.gz"),
            train_labels: dir.join("train-labels-idx1-ubyte.gz"),
            test_images: dir.join("t10k-images-idx3-ubyte.gz"),
            test_labels: dir.join("t10k-labels-idx1-ubyte.gz"),
            train_images_sha256: None,
            train_labels_sha256: None,
            test_images_sha256: None,
            test_labels_sha256: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Side of the resampled images (a power of two).
    pub side: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Class pairs of the accuracy sweep; the first class maps to `+1`.
    pub pairs: Vec<[u8; 2]>,
    /// Pair used for the bond sweep and the Gram figures.
    pub focus_pair: [u8; 2],
    /// Images per Gram figure.
    pub gram_count: usize,
    /// Shuffle seed for subset selection; `None` takes the first members.
    pub seed: Option<u64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            side: 16,
            train_size: 1000,
            test_size: 100,
            pairs: (1..=9).map(|b| [0, b]).collect(),
            focus_pair: [0, 8],
            gram_count: 100,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub list: Vec<KernelId>,
    /// Bond cap of the TNR kernel in the pair sweep and figures.
    pub tnr_chi: usize,
    /// Bond caps of the bond sweep.
    pub chi_list: Vec<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            list: KernelId::ALL.to_vec(),
            tnr_chi: 6,
            chi_list: (1..=8).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    pub tol: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        Self { c: p.c, tol: p.tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            jobs: 0,
        }
    }
}

/// Declarative description of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub protocol: ProtocolConfig,
    pub kernels: KernelConfig,
    pub svm: SvmConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            let d = &mut cfg.dataset;
            for p in [
                &mut d.train_images,
                &mut d.train_labels,
                &mut d.test_images,
                &mut d.test_labels,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        if p.side == 0 || !p.side.is_power_of_two() {
            return Err(Error::Config(format!(
                "side {} is not a power of two",
                p.side
            )));
        }
        if p.train_size == 0 || p.test_size == 0 || p.gram_count == 0 {
            return Err(Error::Config("subset sizes must be positive".into()));
        }
        for pair in p.pairs.iter().chain(std::iter::once(&p.focus_pair)) {
            if pair[0] == pair[1] {
                return Err(Error::Config(format!(
                    "pair ({}, {}) is not distinct",
                    pair[0], pair[1]
                )));
            }
            if pair[0] > 9 || pair[1] > 9 {
                return Err(Error::Config(format!(
                    "pair ({}, {}) has no such class",
                    pair[0], pair[1]
                )));
            }
        }
        let k = &self.kernels;
        if k.tnr_chi == 0 || k.chi_list.contains(&0) {
            return Err(Error::Config("bond dimensions must be at least 1".into()));
        }
        if k.list.is_empty() {
            return Err(Error::Config("kernel list is empty".into()));
        }
        if !(self.svm.c.is_finite() && self.svm.c > 0.0 && self.svm.tol > 0.0) {
            return Err(Error::Config("svm.c and svm.tol must be positive".into()));
        }
        Ok(())
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            c: self.svm.c,
            tol: self.svm.tol,
            ..TrainParams::default()
        }
    }

    /// Level count of the resampled images.
    pub fn n(&self) -> u32 {
        self.protocol.side.trailing_zeros()
    }

    /// Comment block prepended to every CSV.
    pub fn provenance_header(&self, what: &str) -> String {
        let mut s = format!("# qimr {VERSION} {what}\n");
        for line in self.to_toml().lines() {
            s.push_str("# ");
            s.push_str(line);
            s.push('\n');
        }
        s
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.output.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

/// Raw train and test sets as read from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: LabeledSet<RawImage>,
    pub test: LabeledSet<RawImage>,
}

impl Dataset {
    pub fn load(cfg: &DatasetConfig) -> Result<Self> {
        Ok(Self {
            train: load_idx(&cfg.train_images, &cfg.train_labels, Role::Train)?,
            test: load_idx(&cfg.test_images, &cfg.test_labels, Role::Test)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileCheck {
    pub path: PathBuf,
    pub sha256: String,
    pub expected: Option<String>,
    pub records: usize,
}

impl FileCheck {
    pub fn matches(&self) -> bool {
        self.expected
            .as_ref()
            .is_none_or(|e| e.eq_ignore_ascii_case(&self.sha256))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Hashes the four dataset files and parses them; digests are compared with
/// the expectations in the config when present.
pub fn check_dataset(cfg: &DatasetConfig) -> Result<Vec<FileCheck>> {
    let ds = Dataset::load(cfg)?;
    let entries = [
        (&cfg.train_images, &cfg.train_images_sha256, ds.train.len()),
        (&cfg.train_labels, &cfg.train_labels_sha256, ds.train.len()),
        (&cfg.test_images, &cfg.test_images_sha256, ds.test.len()),
        (&cfg.test_labels, &cfg.test_labels_sha256, ds.test.len()),
    ];
    entries
        .into_iter()
        .map(|(path, expected, records)| {
            Ok(FileCheck {
                path: path.clone(),
                sha256: sha256_file(path)?,
                expected: expected.clone(),
                records,
            })
        })
        .collect()
}

/// Resampled train/test subsets of one class pair with `+1/-1` labels.
#[derive(Debug, Clone)]
pub struct PairData {
    pub classes: [u8; 2],
    pub train: LabeledSet<GrayImage>,
    pub test: LabeledSet<GrayImage>,
    pub y_train: Vec<i8>,
    pub y_test: Vec<i8>,
}

pub fn prepare_pair(
    ds: &Dataset,
    protocol: &ProtocolConfig,
    classes: [u8; 2],
    train_size: usize,
    test_size: usize,
) -> Result<PairData> {
    let [a, b] = classes;
    let train = resample_set(
        &select_pair(&ds.train, a, b, train_size, protocol.seed)?,
        protocol.side,
    )?;
    let test = resample_set(
        &select_pair(&ds.test, a, b, test_size, protocol.seed)?,
        protocol.side,
    )?;
    let y_train = labels_from_classes(&train.labels, a, b)?;
    let y_test = labels_from_classes(&test.labels, a, b)?;
    Ok(PairData {
        classes,
        train,
        test,
        y_train,
        y_test,
    })
}

/// Outcome of training and testing one kernel on one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellOutcome {
    pub correct: usize,
    pub total: usize,
    pub support_vectors: usize,
    pub updates: usize,
}

impl CellOutcome {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Encode, build the train Gram and test rows, train, evaluate.
pub fn run_cell(
    data: &PairData,
    kernel: KernelId,
    chi: usize,
    params: &TrainParams,
) -> Result<CellOutcome> {
    let train_enc = encode_all(&data.train.images, kernel, chi)?;
    let test_enc = encode_all(&data.test.images, kernel, chi)?;
    let g = gram(&train_enc)?;
    let rows = cross_gram(&train_enc, &test_enc)?;
    let model = train(&g, &data.y_train, params)?;
    let eval = evaluate(&model, &rows, &data.y_test)?;
    Ok(CellOutcome {
        correct: eval.correct,
        total: eval.total,
        support_vectors: model.support_indices.len(),
        updates: model.updates,
    })
}

/// One sweep cell; failures are kept with their message.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRow {
    pub kernel: KernelId,
    pub classes: [u8; 2],
    pub chi: Option<usize>,
    pub outcome: std::result::Result<CellOutcome, String>,
}

impl CellRow {
    pub fn accuracy(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(CellOutcome::accuracy)
    }
}

/// Mean and standard error over the successful pairs of one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSummary {
    pub kernel: KernelId,
    pub chi: Option<usize>,
    pub pairs_ok: usize,
    pub pairs_failed: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(#pairs)`; `None` below 2 pairs.
    pub sem: Option<f64>,
    pub storage: StorageCost,
}

/// `(mean, sem)` with the `N - 1` sample deviation.
pub fn mean_sem(values: &[f64]) -> (f64, Option<f64>) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, Some(var.sqrt() / (k as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<CellRow>,
    pub summaries: Vec<KernelSummary>,
}

impl ExperimentReport {
    pub fn failed_cells(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn summary(&self, kernel: KernelId) -> Option<&KernelSummary> {
        self.summaries.iter().find(|s| s.kernel == kernel)
    }

    pub fn rows_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut out = cfg.provenance_header("pair sweep");
        out.push_str("kernel,class_a,class_b,chi,train_size,test_size,correct,total,accuracy,support_vectors,status\n");
        for r in &self.rows {
            let chi = r.chi.map(|c| c.to_string()).unwrap_or_default();
            match &r.outcome {
                Ok(o) => out.push_str(&format!(
                    "{},{},{},{chi},{},{},{},{},{},{},ok\n",
                    r.kernel,
                    r.classes[0],
                    r.classes[1],
                    cfg.protocol.train_size,
                    cfg.protocol.test_size,
                    o.correct,
                    o.total,
                    o.accuracy(),
                    o.support_vectors
                )),
                Err(e) => out.push_str(&format!(
                    "{},{},{},{chi},{},{},,,,,error: {}\n",
                    r.kernel,
                    r.classes[0],
                    r.classes[1],
                    cfg.protocol.train_size,
                    cfg.protocol.test_size,
                    csv_safe(e)
                )),
            }
        }
        out
    }

    pub fn summary_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut out = cfg.provenance_header("pair sweep summary");
        out.push_str("kernel,chi,pairs_ok,pairs_failed,mean_accuracy,sem,storage,storage_unit\n");
        for s in &self.summaries {
            let (amount, unit) = storage_fields(s.storage);
            out.push_str(&format!(
                "{},{},{},{},{},{},{amount},{unit}\n",
                s.kernel,
                s.chi.map(|c| c.to_string()).unwrap_or_default(),
                s.pairs_ok,
                s.pairs_failed,
                s.mean,
                s.sem.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        out
    }
}

fn storage_fields(s: StorageCost) -> (u64, &'static str) {
    match s.unit {
        crate::kernels::StorageUnit::Qubits => (s.amount, "qubits"),
        crate::kernels::StorageUnit::Bits => (s.amount, "bits"),
    }
}

fn csv_safe(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

/// Every configured kernel on every configured pair, then mean and SEM per
/// kernel. Cell failures are recorded and excluded from the aggregates.
pub fn run_pair_sweep(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ExperimentReport> {
    cfg.validate()?;
    let params = cfg.train_params();
    let pool = cfg.pool()?;
    pool.install(|| {
        let pairs: Vec<std::result::Result<PairData, String>> = cfg
            .protocol
            .pairs
            .par_iter()
            .map(|&p| {
                prepare_pair(
                    ds,
                    &cfg.protocol,
                    p,
                    cfg.protocol.train_size,
                    cfg.protocol.test_size,
                )
                .map_err(|e| e.to_string())
            })
            .collect();
        let cells: Vec<(KernelId, usize)> = cfg
            .kernels
            .list
            .iter()
            .flat_map(|&k| (0..pairs.len()).map(move |p| (k, p)))
            .collect();
        let rows: Vec<CellRow> = cells
            .par_iter()
            .map(|&(kernel, p)| {
                let chi = (kernel == KernelId::Tnr).then_some(cfg.kernels.tnr_chi);
                let outcome = match &pairs[p] {
                    Ok(data) => run_cell(data, kernel, cfg.kernels.tnr_chi, &params)
                        .map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                CellRow {
                    kernel,
                    classes: cfg.protocol.pairs[p],
                    chi,
                    outcome,
                }
            })
            .collect();
        let summaries = cfg
            .kernels
            .list
            .iter()
            .map(|&kernel| {
                let accs: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.kernel == kernel)
                    .filter_map(CellRow::accuracy)
                    .collect();
                let failed = rows
                    .iter()
                    .filter(|r| r.kernel == kernel && r.outcome.is_err())
                    .count();
                let (mean, sem) = mean_sem(&accs);
                KernelSummary {
                    kernel,
                    chi: (kernel == KernelId::Tnr).then_some(cfg.kernels.tnr_chi),
                    pairs_ok: accs.len(),
                    pairs_failed: failed,
                    mean,
                    sem,
                    storage: storage_cost(kernel, cfg.n(), GRAY_BITS),
                }
            })
            .collect();
        Ok(ExperimentReport { rows, summaries })
    })
}

/// Accuracy of the TNR kernel on the focus pair for every bond cap.
#[derive(Debug, Clone, PartialEq)]
pub struct BondReport {
    pub classes: [u8; 2],
    pub rows: Vec<(usize, std::result::Result<CellOutcome, String>)>,
}

impl BondReport {
    pub fn accuracy(&self, chi: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|(c, _)| *c == chi)
            .and_then(|(_, o)| o.as_ref().ok().map(CellOutcome::accuracy))
    }

    pub fn failed_cells(&self) -> usize {
        self.rows.iter().filter(|(_, o)| o.is_err()).count()
    }

    pub fn to_csv(&self, cfg: &ExperimentConfig) -> String {
        let mut out = cfg.provenance_header(&format!(
            "bond sweep, classes ({}, {})",
            self.classes[0], self.classes[1]
        ));
        out.push_str("chi,accuracy,status\n");
        for (chi, o) in &self.rows {
            match o {
                Ok(o) => out.push_str(&format!("{chi},{},ok\n", o.accuracy())),
                Err(e) => out.push_str(&format!("{chi},,error: {}\n", csv_safe(e))),
            }
        }
        out
    }
}

pub fn run_bond_sweep(cfg: &ExperimentConfig, ds: &Dataset) -> Result<BondReport> {
    cfg.validate()?;
    if cfg.kernels.chi_list.is_empty() {
        return Err(Error::Config("chi list is empty".into()));
    }
    let params = cfg.train_params();
    let pool = cfg.pool()?;
    pool.install(|| {
        let p = &cfg.protocol;
        let data = prepare_pair(ds, p, p.focus_pair, p.train_size, p.test_size)?;
        let rows = cfg
            .kernels
            .chi_list
            .par_iter()
            .map(|&chi| {
                (
                    chi,
                    run_cell(&data, KernelId::Tnr, chi, &params).map_err(|e| e.to_string()),
                )
            })
            .collect();
        Ok(BondReport {
            classes: p.focus_pair,
            rows,
        })
    })
}

/// Shape statistics of one Gram figure.
#[derive(Debug, Clone, PartialEq)]
pub struct GramStats {
    pub kernel: KernelId,
    pub size: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min_eigenvalue: f64,
    /// Rényi entropies of orders 1 and 2 of the squared-overlap Gram.
    pub s1: f64,
    pub s2: f64,
    /// The same for the unsquared-overlap Gram (quantum kernels only).
    pub s1_unsquared: Option<f64>,
    pub s2_unsquared: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GramFigure {
    pub gram: GramMatrix,
    pub stats: GramStats,
}

/// Gram matrices of the first `gram_count` training images of the focus
/// pair, one per configured kernel.
pub fn gram_figures(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<GramFigure>> {
    cfg.validate()?;
    let pool = cfg.pool()?;
    pool.install(|| {
        let p = &cfg.protocol;
        let subset = select_pair(
            &ds.train,
            p.focus_pair[0],
            p.focus_pair[1],
            p.gram_count,
            p.seed,
        )?;
        let images = resample_set(&subset, p.side)?.images;
        cfg.kernels
            .list
            .iter()
            .map(|&kernel| gram_figure(&images, kernel, cfg.kernels.tnr_chi))
            .collect()
    })
}

pub fn gram_figure(images: &[GrayImage], kernel: KernelId, chi: usize) -> Result<GramFigure> {
    let g = gram(&encode_all(images, kernel, chi)?)?;
    let (q1, median, q3) = g
        .off_diagonal_quartiles()
        .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    let ent = entropy(&g, &[1.0, 2.0])?;
    let (s1_unsquared, s2_unsquared) = if kernel.is_quantum() {
        let e = entropy(&g.unsquared()?, &[1.0, 2.0])?;
        (Some(e.values[0]), Some(e.values[1]))
    } else {
        (None, None)
    };
    let stats = GramStats {
        kernel,
        size: g.size(),
        q1,
        median,
        q3,
        min_eigenvalue: g.min_eigenvalue(),
        s1: ent.values[0],
        s2: ent.values[1],
        s1_unsquared,
        s2_unsquared,
    };
    Ok(GramFigure { gram: g, stats })
}

pub fn gram_summary_csv(cfg: &ExperimentConfig, figures: &[GramFigure]) -> String {
    let mut out = cfg.provenance_header("gram figures");
    out.push_str("kernel,n_images,offdiag_q1,offdiag_median,offdiag_q3,min_eigenvalue,s1,s2,s1_unsquared,s2_unsquared\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for f in figures {
        let s = &f.stats;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.kernel,
            s.size,
            s.q1,
            s.median,
            s.q3,
            s.min_eigenvalue,
            s.s1,
            s.s2,
            opt(s.s1_unsquared),
            opt(s.s2_unsquared)
        ));
    }
    out
}

/// Writes `gram_<kernel>.csv`, `gram_<kernel>.pgm` and `gram_summary.csv`
/// into `dir`, returning the paths written.
pub fn write_gram_figures(
    cfg: &ExperimentConfig,
    figures: &[GramFigure],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let header = vec![format!(
        "qimr {VERSION} gram figure, classes ({}, {})",
        cfg.protocol.focus_pair[0], cfg.protocol.focus_pair[1]
    )];
    for f in figures {
        let csv = dir.join(format!("gram_{}.csv", f.stats.kernel));
        fs::write(&csv, f.gram.to_csv(&header))?;
        let pgm = dir.join(format!("gram_{}.pgm", f.stats.kernel));
        fs::write(&pgm, f.gram.to_pgm())?;
        written.push(csv);
        written.push(pgm);
    }
    let summary = dir.join("gram_summary.csv");
    fs::write(&summary, gram_summary_csv(cfg, figures))?;
    written.push(summary);
    Ok(written)
}
