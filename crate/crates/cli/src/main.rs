use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qimr_core::encodings::{encode_frqi, encode_neqr, encode_qpie, encode_realket, GRAY_BITS};
use qimr_core::experiments::{
    check_dataset, gram_figures, prepare_pair, run_bond_sweep, run_pair_sweep, write_gram_figures,
    Dataset, ExperimentConfig, VERSION,
};
use qimr_core::image_io::{area_resample, read_pgm, GrayImage};
use qimr_core::kernels::{cross_gram, encode_all, gram, KernelId};
use qimr_core::mps::{decompose, write_mps};
use qimr_core::svm::{evaluate, train};

#[derive(Parser, Debug)]
#[command(
    name = "qimr",
    version,
    about = "Quantum image representation kernels and experiments"
)]
struct Cli {
    /// TOML experiment config; defaults apply to anything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads, 0 for all cores (overrides `output.jobs`).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Shuffle seed for subset selection (overrides `protocol.seed`).
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hash the dataset files, count their records and compare with the
    /// configured digests.
    FetchCheck,
    /// Dump the encoding of PGM images as JSON lines (or QMPS files for `mps`).
    Encode(EncodeArgs),
    /// Gram matrix of the first training images of a class pair.
    Gram(GramArgs),
    /// Train and test one kernel on one class pair; writes the model JSON.
    Train(TrainArgs),
    /// Every configured kernel on every configured pair.
    SweepPairs,
    /// TNR accuracy on the focus pair for every configured bond cap.
    SweepBond,
    /// Gram heatmaps and their summary for the focus pair.
    Figures,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Repr {
    Frqi,
    Neqr,
    Qpie,
    Realket,
    Mps,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long, value_enum)]
    repr: Repr,
    /// Bond cap, used by `mps`.
    #[arg(long, default_value_t = 6)]
    chi: usize,
    /// Input PGM files. Sides that are not a power of two are area-resampled
    /// to the configured side.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct GramArgs {
    #[arg(long, value_parser = parse_kernel)]
    kernel: KernelId,
    /// Bond cap of the TNR kernel; defaults to `kernels.tnr_chi`.
    #[arg(long)]
    chi: Option<usize>,
    /// Class pair `A,B`; defaults to `protocol.focus_pair`.
    #[arg(long, value_parser = parse_classes)]
    classes: Option<[u8; 2]>,
    /// Image count; defaults to `protocol.gram_count`.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_kernel)]
    kernel: KernelId,
    #[arg(long)]
    chi: Option<usize>,
    #[arg(long, value_parser = parse_classes)]
    classes: Option<[u8; 2]>,
}

fn parse_kernel(s: &str) -> Result<KernelId, String> {
    s.parse().map_err(|e: qimr_core::Error| e.to_string())
}

fn parse_classes(s: &str) -> Result<[u8; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => {
            let a: u8 = a.parse().map_err(|_| format!("bad class {a:?}"))?;
            let b: u8 = b.parse().map_err(|_| format!("bad class {b:?}"))?;
            Ok([a, b])
        }
        _ => Err(format!("expected A,B, got {s:?}")),
    }
}

/// Failure classes mapped onto the process exit status.
enum Failure {
    /// Some sweep cells failed; everything else was written.
    Partial(usize),
    /// Nothing useful could run.
    Setup(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Setup(e)
    }
}

impl From<qimr_core::Error> for Failure {
    fn from(e: qimr_core::Error) -> Self {
        Failure::Setup(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(n)) => {
            eprintln!("qimr: {n} cell(s) failed; see the status column");
            ExitCode::from(1)
        }
        Err(Failure::Setup(e)) => {
            eprintln!("qimr: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(jobs) = cli.jobs {
        cfg.output.jobs = jobs;
    }
    if cli.seed.is_some() {
        cfg.protocol.seed = cli.seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_out(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn load_dataset(cfg: &ExperimentConfig) -> anyhow::Result<Dataset> {
    Dataset::load(&cfg.dataset).context("loading dataset (run scripts/fetch_fashion_mnist.py)")
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    let out = cfg.output.dir.clone();
    match &cli.command {
        Command::FetchCheck => fetch_check(&cfg),
        Command::Encode(args) => encode_cmd(&cfg, args).map_err(Failure::from),
        Command::Gram(args) => gram_cmd(&cfg, args).map_err(Failure::from),
        Command::Train(args) => train_cmd(&cfg, args).map_err(Failure::from),
        Command::SweepPairs => {
            let ds = load_dataset(&cfg)?;
            let report = run_pair_sweep(&cfg, &ds)?;
            write_out(&out, "pairs.csv", report.rows_csv(&cfg))?;
            write_out(&out, "summary.csv", report.summary_csv(&cfg))?;
            for s in &report.summaries {
                println!(
                    "{:<7} mean {:.4} sem {} ({} ok, {} failed)",
                    s.kernel.to_string(),
                    s.mean,
                    s.sem
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "-".into()),
                    s.pairs_ok,
                    s.pairs_failed
                );
            }
            match report.failed_cells() {
                0 => Ok(()),
                n => Err(Failure::Partial(n)),
            }
        }
        Command::SweepBond => {
            let ds = load_dataset(&cfg)?;
            let report = run_bond_sweep(&cfg, &ds)?;
            write_out(&out, "bond.csv", report.to_csv(&cfg))?;
            for (chi, _) in &report.rows {
                match report.accuracy(*chi) {
                    Some(a) => println!("chi {chi}: accuracy {a:.4}"),
                    None => println!("chi {chi}: failed"),
                }
            }
            match report.failed_cells() {
                0 => Ok(()),
                n => Err(Failure::Partial(n)),
            }
        }
        Command::Figures => {
            let ds = load_dataset(&cfg)?;
            let figures = gram_figures(&cfg, &ds)?;
            for path in write_gram_figures(&cfg, &figures, &out)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn fetch_check(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let checks = check_dataset(&cfg.dataset)?;
    let mut bad = 0;
    for c in &checks {
        let verdict = match (&c.expected, c.matches()) {
            (None, _) => "no digest configured",
            (Some(_), true) => "ok",
            (Some(_), false) => {
                bad += 1;
                "MISMATCH"
            }
        };
        println!(
            "{}  {}  {} records  {verdict}",
            c.sha256,
            c.path.display(),
            c.records
        );
    }
    if bad > 0 {
        return Err(Failure::Setup(anyhow::anyhow!(
            "{bad} file(s) do not match their configured digest"
        )));
    }
    Ok(())
}

fn load_input(path: &Path, side: usize) -> anyhow::Result<GrayImage> {
    let raw = read_pgm(path).with_context(|| format!("reading {}", path.display()))?;
    if raw.rows == raw.cols && raw.rows.is_power_of_two() {
        Ok(GrayImage::from_side(raw.rows, raw.pixels)?)
    } else {
        Ok(area_resample(&raw, side)?)
    }
}

fn encode_cmd(cfg: &ExperimentConfig, args: &EncodeArgs) -> anyhow::Result<()> {
    let out = &cfg.output.dir;
    let mut lines = String::new();
    for path in &args.inputs {
        let img = load_input(path, cfg.protocol.side)?;
        let source = path.display().to_string();
        let head =
            |repr: &str| json!({"source": source, "repr": repr, "n": img.n(), "side": img.side()});
        let mut record = match args.repr {
            Repr::Frqi => {
                let mut v = head("frqi");
                v["angles"] = json!(encode_frqi(&img).angles());
                v
            }
            Repr::Neqr => {
                let mut v = head("neqr");
                let e = encode_neqr(&img);
                v["q"] = json!(e.q());
                v["values"] = json!(e.values());
                v
            }
            Repr::Qpie => {
                let mut v = head("qpie");
                v["amplitudes"] = json!(encode_qpie(&img)?.amplitudes());
                v
            }
            Repr::Realket => {
                let mut v = head("realket");
                v["amplitudes"] = json!(encode_realket(&img)?.amplitudes());
                v
            }
            Repr::Mps => {
                let state = decompose(&encode_realket(&img)?, args.chi)?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "image".into());
                write_out(out, &format!("{stem}.qmps"), write_mps(&state))?;
                continue;
            }
        };
        record["version"] = json!(VERSION);
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    if !lines.is_empty() {
        let name = format!("encode_{}.jsonl", format!("{:?}", args.repr).to_lowercase());
        write_out(out, &name, lines)?;
    }
    Ok(())
}

fn gram_cmd(cfg: &ExperimentConfig, args: &GramArgs) -> anyhow::Result<()> {
    let p = &cfg.protocol;
    let classes = args.classes.unwrap_or(p.focus_pair);
    let count = args.count.unwrap_or(p.gram_count);
    let chi = args.chi.unwrap_or(cfg.kernels.tnr_chi);
    let ds = load_dataset(cfg)?;
    let data = prepare_pair(&ds, p, classes, count, 1)?;
    let g = gram(&encode_all(&data.train.images, args.kernel, chi)?)?;
    let header = vec![
        format!(
            "qimr {VERSION} gram, classes ({}, {}), count {count}, chi {chi}",
            classes[0], classes[1]
        ),
        format!(
            "labels={}",
            data.train
                .labels
                .iter()
                .map(u8::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        ),
    ];
    let out = &cfg.output.dir;
    write_out(out, &format!("gram_{}.csv", args.kernel), g.to_csv(&header))?;
    write_out(out, &format!("gram_{}.pgm", args.kernel), g.to_pgm())?;
    Ok(())
}

fn train_cmd(cfg: &ExperimentConfig, args: &TrainArgs) -> anyhow::Result<()> {
    let p = &cfg.protocol;
    let classes = args.classes.unwrap_or(p.focus_pair);
    let chi = args.chi.unwrap_or(cfg.kernels.tnr_chi);
    let ds = load_dataset(cfg)?;
    let data = prepare_pair(&ds, p, classes, p.train_size, p.test_size)?;
    let train_enc = encode_all(&data.train.images, args.kernel, chi)?;
    let test_enc = encode_all(&data.test.images, args.kernel, chi)?;
    let g = gram(&train_enc)?;
    let model = train(&g, &data.y_train, &cfg.train_params())?;
    let eval = evaluate(&model, &cross_gram(&train_enc, &test_enc)?, &data.y_test)?;
    let name = format!("model_{}_{}_{}.json", args.kernel, classes[0], classes[1]);
    write_out(&cfg.output.dir, &name, model.to_json()?)?;
    println!(
        "{} on ({}, {}): accuracy {:.4} ({}/{}), {} support vectors, storage {}",
        args.kernel,
        classes[0],
        classes[1],
        eval.accuracy(),
        eval.correct,
        eval.total,
        model.support_indices.len(),
        qimr_core::kernels::storage_cost(args.kernel, cfg.n(), GRAY_BITS)
    );
    if eval.total == 0 {
        bail!("empty test set");
    }
    Ok(())
}
