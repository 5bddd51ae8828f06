//! Command-line front end and the `key = value` experiment file format.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::activations::ActivationKind;
use crate::autodiff::DEFAULT_GRAD_CHECK_EPS;
use crate::bench::{self, DatasetKind, ExperimentConfig, ReportFormat, RunRecord};
use crate::checks;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;
use crate::rng::Rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

pub const CONFIG_KEYS: [&str; 16] = [
    "dataset",
    "data_dir",
    "conv_activation",
    "dense_activation",
    "optimizer",
    "lr",
    "momentum",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "batch_size",
    "val_fraction",
    "seed",
    "train_subset",
    "grad_clip",
];

const REQUIRED_KEYS: [&str; 3] = ["dataset", "conv_activation", "dense_activation"];

/// Read an experiment file. Missing files surface as [`Error::Io`] naming
/// the path.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, &path.display().to_string())
}

/// Parse `key = value` lines. Blank lines and lines starting with `#` are
/// ignored; unknown or repeated keys are errors. Omitted optional keys take
/// the dataset's defaults.
pub fn parse_config_str(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(line_no, format!("expected `key = value`, got {line:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::UnknownKey {
                path: origin.to_string(),
                line: line_no,
                key: key.to_string(),
            });
        }
        if value.is_empty() {
            return Err(parse_err(line_no, format!("empty value for `{key}`")));
        }
        if let Some((first, _)) = entries.insert(key, (line_no, value)) {
            return Err(parse_err(line_no, format!("`{key}` already set on line {first}")));
        }
    }
    for key in REQUIRED_KEYS {
        if !entries.contains_key(key) {
            return Err(parse_err(0, format!("missing required key `{key}`")));
        }
    }

    fn field<T: std::str::FromStr>(
        entries: &BTreeMap<&str, (usize, &str)>,
        key: &str,
        err: &dyn Fn(usize, String) -> Error,
    ) -> Result<Option<T>> {
        match entries.get(key) {
            None => Ok(None),
            Some(&(line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| err(line, format!("invalid value {v:?} for `{key}`"))),
        }
    }
    let optional = |key: &str| -> Result<Option<&str>> {
        Ok(entries.get(key).map(|&(_, v)| v).filter(|v| !v.eq_ignore_ascii_case("none")))
    };
    let get = |key| field::<String>(&entries, key, &parse_err);

    let dataset: DatasetKind = field(&entries, "dataset", &parse_err)?.expect("required");
    let mut cfg = ExperimentConfig::defaults(dataset);
    cfg.conv_activation = field(&entries, "conv_activation", &parse_err)?.expect("required");
    cfg.dense_activation = field(&entries, "dense_activation", &parse_err)?.expect("required");
    if let Some(dir) = get("data_dir")? {
        cfg.data_dir = PathBuf::from(dir);
    }
    if let Some(v) = field(&entries, "epochs", &parse_err)? {
        cfg.epochs = v;
    }
    if let Some(v) = field(&entries, "batch_size", &parse_err)? {
        cfg.batch_size = v;
    }
    if let Some(v) = field(&entries, "val_fraction", &parse_err)? {
        cfg.val_fraction = v;
    }
    if let Some(v) = field(&entries, "seed", &parse_err)? {
        cfg.seed = v;
    }
    if let Some(v) = optional("train_subset")? {
        let line = entries["train_subset"].0;
        cfg.train_subset = Some(v.parse().map_err(|_| parse_err(line, format!("invalid train_subset {v:?}")))?);
    }
    if let Some(v) = optional("grad_clip")? {
        let line = entries["grad_clip"].0;
        cfg.grad_clip = Some(v.parse().map_err(|_| parse_err(line, format!("invalid grad_clip {v:?}")))?);
    }

    let kind = match get("optimizer")? {
        Some(k) => k.to_ascii_lowercase(),
        None => cfg.optimizer.name().to_string(),
    };
    let num = |key: &str| field::<f64>(&entries, key, &parse_err);
    let reject = |keys: &[&str]| -> Result<()> {
        match keys.iter().find_map(|k| entries.get(k).map(|&(line, _)| (line, k))) {
            Some((line, k)) => Err(parse_err(line, format!("`{k}` does not apply to optimizer {kind}"))),
            None => Ok(()),
        }
    };
    cfg.optimizer = match kind.as_str() {
        "sgd" => {
            reject(&["beta1", "beta2", "eps"])?;
            let OptimizerConfig::Sgd { lr, momentum } = OptimizerConfig::SGD_DEFAULT else {
                unreachable!()
            };
            OptimizerConfig::Sgd {
                lr: num("lr")?.unwrap_or(lr),
                momentum: num("momentum")?.unwrap_or(momentum),
            }
        }
        "adam" => {
            reject(&["momentum"])?;
            let OptimizerConfig::Adam { lr, beta1, beta2, eps } = OptimizerConfig::ADAM_DEFAULT else {
                unreachable!()
            };
            OptimizerConfig::Adam {
                lr: num("lr")?.unwrap_or(lr),
                beta1: num("beta1")?.unwrap_or(beta1),
                beta2: num("beta2")?.unwrap_or(beta2),
                eps: num("eps")?.unwrap_or(eps),
            }
        }
        other => {
            let line = entries["optimizer"].0;
            return Err(parse_err(line, format!("unknown optimizer {other:?} (expected sgd|adam)")));
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Render a config in the format read by [`parse_config_str`], with every
/// field spelled out.
pub fn config_to_text(cfg: &ExperimentConfig) -> String {
    let mut lines = vec![
        format!("dataset = {}", cfg.dataset),
        format!("data_dir = {}", cfg.data_dir.display()),
        format!("conv_activation = {}", cfg.conv_activation),
        format!("dense_activation = {}", cfg.dense_activation),
        format!("optimizer = {}", cfg.optimizer.name()),
    ];
    match cfg.optimizer {
        OptimizerConfig::Sgd { lr, momentum } => {
            lines.push(format!("lr = {lr}"));
            lines.push(format!("momentum = {momentum}"));
        }
        OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
            lines.push(format!("lr = {lr}"));
            lines.push(format!("beta1 = {beta1}"));
            lines.push(format!("beta2 = {beta2}"));
            lines.push(format!("eps = {eps}"));
        }
    }
    lines.push(format!("epochs = {}", cfg.epochs));
    lines.push(format!("batch_size = {}", cfg.batch_size));
    lines.push(format!("val_fraction = {}", cfg.val_fraction));
    lines.push(format!("seed = {}", cfg.seed));
    let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
    lines.push(format!("train_subset = {}", opt(cfg.train_subset.map(|v| v.to_string()))));
    lines.push(format!("grad_clip = {}", opt(cfg.grad_clip.map(|v| v.to_string()))));
    lines.join("\n") + "\n"
}

#[derive(Debug, Parser)]
#[command(name = "oscnet", version, about = "Train and compare ReLU, PReLU, Mish and GCU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment file; writes a record and a report row to --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Run every `*.conf` file in a directory.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Base seed; run `i` gets a seed derived from it and `i`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Search single-neuron XOR weights for an activation.
    Xor { activation: ActivationKind },
    /// Finite-difference checks for one activation or `all`.
    Gradcheck { activation: String },
    /// Render a table from the `*.json` records in a directory.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse `args` (including the program name) and run; returns the process
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DivergedRun { .. } => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train {
            config,
            out,
            seed,
            subset,
            format,
        } => {
            let mut cfg = parse_config(&config)?;
            apply_overrides(&mut cfg, seed, subset)?;
            train(&config, &cfg, &out, format)
        }
        Command::Sweep {
            config,
            out,
            threads,
            seed,
            subset,
            format,
        } => sweep(&config, &out, threads, seed, subset, format),
        Command::Xor { activation } => {
            let s = bench::solve_xor_single_neuron(activation);
            println!(
                "{}: w1 = {:.6}, w2 = {:.6}, b = {:.6}, theta = {:.6}, margin = {:.6}",
                activation.display_name(),
                s.w1,
                s.w2,
                s.b,
                s.theta,
                s.margin
            );
            println!("{}/4 XOR points classified (accuracy {:.2})", s.correct, s.accuracy);
            Ok(EXIT_OK)
        }
        Command::Gradcheck { activation } => gradcheck(&activation),
        Command::Report { records, format, out } => {
            let recs = read_records(&records)?;
            let text = bench::emit_report(&recs, format)?;
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| Error::io(path, e))?,
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, seed: Option<u64>, subset: Option<usize>) -> Result<()> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = subset {
        cfg.train_subset = Some(n);
    }
    cfg.validate()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn report_extension(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Markdown => "md",
        ReportFormat::Csv => "csv",
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_logged(label: &str, cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<RunRecord> {
    let started = Instant::now();
    eprintln!(
        "[{label}] {} conv={} dense={} optimizer={} epochs={} seed={}",
        cfg.dataset,
        cfg.conv_activation,
        cfg.dense_activation,
        cfg.optimizer.name(),
        cfg.epochs,
        cfg.seed
    );
    bench::run_experiment_on(cfg, train, test, &mut |m| {
        eprintln!(
            "[{label}] epoch {}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4} | {:.1}s",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            m.val_loss,
            m.val_accuracy,
            started.elapsed().as_secs_f64()
        );
    })
}

fn train(config_path: &Path, cfg: &ExperimentConfig, out: &Path, format: ReportFormat) -> Result<i32> {
    ensure_dir(out)?;
    let (train, test) = cfg.dataset.load(&cfg.data_dir)?;
    let name = stem(config_path);
    let record = run_logged(&name, cfg, &train, &test)?;
    eprintln!("[{name}] test accuracy {:.4}", record.test_accuracy);
    write_file(&out.join(format!("{name}.json")), &record.to_json()?)?;
    let report = bench::emit_report(std::slice::from_ref(&record), format)?;
    write_file(&out.join(format!("{name}.report.{}", report_extension(format))), &report)?;
    Ok(EXIT_OK)
}

fn sweep(
    dir: &Path,
    out: &Path,
    threads: usize,
    base_seed: Option<u64>,
    subset: Option<usize>,
    format: ReportFormat,
) -> Result<i32> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "conf"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!("no *.conf files in {}", dir.display())));
    }
    let mut jobs = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let mut cfg = parse_config(f)?;
        let seed = base_seed.map(|s| Rng::derive(s, i as u64).next_u64());
        apply_overrides(&mut cfg, seed, subset)?;
        jobs.push((stem(f), cfg));
    }
    ensure_dir(out)?;
    let mut datasets: HashMap<(DatasetKind, PathBuf), (Dataset, Dataset)> = HashMap::new();
    for (_, cfg) in &jobs {
        let key = (cfg.dataset, cfg.data_dir.clone());
        if !datasets.contains_key(&key) {
            let loaded = cfg.dataset.load(&cfg.data_dir)?;
            datasets.insert(key, loaded);
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((name, cfg)) = jobs.get(i) else { break };
                let (train, test) = &datasets[&(cfg.dataset, cfg.data_dir.clone())];
                let r = run_logged(name, cfg, train, test);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });

    let mut records = Vec::new();
    let mut first_err = None;
    for ((name, _), r) in jobs.iter().zip(results.into_inner().expect("workers joined")) {
        match r.expect("every job ran") {
            Ok(rec) => {
                write_file(&out.join(format!("{name}.json")), &rec.to_json()?)?;
                records.push(rec);
            }
            Err(e) => {
                eprintln!("[{name}] failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if !records.is_empty() {
        let report = bench::emit_report(&records, format)?;
        write_file(&out.join(format!("report.{}", report_extension(format))), &report)?;
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(EXIT_OK),
    }
}

fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|f| {
            let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            RunRecord::from_json(&text)
        })
        .collect()
}

const ORACLE_SEED: u64 = 2024;
const ORACLE_TOLERANCE: f64 = 1e-6;
const MODEL_TOLERANCE: f64 = 1e-4;

fn gradcheck(which: &str) -> Result<i32> {
    let kinds: Vec<ActivationKind> = if which.eq_ignore_ascii_case("all") {
        ActivationKind::ALL.to_vec()
    } else {
        vec![which.parse()?]
    };
    let mut ok = true;
    for kind in kinds {
        let a = checks::activation_oracle(kind, ORACLE_SEED, DEFAULT_GRAD_CHECK_EPS)?;
        let m = checks::mini_model_check(kind, ORACLE_SEED)?;
        let pass = a.max_rel_error() <= ORACLE_TOLERANCE && m.max_rel_error <= MODEL_TOLERANCE;
        ok &= pass;
        println!(
            "{:<6} derivative max rel err {:.3e} ({} points) | mini-model max rel err {:.3e} | {}",
            kind.display_name(),
            a.max_rel_error(),
            a.points,
            m.max_rel_error,
            if pass { "ok" } else { "FAILED" }
        );
    }
    Ok(if ok { EXIT_OK } else { EXIT_DATA })
}
