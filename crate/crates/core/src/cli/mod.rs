//! Command-line front end.
//!
//! Each command writes `manifest.toml` into its output directory before any
//! other file. The manifest holds the original arguments and the fully
//! resolved configuration, so `rerun --manifest` repeats the run without
//! the original config file.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ModelConfig, ModelKind, RaterConfig, RunConfig};

use crate::dataset::{load_dataset, load_ratings, merge_datasets, save_ratings, aggregate_mos, Dataset, TaskId};
use crate::error::{Error, Result};
use crate::eval::{crossval_csv, histogram_csv, render_csv, render_table, ReportRow};
use crate::model::{init_params, load_checkpoint, save_checkpoint, Checkpoint, ModelParams};
use crate::rater::{correct_ratings, crossval_protocol, estimate_profiles, CorrectionMethod, RaterProfile};
use crate::semisup::{train_student, Teacher};
use crate::synth::{export_corpus, gen_corpus, gen_splits};
use crate::train::{evaluate, train, RunReport, TaskMetrics, TrainConfig};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, Parser)]
#[command(
    name = "mtl-mos",
    version,
    about = "Multi-task MOS regression with missing labels and rater bias correction",
    long_about = "Multi-task MOS regression with missing labels and rater bias correction.\n\n\
                  Configuration is a TOML file with sections [synth], [model], [train], \
                  [semisup], [rater] and [crossval]. Run `mtl-mos defaults` to print every \
                  key with its default value."
)]
pub struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML configuration file; missing keys keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test corpus.
    Gen,
    /// Train a model; names: single, multi, multi,split, multi,split,W, multi,split,semi.
    Train(TrainArgs),
    /// Evaluate checkpoints on datasets.
    Eval(EvalArgs),
    /// Estimate rater profiles and write corrected ratings.
    Debias(DebiasArgs),
    /// Cross-validate rater corrections against random and hold-out references.
    Crossval(CrossvalArgs),
    /// Print the default configuration.
    Defaults,
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: String,
    /// Dataset directories; several are merged on the union of their tasks.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Restrict training to these tasks.
    #[arg(long = "task")]
    pub tasks: Vec<TaskId>,
    /// Validation dataset directories.
    #[arg(long, num_args = 1..)]
    pub val: Vec<PathBuf>,
    /// Teacher checkpoint file or directory of `.ckpt` files (multi,split,semi).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Overrides [train] epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint file or directory of `.ckpt` files.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DebiasArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    /// bias or linear [default: from [rater], bias]
    #[arg(long)]
    pub method: Option<CorrectionMethod>,
    /// Minimum rated samples per rater [default: 5]
    #[arg(long)]
    pub min_samples: Option<usize>,
    /// Clip corrected ratings to 1–5.
    #[arg(long)]
    pub clip: bool,
    /// Tasks to correct (default: all in the file).
    #[arg(long = "task")]
    pub tasks: Vec<TaskId>,
}

#[derive(Debug, Clone, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    /// [default: 5]
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long = "task")]
    pub tasks: Vec<TaskId>,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Record of one run, written before its artifacts.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub out: String,
    pub threads: Option<usize>,
    pub version: String,
    pub started_unix: u64,
    pub rerun_of: Option<String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, 1, e.message().to_string()))
    }
}

struct Run {
    config: RunConfig,
    out: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn start(&self) -> Result<()> {
        let dir = &self.out;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = toml::to_string(&self.manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.write(MANIFEST, text)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, content: String) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, content).map_err(|e| Error::io(path, e))
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen => "gen",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Debias(_) => "debias",
        Command::Crossval(_) => "crossval",
        Command::Defaults => "defaults",
        Command::Rerun(_) => "rerun",
    }
}

/// Executes a parsed command line. `argv` are the arguments without the
/// program name, recorded for reruns.
pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, argv))
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Command::Defaults = cli.command {
        print!("{}", RunConfig::default().to_toml());
        return Ok(());
    }
    if let Command::Rerun(r) = &cli.command {
        return rerun(&r.manifest, cli.out.clone(), cli.threads);
    }
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let manifest = Manifest {
        command: command_name(&cli.command).into(),
        args: argv,
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        seed: cli.seed,
        out: out.display().to_string(),
        threads: cli.threads,
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix: unix_now(),
        rerun_of: None,
        config: config.clone(),
    };
    execute(&cli.command, Run { config, out, manifest })
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn rerun(path: &Path, out: Option<PathBuf>, threads: Option<usize>) -> Result<()> {
    let old = Manifest::load(path)?;
    let argv = std::iter::once("mtl-mos".to_string()).chain(old.args.iter().cloned());
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| Error::InvalidConfig(format!("{}: stored arguments: {e}", path.display())))?;
    if matches!(cli.command, Command::Rerun(_) | Command::Defaults) {
        return Err(Error::InvalidConfig(format!(
            "{}: manifest does not describe a rerunnable command",
            path.display()
        )));
    }
    let out = out.unwrap_or_else(|| PathBuf::from(&old.out));
    let manifest = Manifest {
        out: out.display().to_string(),
        threads,
        started_unix: unix_now(),
        rerun_of: Some(path.display().to_string()),
        ..old.clone()
    };
    execute(
        &cli.command,
        Run {
            config: old.config,
            out,
            manifest,
        },
    )
}

fn execute(command: &Command, run: Run) -> Result<()> {
    run.start()?;
    match command {
        Command::Gen => cmd_gen(&run),
        Command::Train(a) => cmd_train(&run, a),
        Command::Eval(a) => cmd_eval(&run, a),
        Command::Debias(a) => cmd_debias(&run, a),
        Command::Crossval(a) => cmd_crossval(&run, a),
        Command::Defaults | Command::Rerun(_) => unreachable!("handled before execution"),
    }
}

fn cmd_gen(run: &Run) -> Result<()> {
    let cfg = &run.config.synth;
    let (train, test) = if cfg.test_fraction > 0.0 {
        let (a, b) = gen_splits(cfg)?;
        (a, Some(b))
    } else {
        (gen_corpus(cfg)?, None)
    };
    export_corpus(&train, run.path("train"))?;
    if let Some(t) = &test {
        export_corpus(t, run.path("test"))?;
    }
    eprintln!(
        "generated {} + {} + {} training samples, {} ratings",
        train.mos.len(),
        train.ovr_sig_bak.len(),
        train.t60_c50.len(),
        train.ratings.len()
    );
    Ok(())
}

fn load_merged(paths: &[PathBuf]) -> Result<Dataset> {
    let parts = paths.iter().map(load_dataset).collect::<Result<Vec<_>>>()?;
    merge_datasets(&parts)
}

fn data_label(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| {
            p.file_name()
                .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
        })
        .collect()
}

fn ckpt_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Checkpoint(format!("no .ckpt files in {}", path.display())));
    }
    Ok(files)
}

fn load_checkpoints(path: &Path) -> Result<Vec<Checkpoint>> {
    ckpt_files(path)?.iter().map(load_checkpoint).collect()
}

fn group_name(names: impl IntoIterator<Item = String>) -> String {
    let mut unique: Vec<String> = Vec::new();
    for n in names {
        if !unique.contains(&n) {
            unique.push(n);
        }
    }
    unique.join(" + ")
}

/// One table row covering several models (one per task for `single`).
fn combined_row(model: &str, parameters: usize, training_data: &[String], metrics: &[&TaskMetrics]) -> ReportRow {
    ReportRow {
        model: model.to_string(),
        parameters: parameters.to_string(),
        training_data: training_data.join(", "),
        metrics: metrics.iter().flat_map(|m| m.iter().cloned()).collect(),
    }
}

fn cmd_train(run: &Run, args: &TrainArgs) -> Result<()> {
    let kind: ModelKind = args.model.parse()?;
    let mut data = load_merged(&args.data)?;
    if !args.tasks.is_empty() {
        data = data.project_tasks(&args.tasks)?;
    }
    let val = if args.val.is_empty() {
        None
    } else {
        Some(load_merged(&args.val)?)
    };
    let mut tcfg: TrainConfig = run.config.train.clone();
    if let Some(e) = args.epochs {
        tcfg.epochs = e;
    }
    match kind {
        ModelKind::MultiSplitWeighted => {
            if tcfg.task_weights.is_empty() {
                return Err(Error::InvalidConfig(
                    "multi,split,W needs per-task loss weights in [train.task_weights]".into(),
                ));
            }
        }
        _ => tcfg.task_weights.clear(),
    }
    let mcfg = &run.config.model;
    let archs = kind.architectures(mcfg, data.dim(), data.tasks())?;
    let training_data = data_label(&args.data);

    let mut runs: Vec<(String, ModelParams, RunReport)> = Vec::new();
    match kind {
        ModelKind::Single => {
            for arch in archs {
                let task = arch.tasks[0].clone();
                let sub = data.project_tasks(std::slice::from_ref(&task))?;
                let rows = sub.rows_with_task(0);
                if rows.is_empty() {
                    return Err(Error::InvalidConfig(format!("training data has no labels for task {task}")));
                }
                let sub = sub.select_rows(&rows)?;
                let init = init_params(&arch, mcfg.init_seed)?;
                eprintln!("training single model for {task} on {} rows", sub.len());
                let (params, report) = train(init, &sub, &tcfg, val.as_ref())?;
                runs.push((format!("single-{task}.ckpt"), params, report));
            }
        }
        ModelKind::MultiSplitSemi => {
            let path = args.teacher.as_ref().ok_or_else(|| {
                Error::InvalidConfig("multi,split,semi needs --teacher <checkpoint file or directory>".into())
            })?;
            let ckpts = load_checkpoints(path)?;
            let name = group_name(ckpts.iter().map(|c| c.model.clone()));
            let teacher = Teacher::new(name, ckpts.into_iter().map(|c| c.params).collect());
            let init = init_params(&archs[0], mcfg.init_seed)?;
            let (params, report, labels) =
                train_student(&teacher, &data, init, &tcfg, &run.config.semisup, val.as_ref())?;
            eprintln!("teacher filled {} label cells", labels.pseudo_count());
            labels.export(&data, run.path("pseudo_labels"))?;
            runs.push(("model.ckpt".into(), params, report));
        }
        _ => {
            let init = init_params(&archs[0], mcfg.init_seed)?;
            let (params, report) = train(init, &data, &tcfg, val.as_ref())?;
            runs.push(("model.ckpt".into(), params, report));
        }
    }

    let mut text = String::new();
    let mut parameters = 0;
    for (file, params, report) in &mut runs {
        report.model = kind.name().into();
        report.training_data = training_data.clone();
        report.checkpoint = Some(file.clone());
        parameters += params.len();
        let ckpt = Checkpoint {
            model: kind.name().into(),
            seed: mcfg.init_seed,
            epoch: report.selected_epoch.map_or(0, |e| e + 1),
            params: params.clone(),
        };
        save_checkpoint(&ckpt, run.path(file))?;
        let _ = writeln!(text, "== {file} ==");
        text.push_str(&report.to_text());
        text.push('\n');
    }
    let train_row = combined_row(
        kind.name(),
        parameters,
        &training_data,
        &runs.iter().map(|r| &r.2.train_metrics).collect::<Vec<_>>(),
    );
    text.push_str("== summary: training data ==\n");
    text.push_str(&render_table(std::slice::from_ref(&train_row), None));
    run.write("report.csv", render_csv(std::slice::from_ref(&train_row), None))?;
    let val_metrics: Option<Vec<&TaskMetrics>> = runs.iter().map(|r| r.2.val_metrics.as_ref()).collect();
    if let Some(vm) = val_metrics {
        let row = combined_row(kind.name(), parameters, &training_data, &vm);
        text.push_str("\n== summary: validation data ==\n");
        text.push_str(&render_table(std::slice::from_ref(&row), None));
        run.write("report_val.csv", render_csv(std::slice::from_ref(&row), None))?;
    }
    eprint!("{}", render_table(std::slice::from_ref(&train_row), None));
    run.write("report.txt", text)
}

fn cmd_eval(run: &Run, args: &EvalArgs) -> Result<()> {
    let ckpts = load_checkpoints(&args.checkpoint)?;
    let data = load_merged(&args.data)?;
    let mut metrics = Vec::with_capacity(ckpts.len());
    let mut predictions = Vec::with_capacity(ckpts.len());
    for c in &ckpts {
        metrics.push(evaluate(&c.params, &data)?);
        predictions.push(c.params.predict(data.features())?);
    }
    let parameters = ckpts.iter().map(|c| c.params.len()).sum();
    let row = combined_row(
        &group_name(ckpts.iter().map(|c| c.model.clone())),
        parameters,
        &["-".to_string()],
        &metrics.iter().collect::<Vec<_>>(),
    );
    let mut header = vec!["sample_id".to_string()];
    for c in &ckpts {
        header.extend(c.params.tasks().iter().map(ToString::to_string));
    }
    let mut pred = header.join(",") + "\n";
    for (r, id) in data.sample_ids().iter().enumerate() {
        pred.push_str(id);
        for p in &predictions {
            for c in 0..p.cols() {
                let _ = write!(pred, ",{:?}", p.get(r, c));
            }
        }
        pred.push('\n');
    }
    let table = render_table(std::slice::from_ref(&row), None);
    eprint!("{table}");
    run.write("report.txt", table)?;
    run.write("report.csv", render_csv(std::slice::from_ref(&row), None))?;
    run.write("predictions.csv", pred)
}

fn tasks_or_all(requested: &[TaskId], available: Vec<TaskId>) -> Vec<TaskId> {
    if requested.is_empty() {
        available
    } else {
        requested.to_vec()
    }
}

fn cmd_debias(run: &Run, args: &DebiasArgs) -> Result<()> {
    let cfg = &run.config.rater;
    let method = args.method.unwrap_or(cfg.method);
    let min_samples = args.min_samples.unwrap_or(cfg.min_samples);
    let clip = args.clip || cfg.clip;
    let table = load_ratings(&args.ratings)?;
    let tasks = tasks_or_all(&args.tasks, table.tasks());

    let mut profiles: Vec<RaterProfile> = Vec::new();
    let mut audit = String::from("task,rater_id,reason\n");
    for task in &tasks {
        if table.samples(task).is_empty() {
            return Err(Error::NoRatings {
                sample: "*".into(),
                task: task.clone(),
            });
        }
        let (found, skipped) = estimate_profiles(&table, task, method, min_samples);
        for p in found.iter().filter(|p| p.degenerate) {
            eprintln!(
                "rater {} on {task}: every rating identical, fell back to bias-only correction",
                p.rater_id
            );
        }
        for (j, e) in &skipped {
            let _ = writeln!(audit, "{task},{j},\"{}\"", e.to_string().replace('"', "'"));
        }
        eprintln!("{task}: {} rater profile(s), {} rater(s) skipped", found.len(), skipped.len());
        profiles.extend(found);
    }

    let mut corrected = correct_ratings(&table, &profiles);
    if clip {
        corrected = corrected.clipped(1.0, 5.0);
    }
    save_ratings(&corrected, run.path("corrected.csv"))?;

    let mut out = String::from("rater_id,method,a,b,S,degenerate,task\n");
    for p in &profiles {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{},{},{}",
            p.rater_id, p.method, p.a, p.b, p.samples, p.degenerate, p.task
        );
    }
    run.write("profiles.csv", out)?;
    run.write("audit.csv", audit)?;

    let mut mos = String::from("sample_id,task,raters,mos,unbiased_mos\n");
    for task in &tasks {
        let raw = aggregate_mos(&table, task)?;
        let fixed: BTreeMap<String, f64> = aggregate_mos(&corrected, task)?;
        for (s, m) in &raw {
            let _ = writeln!(
                mos,
                "{s},{task},{},{m:?},{:?}",
                table.rater_count(task, s),
                fixed[s]
            );
        }
    }
    run.write("mos.csv", mos)
}

fn cmd_crossval(run: &Run, args: &CrossvalArgs) -> Result<()> {
    let mut cfg = run.config.crossval.clone();
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    let table = load_ratings(&args.ratings)?;
    let tasks = tasks_or_all(&args.tasks, table.tasks());
    let mut summary = String::new();
    for task in &tasks {
        let report = crossval_protocol(&table, task, &cfg)?;
        run.write(&format!("crossval-{task}.csv"), crossval_csv(&report))?;
        run.write(&format!("histogram-{task}.csv"), histogram_csv(&report))?;
        let mut audit = String::from("kind,id,count,needed\n");
        for a in &report.skipped {
            let _ = writeln!(audit, "{},{},{},{}", a.kind, a.id, a.count, a.needed);
        }
        run.write(&format!("audit-{task}.csv"), audit)?;
        summary.push_str(&report.summary_text());
        summary.push('\n');
    }
    eprint!("{summary}");
    run.write("summary.txt", summary)
}
