//! Command implementations behind the `lifeclust` binary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use lifeclust::config::RunConfig;
use lifeclust::cv::{cross_validate, event_flags};
use lifeclust::data::{read_labels, write_labels, Dataset, Time};
use lifeclust::km::weighted_kaplan_meier_lifetimes;
use lifeclust::kuiper::{kuiper_test, REFERENCE_TERMS};
use lifeclust::metrics::evaluate;
use lifeclust::nn::checkpoint::Checkpoint;
use lifeclust::nn::train::{assign, train};
use lifeclust::synth::{generate, parse_clusters, SynthSpec};
use lifeclust::ErrorKind;

mod output;

pub use output::Outputs;

#[derive(Debug, Parser)]
#[command(name = "lifeclust", version, about = "Lifetime clustering with Kuiper divergence")]
pub struct Cli {
    /// Raise log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark and its ground-truth labels.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Assign subjects to clusters with a trained model.
    Assign(AssignArgs),
    /// Score a trained model on a dataset and write per-cluster curves.
    Eval(EvalArgs),
    /// Two-sample Kuiper test between two lifetime samples.
    KuiperTest(KuiperArgs),
    /// Cross-validate on one dataset.
    Cv(CvArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Comma-separated subset of C1, C2, C3.
    #[arg(long, default_value = "C1,C2,C3")]
    pub clusters: String,
    /// Subjects per cluster.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 150)]
    pub tm: Time,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Labels file; defaults to `<out stem>.labels.csv` next to `--out`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

/// Config file plus per-key overrides; flags win over the file.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of clusters.
    #[arg(short = 'k', long = "clusters")]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub tau: Option<Time>,
    #[arg(long)]
    pub tm: Option<Time>,
    /// kuiper_ub or mmd.
    #[arg(long)]
    pub divergence: Option<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| lifeclust::Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("clusters", self.clusters.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("t_m", self.tm.map(|v| v.to_string())),
            ("divergence", self.divergence.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.resolved_train()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RunDirArgs {
    /// Parent of the timestamped run directory.
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
    /// Exact output directory, instead of `<out-dir>/<timestamp>-<seed>`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub run: RunDirArgs,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Measurement horizon; defaults to the one the model was trained with.
    #[arg(long)]
    pub tm: Option<Time>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth labels (`id,label`) for the adjusted Rand index.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub tm: Option<Time>,
    /// Inactivity window marking termination when the data carry no flags.
    #[arg(long)]
    pub timeout_window: Option<Time>,
    #[command(flatten)]
    pub run: RunDirArgs,
}

#[derive(Debug, Args)]
pub struct KuiperArgs {
    /// CSV with a `lifetime` column and an optional 0/1 `event` column.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Terms of the reference series.
    #[arg(long, default_value_t = REFERENCE_TERMS)]
    pub terms: usize,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub run: RunDirArgs,
}

/// Process exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.chain().find_map(|e| e.downcast_ref::<lifeclust::Error>()) {
        return match e.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        };
    }
    if err.chain().any(|e| e.downcast_ref::<clap::Error>().is_some()) {
        return 1;
    }
    2
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Assign(a) => cmd_assign(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::KuiperTest(a) => {
            print!("{}", cmd_kuiper(&a)?);
            Ok(())
        }
        Command::Cv(a) => cmd_cv(&a).map(|_| ()),
    }
}

fn read_dataset(path: &Path, t_m: Time) -> anyhow::Result<Dataset> {
    Dataset::read_csv(path, t_m).with_context(|| format!("reading {}", path.display()))
}

/// Labels from `path` reordered to match `data`.
fn aligned_truth(path: &Path, data: &Dataset) -> anyhow::Result<Vec<usize>> {
    let by_id: HashMap<String, usize> = read_labels(path)?.into_iter().collect();
    data.subjects
        .iter()
        .map(|s| {
            by_id.get(&s.id).copied().ok_or_else(|| {
                anyhow!(lifeclust::Error::InvalidInput(format!(
                    "no label for subject `{}` in {}",
                    s.id,
                    path.display()
                )))
            })
        })
        .collect()
}

fn default_labels_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    out.with_file_name(format!("{stem}.labels.csv"))
}

pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let spec = SynthSpec {
        clusters: parse_clusters(&args.clusters)?,
        n_per_cluster: args.n,
        t_m: args.tm,
        seed: args.seed,
    };
    let synth = generate(&spec)?;
    let labels_path = args.labels.clone().unwrap_or_else(|| default_labels_path(&args.out));
    let mut outputs = Outputs::new();
    outputs.file(&args.out);
    synth.dataset.write_csv(&args.out)?;
    outputs.file(&labels_path);
    write_labels(
        &labels_path,
        synth
            .dataset
            .subjects
            .iter()
            .zip(&synth.labels)
            .map(|(s, &l)| (s.id.as_str(), l)),
    )?;
    outputs.commit();
    log::info!(
        "wrote {} subjects to {} and labels to {}",
        synth.dataset.len(),
        args.out.display(),
        labels_path.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> anyhow::Result<PathBuf> {
    let cfg = args.config.resolve()?;
    let train_cfg = cfg.resolved_train()?;
    let data = read_dataset(&args.data, cfg.t_m)?;
    let mut outputs = Outputs::new();
    let dir = outputs.run_dir(&args.run, train_cfg.seed)?;
    outputs.write(dir.join("config.txt"), cfg.to_kv())?;
    let (params, log) = train(&data, &train_cfg)?;
    outputs.write(dir.join("training_log.csv"), log.to_csv())?;
    let ck = Checkpoint {
        params,
        seed: train_cfg.seed,
        tau: train_cfg.tau,
        config: cfg.to_kv(),
    };
    outputs.write(dir.join("model.ckpt"), ck.to_text())?;
    outputs.commit();
    println!("{}", dir.display());
    Ok(dir)
}

fn checkpoint_t_m(ck: &Checkpoint, flag: Option<Time>) -> anyhow::Result<Time> {
    if let Some(t) = flag {
        return Ok(t);
    }
    let mut cfg = RunConfig::default();
    cfg.apply_all(&lifeclust::config::parse_kv(&ck.config)?)?;
    Ok(cfg.t_m)
}

pub fn cmd_assign(args: &AssignArgs) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&args.model)?;
    let data = read_dataset(&args.data, checkpoint_t_m(&ck, args.tm)?)?;
    let assignment = assign(&ck.params, &data.subjects, ck.tau)?;
    let mut outputs = Outputs::new();
    outputs.file(&args.out);
    write_labels(
        &args.out,
        data.subjects
            .iter()
            .zip(&assignment.labels)
            .map(|(s, &l)| (s.id.as_str(), l)),
    )?;
    outputs.commit();
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> anyhow::Result<PathBuf> {
    let ck = Checkpoint::load(&args.model)?;
    let data = read_dataset(&args.data, checkpoint_t_m(&ck, args.tm)?)?;
    let truth = args.truth.as_deref().map(|p| aligned_truth(p, &data)).transpose()?;
    let k = ck.params.n_clusters();
    let assignment = assign(&ck.params, &data.subjects, ck.tau)?;
    let events = event_flags(&data, args.timeout_window)?;
    let (report, curves) = evaluate(&data, &events, &assignment.labels, k, truth.as_deref())?;

    let mut csv = String::from("t");
    for c in 0..k {
        let _ = write!(csv, ",cluster_{c}");
    }
    csv.push('\n');
    for t in 0..curves.first().map_or(0, |c| c.len()) {
        let _ = write!(csv, "{t}");
        for c in &curves {
            let _ = write!(csv, ",{:?}", c.values[t]);
        }
        csv.push('\n');
    }

    let mut outputs = Outputs::new();
    let dir = outputs.run_dir(&args.run, ck.seed)?;
    outputs.write(dir.join("config.txt"), ck.config.clone())?;
    outputs.write(dir.join("report.txt"), report.to_kv())?;
    outputs.write(dir.join("curves.csv"), csv)?;
    outputs.commit();
    print!("{}", report.to_kv());
    Ok(dir)
}

/// Lifetimes and terminal flags from a `lifetime[,event]` CSV.
fn read_sample(path: &Path) -> anyhow::Result<(Vec<Time>, Vec<bool>)> {
    let parse_err = |line: u64, message: String| lifeclust::Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(lifeclust::Error::from)?;
    let headers = reader.headers().map_err(lifeclust::Error::from)?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let life = col("lifetime").ok_or_else(|| parse_err(1, "missing `lifetime` column".into()))?;
    let event = col("event");
    let mut lifetimes = Vec::new();
    let mut events = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(lifeclust::Error::from)?;
        let line = i as u64 + 2;
        let t: Time = rec[life]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad lifetime {:?}", &rec[life])))?;
        let e = match event.map(|c| rec[c].trim()) {
            None | Some("1") => true,
            Some("0") => false,
            Some(other) => return Err(parse_err(line, format!("bad event flag {other:?}")).into()),
        };
        lifetimes.push(t);
        events.push(e);
    }
    if lifetimes.is_empty() {
        bail!(lifeclust::Error::EmptyDataset);
    }
    Ok((lifetimes, events))
}

/// Returns the `key=value` report printed by `kuiper-test`.
pub fn cmd_kuiper(args: &KuiperArgs) -> anyhow::Result<String> {
    let (la, ea) = read_sample(&args.a)?;
    let (lb, eb) = read_sample(&args.b)?;
    let horizon = la.iter().chain(&lb).copied().max().unwrap_or(0);
    let curve = |l: &[Time], e: &[bool]| {
        let beta: Vec<f64> = e.iter().map(|&x| f64::from(u8::from(x))).collect();
        weighted_kaplan_meier_lifetimes(l, horizon, &vec![1.0; l.len()], &beta)
    };
    let a = curve(&la, &ea)?;
    let b = curve(&lb, &eb)?;
    let r = kuiper_test(&a, &b, Some(args.terms))?;
    Ok(format!(
        "n_a={}\nn_b={}\nd_plus={:?}\nd_minus={:?}\nv={:?}\nlambda={:?}\np_lower={:?}\np_upper={:?}\np_reference={:?}\n",
        la.len(),
        lb.len(),
        r.d_plus + 0.0,
        r.d_minus + 0.0,
        r.v_stat,
        r.lambda,
        r.p_lower,
        r.p_upper,
        r.p_reference.unwrap_or(f64::NAN)
    ))
}

pub fn cmd_cv(args: &CvArgs) -> anyhow::Result<PathBuf> {
    let cfg = args.config.resolve()?;
    let seed = cfg.train.seed;
    let data = read_dataset(&args.data, cfg.t_m)?;
    let truth = args.truth.as_deref().map(|p| aligned_truth(p, &data)).transpose()?;
    let mut outputs = Outputs::new();
    let dir = outputs.run_dir(&args.run, seed)?;
    outputs.write(dir.join("config.txt"), cfg.to_kv())?;
    let result = cross_validate(&data, &cfg, truth.as_deref())?;
    for f in &result.folds {
        outputs.write(dir.join(format!("fold_{}_training_log.csv", f.fold)), f.log.to_csv())?;
        let ck = Checkpoint {
            params: f.params.clone(),
            seed: lifeclust::cv::fold_seed(seed, f.fold),
            tau: cfg.train.tau,
            config: cfg.to_kv(),
        };
        outputs.write(dir.join(format!("fold_{}.ckpt", f.fold)), ck.to_text())?;
    }
    outputs.write(dir.join("folds.csv"), result.folds_csv())?;
    let summary = result.summary_kv();
    outputs.write(dir.join("summary.txt"), summary.clone())?;
    outputs.commit();
    print!("{summary}");
    Ok(dir)
}
