//! `ktangent`: train and evaluate k-tangent cascades from a dataset manifest.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ktangent::boost::{BoostParams, CascadeModel};
use ktangent::eval::synth::{write_synthetic_dataset, SyntheticDatasetSpec};
use ktangent::eval::{
    area_under_det, compute_det, load_manifest, parse_scores, prepare_image_data,
    run_experiment_k_sweep, run_experiment_mappings, DetCurve, ExperimentData, ExperimentRun,
    RunConfig,
};
use ktangent::ktangent::LearnerRegistry;
use ktangent::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ktangent",
    version,
    about = "Pedestrian window classification on Riemannian manifolds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a cascade on the manifest's training split and save it.
    Train(RunFlags),
    /// Score the held-out split with a saved cascade and write its DET curve.
    Eval(RunFlags),
    /// Train one cascade per K in 1..=--k and write det_k{K}.csv into --out.
    ExpKSweep(RunFlags),
    /// Compare the raw, identity, karcher and k-tangent mappings; writes det_{mode}.csv into --out.
    ExpMappings(RunFlags),
    /// Turn a file of `label score` lines into a DET CSV.
    DetCsv {
        scores: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic pedestrian dataset with its manifest into --out.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        positives: usize,
        #[arg(long, default_value_t = 20)]
        negative_images: usize,
    },
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// `key = value` file with defaults for any of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Candidate regions per boosting round.
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// raw, identity, karcher or ktangent.
    #[arg(long)]
    mapping: Option<String>,
    /// Negatives mined per stage (default: twice the positives).
    #[arg(long)]
    negatives: Option<usize>,
}

impl RunFlags {
    fn resolve(self) -> Result<RunConfig> {
        let flags = RunConfig {
            manifest: self.manifest,
            k: self.k,
            stages: self.stages,
            rounds: self.rounds,
            regions: self.regions,
            ridge: self.ridge,
            eps: self.eps,
            seed: self.seed,
            model: self.model,
            out: self.out,
            mapping: self.mapping,
            negatives: self.negatives,
        };
        match self.config {
            Some(path) => Ok(RunConfig::load(&path)?.overridden_by(flags)),
            None => Ok(flags),
        }
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required")))
}

fn emit_csv(curve: &DetCurve, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => curve.write_csv(path),
        None => {
            std::io::stdout().write_all(curve.to_csv().as_bytes())?;
            Ok(())
        }
    }
}

fn train(cfg: RunConfig) -> Result<()> {
    let manifest = load_manifest(required(&cfg.manifest, "manifest")?)?;
    let model_path = required(&cfg.model, "model")?;
    let params = cfg.boost_params()?;
    let data = prepare_image_data(&manifest, params.seed)?;
    let learner = params.create_learner(&LearnerRegistry::builtin())?;
    let training = data.train(&params, learner.as_ref())?;
    if let Some(w) = &training.warning {
        eprintln!("WARN {}: {w}", w.code());
    }
    for (i, r) in training.reports.iter().enumerate() {
        println!(
            "stage {i}: {} rounds, detection {:.4}, false positives {:.4}, error {:.4} -> {:.4}",
            r.rounds.len(),
            r.detection_rate,
            r.false_positive_rate,
            r.initial_error,
            r.final_error
        );
    }
    training.model.save(model_path)?;
    println!(
        "saved {} stages to {}",
        training.model.stages.len(),
        model_path.display()
    );
    Ok(())
}

fn eval(cfg: RunConfig) -> Result<()> {
    let manifest = load_manifest(required(&cfg.manifest, "manifest")?)?;
    let model = CascadeModel::load(required(&cfg.model, "model")?)?;
    if (model.window_w, model.window_h) != (manifest.window_w, manifest.window_h) {
        return Err(Error::InvalidArgument(format!(
            "model window {}x{} differs from manifest window {}x{}",
            model.window_w, model.window_h, manifest.window_w, manifest.window_h
        )));
    }
    let data = prepare_image_data(&manifest, cfg.seed.unwrap_or(model.config.seed))?;
    let curve = data.evaluate(&model)?;
    emit_csv(&curve, cfg.out.as_deref())?;
    eprintln!(
        "area under DET {:.6}, miss rate {:.4} at 1e-2 false positives (over sampled negative windows)",
        area_under_det(&curve),
        curve.miss_at(1e-2)
    );
    Ok(())
}

fn report(runs: &[ExperimentRun], out: &Path) {
    println!("{:<10} {:>7} {:>12}", "run", "stages", "area_DET");
    for r in runs {
        println!(
            "{:<10} {:>7} {:>12.6}",
            r.name,
            r.training.model.stages.len(),
            r.aud
        );
    }
    println!("curves written to {}", out.display());
}

fn sweep_params(cfg: &RunConfig) -> Result<(BoostParams, Vec<usize>)> {
    let params = cfg.boost_params()?;
    let top = cfg.k.unwrap_or(5);
    Ok((params, (1..=top).collect()))
}

fn exp_k_sweep(cfg: RunConfig) -> Result<()> {
    let manifest = load_manifest(required(&cfg.manifest, "manifest")?)?;
    let out = required(&cfg.out, "out")?;
    let (params, ks) = sweep_params(&cfg)?;
    let runs = run_experiment_k_sweep(&manifest, &ks, &params, out)?;
    report(&runs, out);
    Ok(())
}

fn exp_mappings(cfg: RunConfig) -> Result<()> {
    let manifest = load_manifest(required(&cfg.manifest, "manifest")?)?;
    let out = required(&cfg.out, "out")?;
    let runs = run_experiment_mappings(&manifest, &cfg.boost_params()?, out)?;
    report(&runs, out);
    Ok(())
}

fn det_csv(scores: &Path, out: Option<&Path>) -> Result<()> {
    if !scores.is_file() {
        return Err(Error::MissingFile(scores.to_owned()));
    }
    let (pos, neg) = parse_scores(&std::fs::read_to_string(scores)?, scores)?;
    emit_csv(&compute_det(&pos, &neg)?, out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(f) => train(f.resolve()?),
        Command::Eval(f) => eval(f.resolve()?),
        Command::ExpKSweep(f) => exp_k_sweep(f.resolve()?),
        Command::ExpMappings(f) => exp_mappings(f.resolve()?),
        Command::DetCsv { scores, out } => det_csv(&scores, out.as_deref()),
        Command::Synth {
            out,
            seed,
            positives,
            negative_images,
        } => {
            let spec = SyntheticDatasetSpec {
                positives,
                negative_images,
                ..Default::default()
            };
            let manifest = write_synthetic_dataset(&out, &spec, seed)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("bad usage");
            eprintln!(
                "ERROR E_USAGE: {}",
                one_line(first.trim_start_matches("error:"))
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR {}: {}", e.code(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
