use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use dpnews::data::{write_behaviors_tsv, write_news_tsv};
use dpnews::eval::experiment::{
    evaluate_model, prepare_data, run_audits, run_sweep, serving_spec, synth_dataset, train_cell,
    DataSummary, ResultRecord, ResultsLog, TrainKey,
};
use dpnews::eval::{Config, ServingSpec};
use dpnews::fed::TrainMode;
use dpnews::model::checkpoint;
use dpnews::{Error, Result};

#[derive(Parser)]
#[command(name = "dpnews", version, about = "Private federated news recommendation simulator")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (for `sweep`, replaces the seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Results log (JSON lines); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the default configuration and exit.
    #[arg(long)]
    dump_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Federated training with per-round records.
    Train {
        #[arg(long)]
        mode: Option<TrainMode>,
        /// Where to write the final model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Serve the validation logs under the `[serve]` budget.
    ServeEval {
        /// Mode the checkpoint was trained with (echoed in the report).
        #[arg(long)]
        mode: Option<TrainMode>,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write a synthetic dataset: snapshot.json, news.tsv and behaviors.tsv
    /// under the directory given by `--out`.
    SynthData,
    /// Empirical privacy audits; exits non-zero unless every audit behaves.
    DpAudit,
    /// Full-factorial training and serving sweep.
    Sweep,
}

fn open_log(out: &Option<PathBuf>) -> Result<ResultsLog> {
    match out {
        Some(p) => ResultsLog::create(p),
        None => Ok(ResultsLog::stdout()),
    }
}

fn train(cfg: &Config, seed: u64, mode: TrainMode, out: &Option<PathBuf>, ckpt: Option<&Path>) -> Result<()> {
    let prep = prepare_data(cfg, seed)?;
    let mut log = open_log(out)?;
    log.append(&ResultRecord::Data(DataSummary::new(&prep, seed)))?;
    let key = TrainKey {
        mode,
        epsilon_t: cfg.train.train_privacy.epsilon,
        pad_prob: cfg.train.train_privacy.pad_prob,
        num_basis: cfg.model.num_basis,
        noise: cfg.train.train_privacy.noise_kind(),
        seed,
    }
    .canonical(cfg.model.num_basis);
    let spec = serving_spec(cfg, mode, key.noise, f64::INFINITY, 0.0);
    let validator = |m: &dpnews::model::ModelParams| {
        evaluate_model(&prep, m, &key, &spec, 1).map(|r| r.metrics)
    };
    let outcome = train_cell(cfg, &prep, &key, Some(&validator), &mut |r| {
        if let Some(v) = &r.validation {
            info!("round {} loss {:.4} auc {:.4}", r.round, r.mean_loss, v.auc);
        }
        log.append(&ResultRecord::Round(r.clone()))
    })?;
    log.finish()?;
    if let Some(path) = ckpt {
        checkpoint::save(&outcome.params, path)?;
    }
    Ok(())
}

fn serve_eval(cfg: &Config, seed: u64, mode: TrainMode, out: &Option<PathBuf>, ckpt: &Path) -> Result<()> {
    let params = checkpoint::load(ckpt)?;
    let prep = prepare_data(cfg, seed)?;
    if params.dims().vocab_size != prep.vocab_size {
        return Err(Error::Checkpoint(format!(
            "checkpoint vocabulary {} does not match the dataset's {}",
            params.dims().vocab_size,
            prep.vocab_size
        )));
    }
    let privacy = cfg.serve_privacy();
    let spec = if privacy.is_noiseless() {
        ServingSpec::noiseless(cfg.serve.mode, privacy.clip_norm)
    } else {
        ServingSpec {
            mode: cfg.serve.mode,
            privacy,
            activation: cfg.serve.activation,
        }
    };
    let key = TrainKey {
        mode,
        epsilon_t: cfg.train.train_privacy.epsilon,
        pad_prob: cfg.train.train_privacy.pad_prob,
        num_basis: params.basis.num_basis(),
        noise: privacy.noise_kind(),
        seed,
    };
    let report = evaluate_model(&prep, &params, &key, &spec, cfg.serve.repeats)?;
    info!("{} serving auc {:.4}", spec.mode, report.metrics.auc);
    let mut log = open_log(out)?;
    log.append(&ResultRecord::Metric(report))?;
    log.finish()
}

fn synth_data(cfg: &Config, seed: u64, out: &Option<PathBuf>) -> Result<()> {
    let dir = out
        .as_ref()
        .ok_or_else(|| Error::Config("synth-data needs --out DIR".into()))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let synth = synth_dataset(cfg, seed)?;
    synth.save_snapshot(&dir.join("snapshot.json"))?;
    write_news_tsv(&synth.dataset, &dir.join("news.tsv"))?;
    write_behaviors_tsv(&synth.dataset, &synth.dataset.logs, &dir.join("behaviors.tsv"))?;
    info!(
        "wrote {} news and {} logs to {}",
        synth.dataset.news.len(),
        synth.dataset.logs.len(),
        dir.display()
    );
    Ok(())
}

fn dp_audit(cfg: &Config, seed: u64, out: &Option<PathBuf>) -> Result<bool> {
    let mut log = open_log(out)?;
    let records = run_audits(cfg, seed, &mut |r| log.append(r))?;
    log.finish()?;
    for r in &records {
        let a = &r.result;
        eprintln!(
            "{} {:<9} eps={:<4} p={:<3} factor={:<3} eps_hat={:.3} upper={:.3}{}",
            if r.ok { "PASS" } else { "FAIL" },
            a.mechanism,
            a.epsilon,
            a.pad_prob,
            a.noise_factor,
            a.eps_hat,
            a.eps_upper,
            if r.control { " (negative control)" } else { "" }
        );
    }
    Ok(records.iter().all(|r| r.ok))
}

fn run(cli: Cli) -> Result<bool> {
    if cli.dump_defaults {
        print!("{}", Config::default().to_toml());
        return Ok(true);
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no command given (see --help)".into()));
    };
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.sweep.seeds = vec![seed];
    }
    let seed = cfg.seed;
    match command {
        Command::Train { mode, checkpoint } => {
            train(&cfg, seed, mode.unwrap_or(cfg.mode), &cli.out, checkpoint.as_deref())?
        }
        Command::ServeEval { mode, checkpoint } => {
            serve_eval(&cfg, seed, mode.unwrap_or(cfg.mode), &cli.out, &checkpoint)?
        }
        Command::SynthData => synth_data(&cfg, seed, &cli.out)?,
        Command::DpAudit => return dp_audit(&cfg, seed, &cli.out),
        Command::Sweep => {
            let mut log = open_log(&cli.out)?;
            run_sweep(&cfg, &mut |r| log.append(r))?;
            log.finish()?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
