mod args;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use graphda::eval::{save_report_csv, write_group_comparison_tsv, write_report_csv};
use graphda::pipeline::{self, gen_synthetic, ExperimentConfig, Trained};
use graphda::{EmbeddingTable, Error, SplitDataset, Variant};

use args::{Cli, Command, EvaluateArgs, ExperimentArgs, SynthArgs};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        // downstream `head` and the like closing stdout early
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", chain_message(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn chain_message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if !msg.ends_with(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    msg
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => {
            let cfg = load(&a)?;
            let split = pipeline::prepare(&cfg)?;
            println!("{split}");
            println!("wrote {}", cfg.output_dir.join("split.tsv").display());
        }
        Command::Pretrain(a) => {
            let cfg = load(&a)?;
            let split = pipeline::prepare(&cfg)?;
            let trained = pipeline::pretrain(&cfg, &split)?;
            print_trained(&trained);
        }
        Command::Enhance(a) => {
            let cfg = load(&a)?;
            let split = pipeline::prepare(&cfg)?;
            let pretrained = pipeline::pretrain(&cfg, &split)?;
            let adj = pipeline::enhance(&cfg, &split, &pretrained, &cfg.enhance, &cfg.output_dir)?;
            println!(
                "enhanced adjacency {}x{} with {} stored entries ({} {})",
                adj.n_rows(),
                adj.n_cols(),
                adj.nnz(),
                cfg.variant,
                cfg.enhance
            );
        }
        Command::Retrain(a) => {
            let cfg = load(&a)?;
            let trained = through_model(&cfg)?.1;
            print_trained(&trained);
        }
        Command::Evaluate(a) => evaluate(&a)?,
        Command::Run(a) => {
            let cfg = load(&a)?;
            let outcome = pipeline::run(&cfg)?;
            let mut out = io::stdout().lock();
            match &outcome.enhanced {
                Some(enhanced) => write_group_comparison_tsv(&mut out, &outcome.baseline.test, &enhanced.test)?,
                None => write_report_csv(&mut out, &[&outcome.baseline.test])?,
            }
        }
        Command::Sweep(a) => {
            let cfg = load(&a)?;
            let outcome = pipeline::sweep(&cfg)?;
            let failed = outcome.cells.iter().filter(|c| c.outcome.is_err()).count();
            println!(
                "{} cells ({failed} failed), best {} by validation ndcg@{}",
                outcome.cells.len(),
                outcome.best,
                cfg.train.select_cutoff
            );
            write_group_comparison_tsv(&mut io::stdout().lock(), &outcome.baseline.test, &outcome.best_test)?;
        }
        Command::Synth(a) => synth(&a)?,
    }
    Ok(())
}

fn load(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = a.to_config().context("reading configuration")?;
    // later stages can pick up the split written by `prepare`
    let prepared = cfg.output_dir.join("split.tsv");
    if cfg.input.is_none() && cfg.split.is_none() && prepared.exists() {
        cfg.split = Some(prepared);
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn print_trained(t: &Trained) {
    match &t.trace {
        Some(trace) => println!(
            "{} epochs, best epoch {} (validation ndcg {:.5}); wrote {}",
            trace.epochs.len(),
            trace.best_epoch,
            trace.best_val_ndcg,
            t.checkpoint.display()
        ),
        None => println!("checkpoint {} already present", t.checkpoint.display()),
    }
}

/// Runs the stages the variant needs and returns its final model.
fn through_model(cfg: &ExperimentConfig) -> Result<(SplitDataset, Trained)> {
    let split = pipeline::prepare(cfg)?;
    let pretrained = pipeline::pretrain(cfg, &split)?;
    if cfg.variant == Variant::Baseline {
        return Ok((split, pretrained));
    }
    let adj = pipeline::enhance(cfg, &split, &pretrained, &cfg.enhance, &cfg.output_dir)?;
    let retrained = pipeline::retrain(cfg, &split, &adj, &cfg.enhance, &cfg.output_dir)?;
    Ok((split, retrained))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let cfg = load(&a.experiment)?;
    let (split, embeddings) = match &a.checkpoint {
        Some(path) => {
            let split = pipeline::prepare(&cfg)?;
            let (e, _) = EmbeddingTable::read_checkpoint(path).map_err(|e| e.in_stage("evaluate"))?;
            if e.n_rows() != split.n_users() + split.n_items() {
                let msg = format!(
                    "{} has {} rows, the split has {} users and {} items",
                    path.display(),
                    e.n_rows(),
                    split.n_users(),
                    split.n_items()
                );
                return Err(Error::Dimension(msg).in_stage("evaluate").into());
            }
            (split, e)
        }
        None => {
            let (split, trained) = through_model(&cfg)?;
            (split, trained.embeddings)
        }
    };
    let evaluated = pipeline::evaluate_model(&cfg, &embeddings, &split)?;
    let report: PathBuf = a
        .report
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(format!("report_{}.csv", cfg.variant)));
    save_report_csv(&report, &[&evaluated.validation, &evaluated.test]).map_err(|e| e.in_stage("report"))?;
    write_report_csv(&mut io::stdout().lock(), &[&evaluated.validation, &evaluated.test])?;
    log::info!("wrote {}", report.display());
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let data = gen_synthetic(&a.to_config())?;
    let tsv = data.to_tsv();
    if a.output == Path::new("-") {
        io::stdout().lock().write_all(tsv.as_bytes())?;
    } else {
        fs::write(&a.output, tsv).with_context(|| format!("writing {}", a.output.display()))?;
        eprintln!(
            "wrote {} interactions ({:.3} cross-block) to {}",
            data.raw.len(),
            data.cross_block_fraction(),
            a.output.display()
        );
    }
    Ok(())
}
