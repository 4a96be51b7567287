//! Stage orchestration: prepare, pretrain, enhance, retrain, evaluate,
//! report, and grid sweeps over the enhancement parameters.
//!
//! Every stage persists its artifact under the output directory and is
//! skipped on later runs when the artifact already exists, unless
//! `force` is set. Artifacts:
//!
//! | file | content |
//! |------|---------|
//! | `split.tsv` | leave-one-out split manifest |
//! | `pretrain.ckpt`, `pretrain.trace.csv` | pre-trained output embeddings and training curve |
//! | `enhanced_<variant>_<cfg>.coo` (+ `.manifest`) | enhanced adjacency |
//! | `retrain_<variant>_<cfg>.ckpt` | re-trained output embeddings |
//! | `report_baseline.csv`, `report_<variant>.csv` | metrics, long format |
//! | `groups_<variant>.tsv` | per-group baseline vs variant (test phase) |
//! | `sweep_<variant>.csv`, `sweep/<variant>_<cfg>/` | sweep grid and per-cell artifacts |

mod config;
pub mod synth;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

pub use config::{ExperimentConfig, RetrainOverrides, SweepGrids, Variant};
pub use synth::{gen_synthetic, SynthConfig, Synthetic};

use crate::dataset::{build_log, chronological_split, load_interactions, InputFormat, SplitDataset};
use crate::encoder::{train, EmbeddingTable, TrainConfig, TrainTrace};
use crate::enhance::{enhance_adjacency, EnhanceConfig, EnhanceManifest};
use crate::error::{Error, Result};
use crate::eval::{evaluate_grouped, save_report_csv, write_group_comparison_tsv, MetricsReport, Phase};
use crate::graph::{build_adjacency, normalize_sym, SparseMatrix};

/// Binary user-item matrix of the split's train pairs.
pub fn train_matrix(split: &SplitDataset) -> Result<SparseMatrix> {
    SparseMatrix::from_pattern(
        split.n_users(),
        split.n_items(),
        split.train_pairs().map(|(u, i)| (u as usize, i as usize)),
    )
}

/// Normalised propagation matrix of the observed train graph.
pub fn baseline_laplacian(split: &SplitDataset) -> Result<SparseMatrix> {
    normalize_sym(&build_adjacency(&train_matrix(split)?, None, None)?)
}

/// Ingests raw interactions into a split.
pub fn prepare_split(input: &Path, format: Option<InputFormat>, k_core: usize) -> Result<SplitDataset> {
    let format = format.unwrap_or_else(|| InputFormat::from_path(input));
    let raw = load_interactions(input, format)?;
    let log = build_log(&raw, k_core)?;
    info!(
        "loaded {} raw rows -> {} users, {} items, {} interactions",
        raw.len(),
        log.n_users,
        log.n_items,
        log.len()
    );
    chronological_split(&log)
}

/// Validation and test reports of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluated {
    pub validation: MetricsReport,
    pub test: MetricsReport,
}

impl Evaluated {
    pub fn compute(e: &EmbeddingTable, split: &SplitDataset, cutoffs: &[usize], boundaries: &[usize]) -> Result<Self> {
        Ok(Evaluated {
            validation: evaluate_grouped(e, split, Phase::Validation, cutoffs, boundaries)?,
            test: evaluate_grouped(e, split, Phase::Test, cutoffs, boundaries)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub variant: Variant,
    pub baseline: Evaluated,
    pub enhanced: Option<Evaluated>,
    /// Absent when the stage was resumed from a checkpoint.
    pub pretrain_trace: Option<TrainTrace>,
    pub retrain_trace: Option<TrainTrace>,
    /// Training runs actually executed (resumed stages do not count).
    pub n_training_runs: usize,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub config: EnhanceConfig,
    pub outcome: std::result::Result<MetricsReport, String>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub best: EnhanceConfig,
    pub best_validation: MetricsReport,
    pub best_test: MetricsReport,
    pub baseline: Evaluated,
    pub pretrain_runs: usize,
    pub retrain_runs: usize,
}

fn eval_cutoffs(cfg: &ExperimentConfig) -> Vec<usize> {
    let mut c = cfg.cutoffs.clone();
    c.push(cfg.train.select_cutoff);
    c.sort_unstable();
    c.dedup();
    c
}

fn fresh(path: &Path, force: bool) -> bool {
    force || !path.exists()
}

fn write_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "epoch,loss,val_ndcg")?;
        writeln!(w, "0,,{}", trace.initial_val_ndcg)?;
        for r in &trace.epochs {
            writeln!(w, "{},{},{}", r.epoch, r.loss, r.val_ndcg)?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Output of a training stage.
#[derive(Clone, Debug)]
pub struct Trained {
    /// Propagated output embeddings of the selected epoch.
    pub embeddings: EmbeddingTable,
    /// Absent when the stage was resumed from a checkpoint.
    pub trace: Option<TrainTrace>,
    pub checkpoint: PathBuf,
}

/// Loads or builds the split (`split.tsv`).
pub fn prepare(cfg: &ExperimentConfig) -> Result<SplitDataset> {
    let inner = || {
        fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
        let path = cfg.output_dir.join("split.tsv");
        if !fresh(&path, cfg.force) {
            info!("prepare: reusing {}", path.display());
            return SplitDataset::read_manifest(&path);
        }
        let split = match (&cfg.split, &cfg.input) {
            (Some(manifest), _) => SplitDataset::read_manifest(manifest)?,
            (None, Some(input)) => prepare_split(input, cfg.format, cfg.k_core)?,
            (None, None) => return Err(Error::InvalidArgument("no input or split configured".into())),
        };
        split.write_manifest(&path)?;
        info!("prepare: {split}");
        Ok(split)
    };
    inner().map_err(|e| e.in_stage("prepare"))
}

/// Trains on `l` and persists the checkpoint, or loads an existing one.
fn stage_train(
    split: &SplitDataset,
    l: impl FnOnce() -> Result<SparseMatrix>,
    tc: &TrainConfig,
    ckpt: &Path,
    force: bool,
) -> Result<Trained> {
    if !fresh(ckpt, force) {
        info!("reusing {}", ckpt.display());
        let (e, _) = EmbeddingTable::read_checkpoint(ckpt)?;
        if e.n_rows() != split.n_users() + split.n_items() || e.dim() != tc.dim {
            return Err(Error::Dimension(format!(
                "{} does not match the split or configured dim",
                ckpt.display()
            )));
        }
        return Ok(Trained {
            embeddings: e,
            trace: None,
            checkpoint: ckpt.to_path_buf(),
        });
    }
    let l = l()?;
    let (e, trace) = train(split, &l, tc)?;
    info!(
        "trained {} epochs, best epoch {} (val ndcg@{} {:.5})",
        trace.epochs.len(),
        trace.best_epoch,
        tc.select_cutoff,
        trace.best_val_ndcg
    );
    e.write_checkpoint(ckpt, tc.seed)?;
    write_trace(&ckpt.with_extension("trace.csv"), &trace)?;
    Ok(Trained {
        embeddings: e,
        trace: Some(trace),
        checkpoint: ckpt.to_path_buf(),
    })
}

/// Pre-trains on the observed train graph (`pretrain.ckpt`).
pub fn pretrain(cfg: &ExperimentConfig, split: &SplitDataset) -> Result<Trained> {
    let ckpt = cfg.output_dir.join("pretrain.ckpt");
    stage_train(split, || baseline_laplacian(split), &cfg.train, &ckpt, cfg.force).map_err(|e| e.in_stage("pretrain"))
}

fn variant_tag(cfg: &ExperimentConfig, enhance: &EnhanceConfig) -> String {
    format!("{}_{enhance}", cfg.variant)
}

/// Builds the enhanced adjacency for `enhance` inside `dir`, or loads it.
pub fn enhance(
    cfg: &ExperimentConfig,
    split: &SplitDataset,
    pretrained: &Trained,
    enhance: &EnhanceConfig,
    dir: &Path,
) -> Result<SparseMatrix> {
    let inner = || {
        let kind = cfg
            .variant
            .enhancement()
            .ok_or_else(|| Error::InvalidArgument("baseline has no enhancement stage".into()))?;
        let tag = variant_tag(cfg, enhance);
        let path = dir.join(format!("enhanced_{tag}.coo"));
        if !fresh(&path, cfg.force) {
            info!("enhance: reusing {}", path.display());
            return SparseMatrix::read_coo(&path);
        }
        let a = enhance_adjacency(&pretrained.embeddings, split.n_users(), enhance, kind)?;
        a.write_coo(&path)?;
        EnhanceManifest {
            config: *enhance,
            checkpoint: pretrained.checkpoint.display().to_string(),
            variant: cfg.variant.to_string(),
        }
        .write(path.with_extension("coo.manifest"))?;
        info!("enhance {tag}: {} stored entries", a.nnz());
        Ok(a)
    };
    inner().map_err(|e| e.in_stage("enhance"))
}

/// Re-trains from a fresh initialisation on `adjacency` inside `dir`.
pub fn retrain(
    cfg: &ExperimentConfig,
    split: &SplitDataset,
    adjacency: &SparseMatrix,
    enhance: &EnhanceConfig,
    dir: &Path,
) -> Result<Trained> {
    let ckpt = dir.join(format!("retrain_{}.ckpt", variant_tag(cfg, enhance)));
    stage_train(split, || normalize_sym(adjacency), &cfg.retrain_config(), &ckpt, cfg.force)
        .map_err(|e| e.in_stage("retrain"))
}

fn run_enhanced(
    cfg: &ExperimentConfig,
    split: &SplitDataset,
    pretrained: &Trained,
    enhance_cfg: &EnhanceConfig,
    dir: &Path,
) -> Result<Trained> {
    let a = enhance(cfg, split, pretrained, enhance_cfg, dir)?;
    retrain(cfg, split, &a, enhance_cfg, dir)
}

/// Evaluates `e` on validation and test with the configured cutoffs and groups.
pub fn evaluate_model(cfg: &ExperimentConfig, e: &EmbeddingTable, split: &SplitDataset) -> Result<Evaluated> {
    Evaluated::compute(e, split, &eval_cutoffs(cfg), &cfg.group_boundaries).map_err(|e| e.in_stage("evaluate"))
}

/// Runs the configured variant end to end.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let split = prepare(cfg)?;
    let pretrained = pretrain(cfg, &split)?;
    let mut n_training_runs = pretrained.trace.is_some() as usize;
    let baseline = evaluate_model(cfg, &pretrained.embeddings, &split)?;
    save_report_csv(
        cfg.output_dir.join("report_baseline.csv"),
        &[&baseline.validation, &baseline.test],
    )
    .map_err(|e| e.in_stage("report"))?;

    if cfg.variant == Variant::Baseline {
        return Ok(RunOutcome {
            variant: cfg.variant,
            baseline,
            enhanced: None,
            pretrain_trace: pretrained.trace,
            retrain_trace: None,
            n_training_runs,
        });
    }

    let retrained = run_enhanced(cfg, &split, &pretrained, &cfg.enhance, &cfg.output_dir)?;
    n_training_runs += retrained.trace.is_some() as usize;
    let enhanced = evaluate_model(cfg, &retrained.embeddings, &split)?;
    write_reports(cfg, &baseline, &enhanced, "").map_err(|e| e.in_stage("report"))?;

    Ok(RunOutcome {
        variant: cfg.variant,
        baseline,
        enhanced: Some(enhanced),
        pretrain_trace: pretrained.trace,
        retrain_trace: retrained.trace,
        n_training_runs,
    })
}

fn write_reports(cfg: &ExperimentConfig, baseline: &Evaluated, enhanced: &Evaluated, suffix: &str) -> Result<()> {
    let variant = cfg.variant;
    save_report_csv(
        cfg.output_dir.join(format!("report_{variant}{suffix}.csv")),
        &[&enhanced.validation, &enhanced.test],
    )?;
    let path = cfg.output_dir.join(format!("groups_{variant}{suffix}.tsv"));
    let mut buf = Vec::new();
    write_group_comparison_tsv(&mut buf, &baseline.test, &enhanced.test).expect("writing to memory");
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))
}

/// Grid search over the enhancement parameters from one shared pre-train.
/// Cells are chosen by validation NDCG at the configured selection cutoff;
/// only the winning cell is evaluated on test.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    if cfg.grids.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one non-empty grid".into()));
    }
    if cfg.variant == Variant::Baseline {
        return Err(Error::InvalidArgument("sweep needs variant enhanced_ui or graphda".into()));
    }
    let cutoffs = eval_cutoffs(cfg);
    let select = cfg.train.select_cutoff;
    let split = prepare(cfg)?;
    let pretrained = pretrain(cfg, &split)?;
    let baseline = evaluate_model(cfg, &pretrained.embeddings, &split)?;

    let cells = cfg.grids.cells(&cfg.enhance);
    let results: Vec<(CellResult, bool)> = cells
        .par_iter()
        .map(|cell| {
            let dir = cfg.output_dir.join("sweep").join(format!("{}_{cell}", cfg.variant));
            let attempt = fs::create_dir_all(&dir)
                .map_err(|e| Error::io(&dir, e))
                .and_then(|_| run_enhanced(cfg, &split, &pretrained, cell, &dir))
                .and_then(|t| {
                    let report = crate::eval::evaluate(&t.embeddings, &split, Phase::Validation, &cutoffs)
                        .map_err(|e| e.in_stage("evaluate"))?;
                    Ok((report, t.trace.is_some()))
                });
            match attempt {
                Ok((report, trained)) => (
                    CellResult {
                        config: *cell,
                        outcome: Ok(report),
                    },
                    trained,
                ),
                Err(e) => {
                    warn!("sweep cell {cell} failed: {e}");
                    (
                        CellResult {
                            config: *cell,
                            outcome: Err(e.to_string()),
                        },
                        false,
                    )
                }
            }
        })
        .collect();
    let retrain_runs = results.iter().filter(|(_, t)| *t).count();
    let cells: Vec<CellResult> = results.into_iter().map(|(c, _)| c).collect();
    write_sweep_csv(&cfg.output_dir.join(format!("sweep_{}.csv", cfg.variant)), &cells)
        .map_err(|e| e.in_stage("report"))?;

    let mut best: Option<(&CellResult, f64)> = None;
    for c in &cells {
        if let Ok(r) = &c.outcome {
            let v = r.overall.ndcg_at(select).expect("selection cutoff is evaluated");
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((c, v));
            }
        }
    }
    let (best_cell, _) = best.ok_or_else(|| Error::InvalidArgument("every sweep cell failed".into()))?;
    let best_cfg = best_cell.config;
    let dir = cfg.output_dir.join("sweep").join(format!("{}_{best_cfg}", cfg.variant));
    let (best_e, _) = EmbeddingTable::read_checkpoint(dir.join(format!("retrain_{}_{best_cfg}.ckpt", cfg.variant)))
        .map_err(|e| e.in_stage("evaluate"))?;
    let best_eval = evaluate_model(cfg, &best_e, &split)?;
    save_report_csv(
        cfg.output_dir.join("report_baseline.csv"),
        &[&baseline.validation, &baseline.test],
    )
    .map_err(|e| e.in_stage("report"))?;
    write_reports(cfg, &baseline, &best_eval, "_best").map_err(|e| e.in_stage("report"))?;
    info!("sweep: best cell {best_cfg}");

    Ok(SweepOutcome {
        best: best_cfg,
        best_validation: best_eval.validation,
        best_test: best_eval.test,
        baseline,
        cells,
        pretrain_runs: pretrained.trace.is_some() as usize,
        retrain_runs,
    })
}

/// `items_per_user,users_per_item,users_per_user,items_per_item,status,metric,cutoff,value`
/// with validation metrics of every cell.
fn write_sweep_csv(path: &Path, cells: &[CellResult]) -> Result<()> {
    let mut s = String::from("items_per_user,users_per_item,users_per_user,items_per_item,status,metric,cutoff,value\n");
    for c in cells {
        let k = c.config;
        let prefix = format!(
            "{},{},{},{}",
            k.items_per_user, k.users_per_item, k.users_per_user, k.items_per_item
        );
        match &c.outcome {
            Ok(r) => {
                for (j, &cut) in r.overall.cutoffs.iter().enumerate() {
                    s.push_str(&format!("{prefix},ok,hr,{cut},{}\n", r.overall.hr[j]));
                    s.push_str(&format!("{prefix},ok,ndcg,{cut},{}\n", r.overall.ndcg[j]));
                }
            }
            Err(msg) => {
                let msg = msg.replace(['\n', ','], " ");
                s.push_str(&format!("{prefix},failed: {msg},,,\n"));
            }
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
