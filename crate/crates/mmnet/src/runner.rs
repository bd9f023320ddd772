//! The commands behind the CLI: train, eval, gen-data, dump-act and gradcheck.

use std::io::Write;
use std::path::{Path, PathBuf};

use mmnet_core::data::{split_folds, EpisodeSampler, SampleSource, SyntheticSource};
use mmnet_core::metrics::IouReport;
use mmnet_core::model::MmNet;
use mmnet_core::rng::Purpose;
use mmnet_core::suite::{run_gradcheck_suite, StageResult};
use mmnet_core::train::{evaluate, StepMetrics, Trainer};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::csv::{format_sig9, CsvWriter};
use crate::dataset::{write_synthetic_dataset, DiskDataset};
use crate::error::RunError;
use crate::netpbm::{min_max_scale, read_ppm, write_pgm};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.txt";

/// Samples from the configured dataset root, or generated in memory.
pub fn open_source(cfg: &RunConfig) -> Result<Box<dyn SampleSource>, RunError> {
    Ok(match &cfg.data_root {
        Some(root) => Box::new(DiskDataset::open(root)?),
        None => Box::new(SyntheticSource::new(cfg.data.clone())?),
    })
}

fn sampler<'a>(
    cfg: &RunConfig,
    source: &'a (dyn SampleSource + 'a),
    classes: Vec<usize>,
    shots: usize,
    purpose: Purpose,
) -> EpisodeSampler<'a, dyn SampleSource + 'a> {
    EpisodeSampler {
        source,
        classes,
        shots,
        feature_stride: cfg.model.backbone.stride,
        seed: cfg.seed,
        purpose,
    }
}

fn create_dir(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MmNet,
    pub history: Vec<StepMetrics>,
    pub checkpoint: PathBuf,
}

/// Episodic training on the base classes of the configured fold. Writes
/// `config.txt`, `metrics.csv` and checkpoints into `out_dir`.
pub fn train(
    cfg: &RunConfig,
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<TrainOutcome, RunError> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let config_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_text()).map_err(|e| RunError::io(&config_path, e))?;

    let source = open_source(cfg)?;
    let (train_classes, _) = split_folds(&cfg.fold)?;
    let episodes = sampler(
        cfg,
        source.as_ref(),
        train_classes,
        cfg.shots,
        Purpose::TrainEpisode,
    );
    let model = MmNet::new(cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.sgd)?;

    let metrics_path = out_dir.join(METRICS_FILE);
    let mut csv = CsvWriter::create(
        &metrics_path,
        &["iteration", "seg_loss", "recon_loss", "total_loss"],
    )?;
    let mut history = Vec::with_capacity(cfg.iterations as usize);
    let batch = cfg.batch as u64;
    for it in 0..u64::from(cfg.iterations) {
        let eps = (0..batch)
            .map(|b| episodes.episode(it * batch + b))
            .collect::<Result<Vec<_>, _>>()?;
        let m = trainer.step(&eps)?;
        csv.row(&[
            m.iteration.to_string(),
            format_sig9(m.seg),
            format_sig9(m.recon),
            format_sig9(m.total),
        ])?;
        if m.iteration % 100 == 0 || m.iteration == cfg.iterations {
            // Progress output is best effort.
            let _ = writeln!(
                log,
                "iter {} seg {:.4} recon {:.4} total {:.4}",
                m.iteration, m.seg, m.recon, m.total
            );
        }
        if cfg.checkpoint_every > 0
            && m.iteration % cfg.checkpoint_every == 0
            && m.iteration < cfg.iterations
        {
            Checkpoint::from_params(&trainer.model.params, m.iteration, cfg.seed)
                .save(&out_dir.join(format!("checkpoint_{}.bin", m.iteration)))?;
        }
        history.push(m);
    }
    csv.finish()?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    Checkpoint::from_params(&trainer.model.params, trainer.iteration, cfg.seed)
        .save(&checkpoint)?;
    Ok(TrainOutcome {
        model: trainer.model,
        history,
        checkpoint,
    })
}

/// Builds the configured model and, when given, loads checkpoint weights into it.
pub fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<MmNet, RunError> {
    let mut model = MmNet::new(cfg.model.clone(), cfg.seed)?;
    if let Some(path) = checkpoint {
        Checkpoint::load(path)?
            .apply(&mut model.params)
            .map_err(|source| RunError::Checkpoint {
                path: path.to_path_buf(),
                source,
            })?;
    }
    Ok(model)
}

/// Foreground IoU on `episodes` novel-class episodes with `shots` supports.
pub fn evaluate_model(
    cfg: &RunConfig,
    model: &MmNet,
    shots: usize,
    episodes: u64,
) -> Result<IouReport, RunError> {
    if shots == 0 || episodes == 0 {
        return Err(RunError::Usage(
            "shots and episodes must be at least 1".into(),
        ));
    }
    let source = open_source(cfg)?;
    let (_, test_classes) = split_folds(&cfg.fold)?;
    let s = sampler(
        cfg,
        source.as_ref(),
        test_classes,
        shots,
        Purpose::EvalEpisode,
    );
    Ok(evaluate(model, &s, episodes, cfg.eval_mode)?)
}

/// Writes `class_id,iou` rows and a final `mean` row.
pub fn write_eval_csv(report: &IouReport, path: &Path) -> Result<(), RunError> {
    let mut csv = CsvWriter::create(path, &["class_id", "iou"])?;
    for (c, iou) in &report.per_class {
        csv.row(&[c.to_string(), format_sig9(*iou)])?;
    }
    csv.row(&["mean".to_string(), format_sig9(report.mean_iou)])?;
    csv.finish()
}

pub fn print_report(report: &IouReport, out: &mut dyn Write) -> std::io::Result<()> {
    for (c, iou) in &report.per_class {
        writeln!(out, "class {c}: IoU {iou:.4}")?;
    }
    for c in &report.excluded {
        writeln!(out, "warning: class {c} excluded (empty union)")?;
    }
    writeln!(out, "mIoU {:.4}", report.mean_iou)
}

/// Generates the synthetic dataset described by `cfg.data` (with `seed`) under `out`.
pub fn gen_data(cfg: &RunConfig, seed: u64, out: &Path) -> Result<usize, RunError> {
    let mut spec = cfg.data.clone();
    spec.seed = seed;
    create_dir(out)?;
    write_synthetic_dataset(&spec, out)
}

/// Writes `act_<n>.pgm` for every meta-class channel of `image`, each
/// min-max scaled on its own. Returns the written paths.
pub fn dump_activations(model: &MmNet, image: &Path, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    let img = read_ppm(image)?;
    let act = model.activations(&img)?;
    let (n, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2]);
    create_dir(out)?;
    let plane = h * w;
    (0..n)
        .map(|c| {
            let ch = mmnet_core::Tensor::new(
                vec![h, w],
                act.data()[c * plane..(c + 1) * plane].to_vec(),
            )?;
            let path = out.join(format!("act_{c}.pgm"));
            write_pgm(&min_max_scale(&ch), &path)?;
            Ok(path)
        })
        .collect()
}

/// Runs the gradient suite and fails when any stage exceeds the tolerance.
pub fn gradcheck(out: &mut dyn Write) -> Result<Vec<StageResult>, RunError> {
    let results = run_gradcheck_suite(None)?;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        let _ = writeln!(
            out,
            "{:<24} max rel error {:.3e}  {verdict}",
            r.name, r.max_error
        );
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.to_string())
        .collect();
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(RunError::GradcheckFailed(failed))
    }
}
