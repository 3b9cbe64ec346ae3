//! Cross-validated training and checkpoint evaluation over files on disk.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use sleepfuse_core::encoders::ExternalEmbeddingStore;
use sleepfuse_core::experiment::{
    evaluate, plan_folds, render_report, run_fold, CrossValReport, EvalReport, ModelSpec, Sample,
};

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::RunConfig;
use crate::dataset::{Dataset, LoadReport};
use crate::error::{Error, Result};
use crate::exchange::read_store;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const LOAD_JSON: &str = "dataset.json";

pub fn checkpoint_name(fold: usize) -> String {
    format!("fold{fold}.sfck")
}

fn read_optional_store(p: Option<&Path>) -> Result<Option<ExternalEmbeddingStore>> {
    p.map(read_store).transpose()
}

/// Samples plus the model they feed, from either token features or
/// external embedding files.
pub fn prepare(cfg: &RunConfig) -> Result<(Vec<Sample>, ModelSpec, LoadReport)> {
    let data = cfg.data.as_deref().ok_or_else(|| Error::Config("no dataset manifest".into()))?;
    let ds = Dataset::open(data)?;
    if cfg.uses_external_embeddings() {
        let eog = read_optional_store(cfg.eog_embeddings.as_deref())?;
        let psm = read_optional_store(cfg.psm_embeddings.as_deref())?;
        let (samples, load) = ds.embedding_samples(cfg.train.mode, eog.as_ref(), psm.as_ref())?;
        let spec = ModelSpec::External {
            eog_dim: eog.as_ref().map_or(0, |s| s.dim()),
            psm_dim: psm.as_ref().map_or(0, |s| s.dim()),
        };
        Ok((samples, spec, load))
    } else {
        let (samples, load) = ds.token_samples(&cfg.mel, &cfg.encoder)?;
        Ok((samples, ModelSpec::toy(cfg.encoder.clone(), &cfg.mel), load))
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(Error::io(path))
}

/// Runs every fold (in parallel), then writes `report.json`, `report.txt`,
/// `dataset.json` and one checkpoint per fold into the output directory.
/// Nothing in the outputs depends on wall time or thread count.
pub fn train(cfg: &RunConfig) -> Result<CrossValReport> {
    cfg.validate()?;
    let out = cfg.out.as_deref().ok_or_else(|| Error::Config("no output directory".into()))?;
    let (samples, spec, load) = prepare(cfg)?;
    info!(
        "loaded {} epochs from {} patients ({} dropped)",
        load.epochs(),
        load.patients.len(),
        load.dropped()
    );
    let ids: Vec<String> = load.patients.iter().filter(|p| p.epochs > 0).map(|p| p.patient_id.clone()).collect();
    let plan = plan_folds(&ids, cfg.folds, cfg.fold_seed)?;
    let hash = cfg.fingerprint(spec.method());

    let outcomes: Vec<_> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let o = run_fold(&samples, &spec, &cfg.train, &plan, fold)?;
            info!("fold {fold}: accuracy {:.3}, macro-F1 {:.3}", o.report.eval.accuracy, o.report.eval.macro_f1);
            Ok(o)
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .collect::<Result<_>>()?;

    fs::create_dir_all(out).map_err(Error::io(out))?;
    let mut folds = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let fold = o.report.fold;
        let meta = CheckpointMeta::for_model(&o.model, &spec, &cfg.mel, fold, &hash);
        checkpoint::save(&out.join(checkpoint_name(fold)), &o.model, &meta)?;
        folds.push(o.report);
    }
    let mut report = CrossValReport::from_folds(spec.method(), cfg.train, plan.seed, folds)?;
    report.fingerprint = hash;
    write_json(&out.join(REPORT_JSON), &report)?;
    write_json(&out.join(LOAD_JSON), &load)?;
    let text = render_report(std::slice::from_ref(&report))?;
    fs::write(out.join(REPORT_TEXT), text).map_err(Error::io(&out.join(REPORT_TEXT)))?;
    Ok(report)
}

/// Where `evaluate` finds its inputs.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub eog_embeddings: Option<PathBuf>,
    pub psm_embeddings: Option<PathBuf>,
}

/// Scores a saved fold model on every scored epoch of a dataset, with the
/// featurization settings recorded next to the checkpoint.
pub fn evaluate_checkpoint(inputs: &EvalInputs) -> Result<EvalReport> {
    let (model, meta) = checkpoint::load(&inputs.checkpoint)?;
    let ds = Dataset::open(&inputs.data)?;
    let (samples, _) = match &meta.model {
        ModelSpec::Toy { encoder, .. } => ds.token_samples(&meta.mel, encoder)?,
        ModelSpec::External { .. } => {
            let eog = read_optional_store(inputs.eog_embeddings.as_deref())?;
            let psm = read_optional_store(inputs.psm_embeddings.as_deref())?;
            ds.embedding_samples(meta.mode, eog.as_ref(), psm.as_ref())?
        }
    };
    let refs: Vec<&Sample> = samples.iter().collect();
    Ok(evaluate(&model, &refs)?)
}

pub fn read_report(path: &Path) -> Result<CrossValReport> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortSpec};
    use sleepfuse_core::encoders::EncoderConfig;
    use sleepfuse_core::experiment::Hyperparameters;
    use sleepfuse_core::fusion::TrainingRegime;

    fn small_config(dir: &Path) -> RunConfig {
        let spec = CohortSpec {
            n_patients: 4,
            n_epochs: 6,
            seed: 3,
            ..CohortSpec::default()
        };
        generate_cohort(&dir.join("cohort"), &spec).unwrap();
        RunConfig {
            data: Some(dir.join("cohort/manifest.json")),
            out: Some(dir.join("run")),
            folds: 2,
            train: Hyperparameters {
                initial_lr: 1e-3,
                epochs: 1,
                ..Hyperparameters::default()
            },
            encoder: EncoderConfig {
                model_dim: 8,
                head_count: 2,
                ff_hidden: 8,
                embedding_dim: 4,
                ..EncoderConfig::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn train_writes_reports_and_loadable_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let report = train(&cfg).unwrap();
        assert_eq!(report.folds.len(), 2);
        assert_eq!(report.fingerprint, cfg.fingerprint("toy_encoders"));
        let run = dir.path().join("run");
        assert_eq!(read_report(&run.join(REPORT_JSON)).unwrap(), report);
        for f in 0..2 {
            let eval = evaluate_checkpoint(&EvalInputs {
                checkpoint: run.join(checkpoint_name(f)),
                data: dir.path().join("cohort/manifest.json"),
                ..EvalInputs::default()
            })
            .unwrap();
            assert_eq!(eval.confusion.total(), 24);
        }
        // The held-out patients of each fold score the same as during training.
        let (model, _) = checkpoint::load(&run.join(checkpoint_name(0))).unwrap();
        let (samples, _, _) = prepare(&cfg).unwrap();
        let test: Vec<&Sample> = samples
            .iter()
            .filter(|s| report.folds[0].test_patients.contains(&s.patient_id))
            .collect();
        assert_eq!(evaluate(&model, &test).unwrap(), report.folds[0].eval);
    }

    #[test]
    fn external_fine_tune_is_rejected_before_loading() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            data: Some(dir.path().join("absent.json")),
            out: Some(dir.path().join("run")),
            eog_embeddings: Some(dir.path().join("e.sfeb")),
            psm_embeddings: Some(dir.path().join("p.sfeb")),
            train: Hyperparameters {
                regime: TrainingRegime::FineTune,
                ..Hyperparameters::default()
            },
            ..RunConfig::default()
        };
        let err = train(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
    }
}
