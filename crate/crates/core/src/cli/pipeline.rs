//! In-memory experiment steps shared by the commands.

use crate::ati::{run_ati, AtiResult};
use crate::dataset::{
    load_features, load_labeled_targets, load_truth, subsample, synth_shift, Dataset, LoadOptions,
    Role, SampleSize,
};
use crate::error::{Error, Result};
use crate::eval::{score, EvalReport};
use crate::svm::{predict, train_ovo, OvoModel};

use super::config::{BaselineMode, DataMode, RunConfig};

#[derive(Debug, Clone)]
pub struct Inputs {
    pub source: Dataset,
    pub target: Dataset,
    /// Catalog class of every target, when ground truth is available.
    pub truth: Option<Vec<usize>>,
    /// `(target index, catalog class)` of annotated targets.
    pub labeled: Vec<(usize, usize)>,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let (source, target, truth) = match cfg.data {
        DataMode::Synth => {
            let data = synth_shift(&cfg.synth, cfg.seed)?;
            (data.source, data.target, Some(data.truth))
        }
        DataMode::Files => {
            let missing = |what: &str| Error::Config(format!("data = files needs a {what} path"));
            let source = load_features(cfg.source.as_ref().ok_or_else(|| missing("source"))?, &LoadOptions::source())?;
            let target_path = cfg.target.as_ref().ok_or_else(|| missing("target"))?;
            let target = load_features(target_path, &LoadOptions::target(source.catalog()))?;
            let truth = cfg.truth.as_ref().map(load_truth).transpose()?;
            (source, target, truth)
        }
    };
    let target = match cfg.n_targets {
        Some(n) => subsample(&target, SampleSize::Total(n), cfg.seed)?,
        None => target,
    };
    // annotations inside the target file count as labeled targets too
    let mut labeled: Vec<(usize, usize)> = target
        .labels()
        .iter()
        .enumerate()
        .filter_map(|(t, l)| l.map(|c| (t, c)))
        .collect();
    if let Some(path) = &cfg.labeled_targets {
        labeled.extend(load_labeled_targets(path, &target)?);
        labeled.sort_unstable();
        labeled.dedup();
    }
    let truth = truth.map(|t| t.class_indices(&target)).transpose()?;
    let target = target.with_labels(vec![None; target.len()])?;
    Ok(Inputs {
        source,
        target,
        truth,
        labeled,
    })
}

/// Labeled targets as a training set.
fn labeled_set(inputs: &Inputs) -> Result<Dataset> {
    let idx: Vec<usize> = inputs.labeled.iter().map(|&(t, _)| t).collect();
    let labels = inputs.labeled.iter().map(|&(_, c)| Some(c)).collect();
    inputs.target.select(&idx).with_role(Role::Source)?.with_labels(labels)
}

#[derive(Debug, Clone)]
pub struct Classified {
    pub model: OvoModel,
    pub predictions: Vec<usize>,
    pub report: Option<EvalReport>,
}

fn classify(train: &Dataset, inputs: &Inputs, cfg: &RunConfig) -> Result<Classified> {
    let model = train_ovo(train, &cfg.svm)?;
    let predictions = predict(&model, &inputs.target)?;
    let report = inputs
        .truth
        .as_ref()
        .map(|truth| score(&predictions, truth, inputs.target.catalog(), cfg.protocol))
        .transpose()?;
    Ok(Classified {
        model,
        predictions,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct Adapted {
    pub ati: AtiResult,
    pub classified: Classified,
}

/// Adapts the source, then trains on it plus any labeled targets.
pub fn adapt(inputs: &Inputs, cfg: &RunConfig) -> Result<Adapted> {
    let mut ati_cfg = cfg.ati.clone();
    ati_cfg.labeled_targets = inputs.labeled.clone();
    let ati = run_ati(&inputs.source, &inputs.target, &ati_cfg, inputs.truth.as_deref())?;
    let train = if inputs.labeled.is_empty() {
        ati.adapted.clone()
    } else {
        ati.adapted.concat(&labeled_set(inputs)?)?
    };
    let classified = classify(&train, inputs, cfg)?;
    Ok(Adapted { ati, classified })
}

/// Classifier without adaptation.
pub fn baseline(inputs: &Inputs, cfg: &RunConfig, mode: BaselineMode) -> Result<Classified> {
    let train = match mode {
        BaselineMode::Source => inputs.source.clone(),
        BaselineMode::Target | BaselineMode::Both if inputs.labeled.is_empty() => {
            return Err(Error::Config(format!("baseline mode {mode} needs labeled targets")))
        }
        BaselineMode::Target => labeled_set(inputs)?,
        BaselineMode::Both => inputs.source.concat(&labeled_set(inputs)?)?,
    };
    classify(&train, inputs, cfg)
}
