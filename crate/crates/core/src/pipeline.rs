//! Compositions of the building blocks that the command-line tool and the
//! end-to-end tests share.

use crate::calibration::{
    joint_calibrate, platt_fit, CalibrationFile, CalibrationParams, GridSpec, LossKind, Method,
    Param,
};
use crate::dataset::{Dataset, Supervision};
use crate::error::Result;
use crate::forest::ScoreMatrix;
use crate::svm::{assemble_training_set_fs, train_all, ClassSamples, LinearModel, SvmConfig};
use crate::weak::{alternate_train, init_latent, relabel, AlternationResult};

#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub models: Vec<LinearModel>,
    pub warnings: Vec<String>,
    /// Round history and assignments of weakly supervised training.
    pub alternation: Option<AlternationResult>,
}

/// Trains one model per class: directly on pixel-labeled data, by latent
/// alternation for at most `rounds` rounds on image-labeled data.
pub fn train(
    d: &Dataset,
    config: &SvmConfig,
    rounds: usize,
    track_loss: bool,
) -> Result<TrainedModels> {
    match d.supervision {
        Supervision::Full => {
            let set = assemble_training_set_fs(d)?;
            Ok(TrainedModels {
                models: train_all(d, &set.classes, config)?,
                warnings: set.warnings,
                alternation: None,
            })
        }
        Supervision::Weak => {
            let result = alternate_train(d, rounds, config, track_loss)?;
            let warnings = result
                .snapshots
                .last()
                .map(|a| a.warnings())
                .unwrap_or_default();
            Ok(TrainedModels {
                models: result.models.clone(),
                warnings,
                alternation: Some(result),
            })
        }
    }
}

/// Region samples with their region-level labels, per class. Fully
/// supervised data uses the SVM training samples; weakly supervised data
/// uses the latent labels the models induce.
pub fn region_samples(d: &Dataset, models: &[LinearModel]) -> Result<Vec<ClassSamples>> {
    match d.supervision {
        Supervision::Full => Ok(assemble_training_set_fs(d)?.classes),
        Supervision::Weak => {
            let initial = init_latent(d)?;
            Ok(relabel(d, models, &initial)?.samples())
        }
    }
}

/// Platt scaling for every class on its region samples. Classes without
/// both positives and negatives, or untrainable ones, keep the grid's
/// initial parameters.
pub fn platt_calibrate(
    d: &Dataset,
    models: &[LinearModel],
    samples: &[ClassSamples],
    grid: &GridSpec,
) -> Result<CalibrationParams> {
    let mut params = grid.initial_params(d.class_count);
    for (class, (model, s)) in models.iter().zip(samples).enumerate() {
        if !model.is_trainable() || !s.is_trainable() {
            continue;
        }
        let scores: Vec<f64> = s
            .positives
            .iter()
            .chain(&s.negatives)
            .map(|src| model.score(src.features(d)))
            .collect();
        let positive: Vec<bool> = (0..scores.len()).map(|i| i < s.positives.len()).collect();
        let fit = platt_fit(&scores, &positive, grid)?;
        params.set(class, Param::A, fit.params.a);
        params.set(class, Param::B, fit.params.b);
    }
    Ok(params)
}

/// Runs one calibration method on a training set and packages the result.
pub fn calibrate(
    d: &Dataset,
    models: &[LinearModel],
    scores: &[ScoreMatrix],
    method: Method,
    grid: &GridSpec,
) -> Result<CalibrationFile> {
    grid.validate()?;
    let kind = LossKind::for_supervision(d.supervision);
    Ok(match method {
        Method::None => CalibrationFile::new(method, kind, &grid.initial_params(d.class_count)),
        Method::Platt => {
            let samples = region_samples(d, models)?;
            let params = platt_calibrate(d, models, &samples, grid)?;
            CalibrationFile::new(method, kind, &params)
        }
        Method::Jc => {
            let result = joint_calibrate(d, scores, kind, grid)?;
            CalibrationFile::new(method, kind, &result.params).with_trace(&result.trace)
        }
    })
}
