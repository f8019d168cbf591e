//! One-vs-all linear SVMs with squared hinge loss.
//!
//! Each class is trained on its own positives and negatives with the
//! objective
//!
//! ```text
//! reg / 2 * |w|^2 + sum_s weight_s * max(0, 1 - y_s * w . [x_s, 1])^2
//! ```
//!
//! where positives weigh `(N+ + N-) / (2 N+)` and negatives
//! `(N+ + N-) / (2 N-)`. The last weight component multiplies a constant 1
//! and acts as the bias. The objective is minimized with a generalized
//! Newton method and backtracking line search, so it decreases strictly at
//! every iteration. Large negative pools go through hard-negative mining.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassId, Dataset, ImageId, RegionId, Supervision};
use crate::error::{Error, Result};
use crate::forest::ScoreMatrix;

pub const DEFAULT_REG: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub class_id: ClassId,
    /// `feature_dim + 1` weights, bias last. `None` for a class that could
    /// not be trained; such a class scores negative infinity everywhere.
    pub weights: Option<Vec<f64>>,
}

impl LinearModel {
    pub fn untrainable(class_id: ClassId) -> Self {
        LinearModel {
            class_id,
            weights: None,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.weights.is_some()
    }

    pub fn score(&self, features: &[f64]) -> f64 {
        match &self.weights {
            Some(w) => augmented_dot(w, features),
            None => f64::NEG_INFINITY,
        }
    }
}

/// `w . [x, 1]`.
#[inline]
pub fn augmented_dot(w: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len() + 1);
    let (bias, head) = w.split_last().expect("weights include a bias");
    head.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias
}

/// Where a training sample's features live.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Region { image: ImageId, region: RegionId },
    GroundTruth { image: ImageId, class: ClassId },
}

impl SampleSource {
    pub fn features<'d>(&self, d: &'d Dataset) -> &'d [f64] {
        match *self {
            SampleSource::Region { image, region } => &d.images[image].region_features[region],
            SampleSource::GroundTruth { image, class } => {
                &d.images[image].gt_region_features[&class]
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassSamples {
    pub positives: Vec<SampleSource>,
    pub negatives: Vec<SampleSource>,
}

impl ClassSamples {
    pub fn is_trainable(&self) -> bool {
        !self.positives.is_empty() && !self.negatives.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub classes: Vec<ClassSamples>,
    pub warnings: Vec<String>,
}

/// Fully supervised samples. Positives for class `c` are the ground-truth
/// region of `c` in each image (when its features are available) and every
/// region whose pixel IoU with that ground-truth region exceeds 0.5.
/// Negatives are all regions of images that do not contain `c`.
pub fn assemble_training_set_fs(d: &Dataset) -> Result<TrainingSet> {
    d.require(Supervision::Full)?;
    let mut classes = vec![ClassSamples::default(); d.class_count];
    for image in &d.images {
        let majority: Vec<Option<ClassId>> = image
            .superpixels
            .iter()
            .map(|sp| sp.majority_class())
            .collect();
        let gt_regions = image.ground_truth_regions();
        for (&class, members) in &gt_regions {
            let gt_pixels: u64 = members
                .iter()
                .map(|&sp| image.superpixels[sp].pixel_count)
                .sum();
            if image.gt_region_features.contains_key(&class) {
                classes[class].positives.push(SampleSource::GroundTruth {
                    image: image.id,
                    class,
                });
            }
            for (region, node) in image.forest.nodes.iter().enumerate() {
                let inter: u64 = node
                    .superpixels
                    .iter()
                    .filter(|&&sp| majority[sp] == Some(class))
                    .map(|&sp| image.superpixels[sp].pixel_count)
                    .sum();
                let union = node.pixel_count + gt_pixels - inter;
                // inter / union > 1/2 without rounding.
                if 2 * inter > union {
                    classes[class].positives.push(SampleSource::Region {
                        image: image.id,
                        region,
                    });
                }
            }
        }
        for (class, samples) in classes.iter_mut().enumerate() {
            if !image.image_labels.contains(&class) {
                samples
                    .negatives
                    .extend(
                        (0..image.region_count()).map(|region| SampleSource::Region {
                            image: image.id,
                            region,
                        }),
                    );
            }
        }
    }
    let warnings = untrainable_warnings(&classes);
    Ok(TrainingSet { classes, warnings })
}

pub(crate) fn untrainable_warnings(classes: &[ClassSamples]) -> Vec<String> {
    classes
        .iter()
        .enumerate()
        .filter_map(|(c, s)| {
            if s.positives.is_empty() {
                Some(format!(
                    "class {c} has no positive samples; marked untrainable"
                ))
            } else if s.negatives.is_empty() {
                Some(format!(
                    "class {c} has no negative samples; marked untrainable"
                ))
            } else {
                None
            }
        })
        .collect()
}

/// Per-sample weights for the two sides.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleWeights {
    pub positive: f64,
    pub negative: f64,
}

impl SampleWeights {
    /// Inverse-frequency weighting: each side carries half of the total
    /// sample count.
    pub fn inverse_frequency(positives: usize, negatives: usize) -> Self {
        let total = (positives + negatives) as f64;
        SampleWeights {
            positive: total / (2.0 * positives as f64),
            negative: total / (2.0 * negatives as f64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub batch_size: usize,
    /// A negative joins the working set when `w . x > -1 + threshold`.
    pub threshold: f64,
    pub max_rounds: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            batch_size: 2000,
            threshold: 0.0,
            max_rounds: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub reg: f64,
    /// Stop once the gradient's largest component falls below this,
    /// relative to the initial gradient.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub mining: MiningConfig,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            reg: DEFAULT_REG,
            tolerance: 1e-10,
            max_iterations: 200,
            mining: MiningConfig::default(),
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg.is_finite() && self.reg > 0.0) {
            return Err(Error::InvalidConfig("reg must be positive".into()));
        }
        if self.mining.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "mining batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A sample as the optimizer sees it.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub features: &'a [f64],
    pub positive: bool,
    pub weight: f64,
}

impl Sample<'_> {
    fn label(&self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }
}

/// The training objective at `w`.
pub fn objective(w: &[f64], samples: &[Sample<'_>], reg: f64) -> f64 {
    let norm: f64 = w.iter().map(|v| v * v).sum();
    let data: f64 = samples
        .iter()
        .map(|s| {
            let slack = 1.0 - s.label() * augmented_dot(w, s.features);
            if slack > 0.0 {
                s.weight * slack * slack
            } else {
                0.0
            }
        })
        .sum();
    0.5 * reg * norm + data
}

/// Gradient of [`objective`]. The loss is continuously differentiable, so
/// this is the true gradient everywhere.
pub fn gradient(w: &[f64], samples: &[Sample<'_>], reg: f64) -> Vec<f64> {
    let mut g: Vec<f64> = w.iter().map(|v| reg * v).collect();
    let dim = w.len() - 1;
    for s in samples {
        let y = s.label();
        let slack = 1.0 - y * augmented_dot(w, s.features);
        if slack > 0.0 {
            let coef = -2.0 * s.weight * y * slack;
            for (gi, xi) in g[..dim].iter_mut().zip(s.features) {
                *gi += coef * xi;
            }
            g[dim] += coef;
        }
    }
    g
}

fn check_samples(samples: &[Sample<'_>], dim: usize) -> Result<()> {
    for s in samples {
        if s.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.features.len(),
                context: "training sample".into(),
            });
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training features".into()));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub weights: Vec<f64>,
    /// Objective before the first and after every Newton iteration.
    pub objective_history: Vec<f64>,
    /// Mining rounds that added negatives.
    pub mining_rounds: usize,
}

/// Minimizes the objective over all given samples, starting at `start`.
pub fn minimize(
    samples: &[Sample<'_>],
    dim: usize,
    config: &SvmConfig,
    start: Option<Vec<f64>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_samples(samples, dim)?;
    let n = dim + 1;
    let reg = config.reg;
    let mut w = start.unwrap_or_else(|| vec![0.0; n]);
    let mut f = objective(&w, samples, reg);
    let mut history = vec![f];
    let g0 = gradient(&w, samples, reg);
    let g0_norm = max_abs(&g0).max(1.0);

    for _ in 0..config.max_iterations {
        let g = gradient(&w, samples, reg);
        if max_abs(&g) <= config.tolerance * g0_norm {
            break;
        }
        // Generalized Hessian over the active samples.
        let mut h = DMatrix::<f64>::identity(n, n) * reg;
        let mut x = vec![0.0; n];
        x[dim] = 1.0;
        for s in samples {
            let slack = 1.0 - s.label() * augmented_dot(&w, s.features);
            if slack > 0.0 {
                x[..dim].copy_from_slice(s.features);
                let xv = DVector::from_column_slice(&x);
                h.ger(2.0 * s.weight, &xv, &xv, 1.0);
            }
        }
        let gv = DVector::from_column_slice(&g);
        let step = match h.cholesky() {
            Some(chol) => -chol.solve(&gv),
            None => -gv.clone(),
        };
        let slope = gv.dot(&step);
        if slope >= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate: Vec<f64> = w.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let fc = objective(&candidate, samples, reg);
            if fc <= f + 1e-4 * t * slope && fc < f {
                accepted = Some((candidate, fc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((candidate, fc)) => {
                w = candidate;
                f = fc;
                history.push(f);
            }
            // No representable decrease left.
            None => break,
        }
    }
    Ok(TrainOutcome {
        weights: w,
        objective_history: history,
        mining_rounds: 0,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn build_samples<'a>(
    positives: &[&'a [f64]],
    negatives: impl Iterator<Item = &'a [f64]>,
    weights: SampleWeights,
) -> Vec<Sample<'a>> {
    positives
        .iter()
        .map(|&features| Sample {
            features,
            positive: true,
            weight: weights.positive,
        })
        .chain(negatives.map(|features| Sample {
            features,
            positive: false,
            weight: weights.negative,
        }))
        .collect()
}

fn check_sides(positives: usize, negatives: usize) -> Result<()> {
    if positives == 0 {
        return Err(Error::EmptySamples("no positive samples".into()));
    }
    if negatives == 0 {
        return Err(Error::EmptySamples("no negative samples".into()));
    }
    Ok(())
}

/// Trains on every sample at once.
pub fn train_full(
    positives: &[&[f64]],
    negatives: &[&[f64]],
    dim: usize,
    config: &SvmConfig,
) -> Result<TrainOutcome> {
    check_sides(positives.len(), negatives.len())?;
    let weights = SampleWeights::inverse_frequency(positives.len(), negatives.len());
    let samples = build_samples(positives, negatives.iter().copied(), weights);
    minimize(&samples, dim, config, None)
}

/// One pass over the negative pool in batches of `batch_size`, adding every
/// negative not yet in the working set whose score exceeds `-1 + threshold`.
/// Returns the indices added.
pub fn mine_hard_negatives(
    weights: &[f64],
    pool: &[&[f64]],
    in_working_set: &mut [bool],
    batch_size: usize,
    threshold: f64,
) -> Vec<usize> {
    let mut added = Vec::new();
    for (batch_index, batch) in pool.chunks(batch_size.max(1)).enumerate() {
        let offset = batch_index * batch_size.max(1);
        for (i, features) in batch.iter().enumerate() {
            let index = offset + i;
            if !in_working_set[index] && augmented_dot(weights, features) > -1.0 + threshold {
                in_working_set[index] = true;
                added.push(index);
            }
        }
    }
    added
}

/// Trains with hard-negative mining. The working set starts with the first
/// batch of negatives; after each fit the full pool is scanned and margin
/// violators are added, until a scan adds nothing. Sample weights always use
/// the full pool size, so the result minimizes the full-pool objective.
pub fn train_with_mining(
    positives: &[&[f64]],
    pool: &[&[f64]],
    dim: usize,
    config: &SvmConfig,
) -> Result<TrainOutcome> {
    check_sides(positives.len(), pool.len())?;
    config.validate()?;
    let weights = SampleWeights::inverse_frequency(positives.len(), pool.len());
    let mining = config.mining;
    let mut in_set = vec![false; pool.len()];
    let mut working: Vec<usize> = (0..mining.batch_size.min(pool.len())).collect();
    for &i in &working {
        in_set[i] = true;
    }
    let fit = |working: &[usize], start: Option<Vec<f64>>| {
        let samples = build_samples(positives, working.iter().map(|&i| pool[i]), weights);
        minimize(&samples, dim, config, start)
    };
    let mut outcome = fit(&working, None)?;
    let mut rounds = 0;
    while rounds < mining.max_rounds {
        let added = mine_hard_negatives(
            &outcome.weights,
            pool,
            &mut in_set,
            mining.batch_size,
            mining.threshold,
        );
        if added.is_empty() {
            break;
        }
        working.extend(added);
        rounds += 1;
        outcome = fit(&working, Some(outcome.weights))?;
    }
    outcome.mining_rounds = rounds;
    Ok(outcome)
}

/// Trains the model of one class from its sample lists.
pub fn train_class(
    d: &Dataset,
    class_id: ClassId,
    samples: &ClassSamples,
    config: &SvmConfig,
) -> Result<LinearModel> {
    if !samples.is_trainable() {
        return Ok(LinearModel::untrainable(class_id));
    }
    let positives: Vec<&[f64]> = samples.positives.iter().map(|s| s.features(d)).collect();
    let negatives: Vec<&[f64]> = samples.negatives.iter().map(|s| s.features(d)).collect();
    let outcome = train_with_mining(&positives, &negatives, d.feature_dim, config)?;
    Ok(LinearModel {
        class_id,
        weights: Some(outcome.weights),
    })
}

/// Trains every class, in parallel. The output is ordered by class id.
pub fn train_all(
    d: &Dataset,
    classes: &[ClassSamples],
    config: &SvmConfig,
) -> Result<Vec<LinearModel>> {
    config.validate()?;
    classes
        .par_iter()
        .enumerate()
        .map(|(c, samples)| train_class(d, c, samples, config))
        .collect()
}

fn check_models(models: &[LinearModel], d: &Dataset) -> Result<()> {
    if models.len() != d.class_count {
        return Err(Error::DimensionMismatch {
            expected: d.class_count,
            found: models.len(),
            context: "models per class".into(),
        });
    }
    for (c, model) in models.iter().enumerate() {
        if model.class_id != c {
            return Err(Error::Validation(format!(
                "model at position {c} has class id {}",
                model.class_id
            )));
        }
        if let Some(w) = &model.weights {
            if w.len() != d.feature_dim + 1 {
                return Err(Error::DimensionMismatch {
                    expected: d.feature_dim + 1,
                    found: w.len(),
                    context: format!("weights of class {c}"),
                });
            }
        }
    }
    Ok(())
}

/// Raw scores of every region of every image.
pub fn score_all(models: &[LinearModel], d: &Dataset) -> Result<Vec<ScoreMatrix>> {
    check_models(models, d)?;
    d.images
        .par_iter()
        .map(|image| {
            let mut values = Vec::with_capacity(image.region_count() * models.len());
            for features in &image.region_features {
                values.extend(models.iter().map(|m| m.score(features)));
            }
            ScoreMatrix::new(image.region_count(), models.len(), values)
        })
        .collect()
}

pub fn write_models(models: &[LinearModel], out: impl Write) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    for model in models {
        serde_json::to_writer(&mut out, model)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_models(models: &[LinearModel], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_models(models, file).map_err(|e| Error::io(path, e))
}

pub fn load_models(path: &Path) -> Result<Vec<LinearModel>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut models = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let model: LinearModel = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            record: format!("model {}", models.len()),
            message: e.to_string(),
        })?;
        if let Some(w) = &model.weights {
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "weights of class {}",
                    model.class_id
                )));
            }
        }
        models.push(model);
    }
    Ok(models)
}
