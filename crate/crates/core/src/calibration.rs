//! Joint calibration of per-class sigmoids against the final pixel labeling.
//!
//! Each class has a sigmoid `1 / (1 + exp(a * s + b))` applied to its raw
//! SVM score `s`. The parameters of all classes are fitted together by
//! coordinate descent over a fixed grid, where every line-search candidate is
//! scored by labeling the whole training set (max over classes and regions)
//! and measuring either the class-balanced pixel loss (full supervision) or
//! the inverse-frequency weighted Hamming loss on image label sets (weak
//! supervision).
//!
//! Platt scaling is provided as the per-class, region-level baseline. It uses
//! the same grid search so the two differ only in the loss being minimized.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_image_counts, class_pixel_counts, ClassId, Dataset, Supervision};
use crate::error::{Error, Result};
use crate::forest::{label_image_fast, Labeling, ScoreMatrix};

/// Calibrated score `1 / (1 + exp(a * score + b))`.
///
/// Evaluated in the form that never overflows: for `z = a * score + b > 0`
/// the numerator and denominator are both scaled by `exp(-z)`.
pub fn sigmoid(score: f64, a: f64, b: f64) -> f64 {
    let z = a * score + b;
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `-(a * score + b)`, the logit of [`sigmoid`]. Ordering logits is the same
/// as ordering calibrated scores, without saturation at 0 or 1. A score of
/// negative infinity (untrainable class) always maps to negative infinity.
pub fn calibrated_logit(score: f64, a: f64, b: f64) -> f64 {
    if score == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        -(a * score + b)
    }
}

pub fn sigmoid_from_logit(logit: f64) -> f64 {
    sigmoid(logit, -1.0, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub a: f64,
    pub b: f64,
}

/// Sigmoid parameters for every class.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationParams(Vec<SigmoidParams>);

impl CalibrationParams {
    pub fn uniform(classes: usize, params: SigmoidParams) -> Self {
        CalibrationParams(vec![params; classes])
    }

    pub fn from_vec(params: Vec<SigmoidParams>) -> Self {
        CalibrationParams(params)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: ClassId) -> SigmoidParams {
        self.0[class]
    }

    pub fn as_slice(&self) -> &[SigmoidParams] {
        &self.0
    }

    pub fn set(&mut self, class: ClassId, param: Param, value: f64) {
        match param {
            Param::A => self.0[class].a = value,
            Param::B => self.0[class].b = value,
        }
    }

    pub fn value(&self, class: ClassId, param: Param) -> f64 {
        match param {
            Param::A => self.0[class].a,
            Param::B => self.0[class].b,
        }
    }

    #[inline]
    pub fn logit(&self, class: ClassId, score: f64) -> f64 {
        let p = self.0[class];
        calibrated_logit(score, p.a, p.b)
    }

    pub fn calibrate(&self, class: ClassId, score: f64) -> f64 {
        let p = self.0[class];
        sigmoid(score, p.a, p.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    A,
    B,
}

impl Param {
    pub fn as_str(self) -> &'static str {
        match self {
            Param::A => "a",
            Param::B => "b",
        }
    }
}

/// Line-search grid and starting point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    pub points_per_line: usize,
    pub init: SigmoidParams,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            a_range: (-12.0, -2.0),
            b_range: (-10.0, 10.0),
            points_per_line: 10,
            init: SigmoidParams { a: -7.0, b: 0.0 },
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let (a_lo, a_hi) = self.a_range;
        let (b_lo, b_hi) = self.b_range;
        let finite = [a_lo, a_hi, b_lo, b_hi, self.init.a, self.init.b]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("grid values must be finite".into()));
        }
        if self.points_per_line < 2 {
            return Err(Error::InvalidConfig("grid needs at least 2 points".into()));
        }
        if a_lo >= a_hi || b_lo >= b_hi {
            return Err(Error::InvalidConfig(
                "grid ranges must be increasing".into(),
            ));
        }
        if !(a_lo..=a_hi).contains(&self.init.a) || !(b_lo..=b_hi).contains(&self.init.b) {
            return Err(Error::InvalidConfig(
                "grid ranges must contain the init".into(),
            ));
        }
        Ok(())
    }

    /// Equally spaced values including both endpoints.
    pub fn values(&self, param: Param) -> Vec<f64> {
        let (lo, hi) = match param {
            Param::A => self.a_range,
            Param::B => self.b_range,
        };
        let steps = (self.points_per_line - 1) as f64;
        (0..self.points_per_line)
            .map(|k| {
                if k + 1 == self.points_per_line {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / steps
                }
            })
            .collect()
    }

    pub fn initial_params(&self, classes: usize) -> CalibrationParams {
        CalibrationParams::uniform(classes, self.init)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// One minus class-average pixel accuracy.
    FullySupervised,
    /// Inverse-frequency weighted Hamming distance between image label sets.
    WeaklySupervised,
}

impl LossKind {
    pub fn for_supervision(supervision: Supervision) -> Self {
        match supervision {
            Supervision::Full => LossKind::FullySupervised,
            Supervision::Weak => LossKind::WeaklySupervised,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::FullySupervised => "fully_supervised",
            LossKind::WeaklySupervised => "weakly_supervised",
        }
    }
}

/// Lookup tables for fast loss evaluation: ground-truth histograms per
/// superpixel and class normalizers.
#[derive(Clone, Debug)]
pub enum LossContext {
    Full {
        /// Per image, per superpixel: (class, pixels) pairs.
        histograms: Vec<Vec<Vec<(ClassId, u64)>>>,
        class_pixels: Vec<u64>,
    },
    Weak {
        image_labels: Vec<Vec<bool>>,
        class_images: Vec<usize>,
    },
}

impl LossContext {
    pub fn new(d: &Dataset, kind: LossKind) -> Result<Self> {
        match kind {
            LossKind::FullySupervised => {
                let class_pixels = class_pixel_counts(d)?;
                if class_pixels.iter().all(|&p| p == 0) {
                    return Err(Error::Undefined(
                        "no ground-truth pixels in any class".into(),
                    ));
                }
                let histograms = d
                    .images
                    .iter()
                    .map(|image| {
                        image
                            .superpixels
                            .iter()
                            .map(|sp| {
                                sp.gt_histogram
                                    .iter()
                                    .filter(|(_, &n)| n > 0)
                                    .map(|(&c, &n)| (c, n))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                Ok(LossContext::Full {
                    histograms,
                    class_pixels,
                })
            }
            LossKind::WeaklySupervised => {
                let image_labels = d
                    .images
                    .iter()
                    .map(|image| {
                        let mut present = vec![false; d.class_count];
                        for &c in &image.image_labels {
                            present[c] = true;
                        }
                        present
                    })
                    .collect();
                Ok(LossContext::Weak {
                    image_labels,
                    class_images: class_image_counts(d),
                })
            }
        }
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossContext::Full { .. } => LossKind::FullySupervised,
            LossContext::Weak { .. } => LossKind::WeaklySupervised,
        }
    }

    pub fn loss(&self, labelings: &[Labeling]) -> f64 {
        match self {
            LossContext::Full {
                histograms,
                class_pixels,
            } => {
                let correct = correct_pixels(histograms, labelings, class_pixels.len());
                let mut sum = 0.0;
                let mut counted = 0usize;
                for (c, &total) in class_pixels.iter().enumerate() {
                    if total > 0 {
                        sum += correct[c] as f64 / total as f64;
                        counted += 1;
                    }
                }
                1.0 - sum / counted as f64
            }
            LossContext::Weak {
                image_labels,
                class_images,
            } => {
                assert_eq!(
                    image_labels.len(),
                    labelings.len(),
                    "one labeling per image"
                );
                let classes = class_images.len();
                let mut loss = 0.0;
                for (truth, labeling) in image_labels.iter().zip(labelings) {
                    let output = output_label_set(labeling, classes);
                    for c in 0..classes {
                        if class_images[c] > 0 && truth[c] != output[c] {
                            loss += 1.0 / class_images[c] as f64;
                        }
                    }
                }
                loss
            }
        }
    }
}

/// Correctly labeled pixels per ground-truth class.
fn correct_pixels(
    histograms: &[Vec<Vec<(ClassId, u64)>>],
    labelings: &[Labeling],
    classes: usize,
) -> Vec<u64> {
    assert_eq!(histograms.len(), labelings.len(), "one labeling per image");
    let mut correct = vec![0u64; classes];
    for (image, labeling) in histograms.iter().zip(labelings) {
        assert_eq!(image.len(), labeling.len(), "labeling must be total");
        for (hist, &label) in image.iter().zip(labeling) {
            if let Some(&(_, n)) = hist.iter().find(|(c, _)| *c == label) {
                correct[label] += n;
            }
        }
    }
    correct
}

/// Classes appearing anywhere in an image's labeling, as a membership vector.
pub fn output_label_set(labeling: &Labeling, classes: usize) -> Vec<bool> {
    let mut present = vec![false; classes];
    for &c in labeling {
        present[c] = true;
    }
    present
}

/// One minus class-average pixel accuracy. Classes without ground-truth
/// pixels are left out of the average.
pub fn fs_loss(labelings: &[Labeling], d: &Dataset) -> Result<f64> {
    Ok(LossContext::new(d, LossKind::FullySupervised)?.loss(labelings))
}

/// Sum over images and classes of label-set disagreement, each weighted by
/// one over the number of images carrying that class. Classes carried by no
/// image are left out.
pub fn ws_loss(labelings: &[Labeling], d: &Dataset) -> Result<f64> {
    Ok(LossContext::new(d, LossKind::WeaklySupervised)?.loss(labelings))
}

fn check_scores(d: &Dataset, scores: &[ScoreMatrix], classes: usize) -> Result<()> {
    if scores.len() != d.images.len() {
        return Err(Error::DimensionMismatch {
            expected: d.images.len(),
            found: scores.len(),
            context: "score matrices per image".into(),
        });
    }
    for (image, s) in d.images.iter().zip(scores) {
        if s.regions() != image.region_count() || s.classes() != classes {
            return Err(Error::DimensionMismatch {
                expected: image.region_count() * classes,
                found: s.regions() * s.classes(),
                context: format!("score matrix of image {}", image.id),
            });
        }
    }
    Ok(())
}

/// Labels every image with the given calibration. Images are processed in
/// parallel; the output order matches `d.images`.
pub fn label_all(d: &Dataset, scores: &[ScoreMatrix], params: &CalibrationParams) -> Vec<Labeling> {
    d.images
        .par_iter()
        .zip(scores.par_iter())
        .map(|(image, s)| label_image_fast(&image.forest, s, params))
        .collect()
}

/// Loss of the labeling produced by `params`. Raw scores are reused as is.
pub fn evaluate_loss(
    d: &Dataset,
    scores: &[ScoreMatrix],
    params: &CalibrationParams,
    kind: LossKind,
) -> Result<f64> {
    check_scores(d, scores, params.len())?;
    let context = LossContext::new(d, kind)?;
    Ok(context.loss(&label_all(d, scores, params)))
}

/// One adopted parameter change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub class_id: ClassId,
    pub param: Param,
    pub old: f64,
    pub new: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrace {
    pub initial_loss: f64,
    pub steps: Vec<TraceStep>,
    /// Full passes over all parameters, including the final one that changed
    /// nothing.
    pub sweeps: usize,
    pub evaluations: usize,
}

impl CalibrationTrace {
    pub fn final_loss(&self) -> f64 {
        self.steps.last().map_or(self.initial_loss, |s| s.loss)
    }

    /// The loss after every adopted step, starting with the initial loss.
    pub fn losses(&self) -> Vec<f64> {
        std::iter::once(self.initial_loss)
            .chain(self.steps.iter().map(|s| s.loss))
            .collect()
    }
}

/// Coordinate descent over the grid. Classes are visited in ascending order,
/// `a` before `b`; a grid value is adopted only if it strictly lowers the
/// loss (the first such grid value with the lowest loss wins). Stops after a
/// sweep that changes nothing.
pub fn grid_coordinate_descent(
    params: &mut CalibrationParams,
    grid: &GridSpec,
    mut loss: impl FnMut(&CalibrationParams) -> f64,
) -> CalibrationTrace {
    let a_values = grid.values(Param::A);
    let b_values = grid.values(Param::B);
    let mut current = loss(params);
    let mut trace = CalibrationTrace {
        initial_loss: current,
        steps: Vec::new(),
        sweeps: 0,
        evaluations: 1,
    };
    loop {
        trace.sweeps += 1;
        let mut changed = false;
        for class in 0..params.len() {
            for (param, values) in [(Param::A, &a_values), (Param::B, &b_values)] {
                let old = params.value(class, param);
                let mut best: Option<(f64, f64)> = None;
                for &v in values.iter() {
                    if v == old {
                        continue;
                    }
                    params.set(class, param, v);
                    let l = loss(params);
                    trace.evaluations += 1;
                    if best.is_none_or(|(top, _)| l < top) {
                        best = Some((l, v));
                    }
                }
                match best {
                    Some((l, v)) if l < current => {
                        params.set(class, param, v);
                        trace.steps.push(TraceStep {
                            class_id: class,
                            param,
                            old,
                            new: v,
                            loss: l,
                        });
                        current = l;
                        changed = true;
                    }
                    _ => params.set(class, param, old),
                }
            }
        }
        if !changed {
            return trace;
        }
    }
}

/// Fitted parameters with the record of how they were found.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub params: CalibrationParams,
    pub trace: CalibrationTrace,
}

/// Joint calibration: minimizes the pixel-level loss of the final labeling
/// over all sigmoid parameters at once.
pub fn joint_calibrate(
    d: &Dataset,
    scores: &[ScoreMatrix],
    kind: LossKind,
    grid: &GridSpec,
) -> Result<Calibration> {
    grid.validate()?;
    check_scores(d, scores, d.class_count)?;
    let context = LossContext::new(d, kind)?;
    let mut params = grid.initial_params(d.class_count);
    let trace = grid_coordinate_descent(&mut params, grid, |p| {
        context.loss(&label_all(d, scores, p))
    });
    Ok(Calibration { params, trace })
}

pub const PLATT_EPSILON: f64 = 1e-15;

/// Cross-entropy of a sigmoid against smoothed region targets: positives
/// aim at `(N+ + 1) / (N+ + 2)`, negatives at `1 / (N- + 2)`.
pub fn platt_cross_entropy(scores: &[f64], positive: &[bool], a: f64, b: f64) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    let t_neg = 1.0 / (n_neg + 2.0);
    scores
        .iter()
        .zip(positive)
        .map(|(&s, &p)| {
            let t = if p { t_pos } else { t_neg };
            let q = sigmoid(s, a, b).clamp(PLATT_EPSILON, 1.0 - PLATT_EPSILON);
            -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlattFit {
    pub params: SigmoidParams,
    pub trace: CalibrationTrace,
}

/// Platt scaling for one class, fitted with the same grid coordinate descent
/// as [`joint_calibrate`].
pub fn platt_fit(scores: &[f64], positive: &[bool], grid: &GridSpec) -> Result<PlattFit> {
    grid.validate()?;
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: positive.len(),
            context: "Platt labels".into(),
        });
    }
    if !positive.iter().any(|&p| p) || positive.iter().all(|&p| p) {
        return Err(Error::EmptySamples(
            "Platt scaling needs positive and negative samples".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("Platt scores".into()));
    }
    let mut params = grid.initial_params(1);
    let trace = grid_coordinate_descent(&mut params, grid, |p| {
        let SigmoidParams { a, b } = p.get(0);
        platt_cross_entropy(scores, positive, a, b)
    });
    Ok(PlattFit {
        params: params.get(0),
        trace,
    })
}

/// Which calibration produced a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Initial constants, equivalent to the uncalibrated argmax.
    None,
    Platt,
    Jc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Platt => "platt",
            Method::Jc => "jc",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub class_id: ClassId,
    pub a: f64,
    pub b: f64,
}

/// On-disk calibration record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub version: u32,
    pub method: Method,
    pub loss_kind: LossKind,
    pub params: Vec<ClassParams>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub trace: Vec<TraceStep>,
}

impl CalibrationFile {
    pub fn new(method: Method, kind: LossKind, params: &CalibrationParams) -> Self {
        CalibrationFile {
            version: 1,
            method,
            loss_kind: kind,
            params: params
                .as_slice()
                .iter()
                .enumerate()
                .map(|(class_id, p)| ClassParams {
                    class_id,
                    a: p.a,
                    b: p.b,
                })
                .collect(),
            initial_loss: None,
            final_loss: None,
            trace: Vec::new(),
        }
    }

    pub fn with_trace(mut self, trace: &CalibrationTrace) -> Self {
        self.initial_loss = Some(trace.initial_loss);
        self.final_loss = Some(trace.final_loss());
        self.trace = trace.steps.clone();
        self
    }

    pub fn params(&self, classes: usize) -> Result<CalibrationParams> {
        if self.params.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                found: self.params.len(),
                context: "calibration classes".into(),
            });
        }
        let mut seen = BTreeSet::new();
        let mut out = vec![SigmoidParams { a: 0.0, b: 0.0 }; classes];
        for p in &self.params {
            if p.class_id >= classes || !seen.insert(p.class_id) {
                return Err(Error::Validation(format!(
                    "calibration class {} duplicated or out of range",
                    p.class_id
                )));
            }
            if !p.a.is_finite() || !p.b.is_finite() {
                return Err(Error::NonFinite(format!(
                    "calibration of class {}",
                    p.class_id
                )));
            }
            out[p.class_id] = SigmoidParams { a: p.a, b: p.b };
        }
        Ok(CalibrationParams::from_vec(out))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataset::ImageRecord;
    use crate::forest::label_image_naive;
    use crate::test_support::{dataset, image, strip_image, weak_image};

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0, -3.0, 0.0), 0.5);
        assert_eq!(sigmoid(0.0, 5.0, 0.0), 0.5);
        let expected = 1.0 / (1.0 + (-7.0f64).exp());
        assert!((sigmoid(1.0, -7.0, 0.0) - expected).abs() < 1e-15);
        assert!((sigmoid(1.0, -7.0, 0.0) - 0.999_088_9).abs() < 1e-7);
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        for z in [-700.0, -745.0, 700.0, 750.0, 1e6, -1e6] {
            let s = sigmoid(z, 1.0, 0.0);
            assert!((0.0..=1.0).contains(&s), "z={z} gave {s}");
        }
        assert_eq!(sigmoid(800.0, 1.0, 0.0), 0.0);
        assert_eq!(sigmoid(-800.0, 1.0, 0.0), 1.0);
    }

    #[test]
    fn grid_values_include_endpoints() {
        let grid = GridSpec::default();
        let a = grid.values(Param::A);
        assert_eq!(a.len(), 10);
        assert_eq!(a[0], -12.0);
        assert_eq!(a[9], -2.0);
        let b = grid.values(Param::B);
        assert_eq!(b[0], -10.0);
        assert_eq!(b[9], 10.0);
        assert!((b[1] - b[0] - 20.0 / 9.0).abs() < 1e-12);
        assert!(!a.contains(&-7.0));
    }

    #[test]
    fn grid_validation() {
        let mut grid = GridSpec::default();
        assert!(grid.validate().is_ok());
        grid.points_per_line = 1;
        assert!(grid.validate().is_err());
        let mut grid = GridSpec::default();
        grid.init.a = -20.0;
        assert!(grid.validate().is_err());
    }

    #[test]
    fn coordinate_descent_on_separable_bowl() {
        // Minimum of a separable quadratic lands on the nearest grid points.
        let grid = GridSpec::default();
        let mut params = grid.initial_params(2);
        let trace = grid_coordinate_descent(&mut params, &grid, |p| {
            let mut l = 0.0;
            for c in 0..2 {
                let s = p.get(c);
                l += (s.a + 3.0 + c as f64).powi(2) + (s.b - 4.0).powi(2);
            }
            l
        });
        let a = grid.values(Param::A);
        let b = grid.values(Param::B);
        assert_eq!(params.get(0).a, a[8]); // -3.11 closest to -3
        assert_eq!(params.get(0).b, b[6]); // 3.33 closest to 4
        assert_eq!(params.get(1).a, a[7]); // -4.22 closest to -4
        let losses = trace.losses();
        assert!(losses.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn platt_symmetric_keeps_zero_offset() {
        let positives = [0.5, 1.0, 1.5, 2.0, 0.2];
        let scores: Vec<f64> = positives
            .iter()
            .copied()
            .chain(positives.iter().map(|s| -s))
            .collect();
        let labels: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let fit = platt_fit(&scores, &labels, &GridSpec::default()).unwrap();
        assert_eq!(fit.params.b, 0.0);
    }

    #[test]
    fn platt_orders_separated_scores() {
        let scores = [3.0, 4.0, 5.0, -3.0, -4.0, -6.0, -2.5];
        let labels = [true, true, true, false, false, false, false];
        let fit = platt_fit(&scores, &labels, &GridSpec::default()).unwrap();
        let SigmoidParams { a, b } = fit.params;
        let min_pos = scores[..3]
            .iter()
            .map(|&s| sigmoid(s, a, b))
            .fold(f64::INFINITY, f64::min);
        let max_neg = scores[3..]
            .iter()
            .map(|&s| sigmoid(s, a, b))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_pos > max_neg);
    }

    #[test]
    fn platt_rejects_single_sign() {
        let err = platt_fit(&[1.0, 2.0], &[true, true], &GridSpec::default());
        assert!(matches!(err, Err(Error::EmptySamples(_))));
    }

    #[test]
    fn calibration_file_round_trip() {
        let params = CalibrationParams::from_vec(vec![
            SigmoidParams { a: -7.0, b: 0.0 },
            SigmoidParams {
                a: -2.0,
                b: 10.0 / 9.0,
            },
        ]);
        let file = CalibrationFile::new(Method::Jc, LossKind::FullySupervised, &params);
        let text = serde_json::to_string(&file).unwrap();
        let back: CalibrationFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.params(2).unwrap(), params);
        assert!(back.params(3).is_err());
    }

    /// Class 0: 100 pixels, 60 labeled correctly; class 1: 10 pixels, all
    /// correct.
    fn two_class_fs() -> (Dataset, Vec<Labeling>) {
        let d = dataset(
            2,
            Supervision::Full,
            vec![image(
                0,
                &[&[(0, 60)], &[(0, 40)], &[(1, 10)]],
                &[vec![0, 1, 2]],
                &[3],
            )],
        );
        (d, vec![vec![0, 1, 1]])
    }

    #[test]
    fn fs_loss_weighs_classes_equally() {
        let (d, labelings) = two_class_fs();
        let loss = fs_loss(&labelings, &d).unwrap();
        assert!((loss - 0.2).abs() < 1e-15, "{loss}");
    }

    #[test]
    fn fs_loss_extremes() {
        let (d, _) = two_class_fs();
        assert_eq!(fs_loss(&[vec![0, 0, 1]], &d).unwrap(), 0.0);
        assert_eq!(fs_loss(&[vec![1, 1, 0]], &d).unwrap(), 1.0);
    }

    #[test]
    fn fs_loss_skips_absent_classes_and_rejects_empty() {
        let (mut d, _) = two_class_fs();
        d.class_count = 3;
        assert_eq!(fs_loss(&[vec![0, 0, 1]], &d).unwrap(), 0.0);
        let weak = d.to_weak();
        assert!(fs_loss(&[vec![0, 0, 1]], &weak).is_err());
    }

    /// Per-pixel recount of the class-average accuracy.
    fn recount_fs_loss(labelings: &[Labeling], d: &Dataset) -> f64 {
        let mut correct = vec![0u64; d.class_count];
        let mut total = vec![0u64; d.class_count];
        for (image, labeling) in d.images.iter().zip(labelings) {
            for (sp, &label) in image.superpixels.iter().zip(labeling) {
                for (&truth, &n) in &sp.gt_histogram {
                    for _ in 0..n {
                        total[truth] += 1;
                        if truth == label {
                            correct[truth] += 1;
                        }
                    }
                }
            }
        }
        let present: Vec<usize> = (0..d.class_count).filter(|&c| total[c] > 0).collect();
        let mean: f64 = present
            .iter()
            .map(|&c| correct[c] as f64 / total[c] as f64)
            .sum::<f64>()
            / present.len() as f64;
        1.0 - mean
    }

    #[test]
    fn fs_loss_matches_pixel_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let classes = rng.random_range(2..6);
            let images = (0..rng.random_range(1..5))
                .map(|id| {
                    let sps = rng.random_range(1..8);
                    let hists: Vec<Vec<(ClassId, u64)>> = (0..sps)
                        .map(|_| {
                            let mut h: Vec<(ClassId, u64)> = Vec::new();
                            for c in 0..classes {
                                if rng.random_bool(0.4) {
                                    h.push((c, rng.random_range(1..30)));
                                }
                            }
                            if h.is_empty() {
                                h.push((rng.random_range(0..classes), 5));
                            }
                            h
                        })
                        .collect();
                    let refs: Vec<&[(ClassId, u64)]> = hists.iter().map(Vec::as_slice).collect();
                    image(id, &refs, &[(0..sps).collect()], &[sps])
                })
                .collect();
            let d = dataset(classes, Supervision::Full, images);
            let labelings: Vec<Labeling> = d
                .images
                .iter()
                .map(|im| {
                    (0..im.superpixel_count())
                        .map(|_| rng.random_range(0..classes))
                        .collect()
                })
                .collect();
            let fast = fs_loss(&labelings, &d).unwrap();
            let slow = recount_fs_loss(&labelings, &d);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ws_loss_weighs_by_image_frequency() {
        // Class 0 is in one image, class 1 in two; the first image also
        // outputs class 1, which it does not carry.
        let d = dataset(
            2,
            Supervision::Weak,
            vec![
                weak_image(0, 2, &[0]),
                weak_image(1, 2, &[1]),
                weak_image(2, 2, &[1]),
            ],
        );
        let labelings = vec![vec![0, 1], vec![1, 1], vec![1, 1]];
        assert_eq!(ws_loss(&labelings, &d).unwrap(), 0.5);
        let exact = vec![vec![0, 0], vec![1, 1], vec![1, 1]];
        assert_eq!(ws_loss(&exact, &d).unwrap(), 0.0);
    }

    #[test]
    fn ws_loss_of_predicting_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let classes = 4;
        let images: Vec<ImageRecord> = (0..12)
            .map(|id| {
                let labels: Vec<ClassId> = (0..classes).filter(|_| rng.random_bool(0.5)).collect();
                weak_image(id, classes, &labels)
            })
            .collect();
        let d = dataset(classes, Supervision::Weak, images);
        let everything: Vec<Labeling> = d.images.iter().map(|_| (0..classes).collect()).collect();
        let mut expected = 0.0;
        for c in 0..classes {
            let with = d
                .images
                .iter()
                .filter(|im| im.image_labels.contains(&c))
                .count();
            if with > 0 {
                expected += (d.images.len() - with) as f64 / with as f64;
            }
        }
        let loss = ws_loss(&everything, &d).unwrap();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    fn score_matrices(d: &Dataset, values: &[Vec<f64>]) -> Vec<ScoreMatrix> {
        d.images
            .iter()
            .zip(values)
            .map(|(im, v)| ScoreMatrix::new(im.region_count(), d.class_count, v.clone()).unwrap())
            .collect()
    }

    #[test]
    fn single_class_matches_exhaustive_grid() {
        let d = dataset(1, Supervision::Full, vec![strip_image(&[3, 5], &[0, 0])]);
        let scores = score_matrices(&d, &[vec![0.3, -1.0, 2.0]]);
        let grid = GridSpec::default();
        let result = joint_calibrate(&d, &scores, LossKind::FullySupervised, &grid).unwrap();
        let mut best = f64::INFINITY;
        for &a in &grid.values(Param::A) {
            for &b in &grid.values(Param::B) {
                let params = CalibrationParams::uniform(1, SigmoidParams { a, b });
                let l = evaluate_loss(&d, &scores, &params, LossKind::FullySupervised).unwrap();
                best = best.min(l);
            }
        }
        assert_eq!(result.trace.final_loss(), best);
        assert!(result.trace.steps.is_empty());
        assert_eq!(result.params, grid.initial_params(1));
    }

    /// A large background region outscores the small rare-class leaf it
    /// contains, so the rare class is never predicted at the initial
    /// calibration.
    fn suppression_instance() -> (Dataset, Vec<ScoreMatrix>) {
        let d = dataset(
            2,
            Supervision::Full,
            vec![image(0, &[&[(0, 90)], &[(1, 10)]], &[vec![0, 1]], &[2])],
        );
        // Rows: leaf 0, leaf 1, root. Columns: background, rare.
        let scores = score_matrices(&d, &[vec![0.5, -1.0, -1.0, 0.8, 1.0, -1.0]]);
        (d, scores)
    }

    #[test]
    fn calibration_lifts_suppressed_rare_class() {
        let (d, scores) = suppression_instance();
        let grid = GridSpec::default();
        let init = grid.initial_params(2);
        let initial = evaluate_loss(&d, &scores, &init, LossKind::FullySupervised).unwrap();
        assert_eq!(initial, 0.5);
        assert_eq!(label_all(&d, &scores, &init), vec![vec![0, 0]]);

        // A background offset of 10/3 makes the rare leaf outscore the root.
        let mut flipped = init.clone();
        flipped.set(0, Param::B, grid.values(Param::B)[6]);
        assert_eq!(label_all(&d, &scores, &flipped), vec![vec![0, 1]]);

        let result = joint_calibrate(&d, &scores, LossKind::FullySupervised, &grid).unwrap();
        assert_eq!(result.trace.initial_loss, 0.5);
        assert_eq!(result.trace.final_loss(), 0.0);
        assert_eq!(label_all(&d, &scores, &result.params), vec![vec![0, 1]]);
    }

    #[test]
    fn zero_initial_loss_changes_nothing() {
        let (d, _) = suppression_instance();
        let scores = score_matrices(&d, &[vec![1.0, -1.0, -1.0, 2.0, 0.5, -1.0]]);
        let grid = GridSpec::default();
        let result = joint_calibrate(&d, &scores, LossKind::FullySupervised, &grid).unwrap();
        assert_eq!(result.trace.initial_loss, 0.0);
        assert!(result.trace.steps.is_empty());
        assert_eq!(result.params, grid.initial_params(2));
    }

    #[test]
    fn platt_fit_is_grid_optimal_on_small_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let positive: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let scores: Vec<f64> = positive
            .iter()
            .map(|&p| if p { 0.4 } else { -0.3 } + rng.random_range(-0.6..0.6))
            .collect();
        let grid = GridSpec::default();
        let fit = platt_fit(&scores, &positive, &grid).unwrap();
        let fitted = platt_cross_entropy(&scores, &positive, fit.params.a, fit.params.b);
        for &a in &grid.values(Param::A) {
            for &b in &grid.values(Param::B) {
                let other = platt_cross_entropy(&scores, &positive, a, b);
                assert!(fitted <= other, "({a}, {b}) gives {other} < {fitted}");
            }
        }
    }

    fn random_scored_image(rng: &mut ChaCha8Rng, classes: usize) -> (ImageRecord, ScoreMatrix) {
        let leaves = rng.random_range(2..10);
        let pixels: Vec<u64> = (0..leaves).map(|_| rng.random_range(1..20)).collect();
        let forest = crate::dataset::random_forest(rng, &pixels, 2, 4);
        let mut im = strip_image(&pixels, &vec![0; leaves]);
        im.region_features = vec![vec![0.0]; forest.len()];
        im.forest = forest;
        let values = (0..im.region_count() * classes)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let scores = ScoreMatrix::new(im.region_count(), classes, values).unwrap();
        (im, scores)
    }

    proptest! {
        #[test]
        fn shared_calibration_keeps_raw_argmax(
            seed in any::<u64>(),
            a in -12.0f64..-0.1,
            b in -10.0f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (im, scores) = random_scored_image(&mut rng, 4);
            let raw = CalibrationParams::uniform(4, SigmoidParams { a: -1.0, b: 0.0 });
            let shared = CalibrationParams::uniform(4, SigmoidParams { a, b });
            prop_assert_eq!(
                label_image_fast(&im.forest, &scores, &shared),
                label_image_naive(&im.forest, &scores, &raw)
            );
        }

        #[test]
        fn rescaling_scores_and_slope_is_invisible(
            seed in any::<u64>(),
            class in 0usize..3,
            k in -4i32..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (im, scores) = random_scored_image(&mut rng, 3);
            let lambda = 2f64.powi(k);
            let mut params = CalibrationParams::uniform(3, SigmoidParams { a: -7.0, b: 0.5 });
            params.set(1, Param::B, -2.0);
            let mut scaled_params = params.clone();
            scaled_params.set(class, Param::A, params.value(class, Param::A) / lambda);
            let scaled_values: Vec<f64> = (0..scores.regions())
                .flat_map(|r| {
                    scores
                        .row(r)
                        .iter()
                        .enumerate()
                        .map(|(c, &v)| if c == class { v * lambda } else { v })
                        .collect::<Vec<_>>()
                })
                .collect();
            let scaled = ScoreMatrix::new(scores.regions(), 3, scaled_values).unwrap();
            for r in 0..scores.regions() {
                for c in 0..3 {
                    prop_assert_eq!(
                        params.calibrate(c, scores.get(r, c)).to_bits(),
                        scaled_params.calibrate(c, scaled.get(r, c)).to_bits()
                    );
                }
            }
            prop_assert_eq!(
                label_image_fast(&im.forest, &scores, &params),
                label_image_fast(&im.forest, &scaled, &scaled_params)
            );
        }
    }
}
