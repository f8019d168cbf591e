//! Evaluation reports: class-average pixel accuracy with confusion matrix
//! for pixel-labeled data, image-label precision and recall for weakly
//! labeled data.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::calibration::{fs_loss, output_label_set, ws_loss};
use crate::dataset::{class_image_counts, class_pixel_counts, ClassId, Dataset};
use crate::error::{Error, Result};
use crate::forest::Labeling;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_count: usize,
    /// `None` for classes without ground-truth pixels.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub class_average_accuracy: f64,
    pub class_pixel_counts: Vec<u64>,
    pub global_pixel_accuracy: f64,
    /// `confusion[truth][predicted]`, in pixels.
    pub confusion: Vec<Vec<u64>>,
}

fn check_labelings(labelings: &[Labeling], d: &Dataset) -> Result<()> {
    if labelings.len() != d.images.len() {
        return Err(Error::DimensionMismatch {
            expected: d.images.len(),
            found: labelings.len(),
            context: "labelings per image".into(),
        });
    }
    for (image, labeling) in d.images.iter().zip(labelings) {
        if labeling.len() != image.superpixel_count() {
            return Err(Error::DimensionMismatch {
                expected: image.superpixel_count(),
                found: labeling.len(),
                context: format!("labeling of image {}", image.id),
            });
        }
        if let Some(&bad) = labeling.iter().find(|&&c| c >= d.class_count) {
            return Err(Error::Validation(format!(
                "image {} labeled with class {bad}",
                image.id
            )));
        }
    }
    Ok(())
}

pub fn evaluate(labelings: &[Labeling], d: &Dataset) -> Result<EvalReport> {
    check_labelings(labelings, d)?;
    let pixels = class_pixel_counts(d)?;
    let loss = fs_loss(labelings, d)?;
    let c = d.class_count;
    let mut confusion = vec![vec![0u64; c]; c];
    for (image, labeling) in d.images.iter().zip(labelings) {
        for (sp, &predicted) in image.superpixels.iter().zip(labeling) {
            for (&truth, &n) in &sp.gt_histogram {
                confusion[truth][predicted] += n;
            }
        }
    }
    let per_class_accuracy = (0..c)
        .map(|k| (pixels[k] > 0).then(|| confusion[k][k] as f64 / pixels[k] as f64))
        .collect();
    let total: u64 = pixels.iter().sum();
    let correct: u64 = (0..c).map(|k| confusion[k][k]).sum();
    Ok(EvalReport {
        class_count: c,
        per_class_accuracy,
        class_average_accuracy: 1.0 - loss,
        class_pixel_counts: pixels,
        global_pixel_accuracy: correct as f64 / total as f64,
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassImageStats {
    pub class_id: ClassId,
    /// Images whose ground truth carries the class.
    pub images: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakEvalReport {
    pub class_count: usize,
    pub per_class: Vec<ClassImageStats>,
    /// Inverse-frequency weighted Hamming loss between label sets.
    pub hamming_loss: f64,
}

pub fn evaluate_weak(labelings: &[Labeling], d: &Dataset) -> Result<WeakEvalReport> {
    check_labelings(labelings, d)?;
    let c = d.class_count;
    let mut per_class: Vec<ClassImageStats> = class_image_counts(d)
        .into_iter()
        .enumerate()
        .map(|(class_id, images)| ClassImageStats {
            class_id,
            images,
            true_positives: 0,
            false_positives: 0,
            false_negatives: 0,
            precision: None,
            recall: None,
        })
        .collect();
    for (image, labeling) in d.images.iter().zip(labelings) {
        let output = output_label_set(labeling, c);
        for (k, stats) in per_class.iter_mut().enumerate() {
            match (image.image_labels.contains(&k), output[k]) {
                (true, true) => stats.true_positives += 1,
                (false, true) => stats.false_positives += 1,
                (true, false) => stats.false_negatives += 1,
                (false, false) => {}
            }
        }
    }
    for stats in &mut per_class {
        let predicted = stats.true_positives + stats.false_positives;
        let actual = stats.true_positives + stats.false_negatives;
        stats.precision = (predicted > 0).then(|| stats.true_positives as f64 / predicted as f64);
        stats.recall = (actual > 0).then(|| stats.true_positives as f64 / actual as f64);
    }
    Ok(WeakEvalReport {
        class_count: c,
        per_class,
        hamming_loss: ws_loss(labelings, d)?,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.4}", x))
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6}  {:>12}  {:>9}", "class", "pixels", "accuracy");
        for c in 0..self.class_count {
            let _ = writeln!(
                out,
                "{:>6}  {:>12}  {:>9}",
                c,
                self.class_pixel_counts[c],
                fmt_opt(self.per_class_accuracy[c])
            );
        }
        let _ = writeln!(
            out,
            "class-average accuracy: {:.4}",
            self.class_average_accuracy
        );
        let _ = writeln!(
            out,
            "global pixel accuracy:  {:.4}",
            self.global_pixel_accuracy
        );
        out
    }
}

impl WeakEvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6}  {:>7}  {:>9}  {:>9}",
            "class", "images", "precision", "recall"
        );
        for s in &self.per_class {
            let _ = writeln!(
                out,
                "{:>6}  {:>7}  {:>9}  {:>9}",
                s.class_id,
                s.images,
                fmt_opt(s.precision),
                fmt_opt(s.recall)
            );
        }
        let _ = writeln!(out, "weighted hamming loss: {:.4}", self.hamming_loss);
        out
    }
}
