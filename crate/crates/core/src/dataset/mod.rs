//! Dataset model: images made of superpixels, their region forests, region
//! features and the two kinds of ground truth (per-superpixel class
//! histograms for full supervision, image-level label sets for weak).
//!
//! Pixels are never stored individually. A superpixel carries its pixel
//! count and, in fully supervised data, a histogram of ground-truth classes
//! over its pixels; every pixel-level quantity is computed from those.

mod io;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::RegionForest;

pub use io::{
    import_features, load_dataset, read_dataset, save_dataset, write_dataset, FORMAT_VERSION,
};
pub use synthetic::{generate_synthetic, random_forest, SyntheticConfig};

pub type ClassId = usize;
pub type RegionId = usize;
pub type SuperpixelId = usize;
pub type ImageId = usize;

/// A feature vector. All entries finite, length equal to the dataset's
/// `feature_dim`.
pub type FeatureVector = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    Full,
    Weak,
}

impl Supervision {
    pub fn as_str(self) -> &'static str {
        match self {
            Supervision::Full => "full",
            Supervision::Weak => "weak",
        }
    }
}

impl fmt::Display for Supervision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Superpixel {
    pub id: SuperpixelId,
    pub pixel_count: u64,
    /// Ground-truth pixels per class. Empty in weakly supervised datasets.
    pub gt_histogram: BTreeMap<ClassId, u64>,
}

impl Superpixel {
    /// Class holding the most pixels, lowest id on ties.
    pub fn majority_class(&self) -> Option<ClassId> {
        let mut best: Option<(ClassId, u64)> = None;
        for (&class, &count) in &self.gt_histogram {
            if count > 0 && best.is_none_or(|(_, top)| count > top) {
                best = Some((class, count));
            }
        }
        best.map(|(class, _)| class)
    }

    pub fn gt_pixels(&self, class: ClassId) -> u64 {
        self.gt_histogram.get(&class).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: ImageId,
    pub superpixels: Vec<Superpixel>,
    pub forest: RegionForest,
    /// One feature vector per region, indexed by `RegionId`.
    pub region_features: Vec<FeatureVector>,
    /// Image-level ground truth.
    pub image_labels: BTreeSet<ClassId>,
    /// Features of the ground-truth regions (one per class present), used as
    /// extra positives in fully supervised training. May be empty, in which
    /// case those positives are skipped.
    pub gt_region_features: BTreeMap<ClassId, FeatureVector>,
}

impl ImageRecord {
    pub fn superpixel_count(&self) -> usize {
        self.superpixels.len()
    }

    pub fn region_count(&self) -> usize {
        self.forest.nodes.len()
    }

    /// Image area in pixels.
    pub fn area(&self) -> u64 {
        self.superpixels.iter().map(|sp| sp.pixel_count).sum()
    }

    /// Ground-truth regions: for each class, the superpixels whose majority
    /// label is that class.
    pub fn ground_truth_regions(&self) -> BTreeMap<ClassId, Vec<SuperpixelId>> {
        let mut regions: BTreeMap<ClassId, Vec<SuperpixelId>> = BTreeMap::new();
        for sp in &self.superpixels {
            if let Some(class) = sp.majority_class() {
                regions.entry(class).or_default().push(sp.id);
            }
        }
        regions
    }

    /// Class holding most ground-truth pixels of a region (lowest id on
    /// ties); `None` without pixel-level ground truth.
    pub fn region_majority_class(&self, region: RegionId) -> Option<ClassId> {
        let mut mass: BTreeMap<ClassId, u64> = BTreeMap::new();
        for &sp in &self.forest.nodes[region].superpixels {
            for (&class, &n) in &self.superpixels[sp].gt_histogram {
                *mass.entry(class).or_default() += n;
            }
        }
        let mut best: Option<(ClassId, u64)> = None;
        for (class, n) in mass {
            if n > 0 && best.is_none_or(|(_, top)| n > top) {
                best = Some((class, n));
            }
        }
        best.map(|(class, _)| class)
    }

    /// Classes with nonzero ground-truth mass anywhere in the image.
    pub fn classes_present(&self) -> BTreeSet<ClassId> {
        self.superpixels
            .iter()
            .flat_map(|sp| sp.gt_histogram.iter())
            .filter(|(_, &count)| count > 0)
            .map(|(&class, _)| class)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_count: usize,
    pub feature_dim: usize,
    pub supervision: Supervision,
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn total_pixels(&self) -> u64 {
        self.images.iter().map(ImageRecord::area).sum()
    }

    pub fn require(&self, supervision: Supervision) -> Result<()> {
        if self.supervision == supervision {
            Ok(())
        } else {
            Err(Error::UnsupportedSupervision {
                expected: supervision.as_str(),
                found: self.supervision.as_str(),
            })
        }
    }

    /// Drops pixel-level ground truth, keeping image-level labels.
    pub fn to_weak(&self) -> Dataset {
        let mut weak = self.clone();
        weak.supervision = Supervision::Weak;
        for image in &mut weak.images {
            for sp in &mut image.superpixels {
                sp.gt_histogram.clear();
            }
            image.gt_region_features.clear();
        }
        weak
    }

    /// Checks every structural invariant of the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::Validation("class_count must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Validation("feature_dim must be positive".into()));
        }
        for (index, image) in self.images.iter().enumerate() {
            self.validate_image(index, image)?;
        }
        Ok(())
    }

    fn validate_image(&self, index: usize, image: &ImageRecord) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("image {}: {msg}", image.id)));
        if image.id != index {
            return fail(format!("image id {} at position {index}", image.id));
        }
        if image.superpixels.is_empty() {
            return fail("no superpixels".into());
        }
        for (i, sp) in image.superpixels.iter().enumerate() {
            if sp.id != i {
                return fail(format!("superpixel id {} at position {i}", sp.id));
            }
            if sp.pixel_count == 0 {
                return fail(format!("superpixel {i} has no pixels"));
            }
            for &class in sp.gt_histogram.keys() {
                if class >= self.class_count {
                    return fail(format!("superpixel {i} references class {class}"));
                }
            }
            match self.supervision {
                Supervision::Full => {
                    let mass: u64 = sp.gt_histogram.values().sum();
                    if mass != sp.pixel_count {
                        return fail(format!(
                            "superpixel {i}: histogram mass {mass} != pixel count {}",
                            sp.pixel_count
                        ));
                    }
                }
                Supervision::Weak => {
                    if !sp.gt_histogram.is_empty() {
                        return fail(format!("superpixel {i}: histogram in weak dataset"));
                    }
                }
            }
        }
        let violations = crate::forest::validate_forest(&image.forest, &image.superpixels);
        if !violations.is_empty() {
            return Err(Error::InvalidForest {
                image: image.id,
                violations,
            });
        }
        if image.region_features.len() != image.region_count() {
            return fail(format!(
                "{} feature vectors for {} regions",
                image.region_features.len(),
                image.region_count()
            ));
        }
        let features = image
            .region_features
            .iter()
            .enumerate()
            .map(|(r, f)| (format!("region {r}"), f))
            .chain(
                image
                    .gt_region_features
                    .iter()
                    .map(|(c, f)| (format!("ground-truth region of class {c}"), f)),
            );
        for (what, feature) in features {
            if feature.len() != self.feature_dim {
                return fail(format!(
                    "{what}: feature dim {} != {}",
                    feature.len(),
                    self.feature_dim
                ));
            }
            if feature.iter().any(|v| !v.is_finite()) {
                return fail(format!("{what}: non-finite feature"));
            }
        }
        for &class in &image.image_labels {
            if class >= self.class_count {
                return fail(format!("image label {class} out of range"));
            }
        }
        if self.supervision == Supervision::Full && image.image_labels != image.classes_present() {
            return fail("image labels disagree with ground-truth histograms".into());
        }
        Ok(())
    }
}

/// Intersection-over-union of two superpixel sets, measured in pixels.
pub fn iou(a: &[SuperpixelId], b: &[SuperpixelId], image: &ImageRecord) -> Result<f64> {
    let count = image.superpixel_count();
    let to_set = |ids: &[SuperpixelId]| -> Result<BTreeSet<SuperpixelId>> {
        ids.iter()
            .map(|&sp| {
                if sp < count {
                    Ok(sp)
                } else {
                    Err(Error::UnknownSuperpixel {
                        superpixel: sp,
                        count,
                    })
                }
            })
            .collect()
    };
    let a = to_set(a)?;
    let b = to_set(b)?;
    if a.is_empty() && b.is_empty() {
        return Err(Error::Undefined("IoU of two empty sets".into()));
    }
    let pixels = |sp: &SuperpixelId| image.superpixels[*sp].pixel_count;
    let intersection: u64 = a.intersection(&b).map(pixels).sum();
    let union: u64 = a.union(&b).map(pixels).sum();
    Ok(intersection as f64 / union as f64)
}

/// Pixels per ground-truth class over the whole dataset (`P_c`).
pub fn class_pixel_counts(d: &Dataset) -> Result<Vec<u64>> {
    d.require(Supervision::Full)?;
    let mut counts = vec![0u64; d.class_count];
    for sp in d.images.iter().flat_map(|image| &image.superpixels) {
        for (&class, &pixels) in &sp.gt_histogram {
            counts[class] += pixels;
        }
    }
    Ok(counts)
}

/// Number of images whose label set contains each class (`I_c`).
pub fn class_image_counts(d: &Dataset) -> Vec<usize> {
    let mut counts = vec![0usize; d.class_count];
    for image in &d.images {
        for &class in &image.image_labels {
            counts[class] += 1;
        }
    }
    counts
}
