//! Small hand-built fixtures shared by unit tests.

use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{ClassId, Dataset, ImageRecord, RegionId, Superpixel, Supervision};
use crate::forest::{NodeShape, RegionForest};

/// Image from per-superpixel ground-truth histograms and the internal nodes
/// of its forest (leaves are added first, one per superpixel). Image labels
/// are the classes present in the histograms; features are all zero.
pub(crate) fn image(
    id: usize,
    histograms: &[&[(ClassId, u64)]],
    internal: &[Vec<RegionId>],
    roots: &[RegionId],
) -> ImageRecord {
    let superpixels: Vec<Superpixel> = histograms
        .iter()
        .enumerate()
        .map(|(sp, hist)| Superpixel {
            id: sp,
            pixel_count: hist.iter().map(|&(_, n)| n).sum(),
            gt_histogram: hist.iter().copied().filter(|&(_, n)| n > 0).collect(),
        })
        .collect();
    let pixels: Vec<u64> = superpixels.iter().map(|sp| sp.pixel_count).collect();
    let mut shapes: Vec<NodeShape> = (0..pixels.len()).map(NodeShape::Leaf).collect();
    shapes.extend(internal.iter().cloned().map(NodeShape::Internal));
    let forest = RegionForest::build(shapes, roots.to_vec(), &pixels).expect("valid fixture");
    let regions = forest.len();
    let mut image = ImageRecord {
        id,
        image_labels: BTreeSet::new(),
        superpixels,
        forest,
        region_features: vec![vec![0.0]; regions],
        gt_region_features: BTreeMap::new(),
    };
    image.image_labels = image.classes_present();
    image
}

/// Image whose superpixels each hold a single class, under one root.
pub(crate) fn strip_image(pixels: &[u64], classes: &[ClassId]) -> ImageRecord {
    let histograms: Vec<[(ClassId, u64); 1]> = pixels
        .iter()
        .zip(classes)
        .map(|(&n, &c)| [(c, n)])
        .collect();
    let refs: Vec<&[(ClassId, u64)]> = histograms.iter().map(|h| h.as_slice()).collect();
    let n = pixels.len();
    image(0, &refs, &[(0..n).collect()], &[n])
}

/// Image carrying only image-level labels, with one superpixel per label
/// set entry plus a root.
pub(crate) fn weak_image(id: usize, superpixels: usize, labels: &[ClassId]) -> ImageRecord {
    let mut image = strip_image(&vec![1; superpixels], &vec![0; superpixels]);
    image.id = id;
    for sp in &mut image.superpixels {
        sp.gt_histogram.clear();
    }
    image.image_labels = labels.iter().copied().collect();
    image
}

/// Dataset with renumbered image ids.
pub(crate) fn dataset(
    class_count: usize,
    supervision: Supervision,
    images: Vec<ImageRecord>,
) -> Dataset {
    let images = images
        .into_iter()
        .enumerate()
        .map(|(id, mut image)| {
            image.id = id;
            image
        })
        .collect();
    Dataset {
        class_count,
        feature_dim: 1,
        supervision,
        images,
    }
}
