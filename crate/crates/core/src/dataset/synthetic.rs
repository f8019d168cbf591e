//! Synthetic datasets with controlled class imbalance and region overlap.
//!
//! Each image is a strip of superpixels holding a few objects laid out left
//! to right. Class `k` (1-based) has target pixel share `p_k ~ k^-alpha`.
//! An object draws its class with probability about `p_k^(1 - size_imbalance)`
//! and a size weight `~ p_k^size_imbalance` (jittered); the image's
//! superpixels are split between its objects in proportion to the weights.
//! When `size_imbalance` is 0 sizes are independent of class and expected
//! pixel shares follow the power law directly. A positive `size_imbalance`
//! turns rare classes into small objects and frequent ones into large
//! backgrounds; the class probabilities are then corrected on simulated
//! layouts so the expected shares still follow the power law. Object classes
//! are stratified over the dataset to keep the realized shares close to the
//! expected ones.
//! Where two objects of different classes meet, the boundary superpixel may
//! take a minority share of its neighbour's class.
//!
//! Classes have cluster centres on a scaled simplex (`separation / sqrt 2`
//! times the unit vectors, so centres are `separation` apart) when
//! `feature_dim >= class_count`, otherwise random directions of the same
//! length. A region's feature is the pixel-weighted mean of the centres of
//! the classes it covers plus Gaussian noise, so regions straddling objects
//! look mixed.
//!
//! Hierarchies are binary merge trees over adjacent segments of the strip.
//! The first merges the most similar neighbours first (feature distance plus
//! a size term), the others merge random neighbours.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureVector, ImageRecord, Superpixel, SuperpixelId, Supervision};
use crate::error::{Error, Result};
use crate::forest::{NodeShape, RegionForest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub class_count: usize,
    pub images: usize,
    pub superpixels_per_image: usize,
    pub hierarchy_count: usize,
    /// Exponent of the power law over class pixel frequencies.
    pub imbalance_exponent: f64,
    pub feature_dim: usize,
    /// Distance between class cluster centres.
    pub cluster_separation: f64,
    pub noise_sigma: f64,
    /// Objects per image are drawn uniformly from `2..=max_objects`.
    pub max_objects: usize,
    /// How strongly object size shrinks with class rarity, in `[0, 1]`.
    pub size_imbalance: f64,
    /// Probability that a boundary between two objects blurs one superpixel.
    pub boundary_mixing: f64,
    /// Range of superpixel sizes in pixels, inclusive.
    pub pixels_per_superpixel: (u64, u64),
    pub supervision: Supervision,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            class_count: 8,
            images: 64,
            superpixels_per_image: 48,
            hierarchy_count: 2,
            imbalance_exponent: 1.0,
            feature_dim: 16,
            cluster_separation: 4.0,
            noise_sigma: 0.5,
            max_objects: 6,
            size_imbalance: 0.0,
            boundary_mixing: 0.3,
            pixels_per_superpixel: (20, 60),
            supervision: Supervision::Full,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Strongly imbalanced data in which frequent classes form large
    /// backgrounds and rare classes small objects, so that at a shared
    /// calibration large background regions outscore the rare classes they
    /// contain.
    pub fn suppression() -> Self {
        SyntheticConfig {
            imbalance_exponent: 2.0,
            size_imbalance: 1.0,
            cluster_separation: 3.0,
            seed: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.class_count < 2 {
            return fail("class_count must be at least 2");
        }
        if self.superpixels_per_image < 2 {
            return fail("superpixels_per_image must be at least 2");
        }
        if self.images == 0 || self.hierarchy_count == 0 || self.feature_dim == 0 {
            return fail("images, hierarchy_count and feature_dim must be positive");
        }
        if !(self.imbalance_exponent.is_finite() && self.imbalance_exponent >= 0.0) {
            return fail("imbalance_exponent must be finite and non-negative");
        }
        if !(self.cluster_separation.is_finite() && self.cluster_separation > 0.0) {
            return fail("cluster_separation must be positive");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be non-negative");
        }
        if self.max_objects < 2 {
            return fail("max_objects must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.size_imbalance) {
            return fail("size_imbalance must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.boundary_mixing) {
            return fail("boundary_mixing must lie in [0, 1]");
        }
        let (lo, hi) = self.pixels_per_superpixel;
        if lo == 0 || lo > hi {
            return fail("pixels_per_superpixel must be a non-empty positive range");
        }
        Ok(())
    }

    /// Expected pixel share of each class.
    pub fn class_frequencies(&self) -> Vec<f64> {
        power_law(self.class_count, self.imbalance_exponent)
    }

    /// Probability of each class per object. Starts from
    /// `p^(1 - size_imbalance)` and, when sizes depend on the class, is
    /// corrected on simulated layouts until the expected superpixel shares
    /// match the power law (sizes are normalized per image, so the plain
    /// product of frequency and size is only a first guess).
    fn object_class_probabilities(&self) -> Vec<f64> {
        let target = self.class_frequencies();
        let mut q = normalized(target.iter().map(|p| p.powf(1.0 - self.size_imbalance)));
        if self.size_imbalance == 0.0 {
            return q;
        }
        let sizes = self.object_size_weights();
        let layouts = simulated_layouts(self);
        for _ in 0..PROBABILITY_CORRECTION_ROUNDS {
            let shares = simulated_shares(&layouts, &q, &sizes, self.superpixels_per_image);
            q = normalized(q.iter().zip(&target).zip(&shares).map(|((&q, &p), &s)| {
                if s > 0.0 {
                    q * p / s
                } else {
                    2.0 * q
                }
            }));
        }
        q
    }

    fn object_size_weights(&self) -> Vec<f64> {
        let freq = self.class_frequencies();
        freq.iter()
            .map(|p| (p / freq[0]).powf(self.size_imbalance))
            .collect()
    }
}

fn power_law(classes: usize, exponent: f64) -> Vec<f64> {
    normalized((1..=classes).map(|k| (k as f64).powf(-exponent)))
}

fn normalized(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let raw: Vec<f64> = values.collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

const PROBABILITY_CORRECTION_ROUNDS: usize = 40;
const SIMULATED_IMAGES: usize = 4000;

/// Per simulated image: one uniform draw per object for its class and one
/// size jitter. Drawn from a fixed stream so the corrected probabilities
/// depend on the config only.
struct SimulatedObject {
    class_draw: f64,
    jitter: f64,
}

fn simulated_layouts(config: &SyntheticConfig) -> Vec<Vec<SimulatedObject>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c61_796f_7574);
    (0..SIMULATED_IMAGES)
        .map(|_| {
            let n = rng
                .random_range(2..=config.max_objects)
                .min(config.superpixels_per_image);
            (0..n)
                .map(|_| SimulatedObject {
                    class_draw: rng.random(),
                    jitter: rng.random_range(0.5..1.5),
                })
                .collect()
        })
        .collect()
}

fn simulated_shares(
    layouts: &[Vec<SimulatedObject>],
    probabilities: &[f64],
    sizes: &[f64],
    superpixels: usize,
) -> Vec<f64> {
    let cumulative: Vec<f64> = probabilities
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let mut counts = vec![0usize; probabilities.len()];
    for objects in layouts {
        let classes: Vec<usize> = objects
            .iter()
            .map(|o| {
                cumulative
                    .iter()
                    .position(|&c| o.class_draw < c)
                    .unwrap_or(cumulative.len() - 1)
            })
            .collect();
        let weights: Vec<f64> = objects
            .iter()
            .zip(&classes)
            .map(|(o, &c)| sizes[c] * o.jitter)
            .collect();
        for (share, &c) in split_proportionally(superpixels, &weights)
            .iter()
            .zip(&classes)
        {
            counts[c] += share;
        }
    }
    normalized(counts.into_iter().map(|n| n as f64))
}

/// Splits `total` into non-negative integer shares proportional to `weights`
/// (largest remainder, lower index first on equal remainders).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut shares: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = shares.iter().sum();
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        shares[i] += 1;
    }
    shares
}

fn class_centers(config: &SyntheticConfig, rng: &mut impl Rng) -> Vec<FeatureVector> {
    let radius = config.cluster_separation / std::f64::consts::SQRT_2;
    (0..config.class_count)
        .map(|c| {
            if config.feature_dim >= config.class_count {
                let mut v = vec![0.0; config.feature_dim];
                v[c] = radius;
                v
            } else {
                let v: Vec<f64> = (0..config.feature_dim)
                    .map(|_| StandardNormal.sample(rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * radius / norm).collect()
            }
        })
        .collect()
}

struct FeatureModel {
    centers: Vec<FeatureVector>,
    noise: Normal<f64>,
}

impl FeatureModel {
    /// Pixel-weighted mean of class centres over `members`, plus noise.
    fn sample(
        &self,
        superpixels: &[Superpixel],
        members: &[SuperpixelId],
        rng: &mut impl Rng,
    ) -> FeatureVector {
        let dim = self.centers[0].len();
        let mut mix = vec![0.0; dim];
        let mut total = 0u64;
        for &sp in members {
            for (&class, &n) in &superpixels[sp].gt_histogram {
                total += n;
                for (m, c) in mix.iter_mut().zip(&self.centers[class]) {
                    *m += n as f64 * c;
                }
            }
        }
        let total = total.max(1) as f64;
        mix.into_iter()
            .map(|m| m / total + self.noise.sample(rng))
            .collect()
    }
}

/// Generates a dataset; the output is a pure function of the config.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = FeatureModel {
        centers: class_centers(config, &mut rng),
        noise: Normal::new(0.0, config.noise_sigma)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?,
    };
    let sizes = config.object_size_weights();

    // Object classes are stratified over the dataset, separately for each
    // objects-per-image count: class counts match the object probabilities
    // up to rounding, and a shuffle spreads them over the images.
    let object_counts: Vec<usize> = (0..config.images)
        .map(|_| {
            rng.random_range(2..=config.max_objects)
                .min(config.superpixels_per_image)
        })
        .collect();
    let probabilities = config.object_class_probabilities();
    let mut images_per_count: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in &object_counts {
        *images_per_count.entry(n).or_default() += 1;
    }
    let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&n, &images) in &images_per_count {
        let mut classes: Vec<usize> = apportion(n * images, &probabilities)
            .into_iter()
            .enumerate()
            .flat_map(|(class, k)| std::iter::repeat_n(class, k))
            .collect();
        classes.shuffle(&mut rng);
        pools.insert(n, classes);
    }

    let mut images = Vec::with_capacity(config.images);
    for (id, &n) in object_counts.iter().enumerate() {
        let pool = pools.get_mut(&n).expect("pool per object count");
        let classes = pool.split_off(pool.len() - n);
        images.push(generate_image(
            id, config, &model, &classes, &sizes, &mut rng,
        )?);
    }
    let full = Dataset {
        class_count: config.class_count,
        feature_dim: config.feature_dim,
        supervision: Supervision::Full,
        images,
    };
    Ok(match config.supervision {
        Supervision::Full => full,
        Supervision::Weak => full.to_weak(),
    })
}

fn generate_image(
    id: usize,
    config: &SyntheticConfig,
    model: &FeatureModel,
    classes: &[usize],
    size_weights: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<ImageRecord> {
    let s = config.superpixels_per_image;
    let (lo, hi) = config.pixels_per_superpixel;

    // Object layout: class per superpixel.
    let weights: Vec<f64> = classes
        .iter()
        .map(|&c| size_weights[c] * rng.random_range(0.5..1.5))
        .collect();
    let owner: Vec<usize> = split_proportionally(s, &weights)
        .into_iter()
        .zip(classes)
        .flat_map(|(len, &class)| std::iter::repeat_n(class, len))
        .collect();

    let mut superpixels: Vec<Superpixel> = owner
        .iter()
        .enumerate()
        .map(|(sp, &class)| {
            let pixel_count = rng.random_range(lo..=hi);
            Superpixel {
                id: sp,
                pixel_count,
                gt_histogram: BTreeMap::from([(class, pixel_count)]),
            }
        })
        .collect();

    // Blur some object boundaries: one side gives a minority share of its
    // pixels to the other side's class.
    for sp in 1..s {
        if owner[sp] == owner[sp - 1] || !rng.random_bool(config.boundary_mixing) {
            continue;
        }
        let (target, donor_class) = if rng.random_bool(0.5) {
            (sp, owner[sp - 1])
        } else {
            (sp - 1, owner[sp])
        };
        let share: f64 = rng.random_range(0.05..0.45);
        let node = &mut superpixels[target];
        let moved = ((node.pixel_count as f64 * share).floor() as u64).min(node.pixel_count / 2);
        if moved == 0 {
            continue;
        }
        let own = owner[target];
        *node.gt_histogram.get_mut(&own).expect("own class present") -= moved;
        *node.gt_histogram.entry(donor_class).or_insert(0) += moved;
        node.gt_histogram.retain(|_, n| *n > 0);
    }

    // Leaf appearance drives the similarity hierarchy.
    let leaf_features: Vec<FeatureVector> = (0..s)
        .map(|sp| model.sample(&superpixels, &[sp], rng))
        .collect();
    let pixels: Vec<u64> = superpixels.iter().map(|sp| sp.pixel_count).collect();

    let mut shapes: Vec<NodeShape> = (0..s).map(NodeShape::Leaf).collect();
    let mut roots = Vec::with_capacity(config.hierarchy_count);
    for tree in 0..config.hierarchy_count {
        let root = if tree == 0 {
            similarity_hierarchy(&mut shapes, &leaf_features, &pixels)
        } else {
            random_hierarchy(&mut shapes, s, rng)
        };
        roots.push(root);
    }
    let forest =
        RegionForest::build(shapes, roots, &pixels).map_err(|violations| Error::InvalidForest {
            image: id,
            violations,
        })?;

    let mut region_features = Vec::with_capacity(forest.len());
    for (r, node) in forest.nodes.iter().enumerate() {
        if r < s {
            region_features.push(leaf_features[r].clone());
        } else {
            region_features.push(model.sample(&superpixels, &node.superpixels, rng));
        }
    }

    let mut image = ImageRecord {
        id,
        image_labels: BTreeSet::new(),
        superpixels,
        forest,
        region_features,
        gt_region_features: BTreeMap::new(),
    };
    image.image_labels = image.classes_present();
    for (class, members) in image.ground_truth_regions() {
        let features = model.sample(&image.superpixels, &members, rng);
        image.gt_region_features.insert(class, features);
    }
    Ok(image)
}

/// Splits `total` items into one positive share per weight, proportional to
/// the weights (largest remainder). Requires `weights.len() <= total`.
fn split_proportionally(total: usize, weights: &[f64]) -> Vec<usize> {
    apportion(total - weights.len(), weights)
        .into_iter()
        .map(|n| n + 1)
        .collect()
}

/// Adjacent segments of the strip with the node that currently covers each.
struct Segment {
    node: usize,
    pixels: u64,
    feature: FeatureVector,
}

fn similarity_hierarchy(
    shapes: &mut Vec<NodeShape>,
    leaf_features: &[FeatureVector],
    pixels: &[u64],
) -> usize {
    let area: u64 = pixels.iter().sum();
    let mut segments: Vec<Segment> = (0..leaf_features.len())
        .map(|sp| Segment {
            node: sp,
            pixels: pixels[sp],
            feature: leaf_features[sp].clone(),
        })
        .collect();
    while segments.len() > 1 {
        let cost = |a: &Segment, b: &Segment| {
            let dist: f64 = a
                .feature
                .iter()
                .zip(&b.feature)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            dist + (a.pixels + b.pixels) as f64 / area as f64
        };
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for i in 0..segments.len() - 1 {
            let c = cost(&segments[i], &segments[i + 1]);
            if c < best_cost {
                best_cost = c;
                best = i;
            }
        }
        let right = segments.remove(best + 1);
        let left = &mut segments[best];
        let total = left.pixels + right.pixels;
        for (l, r) in left.feature.iter_mut().zip(&right.feature) {
            *l = (*l * left.pixels as f64 + r * right.pixels as f64) / total as f64;
        }
        shapes.push(NodeShape::Internal(vec![left.node, right.node]));
        left.node = shapes.len() - 1;
        left.pixels = total;
    }
    segments[0].node
}

fn random_hierarchy(shapes: &mut Vec<NodeShape>, leaves: usize, rng: &mut impl Rng) -> usize {
    let mut segments: Vec<usize> = (0..leaves).collect();
    while segments.len() > 1 {
        let i = rng.random_range(0..segments.len() - 1);
        let right = segments.remove(i + 1);
        shapes.push(NodeShape::Internal(vec![segments[i], right]));
        segments[i] = shapes.len() - 1;
    }
    segments[0]
}

/// A random forest of `trees` hierarchies over leaves `0..pixels.len()`.
/// Each tree recursively splits a shuffled copy of the leaves into 2 to 4
/// groups until groups are single leaves or `max_depth` is reached, where
/// the remaining leaves hang directly below their node.
pub fn random_forest(
    rng: &mut impl Rng,
    pixels: &[u64],
    trees: usize,
    max_depth: usize,
) -> RegionForest {
    assert!(trees > 0 && max_depth > 0 && !pixels.is_empty());
    let leaves = pixels.len();
    let mut shapes: Vec<NodeShape> = (0..leaves).map(NodeShape::Leaf).collect();
    let mut roots = Vec::with_capacity(trees);
    for _ in 0..trees {
        let mut order: Vec<usize> = (0..leaves).collect();
        order.shuffle(rng);
        roots.push(split_group(&mut shapes, &order, 1, max_depth, rng));
    }
    RegionForest::build(shapes, roots, pixels).expect("random forest is well formed")
}

fn split_group(
    shapes: &mut Vec<NodeShape>,
    group: &[usize],
    depth: usize,
    max_depth: usize,
    rng: &mut impl Rng,
) -> usize {
    if group.len() == 1 {
        return group[0];
    }
    let children = if depth >= max_depth {
        group.to_vec()
    } else {
        let parts = rng.random_range(2..=4).min(group.len());
        let mut cuts: Vec<usize> = (1..group.len()).collect();
        cuts.shuffle(rng);
        let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
        cuts.sort_unstable();
        let mut start = 0;
        let mut children = Vec::with_capacity(parts);
        for end in cuts.into_iter().chain(std::iter::once(group.len())) {
            children.push(split_group(
                shapes,
                &group[start..end],
                depth + 1,
                max_depth,
                rng,
            ));
            start = end;
        }
        children
    };
    shapes.push(NodeShape::Internal(children));
    shapes.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{class_pixel_counts, write_dataset};
    use crate::forest::validate_forest;

    #[test]
    fn tiny_config_is_well_formed() {
        let d = generate_synthetic(&SyntheticConfig {
            class_count: 2,
            images: 1,
            superpixels_per_image: 4,
            seed: 7,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(d.images.len(), 1);
        let image = &d.images[0];
        assert_eq!(image.superpixel_count(), 4);
        assert_eq!(image.forest.roots.len(), 2);
        // Two binary trees over 4 leaves: 4 + 3 + 3 regions.
        assert_eq!(image.region_count(), 10);
        assert!(validate_forest(&image.forest, &image.superpixels).is_empty());
        for &root in &image.forest.roots {
            assert_eq!(image.forest.nodes[root].pixel_count, image.area());
        }
        d.validate().unwrap();
    }

    #[test]
    fn same_seed_same_bytes() {
        let config = SyntheticConfig {
            images: 5,
            seed: 99,
            ..Default::default()
        };
        let bytes = |d: &Dataset| {
            let mut buf = Vec::new();
            write_dataset(d, &mut buf).unwrap();
            buf
        };
        let a = generate_synthetic(&config).unwrap();
        let b = generate_synthetic(&config).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let c = generate_synthetic(&SyntheticConfig {
            seed: 100,
            ..config
        })
        .unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn rejects_degenerate_configs() {
        for config in [
            SyntheticConfig {
                class_count: 1,
                ..Default::default()
            },
            SyntheticConfig {
                superpixels_per_image: 1,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                generate_synthetic(&config),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn pixel_frequencies_follow_power_law() {
        let config = SyntheticConfig {
            class_count: 5,
            imbalance_exponent: 1.5,
            images: 200,
            seed: 3,
            ..Default::default()
        };
        let d = generate_synthetic(&config).unwrap();
        let counts = class_pixel_counts(&d).unwrap();
        let total: u64 = counts.iter().sum();
        // k^-1.5 for k = 1..5, normalized.
        let raw: Vec<f64> = (1..=5).map(|k| (k as f64).powf(-1.5)).collect();
        let norm: f64 = raw.iter().sum();
        for (k, &n) in counts.iter().enumerate() {
            let expected = raw[k] / norm;
            let observed = n as f64 / total as f64;
            assert!(
                (observed - expected).abs() <= 0.1 * expected,
                "class {k}: observed {observed}, expected {expected}"
            );
        }
    }

    #[test]
    fn weak_generation_has_labels_only() {
        let d = generate_synthetic(&SyntheticConfig {
            images: 3,
            supervision: Supervision::Weak,
            ..Default::default()
        })
        .unwrap();
        d.validate().unwrap();
        assert!(d.images.iter().all(|i| !i.image_labels.is_empty()));
        assert!(d
            .images
            .iter()
            .flat_map(|i| &i.superpixels)
            .all(|sp| sp.gt_histogram.is_empty()));
    }

    #[test]
    fn proportional_split_fills_exactly() {
        assert_eq!(split_proportionally(10, &[1.0, 1.0]), vec![5, 5]);
        assert_eq!(split_proportionally(10, &[3.0, 1.0]), vec![7, 3]);
        let shares = split_proportionally(7, &[0.1, 5.0, 0.1, 0.1]);
        assert_eq!(shares.iter().sum::<usize>(), 7);
        assert!(shares.iter().all(|&n| n >= 1));
    }

    #[test]
    fn random_forests_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for depth in 1..=6 {
            let pixels: Vec<u64> = (0..20).map(|i| 1 + i % 7).collect();
            let forest = random_forest(&mut rng, &pixels, 2, depth);
            assert_eq!(forest.roots.len(), 2);
            assert_eq!(forest.superpixel_count(), 20);
        }
    }
}
