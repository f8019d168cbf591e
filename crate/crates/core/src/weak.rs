//! Training from image-level labels only.
//!
//! Region labels are latent. Every region of an image starts as a positive
//! for each class the image carries; then SVM training and relabeling
//! alternate. Relabeling keeps each region positive only for the best
//! scoring class among its image's labels. Negatives (all regions of images
//! without the class) are fixed once and never change.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{evaluate_loss, GridSpec, LossKind};
use crate::dataset::{ClassId, Dataset, ImageId, RegionId, Supervision};
use crate::error::{Error, Result};
use crate::svm::{
    score_all, train_all, untrainable_warnings, ClassSamples, LinearModel, SampleSource, SvmConfig,
};

pub const DEFAULT_ROUNDS: usize = 5;

pub type RegionRef = (ImageId, RegionId);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentAssignment {
    pub positives: Vec<BTreeSet<RegionRef>>,
    pub negatives: Vec<BTreeSet<RegionRef>>,
}

impl LatentAssignment {
    pub fn class_count(&self) -> usize {
        self.positives.len()
    }

    /// Sample lists in the shape the SVM trainer expects.
    pub fn samples(&self) -> Vec<ClassSamples> {
        let to_sources = |set: &BTreeSet<RegionRef>| {
            set.iter()
                .map(|&(image, region)| SampleSource::Region { image, region })
                .collect()
        };
        self.positives
            .iter()
            .zip(&self.negatives)
            .map(|(pos, neg)| ClassSamples {
                positives: to_sources(pos),
                negatives: to_sources(neg),
            })
            .collect()
    }

    pub fn positive_counts(&self) -> Vec<usize> {
        self.positives.iter().map(BTreeSet::len).collect()
    }

    /// Classes each region is currently positive for, per image.
    pub fn region_labels(&self, d: &Dataset) -> Vec<Vec<Vec<ClassId>>> {
        let mut labels: Vec<Vec<Vec<ClassId>>> = d
            .images
            .iter()
            .map(|image| vec![Vec::new(); image.region_count()])
            .collect();
        for (class, set) in self.positives.iter().enumerate() {
            for &(image, region) in set {
                labels[image][region].push(class);
            }
        }
        labels
    }

    pub fn warnings(&self) -> Vec<String> {
        untrainable_warnings(&self.samples())
    }
}

/// Initial assignment: every region of an image is positive for all of the
/// image's labels and negative for all other classes.
pub fn init_latent(d: &Dataset) -> Result<LatentAssignment> {
    d.require(Supervision::Weak)?;
    let mut positives = vec![BTreeSet::new(); d.class_count];
    let mut negatives = vec![BTreeSet::new(); d.class_count];
    for image in &d.images {
        for class in 0..d.class_count {
            let target = if image.image_labels.contains(&class) {
                &mut positives[class]
            } else {
                &mut negatives[class]
            };
            target.extend((0..image.region_count()).map(|r| (image.id, r)));
        }
    }
    Ok(LatentAssignment {
        positives,
        negatives,
    })
}

/// Reassigns each region to the highest scoring class among its image's
/// labels (lowest class id on ties). Negatives are carried over unchanged.
pub fn relabel(
    d: &Dataset,
    models: &[LinearModel],
    assignment: &LatentAssignment,
) -> Result<LatentAssignment> {
    let scores = score_all(models, d)?;
    let winners: Vec<Vec<(RegionRef, ClassId)>> = d
        .images
        .par_iter()
        .zip(&scores)
        .map(|(image, s)| {
            let labels: Vec<ClassId> = image.image_labels.iter().copied().collect();
            if labels.is_empty() {
                return Vec::new();
            }
            (0..image.region_count())
                .map(|r| {
                    let mut best = labels[0];
                    for &c in &labels[1..] {
                        if s.get(r, c) > s.get(r, best) {
                            best = c;
                        }
                    }
                    ((image.id, r), best)
                })
                .collect()
        })
        .collect();
    let mut positives = vec![BTreeSet::new(); d.class_count];
    for (region, class) in winners.into_iter().flatten() {
        positives[class].insert(region);
    }
    Ok(LatentAssignment {
        positives,
        negatives: assignment.negatives.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Positive set sizes the round's SVMs were trained on.
    pub positive_counts: Vec<usize>,
    /// Positive memberships added or removed by this round's relabeling.
    pub changed: usize,
    /// Weak loss of the round's models at the initial calibration.
    pub ws_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct AlternationResult {
    pub models: Vec<LinearModel>,
    pub assignment: LatentAssignment,
    /// Assignment used for training in each round, starting with the
    /// initial one.
    pub snapshots: Vec<LatentAssignment>,
    pub history: Vec<RoundRecord>,
    pub converged: bool,
}

fn changed_regions(before: &LatentAssignment, after: &LatentAssignment) -> usize {
    before
        .positives
        .iter()
        .zip(&after.positives)
        .map(|(a, b)| a.symmetric_difference(b).count())
        .sum::<usize>()
}

/// Alternates SVM training and relabeling for at most `rounds` rounds,
/// stopping early when relabeling reaches a fixed point. The returned models
/// were trained on the returned assignment's predecessor; at a fixed point
/// the two coincide.
pub fn alternate_train(
    d: &Dataset,
    rounds: usize,
    config: &SvmConfig,
    track_loss: bool,
) -> Result<AlternationResult> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("rounds must be positive".into()));
    }
    let mut assignment = init_latent(d)?;
    let mut snapshots = Vec::new();
    let mut history = Vec::new();
    let mut models = Vec::new();
    let mut converged = false;
    for round in 0..rounds {
        models = train_all(d, &assignment.samples(), config)?;
        let next = relabel(d, &models, &assignment)?;
        let ws_loss = if track_loss {
            let scores = score_all(&models, d)?;
            let params = GridSpec::default().initial_params(d.class_count);
            Some(evaluate_loss(
                d,
                &scores,
                &params,
                LossKind::WeaklySupervised,
            )?)
        } else {
            None
        };
        let changed = changed_regions(&assignment, &next);
        history.push(RoundRecord {
            round,
            positive_counts: assignment.positive_counts(),
            changed,
            ws_loss,
        });
        snapshots.push(std::mem::replace(&mut assignment, next));
        if changed == 0 {
            converged = true;
            break;
        }
    }
    Ok(AlternationResult {
        models,
        assignment,
        snapshots,
        history,
        converged,
    })
}

#[derive(Serialize)]
struct SnapshotLine<'a> {
    image: ImageId,
    region: RegionId,
    positive_for: &'a [ClassId],
}

/// Writes an assignment as JSONL, one line per region with the classes it is
/// positive for.
pub fn write_assignment(
    d: &Dataset,
    assignment: &LatentAssignment,
    out: impl Write,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    let labels = assignment.region_labels(d);
    for (image, regions) in labels.iter().enumerate() {
        for (region, classes) in regions.iter().enumerate() {
            serde_json::to_writer(
                &mut out,
                &SnapshotLine {
                    image,
                    region,
                    positive_for: classes,
                },
            )?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}

pub fn save_assignment(d: &Dataset, assignment: &LatentAssignment, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_assignment(d, assignment, file).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use crate::test_support::{dataset, weak_image};

    fn weak_config(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            class_count: 4,
            images: 12,
            superpixels_per_image: 12,
            supervision: Supervision::Weak,
            seed,
            ..Default::default()
        }
    }

    fn model(class_id: ClassId, weights: Vec<f64>) -> LinearModel {
        LinearModel {
            class_id,
            weights: Some(weights),
        }
    }

    fn random_models(d: &Dataset, rng: &mut ChaCha8Rng) -> Vec<LinearModel> {
        (0..d.class_count)
            .map(|c| {
                model(
                    c,
                    (0..=d.feature_dim)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn init_matches_recount() {
        let d = generate_synthetic(&weak_config(1)).unwrap();
        let a = init_latent(&d).unwrap();
        for c in 0..d.class_count {
            let (mut pos, mut neg) = (0, 0);
            for image in &d.images {
                for r in 0..image.region_count() {
                    let carries = image.image_labels.contains(&c);
                    assert_eq!(a.positives[c].contains(&(image.id, r)), carries);
                    assert_eq!(a.negatives[c].contains(&(image.id, r)), !carries);
                    if carries {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
            }
            assert_eq!(a.positives[c].len(), pos);
            assert_eq!(a.negatives[c].len(), neg);
        }
    }

    #[test]
    fn init_puts_multi_label_regions_in_every_label() {
        let d = dataset(
            3,
            Supervision::Weak,
            vec![weak_image(0, 2, &[0, 1]), weak_image(1, 2, &[2])],
        );
        let a = init_latent(&d).unwrap();
        let labels = a.region_labels(&d);
        assert!(labels[0].iter().all(|classes| classes == &[0, 1]));
        assert!(labels[1].iter().all(|classes| classes == &[2]));
        assert!(a.negatives[0].contains(&(1, 0)));
        assert!(!a.negatives[0].contains(&(0, 0)));
        assert!(!a.negatives[1].contains(&(0, 0)));
    }

    #[test]
    fn init_requires_weak_data() {
        let mut d = generate_synthetic(&weak_config(1)).unwrap();
        d.supervision = Supervision::Full;
        assert!(init_latent(&d).is_err());
    }

    #[test]
    fn relabel_keeps_best_scoring_label() {
        let d = dataset(2, Supervision::Weak, vec![weak_image(0, 1, &[0, 1])]);
        let models = vec![model(0, vec![0.0, 3.2]), model(1, vec![0.0, -1.0])];
        let a = relabel(&d, &models, &init_latent(&d).unwrap()).unwrap();
        assert_eq!(a.positives[0].len(), 2);
        assert!(a.positives[1].is_empty());
    }

    #[test]
    fn relabel_breaks_ties_toward_lower_class() {
        let d = dataset(3, Supervision::Weak, vec![weak_image(0, 1, &[1, 2])]);
        let models = vec![
            model(0, vec![0.0, 9.0]),
            model(1, vec![0.0, 1.0]),
            model(2, vec![0.0, 1.0]),
        ];
        let a = relabel(&d, &models, &init_latent(&d).unwrap()).unwrap();
        assert_eq!(a.positive_counts(), vec![0, 2, 0]);
    }

    #[test]
    fn relabel_is_noop_for_single_label_images() {
        let d = dataset(
            3,
            Supervision::Weak,
            vec![
                weak_image(0, 3, &[0]),
                weak_image(1, 2, &[2]),
                weak_image(2, 1, &[1]),
            ],
        );
        let init = init_latent(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = relabel(&d, &random_models(&d, &mut rng), &init).unwrap();
        assert_eq!(a, init);
    }

    #[test]
    fn relabel_matches_brute_force_argmax() {
        let d = generate_synthetic(&weak_config(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let models = random_models(&d, &mut rng);
        let init = init_latent(&d).unwrap();
        let a = relabel(&d, &models, &init).unwrap();
        assert_eq!(a.negatives, init.negatives);
        let labels = a.region_labels(&d);
        for image in &d.images {
            for (r, features) in image.region_features.iter().enumerate() {
                let mut best: Option<(ClassId, f64)> = None;
                for &c in &image.image_labels {
                    let s = models[c].score(features);
                    if best.is_none_or(|(_, top)| s > top) {
                        best = Some((c, s));
                    }
                }
                let expected: Vec<ClassId> = best.map(|(c, _)| c).into_iter().collect();
                assert_eq!(labels[image.id][r], expected);
            }
        }
    }

    #[test]
    fn relabel_reaches_fixed_point_with_fixed_models() {
        let d = generate_synthetic(&weak_config(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let models = random_models(&d, &mut rng);
        let once = relabel(&d, &models, &init_latent(&d).unwrap()).unwrap();
        let twice = relabel(&d, &models, &once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn alternation_keeps_negatives_and_label_restriction() {
        let d = generate_synthetic(&weak_config(5)).unwrap();
        let result = alternate_train(&d, 4, &SvmConfig::default(), true).unwrap();
        let init = init_latent(&d).unwrap();
        for snapshot in result.snapshots.iter().chain([&result.assignment]) {
            assert_eq!(snapshot.negatives, init.negatives);
            for (c, set) in snapshot.positives.iter().enumerate() {
                assert!(set
                    .iter()
                    .all(|&(i, _)| d.images[i].image_labels.contains(&c)));
            }
        }
        assert_eq!(result.snapshots[0], init);
        assert!(result.history.iter().all(|h| h.ws_loss.is_some()));
        assert_eq!(result.history.len(), result.snapshots.len());
    }

    #[test]
    fn single_label_images_converge_in_one_round() {
        let images = (0..6)
            .map(|i| {
                let mut image = weak_image(i, 3, &[i % 3]);
                for f in &mut image.region_features {
                    f[0] = (i % 3) as f64;
                }
                image
            })
            .collect();
        let d = dataset(3, Supervision::Weak, images);
        let result = alternate_train(&d, 5, &SvmConfig::default(), false).unwrap();
        assert!(result.converged);
        assert_eq!(result.history.len(), 1);
        assert_eq!(result.history[0].changed, 0);
    }

    #[test]
    fn converged_assignment_is_stable() {
        let d = generate_synthetic(&SyntheticConfig {
            cluster_separation: 10.0,
            noise_sigma: 0.3,
            ..weak_config(6)
        })
        .unwrap();
        let result = alternate_train(&d, 20, &SvmConfig::default(), false).unwrap();
        assert!(result.converged);
        let again = relabel(&d, &result.models, &result.assignment).unwrap();
        assert_eq!(again, result.assignment);
    }

    #[test]
    fn recovers_region_classes_on_separable_data() {
        let config = SyntheticConfig {
            cluster_separation: 10.0,
            noise_sigma: 0.3,
            images: 24,
            supervision: Supervision::Full,
            ..weak_config(7)
        };
        let full = generate_synthetic(&config).unwrap();
        let weak = full.to_weak();
        let result = alternate_train(&weak, DEFAULT_ROUNDS, &SvmConfig::default(), false).unwrap();
        let labels = result.assignment.region_labels(&weak);
        let (mut hits, mut total) = (0usize, 0usize);
        for (image, regions) in full.images.iter().zip(&labels) {
            for (r, classes) in regions.iter().enumerate() {
                total += 1;
                if classes.len() == 1 && image.region_majority_class(r) == Some(classes[0]) {
                    hits += 1;
                }
            }
        }
        let recovery = hits as f64 / total as f64;
        assert!(recovery >= 0.9, "recovered {recovery}");
    }

    #[test]
    fn zero_rounds_rejected() {
        let d = generate_synthetic(&weak_config(1)).unwrap();
        assert!(alternate_train(&d, 0, &SvmConfig::default(), false).is_err());
    }

    #[test]
    fn assignment_jsonl_lists_every_region() {
        let d = dataset(2, Supervision::Weak, vec![weak_image(0, 2, &[0, 1])]);
        let mut out = Vec::new();
        write_assignment(&d, &init_latent(&d).unwrap(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], r#"{"image":0,"region":0,"positive_for":[0,1]}"#);
    }
}
