//! Line-delimited JSON dataset files (`*.rds.jsonl`).
//!
//! The first line is a header:
//!
//! ```json
//! {"format":"regioncal-dataset","version":1,"class_count":3,"feature_dim":4,"supervision":"full"}
//! ```
//!
//! Every following line is one image, in id order:
//!
//! ```json
//! {"id":0,"labels":[0,2],
//!  "superpixels":[{"pixels":40,"gt":[[0,30],[2,10]]}, ...],
//!  "regions":[{"leaf":0},{"leaf":1},{"internal":[0,1]}, ...],
//!  "roots":[6,9],
//!  "features":[[0.1,-2.0,0.5,1.0], ...],
//!  "gt_features":[{"class":0,"features":[...]}, ...]}
//! ```
//!
//! Superpixel and region ids are positions in their arrays. `gt` lists
//! `[class, pixels]` pairs and is empty in weakly supervised files.
//! `features` has one vector per region. `gt_features` holds the features of
//! each class's ground-truth region (the superpixels whose majority label is
//! that class); it may be omitted.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so a save/load cycle is exact.
//!
//! Externally computed features can replace the stored ones with
//! [`import_features`], reading a sidecar JSONL file of
//! `{"image":0,"region":3,"features":[...]}` lines and optionally
//! `{"image":0,"gt_class":2,"features":[...]}` lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassId, Dataset, FeatureVector, ImageRecord, Superpixel, Supervision};
use crate::error::{Error, Result};
use crate::forest::{NodeShape, RegionForest};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "regioncal-dataset";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    class_count: usize,
    feature_dim: usize,
    supervision: Supervision,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuperpixelLine {
    pixels: u64,
    #[serde(default)]
    gt: Vec<(ClassId, u64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtFeatureLine {
    class: ClassId,
    features: FeatureVector,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageLine {
    id: usize,
    labels: Vec<ClassId>,
    superpixels: Vec<SuperpixelLine>,
    regions: Vec<NodeShape>,
    roots: Vec<usize>,
    features: Vec<FeatureVector>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    gt_features: Vec<GtFeatureLine>,
}

impl ImageLine {
    fn from_image(image: &ImageRecord) -> Self {
        ImageLine {
            id: image.id,
            labels: image.image_labels.iter().copied().collect(),
            superpixels: image
                .superpixels
                .iter()
                .map(|sp| SuperpixelLine {
                    pixels: sp.pixel_count,
                    gt: sp.gt_histogram.iter().map(|(&c, &n)| (c, n)).collect(),
                })
                .collect(),
            regions: image.forest.shapes(),
            roots: image.forest.roots.clone(),
            features: image.region_features.clone(),
            gt_features: image
                .gt_region_features
                .iter()
                .map(|(&class, features)| GtFeatureLine {
                    class,
                    features: features.clone(),
                })
                .collect(),
        }
    }

    fn into_image(self) -> Result<ImageRecord> {
        let pixels: Vec<u64> = self.superpixels.iter().map(|sp| sp.pixels).collect();
        let forest =
            RegionForest::build(self.regions, self.roots, &pixels).map_err(|violations| {
                Error::InvalidForest {
                    image: self.id,
                    violations,
                }
            })?;
        let superpixels = self
            .superpixels
            .into_iter()
            .enumerate()
            .map(|(id, sp)| {
                let mut gt_histogram = BTreeMap::new();
                for (class, n) in sp.gt {
                    if gt_histogram.insert(class, n).is_some() {
                        return Err(Error::Validation(format!(
                            "image {}: superpixel {id} lists class {class} twice",
                            self.id
                        )));
                    }
                }
                Ok(Superpixel {
                    id,
                    pixel_count: sp.pixels,
                    gt_histogram,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut gt_region_features = BTreeMap::new();
        for line in self.gt_features {
            if gt_region_features
                .insert(line.class, line.features)
                .is_some()
            {
                return Err(Error::Validation(format!(
                    "image {}: duplicate ground-truth features for class {}",
                    self.id, line.class
                )));
            }
        }
        Ok(ImageRecord {
            id: self.id,
            superpixels,
            forest,
            region_features: self.features,
            image_labels: self.labels.into_iter().collect::<BTreeSet<_>>(),
            gt_region_features,
        })
    }
}

pub fn write_dataset(d: &Dataset, out: impl Write) -> std::io::Result<()> {
    let mut out = BufWriter::new(out);
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        class_count: d.class_count,
        feature_dim: d.feature_dim,
        supervision: d.supervision,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for image in &d.images {
        serde_json::to_writer(&mut out, &ImageLine::from_image(image))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(d, file).map_err(|e| Error::io(path, e))
}

/// Parses and validates a dataset. `path` is only used in error messages.
pub fn read_dataset(input: impl BufRead, path: &Path) -> Result<Dataset> {
    let parse_error = |line: usize, record: String, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        record,
        message,
    };
    let mut lines = input.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            None => return Err(parse_error(1, "header".into(), "empty file".into())),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)
                    .map_err(|e| parse_error(i + 1, "header".into(), e.to_string()))?;
            }
        }
    };
    if header.format != FORMAT_NAME {
        return Err(parse_error(
            1,
            "header".into(),
            format!("unknown format {:?}", header.format),
        ));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse_error(
            1,
            "header".into(),
            format!("unsupported version {}", header.version),
        ));
    }
    let mut images = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = format!("image {}", images.len());
        let image: ImageLine = serde_json::from_str(&line)
            .map_err(|e| parse_error(i + 1, record.clone(), e.to_string()))?;
        images.push(image.into_image()?);
    }
    let d = Dataset {
        class_count: header.class_count,
        feature_dim: header.feature_dim,
        supervision: header.supervision,
        images,
    };
    d.validate()?;
    Ok(d)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), path)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureLine {
    image: usize,
    #[serde(default)]
    region: Option<usize>,
    #[serde(default)]
    gt_class: Option<ClassId>,
    features: FeatureVector,
}

/// Replaces region features with those from a sidecar file. Every region of
/// every image must be covered. Ground-truth region features are replaced by
/// the sidecar's `gt_class` lines; classes without such a line lose their
/// ground-truth positives.
pub fn import_features(d: &mut Dataset, path: &Path) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut region_features: Vec<Vec<Option<FeatureVector>>> = d
        .images
        .iter()
        .map(|image| vec![None; image.region_count()])
        .collect();
    let mut gt_features: Vec<BTreeMap<ClassId, FeatureVector>> =
        vec![BTreeMap::new(); d.images.len()];
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            record: "feature".into(),
            message,
        };
        let entry: FeatureLine = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        if *dim.get_or_insert(entry.features.len()) != entry.features.len() {
            return Err(fail("inconsistent feature dimension".into()));
        }
        let Some(slots) = region_features.get_mut(entry.image) else {
            return Err(fail(format!("unknown image {}", entry.image)));
        };
        match (entry.region, entry.gt_class) {
            (Some(r), None) => {
                let Some(slot) = slots.get_mut(r) else {
                    return Err(fail(format!("unknown region {r} of image {}", entry.image)));
                };
                *slot = Some(entry.features);
            }
            (None, Some(c)) => {
                gt_features[entry.image].insert(c, entry.features);
            }
            _ => return Err(fail("exactly one of region or gt_class is required".into())),
        }
    }
    for (image, (slots, gt)) in d
        .images
        .iter_mut()
        .zip(region_features.into_iter().zip(gt_features))
    {
        image.region_features = slots
            .into_iter()
            .enumerate()
            .map(|(r, f)| {
                f.ok_or_else(|| {
                    Error::Validation(format!("image {}: no features for region {r}", image.id))
                })
            })
            .collect::<Result<_>>()?;
        image.gt_region_features = gt;
    }
    if let Some(dim) = dim {
        d.feature_dim = dim;
    }
    d.validate()
}
