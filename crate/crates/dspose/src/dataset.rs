//! On-disk dataset layout: a JSON manifest describing the skeleton plus
//! one PNG and one ground-truth pose per sample.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Pose};
use crate::imageio::{load_image, Image};
use crate::sampling::{torso_diameter, TorsoDiameter};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: String, reason: String },
    #[error("missing image for sample {name}: {path}")]
    MissingImage { name: String, path: String },
    #[error(transparent)]
    Image(#[from] crate::imageio::ImageError),
}

/// One dataset entry: image file (relative to the manifest) and its
/// ground-truth joint locations in joint-table order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub name: String,
    pub image: String,
    pub joints: Vec<[f64; 2]>,
}

/// Dataset description: the skeleton definition shared by all samples and
/// the sample list. The torso pair defines the joint-pair distance used
/// to scale sampling windows and error thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub joint_names: Vec<String>,
    pub limbs: Vec<(usize, usize)>,
    pub torso_pair: (usize, usize),
    pub joint_groups: Vec<(String, Vec<usize>)>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    /// Skeleton tables for the synthetic corpus.
    pub fn synthetic_skeleton(samples: Vec<SampleRecord>) -> Self {
        DatasetManifest {
            joint_names: crate::synth::JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            limbs: crate::synth::LIMBS.to_vec(),
            torso_pair: crate::synth::TORSO_PAIR,
            joint_groups: crate::synth::JOINT_GROUPS
                .iter()
                .map(|(name, joints)| (name.to_string(), joints.to_vec()))
                .collect(),
            samples,
        }
    }

    fn check(&self, path: &Path) -> Result<(), DatasetError> {
        let malformed = |reason: String| DatasetError::MalformedManifest {
            path: path.display().to_string(),
            reason,
        };
        let joints = self.joint_count();
        if joints == 0 {
            return Err(malformed("empty joint table".into()));
        }
        for &(a, b) in &self.limbs {
            if a >= joints || b >= joints {
                return Err(malformed(format!("limb ({a}, {b}) out of range")));
            }
        }
        let (a, b) = self.torso_pair;
        if a >= joints || b >= joints || a == b {
            return Err(malformed(format!("bad torso pair ({a}, {b})")));
        }
        for (name, group) in &self.joint_groups {
            if group.iter().any(|&j| j >= joints) {
                return Err(malformed(format!("joint group {name} out of range")));
            }
        }
        for sample in &self.samples {
            if sample.joints.len() != joints {
                return Err(malformed(format!(
                    "sample {} has {} joints, expected {joints}",
                    sample.name,
                    sample.joints.len()
                )));
            }
            if sample
                .joints
                .iter()
                .any(|[x, y]| !x.is_finite() || !y.is_finite())
            {
                return Err(malformed(format!(
                    "sample {} has a non-finite joint",
                    sample.name
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        self.check(path)?;
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| DatasetError::MalformedManifest {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
        manifest.check(path)?;
        Ok(manifest)
    }

    pub fn pose(&self, sample: &SampleRecord) -> Pose {
        Pose::new(
            sample
                .joints
                .iter()
                .map(|[x, y]| Point::new(*x, *y))
                .collect(),
        )
        .expect("manifest poses are validated finite")
    }

    pub fn diameter(&self, sample: &SampleRecord) -> TorsoDiameter {
        torso_diameter(&self.pose(sample), self.torso_pair)
    }

    /// Resolve and load a sample's image relative to the manifest's
    /// directory.
    pub fn load_sample_image(
        &self,
        manifest_path: &Path,
        sample: &SampleRecord,
    ) -> Result<Image, DatasetError> {
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let image_path: PathBuf = dir.join(&sample.image);
        if !image_path.exists() {
            return Err(DatasetError::MissingImage {
                name: sample.name.clone(),
                path: image_path.display().to_string(),
            });
        }
        Ok(load_image(&image_path)?)
    }
}

/// Generate `count` synthetic figures under `dir` (PNG files plus a
/// `manifest.json`) and return the manifest path.
pub fn write_synthetic_dataset(
    cfg: &crate::synth::FigureConfig,
    count: usize,
    dir: &Path,
) -> Result<PathBuf, DatasetError> {
    use rayon::prelude::*;
    std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let figures: Vec<crate::synth::Figure> = (0..count as u64)
        .into_par_iter()
        .map(|index| crate::synth::generate_figure(cfg, index))
        .collect();
    let mut samples = Vec::with_capacity(count);
    for (index, figure) in figures.iter().enumerate() {
        let name = format!("fig_{index:05}");
        let file = format!("{name}.png");
        crate::imageio::save_png(&figure.image, &dir.join(&file))?;
        samples.push(SampleRecord {
            name,
            image: file,
            joints: figure
                .pose
                .joints()
                .iter()
                .map(|j| [j.x, j.y])
                .collect(),
        });
    }
    let manifest = DatasetManifest::synthetic_skeleton(samples);
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
