//! Training labels for patch pairs.
//!
//! A part patch is labeled with the index of the visible joint closest to
//! its center in normalized coordinates, or class 0 when no joint is
//! visible. Class `i > 0` carries the joint's normalized location as the
//! regression target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    crop_to_body, extend_to_square, normalize_joint, NormalizedJoint, Patch, Pose,
};

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("every part/body pairing has an empty intersection")]
    NoValidPairs,
}

/// Classification label and regression target for one patch pair.
/// `class` is in [0, L]; 0 means no joint is visible in the part patch,
/// in which case there is no regression target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchLabel {
    pub class: usize,
    pub target: Option<NormalizedJoint>,
}

impl PatchLabel {
    pub fn background() -> Self {
        PatchLabel {
            class: 0,
            target: None,
        }
    }

    pub fn is_background(&self) -> bool {
        self.class == 0
    }

    /// Zero-based joint index for a foreground label.
    pub fn joint_index(&self) -> Option<usize> {
        (self.class > 0).then(|| self.class - 1)
    }
}

/// Label a (square-extended) part patch: the visible joint whose
/// normalized coordinates have the smallest squared norm, ties broken by
/// the lowest joint index; class 0 when no joint is visible.
pub fn assign_label(part: &Patch, pose: &Pose) -> PatchLabel {
    let mut best: Option<(usize, f64, NormalizedJoint)> = None;
    for (i, joint) in pose.joints().iter().enumerate() {
        let n = normalize_joint(*joint, part);
        if !n.is_visible() {
            continue;
        }
        let dist = n.norm_sq();
        match best {
            Some((_, d, _)) if dist >= d => {}
            _ => best = Some((i, dist, n)),
        }
    }
    match best {
        Some((i, _, n)) => PatchLabel {
            class: i + 1,
            target: Some(n),
        },
        None => PatchLabel::background(),
    }
}

/// One training sample: the final (cropped, square-extended) part patch,
/// the body patch it was paired with, and the label computed on the final
/// part patch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub part: Patch,
    pub body: Patch,
    pub label: PatchLabel,
}

/// Pair each part patch with a seeded-random body patch. Parts not fully
/// inside their body patch are cropped first; pairings with an empty
/// intersection are dropped. The label is computed on the final part
/// patch after cropping and square extension, since those define the
/// pixels the network sees.
pub fn build_training_pairs(
    part_patches: &[Patch],
    body_patches: &[Patch],
    pose: &Pose,
    seed: u64,
) -> Result<Vec<TrainingPair>, LabelError> {
    assert!(!part_patches.is_empty() && !body_patches.is_empty());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(part_patches.len());
    for part in part_patches {
        let body = body_patches[rng.gen_range(0..body_patches.len())];
        let cropped = match crop_to_body(part, &body) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let squared = extend_to_square(&cropped);
        out.push(TrainingPair {
            part: squared,
            body,
            label: assign_label(&squared, pose),
        });
    }
    if out.is_empty() {
        return Err(LabelError::NoValidPairs);
    }
    Ok(out)
}
