//! Patch candidates for training and testing.
//!
//! Training part/body patches come from a proposal pool filtered by an
//! area band (part patches) and a full-coverage condition (body patches).
//! Testing part patches come from multi-scale sliding windows. All sizes
//! are expressed relative to the torso diameter d(J).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_joint, visibility, Patch, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
}

/// Patch-sampling parameters. `mu1`/`mu2` bound part-patch areas as
/// multiples of d(J)^2; `window_scales` are sliding-window sides as
/// multiples of d(J).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub window_scales: Vec<f64>,
    pub stride: f64,
    pub proposal_count: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            mu1: 0.1,
            mu2: 1.0,
            window_scales: vec![0.5, 1.0],
            stride: 2.0,
            proposal_count: 40,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(self.mu1 > 0.0 && self.mu1 < self.mu2) {
            return Err(SamplingError::InvalidConfig(format!(
                "need 0 < mu1 < mu2, got mu1={} mu2={}",
                self.mu1, self.mu2
            )));
        }
        if !(self.stride >= 1.0) {
            return Err(SamplingError::InvalidConfig(format!(
                "stride must be >= 1, got {}",
                self.stride
            )));
        }
        if self.window_scales.is_empty() || self.window_scales.iter().any(|s| *s <= 0.0) {
            return Err(SamplingError::InvalidConfig(
                "window_scales must be non-empty and positive".into(),
            ));
        }
        Ok(())
    }
}

/// Torso diameter d(J): the distance between two opposing torso joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorsoDiameter(pub f64);

/// Euclidean distance between the two torso joints named by the dataset
/// manifest. A zero diameter (coincident joints) is returned as-is and
/// must be rejected by downstream preconditions.
pub fn torso_diameter(pose: &Pose, torso_joint_pair: (usize, usize)) -> TorsoDiameter {
    let a = pose.joint(torso_joint_pair.0);
    let b = pose.joint(torso_joint_pair.1);
    TorsoDiameter(a.distance(&b))
}

/// Keep candidates whose area lies in [mu1 d^2, mu2 d^2].
pub fn filter_part_patches(
    candidates: &[Patch],
    d: TorsoDiameter,
    cfg: &SamplingConfig,
) -> Vec<Patch> {
    let lo = cfg.mu1 * d.0 * d.0;
    let hi = cfg.mu2 * d.0 * d.0;
    candidates
        .iter()
        .filter(|p| p.area() >= lo && p.area() <= hi)
        .cloned()
        .collect()
}

/// Keep candidates in which every joint of `pose` is visible.
pub fn filter_body_patches(candidates: &[Patch], pose: &Pose) -> Vec<Patch> {
    candidates
        .iter()
        .filter(|p| visibility(pose, p).all_visible())
        .cloned()
        .collect()
}

fn axis_centers(extent: f64, side: f64, stride: f64) -> Vec<f64> {
    if side >= extent {
        // window does not fit; emit one centered window, edge replication
        // covers the out-of-image portion
        return vec![extent / 2.0];
    }
    let mut centers = Vec::new();
    let mut c = side / 2.0;
    while c <= extent - side / 2.0 + 1e-9 {
        centers.push(c);
        c += stride;
    }
    centers
}

/// Square sliding windows of side `scale * d(J)` for each configured
/// scale, centers on a stride-spaced grid such that each window lies
/// inside the image (or a single centered window when it cannot).
pub fn sliding_windows(
    image_size: (usize, usize),
    d: TorsoDiameter,
    cfg: &SamplingConfig,
) -> Vec<Patch> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let mut out = Vec::new();
    for scale in &cfg.window_scales {
        let side = scale * d.0;
        for cy in axis_centers(h, side, cfg.stride) {
            for cx in axis_centers(w, side, cfg.stride) {
                out.push(Patch::new(side, side, cx, cy).expect("positive window side"));
            }
        }
    }
    out
}

/// Deterministic pseudo-random patch proposals standing in for an external
/// object-proposal algorithm. Areas are log-uniform in [mu1 d^2, 2 mu2 d^2];
/// 70% of centers fall within 0.5 d of a uniformly chosen joint, the rest
/// are uniform over the image, so the downstream filters see realistic
/// candidates.
pub fn stub_proposals(
    image_size: (usize, usize),
    pose: &Pose,
    d: TorsoDiameter,
    cfg: &SamplingConfig,
) -> Vec<Patch> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let lo = (cfg.mu1 * d.0 * d.0).ln();
    let hi = (2.0 * cfg.mu2 * d.0 * d.0).ln();
    let mut out = Vec::with_capacity(cfg.proposal_count);
    for _ in 0..cfg.proposal_count {
        let area = rng.gen_range(lo..hi).exp();
        let aspect: f64 = rng.gen_range(0.5..2.0);
        let pw = (area * aspect).sqrt();
        let ph = (area / aspect).sqrt();
        let (cx, cy) = if rng.gen_bool(0.7) && !pose.is_empty() {
            let j = pose.joint(rng.gen_range(0..pose.len()));
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let radius = 0.5 * d.0 * rng.gen_range(0.0f64..1.0).sqrt();
            (j.x + radius * angle.cos(), j.y + radius * angle.sin())
        } else {
            (rng.gen_range(0.0..w), rng.gen_range(0.0..h))
        };
        out.push(Patch::new(pw, ph, cx, cy).expect("positive proposal dims"));
    }
    out
}

/// For each joint, the mean number of part patches per image that cover
/// it, where a patch covers a joint when the joint is visible in the patch
/// and is the closest visible joint to the patch center (ties broken by
/// the lowest joint index).
pub fn coverage_histogram(part_patches: &[Vec<Patch>], poses: &[Pose]) -> Vec<f64> {
    assert_eq!(part_patches.len(), poses.len());
    if poses.is_empty() {
        return Vec::new();
    }
    let joints = poses[0].len();
    let mut counts = vec![0.0f64; joints];
    for (patches, pose) in part_patches.iter().zip(poses) {
        for patch in patches {
            if let Some(i) = closest_visible_joint(pose, patch) {
                counts[i] += 1.0;
            }
        }
    }
    counts.iter().map(|c| c / poses.len() as f64).collect()
}

/// Index of the visible joint nearest the patch center in normalized
/// coordinates, or `None` when no joint is visible.
pub fn closest_visible_joint(pose: &Pose, patch: &Patch) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, j) in pose.joints().iter().enumerate() {
        let n = normalize_joint(*j, patch);
        if !n.is_visible() {
            continue;
        }
        let dist = n.norm_sq();
        match best {
            Some((_, d)) if dist >= d => {}
            _ => best = Some((i, dist)),
        }
    }
    best.map(|(i, _)| i)
}
