//! Heatmap accumulation, patch selection and pose fusion.
//!
//! Each patch pair votes its winning joint's detection likelihood,
//! spread uniformly over the pixels of its part patch; the per-joint sums
//! form heatmaps. For each joint, high-confidence patches are selected by
//! likelihood and heatmap conditions and their localization outputs are
//! averaged, weighted by likelihood, into the final joint location.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{denormalize_joint, NormalizedJoint, Patch, Point, Pose};
use crate::imageio::{resample_patch, Image};
use crate::net::{build_inputs, NetOutput, NetworkParams};
use crate::sampling::{sliding_windows, SamplingConfig, TorsoDiameter};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid inference config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// A patch is considered for joint i only when l_i ranks among the k
    /// largest joint likelihoods.
    pub k: usize,
    /// Heatmap ratio threshold: the part-patch peak must exceed
    /// `lambda_h` times the body-patch peak.
    pub lambda_h: f64,
    /// When true, the heat-allocation winner is taken over classes 0..L
    /// (and patches whose winner is the background class allocate
    /// nothing); when false, over joints 1..L only.
    pub argmax_includes_background: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            k: 3,
            lambda_h: 0.9,
            argmax_includes_background: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self, joints: usize) -> Result<(), InferenceError> {
        if self.k < 1 || self.k > joints {
            return Err(InferenceError::InvalidConfig(format!(
                "k must be in [1, {joints}], got {}",
                self.k
            )));
        }
        if !(self.lambda_h > 0.0 && self.lambda_h <= 1.0) {
            return Err(InferenceError::InvalidConfig(format!(
                "lambda_h must be in (0, 1], got {}",
                self.lambda_h
            )));
        }
        Ok(())
    }
}

/// Per-joint likelihood fields at image resolution.
#[derive(Debug, Clone)]
pub struct Heatmaps {
    maps: Vec<Array2<f64>>,
    width: usize,
    height: usize,
}

impl Heatmaps {
    pub fn zeros(joints: usize, width: usize, height: usize) -> Self {
        Heatmaps {
            maps: vec![Array2::zeros((height, width)); joints],
            width,
            height,
        }
    }

    pub fn joint(&self, i: usize) -> &Array2<f64> {
        &self.maps[i]
    }

    pub fn joint_count(&self) -> usize {
        self.maps.len()
    }

    pub fn total_mass(&self, i: usize) -> f64 {
        self.maps[i].sum()
    }

    /// Maximum heatmap value for joint `i` over the raster of `patch`.
    pub fn max_in_patch(&self, i: usize, patch: &Patch) -> f64 {
        let Some((xs, ys)) = raster_pixels(patch, self.width, self.height) else {
            return 0.0;
        };
        let mut max = f64::NEG_INFINITY;
        for y in ys {
            for x in xs.clone() {
                max = max.max(self.maps[i][[y, x]]);
            }
        }
        max
    }

    /// Pixel-center location of the global maximum of joint `i`'s map.
    pub fn argmax_pixel(&self, i: usize) -> Point {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for ((y, x), v) in self.maps[i].indexed_iter() {
            if *v > best_v {
                best_v = *v;
                best = (y, x);
            }
        }
        Point::new(best.1 as f64 + 0.5, best.0 as f64 + 0.5)
    }
}

/// Integer rasterization of a patch: the ranges of pixel indices whose
/// centers lie inside the (closed) patch box, clamped to the image.
/// Returns `None` when no pixel center is covered.
pub fn raster_pixels(
    patch: &Patch,
    width: usize,
    height: usize,
) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    let x0 = (patch.left() - 0.5).ceil().max(0.0) as usize;
    let y0 = (patch.top() - 0.5).ceil().max(0.0) as usize;
    if patch.right() < 0.5 || patch.bottom() < 0.5 {
        return None;
    }
    let x1 = ((patch.right() - 0.5).floor() as i64 + 1).min(width as i64);
    let y1 = ((patch.bottom() - 0.5).floor() as i64 + 1).min(height as i64);
    if x1 <= x0 as i64 || y1 <= y0 as i64 {
        return None;
    }
    Some((x0..x1 as usize, y0..y1 as usize))
}

/// The joint receiving this patch's heat: the argmax of the joint
/// likelihoods (ties to the lowest index). With
/// `argmax_includes_background`, a background-dominated patch returns
/// `None` instead.
pub fn heat_winner(output: &NetOutput, include_background: bool) -> Option<usize> {
    let joints = output.joint_count();
    let mut best = 0usize;
    for i in 1..joints {
        if output.joint_likelihood(i) > output.joint_likelihood(best) {
            best = i;
        }
    }
    if include_background && output.background_likelihood() > output.joint_likelihood(best) {
        return None;
    }
    Some(best)
}

/// Uniform allocation of one patch pair's winning likelihood over its
/// part-patch raster. The divisor is the rasterized pixel count rather
/// than the real-valued patch area, so the allocated mass sums exactly to
/// the likelihood. Returns (joint, pixel ranges, per-pixel value).
pub fn allocate_heat(
    part: &Patch,
    output: &NetOutput,
    width: usize,
    height: usize,
    include_background: bool,
) -> Option<(usize, (std::ops::Range<usize>, std::ops::Range<usize>), f64)> {
    let winner = heat_winner(output, include_background)?;
    let (xs, ys) = raster_pixels(part, width, height)?;
    let count = (xs.len() * ys.len()) as f64;
    Some((winner, (xs, ys), output.joint_likelihood(winner) / count))
}

/// Pixelwise sum of every patch pair's allocation. Order-independent up
/// to floating-point associativity; the summation order is fixed by the
/// slice order for reproducibility.
pub fn build_heatmaps(
    pairs: &[(Patch, NetOutput)],
    image_size: (usize, usize),
    joints: usize,
    include_background: bool,
) -> Heatmaps {
    let (width, height) = image_size;
    let mut maps = Heatmaps::zeros(joints, width, height);
    for (part, output) in pairs {
        if let Some((joint, (xs, ys), value)) =
            allocate_heat(part, output, width, height, include_background)
        {
            for y in ys {
                for x in xs.clone() {
                    maps.maps[joint][[y, x]] += value;
                }
            }
        }
    }
    maps
}

/// True when `l_i` ranks among the `k` largest joint likelihoods; ties
/// count against the candidate, so k = 1 requires a strict argmax.
fn in_top_k(output: &NetOutput, i: usize, k: usize) -> bool {
    let li = output.joint_likelihood(i);
    let better = (0..output.joint_count())
        .filter(|j| *j != i && output.joint_likelihood(*j) >= li)
        .count();
    better < k
}

/// Select the patch pairs used to localize joint `i`: the background
/// likelihood must be below `l_i`, `l_i` must rank in the top k, and the
/// part-patch heatmap peak must exceed `lambda_h` times the body-patch
/// peak. Returns indices into `pairs`.
pub fn select_patches_for_joint(
    i: usize,
    pairs: &[(Patch, NetOutput)],
    heatmaps: &Heatmaps,
    body: &Patch,
    cfg: &InferenceConfig,
) -> Vec<usize> {
    let body_peak = heatmaps.max_in_patch(i, body);
    pairs
        .iter()
        .enumerate()
        .filter(|(_, (part, output))| {
            output.background_likelihood() < output.joint_likelihood(i)
                && in_top_k(output, i, cfg.k)
                && heatmaps.max_in_patch(i, part) > cfg.lambda_h * body_peak
        })
        .map(|(idx, _)| idx)
        .collect()
}

/// Likelihood-weighted average of the selected patches' localization
/// outputs, mapped to image coordinates through each part patch. Falls
/// back to the heatmap argmax pixel when the selection is empty.
pub fn fuse_joint_location(
    i: usize,
    selected: &[usize],
    pairs: &[(Patch, NetOutput)],
    heatmaps: &Heatmaps,
) -> Point {
    if selected.is_empty() {
        return heatmaps.argmax_pixel(i);
    }
    let mut num = Point::new(0.0, 0.0);
    let mut den = 0.0;
    for &idx in selected {
        let (part, output) = &pairs[idx];
        let z = output.locations[i];
        let img = denormalize_joint(NormalizedJoint::new(z[0], z[1]), part);
        let weight = output.joint_likelihood(i);
        num.x += img.x * weight;
        num.y += img.y * weight;
        den += weight;
    }
    Point::new(num.x / den, num.y / den)
}

/// A fused pose plus, per joint, how many patch pairs were selected
/// (0 means the heatmap-argmax fallback was used).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub selected_counts: Vec<usize>,
}

/// Fuse precomputed per-patch outputs into a pose. This is the
/// deterministic tail of [`estimate_pose`], split out so tests can inject
/// oracle outputs.
pub fn estimate_from_outputs(
    pairs: &[(Patch, NetOutput)],
    image_size: (usize, usize),
    joints: usize,
    body: &Patch,
    cfg: &InferenceConfig,
) -> Result<PoseEstimate, InferenceError> {
    cfg.validate(joints)?;
    let heatmaps = build_heatmaps(pairs, image_size, joints, cfg.argmax_includes_background);
    let mut points = Vec::with_capacity(joints);
    let mut counts = Vec::with_capacity(joints);
    for i in 0..joints {
        let selected = select_patches_for_joint(i, pairs, &heatmaps, body, cfg);
        points.push(fuse_joint_location(i, &selected, pairs, &heatmaps));
        counts.push(selected.len());
    }
    Ok(PoseEstimate {
        pose: Pose::new(points).expect("fused coordinates are finite"),
        selected_counts: counts,
    })
}

/// Run the network over multi-scale sliding-window patch pairs (the body
/// patch is the whole image) and return every per-patch output.
pub fn run_windows(
    image: &Image,
    params: &NetworkParams,
    d: TorsoDiameter,
    sampling: &SamplingConfig,
) -> Result<Vec<(Patch, NetOutput)>, InferenceError> {
    use rayon::prelude::*;
    let (w, h) = (image.width(), image.height());
    let body = whole_image_patch(w, h);
    let body_square = crate::geometry::extend_to_square(&body);
    let n = params.spec.input_size;
    let body_block = resample_patch(image, &body_square, n);
    let windows = sliding_windows((w, h), d, sampling);
    let outputs: Result<Vec<(Patch, NetOutput)>, crate::net::NetError> = windows
        .into_par_iter()
        .map(|window| {
            let part_block = resample_patch(image, &window, n);
            let input = build_inputs(part_block, &body_block, &window, &body_square);
            let (output, _) = params.forward(&input)?;
            Ok((window, output))
        })
        .collect();
    Ok(outputs?)
}

/// Whole-image body patch used at test time.
pub fn whole_image_patch(width: usize, height: usize) -> Patch {
    Patch::new(
        width as f64,
        height as f64,
        width as f64 / 2.0,
        height as f64 / 2.0,
    )
    .expect("positive image dimensions")
}

/// Full single-image inference: sliding windows, per-pair network
/// forward, heatmaps, selection and fusion.
pub fn estimate_pose(
    image: &Image,
    params: &NetworkParams,
    d: TorsoDiameter,
    sampling: &SamplingConfig,
    cfg: &InferenceConfig,
) -> Result<PoseEstimate, InferenceError> {
    let pairs = run_windows(image, params, d, sampling)?;
    let body = whole_image_patch(image.width(), image.height());
    estimate_from_outputs(
        &pairs,
        (image.width(), image.height()),
        params.spec.joints,
        &body,
        cfg,
    )
}
