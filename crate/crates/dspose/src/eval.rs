//! Pose and detection metrics.
//!
//! - PCP: a limb is correct when both endpoint errors are within half the
//!   true limb length (inclusive).
//! - PDJ: a joint is detected when its error is strictly below a fraction
//!   of the torso diameter; reported as a curve over fractions.
//! - Detection AP: patch classifications ranked by likelihood, scored
//!   against ground-truth labels with an all-points interpolated
//!   precision/recall area.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Pose};
use crate::sampling::TorsoDiameter;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("pose has {got} joints, expected {expected}")]
    JointCountMismatch { expected: usize, got: usize },
    #[error("limb index {0} references joint {1} beyond the pose")]
    LimbOutOfRange(usize, usize),
    #[error("no ground-truth positives for joint {0}")]
    NoPositives(usize),
}

/// A limb as a pair of joint indices (proximal, distal).
pub type Limb = (usize, usize);

fn dist(a: Point, b: Point) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// PCP tally over a set of limbs. Limbs whose true endpoints coincide
/// have no length to compare against and are skipped; `skipped` counts
/// them so callers can notice degenerate ground truth.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PcpResult {
    pub correct: usize,
    pub evaluated: usize,
    pub skipped: usize,
}

impl PcpResult {
    pub fn rate(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.correct as f64 / self.evaluated as f64
        }
    }

    pub fn merge(&mut self, other: &PcpResult) {
        self.correct += other.correct;
        self.evaluated += other.evaluated;
        self.skipped += other.skipped;
    }
}

/// Score one estimated pose against ground truth. A limb counts as
/// correct when both endpoint errors are at most half the true limb
/// length (boundary inclusive).
pub fn pcp(estimate: &Pose, truth: &Pose, limbs: &[Limb]) -> Result<PcpResult, EvalError> {
    if estimate.len() != truth.len() {
        return Err(EvalError::JointCountMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let mut result = PcpResult::default();
    for (idx, &(a, b)) in limbs.iter().enumerate() {
        let bound = a.max(b);
        if bound >= truth.len() {
            return Err(EvalError::LimbOutOfRange(idx, bound));
        }
        let length = dist(truth.joints()[a], truth.joints()[b]);
        if length == 0.0 {
            result.skipped += 1;
            continue;
        }
        let ea = dist(estimate.joints()[a], truth.joints()[a]);
        let eb = dist(estimate.joints()[b], truth.joints()[b]);
        result.evaluated += 1;
        if ea <= 0.5 * length && eb <= 0.5 * length {
            result.correct += 1;
        }
    }
    Ok(result)
}

/// One evaluated image: estimate, truth and the torso diameter used to
/// normalize joint errors.
#[derive(Debug, Clone)]
pub struct ScoredPose {
    pub estimate: Pose,
    pub truth: Pose,
    pub diameter: TorsoDiameter,
}

/// Fraction of joints whose error is strictly below `fraction * d`,
/// pooled over all images and joints.
pub fn pdj(scored: &[ScoredPose], fraction: f64) -> Result<f64, EvalError> {
    let (mut detected, mut total) = (0usize, 0usize);
    for s in scored {
        if s.estimate.len() != s.truth.len() {
            return Err(EvalError::JointCountMismatch {
                expected: s.truth.len(),
                got: s.estimate.len(),
            });
        }
        for (e, t) in s.estimate.joints().iter().zip(s.truth.joints()) {
            total += 1;
            if dist(*e, *t) < fraction * s.diameter.0 {
                detected += 1;
            }
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        detected as f64 / total as f64
    })
}

/// PDJ sampled at each fraction. Monotone non-decreasing in the fraction
/// by construction.
pub fn pdj_curve(scored: &[ScoredPose], fractions: &[f64]) -> Result<Vec<f64>, EvalError> {
    fractions.iter().map(|f| pdj(scored, *f)).collect()
}

/// PDJ curve restricted to a subset of joint indices (e.g. arms, legs).
pub fn pdj_curve_for_joints(
    scored: &[ScoredPose],
    joints: &[usize],
    fractions: &[f64],
) -> Result<Vec<f64>, EvalError> {
    let restricted: Vec<ScoredPose> = scored
        .iter()
        .map(|s| {
            if s.estimate.len() != s.truth.len() {
                return Err(EvalError::JointCountMismatch {
                    expected: s.truth.len(),
                    got: s.estimate.len(),
                });
            }
            let pick = |p: &Pose| {
                Pose::new(joints.iter().map(|&i| p.joints()[i]).collect())
                    .expect("subset of a valid pose")
            };
            Ok(ScoredPose {
                estimate: pick(&s.estimate),
                truth: pick(&s.truth),
                diameter: s.diameter,
            })
        })
        .collect::<Result<_, _>>()?;
    pdj_curve(&restricted, fractions)
}

/// Mean joint localization error in torso-diameter units, pooled over all
/// images and joints.
pub fn mean_normalized_error(scored: &[ScoredPose]) -> Result<f64, EvalError> {
    let (mut sum, mut total) = (0.0, 0usize);
    for s in scored {
        if s.estimate.len() != s.truth.len() {
            return Err(EvalError::JointCountMismatch {
                expected: s.truth.len(),
                got: s.estimate.len(),
            });
        }
        for (e, t) in s.estimate.joints().iter().zip(s.truth.joints()) {
            sum += dist(*e, *t) / s.diameter.0;
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { sum / total as f64 })
}

/// One scored patch for detection AP: the likelihood assigned to the
/// joint under evaluation and whether the patch's true class is that
/// joint.
#[derive(Debug, Clone, Copy)]
pub struct Detection {
    pub score: f64,
    pub is_positive: bool,
}

/// Average precision over a ranked detection list: all-points
/// interpolation (the area under the precision envelope, summed at each
/// positive). Ties in score are broken by input order, which matches the
/// stable sort used here.
pub fn average_precision(detections: &[Detection]) -> Result<f64, EvalError> {
    let positives = detections.iter().filter(|d| d.is_positive).count();
    if positives == 0 {
        return Err(EvalError::NoPositives(0));
    }
    let mut ranked: Vec<&Detection> = detections.iter().collect();
    ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    // precision at each rank, then the interpolated envelope from the right
    let mut precisions = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (rank, d) in ranked.iter().enumerate() {
        if d.is_positive {
            tp += 1;
        }
        precisions.push((tp as f64 / (rank + 1) as f64, d.is_positive));
    }
    let mut envelope = 0.0f64;
    let mut ap = 0.0;
    for (precision, is_positive) in precisions.into_iter().rev() {
        envelope = envelope.max(precision);
        if is_positive {
            ap += envelope;
        }
    }
    Ok(ap / positives as f64)
}

/// Per-joint AP over patch outputs: for joint `i` (zero-based), each
/// patch contributes its likelihood `l_{i+1}` as the score and its true
/// class as the positive flag. `outputs` holds `(likelihoods, true
/// class)` with likelihoods of length L + 1. Joints without any positive
/// patch are excluded from the mean; the per-joint vector records them as
/// `None`.
pub fn detection_ap(outputs: &[(Vec<f64>, usize)], joints: usize) -> (Vec<Option<f64>>, f64) {
    let mut per_joint = Vec::with_capacity(joints);
    for i in 0..joints {
        let detections: Vec<Detection> = outputs
            .iter()
            .map(|(likelihoods, class)| Detection {
                score: likelihoods[i + 1],
                is_positive: *class == i + 1,
            })
            .collect();
        per_joint.push(average_precision(&detections).ok());
    }
    let present: Vec<f64> = per_joint.iter().filter_map(|ap| *ap).collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per_joint, mean)
}
