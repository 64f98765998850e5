//! Synthetic articulated-figure corpus.
//!
//! Each image shows one stick figure on a plain background: a torso
//! capsule, four two-segment limbs, a neck and a head disc. Joint angles,
//! scale, placement and colors are drawn per image from a seeded stream,
//! so image `i` of a given seed is reproducible in isolation. Body parts
//! wear distinct colors so local appearance identifies them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Pose};

pub const JOINT_COUNT: usize = 14;

/// Joint order used throughout the corpus.
pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "right_ankle",
    "right_knee",
    "right_hip",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_wrist",
    "right_elbow",
    "right_shoulder",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "neck",
    "head_top",
];

/// Limbs as joint-index pairs, used for rendering and for PCP.
pub const LIMBS: [(usize, usize); 13] = [
    (0, 1),   // right lower leg
    (1, 2),   // right upper leg
    (3, 4),   // left upper leg
    (4, 5),   // left lower leg
    (6, 7),   // right forearm
    (7, 8),   // right upper arm
    (9, 10),  // left upper arm
    (10, 11), // left forearm
    (2, 3),   // pelvis
    (8, 12),  // right clavicle
    (9, 12),  // left clavicle
    (2, 12),  // torso
    (12, 13), // head
];

/// Torso-diameter endpoints: left shoulder and right hip.
pub const TORSO_PAIR: (usize, usize) = (9, 2);

/// Joint groups for per-group metric curves.
pub const JOINT_GROUPS: [(&str, &[usize]); 4] = [
    ("legs", &[0, 1, 2, 3, 4, 5]),
    ("arms", &[6, 7, 8, 9, 10, 11]),
    ("torso", &[2, 3, 8, 9, 12]),
    ("head", &[12, 13]),
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid figure config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureConfig {
    pub width: usize,
    pub height: usize,
    /// Torso length range in pixels; every other bone scales with it.
    pub min_torso: f64,
    pub max_torso: f64,
    /// Half-range of the whole-figure tilt, radians.
    pub lean: f64,
    pub seed: u64,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig {
            width: 64,
            height: 64,
            min_torso: 14.0,
            max_torso: 20.0,
            lean: 0.25,
            seed: 0,
        }
    }
}

impl FigureConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < 16 || self.height < 16 {
            return Err(SynthError::InvalidConfig(
                "image must be at least 16x16".into(),
            ));
        }
        if !(self.min_torso > 0.0 && self.max_torso >= self.min_torso) {
            return Err(SynthError::InvalidConfig(
                "torso range must satisfy 0 < min <= max".into(),
            ));
        }
        // the figure spans roughly 2.2 torso lengths; keep it inside
        if self.max_torso * 2.6 >= self.width.min(self.height) as f64 {
            return Err(SynthError::InvalidConfig(
                "max_torso too large for the image".into(),
            ));
        }
        if !(0.0..=0.6).contains(&self.lean) {
            return Err(SynthError::InvalidConfig(
                "lean must be in [0, 0.6]".into(),
            ));
        }
        Ok(())
    }
}

/// One generated sample: the rendered image and its joint locations.
#[derive(Debug, Clone)]
pub struct Figure {
    pub image: crate::imageio::Image,
    pub pose: Pose,
}

fn extend(from: Point, angle: f64, len: f64) -> Point {
    Point::new(from.x + angle.sin() * len, from.y + angle.cos() * len)
}

/// Squared distance from `p` to segment `ab`.
fn segment_dist_sq(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.x + t * dx, a.y + t * dy);
    (p.x - cx).powi(2) + (p.y - cy).powi(2)
}

struct Capsule {
    a: Point,
    b: Point,
    radius: f64,
    color: [f32; 3],
}

/// Generate figure `index` of the configured stream. The per-image RNG is
/// the config seed with the image index as the stream, so any image can
/// be regenerated without generating its predecessors.
pub fn generate_figure(cfg: &FigureConfig, index: u64) -> Figure {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);

    let torso = rng.gen_range(cfg.min_torso..=cfg.max_torso);
    // margin keeps every joint and capsule inside the image
    let margin = torso * 1.3;
    let pelvis = Point::new(
        rng.gen_range(margin..cfg.width as f64 - margin),
        rng.gen_range((cfg.height as f64 / 2.0).min(cfg.height as f64 - margin)
            ..cfg.height as f64 - margin),
    );
    let lean = rng.gen_range(-cfg.lean..=cfg.lean);
    let up = std::f64::consts::PI; // angle convention: 0 = +y (down)

    let hip_half = torso * 0.22;
    let shoulder_half = torso * 0.28;
    let upper_leg = torso * 0.52;
    let lower_leg = torso * 0.48;
    let upper_arm = torso * 0.42;
    let forearm = torso * 0.40;
    let neck_len = torso * 0.18;
    let head_len = torso * 0.30;

    let neck = extend(pelvis, up + lean, torso);
    let r_hip = Point::new(pelvis.x - hip_half, pelvis.y);
    let l_hip = Point::new(pelvis.x + hip_half, pelvis.y);
    let r_shoulder = Point::new(neck.x - shoulder_half, neck.y);
    let l_shoulder = Point::new(neck.x + shoulder_half, neck.y);

    // legs hang downward with moderate swing; knees bend backward a bit
    let leg = |hip: Point, rng: &mut ChaCha20Rng| {
        let swing = rng.gen_range(-0.45..0.45);
        let knee = extend(hip, swing, upper_leg);
        let bend = swing + rng.gen_range(-0.35..0.35);
        let ankle = extend(knee, bend, lower_leg);
        (knee, ankle)
    };
    let (r_knee, r_ankle) = leg(r_hip, &mut rng);
    let (l_knee, l_ankle) = leg(l_hip, &mut rng);

    // arms swing more freely around hanging
    let arm = |shoulder: Point, side: f64, rng: &mut ChaCha20Rng| {
        let swing = side * rng.gen_range(0.1..1.2);
        let elbow = extend(shoulder, swing, upper_arm);
        let bend = swing + rng.gen_range(-0.8..0.8);
        let wrist = extend(elbow, bend, forearm);
        (elbow, wrist)
    };
    let (r_elbow, r_wrist) = arm(r_shoulder, -1.0, &mut rng);
    let (l_elbow, l_wrist) = arm(l_shoulder, 1.0, &mut rng);

    let head_base = extend(neck, up + lean, neck_len);
    let head_top = extend(head_base, up + lean, head_len);

    let joints = vec![
        r_ankle, r_knee, r_hip, l_hip, l_knee, l_ankle, r_wrist, r_elbow, r_shoulder, l_shoulder,
        l_elbow, l_wrist, neck, head_top,
    ];
    let pose = Pose::new(joints.clone()).expect("finite synthetic joints");

    // colors: one hue per part family. Left and right limbs share a color
    // on purpose: a local patch cannot tell the sides apart, only the
    // holistic view can, which is what the dual-source input exists for.
    let jitter = |rng: &mut ChaCha20Rng, base: [f32; 3]| {
        let mut c = base;
        for v in &mut c {
            *v = (*v + rng.gen_range(-0.06f32..0.06)).clamp(0.0, 1.0);
        }
        c
    };
    let torso_color = jitter(&mut rng, [0.85, 0.15, 0.15]);
    let leg_color = jitter(&mut rng, [0.15, 0.35, 0.90]);
    let arm_color = jitter(&mut rng, [0.20, 0.80, 0.25]);
    let (r_leg_color, l_leg_color) = (leg_color, leg_color);
    let (r_arm_color, l_arm_color) = (arm_color, arm_color);
    let head_color = jitter(&mut rng, [0.95, 0.80, 0.25]);
    let background = jitter(&mut rng, [0.45, 0.42, 0.48]);

    let limb_r = (torso * 0.085).max(1.0);
    let torso_r = torso * 0.2;
    // render order: torso beneath limbs beneath head
    let capsules = [
        Capsule { a: pelvis, b: neck, radius: torso_r, color: torso_color },
        Capsule { a: r_hip, b: r_knee, radius: limb_r, color: r_leg_color },
        Capsule { a: r_knee, b: r_ankle, radius: limb_r, color: r_leg_color },
        Capsule { a: l_hip, b: l_knee, radius: limb_r, color: l_leg_color },
        Capsule { a: l_knee, b: l_ankle, radius: limb_r, color: l_leg_color },
        Capsule { a: r_shoulder, b: r_elbow, radius: limb_r, color: r_arm_color },
        Capsule { a: r_elbow, b: r_wrist, radius: limb_r, color: r_arm_color },
        Capsule { a: l_shoulder, b: l_elbow, radius: limb_r, color: l_arm_color },
        Capsule { a: l_elbow, b: l_wrist, radius: limb_r, color: l_arm_color },
        Capsule {
            a: head_base,
            b: head_top,
            radius: head_len * 0.7,
            color: head_color,
        },
    ];

    let mut image = crate::imageio::Image::new_filled(cfg.width, cfg.height, background);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            for capsule in &capsules {
                if segment_dist_sq(p, capsule.a, capsule.b) <= capsule.radius * capsule.radius {
                    image.set_rgb(x, y, capsule.color);
                }
            }
        }
    }
    // mild pixel noise so patches are not piecewise constant
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            for c in 0..3 {
                let v = image.get(x, y, c) as f32 + rng.gen_range(-0.02f32..0.02);
                image.set(x, y, c, v.clamp(0.0, 1.0));
            }
        }
    }

    Figure { image, pose }
}
