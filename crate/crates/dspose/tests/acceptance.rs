//! Acceptance gate: every release criterion in one sequential test.
//!
//! Each criterion prints one pass/fail line; the test panics at the end
//! if any criterion failed. The criteria run in a single-threaded worker
//! pool so the end-to-end timing budget is measured on one core.

use std::time::Instant;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use dspose::config::RunConfig;
use dspose::dataset::{write_synthetic_dataset, DatasetManifest};
use dspose::eval::{
    average_precision, detection_ap, mean_normalized_error, pcp, pdj_curve,
    Detection, EvalError, ScoredPose,
};
use dspose::geometry::{denormalize_joint, normalize_joint, visibility, Patch, Point, Pose};
use dspose::inference::{
    build_heatmaps, estimate_from_outputs, fuse_joint_location, select_patches_for_joint,
    InferenceConfig,
};
use dspose::labeling::PatchLabel;
use dspose::net::{ConvSpec, DualInput, InputSources, LayerSpec, NetOutput, NetworkParams};
use dspose::pipeline;
use dspose::sampling::TorsoDiameter;
use dspose::synth::FigureConfig;
use dspose::training::{
    detection_loss, localization_loss, output_grads, sample_loss, total_loss,
};

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn patch(w: f64, h: f64, cx: f64, cy: f64) -> Patch {
    Patch::new(w, h, cx, cy).unwrap()
}

fn pose(points: &[(f64, f64)]) -> Pose {
    Pose::new(points.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
}

/// Random likelihood vector (softmax of random logits) of length n.
fn random_likelihoods(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn random_output(rng: &mut ChaCha20Rng, joints: usize) -> NetOutput {
    NetOutput {
        likelihoods: random_likelihoods(rng, joints + 1),
        locations: (0..joints)
            .map(|_| [rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)])
            .collect(),
    }
}

/// The joint a patch's heat goes to, computed independently of the
/// library: argmax of likelihoods[1..], ties to the lowest index.
fn naive_winner(output: &NetOutput) -> usize {
    let mut best = 0usize;
    for i in 1..output.joint_count() {
        if output.joint_likelihood(i) > output.joint_likelihood(best) {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------
// criterion 1: analytic gradients vs central finite differences
// ---------------------------------------------------------------------

fn small_spec(variant: usize) -> LayerSpec {
    LayerSpec {
        input_size: 8,
        joints: 3,
        sources: InputSources::Dual,
        conv: vec![ConvSpec {
            filters: 1 + variant % 3,
            kernel: 3,
            pool: true,
        }],
        hidden: vec![4 + variant % 4],
    }
}

fn random_net_input(rng: &mut ChaCha20Rng, n: usize) -> DualInput {
    let part = Array3::from_shape_fn((3, n, n), |_| rng.gen_range(0.0..1.0));
    let body = Array3::from_shape_fn((4, n, n), |(c, _, _)| {
        if c == 3 {
            if rng.gen_bool(0.3) {
                1.0
            } else {
                0.0
            }
        } else {
            rng.gen_range(0.0..1.0)
        }
    });
    DualInput { part, body }
}

fn criterion_gradients() -> Result<(), String> {
    let start = Instant::now();
    let lambda_d = 4.0;
    let mut worst = 0.0f64;
    for net_idx in 0..5u64 {
        let spec = small_spec(net_idx as usize);
        let params = NetworkParams::init(&spec, 100 + net_idx).map_err(|e| e.to_string())?;
        let mut rng = ChaCha20Rng::seed_from_u64(200 + net_idx);
        let input = random_net_input(&mut rng, spec.input_size);
        let label = if net_idx % 2 == 0 {
            PatchLabel {
                class: 1 + (net_idx as usize % spec.joints),
                target: Some(dspose::geometry::NormalizedJoint::new(0.12, -0.27)),
            }
        } else {
            PatchLabel::background()
        };

        let (output, cache) = params.forward(&input).map_err(|e| e.to_string())?;
        let analytic = params
            .backward(&cache, &output_grads(&output, &label, lambda_d))
            .flatten();

        let loss_at = |p: &NetworkParams| -> f64 {
            let (out, _) = p.forward(&input).expect("forward succeeds");
            sample_loss(&out, &label, lambda_d).0
        };
        let h = 1e-5;
        for idx in 0..analytic.len() {
            let mut plus = params.clone();
            plus.blocks.perturb(idx, h);
            let mut minus = params.clone();
            minus.blocks.perturb(idx, -h);
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
            ensure!(
                rel < 1e-4,
                "net {net_idx} param {idx}: analytic {a} vs numeric {numeric} (rel {rel})"
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(
        elapsed < 60.0,
        "gradient check took {elapsed:.1} s (budget 60 s)"
    );
    println!("  max relative error {worst:.2e} in {elapsed:.1} s");
    Ok(())
}

// ---------------------------------------------------------------------
// criterion 2: normalize/denormalize round trip + visibility boundary
// ---------------------------------------------------------------------

fn criterion_round_trip() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for case in 0..100_000 {
        let p = patch(
            rng.gen_range(0.1..100.0),
            rng.gen_range(0.1..100.0),
            rng.gen_range(-1000.0..1000.0),
            rng.gen_range(-1000.0..1000.0),
        );
        let joint = Point::new(rng.gen_range(-1000.0..1000.0), rng.gen_range(-1000.0..1000.0));
        let back = denormalize_joint(normalize_joint(joint, &p), &p);
        ensure!(
            (back.x - joint.x).abs() <= 1e-9 && (back.y - joint.y).abs() <= 1e-9,
            "case {case}: round trip moved {joint:?} to {back:?}"
        );
    }

    // visibility boundary: |normalized| == 0.5 is visible, beyond is not
    let p = patch(8.0, 8.0, 0.0, 0.0);
    let eps = 4.0 * f64::EPSILON * 4.0;
    let boundary = [
        (Point::new(4.0, 0.0), true),
        (Point::new(-4.0, 0.0), true),
        (Point::new(0.0, 4.0), true),
        (Point::new(0.0, -4.0), true),
        (Point::new(4.0, 4.0), true),
        (Point::new(4.0 + eps, 0.0), false),
        (Point::new(0.0, -4.0 - eps), false),
        (Point::new(4.0 + eps, 4.0 + eps), false),
    ];
    for (joint, expect) in boundary {
        let visible = normalize_joint(joint, &p).is_visible();
        ensure!(
            visible == expect,
            "visibility of {joint:?} should be {expect}"
        );
        let vis = visibility(&Pose::new(vec![joint]).unwrap(), &p);
        ensure!(vis.visible(0) == expect, "vector form disagrees at {joint:?}");
    }
    Ok(())
}

// ---------------------------------------------------------------------
// criterion 3: heatmap mass conservation
// ---------------------------------------------------------------------

fn criterion_heatmap_mass() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let (w, h) = (28usize, 22usize);
    let joints = 4;
    for set in 0..1000 {
        let pairs: Vec<(Patch, NetOutput)> = (0..12)
            .map(|_| {
                let pw = rng.gen_range(1.5..9.0);
                let ph = rng.gen_range(1.5..9.0);
                let cx = rng.gen_range(pw / 2.0..w as f64 - pw / 2.0);
                let cy = rng.gen_range(ph / 2.0..h as f64 - ph / 2.0);
                (patch(pw, ph, cx, cy), random_output(&mut rng, joints))
            })
            .collect();
        let maps = build_heatmaps(&pairs, (w, h), joints, false);
        for i in 0..joints {
            let expected: f64 = pairs
                .iter()
                .filter(|(_, o)| naive_winner(o) == i)
                .map(|(_, o)| o.joint_likelihood(i))
                .sum();
            let mass = maps.total_mass(i);
            ensure!(
                (mass - expected).abs() < 1e-9,
                "set {set} joint {i}: heat mass {mass} vs likelihood sum {expected}"
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// criterion 4: closed-form loss values
// ---------------------------------------------------------------------

fn criterion_loss_closed_forms() -> Result<(), String> {
    // uniform softmax over 15 classes
    let uniform = vec![1.0 / 15.0; 15];
    let det = detection_loss(&uniform, 7);
    ensure!(
        (det - 15.0f64.ln()).abs() <= 1e-12,
        "uniform detection loss {det} != ln 15"
    );

    // background label: localization loss is exactly zero
    let locations = vec![[0.4, -0.3]; 14];
    let loc = localization_loss(&locations, &PatchLabel::background());
    ensure!(loc == 0.0, "background localization loss {loc} != 0");

    // total loss with lambda_d = 4 matches a hand-summed decomposition
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let batch: Vec<(NetOutput, PatchLabel)> = (0..10)
        .map(|k| {
            let output = random_output(&mut rng, 5);
            let label = if k % 3 == 0 {
                PatchLabel::background()
            } else {
                PatchLabel {
                    class: 1 + k % 5,
                    target: Some(dspose::geometry::NormalizedJoint::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                    )),
                }
            };
            (output, label)
        })
        .collect();
    let mut by_hand = 0.0;
    for (output, label) in &batch {
        by_hand += 4.0 * -output.likelihoods[label.class].ln();
        if let Some(t) = label.target {
            let z = output.locations[label.class - 1];
            by_hand += (z[0] - t.x).powi(2) + (z[1] - t.y).powi(2);
        }
    }
    let lib = total_loss(&batch, 4.0);
    ensure!(
        (lib - by_hand).abs() <= 1e-12,
        "total loss {lib} != hand sum {by_hand}"
    );
    Ok(())
}

// ---------------------------------------------------------------------
// criterion 5: fusion oracle + selection re-check + k = 1 special case
// ---------------------------------------------------------------------

fn criterion_fusion() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let joints = 4;
    let (w, h) = (24usize, 24usize);
    let body = patch(24.0, 24.0, 12.0, 12.0);
    let cfg = InferenceConfig::default();
    let strict = InferenceConfig {
        k: 1,
        ..Default::default()
    };
    let mut fused_checked = 0usize;
    for set in 0..1000 {
        let pairs: Vec<(Patch, NetOutput)> = (0..10)
            .map(|_| {
                let side = rng.gen_range(2.0..10.0);
                let cx = rng.gen_range(side / 2.0..w as f64 - side / 2.0);
                let cy = rng.gen_range(side / 2.0..h as f64 - side / 2.0);
                (patch(side, side, cx, cy), random_output(&mut rng, joints))
            })
            .collect();
        let maps = build_heatmaps(&pairs, (w, h), joints, false);
        for i in 0..joints {
            let selected = select_patches_for_joint(i, &pairs, &maps, &body, &cfg);

            // exhaustive re-check of the three selection conditions
            let body_peak = maps.max_in_patch(i, &body);
            for (idx, (part, output)) in pairs.iter().enumerate() {
                let c1 = output.background_likelihood() < output.joint_likelihood(i);
                let li = output.joint_likelihood(i);
                let c2 = (0..joints)
                    .filter(|j| *j != i && output.joint_likelihood(*j) >= li)
                    .count()
                    < cfg.k;
                let c3 = maps.max_in_patch(i, part) > cfg.lambda_h * body_peak;
                ensure!(
                    selected.contains(&idx) == (c1 && c2 && c3),
                    "set {set} joint {i} patch {idx}: selection disagrees with conditions"
                );
            }

            // fused location equals the brute-force weighted average, both
            // on the organically selected set and on a random non-empty one
            let mut random_set: Vec<usize> =
                (0..pairs.len()).filter(|_| rng.gen_bool(0.4)).collect();
            if random_set.is_empty() {
                random_set.push(rng.gen_range(0..pairs.len()));
            }
            for sel in [&selected, &random_set] {
                if sel.is_empty() {
                    continue;
                }
                let fused = fuse_joint_location(i, sel, &pairs, &maps);
                let mut sx = 0.0;
                let mut sy = 0.0;
                let mut sw = 0.0;
                for &idx in sel {
                    let (part, output) = &pairs[idx];
                    let z = output.locations[i];
                    let weight = output.joint_likelihood(i);
                    sx += (part.center().x + z[0] * part.w()) * weight;
                    sy += (part.center().y + z[1] * part.h()) * weight;
                    sw += weight;
                }
                ensure!(
                    (fused.x - sx / sw).abs() <= 1e-12 && (fused.y - sy / sw).abs() <= 1e-12,
                    "set {set} joint {i}: fused {fused:?} vs brute force ({}, {})",
                    sx / sw,
                    sy / sw
                );
                fused_checked += 1;
            }

            // k = 1 reduces the likelihood-rank condition to a strict argmax
            let strict_sel = select_patches_for_joint(i, &pairs, &maps, &body, &strict);
            for (idx, (part, output)) in pairs.iter().enumerate() {
                let li = output.joint_likelihood(i);
                let is_strict_argmax =
                    (0..joints).all(|j| j == i || output.joint_likelihood(j) < li);
                let c1 = output.background_likelihood() < li;
                let c3 = maps.max_in_patch(i, part) > strict.lambda_h * body_peak;
                ensure!(
                    strict_sel.contains(&idx) == (c1 && is_strict_argmax && c3),
                    "set {set} joint {i} patch {idx}: k=1 selection is not a strict argmax"
                );
            }
        }
    }
    ensure!(
        fused_checked >= 1000,
        "only {fused_checked} non-empty selections exercised the fusion oracle"
    );
    Ok(())
}

// ---------------------------------------------------------------------
// criterion 6: metric oracles (20 handcrafted cases + brute force)
// ---------------------------------------------------------------------

/// Independent O(n^2) all-points interpolated AP.
fn naive_ap(detections: &[Detection]) -> f64 {
    let mut ranked: Vec<&Detection> = detections.iter().collect();
    ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let positives = ranked.iter().filter(|d| d.is_positive).count();
    let precision_at = |k: usize| -> f64 {
        let tp = ranked[..=k].iter().filter(|d| d.is_positive).count();
        tp as f64 / (k + 1) as f64
    };
    let mut sum = 0.0;
    for k in 0..ranked.len() {
        if ranked[k].is_positive {
            let best = (k..ranked.len())
                .map(precision_at)
                .fold(f64::NEG_INFINITY, f64::max);
            sum += best;
        }
    }
    sum / positives as f64
}

fn criterion_metric_oracles() -> Result<(), String> {
    let mut case = 0usize;
    let mut check = |ok: bool, what: &str| -> Result<(), String> {
        case += 1;
        if ok {
            Ok(())
        } else {
            Err(format!("metric case {case} failed: {what}"))
        }
    };

    // --- PCP (6 cases) ---
    let truth = pose(&[(0.0, 0.0), (4.0, 0.0)]);
    let r = pcp(&truth.clone(), &truth, &[(0, 1)]).unwrap();
    check(r.correct == 1 && r.evaluated == 1, "perfect estimate")?;

    let half = pose(&[(0.0, 2.0), (4.0, -2.0)]);
    let r = pcp(&half, &truth, &[(0, 1)]).unwrap();
    check(r.correct == 1, "errors exactly half the limb length count")?;

    let over = pose(&[(0.0, 2.0000001), (4.0, 0.0)]);
    let r = pcp(&over, &truth, &[(0, 1)]).unwrap();
    check(r.correct == 0, "error just past half the limb length")?;

    let degenerate = pose(&[(1.0, 1.0), (1.0, 1.0)]);
    let r = pcp(&degenerate.clone(), &degenerate, &[(0, 1)]).unwrap();
    check(r.evaluated == 0 && r.skipped == 1, "zero-length limb skipped")?;

    let truth3 = pose(&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0)]);
    let est3 = pose(&[(0.1, 0.0), (4.0, 0.1), (9.0, 4.0)]);
    let r = pcp(&est3, &truth3, &[(0, 1), (1, 2)]).unwrap();
    check(r.correct == 1 && r.evaluated == 2, "2-limb mixed outcome")?;

    let short = pose(&[(0.0, 0.0)]);
    check(
        matches!(
            pcp(&short, &truth, &[(0, 1)]),
            Err(EvalError::JointCountMismatch { .. })
        ),
        "joint count mismatch is an error",
    )?;

    // --- PDJ (7 cases) ---
    let scored = |est: &[(f64, f64)], tr: &[(f64, f64)], d: f64| ScoredPose {
        estimate: pose(est),
        truth: pose(tr),
        diameter: TorsoDiameter(d),
    };
    let s = [scored(&[(0.0, 0.0)], &[(0.0, 0.0)], 2.0)];
    check(
        pdj_curve(&s, &[0.0]).unwrap() == vec![0.0],
        "zero threshold detects nothing (strict)",
    )?;
    let s = [scored(&[(1.0, 0.0)], &[(0.0, 0.0)], 2.0)];
    check(
        pdj_curve(&s, &[0.5]).unwrap() == vec![0.0],
        "error exactly at the threshold misses",
    )?;
    check(
        pdj_curve(&s, &[0.5000001]).unwrap() == vec![1.0],
        "error just below the threshold hits",
    )?;
    let s = [scored(&[(1.0, 0.0), (0.0, 0.0)], &[(0.0, 0.0), (0.0, 0.0)], 4.0)];
    check(
        pdj_curve(&s, &[0.2]).unwrap() == vec![0.5],
        "one of two joints detected",
    )?;
    let s = [
        scored(&[(1.0, 0.0)], &[(0.0, 0.0)], 10.0),
        scored(&[(1.0, 0.0)], &[(0.0, 0.0)], 1.0),
    ];
    check(
        pdj_curve(&s, &[0.5]).unwrap() == vec![0.5],
        "pooling across images with different torso diameters",
    )?;
    // monotone over random data, against a brute-force recount
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let random_scored: Vec<ScoredPose> = (0..8)
        .map(|_| {
            let tr: Vec<(f64, f64)> = (0..5)
                .map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
                .collect();
            let est: Vec<(f64, f64)> = tr
                .iter()
                .map(|(x, y)| (x + rng.gen_range(-3.0..3.0), y + rng.gen_range(-3.0..3.0)))
                .collect();
            scored(&est, &tr, rng.gen_range(2.0..8.0))
        })
        .collect();
    let fractions: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
    let curve = pdj_curve(&random_scored, &fractions).unwrap();
    check(
        curve.windows(2).all(|p| p[0] <= p[1]),
        "PDJ curve monotone non-decreasing",
    )?;
    let brute: Vec<f64> = fractions
        .iter()
        .map(|f| {
            let mut hit = 0;
            let mut total = 0;
            for s in &random_scored {
                for (e, t) in s.estimate.joints().iter().zip(s.truth.joints()) {
                    total += 1;
                    let err = ((e.x - t.x).powi(2) + (e.y - t.y).powi(2)).sqrt();
                    if err < f * s.diameter.0 {
                        hit += 1;
                    }
                }
            }
            hit as f64 / total as f64
        })
        .collect();
    check(curve == brute, "PDJ equals the brute-force recount")?;

    // --- detection AP (7 cases) ---
    let d = |score: f64, is_positive: bool| Detection { score, is_positive };
    check(
        average_precision(&[d(0.9, true), d(0.8, true), d(0.2, false)]).unwrap() == 1.0,
        "perfect ranking has AP 1",
    )?;
    check(
        average_precision(&[d(0.9, false), d(0.8, false), d(0.7, false), d(0.1, true)]).unwrap()
            == 0.25,
        "single positive ranked last",
    )?;
    let ap = average_precision(&[d(0.9, true), d(0.7, false), d(0.5, true), d(0.3, false)]).unwrap();
    check(
        (ap - (1.0 + 2.0 / 3.0) / 2.0).abs() <= 1e-15,
        "interleaved ranking hand value",
    )?;
    let ap = average_precision(&[d(0.9, false), d(0.7, true), d(0.5, true)]).unwrap();
    check(
        (ap - 2.0 / 3.0).abs() <= 1e-15,
        "interpolation lifts precision to the envelope",
    )?;
    check(
        average_precision(&[d(0.5, true)]).unwrap() == 1.0,
        "all-positive list has AP 1",
    )?;
    let outputs = vec![(vec![0.1, 0.8, 0.1], 1usize), (vec![0.7, 0.2, 0.1], 0usize)];
    let (per_joint, mean) = detection_ap(&outputs, 2);
    check(
        per_joint[1].is_none() && mean == per_joint[0].unwrap(),
        "joints without positives are excluded from the mean",
    )?;
    // random lists against the independent O(n^2) implementation
    let mut all_match = true;
    for _ in 0..50 {
        let list: Vec<Detection> = (0..rng.gen_range(3..20))
            .map(|_| d(rng.gen_range(0.0..1.0), rng.gen_bool(0.4)))
            .collect();
        if list.iter().any(|x| x.is_positive) {
            let lib = average_precision(&list).unwrap();
            if (lib - naive_ap(&list)).abs() > 1e-12 {
                all_match = false;
            }
        }
    }
    check(all_match, "AP equals the brute-force implementation")?;

    ensure!(case == 20, "expected 20 handcrafted cases, ran {case}");
    Ok(())
}

// ---------------------------------------------------------------------
// criteria 7-9 share one synthetic dataset
// ---------------------------------------------------------------------

struct Corpus {
    manifest: DatasetManifest,
    path: std::path::PathBuf,
    _dir: tempfile::TempDir,
}

fn build_corpus(count: usize) -> Corpus {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = FigureConfig {
        seed: 7,
        ..Default::default()
    };
    let path = write_synthetic_dataset(&cfg, count, dir.path()).expect("dataset written");
    let manifest = DatasetManifest::load(&path).expect("manifest loads");
    Corpus {
        manifest,
        path,
        _dir: dir,
    }
}

fn run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.figure.seed = 7;
    cfg.sampling.seed = 7;
    cfg.train.seed = 7;
    cfg
}

fn criterion_end_to_end(corpus: &Corpus) -> Result<(), String> {
    let start = Instant::now();
    let cfg = run_config();
    let total = corpus.manifest.samples.len();

    let train_idx: Vec<usize> = (0..150).collect();
    let samples = pipeline::prepare_samples(
        &corpus.manifest,
        &corpus.path,
        &cfg.sampling,
        &cfg.net,
        &train_idx,
    )
    .map_err(|e| e.to_string())?;
    let (params, history) =
        pipeline::train_network(&samples, &cfg.net, &cfg.train, |_, _| {}).map_err(|e| e.to_string())?;
    ensure!(
        history.last().unwrap().mean_loss < history[0].mean_loss,
        "training loss did not decrease"
    );

    let heldout: Vec<usize> = (total - 30..total).collect();
    let scored = pipeline::evaluate_split(&corpus.manifest, &corpus.path, &heldout, &params, &cfg)
        .map_err(|e| e.to_string())?;
    let pdj = pdj_curve(&scored, &[0.5]).map_err(|e| e.to_string())?[0];
    let mean_err = mean_normalized_error(&scored).map_err(|e| e.to_string())?;
    ensure!(pdj > 0.7, "held-out PDJ@0.5 = {pdj:.3}, need > 0.7");
    ensure!(
        mean_err < 0.3,
        "held-out mean joint error = {mean_err:.3} d, need < 0.3 d"
    );

    // oracle-network inference: inject ground-truth outputs and check the
    // pipeline recovers the exact pose
    let record = &corpus.manifest.samples[0];
    let truth = corpus.manifest.pose(record);
    let d = corpus.manifest.diameter(record);
    let joints = truth.len();
    let side = 0.6 * d.0;
    let pairs: Vec<(Patch, NetOutput)> = truth
        .joints()
        .iter()
        .enumerate()
        .map(|(i, joint)| {
            let mut likelihoods = vec![0.05 / joints as f64; joints + 1];
            likelihoods[0] = 0.05;
            likelihoods[i + 1] = 0.9;
            let locations = vec![[0.0, 0.0]; joints];
            (
                patch(side, side, joint.x, joint.y),
                NetOutput {
                    likelihoods,
                    locations,
                },
            )
        })
        .collect();
    let body = dspose::inference::whole_image_patch(64, 64);
    let oracle = estimate_from_outputs(&pairs, (64, 64), joints, &body, &cfg.inference)
        .map_err(|e| e.to_string())?;
    for (i, (est, tr)) in oracle.pose.joints().iter().zip(truth.joints()).enumerate() {
        ensure!(
            (est.x - tr.x).abs() <= 1e-9 && (est.y - tr.y).abs() <= 1e-9,
            "oracle inference joint {i}: {est:?} vs truth {tr:?}"
        );
        ensure!(
            oracle.selected_counts[i] > 0,
            "oracle inference fell back to the heatmap argmax for joint {i}"
        );
    }

    let elapsed = start.elapsed().as_secs_f64();
    ensure!(
        elapsed < 1800.0,
        "end-to-end run took {elapsed:.0} s (budget 1800 s)"
    );
    println!(
        "  trained {} pairs, held-out PDJ@0.5 {pdj:.3}, mean error {mean_err:.3} d, {elapsed:.0} s",
        dspose::training::SampleSource::len(&samples)
    );
    Ok(())
}

fn criterion_ablation(corpus: &Corpus) -> Result<(), String> {
    let cfg = run_config();
    let train_idx: Vec<usize> = (0..150).collect();
    let test_idx: Vec<usize> = (150..200).collect();
    let train_samples = pipeline::prepare_samples(
        &corpus.manifest,
        &corpus.path,
        &cfg.sampling,
        &cfg.net,
        &train_idx,
    )
    .map_err(|e| e.to_string())?;
    let test_samples = pipeline::prepare_samples(
        &corpus.manifest,
        &corpus.path,
        &cfg.sampling,
        &cfg.net,
        &test_idx,
    )
    .map_err(|e| e.to_string())?;
    let result = pipeline::run_ablation(&train_samples, &test_samples, &cfg.net, &cfg.train)
        .map_err(|e| e.to_string())?;
    println!(
        "  mAP part-only {:.3}, body-only {:.3}, dual {:.3}",
        result.part_only, result.body_only, result.dual
    );
    ensure!(
        result.dual >= result.part_only.max(result.body_only) - 0.02,
        "dual mAP {:.3} more than 2 points below best single source {:.3}",
        result.dual,
        result.part_only.max(result.body_only)
    );
    ensure!(
        result.dual >= result.part_only,
        "dual mAP {:.3} below part-only {:.3}",
        result.dual,
        result.part_only
    );
    Ok(())
}

fn criterion_determinism(corpus: &Corpus) -> Result<(), String> {
    let mut cfg = run_config();
    cfg.train.epochs = 2;
    let out_dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    let run = |tag: &str| -> Result<(Vec<u8>, String), String> {
        let train_idx: Vec<usize> = (0..5).collect();
        let samples = pipeline::prepare_samples(
            &corpus.manifest,
            &corpus.path,
            &cfg.sampling,
            &cfg.net,
            &train_idx,
        )
        .map_err(|e| e.to_string())?;
        let (params, _) = pipeline::train_network(&samples, &cfg.net, &cfg.train, |_, _| {})
            .map_err(|e| e.to_string())?;
        let ckpt = out_dir.path().join(format!("{tag}.json"));
        params.save(&ckpt).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&ckpt).map_err(|e| e.to_string())?;
        let (estimate, _) =
            pipeline::estimate_sample(&corpus.manifest, &corpus.path, 6, &params, &cfg)
                .map_err(|e| e.to_string())?;
        let json = serde_json::to_string(&estimate).expect("estimate serializes");
        Ok((bytes, json))
    };

    let (ckpt_a, pose_a) = run("a")?;
    let (ckpt_b, pose_b) = run("b")?;
    ensure!(ckpt_a == ckpt_b, "checkpoints differ between identical runs");
    ensure!(pose_a == pose_b, "pose JSON differs between identical runs");
    Ok(())
}

// ---------------------------------------------------------------------

#[test]
fn acceptance() {
    // single-threaded pool: the end-to-end budget is a one-core budget,
    // and it keeps the other criteria deterministic in wall time
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("worker pool");

    pool.install(|| {
        let corpus = build_corpus(2000);
        let criteria: Vec<(&str, Box<dyn Fn() -> Result<(), String>>)> = vec![
            ("1 gradient check", Box::new(criterion_gradients)),
            ("2 coordinate round trip", Box::new(criterion_round_trip)),
            ("3 heatmap mass conservation", Box::new(criterion_heatmap_mass)),
            ("4 loss closed forms", Box::new(criterion_loss_closed_forms)),
            ("5 fusion + selection oracle", Box::new(criterion_fusion)),
            ("6 metric oracles", Box::new(criterion_metric_oracles)),
            (
                "7 end-to-end synthetic training",
                Box::new(|| criterion_end_to_end(&corpus)),
            ),
            ("8 ablation direction", Box::new(|| criterion_ablation(&corpus))),
            ("9 determinism", Box::new(|| criterion_determinism(&corpus))),
        ];

        let mut failures = Vec::new();
        for (name, body) in criteria {
            match body() {
                Ok(()) => println!("criterion {name}: pass"),
                Err(msg) => {
                    println!("criterion {name}: FAIL ({msg})");
                    failures.push(format!("{name}: {msg}"));
                }
            }
        }
        assert!(
            failures.is_empty(),
            "acceptance criteria failed:\n{}",
            failures.join("\n")
        );
    });
}
