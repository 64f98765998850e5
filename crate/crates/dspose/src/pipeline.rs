//! End-to-end wiring: dataset -> patch sampling -> labeled pairs ->
//! training, and dataset -> sliding-window inference -> scored poses.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::config::RunConfig;
use crate::dataset::DatasetManifest;
use crate::eval::ScoredPose;
use crate::geometry::{extend_to_square, Patch};
use crate::imageio::{resample_patch, Image};
use crate::inference::{estimate_pose, whole_image_patch, PoseEstimate};
use crate::labeling::{build_training_pairs, PatchLabel};
use crate::net::{build_inputs, DualInput, InputSources, LayerSpec, NetworkParams};
use crate::sampling::{
    filter_body_patches, filter_part_patches, stub_proposals, torso_diameter, SamplingConfig,
};
use crate::training::{balance_background, train, EpochStats, SampleSource, TrainConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Inference(#[from] crate::inference::InferenceError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error("network expects {net} joints but the dataset has {dataset}")]
    JointMismatch { net: usize, dataset: usize },
    #[error("no usable training samples (all images produced empty patch sets)")]
    NoTrainingSamples,
    #[error("degenerate torso (coincident torso joints) in sample {0}")]
    DegenerateTorso(String),
}

/// One prepared training sample: patch geometry plus indices into the
/// image and body-block tables. Pixel blocks for the part patch are
/// rebuilt on demand.
struct SampleSpec {
    image: usize,
    part: Patch,
    body: Patch,
    body_block: usize,
    label: PatchLabel,
}

/// A materialize-on-demand training set over decoded images.
pub struct TrainingSamples {
    images: Vec<Image>,
    body_blocks: Vec<ndarray::Array3<f64>>,
    specs: Vec<SampleSpec>,
    input_size: usize,
}

impl TrainingSamples {
    pub fn label(&self, idx: usize) -> PatchLabel {
        self.specs[idx].label
    }
}

impl SampleSource for TrainingSamples {
    fn len(&self) -> usize {
        self.specs.len()
    }

    fn sample(&self, idx: usize) -> (DualInput, PatchLabel) {
        let spec = &self.specs[idx];
        let image = &self.images[spec.image];
        let part_block = resample_patch(image, &spec.part, self.input_size);
        let body_square = extend_to_square(&spec.body);
        let input = build_inputs(
            part_block,
            &self.body_blocks[spec.body_block],
            &spec.part,
            &body_square,
        );
        (input, spec.label)
    }
}

/// Per-image sampling seed: decorrelates the proposal and pairing streams
/// across images while staying a pure function of the base seed.
fn image_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Sample, filter, pair and balance patches for the given dataset split.
/// Body candidates are the proposals plus the whole image, so every image
/// keeps at least one valid holistic view.
pub fn prepare_samples(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    sampling: &SamplingConfig,
    net: &LayerSpec,
    indices: &[usize],
) -> Result<TrainingSamples, PipelineError> {
    if net.joints != manifest.joint_count() {
        return Err(PipelineError::JointMismatch {
            net: net.joints,
            dataset: manifest.joint_count(),
        });
    }
    let mut images = Vec::with_capacity(indices.len());
    let mut body_blocks = Vec::new();
    let mut specs = Vec::new();
    for (slot, &index) in indices.iter().enumerate() {
        let record = &manifest.samples[index];
        let image = manifest.load_sample_image(manifest_path, record)?;
        let pose = manifest.pose(record);
        let d = torso_diameter(&pose, manifest.torso_pair);
        if d.0 == 0.0 {
            return Err(PipelineError::DegenerateTorso(record.name.clone()));
        }
        let size = (image.width(), image.height());

        let mut per_image = sampling.clone();
        per_image.seed = image_seed(sampling.seed, index);
        let proposals = stub_proposals(size, &pose, d, &per_image);
        let parts = filter_part_patches(&proposals, d, &per_image);
        let mut body_candidates = proposals;
        body_candidates.push(whole_image_patch(size.0, size.1));
        let bodies = filter_body_patches(&body_candidates, &pose);
        if parts.is_empty() || bodies.is_empty() {
            images.push(image);
            continue;
        }
        let pairs = match build_training_pairs(&parts, &bodies, &pose, per_image.seed) {
            Ok(pairs) => pairs,
            Err(crate::labeling::LabelError::NoValidPairs) => {
                images.push(image);
                continue;
            }
        };
        let labels: Vec<PatchLabel> = pairs.iter().map(|p| p.label).collect();
        let kept = balance_background(&labels);

        // one resampled block per distinct body patch in this image
        let mut block_of: HashMap<[u64; 4], usize> = HashMap::new();
        for &i in &kept {
            let pair = &pairs[i];
            let square = extend_to_square(&pair.body);
            let key = [
                square.w().to_bits(),
                square.h().to_bits(),
                square.center().x.to_bits(),
                square.center().y.to_bits(),
            ];
            let block = *block_of.entry(key).or_insert_with(|| {
                body_blocks.push(resample_patch(&image, &square, net.input_size));
                body_blocks.len() - 1
            });
            specs.push(SampleSpec {
                image: slot,
                part: pair.part,
                body: pair.body,
                body_block: block,
                label: pair.label,
            });
        }
        images.push(image);
    }
    if specs.is_empty() {
        return Err(PipelineError::NoTrainingSamples);
    }
    Ok(TrainingSamples {
        images,
        body_blocks,
        specs,
        input_size: net.input_size,
    })
}

/// Initialize and train a network on the prepared samples.
pub fn train_network(
    samples: &TrainingSamples,
    net: &LayerSpec,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats, &NetworkParams),
) -> Result<(NetworkParams, Vec<EpochStats>), PipelineError> {
    let mut params = NetworkParams::init(net, cfg.seed)?;
    let history = train(samples, &mut params, cfg, on_epoch)?;
    Ok((params, history))
}

/// Estimate the pose of one dataset sample using its ground-truth torso
/// diameter to size the sliding windows.
pub fn estimate_sample(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    index: usize,
    params: &NetworkParams,
    cfg: &RunConfig,
) -> Result<(PoseEstimate, ScoredPose), PipelineError> {
    let record = &manifest.samples[index];
    let image = manifest.load_sample_image(manifest_path, record)?;
    let truth = manifest.pose(record);
    let d = manifest.diameter(record);
    if d.0 == 0.0 {
        return Err(PipelineError::DegenerateTorso(record.name.clone()));
    }
    let estimate = estimate_pose(&image, params, d, &cfg.sampling, &cfg.inference)?;
    let scored = ScoredPose {
        estimate: estimate.pose.clone(),
        truth,
        diameter: d,
    };
    Ok((estimate, scored))
}

/// Estimate every sample in a split.
pub fn evaluate_split(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    indices: &[usize],
    params: &NetworkParams,
    cfg: &RunConfig,
) -> Result<Vec<ScoredPose>, PipelineError> {
    indices
        .iter()
        .map(|&i| Ok(estimate_sample(manifest, manifest_path, i, params, cfg)?.1))
        .collect()
}

/// Run the network over every prepared sample and return
/// `(likelihoods, true class)` rows for detection AP.
pub fn detection_outputs(
    samples: &TrainingSamples,
    params: &NetworkParams,
) -> Result<Vec<(Vec<f64>, usize)>, PipelineError> {
    let mut out = Vec::with_capacity(samples.len());
    for idx in 0..samples.len() {
        let (input, label) = samples.sample(idx);
        let (output, _) = params.forward(&input)?;
        out.push((output.likelihoods, label.class));
    }
    Ok(out)
}

/// Detection mAP of the part-only, body-only and dual variants, each
/// trained from scratch on the same samples and scored on the same
/// held-out samples.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationResult {
    pub part_only: f64,
    pub body_only: f64,
    pub dual: f64,
}

pub fn run_ablation(
    train_samples: &TrainingSamples,
    test_samples: &TrainingSamples,
    net: &LayerSpec,
    cfg: &TrainConfig,
) -> Result<AblationResult, PipelineError> {
    let score = |sources: InputSources| -> Result<f64, PipelineError> {
        let mut spec = net.clone();
        spec.sources = sources;
        let (params, _) = train_network(train_samples, &spec, cfg, |_, _| {})?;
        let outputs = detection_outputs(test_samples, &params)?;
        let (_, mean) = crate::eval::detection_ap(&outputs, spec.joints);
        Ok(mean)
    };
    Ok(AblationResult {
        part_only: score(InputSources::PartOnly)?,
        body_only: score(InputSources::BodyOnly)?,
        dual: score(InputSources::Dual)?,
    })
}
