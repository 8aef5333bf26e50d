//! Mini-batch training with MSE loss, ADAM and cosine learning-rate decay.

use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{IqtError, Result};
use crate::model::{IqtModel, ModelConfig, StreamFeatures};
use crate::pipeline::augment::{AugmentFlags, Augmentation};
use crate::pipeline::checkpoint::Checkpoint;
use crate::pipeline::data::{check_images, load_manifest_samples, mos_range, normalize_mos, PairData, Sample};
use crate::tensor::{adam_step, cosine_lr, AdamState, Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub lr0: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub augment: AugmentFlags,
    /// Loss is logged every this many steps; 0 disables logging.
    pub log_every: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            batch_size: 16,
            lr0: 2e-4,
            total_steps: 1000,
            seed: 0,
            augment: AugmentFlags::ALL,
            log_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(IqtError::Config("batch_size must be positive".into()));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(IqtError::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<LossRecord>,
}

/// Where one batch item is cut from and how it is transformed.
#[derive(Clone, Copy, Debug)]
struct ItemPlan {
    index: usize,
    top: usize,
    left: usize,
    aug: Augmentation,
}

/// Draws indices epoch by epoch, reshuffling at each epoch boundary.
struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    fn new(n: usize) -> Self {
        EpochSampler {
            order: (0..n).collect(),
            cursor: n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

fn plan_item(sample: &Sample, index: usize, patch: usize, flags: AugmentFlags, rng: &mut ChaCha8Rng) -> ItemPlan {
    let (top, left) = match &sample.pair {
        PairData::Images { reference, .. } => (
            rng.random_range(0..=reference.height() - patch),
            rng.random_range(0..=reference.width() - patch),
        ),
        PairData::Features { .. } => (0, 0),
    };
    ItemPlan {
        index,
        top,
        left,
        aug: Augmentation::sample(flags, rng),
    }
}

fn item_features(model: &IqtModel<f32>, sample: &Sample, plan: &ItemPlan) -> Result<StreamFeatures> {
    let p = model.config.patch_size;
    match &sample.pair {
        PairData::Images { reference, distorted } => {
            let r = plan.aug.apply_image(&reference.crop(plan.top, plan.left, p, p)?)?;
            let d = plan.aug.apply_image(&distorted.crop(plan.top, plan.left, p, p)?)?;
            model.features(&r, &d)
        }
        PairData::Features { reference, distorted } => {
            StreamFeatures::from_maps(plan.aug.apply_features(reference)?, plan.aug.apply_features(distorted)?)
        }
    }
}

/// Squared error of one item and its gradient for every parameter, in
/// parameter order.
fn item_gradients(model: &IqtModel<f32>, feats: &StreamFeatures, target: f64) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut g = Graph::new();
    let pass = model.forward_on(&mut g, feats, true, None)?;
    let shape = g.shape(pass.score).to_vec();
    let target = g.constant(Tensor::full(&shape, target as f32));
    let err = g.sub(pass.score, target)?;
    let sq = g.square(err);
    let loss = g.mean(sq);
    let grads = g.backward(loss)?;
    let per_param = pass
        .bound
        .iter()
        .map(|(_, v)| grads.get_or_zeros(v, g.shape(v)))
        .collect();
    Ok((g.value(loss).data()[0] as f64, per_param))
}

/// Trains a freshly initialized model on in-memory samples.
pub fn train_samples(samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(IqtError::Contract("training needs at least one sample".into()));
    }
    for s in samples {
        if let PairData::Images { reference, distorted } = &s.pair {
            check_images(&cfg.model, reference, distorted)?;
        }
    }
    let mut model = IqtModel::<f32>::init(cfg.model.clone(), cfg.seed)?;
    let range = mos_range(samples);
    let targets: Vec<f64> = samples.iter().map(|s| normalize_mos(s.mos, range)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut sampler = EpochSampler::new(samples.len());
    let mut adam = AdamState::new(model.params.iter().map(|(_, t)| t));
    let mut losses = Vec::new();
    let patch = cfg.model.patch_size;

    for step in 0..cfg.total_steps {
        let plans: Vec<ItemPlan> = (0..cfg.batch_size)
            .map(|_| {
                let i = sampler.next(&mut rng);
                plan_item(&samples[i], i, patch, cfg.augment, &mut rng)
            })
            .collect();
        let results: Vec<(f64, Vec<Tensor<f32>>)> = plans
            .par_iter()
            .map(|p| {
                let feats = item_features(&model, &samples[p.index], p)?;
                item_gradients(&model, &feats, targets[p.index])
            })
            .collect::<Result<_>>()?;

        let scale = 1.0 / cfg.batch_size as f32;
        let mut summed: Vec<Tensor<f32>> = results[0].1.clone();
        for (_, grads) in &results[1..] {
            for (acc, g) in summed.iter_mut().zip(grads) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
        }
        for t in &mut summed {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let mse = results.iter().map(|(l, _)| l).sum::<f64>() / cfg.batch_size as f64;
        let lr = cosine_lr(step, cfg.total_steps, cfg.lr0);
        let mut params: Vec<&mut Tensor<f32>> = model.params.values_mut().collect();
        adam_step(&mut params, &summed, &mut adam, lr)?;

        losses.push(LossRecord { step, lr, mse });
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.total_steps) {
            info!("step {step}: lr {lr:.3e} mse {mse:.6}");
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            step: cfg.total_steps,
            mos_range: range,
        },
        losses,
    })
}

/// Loads a manifest and trains on it; unreadable rows are skipped.
pub fn train(manifest: impl AsRef<Path>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let samples = load_manifest_samples(&cfg.model, manifest)?;
    train_samples(&samples, cfg)
}

/// Writes the loss curve as CSV `step,lr,mse`.
pub fn write_loss_log(path: impl AsRef<Path>, losses: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| IqtError::Contract(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| IqtError::Contract(format!("{}: {e}", path.display()));
    w.write_record(["step", "lr", "mse"]).map_err(io_err)?;
    for r in losses {
        w.write_record([r.step.to_string(), r.lr.to_string(), r.mse.to_string()])
            .map_err(io_err)?;
    }
    w.flush().map_err(|e| IqtError::io(path, e))
}
