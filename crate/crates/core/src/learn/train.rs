use std::borrow::Cow;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::softmax_field;
use super::loss::{total_loss, LovaszClasses, Target};
use super::metrics::ConfusionMatrix;
use super::model::{ModelConfig, ModelParams, PillarInput};
use super::optim::{Adam, OneCycle};
use crate::balance::LossWeights;
use crate::cloud::{LabeledCloud, PointCloud};
use crate::occ::{voxelize_bev, GridSpec, OccupancyGrid};
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// One training or evaluation example: pooled input and per-cell targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: PillarInput,
    pub target: Vec<u8>,
    /// Cells that enter the loss and the metrics; all of them when `None`.
    pub mask: Option<Vec<bool>>,
}

impl Sample {
    /// Occupancy example: the whole grid is supervised.
    pub fn occupancy(cloud: &PointCloud, grid: &OccupancyGrid) -> Result<Self> {
        Ok(Self {
            input: PillarInput::from_cloud(cloud, grid.spec())?,
            target: grid.labels().to_vec(),
            mask: None,
        })
    }

    /// Per-cell segmentation of the scan itself: each observed cell takes the
    /// plurality label of its points and only observed cells are supervised.
    pub fn segmentation(cloud: &LabeledCloud, spec: &GridSpec, weights: &LossWeights) -> Result<Self> {
        let grid = voxelize_bev(cloud, spec, weights)?;
        let input = PillarInput::from_cloud(cloud.cloud(), spec)?;
        let mask = input.occupied.clone();
        Ok(Self {
            input,
            target: grid.labels().to_vec(),
            mask: Some(mask),
        })
    }

    fn target(&self) -> Target<'_> {
        Target {
            labels: &self.target,
            mask: self.mask.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak of the one-cycle schedule.
    pub max_lr: f64,
    pub seed: u64,
    pub lovasz_classes: LovaszClasses,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            max_lr: 0.003,
            seed: 0,
            lovasz_classes: LovaszClasses::Present,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.max_lr >= 0.0 && self.max_lr.is_finite()) {
            return Err(Error::invalid("max_lr must be ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub step_losses: Vec<f64>,
    pub epoch_means: Vec<f64>,
}

fn sample_gradient(
    params: &ModelParams,
    sample: &Sample,
    weights: &LossWeights,
    classes: LovaszClasses,
) -> Result<(f64, ModelParams)> {
    let acts = params.forward(&sample.input)?;
    let probs = softmax_field(&acts.logits)?;
    let loss = total_loss(&probs, sample.target(), weights, params.config.lambda, classes)?;
    let grads = params.backward(&sample.input, &acts, &loss.grad);
    Ok((loss.loss, grads))
}

/// Mean loss and gradient over `batch`. Samples are processed in parallel
/// and reduced in batch order, so the result does not depend on the thread
/// count.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[&Sample],
    weights: &LossWeights,
    classes: LovaszClasses,
) -> Result<(f64, ModelParams)> {
    let parts: Vec<(f64, ModelParams)> = batch
        .par_iter()
        .map(|s| sample_gradient(params, s, weights, classes))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += scale * l;
        grads.add_scaled(g, scale);
    }
    Ok((loss, grads))
}

/// One Adam update on `batch` at learning rate `lr`. Fails without touching
/// the parameters when the loss or gradient is not finite.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut Adam,
    batch: &[&Sample],
    weights: &LossWeights,
    lr: f64,
    classes: LovaszClasses,
) -> Result<f64> {
    let (loss, grads) = batch_gradient(params, batch, weights, classes)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical(format!("loss {loss} with non-finite gradient")));
    }
    adam.step(params, &grads, lr, 0);
    Ok(loss)
}

/// Training examples that may change from epoch to epoch, e.g. under
/// augmentation. Must be deterministic in `(epoch, index)`.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, epoch: usize, index: usize) -> Result<Cow<'_, Sample>>;
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn sample(&self, _epoch: usize, index: usize) -> Result<Cow<'_, Sample>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, epoch: usize, index: usize) -> Result<Cow<'_, Sample>> {
        self.as_slice().sample(epoch, index)
    }
}

fn run<S: SampleSource + ?Sized>(
    params: &mut ModelParams,
    data: &S,
    weights: &LossWeights,
    config: &TrainConfig,
) -> Result<LossTrace> {
    config.validate()?;
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let schedule = OneCycle::new(config.max_lr, config.epochs * steps_per_epoch);
    let mut adam = Adam::new(params);
    let mut trace = LossTrace::default();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, Stream::BatchOrder, epoch as u64));
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let owned: Vec<Cow<'_, Sample>> = chunk
                .par_iter()
                .map(|&i| data.sample(epoch, i))
                .collect::<Result<_>>()?;
            let batch: Vec<&Sample> = owned.iter().map(|s| s.as_ref()).collect();
            let lr = schedule.lr(step);
            let loss = train_step(params, &mut adam, &batch, weights, lr, config.lovasz_classes).map_err(|e| {
                Error::Numerical(format!(
                    "epoch {epoch}, step {step}, samples {chunk:?}, lr {lr:.3e}: {e}"
                ))
            })?;
            debug!("epoch {epoch} step {step} lr {lr:.3e} loss {loss:.5}");
            trace.step_losses.push(loss);
            sum += loss * batch.len() as f64;
            step += 1;
        }
        let mean = sum / data.len() as f64;
        info!("epoch {epoch}: mean loss {mean:.5}");
        trace.epoch_means.push(mean);
    }
    Ok(trace)
}

/// Train a freshly initialised model on the occupancy task.
pub fn pretrain<S: SampleSource + ?Sized>(
    data: &S,
    model: &ModelConfig,
    config: &TrainConfig,
    weights: &LossWeights,
) -> Result<(ModelParams, LossTrace)> {
    if data.is_empty() {
        return Err(Error::invalid("empty pre-training set"));
    }
    let mut params = ModelParams::init(model, config.seed)?;
    let trace = run(&mut params, data, weights, config)?;
    Ok((params, trace))
}

/// Train on a few labelled samples. With `pretrained`, the encoder starts
/// from its weights; the decoder and head always start from `config.seed`,
/// so runs with and without pre-training differ only in the encoder.
pub fn finetune_segmentation<S: SampleSource + ?Sized>(
    pretrained: Option<&ModelParams>,
    data: &S,
    model: &ModelConfig,
    config: &TrainConfig,
    weights: &LossWeights,
) -> Result<(ModelParams, LossTrace)> {
    if data.is_empty() {
        return Err(Error::invalid("empty fine-tune set"));
    }
    let mut params = ModelParams::init(model, config.seed)?;
    if let Some(p) = pretrained {
        params.load_encoder(p)?;
    }
    let trace = run(&mut params, data, weights, config)?;
    Ok((params, trace))
}

/// Arg-max predictions tallied against targets over the supervised cells.
pub fn evaluate(params: &ModelParams, data: &[Sample]) -> Result<ConfusionMatrix> {
    let parts: Vec<ConfusionMatrix> = data
        .par_iter()
        .map(|s| {
            let acts = params.forward(&s.input)?;
            let pred = acts.logits.argmax();
            let mut cm = ConfusionMatrix::new(params.config.n_cls);
            cm.update(&s.target, &pred, s.mask.as_deref())?;
            Ok(cm)
        })
        .collect::<Result<_>>()?;
    let mut cm = ConfusionMatrix::new(params.config.n_cls);
    for p in &parts {
        cm.merge(p)?;
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn toy_sample() -> Sample {
        let spec = GridSpec::centered(8, 8, 1.0, -2.0, 4.0, 2);
        let mut cloud = PointCloud::new(1);
        let mut labels = vec![0u8; 64];
        for (k, (x, y)) in [(-2.5, 1.5), (0.5, 0.5), (2.5, -3.5), (-3.5, -0.5)]
            .into_iter()
            .enumerate()
        {
            cloud
                .push(Vector3::new(x, y, 0.3 * k as f64), &[0.1 * k as f64])
                .unwrap();
            labels[spec.cell_of(x, y).unwrap()] = 1 + (k % 2) as u8;
        }
        let grid = OccupancyGrid::new(spec, labels).unwrap();
        Sample::occupancy(&cloud, &grid).unwrap()
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_cls: 2,
            embed_channels: 4,
            encoder_channels: [4, 4],
            decoder_channels: [4, 4, 4],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_traces() {
        let data = vec![toy_sample(); 3];
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        let w = LossWeights::new(vec![0.01, 2.0, 1.0]).unwrap();
        let (pa, a) = pretrain(&data, &tiny(), &cfg, &w).unwrap();
        let (pb, b) = pretrain(&data, &tiny(), &cfg, &w).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.step_losses.len(), 6);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let data = vec![toy_sample()];
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 1,
            max_lr: 0.0,
            ..Default::default()
        };
        let w = LossWeights::new(vec![0.01, 2.0, 1.0]).unwrap();
        let (p, _) = pretrain(&data, &tiny(), &cfg, &w).unwrap();
        assert_eq!(p, ModelParams::init(&tiny(), 0).unwrap());
    }

    #[test]
    fn empty_finetune_set_rejected() {
        let err = finetune_segmentation(
            None,
            &[] as &[Sample],
            &tiny(),
            &TrainConfig::default(),
            &LossWeights::uniform(2),
        );
        assert!(err.unwrap_err().to_string().contains("empty fine-tune set"));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let data = [toy_sample()];
        let mut params = ModelParams::init(&tiny(), 0).unwrap();
        params.head.bias[0] = f64::NAN;
        let mut adam = Adam::new(&params);
        let before = params.clone();
        let w = LossWeights::uniform(2);
        let r = train_step(&mut params, &mut adam, &[&data[0]], &w, 0.01, LovaszClasses::Present);
        assert!(matches!(r, Err(Error::Numerical(_))));
        assert_eq!(format!("{params:?}"), format!("{before:?}"));
    }

    #[test]
    fn evaluation_counts_supervised_cells() {
        let data = vec![toy_sample()];
        let params = ModelParams::init(&tiny(), 0).unwrap();
        let cm = evaluate(&params, &data).unwrap();
        let total: u64 = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| cm.get(i, j))
            .sum();
        assert_eq!(total, 64);
    }
}
