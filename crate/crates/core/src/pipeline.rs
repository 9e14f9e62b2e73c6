//! End-to-end configuration and synthetic datasets for pre-training on
//! occupancy and fine-tuning on per-cell segmentation.
//!
//! Every random choice derives from [`PipelineConfig::seed`] through named
//! sub-streams, so a config plus its seed reproduces any artifact.

use std::borrow::Cow;
use std::path::PathBuf;

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{beam_resample, random_flip, resample_factor, FlipAxis, DEFAULT_MERGE_THRESHOLD_DEG};
use crate::balance::{
    class_loss_weights, class_stats, frame_weights, resample_frames, sampling_weights, summarize_boxes, LossWeights,
};
use crate::cloud::LabeledCloud;
use crate::learn::{
    evaluate, finetune_segmentation, miou, pretrain, LossTrace, ModelConfig, ModelParams, Sample, SampleSource,
    TrainConfig,
};
use crate::occ::{make_occupancy, GridSpec, OccOptions, OccupancyGrid};
use crate::rng::{self, Stream};
use crate::schema;
use crate::synth::{build_scene, generate_sequence, BeamSpec, SceneSpec, SequenceFrame, SequenceMeta};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceSpec {
    pub n_frames: usize,
    pub keyframe_hz: f64,
    /// Ego speed along +y, m/s.
    pub speed: f64,
    pub sensor_height: f64,
    /// Frame that receives the occupancy target; the middle one when unset.
    pub keyframe: Option<usize>,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            n_frames: 3,
            keyframe_hz: 10.0,
            speed: 5.0,
            sensor_height: 1.8,
            keyframe: None,
        }
    }
}

impl SequenceSpec {
    pub fn meta(&self) -> Result<SequenceMeta> {
        SequenceMeta::straight_line(self.n_frames, self.keyframe_hz, self.speed, self.sensor_height)
    }

    pub fn keyframe(&self) -> usize {
        self.keyframe.unwrap_or(self.n_frames / 2)
    }
}

fn default_source() -> BeamSpec {
    BeamSpec::new(64, 3.0, -25.0, 720).expect("valid default sensor")
}

fn default_targets() -> Vec<BeamSpec> {
    vec![BeamSpec::new(32, 3.0, -25.0, 720).expect("valid default sensor")]
}

fn default_grid() -> GridSpec {
    GridSpec::centered(32, 32, 1.0, -2.0, 4.0, schema::DEFAULT_N_CLS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub scene: SceneSpec,
    /// Sensor of the pre-training sequences.
    pub source_beams: BeamSpec,
    /// Sensors imitated by beam re-sampling during pre-training; the first
    /// one also captures the labeled fine-tune and evaluation scenes.
    pub target_beams: Vec<BeamSpec>,
    pub sequence: SequenceSpec,
    pub grid: GridSpec,
    pub occ: OccOptions,
    pub n_pretrain: usize,
    pub n_finetune: usize,
    pub n_eval: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            source_beams: default_source(),
            target_beams: default_targets(),
            sequence: SequenceSpec::default(),
            grid: default_grid(),
            occ: OccOptions::default(),
            n_pretrain: 200,
            n_finetune: 10,
            n_eval: 50,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.source_beams.validate()?;
        if self.target_beams.is_empty() {
            return Err(Error::invalid("data.target_beams needs at least one sensor"));
        }
        self.target_beams.iter().try_for_each(BeamSpec::validate)?;
        self.grid.validate()?;
        self.sequence.meta()?;
        if self.sequence.keyframe() >= self.sequence.n_frames {
            return Err(Error::invalid("data.sequence.keyframe outside the sequence"));
        }
        if self.scene.n_cls != self.grid.n_cls {
            return Err(Error::invalid("data.scene.n_cls and data.grid.n_cls differ"));
        }
        if !(self.occ.radius >= 0.0) || self.occ.k == 0 {
            return Err(Error::invalid("data.occ needs radius ≥ 0 and k ≥ 1"));
        }
        Ok(())
    }

    /// Sensor of the labeled scenes.
    pub fn downstream_beams(&self) -> &BeamSpec {
        &self.target_beams[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceConfig {
    /// Duplicate pre-training frames in proportion to their rarest
    /// foreground class.
    pub frame_resampling: bool,
    pub foreground: Vec<u8>,
    pub background: Vec<u8>,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            frame_resampling: true,
            foreground: schema::DEFAULT_FOREGROUND.to_vec(),
            background: schema::default_background(),
        }
    }
}

/// On-the-fly augmentation, redrawn every epoch. Flips mirror the target
/// grid with the cloud, so they need a grid centred on the sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augment {
    /// Re-sample the keyframe toward a randomly chosen target sensor.
    pub beam_resample: bool,
    /// Probability of y → −y.
    pub flip_x_prob: f64,
    /// Probability of x → −x.
    pub flip_y_prob: f64,
}

impl Default for Augment {
    fn default() -> Self {
        Self {
            beam_resample: true,
            flip_x_prob: 0.5,
            flip_y_prob: 0.5,
        }
    }
}

fn finetune_augment() -> Augment {
    Augment {
        beam_resample: false,
        ..Augment::default()
    }
}

impl Augment {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        for p in [self.flip_x_prob, self.flip_y_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("augment flip probability {p} outside [0, 1]")));
            }
        }
        let centred = GridSpec::centered(grid.h, grid.w, grid.cell_size, grid.z_min, grid.z_max, grid.n_cls);
        let tol = 1e-9 * grid.cell_size;
        if (self.flip_x_prob > 0.0 || self.flip_y_prob > 0.0)
            && ((grid.origin_x - centred.origin_x).abs() > tol || (grid.origin_y - centred.origin_y).abs() > tol)
        {
            return Err(Error::invalid("augment flips need a grid centred on the sensor"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Where `gen-scenes` writes and the training commands read.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub data: DataConfig,
    pub balance: BalanceConfig,
    /// Per-class loss weights (index 0 = empty); derived from the balance
    /// class sets when absent.
    pub loss_weights: Option<Vec<f64>>,
    pub pretrain_augment: Augment,
    /// Labeled scans already come from the target sensor, so beam
    /// re-sampling is off by default here.
    pub finetune_augment: Augment,
    pub model: ModelConfig,
    /// Section seeds select a sub-stream of the root seed.
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            balance: BalanceConfig::default(),
            loss_weights: None,
            pretrain_augment: Augment::default(),
            finetune_augment: finetune_augment(),
            model: ModelConfig {
                embed_channels: 16,
                encoder_channels: [32, 64],
                decoder_channels: [32, 16, 16],
                ..Default::default()
            },
            pretrain: TrainConfig {
                epochs: 30,
                batch_size: 1,
                ..Default::default()
            },
            finetune: TrainConfig {
                epochs: 80,
                batch_size: 1,
                ..Default::default()
            },
            paths: Paths::default(),
        }
    }
}

/// Overlay `over` on `base`: objects merge key by key, anything else
/// replaces.
fn overlay(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl PipelineConfig {
    /// Parse a JSON config in which every omitted key, at any depth, keeps
    /// its value from [`PipelineConfig::default`]. Errors name the offending
    /// field path.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let over: serde_json::Value = serde_json::from_slice(bytes)?;
        let mut v = serde_json::to_value(Self::default())?;
        overlay(&mut v, over);
        serde_path_to_error::deserialize(v).map_err(|e| Error::invalid(format!("at `{}`: {}", e.path(), e.inner())))
    }

    /// A few scenes and epochs on a narrow model: exercises every stage in
    /// seconds, for smoke runs.
    pub fn tiny() -> Self {
        let mut cfg = Self::default();
        cfg.data.n_pretrain = 8;
        cfg.data.n_finetune = 4;
        cfg.data.n_eval = 4;
        cfg.model.embed_channels = 8;
        cfg.model.encoder_channels = [8, 8];
        cfg.model.decoder_channels = [8, 8, 8];
        cfg.pretrain.epochs = 2;
        cfg.finetune.epochs = 2;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.pretrain_augment.validate(&self.data.grid)?;
        self.finetune_augment.validate(&self.data.grid)?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.model.n_cls != self.data.grid.n_cls {
            return Err(Error::invalid("model.n_cls and data.grid.n_cls differ"));
        }
        if !self.data.grid.h.is_multiple_of(4) || !self.data.grid.w.is_multiple_of(4) {
            return Err(Error::invalid("data.grid.h and data.grid.w must be multiples of 4"));
        }
        if self.model.point_features != 1 {
            return Err(Error::invalid("model.point_features must be 1 (scan intensity)"));
        }
        self.loss_weights().map(|_| ())
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        let w = match &self.loss_weights {
            Some(w) => LossWeights::new(w.clone())?,
            None => class_loss_weights(self.data.grid.n_cls, &self.balance.foreground, &self.balance.background)?,
        };
        if w.n_cls() != self.data.grid.n_cls {
            return Err(Error::invalid(format!(
                "loss_weights cover {} classes, grid has {}",
                w.n_cls(),
                self.data.grid.n_cls
            )));
        }
        Ok(w)
    }

    /// `section` with its seed mapped into the root stream.
    pub fn effective(&self, section: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: rng::child_seed(self.seed, Stream::Init, section.seed),
            ..section.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pretrain,
    Finetune,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::Finetune => "finetune",
            Split::Eval => "eval",
        }
    }

    fn beams(self, data: &DataConfig) -> &BeamSpec {
        match self {
            Split::Pretrain => &data.source_beams,
            _ => data.downstream_beams(),
        }
    }

    fn count(self, data: &DataConfig) -> usize {
        match self {
            Split::Pretrain => data.n_pretrain,
            Split::Finetune => data.n_finetune,
            Split::Eval => data.n_eval,
        }
    }
}

/// One simulated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSequence {
    pub meta: SequenceMeta,
    pub frames: Vec<SequenceFrame>,
}

/// Scene `index` of `split`; splits draw disjoint scene seeds.
pub fn simulate(data: &DataConfig, root: u64, split: Split, index: usize) -> Result<SceneSequence> {
    let seed = rng::child_seed(root, Stream::Scene, ((split as u64) << 32) | index as u64);
    let scene = build_scene(&data.scene, seed)?;
    let meta = data.sequence.meta()?;
    let frames = generate_sequence(&scene, split.beams(data), &meta)?;
    Ok(SceneSequence { meta, frames })
}

/// Every sequence of `split`, in index order.
pub fn simulate_split(data: &DataConfig, root: u64, split: Split) -> Result<Vec<SceneSequence>> {
    (0..split.count(data))
        .into_par_iter()
        .map(|i| simulate(data, root, split, i))
        .collect()
}

/// Occupancy target of the keyframe.
pub fn occupancy_target(data: &DataConfig, seq: &SceneSequence, weights: &LossWeights) -> Result<OccupancyGrid> {
    make_occupancy(
        &seq.frames,
        &seq.meta,
        &data.grid,
        data.sequence.keyframe(),
        &data.occ,
        weights,
    )
}

/// Downstream example: per-cell segmentation of the keyframe scan.
pub fn segmentation_sample(data: &DataConfig, seq: &SceneSequence, weights: &LossWeights) -> Result<Sample> {
    Sample::segmentation(&seq.frames[data.sequence.keyframe()].cloud, &data.grid, weights)
}

/// What an item is trained to predict.
#[derive(Debug, Clone, PartialEq)]
pub enum ItemTarget {
    /// Fixed occupancy grid, mirrored along with the cloud.
    Occupancy(OccupancyGrid),
    /// Plurality labels of the observed cells, recomputed from the
    /// augmented cloud.
    Segmentation,
}

/// Keyframe scan and its target, before augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub cloud: LabeledCloud,
    pub target: ItemTarget,
}

/// Training examples rendered per epoch: optional beam re-sampling toward a
/// randomly drawn target sensor, then grid-consistent flips.
#[derive(Debug, Clone)]
pub struct AugmentedSet {
    pub items: Vec<TrainItem>,
    /// Item drawn at each epoch position (class-balanced duplication).
    pub order: Vec<usize>,
    pub grid: GridSpec,
    pub weights: LossWeights,
    pub source_beams: BeamSpec,
    pub target_beams: Vec<BeamSpec>,
    pub augment: Augment,
    pub seed: u64,
}

fn flip_grid(grid: &OccupancyGrid, axis: FlipAxis) -> Result<OccupancyGrid> {
    let spec = grid.spec().clone();
    let mut labels = vec![0u8; spec.h * spec.w];
    for row in 0..spec.h {
        for col in 0..spec.w {
            let (r, c) = match axis {
                FlipAxis::X => (spec.h - 1 - row, col),
                FlipAxis::Y => (row, spec.w - 1 - col),
            };
            labels[r * spec.w + c] = grid.get(row, col);
        }
    }
    OccupancyGrid::new(spec, labels)
}

impl AugmentedSet {
    fn new(cfg: &PipelineConfig, items: Vec<TrainItem>, augment: &Augment, split: Split) -> Result<Self> {
        Ok(Self {
            order: (0..items.len()).collect(),
            items,
            grid: cfg.data.grid.clone(),
            weights: cfg.loss_weights()?,
            source_beams: cfg.data.source_beams.clone(),
            target_beams: cfg.data.target_beams.clone(),
            augment: augment.clone(),
            seed: rng::child_seed(cfg.seed, Stream::Augment, split as u64),
        })
    }

    /// Input cloud and, for occupancy items, the target grid of position
    /// `k` at `epoch`.
    pub fn render(&self, epoch: usize, k: usize) -> Result<(LabeledCloud, Option<OccupancyGrid>)> {
        let item = &self.items[self.order[k]];
        let seed = rng::child_seed(self.seed, Stream::Augment, ((epoch as u64) << 32) | k as u64);
        let mut cloud = item.cloud.clone();
        if self.augment.beam_resample {
            let pick = rng::stream(seed, Stream::Resample, 0).gen_range(0..self.target_beams.len());
            let factor = resample_factor(&self.source_beams, &self.target_beams[pick])?.factor;
            cloud = beam_resample(&cloud, factor, seed, DEFAULT_MERGE_THRESHOLD_DEG);
        }
        let mut grid = match &item.target {
            ItemTarget::Occupancy(g) => Some(g.clone()),
            ItemTarget::Segmentation => None,
        };
        for (axis, p) in [
            (FlipAxis::X, self.augment.flip_x_prob),
            (FlipAxis::Y, self.augment.flip_y_prob),
        ] {
            let (c, _, flipped) = random_flip(&cloud, &[], axis, p, seed);
            if flipped {
                cloud = c;
                grid = grid.map(|g| flip_grid(&g, axis)).transpose()?;
            }
        }
        Ok((cloud, grid))
    }
}

impl SampleSource for AugmentedSet {
    fn len(&self) -> usize {
        self.order.len()
    }

    fn sample(&self, epoch: usize, index: usize) -> Result<Cow<'_, Sample>> {
        let sample = match self.render(epoch, index)? {
            (cloud, Some(grid)) => Sample::occupancy(cloud.cloud(), &grid)?,
            (cloud, None) => Sample::segmentation(&cloud, &self.grid, &self.weights)?,
        };
        Ok(Cow::Owned(sample))
    }
}

/// Pre-training set over `seqs`, with class-balanced frame re-sampling when
/// enabled. Frames without any foreground instance keep the minimum weight.
pub fn pretrain_set(cfg: &PipelineConfig, seqs: &[SceneSequence]) -> Result<AugmentedSet> {
    let weights = cfg.loss_weights()?;
    let key = cfg.data.sequence.keyframe();
    let items: Vec<TrainItem> = seqs
        .par_iter()
        .map(|s| {
            Ok(TrainItem {
                cloud: s.frames[key].cloud.clone(),
                target: ItemTarget::Occupancy(occupancy_target(&cfg.data, s, &weights)?),
            })
        })
        .collect::<Result<_>>()?;
    let mut set = AugmentedSet::new(cfg, items, &cfg.pretrain_augment, Split::Pretrain)?;
    if !cfg.balance.frame_resampling || set.items.is_empty() {
        return Ok(set);
    }
    let summaries: Vec<_> = seqs.iter().map(|s| summarize_boxes(&s.frames[key].boxes)).collect();
    let stats = match class_stats(&summaries, &cfg.balance.foreground) {
        Ok(s) => s,
        Err(e) => {
            warn!("frame re-sampling skipped: {e}");
            return Ok(set);
        }
    };
    let s = sampling_weights(&stats)?;
    let presence: Vec<Vec<u8>> = summaries.iter().map(|f| f.keys().copied().collect()).collect();
    let fw = frame_weights(&presence, &s);
    set.order = resample_frames(&fw, set.items.len(), rng::child_seed(cfg.seed, Stream::Sampler, 0))?;
    Ok(set)
}

/// Labeled fine-tuning set over the keyframes of `seqs`.
pub fn finetune_set(cfg: &PipelineConfig, seqs: &[SceneSequence]) -> Result<AugmentedSet> {
    let key = cfg.data.sequence.keyframe();
    let items = seqs
        .iter()
        .map(|s| TrainItem {
            cloud: s.frames[key].cloud.clone(),
            target: ItemTarget::Segmentation,
        })
        .collect();
    AugmentedSet::new(cfg, items, &cfg.finetune_augment, Split::Finetune)
}

/// Un-augmented segmentation samples, for evaluation.
pub fn segmentation_set(cfg: &PipelineConfig, seqs: &[SceneSequence]) -> Result<Vec<Sample>> {
    let w = cfg.loss_weights()?;
    seqs.par_iter().map(|s| segmentation_sample(&cfg.data, s, &w)).collect()
}

/// Prepared data for the paired comparison.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub pretrain: AugmentedSet,
    pub finetune: AugmentedSet,
    pub eval: Vec<Sample>,
}

impl Datasets {
    pub fn simulate(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let pre = simulate_split(&cfg.data, cfg.seed, Split::Pretrain)?;
        let pretrain = pretrain_set(cfg, &pre)?;
        drop(pre);
        let fine = simulate_split(&cfg.data, cfg.seed, Split::Finetune)?;
        let eval = simulate_split(&cfg.data, cfg.seed, Split::Eval)?;
        Ok(Self {
            pretrain,
            finetune: finetune_set(cfg, &fine)?,
            eval: segmentation_set(cfg, &eval)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub pretrained_miou: f64,
    pub scratch_miou: f64,
    pub pretrain_trace: LossTrace,
}

impl PairedRun {
    /// Difference in mIoU points (percent).
    pub fn gain(&self) -> f64 {
        100.0 * (self.pretrained_miou - self.scratch_miou)
    }
}

/// mIoU over the non-empty classes present in the evaluation targets.
pub fn eval_miou(params: &ModelParams, data: &[Sample]) -> Result<f64> {
    Ok(miou(&evaluate(params, data)?, true).miou)
}

/// Pre-train then fine-tune, against fine-tuning from scratch, for one
/// section seed. Both fine-tunes share the decoder and head initialization.
pub fn paired_run(cfg: &PipelineConfig, data: &Datasets, seed: u64) -> Result<PairedRun> {
    let w = cfg.loss_weights()?;
    let pre_cfg = cfg.effective(&TrainConfig {
        seed,
        ..cfg.pretrain.clone()
    });
    let fine_cfg = cfg.effective(&TrainConfig {
        seed,
        ..cfg.finetune.clone()
    });
    let (encoder, pretrain_trace) = pretrain(&data.pretrain, &cfg.model, &pre_cfg, &w)?;
    let (tuned, _) = finetune_segmentation(Some(&encoder), &data.finetune, &cfg.model, &fine_cfg, &w)?;
    let (scratch, _) = finetune_segmentation(None, &data.finetune, &cfg.model, &fine_cfg, &w)?;
    let run = PairedRun {
        seed,
        pretrained_miou: eval_miou(&tuned, &data.eval)?,
        scratch_miou: eval_miou(&scratch, &data.eval)?,
        pretrain_trace,
    };
    info!(
        "seed {seed}: pre-trained {:.4}, scratch {:.4}, gain {:+.2} points",
        run.pretrained_miou,
        run.scratch_miou,
        run.gain()
    );
    Ok(run)
}

/// Median of the per-seed gains, in mIoU points.
pub fn median_gain(runs: &[PairedRun]) -> f64 {
    let mut g: Vec<f64> = runs.iter().map(PairedRun::gain).collect();
    g.sort_by(f64::total_cmp);
    match g.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => g[n / 2],
        n => 0.5 * (g[n / 2 - 1] + g[n / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.data.n_pretrain = 3;
        cfg.data.n_finetune = 2;
        cfg.data.n_eval = 2;
        cfg.data.grid = GridSpec::centered(16, 16, 2.0, -2.0, 4.0, 15);
        cfg.data.source_beams = BeamSpec::new(16, 3.0, -25.0, 180).unwrap();
        cfg.data.target_beams = vec![BeamSpec::new(8, 3.0, -25.0, 180).unwrap()];
        cfg.pretrain.epochs = 1;
        cfg.finetune.epochs = 1;
        cfg.model.embed_channels = 4;
        cfg.model.encoder_channels = [4, 4];
        cfg.model.decoder_channels = [4, 4, 4];
        cfg
    }

    #[test]
    fn config_round_trip_and_unknown_keys() {
        let cfg = PipelineConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"data": {"grid": {"hh": 1}}}"#).is_err());
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_json_keeps_pipeline_defaults() {
        let cfg = PipelineConfig::from_json(br#"{"pretrain": {"epochs": 2}, "seed": 4}"#).unwrap();
        let mut want = PipelineConfig::default();
        want.pretrain.epochs = 2;
        want.seed = 4;
        assert_eq!(cfg, want);
        let err = PipelineConfig::from_json(br#"{"finetune": {"epocs": 2}}"#).unwrap_err();
        assert!(err.to_string().contains("finetune.epocs"), "{err}");
        assert!(PipelineConfig::from_json(br#"{"loss_weights": null}"#).is_ok());
    }

    #[test]
    fn mismatched_classes_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.model.n_cls = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.data.grid.h = 30;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let cfg = micro();
        let a = simulate(&cfg.data, 1, Split::Finetune, 0).unwrap();
        assert_eq!(a, simulate(&cfg.data, 1, Split::Finetune, 0).unwrap());
        let b = simulate(&cfg.data, 1, Split::Eval, 0).unwrap();
        assert_ne!(a.frames[0].boxes, b.frames[0].boxes);
    }

    #[test]
    fn tiny_paired_run_is_reproducible() {
        let cfg = micro();
        let data = Datasets::simulate(&cfg).unwrap();
        assert_eq!(data.pretrain.len(), 3);
        let a = paired_run(&cfg, &data, 0).unwrap();
        let b = paired_run(&cfg, &data, 0).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.scratch_miou));
    }

    #[test]
    fn grid_flip_commutes_with_voxelization() {
        use crate::augment::flip;
        use crate::occ::voxelize_bev;
        let cfg = micro();
        let seq = simulate(&cfg.data, 5, Split::Eval, 0).unwrap();
        let cloud = &seq.frames[0].cloud;
        let w = cfg.loss_weights().unwrap();
        let spec = &cfg.data.grid;
        let base = voxelize_bev(cloud, spec, &w).unwrap();
        assert!(base.nonzero_count() > 0);
        for axis in [FlipAxis::X, FlipAxis::Y] {
            let (flipped, _) = flip(cloud, &[], axis);
            let direct = voxelize_bev(&flipped, spec, &w).unwrap();
            assert_eq!(direct, flip_grid(&base, axis).unwrap());
        }
    }

    #[test]
    fn median_of_gains() {
        let run = |p, s| PairedRun {
            seed: 0,
            pretrained_miou: p,
            scratch_miou: s,
            pretrain_trace: LossTrace::default(),
        };
        let runs = [run(0.5, 0.4), run(0.5, 0.5), run(0.3, 0.5)];
        assert!((median_gain(&runs) - 0.0).abs() < 1e-12);
        assert!((median_gain(&runs[..2]) - 5.0).abs() < 1e-9);
    }
}
