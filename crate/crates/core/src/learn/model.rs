use serde::{Deserialize, Serialize};

use super::field::{BevFeatures, Field};
use super::layers::{relu, relu_backward, Conv2d, ConvGrad, Linear};
use crate::cloud::PointCloud;
use crate::occ::GridSpec;
use crate::rng::{self, Stream};
use crate::schema::DEFAULT_N_CLS;
use crate::{Error, Result};

/// Offsets appended to every point's features before pillar pooling.
pub const OFFSET_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_cls: u8,
    /// Per-point feature count of the input clouds.
    pub point_features: usize,
    pub embed_channels: usize,
    pub encoder_channels: [usize; 2],
    pub decoder_channels: [usize; 3],
    /// Weight of the Lovász term in the total loss.
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_cls: DEFAULT_N_CLS,
            point_features: 1,
            embed_channels: 16,
            encoder_channels: [24, 32],
            decoder_channels: [32, 24, 16],
            lambda: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cls == 0 {
            return Err(Error::invalid("n_cls must be at least 1"));
        }
        let widths = [self.embed_channels]
            .into_iter()
            .chain(self.encoder_channels)
            .chain(self.decoder_channels);
        if widths.into_iter().any(|c| c == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be ≥ 0"));
        }
        Ok(())
    }

    pub fn output_channels(&self) -> usize {
        self.n_cls as usize + 1
    }

    fn encoder_matches(&self, other: &ModelConfig) -> bool {
        self.point_features == other.point_features
            && self.embed_channels == other.embed_channels
            && self.encoder_channels == other.encoder_channels
    }
}

/// Pillar embedding, two stride-2 convolutions, three transposed
/// convolutions with strides (2, 2, 1), and a per-cell linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub embed: Linear,
    pub encoder: Vec<Conv2d>,
    pub decoder: Vec<Conv2d>,
    pub head: Linear,
}

const DECODER_STRIDES: [usize; 3] = [2, 2, 1];

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeros(config);
        params.init_encoder(seed);
        params.init_decoder(seed);
        Ok(params)
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let [e1, e2] = config.encoder_channels;
        let [d1, d2, d3] = config.decoder_channels;
        Self {
            config: config.clone(),
            embed: Linear::zeros(config.point_features + OFFSET_FEATURES, config.embed_channels),
            encoder: vec![
                Conv2d::zeros(config.embed_channels, e1, 2, false),
                Conv2d::zeros(e1, e2, 2, false),
            ],
            decoder: vec![
                Conv2d::zeros(e2, d1, DECODER_STRIDES[0], true),
                Conv2d::zeros(d1, d2, DECODER_STRIDES[1], true),
                Conv2d::zeros(d2, d3, DECODER_STRIDES[2], true),
            ],
            head: Linear::zeros(d3, config.output_channels()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    fn init_encoder(&mut self, seed: u64) {
        let mut r = rng::stream(seed, Stream::Init, 0);
        let c = &self.config;
        self.embed = Linear::init(c.point_features + OFFSET_FEATURES, c.embed_channels, 3.0, &mut r);
        for conv in &mut self.encoder {
            *conv = Conv2d::init(conv.c_in, conv.c_out, conv.stride, false, &mut r);
        }
    }

    /// Fresh decoder and head drawn from `seed`; the encoder is untouched.
    pub fn init_decoder(&mut self, seed: u64) {
        let mut r = rng::stream(seed, Stream::Init, 1);
        for conv in &mut self.decoder {
            *conv = Conv2d::init(conv.c_in, conv.c_out, conv.stride, true, &mut r);
        }
        self.head = Linear::init(self.head.c_in, self.head.c_out, 1.0, &mut r);
    }

    /// Copy the encoder from `other`, which must have the same encoder shape.
    pub fn load_encoder(&mut self, other: &ModelParams) -> Result<()> {
        if !self.config.encoder_matches(&other.config) {
            return Err(Error::shape(format!(
                "checkpoint encoder ({} features, embed {}, convs {:?}) does not fit ({} features, embed {}, convs {:?})",
                other.config.point_features,
                other.config.embed_channels,
                other.config.encoder_channels,
                self.config.point_features,
                self.config.embed_channels,
                self.config.encoder_channels
            )));
        }
        self.embed = other.embed.clone();
        self.encoder = other.encoder.clone();
        Ok(())
    }

    /// Parameter tensors in a fixed order; the first [`ENCODER_TENSORS`]
    /// belong to the encoder.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.embed.weight, &self.embed.bias];
        for c in self.encoder.iter().chain(&self.decoder) {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.embed.weight, &mut self.embed.bias];
        for c in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn tensor_names() -> Vec<String> {
        let mut names = vec!["embed.weight".to_string(), "embed.bias".to_string()];
        for (prefix, n) in [("encoder", 2), ("decoder", 3)] {
            for i in 0..n {
                names.push(format!("{prefix}.{i}.weight"));
                names.push(format!("{prefix}.{i}.bias"));
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

pub const ENCODER_TENSORS: usize = 6;

/// Per-cell mean of point features and normalised offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarInput {
    pub features: Field,
    pub occupied: Vec<bool>,
}

impl PillarInput {
    /// Pool `cloud` into the cells of `spec`. Each point contributes its
    /// features followed by its x and y offsets from the cell centre (in
    /// cells) and its height relative to the middle of the z range (in
    /// z-range units). Points outside the grid or the z range are dropped.
    pub fn from_cloud(cloud: &PointCloud, spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let d = cloud.feature_dim() + OFFSET_FEATURES;
        let mut features = Field::zeros(spec.h, spec.w, d);
        let mut counts = vec![0usize; spec.n_cells()];
        let z_mid = 0.5 * (spec.z_min + spec.z_max);
        let z_span = spec.z_max - spec.z_min;
        for i in 0..cloud.len() {
            let p = &cloud.coords()[i];
            if !spec.z_in_range(p.z) {
                continue;
            }
            let Some(cell) = spec.cell_of(p.x, p.y) else {
                continue;
            };
            let (cx, cy) = spec.cell_center(cell / spec.w, cell % spec.w);
            let acc = features.cell_mut(cell);
            for (a, f) in acc.iter_mut().zip(cloud.point_features(i)) {
                *a += f;
            }
            let k = cloud.feature_dim();
            acc[k] += (p.x - cx) / spec.cell_size;
            acc[k + 1] += (p.y - cy) / spec.cell_size;
            acc[k + 2] += (p.z - z_mid) / z_span;
            counts[cell] += 1;
        }
        for (i, &n) in counts.iter().enumerate() {
            if n > 0 {
                for a in features.cell_mut(i) {
                    *a /= n as f64;
                }
            }
        }
        Ok(Self {
            features,
            occupied: counts.iter().map(|&n| n > 0).collect(),
        })
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub embedded: Field,
    /// Pre-activations of the two encoder and three decoder convolutions.
    pub pre: Vec<Field>,
    /// Their rectified outputs.
    pub post: Vec<Field>,
    pub logits: Field,
}

impl Activations {
    pub fn features(&self) -> &BevFeatures {
        &self.post[1]
    }

    /// Sign pattern of every rectifier input. The network is smooth in the
    /// parameters wherever this pattern is constant.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre
            .iter()
            .flat_map(|f| f.data().iter().map(|&x| x > 0.0))
            .collect()
    }
}

fn check_grid(h: usize, w: usize) -> Result<()> {
    if !h.is_multiple_of(4) || !w.is_multiple_of(4) || h == 0 || w == 0 {
        return Err(Error::shape(format!(
            "grid {h}×{w} must be a positive multiple of 4 on both sides"
        )));
    }
    Ok(())
}

impl ModelParams {
    fn embed_pillars(&self, input: &PillarInput) -> Result<Field> {
        let f = &input.features;
        if f.channels() != self.embed.c_in {
            return Err(Error::shape(format!(
                "model expects {} point features, cloud has {}",
                self.config.point_features,
                f.channels() - OFFSET_FEATURES
            )));
        }
        check_grid(f.h(), f.w())?;
        let mut out = Field::zeros(f.h(), f.w(), self.embed.c_out);
        for (i, _) in input.occupied.iter().enumerate().filter(|(_, &o)| o) {
            self.embed.apply(f.cell(i), out.cell_mut(i));
        }
        Ok(out)
    }

    fn run_convs(layers: &[Conv2d], mut x: Field, pre: &mut Vec<Field>, post: &mut Vec<Field>) -> Result<Field> {
        for layer in layers {
            let p = layer.forward(&x)?;
            x = relu(&p);
            pre.push(p);
            post.push(x.clone());
        }
        Ok(x)
    }

    pub fn forward(&self, input: &PillarInput) -> Result<Activations> {
        let embedded = self.embed_pillars(input)?;
        let mut pre = Vec::with_capacity(5);
        let mut post = Vec::with_capacity(5);
        let feats = Self::run_convs(&self.encoder, embedded.clone(), &mut pre, &mut post)?;
        let last = Self::run_convs(&self.decoder, feats, &mut pre, &mut post)?;
        let logits = self.head.forward(&last)?;
        Ok(Activations {
            embedded,
            pre,
            post,
            logits,
        })
    }

    /// Decoder pass from given BEV features. The returned activations hold
    /// only decoder entries in `pre`/`post`.
    pub fn forward_decoder(&self, features: &BevFeatures) -> Result<Activations> {
        if features.channels() != self.decoder[0].c_in {
            return Err(Error::shape(format!(
                "decoder expects {} channels, got {}",
                self.decoder[0].c_in,
                features.channels()
            )));
        }
        let mut pre = Vec::with_capacity(3);
        let mut post = Vec::with_capacity(3);
        let last = Self::run_convs(&self.decoder, features.clone(), &mut pre, &mut post)?;
        let logits = self.head.forward(&last)?;
        Ok(Activations {
            embedded: features.clone(),
            pre,
            post,
            logits,
        })
    }

    fn backward_convs(
        layers: &[Conv2d],
        inputs: &[&Field],
        pre: &[Field],
        mut g: Field,
        grads: &mut [Conv2d],
    ) -> Field {
        for k in (0..layers.len()).rev() {
            relu_backward(&pre[k], &mut g);
            let (gin, ConvGrad { weight, bias }) = layers[k].backward(inputs[k], &g);
            grads[k].weight = weight;
            grads[k].bias = bias;
            g = gin;
        }
        g
    }

    fn backward_head(&self, last: &Field, grad_logits: &Field, grads: &mut ModelParams) -> Field {
        let (g, ConvGrad { weight, bias }) = self.head.backward(last, grad_logits);
        grads.head.weight = weight;
        grads.head.bias = bias;
        g
    }

    /// Parameter gradients for a full forward pass, given dLoss/dlogits.
    pub fn backward(&self, input: &PillarInput, acts: &Activations, grad_logits: &Field) -> ModelParams {
        let mut grads = self.zeros_like();
        let g = self.backward_head(&acts.post[4], grad_logits, &mut grads);
        let dec_in = [&acts.post[1], &acts.post[2], &acts.post[3]];
        let g = Self::backward_convs(&self.decoder, &dec_in, &acts.pre[2..], g, &mut grads.decoder);
        let enc_in = [&acts.embedded, &acts.post[0]];
        let g = Self::backward_convs(&self.encoder, &enc_in, &acts.pre[..2], g, &mut grads.encoder);
        let mut embed_grad = ConvGrad {
            weight: vec![0.0; self.embed.weight.len()],
            bias: vec![0.0; self.embed.bias.len()],
        };
        for (i, _) in input.occupied.iter().enumerate().filter(|(_, &o)| o) {
            self.embed
                .accumulate(input.features.cell(i), g.cell(i), &mut embed_grad);
        }
        grads.embed.weight = embed_grad.weight;
        grads.embed.bias = embed_grad.bias;
        grads
    }

    /// Gradients of a decoder-only pass: (dLoss/dfeatures, parameter grads).
    pub fn backward_decoder(&self, acts: &Activations, grad_logits: &Field) -> (Field, ModelParams) {
        let mut grads = self.zeros_like();
        let g = self.backward_head(&acts.post[2], grad_logits, &mut grads);
        let dec_in = [&acts.embedded, &acts.post[0], &acts.post[1]];
        let g = Self::backward_convs(&self.decoder, &dec_in, &acts.pre, g, &mut grads.decoder);
        (g, grads)
    }
}

/// Dense BEV features of `cloud` on the grid of `spec`, at a quarter of its
/// resolution.
pub fn encoder_forward(cloud: &PointCloud, spec: &GridSpec, params: &ModelParams) -> Result<BevFeatures> {
    let input = PillarInput::from_cloud(cloud, spec)?;
    let embedded = params.embed_pillars(&input)?;
    let mut pre = Vec::new();
    let mut post = Vec::new();
    ModelParams::run_convs(&params.encoder, embedded, &mut pre, &mut post)
}

/// Per-cell logits over the empty class and the `n_cls` semantic classes.
pub fn decoder_forward(features: &BevFeatures, params: &ModelParams) -> Result<Field> {
    Ok(params.forward_decoder(features)?.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn small() -> ModelConfig {
        ModelConfig {
            n_cls: 3,
            point_features: 1,
            embed_channels: 3,
            encoder_channels: [4, 4],
            decoder_channels: [4, 3, 3],
            lambda: 1.0,
        }
    }

    #[test]
    fn output_matches_grid() {
        let params = ModelParams::init(&small(), 1).unwrap();
        for n in [4, 8, 12, 16, 32] {
            let spec = GridSpec::centered(n, n + 4, 0.5, -2.0, 4.0, 3);
            let mut cloud = PointCloud::new(1);
            cloud.push(Vector3::new(0.3, -0.2, 0.1), &[0.5]).unwrap();
            let input = PillarInput::from_cloud(&cloud, &spec).unwrap();
            let acts = params.forward(&input).unwrap();
            assert_eq!(
                (acts.logits.h(), acts.logits.w(), acts.logits.channels()),
                (n, n + 4, 4)
            );
            assert_eq!((acts.features().h(), acts.features().w()), (n / 4, (n + 4) / 4));
        }
        let spec = GridSpec::centered(6, 8, 0.5, -2.0, 4.0, 3);
        let input = PillarInput::from_cloud(&PointCloud::new(1), &spec).unwrap();
        assert!(matches!(params.forward(&input), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_logits() {
        let params = ModelParams::init(&small(), 2).unwrap();
        let f = Field::zeros(4, 4, 4);
        let logits = decoder_forward(&f, &params).unwrap();
        assert!(logits.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrong_feature_count_rejected() {
        let params = ModelParams::init(&small(), 3).unwrap();
        let spec = GridSpec::centered(8, 8, 0.5, -2.0, 4.0, 3);
        let mut cloud = PointCloud::new(2);
        cloud.push(Vector3::new(0.0, 0.0, 0.0), &[1.0, 2.0]).unwrap();
        assert!(encoder_forward(&cloud, &spec, &params).is_err());
    }

    #[test]
    fn encoder_transfer_checks_shape() {
        let a = ModelParams::init(&small(), 1).unwrap();
        let mut b = ModelParams::init(&small(), 2).unwrap();
        b.load_encoder(&a).unwrap();
        assert_eq!(a.embed, b.embed);
        assert_eq!(a.encoder, b.encoder);
        let mut wide = ModelParams::init(
            &ModelConfig {
                embed_channels: 5,
                ..small()
            },
            0,
        )
        .unwrap();
        assert!(matches!(wide.load_encoder(&a), Err(Error::Shape(_))));
    }

    #[test]
    fn tensor_order_is_stable() {
        let p = ModelParams::init(&small(), 0).unwrap();
        assert_eq!(p.tensors().len(), ModelParams::tensor_names().len());
        let enc: usize = p.tensors()[..ENCODER_TENSORS].iter().map(|t| t.len()).sum();
        assert_eq!(enc, 4 * 3 + 3 + 9 * 3 * 4 + 4 + 9 * 4 * 4 + 4);
    }
}
