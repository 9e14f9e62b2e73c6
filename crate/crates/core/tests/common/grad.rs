//! Central-difference gradient checks that skip coordinates whose step
//! crosses a kink of a piecewise-smooth function.

use occspot_core::learn::{Field, ModelParams};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Default)]
pub struct Check {
    /// ‖analytic − numeric‖ / ‖numeric‖ over the checked coordinates.
    pub rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// `f` returns the value and a signature of the smooth piece containing
/// its argument; a coordinate is skipped when either probe lands on a
/// different piece than `x`.
pub fn check<S: PartialEq>(x: &[f64], analytic: &[f64], coords: &[usize], f: impl Fn(&[f64]) -> (f64, S)) -> Check {
    let (_, base) = f(x);
    let mut probe = x.to_vec();
    let (mut num2, mut diff2) = (0.0, 0.0);
    let mut out = Check::default();
    for &i in coords {
        probe[i] = x[i] + STEP;
        let (fp, sp) = f(&probe);
        probe[i] = x[i] - STEP;
        let (fm, sm) = f(&probe);
        probe[i] = x[i];
        if sp != base || sm != base {
            out.skipped += 1;
            continue;
        }
        let n = (fp - fm) / (2.0 * STEP);
        num2 += n * n;
        diff2 += (analytic[i] - n).powi(2);
        out.checked += 1;
    }
    out.rel_err = if num2 > 0.0 {
        (diff2 / num2).sqrt()
    } else {
        diff2.sqrt()
    };
    out
}

/// Directional version: compares ⟨∇f, v⟩ with the central difference along
/// each direction, aggregated over all directions.
pub fn check_directions<S: PartialEq>(
    x: &[f64],
    analytic: &[f64],
    directions: &[Vec<f64>],
    f: impl Fn(&[f64]) -> (f64, S),
) -> Check {
    let (_, base) = f(x);
    let (mut num2, mut diff2) = (0.0, 0.0);
    let mut out = Check::default();
    for v in directions {
        let at = |s: f64| -> Vec<f64> { x.iter().zip(v).map(|(a, b)| a + s * b).collect() };
        let (fp, sp) = f(&at(STEP));
        let (fm, sm) = f(&at(-STEP));
        if sp != base || sm != base {
            out.skipped += 1;
            continue;
        }
        let n = (fp - fm) / (2.0 * STEP);
        let a: f64 = analytic.iter().zip(v).map(|(g, d)| g * d).sum();
        num2 += n * n;
        diff2 += (a - n).powi(2);
        out.checked += 1;
    }
    out.rel_err = if num2 > 0.0 {
        (diff2 / num2).sqrt()
    } else {
        diff2.sqrt()
    };
    out
}

pub fn flatten(p: &ModelParams) -> Vec<f64> {
    p.tensors().into_iter().flatten().copied().collect()
}

pub fn unflatten(template: &ModelParams, flat: &[f64]) -> ModelParams {
    let mut p = template.clone();
    let mut k = 0;
    for t in p.tensors_mut() {
        let n = t.len();
        t.copy_from_slice(&flat[k..k + n]);
        k += n;
    }
    p
}

pub fn field_like(f: &Field, data: &[f64]) -> Field {
    Field::from_vec(f.h(), f.w(), f.channels(), data.to_vec()).unwrap()
}

use nalgebra::Vector3;
use occspot_core::balance::LossWeights;
use occspot_core::cloud::PointCloud;
use occspot_core::learn::{
    lovasz_sort_pattern, softmax_field, total_loss, LovaszClasses, ModelConfig, PillarInput, Target,
};
use rand::Rng;

pub fn random_field(rng: &mut impl Rng, h: usize, w: usize, c: usize, scale: f64) -> Field {
    Field::from_vec(
        h,
        w,
        c,
        (0..h * w * c).map(|_| scale * rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_labels(rng: &mut impl Rng, n: usize, n_cls: u8) -> Vec<u8> {
    (0..n).map(|_| rng.gen_range(0..=n_cls)).collect()
}

/// Points scattered over a centred grid of `n` cells of 1 m, z in [−2, 4].
pub fn random_cloud(rng: &mut impl Rng, n_points: usize, extent: f64) -> PointCloud {
    let mut c = PointCloud::new(1);
    for _ in 0..n_points {
        let p = Vector3::new(
            rng.gen_range(-extent..extent),
            rng.gen_range(-extent..extent),
            rng.gen_range(-2.0..4.0),
        );
        c.push(p, &[rng.gen_range(0.0..1.0)]).unwrap();
    }
    c
}

/// Narrow model used for the end-to-end checks.
pub fn narrow_config(n_cls: u8) -> ModelConfig {
    ModelConfig {
        n_cls,
        point_features: 1,
        embed_channels: 4,
        encoder_channels: [4, 4],
        decoder_channels: [4, 4, 4],
        lambda: 1.0,
    }
}

/// Give every bias a random value so no layer is trivially centred.
pub fn randomize_biases(p: &mut ModelParams, rng: &mut impl Rng) {
    for b in [&mut p.embed.bias, &mut p.head.bias]
        .into_iter()
        .chain(p.encoder.iter_mut().map(|c| &mut c.bias))
        .chain(p.decoder.iter_mut().map(|c| &mut c.bias))
    {
        for x in b.iter_mut() {
            *x = rng.gen_range(-0.3..0.3);
        }
    }
}

/// Total loss of the full model as a function of its flattened parameters,
/// with the rectifier and sort patterns as the piece signature.
pub fn model_loss(
    template: &ModelParams,
    input: &PillarInput,
    labels: &[u8],
    weights: &LossWeights,
    flat: &[f64],
) -> (f64, (Vec<bool>, Vec<bool>)) {
    let p = unflatten(template, flat);
    let acts = p.forward(input).unwrap();
    let probs = softmax_field(&acts.logits).unwrap();
    let t = Target::from(labels);
    let loss = total_loss(&probs, t, weights, p.config.lambda, LovaszClasses::Present).unwrap();
    let pattern = lovasz_sort_pattern(&probs, t, LovaszClasses::Present).unwrap();
    (loss.loss, (acts.relu_pattern(), pattern))
}
