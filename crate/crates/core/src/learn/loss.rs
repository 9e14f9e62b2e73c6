use serde::{Deserialize, Serialize};

use super::field::{softmax_backward, Field};
use crate::balance::LossWeights;
use crate::occ::OccupancyGrid;
use crate::{Error, Result};

/// Ground-truth labels per cell, optionally restricted to a subset of cells.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub labels: &'a [u8],
    pub mask: Option<&'a [bool]>,
}

impl<'a> Target<'a> {
    pub fn masked(labels: &'a [u8], mask: &'a [bool]) -> Self {
        Self {
            labels,
            mask: Some(mask),
        }
    }

    fn active(&self, i: usize) -> bool {
        self.mask.is_none_or(|m| m[i])
    }

    fn check(&self, probs: &Field) -> Result<()> {
        if self.labels.len() != probs.n_cells() {
            return Err(Error::shape(format!(
                "{} labels for a {}×{} field",
                self.labels.len(),
                probs.h(),
                probs.w()
            )));
        }
        if let Some(m) = self.mask {
            if m.len() != self.labels.len() {
                return Err(Error::shape(format!(
                    "mask has {} cells, labels {}",
                    m.len(),
                    self.labels.len()
                )));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= probs.channels()) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {} channels",
                probs.channels()
            )));
        }
        Ok(())
    }
}

impl<'a> From<&'a [u8]> for Target<'a> {
    fn from(labels: &'a [u8]) -> Self {
        Self { labels, mask: None }
    }
}

impl<'a> From<&'a Vec<u8>> for Target<'a> {
    fn from(labels: &'a Vec<u8>) -> Self {
        Self { labels, mask: None }
    }
}

impl<'a> From<&'a OccupancyGrid> for Target<'a> {
    fn from(grid: &'a OccupancyGrid) -> Self {
        Self {
            labels: grid.labels(),
            mask: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient w.r.t. the logits.
    pub grad: Field,
}

/// Weighted mean cross entropy: Σ w[g]·(−ln p_g) / Σ w[g] over active cells.
pub fn weighted_ce<'a>(probs: &Field, gt: impl Into<Target<'a>>, weights: &LossWeights) -> Result<LossOutput> {
    let gt = gt.into();
    gt.check(probs)?;
    if weights.as_slice().len() != probs.channels() {
        return Err(Error::shape(format!(
            "{} loss weights for {} channels",
            weights.as_slice().len(),
            probs.channels()
        )));
    }
    let total: f64 = (0..probs.n_cells())
        .filter(|&i| gt.active(i))
        .map(|i| weights.get(gt.labels[i]))
        .sum();
    let mut grad = Field::zeros(probs.h(), probs.w(), probs.channels());
    if total == 0.0 {
        return Ok(LossOutput { loss: 0.0, grad });
    }
    let mut loss = 0.0;
    for i in (0..probs.n_cells()).filter(|&i| gt.active(i)) {
        let label = gt.labels[i] as usize;
        let scale = weights.get(label as u8) / total;
        let p = probs.cell(i);
        loss -= scale * p[label].max(f64::MIN_POSITIVE).ln();
        let g = grad.cell_mut(i);
        for (gk, pk) in g.iter_mut().zip(p) {
            *gk = scale * pk;
        }
        g[label] -= scale;
    }
    Ok(LossOutput { loss, grad })
}

/// Which classes enter the Lovász average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LovaszClasses {
    /// Classes occurring in the ground truth.
    #[default]
    Present,
    /// Every non-empty class.
    All,
}

#[derive(Debug, Clone)]
pub struct LovaszOutput {
    pub loss: f64,
    /// Loss of class `n` at index `n - 1`; `None` when it did not enter the mean.
    pub per_class: Vec<Option<f64>>,
    /// Gradient w.r.t. the probabilities.
    pub grad: Field,
}

/// Cells entering the loss: all of them, or the masked subset.
enum Cells {
    All(usize),
    Subset(Vec<usize>),
}

impl Cells {
    fn new(gt: &Target) -> Self {
        match gt.mask {
            None => Cells::All(gt.labels.len()),
            Some(m) => Cells::Subset((0..m.len()).filter(|&i| m[i]).collect()),
        }
    }

    fn len(&self) -> usize {
        match self {
            Cells::All(n) => *n,
            Cells::Subset(v) => v.len(),
        }
    }

    fn get(&self, k: usize) -> usize {
        match self {
            Cells::All(_) => k,
            Cells::Subset(v) => v[k],
        }
    }
}

/// Fill `keyed` with (error, position in `cells`) for class `n`, sorted by
/// descending error with ties in cell order; returns the foreground count.
fn sorted_errors(probs: &Field, labels: &[u8], cells: &Cells, n: usize, keyed: &mut Vec<(f64, usize)>) -> usize {
    let c = probs.channels();
    let data = probs.data();
    keyed.clear();
    let mut n_fg = 0;
    for k in 0..cells.len() {
        let i = cells.get(k);
        let p = data[i * c + n];
        if labels[i] as usize == n {
            n_fg += 1;
            keyed.push((1.0 - p, k));
        } else {
            keyed.push((p, k));
        }
    }
    keyed.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    n_fg
}

/// Flags of the non-empty classes entering the average.
fn lovasz_classes(gt: &Target, cells: &Cells, classes: LovaszClasses) -> [bool; 256] {
    let mut present = [classes == LovaszClasses::All; 256];
    present[0] = false;
    if classes == LovaszClasses::Present {
        for k in 0..cells.len() {
            present[gt.labels[cells.get(k)] as usize] = true;
        }
        present[0] = false;
    }
    present
}

/// Lovász-Softmax over the non-empty classes.
///
/// Per class, errors are `1 − p` on its cells and `p` elsewhere; sorted
/// descending, they are weighted by the increments of the Jaccard loss
/// along the sorted prefix and summed. The result is averaged over the
/// selected classes.
pub fn lovasz_softmax<'a>(probs: &Field, gt: impl Into<Target<'a>>, classes: LovaszClasses) -> Result<LovaszOutput> {
    let c = probs.channels();
    let mut per_class = vec![None; c.saturating_sub(1)];
    let mut grad = Field::zeros(probs.h(), probs.w(), c);
    let loss = lovasz_impl(probs, gt.into(), classes, Some((&mut per_class, grad.data_mut())))?;
    Ok(LovaszOutput { loss, per_class, grad })
}

/// The loss value of [`lovasz_softmax`] alone, without the gradient.
pub fn lovasz_loss<'a>(probs: &Field, gt: impl Into<Target<'a>>, classes: LovaszClasses) -> Result<f64> {
    lovasz_impl(probs, gt.into(), classes, None)
}

type LovaszSinks<'s> = (&'s mut [Option<f64>], &'s mut [f64]);

fn lovasz_impl(probs: &Field, gt: Target, classes: LovaszClasses, mut sinks: Option<LovaszSinks>) -> Result<f64> {
    gt.check(probs)?;
    let c = probs.channels();
    let cells = Cells::new(&gt);
    if c > 256 {
        return Err(Error::shape(format!("{c} channels exceed the u8 label range")));
    }
    let present = lovasz_classes(&gt, &cells, classes);
    let count = (1..c).filter(|&n| present[n]).count();
    if count == 0 || cells.len() == 0 {
        return Ok(0.0);
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut keyed = Vec::with_capacity(cells.len());
    for n in (1..c).filter(|&n| present[n]) {
        let n_fg = sorted_errors(probs, gt.labels, &cells, n, &mut keyed);
        let (mut fg_seen, mut bg_seen) = (0usize, 0usize);
        let mut prev = 0.0;
        let mut class_loss = 0.0;
        for &(e, k) in keyed.iter() {
            let cell = cells.get(k);
            let is_fg = gt.labels[cell] as usize == n;
            if is_fg {
                fg_seen += 1;
            } else {
                bg_seen += 1;
            }
            let jac = 1.0 - (n_fg - fg_seen) as f64 / (n_fg + bg_seen) as f64;
            let step = jac - prev;
            prev = jac;
            class_loss += e * step;
            if let Some((_, g)) = sinks.as_mut() {
                g[cell * c + n] += if is_fg { -scale * step } else { scale * step };
            }
        }
        if let Some((per_class, _)) = sinks.as_mut() {
            per_class[n - 1] = Some(class_loss);
        }
        loss += scale * class_loss;
    }
    Ok(loss)
}

/// Foreground flags in sorted-error order for every selected class. The
/// Lovász term is linear in the probabilities wherever this pattern is
/// constant.
pub fn lovasz_sort_pattern<'a>(probs: &Field, gt: impl Into<Target<'a>>, classes: LovaszClasses) -> Result<Vec<bool>> {
    let gt = gt.into();
    gt.check(probs)?;
    let cells = Cells::new(&gt);
    let present = lovasz_classes(&gt, &cells, classes);
    let mut keyed = Vec::with_capacity(cells.len());
    let mut out = Vec::new();
    for n in (1..probs.channels()).filter(|&n| present[n]) {
        sorted_errors(probs, gt.labels, &cells, n, &mut keyed);
        out.extend(keyed.iter().map(|&(_, k)| gt.labels[cells.get(k)] as usize == n));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub loss: f64,
    pub ce: f64,
    pub lovasz: f64,
    /// Gradient w.r.t. the logits.
    pub grad: Field,
}

/// `ce + λ·lovasz`, with the gradient taken w.r.t. the logits.
pub fn total_loss<'a>(
    probs: &Field,
    gt: impl Into<Target<'a>>,
    weights: &LossWeights,
    lambda: f64,
    classes: LovaszClasses,
) -> Result<TotalLoss> {
    let gt = gt.into();
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "loss mix coefficient must be ≥ 0, got {lambda}"
        )));
    }
    let ce = weighted_ce(probs, gt, weights)?;
    let mut grad = ce.grad;
    if lambda == 0.0 {
        return Ok(TotalLoss {
            loss: ce.loss,
            ce: ce.loss,
            lovasz: 0.0,
            grad,
        });
    }
    let lov = lovasz_softmax(probs, gt, classes)?;
    let lov_grad = softmax_backward(probs, &lov.grad);
    for (g, l) in grad.data_mut().iter_mut().zip(lov_grad.data()) {
        *g += lambda * l;
    }
    Ok(TotalLoss {
        loss: ce.loss + lambda * lov.loss,
        ce: ce.loss,
        lovasz: lov.loss,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::field::softmax_field;

    fn one_hot(labels: &[u8], c: usize) -> Field {
        let mut f = Field::zeros(1, labels.len(), c);
        for (i, &l) in labels.iter().enumerate() {
            f.cell_mut(i)[l as usize] = 1.0;
        }
        f
    }

    #[test]
    fn loss_only_path_matches_full_output() {
        use rand::Rng;
        let mut r = crate::rng::stream(0, crate::rng::Stream::Theory, 11);
        for _ in 0..200 {
            let (h, w, c) = (r.gen_range(1..6), r.gen_range(1..6), r.gen_range(2..6));
            let mut logits = Field::zeros(h, w, c);
            logits.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-3.0..3.0));
            let p = softmax_field(&logits).unwrap();
            let labels: Vec<u8> = (0..h * w).map(|_| r.gen_range(0..c as u8)).collect();
            for classes in [LovaszClasses::Present, LovaszClasses::All] {
                let full = lovasz_softmax(&p, &labels, classes).unwrap().loss;
                assert_eq!(full.to_bits(), lovasz_loss(&p, &labels, classes).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let labels = [0u8, 3, 3, 15, 1, 7];
        let p = one_hot(&labels, 16);
        let w = LossWeights::default_schema();
        assert_eq!(weighted_ce(&p, &labels[..], &w).unwrap().loss, 0.0);
        for mode in [LovaszClasses::Present, LovaszClasses::All] {
            assert_eq!(lovasz_softmax(&p, &labels[..], mode).unwrap().loss, 0.0);
        }
        assert_eq!(
            total_loss(&p, &labels[..], &w, 1.0, LovaszClasses::Present)
                .unwrap()
                .loss,
            0.0
        );
    }

    #[test]
    fn uniform_prediction_costs_log_classes() {
        let labels: Vec<u8> = (0..36).map(|i| (i * 7 % 16) as u8).collect();
        let p = Field::from_vec(6, 6, 16, vec![1.0 / 16.0; 36 * 16]).unwrap();
        let ce = weighted_ce(&p, &labels, &LossWeights::default_schema()).unwrap();
        assert!((ce.loss - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_cell_lovasz_is_one_minus_p() {
        for p in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let probs = Field::from_vec(1, 1, 3, vec![0.0, 1.0 - p, p]).unwrap();
            let out = lovasz_softmax(&probs, &[2u8][..], LovaszClasses::Present).unwrap();
            assert!((out.per_class[1].unwrap() - (1.0 - p)).abs() < 1e-15);
            assert_eq!(out.per_class[0], None);
        }
    }

    #[test]
    fn lambda_zero_is_plain_ce() {
        let logits = Field::from_vec(2, 2, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let p = softmax_field(&logits).unwrap();
        let labels = [0u8, 1, 2, 1];
        let w = LossWeights::new(vec![0.01, 2.0, 1.0]).unwrap();
        let ce = weighted_ce(&p, &labels[..], &w).unwrap();
        let total = total_loss(&p, &labels[..], &w, 0.0, LovaszClasses::Present).unwrap();
        assert_eq!(ce.loss, total.loss);
        assert_eq!(ce.grad, total.grad);
    }

    #[test]
    fn masked_cells_are_ignored() {
        let p = Field::from_vec(1, 2, 2, vec![0.3, 0.7, 0.9, 0.1]).unwrap();
        let labels = [1u8, 1];
        let mask = [true, false];
        let w = LossWeights::new(vec![1.0, 1.0]).unwrap();
        let ce = weighted_ce(&p, Target::masked(&labels, &mask), &w).unwrap();
        assert!((ce.loss + 0.7f64.ln()).abs() < 1e-15);
        assert!(ce.grad.cell(1).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let p = Field::zeros(1, 1, 2);
        assert!(lovasz_softmax(&p, &[2u8][..], LovaszClasses::All).is_err());
        assert!(weighted_ce(&p, &[0u8, 0][..], &LossWeights::uniform(1)).is_err());
    }
}
