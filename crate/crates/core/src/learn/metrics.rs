use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Matrix over classes `0..=n_cls`.
    pub fn new(n_cls: u8) -> Self {
        let n = n_cls as usize + 1;
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self> {
        if n == 0 || counts.len() != n * n {
            return Err(Error::shape(format!("{} counts for a {n}×{n} matrix", counts.len())));
        }
        Ok(Self { n, counts })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n + pred]
    }

    pub fn add(&mut self, gt: u8, pred: u8) {
        self.counts[gt as usize * self.n + pred as usize] += 1;
    }

    /// Tally `gt`/`pred` pairs, restricted to `mask` when given.
    pub fn update(&mut self, gt: &[u8], pred: &[u8], mask: Option<&[bool]>) -> Result<()> {
        if gt.len() != pred.len() || mask.is_some_and(|m| m.len() != gt.len()) {
            return Err(Error::shape("label, prediction and mask lengths differ"));
        }
        if let Some(&bad) = gt.iter().chain(pred).find(|&&l| l as usize >= self.n) {
            return Err(Error::invalid(format!("label {bad} outside the confusion matrix")));
        }
        for i in 0..gt.len() {
            if mask.is_none_or(|m| m[i]) {
                self.add(gt[i], pred[i]);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(Error::shape("confusion matrices of different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// IoU of each class; `None` where it never occurs in either labels or
    /// predictions, or is the ignored empty class.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the classes that have an IoU; 0 when none do.
    pub miou: f64,
}

/// IoU_i = TP_i / (TP_i + FP_i + FN_i), averaged over classes that occur.
pub fn miou(cm: &ConfusionMatrix, ignore_empty: bool) -> MiouReport {
    let n = cm.size();
    let per_class: Vec<Option<f64>> = (0..n)
        .map(|i| {
            if ignore_empty && i == 0 {
                return None;
            }
            let tp = cm.get(i, i);
            let fn_: u64 = (0..n).map(|j| cm.get(i, j)).sum::<u64>() - tp;
            let fp: u64 = (0..n).map(|j| cm.get(j, i)).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    MiouReport { per_class, miou }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix::from_counts(3, vec![4, 0, 0, 0, 7, 0, 0, 0, 1]).unwrap();
        let r = miou(&cm, false);
        assert_eq!(r.miou, 1.0);
        assert!(r.per_class.iter().all(|&x| x == Some(1.0)));
    }

    #[test]
    fn two_class_hand_case() {
        // TP=(8,2), FP=(1,3), FN=(2,1): a third class soaks up the leftovers.
        let cm = ConfusionMatrix::from_counts(3, vec![8, 0, 2, 0, 2, 1, 1, 3, 0]).unwrap();
        let r = miou(&cm, false);
        assert!((r.per_class[0].unwrap() - 8.0 / 11.0).abs() < 1e-15);
        assert!((r.per_class[1].unwrap() - 2.0 / 6.0).abs() < 1e-15);
        let two: f64 = (8.0 / 11.0 + 1.0 / 3.0) / 2.0;
        assert!((two - 0.53030).abs() < 5e-6);
        assert_eq!(r.per_class[2], Some(0.0));
    }

    #[test]
    fn absent_class_is_excluded() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[1, 1, 2], &[1, 1, 2], None).unwrap();
        let r = miou(&cm, true);
        assert_eq!(r.per_class, vec![None, Some(1.0), Some(1.0), None]);
        assert_eq!(r.miou, 1.0);
    }

    #[test]
    fn permutation_invariant() {
        let counts: Vec<u64> = (0..16).map(|i| (i * 7 % 5) as u64).collect();
        let cm = ConfusionMatrix::from_counts(4, counts.clone()).unwrap();
        let perm = [2, 0, 3, 1];
        let mut permuted = vec![0; 16];
        for i in 0..4 {
            for j in 0..4 {
                permuted[perm[i] * 4 + perm[j]] = counts[i * 4 + j];
            }
        }
        let a = miou(&cm, false).miou;
        let b = miou(&ConfusionMatrix::from_counts(4, permuted).unwrap(), false).miou;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn mask_restricts_tally() {
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&[1, 2, 0], &[1, 1, 0], Some(&[true, false, false])).unwrap();
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.get(2, 1), 0);
        assert!(cm.update(&[3], &[0], None).is_err());
    }
}
