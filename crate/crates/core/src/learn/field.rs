use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense `h × w × c` array, channel-last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

/// Encoder output.
pub type BevFeatures = Field;

impl Field {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::shape(format!("{} values for a {h}×{w}×{c} field", data.len())));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn n_cells(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Channel vector of cell `i` (row-major cell index).
    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn cell_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    /// Index of the largest channel per cell; the lowest index wins ties.
    pub fn argmax(&self) -> Vec<u8> {
        (0..self.n_cells())
            .map(|i| {
                let v = self.cell(i);
                let mut best = 0;
                for (k, &x) in v.iter().enumerate() {
                    if x > v[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect()
    }

    fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(Error::Numerical(format!(
                "{what}: non-finite value at cell {} channel {}",
                i / self.c,
                i % self.c
            ))),
            None => Ok(()),
        }
    }
}

/// Per-cell softmax over channels, shifted by the cell maximum.
pub fn softmax_field(logits: &Field) -> Result<Field> {
    logits.check_finite("softmax input")?;
    let mut out = logits.clone();
    for i in 0..out.n_cells() {
        let v = out.cell_mut(i);
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in v.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        for x in v.iter_mut() {
            *x /= z;
        }
    }
    Ok(out)
}

/// Pull a gradient w.r.t. probabilities back through the softmax.
pub fn softmax_backward(probs: &Field, grad_probs: &Field) -> Field {
    let mut out = grad_probs.clone();
    for i in 0..probs.n_cells() {
        let p = probs.cell(i);
        let g = out.cell_mut(i);
        let dot: f64 = p.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for (gk, pk) in g.iter_mut().zip(p) {
            *gk = pk * (*gk - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_uniform() {
        let f = Field::from_vec(2, 2, 4, vec![0.7; 16]).unwrap();
        let p = softmax_field(&f).unwrap();
        assert!(p.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn shift_invariance_and_normalization() {
        let data: Vec<f64> = (0..48).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.9).collect();
        let f = Field::from_vec(4, 4, 3, data.clone()).unwrap();
        let shifted = Field::from_vec(
            4,
            4,
            3,
            data.iter()
                .enumerate()
                .map(|(i, x)| x + (i / 3) as f64 * 100.0)
                .collect(),
        )
        .unwrap();
        let a = softmax_field(&f).unwrap();
        let b = softmax_field(&shifted).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
        for i in 0..16 {
            assert!((a.cell(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn nan_is_rejected() {
        let f = Field::from_vec(1, 1, 2, vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(softmax_field(&f), Err(Error::Numerical(_))));
    }

    #[test]
    fn huge_logits_stay_finite() {
        let f = Field::from_vec(1, 1, 3, vec![1000.0, -1000.0, 999.0]).unwrap();
        let p = softmax_field(&f).unwrap();
        assert!(p.data().iter().all(|x| x.is_finite()));
        assert!((p.data()[0] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    }
}
