//! Class balancing: square-root frame re-sampling weights and per-class loss
//! weights.

use std::collections::BTreeMap;

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::cloud::BoxLabel;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::schema;

pub const W_FOREGROUND: f64 = 2.0;
pub const W_BACKGROUND: f64 = 1.0;
pub const W_EMPTY: f64 = 0.01;

/// Foreground instance counts of one frame, keyed by class id.
pub type FrameSummary = BTreeMap<u8, u64>;

/// Count boxes per class.
pub fn summarize_boxes(boxes: &[BoxLabel]) -> FrameSummary {
    let mut s = FrameSummary::new();
    for b in boxes {
        *s.entry(b.class_id).or_default() += 1;
    }
    s
}

/// Dataset-wide instance counts over the foreground classes that occur.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub classes: Vec<u8>,
    pub counts: Vec<u64>,
    /// Foreground classes dropped because they never occur.
    pub excluded: Vec<u8>,
}

impl ClassStats {
    pub fn n_fg(&self) -> usize {
        self.classes.len()
    }
}

/// Sum per-class counts over frames, restricted to `foreground`. Classes with
/// a zero total are excluded (with a warning).
pub fn class_stats(frames: &[FrameSummary], foreground: &[u8]) -> Result<ClassStats> {
    let mut totals: BTreeMap<u8, u64> = foreground.iter().map(|&c| (c, 0)).collect();
    for f in frames {
        for (class, n) in f {
            if let Some(t) = totals.get_mut(class) {
                *t += n;
            }
        }
    }
    let (present, absent): (Vec<_>, Vec<_>) = totals.into_iter().partition(|&(_, n)| n > 0);
    if present.is_empty() {
        return Err(Error::invalid("no foreground instances in the dataset"));
    }
    let excluded: Vec<u8> = absent.into_iter().map(|(c, _)| c).collect();
    if !excluded.is_empty() {
        warn!("excluding foreground classes with zero instances: {excluded:?}");
    }
    Ok(ClassStats {
        classes: present.iter().map(|&(c, _)| c).collect(),
        counts: present.iter().map(|&(_, n)| n).collect(),
        excluded,
    })
}

/// Per-class frame sampling weights s_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    pub classes: Vec<u8>,
    pub s: Vec<f64>,
}

impl SamplingWeights {
    pub fn get(&self, class: u8) -> Option<f64> {
        self.classes.iter().position(|&c| c == class).map(|i| self.s[i])
    }

    pub fn min(&self) -> f64 {
        self.s.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// s_i = √(m / n_i) with m = 1/N_fg and n_i = N_i / Σ_j N_j.
pub fn sampling_weights(stats: &ClassStats) -> Result<SamplingWeights> {
    if stats.classes.len() != stats.counts.len() || stats.counts.contains(&0) {
        return Err(Error::invalid("class stats must pair each class with a positive count"));
    }
    let total: u64 = stats.counts.iter().sum();
    let m = 1.0 / stats.n_fg() as f64;
    let s = stats
        .counts
        .iter()
        .map(|&n| {
            let share = n as f64 / total as f64;
            (m / share).sqrt()
        })
        .collect();
    Ok(SamplingWeights {
        classes: stats.classes.clone(),
        s,
    })
}

/// Weight of each frame: the largest s_i among the foreground classes it
/// contains, or min_i s_i for frames without any.
pub fn frame_weights<P: AsRef<[u8]>>(presence: &[P], s: &SamplingWeights) -> Vec<f64> {
    let floor = s.min();
    presence
        .iter()
        .map(|classes| {
            classes
                .as_ref()
                .iter()
                .filter_map(|&c| s.get(c))
                .fold(None, |acc: Option<f64>, w| Some(acc.map_or(w, |a| a.max(w))))
                .unwrap_or(floor)
        })
        .collect()
}

/// `epoch_size` draws with replacement, P(i) ∝ weights[i].
pub fn resample_frames(weights: &[f64], epoch_size: usize, seed: u64) -> Result<Vec<usize>> {
    if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("frame weights must be positive and finite"));
    }
    if epoch_size == 0 {
        return Err(Error::invalid("epoch_size must be at least 1"));
    }
    let dist = WeightedIndex::new(weights).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::stream(seed, Stream::Sampler, 0);
    Ok((0..epoch_size).map(|_| dist.sample(&mut rng)).collect())
}

/// Loss weight per class, index 0 = empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossWeights(Vec<f64>);

impl LossWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("loss weights must be positive, with at least one class"));
        }
        Ok(Self(weights))
    }

    /// Default schema: foreground 2.0, background 1.0, empty 0.01.
    pub fn default_schema() -> Self {
        class_loss_weights(
            schema::DEFAULT_N_CLS,
            &schema::DEFAULT_FOREGROUND,
            &schema::default_background(),
        )
        .expect("default schema partitions the classes")
    }

    /// Unit weights for every class, including empty.
    pub fn uniform(n_cls: u8) -> Self {
        Self(vec![1.0; n_cls as usize + 1])
    }

    pub fn n_cls(&self) -> u8 {
        (self.0.len() - 1) as u8
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: u8) -> f64 {
        self.0[class as usize]
    }

    /// Voting priority: larger weight wins, then the smaller class id.
    /// Returns true when `a` beats `b` in a tie.
    pub fn tie_prefers(&self, a: u8, b: u8) -> bool {
        let (wa, wb) = (self.get(a), self.get(b));
        wa > wb || (wa == wb && a < b)
    }
}

/// Assign w_fg to `foreground`, w_bg to `background` and w_empty to class 0.
/// The two sets must partition 1..=n_cls.
pub fn class_loss_weights(n_cls: u8, foreground: &[u8], background: &[u8]) -> Result<LossWeights> {
    if n_cls == 0 {
        return Err(Error::invalid("n_cls must be at least 1"));
    }
    let mut w = vec![None; n_cls as usize + 1];
    w[0] = Some(W_EMPTY);
    for (set, value) in [(foreground, W_FOREGROUND), (background, W_BACKGROUND)] {
        for &c in set {
            if c == 0 || c > n_cls {
                return Err(Error::invalid(format!("class {c} outside [1, {n_cls}]")));
            }
            if w[c as usize].replace(value).is_some() {
                return Err(Error::invalid(format!(
                    "class {c} listed twice in the foreground/background sets"
                )));
            }
        }
    }
    let missing: Vec<usize> = (1..w.len()).filter(|&c| w[c].is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "classes {missing:?} are in neither the foreground nor the background set"
        )));
    }
    LossWeights::new(w.into_iter().map(Option::unwrap).collect())
}
