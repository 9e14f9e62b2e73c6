//! Exact information quantities on small finite joint distributions, and
//! randomized sweeps checking the representation bounds on them.
//!
//! All logarithms are natural.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::{Error, Result};

const MASS_TOL: f64 = 1e-12;
/// Tolerance for the identities and inequalities checked by the sweeps.
pub const CHECK_TOL: f64 = 1e-12;

/// Probability tensor over the product of finite supports, row-major
/// (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    dims: Vec<usize>,
    p: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(dims: Vec<usize>, p: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::invalid(format!("support sizes must be positive, got {dims:?}")));
        }
        if dims.iter().product::<usize>() != p.len() {
            return Err(Error::shape(format!("{} entries for supports {dims:?}", p.len())));
        }
        if let Some(x) = p.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid(format!(
                "probability {x} is not a finite non-negative number"
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("total mass {total} differs from 1")));
        }
        Ok(Self { dims, p })
    }

    /// Normalise non-negative weights into a joint.
    pub fn from_weights(dims: Vec<usize>, w: Vec<f64>) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("weights must have positive finite total"));
        }
        Self::new(dims, w.into_iter().map(|x| x / total).collect())
    }

    /// Random joint: each entry is zero with probability `sparsity`,
    /// otherwise an Exp(1) draw, then normalised.
    pub fn random(dims: Vec<usize>, sparsity: f64, rng: &mut impl Rng) -> Self {
        let n: usize = dims.iter().product();
        loop {
            let w: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(sparsity) {
                        0.0
                    } else {
                        -(1.0 - rng.gen::<f64>()).ln()
                    }
                })
                .collect();
            if let Ok(j) = Self::from_weights(dims.clone(), w) {
                return j;
            }
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for k in (0..self.dims.len() - 1).rev() {
            s[k] = s[k + 1] * self.dims[k + 1];
        }
        s
    }

    /// Marginal over the listed axes, in the order given.
    pub fn marginal(&self, axes: &[usize]) -> Result<DiscreteJoint> {
        if axes.is_empty() || axes.iter().any(|&a| a >= self.dims.len()) {
            return Err(Error::invalid(format!(
                "bad marginal axes {axes:?} for {} axes",
                self.dims.len()
            )));
        }
        let strides = self.strides();
        let dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let mut out_strides = vec![1; axes.len()];
        for k in (0..axes.len() - 1).rev() {
            out_strides[k] = out_strides[k + 1] * dims[k + 1];
        }
        let mut p = vec![0.0; dims.iter().product()];
        for (flat, &v) in self.p.iter().enumerate() {
            let idx: usize = axes
                .iter()
                .zip(&out_strides)
                .map(|(&a, &s)| (flat / strides[a] % self.dims[a]) * s)
                .sum();
            p[idx] += v;
        }
        Ok(DiscreteJoint { dims, p })
    }

    fn expect_axes(&self, n: usize, what: &str) -> Result<()> {
        if self.dims.len() != n {
            return Err(Error::invalid(format!(
                "{what} needs a {n}-way joint, got {} axes",
                self.dims.len()
            )));
        }
        Ok(())
    }

    fn at2(&self, a: usize, b: usize) -> f64 {
        self.p[a * self.dims[1] + b]
    }
}

/// −Σ p ln p, with 0·ln 0 = 0.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::invalid(format!(
            "probability {x} is not a finite non-negative number"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::invalid(format!("total mass {total} differs from 1")));
    }
    Ok(-p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>())
}

/// I(Z; T) for a joint over (Z, T).
pub fn mutual_information(j: &DiscreteJoint) -> Result<f64> {
    j.expect_axes(2, "mutual information")?;
    let pz = j.marginal(&[0])?.p;
    let pt = j.marginal(&[1])?.p;
    let mut mi = 0.0;
    for (z, &a) in pz.iter().enumerate() {
        for (t, &b) in pt.iter().enumerate() {
            let v = j.at2(z, t);
            if v > 0.0 {
                mi += v * (v / (a * b)).ln();
            }
        }
    }
    Ok(mi)
}

/// I(O; T | Z) for a joint over (O, T, Z).
pub fn conditional_mi(j: &DiscreteJoint) -> Result<f64> {
    j.expect_axes(3, "conditional mutual information")?;
    let (no, nt, nz) = (j.dims[0], j.dims[1], j.dims[2]);
    let mut total = 0.0;
    for z in 0..nz {
        let slice: Vec<f64> = (0..no * nt).map(|k| j.p[k * nz + z]).collect();
        let pz: f64 = slice.iter().sum();
        if pz <= 0.0 {
            continue;
        }
        let cond = DiscreteJoint {
            dims: vec![no, nt],
            p: slice.iter().map(|x| x / pz).collect(),
        };
        total += pz * mutual_information(&cond)?;
    }
    Ok(total)
}

/// Error of the MAP predictor of T from Z: 1 − Σ_z max_t p(z, t).
pub fn bayes_error(j: &DiscreteJoint) -> Result<f64> {
    j.expect_axes(2, "Bayes error")?;
    let nt = j.dims[1];
    let hit: f64 = j.p.chunks(nt).map(|row| row.iter().copied().fold(0.0, f64::max)).sum();
    Ok((1.0 - hit).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub entropy_t: f64,
    pub mutual_information: f64,
    pub bayes_error: f64,
    /// 1 − exp(−H(T) + I(Z; T)).
    pub bound_value: f64,
    pub slack: f64,
    pub satisfied: bool,
}

/// Evaluate both sides of P_e ≤ 1 − exp(−H(T) + I(Z; T)).
pub fn check_bayes_bound(j: &DiscreteJoint) -> Result<BoundReport> {
    j.expect_axes(2, "Bayes bound")?;
    let entropy_t = entropy(&j.marginal(&[1])?.p)?;
    let mi = mutual_information(j)?;
    let pe = bayes_error(j)?;
    let bound_value = 1.0 - (-entropy_t + mi).exp();
    let slack = bound_value - pe;
    Ok(BoundReport {
        entropy_t,
        mutual_information: mi,
        bayes_error: pe,
        bound_value,
        slack,
        satisfied: slack >= -CHECK_TOL,
    })
}

fn check_map(map: &[usize], n: usize, what: &str) -> Result<usize> {
    if map.len() != n {
        return Err(Error::shape(format!(
            "{what} covers {} values, support has {n}",
            map.len()
        )));
    }
    Ok(map.iter().copied().max().unwrap_or(0) + 1)
}

/// Joint over (O, T, f(O)) from a joint over (O, T) and a deterministic map.
pub fn attach_representation(j: &DiscreteJoint, map: &[usize]) -> Result<DiscreteJoint> {
    j.expect_axes(2, "representation")?;
    let (no, nt) = (j.dims[0], j.dims[1]);
    let nz = check_map(map, no, "map")?;
    let mut p = vec![0.0; no * nt * nz];
    for o in 0..no {
        for t in 0..nt {
            p[(o * nt + t) * nz + map[o]] = j.at2(o, t);
        }
    }
    Ok(DiscreteJoint {
        dims: vec![no, nt, nz],
        p,
    })
}

/// Joint over (g(Z), T) for a deterministic map `g` on Z.
pub fn push_forward(j: &DiscreteJoint, g: &[usize]) -> Result<DiscreteJoint> {
    j.expect_axes(2, "push-forward")?;
    let (nz, nt) = (j.dims[0], j.dims[1]);
    let nzp = check_map(g, nz, "garbling")?;
    let mut p = vec![0.0; nzp * nt];
    for z in 0..nz {
        for t in 0..nt {
            p[g[z] * nt + t] += j.at2(z, t);
        }
    }
    Ok(DiscreteJoint { dims: vec![nzp, nt], p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    /// I(z_occ; T) − I(z_mae; T).
    pub lhs: f64,
    /// I(O; T | z_mae) − I(O; T | z_occ).
    pub rhs: f64,
    pub residual: f64,
    pub holds: bool,
}

/// Both sides of the information-gap decomposition for two representations
/// that are deterministic functions of the observation O.
pub fn lemma1_decomposition(j: &DiscreteJoint, f_occ: &[usize], f_mae: &[usize]) -> Result<Lemma1Report> {
    let occ = attach_representation(j, f_occ)?;
    let mae = attach_representation(j, f_mae)?;
    let lhs = mutual_information(&occ.marginal(&[2, 1])?)? - mutual_information(&mae.marginal(&[2, 1])?)?;
    let rhs = conditional_mi(&mae)? - conditional_mi(&occ)?;
    let residual = (lhs - rhs).abs();
    Ok(Lemma1Report {
        lhs,
        rhs,
        residual,
        holds: residual <= CHECK_TOL,
    })
}

/// Minimum expected squared error of predicting numeric T from Z:
/// Σ_z p(z)·Var(T | Z = z).
pub fn min_squared_risk(j: &DiscreteJoint, t_values: &[f64]) -> Result<f64> {
    j.expect_axes(2, "squared risk")?;
    if t_values.len() != j.dims[1] || t_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("task values must be finite numbers, one per T outcome"));
    }
    let mut risk = 0.0;
    for row in j.p.chunks(j.dims[1]) {
        let pz: f64 = row.iter().sum();
        if pz <= 0.0 {
            continue;
        }
        let mean: f64 = row.iter().zip(t_values).map(|(p, t)| p * t).sum::<f64>() / pz;
        risk += row
            .iter()
            .zip(t_values)
            .map(|(p, t)| p * (t - mean).powi(2))
            .sum::<f64>();
    }
    Ok(risk)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub risk: f64,
    pub risk_garbled: f64,
    pub bayes_error: f64,
    pub bayes_error_garbled: f64,
    pub mi: f64,
    pub mi_garbled: f64,
    /// Every quantity is at least as good for Z as for g(Z).
    pub holds: bool,
}

/// Compare Z with a deterministic coarsening g(Z) on squared risk, Bayes
/// error and mutual information with T.
pub fn risk_ordering(j: &DiscreteJoint, t_values: &[f64], g: &[usize]) -> Result<RiskReport> {
    let coarse = push_forward(j, g)?;
    let r = RiskReport {
        risk: min_squared_risk(j, t_values)?,
        risk_garbled: min_squared_risk(&coarse, t_values)?,
        bayes_error: bayes_error(j)?,
        bayes_error_garbled: bayes_error(&coarse)?,
        mi: mutual_information(j)?,
        mi_garbled: mutual_information(&coarse)?,
        holds: false,
    };
    let holds = r.risk <= r.risk_garbled + CHECK_TOL
        && r.bayes_error <= r.bayes_error_garbled + CHECK_TOL
        && r.mi + CHECK_TOL >= r.mi_garbled;
    Ok(RiskReport { holds, ..r })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cases: usize,
    /// Smallest slack of the checked inequality, or the negated largest
    /// residual for identities.
    pub worst_margin: f64,
    /// Case indices that violated the check.
    pub counterexamples: Vec<usize>,
}

fn sweep(n: usize, seed: u64, case: impl Fn(&mut rng::Rng) -> Result<f64> + Sync) -> Result<SweepSummary> {
    let margins: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| case(&mut rng::stream(seed, Stream::Theory, i as u64)))
        .collect::<Result<_>>()?;
    Ok(SweepSummary {
        cases: n,
        worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        counterexamples: (0..n).filter(|&i| margins[i] < -CHECK_TOL).collect(),
    })
}

fn random_dims(rng: &mut impl Rng, max: usize) -> usize {
    rng.gen_range(1..=max)
}

fn random_map(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let k = rng.gen_range(1..=n);
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

/// Bayes bound on `n` random joints up to 8×8.
pub fn bound_sweep(n: usize, seed: u64) -> Result<SweepSummary> {
    sweep(n, seed, |r| {
        let dims = vec![random_dims(r, 8), random_dims(r, 8)];
        let sparsity = [0.0, 0.3, 0.6][r.gen_range(0..3)];
        Ok(check_bayes_bound(&DiscreteJoint::random(dims, sparsity, r))?.slack)
    })
}

/// Information-gap identity on `n` random joints with |O| ≤ 8 and random
/// deterministic representation pairs.
pub fn lemma1_sweep(n: usize, seed: u64) -> Result<SweepSummary> {
    sweep(n, seed, |r| {
        let no = random_dims(r, 8);
        let j = DiscreteJoint::random(vec![no, random_dims(r, 6)], 0.2, r);
        let (a, b) = (random_map(r, no), random_map(r, no));
        Ok(-lemma1_decomposition(&j, &a, &b)?.residual)
    })
}

/// Risk, Bayes-error and information ordering on `n` random joints with
/// |Z| ≤ 8 and random garblings.
pub fn risk_sweep(n: usize, seed: u64) -> Result<SweepSummary> {
    sweep(n, seed, |r| {
        let nz = random_dims(r, 8);
        let nt = random_dims(r, 6);
        let j = DiscreteJoint::random(vec![nz, nt], 0.2, r);
        let t: Vec<f64> = (0..nt).map(|_| r.gen_range(-5.0..5.0)).collect();
        let rep = risk_ordering(&j, &t, &random_map(r, nz))?;
        let margin = (rep.risk_garbled - rep.risk)
            .min(rep.bayes_error_garbled - rep.bayes_error)
            .min(rep.mi - rep.mi_garbled);
        Ok(margin)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub seed: u64,
    pub bayes_bound: SweepSummary,
    pub lemma1: SweepSummary,
    pub risk_ordering: SweepSummary,
}

impl TheorySummary {
    pub fn all_hold(&self) -> bool {
        [&self.bayes_bound, &self.lemma1, &self.risk_ordering]
            .iter()
            .all(|s| s.counterexamples.is_empty())
    }
}

/// All three sweeps with `n` cases each.
pub fn run_sweeps(n: usize, seed: u64) -> Result<TheorySummary> {
    Ok(TheorySummary {
        seed,
        bayes_bound: bound_sweep(n, seed)?,
        lemma1: lemma1_sweep(n, rng::child_seed(seed, Stream::Theory, 1 << 40))?,
        risk_ordering: risk_sweep(n, rng::child_seed(seed, Stream::Theory, 1 << 41))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn identity(k: usize) -> DiscreteJoint {
        let mut p = vec![0.0; k * k];
        for i in 0..k {
            p[i * k + i] = 1.0 / k as f64;
        }
        DiscreteJoint::new(vec![k, k], p).unwrap()
    }

    #[test]
    fn entropy_cases() {
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.5, 0.25, 0.25]).unwrap() - 1.5 * LN_2).abs() < 1e-15);
        assert!(entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn mi_extremes() {
        let prod = DiscreteJoint::new(vec![2, 3], vec![0.1, 0.2, 0.2, 0.1, 0.2, 0.2]).unwrap();
        assert!(mutual_information(&prod).unwrap().abs() < 1e-12);
        assert!((mutual_information(&identity(5)).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bound_closed_forms() {
        let r = check_bayes_bound(&identity(4)).unwrap();
        assert!(r.bayes_error.abs() < 1e-15 && r.bound_value.abs() < 1e-12 && r.satisfied);
        let r = check_bayes_bound(&DiscreteJoint::new(vec![2, 2], vec![0.25; 4]).unwrap()).unwrap();
        assert!((r.bayes_error - 0.5).abs() < 1e-15);
        assert!((r.bound_value - 0.5).abs() < 1e-12);
        assert!(r.slack.abs() < 1e-12);
    }

    #[test]
    fn independent_bayes_error_is_marginal_map() {
        let pt = [0.2, 0.5, 0.3];
        let p: Vec<f64> = [0.4, 0.6].iter().flat_map(|a| pt.iter().map(move |b| a * b)).collect();
        let j = DiscreteJoint::new(vec![2, 3], p).unwrap();
        assert!((bayes_error(&j).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lemma1_extremes() {
        let mut r = rng::stream(1, Stream::Theory, 0);
        let j = DiscreteJoint::random(vec![5, 3], 0.0, &mut r);
        let id: Vec<usize> = (0..5).collect();
        let rep = lemma1_decomposition(&j, &id, &[0; 5]).unwrap();
        assert!((rep.lhs - mutual_information(&j).unwrap()).abs() < 1e-12);
        assert!(rep.holds);
        let same = lemma1_decomposition(&j, &[0, 1, 1, 2, 0], &[0, 1, 1, 2, 0]).unwrap();
        assert!(same.lhs.abs() < 1e-15 && same.rhs.abs() < 1e-12);
    }

    #[test]
    fn garbling_extremes() {
        let mut r = rng::stream(2, Stream::Theory, 0);
        let j = DiscreteJoint::random(vec![4, 3], 0.0, &mut r);
        let t = [1.0, -2.0, 0.5];
        let same = risk_ordering(&j, &t, &[0, 1, 2, 3]).unwrap();
        assert_eq!(same.risk, same.risk_garbled);
        let flat = risk_ordering(&j, &t, &[0; 4]).unwrap();
        let pt = j.marginal(&[1]).unwrap();
        let mean: f64 = pt.probs().iter().zip(&t).map(|(p, v)| p * v).sum();
        let var: f64 = pt.probs().iter().zip(&t).map(|(p, v)| p * (v - mean).powi(2)).sum();
        assert!((flat.risk_garbled - var).abs() < 1e-12);
        assert!(risk_ordering(&j, &[1.0, f64::NAN, 0.0], &[0; 4]).is_err());
    }

    #[test]
    fn marginal_order_follows_axes() {
        let j = DiscreteJoint::new(vec![2, 3], vec![0.1, 0.0, 0.2, 0.3, 0.15, 0.25]).unwrap();
        let t = j.marginal(&[1, 0]).unwrap();
        assert_eq!(t.dims(), &[3, 2]);
        assert_eq!(t.probs(), &[0.1, 0.3, 0.0, 0.15, 0.2, 0.25]);
    }

    #[test]
    fn invalid_joints_rejected() {
        assert!(DiscreteJoint::new(vec![2], vec![0.5, 0.6]).is_err());
        assert!(DiscreteJoint::new(vec![2, 0], vec![]).is_err());
        assert!(DiscreteJoint::new(vec![2], vec![1.5, -0.5]).is_err());
        assert!(mutual_information(&DiscreteJoint::new(vec![2], vec![0.5, 0.5]).unwrap()).is_err());
    }

    #[test]
    fn small_sweeps_hold() {
        let s = run_sweeps(200, 7).unwrap();
        assert!(s.all_hold(), "{s:?}");
        assert_eq!(s, run_sweeps(200, 7).unwrap());
    }
}
