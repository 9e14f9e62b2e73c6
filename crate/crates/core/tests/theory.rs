use occspot_core::rng::{self, Stream};
use occspot_core::theory::*;
use proptest::prelude::*;
use rand::Rng;

/// Neumaier-compensated sum.
fn csum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

fn h(p: &[f64]) -> f64 {
    -csum(p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()))
}

fn marg(p: &[f64], nz: usize, nt: usize) -> (Vec<f64>, Vec<f64>) {
    let pz = (0..nz).map(|z| csum((0..nt).map(|t| p[z * nt + t]))).collect();
    let pt = (0..nt).map(|t| csum((0..nz).map(|z| p[z * nt + t]))).collect();
    (pz, pt)
}

/// I(Z;T) = H(Z) + H(T) − H(Z,T), compensated.
fn mi_oracle(p: &[f64], nz: usize, nt: usize) -> f64 {
    let (pz, pt) = marg(p, nz, nt);
    h(&pz) + h(&pt) - h(p)
}

/// Best accuracy over every deterministic classifier Z → T.
fn brute_force_bayes_error(p: &[f64], nz: usize, nt: usize) -> f64 {
    let total = nt.pow(nz as u32);
    let mut best = 0.0f64;
    for code in 0..total {
        let mut c = code;
        let mut acc = 0.0;
        for z in 0..nz {
            acc += p[z * nt + c % nt];
            c /= nt;
        }
        best = best.max(acc);
    }
    1.0 - best
}

fn random_joint(r: &mut rng::Rng, max: usize) -> DiscreteJoint {
    let dims = vec![r.gen_range(1..=max), r.gen_range(1..=max)];
    DiscreteJoint::random(dims, 0.3, r)
}

#[test]
fn mi_matches_compensated_entropy_identity() {
    for i in 0..2000 {
        let mut r = rng::stream(11, Stream::Theory, i);
        let j = random_joint(&mut r, 8);
        let (nz, nt) = (j.dims()[0], j.dims()[1]);
        let mi = mutual_information(&j).unwrap();
        let oracle = mi_oracle(j.probs(), nz, nt);
        assert!((mi - oracle).abs() < 1e-12, "case {i}: {mi} vs {oracle}");
        let (pz, pt) = marg(j.probs(), nz, nt);
        assert!(mi >= -1e-12);
        assert!(mi <= h(&pz).min(h(&pt)) + 1e-12);
    }
}

#[test]
fn bayes_error_matches_classifier_enumeration() {
    for i in 0..500 {
        let mut r = rng::stream(12, Stream::Theory, i);
        let j = random_joint(&mut r, 4);
        let (nz, nt) = (j.dims()[0], j.dims()[1]);
        let got = bayes_error(&j).unwrap();
        let want = brute_force_bayes_error(j.probs(), nz, nt);
        assert!((got - want).abs() < 1e-12, "case {i}");
    }
}

#[test]
fn chain_rule_three_way() {
    // I(O,Z ; T) = I(Z;T) + I(O;T|Z)
    for i in 0..1000 {
        let mut r = rng::stream(13, Stream::Theory, i);
        let dims = vec![r.gen_range(1..=5), r.gen_range(1..=5), r.gen_range(1..=5)];
        let (no, nt, nz) = (dims[0], dims[1], dims[2]);
        let j = DiscreteJoint::random(dims, 0.2, &mut r);
        let cmi = conditional_mi(&j).unwrap();
        let zt = j.marginal(&[2, 1]).unwrap();
        let mut ozt = vec![0.0; no * nz * nt];
        for o in 0..no {
            for t in 0..nt {
                for z in 0..nz {
                    ozt[(o * nz + z) * nt + t] = j.probs()[(o * nt + t) * nz + z];
                }
            }
        }
        let joint = mi_oracle(&ozt, no * nz, nt);
        let lhs = mutual_information(&zt).unwrap() + cmi;
        assert!((lhs - joint).abs() < 1e-12, "case {i}: {lhs} vs {joint}");
        assert!(cmi >= -1e-12);
    }
}

#[test]
fn bound_holds_and_is_tight_on_uniform_noise() {
    // Z independent of uniform T over K values: P_e = 1 − 1/K = bound.
    for k in 1..=8usize {
        let j = DiscreteJoint::new(vec![3, k], vec![1.0 / (3 * k) as f64; 3 * k]).unwrap();
        let rep = check_bayes_bound(&j).unwrap();
        assert!((rep.bayes_error - (1.0 - 1.0 / k as f64)).abs() < 1e-12);
        assert!(rep.slack.abs() < 1e-12);
    }
}

#[test]
fn garbling_never_helps() {
    for i in 0..1000 {
        let mut r = rng::stream(14, Stream::Theory, i);
        let j = random_joint(&mut r, 8);
        let nz = j.dims()[0];
        let g: Vec<usize> = (0..nz).map(|_| r.gen_range(0..nz)).collect();
        let coarse = push_forward(&j, &g).unwrap();
        let mi = mutual_information(&j).unwrap();
        assert!(mutual_information(&coarse).unwrap() <= mi + 1e-12);
        assert!(bayes_error(&coarse).unwrap() + 1e-12 >= bayes_error(&j).unwrap());
    }
}

#[test]
fn sweeps_are_reproducible() {
    let a = run_sweeps(500, 3).unwrap();
    assert!(a.all_hold());
    assert_eq!(a, run_sweeps(500, 3).unwrap());
}

proptest! {
    #[test]
    fn lemma_identity_on_arbitrary_maps(
        seed in 0u64..1_000_000,
        a in proptest::collection::vec(0usize..4, 6),
        b in proptest::collection::vec(0usize..4, 6),
    ) {
        let mut r = rng::stream(seed, Stream::Theory, 0);
        let j = DiscreteJoint::random(vec![6, 3], 0.2, &mut r);
        let rep = lemma1_decomposition(&j, &a, &b).unwrap();
        prop_assert!(rep.residual <= 1e-12);
    }
}
