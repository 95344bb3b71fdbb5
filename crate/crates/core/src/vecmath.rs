//! Dense `f64` vector primitives shared by the memory, losses and encoder.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A unit-L2-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVec(Vec<f64>);

impl FeatureVec {
    /// Wraps values that are already unit norm. Debug builds check the norm.
    pub fn from_unit(values: Vec<f64>) -> Self {
        debug_assert!((norm(&values) - 1.0).abs() <= 1e-9, "not a unit vector");
        FeatureVec(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVec {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A discrete probability vector over cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

pub fn dot(a: &FeatureVec, b: &FeatureVec) -> Result<f64> {
    dot_slices(a.as_slice(), b.as_slice())
}

pub fn dot_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    Ok(dot_unchecked(a, b))
}

pub fn l2_normalize(v: &[f64]) -> Result<FeatureVec> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("l2_normalize input".into()));
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(FeatureVec(v.iter().map(|x| x / n).collect()))
}

/// Vector-Jacobian product of `v -> v / |v|`.
///
/// The Jacobian is symmetric, so this is `(u - (z.u) z) / |v|` with `z = v / |v|`.
pub fn l2_normalize_jvp(v: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if v.len() != upstream.len() {
        return Err(Error::Dimension { expected: v.len(), got: upstream.len() });
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let radial: f64 = v.iter().zip(upstream).map(|(a, u)| a / n * u).sum();
    Ok(v
        .iter()
        .zip(upstream)
        .map(|(a, u)| (u - radial * a / n) / n)
        .collect())
}

/// `log(sum(exp(x)))` with the max shifted out; `-inf` for an empty slice.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

pub fn stable_softmax(logits: &[f64]) -> Result<ProbVec> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbVec(exps.into_iter().map(|e| e / total).collect()))
}

/// Descending order of `scores`; equal scores keep ascending index order.
pub fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn normalize_examples() {
        let z = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((z.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((z.as_slice()[1] - 0.8).abs() < 1e-15);

        let e = l2_normalize(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.as_slice(), &[1.0, 0.0, 0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_vec(&mut rng, 64);
        let z = l2_normalize(&v).unwrap();
        let mut sq = 0.0;
        for x in z.as_slice() {
            sq += x * x;
        }
        assert!((sq.sqrt() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(matches!(l2_normalize_jvp(&[0.0], &[1.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn jvp_examples() {
        assert_eq!(l2_normalize_jvp(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(l2_normalize_jvp(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    /// Central finite differences of `u . normalize(v)`.
    fn fd_jvp(v: &[f64], u: &[f64], h: f64) -> Vec<f64> {
        let f = |w: &[f64]| {
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter().zip(u).map(|(a, b)| a / n * b).sum::<f64>()
        };
        (0..v.len())
            .map(|i| {
                let mut p = v.to_vec();
                let mut m = v.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        diff / norm(a).max(norm(b)).max(1e-12)
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = random_vec(&mut rng, 16);
        let u = random_vec(&mut rng, 16);
        assert!(rel_err(&l2_normalize_jvp(&v, &u).unwrap(), &fd_jvp(&v, &u, 1e-6)) < 1e-6);
        for _ in 0..100 {
            let dim = rng.gen_range(2..32);
            let v = random_vec(&mut rng, dim);
            let u = random_vec(&mut rng, dim);
            assert!(rel_err(&l2_normalize_jvp(&v, &u).unwrap(), &fd_jvp(&v, &u, 1e-6)) <= 1e-5);
        }
    }

    #[test]
    fn dot_examples() {
        let a = FeatureVec::from_unit(vec![1.0, 0.0]);
        let b = FeatureVec::from_unit(vec![0.0, 1.0]);
        assert_eq!(dot(&a, &b).unwrap(), 0.0);
        assert_eq!(dot(&a, &a).unwrap(), 1.0);
        let c = FeatureVec::from_unit(vec![1.0, 0.0, 0.0]);
        assert!(matches!(dot(&a, &c), Err(Error::Dimension { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = l2_normalize(&random_vec(&mut rng, 64)).unwrap();
        let y = l2_normalize(&random_vec(&mut rng, 64)).unwrap();
        let mut naive = 0.0;
        for i in 0..64 {
            naive += x.as_slice()[i] * y.as_slice()[i];
        }
        let d = dot(&x, &y).unwrap();
        assert!((d - naive).abs() <= 1e-12);
        assert!(d.abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn softmax_examples() {
        for c in [-3.0, 0.0, 17.5] {
            let p = stable_softmax(&[c, c, c]).unwrap();
            for v in p.as_slice() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let p = stable_softmax(&[1.0, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((p.as_slice()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.as_slice()[0] - 0.73106).abs() < 1e-5);
        assert!((p.as_slice()[1] - 0.26894).abs() < 1e-5);

        let p = stable_softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.as_slice().iter().all(|x| x.is_finite()));
        assert!((p.as_slice()[0] - 1.0).abs() < 1e-15);

        assert!(matches!(stable_softmax(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn argsort_examples() {
        assert_eq!(argsort_desc(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(argsort_desc(&[0.5, 0.5]), vec![0, 1]);
        assert!(argsort_desc(&[]).is_empty());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // coarse values force plenty of ties
        let scores: Vec<f64> = (0..1000).map(|_| (rng.gen_range(0..50) as f64) / 10.0).collect();
        let mut reference: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
        // insertion sort as an independent comparison sort
        for i in 1..reference.len() {
            let mut j = i;
            while j > 0 && {
                let (sa, ia) = reference[j - 1];
                let (sb, ib) = reference[j];
                sa < sb || (sa == sb && ia > ib)
            } {
                reference.swap(j - 1, j);
                j -= 1;
            }
        }
        let expected: Vec<usize> = reference.into_iter().map(|(_, i)| i).collect();
        assert_eq!(argsort_desc(&scores), expected);
    }

    proptest! {
        #[test]
        fn normalize_is_unit_and_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..40)) {
            prop_assume!(norm(&v) > 1e-6);
            let z = l2_normalize(&v).unwrap();
            prop_assert!((norm(z.as_slice()) - 1.0).abs() <= 1e-9);
            let zz = l2_normalize(z.as_slice()).unwrap();
            for (a, b) in z.as_slice().iter().zip(zz.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_shift_and_permutation(
            v in prop::collection::vec(-20.0f64..20.0, 1..12),
            shift in -50.0f64..50.0,
            rot in 0usize..12,
        ) {
            let p = stable_softmax(&v).unwrap();
            prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = stable_softmax(&shifted).unwrap();
            for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let r = rot % v.len();
            let mut rotated = v.clone();
            rotated.rotate_left(r);
            let pr = stable_softmax(&rotated).unwrap();
            let mut expected = p.as_slice().to_vec();
            expected.rotate_left(r);
            for (a, b) in pr.as_slice().iter().zip(&expected) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn argsort_is_permutation(v in prop::collection::vec(-5.0f64..5.0, 0..60)) {
            let mut order = argsort_desc(&v);
            for w in order.windows(2) {
                prop_assert!(v[w[0]] >= v[w[1]]);
            }
            order.sort_unstable();
            prop_assert_eq!(order, (0..v.len()).collect::<Vec<_>>());
        }
    }
}
