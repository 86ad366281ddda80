//! Key-derived channel geometry and green-region membership.
//!
//! A [`PrivateKey`] deterministically yields a [`PivotSet`]: `c` orthonormal
//! directions in the embedding space. A document-level [`FlagPattern`] picks a
//! target sign per channel, and a sentence is in the green region exactly when
//! the signs of its channel cosines match that pattern. Membership looks only
//! at the sentence embedding and the key, never at the sentence's position.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedders::cosine;
use crate::error::{Error, Result};

const PIVOT_DOMAIN: &[u8] = b"anchormark/pivots/v1";
const STEP_FLAG_DOMAIN: &[u8] = b"anchormark/step-flags/v1";

/// Secret key bytes. At least 16 bytes are recommended.
#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey(Vec<u8>);

impl PrivateKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Self(bytes.into())
    }

    pub fn from_hex(hex: &str) -> Result<Self> {
        let hex = hex.trim();
        if hex.is_empty() || !hex.len().is_multiple_of(2) {
            return Err(Error::Config(
                "key must be a non-empty even-length hex string".into(),
            ));
        }
        (0..hex.len())
            .step_by(2)
            .map(|i| {
                u8::from_str_radix(&hex[i..i + 2], 16)
                    .map_err(|_| Error::Config(format!("invalid hex in key at offset {i}")))
            })
            .collect::<Result<Vec<u8>>>()
            .map(Self)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrivateKey({} bytes)", self.0.len())
    }
}

/// `c` orthonormal pivot vectors of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotSet {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

impl PivotSet {
    /// Wraps explicit vectors, checking orthonormality to 1e-6.
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let c = vectors.len();
        let dim = vectors.first().map_or(0, Vec::len);
        if c < 1 || dim < c {
            return Err(Error::InvalidChannelCount {
                channels: c,
                dimension: dim,
            });
        }
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
        }
        for (i, a) in vectors.iter().enumerate() {
            for (j, b) in vectors.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                let ip: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                if (ip - target).abs() > 1e-6 {
                    return Err(Error::Config(format!(
                        "pivot vectors are not orthonormal: <v{i}, v{j}> = {ip}"
                    )));
                }
            }
        }
        Ok(Self { vectors, dim })
    }

    pub fn channels(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, j: usize) -> &[f64] {
        &self.vectors[j]
    }

    /// Cosine of `e` against every pivot.
    pub fn cosines(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: e.len(),
            });
        }
        self.vectors.iter().map(|v| cosine(e, v)).collect()
    }
}

/// Derives `c` orthonormal pivots in R^d from the key.
///
/// The key seeds a ChaCha20 stream through SHA-256 with a domain tag; a d x c
/// standard Gaussian matrix drawn from it is QR-factorized, and each column of
/// the orthonormal factor is flipped so that its first nonzero entry is
/// positive.
pub fn derive_pivots(key: &PrivateKey, c: usize, d: usize) -> Result<PivotSet> {
    if c < 1 || c > d {
        return Err(Error::InvalidChannelCount {
            channels: c,
            dimension: d,
        });
    }
    let mut hasher = Sha256::new();
    hasher.update(key.as_bytes());
    hasher.update(PIVOT_DOMAIN);
    hasher.update((c as u64).to_le_bytes());
    hasher.update((d as u64).to_le_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(seed);

    let gaussian: Vec<f64> = (0..d * c).map(|_| rng.sample(StandardNormal)).collect();
    let q = DMatrix::from_vec(d, c, gaussian).qr().q();

    let vectors = q
        .column_iter()
        .map(|col| {
            let mut v: Vec<f64> = col.iter().copied().collect();
            if v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0) {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(PivotSet { vectors, dim: d })
}

/// Target sign per channel, each entry -1 or +1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct FlagPattern(Vec<i8>);

impl FlagPattern {
    pub fn new(flags: Vec<i8>) -> Result<Self> {
        if flags.is_empty() {
            return Err(Error::InvalidChannelCount {
                channels: 0,
                dimension: 0,
            });
        }
        if let Some(bad) = flags.iter().find(|f| **f != 1 && **f != -1) {
            return Err(Error::Config(format!(
                "flag values must be -1 or +1, got {bad}"
            )));
        }
        Ok(Self(flags))
    }

    pub fn all_positive(c: usize) -> Self {
        Self(vec![1; c])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    /// Flag of channel `j` as a float.
    pub fn sign(&self, j: usize) -> f64 {
        f64::from(self.0[j])
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|f| -f).collect())
    }
}

impl TryFrom<Vec<i8>> for FlagPattern {
    type Error = Error;

    fn try_from(v: Vec<i8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FlagPattern> for Vec<i8> {
    fn from(p: FlagPattern) -> Self {
        p.0
    }
}

/// Draws each flag independently and uniformly from {-1, +1}.
pub fn sample_flag_pattern<R: RngCore + ?Sized>(rng: &mut R, c: usize) -> Result<FlagPattern> {
    if c < 1 {
        return Err(Error::InvalidChannelCount {
            channels: c,
            dimension: 0,
        });
    }
    Ok(FlagPattern(
        (0..c)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect(),
    ))
}

/// Flags keyed on the position of a sentence in the document. Used only by the
/// step-keyed comparison scheme, which loses its signal when sentences move.
pub fn step_flag_pattern(key: &PrivateKey, step: usize, c: usize) -> Result<FlagPattern> {
    if c < 1 {
        return Err(Error::InvalidChannelCount {
            channels: c,
            dimension: 0,
        });
    }
    let mut hasher = Sha256::new();
    hasher.update(key.as_bytes());
    hasher.update(STEP_FLAG_DOMAIN);
    hasher.update((c as u64).to_le_bytes());
    hasher.update((step as u64).to_le_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(seed);
    sample_flag_pattern(&mut rng, c)
}

/// Membership sign: zero counts as negative.
pub fn membership_sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else {
        -1
    }
}

fn check_flags(pivots: &PivotSet, flags: &FlagPattern) -> Result<()> {
    if flags.len() != pivots.channels() {
        return Err(Error::DimensionMismatch {
            expected: pivots.channels(),
            actual: flags.len(),
        });
    }
    Ok(())
}

/// sigma_j = r_j * cos(e, v_j) for every channel.
pub fn signed_channel_similarities(
    e: &[f64],
    pivots: &PivotSet,
    flags: &FlagPattern,
) -> Result<Vec<f64>> {
    check_flags(pivots, flags)?;
    Ok(pivots
        .cosines(e)?
        .into_iter()
        .enumerate()
        .map(|(j, cos)| flags.sign(j) * cos)
        .collect())
}

/// Whether `e` lies in the green region selected by `flags`. There is no step
/// argument: the answer depends on the embedding and the key alone.
pub fn green_membership(e: &[f64], pivots: &PivotSet, flags: &FlagPattern) -> Result<bool> {
    check_flags(pivots, flags)?;
    Ok(pivots
        .cosines(e)?
        .into_iter()
        .zip(flags.as_slice())
        .all(|(cos, r)| membership_sign(cos) == *r))
}

/// Number of channels whose cosine sign matches the target flag.
pub fn matching_channels(cosines: &[f64], flags: &FlagPattern) -> usize {
    cosines
        .iter()
        .zip(flags.as_slice())
        .filter(|(cos, r)| membership_sign(**cos) == **r)
        .count()
}

#[cfg(test)]
#[allow(clippy::approx_constant)] // expected values are the rounded tabulated ones
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand_chacha::ChaCha8Rng;

    fn key() -> PrivateKey {
        PrivateKey::new(b"0123456789abcdef".to_vec())
    }

    fn gram_max_error(p: &PivotSet) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in p.vectors().iter().enumerate() {
            for (j, b) in p.vectors().iter().enumerate() {
                let ip: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }

    #[test]
    fn pivots_are_deterministic() {
        let a = derive_pivots(&key(), 2, 768).unwrap();
        let b = derive_pivots(&key(), 2, 768).unwrap();
        assert_eq!(a, b);
        let bits = |p: &PivotSet| -> Vec<u64> {
            p.vectors().iter().flatten().map(|x| x.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn pivots_are_orthonormal() {
        let p = derive_pivots(&key(), 2, 768).unwrap();
        let v1 = p.vector(0);
        let v2 = p.vector(1);
        let ip: f64 = v1.iter().zip(v2).map(|(x, y)| x * y).sum();
        assert!(ip.abs() <= 1e-6);
        for v in [v1, v2] {
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn single_channel_is_a_unit_vector() {
        let p = derive_pivots(&key(), 1, 4).unwrap();
        let n: f64 = p.vector(0).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_abs_diff_eq!(n, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sign_convention_first_nonzero_positive() {
        let p = derive_pivots(&key(), 4, 32).unwrap();
        for v in p.vectors() {
            assert!(*v.iter().find(|x| **x != 0.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn different_keys_give_different_pivots() {
        let a = derive_pivots(&key(), 2, 64).unwrap();
        let b = derive_pivots(&PrivateKey::new(b"another key 16by".to_vec()), 2, 64).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn invalid_channel_counts() {
        assert!(matches!(
            derive_pivots(&key(), 0, 8),
            Err(Error::InvalidChannelCount { .. })
        ));
        assert!(matches!(
            derive_pivots(&key(), 9, 8),
            Err(Error::InvalidChannelCount { .. })
        ));
        assert!(derive_pivots(&key(), 8, 8).is_ok());
    }

    #[test]
    fn hex_keys() {
        assert_eq!(
            PrivateKey::from_hex("00ff10").unwrap().as_bytes(),
            &[0, 255, 16]
        );
        assert!(PrivateKey::from_hex("abc").is_err());
        assert!(PrivateKey::from_hex("zz").is_err());
        assert!(PrivateKey::from_hex("").is_err());
    }

    #[test]
    fn flag_sampling_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = sample_flag_pattern(&mut rng, 2).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.as_slice().iter().all(|x| *x == 1 || *x == -1));

        let again = sample_flag_pattern(&mut ChaCha8Rng::seed_from_u64(0), 2).unwrap();
        assert_eq!(f, again);

        assert!(sample_flag_pattern(&mut rng, 0).is_err());
    }

    #[test]
    fn flag_sampling_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let total: i64 = (0..10_000)
            .map(|_| i64::from(sample_flag_pattern(&mut rng, 1).unwrap().as_slice()[0]))
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!(mean.abs() <= 0.05, "mean flag {mean}");
    }

    #[test]
    fn step_flags_are_deterministic_per_step() {
        let a = step_flag_pattern(&key(), 3, 2).unwrap();
        assert_eq!(a, step_flag_pattern(&key(), 3, 2).unwrap());
        let distinct: std::collections::HashSet<_> = (0..32)
            .map(|t| step_flag_pattern(&key(), t, 2).unwrap())
            .collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn flag_pattern_rejects_bad_values() {
        assert!(FlagPattern::new(vec![1, 0]).is_err());
        assert!(FlagPattern::new(vec![]).is_err());
        let parsed: FlagPattern = serde_json::from_str("[1,-1]").unwrap();
        assert_eq!(parsed.as_slice(), &[1, -1]);
        assert!(serde_json::from_str::<FlagPattern>("[2]").is_err());
    }

    fn two_channel() -> (PivotSet, Vec<f64>, Vec<f64>) {
        let p = derive_pivots(&key(), 2, 16).unwrap();
        let v1 = p.vector(0).to_vec();
        let v2 = p.vector(1).to_vec();
        (p, v1, v2)
    }

    #[test]
    fn signed_similarity_examples() {
        let (p, v1, v2) = two_channel();
        let pp = FlagPattern::new(vec![1, 1]).unwrap();
        let s = signed_channel_similarities(&v1, &p, &pp).unwrap();
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.0, epsilon = 1e-12);

        let np = FlagPattern::new(vec![-1, 1]).unwrap();
        let s = signed_channel_similarities(&v1, &p, &np).unwrap();
        assert_abs_diff_eq!(s[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.0, epsilon = 1e-12);

        let mid: Vec<f64> = v1
            .iter()
            .zip(&v2)
            .map(|(a, b)| (a + b) / 2f64.sqrt())
            .collect();
        let s = signed_channel_similarities(&mid, &p, &pp).unwrap();
        assert_abs_diff_eq!(s[0], 0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(s[1], 0.70711, epsilon = 1e-5);
    }

    #[test]
    fn similarity_errors() {
        let (p, _, _) = two_channel();
        let f = FlagPattern::all_positive(2);
        assert!(matches!(
            signed_channel_similarities(&[1.0; 3], &p, &f),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            green_membership(&[0.0; 16], &p, &f),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            green_membership(&[1.0; 16], &p, &FlagPattern::all_positive(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn membership_examples() {
        let p = derive_pivots(&key(), 1, 8).unwrap();
        let v1 = p.vector(0).to_vec();
        let plus = FlagPattern::all_positive(1);
        assert!(green_membership(&v1, &p, &plus).unwrap());
        let neg: Vec<f64> = v1.iter().map(|x| -x).collect();
        assert!(!green_membership(&neg, &p, &plus).unwrap());

        // Exactly orthogonal to v1: cosine 0 counts as negative.
        let mut orth = vec![0.0; 8];
        orth[0] = v1[1];
        orth[1] = -v1[0];
        assert_eq!(p.cosines(&orth).unwrap()[0], 0.0);
        assert!(!green_membership(&orth, &p, &plus).unwrap());
        assert!(green_membership(&orth, &p, &plus.negated()).unwrap());
    }

    fn unit_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, d)
            .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn pivots_orthonormal_for_any_key(
            bytes in prop::collection::vec(any::<u8>(), 1..32),
            c in 1usize..6,
            extra in 0usize..40,
        ) {
            let d = c + extra;
            let p = derive_pivots(&PrivateKey::new(bytes), c, d).unwrap();
            prop_assert_eq!(p.channels(), c);
            prop_assert!(gram_max_error(&p) <= 1e-6);
        }

        #[test]
        fn flag_flip_equals_vector_flip(e in unit_vec(12), flags in prop::collection::vec(prop::bool::ANY, 3)) {
            let p = derive_pivots(&key(), 3, 12).unwrap();
            prop_assume!(p.cosines(&e).unwrap().iter().all(|c| *c != 0.0));
            let r = FlagPattern::new(flags.iter().map(|b| if *b { 1 } else { -1 }).collect()).unwrap();
            let neg_e: Vec<f64> = e.iter().map(|x| -x).collect();
            prop_assert_eq!(
                green_membership(&e, &p, &r.negated()).unwrap(),
                green_membership(&neg_e, &p, &r).unwrap()
            );
        }

        #[test]
        fn membership_independent_of_list_position(
            embs in prop::collection::vec(unit_vec(10), 1..12),
            seed in any::<u64>(),
        ) {
            let p = derive_pivots(&key(), 2, 10).unwrap();
            let r = FlagPattern::new(vec![1, -1]).unwrap();
            let before: Vec<(Vec<u64>, bool)> = embs
                .iter()
                .map(|e| (e.iter().map(|x| x.to_bits()).collect(), green_membership(e, &p, &r).unwrap()))
                .collect();
            let mut shuffled = embs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for e in &shuffled {
                let bits: Vec<u64> = e.iter().map(|x| x.to_bits()).collect();
                let expected = before.iter().find(|(b, _)| *b == bits).unwrap().1;
                prop_assert_eq!(green_membership(e, &p, &r).unwrap(), expected);
            }
        }
    }
}
