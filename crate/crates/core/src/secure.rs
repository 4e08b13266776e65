//! Pairwise-mask secure aggregation.
//!
//! Each participant encodes its vector in 2^40 fixed point and adds, for
//! every other participant, a pseudo-random mask derived from a seed shared
//! by the pair. The higher-ranked member of the pair adds the mask and the
//! lower-ranked one subtracts it, so all masks cancel in the sum while each
//! individual share looks uniformly random. Arithmetic wraps over `i128`;
//! the true (unmasked) sum is bounded well below that width, so the wrapped
//! total equals it exactly.
//!
//! This carries the sum-preservation contract only. There is no key
//! agreement, secret sharing or dropout recovery.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::seed;

/// Fixed-point scale exponent: values are stored as `round(v * 2^40)`.
pub const SCALE_BITS: u32 = 40;
/// Largest encodable magnitude (exclusive).
pub const MAX_ABS_VALUE: f64 = (1u64 << 20) as f64;
/// Largest session size for which sums are guaranteed not to overflow.
pub const MAX_PARTICIPANTS: usize = 1 << 10;

const SCALE: f64 = (1u64 << SCALE_BITS) as f64;

/// How updates are combined on the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationKind {
    Mean,
    TrimmedMean,
    Median,
}

impl AggregationKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregationKind::Mean => "mean",
            AggregationKind::TrimmedMean => "trimmed_mean",
            AggregationKind::Median => "median",
        }
    }
}

impl fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether client updates are masked before upload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Privacy {
    Secure,
    Plain,
}

impl Privacy {
    pub fn name(self) -> &'static str {
        match self {
            Privacy::Secure => "secure",
            Privacy::Plain => "plain",
        }
    }
}

impl fmt::Display for Privacy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Masking only preserves sums, so order statistics cannot be computed on masked shares.
pub fn check_compatibility(aggregation: AggregationKind, privacy: Privacy) -> Result<()> {
    match (aggregation, privacy) {
        (AggregationKind::TrimmedMean | AggregationKind::Median, Privacy::Secure) => Err(Error::Incompatible {
            aggregation: aggregation.name(),
            privacy: privacy.name(),
        }),
        _ => Ok(()),
    }
}

/// Integer-encoded, possibly masked, vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointVector(Vec<i128>);

impl FixedPointVector {
    pub fn new(values: Vec<i128>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[i128] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<i128> {
        self.0
    }

    /// Wrapping element-wise sum.
    pub fn wrapping_sum<'a, I>(len: usize, vectors: I) -> FixedPointVector
    where
        I: IntoIterator<Item = &'a FixedPointVector>,
    {
        let mut acc = vec![0i128; len];
        for v in vectors {
            for (a, b) in acc.iter_mut().zip(&v.0) {
                *a = a.wrapping_add(*b);
            }
        }
        FixedPointVector(acc)
    }
}

/// Round to the nearest multiple of 2^-40.
pub fn encode(plain: &ParamVector) -> Result<FixedPointVector> {
    plain
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !v.is_finite() || v.abs() >= MAX_ABS_VALUE {
                return Err(Error::input(format!(
                    "entry {i} = {v} is outside the fixed-point range (|v| < 2^20)"
                )));
            }
            Ok(libm::round(v * SCALE) as i128)
        })
        .collect::<Result<Vec<_>>>()
        .map(FixedPointVector)
}

pub fn decode(encoded: &FixedPointVector) -> ParamVector {
    ParamVector::new(encoded.0.iter().map(|&v| v as f64 / SCALE).collect())
}

/// One round's masking context shared by all participants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskingSession {
    participants: Vec<u64>,
    vector_length: usize,
    round_id: u64,
    master_seed: u64,
}

impl MaskingSession {
    pub fn new(participants: &[u64], vector_length: usize, round_id: u64, master_seed: u64) -> Result<Self> {
        let mut ids = participants.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != participants.len() {
            return Err(Error::protocol("duplicate participant ids in masking session"));
        }
        if ids.is_empty() || ids.len() > MAX_PARTICIPANTS {
            return Err(Error::protocol(format!(
                "masking session needs between 1 and {MAX_PARTICIPANTS} participants, got {}",
                ids.len()
            )));
        }
        if vector_length == 0 {
            return Err(Error::input("masking session vector length must be positive"));
        }
        Ok(Self {
            participants: ids,
            vector_length,
            round_id,
            master_seed,
        })
    }

    /// Participant ids in ascending order; the position is the participant's rank.
    pub fn participants(&self) -> &[u64] {
        &self.participants
    }

    pub fn vector_length(&self) -> usize {
        self.vector_length
    }

    pub fn round_id(&self) -> u64 {
        self.round_id
    }

    fn rank(&self, id: u64) -> Result<usize> {
        self.participants
            .binary_search(&id)
            .map_err(|_| Error::protocol(format!("participant {id} is not part of round {}", self.round_id)))
    }

    /// Seed shared by an unordered pair.
    pub fn pair_seed(&self, a: u64, b: u64) -> u64 {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        seed::derive(self.master_seed, seed::Stream::Masking, &[self.round_id, lo, hi])
    }

    /// All `(lo, hi, seed)` pair seeds of the session.
    pub fn pair_seeds(&self) -> Vec<(u64, u64, u64)> {
        let ids = &self.participants;
        let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                out.push((a, b, self.pair_seed(a, b)));
            }
        }
        out
    }

    /// Encoded vector plus this participant's pairwise masks.
    pub fn mask(&self, participant: u64, plain: &ParamVector) -> Result<FixedPointVector> {
        let rank = self.rank(participant)?;
        if plain.len() != self.vector_length {
            return Err(Error::input(format!(
                "vector of length {} does not match session length {}",
                plain.len(),
                self.vector_length
            )));
        }
        let mut out = encode(plain)?;
        for (j, &other) in self.participants.iter().enumerate() {
            if j == rank {
                continue;
            }
            let mut prg = seed::rng(self.pair_seed(participant, other));
            let add = j > rank;
            for v in out.0.iter_mut() {
                let m = ((prg.next_u64() as u128) << 64 | prg.next_u64() as u128) as i128;
                *v = if add { v.wrapping_add(m) } else { v.wrapping_sub(m) };
            }
        }
        Ok(out)
    }

    /// Mean of the plain vectors, recovered from one masked share per participant.
    ///
    /// `masked` must be ordered like [`participants`](Self::participants).
    pub fn aggregate_masked(&self, masked: &[FixedPointVector]) -> Result<ParamVector> {
        if masked.len() != self.participants.len() {
            return Err(Error::protocol(format!(
                "expected {} masked shares, received {}",
                self.participants.len(),
                masked.len()
            )));
        }
        if let Some(bad) = masked.iter().position(|m| m.len() != self.vector_length) {
            return Err(Error::input(format!(
                "masked share {bad} has length {}, session length is {}",
                masked[bad].len(),
                self.vector_length
            )));
        }
        let sum = FixedPointVector::wrapping_sum(self.vector_length, masked);
        let k = masked.len() as f64;
        Ok(ParamVector::new(sum.0.iter().map(|&v| v as f64 / SCALE / k).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compatibility_table() {
        use AggregationKind::*;
        assert!(check_compatibility(Mean, Privacy::Secure).is_ok());
        assert!(check_compatibility(TrimmedMean, Privacy::Plain).is_ok());
        assert!(check_compatibility(Median, Privacy::Plain).is_ok());
        let err = check_compatibility(Median, Privacy::Secure).unwrap_err();
        assert!(err.is_config());
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("median") && msg.contains("secure"));
        assert!(check_compatibility(TrimmedMean, Privacy::Secure).is_err());
    }

    #[test]
    fn single_participant_mask_is_encoding() {
        let s = MaskingSession::new(&[4], 3, 0, 1).unwrap();
        let v = ParamVector::new(vec![0.5, -1.25, 3.0]);
        assert_eq!(s.mask(4, &v).unwrap(), encode(&v).unwrap());
    }

    #[test]
    fn two_party_masks_cancel() {
        let s = MaskingSession::new(&[9, 2], 4, 3, 11).unwrap();
        let a = ParamVector::new(vec![0.1, 0.2, -0.3, 7.0]);
        let b = ParamVector::new(vec![1.0, -2.0, 0.0, 1e-6]);
        let ma = s.mask(2, &a).unwrap();
        let mb = s.mask(9, &b).unwrap();
        assert_ne!(ma, encode(&a).unwrap());
        let masked = FixedPointVector::wrapping_sum(4, [&ma, &mb]);
        let plain = FixedPointVector::wrapping_sum(4, [&encode(&a).unwrap(), &encode(&b).unwrap()]);
        assert_eq!(masked, plain);
    }

    #[test]
    fn unknown_participant_and_bad_length() {
        let s = MaskingSession::new(&[1, 2], 2, 0, 0).unwrap();
        let v = ParamVector::new(vec![0.0, 0.0]);
        assert!(matches!(s.mask(3, &v), Err(Error::Protocol(_))));
        assert!(matches!(s.mask(1, &ParamVector::new(vec![0.0])), Err(Error::Input(_))));
        let one = s.mask(1, &v).unwrap();
        assert!(matches!(s.aggregate_masked(&[one]), Err(Error::Protocol(_))));
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(encode(&ParamVector::new(vec![MAX_ABS_VALUE])).is_err());
        assert!(encode(&ParamVector::new(vec![f64::NAN])).is_err());
        assert!(encode(&ParamVector::new(vec![MAX_ABS_VALUE - 1.0])).is_ok());
    }

    #[test]
    fn identical_plains_average_to_themselves() {
        let v = ParamVector::new(vec![0.3, -0.7, 12.5, 1e-9]);
        let s = MaskingSession::new(&[1, 2, 3, 4, 5], 4, 2, 8).unwrap();
        let shares: Vec<_> = s.participants().iter().map(|&id| s.mask(id, &v).unwrap()).collect();
        let mean = s.aggregate_masked(&shares).unwrap();
        for (a, b) in mean.as_slice().iter().zip(v.as_slice()) {
            assert!((a - b).abs() <= 1.0 / SCALE);
        }
    }

    #[test]
    fn unit_basis_mean() {
        let s = MaskingSession::new(&[0, 1, 2], 3, 0, 5).unwrap();
        let shares: Vec<_> = (0..3u64)
            .map(|i| {
                let mut e = vec![0.0; 3];
                e[i as usize] = 1.0;
                s.mask(i, &ParamVector::new(e)).unwrap()
            })
            .collect();
        let mean = s.aggregate_masked(&shares).unwrap();
        for v in mean.as_slice() {
            assert!((v - 1.0 / 3.0).abs() <= 1.0 / SCALE);
        }
    }

    #[test]
    fn pair_seeds_are_symmetric_and_complete() {
        let s = MaskingSession::new(&[5, 1, 3, 8], 1, 7, 2).unwrap();
        assert_eq!(s.pair_seed(1, 8), s.pair_seed(8, 1));
        let pairs = s.pair_seeds();
        assert_eq!(pairs.len(), 6);
        let mut uniq: Vec<u64> = pairs.iter().map(|p| p.2).collect();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 6);
    }
}
