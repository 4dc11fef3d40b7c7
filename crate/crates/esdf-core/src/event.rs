//! Impression/click/conversion events, day-slot discretization, and
//! index-set partitioning.
//!
//! Click-to-conversion delays are discretized into `T + 2` day slots: slot
//! `i <= T` covers `[i, i+1)` slot-lengths after the click, and the final slot
//! `T + 1` collects every longer delay. Elapsed time since a click is capped
//! at `T + 1`, which makes the survival tail of a fully matured sample an
//! empty (zero) sum.

use crate::error::{Error, Result};

/// Day-slot discretization parameters.
///
/// `max_delay_days` is the number of fully resolved day slots (`T`); the
/// total number of delay bins is `T + 2`. `seconds_per_slot` defaults to one
/// day and is configurable so tests can run on sub-day clocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotConfig {
    pub max_delay_days: u32,
    pub seconds_per_slot: i64,
}

impl Default for SlotConfig {
    fn default() -> Self {
        Self {
            max_delay_days: 6,
            seconds_per_slot: 86_400,
        }
    }
}

impl SlotConfig {
    pub fn new(max_delay_days: u32, seconds_per_slot: i64) -> Result<Self> {
        let cfg = Self {
            max_delay_days,
            seconds_per_slot,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_delay_days < 1 {
            return Err(Error::Config("max_delay_days must be >= 1".into()));
        }
        if self.seconds_per_slot <= 0 {
            return Err(Error::Config("seconds_per_slot must be positive".into()));
        }
        Ok(())
    }

    /// Total number of delay bins, `T + 2`.
    pub fn num_bins(&self) -> usize {
        self.max_delay_days as usize + 2
    }

    /// Index of the overflow bin, `T + 1`.
    pub fn overflow_slot(&self) -> u32 {
        self.max_delay_days + 1
    }
}

/// One sparse feature: a one-hot (or valued) entry within a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureEntry {
    pub field: u32,
    pub index: u32,
    pub value: f64,
}

/// Sparse feature vector; the owning dataset declares the feature dimension
/// and field count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub entries: Vec<FeatureEntry>,
}

impl FeatureVector {
    pub fn validate(&self, feature_dim: usize, n_fields: usize) -> Result<()> {
        let mut seen = vec![false; n_fields];
        for entry in &self.entries {
            if entry.index as usize >= feature_dim {
                return Err(Error::InvalidInput(format!(
                    "feature index {} out of range (dim {})",
                    entry.index, feature_dim
                )));
            }
            let field = entry.field as usize;
            if field >= n_fields {
                return Err(Error::InvalidInput(format!(
                    "field {} out of range ({} fields)",
                    entry.field, n_fields
                )));
            }
            if seen[field] {
                return Err(Error::InvalidInput(format!(
                    "field {} has more than one entry",
                    entry.field
                )));
            }
            seen[field] = true;
        }
        Ok(())
    }
}

/// One impression, with its click and (optional) conversion outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    /// Opaque group key; impressions from one request share it.
    pub request_id: String,
    /// Unique record key.
    pub sample_id: String,
    pub features: FeatureVector,
    pub clicked: bool,
    /// Epoch seconds of the click; present iff `clicked`.
    pub click_ts: Option<i64>,
    /// Epoch seconds of the eventual conversion, if one ever occurred.
    pub conversion_ts: Option<i64>,
}

impl EventRecord {
    pub fn validate(&self) -> Result<()> {
        if self.clicked != self.click_ts.is_some() {
            return Err(Error::InvalidInput(format!(
                "record {}: click_ts must be present iff clicked",
                self.sample_id
            )));
        }
        if let Some(conv) = self.conversion_ts {
            let click = self.click_ts.ok_or_else(|| {
                Error::InvalidInput(format!(
                    "record {}: conversion without a click",
                    self.sample_id
                ))
            })?;
            if conv < click {
                return Err(Error::InvalidInput(format!(
                    "record {}: conversion_ts {} precedes click_ts {}",
                    self.sample_id, conv, click
                )));
            }
        }
        Ok(())
    }
}

/// A full event log with its declared feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub feature_dim: usize,
    pub n_fields: usize,
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn validate(&self) -> Result<()> {
        for record in &self.records {
            record.validate()?;
            record.features.validate(self.feature_dim, self.n_fields)?;
        }
        Ok(())
    }
}

/// A training-time view of an [`EventRecord`] at a fixed observation date.
///
/// `converted` is the *observed* conversion flag (censored: the latent
/// eventual outcome may still be positive). Slot fields are present only
/// where defined: `elapsed_slots` for clicked samples, `delay_slot` for
/// observed conversions. The `*_units` fields carry the un-discretized times
/// in slot units for the exponential-delay baseline. `weight` is the
/// posterior conversion weight filled in by the expectation step (1 for
/// observed conversions, 0 for unclicked).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    /// Index of the source record in the originating log.
    pub record: usize,
    pub clicked: bool,
    pub converted: bool,
    pub elapsed_slots: Option<u32>,
    pub delay_slot: Option<u32>,
    pub elapsed_units: Option<f64>,
    pub delay_units: Option<f64>,
    pub weight: f64,
}

impl ObservedSample {
    /// Maturity slot: the delay slot for observed conversions, otherwise the
    /// elapsed slot.
    pub fn maturity_slot(&self) -> Option<u32> {
        if self.converted {
            self.delay_slot
        } else {
            self.elapsed_slots
        }
    }

    pub fn validate(&self, cfg: &SlotConfig) -> Result<()> {
        if self.converted {
            if !self.clicked {
                return Err(Error::InvalidInput(
                    "converted sample without a click".into(),
                ));
            }
            if let (Some(d), Some(e)) = (self.delay_slot, self.elapsed_slots) {
                if d > e {
                    return Err(Error::InvalidInput(format!(
                        "delay slot {d} exceeds elapsed slot {e}"
                    )));
                }
            }
            if let Some(d) = self.delay_slot {
                if d > cfg.overflow_slot() {
                    return Err(Error::InvalidInput(format!(
                        "delay slot {d} exceeds overflow slot {}",
                        cfg.overflow_slot()
                    )));
                }
            }
        }
        if let Some(e) = self.elapsed_slots {
            if !self.clicked {
                return Err(Error::InvalidInput(
                    "elapsed slot on an unclicked sample".into(),
                ));
            }
            if e > cfg.overflow_slot() {
                return Err(Error::InvalidInput(format!(
                    "elapsed slot {e} exceeds overflow slot {}",
                    cfg.overflow_slot()
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::InvalidInput(format!(
                "posterior weight {} outside [0,1]",
                self.weight
            )));
        }
        Ok(())
    }
}

/// Disjoint index sets of a batch: observed conversions, clicked-but-pending,
/// and unclicked samples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexPartition {
    pub converted: Vec<usize>,
    pub pending: Vec<usize>,
    pub unclicked: Vec<usize>,
}

impl IndexPartition {
    pub fn total(&self) -> usize {
        self.converted.len() + self.pending.len() + self.unclicked.len()
    }
}

/// Maps a click-to-conversion delay to its day slot. Delays longer than
/// `T` full slots land in the overflow bin `T + 1`.
pub fn day_slot(delay_seconds: i64, cfg: &SlotConfig) -> Result<u32> {
    if delay_seconds < 0 {
        return Err(Error::InvalidInput(format!(
            "negative delay: {delay_seconds}s"
        )));
    }
    let quotient = delay_seconds / cfg.seconds_per_slot;
    if quotient <= i64::from(cfg.max_delay_days) {
        Ok(quotient as u32)
    } else {
        Ok(cfg.overflow_slot())
    }
}

/// Whole slots elapsed between a click and the observation date, capped at
/// `T + 1` so the survival tail of a matured sample is an empty sum.
pub fn elapsed_slots(click_ts: i64, observe_ts: i64, cfg: &SlotConfig) -> Result<u32> {
    if observe_ts < click_ts {
        return Err(Error::InvalidInput(format!(
            "observe_ts {observe_ts} precedes click_ts {click_ts}"
        )));
    }
    let quotient = (observe_ts - click_ts) / cfg.seconds_per_slot;
    Ok(quotient.min(i64::from(cfg.overflow_slot())) as u32)
}

/// Splits a batch into the three index sets, preserving input order.
pub fn partition(batch: &[ObservedSample]) -> Result<IndexPartition> {
    let mut parts = IndexPartition::default();
    for (i, sample) in batch.iter().enumerate() {
        match (sample.converted, sample.clicked) {
            (true, true) => parts.converted.push(i),
            (false, true) => parts.pending.push(i),
            (false, false) => parts.unclicked.push(i),
            (true, false) => {
                return Err(Error::InvalidInput(format!(
                    "sample {i}: converted without a click"
                )))
            }
        }
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(t: u32) -> SlotConfig {
        SlotConfig::new(t, 86_400).unwrap()
    }

    fn sample(clicked: bool, converted: bool) -> ObservedSample {
        ObservedSample {
            record: 0,
            clicked,
            converted,
            elapsed_slots: if clicked { Some(3) } else { None },
            delay_slot: if converted { Some(1) } else { None },
            elapsed_units: None,
            delay_units: None,
            weight: if converted { 1.0 } else { 0.0 },
        }
    }

    #[test]
    fn day_slot_zero_delay() {
        assert_eq!(day_slot(0, &cfg(6)).unwrap(), 0);
    }

    #[test]
    fn day_slot_floors_within_range() {
        assert_eq!(day_slot(3 * 86_400 + 3_600, &cfg(6)).unwrap(), 3);
    }

    #[test]
    fn day_slot_overflows_past_max_delay() {
        assert_eq!(day_slot(10 * 86_400, &cfg(6)).unwrap(), 7);
    }

    #[test]
    fn day_slot_rejects_negative_delay() {
        assert!(matches!(
            day_slot(-1, &cfg(6)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn elapsed_same_second() {
        assert_eq!(elapsed_slots(100, 100, &cfg(6)).unwrap(), 0);
    }

    #[test]
    fn elapsed_floors() {
        assert_eq!(elapsed_slots(0, 2 * 86_400 + 1, &cfg(6)).unwrap(), 2);
    }

    #[test]
    fn elapsed_caps_at_overflow_and_tail_is_empty() {
        let e = elapsed_slots(0, 30 * 86_400, &cfg(6)).unwrap();
        assert_eq!(e, 7);
        // Any distribution over 8 bins has an empty tail past slot e = T+1.
        let f = [0.125f64; 8];
        let tail: f64 = f.iter().skip(e as usize + 1).sum();
        assert_eq!(tail, 0.0);
    }

    #[test]
    fn elapsed_rejects_observation_before_click() {
        assert!(elapsed_slots(100, 99, &cfg(6)).is_err());
    }

    #[test]
    fn partition_basic() {
        let batch = vec![sample(true, true), sample(true, false), sample(false, false)];
        let parts = partition(&batch).unwrap();
        assert_eq!(parts.converted, vec![0]);
        assert_eq!(parts.pending, vec![1]);
        assert_eq!(parts.unclicked, vec![2]);
    }

    #[test]
    fn partition_empty() {
        let parts = partition(&[]).unwrap();
        assert_eq!(parts.total(), 0);
    }

    #[test]
    fn partition_rejects_converted_unclicked() {
        let mut bad = sample(true, true);
        bad.clicked = false;
        assert!(partition(&[bad]).is_err());
    }

    #[test]
    fn partition_counts_random_batch() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let batch: Vec<ObservedSample> = (0..100)
            .map(|_| {
                let clicked = rng.gen_bool(0.5);
                let converted = clicked && rng.gen_bool(0.5);
                sample(clicked, converted)
            })
            .collect();
        let parts = partition(&batch).unwrap();
        assert_eq!(parts.total(), 100);
        // Brute-force recount.
        let n11 = batch.iter().filter(|s| s.converted && s.clicked).count();
        let n01 = batch.iter().filter(|s| !s.converted && s.clicked).count();
        let n00 = batch.iter().filter(|s| !s.converted && !s.clicked).count();
        assert_eq!(parts.converted.len(), n11);
        assert_eq!(parts.pending.len(), n01);
        assert_eq!(parts.unclicked.len(), n00);
    }

    #[test]
    fn record_invariants() {
        let rec = EventRecord {
            request_id: "r1".into(),
            sample_id: "s1".into(),
            features: FeatureVector::default(),
            clicked: false,
            click_ts: None,
            conversion_ts: Some(5),
        };
        assert!(rec.validate().is_err());
    }

    #[test]
    fn feature_vector_rejects_duplicate_field() {
        let fv = FeatureVector {
            entries: vec![
                FeatureEntry { field: 0, index: 1, value: 1.0 },
                FeatureEntry { field: 0, index: 2, value: 1.0 },
            ],
        };
        assert!(fv.validate(10, 2).is_err());
        let fv2 = FeatureVector {
            entries: vec![FeatureEntry { field: 0, index: 11, value: 1.0 }],
        };
        assert!(fv2.validate(10, 2).is_err());
    }

    proptest! {
        #[test]
        fn day_slot_is_monotone_and_saturates(a in 0i64..4_000_000, b in 0i64..4_000_000, t in 1u32..10) {
            let cfg = cfg(t);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let sa = day_slot(lo, &cfg).unwrap();
            let sb = day_slot(hi, &cfg).unwrap();
            prop_assert!(sa <= sb);
            prop_assert!(sb <= cfg.overflow_slot());
        }

        #[test]
        fn partition_is_an_exact_three_coloring(flags in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
            let batch: Vec<ObservedSample> = flags
                .iter()
                .map(|&(clicked, conv)| sample(clicked, clicked && conv))
                .collect();
            let parts = partition(&batch).unwrap();
            let mut merged: Vec<usize> = parts
                .converted.iter()
                .chain(parts.pending.iter())
                .chain(parts.unclicked.iter())
                .copied()
                .collect();
            merged.sort_unstable();
            prop_assert_eq!(merged, (0..batch.len()).collect::<Vec<_>>());
        }
    }
}
