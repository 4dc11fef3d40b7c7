//! Synthetic event-log generator with known ground truth.
//!
//! Every record's true click probability, conversion probability, and delay
//! distribution are explicit functions of its sampled sparse features, so the
//! generator doubles as the verification oracle for the posterior weights and
//! the trained models. Features are one-hot per field with Zipf-distributed
//! indices to mimic sparse ID features; the delay distribution is a
//! feature-dependent categorical (deliberately not exponential).
//!
//! Generation is deterministic per record: each record draws from its own
//! seeded stream, so output is independent of chunking and thread count, and
//! disjoint record ranges of one logical dataset can be generated in separate
//! runs via `record_offset`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{EventLog, EventRecord, FeatureEntry, FeatureVector, SlotConfig};
use crate::model::survival_tail;
use crate::par::{self, derive_seed, Exec};

const STREAM_RECORD: u64 = 0x5245_434f_5244;
const STREAM_WEIGHTS: u64 = 0x5745_4947_4854;
const STREAM_REQUEST: u64 = 0x5245_5155_4553;
const STREAM_CALIBRATE: u64 = 0x4341_4c49_4252;

/// Generator configuration: the true world.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub n_impressions: usize,
    pub feature_dim: usize,
    pub n_fields: usize,
    pub slot: SlotConfig,
    /// Per-feature click logit weights, length `feature_dim`.
    pub ctr_weights: Vec<f64>,
    /// Per-feature conversion logit weights, length `feature_dim`.
    pub cvr_weights: Vec<f64>,
    /// Per-feature delay logit rows, row-major `feature_dim x num_bins`.
    pub delay_weights: Vec<f64>,
    /// Global delay logit bias, length `num_bins`; the slot-0 bias is the
    /// knob that sets the first-day conversion mass.
    pub delay_bias: Vec<f64>,
    /// Intended fraction of conversions landing in slot 0.
    pub day1_mass_target: f64,
    pub seed: u64,
    /// Global index of the first generated record; lets separate runs emit
    /// disjoint ranges of the same world.
    pub record_offset: u64,
    /// Click timestamps are uniform in `[start_ts, start_ts + span_secs)`.
    pub start_ts: i64,
    pub span_secs: i64,
    /// Impressions are grouped into requests within buckets of this size;
    /// each bucket is split into two requests at a seeded point.
    pub request_bucket: u64,
    /// Zipf exponent for per-field feature index sampling.
    pub zipf_exponent: f64,
}

impl GenConfig {
    /// Builds a config with a randomly sampled world for the given seed.
    ///
    /// The sampled world gives roughly 30% clicks and 25% conversions per
    /// click, and couples the delay shape to the conversion weights: features
    /// that raise the conversion probability shift delay mass out of slot 0
    /// into a mid-range bump. Slow-converting items are therefore exactly the
    /// ones a short attribution window mislabels, and the delay shape varies
    /// by feature in a way no single-rate exponential can track.
    pub fn sampled(
        n_impressions: usize,
        feature_dim: usize,
        n_fields: usize,
        slot: SlotConfig,
        seed: u64,
        day1_mass_target: f64,
    ) -> Result<Self> {
        let num_bins = slot.num_bins();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_WEIGHTS));
        let ctr_weights: Vec<f64> = (0..feature_dim).map(|_| rng.gen_range(-0.55..0.34)).collect();
        let cvr_weights: Vec<f64> = (0..feature_dim).map(|_| rng.gen_range(-0.64..0.37)).collect();
        let cvr_mean = (-0.64 + 0.37) / 2.0;

        let bump_slot = if num_bins > 4 { 3 } else { 1 };
        let mut delay_weights = vec![0.0; feature_dim * num_bins];
        for k in 0..feature_dim {
            let dev = cvr_weights[k] - cvr_mean;
            for j in 1..num_bins {
                let noise = rng.gen_range(-0.15..0.15);
                delay_weights[k * num_bins + j] = if j == bump_slot {
                    0.8 * dev + noise
                } else {
                    noise + rng.gen_range(-0.2..0.2)
                };
            }
            // Slot 0 moves against the conversion weight: good converters
            // convert late.
            delay_weights[k * num_bins] = -dev + rng.gen_range(-0.15..0.15);
        }

        let mut delay_bias = vec![0.0; num_bins];
        for (j, b) in delay_bias.iter_mut().enumerate().skip(1) {
            *b = -0.35 * j as f64
                + if j == bump_slot { 0.55 } else { 0.0 }
                + if j == num_bins - 1 { -0.8 } else { 0.0 };
        }
        delay_bias[0] = calibrate_slot0_bias(
            &delay_bias,
            &delay_weights,
            &ctr_weights,
            &cvr_weights,
            feature_dim,
            n_fields,
            zipf_exponent_default(),
            day1_mass_target,
            seed,
        );

        let cfg = Self {
            n_impressions,
            feature_dim,
            n_fields,
            slot,
            ctr_weights,
            cvr_weights,
            delay_weights,
            delay_bias,
            day1_mass_target,
            seed,
            record_offset: 0,
            start_ts: 0,
            span_secs: 7 * slot.seconds_per_slot,
            request_bucket: 8,
            zipf_exponent: zipf_exponent_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.slot.validate()?;
        let num_bins = self.slot.num_bins();
        if self.n_impressions == 0 {
            return Err(Error::Config("n_impressions must be positive".into()));
        }
        if self.n_fields == 0 || self.feature_dim % self.n_fields != 0 {
            return Err(Error::Config(format!(
                "feature_dim {} must be a positive multiple of n_fields {}",
                self.feature_dim, self.n_fields
            )));
        }
        if self.ctr_weights.len() != self.feature_dim || self.cvr_weights.len() != self.feature_dim {
            return Err(Error::Config("weight vectors must have length feature_dim".into()));
        }
        if self.delay_weights.len() != self.feature_dim * num_bins {
            return Err(Error::Config("delay_weights must be feature_dim x num_bins".into()));
        }
        if self.delay_bias.len() != num_bins {
            return Err(Error::Config("delay_bias must have length num_bins".into()));
        }
        if !(self.day1_mass_target > 0.0 && self.day1_mass_target < 1.0) {
            return Err(Error::Config("day1_mass_target must be in (0,1)".into()));
        }
        if self.span_secs <= 0 {
            return Err(Error::Config("span_secs must be positive".into()));
        }
        if self.request_bucket < 2 {
            return Err(Error::Config("request_bucket must be >= 2".into()));
        }
        if self.zipf_exponent <= 0.0 {
            return Err(Error::Config("zipf_exponent must be positive".into()));
        }
        Ok(())
    }

    fn values_per_field(&self) -> usize {
        self.feature_dim / self.n_fields
    }
}

/// The generator's latent truth for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub clicked: bool,
    pub ctr_prob: f64,
    pub cvr_prob: f64,
    /// True delay distribution over the `T + 2` slots.
    pub delay_dist: Vec<f64>,
    /// Latent eventual-conversion flag (defined given a click).
    pub converts: bool,
    /// Latent delay slot, present iff `converts`.
    pub delay_slot: Option<u32>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn zipf_exponent_default() -> f64 {
    1.07
}

fn sample_field_indices(
    rng: &mut ChaCha8Rng,
    n_fields: usize,
    values_per_field: usize,
    zipf: &[f64],
) -> Vec<usize> {
    (0..n_fields)
        .map(|field| {
            let u: f64 = rng.gen();
            let k = zipf.partition_point(|&c| c < u).min(values_per_field - 1);
            field * values_per_field + k
        })
        .collect()
}

/// Solves for the slot-0 bias that hits the target first-day share of
/// *conversions* (one-knob calibration, bisection on a seeded feature
/// sample). Probes are weighted by click-and-convert probability because the
/// day-1 share is measured over conversions, which lean toward high-cvr
/// feature combinations.
#[allow(clippy::too_many_arguments)]
fn calibrate_slot0_bias(
    delay_bias: &[f64],
    delay_weights: &[f64],
    ctr_weights: &[f64],
    cvr_weights: &[f64],
    feature_dim: usize,
    n_fields: usize,
    zipf_exponent: f64,
    target: f64,
    seed: u64,
) -> f64 {
    let num_bins = delay_bias.len();
    let vpf = feature_dim / n_fields;
    let zipf = zipf_cdf(vpf, zipf_exponent);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_CALIBRATE));
    // Per probe: conversion weight, exp of the slot-0 feature logit, summed
    // exp of the other slots (bias included); mass0(b0) is monotone in b0.
    let probes: Vec<(f64, f64, f64)> = (0..4_000)
        .map(|_| {
            let indices = sample_field_indices(&mut rng, n_fields, vpf, &zipf);
            let mut slot0 = 0.0;
            let mut rest = 0.0;
            let mut ctr_logit = 0.0;
            let mut cvr_logit = 0.0;
            for j in 1..num_bins {
                let mut logit = delay_bias[j];
                for &idx in &indices {
                    logit += delay_weights[idx * num_bins + j];
                }
                rest += logit.exp();
            }
            for &idx in &indices {
                slot0 += delay_weights[idx * num_bins];
                ctr_logit += ctr_weights[idx];
                cvr_logit += cvr_weights[idx];
            }
            (sigmoid(ctr_logit) * sigmoid(cvr_logit), slot0.exp(), rest)
        })
        .collect();
    let conversion_mass0 = |b0: f64| {
        let e = b0.exp();
        let mut weighted = 0.0;
        let mut weight = 0.0;
        for &(w, c, s) in &probes {
            weighted += w * c * e / (c * e + s);
            weight += w;
        }
        weighted / weight
    };
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if conversion_mass0(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Zipf cumulative table shared by all fields.
fn zipf_cdf(n: usize, exponent: f64) -> Vec<f64> {
    let mut cdf: Vec<f64> = (0..n).map(|k| 1.0 / ((k + 1) as f64).powf(exponent)).collect();
    let total: f64 = cdf.iter().sum();
    let mut acc = 0.0;
    for w in &mut cdf {
        acc += *w / total;
        *w = acc;
    }
    cdf
}

fn one_record(cfg: &GenConfig, zipf: &[f64], global_index: u64) -> (EventRecord, GroundTruth) {
    let num_bins = cfg.slot.num_bins();
    let vpf = cfg.values_per_field();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        derive_seed(cfg.seed, STREAM_RECORD),
        global_index,
    ));

    let entries: Vec<FeatureEntry> = sample_field_indices(&mut rng, cfg.n_fields, vpf, zipf)
        .into_iter()
        .enumerate()
        .map(|(field, index)| FeatureEntry {
            field: field as u32,
            index: index as u32,
            value: 1.0,
        })
        .collect();

    let mut ctr_logit = 0.0;
    let mut cvr_logit = 0.0;
    let mut delay_logits = cfg.delay_bias.clone();
    for entry in &entries {
        let idx = entry.index as usize;
        ctr_logit += cfg.ctr_weights[idx] * entry.value;
        cvr_logit += cfg.cvr_weights[idx] * entry.value;
        for j in 0..num_bins {
            delay_logits[j] += cfg.delay_weights[idx * num_bins + j] * entry.value;
        }
    }
    let ctr_prob = sigmoid(ctr_logit);
    let cvr_prob = sigmoid(cvr_logit);
    let delay_dist = softmax(&delay_logits);

    let impression_ts = cfg.start_ts + rng.gen_range(0..cfg.span_secs);
    let clicked = rng.gen::<f64>() < ctr_prob;

    let mut converts = false;
    let mut delay_slot = None;
    let mut conversion_ts = None;
    if clicked {
        converts = rng.gen::<f64>() < cvr_prob;
        if converts {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut slot = num_bins - 1;
            for (j, mass) in delay_dist.iter().enumerate() {
                acc += mass;
                if u < acc {
                    slot = j;
                    break;
                }
            }
            let jitter = rng.gen_range(0..cfg.slot.seconds_per_slot);
            delay_slot = Some(slot as u32);
            conversion_ts =
                Some(impression_ts + slot as i64 * cfg.slot.seconds_per_slot + jitter);
        }
    }

    let bucket = global_index / cfg.request_bucket;
    let split = 1 + derive_seed(derive_seed(cfg.seed, STREAM_REQUEST), bucket)
        % (cfg.request_bucket - 1);
    let sub = u8::from(global_index % cfg.request_bucket >= split);
    let record = EventRecord {
        request_id: format!("q{bucket}_{sub}"),
        sample_id: format!("s{global_index}"),
        features: FeatureVector { entries },
        clicked,
        click_ts: clicked.then_some(impression_ts),
        conversion_ts,
    };
    let truth = GroundTruth {
        clicked,
        ctr_prob,
        cvr_prob,
        delay_dist,
        converts,
        delay_slot,
    };
    (record, truth)
}

/// Generates the configured log and its ground truth.
pub fn generate(cfg: &GenConfig) -> Result<(EventLog, Vec<GroundTruth>)> {
    generate_with(cfg, Exec::Auto, par::DEFAULT_CHUNK)
}

/// [`generate`] with explicit execution mode and chunk size. Output is
/// identical for every mode and chunk size.
pub fn generate_with(
    cfg: &GenConfig,
    exec: Exec,
    chunk: usize,
) -> Result<(EventLog, Vec<GroundTruth>)> {
    cfg.validate()?;
    let zipf = zipf_cdf(cfg.values_per_field(), cfg.zipf_exponent);
    let parts = par::map_ranges(exec, cfg.n_impressions, chunk, |range| {
        range
            .map(|i| one_record(cfg, &zipf, cfg.record_offset + i as u64))
            .collect::<Vec<_>>()
    });
    let mut records = Vec::with_capacity(cfg.n_impressions);
    let mut truths = Vec::with_capacity(cfg.n_impressions);
    for part in parts {
        for (record, truth) in part {
            records.push(record);
            truths.push(truth);
        }
    }
    Ok((
        EventLog {
            feature_dim: cfg.feature_dim,
            n_fields: cfg.n_fields,
            records,
        },
        truths,
    ))
}

/// True posterior probability that a clicked record still unconverted after
/// `elapsed` slots will eventually convert, computed from ground truth alone.
pub fn oracle_posterior(truth: &GroundTruth, elapsed: u32) -> Result<f64> {
    if !truth.clicked {
        return Err(Error::InvalidInput(
            "posterior oracle requires a clicked record".into(),
        ));
    }
    let tail = survival_tail(&truth.delay_dist, elapsed)?;
    let cvr = truth.cvr_prob;
    let denom = 1.0 - cvr + cvr * tail;
    if denom <= 0.0 {
        return Err(Error::Numerical(format!(
            "posterior denominator {denom} is not positive"
        )));
    }
    Ok(cvr * tail / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_world(n: usize, seed: u64) -> GenConfig {
        let slot = SlotConfig::default();
        let num_bins = slot.num_bins();
        GenConfig {
            n_impressions: n,
            feature_dim: 8,
            n_fields: 2,
            slot,
            ctr_weights: vec![0.0; 8],
            cvr_weights: vec![0.0; 8],
            delay_weights: vec![0.0; 8 * num_bins],
            delay_bias: vec![0.0; num_bins],
            day1_mass_target: 1.0 / num_bins as f64,
            seed,
            record_offset: 0,
            start_ts: 0,
            span_secs: 7 * 86_400,
            request_bucket: 8,
            zipf_exponent: 1.07,
        }
    }

    #[test]
    fn zero_weights_give_half_click_rate() {
        let cfg = zero_world(20_000, 3);
        let (log, _) = generate(&cfg).unwrap();
        let rate = log.records.iter().filter(|r| r.clicked).count() as f64 / 20_000.0;
        let sigma = (0.25f64 / 20_000.0).sqrt();
        assert!((rate - 0.5).abs() < 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn sampled_world_puts_about_eighty_percent_of_conversions_on_day_one() {
        let cfg = GenConfig::sampled(100_000, 800, 8, SlotConfig::default(), 7, 0.8).unwrap();
        let (_, truths) = generate(&cfg).unwrap();
        let conversions: Vec<u32> = truths.iter().filter_map(|t| t.delay_slot).collect();
        assert!(conversions.len() > 1_000);
        let day1 = conversions.iter().filter(|&&d| d == 0).count() as f64
            / conversions.len() as f64;
        assert!((0.75..=0.85).contains(&day1), "slot-0 mass {day1}");
    }

    #[test]
    fn fixed_seed_is_reproducible_and_shard_independent() {
        let cfg = GenConfig::sampled(2_000, 120, 4, SlotConfig::default(), 11, 0.8).unwrap();
        let base = generate(&cfg).unwrap();
        assert_eq!(base, generate(&cfg).unwrap());
        for chunk in [1, 7, 256, 4_096] {
            assert_eq!(base, generate_with(&cfg, Exec::Sequential, chunk).unwrap());
            assert_eq!(base, generate_with(&cfg, Exec::Auto, chunk).unwrap());
        }
    }

    #[test]
    fn record_offset_extends_the_same_world() {
        let mut a = GenConfig::sampled(100, 120, 4, SlotConfig::default(), 5, 0.8).unwrap();
        a.n_impressions = 60;
        let mut b = a.clone();
        b.record_offset = 60;
        b.n_impressions = 40;
        let (la, _) = generate(&a).unwrap();
        let (lb, _) = generate(&b).unwrap();
        let mut full_cfg = a.clone();
        full_cfg.n_impressions = 100;
        let (full, _) = generate(&full_cfg).unwrap();
        let joined: Vec<_> = la.records.iter().chain(lb.records.iter()).collect();
        assert_eq!(joined.len(), full.records.len());
        for (j, f) in joined.iter().zip(full.records.iter()) {
            assert_eq!(*j, f);
        }
    }

    #[test]
    fn truth_distributions_are_normalized_and_consistent() {
        let cfg = GenConfig::sampled(3_000, 120, 4, SlotConfig::default(), 2, 0.8).unwrap();
        let (log, truths) = generate(&cfg).unwrap();
        log.validate().unwrap();
        for (record, truth) in log.records.iter().zip(&truths) {
            assert!((truth.delay_dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(record.clicked, truth.clicked);
            if truth.converts {
                assert!(truth.clicked);
                let d = truth.delay_slot.unwrap();
                let conv = record.conversion_ts.unwrap();
                let click = record.click_ts.unwrap();
                assert_eq!(
                    crate::event::day_slot(conv - click, &cfg.slot).unwrap(),
                    d
                );
            } else {
                assert!(truth.delay_slot.is_none());
                assert!(record.conversion_ts.is_none());
            }
        }
    }

    #[test]
    fn oracle_posterior_limits_and_hand_value() {
        let gt = |cvr: f64, dist: Vec<f64>| GroundTruth {
            clicked: true,
            ctr_prob: 0.5,
            cvr_prob: cvr,
            delay_dist: dist,
            converts: false,
            delay_slot: None,
        };
        // All mass after slot 0: the posterior reduces to the prior.
        let before = gt(0.3, vec![0.0, 0.4, 0.3, 0.3, 0.0, 0.0, 0.0, 0.0]);
        assert!((oracle_posterior(&before, 0).unwrap() - 0.3).abs() < 1e-12);
        // No remaining mass: the posterior is 0.
        let after = gt(0.3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(oracle_posterior(&after, 7).unwrap(), 0.0);
        // cvr 0.2 with tail 0.5: 0.1 / (0.8 + 0.1).
        let mid = gt(0.2, vec![0.5, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let w = oracle_posterior(&mid, 0).unwrap();
        assert!((w - 0.1 / 0.9).abs() < 1e-12);
        // Unclicked records are a domain error.
        let mut unclicked = gt(0.2, vec![1.0; 1]);
        unclicked.clicked = false;
        assert!(oracle_posterior(&unclicked, 0).is_err());
    }

    #[test]
    fn oracle_posterior_matches_monte_carlo_frequencies() {
        // Single-feature world: every record shares one true distribution, so
        // conditional frequencies can be read off the log directly.
        let slot = SlotConfig::default();
        let num_bins = slot.num_bins();
        let mut cfg = zero_world(60_000, 17);
        cfg.feature_dim = 1;
        cfg.n_fields = 1;
        cfg.ctr_weights = vec![0.8];
        cfg.cvr_weights = vec![0.1];
        cfg.delay_weights = vec![0.0; num_bins];
        cfg.delay_bias = (0..num_bins).map(|j| -0.3 * j as f64).collect();
        let (log, truths) = generate(&cfg).unwrap();
        let shared = truths.iter().find(|t| t.clicked).unwrap().clone();
        for elapsed in [1u32, 3, 5] {
            let horizon = elapsed as i64 * slot.seconds_per_slot;
            let mut pending = 0usize;
            let mut eventual = 0usize;
            for (record, truth) in log.records.iter().zip(&truths) {
                if !record.clicked {
                    continue;
                }
                let converted_by = truth
                    .delay_slot
                    .map(|_| record.conversion_ts.unwrap() - record.click_ts.unwrap() < horizon)
                    .unwrap_or(false);
                if !converted_by {
                    pending += 1;
                    if truth.converts {
                        eventual += 1;
                    }
                }
            }
            // Delays are compared against a whole number of slots, so the
            // pending set at `horizon` is exactly {delay_slot >= elapsed}.
            let w_true = oracle_posterior(&shared, elapsed - 1).unwrap();
            let freq = eventual as f64 / pending as f64;
            let sigma = (w_true * (1.0 - w_true) / pending as f64).sqrt();
            assert!(
                (freq - w_true).abs() < 3.0 * sigma,
                "elapsed {elapsed}: freq {freq} vs true {w_true} (sigma {sigma})"
            );
        }
    }
}
