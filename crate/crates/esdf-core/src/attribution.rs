//! Label construction by replaying a log against an observation date.
//!
//! A snapshot sees only what had happened by `observe_ts`: a conversion is
//! observed iff its timestamp is at or before the observation date (boundary
//! ties count as observed), and records clicked after the observation date do
//! not exist yet. Each [`LabelPolicy`] post-processes those raw observations
//! into the labels one of the compared training schemes would use.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::event::{day_slot, elapsed_slots, EventLog, ObservedSample, SlotConfig};

/// Labeling policy of a training (or evaluation) snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Conversions unobserved within the first day after the click are
    /// negatives; elapsed time is discarded. `calendar_day` switches the
    /// "first day" from 24h-after-click to the click's calendar day.
    EsmmDay1 { calendar_day: bool },
    /// Like a fully matured hard-label set: clicked samples that are still
    /// unconverted but not yet fully matured are removed entirely.
    NaiveDrop,
    /// Hard labels re-matured up to the observation date; elapsed time is
    /// discarded.
    Shift,
    /// Censored labels: observed-conversion flag, elapsed slots, delay slot.
    FullCensored,
    /// Evaluation labels: converted within `window_days` slots of the click,
    /// independent of the observation date.
    GroundTruth { window_days: u32 },
}

impl fmt::Display for LabelPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelPolicy::EsmmDay1 { calendar_day: false } => write!(f, "esmm-day1"),
            LabelPolicy::EsmmDay1 { calendar_day: true } => write!(f, "esmm-calendar-day1"),
            LabelPolicy::NaiveDrop => write!(f, "naive-drop"),
            LabelPolicy::Shift => write!(f, "shift"),
            LabelPolicy::FullCensored => write!(f, "full-censored"),
            LabelPolicy::GroundTruth { window_days } => write!(f, "ground-truth:{window_days}"),
        }
    }
}

impl FromStr for LabelPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "esmm-day1" => Ok(LabelPolicy::EsmmDay1 { calendar_day: false }),
            "esmm-calendar-day1" => Ok(LabelPolicy::EsmmDay1 { calendar_day: true }),
            "naive-drop" => Ok(LabelPolicy::NaiveDrop),
            "shift" => Ok(LabelPolicy::Shift),
            "full-censored" => Ok(LabelPolicy::FullCensored),
            _ => {
                if let Some(w) = s.strip_prefix("ground-truth:") {
                    let window_days = w
                        .parse()
                        .map_err(|_| Error::Config(format!("bad ground-truth window {w:?}")))?;
                    Ok(LabelPolicy::GroundTruth { window_days })
                } else {
                    Err(Error::Config(format!("unknown label policy {s:?}")))
                }
            }
        }
    }
}

/// A labeled view of a log at one observation date.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub policy: LabelPolicy,
    pub observe_ts: i64,
    pub slot: SlotConfig,
    pub samples: Vec<ObservedSample>,
    pub warning: Option<String>,
}

/// Replays `log` at `observe_ts` and labels it under `policy`.
///
/// Records clicked after `observe_ts` are excluded. If the observation date
/// precedes the earliest click the snapshot is empty and carries a warning.
pub fn snapshot(
    log: &EventLog,
    observe_ts: i64,
    policy: LabelPolicy,
    cfg: &SlotConfig,
) -> Result<Snapshot> {
    cfg.validate()?;
    let sps = cfg.seconds_per_slot;
    let first_click = log.records.iter().filter_map(|r| r.click_ts).min();
    if let Some(first) = first_click {
        if observe_ts < first {
            return Ok(Snapshot {
                policy,
                observe_ts,
                slot: *cfg,
                samples: Vec::new(),
                warning: Some(format!(
                    "observation date {observe_ts} precedes the first click {first}; snapshot is empty"
                )),
            });
        }
    }

    let mut samples = Vec::with_capacity(log.records.len());
    for (idx, record) in log.records.iter().enumerate() {
        record.validate()?;
        if !record.clicked {
            samples.push(ObservedSample {
                record: idx,
                clicked: false,
                converted: false,
                elapsed_slots: None,
                delay_slot: None,
                elapsed_units: None,
                delay_units: None,
                weight: 0.0,
            });
            continue;
        }
        let click = record.click_ts.expect("validated clicked record");
        if click > observe_ts {
            continue; // not in this snapshot's past
        }
        // Raw observation: a conversion is visible iff it happened by the
        // observation date (ties included).
        let visible_conv = record.conversion_ts.filter(|&c| c <= observe_ts);
        let converted = visible_conv.is_some();
        let elapsed = elapsed_slots(click, observe_ts, cfg)?;
        let delay = visible_conv.map(|c| day_slot(c - click, cfg)).transpose()?;
        let elapsed_units = (observe_ts - click) as f64 / sps as f64;
        let delay_units = visible_conv.map(|c| (c - click) as f64 / sps as f64);

        let sample = match policy {
            LabelPolicy::FullCensored => ObservedSample {
                record: idx,
                clicked: true,
                converted,
                elapsed_slots: Some(elapsed),
                delay_slot: delay,
                elapsed_units: Some(elapsed_units),
                delay_units,
                weight: if converted { 1.0 } else { 0.0 },
            },
            LabelPolicy::EsmmDay1 { calendar_day } => {
                let day_end = if calendar_day {
                    (click.div_euclid(sps) + 1) * sps
                } else {
                    click + sps
                };
                let within_day1 = visible_conv.map(|c| c < day_end).unwrap_or(false);
                ObservedSample {
                    record: idx,
                    clicked: true,
                    converted: within_day1,
                    elapsed_slots: None,
                    delay_slot: None,
                    elapsed_units: None,
                    delay_units: None,
                    weight: if within_day1 { 1.0 } else { 0.0 },
                }
            }
            LabelPolicy::NaiveDrop => {
                if !converted && elapsed < cfg.overflow_slot() {
                    continue; // immature negative: might still convert
                }
                ObservedSample {
                    record: idx,
                    clicked: true,
                    converted,
                    elapsed_slots: Some(elapsed),
                    delay_slot: delay,
                    elapsed_units: Some(elapsed_units),
                    delay_units,
                    weight: if converted { 1.0 } else { 0.0 },
                }
            }
            LabelPolicy::Shift => ObservedSample {
                record: idx,
                clicked: true,
                converted,
                elapsed_slots: None,
                delay_slot: None,
                elapsed_units: None,
                delay_units: None,
                weight: if converted { 1.0 } else { 0.0 },
            },
            LabelPolicy::GroundTruth { window_days } => {
                let in_window = record
                    .conversion_ts
                    .map(|c| c - click <= i64::from(window_days) * sps)
                    .unwrap_or(false);
                let d = if in_window {
                    Some(day_slot(record.conversion_ts.unwrap() - click, cfg)?)
                } else {
                    None
                };
                ObservedSample {
                    record: idx,
                    clicked: true,
                    converted: in_window,
                    elapsed_slots: Some(cfg.overflow_slot()),
                    delay_slot: d,
                    elapsed_units: None,
                    delay_units: d
                        .map(|_| (record.conversion_ts.unwrap() - click) as f64 / sps as f64),
                    weight: if in_window { 1.0 } else { 0.0 },
                }
            }
        };
        samples.push(sample);
    }
    Ok(Snapshot {
        policy,
        observe_ts,
        slot: *cfg,
        samples,
        warning: None,
    })
}

/// Normalized histogram of observed delay slots over converted samples.
pub fn delay_histogram(samples: &[ObservedSample], num_bins: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; num_bins];
    let mut total = 0usize;
    for sample in samples {
        if !sample.converted {
            continue;
        }
        let d = sample.delay_slot.ok_or_else(|| {
            Error::InvalidInput("converted sample without a delay slot".into())
        })? as usize;
        if d >= num_bins {
            return Err(Error::InvalidInput(format!(
                "delay slot {d} out of range for {num_bins} bins"
            )));
        }
        counts[d] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "delay histogram of a snapshot without conversions".into(),
        ));
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}
