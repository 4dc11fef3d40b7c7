//! Line-oriented data file formats.
//!
//! Every file starts with a versioned magic line, then `#`-prefixed header
//! lines (tool version, resolved config echo, dimension declarations), then
//! one tab-separated record per line. Floats are written with Rust's
//! shortest-round-trip formatting, so write/parse is lossless and rewriting
//! the same data is byte-identical.
//!
//! Event log row: `request_id  sample_id  y  click_ts  conversion_ts
//! features`, where timestamps are empty when undefined and `features` is a
//! space-separated list of `field:index:value` triples.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::attribution::{LabelPolicy, Snapshot};
use crate::error::{Error, Result};
use crate::event::{EventLog, EventRecord, FeatureEntry, FeatureVector, SlotConfig};
use crate::synth::GroundTruth;

pub const LOG_MAGIC: &str = "#esdf-log v1";
pub const TRUTH_MAGIC: &str = "#esdf-truth v1";
pub const SNAPSHOT_MAGIC: &str = "#esdf-snapshot v1";
pub const REPORT_MAGIC: &str = "#esdf-report v1";
pub const HISTORY_MAGIC: &str = "#esdf-history v1";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: FromStr>(s: &str, path: &Path, line: usize, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(path, line, format!("bad {what}: {s:?}")))
}

fn parse_flag(s: &str, path: &Path, line: usize, what: &str) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(parse_err(path, line, format!("bad {what}: {s:?}"))),
    }
}

fn opt_ts(s: &str, path: &Path, line: usize, what: &str) -> Result<Option<i64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_num(s, path, line, what).map(Some)
    }
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Parses `key=value` pairs from a `#`-header payload.
fn parse_kv(payload: &str) -> HashMap<String, String> {
    payload
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn record_columns(record: &EventRecord) -> String {
    let feats = record
        .features
        .entries
        .iter()
        .map(|f| format!("{}:{}:{}", f.field, f.index, f.value))
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        record.request_id,
        record.sample_id,
        record.clicked as u8,
        fmt_opt(record.click_ts),
        fmt_opt(record.conversion_ts),
        feats
    )
}

fn parse_record_columns(cols: &[&str], path: &Path, line: usize) -> Result<EventRecord> {
    if cols.len() < 6 {
        return Err(parse_err(path, line, "expected at least 6 columns"));
    }
    let clicked = parse_flag(cols[2], path, line, "click flag")?;
    let mut entries = Vec::new();
    if !cols[5].is_empty() {
        for triple in cols[5].split(' ') {
            let mut it = triple.split(':');
            let (f, i, v) = (it.next(), it.next(), it.next());
            match (f, i, v, it.next()) {
                (Some(f), Some(i), Some(v), None) => entries.push(FeatureEntry {
                    field: parse_num(f, path, line, "feature field")?,
                    index: parse_num(i, path, line, "feature index")?,
                    value: parse_num(v, path, line, "feature value")?,
                }),
                _ => return Err(parse_err(path, line, format!("bad feature triple {triple:?}"))),
            }
        }
    }
    let record = EventRecord {
        request_id: cols[0].to_string(),
        sample_id: cols[1].to_string(),
        features: FeatureVector { entries },
        clicked,
        click_ts: opt_ts(cols[3], path, line, "click_ts")?,
        conversion_ts: opt_ts(cols[4], path, line, "conversion_ts")?,
    };
    record.validate().map_err(|e| parse_err(path, line, e.to_string()))?;
    Ok(record)
}

/// Writes an event log. `extra_headers` (tool/config echo lines, without the
/// leading `#`) are emitted between the magic and the dims line.
pub fn write_event_log(path: &Path, log: &EventLog, extra_headers: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{LOG_MAGIC}")?;
    for h in extra_headers {
        writeln!(w, "#{h}")?;
    }
    writeln!(w, "#dims feature_dim={} n_fields={}", log.feature_dim, log.n_fields)?;
    for record in &log.records {
        writeln!(w, "{}", record_columns(record))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an event log, returning it together with the raw header lines
/// (magic and `#` lines, in file order).
pub fn read_event_log(path: &Path) -> Result<(EventLog, Vec<String>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut headers = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line != LOG_MAGIC {
                return Err(parse_err(path, lineno, format!("expected magic {LOG_MAGIC:?}")));
            }
            headers.push(line);
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(payload) = rest.strip_prefix("dims ") {
                let kv = parse_kv(payload);
                let fd = kv.get("feature_dim").ok_or_else(|| parse_err(path, lineno, "missing feature_dim"))?;
                let nf = kv.get("n_fields").ok_or_else(|| parse_err(path, lineno, "missing n_fields"))?;
                dims = Some((
                    parse_num(fd, path, lineno, "feature_dim")?,
                    parse_num(nf, path, lineno, "n_fields")?,
                ));
            }
            headers.push(line);
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        records.push(parse_record_columns(&cols, path, lineno)?);
    }
    let (feature_dim, n_fields) =
        dims.ok_or_else(|| parse_err(path, 0, "missing #dims header"))?;
    let log = EventLog { feature_dim, n_fields, records };
    log.validate()?;
    Ok((log, headers))
}

/// Writes the ground-truth companion file of a generated log. Rows are keyed
/// by sample id and aligned with the log by construction.
pub fn write_truth(path: &Path, log: &EventLog, truths: &[GroundTruth], extra_headers: &[String]) -> Result<()> {
    if log.records.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "log has {} records but {} truth rows",
            log.records.len(),
            truths.len()
        )));
    }
    let num_bins = truths.first().map(|t| t.delay_dist.len()).unwrap_or(0);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRUTH_MAGIC}")?;
    for h in extra_headers {
        writeln!(w, "#{h}")?;
    }
    writeln!(w, "#dims num_bins={num_bins}")?;
    for (record, truth) in log.records.iter().zip(truths) {
        let dist = truth
            .delay_dist
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            record.sample_id,
            truth.clicked as u8,
            truth.ctr_prob,
            truth.cvr_prob,
            truth.converts as u8,
            fmt_opt(truth.delay_slot),
            dist
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a ground-truth file as `(sample_id, truth)` rows.
pub fn read_truth(path: &Path) -> Result<Vec<(String, GroundTruth)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line != TRUTH_MAGIC {
                return Err(parse_err(path, lineno, format!("expected magic {TRUTH_MAGIC:?}")));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(parse_err(path, lineno, "expected 7 columns"));
        }
        let delay_dist = if cols[6].is_empty() {
            Vec::new()
        } else {
            cols[6]
                .split(' ')
                .map(|s| parse_num(s, path, lineno, "delay mass"))
                .collect::<Result<Vec<f64>>>()?
        };
        let delay_slot = if cols[5].is_empty() {
            None
        } else {
            Some(parse_num(cols[5], path, lineno, "delay slot")?)
        };
        rows.push((
            cols[0].to_string(),
            GroundTruth {
                clicked: parse_flag(cols[1], path, lineno, "clicked")?,
                ctr_prob: parse_num(cols[2], path, lineno, "ctr_prob")?,
                cvr_prob: parse_num(cols[3], path, lineno, "cvr_prob")?,
                converts: parse_flag(cols[4], path, lineno, "converts")?,
                delay_slot,
                delay_dist,
            },
        ));
    }
    Ok(rows)
}

/// Writes a labeled snapshot: the event-log columns of each retained record
/// extended with observed-label columns `z`, `e`, `d`.
pub fn write_snapshot(
    path: &Path,
    log: &EventLog,
    snap: &Snapshot,
    extra_headers: &[String],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SNAPSHOT_MAGIC}")?;
    for h in extra_headers {
        writeln!(w, "#{h}")?;
    }
    writeln!(w, "#dims feature_dim={} n_fields={}", log.feature_dim, log.n_fields)?;
    writeln!(
        w,
        "#snapshot policy={} observe_ts={} max_delay_days={} seconds_per_slot={}",
        snap.policy, snap.observe_ts, snap.slot.max_delay_days, snap.slot.seconds_per_slot
    )?;
    for sample in &snap.samples {
        let record = &log.records[sample.record];
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            record_columns(record),
            sample.converted as u8,
            fmt_opt(sample.elapsed_slots),
            fmt_opt(sample.delay_slot),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot file back into a standalone log plus its samples
/// (sample `record` indices point into the returned log).
pub fn read_snapshot(path: &Path) -> Result<(EventLog, Snapshot)> {
    let reader = BufReader::new(File::open(path)?);
    let mut dims: Option<(usize, usize)> = None;
    let mut meta: Option<(LabelPolicy, i64, SlotConfig)> = None;
    let mut records = Vec::new();
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line != SNAPSHOT_MAGIC {
                return Err(parse_err(path, lineno, format!("expected magic {SNAPSHOT_MAGIC:?}")));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(payload) = rest.strip_prefix("dims ") {
                let kv = parse_kv(payload);
                dims = Some((
                    parse_num(kv.get("feature_dim").map(String::as_str).unwrap_or(""), path, lineno, "feature_dim")?,
                    parse_num(kv.get("n_fields").map(String::as_str).unwrap_or(""), path, lineno, "n_fields")?,
                ));
            } else if let Some(payload) = rest.strip_prefix("snapshot ") {
                let kv = parse_kv(payload);
                let policy: LabelPolicy = kv
                    .get("policy")
                    .ok_or_else(|| parse_err(path, lineno, "missing policy"))?
                    .parse()
                    .map_err(|e: Error| parse_err(path, lineno, e.to_string()))?;
                let observe_ts = parse_num(
                    kv.get("observe_ts").map(String::as_str).unwrap_or(""),
                    path, lineno, "observe_ts",
                )?;
                let slot = SlotConfig::new(
                    parse_num(kv.get("max_delay_days").map(String::as_str).unwrap_or(""), path, lineno, "max_delay_days")?,
                    parse_num(kv.get("seconds_per_slot").map(String::as_str).unwrap_or(""), path, lineno, "seconds_per_slot")?,
                )?;
                meta = Some((policy, observe_ts, slot));
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 9 {
            return Err(parse_err(path, lineno, "expected 9 columns"));
        }
        let record = parse_record_columns(&cols[..6], path, lineno)?;
        let (_, observe_ts, slot) = meta
            .as_ref()
            .ok_or_else(|| parse_err(path, lineno, "row before #snapshot header"))?;
        let converted = parse_flag(cols[6], path, lineno, "z")?;
        let elapsed_slots = if cols[7].is_empty() {
            None
        } else {
            Some(parse_num(cols[7], path, lineno, "e")?)
        };
        let delay_slot = if cols[8].is_empty() {
            None
        } else {
            Some(parse_num(cols[8], path, lineno, "d")?)
        };
        let sps = slot.seconds_per_slot as f64;
        let elapsed_units = match (record.click_ts, elapsed_slots) {
            (Some(click), Some(_)) => Some((observe_ts - click) as f64 / sps),
            _ => None,
        };
        let delay_units = match (converted, record.click_ts, record.conversion_ts) {
            (true, Some(click), Some(conv)) => Some((conv - click) as f64 / sps),
            _ => None,
        };
        let sample = crate::event::ObservedSample {
            record: records.len(),
            clicked: record.clicked,
            converted,
            elapsed_slots,
            delay_slot,
            elapsed_units,
            delay_units,
            weight: if converted { 1.0 } else { 0.0 },
        };
        sample.validate(slot).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        records.push(record);
        samples.push(sample);
    }
    let (feature_dim, n_fields) = dims.ok_or_else(|| parse_err(path, 0, "missing #dims header"))?;
    let (policy, observe_ts, slot) = meta.ok_or_else(|| parse_err(path, 0, "missing #snapshot header"))?;
    let log = EventLog { feature_dim, n_fields, records };
    log.validate()?;
    Ok((
        log,
        Snapshot { policy, observe_ts, slot, samples, warning: None },
    ))
}

/// Reads a machine-readable report: `(metric, value)` rows in file order plus
/// the merged `#config` key/value pairs.
pub fn read_report_tsv(path: &Path) -> Result<(Vec<(String, f64)>, HashMap<String, String>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut metrics = Vec::new();
    let mut config = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line != REPORT_MAGIC {
                return Err(parse_err(path, lineno, format!("expected magic {REPORT_MAGIC:?}")));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(payload) = rest.strip_prefix("config ") {
                config.extend(parse_kv(payload));
            }
            continue;
        }
        let (name, value) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected metric\tvalue"))?;
        metrics.push((name.to_string(), parse_num(value, path, lineno, "metric value")?));
    }
    Ok((metrics, config))
}

/// Reads the header block (`#` lines) of any of the formats above.
pub fn read_headers(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut headers = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.starts_with('#') {
            headers.push(line);
        } else {
            break;
        }
    }
    Ok(headers)
}
