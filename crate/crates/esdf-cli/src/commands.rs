//! Subcommand implementations.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use esdf_core::attribution::{self, LabelPolicy};
use esdf_core::event::{partition, EventLog, SlotConfig};
use esdf_core::logio;
use esdf_core::metrics;
use esdf_core::model::{load_checkpoint, save_checkpoint, CheckpointMeta};
use esdf_core::synth::{self, GenConfig};
use esdf_core::trainer::{self, EvalSpec, TrainConfig, TrainObjective};

use crate::config::{parse_hidden, resolve, resolve_required, FileConfig, Resolved};
use crate::{
    tool_header, CliError, EvaluateArgs, GenerateArgs, ReportArgs, SnapshotArgs, TrainArgs,
};

const COMPARISON_MAGIC: &str = "#esdf-comparison v1";
const HISTOGRAM_MAGIC: &str = "#esdf-histogram v1";
const LOSS_BY_DAY_MAGIC: &str = "#esdf-loss-by-day v1";

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", prefix.display()))
}

fn read_log(path: &Path) -> Result<EventLog, CliError> {
    Ok(logio::read_event_log(path)?.0)
}

fn resolve_observe_ts(
    observe_ts: Option<i64>,
    observe_day: Option<f64>,
    file: &FileConfig,
    sps: i64,
    out: &mut Resolved,
) -> Result<i64, CliError> {
    let ts = match observe_ts {
        Some(ts) => ts,
        None => {
            let day = resolve_required(observe_day, file, "observe-day", &mut Resolved::default())?;
            (day * sps as f64).round() as i64
        }
    };
    out.put("observe-ts", ts);
    Ok(ts)
}

fn bool_option(flag: bool, file: &FileConfig, key: &str, out: &mut Resolved) -> Result<bool, CliError> {
    let value = flag
        || file
            .parsed_bool(key)?
            .unwrap_or(false);
    out.put(key, value);
    Ok(value)
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut cfg = Resolved::default();
    let n = resolve_required(args.n, &file, "n", &mut cfg)?;
    let seed = resolve(args.seed, &file, "seed", 7u64, &mut cfg)?;
    let feature_dim = resolve(args.feature_dim, &file, "feature-dim", 1200usize, &mut cfg)?;
    let n_fields = resolve(args.n_fields, &file, "n-fields", 8usize, &mut cfg)?;
    let max_delay_days = resolve(args.max_delay_days, &file, "max-delay-days", 6u32, &mut cfg)?;
    let sps = resolve(args.seconds_per_slot, &file, "seconds-per-slot", 86_400i64, &mut cfg)?;
    let day1_mass = resolve(args.day1_mass, &file, "day1-mass", 0.8f64, &mut cfg)?;
    let start_day = resolve(args.start_day, &file, "start-day", 0i64, &mut cfg)?;
    let span_days = resolve(args.span_days, &file, "span-days", 7i64, &mut cfg)?;
    let offset = resolve(args.offset, &file, "offset", 0u64, &mut cfg)?;

    let slot = SlotConfig::new(max_delay_days, sps)?;
    let mut gen = GenConfig::sampled(n, feature_dim, n_fields, slot, seed, day1_mass)?;
    gen.start_ts = start_day * sps;
    gen.span_secs = span_days * sps;
    gen.record_offset = offset;
    let (log, truths) = synth::generate(&gen)?;

    let headers = vec![tool_header(), cfg.echo()];
    let events_path = suffixed(&args.out, ".events.tsv");
    let truth_path = suffixed(&args.out, ".truth.tsv");
    logio::write_event_log(&events_path, &log, &headers)?;
    logio::write_truth(&truth_path, &log, &truths, &headers)?;

    let clicks = log.records.iter().filter(|r| r.clicked).count();
    let conversions = truths.iter().filter(|t| t.converts).count();
    let mut hist = vec![0usize; slot.num_bins()];
    for t in &truths {
        if let Some(d) = t.delay_slot {
            hist[d as usize] += 1;
        }
    }
    println!("wrote {} and {}", events_path.display(), truth_path.display());
    println!(
        "impressions {n}, clicks {clicks} ({:.4}), conversions {conversions} ({:.4} per click)",
        clicks as f64 / n as f64,
        conversions as f64 / clicks.max(1) as f64
    );
    let shares: Vec<String> = hist
        .iter()
        .map(|&c| format!("{:.3}", c as f64 / conversions.max(1) as f64))
        .collect();
    println!("conversion delay slots: [{}]", shares.join(", "));
    Ok(())
}

fn parse_policy(name: &str, window_days: u32) -> Result<LabelPolicy, CliError> {
    if name == "ground-truth" {
        return Ok(LabelPolicy::GroundTruth { window_days });
    }
    Ok(name.parse::<LabelPolicy>()?)
}

pub fn snapshot(args: SnapshotArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut cfg = Resolved::default();
    let policy_name = resolve(args.policy, &file, "policy", "full-censored".to_string(), &mut cfg)?;
    let window_days = resolve(args.window_days, &file, "window-days", 7u32, &mut cfg)?;
    let max_delay_days = resolve(args.max_delay_days, &file, "max-delay-days", 6u32, &mut cfg)?;
    let sps = resolve(args.seconds_per_slot, &file, "seconds-per-slot", 86_400i64, &mut cfg)?;
    let observe_ts = resolve_observe_ts(args.observe_ts, args.observe_day, &file, sps, &mut cfg)?;

    let slot = SlotConfig::new(max_delay_days, sps)?;
    let policy = parse_policy(&policy_name, window_days)?;
    let log = read_log(&args.log)?;
    let snap = attribution::snapshot(&log, observe_ts, policy, &slot)?;
    if let Some(warning) = &snap.warning {
        eprintln!("warning: {warning}");
    }
    let headers = vec![tool_header(), cfg.echo()];
    logio::write_snapshot(&args.out, &log, &snap, &headers)?;
    let parts = partition(&snap.samples)?;
    println!(
        "wrote {} ({} samples: {} converted, {} pending, {} unclicked)",
        args.out.display(),
        snap.samples.len(),
        parts.converted.len(),
        parts.pending.len(),
        parts.unclicked.len()
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut cfg = Resolved::default();
    let objective: TrainObjective =
        resolve_required(args.objective.clone(), &file, "objective", &mut cfg)?
            .parse::<TrainObjective>()?;
    let epochs = resolve_required(args.epochs, &file, "epochs", &mut cfg)?;
    let seed = resolve(args.seed, &file, "seed", 7u64, &mut cfg)?;
    let lr = resolve(args.lr, &file, "lr", 1e-4f64, &mut cfg)?;
    let batch_size = resolve(args.batch_size, &file, "batch-size", 1024usize, &mut cfg)?;
    let emb_dim = resolve(args.emb_dim, &file, "emb-dim", 8usize, &mut cfg)?;
    let hidden_s = resolve(args.hidden.clone(), &file, "hidden", "64,32".to_string(), &mut cfg)?;
    let em_steps = resolve(args.em_steps, &file, "em-steps", 1usize, &mut cfg)?;
    let full_batch_estep = bool_option(args.full_batch_estep, &file, "full-batch-estep", &mut cfg)?;
    let calendar_day = bool_option(args.esmm_calendar_day, &file, "esmm-calendar-day", &mut cfg)?;
    let max_delay_days = resolve(args.max_delay_days, &file, "max-delay-days", 6u32, &mut cfg)?;
    let sps = resolve(args.seconds_per_slot, &file, "seconds-per-slot", 86_400i64, &mut cfg)?;
    let observe_ts = resolve_observe_ts(args.observe_ts, args.observe_day, &file, sps, &mut cfg)?;
    let window_days = resolve(args.window_days, &file, "window-days", 7u32, &mut cfg)?;

    let hidden = parse_hidden(&hidden_s).map_err(CliError::usage)?;
    let slot = SlotConfig::new(max_delay_days, sps)?;
    let mut policy = objective.default_policy();
    if let LabelPolicy::EsmmDay1 { calendar_day: c } = &mut policy {
        *c = calendar_day;
    }

    let log = read_log(&args.log)?;
    let observe_points: Vec<i64> = match &args.resnapshot_days {
        Some(list) => {
            let days: Result<Vec<f64>, _> = list.split(',').map(|t| t.trim().parse::<f64>()).collect();
            let days = days.map_err(|_| CliError::usage(format!("bad --resnapshot-days {list:?}")))?;
            cfg.put("resnapshot-days", list);
            days.iter().map(|d| (d * sps as f64).round() as i64).collect()
        }
        None => vec![observe_ts],
    };
    let mut snapshots = Vec::new();
    for ts in observe_points {
        let snap = attribution::snapshot(&log, ts, policy, &slot)?;
        if let Some(warning) = &snap.warning {
            eprintln!("warning: {warning}");
        }
        snapshots.push(snap);
    }

    let train_cfg = TrainConfig {
        objective,
        learning_rate: lr,
        batch_size,
        epochs,
        seed,
        em_steps_per_estep: em_steps,
        full_batch_estep,
        emb_dim,
        hidden,
    };

    let eval_data = match &args.eval_log {
        Some(path) => {
            let eval_log = read_log(path)?;
            let eval_ts = eval_log
                .records
                .iter()
                .filter_map(|r| r.click_ts)
                .max()
                .unwrap_or(0);
            let truth = attribution::snapshot(
                &eval_log,
                eval_ts,
                LabelPolicy::GroundTruth { window_days },
                &slot,
            )?;
            Some((eval_log, truth))
        }
        None => None,
    };
    let eval_spec = eval_data
        .as_ref()
        .map(|(log, snap)| EvalSpec { log, snapshot: snap });

    let (params, history) = trainer::train(&train_cfg, &log, &snapshots, eval_spec)?;
    let meta = CheckpointMeta { seed, objective: objective.to_string() };
    save_checkpoint(&args.out_checkpoint, &params, &meta)?;
    let headers = vec![tool_header(), cfg.echo()];
    trainer::write_history(&args.out_history, &history, &headers)?;
    if let Some(last) = history.epochs.last() {
        println!(
            "trained {} for {} epochs: final mean loss {:.6}{}",
            objective,
            epochs,
            last.loss.mean_total(),
            last.eval_auc
                .map(|a| format!(", eval auc {a:.4}"))
                .unwrap_or_default()
        );
    }
    println!(
        "wrote {} and {}",
        args.out_checkpoint.display(),
        args.out_history.display()
    );
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut cfg = Resolved::default();
    let window_days = resolve(args.window_days, &file, "window-days", 7u32, &mut cfg)?;
    let max_delay_days = resolve(args.max_delay_days, &file, "max-delay-days", 6u32, &mut cfg)?;
    let sps = resolve(args.seconds_per_slot, &file, "seconds-per-slot", 86_400i64, &mut cfg)?;
    let negatives_in_buckets =
        bool_option(args.negatives_in_buckets, &file, "negatives-in-buckets", &mut cfg)?;

    let slot = SlotConfig::new(max_delay_days, sps)?;
    let (params, meta) = load_checkpoint(&args.checkpoint)?;
    let log = read_log(&args.log)?;
    if params.cfg.feature_dim != log.feature_dim || params.cfg.n_fields != log.n_fields {
        return Err(CliError::usage(format!(
            "checkpoint was trained on {}x{} features but the log declares {}x{}",
            params.cfg.feature_dim, params.cfg.n_fields, log.feature_dim, log.n_fields
        )));
    }
    if params.cfg.num_bins != slot.num_bins() {
        return Err(CliError::usage(format!(
            "checkpoint has {} delay bins but the slot config implies {}",
            params.cfg.num_bins,
            slot.num_bins()
        )));
    }
    cfg.put("objective", &meta.objective);
    cfg.put("seed", meta.seed);

    let observe_ts = log.records.iter().filter_map(|r| r.click_ts).max().unwrap_or(0);
    let truth = attribution::snapshot(
        &log,
        observe_ts,
        LabelPolicy::GroundTruth { window_days },
        &slot,
    )?;
    let report = metrics::evaluate_with(&params, &log, &truth, negatives_in_buckets)?;
    let headers = vec![tool_header(), cfg.echo()];
    std::fs::write(&args.out, report.to_tsv(&headers)).map_err(esdf_core::Error::from)?;
    print!("{}", report.to_table());
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Default)]
struct Agg(Vec<f64>);

impl Agg {
    fn push(&mut self, v: f64) {
        self.0.push(v);
    }

    fn mean(&self) -> Option<f64> {
        (!self.0.is_empty()).then(|| self.0.iter().sum::<f64>() / self.0.len() as f64)
    }

    fn std(&self) -> f64 {
        let n = self.0.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean().unwrap();
        (self.0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    fn cell(&self) -> String {
        match self.mean() {
            Some(m) => format!("{m:.4} ± {:.4}", self.std()),
            None => "-".to_string(),
        }
    }
}

#[derive(Default)]
struct ObjectiveStats {
    runs: usize,
    auc: Agg,
    cvr_auc: Agg,
    gauc: Agg,
    log_loss: Agg,
    mean_pred_cvr: Agg,
    true_mean_cvr: Agg,
    slot_loss: HashMap<usize, Agg>,
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut order: Vec<String> = Vec::new();
    let mut stats: HashMap<String, ObjectiveStats> = HashMap::new();
    let mut num_bins: Option<usize> = None;
    let mut hist_slots: Vec<Agg> = Vec::new();

    for input in &args.inputs {
        let (rows, config) = logio::read_report_tsv(input)?;
        let objective = config.get("objective").cloned().unwrap_or_else(|| "unknown".into());
        let metric: HashMap<&str, f64> = rows.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let bins = rows.iter().filter(|(k, _)| k.starts_with("delay_hist_")).count();
        match num_bins {
            None => {
                num_bins = Some(bins);
                hist_slots = (0..bins).map(|_| Agg::default()).collect();
            }
            Some(expected) if expected != bins => {
                return Err(CliError::data(format!(
                    "{}: {} delay slots but earlier inputs had {}",
                    input.display(),
                    bins,
                    expected
                )));
            }
            _ => {}
        }
        if !stats.contains_key(&objective) {
            order.push(objective.clone());
        }
        let entry = stats.entry(objective).or_default();
        entry.runs += 1;
        for (key, agg) in [
            ("auc", &mut entry.auc),
            ("cvr_auc", &mut entry.cvr_auc),
            ("gauc", &mut entry.gauc),
            ("log_loss", &mut entry.log_loss),
            ("mean_pred_cvr", &mut entry.mean_pred_cvr),
            ("true_mean_cvr", &mut entry.true_mean_cvr),
        ] {
            if let Some(&v) = metric.get(key) {
                agg.push(v);
            }
        }
        for slot in 0..bins {
            if let Some(&v) = metric.get(format!("log_loss_slot_{slot}").as_str()) {
                entry.slot_loss.entry(slot).or_default().push(v);
            }
            if let Some(&v) = metric.get(format!("delay_hist_{slot}").as_str()) {
                hist_slots[slot].push(v);
            }
        }
    }
    let num_bins = num_bins.ok_or_else(|| CliError::data("no inputs parsed"))?;

    let base_auc = stats.get(&args.base).and_then(|s| s.auc.mean());
    let base_gauc = stats.get(&args.base).and_then(|s| s.gauc.mean());
    let mut table = String::new();
    table.push_str(&format!(
        "{:<8} {:>4} {:>18} {:>9} {:>18} {:>18} {:>9} {:>10}\n",
        "model", "runs", "auc", "relaimpr", "cvr_auc", "gauc", "relaimpr", "log_loss"
    ));
    let rela = |measured: Option<f64>, base: Option<f64>| -> String {
        match (measured, base) {
            (Some(m), Some(b)) => match metrics::rela_impr(m, b) {
                Ok(v) => format!("{v:+.2}%"),
                Err(_) => "-".into(),
            },
            _ => "-".into(),
        }
    };
    for name in &order {
        let s = &stats[name];
        table.push_str(&format!(
            "{:<8} {:>4} {:>18} {:>9} {:>18} {:>18} {:>9} {:>10}\n",
            name,
            s.runs,
            s.auc.cell(),
            rela(s.auc.mean(), base_auc),
            s.cvr_auc.cell(),
            s.gauc.cell(),
            rela(s.gauc.mean(), base_gauc),
            s.log_loss
                .mean()
                .map(|m| format!("{m:.4}"))
                .unwrap_or_else(|| "-".into()),
        ));
    }

    let mut out = BufWriter::new(File::create(&args.out).map_err(esdf_core::Error::from)?);
    writeln!(out, "{COMPARISON_MAGIC}").map_err(esdf_core::Error::from)?;
    writeln!(out, "#{}", tool_header()).map_err(esdf_core::Error::from)?;
    writeln!(out, "#config base={} inputs={}", args.base, args.inputs.len())
        .map_err(esdf_core::Error::from)?;
    write!(out, "{table}").map_err(esdf_core::Error::from)?;
    out.flush().map_err(esdf_core::Error::from)?;
    print!("{table}");

    if let Some(path) = &args.histogram_out {
        let mut w = BufWriter::new(File::create(path).map_err(esdf_core::Error::from)?);
        writeln!(w, "{HISTOGRAM_MAGIC}").map_err(esdf_core::Error::from)?;
        writeln!(w, "#cols slot mean_mass std").map_err(esdf_core::Error::from)?;
        for (slot, agg) in hist_slots.iter().enumerate() {
            writeln!(w, "{slot}\t{}\t{}", agg.mean().unwrap_or(0.0), agg.std())
                .map_err(esdf_core::Error::from)?;
        }
        w.flush().map_err(esdf_core::Error::from)?;
        println!("wrote {}", path.display());
    }

    if let Some(path) = &args.loss_by_day_out {
        let mut w = BufWriter::new(File::create(path).map_err(esdf_core::Error::from)?);
        writeln!(w, "{LOSS_BY_DAY_MAGIC}").map_err(esdf_core::Error::from)?;
        writeln!(w, "#cols slot {}", order.join(" ")).map_err(esdf_core::Error::from)?;
        for slot in 0..num_bins {
            let cells: Vec<String> = order
                .iter()
                .map(|name| {
                    stats[name]
                        .slot_loss
                        .get(&slot)
                        .and_then(|a| a.mean())
                        .map(|m| m.to_string())
                        .unwrap_or_default()
                })
                .collect();
            writeln!(w, "{slot}\t{}", cells.join("\t")).map_err(esdf_core::Error::from)?;
        }
        w.flush().map_err(esdf_core::Error::from)?;
        println!("wrote {}", path.display());
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
