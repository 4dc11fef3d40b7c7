//! Ranking and calibration evaluation.
//!
//! AUC is computed by rank sums with average ranks on ties (equivalent to
//! pair counting with ties worth one half). The grouped variant averages
//! per-request AUC weighted by each request's impression count, skipping
//! requests whose labels are single-class; when most groups are skipped the
//! grouped metric is flagged as sparse rather than silently trusted.
//!
//! Log loss of the click-and-convert score is reported overall and bucketed
//! by true conversion delay slot. By default buckets contain positives only
//! and negatives contribute to the overall row alone; a flag switches to
//! counting every negative in every bucket's denominator.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::attribution::{delay_histogram, LabelPolicy, Snapshot};
use crate::error::{Error, Result};
use crate::event::EventLog;
use crate::model::ModelParams;
use crate::objectives::PROB_FLOOR;

/// Probability of ranking a random positive above a random negative, ties
/// counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores/labels length mismatch".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    let n = scores.len();
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // 1-based ranks
        for &k in &order[i..=j] {
            if labels[k] {
                positive_rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    Ok((positive_rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// Grouped-AUC outcome: the weighted mean over usable groups plus how many
/// groups were usable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupedAuc {
    pub value: f64,
    pub groups_used: usize,
    pub groups_skipped: usize,
}

/// Impression-count-weighted mean of per-group AUC. Groups with single-class
/// labels are excluded from numerator and denominator.
pub fn gauc(scores: &[f64], labels: &[bool], groups: &[&str]) -> Result<GroupedAuc> {
    if scores.len() != labels.len() || scores.len() != groups.len() {
        return Err(Error::InvalidInput("scores/labels/groups length mismatch".into()));
    }
    // First-occurrence group order keeps the reduction deterministic.
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        match index.get(g) {
            Some(&gi) => members[gi].push(i),
            None => {
                index.insert(g, members.len());
                members.push(vec![i]);
            }
        }
    }
    let mut weighted_sum = 0.0;
    let mut total_weight = 0.0;
    let mut groups_used = 0;
    let mut groups_skipped = 0;
    for group in &members {
        let pos = group.iter().filter(|&&i| labels[i]).count();
        if pos == 0 || pos == group.len() {
            groups_skipped += 1;
            continue;
        }
        let g_scores: Vec<f64> = group.iter().map(|&i| scores[i]).collect();
        let g_labels: Vec<bool> = group.iter().map(|&i| labels[i]).collect();
        let g_auc = auc(&g_scores, &g_labels)?;
        let weight = group.len() as f64;
        weighted_sum += weight * g_auc;
        total_weight += weight;
        groups_used += 1;
    }
    if groups_used == 0 {
        return Err(Error::UndefinedMetric(
            "no group contains both classes".into(),
        ));
    }
    Ok(GroupedAuc {
        value: weighted_sum / total_weight,
        groups_used,
        groups_skipped,
    })
}

/// Relative AUC improvement over a base model, measured above the random
/// 0.5 floor, in percent.
pub fn rela_impr(measured_auc: f64, base_auc: f64) -> Result<f64> {
    if base_auc <= 0.5 {
        return Err(Error::UndefinedMetric(format!(
            "base AUC {base_auc} is not above the random floor"
        )));
    }
    Ok(((measured_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0)
}

/// Cross-entropy by true conversion delay slot.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBucketLoss {
    pub overall: f64,
    /// Mean loss per delay slot; `None` where the bucket is empty.
    pub per_slot: Vec<Option<f64>>,
    /// Positive count per slot.
    pub counts: Vec<usize>,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Log loss of click-and-convert scores, overall and per true delay slot.
/// `delay_slots[i]` is the conversion delay of sample `i` when labeled
/// positive. With `negatives_in_buckets`, every negative also enters every
/// bucket's denominator; otherwise buckets hold positives only.
pub fn log_loss_by_delay(
    scores: &[f64],
    labels: &[bool],
    delay_slots: &[Option<u32>],
    num_bins: usize,
    negatives_in_buckets: bool,
) -> Result<DelayBucketLoss> {
    if scores.len() != labels.len() || scores.len() != delay_slots.len() {
        return Err(Error::InvalidInput("metric input length mismatch".into()));
    }
    let mut overall = 0.0;
    let mut negative_loss_sum = 0.0;
    let mut negative_count = 0usize;
    let mut slot_sums = vec![0.0; num_bins];
    let mut counts = vec![0usize; num_bins];
    for ((&score, &label), &slot) in scores.iter().zip(labels).zip(delay_slots) {
        let q = clamp_prob(score);
        if label {
            let loss = -q.ln();
            overall += loss;
            let d = slot.ok_or_else(|| {
                Error::InvalidInput("positive sample without a delay slot".into())
            })? as usize;
            if d >= num_bins {
                return Err(Error::InvalidInput(format!(
                    "delay slot {d} out of range for {num_bins} bins"
                )));
            }
            slot_sums[d] += loss;
            counts[d] += 1;
        } else {
            let loss = -(1.0 - q).ln();
            overall += loss;
            negative_loss_sum += loss;
            negative_count += 1;
        }
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("log loss of an empty set".into()));
    }
    let per_slot = slot_sums
        .iter()
        .zip(&counts)
        .map(|(&sum, &count)| {
            if negatives_in_buckets {
                let n = count + negative_count;
                (n > 0).then(|| (sum + negative_loss_sum) / n as f64)
            } else {
                (count > 0).then(|| sum / count as f64)
            }
        })
        .collect();
    Ok(DelayBucketLoss {
        overall: overall / scores.len() as f64,
        per_slot,
        counts,
    })
}

/// Full evaluation of a checkpoint against ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Click-and-convert ranking over all impressions.
    pub auc: f64,
    /// Conversion ranking among clicked impressions.
    pub cvr_auc: f64,
    /// Request-grouped click-and-convert AUC; `None` when no group has both
    /// classes.
    pub gauc: Option<f64>,
    pub groups_used: usize,
    pub groups_skipped: usize,
    /// More groups skipped than used: the grouped metric is unreliable.
    pub gauc_sparse: bool,
    pub log_loss: f64,
    pub bucket_loss: Vec<Option<f64>>,
    pub bucket_counts: Vec<usize>,
    /// Mean predicted conversion probability over clicked impressions.
    pub mean_pred_cvr: f64,
    /// Fraction of clicked impressions that truly converted in the window.
    pub true_mean_cvr: f64,
    pub n_samples: usize,
    pub n_clicked: usize,
    /// Normalized true delay histogram of the evaluation set.
    pub delay_hist: Vec<f64>,
}

/// Scores `log` with the model and evaluates it against a ground-truth
/// labeled snapshot of the same log. Delay buckets hold positives only.
pub fn evaluate(params: &ModelParams, log: &EventLog, truth: &Snapshot) -> Result<EvalReport> {
    evaluate_with(params, log, truth, false)
}

/// [`evaluate`] with an explicit delay-bucket convention for negatives.
pub fn evaluate_with(
    params: &ModelParams,
    log: &EventLog,
    truth: &Snapshot,
    negatives_in_buckets: bool,
) -> Result<EvalReport> {
    if !matches!(truth.policy, LabelPolicy::GroundTruth { .. }) {
        return Err(Error::Config(
            "evaluation requires a ground-truth labeled snapshot".into(),
        ));
    }
    let num_bins = truth.slot.num_bins();
    let n = truth.samples.len();
    if n == 0 {
        return Err(Error::UndefinedMetric("empty evaluation set".into()));
    }
    let mut ctcvr_scores = Vec::with_capacity(n);
    let mut cvr_scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut delays = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for sample in &truth.samples {
        let record = &log.records[sample.record];
        let (_, cvr, ctcvr) = params.forward_scores(&record.features)?;
        ctcvr_scores.push(ctcvr);
        cvr_scores.push(cvr);
        labels.push(sample.converted);
        delays.push(sample.delay_slot);
        groups.push(record.request_id.as_str());
    }

    let auc_all = auc(&ctcvr_scores, &labels)?;
    let clicked_idx: Vec<usize> = truth
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.clicked)
        .map(|(i, _)| i)
        .collect();
    let clicked_scores: Vec<f64> = clicked_idx.iter().map(|&i| cvr_scores[i]).collect();
    let clicked_labels: Vec<bool> = clicked_idx.iter().map(|&i| labels[i]).collect();
    let cvr_auc = auc(&clicked_scores, &clicked_labels)?;

    let grouped = match gauc(&ctcvr_scores, &labels, &groups) {
        Ok(g) => g,
        Err(Error::UndefinedMetric(_)) => GroupedAuc {
            value: f64::NAN,
            groups_used: 0,
            groups_skipped: groups.iter().collect::<std::collections::HashSet<_>>().len(),
        },
        Err(e) => return Err(e),
    };

    let buckets = log_loss_by_delay(&ctcvr_scores, &labels, &delays, num_bins, negatives_in_buckets)?;
    let mean_pred_cvr =
        clicked_scores.iter().sum::<f64>() / clicked_scores.len().max(1) as f64;
    let true_mean_cvr = clicked_labels.iter().filter(|&&l| l).count() as f64
        / clicked_labels.len().max(1) as f64;
    let delay_hist = delay_histogram(&truth.samples, num_bins)?;

    let report = EvalReport {
        auc: auc_all,
        cvr_auc,
        gauc: grouped.value.is_finite().then_some(grouped.value),
        groups_used: grouped.groups_used,
        groups_skipped: grouped.groups_skipped,
        gauc_sparse: grouped.groups_skipped > grouped.groups_used,
        log_loss: buckets.overall,
        bucket_loss: buckets.per_slot,
        bucket_counts: buckets.counts,
        mean_pred_cvr,
        true_mean_cvr,
        n_samples: n,
        n_clicked: clicked_idx.len(),
        delay_hist,
    };
    report.validate()?;
    Ok(report)
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let finite = self.auc.is_finite()
            && self.cvr_auc.is_finite()
            && self.log_loss.is_finite()
            && self.mean_pred_cvr.is_finite()
            && self.true_mean_cvr.is_finite()
            && self.gauc.map(|g| g.is_finite()).unwrap_or(true)
            && self.bucket_loss.iter().flatten().all(|l| l.is_finite())
            && self.delay_hist.iter().all(|m| m.is_finite());
        if !finite {
            return Err(Error::Numerical("non-finite metric in report".into()));
        }
        Ok(())
    }

    /// Machine-readable form: one metric per row.
    pub fn to_tsv(&self, extra_headers: &[String]) -> String {
        let mut out = String::new();
        out.push_str(crate::logio::REPORT_MAGIC);
        out.push('\n');
        for h in extra_headers {
            let _ = writeln!(out, "#{h}");
        }
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        row("auc", self.auc.to_string());
        row("cvr_auc", self.cvr_auc.to_string());
        if let Some(g) = self.gauc {
            row("gauc", g.to_string());
        }
        row("gauc_sparse", (self.gauc_sparse as u8).to_string());
        row("groups_used", self.groups_used.to_string());
        row("groups_skipped", self.groups_skipped.to_string());
        row("log_loss", self.log_loss.to_string());
        row("mean_pred_cvr", self.mean_pred_cvr.to_string());
        row("true_mean_cvr", self.true_mean_cvr.to_string());
        row("n_samples", self.n_samples.to_string());
        row("n_clicked", self.n_clicked.to_string());
        for (i, loss) in self.bucket_loss.iter().enumerate() {
            if let Some(l) = loss {
                row(&format!("log_loss_slot_{i}"), l.to_string());
            }
            row(&format!("conversions_slot_{i}"), self.bucket_counts[i].to_string());
        }
        for (i, mass) in self.delay_hist.iter().enumerate() {
            row(&format!("delay_hist_{i}"), mass.to_string());
        }
        out
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<22} {:>12}", "metric", "value");
        let _ = writeln!(out, "{:<22} {:>12.6}", "auc (ctcvr)", self.auc);
        let _ = writeln!(out, "{:<22} {:>12.6}", "auc (cvr, clicked)", self.cvr_auc);
        match self.gauc {
            Some(g) => {
                let note = if self.gauc_sparse { "  [sparse groups]" } else { "" };
                let _ = writeln!(out, "{:<22} {:>12.6}{note}", "gauc (ctcvr)", g);
            }
            None => {
                let _ = writeln!(out, "{:<22} {:>12}", "gauc (ctcvr)", "undefined");
            }
        }
        let _ = writeln!(
            out,
            "{:<22} {:>12}",
            "groups used/skipped",
            format!("{}/{}", self.groups_used, self.groups_skipped)
        );
        let _ = writeln!(out, "{:<22} {:>12.6}", "log loss", self.log_loss);
        let _ = writeln!(out, "{:<22} {:>12.6}", "mean predicted cvr", self.mean_pred_cvr);
        let _ = writeln!(out, "{:<22} {:>12.6}", "true mean cvr", self.true_mean_cvr);
        let _ = writeln!(
            out,
            "{:<22} {:>12}",
            "samples (clicked)",
            format!("{} ({})", self.n_samples, self.n_clicked)
        );
        for (i, loss) in self.bucket_loss.iter().enumerate() {
            if let Some(l) = loss {
                let _ = writeln!(
                    out,
                    "{:<22} {:>12.6}  ({} conversions)",
                    format!("log loss, slot {i}"),
                    l,
                    self.bucket_counts[i]
                );
            }
        }
        out
    }
}
