//! Training objectives.
//!
//! All losses are negated log-likelihoods to be minimized:
//!
//! * [`esdf_loss`] — expected complete-data log-likelihood of the censored
//!   conversion model, with posterior weights from [`e_step`]. Weights are
//!   data during the maximization step: no gradient flows through them.
//! * [`esmm_loss`] — hard-label cross-entropy on the click head plus
//!   cross-entropy on the click-and-convert head over the entire space; used
//!   by the day-1, drop, and shift label policies.
//! * [`dfm_loss`] — censored likelihood under an exponential delay with a
//!   learned per-sample rate.
//!
//! Probabilities are clamped to `[1e-7, 1 - 1e-7]` inside log terms only; the
//! heads themselves are reported raw. Since the click-and-convert head is the
//! product `p * r`, `log(p - q)` decomposes as `log p + log(1 - r)` and stays
//! finite under the clamp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{EventLog, ObservedSample};
use crate::model::{survival_tail, DelayHeadKind, HeadGrads, Heads, ModelParams};
use crate::par::{self, Exec};

/// Probability floor used inside log terms.
pub const PROB_FLOOR: f64 = 1e-7;
/// Floor for derived quantities (survival tails, rates) inside logs.
const SUM_FLOOR: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

fn interior(p: f64) -> bool {
    p > PROB_FLOOR && p < 1.0 - PROB_FLOOR
}

/// Which loss a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Esdf,
    Esmm,
    Dfm,
}

impl ObjectiveKind {
    pub fn delay_head(&self) -> DelayHeadKind {
        match self {
            ObjectiveKind::Dfm => DelayHeadKind::ExpRate,
            _ => DelayHeadKind::Categorical,
        }
    }

    fn needs_weights(&self) -> bool {
        matches!(self, ObjectiveKind::Esdf)
    }
}

/// Posterior conversion weights, aligned with a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepWeights(pub Vec<f64>);

impl EStepWeights {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Expectation step: posterior probability that each sample's latent
/// conversion flag is 1 given the current heads.
///
/// Observed conversions get 1, unclicked samples 0, and pending clicked
/// samples `q*tail(e) / (p - q + q*tail(e))` with the survival tail at their
/// own elapsed slot. A fully matured pending sample (empty tail) gets exactly
/// 0 and thereby becomes a definite negative.
pub fn e_step(heads: &[Heads], samples: &[ObservedSample]) -> Result<EStepWeights> {
    if heads.len() != samples.len() {
        return Err(Error::InvalidInput(format!(
            "{} heads for {} samples",
            heads.len(),
            samples.len()
        )));
    }
    let mut weights = Vec::with_capacity(samples.len());
    for (h, s) in heads.iter().zip(samples) {
        let w = if s.converted {
            if !s.clicked {
                return Err(Error::InvalidInput("converted sample without a click".into()));
            }
            1.0
        } else if !s.clicked {
            0.0
        } else {
            let e = s.elapsed_slots.ok_or_else(|| {
                Error::InvalidInput("pending sample without elapsed slots".into())
            })?;
            let tail = survival_tail(h.delay_mass()?, e)?;
            let p = clamp_prob(h.ctr);
            let q = p * clamp_prob(h.cvr);
            let denom = p - q + q * tail;
            if denom <= 0.0 {
                return Err(Error::Numerical(format!(
                    "expectation-step denominator {denom} is not positive"
                )));
            }
            q * tail / denom
        };
        weights.push(w);
    }
    Ok(EStepWeights(weights))
}

/// Loss decomposed into the four sums of the expected log-likelihood
/// (each negated): conversion mass, click outcome, observed delay, censored
/// delay. Terms hold batch sums over `n` samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub click: f64,
    pub conversion: f64,
    pub delay_observed: f64,
    pub delay_censored: f64,
    pub n: usize,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.click + self.conversion + self.delay_observed + self.delay_censored
    }

    pub fn mean_total(&self) -> f64 {
        self.total() / self.n.max(1) as f64
    }

    pub fn merge(&mut self, other: &LossBreakdown) {
        self.click += other.click;
        self.conversion += other.conversion;
        self.delay_observed += other.delay_observed;
        self.delay_censored += other.delay_censored;
        self.n += other.n;
    }
}

fn esdf_sample(heads: &Heads, s: &ObservedSample, w: f64) -> Result<(LossBreakdown, HeadGrads)> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidInput(format!("posterior weight {w} outside [0,1]")));
    }
    let p = heads.ctr;
    let r = heads.cvr;
    let pc = clamp_prob(p);
    let rc = clamp_prob(r);
    let mut out = LossBreakdown { n: 1, ..Default::default() };
    let mut hg = HeadGrads::default();

    // -w log q, with q decomposed as p * r.
    if w > 0.0 {
        out.conversion -= w * (pc.ln() + rc.ln());
        if interior(p) {
            hg.d_ctr -= w / pc;
        }
        if interior(r) {
            hg.d_cvr -= w / rc;
        }
    }
    // -(1-w) [y log(p - q) + (1-y) log(1 - p)], with p - q = p (1 - r).
    if s.clicked {
        if w < 1.0 {
            out.click -= (1.0 - w) * (pc.ln() + (1.0 - rc).ln());
            if interior(p) {
                hg.d_ctr -= (1.0 - w) / pc;
            }
            if interior(r) {
                hg.d_cvr += (1.0 - w) / (1.0 - rc);
            }
        }
    } else {
        out.click -= (1.0 - pc).ln();
        if interior(p) {
            hg.d_ctr += 1.0 / (1.0 - pc);
        }
    }
    // Delay terms at the maturity slot: observed mass for conversions,
    // survival tail for pending samples with positive weight.
    if s.converted {
        let t = s.delay_slot.ok_or_else(|| {
            Error::InvalidInput("converted sample without a delay slot".into())
        })? as usize;
        let mass = heads.delay_mass()?;
        if t >= mass.len() {
            return Err(Error::InvalidInput(format!(
                "delay slot {t} out of range for {} bins",
                mass.len()
            )));
        }
        let ft = mass[t];
        let ftc = clamp_prob(ft);
        out.delay_observed -= w * ftc.ln();
        let mut df = vec![0.0; mass.len()];
        if interior(ft) && w > 0.0 {
            df[t] = -w / ftc;
        }
        hg.d_delay_mass = Some(df);
    } else if s.clicked && w > 0.0 {
        let e = s.elapsed_slots.ok_or_else(|| {
            Error::InvalidInput("pending sample without elapsed slots".into())
        })?;
        let mass = heads.delay_mass()?;
        let tail = survival_tail(mass, e)?;
        out.delay_censored -= w * tail.max(SUM_FLOOR).ln();
        let mut df = vec![0.0; mass.len()];
        if tail > SUM_FLOOR {
            let g = -w / tail;
            for slot in df.iter_mut().skip(e as usize + 1) {
                *slot = g;
            }
        }
        hg.d_delay_mass = Some(df);
    }
    Ok((out, hg))
}

fn esmm_sample(heads: &Heads, s: &ObservedSample) -> (LossBreakdown, HeadGrads) {
    let label = s.clicked && s.converted;
    let p = heads.ctr;
    let q = heads.ctcvr;
    let pc = clamp_prob(p);
    let qc = clamp_prob(q);
    let mut out = LossBreakdown { n: 1, ..Default::default() };
    let mut hg = HeadGrads::default();
    if s.clicked {
        out.click -= pc.ln();
        if interior(p) {
            hg.d_ctr -= 1.0 / pc;
        }
    } else {
        out.click -= (1.0 - pc).ln();
        if interior(p) {
            hg.d_ctr += 1.0 / (1.0 - pc);
        }
    }
    if label {
        out.conversion -= qc.ln();
    } else {
        out.conversion -= (1.0 - qc).ln();
    }
    if interior(q) {
        let dq = if label { -1.0 / qc } else { 1.0 / (1.0 - qc) };
        hg.d_ctr += dq * heads.cvr;
        hg.d_cvr += dq * heads.ctr;
    }
    (out, hg)
}

fn dfm_sample(heads: &Heads, s: &ObservedSample) -> Result<(LossBreakdown, HeadGrads)> {
    let p = heads.ctr;
    let pc = clamp_prob(p);
    let mut out = LossBreakdown { n: 1, ..Default::default() };
    let mut hg = HeadGrads::default();
    if s.clicked {
        out.click -= pc.ln();
        if interior(p) {
            hg.d_ctr -= 1.0 / pc;
        }
    } else {
        out.click -= (1.0 - pc).ln();
        if interior(p) {
            hg.d_ctr += 1.0 / (1.0 - pc);
        }
        return Ok((out, hg));
    }

    let r = heads.cvr;
    let rc = clamp_prob(r);
    let rate = heads.delay_rate()?;
    if rate <= 0.0 {
        return Err(Error::Numerical(format!("non-positive delay rate {rate}")));
    }
    if s.converted {
        let u = s.delay_units.ok_or_else(|| {
            Error::InvalidInput("converted sample without continuous delay".into())
        })?;
        out.conversion -= rc.ln();
        if interior(r) {
            hg.d_cvr -= 1.0 / rc;
        }
        let ratec = rate.max(SUM_FLOOR);
        out.delay_observed -= ratec.ln() - rate * u;
        let mut d_rate = u;
        if rate > SUM_FLOOR {
            d_rate -= 1.0 / rate;
        }
        hg.d_delay_rate = Some(d_rate);
    } else {
        let u = s.elapsed_units.ok_or_else(|| {
            Error::InvalidInput("pending sample without continuous elapsed time".into())
        })?;
        let surv = (-rate * u).exp();
        let m = 1.0 - r + r * surv;
        out.delay_censored -= m.max(SUM_FLOOR).ln();
        if m > SUM_FLOOR {
            hg.d_cvr += (1.0 - surv) / m;
            hg.d_delay_rate = Some(r * u * surv / m);
        } else {
            hg.d_delay_rate = Some(0.0);
        }
    }
    Ok((out, hg))
}

fn per_sample(
    kind: ObjectiveKind,
    heads: &Heads,
    s: &ObservedSample,
    w: f64,
) -> Result<(LossBreakdown, HeadGrads)> {
    match kind {
        ObjectiveKind::Esdf => esdf_sample(heads, s, w),
        ObjectiveKind::Esmm => Ok(esmm_sample(heads, s)),
        ObjectiveKind::Dfm => dfm_sample(heads, s),
    }
}

/// Expected complete-data loss over a batch with frozen posterior weights.
pub fn esdf_loss(
    heads: &[Heads],
    weights: &EStepWeights,
    samples: &[ObservedSample],
) -> Result<LossBreakdown> {
    if heads.len() != samples.len() || weights.len() != samples.len() {
        return Err(Error::InvalidInput("heads/weights/samples length mismatch".into()));
    }
    let mut out = LossBreakdown::default();
    for ((h, s), &w) in heads.iter().zip(samples).zip(&weights.0) {
        let (terms, _) = esdf_sample(h, s, w)?;
        out.merge(&terms);
    }
    Ok(out)
}

/// Hard-label entire-space cross-entropy (click head + click-and-convert head).
pub fn esmm_loss(heads: &[Heads], samples: &[ObservedSample]) -> Result<LossBreakdown> {
    if heads.len() != samples.len() {
        return Err(Error::InvalidInput("heads/samples length mismatch".into()));
    }
    let mut out = LossBreakdown::default();
    for (h, s) in heads.iter().zip(samples) {
        let (terms, _) = esmm_sample(h, s);
        out.merge(&terms);
    }
    Ok(out)
}

/// Exponential-delay censored likelihood.
pub fn dfm_loss(heads: &[Heads], samples: &[ObservedSample]) -> Result<LossBreakdown> {
    if heads.len() != samples.len() {
        return Err(Error::InvalidInput("heads/samples length mismatch".into()));
    }
    let mut out = LossBreakdown::default();
    for (h, s) in heads.iter().zip(samples) {
        let (terms, _) = dfm_sample(h, s)?;
        out.merge(&terms);
    }
    Ok(out)
}

/// Total probability of all outcomes observable at elapsed slot `e`: not
/// clicked, clicked and converted at any visible slot, clicked and pending.
/// Identically 1 for any heads — the likelihood factorization is normalized.
pub fn likelihood_outcome_check(heads: &Heads, elapsed: u32) -> Result<f64> {
    let mass = heads.delay_mass()?;
    if elapsed as usize >= mass.len() {
        return Err(Error::InvalidInput(format!(
            "elapsed slot {elapsed} out of range for {} bins",
            mass.len()
        )));
    }
    let p = heads.ctr;
    let q = heads.ctcvr;
    let observed: f64 = mass[..=elapsed as usize].iter().map(|&m| q * m).sum();
    let tail = survival_tail(mass, elapsed)?;
    Ok((1.0 - p) + observed + (p - q + q * tail))
}

fn need_delay(kind: ObjectiveKind, s: &ObservedSample, w: f64) -> bool {
    match kind {
        ObjectiveKind::Esdf => s.clicked && (s.converted || w > 0.0),
        ObjectiveKind::Esmm => false,
        ObjectiveKind::Dfm => s.clicked,
    }
}

fn sample_weight(kind: ObjectiveKind, weights: Option<&EStepWeights>, i: usize) -> Result<f64> {
    if kind.needs_weights() {
        let ws = weights.ok_or_else(|| {
            Error::Config("the censored objective requires expectation-step weights".into())
        })?;
        Ok(ws.0[i])
    } else {
        Ok(1.0)
    }
}

/// Heads needed by the expectation step: delay distributions are evaluated
/// for pending clicked samples only.
pub fn e_step_heads(
    params: &ModelParams,
    log: &EventLog,
    samples: &[ObservedSample],
) -> Result<Vec<Heads>> {
    samples
        .iter()
        .map(|s| {
            let need = s.clicked && !s.converted;
            let (heads, _) = params.forward_tape(
                &log.records[s.record].features,
                s.elapsed_slots,
                need,
                false,
            )?;
            Ok(heads)
        })
        .collect()
}

/// Batch loss of an objective at the given parameters (forward only).
pub fn batch_loss(
    params: &ModelParams,
    log: &EventLog,
    samples: &[ObservedSample],
    weights: Option<&EStepWeights>,
    kind: ObjectiveKind,
) -> Result<LossBreakdown> {
    if let Some(ws) = weights {
        if ws.len() != samples.len() {
            return Err(Error::InvalidInput("weights/samples length mismatch".into()));
        }
    }
    let mut out = LossBreakdown::default();
    for (i, s) in samples.iter().enumerate() {
        let w = sample_weight(kind, weights, i)?;
        let (heads, _) = params.forward_tape(
            &log.records[s.record].features,
            s.elapsed_slots,
            need_delay(kind, s, w),
            false,
        )?;
        let (terms, _) = per_sample(kind, &heads, s, w)?;
        out.merge(&terms);
    }
    Ok(out)
}

/// Batch loss and the exact gradient of its per-sample mean.
pub fn batch_gradient(
    params: &ModelParams,
    log: &EventLog,
    samples: &[ObservedSample],
    weights: Option<&EStepWeights>,
    kind: ObjectiveKind,
) -> Result<(LossBreakdown, Vec<f64>)> {
    batch_gradient_with(params, log, samples, weights, kind, Exec::Auto)
}

/// [`batch_gradient`] with an explicit execution mode. Partial gradients are
/// folded in chunk order, so the result is bit-identical across modes.
pub fn batch_gradient_with(
    params: &ModelParams,
    log: &EventLog,
    samples: &[ObservedSample],
    weights: Option<&EStepWeights>,
    kind: ObjectiveKind,
    exec: Exec,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if let Some(ws) = weights {
        if ws.len() != samples.len() {
            return Err(Error::InvalidInput("weights/samples length mismatch".into()));
        }
    }
    let partials = par::map_ranges(exec, samples.len(), par::DEFAULT_CHUNK, |range| {
        let mut grad = vec![0.0; params.len()];
        let mut sums = LossBreakdown::default();
        for i in range {
            let s = &samples[i];
            let w = sample_weight(kind, weights, i)?;
            let features = &log.records[s.record].features;
            let (heads, tape) =
                params.forward_tape(features, s.elapsed_slots, need_delay(kind, s, w), true)?;
            let (terms, hg) = per_sample(kind, &heads, s, w)?;
            params.backward(features, &heads, tape.as_ref().expect("tape kept"), &hg, &mut grad)?;
            sums.merge(&terms);
        }
        Ok::<_, Error>((sums, grad))
    });

    let mut total = LossBreakdown::default();
    let mut grad = vec![0.0; params.len()];
    for part in partials {
        let (sums, part_grad) = part?;
        total.merge(&sums);
        for (g, p) in grad.iter_mut().zip(&part_grad) {
            *g += p;
        }
    }
    let scale = 1.0 / samples.len() as f64;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((total, grad))
}

/// Result of a finite-difference gradient validation.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
}

/// Compares the analytic gradient against central finite differences on
/// randomly probed coordinates. The relative error denominator is floored so
/// that untouched coordinates (both sides zero) compare as equal.
///
/// Each coordinate is probed at a geometric ladder of steps and the best
/// agreement is kept: a large step may straddle a ReLU kink (where a central
/// difference is not a derivative estimator) and a tiny step amplifies
/// rounding noise, but a genuinely wrong analytic gradient disagrees at
/// every step.
pub fn gradient_check(
    params: &ModelParams,
    log: &EventLog,
    samples: &[ObservedSample],
    weights: Option<&EStepWeights>,
    kind: ObjectiveKind,
    probes: usize,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, grad) = batch_gradient(params, log, samples, weights, kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_err = 0.0;
    let mut worst_coord = 0;
    for _ in 0..probes {
        let coord = rng.gen_range(0..params.len());
        let scale = params.data[coord].abs().max(1.0);
        let mut rel = f64::INFINITY;
        for shrink in [1.0, 8.0, 64.0] {
            let h = step * scale / shrink;
            let plus = batch_loss(&params.with_perturbed(coord, h), log, samples, weights, kind)?
                .mean_total();
            let minus = batch_loss(&params.with_perturbed(coord, -h), log, samples, weights, kind)?
                .mean_total();
            let fd = (plus - minus) / (2.0 * h);
            let denom = grad[coord].abs().max(fd.abs()).max(1e-8);
            rel = rel.min((grad[coord] - fd).abs() / denom);
        }
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = coord;
        }
    }
    Ok(GradCheckReport { probes, max_rel_err, worst_coord })
}

pub mod surrogate {
    //! Closed-form scalar EM surrogate: click probability and delay
    //! distribution held fixed, a single free click-and-convert mass `q`.
    //! Its maximization step has an exact solution, so full EM sweeps can be
    //! checked for the classical guarantee that the incomplete-data
    //! log-likelihood never decreases.

    use super::*;

    #[derive(Debug, Clone)]
    pub struct ScalarSurrogate {
        pub click_prob: f64,
        pub delay_dist: Vec<f64>,
    }

    impl ScalarSurrogate {
        pub fn heads(&self, ctcvr: f64) -> Heads {
            Heads {
                ctr: self.click_prob,
                cvr: ctcvr / self.click_prob,
                ctcvr,
                delay: crate::model::DelayOutput::Softmax(self.delay_dist.clone()),
            }
        }

        /// Posterior weights at the current `q`, via the shared
        /// expectation-step code path.
        pub fn e_step(&self, ctcvr: f64, samples: &[ObservedSample]) -> Result<EStepWeights> {
            let heads = vec![self.heads(ctcvr); samples.len()];
            super::e_step(&heads, samples)
        }

        /// Exact maximizer of the expected complete-data log-likelihood over
        /// `q`: `p * (n_converted + sum of pending weights) / n_clicked`.
        pub fn m_step(&self, samples: &[ObservedSample], weights: &EStepWeights) -> Result<f64> {
            if weights.len() != samples.len() {
                return Err(Error::InvalidInput("weights/samples length mismatch".into()));
            }
            let mut numer = 0.0;
            let mut clicked = 0usize;
            for (s, &w) in samples.iter().zip(&weights.0) {
                if s.clicked {
                    clicked += 1;
                    numer += if s.converted { 1.0 } else { w };
                }
            }
            if clicked == 0 {
                return Err(Error::InvalidInput("no clicked samples".into()));
            }
            Ok(self.click_prob * numer / clicked as f64)
        }

        /// Incomplete-data log-likelihood of the observations at `q`.
        /// Compensated summation keeps the rounding error well below the
        /// monotonicity slack even near convergence.
        pub fn incomplete_log_likelihood(
            &self,
            ctcvr: f64,
            samples: &[ObservedSample],
        ) -> Result<f64> {
            let p = self.click_prob;
            let mut ll = 0.0;
            let mut carry = 0.0;
            let mut add = |term: f64, ll: &mut f64| {
                let y = term - carry;
                let t = *ll + y;
                carry = (t - *ll) - y;
                *ll = t;
            };
            for s in samples {
                let term = if !s.clicked {
                    (1.0 - p).ln()
                } else if s.converted {
                    let d = s.delay_slot.ok_or_else(|| {
                        Error::InvalidInput("converted sample without a delay slot".into())
                    })? as usize;
                    (ctcvr * self.delay_dist[d]).max(SUM_FLOOR).ln()
                } else {
                    let e = s.elapsed_slots.ok_or_else(|| {
                        Error::InvalidInput("pending sample without elapsed slots".into())
                    })?;
                    let tail = survival_tail(&self.delay_dist, e)?;
                    (p - ctcvr + ctcvr * tail).max(SUM_FLOOR).ln()
                };
                add(term, &mut ll);
            }
            Ok(ll)
        }

        /// Runs full-batch EM sweeps from `q0` and returns the incomplete
        /// log-likelihood sequence (initial value first).
        pub fn run(
            &self,
            q0: f64,
            iterations: usize,
            samples: &[ObservedSample],
        ) -> Result<Vec<f64>> {
            let mut q = q0;
            let mut lls = vec![self.incomplete_log_likelihood(q, samples)?];
            for _ in 0..iterations {
                let weights = self.e_step(q, samples)?;
                q = self.m_step(samples, &weights)?;
                lls.push(self.incomplete_log_likelihood(q, samples)?);
            }
            Ok(lls)
        }

        /// Draws observations from the surrogate's own generative process at
        /// a true `q`, with elapsed slots uniform over the bins.
        pub fn simulate(&self, true_ctcvr: f64, n: usize, seed: u64) -> Vec<ObservedSample> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bins = self.delay_dist.len();
            (0..n)
                .map(|i| {
                    let clicked = rng.gen::<f64>() < self.click_prob;
                    let e = rng.gen_range(0..bins) as u32;
                    let mut converted = false;
                    let mut delay_slot = None;
                    if clicked {
                        let converts = rng.gen::<f64>() < true_ctcvr / self.click_prob;
                        if converts {
                            let u: f64 = rng.gen();
                            let mut acc = 0.0;
                            let mut d = bins - 1;
                            for (j, m) in self.delay_dist.iter().enumerate() {
                                acc += m;
                                if u < acc {
                                    d = j;
                                    break;
                                }
                            }
                            if (d as u32) <= e {
                                converted = true;
                                delay_slot = Some(d as u32);
                            }
                        }
                    }
                    ObservedSample {
                        record: i,
                        clicked,
                        converted,
                        elapsed_slots: clicked.then_some(e),
                        delay_slot,
                        elapsed_units: clicked.then_some(e as f64),
                        delay_units: delay_slot.map(|d| d as f64),
                        weight: if converted { 1.0 } else { 0.0 },
                    }
                })
                .collect()
        }
    }
}
