//! Shared-embedding multi-tower network.
//!
//! Three towers consume one shared embedding concatenation: a click tower
//! (sigmoid), a conditional-conversion tower (sigmoid), and a delay tower.
//! The click-and-convert probability is the product `ctcvr = ctr * cvr`, so
//! `ctr - ctcvr = ctr * (1 - cvr)` is strictly positive and the censored
//! likelihood's `log(p - q)` term is always defined. The delay tower either
//! emits a softmax over the `T + 2` day slots (its input is the shared
//! embedding concatenated with a one-hot of the elapsed slot) or a single
//! softplus rate for the exponential-delay baseline (no elapsed input: the
//! rate is independent of elapsed time by construction).
//!
//! Elapsed time feeds only the delay tower; the click/conversion towers never
//! see it, so changing `elapsed` changes only the delay output.
//!
//! Parameters live in one flat `f64` buffer with a fixed layout, which keeps
//! the optimizer, checkpointing, and finite-difference probing trivial.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::FeatureVector;

pub const CHECKPOINT_MAGIC: &str = "#esdf-checkpoint v1";

/// Delay head variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayHeadKind {
    /// Softmax over `T + 2` day slots, conditioned on the elapsed slot.
    Categorical,
    /// Single positive rate (softplus), exponential-delay baseline.
    ExpRate,
}

impl fmt::Display for DelayHeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayHeadKind::Categorical => write!(f, "categorical"),
            DelayHeadKind::ExpRate => write!(f, "exp_rate"),
        }
    }
}

impl FromStr for DelayHeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(DelayHeadKind::Categorical),
            "exp_rate" => Ok(DelayHeadKind::ExpRate),
            _ => Err(Error::Config(format!("unknown delay head {s:?}"))),
        }
    }
}

/// Network architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub n_fields: usize,
    pub emb_dim: usize,
    /// Hidden layer widths shared by all towers (ReLU activations).
    pub hidden: Vec<usize>,
    pub num_bins: usize,
    pub delay_head: DelayHeadKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.n_fields == 0 || self.emb_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.num_bins < 3 {
            return Err(Error::Config("num_bins must be at least 3".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of the shared embedding concatenation.
    pub fn embed_width(&self) -> usize {
        self.n_fields * self.emb_dim
    }

    fn delay_input_width(&self) -> usize {
        match self.delay_head {
            DelayHeadKind::Categorical => self.embed_width() + self.num_bins,
            DelayHeadKind::ExpRate => self.embed_width(),
        }
    }

    fn delay_output_width(&self) -> usize {
        match self.delay_head {
            DelayHeadKind::Categorical => self.num_bins,
            DelayHeadKind::ExpRate => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    emb_len: usize,
    ctr: Vec<LayerShape>,
    cvr: Vec<LayerShape>,
    delay: Vec<LayerShape>,
    total: usize,
}

fn tower_shapes(offset: &mut usize, input: usize, hidden: &[usize], output: usize) -> Vec<LayerShape> {
    let mut shapes = Vec::with_capacity(hidden.len() + 1);
    let mut cols = input;
    for &rows in hidden.iter().chain(std::iter::once(&output)) {
        let w = *offset;
        let b = w + rows * cols;
        *offset = b + rows;
        shapes.push(LayerShape { w, b, rows, cols });
        cols = rows;
    }
    shapes
}

fn build_layout(cfg: &ModelConfig) -> Layout {
    let mut offset = cfg.feature_dim * cfg.emb_dim;
    let emb_len = offset;
    let ctr = tower_shapes(&mut offset, cfg.embed_width(), &cfg.hidden, 1);
    let cvr = tower_shapes(&mut offset, cfg.embed_width(), &cfg.hidden, 1);
    let delay = tower_shapes(
        &mut offset,
        cfg.delay_input_width(),
        &cfg.hidden,
        cfg.delay_output_width(),
    );
    Layout { emb_len, ctr, cvr, delay, total: offset }
}

/// All model parameters in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub data: Vec<f64>,
    layout: Layout,
}

/// Per-sample head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    /// Click probability `p`.
    pub ctr: f64,
    /// Conditional conversion probability `r`.
    pub cvr: f64,
    /// Click-and-convert probability `q = p * r`.
    pub ctcvr: f64,
    pub delay: DelayOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DelayOutput {
    /// Probability mass per day slot, summing to 1.
    Softmax(Vec<f64>),
    /// Exponential rate in slot units.
    Rate(f64),
    /// Delay head not evaluated for this sample.
    Skipped,
}

impl Heads {
    pub fn delay_mass(&self) -> Result<&[f64]> {
        match &self.delay {
            DelayOutput::Softmax(f) => Ok(f),
            other => Err(Error::Numerical(format!(
                "expected a slot distribution, found {other:?}"
            ))),
        }
    }

    pub fn delay_rate(&self) -> Result<f64> {
        match self.delay {
            DelayOutput::Rate(l) => Ok(l),
            ref other => Err(Error::Numerical(format!(
                "expected a delay rate, found {other:?}"
            ))),
        }
    }
}

/// Probability that an eventual conversion's delay slot exceeds `elapsed`:
/// the sum of mass strictly after `elapsed`. The empty sum at the overflow
/// slot is 0.
pub fn survival_tail(mass: &[f64], elapsed: u32) -> Result<f64> {
    let e = elapsed as usize;
    if e >= mass.len() {
        return Err(Error::InvalidInput(format!(
            "elapsed slot {e} out of range for {} bins",
            mass.len()
        )));
    }
    Ok(mass[e + 1..].iter().sum())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable on both sides.
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct TowerTape {
    /// Input vector of each layer (`[0]` is the tower input).
    layer_inputs: Vec<Vec<f64>>,
    /// Final linear outputs (logits).
    output: Vec<f64>,
}

/// Intermediate activations of one sample's forward pass.
pub struct Tape {
    ctr: TowerTape,
    cvr: TowerTape,
    delay: Option<TowerTape>,
}

/// Per-head upstream gradients of a scalar loss.
#[derive(Debug, Clone, Default)]
pub struct HeadGrads {
    pub d_ctr: f64,
    pub d_cvr: f64,
    pub d_delay_mass: Option<Vec<f64>>,
    pub d_delay_rate: Option<f64>,
}

impl ModelParams {
    /// Seeded initialization: embeddings uniform in `[-0.01, 0.01]`, layer
    /// weights uniform scaled by fan-in, biases zero.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = build_layout(&cfg);
        let mut data = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in data.iter_mut().take(layout.emb_len) {
            *v = rng.gen_range(-0.01..0.01);
        }
        for tower in [&layout.ctr, &layout.cvr, &layout.delay] {
            for shape in tower {
                let bound = 1.0 / (shape.cols as f64).sqrt();
                for i in 0..shape.rows * shape.cols {
                    data[shape.w + i] = rng.gen_range(-bound..bound);
                }
                // biases stay zero
            }
        }
        Ok(Self { cfg, data, layout })
    }

    /// All-zero parameters (uniform heads); mainly for tests.
    pub fn zeros(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = build_layout(&cfg);
        let data = vec![0.0; layout.total];
        Ok(Self { cfg, data, layout })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Shared embedding concatenation for one feature vector.
    pub fn embed(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        let emb = self.cfg.emb_dim;
        let mut out = vec![0.0; self.cfg.embed_width()];
        for entry in &x.entries {
            let idx = entry.index as usize;
            let field = entry.field as usize;
            if idx >= self.cfg.feature_dim {
                return Err(Error::InvalidInput(format!(
                    "feature index {idx} out of range (dim {})",
                    self.cfg.feature_dim
                )));
            }
            if field >= self.cfg.n_fields {
                return Err(Error::InvalidInput(format!(
                    "field {field} out of range ({} fields)",
                    self.cfg.n_fields
                )));
            }
            let src = idx * emb;
            let dst = field * emb;
            for k in 0..emb {
                out[dst + k] += entry.value * self.data[src + k];
            }
        }
        Ok(out)
    }

    fn tower_forward(&self, shapes: &[LayerShape], input: Vec<f64>, keep: bool) -> (Vec<f64>, Option<TowerTape>) {
        let mut inputs = if keep { Vec::with_capacity(shapes.len()) } else { Vec::new() };
        let mut act = input;
        let last = shapes.len() - 1;
        for (li, shape) in shapes.iter().enumerate() {
            let mut z = vec![0.0; shape.rows];
            for o in 0..shape.rows {
                let row = shape.w + o * shape.cols;
                let mut acc = self.data[shape.b + o];
                for (i, a) in act.iter().enumerate() {
                    acc += self.data[row + i] * a;
                }
                z[o] = acc;
            }
            if keep {
                inputs.push(act);
            }
            if li < last {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            act = z;
        }
        let tape = keep.then_some(TowerTape {
            layer_inputs: inputs,
            output: act.clone(),
        });
        (act, tape)
    }

    fn delay_input(&self, embedded: &[f64], elapsed: Option<u32>) -> Result<Vec<f64>> {
        match self.cfg.delay_head {
            DelayHeadKind::Categorical => {
                let e = elapsed.ok_or_else(|| {
                    Error::InvalidInput("categorical delay head requires an elapsed slot".into())
                })?;
                if e as usize >= self.cfg.num_bins {
                    return Err(Error::InvalidInput(format!(
                        "elapsed slot {e} out of range for {} bins",
                        self.cfg.num_bins
                    )));
                }
                let mut input = Vec::with_capacity(self.cfg.delay_input_width());
                input.extend_from_slice(embedded);
                input.extend(std::iter::repeat(0.0).take(self.cfg.num_bins));
                input[embedded.len() + e as usize] = 1.0;
                Ok(input)
            }
            DelayHeadKind::ExpRate => Ok(embedded.to_vec()),
        }
    }

    fn delay_output(&self, logits: &[f64]) -> DelayOutput {
        match self.cfg.delay_head {
            DelayHeadKind::Categorical => {
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                DelayOutput::Softmax(exps.into_iter().map(|e| e / sum).collect())
            }
            DelayHeadKind::ExpRate => DelayOutput::Rate(softplus(logits[0])),
        }
    }

    /// Full forward pass for one sample.
    pub fn forward(&self, x: &FeatureVector, elapsed: u32) -> Result<Heads> {
        let (heads, _) = self.forward_tape(x, Some(elapsed), true, false)?;
        Ok(heads)
    }

    /// Click/conversion scores only; the delay tower is skipped.
    pub fn forward_scores(&self, x: &FeatureVector) -> Result<(f64, f64, f64)> {
        let (heads, _) = self.forward_tape(x, None, false, false)?;
        Ok((heads.ctr, heads.cvr, heads.ctcvr))
    }

    /// Forward pass keeping activations when `keep_tape` (for backprop).
    pub(crate) fn forward_tape(
        &self,
        x: &FeatureVector,
        elapsed: Option<u32>,
        need_delay: bool,
        keep_tape: bool,
    ) -> Result<(Heads, Option<Tape>)> {
        let embedded = self.embed(x)?;
        let (ctr_out, ctr_tape) = self.tower_forward(&self.layout.ctr, embedded.clone(), keep_tape);
        let (cvr_out, cvr_tape) = self.tower_forward(&self.layout.cvr, embedded.clone(), keep_tape);
        let ctr = sigmoid(ctr_out[0]);
        let cvr = sigmoid(cvr_out[0]);
        let (delay, delay_tape) = if need_delay {
            let input = self.delay_input(&embedded, elapsed)?;
            let (logits, tape) = self.tower_forward(&self.layout.delay, input, keep_tape);
            (self.delay_output(&logits), tape)
        } else {
            (DelayOutput::Skipped, None)
        };
        let heads = Heads { ctr, cvr, ctcvr: ctr * cvr, delay };
        let tape = keep_tape.then(|| Tape {
            ctr: ctr_tape.unwrap(),
            cvr: cvr_tape.unwrap(),
            delay: delay_tape,
        });
        Ok((heads, tape))
    }

    fn tower_backward(
        &self,
        shapes: &[LayerShape],
        tape: &TowerTape,
        dlogits: &[f64],
        grad: &mut [f64],
        d_input: &mut [f64],
    ) {
        let mut delta = dlogits.to_vec();
        for (li, shape) in shapes.iter().enumerate().rev() {
            let input = &tape.layer_inputs[li];
            let mut d_in = vec![0.0; shape.cols];
            for o in 0..shape.rows {
                let dz = delta[o];
                if dz == 0.0 {
                    continue;
                }
                let row = shape.w + o * shape.cols;
                grad[shape.b + o] += dz;
                for i in 0..shape.cols {
                    grad[row + i] += dz * input[i];
                    d_in[i] += dz * self.data[row + i];
                }
            }
            if li == 0 {
                for (dst, src) in d_input.iter_mut().zip(&d_in) {
                    *dst += src;
                }
            } else {
                // input of this layer is the post-ReLU output of the previous
                // one, so its positivity is the ReLU mask.
                for (v, &a) in d_in.iter_mut().zip(input.iter()) {
                    if a <= 0.0 {
                        *v = 0.0;
                    }
                }
                delta = d_in;
            }
        }
    }

    /// Accumulates parameter gradients of one sample into `grad` given the
    /// upstream head gradients.
    pub(crate) fn backward(
        &self,
        x: &FeatureVector,
        heads: &Heads,
        tape: &Tape,
        hg: &HeadGrads,
        grad: &mut [f64],
    ) -> Result<()> {
        let width = self.cfg.embed_width();
        let mut d_emb = vec![0.0; width];
        if hg.d_ctr != 0.0 {
            let d = hg.d_ctr * heads.ctr * (1.0 - heads.ctr);
            self.tower_backward(&self.layout.ctr, &tape.ctr, &[d], grad, &mut d_emb);
        }
        if hg.d_cvr != 0.0 {
            let d = hg.d_cvr * heads.cvr * (1.0 - heads.cvr);
            self.tower_backward(&self.layout.cvr, &tape.cvr, &[d], grad, &mut d_emb);
        }
        if let Some(df) = &hg.d_delay_mass {
            let mass = heads.delay_mass()?;
            let tape_d = tape.delay.as_ref().ok_or_else(|| {
                Error::Numerical("delay gradient requested without a delay tape".into())
            })?;
            let inner: f64 = df.iter().zip(mass).map(|(g, f)| g * f).sum();
            let dlogits: Vec<f64> = df
                .iter()
                .zip(mass)
                .map(|(g, f)| f * (g - inner))
                .collect();
            let mut d_in = vec![0.0; self.cfg.delay_input_width()];
            self.tower_backward(&self.layout.delay, tape_d, &dlogits, grad, &mut d_in);
            for (dst, src) in d_emb.iter_mut().zip(&d_in[..width]) {
                *dst += src;
            }
        }
        if let Some(dr) = hg.d_delay_rate {
            if dr != 0.0 {
                let tape_d = tape.delay.as_ref().ok_or_else(|| {
                    Error::Numerical("delay gradient requested without a delay tape".into())
                })?;
                let dlogit = dr * sigmoid(tape_d.output[0]);
                let mut d_in = vec![0.0; self.cfg.delay_input_width()];
                self.tower_backward(&self.layout.delay, tape_d, &[dlogit], grad, &mut d_in);
                for (dst, src) in d_emb.iter_mut().zip(&d_in[..width]) {
                    *dst += src;
                }
            }
        }
        // Scatter the embedding gradient back to the touched table rows.
        let emb = self.cfg.emb_dim;
        for entry in &x.entries {
            let src = entry.field as usize * emb;
            let dst = entry.index as usize * emb;
            for k in 0..emb {
                grad[dst + k] += entry.value * d_emb[src + k];
            }
        }
        Ok(())
    }

    /// Copy with one coordinate shifted; for finite-difference probes.
    pub fn with_perturbed(&self, coord: usize, delta: f64) -> Self {
        let mut copy = self.clone();
        copy.data[coord] += delta;
        copy
    }
}

/// Metadata stored alongside checkpoint parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Objective tag the checkpoint was trained with (echoed into reports).
    pub objective: String,
}

/// Writes a bit-exact text checkpoint (parameters as hex-encoded f64 bits).
pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    let hidden = params
        .cfg
        .hidden
        .iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join(",");
    writeln!(
        w,
        "#model feature_dim={} n_fields={} emb_dim={} hidden={} num_bins={} delay_head={}",
        params.cfg.feature_dim,
        params.cfg.n_fields,
        params.cfg.emb_dim,
        hidden,
        params.cfg.num_bins,
        params.cfg.delay_head
    )?;
    writeln!(w, "#train seed={} objective={}", meta.seed, meta.objective)?;
    writeln!(w, "#params {}", params.data.len())?;
    for chunk in params.data.chunks(8) {
        let line = chunk
            .iter()
            .map(|v| format!("{:016x}", v.to_bits()))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut cfg: Option<ModelConfig> = None;
    let mut meta: Option<CheckpointMeta> = None;
    let mut expected = 0usize;
    let mut data: Vec<f64> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line != CHECKPOINT_MAGIC {
                return Err(parse_err(lineno, format!("expected magic {CHECKPOINT_MAGIC:?}")));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(payload) = rest.strip_prefix("model ") {
                let kv: std::collections::HashMap<&str, &str> = payload
                    .split_whitespace()
                    .filter_map(|t| t.split_once('='))
                    .collect();
                let get = |k: &str| -> Result<&str> {
                    kv.get(k)
                        .copied()
                        .ok_or_else(|| parse_err(lineno, format!("missing {k}")))
                };
                let hidden_s = get("hidden")?;
                let hidden = if hidden_s.is_empty() {
                    Vec::new()
                } else {
                    hidden_s
                        .split(',')
                        .map(|t| t.parse().map_err(|_| parse_err(lineno, format!("bad hidden {t:?}"))))
                        .collect::<Result<Vec<usize>>>()?
                };
                cfg = Some(ModelConfig {
                    feature_dim: get("feature_dim")?
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad feature_dim".into()))?,
                    n_fields: get("n_fields")?
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad n_fields".into()))?,
                    emb_dim: get("emb_dim")?
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad emb_dim".into()))?,
                    hidden,
                    num_bins: get("num_bins")?
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad num_bins".into()))?,
                    delay_head: get("delay_head")?.parse()?,
                });
            } else if let Some(payload) = rest.strip_prefix("train ") {
                let kv: std::collections::HashMap<&str, &str> = payload
                    .split_whitespace()
                    .filter_map(|t| t.split_once('='))
                    .collect();
                meta = Some(CheckpointMeta {
                    seed: kv
                        .get("seed")
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(lineno, "missing seed".into()))?,
                    objective: kv.get("objective").copied().unwrap_or("unknown").to_string(),
                });
            } else if let Some(payload) = rest.strip_prefix("params ") {
                expected = payload
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(lineno, "bad param count".into()))?;
            }
            continue;
        }
        for tok in line.split_whitespace() {
            let bits = u64::from_str_radix(tok, 16)
                .map_err(|_| parse_err(lineno, format!("bad parameter word {tok:?}")))?;
            data.push(f64::from_bits(bits));
        }
    }
    let cfg = cfg.ok_or_else(|| parse_err(0, "missing #model header".into()))?;
    let meta = meta.ok_or_else(|| parse_err(0, "missing #train header".into()))?;
    let layout = build_layout(&cfg);
    if data.len() != expected || data.len() != layout.total {
        return Err(parse_err(
            0,
            format!(
                "parameter count mismatch: file has {}, header says {}, layout needs {}",
                data.len(),
                expected,
                layout.total
            ),
        ));
    }
    Ok((ModelParams { cfg, data, layout }, meta))
}
