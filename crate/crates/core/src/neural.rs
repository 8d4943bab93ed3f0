//! From-scratch convolutional masked-event predictor: embedding lookup,
//! valid 1-D convolution with ReLU, global max pooling, one dense ReLU
//! layer, linear output, softmax. All math in f64 with hand-written
//! backpropagation and an Adam-style optimizer.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{azip, Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::predictor::{MaskedPredictor, Prediction};
use crate::seeds::mix_seed;
use crate::window::{EventId, MaskedSample, WindowSpec};

const LOG_CLAMP: f64 = 1e-12;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MAX_EPOCHS: usize = 10_000_000;
const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnParams {
    pub d_emb: usize,
    pub n_filters: usize,
    pub filter_width: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for CnnParams {
    fn default() -> Self {
        CnnParams {
            d_emb: 50,
            n_filters: 64,
            filter_width: 3,
            hidden: 100,
            learning_rate: 1e-3,
            batch_size: 256,
        }
    }
}

/// The seven parameter tensors; also reused for gradients and optimizer
/// accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet {
    pub emb: Array2<f64>,      // vocab × d_emb
    pub conv_w: Array3<f64>,   // filters × width × d_emb
    pub conv_b: Array1<f64>,   // filters
    pub dense_w: Array2<f64>,  // filters × hidden
    pub dense_b: Array1<f64>,  // hidden
    pub out_w: Array2<f64>,    // hidden × vocab
    pub out_b: Array1<f64>,    // vocab
}

pub const N_TENSORS: usize = 7;

pub const TENSOR_NAMES: [&str; N_TENSORS] = [
    "emb", "conv_w", "conv_b", "dense_w", "dense_b", "out_w", "out_b",
];

impl TensorSet {
    fn zeros(vocab: usize, t: CnnParams) -> TensorSet {
        TensorSet {
            emb: Array2::zeros((vocab, t.d_emb)),
            conv_w: Array3::zeros((t.n_filters, t.filter_width, t.d_emb)),
            conv_b: Array1::zeros(t.n_filters),
            dense_w: Array2::zeros((t.n_filters, t.hidden)),
            dense_b: Array1::zeros(t.hidden),
            out_w: Array2::zeros((t.hidden, vocab)),
            out_b: Array1::zeros(vocab),
        }
    }

    pub fn flat(&self, k: usize) -> &[f64] {
        match k {
            0 => self.emb.as_slice().unwrap(),
            1 => self.conv_w.as_slice().unwrap(),
            2 => self.conv_b.as_slice().unwrap(),
            3 => self.dense_w.as_slice().unwrap(),
            4 => self.dense_b.as_slice().unwrap(),
            5 => self.out_w.as_slice().unwrap(),
            6 => self.out_b.as_slice().unwrap(),
            _ => panic!("tensor index {k} out of range"),
        }
    }

    pub fn flat_mut(&mut self, k: usize) -> &mut [f64] {
        match k {
            0 => self.emb.as_slice_mut().unwrap(),
            1 => self.conv_w.as_slice_mut().unwrap(),
            2 => self.conv_b.as_slice_mut().unwrap(),
            3 => self.dense_w.as_slice_mut().unwrap(),
            4 => self.dense_b.as_slice_mut().unwrap(),
            5 => self.out_w.as_slice_mut().unwrap(),
            6 => self.out_b.as_slice_mut().unwrap(),
            _ => panic!("tensor index {k} out of range"),
        }
    }

    fn all_finite(&self) -> bool {
        (0..N_TENSORS).all(|k| self.flat(k).iter().all(|x| x.is_finite()))
    }
}

pub type CnnGrads = TensorSet;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    vocab_size: usize,
    context_len: usize,
    mask_pos: usize,
    params: CnnParams,
    seed: u64,
    tensors: TensorSet,
}

struct Trace {
    x: Array3<f64>,        // batch × context × d_emb
    z: Array3<f64>,        // batch × positions × filters (pre-ReLU)
    pooled: Array2<f64>,   // batch × filters
    argmax: Vec<Vec<usize>>,
    h_pre: Array2<f64>,    // batch × hidden (pre-ReLU)
    h: Array2<f64>,
    probs: Array2<f64>,    // batch × vocab
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

impl CnnModel {
    /// Seeded initialization: weights uniform in (−0.05, 0.05) drawn in a
    /// fixed tensor order, biases zero.
    pub fn init(
        vocab_size: usize,
        window: WindowSpec,
        params: CnnParams,
        seed: u64,
    ) -> Result<CnnModel> {
        if vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocabulary of {vocab_size} is too small (reserved ids alone need 3)"
            )));
        }
        if params.d_emb == 0 || params.n_filters == 0 || params.filter_width == 0 || params.hidden == 0
        {
            return Err(Error::Config("cnn dimensions must all be positive".into()));
        }
        if params.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if params.learning_rate <= 0.0 || !params.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be positive and finite".into()));
        }
        let context_len = window.context_len();
        if context_len < params.filter_width {
            return Err(Error::Config(format!(
                "context of {} events is shorter than the filter width {}; use a larger window or narrower filters",
                context_len, params.filter_width
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| rng.random_range(-INIT_SCALE..INIT_SCALE))
                .collect()
        };
        let emb = Array2::from_shape_vec((vocab_size, params.d_emb), draw(vocab_size * params.d_emb))
            .unwrap();
        let conv_w = Array3::from_shape_vec(
            (params.n_filters, params.filter_width, params.d_emb),
            draw(params.n_filters * params.filter_width * params.d_emb),
        )
        .unwrap();
        let dense_w = Array2::from_shape_vec(
            (params.n_filters, params.hidden),
            draw(params.n_filters * params.hidden),
        )
        .unwrap();
        let out_w = Array2::from_shape_vec(
            (params.hidden, vocab_size),
            draw(params.hidden * vocab_size),
        )
        .unwrap();
        let mut tensors = TensorSet::zeros(vocab_size, params);
        tensors.emb = emb;
        tensors.conv_w = conv_w;
        tensors.dense_w = dense_w;
        tensors.out_w = out_w;
        Ok(CnnModel {
            vocab_size,
            context_len,
            mask_pos: window.mask_pos(),
            params,
            seed,
            tensors,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn mask_pos(&self) -> usize {
        self.mask_pos
    }

    pub fn window_size(&self) -> usize {
        self.context_len + 1
    }

    pub fn hyperparams(&self) -> CnnParams {
        self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tensors(&self) -> &TensorSet {
        &self.tensors
    }

    fn forward_trace(&self, ctxs: &[&[EventId]]) -> Trace {
        let b = ctxs.len();
        let t = self.context_len;
        let d = self.params.d_emb;
        let nf = self.params.n_filters;
        let w = self.params.filter_width;
        let p = t - w + 1;

        let mut x = Array3::<f64>::zeros((b, t, d));
        for (bi, ctx) in ctxs.iter().enumerate() {
            assert_eq!(ctx.len(), t, "context length must be {t}");
            for (ti, &e) in ctx.iter().enumerate() {
                let e = e as usize;
                assert!(e < self.vocab_size, "event id {e} outside vocabulary");
                x.index_axis_mut(Axis(0), bi)
                    .row_mut(ti)
                    .assign(&self.tensors.emb.row(e));
            }
        }

        let mut z = Array3::<f64>::zeros((b, p, nf));
        for bi in 0..b {
            for pi in 0..p {
                for fi in 0..nf {
                    let mut acc = self.tensors.conv_b[fi];
                    for j in 0..w {
                        for c in 0..d {
                            acc += x[[bi, pi + j, c]] * self.tensors.conv_w[[fi, j, c]];
                        }
                    }
                    z[[bi, pi, fi]] = acc;
                }
            }
        }

        let mut pooled = Array2::<f64>::zeros((b, nf));
        let mut argmax = vec![vec![0usize; nf]; b];
        for bi in 0..b {
            for fi in 0..nf {
                let mut best = f64::NEG_INFINITY;
                let mut best_p = 0;
                for pi in 0..p {
                    let a = z[[bi, pi, fi]].max(0.0);
                    if a > best {
                        best = a;
                        best_p = pi;
                    }
                }
                pooled[[bi, fi]] = best;
                argmax[bi][fi] = best_p;
            }
        }

        let h_pre = pooled.dot(&self.tensors.dense_w) + &self.tensors.dense_b;
        let h = h_pre.mapv(|v| v.max(0.0));
        let logits = h.dot(&self.tensors.out_w) + &self.tensors.out_b;
        let probs = softmax_rows(&logits);
        Trace {
            x,
            z,
            pooled,
            argmax,
            h_pre,
            h,
            probs,
        }
    }

    /// Probability rows for a batch of contexts; each row sums to 1.
    pub fn forward(&self, ctxs: &[&[EventId]]) -> Array2<f64> {
        self.forward_trace(ctxs).probs
    }

    /// Mean cross-entropy of the batch under the current parameters.
    pub fn loss_only(&self, batch: &[MaskedSample]) -> f64 {
        let ctxs: Vec<&[EventId]> = batch.iter().map(|s| s.context.as_slice()).collect();
        let probs = self.forward(&ctxs);
        let mut loss = 0.0;
        for (bi, s) in batch.iter().enumerate() {
            loss -= probs[[bi, s.target as usize]].max(LOG_CLAMP).ln();
        }
        loss / batch.len() as f64
    }

    /// Mean cross-entropy and full backpropagated gradients for one batch.
    pub fn loss_and_gradients(&self, batch: &[MaskedSample]) -> Result<(f64, CnnGrads)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty training batch".into()));
        }
        let ctxs: Vec<&[EventId]> = batch.iter().map(|s| s.context.as_slice()).collect();
        let trace = self.forward_trace(&ctxs);
        let b = batch.len();
        let nf = self.params.n_filters;
        let w = self.params.filter_width;
        let d = self.params.d_emb;

        let mut loss = 0.0;
        let mut dlogits = trace.probs.clone();
        for (bi, s) in batch.iter().enumerate() {
            let tgt = s.target as usize;
            assert!(tgt < self.vocab_size, "target id {tgt} outside vocabulary");
            loss -= trace.probs[[bi, tgt]].max(LOG_CLAMP).ln();
            dlogits[[bi, tgt]] -= 1.0;
        }
        loss /= b as f64;
        dlogits /= b as f64;

        let d_out_w = trace.h.t().dot(&dlogits);
        let d_out_b = dlogits.sum_axis(Axis(0));
        let mut dh = dlogits.dot(&self.tensors.out_w.t());
        azip!((g in &mut dh, &pre in &trace.h_pre) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        });
        let d_dense_w = trace.pooled.t().dot(&dh);
        let d_dense_b = dh.sum_axis(Axis(0));
        let dpooled = dh.dot(&self.tensors.dense_w.t());

        let mut grads = TensorSet::zeros(self.vocab_size, self.params);
        grads.out_w = d_out_w;
        grads.out_b = d_out_b;
        grads.dense_w = d_dense_w;
        grads.dense_b = d_dense_b;
        for bi in 0..b {
            for fi in 0..nf {
                let pi = trace.argmax[bi][fi];
                // The pooled value is ReLU-gated: no gradient unless the
                // winning pre-activation was positive.
                if trace.z[[bi, pi, fi]] <= 0.0 {
                    continue;
                }
                let g = dpooled[[bi, fi]];
                if g == 0.0 {
                    continue;
                }
                grads.conv_b[fi] += g;
                for j in 0..w {
                    let e = ctxs[bi][pi + j] as usize;
                    for c in 0..d {
                        grads.conv_w[[fi, j, c]] += g * trace.x[[bi, pi + j, c]];
                        grads.emb[[e, c]] += g * self.tensors.conv_w[[fi, j, c]];
                    }
                }
            }
        }
        Ok((loss, grads))
    }

    fn apply_adam(&mut self, grads: &CnnGrads, state: &mut TrainState) {
        let lr = self.params.learning_rate;
        let t = state.step;
        let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
        for k in 0..N_TENSORS {
            let g = grads.flat(k);
            let m = state.m.flat_mut(k);
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            }
            let v = state.v.flat_mut(k);
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            }
            let p = self.tensors.flat_mut(k);
            let m = state.m.flat(k);
            let v = state.v.flat(k);
            for i in 0..p.len() {
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }

    /// Versioned text checkpoint. Values are written as f64 bit patterns in
    /// hex, so the round trip is exact.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "cnn v1");
        let _ = writeln!(out, "vocab_size={}", self.vocab_size);
        let _ = writeln!(out, "context_len={}", self.context_len);
        let _ = writeln!(out, "mask_pos={}", self.mask_pos);
        let _ = writeln!(out, "d_emb={}", self.params.d_emb);
        let _ = writeln!(out, "n_filters={}", self.params.n_filters);
        let _ = writeln!(out, "filter_width={}", self.params.filter_width);
        let _ = writeln!(out, "hidden={}", self.params.hidden);
        let _ = writeln!(out, "batch_size={}", self.params.batch_size);
        let _ = writeln!(out, "learning_rate={:016X}", self.params.learning_rate.to_bits());
        let _ = writeln!(out, "seed={}", self.seed);
        for (k, name) in TENSOR_NAMES.iter().enumerate() {
            let flat = self.tensors.flat(k);
            let _ = writeln!(out, "tensor {} {}", name, flat.len());
            let mut line = String::with_capacity(flat.len() * 17);
            for (i, x) in flat.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{:016X}", x.to_bits());
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<CnnModel> {
        let bad = |msg: &str| Error::ModelFormat(format!("cnn checkpoint: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("cnn v1") {
            return Err(bad("missing `cnn v1` header"));
        }
        let mut num = |name: &str| -> Result<u64> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let v = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| bad(&format!("expected `{name}=`")))?;
            v.parse().map_err(|_| bad(&format!("bad {name} value {v:?}")))
        };
        let vocab_size = num("vocab_size")? as usize;
        let context_len = num("context_len")? as usize;
        let mask_pos = num("mask_pos")? as usize;
        let d_emb = num("d_emb")? as usize;
        let n_filters = num("n_filters")? as usize;
        let filter_width = num("filter_width")? as usize;
        let hidden = num("hidden")? as usize;
        let batch_size = num("batch_size")? as usize;
        let lr_line = lines.next().ok_or_else(|| bad("truncated header"))?;
        let lr_hex = lr_line
            .strip_prefix("learning_rate=")
            .ok_or_else(|| bad("expected `learning_rate=`"))?;
        let learning_rate = f64::from_bits(
            u64::from_str_radix(lr_hex, 16).map_err(|_| bad("bad learning_rate bits"))?,
        );
        let seed_line = lines.next().ok_or_else(|| bad("truncated header"))?;
        let seed: u64 = seed_line
            .strip_prefix("seed=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad seed"))?;
        let params = CnnParams {
            d_emb,
            n_filters,
            filter_width,
            hidden,
            learning_rate,
            batch_size,
        };
        let mut tensors = TensorSet::zeros(vocab_size, params);
        for (k, name) in TENSOR_NAMES.iter().enumerate() {
            let head = lines.next().ok_or_else(|| bad("missing tensor header"))?;
            let want = format!("tensor {} {}", name, tensors.flat(k).len());
            if head != want {
                return Err(bad(&format!("expected {want:?}, got {head:?}")));
            }
            let data = lines.next().ok_or_else(|| bad("missing tensor data"))?;
            let dst = tensors.flat_mut(k);
            let mut count = 0;
            for (i, word) in data.split_ascii_whitespace().enumerate() {
                if i >= dst.len() {
                    return Err(bad(&format!("too many values for tensor {name}")));
                }
                let bits =
                    u64::from_str_radix(word, 16).map_err(|_| bad("bad f64 bit pattern"))?;
                dst[i] = f64::from_bits(bits);
                count += 1;
            }
            if count != dst.len() {
                return Err(bad(&format!(
                    "tensor {name} has {count} values, expected {}",
                    dst.len()
                )));
            }
        }
        if context_len < filter_width || vocab_size < 4 {
            return Err(bad("inconsistent shapes"));
        }
        Ok(CnnModel {
            vocab_size,
            context_len,
            mask_pos,
            params,
            seed,
            tensors,
        })
    }

    #[cfg(test)]
    fn zero_all(&mut self) {
        for k in 0..N_TENSORS {
            self.tensors.flat_mut(k).fill(0.0);
        }
    }
}

/// Optimizer accumulators plus per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainState {
    step: u64,
    m: TensorSet,
    v: TensorSet,
    pub loss_history: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl TrainState {
    pub fn new(model: &CnnModel) -> TrainState {
        TrainState {
            step: 0,
            m: TensorSet::zeros(model.vocab_size, model.params),
            v: TensorSet::zeros(model.vocab_size, model.params),
            loss_history: Vec::new(),
            epoch_seconds: Vec::new(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.loss_history.len()
    }
}

/// One pass of shuffled mini-batch updates. The shuffle is seeded from the
/// model seed and the epoch index, so training is reproducible end to end.
/// Returns the epoch's mean sample loss.
pub fn train_epoch(
    model: &mut CnnModel,
    state: &mut TrainState,
    samples: &[MaskedSample],
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let start = Instant::now();
    let epoch = state.loss_history.len() as u64;
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(model.seed, epoch + 1));
    idx.shuffle(&mut rng);

    let mut total = 0.0;
    for chunk in idx.chunks(batch_size) {
        let batch: Vec<MaskedSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
        let (loss, grads) = model.loss_and_gradients(&batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss at optimizer step {}",
                state.step + 1
            )));
        }
        total += loss * batch.len() as f64;
        state.step += 1;
        model.apply_adam(&grads, state);
    }
    if !model.tensors.all_finite() {
        return Err(Error::Diverged(format!(
            "non-finite parameter after epoch {}",
            epoch + 1
        )));
    }
    let mean = total / samples.len() as f64;
    state.loss_history.push(mean);
    state.epoch_seconds.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    Ok(mean)
}

/// Train for a fixed number of epochs from a fresh optimizer state.
pub fn train(model: &mut CnnModel, samples: &[MaskedSample], epochs: usize) -> Result<TrainState> {
    let mut state = TrainState::new(model);
    for _ in 0..epochs {
        train_epoch(model, &mut state, samples, model.params.batch_size)?;
    }
    Ok(state)
}

/// Epochs affordable under a wall-clock budget at a measured epoch cost.
pub fn epochs_for_budget(budget_seconds: f64, epoch_seconds: f64) -> usize {
    let raw = (budget_seconds / epoch_seconds.max(1e-9)).floor();
    if raw.is_nan() || raw < 1.0 {
        return 1;
    }
    (raw as usize).min(MAX_EPOCHS)
}

/// Time one epoch on a scratch copy of the model and convert the budget to
/// an epoch count. The input model is untouched.
pub fn calibrate_epochs(
    model: &CnnModel,
    samples: &[MaskedSample],
    budget_seconds: f64,
    batch_size: usize,
) -> Result<usize> {
    if budget_seconds.is_nan() || budget_seconds <= 0.0 {
        return Err(Error::Config("time budget must be positive".into()));
    }
    let mut probe = model.clone();
    let mut state = TrainState::new(&probe);
    train_epoch(&mut probe, &mut state, samples, batch_size)?;
    Ok(epochs_for_budget(budget_seconds, state.epoch_seconds[0]))
}

/// Max relative error between analytic gradients and central finite
/// differences over every parameter of every tensor. Diagnostic oracle for
/// the backpropagation; small models only.
pub fn gradient_check(model: &CnnModel, batch: &[MaskedSample], epsilon: f64) -> Result<f64> {
    let (_, grads) = model.loss_and_gradients(batch)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for k in 0..N_TENSORS {
        for i in 0..grads.flat(k).len() {
            let orig = probe.tensors.flat(k)[i];
            probe.tensors.flat_mut(k)[i] = orig + epsilon;
            let plus = probe.loss_only(batch);
            probe.tensors.flat_mut(k)[i] = orig - epsilon;
            let minus = probe.loss_only(batch);
            probe.tensors.flat_mut(k)[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads.flat(k)[i];
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

impl MaskedPredictor for CnnModel {
    fn distribution(&self, context: &[EventId]) -> Vec<Prediction> {
        let probs = self.forward(&[context]);
        let mut out: Vec<Prediction> = probs
            .row(0)
            .iter()
            .enumerate()
            .map(|(e, &prob)| Prediction {
                event: e as EventId,
                prob,
            })
            .collect();
        out.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.event.cmp(&b.event)));
        out
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn name(&self) -> &'static str {
        "cnn"
    }
}
