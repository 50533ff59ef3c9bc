//! Two fully connected layers regressing the human-agreement fraction of a
//! candidate from its descriptor, the balancing / hard-positive-mining training
//! protocol, and a ridge linear probe for per-layer weight profiles.
//!
//! The head computes `y = clamp(w2 · relu(W1 d + b1) + b2, 0, 1)`. Training
//! minimizes the squared error of the linear output `w2 · a + b2` against the
//! label with minibatch SGD and momentum; the clamp is applied to reported
//! predictions only.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{Descriptor, DescriptorMatrix};
use crate::tensor_io::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Train,
    Holdout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub descriptor: Descriptor,
    pub label: f32,
    pub origin: Origin,
}

impl LabeledSample {
    pub fn new(descriptor: Descriptor, label: f32, origin: Origin) -> Result<Self> {
        if !(0.0..=1.0).contains(&label) {
            return Err(Error::InvalidArgument(format!("label {label} outside [0, 1]")));
        }
        Ok(Self {
            descriptor,
            label,
            origin,
        })
    }
}

/// Samples from the rows of a descriptor matrix.
pub fn samples_from_matrix(m: &DescriptorMatrix, labels: &[f32], origin: Origin) -> Result<Vec<LabeledSample>> {
    if labels.len() != m.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} descriptors",
            labels.len(),
            m.rows()
        )));
    }
    (0..m.rows())
        .map(|i| LabeledSample::new(m.row(i).to_vec(), labels[i], origin))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub fn_threshold: f32,
    pub dropout_rate: f32,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_phase1: 25,
            epochs_phase2: 25,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 256,
            fn_threshold: 0.5,
            dropout_rate: 0.5,
            hidden: 1024,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.fn_threshold > 0.0 && self.fn_threshold < 1.0) {
            return bad("fn_threshold must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value {v:?} for {key}")))
        }
        match key {
            "epochs_phase1" => self.epochs_phase1 = parse(key, value)?,
            "epochs_phase2" => self.epochs_phase2 = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "fn_threshold" => self.fn_threshold = parse(key, value)?,
            "dropout_rate" => self.dropout_rate = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => {
                return Err(Error::InvalidArgument(format!("unknown train setting {other:?}")))
            }
        }
        Ok(())
    }

    /// Parses a flat `key=value` file (`#` comments, blank lines ignored) over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        format!(
            "epochs_phase1={}\nepochs_phase2={}\nlearning_rate={}\nmomentum={}\nbatch_size={}\nfn_threshold={}\ndropout_rate={}\nhidden={}\nseed={}\n",
            self.epochs_phase1,
            self.epochs_phase2,
            self.learning_rate,
            self.momentum,
            self.batch_size,
            self.fn_threshold,
            self.dropout_rate,
            self.hidden,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorHead {
    input_dim: usize,
    hidden: usize,
    /// Row-major `[hidden, input_dim]`.
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: f32,
    dropout_rate: f32,
    seed: u64,
}

impl RegressorHead {
    /// Uniform fan-in initialization drawn from `seed`; biases start at zero.
    pub fn init(input_dim: usize, hidden: usize, dropout_rate: f32, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("head dims must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / input_dim as f32).sqrt();
        let a2 = (6.0 / (hidden + 1) as f32).sqrt();
        let w1 = (0..hidden * input_dim)
            .map(|_| rng.random_range(-a1..a1))
            .collect();
        let w2 = (0..hidden).map(|_| rng.random_range(-a2..a2)).collect();
        Self::from_parts(
            input_dim,
            w1,
            vec![0.0; hidden],
            w2,
            0.0,
            dropout_rate,
            seed,
        )
    }

    pub fn from_parts(
        input_dim: usize,
        w1: Vec<f32>,
        b1: Vec<f32>,
        w2: Vec<f32>,
        b2: f32,
        dropout_rate: f32,
        seed: u64,
    ) -> Result<Self> {
        let hidden = b1.len();
        if hidden == 0 || input_dim == 0 {
            return Err(Error::InvalidArgument("head dims must be positive".into()));
        }
        if w1.len() != hidden * input_dim || w2.len() != hidden {
            return Err(Error::Shape(format!(
                "head parameter sizes w1={} b1={} w2={} do not fit hidden={hidden}, input={input_dim}",
                w1.len(),
                b1.len(),
                w2.len()
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let finite = w1.iter().chain(&b1).chain(&w2).all(|v| v.is_finite()) && b2.is_finite();
        if !finite {
            return Err(Error::InvalidArgument("head parameters must be finite".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
            dropout_rate,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn dropout_rate(&self) -> f32 {
        self.dropout_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn w1(&self) -> &[f32] {
        &self.w1
    }

    pub fn b1(&self) -> &[f32] {
        &self.b1
    }

    pub fn w2(&self) -> &[f32] {
        &self.w2
    }

    pub fn b2(&self) -> f32 {
        self.b2
    }

    fn check_dim(&self, d: &[f32]) -> Result<()> {
        if d.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "descriptor has {} values, head expects {}",
                d.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, d: &[f32], j: usize) -> f32 {
        let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
        dot(row, d) + self.b1[j]
    }

    /// Unclamped linear output in inference mode.
    fn linear_output(&self, d: &[f32]) -> f32 {
        let mut y = self.b2;
        for j in 0..self.hidden {
            let a = self.pre_activation(d, j).max(0.0);
            y += self.w2[j] * a;
        }
        y
    }

    /// Inference-mode prediction in `[0, 1]`.
    pub fn forward(&self, d: &[f32]) -> Result<f32> {
        self.check_dim(d)?;
        Ok(clamp_unit(self.linear_output(d)))
    }

    /// Train-mode prediction: inverted dropout on the hidden units, driven by `rng`.
    pub fn forward_train<R: Rng>(&self, d: &[f32], rng: &mut R) -> Result<f32> {
        self.check_dim(d)?;
        let keep_scale = 1.0 / (1.0 - self.dropout_rate);
        let mut y = self.b2;
        for j in 0..self.hidden {
            let keep = rng.random::<f32>() >= self.dropout_rate;
            if keep {
                let a = self.pre_activation(d, j).max(0.0) * keep_scale;
                y += self.w2[j] * a;
            }
        }
        Ok(clamp_unit(y))
    }

    /// Inference over every row, fanned out on the ambient rayon pool.
    pub fn predict(&self, m: &DescriptorMatrix) -> Result<Vec<f32>> {
        if m.rows() > 0 {
            self.check_dim(m.row(0))?;
        } else if m.cols() != self.input_dim {
            return Err(Error::Shape("descriptor width does not match head".into()));
        }
        Ok((0..m.rows())
            .into_par_iter()
            .map(|i| clamp_unit(self.linear_output(m.row(i))))
            .collect())
    }

    pub fn predict_samples(&self, samples: &[LabeledSample]) -> Result<Vec<f32>> {
        samples.iter().map(|s| self.forward(&s.descriptor)).collect()
    }

    /// Writes `w1.hflt`, `b1.hflt`, `w2.hflt`, `b2.hflt` and `head.meta` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        let t = |dims: Vec<usize>, v: &[f32]| Tensor::new(dims, v.to_vec());
        tensor_io::save_tensor(&t(vec![self.hidden, self.input_dim], &self.w1)?, &dir.join("w1.hflt"))?;
        tensor_io::save_tensor(&t(vec![self.hidden], &self.b1)?, &dir.join("b1.hflt"))?;
        tensor_io::save_tensor(&t(vec![self.hidden], &self.w2)?, &dir.join("w2.hflt"))?;
        tensor_io::save_tensor(&t(vec![1], &[self.b2])?, &dir.join("b2.hflt"))?;
        let meta = format!(
            "hidden={}\ndropout_rate={}\nseed={}\ninput_dim={}\n",
            self.hidden, self.dropout_rate, self.seed, self.input_dim
        );
        let p = dir.join("head.meta");
        std::fs::write(&p, meta).map_err(|e| Error::io_at(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("head.meta");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io_at(&p, e))?;
        let mut hidden = None;
        let mut dropout = None;
        let mut seed = None;
        let mut input_dim = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("bad meta line {line:?}")).with_path(&p))?;
            let bad = || Error::InvalidArgument(format!("bad value for {k}")).with_path(&p);
            match k.trim() {
                "hidden" => hidden = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                "dropout_rate" => dropout = Some(v.trim().parse::<f32>().map_err(|_| bad())?),
                "seed" => seed = Some(v.trim().parse::<u64>().map_err(|_| bad())?),
                "input_dim" => input_dim = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::InvalidArgument(format!("head.meta lacks {k}")).with_path(&p);
        let hidden = hidden.ok_or_else(|| missing("hidden"))?;
        let input_dim = input_dim.ok_or_else(|| missing("input_dim"))?;
        let w1 = tensor_io::load_tensor(&dir.join("w1.hflt"))?;
        let b1 = tensor_io::load_tensor(&dir.join("b1.hflt"))?;
        let w2 = tensor_io::load_tensor(&dir.join("w2.hflt"))?;
        let b2 = tensor_io::load_tensor(&dir.join("b2.hflt"))?;
        if w1.dims() != [hidden, input_dim] || b1.dims() != [hidden] || w2.dims() != [hidden] || b2.dims() != [1] {
            return Err(Error::Shape("head tensors disagree with head.meta".into()).with_path(dir));
        }
        Self::from_parts(
            input_dim,
            w1.into_data(),
            b1.into_data(),
            w2.into_data(),
            b2.data()[0],
            dropout.ok_or_else(|| missing("dropout_rate"))?,
            seed.ok_or_else(|| missing("seed"))?,
        )
    }
}

#[inline]
fn clamp_unit(y: f32) -> f32 {
    y.clamp(0.0, 1.0)
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent partial sums keep the accumulation order fixed and vectorizable.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for k in 0..chunks {
        let (x, y) = (&a[k * 8..k * 8 + 8], &b[k * 8..k * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for k in chunks * 8..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: RegressorHead,
    /// Inference-mode mean squared error of the linear output after each epoch.
    pub loss_trace: Vec<f64>,
}

fn mean_squared_error(head: &RegressorHead, samples: &[LabeledSample]) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| {
            let e = f64::from(head.linear_output(&s.descriptor)) - f64::from(s.label);
            e * e
        })
        .sum();
    total / samples.len() as f64
}

/// Minibatch SGD with momentum for `epochs` epochs, reshuffling each epoch.
///
/// `stream` separates the random streams of successive training phases that share a seed.
pub fn train(
    head: &RegressorHead,
    samples: &[LabeledSample],
    cfg: &TrainConfig,
    epochs: usize,
    stream: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one sample".into()));
    }
    for s in samples {
        head.check_dim(&s.descriptor)?;
        if !(0.0..=1.0).contains(&s.label) {
            return Err(Error::InvalidArgument(format!("label {} outside [0, 1]", s.label)));
        }
    }
    let mut h = head.clone();
    h.dropout_rate = cfg.dropout_rate;
    let (n_in, n_hid) = (h.input_dim, h.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let mut vel_w1 = vec![0.0f32; n_hid * n_in];
    let mut vel_b1 = vec![0.0f32; n_hid];
    let mut vel_w2 = vec![0.0f32; n_hid];
    let mut vel_b2 = 0.0f32;
    let mut g_w1 = vec![0.0f32; n_hid * n_in];
    let mut g_b1 = vec![0.0f32; n_hid];
    let mut g_w2 = vec![0.0f32; n_hid];
    let mut z = vec![0.0f32; n_hid];
    let mut act = vec![0.0f32; n_hid];
    let keep_scale = 1.0 / (1.0 - cfg.dropout_rate);

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            g_w1.fill(0.0);
            g_b1.fill(0.0);
            g_w2.fill(0.0);
            let mut g_b2 = 0.0f32;
            let scale = 2.0 / batch.len() as f32;
            for &si in batch {
                let s = &samples[si];
                let d = &s.descriptor[..];
                let mut y = h.b2;
                for j in 0..n_hid {
                    z[j] = h.pre_activation(d, j);
                    let keep = cfg.dropout_rate == 0.0 || rng.random::<f32>() >= cfg.dropout_rate;
                    act[j] = if keep && z[j] > 0.0 { z[j] * keep_scale } else { 0.0 };
                    y += h.w2[j] * act[j];
                }
                let dy = scale * (y - s.label);
                g_b2 += dy;
                for j in 0..n_hid {
                    if act[j] == 0.0 {
                        continue;
                    }
                    g_w2[j] += dy * act[j];
                    let dz = dy * h.w2[j] * keep_scale;
                    g_b1[j] += dz;
                    let g = &mut g_w1[j * n_in..(j + 1) * n_in];
                    for (gk, &dk) in g.iter_mut().zip(d) {
                        *gk += dz * dk;
                    }
                }
            }
            let (lr, mu) = (cfg.learning_rate, cfg.momentum);
            let step = |p: &mut [f32], v: &mut [f32], g: &[f32]| {
                for ((pk, vk), &gk) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vk = mu * *vk - lr * gk;
                    *pk += *vk;
                }
            };
            step(&mut h.w1, &mut vel_w1, &g_w1);
            step(&mut h.b1, &mut vel_b1, &g_b1);
            step(&mut h.w2, &mut vel_w2, &g_w2);
            vel_b2 = mu * vel_b2 - lr * g_b2;
            h.b2 += vel_b2;
        }
        let loss = mean_squared_error(&h, samples);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        trace.push(loss);
    }
    Ok(TrainOutcome {
        head: h,
        loss_trace: trace,
    })
}

/// Quartile bin of a label: `[0,.25)`, `[.25,.5)`, `[.5,.75)`, `[.75,1]`.
pub fn quartile(label: f32) -> usize {
    ((label * 4.0).floor() as usize).min(3)
}

/// Indices of an equal-count draw from every nonempty label quartile, in input order.
pub fn balance_quartiles_indices(samples: &[LabeledSample], seed: u64) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot balance an empty sample set".into()));
    }
    let mut bins: [Vec<usize>; 4] = Default::default();
    for (i, s) in samples.iter().enumerate() {
        bins[quartile(s.label)].push(i);
    }
    let m = bins
        .iter()
        .filter(|b| !b.is_empty())
        .map(Vec::len)
        .min()
        .expect("at least one bin is nonempty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(4 * m);
    for bin in bins.iter_mut().filter(|b| !b.is_empty()) {
        bin.shuffle(&mut rng);
        picked.extend_from_slice(&bin[..m]);
    }
    picked.sort_unstable();
    Ok(picked)
}

pub fn balance_quartiles(samples: &[LabeledSample], seed: u64) -> Result<Vec<LabeledSample>> {
    Ok(balance_quartiles_indices(samples, seed)?
        .into_iter()
        .map(|i| samples[i].clone())
        .collect())
}

/// Hard-positive mining result, as indices into the holdout set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mining {
    pub false_negatives: Vec<usize>,
    pub true_negatives: Vec<usize>,
}

impl Mining {
    pub fn augmentation(&self, holdout: &[LabeledSample]) -> Vec<LabeledSample> {
        self.false_negatives
            .iter()
            .chain(&self.true_negatives)
            .map(|&i| holdout[i].clone())
            .collect()
    }
}

/// False negatives on the holdout (`label ≥ t`, prediction `< t`) plus as many
/// randomly drawn true negatives (`label < t`, prediction `< t`), or the whole
/// true-negative pool if it is smaller.
pub fn mine_hard_positives(
    head: &RegressorHead,
    holdout: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<Mining> {
    let t = cfg.fn_threshold;
    let preds = head.predict_samples(holdout)?;
    let mut false_negatives = Vec::new();
    let mut pool = Vec::new();
    for (i, (s, &p)) in holdout.iter().zip(&preds).enumerate() {
        if p < t {
            if s.label >= t {
                false_negatives.push(i);
            } else {
                pool.push(i);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(MINING_STREAM);
    let take = false_negatives.len().min(pool.len());
    pool.shuffle(&mut rng);
    let mut true_negatives = pool[..take].to_vec();
    true_negatives.sort_unstable();
    Ok(Mining {
        false_negatives,
        true_negatives,
    })
}

pub fn count_false_negatives(head: &RegressorHead, holdout: &[LabeledSample], threshold: f32) -> Result<usize> {
    let preds = head.predict_samples(holdout)?;
    Ok(holdout
        .iter()
        .zip(preds)
        .filter(|(s, p)| s.label >= threshold && *p < threshold)
        .count())
}

const PHASE1_STREAM: u64 = 1;
const PHASE2_STREAM: u64 = 2;
const MINING_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolReport {
    pub head: RegressorHead,
    pub balanced_count: usize,
    pub phase1_loss: Vec<f64>,
    pub phase2_loss: Vec<f64>,
    pub holdout_fn_phase1: usize,
    pub holdout_fn_phase2: usize,
    pub mined_false_negatives: usize,
    pub mined_true_negatives: usize,
}

impl ProtocolReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "balanced_samples={}", self.balanced_count);
        let _ = writeln!(s, "holdout_fn_phase1={}", self.holdout_fn_phase1);
        let _ = writeln!(s, "holdout_fn_phase2={}", self.holdout_fn_phase2);
        let _ = writeln!(s, "mined_false_negatives={}", self.mined_false_negatives);
        let _ = writeln!(s, "mined_true_negatives={}", self.mined_true_negatives);
        for (i, l) in self.phase1_loss.iter().chain(&self.phase2_loss).enumerate() {
            let _ = writeln!(s, "epoch{}_mse={l:.9}", i + 1);
        }
        s
    }
}

/// Quartile balancing, phase-1 training, hard-positive mining on the holdout,
/// then phase-2 training on the augmented set.
pub fn train_with_mining(
    head: &RegressorHead,
    train_set: &[LabeledSample],
    holdout: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<ProtocolReport> {
    let balanced = balance_quartiles(train_set, cfg.seed)?;
    let phase1 = train(head, &balanced, cfg, cfg.epochs_phase1, PHASE1_STREAM)?;
    let holdout_fn_phase1 = count_false_negatives(&phase1.head, holdout, cfg.fn_threshold)?;
    let mining = mine_hard_positives(&phase1.head, holdout, cfg)?;
    let mut augmented = balanced.clone();
    augmented.extend(mining.augmentation(holdout));
    let phase2 = train(&phase1.head, &augmented, cfg, cfg.epochs_phase2, PHASE2_STREAM)?;
    let holdout_fn_phase2 = count_false_negatives(&phase2.head, holdout, cfg.fn_threshold)?;
    Ok(ProtocolReport {
        head: phase2.head,
        balanced_count: balanced.len(),
        phase1_loss: phase1.loss_trace,
        phase2_loss: phase2.loss_trace,
        holdout_fn_phase1,
        holdout_fn_phase2,
        mined_false_negatives: mining.false_negatives.len(),
        mined_true_negatives: mining.true_negatives.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub weights: Vec<f64>,
    pub magnitudes: Vec<f64>,
    /// `(layer name, mean |w|)` in layer order.
    pub layer_profile: Vec<(String, f64)>,
}

/// Ridge regression `(XᵀX + λI) w = Xᵀy` solved through a Cholesky factorization.
pub fn linear_probe(m: &DescriptorMatrix, labels: &[f32], lambda: f64) -> Result<ProbeResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge lambda must be positive, got {lambda}")));
    }
    if labels.len() != m.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), m.rows())));
    }
    let n = m.cols();
    let mut gram = vec![0.0f64; n * n];
    let mut rhs = vec![0.0f64; n];
    for (i, &y) in labels.iter().enumerate() {
        let row = m.row(i);
        for a in 0..n {
            let xa = f64::from(row[a]);
            if xa == 0.0 {
                continue;
            }
            rhs[a] += xa * f64::from(y);
            let g = &mut gram[a * n..a * n + a + 1];
            for (b, gb) in g.iter_mut().enumerate() {
                *gb += xa * f64::from(row[b]);
            }
        }
    }
    for a in 0..n {
        gram[a * n + a] += lambda;
    }
    let weights = cholesky_solve(&mut gram, &rhs, n)?;
    let magnitudes: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    let layer_profile = m
        .layers()
        .iter()
        .map(|l| {
            let s: f64 = magnitudes[l.start..l.start + l.channels].iter().sum();
            (l.name.clone(), s / l.channels as f64)
        })
        .collect();
    Ok(ProbeResult {
        weights,
        magnitudes,
        layer_profile,
    })
}

/// Solves `A x = b` for SPD `A` given by its lower triangle (row-major), factoring in place.
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(Error::InvalidArgument("normal matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}
