//! Small fully-connected networks trained with plain SGD, instrumented for
//! the downstream information analyses: weight snapshots on a schedule,
//! per-layer gradient mean/std norms per epoch, error curves, and weight
//! displacement from initialization.
//!
//! Training is single-threaded and bit-for-bit reproducible from
//! `(NetworkSpec::seed, TrainConfig)`.

use crate::datagen::{PatternSet, RuleDistribution};
use crate::linalg::Matrix;
use crate::scalar::{erf, lit, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("loss diverged (NaN) at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("dataset has {inputs} input columns / {classes} classes, spec wants {want_in}/{want_out}")]
    ShapeMismatch { inputs: usize, classes: usize, want_in: usize, want_out: usize },
    #[error("batch size {batch} exceeds training set size {train}")]
    BatchTooLarge { batch: usize, train: usize },
    #[error("layer {0} out of range")]
    LayerOutOfRange(usize),
    #[error("need at least {need} points in the fit window, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("non-positive value in series at index {0}")]
    NonPositive(usize),
    #[error("spec invalid: {0}")]
    BadSpec(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("artifact parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Erf,
}

/// Architecture and initialization; `layer_widths` runs input..output.
/// Hidden layers use `activation`, the output layer is sigmoidal and pairs
/// with cross-entropy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// Weight std is `init_weight_std / sqrt(fan_in)`.
    pub init_weight_std: f64,
    pub init_bias_std: f64,
    pub seed: u64,
}

impl NetworkSpec {
    /// The benchmark default: widths 12-10-7-5-4-3-2, tanh.
    pub fn benchmark_default(seed: u64) -> Self {
        Self {
            layer_widths: vec![12, 10, 7, 5, 4, 3, 2],
            activation: Activation::Tanh,
            init_weight_std: 1.0,
            init_bias_std: 0.0,
            seed,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    fn validate(&self) -> Result<(), NetError> {
        if self.layer_widths.len() < 3 {
            return Err(NetError::BadSpec("need at least one hidden layer".into()));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(NetError::BadSpec("zero-width layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of the dataset used for training; the rest is the test set.
    pub train_fraction: f64,
    /// SGD step indices at which to snapshot the full weight set. Empty
    /// means "geometric default" (0, 1, 2, ... then ×1.25, plus the end).
    pub snapshot_schedule: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 256,
            epochs: 8000,
            train_fraction: 0.85,
            snapshot_schedule: Vec::new(),
        }
    }
}

/// Geometric snapshot schedule over `total_steps` SGD iterations: 0, 1, 2,
/// then ×`ratio`, always including the final step.
pub fn geometric_schedule(total_steps: usize, ratio: f64) -> Vec<usize> {
    let mut steps = vec![0usize];
    let mut t = 1f64;
    while (t as usize) < total_steps {
        let s = t as usize;
        if *steps.last().unwrap() != s {
            steps.push(s);
        }
        t = (t * ratio).max(t + 1.0);
    }
    if *steps.last().unwrap() != total_steps {
        steps.push(total_steps);
    }
    steps
}

/// Classification dataset: one row per example, integer class labels.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub inputs: Matrix<F>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl<F: Real> Dataset<F> {
    /// Builds the symmetric-task dataset: ±1 pattern rows, labels sampled
    /// once from p(y|x) with the given seed.
    pub fn from_rule(patterns: &PatternSet, rule: &RuleDistribution<F>, seed: u64) -> Self {
        let inputs = patterns.input_matrix::<F>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xbb67_ae85));
        let labels = rule
            .p_y1_given_x
            .iter()
            .map(|&p1| usize::from(lit::<F>(rng.gen_range(0.0..1.0)) < p1))
            .collect();
        Self { inputs, labels, n_classes: 2 }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weights and biases of one network; layer `l` maps width `w[l]` to
/// `w[l+1]` with `out = act(W a + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub weights: Vec<Matrix<F>>,
    pub biases: Vec<Vec<F>>,
    pub activation: Activation,
}

fn sigmoid<F: Real>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

impl<F: Real> Mlp<F> {
    pub fn init(spec: &NetworkSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..spec.n_layers() {
            let fan_in = spec.layer_widths[l];
            let fan_out = spec.layer_widths[l + 1];
            let std = lit::<F>(spec.init_weight_std / (fan_in as f64).sqrt());
            weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| {
                std * lit::<F>(<StandardNormal as Distribution<f64>>::sample(
                    &StandardNormal,
                    &mut rng,
                ))
            }));
            let bstd = lit::<F>(spec.init_bias_std);
            biases.push(
                (0..fan_out)
                    .map(|_| {
                        bstd * lit::<F>(<StandardNormal as Distribution<f64>>::sample(
                            &StandardNormal,
                            &mut rng,
                        ))
                    })
                    .collect(),
            );
        }
        Self { weights, biases, activation: spec.activation }
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    fn hidden_act(&self, z: F) -> F {
        match self.activation {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(F::zero()),
            Activation::Erf => erf(z),
        }
    }

    fn hidden_act_deriv(&self, z: F, a: F) -> F {
        match self.activation {
            Activation::Tanh => F::one() - a * a,
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Erf => lit::<F>(2.0 / std::f64::consts::PI.sqrt()) * (-z * z).exp(),
        }
    }

    /// Post-nonlinearity output of one layer applied to `input` rows.
    pub fn forward_layer(&self, layer: usize, input: &Matrix<F>) -> Matrix<F> {
        let out_w = self.weights[layer].rows();
        let n = input.rows();
        let mut next = Matrix::zeros(n, out_w);
        for s in 0..n {
            let row = input.row(s);
            for j in 0..out_w {
                let mut z = self.biases[layer][j];
                for (i, &a) in row.iter().enumerate() {
                    z += self.weights[layer][(j, i)] * a;
                }
                next[(s, j)] =
                    if layer + 1 == self.n_layers() { sigmoid(z) } else { self.hidden_act(z) };
            }
        }
        next
    }

    /// Post-nonlinearity activations of every layer (hidden layers and the
    /// sigmoid output), one matrix per layer, rows aligned with `inputs`.
    pub fn layer_activations(&self, inputs: &Matrix<F>) -> Vec<Matrix<F>> {
        let n = inputs.rows();
        let mut acts = Vec::with_capacity(self.n_layers());
        let mut current = inputs.clone();
        for l in 0..self.n_layers() {
            let out_w = self.weights[l].rows();
            let mut next = Matrix::zeros(n, out_w);
            for s in 0..n {
                let row = current.row(s);
                for j in 0..out_w {
                    let mut z = self.biases[l][j];
                    for (i, &a) in row.iter().enumerate() {
                        z += self.weights[l][(j, i)] * a;
                    }
                    next[(s, j)] =
                        if l + 1 == self.n_layers() { sigmoid(z) } else { self.hidden_act(z) };
                }
            }
            acts.push(next.clone());
            current = next;
        }
        acts
    }

    /// Predicted class per row (argmax of the output units).
    pub fn predict(&self, inputs: &Matrix<F>) -> Vec<usize> {
        let out = self.layer_activations(inputs).pop().expect("at least one layer");
        (0..out.rows())
            .map(|s| {
                let row = out.row(s);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Mean cross-entropy and classification error over the given rows.
    pub fn evaluate(&self, data: &Dataset<F>, idx: &[usize]) -> (F, F) {
        let outs = self.layer_activations(&select_rows(&data.inputs, idx));
        let out = outs.last().unwrap();
        let mut loss = F::zero();
        let mut errors = 0usize;
        let eps = lit::<F>(1e-12);
        for (s, &i) in idx.iter().enumerate() {
            let label = data.labels[i];
            let row = out.row(s);
            let mut best = 0;
            for (j, &o) in row.iter().enumerate() {
                let t = if j == label { F::one() } else { F::zero() };
                let oc = o.max(eps).min(F::one() - eps);
                loss -= t * oc.ln() + (F::one() - t) * (F::one() - oc).ln();
                if o > row[best] {
                    best = j;
                }
            }
            if best != label {
                errors += 1;
            }
        }
        let n = lit::<F>(idx.len() as f64);
        (loss / n, lit::<F>(errors as f64) / n)
    }
}

pub fn select_rows<F: Real>(m: &Matrix<F>, idx: &[usize]) -> Matrix<F> {
    Matrix::from_fn(idx.len(), m.cols(), |r, c| m[(idx[r], c)])
}

/// Per-layer gradient statistics of one epoch: Frobenius norms of the
/// batch-mean gradient and of its element-wise std across batches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerGradStat {
    pub mean_norm: f64,
    pub std_norm: f64,
    /// None when the std vanishes (constant gradients).
    pub snr: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Global SGD step at the end of this epoch.
    pub iteration: usize,
    pub layers: Vec<LayerGradStat>,
}

/// Mean/std/snr statistics from a stack of per-batch gradient matrices,
/// matching what the trainer accumulates during an epoch.
pub fn grad_stats_from_batches<F: Real>(batch_grads: &[Matrix<F>]) -> LayerGradStat {
    assert!(!batch_grads.is_empty());
    let n = lit::<F>(batch_grads.len() as f64);
    let mut sum = Matrix::zeros(batch_grads[0].rows(), batch_grads[0].cols());
    let mut sum_sq = sum.clone();
    for g in batch_grads {
        sum = sum.add(g);
        for (a, &b) in sum_sq.data_mut().iter_mut().zip(g.data()) {
            *a += b * b;
        }
    }
    finalize_grad_stat(&sum, &sum_sq, n)
}

fn finalize_grad_stat<F: Real>(sum: &Matrix<F>, sum_sq: &Matrix<F>, n: F) -> LayerGradStat {
    let mut mean_sq = F::zero();
    let mut var_sum = F::zero();
    for (&s, &s2) in sum.data().iter().zip(sum_sq.data()) {
        let m = s / n;
        mean_sq += m * m;
        var_sum += (s2 / n - m * m).max(F::zero());
    }
    let mean_norm = mean_sq.sqrt().to_f64().unwrap();
    let std_norm = var_sum.sqrt().to_f64().unwrap();
    let snr = if std_norm > 0.0 { Some(mean_norm / std_norm) } else { None };
    LayerGradStat { mean_norm, std_norm, snr }
}

/// One stored weight set.
#[derive(Debug, Clone)]
pub struct Snapshot<F> {
    pub iteration: usize,
    pub weights: Vec<Matrix<F>>,
    pub biases: Vec<Vec<F>>,
}

/// Per-epoch weight displacement from initialization, per layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsdPoint {
    pub epoch: usize,
    pub iteration: usize,
    pub per_layer: Vec<f64>,
}

impl MsdPoint {
    pub fn total(&self) -> f64 {
        self.per_layer.iter().map(|d| d * d).sum::<f64>().sqrt()
    }
}

/// Everything one training run produces.
#[derive(Debug, Clone)]
pub struct TrainRun<F> {
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    pub steps_per_epoch: usize,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub snapshots: Vec<Snapshot<F>>,
    pub grad_stats: Vec<EpochStats>,
    pub train_error: Vec<f64>,
    pub test_error: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub msd: Vec<MsdPoint>,
}

impl<F: Real> TrainRun<F> {
    pub fn snapshot_at(&self, iteration: usize) -> Option<&Snapshot<F>> {
        self.snapshots.iter().find(|s| s.iteration == iteration)
    }

    pub fn mlp_at(&self, snapshot: &Snapshot<F>) -> Mlp<F> {
        Mlp {
            weights: snapshot.weights.clone(),
            biases: snapshot.biases.clone(),
            activation: self.spec.activation,
        }
    }

    /// Iteration after which the train error stays at or below `threshold`.
    pub fn error_saturation_iteration(&self, threshold: f64) -> Option<usize> {
        let mut hit = None;
        for (e, &err) in self.train_error.iter().enumerate() {
            if err <= threshold {
                if hit.is_none() {
                    hit = Some(e);
                }
            } else {
                hit = None;
            }
        }
        hit.map(|e| (e + 1) * self.steps_per_epoch)
    }
}

/// Trains with mini-batch SGD (batches sampled with replacement), recording
/// snapshots, gradient statistics, error curves and weight displacement.
pub fn train<F: Real>(
    spec: &NetworkSpec,
    config: &TrainConfig,
    data: &Dataset<F>,
) -> Result<TrainRun<F>, NetError> {
    spec.validate()?;
    let d_in = *spec.layer_widths.first().unwrap();
    let d_out = *spec.layer_widths.last().unwrap();
    if data.inputs.cols() != d_in || data.n_classes != d_out {
        return Err(NetError::ShapeMismatch {
            inputs: data.inputs.cols(),
            classes: data.n_classes,
            want_in: d_in,
            want_out: d_out,
        });
    }
    let n = data.len();
    let n_train = (((n as f64) * config.train_fraction).round() as usize).clamp(1, n);
    if config.batch_size > n_train {
        return Err(NetError::BatchTooLarge { batch: config.batch_size, train: n_train });
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x3c6e_f372));
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = split_rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let train_idx = order[..n_train].to_vec();
    let test_idx = order[n_train..].to_vec();

    let steps_per_epoch = (n_train / config.batch_size).max(1);
    let total_steps = steps_per_epoch * config.epochs;
    let schedule = if config.snapshot_schedule.is_empty() {
        geometric_schedule(total_steps, 1.25)
    } else {
        let mut s = config.snapshot_schedule.clone();
        s.sort_unstable();
        s.dedup();
        s
    };
    let schedule_set: std::collections::BTreeSet<usize> = schedule.iter().copied().collect();

    let mut net = Mlp::init(spec);
    let w0: Vec<Matrix<F>> = net.weights.clone();
    let n_layers = net.n_layers();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0xa54f_f53a));

    let mut snapshots = Vec::new();
    if schedule_set.contains(&0) {
        snapshots.push(Snapshot {
            iteration: 0,
            weights: net.weights.clone(),
            biases: net.biases.clone(),
        });
    }

    let lr = lit::<F>(config.learning_rate);
    let batch_f = lit::<F>(config.batch_size as f64);
    let mut grad_stats = Vec::with_capacity(config.epochs);
    let mut train_error = Vec::with_capacity(config.epochs);
    let mut test_error = Vec::with_capacity(config.epochs);
    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut msd = Vec::with_capacity(config.epochs);

    let mut g_sum: Vec<Matrix<F>> =
        net.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
    let mut g_sum_sq = g_sum.clone();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        for acc in g_sum.iter_mut().chain(g_sum_sq.iter_mut()) {
            for v in acc.data_mut() {
                *v = F::zero();
            }
        }
        for _ in 0..steps_per_epoch {
            let batch: Vec<usize> =
                (0..config.batch_size).map(|_| train_idx[rng.gen_range(0..n_train)]).collect();
            // forward, keeping activations and pre-activations
            let mut acts: Vec<Matrix<F>> = Vec::with_capacity(n_layers + 1);
            acts.push(select_rows(&data.inputs, &batch));
            let mut zs: Vec<Matrix<F>> = Vec::with_capacity(n_layers);
            for l in 0..n_layers {
                let cur = &acts[l];
                let out_w = net.weights[l].rows();
                let mut z = Matrix::zeros(batch.len(), out_w);
                let mut a = Matrix::zeros(batch.len(), out_w);
                for s in 0..batch.len() {
                    for j in 0..out_w {
                        let mut zz = net.biases[l][j];
                        for (i, &ai) in cur.row(s).iter().enumerate() {
                            zz += net.weights[l][(j, i)] * ai;
                        }
                        z[(s, j)] = zz;
                        a[(s, j)] =
                            if l + 1 == n_layers { sigmoid(zz) } else { net.hidden_act(zz) };
                    }
                }
                zs.push(z);
                acts.push(a);
            }
            // output delta: sigmoid + cross-entropy against one-hot labels
            let out = &acts[n_layers];
            let mut delta = Matrix::zeros(batch.len(), out.cols());
            for (s, &bi) in batch.iter().enumerate() {
                for j in 0..out.cols() {
                    let t = if j == data.labels[bi] { F::one() } else { F::zero() };
                    delta[(s, j)] = out[(s, j)] - t;
                }
            }
            // backprop with batch-mean gradients
            for l in (0..n_layers).rev() {
                let prev = &acts[l];
                let rows = net.weights[l].rows();
                let cols = net.weights[l].cols();
                let mut gw = Matrix::zeros(rows, cols);
                let mut gb = vec![F::zero(); rows];
                for s in 0..batch.len() {
                    for j in 0..rows {
                        let d = delta[(s, j)];
                        if d == F::zero() {
                            continue;
                        }
                        gb[j] += d;
                        for (i, &ai) in prev.row(s).iter().enumerate() {
                            gw[(j, i)] += d * ai;
                        }
                    }
                }
                for v in gw.data_mut() {
                    *v /= batch_f;
                }
                for v in &mut gb {
                    *v /= batch_f;
                }
                if l > 0 {
                    let mut new_delta = Matrix::zeros(batch.len(), cols);
                    for s in 0..batch.len() {
                        for i in 0..cols {
                            let mut acc = F::zero();
                            for j in 0..rows {
                                acc += net.weights[l][(j, i)] * delta[(s, j)];
                            }
                            let z = zs[l - 1][(s, i)];
                            let a = acts[l][(s, i)];
                            new_delta[(s, i)] = acc * net.hidden_act_deriv(z, a);
                        }
                    }
                    delta = new_delta;
                }
                for ((accs, accs2), &g) in
                    g_sum[l].data_mut().iter_mut().zip(g_sum_sq[l].data_mut()).zip(gw.data())
                {
                    *accs += g;
                    *accs2 += g * g;
                }
                for (w, &g) in net.weights[l].data_mut().iter_mut().zip(gw.data()) {
                    *w -= lr * g;
                }
                for (b, &g) in net.biases[l].iter_mut().zip(&gb) {
                    *b -= lr * g;
                }
            }
            step += 1;
            if schedule_set.contains(&step) {
                snapshots.push(Snapshot {
                    iteration: step,
                    weights: net.weights.clone(),
                    biases: net.biases.clone(),
                });
            }
        }
        // end of epoch: stats, errors, displacement
        let nb = lit::<F>(steps_per_epoch as f64);
        let layers: Vec<LayerGradStat> =
            (0..n_layers).map(|l| finalize_grad_stat(&g_sum[l], &g_sum_sq[l], nb)).collect();
        grad_stats.push(EpochStats { epoch, iteration: step, layers });
        let (tr_loss, tr_err) = net.evaluate(data, &train_idx);
        let (_, te_err) =
            if test_idx.is_empty() { (F::zero(), F::zero()) } else { net.evaluate(data, &test_idx) };
        let tr_loss = tr_loss.to_f64().unwrap();
        if !tr_loss.is_finite() {
            return Err(NetError::Diverged { iteration: step });
        }
        train_loss.push(tr_loss);
        train_error.push(tr_err.to_f64().unwrap());
        test_error.push(te_err.to_f64().unwrap());
        msd.push(MsdPoint {
            epoch,
            iteration: step,
            per_layer: (0..n_layers)
                .map(|l| net.weights[l].sub(&w0[l]).frobenius_norm().to_f64().unwrap())
                .collect(),
        });
    }

    Ok(TrainRun {
        spec: spec.clone(),
        config: config.clone(),
        steps_per_epoch,
        train_idx,
        test_idx,
        snapshots,
        grad_stats,
        train_error,
        test_error,
        train_loss,
        msd,
    })
}

/// Per-epoch (iteration, SNR) series for one layer; `smooth_window` applies
/// a running median of that width. SNR is None where the std vanished.
pub fn gradient_snr_series<F: Real>(
    run: &TrainRun<F>,
    layer: usize,
    smooth_window: Option<usize>,
) -> Result<Vec<(usize, Option<f64>)>, NetError> {
    if layer >= run.spec.n_layers() {
        return Err(NetError::LayerOutOfRange(layer));
    }
    let raw: Vec<(usize, Option<f64>)> =
        run.grad_stats.iter().map(|e| (e.iteration, e.layers[layer].snr)).collect();
    match smooth_window {
        None => Ok(raw),
        Some(w) => Ok(median_smooth(&raw, w.max(1))),
    }
}

pub fn median_smooth(series: &[(usize, Option<f64>)], window: usize) -> Vec<(usize, Option<f64>)> {
    let half = window / 2;
    series
        .iter()
        .enumerate()
        .map(|(i, &(it, _))| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(series.len());
            let mut vals: Vec<f64> = series[lo..hi].iter().filter_map(|&(_, v)| v).collect();
            if vals.is_empty() {
                return (it, None);
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (it, Some(vals[vals.len() / 2]))
        })
        .collect()
}

/// Power-law fit of an MSD series.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionFit {
    /// Exponent α in msd ≈ γ·t^α.
    pub alpha: f64,
    pub gamma: f64,
    pub r2: f64,
    /// Raised when the power law explains the window poorly (r² below
    /// [`ULTRA_SLOW_R2`]), the signature of logarithmic growth.
    pub ultra_slow_candidate: bool,
}

pub const ULTRA_SLOW_R2: f64 = 0.995;

/// Least-squares fit of log msd against log t over `window` (inclusive
/// iteration bounds). Requires ≥ 10 strictly positive points.
pub fn fit_diffusion_exponent(
    series: &[(usize, f64)],
    window: (usize, usize),
) -> Result<DiffusionFit, NetError> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|&&(t, _)| t >= window.0 && t <= window.1 && t > 0)
        .map(|&(t, v)| (t as f64, v))
        .collect();
    if pts.len() < 10 {
        return Err(NetError::TooFewPoints { need: 10, got: pts.len() });
    }
    if let Some(i) = pts.iter().position(|&(_, v)| v <= 0.0) {
        return Err(NetError::NonPositive(i));
    }
    let xs: Vec<f64> = pts.iter().map(|&(t, _)| t.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|&(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(DiffusionFit {
        alpha: slope,
        gamma: intercept.exp(),
        r2,
        ultra_slow_candidate: r2 < ULTRA_SLOW_R2,
    })
}

// --- persistence -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RunManifest {
    spec: NetworkSpec,
    config: TrainConfig,
    steps_per_epoch: usize,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    snapshot_iterations: Vec<usize>,
}

impl<F: Real> TrainRun<F> {
    /// Persists the run: JSON manifest, one little-endian f64 binary file
    /// per snapshot, and CSV series.
    pub fn save(&self, dir: &Path) -> Result<(), NetError> {
        std::fs::create_dir_all(dir.join("snapshots"))?;
        let manifest = RunManifest {
            spec: self.spec.clone(),
            config: self.config.clone(),
            steps_per_epoch: self.steps_per_epoch,
            train_idx: self.train_idx.clone(),
            test_idx: self.test_idx.clone(),
            snapshot_iterations: self.snapshots.iter().map(|s| s.iteration).collect(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        for snap in &self.snapshots {
            let mut bytes = Vec::new();
            for (w, b) in snap.weights.iter().zip(&snap.biases) {
                for v in w.data() {
                    bytes.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
                }
                for v in b {
                    bytes.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
                }
            }
            std::fs::write(
                dir.join("snapshots").join(format!("step_{:010}.bin", snap.iteration)),
                bytes,
            )?;
        }
        let mut gs = String::from("epoch,iteration,layer,mean_norm,std_norm,snr\n");
        for e in &self.grad_stats {
            for (l, st) in e.layers.iter().enumerate() {
                gs.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    e.epoch,
                    e.iteration,
                    l,
                    st.mean_norm,
                    st.std_norm,
                    st.snr.map_or(String::from("nan"), |v| v.to_string())
                ));
            }
        }
        std::fs::write(dir.join("grad_stats.csv"), gs)?;
        let mut err = String::from("epoch,iteration,train_error,test_error,train_loss\n");
        for e in 0..self.train_error.len() {
            err.push_str(&format!(
                "{},{},{},{},{}\n",
                e,
                (e + 1) * self.steps_per_epoch,
                self.train_error[e],
                self.test_error[e],
                self.train_loss[e]
            ));
        }
        std::fs::write(dir.join("errors.csv"), err)?;
        let mut ms = String::from("epoch,iteration,layer,msd\n");
        for p in &self.msd {
            for (l, v) in p.per_layer.iter().enumerate() {
                ms.push_str(&format!("{},{},{},{}\n", p.epoch, p.iteration, l, v));
            }
        }
        std::fs::write(dir.join("msd.csv"), ms)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, NetError> {
        let manifest: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let widths = &manifest.spec.layer_widths;
        let mut snapshots = Vec::new();
        for &iter in &manifest.snapshot_iterations {
            let bytes = std::fs::read(dir.join("snapshots").join(format!("step_{iter:010}.bin")))?;
            let mut vals =
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for l in 0..widths.len() - 1 {
                let (rows, cols) = (widths[l + 1], widths[l]);
                let mut w = Matrix::zeros(rows, cols);
                for v in w.data_mut() {
                    *v = lit(
                        vals.next()
                            .ok_or_else(|| NetError::Parse(format!("snapshot {iter} truncated")))?,
                    );
                }
                let mut b = vec![F::zero(); rows];
                for v in &mut b {
                    *v = lit(
                        vals.next()
                            .ok_or_else(|| NetError::Parse(format!("snapshot {iter} truncated")))?,
                    );
                }
                weights.push(w);
                biases.push(b);
            }
            snapshots.push(Snapshot { iteration: iter, weights, biases });
        }
        let gs_text = std::fs::read_to_string(dir.join("grad_stats.csv"))?;
        let n_layers = widths.len() - 1;
        let mut grad_stats: Vec<EpochStats> = Vec::new();
        for line in gs_text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let c: Vec<&str> = line.split(',').collect();
            let epoch: usize = c[0].parse().map_err(|e| NetError::Parse(format!("{e}")))?;
            let iteration: usize = c[1].parse().map_err(|e| NetError::Parse(format!("{e}")))?;
            if grad_stats.len() <= epoch {
                grad_stats.push(EpochStats {
                    epoch,
                    iteration,
                    layers: Vec::with_capacity(n_layers),
                });
            }
            let snr = match c[5] {
                "nan" => None,
                v => Some(v.parse().map_err(|e| NetError::Parse(format!("{e}")))?),
            };
            grad_stats[epoch].layers.push(LayerGradStat {
                mean_norm: c[3].parse().map_err(|e| NetError::Parse(format!("{e}")))?,
                std_norm: c[4].parse().map_err(|e| NetError::Parse(format!("{e}")))?,
                snr,
            });
        }
        let err_text = std::fs::read_to_string(dir.join("errors.csv"))?;
        let mut train_error = Vec::new();
        let mut test_error = Vec::new();
        let mut train_loss = Vec::new();
        for line in err_text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let c: Vec<&str> = line.split(',').collect();
            train_error.push(c[2].parse().map_err(|e| NetError::Parse(format!("{e}")))?);
            test_error.push(c[3].parse().map_err(|e| NetError::Parse(format!("{e}")))?);
            train_loss.push(c[4].parse().map_err(|e| NetError::Parse(format!("{e}")))?);
        }
        let msd_text = std::fs::read_to_string(dir.join("msd.csv"))?;
        let mut msd: Vec<MsdPoint> = Vec::new();
        for line in msd_text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let c: Vec<&str> = line.split(',').collect();
            let epoch: usize = c[0].parse().map_err(|e| NetError::Parse(format!("{e}")))?;
            let iteration: usize = c[1].parse().map_err(|e| NetError::Parse(format!("{e}")))?;
            if msd.len() <= epoch {
                msd.push(MsdPoint { epoch, iteration, per_layer: Vec::new() });
            }
            msd[epoch].per_layer.push(c[3].parse().map_err(|e| NetError::Parse(format!("{e}")))?);
        }
        Ok(TrainRun {
            spec: manifest.spec,
            config: manifest.config,
            steps_per_epoch: manifest.steps_per_epoch,
            train_idx: manifest.train_idx,
            test_idx: manifest.test_idx,
            snapshots,
            grad_stats,
            train_error,
            test_error,
            train_loss,
            msd,
        })
    }
}
