//! Binned mutual-information estimation over training snapshots:
//! information-plane trajectories, DPI audits, SGD phase detection, and the
//! SNR-vs-compression correlation analysis.
//!
//! The estimator is exact for the discretized variables: activations are
//! binned, patterns grouped by their discrete layer state, and the MI of
//! the resulting finite joint computed in closed form. No sampling noise is
//! involved, so reruns are bit-identical.

use crate::datagen::{PatternSet, RuleDistribution};
use crate::linalg::Matrix;
use crate::net::{Mlp, TrainRun};
use crate::prob::{ConditionalDistribution, DiscreteDistribution};
use crate::scalar::{lit, Real};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InfoplaneError {
    #[error("dataset too large to enumerate ({0} patterns, limit {1})")]
    NotEnumerable(usize, usize),
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("layer {0} out of range")]
    LayerOutOfRange(usize),
    #[error("binning invalid: {0}")]
    BadBinning(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Activation discretization: `n_bins` equal intervals on `(lo, hi)`.
#[derive(Debug, Clone, Copy)]
pub struct BinningConfig {
    pub n_bins: usize,
    pub lo: f64,
    pub hi: f64,
    /// For unbounded activations: per layer, use `[0, max over the whole
    /// run]` (max frozen across epochs) instead of the fixed range.
    pub per_layer_adaptive: bool,
    /// Feed each layer the bin centers of its predecessor during the
    /// analysis pass, making the discretized layers a true Markov chain
    /// X → T₁ → … → T_K (the finite-precision reading); both DPI chains
    /// then hold exactly. Training is unaffected either way.
    pub propagate_quantized: bool,
}

impl Default for BinningConfig {
    fn default() -> Self {
        // 30 equal intervals on (-1, 1), the tanh convention
        Self { n_bins: 30, lo: -1.0, hi: 1.0, per_layer_adaptive: false, propagate_quantized: true }
    }
}

impl BinningConfig {
    fn validate(&self) -> Result<(), InfoplaneError> {
        if self.n_bins < 2 {
            return Err(InfoplaneError::BadBinning("n_bins must be >= 2".into()));
        }
        if !(self.lo < self.hi) {
            return Err(InfoplaneError::BadBinning("lo must be < hi".into()));
        }
        Ok(())
    }
}

/// A fully enumerable task: every input pattern with its exact p(x) and
/// p(y|x) rows. All layer-MI estimates are taken against this full rule
/// distribution, so i_ty reflects generalization rather than fit.
#[derive(Debug, Clone)]
pub struct EnumerableTask<F> {
    pub inputs: Matrix<F>,
    pub p_x: Vec<F>,
    /// n × |Y| conditional rows.
    pub p_y_given_x: Matrix<F>,
}

pub const ENUMERATION_LIMIT: usize = 100_000;

impl<F: Real> EnumerableTask<F> {
    pub fn from_rule(patterns: &PatternSet, rule: &RuleDistribution<F>) -> Self {
        let n = patterns.patterns.len();
        let p_x = vec![F::one() / lit::<F>(n as f64); n];
        let p_y_given_x = Matrix::from_fn(n, 2, |x, y| {
            if y == 1 {
                rule.p_y1_given_x[x]
            } else {
                F::one() - rule.p_y1_given_x[x]
            }
        });
        Self { inputs: patterns.input_matrix(), p_x, p_y_given_x }
    }

    pub fn new(inputs: Matrix<F>, p_x: Vec<F>, p_y_given_x: Matrix<F>) -> Self {
        assert_eq!(inputs.rows(), p_x.len());
        assert_eq!(inputs.rows(), p_y_given_x.rows());
        Self { inputs, p_x, p_y_given_x }
    }

    pub fn n_patterns(&self) -> usize {
        self.inputs.rows()
    }

    pub fn n_y(&self) -> usize {
        self.p_y_given_x.cols()
    }

    /// H(Y) in bits of the task marginal.
    pub fn h_y(&self) -> F {
        let mut p_y = vec![F::zero(); self.n_y()];
        for x in 0..self.n_patterns() {
            for (y, p) in p_y.iter_mut().enumerate() {
                *p += self.p_x[x] * self.p_y_given_x[(x, y)];
            }
        }
        let mut h = F::zero();
        for &p in &p_y {
            if p > F::zero() {
                h -= p * p.log2();
            }
        }
        h
    }

    /// I(X;Y) in bits of the task itself.
    pub fn i_xy(&self) -> F {
        let mut p_y = vec![F::zero(); self.n_y()];
        for x in 0..self.n_patterns() {
            for (y, p) in p_y.iter_mut().enumerate() {
                *p += self.p_x[x] * self.p_y_given_x[(x, y)];
            }
        }
        let mut i = F::zero();
        for x in 0..self.n_patterns() {
            for y in 0..self.n_y() {
                let p = self.p_x[x] * self.p_y_given_x[(x, y)];
                if p > F::zero() {
                    i += p * (p / (self.p_x[x] * p_y[y])).log2();
                }
            }
        }
        i.max(F::zero())
    }
}

/// One estimated information-plane point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LayerMi {
    pub layer: usize,
    pub iteration: usize,
    pub i_xt: f64,
    pub i_ty: f64,
}

/// Per-layer series of information-plane points over the snapshots.
#[derive(Debug, Clone)]
pub struct InfoPlaneTrajectory {
    /// `layers[k][s]` is layer k at snapshot s; iterations align across
    /// layers.
    pub layers: Vec<Vec<LayerMi>>,
    /// Activations that fell outside the binning range (clipped).
    pub clipped: usize,
}

impl InfoPlaneTrajectory {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// CSV export: `iteration,layer,i_xt_bits,i_ty_bits`.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        let mut out = String::from("iteration,layer,i_xt_bits,i_ty_bits\n");
        for series in &self.layers {
            for p in series {
                out.push_str(&format!("{},{},{},{}\n", p.iteration, p.layer, p.i_xt, p.i_ty));
            }
        }
        std::fs::write(path, out)
    }
}

/// Mutual information of a dense joint table with the crate's canonical
/// summation order (see `prob::mutual_information`); the sparse estimator
/// below reproduces this ordering exactly, which is what makes the binned
/// estimates bit-identical to a naive dense enumeration.
fn canonical_mi<F: Real>(table: &Matrix<F>) -> F {
    let rows = table.rows();
    let cols = table.cols();
    let mut px = vec![F::zero(); rows];
    for (i, p) in px.iter_mut().enumerate() {
        for j in 0..cols {
            *p += table[(i, j)];
        }
    }
    let mut py = vec![F::zero(); cols];
    for i in 0..rows {
        for (j, p) in py.iter_mut().enumerate() {
            *p += table[(i, j)];
        }
    }
    let mut mi = F::zero();
    for i in 0..rows {
        for j in 0..cols {
            let p = table[(i, j)];
            if p > F::zero() {
                mi += p * (p / (px[i] * py[j])).log2();
            }
        }
    }
    mi
}

fn bin_index<F: Real>(a: F, lo: F, hi: F, n_bins: usize, clipped: &mut usize) -> u16 {
    let nb = lit::<F>(n_bins as f64);
    let scaled = (a - lo) / (hi - lo) * nb;
    let mut idx = scaled.to_f64().unwrap().floor() as i64;
    if idx < 0 {
        idx = 0;
        *clipped += 1;
    } else if idx >= n_bins as i64 {
        if a > hi {
            *clipped += 1;
        }
        idx = n_bins as i64 - 1;
    }
    idx as u16
}

/// Groups patterns by discretized layer state; keys ascend lexicographically
/// so downstream sums run in a canonical order.
fn group_states<F: Real>(
    acts: &Matrix<F>,
    lo: F,
    hi: F,
    n_bins: usize,
    clipped: &mut usize,
) -> BTreeMap<Vec<u16>, Vec<usize>> {
    let mut groups: BTreeMap<Vec<u16>, Vec<usize>> = BTreeMap::new();
    for x in 0..acts.rows() {
        let key: Vec<u16> =
            acts.row(x).iter().map(|&a| bin_index(a, lo, hi, n_bins, clipped)).collect();
        groups.entry(key).or_default().push(x);
    }
    groups
}

/// Forward pass producing per-layer state groups under the configured
/// discretization; with quantized propagation, each layer consumes the bin
/// centers of its predecessor.
fn layer_state_groups<F: Real>(
    mlp: &crate::net::Mlp<F>,
    inputs: &Matrix<F>,
    ranges: &[(F, F)],
    binning: &BinningConfig,
    clipped: &mut usize,
) -> Vec<BTreeMap<Vec<u16>, Vec<usize>>> {
    let n_bins = binning.n_bins;
    let nb = lit::<F>(n_bins as f64);
    let mut out = Vec::with_capacity(mlp.n_layers());
    let mut current = inputs.clone();
    for l in 0..mlp.n_layers() {
        let mut acts = mlp.forward_layer(l, &current);
        let (lo, hi) = ranges[l];
        let width = (hi - lo) / nb;
        let mut groups: BTreeMap<Vec<u16>, Vec<usize>> = BTreeMap::new();
        for x in 0..acts.rows() {
            let key: Vec<u16> =
                acts.row(x).iter().map(|&a| bin_index(a, lo, hi, n_bins, clipped)).collect();
            if binning.propagate_quantized {
                for (a, &idx) in acts.row_mut(x).iter_mut().zip(&key) {
                    *a = lo + (lit::<F>(idx as f64) + lit::<F>(0.5)) * width;
                }
            }
            groups.entry(key).or_default().push(x);
        }
        out.push(groups);
        current = acts;
    }
    out
}

/// (i_xt, i_ty) of one layer's grouped states, bit-identical to building the
/// dense P(T,X) / P(T,Y) tables and running `canonical_mi` on them.
fn grouped_mi<F: Real>(
    groups: &BTreeMap<Vec<u16>, Vec<usize>>,
    task: &EnumerableTask<F>,
) -> (F, F) {
    // P(T,X) is row-sparse: column x holds a single nonzero p_x[x], so the
    // column marginal is exactly p_x[x] and the row marginal accumulates
    // group members in ascending-x order, as the dense row-major sum would.
    let mut i_xt = F::zero();
    for members in groups.values() {
        let mut pt = F::zero();
        for &x in members {
            pt += task.p_x[x];
        }
        for &x in members {
            let p = task.p_x[x];
            if p > F::zero() {
                i_xt += p * (p / (pt * task.p_x[x])).log2();
            }
        }
    }
    // P(T,Y) is small and dense: accumulate rows in key order, columns over
    // ascending x within each group.
    let n_y = task.n_y();
    let mut table = Matrix::zeros(groups.len(), n_y);
    for (t, members) in groups.values().enumerate() {
        for &x in members {
            for y in 0..n_y {
                table[(t, y)] += task.p_x[x] * task.p_y_given_x[(x, y)];
            }
        }
    }
    (i_xt, canonical_mi(&table))
}

/// Per-layer binning ranges; adaptive mode freezes `[0, max]` per layer
/// across the whole run.
fn layer_ranges<F: Real>(
    run: &TrainRun<F>,
    task: &EnumerableTask<F>,
    binning: &BinningConfig,
) -> Vec<(F, F)> {
    let n_layers = run.spec.n_layers();
    if !binning.per_layer_adaptive {
        return vec![(lit(binning.lo), lit(binning.hi)); n_layers];
    }
    // ranges are frozen per layer from the continuous activations over the
    // whole run; the quantized analysis pass then uses them unchanged
    let mut maxes = vec![F::zero(); n_layers];
    for snap in &run.snapshots {
        let mlp = run.mlp_at(snap);
        for (l, acts) in mlp.layer_activations(&task.inputs).iter().enumerate() {
            let m = acts.data().iter().fold(F::zero(), |m, &a| m.max(a));
            maxes[l] = maxes[l].max(m);
        }
    }
    maxes.into_iter().map(|m| (F::zero(), m.max(lit(1e-9)))).collect()
}

/// Estimates the information-plane trajectory of every layer at every
/// snapshot: forward all patterns, discretize, form the exact discrete
/// joints, and compute their MI.
pub fn estimate_layer_mi<F: Real>(
    run: &TrainRun<F>,
    task: &EnumerableTask<F>,
    binning: &BinningConfig,
) -> Result<InfoPlaneTrajectory, InfoplaneError> {
    binning.validate()?;
    if task.n_patterns() > ENUMERATION_LIMIT {
        return Err(InfoplaneError::NotEnumerable(task.n_patterns(), ENUMERATION_LIMIT));
    }
    let n_layers = run.spec.n_layers();
    let ranges = layer_ranges(run, task, binning);
    let mut layers: Vec<Vec<LayerMi>> = vec![Vec::with_capacity(run.snapshots.len()); n_layers];
    let mut clipped = 0usize;
    for snap in &run.snapshots {
        let mlp = run.mlp_at(snap);
        let groups_per_layer =
            layer_state_groups(&mlp, &task.inputs, &ranges, binning, &mut clipped);
        for (l, groups) in groups_per_layer.iter().enumerate() {
            let (i_xt, i_ty) = grouped_mi(groups, task);
            layers[l].push(LayerMi {
                layer: l,
                iteration: snap.iteration,
                i_xt: i_xt.to_f64().unwrap(),
                i_ty: i_ty.to_f64().unwrap(),
            });
        }
    }
    Ok(InfoPlaneTrajectory { layers, clipped })
}

/// Extracts a layer's encoder p(t|x) (deterministic rows over the occupied
/// states), decoder p(y|t), and marginal p(t) at one snapshot, for the
/// IB-optimality fit.
pub fn layer_encoder_decoder<F: Real>(
    mlp: &Mlp<F>,
    task: &EnumerableTask<F>,
    layer: usize,
    binning: &BinningConfig,
) -> Result<(ConditionalDistribution<F>, ConditionalDistribution<F>, DiscreteDistribution<F>), InfoplaneError>
{
    binning.validate()?;
    if layer >= mlp.n_layers() {
        return Err(InfoplaneError::LayerOutOfRange(layer));
    }
    let ranges = vec![(lit(binning.lo), lit(binning.hi)); mlp.n_layers()];
    let mut clipped = 0;
    let groups =
        &layer_state_groups(mlp, &task.inputs, &ranges, binning, &mut clipped)[layer];
    let n_x = task.n_patterns();
    let n_t = groups.len();
    let mut encoder = Matrix::zeros(n_x, n_t);
    let mut p_t = vec![F::zero(); n_t];
    let mut decoder = Matrix::zeros(n_t, task.n_y());
    for (t, members) in groups.values().enumerate() {
        for &x in members {
            encoder[(x, t)] = F::one();
            p_t[t] += task.p_x[x];
            for y in 0..task.n_y() {
                decoder[(t, y)] += task.p_x[x] * task.p_y_given_x[(x, y)];
            }
        }
        for y in 0..task.n_y() {
            decoder[(t, y)] = decoder[(t, y)] / p_t[t];
        }
    }
    Ok((
        ConditionalDistribution::new(encoder).expect("deterministic rows"),
        ConditionalDistribution::new(decoder).expect("decoder rows normalized"),
        DiscreteDistribution::new(p_t).expect("p_t normalized"),
    ))
}

/// DPI audit over a trajectory: both chains, every snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct DpiReport {
    /// Largest I(X;T_{k+1}) - I(X;T_k) over all snapshots and layer pairs.
    pub max_violation_x: f64,
    /// Largest I(T_{k+1};Y) - I(T_k;Y) likewise.
    pub max_violation_y: f64,
    /// (snapshot iteration, deeper layer) where the worst X-chain gap sits.
    pub worst_x_at: (usize, usize),
    pub worst_y_at: (usize, usize),
}

pub fn dpi_check(traj: &InfoPlaneTrajectory) -> Result<DpiReport, InfoplaneError> {
    if traj.n_layers() < 2 {
        return Err(InfoplaneError::TooFew { what: "layers", need: 2, got: traj.n_layers() });
    }
    let n_snaps = traj.layers[0].len();
    let mut report = DpiReport {
        max_violation_x: f64::NEG_INFINITY,
        max_violation_y: f64::NEG_INFINITY,
        worst_x_at: (0, 0),
        worst_y_at: (0, 0),
    };
    for s in 0..n_snaps {
        for k in 0..traj.n_layers() - 1 {
            let a = traj.layers[k][s];
            let b = traj.layers[k + 1][s];
            let vx = b.i_xt - a.i_xt;
            if vx > report.max_violation_x {
                report.max_violation_x = vx;
                report.worst_x_at = (a.iteration, k + 1);
            }
            let vy = b.i_ty - a.i_ty;
            if vy > report.max_violation_y {
                report.max_violation_y = vy;
                report.worst_y_at = (a.iteration, k + 1);
            }
        }
    }
    Ok(report)
}

/// Detects the drift→diffusion transition: the most negative discrete
/// derivative of log SNR after median smoothing (window 5). Returns None
/// when the series never decays by at least half a decade.
pub fn detect_snr_transition(
    series: &[(usize, Option<f64>)],
) -> Result<Option<usize>, InfoplaneError> {
    if series.len() < 20 {
        return Err(InfoplaneError::TooFew { what: "snr points", need: 20, got: series.len() });
    }
    let smoothed = crate::net::median_smooth(series, 5);
    let pts: Vec<(usize, f64)> = smoothed
        .iter()
        .filter_map(|&(it, v)| v.and_then(|v| (v > 0.0).then(|| (it, v.ln()))))
        .collect();
    if pts.len() < 20 {
        return Err(InfoplaneError::TooFew { what: "finite snr points", need: 20, got: pts.len() });
    }
    let max = pts.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let min = pts.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    if max - min < 0.5 * std::f64::consts::LN_10 {
        return Ok(None);
    }
    // derivative of log SNR against log iteration on a geometric index
    // grid: the transition is the steepest descent in log-log coordinates
    let mut grid: Vec<usize> = Vec::new();
    let mut g = 0usize;
    while g < pts.len() {
        grid.push(g);
        g = ((g as f64 * 1.15).ceil() as usize).max(g + 1);
    }
    if *grid.last().unwrap() != pts.len() - 1 {
        grid.push(pts.len() - 1);
    }
    let mut best_seg = (0usize, 0usize, f64::INFINITY);
    for w in grid.windows(2) {
        let (i0, i1) = (w[0], w[1]);
        let (t0, v0) = pts[i0];
        let (t1, v1) = pts[i1];
        if t1 == 0 || t0 == 0 || t1 <= t0 {
            continue;
        }
        let d = (v1 - v0) / ((t1 as f64).ln() - (t0 as f64).ln());
        if d < best_seg.2 {
            best_seg = (i0, i1, d);
        }
    }
    if best_seg.2 >= 0.0 {
        return Ok(None);
    }
    // refine to the steepest single step inside the winning segment
    let mut best = (pts[best_seg.1].0, f64::INFINITY);
    for j in best_seg.0..best_seg.1 {
        let (t0, v0) = pts[j];
        let (t1, v1) = pts[j + 1];
        if t0 == 0 || t1 <= t0 {
            continue;
        }
        let d = (v1 - v0) / ((t1 as f64).ln() - (t0 as f64).ln());
        if d < best.1 {
            best = (t1, d);
        }
    }
    Ok(Some(best.0))
}

/// Tunables for [`detect_compression_onset`].
#[derive(Debug, Clone, Copy)]
pub struct OnsetConfig {
    /// Snapshots that must each be non-increasing right after the peak.
    pub min_consecutive: usize,
    /// Required drop (bits) from the peak to the post-peak minimum.
    pub min_drop_bits: f64,
    /// Estimator jitter allowed on the consecutive-decrease test.
    pub jitter_bits: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        Self { min_consecutive: 3, min_drop_bits: 0.05, jitter_bits: 0.02 }
    }
}

/// Iteration at which i_xt peaks before a sustained decrease; None when the
/// layer never compresses.
pub fn detect_compression_onset(
    traj: &InfoPlaneTrajectory,
    layer: usize,
    cfg: &OnsetConfig,
) -> Result<Option<usize>, InfoplaneError> {
    let series = traj
        .layers
        .get(layer)
        .ok_or(InfoplaneError::LayerOutOfRange(layer))?;
    if series.len() < 20 {
        return Err(InfoplaneError::TooFew { what: "snapshots", need: 20, got: series.len() });
    }
    let peak = series
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.i_xt.partial_cmp(&b.1.i_xt).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    if peak + cfg.min_consecutive >= series.len() {
        return Ok(None);
    }
    for k in 0..cfg.min_consecutive {
        if series[peak + k + 1].i_xt > series[peak + k].i_xt + cfg.jitter_bits {
            return Ok(None);
        }
    }
    let min_after =
        series[peak..].iter().map(|p| p.i_xt).fold(f64::INFINITY, f64::min);
    if series[peak].i_xt - min_after < cfg.min_drop_bits {
        return Ok(None);
    }
    Ok(Some(series[peak].iteration))
}

/// Pearson correlation and least-squares slope between SNR-transition and
/// compression-onset iterations across runs.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionCorrelation {
    pub pearson_r: f64,
    pub slope: f64,
    pub pairs: Vec<(f64, f64)>,
}

pub fn correlate_transitions(
    pairs: &[(f64, f64)],
) -> Result<TransitionCorrelation, InfoplaneError> {
    if pairs.len() < 4 {
        return Err(InfoplaneError::TooFew { what: "runs", need: 4, got: pairs.len() });
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let pearson_r = sxy / (sxx * syy).sqrt();
    let slope = sxy / sxx;
    Ok(TransitionCorrelation { pearson_r, slope, pairs: pairs.to_vec() })
}

/// JSON phase report combining the detectors.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseReport {
    /// Per layer: SNR transition iteration, if detected.
    pub snr_transition: Vec<Option<usize>>,
    /// Per layer: compression onset iteration, if detected.
    pub compression_onset: Vec<Option<usize>>,
    pub dpi: DpiReport,
    pub clipped_activations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{train, Activation, Dataset, NetworkSpec, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_task(n: usize, d: usize, seed: u64) -> (EnumerableTask<f64>, Dataset<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = Matrix::from_fn(n, d, |_, _| if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
        let p_y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let p_y_given_x = Matrix::from_fn(n, 2, |x, y| if y == 1 { p_y[x] } else { 1.0 - p_y[x] });
        let p_x = vec![1.0 / n as f64; n];
        let labels = (0..n).map(|x| usize::from(rng.gen_range(0.0..1.0) < p_y[x])).collect();
        (
            EnumerableTask::new(inputs.clone(), p_x, p_y_given_x),
            Dataset { inputs, labels, n_classes: 2 },
        )
    }

    /// Naive dense enumeration, written independently of the estimator:
    /// forward each layer on the quantized previous layer, collect every
    /// pattern's state, build full dense P(T,X) and P(T,Y) tables, and run
    /// the row-major MI sum on them.
    fn naive_all_layer_mi(
        mlp: &Mlp<f64>,
        task: &EnumerableTask<f64>,
        binning: &BinningConfig,
    ) -> Vec<(f64, f64)> {
        let n = task.inputs.rows();
        let width = (binning.hi - binning.lo) / binning.n_bins as f64;
        let mut out = Vec::new();
        let mut current = task.inputs.clone();
        for l in 0..mlp.n_layers() {
            let d_out = mlp.weights[l].rows();
            let mut acts = Matrix::<f64>::zeros(n, d_out);
            let mut keys: Vec<Vec<u16>> = Vec::with_capacity(n);
            for x in 0..n {
                let mut key = Vec::with_capacity(d_out);
                for j in 0..d_out {
                    let mut z = mlp.biases[l][j];
                    for (i, &a) in current.row(x).iter().enumerate() {
                        z += mlp.weights[l][(j, i)] * a;
                    }
                    let a = if l + 1 == mlp.n_layers() {
                        1.0 / (1.0 + (-z).exp())
                    } else {
                        z.tanh()
                    };
                    let idx = (((a - binning.lo) / (binning.hi - binning.lo))
                        * binning.n_bins as f64)
                        .floor() as i64;
                    let idx = idx.clamp(0, binning.n_bins as i64 - 1) as u16;
                    key.push(idx);
                    acts[(x, j)] = binning.lo + (idx as f64 + 0.5) * width;
                }
                keys.push(key);
            }
            let mut uniq: Vec<Vec<u16>> = keys.clone();
            uniq.sort();
            uniq.dedup();
            let t_of = |x: usize| uniq.binary_search(&keys[x]).unwrap();
            let mut t_x = Matrix::<f64>::zeros(uniq.len(), n);
            for x in 0..n {
                t_x[(t_of(x), x)] = task.p_x[x];
            }
            let mut t_y = Matrix::<f64>::zeros(uniq.len(), task.n_y());
            for x in 0..n {
                for y in 0..task.n_y() {
                    t_y[(t_of(x), y)] += task.p_x[x] * task.p_y_given_x[(x, y)];
                }
            }
            out.push((super::canonical_mi(&t_x), super::canonical_mi(&t_y)));
            current = acts;
        }
        out
    }

    #[test]
    fn estimator_matches_naive_enumeration_bit_for_bit() {
        for seed in 0..8u64 {
            let (task, data) = tiny_task(24, 3, seed);
            let spec = NetworkSpec {
                layer_widths: vec![3, 5, 4, 2],
                activation: Activation::Tanh,
                init_weight_std: 1.0,
                init_bias_std: 0.1,
                seed,
            };
            let cfg = TrainConfig {
                learning_rate: 0.3,
                batch_size: 4,
                epochs: 10,
                train_fraction: 1.0,
                snapshot_schedule: vec![0, 5, 20],
            };
            let run = train(&spec, &cfg, &data).unwrap();
            let binning = BinningConfig::default();
            let traj = estimate_layer_mi(&run, &task, &binning).unwrap();
            for snap_idx in 0..run.snapshots.len() {
                let mlp = run.mlp_at(&run.snapshots[snap_idx]);
                let naive = naive_all_layer_mi(&mlp, &task, &binning);
                for l in 0..spec.n_layers() {
                    let (ix, iy) = naive[l];
                    let got = traj.layers[l][snap_idx];
                    assert_eq!(got.i_xt.to_bits(), ix.to_bits(), "i_xt seed {seed} layer {l}");
                    assert_eq!(got.i_ty.to_bits(), iy.to_bits(), "i_ty seed {seed} layer {l}");
                }
            }
        }
    }

    #[test]
    fn all_in_one_bin_gives_zero_information() {
        let (task, _) = tiny_task(16, 3, 3);
        // constant activations: everything lands in the same state
        let acts = Matrix::from_fn(16, 4, |_, _| 0.999_f64);
        let mut clipped = 0;
        let groups = super::group_states(&acts, -1.0, 1.0, 30, &mut clipped);
        assert_eq!(groups.len(), 1);
        let (ixt, ity) = super::grouped_mi(&groups, &task);
        assert_eq!(ixt, 0.0);
        assert!(ity.abs() < 1e-15);
    }

    #[test]
    fn identity_layer_preserves_input_entropy() {
        // all 32 distinct 5-bit patterns: one state each, i_xt = H(X) = 5
        let inputs = Matrix::from_fn(32, 5, |x, i| if x & (1 << i) != 0 { 1.0 } else { -1.0 });
        let p_x = vec![1.0 / 32.0; 32];
        let p_y_given_x = Matrix::from_fn(32, 2, |x, y| {
            let p = 0.1 + 0.8 * (x as f64 / 31.0);
            if y == 1 { p } else { 1.0 - p }
        });
        let task = EnumerableTask::new(inputs, p_x, p_y_given_x);
        let mut clipped = 0;
        let groups = super::group_states(&task.inputs.clone(), -1.0, 1.0, 30, &mut clipped);
        assert_eq!(groups.len(), 32);
        let (ixt, _) = super::grouped_mi(&groups, &task);
        assert!((ixt - 5.0).abs() < 1e-12, "i_xt = {ixt}");
    }

    #[test]
    fn dpi_detects_adversarial_table() {
        let mk = |vals: &[(f64, f64)]| {
            vals.iter()
                .enumerate()
                .map(|(s, &(ix, iy))| LayerMi { layer: 0, iteration: s, i_xt: ix, i_ty: iy })
                .collect::<Vec<_>>()
        };
        // layer 2 claims more information than layer 1: must be flagged
        let traj = InfoPlaneTrajectory {
            layers: vec![mk(&[(3.0, 0.5)]), mk(&[(3.5, 0.4)])],
            clipped: 0,
        };
        let report = dpi_check(&traj).unwrap();
        assert!(report.max_violation_x > 0.49);
        assert!(report.max_violation_y <= 0.0);
        // monotone single snapshot: no violation
        let traj = InfoPlaneTrajectory {
            layers: vec![mk(&[(3.0, 0.5)]), mk(&[(2.0, 0.4)])],
            clipped: 0,
        };
        let report = dpi_check(&traj).unwrap();
        assert!(report.max_violation_x <= 0.0 && report.max_violation_y <= 0.0);
    }

    #[test]
    fn snr_transition_planted_step() {
        let series: Vec<(usize, Option<f64>)> =
            (0..100).map(|i| (i, Some(if i < 50 { 10.0 } else { 0.1 }))).collect();
        let t = detect_snr_transition(&series).unwrap().unwrap();
        assert!((49..=51).contains(&t), "t = {t}");
        let flat: Vec<(usize, Option<f64>)> = (0..100).map(|i| (i, Some(5.0))).collect();
        assert!(detect_snr_transition(&flat).unwrap().is_none());
    }

    #[test]
    fn compression_onset_planted_peak() {
        let mut vals = Vec::new();
        for s in 0..30 {
            let v = if s <= 7 { s as f64 * 0.5 } else { 3.5 - (s - 7) as f64 * 0.1 };
            vals.push(LayerMi { layer: 0, iteration: s * 10, i_xt: v, i_ty: 0.0 });
        }
        let traj = InfoPlaneTrajectory { layers: vec![vals], clipped: 0 };
        let onset = detect_compression_onset(&traj, 0, &OnsetConfig::default()).unwrap();
        assert_eq!(onset, Some(70));
        // monotone increasing: none
        let rising: Vec<LayerMi> = (0..30)
            .map(|s| LayerMi { layer: 0, iteration: s, i_xt: s as f64 * 0.1, i_ty: 0.0 })
            .collect();
        let traj = InfoPlaneTrajectory { layers: vec![rising], clipped: 0 };
        assert!(detect_compression_onset(&traj, 0, &OnsetConfig::default()).unwrap().is_none());
    }

    #[test]
    fn correlation_identities() {
        let identical: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, i as f64 * 2.0)).collect();
        let c = correlate_transitions(&identical).unwrap();
        assert!((c.pearson_r - 1.0).abs() < 1e-12);
        assert!((c.slope - 2.0).abs() < 1e-12);
        let anti: Vec<(f64, f64)> = (1..6).map(|i| (i as f64, -(i as f64))).collect();
        let c = correlate_transitions(&anti).unwrap();
        assert!(c.pearson_r < 0.0);
        assert!(matches!(
            correlate_transitions(&identical[..3]),
            Err(InfoplaneError::TooFew { .. })
        ));
    }

    #[test]
    fn bin_coarsening_never_increases_ixt() {
        let (task, data) = tiny_task(32, 4, 9);
        let spec = NetworkSpec {
            layer_widths: vec![4, 6, 3, 2],
            activation: Activation::Tanh,
            init_weight_std: 1.5,
            init_bias_std: 0.1,
            seed: 77,
        };
        let cfg = TrainConfig {
            learning_rate: 0.2,
            batch_size: 8,
            epochs: 8,
            train_fraction: 1.0,
            snapshot_schedule: vec![0, 10],
        };
        let run = train(&spec, &cfg, &data).unwrap();
        let fine = estimate_layer_mi(&run, &task, &BinningConfig::default()).unwrap();
        let coarse = estimate_layer_mi(
            &run,
            &task,
            &BinningConfig { n_bins: 15, ..BinningConfig::default() },
        )
        .unwrap();
        for l in 0..spec.n_layers() {
            for (f, c) in fine.layers[l].iter().zip(&coarse.layers[l]) {
                assert!(
                    c.i_xt <= f.i_xt + 1e-9,
                    "coarse {} > fine {} at layer {l}",
                    c.i_xt,
                    f.i_xt
                );
            }
        }
    }

    #[test]
    fn encoder_decoder_roundtrip_matches_estimates() {
        let (task, data) = tiny_task(24, 3, 12);
        let spec = NetworkSpec {
            layer_widths: vec![3, 5, 2],
            activation: Activation::Tanh,
            init_weight_std: 1.0,
            init_bias_std: 0.0,
            seed: 5,
        };
        let cfg = TrainConfig {
            learning_rate: 0.2,
            batch_size: 6,
            epochs: 4,
            train_fraction: 1.0,
            snapshot_schedule: vec![4],
        };
        let run = train(&spec, &cfg, &data).unwrap();
        let mlp = run.mlp_at(&run.snapshots[0]);
        let binning = BinningConfig::default();
        let (enc, dec, p_t) = layer_encoder_decoder(&mlp, &task, 0, &binning).unwrap();
        // encoder rows are deterministic
        for x in 0..task.n_patterns() {
            let row = enc.row(x);
            assert!((row.iter().copied().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        // p_t consistent with encoder and p_x
        for t in 0..p_t.len() {
            let mass: f64 =
                (0..task.n_patterns()).map(|x| enc.prob(x, t) * task.p_x[x]).sum();
            assert!((mass - p_t.get(t)).abs() < 1e-12);
        }
        assert_eq!(dec.n_inputs(), p_t.len());
    }
}
