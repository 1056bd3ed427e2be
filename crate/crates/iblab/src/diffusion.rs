//! Gaussian machinery for the diffusion phase: weight decomposition about
//! the drift→diffusion transition, the closed-form inter-layer MI bound,
//! compression-time scaling, the layer-count boost fit, and CLT diagnostics
//! for the bound's hypotheses.

use crate::linalg::Matrix;
use crate::net::TrainRun;
use crate::scalar::{lit, normal_cdf, Real};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("iteration {0} is not a recorded snapshot")]
    NotASnapshot(usize),
    #[error("no snapshots after the transition iteration {0}")]
    NoDiffusionWindow(usize),
    #[error("tau {0} not present in the decomposition")]
    UnknownTau(usize),
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("inputs must be positive (got {0})")]
    NonPositive(f64),
    #[error("alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),
    #[error("degenerate zero-norm direction")]
    DegenerateDirection,
    #[error("eigensolve failed: {0}")]
    Eigen(#[from] crate::linalg::LinalgError),
}

/// Weights split about the transition: `W(τ) = W* + δW(τ)` per layer, plus
/// the activation variances σ²_T entering the noise ratio.
#[derive(Debug, Clone)]
pub struct WeightDecomposition<F> {
    pub transition_iter: usize,
    pub w_star: Vec<Matrix<F>>,
    /// Snapshots strictly after the transition: (iteration, per-layer δW).
    pub deltas: Vec<(usize, Vec<Matrix<F>>)>,
    /// Per layer: empirical variance of that layer's input activations at
    /// the transition.
    pub sigma_t2: Vec<F>,
    /// σ_z² = factor · σ²_T (small measurement/quantization noise).
    pub sigma_z2_factor: F,
}

pub const DEFAULT_SIGMA_Z2_FACTOR: f64 = 1e-4;

/// Splits a run's snapshots about `transition_iter`; `inputs` are the task
/// patterns used to measure activation variances at the transition.
pub fn decompose_weights<F: Real>(
    run: &TrainRun<F>,
    inputs: &Matrix<F>,
    transition_iter: usize,
) -> Result<WeightDecomposition<F>, DiffusionError> {
    let star = run
        .snapshot_at(transition_iter)
        .ok_or(DiffusionError::NotASnapshot(transition_iter))?;
    let deltas: Vec<(usize, Vec<Matrix<F>>)> = run
        .snapshots
        .iter()
        .filter(|s| s.iteration > transition_iter)
        .map(|s| {
            let d = s.weights.iter().zip(&star.weights).map(|(w, w0)| w.sub(w0)).collect();
            (s.iteration, d)
        })
        .collect();
    if deltas.is_empty() {
        return Err(DiffusionError::NoDiffusionWindow(transition_iter));
    }
    // per-layer input activation variance at the transition
    let mlp = run.mlp_at(star);
    let acts = mlp.layer_activations(inputs);
    let mut sigma_t2 = Vec::with_capacity(mlp.n_layers());
    for l in 0..mlp.n_layers() {
        let source: &Matrix<F> = if l == 0 { inputs } else { &acts[l - 1] };
        let n = lit::<F>(source.data().len() as f64);
        let mean = source.data().iter().copied().sum::<F>() / n;
        let var = source.data().iter().map(|&a| (a - mean) * (a - mean)).sum::<F>() / n;
        sigma_t2.push(var.max(lit(1e-12)));
    }
    Ok(WeightDecomposition {
        transition_iter,
        w_star: star.weights.clone(),
        deltas,
        sigma_t2,
        sigma_z2_factor: lit(DEFAULT_SIGMA_Z2_FACTOR),
    })
}

/// The per-layer bound at one diffusion time.
#[derive(Debug, Clone)]
pub struct LayerBound<F> {
    pub layer: usize,
    pub tau: usize,
    /// ½ Σ log2(1 + A_ii / (λ_i + σ_z²/σ²_T)) in bits.
    pub bound_bits: F,
    pub a_diag: Vec<F>,
    pub lambdas: Vec<F>,
    pub noise_ratio: F,
}

/// Core bound formula from an already-eigendecomposed δ: callers supply
/// `A_ii`, `λ_i` and the noise ratio σ_z²/σ²_T.
pub fn bound_bits_from_parts<F: Real>(a_diag: &[F], lambdas: &[F], noise_ratio: F) -> F {
    let half = lit::<F>(0.5);
    a_diag
        .iter()
        .zip(lambdas)
        .map(|(&a, &l)| half * (F::one() + a / (l + noise_ratio)).log2())
        .sum()
}

/// Evaluates the Gaussian MI bound for every layer at diffusion snapshot
/// `tau`: eigendecompose δWδWᵀ = QΛQᵀ, set A = Qᵀ W*W*ᵀ Q, and sum the
/// per-direction channel capacities.
pub fn mi_gaussian_bound<F: Real>(
    dec: &WeightDecomposition<F>,
    tau: usize,
) -> Result<Vec<LayerBound<F>>, DiffusionError> {
    let (_, deltas) = dec
        .deltas
        .iter()
        .find(|(it, _)| *it == tau)
        .ok_or(DiffusionError::UnknownTau(tau))?;
    let mut out = Vec::with_capacity(deltas.len());
    for (layer, delta) in deltas.iter().enumerate() {
        let gram = delta.matmul(&delta.transpose()).symmetrized();
        let eig = gram.sym_eigen()?;
        let wstar_gram = dec.w_star[layer].matmul(&dec.w_star[layer].transpose());
        let a_full = eig.vectors.transpose().matmul(&wstar_gram).matmul(&eig.vectors);
        let a_diag: Vec<F> = (0..a_full.rows()).map(|i| a_full[(i, i)].max(F::zero())).collect();
        let lambdas: Vec<F> = eig.values.iter().map(|&l| l.max(F::zero())).collect();
        let noise_ratio = dec.sigma_z2_factor; // σ_z²/σ²_T with σ_z² = factor·σ²_T
        out.push(LayerBound {
            layer,
            tau,
            bound_bits: bound_bits_from_parts(&a_diag, &lambdas, noise_ratio),
            a_diag,
            lambdas,
            noise_ratio,
        });
    }
    Ok(out)
}

/// Exact log-det form of the same channel (before the Hadamard step), for
/// validating that the diagonal bound really upper-bounds it.
pub fn exact_log_det_bits<F: Real>(
    w_star: &Matrix<F>,
    delta: &Matrix<F>,
    noise_ratio: F,
) -> Result<F, DiffusionError> {
    let d_out = w_star.rows();
    let noise = Matrix::identity(d_out).scale(noise_ratio);
    let num = w_star
        .matmul(&w_star.transpose())
        .add(&delta.matmul(&delta.transpose()))
        .add(&noise)
        .symmetrized();
    let den = delta.matmul(&delta.transpose()).add(&noise).symmetrized();
    let log_det = |m: &Matrix<F>| -> Result<F, DiffusionError> {
        let eig = m.sym_eigen()?;
        Ok(eig.values.iter().map(|&l| l.max(lit(1e-300)).ln()).sum())
    };
    let half = lit::<F>(0.5);
    Ok(half * (log_det(&num)? - log_det(&den)?) / crate::scalar::ln2::<F>())
}

/// Splits eigendirections into informative (λ stays put) and
/// non-informative (λ grows by more than `growth_threshold` across the
/// diffusion window) and reports the compression constant
/// R = (1/(2 ln 2)) Σ_NI A_ii/λ_i⁰ in bits, with λ⁰ and A from the first
/// diffusion snapshot.
#[derive(Debug, Clone)]
pub struct LayerDiffusionSummary<F> {
    pub layer: usize,
    pub r_constant_bits: F,
    pub n_informative: usize,
    pub n_noninformative: usize,
}

pub fn diffusion_summary<F: Real>(
    dec: &WeightDecomposition<F>,
    growth_threshold: F,
) -> Result<Vec<LayerDiffusionSummary<F>>, DiffusionError> {
    if dec.deltas.len() < 2 {
        return Err(DiffusionError::TooFew {
            what: "diffusion snapshots",
            need: 2,
            got: dec.deltas.len(),
        });
    }
    let first_tau = dec.deltas.first().unwrap().0;
    let last_tau = dec.deltas.last().unwrap().0;
    let first = mi_gaussian_bound(dec, first_tau)?;
    let last = mi_gaussian_bound(dec, last_tau)?;
    let mut out = Vec::with_capacity(first.len());
    for (f, l) in first.iter().zip(&last) {
        let mut r = F::zero();
        let mut n_info = 0;
        let mut n_ni = 0;
        for i in 0..f.lambdas.len() {
            let lam0 = f.lambdas[i].max(lit(1e-30));
            if l.lambdas[i] > growth_threshold * lam0 {
                n_ni += 1;
                r += f.a_diag[i] / lam0;
            } else {
                n_info += 1;
            }
        }
        out.push(LayerDiffusionSummary {
            layer: f.layer,
            r_constant_bits: r / (lit::<F>(2.0) * crate::scalar::ln2::<F>()),
            n_informative: n_info,
            n_noninformative: n_ni,
        });
    }
    Ok(out)
}

/// Relative time to compress by `delta_i` bits: τ ∝ (R/ΔI)^(1/α).
pub fn compression_time<F: Real>(r_constant: F, delta_i: F, alpha: F) -> Result<F, DiffusionError> {
    if r_constant <= F::zero() || delta_i <= F::zero() {
        return Err(DiffusionError::NonPositive(
            r_constant.min(delta_i).to_f64().unwrap_or(f64::NAN),
        ));
    }
    let a = alpha.to_f64().unwrap_or(f64::NAN);
    if !(0.0..=1.0).contains(&a) || a == 0.0 {
        return Err(DiffusionError::BadAlpha(a));
    }
    Ok((r_constant / delta_i).powf(F::one() / alpha))
}

/// The super-linear factor K^(1/α)/K by which splitting compression across
/// K layers beats the per-layer count alone.
pub fn layer_split_boost<F: Real>(k: usize, alpha: F) -> Result<F, DiffusionError> {
    let kf = lit::<F>(k as f64);
    Ok(compression_time(F::one(), F::one() / kf, alpha)? / kf)
}

/// Fit of convergence iteration against depth: iteration ≈ c·K^(-1/α).
#[derive(Debug, Clone, Copy)]
pub struct BoostFit {
    pub alpha_hat: f64,
    pub r2: f64,
    /// False when convergence iterations are not strictly decreasing in
    /// depth (the fit is still returned).
    pub monotone: bool,
}

pub fn layer_boost_fit(depth_iters: &[(usize, f64)]) -> Result<BoostFit, DiffusionError> {
    if depth_iters.len() < 3 {
        return Err(DiffusionError::TooFew { what: "depths", need: 3, got: depth_iters.len() });
    }
    if let Some(&(_, bad)) = depth_iters.iter().find(|&&(_, v)| v <= 0.0) {
        return Err(DiffusionError::NonPositive(bad));
    }
    let mut sorted = depth_iters.to_vec();
    sorted.sort_by_key(|&(k, _)| k);
    let monotone = sorted.windows(2).all(|w| w[1].1 < w[0].1);
    let xs: Vec<f64> = sorted.iter().map(|&(k, _)| (k as f64).ln()).collect();
    let ys: Vec<f64> = sorted.iter().map(|&(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx; // = -1/α
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
    Ok(BoostFit { alpha_hat: -1.0 / slope, r2, monotone })
}

/// Diagnostics for the Lyapunov-CLT hypotheses behind the Gaussian bound.
#[derive(Debug, Clone)]
pub struct CltReport {
    /// Σv⁴/(Σv²)² for w* and δw; near 0 in general position, 1 at worst.
    pub gp_ratio_wstar: f64,
    pub gp_ratio_delta: f64,
    /// Kolmogorov-Smirnov statistics of the normalized projections against
    /// the standard normal.
    pub ks_wstar: f64,
    pub ks_delta: f64,
    /// Empirical correlation of the two projections over patterns.
    pub projection_correlation: f64,
    /// False when either direction fails the general-position check.
    pub general_position_ok: bool,
}

pub const GENERAL_POSITION_THRESHOLD: f64 = 0.1;

fn gp_ratio<F: Real>(v: &[F]) -> Result<f64, DiffusionError> {
    let s2: F = v.iter().map(|&a| a * a).sum();
    if s2 <= F::zero() {
        return Err(DiffusionError::DegenerateDirection);
    }
    let s4: F = v.iter().map(|&a| a * a * a * a).sum();
    Ok((s4 / (s2 * s2)).to_f64().unwrap())
}

fn ks_statistic(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &u) in sorted.iter().enumerate() {
        let cdf = normal_cdf(u);
        d = d.max(((i + 1) as f64 / n - cdf).abs()).max((cdf - i as f64 / n).abs());
    }
    d
}

/// Checks the bound's hypotheses for one direction pair on a set of
/// activation rows: general-position ratios, Gaussianity of the normalized
/// projections, and their mutual correlation.
pub fn clt_diagnostics<F: Real>(
    w_star: &[F],
    delta_w: &[F],
    activations: &Matrix<F>,
) -> Result<CltReport, DiffusionError> {
    assert_eq!(w_star.len(), activations.cols());
    assert_eq!(delta_w.len(), activations.cols());
    let gp_w = gp_ratio(w_star)?;
    let gp_d = gp_ratio(delta_w)?;
    // component variance of the activations
    let n_entries = lit::<F>(activations.data().len() as f64);
    let mean = activations.data().iter().copied().sum::<F>() / n_entries;
    let var = activations.data().iter().map(|&a| (a - mean) * (a - mean)).sum::<F>() / n_entries;
    if var <= F::zero() {
        return Err(DiffusionError::DegenerateDirection);
    }
    let sigma = var.sqrt();
    let norm_w = w_star.iter().map(|&a| a * a).sum::<F>().sqrt();
    let norm_d = delta_w.iter().map(|&a| a * a).sum::<F>().sqrt();
    let n = activations.rows();
    let mut proj_w = Vec::with_capacity(n);
    let mut proj_d = Vec::with_capacity(n);
    for p in 0..n {
        let row = activations.row(p);
        let mut uw = F::zero();
        let mut ud = F::zero();
        for (i, &a) in row.iter().enumerate() {
            let centered = a - mean;
            uw += w_star[i] * centered;
            ud += delta_w[i] * centered;
        }
        proj_w.push((uw / (sigma * norm_w)).to_f64().unwrap());
        proj_d.push((ud / (sigma * norm_d)).to_f64().unwrap());
    }
    let nf = n as f64;
    let mw = proj_w.iter().sum::<f64>() / nf;
    let md = proj_d.iter().sum::<f64>() / nf;
    let cov: f64 =
        proj_w.iter().zip(&proj_d).map(|(&a, &b)| (a - mw) * (b - md)).sum::<f64>() / nf;
    let vw: f64 = proj_w.iter().map(|&a| (a - mw) * (a - mw)).sum::<f64>() / nf;
    let vd: f64 = proj_d.iter().map(|&a| (a - md) * (a - md)).sum::<f64>() / nf;
    let corr = if vw > 0.0 && vd > 0.0 { cov / (vw * vd).sqrt() } else { 0.0 };
    proj_w.sort_by(|a, b| a.partial_cmp(b).unwrap());
    proj_d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(CltReport {
        gp_ratio_wstar: gp_w,
        gp_ratio_delta: gp_d,
        ks_wstar: ks_statistic(&proj_w),
        ks_delta: ks_statistic(&proj_d),
        projection_correlation: corr,
        general_position_ok: gp_w < GENERAL_POSITION_THRESHOLD
            && gp_d < GENERAL_POSITION_THRESHOLD,
    })
}

/// CSV export of per-(layer, τ) bounds:
/// `layer,tau,bound_bits,n_informative,r_constant`.
pub fn write_bound_csv<F: Real>(
    rows: &[(LayerBound<F>, Option<&LayerDiffusionSummary<F>>)],
    path: &std::path::Path,
) -> std::io::Result<()> {
    let mut out = String::from("layer,tau,bound_bits,n_informative,r_constant\n");
    for (b, s) in rows {
        let (ni, r) = match s {
            Some(s) => (s.n_informative.to_string(), s.r_constant_bits.to_f64().unwrap().to_string()),
            None => (String::from(""), String::from("")),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.layer,
            b.tau,
            b.bound_bits.to_f64().unwrap(),
            ni,
            r
        ));
    }
    std::fs::write(path, out)
}
