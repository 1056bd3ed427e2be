//! Closed-form infinite-width machinery: NNGP/NTK kernel recursion for
//! fully-connected ReLU/Erf networks, the Gaussian ensemble posterior over
//! training time, and the information quantities it makes tractable.
//!
//! Unit conventions: mutual-information bounds (izy, izx, izd) are in bits;
//! `expected_log_loss`, `waic` and `itheta_d_bound` are natural-log
//! quantities (so the late-time slope of the θ-bound is exactly Tr Θ).

use crate::linalg::{Matrix, SymEigen};
use crate::scalar::{lit, Real};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NtkError {
    #[error("need at least one input point")]
    NoPoints,
    #[error("architecture invalid: {0}")]
    BadArch(String),
    #[error("kernel matrix is singular even with ridge")]
    Singular,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigensolve failed: {0}")]
    Eigen(#[from] crate::linalg::LinalgError),
    #[error("covariance not positive definite")]
    NotPositiveDefinite,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NtkActivation {
    Relu,
    Erf,
}

/// Infinite-width architecture: `depth` hidden layers, one scalar output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchSpec {
    pub depth: usize,
    pub activation: NtkActivation,
    pub sigma_w2: f64,
    pub sigma_b2: f64,
}

impl ArchSpec {
    fn validate(&self) -> Result<(), NtkError> {
        if self.depth < 1 {
            return Err(NtkError::BadArch("depth must be >= 1".into()));
        }
        if self.sigma_w2 <= 0.0 || self.sigma_b2 < 0.0 {
            return Err(NtkError::BadArch("sigma_w2 must be > 0, sigma_b2 >= 0".into()));
        }
        Ok(())
    }
}

/// NNGP kernel K and NTK Θ over one point set.
#[derive(Debug, Clone)]
pub struct KernelPair<F> {
    pub nngp: Matrix<F>,
    pub ntk: Matrix<F>,
    /// arccos/arcsin arguments that had to be clipped into [-1, 1].
    pub clipped: usize,
}

impl<F: Real> KernelPair<F> {
    /// Most negative eigenvalue relative to the trace (≥ -1e-8 in a healthy
    /// kernel).
    pub fn psd_violation(&self) -> Result<F, NtkError> {
        let k = self.nngp.sym_eigen()?.min_eigenvalue();
        let t = self.ntk.sym_eigen()?.min_eigenvalue();
        let scale = self.nngp.trace().max(self.ntk.trace()).max(F::min_positive_value());
        Ok((-k.min(t) / scale).max(F::zero()))
    }

    /// Binary float64 persistence with a JSON header next to it.
    pub fn save(&self, base: &std::path::Path) -> Result<(), NtkError> {
        #[derive(Serialize)]
        struct Header {
            n: usize,
            files: [String; 2],
        }
        let n = self.nngp.rows();
        let write_bin = |m: &Matrix<F>, path: &std::path::Path| -> Result<(), NtkError> {
            let mut bytes = Vec::with_capacity(8 * n * n);
            for v in m.data() {
                bytes.extend_from_slice(&v.to_f64().unwrap().to_le_bytes());
            }
            std::fs::write(path, bytes)?;
            Ok(())
        };
        let nngp_path = base.with_extension("nngp.bin");
        let ntk_path = base.with_extension("ntk.bin");
        write_bin(&self.nngp, &nngp_path)?;
        write_bin(&self.ntk, &ntk_path)?;
        let header = Header {
            n,
            files: [
                nngp_path.file_name().unwrap().to_string_lossy().into(),
                ntk_path.file_name().unwrap().to_string_lossy().into(),
            ],
        };
        std::fs::write(base.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }
}

/// Bivariate Gaussian expectations E[φ(u)φ(v)] and E[φ'(u)φ'(v)] for the
/// supported activations, given the (k11, k22, k12) of (u, v).
fn activation_expectations<F: Real>(
    act: NtkActivation,
    k11: F,
    k22: F,
    k12: F,
    clipped: &mut usize,
) -> (F, F) {
    match act {
        NtkActivation::Relu => {
            // arc-cosine kernel of degree 1
            let norm = (k11 * k22).sqrt();
            if norm <= F::zero() {
                return (F::zero(), F::zero());
            }
            let mut c = k12 / norm;
            if c > F::one() {
                c = F::one();
                *clipped += 1;
            } else if c < -F::one() {
                c = -F::one();
                *clipped += 1;
            }
            let theta = c.acos();
            let pi = lit::<F>(std::f64::consts::PI);
            let ephi = norm / (lit::<F>(2.0) * pi) * (theta.sin() + (pi - theta) * c);
            let edphi = (pi - theta) / (lit::<F>(2.0) * pi);
            (ephi, edphi)
        }
        NtkActivation::Erf => {
            let denom = ((F::one() + lit::<F>(2.0) * k11)
                * (F::one() + lit::<F>(2.0) * k22))
                .sqrt();
            let mut arg = lit::<F>(2.0) * k12 / denom;
            if arg > F::one() {
                arg = F::one();
                *clipped += 1;
            } else if arg < -F::one() {
                arg = -F::one();
                *clipped += 1;
            }
            let pi = lit::<F>(std::f64::consts::PI);
            let ephi = lit::<F>(2.0) / pi * arg.asin();
            let det = (denom * denom - lit::<F>(4.0) * k12 * k12).max(lit(1e-30));
            let edphi = lit::<F>(4.0) / (pi * det.sqrt());
            (ephi, edphi)
        }
    }
}

/// Layerwise kernel recursion: K⁰ = σ_b² + σ_w²(x·x′)/d, then per hidden
/// layer K and its derivative kernel via the activation's closed forms,
/// with Θ accumulated as Θ^{l+1} = K^{l+1} + σ_w²·K̇^{l+1}·Θ^l.
pub fn compute_kernels<F: Real>(
    arch: &ArchSpec,
    points: &Matrix<F>,
) -> Result<KernelPair<F>, NtkError> {
    arch.validate()?;
    let n = points.rows();
    if n == 0 {
        return Err(NtkError::NoPoints);
    }
    let d = lit::<F>(points.cols() as f64);
    let sw2 = lit::<F>(arch.sigma_w2);
    let sb2 = lit::<F>(arch.sigma_b2);
    let mut k = Matrix::from_fn(n, n, |i, j| {
        let dot: F = points.row(i).iter().zip(points.row(j)).map(|(&a, &b)| a * b).sum();
        sb2 + sw2 * dot / d
    });
    let mut theta = k.clone();
    let mut clipped = 0usize;
    for _ in 0..arch.depth {
        let diag: Vec<F> = (0..n).map(|i| k[(i, i)]).collect();
        let mut k_next = Matrix::zeros(n, n);
        let mut theta_next = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let (ephi, edphi) =
                    activation_expectations(arch.activation, diag[i], diag[j], k[(i, j)], &mut clipped);
                let kv = sb2 + sw2 * ephi;
                let tv = kv + sw2 * edphi * theta[(i, j)];
                k_next[(i, j)] = kv;
                k_next[(j, i)] = kv;
                theta_next[(i, j)] = tv;
                theta_next[(j, i)] = tv;
            }
        }
        k = k_next;
        theta = theta_next;
    }
    Ok(KernelPair { nngp: k, ntk: theta, clipped })
}

/// Gaussian ensemble posterior at one time: mean vector and covariance over
/// the evaluation points.
#[derive(Debug, Clone)]
pub struct EnsemblePosterior<F> {
    pub mu: Vec<F>,
    pub sigma: Matrix<F>,
    pub tau: F,
}

impl<F: Real> EnsemblePosterior<F> {
    pub fn psd_violation(&self) -> Result<F, NtkError> {
        let min = self.sigma.sym_eigen()?.min_eigenvalue();
        let scale = self.sigma.trace().max(F::one());
        Ok((-min / scale).max(F::zero()))
    }
}

/// Precomputed solver over kernels spanning train ∪ eval points: the first
/// `n_train` indices are the training set.
pub struct PosteriorSolver<F> {
    pub n_train: usize,
    pub n_eval: usize,
    eig: SymEigen<F>,
    theta_ex: Matrix<F>,
    k_xx: Matrix<F>,
    k_ex: Matrix<F>,
    k_ee: Matrix<F>,
    y: Vec<F>,
    theta_trace: F,
    /// Ridge added to Θ when its conditioning exceeded 1e12.
    pub ridge: Option<F>,
}

const COND_LIMIT: f64 = 1e12;

impl<F: Real> PosteriorSolver<F> {
    pub fn new(kernels: &KernelPair<F>, n_train: usize, y: &[F]) -> Result<Self, NtkError> {
        let n_total = kernels.ntk.rows();
        if n_train == 0 || n_train > n_total {
            return Err(NtkError::DimensionMismatch(format!(
                "n_train {n_train} out of range for {n_total} points"
            )));
        }
        if y.len() != n_train {
            return Err(NtkError::DimensionMismatch(format!(
                "targets: {} vs n_train {n_train}",
                y.len()
            )));
        }
        let n_eval = n_total - n_train;
        let block = |m: &Matrix<F>, r0: usize, r1: usize, c0: usize, c1: usize| {
            Matrix::from_fn(r1 - r0, c1 - c0, |i, j| m[(r0 + i, c0 + j)])
        };
        let theta_xx = block(&kernels.ntk, 0, n_train, 0, n_train).symmetrized();
        let theta_trace = theta_xx.trace();
        let mut eig = theta_xx.sym_eigen()?;
        let mut ridge = None;
        let lmax = eig.max_eigenvalue();
        let lmin = eig.min_eigenvalue();
        if lmin <= F::zero() || (lmax / lmin).to_f64().unwrap_or(f64::INFINITY) > COND_LIMIT {
            let r = lit::<F>(1e-10) * theta_trace / lit::<F>(n_train as f64);
            let ridged = theta_xx.add(&Matrix::identity(n_train).scale(r));
            eig = ridged.sym_eigen()?;
            if eig.min_eigenvalue() <= F::zero() {
                return Err(NtkError::Singular);
            }
            ridge = Some(r);
        }
        Ok(Self {
            n_train,
            n_eval,
            eig,
            theta_ex: block(&kernels.ntk, n_train, n_total, 0, n_train),
            k_xx: block(&kernels.nngp, 0, n_train, 0, n_train).symmetrized(),
            k_ex: block(&kernels.nngp, n_train, n_total, 0, n_train),
            k_ee: block(&kernels.nngp, n_train, n_total, n_train, n_total).symmetrized(),
            y: y.to_vec(),
            theta_trace,
            ridge,
        })
    }

    pub fn theta_trace(&self) -> F {
        self.theta_trace
    }

    /// Θ⁻¹(I − e^(−τΘ)) through the eigenbasis; τ may be infinite.
    fn evolution_map(&self, tau: F) -> Matrix<F> {
        self.eig.spectral_map(|l| {
            if tau.is_infinite() {
                F::one() / l
            } else {
                // (1 − e^{−τλ})/λ, continuous at λ→0 where it tends to τ
                let x = tau * l;
                if x.abs() < lit(1e-12) {
                    tau
                } else {
                    (F::one() - (-x).exp()) / l
                }
            }
        })
    }

    /// Posterior mean on the training points; interpolates Y as τ→∞.
    pub fn train_mean(&self, tau: F) -> Vec<F> {
        let g = self.eig.spectral_map(|l| {
            if tau.is_infinite() {
                F::one()
            } else {
                F::one() - (-tau * l).exp()
            }
        });
        g.matvec(&self.y)
    }

    /// Full posterior over the evaluation block at time τ (exact mean and
    /// covariance of the ensemble).
    pub fn posterior(&self, tau: F) -> EnsemblePosterior<F> {
        let b = self.theta_ex.matmul(&self.evolution_map(tau));
        let mu = b.matvec(&self.y);
        let bk_xe = b.matmul(&self.k_ex.transpose());
        let sigma = self
            .k_ee
            .sub(&bk_xe.transpose())
            .sub(&bk_xe)
            .add(&b.matmul(&self.k_xx).matmul(&b.transpose()))
            .symmetrized();
        EnsemblePosterior { mu, sigma, tau }
    }

    /// Upper bound on the expected parameter path length at time τ:
    /// sqrt(½[Tr(KΘ(1−e^(−2τΘ))) + YᵀΘ(1−e^(−2τΘ))Y]).
    pub fn path_length_bound(&self, tau: F) -> F {
        let m = self.eig.spectral_map(|l| {
            let damp = if tau.is_infinite() { F::one() } else { F::one() - (-lit::<F>(2.0) * tau * l).exp() };
            l * damp
        });
        let half = lit::<F>(0.5);
        let quad = m.quadratic_form(&self.y);
        let tr = self.k_xx.matmul(&m).trace();
        (half * (tr + quad)).max(F::zero()).sqrt()
    }

    /// Variational bound on the parameter-dataset information at time τ,
    /// in nats: Tr(KΘ⁻¹(I−e^(−τΘ))²) + YᵀΘ⁻¹(I−e^(−τΘ))²Y + τ·TrΘ.
    pub fn itheta_d_bound(&self, tau: F) -> F {
        let m = self.eig.spectral_map(|l| {
            let d = F::one() - (-tau * l).exp();
            d * d / l
        });
        self.k_xx.matmul(&m).trace() + m.quadratic_form(&self.y) + tau * self.theta_trace
    }
}

/// Tr F = Tr Θ: the Fisher trace of the linearized ensemble, constant in τ.
pub fn fisher_trace<F: Real>(kernels: &KernelPair<F>) -> F {
    kernels.ntk.trace()
}

/// Gibbs expected log-likelihood under the unit-variance observation model:
/// E[ln q(y|z)] = −½‖y−μ‖² − ½TrΣ − (k/2)ln 2π, in nats.
pub fn expected_log_loss<F: Real>(post: &EnsemblePosterior<F>, y: &[F]) -> F {
    assert_eq!(y.len(), post.mu.len());
    let half = lit::<F>(0.5);
    let sq: F = y.iter().zip(&post.mu).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let k = lit::<F>(y.len() as f64);
    -half * sq - half * post.sigma.trace() - half * k * lit::<F>(2.0 * std::f64::consts::PI).ln()
}

/// Observation model for the I(Z;Y) bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsModel {
    /// Fixed unit observation variance (the squared-loss convention).
    Unit,
    /// Diagonal variance fitted to the residual second moment, the
    /// tightest Gaussian choice.
    FittedDiagonal,
}

/// Variational lower bound on I(Z;Y) in bits over per-point scalar
/// posterior marginals: H(Y) + mean E[log q(y|z)]. `h_y_bits` is the label
/// entropy (empirical for discrete labels, differential for continuous).
pub fn izy_lower_bound<F: Real>(
    mus: &[F],
    vars: &[F],
    ys: &[F],
    h_y_bits: F,
    obs: ObsModel,
) -> F {
    assert_eq!(mus.len(), ys.len());
    assert_eq!(vars.len(), ys.len());
    let n = lit::<F>(ys.len() as f64);
    let half = lit::<F>(0.5);
    let ln_2pi = lit::<F>(2.0 * std::f64::consts::PI).ln();
    let mean_ll_nats = match obs {
        ObsModel::Unit => {
            let mut acc = F::zero();
            for i in 0..ys.len() {
                let r = ys[i] - mus[i];
                acc += -half * (r * r + vars[i]) - half * ln_2pi;
            }
            acc / n
        }
        ObsModel::FittedDiagonal => {
            // Σ_r = mean residual second moment minimizes the bound
            let mut second = F::zero();
            for i in 0..ys.len() {
                let r = ys[i] - mus[i];
                second += r * r + vars[i];
            }
            let sigma_r2 = (second / n).max(lit(1e-300));
            -half - half * (ln_2pi + sigma_r2.ln())
        }
    };
    h_y_bits + crate::scalar::nats_to_bits(mean_ll_nats)
}

/// Discrete-label variant of the I(Z;Y) lower bound: the observation model
/// is the Gaussian likelihood normalized over the finite label set, a valid
/// pmf, so the bound can never exceed H(Y). `obs_var` is the likelihood
/// width; the expectation over z runs on a fixed quadrature grid.
pub fn izy_lower_bound_discrete<F: Real>(
    mus: &[F],
    vars: &[F],
    ys: &[F],
    label_values: &[F],
    h_y_bits: F,
    obs_var: F,
) -> F {
    assert_eq!(mus.len(), ys.len());
    let half = lit::<F>(0.5);
    let grid = 200usize;
    let mut mean_ll = F::zero();
    for i in 0..ys.len() {
        let sd = vars[i].max(lit(1e-30)).sqrt();
        let span = lit::<F>(8.0) * sd;
        let step = lit::<F>(2.0) * span / lit::<F>(grid as f64);
        let mut acc = F::zero();
        let mut wsum = F::zero();
        for g in 0..grid {
            let z = mus[i] - span + (lit::<F>(g as f64) + half) * step;
            let u = (z - mus[i]) / sd;
            let w = (-half * u * u).exp();
            // log q(y_i | z) with q normalized over the label set
            let mut max_s = F::neg_infinity();
            let scores: Vec<F> = label_values
                .iter()
                .map(|&v| {
                    let r = v - z;
                    let s = -half * r * r / obs_var;
                    max_s = max_s.max(s);
                    s
                })
                .collect();
            let lse =
                max_s + scores.iter().map(|&s| (s - max_s).exp()).sum::<F>().ln();
            let ri = ys[i] - z;
            acc += w * (-half * ri * ri / obs_var - lse);
            wsum += w;
        }
        mean_ll += acc / wsum;
    }
    mean_ll = mean_ll / lit::<F>(ys.len() as f64);
    h_y_bits + crate::scalar::nats_to_bits(mean_ll)
}

/// Multi-sample bounds on I(Z;X|D) in bits from per-point scalar posterior
/// marginals. Lower: z_i against the full batch mixture; upper: the
/// leave-one-out variant. The lower bound can never exceed log2(batch).
pub fn izx_minibatch_bounds<F: Real>(
    mus: &[F],
    vars: &[F],
    s_samples: usize,
    seed: u64,
) -> (F, F) {
    let n = mus.len();
    assert!(n >= 2, "need a batch of at least 2 points");
    assert!(s_samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ln_2pi = lit::<F>(2.0 * std::f64::consts::PI).ln();
    let half = lit::<F>(0.5);
    let log_density = |z: F, mu: F, var: F| -> F {
        let r = z - mu;
        -half * r * r / var - half * (ln_2pi + var.ln())
    };
    let mut lower = F::zero();
    let mut upper = F::zero();
    let mut logs = vec![F::zero(); n];
    for _ in 0..s_samples {
        for i in 0..n {
            let eps: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let z = mus[i] + vars[i].sqrt() * lit::<F>(eps);
            let own = log_density(z, mus[i], vars[i]);
            let mut max_l = F::neg_infinity();
            for j in 0..n {
                logs[j] = log_density(z, mus[j], vars[j]);
                max_l = max_l.max(logs[j]);
            }
            // log-sum-exp over the full batch
            let mut sum_all = F::zero();
            for &l in &logs {
                sum_all += (l - max_l).exp();
            }
            let lse_all = max_l + sum_all.ln();
            lower += own - (lse_all - lit::<F>(n as f64).ln());
            // leave-one-out
            let sum_loo = sum_all - (own - max_l).exp();
            let lse_loo = max_l + sum_loo.max(lit(1e-300)).ln();
            upper += own - (lse_loo - lit::<F>((n - 1) as f64).ln());
        }
    }
    let scale = lit::<F>((n * s_samples) as f64) * crate::scalar::ln2::<F>();
    (lower / scale, upper / scale)
}

/// Variational upper bound on I(Z;D|X) in bits: the mean Gaussian KL between
/// each point's posterior marginal and its prior predictive N(0, K(x,x)).
pub fn izd_upper_bound<F: Real>(
    mus: &[F],
    vars: &[F],
    prior_vars: &[F],
) -> Result<F, NtkError> {
    assert_eq!(mus.len(), vars.len());
    assert_eq!(mus.len(), prior_vars.len());
    let half = lit::<F>(0.5);
    let mut acc = F::zero();
    for i in 0..mus.len() {
        let k = prior_vars[i];
        if k <= F::zero() {
            return Err(NtkError::NotPositiveDefinite);
        }
        let s = vars[i].max(lit(1e-300));
        acc += half * (s / k + mus[i] * mus[i] / k - F::one() + (k / s).ln());
    }
    Ok(crate::scalar::nats_to_bits(acc / lit::<F>(mus.len() as f64)).max(F::zero()))
}

/// WAIC = Bayes − Gibbs in nats, from the exact Gaussian closed forms:
/// ½(y−μ)ᵀ(I+Σ)⁻¹Σ(y−μ) + ½TrΣ − ½ ln det(I+Σ).
pub fn waic<F: Real>(post: &EnsemblePosterior<F>, y: &[F]) -> Result<F, NtkError> {
    assert_eq!(y.len(), post.mu.len());
    let eig = post.sigma.sym_eigen()?;
    let half = lit::<F>(0.5);
    // (I+Σ)^{-1} Σ shares Σ's eigenbasis with eigenvalues s/(1+s)
    let shrink = eig.spectral_map(|s| s / (F::one() + s));
    let resid: Vec<F> = y.iter().zip(&post.mu).map(|(&a, &b)| a - b).collect();
    let quad = shrink.quadratic_form(&resid);
    let log_det: F = eig.values.iter().map(|&s| (F::one() + s).ln()).sum();
    Ok(half * quad + half * post.sigma.trace() - half * log_det)
}
