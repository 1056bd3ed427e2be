//! Synthetic benchmark worlds: a symmetry-invariant binary rule over all
//! 4096 patterns of 12 binary inputs, and a jointly Gaussian regression task
//! with analytic mutual information and its bottleneck eigenspectrum.

use crate::linalg::{orthonormalize_rows, Matrix};
use crate::prob::JointDistribution;
use crate::scalar::{lit, xlog2x, Real};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_INPUT_BITS: usize = 12;
pub const N_PATTERNS: usize = 1 << N_INPUT_BITS;
/// Orbit count the shipped group must produce.
pub const N_ORBITS: usize = 64;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("generator {0} is not a permutation of 12 positions")]
    NotAPermutation(usize),
    #[error("group yields {got} orbits, need exactly {expected}")]
    OrbitCount { expected: usize, got: usize },
    #[error("need at least 2 distinct scores, got {0}")]
    TooFewScores(usize),
    #[error("calibration target {target} not bracketed in [{lo}, {hi}]")]
    NonBracketing { target: f64, lo: f64, hi: f64 },
    #[error("spectrum has {got} singular values, at most {max} allowed")]
    BadSpectrum { got: usize, max: usize },
    #[error("dimensions must be >= 1 and sigmas > 0")]
    BadTaskParams,
    #[error("input covariance is singular")]
    SingularCovariance,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse: {0}")]
    Parse(String),
}

/// A permutation group on the 12 input positions, given by generators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    /// Each generator maps position `i` to `gen[i]`.
    pub generators: Vec<[usize; N_INPUT_BITS]>,
}

impl GroupSpec {
    pub fn new(generators: Vec<[usize; N_INPUT_BITS]>) -> Result<Self, DatagenError> {
        for (gi, g) in generators.iter().enumerate() {
            let mut seen = [false; N_INPUT_BITS];
            for &img in g {
                if img >= N_INPUT_BITS || seen[img] {
                    return Err(DatagenError::NotAPermutation(gi));
                }
                seen[img] = true;
            }
        }
        Ok(Self { generators })
    }

    pub fn identity_only() -> Self {
        Self { generators: vec![std::array::from_fn(|i| i)] }
    }

    /// The default task symmetry. The 12 positions pair into 6 antipodal
    /// axes (positions 2k, 2k+1); generators are a 5-cycle of the five
    /// equatorial axes, a transposition of two of them, and an even-weight
    /// antipodal flip touching the polar axis. This group (order 3840)
    /// splits the 4096 patterns into exactly 64 orbits.
    pub fn default_symmetric() -> Self {
        Self {
            generators: vec![
                // axes 1->2->3->4->5->1, axis 0 fixed
                [0, 1, 4, 5, 6, 7, 8, 9, 10, 11, 2, 3],
                // swap axes 1 and 2
                [0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 10, 11],
                // flip (swap within) axes 0 and 1
                [1, 0, 3, 2, 4, 5, 6, 7, 8, 9, 10, 11],
            ],
        }
    }

    fn apply(g: &[usize; N_INPUT_BITS], pattern: u16) -> u16 {
        let mut out = 0u16;
        for (i, &img) in g.iter().enumerate() {
            if pattern & (1 << i) != 0 {
                out |= 1 << img;
            }
        }
        out
    }

    /// Orbit id per pattern (ids assigned by ascending least member) and the
    /// orbit count. BFS over generator moves; generators of a finite group
    /// reach the whole orbit without explicit inverses.
    pub fn pattern_orbits(&self) -> (Vec<u16>, usize) {
        let mut orbit = vec![u16::MAX; N_PATTERNS];
        let mut n = 0u16;
        let mut stack = Vec::new();
        for start in 0..N_PATTERNS as u16 {
            if orbit[start as usize] != u16::MAX {
                continue;
            }
            orbit[start as usize] = n;
            stack.push(start);
            while let Some(p) = stack.pop() {
                for g in &self.generators {
                    let q = Self::apply(g, p);
                    if orbit[q as usize] == u16::MAX {
                        orbit[q as usize] = n;
                        stack.push(q);
                    }
                }
            }
            n += 1;
        }
        (orbit, n as usize)
    }
}

/// All 4096 input patterns with their orbit structure.
#[derive(Debug, Clone)]
pub struct PatternSet {
    /// Pattern `x` as a 12-bit mask; row index equals the pattern value.
    pub patterns: Vec<u16>,
    pub orbit_id: Vec<u16>,
    pub n_orbits: usize,
    pub orbit_sizes: Vec<usize>,
}

impl PatternSet {
    fn from_group(group: &GroupSpec) -> Self {
        let (orbit_id, n_orbits) = group.pattern_orbits();
        let mut orbit_sizes = vec![0usize; n_orbits];
        for &o in &orbit_id {
            orbit_sizes[o as usize] += 1;
        }
        Self { patterns: (0..N_PATTERNS as u16).collect(), orbit_id, n_orbits, orbit_sizes }
    }

    /// ±1 input matrix, one row per pattern.
    pub fn input_matrix<F: Real>(&self) -> Matrix<F> {
        Matrix::from_fn(N_PATTERNS, N_INPUT_BITS, |x, i| {
            if self.patterns[x] & (1 << i) != 0 {
                F::one()
            } else {
                -F::one()
            }
        })
    }
}

/// The stochastic rule p(y=1|x), constant on orbits.
#[derive(Debug, Clone)]
pub struct RuleDistribution<F> {
    pub p_y1_given_x: Vec<F>,
    pub gain: F,
    pub threshold: F,
}

impl<F: Real> RuleDistribution<F> {
    /// Exact joint p(x, y) over 4096 x 2 with uniform p(x).
    pub fn exact_joint(&self) -> JointDistribution<F> {
        let n = lit::<F>(N_PATTERNS as f64);
        let table = Matrix::from_fn(N_PATTERNS, 2, |x, y| {
            let p1 = self.p_y1_given_x[x];
            (if y == 1 { p1 } else { F::one() - p1 }) / n
        });
        JointDistribution::new(table).expect("rule joint is valid")
    }

    /// Marginal p(y=1) under uniform p(x).
    pub fn p_y1(&self) -> F {
        self.p_y1_given_x.iter().copied().sum::<F>() / lit::<F>(N_PATTERNS as f64)
    }

    /// I(X;Y) in bits under uniform p(x).
    pub fn mutual_information(&self) -> F {
        mi_of_rule(&self.p_y1_given_x, None)
    }
}

fn sigmoid<F: Real>(u: F) -> F {
    F::one() / (F::one() + (-u).exp())
}

fn binary_entropy<F: Real>(p: F) -> F {
    -xlog2x(p) - xlog2x(F::one() - p)
}

/// I(X;Y) = H(Y) - H(Y|X) for a per-x Bernoulli rule; `weights` defaults to
/// uniform.
fn mi_of_rule<F: Real>(p_y1: &[F], weights: Option<&[F]>) -> F {
    let n = lit::<F>(p_y1.len() as f64);
    let w = |i: usize| weights.map_or(F::one() / n, |ws| ws[i]);
    let mut p1 = F::zero();
    let mut h_cond = F::zero();
    for (i, &p) in p_y1.iter().enumerate() {
        p1 += w(i) * p;
        h_cond += w(i) * binary_entropy(p);
    }
    (binary_entropy(p1) - h_cond).max(F::zero())
}

/// Calibration targets for the rule.
#[derive(Debug, Clone, Copy)]
pub struct RuleTargets {
    pub p_y1: f64,
    pub mi_bits: f64,
}

impl Default for RuleTargets {
    fn default() -> Self {
        Self { p_y1: 0.5, mi_bits: 0.99 }
    }
}

/// Calibrates (θ, γ): for each candidate gain, θ is bisected so that p(y=1)
/// hits its target; the outer bisection moves the gain until the rule's
/// mutual information hits its target.
pub fn calibrate_threshold_and_gain<F: Real>(
    scores: &[F],
    weights: &[F],
    targets: RuleTargets,
) -> Result<(F, F), DatagenError> {
    assert_eq!(scores.len(), weights.len());
    let distinct = {
        let mut s: Vec<f64> = scores.iter().map(|v| v.to_f64().unwrap()).collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        s.len()
    };
    if distinct < 2 {
        return Err(DatagenError::TooFewScores(distinct));
    }
    let p1_at = |theta: F, gain: F| -> F {
        scores.iter().zip(weights).map(|(&s, &w)| w * sigmoid(gain * (s - theta))).sum()
    };
    // Exact p(y=1) targets are generally unreachable at high gain: the
    // threshold would have to cut through an orbit, whose conditional
    // entropy then caps the attainable MI. Aim instead for the closest
    // between-orbit split, which must land within 0.01 of the target.
    let p1_split = {
        let mut by_score: Vec<(f64, f64)> = scores
            .iter()
            .zip(weights)
            .map(|(&s, &w)| (s.to_f64().unwrap(), w.to_f64().unwrap()))
            .collect();
        by_score.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut cum = 0.0;
        let mut best = 0.0f64;
        for &(_, w) in &by_score {
            cum += w;
            if (cum - targets.p_y1).abs() < (best - targets.p_y1).abs() {
                best = cum;
            }
        }
        best
    };
    if (p1_split - targets.p_y1).abs() > 0.01 {
        return Err(DatagenError::NonBracketing {
            target: targets.p_y1,
            lo: p1_split,
            hi: p1_split,
        });
    }
    let smin = scores.iter().copied().fold(F::infinity(), F::min);
    let smax = scores.iter().copied().fold(F::neg_infinity(), F::max);
    let span = (smax - smin).max(F::one());
    let theta_for = |gain: F| -> Result<F, DatagenError> {
        // p(y=1) is strictly decreasing in θ
        let mut lo = smin - span * lit::<F>(50.0);
        let mut hi = smax + span * lit::<F>(50.0);
        let target = lit::<F>(p1_split);
        if p1_at(lo, gain) < target || p1_at(hi, gain) > target {
            return Err(DatagenError::NonBracketing {
                target: p1_split,
                lo: lo.to_f64().unwrap(),
                hi: hi.to_f64().unwrap(),
            });
        }
        for _ in 0..200 {
            let mid = (lo + hi) * lit::<F>(0.5);
            if p1_at(mid, gain) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo + hi) * lit::<F>(0.5))
    };
    let mi_at = |gain: F| -> Result<F, DatagenError> {
        let theta = theta_for(gain)?;
        let p_y1: Vec<F> = scores.iter().map(|&s| sigmoid(gain * (s - theta))).collect();
        Ok(mi_of_rule(&p_y1, Some(weights)))
    };
    let target = lit::<F>(targets.mi_bits);
    let mut g_lo = lit::<F>(1e-3) / span;
    let mut g_hi = lit::<F>(1e5) / span;
    if mi_at(g_lo)? > target || mi_at(g_hi)? < target {
        return Err(DatagenError::NonBracketing {
            target: targets.mi_bits,
            lo: g_lo.to_f64().unwrap(),
            hi: g_hi.to_f64().unwrap(),
        });
    }
    for _ in 0..100 {
        let mid = (g_lo * g_hi).sqrt();
        if mi_at(mid)? < target {
            g_lo = mid;
        } else {
            g_hi = mid;
        }
    }
    let gain = (g_lo * g_hi).sqrt();
    Ok((theta_for(gain)?, gain))
}

/// Builds the symmetric benchmark rule: orbit scores drawn from the seed,
/// then θ and γ calibrated so p(y=1) ≈ 0.5 and I(X;Y) ≈ 0.99 bits.
pub fn generate_symmetric_rule<F: Real>(
    seed: u64,
    group: &GroupSpec,
) -> Result<(PatternSet, RuleDistribution<F>), DatagenError> {
    let patterns = PatternSet::from_group(group);
    if patterns.n_orbits != N_ORBITS {
        return Err(DatagenError::OrbitCount { expected: N_ORBITS, got: patterns.n_orbits });
    }
    let weights: Vec<F> =
        patterns.orbit_sizes.iter().map(|&s| lit::<F>(s as f64 / N_PATTERNS as f64)).collect();
    // The orbit sizes are lumpy, so not every score draw admits a
    // between-orbit split close enough to p(y=1) = 0.5. Derived re-draws
    // keep the construction deterministic in `seed`.
    let mut last_err = None;
    for attempt in 0..16u64 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let scores: Vec<F> = (0..patterns.n_orbits)
            .map(|_| {
                lit::<F>(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            })
            .collect();
        match calibrate_threshold_and_gain(&scores, &weights, RuleTargets::default()) {
            Ok((theta, gain)) => {
                let p_y1_given_x: Vec<F> = patterns
                    .orbit_id
                    .iter()
                    .map(|&o| sigmoid(gain * (scores[o as usize] - theta)))
                    .collect();
                let rule = RuleDistribution { p_y1_given_x, gain, threshold: theta };
                debug_assert!((rule.p_y1().to_f64().unwrap() - 0.5).abs() < 0.01);
                return Ok((patterns, rule));
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Writes the task as CSV rows `bit0..bit11,orbit,p_y1`.
pub fn write_task_csv<F: Real>(
    patterns: &PatternSet,
    rule: &RuleDistribution<F>,
    path: &std::path::Path,
) -> Result<(), DatagenError> {
    let mut out =
        String::from("bit0,bit1,bit2,bit3,bit4,bit5,bit6,bit7,bit8,bit9,bit10,bit11,orbit,p_y1\n");
    for x in 0..N_PATTERNS {
        for i in 0..N_INPUT_BITS {
            out.push(if patterns.patterns[x] & (1 << i) != 0 { '1' } else { '0' });
            out.push(',');
        }
        out.push_str(&format!(
            "{},{}\n",
            patterns.orbit_id[x],
            rule.p_y1_given_x[x].to_f64().unwrap()
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a task CSV back. The gain/threshold are not stored in the CSV;
/// they come back as zero and the rule values stand on their own.
pub fn read_task_csv<F: Real>(
    path: &std::path::Path,
) -> Result<(PatternSet, RuleDistribution<F>), DatagenError> {
    let text = std::fs::read_to_string(path)?;
    let mut orbit_id = vec![0u16; N_PATTERNS];
    let mut p_y1 = vec![F::zero(); N_PATTERNS];
    let mut seen = 0usize;
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != N_INPUT_BITS + 2 {
            return Err(DatagenError::Parse(format!("expected 14 cells, got {}", cells.len())));
        }
        let mut pattern = 0u16;
        for (i, c) in cells[..N_INPUT_BITS].iter().enumerate() {
            match c.trim() {
                "1" => pattern |= 1 << i,
                "0" => {}
                other => return Err(DatagenError::Parse(format!("bad bit {other:?}"))),
            }
        }
        orbit_id[pattern as usize] =
            cells[N_INPUT_BITS].trim().parse().map_err(|e| DatagenError::Parse(format!("{e}")))?;
        p_y1[pattern as usize] = lit(
            cells[N_INPUT_BITS + 1]
                .trim()
                .parse::<f64>()
                .map_err(|e| DatagenError::Parse(format!("{e}")))?,
        );
        seen += 1;
    }
    if seen != N_PATTERNS {
        return Err(DatagenError::Parse(format!("expected {N_PATTERNS} rows, got {seen}")));
    }
    let n_orbits = orbit_id.iter().map(|&o| o as usize).max().unwrap_or(0) + 1;
    let mut orbit_sizes = vec![0usize; n_orbits];
    for &o in &orbit_id {
        orbit_sizes[o as usize] += 1;
    }
    Ok((
        PatternSet { patterns: (0..N_PATTERNS as u16).collect(), orbit_id, n_orbits, orbit_sizes },
        RuleDistribution { p_y1_given_x: p_y1, gain: F::zero(), threshold: F::zero() },
    ))
}

/// Parameters that fully determine a Gaussian task (the JSON schema).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianTaskParams {
    pub dim_x: usize,
    pub dim_y: usize,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub spectrum: Vec<f64>,
    pub seed: u64,
}

impl Default for GaussianTaskParams {
    fn default() -> Self {
        // |X| = 30, |Y| = 1
        Self { dim_x: 30, dim_y: 1, sigma_x: 1.0, sigma_y: 1.0, spectrum: vec![1.0], seed: 0 }
    }
}

/// Jointly Gaussian (x, y): x = σ_x ε, y = σ_y ε' + A x, with A built from a
/// prescribed singular spectrum.
#[derive(Debug, Clone)]
pub struct JointGaussianTask<F> {
    pub params: GaussianTaskParams,
    pub mixing: Matrix<F>,
    pub cov_x: Matrix<F>,
    pub cov_y: Matrix<F>,
    /// Σ_xy, dim_x × dim_y.
    pub cov_xy: Matrix<F>,
}

impl<F: Real> JointGaussianTask<F> {
    pub fn generate(params: GaussianTaskParams) -> Result<Self, DatagenError> {
        if params.dim_x < 1 || params.dim_y < 1 || params.sigma_x <= 0.0 || params.sigma_y <= 0.0 {
            return Err(DatagenError::BadTaskParams);
        }
        let rank_max = params.dim_x.min(params.dim_y);
        if params.spectrum.len() > rank_max {
            return Err(DatagenError::BadSpectrum { got: params.spectrum.len(), max: rank_max });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(0x6a09_e667));
        let k = params.spectrum.len();
        let mut draw_frame = |rows: usize, cols: usize| -> Matrix<F> {
            if rows == 0 {
                return Matrix::zeros(0, cols);
            }
            let raw = Matrix::from_fn(rows, cols, |_, _| {
                lit::<F>(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            });
            orthonormalize_rows(&raw)
        };
        let v = draw_frame(k, params.dim_x); // right singular vectors (rows)
        let u = if params.dim_y == 1 && k == 1 {
            Matrix::from_vec(1, 1, vec![F::one()])
        } else {
            draw_frame(k, params.dim_y)
        };
        let mut mixing = Matrix::zeros(params.dim_y, params.dim_x);
        for (i, &s) in params.spectrum.iter().enumerate() {
            let si = lit::<F>(s);
            for r in 0..params.dim_y {
                for c in 0..params.dim_x {
                    mixing[(r, c)] += si * u[(i, r)] * v[(i, c)];
                }
            }
        }
        let sx2 = lit::<F>(params.sigma_x * params.sigma_x);
        let sy2 = lit::<F>(params.sigma_y * params.sigma_y);
        let cov_x = Matrix::identity(params.dim_x).scale(sx2);
        // Σ_y = σ_y² I + A Σ_x Aᵀ
        let cov_y = Matrix::identity(params.dim_y)
            .scale(sy2)
            .add(&mixing.matmul(&cov_x).matmul(&mixing.transpose()));
        // Σ_xy = Σ_x Aᵀ
        let cov_xy = cov_x.matmul(&mixing.transpose());
        Ok(Self { params, mixing, cov_x, cov_y, cov_xy })
    }

    /// Max deviation of the covariance blocks from their construction
    /// identities (should sit at roundoff).
    pub fn covariance_identity_error(&self) -> F {
        let sy2 = lit::<F>(self.params.sigma_y * self.params.sigma_y);
        let want_y = Matrix::identity(self.params.dim_y)
            .scale(sy2)
            .add(&self.mixing.matmul(&self.cov_x).matmul(&self.mixing.transpose()));
        let want_xy = self.cov_x.matmul(&self.mixing.transpose());
        self.cov_y.sub(&want_y).max_abs().max(self.cov_xy.sub(&want_xy).max_abs())
    }

    /// Draws one (x, y) pair.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<F>, Vec<F>) {
        let sx = lit::<F>(self.params.sigma_x);
        let sy = lit::<F>(self.params.sigma_y);
        let x: Vec<F> = (0..self.params.dim_x)
            .map(|_| {
                sx * lit::<F>(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            })
            .collect();
        let mut y = self.mixing.matvec(&x);
        for v in &mut y {
            *v +=
                sy * lit::<F>(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
        }
        (x, y)
    }

    pub fn to_json(&self) -> Result<String, DatagenError> {
        Ok(serde_json::to_string_pretty(&self.params)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DatagenError> {
        Self::generate(serde_json::from_str(text)?)
    }
}

/// Closed-form I(X;Y) in bits: ½ Σ log2(1 + σ_x² s_i² / σ_y²).
pub fn analytic_mi_gaussian<F: Real>(task: &JointGaussianTask<F>) -> F {
    let sx2 = task.params.sigma_x * task.params.sigma_x;
    let sy2 = task.params.sigma_y * task.params.sigma_y;
    let half = lit::<F>(0.5);
    task.params.spectrum.iter().map(|&s| half * lit::<F>(1.0 + sx2 * s * s / sy2).log2()).sum()
}

/// Eigenvalues of Σ_{x|y} Σ_xx⁻¹, ascending and clipped to [0, 1]; the
/// spectrum governing the Gaussian bottleneck trade-off.
#[derive(Debug, Clone)]
pub struct GibSpectrum<F> {
    pub eigenvalues: Vec<F>,
}

pub fn gib_spectrum<F: Real>(task: &JointGaussianTask<F>) -> Result<GibSpectrum<F>, DatagenError> {
    let ex = task.cov_x.sym_eigen().map_err(|_| DatagenError::SingularCovariance)?;
    let floor = lit::<F>(1e-12) * ex.max_eigenvalue().max(F::one());
    if ex.min_eigenvalue() <= floor {
        return Err(DatagenError::SingularCovariance);
    }
    let inv_sqrt_x = ex.spectral_map(|l| F::one() / l.sqrt());
    let ey = task.cov_y.sym_eigen().map_err(|_| DatagenError::SingularCovariance)?;
    if ey.min_eigenvalue() <= F::zero() {
        return Err(DatagenError::SingularCovariance);
    }
    let inv_y = ey.spectral_map(|l| F::one() / l);
    // M = Σ_x^{-1/2} Σ_xy Σ_yy^{-1} Σ_yx Σ_x^{-1/2}: symmetric, similar to
    // Σ_xy Σ_yy^{-1} Σ_yx Σ_xx^{-1}
    let m = inv_sqrt_x
        .matmul(&task.cov_xy)
        .matmul(&inv_y)
        .matmul(&task.cov_xy.transpose())
        .matmul(&inv_sqrt_x)
        .symmetrized();
    let em = m.sym_eigen().map_err(|_| DatagenError::SingularCovariance)?;
    let mut eigenvalues: Vec<F> =
        em.values.iter().map(|&mu| (F::one() - mu).max(F::zero()).min(F::one())).collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(GibSpectrum { eigenvalues })
}
