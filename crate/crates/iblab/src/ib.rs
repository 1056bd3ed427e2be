//! Discrete Information Bottleneck: the self-consistent update, fixed-β
//! solving with restarts, β sweeps tracing the information curve, and
//! fitting the β* at which a trained layer is closest to IB-optimal.
//!
//! The encoder exponent `exp(-β·KL)` uses natural-log KL; reported
//! information coordinates are in bits, so the curve slope dI_Y/dI_X is 1/β
//! in matching units.

use crate::linalg::Matrix;
use crate::prob::{
    bayes_invert, ConditionalDistribution, DiscreteDistribution, JointDistribution, ProbError,
};
use crate::scalar::{lit, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IbError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("beta grid is empty")]
    EmptyGrid,
    #[error("betas must be nonnegative and ascending")]
    BadBetaGrid,
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// An IB instance: a joint p(x,y) and the representation cardinality |T|.
#[derive(Debug, Clone)]
pub struct IbProblem<F> {
    joint: JointDistribution<F>,
    cardinality_t: usize,
    p_x: DiscreteDistribution<F>,
    p_y: DiscreteDistribution<F>,
    /// Rows p(y|x); zero-mass x rows are uniform placeholders.
    p_y_given_x: ConditionalDistribution<F>,
    i_xy: F,
}

impl<F: Real> IbProblem<F> {
    /// `cardinality_t = None` defaults |T| to |X|, which never loses
    /// expressiveness at the optimum.
    pub fn new(joint: JointDistribution<F>, cardinality_t: Option<usize>) -> Result<Self, IbError> {
        let cardinality_t = cardinality_t.unwrap_or(joint.n_x());
        if cardinality_t < 1 {
            return Err(IbError::DimensionMismatch("|T| must be >= 1".into()));
        }
        let p_x = joint.marginal_x();
        let p_y = joint.marginal_y();
        let (p_y_given_x, _) = joint.conditional_y_given_x();
        let i_xy = crate::prob::mutual_information(&joint);
        Ok(Self { joint, cardinality_t, p_x, p_y, p_y_given_x, i_xy })
    }

    pub fn joint(&self) -> &JointDistribution<F> {
        &self.joint
    }

    pub fn cardinality_t(&self) -> usize {
        self.cardinality_t
    }

    pub fn n_x(&self) -> usize {
        self.joint.n_x()
    }

    pub fn n_y(&self) -> usize {
        self.joint.n_y()
    }

    pub fn p_x(&self) -> &DiscreteDistribution<F> {
        &self.p_x
    }

    pub fn p_y(&self) -> &DiscreteDistribution<F> {
        &self.p_y
    }

    pub fn p_y_given_x(&self) -> &ConditionalDistribution<F> {
        &self.p_y_given_x
    }

    /// I(X;Y) of the instance, the ceiling for any i_y.
    pub fn i_xy(&self) -> F {
        self.i_xy
    }
}

/// Encoder/decoder/marginal triple at a given β with its information-plane
/// coordinates.
#[derive(Debug, Clone)]
pub struct IbSolution<F> {
    pub beta: F,
    /// p(t|x), |X| rows over |T|.
    pub encoder: ConditionalDistribution<F>,
    /// p(y|t), |T| rows over |Y|.
    pub decoder: ConditionalDistribution<F>,
    /// p(t).
    pub marginal_t: DiscreteDistribution<F>,
    /// I(X;T) in bits.
    pub i_x: F,
    /// I(T;Y) in bits.
    pub i_y: F,
    /// I(X;T) - β·I(T;Y) in bits.
    pub functional: F,
    pub iterations: usize,
    pub converged: bool,
}

impl<F: Real> IbSolution<F> {
    /// Number of effectively distinct representation symbols: t's carrying
    /// mass above `mass_tol`, grouped by decoder rows within `row_tol` L1.
    /// Below the first bifurcation every live t shares one decoder row, so
    /// this counts the solution's cluster structure rather than raw support.
    pub fn effective_cardinality(&self, mass_tol: F, row_tol: F) -> usize {
        let mut reps: Vec<&[F]> = Vec::new();
        for t in 0..self.decoder.n_inputs() {
            if self.marginal_t.get(t) <= mass_tol {
                continue;
            }
            let row = self.decoder.row(t);
            let known = reps.iter().any(|r| {
                r.iter().zip(row).map(|(&a, &b)| (a - b).abs()).sum::<F>() < row_tol
            });
            if !known {
                reps.push(row);
            }
        }
        reps.len()
    }
}

/// Natural-log KL between a p(y|x) row and a decoder row; +∞ encodes a
/// support violation (the corresponding encoder weight becomes exactly 0).
fn kl_nats_row<F: Real>(p: &[F], q: &[F]) -> F {
    let mut d = F::zero();
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > F::zero() {
            if qi <= F::zero() {
                return F::infinity();
            }
            d += pi * (pi / qi).ln();
        }
    }
    d.max(F::zero())
}

fn mi_encoder_bits<F: Real>(p_x: &DiscreteDistribution<F>, encoder: &Matrix<F>, p_t: &[F]) -> F {
    let mut i = F::zero();
    for x in 0..encoder.rows() {
        let px = p_x.get(x);
        if px == F::zero() {
            continue;
        }
        for (t, &pt) in p_t.iter().enumerate() {
            let e = encoder[(x, t)];
            if e > F::zero() && pt > F::zero() {
                i += px * e * (e / pt).log2();
            }
        }
    }
    i.max(F::zero())
}

fn mi_decoder_bits<F: Real>(p_t: &[F], decoder: &Matrix<F>, p_y: &DiscreteDistribution<F>) -> F {
    let mut i = F::zero();
    for (t, &pt) in p_t.iter().enumerate() {
        if pt == F::zero() {
            continue;
        }
        for y in 0..decoder.cols() {
            let d = decoder[(t, y)];
            if d > F::zero() && p_y.get(y) > F::zero() {
                i += pt * d * (d / p_y.get(y)).log2();
            }
        }
    }
    i.max(F::zero())
}

/// Assembles a solution from an encoder by running the marginal and decoder
/// updates, then scoring the information coordinates.
fn solution_from_encoder<F: Real>(
    problem: &IbProblem<F>,
    beta: F,
    encoder: Matrix<F>,
    prev_decoder: Option<&Matrix<F>>,
    iterations: usize,
    converged: bool,
) -> IbSolution<F> {
    let n_x = problem.n_x();
    let n_t = problem.cardinality_t();
    let n_y = problem.n_y();
    // (ii) marginal update
    let mut p_t = vec![F::zero(); n_t];
    for x in 0..n_x {
        let px = problem.p_x.get(x);
        for (t, pt) in p_t.iter_mut().enumerate() {
            *pt += encoder[(x, t)] * px;
        }
    }
    // (iii) decoder update: p(y|t) = Σ_x p(y|x) p(x|t)
    let mut decoder = Matrix::zeros(n_t, n_y);
    for t in 0..n_t {
        if p_t[t] > F::zero() {
            for x in 0..n_x {
                let post = encoder[(x, t)] * problem.p_x.get(x) / p_t[t];
                if post == F::zero() {
                    continue;
                }
                for y in 0..n_y {
                    decoder[(t, y)] += problem.p_y_given_x.prob(x, y) * post;
                }
            }
        } else if let Some(prev) = prev_decoder {
            // Dead t keeps its previous decoder row; it carries no mass.
            for y in 0..n_y {
                decoder[(t, y)] = prev[(t, y)];
            }
        } else {
            for y in 0..n_y {
                decoder[(t, y)] = problem.p_y.get(y);
            }
        }
    }
    let i_x = mi_encoder_bits(&problem.p_x, &encoder, &p_t);
    let i_y = mi_decoder_bits(&p_t, &decoder, &problem.p_y);
    let functional = i_x - beta * i_y;
    IbSolution {
        beta,
        encoder: ConditionalDistribution::new(encoder).expect("encoder rows normalized"),
        decoder: ConditionalDistribution::new(decoder).expect("decoder rows normalized"),
        marginal_t: DiscreteDistribution::new(p_t).expect("marginal normalized"),
        i_x,
        i_y,
        functional,
        iterations,
        converged,
    }
}

/// One synchronous pass of the three self-consistent updates: (i) encoder
/// from the current decoder/marginal, (ii) marginal, (iii) decoder. The
/// encoder update runs in the log domain with per-row max subtraction, so
/// large β never underflows an entire row.
pub fn ib_iterate<F: Real>(
    problem: &IbProblem<F>,
    state: &IbSolution<F>,
) -> Result<IbSolution<F>, IbError> {
    let n_x = problem.n_x();
    let n_t = problem.cardinality_t();
    if state.encoder.n_inputs() != n_x
        || state.encoder.n_outputs() != n_t
        || state.decoder.n_inputs() != n_t
        || state.decoder.n_outputs() != problem.n_y()
    {
        return Err(IbError::DimensionMismatch(format!(
            "state is {}x{} -> {}x{}, problem wants {}x{} -> {}x{}",
            state.encoder.n_inputs(),
            state.encoder.n_outputs(),
            state.decoder.n_inputs(),
            state.decoder.n_outputs(),
            n_x,
            n_t,
            n_t,
            problem.n_y()
        )));
    }
    let mut encoder = Matrix::zeros(n_x, n_t);
    let mut log_w = vec![F::neg_infinity(); n_t];
    for x in 0..n_x {
        let pyx = problem.p_y_given_x.row(x);
        let mut max_lw = F::neg_infinity();
        for (t, lw_slot) in log_w.iter_mut().enumerate() {
            let pt = state.marginal_t.get(t);
            let lw = if pt > F::zero() {
                pt.ln() - state.beta * kl_nats_row(pyx, state.decoder.row(t))
            } else {
                F::neg_infinity()
            };
            *lw_slot = lw;
            max_lw = max_lw.max(lw);
        }
        debug_assert!(max_lw > F::neg_infinity(), "all encoder weights vanished");
        let mut z = F::zero();
        for t in 0..n_t {
            let w = (log_w[t] - max_lw).exp();
            encoder[(x, t)] = w;
            z += w;
        }
        for t in 0..n_t {
            encoder[(x, t)] /= z;
        }
    }
    Ok(solution_from_encoder(
        problem,
        state.beta,
        encoder,
        Some(state.decoder.matrix()),
        state.iterations + 1,
        state.converged,
    ))
}

/// How to seed the encoder before iterating.
#[derive(Debug, Clone)]
pub enum IbInit<F> {
    /// Random row-stochastic encoder from the given seed.
    Seed(u64),
    /// Start from an explicit encoder (used for warm starts).
    Encoder(ConditionalDistribution<F>),
}

fn random_encoder<F: Real>(n_x: usize, n_t: usize, seed: u64) -> Matrix<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(n_x, n_t);
    for x in 0..n_x {
        let mut z = F::zero();
        for t in 0..n_t {
            let w = lit::<F>(rng.gen_range(0.05..1.0));
            m[(x, t)] = w;
            z += w;
        }
        for t in 0..n_t {
            m[(x, t)] /= z;
        }
    }
    m
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// Iterates the IB updates at fixed β until the functional moves less than
/// `tol` or `max_iter` is hit (then `converged` is false, not an error).
pub fn solve_ib<F: Real>(
    problem: &IbProblem<F>,
    beta: F,
    init: IbInit<F>,
    tol: F,
    max_iter: usize,
) -> Result<IbSolution<F>, IbError> {
    let encoder = match init {
        IbInit::Seed(seed) => random_encoder(problem.n_x(), problem.cardinality_t(), seed),
        IbInit::Encoder(enc) => {
            if enc.n_inputs() != problem.n_x() || enc.n_outputs() != problem.cardinality_t() {
                return Err(IbError::DimensionMismatch(format!(
                    "init encoder {}x{}, problem wants {}x{}",
                    enc.n_inputs(),
                    enc.n_outputs(),
                    problem.n_x(),
                    problem.cardinality_t()
                )));
            }
            enc.matrix().clone()
        }
    };
    let mut state = solution_from_encoder(problem, beta, encoder, None, 0, false);
    for _ in 0..max_iter {
        let next = ib_iterate(problem, &state)?;
        let delta = (state.functional - next.functional).abs();
        state = next;
        if delta < tol {
            state.converged = true;
            return Ok(state);
        }
    }
    state.converged = false;
    Ok(state)
}

/// One point of a swept information curve.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint<F> {
    pub beta: F,
    pub i_x: F,
    pub i_y: F,
    pub converged: bool,
}

/// The (β, I_X, I_Y) frontier traced by a β sweep, ascending in β.
#[derive(Debug, Clone)]
pub struct InfoCurve<F> {
    pub points: Vec<CurvePoint<F>>,
}

impl<F: Real> InfoCurve<F> {
    /// Largest decrease of i_x or i_y along ascending β (0 for a clean
    /// monotone curve; compare against 1e-6 bits).
    pub fn max_monotonicity_violation(&self) -> F {
        let mut worst = F::zero();
        for w in self.points.windows(2) {
            worst = worst.max(w[0].i_x - w[1].i_x).max(w[0].i_y - w[1].i_y);
        }
        worst
    }

    /// Largest amount an interior point falls below the chord of its
    /// neighbours in (i_x, i_y) coordinates; ~0 for a concave curve.
    pub fn max_concavity_violation(&self) -> F {
        let mut worst = F::zero();
        for w in self.points.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            let span = c.i_x - a.i_x;
            if span <= lit(1e-9) {
                continue;
            }
            let frac = (b.i_x - a.i_x) / span;
            let chord = a.i_y + frac * (c.i_y - a.i_y);
            worst = worst.max(chord - b.i_y);
        }
        worst
    }

    /// Finite-difference slopes dI_Y/dI_X between consecutive points with a
    /// non-negligible ΔI_X, paired with the geometric-mean β of the segment.
    pub fn interior_slopes(&self, min_dix: F) -> Vec<(F, F)> {
        let mut out = Vec::new();
        for w in self.points.windows(2) {
            let dix = w[1].i_x - w[0].i_x;
            if dix.abs() < min_dix {
                continue;
            }
            let diy = w[1].i_y - w[0].i_y;
            let beta_mid = (w[0].beta * w[1].beta).sqrt();
            out.push((beta_mid, diy / dix));
        }
        out
    }

    /// Linear interpolation of the curve's i_y at a given i_x (clamped to
    /// the swept range).
    pub fn i_y_at(&self, i_x: F) -> F {
        if self.points.is_empty() {
            return F::zero();
        }
        if i_x <= self.points[0].i_x {
            return self.points[0].i_y;
        }
        for w in self.points.windows(2) {
            if i_x <= w[1].i_x {
                let span = w[1].i_x - w[0].i_x;
                if span <= F::zero() {
                    return w[1].i_y;
                }
                let frac = (i_x - w[0].i_x) / span;
                return w[0].i_y + frac * (w[1].i_y - w[0].i_y);
            }
        }
        self.points.last().unwrap().i_y
    }

    /// CSV export: `beta,i_x_bits,i_y_bits,converged`.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        let mut out = String::from("beta,i_x_bits,i_y_bits,converged\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.beta.to_f64().unwrap(),
                p.i_x.to_f64().unwrap(),
                p.i_y.to_f64().unwrap(),
                p.converged
            ));
        }
        std::fs::write(path, out)
    }
}

/// Sweeps β ascending, keeping the best of a warm start from the previous β
/// plus `restarts` random initializations per point (restarts run in
/// parallel; the winner is chosen deterministically).
pub fn sweep_info_curve<F: Real>(
    problem: &IbProblem<F>,
    betas: &[F],
    restarts: usize,
    seed: u64,
) -> Result<InfoCurve<F>, IbError> {
    if betas.is_empty() {
        return Err(IbError::EmptyGrid);
    }
    if betas.windows(2).any(|w| w[0] > w[1]) || betas[0] < F::zero() {
        return Err(IbError::BadBetaGrid);
    }
    let tol = lit::<F>(DEFAULT_TOL);
    let mut points = Vec::with_capacity(betas.len());
    let mut warm: Option<ConditionalDistribution<F>> = None;
    for (bi, &beta) in betas.iter().enumerate() {
        let mut candidates: Vec<IbSolution<F>> = (0..restarts)
            .into_par_iter()
            .map(|r| {
                let s = seed
                    .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add((bi as u64) << 20)
                    .wrapping_add(r as u64);
                solve_ib(problem, beta, IbInit::Seed(s), tol, DEFAULT_MAX_ITER)
            })
            .collect::<Result<_, _>>()?;
        if let Some(enc) = warm.take() {
            candidates.push(solve_ib(problem, beta, IbInit::Encoder(enc), tol, DEFAULT_MAX_ITER)?);
        }
        let best = candidates
            .into_iter()
            .min_by(|a, b| a.functional.partial_cmp(&b.functional).unwrap())
            .expect("at least one candidate");
        points.push(CurvePoint { beta, i_x: best.i_x, i_y: best.i_y, converged: best.converged });
        warm = Some(best.encoder);
    }
    Ok(InfoCurve { points })
}

/// Fits the β at which a trained layer's encoder is closest (in average KL)
/// to the IB-optimal encoder rebuilt from the layer's own decoder.
///
/// Returns `(beta_star, kl_at_star_bits)`; grid ties break toward smaller β.
pub fn fit_beta_star<F: Real>(
    layer_encoder: &ConditionalDistribution<F>,
    layer_decoder: &ConditionalDistribution<F>,
    problem: &IbProblem<F>,
    beta_grid: &[F],
) -> Result<(F, F), IbError> {
    if beta_grid.is_empty() {
        return Err(IbError::EmptyGrid);
    }
    let n_x = problem.n_x();
    let n_t = layer_encoder.n_outputs();
    if layer_encoder.n_inputs() != n_x
        || layer_decoder.n_inputs() != n_t
        || layer_decoder.n_outputs() != problem.n_y()
    {
        return Err(IbError::DimensionMismatch(format!(
            "layer encoder {}x{}, decoder {}x{}, problem {}x{}",
            layer_encoder.n_inputs(),
            layer_encoder.n_outputs(),
            layer_decoder.n_inputs(),
            layer_decoder.n_outputs(),
            n_x,
            problem.n_y()
        )));
    }
    // p(t) implied by the layer's own encoder.
    let inv = bayes_invert(problem.p_x(), layer_encoder)?;
    let p_t = inv.marginal;
    // Cache ln p(t) and the per-(x,t) KL once; the grid scan reuses them.
    let ln_pt: Vec<F> = p_t
        .probs()
        .iter()
        .map(|&p| if p > F::zero() { p.ln() } else { F::neg_infinity() })
        .collect();
    let mut kl_xt = Matrix::zeros(n_x, n_t);
    for x in 0..n_x {
        let pyx = problem.p_y_given_x.row(x);
        for t in 0..n_t {
            kl_xt[(x, t)] = kl_nats_row(pyx, layer_decoder.row(t));
        }
    }
    let ln2 = crate::scalar::ln2::<F>();
    let mut best: Option<(F, F)> = None;
    for &beta in beta_grid {
        let mut score = F::zero();
        let mut log_w = vec![F::neg_infinity(); n_t];
        for x in 0..n_x {
            let px = problem.p_x.get(x);
            if px == F::zero() {
                continue;
            }
            let mut max_lw = F::neg_infinity();
            for (t, lw_slot) in log_w.iter_mut().enumerate() {
                let lw = if ln_pt[t].is_finite() {
                    ln_pt[t] - beta * kl_xt[(x, t)]
                } else {
                    F::neg_infinity()
                };
                *lw_slot = lw;
                max_lw = max_lw.max(lw);
            }
            let mut z = F::zero();
            for &lw in &log_w {
                if lw.is_finite() {
                    z += (lw - max_lw).exp();
                }
            }
            let log_z = max_lw + z.ln();
            // KL[layer_enc(.|x) || ib_enc(.|x)] in nats, converted below
            let mut kl = F::zero();
            for t in 0..n_t {
                let e = layer_encoder.prob(x, t);
                if e > F::zero() {
                    kl += e * (e.ln() - (log_w[t] - log_z));
                }
            }
            score += px * kl / ln2;
        }
        // Near-ties (within noise) keep the earlier, smaller β.
        let improves = match best {
            Some((_, s)) => score < s - (lit::<F>(1e-12)).max(lit::<F>(1e-9) * s),
            None => true,
        };
        if improves {
            best = Some((beta, score));
        }
    }
    Ok(best.expect("grid nonempty"))
}

/// Geometric β grid helper: `n` points from `lo` to `hi` inclusive.
pub fn geometric_betas<F: Real>(lo: F, hi: F, n: usize) -> Vec<F> {
    assert!(n >= 2 && lo > F::zero() && hi > lo);
    let ratio = (hi / lo).powf(F::one() / lit::<F>((n - 1) as f64));
    (0..n).map(|i| lo * ratio.powi(i as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_joint(n_x: usize, n_y: usize, rng: &mut ChaCha8Rng) -> JointDistribution<f64> {
        let mut rows = Vec::with_capacity(n_x);
        for _ in 0..n_x {
            rows.push((0..n_y).map(|_| rng.gen_range(0.01..1.0)).collect::<Vec<f64>>());
        }
        let total: f64 = rows.iter().flatten().sum();
        for row in &mut rows {
            for v in row {
                *v /= total;
            }
        }
        JointDistribution::new(Matrix::from_rows(&rows)).unwrap()
    }

    #[test]
    fn beta_zero_collapses_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let problem = IbProblem::new(random_joint(6, 3, &mut rng), None).unwrap();
        let sol = solve_ib(&problem, 0.0, IbInit::Seed(1), 1e-10, 2000).unwrap();
        assert!(sol.converged);
        assert!(sol.i_x.abs() < 1e-9, "i_x = {}", sol.i_x);
        assert!(sol.i_y.abs() < 1e-9, "i_y = {}", sol.i_y);
        for x in 0..problem.n_x() {
            for t in 0..problem.cardinality_t() {
                assert!((sol.encoder.prob(x, t) - sol.marginal_t.get(t)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn large_beta_reaches_sufficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let problem = IbProblem::new(random_joint(8, 4, &mut rng), None).unwrap();
        // |T| = |X|: the identity encoder is sufficient, and at β=1e4 the
        // iteration keeps it so (a cold random start at such β freezes into
        // whatever clustering the first hard assignment produces)
        let sol = solve_ib(
            &problem,
            1e4,
            IbInit::Encoder(ConditionalDistribution::identity(8)),
            1e-12,
            5000,
        )
        .unwrap();
        assert!((sol.i_y - problem.i_xy()).abs() < 1e-3, "i_y={} i_xy={}", sol.i_y, problem.i_xy());
    }

    #[test]
    fn fixed_point_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let problem = IbProblem::new(random_joint(6, 3, &mut rng), None).unwrap();
        // β=0 with a uniform encoder is an exact fixed point
        let uniform = ConditionalDistribution::new(Matrix::from_fn(6, 6, |_, _| 1.0 / 6.0)).unwrap();
        let state = solution_from_encoder(&problem, 0.0, uniform.matrix().clone(), None, 0, true);
        let next = ib_iterate(&problem, &state).unwrap();
        assert!((next.functional - state.functional).abs() < 1e-12);
        for x in 0..6 {
            for t in 0..6 {
                assert!((next.encoder.prob(x, t) - state.encoder.prob(x, t)).abs() < 1e-12);
            }
        }
        // a converged solution moves the functional by less than 1e-12
        let sol = solve_ib(&problem, 3.0, IbInit::Seed(2), 1e-14, 5000).unwrap();
        let next = ib_iterate(&problem, &sol).unwrap();
        assert!((next.functional - sol.functional).abs() < 1e-12);
    }

    #[test]
    fn functional_non_increasing_over_seeded_starts() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..100u64 {
            let problem = IbProblem::new(random_joint(8, 4, &mut rng), None).unwrap();
            let encoder = random_encoder::<f64>(8, 8, 1000 + trial);
            let mut state = solution_from_encoder(&problem, 5.0, encoder, None, 0, false);
            for _ in 0..60 {
                let next = ib_iterate(&problem, &state).unwrap();
                assert!(
                    next.functional <= state.functional + 1e-12,
                    "trial {trial}: {} -> {}",
                    state.functional,
                    next.functional
                );
                state = next;
            }
        }
    }

    #[test]
    fn consistency_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let problem = IbProblem::new(random_joint(10, 4, &mut rng), None).unwrap();
        let sol = solve_ib(&problem, 8.0, IbInit::Seed(7), 1e-13, 5000).unwrap();
        // re-derive decoder from encoder via Bayes; per-row L1 drift < 1e-8
        let inv = bayes_invert(problem.p_x(), &sol.encoder).unwrap();
        for t in 0..problem.cardinality_t() {
            if sol.marginal_t.get(t) < 1e-12 {
                continue;
            }
            let mut rederived = vec![0.0; problem.n_y()];
            for x in 0..problem.n_x() {
                for (y, r) in rederived.iter_mut().enumerate() {
                    *r += problem.p_y_given_x().prob(x, y) * inv.posterior.prob(t, x);
                }
            }
            let l1: f64 =
                rederived.iter().zip(sol.decoder.row(t)).map(|(a, b)| (a - b).abs()).sum();
            assert!(l1 < 1e-8, "t={t} l1={l1}");
            assert!((inv.marginal.get(t) - sol.marginal_t.get(t)).abs() < 1e-10);
        }
    }

    /// Straightforward reference IB solver: plain-domain updates, no log
    /// tricks, no warm starts. Kept independent of the production path.
    fn naive_ib(
        joint: &JointDistribution<f64>,
        n_t: usize,
        beta: f64,
        seed: u64,
        iters: usize,
    ) -> f64 {
        let n_x = joint.n_x();
        let n_y = joint.n_y();
        let p_x = joint.marginal_x();
        let p_y = joint.marginal_y();
        let (pyx, _) = joint.conditional_y_given_x();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = vec![vec![0.0f64; n_t]; n_x];
        for row in &mut enc {
            let mut z = 0.0;
            for w in row.iter_mut() {
                *w = rng.gen_range(0.05..1.0);
                z += *w;
            }
            for w in row.iter_mut() {
                *w /= z;
            }
        }
        let mut pt = vec![0.0f64; n_t];
        let mut dec = vec![vec![0.0f64; n_y]; n_t];
        let update_pt_dec = |enc: &Vec<Vec<f64>>, pt: &mut Vec<f64>, dec: &mut Vec<Vec<f64>>| {
            for t in 0..n_t {
                pt[t] = (0..n_x).map(|x| enc[x][t] * p_x.get(x)).sum();
                for y in 0..n_y {
                    dec[t][y] = if pt[t] > 0.0 {
                        (0..n_x).map(|x| pyx.prob(x, y) * enc[x][t] * p_x.get(x) / pt[t]).sum()
                    } else {
                        p_y.get(y)
                    };
                }
            }
        };
        update_pt_dec(&enc, &mut pt, &mut dec);
        for _ in 0..iters {
            for x in 0..n_x {
                let mut z = 0.0;
                for t in 0..n_t {
                    let mut kl = 0.0;
                    for y in 0..n_y {
                        let p = pyx.prob(x, y);
                        if p > 0.0 {
                            kl += p * (p / dec[t][y]).ln();
                        }
                    }
                    enc[x][t] = pt[t] * (-beta * kl).exp();
                    z += enc[x][t];
                }
                for t in 0..n_t {
                    enc[x][t] /= z;
                }
            }
            update_pt_dec(&enc, &mut pt, &mut dec);
        }
        let mut i_x = 0.0;
        for x in 0..n_x {
            for t in 0..n_t {
                if enc[x][t] > 0.0 && pt[t] > 0.0 {
                    i_x += p_x.get(x) * enc[x][t] * (enc[x][t] / pt[t]).log2();
                }
            }
        }
        let mut i_y = 0.0;
        for t in 0..n_t {
            for y in 0..n_y {
                if pt[t] > 0.0 && dec[t][y] > 0.0 && p_y.get(y) > 0.0 {
                    i_y += pt[t] * dec[t][y] * (dec[t][y] / p_y.get(y)).log2();
                }
            }
        }
        i_x - beta * i_y
    }

    #[test]
    fn restart_oracle_16x4() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let joint = random_joint(16, 4, &mut rng);
        let problem = IbProblem::new(joint.clone(), None).unwrap();
        let best_naive =
            (0..20).map(|r| naive_ib(&joint, 16, 10.0, 500 + r, 3000)).fold(f64::INFINITY, f64::min);
        let ours = (0..20)
            .map(|r| {
                solve_ib(&problem, 10.0, IbInit::Seed(900 + r), 1e-12, 5000).unwrap().functional
            })
            .fold(f64::INFINITY, f64::min);
        assert!((ours - best_naive).abs() < 1e-6, "ours {ours} vs naive best {best_naive}");
    }

    #[test]
    fn sweep_single_beta_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let problem = IbProblem::new(random_joint(6, 3, &mut rng), None).unwrap();
        let curve = sweep_info_curve(&problem, &[0.0], 3, 1).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert!(curve.points[0].i_x.abs() < 1e-9);
        assert!(curve.points[0].i_y.abs() < 1e-9);
    }

    #[test]
    fn sweep_detects_cluster_bifurcation() {
        // two well-separated clusters of x: occupied |T| grows from 1 to 2+
        // somewhere along the β grid
        let mut rows = Vec::new();
        for x in 0..8 {
            let p_y1: f64 = if x < 4 { 0.9 } else { 0.1 };
            rows.push(vec![(1.0 - p_y1) / 8.0, p_y1 / 8.0]);
        }
        let joint = JointDistribution::new(Matrix::from_rows(&rows)).unwrap();
        let problem = IbProblem::new(joint, None).unwrap();
        let betas = geometric_betas(0.2, 40.0, 25);
        let mut occupied = Vec::new();
        let mut warm: Option<ConditionalDistribution<f64>> = None;
        for &b in &betas {
            let mut best = solve_ib(&problem, b, IbInit::Seed(77), 1e-12, 5000).unwrap();
            if let Some(enc) = warm.take() {
                let w = solve_ib(&problem, b, IbInit::Encoder(enc), 1e-12, 5000).unwrap();
                if w.functional < best.functional {
                    best = w;
                }
            }
            occupied.push(best.effective_cardinality(1e-6, 1e-4));
            warm = Some(best.encoder);
        }
        assert!(occupied.first().copied().unwrap() <= 1 || occupied[1] <= 1);
        assert!(occupied.last().copied().unwrap() >= 2, "occupied: {occupied:?}");
    }

    #[test]
    fn beta_star_planted_optimum() {
        // structured joint so the β=4 solution is informative, not trivial
        let spread = [0.95, 0.9, 0.8, 0.7, 0.3, 0.2, 0.1, 0.05];
        let rows: Vec<Vec<f64>> =
            spread.iter().map(|&p| vec![(1.0 - p) / 8.0, p / 8.0]).collect();
        let joint = JointDistribution::new(Matrix::from_rows(&rows)).unwrap();
        let problem = IbProblem::new(joint, None).unwrap();
        let betas = geometric_betas(1.0, 6.0, 12);
        let warm = sweep_info_curve(&problem, &betas, 4, 3).unwrap();
        assert!(warm.points.last().unwrap().i_x > 0.05, "planted solution must be informative");
        // re-solve at exactly β=4 starting from scratch with restarts
        let sol = (0..6)
            .map(|r| solve_ib(&problem, 4.0, IbInit::Seed(100 + r), 1e-14, 5000).unwrap())
            .min_by(|a, b| a.functional.partial_cmp(&b.functional).unwrap())
            .unwrap();
        assert!(sol.i_x > 0.05);
        let grid: Vec<f64> = (2..=16).map(|i| i as f64 * 0.5).collect(); // includes 4.0
        let (beta_star, kl) = fit_beta_star(&sol.encoder, &sol.decoder, &problem, &grid).unwrap();
        assert!((beta_star - 4.0).abs() < 1e-9, "beta_star {beta_star}");
        assert!(kl < 1e-6, "kl at star = {kl}");
    }

    #[test]
    fn beta_star_constant_encoder_prefers_small_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let problem = IbProblem::new(random_joint(6, 2, &mut rng), None).unwrap();
        // constant encoder: every x maps to the same distribution over T
        let enc =
            ConditionalDistribution::new(Matrix::from_fn(6, 4, |_, t| [0.4, 0.3, 0.2, 0.1][t]))
                .unwrap();
        let inv = bayes_invert(problem.p_x(), &enc).unwrap();
        let mut dec_rows = Vec::new();
        for t in 0..4 {
            let row: Vec<f64> = (0..2)
                .map(|y| {
                    (0..6)
                        .map(|x| problem.p_y_given_x().prob(x, y) * inv.posterior.prob(t, x))
                        .sum()
                })
                .collect();
            dec_rows.push(row);
        }
        let dec = ConditionalDistribution::new(Matrix::from_rows(&dec_rows)).unwrap();
        let grid: Vec<f64> = geometric_betas(0.1, 50.0, 30);
        let (beta_star, _) = fit_beta_star(&enc, &dec, &problem, &grid).unwrap();
        assert!((beta_star - grid[0]).abs() < 1e-12, "beta_star = {beta_star}");
    }
}
