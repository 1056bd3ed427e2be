//! Exact finite-alphabet probability objects and the information measures
//! built on them. All information values are reported in bits.

use crate::linalg::Matrix;
use crate::scalar::{lit, Real};
use std::path::Path;
use thiserror::Error;

/// Inputs whose total mass is within this distance of 1 are renormalized.
const RENORM_TOL: f64 = 1e-9;
/// After normalization, mass must match 1 to this tolerance.
const VALID_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ProbError {
    #[error("negative probability {value} at index {index}")]
    Negative { index: usize, value: f64 },
    #[error("mass {sum} is not 1 within tolerance")]
    NotNormalized { sum: f64 },
    #[error("empty distribution")]
    Empty,
    #[error("support size mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("absolute continuity violated: q is 0 but p is {p} at index {index}")]
    AbsoluteContinuity { index: usize, p: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse: {0}")]
    Parse(String),
}

fn validate_mass<F: Real>(entries: &mut [F], what_sum: F) -> Result<(), ProbError> {
    let sum_f64 = what_sum.to_f64().unwrap_or(f64::NAN);
    if (sum_f64 - 1.0).abs() > RENORM_TOL {
        return Err(ProbError::NotNormalized { sum: sum_f64 });
    }
    if (sum_f64 - 1.0).abs() > VALID_TOL {
        for e in entries.iter_mut() {
            *e /= what_sum;
        }
    }
    Ok(())
}

fn check_nonnegative<F: Real>(entries: &mut [F]) -> Result<(), ProbError> {
    for (i, e) in entries.iter_mut().enumerate() {
        if *e < F::zero() {
            // Tiny negative roundoff is clamped; anything larger is rejected.
            if *e < -lit::<F>(VALID_TOL) {
                return Err(ProbError::Negative { index: i, value: e.to_f64().unwrap_or(f64::NAN) });
            }
            *e = F::zero();
        }
    }
    Ok(())
}

/// Probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution<F> {
    probs: Vec<F>,
}

impl<F: Real> DiscreteDistribution<F> {
    pub fn new(mut probs: Vec<F>) -> Result<Self, ProbError> {
        if probs.is_empty() {
            return Err(ProbError::Empty);
        }
        check_nonnegative(&mut probs)?;
        let sum: F = probs.iter().copied().sum();
        validate_mass(&mut probs, sum)?;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1);
        Self { probs: vec![F::one() / lit::<F>(n as f64); n] }
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        assert!(at < n);
        let mut probs = vec![F::zero(); n];
        probs[at] = F::one();
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> F {
        self.probs[i]
    }
}

/// Joint probability table p(x, y), rows indexed by x.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution<F> {
    table: Matrix<F>,
}

impl<F: Real> JointDistribution<F> {
    pub fn new(mut table: Matrix<F>) -> Result<Self, ProbError> {
        if table.rows() == 0 || table.cols() == 0 {
            return Err(ProbError::Empty);
        }
        check_nonnegative(table.data_mut())?;
        let sum: F = table.data().iter().copied().sum();
        validate_mass(table.data_mut(), sum)?;
        Ok(Self { table })
    }

    /// Builds p(x,y) = p(x) p(y|x).
    pub fn from_prior_and_channel(
        prior: &DiscreteDistribution<F>,
        channel: &ConditionalDistribution<F>,
    ) -> Result<Self, ProbError> {
        if prior.len() != channel.n_inputs() {
            return Err(ProbError::DimensionMismatch(format!(
                "prior support {} vs channel inputs {}",
                prior.len(),
                channel.n_inputs()
            )));
        }
        let table = Matrix::from_fn(prior.len(), channel.n_outputs(), |x, y| {
            prior.get(x) * channel.prob(x, y)
        });
        Self::new(table)
    }

    pub fn n_x(&self) -> usize {
        self.table.rows()
    }

    pub fn n_y(&self) -> usize {
        self.table.cols()
    }

    pub fn table(&self) -> &Matrix<F> {
        &self.table
    }

    pub fn prob(&self, x: usize, y: usize) -> F {
        self.table[(x, y)]
    }

    /// Marginal over rows: p(x). Cells are accumulated in column order.
    pub fn marginal_x(&self) -> DiscreteDistribution<F> {
        let probs = (0..self.n_x())
            .map(|i| {
                let mut s = F::zero();
                for j in 0..self.n_y() {
                    s += self.table[(i, j)];
                }
                s
            })
            .collect();
        DiscreteDistribution { probs }
    }

    /// Marginal over columns: p(y). Cells are accumulated in row order.
    pub fn marginal_y(&self) -> DiscreteDistribution<F> {
        let mut probs = vec![F::zero(); self.n_y()];
        for i in 0..self.n_x() {
            for (j, p) in probs.iter_mut().enumerate() {
                *p += self.table[(i, j)];
            }
        }
        DiscreteDistribution { probs }
    }

    /// Conditional rows p(y|x). Rows of x with zero mass become uniform and
    /// are reported in the returned mask.
    pub fn conditional_y_given_x(&self) -> (ConditionalDistribution<F>, Vec<bool>) {
        let px = self.marginal_x();
        let mut zero_mass = vec![false; self.n_x()];
        let rows = Matrix::from_fn(self.n_x(), self.n_y(), |x, y| {
            if px.get(x) > F::zero() {
                self.table[(x, y)] / px.get(x)
            } else {
                F::one() / lit::<F>(self.n_y() as f64)
            }
        });
        for (x, flag) in zero_mass.iter_mut().enumerate() {
            *flag = px.get(x) == F::zero();
        }
        (ConditionalDistribution { rows }, zero_mass)
    }

    pub fn swap_axes(&self) -> Self {
        Self { table: self.table.transpose() }
    }

    /// Writes the table as plain CSV: row = x index, column = y index.
    pub fn write_csv(&self, path: &Path) -> Result<(), ProbError> {
        let mut out = String::new();
        for i in 0..self.n_x() {
            let row: Vec<String> =
                self.table.row(i).iter().map(|p| format!("{}", p.to_f64().unwrap())).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, ProbError> {
        let text = std::fs::read_to_string(path)?;
        let mut rows: Vec<Vec<F>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<F>, _> = line
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map(lit::<F>)
                        .map_err(|e| ProbError::Parse(format!("line {}: {e}", lineno + 1)))
                })
                .collect();
            rows.push(row?);
        }
        if rows.is_empty() {
            return Err(ProbError::Empty);
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ProbError::Parse("ragged rows".into()));
        }
        Self::new(Matrix::from_rows(&rows))
    }
}

/// Row-stochastic matrix: row x is a distribution over the output alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDistribution<F> {
    rows: Matrix<F>,
}

impl<F: Real> ConditionalDistribution<F> {
    pub fn new(mut rows: Matrix<F>) -> Result<Self, ProbError> {
        if rows.rows() == 0 || rows.cols() == 0 {
            return Err(ProbError::Empty);
        }
        check_nonnegative(rows.data_mut())?;
        for i in 0..rows.rows() {
            let sum: F = rows.row(i).iter().copied().sum();
            validate_mass(rows.row_mut(i), sum)?;
        }
        Ok(Self { rows })
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: Matrix::identity(n) }
    }

    pub fn n_inputs(&self) -> usize {
        self.rows.rows()
    }

    pub fn n_outputs(&self) -> usize {
        self.rows.cols()
    }

    pub fn prob(&self, input: usize, output: usize) -> F {
        self.rows[(input, output)]
    }

    pub fn row(&self, input: usize) -> &[F] {
        self.rows.row(input)
    }

    pub fn matrix(&self) -> &Matrix<F> {
        &self.rows
    }

    /// Row as a distribution (for measure functions needing one).
    pub fn row_distribution(&self, input: usize) -> DiscreteDistribution<F> {
        DiscreteDistribution { probs: self.rows.row(input).to_vec() }
    }

    /// Composition: (p(y|x), p(z|y)) -> p(z|x).
    pub fn compose(&self, next: &ConditionalDistribution<F>) -> Result<Self, ProbError> {
        if self.n_outputs() != next.n_inputs() {
            return Err(ProbError::DimensionMismatch(format!(
                "{} outputs vs {} inputs",
                self.n_outputs(),
                next.n_inputs()
            )));
        }
        Ok(Self { rows: self.rows.matmul(&next.rows) })
    }
}

/// Shannon entropy in bits: `H = -Σ p log2 p` with `0 log 0 = 0`.
pub fn entropy<F: Real>(p: &DiscreteDistribution<F>) -> F {
    let mut h = F::zero();
    for &pi in p.probs() {
        if pi > F::zero() {
            h -= pi * pi.log2();
        }
    }
    h
}

/// KL divergence in bits. Requires q(i) > 0 wherever p(i) > 0.
pub fn kl_divergence<F: Real>(
    p: &DiscreteDistribution<F>,
    q: &DiscreteDistribution<F>,
) -> Result<F, ProbError> {
    if p.len() != q.len() {
        return Err(ProbError::LengthMismatch(p.len(), q.len()));
    }
    kl_divergence_slices(p.probs(), q.probs())
}

/// KL over raw probability slices; shared by the IB iteration inner loop
/// where building distribution objects per row would be wasteful.
pub fn kl_divergence_slices<F: Real>(p: &[F], q: &[F]) -> Result<F, ProbError> {
    let mut d = F::zero();
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > F::zero() {
            if qi <= F::zero() {
                return Err(ProbError::AbsoluteContinuity {
                    index: i,
                    p: pi.to_f64().unwrap_or(f64::NAN),
                });
            }
            d += pi * (pi / qi).log2();
        }
    }
    Ok(d.max(F::zero()))
}

/// Mutual information in bits: `I = Σ p(x,y) log2 p(x,y)/(p(x)p(y))`.
///
/// The cell loop runs row-major and the marginals accumulate in a fixed
/// order; the binned layer-MI estimator mirrors this exact summation so the
/// two agree bit-for-bit (its sparse path is checked against a naive dense
/// enumeration in the acceptance suite).
pub fn mutual_information<F: Real>(j: &JointDistribution<F>) -> F {
    let px = j.marginal_x();
    let py = j.marginal_y();
    let mut mi = F::zero();
    for x in 0..j.n_x() {
        for y in 0..j.n_y() {
            let p = j.prob(x, y);
            if p > F::zero() {
                mi += p * (p / (px.get(x) * py.get(y))).log2();
            }
        }
    }
    mi
}

/// L1 distance between two distributions.
pub fn variation_distance<F: Real>(
    p: &DiscreteDistribution<F>,
    q: &DiscreteDistribution<F>,
) -> Result<F, ProbError> {
    if p.len() != q.len() {
        return Err(ProbError::LengthMismatch(p.len(), q.len()));
    }
    Ok(p.probs().iter().zip(q.probs()).map(|(&a, &b)| (a - b).abs()).sum())
}

/// Result of [`bayes_invert`].
#[derive(Debug, Clone)]
pub struct BayesInverse<F> {
    /// Posterior p(x|t); rows for unreachable t fall back to the prior.
    pub posterior: ConditionalDistribution<F>,
    /// Marginal p(t) = Σ_x p(t|x) p(x).
    pub marginal: DiscreteDistribution<F>,
    /// Outputs t with p(t) = 0.
    pub unreachable: Vec<bool>,
}

/// Bayes inversion of a channel: from p(x) and p(t|x), returns p(x|t) and
/// p(t). Zero-mass outputs are flagged rather than erroring.
pub fn bayes_invert<F: Real>(
    prior: &DiscreteDistribution<F>,
    channel: &ConditionalDistribution<F>,
) -> Result<BayesInverse<F>, ProbError> {
    if prior.len() != channel.n_inputs() {
        return Err(ProbError::DimensionMismatch(format!(
            "prior support {} vs channel inputs {}",
            prior.len(),
            channel.n_inputs()
        )));
    }
    let n_x = prior.len();
    let n_t = channel.n_outputs();
    let mut marginal = vec![F::zero(); n_t];
    for x in 0..n_x {
        let px = prior.get(x);
        for (t, m) in marginal.iter_mut().enumerate() {
            *m += channel.prob(x, t) * px;
        }
    }
    let unreachable: Vec<bool> = marginal.iter().map(|&m| m == F::zero()).collect();
    let posterior = Matrix::from_fn(n_t, n_x, |t, x| {
        if unreachable[t] {
            prior.get(x)
        } else {
            channel.prob(x, t) * prior.get(x) / marginal[t]
        }
    });
    Ok(BayesInverse {
        posterior: ConditionalDistribution { rows: posterior },
        marginal: DiscreteDistribution { probs: marginal },
    unreachable,
    })
}

/// Conditional entropy H(Y|X) in bits from a joint table.
pub fn conditional_entropy_y_given_x<F: Real>(j: &JointDistribution<F>) -> F {
    let px = j.marginal_x();
    let mut h = F::zero();
    for x in 0..j.n_x() {
        for y in 0..j.n_y() {
            let p = j.prob(x, y);
            if p > F::zero() {
                h -= p * (p / px.get(x)).log2();
            }
        }
    }
    h
}
