//! Information-theoretic analysis of neural-network training.
//!
//! The crate bundles the machinery needed to study small networks in the
//! information plane: exact finite-alphabet information measures, a discrete
//! Information Bottleneck solver, synthetic benchmark tasks, an instrumented
//! SGD trainer, binned layer-MI estimation with phase detection, Gaussian
//! compression bounds, generalization-bound calculators, and closed-form
//! NTK/NNGP ensemble quantities.
//!
//! All numeric modules are generic over the scalar type through
//! [`scalar::Real`] (any `num-traits` float works); the aliases below fix
//! `f64`, which every shipped tool uses.

pub mod bounds;
pub mod datagen;
pub mod diffusion;
pub mod ib;
pub mod infoplane;
pub mod linalg;
pub mod net;
pub mod ntk;
pub mod prob;
pub mod scalar;

/// Default scalar for the shipped binaries and tests.
pub type Scalar = f64;

pub type Dist = prob::DiscreteDistribution<Scalar>;
pub type Joint = prob::JointDistribution<Scalar>;
pub type Channel = prob::ConditionalDistribution<Scalar>;
pub type Mat = linalg::Matrix<Scalar>;
pub type IbProblem = ib::IbProblem<Scalar>;
pub type IbSolution = ib::IbSolution<Scalar>;
pub type InfoCurve = ib::InfoCurve<Scalar>;
