//! Stein kernels for locally dependent sums and combinatorial central limit
//! theorems, the smoothed functions used in Cramér-type moderate deviation
//! proofs, bound calculators, and Monte Carlo checks of all of them.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod bounds;
pub mod combperm;
pub mod config;
pub mod error;
pub mod gauss;
pub mod kernel;
pub mod law;
pub mod localdep;
pub mod mc;
pub mod model;
pub mod quadrature;
pub mod report;
pub mod smoothfun;
pub mod stein;
pub mod tailmc;

pub use bounds::{BoundEnvelope, GeneralParams, Theorem};
pub use combperm::{CellNoise, PermArrayModel, PermSample};
pub use config::{BuiltModel, ExperimentConfig, ResolvedBound};
pub use error::{Error, Result};
pub use kernel::{KernelFunction, WeightedAntiderivative};
pub use law::{DiscreteDistribution, Law};
pub use localdep::{Boundary, LatticeIndexSet, LocalFieldModel, MomentCertificate, NeighborhoodSystem};
pub use mc::{McPlan, McRng, MeanVar};
pub use model::{LinearForm, Realization, SteinModel};
pub use smoothfun::{SmoothedExp, SteinSolution, SteinTestFn};
pub use stein::{A1Estimates, A1Scan, CheckRecord, Mode, TestFunction};
pub use tailmc::{TailEstimate, TailMethod, TailRow};
