pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod algebra;
pub mod classify;
pub mod coarea;
pub mod config;
pub mod group;
pub mod linalg;
pub mod maps;
pub mod measures;
pub mod metrics;
pub mod omega;
pub mod poly;
pub mod quadrature;
pub mod report;

pub use algebra::{BracketEntry, GradedNilpotentAlgebra, ValidationReport};
pub use classify::{Census, PointClass, PointKind};
pub use coarea::{CoareaSettings, VerificationReport};
pub use config::{load_config, parse_config, RunConfig};
pub use group::{BchTable, CarnotGroup, GroupPoint};
pub use maps::{DifferentialPair, PolynomialContactMap};
pub use measures::{AsymptoticFit, ConventionMode, MeasureConvention};
pub use metrics::Box2Ball;
pub use omega::Normalization;
