//! c-optimal experimental design search for generalised linear mixed models
//! with correlated observations.

pub mod covariance;
pub mod design;
pub mod duplicates;
pub mod error;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod problem;
pub mod rank1;
pub mod rounding;
pub mod search;
pub mod space;

pub use covariance::{CovarianceKind, CovarianceSpec, Location, ObservationMeta};
pub use design::Design;
pub use error::{Error, Result};
pub use model::{Family, FamilyLink, Link, MeanModel};
pub use objective::{c_objective, CVector, Objective};
pub use problem::{ModelClass, ModelInstance, ModelSpec, Problem};
pub use rounding::{best_rounded_design, round_weights, RoundingMethod, RoundingReport, WeightedDesign};
pub use search::{multi_start, Algorithm, SearchConfig, SearchOutcome, SearchReport};
pub use space::{spatial_lattice, stepped_wedge, ClusterTrial, DesignSpace, ExperimentalUnit, Granularity, UnitId};
