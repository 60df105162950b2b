//! Model-independent lower bounds on adversarial error.
//!
//! Given a labelled or unlabelled sample set, the estimator greedily carves a
//! union of balls that covers a target fraction of the training samples while
//! minimizing growth under ε-expansion, then regresses held-out adversarial
//! risk on held-out risk. Distances are either Euclidean or the trace distance
//! between amplitude- or angle-encoded quantum states.

pub mod attack;
pub mod bound;
pub mod classifier;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod index;
pub mod metric;
pub mod region;
pub mod report;
pub mod samples;

pub use attack::{evaluate_attack, AttackConfig, AttackSummary};
pub use bound::{estimate_bound, estimate_bound_from_distances, BoundConfig, BoundReport};
pub use classifier::{train_toy_classifier, DifferentiableClassifier, ToyClassifier, TrainConfig};
pub use dataset::{load_dataset, load_distances, DatasetFormat, DatasetSource, Normalize};
pub use error::{Error, Result};
pub use index::{DistanceMatrix, SortedDistanceIndex};
pub use metric::{MetricKind, MetricSpace};
pub use region::{fit_error_region, ErrorRegion};
pub use report::ReportDocument;
pub use samples::SampleSet;
