//! Causal estimation of a salary gap from observational records: regression,
//! propensity-score matching and weighting, honest causal forests, balance
//! diagnostics and omitted-variable sensitivity, plus a seeded simulator.

pub mod balance;
pub mod data;
pub mod design;
pub mod error;
pub mod estimation;
pub mod estimators;
pub mod forest;
pub mod pipeline;
pub mod propensity;
pub mod report;
pub mod sensitivity;
pub mod simulate;

pub use data::{load_dataset, Dataset, Field, UnitRecord};
pub use error::{Error, Result};
pub use estimators::{EffectEstimate, Estimand, MatchResult, Method};
pub use report::{beta_to_gap_percent, unadjusted_gap};
pub use simulate::{generate, DgpSpec, Truth};
