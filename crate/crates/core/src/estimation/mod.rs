//! Regression engines shared by every estimator.

mod linalg;
pub mod logistic;
pub mod ols;

pub use linalg::{expit, logit};
pub use logistic::{clamp_prob, fit_logistic, LogisticFit, LogisticOptions, PROB_CLAMP};
pub use ols::{fit_ols, OlsFit, OlsOptions, SeKind};
