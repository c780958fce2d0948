//! Survival analysis by reduction to Poisson regression.
//!
//! The crate turns censored, left-truncated and competing-risks time-to-event
//! data into piece-wise exponential data (PED): one row per subject, interval
//! and transition, with an event label and the time under risk as exposure.
//! Any learner that minimizes a Poisson negative log-likelihood with a
//! per-row offset can then estimate hazards on the augmented rows. A
//! second-order gradient-boosted-trees learner is built in, alongside
//! Kaplan-Meier and piece-wise exponential GLM baselines, IPCW
//! Brier/concordance evaluation, synthetic data generators and a benchmark
//! harness.
//!
//! Pipeline sketch:
//!
//! ```text
//! SurvivalDataset --transform--> PedDataset --fit--> BoostedEnsemble
//!        |                                              |
//!        +--- km_fit / glm_fit (baselines)              +--> hazards -> S(t), F_k(t)
//!                                                               |
//!                                              IPCW Brier / IBS / C-index
//! ```

pub mod baselines;
pub mod boost;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod ped;
pub mod predict;
pub mod survdata;
pub mod synth;

pub use error::{Error, Result};
pub use ped::{CutPoints, CutStrategy, PedDataset, PedRow};
pub use predict::{CifCurve, HazardModel, SurvivalCurve};
pub use survdata::{FeatureKind, FeatureSchema, SubjectSpan, SurvivalDataset};
