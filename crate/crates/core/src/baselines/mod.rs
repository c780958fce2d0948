//! Reference estimators: the Kaplan-Meier product-limit curve and a
//! piece-wise exponential proportional-hazards Poisson GLM.

mod glm;
mod km;

pub use glm::{glm_fit, GlmBlock, GlmConvergence, PemGlm};
pub use km::{km_censoring, km_fit, KmCurve};
