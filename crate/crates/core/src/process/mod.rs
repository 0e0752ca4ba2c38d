//! Forward noising, score oracles, reverse-time samplers, and likelihoods.

mod mixture;
mod ode;
mod score;
mod sde;

pub use mixture::GaussianMixture;
pub use ode::{ode_nll, ode_sample, Divergence, NllConfig, NllReport, OdeConfig, OdeMethod};
pub use score::{conditional_score, forward_sample, GaussianScore, ScoreFunction};
pub use sde::{reverse_sde_sample, reverse_sde_segment, SdeConfig};
