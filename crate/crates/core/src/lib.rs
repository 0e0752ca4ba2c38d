//! Diffusion generative models with a freely chosen diagonal basis, Gaussian
//! prior covariance, and component-wise noise schedule.
//!
//! Data `phi` is mapped to components `chi = S^-1 U phi` ([`basis`]), each
//! component is noised by its own Ornstein-Uhlenbeck process whose state is
//! summarised by the noising state `gamma` ([`schedule`]), and generation runs
//! the reverse SDE or probability-flow ODE with an exact or learned score
//! ([`process`], [`score_net`]). Schedules range from standard diffusion
//! (identical `gamma` for every component) to fully autoregressive generation
//! (non-overlapping active intervals).

// `!(x > 0.0)` style guards are used to reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod container;
pub mod data;
pub mod error;
pub mod process;
pub mod rng;
pub mod schedule;
pub mod score_net;
pub mod tasks;

pub use basis::{BasisKind, BasisSpec, CovarianceEstimate, Shape};
pub use error::{GudError, Result};
pub use process::{GaussianMixture, GaussianScore, ScoreFunction};
pub use schedule::{NoisingState, Schedule, ScheduleConfig, ScheduleContext, ScheduleFamily};
