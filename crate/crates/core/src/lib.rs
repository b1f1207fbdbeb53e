//! Deterministic federated-learning simulator.
//!
//! Two families of round protocols share one engine:
//!
//! * **FedOpt**: every cohort client runs a fixed number of local steps, the
//!   server averages the drifts into a pseudo-gradient and applies a
//!   server-side optimizer (SGD, SGDM, Adam, AdamW, AdaGrad).
//! * **FDA-Opt**: clients keep training while the cohort's model variance,
//!   estimated from AMS sketches of the drifts, stays below a threshold that
//!   recalibrates itself after every round.
//!
//! Models are desk-scale (multinomial logistic regression and a one-hidden-layer
//! MLP) and data is synthetic or CSV, partitioned across clients by a
//! Dirichlet label skew.

pub mod data;
pub mod engine;
pub mod error;
pub mod exec;
pub mod harness;
pub mod model;
pub mod optim;
pub mod param;
pub mod rng;
pub mod sketch;
pub mod variance;

pub use error::{Error, Result};
pub use param::ParamVector;
