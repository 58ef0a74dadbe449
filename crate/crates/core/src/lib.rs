//! Generative modeling of EV charging time-series with a denoising diffusion
//! model, plus the downstream tooling that makes the samples useful: corpus
//! ingestion from raw charging sessions, generation-quality metrics, and a
//! day-ahead charging-energy bidding optimizer driven by generated scenarios.
//!
//! The crate is organized around the life cycle of a scenario:
//!
//! * [`ingest`] turns raw session records into battery-level charging curves
//!   and station-level daily load profiles.
//! * [`schedule`] holds the closed-form forward/reverse diffusion math.
//! * [`network`] is the noise-prediction network (LSTM encoder, broadcast
//!   fusion, multi-head self-attention, per-step projection).
//! * [`engine`] trains the network and runs the iterative reverse-process
//!   sampler, unconditionally or conditioned on a station label.
//! * [`eval`] scores generated corpora (marginal / discriminative / tail
//!   scores, duration and rate densities, autocorrelation) and provides the
//!   shared k-means routine.
//! * [`bidding`] solves the day-ahead power-bid quadratic program over
//!   scenario-reduced demand.

pub mod bidding;
pub mod checkpoint;
pub mod engine;
pub mod eval;
pub mod ingest;
pub mod network;
pub mod schedule;
pub mod seed;

pub use engine::{normalize, denormalize, sample, train, training_loss, Normalization, ScenarioBatch, TrainConfig};
pub use network::{DenoiserModel, NetworkConfig};
pub use schedule::DiffusionSchedule;
