//! Secure state estimation for linear time-invariant plants whose sensors are
//! corrupted by sparse attacks with a time-varying support.

pub mod conditions;
pub mod decoder;
pub mod design;
pub mod error;
pub mod harness;
pub mod kalman;
pub mod l1solve;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod uav;

pub use error::{Error, Result};
pub use scalar::Real;

pub type LtiSystem64 = model::LtiSystem<f64>;
pub type LtiSystem32 = model::LtiSystem<f32>;
pub type ObservabilityCode64 = model::ObservabilityCode<f64>;
pub type ObservabilityCode32 = model::ObservabilityCode<f32>;
pub type AttackSequence64 = model::AttackSequence<f64>;
pub type Trajectory64 = model::Trajectory<f64>;
pub type DecodeResult64 = decoder::DecodeResult<f64>;
pub type SupportProfile64 = conditions::SupportProfile<f64>;
pub type DesignReport64 = design::DesignReport<f64>;
pub type KalmanState64 = kalman::KalmanState<f64>;
pub type CombinedEstimator64 = kalman::CombinedEstimator<f64>;
pub type SuccessRateTable = harness::SuccessRateTable;
