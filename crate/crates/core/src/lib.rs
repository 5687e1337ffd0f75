//! Method-of-moments parameter learning for bipartite noisy-or networks
//! with hidden parents.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod decomposer;
pub mod em;
pub mod error;
pub mod experiment;
pub mod identifiability;
pub mod learner;
pub mod model;
pub mod moments;
pub mod sampler;
pub mod scalar;
pub mod scheduler;

pub use decomposer::{decompose_222, noisyor_from_mixture, DecomposeError, DecomposeOptions};
pub use em::{em_best_of, em_fit, loglik_exact, EmOptions};
pub use error::{Error, Result};
pub use learner::{execute_schedule, l1_error, uniform_baseline, LearnerOptions};
pub use model::{NetworkStructure, ParamId};
pub use moments::{collect, collect_sharded, ExactMoments, MomentSource, StatRequest, StatStore};
pub use sampler::{draw_samples, random_parameters, GeneratorConfig, SampleBatch};
pub use scalar::Scalar;
pub use scheduler::{find_schedule, Schedule, SchedulerOptions};

pub type Parameters = model::NoisyOrParameters<f64>;
pub type Joint = model::JointTensor<f64>;
pub type Moments = model::NegativeMoments<f64>;
pub type Mixture = decomposer::MixtureResult<f64>;
pub type Report = learner::EstimationReport<f64>;
pub type Trace = em::EmTrace<f64>;
