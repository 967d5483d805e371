//! Plant, attack and trajectory types, plus the observability code.

mod attack;
mod code;
mod system;
mod trajectory;

pub use attack::{generate_attacks, generate_attacks_with, AttackPolicy, AttackSequence, DEFAULT_ATTACK_AMPLITUDE};
pub use code::{build_observability, stack_observability, ObservabilityCode};
pub use system::{LtiSystem, SystemDoc};
#[allow(unused_imports)]
pub(crate) use trajectory::NoiseSource;
pub use trajectory::{simulate, simulate_driven, Trajectory};
