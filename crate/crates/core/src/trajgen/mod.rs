//! Camera trajectory synthesis in the UE5 frame: rotate-away/rotate-back loop
//! closures, composed action sequences, fixed-endpoint resampling and a
//! JSON-lines annotation format.

mod actions;
mod format;
mod loops;
mod record;
mod resample;

pub use actions::{
    gen_action_sequence, sample_action_trajectory, ActionKind, ActionSamplerConfig, ActionSegment,
    DEFAULT_EXPLORATION_RADIUS_CM, DEFAULT_ROLL_PROBABILITY,
};
pub use format::{parse_trajectory, read_trajectory, serialize_trajectory, write_trajectory, FORMAT_NAME};
pub use loops::{gen_loop_closure, AxisSet, LoopClosureSpec, SignPolicy, STANDARD_LOOP_ANGLES};
pub use record::{Fps, StartState, TrajectoryRecord, EULER_TOLERANCE_DEG};
pub use resample::resample_fixed_endpoints;
