//! Dynamic random environments as event-driven, piecewise-constant traces.

mod io;
mod sampler;
mod spec;
mod trace;

pub use io::{read_trace, write_events, TraceManifest, EVENT_HEADER};
pub use sampler::{center_field, empirical_mean, sample_centered, sample_env, MAX_PARTICLES};
pub use spec::{Centering, EnvModel, EnvModelSpec, MarkovChain, ZeroRangeLaw};
pub use trace::{dominates, EnvTrace, Event};
