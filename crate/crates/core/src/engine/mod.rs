//! Discrete-event core: integer-microsecond clock, `(time, seq)` ordered event
//! queue, named seeded random streams and the run loop.

mod queue;
mod rng;
mod sim;
mod time;

pub use queue::{Event, EventId, EventQueue, QueueError};
pub use rng::RngStream;
pub use sim::{run, EventKind, RunOptions, RunOutput, RunTrace, SimError, TraceRecord};
pub use time::SimTime;
