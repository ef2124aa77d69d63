pub mod gram;
pub mod hum;
pub mod lr;
pub mod moment;
pub mod pipeline;
pub mod signal;
pub mod transport;

pub use gram::{Family, GRAM_COND_LIMIT};
pub use signal::{ControlPiece, ControlSignal, KernelMode, SpatialWeight, TimeWeight};
