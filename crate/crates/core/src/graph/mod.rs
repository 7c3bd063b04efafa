//! Corridor graph structure: the static topology, per-minute weighted
//! snapshots and the stacked lookback windows fed to the model.

mod snapshot;
mod topology;
mod window;

pub use snapshot::{build_snapshot, edge_weight, GraphSnapshot, DEFAULT_SPEED_FLOOR_MPH};
pub use topology::{load_topology, parse_topology, CorridorTopology, Edge, Heading};
pub use window::{stack_window, window_count, MultiGraphWindow};
