//! A userspace model of a VFS directory cache with three path lookup
//! strategies: the component-wise walk, a full-path-indexed cache, and a
//! two-stage lookup that starts from a cached popular path (a pivot).

pub mod engine;
pub mod epoch;
pub mod fullpath;
pub mod heat;
pub mod metrics;
pub mod path;
pub mod pivot;
pub mod vfs;
pub mod workload;

pub use engine::{Engine, EngineConfig, StageResult, Strategy};
pub use metrics::{Metrics, MetricsSnapshot};
pub use path::{PathError, VfsPath};
pub use pivot::{PivotPool, DEFAULT_COMPONENTS, DEFAULT_POOL_SIZE};
pub use vfs::{Credential, Kind, LookupError, Mode, NodeId, Tree, VfsError};
