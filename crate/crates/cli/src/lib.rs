//! The capture pipeline behind the `svbrdf` command: replicate generation,
//! render-error selection, relighting evaluation and contact sheets.

pub mod capture_io;
pub mod config;
pub mod data;
pub mod metrics;
pub mod replicates;
pub mod sheet;
pub mod sidecar;

pub use config::{PipelineConfig, Profile};
pub use metrics::{evaluate_relighting, hemisphere_lights, proxy_perceptual_error, EvalReport};
pub use replicates::{generate_replicates, select_by_render_error, select_by_scores, Replicate, ReplicateSet};
pub use sheet::contact_sheet;
