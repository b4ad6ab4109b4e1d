//! Experiment driver: config files in, CSV/JSON metrics and SVG figures out.

pub mod config;
pub mod output;
pub mod run;
pub mod svg;

pub use config::{ConfigError, ExperimentConfig, Method};
pub use run::{run_grid, run_ntk_analysis, run_training, GridReport, NtkReport, RunOverrides, TrainReport};

use coordnorm_core::Error;

// Training allocates activation-sized buffers every step; the system
// allocator returns them to the OS and faults them back in each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SIZE_CAP: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_CONSISTENCY: i32 = 5;

/// Process exit status for an error anywhere in a run.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
                Error::SizeCap { .. } => EXIT_SIZE_CAP,
                Error::Divergence(_) => EXIT_DIVERGENCE,
                Error::Consistency(_) => EXIT_CONSISTENCY,
                _ => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}

impl ExperimentConfig {
    /// Replace every seed in the config: the network seed and both seed lists.
    pub fn override_seed(&mut self, seed: u64) {
        self.network.seed = seed;
        self.analysis.seeds = vec![seed];
        self.grid.seeds = vec![seed];
    }
}
