//! File formats, configuration and the pipeline stages behind the `pcct`
//! command.

pub mod calibration_file;
pub mod config;
pub mod container;
pub mod pipeline;
pub mod preview;

pub use calibration_file::{read_calibration, write_calibration};
pub use config::{PipelineConfig, Setup};
pub use container::{decode, encode, read_array, write_array, ArrayContainer};
pub use pipeline::{
    cmd_calibrate, cmd_decompose, cmd_evaluate, cmd_pipeline, cmd_reconstruct, cmd_simulate, Method, StageReport,
};
pub use preview::{window_to_u8, write_png};
