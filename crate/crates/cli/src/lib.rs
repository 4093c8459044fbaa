//! Library side of the `prior3d` binary: config handling and the commands.

pub mod commands;
pub mod config;
pub mod plot;

pub use commands::*;
pub use config::RunConfig;
pub use plot::{cmd_plot, panels_from_csv, render_svg, Panel, Series};
