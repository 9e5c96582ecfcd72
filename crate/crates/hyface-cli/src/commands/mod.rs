//! One module per subcommand. Each `run` returns the [`RunManifest`]
//! describing what it read and wrote; the caller persists it.

pub mod cluster;
pub mod edit;
pub mod eval;
pub mod gen_data;
pub mod reconstruct;
pub mod train;
