//! File formats, cost reports and the `gip` command-line driver for
//! [`gip_core`].

pub mod cli;
pub mod error;
pub mod model;
pub mod report;
pub mod tensor_io;
pub mod toy;

pub use error::{CliError, Result};
pub use model::{load_model, save_model};
pub use tensor_io::{read_feature_map, read_tensor, write_tensor, Dtype, RawTensor};
