use std::path::Path;

use super::{ArchDescriptor, Network};
use crate::{container, Error, Result};

/// Writes `N2NCKPT1`, the descriptor text, the parameter count and the raw
/// little-endian `f32` parameters.
pub fn save_checkpoint(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    container::write(path.as_ref(), &net.descriptor().to_string(), net.params())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let (descriptor, params) = container::read(path.as_ref())?;
    let descriptor: ArchDescriptor = descriptor.parse()?;
    let expected = descriptor.parameter_count();
    if params.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{descriptor} has {expected} parameters, checkpoint holds {}",
            params.len()
        )));
    }
    Network::with_params(descriptor, params)
}
