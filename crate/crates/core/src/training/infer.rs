use std::path::Path;

use crate::data::MaterialRecord;
use crate::error::Result;
use crate::loss::{error_metrics, ErrorMetrics};
use crate::models::EFSPrediction;

use super::checkpoint::Checkpoint;

/// One forward pass of a checkpointed model, with errors against the
/// material's own labels.
pub fn infer(
    ckpt: &Checkpoint,
    material: &MaterialRecord,
) -> Result<(EFSPrediction, ErrorMetrics)> {
    let model = ckpt.to_model()?;
    let pred = model.predict(material)?;
    let metrics = error_metrics(&pred, material)?;
    Ok((pred, metrics))
}

/// [`infer`] on a checkpoint file.
pub fn infer_file(
    path: impl AsRef<Path>,
    material: &MaterialRecord,
) -> Result<(EFSPrediction, ErrorMetrics)> {
    infer(&Checkpoint::load(path)?, material)
}
