use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::{argmax_rows, Network, WeightSource};

/// Percentage of `dataset` misclassified, evaluated in chunks of `chunk`
/// examples. Ties in the logits go to the lowest class index.
pub fn evaluate<T: Scalar>(network: &Network<T>, dataset: &Dataset, source: WeightSource, chunk: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let params = network.parameters(source);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut wrong = 0usize;
    for part in indices.chunks(chunk.max(1)) {
        let batch = dataset.batch::<T>(part);
        let logits = network.logits_with(&params, &batch.inputs)?;
        wrong += argmax_rows(&logits)
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p != l)
            .count();
    }
    Ok(100.0 * wrong as f64 / dataset.len() as f64)
}
