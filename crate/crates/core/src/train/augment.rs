use distilnas_tensor::Tensor;
use rand::Rng;

use crate::error::{Error, Result};

/// Multiplies each image of `[B, ...]` by its own factor drawn uniformly
/// from `range` and clamps to `[0, 1]`. The result is a constant tensor.
pub fn brightness_augment(batch: &Tensor, range: (f32, f32), rng: &mut impl Rng) -> Result<Tensor> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::Config(format!("brightness range {range:?} must be positive and ordered")));
    }
    let b = batch.shape()[0];
    let per = batch.numel() / b;
    let mut data = batch.to_vec();
    for img in data.chunks_mut(per) {
        let f = rng.random_range(lo..=hi);
        img.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
    }
    Ok(Tensor::from_vec(batch.shape(), data)?)
}
