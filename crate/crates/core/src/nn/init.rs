use rand::Rng;
use rand_distr::StandardNormal;

use crate::tensor::Float;

/// He-normal samples with `std = sqrt(2 / fan)`.
pub fn kaiming_normal<T: Float, R: Rng>(rng: &mut R, n: usize, fan: usize) -> Vec<T> {
    let std = (2.0 / fan as f64).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::cast(z * std)
        })
        .collect()
}
