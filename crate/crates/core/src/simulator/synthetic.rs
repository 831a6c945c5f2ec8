use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fmap::{FeatureTensor, Shape};
use crate::io::Population;

/// Gaussian stand-in for a layer dump: ID elements ~ N(0, 1), OOD elements
/// ~ N(shift, 1). Each population draws from its own ChaCha stream, so the
/// same seed gives independent ID and OOD sets.
pub fn synthetic_features(
    count: usize,
    shape: Shape,
    population: Population,
    shift: f64,
    seed: u64,
) -> Result<Vec<FeatureTensor>> {
    shape.validate()?;
    if count == 0 {
        return Err(Error::invalid("synthetic feature count must be >= 1"));
    }
    if !(shift.is_finite() && shift >= 0.0) {
        return Err(Error::invalid(format!("shift {shift} must be finite and >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = match population {
        Population::Id => {
            rng.set_stream(1);
            0.0
        }
        Population::Ood => {
            rng.set_stream(2);
            shift
        }
    };
    (0..count)
        .map(|_| {
            let data = (0..shape.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (mean + z) as f32
                })
                .collect();
            FeatureTensor::from_shape(shape, data)
        })
        .collect()
}
