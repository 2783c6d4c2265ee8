use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::style_vector::StyleVector;

/// Indices into the photo and drawing sets plus one style code per photo.
#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedBatch {
    pub photos: Vec<usize>,
    pub drawings: Vec<usize>,
    pub styles: Vec<StyleVector>,
}

/// Per-step RNG: a pure function of `(seed, step)`, so batch composition does
/// not depend on how loading is scheduled.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Draws photos and drawings independently. Each photo gets a style code
/// picked from the empirical pool of drawing style codes.
pub fn sample_unpaired_batch(
    n_photos: usize,
    n_drawings: usize,
    style_pool: &[StyleVector],
    batch: usize,
    seed: u64,
    step: u64,
) -> Result<UnpairedBatch> {
    if n_photos == 0 || n_drawings == 0 {
        return Err(Error::Validation(
            "both photo and drawing domains must be non-empty".into(),
        ));
    }
    if style_pool.is_empty() {
        return Err(Error::Validation("style pool is empty".into()));
    }
    let mut rng = step_rng(seed, step);
    let photos = (0..batch).map(|_| rng.random_range(0..n_photos)).collect();
    let drawings = (0..batch).map(|_| rng.random_range(0..n_drawings)).collect();
    let styles = (0..batch)
        .map(|_| style_pool[rng.random_range(0..style_pool.len())])
        .collect();
    Ok(UnpairedBatch {
        photos,
        drawings,
        styles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> Vec<StyleVector> {
        (0..3).map(StyleVector::basis).collect()
    }

    #[test]
    fn deterministic_under_seed() {
        let a = sample_unpaired_batch(10, 7, &pool(), 4, 9, 3).unwrap();
        let b = sample_unpaired_batch(10, 7, &pool(), 4, 9, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_unpaired_batch(10, 7, &pool(), 4, 9, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batch_of_one() {
        let b = sample_unpaired_batch(5, 5, &pool(), 1, 0, 0).unwrap();
        assert_eq!((b.photos.len(), b.drawings.len(), b.styles.len()), (1, 1, 1));
        assert!(pool().contains(&b.styles[0]));
    }

    #[test]
    fn degenerate_pool() {
        let pool = [StyleVector::basis(0)];
        for step in 0..50 {
            let b = sample_unpaired_batch(3, 3, &pool, 3, 1, step).unwrap();
            assert!(b.styles.iter().all(|s| s.values() == [1.0, 0.0, 0.0]));
        }
    }

    #[test]
    fn empty_domain_is_error() {
        assert!(sample_unpaired_batch(0, 3, &pool(), 1, 0, 0).is_err());
        assert!(sample_unpaired_batch(3, 0, &pool(), 1, 0, 0).is_err());
    }
}
