use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shuffles `items` with `seed` and cuts off `round(n · fraction)` of them
/// for validation. At least one item always stays in the training part.
pub fn split_dataset<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val =
        ((items.len() as f64 * fraction).round() as usize).min(items.len().saturating_sub(1));
    let n_train = items.len() - n_val;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventy_thirty() {
        let items: Vec<u32> = (0..10).collect();
        let (t, v) = split_dataset(&items, 0.3, 7).unwrap();
        assert_eq!((t.len(), v.len()), (7, 3));
        let mut all: Vec<u32> = t.iter().chain(&v).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split_dataset(&items, 0.3, 7).unwrap(), (t, v));
    }

    #[test]
    fn keeps_one_training_item() {
        assert_eq!(split_dataset(&[1], 0.3, 0).unwrap(), (vec![1], vec![]));
        let (t, v) = split_dataset(&[1, 2], 0.9, 0).unwrap();
        assert_eq!((t.len(), v.len()), (1, 1));
        assert_eq!(split_dataset::<u8>(&[], 0.3, 0).unwrap(), (vec![], vec![]));
    }

    #[test]
    fn rejects_bad_fraction() {
        for f in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(split_dataset(&[1, 2, 3], f, 0).is_err());
        }
    }
}
