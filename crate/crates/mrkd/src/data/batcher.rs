//! Deterministic epoch batching and batch assembly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{stream_seed, DataError};
use crate::autodiff::Tensor;
use crate::features::FeatureMap;

/// Split row ids into shuffled batches for one epoch. The permutation
/// is keyed by (seed, epoch) only, so any worker layout that replays
/// the same key sees the same batches. The final short batch is kept.
pub fn batches(
    ids: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u32,
) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::Parameter("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[u64::from(epoch)]));
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Stack per-clip feature maps into one `[N, C, T, F]` input tensor.
/// All maps must agree on shape and representation.
pub fn batch_tensor(maps: &[&FeatureMap]) -> Result<Tensor<f32>, DataError> {
    let first = maps
        .first()
        .ok_or_else(|| DataError::Parameter("cannot batch zero feature maps".into()))?;
    let (c, t, f) = (first.channels(), first.time(), first.freq());
    let mut data = Vec::with_capacity(maps.len() * c * t * f);
    for map in maps {
        if (map.channels(), map.time(), map.freq()) != (c, t, f) || map.tag != first.tag {
            return Err(DataError::Parameter(format!(
                "feature map {} is {}x{}x{} {}, expected {}x{}x{} {}",
                map.clip_id,
                map.channels(),
                map.time(),
                map.freq(),
                map.tag.name(),
                c,
                t,
                f,
                first.tag.name()
            )));
        }
        data.extend_from_slice(map.data());
    }
    Ok(Tensor::new(vec![maps.len(), c, t, f], data).expect("shape matches payload"))
}

/// One-hot `[N, n_classes]` targets from dense labels.
pub fn one_hot_targets(labels: &[usize], n_classes: usize) -> Result<Tensor<f32>, DataError> {
    if n_classes < 2 {
        return Err(DataError::Parameter(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    let mut data = vec![0.0f32; labels.len() * n_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(DataError::Parameter(format!(
                "label {label} out of range for {n_classes} classes"
            )));
        }
        data[i * n_classes + label] = 1.0;
    }
    Ok(Tensor::new(vec![labels.len(), n_classes], data).expect("shape matches payload"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RepresentationTag;
    use proptest::prelude::*;

    #[test]
    fn ten_ids_in_fours_give_batches_of_4_4_2() {
        let ids: Vec<usize> = (0..10).collect();
        let got = batches(&ids, 4, 42, 0).unwrap();
        let sizes: Vec<usize> = got.iter().map(Vec::len).collect();
        assert_eq!(sizes, [4, 4, 2]);
        let mut flat: Vec<usize> = got.into_iter().flatten().collect();
        flat.sort_unstable();
        assert_eq!(flat, ids);
    }

    #[test]
    fn order_is_keyed_by_seed_and_epoch() {
        let ids: Vec<usize> = (0..16).collect();
        let a = batches(&ids, 4, 7, 3).unwrap();
        assert_eq!(a, batches(&ids, 4, 7, 3).unwrap());
        assert_ne!(a, batches(&ids, 4, 7, 4).unwrap());
        assert_ne!(a, batches(&ids, 4, 8, 3).unwrap());
    }

    #[test]
    fn noncontiguous_ids_are_permuted_not_reindexed() {
        let ids = [5usize, 9, 12];
        let mut flat: Vec<usize> = batches(&ids, 2, 0, 0).unwrap().into_iter().flatten().collect();
        flat.sort_unstable();
        assert_eq!(flat, ids);
    }

    #[test]
    fn zero_batch_size_is_rejected_and_empty_ids_are_fine() {
        assert!(matches!(
            batches(&[1, 2], 0, 0, 0),
            Err(DataError::Parameter(_))
        ));
        assert!(batches(&[], 4, 0, 0).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn every_epoch_yields_a_partition(
            n in 0usize..60,
            batch_size in 1usize..70,
            seed in any::<u64>(),
            epoch in 0u32..1000,
        ) {
            let ids: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
            let got = batches(&ids, batch_size, seed, epoch).unwrap();
            for (i, batch) in got.iter().enumerate() {
                if i + 1 < got.len() {
                    prop_assert_eq!(batch.len(), batch_size);
                } else {
                    prop_assert!(batch.len() <= batch_size && !batch.is_empty());
                }
            }
            let mut flat: Vec<usize> = got.into_iter().flatten().collect();
            flat.sort_unstable();
            prop_assert_eq!(flat, ids);
        }
    }

    fn map_of(fill: f32, id: &str) -> FeatureMap {
        FeatureMap::new(
            vec![fill; 3 * 3 * 4],
            3,
            3,
            4,
            RepresentationTag::Mfcc,
            0.01,
            id,
        )
    }

    #[test]
    fn batch_tensor_stacks_in_order() {
        let a = map_of(1.0, "a");
        let b = map_of(2.0, "b");
        let t = batch_tensor(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 3, 4]);
        assert!(t.data()[..36].iter().all(|&v| v == 1.0));
        assert!(t.data()[36..].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn mismatched_maps_are_rejected_by_clip_id() {
        let a = map_of(1.0, "a");
        let b = FeatureMap::new(
            vec![0.0; 3 * 3 * 5],
            3,
            3,
            5,
            RepresentationTag::Mfcc,
            0.01,
            "odd-one",
        );
        let msg = batch_tensor(&[&a, &b]).unwrap_err().to_string();
        assert!(msg.contains("odd-one"), "{msg}");
    }

    #[test]
    fn one_hot_rows_select_their_label() {
        let t = one_hot_targets(&[1, 0], 3).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(one_hot_targets(&[3], 3).is_err());
        assert!(one_hot_targets(&[0], 1).is_err());
    }
}
