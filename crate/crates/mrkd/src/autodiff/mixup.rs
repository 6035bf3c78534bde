//! Mixup batch augmentation.
//!
//! One convex weight and one permutation are drawn per batch and shared
//! by every tensor mixed with them (inputs, targets, teacher rows), so
//! the pairing stays consistent across views of the same batch.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::tensor::{Element, Tensor};
use super::AutodiffError;

/// One batch's mixing decision: row i blends with row permutation[i]
/// at weight lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupDraw {
    pub lambda: f64,
    pub permutation: Vec<usize>,
}

impl MixupDraw {
    pub fn is_identity(&self) -> bool {
        self.lambda == 1.0
    }
}

/// Draw mixing weight and partner permutation for a batch. A degenerate
/// request (alpha <= 0 or fewer than 2 rows) yields the identity draw
/// rather than an error, so mixup can be disabled by configuration.
pub fn sample_mixup<R: Rng>(batch: usize, alpha: f64, rng: &mut R) -> MixupDraw {
    if batch < 2 || alpha <= 0.0 || !alpha.is_finite() {
        return MixupDraw {
            lambda: 1.0,
            permutation: (0..batch).collect(),
        };
    }
    let beta = Beta::new(alpha, alpha).expect("alpha is positive and finite");
    let lambda = beta.sample(rng);
    let mut permutation: Vec<usize> = (0..batch).collect();
    permutation.shuffle(rng);
    MixupDraw { lambda, permutation }
}

/// Blend rows of a batch-major tensor in place:
/// row[i] = lambda * row[i] + (1 - lambda) * row[permutation[i]].
/// A lambda of exactly 1 leaves the tensor bit-identical.
pub fn apply_mixup<E: Element>(
    tensor: &mut Tensor<E>,
    draw: &MixupDraw,
) -> Result<(), AutodiffError> {
    let batch = *tensor.shape().first().ok_or_else(|| AutodiffError::Shape {
        op: "mixup",
        detail: "scalar tensors have no batch axis".into(),
    })?;
    if batch != draw.permutation.len() {
        return Err(AutodiffError::Shape {
            op: "mixup",
            detail: format!(
                "tensor batch {batch} vs permutation of {}",
                draw.permutation.len()
            ),
        });
    }
    if draw.permutation.iter().any(|&p| p >= batch) {
        return Err(AutodiffError::Parameter(format!(
            "mixup permutation indexes outside the batch of {batch}"
        )));
    }
    if draw.is_identity() || batch == 0 {
        return Ok(());
    }
    let row_len = tensor.len() / batch;
    let lambda = E::from_f64(draw.lambda);
    let complement = E::from_f64(1.0 - draw.lambda);
    let old = tensor.data().to_vec();
    let data = tensor.data_mut();
    for (i, &partner) in draw.permutation.iter().enumerate() {
        let dst = i * row_len;
        let src = partner * row_len;
        for j in 0..row_len {
            data[dst + j] = lambda * old[dst + j] + complement * old[src + j];
        }
    }
    Ok(())
}
