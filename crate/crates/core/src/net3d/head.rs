use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{fc_affine, fc_backward, softmax_xent};
use super::tensor::{Matrix, Real};
use super::NetError;

/// Linear classifier over features used to turn cluster labels into a loss.
///
/// It is training state only and is rebuilt whenever the number of clusters changes.
#[derive(Debug, Clone)]
pub struct SoftmaxHead<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

pub struct HeadOutput<T> {
    pub loss: T,
    pub features: Matrix<T>,
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> SoftmaxHead<T> {
    pub fn new(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (1.0 / dim as f64).sqrt();
        let data = (0..classes * dim).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
        Self { weights: Matrix::from_vec(classes, dim, data).unwrap(), bias: vec![T::zero(); classes] }
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn logits(&self, features: &Matrix<T>) -> Result<Matrix<T>, NetError> {
        fc_affine(features, &self.weights, &self.bias)
    }

    /// Mean cross-entropy of `labels` under the head's softmax, with exact
    /// gradients for the features and the head parameters.
    pub fn loss(&self, features: &Matrix<T>, labels: &[usize]) -> Result<HeadOutput<T>, NetError> {
        let logits = self.logits(features)?;
        let (loss, dlogits) = softmax_xent(&logits, labels)?;
        let g = fc_backward(features, &self.weights, &dlogits);
        Ok(HeadOutput { loss, features: g.input, weights: g.weights, bias: g.bias })
    }
}
