//! Dense 64-bit neural core: tensors, MLPs, losses, optimizers, the training loop,
//! finite-difference gradient checks and `AMDL` checkpoints.

mod checkpoint;
mod gradcheck;
mod loss;
mod mlp;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorSpec, MODEL_MAGIC};
pub use gradcheck::{grad_check, MAX_COORDS_PER_TENSOR};
pub use loss::{multi_label_softmax_loss, sigmoid_bce_loss, LossKind};
pub use mlp::{Activation, Linear, Mlp, MlpCache};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use tensor::{column_sums, matmul, matmul_a_bt, matmul_at_b, Tensor};
pub use train::{
    argmax_rows, fit, top1_accuracy, train_classifier, Classifier, Dataset, History, Sampler,
    StepRecord, TrainConfig, Transform,
};

use crate::{Error, Result};

/// Access to a model's trainable tensors in declaration order.
pub trait Parameters {
    fn parameters(&self) -> Vec<&[f64]>;
    fn parameters_mut(&mut self) -> Vec<&mut [f64]>;
    fn parameter_shapes(&self) -> Vec<TensorSpec>;

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn parameter_values(&self) -> Vec<Vec<f64>> {
        self.parameters().into_iter().map(<[f64]>::to_vec).collect()
    }

    fn set_parameters(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(Error::shape(format!(
                "{} tensors given for {} parameters",
                values.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.len() != v.len() {
                return Err(Error::shape(format!(
                    "tensor of {} values given {}",
                    p.len(),
                    v.len()
                )));
            }
            p.copy_from_slice(v);
        }
        Ok(())
    }
}
