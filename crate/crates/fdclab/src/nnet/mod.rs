//! Convolutional network engine.
//!
//! Plain 3×3/pad-1/stride-1 convolutions with fused ReLU, 2×2/2 max pooling,
//! dense layers, softmax cross-entropy, and SGD with classical momentum —
//! the exact layer set of the two classifier presets. The engine stores f32
//! weights and can run the identical code path in f64 for finite-difference
//! gradient verification.
//!
//! Determinism: all randomness is seeded, batch parallelism uses a fixed
//! chunk split reduced in order, and GEMM kernels are selected per machine,
//! so a given build on a given host reproduces training bit-for-bit at any
//! thread count.

mod archive;
mod network;
mod scalar;
mod spec;
mod train;

pub use archive::{load_weights, save_weights, weights_from_bytes, weights_to_bytes};
pub use network::{
    argmax, backward_image, batch_loss_and_gradients, batch_loss_with_signature, batch_spans,
    forward, forward_image, forward_single, forward_with_signature, softmax_xent, BatchResult,
    ConvTap, Gradients, ImageSource, Layer, NetworkModel, NoTap, SliceSource, Tensor, Workspace,
};
pub use scalar::Scalar;
pub use spec::{
    compact_fdc, preset_by_name, vgg16_fdc, LayerSpec, NetworkSpec, Shape, CONV_KERNEL,
    INPUT_SIZE, N_CLASSES, VGG16_FDC_PARAMS,
};
pub use train::{
    evaluate, evaluate_indexed, sgd_step, train, EpochStats, EvalReport, TrainConfig, TrainHistory,
};

use crate::error::Result;

/// Total learnable parameters of a topology.
pub fn param_count(spec: &NetworkSpec) -> u64 {
    spec.param_count()
}

/// Softmax cross-entropy loss and averaged parameter gradients for a flat
/// batch (images concatenated). Runs through the same forward/backward as
/// training but sequentially, in the model's element type.
pub fn loss_and_gradients<T: Scalar>(
    model: &NetworkModel<T>,
    images: &[T],
    labels: &[u8],
) -> Result<(f64, Gradients<T>)> {
    let in_len = model.input_len();
    if images.len() != labels.len() * in_len || labels.is_empty() {
        return Err(crate::error::Error::shape(
            "loss_and_gradients",
            format!("{} images x {in_len} values", labels.len()),
            format!("{} values", images.len()),
        ));
    }
    let mut ws = Workspace::new(model);
    let mut grads = Gradients::zeros_like(model);
    let mut dlogits = vec![T::zero(); N_CLASSES];
    let scale = T::from_f64(1.0 / labels.len() as f64);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        forward_image(model, &mut ws, &images[i * in_len..(i + 1) * in_len])?;
        loss += softmax_xent(ws.logits(), label, scale, &mut dlogits)?;
        backward_image(model, &mut ws, &dlogits, Some(&mut grads), &mut NoTap);
    }
    Ok((loss / labels.len() as f64, grads))
}
