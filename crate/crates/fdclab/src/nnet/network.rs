//! Network storage, forward pass, and backpropagation.
//!
//! Convolutions run as strip-mined im2col + GEMM: output rows are processed
//! in strips sized to keep the unrolled patch buffer small, so full-size
//! layers never materialize a 100+ MB column matrix. Batch work is split
//! into a fixed number of index chunks processed in parallel and reduced in
//! chunk order, which makes results bit-identical regardless of thread count.

use super::scalar::Scalar;
use super::spec::{LayerSpec, NetworkSpec, Shape, CONV_KERNEL, N_CLASSES};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::RngExt;
use rayon::prelude::*;
use std::ops::Range;

/// Dense row-major value container with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv {
        /// `[out_ch, in_ch, 3, 3]`, rows of the GEMM operand.
        weight: Tensor<T>,
        bias: Tensor<T>,
        in_ch: usize,
        out_ch: usize,
        /// Input spatial dims (preserved by pad-1 stride-1 3×3 kernels).
        h: usize,
        w: usize,
    },
    MaxPool {
        ch: usize,
        /// Input spatial dims; output is halved.
        h: usize,
        w: usize,
    },
    Dense {
        /// `[out_features, in_features]`.
        weight: Tensor<T>,
        bias: Tensor<T>,
        relu: bool,
    },
}

impl<T: Scalar> Layer<T> {
    pub fn output_len(&self) -> usize {
        match self {
            Layer::Conv { out_ch, h, w, .. } => out_ch * h * w,
            Layer::MaxPool { ch, h, w } => ch * (h / 2) * (w / 2),
            Layer::Dense { weight, .. } => weight.shape[0],
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            Layer::Conv { in_ch, h, w, .. } => in_ch * h * w,
            Layer::MaxPool { ch, h, w } => ch * h * w,
            Layer::Dense { weight, .. } => weight.shape[1],
        }
    }
}

/// A runnable model: spec, per-layer weights, and SGD momentum buffers.
#[derive(Debug, Clone)]
pub struct NetworkModel<T> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<T>>,
    /// Momentum buffers aligned with `layers` (empty pair for non-parameter
    /// layers); zero-initialized.
    pub velocity: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> NetworkModel<T> {
    /// Builds a model with Kaiming-uniform fan-in weights and zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut rng = stream_rng(seed, 0x11);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let built = match (layer, shapes[i]) {
                (LayerSpec::Conv { in_ch, out_ch }, Shape::Map { h, w, .. }) => {
                    let fan_in = in_ch * CONV_KERNEL * CONV_KERNEL;
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let mut weight = Tensor::zeros(vec![*out_ch, *in_ch, CONV_KERNEL, CONV_KERNEL]);
                    for v in weight.data.iter_mut() {
                        *v = T::from_f64(rng.random_range(-bound..bound));
                    }
                    Layer::Conv {
                        weight,
                        bias: Tensor::zeros(vec![*out_ch]),
                        in_ch: *in_ch,
                        out_ch: *out_ch,
                        h,
                        w,
                    }
                }
                (LayerSpec::MaxPool, Shape::Map { ch, h, w }) => Layer::MaxPool { ch, h, w },
                (
                    LayerSpec::Dense {
                        in_features,
                        out_features,
                        relu,
                    },
                    _,
                ) => {
                    let bound = (6.0 / *in_features as f64).sqrt();
                    let mut weight = Tensor::zeros(vec![*out_features, *in_features]);
                    for v in weight.data.iter_mut() {
                        *v = T::from_f64(rng.random_range(-bound..bound));
                    }
                    Layer::Dense {
                        weight,
                        bias: Tensor::zeros(vec![*out_features]),
                        relu: *relu,
                    }
                }
                _ => unreachable!("spec validated by shapes()"),
            };
            layers.push(built);
        }
        let velocity = layers
            .iter()
            .map(|l| match l {
                Layer::Conv { weight, bias, .. } | Layer::Dense { weight, bias, .. } => (
                    vec![T::zero(); weight.numel()],
                    vec![T::zero(); bias.numel()],
                ),
                Layer::MaxPool { .. } => (Vec::new(), Vec::new()),
            })
            .collect();
        Ok(NetworkModel {
            spec: spec.clone(),
            layers,
            velocity,
        })
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_ch * self.spec.input_size * self.spec.input_size
    }

    pub fn param_count(&self) -> u64 {
        self.spec.param_count()
    }

    pub fn zero_weights(&mut self) {
        for layer in &mut self.layers {
            if let Layer::Conv { weight, bias, .. } | Layer::Dense { weight, bias, .. } = layer {
                weight.data.fill(T::zero());
                bias.data.fill(T::zero());
            }
        }
    }

    /// Zeroes the momentum buffers (fresh optimizer state).
    pub fn reset_velocity(&mut self) {
        for (w, b) in &mut self.velocity {
            w.fill(T::zero());
            b.fill(T::zero());
        }
    }

    /// Copies weights into another element type (momentum not carried over).
    pub fn convert<U: Scalar>(&self) -> NetworkModel<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv {
                    weight,
                    bias,
                    in_ch,
                    out_ch,
                    h,
                    w,
                } => Layer::Conv {
                    weight: convert_tensor(weight),
                    bias: convert_tensor(bias),
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    h: *h,
                    w: *w,
                },
                Layer::MaxPool { ch, h, w } => Layer::MaxPool {
                    ch: *ch,
                    h: *h,
                    w: *w,
                },
                Layer::Dense { weight, bias, relu } => Layer::Dense {
                    weight: convert_tensor(weight),
                    bias: convert_tensor(bias),
                    relu: *relu,
                },
            })
            .collect::<Vec<_>>();
        let velocity = layers
            .iter()
            .map(|l| match l {
                Layer::Conv { weight, bias, .. } | Layer::Dense { weight, bias, .. } => (
                    vec![U::zero(); weight.numel()],
                    vec![U::zero(); bias.numel()],
                ),
                Layer::MaxPool { .. } => (Vec::new(), Vec::new()),
            })
            .collect();
        NetworkModel {
            spec: self.spec.clone(),
            layers,
            velocity,
        }
    }

    /// Indices of layers that carry parameters.
    pub fn param_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (!matches!(l, Layer::MaxPool { .. })).then_some(i))
            .collect()
    }

    /// `(name, layer index, is_weight)` for every stored tensor, in archive
    /// order. Conv and dense layers are numbered independently, 1-based.
    pub fn tensor_names(&self) -> Vec<(String, usize, bool)> {
        let mut out = Vec::new();
        let mut conv_no = 0;
        let mut fc_no = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { .. } => {
                    conv_no += 1;
                    out.push((format!("conv{conv_no}.weight"), i, true));
                    out.push((format!("conv{conv_no}.bias"), i, false));
                }
                Layer::Dense { .. } => {
                    fc_no += 1;
                    out.push((format!("fc{fc_no}.weight"), i, true));
                    out.push((format!("fc{fc_no}.bias"), i, false));
                }
                Layer::MaxPool { .. } => {}
            }
        }
        out
    }
}

fn convert_tensor<T: Scalar, U: Scalar>(t: &Tensor<T>) -> Tensor<U> {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        grad: None,
    }
}

/// Parameter gradients aligned with `model.layers`.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub per_layer: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &NetworkModel<T>) -> Self {
        Gradients {
            per_layer: model
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv { weight, bias, .. } | Layer::Dense { weight, bias, .. } => (
                        vec![T::zero(); weight.numel()],
                        vec![T::zero(); bias.numel()],
                    ),
                    Layer::MaxPool { .. } => (Vec::new(), Vec::new()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for ((w, b), (ow, ob)) in self.per_layer.iter_mut().zip(other.per_layer.iter()) {
            for (x, y) in w.iter_mut().zip(ow) {
                *x += *y;
            }
            for (x, y) in b.iter_mut().zip(ob) {
                *x += *y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.per_layer
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_zero()) && b.iter().all(|v| v.is_zero()))
    }
}

/// Observer invoked during backprop with each conv layer's post-ReLU feature
/// maps and the loss gradient w.r.t. them. Drives Taylor scoring and CAM.
pub trait ConvTap<T> {
    fn tap(&mut self, conv_ordinal: usize, acts: &[T], grads: &[T], out_ch: usize, spatial: usize);
}

/// No-op tap.
pub struct NoTap;
impl<T> ConvTap<T> for NoTap {
    fn tap(&mut self, _: usize, _: &[T], _: &[T], _: usize, _: usize) {}
}

/// Keep the im2col strip buffer at or below ~1M elements.
const COL_BUDGET: usize = 1 << 20;

/// Per-image scratch: activations at every layer boundary, pool argmax
/// indices, the im2col strip, and two ping-pong gradient buffers.
pub struct Workspace<T> {
    acts: Vec<Vec<T>>,
    pool_idx: Vec<Vec<u8>>,
    cols: Vec<T>,
    dcols: Vec<T>,
    dbuf_a: Vec<T>,
    dbuf_b: Vec<T>,
    /// ReLU/pool decision hash of the most recent forward pass. Hashing
    /// costs a pass over every activation, so it is off unless requested.
    signature: u64,
    hash_decisions: bool,
}

impl<T: Scalar> Workspace<T> {
    /// Workspace that also hashes activation-pattern decisions, for the
    /// finite-difference tie exclusion.
    pub fn with_signature(model: &NetworkModel<T>) -> Self {
        let mut ws = Self::new(model);
        ws.hash_decisions = true;
        ws
    }

    pub fn new(model: &NetworkModel<T>) -> Self {
        let mut acts = vec![vec![T::zero(); model.input_len()]];
        let mut pool_idx = Vec::new();
        let mut max_cols = 0;
        let mut max_len = model.input_len();
        for layer in &model.layers {
            let out_len = layer.output_len();
            max_len = max_len.max(out_len);
            acts.push(vec![T::zero(); out_len]);
            if let Layer::MaxPool { .. } = layer {
                pool_idx.push(vec![0u8; out_len]);
            } else {
                pool_idx.push(Vec::new());
            }
            if let Layer::Conv { in_ch, w, .. } = layer {
                let k = in_ch * CONV_KERNEL * CONV_KERNEL;
                let strip = strip_rows(k, *w);
                max_cols = max_cols.max(k * strip * w);
            }
        }
        Workspace {
            acts,
            pool_idx,
            cols: vec![T::zero(); max_cols],
            dcols: vec![T::zero(); max_cols],
            dbuf_a: vec![T::zero(); max_len],
            dbuf_b: vec![T::zero(); max_len],
            signature: 0,
            hash_decisions: false,
        }
    }

    pub fn logits(&self) -> &[T] {
        self.acts.last().unwrap()
    }

    /// Post-ReLU activations of the `ordinal`-th conv layer (0-based) from
    /// the most recent forward pass.
    pub fn conv_activations(&self, model: &NetworkModel<T>, ordinal: usize) -> Option<&[T]> {
        let idx = *model.spec.conv_layers().get(ordinal)?;
        Some(&self.acts[idx + 1])
    }

    pub fn signature(&self) -> u64 {
        self.signature
    }
}

/// Output rows per im2col strip for a conv with `k` unrolled inputs and
/// row width `w`.
fn strip_rows(k: usize, w: usize) -> usize {
    (COL_BUDGET / (k * w)).clamp(1, 512)
}

fn fnv_mix(hash: &mut u64, value: u64) {
    *hash ^= value;
    *hash = hash.wrapping_mul(0x100_0000_01b3);
}

#[inline]
fn debug_check_finite<T: Scalar>(data: &[T], context: &str) {
    debug_assert!(
        data.iter().all(|v| v.is_finite()),
        "non-finite value after {context}"
    );
    let _ = context;
}

/// Fills `cols[k][strip·w]` with padded 3×3 patches for output rows
/// `r0..r1`. Layout: row `ic·9 + ky·3 + kx` holds the input pixel that the
/// kernel tap `(ky, kx)` reads for each output position.
#[allow(clippy::too_many_arguments)]
fn im2col_strip<T: Scalar>(
    input: &[T],
    in_ch: usize,
    h: usize,
    w: usize,
    r0: usize,
    r1: usize,
    cols: &mut [T],
) {
    let n = (r1 - r0) * w;
    for ic in 0..in_ch {
        let plane = &input[ic * h * w..(ic + 1) * h * w];
        for ky in 0..CONV_KERNEL {
            for kx in 0..CONV_KERNEL {
                let row = &mut cols[(ic * 9 + ky * 3 + kx) * n..(ic * 9 + ky * 3 + kx + 1) * n];
                for r in r0..r1 {
                    let dst = &mut row[(r - r0) * w..(r - r0 + 1) * w];
                    let ir = (r + ky).wrapping_sub(1);
                    if ir >= h {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ir * w..(ir + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-strip gradient back onto the padded input layout.
#[allow(clippy::too_many_arguments)]
fn col2im_strip_add<T: Scalar>(
    dcols: &[T],
    in_ch: usize,
    h: usize,
    w: usize,
    r0: usize,
    r1: usize,
    dinput: &mut [T],
) {
    let n = (r1 - r0) * w;
    for ic in 0..in_ch {
        let plane = &mut dinput[ic * h * w..(ic + 1) * h * w];
        for ky in 0..CONV_KERNEL {
            for kx in 0..CONV_KERNEL {
                let row = &dcols[(ic * 9 + ky * 3 + kx) * n..(ic * 9 + ky * 3 + kx + 1) * n];
                for r in r0..r1 {
                    let src = &row[(r - r0) * w..(r - r0 + 1) * w];
                    let ir = (r + ky).wrapping_sub(1);
                    if ir >= h {
                        continue;
                    }
                    let dst = &mut plane[ir * w..(ir + 1) * w];
                    match kx {
                        0 => {
                            for c in 1..w {
                                dst[c - 1] += src[c];
                            }
                        }
                        1 => {
                            for c in 0..w {
                                dst[c] += src[c];
                            }
                        }
                        _ => {
                            for c in 0..w - 1 {
                                dst[c + 1] += src[c];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass for one image; activations stay in the workspace.
pub fn forward_image<T: Scalar>(
    model: &NetworkModel<T>,
    ws: &mut Workspace<T>,
    image: &[T],
) -> Result<()> {
    if image.len() != model.input_len() {
        return Err(Error::shape(
            "forward",
            format!("{} input values", model.input_len()),
            format!("{}", image.len()),
        ));
    }
    ws.acts[0].copy_from_slice(image);
    ws.signature = 0xcbf2_9ce4_8422_2325;

    for (li, layer) in model.layers.iter().enumerate() {
        let (before, after) = ws.acts.split_at_mut(li + 1);
        let input = before.last().unwrap();
        let output = &mut after[0];
        match layer {
            Layer::Conv {
                weight,
                bias,
                in_ch,
                out_ch,
                h,
                w,
            } => {
                let hw = h * w;
                let k = in_ch * 9;
                let strip = strip_rows(k, *w);
                let mut r0 = 0;
                while r0 < *h {
                    let r1 = (r0 + strip).min(*h);
                    let n = (r1 - r0) * w;
                    im2col_strip(input, *in_ch, *h, *w, r0, r1, &mut ws.cols);
                    // out[:, r0*w ..] = W · cols
                    unsafe {
                        T::gemm(
                            *out_ch,
                            k,
                            n,
                            T::one(),
                            weight.data.as_ptr(),
                            k as isize,
                            1,
                            ws.cols.as_ptr(),
                            n as isize,
                            1,
                            T::zero(),
                            output.as_mut_ptr().add(r0 * w),
                            hw as isize,
                            1,
                        );
                    }
                    r0 = r1;
                }
                // Bias + ReLU.
                for oc in 0..*out_ch {
                    let b = bias.data[oc];
                    let plane = &mut output[oc * hw..(oc + 1) * hw];
                    if ws.hash_decisions {
                        let mut bits = 0u64;
                        for (i, v) in plane.iter_mut().enumerate() {
                            *v = (*v + b).max(T::zero());
                            if *v > T::zero() {
                                bits = bits.wrapping_add(1).rotate_left((i % 63) as u32);
                            }
                        }
                        fnv_mix(&mut ws.signature, bits);
                    } else {
                        for v in plane.iter_mut() {
                            *v = (*v + b).max(T::zero());
                        }
                    }
                }
                debug_check_finite(output, "conv");
            }
            Layer::MaxPool { ch, h, w } => {
                let (oh, ow) = (h / 2, w / 2);
                let idx = &mut ws.pool_idx[li];
                for c in 0..*ch {
                    let plane = &input[c * h * w..(c + 1) * h * w];
                    let out_plane = &mut output[c * oh * ow..(c + 1) * oh * ow];
                    let idx_plane = &mut idx[c * oh * ow..(c + 1) * oh * ow];
                    for py in 0..oh {
                        for px in 0..ow {
                            let base = (py * 2) * w + px * 2;
                            let candidates = [
                                plane[base],
                                plane[base + 1],
                                plane[base + w],
                                plane[base + w + 1],
                            ];
                            let mut best = 0usize;
                            for j in 1..4 {
                                if candidates[j] > candidates[best] {
                                    best = j;
                                }
                            }
                            out_plane[py * ow + px] = candidates[best];
                            idx_plane[py * ow + px] = best as u8;
                        }
                    }
                    if ws.hash_decisions {
                        let mut bits = 0u64;
                        for (i, &b) in idx_plane.iter().enumerate() {
                            bits = bits.wrapping_add((b as u64) << (i % 62)).rotate_left(1);
                        }
                        fnv_mix(&mut ws.signature, bits);
                    }
                }
            }
            Layer::Dense { weight, bias, relu } => {
                let out_f = weight.shape[0];
                let in_f = weight.shape[1];
                unsafe {
                    T::gemm(
                        out_f,
                        in_f,
                        1,
                        T::one(),
                        weight.data.as_ptr(),
                        in_f as isize,
                        1,
                        input.as_ptr(),
                        1,
                        1,
                        T::zero(),
                        output.as_mut_ptr(),
                        1,
                        1,
                    );
                }
                let mut bits = 0u64;
                for (o, v) in output.iter_mut().enumerate() {
                    *v += bias.data[o];
                    if *relu {
                        *v = (*v).max(T::zero());
                        if ws.hash_decisions && *v > T::zero() {
                            bits = bits.wrapping_add(1).rotate_left((o % 63) as u32);
                        }
                    }
                }
                if *relu && ws.hash_decisions {
                    fnv_mix(&mut ws.signature, bits);
                }
                debug_check_finite(output, "dense");
            }
        }
    }
    Ok(())
}

/// Backprop from a gradient at the logits. Accumulates parameter gradients
/// into `grads` (when given) and feeds every conv layer's activation
/// gradient to `tap`. Requires the workspace state of the matching
/// `forward_image` call.
pub fn backward_image<T: Scalar>(
    model: &NetworkModel<T>,
    ws: &mut Workspace<T>,
    dlogits: &[T],
    mut grads: Option<&mut Gradients<T>>,
    tap: &mut dyn ConvTap<T>,
) {
    debug_assert_eq!(dlogits.len(), N_CLASSES);
    let n_layers = model.layers.len();
    let conv_ordinal_of: Vec<Option<usize>> = {
        let convs = model.spec.conv_layers();
        (0..n_layers)
            .map(|i| convs.iter().position(|&c| c == i))
            .collect()
    };

    // Ping-pong gradient buffers; dcur always refers to the gradient w.r.t.
    // the CURRENT layer's output.
    let mut use_a = true;
    ws.dbuf_a[..N_CLASSES].copy_from_slice(dlogits);

    for li in (0..n_layers).rev() {
        let layer = &model.layers[li];
        let out_len = layer.output_len();
        let in_len = layer.input_len();
        let (dcur_buf, dprev_buf) = if use_a {
            (&mut ws.dbuf_a, &mut ws.dbuf_b)
        } else {
            (&mut ws.dbuf_b, &mut ws.dbuf_a)
        };
        let dcur = &mut dcur_buf[..out_len];
        let acts_out = &ws.acts[li + 1];
        let acts_in = &ws.acts[li];

        match layer {
            Layer::Conv {
                weight,
                in_ch,
                out_ch,
                h,
                w,
                ..
            } => {
                if let Some(ord) = conv_ordinal_of[li] {
                    tap.tap(ord, acts_out, dcur, *out_ch, h * w);
                }
                // ReLU mask: stored activations are post-ReLU.
                for (g, &a) in dcur.iter_mut().zip(acts_out.iter()) {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                }

                let hw = h * w;
                let k = in_ch * 9;
                let need_dinput = li > 0;
                let dprev = &mut dprev_buf[..in_len];
                if need_dinput {
                    dprev.fill(T::zero());
                }

                if let Some(g) = grads.as_deref_mut() {
                    let (gw, gb) = &mut g.per_layer[li];
                    for oc in 0..*out_ch {
                        let mut sum = T::zero();
                        for &v in &dcur[oc * hw..(oc + 1) * hw] {
                            sum += v;
                        }
                        gb[oc] += sum;
                    }
                    let strip = strip_rows(k, *w);
                    let mut r0 = 0;
                    while r0 < *h {
                        let r1 = (r0 + strip).min(*h);
                        let n = (r1 - r0) * w;
                        im2col_strip(acts_in, *in_ch, *h, *w, r0, r1, &mut ws.cols);
                        // dW += dPre_strip · colsᵀ
                        unsafe {
                            T::gemm(
                                *out_ch,
                                n,
                                k,
                                T::one(),
                                dcur.as_ptr().add(r0 * w),
                                hw as isize,
                                1,
                                ws.cols.as_ptr(),
                                1,
                                n as isize,
                                T::one(),
                                gw.as_mut_ptr(),
                                k as isize,
                                1,
                            );
                        }
                        if need_dinput {
                            // dcols = Wᵀ · dPre_strip, then scatter-add.
                            unsafe {
                                T::gemm(
                                    k,
                                    *out_ch,
                                    n,
                                    T::one(),
                                    weight.data.as_ptr(),
                                    1,
                                    k as isize,
                                    dcur.as_ptr().add(r0 * w),
                                    hw as isize,
                                    1,
                                    T::zero(),
                                    ws.dcols.as_mut_ptr(),
                                    n as isize,
                                    1,
                                );
                            }
                            col2im_strip_add(&ws.dcols, *in_ch, *h, *w, r0, r1, dprev);
                        }
                        r0 = r1;
                    }
                } else if need_dinput {
                    // Gradient w.r.t. input only (explainability path).
                    let strip = strip_rows(k, *w);
                    let mut r0 = 0;
                    while r0 < *h {
                        let r1 = (r0 + strip).min(*h);
                        let n = (r1 - r0) * w;
                        unsafe {
                            T::gemm(
                                k,
                                *out_ch,
                                n,
                                T::one(),
                                weight.data.as_ptr(),
                                1,
                                k as isize,
                                dcur.as_ptr().add(r0 * w),
                                hw as isize,
                                1,
                                T::zero(),
                                ws.dcols.as_mut_ptr(),
                                n as isize,
                                1,
                            );
                        }
                        col2im_strip_add(&ws.dcols, *in_ch, *h, *w, r0, r1, dprev);
                        r0 = r1;
                    }
                }
            }
            Layer::MaxPool { ch, h, w } => {
                let (oh, ow) = (h / 2, w / 2);
                let idx = &ws.pool_idx[li];
                let dprev = &mut dprev_buf[..in_len];
                dprev.fill(T::zero());
                for c in 0..*ch {
                    let dplane = &dcur[c * oh * ow..(c + 1) * oh * ow];
                    let iplane = &idx[c * oh * ow..(c + 1) * oh * ow];
                    let dst = &mut dprev[c * h * w..(c + 1) * h * w];
                    for py in 0..oh {
                        for px in 0..ow {
                            let which = iplane[py * ow + px] as usize;
                            let base = (py * 2) * w + px * 2;
                            let offset = match which {
                                0 => base,
                                1 => base + 1,
                                2 => base + w,
                                _ => base + w + 1,
                            };
                            dst[offset] += dplane[py * ow + px];
                        }
                    }
                }
            }
            Layer::Dense { weight, relu, .. } => {
                if *relu {
                    for (g, &a) in dcur.iter_mut().zip(acts_out.iter()) {
                        if a <= T::zero() {
                            *g = T::zero();
                        }
                    }
                }
                let out_f = weight.shape[0];
                let in_f = weight.shape[1];
                if let Some(g) = grads.as_deref_mut() {
                    let (gw, gb) = &mut g.per_layer[li];
                    for o in 0..out_f {
                        gb[o] += dcur[o];
                    }
                    // dW += dPre ⊗ x
                    unsafe {
                        T::gemm(
                            out_f,
                            1,
                            in_f,
                            T::one(),
                            dcur.as_ptr(),
                            1,
                            1,
                            acts_in.as_ptr(),
                            in_f as isize,
                            1,
                            T::one(),
                            gw.as_mut_ptr(),
                            in_f as isize,
                            1,
                        );
                    }
                }
                if li > 0 {
                    let dprev = &mut dprev_buf[..in_len];
                    // dx = Wᵀ · dPre
                    unsafe {
                        T::gemm(
                            in_f,
                            out_f,
                            1,
                            T::one(),
                            weight.data.as_ptr(),
                            1,
                            in_f as isize,
                            dcur.as_ptr(),
                            1,
                            1,
                            T::zero(),
                            dprev.as_mut_ptr(),
                            1,
                            1,
                        );
                    }
                }
            }
        }
        use_a = !use_a;
    }
}

/// Softmax cross-entropy on the logits in the workspace. Returns the loss
/// and writes `(softmax - onehot)·scale` into `dlogits`.
pub fn softmax_xent<T: Scalar>(logits: &[T], label: u8, scale: T, dlogits: &mut [T]) -> Result<f64> {
    if label as usize >= N_CLASSES {
        return Err(Error::invalid(format!(
            "label {label} out of range 0-{}",
            N_CLASSES - 1
        )));
    }
    let mut max = logits[0];
    for &v in &logits[1..] {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for (d, &v) in dlogits.iter_mut().zip(logits.iter()) {
        *d = (v - max).exp();
        sum += *d;
    }
    let inv = T::one() / sum;
    let mut loss = 0.0;
    for (j, d) in dlogits.iter_mut().enumerate() {
        let p = *d * inv;
        if j == label as usize {
            loss = -(p.as_f64().max(1e-300)).ln();
            *d = (p - T::one()) * scale;
        } else {
            *d = p * scale;
        }
    }
    Ok(loss)
}

/// Deterministic batch split: a fixed chunk count independent of the thread
/// pool, so parallel reduction order never changes results.
pub const BATCH_CHUNKS: usize = 8;

pub fn batch_spans(n: usize, param_count: u64) -> Vec<Range<usize>> {
    // Very large models get one chunk: gradient buffers dominate memory.
    let chunks = if param_count > 20_000_000 {
        1
    } else {
        BATCH_CHUNKS
    };
    let size = n.div_ceil(chunks);
    let mut spans = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        spans.push(start..end);
        start = end;
    }
    spans
}

/// Images accessed by index; implementors render augmented inputs on the fly.
pub trait ImageSource: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn label(&self, idx: usize) -> u8;
    /// Writes the image into `out` (length = model input length).
    fn write_image(&self, idx: usize, out: &mut [f32]);
}

/// Flat in-memory batch of images.
pub struct SliceSource<'a> {
    pub images: &'a [f32],
    pub labels: &'a [u8],
    pub image_len: usize,
}

impl ImageSource for SliceSource<'_> {
    fn len(&self) -> usize {
        self.labels.len()
    }
    fn label(&self, idx: usize) -> u8 {
        self.labels[idx]
    }
    fn write_image(&self, idx: usize, out: &mut [f32]) {
        out.copy_from_slice(&self.images[idx * self.image_len..(idx + 1) * self.image_len]);
    }
}

pub struct BatchResult<T> {
    pub loss: f64,
    pub correct: usize,
    pub grads: Gradients<T>,
}

/// Forward + backward over `indices`, parameter gradients averaged over the
/// batch. Parallel over fixed chunks, reduced in chunk order.
pub fn batch_loss_and_gradients<T: Scalar>(
    model: &NetworkModel<T>,
    source: &dyn ImageSource,
    indices: &[usize],
) -> Result<BatchResult<T>> {
    if indices.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = T::from_f64(1.0 / indices.len() as f64);
    let spans = batch_spans(indices.len(), model.param_count());
    let results: Vec<Result<(f64, usize, Gradients<T>)>> = spans
        .par_iter()
        .map(|span| {
            let mut ws = Workspace::new(model);
            let mut grads = Gradients::zeros_like(model);
            let mut fbuf = vec![0.0f32; model.input_len()];
            let mut image = vec![T::zero(); model.input_len()];
            let mut dlogits = vec![T::zero(); N_CLASSES];
            let mut loss = 0.0;
            let mut correct = 0usize;
            for &idx in &indices[span.clone()] {
                source.write_image(idx, &mut fbuf);
                for (t, &f) in image.iter_mut().zip(fbuf.iter()) {
                    *t = T::from_f32(f);
                }
                forward_image(model, &mut ws, &image)?;
                let label = source.label(idx);
                if argmax(ws.logits()) == label as usize {
                    correct += 1;
                }
                loss += softmax_xent(ws.logits(), label, scale, &mut dlogits)?;
                backward_image(model, &mut ws, &dlogits, Some(&mut grads), &mut NoTap);
            }
            Ok((loss, correct, grads))
        })
        .collect();

    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    let mut correct = 0;
    for r in results {
        let (l, c, g) = r?;
        loss += l;
        correct += c;
        total.add_assign(&g);
    }
    Ok(BatchResult {
        loss: loss / indices.len() as f64,
        correct,
        grads: total,
    })
}

pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Forward-only logits for a flat batch, parallel over fixed chunks.
pub fn forward<T: Scalar>(model: &NetworkModel<T>, images: &[T], batch: usize) -> Result<Vec<T>> {
    let in_len = model.input_len();
    if images.len() != batch * in_len {
        return Err(Error::shape(
            "forward batch",
            format!("{} values", batch * in_len),
            format!("{}", images.len()),
        ));
    }
    let spans = batch_spans(batch, model.param_count());
    let chunks: Vec<Result<Vec<T>>> = spans
        .par_iter()
        .map(|span| {
            let mut ws = Workspace::new(model);
            let mut out = Vec::with_capacity(span.len() * N_CLASSES);
            for i in span.clone() {
                forward_image(model, &mut ws, &images[i * in_len..(i + 1) * in_len])?;
                out.extend_from_slice(ws.logits());
            }
            Ok(out)
        })
        .collect();
    let mut logits = Vec::with_capacity(batch * N_CLASSES);
    for c in chunks {
        logits.extend(c?);
    }
    Ok(logits)
}

/// Single-image forward returning the logits.
pub fn forward_single<T: Scalar>(model: &NetworkModel<T>, image: &[T]) -> Result<Vec<T>> {
    let mut ws = Workspace::new(model);
    forward_image(model, &mut ws, image)?;
    Ok(ws.logits().to_vec())
}

/// Forward returning the logits plus the ReLU/pool decision hash. Two
/// passes with equal hashes took identical activation-pattern branches.
pub fn forward_with_signature<T: Scalar>(
    model: &NetworkModel<T>,
    image: &[T],
) -> Result<(Vec<T>, u64)> {
    let mut ws = Workspace::with_signature(model);
    forward_image(model, &mut ws, image)?;
    Ok((ws.logits().to_vec(), ws.signature()))
}

/// Mean cross-entropy of a flat batch without backprop; also returns the
/// combined decision signature. The finite-difference oracle runs on this.
pub fn batch_loss_with_signature<T: Scalar>(
    model: &NetworkModel<T>,
    images: &[T],
    labels: &[u8],
) -> Result<(f64, u64)> {
    let in_len = model.input_len();
    if images.len() != labels.len() * in_len {
        return Err(Error::shape(
            "batch loss",
            format!("{} values", labels.len() * in_len),
            format!("{}", images.len()),
        ));
    }
    let mut ws = Workspace::with_signature(model);
    let mut dlogits = vec![T::zero(); N_CLASSES];
    let mut loss = 0.0;
    let mut signature = 0u64;
    for (i, &label) in labels.iter().enumerate() {
        forward_image(model, &mut ws, &images[i * in_len..(i + 1) * in_len])?;
        fnv_mix(&mut signature, ws.signature());
        loss += softmax_xent(ws.logits(), label, T::one(), &mut dlogits)?;
    }
    Ok((loss / labels.len() as f64, signature))
}
