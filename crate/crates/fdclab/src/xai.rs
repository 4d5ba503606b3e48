//! Grad-CAM explainability.
//!
//! For a class score y^c (the pre-softmax logit) and a conv layer's
//! post-ReLU feature maps A^k, the neuron importance weights are the
//! globally averaged gradients α_k = (1/Z)·Σ_ij ∂y^c/∂A^k_ij, and the
//! heatmap is ReLU(Σ_k α_k·A^k). The raw map lives at the layer's spatial
//! resolution and is upsampled to the 224×224 input by nearest neighbor,
//! which preserves the block structure of tiled inputs.

use crate::augment::{AugMethod, DUP_COLS, DUP_ROWS, IMAGE_SIZE, PAD_LEFT, PAD_TOP};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nnet::{
    backward_image, forward_image, ConvTap, NetworkModel, Scalar, Workspace, N_CLASSES,
};
use crate::sdi::SDI_COLS;
use serde::Serialize;
use std::path::Path;

/// A class-attribution heatmap for one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CamHeatmap {
    /// 0-based index among conv layers.
    pub conv_ordinal: usize,
    pub class: u8,
    /// Raw map spatial dims (the layer's activation dims).
    pub height: usize,
    pub width: usize,
    /// ReLU-rectified weighted activation combination, row-major h×w.
    pub raw: Vec<f32>,
    /// Importance weight per feature map.
    pub alphas: Vec<f32>,
    /// Nearest-neighbor upsampling of `raw` to the input size.
    pub upsampled: Matrix,
}

struct CamCapture<T> {
    target: usize,
    ch: usize,
    spatial: usize,
    acts: Vec<T>,
    grads: Vec<T>,
}

impl<T: Scalar> ConvTap<T> for CamCapture<T> {
    fn tap(&mut self, ordinal: usize, acts: &[T], grads: &[T], out_ch: usize, spatial: usize) {
        if ordinal == self.target {
            self.ch = out_ch;
            self.spatial = spatial;
            self.acts = acts.to_vec();
            self.grads = grads.to_vec();
        }
    }
}

/// Pre-ReLU linear combination Σ_k α_k·A^k.
pub fn combine_maps(alphas: &[f64], acts: &[f64], spatial: usize) -> Vec<f64> {
    let mut combined = vec![0.0f64; spatial];
    for (k, &alpha) in alphas.iter().enumerate() {
        for (dst, &a) in combined.iter_mut().zip(&acts[k * spatial..(k + 1) * spatial]) {
            *dst += alpha * a;
        }
    }
    combined
}

/// Nearest-neighbor upsampling of an h×w map to the square input size.
pub fn upsample_nearest(raw: &[f32], h: usize, w: usize) -> Matrix {
    let mut out = Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE);
    for r in 0..IMAGE_SIZE {
        let sr = r * h / IMAGE_SIZE;
        let dst = out.row_mut(r);
        for (c, v) in dst.iter_mut().enumerate() {
            let sc = c * w / IMAGE_SIZE;
            *v = raw[sr * w + sc];
        }
    }
    out
}

/// Computes the Grad-CAM heatmap of `class` at the given conv layer.
pub fn grad_cam<T: Scalar>(
    model: &NetworkModel<T>,
    image: &[T],
    class: u8,
    conv_ordinal: usize,
) -> Result<CamHeatmap> {
    if class as usize >= N_CLASSES {
        return Err(Error::invalid(format!("class {class} out of range 0-9")));
    }
    let convs = model.spec.conv_layers();
    let layer = *convs.get(conv_ordinal).ok_or_else(|| {
        Error::invalid(format!(
            "conv layer {conv_ordinal} out of range (model has {})",
            convs.len()
        ))
    })?;
    let (h, w) = match &model.layers[layer] {
        crate::nnet::Layer::Conv { h, w, .. } => (*h, *w),
        _ => unreachable!(),
    };

    let mut ws = Workspace::new(model);
    forward_image(model, &mut ws, image)?;
    // ∂y^c/∂logits is the one-hot selector of the pre-softmax score.
    let mut dlogits = vec![T::zero(); N_CLASSES];
    dlogits[class as usize] = T::one();
    let mut capture = CamCapture {
        target: conv_ordinal,
        ch: 0,
        spatial: 0,
        acts: Vec::new(),
        grads: Vec::new(),
    };
    backward_image(model, &mut ws, &dlogits, None, &mut capture);
    if capture.spatial == 0 {
        return Err(Error::invalid(format!(
            "conv layer {conv_ordinal} produced no capture"
        )));
    }

    let spatial = capture.spatial;
    let ch = capture.ch;
    // α_k = global average of the gradients over the map.
    let alphas: Vec<f64> = (0..ch)
        .map(|k| {
            capture.grads[k * spatial..(k + 1) * spatial]
                .iter()
                .map(|g| Scalar::as_f64(*g))
                .sum::<f64>()
                / spatial as f64
        })
        .collect();
    let acts: Vec<f64> = capture.acts.iter().map(|a| Scalar::as_f64(*a)).collect();
    let combined = combine_maps(&alphas, &acts, spatial);
    let raw: Vec<f32> = combined.iter().map(|&v| v.max(0.0) as f32).collect();
    let upsampled = upsample_nearest(&raw, h, w);
    Ok(CamHeatmap {
        conv_ordinal,
        class,
        height: h,
        width: w,
        raw,
        alphas: alphas.iter().map(|&a| a as f32).collect(),
        upsampled,
    })
}

#[derive(Serialize)]
struct OverlayMeta<'a> {
    layer: usize,
    class: u8,
    alphas: &'a [f32],
    overlap_fraction: Option<f64>,
}

/// Writes the heatmap as `<stem>.pgm` (max-normalized map), `<stem>.csv`
/// (raw values), `<stem>_overlay.pgm` (0.5·image + 0.5·map/max), and
/// `<stem>.json` (layer, class, alphas, optional overlap fraction).
pub fn export_overlay(
    heatmap: &CamHeatmap,
    image: &Matrix,
    stem: impl AsRef<Path>,
    overlap_fraction: Option<f64>,
) -> Result<()> {
    if image.rows() != IMAGE_SIZE || image.cols() != IMAGE_SIZE {
        return Err(Error::shape(
            "export_overlay",
            format!("{IMAGE_SIZE}x{IMAGE_SIZE} image"),
            format!("{}x{}", image.rows(), image.cols()),
        ));
    }
    let stem = stem.as_ref();
    let max = heatmap.upsampled.data().iter().cloned().fold(0.0f32, f32::max);

    let mut map_img = Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE);
    if max > 0.0 {
        for r in 0..IMAGE_SIZE {
            for c in 0..IMAGE_SIZE {
                map_img.set(r, c, heatmap.upsampled.get(r, c) / max);
            }
        }
    }
    map_img.write_pgm(stem.with_extension("pgm"))?;

    // Raw values as CSV, one row per map row.
    let mut csv = String::new();
    for r in 0..heatmap.height {
        let row: Vec<String> = (0..heatmap.width)
            .map(|c| format!("{}", heatmap.raw[r * heatmap.width + c]))
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    std::fs::write(stem.with_extension("csv"), csv)?;

    let mut overlay = Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE);
    for r in 0..IMAGE_SIZE {
        for c in 0..IMAGE_SIZE {
            let v = if max > 0.0 {
                0.5 * image.get(r, c) + 0.5 * heatmap.upsampled.get(r, c) / max
            } else {
                image.get(r, c)
            };
            overlay.set(r, c, v);
        }
    }
    let overlay_path = stem.with_file_name(format!(
        "{}_overlay.pgm",
        stem.file_stem().and_then(|s| s.to_str()).unwrap_or("cam")
    ));
    overlay.write_pgm(overlay_path)?;

    let meta = OverlayMeta {
        layer: heatmap.conv_ordinal,
        class: heatmap.class,
        alphas: &heatmap.alphas,
        overlap_fraction,
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    std::fs::write(stem.with_extension("json"), json)?;
    Ok(())
}

/// Fraction of the hottest-decile upsampled pixels whose column maps back
/// (through the augmentation layout) into the fault's SDI time columns.
/// Pixels mapping to the zero border are excluded from the denominator.
pub fn attention_overlap(
    heatmap: &CamHeatmap,
    method: AugMethod,
    fault_cols: &[usize],
) -> Result<f64> {
    if fault_cols.is_empty() {
        return Err(Error::invalid(
            "attention overlap undefined without a fault span",
        ));
    }
    if fault_cols.iter().any(|&c| c >= SDI_COLS) {
        return Err(Error::invalid("fault column outside the SDI"));
    }
    let data = heatmap.upsampled.data();
    let max = data.iter().cloned().fold(0.0f32, f32::max);
    if !(max > 0.0) {
        return Err(Error::invalid("zero heatmap has no hottest decile"));
    }

    // Top decile by value, index order breaking ties deterministically.
    let n_top = data.len().div_ceil(10);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        data[b]
            .partial_cmp(&data[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut span = [false; SDI_COLS];
    for &c in fault_cols {
        span[c] = true;
    }
    let mut interior = 0usize;
    let mut hits = 0usize;
    for &p in &order[..n_top] {
        let r = p / IMAGE_SIZE;
        let c = p % IMAGE_SIZE;
        let inside = (PAD_TOP..PAD_TOP + DUP_ROWS).contains(&r)
            && (PAD_LEFT..PAD_LEFT + DUP_COLS).contains(&c);
        if !inside {
            continue;
        }
        interior += 1;
        if span[method.source_column(c - PAD_LEFT)] {
            hits += 1;
        }
    }
    if interior == 0 {
        return Err(Error::invalid(
            "hottest decile lies entirely on the zero border",
        ));
    }
    Ok(hits as f64 / interior as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Layer, LayerSpec, NetworkSpec};
    use crate::rng::stream_rng;
    use rand::RngExt;

    fn cam_spec() -> NetworkSpec {
        NetworkSpec {
            name: "cam".into(),
            input_ch: 1,
            input_size: 12,
            layers: vec![
                LayerSpec::Conv { in_ch: 1, out_ch: 4 },
                LayerSpec::MaxPool,
                LayerSpec::Conv { in_ch: 4, out_ch: 5 },
                LayerSpec::MaxPool,
                LayerSpec::Dense {
                    in_features: 5 * 3 * 3,
                    out_features: 10,
                    relu: false,
                },
            ],
        }
    }

    fn random_image(len: usize, seed: u64) -> Vec<f32> {
        let mut rng = stream_rng(seed, 0xCA);
        (0..len).map(|_| rng.random_range(0.0..1.0f32)).collect()
    }

    #[test]
    fn zero_gradient_class_yields_zero_map() {
        let mut model = NetworkModel::<f32>::init(&cam_spec(), 1).unwrap();
        // Cut class 7 off from the network: zero its output row.
        if let Layer::Dense { weight, bias, .. } = model.layers.last_mut().unwrap() {
            let in_f = weight.shape[1];
            weight.data[7 * in_f..8 * in_f].fill(0.0);
            bias.data[7] = 0.0;
        }
        let image = random_image(144, 2);
        for ordinal in 0..2 {
            let cam = grad_cam(&model, &image, 7, ordinal).unwrap();
            assert!(cam.raw.iter().all(|&v| v == 0.0));
            assert!(cam.alphas.iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn heatmaps_are_nonnegative_and_match_layer_dims() {
        let model = NetworkModel::<f32>::init(&cam_spec(), 3).unwrap();
        let image = random_image(144, 4);
        for (ordinal, expected_side) in [(0usize, 12usize), (1, 6)] {
            for class in 0..10u8 {
                let cam = grad_cam(&model, &image, class, ordinal).unwrap();
                assert_eq!((cam.height, cam.width), (expected_side, expected_side));
                assert_eq!(cam.raw.len(), expected_side * expected_side);
                assert!(cam.raw.iter().all(|&v| v >= 0.0 && v.is_finite()));
            }
        }
        assert!(grad_cam(&model, &image, 10, 0).is_err());
        assert!(grad_cam(&model, &image, 0, 9).is_err());
    }

    #[test]
    fn single_map_layer_reduces_to_alpha_times_activation() {
        let spec = NetworkSpec {
            name: "single".into(),
            input_ch: 1,
            input_size: 8,
            layers: vec![
                LayerSpec::Conv { in_ch: 1, out_ch: 1 },
                LayerSpec::Dense {
                    in_features: 64,
                    out_features: 10,
                    relu: false,
                },
            ],
        };
        let model = NetworkModel::<f32>::init(&spec, 5).unwrap();
        let image = random_image(64, 6);
        let cam = grad_cam(&model, &image, 3, 0).unwrap();
        assert_eq!(cam.alphas.len(), 1);
        let alpha = cam.alphas[0];

        // Recompute the activation and compare pointwise.
        let mut ws = Workspace::new(&model);
        forward_image(&model, &mut ws, &image).unwrap();
        let acts = ws.conv_activations(&model, 0).unwrap();
        for (m, &a) in cam.raw.iter().zip(acts.iter()) {
            let expected = (alpha * a).max(0.0);
            assert!((m - expected).abs() <= 1e-6, "{m} vs {expected}");
        }
    }

    /// Naive forward pass over `model.layers[start..]` beginning from given
    /// activations (f64). Test-only re-implementation for the oracle.
    fn tail_forward(model: &NetworkModel<f64>, start: usize, acts: &[f64]) -> Vec<f64> {
        let mut cur = acts.to_vec();
        for layer in &model.layers[start..] {
            match layer {
                Layer::Conv {
                    weight,
                    bias,
                    in_ch,
                    out_ch,
                    h,
                    w,
                } => {
                    let mut out = vec![0.0f64; out_ch * h * w];
                    for oc in 0..*out_ch {
                        for oy in 0..*h {
                            for ox in 0..*w {
                                let mut sum = bias.data[oc];
                                for ic in 0..*in_ch {
                                    for ky in 0..3usize {
                                        for kx in 0..3usize {
                                            let iy = oy as isize + ky as isize - 1;
                                            let ix = ox as isize + kx as isize - 1;
                                            if iy < 0
                                                || ix < 0
                                                || iy >= *h as isize
                                                || ix >= *w as isize
                                            {
                                                continue;
                                            }
                                            sum += weight.data
                                                [((oc * in_ch + ic) * 3 + ky) * 3 + kx]
                                                * cur[ic * h * w
                                                    + iy as usize * w
                                                    + ix as usize];
                                        }
                                    }
                                }
                                out[oc * h * w + oy * w + ox] = sum.max(0.0);
                            }
                        }
                    }
                    cur = out;
                }
                Layer::MaxPool { ch, h, w } => {
                    let (oh, ow) = (h / 2, w / 2);
                    let mut out = vec![0.0f64; ch * oh * ow];
                    for c in 0..*ch {
                        for py in 0..oh {
                            for px in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        best = best.max(
                                            cur[c * h * w + (py * 2 + dy) * w + px * 2 + dx],
                                        );
                                    }
                                }
                                out[c * oh * ow + py * ow + px] = best;
                            }
                        }
                    }
                    cur = out;
                }
                Layer::Dense { weight, bias, relu } => {
                    let (out_f, in_f) = (weight.shape[0], weight.shape[1]);
                    let mut out = vec![0.0f64; out_f];
                    for o in 0..out_f {
                        let mut sum = bias.data[o];
                        for i in 0..in_f {
                            sum += weight.data[o * in_f + i] * cur[i];
                        }
                        out[o] = if *relu { sum.max(0.0) } else { sum };
                    }
                    cur = out;
                }
            }
        }
        cur
    }

    #[test]
    fn finite_difference_oracle_confirms_heatmap() {
        let model32 = NetworkModel::<f32>::init(&cam_spec(), 7).unwrap();
        let model = model32.convert::<f64>();
        let image: Vec<f64> = random_image(144, 8).iter().map(|&v| v as f64).collect();
        let class = 2u8;
        let ordinal = 1usize;
        let layer_idx = model.spec.conv_layers()[ordinal];

        let cam = grad_cam(&model, &image, class, ordinal).unwrap();

        // Activations at the target layer.
        let mut ws = Workspace::new(&model);
        forward_image(&model, &mut ws, &image).unwrap();
        let acts = ws.conv_activations(&model, ordinal).unwrap().to_vec();
        let spatial = cam.height * cam.width;
        let ch = acts.len() / spatial;

        // α_k by central differences of y^c w.r.t. each activation pixel.
        let h = 1e-4;
        let mut alphas = vec![0.0f64; ch];
        for k in 0..ch {
            let mut grad_sum = 0.0;
            for j in 0..spatial {
                let mut plus = acts.clone();
                plus[k * spatial + j] += h;
                let yp = tail_forward(&model, layer_idx + 1, &plus)[class as usize];
                let mut minus = acts.clone();
                minus[k * spatial + j] -= h;
                let ym = tail_forward(&model, layer_idx + 1, &minus)[class as usize];
                grad_sum += (yp - ym) / (2.0 * h);
            }
            alphas[k] = grad_sum / spatial as f64;
        }
        let combined = combine_maps(&alphas, &acts, spatial);
        let expected: Vec<f64> = combined.iter().map(|&v| v.max(0.0)).collect();

        let scale = expected
            .iter()
            .cloned()
            .fold(0.0f64, f64::max)
            .max(1e-9);
        for (got, want) in cam.raw.iter().zip(expected.iter()) {
            assert!(
                ((*got as f64) - want).abs() <= 1e-3 * scale,
                "heatmap {} vs oracle {}",
                got,
                want
            );
        }
    }

    #[test]
    fn doubling_activations_doubles_the_pre_relu_combination() {
        let alphas = [0.3f64, -0.7, 1.1];
        let acts: Vec<f64> = (0..3 * 16).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let base = combine_maps(&alphas, &acts, 16);
        let doubled_acts: Vec<f64> = acts.iter().map(|a| 2.0 * a).collect();
        let doubled = combine_maps(&alphas, &doubled_acts, 16);
        for (d, b) in doubled.iter().zip(base.iter()) {
            assert!((d - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_upsampling_makes_constant_blocks() {
        let raw = vec![1.0f32, 2.0, 3.0, 4.0];
        let up = upsample_nearest(&raw, 2, 2);
        assert_eq!(up.get(0, 0), 1.0);
        assert_eq!(up.get(0, 111), 1.0);
        assert_eq!(up.get(0, 112), 2.0);
        assert_eq!(up.get(111, 111), 1.0);
        assert_eq!(up.get(112, 0), 3.0);
        assert_eq!(up.get(223, 223), 4.0);
        // Entire quadrant is constant.
        for r in 0..112 {
            for c in 0..112 {
                assert_eq!(up.get(r, c), 1.0);
            }
        }
    }

    fn synthetic_heatmap(upsampled: Matrix) -> CamHeatmap {
        CamHeatmap {
            conv_ordinal: 0,
            class: 4,
            height: IMAGE_SIZE,
            width: IMAGE_SIZE,
            raw: upsampled.data().to_vec(),
            alphas: vec![1.0],
            upsampled,
        }
    }

    #[test]
    fn overlay_export_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("cam0");
        let image = Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE);

        // Zero map → overlay equals the image.
        let cam = synthetic_heatmap(Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE));
        export_overlay(&cam, &image, &stem, None).unwrap();
        let overlay = std::fs::read(dir.path().join("cam0_overlay.pgm")).unwrap();
        let header = b"P5\n224 224\n255\n";
        assert!(overlay.starts_with(header));
        assert!(overlay[header.len()..].iter().all(|&b| b == 0));
        assert!(dir.path().join("cam0.csv").exists());
        assert!(dir.path().join("cam0.json").exists());

        // Constant map over a zero image → uniform half-intensity overlay.
        let mut constant = Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE);
        for r in 0..IMAGE_SIZE {
            for c in 0..IMAGE_SIZE {
                constant.set(r, c, 0.8);
            }
        }
        let cam = synthetic_heatmap(constant);
        export_overlay(&cam, &image, &stem, Some(0.5)).unwrap();
        let overlay = std::fs::read(dir.path().join("cam0_overlay.pgm")).unwrap();
        assert!(overlay[header.len()..].iter().all(|&b| b == 127));
    }

    #[test]
    fn attention_overlap_on_synthetic_maps() {
        // Hot only inside the fault strip: columns 10..=12 of the SDI under
        // whole-matrix tiling.
        let fault_cols = vec![10usize, 11, 12];
        let mut hot = Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE);
        for r in PAD_TOP..PAD_TOP + DUP_ROWS {
            for c in PAD_LEFT..PAD_LEFT + DUP_COLS {
                let src = AugMethod::AllTile.source_column(c - PAD_LEFT);
                if fault_cols.contains(&src) {
                    hot.set(r, c, 1.0);
                }
            }
        }
        let cam = synthetic_heatmap(hot);
        let overlap = attention_overlap(&cam, AugMethod::AllTile, &fault_cols).unwrap();
        assert_eq!(overlap, 1.0);

        // Uniform map → fraction equals the fault's share of SDI columns.
        let mut uniform = Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE);
        for r in 0..IMAGE_SIZE {
            for c in 0..IMAGE_SIZE {
                uniform.set(r, c, 0.5);
            }
        }
        let cam = synthetic_heatmap(uniform);
        let overlap = attention_overlap(&cam, AugMethod::AllTile, &fault_cols).unwrap();
        let share = fault_cols.len() as f64 / SDI_COLS as f64;
        assert!(
            (overlap - share).abs() < 0.02,
            "overlap {overlap} vs share {share}"
        );

        // Zero map → error; empty span → error.
        let cam = synthetic_heatmap(Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE));
        assert!(attention_overlap(&cam, AugMethod::AllTile, &fault_cols).is_err());
        let cam = synthetic_heatmap(uniform_matrix());
        assert!(attention_overlap(&cam, AugMethod::AllTile, &[]).is_err());
    }

    fn uniform_matrix() -> Matrix {
        let mut m = Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE);
        for r in 0..IMAGE_SIZE {
            for c in 0..IMAGE_SIZE {
                m.set(r, c, 1.0);
            }
        }
        m
    }
}
