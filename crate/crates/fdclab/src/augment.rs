//! SDI inflation: 15×31 → 224×224.
//!
//! Three primitives build every method. *Tile* repeats the matrix as a whole
//! in a block grid; *Repeat* broadcasts each element into a constant block;
//! *Flip* reverses column (left-right) or row (up-down) order. Each method
//! first builds a 210×217 duplication — 14 row-blocks by 7 column-blocks of
//! the source — and then zero-pads asymmetrically (7 rows top and bottom,
//! 3 columns left, 4 right) to the 224×224 classifier input size.
//!
//! The duplication is a rearrangement of exactly 14·7 = 98 copies of the
//! source, so the value multiset is preserved 98-fold by all seven methods.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sdi::{SDIMatrix, SDI_COLS, SDI_ROWS};
use serde::{Deserialize, Serialize};

/// Vertical duplication count (rows: 15 × 14 = 210).
pub const TILE_ROWS: usize = 14;
/// Horizontal duplication count (columns: 31 × 7 = 217).
pub const TILE_COLS: usize = 7;
pub const DUP_ROWS: usize = SDI_ROWS * TILE_ROWS;
pub const DUP_COLS: usize = SDI_COLS * TILE_COLS;
pub const IMAGE_SIZE: usize = 224;
pub const PAD_TOP: usize = 7;
pub const PAD_BOTTOM: usize = 7;
pub const PAD_LEFT: usize = 3;
pub const PAD_RIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlipAxis {
    /// Reverse column order.
    LeftRight,
    /// Reverse row order.
    UpDown,
}

/// The seven inflation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugMethod {
    AllTile,
    AllRepeat,
    AllFlip,
    LrFlipTile,
    LrFlipRepeat,
    UdFlipTile,
    UdFlipRepeat,
}

impl AugMethod {
    pub const ALL: [AugMethod; 7] = [
        AugMethod::AllTile,
        AugMethod::AllRepeat,
        AugMethod::AllFlip,
        AugMethod::LrFlipTile,
        AugMethod::LrFlipRepeat,
        AugMethod::UdFlipTile,
        AugMethod::UdFlipRepeat,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AugMethod::AllTile => "All_Tile",
            AugMethod::AllRepeat => "All_Repeat",
            AugMethod::AllFlip => "All_Flip",
            AugMethod::LrFlipTile => "LR_Flip_Tile",
            AugMethod::LrFlipRepeat => "LR_Flip_Repeat",
            AugMethod::UdFlipTile => "UD_Flip_Tile",
            AugMethod::UdFlipRepeat => "UD_Flip_Repeat",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::invalid(format!("unknown augmentation method {name:?}")))
    }

    /// Maps an interior (unpadded) duplication column back to the source SDI
    /// column it was copied from. Row-block structure never mixes columns,
    /// so the map only depends on the horizontal layout.
    pub fn source_column(&self, dup_col: usize) -> usize {
        debug_assert!(dup_col < DUP_COLS);
        match self {
            // Whole-matrix horizontal tiling.
            AugMethod::AllTile | AugMethod::UdFlipTile => dup_col % SDI_COLS,
            // Element broadcast: each source column becomes 7 adjacent ones.
            AugMethod::AllRepeat | AugMethod::UdFlipRepeat => dup_col / TILE_COLS,
            // Alternating [M, M_lr, ...] blocks; odd blocks are mirrored.
            AugMethod::AllFlip | AugMethod::LrFlipTile | AugMethod::LrFlipRepeat => {
                let block = dup_col / SDI_COLS;
                let j = dup_col % SDI_COLS;
                if block % 2 == 1 {
                    SDI_COLS - 1 - j
                } else {
                    j
                }
            }
        }
    }

    /// Maps an interior duplication row back to its source SDI row; the
    /// vertical counterpart of [`AugMethod::source_column`]. Every method's
    /// duplication factors into independent row and column maps.
    pub fn source_row(&self, dup_row: usize) -> usize {
        debug_assert!(dup_row < DUP_ROWS);
        match self {
            AugMethod::AllTile | AugMethod::LrFlipTile => dup_row % SDI_ROWS,
            AugMethod::AllRepeat | AugMethod::LrFlipRepeat => dup_row / TILE_ROWS,
            // Alternating [M; M_ud; ...] blocks; odd blocks are mirrored.
            AugMethod::AllFlip | AugMethod::UdFlipTile | AugMethod::UdFlipRepeat => {
                let block = dup_row / SDI_ROWS;
                let j = dup_row % SDI_ROWS;
                if block % 2 == 1 {
                    SDI_ROWS - 1 - j
                } else {
                    j
                }
            }
        }
    }
}

/// Allocation-free inflation of a flat 15×31 record into a flat 224×224
/// buffer via the separable row/column maps. Matches [`augment_values`]
/// exactly.
pub fn write_augmented(record: &[f32], method: AugMethod, out: &mut [f32]) {
    debug_assert_eq!(record.len(), SDI_ROWS * SDI_COLS);
    debug_assert_eq!(out.len(), IMAGE_SIZE * IMAGE_SIZE);
    out.fill(0.0);
    let mut col_map = [0usize; DUP_COLS];
    for (c, slot) in col_map.iter_mut().enumerate() {
        *slot = method.source_column(c);
    }
    for r in 0..DUP_ROWS {
        let src = &record[method.source_row(r) * SDI_COLS..(method.source_row(r) + 1) * SDI_COLS];
        let dst = &mut out[(PAD_TOP + r) * IMAGE_SIZE + PAD_LEFT
            ..(PAD_TOP + r) * IMAGE_SIZE + PAD_LEFT + DUP_COLS];
        for (d, &m) in dst.iter_mut().zip(col_map.iter()) {
            *d = src[m];
        }
    }
}

impl std::fmt::Display for AugMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A 224×224 inflated SDI.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedImage {
    pub values: Matrix,
    pub method: AugMethod,
    pub label: u8,
}

/// Block grid of `a`×`b` whole copies of `m`.
pub fn tile(m: &Matrix, a: usize, b: usize) -> Matrix {
    assert!(a >= 1 && b >= 1);
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = Matrix::zeros(rows * a, cols * b);
    for r in 0..rows * a {
        let src = m.row(r % rows);
        let dst = out.row_mut(r);
        for block in 0..b {
            dst[block * cols..(block + 1) * cols].copy_from_slice(src);
        }
    }
    out
}

/// Broadcasts every element of `m` into an `a`×`b` constant block, blocks in
/// source order.
pub fn repeat_elements(m: &Matrix, a: usize, b: usize) -> Matrix {
    assert!(a >= 1 && b >= 1);
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = Matrix::zeros(rows * a, cols * b);
    for r in 0..rows * a {
        let src = m.row(r / a);
        let dst = out.row_mut(r);
        for c in 0..cols * b {
            dst[c] = src[c / b];
        }
    }
    out
}

/// Reverses column order (`LeftRight`) or row order (`UpDown`).
pub fn flip(m: &Matrix, axis: FlipAxis) -> Matrix {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = match axis {
                FlipAxis::LeftRight => m.get(r, cols - 1 - c),
                FlipAxis::UpDown => m.get(rows - 1 - r, c),
            };
            out.set(r, c, v);
        }
    }
    out
}

/// Horizontal concatenation.
fn hcat(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks[0].rows();
    let cols: usize = blocks.iter().map(|b| b.cols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let dst = out.row_mut(r);
        let mut offset = 0;
        for b in blocks {
            dst[offset..offset + b.cols()].copy_from_slice(b.row(r));
            offset += b.cols();
        }
    }
    out
}

/// Vertical concatenation.
fn vcat(blocks: &[&Matrix]) -> Matrix {
    let cols = blocks[0].cols();
    let rows: usize = blocks.iter().map(|b| b.rows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut offset = 0;
    for b in blocks {
        for r in 0..b.rows() {
            out.row_mut(offset + r).copy_from_slice(b.row(r));
        }
        offset += b.rows();
    }
    out
}

/// Pads a 210×217 duplication to 224×224 with the fixed asymmetric zero
/// border: 7 rows top/bottom, 3 columns left, 4 columns right.
pub fn zero_pad(m: &Matrix) -> Result<Matrix> {
    if m.rows() != DUP_ROWS || m.cols() != DUP_COLS {
        return Err(Error::shape(
            "zero_pad",
            format!("{DUP_ROWS}x{DUP_COLS}"),
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    let mut out = Matrix::zeros(IMAGE_SIZE, IMAGE_SIZE);
    for r in 0..DUP_ROWS {
        out.row_mut(PAD_TOP + r)[PAD_LEFT..PAD_LEFT + DUP_COLS].copy_from_slice(m.row(r));
    }
    Ok(out)
}

/// Builds the 210×217 duplication for a method.
fn duplicate(m: &Matrix, method: AugMethod) -> Matrix {
    match method {
        AugMethod::AllTile => tile(m, TILE_ROWS, TILE_COLS),
        AugMethod::AllRepeat => repeat_elements(m, TILE_ROWS, TILE_COLS),
        AugMethod::AllFlip => {
            // Horizontal alternation, then vertical alternation of the strip
            // with its up-down flip.
            let lr = flip(m, FlipAxis::LeftRight);
            let strip = alternating_hcat(m, &lr, TILE_COLS);
            let strip_ud = flip(&strip, FlipAxis::UpDown);
            alternating_vcat(&strip, &strip_ud, TILE_ROWS)
        }
        AugMethod::LrFlipTile => {
            let lr = flip(m, FlipAxis::LeftRight);
            let strip = alternating_hcat(m, &lr, TILE_COLS);
            tile(&strip, TILE_ROWS, 1)
        }
        AugMethod::LrFlipRepeat => {
            let lr = flip(m, FlipAxis::LeftRight);
            let strip = alternating_hcat(m, &lr, TILE_COLS);
            repeat_elements(&strip, TILE_ROWS, 1)
        }
        AugMethod::UdFlipTile => {
            let ud = flip(m, FlipAxis::UpDown);
            let column = alternating_vcat(m, &ud, TILE_ROWS);
            tile(&column, 1, TILE_COLS)
        }
        AugMethod::UdFlipRepeat => {
            let ud = flip(m, FlipAxis::UpDown);
            let column = alternating_vcat(m, &ud, TILE_ROWS);
            repeat_elements(&column, 1, TILE_COLS)
        }
    }
}

fn alternating_hcat(a: &Matrix, b: &Matrix, n: usize) -> Matrix {
    let blocks: Vec<&Matrix> = (0..n).map(|i| if i % 2 == 0 { a } else { b }).collect();
    hcat(&blocks)
}

fn alternating_vcat(a: &Matrix, b: &Matrix, n: usize) -> Matrix {
    let blocks: Vec<&Matrix> = (0..n).map(|i| if i % 2 == 0 { a } else { b }).collect();
    vcat(&blocks)
}

/// Inflates an SDI with the chosen method.
pub fn augment(sdi: &SDIMatrix, method: AugMethod) -> Result<AugmentedImage> {
    let values = augment_values(&sdi.values, method)?;
    Ok(AugmentedImage {
        values,
        method,
        label: sdi.label,
    })
}

/// Inflates a bare 15×31 matrix.
pub fn augment_values(values: &Matrix, method: AugMethod) -> Result<Matrix> {
    if values.rows() != SDI_ROWS || values.cols() != SDI_COLS {
        return Err(Error::shape(
            "augment",
            format!("{SDI_ROWS}x{SDI_COLS}"),
            format!("{}x{}", values.rows(), values.cols()),
        ));
    }
    zero_pad(&duplicate(values, method))
}

/// Writes the augmented image directly into a flat 224×224 buffer without
/// intermediate allocations. Used by the training data loader.
pub fn augment_into(values: &Matrix, method: AugMethod, out: &mut [f32]) -> Result<()> {
    if out.len() != IMAGE_SIZE * IMAGE_SIZE {
        return Err(Error::shape(
            "augment_into",
            format!("{} values", IMAGE_SIZE * IMAGE_SIZE),
            format!("{} values", out.len()),
        ));
    }
    let img = augment_values(values, method)?;
    out.copy_from_slice(img.data());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::RngExt;

    fn small(values: &[f32], rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, values.to_vec()).unwrap()
    }

    fn random_sdi(seed: u64) -> Matrix {
        let mut rng = stream_rng(seed, 0xAA);
        Matrix::from_vec(
            SDI_ROWS,
            SDI_COLS,
            (0..SDI_ROWS * SDI_COLS)
                .map(|_| rng.random_range(0.0..1.0f32))
                .collect(),
        )
        .unwrap()
    }

    fn sorted_multiset(values: &[f32]) -> Vec<u32> {
        let mut v: Vec<u32> = values.iter().map(|f| f.to_bits()).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn tile_small_example() {
        let m = small(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let t = tile(&m, 2, 2);
        assert_eq!(
            t.data(),
            &[
                1.0, 2.0, 1.0, 2.0, //
                3.0, 4.0, 3.0, 4.0, //
                1.0, 2.0, 1.0, 2.0, //
                3.0, 4.0, 3.0, 4.0
            ]
        );
        assert_eq!(tile(&m, 1, 1), m);
    }

    #[test]
    fn tile_reaches_duplication_size() {
        let t = tile(&random_sdi(1), TILE_ROWS, TILE_COLS);
        assert_eq!((t.rows(), t.cols()), (DUP_ROWS, DUP_COLS));
    }

    #[test]
    fn repeat_small_examples() {
        let m = small(&[1.0, 2.0], 1, 2);
        let r = repeat_elements(&m, 2, 2);
        assert_eq!(r.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);

        let single = small(&[5.0], 1, 1);
        let r = repeat_elements(&single, 3, 3);
        assert_eq!((r.rows(), r.cols()), (3, 3));
        assert!(r.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn repeat_preserves_value_counts() {
        let sdi = random_sdi(2);
        let r = repeat_elements(&sdi, TILE_ROWS, TILE_COLS);
        // Every source value appears exactly 98 times.
        let mut expected = Vec::new();
        for _ in 0..TILE_ROWS * TILE_COLS {
            expected.extend_from_slice(sdi.data());
        }
        assert_eq!(sorted_multiset(r.data()), sorted_multiset(&expected));
    }

    #[test]
    fn flip_involution_and_examples() {
        let m = small(&[1.0, 2.0, 3.0], 1, 3);
        assert_eq!(flip(&m, FlipAxis::LeftRight).data(), &[3.0, 2.0, 1.0]);

        let sdi = random_sdi(3);
        for axis in [FlipAxis::LeftRight, FlipAxis::UpDown] {
            assert_eq!(flip(&flip(&sdi, axis), axis), sdi);
        }
        // lr∘ud = ud∘lr = 180° rotation.
        let a = flip(&flip(&sdi, FlipAxis::LeftRight), FlipAxis::UpDown);
        let b = flip(&flip(&sdi, FlipAxis::UpDown), FlipAxis::LeftRight);
        assert_eq!(a, b);
        for r in 0..sdi.rows() {
            for c in 0..sdi.cols() {
                assert_eq!(
                    a.get(r, c),
                    sdi.get(sdi.rows() - 1 - r, sdi.cols() - 1 - c)
                );
            }
        }
    }

    #[test]
    fn zero_pad_geometry() {
        let ones = Matrix::from_vec(DUP_ROWS, DUP_COLS, vec![1.0; DUP_ROWS * DUP_COLS]).unwrap();
        let padded = zero_pad(&ones).unwrap();
        assert_eq!((padded.rows(), padded.cols()), (IMAGE_SIZE, IMAGE_SIZE));
        let sum: f64 = padded.data().iter().map(|&v| v as f64).sum();
        assert_eq!(sum, (DUP_ROWS * DUP_COLS) as f64); // 45,570
        assert_eq!(padded.get(PAD_TOP, PAD_LEFT), 1.0);
        assert_eq!(padded.get(PAD_TOP + DUP_ROWS - 1, PAD_LEFT + DUP_COLS - 1), 1.0);
        // Border strictly zero.
        for r in 0..IMAGE_SIZE {
            for c in 0..IMAGE_SIZE {
                let interior = (PAD_TOP..PAD_TOP + DUP_ROWS).contains(&r)
                    && (PAD_LEFT..PAD_LEFT + DUP_COLS).contains(&c);
                if !interior {
                    assert_eq!(padded.get(r, c), 0.0, "border at ({r},{c})");
                }
            }
        }

        let zeros = Matrix::zeros(DUP_ROWS, DUP_COLS);
        assert!(zero_pad(&zeros).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(zero_pad(&Matrix::zeros(10, 10)).is_err());
    }

    #[test]
    fn offsets_match_pad_definition() {
        let sdi = random_sdi(4);
        let dup = duplicate(&sdi, AugMethod::AllTile);
        let padded = zero_pad(&dup).unwrap();
        assert_eq!(padded.get(7, 3), dup.get(0, 0));
        assert_eq!(padded.get(216, 219), dup.get(209, 216));
    }

    #[test]
    fn all_methods_produce_exact_geometry_and_multiset() {
        let sdi = random_sdi(5);
        let mut source_multiset = Vec::new();
        for _ in 0..TILE_ROWS * TILE_COLS {
            source_multiset.extend_from_slice(sdi.data());
        }
        let expected = sorted_multiset(&source_multiset);

        for method in AugMethod::ALL {
            let img = augment_values(&sdi, method).unwrap();
            assert_eq!((img.rows(), img.cols()), (IMAGE_SIZE, IMAGE_SIZE));

            let mut interior = Vec::with_capacity(DUP_ROWS * DUP_COLS);
            for r in 0..IMAGE_SIZE {
                for c in 0..IMAGE_SIZE {
                    let inside = (PAD_TOP..PAD_TOP + DUP_ROWS).contains(&r)
                        && (PAD_LEFT..PAD_LEFT + DUP_COLS).contains(&c);
                    if inside {
                        interior.push(img.get(r, c));
                    } else {
                        assert_eq!(img.get(r, c), 0.0, "{method} border at ({r},{c})");
                    }
                }
            }
            assert_eq!(
                sorted_multiset(&interior),
                expected,
                "{method} multiset mismatch"
            );
        }
    }

    #[test]
    fn all_tile_interior_origin_block_equals_sdi() {
        let sdi = random_sdi(6);
        let img = augment_values(&sdi, AugMethod::AllTile).unwrap();
        for r in 0..SDI_ROWS {
            for c in 0..SDI_COLS {
                assert_eq!(img.get(PAD_TOP + r, PAD_LEFT + c), sdi.get(r, c));
            }
        }
    }

    #[test]
    fn constant_sdi_collapses_all_methods() {
        let sdi = Matrix::from_vec(SDI_ROWS, SDI_COLS, vec![0.5; SDI_ROWS * SDI_COLS]).unwrap();
        let reference = augment_values(&sdi, AugMethod::AllTile).unwrap();
        for method in AugMethod::ALL {
            assert_eq!(augment_values(&sdi, method).unwrap(), reference);
        }
    }

    #[test]
    fn tile_and_repeat_agree_on_constants() {
        let m = small(&[2.5; 6], 2, 3);
        assert_eq!(tile(&m, 4, 5), repeat_elements(&m, 4, 5));
        let one = small(&[1.25], 1, 1);
        assert_eq!(tile(&one, 3, 2), repeat_elements(&one, 3, 2));
    }

    #[test]
    fn wrong_sdi_shape_is_rejected() {
        let bad = Matrix::zeros(10, 31);
        assert!(augment_values(&bad, AugMethod::AllTile).is_err());
    }

    #[test]
    fn source_column_maps_are_consistent_with_layout() {
        let mut sdi = Matrix::zeros(SDI_ROWS, SDI_COLS);
        // Encode the column index in the value so the map can be read back.
        for r in 0..SDI_ROWS {
            for c in 0..SDI_COLS {
                sdi.set(r, c, c as f32);
            }
        }
        for method in AugMethod::ALL {
            let dup = duplicate(&sdi, method);
            for c in 0..DUP_COLS {
                let expected = method.source_column(c) as f32;
                for r in 0..DUP_ROWS {
                    assert_eq!(dup.get(r, c), expected, "{method} col {c} row {r}");
                }
            }
        }
    }

    #[test]
    fn fast_path_matches_reference_composition() {
        let sdi = random_sdi(11);
        let mut out = vec![0.0f32; IMAGE_SIZE * IMAGE_SIZE];
        for method in AugMethod::ALL {
            write_augmented(sdi.data(), method, &mut out);
            let reference = augment_values(&sdi, method).unwrap();
            assert_eq!(out.as_slice(), reference.data(), "{method}");
        }
    }

    #[test]
    fn method_names_round_trip() {
        for method in AugMethod::ALL {
            assert_eq!(AugMethod::from_name(method.name()).unwrap(), method);
        }
        assert!(AugMethod::from_name("bogus").is_err());
    }
}
