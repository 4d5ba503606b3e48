//! Sensor Data Images: 15×31 grayscale stacks of measured sensor histories.
//!
//! At a query time `t`, the 30 s window `[t-30, t]` (both endpoints included)
//! is cropped from the measured channels, downsampled to 1 Hz by
//! nearest-sample selection (31 columns), stacked with one row per sensor in
//! the canonical row order, and linearly normalized to [0, 1] along each row.

use crate::dynamics::{SensorChannel, SensorTrajectory};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::io::{Cursor, Read};
use std::path::Path;

pub const SDI_ROWS: usize = 15;
pub const SDI_COLS: usize = 31;
/// History window length, s.
pub const SDI_WINDOW_S: f64 = 30.0;
/// Downsampled rate, Hz; with the 30 s window this yields 31 columns.
pub const SDI_RATE_HZ: f64 = 1.0;

/// Canonical row order: air data on top, then load factors, rotational
/// speeds, attitude angles, and position.
pub fn row_order() -> &'static [SensorChannel; SDI_ROWS] {
    &SensorChannel::ALL
}

/// A row-normalized SDI with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct SDIMatrix {
    /// 15×31, every entry in [0, 1].
    pub values: Matrix,
    /// Fault case id at the window's final instant.
    pub label: u8,
    /// Query time the window ends at, s.
    pub t_end: f64,
}

/// Crops `[t-30, t]` from the measured channels at 1 Hz without any
/// normalization; rows in canonical order, native units.
pub fn crop_and_downsample(
    traj: &SensorTrajectory,
    t: f64,
) -> Result<[[f64; SDI_COLS]; SDI_ROWS]> {
    let start = t - SDI_WINDOW_S;
    if start < -1e-9 || t > traj.end_time() + 1e-9 {
        return Err(Error::WindowOutOfRange {
            start,
            end: t,
            have_start: 0.0,
            have_end: traj.end_time(),
        });
    }
    let mut out = [[0.0; SDI_COLS]; SDI_ROWS];
    for (col, slot) in (0..SDI_COLS).map(|k| (k, k as f64 / SDI_RATE_HZ)) {
        let t_col = start + slot;
        // Nearest sample at the trajectory's native rate.
        let idx = ((t_col * traj.sample_rate).round().max(0.0) as usize).min(traj.len() - 1);
        let sample = &traj.measured[idx];
        for (row, ch) in row_order().iter().enumerate() {
            out[row][col] = sample.channel(*ch);
        }
    }
    Ok(out)
}

/// Linear per-row normalization to [0, 1]. A constant row has no range and
/// maps to mid-gray 0.5.
pub fn normalize_rows(raw: &[[f64; SDI_COLS]; SDI_ROWS]) -> Result<Matrix> {
    let mut out = Matrix::zeros(SDI_ROWS, SDI_COLS);
    for (r, row) in raw.iter().enumerate() {
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(format!("NaN in SDI row {r}")));
        }
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        let dst = out.row_mut(r);
        if span == 0.0 {
            dst.fill(0.5);
        } else {
            for (c, &v) in row.iter().enumerate() {
                dst[c] = ((v - min) / span) as f32;
            }
        }
    }
    Ok(out)
}

/// Crop, downsample, normalize, and label. The label is the trajectory's
/// fault case at the window's final instant `t`.
pub fn stack_sdi(traj: &SensorTrajectory, t: f64) -> Result<SDIMatrix> {
    let raw = crop_and_downsample(traj, t)?;
    let values = normalize_rows(&raw)?;
    let label = traj.labels[traj.index_at(t)];
    Ok(SDIMatrix {
        values,
        label,
        t_end: t,
    })
}

/// SDI time columns (0..=30) that a fault spanning `[onset, onset+duration]`
/// covers in a window ending at `t_end`.
pub fn fault_columns(t_end: f64, onset_s: f64, duration_s: f64) -> Vec<usize> {
    (0..SDI_COLS)
        .filter(|&k| {
            let t_col = t_end - SDI_WINDOW_S + k as f64;
            t_col >= onset_s - 1e-9 && t_col <= onset_s + duration_s + 1e-9
        })
        .collect()
}

/// In-memory SDI dataset: flat f32 records plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SdiDataset {
    data: Vec<f32>,
    labels: Vec<u8>,
}

pub const RECORD_LEN: usize = SDI_ROWS * SDI_COLS;

impl SdiDataset {
    pub fn new() -> Self {
        SdiDataset {
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, sdi: &SDIMatrix) {
        debug_assert_eq!(sdi.values.rows(), SDI_ROWS);
        debug_assert_eq!(sdi.values.cols(), SDI_COLS);
        self.data.extend_from_slice(sdi.values.data());
        self.labels.push(sdi.label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn record(&self, i: usize) -> &[f32] {
        &self.data[i * RECORD_LEN..(i + 1) * RECORD_LEN]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_histogram(&self) -> [u64; 10] {
        let mut hist = [0u64; 10];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }

    /// Keeps only the first `n` records.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.data.truncate(n * RECORD_LEN);
            self.labels.truncate(n);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * (RECORD_LEN * 4 + 1));
        for i in 0..self.len() {
            for &v in self.record(i) {
                out.write_f32::<LittleEndian>(v).unwrap();
            }
            out.push(self.labels[i]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], count: usize) -> Result<Self> {
        let expected = count * (RECORD_LEN * 4 + 1);
        if bytes.len() != expected {
            return Err(Error::Archive(format!(
                "dataset blob is {} bytes, expected {expected} for {count} records",
                bytes.len()
            )));
        }
        let mut cur = Cursor::new(bytes);
        let mut data = Vec::with_capacity(count * RECORD_LEN);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            for _ in 0..RECORD_LEN {
                data.push(cur.read_f32::<LittleEndian>().unwrap());
            }
            let mut label = [0u8; 1];
            cur.read_exact(&mut label).unwrap();
            if label[0] > 9 {
                return Err(Error::Archive(format!("label {} out of range", label[0])));
            }
            labels.push(label[0]);
        }
        Ok(SdiDataset { data, labels })
    }
}

impl Default for SdiDataset {
    fn default() -> Self {
        Self::new()
    }
}

/// Seeds recorded alongside a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSeeds {
    pub master: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub count: usize,
    pub row_order: Vec<String>,
    pub label_histogram: [u64; 10],
    pub seeds: DatasetSeeds,
    pub blob_file: String,
}

pub const BLOB_FILE: &str = "sdi.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `manifest.json` plus the binary record blob into `dir`.
pub fn save_dataset(dataset: &SdiDataset, dir: impl AsRef<Path>, seeds: DatasetSeeds) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        count: dataset.len(),
        row_order: row_order().iter().map(|c| c.name().to_string()).collect(),
        label_histogram: dataset.label_histogram(),
        seeds,
        blob_file: BLOB_FILE.to_string(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    std::fs::write(dir.join(BLOB_FILE), dataset.to_bytes())?;
    Ok(())
}

/// Loads and cross-checks a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(SdiDataset, DatasetManifest)> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest =
        serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
    let expected_rows: Vec<String> = row_order().iter().map(|c| c.name().to_string()).collect();
    if manifest.row_order != expected_rows {
        return Err(Error::Archive(format!(
            "row order mismatch: {:?}",
            manifest.row_order
        )));
    }
    let blob = std::fs::read(dir.join(&manifest.blob_file))?;
    let dataset = SdiDataset::from_bytes(&blob, manifest.count)?;
    if dataset.label_histogram() != manifest.label_histogram {
        return Err(Error::Archive(
            "label histogram does not match manifest".into(),
        ));
    }
    Ok((dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AircraftState, LoadFactors, Sample};
    use crate::faults::{apply_faults, FaultCase, FaultEvent, FaultSchedule};
    use proptest::prelude::*;

    /// Trajectory whose every channel equals the sample index (a ramp).
    fn ramp_trajectory(n: usize, sample_rate: f64) -> SensorTrajectory {
        let mk = |v: f64| Sample {
            state: AircraftState {
                v,
                alpha: v,
                beta: v,
                psi: v,
                theta: v,
                phi: v,
                wx: v,
                wy: v,
                wz: v,
                x: v,
                y: v,
                z: v,
            },
            loads: LoadFactors {
                gx: v,
                gy: v,
                gz: v,
            },
        };
        SensorTrajectory {
            sample_rate,
            clean: (0..n).map(|i| mk(i as f64)).collect(),
            measured: (0..n).map(|i| mk(i as f64)).collect(),
            labels: vec![0; n],
        }
    }

    #[test]
    fn window_has_31_columns_with_nearest_sample_selection() {
        // 20 Hz ramp: column k of a window ending at t holds sample
        // round((t - 30 + k) * 20).
        let traj = ramp_trajectory(2000, 20.0);
        for &t in &[30.0, 41.0, 35.7, 64.25] {
            let raw = crop_and_downsample(&traj, t).unwrap();
            for k in 0..SDI_COLS {
                let expected = ((t - 30.0 + k as f64) * 20.0).round();
                for row in raw.iter() {
                    assert_eq!(row[k], expected, "t={t} k={k}");
                }
            }
        }
    }

    #[test]
    fn out_of_range_window_reports_available_span() {
        let traj = ramp_trajectory(100, 20.0);
        let err = crop_and_downsample(&traj, 20.0).unwrap_err();
        assert!(matches!(err, Error::WindowOutOfRange { .. }));
        let err = crop_and_downsample(&traj, 1000.0).unwrap_err();
        match err {
            Error::WindowOutOfRange { have_end, .. } => {
                assert!((have_end - 99.0 / 20.0).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_trajectory_gives_constant_matrix() {
        let mut traj = ramp_trajectory(100, 2.0);
        for s in traj.measured.iter_mut() {
            *s = traj.clean[0];
        }
        let raw = crop_and_downsample(&traj, 40.0).unwrap();
        for row in raw.iter() {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn normalize_maps_rows_to_unit_range() {
        let mut raw = [[7.0; SDI_COLS]; SDI_ROWS];
        raw[0] = [3.0; SDI_COLS];
        raw[0][0] = 1.0;
        raw[0][1] = 2.0;
        let m = normalize_rows(&raw).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 1), 0.5);
        assert_eq!(m.get(0, 2), 1.0);
        // Constant rows map to mid-gray.
        assert!(m.row(1).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn normalize_rejects_nan() {
        let mut raw = [[0.0; SDI_COLS]; SDI_ROWS];
        raw[3][5] = f64::NAN;
        assert!(normalize_rows(&raw).is_err());
    }

    #[test]
    fn label_is_taken_at_the_final_instant() {
        let mut traj = ramp_trajectory(3000, 20.0);
        traj.sample_rate = 20.0;
        // Fault strictly inside the window but over before t.
        let schedule = FaultSchedule {
            window_s: crate::faults::FAULT_WINDOW,
            events: vec![FaultEvent {
                case: FaultCase::AoaDrift,
                onset_s: 20.0,
                duration_s: 10.0,
                magnitude: 8.0,
                sign: 1,
            }],
        };
        let faulted = apply_faults(&traj, &schedule, 0).unwrap();

        let sdi_mid = stack_sdi(&faulted, 55.0).unwrap();
        assert_eq!(sdi_mid.label, 0, "fault ended before t");
        // Fault pixels still visible inside the window ending at 35 s.
        let sdi_vis = stack_sdi(&faulted, 35.0).unwrap();
        assert_eq!(sdi_vis.label, 0);
        let clean_sdi = stack_sdi(&traj, 35.0).unwrap();
        assert_ne!(sdi_vis.values, clean_sdi.values);

        // Query inside the span picks up the label.
        let sdi_in = stack_sdi(&faulted, 30.0).unwrap();
        assert_eq!(sdi_in.label, 2);
    }

    #[test]
    fn no_fault_anywhere_means_label_zero() {
        let traj = ramp_trajectory(1200, 20.0);
        let sdi = stack_sdi(&traj, 45.0).unwrap();
        assert_eq!(sdi.label, 0);
    }

    #[test]
    fn fault_columns_cover_span() {
        // Window [1, 31], fault [21, 31]: columns 20..=30.
        let cols = fault_columns(31.0, 21.0, 10.0);
        assert_eq!(cols, (20..=30).collect::<Vec<_>>());
        assert!(fault_columns(100.0, 0.0, 5.0).is_empty());
    }

    #[test]
    fn dataset_round_trip() {
        let traj = ramp_trajectory(4000, 20.0);
        let mut ds = SdiDataset::new();
        for t in 30..120 {
            ds.push(&stack_sdi(&traj, t as f64).unwrap());
        }
        assert_eq!(ds.len(), 90);
        let bytes = ds.to_bytes();
        let back = SdiDataset::from_bytes(&bytes, ds.len()).unwrap();
        assert_eq!(back, ds);

        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path(), DatasetSeeds { master: 7 }).unwrap();
        let (loaded, manifest) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, ds);
        assert_eq!(manifest.count, 90);
        assert_eq!(manifest.seeds.master, 7);
        assert_eq!(manifest.label_histogram[0], 90);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let traj = ramp_trajectory(4000, 20.0);
        let mut ds = SdiDataset::new();
        ds.push(&stack_sdi(&traj, 30.0).unwrap());
        let bytes = ds.to_bytes();
        assert!(SdiDataset::from_bytes(&bytes[..bytes.len() - 1], 1).is_err());
    }

    proptest! {
        /// Affine invariance: normalize(a·r + b) = normalize(r) for a > 0,
        /// and normalized non-constant rows hit exactly 0 and 1.
        #[test]
        fn normalization_is_affine_invariant(
            base in proptest::collection::vec(-100.0..100.0f64, SDI_COLS),
            a in 0.1..50.0f64,
            b in -100.0..100.0f64,
        ) {
            let mut raw = [[0.0; SDI_COLS]; SDI_ROWS];
            let mut scaled = [[0.0; SDI_COLS]; SDI_ROWS];
            for c in 0..SDI_COLS {
                raw[0][c] = base[c];
                scaled[0][c] = a * base[c] + b;
            }
            let plain = normalize_rows(&raw).unwrap();
            let affine = normalize_rows(&scaled).unwrap();
            for c in 0..SDI_COLS {
                prop_assert!((plain.get(0, c) - affine.get(0, c)).abs() <= 1e-6);
            }
            let row = plain.row(0);
            let min = row.iter().cloned().fold(f32::INFINITY, f32::min);
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            if row.iter().any(|&v| v != row[0]) {
                prop_assert_eq!(min, 0.0);
                prop_assert_eq!(max, 1.0);
            }
            // Idempotence on already-normalized rows.
            let mut again = [[0.0; SDI_COLS]; SDI_ROWS];
            for c in 0..SDI_COLS {
                again[0][c] = plain.get(0, c) as f64;
            }
            let twice = normalize_rows(&again).unwrap();
            for c in 0..SDI_COLS {
                prop_assert!((twice.get(0, c) - plain.get(0, c)).abs() <= 1e-6);
            }
        }
    }
}
