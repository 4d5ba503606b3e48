//! Dataset generation and training-time data access.
//!
//! Generation walks the four maneuver-profile presets round-robin, each
//! trajectory with its own derived seeds for profile variation, disturbance,
//! measurement noise, and fault schedule, then stacks SDIs at 1 s strides.
//! Augmented 224×224 images are never stored; they are rendered on the fly
//! when a batch is assembled.

use crate::augment::{write_augmented, AugMethod};
use crate::dynamics::{
    add_measurement_noise, simulate_trajectory, ManeuverProfile, NoiseSpec, ProfilePreset,
};
use crate::error::Result;
use crate::faults::{apply_faults, sample_schedule};
use crate::matrix::Matrix;
use crate::nnet::ImageSource;
use crate::rng::mix;
use crate::sdi::{stack_sdi, SdiDataset, RECORD_LEN, SDI_COLS, SDI_ROWS, SDI_WINDOW_S};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Number of SDIs to produce.
    pub size: usize,
    /// Integration step, s.
    pub dt: f64,
    /// Length of each simulated trajectory, s.
    pub trajectory_s: f64,
    /// Fault-case draw weights per scheduling window (index = case id).
    pub case_weights: [f64; 10],
    pub noise: NoiseSpec,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            size: 5000,
            dt: 0.02,
            trajectory_s: 630.0,
            case_weights: [0.1; 10],
            noise: NoiseSpec::standard(),
        }
    }
}

/// Simulates, corrupts, fault-injects, and stacks a seeded SDI dataset.
pub fn gen_dataset(cfg: &GenConfig, seed: u64) -> Result<SdiDataset> {
    let per_trajectory = (cfg.trajectory_s - SDI_WINDOW_S).floor() as usize + 1;
    let n_trajectories = cfg.size.div_ceil(per_trajectory);

    let chunks: Vec<Result<SdiDataset>> = (0..n_trajectories)
        .into_par_iter()
        .map(|ti| {
            let preset = ProfilePreset::ALL[ti % ProfilePreset::ALL.len()];
            let profile = ManeuverProfile::preset(preset).with_variation(mix(seed, 0x1000 + ti as u64));
            let clean = simulate_trajectory(
                &profile,
                cfg.dt,
                cfg.trajectory_s,
                mix(seed, 0x2000 + ti as u64),
            )?;
            let noisy = add_measurement_noise(&clean, &cfg.noise, mix(seed, 0x3000 + ti as u64))?;
            let schedule = sample_schedule(
                cfg.trajectory_s,
                mix(seed, 0x4000 + ti as u64),
                &cfg.case_weights,
            )?;
            let faulted = apply_faults(&noisy, &schedule, mix(seed, 0x5000 + ti as u64))?;

            let mut part = SdiDataset::new();
            for step in 0..per_trajectory {
                let t = SDI_WINDOW_S + step as f64;
                part.push(&stack_sdi(&faulted, t)?);
            }
            Ok(part)
        })
        .collect();

    let mut dataset = SdiDataset::new();
    for chunk in chunks {
        let chunk = chunk?;
        for i in 0..chunk.len() {
            if dataset.len() == cfg.size {
                break;
            }
            dataset.push(&crate::sdi::SDIMatrix {
                values: Matrix::from_vec(SDI_ROWS, SDI_COLS, chunk.record(i).to_vec())?,
                label: chunk.label(i),
                t_end: 0.0,
            });
        }
    }
    Ok(dataset)
}

/// Training view of an SDI dataset: records are inflated with one
/// augmentation method as they are read.
pub struct AugmentedDataset<'a> {
    pub sdi: &'a SdiDataset,
    pub method: AugMethod,
}

impl<'a> AugmentedDataset<'a> {
    pub fn new(sdi: &'a SdiDataset, method: AugMethod) -> Self {
        AugmentedDataset { sdi, method }
    }
}

impl ImageSource for AugmentedDataset<'_> {
    fn len(&self) -> usize {
        self.sdi.len()
    }

    fn label(&self, idx: usize) -> u8 {
        self.sdi.label(idx)
    }

    fn write_image(&self, idx: usize, out: &mut [f32]) {
        debug_assert_eq!(self.sdi.record(idx).len(), RECORD_LEN);
        write_augmented(self.sdi.record(idx), self.method, out);
    }
}

/// Index-remapped view used for fold splits.
pub struct SubsetSource<'a> {
    base: &'a dyn ImageSource,
    indices: &'a [usize],
}

impl<'a> SubsetSource<'a> {
    pub fn new(base: &'a dyn ImageSource, indices: &'a [usize]) -> Self {
        SubsetSource { base, indices }
    }
}

impl ImageSource for SubsetSource<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn label(&self, idx: usize) -> u8 {
        self.base.label(self.indices[idx])
    }

    fn write_image(&self, idx: usize, out: &mut [f32]) {
        self.base.write_image(self.indices[idx], out)
    }
}
