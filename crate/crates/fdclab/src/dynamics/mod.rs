//! Flight-state simulation.
//!
//! The state evolution couples three equation groups: the air-data equations
//! (airspeed, angle of attack, sideslip driven by specific forces and
//! gravity), the rotational kinematics (Euler-angle rates driven by body
//! rotational speeds), and the motion equations (earth-frame position rates
//! of the body-axis velocity). Body rotational speeds and load factors are
//! exogenous inputs supplied by a [`ManeuverProfile`]; atmospheric
//! disturbance enters the air-data equations as additive wind rate terms.

mod disturbance;
mod io;
mod profile;

pub use disturbance::{dryden_disturbance, gauss_markov};
pub use io::{read_trajectory, trajectory_from_bytes, trajectory_to_bytes, write_trajectory};
pub use profile::{trim_loads, ManeuverProfile, ProfilePreset, Sinusoid, LEVEL_LOADS};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Gravitational acceleration, m/s². Load factors are stored in multiples of
/// this constant and converted before entering the state equations.
pub const G_ACCEL: f64 = 9.80665;

/// Margin kept between |θ| (and |β|) and π/2 by generated states.
pub const ATTITUDE_MARGIN: f64 = 1e-3;

/// Hard singularity guard inside the state equations.
const SINGULARITY_EPS: f64 = 1e-6;

/// Twelve flight states: air data, attitude, body rotational speeds, and
/// earth-frame position. Angles in radians, speeds in m/s, rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AircraftState {
    pub v: f64,
    pub alpha: f64,
    pub beta: f64,
    pub psi: f64,
    pub theta: f64,
    pub phi: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AircraftState {
    /// Rejects states that violate the generator invariants: positive
    /// airspeed and attitude angles clear of the cos θ / cos β singularities.
    pub fn validate(&self) -> Result<()> {
        if !(self.v > 0.0) {
            return Err(Error::Singular {
                what: "V",
                value: self.v,
                time: None,
            });
        }
        let limit = std::f64::consts::FRAC_PI_2 - ATTITUDE_MARGIN;
        if self.theta.abs() >= limit {
            return Err(Error::Singular {
                what: "theta",
                value: self.theta,
                time: None,
            });
        }
        if self.beta.abs() >= limit {
            return Err(Error::Singular {
                what: "beta",
                value: self.beta,
                time: None,
            });
        }
        Ok(())
    }
}

/// Specific-force components along the body axes, in g units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadFactors {
    pub gx: f64,
    pub gy: f64,
    pub gz: f64,
}

/// Additive wind rate terms entering the angle-of-attack and sideslip
/// equations, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindRates {
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl WindRates {
    pub const ZERO: WindRates = WindRates {
        wx: 0.0,
        wy: 0.0,
        wz: 0.0,
    };
}

/// Time derivative of the nine integrated states. Body rotational speeds are
/// exogenous commands, so they carry no derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub v_dot: f64,
    pub alpha_dot: f64,
    pub beta_dot: f64,
    pub psi_dot: f64,
    pub theta_dot: f64,
    pub phi_dot: f64,
    pub x_dot: f64,
    pub y_dot: f64,
    pub z_dot: f64,
}

impl StateDerivative {
    fn to_array(self) -> [f64; 9] {
        [
            self.v_dot,
            self.alpha_dot,
            self.beta_dot,
            self.psi_dot,
            self.theta_dot,
            self.phi_dot,
            self.x_dot,
            self.y_dot,
            self.z_dot,
        ]
    }
}

/// Airspeed resolved into body-axis components:
/// `u = V cos α cos β`, `v = V sin β`, `w = V sin α cos β`.
pub fn body_velocity(v: f64, alpha: f64, beta: f64) -> (f64, f64, f64) {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    (v * ca * cb, v * sb, v * sa * cb)
}

/// Evaluates the full state derivative.
///
/// Load factors arrive in g units and are scaled by [`G_ACCEL`] before
/// substitution. The wind rate terms that appear additively in the α̇ and β̇
/// equations come from `wind`; the Euler-angle rates use the body rotational
/// speeds stored in the state.
pub fn state_derivative(
    s: &AircraftState,
    loads: &LoadFactors,
    wind: &WindRates,
) -> Result<StateDerivative> {
    let (s_th, c_th) = s.theta.sin_cos();
    let (s_ph, c_ph) = s.phi.sin_cos();
    let (s_ps, c_ps) = s.psi.sin_cos();
    let (s_al, c_al) = s.alpha.sin_cos();
    let (s_be, c_be) = s.beta.sin_cos();

    if c_th.abs() < SINGULARITY_EPS {
        return Err(Error::Singular {
            what: "cos(theta)",
            value: c_th,
            time: None,
        });
    }
    if c_be.abs() < SINGULARITY_EPS {
        return Err(Error::Singular {
            what: "cos(beta)",
            value: c_be,
            time: None,
        });
    }
    if s.v < SINGULARITY_EPS {
        return Err(Error::Singular {
            what: "V",
            value: s.v,
            time: None,
        });
    }

    let g = G_ACCEL;
    let gx = loads.gx * g;
    let gy = loads.gy * g;
    let gz = loads.gz * g;

    // Air-data equations. The three bracketed force terms recur, so name them.
    let fx = gx - g * s_th;
    let fy = gy + g * s_ph * c_th;
    let fz = gz + g * c_ph * c_th;

    let v_dot = fx * c_al * c_be + fy * s_be + fz * s_al * c_be;
    let alpha_dot = (-gx * s_al + gz * c_al + g * c_ph * c_th * c_al + g * s_th * s_al)
        / (s.v * c_be)
        + wind.wy
        - (wind.wx * c_al + wind.wz * s_al) * s_be / c_be;
    let beta_dot =
        (-fx * c_al * s_be + fy * c_be - fz * s_al * s_be) / s.v + wind.wx * s_al - wind.wz * c_al;

    // Rotational kinematics.
    let psi_dot = s.wy * s_ph / c_th + s.wz * c_ph / c_th;
    let theta_dot = s.wy * c_ph - s.wz * s_ph;
    let phi_dot = s.wx + s.wy * s_ph * s_th / c_th + s.wz * c_ph * s_th / c_th;

    // Motion equations over the body-axis velocity components.
    let (u, v, w) = body_velocity(s.v, s.alpha, s.beta);
    let x_dot = u * c_th * c_ps + v * (s_th * s_ph * c_ps - c_ph * s_ps)
        + w * (s_th * c_ph * c_ps + s_ph * s_ps);
    let y_dot = u * c_th * s_ps
        + v * (s_th * s_ph * s_ps + c_ph * c_ps)
        + w * (s_th * c_ph * s_ps - s_ph * c_ps);
    let z_dot = -u * s_th + v * s_ph * c_th + w * c_ph * c_th;

    Ok(StateDerivative {
        v_dot,
        alpha_dot,
        beta_dot,
        psi_dot,
        theta_dot,
        phi_dot,
        x_dot,
        y_dot,
        z_dot,
    })
}

/// The 15 sensor channels, in canonical SDI row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensorChannel {
    V,
    Alpha,
    Beta,
    Gx,
    Gy,
    Gz,
    Wx,
    Wy,
    Wz,
    Psi,
    Theta,
    Phi,
    X,
    Y,
    Z,
}

impl SensorChannel {
    pub const ALL: [SensorChannel; 15] = [
        SensorChannel::V,
        SensorChannel::Alpha,
        SensorChannel::Beta,
        SensorChannel::Gx,
        SensorChannel::Gy,
        SensorChannel::Gz,
        SensorChannel::Wx,
        SensorChannel::Wy,
        SensorChannel::Wz,
        SensorChannel::Psi,
        SensorChannel::Theta,
        SensorChannel::Phi,
        SensorChannel::X,
        SensorChannel::Y,
        SensorChannel::Z,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SensorChannel::V => "V",
            SensorChannel::Alpha => "alpha",
            SensorChannel::Beta => "beta",
            SensorChannel::Gx => "Gx",
            SensorChannel::Gy => "Gy",
            SensorChannel::Gz => "Gz",
            SensorChannel::Wx => "wx",
            SensorChannel::Wy => "wy",
            SensorChannel::Wz => "wz",
            SensorChannel::Psi => "psi",
            SensorChannel::Theta => "theta",
            SensorChannel::Phi => "phi",
            SensorChannel::X => "x",
            SensorChannel::Y => "y",
            SensorChannel::Z => "z",
        }
    }

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).unwrap()
    }
}

/// One time sample: the twelve flight states plus the three load factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: AircraftState,
    pub loads: LoadFactors,
}

impl Sample {
    pub fn channel(&self, ch: SensorChannel) -> f64 {
        match ch {
            SensorChannel::V => self.state.v,
            SensorChannel::Alpha => self.state.alpha,
            SensorChannel::Beta => self.state.beta,
            SensorChannel::Gx => self.loads.gx,
            SensorChannel::Gy => self.loads.gy,
            SensorChannel::Gz => self.loads.gz,
            SensorChannel::Wx => self.state.wx,
            SensorChannel::Wy => self.state.wy,
            SensorChannel::Wz => self.state.wz,
            SensorChannel::Psi => self.state.psi,
            SensorChannel::Theta => self.state.theta,
            SensorChannel::Phi => self.state.phi,
            SensorChannel::X => self.state.x,
            SensorChannel::Y => self.state.y,
            SensorChannel::Z => self.state.z,
        }
    }

    pub fn channel_mut(&mut self, ch: SensorChannel) -> &mut f64 {
        match ch {
            SensorChannel::V => &mut self.state.v,
            SensorChannel::Alpha => &mut self.state.alpha,
            SensorChannel::Beta => &mut self.state.beta,
            SensorChannel::Gx => &mut self.loads.gx,
            SensorChannel::Gy => &mut self.loads.gy,
            SensorChannel::Gz => &mut self.loads.gz,
            SensorChannel::Wx => &mut self.state.wx,
            SensorChannel::Wy => &mut self.state.wy,
            SensorChannel::Wz => &mut self.state.wz,
            SensorChannel::Psi => &mut self.state.psi,
            SensorChannel::Theta => &mut self.state.theta,
            SensorChannel::Phi => &mut self.state.phi,
            SensorChannel::X => &mut self.state.x,
            SensorChannel::Y => &mut self.state.y,
            SensorChannel::Z => &mut self.state.z,
        }
    }
}

/// Uniformly sampled record of clean and measured channels with per-sample
/// fault labels (0 = no fault).
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrajectory {
    pub sample_rate: f64,
    pub clean: Vec<Sample>,
    pub measured: Vec<Sample>,
    pub labels: Vec<u8>,
}

impl SensorTrajectory {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn time_at(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate
    }

    pub fn end_time(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.time_at(self.len() - 1)
        }
    }

    /// Nearest sample index for time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        ((t * self.sample_rate).round() as usize).min(self.len().saturating_sub(1))
    }
}

/// Per-channel measurement-noise standard deviations, held in the units the
/// sensor specifications quote them in (degrees for angle channels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub airspeed_ms: f64,
    pub air_angles_deg: f64,
    pub load_factors_g: f64,
    pub rates_deg_s: f64,
    pub attitude_angles_deg: f64,
    pub position_m: f64,
}

impl NoiseSpec {
    /// Simulation defaults: σ_V 0.1 m/s, σ_{α,β} 0.1°, σ_G 0.01 g,
    /// σ_rates 0.01 °/s, σ_attitude 0.01°, σ_position 1 m.
    pub fn standard() -> Self {
        NoiseSpec {
            airspeed_ms: 0.1,
            air_angles_deg: 0.1,
            load_factors_g: 0.01,
            rates_deg_s: 0.01,
            attitude_angles_deg: 0.01,
            position_m: 1.0,
        }
    }

    pub fn zero() -> Self {
        NoiseSpec {
            airspeed_ms: 0.0,
            air_angles_deg: 0.0,
            load_factors_g: 0.0,
            rates_deg_s: 0.0,
            attitude_angles_deg: 0.0,
            position_m: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.airspeed_ms,
            self.air_angles_deg,
            self.load_factors_g,
            self.rates_deg_s,
            self.attitude_angles_deg,
            self.position_m,
        ];
        if all.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::invalid("noise standard deviations must be >= 0"));
        }
        Ok(())
    }

    /// σ in the channel's native storage unit (radians for angles).
    pub fn sigma_native(&self, ch: SensorChannel) -> f64 {
        let deg = std::f64::consts::PI / 180.0;
        match ch {
            SensorChannel::V => self.airspeed_ms,
            SensorChannel::Alpha | SensorChannel::Beta => self.air_angles_deg * deg,
            SensorChannel::Gx | SensorChannel::Gy | SensorChannel::Gz => self.load_factors_g,
            SensorChannel::Wx | SensorChannel::Wy | SensorChannel::Wz => self.rates_deg_s * deg,
            SensorChannel::Psi | SensorChannel::Theta | SensorChannel::Phi => {
                self.attitude_angles_deg * deg
            }
            SensorChannel::X | SensorChannel::Y | SensorChannel::Z => self.position_m,
        }
    }
}

fn with_time(err: Error, t: f64) -> Error {
    match err {
        Error::Singular { what, value, .. } => Error::Singular {
            what,
            value,
            time: Some(t),
        },
        other => other,
    }
}

fn state_from_y9(y: &[f64; 9]) -> AircraftState {
    AircraftState {
        v: y[0],
        alpha: y[1],
        beta: y[2],
        psi: y[3],
        theta: y[4],
        phi: y[5],
        x: y[6],
        y: y[7],
        z: y[8],
        wx: 0.0,
        wy: 0.0,
        wz: 0.0,
    }
}

fn y9_from_state(s: &AircraftState) -> [f64; 9] {
    [
        s.v, s.alpha, s.beta, s.psi, s.theta, s.phi, s.x, s.y, s.z,
    ]
}

/// Derivative of the integrated 9-state vector with profile-commanded body
/// rates and load factors evaluated at the stage time and stage state.
fn eval_stage(
    profile: &ManeuverProfile,
    t: f64,
    y: &[f64; 9],
    wind: &WindRates,
) -> Result<[f64; 9]> {
    let mut s = state_from_y9(y);
    let (wx, wy, wz) = profile.rates(t, &s);
    s.wx = wx;
    s.wy = wy;
    s.wz = wz;
    let loads = profile.loads(t, &s);
    Ok(state_derivative(&s, &loads, wind)?.to_array())
}

/// Classical fourth-order Runge–Kutta over one step of length `dt` with the
/// wind input held constant across the step.
fn rk4_step(
    profile: &ManeuverProfile,
    t: f64,
    y: &[f64; 9],
    dt: f64,
    wind: &WindRates,
) -> Result<[f64; 9]> {
    let half = 0.5 * dt;
    let add = |y: &[f64; 9], k: &[f64; 9], h: f64| {
        let mut out = *y;
        for i in 0..9 {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = eval_stage(profile, t, y, wind)?;
    let k2 = eval_stage(profile, t + half, &add(y, &k1, half), wind)?;
    let k3 = eval_stage(profile, t + half, &add(y, &k2, half), wind)?;
    let k4 = eval_stage(profile, t + dt, &add(y, &k3, dt), wind)?;
    let mut out = *y;
    for i in 0..9 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Integrates a maneuver profile into a clean trajectory.
///
/// The seed drives the profile's atmospheric disturbance; the integration
/// itself is deterministic. The measured channels start as a copy of the
/// clean ones ([`add_measurement_noise`] perturbs them) and all labels are 0.
pub fn simulate_trajectory(
    profile: &ManeuverProfile,
    dt: f64,
    duration: f64,
    seed: u64,
) -> Result<SensorTrajectory> {
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(Error::invalid(format!(
            "dt must be in (0, 0.05] s, got {dt}"
        )));
    }
    if duration < dt {
        return Err(Error::invalid(format!(
            "duration {duration} s shorter than one step"
        )));
    }

    let n_steps = (duration / dt).round() as usize;
    let n_samples = n_steps + 1;
    let wind = dryden_disturbance(
        seed,
        dt,
        n_steps,
        profile.dryden_intensity,
        profile.dryden_timescale,
    );

    let mut samples = Vec::with_capacity(n_samples);
    let state = profile.initial_state();
    state.validate()?;

    let mut y = y9_from_state(&state);
    for step in 0..=n_steps {
        let t = step as f64 * dt;
        let mut s = state_from_y9(&y);
        let (wx, wy, wz) = profile.rates(t, &s);
        s.wx = wx;
        s.wy = wy;
        s.wz = wz;
        s.validate().map_err(|e| with_time(e, t))?;
        let loads = profile.loads(t, &s);
        samples.push(Sample { state: s, loads });

        if step < n_steps {
            y = rk4_step(profile, t, &y, dt, &wind[step]).map_err(|e| with_time(e, t))?;
        }
    }

    Ok(SensorTrajectory {
        sample_rate: 1.0 / dt,
        measured: samples.clone(),
        clean: samples,
        labels: vec![0; n_samples],
    })
}

/// Adds zero-mean Gaussian measurement noise per channel on top of the clean
/// data. The clean channels are retained; labels are untouched.
pub fn add_measurement_noise(
    traj: &SensorTrajectory,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<SensorTrajectory> {
    spec.validate()?;
    let mut rng = stream_rng(seed, 0xB0);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = traj.clone();
    for (i, sample) in out.measured.iter_mut().enumerate() {
        *sample = traj.clean[i];
        for ch in SensorChannel::ALL {
            let sigma = spec.sigma_native(ch);
            let draw: f64 = unit.sample(&mut rng);
            *sample.channel_mut(ch) += sigma * draw;
        }
    }
    Ok(out)
}
