//! Maneuver profiles: exogenous command histories that drive the simulation.
//!
//! A profile supplies the body rotational speeds and load factors as
//! functions of time and current state. Load factors are commanded as the
//! coordinated-flight trim (which freezes V, α and β) plus sinusoidal
//! excitation; a weak airspeed/attitude hold keeps long runs inside the
//! flight envelope regardless of duration or disturbance seed.
//!
//! The four presets emulate distinct aircraft/flight-condition families:
//! a low-altitude landing/take-off cycle flown manually (`Y`), low-altitude
//! manual free flight (`B1`), a second manual LTO family with rougher air
//! (`B2`), and a high-altitude autopilot cruise (`D`).

use super::{AircraftState, LoadFactors};
use crate::rng::stream_rng;
use rand::RngExt;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, frequency_hz: f64, phase: f64) -> Self {
        Sinusoid {
            amplitude,
            frequency_hz,
            phase,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.frequency_hz * t + self.phase).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfilePreset {
    /// Large cargo airplane, low altitude, landing/take-off cycle, manual.
    Y,
    /// Large passenger aircraft, low altitude, free flight, manual.
    B1,
    /// Large passenger aircraft, low altitude, landing/take-off cycle, manual.
    B2,
    /// General aviation, high altitude, cruise, autopilot.
    D,
}

impl ProfilePreset {
    pub const ALL: [ProfilePreset; 4] = [
        ProfilePreset::Y,
        ProfilePreset::B1,
        ProfilePreset::B2,
        ProfilePreset::D,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverProfile {
    pub name: String,
    /// Reference airspeed, m/s.
    pub v_ref: f64,
    /// Initial altitude, m (stored as z = -altitude, down positive).
    pub altitude: f64,
    pub initial_alpha: f64,
    /// Body rotational speed commands, rad/s.
    pub roll_rate: Sinusoid,
    pub pitch_rate: Sinusoid,
    pub yaw_rate: Sinusoid,
    /// Load-factor excitation around trim, g units.
    pub gx_cmd: Sinusoid,
    pub gy_cmd: Sinusoid,
    pub gz_cmd: Sinusoid,
    /// Airspeed hold gain, g per (m/s) of airspeed error.
    pub v_hold_gain: f64,
    /// Attitude hold gain on θ and φ, 1/s.
    pub attitude_hold_gain: f64,
    /// Stationary standard deviation of the wind rate disturbance, rad/s.
    pub dryden_intensity: f64,
    /// Correlation time of the wind rate disturbance, s.
    pub dryden_timescale: f64,
}

impl ManeuverProfile {
    pub fn preset(preset: ProfilePreset) -> Self {
        let deg = std::f64::consts::PI / 180.0;
        match preset {
            ProfilePreset::Y => ManeuverProfile {
                name: "Y-lto-manual".into(),
                v_ref: 85.0,
                altitude: 600.0,
                initial_alpha: 2.0 * deg,
                roll_rate: Sinusoid::new(2.0 * deg, 0.033, 0.0),
                pitch_rate: Sinusoid::new(1.5 * deg, 0.050, 1.0),
                yaw_rate: Sinusoid::new(0.5 * deg, 0.021, 2.0),
                gx_cmd: Sinusoid::new(0.06, 0.040, 0.4),
                gy_cmd: Sinusoid::new(0.04, 0.027, 1.3),
                gz_cmd: Sinusoid::new(0.12, 0.047, 2.2),
                v_hold_gain: 0.002,
                attitude_hold_gain: 0.05,
                dryden_intensity: 0.6 * deg,
                dryden_timescale: 2.5,
            },
            ProfilePreset::B1 => ManeuverProfile {
                name: "B1-free-flight-manual".into(),
                v_ref: 120.0,
                altitude: 2000.0,
                initial_alpha: 3.0 * deg,
                roll_rate: Sinusoid::new(1.2 * deg, 0.025, 0.7),
                pitch_rate: Sinusoid::new(0.8 * deg, 0.042, 1.9),
                yaw_rate: Sinusoid::new(0.4 * deg, 0.017, 0.2),
                gx_cmd: Sinusoid::new(0.04, 0.031, 2.8),
                gy_cmd: Sinusoid::new(0.03, 0.023, 0.9),
                gz_cmd: Sinusoid::new(0.09, 0.038, 1.6),
                v_hold_gain: 0.002,
                attitude_hold_gain: 0.05,
                dryden_intensity: 0.4 * deg,
                dryden_timescale: 3.0,
            },
            ProfilePreset::B2 => ManeuverProfile {
                name: "B2-lto-manual".into(),
                v_ref: 75.0,
                altitude: 400.0,
                initial_alpha: 4.0 * deg,
                roll_rate: Sinusoid::new(2.5 * deg, 0.044, 2.4),
                pitch_rate: Sinusoid::new(1.8 * deg, 0.061, 0.5),
                yaw_rate: Sinusoid::new(0.7 * deg, 0.029, 1.1),
                gx_cmd: Sinusoid::new(0.07, 0.052, 1.8),
                gy_cmd: Sinusoid::new(0.05, 0.035, 2.6),
                gz_cmd: Sinusoid::new(0.15, 0.058, 0.3),
                v_hold_gain: 0.003,
                attitude_hold_gain: 0.06,
                dryden_intensity: 0.8 * deg,
                dryden_timescale: 2.0,
            },
            ProfilePreset::D => ManeuverProfile {
                name: "D-cruise-ap".into(),
                v_ref: 65.0,
                altitude: 5500.0,
                initial_alpha: 1.5 * deg,
                roll_rate: Sinusoid::new(0.25 * deg, 0.019, 1.5),
                pitch_rate: Sinusoid::new(0.20 * deg, 0.034, 0.8),
                yaw_rate: Sinusoid::new(0.10 * deg, 0.013, 2.9),
                gx_cmd: Sinusoid::new(0.015, 0.026, 0.6),
                gy_cmd: Sinusoid::new(0.010, 0.018, 1.2),
                gz_cmd: Sinusoid::new(0.030, 0.029, 2.0),
                v_hold_gain: 0.004,
                attitude_hold_gain: 0.10,
                dryden_intensity: 0.15 * deg,
                dryden_timescale: 4.0,
            },
        }
    }

    /// Equilibrium profile: level flight at constant airspeed, zero commands,
    /// zero disturbance. Every state except the along-track position is a
    /// fixed point of the dynamics.
    pub fn level(v_ref: f64, altitude: f64) -> Self {
        ManeuverProfile {
            name: "level".into(),
            v_ref,
            altitude,
            initial_alpha: 0.0,
            roll_rate: Sinusoid::new(0.0, 0.0, 0.0),
            pitch_rate: Sinusoid::new(0.0, 0.0, 0.0),
            yaw_rate: Sinusoid::new(0.0, 0.0, 0.0),
            gx_cmd: Sinusoid::new(0.0, 0.0, 0.0),
            gy_cmd: Sinusoid::new(0.0, 0.0, 0.0),
            gz_cmd: Sinusoid::new(0.0, 0.0, 0.0),
            v_hold_gain: 0.0,
            attitude_hold_gain: 0.0,
            dryden_intensity: 0.0,
            dryden_timescale: 1.0,
        }
    }

    /// Derives a per-trajectory variant: phases redrawn uniformly and
    /// amplitudes jittered ±20% so that one preset yields diverse runs.
    pub fn with_variation(mut self, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x50);
        let mut vary = |s: &mut Sinusoid| {
            s.phase = rng.random_range(0.0..TAU);
            s.amplitude *= rng.random_range(0.8..1.2);
        };
        vary(&mut self.roll_rate);
        vary(&mut self.pitch_rate);
        vary(&mut self.yaw_rate);
        vary(&mut self.gx_cmd);
        vary(&mut self.gy_cmd);
        vary(&mut self.gz_cmd);
        self
    }

    pub fn initial_state(&self) -> AircraftState {
        let mut s = AircraftState {
            v: self.v_ref,
            alpha: self.initial_alpha,
            beta: 0.0,
            psi: 0.0,
            theta: 0.0,
            phi: 0.0,
            wx: 0.0,
            wy: 0.0,
            wz: 0.0,
            x: 0.0,
            y: 0.0,
            z: -self.altitude,
        };
        let (wx, wy, wz) = self.rates(0.0, &s);
        s.wx = wx;
        s.wy = wy;
        s.wz = wz;
        s
    }

    /// Commanded body rotational speeds at time `t`.
    pub fn rates(&self, t: f64, s: &AircraftState) -> (f64, f64, f64) {
        let k = self.attitude_hold_gain;
        (
            self.roll_rate.eval(t) - k * s.phi,
            self.pitch_rate.eval(t) - k * s.theta,
            self.yaw_rate.eval(t),
        )
    }

    /// Commanded load factors at time `t`: coordinated trim plus excitation
    /// plus the airspeed hold term.
    pub fn loads(&self, t: f64, s: &AircraftState) -> LoadFactors {
        let (s_th, c_th) = s.theta.sin_cos();
        let (s_ph, c_ph) = s.phi.sin_cos();
        let v_err = s.v - self.v_ref;
        LoadFactors {
            gx: s_th + self.gx_cmd.eval(t) - self.v_hold_gain * v_err,
            gy: -s_ph * c_th + self.gy_cmd.eval(t),
            gz: -c_ph * c_th + self.gz_cmd.eval(t),
        }
    }

}

/// Trim load factors for a given attitude: the commanded specific force that
/// exactly cancels gravity in the air-data equations.
pub fn trim_loads(theta: f64, phi: f64) -> LoadFactors {
    let (s_th, c_th) = theta.sin_cos();
    let (s_ph, c_ph) = phi.sin_cos();
    LoadFactors {
        gx: s_th,
        gy: -s_ph * c_th,
        gz: -c_ph * c_th,
    }
}

/// Level-flight load factors: straight and level implies G = (0, 0, -1) g,
/// i.e. the airframe carries one g of lift along the negative body z axis.
pub const LEVEL_LOADS: LoadFactors = LoadFactors {
    gx: 0.0,
    gy: 0.0,
    gz: -1.0,
};
