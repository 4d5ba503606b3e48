//! Fault cases, randomized schedules, and additive injection.
//!
//! Nine fault cases cover the air data and inertial sensors: drift (constant
//! bias over an interval; fractional loss for airspeed) and extra noise
//! (added Gaussian of specified std). IMU cases hit all three channels of
//! their group simultaneously. Faults are injected on top of the measured
//! channels; clean channels are never touched, which keeps the injected
//! residual exactly recoverable.

use crate::dynamics::{SensorChannel, SensorTrajectory};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Shortest injected event, s. Keeps a handful of 1 Hz SDI columns inside
/// every fault span.
pub const MIN_EVENT_DURATION: f64 = 5.0;

/// Scheduling window, s: at most one fault event is drawn per window.
pub const FAULT_WINDOW: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum FaultCase {
    None,
    AirspeedDrift,
    AoaDrift,
    AoaNoise,
    SideslipDrift,
    SideslipNoise,
    RateDrift,
    LoadFactorDrift,
    RateNoise,
    LoadFactorNoise,
}

impl FaultCase {
    pub const ALL: [FaultCase; 10] = [
        FaultCase::None,
        FaultCase::AirspeedDrift,
        FaultCase::AoaDrift,
        FaultCase::AoaNoise,
        FaultCase::SideslipDrift,
        FaultCase::SideslipNoise,
        FaultCase::RateDrift,
        FaultCase::LoadFactorDrift,
        FaultCase::RateNoise,
        FaultCase::LoadFactorNoise,
    ];

    pub fn id(&self) -> u8 {
        Self::ALL.iter().position(|c| c == self).unwrap() as u8
    }

    pub fn from_id(id: u8) -> Result<FaultCase> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("fault case id {id} out of range 0-9")))
    }

    /// Channels the case affects. IMU cases couple their whole group.
    pub fn channels(&self) -> &'static [SensorChannel] {
        match self {
            FaultCase::None => &[],
            FaultCase::AirspeedDrift => &[SensorChannel::V],
            FaultCase::AoaDrift | FaultCase::AoaNoise => &[SensorChannel::Alpha],
            FaultCase::SideslipDrift | FaultCase::SideslipNoise => &[SensorChannel::Beta],
            FaultCase::RateDrift | FaultCase::RateNoise => {
                &[SensorChannel::Wx, SensorChannel::Wy, SensorChannel::Wz]
            }
            FaultCase::LoadFactorDrift | FaultCase::LoadFactorNoise => {
                &[SensorChannel::Gx, SensorChannel::Gy, SensorChannel::Gz]
            }
        }
    }

    pub fn is_drift(&self) -> bool {
        matches!(
            self,
            FaultCase::AirspeedDrift
                | FaultCase::AoaDrift
                | FaultCase::SideslipDrift
                | FaultCase::RateDrift
                | FaultCase::LoadFactorDrift
        )
    }

    pub fn is_noise(&self) -> bool {
        matches!(
            self,
            FaultCase::AoaNoise
                | FaultCase::SideslipNoise
                | FaultCase::RateNoise
                | FaultCase::LoadFactorNoise
        )
    }

    /// Whether the magnitude carries a random ± sign.
    pub fn is_signed(&self) -> bool {
        matches!(
            self,
            FaultCase::AoaDrift
                | FaultCase::SideslipDrift
                | FaultCase::RateDrift
                | FaultCase::LoadFactorDrift
        )
    }

    /// Magnitude range in the case's specification unit: fraction of airspeed
    /// lost for case 1, degrees or deg/s for angle/rate cases, g for load
    /// factors. Noise cases quote the extra std in the same unit.
    pub fn magnitude_range(&self) -> (f64, f64) {
        match self {
            FaultCase::None => (0.0, 0.0),
            FaultCase::AirspeedDrift => (0.5, 1.0),
            FaultCase::AoaDrift
            | FaultCase::AoaNoise
            | FaultCase::SideslipDrift
            | FaultCase::SideslipNoise
            | FaultCase::RateDrift
            | FaultCase::RateNoise => (5.0, 10.0),
            FaultCase::LoadFactorDrift | FaultCase::LoadFactorNoise => (0.1, 0.3),
        }
    }

    /// Converts a specification-unit magnitude to the affected channels'
    /// native unit (radians for angles and rates; g and fractions pass
    /// through).
    pub fn native_magnitude(&self, magnitude: f64) -> f64 {
        match self {
            FaultCase::AoaDrift
            | FaultCase::AoaNoise
            | FaultCase::SideslipDrift
            | FaultCase::SideslipNoise
            | FaultCase::RateDrift
            | FaultCase::RateNoise => magnitude * DEG,
            _ => magnitude,
        }
    }
}

impl From<FaultCase> for u8 {
    fn from(c: FaultCase) -> u8 {
        c.id()
    }
}

impl TryFrom<u8> for FaultCase {
    type Error = Error;
    fn try_from(id: u8) -> Result<FaultCase> {
        FaultCase::from_id(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub case: FaultCase,
    pub onset_s: f64,
    pub duration_s: f64,
    /// Specification-unit magnitude (see [`FaultCase::magnitude_range`]).
    pub magnitude: f64,
    /// +1 or -1 for signed drift cases; +1 otherwise.
    pub sign: i8,
}

impl FaultEvent {
    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }

    pub fn covers(&self, t: f64) -> bool {
        t >= self.onset_s && t <= self.end_s()
    }

    fn validate(&self) -> Result<()> {
        if self.case == FaultCase::None {
            return Err(Error::invalid("fault event with case 0"));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::invalid(format!(
                "event duration must be positive, got {}",
                self.duration_s
            )));
        }
        let (lo, hi) = self.case.magnitude_range();
        if !(self.magnitude >= lo && self.magnitude <= hi) {
            return Err(Error::invalid(format!(
                "case {} magnitude {} outside [{lo}, {hi}]",
                self.case.id(),
                self.magnitude
            )));
        }
        if self.sign != 1 && self.sign != -1 {
            return Err(Error::invalid(format!(
                "sign must be ±1, got {}",
                self.sign
            )));
        }
        Ok(())
    }
}

/// Fault events over a trajectory, at most one per scheduling window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSchedule {
    pub window_s: f64,
    pub events: Vec<FaultEvent>,
}

impl FaultSchedule {
    pub fn empty() -> Self {
        FaultSchedule {
            window_s: FAULT_WINDOW,
            events: Vec::new(),
        }
    }

    /// Every event must sit inside its own window and overlap no other.
    pub fn validate(&self) -> Result<()> {
        for e in &self.events {
            e.validate()?;
            let window = (e.onset_s / self.window_s).floor();
            let window_end = (window + 1.0) * self.window_s;
            if e.onset_s < 0.0 || e.end_s() > window_end + 1e-9 {
                return Err(Error::invalid(format!(
                    "event (case {}, onset {:.2} s, duration {:.2} s) crosses its {:.0} s window",
                    e.case.id(),
                    e.onset_s,
                    e.duration_s,
                    self.window_s
                )));
            }
        }
        for (i, a) in self.events.iter().enumerate() {
            for b in &self.events[i + 1..] {
                if a.onset_s <= b.end_s() && b.onset_s <= a.end_s() {
                    return Err(Error::invalid(format!(
                        "overlapping events at {:.2} s and {:.2} s",
                        a.onset_s, b.onset_s
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let schedule: FaultSchedule = serde_json::from_str(json)?;
        schedule.validate()?;
        Ok(schedule)
    }
}

fn draw_case(rng: &mut ChaCha8Rng, weights: &[f64; 10]) -> FaultCase {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return FaultCase::ALL[i];
        }
    }
    // Rounding left u at the very top of the cumulative range.
    FaultCase::ALL[9]
}

fn sample_magnitude_with(case: FaultCase, rng: &mut ChaCha8Rng) -> Result<(f64, i8)> {
    if case == FaultCase::None {
        return Err(Error::invalid("case 0 has no magnitude"));
    }
    let (lo, hi) = case.magnitude_range();
    let magnitude = rng.random_range(lo..=hi);
    let sign = if case.is_signed() {
        if rng.random_range(0.0..1.0) < 0.5 {
            -1
        } else {
            1
        }
    } else {
        1
    };
    Ok((magnitude, sign))
}

/// Draws a magnitude (and sign, for ± cases) uniformly inside the case's
/// specified range.
pub fn sample_magnitude(case: FaultCase, seed: u64) -> Result<(f64, i8)> {
    sample_magnitude_with(case, &mut stream_rng(seed, 0xFA))
}

/// Draws one fault schedule: per full scheduling window, one case is chosen
/// from `case_weights` (index = case id; case 0 leaves the window clean),
/// with onset, duration, and magnitude randomized inside the window.
pub fn sample_schedule(
    duration_s: f64,
    seed: u64,
    case_weights: &[f64; 10],
) -> Result<FaultSchedule> {
    if duration_s < FAULT_WINDOW {
        return Err(Error::invalid(format!(
            "duration {duration_s} s shorter than one {FAULT_WINDOW} s window"
        )));
    }
    if case_weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("case weights must be non-negative"));
    }
    let total: f64 = case_weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "case weights must sum to 1, got {total}"
        )));
    }

    let mut rng = stream_rng(seed, 0xFC);
    let n_windows = (duration_s / FAULT_WINDOW).floor() as usize;
    let mut events = Vec::new();
    for w in 0..n_windows {
        let case = draw_case(&mut rng, case_weights);
        if case == FaultCase::None {
            continue;
        }
        let start = w as f64 * FAULT_WINDOW;
        let end = start + FAULT_WINDOW;
        // Onset leaves room for the minimum duration inside the window.
        let onset_s = rng.random_range(start..end - MIN_EVENT_DURATION);
        let duration_s = rng.random_range(MIN_EVENT_DURATION..=(end - onset_s));
        let (magnitude, sign) = sample_magnitude_with(case, &mut rng)?;
        events.push(FaultEvent {
            case,
            onset_s,
            duration_s,
            magnitude,
            sign,
        });
    }

    let schedule = FaultSchedule {
        window_s: FAULT_WINDOW,
        events,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Injects a schedule into the measured channels and writes per-sample
/// labels. Drift adds `sign·magnitude` (native units) over the span; the
/// airspeed case multiplies by `1 - fraction`; noise cases add independent
/// zero-mean Gaussian samples of the given std on top of the baseline noise.
/// Samples outside every span are bit-identical to the input.
pub fn apply_faults(
    traj: &SensorTrajectory,
    schedule: &FaultSchedule,
    seed: u64,
) -> Result<SensorTrajectory> {
    schedule.validate()?;
    let end_time = traj.end_time();
    for e in &schedule.events {
        if e.end_s() > end_time + 1e-9 {
            return Err(Error::EventOutOfRange {
                case: e.case.id(),
                onset: e.onset_s,
                duration: e.duration_s,
                end: end_time,
            });
        }
    }

    let mut out = traj.clone();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for (idx, e) in schedule.events.iter().enumerate() {
        let mut rng = stream_rng(seed, 0xE000 + idx as u64);
        let native = e.case.native_magnitude(e.magnitude);
        let first = (e.onset_s * traj.sample_rate).ceil() as usize;
        let last = ((e.end_s() * traj.sample_rate).floor() as usize).min(traj.len() - 1);
        for i in first..=last {
            out.labels[i] = e.case.id();
            let sample = &mut out.measured[i];
            match e.case {
                FaultCase::AirspeedDrift => {
                    *sample.channel_mut(SensorChannel::V) *= 1.0 - e.magnitude;
                }
                c if c.is_drift() => {
                    for ch in c.channels() {
                        *sample.channel_mut(*ch) += e.sign as f64 * native;
                    }
                }
                c => {
                    for ch in c.channels() {
                        *sample.channel_mut(*ch) += native * unit.sample(&mut rng);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{add_measurement_noise, simulate_trajectory, ManeuverProfile, NoiseSpec};

    fn base_trajectory(duration: f64) -> SensorTrajectory {
        let profile = ManeuverProfile::preset(crate::dynamics::ProfilePreset::Y);
        let traj = simulate_trajectory(&profile, 0.02, duration, 4).unwrap();
        add_measurement_noise(&traj, &NoiseSpec::standard(), 5).unwrap()
    }

    fn uniform_weights() -> [f64; 10] {
        [0.1; 10]
    }

    #[test]
    fn delta_weight_on_case0_gives_empty_schedule() {
        let mut weights = [0.0; 10];
        weights[0] = 1.0;
        let schedule = sample_schedule(600.0, 1, &weights).unwrap();
        assert!(schedule.events.is_empty());
    }

    #[test]
    fn ten_windows_each_hold_at_most_one_event() {
        let schedule = sample_schedule(600.0, 2, &uniform_weights()).unwrap();
        assert!(schedule.events.len() <= 10);
        let mut seen = [false; 10];
        for e in &schedule.events {
            let w = (e.onset_s / FAULT_WINDOW).floor() as usize;
            assert!(w < 10);
            assert!(!seen[w], "two events in window {w}");
            seen[w] = true;
            assert!(e.onset_s >= w as f64 * FAULT_WINDOW);
            assert!(e.end_s() <= (w + 1) as f64 * FAULT_WINDOW + 1e-9);
            assert!(e.duration_s >= MIN_EVENT_DURATION);
        }
    }

    #[test]
    fn case_frequencies_match_weights() {
        // 10^4 windows, uniform weights. Seeded, so the check is
        // deterministic; the 3% band is ~4 sigma for a multinomial draw.
        let schedule = sample_schedule(10_000.0 * FAULT_WINDOW, 3, &uniform_weights()).unwrap();
        let mut counts = [0usize; 10];
        for e in &schedule.events {
            counts[e.case.id() as usize] += 1;
        }
        counts[0] = 10_000 - schedule.events.len();
        for (case, &n) in counts.iter().enumerate() {
            let freq = n as f64 / 10_000.0;
            assert!((freq - 0.1).abs() < 0.012, "case {case} frequency {freq}");
        }
    }

    #[test]
    fn magnitudes_stay_inside_specified_ranges() {
        for seed in 0..200 {
            let (m, s) = sample_magnitude(FaultCase::AoaDrift, seed).unwrap();
            assert!((5.0..=10.0).contains(&m));
            assert!(s == 1 || s == -1);

            let (m, s) = sample_magnitude(FaultCase::LoadFactorNoise, seed).unwrap();
            assert!((0.1..=0.3).contains(&m));
            assert_eq!(s, 1);

            let (m, _) = sample_magnitude(FaultCase::AirspeedDrift, seed).unwrap();
            assert!((0.5..=1.0).contains(&m));
        }
        // Both signs occur.
        let signs: Vec<i8> = (0..64)
            .map(|s| sample_magnitude(FaultCase::SideslipDrift, s).unwrap().1)
            .collect();
        assert!(signs.contains(&1) && signs.contains(&-1));
        assert!(sample_magnitude(FaultCase::None, 0).is_err());
    }

    #[test]
    fn empty_schedule_is_identity() {
        let traj = base_trajectory(70.0);
        let out = apply_faults(&traj, &FaultSchedule::empty(), 9).unwrap();
        assert_eq!(out, traj);
    }

    #[test]
    fn sideslip_drift_adds_exact_offset_on_span() {
        let traj = base_trajectory(70.0);
        let event = FaultEvent {
            case: FaultCase::SideslipDrift,
            onset_s: 21.0,
            duration_s: 10.0,
            magnitude: 7.0,
            sign: 1,
        };
        let schedule = FaultSchedule {
            window_s: FAULT_WINDOW,
            events: vec![event],
        };
        let out = apply_faults(&traj, &schedule, 9).unwrap();
        let offset = 7.0 * DEG;
        for i in 0..traj.len() {
            let t = traj.time_at(i);
            let before = traj.measured[i].channel(SensorChannel::Beta);
            let after = out.measured[i].channel(SensorChannel::Beta);
            if (21.0..=31.0).contains(&t) {
                // Bit-exact additive injection.
                assert_eq!(after, before + offset);
                assert_eq!(out.labels[i], 4);
            } else {
                assert_eq!(after, before);
                assert_eq!(out.labels[i], 0);
            }
        }
    }

    #[test]
    fn airspeed_drift_is_fractional_loss() {
        let traj = base_trajectory(70.0);
        let event = FaultEvent {
            case: FaultCase::AirspeedDrift,
            onset_s: 10.0,
            duration_s: 20.0,
            magnitude: 0.75,
            sign: 1,
        };
        let schedule = FaultSchedule {
            window_s: FAULT_WINDOW,
            events: vec![event],
        };
        let out = apply_faults(&traj, &schedule, 0).unwrap();
        for i in 0..traj.len() {
            let before = traj.measured[i].channel(SensorChannel::V);
            let after = out.measured[i].channel(SensorChannel::V);
            if event.covers(traj.time_at(i)) {
                assert_eq!(after, 0.25 * before);
            } else {
                assert_eq!(after, before);
            }
        }
    }

    #[test]
    fn imu_cases_couple_all_three_group_channels() {
        let traj = base_trajectory(70.0);
        let event = FaultEvent {
            case: FaultCase::RateDrift,
            onset_s: 5.0,
            duration_s: 12.0,
            magnitude: 6.0,
            sign: -1,
        };
        let schedule = FaultSchedule {
            window_s: FAULT_WINDOW,
            events: vec![event],
        };
        let out = apply_faults(&traj, &schedule, 0).unwrap();
        let offset = -1.0 * (6.0 * DEG);
        let i = traj.index_at(10.0);
        for ch in [SensorChannel::Wx, SensorChannel::Wy, SensorChannel::Wz] {
            let before = traj.measured[i].channel(ch);
            assert_eq!(out.measured[i].channel(ch), before + offset);
        }

        // Noise case: all three channels perturbed over the same span.
        let event = FaultEvent {
            case: FaultCase::LoadFactorNoise,
            onset_s: 40.0,
            duration_s: 15.0,
            magnitude: 0.3,
            sign: 1,
        };
        let schedule = FaultSchedule {
            window_s: FAULT_WINDOW,
            events: vec![event],
        };
        let out = apply_faults(&traj, &schedule, 31).unwrap();
        let i = traj.index_at(45.0);
        for ch in [SensorChannel::Gx, SensorChannel::Gy, SensorChannel::Gz] {
            assert_ne!(out.measured[i].channel(ch), traj.measured[i].channel(ch));
        }
        assert_eq!(out.labels[i], 9);
    }

    #[test]
    fn labels_match_spans_and_injection_is_additive() {
        let traj = base_trajectory(240.0);
        let schedule = sample_schedule(240.0, 17, &uniform_weights()).unwrap();
        assert!(!schedule.events.is_empty());
        let out = apply_faults(&traj, &schedule, 18).unwrap();
        for i in 0..traj.len() {
            let t = traj.time_at(i);
            let covering = schedule.events.iter().find(|e| {
                let first = (e.onset_s * traj.sample_rate).ceil() as usize;
                let last = (e.end_s() * traj.sample_rate).floor() as usize;
                (first..=last).contains(&i)
            });
            match covering {
                Some(e) => assert_eq!(out.labels[i], e.case.id(), "t = {t}"),
                None => {
                    assert_eq!(out.labels[i], 0, "t = {t}");
                    assert_eq!(out.measured[i], traj.measured[i], "t = {t}");
                }
            }
        }
    }

    #[test]
    fn schedules_are_deterministic_per_seed() {
        let a = sample_schedule(600.0, 5, &uniform_weights()).unwrap();
        let b = sample_schedule(600.0, 5, &uniform_weights()).unwrap();
        let c = sample_schedule(600.0, 6, &uniform_weights()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn short_duration_is_rejected() {
        assert!(sample_schedule(59.0, 0, &uniform_weights()).is_err());
    }

    #[test]
    fn event_past_trajectory_end_is_an_error() {
        let traj = base_trajectory(70.0);
        let schedule = FaultSchedule {
            window_s: FAULT_WINDOW,
            events: vec![FaultEvent {
                case: FaultCase::AoaDrift,
                onset_s: 65.0,
                duration_s: 30.0,
                magnitude: 6.0,
                sign: 1,
            }],
        };
        let err = apply_faults(&traj, &schedule, 0).unwrap_err();
        match err {
            Error::EventOutOfRange { case, onset, .. } => {
                assert_eq!(case, 2);
                assert_eq!(onset, 65.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn schedule_json_round_trip() {
        let schedule = sample_schedule(300.0, 8, &uniform_weights()).unwrap();
        let json = schedule.to_json().unwrap();
        let back = FaultSchedule::from_json(&json).unwrap();
        assert_eq!(schedule, back);
        assert!(json.contains("window_s"));
    }
}
