//! EV population: battery specs, parking sessions, charging fees and a
//! seeded commuter-pattern generator.
//!
//! Time is measured in slots of `slot_hours` hours. A session is parked for
//! slots `arrival..actual_departure`; it may draw power during
//! `arrival..departure` (the registered period) and pays the overstay
//! penalty for every slot in `departure..actual_departure`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::AggregatorId;

#[derive(Debug, Error)]
pub enum FleetError {
    #[error("fleet config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("session {id}: {reason}")]
    Session { id: usize, reason: String },
    #[error("parking duration must be non-negative, got {0} h")]
    NegativeDuration(f64),
    #[error("cannot read fleet config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed fleet config: {0}")]
    Parse(String),
}

fn config_err(field: &str, reason: impl Into<String>) -> FleetError {
    FleetError::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvModelSpec {
    pub capacity_kwh: f64,
    pub max_charge_kw: f64,
    /// Magnitude of the discharge limit.
    pub max_discharge_kw: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
}

impl EvModelSpec {
    /// 85 kWh pack, 22 kW both ways.
    pub const LARGE: EvModelSpec = EvModelSpec {
        capacity_kwh: 85.0,
        max_charge_kw: 22.0,
        max_discharge_kw: 22.0,
        charge_efficiency: 0.9,
        discharge_efficiency: 0.9,
    };

    /// 24 kWh pack, 6.6 kW both ways.
    pub const SMALL: EvModelSpec = EvModelSpec {
        capacity_kwh: 24.0,
        max_charge_kw: 6.6,
        max_discharge_kw: 6.6,
        charge_efficiency: 0.9,
        discharge_efficiency: 0.9,
    };

    pub fn validate(&self) -> Result<(), String> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.capacity_kwh) {
            return Err("battery capacity must be positive".into());
        }
        if !positive(self.max_charge_kw) || !positive(self.max_discharge_kw) {
            return Err("charge and discharge rates must be positive".into());
        }
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.charge_efficiency) || !unit(self.discharge_efficiency) {
            return Err("efficiencies must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// SoC change per kWh drawn from the grid.
    pub fn soc_per_charged_kwh(&self) -> f64 {
        self.charge_efficiency / self.capacity_kwh
    }

    /// SoC change per kWh delivered to the grid.
    pub fn soc_per_discharged_kwh(&self) -> f64 {
        1.0 / (self.discharge_efficiency * self.capacity_kwh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvSession {
    pub id: usize,
    pub aggregator: AggregatorId,
    pub spec: EvModelSpec,
    pub bidirectional: bool,
    pub arrival: usize,
    /// Registered departure slot.
    pub departure: usize,
    pub actual_departure: usize,
    pub soc: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_req: f64,
    /// Set when the requirement was lowered at admission because it was
    /// unreachable.
    #[serde(default)]
    pub clamped: bool,
}

impl EvSession {
    /// True while inside the registered parking period.
    pub fn within_registered(&self, slot: usize) -> bool {
        slot >= self.arrival && slot < self.departure
    }

    pub fn is_present(&self, slot: usize) -> bool {
        slot >= self.arrival && slot < self.actual_departure
    }

    pub fn is_overstaying(&self, slot: usize) -> bool {
        slot >= self.departure && slot < self.actual_departure
    }

    pub fn parking_hours(&self, slot_hours: f64) -> f64 {
        (self.departure - self.arrival) as f64 * slot_hours
    }

    /// Lowest admissible power (kW).
    pub fn min_power_kw(&self) -> f64 {
        if self.bidirectional {
            -self.spec.max_discharge_kw
        } else {
            0.0
        }
    }

    /// Registered slots left at `slot`, counting `slot` itself.
    pub fn slots_remaining(&self, slot: usize) -> usize {
        self.departure.saturating_sub(slot)
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        let err = |reason: &str| FleetError::Session {
            id: self.id,
            reason: reason.into(),
        };
        self.spec.validate().map_err(|r| err(&r))?;
        if self.arrival >= self.departure {
            return Err(err("arrival must precede registered departure"));
        }
        if self.actual_departure < self.departure {
            return Err(err("actual departure precedes registered departure"));
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(self.soc_min) && in_unit(self.soc_max) && in_unit(self.soc_req)) {
            return Err(err("SoC limits must lie in [0, 1]"));
        }
        if self.soc_min > self.soc_max || self.soc_req > self.soc_max {
            return Err(err("requires soc_min <= soc_max and soc_req <= soc_max"));
        }
        if !(self.soc >= self.soc_min && self.soc <= self.soc_max) {
            return Err(err("initial SoC outside [soc_min, soc_max]"));
        }
        Ok(())
    }
}

/// One side of the parking-duration fee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeSchedule {
    /// currency/kWh
    pub base: f64,
    /// currency/kWh, reached at `saturation_hours`
    pub decrease: f64,
    pub saturation_hours: f64,
}

impl FeeSchedule {
    pub fn fee(&self, hours: f64) -> f64 {
        self.base - self.decrease * (hours / self.saturation_hours).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    pub bidirectional: FeeSchedule,
    pub unidirectional: FeeSchedule,
}

impl Default for Tariff {
    fn default() -> Self {
        Self {
            bidirectional: FeeSchedule {
                base: 0.08,
                decrease: 0.015,
                saturation_hours: 6.0,
            },
            unidirectional: FeeSchedule {
                base: 0.10,
                decrease: 0.015,
                saturation_hours: 6.0,
            },
        }
    }
}

impl Tariff {
    pub fn validate(&self) -> Result<(), String> {
        for (name, s) in [
            ("bidirectional", &self.bidirectional),
            ("unidirectional", &self.unidirectional),
        ] {
            if !(s.base > s.decrease && s.decrease >= 0.0 && s.saturation_hours > 0.0) {
                return Err(format!(
                    "{name} fee needs base > decrease >= 0 and positive saturation time"
                ));
            }
        }
        Ok(())
    }

    /// Fee charged to a session for its whole registered stay.
    pub fn session_fee(&self, session: &EvSession, slot_hours: f64) -> f64 {
        let schedule = if session.bidirectional {
            &self.bidirectional
        } else {
            &self.unidirectional
        };
        schedule.fee(session.parking_hours(slot_hours))
    }
}

/// Fee per kWh for a stay of `parking_hours`.
pub fn charging_fee(
    tariff: &Tariff,
    bidirectional: bool,
    parking_hours: f64,
) -> Result<f64, FleetError> {
    if !(parking_hours >= 0.0) {
        return Err(FleetError::NegativeDuration(parking_hours));
    }
    let schedule = if bidirectional {
        &tariff.bidirectional
    } else {
        &tariff.unidirectional
    };
    Ok(schedule.fee(parking_hours))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocStep {
    pub soc: f64,
    /// The raw update left `[soc_min, soc_max]` by more than rounding
    /// noise and was clamped.
    pub clamped: bool,
}

const SOC_CLAMP_TOLERANCE: f64 = 1e-9;

/// Battery update for `power_kw` held for `hours` (positive = charging).
pub fn step_soc(session: &EvSession, power_kw: f64, hours: f64) -> SocStep {
    let delta = if power_kw >= 0.0 {
        power_kw * hours * session.spec.soc_per_charged_kwh()
    } else {
        power_kw * hours * session.spec.soc_per_discharged_kwh()
    };
    let raw = session.soc + delta;
    let soc = raw.clamp(session.soc_min, session.soc_max);
    SocStep {
        soc,
        clamped: (soc - raw).abs() > SOC_CLAMP_TOLERANCE,
    }
}

/// Admission control: lowers an unreachable requirement to the best
/// achievable SoC at max rate and flags the session.
pub fn admit(mut session: EvSession, slot_hours: f64) -> EvSession {
    let slots = session.slots_remaining(session.arrival) as f64;
    let reachable = (session.soc
        + slots * session.spec.max_charge_kw * slot_hours * session.spec.soc_per_charged_kwh())
    .min(session.soc_max);
    if session.soc_req > reachable {
        session.soc_req = reachable;
        session.clamped = true;
    }
    session
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShare {
    pub name: String,
    pub spec: EvModelSpec,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalPeak {
    pub hour: f64,
    pub std_hours: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub count: usize,
    pub aggregators: usize,
    pub slot_hours: f64,
    /// Arrivals are spread over this many days.
    pub days: usize,
    pub models: Vec<ModelShare>,
    pub bidirectional_share: f64,
    pub overstay_share: f64,
    pub max_overstay_hours: f64,
    pub arrival_peaks: Vec<ArrivalPeak>,
    pub parking_median_hours: f64,
    pub parking_sigma: f64,
    pub min_parking_hours: f64,
    pub max_parking_hours: f64,
    pub initial_soc: (f64, f64),
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_req: f64,
    pub seed: Option<u64>,
    /// Scripted population; when present the generator is bypassed.
    pub sessions: Option<Vec<EvSession>>,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            count: 600,
            aggregators: 3,
            slot_hours: 0.25,
            days: 3,
            models: vec![
                ModelShare {
                    name: "large-85kWh".into(),
                    spec: EvModelSpec::LARGE,
                    share: 0.6,
                },
                ModelShare {
                    name: "small-24kWh".into(),
                    spec: EvModelSpec::SMALL,
                    share: 0.4,
                },
            ],
            bidirectional_share: 0.8,
            overstay_share: 0.05,
            max_overstay_hours: 1.0,
            arrival_peaks: vec![
                ArrivalPeak {
                    hour: 8.0,
                    std_hours: 1.0,
                    weight: 0.5,
                },
                ArrivalPeak {
                    hour: 18.0,
                    std_hours: 2.0,
                    weight: 0.5,
                },
            ],
            parking_median_hours: 8.0,
            parking_sigma: 0.35,
            min_parking_hours: 1.0,
            max_parking_hours: 16.0,
            initial_soc: (0.3, 0.6),
            soc_min: 0.0,
            soc_max: 1.0,
            soc_req: 0.9,
            seed: None,
            sessions: None,
        }
    }
}

impl FleetConfig {
    pub fn from_json(text: &str) -> Result<Self, FleetError> {
        serde_json::from_str(text).map_err(|e| FleetError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, FleetError> {
        let text = std::fs::read_to_string(path).map_err(|source| FleetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        let share = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(config_err(field, format!("share {v} outside [0, 1]")))
            }
        };
        share("bidirectional_share", self.bidirectional_share)?;
        share("overstay_share", self.overstay_share)?;
        if !(self.slot_hours > 0.0) {
            return Err(config_err("slot_hours", "must be positive"));
        }
        if self.aggregators == 0 {
            return Err(config_err(
                "aggregators",
                "at least one aggregator required",
            ));
        }
        if let Some(sessions) = &self.sessions {
            for s in sessions {
                s.validate()?;
                if s.aggregator >= self.aggregators {
                    return Err(config_err(
                        "sessions",
                        format!(
                            "session {} names aggregator {} of {}",
                            s.id, s.aggregator, self.aggregators
                        ),
                    ));
                }
            }
            return Ok(());
        }
        if self.days == 0 {
            return Err(config_err("days", "must be positive"));
        }
        if self.models.is_empty() {
            return Err(config_err("models", "at least one model required"));
        }
        for (k, m) in self.models.iter().enumerate() {
            share(&format!("models[{k}].share"), m.share)?;
            m.spec
                .validate()
                .map_err(|r| config_err(&format!("models[{k}].spec"), r))?;
        }
        let total: f64 = self.models.iter().map(|m| m.share).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(config_err(
                "models",
                format!("shares sum to {total}, expected 1"),
            ));
        }
        if self.arrival_peaks.is_empty()
            || self
                .arrival_peaks
                .iter()
                .any(|p| !(p.weight >= 0.0 && p.std_hours > 0.0))
            || self.arrival_peaks.iter().all(|p| p.weight == 0.0)
        {
            return Err(config_err(
                "arrival_peaks",
                "need at least one peak with positive weight and spread",
            ));
        }
        if !(self.parking_median_hours > 0.0 && self.parking_sigma >= 0.0) {
            return Err(config_err(
                "parking_median_hours",
                "median must be positive, sigma non-negative",
            ));
        }
        if !(self.min_parking_hours > 0.0 && self.min_parking_hours <= self.max_parking_hours) {
            return Err(config_err(
                "min_parking_hours",
                "need 0 < min <= max_parking_hours",
            ));
        }
        if !(self.max_overstay_hours >= 0.0) {
            return Err(config_err("max_overstay_hours", "must be non-negative"));
        }
        let (lo, hi) = self.initial_soc;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(config_err("initial_soc", "need 0 <= low <= high <= 1"));
        }
        if !(0.0 <= self.soc_min && self.soc_min <= lo && hi <= self.soc_max && self.soc_max <= 1.0)
        {
            return Err(config_err(
                "soc_min",
                "initial SoC range must sit inside [soc_min, soc_max]",
            ));
        }
        if !(self.soc_req <= self.soc_max && self.soc_req >= self.soc_min) {
            return Err(config_err("soc_req", "must lie in [soc_min, soc_max]"));
        }
        Ok(())
    }

    /// Per-model counts by largest remainder.
    pub fn model_counts(&self) -> Vec<usize> {
        let n = self.count as f64;
        let mut counts: Vec<usize> = self
            .models
            .iter()
            .map(|m| (m.share * n).floor() as usize)
            .collect();
        let mut remainders: Vec<(usize, f64)> = self
            .models
            .iter()
            .enumerate()
            .map(|(k, m)| (k, m.share * n - (m.share * n).floor()))
            .collect();
        remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut missing = self.count - counts.iter().sum::<usize>().min(self.count);
        for (k, _) in remainders {
            if missing == 0 {
                break;
            }
            counts[k] += 1;
            missing -= 1;
        }
        counts
    }
}

/// Deterministic population for `(config, seed)`.
pub fn generate_fleet(config: &FleetConfig, seed: u64) -> Result<Vec<EvSession>, FleetError> {
    config.validate()?;
    if let Some(sessions) = &config.sessions {
        return Ok(sessions.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.count;

    let mut models: Vec<usize> = config
        .model_counts()
        .into_iter()
        .enumerate()
        .flat_map(|(k, c)| std::iter::repeat_n(k, c))
        .collect();
    models.shuffle(&mut rng);
    let mut bidirectional = flags(n, config.bidirectional_share);
    bidirectional.shuffle(&mut rng);
    let mut overstay = flags(n, config.overstay_share);
    overstay.shuffle(&mut rng);

    let total_weight: f64 = config.arrival_peaks.iter().map(|p| p.weight).sum();
    let parking = LogNormal::new(config.parking_median_hours.ln(), config.parking_sigma)
        .map_err(|e| config_err("parking_sigma", e.to_string()))?;
    let dt = config.slot_hours;

    let mut sessions = Vec::with_capacity(n);
    for id in 0..n {
        let day = rng.random_range(0..config.days) as f64;
        let mut pick = rng.random::<f64>() * total_weight;
        let peak = config
            .arrival_peaks
            .iter()
            .find(|p| {
                pick -= p.weight;
                pick < 0.0
            })
            .unwrap_or(&config.arrival_peaks[config.arrival_peaks.len() - 1]);
        let hour = truncated_normal(&mut rng, peak.hour, peak.std_hours, 0.0, 24.0);
        let arrival = ((day * 24.0 + hour) / dt).floor() as usize;

        let stay_hours = parking
            .sample(&mut rng)
            .clamp(config.min_parking_hours, config.max_parking_hours);
        let departure = arrival + ((stay_hours / dt).round() as usize).max(1);
        let actual_departure = if overstay[id] && config.max_overstay_hours > 0.0 {
            let extra = rng.random::<f64>() * config.max_overstay_hours;
            departure + ((extra / dt).ceil() as usize).max(1)
        } else {
            departure
        };
        let (lo, hi) = config.initial_soc;
        let soc = lo + (hi - lo) * rng.random::<f64>();
        let model = &config.models[models[id]];
        let session = EvSession {
            id,
            aggregator: id % config.aggregators,
            spec: model.spec,
            bidirectional: bidirectional[id],
            arrival,
            departure,
            actual_departure,
            soc,
            soc_min: config.soc_min,
            soc_max: config.soc_max,
            soc_req: config.soc_req,
            clamped: false,
        };
        sessions.push(admit(session, dt));
    }
    Ok(sessions)
}

fn flags(n: usize, share: f64) -> Vec<bool> {
    let k = ((share * n as f64).round() as usize).min(n);
    (0..n).map(|i| i < k).collect()
}

fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, std).expect("positive spread checked by validate");
    for _ in 0..64 {
        let v = normal.sample(rng);
        if v >= lo && v < hi {
            return v;
        }
    }
    mean.clamp(lo, hi - 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(spec: EvModelSpec, bidirectional: bool) -> EvSession {
        EvSession {
            id: 0,
            aggregator: 0,
            spec,
            bidirectional,
            arrival: 0,
            departure: 8,
            actual_departure: 8,
            soc: 0.5,
            soc_min: 0.0,
            soc_max: 1.0,
            soc_req: 0.9,
            clamped: false,
        }
    }

    #[test]
    fn fee_values() {
        let t = Tariff::default();
        assert!((charging_fee(&t, true, 3.0).unwrap() - 0.0725).abs() < 1e-15);
        assert!((charging_fee(&t, true, 12.0).unwrap() - 0.065).abs() < 1e-15);
        assert_eq!(charging_fee(&t, true, 0.0).unwrap(), 0.08);
        assert_eq!(charging_fee(&t, false, 0.0).unwrap(), 0.10);
        assert!(matches!(
            charging_fee(&t, true, -1.0),
            Err(FleetError::NegativeDuration(_))
        ));
    }

    #[test]
    fn soc_steps() {
        let small = session(EvModelSpec::SMALL, false);
        let s = step_soc(&small, 6.6, 0.25);
        assert!((s.soc - small.soc - 0.061875).abs() < 1e-15);
        assert!(!s.clamped);
        assert_eq!(step_soc(&small, 0.0, 0.25).soc, small.soc);

        let large = session(EvModelSpec::LARGE, true);
        let s = step_soc(&large, -22.0, 0.25);
        assert!((s.soc - large.soc + 22.0 * 0.25 / (0.9 * 85.0)).abs() < 1e-15);
        assert!((s.soc - large.soc + 0.0718954).abs() < 1e-6);
    }

    #[test]
    fn soc_is_clamped_and_flagged() {
        let mut s = session(EvModelSpec::SMALL, false);
        s.soc = 0.99;
        let step = step_soc(&s, 6.6, 0.25);
        assert_eq!(step.soc, 1.0);
        assert!(step.clamped);
    }

    #[test]
    fn admission_clamps_unreachable_requirement() {
        let mut s = session(EvModelSpec::LARGE, true);
        s.soc = 0.3;
        s.departure = 2;
        s.actual_departure = 2;
        let admitted = admit(s.clone(), 0.25);
        let reach = 0.3 + 2.0 * 22.0 * 0.25 * 0.9 / 85.0;
        assert!(admitted.clamped);
        assert!((admitted.soc_req - reach).abs() < 1e-15);
        s.departure = 40;
        assert!(!admit(s, 0.25).clamped);
    }

    #[test]
    fn generation_is_deterministic() {
        let config = FleetConfig {
            count: 10,
            ..FleetConfig::default()
        };
        let a = generate_fleet(&config, 42).unwrap();
        let b = generate_fleet(&config, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_fleet(&config, 43).unwrap());
    }

    #[test]
    fn zero_bidirectional_share() {
        let config = FleetConfig {
            count: 50,
            bidirectional_share: 0.0,
            ..FleetConfig::default()
        };
        assert!(generate_fleet(&config, 1)
            .unwrap()
            .iter()
            .all(|s| !s.bidirectional));
    }

    #[test]
    fn default_model_mix() {
        let config = FleetConfig::default();
        assert_eq!(config.model_counts(), vec![360, 240]);
        let fleet = generate_fleet(&config, 42).unwrap();
        let large = fleet
            .iter()
            .filter(|s| s.spec == EvModelSpec::LARGE)
            .count();
        assert_eq!((large, fleet.len() - large), (360, 240));
        assert_eq!(fleet.iter().filter(|s| s.bidirectional).count(), 480);
        assert_eq!(
            fleet
                .iter()
                .filter(|s| s.actual_departure > s.departure)
                .count(),
            30
        );
        let overstay_slots = fleet
            .iter()
            .map(|s| s.actual_departure - s.departure)
            .max()
            .unwrap();
        assert!(overstay_slots <= 4);
        for s in &fleet {
            s.validate().unwrap();
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let config = FleetConfig {
            bidirectional_share: 1.3,
            ..FleetConfig::default()
        };
        let err = generate_fleet(&config, 0).unwrap_err().to_string();
        assert!(err.contains("bidirectional_share"), "{err}");
    }
}
