//! Inputs of a simulation run: network, day-ahead prices, load shape and
//! EV population.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::fleet::{generate_fleet, EvSession, FleetConfig, FleetError, Tariff};
use crate::grid::{GridError, Network, ShiftFactors};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error("cannot read price file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("price file line {line}: {reason}")]
    PriceRow { line: u64, reason: String },
    #[error("price file: {0}")]
    Prices(String),
    #[error("{0}")]
    Mismatch(String),
}

/// Day-ahead prices per bus (currency/MWh), repeated periodically.
#[derive(Debug, Clone, PartialEq)]
pub struct DayAheadPrices {
    /// Indexed by network bus index; `None` for buses the file omits.
    per_bus: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
struct PriceRecord {
    slot: usize,
    bus: usize,
    price: f64,
}

impl DayAheadPrices {
    /// Reads `slot,bus,price` rows. Every bus listed must exist, and each
    /// listed bus must cover the same contiguous slot range starting at 0.
    pub fn from_reader<R: Read>(reader: R, network: &Network) -> Result<Self, ScenarioError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
        let headers = rdr
            .headers()
            .map_err(|e| ScenarioError::PriceRow {
                line: 1,
                reason: e.to_string(),
            })?
            .clone();
        for raw in rdr.records() {
            let raw = raw.map_err(|e| ScenarioError::PriceRow {
                line: e.position().map_or(0, |p| p.line()),
                reason: e.to_string(),
            })?;
            let line = raw.position().map_or(0, |p| p.line());
            let record: PriceRecord =
                raw.deserialize(Some(&headers))
                    .map_err(|e| ScenarioError::PriceRow {
                        line,
                        reason: e.to_string(),
                    })?;
            let bus = network
                .bus_index(record.bus)
                .ok_or_else(|| ScenarioError::PriceRow {
                    line,
                    reason: format!("unknown bus {}", record.bus),
                })?;
            if !(record.price.is_finite() && record.price >= 0.0) {
                return Err(ScenarioError::PriceRow {
                    line,
                    reason: format!("price {} must be finite and non-negative", record.price),
                });
            }
            if rows
                .entry(bus)
                .or_default()
                .insert(record.slot, record.price)
                .is_some()
            {
                return Err(ScenarioError::PriceRow {
                    line,
                    reason: format!(
                        "duplicate entry for slot {} at bus {}",
                        record.slot, record.bus
                    ),
                });
            }
        }
        if rows.is_empty() {
            return Err(ScenarioError::Prices("no price rows".into()));
        }
        let period = rows
            .values()
            .map(|r| r.keys().last().map_or(0, |s| s + 1))
            .max()
            .unwrap_or(0);
        let mut per_bus = vec![None; network.num_buses()];
        for (bus, slots) in rows {
            let id = network.buses()[bus].id;
            if let Some(gap) = first_gap(&slots, period) {
                return Err(ScenarioError::Prices(format!(
                    "bus {id}: missing slots {}..={}",
                    gap.0, gap.1
                )));
            }
            per_bus[bus] = Some(slots.into_values().collect());
        }
        for &bus in network.aggregator_buses() {
            if per_bus[bus].is_none() {
                return Err(ScenarioError::Prices(format!(
                    "no prices for aggregator bus {}",
                    network.buses()[bus].id
                )));
            }
        }
        Ok(Self { per_bus })
    }

    pub fn load_csv(path: &Path, network: &Network) -> Result<Self, ScenarioError> {
        let file = std::fs::File::open(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file, network)
    }

    /// Two-peak daily curve with a mild price spread between buses.
    pub fn synthetic(network: &Network, slot_hours: f64) -> Self {
        let per_day = (24.0 / slot_hours).round() as usize;
        let n = network.num_buses();
        let per_bus = (0..n)
            .map(|b| {
                let scale = 1.0 + 0.04 * b as f64 / n.max(1) as f64;
                Some(
                    (0..per_day)
                        .map(|k| scale * synthetic_price((k as f64 + 0.5) * slot_hours))
                        .collect(),
                )
            })
            .collect();
        Self { per_bus }
    }

    /// Price at `bus` (network index) in `slot`, wrapping past the end.
    pub fn price_mwh(&self, bus: usize, slot: usize) -> f64 {
        let series = self.per_bus[bus]
            .as_ref()
            .expect("prices are validated for every aggregator bus");
        series[slot % series.len()]
    }

    pub fn price_kwh(&self, bus: usize, slot: usize) -> f64 {
        self.price_mwh(bus, slot) / 1000.0
    }

    pub fn covers(&self, bus: usize) -> bool {
        self.per_bus.get(bus).is_some_and(Option::is_some)
    }
}

fn first_gap(slots: &BTreeMap<usize, f64>, period: usize) -> Option<(usize, usize)> {
    let mut expected = 0;
    for &s in slots.keys() {
        if s != expected {
            return Some((expected, s - 1));
        }
        expected += 1;
    }
    (expected < period).then(|| (expected, period - 1))
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    // distance on the 24 h circle
    let d = (hour - centre).rem_euclid(24.0);
    let d = d.min(24.0 - d);
    (-0.5 * (d / width).powi(2)).exp()
}

/// currency/MWh
fn synthetic_price(hour: f64) -> f64 {
    30.0 + 18.0 * bump(hour, 8.5, 1.8) + 30.0 * bump(hour, 19.0, 2.2) - 10.0 * bump(hour, 3.5, 2.5)
}

/// Multiplier applied to every inelastic network load.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    per_slot: Vec<f64>,
}

impl LoadProfile {
    pub fn flat() -> Self {
        Self {
            per_slot: vec![1.0],
        }
    }

    /// Daily shape between roughly 0.55 at night and 1.1 in the evening.
    pub fn diurnal(slot_hours: f64) -> Self {
        let per_day = (24.0 / slot_hours).round() as usize;
        let per_slot = (0..per_day)
            .map(|k| {
                let h = (k as f64 + 0.5) * slot_hours;
                0.55 + 0.3 * bump(h, 9.0, 2.5) + 0.55 * bump(h, 19.0, 2.8)
            })
            .collect();
        Self { per_slot }
    }

    /// Evenly spaced daily multipliers, held constant between points.
    pub fn from_daily_shape(shape: &[f64], slot_hours: f64) -> Self {
        let per_day = (24.0 / slot_hours).round() as usize;
        let per_slot = (0..per_day)
            .map(|k| {
                let h = (k as f64 + 0.5) * slot_hours;
                shape[((h / 24.0 * shape.len() as f64) as usize).min(shape.len() - 1)]
            })
            .collect();
        Self { per_slot }
    }

    /// The case file's shape if it has one, else [`LoadProfile::diurnal`].
    pub fn for_network(network: &Network, slot_hours: f64) -> Self {
        match network.load_shape() {
            Some(shape) => Self::from_daily_shape(shape, slot_hours),
            None => Self::diurnal(slot_hours),
        }
    }

    pub fn multiplier(&self, slot: usize) -> f64 {
        self.per_slot[slot % self.per_slot.len()]
    }
}

/// Everything a run needs besides its [`crate::coordinator::SimConfig`].
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Network,
    pub factors: ShiftFactors,
    pub prices: DayAheadPrices,
    pub load_profile: LoadProfile,
    pub fleet: Vec<EvSession>,
    pub tariff: Tariff,
}

impl Scenario {
    /// Generates the fleet for `seed` and checks it against the network.
    pub fn build(
        network: Network,
        prices: DayAheadPrices,
        load_profile: LoadProfile,
        fleet: &FleetConfig,
        seed: u64,
    ) -> Result<Self, ScenarioError> {
        if fleet.aggregators != network.num_aggregators() {
            return Err(ScenarioError::Mismatch(format!(
                "fleet config has {} aggregators, network case has {}",
                fleet.aggregators,
                network.num_aggregators()
            )));
        }
        let sessions = generate_fleet(fleet, seed)?;
        Self::with_sessions(network, prices, load_profile, sessions)
    }

    pub fn with_sessions(
        network: Network,
        prices: DayAheadPrices,
        load_profile: LoadProfile,
        fleet: Vec<EvSession>,
    ) -> Result<Self, ScenarioError> {
        for s in &fleet {
            s.validate()?;
            if s.aggregator >= network.num_aggregators() {
                return Err(ScenarioError::Mismatch(format!(
                    "session {} belongs to aggregator {}, network has {}",
                    s.id,
                    s.aggregator,
                    network.num_aggregators()
                )));
            }
        }
        for &bus in network.aggregator_buses() {
            if !prices.covers(bus) {
                return Err(ScenarioError::Prices(format!(
                    "no prices for aggregator bus {}",
                    network.buses()[bus].id
                )));
            }
        }
        let factors = network.shift_factors()?;
        Ok(Self {
            network,
            factors,
            prices,
            load_profile,
            fleet,
            tariff: Tariff::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE: &str = r#"{
        "buses": [{"id": 1, "load_mw": 0}, {"id": 2, "load_mw": 50}],
        "lines": [{"id": 1, "from": 1, "to": 2, "reactance": 0.1}],
        "generators": [{"id": 1, "bus": 1, "min_mw": 0, "max_mw": 200, "cost": 10}],
        "aggregators": [{"id": 0, "bus": 2}]
    }"#;

    fn net() -> Network {
        Network::from_json(CASE).unwrap()
    }

    #[test]
    fn reads_and_wraps_prices() {
        let csv = "slot,bus,price\n0,2,30\n1,2,40\n0,1,20\n1,1,25\n";
        let p = DayAheadPrices::from_reader(csv.as_bytes(), &net()).unwrap();
        assert_eq!(p.price_mwh(1, 0), 30.0);
        assert_eq!(p.price_mwh(1, 3), 40.0);
        assert!((p.price_kwh(0, 1) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn reports_missing_slot_range() {
        let csv = "slot,bus,price\n0,2,30\n3,2,40\n0,1,1\n1,1,1\n2,1,1\n3,1,1\n";
        let err = DayAheadPrices::from_reader(csv.as_bytes(), &net())
            .unwrap_err()
            .to_string();
        assert!(err.contains("bus 2: missing slots 1..=2"), "{err}");
    }

    #[test]
    fn reports_short_series() {
        let csv = "slot,bus,price\n0,2,30\n0,1,1\n1,1,1\n";
        let err = DayAheadPrices::from_reader(csv.as_bytes(), &net())
            .unwrap_err()
            .to_string();
        assert!(err.contains("bus 2: missing slots 1..=1"), "{err}");
    }

    #[test]
    fn rejects_unknown_bus_and_bad_rows() {
        let err = DayAheadPrices::from_reader("slot,bus,price\n0,9,30\n".as_bytes(), &net())
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown bus 9"), "{err}");
        let err = DayAheadPrices::from_reader("slot,bus,price\n0,2,abc\n".as_bytes(), &net())
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn requires_aggregator_bus() {
        let err = DayAheadPrices::from_reader("slot,bus,price\n0,1,30\n".as_bytes(), &net())
            .unwrap_err()
            .to_string();
        assert!(err.contains("aggregator bus 2"), "{err}");
    }

    #[test]
    fn synthetic_shapes() {
        let p = DayAheadPrices::synthetic(&net(), 0.25);
        let night = p.price_mwh(0, 14);
        let evening = p.price_mwh(0, 76);
        assert!(evening > night + 20.0, "{night} {evening}");
        assert_eq!(p.price_mwh(0, 10), p.price_mwh(0, 10 + 96));
        let hourly =
            LoadProfile::from_daily_shape(&(0..24).map(f64::from).collect::<Vec<_>>(), 0.25);
        assert_eq!(hourly.multiplier(0), 0.0);
        assert_eq!(hourly.multiplier(7), 1.0);
        assert_eq!(hourly.multiplier(95), 23.0);
        let l = LoadProfile::diurnal(0.25);
        assert!(l.multiplier(76) > l.multiplier(14));
        assert!((0.5..=1.15).contains(&l.multiplier(76)));
    }
}
