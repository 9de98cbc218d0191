//! Browser bindings for three small views of the simulator: the parking fee
//! curve, one auction clearing, and a single EV's plan with the prices it
//! produces on a 2-bus grid.
//!
//! Every export takes and returns JSON text. The `*_json` functions hold the
//! logic and are plain Rust so they can be tested natively.

use evtrade::aggregator::{optimize_schedule, Horizon, PriceProfile};
use evtrade::fleet::{admit, charging_fee, step_soc, EvModelSpec, EvSession, Tariff};
use evtrade::grid::{solve_dcopf, BusRecord, CaseDocument, GeneratorRecord, LineRecord, Network};
use evtrade::market::{balance_trades, AuctionBook, Bid, Candidate};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

const SLOT_HOURS: f64 = 0.25;
const SELL_RATIO: f64 = 0.9;

#[derive(Debug, Serialize)]
pub struct FeeCurve {
    pub hours: Vec<f64>,
    pub bidirectional: Vec<f64>,
    pub unidirectional: Vec<f64>,
}

pub fn fee_curve_json(max_hours: f64, points: usize) -> Result<String, String> {
    if max_hours.is_nan() || max_hours <= 0.0 || points < 2 {
        return Err("need max_hours > 0 and at least 2 points".into());
    }
    let tariff = Tariff::default();
    let hours: Vec<f64> = (0..points)
        .map(|i| max_hours * i as f64 / (points - 1) as f64)
        .collect();
    let fee = |bidi: bool| -> Result<Vec<f64>, String> {
        hours
            .iter()
            .map(|&h| charging_fee(&tariff, bidi, h).map_err(|e| e.to_string()))
            .collect()
    };
    let curve = FeeCurve {
        bidirectional: fee(true)?,
        unidirectional: fee(false)?,
        hours,
    };
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Clearing {
    pub candidates: Vec<Candidate>,
    pub cleared: Option<Candidate>,
    /// `(aggregator, kW)`, positive = bought.
    pub allocations: Vec<(usize, f64)>,
}

/// `bids_json`: `[{"aggregator": 0, "power_kw": 40, "price": 0.05}, ...]`.
pub fn clear_auction_json(bids_json: &str) -> Result<String, String> {
    let bids: Vec<Bid> = serde_json::from_str(bids_json).map_err(|e| format!("bids: {e}"))?;
    if let Some(b) = bids
        .iter()
        .find(|b| !b.power_kw.is_finite() || b.price.is_nan() || b.price < 0.0)
    {
        return Err(format!(
            "aggregator {}: power and price must be finite, price >= 0",
            b.aggregator
        ));
    }
    let book = AuctionBook::new(bids.clone());
    let cleared = book.clear();
    let allocations = cleared.map_or_else(Vec::new, |c| balance_trades(&bids, c.price).allocations);
    serde_json::to_string(&Clearing {
        candidates: book.candidates(),
        cleared,
        allocations,
    })
    .map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct PlanRequest {
    /// Grid buying price per 15-minute slot (currency/kWh).
    pub prices: Vec<f64>,
    pub soc: f64,
    pub soc_req: f64,
    /// Slots until departure.
    pub departure: usize,
    pub bidirectional: bool,
    /// Identical EVs following the plan, all at bus 2.
    pub fleet: usize,
    /// Inelastic load at bus 2 (MW).
    pub base_load_mw: f64,
    pub line_limit_mw: f64,
}

#[derive(Debug, Serialize)]
pub struct PlanResponse {
    pub power_kw: Vec<f64>,
    /// SoC at the start of each slot plus the final value.
    pub soc: Vec<f64>,
    pub fee: f64,
    /// Per slot `[bus 1, bus 2]` (currency/MWh); `None` if dispatch failed.
    pub lmp: Vec<Option<[f64; 2]>>,
    pub fallback: bool,
}

/// Cheap unlimited generation at bus 1, dearer generation at bus 2.
fn two_bus(base_load_mw: f64, line_limit_mw: f64) -> Result<Network, String> {
    let doc = CaseDocument {
        buses: vec![
            BusRecord {
                id: 1,
                load_mw: 0.0,
            },
            BusRecord {
                id: 2,
                load_mw: base_load_mw,
            },
        ],
        lines: vec![LineRecord {
            id: 1,
            from: 1,
            to: 2,
            reactance: 0.1,
            limit_mw: Some(line_limit_mw),
        }],
        generators: vec![
            GeneratorRecord {
                id: 1,
                bus: 1,
                min_mw: 0.0,
                max_mw: 1000.0,
                cost: 10.0,
            },
            GeneratorRecord {
                id: 2,
                bus: 2,
                min_mw: 0.0,
                max_mw: 1000.0,
                cost: 30.0,
            },
        ],
        aggregators: Vec::new(),
        slack_bus: Some(1),
        load_shape: None,
    };
    Network::from_document(&doc).map_err(|e| e.to_string())
}

pub fn plan_session_json(request_json: &str) -> Result<String, String> {
    let req: PlanRequest =
        serde_json::from_str(request_json).map_err(|e| format!("request: {e}"))?;
    if req.prices.is_empty() || req.prices.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err("prices must be non-empty, finite and >= 0".into());
    }
    if req.departure == 0 {
        return Err("departure must be at least one slot away".into());
    }
    let session = EvSession {
        id: 0,
        aggregator: 0,
        spec: EvModelSpec::LARGE,
        bidirectional: req.bidirectional,
        arrival: 0,
        departure: req.departure,
        actual_departure: req.departure,
        soc: req.soc,
        soc_min: 0.0,
        soc_max: 1.0,
        soc_req: req.soc_req,
        clamped: false,
    };
    session.validate().map_err(|e| e.to_string())?;
    let session = admit(session, SLOT_HOURS);

    let tariff = Tariff::default();
    let horizon = Horizon {
        start: 0,
        len: req.prices.len(),
        slot_hours: SLOT_HOURS,
    };
    let prices = PriceProfile::from_buy(&req.prices, SELL_RATIO);
    let outcome = optimize_schedule(
        std::slice::from_ref(&session),
        &tariff,
        &prices,
        None,
        &horizon,
    );
    let power_kw = outcome.schedule.power_kw[0].clone();

    let mut soc = vec![session.soc];
    let mut ev = session.clone();
    for &p in &power_kw {
        ev.soc = step_soc(&ev, p, SLOT_HOURS).soc;
        soc.push(ev.soc);
    }

    let network = two_bus(req.base_load_mw, req.line_limit_mw)?;
    let factors = network.shift_factors().map_err(|e| e.to_string())?;
    let lmp = power_kw
        .iter()
        .map(|p| {
            let draw_mw = p * req.fleet as f64 / 1000.0;
            solve_dcopf(&network, &factors, &[0.0, draw_mw])
                .ok()
                .map(|d| [d.lmp[0], d.lmp[1]])
        })
        .collect();

    serde_json::to_string(&PlanResponse {
        power_kw,
        soc,
        fee: tariff.session_fee(&session, SLOT_HOURS),
        lmp,
        fallback: !outcome.fallback.is_empty(),
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn fee_curve(max_hours: f64, points: usize) -> Result<String, JsError> {
    fee_curve_json(max_hours, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn clear_auction(bids_json: &str) -> Result<String, JsError> {
    clear_auction_json(bids_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn plan_session(request_json: &str) -> Result<String, JsError> {
    plan_session_json(request_json).map_err(|e| JsError::new(&e))
}
