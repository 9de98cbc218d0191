use evtrade_web::{clear_auction_json, fee_curve_json, plan_session_json};
use serde_json::{json, Value};

fn parse(text: String) -> Value {
    serde_json::from_str(&text).unwrap()
}

#[test]
fn fee_curve_endpoints() {
    let v = parse(fee_curve_json(16.0, 17).unwrap());
    let bidi = v["bidirectional"].as_array().unwrap();
    let uni = v["unidirectional"].as_array().unwrap();
    assert_eq!(bidi.len(), 17);
    // fees only fall with longer stays
    for w in bidi.windows(2) {
        assert!(w[1].as_f64().unwrap() <= w[0].as_f64().unwrap());
    }
    assert!(uni[0].as_f64().unwrap() >= bidi[0].as_f64().unwrap());
    assert!(fee_curve_json(0.0, 5).is_err());
}

#[test]
fn auction_trades_balance() {
    let bids = json!([
        {"aggregator": 0, "power_kw": 40.0, "price": 0.06},
        {"aggregator": 1, "power_kw": -30.0, "price": 0.03},
        {"aggregator": 2, "power_kw": 20.0, "price": 0.05}
    ]);
    let v = parse(clear_auction_json(&bids.to_string()).unwrap());
    assert!(v["cleared"].is_object());
    let net: f64 = v["allocations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a[1].as_f64().unwrap())
        .sum();
    assert!(net.abs() < 1e-9);
}

#[test]
fn auction_without_sellers_clears_nothing() {
    let bids = json!([{"aggregator": 0, "power_kw": 40.0, "price": 0.06}]);
    let v = parse(clear_auction_json(&bids.to_string()).unwrap());
    assert!(v["cleared"].is_null());
    assert!(clear_auction_json("[{\"aggregator\": 0}]").is_err());
}

fn plan(base_load_mw: f64, line_limit_mw: f64) -> Value {
    let req = json!({
        "prices": [0.08, 0.08, 0.02, 0.02, 0.08, 0.08, 0.08, 0.08],
        "soc": 0.5, "soc_req": 0.6, "departure": 8, "bidirectional": false,
        "fleet": 100, "base_load_mw": base_load_mw, "line_limit_mw": line_limit_mw
    });
    parse(plan_session_json(&req.to_string()).unwrap())
}

#[test]
fn plan_meets_requirement_in_cheap_slots() {
    let v = plan(50.0, 1000.0);
    let power: Vec<f64> = v["power_kw"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_f64().unwrap())
        .collect();
    let soc = v["soc"].as_array().unwrap();
    assert!(soc.last().unwrap().as_f64().unwrap() >= 0.6 - 1e-9);
    assert!(power[2] > 0.0 && power[3] > 0.0);
    assert_eq!(power[0], 0.0);
}

#[test]
fn two_bus_prices_split_under_congestion() {
    let free = plan(50.0, 1000.0);
    assert_eq!(free["lmp"][0], json!([10.0, 10.0]));
    let tight = plan(50.0, 20.0);
    let lmp = tight["lmp"][0].as_array().unwrap();
    assert!((lmp[0].as_f64().unwrap() - 10.0).abs() < 1e-9);
    assert!((lmp[1].as_f64().unwrap() - 30.0).abs() < 1e-9);
}
