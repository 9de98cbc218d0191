use std::path::Path;

use evtrade::coordinator::{run_horizon, Mode, SimConfig};
use evtrade::fleet::FleetConfig;
use evtrade::grid::Network;
use evtrade::scenario::{DayAheadPrices, LoadProfile, Scenario};

const DT: f64 = 0.25;

fn network() -> Network {
    Network::load_case(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/desk6.case")).unwrap()
}

fn scenario(count: usize, seed: u64) -> Scenario {
    let net = network();
    let prices = DayAheadPrices::synthetic(&net, DT);
    let load = LoadProfile::for_network(&net, DT);
    let fleet = FleetConfig {
        count,
        ..FleetConfig::default()
    };
    Scenario::build(net, prices, load, &fleet, seed).unwrap()
}

fn config(mode: Mode) -> SimConfig {
    SimConfig {
        slots: 96,
        horizon: 12,
        mode,
        ..SimConfig::default()
    }
}

#[test]
fn same_seed_same_report() {
    let s = scenario(150, 3);
    for mode in Mode::EVERY {
        assert_eq!(
            run_horizon(&s, &config(mode)).unwrap(),
            run_horizon(&s, &config(mode)).unwrap(),
            "{mode}"
        );
    }
}

#[test]
fn empty_fleet_earns_nothing() {
    let net = network();
    let prices = DayAheadPrices::synthetic(&net, DT);
    let load = LoadProfile::for_network(&net, DT);
    let s = Scenario::with_sessions(net, prices, load, Vec::new()).unwrap();
    for mode in Mode::EVERY {
        let report = run_horizon(&s, &config(mode)).unwrap();
        assert_eq!(report.total_profit(), 0.0, "{mode}");
        assert!(report
            .slots
            .iter()
            .all(|r| r.net_kw.iter().all(|&p| p == 0.0) && r.trades.is_empty()));
    }
}

#[test]
fn slot_accounts_add_up() {
    let s = scenario(300, 11);
    let cfg = config(Mode::All);
    let report = run_horizon(&s, &cfg).unwrap();
    let mut traded = 0;
    for r in &report.slots {
        for (i, p) in r.profits.iter().enumerate() {
            let net = p.charging_income + p.penalty_income - p.energy_cost - p.trading_cost;
            assert!((p.net - net).abs() < 1e-12);
            let t = r.trades.allocation(i);
            let grid = r.net_kw[i] - t;
            let price = if grid >= 0.0 {
                r.buy_price[i]
            } else {
                r.buy_price[i] * cfg.sell_ratio
            };
            assert!(
                (p.energy_cost - grid * price * DT).abs() < 1e-9,
                "slot {} aggregator {i}",
                r.slot
            );
            assert!((p.trading_cost - t * r.trades.price * DT).abs() < 1e-12);
            traded += usize::from(t != 0.0);
        }
        let sum: f64 = r.profits.iter().map(|p| p.net).sum();
        assert!((r.total.net - sum).abs() < 1e-9);
        // payments between aggregators cancel
        let payments: f64 = r.profits.iter().map(|p| p.trading_cost).sum();
        assert!(payments.abs() < 1e-9);
    }
    assert!(traded > 0);
}
