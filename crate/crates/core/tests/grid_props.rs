use std::path::Path;

use evtrade::grid::{solve_dcopf_scaled, CaseDocument, Network};
use proptest::prelude::*;

fn desk_doc() -> CaseDocument {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/desk6.case");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn desk() -> Network {
    Network::from_document(&desk_doc()).unwrap()
}

fn injections() -> impl Strategy<Value = (f64, Vec<f64>)> {
    (0.5f64..1.15, prop::collection::vec(-4.0f64..8.0, 6))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn lmp_is_energy_price_less_congestion((scale, inj) in injections()) {
        let net = desk();
        let sf = net.shift_factors().unwrap();
        let Ok(d) = solve_dcopf_scaled(&net, &sf, &inj, scale) else { return Ok(()) };
        for s in 0..net.num_buses() {
            let congestion: f64 = (0..net.num_lines()).map(|l| d.congestion[l] * sf.get(l, s)).sum();
            prop_assert!((d.lmp[s] - (d.lambda - congestion)).abs() < 1e-9);
        }
    }

    #[test]
    fn lmp_matches_cost_sensitivity((scale, inj) in injections(), bus in 0usize..6) {
        let net = desk();
        let sf = net.shift_factors().unwrap();
        let cost = |extra: f64| {
            let mut v = inj.clone();
            v[bus] += extra;
            solve_dcopf_scaled(&net, &sf, &v, scale).ok().map(|d| d.total_cost)
        };
        let (Some(c0), Some(up), Some(down)) = (cost(0.0), cost(1.0), cost(-1.0)) else { return Ok(()) };
        let d = solve_dcopf_scaled(&net, &sf, &inj, scale).unwrap();
        let forward = up - c0;
        let backward = c0 - down;
        // Only away from basis changes is the price a derivative.
        prop_assume!((forward - backward).abs() < 1e-6);
        prop_assert!((forward - d.lmp[bus]).abs() <= 1e-3 * d.lambda.abs().max(1.0),
            "bus {bus}: finite difference {forward}, lmp {}", d.lmp[bus]);
    }

    #[test]
    fn balance_and_cost_are_consistent((scale, inj) in injections()) {
        let net = desk();
        let sf = net.shift_factors().unwrap();
        let Ok(d) = solve_dcopf_scaled(&net, &sf, &inj, scale) else { return Ok(()) };
        let demand: f64 = net.buses().iter().map(|b| b.load_mw * scale).sum::<f64>() + inj.iter().sum::<f64>();
        prop_assert!((d.generation_mw.iter().sum::<f64>() - demand).abs() < 1e-6);
        let cost: f64 = net.generators().iter().zip(&d.generation_mw).map(|(g, p)| g.cost * p).sum();
        prop_assert!((cost - d.total_cost).abs() <= 1e-9 * cost.abs().max(1.0));
        for (l, line) in net.lines().iter().enumerate() {
            prop_assert!(d.flows_mw[l].abs() <= line.limit_mw + 1e-6);
        }
    }

    #[test]
    fn no_congestion_means_uniform_prices((scale, inj) in injections()) {
        let mut doc = desk_doc();
        for l in &mut doc.lines {
            l.limit_mw = None;
        }
        let net = Network::from_document(&doc).unwrap();
        let sf = net.shift_factors().unwrap();
        let Ok(d) = solve_dcopf_scaled(&net, &sf, &inj, scale) else { return Ok(()) };
        prop_assert!(!d.is_congested());
        let lo = d.lmp.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.lmp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(hi - lo < 1e-6);
    }
}
