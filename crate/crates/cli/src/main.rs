use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use evtrade::aggregator::PriceProfile;
use evtrade::coordinator::{run_horizon, Mode, SimConfig};
use evtrade::fleet::{generate_fleet, FleetConfig, Tariff};
use evtrade::grid::Network;
use evtrade::oracle::{
    solve_centralized_exact, solve_centralized_relaxed, solve_distributed, OracleInstance,
    MAX_EXACT_AGGREGATORS,
};
use evtrade::scenario::{DayAheadPrices, LoadProfile, Scenario};

mod report;

#[derive(Parser)]
#[command(
    name = "evtrade",
    version,
    about = "Simulate EV aggregators that schedule, trade and respond to grid prices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a rolling-horizon simulation and write reports.
    Run(RunArgs),
    /// Compare the distributed heuristic with the centralized optimum on one snapshot.
    Oracle(OracleArgs),
    /// Load and check all inputs without simulating.
    Validate(InputArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Network case file (JSON).
    #[arg(long)]
    case: PathBuf,
    /// Day-ahead prices, CSV with header `slot,bus,price` (currency/MWh).
    /// A synthetic two-peak curve is used when omitted.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Fleet configuration (JSON). Defaults are used when omitted.
    #[arg(long)]
    fleet: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "all", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, default_value_t = 288)]
    slots: usize,
    #[arg(long, default_value_t = 24)]
    horizon: usize,
    #[arg(long = "max-iters", default_value_t = 6)]
    max_iters: usize,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 8)]
    horizon: usize,
    /// Fleet size when no fleet file is given.
    #[arg(long, default_value_t = 60)]
    evs: usize,
    /// First day-ahead slot of the price window.
    #[arg(long, default_value_t = 64)]
    start: usize,
    /// Optional directory for `oracle.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

const SLOT_HOURS: f64 = 0.25;

struct Inputs {
    network: Network,
    prices: DayAheadPrices,
    fleet: FleetConfig,
}

fn load_inputs(args: &InputArgs, default_count: Option<usize>) -> Result<Inputs> {
    let network = Network::load_case(&args.case)?;
    let prices = match &args.prices {
        Some(path) => {
            DayAheadPrices::load_csv(path, &network).with_context(|| path.display().to_string())?
        }
        None => DayAheadPrices::synthetic(&network, SLOT_HOURS),
    };
    let fleet = match &args.fleet {
        Some(path) => {
            let config = FleetConfig::load(path)?;
            config
                .validate()
                .with_context(|| path.display().to_string())?;
            config
        }
        None => FleetConfig {
            aggregators: network.num_aggregators(),
            count: default_count.unwrap_or(FleetConfig::default().count),
            ..FleetConfig::default()
        },
    };
    if (fleet.slot_hours - SLOT_HOURS).abs() > 1e-12 {
        bail!(
            "fleet config uses {} h slots; only {SLOT_HOURS} h slots are supported",
            fleet.slot_hours
        );
    }
    Ok(Inputs {
        network,
        prices,
        fleet,
    })
}

fn build_scenario(inputs: Inputs, seed: u64) -> Result<Scenario> {
    let load = LoadProfile::for_network(&inputs.network, SLOT_HOURS);
    Ok(Scenario::build(
        inputs.network,
        inputs.prices,
        load,
        &inputs.fleet,
        seed,
    )?)
}

fn run(args: RunArgs) -> Result<()> {
    let seed = args.input.seed;
    let scenario = build_scenario(load_inputs(&args.input, None)?, seed)?;
    let config = SimConfig {
        slot_hours: SLOT_HOURS,
        horizon: args.horizon,
        slots: args.slots,
        mode: args.mode,
        max_iterations: args.max_iters,
        seed,
        ..SimConfig::default()
    };
    let started = Instant::now();
    let report = run_horizon(&scenario, &config)?;
    let files = report::write_run(&args.out, &scenario, &config, &report)?;
    println!(
        "mode {} | {} slots | {} EVs | total profit {:.4} | {:.1} s",
        config.mode,
        config.slots,
        scenario.fleet.len(),
        report.total_profit(),
        started.elapsed().as_secs_f64()
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let inputs = load_inputs(&args.input, Some(args.evs))?;
    let m = inputs.network.num_aggregators();
    if m > MAX_EXACT_AGGREGATORS {
        bail!(
            "exact search needs one LP per trading role pattern (3^{m} here); \
             it is limited to {MAX_EXACT_AGGREGATORS} aggregators"
        );
    }
    if inputs.fleet.aggregators != m {
        bail!(
            "fleet config has {} aggregators, network case has {m}",
            inputs.fleet.aggregators
        );
    }
    let fleet = generate_fleet(&inputs.fleet, args.input.seed)?;
    let prices: Vec<PriceProfile> = (0..m)
        .map(|i| {
            let bus = inputs.network.aggregator_bus(i);
            let buy: Vec<f64> = (0..args.horizon)
                .map(|k| inputs.prices.price_kwh(bus, args.start + k))
                .collect();
            PriceProfile::from_buy(&buy, SimConfig::default().sell_ratio)
        })
        .collect();
    let instance = OracleInstance::snapshot(
        &fleet,
        m,
        prices,
        Tariff::default(),
        args.horizon,
        SLOT_HOURS,
    );

    let started = Instant::now();
    let heuristic = solve_distributed(&instance)?;
    let exact = solve_centralized_exact(&instance)?;
    let relaxed = solve_centralized_relaxed(&instance)?;
    let elapsed = started.elapsed().as_secs_f64();

    let pct = |a: f64, b: f64| {
        if b.abs() > 0.0 {
            100.0 * (b - a) / b.abs()
        } else {
            0.0
        }
    };
    println!("{:<10} {:>14}", "solver", "profit");
    println!("{:<10} {:>14.6}", "heuristic", heuristic.profit);
    println!("{:<10} {:>14.6}", "exact", exact.profit);
    println!("{:<10} {:>14.6}", "relaxed", relaxed.profit);
    println!(
        "gap heuristic vs exact:   {:.3} %",
        pct(heuristic.profit, exact.profit)
    );
    println!(
        "gap heuristic vs relaxed: {:.3} %",
        pct(heuristic.profit, relaxed.profit)
    );
    println!("solve time {elapsed:.2} s");
    if let Some(dir) = &args.out {
        let doc = serde_json::json!({
            "aggregators": m,
            "evs": instance.sessions.len(),
            "horizon": args.horizon,
            "seed": args.input.seed,
            "heuristic": heuristic.profit,
            "exact": exact.profit,
            "relaxed": relaxed.profit,
            "gap_to_exact_pct": pct(heuristic.profit, exact.profit),
            "gap_to_relaxed_pct": pct(heuristic.profit, relaxed.profit),
            "exact_trades_kw": exact.trades_kw,
            "heuristic_trades_kw": heuristic.trades_kw,
        });
        let path = report::write_atomic(
            dir,
            "oracle.json",
            serde_json::to_string_pretty(&doc)?.as_bytes(),
        )?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn validate(args: InputArgs) -> Result<()> {
    let seed = args.seed;
    let scenario = build_scenario(load_inputs(&args, None)?, seed)?;
    let fleet = &scenario.fleet;
    let net = &scenario.network;
    println!("OK");
    println!(
        "network: {} buses, {} lines, {} generators, {} aggregators",
        net.num_buses(),
        net.num_lines(),
        net.generators().len(),
        net.num_aggregators()
    );
    let bidirectional = fleet.iter().filter(|s| s.bidirectional).count();
    let overstay = fleet
        .iter()
        .filter(|s| s.actual_departure > s.departure)
        .count();
    let clamped = fleet.iter().filter(|s| s.clamped).count();
    let mean_stay = fleet
        .iter()
        .map(|s| s.parking_hours(SLOT_HOURS))
        .sum::<f64>()
        / fleet.len().max(1) as f64;
    println!(
        "fleet: {} EVs, {bidirectional} bidirectional, {overstay} overstaying, {clamped} with lowered requirement",
        fleet.len()
    );
    println!("mean registered stay: {mean_stay:.2} h");
    for a in 0..net.num_aggregators() {
        let n = fleet.iter().filter(|s| s.aggregator == a).count();
        println!(
            "aggregator {a} (bus {}): {n} EVs",
            net.buses()[net.aggregator_bus(a)].id
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Oracle(a) => oracle(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}
