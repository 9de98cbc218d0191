//! Rolling-horizon simulation loop.
//!
//! Each slot, aggregators plan over the look-ahead window, optionally trade
//! among themselves, and the grid operator recomputes locational prices for
//! the current slot from the resulting injections. Planning is repeated
//! with the updated current-slot prices until they settle, then only the
//! first slot of the final plan is applied.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::{
    greedy_schedule, optimize_schedule, profit, Horizon, PriceProfile, ProfitBreakdown, Schedule,
    SlotPrice,
};
use crate::fleet::{step_soc, EvSession};
use crate::grid::{solve_dcopf_scaled, GridError};
use crate::market::{settle_and_reoptimize, Participant, TradeOutcome};
use crate::scenario::Scenario;
use crate::AggregatorId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Trading and locational price feedback.
    All,
    /// Locational price feedback without trading.
    NoTrade,
    /// Trading on day-ahead prices only.
    NoLmp,
    /// One planning pass on day-ahead prices.
    Planning,
    /// No optimisation: charge at full rate until the requirement is met.
    Greedy,
}

impl Mode {
    pub const EVERY: [Mode; 5] = [
        Mode::All,
        Mode::NoTrade,
        Mode::NoLmp,
        Mode::Planning,
        Mode::Greedy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::All => "all",
            Mode::NoTrade => "notrade",
            Mode::NoLmp => "nolmp",
            Mode::Planning => "planning",
            Mode::Greedy => "greedy",
        }
    }

    pub fn price_feedback(self) -> bool {
        matches!(self, Mode::All | Mode::NoTrade)
    }

    pub fn trading(self) -> bool {
        matches!(self, Mode::All | Mode::NoLmp)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Mode::EVERY
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                format!("unknown mode `{s}` (expected all, notrade, nolmp, planning or greedy)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub slot_hours: f64,
    /// Look-ahead window in slots, the current slot included.
    pub horizon: usize,
    /// Number of slots to simulate.
    pub slots: usize,
    pub start_slot: usize,
    pub mode: Mode,
    pub max_iterations: usize,
    /// Convergence threshold on current-slot prices (currency/kWh).
    pub lmp_tolerance: f64,
    /// Selling price as a fraction of the buying price.
    pub sell_ratio: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            slot_hours: 0.25,
            horizon: 24,
            slots: 288,
            start_slot: 0,
            mode: Mode::All,
            max_iterations: 6,
            lmp_tolerance: 1e-4,
            sell_ratio: 0.9,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), CoordinatorError> {
        let bad = |m: &str| Err(CoordinatorError::Config(m.into()));
        if !(self.slot_hours > 0.0) {
            return bad("slot length must be positive");
        }
        if self.horizon == 0 || self.slots == 0 || self.max_iterations == 0 {
            return bad("horizon, slot count and iteration cap must be positive");
        }
        if !(self.lmp_tolerance > 0.0) {
            return bad("price tolerance must be positive");
        }
        if !(0.0..=1.0).contains(&self.sell_ratio) {
            return bad("selling-price ratio must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("slot {slot}: {source}")]
    Slot { slot: usize, source: GridError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotResult {
    pub slot: usize,
    pub profits: Vec<ProfitBreakdown>,
    pub total: ProfitBreakdown,
    /// Implemented net power per aggregator (kW, positive = drawn).
    pub net_kw: Vec<f64>,
    /// Buying price each aggregator paid this slot (currency/kWh).
    pub buy_price: Vec<f64>,
    /// Locational prices per bus (currency/MWh); `None` if the dispatch
    /// failed before any price was available.
    pub lmp_mwh: Option<Vec<f64>>,
    pub trades: TradeOutcome,
    pub voided: Vec<AggregatorId>,
    pub iterations: usize,
    pub converged: bool,
    pub opf_fallback: bool,
    /// Sessions scheduled greedily because their LP failed.
    pub lp_fallbacks: usize,
    pub soc_clamps: usize,
    pub present: usize,
    pub departures: usize,
    /// Non-clamped departures below their requirement.
    pub shortfalls: usize,
}

impl SlotResult {
    pub fn charging_load_kw(&self) -> f64 {
        self.net_kw.iter().sum()
    }

    pub fn average_buy_price(&self) -> f64 {
        self.buy_price.iter().sum::<f64>() / self.buy_price.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub mode: Mode,
    pub slot_hours: f64,
    pub slots: Vec<SlotResult>,
}

impl SimulationReport {
    /// Sum of the per-slot nets in slot order.
    pub fn total_profit(&self) -> f64 {
        self.slots.iter().fold(0.0, |acc, s| acc + s.total.net)
    }

    pub fn totals(&self) -> ProfitBreakdown {
        ProfitBreakdown::sum(self.slots.iter().map(|s| &s.total))
    }

    pub fn charging_load_kw(&self) -> Vec<f64> {
        self.slots
            .iter()
            .map(SlotResult::charging_load_kw)
            .collect()
    }

    pub fn average_buy_price(&self) -> Vec<f64> {
        self.slots
            .iter()
            .map(SlotResult::average_buy_price)
            .collect()
    }

    pub fn max_iterations(&self) -> usize {
        self.slots.iter().map(|s| s.iterations).max().unwrap_or(0)
    }

    pub fn unconverged_slots(&self) -> usize {
        self.slots.iter().filter(|s| !s.converged).count()
    }

    pub fn shortfalls(&self) -> usize {
        self.slots.iter().map(|s| s.shortfalls).sum()
    }
}

/// Pearson correlation; `NaN` when either series is constant.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Plan of every aggregator for one pricing iteration.
struct Plan {
    schedules: Vec<Schedule>,
    trades: TradeOutcome,
    voided: Vec<AggregatorId>,
    lp_fallbacks: usize,
}

/// Fleet state carried from slot to slot.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    config: SimConfig,
    sessions: Vec<EvSession>,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, config: SimConfig) -> Result<Self, CoordinatorError> {
        config.validate()?;
        Ok(Self {
            scenario,
            config,
            sessions: scenario.fleet.clone(),
        })
    }

    pub fn sessions(&self) -> &[EvSession] {
        &self.sessions
    }

    fn horizon(&self, slot: usize) -> Horizon {
        Horizon {
            start: slot,
            len: self.config.horizon,
            slot_hours: self.config.slot_hours,
        }
    }

    fn day_ahead_profile(&self, aggregator: AggregatorId, slot: usize) -> PriceProfile {
        let bus = self.scenario.network.aggregator_bus(aggregator);
        let buy: Vec<f64> = (0..self.config.horizon)
            .map(|k| self.scenario.prices.price_kwh(bus, slot + k))
            .collect();
        PriceProfile::from_buy(&buy, self.config.sell_ratio)
    }

    fn plan(
        &self,
        groups: &[Vec<EvSession>],
        profiles: &[PriceProfile],
        horizon: &Horizon,
    ) -> Plan {
        let tariff = &self.scenario.tariff;
        if self.config.mode == Mode::Greedy {
            return Plan {
                schedules: groups.iter().map(|g| greedy_schedule(g, horizon)).collect(),
                trades: TradeOutcome::default(),
                voided: Vec::new(),
                lp_fallbacks: 0,
            };
        }
        let mut lp_fallbacks = 0;
        let schedules: Vec<Schedule> = groups
            .iter()
            .zip(profiles)
            .map(|(g, p)| {
                let out = optimize_schedule(g, tariff, p, None, horizon);
                lp_fallbacks += out.fallback.len();
                out.schedule
            })
            .collect();
        if !self.config.mode.trading() {
            return Plan {
                schedules,
                trades: TradeOutcome::default(),
                voided: Vec::new(),
                lp_fallbacks,
            };
        }
        let participants: Vec<Participant> = schedules
            .into_iter()
            .enumerate()
            .map(|(i, schedule)| Participant {
                aggregator: i,
                sessions: &groups[i],
                prices: &profiles[i],
                schedule,
            })
            .collect();
        let settled = settle_and_reoptimize(&participants, tariff, horizon);
        Plan {
            schedules: settled.schedules,
            trades: settled.trades,
            voided: settled.voided,
            lp_fallbacks,
        }
    }

    /// Runs slot `slot` and advances the fleet state.
    pub fn run_timeslot(&mut self, slot: usize) -> Result<SlotResult, CoordinatorError> {
        let scenario = self.scenario;
        let network = &scenario.network;
        let m = network.num_aggregators();
        let dt = self.config.slot_hours;
        let horizon = self.horizon(slot);

        let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (idx, s) in self.sessions.iter().enumerate() {
            if s.is_present(slot) {
                members[s.aggregator].push(idx);
            }
        }
        let groups: Vec<Vec<EvSession>> = members
            .iter()
            .map(|idx| idx.iter().map(|&i| self.sessions[i].clone()).collect())
            .collect();
        let mut profiles: Vec<PriceProfile> =
            (0..m).map(|i| self.day_ahead_profile(i, slot)).collect();

        let dispatch = |plan: &Plan| {
            let mut injections = vec![0.0; network.num_buses()];
            for (i, s) in plan.schedules.iter().enumerate() {
                injections[network.aggregator_bus(i)] += s.net_kw(0) / 1000.0;
            }
            solve_dcopf_scaled(
                network,
                &scenario.factors,
                &injections,
                scenario.load_profile.multiplier(slot),
            )
        };

        let mut plan = self.plan(&groups, &profiles, &horizon);
        let mut iterations = 1;
        let mut converged = !self.config.mode.price_feedback();
        let mut opf_fallback = false;
        let mut lmp_mwh: Option<Vec<f64>> = None;
        loop {
            match dispatch(&plan) {
                Ok(result) => {
                    let previous = lmp_mwh.replace(result.lmp);
                    if !self.config.mode.price_feedback() {
                        break;
                    }
                    let current = lmp_mwh.as_ref().expect("just set");
                    if let Some(prev) = previous {
                        let change = network
                            .aggregator_buses()
                            .iter()
                            .map(|&b| (current[b] - prev[b]).abs() / 1000.0)
                            .fold(0.0, f64::max);
                        if change < self.config.lmp_tolerance {
                            converged = true;
                            break;
                        }
                    }
                    if iterations == self.config.max_iterations {
                        break;
                    }
                    for (i, p) in profiles.iter_mut().enumerate() {
                        let buy = (current[network.aggregator_bus(i)] / 1000.0).max(0.0);
                        p.slots[0] = SlotPrice::with_ratio(buy, self.config.sell_ratio);
                    }
                    plan = self.plan(&groups, &profiles, &horizon);
                    iterations += 1;
                }
                Err(GridError::Infeasible) => {
                    opf_fallback = true;
                    break;
                }
                Err(source) => return Err(CoordinatorError::Slot { slot, source }),
            }
        }
        Ok(self.apply(
            slot,
            &members,
            &groups,
            &profiles,
            plan,
            lmp_mwh,
            iterations,
            converged,
            opf_fallback,
            dt,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn apply(
        &mut self,
        slot: usize,
        members: &[Vec<usize>],
        groups: &[Vec<EvSession>],
        profiles: &[PriceProfile],
        plan: Plan,
        lmp_mwh: Option<Vec<f64>>,
        iterations: usize,
        converged: bool,
        opf_fallback: bool,
        dt: f64,
    ) -> SlotResult {
        let tariff = &self.scenario.tariff;
        let mut profits = Vec::with_capacity(members.len());
        let mut net_kw = Vec::with_capacity(members.len());
        let mut soc_clamps = 0;
        let mut departures = 0;
        let mut shortfalls = 0;
        for (i, idx) in members.iter().enumerate() {
            let powers: Vec<f64> = plan.schedules[i]
                .power_kw
                .iter()
                .map(|row| row[0])
                .collect();
            profits.push(profit(
                &groups[i],
                &powers,
                slot,
                profiles[i].slots[0],
                plan.trades.term(i),
                tariff,
                dt,
            ));
            net_kw.push(powers.iter().sum());
            for (&k, &p) in idx.iter().zip(&powers) {
                let s = &mut self.sessions[k];
                let step = step_soc(s, p, dt);
                soc_clamps += usize::from(step.clamped);
                s.soc = step.soc;
                if s.departure == slot + 1 {
                    departures += 1;
                    if !s.clamped && s.soc < s.soc_req - 1e-6 {
                        shortfalls += 1;
                    }
                }
            }
        }
        SlotResult {
            slot,
            total: ProfitBreakdown::sum(&profits),
            profits,
            net_kw,
            buy_price: profiles.iter().map(|p| p.slots[0].buy).collect(),
            lmp_mwh,
            trades: plan.trades,
            voided: plan.voided,
            iterations,
            converged,
            opf_fallback,
            lp_fallbacks: plan.lp_fallbacks,
            soc_clamps,
            present: members.iter().map(Vec::len).sum(),
            departures,
            shortfalls,
        }
    }

    pub fn run(mut self) -> Result<SimulationReport, CoordinatorError> {
        let start = self.config.start_slot;
        let slots = (start..start + self.config.slots)
            .map(|t| self.run_timeslot(t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SimulationReport {
            mode: self.config.mode,
            slot_hours: self.config.slot_hours,
            slots,
        })
    }
}

pub fn run_horizon(
    scenario: &Scenario,
    config: &SimConfig,
) -> Result<SimulationReport, CoordinatorError> {
    Simulation::new(scenario, config.clone())?.run()
}
