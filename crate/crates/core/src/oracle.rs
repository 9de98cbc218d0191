//! Centralized benchmark: one LP over every session of every aggregator,
//! with peer trades in the current slot chosen jointly.
//!
//! The trade limits `0 <= T <= P` (buyer) and `P <= T <= 0` (seller) are
//! only convex once each aggregator's role is fixed, so the exact optimum
//! enumerates role patterns. Replacing them by the aggregators' rate
//! limits gives an upper bound.
//!
//! Both are exact only where no session gains from charging and
//! discharging in the same slot. Elsewhere that exclusion is searched with
//! a bounded branch and bound, so the values are best found rather than
//! proven optimal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::{
    add_session_block, horizon_profit, optimize_schedule, solve_without_overlap, Horizon,
    PriceProfile, Schedule, SessionBlock, TradeTerm,
};
use crate::fleet::{admit, EvSession, Tariff};
use crate::lp::{LinearProgram, LpError, Relation, VarId};
use crate::market::{settle_and_reoptimize, Participant};

/// Patterns grow as 3^m; beyond this the exact search is refused.
pub const MAX_EXACT_AGGREGATORS: usize = 12;

/// LP solves per model spent excluding simultaneous charge and discharge.
const MODEL_SOLVES: usize = 64;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("no feasible schedule exists for this instance")]
    Infeasible,
    #[error("exact search over {0} aggregators is too large (limit {MAX_EXACT_AGGREGATORS})")]
    TooLarge(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Buyer,
    Seller,
    Neutral,
}

/// Snapshot of a market at one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInstance {
    /// Sessions present at `horizon.start`.
    pub sessions: Vec<EvSession>,
    pub aggregators: usize,
    /// Per-aggregator grid prices over the horizon.
    pub prices: Vec<PriceProfile>,
    pub tariff: Tariff,
    pub horizon: Horizon,
}

impl OracleInstance {
    /// Puts every session's arrival at slot 0 (keeping its stay length)
    /// so the whole fleet is present at once.
    pub fn snapshot(
        fleet: &[EvSession],
        aggregators: usize,
        prices: Vec<PriceProfile>,
        tariff: Tariff,
        horizon_len: usize,
        slot_hours: f64,
    ) -> Self {
        let sessions = fleet
            .iter()
            .map(|s| {
                let shift = s.arrival;
                let moved = EvSession {
                    arrival: 0,
                    departure: s.departure - shift,
                    actual_departure: s.actual_departure - shift,
                    clamped: false,
                    ..s.clone()
                };
                admit(moved, slot_hours)
            })
            .collect();
        Self {
            sessions,
            aggregators,
            prices,
            tariff,
            horizon: Horizon {
                start: 0,
                len: horizon_len,
                slot_hours,
            },
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::Invalid(m));
        if self.prices.len() != self.aggregators {
            return bad(format!(
                "{} price profiles for {} aggregators",
                self.prices.len(),
                self.aggregators
            ));
        }
        if self.horizon.len == 0 || !(self.horizon.slot_hours > 0.0) {
            return bad("horizon must be non-empty with positive slot length".into());
        }
        for (i, p) in self.prices.iter().enumerate() {
            if p.len() < self.horizon.len {
                return bad(format!(
                    "aggregator {i}: prices cover {} of {} slots",
                    p.len(),
                    self.horizon.len
                ));
            }
            p.validate()
                .map_err(|e| OracleError::Invalid(format!("aggregator {i}: {e}")))?;
        }
        for s in &self.sessions {
            s.validate()
                .map_err(|e| OracleError::Invalid(e.to_string()))?;
            if s.aggregator >= self.aggregators {
                return bad(format!(
                    "session {} names unknown aggregator {}",
                    s.id, s.aggregator
                ));
            }
            if !s.is_present(self.horizon.start) {
                return bad(format!(
                    "session {} is not present at slot {}",
                    s.id, self.horizon.start
                ));
            }
        }
        Ok(())
    }

    pub fn sessions_of(&self, aggregator: usize) -> Vec<EvSession> {
        self.sessions
            .iter()
            .filter(|s| s.aggregator == aggregator)
            .cloned()
            .collect()
    }

    /// Total profit of a plan: the sum of every aggregator's horizon
    /// profit. Trade payments cancel between aggregators and are left out.
    pub fn evaluate(&self, schedules: &[Schedule], trades_kw: &[f64]) -> f64 {
        (0..self.aggregators)
            .map(|i| {
                let term = (trades_kw[i] != 0.0).then_some(TradeTerm {
                    power_kw: trades_kw[i],
                    price: 0.0,
                });
                horizon_profit(
                    &self.sessions_of(i),
                    &schedules[i],
                    &self.prices[i],
                    term,
                    &self.tariff,
                    &self.horizon,
                )
                .net
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    /// Value of the plan under the shared profit evaluation.
    pub profit: f64,
    pub schedules: Vec<Schedule>,
    /// Current-slot trade per aggregator (kW, positive = bought).
    pub trades_kw: Vec<f64>,
    /// Role pattern of the optimum (exact search only).
    pub pattern: Option<Vec<Role>>,
}

#[derive(Debug, Clone, Copy)]
enum TradeLimits<'a> {
    Roles(&'a [Role]),
    Free,
}

struct Model {
    lp: LinearProgram,
    blocks: Vec<(usize, SessionBlock)>,
    trades: Vec<Option<VarId>>,
}

fn build(inst: &OracleInstance, limits: TradeLimits) -> Model {
    let h = &inst.horizon;
    let dt = h.slot_hours;
    let mut lp = LinearProgram::new();
    let mut blocks = Vec::with_capacity(inst.sessions.len());
    // (var, coefficient) of each aggregator's session power, per slot
    let mut draws: Vec<Vec<Vec<(VarId, f64)>>> = vec![vec![Vec::new(); h.len]; inst.aggregators];
    for s in &inst.sessions {
        let fee = inst.tariff.session_fee(s, dt);
        let block = add_session_block(&mut lp, s, h, |_| fee * dt, |_| -fee * dt);
        for (k, c) in block.charge.iter().enumerate() {
            draws[s.aggregator][k].push((*c, 1.0));
            if let Some(d) = block.discharge[k] {
                draws[s.aggregator][k].push((d, -1.0));
            }
        }
        blocks.push((s.aggregator, block));
    }

    // Rate limits of each aggregator in the current slot. Every feasible
    // trade lies inside them, and they keep the relaxation bounded when one
    // aggregator's selling price exceeds another's buying price.
    let mut rate = vec![(0.0, 0.0); inst.aggregators];
    for (s, block) in inst.sessions.iter().zip(&blocks) {
        if !block.1.charge.is_empty() {
            rate[s.aggregator].1 += s.spec.max_charge_kw;
            rate[s.aggregator].0 += s.min_power_kw();
        }
    }
    let trades: Vec<Option<VarId>> = (0..inst.aggregators)
        .map(|i| match limits {
            TradeLimits::Free => Some(lp.add_var(0.0, rate[i].0, rate[i].1)),
            TradeLimits::Roles(roles) => match roles[i] {
                Role::Buyer => Some(lp.add_var(0.0, 0.0, f64::INFINITY)),
                Role::Seller => Some(lp.add_var(0.0, f64::NEG_INFINITY, 0.0)),
                Role::Neutral => None,
            },
        })
        .collect();

    for i in 0..inst.aggregators {
        for (k, slot) in draws[i].iter().enumerate() {
            let price = inst.prices[i].slots[k];
            let buy = lp.add_var(-price.buy * dt, 0.0, f64::INFINITY);
            let sell = lp.add_var(price.sell * dt, 0.0, f64::INFINITY);
            let mut row = slot.clone();
            row.push((buy, -1.0));
            row.push((sell, 1.0));
            if k == 0 {
                if let Some(t) = trades[i] {
                    row.push((t, -1.0));
                }
            }
            lp.add_constraint(row, Relation::Eq, 0.0);
        }
        if let (TradeLimits::Roles(roles), Some(t)) = (limits, trades[i]) {
            // buyer: T <= P, seller: P <= T
            let mut row = draws[i][0].clone();
            row.push((t, -1.0));
            let relation = if roles[i] == Role::Buyer {
                Relation::Ge
            } else {
                Relation::Le
            };
            lp.add_constraint(row, relation, 0.0);
        }
    }
    let traded: Vec<(VarId, f64)> = trades.iter().flatten().map(|&t| (t, 1.0)).collect();
    if !traded.is_empty() {
        lp.add_constraint(traded, Relation::Eq, 0.0);
    }
    Model { lp, blocks, trades }
}

fn solve_model(
    inst: &OracleInstance,
    limits: TradeLimits,
) -> Result<Option<OracleSolution>, OracleError> {
    let model = build(inst, limits);
    let blocks: Vec<&SessionBlock> = model.blocks.iter().map(|(_, b)| b).collect();
    let sol = solve_without_overlap(&model.lp, &blocks, MODEL_SOLVES)?;
    if !sol.is_optimal() {
        return Ok(None);
    }
    let mut schedules: Vec<Schedule> = (0..inst.aggregators)
        .map(|_| Schedule {
            session_ids: Vec::new(),
            power_kw: Vec::new(),
        })
        .collect();
    for (s, (agg, block)) in inst.sessions.iter().zip(&model.blocks) {
        schedules[*agg].session_ids.push(s.id);
        schedules[*agg]
            .power_kw
            .push(block.power(&sol.primal, inst.horizon.len));
    }
    let trades_kw: Vec<f64> = model
        .trades
        .iter()
        .map(|t| t.map_or(0.0, |v| sol.value(v)))
        .collect();
    let profit = inst.evaluate(&schedules, &trades_kw);
    let pattern = match limits {
        TradeLimits::Roles(r) => Some(r.to_vec()),
        TradeLimits::Free => None,
    };
    Ok(Some(OracleSolution {
        profit,
        schedules,
        trades_kw,
        pattern,
    }))
}

/// Role patterns worth solving. Patterns with buyers but no seller (or
/// the reverse) force every trade to zero and are dominated by the
/// all-neutral pattern.
pub fn sign_patterns(aggregators: usize) -> Vec<Vec<Role>> {
    let total = 3usize.pow(aggregators as u32);
    (0..total)
        .map(|mut code| {
            (0..aggregators)
                .map(|_| {
                    let r = [Role::Neutral, Role::Buyer, Role::Seller][code % 3];
                    code /= 3;
                    r
                })
                .collect::<Vec<Role>>()
        })
        .filter(|p| {
            let buyers = p.contains(&Role::Buyer);
            let sellers = p.contains(&Role::Seller);
            buyers == sellers
        })
        .collect()
}

/// Joint optimum under the trade limits, by enumerating role patterns.
pub fn solve_centralized_exact(inst: &OracleInstance) -> Result<OracleSolution, OracleError> {
    inst.validate()?;
    if inst.aggregators > MAX_EXACT_AGGREGATORS {
        return Err(OracleError::TooLarge(inst.aggregators));
    }
    let mut best: Option<OracleSolution> = None;
    for pattern in sign_patterns(inst.aggregators) {
        if let Some(sol) = solve_model(inst, TradeLimits::Roles(&pattern))? {
            if best.as_ref().is_none_or(|b| sol.profit > b.profit) {
                best = Some(sol);
            }
        }
    }
    best.ok_or(OracleError::Infeasible)
}

/// Upper bound: trades limited only by rate limits and netting to zero.
pub fn solve_centralized_relaxed(inst: &OracleInstance) -> Result<OracleSolution, OracleError> {
    inst.validate()?;
    solve_model(inst, TradeLimits::Free)?.ok_or(OracleError::Infeasible)
}

/// The distributed heuristic on the same snapshot: each aggregator plans
/// alone, then one auction with re-planning and voiding.
pub fn solve_distributed(inst: &OracleInstance) -> Result<OracleSolution, OracleError> {
    inst.validate()?;
    let per_agg: Vec<Vec<EvSession>> = (0..inst.aggregators).map(|i| inst.sessions_of(i)).collect();
    let participants: Vec<Participant> = per_agg
        .iter()
        .enumerate()
        .map(|(i, sessions)| Participant {
            aggregator: i,
            sessions,
            prices: &inst.prices[i],
            schedule: optimize_schedule(
                sessions,
                &inst.tariff,
                &inst.prices[i],
                None,
                &inst.horizon,
            )
            .schedule,
        })
        .collect();
    let settled = settle_and_reoptimize(&participants, &inst.tariff, &inst.horizon);
    let trades_kw: Vec<f64> = (0..inst.aggregators)
        .map(|i| settled.trades.allocation(i))
        .collect();
    Ok(OracleSolution {
        profit: inst.evaluate(&settled.schedules, &trades_kw),
        schedules: settled.schedules,
        trades_kw,
        pattern: None,
    })
}
