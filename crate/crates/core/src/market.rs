//! Peer-to-peer energy auction between aggregators for the current slot.
//!
//! Every aggregator bids its planned net power for the slot together with
//! the grid price it would otherwise face: buyers (positive power) bid
//! their buying price, sellers (negative power) their selling price. The
//! auction picks a single trade price from the submitted prices, the
//! smaller side of the market trades in full and the larger side is
//! rationed pro rata.

use serde::{Deserialize, Serialize};

use crate::aggregator::{
    horizon_profit, optimize_schedule, profit, Horizon, PriceProfile, Schedule, TradeTerm,
};
use crate::fleet::{EvSession, Tariff};
use crate::AggregatorId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub aggregator: AggregatorId,
    /// Positive = wants to buy.
    pub power_kw: f64,
    /// currency/kWh
    pub price: f64,
}

impl Bid {
    /// Bid for an aggregator planning `net_kw` this slot with the given
    /// grid prices.
    pub fn from_plan(aggregator: AggregatorId, net_kw: f64, buy: f64, sell: f64) -> Self {
        Self {
            aggregator,
            power_kw: net_kw,
            price: if net_kw >= 0.0 { buy } else { sell },
        }
    }

    fn supplies_at(&self, price: f64) -> bool {
        self.power_kw < 0.0 && self.price <= price
    }

    fn demands_at(&self, price: f64) -> bool {
        self.power_kw > 0.0 && self.price >= price
    }
}

/// Supply and demand at one candidate price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub price: f64,
    /// Magnitude of eligible supply (kW).
    pub supply_kw: f64,
    pub demand_kw: f64,
}

impl Candidate {
    pub fn volume_kw(&self) -> f64 {
        self.supply_kw.min(self.demand_kw)
    }

    /// Traded value per hour at this price.
    pub fn capacity(&self) -> f64 {
        self.volume_kw() * self.price
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuctionBook {
    pub bids: Vec<Bid>,
}

impl AuctionBook {
    pub fn new(bids: Vec<Bid>) -> Self {
        Self { bids }
    }

    /// One candidate per distinct bid price, ascending.
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut prices: Vec<f64> = self
            .bids
            .iter()
            .filter(|b| b.power_kw != 0.0)
            .map(|b| b.price)
            .collect();
        prices.sort_by(f64::total_cmp);
        prices.dedup();
        prices
            .into_iter()
            .map(|price| {
                let mut supply_kw = 0.0;
                let mut demand_kw = 0.0;
                for b in &self.bids {
                    if b.supplies_at(price) {
                        supply_kw -= b.power_kw;
                    } else if b.demands_at(price) {
                        demand_kw += b.power_kw;
                    }
                }
                Candidate {
                    price,
                    supply_kw,
                    demand_kw,
                }
            })
            .collect()
    }

    /// Candidate with the largest traded value; ties go to the larger
    /// volume, then the lower price. `None` when nothing can trade.
    pub fn clear(&self) -> Option<Candidate> {
        self.candidates()
            .into_iter()
            .filter(|c| c.capacity() > 0.0)
            .reduce(|best, c| {
                let better = c.capacity() > best.capacity()
                    || (c.capacity() == best.capacity() && c.volume_kw() > best.volume_kw());
                if better {
                    c
                } else {
                    best
                }
            })
    }
}

pub fn clear_auction(bids: &[Bid]) -> Option<Candidate> {
    AuctionBook::new(bids.to_vec()).clear()
}

/// Cleared price and per-aggregator trades.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TradeOutcome {
    pub price: f64,
    /// `(aggregator, kW)`, positive = bought. Only non-zero entries.
    pub allocations: Vec<(AggregatorId, f64)>,
}

impl TradeOutcome {
    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    pub fn allocation(&self, aggregator: AggregatorId) -> f64 {
        self.allocations
            .iter()
            .find(|(a, _)| *a == aggregator)
            .map_or(0.0, |(_, p)| *p)
    }

    pub fn term(&self, aggregator: AggregatorId) -> Option<TradeTerm> {
        let power_kw = self.allocation(aggregator);
        (power_kw != 0.0).then_some(TradeTerm {
            power_kw,
            price: self.price,
        })
    }

    /// Volume bought (= volume sold), kW.
    pub fn volume_kw(&self) -> f64 {
        self.allocations.iter().map(|(_, p)| p.max(0.0)).sum()
    }
}

/// Allocates trades at `price`. The short side trades its full bids; the
/// long side shares the same volume in proportion to its bids.
pub fn balance_trades(bids: &[Bid], price: f64) -> TradeOutcome {
    let sellers: Vec<&Bid> = bids.iter().filter(|b| b.supplies_at(price)).collect();
    let buyers: Vec<&Bid> = bids.iter().filter(|b| b.demands_at(price)).collect();
    let supply: f64 = sellers.iter().map(|b| -b.power_kw).sum();
    let demand: f64 = buyers.iter().map(|b| b.power_kw).sum();
    let volume = supply.min(demand);
    if !(volume > 0.0) {
        return TradeOutcome {
            price,
            allocations: Vec::new(),
        };
    }
    let (short, long, long_total) = if demand <= supply {
        (buyers, sellers, supply)
    } else {
        (sellers, buyers, demand)
    };
    let mut allocations: Vec<(AggregatorId, f64)> =
        short.iter().map(|b| (b.aggregator, b.power_kw)).collect();
    let short_net: f64 = allocations.iter().map(|(_, p)| p).sum();
    let first_long = allocations.len();
    for b in &long {
        allocations.push((b.aggregator, b.power_kw * (volume / long_total)));
    }
    // Put the rounding residual on the largest long bid so the book nets
    // to zero.
    let largest = (first_long..allocations.len())
        .max_by(|&i, &j| {
            long[i - first_long]
                .power_kw
                .abs()
                .total_cmp(&long[j - first_long].power_kw.abs())
        })
        .expect("long side is non-empty when volume > 0");
    let others: f64 = allocations
        .iter()
        .enumerate()
        .filter(|(i, _)| *i >= first_long && *i != largest)
        .map(|(_, (_, p))| p)
        .sum();
    let bound = long[largest - first_long].power_kw;
    let fixed = -short_net - others;
    allocations[largest].1 = if bound > 0.0 {
        fixed.clamp(0.0, bound)
    } else {
        fixed.clamp(bound, 0.0)
    };
    allocations.retain(|(_, p)| *p != 0.0);
    TradeOutcome { price, allocations }
}

/// One aggregator's view going into the auction.
#[derive(Debug, Clone)]
pub struct Participant<'a> {
    pub aggregator: AggregatorId,
    pub sessions: &'a [EvSession],
    pub prices: &'a PriceProfile,
    /// Plan without trading.
    pub schedule: Schedule,
}

impl Participant<'_> {
    fn bid(&self, schedule: &Schedule) -> Bid {
        let p = self.prices.slots[0];
        Bid::from_plan(self.aggregator, schedule.net_kw(0), p.buy, p.sell)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    /// Final plan per participant, same order as the input.
    pub schedules: Vec<Schedule>,
    pub trades: TradeOutcome,
    /// Aggregators dropped because trading left them worse off.
    pub voided: Vec<AggregatorId>,
    pub rounds: usize,
}

/// Runs the auction, lets the fully served side re-plan at the trade
/// price, rebalances, and drops any aggregator that would end up with less
/// profit than its no-trade plan, either in the current slot or over the
/// horizon. Repeats for at most `participants.len()` rounds; if it has
/// not settled by then nobody trades.
pub fn settle_and_reoptimize(
    participants: &[Participant],
    tariff: &Tariff,
    horizon: &Horizon,
) -> Settlement {
    let pre: Vec<Schedule> = participants.iter().map(|p| p.schedule.clone()).collect();
    let no_trade = |rounds| Settlement {
        schedules: pre.clone(),
        trades: TradeOutcome::default(),
        voided: Vec::new(),
        rounds,
    };
    let bids: Vec<Bid> = participants.iter().map(|p| p.bid(&p.schedule)).collect();
    let Some(cleared) = clear_auction(&bids) else {
        return no_trade(0);
    };
    let price = cleared.price;
    let mut outcome = balance_trades(&bids, price);
    let mut active: Vec<bool> = participants
        .iter()
        .map(|p| outcome.allocation(p.aggregator) != 0.0)
        .collect();
    let value = |p: &Participant, schedule: &Schedule, term: Option<TradeTerm>| {
        let first: Vec<f64> = schedule.power_kw.iter().map(|row| row[0]).collect();
        let now = profit(
            p.sessions,
            &first,
            horizon.start,
            p.prices.slots[0],
            term,
            tariff,
            horizon.slot_hours,
        );
        let ahead = horizon_profit(p.sessions, schedule, p.prices, term, tariff, horizon);
        (now.net, ahead.net)
    };
    let baseline: Vec<(f64, f64)> = participants
        .iter()
        .map(|p| value(p, &p.schedule, None))
        .collect();
    let mut voided = Vec::new();

    for round in 1..=participants.len().max(1) {
        let schedules: Vec<Schedule> = participants
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let t = outcome.allocation(p.aggregator);
                let planned = pre[i].net_kw(0);
                let fully_served =
                    active[i] && t != 0.0 && t.abs() >= planned.abs() * (1.0 - 1e-12);
                if fully_served {
                    optimize_schedule(
                        p.sessions,
                        tariff,
                        p.prices,
                        outcome.term(p.aggregator),
                        horizon,
                    )
                    .schedule
                } else {
                    pre[i].clone()
                }
            })
            .collect();
        let bids: Vec<Bid> = participants
            .iter()
            .enumerate()
            .filter(|(i, _)| active[*i])
            .map(|(i, p)| p.bid(&schedules[i]))
            .collect();
        outcome = balance_trades(&bids, price);

        let mut dropped = false;
        for (i, p) in participants.iter().enumerate() {
            if !active[i] {
                continue;
            }
            let term = outcome.term(p.aggregator);
            let worse = term.is_none() || {
                let (now, ahead) = value(p, &schedules[i], term);
                now < baseline[i].0 - 1e-9 || ahead < baseline[i].1 - 1e-9
            };
            if worse {
                active[i] = false;
                dropped = true;
                if term.is_some() {
                    voided.push(p.aggregator);
                }
            }
        }
        if !dropped {
            let schedules = schedules
                .into_iter()
                .enumerate()
                .map(|(i, s)| if active[i] { s } else { pre[i].clone() })
                .collect();
            return Settlement {
                schedules,
                trades: outcome,
                voided,
                rounds: round,
            };
        }
        if !active.iter().any(|&a| a) {
            break;
        }
        let bids: Vec<Bid> = participants
            .iter()
            .enumerate()
            .filter(|(i, _)| active[*i])
            .map(|(i, p)| p.bid(&pre[i]))
            .collect();
        outcome = balance_trades(&bids, price);
    }
    let mut settlement = no_trade(participants.len());
    settlement.voided = voided;
    settlement
}
