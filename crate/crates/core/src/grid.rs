//! DC network model, generation shift factors and the SO-level OPF.
//!
//! Sign conventions, used everywhere in this module:
//!
//! * A line is oriented from its lower-indexed bus to its higher-indexed bus
//!   (buses are indexed in ascending id order). Positive flow runs along
//!   that orientation.
//! * Injection at a bus is generation minus inelastic load minus aggregator
//!   draw. Aggregator discharge is a negative draw.
//! * `congestion[l]` is signed: positive when the forward limit of line `l`
//!   binds, negative when the reverse limit binds. Prices are assembled as
//!   `lmp[s] = lambda - Σ_l congestion[l] · F[l][s]`, so `lambda` is the
//!   price at the slack bus.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{solve_lp, LinearProgram, LpError, LpStatus, Relation, RowId};
use crate::AggregatorId;

/// Base power for per-unit reactances.
pub const BASE_MVA: f64 = 100.0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed case document: {0}")]
    Parse(String),
    #[error("duplicate {kind} id {id}")]
    Duplicate { kind: &'static str, id: usize },
    #[error("{item} references absent bus {bus}")]
    UnknownBus { item: String, bus: usize },
    #[error("{item}: {reason}")]
    Invalid { item: String, reason: String },
    #[error("no slack bus declared and no generator to default it to")]
    MissingSlack,
    #[error("network is not connected: bus {bus} cannot be reached from the slack bus")]
    Disconnected { bus: usize },
    #[error("reduced susceptance matrix is singular")]
    Singular,
    #[error("injection vector has {got} entries, network has {expected} buses")]
    Dimension { expected: usize, got: usize },
    #[error("OPF is infeasible: load cannot be served within generator and line limits")]
    Infeasible,
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// On-disk case document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaseDocument {
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    pub generators: Vec<GeneratorRecord>,
    #[serde(default)]
    pub aggregators: Vec<AggregatorRecord>,
    #[serde(default)]
    pub slack_bus: Option<usize>,
    /// Daily load multipliers, evenly spaced over 24 h.
    #[serde(default)]
    pub load_shape: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BusRecord {
    pub id: usize,
    #[serde(default)]
    pub load_mw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LineRecord {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    /// Per-unit on [`BASE_MVA`].
    pub reactance: f64,
    /// Thermal limit in MW; absent means unconstrained.
    #[serde(default)]
    pub limit_mw: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorRecord {
    pub id: usize,
    pub bus: usize,
    #[serde(default)]
    pub min_mw: f64,
    pub max_mw: f64,
    /// Marginal cost, currency/MWh.
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregatorRecord {
    pub id: AggregatorId,
    pub bus: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub load_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: usize,
    /// Bus index of the lower-indexed endpoint.
    pub from: usize,
    /// Bus index of the higher-indexed endpoint.
    pub to: usize,
    pub reactance: f64,
    pub limit_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: usize,
    /// Bus index.
    pub bus: usize,
    pub min_mw: f64,
    pub max_mw: f64,
    pub cost: f64,
}

/// Validated DC network. Buses are stored in ascending id order and
/// referenced by index everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    slack: usize,
    /// Bus index per aggregator id.
    aggregator_buses: Vec<usize>,
    load_shape: Option<Vec<f64>>,
}

impl Network {
    pub fn from_document(doc: &CaseDocument) -> Result<Self, GridError> {
        let mut buses: Vec<Bus> = doc
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                load_mw: b.load_mw,
            })
            .collect();
        buses.sort_by_key(|b| b.id);
        for pair in buses.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(GridError::Duplicate {
                    kind: "bus",
                    id: pair[0].id,
                });
            }
        }
        if buses.is_empty() {
            return Err(GridError::Parse("case has no buses".into()));
        }
        for b in &buses {
            if !b.load_mw.is_finite() {
                return Err(GridError::Invalid {
                    item: format!("bus {}", b.id),
                    reason: "load must be finite".into(),
                });
            }
        }
        let index: HashMap<usize, usize> =
            buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let lookup = |item: String, bus: usize| {
            index
                .get(&bus)
                .copied()
                .ok_or(GridError::UnknownBus { item, bus })
        };

        let mut lines = Vec::with_capacity(doc.lines.len());
        let mut seen = std::collections::HashSet::new();
        for l in &doc.lines {
            if !seen.insert(l.id) {
                return Err(GridError::Duplicate {
                    kind: "line",
                    id: l.id,
                });
            }
            let a = lookup(format!("line {}", l.id), l.from)?;
            let b = lookup(format!("line {}", l.id), l.to)?;
            let invalid = |reason: &str| GridError::Invalid {
                item: format!("line {}", l.id),
                reason: reason.into(),
            };
            if a == b {
                return Err(invalid("both endpoints are the same bus"));
            }
            if !(l.reactance > 0.0 && l.reactance.is_finite()) {
                return Err(invalid("reactance must be positive"));
            }
            let limit = l.limit_mw.unwrap_or(f64::INFINITY);
            if !(limit > 0.0) {
                return Err(invalid("flow limit must be positive"));
            }
            lines.push(Line {
                id: l.id,
                from: a.min(b),
                to: a.max(b),
                reactance: l.reactance,
                limit_mw: limit,
            });
        }

        let mut generators = Vec::with_capacity(doc.generators.len());
        seen.clear();
        for g in &doc.generators {
            if !seen.insert(g.id) {
                return Err(GridError::Duplicate {
                    kind: "generator",
                    id: g.id,
                });
            }
            let bus = lookup(format!("generator {}", g.id), g.bus)?;
            if !(g.min_mw.is_finite() && g.max_mw.is_finite() && g.cost.is_finite())
                || g.min_mw > g.max_mw
            {
                return Err(GridError::Invalid {
                    item: format!("generator {}", g.id),
                    reason: "requires finite cost and min_mw <= max_mw".into(),
                });
            }
            generators.push(Generator {
                id: g.id,
                bus,
                min_mw: g.min_mw,
                max_mw: g.max_mw,
                cost: g.cost,
            });
        }

        let slack = match doc.slack_bus {
            Some(id) => lookup("slack_bus".into(), id)?,
            None => generators
                .iter()
                .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.bus.cmp(&b.bus)))
                .map(|g| g.bus)
                .ok_or(GridError::MissingSlack)?,
        };

        let mut aggregators = doc.aggregators.clone();
        aggregators.sort_by_key(|a| a.id);
        let mut aggregator_buses = Vec::with_capacity(aggregators.len());
        for (k, a) in aggregators.iter().enumerate() {
            if a.id != k {
                return Err(if k > 0 && aggregators[k - 1].id == a.id {
                    GridError::Duplicate {
                        kind: "aggregator",
                        id: a.id,
                    }
                } else {
                    GridError::Invalid {
                        item: format!("aggregator {}", a.id),
                        reason: format!("aggregator ids must be 0..{}", aggregators.len()),
                    }
                });
            }
            aggregator_buses.push(lookup(format!("aggregator {}", a.id), a.bus)?);
        }

        if let Some(shape) = &doc.load_shape {
            if shape.is_empty() || shape.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
                return Err(GridError::Invalid {
                    item: "load_shape".into(),
                    reason: "needs at least one finite, non-negative multiplier".into(),
                });
            }
        }
        let net = Self {
            buses,
            lines,
            generators,
            slack,
            aggregator_buses,
            load_shape: doc.load_shape.clone(),
        };
        net.check_connected()?;
        Ok(net)
    }

    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let doc: CaseDocument =
            serde_json::from_str(text).map_err(|e| GridError::Parse(e.to_string()))?;
        Self::from_document(&doc)
    }

    pub fn load_case(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let n = self.buses.len();
        let mut adjacency = vec![Vec::new(); n];
        for l in &self.lines {
            adjacency[l.from].push(l.to);
            adjacency[l.to].push(l.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(b) = queue.pop_front() {
            for &c in &adjacency[b] {
                if !seen[c] {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(GridError::Disconnected {
                bus: self.buses[i].id,
            }),
            None => Ok(()),
        }
    }

    /// Daily load multipliers from the case file, if any.
    pub fn load_shape(&self) -> Option<&[f64]> {
        self.load_shape.as_deref()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    /// Slack bus index.
    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn num_aggregators(&self) -> usize {
        self.aggregator_buses.len()
    }

    /// Bus index hosting an aggregator.
    pub fn aggregator_bus(&self, aggregator: AggregatorId) -> usize {
        self.aggregator_buses[aggregator]
    }

    pub fn aggregator_buses(&self) -> &[usize] {
        &self.aggregator_buses
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn total_load_mw(&self) -> f64 {
        self.buses.iter().map(|b| b.load_mw).sum()
    }

    /// Returns a copy with aggregator placements replaced (bus ids).
    pub fn with_aggregators(&self, bus_ids: &[usize]) -> Result<Self, GridError> {
        let mut out = self.clone();
        out.aggregator_buses = bus_ids
            .iter()
            .enumerate()
            .map(|(k, &id)| {
                self.bus_index(id).ok_or(GridError::UnknownBus {
                    item: format!("aggregator {k}"),
                    bus: id,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(out)
    }

    pub fn shift_factors(&self) -> Result<ShiftFactors, GridError> {
        shift_factors(self)
    }
}

/// `values[l][s]`: MW on line `l` per MW injected at bus `s` and withdrawn at
/// the slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFactors {
    pub values: Vec<Vec<f64>>,
}

impl ShiftFactors {
    pub fn get(&self, line: usize, bus: usize) -> f64 {
        self.values[line][bus]
    }

    /// Line flows for a per-bus injection vector.
    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| row.iter().zip(injections).map(|(f, p)| f * p).sum())
            .collect()
    }
}

pub fn shift_factors(network: &Network) -> Result<ShiftFactors, GridError> {
    let n = network.num_buses();
    let slack = network.slack;
    // reduced index: bus index with the slack removed
    let reduced = |b: usize| {
        if b < slack {
            Some(b)
        } else if b == slack {
            None
        } else {
            Some(b - 1)
        }
    };
    let mut b = DMatrix::<f64>::zeros(n - 1, n - 1);
    for l in &network.lines {
        let y = 1.0 / l.reactance;
        let (i, j) = (reduced(l.from), reduced(l.to));
        if let Some(i) = i {
            b[(i, i)] += y;
        }
        if let Some(j) = j {
            b[(j, j)] += y;
        }
        if let (Some(i), Some(j)) = (i, j) {
            b[(i, j)] -= y;
            b[(j, i)] -= y;
        }
    }
    let x = if n > 1 {
        b.lu().try_inverse().ok_or(GridError::Singular)?
    } else {
        DMatrix::zeros(0, 0)
    };
    let angle = |bus: usize, injected_at: usize| match (reduced(bus), reduced(injected_at)) {
        (Some(i), Some(k)) => x[(i, k)],
        _ => 0.0,
    };
    let values = network
        .lines
        .iter()
        .map(|l| {
            (0..n)
                .map(|s| (angle(l.from, s) - angle(l.to, s)) / l.reactance)
                .collect()
        })
        .collect();
    Ok(ShiftFactors { values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    pub generation_mw: Vec<f64>,
    pub flows_mw: Vec<f64>,
    /// System energy price (currency/MWh), i.e. the price at the slack bus.
    pub lambda: f64,
    /// Signed congestion dual per line (currency/MWh per MW).
    pub congestion: Vec<f64>,
    /// Locational marginal price per bus (currency/MWh).
    pub lmp: Vec<f64>,
    pub total_cost: f64,
}

impl DispatchResult {
    pub fn is_congested(&self) -> bool {
        self.congestion.iter().any(|m| *m != 0.0)
    }
}

/// OPF with the network's own loads.
pub fn solve_dcopf(
    network: &Network,
    factors: &ShiftFactors,
    aggregator_injections_mw: &[f64],
) -> Result<DispatchResult, GridError> {
    solve_dcopf_scaled(network, factors, aggregator_injections_mw, 1.0)
}

/// OPF with every inelastic load multiplied by `load_scale`.
/// `aggregator_injections_mw` is per bus, positive = drawn from the grid.
pub fn solve_dcopf_scaled(
    network: &Network,
    factors: &ShiftFactors,
    aggregator_injections_mw: &[f64],
    load_scale: f64,
) -> Result<DispatchResult, GridError> {
    let n = network.num_buses();
    if aggregator_injections_mw.len() != n {
        return Err(GridError::Dimension {
            expected: n,
            got: aggregator_injections_mw.len(),
        });
    }
    let withdrawals: Vec<f64> = network
        .buses
        .iter()
        .zip(aggregator_injections_mw)
        .map(|(b, p)| b.load_mw * load_scale + p)
        .collect();

    let mut lp = LinearProgram::new();
    let gens: Vec<_> = network
        .generators
        .iter()
        .map(|g| lp.add_var(-g.cost, g.min_mw, g.max_mw))
        .collect();
    let total: f64 = withdrawals.iter().sum();
    let balance = lp.add_constraint(gens.iter().map(|&v| (v, 1.0)), Relation::Eq, total);

    let mut line_rows: Vec<Option<(RowId, RowId)>> = Vec::with_capacity(network.num_lines());
    for (l, line) in network.lines.iter().enumerate() {
        if !line.limit_mw.is_finite() {
            line_rows.push(None);
            continue;
        }
        let f = &factors.values[l];
        let shifted: f64 = f.iter().zip(&withdrawals).map(|(a, w)| a * w).sum();
        let terms: Vec<_> = network
            .generators
            .iter()
            .zip(&gens)
            .map(|(g, &v)| (v, f[g.bus]))
            .collect();
        let up = lp.add_constraint(terms.clone(), Relation::Le, line.limit_mw + shifted);
        let down = lp.add_constraint(terms, Relation::Ge, -line.limit_mw + shifted);
        line_rows.push(Some((up, down)));
    }

    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(GridError::Infeasible);
    }

    let generation_mw: Vec<f64> = gens.iter().map(|&v| sol.value(v)).collect();
    let mut injections: Vec<f64> = withdrawals.iter().map(|w| -w).collect();
    for (g, p) in network.generators.iter().zip(&generation_mw) {
        injections[g.bus] += p;
    }
    let flows_mw = factors.flows(&injections);
    let lambda = -sol.dual(balance);
    let congestion: Vec<f64> = line_rows
        .iter()
        .map(|rows| match rows {
            Some((up, down)) => sol.dual(*up) + sol.dual(*down),
            None => 0.0,
        })
        .collect();
    let lmp = (0..n)
        .map(|s| {
            lambda
                - congestion
                    .iter()
                    .enumerate()
                    .map(|(l, mu)| mu * factors.values[l][s])
                    .sum::<f64>()
        })
        .collect();
    Ok(DispatchResult {
        generation_mw,
        flows_mw,
        lambda,
        congestion,
        lmp,
        total_cost: -sol.objective,
    })
}
