//! Domain types for networks, rates, traffic, and the linear observation
//! operator that reduces full traffic to what monitors can see.
//!
//! Everything is indexed by the topology's ordered pair list, which is always
//! kept in lexicographic `(src, dst)` order; all vectorizations, file
//! outputs, and operator columns use that order. Types are immutable after
//! construction and operations are pure functions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A directed source-destination pair of exterior nodes.
///
/// Serializes as a two-element array `[src, dst]`. Node indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct SdPair {
    pub src: u32,
    pub dst: u32,
}

impl SdPair {
    pub fn new(src: u32, dst: u32) -> Self {
        SdPair { src, dst }
    }
}

impl From<(u32, u32)> for SdPair {
    fn from((src, dst): (u32, u32)) -> Self {
        SdPair { src, dst }
    }
}

impl From<SdPair> for (u32, u32) {
    fn from(p: SdPair) -> Self {
        (p.src, p.dst)
    }
}

/// Node sets, the SD-pair support universe, and per-pair routes through
/// interior nodes.
///
/// Pairs absent from the list have structurally zero rate. Interior nodes
/// never originate or absorb traffic; they only appear in routes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "TopologyFile")]
pub struct Topology {
    n_exterior: u32,
    n_interior: u32,
    pairs: Vec<SdPair>,
    routes: Vec<Vec<u32>>,
    #[serde(skip)]
    index: HashMap<SdPair, usize>,
}

/// On-disk form of [`Topology`]: `routes[i]` lists the interior nodes
/// traversed by `pairs[i]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    n_exterior: u32,
    n_interior: u32,
    pairs: Vec<SdPair>,
    routes: Vec<Vec<u32>>,
}

impl From<Topology> for TopologyFile {
    fn from(t: Topology) -> Self {
        TopologyFile {
            n_exterior: t.n_exterior,
            n_interior: t.n_interior,
            pairs: t.pairs,
            routes: t.routes,
        }
    }
}

impl<'de> Deserialize<'de> for Topology {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = TopologyFile::deserialize(d)?;
        Topology::with_routes(raw.n_exterior, raw.n_interior, raw.pairs, raw.routes)
            .map_err(serde::de::Error::custom)
    }
}

impl Topology {
    /// Builds a topology over the given pair list with empty routes.
    ///
    /// Pairs are sorted into lexicographic order; self-pairs, duplicates, and
    /// out-of-range node indices are rejected.
    pub fn new(n_exterior: u32, n_interior: u32, pairs: Vec<SdPair>) -> Result<Self> {
        let n = pairs.len();
        Self::with_routes(n_exterior, n_interior, pairs, vec![Vec::new(); n])
    }

    /// Builds a topology with explicit routes, `routes[i]` belonging to
    /// `pairs[i]`.
    pub fn with_routes(
        n_exterior: u32,
        n_interior: u32,
        pairs: Vec<SdPair>,
        routes: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if pairs.len() != routes.len() {
            return Err(Error::Config(format!(
                "{} pairs but {} routes",
                pairs.len(),
                routes.len()
            )));
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by_key(|&i| pairs[i]);
        let pairs_sorted: Vec<SdPair> = order.iter().map(|&i| pairs[i]).collect();
        let routes_sorted: Vec<Vec<u32>> = order.into_iter().map(|i| routes[i].clone()).collect();

        let mut index = HashMap::with_capacity(pairs_sorted.len());
        for (i, &p) in pairs_sorted.iter().enumerate() {
            if p.src == p.dst {
                return Err(Error::Config(format!("self-pair ({}, {})", p.src, p.dst)));
            }
            if p.src >= n_exterior || p.dst >= n_exterior {
                return Err(Error::Config(format!(
                    "pair ({}, {}) references a node >= n_exterior = {}",
                    p.src, p.dst, n_exterior
                )));
            }
            if index.insert(p, i).is_some() {
                return Err(Error::Config(format!(
                    "duplicate pair ({}, {})",
                    p.src, p.dst
                )));
            }
        }
        for (i, route) in routes_sorted.iter().enumerate() {
            for &u in route {
                if u >= n_interior {
                    return Err(Error::Config(format!(
                        "route for pair ({}, {}) references interior node {} >= n_interior = {}",
                        pairs_sorted[i].src, pairs_sorted[i].dst, u, n_interior
                    )));
                }
            }
        }
        Ok(Topology {
            n_exterior,
            n_interior,
            pairs: pairs_sorted,
            routes: routes_sorted,
            index,
        })
    }

    /// Topology over all `n * (n-1)` ordered pairs, no interior nodes.
    ///
    /// This is the pair universe estimators operate on when the true support
    /// is unknown.
    pub fn full(n_exterior: u32, n_interior: u32) -> Self {
        let mut pairs = Vec::with_capacity((n_exterior as usize) * (n_exterior as usize - 1));
        for s in 0..n_exterior {
            for d in 0..n_exterior {
                if s != d {
                    pairs.push(SdPair::new(s, d));
                }
            }
        }
        Topology::new(n_exterior, n_interior, pairs).expect("full universe is always valid")
    }

    pub fn n_exterior(&self) -> u32 {
        self.n_exterior
    }

    pub fn n_interior(&self) -> u32 {
        self.n_interior
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Pair list in lexicographic order; column order for every vectorization.
    pub fn pairs(&self) -> &[SdPair] {
        &self.pairs
    }

    pub fn route(&self, pair_idx: usize) -> &[u32] {
        &self.routes[pair_idx]
    }

    pub fn routes(&self) -> &[Vec<u32>] {
        &self.routes
    }

    /// Column index of `pair`, if it is in the universe.
    pub fn pair_index(&self, pair: SdPair) -> Option<usize> {
        self.index.get(&pair).copied()
    }

    /// Replaces all routes, keeping nodes and pairs.
    pub fn replace_routes(&self, routes: Vec<Vec<u32>>) -> Result<Self> {
        Topology::with_routes(self.n_exterior, self.n_interior, self.pairs.clone(), routes)
    }
}

/// Nonnegative per-pair rates (messages per tick), parallel to a topology's
/// pair list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateMatrix {
    values: Vec<f64>,
}

impl RateMatrix {
    pub fn zeros(n_pairs: usize) -> Self {
        RateMatrix {
            values: vec![0.0; n_pairs],
        }
    }

    /// Wraps raw values, rejecting negatives and non-finite entries.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Contract(format!("rate[{i}] = {v} is not a finite nonnegative value")));
            }
        }
        Ok(RateMatrix { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, pair_idx: usize) -> f64 {
        self.values[pair_idx]
    }

    pub fn set(&mut self, pair_idx: usize, rate: f64) {
        debug_assert!(rate >= 0.0 && rate.is_finite());
        self.values[pair_idx] = rate;
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

/// Integer message counts per pair per tick; `counts[t][pair]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrafficSeries {
    counts: Vec<Vec<u64>>,
}

impl TrafficSeries {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Contract("traffic series needs at least one tick".into()));
        }
        let n = counts[0].len();
        if counts.iter().any(|c| c.len() != n) {
            return Err(Error::Contract("inconsistent pair counts across ticks".into()));
        }
        Ok(TrafficSeries { counts })
    }

    pub fn ticks(&self) -> usize {
        self.counts.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.counts[0].len()
    }

    pub fn tick(&self, t: usize) -> &[u64] {
        &self.counts[t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.iter().map(|c| c.as_slice())
    }
}

/// Which aggregates the monitors report.
///
/// The minimal scheme turns every node monitor on and observes no pair
/// directly; edge observations are what studies sweep over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationScheme {
    /// Per exterior node: report total egress.
    pub monitor_egress: Vec<bool>,
    /// Per exterior node: report total ingress.
    pub monitor_ingress: Vec<bool>,
    /// Per interior node: report total flow.
    pub monitor_flows: Vec<bool>,
    /// Pairs whose per-tick counts are seen directly.
    pub observed_pairs: Vec<SdPair>,
}

impl ObservationScheme {
    /// All node monitors on, no pairs observed directly.
    pub fn minimal(topology: &Topology) -> Self {
        ObservationScheme {
            monitor_egress: vec![true; topology.n_exterior() as usize],
            monitor_ingress: vec![true; topology.n_exterior() as usize],
            monitor_flows: vec![true; topology.n_interior() as usize],
            observed_pairs: Vec::new(),
        }
    }

    /// Same node monitors plus direct observation of `pairs`.
    pub fn with_observed_pairs(mut self, mut pairs: Vec<SdPair>) -> Self {
        pairs.sort();
        pairs.dedup();
        self.observed_pairs = pairs;
        self
    }
}

/// One observable: a row of the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowKind {
    /// Total messages sent by exterior node `node`.
    Egress { node: u32 },
    /// Total messages received by exterior node `node`.
    Ingress { node: u32 },
    /// Total messages traversing interior node `node`.
    Flow { node: u32 },
    /// Direct per-tick count of one pair.
    Edge { pair: SdPair },
}

/// Binary linear map from vectorized per-pair counts to observables.
///
/// Rows are ordered deterministically: all egress rows by node index, all
/// ingress rows, all flow rows, then all edge rows in pair order. The matrix
/// is stored by row support (column indices carrying a 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationOperator {
    rows: Vec<RowKind>,
    row_cols: Vec<Vec<usize>>,
    n_cols: usize,
}

impl ObservationOperator {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rows(&self) -> &[RowKind] {
        &self.rows
    }

    /// Column indices with a 1 in row `r`, ascending.
    pub fn row_support(&self, r: usize) -> &[usize] {
        &self.row_cols[r]
    }

    /// Matrix entry as 0/1.
    pub fn entry(&self, r: usize, p: usize) -> u8 {
        u8::from(self.row_cols[r].binary_search(&p).is_ok())
    }

    /// Dense row-major copy of the matrix.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n_cols]; self.rows.len()];
        for (r, cols) in self.row_cols.iter().enumerate() {
            for &c in cols {
                m[r][c] = 1.0;
            }
        }
        m
    }

    /// `A x` for a real-valued pair vector.
    pub fn apply_real(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::Contract(format!(
                "operator has {} columns, vector has {} entries",
                self.n_cols,
                x.len()
            )));
        }
        Ok(self
            .row_cols
            .iter()
            .map(|cols| cols.iter().map(|&c| x[c]).sum())
            .collect())
    }

    fn apply_counts(&self, x: &[u64]) -> Vec<u64> {
        self.row_cols
            .iter()
            .map(|cols| cols.iter().map(|&c| x[c]).sum())
            .collect()
    }
}

/// Per-tick observable vectors produced by an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    rows: Vec<RowKind>,
    /// `y[t][row]`.
    y: Vec<Vec<u64>>,
}

impl ObservationSeries {
    pub fn new(rows: Vec<RowKind>, y: Vec<Vec<u64>>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Contract("observation series needs at least one tick".into()));
        }
        if y.iter().any(|v| v.len() != rows.len()) {
            return Err(Error::Contract(
                "observation vector length does not match row descriptors".into(),
            ));
        }
        Ok(ObservationSeries { rows, y })
    }

    pub fn ticks(&self) -> usize {
        self.y.len()
    }

    pub fn rows(&self) -> &[RowKind] {
        &self.rows
    }

    pub fn tick(&self, t: usize) -> &[u64] {
        &self.y[t]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u64]> {
        self.y.iter().map(|v| v.as_slice())
    }

    /// Row-wise mean over ticks.
    pub fn mean(&self) -> Vec<f64> {
        let t = self.y.len() as f64;
        let mut m = vec![0.0; self.rows.len()];
        for tick in &self.y {
            for (acc, &v) in m.iter_mut().zip(tick) {
                *acc += v as f64;
            }
        }
        for acc in &mut m {
            *acc /= t;
        }
        m
    }
}

/// Builds the observation operator for a topology under a scheme.
///
/// One row per enabled monitor and per observed pair, in the deterministic
/// order egress / ingress / flow / edge.
pub fn build_operator(topology: &Topology, scheme: &ObservationScheme) -> Result<ObservationOperator> {
    let n_ext = topology.n_exterior() as usize;
    let n_int = topology.n_interior() as usize;
    if scheme.monitor_egress.len() != n_ext || scheme.monitor_ingress.len() != n_ext {
        return Err(Error::Config(format!(
            "scheme monitors cover {} egress / {} ingress nodes, topology has {}",
            scheme.monitor_egress.len(),
            scheme.monitor_ingress.len(),
            n_ext
        )));
    }
    if scheme.monitor_flows.len() != n_int {
        return Err(Error::Config(format!(
            "scheme covers {} interior nodes, topology has {}",
            scheme.monitor_flows.len(),
            n_int
        )));
    }

    let mut rows = Vec::new();
    let mut row_cols: Vec<Vec<usize>> = Vec::new();

    for node in 0..n_ext as u32 {
        if scheme.monitor_egress[node as usize] {
            rows.push(RowKind::Egress { node });
            row_cols.push(
                topology
                    .pairs()
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.src == node)
                    .map(|(i, _)| i)
                    .collect(),
            );
        }
    }
    for node in 0..n_ext as u32 {
        if scheme.monitor_ingress[node as usize] {
            rows.push(RowKind::Ingress { node });
            row_cols.push(
                topology
                    .pairs()
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.dst == node)
                    .map(|(i, _)| i)
                    .collect(),
            );
        }
    }
    for node in 0..n_int as u32 {
        if scheme.monitor_flows[node as usize] {
            rows.push(RowKind::Flow { node });
            row_cols.push(
                (0..topology.n_pairs())
                    .filter(|&i| topology.route(i).contains(&node))
                    .collect(),
            );
        }
    }
    let mut observed = scheme.observed_pairs.clone();
    observed.sort();
    for &pair in &observed {
        let idx = topology.pair_index(pair).ok_or_else(|| {
            Error::Config(format!(
                "observed pair ({}, {}) is not in the topology",
                pair.src, pair.dst
            ))
        })?;
        rows.push(RowKind::Edge { pair });
        row_cols.push(vec![idx]);
    }

    Ok(ObservationOperator {
        rows,
        row_cols,
        n_cols: topology.n_pairs(),
    })
}

/// `y^t = A vec(N^t)` for every tick; integer-exact.
pub fn apply_operator(op: &ObservationOperator, traffic: &TrafficSeries) -> Result<ObservationSeries> {
    if traffic.n_pairs() != op.n_cols() {
        return Err(Error::Contract(format!(
            "operator has {} columns, traffic has {} pairs",
            op.n_cols(),
            traffic.n_pairs()
        )));
    }
    let y = traffic.iter().map(|tick| op.apply_counts(tick)).collect();
    ObservationSeries::new(op.rows().to_vec(), y)
}

/// `A vec(Λ)`: the expected observable vector under `rates`.
pub fn expected_observations(op: &ObservationOperator, rates: &RateMatrix) -> Result<Vec<f64>> {
    op.apply_real(rates.values())
}
