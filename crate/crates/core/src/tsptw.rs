//! Single-vehicle routing with time windows: schedule evaluation, a
//! multistart local search and an exact bitmask dynamic program.
//!
//! Schedules use earliest-start propagation. The vehicle leaves the depot at
//! time 0, waits at a customer only until its ready time, and when maintenance
//! is performed at node `m` every arc leaving `m` is lengthened by the
//! maintenance duration.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::stream_rng;
use crate::error::{Error, Result};
use crate::instance::Instance;

/// Feasibility slack on time-window checks.
pub const TW_EPS: f64 = 1e-9;

/// Size limit of the exact dynamic program.
pub const DP_MAX_CUSTOMERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    /// Customers in visiting order; the depot is implicit at both ends.
    pub order: Vec<usize>,
}

impl Route {
    pub fn new(order: Vec<usize>) -> Self {
        Self { order }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n + 1];
        if self.order.len() != n {
            return Err(Error::InvalidInput(format!(
                "route visits {} customers, instance has {n}",
                self.order.len()
            )));
        }
        for &c in &self.order {
            if c == 0 || c > n || seen[c] {
                return Err(Error::InvalidInput(format!(
                    "route is not a permutation of 1..={n}"
                )));
            }
            seen[c] = true;
        }
        Ok(())
    }
}

/// Narrowed window for one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwOverride {
    pub node: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub order: Vec<usize>,
    /// Arrival (service start) time per node id; index 0 is the depot (0).
    pub arrivals: Vec<f64>,
    pub makespan: f64,
    pub maint_node: Option<usize>,
    pub maint_time: Option<f64>,
    pub feasible: bool,
    #[serde(default)]
    pub proven_optimal: bool,
    #[serde(default)]
    pub timed_out: bool,
}

impl Schedule {
    fn infeasible(n: usize, maint_node: Option<usize>) -> Self {
        Self {
            order: Vec::new(),
            arrivals: vec![0.0; n + 1],
            makespan: f64::INFINITY,
            maint_node,
            maint_time: None,
            feasible: false,
            proven_optimal: false,
            timed_out: false,
        }
    }

    /// One-line CSV summary: `makespan,feasible,maint_node,maint_time,order`.
    pub fn csv_summary(&self) -> String {
        let order: Vec<String> = self.order.iter().map(|c| c.to_string()).collect();
        format!(
            "{},{},{},{},{}",
            self.makespan,
            self.feasible,
            self.maint_node.map_or(String::new(), |m| m.to_string()),
            self.maint_time.map_or(String::new(), |t| t.to_string()),
            order.join(" ")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub restarts: usize,
    /// Perturbation rounds without improvement before a restart ends.
    pub max_no_improve: usize,
    pub seed: u64,
    /// Wall-clock limit per solve, seconds. Results are only reproducible
    /// when the limit is not reached.
    pub time_limit: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_no_improve: 20,
            seed: 1,
            time_limit: 60.0,
        }
    }
}

/// Plain TSPTW after folding maintenance into arcs and applying the override.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub n: usize,
    pub dist: Vec<Vec<f64>>,
    pub early: Vec<f64>,
    pub late: Vec<f64>,
    pub depot_due: f64,
}

impl Problem {
    pub fn build(
        instance: &Instance,
        maint_node: Option<usize>,
        tw_override: Option<TwOverride>,
    ) -> Result<Self> {
        if let Some(m) = maint_node {
            if !instance.is_maint_node(m) {
                return Err(Error::InvalidInput(format!(
                    "node {m} is not maintenance-capable"
                )));
            }
        }
        let mut dist = instance.d.clone();
        if let Some(m) = maint_node {
            for (j, d) in dist[m].iter_mut().enumerate() {
                if j != m {
                    *d += instance.p_maint;
                }
            }
        }
        let mut early: Vec<f64> = instance.tw.iter().map(|w| w.0).collect();
        let mut late: Vec<f64> = instance.tw.iter().map(|w| w.1).collect();
        if let Some(o) = tw_override {
            if o.node == 0 || o.node > instance.n {
                return Err(Error::InvalidInput(format!(
                    "override node {} is not a customer",
                    o.node
                )));
            }
            early[o.node] = early[o.node].max(o.lo);
            late[o.node] = late[o.node].min(o.hi);
        }
        Ok(Self {
            n: instance.n,
            dist,
            early,
            late,
            depot_due: instance.tw[0].1,
        })
    }

    pub fn window_empty(&self) -> bool {
        (1..=self.n).any(|i| self.early[i] > self.late[i] + TW_EPS)
    }

    /// `(makespan, total lateness)` of an order under earliest start.
    #[inline]
    pub fn cost(&self, order: &[usize]) -> (f64, f64) {
        let mut t = 0.0;
        let mut cur = 0;
        let mut late = 0.0;
        for &j in order {
            t += self.dist[cur][j];
            if t < self.early[j] {
                t = self.early[j];
            }
            if t > self.late[j] + TW_EPS {
                late += t - self.late[j];
            }
            cur = j;
        }
        t += self.dist[cur][0];
        if t > self.depot_due + TW_EPS {
            late += t - self.depot_due;
        }
        (t, late)
    }
}

/// Earliest-start schedule of a fixed route.
pub fn evaluate_route(
    instance: &Instance,
    route: &Route,
    maint_node: Option<usize>,
    tw_override: Option<TwOverride>,
) -> Result<Schedule> {
    route.validate(instance.n)?;
    let prob = Problem::build(instance, maint_node, tw_override)?;
    Ok(schedule_from_order(&prob, &route.order, maint_node))
}

pub(crate) fn schedule_from_order(prob: &Problem, order: &[usize], maint_node: Option<usize>) -> Schedule {
    let mut arrivals = vec![0.0; prob.n + 1];
    let mut t = 0.0;
    let mut cur = 0;
    let mut feasible = !prob.window_empty();
    for &j in order {
        t = (t + prob.dist[cur][j]).max(prob.early[j]);
        if t > prob.late[j] + TW_EPS {
            feasible = false;
        }
        arrivals[j] = t;
        cur = j;
    }
    let makespan = t + prob.dist[cur][0];
    if makespan > prob.depot_due + TW_EPS {
        feasible = false;
    }
    Schedule {
        order: order.to_vec(),
        maint_time: maint_node.map(|m| arrivals[m]),
        arrivals,
        makespan,
        maint_node,
        feasible,
        proven_optimal: false,
        timed_out: false,
    }
}

/// Lexicographic (lateness, makespan) comparison.
#[inline]
fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    const EPS: f64 = 1e-9;
    if a.1 < b.1 - EPS {
        return true;
    }
    if a.1 > b.1 + EPS {
        return false;
    }
    a.0 < b.0 - EPS
}

/// Move a segment `order[i..i+len]` so that it starts at position `to` of the
/// remaining sequence.
fn relocate(order: &[usize], i: usize, len: usize, to: usize, out: &mut Vec<usize>) {
    out.clear();
    let rest: Vec<usize> = order[..i].iter().chain(&order[i + len..]).copied().collect();
    out.extend_from_slice(&rest[..to]);
    out.extend_from_slice(&order[i..i + len]);
    out.extend_from_slice(&rest[to..]);
}

/// First-improvement descent over segment relocation (lengths 1..=3) and
/// 2-opt reversals. Returns the final cost; cost never increases.
fn local_search(prob: &Problem, order: &mut Vec<usize>, deadline: Instant) -> (f64, f64) {
    let n = order.len();
    let mut cur = prob.cost(order);
    let mut cand = Vec::with_capacity(n);
    'improve: loop {
        if Instant::now() > deadline {
            return cur;
        }
        for len in 1..=3.min(n) {
            for i in 0..=n - len {
                for to in 0..=n - len {
                    if to == i {
                        continue;
                    }
                    relocate(order, i, len, to, &mut cand);
                    let c = prob.cost(&cand);
                    if better(c, cur) {
                        std::mem::swap(order, &mut cand);
                        cur = c;
                        continue 'improve;
                    }
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                cand.clear();
                cand.extend_from_slice(order);
                cand[i..=j].reverse();
                let c = prob.cost(&cand);
                if better(c, cur) {
                    std::mem::swap(order, &mut cand);
                    cur = c;
                    continue 'improve;
                }
            }
        }
        return cur;
    }
}

/// Randomized cheapest insertion: customers taken by a noisy due-date key,
/// each inserted at the position minimizing (lateness, makespan).
fn construct<R: Rng>(prob: &Problem, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = (1..=prob.n)
        .map(|c| {
            let width = (prob.late[c] - prob.early[c]).clamp(1.0, 1e4);
            (prob.late[c].min(1e9) + rng.random_range(0.0..1.0) * width, c)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut order: Vec<usize> = Vec::with_capacity(prob.n);
    let mut cand = Vec::with_capacity(prob.n);
    for (_, c) in keyed {
        let mut best: Option<(usize, (f64, f64))> = None;
        for pos in 0..=order.len() {
            cand.clear();
            cand.extend_from_slice(&order[..pos]);
            cand.push(c);
            cand.extend_from_slice(&order[pos..]);
            let cost = prob.cost(&cand);
            if best.is_none_or(|(_, b)| better(cost, b)) {
                best = Some((pos, cost));
            }
        }
        order.insert(best.unwrap().0, c);
    }
    order
}

fn perturb<R: Rng>(order: &mut [usize], rng: &mut R) {
    let n = order.len();
    if n < 3 {
        if n == 2 {
            order.swap(0, 1);
        }
        return;
    }
    match rng.random_range(0..2) {
        0 => {
            let k = rng.random_range(2..=n.min(4));
            let start = rng.random_range(0..=n - k);
            order[start..start + k].shuffle(rng);
        }
        _ => {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            order.swap(i, j);
        }
    }
}

/// Multistart iterated local search minimizing makespan subject to time
/// windows. Returns an infeasible schedule if no restart found a feasible tour.
pub fn solve_heuristic(
    instance: &Instance,
    maint_node: Option<usize>,
    tw_override: Option<TwOverride>,
    config: &SolveConfig,
) -> Result<Schedule> {
    let prob = Problem::build(instance, maint_node, tw_override)?;
    if prob.window_empty() {
        return Ok(Schedule::infeasible(instance.n, maint_node));
    }
    let start = Instant::now();
    let deadline = start + Duration::from_secs_f64(config.time_limit.max(0.0));
    let mut best: Option<(Vec<usize>, (f64, f64))> = None;
    let mut timed_out = false;

    for r in 0..config.restarts.max(1) {
        let mut rng = stream_rng(config.seed, r as u64);
        let mut order = construct(&prob, &mut rng);
        let mut cur = local_search(&prob, &mut order, deadline);
        let mut stall = 0;
        while stall < config.max_no_improve {
            if Instant::now() > deadline {
                timed_out = true;
                break;
            }
            let mut trial = order.clone();
            perturb(&mut trial, &mut rng);
            let c = local_search(&prob, &mut trial, deadline);
            if better(c, cur) {
                order = trial;
                cur = c;
                stall = 0;
            } else {
                stall += 1;
            }
        }
        if best.as_ref().is_none_or(|(_, b)| better(cur, *b)) {
            best = Some((order, cur));
        }
        if Instant::now() > deadline {
            timed_out = true;
            break;
        }
    }

    let (order, (_, lateness)) = best.expect("at least one restart");
    if lateness > TW_EPS {
        let mut s = Schedule::infeasible(instance.n, maint_node);
        s.timed_out = timed_out;
        return Ok(s);
    }
    let mut s = schedule_from_order(&prob, &order, maint_node);
    s.timed_out = timed_out;
    Ok(s)
}

/// Exact minimum-makespan schedule by dynamic programming over
/// (visited set, last customer), keeping the earliest feasible arrival.
/// Earliest arrival dominates because waiting is always allowed.
pub fn solve_exact_dp(
    instance: &Instance,
    maint_node: Option<usize>,
    tw_override: Option<TwOverride>,
) -> Result<Schedule> {
    let n = instance.n;
    if n > DP_MAX_CUSTOMERS {
        return Err(Error::Size(format!(
            "exact DP supports at most {DP_MAX_CUSTOMERS} customers, got {n}"
        )));
    }
    let prob = Problem::build(instance, maint_node, tw_override)?;
    if prob.window_empty() {
        let mut s = Schedule::infeasible(n, maint_node);
        s.proven_optimal = true;
        return Ok(s);
    }
    let full = (1usize << n) - 1;
    let mut dp = vec![f64::INFINITY; (full + 1) * n];
    let mut parent = vec![u8::MAX; (full + 1) * n];
    for j in 0..n {
        let c = j + 1;
        let t = prob.dist[0][c].max(prob.early[c]);
        if t <= prob.late[c] + TW_EPS {
            dp[(1 << j) * n + j] = t;
        }
    }
    for mask in 1..=full {
        for last in 0..n {
            let t = dp[mask * n + last];
            if !t.is_finite() {
                continue;
            }
            let from = last + 1;
            for next in 0..n {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let c = next + 1;
                let arr = (t + prob.dist[from][c]).max(prob.early[c]);
                if arr > prob.late[c] + TW_EPS {
                    continue;
                }
                let idx = (mask | (1 << next)) * n + next;
                if arr < dp[idx] {
                    dp[idx] = arr;
                    parent[idx] = last as u8;
                }
            }
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for last in 0..n {
        let t = dp[full * n + last];
        if !t.is_finite() {
            continue;
        }
        let tau = t + prob.dist[last + 1][0];
        if tau > prob.depot_due + TW_EPS {
            continue;
        }
        if best.is_none_or(|(_, b)| tau < b) {
            best = Some((last, tau));
        }
    }
    let Some((mut last, _)) = best else {
        let mut s = Schedule::infeasible(n, maint_node);
        s.proven_optimal = true;
        return Ok(s);
    };
    let mut order = Vec::with_capacity(n);
    let mut mask = full;
    loop {
        order.push(last + 1);
        let p = parent[mask * n + last];
        mask &= !(1 << last);
        if p == u8::MAX {
            break;
        }
        last = p as usize;
    }
    order.reverse();
    let mut s = schedule_from_order(&prob, &order, maint_node);
    s.proven_optimal = true;
    Ok(s)
}

/// Solver selection for callers that may run either route optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RouteSolver {
    Heuristic(SolveConfig),
    Exact,
}

impl RouteSolver {
    pub fn solve(
        &self,
        instance: &Instance,
        maint_node: Option<usize>,
        tw_override: Option<TwOverride>,
    ) -> Result<Schedule> {
        match self {
            RouteSolver::Heuristic(cfg) => solve_heuristic(instance, maint_node, tw_override, cfg),
            RouteSolver::Exact => solve_exact_dp(instance, maint_node, tw_override),
        }
    }
}
