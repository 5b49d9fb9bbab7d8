//! Iterative alignment of maintenance-node time windows.
//!
//! Each maintenance-capable node's window is cut into subintervals over which
//! the maintenance cost rate changes by a bounded amount `delta`. A routing
//! problem is solved per subinterval with maintenance forced at the node and
//! its window narrowed to the subinterval. For a subinterval `q` of node `i`
//! with route duration `tau`, `cr * tau + g_lo(q)` bounds every solution in `q`
//! from below and `cr * tau + g_hi(q)` from above. Subintervals whose lower
//! value exceeds another's upper value are dropped; survivors are split again
//! with `delta / b` until the global gap `U - L` falls under
//! `epsilon + 2 delta`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::maintcost::{interval_cost_bounds, CostCurve};
use crate::tsptw::{schedule_from_order, Problem, RouteSolver, Schedule, SolveConfig, TwOverride};

/// Margin on dominance tests so rounding never drops a tied subinterval.
const DOMINANCE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubStatus {
    Pending,
    Solved,
    Infeasible,
    Dominated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subinterval {
    pub node: usize,
    pub lo: f64,
    pub hi: f64,
    pub g_lo: f64,
    pub g_hi: f64,
    pub tau: Option<f64>,
    pub status: SubStatus,
    #[serde(skip)]
    pub schedule: Option<Schedule>,
    /// Route of the parent subinterval; reused when it fits this one and beats
    /// the fresh solve.
    #[serde(skip)]
    inherited: Option<Schedule>,
}

impl Subinterval {
    pub fn new(curve: &CostCurve, node: usize, lo: f64, hi: f64) -> Self {
        let (g_lo, g_hi) = interval_cost_bounds(curve, lo, hi);
        Self {
            node,
            lo,
            hi,
            g_lo,
            g_hi,
            tau: None,
            status: SubStatus::Pending,
            schedule: None,
            inherited: None,
        }
    }

    /// Already-solved subinterval, for building ledgers by hand.
    pub fn solved(node: usize, lo: f64, hi: f64, g_lo: f64, g_hi: f64, tau: f64) -> Self {
        Self {
            node,
            lo,
            hi,
            g_lo,
            g_hi,
            tau: Some(tau),
            status: SubStatus::Solved,
            schedule: None,
            inherited: None,
        }
    }

    pub fn lower(&self, cr: f64) -> Option<f64> {
        self.tau.map(|t| cr * t + self.g_lo)
    }

    pub fn upper(&self, cr: f64) -> Option<f64> {
        self.tau.map(|t| cr * t + self.g_hi)
    }
}

/// Cut `[lo, hi]` so that the cost range inside every piece is at most
/// `delta`, where `delta` is the cost change over the interval divided by `b`
/// (monotone case) or the sum of the drops to the interior minimum divided by
/// `b` (non-monotone case, where the minimizer becomes a boundary).
/// Returns the pieces and `delta`.
pub fn split_interval(
    curve: &CostCurve,
    node: usize,
    lo: f64,
    hi: f64,
    b: usize,
) -> Result<(Vec<Subinterval>, f64)> {
    if b < 2 {
        return Err(Error::InvalidInput(format!("b must be >= 2, got {b}")));
    }
    if lo > hi {
        return Err(Error::InvalidInput(format!("empty interval [{lo}, {hi}]")));
    }
    for t in [lo, hi] {
        if !curve.contains(t) {
            return Err(Error::OutOfRange {
                t,
                lo: curve.t_start(),
                hi: curve.t_end(),
            });
        }
    }
    if hi - lo <= 0.0 {
        return Ok((vec![Subinterval::new(curve, node, lo, hi)], 0.0));
    }

    let f_lo = curve.eval_clamped(lo);
    let f_hi = curve.eval_clamped(hi);
    let (mut t_star, mut f_star) = if f_lo <= f_hi { (lo, f_lo) } else { (hi, f_hi) };
    let grid = curve.grid();
    let vals = curve.values();
    for i in curve.interior(lo, hi) {
        if vals[i] < f_star {
            t_star = grid[i];
            f_star = vals[i];
        }
    }
    let interior_min = t_star > lo && t_star < hi;
    let delta = if interior_min {
        ((f_lo - f_star) + (f_hi - f_star)) / b as f64
    } else {
        let (g_lo, g_hi) = interval_cost_bounds(curve, lo, hi);
        (g_hi - g_lo) / b as f64
    };
    if !(delta > 0.0) {
        return Ok((vec![Subinterval::new(curve, node, lo, hi)], 0.0));
    }

    let mut cuts = vec![lo];
    if interior_min {
        range_cuts(curve, lo, t_star, delta, &mut cuts);
        range_cuts(curve, t_star, hi, delta, &mut cuts);
    } else {
        range_cuts(curve, lo, hi, delta, &mut cuts);
    }
    let subs = cuts
        .windows(2)
        .map(|w| Subinterval::new(curve, node, w[0], w[1]))
        .collect();
    Ok((subs, delta))
}

/// Append cut points after `a` (exclusive) up to and including `c` so that
/// the interpolant's range inside each piece is at most `delta`.
fn range_cuts(curve: &CostCurve, a: f64, c: f64, delta: f64, cuts: &mut Vec<f64>) {
    let tol = delta * 1e-9;
    let grid = curve.grid();
    let vals = curve.values();
    let mut knots: Vec<(f64, f64)> = curve.interior(a, c).map(|i| (grid[i], vals[i])).collect();
    knots.push((c, curve.eval_clamped(c)));

    let (mut x0, mut v0) = (a, curve.eval_clamped(a));
    let (mut run_min, mut run_max) = (v0, v0);
    for (x1, v1) in knots {
        loop {
            if v1 > run_min + delta + tol {
                // rising through the top of the allowed band
                let target = run_min + delta;
                let x = x0 + (target - v0) / (v1 - v0) * (x1 - x0);
                cuts.push(x);
                x0 = x;
                v0 = target;
                run_min = target;
                run_max = target;
            } else if v1 < run_max - delta - tol {
                let target = run_max - delta;
                let x = x0 + (target - v0) / (v1 - v0) * (x1 - x0);
                cuts.push(x);
                x0 = x;
                v0 = target;
                run_min = target;
                run_max = target;
            } else {
                run_min = run_min.min(v1);
                run_max = run_max.max(v1);
                x0 = x1;
                v0 = v1;
                break;
            }
        }
    }
    // drop a sliver left by rounding right before the end
    if let Some(last) = cuts.last() {
        if *last > a && c - *last <= 1e-12 * c.abs().max(1.0) {
            cuts.pop();
        }
    }
    cuts.push(c);
}

/// Solve the routing problem with maintenance at `sub.node` and the node's
/// window narrowed to the subinterval.
pub fn solve_subinterval(instance: &Instance, mut sub: Subinterval, solver: &RouteSolver) -> Result<Subinterval> {
    let (e, l) = instance.tw[sub.node];
    if sub.lo.max(e) > sub.hi.min(l) {
        sub.status = SubStatus::Infeasible;
        sub.tau = None;
        sub.schedule = None;
        return Ok(sub);
    }
    let ov = TwOverride {
        node: sub.node,
        lo: sub.lo,
        hi: sub.hi,
    };
    let mut schedule = solver.solve(instance, Some(sub.node), Some(ov))?;
    if let Some(parent) = sub.inherited.take() {
        let prob = Problem::build(instance, Some(sub.node), Some(ov))?;
        let reused = schedule_from_order(&prob, &parent.order, Some(sub.node));
        if reused.feasible && (!schedule.feasible || reused.makespan < schedule.makespan) {
            schedule = reused;
        }
    }
    if schedule.feasible {
        sub.tau = Some(schedule.makespan);
        sub.status = SubStatus::Solved;
        sub.schedule = Some(schedule);
    } else {
        sub.tau = None;
        sub.status = SubStatus::Infeasible;
        sub.schedule = None;
    }
    Ok(sub)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub schedule: Schedule,
    pub z: f64,
    pub routing_cost: f64,
    pub maintenance_cost: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoMaintCandidate {
    pub schedule: Schedule,
    pub tau: f64,
    pub z: f64,
    /// `tau <= T_min`: the route may finish before maintenance becomes due.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    /// Surviving subintervals of all nodes, ordered by node then time.
    pub subs: Vec<Subinterval>,
    pub iteration: usize,
    pub delta: f64,
    pub upper: f64,
    pub lower: f64,
    pub pool: Vec<PoolEntry>,
    pub no_maint: Option<NoMaintCandidate>,
}

impl Ledger {
    pub fn new(subs: Vec<Subinterval>) -> Self {
        Self {
            subs,
            iteration: 0,
            delta: 0.0,
            upper: f64::INFINITY,
            lower: f64::NEG_INFINITY,
            pool: Vec::new(),
            no_maint: None,
        }
    }

    fn no_maint_z(&self) -> Option<f64> {
        self.no_maint.as_ref().filter(|c| c.valid).map(|c| c.z)
    }
}

/// Drop infeasible subintervals and mark dominated ones.
///
/// A solved subinterval is dominated when its lower value exceeds the best
/// upper value among solved subintervals of the same node, or the global upper
/// bound (the incumbent bound, and the no-maintenance option when valid).
pub fn eliminate_dominated(ledger: &mut Ledger, cr: f64) {
    ledger.subs.retain(|s| s.status != SubStatus::Infeasible);
    let mut global = ledger.upper;
    if let Some(z) = ledger.no_maint_z() {
        global = global.min(z);
    }
    for s in &ledger.subs {
        if s.status == SubStatus::Solved {
            global = global.min(s.upper(cr).unwrap());
        }
    }
    let mut node_best: std::collections::BTreeMap<usize, f64> = Default::default();
    for s in &ledger.subs {
        if s.status == SubStatus::Solved {
            let u = s.upper(cr).unwrap();
            node_best.entry(s.node).and_modify(|b| *b = b.min(u)).or_insert(u);
        }
    }
    for s in &mut ledger.subs {
        if s.status != SubStatus::Solved {
            continue;
        }
        let lower = s.lower(cr).unwrap();
        let bound = node_best[&s.node].min(global);
        if lower > bound + DOMINANCE_EPS * bound.abs().max(1.0) {
            s.status = SubStatus::Dominated;
        }
    }
}

/// Tighten `(U, L)` from surviving solved subintervals and the no-maintenance
/// option. Bounds move monotonically; `L` is capped at `U`.
pub fn update_bounds(ledger: &mut Ledger, cr: f64) -> Result<(f64, f64)> {
    let mut best_upper = f64::INFINITY;
    let mut best_lower = f64::INFINITY;
    let mut any = false;
    for s in ledger.subs.iter().filter(|s| s.status == SubStatus::Solved) {
        any = true;
        best_upper = best_upper.min(s.upper(cr).unwrap());
        best_lower = best_lower.min(s.lower(cr).unwrap());
    }
    if let Some(z) = ledger.no_maint_z() {
        any = true;
        best_upper = best_upper.min(z);
        best_lower = best_lower.min(z);
    }
    if !any {
        return Err(Error::Infeasible(
            "no feasible maintenance subinterval and no valid no-maintenance route".into(),
        ));
    }
    ledger.upper = ledger.upper.min(best_upper);
    ledger.lower = ledger.lower.max(best_lower).min(ledger.upper);
    Ok((ledger.upper, ledger.lower))
}

/// Total cost of a feasible schedule: travel cost plus the cost rate at the
/// maintenance time, or plus the minimum rate when maintenance is deferred
/// (only allowed when the route ends by `T_min`).
pub fn evaluate_total_cost(schedule: &Schedule, curve: &CostCurve, instance: &Instance) -> Result<f64> {
    Ok(cost_breakdown(schedule, curve, instance)?.0)
}

/// `(z, routing cost, maintenance cost)`.
pub fn cost_breakdown(schedule: &Schedule, curve: &CostCurve, instance: &Instance) -> Result<(f64, f64, f64)> {
    if !schedule.feasible {
        return Err(Error::ConstraintViolation("schedule is infeasible".into()));
    }
    let routing = instance.cr * schedule.makespan;
    let maint = match schedule.maint_time {
        Some(pi) => curve.eval(pi)?,
        None => {
            if schedule.makespan > curve.t_min + 1e-9 {
                return Err(Error::ConstraintViolation(format!(
                    "route of duration {} exceeds T_min = {} without maintenance",
                    schedule.makespan, curve.t_min
                )));
            }
            curve.lambda_min
        }
    };
    Ok((routing + maint, routing, maint))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IamConfig {
    /// Pieces per split.
    pub b: usize,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub solver: RouteSolver,
}

impl Default for IamConfig {
    fn default() -> Self {
        Self {
            b: 5,
            epsilon: 1.0,
            max_iterations: 50,
            solver: RouteSolver::Heuristic(SolveConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub upper: f64,
    pub lower: f64,
    pub delta: f64,
    pub survivors: usize,
    pub solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IamResult {
    pub best: PoolEntry,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub gap: f64,
    pub upper: f64,
    pub lower: f64,
    pub iterations: usize,
}

impl IamResult {
    /// Bound trace as CSV `iteration,U,L,delta,survivors,solves`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,U,L,delta,survivors,solves\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration, r.upper, r.lower, r.delta, r.survivors, r.solves
            ));
        }
        out
    }
}

/// Maintenance window of a node clipped to the curve's domain.
fn node_window(instance: &Instance, curve: &CostCurve, node: usize) -> Option<(f64, f64)> {
    let (e, l) = instance.tw[node];
    let lo = e.max(curve.t_start());
    let hi = l.min(curve.t_end());
    (lo <= hi).then_some((lo, hi))
}

pub fn run_iam(instance: &Instance, curve: &CostCurve, config: &IamConfig) -> Result<IamResult> {
    if config.b < 2 {
        return Err(Error::InvalidInput("b must be >= 2".into()));
    }
    if !(config.epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be > 0".into()));
    }
    let cr = instance.cr;

    let mut subs = Vec::new();
    let mut delta0 = 0.0f64;
    for &m in &instance.maint_nodes {
        if let Some((lo, hi)) = node_window(instance, curve, m) {
            let (pieces, d) = split_interval(curve, m, lo, hi, config.b)?;
            delta0 = delta0.max(d);
            subs.extend(pieces);
        }
    }
    let mut ledger = Ledger::new(subs);
    ledger.delta = delta0;

    let plain = config.solver.solve(instance, None, None)?;
    if plain.feasible {
        let tau = plain.makespan;
        ledger.no_maint = Some(NoMaintCandidate {
            z: cr * tau + curve.lambda_min,
            tau,
            valid: tau <= curve.t_min + 1e-9,
            schedule: plain,
        });
    }

    let mut trace = Vec::new();
    let mut converged = false;
    loop {
        let v = ledger.iteration;
        let pending: Vec<Subinterval> = std::mem::take(&mut ledger.subs);
        let solves = pending.iter().filter(|s| s.status == SubStatus::Pending).count();
        ledger.subs = pending
            .into_par_iter()
            .map(|s| {
                if s.status == SubStatus::Pending {
                    solve_subinterval(instance, s, &config.solver)
                } else {
                    Ok(s)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        eliminate_dominated(&mut ledger, cr);
        update_bounds(&mut ledger, cr)?;

        for s in ledger.subs.iter().filter(|s| s.status == SubStatus::Solved) {
            let sched = s.schedule.clone().expect("solved subinterval keeps its schedule");
            let (z, routing, maint) = cost_breakdown(&sched, curve, instance)?;
            ledger.pool.push(PoolEntry {
                schedule: sched,
                z,
                routing_cost: routing,
                maintenance_cost: maint,
                iteration: v,
            });
        }
        if v == 0 {
            if let Some(c) = ledger.no_maint.as_ref().filter(|c| c.valid) {
                ledger.pool.push(PoolEntry {
                    schedule: c.schedule.clone(),
                    z: c.z,
                    routing_cost: cr * c.tau,
                    maintenance_cost: curve.lambda_min,
                    iteration: 0,
                });
            }
        }

        ledger.subs.retain(|s| s.status == SubStatus::Solved);
        trace.push(TraceRow {
            iteration: v,
            upper: ledger.upper,
            lower: ledger.lower,
            delta: ledger.delta,
            survivors: ledger.subs.len(),
            solves,
        });

        let next_delta = ledger.delta / config.b as f64;
        if ledger.upper - ledger.lower <= config.epsilon + 2.0 * next_delta {
            converged = true;
            break;
        }
        if v + 1 >= config.max_iterations {
            break;
        }

        // split survivors; flat pieces stay as they are
        let mut next = Vec::with_capacity(ledger.subs.len() * config.b);
        for s in std::mem::take(&mut ledger.subs) {
            let (pieces, d) = split_interval(curve, s.node, s.lo, s.hi, config.b)?;
            if d <= 0.0 || pieces.len() < 2 {
                next.push(s);
                continue;
            }
            for mut p in pieces {
                p.inherited = s.schedule.clone();
                next.push(p);
            }
        }
        ledger.subs = next;
        ledger.delta = next_delta;
        ledger.iteration += 1;
    }

    let best = ledger
        .pool
        .iter()
        .fold(None::<&PoolEntry>, |acc, e| match acc {
            Some(b) if b.z <= e.z => Some(b),
            _ => Some(e),
        })
        .cloned()
        .ok_or_else(|| Error::Infeasible("empty solution pool".into()))?;
    Ok(IamResult {
        gap: ledger.upper - ledger.lower,
        upper: ledger.upper,
        lower: ledger.lower,
        iterations: trace.len(),
        best,
        trace,
        converged,
    })
}
