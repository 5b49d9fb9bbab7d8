//! Brute-force references for small instances and the periodic-maintenance
//! benchmark.
//!
//! The oracle enumerates every customer permutation and every maintenance
//! choice (one capable node, or none). For a fixed route with maintenance at
//! node `m`, delaying the maintenance start to `pi >= u` (earliest arrival `u`)
//! gives a makespan `max(A, pi + B)` and stays feasible while
//! `pi <= pi_max`, so the best delay is found exactly from the curve's grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::maintcost::{CostCurve, TangentEnvelope};
use crate::tsptw::{Problem, RouteSolver, Schedule, TwOverride, TW_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub max_n: usize,
    /// `None` minimizes over the maintenance start exactly; `Some(step)`
    /// scans a grid from the earliest arrival.
    pub pi_grid_step: Option<f64>,
    /// Allow the maintenance start to be later than the earliest arrival.
    pub allow_delay: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_n: 9,
            pi_grid_step: None,
            allow_delay: true,
        }
    }
}

impl OracleConfig {
    pub fn no_delay() -> Self {
        Self {
            allow_delay: false,
            ..Self::default()
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if n > self.max_n {
            return Err(Error::Size(format!(
                "oracle enumerates at most {} customers, got {n}",
                self.max_n
            )));
        }
        if let Some(s) = self.pi_grid_step {
            if !(s > 0.0) {
                return Err(Error::InvalidInput(format!("pi_grid_step must be > 0, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub z: f64,
    pub order: Vec<usize>,
    pub maint_node: Option<usize>,
    pub maint_time: Option<f64>,
    /// Earliest possible maintenance start on this route.
    pub earliest_maint_time: Option<f64>,
    pub tau: f64,
    pub routing_cost: f64,
    pub maintenance_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instance: String,
    pub z_star: f64,
    pub z_no_delay: f64,
    pub envelope_lb: Option<f64>,
    pub solution: OracleSolution,
    pub no_delay_solution: OracleSolution,
}

/// Range minimum with first-index ties.
struct RangeMin {
    table: Vec<Vec<usize>>,
    vals: Vec<f64>,
}

impl RangeMin {
    fn new(vals: Vec<f64>) -> Self {
        let n = vals.len();
        let mut table = vec![(0..n).collect::<Vec<_>>()];
        let mut w = 1;
        while 2 * w <= n {
            let prev = table.last().unwrap();
            let row = (0..=n - 2 * w)
                .map(|i| {
                    let (a, b) = (prev[i], prev[i + w]);
                    if vals[b] < vals[a] { b } else { a }
                })
                .collect();
            table.push(row);
            w *= 2;
        }
        Self { table, vals }
    }

    /// Index of the minimum over `range`, `None` when empty.
    fn argmin(&self, range: std::ops::Range<usize>) -> Option<usize> {
        if range.is_empty() {
            return None;
        }
        let len = range.end - range.start;
        let k = usize::BITS as usize - 1 - len.leading_zeros() as usize;
        let a = self.table[k][range.start];
        let b = self.table[k][range.end - (1 << k)];
        Some(if self.vals[b] < self.vals[a] { b } else { a })
    }
}

/// Maintenance cost model used during enumeration.
enum Pricing<'a> {
    Curve {
        curve: &'a CostCurve,
        f_min: RangeMin,
        h_min: RangeMin,
    },
    Envelope {
        curve: &'a CostCurve,
        env: &'a TangentEnvelope,
        breaks: Vec<f64>,
    },
}

impl<'a> Pricing<'a> {
    fn curve(curve: &'a CostCurve, cr: f64) -> Self {
        let f = curve.values().to_vec();
        let h = curve.grid().iter().zip(&f).map(|(t, v)| cr * t + v).collect();
        Pricing::Curve {
            curve,
            f_min: RangeMin::new(f),
            h_min: RangeMin::new(h),
        }
    }

    fn domain(&self) -> &CostCurve {
        match self {
            Pricing::Curve { curve, .. } | Pricing::Envelope { curve, .. } => curve,
        }
    }

    fn price(&self, t: f64) -> f64 {
        match self {
            Pricing::Curve { curve, .. } => curve.eval_clamped(t),
            Pricing::Envelope { env, .. } => env.eval(t),
        }
    }

    /// `min over pi in [x, y] of cr * max(a, pi + b) + price(pi)` and its argmin.
    fn best_delay(&self, cr: f64, a: f64, b: f64, x: f64, y: f64) -> (f64, f64) {
        let total = |pi: f64| cr * a.max(pi + b) + self.price(pi);
        let mut best = (total(x), x);
        let mut consider = |pi: f64| {
            let z = total(pi);
            if z < best.0 {
                best = (z, pi);
            }
        };
        consider(y);
        let pc = a - b;
        if pc > x && pc < y {
            consider(pc);
        }
        match self {
            Pricing::Curve { curve, f_min, h_min } => {
                // flat makespan part, then the part where delay propagates
                let flat_hi = y.min(pc);
                if flat_hi > x {
                    if let Some(i) = f_min.argmin(curve.interior(x, flat_hi)) {
                        consider(curve.grid()[i]);
                    }
                }
                let slope_lo = x.max(pc);
                if y > slope_lo {
                    if let Some(i) = h_min.argmin(curve.interior(slope_lo, y)) {
                        consider(curve.grid()[i]);
                    }
                }
            }
            Pricing::Envelope { breaks, .. } => {
                for &t in breaks.iter().filter(|t| **t > x && **t < y) {
                    consider(t);
                }
            }
        }
        best
    }
}

/// Per-choice problem data for enumeration.
struct Choice {
    prob: Problem,
    maint: Option<usize>,
}

#[derive(Clone)]
struct Best {
    z: f64,
    sol: Option<OracleSolution>,
}

struct Search<'a> {
    instance: &'a Instance,
    pricing: &'a Pricing<'a>,
    config: &'a OracleConfig,
    t_min: f64,
    lambda: f64,
}

impl Search<'_> {
    fn leaf(&self, ch: &Choice, order: &[usize], times: &[f64], best: &mut Best) {
        let cr = self.instance.cr;
        let prob = &ch.prob;
        let last = *order.last().unwrap();
        let tau_e = times[order.len() - 1] + prob.dist[last][0];
        if tau_e > prob.depot_due + TW_EPS {
            return;
        }
        let Some(m) = ch.maint else {
            if tau_e <= self.t_min + 1e-9 {
                let z = cr * tau_e + self.lambda;
                self.offer(best, z, order, None, None, None, tau_e, cr * tau_e, self.lambda);
            }
            return;
        };
        let k = order.iter().position(|&c| c == m).unwrap();
        let u = times[k];
        // downstream makespan as max(a, pi + b); feasible while pi <= pi_max
        let (mut a, mut b) = (f64::NEG_INFINITY, 0.0);
        let mut pi_max = prob.late[m];
        let mut prev = m;
        for &j in &order[k + 1..] {
            let d = prob.dist[prev][j];
            a = prob.early[j].max(a + d);
            b += d;
            pi_max = pi_max.min(prob.late[j] - b);
            prev = j;
        }
        let d = prob.dist[prev][0];
        a += d;
        b += d;
        pi_max = pi_max.min(prob.depot_due - b) + TW_EPS;

        let curve = self.pricing.domain();
        let x = u.max(curve.t_start());
        let y = pi_max.min(curve.t_end());
        if !self.config.allow_delay {
            if u < curve.t_start() || u > curve.t_end() {
                return;
            }
            let g = self.pricing.price(u);
            self.offer(best, cr * tau_e + g, order, Some(m), Some(u), Some(u), tau_e, cr * tau_e, g);
            return;
        }
        if x > y {
            return;
        }
        let (z, pi) = match self.config.pi_grid_step {
            None => self.pricing.best_delay(cr, a, b, x, y),
            Some(step) => {
                let mut best_local = (f64::INFINITY, x);
                let mut i = 0u64;
                loop {
                    let pi = x + i as f64 * step;
                    if pi > y {
                        break;
                    }
                    let z = cr * a.max(pi + b) + self.pricing.price(pi);
                    if z < best_local.0 {
                        best_local = (z, pi);
                    }
                    i += 1;
                }
                best_local
            }
        };
        let tau = a.max(pi + b);
        self.offer(best, z, order, Some(m), Some(pi), Some(u), tau, cr * tau, z - cr * tau);
    }

    #[allow(clippy::too_many_arguments)]
    fn offer(
        &self,
        best: &mut Best,
        z: f64,
        order: &[usize],
        maint_node: Option<usize>,
        maint_time: Option<f64>,
        earliest: Option<f64>,
        tau: f64,
        routing_cost: f64,
        maintenance_cost: f64,
    ) {
        if z < best.z {
            best.z = z;
            best.sol = Some(OracleSolution {
                z,
                order: order.to_vec(),
                maint_node,
                maint_time,
                earliest_maint_time: earliest,
                tau,
                routing_cost,
                maintenance_cost,
            });
        }
    }

    fn dfs(&self, ch: &Choice, order: &mut Vec<usize>, times: &mut Vec<f64>, mask: u32, best: &mut Best) {
        let n = ch.prob.n;
        if order.len() == n {
            self.leaf(ch, order, times, best);
            return;
        }
        let cur = *order.last().unwrap();
        let t = *times.last().unwrap();
        for j in 1..=n {
            if mask & (1 << j) != 0 {
                continue;
            }
            let arr = (t + ch.prob.dist[cur][j]).max(ch.prob.early[j]);
            if arr > ch.prob.late[j] + TW_EPS {
                continue;
            }
            order.push(j);
            times.push(arr);
            self.dfs(ch, order, times, mask | (1 << j), best);
            order.pop();
            times.pop();
        }
    }

    fn run(&self) -> Result<OracleSolution> {
        let mut choices = vec![Choice {
            prob: Problem::build(self.instance, None, None)?,
            maint: None,
        }];
        for &m in &self.instance.maint_nodes {
            choices.push(Choice {
                prob: Problem::build(self.instance, Some(m), None)?,
                maint: Some(m),
            });
        }
        let n = self.instance.n;
        let tasks: Vec<(usize, usize)> = (0..choices.len())
            .flat_map(|c| (1..=n).map(move |first| (c, first)))
            .collect();
        let results: Vec<Best> = tasks
            .par_iter()
            .map(|&(c, first)| {
                let ch = &choices[c];
                let mut best = Best { z: f64::INFINITY, sol: None };
                let arr = ch.prob.dist[0][first].max(ch.prob.early[first]);
                if arr <= ch.prob.late[first] + TW_EPS {
                    let mut order = vec![first];
                    let mut times = vec![arr];
                    self.dfs(ch, &mut order, &mut times, 1 << first, &mut best);
                }
                best
            })
            .collect();
        // fixed reduction order: choice, then first customer
        let mut best = Best { z: f64::INFINITY, sol: None };
        for r in results {
            if r.z < best.z {
                best = r;
            }
        }
        best.sol
            .ok_or_else(|| Error::Infeasible(format!("instance {} has no feasible solution", self.instance.name)))
    }
}

fn check_size(instance: &Instance, config: &OracleConfig) -> Result<()> {
    config.validate(instance.n)?;
    if instance.n == 0 {
        return Err(Error::InvalidInput("instance has no customers".into()));
    }
    if instance.n > 31 {
        return Err(Error::Size("too many customers for enumeration".into()));
    }
    Ok(())
}

/// Global optimum over routes, maintenance choice and (optionally) delayed
/// maintenance start.
pub fn solve_exact_sdm(instance: &Instance, curve: &CostCurve, config: &OracleConfig) -> Result<OracleSolution> {
    check_size(instance, config)?;
    let pricing = Pricing::curve(curve, instance.cr);
    Search {
        instance,
        pricing: &pricing,
        config,
        t_min: curve.t_min,
        lambda: curve.lambda_min,
    }
    .run()
}

/// Same enumeration with the maintenance cost replaced by the envelope, which
/// bounds the curve from below, so the result bounds the oracle from below.
pub fn solve_envelope_lb(
    instance: &Instance,
    env: &TangentEnvelope,
    curve: &CostCurve,
    config: &OracleConfig,
) -> Result<f64> {
    check_size(instance, config)?;
    let pricing = Pricing::Envelope {
        curve,
        env,
        breaks: env.breakpoints(),
    };
    Ok(Search {
        instance,
        pricing: &pricing,
        config,
        t_min: curve.t_min,
        lambda: curve.lambda_min,
    }
    .run()?
    .z)
}

/// Delay and no-delay optima plus an optional envelope bound.
pub fn oracle_report(
    instance: &Instance,
    curve: &CostCurve,
    env: Option<&TangentEnvelope>,
    config: &OracleConfig,
) -> Result<OracleReport> {
    let solution = solve_exact_sdm(instance, curve, &OracleConfig { allow_delay: true, ..*config })?;
    let no_delay_solution = solve_exact_sdm(instance, curve, &OracleConfig { allow_delay: false, ..*config })?;
    let envelope_lb = env
        .map(|e| solve_envelope_lb(instance, e, curve, &OracleConfig { allow_delay: true, ..*config }))
        .transpose()?;
    Ok(OracleReport {
        instance: instance.name.clone(),
        z_star: solution.z,
        z_no_delay: no_delay_solution.z,
        envelope_lb,
        solution,
        no_delay_solution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmPolicy {
    /// Vehicle-age interval for the preventive maintenance.
    pub age_window: (f64, f64),
    pub flat_cost: f64,
}

impl Default for PmPolicy {
    fn default() -> Self {
        Self {
            age_window: (100.0, 112.0),
            flat_cost: 1000.0,
        }
    }
}

impl PmPolicy {
    pub fn new(lo: f64, hi: f64, flat_cost: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidInput(format!("PM window needs lo < hi, got [{lo}, {hi}]")));
        }
        if !(flat_cost >= 0.0) {
            return Err(Error::InvalidInput("PM flat cost must be >= 0".into()));
        }
        Ok(Self {
            age_window: (lo, hi),
            flat_cost,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmSolution {
    pub schedule: Schedule,
    /// `cr * tau + flat_cost`.
    pub z: f64,
    pub routing_cost: f64,
    pub maintenance_cost: f64,
    /// Vehicle age at the maintenance start.
    pub maint_age: f64,
    /// Set when no capable node could be reached inside the window.
    pub window_violated: bool,
}

/// Route with maintenance forced into the policy's age window. The vehicle is
/// `age_at_dispatch` old when the route starts, so the window in route time is
/// the age window shifted by that amount.
pub fn solve_pm(
    instance: &Instance,
    policy: &PmPolicy,
    solver: &RouteSolver,
    age_at_dispatch: f64,
) -> Result<PmSolution> {
    if instance.maint_nodes.is_empty() {
        return Err(Error::InvalidInput("PM needs at least one maintenance-capable node".into()));
    }
    let lo = policy.age_window.0 - age_at_dispatch;
    let hi = policy.age_window.1 - age_at_dispatch;
    let cr = instance.cr;

    let mut best: Option<Schedule> = None;
    for &m in &instance.maint_nodes {
        let (e, l) = instance.tw[m];
        if lo.max(e) > hi.min(l) {
            continue;
        }
        let s = solver.solve(instance, Some(m), Some(TwOverride { node: m, lo, hi }))?;
        if s.feasible && best.as_ref().is_none_or(|b| s.makespan < b.makespan) {
            best = Some(s);
        }
    }
    let (schedule, violated) = match best {
        Some(s) => (s, false),
        None => {
            // nearest achievable arrival to the window
            let mut fallback: Option<(f64, Schedule)> = None;
            for &m in &instance.maint_nodes {
                let s = solver.solve(instance, Some(m), None)?;
                if !s.feasible {
                    continue;
                }
                let pi = s.maint_time.unwrap();
                let dist = (lo - pi).max(pi - hi).max(0.0);
                let better = match &fallback {
                    None => true,
                    Some((d, b)) => dist < *d || (dist == *d && s.makespan < b.makespan),
                };
                if better {
                    fallback = Some((dist, s));
                }
            }
            let (_, s) = fallback.ok_or_else(|| {
                Error::Infeasible(format!("no feasible PM route on instance {}", instance.name))
            })?;
            (s, true)
        }
    };
    let routing = cr * schedule.makespan;
    Ok(PmSolution {
        maint_age: age_at_dispatch + schedule.maint_time.unwrap(),
        z: routing + policy.flat_cost,
        routing_cost: routing,
        maintenance_cost: policy.flat_cost,
        schedule,
        window_violated: violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instance, parse_instance, Rounding};
    use crate::maintcost::build_tangent_envelope;

    fn flat_curve(v: f64, t_max: f64) -> CostCurve {
        let grid: Vec<f64> = (1..=(t_max as usize * 2)).map(|i| i as f64 * 0.5).collect();
        let vals = vec![v; grid.len()];
        CostCurve::from_values(grid, vals).unwrap()
    }

    fn one_customer() -> Instance {
        let text = "0 0 0 0 0 1000 0\n1 3 4 0 0 1000 0\n";
        parse_instance(text, Rounding::None).unwrap().with_maintenance(vec![1], 2.0).unwrap()
    }

    #[test]
    fn one_customer_two_candidates() {
        let inst = one_customer();
        // T_min of a flat curve is its first grid point, so no-maintenance is out
        let curve = flat_curve(50.0, 100.0);
        let sol = solve_exact_sdm(&inst, &curve, &OracleConfig::default()).unwrap();
        assert!((sol.z - (0.72 * 12.0 + 50.0)).abs() < 1e-9);
        assert_eq!(sol.maint_node, Some(1));

        // decreasing curve: T_min at the end, deferring is cheaper
        let grid: Vec<f64> = (1..=200).map(|i| i as f64 * 0.5).collect();
        let vals = grid.iter().map(|t| 100.0 - 0.1 * t).collect();
        let curve = CostCurve::from_values(grid, vals).unwrap();
        let sol = solve_exact_sdm(&inst, &curve, &OracleConfig::no_delay()).unwrap();
        let no_maint = 0.72 * 10.0 + curve.lambda_min;
        let maint = 0.72 * 12.0 + (100.0 - 0.1 * 5.0);
        assert!((sol.z - no_maint.min(maint)).abs() < 1e-9);
    }

    #[test]
    fn delay_never_hurts_and_grid_is_close() {
        let grid: Vec<f64> = (1..=800).map(|i| i as f64 * 0.5).collect();
        let vals = grid.iter().map(|t| 5.0 + 400.0 / t + 0.05 * t).collect();
        let curve = CostCurve::from_values(grid, vals).unwrap();
        for seed in 0..5 {
            let inst = generate_instance("g", 6, 60.0, seed).with_maintenance(vec![2, 5], 4.0).unwrap();
            let exact = solve_exact_sdm(&inst, &curve, &OracleConfig::default()).unwrap();
            let nd = solve_exact_sdm(&inst, &curve, &OracleConfig::no_delay()).unwrap();
            assert!(exact.z <= nd.z + 1e-9);
            let step = 0.1;
            let gridded = solve_exact_sdm(
                &inst,
                &curve,
                &OracleConfig {
                    pi_grid_step: Some(step),
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(gridded.z >= exact.z - 1e-9);
            assert!(gridded.z - exact.z < 0.72 * step + 400.0 * step);
        }
    }

    #[test]
    fn delay_exact_matches_fine_grid() {
        let grid: Vec<f64> = (1..=800).map(|i| i as f64 * 0.5).collect();
        let vals = grid.iter().map(|t| 5.0 + 400.0 / t + 0.05 * t).collect();
        let curve = CostCurve::from_values(grid, vals).unwrap();
        let inst = generate_instance("g", 5, 80.0, 9).with_maintenance(vec![1, 3], 4.0).unwrap();
        let exact = solve_exact_sdm(&inst, &curve, &OracleConfig::default()).unwrap();
        let fine = solve_exact_sdm(
            &inst,
            &curve,
            &OracleConfig {
                pi_grid_step: Some(0.001),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(exact.z <= fine.z + 1e-9);
        assert!(fine.z - exact.z < 0.01);
    }

    #[test]
    fn flat_envelope_lb() {
        let inst = generate_instance("g", 5, 100.0, 3).with_maintenance(vec![2], 3.0).unwrap();
        let curve = flat_curve(40.0, 2000.0);
        let env = build_tangent_envelope(&curve, 1, (curve.t_start(), curve.t_end()), 1e-9).unwrap();
        let lb = solve_envelope_lb(&inst, &env, &curve, &OracleConfig::default()).unwrap();
        let z = solve_exact_sdm(&inst, &curve, &OracleConfig::default()).unwrap().z;
        assert!((lb - z).abs() < 1e-9);
    }

    #[test]
    fn size_limit() {
        let inst = generate_instance("g", 10, 100.0, 3).with_maintenance(vec![2], 3.0).unwrap();
        let curve = flat_curve(40.0, 2000.0);
        assert!(matches!(
            solve_exact_sdm(&inst, &curve, &OracleConfig::default()),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn range_min_matches_scan() {
        let vals: Vec<f64> = (0..37).map(|i| ((i * 7919) % 23) as f64).collect();
        let rm = RangeMin::new(vals.clone());
        for a in 0..37 {
            for b in a + 1..=37 {
                let got = rm.argmin(a..b).unwrap();
                let want = (a..b).fold(a, |m, i| if vals[i] < vals[m] { i } else { m });
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn pm_window_and_fallback() {
        let inst = one_customer();
        let solver = RouteSolver::Exact;
        let pm = solve_pm(&inst, &PmPolicy::new(0.0, 100.0, 1000.0).unwrap(), &solver, 0.0).unwrap();
        assert!(!pm.window_violated);
        assert_eq!(pm.schedule.maint_time, Some(5.0));
        assert!((pm.z - (0.72 * 12.0 + 1000.0)).abs() < 1e-9);
        // window forces waiting at the node
        let pm = solve_pm(&inst, &PmPolicy::default(), &solver, 0.0).unwrap();
        assert!(!pm.window_violated);
        assert_eq!(pm.maint_age, 100.0);
        // window beyond the depot due date
        let pm = solve_pm(&inst, &PmPolicy::new(2000.0, 2100.0, 1000.0).unwrap(), &solver, 0.0).unwrap();
        assert!(pm.window_violated);
        assert_eq!(pm.maint_age, 5.0);
        // age at dispatch shifts the window
        let pm = solve_pm(&inst, &PmPolicy::default(), &solver, 40.0).unwrap();
        assert_eq!(pm.maint_age, 100.0);
        assert_eq!(pm.schedule.maint_time, Some(60.0));
    }

    #[test]
    fn pm_needs_capable_node() {
        let text = "0 0 0 0 0 1000 0\n1 3 4 0 0 1000 0\n";
        let inst = parse_instance(text, Rounding::None).unwrap();
        assert!(solve_pm(&inst, &PmPolicy::default(), &RouteSolver::Exact, 0.0).is_err());
    }
}
