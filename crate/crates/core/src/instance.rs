//! TSPTW benchmark instances and maintenance-node selection.
//!
//! Input files follow the Gendreau/Dumas layout: optional header lines, then
//! one whitespace-separated row per node
//!
//! ```text
//! index  x  y  demand  ready_time  due_date  service_time
//! ```
//!
//! with the depot first as index 0. A row with index 999 terminates the node
//! list (the Dumas files repeat the depot there). A `#maint:` comment carries
//! the maintenance-node set, maintenance duration and travel cost rate.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost of one unit of travel time.
pub const DEFAULT_COST_RATE: f64 = 0.72;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    None,
    OneDecimal,
    IntegerTruncate,
}

impl Rounding {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Rounding::None => x,
            Rounding::OneDecimal => (x * 10.0).trunc() / 10.0,
            Rounding::IntegerTruncate => x.trunc(),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Rounding::None => "none",
            Rounding::OneDecimal => "one-decimal",
            Rounding::IntegerTruncate => "integer-truncate",
        }
    }
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Rounding::None),
            "one-decimal" => Ok(Rounding::OneDecimal),
            "integer-truncate" => Ok(Rounding::IntegerTruncate),
            other => Err(Error::InvalidInput(format!("unknown rounding '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub name: String,
    /// Number of customers; node 0 is the depot.
    pub n: usize,
    pub coords: Vec<(f64, f64)>,
    pub demand: Vec<f64>,
    pub service: Vec<f64>,
    /// Travel time matrix with the service time of the origin folded in.
    pub d: Vec<Vec<f64>>,
    pub tw: Vec<(f64, f64)>,
    pub maint_nodes: Vec<usize>,
    /// Maintenance duration.
    pub p_maint: f64,
    /// Cost per unit of travel time.
    pub cr: f64,
    pub rounding: Rounding,
}

impl Instance {
    /// Build from node rows; distances are Euclidean under `rounding` with
    /// service times folded into outgoing arcs.
    #[allow(clippy::too_many_arguments)]
    pub fn from_nodes(
        name: impl Into<String>,
        coords: Vec<(f64, f64)>,
        demand: Vec<f64>,
        tw: Vec<(f64, f64)>,
        service: Vec<f64>,
        rounding: Rounding,
    ) -> Result<Self> {
        let size = coords.len();
        if size < 2 {
            return Err(Error::Validation("need a depot and at least one customer".into()));
        }
        if demand.len() != size || tw.len() != size || service.len() != size {
            return Err(Error::Validation("node attribute lengths differ".into()));
        }
        for (i, (e, l)) in tw.iter().enumerate() {
            if e > l {
                return Err(Error::Validation(format!(
                    "node {i}: ready time {e} exceeds due date {l}"
                )));
            }
        }
        let mut d = vec![vec![0.0; size]; size];
        for i in 0..size {
            for j in 0..size {
                if i != j {
                    let dx = coords[i].0 - coords[j].0;
                    let dy = coords[i].1 - coords[j].1;
                    d[i][j] = rounding.apply((dx * dx + dy * dy).sqrt()) + service[i];
                }
            }
        }
        Ok(Self {
            name: name.into(),
            n: size - 1,
            coords,
            demand,
            service,
            d,
            tw,
            maint_nodes: Vec::new(),
            p_maint: 0.0,
            cr: DEFAULT_COST_RATE,
            rounding,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n + 1
    }

    pub fn customers(&self) -> impl Iterator<Item = usize> {
        1..=self.n
    }

    /// Travel time without the folded service time.
    pub fn base_distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.d[i][j] - self.service[i]
        }
    }

    pub fn with_maintenance(mut self, nodes: Vec<usize>, p_maint: f64) -> Result<Self> {
        self.set_maintenance(nodes, p_maint)?;
        Ok(self)
    }

    pub fn set_maintenance(&mut self, mut nodes: Vec<usize>, p_maint: f64) -> Result<()> {
        nodes.sort_unstable();
        nodes.dedup();
        if let Some(bad) = nodes.iter().find(|i| **i == 0 || **i > self.n) {
            return Err(Error::Validation(format!(
                "maintenance node {bad} is not a customer"
            )));
        }
        if !(p_maint >= 0.0) {
            return Err(Error::Validation("maintenance duration must be >= 0".into()));
        }
        self.maint_nodes = nodes;
        self.p_maint = p_maint;
        Ok(())
    }

    pub fn is_maint_node(&self, i: usize) -> bool {
        self.maint_nodes.binary_search(&i).is_ok()
    }

    /// Triples `(i, k, j)` with `d_ij > d_ik + d_kj + tol`.
    pub fn triangle_violations(&self, tol: f64) -> usize {
        let s = self.node_count();
        let mut count = 0;
        for i in 0..s {
            for j in 0..s {
                for k in 0..s {
                    if i != j && k != i && k != j && self.d[i][j] > self.d[i][k] + self.d[k][j] + tol {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    /// Canonical text form; `parse_instance` reads it back to an equal value.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "!! {}", self.name);
        let _ = writeln!(
            out,
            "CUST NO.  XCOORD.  YCOORD.  DEMAND  READY TIME  DUE DATE  SERVICE TIME"
        );
        for i in 0..self.node_count() {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                i,
                self.coords[i].0,
                self.coords[i].1,
                self.demand[i],
                self.tw[i].0,
                self.tw[i].1,
                self.service[i]
            );
        }
        let nodes: Vec<String> = self.maint_nodes.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(
            out,
            "#maint: nodes={} p={} cr={} rounding={}",
            nodes.join(","),
            self.p_maint,
            self.cr,
            self.rounding.as_str()
        );
        out
    }
}

struct MaintLine {
    nodes: Vec<usize>,
    p: f64,
    cr: f64,
    rounding: Option<Rounding>,
}

fn parse_maint_line(rest: &str, line: usize) -> Result<MaintLine> {
    let mut m = MaintLine {
        nodes: Vec::new(),
        p: 0.0,
        cr: DEFAULT_COST_RATE,
        rounding: None,
    };
    let bad = |msg: String| Error::Parse { line, msg };
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got '{tok}'")))?;
        match k {
            "nodes" => {
                m.nodes = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("bad node list: {e}")))?;
            }
            "p" => m.p = v.parse().map_err(|e| bad(format!("bad p: {e}")))?,
            "cr" => m.cr = v.parse().map_err(|e| bad(format!("bad cr: {e}")))?,
            "rounding" => m.rounding = Some(v.parse()?),
            other => return Err(bad(format!("unknown #maint key '{other}'"))),
        }
    }
    Ok(m)
}

/// Parse Gendreau-style text. A `rounding=` entry on the `#maint:` line
/// overrides `rounding`.
pub fn parse_instance(text: &str, rounding: Rounding) -> Result<Instance> {
    let mut name = String::from("unnamed");
    let mut rows: Vec<[f64; 7]> = Vec::new();
    let mut maint: Option<MaintLine> = None;
    let mut ended = false;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#maint:") {
            maint = Some(parse_maint_line(rest, line_no)?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("!!") {
            if let Some(tok) = rest.split_whitespace().next() {
                name = tok.to_string();
            }
            continue;
        }
        let first = line.split_whitespace().next().unwrap_or("");
        if first.parse::<f64>().is_err() {
            // column header
            continue;
        }
        if ended {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 7 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 7 columns, found {}", toks.len()),
            });
        }
        let mut row = [0.0; 7];
        for (k, t) in toks.iter().take(7).enumerate() {
            row[k] = t.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("column {} is not numeric: '{t}'", k + 1),
            })?;
        }
        if row[0] == 999.0 {
            ended = true;
            continue;
        }
        if row[0] != rows.len() as f64 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected node index {}, found {}", rows.len(), toks[0]),
            });
        }
        rows.push(row);
    }

    let rounding = maint.as_ref().and_then(|m| m.rounding).unwrap_or(rounding);
    let mut inst = Instance::from_nodes(
        name,
        rows.iter().map(|r| (r[1], r[2])).collect(),
        rows.iter().map(|r| r[3]).collect(),
        rows.iter().map(|r| (r[4], r[5])).collect(),
        rows.iter().map(|r| r[6]).collect(),
        rounding,
    )?;
    if let Some(m) = maint {
        inst.set_maintenance(m.nodes, m.p)?;
        inst.cr = m.cr;
    }
    Ok(inst)
}

pub fn load_instance(path: &Path, rounding: Rounding) -> Result<Instance> {
    let text = std::fs::read_to_string(path)?;
    let mut inst = parse_instance(&text, rounding)?;
    if inst.name == "unnamed" {
        if let Some(stem) = path.file_name().and_then(|s| s.to_str()) {
            inst.name = stem.to_string();
        }
    }
    Ok(inst)
}

/// Random instance in the Gendreau/Dumas style: integer coordinates in
/// `[0, 50]^2`, and windows of width `width` placed around the arrival times of
/// a random reference tour, so the instance is feasible by construction.
pub fn generate_instance(name: &str, n: usize, width: f64, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = n + 1;
    let coords: Vec<(f64, f64)> = (0..size)
        .map(|_| (rng.random_range(0..=50) as f64, rng.random_range(0..=50) as f64))
        .collect();
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(&mut rng);

    let dist = |i: usize, j: usize| {
        let dx = coords[i].0 - coords[j].0;
        let dy = coords[i].1 - coords[j].1;
        (dx * dx + dy * dy).sqrt()
    };
    let mut tw = vec![(0.0, 0.0); size];
    let mut t = 0.0;
    let mut prev = 0;
    for &c in &order {
        t += dist(prev, c);
        let shift: f64 = rng.random_range(0.0..1.0) * width;
        let e = (t - shift).max(0.0).floor();
        tw[c] = (e, e + width);
        prev = c;
    }
    t += dist(prev, 0);
    tw[0] = (0.0, (t + 4.0 * width).ceil().max(1000.0));
    Instance::from_nodes(
        name,
        coords,
        vec![0.0; size],
        tw,
        vec![0.0; size],
        Rounding::None,
    )
    .expect("generated instance is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PMedianMethod {
    Exact,
    GreedyInterchange,
}

/// Sum over customers of the distance to the nearest selected node.
pub fn p_median_objective(instance: &Instance, set: &[usize]) -> f64 {
    instance
        .customers()
        .map(|j| {
            set.iter()
                .map(|&i| instance.base_distance(j, i))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

const EXACT_BUDGET: f64 = 1e7;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Choose `p` maintenance-capable customers by the p-median criterion.
pub fn select_maintenance_nodes(
    instance: &Instance,
    p: usize,
    method: PMedianMethod,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = instance.n;
    if p == 0 || p > n {
        return Err(Error::InvalidInput(format!("need 1 <= p <= n ({n}), got {p}")));
    }
    match method {
        PMedianMethod::Exact => {
            let work = n as f64 * binomial(n, p);
            if work > EXACT_BUDGET {
                return Err(Error::Budget(format!(
                    "exact p-median needs n*C(n,p) = {work:.0} > {EXACT_BUDGET:.0}"
                )));
            }
            Ok(exact_p_median(instance, p))
        }
        PMedianMethod::GreedyInterchange => Ok(greedy_interchange(instance, p, &[], seed).0),
    }
}

fn exact_p_median(instance: &Instance, p: usize) -> Vec<usize> {
    let n = instance.n;
    let mut comb: Vec<usize> = (1..=p).collect();
    let mut best = comb.clone();
    let mut best_obj = p_median_objective(instance, &comb);
    loop {
        // next combination in lexicographic order
        let mut i = p;
        while i > 0 && comb[i - 1] == n - p + i {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        comb[i - 1] += 1;
        for k in i..p {
            comb[k] = comb[k - 1] + 1;
        }
        let obj = p_median_objective(instance, &comb);
        if obj < best_obj - 1e-12 {
            best_obj = obj;
            best = comb.clone();
        }
    }
    best
}

/// Greedy add from `fixed`, then first-improvement single swaps of non-fixed
/// members. Returns the sorted set and the objective after each accepted swap.
fn greedy_interchange(
    instance: &Instance,
    p: usize,
    fixed: &[usize],
    seed: u64,
) -> (Vec<usize>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<usize> = instance.customers().collect();
    candidates.shuffle(&mut rng);

    let mut set: Vec<usize> = fixed.to_vec();
    while set.len() < p {
        let mut best: Option<(usize, f64)> = None;
        for &c in &candidates {
            if set.contains(&c) {
                continue;
            }
            set.push(c);
            let obj = p_median_objective(instance, &set);
            set.pop();
            if best.is_none_or(|(_, b)| obj < b - 1e-12) {
                best = Some((c, obj));
            }
        }
        set.push(best.expect("p <= n leaves a candidate").0);
    }

    let mut trace = vec![p_median_objective(instance, &set)];
    'outer: loop {
        let current = *trace.last().unwrap();
        for pos in fixed.len()..set.len() {
            for &c in &candidates {
                if set.contains(&c) {
                    continue;
                }
                let old = set[pos];
                set[pos] = c;
                let obj = p_median_objective(instance, &set);
                if obj < current - 1e-12 {
                    trace.push(obj);
                    continue 'outer;
                }
                set[pos] = old;
            }
        }
        break;
    }
    set.sort_unstable();
    (set, trace)
}

/// Nested maintenance-node sets for increasing `ps`: the smallest set is a
/// p-median solution and every larger set extends the previous one greedily
/// (with interchange restricted to the newly added members).
pub fn nested_maintenance_sets(
    instance: &Instance,
    ps: &[usize],
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let mut sorted = ps.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("duplicate p in sweep".into()));
    }
    let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut prev: Vec<usize> = Vec::new();
    for &p in &sorted {
        if p == 0 || p > instance.n {
            return Err(Error::InvalidInput(format!("p = {p} outside 1..={}", instance.n)));
        }
        let set = if prev.is_empty() {
            let method = if instance.n as f64 * binomial(instance.n, p) <= EXACT_BUDGET {
                PMedianMethod::Exact
            } else {
                PMedianMethod::GreedyInterchange
            };
            select_maintenance_nodes(instance, p, method, seed)?
        } else {
            greedy_interchange(instance, p, &prev, seed).0
        };
        prev = set.clone();
        out.push((p, set));
    }
    // restore caller order
    Ok(ps
        .iter()
        .map(|p| out.iter().find(|(q, _)| q == p).unwrap().1.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = "\
!! line3
CUST NO.  XCOORD.  YCOORD.  DEMAND  READY TIME  DUE DATE  SERVICE TIME
0 0 0 0 0 1000 0
1 1 0 0 0 10 0
2 2 0 0 0 10 0
999 0 0 0 0 1000 0
";

    #[test]
    fn collinear_distances() {
        let inst = parse_instance(LINE, Rounding::None).unwrap();
        assert_eq!(inst.name, "line3");
        assert_eq!(inst.n, 2);
        assert_eq!(inst.d[0][2], 2.0);
        assert_eq!(inst.cr, 0.72);
    }

    #[test]
    fn service_time_folds_into_outgoing_arcs() {
        let text = "0 0 0 0 0 100 0\n1 3 4 1 0 100 7\n";
        let inst = parse_instance(text, Rounding::None).unwrap();
        assert_eq!(inst.d[1][0], 12.0);
        assert_eq!(inst.d[0][1], 5.0);
        assert_eq!(inst.base_distance(1, 0), 5.0);
    }

    #[test]
    fn rounding_modes() {
        let text = "0 0 0 0 0 100 0\n1 1 1 0 0 100 0\n";
        let d = |r| parse_instance(text, r).unwrap().d[0][1];
        assert_eq!(d(Rounding::None), 2f64.sqrt());
        assert_eq!(d(Rounding::OneDecimal), 1.4);
        assert_eq!(d(Rounding::IntegerTruncate), 1.0);
    }

    #[test]
    fn malformed_rows_report_line() {
        let bad = "0 0 0 0 0 100 0\n1 1 x 0 0 100 0\n";
        match parse_instance(bad, Rounding::None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let skip = "0 0 0 0 0 100 0\n2 1 1 0 0 100 0\n";
        assert!(matches!(parse_instance(skip, Rounding::None), Err(Error::Parse { line: 2, .. })));
        let short = "0 0 0 0 0 100\n";
        assert!(matches!(parse_instance(short, Rounding::None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn inverted_window_is_validation_error() {
        let text = "0 0 0 0 0 100 0\n1 1 1 0 50 10 0\n";
        assert!(matches!(parse_instance(text, Rounding::None), Err(Error::Validation(_))));
    }

    #[test]
    fn maint_nodes_must_be_customers() {
        let inst = parse_instance(LINE, Rounding::None).unwrap();
        assert!(inst.clone().with_maintenance(vec![0], 1.0).is_err());
        assert!(inst.clone().with_maintenance(vec![3], 1.0).is_err());
        assert!(inst.with_maintenance(vec![2, 1], 1.0).is_ok());
    }

    #[test]
    fn generated_instance_is_symmetric_and_metric() {
        let inst = generate_instance("g", 12, 100.0, 5);
        assert_eq!(inst.node_count(), 13);
        for i in 0..13 {
            assert_eq!(inst.d[i][i], 0.0);
            for j in 0..13 {
                assert_eq!(inst.d[i][j], inst.d[j][i]);
            }
        }
        assert_eq!(inst.triangle_violations(1e-9), 0);
    }

    #[test]
    fn p_equals_n_selects_everything() {
        let inst = generate_instance("g", 6, 50.0, 1);
        for method in [PMedianMethod::Exact, PMedianMethod::GreedyInterchange] {
            let s = select_maintenance_nodes(&inst, 6, method, 0).unwrap();
            assert_eq!(s, vec![1, 2, 3, 4, 5, 6]);
            assert_eq!(p_median_objective(&inst, &s), 0.0);
        }
        assert!(select_maintenance_nodes(&inst, 7, PMedianMethod::Exact, 0).is_err());
    }

    #[test]
    fn square_corners_single_median() {
        let text = "0 0.5 0.5 0 0 10 0\n1 0 0 0 0 10 0\n2 1 0 0 0 10 0\n3 1 1 0 0 10 0\n4 0 1 0 0 10 0\n";
        let inst = parse_instance(text, Rounding::None).unwrap();
        let s = select_maintenance_nodes(&inst, 1, PMedianMethod::Exact, 0).unwrap();
        assert_eq!(s.len(), 1);
        let obj = p_median_objective(&inst, &s);
        assert!((obj - (2.0 + 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn exact_budget_error() {
        let inst = generate_instance("g", 40, 100.0, 2);
        assert!(matches!(
            select_maintenance_nodes(&inst, 10, PMedianMethod::Exact, 0),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn interchange_trace_nonincreasing() {
        let inst = generate_instance("g", 25, 100.0, 3);
        let (_, trace) = greedy_interchange(&inst, 4, &[], 11);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nested_sets_extend() {
        let inst = generate_instance("g", 20, 100.0, 4);
        let sets = nested_maintenance_sets(&inst, &[1, 2, 3, 5, 7], 1).unwrap();
        for w in sets.windows(2) {
            assert!(w[0].iter().all(|x| w[1].contains(x)));
        }
        assert_eq!(sets.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![1, 2, 3, 5, 7]);
    }
}
