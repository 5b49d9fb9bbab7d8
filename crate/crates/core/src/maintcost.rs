//! Dynamic maintenance cost-rate curve and its tangent lower envelope.
//!
//! For maintenance planned `t` time units after the last observation at
//! `t_o`, the long-run cost rate is
//!
//! ```text
//!            P(R > t) cp + P(R < t) cf
//! f(t) = ---------------------------------
//!          int_0^t P(R > z) dz  +  t_o
//! ```
//!
//! where `R` is the remaining life. The curve is sampled on a uniform grid and
//! linearly interpolated between grid points.

use serde::{Deserialize, Serialize};

use crate::degradation::RemainingLifeDistribution;
use crate::error::{Error, Result};

/// Slack for floating-point comparisons against the grid ends.
const GRID_EPS: f64 = 1e-9;

/// Default grid resolution.
pub const DEFAULT_GRID_STEP: f64 = 0.25;
/// Envelope validity tolerance.
pub const TOL_ENVELOPE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Preventive maintenance cost.
    pub cp: f64,
    /// Failure (corrective) cost, disruption included.
    pub cf: f64,
    pub t_o: f64,
}

impl CostParams {
    pub fn new(cp: f64, cf: f64, t_o: f64) -> Result<Self> {
        if !(cp > 0.0 && cf > cp) {
            return Err(Error::InvalidInput(format!(
                "need 0 < cp < cf, got cp={cp}, cf={cf}"
            )));
        }
        if !(t_o >= 0.0) {
            return Err(Error::InvalidInput(format!("t_o must be >= 0, got {t_o}")));
        }
        Ok(Self { cp, cf, t_o })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
    /// `int_0^t P(R > z) dz` at each grid point; empty for curves built from
    /// raw values.
    cum_survival_integral: Vec<f64>,
    pub t_min: f64,
    pub lambda_min: f64,
}

impl CostCurve {
    /// Curve from explicit samples. The grid must be strictly increasing and
    /// all values positive.
    pub fn from_values(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::assemble(grid, values, Vec::new())
    }

    fn assemble(grid: Vec<f64>, values: Vec<f64>, cum: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(Error::InvalidInput(
                "curve grid and values must be non-empty and of equal length".into(),
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("curve grid must be strictly increasing".into()));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("curve values must be finite and positive".into()));
        }
        let mut best = 0;
        for (i, v) in values.iter().enumerate() {
            if *v < values[best] {
                best = i;
            }
        }
        Ok(Self {
            t_min: grid[best],
            lambda_min: values[best],
            grid,
            values,
            cum_survival_integral: cum,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cum_survival_integral(&self) -> &[f64] {
        &self.cum_survival_integral
    }

    pub fn t_start(&self) -> f64 {
        self.grid[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start() - GRID_EPS && t <= self.t_end() + GRID_EPS
    }

    /// Index `i` with `grid[i] <= t < grid[i+1]`, clamped to the last segment.
    fn segment(&self, t: f64) -> usize {
        let n = self.grid.len();
        if n == 1 {
            return 0;
        }
        let i = self.grid.partition_point(|g| *g <= t);
        i.saturating_sub(1).min(n - 2)
    }

    /// Interpolated value; exact at grid points.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !self.contains(t) {
            return Err(Error::OutOfRange {
                t,
                lo: self.t_start(),
                hi: self.t_end(),
            });
        }
        Ok(self.eval_clamped(t))
    }

    pub(crate) fn eval_clamped(&self, t: f64) -> f64 {
        let n = self.grid.len();
        if n == 1 {
            return self.values[0];
        }
        let t = t.clamp(self.t_start(), self.t_end());
        let i = self.segment(t);
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        if t == t0 {
            return self.values[i];
        }
        if t == t1 {
            return self.values[i + 1];
        }
        let w = (t - t0) / (t1 - t0);
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }

    /// Grid indices strictly inside `(lo, hi)`.
    pub(crate) fn interior(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let a = self.grid.partition_point(|g| *g <= lo);
        let b = self.grid.partition_point(|g| *g < hi);
        a..b.max(a)
    }

    /// CSV export `t,f,survival_integral`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,f,survival_integral\n");
        for i in 0..self.grid.len() {
            let cum = self
                .cum_survival_integral
                .get(i)
                .map_or(String::new(), |c| format!("{c}"));
            out.push_str(&format!("{},{},{}\n", self.grid[i], self.values[i], cum));
        }
        out
    }
}

/// Sample the cost-rate curve on `[0, grid_max]` (from `grid_step` when
/// `t_o = 0`, where the denominator vanishes at zero).
///
/// The survival integral is exact for the empirical distribution:
/// `int_0^t S(z) dz = mean(min(r_i, t))`.
pub fn build_cost_curve(
    rld: &RemainingLifeDistribution,
    params: &CostParams,
    grid_step: f64,
    grid_max: f64,
) -> Result<CostCurve> {
    if !(grid_step > 0.0) || !(grid_max >= grid_step) {
        return Err(Error::InvalidInput(format!(
            "need grid_step > 0 and grid_max >= grid_step (got {grid_step}, {grid_max})"
        )));
    }
    let m = rld.len() as f64;
    let sorted = rld.sorted();
    let n_points = (grid_max / grid_step + GRID_EPS).floor() as usize;
    let first = if params.t_o > 0.0 { 0 } else { 1 };

    let mut grid = Vec::with_capacity(n_points + 1);
    let mut values = Vec::with_capacity(n_points + 1);
    let mut cum = Vec::with_capacity(n_points + 1);

    // running sum of samples <= t
    let mut idx = 0usize;
    let mut below_sum = 0.0;
    for k in first..=n_points {
        let t = k as f64 * grid_step;
        while idx < sorted.len() && sorted[idx] <= t {
            below_sum += sorted[idx];
            idx += 1;
        }
        let above = (sorted.len() - idx) as f64;
        let surv = above / m;
        let integral = (below_sum + t * above) / m;
        let value = (surv * params.cp + (1.0 - surv) * params.cf) / (integral + params.t_o);
        grid.push(t);
        values.push(value);
        cum.push(integral);
    }
    CostCurve::assemble(grid, values, cum)
}

/// Interpolated value at `t`.
pub fn eval_cost(curve: &CostCurve, t: f64) -> Result<f64> {
    curve.eval(t)
}

/// `(min, max)` of the interpolated curve over `[lo, hi]`.
///
/// The interpolant is piecewise linear, so its extrema over an interval are
/// attained at the ends or at interior grid points; all of them are scanned.
pub fn interval_cost_bounds(curve: &CostCurve, lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let a = curve.eval_clamped(lo);
    let b = curve.eval_clamped(hi);
    let mut g_lo = a.min(b);
    let mut g_hi = a.max(b);
    for &v in &curve.values[curve.interior(lo, hi)] {
        g_lo = g_lo.min(v);
        g_hi = g_hi.max(v);
    }
    (g_lo, g_hi)
}

/// Piecewise-linear lower bound `max_k (intercept_k + slope_k t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentEnvelope {
    /// `(intercept, slope)` per line.
    pub lines: Vec<(f64, f64)>,
    pub anchors: Vec<f64>,
    /// Set when the curve failed the numerical convexity check on the range.
    pub convexity_warning: bool,
    /// Largest downward shift applied to any line.
    pub max_shift: f64,
}

impl TangentEnvelope {
    pub fn eval(&self, t: f64) -> f64 {
        self.lines
            .iter()
            .map(|(l, s)| l + s * t)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Abscissae where the upper envelope of the lines changes slope, sorted.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.lines.len() {
            for j in i + 1..self.lines.len() {
                let (l1, s1) = self.lines[i];
                let (l2, s2) = self.lines[j];
                if (s1 - s2).abs() > 0.0 {
                    let t = (l2 - l1) / (s1 - s2);
                    let v = l1 + s1 * t;
                    if t.is_finite() && v >= self.eval(t) - 1e-9 * v.abs().max(1.0) {
                        out.push(t);
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// Tangent lines at `k_lines` equally spaced anchors in `range`, each shifted
/// down by its largest violation over the whole grid so the envelope is a
/// valid lower bound everywhere the curve is defined.
pub fn build_tangent_envelope(
    curve: &CostCurve,
    k_lines: usize,
    range: (f64, f64),
    tol_convex: f64,
) -> Result<TangentEnvelope> {
    if k_lines == 0 {
        return Err(Error::InvalidInput("k_lines must be >= 1".into()));
    }
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    if !curve.contains(lo) || !curve.contains(hi) {
        return Err(Error::OutOfRange {
            t: if curve.contains(lo) { hi } else { lo },
            lo: curve.t_start(),
            hi: curve.t_end(),
        });
    }
    let grid = &curve.grid;
    let vals = &curve.values;
    let n = grid.len();

    let mut convexity_warning = false;
    let start = grid.partition_point(|g| *g < lo).max(1);
    let end = grid.partition_point(|g| *g <= hi).min(n - 1);
    for i in start..end {
        let h0 = grid[i] - grid[i - 1];
        let h1 = grid[i + 1] - grid[i];
        let second = (vals[i + 1] - vals[i]) / h1 - (vals[i] - vals[i - 1]) / h0;
        if second * 0.5 * (h0 + h1) < -tol_convex {
            convexity_warning = true;
            break;
        }
    }

    let anchors: Vec<f64> = if k_lines == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..k_lines)
            .map(|k| lo + (hi - lo) * k as f64 / (k_lines - 1) as f64)
            .collect()
    };

    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut lines = Vec::with_capacity(k_lines);
    let mut max_shift = 0.0f64;
    for &h in &anchors {
        let slope = if n == 1 {
            0.0
        } else {
            let j = nearest_index(grid, h);
            let (a, b) = if j == 0 {
                (0, 1)
            } else if j == n - 1 {
                (n - 2, n - 1)
            } else {
                (j - 1, j + 1)
            };
            (vals[b] - vals[a]) / (grid[b] - grid[a])
        };
        let mut intercept = curve.eval_clamped(h) - slope * h;
        let violation = grid
            .iter()
            .zip(vals)
            .map(|(t, f)| intercept + slope * t - f)
            .fold(0.0f64, f64::max);
        if violation > 0.0 {
            intercept -= violation + 1e-12 * scale;
            max_shift = max_shift.max(violation);
        }
        lines.push((intercept, slope));
    }

    Ok(TangentEnvelope {
        lines,
        anchors,
        convexity_warning,
        max_shift,
    })
}

fn nearest_index(grid: &[f64], t: f64) -> usize {
    let i = grid.partition_point(|g| *g < t);
    if i == 0 {
        0
    } else if i == grid.len() {
        grid.len() - 1
    } else if (grid[i] - t) < (t - grid[i - 1]) {
        i
    } else {
        i - 1
    }
}

pub fn envelope_lower_bound(env: &TangentEnvelope, t: f64) -> f64 {
    env.eval(t)
}
