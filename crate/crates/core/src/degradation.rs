//! Degradation signal model, conjugate Bayesian update and Monte-Carlo
//! remaining-life prediction.
//!
//! The signal follows `ln(D(t) - phi) = a + b t + sigma W(t)` with `W` a
//! standard Brownian motion started at zero. The pair `(a, b)` is the
//! vehicle-specific parameter; it carries a bivariate normal prior. Because
//! Brownian increments are independent, the likelihood of a history factors
//! over increments and the posterior stays bivariate normal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-linear degradation model with a hard failure threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationModel {
    /// Deterministic floor of the signal; `D(t) > offset_phi` always.
    pub offset_phi: f64,
    /// Standard deviation of the Brownian log-error per unit sqrt-time.
    pub noise_sigma: f64,
    /// Failure threshold on the signal amplitude.
    pub threshold: f64,
}

impl DegradationModel {
    pub fn new(offset_phi: f64, noise_sigma: f64, threshold: f64) -> Result<Self> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "noise_sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        if !(threshold > offset_phi) {
            return Err(Error::InvalidInput(format!(
                "threshold {threshold} must exceed offset {offset_phi}"
            )));
        }
        Ok(Self {
            offset_phi,
            noise_sigma,
            threshold,
        })
    }

    /// `ln(amplitude - phi)`, the signal on the scale where it is affine in time.
    pub fn log_gap(&self, amplitude: f64) -> Result<f64> {
        if !(amplitude > self.offset_phi) {
            return Err(Error::InvalidInput(format!(
                "amplitude {amplitude} must exceed offset {}",
                self.offset_phi
            )));
        }
        Ok((amplitude - self.offset_phi).ln())
    }

    pub fn amplitude(&self, log_gap: f64) -> f64 {
        self.offset_phi + log_gap.exp()
    }

    pub fn log_threshold(&self) -> f64 {
        (self.threshold - self.offset_phi).ln()
    }
}

/// 2x2 symmetric matrix helpers. Kept local; nothing here needs a linear
/// algebra crate.
pub(crate) mod sym2 {
    pub type M2 = [[f64; 2]; 2];

    pub fn det(m: &M2) -> f64 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn is_spd(m: &M2) -> bool {
        let sym = (m[0][1] - m[1][0]).abs() <= 1e-12 * (m[0][1].abs() + m[1][0].abs()).max(1e-300);
        sym && m[0][0] > 0.0 && det(m) > 0.0 && m.iter().flatten().all(|x| x.is_finite())
    }

    pub fn inverse(m: &M2) -> M2 {
        let d = det(m);
        [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
    }

    pub fn mul_vec(m: &M2, v: [f64; 2]) -> [f64; 2] {
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    /// Lower Cholesky factor of an SPD matrix.
    pub fn cholesky(m: &M2) -> M2 {
        let l00 = m[0][0].sqrt();
        let l10 = m[1][0] / l00;
        let l11 = (m[1][1] - l10 * l10).max(0.0).sqrt();
        [[l00, 0.0], [l10, l11]]
    }
}

/// Bivariate normal prior on `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPrior {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl ThetaPrior {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let p = Self { mean, cov };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !sym2::is_spd(&self.cov) {
            return Err(Error::InvalidInput(format!(
                "prior covariance {:?} is not symmetric positive definite",
                self.cov
            )));
        }
        Ok(())
    }

    /// Draw one parameter vector.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        sample_bivariate(self.mean, &self.cov, rng)
    }
}

fn sample_bivariate<R: Rng>(mean: [f64; 2], cov: &sym2::M2, rng: &mut R) -> [f64; 2] {
    let l = sym2::cholesky(cov);
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    [mean[0] + l[0][0] * z0, mean[1] + l[1][0] * z0 + l[1][1] * z1]
}

/// Time-ordered signal observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalHistory {
    observations: Vec<(f64, f64)>,
}

impl SignalHistory {
    pub fn new(observations: Vec<(f64, f64)>) -> Result<Self> {
        for w in observations.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidInput(format!(
                    "observation times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(Self { observations })
    }

    pub fn observations(&self) -> &[(f64, f64)] {
        &self.observations
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Time of the last observation, zero for an empty history.
    pub fn t_o(&self) -> f64 {
        self.observations.last().map_or(0.0, |o| o.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPosterior {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    /// `(t_o, D(t_o))` the forward simulation starts from. `None` means no
    /// observation: paths start at `t = 0` from `ln(D(0) - phi) = a`.
    pub conditioned: Option<(f64, f64)>,
}

impl ThetaPosterior {
    pub fn from_prior(prior: &ThetaPrior) -> Self {
        Self {
            mean: prior.mean,
            cov: prior.cov,
            conditioned: None,
        }
    }

    pub fn t_o(&self) -> f64 {
        self.conditioned.map_or(0.0, |c| c.0)
    }
}

/// Exact conjugate posterior of `(a, b)` given a signal history.
///
/// The first observation contributes `y_1 = a + b t_1 + sigma W(t_1)`, each
/// later one the independent increment `y_j - y_{j-1} = b dt + sigma dW`.
pub fn posterior_update(
    prior: &ThetaPrior,
    history: &SignalHistory,
    model: &DegradationModel,
) -> Result<ThetaPosterior> {
    prior.validate()?;
    if history.is_empty() {
        return Ok(ThetaPosterior::from_prior(prior));
    }
    let obs = history.observations();
    if obs[0].0 <= 0.0 {
        return Err(Error::InvalidInput(
            "first observation must be at t > 0 (the log-error is pinned to zero at t = 0)".into(),
        ));
    }
    if model.noise_sigma <= 0.0 {
        return Err(Error::InvalidInput(
            "posterior update needs noise_sigma > 0".into(),
        ));
    }
    let var_rate = model.noise_sigma * model.noise_sigma;

    let mut precision = sym2::inverse(&prior.cov);
    let mut info = sym2::mul_vec(&precision, prior.mean);

    let mut prev: Option<(f64, f64)> = None;
    for &(t, d) in obs {
        let y = model.log_gap(d)?;
        let (row, z, var) = match prev {
            None => ([1.0, t], y, var_rate * t),
            Some((tp, yp)) => ([0.0, t - tp], y - yp, var_rate * (t - tp)),
        };
        for i in 0..2 {
            for j in 0..2 {
                precision[i][j] += row[i] * row[j] / var;
            }
            info[i] += row[i] * z / var;
        }
        prev = Some((t, y));
    }

    let cov = sym2::inverse(&precision);
    let mean = sym2::mul_vec(&cov, info);
    let last = *obs.last().unwrap();
    Ok(ThetaPosterior {
        mean,
        cov: [[cov[0][0], 0.5 * (cov[0][1] + cov[1][0])], [0.5 * (cov[0][1] + cov[1][0]), cov[1][1]]],
        conditioned: Some(last),
    })
}

/// Empirical remaining-life distribution from forward simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainingLifeDistribution {
    /// Samples in simulation order (sample `i` used stream `i`).
    samples: Vec<f64>,
    sorted: Vec<f64>,
    pub t_o: f64,
    pub horizon: f64,
    pub step: f64,
    /// Set when the conditioned amplitude was already at or above the threshold.
    pub already_failed: bool,
}

impl RemainingLifeDistribution {
    pub fn from_samples(samples: Vec<f64>, t_o: f64, horizon: f64, step: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty sample set".into()));
        }
        if samples.iter().any(|s| !(*s >= 0.0) || *s > horizon) {
            return Err(Error::InvalidInput(
                "remaining-life samples must lie in [0, horizon]".into(),
            ));
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            samples,
            sorted,
            t_o,
            horizon,
            step,
            already_failed: false,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Samples in ascending order.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of samples recorded at the horizon (never crossed).
    pub fn censored_fraction(&self) -> f64 {
        let c = self.sorted.iter().rev().take_while(|s| **s >= self.horizon).count();
        c as f64 / self.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }

    /// `P(R > t)`: fraction of samples strictly greater than `t`.
    pub fn survival(&self, t: f64) -> f64 {
        let at_most = self.sorted.partition_point(|s| *s <= t);
        (self.len() - at_most) as f64 / self.len() as f64
    }

    /// CSV export: `index,remaining_life`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,remaining_life\n");
        for (i, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{i},{s}\n"));
        }
        out
    }
}

/// Per-sample RNG: stream `index` of the ChaCha generator keyed by `seed`.
pub(crate) fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// First step index `k` at which the discretized path reaches `log_threshold`,
/// as `k * step`; `horizon` if it never does.
fn first_crossing<R: Rng>(
    start: f64,
    slope: f64,
    sigma: f64,
    log_threshold: f64,
    step: f64,
    horizon: f64,
    rng: &mut R,
) -> f64 {
    if start >= log_threshold {
        return 0.0;
    }
    let n_steps = (horizon / step + 1e-9).floor() as u64;
    let sd = sigma * step.sqrt();
    let mut noise = 0.0;
    for k in 1..=n_steps {
        if sd > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            noise += sd * z;
        }
        let t = k as f64 * step;
        if start + slope * t + noise >= log_threshold {
            return t;
        }
    }
    horizon
}

/// Monte-Carlo remaining-life distribution from the posterior.
///
/// Sample `i` draws its parameter from the posterior and simulates the path
/// forward from the conditioned amplitude using its own random stream, so the
/// result does not depend on how the work is split across threads.
pub fn simulate_rld(
    posterior: &ThetaPosterior,
    model: &DegradationModel,
    m_samples: usize,
    horizon: f64,
    step: f64,
    seed: u64,
) -> Result<RemainingLifeDistribution> {
    if m_samples == 0 {
        return Err(Error::InvalidInput("m_samples must be >= 1".into()));
    }
    if !(step > 0.0) || !(horizon >= step) {
        return Err(Error::InvalidInput(format!(
            "need step > 0 and horizon >= step (step {step}, horizon {horizon})"
        )));
    }
    if !sym2::is_spd(&posterior.cov) && posterior.cov.iter().flatten().any(|x| *x != 0.0) {
        return Err(Error::InvalidInput("posterior covariance is not SPD".into()));
    }
    let log_threshold = model.log_threshold();
    let start = match posterior.conditioned {
        Some((_, amp)) => Some(model.log_gap(amp)?),
        None => None,
    };
    if let Some(y0) = start {
        if y0 >= log_threshold {
            let mut rld = RemainingLifeDistribution::from_samples(
                vec![0.0; m_samples],
                posterior.t_o(),
                horizon,
                step,
            )?;
            rld.already_failed = true;
            return Ok(rld);
        }
    }

    let point_mass = posterior.cov.iter().flatten().all(|x| *x == 0.0);
    let samples: Vec<f64> = (0..m_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let theta = if point_mass {
                posterior.mean
            } else {
                sample_bivariate(posterior.mean, &posterior.cov, &mut rng)
            };
            let y0 = start.unwrap_or(theta[0]);
            first_crossing(
                y0,
                theta[1],
                model.noise_sigma,
                log_threshold,
                step,
                horizon,
                &mut rng,
            )
        })
        .collect();
    RemainingLifeDistribution::from_samples(samples, posterior.t_o(), horizon, step)
}

/// `P(R > t)` for a remaining-life distribution.
pub fn survival(rld: &RemainingLifeDistribution, t: f64) -> f64 {
    rld.survival(t)
}

/// One failure time after `t_o` from the true parameters.
///
/// With zero noise the crossing is returned in closed form (no grid). Paths
/// that do not cross within `horizon` return `horizon`.
pub fn sample_true_failure(
    model: &DegradationModel,
    true_theta: [f64; 2],
    amplitude_at_to: f64,
    step: f64,
    horizon: f64,
    seed: u64,
) -> Result<f64> {
    let y0 = model.log_gap(amplitude_at_to)?;
    let target = model.log_threshold();
    if y0 >= target {
        return Err(Error::InvalidInput(format!(
            "amplitude {amplitude_at_to} already at or above the threshold"
        )));
    }
    let slope = true_theta[1];
    if model.noise_sigma == 0.0 {
        if slope <= 0.0 {
            return Ok(horizon);
        }
        return Ok(((target - y0) / slope).min(horizon));
    }
    let mut rng = stream_rng(seed, 0);
    Ok(first_crossing(
        y0,
        slope,
        model.noise_sigma,
        target,
        step,
        horizon,
        &mut rng,
    ))
}

/// Total lifetime from `t = 0` (where `ln(D(0) - phi) = a`).
pub fn sample_lifetime(
    model: &DegradationModel,
    theta: [f64; 2],
    step: f64,
    horizon: f64,
    seed: u64,
) -> Result<f64> {
    sample_true_failure(model, theta, model.amplitude(theta[0]), step, horizon, seed)
}

/// Simulated signal values at the given times for a known parameter vector,
/// using the Brownian path keyed by `seed`.
pub fn simulate_history<R: Rng>(
    model: &DegradationModel,
    theta: [f64; 2],
    times: &[f64],
    rng: &mut R,
) -> Vec<(f64, f64)> {
    let mut w = 0.0;
    let mut prev_t = 0.0;
    times
        .iter()
        .map(|&t| {
            let z: f64 = rng.sample(StandardNormal);
            w += (t - prev_t).max(0.0).sqrt() * z;
            prev_t = t;
            let y = theta[0] + theta[1] * t + model.noise_sigma * w;
            (t, model.amplitude(y))
        })
        .collect()
}

/// Mean lifetime of vehicles whose parameters are drawn from `prior`.
/// Draw `i` uses stream `i`, so the estimate is a smooth, monotone function of
/// the prior slope mean for a fixed seed (common random numbers).
pub fn mean_lifetime(
    model: &DegradationModel,
    prior: &ThetaPrior,
    n: usize,
    step: f64,
    horizon: f64,
    seed: u64,
) -> f64 {
    let log_threshold = model.log_threshold();
    let total: f64 = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let theta = prior.sample(&mut rng);
            first_crossing(
                theta[0],
                theta[1],
                model.noise_sigma,
                log_threshold,
                step,
                horizon,
                &mut rng,
            )
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / n as f64
}

/// Bisection on the prior slope mean so that the fleet mean lifetime hits
/// `target`. Returns the calibrated slope mean.
pub fn calibrate_slope_mean(
    model: &DegradationModel,
    prior: &ThetaPrior,
    target: f64,
    n: usize,
    step: f64,
    horizon: f64,
    seed: u64,
) -> f64 {
    let mut lo = prior.mean[1] * 0.25;
    let mut hi = prior.mean[1] * 4.0;
    let life = |b: f64| {
        let p = ThetaPrior {
            mean: [prior.mean[0], b],
            cov: prior.cov,
        };
        mean_lifetime(model, &p, n, step, horizon, seed)
    };
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        // larger slope, shorter life
        if life(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Calibrated defaults: mean lifetime about 125 time units.
pub mod defaults {
    use super::{DegradationModel, ThetaPrior};

    pub const OFFSET_PHI: f64 = 0.2;
    pub const THRESHOLD: f64 = 1.0;
    pub const NOISE_SIGMA: f64 = 0.02;
    pub const PRIOR_A_MEAN: f64 = -3.0;
    pub const PRIOR_A_VAR: f64 = 0.04;
    pub const PRIOR_B_VAR: f64 = 1e-6;
    /// Output of `calibrate_slope_mean` with target 125, 10^4 draws,
    /// step 0.25, horizon 500, seed 2024.
    pub const PRIOR_B_MEAN: f64 = 0.0223197031;
    pub const TARGET_MEAN_LIFE: f64 = 125.0;

    /// Slope variance of the heterogeneous fleet: 31.5% of lifetimes end by
    /// age 106, the middle of the periodic-maintenance window.
    pub const FLEET_B_VAR: f64 = 2.45e-5;
    /// Slope mean recalibrated for `FLEET_B_VAR` (same settings as above).
    pub const FLEET_B_MEAN: f64 = 0.0234387870;

    pub fn model() -> DegradationModel {
        DegradationModel {
            offset_phi: OFFSET_PHI,
            noise_sigma: NOISE_SIGMA,
            threshold: THRESHOLD,
        }
    }

    pub fn prior() -> ThetaPrior {
        ThetaPrior {
            mean: [PRIOR_A_MEAN, PRIOR_B_MEAN],
            cov: [[PRIOR_A_VAR, 0.0], [0.0, PRIOR_B_VAR]],
        }
    }

    /// Prior used for policy simulation.
    pub fn fleet_prior() -> ThetaPrior {
        ThetaPrior {
            mean: [PRIOR_A_MEAN, FLEET_B_MEAN],
            cov: [[PRIOR_A_VAR, 0.0], [0.0, FLEET_B_VAR]],
        }
    }
}
