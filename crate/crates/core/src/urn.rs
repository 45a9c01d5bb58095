//! The PoS protocol without trading: a time-dependent Pólya urn.
//!
//! At step `t` one miner is drawn with probability equal to its share at
//! `t - 1` and receives the reward `R_t`; every other miner is unchanged and
//! the volume grows by `R_t`.

use alloc::format;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{invalid, Error, Result, Violations};
use crate::gamma::sample_log_gamma;
use crate::rng::{substream, uniform};

/// Relative tolerance for share and volume bookkeeping checks.
pub const SHARE_TOL: f64 = 1e-9;

/// Per-step block reward rule.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum RewardSchedule {
    /// `R_t = reward`.
    Constant { reward: f64 },
    /// `R_t = limit + (initial - limit) * exp(-rate * t)`.
    ///
    /// One concrete member of the nonincreasing-with-positive-limit class.
    DecreasingToLimit { initial: f64, limit: f64, rate: f64 },
    /// `R_t = scale * (t + 1)^(-exponent)`.
    PowerDecay { scale: f64, exponent: f64 },
    /// `R_t = rho * N_{t-1}^gamma`.
    Geometric { rho: f64, gamma: f64 },
}

impl RewardSchedule {
    pub fn validate(&self) -> Result<()> {
        let mut v = Violations::new();
        self.collect_violations(&mut v);
        v.into_result()
    }

    pub fn violations(&self) -> Vec<Error> {
        let mut v = Violations::new();
        self.collect_violations(&mut v);
        v.into_vec()
    }

    fn collect_violations(&self, v: &mut Violations) {
        match *self {
            RewardSchedule::Constant { reward } => v.positive("reward", reward),
            RewardSchedule::DecreasingToLimit {
                initial,
                limit,
                rate,
            } => {
                v.positive("initial", initial);
                v.positive("rate", rate);
                v.check(
                    limit >= 0.0 && limit <= initial,
                    "limit",
                    "must lie in [0, initial]",
                );
            }
            RewardSchedule::PowerDecay { scale, exponent } => {
                v.positive("scale", scale);
                v.positive("exponent", exponent);
            }
            RewardSchedule::Geometric { rho, gamma } => {
                v.positive("rho", rho);
                v.positive("gamma", gamma);
            }
        }
    }

    /// Reward `R_t` paid at step `t >= 1` given the previous volume `N_{t-1}`.
    pub fn reward_at(&self, t: u64, prev_volume: f64) -> Result<f64> {
        let r = match *self {
            RewardSchedule::Constant { reward } => reward,
            RewardSchedule::DecreasingToLimit {
                initial,
                limit,
                rate,
            } => limit + (initial - limit) * libm::exp(-rate * t as f64),
            RewardSchedule::PowerDecay { scale, exponent } => {
                scale * libm::pow(t as f64 + 1.0, -exponent)
            }
            RewardSchedule::Geometric { rho, gamma } => rho * libm::pow(prev_volume, gamma),
        };
        if !r.is_finite() {
            return Err(Error::Overflow { step: t, value: r });
        }
        Ok(r)
    }
}

/// Coin holdings of all miners at one step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChainState {
    pub t: u64,
    pub coins: Vec<f64>,
    pub volume: f64,
}

impl ChainState {
    /// Initial state at `t = 0`; the volume is the sum of `coins`.
    pub fn new(coins: Vec<f64>) -> Result<Self> {
        if coins.is_empty() {
            return Err(Error::EmptyInput);
        }
        if coins.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(invalid("coins", "holdings must be finite and nonnegative"));
        }
        let volume: f64 = coins.iter().sum();
        if !(volume > 0.0) {
            return Err(invalid("coins", "total volume must be positive"));
        }
        Ok(Self {
            t: 0,
            coins,
            volume,
        })
    }

    pub fn miners(&self) -> usize {
        self.coins.len()
    }

    pub fn share(&self, k: usize) -> f64 {
        self.coins[k] / self.volume
    }

    pub fn shares(&self) -> Vec<f64> {
        self.coins.iter().map(|c| c / self.volume).collect()
    }

    /// Advances one step in place and returns the winner.
    pub fn advance<R: RngCore + ?Sized>(
        &mut self,
        schedule: &RewardSchedule,
        rng: &mut R,
    ) -> Result<usize> {
        let t = self.t + 1;
        let reward = schedule.reward_at(t, self.volume)?;
        let winner = pick(&self.coins, self.volume, uniform(rng));
        self.coins[winner] += reward;
        self.volume += reward;
        self.t = t;
        Ok(winner)
    }
}

/// Inverse-CDF categorical draw on unnormalised `weights` summing to `total`:
/// the smallest `k` with `u * total < w_0 + ... + w_k`.
#[inline]
fn pick(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cum += w;
            last_positive = k;
            if target < cum {
                return k;
            }
        }
    }
    last_positive
}

/// Draws a miner index with probability `shares[k]`, consuming one uniform.
pub fn select_winner<R: RngCore + ?Sized>(shares: &[f64], rng: &mut R) -> Result<usize> {
    if shares.is_empty() {
        return Err(Error::InvalidDistribution("no categories".into()));
    }
    if let Some(k) = shares.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidDistribution(format!(
            "entry {k} is {} (must be finite and nonnegative)",
            shares[k]
        )));
    }
    let sum: f64 = shares.iter().sum();
    if (sum - 1.0).abs() > SHARE_TOL {
        return Err(Error::InvalidDistribution(format!(
            "shares sum to {sum}, not 1"
        )));
    }
    Ok(pick(shares, 1.0, uniform(rng)))
}

/// One urn step; the input state is left untouched.
pub fn step<R: RngCore + ?Sized>(
    state: &ChainState,
    schedule: &RewardSchedule,
    rng: &mut R,
) -> Result<ChainState> {
    let mut next = state.clone();
    next.advance(schedule, rng)?;
    Ok(next)
}

/// A recorded urn run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<ChainState>,
    pub winners: Vec<usize>,
    pub seed: u64,
}

/// Runs `horizon` steps from `initial` with the generator seeded by `seed`.
pub fn simulate(
    initial: &ChainState,
    schedule: &RewardSchedule,
    horizon: u64,
    seed: u64,
) -> Result<Trajectory> {
    schedule.validate()?;
    let mut rng = substream(seed, 0);
    let mut states = Vec::with_capacity(horizon as usize + 1);
    let mut winners = Vec::with_capacity(horizon as usize);
    let mut state = initial.clone();
    states.push(state.clone());
    for _ in 0..horizon {
        winners.push(state.advance(schedule, &mut rng)?);
        states.push(state.clone());
    }
    Ok(Trajectory {
        states,
        winners,
        seed,
    })
}

/// State after `horizon` steps, without recording the path.
pub fn run_to_horizon<R: RngCore + ?Sized>(
    initial: &ChainState,
    schedule: &RewardSchedule,
    horizon: u64,
    rng: &mut R,
) -> Result<ChainState> {
    let mut state = initial.clone();
    for _ in 0..horizon {
        state.advance(schedule, rng)?;
    }
    Ok(state)
}

/// Final share of miner `probe` over `runs` independent trajectories.
///
/// Trajectory `i` uses [`substream`]`(seed, i)`, so the result does not depend
/// on how callers split the batch.
pub fn final_shares(
    initial: &ChainState,
    schedule: &RewardSchedule,
    horizon: u64,
    runs: usize,
    seed: u64,
    probe: usize,
) -> Result<Vec<f64>> {
    schedule.validate()?;
    if probe >= initial.miners() {
        return Err(invalid("probe", "miner index out of range"));
    }
    (0..runs as u64)
        .map(|i| {
            let mut rng = substream(seed, i);
            run_to_horizon(initial, schedule, horizon, &mut rng).map(|s| s.share(probe))
        })
        .collect()
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive, got {v}")))
    }
}

/// Samples of the constant-reward limit law `Dir(n_{1,0}/R, ..., n_{K,0}/R)`.
pub fn sample_dirichlet_limit<R: RngCore + ?Sized>(
    initial_coins: &[f64],
    reward: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    check_positive("reward", reward)?;
    if initial_coins.is_empty() {
        return Err(Error::EmptyInput);
    }
    for &c in initial_coins {
        check_positive("initial_coins", c)?;
    }
    let mut out = Vec::with_capacity(count);
    let mut logs = alloc::vec![0.0; initial_coins.len()];
    for _ in 0..count {
        for (lg, &c) in logs.iter_mut().zip(initial_coins) {
            *lg = sample_log_gamma(c / reward, rng)?;
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sample: Vec<f64> = logs.iter().map(|l| libm::exp(l - max)).collect();
        let total: f64 = sample.iter().sum();
        sample.iter_mut().for_each(|x| *x /= total);
        out.push(sample);
    }
    Ok(out)
}

/// Samples of the small-miner limit ratio `(R/n0) * Gamma(n0/R)`.
pub fn sample_gamma_ratio<R: RngCore + ?Sized>(
    n0: f64,
    reward: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_positive("n0", n0)?;
    check_positive("reward", reward)?;
    let shape = n0 / reward;
    (0..count)
        .map(|_| sample_log_gamma(shape, rng).map(|lg| libm::exp(lg) / shape))
        .collect()
}
