//! Discrete-time participation and trading.
//!
//! A probed miner (index 0 of the environment's holdings) trades coins
//! against the rest of the market and holds a risk-free bond. Its discounted
//! consumption splits into a wealth term driven by the trades and a bond term
//! that is never positive when `delta * (1 + r_free) <= 1`. The sign of
//! `delta * (1 + r_cryp) - 1` decides whether staying out, or buying the
//! whole supply at the first step, is optimal.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};

use crate::error::{first, invalid, Error, Result, Violations};
use crate::rng::{standard_normal, stream, substream_on, uniform};
use crate::urn::{RewardSchedule, SHARE_TOL};

/// Equality band for the indifferent regime.
pub const REGIME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TradingEnv {
    /// Discount factor in `(0, 1]`.
    pub delta: f64,
    pub r_free: f64,
    /// Expected one-period return of the coin market value.
    pub r_cryp: f64,
    pub p0: f64,
    /// Deterministic exit horizon `T >= 1`.
    pub horizon: usize,
    /// Log-volatility `s` of the mean-one multiplicative price noise.
    pub noise_vol: f64,
    /// Initial holdings; miner 0 is the one whose strategy is evaluated.
    pub initial_coins: Vec<f64>,
    pub schedule: RewardSchedule,
}

impl TradingEnv {
    pub fn validate(&self) -> Result<()> {
        first(self.violations())
    }

    pub fn violations(&self) -> Vec<Error> {
        let mut v = Violations::new();
        v.check(self.delta > 0.0 && self.delta <= 1.0, "delta", "delta ∈ (0,1]");
        v.check(
            self.r_free >= 0.0 && self.r_free.is_finite(),
            "r_free",
            "r_free ≥ 0",
        );
        v.check(
            self.r_cryp > -1.0 && self.r_cryp.is_finite(),
            "r_cryp",
            "r_cryp > -1",
        );
        v.check(self.p0 > 0.0 && self.p0.is_finite(), "p0", "P0 > 0");
        v.check(self.horizon > 0, "horizon", "T ≥ 1");
        v.check(
            self.noise_vol >= 0.0 && self.noise_vol.is_finite(),
            "noise_vol",
            "s ≥ 0",
        );
        v.check(
            !self.initial_coins.is_empty()
                && self.initial_coins.iter().all(|c| *c >= 0.0 && c.is_finite())
                && self.initial_coins[0] > 0.0,
            "initial_coins",
            "holdings must be nonnegative with a positive probe holding",
        );
        v.extend(self.schedule.violations());
        v.into_vec()
    }

    pub fn n0(&self) -> f64 {
        self.initial_coins[0]
    }

    pub fn volume0(&self) -> f64 {
        self.initial_coins.iter().sum()
    }

    pub fn regime(&self) -> Regime {
        classify_regime(self.delta, self.r_cryp)
    }

    /// Deterministic volumes `N_0..=N_T`.
    pub fn volume_path(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.horizon + 1);
        let mut volume = self.volume0();
        out.push(volume);
        for t in 1..=self.horizon {
            volume += self.schedule.reward_at(t as u64, volume)?;
            out.push(volume);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Regime {
    NonParticipation,
    Indifferent,
    BuyOut,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::NonParticipation => "non_participation",
            Regime::Indifferent => "indifferent",
            Regime::BuyOut => "buy_out",
        }
    }
}

pub fn classify_regime(delta: f64, r_cryp: f64) -> Regime {
    let x = delta * (1.0 + r_cryp);
    if (x - 1.0).abs() <= REGIME_TOL {
        Regime::Indifferent
    } else if x < 1.0 {
        Regime::NonParticipation
    } else {
        Regime::BuyOut
    }
}

/// Prices `P_0..=P_T` with `M_t = N_t P_t = M_{t-1} (1 + r_cryp) xi_t` and
/// `xi_t = exp(s Z_t - s^2 / 2)`, so `E[M_{t+1} | past] = (1 + r_cryp) M_t`.
pub fn price_path<R: RngCore + ?Sized>(
    env: &TradingEnv,
    volumes: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if volumes.is_empty() || volumes.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("volumes", "volume path must be positive"));
    }
    let s = env.noise_vol;
    let mut market = volumes[0] * env.p0;
    let mut prices = Vec::with_capacity(volumes.len());
    prices.push(env.p0);
    for &volume in &volumes[1..] {
        let xi = if s > 0.0 {
            libm::exp(s * standard_normal(rng) - 0.5 * s * s)
        } else {
            1.0
        };
        market *= (1.0 + env.r_cryp) * xi;
        prices.push(market / volume);
    }
    Ok(prices)
}

/// `Pi_0 = n_0 P_0`, `Pi_t = delta^t n'_t P_t - sum_{j=1}^{t-1} delta^j nu_j P_j`.
///
/// All three slices are indexed by time `0..=tau`; `n_prime[0]` is `n_0` and
/// `trades[0]` is ignored.
pub fn pi_process(n_prime: &[f64], trades: &[f64], prices: &[f64], delta: f64) -> Result<Vec<f64>> {
    if n_prime.len() != trades.len() || n_prime.len() != prices.len() {
        return Err(Error::Shape(format!(
            "lengths differ: n' {}, trades {}, prices {}",
            n_prime.len(),
            trades.len(),
            prices.len()
        )));
    }
    if n_prime.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = Vec::with_capacity(n_prime.len());
    out.push(n_prime[0] * prices[0]);
    let mut spent = 0.0;
    let mut disc = 1.0;
    for t in 1..n_prime.len() {
        let prev_disc = disc;
        disc *= delta;
        if t >= 2 {
            spent += prev_disc * trades[t - 1] * prices[t - 1];
        }
        out.push(disc * n_prime[t] * prices[t] - spent);
    }
    Ok(out)
}

/// A realised trading decision path of the probed miner.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPath {
    /// `nu_t` for `t = 1..tau` (length `tau - 1`, empty when `tau <= 1`).
    pub trades: Vec<f64>,
    /// `b_t` for `t = 1..tau` (same length as `trades`).
    pub bonds: Vec<f64>,
    /// Exit time `tau <= T`; zero means non-participation.
    pub exit: usize,
}

impl StrategyPath {
    pub fn non_participation() -> Self {
        Self {
            trades: Vec::new(),
            bonds: Vec::new(),
            exit: 0,
        }
    }

    fn check_shape(&self, env: &TradingEnv, prices: &[f64], wins: &[bool]) -> Result<()> {
        let inner = self.exit.saturating_sub(1);
        if self.exit > env.horizon {
            return Err(Error::Shape(format!(
                "exit {} beyond horizon {}",
                self.exit, env.horizon
            )));
        }
        if self.trades.len() != inner || self.bonds.len() != inner {
            return Err(Error::Shape(format!(
                "exit {} needs {} trades/bonds, got {}/{}",
                self.exit,
                inner,
                self.trades.len(),
                self.bonds.len()
            )));
        }
        if prices.len() <= self.exit || wins.len() <= self.exit {
            return Err(Error::Shape("price or win path shorter than exit".into()));
        }
        Ok(())
    }
}

/// Holdings before trading, `n'_0..=n'_tau`, replayed from realised wins and
/// checked against the no-shorting and no-over-ownership constraints.
pub fn replay_holdings(
    strategy: &StrategyPath,
    volumes: &[f64],
    wins: &[bool],
    env: &TradingEnv,
) -> Result<Vec<f64>> {
    let mut n_prime = Vec::with_capacity(strategy.exit + 1);
    let mut held = env.n0();
    n_prime.push(held);
    for t in 1..=strategy.exit {
        let reward = volumes[t] - volumes[t - 1];
        let np = held + if wins[t] { reward } else { 0.0 };
        n_prime.push(np);
        if t < strategy.exit {
            let nu = strategy.trades[t - 1];
            let b = strategy.bonds[t - 1];
            let slack = SHARE_TOL * volumes[t];
            if b < 0.0 {
                return Err(Error::Infeasible {
                    constraint: "C2: b_t >= 0",
                    step: t,
                });
            }
            if np + nu < -slack {
                return Err(Error::Infeasible {
                    constraint: "C2: nu_t >= -n'_t",
                    step: t,
                });
            }
            if np + nu > volumes[t] + slack {
                return Err(Error::Infeasible {
                    constraint: "C2: n_t <= N_t",
                    step: t,
                });
            }
            held = np + nu;
        }
    }
    Ok(n_prime)
}

/// Discounted utility through the separable decomposition
/// `delta^tau n'_tau P_tau - sum delta^t nu_t P_t + sum delta^t [(1 + r_free) delta - 1] b_t`.
pub fn utility(
    strategy: &StrategyPath,
    volumes: &[f64],
    prices: &[f64],
    wins: &[bool],
    env: &TradingEnv,
) -> Result<f64> {
    strategy.check_shape(env, prices, wins)?;
    let n_prime = replay_holdings(strategy, volumes, wins, env)?;
    let tau = strategy.exit;
    if tau == 0 {
        return Ok(env.n0() * env.p0);
    }
    let bond_rate = (1.0 + env.r_free) * env.delta - 1.0;
    let mut disc = 1.0;
    let (mut trade_term, mut bond_term) = (0.0, 0.0);
    for t in 1..tau {
        disc *= env.delta;
        trade_term += disc * strategy.trades[t - 1] * prices[t];
        bond_term += disc * bond_rate * strategy.bonds[t - 1];
    }
    disc *= env.delta;
    Ok(disc * n_prime[tau] * prices[tau] - trade_term + bond_term)
}

/// Discounted utility by accumulating the per-period cash flows directly.
pub fn utility_direct(
    strategy: &StrategyPath,
    volumes: &[f64],
    prices: &[f64],
    wins: &[bool],
    env: &TradingEnv,
) -> Result<f64> {
    strategy.check_shape(env, prices, wins)?;
    let n_prime = replay_holdings(strategy, volumes, wins, env)?;
    let tau = strategy.exit;
    if tau == 0 {
        return Ok(env.n0() * env.p0);
    }
    let growth = 1.0 + env.r_free;
    let mut prev_bond = 0.0;
    let mut disc = 1.0;
    let mut total = 0.0;
    for t in 1..tau {
        disc *= env.delta;
        let b = strategy.bonds[t - 1];
        let cash = growth * prev_bond - b - strategy.trades[t - 1] * prices[t];
        total += disc * cash;
        prev_bond = b;
    }
    disc *= env.delta;
    total += disc * (growth * prev_bond + n_prime[tau] * prices[tau]);
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StrategyKind {
    NonParticipation,
    BuyOut,
    NoTrade,
    /// Uniform feasible trades with `b = 0`; the id selects the draw stream.
    RandomFeasible(u32),
}

impl StrategyKind {
    pub fn name(&self) -> String {
        match self {
            StrategyKind::NonParticipation => "non_participation".into(),
            StrategyKind::BuyOut => "buy_out".into(),
            StrategyKind::NoTrade => "no_trade".into(),
            StrategyKind::RandomFeasible(j) => format!("random_{j}"),
        }
    }
}

/// Exogenous randomness of one path: volumes, prices and selection uniforms.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub volumes: Vec<f64>,
    pub prices: Vec<f64>,
    /// `selection[t]` decides the block at step `t`; index 0 is unused.
    pub selection: Vec<f64>,
}

impl MarketPath {
    pub fn generate<S: RngCore + ?Sized, P: RngCore + ?Sized>(
        env: &TradingEnv,
        selection_rng: &mut S,
        price_rng: &mut P,
    ) -> Result<Self> {
        let volumes = env.volume_path()?;
        let prices = price_path(env, &volumes, price_rng)?;
        let mut selection = Vec::with_capacity(env.horizon + 1);
        selection.push(0.0);
        for _ in 0..env.horizon {
            selection.push(uniform(selection_rng));
        }
        Ok(Self {
            volumes,
            prices,
            selection,
        })
    }

    /// Path `index` of a batch seeded with `seed`.
    pub fn for_index(env: &TradingEnv, seed: u64, index: u64) -> Result<Self> {
        let mut sel = substream_on(seed, index, stream::SELECTION);
        let mut price = substream_on(seed, index, stream::PRICE);
        Self::generate(env, &mut sel, &mut price)
    }
}

/// A strategy played out on one market path.
#[derive(Debug, Clone, PartialEq)]
pub struct Realized {
    pub path: StrategyPath,
    pub wins: Vec<bool>,
    pub utility: f64,
}

/// Plays `kind` against `market`; `draws` feeds the random strategy.
pub fn play<R: RngCore + ?Sized>(
    kind: StrategyKind,
    env: &TradingEnv,
    market: &MarketPath,
    draws: &mut R,
) -> Result<Realized> {
    let horizon = env.horizon;
    let mut wins = alloc::vec![false; horizon + 1];
    if kind == StrategyKind::NonParticipation {
        let path = StrategyPath::non_participation();
        let utility = utility(&path, &market.volumes, &market.prices, &wins, env)?;
        return Ok(Realized {
            path,
            wins,
            utility,
        });
    }
    let mut trades = Vec::with_capacity(horizon.saturating_sub(1));
    let mut held = env.n0();
    for t in 1..=horizon {
        let prev_volume = market.volumes[t - 1];
        let volume = market.volumes[t];
        wins[t] = market.selection[t] * prev_volume < held;
        let np = held + if wins[t] { volume - prev_volume } else { 0.0 };
        if t == horizon {
            break;
        }
        let nu = match kind {
            StrategyKind::BuyOut if t == 1 => volume - np,
            StrategyKind::RandomFeasible(_) => {
                let lo = -np;
                let hi = (volume - np).min(np);
                lo + (hi - lo) * uniform(draws)
            }
            _ => 0.0,
        };
        trades.push(nu);
        held = np + nu;
    }
    let path = StrategyPath {
        bonds: alloc::vec![0.0; trades.len()],
        trades,
        exit: horizon,
    };
    let utility = utility(&path, &market.volumes, &market.prices, &wins, env)?;
    Ok(Realized {
        path,
        wins,
        utility,
    })
}

/// Realised utility of `kind` on a fresh market drawn from `rng`.
pub fn run_builtin_strategy<R: RngCore>(kind: StrategyKind, env: &TradingEnv, rng: &mut R) -> Result<f64> {
    env.validate()?;
    let mut price_rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng.next_u64());
    let market = MarketPath::generate(env, rng, &mut price_rng)?;
    play(kind, env, &market, rng).map(|r| r.utility)
}


#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StrategyStats {
    pub strategy: String,
    pub mean: f64,
    pub std_error: f64,
}

/// Utilities of every strategy on `paths` common market paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub regime: Regime,
    pub strategies: Vec<StrategyKind>,
    /// `utilities[s][p]`: strategy `s` on path `p`.
    pub utilities: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn stats(&self) -> Vec<StrategyStats> {
        self.strategies
            .iter()
            .zip(&self.utilities)
            .map(|(kind, u)| {
                let n = u.len() as f64;
                let mean = u.iter().sum::<f64>() / n;
                let var = if u.len() > 1 {
                    u.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                StrategyStats {
                    strategy: kind.name(),
                    mean,
                    std_error: libm::sqrt(var / n),
                }
            })
            .collect()
    }
}

/// Plays every strategy on the same `paths` markets (common random numbers).
pub fn compare_strategies(
    env: &TradingEnv,
    strategies: &[StrategyKind],
    paths: usize,
    seed: u64,
) -> Result<Comparison> {
    env.validate()?;
    let mut utilities = alloc::vec![Vec::with_capacity(paths); strategies.len()];
    for p in 0..paths as u64 {
        let market = MarketPath::for_index(env, seed, p)?;
        for (s, &kind) in strategies.iter().enumerate() {
            let id = match kind {
                StrategyKind::RandomFeasible(j) => j as u64,
                _ => 0,
            };
            let mut draws = substream_on(seed, p, stream::STRATEGY_BASE + id);
            utilities[s].push(play(kind, env, &market, &mut draws)?.utility);
        }
    }
    Ok(Comparison {
        regime: env.regime(),
        strategies: strategies.to_vec(),
        utilities,
    })
}

/// The built-in strategy that is optimal in `regime`.
pub fn designated_strategy(regime: Regime) -> StrategyKind {
    match regime {
        Regime::NonParticipation => StrategyKind::NonParticipation,
        Regime::Indifferent | Regime::BuyOut => StrategyKind::BuyOut,
    }
}

/// `sqrt(se_a^2 + se_b^2)`.
pub fn pooled_se(a: &StrategyStats, b: &StrategyStats) -> f64 {
    libm::sqrt(a.std_error * a.std_error + b.std_error * b.std_error)
}
