//! Experiment configuration: parsing, defaults and validation.

use std::path::PathBuf;

use posdyn_core::hjb::ControlParams;
use posdyn_core::mfg::MfgParams;
use posdyn_core::trading::TradingEnv;
use posdyn_core::urn::{ChainState, RewardSchedule};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Urn,
    Limits,
    Sweep,
    Trading,
    Hjb,
    Mfg,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Urn => "urn",
            Subcommand::Limits => "limits",
            Subcommand::Sweep => "sweep",
            Subcommand::Trading => "trading",
            Subcommand::Hjb => "hjb",
            Subcommand::Mfg => "mfg",
        }
    }
}

/// Statistic recorded per urn run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `pi_{probe,T} / pi_{probe,0}`.
    Ratio,
    /// `pi_{probe,T}`.
    Share,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrnBlock {
    pub initial_coins: Vec<f64>,
    pub schedule: RewardSchedule,
    pub horizon: u64,
    pub runs: usize,
    #[serde(default)]
    pub probe: usize,
    #[serde(default = "default_statistic")]
    pub statistic: Statistic,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Defaults to `[0, 5]` for ratios and `[0, 1]` for shares.
    #[serde(default)]
    pub hist_range: Option<[f64; 2]>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "yes")]
    pub record_trajectory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LimitsBlock {
    Dirichlet {
        initial_coins: Vec<f64>,
        reward: f64,
        count: usize,
    },
    GammaRatio {
        n0: f64,
        reward: f64,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub schedule: RewardSchedule,
    pub n0_grid: Vec<f64>,
    pub volume_grid: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub horizon: u64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradingBlock {
    pub env: TradingEnv,
    pub paths: usize,
    #[serde(default = "default_random_strategies")]
    pub random_strategies: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbBlock {
    pub params: ControlParams,
    #[serde(default = "default_hjb_grid")]
    pub time_steps: usize,
    #[serde(default = "default_hjb_grid")]
    pub space_intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfgBlock {
    pub params: MfgParams,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_statistic() -> Statistic {
    Statistic::Ratio
}
fn default_bins() -> usize {
    50
}
fn default_thresholds() -> Vec<f64> {
    vec![0.5, 2.0]
}
fn yes() -> bool {
    true
}
fn default_epsilon() -> f64 {
    posdyn_core::metrics::DEFAULT_EPSILON
}
fn default_random_strategies() -> u32 {
    50
}
fn default_hjb_grid() -> usize {
    400
}
fn default_damping() -> f64 {
    posdyn_core::mfg::DEFAULT_DAMPING
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Urn(UrnBlock),
    Limits(LimitsBlock),
    Sweep(SweepBlock),
    Trading(TradingBlock),
    Hjb(HjbBlock),
    Mfg(MfgBlock),
}

impl Block {
    pub fn subcommand(&self) -> Subcommand {
        match self {
            Block::Urn(_) => Subcommand::Urn,
            Block::Limits(_) => Subcommand::Limits,
            Block::Sweep(_) => Subcommand::Sweep,
            Block::Trading(_) => Subcommand::Trading,
            Block::Hjb(_) => Subcommand::Hjb,
            Block::Mfg(_) => Subcommand::Mfg,
        }
    }
}

/// A validated experiment with every default filled in.
///
/// Serialises back to a config file that reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub block: Block,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    subcommand: Subcommand,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    urn: Option<UrnBlock>,
    limits: Option<LimitsBlock>,
    sweep: Option<SweepBlock>,
    trading: Option<TradingBlock>,
    hjb: Option<HjbBlock>,
    mfg: Option<MfgBlock>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// Parses `text`, applies `overrides` and checks every invariant.
///
/// Semantic problems are all reported together.
pub fn parse_config(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut problems = Vec::new();

    let seed = overrides.seed.or(raw.seed);
    if seed.is_none() {
        problems.push("seed required".to_string());
    }
    let out_dir = overrides
        .out_dir
        .clone()
        .or(raw.out_dir)
        .unwrap_or_else(|| PathBuf::from("out").join(raw.subcommand.name()));

    let mut blocks = Vec::new();
    blocks.extend(raw.urn.map(Block::Urn));
    blocks.extend(raw.limits.map(Block::Limits));
    blocks.extend(raw.sweep.map(Block::Sweep));
    blocks.extend(raw.trading.map(Block::Trading));
    blocks.extend(raw.hjb.map(Block::Hjb));
    blocks.extend(raw.mfg.map(Block::Mfg));
    let block = match blocks.len() {
        1 => {
            let block = blocks.pop().unwrap();
            if block.subcommand() != raw.subcommand {
                problems.push(format!(
                    "subcommand is `{}` but the parameter block is `{}`",
                    raw.subcommand.name(),
                    block.subcommand().name()
                ));
            }
            Some(block)
        }
        0 => {
            problems.push(format!(
                "missing parameter block `{}`",
                raw.subcommand.name()
            ));
            None
        }
        n => {
            problems.push(format!("exactly one parameter block allowed, found {n}"));
            None
        }
    };

    let block = block.map(|mut b| {
        problems.extend(check_block(&mut b));
        b
    });

    match (problems.is_empty(), seed, block) {
        (true, Some(seed), Some(block)) => Ok(ExperimentConfig {
            subcommand: raw.subcommand,
            seed,
            out_dir,
            block,
        }),
        _ => Err(ConfigError::Invalid(problems)),
    }
}

fn core_errors(errors: Vec<posdyn_core::Error>) -> impl Iterator<Item = String> {
    errors.into_iter().map(|e| e.to_string())
}

/// Validates `block` and fills the defaults that depend on other fields.
fn check_block(block: &mut Block) -> Vec<String> {
    let mut out = Vec::new();
    match block {
        Block::Urn(u) => {
            need(&mut out, u.runs >= 1, "urn.runs ≥ 1");
            need(&mut out, u.bins >= 1, "urn.bins ≥ 1");
            need(&mut out, u.probe < u.initial_coins.len(), "urn.probe must index a miner");
            if let Err(e) = ChainState::new(u.initial_coins.clone()) {
                need(&mut out, false, &format!("urn.initial_coins: {e}"));
            } else if u.statistic == Statistic::Ratio {
                need(&mut out, 
                    u.initial_coins.get(u.probe).is_some_and(|&c| c > 0.0),
                    "urn.statistic = ratio needs a positive probe holding",
                );
            }
            let range = *u.hist_range.get_or_insert(match u.statistic {
                Statistic::Ratio => [0.0, 5.0],
                Statistic::Share => [0.0, 1.0],
            });
            need(&mut out, 
                range[0] < range[1] && range.iter().all(|x| x.is_finite()),
                "urn.hist_range must be finite with lo < hi",
            );
            out.extend(core_errors(u.schedule.violations()));
        }
        Block::Limits(LimitsBlock::Dirichlet {
            initial_coins,
            reward,
            count,
        }) => {
            need(&mut out, !initial_coins.is_empty(), "limits.initial_coins must not be empty");
            need(&mut out, 
                initial_coins.iter().all(|&c| c > 0.0 && c.is_finite()),
                "limits.initial_coins must be positive",
            );
            need(&mut out, *reward > 0.0 && reward.is_finite(), "limits.reward > 0");
            need(&mut out, *count >= 1, "limits.count ≥ 1");
        }
        Block::Limits(LimitsBlock::GammaRatio { n0, reward, count }) => {
            need(&mut out, *n0 > 0.0 && n0.is_finite(), "limits.n0 > 0");
            need(&mut out, *reward > 0.0 && reward.is_finite(), "limits.reward > 0");
            need(&mut out, *count >= 1, "limits.count ≥ 1");
        }
        Block::Sweep(s) => {
            need(&mut out, !s.n0_grid.is_empty(), "sweep.n0_grid must not be empty");
            need(&mut out, !s.volume_grid.is_empty(), "sweep.volume_grid must not be empty");
            need(&mut out, s.runs >= 100, "sweep.runs ≥ 100");
            need(&mut out, s.epsilon > 0.0, "sweep.epsilon > 0");
            let cells_ok = s
                .volume_grid
                .iter()
                .all(|&n| s.n0_grid.iter().all(|&n0| n0 > 0.0 && n0 < n));
            need(&mut out, cells_ok, "sweep: every cell needs 0 < n0 < N");
            out.extend(core_errors(s.schedule.violations()));
        }
        Block::Trading(t) => {
            need(&mut out, t.paths >= 2, "trading.paths ≥ 2");
            out.extend(core_errors(t.env.violations()));
        }
        Block::Hjb(h) => {
            need(&mut out, h.time_steps >= 1, "hjb.time_steps ≥ 1");
            need(&mut out, h.space_intervals >= 2, "hjb.space_intervals ≥ 2");
            out.extend(core_errors(h.params.violations()));
        }
        Block::Mfg(m) => {
            need(&mut out, 
                m.damping > 0.0 && m.damping <= 1.0,
                "mfg.damping ∈ (0,1]",
            );
            need(&mut out, m.tol > 0.0, "mfg.tol > 0");
            need(&mut out, m.max_iter >= 1, "mfg.max_iter ≥ 1");
            out.extend(core_errors(m.params.violations()));
        }
    }
    out
}

fn need(out: &mut Vec<String>, ok: bool, msg: &str) {
    if !ok {
        out.push(msg.to_string());
    }
}
