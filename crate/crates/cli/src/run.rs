//! Subcommand runners.

use std::path::Path;

use anyhow::Context;
use posdyn_core::hjb::{classify_strategy, objective_closed_form, solve_hjb};
use posdyn_core::metrics::{histogram, ks_distance, phase_sweep, summarize, SampleSummary};
use posdyn_core::mfg::{equilibrium_iterate, Moments};
use posdyn_core::rng::{stream, substream_on};
use posdyn_core::trading::{compare_strategies, designated_strategy, pooled_se, Regime, StrategyKind, StrategyStats};
use posdyn_core::urn::{
    final_shares, sample_dirichlet_limit, sample_gamma_ratio, simulate, ChainState, RewardSchedule,
};
use serde::Serialize;
use serde_json::json;
use statrs::distribution::{Beta, ContinuousCDF, Gamma};

use crate::config::{
    Block, ExperimentConfig, HjbBlock, LimitsBlock, MfgBlock, Statistic, SweepBlock, TradingBlock,
    UrnBlock,
};
use crate::output::{num, write_json, Csv};

/// How a run that produced its artifacts ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    Done,
    /// The mean-field iteration hit its budget; outputs are still written.
    NotConverged,
}

/// Runs the experiment, writing every artifact into `config.out_dir`.
pub fn run(config: &ExperimentConfig) -> anyhow::Result<Completion> {
    let dir = config.out_dir.as_path();
    let seed = config.seed;
    match &config.block {
        Block::Urn(b) => urn(b, seed, dir),
        Block::Limits(b) => limits(b, seed, dir),
        Block::Sweep(b) => sweep(b, seed, dir),
        Block::Trading(b) => trading(b, seed, dir),
        Block::Hjb(b) => hjb(b, dir),
        Block::Mfg(b) => mfg(b, dir),
    }
}

fn gamma_cdf(shape: f64, rate: f64) -> anyhow::Result<impl Fn(f64) -> f64> {
    let g = Gamma::new(shape, rate).context("gamma limit law")?;
    Ok(move |x: f64| g.cdf(x))
}

fn beta_cdf(a: f64, b: f64) -> anyhow::Result<impl Fn(f64) -> f64> {
    let d = Beta::new(a, b).context("beta limit law")?;
    Ok(move |x: f64| d.cdf(x))
}

#[derive(Serialize)]
struct UrnSummary {
    statistic: Statistic,
    probe: usize,
    initial_share: f64,
    samples: SampleSummary,
    /// `(threshold, fraction strictly below)`.
    below_probs: Vec<(f64, f64)>,
    hist_underflow: u64,
    hist_overflow: u64,
    /// Distance to the exact constant-reward limit (a Beta marginal).
    ks_beta_limit: Option<f64>,
    /// Distance of ratios to the small-miner Gamma limit.
    ks_gamma_limit: Option<f64>,
}

fn urn(b: &UrnBlock, seed: u64, dir: &Path) -> anyhow::Result<Completion> {
    let initial = ChainState::new(b.initial_coins.clone())?;
    let k = initial.miners();

    if b.record_trajectory {
        let traj = simulate(&initial, &b.schedule, b.horizon, seed)?;
        let mut header = vec!["t".to_string(), "volume".into(), "winner".into()];
        header.extend((0..k).map(|i| format!("share_{i}")));
        let mut csv = Csv::create(dir, "trajectory.csv", &header)?;
        for (i, state) in traj.states.iter().enumerate() {
            let mut row = vec![state.t.to_string(), num(state.volume)];
            row.push(if i == 0 { String::new() } else { traj.winners[i - 1].to_string() });
            row.extend(state.shares().into_iter().map(num));
            csv.row(&row)?;
        }
        csv.finish()?;
    }

    let pi0 = initial.share(b.probe);
    let shares = final_shares(&initial, &b.schedule, b.horizon, b.runs, seed, b.probe)?;
    let values: Vec<f64> = match b.statistic {
        Statistic::Ratio => shares.iter().map(|p| p / pi0).collect(),
        Statistic::Share => shares.clone(),
    };

    let mut csv = Csv::create(dir, "samples.csv", &["run_idx", "value"])?;
    for (i, v) in values.iter().enumerate() {
        csv.row([i.to_string(), num(*v)])?;
    }
    csv.finish()?;

    let [lo, hi] = b.hist_range.unwrap_or([0.0, 1.0]);
    let hist = histogram(&values, b.bins, lo, hi)?;
    let mut csv = Csv::create(dir, "histogram.csv", &["bin_left", "bin_right", "count"])?;
    for (i, c) in hist.counts.iter().enumerate() {
        csv.row([num(hist.edges[i]), num(hist.edges[i + 1]), c.to_string()])?;
    }
    csv.finish()?;

    let (ks_beta_limit, ks_gamma_limit) = match b.schedule {
        RewardSchedule::Constant { reward } => {
            let a = b.initial_coins[b.probe] / reward;
            let rest = initial.volume / reward - a;
            let beta = if a > 0.0 && rest > 0.0 {
                let cdf = beta_cdf(a, rest)?;
                Some(match b.statistic {
                    Statistic::Ratio => ks_distance(&values, |r| cdf(r * pi0))?,
                    Statistic::Share => ks_distance(&values, &cdf)?,
                })
            } else {
                None
            };
            let gamma = match b.statistic {
                Statistic::Ratio => Some(ks_distance(&values, gamma_cdf(a, a)?)?),
                Statistic::Share => None,
            };
            (beta, gamma)
        }
        _ => (None, None),
    };

    let n = values.len() as f64;
    let summary = UrnSummary {
        statistic: b.statistic,
        probe: b.probe,
        initial_share: pi0,
        samples: summarize(&values, &b.thresholds)?,
        below_probs: b
            .thresholds
            .iter()
            .map(|&th| (th, values.iter().filter(|&&v| v < th).count() as f64 / n))
            .collect(),
        hist_underflow: hist.underflow,
        hist_overflow: hist.overflow,
        ks_beta_limit,
        ks_gamma_limit,
    };
    write_json(dir, "summary.json", &summary)?;
    Ok(Completion::Done)
}

type Cdf = Box<dyn Fn(f64) -> f64>;

fn limits(b: &LimitsBlock, seed: u64, dir: &Path) -> anyhow::Result<Completion> {
    let mut rng = substream_on(seed, 0, stream::LIMIT_SAMPLES);
    // exact marginal law of coordinate 0
    let (samples, cdf): (Vec<Vec<f64>>, Cdf) = match b {
        LimitsBlock::Dirichlet {
            initial_coins,
            reward,
            count,
        } => {
            let s = sample_dirichlet_limit(initial_coins, *reward, *count, &mut rng)?;
            let a0 = initial_coins[0] / reward;
            let rest = initial_coins.iter().sum::<f64>() / reward - a0;
            let cdf: Cdf = if rest > 0.0 {
                Box::new(beta_cdf(a0, rest)?)
            } else {
                Box::new(|x: f64| if x < 1.0 { 0.0 } else { 1.0 })
            };
            (s, cdf)
        }
        LimitsBlock::GammaRatio { n0, reward, count } => {
            let s = sample_gamma_ratio(*n0, *reward, *count, &mut rng)?;
            let shape = n0 / reward;
            (
                s.into_iter().map(|x| vec![x]).collect(),
                Box::new(gamma_cdf(shape, shape)?),
            )
        }
    };
    let dim = samples[0].len();
    let mut header = vec!["sample_idx".to_string()];
    header.extend((0..dim).map(|i| format!("value_{i}")));
    let mut csv = Csv::create(dir, "limit_samples.csv", &header)?;
    for (i, s) in samples.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(s.iter().copied().map(num));
        csv.row(&row)?;
    }
    csv.finish()?;

    let coords: Vec<SampleSummary> = (0..dim)
        .map(|c| {
            let col: Vec<f64> = samples.iter().map(|s| s[c]).collect();
            summarize(&col, &[])
        })
        .collect::<Result<_, _>>()?;
    let first: Vec<f64> = samples.iter().map(|s| s[0]).collect();
    let summary = json!({
        "count": samples.len(),
        "coordinates": coords,
        "ks_value_0": ks_distance(&first, cdf)?,
    });
    write_json(dir, "summary.json", &summary)?;
    Ok(Completion::Done)
}

fn sweep(b: &SweepBlock, seed: u64, dir: &Path) -> anyhow::Result<Completion> {
    let rows = phase_sweep(
        &b.schedule,
        &b.n0_grid,
        &b.volume_grid,
        b.epsilon,
        b.horizon,
        b.runs,
        seed,
    )?;
    let mut csv = Csv::create(dir, "sweep.csv", &["N", "n0", "epsilon", "dev_prob", "ratio_var", "runs"])?;
    for r in &rows {
        csv.row([
            num(r.volume),
            num(r.n0),
            num(r.epsilon),
            num(r.dev_prob),
            num(r.ratio_var),
            r.runs.to_string(),
        ])?;
    }
    csv.finish()?;
    Ok(Completion::Done)
}

#[derive(Serialize)]
struct DominanceGap {
    strategy: String,
    /// `designated mean - other mean + 2 pooled se`; negative means violated.
    margin: f64,
}

fn trading(b: &TradingBlock, seed: u64, dir: &Path) -> anyhow::Result<Completion> {
    let mut kinds = vec![
        StrategyKind::NonParticipation,
        StrategyKind::BuyOut,
        StrategyKind::NoTrade,
    ];
    kinds.extend((0..b.random_strategies).map(StrategyKind::RandomFeasible));
    let cmp = compare_strategies(&b.env, &kinds, b.paths, seed)?;
    let regime = cmp.regime.label();

    let mut csv = Csv::create(dir, "trading.csv", &["path_idx", "strategy", "regime", "utility"])?;
    let names: Vec<String> = kinds.iter().map(|k| k.name()).collect();
    for p in 0..b.paths {
        for (s, name) in names.iter().enumerate() {
            csv.row([p.to_string(), name.clone(), regime.to_string(), num(cmp.utilities[s][p])])?;
        }
    }
    csv.finish()?;

    let stats = cmp.stats();
    let designated = designated_strategy(cmp.regime);
    let d = &stats[kinds.iter().position(|k| *k == designated).expect("built-in")];
    let gaps: Vec<DominanceGap> = stats
        .iter()
        .filter(|s| s.strategy != d.strategy)
        .map(|s| DominanceGap {
            strategy: s.strategy.clone(),
            margin: d.mean - s.mean + 2.0 * pooled_se(d, s),
        })
        .collect();
    let baseline = b.env.n0() * b.env.p0;
    let builtin: Vec<&StrategyStats> = stats.iter().take(3).collect();
    let indifferent_band = (cmp.regime == Regime::Indifferent).then(|| {
        builtin
            .iter()
            .all(|s| (s.mean - baseline).abs() <= 4.0 * s.std_error.max(f64::EPSILON * baseline))
    });
    let summary = json!({
        "regime": regime,
        "designated": designated.name(),
        "paths": b.paths,
        "n0_p0": baseline,
        "strategies": stats,
        "dominance_holds": gaps.iter().all(|g| g.margin >= 0.0),
        "dominance_margins": gaps,
        "indifferent_within_4se": indifferent_band,
    });
    write_json(dir, "summary.json", &summary)?;
    Ok(Completion::Done)
}

fn hjb(b: &HjbBlock, dir: &Path) -> anyhow::Result<Completion> {
    let p = &b.params;
    let grid = solve_hjb(p, b.time_steps, b.space_intervals)?;
    let cl = classify_strategy(p)?;
    let oracle = objective_closed_form(&cl.control, p)?;

    let mut csv = Csv::create(dir, "value.csv", &["t", "y", "x", "v"])?;
    for n in 0..=grid.time_steps() {
        let (t, vol) = (grid.times[n], grid.volumes[n]);
        for (y, v) in grid.y_nodes.iter().zip(grid.slice(n)) {
            csv.row([num(t), num(*y), num(y * vol), num(*v)])?;
        }
    }
    csv.finish()?;

    let mut csv = Csv::create(dir, "control.csv", &["segment_start", "segment_end", "nu"])?;
    for (start, end, nu) in cl.control.segments() {
        csv.row([num(start), num(end), num(nu)])?;
    }
    csv.finish()?;

    let v0 = grid.value_at(0, p.x0);
    let summary = json!({
        "v0": v0,
        "oracle_value": oracle,
        "rel_err": (v0 - oracle).abs() / oracle.abs(),
        "t0": cl.crossings.first(),
        "crossings": cl.crossings,
        "shape": cl.shape.label(),
        "trend": cl.trend,
    });
    write_json(dir, "summary.json", &summary)?;
    Ok(Completion::Done)
}

fn mfg(b: &MfgBlock, dir: &Path) -> anyhow::Result<Completion> {
    let p = &b.params;
    let s = equilibrium_iterate(p, b.damping, b.tol, b.max_iter)?;
    let m = p.time_steps;

    let mut csv = Csv::create(dir, "nu_eq.csv", &["t", "nu_eq", "Z", "Ptilde"])?;
    for n in 0..=m {
        csv.row([num(s.times[n]), num(s.nu_eq[n]), num(s.z_path[n]), num(s.ptilde[n])])?;
    }
    csv.finish()?;

    let mut density = Csv::create(dir, "density.csv", &["t", "x", "m"])?;
    let mut value = Csv::create(dir, "value.csv", &["t", "x", "v"])?;
    for n in 0..=m {
        let (t, vol) = (s.times[n], s.value.volumes[n]);
        let nodes = s.value.y_nodes.iter().zip(s.density_row(n)).zip(s.value.slice(n));
        for ((y, m), v) in nodes {
            let x = y * vol;
            density.row([num(t), num(x), num(m / vol)])?;
            value.row([num(t), num(x), num(*v)])?;
        }
    }
    density.finish()?;
    value.finish()?;

    let mut csv = Csv::create(dir, "convergence.csv", &["iter", "residual"])?;
    for (i, r) in s.residual_history.iter().enumerate() {
        csv.row([(i + 1).to_string(), num(*r)])?;
    }
    csv.finish()?;

    let moments: Vec<Moments> = [0, m / 2, m].iter().map(|&n| s.moments(n)).collect();
    let mass_error = (0..=m)
        .map(|n| (s.moments(n).mass - 1.0).abs())
        .fold(0.0, f64::max);
    let summary = json!({
        "converged": s.converged,
        "iterations": s.iterations,
        "residual": s.residual,
        "tol": b.tol,
        "fixed_point_defect": s.fixed_point_defect(p),
        "max_mass_error": mass_error,
        "moments": moments,
    });
    write_json(dir, "summary.json", &summary)?;
    Ok(if s.converged {
        Completion::Done
    } else {
        Completion::NotConverged
    })
}
