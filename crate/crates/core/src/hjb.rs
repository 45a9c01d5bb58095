//! Continuous-time trading under a rate cap `|nu| <= nubar`.
//!
//! With linear running and terminal utilities the optimal control is
//! bang-bang: buy at full rate while `Psi(t) >= Pbeta(t)` and sell otherwise,
//! where `Psi` is the rate of return of holding coins and `Pbeta` the
//! discounted expected price. [`solve_hjb`] computes the value function of the
//! same problem by a monotone upwind scheme, independently of the closed form.
//!
//! The solver works in the share coordinate `y = x / N(t)`, which removes the
//! proportional-growth drift and fixes the domain to `[0, 1]`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{first, invalid, Error, Result, Violations};
use crate::quad::adaptive_simpson;

/// Absolute tolerance of every quadrature in this module.
pub const QUAD_TOL: f64 = 1e-10;
/// Bisection tolerance for switching times.
pub const TIME_TOL: f64 = 1e-8;
/// Fixed RK4 step count over the horizon.
pub const ODE_STEPS: usize = 2000;
/// Points in the dense sign scan used for decreasing price trends.
pub const SCAN_POINTS: usize = 10_000;

/// `N(t) = (N0^(1/alpha) + t)^alpha`.
pub fn volume_curve(alpha: f64, n0: f64, t: f64) -> f64 {
    libm::pow(libm::pow(n0, 1.0 / alpha) + t, alpha)
}

/// `N'(t) = alpha (N0^(1/alpha) + t)^(alpha - 1)`.
pub fn volume_curve_rate(alpha: f64, n0: f64, t: f64) -> f64 {
    alpha * libm::pow(libm::pow(n0, 1.0 / alpha) + t, alpha - 1.0)
}

/// Expected-price model.
///
/// `ConstantDiscounted` means the discounted expected price `e^{-beta t} E P(t)`
/// stays at `p0`, not that `P(t)` itself is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum PriceModel {
    ConstantDiscounted { p0: f64 },
    Gbm { p0: f64, mu: f64, sigma: f64 },
}

impl PriceModel {
    pub fn p0(&self) -> f64 {
        match *self {
            PriceModel::ConstantDiscounted { p0 } | PriceModel::Gbm { p0, .. } => p0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PriceTrend {
    Constant,
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlParams {
    /// Volume exponent: `N(t) = (N0^(1/alpha) + t)^alpha`.
    pub alpha: f64,
    pub n0: f64,
    pub horizon: f64,
    pub beta: f64,
    pub r: f64,
    /// Slope of the running utility `l(x) = ell * x`.
    pub ell: f64,
    /// Slope of the terminal utility `h(x) = h * x`.
    pub h: f64,
    /// Rate cap; zero means no trading.
    pub nubar: f64,
    pub x0: f64,
    pub price: PriceModel,
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        first(self.violations())
    }

    pub fn violations(&self) -> Vec<Error> {
        let mut v = Violations::new();
        v.positive("alpha", self.alpha);
        v.positive("n0", self.n0);
        v.positive("horizon", self.horizon);
        v.positive("beta", self.beta);
        v.check(
            self.nubar >= 0.0 && self.nubar.is_finite(),
            "nubar",
            "nubar ≥ 0",
        );
        v.check(self.r >= 0.0 && self.r <= self.beta, "r", "0 ≤ r ≤ beta");
        v.check(
            self.ell >= 0.0 && self.h >= 0.0,
            "ell/h",
            "utility slopes must be nonnegative",
        );
        v.check(self.x0 >= 0.0 && self.x0 <= self.n0, "x0", "x0 ∈ [0, N0]");
        let (PriceModel::ConstantDiscounted { p0 } | PriceModel::Gbm { p0, .. }) = self.price;
        v.check(p0 >= 0.0 && p0.is_finite(), "p0", "P0 ≥ 0");
        if let PriceModel::Gbm { mu, sigma, .. } = self.price {
            v.check(mu.is_finite() && sigma >= 0.0, "gbm", "mu finite, sigma ≥ 0");
        }
        v.into_vec()
    }

    pub fn volume_at(&self, t: f64) -> f64 {
        volume_curve(self.alpha, self.n0, t)
    }

    pub fn volume_rate(&self, t: f64) -> f64 {
        volume_curve_rate(self.alpha, self.n0, t)
    }

    /// `e^{-beta t} E P(t)`.
    pub fn price_discounted(&self, t: f64) -> f64 {
        match self.price {
            PriceModel::ConstantDiscounted { p0 } => p0,
            PriceModel::Gbm { p0, mu, .. } => p0 * libm::exp((mu - self.beta) * t),
        }
    }

    pub fn price_trend(&self) -> PriceTrend {
        match self.price {
            PriceModel::ConstantDiscounted { .. } => PriceTrend::Constant,
            PriceModel::Gbm { mu, .. } if mu == self.beta => PriceTrend::Constant,
            PriceModel::Gbm { mu, .. } if mu > self.beta => PriceTrend::Increasing,
            PriceModel::Gbm { .. } => PriceTrend::Decreasing,
        }
    }

    /// `Psi(t) = (h e^{-beta T} N(T) + ell * int_t^T e^{-beta s} N(s) ds) / N(t)`.
    pub fn psi(&self, t: f64) -> Result<f64> {
        let big_t = self.horizon;
        let terminal = self.h * libm::exp(-self.beta * big_t) * self.volume_at(big_t);
        let running = if self.ell > 0.0 && t < big_t {
            self.ell
                * adaptive_simpson(
                    |s| libm::exp(-self.beta * s) * self.volume_at(s),
                    t,
                    big_t,
                    QUAD_TOL,
                )?
        } else {
            0.0
        };
        Ok((terminal + running) / self.volume_at(t))
    }

    /// `Pbeta(t) - Psi(t)`: positive means sell.
    pub fn gap(&self, t: f64) -> Result<f64> {
        Ok(self.price_discounted(t) - self.psi(t)?)
    }

    /// Whether `nubar * int_0^T dt / N(t) <= min(x0, N0 - x0) / N0`, i.e. a
    /// full-rate strategy cannot reach zero or the whole supply before `T`.
    pub fn check_volume_condition(&self) -> Result<bool> {
        let reach = self.nubar
            * adaptive_simpson(|t| 1.0 / self.volume_at(t), 0.0, self.horizon, QUAD_TOL)?;
        let room = self.x0.min(self.n0 - self.x0) / self.n0;
        Ok(reach <= room)
    }
}

/// Piecewise-constant full-rate control.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PiecewiseControl {
    pub horizon: f64,
    /// Strictly increasing switch times inside `(0, T)`.
    pub breakpoints: Vec<f64>,
    /// One rate per segment; segment `i` is `(b_{i-1}, b_i]`.
    pub values: Vec<f64>,
}

impl PiecewiseControl {
    pub fn constant(horizon: f64, value: f64) -> Self {
        Self {
            horizon,
            breakpoints: Vec::new(),
            values: alloc::vec![value],
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.breakpoints.iter().take_while(|&&b| b < t).count();
        self.values[k]
    }

    /// `(start, end, rate)` for every segment.
    pub fn segments(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut start = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let end = self.breakpoints.get(i).copied().unwrap_or(self.horizon);
            out.push((start, end, v));
            start = end;
        }
        out
    }
}

/// Anything that prescribes a trade rate `nu(t, x)`.
pub trait ControlLaw {
    fn rate(&self, t: f64, x: f64) -> f64;

    /// Times where the rate jumps; integrators put mesh points there.
    fn switch_times(&self) -> &[f64] {
        &[]
    }
}

impl ControlLaw for PiecewiseControl {
    fn rate(&self, t: f64, _x: f64) -> f64 {
        self.value_at(t)
    }

    fn switch_times(&self) -> &[f64] {
        &self.breakpoints
    }
}

impl<F: Fn(f64, f64) -> f64> ControlLaw for F {
    fn rate(&self, t: f64, x: f64) -> f64 {
        self(t, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StrategyShape {
    SellAlways,
    BuyAlways,
    BuyThenSell,
    SellThenBuy,
    /// Two or more switches.
    Multiple,
}

impl StrategyShape {
    pub fn label(self) -> &'static str {
        match self {
            StrategyShape::SellAlways => "sell_always",
            StrategyShape::BuyAlways => "buy_always",
            StrategyShape::BuyThenSell => "buy_then_sell",
            StrategyShape::SellThenBuy => "sell_then_buy",
            StrategyShape::Multiple => "multiple_crossings",
        }
    }

    fn from_pattern(first_buys: bool, switches: usize) -> Self {
        match (first_buys, switches) {
            (true, 0) => StrategyShape::BuyAlways,
            (false, 0) => StrategyShape::SellAlways,
            (true, 1) => StrategyShape::BuyThenSell,
            (false, 1) => StrategyShape::SellThenBuy,
            _ => StrategyShape::Multiple,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Classification {
    pub trend: PriceTrend,
    pub shape: StrategyShape,
    pub control: PiecewiseControl,
    /// Every located crossing of `Pbeta` and `Psi` in `(0, T)`.
    pub crossings: Vec<f64>,
}

/// Bisection root of `f` on `[lo, hi]` to absolute tolerance `tol`.
pub fn bisect<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if (flo > 0.0) == (fhi > 0.0) {
        return Err(Error::NoCrossing { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Root of `Pbeta(t) = Psi(t)` on `[0, T]`.
pub fn switching_time(params: &ControlParams) -> Result<f64> {
    switching_time_tol(params, TIME_TOL)
}

pub fn switching_time_tol(params: &ControlParams, tol: f64) -> Result<f64> {
    bisect(|t| params.gap(t), 0.0, params.horizon, tol)
}

/// Optimal full-rate strategy for linear utilities.
pub fn classify_strategy(params: &ControlParams) -> Result<Classification> {
    params.validate()?;
    if !params.check_volume_condition()? {
        return Err(Error::Precondition(
            "rate cap lets the holding leave (0, N(t)) before the horizon".into(),
        ));
    }
    let trend = params.price_trend();
    let big_t = params.horizon;
    let nubar = params.nubar;
    let (first_buys, crossings) = match trend {
        // gap = Pbeta - Psi is strictly increasing here
        PriceTrend::Constant | PriceTrend::Increasing => {
            let g0 = params.gap(0.0)?;
            let g_end = params.gap(big_t)?;
            if g0 >= 0.0 {
                (false, Vec::new())
            } else if g_end <= 0.0 {
                (true, Vec::new())
            } else {
                (true, alloc::vec![switching_time(params)?])
            }
        }
        PriceTrend::Decreasing => scan_crossings(params, SCAN_POINTS)?,
    };
    let mut values = Vec::with_capacity(crossings.len() + 1);
    let mut buying = first_buys;
    for _ in 0..=crossings.len() {
        values.push(if buying { nubar } else { -nubar });
        buying = !buying;
    }
    let shape = StrategyShape::from_pattern(first_buys, crossings.len());
    Ok(Classification {
        trend,
        shape,
        control: PiecewiseControl {
            horizon: big_t,
            breakpoints: crossings.clone(),
            values,
        },
        crossings,
    })
}

/// Sign changes of the gap on a uniform scan, each refined by bisection.
/// Returns whether the control starts by buying (gap <= 0 at t = 0).
pub fn scan_crossings(params: &ControlParams, points: usize) -> Result<(bool, Vec<f64>)> {
    let big_t = params.horizon;
    let dt = big_t / (points - 1) as f64;
    let mut prev_t = 0.0;
    let mut prev_buy = params.gap(0.0)? <= 0.0;
    let first_buys = prev_buy;
    let mut crossings = Vec::new();
    for i in 1..points {
        let t = if i == points - 1 { big_t } else { dt * i as f64 };
        let buy = params.gap(t)? <= 0.0;
        if buy != prev_buy {
            let root = bisect(|s| params.gap(s), prev_t, t, TIME_TOL)?;
            crossings.push(root);
        }
        prev_buy = buy;
        prev_t = t;
    }
    Ok((first_buys, crossings))
}

/// Shape predicted by the large-volume GBM sufficient conditions, when they
/// apply. `eps` is the margin in the monotonicity conditions.
pub fn gbm_predicted_shape(params: &ControlParams, eps: f64) -> Result<Option<StrategyShape>> {
    let PriceModel::Gbm { p0, mu, .. } = params.price else {
        return Ok(None);
    };
    let (alpha, n, big_t, beta, ell, h) = (
        params.alpha,
        params.n0,
        params.horizon,
        params.beta,
        params.ell,
        params.h,
    );
    if !(beta > mu) {
        return Ok(None);
    }
    let root = libm::pow(n, 1.0 / alpha);
    let rising = p0
        > (alpha * h * libm::exp(-mu * big_t) * libm::pow(root + big_t, alpha) / (n * root)
            + alpha * ell / (beta * root)
            + ell)
            / (beta - mu)
            + eps / root;
    let falling = p0
        < (alpha * h * libm::exp(-beta * big_t) / (root + big_t) + ell * libm::exp(-mu * big_t))
            / (beta - mu)
            - eps / root;
    let psi0 = params.psi(0.0)?;
    let end = libm::exp((beta - mu) * big_t) * params.psi(big_t)?;
    // `rising`: Psi - Pbeta increasing; `falling`: decreasing.
    let shape = if (rising && p0 > end) || (falling && p0 > psi0) {
        Some(StrategyShape::SellAlways)
    } else if rising && psi0 <= p0 && p0 < end {
        Some(StrategyShape::SellThenBuy)
    } else if falling && end <= p0 && p0 < psi0 {
        Some(StrategyShape::BuyThenSell)
    } else if (falling && p0 < end) || (rising && p0 < psi0) {
        Some(StrategyShape::BuyAlways)
    } else {
        None
    };
    Ok(shape)
}

/// Stopped state path of `X' = nu + (N'/N) X`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// Running objective accumulated along the path.
    pub running: Vec<f64>,
    /// `min(first exit time, T)`.
    pub exit_time: f64,
    pub exited: bool,
}

impl StatePath {
    pub fn terminal_state(&self) -> f64 {
        *self.states.last().expect("path has at least one point")
    }
}

fn mesh(params: &ControlParams, switches: &[f64]) -> Vec<f64> {
    let big_t = params.horizon;
    let mut times: Vec<f64> = (0..=ODE_STEPS)
        .map(|i| big_t * i as f64 / ODE_STEPS as f64)
        .collect();
    for &s in switches {
        if s > 0.0 && s < big_t {
            times.push(s);
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * big_t.max(1.0));
    times
}

/// Integrates the holdings under `control` with classical RK4 (step `T/2000`,
/// plus mesh points at the control's switch times), together with the running
/// objective `-Pbeta nu + e^{-beta t} ell X`. Stops at the first exit.
pub fn integrate_state<C: ControlLaw + ?Sized>(control: &C, params: &ControlParams) -> StatePath {
    let times_mesh = mesh(params, control.switch_times());
    let rhs = |t: f64, x: f64| -> (f64, f64) {
        let nu = control.rate(t, x);
        let dx = nu + params.volume_rate(t) / params.volume_at(t) * x;
        let dj = -params.price_discounted(t) * nu + libm::exp(-params.beta * t) * params.ell * x;
        (dx, dj)
    };
    let mut times = alloc::vec![0.0];
    let mut states = alloc::vec![params.x0];
    let mut running = alloc::vec![0.0];
    let (mut x, mut j) = (params.x0, 0.0);
    for w in times_mesh.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        // keep stage times strictly inside the step so a jump at `a` or `b`
        // is seen from the correct side
        let inner = 1e-9 * h;
        let stage = |t: f64| t.clamp(a + inner, b - inner);
        let (k1x, k1j) = rhs(stage(a), x);
        let (k2x, k2j) = rhs(stage(a + 0.5 * h), x + 0.5 * h * k1x);
        let (k3x, k3j) = rhs(stage(a + 0.5 * h), x + 0.5 * h * k2x);
        let (k4x, k4j) = rhs(stage(b), x + h * k3x);
        let nx = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        let nj = j + h / 6.0 * (k1j + 2.0 * k2j + 2.0 * k3j + k4j);
        let cap = params.volume_at(b);
        if nx <= 0.0 || nx >= cap {
            let target = if nx <= 0.0 { 0.0 } else { cap };
            let x_cap = params.volume_at(a);
            // linear location of the crossing inside the step
            let (from, to) = if nx <= 0.0 {
                (x, nx)
            } else {
                (x - x_cap, nx - cap)
            };
            let frac = if from != to { from / (from - to) } else { 1.0 };
            let te = a + frac.clamp(0.0, 1.0) * h;
            times.push(te);
            states.push(if nx <= 0.0 { target } else { params.volume_at(te) });
            running.push(j + frac.clamp(0.0, 1.0) * (nj - j));
            return StatePath {
                times,
                states,
                running,
                exit_time: te,
                exited: true,
            };
        }
        x = nx;
        j = nj;
        times.push(b);
        states.push(x);
        running.push(j);
    }
    StatePath {
        times,
        states,
        running,
        exit_time: params.horizon,
        exited: false,
    }
}

/// `J2 = int_0^T [-Pbeta nu + e^{-beta t} ell X] dt + e^{-beta T} h X(T)`
/// along [`integrate_state`].
pub fn evaluate_objective<C: ControlLaw + ?Sized>(control: &C, params: &ControlParams) -> f64 {
    let path = integrate_state(control, params);
    let running = *path.running.last().unwrap_or(&0.0);
    running + libm::exp(-params.beta * path.exit_time) * params.h * path.terminal_state()
}

/// `Psi(0) x0 + int_0^T (Psi - Pbeta) nu dt` for a piecewise control whose
/// path stays interior; an algebraic route to `J2` for linear utilities.
pub fn objective_closed_form(control: &PiecewiseControl, params: &ControlParams) -> Result<f64> {
    let mut total = params.psi(0.0)? * params.x0;
    for (a, b, nu) in control.segments() {
        if b > a && nu != 0.0 {
            total += nu * adaptive_simpson(|t| -params.gap(t).unwrap_or(f64::NAN), a, b, 1e-9)?;
        }
    }
    Ok(total)
}

/// Value function on a `(M + 1) x (J + 1)` grid in `(t, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub times: Vec<f64>,
    pub y_nodes: Vec<f64>,
    /// Row-major: `values[n * (J + 1) + j] = v(t_n, y_j N(t_n))`.
    pub values: Vec<f64>,
    /// `N(t_n)` for each slice.
    pub volumes: Vec<f64>,
    /// `Pbeta(t_n)` for each slice.
    pub ptilde: Vec<f64>,
    pub nubar: f64,
}

impl ValueGrid {
    pub fn time_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn space_intervals(&self) -> usize {
        self.y_nodes.len() - 1
    }

    pub fn dy(&self) -> f64 {
        1.0 / self.space_intervals() as f64
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        let w = self.y_nodes.len();
        &self.values[n * w..(n + 1) * w]
    }

    /// `v(t_n, x)` by linear interpolation in `y = x / N(t_n)`.
    pub fn value_at(&self, n: usize, x: f64) -> f64 {
        let y = (x / self.volumes[n]).clamp(0.0, 1.0);
        interpolate(self.slice(n), y)
    }

    /// Centered `dv/dx` at interior nodes, one-sided at the two ends.
    pub fn gradient_x(&self, n: usize) -> Vec<f64> {
        let row = self.slice(n);
        let jn = row.len() - 1;
        let dx = self.dy() * self.volumes[n];
        (0..=jn)
            .map(|j| match j {
                0 => (row[1] - row[0]) / dx,
                j if j == jn => (row[jn] - row[jn - 1]) / dx,
                j => (row[j + 1] - row[j - 1]) / (2.0 * dx),
            })
            .collect()
    }
}

pub(crate) fn interpolate(row: &[f64], y: f64) -> f64 {
    let jn = row.len() - 1;
    let pos = y * jn as f64;
    let j = (libm::floor(pos) as usize).min(jn - 1);
    let w = pos - j as f64;
    row[j] * (1.0 - w) + row[j + 1] * w
}

/// Solves the capped-rate HJB equation backward from `T` for the linear
/// utilities in `params`.
pub fn solve_hjb(params: &ControlParams, time_steps: usize, space_intervals: usize) -> Result<ValueGrid> {
    let (ell, h) = (params.ell, params.h);
    solve_hjb_with(params, |x| ell * x, |x| h * x, time_steps, space_intervals)
}

/// [`solve_hjb`] for general running utility `running(x)` and terminal
/// utility `terminal(x)`.
///
/// Explicit Euler in time, and for the Hamiltonian the Bellman upwind form
/// `max(0, nubar (D+ v / N - Pbeta), -nubar (D- v / N - Pbeta))`, which is
/// monotone under `dt <= dy N(0) / nubar`.
pub fn solve_hjb_with<L, H>(
    params: &ControlParams,
    running: L,
    terminal: H,
    time_steps: usize,
    space_intervals: usize,
) -> Result<ValueGrid>
where
    L: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    params.validate()?;
    if time_steps == 0 || space_intervals < 2 {
        return Err(invalid("grid", "need M ≥ 1 and J ≥ 2"));
    }
    let (m, jn) = (time_steps, space_intervals);
    let big_t = params.horizon;
    let dt = big_t / m as f64;
    let dy = 1.0 / jn as f64;
    let required_dt = if params.nubar > 0.0 {
        dy * params.volume_at(0.0) / params.nubar
    } else {
        f64::INFINITY
    };
    if dt > required_dt * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, required_dt });
    }
    let times: Vec<f64> = (0..=m).map(|n| big_t * n as f64 / m as f64).collect();
    let y_nodes: Vec<f64> = (0..=jn).map(|j| j as f64 / jn as f64).collect();
    let volumes: Vec<f64> = times.iter().map(|&t| params.volume_at(t)).collect();
    let ptilde: Vec<f64> = times.iter().map(|&t| params.price_discounted(t)).collect();
    let w = jn + 1;
    let mut values = alloc::vec![0.0; (m + 1) * w];
    let disc_t = libm::exp(-params.beta * big_t);
    for (j, &y) in y_nodes.iter().enumerate() {
        values[m * w + j] = disc_t * terminal(y * volumes[m]);
    }
    let nubar = params.nubar;
    for n in (0..m).rev() {
        let (head, tail) = values.split_at_mut((n + 1) * w);
        let next = &tail[..w];
        let cur = &mut head[n * w..];
        // coefficients frozen at the known slice t_{n+1}
        let vol = volumes[n + 1];
        let price = ptilde[n + 1];
        let disc = libm::exp(-params.beta * times[n + 1]);
        for j in 1..jn {
            let up = (next[j + 1] - next[j]) / (dy * vol);
            let down = (next[j] - next[j - 1]) / (dy * vol);
            let ham = (nubar * (up - price)).max(-nubar * (down - price)).max(0.0);
            cur[j] = next[j] + dt * (disc * running(y_nodes[j] * vol) + ham);
        }
        let disc_n = libm::exp(-params.beta * times[n]);
        cur[0] = disc_n * terminal(0.0);
        cur[jn] = disc_n * terminal(volumes[n]);
        if cur[..w].iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value at t = {}",
                times[n]
            )));
        }
    }
    Ok(ValueGrid {
        times,
        y_nodes,
        values,
        volumes,
        ptilde,
        nubar,
    })
}

/// Feedback control `nu(t_n, y_j) = nubar * sign(dv/dx - Pbeta)`, sign(0) = +1.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub times: Vec<f64>,
    pub volumes: Vec<f64>,
    pub space_intervals: usize,
    /// Row-major like [`ValueGrid::values`].
    pub rates: Vec<f64>,
}

impl ControlField {
    pub fn row(&self, n: usize) -> &[f64] {
        let w = self.space_intervals + 1;
        &self.rates[n * w..(n + 1) * w]
    }

    fn slice_index(&self, t: f64) -> usize {
        let m = self.times.len() - 1;
        let big_t = self.times[m];
        (libm::floor(t / big_t * m as f64).max(0.0) as usize).min(m)
    }

    /// Nearest node in `y` on the slice at or before `t`.
    pub fn rate_at(&self, t: f64, x: f64) -> f64 {
        let n = self.slice_index(t);
        let y = (x / self.volumes[n]).clamp(0.0, 1.0);
        let j = libm::round(y * self.space_intervals as f64) as usize;
        self.row(n)[j.min(self.space_intervals)]
    }
}

impl ControlLaw for ControlField {
    fn rate(&self, t: f64, x: f64) -> f64 {
        self.rate_at(t, x)
    }
}

pub fn extract_control(grid: &ValueGrid) -> ControlField {
    let mut rates = Vec::with_capacity(grid.values.len());
    for n in 0..grid.times.len() {
        let price = grid.ptilde[n];
        rates.extend(grid.gradient_x(n).into_iter().map(|g| {
            if g - price >= 0.0 {
                grid.nubar
            } else {
                -grid.nubar
            }
        }));
    }
    ControlField {
        times: grid.times.clone(),
        volumes: grid.volumes.clone(),
        space_intervals: grid.space_intervals(),
        rates,
    }
}
