//! Mean-field trading equilibrium with linear price impact and quadratic
//! trading cost `L(x) = rho x^2`.
//!
//! One Picard pass maps a candidate average trade rate `nu(t)` to
//! investor holdings `Z`, the impacted price, the miners' value function
//! (backward), their feedback control, the density of holdings (forward) and
//! finally the density-weighted control `nu_hat(t)`. The equilibrium is a fixed
//! point of that map.
//!
//! Both PDEs are solved in the share coordinate `y = x / N(t)` on `[0, 1]`.
//! Densities are stored per unit `y`, so `int m dy = 1`; the density per unit
//! `x` is `m / N(t)`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{first, invalid, Error, Result, Violations};
use crate::hjb::{volume_curve, volume_curve_rate, ControlField, ValueGrid};

pub const DEFAULT_GRID: usize = 200;
pub const DEFAULT_DAMPING: f64 = 0.5;
/// Largest tolerated mass in the two boundary half-cells.
pub const ESCAPE_TOL: f64 = 1e-6;
/// Negative mass that may be clipped away before transport reports an error.
pub const CLIP_TOL: f64 = 1e-10;
/// Courant number for the backward HJB substeps.
const HJB_COURANT: f64 = 0.9;
/// Courant number for transport; half-cells at the ends halve the usual 1/2.
const TRANSPORT_COURANT: f64 = 0.25;
const MAX_SUBSTEPS: usize = 1 << 20;

/// Constant density `density` on `[from, to]` in holdings units.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensityPiece {
    pub from: f64,
    pub to: f64,
    pub density: f64,
}

/// Piecewise-constant initial density of miner holdings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InitialDensity {
    pub pieces: Vec<DensityPiece>,
}

impl InitialDensity {
    /// Uniform probability density on `[a, b]`.
    pub fn uniform(a: f64, b: f64) -> Self {
        Self {
            pieces: alloc::vec![DensityPiece {
                from: a,
                to: b,
                density: 1.0 / (b - a),
            }],
        }
    }

    pub fn mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.density * (p.to - p.from)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.density * 0.5 * (p.to * p.to - p.from * p.from))
            .sum::<f64>()
            / self.mass()
    }

    pub fn support(&self) -> (f64, f64) {
        let lo = self.pieces.iter().map(|p| p.from).fold(f64::INFINITY, f64::min);
        let hi = self.pieces.iter().map(|p| p.to).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Cell averages on the node-centred cells of `[0, 1]` in `y = x / n0`,
    /// as a density per unit `y`.
    pub fn project(&self, n0: f64, space_intervals: usize) -> Vec<f64> {
        let jn = space_intervals;
        let dy = 1.0 / jn as f64;
        (0..=jn)
            .map(|j| {
                let lo = ((j as f64 - 0.5) * dy).max(0.0) * n0;
                let hi = ((j as f64 + 0.5) * dy).min(1.0) * n0;
                let mass: f64 = self
                    .pieces
                    .iter()
                    .map(|p| p.density * (hi.min(p.to) - lo.max(p.from)).max(0.0))
                    .sum();
                mass / (cell_weight(j, jn) * dy)
            })
            .collect()
    }
}

fn cell_weight(j: usize, jn: usize) -> f64 {
    if j == 0 || j == jn {
        0.5
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MfgParams {
    /// Number of miners.
    pub k: u32,
    pub alpha: f64,
    pub n0: f64,
    /// Investors' holdings at `t = 0`.
    pub z0: f64,
    pub eta: f64,
    /// Price volatility. Only the expected price enters the equilibrium, so
    /// this value does not affect any output.
    #[cfg_attr(feature = "serde", serde(default))]
    pub sigma: f64,
    pub rho: f64,
    pub p0: f64,
    pub beta: f64,
    pub ell: f64,
    pub h: f64,
    pub horizon: f64,
    pub m0: InitialDensity,
    #[cfg_attr(feature = "serde", serde(default = "default_grid"))]
    pub time_steps: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_grid"))]
    pub space_intervals: usize,
}

#[cfg(feature = "serde")]
fn default_grid() -> usize {
    DEFAULT_GRID
}

impl MfgParams {
    pub fn validate(&self) -> Result<()> {
        first(self.violations())
    }

    pub fn violations(&self) -> Vec<Error> {
        let mut v = Violations::new();
        v.check(self.k >= 2, "k", "need at least 2 miners");
        v.positive("alpha", self.alpha);
        v.positive("n0", self.n0);
        v.positive("eta", self.eta);
        v.positive("rho", self.rho);
        v.positive("beta", self.beta);
        v.positive("horizon", self.horizon);
        v.check(self.z0 >= 0.0 && self.z0 < self.n0, "z0", "Z0 ∈ [0, N0)");
        v.check(self.sigma >= 0.0, "sigma", "sigma ≥ 0");
        v.check(
            self.p0 >= 0.0 && self.ell >= 0.0 && self.h >= 0.0,
            "p0/ell/h",
            "must be nonnegative",
        );
        v.check(
            self.time_steps > 0 && self.space_intervals >= 4,
            "grid",
            "need M ≥ 1 and J ≥ 4",
        );
        if self.m0.pieces.is_empty() {
            v.check(false, "m0", "no pieces");
            return v.into_vec();
        }
        let pieces_ok = self
            .m0
            .pieces
            .iter()
            .all(|p| p.from < p.to && p.density >= 0.0 && p.density.is_finite());
        v.check(pieces_ok, "m0", "each piece needs from < to and density ≥ 0");
        if !pieces_ok {
            return v.into_vec();
        }
        let (lo, hi) = self.m0.support();
        v.check(
            lo > 0.0 && hi < self.n0,
            "m0",
            "support must lie inside (0, N0)",
        );
        let mass = self.m0.mass();
        v.check(
            (mass - 1.0).abs() <= 1e-10,
            "m0",
            format!("mass {mass} ≠ 1"),
        );
        let total = f64::from(self.k) * self.m0.mean() + self.z0;
        v.check(
            (total - self.n0).abs() <= 1e-8,
            "m0",
            format!("K * mean(m0) + Z0 = {total} but N0 = {}", self.n0),
        );
        v.into_vec()
    }

    pub fn volume_at(&self, t: f64) -> f64 {
        volume_curve(self.alpha, self.n0, t)
    }

    pub fn volume_rate(&self, t: f64) -> f64 {
        volume_curve_rate(self.alpha, self.n0, t)
    }

    pub fn times(&self) -> Vec<f64> {
        let m = self.time_steps;
        (0..=m).map(|n| self.horizon * n as f64 / m as f64).collect()
    }

    pub fn dy(&self) -> f64 {
        1.0 / self.space_intervals as f64
    }
}

/// Undiscounted mean price `P0 - eta (Z(t) - Z0)`.
pub fn impact_price(params: &MfgParams, z_path: &[f64]) -> Vec<f64> {
    z_path
        .iter()
        .map(|&z| params.p0 - params.eta * (z - params.z0))
        .collect()
}

/// `e^{-beta t} [P0 - eta (Z(t) - Z0)]` on the time grid.
pub fn impact_price_mean(params: &MfgParams, z_path: &[f64]) -> Vec<f64> {
    params
        .times()
        .iter()
        .zip(impact_price(params, z_path))
        .map(|(&t, p)| libm::exp(-params.beta * t) * p)
        .collect()
}

/// `Z(t) = Z0 - K int_0^t nu`, cumulative trapezoid on the time grid.
pub fn investor_holdings(nu_eq: &[f64], params: &MfgParams) -> Result<Vec<f64>> {
    let times = params.times();
    if nu_eq.len() != times.len() {
        return Err(Error::Shape(format!(
            "nu has {} points, grid has {}",
            nu_eq.len(),
            times.len()
        )));
    }
    let k = f64::from(params.k);
    let mut z = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for (n, &t) in times.iter().enumerate() {
        if n > 0 {
            acc += 0.5 * (times[n] - times[n - 1]) * (nu_eq[n] + nu_eq[n - 1]);
        }
        let value = params.z0 - k * acc;
        let volume = params.volume_at(t);
        if !(value > 0.0 && value < volume) {
            return Err(Error::SupplyExhaustion {
                t,
                z: value,
                volume,
            });
        }
        z.push(value);
    }
    Ok(z)
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

/// Backward solve of the quadratic-cost HJB equation with investor holdings
/// `z_path` and discounted price `ptilde` on the time grid.
///
/// Monotone explicit scheme: the residual drift `y N' Z / (N (N - Z))` is
/// nonnegative and upwinded with `D+`; the Hamiltonian uses the Bellman split
/// `max(max(0, D+/N - Pb)^2, min(0, D-/N - Pb)^2) e^{beta t} N' / (4 rho)`.
/// Each grid step is cut into substeps that respect the local Courant bound.
pub fn solve_hjb_mfg(params: &MfgParams, z_path: &[f64], ptilde: &[f64]) -> Result<ValueGrid> {
    let times = params.times();
    let (m, jn) = (params.time_steps, params.space_intervals);
    if z_path.len() != m + 1 || ptilde.len() != m + 1 {
        return Err(Error::Shape("Z and price must live on the time grid".into()));
    }
    for (&t, &z) in times.iter().zip(z_path) {
        if !(z > 0.0 && z < params.volume_at(t)) {
            return Err(Error::SupplyExhaustion {
                t,
                z,
                volume: params.volume_at(t),
            });
        }
    }
    let dy = params.dy();
    let y_nodes: Vec<f64> = (0..=jn).map(|j| j as f64 * dy).collect();
    let volumes: Vec<f64> = times.iter().map(|&t| params.volume_at(t)).collect();
    let w = jn + 1;
    let mut values = alloc::vec![0.0; (m + 1) * w];
    let terminal = |t: f64, x: f64| libm::exp(-params.beta * t) * params.h * x;
    for j in 0..=jn {
        values[m * w + j] = terminal(times[m], y_nodes[j] * volumes[m]);
    }
    let mut cur = values[m * w..].to_vec();
    let mut next = cur.clone();
    for n in (0..m).rev() {
        let (t_lo, t_hi) = (times[n], times[n + 1]);
        let mut tau = t_hi;
        let mut substeps = 0usize;
        while tau > t_lo {
            let wgt = (tau - t_lo) / (t_hi - t_lo);
            let z = lerp(z_path[n], z_path[n + 1], wgt);
            let pb = lerp(ptilde[n], ptilde[n + 1], wgt);
            let vol = params.volume_at(tau);
            let rate = params.volume_rate(tau);
            let disc = libm::exp(-params.beta * tau);
            let cost = rate / (disc * 4.0 * params.rho);
            let drift = rate * z / (vol * (vol - z));
            let mut speed = drift;
            for j in 1..jn {
                let up = (cur[j + 1] - cur[j]) / (dy * vol) - pb;
                let down = (cur[j] - cur[j - 1]) / (dy * vol) - pb;
                speed = speed.max(drift + 2.0 * cost * up.abs().max(down.abs()) / vol);
            }
            let dt = if speed > 0.0 {
                (HJB_COURANT * dy / speed).min(tau - t_lo)
            } else {
                tau - t_lo
            };
            // snap the last sliver onto the grid slice
            let dt = if tau - dt - t_lo < 1e-12 * (t_hi - t_lo) {
                tau - t_lo
            } else {
                dt
            };
            for j in 1..jn {
                let d_up = (cur[j + 1] - cur[j]) / dy;
                let up = d_up / vol - pb;
                let down = (cur[j] - cur[j - 1]) / (dy * vol) - pb;
                let ham = cost * {
                    let (u, d) = (up.max(0.0), down.min(0.0));
                    (u * u).max(d * d)
                };
                let running = disc * params.ell * y_nodes[j] * vol;
                next[j] = cur[j] + dt * (running + y_nodes[j] * drift * d_up + ham);
            }
            tau = if dt == tau - t_lo { t_lo } else { tau - dt };
            next[0] = terminal(tau, 0.0);
            next[jn] = terminal(tau, params.volume_at(tau));
            core::mem::swap(&mut cur, &mut next);
            substeps += 1;
            if substeps > MAX_SUBSTEPS {
                return Err(Error::Numerical(format!(
                    "HJB substep limit exceeded near t = {tau}"
                )));
            }
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value at t = {t_lo}")));
        }
        values[n * w..(n + 1) * w].copy_from_slice(&cur);
    }
    Ok(ValueGrid {
        times,
        y_nodes,
        values,
        volumes,
        ptilde: ptilde.to_vec(),
        nubar: f64::INFINITY,
    })
}

/// `dv/dx` on one slice: centred in the interior, and one-sided from the
/// inside at the nodes next to the Dirichlet ends, which need not be
/// compatible with the interior solution.
pub fn interior_gradient(row: &[f64], dx: f64) -> Vec<f64> {
    let jn = row.len() - 1;
    let mut g = alloc::vec![0.0; jn + 1];
    for j in 2..jn - 1 {
        g[j] = (row[j + 1] - row[j - 1]) / (2.0 * dx);
    }
    g[1] = (row[2] - row[1]) / dx;
    g[jn - 1] = (row[jn - 1] - row[jn - 2]) / dx;
    g[0] = g[1];
    g[jn] = g[jn - 1];
    g
}

/// `nu_*(t, x) = N'(t) / (2 rho) (e^{beta t} dv/dx - Ptilde(t))` with the
/// undiscounted price `price`.
pub fn optimal_control_field(grid: &ValueGrid, params: &MfgParams, price: &[f64]) -> ControlField {
    let jn = grid.space_intervals();
    let mut rates = Vec::with_capacity(grid.values.len());
    for (n, &t) in grid.times.iter().enumerate() {
        let scale = params.volume_rate(t) / (2.0 * params.rho);
        let grow = libm::exp(params.beta * t);
        let dx = grid.dy() * grid.volumes[n];
        rates.extend(
            interior_gradient(grid.slice(n), dx)
                .into_iter()
                .map(|g| scale * (grow * g - price[n])),
        );
    }
    ControlField {
        times: grid.times.clone(),
        volumes: grid.volumes.clone(),
        space_intervals: jn,
        rates,
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// `dm/dt` for the conservative MUSCL (minmod) upwind scheme with zero flux
/// through `y = 0` and `y = 1`. `vel` holds node velocities.
fn transport_rhs(m: &[f64], vel: &[f64], dy: f64, out: &mut [f64]) {
    let jn = m.len() - 1;
    let slope = |j: usize| {
        if j == 0 || j == jn {
            0.0
        } else {
            minmod(m[j + 1] - m[j], m[j] - m[j - 1])
        }
    };
    let mut flux_left = 0.0;
    let mut slope_j = slope(0);
    for j in 0..=jn {
        let flux_right = if j == jn {
            0.0
        } else {
            let slope_next = slope(j + 1);
            let u = 0.5 * (vel[j] + vel[j + 1]);
            let left = m[j] + 0.5 * slope_j;
            let right = m[j + 1] - 0.5 * slope_next;
            slope_j = slope_next;
            u.max(0.0) * left + u.min(0.0) * right
        };
        out[j] = -(flux_right - flux_left) / (cell_weight(j, jn) * dy);
        flux_left = flux_right;
    }
}

/// Trapezoid `int f dy` on the node grid.
pub fn trapezoid(f: &[f64], dy: f64) -> f64 {
    let jn = f.len() - 1;
    f.iter()
        .enumerate()
        .map(|(j, v)| cell_weight(j, jn) * v)
        .sum::<f64>()
        * dy
}

fn boundary_mass(m: &[f64], dy: f64) -> f64 {
    0.5 * dy * (m[0] + m[m.len() - 1])
}

/// Forward transport of the y-density `m0` under the feedback control
/// `field`: velocity `nu_* / N + y N' Z / (N (N - Z))`. Heun time stepping
/// with substeps at Courant number 1/4. Returns `(M + 1) x (J + 1)` rows.
pub fn transport_density(
    params: &MfgParams,
    field: &ControlField,
    z_path: &[f64],
    m0: &[f64],
) -> Result<Vec<f64>> {
    let times = params.times();
    let (m_steps, jn) = (params.time_steps, params.space_intervals);
    if m0.len() != jn + 1 || field.space_intervals != jn || field.times.len() != m_steps + 1 {
        return Err(Error::Shape("density, control and grid disagree".into()));
    }
    let dy = params.dy();
    let velocity = |n: usize| -> Vec<f64> {
        let t = times[n];
        let (vol, rate, z) = (params.volume_at(t), params.volume_rate(t), z_path[n]);
        let drift = rate * z / (vol * (vol - z));
        field
            .row(n)
            .iter()
            .enumerate()
            .map(|(j, nu)| nu / vol + j as f64 * dy * drift)
            .collect()
    };
    let w = jn + 1;
    let mut out = Vec::with_capacity((m_steps + 1) * w);
    out.extend_from_slice(m0);
    let mut m = m0.to_vec();
    let mut stage = alloc::vec![0.0; w];
    let mut k1 = alloc::vec![0.0; w];
    let mut k2 = alloc::vec![0.0; w];
    let mut vel = alloc::vec![0.0; w];
    let mut vel_lo = velocity(0);
    for n in 0..m_steps {
        let vel_hi = velocity(n + 1);
        let big_dt = times[n + 1] - times[n];
        let vmax = vel_lo
            .iter()
            .chain(&vel_hi)
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let substeps = (libm::ceil(vmax * big_dt / (TRANSPORT_COURANT * dy)) as usize).max(1);
        if substeps > MAX_SUBSTEPS {
            return Err(Error::Numerical(format!("transport too fast at t = {}", times[n])));
        }
        let dt = big_dt / substeps as f64;
        for s in 0..substeps {
            let w0 = s as f64 / substeps as f64;
            let w1 = (s + 1) as f64 / substeps as f64;
            for j in 0..w {
                vel[j] = lerp(vel_lo[j], vel_hi[j], w0);
            }
            transport_rhs(&m, &vel, dy, &mut k1);
            for j in 0..w {
                stage[j] = m[j] + dt * k1[j];
                vel[j] = lerp(vel_lo[j], vel_hi[j], w1);
            }
            transport_rhs(&stage, &vel, dy, &mut k2);
            for j in 0..w {
                m[j] = 0.5 * (m[j] + stage[j] + dt * k2[j]);
            }
        }
        let deficit: f64 = m
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < 0.0)
            .map(|(j, v)| -v * cell_weight(j, jn) * dy)
            .sum();
        if deficit > CLIP_TOL {
            return Err(Error::Numerical(format!(
                "negative density mass {deficit:e} at t = {}",
                times[n + 1]
            )));
        }
        if deficit > 0.0 {
            let before = trapezoid(&m, dy);
            m.iter_mut().for_each(|v| *v = v.max(0.0));
            let after = trapezoid(&m, dy);
            m.iter_mut().for_each(|v| *v *= before / after);
        }
        let escaped = boundary_mass(&m, dy);
        if escaped > ESCAPE_TOL {
            return Err(Error::BoundaryEscape {
                t: times[n + 1],
                escaped,
            });
        }
        out.extend_from_slice(&m);
        vel_lo = vel_hi;
    }
    Ok(out)
}

/// `nu_hat(t_n) = int nu_*(t_n, y) m(t_n, y) dy` by the trapezoid rule.
pub fn aggregate_trade(field: &ControlField, density: &[f64]) -> Vec<f64> {
    let jn = field.space_intervals;
    let w = jn + 1;
    let dy = 1.0 / jn as f64;
    (0..field.times.len())
        .map(|n| {
            let prod: Vec<f64> = field
                .row(n)
                .iter()
                .zip(&density[n * w..(n + 1) * w])
                .map(|(a, b)| a * b)
                .collect();
            trapezoid(&prod, dy)
        })
        .collect()
}

/// Moments of the holdings distribution on one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Moments {
    pub t: f64,
    pub mass: f64,
    /// Mean holdings `int x m dx`.
    pub mean: f64,
    pub variance: f64,
    /// Mean of `x / N(t)`.
    pub mean_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    pub times: Vec<f64>,
    pub nu_eq: Vec<f64>,
    pub z_path: Vec<f64>,
    /// Undiscounted impacted mean price.
    pub price: Vec<f64>,
    /// Discounted impacted mean price.
    pub ptilde: Vec<f64>,
    /// Density per unit `y`, row-major `(M + 1) x (J + 1)`.
    pub density: Vec<f64>,
    pub value: ValueGrid,
    pub control: ControlField,
    /// `nu_hat` from the final pass.
    pub nu_hat: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_history: Vec<f64>,
}

impl MeanFieldState {
    pub fn space_intervals(&self) -> usize {
        self.control.space_intervals
    }

    pub fn density_row(&self, n: usize) -> &[f64] {
        let w = self.space_intervals() + 1;
        &self.density[n * w..(n + 1) * w]
    }

    pub fn moments(&self, n: usize) -> Moments {
        let jn = self.space_intervals();
        let dy = 1.0 / jn as f64;
        let row = self.density_row(n);
        let mass = trapezoid(row, dy);
        let first: Vec<f64> = row.iter().enumerate().map(|(j, m)| j as f64 * dy * m).collect();
        let second: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(j, m)| {
                let y = j as f64 * dy;
                y * y * m
            })
            .collect();
        let share = trapezoid(&first, dy) / mass;
        let share_sq = trapezoid(&second, dy) / mass;
        let vol = self.value.volumes[n];
        Moments {
            t: self.times[n],
            mass,
            mean: share * vol,
            variance: (share_sq - share * share).max(0.0) * vol * vol,
            mean_share: share,
        }
    }

    /// `sup_t |nu_eq - N'/(2 rho) [e^{beta t} int dv/dx m dx - P0 - eta K int nu_eq]|`.
    pub fn fixed_point_defect(&self, params: &MfgParams) -> f64 {
        let jn = self.space_intervals();
        let dy = 1.0 / jn as f64;
        let k = f64::from(params.k);
        let mut cumulative = 0.0;
        let mut worst = 0.0f64;
        for (n, &t) in self.times.iter().enumerate() {
            if n > 0 {
                cumulative +=
                    0.5 * (t - self.times[n - 1]) * (self.nu_eq[n] + self.nu_eq[n - 1]);
            }
            let grad = interior_gradient(self.value.slice(n), dy * self.value.volumes[n]);
            let weighted: Vec<f64> = grad.iter().zip(self.density_row(n)).map(|(g, m)| g * m).collect();
            let rhs = params.volume_rate(t) / (2.0 * params.rho)
                * (libm::exp(params.beta * t) * trapezoid(&weighted, dy)
                    - params.p0
                    - params.eta * k * cumulative);
            worst = worst.max((self.nu_eq[n] - rhs).abs());
        }
        worst
    }
}

struct Pass {
    z_path: Vec<f64>,
    price: Vec<f64>,
    ptilde: Vec<f64>,
    value: ValueGrid,
    control: ControlField,
    density: Vec<f64>,
    nu_hat: Vec<f64>,
}

fn picard_pass(params: &MfgParams, nu: &[f64], m0: &[f64]) -> Result<Pass> {
    let z_path = investor_holdings(nu, params)?;
    let price = impact_price(params, &z_path);
    let ptilde = impact_price_mean(params, &z_path);
    let value = solve_hjb_mfg(params, &z_path, &ptilde)?;
    let control = optimal_control_field(&value, params, &price);
    let density = transport_density(params, &control, &z_path, m0)?;
    let nu_hat = aggregate_trade(&control, &density);
    Ok(Pass {
        z_path,
        price,
        ptilde,
        value,
        control,
        density,
        nu_hat,
    })
}

/// Damped Picard iteration `nu <- (1 - damping) nu + damping nu_hat` from
/// `nu = 0`, stopping once the sup-norm update is at most `tol`.
///
/// Running out of iterations is not an error: the returned state has
/// `converged == false` and carries the residual history.
pub fn equilibrium_iterate(
    params: &MfgParams,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<MeanFieldState> {
    let start = alloc::vec![0.0; params.time_steps + 1];
    equilibrium_iterate_from(params, &start, damping, tol, max_iter)
}

/// [`equilibrium_iterate`] from the initial guess `start`.
pub fn equilibrium_iterate_from(
    params: &MfgParams,
    start: &[f64],
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<MeanFieldState> {
    params.validate()?;
    if start.len() != params.time_steps + 1 {
        return Err(Error::Shape("initial guess must live on the time grid".into()));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(invalid("damping", "damping ∈ (0, 1]"));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(invalid("tol/max_iter", "need tol > 0 and max_iter ≥ 1"));
    }
    let m0 = params.m0.project(params.n0, params.space_intervals);
    let mut nu = start.to_vec();
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let pass = picard_pass(params, &nu, &m0)?;
        let mut residual = 0.0f64;
        for (v, hat) in nu.iter_mut().zip(&pass.nu_hat) {
            let updated = (1.0 - damping) * *v + damping * hat;
            residual = residual.max((updated - *v).abs());
            *v = updated;
        }
        history.push(residual);
        if residual <= tol {
            converged = true;
            break;
        }
    }
    let pass = picard_pass(params, &nu, &m0)?;
    Ok(MeanFieldState {
        times: params.times(),
        nu_eq: nu,
        z_path: pass.z_path,
        price: pass.price,
        ptilde: pass.ptilde,
        density: pass.density,
        value: pass.value,
        control: pass.control,
        nu_hat: pass.nu_hat,
        residual: *history.last().expect("at least one iteration"),
        iterations: history.len(),
        converged,
        residual_history: history,
    })
}
