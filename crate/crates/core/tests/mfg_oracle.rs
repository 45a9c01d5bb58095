use posdyn_core::hjb::ControlField;
use posdyn_core::mfg::{
    aggregate_trade, equilibrium_iterate, equilibrium_iterate_from, impact_price_mean,
    investor_holdings, solve_hjb_mfg, transport_density, trapezoid, InitialDensity, MfgParams,
};
use posdyn_core::Error;

fn reference(grid: usize) -> MfgParams {
    MfgParams {
        k: 2,
        alpha: 1.0,
        n0: 100.0,
        z0: 50.0,
        eta: 0.05,
        sigma: 0.2,
        rho: 1.0,
        p0: 3.0,
        beta: 0.05,
        ell: 0.05,
        h: 1.0,
        horizon: 10.0,
        m0: InitialDensity::uniform(20.0, 30.0),
        time_steps: grid,
        space_intervals: grid,
    }
}

/// With linear utilities `v = A(t) x + B(t)` away from the boundaries, so the
/// equilibrium solves a forward-backward ODE system:
/// `A' = -e^{-beta t} ell - N' A / (N - Z)`, `A(T) = e^{-beta T} h`,
/// `nu = N' / (2 rho) (e^{beta t} A - P0 - eta K int nu)`.
fn ode_equilibrium(p: &MfgParams, steps: usize) -> (Vec<f64>, Vec<f64>) {
    let dt = p.horizon / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    let vol = |t: f64| (p.n0.powf(1.0 / p.alpha) + t).powf(p.alpha);
    let rate = |t: f64| p.alpha * (p.n0.powf(1.0 / p.alpha) + t).powf(p.alpha - 1.0);
    let k = f64::from(p.k);
    let mut nu = vec![0.0; steps + 1];
    for _ in 0..500 {
        let mut integral = vec![0.0; steps + 1];
        for i in 1..=steps {
            integral[i] = integral[i - 1] + 0.5 * dt * (nu[i] + nu[i - 1]);
        }
        let z: Vec<f64> = integral.iter().map(|c| p.z0 - k * c).collect();
        let slope = |i: usize, a: f64| {
            let t = times[i];
            -(-p.beta * t).exp() * p.ell - rate(t) * a / (vol(t) - z[i])
        };
        let mut a = vec![0.0; steps + 1];
        a[steps] = (-p.beta * p.horizon).exp() * p.h;
        for i in (0..steps).rev() {
            // Heun backward
            let k1 = slope(i + 1, a[i + 1]);
            let guess = a[i + 1] - dt * k1;
            a[i] = a[i + 1] - 0.5 * dt * (k1 + slope(i, guess));
        }
        let mut change = 0.0f64;
        for i in 0..=steps {
            let t = times[i];
            let target = rate(t) / (2.0 * p.rho)
                * ((p.beta * t).exp() * a[i] - p.p0 - p.eta * k * integral[i]);
            let next = 0.5 * nu[i] + 0.5 * target;
            change = change.max((next - nu[i]).abs());
            nu[i] = next;
        }
        if change < 1e-13 {
            break;
        }
    }
    (times, nu)
}

#[test]
fn equilibrium_matches_ode_oracle() {
    let p = reference(200);
    let state = equilibrium_iterate(&p, 0.5, 1e-9, 300).unwrap();
    assert!(state.converged);
    let (times, oracle) = ode_equilibrium(&p, 20_000);
    let scale = oracle.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (n, &t) in state.times.iter().enumerate() {
        let i = (t / p.horizon * 20_000.0).round() as usize;
        assert!((times[i] - t).abs() < 1e-9);
        let err = (state.nu_eq[n] - oracle[i]).abs() / scale;
        assert!(err < 1e-2, "t={t}: {} vs {}", state.nu_eq[n], oracle[i]);
    }
}

#[test]
fn reference_equilibrium_properties() {
    let p = reference(200);
    let tol = 1e-6;
    let s = equilibrium_iterate(&p, 0.5, tol, 200).unwrap();
    assert!(s.converged, "{:?}", s.residual_history);
    assert!(s.residual <= tol);
    for n in 0..=200 {
        assert!((s.moments(n).mass - 1.0).abs() <= 1e-8);
        assert!(s.z_path[n] > 0.0 && s.z_path[n] < s.value.volumes[n]);
    }
    assert!(s.fixed_point_defect(&p) <= 10.0 * tol);
    let (start, end) = (s.moments(0), s.moments(200));
    assert!(end.variance > start.variance);
    assert!(end.mean_share < start.mean_share);
    assert!(s.residual_history[9] < s.residual_history[0]);

    // clearing: K * mean + Z grows like N
    let k = f64::from(p.k);
    for n in 0..200 {
        let before = k * s.moments(n).mean + s.z_path[n];
        let after = k * s.moments(n + 1).mean + s.z_path[n + 1];
        let growth = p.volume_at(s.times[n + 1]) - p.volume_at(s.times[n]);
        assert!((after - before - growth).abs() <= 1e-3 * p.volume_rate(s.times[n]));
    }

    // restarting at the fixed point stops at once
    let again = equilibrium_iterate_from(&p, &s.nu_eq, 0.5, tol, 5).unwrap();
    assert_eq!(again.iterations, 1);
    assert!(again.residual <= tol);
}

#[test]
fn refinement_barely_moves_equilibrium() {
    let coarse = equilibrium_iterate(&reference(100), 0.5, 1e-8, 300).unwrap();
    let fine = equilibrium_iterate(&reference(200), 0.5, 1e-8, 300).unwrap();
    let scale = fine.nu_eq.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let gap = (0..=100)
        .map(|n| (coarse.nu_eq[n] - fine.nu_eq[2 * n]).abs())
        .fold(0.0f64, f64::max);
    assert!(gap <= 0.05 * scale, "{gap} vs {scale}");
}

#[test]
fn value_self_converges_in_the_interior() {
    let mut grids = Vec::new();
    for m in [50usize, 100, 200] {
        let p = reference(m);
        let z = investor_holdings(&vec![-0.5; m + 1], &p).unwrap();
        let pt = impact_price_mean(&p, &z);
        grids.push(solve_hjb_mfg(&p, &z, &pt).unwrap());
    }
    let gap = |c: &posdyn_core::hjb::ValueGrid, f: &posdyn_core::hjb::ValueGrid| {
        let jc = c.space_intervals();
        let mut d = 0.0f64;
        for n in 0..c.times.len() {
            for j in jc / 5..=4 * jc / 5 {
                d = d.max((c.slice(n)[j] - f.slice(2 * n)[2 * j]).abs());
            }
        }
        d
    };
    let first = gap(&grids[0], &grids[1]);
    let second = gap(&grids[1], &grids[2]);
    assert!(first / second >= 1.5, "{first} / {second}");
}

#[test]
fn costlier_trading_trades_less() {
    let mut last = f64::INFINITY;
    for rho in [1.0, 10.0, 100.0] {
        let mut p = reference(100);
        p.rho = rho;
        let s = equilibrium_iterate(&p, 0.5, 1e-8, 300).unwrap();
        let sup = s.nu_eq.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(sup < last, "rho={rho}");
        last = sup;
    }
}

#[test]
fn heavy_buying_exhausts_supply() {
    let mut p = reference(100);
    p.k = 10;
    p.m0 = InitialDensity::uniform(4.0, 6.0);
    p.p0 = 0.2;
    p.rho = 0.2;
    p.validate().unwrap();
    assert!(matches!(
        equilibrium_iterate(&p, 0.5, 1e-6, 200),
        Err(Error::SupplyExhaustion { .. })
    ));
}

fn field_from(p: &MfgParams, rate: impl Fn(f64, f64) -> f64) -> ControlField {
    let times = p.times();
    let volumes: Vec<f64> = times.iter().map(|&t| p.volume_at(t)).collect();
    let jn = p.space_intervals;
    let mut rates = Vec::new();
    for (n, &t) in times.iter().enumerate() {
        for j in 0..=jn {
            rates.push(rate(t, j as f64 / jn as f64 * volumes[n]));
        }
    }
    ControlField {
        times,
        volumes,
        space_intervals: jn,
        rates,
    }
}

#[test]
fn box_translates_at_constant_speed() {
    let p = reference(200);
    let dy = p.dy();
    let c = 0.02;
    // nu = c N(t) gives y-velocity c when Z = 0
    let field = field_from(&p, |t, _| c * p.volume_at(t));
    let m0 = InitialDensity::uniform(30.0, 40.0).project(p.n0, 200);
    let z = vec![0.0; 201];
    let d = transport_density(&p, &field, &z, &m0).unwrap();
    let first = |row: &[f64]| {
        let f: Vec<f64> = row.iter().enumerate().map(|(j, m)| j as f64 * dy * m).collect();
        trapezoid(&f, dy)
    };
    let start = first(&d[..201]);
    let end = first(&d[200 * 201..]);
    assert!((end - start - c * p.horizon).abs() <= 2.0 * dy, "{}", end - start);
    for n in 0..=200 {
        assert!((trapezoid(&d[n * 201..(n + 1) * 201], dy) - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn transport_reports_escaping_mass() {
    let p = reference(100);
    let field = field_from(&p, |t, _| -0.05 * p.volume_at(t));
    let m0 = p.m0.project(p.n0, 100);
    let result = transport_density(&p, &field, &vec![0.0; 101], &m0);
    assert!(matches!(result, Err(Error::BoundaryEscape { .. })), "{result:?}");
}

#[test]
fn aggregation_examples() {
    let p = reference(200);
    let dy = p.dy();
    // density symmetric about y = 1/2 and a control odd about it
    let sym = InitialDensity::uniform(40.0, 60.0).project(p.n0, 200);
    let odd = field_from(&p, |t, x| (x / p.volume_at(t) - 0.5).powi(3));
    let nu = aggregate_trade(&odd, &sym.repeat(201));
    assert!(nu.iter().all(|v| v.abs() < 1e-9));

    // two narrow boxes
    let boxes = InitialDensity {
        pieces: vec![
            posdyn_core::mfg::DensityPiece {
                from: 19.75,
                to: 20.25,
                density: 1.0,
            },
            posdyn_core::mfg::DensityPiece {
                from: 69.75,
                to: 70.25,
                density: 1.0,
            },
        ],
    };
    let m = boxes.project(p.n0, 200);
    assert!((trapezoid(&m, dy) - 1.0).abs() < 1e-12);
    let f = |x: f64| (x / 10.0).sin() + 0.01 * x * x;
    let field = field_from(&p, |_, x| f(x));
    let nu = aggregate_trade(&field, &m.repeat(201));
    let hand = 0.5 * (f(20.0) + f(70.0));
    // slope of f is at most 1.5, and the boxes spread over one x-cell
    assert!((nu[0] - hand).abs() <= 1.5 * dy * p.n0, "{} vs {hand}", nu[0]);
}
