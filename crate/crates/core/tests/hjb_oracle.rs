use posdyn_core::hjb::{
    classify_strategy, evaluate_objective, extract_control, gbm_predicted_shape, integrate_state,
    solve_hjb, solve_hjb_with, switching_time, switching_time_tol, ControlParams,
    PiecewiseControl, PriceModel, StrategyShape,
};
use posdyn_core::rng::{substream, uniform};

fn base(price: PriceModel) -> ControlParams {
    ControlParams {
        alpha: 1.0,
        n0: 100.0,
        horizon: 1.0,
        beta: 0.05,
        r: 0.0,
        ell: 0.5,
        h: 1.0,
        nubar: 5.0,
        x0: 50.0,
        price,
    }
}

fn constant(p0: f64) -> PriceModel {
    PriceModel::ConstantDiscounted { p0 }
}

fn gbm(p0: f64, mu: f64) -> PriceModel {
    PriceModel::Gbm { p0, mu, sigma: 0.2 }
}

fn bang_bang_cases() -> Vec<(ControlParams, StrategyShape)> {
    vec![
        (base(constant(1.6)), StrategyShape::SellAlways),
        (base(constant(0.9)), StrategyShape::BuyAlways),
        (base(constant(1.2)), StrategyShape::BuyThenSell),
        (base(gbm(1.6, 0.3)), StrategyShape::SellAlways),
        (base(gbm(0.7, 0.3)), StrategyShape::BuyAlways),
        (base(gbm(1.1, 0.3)), StrategyShape::BuyThenSell),
    ]
}

#[test]
fn zero_data_gives_zero_value() {
    let mut p = base(constant(0.0));
    p.ell = 0.0;
    p.h = 0.0;
    let g = solve_hjb(&p, 100, 100).unwrap();
    assert!(g.values.iter().all(|&v| v == 0.0));
    // ties go to buying
    let f = extract_control(&g);
    assert!(f.rates.iter().all(|&r| r == p.nubar));
}

#[test]
fn worthless_coins_are_sold() {
    let mut p = base(constant(1.0));
    p.ell = 0.0;
    p.h = 0.0;
    let g = solve_hjb(&p, 200, 200).unwrap();
    let f = extract_control(&g);
    // away from the exit layer at x = 0 the marginal value is below the price
    for n in 0..200 {
        for j in 40..200 {
            assert_eq!(f.row(n)[j], -p.nubar, "n={n} j={j}");
        }
    }
    // selling at full rate until T: nubar * Pbeta * T at most
    assert!((g.value_at(0, p.x0) - p.nubar * p.horizon).abs() < 1e-9);
}

#[test]
fn frozen_share_follows_characteristics() {
    for (alpha, beta) in [(1.0, 0.05), (2.0, 0.1)] {
        let mut p = base(constant(1.0));
        p.alpha = alpha;
        p.beta = beta;
        p.ell = 0.0;
        p.nubar = 0.0;
        let terminal = |x: f64| x.sqrt();
        let g = solve_hjb_with(&p, |_| 0.0, terminal, 200, 400).unwrap();
        let big_t = p.horizon;
        for n in 0..=200 {
            let t = g.times[n];
            for j in 1..400 {
                let x = g.y_nodes[j] * g.volumes[n];
                let exact = (-beta * big_t).exp() * terminal(x * p.volume_at(big_t) / p.volume_at(t));
                assert!((g.slice(n)[j] - exact).abs() <= 5e-3, "t={t} x={x}");
            }
        }
    }
}

#[test]
fn state_integration_closed_forms() {
    let p = base(constant(1.0));
    let none = PiecewiseControl::constant(p.horizon, 0.0);
    let path = integrate_state(&none, &p);
    for (t, x) in path.times.iter().zip(&path.states) {
        let exact = p.x0 * p.volume_at(*t) / p.n0;
        assert!((x - exact).abs() <= 1e-8 * exact);
    }
    let full = PiecewiseControl::constant(p.horizon, p.nubar);
    let path = integrate_state(&full, &p);
    assert!(!path.exited);
    assert_eq!(path.exit_time, p.horizon);
    for (t, x) in path.times.iter().zip(&path.states) {
        let exact = (p.x0 / p.n0 + p.nubar * ((p.n0 + t) / p.n0).ln()) * p.volume_at(*t);
        assert!((x - exact).abs() <= 1e-9 * exact);
    }
}

#[test]
fn state_integration_stops_at_zero() {
    let mut p = base(constant(1.0));
    p.x0 = 1.0;
    p.nubar = 50.0;
    assert!(!p.check_volume_condition().unwrap());
    let path = integrate_state(&PiecewiseControl::constant(p.horizon, -p.nubar), &p);
    assert!(path.exited);
    assert!(path.exit_time < p.horizon);
    assert_eq!(path.terminal_state(), 0.0);
    // X(t) = (x0/N0 - nubar ln(N(t)/N0)) N(t) vanishes at N0 e^{x0/(N0 nubar)} - N0
    let exact = p.n0 * (p.x0 / (p.n0 * p.nubar)).exp() - p.n0;
    assert!((path.exit_time - exact).abs() < 1e-3, "{} vs {exact}", path.exit_time);
}

#[test]
fn objective_examples() {
    let mut p = base(constant(1.0));
    p.ell = 0.0;
    let none = PiecewiseControl::constant(p.horizon, 0.0);
    let exact = (-p.beta * p.horizon).exp() * p.h * p.x0 * p.volume_at(p.horizon) / p.n0;
    assert!((evaluate_objective(&none, &p) - exact).abs() < 1e-10 * exact);

    let mut p = base(constant(1.0));
    p.h = 0.0;
    p.beta = 1e-300;
    p.horizon = 3.0;
    let none = PiecewiseControl::constant(p.horizon, 0.0);
    let big_t = p.horizon;
    let exact = p.ell * p.x0 * (big_t + big_t * big_t / (2.0 * p.n0));
    assert!((evaluate_objective(&none, &p) - exact).abs() < 1e-10 * exact);
}

#[test]
fn classified_control_beats_random_controls() {
    for (p, _) in bang_bang_cases() {
        let best = classify_strategy(&p).unwrap();
        let target = evaluate_objective(&best.control, &p);
        let mut rng = substream(17, 0);
        for _ in 0..100 {
            let segments = 1 + (uniform(&mut rng) * 5.0) as usize;
            let mut cuts: Vec<f64> = (1..segments).map(|_| uniform(&mut rng) * p.horizon).collect();
            cuts.sort_by(f64::total_cmp);
            let values = (0..segments)
                .map(|_| p.nubar * (2.0 * uniform(&mut rng) - 1.0))
                .collect();
            let c = PiecewiseControl {
                horizon: p.horizon,
                breakpoints: cuts,
                values,
            };
            assert!(evaluate_objective(&c, &p) <= target + 1e-9, "{:?}", p.price);
        }
    }
}

#[test]
fn value_is_nondecreasing_in_holdings() {
    let cases = bang_bang_cases();
    for (p, _) in &cases {
        let g = solve_hjb(p, 200, 200).unwrap();
        check_monotone(&g.values, 201);
    }
    let p = base(constant(0.02));
    let g = solve_hjb_with(&p, |x| 0.01 * x.sqrt(), |x| (1.0 + x).ln(), 200, 200).unwrap();
    check_monotone(&g.values, 201);
}

/// Every slice nondecreasing up to the node below the pinned upper end.
fn check_monotone(values: &[f64], width: usize) {
    for row in values.chunks(width) {
        for j in 1..width - 1 {
            assert!(row[j] >= row[j - 1] - 1e-10, "j={j}: {} < {}", row[j], row[j - 1]);
        }
    }
}

#[test]
fn grid_matches_closed_form_on_bang_bang_cases() {
    for (p, shape) in bang_bang_cases() {
        let cl = classify_strategy(&p).unwrap();
        assert_eq!(cl.shape, shape, "{:?}", p.price);
        let oracle = evaluate_objective(&cl.control, &p);
        let coarse = solve_hjb(&p, 200, 200).unwrap();
        let fine = solve_hjb(&p, 400, 400).unwrap();
        let e_coarse = (coarse.value_at(0, p.x0) - oracle).abs() / oracle.abs();
        let e_fine = (fine.value_at(0, p.x0) - oracle).abs() / oracle.abs();
        assert!(e_fine <= 1e-2, "{:?}: {e_fine}", p.price);
        assert!(e_coarse / e_fine >= 1.5, "{:?}: {e_coarse} / {e_fine}", p.price);

        let field = extract_control(&fine);
        assert!(field.rates.iter().all(|r| r.abs() == p.nubar));
        let j0 = 200;
        let flips: Vec<usize> = (1..fine.times.len())
            .filter(|&n| field.row(n)[j0] != field.row(n - 1)[j0])
            .collect();
        let dt = p.horizon / 400.0;
        match shape {
            StrategyShape::BuyThenSell => {
                let t0 = cl.crossings[0];
                assert_eq!(flips.len(), 1, "{:?}", p.price);
                let tn = fine.times[flips[0]];
                assert!((tn - t0).abs() <= dt + 1e-12, "{tn} vs {t0}");
            }
            _ => assert!(flips.is_empty()),
        }
    }
}

#[test]
fn sell_case_sells_almost_everywhere() {
    // near x = 0 the holding runs out before T and dv/dx equals the price
    // there; a small cap keeps that layer thin
    let mut p = base(constant(1.6));
    p.nubar = 1.0;
    let g = solve_hjb(&p, 400, 400).unwrap();
    let f = extract_control(&g);
    let mut interior = 0usize;
    let mut selling = 0usize;
    for n in 0..=400 {
        for j in 1..400 {
            interior += 1;
            if f.row(n)[j] == -p.nubar {
                selling += 1;
            }
        }
    }
    assert!(selling as f64 >= 0.99 * interior as f64, "{selling}/{interior}");
}

#[test]
fn switching_time_examples() {
    let mut p = base(constant(1.0));
    p.ell = 0.0;
    let t0_exact = p.volume_at(p.horizon) * p.h * (-p.beta * p.horizon).exp() / 0.955 - p.n0;
    p.price = constant(0.955);
    assert!((0.0..p.horizon).contains(&t0_exact));
    let t0 = switching_time(&p).unwrap();
    assert!((t0 - t0_exact).abs() <= 1e-8);
    let tighter = switching_time_tol(&p, 1e-9).unwrap();
    assert!((tighter - t0).abs() < 1e-8);

    let mut q = base(constant(1.0));
    q.price = constant(q.psi(0.0).unwrap());
    assert_eq!(switching_time(&q).unwrap(), 0.0);
}

#[test]
fn psi_strictly_decreasing() {
    for alpha in [0.5, 1.0, 3.0] {
        let mut p = base(constant(1.0));
        p.alpha = alpha;
        let mut prev = p.psi(0.0).unwrap();
        for i in 1..=100 {
            let cur = p.psi(i as f64 / 100.0).unwrap();
            assert!(prev - cur > 1e-12);
            prev = cur;
        }
    }
}

pub fn gbm_shape_cases() -> Vec<(ControlParams, StrategyShape)> {
    let prop = |p0: f64, ell: f64| ControlParams {
        alpha: 1.0,
        n0: 1e4,
        horizon: 1.0,
        beta: 0.1,
        r: 0.0,
        ell,
        h: 1.0,
        nubar: 100.0,
        x0: 5e3,
        price: gbm(p0, 0.05),
    };
    vec![
        (prop(1.0, 0.01), StrategyShape::SellAlways),
        (prop(0.93, 0.01), StrategyShape::SellThenBuy),
        (prop(0.5, 0.01), StrategyShape::BuyAlways),
        (prop(2.0, 0.5), StrategyShape::SellAlways),
        (prop(1.2, 0.5), StrategyShape::BuyThenSell),
        (prop(0.8, 0.5), StrategyShape::BuyAlways),
    ]
}

#[test]
fn gbm_shapes_match_sign_sweep() {
    for (p, expected) in gbm_shape_cases() {
        let predicted = gbm_predicted_shape(&p, 1e-6).unwrap();
        assert_eq!(predicted, Some(expected), "{:?} ell={}", p.price, p.ell);
        let cl = classify_strategy(&p).unwrap();
        assert_eq!(cl.shape, expected);
        // independent sweep of the gap sign
        let signs: Vec<bool> = (0..10_000)
            .map(|i| {
                let t = p.horizon * i as f64 / 9_999.0;
                p.price_discounted(t) - p.psi(t).unwrap() <= 0.0
            })
            .collect();
        let switches = signs.windows(2).filter(|w| w[0] != w[1]).count();
        let swept = match (signs[0], switches) {
            (true, 0) => StrategyShape::BuyAlways,
            (false, 0) => StrategyShape::SellAlways,
            (true, 1) => StrategyShape::BuyThenSell,
            (false, 1) => StrategyShape::SellThenBuy,
            _ => StrategyShape::Multiple,
        };
        assert_eq!(swept, expected);
    }
}
