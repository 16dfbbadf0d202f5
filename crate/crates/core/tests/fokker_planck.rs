use std::sync::Arc;

use langevin_core::fokker_planck::{fp_step, kl, kl_trace, CellGrid, FPOperator, GridDensity, KlTrace, TimeScheme};

/// Closed-form KL between univariate Gaussians.
fn kl_normal(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0)
}

/// Mean and variance of `dx = -x dt + √2 dW` started from N(m, v).
fn ou_moments(m: f64, v: f64, t: f64) -> (f64, f64) {
    let e = (-t).exp();
    (m * e, v * e * e + 1.0 - e * e)
}

const P0: (f64, f64) = (1.5, 0.5);
const Q0: (f64, f64) = (-1.0, 1.5);

fn ou_trace(cells: usize, dt: f64) -> KlTrace {
    let g = CellGrid::new(-10.0, 10.0, cells).unwrap();
    let p = GridDensity::gaussian(g, P0.0, P0.1).unwrap();
    let q = GridDensity::gaussian(g, Q0.0, Q0.1).unwrap();
    kl_trace(&FPOperator::ou(1.0, 2f64.sqrt()), &p, &q, 2.0, dt, TimeScheme::Explicit).unwrap()
}

/// Largest relative defect |dKL/dt + L_t| / L_t over t in [0.1, 1.9].
fn max_defect(tr: &KlTrace) -> f64 {
    tr.points
        .iter()
        .filter(|p| p.t >= 0.1 - 1e-12 && p.t <= 1.9 + 1e-12)
        .map(|p| (p.dkl_dt + p.l_t).abs() / p.l_t)
        .fold(0.0, f64::max)
}

#[test]
fn heat_kernel_is_reproduced_and_converges() {
    // start from N(0, 0.25) so the exact solution is N(0, 0.25 + g² t)
    let (g, t_end) = (1.0, 1.0);
    let err = |cells: usize| {
        let grid = CellGrid::new(-10.0, 10.0, cells).unwrap();
        let mut rho = GridDensity::gaussian(grid, 0.0, 0.25).unwrap();
        let op = FPOperator::heat(g);
        let dt = 0.2 * op.stable_dt(&grid, 0.0).unwrap();
        let steps = (t_end / dt).ceil() as usize;
        let dt = t_end / steps as f64;
        for n in 0..steps {
            rho = fp_step(&op, &rho, n as f64 * dt, dt, TimeScheme::Explicit).unwrap();
        }
        let var = 0.25 + g * g * t_end;
        let exact = GridDensity::from_fn(grid, |x| (-(x * x) / (2.0 * var)).exp()).unwrap();
        rho.max_abs_diff(&exact)
    };
    let (coarse, fine) = (err(100), err(200));
    println!("heat kernel max error: h=0.2 {coarse:.3e}, h=0.1 {fine:.3e}");
    assert!(fine < 2e-3, "{fine}");
    assert!(fine < 0.6 * coarse, "{coarse} -> {fine}");
}

#[test]
fn ou_standard_normal_is_stationary() {
    let grid = CellGrid::new(-8.0, 8.0, 320).unwrap();
    let op = FPOperator::ou(1.0, 2f64.sqrt());
    let start = GridDensity::gaussian(grid, 0.0, 1.0).unwrap();
    let dt = 0.5 * op.stable_dt(&grid, 0.0).unwrap();
    let mut rho = start.clone();
    for n in 0..10_000 {
        rho = fp_step(&op, &rho, n as f64 * dt, dt, TimeScheme::Explicit).unwrap();
    }
    let drift = rho.max_abs_diff(&start);
    println!("OU stationarity drift after 1e4 steps: {drift:.3e}");
    assert!(drift <= 1e-6);
}

#[test]
fn mass_is_conserved_every_step() {
    let grid = CellGrid::new(-10.0, 10.0, 300).unwrap();
    let op = FPOperator::new(
        Arc::new(|x: f64, t: f64| -x + (x + t).sin()),
        Arc::new(|t: f64| 1.0 + 0.5 * t),
    );
    let mut rho = GridDensity::gaussian(grid, 2.0, 0.3).unwrap();
    let dt = 0.5 * op.stable_dt(&grid, 1.0).unwrap();
    for scheme in [TimeScheme::Explicit, TimeScheme::Implicit] {
        for n in 0..500 {
            let next = fp_step(&op, &rho, n as f64 * dt, dt, scheme).unwrap();
            assert!((next.mass() - rho.mass()).abs() <= 1e-12, "step {n}");
            assert!(next.values.iter().all(|v| *v >= 0.0));
            rho = next;
        }
    }
}

#[test]
fn kl_matches_the_closed_form_and_never_increases() {
    let tr = ou_trace(400, 5e-4);
    for w in tr.points.windows(2) {
        assert!(w[1].kl <= w[0].kl + 1e-15, "KL rose at t = {}", w[1].t);
    }
    let mut worst: f64 = 0.0;
    for p in tr.points.iter().step_by(200) {
        let (m1, v1) = ou_moments(P0.0, P0.1, p.t);
        let (m2, v2) = ou_moments(Q0.0, Q0.1, p.t);
        let exact = kl_normal(m1, v1, m2, v2);
        worst = worst.max((p.kl - exact).abs() / exact);
    }
    println!("worst relative KL error against closed form: {worst:.3e}");
    assert!(worst < 5e-3);
    assert!(!tr.underflow_warning);
}

#[test]
fn kl_decay_rate_equals_the_instantaneous_objective() {
    let coarse = max_defect(&ou_trace(200, 2e-3));
    let fine = max_defect(&ou_trace(400, 5e-4));
    println!("max relative defect |dKL/dt + L_t|/L_t: h=0.1 {coarse:.3e}, h=0.05 {fine:.3e}");
    assert!(fine <= 0.02, "{fine}");
    assert!(fine < 0.5 * coarse, "{coarse} -> {fine}");
}

#[test]
fn transport_leaves_kl_unchanged_up_to_scheme_error() {
    // g = 0: KL should stay put; upwinding adds numerical diffusion of order h
    let change = |cells: usize| {
        let grid = CellGrid::new(-12.0, 12.0, cells).unwrap();
        let op = FPOperator::transport(Arc::new(|x: f64, _| -0.5 * x + 0.3 * x.sin()));
        let p = GridDensity::gaussian(grid, 1.0, 1.0).unwrap();
        let q = GridDensity::gaussian(grid, -0.5, 2.0).unwrap();
        let dt = 0.5 * op.stable_dt(&grid, 0.0).unwrap();
        let tr = kl_trace(&op, &p, &q, 1.0, 1.0 / (1.0 / dt).ceil(), TimeScheme::Explicit).unwrap();
        let k0 = tr.points[0].kl;
        tr.points.iter().map(|pt| (pt.kl - k0).abs()).fold(0.0, f64::max) / k0
    };
    let (c, f) = (change(400), change(800));
    println!("relative KL drift without diffusion: h=0.06 {c:.3e}, h=0.03 {f:.3e}");
    assert!(f < 0.02, "{f}");
    assert!(f < 0.7 * c, "{c} -> {f}");
}

#[test]
fn implicit_scheme_agrees_with_explicit() {
    let g = CellGrid::new(-10.0, 10.0, 200).unwrap();
    let p = GridDensity::gaussian(g, P0.0, P0.1).unwrap();
    let q = GridDensity::gaussian(g, Q0.0, Q0.1).unwrap();
    let op = FPOperator::ou(1.0, 2f64.sqrt());
    let ex = kl_trace(&op, &p, &q, 1.0, 1e-3, TimeScheme::Explicit).unwrap();
    let im = kl_trace(&op, &p, &q, 1.0, 1e-3, TimeScheme::Implicit).unwrap();
    let (a, b) = (ex.points.last().unwrap().kl, im.points.last().unwrap().kl);
    assert!((a - b).abs() / a < 5e-3, "{a} vs {b}");
    for w in im.points.windows(2) {
        assert!(w[1].kl <= w[0].kl + 1e-15);
    }
    assert!(kl(&p, &q) > 0.0);
}
