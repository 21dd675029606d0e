//! Independent oracles: Simpson integration against the normal law, libm's
//! erfc and statrs' normal quantile, and central finite differences.

use hjbdual::closedform::h_sensitivity;
use hjbdual::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// Φ through libm's erfc (statrs' own Φ is only good to about 1e−12).
fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn market() -> MarketModel {
    MarketModel::new(0.0, 0.04, 0.2, 1.0, Constraint::Unconstrained).unwrap()
}

fn capped_surface() -> DualValueSurface {
    let dual = Utility::Capped(CappedUtility::new(1.0).unwrap()).dual();
    DualValueSurface::with_default_backend(market(), dual, Regime::Discounted).unwrap()
}

fn capped_power_surface(backend: Backend) -> DualValueSurface {
    let dual = Utility::CappedPower(CappedPowerUtility::new(1.0, 0.5).unwrap()).dual();
    DualValueSurface::new(market(), dual, Regime::Discounted, backend, 128).unwrap()
}

/// Composite Simpson on [a, b] with n (even) panels.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// E[Ũ(y·exp(−α²/2 − αZ))] split at the z where the argument crosses a kink.
fn simpson_dual_value(dual: &dyn Fn(f64) -> f64, kinks: &[f64], alpha: f64, y: f64) -> f64 {
    let n = std_normal();
    let g = |z: f64| dual(y * (-0.5 * alpha * alpha - alpha * z).exp()) * n.pdf(z);
    let mut cuts: Vec<f64> =
        kinks.iter().map(|b| (y.ln() - 0.5 * alpha * alpha - b.ln()) / alpha).filter(|z| z.abs() < 12.0).collect();
    cuts.push(-12.0);
    cuts.push(12.0);
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2).map(|w| simpson(&g, w[0], w[1], 4000)).sum()
}

fn capped_dual(y: f64) -> f64 {
    (1.0 - y).max(0.0)
}

/// Conjugate of x for x ≤ 1, √x above: 1 − y on [½, 1], 1/(4y) below ½.
fn capped_power_dual(y: f64) -> f64 {
    if y >= 1.0 {
        0.0
    } else if y >= 0.5 {
        1.0 - y
    } else {
        0.25 / y
    }
}

#[test]
fn closed_form_grid_matches_pipeline() {
    let n = std_normal();
    let p = PrimalValueSurface::new(capped_surface());
    let m = market();
    for t in [0.0, 0.25, 0.5, 0.75] {
        let a = 0.2 * f64::sqrt(1.0 - t);
        for i in 1..=19 {
            let x = i as f64 * 0.05;
            let z = n.inverse_cdf(x);
            let u_cap = phi(z + a);
            assert!((p.u(t, x).unwrap() - u_cap).abs() <= 1e-6, "t={t} x={x}");
            let pi_cap = n.pdf(z) / (x * a);
            assert!((p.feedback_control(t, x).unwrap() / pi_cap - 1.0).abs() <= 1e-6);
            let y_cap = (-a * z - 0.5 * a * a).exp();
            assert!((p.y_of_x(t, x).unwrap() / y_cap - 1.0).abs() <= 1e-9);
            let s = CappedSolution::new(1.0, m).unwrap();
            assert!((s.u(t, x).unwrap() - u_cap).abs() <= 1e-13);
        }
    }
}

#[test]
fn simpson_oracle_for_dual_values() {
    let cf = capped_surface();
    let cp = capped_power_surface(Backend::ClosedFormCappedPower);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let t = rng.random_range(0.0..0.95);
        let y = (rng.random_range(-2.5..1.0f64)).exp();
        let a = 0.2 * f64::sqrt(1.0 - t);
        let want = simpson_dual_value(&capped_dual, &[1.0], a, y);
        assert!((cf.v(t, y).unwrap() - want).abs() < 1e-10, "capped t={t} y={y}");
        let want = simpson_dual_value(&capped_power_dual, &[0.5, 1.0], a, y);
        assert!((cp.v(t, y).unwrap() - want).abs() < 1e-10 * (1.0 + want.abs()), "capped power t={t} y={y}");
    }
}

#[test]
fn anchor_value_from_displayed_formula() {
    // −y·Φ(−ln y/α − α/2) + Φ(−ln y/α + α/2) at y = e^{−α²/2}
    let (a, y) = (0.2_f64, (-0.02_f64).exp());
    let want = -y * phi(-y.ln() / a - a / 2.0) + phi(-y.ln() / a + a / 2.0);
    let s = capped_surface();
    assert!((s.v(0.0, y).unwrap() - want).abs() < 1e-14);
    assert!((want - 0.089_160_4).abs() < 1e-7);
    assert!((s.v_y(0.0, y).unwrap() + 0.5).abs() < 1e-14);
    assert!((s.v_yy(0.0, y).unwrap() - 2.035_007).abs() < 1e-6);
}

#[test]
fn backends_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cf = capped_power_surface(Backend::ClosedFormCappedPower);
    let q = capped_power_surface(Backend::Quadrature);
    for _ in 0..50 {
        let t = rng.random_range(0.0..0.95);
        let y = (rng.random_range(-3.0..0.5f64)).exp();
        let (a, b) = (cf.v(t, y).unwrap(), q.v(t, y).unwrap());
        assert!((a - b).abs() <= 1e-6 * a.abs(), "t={t} y={y} {a} {b}");
    }
    let dual = Utility::Piecewise(PiecewiseLinearUtility::new(vec![0.4, 1.0], vec![1.5, 0.5], 0.9).unwrap()).dual();
    let cf = DualValueSurface::new(market(), dual.clone(), Regime::Discounted, Backend::ClosedFormPiecewise, 64).unwrap();
    let q = DualValueSurface::new(market(), dual, Regime::Discounted, Backend::Quadrature, 64).unwrap();
    for _ in 0..50 {
        let t = rng.random_range(0.0..0.95);
        let y = (rng.random_range(-3.0..1.0f64)).exp();
        let (a, b) = (cf.derivatives(t, y).unwrap(), q.derivatives(t, y).unwrap());
        assert!((a.v - b.v).abs() <= 1e-8 * (1.0 + a.v.abs()));
        assert!((a.v_y - b.v_y).abs() <= 1e-8 * (1.0 + a.v_y.abs()));
        assert!((a.v_yy - b.v_yy).abs() <= 1e-8 * (1.0 + a.v_yy.abs()));
    }
}

#[test]
fn small_exponent_limit_is_capped_value() {
    let dual = Utility::CappedPower(CappedPowerUtility::new(1.0, 1e-9).unwrap()).dual();
    let vp = DualValueSurface::with_default_backend(market(), dual, Regime::Discounted).unwrap();
    let vc = capped_surface();
    for (t, y) in [(0.0, 0.5), (0.5, 0.9), (0.25, 1.3)] {
        assert!((vp.v(t, y).unwrap() - vc.v(t, y).unwrap()).abs() < 1e-6);
    }
}

/// Sample (t, y) pairs on the part of the surface the primal actually uses.
fn samples(seed: u64, primal: &PrimalValueSurface) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..50)
        .map(|_| {
            let t = rng.random_range(0.0..0.9);
            let x = rng.random_range(0.05..0.95);
            (t, x, primal.y_of_x(t, x).unwrap())
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn derivatives_match_finite_differences() {
    for surface in [capped_surface(), capped_power_surface(Backend::ClosedFormCappedPower)] {
        let primal = PrimalValueSurface::new(surface.clone());
        for (t, x, y) in samples(3, &primal) {
            // v varies on the scale α·y
            let scale = surface.market().alpha(t).unwrap() * y;
            let h = 1e-4 * scale;
            let fd1 = (surface.v(t, y + h).unwrap() - surface.v(t, y - h).unwrap()) / (2.0 * h);
            assert!(rel(surface.v_y(t, y).unwrap(), fd1) <= 1e-5, "v_y t={t} y={y}");
            let h = 1e-3 * scale;
            let fd2 = (surface.v_y(t, y + h).unwrap() - surface.v_y(t, y - h).unwrap()) / (2.0 * h);
            assert!(rel(surface.v_yy(t, y).unwrap(), fd2) <= 1e-5, "v_yy t={t} y={y}");
            let h = 1e-5 * x;
            let fdu = (primal.u(t, x + h).unwrap() - primal.u(t, x - h).unwrap()) / (2.0 * h);
            assert!(rel(primal.u_x(t, x).unwrap(), fdu) <= 1e-5, "u_x t={t} x={x}");
            assert!(primal.u_xx(t, x).unwrap() < 0.0);
        }
    }
}

#[test]
fn second_difference_of_v_matches_v_yy() {
    let s = capped_surface();
    let primal = PrimalValueSurface::new(s.clone());
    for (t, _, y) in samples(5, &primal) {
        let h = 3e-3 * s.market().alpha(t).unwrap() * y;
        let d2 = (s.v(t, y + h).unwrap() - 2.0 * s.v(t, y).unwrap() + s.v(t, y - h).unwrap()) / (h * h);
        assert!(rel(s.v_yy(t, y).unwrap(), d2) <= 1e-5);
    }
}

#[test]
fn sensitivity_matches_finite_differences() {
    let m = market();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let x = rng.random_range(0.1..2.0);
        let h = x * (rng.random_range(1.05f64.ln()..100f64.ln())).exp();
        let (_, dg) = h_sensitivity(&m, h, x).unwrap();
        let e = 1e-5 * h;
        let fd = (h_sensitivity(&m, h + e, x).unwrap().0 - h_sensitivity(&m, h - e, x).unwrap().0) / (2.0 * e);
        assert!(dg > 0.0);
        assert!(rel(dg, fd) <= 1e-5, "x={x} H={h}");
    }
}

#[test]
fn duality_inequality_with_equality_at_root() {
    let s = capped_surface();
    let p = PrimalValueSurface::new(s.clone());
    for (t, x, y_star) in samples(17, &p) {
        let u = p.u(t, x).unwrap();
        assert!((s.v(t, y_star).unwrap() + x * y_star - u).abs() < 1e-12);
        for k in -20..=20 {
            let y = y_star * (0.15 * k as f64).exp();
            assert!(u <= s.v(t, y).unwrap() + x * y + 1e-13);
        }
    }
}

#[test]
fn value_is_monotone_convex_and_decays_in_time() {
    for s in [capped_surface(), capped_power_surface(Backend::ClosedFormCappedPower)] {
        for t in [0.0, 0.3, 0.6, 0.9] {
            let ys: Vec<f64> = (0..60).map(|i| (-3.0 + 0.06 * i as f64).exp()).collect();
            let vs: Vec<f64> = ys.iter().map(|&y| s.v(t, y).unwrap()).collect();
            let secants: Vec<f64> = (1..ys.len()).map(|i| (vs[i] - vs[i - 1]) / (ys[i] - ys[i - 1])).collect();
            assert!(vs.windows(2).all(|w| w[1] < w[0]));
            assert!(secants.windows(2).all(|w| w[1] > w[0] - 1e-12));
            // strictly positive wherever the Gaussian tail is representable
            let a = s.market().alpha(t).unwrap();
            for &y in &ys {
                let c = s.v_yy(t, y).unwrap();
                assert!(c >= 0.0 && (y.ln().abs() > 8.0 * a || c > 0.0));
            }
        }
        for y in [0.3, 0.9, 1.1] {
            let mut prev = f64::INFINITY;
            for i in 0..=10 {
                let v = s.v(i as f64 * 0.1, y).unwrap();
                assert!(v <= prev + 1e-15);
                prev = v;
            }
            assert_eq!(prev, s.dual().value(y));
        }
    }
}

#[test]
fn no_short_selling_controls_are_non_negative() {
    let m = MarketModel::new(0.0, 0.04, 0.2, 1.0, Constraint::NoShortSelling).unwrap();
    let dual = Utility::Capped(CappedUtility::new(1.0).unwrap()).dual();
    let p = PrimalValueSurface::new(DualValueSurface::with_default_backend(m, dual, Regime::Discounted).unwrap());
    for i in 1..40 {
        let x = i as f64 * 0.025;
        let pi = p.feedback_control(0.5, x).unwrap();
        assert!(pi > 0.0);
        assert!((p.risky_amount(0.5, x).unwrap() - x * pi).abs() < 1e-12 * x * pi);
    }
}

#[test]
fn three_piece_example_derivative() {
    // slopes 2 then 1, kinks at h = 0.4 and H = 1
    let (h, cap) = (0.4, 1.0);
    let u = PiecewiseLinearUtility::new(vec![h, cap], vec![2.0, 1.0], 2.0 * h + (cap - h)).unwrap();
    let s = DualValueSurface::with_default_backend(market(), Utility::Piecewise(u).dual(), Regime::Discounted).unwrap();
    for (t, y) in [(0.0, 0.7), (0.5, 1.4), (0.2, 2.2)] {
        let a = 0.2 * f64::sqrt(1.0 - t);
        let cbar = |c: f64| (y / c).ln() / a - a / 2.0;
        let want = -cap + h * phi(cbar(2.0) + a) + (cap - h) * phi(cbar(1.0) + a);
        assert!((s.v_y(t, y).unwrap() - want).abs() < 1e-14);
    }
}
