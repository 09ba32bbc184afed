//! Concentration of separately Lipschitz observables: McDiarmid tails for independent data,
//! Birkhoff variance decay along cat-map orbits, and the fitted tower constant.
//!
//! Run: cargo run --release --example concentration

use ergodic_gal::concentration::{
    birkhoff_variance_scaling, empirical_tail_check, fit_system_constant, mcdiarmid_bound, DataSource, Metric,
    SeparatelyLipschitzObservable,
};
use ergodic_gal::dynamics::{System, TorusAutomorphism};

fn main() -> ergodic_gal::Result<()> {
    let obs = SeparatelyLipschitzObservable::bounded_mean(50, 1, 1.0, |x| x[0])?;
    let proxy = mcdiarmid_bound(obs.coefficients())?;
    let est = empirical_tail_check(&obs, &DataSource::IidBernoulli, proxy, 20_000, &[], Some(0.5), 3)?;
    println!("coin flips, n = 50: variance proxy {proxy:.5}, sd {:.5}", est.std_dev);
    println!("{:>10} {:>12} {:>12}", "t", "empirical", "bound");
    for r in est.rows.iter().step_by(4) {
        println!("{:>10.4} {:>12.5e} {:>12.5e}", r.t, r.empirical_tail, r.bound_tail);
    }

    let cat = DataSource::Trajectory(System::Automorphism(TorusAutomorphism::cat_map()));
    let f = |x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).cos();
    let grid: Vec<usize> = (6..=12).map(|e| 1 << e).collect();
    let s = birkhoff_variance_scaling(&cat, &f, &grid, 1000, 4)?;
    println!("\nBirkhoff averages of cos(2 pi x) along the cat map: variance slope {:.3}", s.slope);
    for (n, v) in &s.rows {
        println!("  n = {n:>5}: var {v:.4e}, n var {:.4}", *n as f64 * v);
    }

    let lip = 2.0 * std::f64::consts::PI;
    for n in [256, 1024] {
        let obs = SeparatelyLipschitzObservable::birkhoff_mean(n, 2, lip, Metric::Torus, f)?;
        let check = obs.check_coefficients(200, 5);
        let c = fit_system_constant(&obs, &cat, 4000, lip, 20, 6)?;
        println!("n = {n}: coefficient violations {}, fitted C = {:.4} (normalized {:.5})", check.violations, c.c_raw, c.c_normalized);
    }
    Ok(())
}
