//! The tent observable from the torus to the cube: push-forward densities and the bound on how
//! far the observed law moves from the original one.
//!
//! Run: cargo run --release --example tent_observable

use ergodic_gal::dynamics::{sample_trajectory, System};
use ergodic_gal::measures::{density_from_samples, jsd, tv, GridDensity};
use ergodic_gal::observable::{observe, psi, pushforward_density_fn, sup_bound_factor, ObservableConfig};

fn main() -> ergodic_gal::Result<()> {
    println!("psi(0.5, 0.1) = {:.6}, psi(0.95, 0.1) = {:.6}", psi(0.5, 0.1)?, psi(0.95, 0.1)?);

    // smooth density on the circle and its image under g for shrinking eps
    let f_nu = |x: &[f64]| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).sin();
    let m_norm = 0.5 * 2.0 * std::f64::consts::PI;
    let nu = GridDensity::tabulate(vec![2000], f_nu)?;
    println!("\n{:>6} {:>12} {:>12} {:>12} {:>12}", "eps", "sup diff", "bound", "jsd", "ln2 * tv");
    for eps in [0.2, 0.1, 0.05] {
        let cfg = ObservableConfig::new(eps, 1, None)?;
        let mu = pushforward_density_fn(&cfg, &f_nu, vec![2000])?;
        let sup = nu.values().iter().zip(mu.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let bound = sup_bound_factor(1) * m_norm * eps;
        println!("{eps:>6} {sup:>12.5e} {bound:>12.5e} {:>12.5e} {:>12.5e}", jsd(&nu, &mu)?, std::f64::consts::LN_2 * tv(&nu, &mu)?);
    }

    // the warped observable used by the rate experiments, applied to a doubling-map orbit
    let cfg = ObservableConfig::new(0.25, 1, Some(ObservableConfig::default_warp(1)?))?;
    let target = pushforward_density_fn(&cfg, &|_: &[f64]| 1.0, vec![64])?;
    let y = observe(&cfg, &sample_trajectory(&System::Doubling, 200_000, 5)?)?;
    let hist = density_from_samples(&y, vec![64])?;
    println!("\nwarped target: density range [{:.3}, {:.3}], Lipschitz constant of g {:.3}", target.min_value(), target.max_value(), cfg.lipschitz_constant());
    println!("histogram of 2e5 observed orbit points vs target: TV {:.4}", tv(&hist, &target)?);
    Ok(())
}
