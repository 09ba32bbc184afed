//! Divergences between grid densities and the optimal discriminator: its population risk
//! equals the Jensen-Shannon divergence minus ln 2, and any other discriminator scores less.
//!
//! Run: cargo run --release --example divergences

use std::f64::consts::LN_2;

use ergodic_gal::hypothesis::{generator_density, optimal_discriminator, GeneratorShape, MonotoneGenerator, DEFAULT_FLOOR};
use ergodic_gal::measures::{jsd, kl, tv, GridDensity};
use ergodic_gal::risk::{population_risk, FnDiscriminator};

fn main() -> ergodic_gal::Result<()> {
    let res = vec![1024];
    let p = GridDensity::tabulate(res.clone(), |y| 2.0 * y[0])?;
    let q = GridDensity::uniform(res.clone())?;
    println!("f = 2y against uniform: kl {:.6} (exact {:.6}), jsd {:.6}, tv {:.6} (exact 0.25)", kl(&p, &q)?, LN_2 - 0.5, jsd(&p, &q)?, tv(&p, &q)?);

    let f_mu = GridDensity::tabulate(res.clone(), |y| 1.0 + 0.4 * (std::f64::consts::PI * y[0]).cos())?;
    let g = MonotoneGenerator::new(GeneratorShape::default_for(1), DEFAULT_FLOOR, vec![vec![1.0, 0.3, 0.0, -0.2, 0.0, 0.0]])?;
    let f_phi = generator_density(&g, &res)?;
    let xi = optimal_discriminator(&f_mu, &f_phi)?;
    let best = population_risk(&f_mu, &g, &xi)?;
    println!("\nrisk of the optimal discriminator {:.9}", best.l);
    println!("jsd - ln 2                       {:.9}", jsd(&f_mu, &f_phi)? - LN_2);
    for (label, c) in [("constant 1/2", 0.0), ("tilted", 0.8), ("tilted the other way", -0.8)] {
        let other = FnDiscriminator(move |y: &[f64]| 0.5 + 0.4 * (c * (y[0] - 0.5)).tanh());
        println!("{label:<22} risk {:.9}", population_risk(&f_mu, &g, &other)?.l);
    }
    Ok(())
}
