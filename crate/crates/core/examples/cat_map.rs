//! Arnold's cat map on the 2-torus: float and exact rational orbits, expansion rate, and
//! equidistribution of a long orbit.
//!
//! Run: cargo run --release --example cat_map

use ergodic_gal::dynamics::{generate_trajectory, generate_trajectory_exact, sample_trajectory, System, TorusAutomorphism, TorusPoint};
use ergodic_gal::measures::{density_from_samples, tv, GridDensity};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

fn main() -> ergodic_gal::Result<()> {
    let a = TorusAutomorphism::cat_map();
    println!("matrix {:?}, inverse {:?}, expansion rate {:.6}", a.matrix(), a.inverse_matrix(), a.expansion_rate());

    // a rational point has a periodic orbit; floats drift off it at the expansion rate
    let x0 = vec![BigRational::new(BigInt::from(1), BigInt::from(7)), BigRational::new(BigInt::from(3), BigInt::from(7))];
    let exact = generate_trajectory_exact(&a, &x0, 30)?;
    let sys = System::Automorphism(a.clone());
    let start = TorusPoint::new(x0.iter().map(|v| v.to_f64().unwrap()).collect())?;
    let float = generate_trajectory(&sys, &start, 30)?;
    let period = (1..exact.len()).find(|&i| exact[i] == exact[0]).unwrap_or(0);
    println!("\nexact orbit of (1/7, 3/7) has period {period}");
    for i in [0usize, 5, 10, 20, 29] {
        let e: Vec<f64> = exact[i].iter().map(|v| v.to_f64().unwrap()).collect();
        let f = float.state(i);
        println!("step {i:>2}: exact ({:.6}, {:.6}) float ({:.6}, {:.6})", e[0], e[1], f[0], f[1]);
    }

    // a typical orbit equidistributes
    println!("\n{:>8} {:>10}", "n", "TV to uniform (32x32)");
    let uniform = GridDensity::uniform(vec![32, 32])?;
    for n in [1_000usize, 10_000, 100_000, 1_000_000] {
        let traj = sample_trajectory(&sys, n, 11)?;
        let hist = density_from_samples(traj.states(), vec![32, 32])?;
        println!("{n:>8} {:>10.5}", tv(&hist, &uniform)?);
    }
    Ok(())
}
