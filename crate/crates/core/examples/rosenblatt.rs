//! Knothe-Rosenblatt transport onto a grid density and its fit by the monotone generator family.
//!
//! Run: cargo run --release --example rosenblatt

use ergodic_gal::hypothesis::{rosenblatt_transport, GeneratorShape, ModelConfig, Transport, TransportMap};
use ergodic_gal::measures::GridDensity;

fn main() -> ergodic_gal::Result<()> {
    // f = 2y has transport sqrt(z)
    let f = GridDensity::tabulate(vec![200], |y| 2.0 * y[0])?;
    let t = TransportMap::new(&f)?;
    let mut y = [0.0];
    let err = (0..=100).map(|i| i as f64 / 100.0).map(|z| { t.forward(&[z], &mut y); (y[0] - z.sqrt()).abs() }).fold(0.0, f64::max);
    println!("exact transport of 2y vs sqrt(z): sup error {err:.2e}");

    let model = ModelConfig::for_dim(1);
    for (label, dens) in [
        ("1 + 0.4 cos(pi y)", GridDensity::tabulate(vec![512], |y| 1.0 + 0.4 * (std::f64::consts::PI * y[0]).cos())?),
        ("1 + 0.5 sin(2 pi y)", GridDensity::tabulate(vec![512], |y| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * y[0]).sin())?),
    ] {
        let fit = rosenblatt_transport(&dens, GeneratorShape::default_for(1), &model)?;
        println!("{label:<20} map sup error {:.2e}, jsd {:.2e}, norm >= {:.3}, inverse norm >= {:.3}", fit.map_sup_error, fit.jsd, fit.norm, fit.inverse_norm);
    }

    let model2 = ModelConfig::for_dim(2);
    let dens2 = GridDensity::tabulate(vec![48, 48], |y| 1.0 + 0.3 * (std::f64::consts::PI * y[0]).cos() * (std::f64::consts::PI * y[1]).cos())?;
    let fit2 = rosenblatt_transport(&dens2, GeneratorShape::default_for(2), &model2)?;
    println!("d = 2 product-cosine target: map sup error {:.2e}, jsd {:.2e}", fit2.map_sup_error, fit2.jsd);
    Ok(())
}
