//! Explicit nets of Hölder balls, covering numbers of small metric spaces, Dudley integrals and
//! the constants of the generalization rates.
//!
//! Run: cargo run --release --example holder_nets

use ergodic_gal::entropy::{
    build_c1_net, covering_subset_inequality_check, dudley_integral, dudley_quadrature, fit_entropy_exponent,
    rate_constants, verify_c1_net, verify_sup_net, HolderBall, RateInputs,
};
use ergodic_gal::hypothesis::ModelConfig;

fn main() -> ergodic_gal::Result<()> {
    println!("{:>8} {:>14} {:>10}", "eps", "log |net|", "covered");
    let mut reports = Vec::new();
    for eps in [0.5, 0.25, 0.125, 0.0625] {
        let r = verify_sup_net(HolderBall::lipschitz(1, 1.0), eps, 1000, None, 1)?;
        println!("{eps:>8} {:>14.3} {:>10.3}", r.log_net_size, r.verified_fraction);
        reports.push(r);
    }
    let (s, gamma) = fit_entropy_exponent(&reports)?;
    println!("log N(eps) ~ {gamma:.3} eps^-{s:.3}");

    let ball = HolderBall { d: 1, k: 1, alpha: 1.0, radius: 1.0 };
    let net = build_c1_net(ball, 0.25)?;
    let c1 = verify_c1_net(ball, 0.25, 500, 2)?;
    println!("\nC1 net at eps 1/4: {} constants, log size {:.2}, coverage {:.3}", net.constants.len(), net.log_size(), c1.verified_fraction);

    let sub = covering_subset_inequality_check(30, 12, 3)?;
    println!("subset covering inequality: {} cases, {} violations", sub.cases, sub.violations);

    let (g, s, d) = (2.0, 1.0, 0.5);
    println!("\nDudley integral: closed form {:.12}, quadrature {:.12}", dudley_integral(g, s, d)?, dudley_quadrature(&|e: f64| g / e, d, 1e-12));

    let mut model = ModelConfig::for_dim(1);
    model.b = 0.1;
    model.c1 = 1.0;
    let rc = rate_constants(&model, &RateInputs { c_sys: 1.0, l_obs: 1.0, gamma_hat: 1.0, delta_c1: None })?;
    println!("rate constants: {rc:#?}");
    Ok(())
}
