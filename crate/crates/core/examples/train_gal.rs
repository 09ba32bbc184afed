//! Train a generator on one doubling-map orbit seen through the warped tent observable, then
//! audit the achieved divergence against the measured error terms.
//!
//! Run: cargo run --release --example train_gal

use ergodic_gal::dynamics::{sample_trajectory, System};
use ergodic_gal::hypothesis::{generator_density, GeneratorShape, ModelConfig};
use ergodic_gal::measures::jsd;
use ergodic_gal::observable::{observe, pushforward_density_fn, ObservableConfig};
use ergodic_gal::risk::{
    decomposition_audit, generalization_error_lambda, generalization_error_mu, measure_model_errors, noise_samples,
    train_gal, GenErrorConfig, ModelErrorConfig, Optimizer, TrainConfig,
};

fn main() -> ergodic_gal::Result<()> {
    let n = 1 << 13;
    let obs = ObservableConfig::new(0.25, 1, Some(ObservableConfig::default_warp(1)?))?;
    let f_mu = pushforward_density_fn(&obs, &|_: &[f64]| 1.0, vec![1024])?;
    let y = observe(&obs, &sample_trajectory(&System::Doubling, n, 1)?)?;
    let z = noise_samples(1, n, 1);
    let model = ModelConfig::for_dim(1);
    let shape = GeneratorShape::default_for(1);

    for optimizer in [Optimizer::BestResponse, Optimizer::DescentAscent] {
        // a shorter, faster-stepping descent-ascent schedule than the default 2e4 iterations
        let cfg = TrainConfig { optimizer, gda_iterations: 3000, lr_generator: 0.1, lr_discriminator: 0.3, ..TrainConfig::default() };
        let t = train_gal(&y, &z, shape, &model, &cfg, 1)?;
        let d = jsd(&f_mu, &generator_density(&t.generator, &[1024])?)?;
        println!("{optimizer:?}: objective {:.6}, jsd to target {d:.3e}, converged {}", t.objective, t.converged);
    }

    let trained = train_gal(&y, &z, shape, &model, &TrainConfig::default(), 1)?;
    let g = GenErrorConfig::default();
    let mu = generalization_error_mu(&y, &f_mu, &model, &g)?;
    let lambda = generalization_error_lambda(&z, shape, &model, &g)?;
    let errors = measure_model_errors(&f_mu, shape, &model, &ModelErrorConfig::default(), &[("trained", &trained.generator)])?;
    let audit = decomposition_audit(&f_mu, &trained.generator, mu.value, lambda.value, &errors)?;
    println!("\njsd achieved    {:.3e}", audit.jsd_achieved);
    println!("model error (g) {:.3e}", audit.eps_model_g);
    println!("model error (d) {:.3e}", audit.eps_model_d);
    println!("gen error (mu)  {:.3e}", audit.eps_gen_mu);
    println!("gen error (lam) {:.3e}", audit.eps_gen_lambda);
    println!("audit holds: {} (slack {:.3e})", audit.holds, audit.slack);
    Ok(())
}
