//! A small rate experiment: divergence and generalization errors against sample size for
//! doubling-map orbits and for independent data, written as CSV and SVG.
//!
//! Run: cargo run --release --example rate_experiment [out-dir]

use std::path::PathBuf;

use ergodic_gal::harness::{emit_reports, run_rate_experiment, ExperimentConfig, SourceKind};

fn main() -> ergodic_gal::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "rate-experiment".into()));
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.n_grid = (8..=13).map(|e| 1 << e).collect();
    cfg.experiment.seeds = vec![0, 1, 2];
    for source in [SourceKind::Doubling, SourceKind::Iid] {
        let rep = run_rate_experiment(&cfg, source)?;
        println!("{}: jsd slope {:.3}, eps_gen_mu slope {:.3?}, eps_gen_lambda slope {:.3?}, tau {:.4}", source.label(), rep.fitted_slope, rep.slope_mu, rep.slope_lambda, rep.fitted_tau);
        for m in &rep.medians {
            println!("  n = {:>5}: jsd {:.3e}, eps_mu {:.3e}, eps_lambda {:.3e}", m.0, m.1, m.2, m.3);
        }
        let files = emit_reports(&rep, &out.join(source.label()))?;
        println!("  wrote {}", files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "));
    }
    Ok(())
}
