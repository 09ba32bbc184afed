//! Young tower of the doubling map: tails, semi-conjugacy and invariance of the lifted measure.
//!
//! Run: cargo run --release --example doubling_tower

use ergodic_gal::tower::{
    check_semiconjugacy, fit_tail_rate, lift_and_push_measure, sample_states, tail_distribution, CorruptedReturn,
    DoublingMap, LiftWeighting, TowerSpec,
};

fn main() -> ergodic_gal::Result<()> {
    let spec = TowerSpec::doubling(64);
    println!("cells: {}, lifted mass sum m_i R_i = {:.6}", spec.cells().len(), spec.lifted_mass());

    println!("\n{:>4} {:>14} {:>14}", "n", "mu(R > n)", "2^(1-n)");
    for n in [1u32, 2, 3, 5, 10, 20, 40] {
        println!("{:>4} {:>14.6e} {:>14.6e}", n, tail_distribution(&spec, n), 2f64.powi(1 - n as i32));
    }
    let fit = fit_tail_rate(&spec, 40)?;
    println!("\nfitted tail: c = {:.6}, tau = {:.6}, exponential = {}", fit.c, fit.tau, fit.exponential);

    let states = sample_states(&spec, &DoublingMap, 10_000, 1, LiftWeighting::Tower);
    let honest = check_semiconjugacy(&spec, &DoublingMap, &states);
    let corrupted = check_semiconjugacy(&spec, &CorruptedReturn { inner: DoublingMap, shift: 1e-3 }, &states);
    println!("\nsemi-conjugacy discrepancy: honest {:.3e}, corrupted return map {:.3e}", honest.max_discrepancy, corrupted.max_discrepancy);

    for (label, w) in [("tower weighting", LiftWeighting::Tower), ("ignoring heights", LiftWeighting::IgnoreReturnTimes)] {
        let rep = lift_and_push_measure(&spec, &DoublingMap, 1_000_000, 64, 2, w)?;
        println!("TV(projected lift, pushed once) with {label:<17}: {:.5}", rep.tv);
    }
    Ok(())
}
