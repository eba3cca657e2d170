//! Scratch probe for timing and accuracy checkpoints. Not part of the crate.

use spinscl::model::{Spin, SpinModel};
use spinscl::quantize::{quantize, QuantizeParams};
use std::time::Instant;

fn main() {
    // --- LMG j=200 checkpoint -------------------------------------------
    let spin = Spin::new(200.0, 0.005).unwrap();
    let model = SpinModel::lipkin(spin, 1.0, 200_000.0).unwrap();

    let t0 = Instant::now();
    let eig = model.eigensystem().unwrap();
    let t_eig = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let census = spinscl::census::census(&model, spinscl::census::CensusParams::default()).unwrap();
    let t_census = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let tab = quantize(&model, &census, QuantizeParams::default()).unwrap();
    let t_quant = t0.elapsed().as_secs_f64();

    println!(
        "lmg j=200: eig {t_eig:.2}s census {t_census:.2}s quantize {t_quant:.2}s levels={} dim={} span={:.6e}",
        tab.levels.len(),
        spin.dim(),
        tab.span
    );
    for w in &tab.warnings {
        println!("    warn: {w}");
    }

    let span = tab.span;
    let mut errs_unflagged: Vec<f64> = Vec::new();
    let mut n_flagged = 0usize;
    let mut worst_unflagged = (0usize, 0.0f64);
    for (n, lvl) in tab.levels.iter().enumerate() {
        let err = (lvl.energy - eig.energies[n]).abs();
        let flagged =
            lvl.flags.near_separatrix || lvl.flags.extrapolated || lvl.flags.loose_closure;
        if flagged {
            n_flagged += 1;
        } else {
            errs_unflagged.push(err);
            if err > worst_unflagged.1 {
                worst_unflagged = (n, err);
            }
        }
    }
    errs_unflagged.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = errs_unflagged[errs_unflagged.len() / 2];
    println!(
        "  unflagged={} flagged={} median |dE|/span = {:.3e}  (gate 1e-3)",
        errs_unflagged.len(),
        n_flagged,
        median / span
    );
    println!(
        "  worst unflagged: n={} |dE|/span = {:.3e}",
        worst_unflagged.0,
        worst_unflagged.1 / span
    );
    for n in [200usize, 270] {
        let lvl = &tab.levels[n];
        let err = (lvl.energy - eig.energies[n]).abs();
        println!(
            "  state {n}: |dE|/span = {:.3e}  (gate 2e-3)  flags: sep={} ext={} loose={}",
            err / span,
            lvl.flags.near_separatrix,
            lvl.flags.extrapolated,
            lvl.flags.loose_closure
        );
    }

    // --- Zeeman three-ladder timing --------------------------------------
    let t_all = Instant::now();
    for (j, hbar) in [(5.0, 0.2), (20.0, 0.05), (200.0, 0.005)] {
        let spin = Spin::new(j, hbar).unwrap();
        let model = SpinModel::zeeman(spin, 1.0).unwrap();
        let t0 = Instant::now();
        let census =
            spinscl::census::census(&model, spinscl::census::CensusParams::default()).unwrap();
        let tab = quantize(&model, &census, QuantizeParams::default()).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let hw = hbar * 1.0;
        let mut worst = (0usize, 0.0f64);
        for (n, lvl) in tab.levels.iter().enumerate() {
            let exact = hw * (n as f64 - j);
            let err = (lvl.energy - exact).abs() / hw;
            if err > worst.1 {
                worst = (n, err);
            }
        }
        println!(
            "zeeman j={j:>5}: levels={} worst |dE|/(hw) = {:.3e} at n={}  t={dt:.2}s",
            tab.levels.len(),
            worst.1,
            worst.0
        );
    }
    println!("zeeman total: {:.2}s", t_all.elapsed().as_secs_f64());
}
