//! How the Sigma conditional reacts to small perturbations of a chaotic
//! path: Lorenz-63 with Sigma = 0.06, path noise of sd s, five trajectories.
//!
//!     cargo run --release --example butterfly_table

use sde_select::experiment::butterfly_table;

fn main() -> sde_select::error::Result<()> {
    let rows = butterfly_table(&[1, 2, 3, 4, 5])?;
    println!("{:>6} {:>10} {:>10} {:>10} {:>10} {:>10}", "s", "Sigma_x", "Sigma_y", "Sigma_z", "analytic", "max dev");
    for r in rows {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9.1}%",
            r.noise_sd,
            r.mean[0],
            r.mean[1],
            r.mean[2],
            r.analytic,
            100.0 * r.max_rel_error_reference()
        );
    }
    Ok(())
}
