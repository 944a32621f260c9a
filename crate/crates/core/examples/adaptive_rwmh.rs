//! The random-walk kernel and acceptance-targeted scaling on a standalone
//! target: a two-dimensional correlated Gaussian.
//!
//!     cargo run --release --example adaptive_rwmh

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sde_select::samplers::{adapt_proposal_scales, rwmh_update, AcceptanceWindow, ProposalScales};

fn log_target(x: &[f64]) -> f64 {
    let rho: f64 = 0.8;
    let q = (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / (1.0 - rho * rho);
    -0.5 * q
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scales = ProposalScales::new(10.0, Vec::new());
    let mut x = vec![3.0, -3.0];
    let mut lx = log_target(&x);
    let mut window = AcceptanceWindow::new(0);
    let mut sum = [0.0; 2];
    let mut kept = 0;
    for iter in 0..60_000 {
        let step = rwmh_update(&x, lx, log_target, scales.x, &mut rng);
        window.x.1 += 1;
        window.x.0 += u64::from(step.accepted);
        x = step.value;
        lx = step.log_density;
        if iter < 20_000 && (iter + 1) % scales.window == 0 {
            scales = adapt_proposal_scales(&window, &scales);
            println!("iteration {:>6}: acceptance {:.3}, scale -> {:.3}", iter + 1, window.x.0 as f64 / window.x.1 as f64, scales.x);
            window = AcceptanceWindow::new(0);
        }
        if iter >= 20_000 {
            sum[0] += x[0];
            sum[1] += x[1];
            kept += 1;
        }
    }
    println!("mean after adaptation: ({:.3}, {:.3})", sum[0] / kept as f64, sum[1] / kept as f64);
}
