//! The order-2 dictionary and the exact encoding of the built-in drifts as
//! sparse coefficient matrices.
//!
//!     cargo run --release --example dictionary_encoding

use sde_select::dictionary::{encode_known_system, DictionaryBasis};
use sde_select::dynamics::{evaluate_drift, SystemId, SystemSpec};

fn main() -> sde_select::error::Result<()> {
    let basis = DictionaryBasis::new(3)?;
    let names: Vec<String> = basis.terms().iter().map(|t| t.name()).collect();
    println!("p = 3 dictionary ({} terms): {}", basis.p_star(), names.join(", "));

    let theta = [10.0, 28.0, 8.0 / 3.0];
    let (b, mask) = encode_known_system(SystemId::Lorenz63, &theta)?;
    println!("\nLorenz-63, active entries:");
    for (i, j) in mask.active() {
        println!("  dX{}/dt  {:+8.4} * {}", i + 1, b.values[[i, j]], names[j]);
    }
    let x = [1.5, -2.0, 20.0];
    let direct = evaluate_drift(&SystemSpec::known(SystemId::Lorenz63, &theta)?, &x, 0.0)?;
    let feats = basis.features(&x, 0.0)?;
    let via_b: Vec<f64> = (0..3).map(|i| (0..basis.p_star()).map(|j| b.values[[i, j]] * feats[j]).sum()).collect();
    println!("\nf(x) = {direct:?}\nB x~ = {via_b:?}");

    let (_, l96) = encode_known_system(SystemId::Lorenz96, &[8.0])?;
    println!("\nLorenz-96 column-major support: {:?}", l96.column_major_active());
    Ok(())
}
