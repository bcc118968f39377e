//! Regenerates `fixtures/roundtrip_*` from the forward map `A ↦ n[exp(-(H+A)/T)]`.
//!
//! cargo run -p qlbgk --example gen_fixture

use std::path::Path;

use qlbgk::io::{density_csv, potential_csv, write_text};
use qlbgk::{maxwellian_from_potential, Potential, SpectralSpace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let space = SpectralSpace::new(8, 10.0)?;
    let values = space
        .grid_points()
        .iter()
        .map(|x| {
            let w = 2.0 * std::f64::consts::PI * x;
            0.8 * w.cos() - 0.3 * (2.0 * w).sin() + 0.1 * (3.0 * w).cos()
        })
        .collect();
    let a = Potential::new(space, values)?;
    let n = maxwellian_from_potential(&a)?.local_density();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    write_text(&dir.join("roundtrip_density.csv"), &density_csv(&n))?;
    write_text(&dir.join("roundtrip_potential.csv"), &potential_csv(&a))?;
    println!("wrote {}", dir.display());
    Ok(())
}
