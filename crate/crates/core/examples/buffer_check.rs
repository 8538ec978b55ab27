//! Checks whether the mesh extends far enough that boundary calls are
//! almost never detected by two sensors.
//!
//! cargo run --release --example buffer_check

use ascr::likelihood::check_buffer;
use ascr::mesh::MeshSpec;
use ascr::params::ParamVector;
use ascr::simulation::{synthetic_site, Scenario, SITE_MESH};

fn main() -> ascr::Result<()> {
    let params = ParamVector::simulation_variable_sl();
    let spec = Scenario::One.spec();
    let small = MeshSpec { outer_radius: 20_000.0, ..SITE_MESH };
    for (name, mesh) in [("20 km mesh", small), ("site mesh", SITE_MESH)] {
        let grids = synthetic_site(mesh)?;
        let report = check_buffer(&grids, &params, &spec, 96.0, 2, 0.001)?;
        let failing = report.cells.iter().filter(|c| !c.pass).count();
        println!(
            "{name}: {} boundary cells, max P(multiply detected) {:.2e}, {failing} over {}: {}",
            report.cells.len(),
            report.max_probability,
            report.threshold,
            if report.pass { "pass" } else { "fail" }
        );
    }
    Ok(())
}
