//! Fits a density surface to simulated fixed source-level data.
//!
//! cargo run --release --example fit_model

use ascr::estimation::{fit, FitConfig};
use ascr::formula::parse_formula;
use ascr::simulation::{simulate, synthetic_site, Placement, Scenario, SimConfig, SITE_MESH, SYNTHETIC_FORMULA};

fn main() -> ascr::Result<()> {
    let grids = synthetic_site(SITE_MESH)?;
    let scenario = Scenario::Two;
    let sim = SimConfig {
        truth: scenario.truth(),
        spec: scenario.spec(),
        formula: SYNTHETIC_FORMULA.into(),
        t_r: 96.0,
        m_min: 2,
        period: scenario.period(),
        placement: Placement::Centroid,
        seed: 3,
        replicates: 1,
    };
    let (data, truth) = simulate(&grids, &sim, 0)?;
    let formula = parse_formula(SYNTHETIC_FORMULA, grids.mesh.covariate_names())?;
    let config = FitConfig { spec: scenario.spec(), ..FitConfig::default() };
    let result = fit(&data, &formula, &grids, &config)?;

    println!("{} calls, converged: {} ({})", data.n_calls(), result.converged, result.message);
    for e in &result.estimates {
        println!("{:>12} {:>12.4}", e.name, e.real);
    }
    println!("log L {:.3}, AIC {:.3}", result.log_likelihood, result.aic);
    println!("N hat {:.1} (true call count {})", result.n_hat, truth.n_emitted);
    Ok(())
}
