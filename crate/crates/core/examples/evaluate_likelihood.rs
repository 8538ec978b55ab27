//! Simulates one dataset on the synthetic site and evaluates the likelihood
//! at the generating parameters.
//!
//! cargo run --release --example evaluate_likelihood

use ascr::density::build_design_matrix;
use ascr::formula::parse_formula;
use ascr::likelihood::Likelihood;
use ascr::simulation::{simulate, synthetic_site, Placement, Scenario, SimConfig, SITE_MESH, SYNTHETIC_FORMULA};

fn main() -> ascr::Result<()> {
    let grids = synthetic_site(SITE_MESH)?;
    let scenario = Scenario::One;
    let config = SimConfig {
        truth: scenario.truth(),
        spec: scenario.spec(),
        formula: SYNTHETIC_FORMULA.into(),
        t_r: 96.0,
        m_min: 2,
        period: 5.0,
        placement: Placement::Centroid,
        seed: 7,
        replicates: 1,
    };
    let (data, truth) = simulate(&grids, &config, 0)?;
    println!("{} latent calls, {} retained after truncation", truth.n_emitted, data.n_calls());

    let formula = parse_formula(SYNTHETIC_FORMULA, grids.mesh.covariate_names())?;
    let design = build_design_matrix(&formula, &grids.mesh, false)?;
    let lik = Likelihood::new(&data, &grids, &design, scenario.spec())?;
    let parts = lik.evaluate(&config.truth)?;
    println!("conditional log-likelihood {:.4}", parts.conditional);
    println!("expected detected calls    {:.2}", parts.lambda);
    println!("full log-likelihood        {:.4}", parts.full);
    println!("expected singletons        {:.2}", lik.expected_singletons(&config.truth)?);
    Ok(())
}
