//! Nonparametric bootstrap of a fitted model.
//!
//! cargo run --release --example bootstrap_uncertainty

use ascr::estimation::{fit, FitConfig};
use ascr::formula::parse_formula;
use ascr::simulation::{simulate, synthetic_site, Placement, Scenario, SimConfig, SITE_MESH, SYNTHETIC_FORMULA};
use ascr::uncertainty::{bootstrap, summarize, BootstrapConfig};

fn main() -> ascr::Result<()> {
    let grids = synthetic_site(SITE_MESH)?;
    let scenario = Scenario::Two;
    let sim = SimConfig {
        truth: scenario.truth(),
        spec: scenario.spec(),
        formula: SYNTHETIC_FORMULA.into(),
        t_r: 96.0,
        m_min: 2,
        period: 20.0,
        placement: Placement::Centroid,
        seed: 4,
        replicates: 1,
    };
    let (data, _) = simulate(&grids, &sim, 0)?;
    let formula = parse_formula(SYNTHETIC_FORMULA, grids.mesh.covariate_names())?;
    let config = FitConfig { spec: scenario.spec(), ..FitConfig::default() };
    let base = fit(&data, &formula, &grids, &config)?;

    let run = bootstrap(&data, &formula, &grids, &config, &base, &BootstrapConfig { replicates: 25, seed: 1, start_at_base: true })?;
    let summary = summarize(&run, &base)?;
    println!("{}/{} replicates converged", summary.n_converged, summary.replicates);
    println!("{:>12} {:>10} {:>10} {:>8} {:>10} {:>10}", "parameter", "estimate", "se", "cv %", "2.5%", "97.5%");
    for p in &summary.parameters {
        println!("{:>12} {:>10.3} {:>10.3} {:>8.2} {:>10.3} {:>10.3}", p.name, p.estimate, p.se, p.cv_percent, p.lower, p.upper);
    }
    let a = &summary.abundance;
    println!("{:>12} {:>10.1} {:>10.1} {:>8.2} {:>10.1} {:>10.1}", "N", a.estimate, a.se, a.cv_percent, a.lower, a.upper);
    let max_qcd = summary.qcd.iter().cloned().fold(0.0, f64::max);
    println!("largest per-cell density QCD {max_qcd:.3}");
    Ok(())
}
