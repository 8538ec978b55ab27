//! Ranks a handful of density formulas by AIC.
//!
//! cargo run --release --example model_selection

use ascr::estimation::{model_select, FitConfig};
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
        period: 20.0,
        placement: Placement::Centroid,
        seed: 12,
        replicates: 1,
    };
    let (data, _) = simulate(&grids, &sim, 0)?;
    let names = grids.mesh.covariate_names();
    let candidates = ["D ~ 1", "D ~ d", "D ~ d + d2", "D ~ s(d, k = 3, fx = TRUE)"]
        .iter()
        .map(|f| parse_formula(f, names))
        .collect::<ascr::Result<Vec<_>>>()?;
    let config = FitConfig { spec: scenario.spec(), ..FitConfig::default() };
    let rows = model_select(&data, &candidates, &grids, &config)?;
    println!("{:>4} {:<30} {:>3} {:>12} {:>10} {:>10}", "rank", "formula", "k", "AIC", "dAIC", "N hat");
    for r in rows {
        let rank = r.rank.map_or("-".into(), |v| v.to_string());
        let delta = r.delta_aic.map_or("-".into(), |v| format!("{v:.2}"));
        println!("{rank:>4} {:<30} {:>3} {:>12.3} {delta:>10} {:>10.1}", r.formula, r.n_params, r.aic, r.n_hat);
    }
    Ok(())
}
