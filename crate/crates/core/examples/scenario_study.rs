//! A short simulation study: relative bias and CV of abundance under a
//! correct and a misspecified analysis model.
//!
//! cargo run --release --example scenario_study [replicates]

use ascr::simulation::{run_scenario, AnalysisModel, Scenario, ScenarioSettings};

fn main() -> ascr::Result<()> {
    let replicates = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(3);
    let settings = ScenarioSettings { replicates, ..ScenarioSettings::default() };
    let metrics = run_scenario(Scenario::Two, &[AnalysisModel::A, AnalysisModel::E], &settings)?;
    for m in metrics {
        println!(
            "{}: RB {:+.3}, CV {:.3}, {}/{} converged",
            m.label(),
            m.relative_bias,
            m.cv,
            m.n_converged,
            m.replicates.len()
        );
    }
    Ok(())
}
