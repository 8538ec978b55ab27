//! The signal-to-noise detection model: the detection curve against
//! expected level, and agreement with the threshold model in its step limit.
//!
//! cargo run --release --example snr_detection

use ascr::density::build_design_matrix;
use ascr::formula::parse_formula;
use ascr::likelihood::Likelihood;
use ascr::params::{BearingModel, ModelSpec};
use ascr::simulation::{simulate, synthetic_site, Placement, Scenario, SimConfig, SITE_MESH, SYNTHETIC_FORMULA};
use ascr::snr::{snr_detection_prob, step_limit, JanoschekParams, NoiseData, SnrLikelihood, SnrParams};

fn main() -> ascr::Result<()> {
    let jp = JanoschekParams::new(0.8, 0.1, 2.0)?;
    println!("noise 96 dB, sigma_r 2.7 dB");
    for e in (84..=120).step_by(4) {
        let g = snr_detection_prob(e as f64, 96.0, &jp, 2.7)?;
        println!("  expected level {e:>3} dB  P(detect) {g:.4}");
    }

    // With noise equal to the threshold everywhere and a near-step Janoschek
    // curve, the SNR likelihood reproduces the threshold likelihood.
    let grids = synthetic_site(SITE_MESH)?;
    let scenario = Scenario::Two;
    let sim = SimConfig {
        truth: scenario.truth(),
        spec: scenario.spec(),
        formula: SYNTHETIC_FORMULA.into(),
        t_r: 96.0,
        m_min: 2,
        period: 4.0,
        placement: Placement::Centroid,
        seed: 9,
        replicates: 1,
    };
    let (data, _) = simulate(&grids, &sim, 0)?;
    let spec = ModelSpec { bearings: BearingModel::Single, ..scenario.spec() };
    let formula = parse_formula(SYNTHETIC_FORMULA, grids.mesh.covariate_names())?;
    let design = build_design_matrix(&formula, &grids.mesh, false)?;
    let params = ascr::params::ParamVector { kappa: 5.0, ..scenario.truth() };

    let k = data.n_sensors();
    let noise = NoiseData::new(vec![vec![data.t_r; k]; data.n_calls()], vec![vec![data.t_r; k]], k)?;
    let snr = SnrLikelihood::new(&data, &noise, &grids, &design, spec)?
        .full_loglik(&SnrParams { janoschek: step_limit(params.g0), base: params.clone() })?;
    let threshold = Likelihood::new(&data, &grids, &design, spec)?.full_loglik(&params)?;
    println!("{} calls: SNR log L {snr:.6}, threshold log L {threshold:.6}", data.n_calls());
    Ok(())
}
