mod common;

use ascr::density::{build_design_matrix, log_density};
use ascr::estimation::{fit, loglik_gradient, rank_rows, FitConfig, SelectionRow};
use ascr::formula::parse_formula;
use ascr::likelihood::{Dataset, LatentGrids, Likelihood};
use ascr::params::{ParamVector, SourceLevelMode};
use ascr::simulation::{simulate, synthetic_site, Scenario, SimConfig, SITE_MESH, SYNTHETIC_FORMULA};
use common::instances::small;
use proptest::prelude::*;

/// Five-point central difference with a wider step than the optimiser's.
fn reference_gradient(lik: &Likelihood<'_>, params: &ParamVector) -> Vec<f64> {
    let spec = *lik.spec();
    let theta = params.transform(&spec).unwrap();
    let f = |t: &[f64]| lik.full_loglik(&ParamVector::untransform(t, &spec).unwrap()).unwrap();
    (0..theta.len())
        .map(|i| {
            let h = 1e-4 * theta[i].abs().max(1.0);
            let at = |k: f64| {
                let mut t = theta.clone();
                t[i] += k * h;
                f(&t)
            };
            (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h)
        })
        .collect()
}

#[test]
fn optimiser_gradient_matches_reference() {
    let mut checked = 0;
    for seed in 0..60 {
        let inst = small(seed);
        if inst.data.n_calls() == 0 {
            continue;
        }
        let lik = Likelihood::new(&inst.data, &inst.grids, &inst.design, inst.spec).unwrap();
        let got = loglik_gradient(&lik, &inst.params).unwrap();
        let want = reference_gradient(&lik, &inst.params);
        let scale = want.iter().fold(1.0f64, |m, g| m.max(g.abs()));
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-5 * scale, "seed {seed}: {got:?} vs {want:?}");
        }
        checked += 1;
    }
    assert!(checked > 30);
}

struct Fixture {
    data: Dataset,
    grids: LatentGrids,
    truth: ParamVector,
    config: FitConfig,
}

/// A fixed source-level dataset on the synthetic site, cheap to fit.
fn fixture() -> Fixture {
    let grids = synthetic_site(SITE_MESH).unwrap();
    let scenario = Scenario::Two;
    let sim = SimConfig {
        truth: scenario.truth(),
        spec: scenario.spec(),
        formula: SYNTHETIC_FORMULA.into(),
        t_r: 96.0,
        m_min: 2,
        period: 15.0,
        placement: Default::default(),
        seed: 99,
        replicates: 1,
    };
    let (data, _) = simulate(&grids, &sim, 0).unwrap();
    assert_eq!(sim.spec.source_level, SourceLevelMode::Fixed);
    let config = FitConfig { spec: sim.spec, start: Some(sim.truth.clone()), ..FitConfig::default() };
    Fixture { data, grids, truth: sim.truth, config }
}

#[test]
fn standardisation_does_not_move_the_optimum() {
    let fx = fixture();
    let formula = parse_formula(SYNTHETIC_FORMULA, fx.grids.mesh.covariate_names()).unwrap();
    let mut out = Vec::new();
    for standardize in [true, false] {
        let cfg = FitConfig { standardize, ..fx.config.clone() };
        let r = fit(&fx.data, &formula, &fx.grids, &cfg).unwrap();
        assert!(r.converged, "standardize = {standardize}: {}", r.message);
        let design = build_design_matrix(&formula, &fx.grids.mesh, false).unwrap();
        out.push((r.n_hat, log_density(&r.beta_original, &design).unwrap(), r.log_likelihood));
    }
    let (a, b) = (&out[0], &out[1]);
    assert!((a.2 - b.2).abs() < 1e-3, "log L {} vs {}", a.2, b.2);
    assert!((a.0 - b.0).abs() / a.0 < 1e-3, "N {} vs {}", a.0, b.0);
    // Cells that carry the abundance agree closely; log D in empty far cells
    // is weakly identified.
    let peak = a.1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (x, y) in a.1.iter().zip(&b.1) {
        if *x > peak - 5.0 {
            assert!((x - y).abs() < 1e-2, "{x} vs {y}");
        }
    }
}

#[test]
fn repeated_fits_are_bit_identical() {
    let fx = fixture();
    let formula = parse_formula(SYNTHETIC_FORMULA, fx.grids.mesh.covariate_names()).unwrap();
    let a = fit(&fx.data, &formula, &fx.grids, &fx.config).unwrap();
    let b = fit(&fx.data, &formula, &fx.grids, &fx.config).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn refit_from_the_optimum_stays_put() {
    let fx = fixture();
    let formula = parse_formula(SYNTHETIC_FORMULA, fx.grids.mesh.covariate_names()).unwrap();
    let first = fit(&fx.data, &formula, &fx.grids, &fx.config).unwrap();
    let again = FitConfig { start: Some(first.params_original()), ..fx.config.clone() };
    let second = fit(&fx.data, &formula, &fx.grids, &again).unwrap();
    assert!(second.log_likelihood >= first.log_likelihood - 1e-6);
    assert!((second.n_hat - first.n_hat).abs() / first.n_hat < 1e-3);
    assert!(fx.truth.beta.len() == first.beta_original.len());
}

fn row(aic: f64) -> SelectionRow {
    SelectionRow {
        rank: None,
        formula: format!("{aic}"),
        n_params: 0,
        log_likelihood: -aic / 2.0,
        aic,
        delta_aic: None,
        n_hat: 0.0,
        converged: true,
        message: String::new(),
    }
}

proptest! {
    #[test]
    fn ranking_ignores_a_shared_constant(aics in prop::collection::vec(0.0f64..1e4, 1..35), c in -1e4f64..1e4) {
        let mut base: Vec<SelectionRow> = aics.iter().map(|&a| row(a)).collect();
        let mut shifted: Vec<SelectionRow> = aics.iter().map(|&a| SelectionRow { formula: format!("{a}"), ..row(a + c) }).collect();
        rank_rows(&mut base);
        rank_rows(&mut shifted);
        for (x, y) in base.iter().zip(&shifted) {
            prop_assert_eq!(&x.formula, &y.formula);
            prop_assert!((x.delta_aic.unwrap() - y.delta_aic.unwrap()).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }
}
