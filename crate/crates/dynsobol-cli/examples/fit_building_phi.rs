//! Regenerates `fixtures/building_phi.toml`: simulates the default building
//! input VAR(2), drives the output recursion with the generator
//! coefficients, refits them by least squares, and prints the fixture
//! content. The recursion is deterministic given the inputs, so the fit
//! returns the generator up to machine precision; running this confirms it.

use dynsobol::config::{parse_toml, VarModelConfig};
use dynsobol::ingest::{fit_building_phi, rows_from_batch};
use dynsobol::models::{BuildingModel, BuildingPhi, ModelFunction};

fn main() {
    let cfg: VarModelConfig =
        parse_toml(include_str!("../fixtures/building_var.toml")).expect("fixture parses");
    let model = cfg.into_model().expect("fixture model is valid");

    let generator = BuildingPhi {
        output_lags: [0.5, 0.2],
        input_lag1: vec![0.05, 0.08, 0.05, 0.08, 0.55],
        input_lag2: vec![0.02, 0.03, 0.02, 0.03, 0.20],
        init: [0.0, 0.0],
    };
    let output_model = BuildingModel::new(&generator).expect("generator is stable");

    let steps = 200_000;
    let batch = model
        .simulate(steps - 1, 1, 20_240_601, 500)
        .expect("simulation succeeds");
    let y = output_model.evaluate(&batch).expect("evaluation succeeds");
    let exog = rows_from_batch(&batch, 0);
    let out: Vec<f64> = (0..steps).map(|t| y.value(0, t)).collect();

    let fitted = fit_building_phi(&[exog], &[out]).expect("fit succeeds");
    let max_dev = generator
        .input_lag1
        .iter()
        .zip(&fitted.input_lag1)
        .chain(generator.input_lag2.iter().zip(&fitted.input_lag2))
        .map(|(a, b)| (a - b).abs())
        .chain([
            (generator.output_lags[0] - fitted.output_lags[0]).abs(),
            (generator.output_lags[1] - fitted.output_lags[1]).abs(),
        ])
        .fold(0.0f64, f64::max);
    eprintln!("max |fitted - generator| = {max_dev:.3e}");
    assert!(max_dev < 1e-8, "fit did not recover the generator");

    let round3 = |v: &f64| (v * 1000.0).round() / 1000.0;
    println!("output_lags = [{}, {}]", round3(&fitted.output_lags[0]), round3(&fitted.output_lags[1]));
    println!(
        "input_lag1 = [{}]",
        fitted.input_lag1.iter().map(|v| round3(v).to_string()).collect::<Vec<_>>().join(", ")
    );
    println!(
        "input_lag2 = [{}]",
        fitted.input_lag2.iter().map(|v| round3(v).to_string()).collect::<Vec<_>>().join(", ")
    );
    println!("init = [0.0, 0.0]");
}
