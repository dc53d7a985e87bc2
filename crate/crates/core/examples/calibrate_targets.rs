//! Fit the latency-model constants to the shipped single-client targets and
//! print the residual table plus the resulting parameter file.

use servesim::calibrate::{fit_scenario_params, Evaluator, GridSpec, TargetSet};
use servesim::ParamSet;

fn main() {
    let targets = TargetSet::shipped();
    let report = fit_scenario_params(
        &Evaluator::default(),
        &targets,
        &ParamSet::default(),
        &GridSpec::default(),
    )
    .expect("calibration runs");
    print!("{}", report.render());
    println!("\n{}", report.params.to_toml());
}
