use std::time::Instant;

use gmopt_core::circuit::AnalyticEvaluator;
use gmopt_core::mobo::{
    report, run_optimization, EvalError, Evaluation, Evaluator, OptConfig, OptState, Phase,
};
use gmopt_core::{DesignPoint, DesignSpace, ObjectiveSpec, Parameter, Sense};

struct Toy;

impl Evaluator for Toy {
    fn objectives(&self) -> Vec<ObjectiveSpec> {
        vec![
            ObjectiveSpec::new("f1", Sense::Minimize),
            ObjectiveSpec::new("f2", Sense::Minimize),
        ]
    }

    fn evaluate(&self, p: &DesignPoint) -> Result<Evaluation, EvalError> {
        let x = p.0[0];
        Ok(Evaluation {
            objectives: vec![x * x, (x - 1.0).powi(2)],
            metrics: None,
        })
    }
}

fn toy_space() -> DesignSpace {
    DesignSpace::new(
        (1..=5)
            .map(|i| Parameter::linear(&format!("x{i}"), "", 0.0, 1.0))
            .collect(),
    )
    .unwrap()
}

/// Area between the reference box and the front y2 = (1 - sqrt(y1))^2,
/// by composite Simpson integration over y1 in [0, 1] plus the strip
/// y1 in [1, 1.1] where the point (1, 0) dominates everything.
fn toy_max_hv(r: f64) -> f64 {
    let n = 20_000;
    let h = 1.0 / n as f64;
    let g = |y1: f64| r - (1.0 - y1.sqrt()).powi(2);
    let mut s = g(0.0) + g(1.0);
    for i in 1..n {
        s += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 + (r - 1.0) * r
}

#[test]
fn toy_oracle_value() {
    assert!((toy_max_hv(1.1) - (1.21 - 1.0 / 6.0)).abs() < 1e-6);
}

#[test]
fn toy_problem_approaches_true_front() {
    let cfg = OptConfig {
        seed: 7,
        reference: Some(vec![1.1, 1.1]),
        ..OptConfig::default()
    };
    let t = Instant::now();
    let state = run_optimization(&toy_space(), &Toy, &cfg, &mut |_| {}).unwrap();
    eprintln!("toy run {:?}, hv {}", t.elapsed(), state.final_hypervolume());
    assert_eq!(state.trials.len(), 35);
    assert!(state.final_hypervolume() >= 0.95 * toy_max_hv(1.1));
}

#[test]
fn analytic_run_shape_and_report() {
    let cfg = OptConfig {
        seed: 1,
        ..OptConfig::default()
    };
    let t = Instant::now();
    let state: OptState = run_optimization(
        &DesignSpace::default_analytic(),
        &AnalyticEvaluator::default(),
        &cfg,
        &mut |_| {},
    )
    .unwrap();
    eprintln!("analytic run {:?}", t.elapsed());
    assert_eq!(state.trials.len(), 35);
    assert_eq!(state.hv_trace.len(), 35);
    assert!(state.hv_trace.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(state.trials.iter().filter(|t| t.phase == Phase::Init).count(), 10);

    let summary = report(&state);
    for o in &summary.objectives {
        assert!(o.improvement >= 0.0, "{o:?}");
    }
    let text = serde_json::to_string(&summary).unwrap();
    assert_eq!(serde_json::from_str::<gmopt_core::mobo::Summary>(&text).unwrap(), summary);
    let state_text = serde_json::to_string(&state).unwrap();
    assert_eq!(serde_json::from_str::<OptState>(&state_text).unwrap(), state);
}

#[test]
fn init_only_run_reports_zero_improvement() {
    let cfg = OptConfig {
        n_init: 5,
        n_acq: 0,
        ..OptConfig::default()
    };
    let state = run_optimization(
        &DesignSpace::default_analytic(),
        &AnalyticEvaluator::default(),
        &cfg,
        &mut |_| {},
    )
    .unwrap();
    let summary = report(&state);
    assert!(summary.objectives.iter().all(|o| o.improvement == 0.0));
}
