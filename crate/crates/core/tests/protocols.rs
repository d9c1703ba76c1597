use vennpred::data::{Dataset, Example};
use vennpred::harness::{
    cross_validate, run_batch, run_online, stratified_folds, with_workers, BatchPlan, Fitted, Prediction, Predictor,
    PredictorSpec,
};
use vennpred::mlp::TrainConfig;
use vennpred::rebalance::{RebalanceKind, RebalanceMode};
use vennpred::Result;

/// Predicts the training prevalence for everything.
struct Prevalence;

struct FittedPrevalence(f64);

impl Fitted for FittedPrevalence {
    fn predict(&self, _x: &[f64]) -> Result<Prediction> {
        Ok(Prediction {
            label: u8::from(self.0 > 0.5),
            p1: self.0,
            error_interval: None,
        })
    }
}

impl Predictor for Prevalence {
    fn fit<'a>(&'a self, train: &'a Dataset) -> Result<Box<dyn Fitted + 'a>> {
        Ok(Box::new(FittedPrevalence(train.prevalence().unwrap())))
    }
}

/// Always claims the uninformative error interval [0, 1].
struct Vacuous;

impl Fitted for Vacuous {
    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Ok(Prediction {
            label: u8::from(x[0] > 0.0),
            p1: 0.5,
            error_interval: Some((0.0, 1.0)),
        })
    }
}

impl Predictor for Vacuous {
    fn fit<'a>(&'a self, _train: &'a Dataset) -> Result<Box<dyn Fitted + 'a>> {
        Ok(Box::new(Vacuous))
    }
}

fn toy(pos: usize, neg: usize) -> Dataset {
    let rows = (0..pos + neg).map(|i| vec![i as f64]).collect();
    let labels: Vec<u8> = (0..pos + neg).map(|i| u8::from(i < pos)).collect();
    Dataset::from_rows(rows, &labels).unwrap()
}

#[test]
fn prevalence_predictor_cross_entropy_closed_form() {
    let data = toy(5, 15);
    let result = cross_validate(&data, &Prevalence, 5, 3, 11, 20).unwrap();
    // every training split holds 4 positives and 12 negatives
    let expected = -(5.0 * 0.25f64.ln() + 15.0 * 0.75f64.ln());
    assert_eq!(result.per_run.len(), 3);
    for run in &result.per_run {
        assert!((run.cross_entropy - expected).abs() < 1e-9, "{}", run.cross_entropy);
        assert_eq!(run.n, 20);
    }
    assert!((result.pooled.cross_entropy - 3.0 * expected).abs() < 1e-9);
    assert_eq!(result.predictions.len(), 60);
}

#[test]
fn leave_one_out() {
    let data = toy(3, 7);
    let assign = stratified_folds(&data.labels().unwrap(), 10, 0).unwrap();
    let mut seen = assign.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..10).collect::<Vec<_>>());

    let result = cross_validate(&data, &Prevalence, 10, 1, 0, 20).unwrap();
    for h in &result.predictions {
        let pos = 3 - usize::from(h.label);
        assert_eq!(h.prediction.p1, pos as f64 / 9.0);
    }
}

#[test]
fn folds_need_enough_examples_per_class() {
    let data = toy(2, 10);
    assert!(cross_validate(&data, &Prevalence, 5, 1, 0, 20).is_err());
    assert!(cross_validate(&data, &Prevalence, 13, 1, 0, 20).is_err());
}

#[test]
fn each_repeat_predicts_every_example_once() {
    let data = toy(6, 14);
    let result = cross_validate(&data, &Prevalence, 4, 5, 3, 20).unwrap();
    for r in 0..5 {
        let mut idx: Vec<usize> = result
            .predictions
            .iter()
            .filter(|h| h.repeat == r)
            .map(|h| h.index)
            .collect();
        idx.sort_unstable();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
    }
}

#[test]
fn vacuous_bounds_give_extreme_curves() {
    let data = toy(4, 16);
    let trace = run_online(&data, &Vacuous, 3).unwrap();
    assert_eq!(trace.len(), 17);
    for i in 0..trace.len() {
        assert_eq!(trace.lep[i], 0.0);
        assert_eq!(trace.uep[i], (i + 1) as f64);
    }
    assert!(trace.containment_violations(|_| 0.0).is_empty());
    let csv = trace.to_csv();
    assert!(csv.starts_with("n,err,E_n,LEP_n,UEP_n\n"));
    assert_eq!(csv.lines().count(), 18);
}

#[test]
fn online_without_bounds_has_pvalue() {
    let data = toy(4, 16);
    let trace = run_online(&data, &Prevalence, 5).unwrap();
    assert!(!trace.has_bounds());
    assert!(trace.to_csv().starts_with("n,err,E_n,EP_n\n"));
    let p = trace.miscalibration_pvalue().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(trace.to_svg("prevalence").contains("<svg"));
}

#[test]
fn online_rejects_bad_initial_size() {
    let data = toy(2, 3);
    assert!(run_online(&data, &Vacuous, 0).is_err());
    assert!(run_online(&data, &Vacuous, 5).is_err());
}

#[test]
fn batch_results_independent_of_worker_count() {
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, (i % 3) as f64]).collect();
    let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 7 < 2)).collect();
    let data = Dataset::from_rows(rows, &labels).unwrap();
    let mut plan = BatchPlan::new(
        PredictorSpec::Ann {
            mode: RebalanceMode::new(RebalanceKind::Mo),
            train_cfg: TrainConfig::default(),
        },
        4,
    );
    plan.folds = 4;
    plan.repeats = 3;
    let one = with_workers(Some(1), || run_batch(&data, &plan)).unwrap().unwrap();
    let three = with_workers(Some(3), || run_batch(&data, &plan)).unwrap().unwrap();
    assert_eq!(one, three);
}

#[test]
fn unlabeled_data_is_rejected() {
    let mut data = toy(3, 5);
    data.push(Example::unlabeled(vec![1.0])).unwrap();
    assert!(cross_validate(&data, &Prevalence, 2, 1, 0, 20).is_err());
}
