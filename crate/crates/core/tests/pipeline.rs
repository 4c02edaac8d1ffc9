use std::sync::Arc;

use strattree::sim::{DgpSpec, PotentialOutcomes};
use strattree::{
    assign_sbr, assign_simple, cv_fit, estimate_ate, estimate_pooled, fit, FitConfig, FitReport,
    Sample, StratificationTree,
};

fn observe(po: &PotentialOutcomes, a: &[usize]) -> Sample {
    let y = a
        .iter()
        .enumerate()
        .map(|(i, &ai)| if ai == 1 { po.y1[i] } else { po.y0[i] })
        .collect();
    Sample::new(y, a.to_vec(), po.rows()).unwrap()
}

fn config(depth: usize, seed: u64) -> FitConfig {
    let mut c = FitConfig::with_depth(depth);
    c.ea.population = 40;
    c.ea.seed = seed;
    c
}

#[test]
fn two_wave_design_end_to_end() {
    let dgp = DgpSpec::preset(1).unwrap();
    let space = Arc::new(dgp.space());
    let pilot_po = dgp.draw(400, 1);
    let flat = StratificationTree::single_leaf(space.clone(), 0, vec![0.5]);
    let pilot_plan = assign_simple(&flat, &pilot_po.rows(), 2).unwrap();
    let pilot = observe(&pilot_po, &pilot_plan.treatments);

    let report = fit(&pilot, &space, &config(2, 3)).unwrap();
    assert!(report.objective.is_finite());
    assert_eq!(report, fit(&pilot, &space, &config(2, 3)).unwrap());

    let json = serde_json::to_string(&report).unwrap();
    let back: FitReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);

    let wave_po = dgp.draw(3000, 4);
    let plan = assign_sbr(&report.tree, &wave_po.rows(), 5).unwrap();
    let wave2 = observe(&wave_po, &plan.treatments);
    let second = estimate_ate(&report.tree, &wave2, 0.95).unwrap();
    let first = estimate_ate(&flat, &pilot, 0.95).unwrap();
    let pooled = estimate_pooled(&first, &second);
    assert_eq!(pooled.n, 3400);
    // Loose sanity bound: eight standard errors around the true effect.
    let ate = dgp.true_ate();
    assert!(
        (pooled.theta - ate).abs() < 8.0 * pooled.se,
        "{} vs {ate}",
        pooled.theta
    );
    assert!(pooled.se < second.se.max(first.se));
}

#[test]
fn cv_fit_round_trips_and_refits_at_the_chosen_depth() {
    let dgp = DgpSpec::preset(1).unwrap();
    let space = Arc::new(dgp.space());
    let po = dgp.draw(300, 11);
    let a: Vec<usize> = (0..300).map(|i| i % 2).collect();
    let pilot = observe(&po, &a);
    let (refit, cv) = cv_fit(&pilot, &space, 2, &config(2, 12)).unwrap();
    assert_eq!(refit.config.max_depth, cv.chosen_depth);
    assert!(refit.tree.depth() <= cv.chosen_depth);
    let json = serde_json::to_string(&cv).unwrap();
    assert_eq!(
        serde_json::from_str::<strattree::CvReport>(&json).unwrap(),
        cv
    );
}
