use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gazeflow::aoi::{assign_fixation, load_boundaries, write_boundaries, ExpansionParams};
use gazeflow::features::{relative_fixation, trial_features, word_features, WordRecord};
use gazeflow::fixation::{run_pipeline, FixationParams};
use gazeflow::ingest::tables::{read_fixations, read_word_features, write_fixations, write_word_features};
use gazeflow::simulate::{demo_text, demo_trial, simulate_cohort, CohortParams};
use gazeflow::stats::compare_datasets;

#[test]
fn assignment_agrees_with_linear_scan() {
    let text = demo_text().expanded(&ExpansionParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hits = 0;
    for _ in 0..10_000 {
        let (x, y) = (rng.random_range(-50.0..1330.0), rng.random_range(-50.0..770.0));
        let containing: Vec<usize> = text
            .words
            .iter()
            .filter(|w| w.bounds.contains(x, y))
            .map(|w| w.token_index)
            .collect();
        assert!(containing.len() <= 1, "({x}, {y}) in {containing:?}");
        let got = assign_fixation(x, y, &text.words).map(|i| text.words[i].token_index);
        assert_eq!(got, containing.first().copied(), "({x}, {y})");
        hits += containing.len();
    }
    assert!(hits > 100);
}

#[test]
fn boundaries_round_trip() {
    let text = demo_text();
    let mut buf = Vec::new();
    write_boundaries(&mut buf, std::slice::from_ref(&text)).unwrap();
    assert_eq!(load_boundaries(buf.as_slice()).unwrap(), vec![text]);
}

#[test]
fn demo_trial_features() {
    let (text, frame, samples) = demo_trial(42);
    let fixes = run_pipeline(&samples, &frame, &FixationParams::default()).unwrap();
    let boxes = text
        .expanded(&ExpansionParams::default())
        .unwrap()
        .boxes_for_question("DEMO_1_q1");
    let words = relative_fixation(word_features(&fixes, &boxes));
    let rf: f64 = words.iter().filter_map(|w| w.relative_fixation).sum();
    assert!((rf - 1.0).abs() < 1e-9);
    let target: Vec<usize> = boxes.iter().filter(|b| b.is_target).map(|b| b.token_index).collect();
    assert_eq!(target.len(), 4);
    assert!(target.iter().all(|&t| words[t].nfix > 0));

    let cohort = simulate_cohort(&CohortParams::default(), 1).unwrap();
    let trial = &cohort.trials[0];
    let fixes = run_pipeline(&trial.samples, &trial.frame, &FixationParams::default()).unwrap();
    let f = trial_features(trial, &fixes, &boxes);
    assert!(f.fix_on_target > 0 && f.fix_on_target <= f.total_fixations);
    assert!(f.trt_target_ms <= f.trt_text_ms);
    assert_eq!(f.label, trial.answered_correctly);
}

#[test]
fn tables_survive_a_round_trip() {
    let cohort = simulate_cohort(&CohortParams::default(), 5).unwrap();
    let texts: BTreeMap<_, _> = cohort
        .texts
        .iter()
        .map(|t| (t.text_id.clone(), t.expanded(&ExpansionParams::default()).unwrap()))
        .collect();
    let mut table = Vec::new();
    let mut words = Vec::new();
    for t in &cohort.trials {
        let fixes = run_pipeline(&t.samples, &t.frame, &FixationParams::default()).unwrap();
        for f in relative_fixation(word_features(&fixes, &texts[&t.text_id].words)) {
            words.push(WordRecord {
                participant_id: t.participant_id.clone(),
                text_id: t.text_id.clone(),
                features: f,
            });
        }
        table.push((t.trial_id.clone(), fixes));
    }

    let mut buf = Vec::new();
    write_fixations(&mut buf, &table).unwrap();
    let back = read_fixations(buf.as_slice()).unwrap();
    let mut again = Vec::new();
    write_fixations(&mut again, &back).unwrap();
    assert_eq!(buf, again);

    let mut buf = Vec::new();
    write_word_features(&mut buf, &words).unwrap();
    let back = read_word_features(buf.as_slice()).unwrap();
    assert_eq!(back.len(), words.len());
    let rows = compare_datasets(&words, &back).unwrap();
    assert!(rows.iter().all(|r| r.rho.unwrap() > 0.999_999));
}
