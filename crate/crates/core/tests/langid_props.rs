mod common;

use lnprobe::embstore::ReprSource;
use lnprobe::langid::{evaluate_classifier, train_classifier, TrainConfig};
use lnprobe::SentenceRepr;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use common::rng;

fn clusters(seed: u64, k: usize, per_class: usize, spread: f64) -> Vec<(SentenceRepr, String)> {
    let mut r = rng(seed);
    let dim = k + 2;
    let mut out = Vec::new();
    for c in 0..k {
        for _ in 0..per_class {
            let v = (0..dim)
                .map(|j| if j == c { 2.0 } else { 0.0 } + spread * r.sample::<f64, _>(StandardNormal))
                .collect();
            out.push((SentenceRepr::new(v, ReprSource::Mean, 0), format!("c{c}")));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn same_seed_same_model(seed in any::<u64>(), train_seed in any::<u64>()) {
        let data = clusters(seed, 3, 20, 0.5);
        let config = TrainConfig { seed: train_seed, batch_size: 7, epochs: 3, ..Default::default() };
        prop_assert_eq!(train_classifier(&data, &config).unwrap(), train_classifier(&data, &config).unwrap());
    }

    #[test]
    fn training_lowers_the_loss_below_chance(seed in any::<u64>(), k in 2usize..5) {
        let data = clusters(seed, k, 30, 0.3);
        let config = TrainConfig { batch_size: 8, epochs: 5, learning_rate: 0.1, ..Default::default() };
        let clf = train_classifier(&data, &config).unwrap();
        let chance = (k as f64).ln();
        prop_assert!(clf.meta.final_loss < chance, "{} vs ln k = {chance}", clf.meta.final_loss);
        prop_assert!(clf.meta.loss_history.iter().all(|l| l.is_finite()));
        let eval = evaluate_classifier(&clf, &data).unwrap();
        prop_assert!(eval.accuracy > 1.0 / k as f64);
        let counted: usize = eval.confusion.iter().flatten().sum();
        prop_assert_eq!(counted, data.len());
    }

    #[test]
    fn class_labels_are_sorted_and_complete(seed in any::<u64>(), k in 2usize..6) {
        let data = clusters(seed, k, 3, 1.0);
        let clf = train_classifier(&data, &TrainConfig { epochs: 1, ..Default::default() }).unwrap();
        let want: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        prop_assert_eq!(clf.class_labels, want);
    }
}
