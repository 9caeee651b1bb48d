//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p lnprobe --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use lnprobe::alignment::{self, Alignment, BipartiteWeights, GoldAlignment};
use lnprobe::geometry::{self, center, compute_centroid};
use lnprobe::langid::{evaluate_classifier, train_classifier, TrainConfig};
use lnprobe::langsim::v_measure_from_labels;
use lnprobe::qe::pearson;
use lnprobe::retrieval::{retrieval_matrix, mean_accuracy, MatrixOptions, Transform};
use lnprobe::{ReprSource, SentenceRepr};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn edge_cover_optimality() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..200 {
        let mut r = rng(seed);
        let s = r.random_range(1..=4);
        let t = r.random_range(1..=4);
        let w: Vec<Vec<f64>> = (0..s)
            .map(|_| (0..t).map(|_| r.random_range(0.0..1.0)).collect())
            .collect();
        let cover = alignment::min_weight_edge_cover(&BipartiteWeights::from_rows(&w).map_err(|e| e.to_string())?);
        let gap = (cover.cost - exhaustive_cover_cost(&w)).abs();
        worst = worst.max(gap);
        if gap > 1e-9 {
            return Err(format!("seed {seed} ({s}x{t}): cost gap {gap:e}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, format!("200 instances, max gap {worst:e}, {secs:.2}s"))
}

fn projection_recovery() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(1000 + seed);
        let x = gaussian(&mut r, 64, 8);
        let w = gaussian(&mut r, 8, 8);
        let b = gaussian(&mut r, 1, 8);
        let y = &x * &w + DMatrix::from_fn(64, 8, |_, j| b[(0, j)]);
        let map = geometry::fit_projection(&x, &y, 0.0).map_err(|e| e.to_string())?;
        let bias_err = (0..8).fold(0.0f64, |a, j| a.max((map.bias[j] - b[(0, j)]).abs()));
        let err = max_abs(&(&map.weights - &w)).max(bias_err);
        worst = worst.max(err);
        if err > 1e-6 {
            return Err(format!("seed {seed}: max abs error {err:e}"));
        }
    }
    Ok(format!("20 seeds, max abs error {worst:e}"))
}

fn rotated_retrieval() -> Outcome {
    let mut accs = Vec::new();
    for seed in 0..20 {
        let mut r = rng(2000 + seed);
        let rot = random_rotation(&mut r, 8);
        let dev = gaussian(&mut r, 64, 8);
        let test = gaussian(&mut r, 64, 8);
        let corpus = BTreeMap::from([
            ("src".to_string(), reprs(&test, 0)),
            ("tgt".to_string(), reprs(&(&test * &rot), 0)),
        ]);
        let fit = BTreeMap::from([
            ("src".to_string(), reprs(&dev, 0)),
            ("tgt".to_string(), reprs(&(&dev * &rot), 0)),
        ]);
        let options = MatrixOptions {
            pivot: Some("tgt".into()),
            fit_data: Some(&fit),
            ..Default::default()
        };
        let results = retrieval_matrix(&corpus, Transform::Projected, &options).map_err(|e| e.to_string())?;
        let acc = results[&("src".to_string(), "tgt".to_string())].accuracy;
        accs.push(acc);
        if acc != 1.0 {
            return Err(format!("seed {seed}: accuracy {acc}"));
        }
    }
    Ok(format!("20 seeds, all accuracies {}", accs[0]))
}

fn centering_identity() -> Outcome {
    let mut worst_ratio = 0.0f64;
    for seed in 0..50 {
        let mut r = rng(3000 + seed);
        let n = r.random_range(1..200);
        let d = r.random_range(1..32);
        let scale = 10f64.powi(r.random_range(-3..=4));
        let offset: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0) * 10.0 * scale).collect();
        let rs: Vec<SentenceRepr> = (0..n)
            .map(|_| {
                let v = (0..d)
                    .map(|j| offset[j] + scale * r.sample::<f64, _>(StandardNormal))
                    .collect();
                SentenceRepr::new(v, ReprSource::Mean, 0)
            })
            .collect();
        let max_in = rs
            .iter()
            .flat_map(|x| x.vector.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let c = compute_centroid("xx", &rs).map_err(|e| e.to_string())?;
        let centered = center(&rs, &c).map_err(|e| e.to_string())?;
        let c2 = compute_centroid("xx", &centered).map_err(|e| e.to_string())?;
        let linf = c2.vector.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let ratio = linf / max_in;
        worst_ratio = worst_ratio.max(ratio);
        if ratio > 1e-6 {
            return Err(format!("seed {seed}: |centroid|_inf = {linf:e}, max input {max_in:e}"));
        }
    }
    Ok(format!("50 corpora, worst |centroid|_inf / max|x| = {worst_ratio:e}"))
}

fn language_shift_benchmark() -> Outcome {
    let mut lines = Vec::new();
    for seed in 0..10 {
        let (corpus, dev) = shifted_languages(4000 + seed, 100, 32, 0.1);
        let run = |t: Transform| -> Result<f64, String> {
            let options = MatrixOptions {
                pivot: Some("aa".into()),
                fit_data: Some(&dev),
                ..Default::default()
            };
            retrieval_matrix(&corpus, t, &options)
                .map(|m| mean_accuracy(&m))
                .map_err(|e| e.to_string())
        };
        let plain = run(Transform::Plain)?;
        let centered = run(Transform::Centered)?;
        let projected = run(Transform::Projected)?;
        let line = format!("seed {seed}: plain {plain:.3} centered {centered:.3} projected {projected:.3}");
        if !(plain < centered && centered <= projected && projected >= 0.99) {
            return Err(line);
        }
        lines.push((plain, centered, projected));
    }
    let mean = |f: fn(&(f64, f64, f64)) -> f64| lines.iter().map(f).sum::<f64>() / lines.len() as f64;
    Ok(format!(
        "10 seeds, mean plain {:.3} < centered {:.3} <= projected {:.3}",
        mean(|t| t.0),
        mean(|t| t.1),
        mean(|t| t.2)
    ))
}

fn v_measure_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut r = rng(5000 + seed);
        let n = r.random_range(1..=12);
        let kc = r.random_range(1..=n);
        let kk = r.random_range(1..=n);
        let classes: Vec<usize> = (0..n).map(|_| r.random_range(0..kc)).collect();
        let clusters: Vec<usize> = (0..n).map(|_| r.random_range(0..kk)).collect();
        let got = v_measure_from_labels(&classes, &clusters).map_err(|e| e.to_string())?;
        let (h, c, v) = direct_v_measure(&classes, &clusters);
        let gap = (got.homogeneity - h)
            .abs()
            .max((got.completeness - c).abs())
            .max((got.v - v).abs());
        worst = worst.max(gap);
        if gap > 1e-12 {
            return Err(format!("seed {seed}: gap {gap:e}"));
        }
    }
    let labels = [0, 0, 1, 1, 1, 2, 3, 3];
    let relabeled = [5, 5, 2, 2, 2, 9, 0, 0];
    let perfect = v_measure_from_labels(&labels, &relabeled).map_err(|e| e.to_string())?;
    check(
        perfect.v == 1.0 && perfect.homogeneity == 1.0 && perfect.completeness == 1.0,
        format!("100 partitions, max gap {worst:e}; perfect partition v = {}", perfect.v),
    )
}

fn random_links(r: &mut impl Rng, s: usize, t: usize, p: f64) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for i in 0..s {
        for j in 0..t {
            if r.random_bool(p) {
                out.insert((i, j));
            }
        }
    }
    out
}

fn alignment_f1_oracle() -> Outcome {
    let gold = GoldAlignment::new(BTreeSet::from([(0, 0)]), BTreeSet::from([(0, 0), (1, 1)]));
    let pred = Alignment {
        links: BTreeSet::from([(0, 0), (1, 0)]),
    };
    let hand = alignment::alignment_f1(&pred, &gold);
    if (hand.precision, hand.recall, hand.f1) != (0.5, 1.0, 2.0 / 3.0) {
        return Err(format!("hand case gave {hand:?}"));
    }
    for seed in 0..100 {
        let mut r = rng(6000 + seed);
        let (s, t) = (r.random_range(1..8), r.random_range(1..8));
        let sure = random_links(&mut r, s, t, 0.2);
        let possible = random_links(&mut r, s, t, 0.2);
        let predicted = random_links(&mut r, s, t, 0.3);
        let got = alignment::alignment_f1(
            &Alignment {
                links: predicted.clone(),
            },
            &GoldAlignment::new(sure.clone(), possible.clone()),
        );
        let want = set_f1(&predicted, &sure, &possible);
        if (got.precision, got.recall, got.f1) != want {
            return Err(format!("seed {seed}: got {got:?}, oracle {want:?}"));
        }
    }
    Ok("hand case (0.5, 1, 2/3) exact; 100 random link sets exact".into())
}

fn pearson_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut r = rng(7000 + seed);
        let n = r.random_range(2..200);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * r.random_range(-1.0..1.0) + r.random_range(-1.0..1.0)).collect();
        let got = pearson(&x, &y).map_err(|e| e.to_string())?;
        let gap = (got - direct_pearson(&x, &y)).abs();
        worst = worst.max(gap);
        if gap > 1e-12 {
            return Err(format!("seed {seed}: gap {gap:e}"));
        }
        let (a, b, c, d) = (
            r.random_range(0.1..10.0),
            r.random_range(-5.0..5.0),
            -r.random_range(0.1..10.0),
            r.random_range(-5.0..5.0),
        );
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let cy: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        let flipped = pearson(&ax, &cy).map_err(|e| e.to_string())?;
        let exact = pearson(&x, &ax).map_err(|e| e.to_string())?;
        if (flipped + got).abs() > 1e-12 || (exact - 1.0).abs() > 1e-12 {
            return Err(format!("seed {seed}: affine invariance broken ({flipped} vs {got}, {exact})"));
        }
    }
    Ok(format!("100 series, max gap {worst:e}; affine invariance holds"))
}

fn langid_sanity() -> Outcome {
    let k = 4;
    let d = 16;
    let mut r = rng(8000);
    let sample = |n: usize, r: &mut rand_chacha::ChaCha8Rng| -> Vec<(SentenceRepr, String)> {
        let mut out = Vec::new();
        for c in 0..k {
            for _ in 0..n {
                let v = (0..d)
                    .map(|j| if j == c { 3.0 } else { 0.0 } + 0.5 * r.sample::<f64, _>(StandardNormal))
                    .collect();
                out.push((SentenceRepr::new(v, ReprSource::Mean, 0), format!("l{c}")));
            }
        }
        out
    };
    let train = sample(250, &mut r);
    let test = sample(250, &mut r);
    let clf = train_classifier(&train, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let acc = evaluate_classifier(&clf, &test).map_err(|e| e.to_string())?.accuracy;

    let same = |n: usize| -> Vec<(SentenceRepr, String)> {
        (0..k * n)
            .map(|i| (SentenceRepr::new(vec![0.3; d], ReprSource::Mean, 0), format!("l{}", i % k)))
            .collect()
    };
    let flat = train_classifier(&same(100), &TrainConfig::default()).map_err(|e| e.to_string())?;
    let chance = evaluate_classifier(&flat, &same(100)).map_err(|e| e.to_string())?.accuracy;
    let baseline = 1.0 / k as f64;
    check(
        acc >= 0.99 && (chance - baseline).abs() <= 0.1,
        format!("orthogonal clusters holdout {acc:.4} (>= 0.99); identical inputs {chance:.3} (1/K = {baseline})"),
    )
}

/// Word vectors of a synthetic parallel corpus: target words are a noisy,
/// rotated copy of a shuffled subset of source words.
fn em_corpus(seed: u64) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut r = rng(9000 + seed);
    let d = 8;
    // A small rotation: close enough to the identity for the plain alignment
    // to be a useful starting point.
    let generator = gaussian(&mut r, d, d) * 0.15;
    let skew = &generator - generator.transpose();
    let rot = skew.exp();
    let mut src = Vec::new();
    let mut tgt = Vec::new();
    for _ in 0..30 {
        let s = r.random_range(2..8);
        let t = r.random_range(2..8);
        let words = gaussian(&mut r, s, d);
        let mut tw = gaussian(&mut r, t, d);
        for i in 0..t.min(s) {
            let row = words.row(s - 1 - i) * &rot;
            tw.row_mut(i).copy_from(&row);
        }
        tw += gaussian(&mut r, t, d) * 0.05;
        src.push(words);
        tgt.push(tw);
    }
    (src, tgt)
}

fn em_monotone() -> Outcome {
    let mut improved = 0;
    for seed in 0..20 {
        let (src, tgt) = em_corpus(seed);
        let em = alignment::em_align_project(&src, &tgt, 5, 0.0).map_err(|e| e.to_string())?;
        if em.costs.windows(2).any(|w| w[1] > w[0]) {
            return Err(format!("seed {seed}: costs increase {:?}", em.costs));
        }
        let plain: Vec<_> = src
            .iter()
            .zip(&tgt)
            .map(|(s, t)| alignment::align_word_vectors(s, t).unwrap())
            .collect();
        let plain_cost: f64 = plain.iter().map(|c| c.cost).sum();
        let zero = alignment::em_align_project(&src, &tgt, 0, 0.0).map_err(|e| e.to_string())?;
        let same = zero
            .alignments
            .iter()
            .zip(&plain)
            .all(|(a, p)| a == &p.alignment);
        if !same || zero.costs != vec![plain_cost] || em.costs[0] != plain_cost {
            return Err(format!("seed {seed}: iteration 0 differs from the plain alignment"));
        }
        if em.costs.last() < em.costs.first() {
            improved += 1;
        }
    }
    Ok(format!("20 corpora non-increasing; iteration 0 exact; cost lowered on {improved}/20"))
}

fn cli_determinism() -> Outcome {
    let fixture = Fixture::new(11);
    let dir = fixture.dir.path();
    let script = cli_script();
    let mut first = Vec::new();
    for args in &script {
        let (code, stdout, stderr) = run_cli(dir, args);
        if code != 0 {
            return Err(format!("{} exited {code}: {stderr}", args.join(" ")));
        }
        first.push((stdout, snapshot(dir)));
    }
    for (args, (stdout, files)) in script.iter().zip(&first) {
        let (code, again, stderr) = run_cli(dir, args);
        if code != 0 {
            return Err(format!("{} exited {code} on rerun: {stderr}", args.join(" ")));
        }
        if &again != stdout {
            return Err(format!("{}: stdout differs between runs", args.join(" ")));
        }
        let now = snapshot(dir);
        for (name, bytes) in files {
            if now.get(name) != Some(bytes) {
                return Err(format!("{}: {name} differs between runs", args.join(" ")));
            }
        }
    }
    let subcommands: BTreeSet<&str> = script.iter().map(|a| a[0]).collect();
    check(
        subcommands.len() == 16,
        format!("{} runs covering {} subcommands byte-identical", script.len(), subcommands.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("edge-cover optimality", edge_cover_optimality),
        ("projection recovery", projection_recovery),
        ("retrieval through fitted map on rotated corpora", rotated_retrieval),
        ("centering identity", centering_identity),
        ("synthetic language-shift benchmark", language_shift_benchmark),
        ("V-measure oracle", v_measure_oracle),
        ("alignment F1 oracle", alignment_f1_oracle),
        ("Pearson oracle", pearson_oracle),
        ("language ID sanity", langid_sanity),
        ("EM alignment monotone cost", em_monotone),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
