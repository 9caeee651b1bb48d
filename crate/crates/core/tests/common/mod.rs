//! Independent reference implementations and synthetic data shared by the
//! integration tests and the acceptance suite. Nothing here calls the code it
//! is used to check.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use lnprobe::embstore::{EmbeddingSet, LayerStates, ReprSource, SentenceEmbeddings, SentenceRepr};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cheapest edge set covering every vertex, by enumerating all `2^(s*t)`
/// subsets.
pub fn exhaustive_cover_cost(w: &[Vec<f64>]) -> f64 {
    let s = w.len();
    let t = w[0].len();
    let edges = s * t;
    assert!(edges <= 20, "instance too large to enumerate");
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << edges) {
        let mut row_hit = vec![false; s];
        let mut col_hit = vec![false; t];
        let mut cost = 0.0;
        for e in 0..edges {
            if mask & (1 << e) != 0 {
                let (i, j) = (e / t, e % t);
                row_hit[i] = true;
                col_hit[j] = true;
                cost += w[i][j];
            }
        }
        if row_hit.iter().all(|&h| h) && col_hit.iter().all(|&h| h) && cost < best {
            best = cost;
        }
    }
    best
}

fn entropy_of(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity, completeness and V from `H(A|B) = H(A,B) - H(B)`.
pub fn direct_v_measure(classes: &[usize], clusters: &[usize]) -> (f64, f64, f64) {
    let n = classes.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut cls: BTreeMap<usize, usize> = BTreeMap::new();
    let mut clu: BTreeMap<usize, usize> = BTreeMap::new();
    for (&c, &k) in classes.iter().zip(clusters) {
        *joint.entry((c, k)).or_default() += 1;
        *cls.entry(c).or_default() += 1;
        *clu.entry(k).or_default() += 1;
    }
    let h_joint = entropy_of(joint.values().copied(), n);
    let h_c = entropy_of(cls.values().copied(), n);
    let h_k = entropy_of(clu.values().copied(), n);
    let h = if h_c == 0.0 { 1.0 } else { 1.0 - (h_joint - h_k) / h_c };
    let c = if h_k == 0.0 { 1.0 } else { 1.0 - (h_joint - h_c) / h_k };
    let v = if h + c == 0.0 { 0.0 } else { 2.0 * h * c / (h + c) };
    (h, c, v)
}

/// Precision, recall and F1 straight from set intersections.
pub fn set_f1(
    predicted: &BTreeSet<(usize, usize)>,
    sure: &BTreeSet<(usize, usize)>,
    possible: &BTreeSet<(usize, usize)>,
) -> (f64, f64, f64) {
    let possible: BTreeSet<_> = possible.union(sure).copied().collect();
    let a_p = predicted.intersection(&possible).count();
    let a_s = predicted.intersection(sure).count();
    let p = if predicted.is_empty() { 0.0 } else { a_p as f64 / predicted.len() as f64 };
    let r = if sure.is_empty() { 0.0 } else { a_s as f64 / sure.len() as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Single-pass sums formula.
pub fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Ridge with an unpenalized bias via the normal equations, solved by
/// Gauss-Jordan elimination with partial pivoting. Returns `(W, b)`.
pub fn normal_equation_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> (DMatrix<f64>, Vec<f64>) {
    let (n, d) = x.shape();
    let k = y.ncols();
    let m = d + 1;
    // Augmented [A | B] with A = Z^T Z + diag(lambda, .., lambda, 0), Z = [X 1].
    let mut a = vec![vec![0.0; m + k]; m];
    let z = |r: usize, c: usize| if c < d { x[(r, c)] } else { 1.0 };
    for i in 0..m {
        for j in 0..m {
            a[i][j] = (0..n).map(|r| z(r, i) * z(r, j)).sum();
        }
        if i < d {
            a[i][i] += lambda;
        }
        for c in 0..k {
            a[i][m + c] = (0..n).map(|r| z(r, i) * y[(r, c)]).sum();
        }
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..m {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..m + k {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let w = DMatrix::from_fn(d, k, |i, c| a[i][m + c]);
    let b = (0..k).map(|c| a[d][m + c]).collect();
    (w, b)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Haar-ish random orthogonal matrix: Q of a Gaussian matrix with the signs of
/// R's diagonal folded in.
pub fn random_rotation(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, d, d).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn reprs(m: &DMatrix<f64>, layer: usize) -> Vec<SentenceRepr> {
    m.row_iter()
        .map(|r| SentenceRepr::new(r.iter().copied().collect(), ReprSource::Mean, layer))
        .collect()
}

/// Random EMB1 content: every sentence gets 1..=max_tokens tokens split into
/// random contiguous words.
pub fn random_set(
    rng: &mut impl Rng,
    lang: &str,
    layers: usize,
    dim: usize,
    sentences: usize,
    max_tokens: usize,
) -> EmbeddingSet {
    let mut set = EmbeddingSet::new(lang, layers, dim);
    set.manifest.insert("model".into(), "synthetic".into());
    set.manifest.insert("tokenizer".into(), "synthetic".into());
    for _ in 0..sentences {
        let t = rng.random_range(1..=max_tokens);
        let mut groups = Vec::new();
        let mut start = 0u32;
        while (start as usize) < t {
            let len = rng.random_range(1..=(t - start as usize).min(3)) as u32;
            groups.push((start..start + len).collect());
            start += len;
        }
        let layers = (0..layers)
            .map(|_| LayerStates {
                cls: (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect(),
                tokens: (0..t * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect(),
            })
            .collect();
        set.sentences.push(SentenceEmbeddings {
            num_tokens: t,
            word_groups: groups,
            layers,
        });
    }
    set
}

/// One layer, one token per word, token states = the given word vectors, and
/// `[cls]` = the mean word vector.
pub fn set_from_words(lang: &str, sentences: &[DMatrix<f64>]) -> EmbeddingSet {
    let dim = sentences[0].ncols();
    let mut set = EmbeddingSet::new(lang, 1, dim);
    for m in sentences {
        let t = m.nrows();
        let mut tokens = Vec::with_capacity(t * dim);
        for r in m.row_iter() {
            tokens.extend(r.iter().map(|&v| v as f32));
        }
        let mean = m.row_mean();
        set.sentences.push(SentenceEmbeddings {
            num_tokens: t,
            word_groups: (0..t as u32).map(|i| vec![i]).collect(),
            layers: vec![LayerStates {
                cls: mean.iter().map(|&v| v as f32).collect(),
                tokens,
            }],
        });
    }
    set
}

/// Three languages sharing a latent code per sentence, each with its own
/// large constant offset plus Gaussian noise of scale `sigma`. Returns the
/// evaluation corpus and a disjoint held-out corpus for fitting projections.
pub fn shifted_languages(
    seed: u64,
    n: usize,
    dim: usize,
    sigma: f64,
) -> (BTreeMap<String, Vec<SentenceRepr>>, BTreeMap<String, Vec<SentenceRepr>>) {
    let mut r = rng(seed);
    let langs = ["aa", "bb", "cc"];
    let shift_scale = 5.0 * (dim as f64).sqrt();
    let shifts: Vec<Vec<f64>> = langs
        .iter()
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm * shift_scale).collect()
        })
        .collect();
    let mut make = |rows: usize| {
        let latent = gaussian(&mut r, rows, dim);
        langs
            .iter()
            .zip(&shifts)
            .map(|(l, s)| {
                let m = DMatrix::from_fn(rows, dim, |i, j| {
                    latent[(i, j)] + s[j] + sigma * r.sample::<f64, _>(StandardNormal)
                });
                (l.to_string(), reprs(&m, 0))
            })
            .collect::<BTreeMap<_, _>>()
    };
    let eval = make(n);
    let dev = make(4 * n);
    (eval, dev)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// A directory of small but complete inputs for every subcommand.
pub struct Fixture {
    pub dir: tempfile::TempDir,
}

pub const FIXTURE_SENTENCES: usize = 12;

impl Fixture {
    pub fn new(seed: u64) -> Fixture {
        use lnprobe::embstore::write_embedding_file;
        use std::fmt::Write as _;

        let dir = tempfile::tempdir().expect("temp dir");
        let p = |name: &str| dir.path().join(name);
        let mut r = rng(seed);
        let mut sets = Vec::new();
        for lang in ["en", "de", "fr"] {
            let set = random_set(&mut r, lang, 3, 6, FIXTURE_SENTENCES, 7);
            write_embedding_file(&set, &p(&format!("{lang}.emb1"))).unwrap();
            let dev = random_set(&mut r, lang, 3, 6, 30, 7);
            write_embedding_file(&dev, &p(&format!("{lang}_dev.emb1"))).unwrap();
            sets.push(set);
        }

        let mut gold = String::new();
        for (s, t) in sets[0].sentences.iter().zip(&sets[1].sentences) {
            let mut links = Vec::new();
            for i in 0..s.num_words() {
                let j = r.random_range(0..t.num_words());
                let sep = if r.random_bool(0.7) { '-' } else { '?' };
                links.push(format!("{i}{sep}{j}"));
            }
            writeln!(gold, "{}", links.join(" ")).unwrap();
        }
        std::fs::write(p("gold.txt"), gold).unwrap();

        let labels = |n: usize, r: &mut ChaCha8Rng| {
            (0..n).map(|_| format!("{:.4}\n", r.random_range(0.0..1.0))).collect::<String>()
        };
        std::fs::write(p("labels.txt"), labels(FIXTURE_SENTENCES, &mut r)).unwrap();
        std::fs::write(p("dev_labels.txt"), labels(30, &mut r)).unwrap();
        std::fs::write(p("families.tsv"), "en\tgermanic\nde\tgermanic\nfr\tromance\nit\tromance\n").unwrap();
        std::fs::write(p("train.tsv"), "en\ten_dev.emb1\nde\tde_dev.emb1\nfr\tfr_dev.emb1\n").unwrap();
        std::fs::write(p("test.tsv"), "# held out\nen\ten.emb1\nde\tde.emb1\nfr\tfr.emb1\n").unwrap();
        Fixture { dir }
    }

    pub fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }
}

/// Every subcommand at least once, in dependency order. Paths are relative to
/// the fixture directory.
pub fn cli_script() -> Vec<Vec<&'static str>> {
    vec![
        vec!["info", "en.emb1"],
        vec!["centroid", "--emb", "en.emb1", "--out", "c_en.json", "--layer", "1"],
        vec!["centroid", "--emb", "de.emb1", "--out", "c_de.json", "--layer", "1"],
        vec!["centroid", "--emb", "fr.emb1", "--out", "c_fr.json", "--layer", "1"],
        vec!["center", "--emb", "en.emb1", "--centroid", "c_en.json", "--out", "en_centered.emb1"],
        vec!["fit-proj", "--src", "de_dev.emb1", "--tgt", "en_dev.emb1", "--out", "de_en", "--lambda", "0.1"],
        vec!["retrieve", "--corpus", "en.emb1", "de.emb1", "fr.emb1", "--all-layers", "--format", "text"],
        vec!["retrieve", "--corpus", "en.emb1", "de.emb1", "fr.emb1", "--transform", "centered", "--format", "csv"],
        vec![
            "retrieve", "--corpus", "en.emb1", "de.emb1", "fr.emb1", "--transform", "projected", "--dev",
            "en_dev.emb1", "de_dev.emb1", "fr_dev.emb1", "--pivot", "en",
        ],
        vec!["align", "--src", "en.emb1", "--tgt", "de.emb1", "--gold", "gold.txt", "--out", "pred.txt"],
        vec!["align", "--src", "en.emb1", "--tgt", "de.emb1", "--all-layers", "--transform", "centered", "--out", "pred_c.txt"],
        vec!["align-eval", "--pred", "pred.txt", "--gold", "gold.txt"],
        vec![
            "em-align", "--src", "en.emb1", "--tgt", "de.emb1", "--iterations", "3", "--lambda", "0.1", "--out",
            "em.txt", "--map-out", "em_map", "--gold", "gold.txt",
        ],
        vec!["cluster", "c_en.json", "c_de.json", "c_fr.json", "--families", "families.tsv"],
        vec!["vmeasure", "c_en.json", "c_de.json", "c_fr.json", "--families", "families.tsv", "--format", "text"],
        vec!["export-centroids", "c_en.json", "c_de.json", "c_fr.json", "--out", "centroids.csv"],
        vec!["langid-train", "--train", "train.tsv", "--eval", "test.tsv", "--out", "lid", "--epochs", "5", "--batch-size", "16"],
        vec!["langid-train", "--train", "train.tsv", "--out", "lid_c", "--transform", "centered", "--source", "cls"],
        vec!["langid-eval", "--model", "lid", "--data", "test.tsv"],
        vec!["qe-score", "--src", "en.emb1", "--mt", "de.emb1", "--labels", "labels.txt", "--all-layers"],
        vec![
            "qe-score", "--src", "en.emb1", "--mt", "de.emb1", "--labels", "labels.txt", "--transform", "projected",
            "--fit-src", "en_dev.emb1", "--fit-mt", "de_dev.emb1",
        ],
        vec![
            "qe-train", "--src", "en_dev.emb1", "--mt", "de_dev.emb1", "--labels", "dev_labels.txt", "--val-src",
            "en.emb1", "--val-mt", "de.emb1", "--val-labels", "labels.txt", "--out", "qe_model",
        ],
        vec!["qe-eval", "--model", "qe_model", "--src", "en.emb1", "--mt", "de.emb1", "--labels", "labels.txt"],
    ]
}

/// Runs the binary inside `dir`, returning `(exit code, stdout, stderr)`.
pub fn run_cli(dir: &std::path::Path, args: &[&str]) -> (i32, Vec<u8>, String) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_lnprobe"))
        .args(args)
        .current_dir(dir)
        .env_remove("LNPROBE_THREADS")
        .output()
        .expect("spawn lnprobe");
    (
        out.status.code().unwrap_or(-1),
        out.stdout,
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Bytes of every regular file in `dir`, by name.
pub fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}
