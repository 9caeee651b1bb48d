use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, RowDVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::*;
use crate::alignment::{self, Alignment, GoldAlignment};
use crate::embstore::{read_embedding_file, write_embedding_file, EmbeddingSet, InputSpec, SentenceRepr};
use crate::error::Error;
use crate::geometry::{self, compute_centroid, Centroid, LinearMap};
use crate::langid::{self, LinearClassifier, TrainConfig};
use crate::langsim;
use crate::qe::{self, QeModel, QeRecord};
use crate::report::{InputFile, Provenance, Report, Row};
use crate::retrieval::{self, MatrixOptions};

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

pub(crate) fn run(cli: &Cli) -> Outcome<()> {
    let ctx = Ctx {
        g: &cli.global,
        name: cli.command.name(),
    };
    match &cli.command {
        Command::Info(a) => info(&ctx, a),
        Command::Centroid(a) => centroid(&ctx, a),
        Command::Center(a) => center(&ctx, a),
        Command::FitProj(a) => fit_proj(&ctx, a),
        Command::Retrieve(a) => retrieve(&ctx, a),
        Command::Align(a) => align(&ctx, a),
        Command::AlignEval(a) => align_eval(&ctx, a),
        Command::EmAlign(a) => em_align(&ctx, a),
        Command::Cluster(a) => cluster(&ctx, a),
        Command::Vmeasure(a) => vmeasure(&ctx, a),
        Command::ExportCentroids(a) => export_centroids(&ctx, a),
        Command::LangidTrain(a) => langid_train(&ctx, a),
        Command::LangidEval(a) => langid_eval(&ctx, a),
        Command::QeScore(a) => qe_score(&ctx, a),
        Command::QeTrain(a) => qe_train(&ctx, a),
        Command::QeEval(a) => qe_eval(&ctx, a),
    }
}

struct Ctx<'a> {
    g: &'a GlobalArgs,
    name: &'static str,
}

impl Ctx<'_> {
    fn source(&self) -> ReprSource {
        self.g.source.into()
    }

    fn transform(&self) -> Transform {
        self.g.transform.into()
    }

    /// Hashes every input, failing on the first one that cannot be read.
    fn inputs(&self, paths: &[&Path]) -> Outcome<Vec<InputFile>> {
        paths
            .iter()
            .map(|p| {
                if !p.is_file() {
                    return Err(Failure::Data(Error::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("{}: no such input file", p.display()),
                    ))));
                }
                InputFile::hash(p).map_err(Failure::from)
            })
            .collect()
    }

    fn provenance(&self, args: &impl Serialize, inputs: Vec<InputFile>) -> Outcome<Provenance> {
        let config = json!({
            "global": serde_json::to_value(self.g).map_err(Error::from)?,
            "args": serde_json::to_value(args).map_err(Error::from)?,
        });
        Ok(Provenance::new(self.name, self.g.seed, config, inputs))
    }

    fn layers(&self, num_layers: usize) -> Outcome<Vec<usize>> {
        if self.g.all_layers {
            if self.g.layer.is_some() {
                return usage("--layer and --all-layers are mutually exclusive");
            }
            return Ok((0..num_layers).collect());
        }
        Ok(vec![self.layer(num_layers)?])
    }

    fn single_layer(&self, num_layers: usize) -> Outcome<usize> {
        if self.g.all_layers {
            return usage(format!("{} works on a single layer; drop --all-layers", self.name));
        }
        self.layer(num_layers)
    }

    fn layer(&self, num_layers: usize) -> Outcome<usize> {
        match self.g.layer {
            Some(l) if l >= num_layers => Err(Failure::Data(Error::IndexOutOfRange {
                what: "layer",
                index: l,
                len: num_layers,
            })),
            Some(l) => Ok(l),
            None if num_layers == 0 => Err(Failure::Data(Error::EmptyInput("no layers".into()))),
            None => Ok(num_layers - 1),
        }
    }

    fn only_transforms(&self, allowed: &[TransformArg]) -> Outcome<()> {
        if allowed.contains(&self.g.transform) {
            Ok(())
        } else {
            usage(format!(
                "{} does not support --transform {}",
                self.name,
                Transform::from(self.g.transform)
            ))
        }
    }

    fn emit(&self, report: &Report) -> Outcome<()> {
        let text = report.render(self.g.format.into())?;
        self.write_output(text.as_bytes())
    }

    fn write_output(&self, bytes: &[u8]) -> Outcome<()> {
        match &self.g.output {
            Some(path) => std::fs::write(path, bytes)?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes)?;
                out.flush()?;
            }
        }
        Ok(())
    }
}

fn load_set(path: &Path) -> Outcome<EmbeddingSet> {
    read_embedding_file(path).map_err(|e| Failure::Data(with_path(path, e)))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
        other => Error::InvalidArgument(format!("{}: {other}", path.display())),
    }
}

fn same_sentence_count(a: &EmbeddingSet, b: &EmbeddingSet) -> Outcome<()> {
    if a.len() != b.len() {
        return Err(Failure::Data(Error::lengths(
            format!("sentence counts of {} and {}", a.lang, b.lang),
            a.len(),
            b.len(),
        )));
    }
    Ok(())
}

fn same_shape(sets: &[&EmbeddingSet]) -> Outcome<()> {
    if let Some(first) = sets.first() {
        for s in &sets[1..] {
            if s.num_layers != first.num_layers {
                return Err(Failure::Data(Error::dims(
                    format!("layer counts of {} and {}", first.lang, s.lang),
                    first.num_layers,
                    s.num_layers,
                )));
            }
            if s.hidden_dim != first.hidden_dim {
                return Err(Failure::Data(Error::dims(
                    format!("hidden sizes of {} and {}", first.lang, s.lang),
                    first.hidden_dim,
                    s.hidden_dim,
                )));
            }
        }
    }
    Ok(())
}

fn load_centroids(paths: &[PathBuf]) -> Outcome<Vec<Centroid>> {
    paths
        .iter()
        .map(|p| Centroid::load(p).map_err(|e| Failure::Data(with_path(p, e))))
        .collect()
}

fn read_text_lines<T>(
    path: &Path,
    parse: impl FnOnce(BufReader<File>, &str) -> crate::Result<T>,
) -> Outcome<T> {
    let f = File::open(path).map_err(|e| Failure::Data(with_path(path, e.into())))?;
    Ok(parse(BufReader::new(f), &path.display().to_string())?)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> crate::Result<()>) -> Outcome<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn info(ctx: &Ctx, a: &InfoArgs) -> Outcome<()> {
    let inputs = ctx.inputs(&[&a.file])?;
    let set = load_set(&a.file)?;
    let tokens: usize = set.sentences.iter().map(|s| s.num_tokens).sum();
    let words: usize = set.sentences.iter().map(|s| s.num_words()).sum();
    let out = json!({
        "provenance": ctx.provenance(a, inputs)?,
        "manifest": set.manifest_json(),
        "num_layers": set.num_layers,
        "hidden_dim": set.hidden_dim,
        "num_sentences": set.len(),
        "num_tokens": tokens,
        "num_words": words,
    });
    let mut text = serde_json::to_string_pretty(&out).map_err(Error::from)?;
    text.push('\n');
    ctx.write_output(text.as_bytes())
}

fn centroid(ctx: &Ctx, a: &CentroidArgs) -> Outcome<()> {
    ctx.only_transforms(&[TransformArg::Plain])?;
    let inputs = ctx.inputs(&[&a.emb])?;
    let set = load_set(&a.emb)?;
    let layer = ctx.single_layer(set.num_layers)?;
    let reprs = set.sentence_reprs(layer, ctx.source())?;
    let c = compute_centroid(&set.lang, &reprs)?;
    c.save(&a.out)?;
    let norm = c.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut report = Report::new(ctx.provenance(a, inputs)?, "centroid", None);
    report.rows.push(
        Row::new(set.lang.clone(), Some(layer))
            .with("sample_count", c.sample_count as f64)
            .with("norm", norm),
    );
    ctx.emit(&report.finish())
}

fn center(ctx: &Ctx, a: &CenterArgs) -> Outcome<()> {
    ctx.only_transforms(&[TransformArg::Plain])?;
    let inputs = ctx.inputs(&[&a.emb, &a.centroid])?;
    let mut set = load_set(&a.emb)?;
    let c = Centroid::load(&a.centroid).map_err(|e| Failure::Data(with_path(&a.centroid, e)))?;
    if ctx.g.all_layers || ctx.g.layer.is_some_and(|l| l != c.layer) {
        return usage("center always uses the centroid's own layer");
    }
    if c.layer >= set.num_layers {
        return Err(Failure::Data(Error::IndexOutOfRange {
            what: "centroid layer",
            index: c.layer,
            len: set.num_layers,
        }));
    }
    if c.dim() != set.hidden_dim {
        return Err(Failure::Data(Error::dims("centroid", set.hidden_dim, c.dim())));
    }
    let shift = |row: &mut [f32]| {
        for (x, m) in row.iter_mut().zip(&c.vector) {
            *x = (*x as f64 - m) as f32;
        }
    };
    // Shifting every token by the centroid shifts their mean by it as well.
    for sent in &mut set.sentences {
        let states = &mut sent.layers[c.layer];
        match c.source {
            ReprSource::Cls => shift(&mut states.cls),
            ReprSource::Mean => states.tokens.chunks_exact_mut(set.hidden_dim).for_each(shift),
        }
    }
    set.manifest.insert(
        "centered".into(),
        json!({"centroid_lang": c.lang, "layer": c.layer, "source": c.source}),
    );
    write_embedding_file(&set, &a.out)?;
    let mut report = Report::new(ctx.provenance(a, inputs)?, "center", None);
    report.rows.push(
        Row::new(set.lang.clone(), Some(c.layer)).with("sentences", set.len() as f64),
    );
    ctx.emit(&report.finish())
}

fn fit_proj(ctx: &Ctx, a: &FitProjArgs) -> Outcome<()> {
    ctx.only_transforms(&[TransformArg::Plain])?;
    let inputs = ctx.inputs(&[&a.src, &a.tgt])?;
    let src = load_set(&a.src)?;
    let tgt = load_set(&a.tgt)?;
    same_sentence_count(&src, &tgt)?;
    let layer = ctx.single_layer(src.num_layers.min(tgt.num_layers))?;
    let x = geometry::reprs_to_matrix(&src.sentence_reprs(layer, ctx.source())?)?;
    let y = geometry::reprs_to_matrix(&tgt.sentence_reprs(layer, ctx.source())?)?;
    let map = geometry::fit_projection(&x, &y, ctx.g.lambda)?.with_langs(&src.lang, &tgt.lang);
    let residual = map.apply_rows(&x)? - &y;
    map.save(&a.out)?;
    let mut report = Report::new(ctx.provenance(a, inputs)?, "fit-proj", None);
    report.rows.push(
        Row::new(format!("{}->{}", src.lang, tgt.lang), Some(layer))
            .with("pairs", x.nrows() as f64)
            .with("mse", residual.norm_squared() / residual.len() as f64),
    );
    ctx.emit(&report.finish())
}

fn by_language(sets: Vec<EmbeddingSet>, what: &str) -> Outcome<BTreeMap<String, EmbeddingSet>> {
    let mut out = BTreeMap::new();
    for s in sets {
        let lang = s.lang.clone();
        if out.insert(lang.clone(), s).is_some() {
            return Err(Failure::Data(Error::InvalidArgument(format!(
                "{what}: language {lang:?} given more than once"
            ))));
        }
    }
    Ok(out)
}

fn reprs_at(
    sets: &BTreeMap<String, EmbeddingSet>,
    layer: usize,
    source: ReprSource,
) -> Outcome<BTreeMap<String, Vec<SentenceRepr>>> {
    sets.iter()
        .map(|(l, s)| Ok((l.clone(), s.sentence_reprs(layer, source)?)))
        .collect()
}

fn retrieve(ctx: &Ctx, a: &RetrieveArgs) -> Outcome<()> {
    let transform = ctx.transform();
    if transform == Transform::Projected && a.dev.is_empty() {
        return usage("--transform projected needs --dev files to fit the projections");
    }
    if transform != Transform::Projected && (!a.dev.is_empty() || a.pivot.is_some()) {
        return usage("--dev and --pivot only apply to --transform projected");
    }
    if transform != Transform::Centered && !a.centroids.is_empty() {
        return usage("--centroid only applies to --transform centered");
    }
    let paths: Vec<&Path> = a
        .corpus
        .iter()
        .chain(&a.dev)
        .chain(&a.centroids)
        .map(PathBuf::as_path)
        .collect();
    let inputs = ctx.inputs(&paths)?;

    let corpus = by_language(a.corpus.iter().map(|p| load_set(p)).collect::<Outcome<_>>()?, "corpus")?;
    let dev = by_language(a.dev.iter().map(|p| load_set(p)).collect::<Outcome<_>>()?, "dev")?;
    let all: Vec<&EmbeddingSet> = corpus.values().chain(dev.values()).collect();
    same_shape(&all)?;
    let centroids = load_centroids(&a.centroids)?;
    let num_layers = all[0].num_layers;
    let layers = ctx.layers(num_layers)?;

    let pair = match &a.pair {
        None => None,
        Some(p) => match p.split_once(':') {
            Some((s, t)) if !s.is_empty() && !t.is_empty() && s != t => Some((s.to_string(), t.to_string())),
            _ => return usage(format!("--pair expects SRC:TGT with two different languages, got {p:?}")),
        },
    };
    if let Some((s, t)) = &pair {
        for lang in [s, t] {
            if !corpus.contains_key(lang) {
                return Err(Failure::Data(Error::MissingLanguage(lang.clone())));
            }
        }
    }
    let mut report = Report::new(ctx.provenance(a, inputs)?, "retrieval", Some("accuracy"));
    for &layer in &layers {
        let reprs = reprs_at(&corpus, layer, ctx.source())?;
        let fit = reprs_at(&dev, layer, ctx.source())?;
        let at_layer: BTreeMap<String, Centroid> = centroids
            .iter()
            .filter(|c| c.layer == layer && c.source == ctx.source())
            .map(|c| (c.lang.clone(), c.clone()))
            .collect();
        let options = MatrixOptions {
            pivot: a.pivot.clone(),
            fit_data: (!a.dev.is_empty()).then_some(&fit),
            ridge_lambda: ctx.g.lambda,
            centroids: (!a.centroids.is_empty()).then_some(&at_layer),
        };
        let mut results = retrieval::retrieval_matrix(&reprs, transform, &options)?;
        if let Some(p) = &pair {
            results.retain(|k, _| k == p);
        }
        for ((s, t), r) in &results {
            report
                .rows
                .push(Row::new(format!("{s}->{t}"), Some(layer)).with("accuracy", r.accuracy));
        }
        if results.len() > 1 {
            report
                .summary
                .push(Row::new("mean", Some(layer)).with("accuracy", retrieval::mean_accuracy(&results)));
        }
    }
    ctx.emit(&report.finish())
}

/// Subtracts the mean row over all matrices from every row.
fn center_rows(mats: &mut [DMatrix<f64>]) -> Outcome<()> {
    let total: usize = mats.iter().map(|m| m.nrows()).sum();
    if total == 0 {
        return Err(Failure::Data(Error::EmptyInput("no word vectors to center".into())));
    }
    let dim = mats[0].ncols();
    let mut mean = RowDVector::<f64>::zeros(dim);
    for m in mats.iter() {
        for row in m.row_iter() {
            mean += row;
        }
    }
    mean /= total as f64;
    for m in mats.iter_mut() {
        for mut row in m.row_iter_mut() {
            row -= &mean;
        }
    }
    Ok(())
}

fn align_pairs(src: &[DMatrix<f64>], tgt: &[DMatrix<f64>]) -> Outcome<Vec<alignment::EdgeCover>> {
    Ok(src
        .par_iter()
        .zip(tgt.par_iter())
        .enumerate()
        .map(|(k, (s, t))| {
            alignment::align_word_vectors(s, t).map_err(|e| match e {
                Error::ZeroVector(w) => Error::ZeroVector(format!("sentence {k}: {w}")),
                other => other,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?)
}

fn read_gold(path: &Path, expected: usize) -> Outcome<Vec<GoldAlignment>> {
    let gold = read_text_lines(path, alignment::io::read_links)?;
    if gold.len() != expected {
        return Err(Failure::Data(Error::lengths(
            format!("gold alignments in {}", path.display()),
            expected,
            gold.len(),
        )));
    }
    Ok(gold)
}

fn f1_row(row: Row, predicted: &[Alignment], gold: &[GoldAlignment]) -> Outcome<Row> {
    let (s, counts) = alignment::corpus_f1(predicted, gold)?;
    Ok(row
        .with("precision", s.precision)
        .with("recall", s.recall)
        .with("f1", s.f1)
        .with("predicted", counts.predicted as f64)
        .with("sure", counts.sure as f64))
}

fn align(ctx: &Ctx, a: &AlignArgs) -> Outcome<()> {
    let transform = ctx.transform();
    if (transform == Transform::Projected) != a.map.is_some() {
        return usage("--map is required by, and only used with, --transform projected");
    }
    let mut paths = vec![a.src.as_path(), a.tgt.as_path()];
    if let Some(g) = &a.gold {
        paths.push(g);
    }
    let map_files;
    if let Some(m) = &a.map {
        map_files = [crate::persist::manifest_path(m), crate::persist::blob_path(m)];
        paths.extend(map_files.iter().map(PathBuf::as_path));
    }
    let inputs = ctx.inputs(&paths)?;
    let src = load_set(&a.src)?;
    let tgt = load_set(&a.tgt)?;
    same_sentence_count(&src, &tgt)?;
    same_shape(&[&src, &tgt])?;
    let gold = a.gold.as_ref().map(|g| read_gold(g, src.len())).transpose()?;
    let map = a.map.as_ref().map(|m| LinearMap::load(m)).transpose()?;
    let layers = ctx.layers(src.num_layers)?;
    if map.is_some() && layers.len() > 1 {
        return usage("a projection map belongs to one layer; drop --all-layers");
    }

    let metric = gold.as_ref().map(|_| "f1");
    let mut report = Report::new(ctx.provenance(a, inputs)?, "alignment", metric);
    for &layer in &layers {
        let mut s = alignment::corpus_word_vectors(&src, layer)?;
        let mut t = alignment::corpus_word_vectors(&tgt, layer)?;
        match transform {
            Transform::Plain => {}
            Transform::Centered => {
                center_rows(&mut s)?;
                center_rows(&mut t)?;
            }
            Transform::Projected => {
                let map = map.as_ref().expect("checked above");
                s = s.iter().map(|m| map.apply_rows(m)).collect::<crate::Result<_>>()?;
            }
        }
        let covers = align_pairs(&s, &t)?;
        let cost: f64 = covers.iter().map(|c| c.cost).sum();
        let predicted: Vec<Alignment> = covers.into_iter().map(|c| c.alignment).collect();
        let links: usize = predicted.iter().map(|p| p.links.len()).sum();
        let mut row = Row::new(format!("{}->{}", src.lang, tgt.lang), Some(layer))
            .with("links", links as f64)
            .with("cost", cost);
        if let Some(g) = &gold {
            row = f1_row(row, &predicted, g)?;
        }
        report.rows.push(row);
        if let Some(out) = &a.out {
            let path = if ctx.g.all_layers {
                PathBuf::from(format!("{}.layer{layer}", out.display()))
            } else {
                out.clone()
            };
            write_file(&path, |w| alignment::io::write_alignments(w, &predicted))?;
        }
    }
    ctx.emit(&report.finish())
}

fn align_eval(ctx: &Ctx, a: &AlignEvalArgs) -> Outcome<()> {
    let inputs = ctx.inputs(&[&a.pred, &a.gold])?;
    let pred = read_text_lines(&a.pred, alignment::io::read_predicted)?;
    let gold = read_gold(&a.gold, pred.len())?;
    let mut report = Report::new(ctx.provenance(a, inputs)?, "alignment-eval", Some("f1"));
    report.rows.push(f1_row(Row::new("corpus", None), &pred, &gold)?);
    ctx.emit(&report.finish())
}

fn em_align(ctx: &Ctx, a: &EmAlignArgs) -> Outcome<()> {
    ctx.only_transforms(&[TransformArg::Plain])?;
    let mut paths = vec![a.src.as_path(), a.tgt.as_path()];
    if let Some(g) = &a.gold {
        paths.push(g);
    }
    let inputs = ctx.inputs(&paths)?;
    let src = load_set(&a.src)?;
    let tgt = load_set(&a.tgt)?;
    same_sentence_count(&src, &tgt)?;
    same_shape(&[&src, &tgt])?;
    let gold = a.gold.as_ref().map(|g| read_gold(g, src.len())).transpose()?;
    let layer = ctx.single_layer(src.num_layers)?;
    let s = alignment::corpus_word_vectors(&src, layer)?;
    let t = alignment::corpus_word_vectors(&tgt, layer)?;
    let em = alignment::em_align_project(&s, &t, a.iterations, ctx.g.lambda)?;

    let mut report = Report::new(
        ctx.provenance(a, inputs)?,
        "em-alignment",
        gold.as_ref().map(|_| "f1"),
    );
    for step in &em.trace {
        report.rows.push(
            Row::new(format!("iteration {}", step.iteration), Some(layer))
                .with("cost", step.cost)
                .with("links_changed", step.links_changed as f64)
                .with("accepted", if step.accepted { 1.0 } else { 0.0 }),
        );
    }
    if let Some(g) = &gold {
        let plain: Vec<Alignment> = align_pairs(&s, &t)?.into_iter().map(|c| c.alignment).collect();
        report.summary.push(f1_row(Row::new("plain", Some(layer)), &plain, g)?);
        report.summary.push(f1_row(Row::new("em", Some(layer)), &em.alignments, g)?);
    }
    if let Some(out) = &a.out {
        write_file(out, |w| alignment::io::write_alignments(w, &em.alignments))?;
    }
    if let Some(base) = &a.map_out {
        em.map.clone().with_langs(&src.lang, &tgt.lang).save(base)?;
    }
    ctx.emit(&report.finish())
}

/// Loads the families of exactly the clustered languages.
fn families_for(path: &Path, langs: &[String]) -> Outcome<langsim::FamilyLabeling> {
    let f = File::open(path).map_err(|e| Failure::Data(with_path(path, e.into())))?;
    let all = langsim::read_families(f, &path.display().to_string())?;
    langs
        .iter()
        .map(|l| {
            all.get(l).map(|f| (l.clone(), f.clone())).ok_or_else(|| {
                Failure::Data(Error::LabelSetMismatch(format!(
                    "language {l:?} has no family in {}",
                    path.display()
                )))
            })
        })
        .collect()
}

fn partition_json(p: &langsim::Partition) -> Value {
    json!(p)
}

fn vmeasure_row(row: Row, v: &langsim::VMeasure) -> Row {
    row.with("homogeneity", v.homogeneity)
        .with("completeness", v.completeness)
        .with("v", v.v)
}

fn cluster(ctx: &Ctx, a: &ClusterArgs) -> Outcome<()> {
    let mut paths: Vec<&Path> = a.centroids.iter().map(PathBuf::as_path).collect();
    if let Some(f) = &a.families {
        paths.push(f);
    }
    let inputs = ctx.inputs(&paths)?;
    let centroids = load_centroids(&a.centroids)?;
    let tree = langsim::agglomerative_cluster(&centroids)?;
    let families = a.families.as_ref().map(|f| families_for(f, &tree.leaves)).transpose()?;
    let k = a.k.or_else(|| families.as_ref().map(langsim::distinct_families));

    let mut report = Report::new(ctx.provenance(a, inputs)?, "clustering", None);
    let layer = centroids.first().map(|c| c.layer);
    let n = tree.leaves.len();
    let node_name = |id: usize| {
        if id < n {
            tree.leaves[id].clone()
        } else {
            format!("#{}", id - n)
        }
    };
    for (i, m) in tree.merges.iter().enumerate() {
        report.rows.push(
            Row::new(format!("#{i} = {} + {}", node_name(m.left), node_name(m.right)), layer)
                .with("distance", m.distance)
                .with("size", m.size as f64),
        );
    }
    let mut details = json!({ "tree": tree });
    if let Some(k) = k {
        let partition = langsim::cut_tree(&tree, k)?;
        details["k"] = json!(k);
        details["partition"] = partition_json(&partition);
        if let Some(f) = &families {
            let v = langsim::v_measure(&partition, f)?;
            report
                .summary
                .push(vmeasure_row(Row::new(format!("k={k}"), layer), &v));
        }
    }
    report.details = details;
    ctx.emit(&report.finish())
}

fn vmeasure(ctx: &Ctx, a: &VmeasureArgs) -> Outcome<()> {
    let mut paths: Vec<&Path> = a.centroids.iter().map(PathBuf::as_path).collect();
    paths.push(&a.families);
    let inputs = ctx.inputs(&paths)?;
    let centroids = load_centroids(&a.centroids)?;
    let tree = langsim::agglomerative_cluster(&centroids)?;
    let families = families_for(&a.families, &tree.leaves)?;
    let k = a.k.unwrap_or_else(|| langsim::distinct_families(&families));
    let partition = langsim::cut_tree(&tree, k)?;
    let v = langsim::v_measure(&partition, &families)?;
    let mut report = Report::new(ctx.provenance(a, inputs)?, "v-measure", Some("v"));
    report.rows.push(vmeasure_row(
        Row::new(format!("k={k}"), centroids.first().map(|c| c.layer)),
        &v,
    ));
    report.details = json!({ "k": k, "partition": partition_json(&partition) });
    ctx.emit(&report.finish())
}

fn export_centroids(ctx: &Ctx, a: &ExportArgs) -> Outcome<()> {
    let paths: Vec<&Path> = a.centroids.iter().map(PathBuf::as_path).collect();
    let inputs = ctx.inputs(&paths)?;
    let centroids = load_centroids(&a.centroids)?;
    let mut written = 0;
    write_file(&a.out, |w| {
        written = langsim::export_centroids(&centroids, w)?;
        Ok(())
    })?;
    let mut report = Report::new(ctx.provenance(a, inputs)?, "export-centroids", None);
    report.rows.push(
        Row::new(a.out.display().to_string(), centroids.first().map(|c| c.layer))
            .with("centroids", written as f64)
            .with("dim", centroids.first().map_or(0, Centroid::dim) as f64),
    );
    ctx.emit(&report.finish())
}

/// Reads a `lang<TAB>emb1-path` listing.
fn read_listing(path: &Path) -> Outcome<Vec<(String, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(with_path(path, e.into())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((lang, file)) = line.split_once('\t') else {
            return Err(Failure::Data(Error::Parse {
                source_name: path.display().to_string(),
                line: n + 1,
                detail: "expected lang<TAB>path".into(),
            }));
        };
        let file = Path::new(file.trim());
        out.push((lang.trim().to_string(), if file.is_absolute() { file.to_path_buf() } else { dir.join(file) }));
    }
    if out.is_empty() {
        return Err(Failure::Data(Error::EmptyInput(format!("{}: empty listing", path.display()))));
    }
    Ok(out)
}

fn labeled_reprs(
    listing: &[(String, PathBuf)],
    layer: Option<usize>,
    source: ReprSource,
    ctx: &Ctx,
) -> Outcome<(Vec<(SentenceRepr, String)>, usize)> {
    let mut data = Vec::new();
    let mut used = layer;
    for (lang, path) in listing {
        let set = load_set(path)?;
        let l = match used {
            Some(l) => l,
            None => ctx.single_layer(set.num_layers)?,
        };
        used = Some(l);
        for r in set.sentence_reprs(l, source).map_err(|e| with_path(path, e))? {
            data.push((r, lang.clone()));
        }
    }
    Ok((data, used.expect("listing is not empty")))
}

fn center_labeled(
    data: &mut [(SentenceRepr, String)],
    centroids: &BTreeMap<String, Centroid>,
) -> Outcome<()> {
    for (r, lang) in data.iter_mut() {
        let c = centroids
            .get(lang)
            .ok_or_else(|| Failure::Data(Error::MissingLanguage(lang.clone())))?;
        if c.dim() != r.dim() {
            return Err(Failure::Data(Error::dims(format!("centroid of {lang}"), r.dim(), c.dim())));
        }
        for (x, m) in r.vector.iter_mut().zip(&c.vector) {
            *x -= m;
        }
    }
    Ok(())
}

fn listing_inputs(ctx: &Ctx, listings: &[&Path]) -> Outcome<(Vec<InputFile>, Vec<Vec<(String, PathBuf)>>)> {
    let mut inputs = ctx.inputs(listings)?;
    let mut parsed = Vec::new();
    for l in listings {
        let entries = read_listing(l)?;
        let files: Vec<&Path> = entries.iter().map(|(_, p)| p.as_path()).collect();
        inputs.extend(ctx.inputs(&files)?);
        parsed.push(entries);
    }
    Ok((inputs, parsed))
}

fn accuracy_rows(report: &mut Report, eval: &langid::Evaluation, label: &str, layer: usize) {
    for (lang, acc) in &eval.per_language {
        report
            .rows
            .push(Row::new(format!("{label} {lang}"), Some(layer)).with("accuracy", *acc));
    }
    report.summary.push(
        Row::new(label, Some(layer))
            .with("accuracy", eval.accuracy)
            .with("total", eval.total as f64),
    );
}

fn langid_train(ctx: &Ctx, a: &LangidTrainArgs) -> Outcome<()> {
    ctx.only_transforms(&[TransformArg::Plain, TransformArg::Centered])?;
    let mut listings = vec![a.train.as_path()];
    if let Some(e) = &a.eval {
        listings.push(e);
    }
    let (inputs, parsed) = listing_inputs(ctx, &listings)?;
    let source = ctx.source();
    let (mut train, layer) = labeled_reprs(&parsed[0], None, source, ctx)?;

    let centroids = if ctx.transform() == Transform::Centered {
        let mut by_lang: BTreeMap<String, Vec<SentenceRepr>> = BTreeMap::new();
        for (r, l) in &train {
            by_lang.entry(l.clone()).or_default().push(r.clone());
        }
        let cs = by_lang
            .iter()
            .map(|(l, rs)| Ok((l.clone(), compute_centroid(l, rs)?)))
            .collect::<crate::Result<BTreeMap<_, _>>>()?;
        center_labeled(&mut train, &cs)?;
        Some(cs)
    } else {
        None
    };

    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: ctx.g.seed,
        l2: a.l2,
    };
    let mut clf = langid::train_classifier(&train, &config)?;
    clf.centroids = centroids;
    clf.input = Some(InputSpec { layer, source });
    clf.save(&a.out)?;

    let mut report = Report::new(ctx.provenance(a, inputs)?, "langid-train", None);
    for (i, loss) in clf.meta.loss_history.iter().enumerate() {
        report
            .rows
            .push(Row::new(format!("epoch {}", i + 1), Some(layer)).with("loss", *loss));
    }
    let train_eval = langid::evaluate_classifier(&clf, &train)?;
    report.summary.push(
        Row::new("train", Some(layer))
            .with("accuracy", train_eval.accuracy)
            .with("total", train_eval.total as f64),
    );
    if let Some(listing) = parsed.get(1) {
        let (mut data, _) = labeled_reprs(listing, Some(layer), source, ctx)?;
        if let Some(cs) = &clf.centroids {
            center_labeled(&mut data, cs)?;
        }
        let eval = langid::evaluate_classifier(&clf, &data)?;
        report.summary.push(
            Row::new("eval", Some(layer))
                .with("accuracy", eval.accuracy)
                .with("total", eval.total as f64),
        );
    }
    ctx.emit(&report.finish())
}

fn model_files(base: &Path) -> [PathBuf; 2] {
    [crate::persist::manifest_path(base), crate::persist::blob_path(base)]
}

fn langid_eval(ctx: &Ctx, a: &LangidEvalArgs) -> Outcome<()> {
    let files = model_files(&a.model);
    let mut inputs = ctx.inputs(&[&files[0], &files[1]])?;
    let (more, parsed) = listing_inputs(ctx, &[&a.data])?;
    inputs.extend(more);
    let clf = LinearClassifier::load(&a.model)?;
    let (layer, source) = match clf.input {
        Some(spec) => (Some(spec.layer), spec.source),
        None => (ctx.g.layer, ctx.source()),
    };
    let (mut data, layer) = labeled_reprs(&parsed[0], layer, source, ctx)?;
    if let Some(cs) = &clf.centroids {
        center_labeled(&mut data, cs)?;
    }
    let eval = langid::evaluate_classifier(&clf, &data)?;
    let mut report = Report::new(ctx.provenance(a, inputs)?, "langid-eval", None);
    accuracy_rows(&mut report, &eval, "all", layer);
    report.details = json!({
        "class_labels": clf.class_labels,
        "confusion": eval.confusion,
    });
    ctx.emit(&report.finish())
}

fn qe_records(
    src: &EmbeddingSet,
    mt: &EmbeddingSet,
    labels: &[f64],
    layer: usize,
    source: ReprSource,
) -> Outcome<Vec<QeRecord>> {
    same_sentence_count(src, mt)?;
    if labels.len() != src.len() {
        return Err(Failure::Data(Error::lengths("labels and sentences", labels.len(), src.len())));
    }
    let s = src.sentence_reprs(layer, source)?;
    let m = mt.sentence_reprs(layer, source)?;
    Ok(s.into_iter()
        .zip(m)
        .zip(labels)
        .map(|((s, m), &h)| QeRecord::new(s, m, h))
        .collect::<crate::Result<_>>()?)
}

fn read_labels(path: &Path) -> Outcome<Vec<f64>> {
    read_text_lines(path, qe::read_labels)
}

fn qe_score(ctx: &Ctx, a: &QeScoreArgs) -> Outcome<()> {
    let transform = ctx.transform();
    let fitting = a.fit_src.is_some();
    if (transform == Transform::Projected) != (a.map.is_some() || fitting) {
        return usage("--map or --fit-src/--fit-mt are required by, and only used with, --transform projected");
    }
    let mut paths = vec![a.src.clone(), a.mt.clone(), a.labels.clone()];
    if let Some(m) = &a.map {
        paths.extend(model_files(m));
    }
    paths.extend(a.fit_src.iter().cloned());
    paths.extend(a.fit_mt.iter().cloned());
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let inputs = ctx.inputs(&refs)?;

    let src = load_set(&a.src)?;
    let mt = load_set(&a.mt)?;
    let labels = read_labels(&a.labels)?;
    let fit = match (&a.fit_src, &a.fit_mt) {
        (Some(s), Some(m)) => {
            let (s, m) = (load_set(s)?, load_set(m)?);
            same_sentence_count(&s, &m)?;
            same_shape(&[&src, &mt, &s, &m])?;
            Some((s, m))
        }
        _ => None,
    };
    let map = a.map.as_ref().map(|m| LinearMap::load(m)).transpose()?;
    let layers = ctx.layers(src.num_layers.min(mt.num_layers))?;
    if map.is_some() && layers.len() > 1 {
        return usage("a projection map belongs to one layer; drop --all-layers");
    }

    let mut report = Report::new(ctx.provenance(a, inputs)?, "qe-score", Some("pearson"));
    for &layer in &layers {
        let records = qe_records(&src, &mt, &labels, layer, ctx.source())?;
        let fitted = match &fit {
            Some((s, m)) => {
                let x = geometry::reprs_to_matrix(&s.sentence_reprs(layer, ctx.source())?)?;
                let y = geometry::reprs_to_matrix(&m.sentence_reprs(layer, ctx.source())?)?;
                Some(geometry::fit_projection(&x, &y, ctx.g.lambda)?)
            }
            None => None,
        };
        let scores = qe::distance_score(&records, transform, fitted.as_ref().or(map.as_ref()))?;
        let r = qe::pearson(&scores, &labels)?;
        report.rows.push(
            Row::new(format!("{}->{}", src.lang, mt.lang), Some(layer)).with("pearson", r),
        );
    }
    ctx.emit(&report.finish())
}

fn qe_train(ctx: &Ctx, a: &QeTrainArgs) -> Outcome<()> {
    ctx.only_transforms(&[TransformArg::Plain])?;
    let mut paths = vec![a.src.as_path(), a.mt.as_path(), a.labels.as_path()];
    for p in [&a.val_src, &a.val_mt, &a.val_labels].into_iter().flatten() {
        paths.push(p);
    }
    let inputs = ctx.inputs(&paths)?;
    let src = load_set(&a.src)?;
    let mt = load_set(&a.mt)?;
    let labels = read_labels(&a.labels)?;
    let layer = ctx.single_layer(src.num_layers.min(mt.num_layers))?;
    let source = ctx.source();
    let mode = a.mode.into();
    let train = qe_records(&src, &mt, &labels, layer, source)?;

    let metric = a.val_src.as_ref().map(|_| "val_pearson");
    let mut report = Report::new(ctx.provenance(a, inputs)?, "qe-train", metric);
    let lambda = match (&a.val_src, &a.val_mt, &a.val_labels) {
        (Some(vs), Some(vm), Some(vl)) => {
            let val = qe_records(&load_set(vs)?, &load_set(vm)?, &read_labels(vl)?, layer, source)?;
            let search = qe::select_lambda(&train, &val, mode, &qe::default_lambda_grid())?;
            for (lambda, r) in &search.scores {
                let mut row = Row::new(format!("lambda={lambda}"), Some(layer)).with("lambda", *lambda);
                if let Some(r) = r {
                    row = row.with("val_pearson", *r);
                }
                report.rows.push(row);
            }
            search.best_lambda
        }
        _ => ctx.g.lambda,
    };
    let mut model = qe::train_qe(&train, mode, lambda)?;
    model.input = Some(InputSpec { layer, source });
    model.save(&a.out)?;
    let preds = qe::predict_qe(&model, &train)?;
    let mut row = Row::new("train", Some(layer)).with("lambda", lambda);
    if let Ok(r) = qe::pearson(&preds, &labels) {
        row = row.with("train_pearson", r);
    }
    report.details = json!({ "final": row });
    ctx.emit(&report.finish())
}

fn qe_eval(ctx: &Ctx, a: &QeEvalArgs) -> Outcome<()> {
    ctx.only_transforms(&[TransformArg::Plain])?;
    let files = model_files(&a.model);
    let inputs = ctx.inputs(&[&files[0], &files[1], &a.src, &a.mt, &a.labels])?;
    let model = QeModel::load(&a.model)?;
    let src = load_set(&a.src)?;
    let mt = load_set(&a.mt)?;
    let labels = read_labels(&a.labels)?;
    let (layer, source) = match model.input {
        Some(spec) => (spec.layer, spec.source),
        None => (ctx.single_layer(src.num_layers)?, ctx.source()),
    };
    let records = qe_records(&src, &mt, &labels, layer, source)?;
    let preds = qe::predict_qe(&model, &records)?;
    let r = qe::pearson(&preds, &labels)?;
    let mut report = Report::new(ctx.provenance(a, inputs)?, "qe-eval", Some("pearson"));
    report.rows.push(
        Row::new(format!("{}->{}", src.lang, mt.lang), Some(layer))
            .with("pearson", r)
            .with("records", records.len() as f64),
    );
    ctx.emit(&report.finish())
}
