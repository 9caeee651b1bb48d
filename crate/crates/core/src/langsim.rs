//! Language similarity: average-linkage clustering of language centroids under
//! cosine distance, flat cuts, and V-measure against a family labeling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cosine_distance, Centroid};

/// One agglomeration step. Node ids `0..n` are the leaves in `leaves` order;
/// merge `i` creates node `n + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    /// Sorted language codes.
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

/// A flat clustering: each inner list is one cluster's languages.
pub type Partition = Vec<Vec<String>>;

/// Language code to family name.
pub type FamilyLabeling = BTreeMap<String, String>;

struct Active {
    node: usize,
    key: String,
    size: usize,
}

/// Average-linkage agglomerative clustering under cosine distance.
///
/// Among equally close cluster pairs, the pair whose smallest member codes
/// are lexicographically smallest merges first; inputs are sorted by language
/// so the result does not depend on their order.
pub fn agglomerative_cluster(centroids: &[Centroid]) -> Result<ClusterTree> {
    if centroids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "clustering needs at least 2 centroids, got {}",
            centroids.len()
        )));
    }
    let mut sorted: Vec<&Centroid> = centroids.iter().collect();
    sorted.sort_by(|a, b| a.lang.cmp(&b.lang));
    if let Some(w) = sorted.windows(2).find(|w| w[0].lang == w[1].lang) {
        return Err(Error::InvalidArgument(format!(
            "duplicate centroid for language {:?}",
            w[0].lang
        )));
    }
    let dim = sorted[0].dim();
    if let Some(bad) = sorted.iter().find(|c| c.dim() != dim) {
        return Err(Error::dims(format!("centroid {:?}", bad.lang), dim, bad.dim()));
    }

    let n = sorted.len();
    let mut dist = vec![vec![0f64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&sorted[i].vector, &sorted[j].vector).map_err(|_| {
                Error::ZeroVector(format!(
                    "centroid pair {:?}/{:?}",
                    sorted[i].lang, sorted[j].lang
                ))
            })?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let mut active: Vec<Option<Active>> = sorted
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Some(Active {
                node: i,
                key: c.lang.clone(),
                size: 1,
            })
        })
        .collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(usize, usize)> = None;
        for a in 0..n {
            let Some(ca) = &active[a] else { continue };
            for b in a + 1..n {
                let Some(cb) = &active[b] else { continue };
                let better = match best {
                    None => true,
                    Some((x, y)) => {
                        let (d, bd) = (dist[a][b], dist[x][y]);
                        d < bd || (d == bd && pair_key(ca, cb) < pair_key_at(&active, x, y))
                    }
                };
                if better {
                    best = Some((a, b));
                }
            }
        }
        let (a, b) = best.expect("two active clusters remain");
        let ca = active[a].take().expect("active");
        let cb = active[b].take().expect("active");
        let (left, right) = if ca.key <= cb.key { (&ca, &cb) } else { (&cb, &ca) };
        let size = ca.size + cb.size;
        merges.push(Merge {
            left: left.node,
            right: right.node,
            distance: dist[a][b],
            size,
        });
        for k in 0..n {
            if k == a || k == b || active[k].is_none() {
                continue;
            }
            let d = (ca.size as f64 * dist[k][a] + cb.size as f64 * dist[k][b]) / size as f64;
            dist[k][a] = d;
            dist[a][k] = d;
        }
        active[a] = Some(Active {
            node: n + step,
            key: left.key.clone(),
            size,
        });
    }

    Ok(ClusterTree {
        leaves: sorted.iter().map(|c| c.lang.clone()).collect(),
        merges,
    })
}

fn pair_key<'a>(a: &'a Active, b: &'a Active) -> (&'a str, &'a str) {
    if a.key <= b.key {
        (&a.key, &b.key)
    } else {
        (&b.key, &a.key)
    }
}

fn pair_key_at(active: &[Option<Active>], x: usize, y: usize) -> (&str, &str) {
    pair_key(
        active[x].as_ref().expect("active"),
        active[y].as_ref().expect("active"),
    )
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Flat clustering with `k` clusters: the tree without its `k - 1` last
/// (largest) merges. Clusters are ordered by their smallest language.
pub fn cut_tree(tree: &ClusterTree, k: usize) -> Result<Partition> {
    let n = tree.leaves.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} outside 1..={n}"
        )));
    }
    // union-find over nodes; merge i links both children to node n + i
    let mut parent: Vec<usize> = (0..n + tree.merges.len()).collect();
    for (i, m) in tree.merges.iter().take(n - k).enumerate() {
        let l = find(&mut parent, m.left);
        let r = find(&mut parent, m.right);
        parent[l] = n + i;
        parent[r] = n + i;
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, lang) in tree.leaves.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(lang.clone());
    }
    let mut out: Partition = groups.into_values().collect();
    for g in &mut out {
        g.sort();
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v: f64,
}

/// V-measure of `clusters` against reference `classes`, both given as one
/// label per item. Entropies are in nats.
pub fn v_measure_from_labels(classes: &[usize], clusters: &[usize]) -> Result<VMeasure> {
    if classes.len() != clusters.len() {
        return Err(Error::lengths("class vs cluster labels", classes.len(), clusters.len()));
    }
    if classes.is_empty() {
        return Err(Error::EmptyInput("V-measure of an empty labeling".into()));
    }
    let n = classes.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut class_n: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cluster_n: BTreeMap<usize, usize> = BTreeMap::new();
    for (&c, &k) in classes.iter().zip(clusters) {
        *joint.entry((c, k)).or_default() += 1;
        *class_n.entry(c).or_default() += 1;
        *cluster_n.entry(k).or_default() += 1;
    }
    let entropy = |counts: &BTreeMap<usize, usize>| -> f64 {
        -counts
            .values()
            .map(|&m| {
                let p = m as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    };
    let h_class = entropy(&class_n);
    let h_cluster = entropy(&cluster_n);
    let mut h_class_given_cluster = 0.0;
    let mut h_cluster_given_class = 0.0;
    for (&(c, k), &m) in &joint {
        let m = m as f64;
        h_class_given_cluster -= m / n * (m / cluster_n[&k] as f64).ln();
        h_cluster_given_class -= m / n * (m / class_n[&c] as f64).ln();
    }
    let homogeneity = if h_class == 0.0 {
        1.0
    } else {
        (1.0 - h_class_given_cluster / h_class).clamp(0.0, 1.0)
    };
    let completeness = if h_cluster == 0.0 {
        1.0
    } else {
        (1.0 - h_cluster_given_class / h_cluster).clamp(0.0, 1.0)
    };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(VMeasure {
        homogeneity,
        completeness,
        v,
    })
}

/// V-measure of a flat clustering of languages against their families.
pub fn v_measure(clusters: &Partition, families: &FamilyLabeling) -> Result<VMeasure> {
    let mut seen = BTreeSet::new();
    let mut class_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut classes = Vec::new();
    let mut cluster_labels = Vec::new();
    for (k, cluster) in clusters.iter().enumerate() {
        for lang in cluster {
            if !seen.insert(lang.as_str()) {
                return Err(Error::LabelSetMismatch(format!(
                    "language {lang:?} appears in more than one cluster"
                )));
            }
            let family = families.get(lang).ok_or_else(|| {
                Error::LabelSetMismatch(format!("language {lang:?} has no family"))
            })?;
            let next = class_ids.len();
            classes.push(*class_ids.entry(family.as_str()).or_insert(next));
            cluster_labels.push(k);
        }
    }
    if let Some(missing) = families.keys().find(|l| !seen.contains(l.as_str())) {
        return Err(Error::LabelSetMismatch(format!(
            "language {missing:?} has a family but is not clustered"
        )));
    }
    v_measure_from_labels(&classes, &cluster_labels)
}

pub fn distinct_families(families: &FamilyLabeling) -> usize {
    families.values().collect::<BTreeSet<_>>().len()
}

/// Reads a two-column `lang<TAB>family` file. Blank lines and `#` comments are
/// skipped.
pub fn read_families<R: Read>(reader: R, source_name: &str) -> Result<FamilyLabeling> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let mut out = FamilyLabeling::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line,
                detail: format!("expected 2 tab-separated columns, found {}", rec.len()),
            });
        }
        let (lang, family) = (rec[0].trim(), rec[1].trim());
        if out.insert(lang.to_string(), family.to_string()).is_some() {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line,
                detail: format!("language {lang:?} listed twice"),
            });
        }
    }
    Ok(out)
}

/// Writes `lang,dim0,...,dim{D-1}` then one row per centroid. Returns the
/// number of data rows.
pub fn export_centroids<W: Write>(centroids: &[Centroid], destination: W) -> Result<usize> {
    let dim = centroids.first().map_or(0, Centroid::dim);
    if let Some(bad) = centroids.iter().find(|c| c.dim() != dim) {
        return Err(Error::dims(format!("centroid {:?}", bad.lang), dim, bad.dim()));
    }
    let mut w = csv::Writer::from_writer(destination);
    let header: Vec<String> = std::iter::once("lang".to_string())
        .chain((0..dim).map(|d| format!("dim{d}")))
        .collect();
    w.write_record(&header)?;
    for c in centroids {
        let row: Vec<String> = std::iter::once(c.lang.clone())
            .chain(c.vector.iter().map(|x| x.to_string()))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(centroids.len())
}
