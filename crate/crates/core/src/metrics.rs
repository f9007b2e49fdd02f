//! Internal (CH, DB) and external (F1, NMI, ARI) clustering scores.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NMI_VARIANT: &str = "nmi: mutual information / arithmetic mean of entropies";
pub const F1_VARIANT: &str = "f1: optimal one-to-one cluster-class matching, macro-averaged over classes";
pub const DB_VARIANT: &str = "db: s_i = mean member-to-centroid distance";

/// Counts of cluster `i` against class `j` over dense relabelings of both inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: Array2<u64>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::shape("label vector length", a.len(), b.len()));
        }
        let da = dense(a);
        let db = dense(b);
        let ka = da.iter().max().map_or(0, |m| m + 1);
        let kb = db.iter().max().map_or(0, |m| m + 1);
        let mut counts = Array2::zeros((ka, kb));
        for (&i, &j) in da.iter().zip(&db) {
            counts[[i, j]] += 1;
        }
        Ok(Self {
            row_sums: counts.sum_axis(Axis(1)).to_vec(),
            col_sums: counts.sum_axis(Axis(0)).to_vec(),
            total: a.len() as u64,
            counts,
        })
    }
}

/// Maps arbitrary ids to `0..k` in increasing id order.
fn dense(labels: &[usize]) -> Vec<usize> {
    let ids: BTreeMap<usize, usize> = {
        let mut m = BTreeMap::new();
        for &l in labels {
            m.entry(l).or_insert(0);
        }
        m.keys().enumerate().map(|(i, &k)| (k, i)).collect()
    };
    labels.iter().map(|l| ids[l]).collect()
}

fn check_points(x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(Vec<usize>, usize)> {
    if x.nrows() != labels.len() {
        return Err(Error::shape("labels per point", x.nrows(), labels.len()));
    }
    let d = dense(labels);
    let k = d.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::domain(format!("index undefined for k = {k} clusters")));
    }
    Ok((d, k))
}

fn centroids(x: ArrayView2<'_, f64>, labels: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut c = Array2::zeros((k, x.ncols()));
    let mut n = vec![0usize; k];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        let mut dst = c.row_mut(l);
        dst += &row;
        n[l] += 1;
    }
    for (l, &count) in n.iter().enumerate() {
        c.row_mut(l).mapv_inplace(|v| v / count as f64);
    }
    (c, n)
}

fn dist2(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `tr(B)/tr(W) * (n - k)/(k - 1)`; `+inf` when every point sits on its centroid.
pub fn calinski_harabasz(x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let (labels, k) = check_points(x, labels)?;
    let n = x.nrows();
    let (c, sizes) = centroids(x, &labels, k);
    let mean: Array1<f64> = x.mean_axis(Axis(0)).expect("nonempty");
    let tr_b: f64 = (0..k)
        .map(|q| sizes[q] as f64 * dist2(c.row(q).iter().copied(), mean.iter().copied()))
        .sum();
    let tr_w: f64 = x
        .rows()
        .into_iter()
        .zip(&labels)
        .map(|(row, &l)| dist2(row.iter().copied(), c.row(l).iter().copied()))
        .sum();
    if tr_w == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(tr_b / tr_w * (n - k) as f64 / (k - 1) as f64)
}

/// Mean over clusters of the worst `(s_i + s_j) / d_ij`; `+inf` on coincident centroids.
pub fn davies_bouldin(x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let (labels, k) = check_points(x, labels)?;
    let (c, sizes) = centroids(x, &labels, k);
    let mut s = vec![0.0; k];
    for (row, &l) in x.rows().into_iter().zip(&labels) {
        s[l] += dist2(row.iter().copied(), c.row(l).iter().copied()).sqrt();
    }
    for q in 0..k {
        s[q] /= sizes[q] as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = dist2(c.row(i).iter().copied(), c.row(j).iter().copied()).sqrt();
            if d == 0.0 {
                return Ok(f64::INFINITY);
            }
            worst = worst.max((s[i] + s[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

fn entropy(marginal: &[u64], n: f64) -> f64 {
    marginal
        .iter()
        .filter(|&&m| m > 0)
        .map(|&m| {
            let p = m as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::domain("NMI of empty labelings"));
    }
    let t = ContingencyTable::new(a, b)?;
    let (ka, kb) = (t.row_sums.len(), t.col_sums.len());
    if ka == 1 && kb == 1 {
        return Ok(1.0);
    }
    if ka == 1 || kb == 1 {
        return Ok(0.0);
    }
    let n = t.total as f64;
    let mut mi = 0.0;
    for ((i, j), &c) in t.counts.indexed_iter() {
        if c > 0 {
            let c = c as f64;
            mi += c / n * (c * n / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
        }
    }
    let denom = 0.5 * (entropy(&t.row_sums, n) + entropy(&t.col_sums, n));
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn pairs(n: u64) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

/// Evaluated in integer pair counts with a single final division.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    let index: i128 = t.counts.iter().map(|&c| pairs(c)).sum();
    let sa: i128 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let sb: i128 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.total);
    let num = 2 * (index * total - sa * sb);
    let den = (sa + sb) * total - 2 * sa * sb;
    if den == 0 {
        // both partitions all-singletons or both a single cluster
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Macro F1 over truth classes after optimally pairing clusters with classes.
pub fn f1_matched(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::domain("F1 needs at least one truth class"));
    }
    let t = ContingencyTable::new(pred, truth)?;
    let (kp, kt) = (t.row_sums.len(), t.col_sums.len());
    let overlap = |p: usize, c: usize| t.counts[[p, c]] as i64;
    // class_to_cluster[c] = Some(p)
    let mut class_to_cluster = vec![None; kt];
    if kp <= kt {
        let (_, assignment) = kuhn_munkres(&Matrix::from_fn(kp, kt, |(p, c)| overlap(p, c)));
        for (p, &c) in assignment.iter().enumerate() {
            class_to_cluster[c] = Some(p);
        }
    } else {
        let (_, assignment) = kuhn_munkres(&Matrix::from_fn(kt, kp, |(c, p)| overlap(p, c)));
        for (c, &p) in assignment.iter().enumerate() {
            class_to_cluster[c] = Some(p);
        }
    }
    let sum: f64 = class_to_cluster
        .iter()
        .enumerate()
        .map(|(c, m)| match m {
            Some(p) if t.counts[[*p, c]] > 0 => {
                2.0 * t.counts[[*p, c]] as f64 / (t.row_sums[*p] + t.col_sums[c]) as f64
            }
            _ => 0.0,
        })
        .sum();
    Ok(sum / kt as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Embedding,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub space: Space,
    pub k: usize,
    /// Number of points scored.
    pub n: usize,
    #[serde(with = "score")]
    pub ch: Option<f64>,
    #[serde(with = "score")]
    pub db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    pub notes: Vec<String>,
}

/// Scores that may be infinite: written as numbers, `"inf"`, or `null`.
mod score {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_finite() => s.serialize_f64(*x),
            Some(x) if *x > 0.0 => s.serialize_str("inf"),
            Some(_) => s.serialize_str("-inf"),
            None => s.serialize_none(),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        Ok(match Option::<Raw>::deserialize(d)? {
            None => None,
            Some(Raw::Num(x)) => Some(x),
            Some(Raw::Text(t)) => match t.as_str() {
                "inf" => Some(f64::INFINITY),
                "-inf" => Some(f64::NEG_INFINITY),
                other => return Err(serde::de::Error::custom(format!("bad score `{other}`"))),
            },
        })
    }
}

/// Scores a labeling of `points`. Rows with a negative label are excluded;
/// rows with a negative truth label are excluded from the external scores
/// only. Internal indices are reported as absent when fewer than two
/// clusters remain.
pub fn evaluate(points: ArrayView2<'_, f64>, labels: &[i32], truth: Option<&[i32]>, space: Space) -> Result<MetricsReport> {
    if points.nrows() != labels.len() {
        return Err(Error::shape("labels per point", points.nrows(), labels.len()));
    }
    if let Some(t) = truth {
        if t.len() != labels.len() {
            return Err(Error::shape("truth labels per point", labels.len(), t.len()));
        }
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= 0).collect();
    let kept = points.select(Axis(0), &keep);
    let lab: Vec<usize> = keep.iter().map(|&i| labels[i] as usize).collect();
    let k = dense(&lab).iter().max().map_or(0, |m| m + 1);
    let mut notes = vec![DB_VARIANT.to_string()];
    let (ch, db) = if k >= 2 {
        (Some(calinski_harabasz(kept.view(), &lab)?), Some(davies_bouldin(kept.view(), &lab)?))
    } else {
        notes.push(format!("ch/db undefined for k = {k}"));
        (None, None)
    };
    let mut report = MetricsReport {
        space,
        k,
        n: lab.len(),
        ch,
        db,
        f1: None,
        nmi: None,
        ari: None,
        notes,
    };
    if let Some(t) = truth {
        let (p, g): (Vec<usize>, Vec<usize>) = keep
            .iter()
            .filter(|&&i| t[i] >= 0)
            .map(|&i| (labels[i] as usize, t[i] as usize))
            .unzip();
        if g.is_empty() {
            report.notes.push("no labeled pixels; external scores skipped".into());
        } else {
            report.f1 = Some(f1_matched(&p, &g)?);
            report.nmi = Some(nmi(&p, &g)?);
            report.ari = Some(ari(&p, &g)?);
            report.notes.push(NMI_VARIANT.into());
            report.notes.push(F1_VARIANT.into());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn four() -> Array2<f64> {
        array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]
    }

    #[test]
    fn four_point_fixture() {
        let x = four();
        assert!((calinski_harabasz(x.view(), &[0, 0, 1, 1]).unwrap() - 200.0).abs() < 1e-9);
        assert!((davies_bouldin(x.view(), &[0, 0, 1, 1]).unwrap() - 0.1).abs() < 1e-9);
    }

    #[test]
    fn single_cluster_is_error() {
        let x = four();
        assert!(calinski_harabasz(x.view(), &[0; 4]).is_err());
        assert!(davies_bouldin(x.view(), &[0; 4]).is_err());
    }

    #[test]
    fn sentinels() {
        let x = array![[0.0], [0.0], [1.0], [1.0]];
        assert_eq!(calinski_harabasz(x.view(), &[0, 0, 1, 1]).unwrap(), f64::INFINITY);
        let y = array![[0.0], [2.0], [1.0], [1.0]];
        assert_eq!(davies_bouldin(y.view(), &[0, 0, 1, 1]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn db_duplication_invariant() {
        let x = four();
        let dup = ndarray::concatenate![Axis(0), x, x];
        let l = [0, 0, 1, 1, 0, 0, 1, 1];
        assert!((davies_bouldin(dup.view(), &l).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn external_examples() {
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
        assert_eq!(nmi(&[3, 3, 7, 7], &[3, 3, 7, 7]).unwrap(), 1.0);
        assert_eq!(ari(&[1, 1, 2], &[1, 1, 2]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0], &[1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0], &[0, 1]).unwrap(), 0.0);
        assert!(ari(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_matched(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert!((f1_matched(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // extra clusters with no overlap are left unmatched
        assert_eq!(f1_matched(&[5, 5, 9, 9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!((f1_matched(&[0, 0, 1, 2], &[0, 0, 1, 1]).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_excludes_masked_and_unlabeled() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0], [99.0, 99.0]];
        let r = evaluate(x.view(), &[0, 0, 1, 1, -1], Some(&[1, 1, 2, -1, 2]), Space::Spectral).unwrap();
        assert_eq!(r.k, 2);
        assert_eq!(r.n, 4);
        assert!((r.ch.unwrap() - 200.0).abs() < 1e-9);
        assert_eq!(r.ari, Some(1.0));
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn infinite_scores_round_trip() {
        let x = array![[0.0], [0.0], [1.0], [1.0]];
        let r = evaluate(x.view(), &[0, 0, 1, 1], None, Space::Embedding).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"ch\":\"inf\""));
        assert!(!json.contains("ari"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.ch, Some(f64::INFINITY));
    }

    fn labels() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..4, 2..40)
    }

    proptest! {
        #[test]
        fn permutation_invariance(a in labels(), perm in Just([2usize, 0, 3, 1]), seed in 0usize..4) {
            let b: Vec<usize> = a.iter().map(|&l| (l + seed) % 4).collect();
            let pa: Vec<usize> = a.iter().map(|&l| perm[l]).collect();
            prop_assert!((ari(&a, &b).unwrap() - ari(&pa, &b).unwrap()).abs() < 1e-12);
            prop_assert!((nmi(&a, &b).unwrap() - nmi(&pa, &b).unwrap()).abs() < 1e-12);
            prop_assert!((f1_matched(&a, &b).unwrap() - f1_matched(&pa, &b).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn ari_bounded(a in labels(), b in labels()) {
            let n = a.len().min(b.len());
            let v = ari(&a[..n], &b[..n]).unwrap();
            prop_assert!(v <= 1.0 + 1e-12);
            let s = nmi(&a[..n], &b[..n]).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn ch_db_translation_invariant(shift in -50.0f64..50.0, seed in 0u64..100) {
            let x = Array2::from_shape_fn((12, 3), |(i, j)| ((i as u64 * 31 + j as u64 * 17 + seed) % 23) as f64);
            let l: Vec<usize> = (0..12).map(|i| i % 3).collect();
            let y = &x + shift;
            let (c0, c1) = (calinski_harabasz(x.view(), &l).unwrap(), calinski_harabasz(y.view(), &l).unwrap());
            prop_assert!((c0 - c1).abs() <= 1e-8 * c0.abs().max(1.0));
            let (d0, d1) = (davies_bouldin(x.view(), &l).unwrap(), davies_bouldin(y.view(), &l).unwrap());
            prop_assert!((d0 - d1).abs() <= 1e-8);
        }
    }
}
