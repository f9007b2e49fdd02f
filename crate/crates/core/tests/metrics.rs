mod common;

use std::collections::BTreeSet;

use gypsum::metrics::{ari, calinski_harabasz, davies_bouldin, evaluate, f1_matched, nmi, Space};
use ndarray::{array, Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{blobs, rng};

fn classes(l: &[usize]) -> Vec<usize> {
    l.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

fn centroid(x: &Array2<f64>, l: &[usize], c: usize) -> Vec<f64> {
    let rows: Vec<usize> = (0..l.len()).filter(|&i| l[i] == c).collect();
    x.select(Axis(0), &rows).mean_axis(Axis(0)).unwrap().to_vec()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn ch_oracle(x: &Array2<f64>, l: &[usize]) -> f64 {
    let all: Vec<f64> = x.mean_axis(Axis(0)).unwrap().to_vec();
    let (mut b, mut w) = (0.0, 0.0);
    let cs = classes(l);
    for &c in &cs {
        let m = centroid(x, l, c);
        let n = l.iter().filter(|&&v| v == c).count() as f64;
        b += n * dist(&m, &all).powi(2);
        for i in (0..l.len()).filter(|&i| l[i] == c) {
            w += dist(&x.row(i).to_vec(), &m).powi(2);
        }
    }
    let (n, k) = (l.len() as f64, cs.len() as f64);
    (b / (k - 1.0)) / (w / (n - k))
}

fn db_oracle(x: &Array2<f64>, l: &[usize]) -> f64 {
    let cs = classes(l);
    let means: Vec<Vec<f64>> = cs.iter().map(|&c| centroid(x, l, c)).collect();
    let scatter: Vec<f64> = cs
        .iter()
        .zip(&means)
        .map(|(&c, m)| {
            let members: Vec<usize> = (0..l.len()).filter(|&i| l[i] == c).collect();
            members.iter().map(|&i| dist(&x.row(i).to_vec(), m)).sum::<f64>() / members.len() as f64
        })
        .collect();
    let k = cs.len();
    (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i)
                .map(|j| (scatter[i] + scatter[j]) / dist(&means[i], &means[j]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / k as f64
}

/// Adjusted Rand index from explicit pair enumeration.
fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b, mut total) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let (sa, sb) = (a[i] == a[j], b[i] == b[j]);
            both += (sa && sb) as u8 as f64;
            in_a += sa as u8 as f64;
            in_b += sb as u8 as f64;
            total += 1.0;
        }
    }
    let expected = in_a * in_b / total;
    let max = 0.5 * (in_a + in_b);
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let (ca, cb) = (classes(a), classes(b));
    let count = |f: &dyn Fn(usize) -> bool| (0..a.len()).filter(|&i| f(i)).count();
    let ha = entropy(ca.iter().map(|&x| count(&|i| a[i] == x)), n);
    let hb = entropy(cb.iter().map(|&y| count(&|i| b[i] == y)), n);
    let mut mi = 0.0;
    for &x in &ca {
        for &y in &cb {
            let nxy = count(&|i| a[i] == x && b[i] == y) as f64;
            if nxy > 0.0 {
                let nx = count(&|i| a[i] == x) as f64;
                let ny = count(&|i| b[i] == y) as f64;
                mi += nxy / n * (n * nxy / (nx * ny)).ln();
            }
        }
    }
    match (ca.len() == 1, cb.len() == 1) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => mi / (0.5 * (ha + hb)),
    }
}

fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(i);
        for mut tail in permutations(rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Macro F1 of every injective cluster-to-class assignment that maximizes
/// total overlap (several when overlaps tie).
fn f1_oracle(pred: &[usize], truth: &[usize]) -> Vec<f64> {
    let (cp, ct) = (classes(pred), classes(truth));
    let overlap = |c: usize, t: usize| (0..pred.len()).filter(|&i| pred[i] == c && truth[i] == t).count();
    let f1 = |c: usize, t: usize| {
        let tp = overlap(c, t) as f64;
        if tp == 0.0 {
            return 0.0;
        }
        let prec = tp / pred.iter().filter(|&&v| v == c).count() as f64;
        let rec = tp / truth.iter().filter(|&&v| v == t).count() as f64;
        2.0 * prec * rec / (prec + rec)
    };
    // pad with "none" slots so any class may stay unmatched
    let mut slots: Vec<Option<usize>> = cp.iter().map(|&c| Some(c)).collect();
    slots.extend(std::iter::repeat_n(None, ct.len()));
    let mut best = 0;
    let mut scores = Vec::new();
    for perm in permutations((0..slots.len()).collect()) {
        let pairs: Vec<(usize, usize)> = ct.iter().zip(&perm).filter_map(|(&t, &s)| slots[s].map(|c| (c, t))).collect();
        let total: usize = pairs.iter().map(|&(c, t)| overlap(c, t)).sum();
        let macro_f1 = pairs.iter().map(|&(c, t)| f1(c, t)).sum::<f64>() / ct.len() as f64;
        if total > best {
            best = total;
            scores.clear();
        }
        if total == best {
            scores.push(macro_f1);
        }
    }
    scores
}

fn labeling(max: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..max, 24)
}

proptest! {
    #[test]
    fn ari_matches_pair_enumeration(a in labeling(4), b in labeling(5)) {
        prop_assert!((ari(&a, &b).unwrap() - ari_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn nmi_matches_entropy_definition(a in labeling(4), b in labeling(5)) {
        prop_assert!((nmi(&a, &b).unwrap() - nmi_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn f1_matches_exhaustive_matching(a in prop::collection::vec(0usize..3, 10), b in prop::collection::vec(0usize..3, 10)) {
        let got = f1_matched(&a, &b).unwrap();
        prop_assert!(f1_oracle(&a, &b).iter().any(|v| (v - got).abs() < 1e-12));
    }

    #[test]
    fn internal_scores_match_direct_evaluation(seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = Array2::from_shape_fn((30, 3), |_| r.random_range(-5.0..5.0));
        let l: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let ch = calinski_harabasz(x.view(), &l).unwrap();
        let db = davies_bouldin(x.view(), &l).unwrap();
        prop_assert!((ch - ch_oracle(&x, &l)).abs() <= 1e-9 * ch.abs().max(1.0));
        prop_assert!((db - db_oracle(&x, &l)).abs() <= 1e-9 * db.abs().max(1.0));
    }

    #[test]
    fn internal_scores_invariant_to_rotation_and_translation(seed in 0u64..1000, theta in 0.0f64..6.28) {
        let mut r = rng(seed);
        let x = Array2::from_shape_fn((40, 2), |_| r.random_range(-5.0..5.0));
        let l: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let rot = array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]];
        let moved = x.dot(&rot.t()) + &array![17.0, -3.5];
        let (c0, c1) = (calinski_harabasz(x.view(), &l).unwrap(), calinski_harabasz(moved.view(), &l).unwrap());
        let (d0, d1) = (davies_bouldin(x.view(), &l).unwrap(), davies_bouldin(moved.view(), &l).unwrap());
        prop_assert!((c0 - c1).abs() <= 1e-8 * c0.abs().max(1.0));
        prop_assert!((d0 - d1).abs() <= 1e-8 * d0.abs().max(1.0));
    }
}

#[test]
fn random_labels_score_near_zero_ari() {
    let (x, _) = blobs(250, &[vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0], vec![10.0, 10.0]], 1.0, 1);
    let truth: Vec<usize> = (0..x.nrows()).map(|i| i / 250).collect();
    let mut r = rng(2);
    for trial in 0..50 {
        let random: Vec<usize> = (0..x.nrows()).map(|_| r.random_range(0..4)).collect();
        let score = ari(&random, &truth).unwrap();
        assert!(score.abs() <= 0.05, "trial {trial}: {score}");
    }
}

#[test]
fn pixel_order_does_not_change_reports() {
    let (x, truth) = blobs(50, &[vec![0.0, 0.0], vec![6.0, 1.0], vec![1.0, 7.0]], 1.0, 3);
    let labels: Vec<i32> = truth.iter().enumerate().map(|(i, &t)| if i % 17 == 0 { -1 } else { ((t + i % 2) % 3) as i32 }).collect();
    let truth: Vec<i32> = truth.iter().map(|&t| t as i32).collect();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.shuffle(&mut rng(4));
    let a = evaluate(x.view(), &labels, Some(&truth), Space::Embedding).unwrap();
    let xs = x.select(Axis(0), &order);
    let ls: Vec<i32> = order.iter().map(|&i| labels[i]).collect();
    let ts: Vec<i32> = order.iter().map(|&i| truth[i]).collect();
    let b = evaluate(xs.view(), &ls, Some(&ts), Space::Embedding).unwrap();
    let close = |p: Option<f64>, q: Option<f64>| (p.unwrap() - q.unwrap()).abs() < 1e-9;
    assert!(close(a.ch, b.ch) && close(a.db, b.db));
    assert_eq!((a.f1, a.nmi, a.ari), (b.f1, b.nmi, b.ari));
}

#[test]
fn spaces_report_different_internal_scores() {
    let (x, truth) = blobs(40, &[vec![0.0, 0.0, 1.0], vec![4.0, 0.0, 1.0]], 1.0, 5);
    let labels: Vec<i32> = truth.iter().map(|&t| t as i32).collect();
    let spectral = x.mapv(|v| v.exp());
    let e = evaluate(x.view(), &labels, Some(&labels), Space::Embedding).unwrap();
    let s = evaluate(spectral.view(), &labels, Some(&labels), Space::Spectral).unwrap();
    assert_ne!(e.ch, s.ch);
    assert_ne!(e.db, s.db);
    assert_eq!((e.f1, e.nmi, e.ari), (s.f1, s.nmi, s.ari));
    assert_eq!(e.ari, Some(1.0));
}
