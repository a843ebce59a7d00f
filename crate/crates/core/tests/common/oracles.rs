//! Reference implementations used as test oracles.

use super::hp::Hp;
use mid_core::data::{Dataset, Feature, FeatureSchema, LabelKind};
use mid_core::tree::Node;

// Reference ID3 written from the textbook description, sharing nothing with
// the library besides the data types.
#[derive(Debug, PartialEq)]
pub enum RefNode {
    Leaf(Vec<f64>),
    Split(usize, Vec<Option<RefNode>>),
}

pub fn h(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut e = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n as f64;
            e -= p * p.ln();
        }
    }
    e
}

pub fn ref_id3(x: &[Vec<usize>], y: &[usize], rows: Vec<usize>, used: &mut Vec<bool>, depth: usize, max_depth: usize) -> RefNode {
    let mut counts = [0usize; 2];
    for &i in &rows {
        counts[y[i]] += 1;
    }
    let as_f = counts.iter().map(|&c| c as f64).collect::<Vec<_>>();
    if counts[0] == 0 || counts[1] == 0 || depth >= max_depth || used.iter().all(|u| *u) || rows.len() < 2 {
        return RefNode::Leaf(as_f);
    }
    let mut best: Option<(usize, f64)> = None;
    for f in 0..used.len() {
        if used[f] {
            continue;
        }
        let mut cond = 0.0;
        for v in 0..2 {
            let mut c = [0usize; 2];
            for &i in &rows {
                if x[i][f] == v {
                    c[y[i]] += 1;
                }
            }
            let m = c[0] + c[1];
            cond += m as f64 / rows.len() as f64 * h(&c);
        }
        let gain = h(&counts) - cond;
        if best.is_none_or(|(_, g)| gain > g + 1e-9) {
            best = Some((f, gain));
        }
    }
    let f = best.unwrap().0;
    used[f] = true;
    let kids = (0..2)
        .map(|v| {
            let sub: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] == v).collect();
            if sub.is_empty() {
                None
            } else {
                Some(ref_id3(x, y, sub, used, depth + 1, max_depth))
            }
        })
        .collect();
    used[f] = false;
    RefNode::Split(f, kids)
}

pub fn to_ref(n: &Node) -> RefNode {
    match n {
        Node::Leaf { class_counts, .. } => RefNode::Leaf(class_counts.clone()),
        Node::Internal {
            feature_index, children, ..
        } => RefNode::Split(*feature_index, children.iter().map(|c| c.as_ref().map(to_ref)).collect()),
    }
}

pub fn binary_dataset(x: &[Vec<usize>], y: &[usize]) -> Dataset {
    let d = x[0].len();
    let schema = FeatureSchema::new(
        (0..d).map(|j| Feature::categorical(format!("f{j}"), 2)).collect(),
        0,
        LabelKind::Classification { num_classes: 2 },
    )
    .unwrap();
    Dataset::new(
        schema,
        x.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect(),
        y.iter().map(|&c| c as f64).collect(),
    )
    .unwrap()
}

/// `-(1/N) sum_i ln[(1/N) sum_j N(o_i; o_j, sigma^2)]` at 256 bits.
pub fn hp_entropy(hp: &mut Hp, outputs: &[f64], sigma: f64) -> f64 {
    let n = hp.num(outputs.len() as f64);
    let s = hp.num(sigma);
    let var = hp.mul(&s, &s);
    let pi = hp.pi();
    let two_pi = hp.mul(&hp.num(2.0), &pi);
    let norm = hp.sqrt(&hp.mul(&two_pi, &var));
    let two_var = hp.mul(&hp.num(2.0), &var);
    let mut total = hp.num(0.0);
    for &oi in outputs {
        let mut inner = hp.num(0.0);
        for &oj in outputs {
            let d = hp.sub(&hp.num(oi), &hp.num(oj));
            let arg = hp.div(&hp.mul(&d, &d), &two_var).neg();
            let e = hp.exp(&arg);
            inner = hp.add(&inner, &hp.div(&e, &norm));
        }
        let q = hp.div(&inner, &n);
        let l = hp.ln(&q);
        total = hp.add(&total, &l);
    }
    hp.to_f64(&hp.div(&total, &n).neg())
}

/// Pairwise definition: P(score_pos > score_neg) + 0.5 P(tie).
pub fn brute_auroc(scores: &[f64], pos: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

