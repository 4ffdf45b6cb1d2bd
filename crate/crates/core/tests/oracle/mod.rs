//! Straight-line reference implementations used as test oracles. They share
//! no code with the library.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

/// BM25 by brute force over raw token lists, one document per entry.
pub fn bm25(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avg = if docs.is_empty() { 0.0 } else { docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n };
    let mut out = vec![0.0; docs.len()];
    for q in query {
        let df = docs.iter().filter(|d| d.contains(q)).count() as f64;
        if df == 0.0 {
            continue;
        }
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        for (i, d) in docs.iter().enumerate() {
            let tf = d.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let dl = d.len() as f64;
            out[i] += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avg));
        }
    }
    out
}

pub fn normalize(s: &str) -> String {
    const PUNCT: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
    let mut cleaned = String::new();
    for c in s.chars() {
        for l in c.to_lowercase() {
            if !PUNCT.contains(l) {
                cleaned.push(l);
            }
        }
    }
    let mut words = Vec::new();
    for w in cleaned.split_whitespace() {
        if w != "a" && w != "an" && w != "the" {
            words.push(w);
        }
    }
    words.join(" ")
}

/// (em, f1, precision, recall)
pub fn answer_scores(pred: &str, gold: &str) -> (f64, f64, f64, f64) {
    let p = normalize(pred);
    let g = normalize(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() && gt.is_empty() {
        return (1.0, 1.0, 1.0, 1.0);
    }
    if pt.is_empty() || gt.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let em = if p == g { 1.0 } else { 0.0 };
    let mut remaining = gt.clone();
    let mut same = 0usize;
    for t in &pt {
        if let Some(pos) = remaining.iter().position(|x| x == t) {
            remaining.remove(pos);
            same += 1;
        }
    }
    if same == 0 {
        return (em, 0.0, 0.0, 0.0);
    }
    let prec = same as f64 / pt.len() as f64;
    let rec = same as f64 / gt.len() as f64;
    (em, 2.0 * prec * rec / (prec + rec), prec, rec)
}

pub fn evidence_scores(pred: &BTreeSet<u32>, gold: &BTreeSet<u32>) -> (f64, f64, f64, f64) {
    if pred.is_empty() && gold.is_empty() {
        return (1.0, 1.0, 1.0, 1.0);
    }
    if pred.is_empty() || gold.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let em = if pred == gold { 1.0 } else { 0.0 };
    let same = pred.iter().filter(|p| gold.contains(p)).count();
    if same == 0 {
        return (em, 0.0, 0.0, 0.0);
    }
    let prec = same as f64 / pred.len() as f64;
    let rec = same as f64 / gold.len() as f64;
    (em, 2.0 * prec * rec / (prec + rec), prec, rec)
}

/// Rows: [ans_em, ans_f1, ev_em, ev_f1, jem, jf1] means, keyed by group
/// label ("all" for the whole set). Input tuples are
/// (answer_type, reasoning_type, numerical_op, pred_answer, gold_answer,
/// pred_pages, gold_pages).
pub fn metrics_table(
    rows: &[(String, String, String, String, String, BTreeSet<u32>, BTreeSet<u32>)],
) -> BTreeMap<String, (usize, [f64; 6])> {
    let mut table: BTreeMap<String, (usize, [f64; 6])> = BTreeMap::new();
    for (at, rt, op, pa, ga, pp, gp) in rows {
        let (aem, af1, ap, ar) = answer_scores(pa, ga);
        let (eem, ef1, ep, er) = evidence_scores(pp, gp);
        let jp = ap * ep;
        let jr = ar * er;
        let jf1 = if jp + jr > 0.0 { 2.0 * jp * jr / (jp + jr) } else { 0.0 };
        let jem = aem * eem;
        for key in ["all".to_string(), format!("a:{at}"), format!("r:{rt}"), format!("o:{op}")] {
            let entry = table.entry(key).or_insert((0, [0.0; 6]));
            entry.0 += 1;
            for (s, v) in entry.1.iter_mut().zip([aem, af1, eem, ef1, jem, jf1]) {
                *s += v;
            }
        }
    }
    for (n, sums) in table.values_mut() {
        for s in sums.iter_mut() {
            *s /= *n as f64;
        }
    }
    table
}

#[derive(Clone, Debug)]
pub enum Tree {
    Lit(i64),
    Neg(Box<Tree>),
    Add(Box<Tree>, Box<Tree>),
    Sub(Box<Tree>, Box<Tree>),
    Mul(Box<Tree>, Box<Tree>),
    Div(Box<Tree>, Box<Tree>),
}

/// Direct exact evaluation; None on a zero divisor.
pub fn eval_tree(t: &Tree) -> Option<BigRational> {
    Some(match t {
        Tree::Lit(v) => BigRational::from_integer(BigInt::from(*v)),
        Tree::Neg(a) => -eval_tree(a)?,
        Tree::Add(a, b) => eval_tree(a)? + eval_tree(b)?,
        Tree::Sub(a, b) => eval_tree(a)? - eval_tree(b)?,
        Tree::Mul(a, b) => eval_tree(a)? * eval_tree(b)?,
        Tree::Div(a, b) => {
            let d = eval_tree(b)?;
            if d.is_zero() {
                return None;
            }
            eval_tree(a)? / d
        }
    })
}

/// Fully parenthesized rendering, independent of the library formatter.
pub fn render_tree(t: &Tree) -> String {
    match t {
        Tree::Lit(v) if *v < 0 => format!("(-{})", -v),
        Tree::Lit(v) => v.to_string(),
        Tree::Neg(a) => format!("(-{})", render_tree(a)),
        Tree::Add(a, b) => format!("({} + {})", render_tree(a), render_tree(b)),
        Tree::Sub(a, b) => format!("({} - {})", render_tree(a), render_tree(b)),
        Tree::Mul(a, b) => format!("({} * {})", render_tree(a), render_tree(b)),
        Tree::Div(a, b) => format!("({} / {})", render_tree(a), render_tree(b)),
    }
}

/// Random tree of depth at most `depth` with literals in [-999, 999].
pub fn random_tree<R: rand::Rng>(rng: &mut R, depth: usize) -> Tree {
    if depth <= 1 || rng.random_bool(0.3) {
        return Tree::Lit(rng.random_range(-999..=999));
    }
    let sub = |rng: &mut R| Box::new(random_tree(rng, depth - 1));
    match rng.random_range(0..9) {
        0 => Tree::Neg(sub(rng)),
        1 | 2 => Tree::Add(sub(rng), sub(rng)),
        3 | 4 => Tree::Sub(sub(rng), sub(rng)),
        5 | 6 => Tree::Mul(sub(rng), sub(rng)),
        _ => Tree::Div(sub(rng), sub(rng)),
    }
}
