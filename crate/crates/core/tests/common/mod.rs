//! Independent oracles and helpers shared by the integration tests and the
//! acceptance suite. Nothing here calls into the code it checks.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use trapdex::geometry::CropPlan;
use trapdex::{Metric, NormBox, Scalar};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn oracle_score<T: Scalar>(query: &[T], row: &[T], metric: Metric) -> T {
    match metric {
        Metric::L2 => {
            let mut acc = T::zero();
            for i in 0..query.len() {
                let d = query[i] - row[i];
                acc += d * d;
            }
            acc
        }
        Metric::Cosine => {
            let (mut qq, mut rr, mut qr) = (T::zero(), T::zero(), T::zero());
            for i in 0..query.len() {
                qq += query[i] * query[i];
                rr += row[i] * row[i];
                qr += query[i] * row[i];
            }
            qr / (qq.sqrt() * rr.sqrt())
        }
    }
}

/// Scores every row, sorts all of them, keeps the first `k`.
/// Returns (row, score) best first; ties by row index.
pub fn oracle_search<T: Scalar>(rows: &[Vec<T>], query: &[T], metric: Metric, k: usize) -> Vec<(usize, T)> {
    let mut all: Vec<(usize, T)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, oracle_score(query, r, metric)))
        .collect();
    all.sort_by(|a, b| {
        let by_score = match metric {
            Metric::L2 => a.1.partial_cmp(&b.1).unwrap(),
            Metric::Cosine => b.1.partial_cmp(&a.1).unwrap(),
        };
        by_score.then(a.0.cmp(&b.0))
    });
    all.truncate(k);
    all
}

/// Macro-F1 from a dense confusion matrix, F1 = 2TP / (2TP + FP + FN),
/// averaged over classes that occur in the truth.
pub fn oracle_macro_f1(preds: &[u32], truth: &[u32]) -> f64 {
    let classes = preds.iter().chain(truth).copied().max().unwrap() as usize + 1;
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in preds.iter().zip(truth) {
        m[t as usize][p as usize] += 1;
    }
    let mut sum = 0.0;
    let mut n = 0;
    for (c, counts) in m.iter().enumerate() {
        let row: u64 = counts.iter().sum();
        if row == 0 {
            continue;
        }
        let col: u64 = (0..classes).map(|r| m[r][c]).sum();
        let tp = counts[c];
        let (fp, fn_) = (col - tp, row - tp);
        let denom = 2 * tp + fp + fn_;
        sum += if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        };
        n += 1;
    }
    sum / n as f64
}

pub fn top_n_oracle(preds: &[Vec<u32>], truth: &[u32], n: usize) -> f64 {
    let mut hits = 0;
    for (p, t) in preds.iter().zip(truth) {
        if p.iter().take(n).any(|l| l == t) {
            hits += 1;
        }
    }
    hits as f64 / truth.len() as f64
}

/// Nearest-pixel scaling of a normalized box, clipped to the image, as
/// (x0, y0, x1, y1).
pub fn pixel_box(b: &NormBox, w: u32, h: u32) -> (i64, i64, i64, i64) {
    let e = |v: f64, ext: u32| ((v * ext as f64).round() as i64).clamp(0, ext as i64);
    (e(b.x, w), e(b.y, h), e(b.x + b.w, w), e(b.y + b.h, h))
}

/// Checks a padded crop plan: square output, rect inside the image, rect
/// covering the box, side equal to the longer box edge, and the square
/// centered on the box unless pushed by an image border.
pub fn check_crop(b: &NormBox, w: u32, h: u32, plan: &CropPlan) -> Result<(), String> {
    let (x0, y0, x1, y1) = pixel_box(b, w, h);
    let side = (x1 - x0).max(y1 - y0) as u32;
    let r = plan.rect;
    let p = plan.pad;
    if plan.side != side {
        return Err(format!("side {} != {side}", plan.side));
    }
    if r.w + p.left + p.right != side || r.h + p.top + p.bottom != side {
        return Err(format!("not square: {plan:?}"));
    }
    if r.x as u64 + r.w as u64 > w as u64 || r.y as u64 + r.h as u64 > h as u64 {
        return Err(format!("out of bounds: {plan:?} in {w}x{h}"));
    }
    let (rx0, ry0, rx1, ry1) = (r.x as i64, r.y as i64, (r.x + r.w) as i64, (r.y + r.h) as i64);
    if !(rx0 <= x0 && ry0 <= y0 && rx1 >= x1 && ry1 >= y1) {
        return Err(format!("box ({x0},{y0},{x1},{y1}) not covered by {plan:?}"));
    }
    for (lo, hi, start, len, extent, pad) in [
        (x0, x1, rx0, r.w as i64, w as i64, p.left + p.right),
        (y0, y1, ry0, r.h as i64, h as i64, p.top + p.bottom),
    ] {
        if pad > 0 {
            if start != 0 || len != extent {
                return Err(format!("padded axis must span the image: {plan:?}"));
            }
            continue;
        }
        let touches = start == 0 || start + len == extent;
        // twice the centers, to stay in integers
        let off = (2 * start + len) - (lo + hi);
        if !touches && !(off == 0 || off == -1) {
            return Err(format!("square not centered on box: {plan:?}, box ({lo},{hi})"));
        }
    }
    Ok(())
}

pub fn random_unit_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}
