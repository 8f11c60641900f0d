//! Overlap and rank metrics restricted to an evaluation region.

use super::{AgreementError, Result};
use crate::crossmodal::Region;

/// Number of threshold steps on `[0, 1]`.
pub const THRESHOLD_STEPS: usize = 100;

/// `0.00, 0.01, ..., 1.00`.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (0..=THRESHOLD_STEPS).map(|i| i as f64 / THRESHOLD_STEPS as f64)
}

fn check_shapes<A, B>(a: &[Vec<A>], b: &[Vec<B>], region: &Region) -> Result<()> {
    let t = b.first().map_or(0, Vec::len);
    if a.len() != b.len() || a.iter().any(|r| r.len() != t) || b.iter().any(|r| r.len() != t) {
        return Err(AgreementError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.len(),
            a.first().map_or(0, Vec::len),
            b.len(),
            t
        )));
    }
    region.check(b.len(), t).map_err(AgreementError::from)
}

/// `(|A n B|, |A|, |B|)` over the region.
fn overlap_counts(pred: &[Vec<bool>], gt: &[Vec<bool>], region: &Region) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for &r in region.rows() {
        for (&p, &g) in pred[r].iter().zip(&gt[r]) {
            counts.0 += usize::from(p && g);
            counts.1 += usize::from(p);
            counts.2 += usize::from(g);
        }
    }
    counts
}

fn dice_iou(inter: usize, p: usize, g: usize) -> (f64, f64) {
    let dice = 2.0 * inter as f64 / (p + g) as f64;
    let iou = inter as f64 / (p + g - inter) as f64;
    (dice, iou)
}

fn counts_checked(pred: &[Vec<bool>], gt: &[Vec<bool>], region: &Region) -> Result<(usize, usize, usize)> {
    check_shapes(pred, gt, region)?;
    let counts = overlap_counts(pred, gt, region);
    if counts.2 == 0 {
        return Err(AgreementError::EmptyGroundTruth(
            "ground truth has no cells in the region".into(),
        ));
    }
    Ok(counts)
}

pub fn dice(pred: &[Vec<bool>], gt: &[Vec<bool>], region: &Region) -> Result<f64> {
    let (i, p, g) = counts_checked(pred, gt, region)?;
    Ok(dice_iou(i, p, g).0)
}

pub fn iou(pred: &[Vec<bool>], gt: &[Vec<bool>], region: &Region) -> Result<f64> {
    let (i, p, g) = counts_checked(pred, gt, region)?;
    Ok(dice_iou(i, p, g).1)
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        order[i..j].iter().for_each(|&k| ranks[k] = rank);
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Tie-corrected Spearman correlation; `None` when either side is constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// The map was constant over the region; `rho` is reported as 0.
    pub degenerate: bool,
}

pub fn spearman(map: &[Vec<f64>], gt: &[Vec<bool>], region: &Region) -> Result<Spearman> {
    check_shapes(map, gt, region)?;
    let m = region.gather(map);
    let g: Vec<f64> = region.gather(gt).into_iter().map(|b| f64::from(u8::from(b))).collect();
    if g.len() < 2 || g.iter().all(|&v| v == g[0]) {
        return Err(AgreementError::DegenerateRegion);
    }
    Ok(match spearman_rho(&m, &g) {
        Some(rho) => Spearman { rho, degenerate: false },
        None => Spearman {
            rho: 0.0,
            degenerate: true,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub threshold: f64,
    pub dice: f64,
    pub iou: f64,
}

/// Sweeps the grid with `map >= t` and keeps the lowest threshold reaching
/// the best Dice.
pub fn optimal_threshold(map: &[Vec<f64>], gt: &[Vec<bool>], region: &Region) -> Result<Threshold> {
    check_shapes(map, gt, region)?;
    let mut best: Option<Threshold> = None;
    for t in threshold_grid() {
        let pred: Vec<Vec<bool>> = map.iter().map(|row| row.iter().map(|&v| v >= t).collect()).collect();
        let (i, p, g) = counts_checked(&pred, gt, region)?;
        let (dice, iou) = dice_iou(i, p, g);
        if best.is_none_or(|b| dice > b.dice) {
            best = Some(Threshold {
                threshold: t,
                dice,
                iou,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}
