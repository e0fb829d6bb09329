//! Saliency metrics: MAE, adaptive F-measure, adaptive E-measure, S-measure and
//! the precision/recall curve, plus dataset aggregation and report output.
//!
//! Maps are `Tensor<f64>` whose last two axes are `H, W` (leading axes must be 1).
//! Ground truth pixels at or above 0.5 count as foreground. Predictions are used
//! as given, without min-max rescaling.

use std::fmt::Write as _;

use tritrans_tensor::Tensor;

use crate::error::{Error, Result};

pub const BETA2: f64 = 0.3;
pub const ALPHA: f64 = 0.5;
pub const PR_THRESHOLDS: usize = 256;
/// Keeps the adaptive threshold strictly below 1 so saturated pixels still count.
pub const ADAPTIVE_EPS: f64 = f64::EPSILON;
const EPS: f64 = f64::EPSILON;

fn plane(t: &Tensor<f64>) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::Invalid(format!("metric inputs must be single maps, got {s:?}")));
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

fn pair(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<(usize, usize, Vec<bool>)> {
    let (h, w) = plane(pred)?;
    if plane(gt)? != (h, w) {
        return Err(Error::Invalid(format!("prediction {:?} and ground truth {:?} differ", pred.shape(), gt.shape())));
    }
    Ok((h, w, gt.data().iter().map(|&v| v >= 0.5).collect()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mae(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    let (_, _, fg) = pair(pred, gt)?;
    let total: f64 = pred.data().iter().zip(&fg).map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs()).sum();
    Ok(total / fg.len() as f64)
}

/// `min(2·mean(S), 1 − ε)`.
pub fn adaptive_threshold(pred: &[f64]) -> f64 {
    (2.0 * mean(pred)).min(1.0 - ADAPTIVE_EPS)
}

/// `None` when the ground truth has no foreground.
pub fn adaptive_fmeasure(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<Option<f64>> {
    let (_, _, fg) = pair(pred, gt)?;
    let positives = fg.iter().filter(|&&g| g).count();
    if positives == 0 {
        return Ok(None);
    }
    let t = adaptive_threshold(pred.data());
    let (mut tp, mut predicted) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(&fg) {
        if p >= t {
            predicted += 1;
            tp += g as usize;
        }
    }
    if tp == 0 {
        return Ok(Some(0.0));
    }
    let precision = tp as f64 / predicted as f64;
    let recall = tp as f64 / positives as f64;
    Ok(Some((1.0 + BETA2) * precision * recall / (BETA2 * precision + recall)))
}

/// Enhanced alignment of the adaptively binarized prediction.
///
/// An all-background ground truth scores the fraction of pixels predicted
/// background; an all-foreground one scores the fraction predicted foreground.
pub fn e_measure(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    let (_, _, fg) = pair(pred, gt)?;
    let n = fg.len() as f64;
    let t = adaptive_threshold(pred.data());
    let bin: Vec<f64> = pred.data().iter().map(|&p| if p >= t { 1.0 } else { 0.0 }).collect();
    let gtf: Vec<f64> = fg.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    let (mb, mg) = (mean(&bin), mean(&gtf));
    if mg == 0.0 {
        return Ok(1.0 - mb);
    }
    if mg == 1.0 {
        return Ok(mb);
    }
    let total: f64 = bin
        .iter()
        .zip(&gtf)
        .map(|(&b, &g)| {
            let (a, c) = (b - mb, g - mg);
            let phi = 2.0 * a * c / (a * a + c * c);
            (phi + 1.0).powi(2) / 4.0
        })
        .sum();
    Ok(total / n)
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn block_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let n = pred.len() as f64;
    let (x, y) = (mean(pred), mean(gt));
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        sx += (p - x).powi(2);
        sy += (g - y).powi(2);
        sxy += (p - x) * (g - y);
    }
    let d = n - 1.0 + EPS;
    let (sx, sy, sxy) = (sx / d, sy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure: `α·object + (1 − α)·region`, clamped at 0.
pub fn s_measure(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    let (h, w, fg) = pair(pred, gt)?;
    let p = pred.data();
    let gtf: Vec<f64> = fg.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    let y = mean(&gtf);
    if y == 0.0 {
        return Ok(1.0 - mean(p));
    }
    if y == 1.0 {
        return Ok(mean(p));
    }

    let fg_vals: Vec<f64> = p.iter().zip(&fg).filter(|(_, &g)| g).map(|(&v, _)| v).collect();
    let bg_vals: Vec<f64> = p.iter().zip(&fg).filter(|(_, &g)| !g).map(|(&v, _)| 1.0 - v).collect();
    let object = y * object_score(&fg_vals) + (1.0 - y) * object_score(&bg_vals);

    // Split point: rounded foreground centroid, shifted by one.
    let (mut sr, mut sc, mut count) = (0.0, 0.0, 0.0);
    for (i, &g) in fg.iter().enumerate() {
        if g {
            sr += (i / w) as f64;
            sc += (i % w) as f64;
            count += 1.0;
        }
    }
    let cy = (sr / count).round() as usize + 1;
    let cx = (sc / count).round() as usize + 1;
    let area = (h * w) as f64;
    let blocks = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let mut weights = [
        (cx * cy) as f64 / area,
        (cy * (w - cx)) as f64 / area,
        ((h - cy) * cx) as f64 / area,
        0.0,
    ];
    weights[3] = 1.0 - weights[0] - weights[1] - weights[2];
    let mut region = 0.0;
    for (&(r0, r1, c0, c1), &wt) in blocks.iter().zip(&weights) {
        let mut bp = Vec::new();
        let mut bg = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                bp.push(p[r * w + c]);
                bg.push(gtf[r * w + c]);
            }
        }
        region += wt * block_ssim(&bp, &bg);
    }
    Ok((ALPHA * object + (1.0 - ALPHA) * region).max(0.0))
}

/// Threshold `j` of the PR curve, `j / 255`.
pub fn pr_threshold(j: usize) -> f64 {
    j as f64 / (PR_THRESHOLDS - 1) as f64
}

/// Per-threshold `(precision, recall)` with `S ≥ t` as positive; `None` for an
/// all-background ground truth. Precision is 1 when nothing is predicted positive.
pub fn pr_curve(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<Option<Vec<(f64, f64)>>> {
    let (_, _, fg) = pair(pred, gt)?;
    let positives = fg.iter().filter(|&&g| g).count();
    if positives == 0 {
        return Ok(None);
    }
    let curve = (0..PR_THRESHOLDS)
        .map(|j| {
            let t = pr_threshold(j);
            let (mut tp, mut predicted) = (0usize, 0usize);
            for (&p, &g) in pred.data().iter().zip(&fg) {
                if p >= t {
                    predicted += 1;
                    tp += g as usize;
                }
            }
            let precision = if predicted == 0 { 1.0 } else { tp as f64 / predicted as f64 };
            (precision, tp as f64 / positives as f64)
        })
        .collect();
    Ok(Some(curve))
}

/// Scores of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub mae: f64,
    pub fmeasure: Option<f64>,
    pub emeasure: f64,
    pub smeasure: f64,
    pub pr: Option<Vec<(f64, f64)>>,
}

pub fn score_image(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<ImageScores> {
    Ok(ImageScores {
        mae: mae(pred, gt)?,
        fmeasure: adaptive_fmeasure(pred, gt)?,
        emeasure: e_measure(pred, gt)?,
        smeasure: s_measure(pred, gt)?,
        pr: pr_curve(pred, gt)?,
    })
}

/// Dataset-level scores: unweighted means over images. F-measure and the PR
/// curve average only over images with some foreground.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub dataset: String,
    pub images: usize,
    pub smeasure: f64,
    pub fmeasure: Option<f64>,
    pub emeasure: f64,
    pub mae: f64,
    /// `(precision, recall)` per threshold `j/255`; empty when undefined.
    pub pr: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    images: usize,
    mae: f64,
    emeasure: f64,
    smeasure: f64,
    fsum: f64,
    fcount: usize,
    pr: Vec<(f64, f64)>,
    prcount: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<ImageScores> {
        let s = score_image(pred, gt)?;
        self.push(&s);
        Ok(s)
    }

    pub fn push(&mut self, s: &ImageScores) {
        self.images += 1;
        self.mae += s.mae;
        self.emeasure += s.emeasure;
        self.smeasure += s.smeasure;
        if let Some(f) = s.fmeasure {
            self.fsum += f;
            self.fcount += 1;
        }
        if let Some(curve) = &s.pr {
            if self.pr.is_empty() {
                self.pr = vec![(0.0, 0.0); curve.len()];
            }
            for (acc, &(p, r)) in self.pr.iter_mut().zip(curve) {
                acc.0 += p;
                acc.1 += r;
            }
            self.prcount += 1;
        }
    }

    pub fn finish(&self, dataset: &str) -> Result<MetricReport> {
        if self.images == 0 {
            return Err(Error::Invalid(format!("dataset `{dataset}` has no images")));
        }
        let n = self.images as f64;
        let k = self.prcount as f64;
        Ok(MetricReport {
            dataset: dataset.to_string(),
            images: self.images,
            smeasure: self.smeasure / n,
            fmeasure: (self.fcount > 0).then(|| self.fsum / self.fcount as f64),
            emeasure: self.emeasure / n,
            mae: self.mae / n,
            pr: self.pr.iter().map(|&(p, r)| (p / k, r / k)).collect(),
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |f| format!("{f:.4}"))
}

impl MetricReport {
    pub fn from_pairs<'a>(dataset: &str, pairs: impl IntoIterator<Item = (&'a Tensor<f64>, &'a Tensor<f64>)>) -> Result<Self> {
        let mut acc = MetricAccumulator::default();
        for (p, g) in pairs {
            acc.add(p, g)?;
        }
        acc.finish(dataset)
    }

    /// `dataset metric value` lines.
    pub fn lines(&self) -> String {
        let mut out = String::new();
        let d = &self.dataset;
        let _ = writeln!(out, "{d} images {}", self.images);
        let _ = writeln!(out, "{d} S {:.6}", self.smeasure);
        let _ = writeln!(out, "{d} F {}", self.fmeasure.map_or_else(|| "nan".to_string(), |f| format!("{f:.6}")));
        let _ = writeln!(out, "{d} E {:.6}", self.emeasure);
        let _ = writeln!(out, "{d} MAE {:.6}", self.mae);
        out
    }

    /// `threshold,precision,recall` rows with a header.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for (j, (p, r)) in self.pr.iter().enumerate() {
            let _ = writeln!(out, "{:.6},{p:.6},{r:.6}", pr_threshold(j));
        }
        out
    }
}

/// Aligned text table, one row per report.
pub fn table(reports: &[(String, MetricReport)]) -> String {
    let width = reports.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}\n", "variant", "S", "F", "E", "MAE");
    for (name, r) in reports {
        let _ = writeln!(
            out,
            "{name:<width$}  {:>6.4}  {:>6}  {:>6.4}  {:>6.4}",
            r.smeasure,
            fmt_opt(r.fmeasure),
            r.emeasure,
            r.mae
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: usize, w: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[h, w], v).unwrap()
    }

    #[test]
    fn perfect_prediction_scores() {
        let g = t(4, 4, &[0., 0., 1., 1., 0., 1., 1., 0., 0., 0., 1., 0., 1., 0., 0., 0.]);
        let s = score_image(&g, &g).unwrap();
        assert_eq!(s.mae, 0.0);
        assert_eq!(s.fmeasure, Some(1.0));
        assert!((s.smeasure - 1.0).abs() < 1e-6);
        assert_eq!(s.emeasure, 1.0);
    }

    #[test]
    fn constant_half_has_mae_half() {
        let g = t(2, 2, &[0., 1., 1., 1.]);
        assert_eq!(mae(&Tensor::full(&[2, 2], 0.5), &g).unwrap(), 0.5);
    }

    #[test]
    fn complement_has_zero_f() {
        let g = t(2, 2, &[0., 1., 1., 0.]);
        let c = t(2, 2, &[1., 0., 0., 1.]);
        assert_eq!(adaptive_fmeasure(&c, &g).unwrap(), Some(0.0));
    }

    #[test]
    fn empty_gt_leaves_f_undefined() {
        let g = Tensor::zeros(&[3, 3]);
        assert_eq!(adaptive_fmeasure(&Tensor::full(&[3, 3], 0.2), &g).unwrap(), None);
        let r = MetricReport::from_pairs("d", [(&g, &g)]).unwrap();
        assert_eq!(r.fmeasure, None);
        assert!(r.pr.is_empty());
        assert_eq!(r.mae, 0.0);
    }

    #[test]
    fn uniform_mean_prediction_is_structurally_worse() {
        let g = t(4, 4, &[0., 0., 0., 0., 0., 1., 1., 0., 0., 1., 1., 0., 0., 0., 0., 0.]);
        let u = Tensor::full(&[4, 4], 0.25);
        assert!(s_measure(&u, &g).unwrap() < s_measure(&g, &g).unwrap());
    }

    #[test]
    fn report_formats() {
        let g = t(2, 2, &[0., 1., 1., 0.]);
        let r = MetricReport::from_pairs("toy", [(&g, &g)]).unwrap();
        assert!(r.lines().contains("toy MAE 0.000000"));
        assert_eq!(r.pr_csv().lines().count(), 1 + PR_THRESHOLDS);
        assert!(table(&[("a".into(), r)]).contains("1.0000"));
    }
}
