//! Breeding-decision analytics: correlation between ground-truth and
//! predicted counts, and top-fraction selection quality.
//!
//! Selection treats the task as binary retrieval: with `k = floor(p * N)`,
//! the actual positives are the k highest ground-truth plots and the
//! predicted positives the k highest predicted plots (ties broken toward the
//! lower index, so constant predictions are still well defined). By
//! construction `tp + fn == k` and `tp + fp == k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::ZeroVariance);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Average ranks (1-based); tied values share the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average-rank transforms.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Confusion counts for one selection cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: u64,
    pub true_negative: u64,
    pub false_positive: u64,
    pub false_negative: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positive + self.true_negative + self.false_positive + self.false_negative
    }
}

/// Indices of the k largest values, ties toward the lower index.
fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Confusion counts for selecting the top fraction `p` of plots by predicted
/// count, judged against the top fraction by ground truth.
pub fn top_fraction_selection(gt: &[f64], pred: &[f64], p: f64) -> Result<ConfusionCounts> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch(gt.len(), pred.len()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidValue(format!("cutoff {p} outside (0, 1)")));
    }
    let n = gt.len();
    let k = (p * n as f64).floor() as usize;
    if k == 0 {
        return Err(Error::DegenerateCutoff);
    }
    let actual: std::collections::BTreeSet<usize> = top_k_indices(gt, k).into_iter().collect();
    let predicted: std::collections::BTreeSet<usize> = top_k_indices(pred, k).into_iter().collect();
    let tp = actual.intersection(&predicted).count() as u64;
    let fp = predicted.difference(&actual).count() as u64;
    let fn_count = actual.difference(&predicted).count() as u64;
    let tn = n as u64 - tp - fp - fn_count;
    Ok(ConfusionCounts {
        true_positive: tp,
        true_negative: tn,
        false_positive: fp,
        false_negative: fn_count,
    })
}

/// (accuracy, sensitivity, specificity) from confusion counts.
pub fn classification_metrics(c: &ConfusionCounts) -> Result<(f64, f64, f64)> {
    if c.true_positive + c.false_negative == 0 {
        return Err(Error::UndefinedMetric("no actual positives"));
    }
    if c.true_negative + c.false_positive == 0 {
        return Err(Error::UndefinedMetric("no actual negatives"));
    }
    let n = c.total() as f64;
    let accuracy = (c.true_positive + c.true_negative) as f64 / n;
    let sensitivity =
        c.true_positive as f64 / (c.true_positive + c.false_negative) as f64;
    let specificity =
        c.true_negative as f64 / (c.true_negative + c.false_positive) as f64;
    Ok((accuracy, sensitivity, specificity))
}

/// Round to two decimals, half away from zero — the convention used when
/// comparing against published tables.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Metrics for one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub cutoff: f64,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Correlations plus per-cutoff selection metrics. A correlation of `None`
/// means the input was degenerate (zero variance); selection metrics are
/// still computed in that case via the stable tie-break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub cutoffs: Vec<CutoffMetrics>,
}

/// Full ranking analysis of predicted against ground-truth counts.
pub fn ranking_report(gt: &[f64], pred: &[f64], cutoffs: &[f64]) -> Result<RankingReport> {
    let absorb_degenerate = |r: Result<f64>| -> Result<Option<f64>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::ZeroVariance) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let pearson_r = absorb_degenerate(pearson(gt, pred))?;
    let spearman_rho = absorb_degenerate(spearman(gt, pred))?;
    let mut rows = Vec::with_capacity(cutoffs.len());
    for &p in cutoffs {
        let counts = top_fraction_selection(gt, pred, p)?;
        let (accuracy, sensitivity, specificity) = classification_metrics(&counts)?;
        rows.push(CutoffMetrics {
            cutoff: p,
            counts,
            accuracy,
            sensitivity,
            specificity,
        });
    }
    Ok(RankingReport {
        pearson_r,
        spearman_rho,
        cutoffs: rows,
    })
}

/// Table layout mirroring published ranking tables: one column per
/// (model, cutoff) pair, metric names down the rows.
pub fn metrics_table_csv(columns: &[(String, CutoffMetrics)]) -> String {
    let mut out = String::from("metric");
    for (name, m) in columns {
        out.push_str(&format!(",{} top {:.0}%", name, m.cutoff * 100.0));
    }
    out.push('\n');
    let rows: [(&str, Box<dyn Fn(&CutoffMetrics) -> String>); 7] = [
        ("true_positive", Box::new(|m| m.counts.true_positive.to_string())),
        ("true_negative", Box::new(|m| m.counts.true_negative.to_string())),
        ("false_positive", Box::new(|m| m.counts.false_positive.to_string())),
        ("false_negative", Box::new(|m| m.counts.false_negative.to_string())),
        ("accuracy", Box::new(|m| format!("{:.2}", round2(m.accuracy)))),
        ("sensitivity", Box::new(|m| format!("{:.2}", round2(m.sensitivity)))),
        ("specificity", Box::new(|m| format!("{:.2}", round2(m.specificity)))),
    ];
    for (name, fmt) in rows {
        out.push_str(name);
        for (_, m) in columns {
            out.push(',');
            out.push_str(&fmt(m));
        }
        out.push('\n');
    }
    out
}

/// Report file for a single model run: correlations then the cutoff table.
pub fn ranking_report_csv(model: &str, report: &RankingReport) -> String {
    let fmt_corr = |v: Option<f64>| match v {
        Some(v) => format!("{v:.6}"),
        None => "undefined".to_string(),
    };
    let mut out = format!(
        "model,pearson_r,spearman_rho\n{model},{},{}\n\n",
        fmt_corr(report.pearson_r),
        fmt_corr(report.spearman_rho)
    );
    let columns: Vec<(String, CutoffMetrics)> = report
        .cutoffs
        .iter()
        .map(|m| (model.to_string(), *m))
        .collect();
    out.push_str(&metrics_table_csv(&columns));
    out
}

/// Scatter plot of ground truth vs prediction as a standalone SVG document,
/// with axes, the identity line and a least-squares fitted line.
pub fn scatter_svg(gt: &[f64], pred: &[f64], title: &str) -> Result<String> {
    if gt.len() != pred.len() {
        return Err(Error::LengthMismatch(gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (width, height, margin) = (480.0, 480.0, 56.0);
    let lo = gt
        .iter()
        .chain(pred.iter())
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = gt
        .iter()
        .chain(pred.iter())
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (lo, hi) = (lo - 0.05 * span, hi + 0.05 * span);
    let scale_x = |v: f64| margin + (v - lo) / (hi - lo) * (width - 2.0 * margin);
    let scale_y = |v: f64| height - margin - (v - lo) / (hi - lo) * (height - 2.0 * margin);

    let mut svg = format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n"
        ),
        w = width,
        h = height,
        tx = width / 2.0,
        title = title
    );
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin,
    ));
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let (x, y) = (scale_x(v), scale_y(v));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{by}\" text-anchor=\"middle\" font-size=\"10\">{v:.0}</text>\n\
             <text x=\"{lx}\" y=\"{y:.1}\" text-anchor=\"end\" font-size=\"10\">{v:.0}</text>\n",
            by = height - margin + 16.0,
            lx = margin - 6.0,
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{cx}\" y=\"{by}\" text-anchor=\"middle\" font-size=\"12\">ground truth pods</text>\n\
         <text x=\"16\" y=\"{cy}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 16 {cy})\">predicted pods</text>\n",
        cx = width / 2.0,
        by = height - 12.0,
        cy = height / 2.0,
    ));
    // identity line
    svg.push_str(&format!(
        "<line x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" \
         stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
        x1 = scale_x(lo),
        y1 = scale_y(lo),
        x2 = scale_x(hi),
        y2 = scale_y(hi),
    ));
    // least-squares fit of pred on gt
    let n = gt.len() as f64;
    let mx = gt.iter().sum::<f64>() / n;
    let my = pred.iter().sum::<f64>() / n;
    let sxy: f64 = gt
        .iter()
        .zip(pred.iter())
        .map(|(&a, &b)| (a - mx) * (b - my))
        .sum();
    let sxx: f64 = gt.iter().map(|&a| (a - mx) * (a - mx)).sum();
    if sxx > 0.0 {
        let slope = sxy / sxx;
        let at = |x: f64| my + slope * (x - mx);
        svg.push_str(&format!(
            "<line x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" stroke=\"blue\"/>\n",
            x1 = scale_x(lo),
            y1 = scale_y(at(lo)),
            x2 = scale_x(hi),
            y2 = scale_y(at(hi)),
        ));
    }
    for (&x, &y) in gt.iter().zip(pred.iter()) {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"seagreen\" fill-opacity=\"0.7\"/>\n",
            scale_x(x),
            scale_y(y)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn pearson_perfect() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(pearson(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_relative_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_hand_computed() {
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_relative_eq!(r, 3.0 / (2.0f64 * 14.0 / 3.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(r, 0.9820, epsilon = 1e-4);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn spearman_monotone() {
        let x = vec![1.0, 4.0, 9.0, 16.0];
        let y: Vec<f64> = x.iter().map(|v| v.sqrt() + 100.0).collect();
        assert_relative_eq!(spearman(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
        let rev: Vec<f64> = y.iter().rev().copied().collect();
        assert_relative_eq!(spearman(&x, &rev).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn spearman_with_ties() {
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_relative_eq!(rho, 4.5 / (4.5f64 * 5.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(rho, 0.9487, epsilon = 1e-4);
    }

    #[test]
    fn selection_perfect_predictor() {
        let gt: Vec<f64> = (1..=10).map(f64::from).collect();
        let c = top_fraction_selection(&gt, &gt, 0.3).unwrap();
        assert_eq!((c.false_positive, c.false_negative), (0, 0));
        let (_, sens, _) = classification_metrics(&c).unwrap();
        assert_eq!(sens, 1.0);
    }

    #[test]
    fn selection_in_field_k_values() {
        let gt: Vec<f64> = (0..44).map(f64::from).collect();
        let pred: Vec<f64> = (0..44).map(|i| f64::from((i * 13) % 44)).collect();
        for (p, k) in [(0.2, 8u64), (0.3, 13u64)] {
            let c = top_fraction_selection(&gt, &pred, p).unwrap();
            assert_eq!(c.true_positive + c.false_negative, k);
            assert_eq!(c.true_positive + c.false_positive, k);
            assert_eq!(c.total(), 44);
        }
    }

    #[test]
    fn selection_reversed_predictor() {
        let gt: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        let pred: Vec<f64> = (1..=10).map(f64::from).collect();
        let c = top_fraction_selection(&gt, &pred, 0.3).unwrap();
        assert_eq!(
            (c.true_positive, c.false_positive, c.false_negative, c.true_negative),
            (0, 3, 3, 4)
        );
    }

    #[test]
    fn selection_degenerate_cutoff() {
        let v = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            top_fraction_selection(&v, &v, 0.2),
            Err(Error::DegenerateCutoff)
        ));
    }

    #[test]
    fn metrics_from_published_counts() {
        // in-field, one image per side, top 20%
        let c = ConfusionCounts {
            true_positive: 3,
            true_negative: 31,
            false_positive: 5,
            false_negative: 5,
        };
        let (acc, sens, spec) = classification_metrics(&c).unwrap();
        assert_relative_eq!(acc, 0.7727, epsilon = 1e-4);
        assert_relative_eq!(sens, 0.3750, epsilon = 1e-4);
        assert_relative_eq!(spec, 0.8611, epsilon = 1e-4);
        assert_eq!(
            (round2(acc), round2(sens), round2(spec)),
            (0.77, 0.38, 0.86)
        );

        // control, one image, top 20%
        let c = ConfusionCounts {
            true_positive: 7,
            true_negative: 37,
            false_positive: 3,
            false_negative: 4,
        };
        let (acc, sens, spec) = classification_metrics(&c).unwrap();
        assert_eq!(
            (round2(acc), round2(sens), round2(spec)),
            (0.86, 0.64, 0.93)
        );

        // in-field, three images per side, top 30%
        let c = ConfusionCounts {
            true_positive: 9,
            true_negative: 27,
            false_positive: 4,
            false_negative: 4,
        };
        let (acc, sens, spec) = classification_metrics(&c).unwrap();
        assert_eq!(
            (round2(acc), round2(sens), round2(spec)),
            (0.82, 0.69, 0.87)
        );
    }

    #[test]
    fn undefined_metric_errors() {
        let c = ConfusionCounts {
            true_positive: 0,
            true_negative: 3,
            false_positive: 0,
            false_negative: 0,
        };
        assert!(matches!(
            classification_metrics(&c),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn report_perfect_and_degenerate() {
        let gt: Vec<f64> = (1..=20).map(f64::from).collect();
        let r = ranking_report(&gt, &gt, &[0.2, 0.3]).unwrap();
        assert_eq!(r.pearson_r, Some(1.0));
        assert_eq!(r.cutoffs.len(), 2);
        assert!(r.cutoffs.iter().all(|c| c.sensitivity == 1.0));

        let constant = vec![5.0; 20];
        let r = ranking_report(&gt, &constant, &[0.2]).unwrap();
        assert_eq!(r.pearson_r, None);
        assert_eq!(r.spearman_rho, None);
        // stable tie-break selects the first k indices
        assert_eq!(r.cutoffs[0].counts.true_positive + r.cutoffs[0].counts.false_positive, 4);
    }

    #[test]
    fn csv_layout() {
        let gt: Vec<f64> = (1..=10).map(f64::from).collect();
        let report = ranking_report(&gt, &gt, &[0.2, 0.3]).unwrap();
        let csv = ranking_report_csv("1-view", &report);
        assert!(csv.contains("pearson_r"));
        assert!(csv.lines().any(|l| l.starts_with("sensitivity")));
        let table_header = csv
            .lines()
            .find(|l| l.starts_with("metric"))
            .unwrap();
        assert!(table_header.contains("top 20%"));
        assert!(table_header.contains("top 30%"));
    }

    #[test]
    fn scatter_svg_contains_points() {
        let gt = vec![100.0, 200.0, 300.0];
        let pred = vec![110.0, 190.0, 310.0];
        let svg = scatter_svg(&gt, &pred, "test").unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("stroke-dasharray"));
    }

    proptest! {
        // Pearson is invariant under positive affine maps; Spearman under
        // strictly monotone maps; top-k selection under strictly increasing
        // transforms of the prediction.
        #[test]
        fn correlation_invariances(
            pairs in proptest::collection::vec((0.0..1000.0f64, 0.0..1000.0f64), 4..30),
            a in 0.1..5.0f64, b in -100.0..100.0f64,
        ) {
            let gt: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(pearson(&gt, &pred).is_ok());
            let scaled: Vec<f64> = pred.iter().map(|v| a * v + b).collect();
            let r0 = pearson(&gt, &pred).unwrap();
            let r1 = pearson(&gt, &scaled).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-9);

            let warped: Vec<f64> = pred.iter().map(|v| (v + 1.0).ln()).collect();
            let s0 = spearman(&gt, &pred).unwrap();
            let s1 = spearman(&gt, &warped).unwrap();
            prop_assert!((s0 - s1).abs() < 1e-9);

            let c0 = top_fraction_selection(&gt, &pred, 0.3).unwrap();
            let c1 = top_fraction_selection(&gt, &warped, 0.3).unwrap();
            prop_assert_eq!(c0, c1);
        }

        // k-set identities hold for every input.
        #[test]
        fn selection_count_identities(
            pairs in proptest::collection::vec((0.0..1000.0f64, 0.0..1000.0f64), 5..40),
            p in 0.1..0.9f64,
        ) {
            let gt: Vec<f64> = pairs.iter().map(|q| q.0).collect();
            let pred: Vec<f64> = pairs.iter().map(|q| q.1).collect();
            let n = gt.len();
            let k = (p * n as f64).floor() as u64;
            prop_assume!(k >= 1);
            let c = top_fraction_selection(&gt, &pred, p).unwrap();
            prop_assert_eq!(c.true_positive + c.false_negative, k);
            prop_assert_eq!(c.true_positive + c.false_positive, k);
            prop_assert_eq!(c.total(), n as u64);
        }
    }
}
