//! Deterministic synthetic field generator.
//!
//! A field is a row of non-overlapping plots, each holding a known number of
//! pods. A virtual camera window slides along the row at constant speed; each
//! plot is therefore visible for a contiguous, per-plot frame interval, and
//! those intervals are pairwise disjoint (the gap between consecutive plots
//! is always at least six frames, so a default-configured tracker retires one
//! plot before the next appears). Rendering a pass yields a clean
//! ground-truth detection stream and a noisy detector-like stream with
//! per-view pod occlusion, misses, centroid jitter, confidence sampling and
//! Poisson false positives. All randomness comes from named [`SplitMix64`]
//! streams derived from the field seed, so identical configs reproduce
//! identical outputs bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Detection, FrameRecord, PlotMeta, Side};
use crate::error::{Error, Result};
use crate::geometry::{centroid, BoundingBox};
use crate::rng::SplitMix64;

/// Field synthesis parameters. Count distribution defaults follow the
/// in-field training statistics (mean 599.9, deviation 196.60, truncated to
/// the observed 142..=1058 range); frame counts default to the observed
/// 11..=98 per plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub n_plots: usize,
    pub count_mean: f64,
    pub count_std: f64,
    pub count_min: u64,
    pub count_max: u64,
    /// Minimum pixel gap between consecutive plot extents.
    pub plot_spacing: f64,
    /// Camera advance per frame, pixels.
    pub pass_speed: f64,
    /// Inclusive range of frames a plot stays in view.
    pub frames_per_plot: (u64, u64),
    pub image_width: f64,
    pub image_height: f64,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            n_plots: 20,
            count_mean: 599.9,
            count_std: 196.60,
            count_min: 142,
            count_max: 1058,
            plot_spacing: 64.0,
            pass_speed: 32.0,
            frames_per_plot: (11, 98),
            image_width: 320.0,
            image_height: 240.0,
            seed: 0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.count_mean > 0.0) {
            return fail(format!("count mean {} must be > 0", self.count_mean));
        }
        if !(self.count_std >= 0.0) {
            return fail(format!("count std {} must be >= 0", self.count_std));
        }
        if self.count_min > self.count_max {
            return fail(format!(
                "count range [{}, {}] inverted",
                self.count_min, self.count_max
            ));
        }
        let (lo, hi) = self.frames_per_plot;
        if lo == 0 || lo > hi {
            return fail(format!("frames per plot range [{lo}, {hi}] invalid"));
        }
        if !(self.pass_speed > 0.0) {
            return fail(format!("pass speed {} must be > 0", self.pass_speed));
        }
        if !(self.plot_spacing >= 0.0) {
            return fail("plot spacing must be >= 0".into());
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return fail("image size must be positive".into());
        }
        if lo as f64 * self.pass_speed <= self.image_width {
            return fail(format!(
                "pass geometry degenerate: {} frames x {} px/frame must exceed the \
                 {} px window so plots have positive width",
                lo, self.pass_speed, self.image_width
            ));
        }
        Ok(())
    }
}

/// Detection confidence distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreModel {
    Constant { value: f64 },
    Beta { alpha: f64, beta: f64 },
}

impl ScoreModel {
    fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match self {
            ScoreModel::Constant { value } => *value,
            ScoreModel::Beta { alpha, beta } => rng.beta(*alpha, *beta),
        }
    }
}

/// Occlusion probability as a function of the view angle (0 = plot entering
/// the window, 1 = plot leaving it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OcclusionModel {
    Constant { fraction: f64 },
    /// Linear ramp from the central view outwards.
    AngleRamp { at_center: f64, at_edge: f64 },
}

impl OcclusionModel {
    fn at(&self, angle: f64) -> f64 {
        match self {
            OcclusionModel::Constant { fraction } => *fraction,
            OcclusionModel::AngleRamp { at_center, at_edge } => {
                at_center + (at_edge - at_center) * (2.0 * angle - 1.0).abs()
            }
        }
    }
}

/// Detector imperfection model for one rendered pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Probability that a visible, unoccluded pod yields no detection.
    pub miss_rate: f64,
    /// Expected spurious pod detections per frame (Poisson).
    pub false_positive_rate: f64,
    /// Standard deviation of centroid jitter, pixels.
    pub jitter_std: f64,
    pub score: ScoreModel,
    pub occlusion: OcclusionModel,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseModel {
    /// The identity model: the noisy stream reproduces the ground truth
    /// (with constant confidence 1.0 attached).
    pub fn none() -> Self {
        Self {
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            jitter_std: 0.0,
            score: ScoreModel::Constant { value: 1.0 },
            occlusion: OcclusionModel::Constant { fraction: 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return fail(format!("miss rate {} outside [0, 1]", self.miss_rate));
        }
        if !(self.false_positive_rate >= 0.0) {
            return fail("false positive rate must be >= 0".into());
        }
        if !(self.jitter_std >= 0.0) {
            return fail("jitter std must be >= 0".into());
        }
        match &self.score {
            ScoreModel::Constant { value } => {
                if !(0.0..=1.0).contains(value) {
                    return fail(format!("constant score {value} outside [0, 1]"));
                }
            }
            ScoreModel::Beta { alpha, beta } => {
                if !(*alpha > 0.0 && *beta > 0.0) {
                    return fail("beta score parameters must be positive".into());
                }
            }
        }
        let occ_ok = |p: f64| (0.0..=1.0).contains(&p);
        match &self.occlusion {
            OcclusionModel::Constant { fraction } if !occ_ok(*fraction) => {
                return fail(format!("occlusion fraction {fraction} outside [0, 1]"))
            }
            OcclusionModel::AngleRamp { at_center, at_edge }
                if !occ_ok(*at_center) || !occ_ok(*at_edge) =>
            {
                return fail("occlusion ramp endpoints outside [0, 1]".into())
            }
            _ => {}
        }
        Ok(())
    }
}

/// Static truth for one plot.
#[derive(Debug, Clone)]
pub struct PlotTruth {
    pub plot_id: String,
    pub true_pod_count: u64,
    /// Extent in field coordinates.
    pub extent: BoundingBox,
    /// Pod boxes in field coordinates.
    pub pods: Vec<BoundingBox>,
    /// Inclusive frame interval during which the plot is in view (identical
    /// for both pass directions).
    pub interval: (u64, u64),
}

/// A generated field: full knowledge of every plot and pod.
#[derive(Debug, Clone)]
pub struct SyntheticField {
    pub config: FieldConfig,
    pub plots: Vec<PlotTruth>,
}

/// Gap between consecutive plots, in frames: at least the configured pixel
/// spacing, and never fewer than 6 frames so a default tracker (expiry 5)
/// retires each plot before the next enters.
fn gap_frames(config: &FieldConfig) -> u64 {
    ((config.plot_spacing / config.pass_speed).ceil() as u64).max(6)
}

/// Generate a field deterministically from its config.
pub fn generate_field(config: &FieldConfig) -> Result<SyntheticField> {
    config.validate()?;
    let mut rng = SplitMix64::derive(config.seed, "field");
    let v = config.pass_speed;
    let w = config.image_width;
    let plot_y = 0.15 * config.image_height;
    let plot_h = 0.70 * config.image_height;
    let gap = gap_frames(config);

    let mut plots = Vec::with_capacity(config.n_plots);
    let mut start = 1u64;
    for i in 0..config.n_plots {
        let n_frames = rng.uniform_u64(config.frames_per_plot.0, config.frames_per_plot.1);
        let end = start + n_frames - 1;
        let left = (start - 1) as f64 * v + w + v / 2.0;
        let right = end as f64 * v + v / 2.0;
        let extent = BoundingBox::new(left, plot_y, right - left, plot_h)?;

        let count = rng
            .truncated_normal(
                config.count_mean,
                config.count_std,
                config.count_min as f64,
                config.count_max as f64,
            )
            .round() as u64;
        let mut pods = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let pw = rng.uniform(8.0, 16.0);
            let ph = rng.uniform(10.0, 22.0);
            let cx = rng.uniform(left + pw / 2.0, right - pw / 2.0);
            let cy = rng.uniform(plot_y + ph / 2.0, plot_y + plot_h - ph / 2.0);
            pods.push(BoundingBox::new(cx - pw / 2.0, cy - ph / 2.0, pw, ph)?);
        }
        plots.push(PlotTruth {
            plot_id: format!("plot_{i:03}"),
            true_pod_count: count,
            extent,
            pods,
            interval: (start, end),
        });
        start = end + 1 + gap;
    }
    Ok(SyntheticField {
        config: config.clone(),
        plots,
    })
}

/// Bookkeeping counters from one rendered pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RenderStats {
    /// Pod-frame pairs where the pod centroid was inside the window.
    pub in_view_pod_appearances: u64,
    pub occluded_appearances: u64,
    pub missed_appearances: u64,
    /// Noisy pod detections traced to a true pod.
    pub emitted_pod_detections: u64,
    /// Noisy pod detections with no underlying pod.
    pub spurious_detections: u64,
}

/// Output of one camera pass along one side of the field.
#[derive(Debug, Clone)]
pub struct RenderedPass {
    pub side: Side,
    pub noisy: Vec<FrameRecord>,
    pub truth: Vec<FrameRecord>,
    pub stats: RenderStats,
}

pub const PLOT_LABEL: &str = "Plot";
pub const POD_LABEL: &str = "Pod";

/// Render one pass. The truth stream carries every in-view plot and pod
/// unscored and unperturbed; the noisy stream applies the noise model and
/// attaches sampled confidences. Occlusion and detector noise are drawn
/// independently per side from side-tagged streams.
pub fn render_pass(
    field: &SyntheticField,
    side: Side,
    noise: &NoiseModel,
) -> Result<RenderedPass> {
    if !matches!(side, Side::A | Side::B) {
        return Err(Error::InvalidValue(format!(
            "field passes are two-sided; side {side} is not rendered"
        )));
    }
    noise.validate()?;
    let config = &field.config;
    let mut rng = SplitMix64::derive(config.seed, &format!("render:{side}"));
    let v = config.pass_speed;
    let w = config.image_width;

    let last_frame = field.plots.last().map(|p| p.interval.1).unwrap_or(0);
    let mut noisy = Vec::new();
    let mut truth = Vec::new();
    let mut stats = RenderStats::default();

    if field.plots.is_empty() {
        return Ok(RenderedPass {
            side,
            noisy,
            truth,
            stats,
        });
    }

    for frame in 0..=last_frame {
        let window_left = frame as f64 * v;
        let window_right = window_left + w;
        let mut truth_dets: Vec<Detection> = Vec::new();
        let mut noisy_dets: Vec<Detection> = Vec::new();

        for plot in &field.plots {
            let (s, e) = plot.interval;
            if frame < s || frame > e {
                continue;
            }
            // Plot box clipped to the window, in window coordinates.
            let left = plot.extent.x().max(window_left);
            let right = plot.extent.right().min(window_right);
            let plot_box = BoundingBox::new(
                left - window_left,
                plot.extent.y(),
                right - left,
                plot.extent.h(),
            )?;
            truth_dets.push(Detection::ground_truth(plot_box, PLOT_LABEL));
            noisy_dets.push(Detection::scored(plot_box, noise.score.sample(&mut rng), PLOT_LABEL)?);

            let angle = if e > s {
                (frame - s) as f64 / (e - s) as f64
            } else {
                0.5
            };
            let occ = noise.occlusion.at(angle);
            for pod in &plot.pods {
                let c = centroid(pod);
                if c.x < window_left || c.x >= window_right {
                    continue;
                }
                stats.in_view_pod_appearances += 1;
                let local = pod.translated(-window_left, 0.0)?;
                truth_dets.push(Detection::ground_truth(local, POD_LABEL));

                if occ > 0.0 && rng.bernoulli(occ) {
                    stats.occluded_appearances += 1;
                    continue;
                }
                if noise.miss_rate > 0.0 && rng.bernoulli(noise.miss_rate) {
                    stats.missed_appearances += 1;
                    continue;
                }
                let jittered = if noise.jitter_std > 0.0 {
                    local.translated(
                        rng.normal(0.0, noise.jitter_std),
                        rng.normal(0.0, noise.jitter_std),
                    )?
                } else {
                    local
                };
                noisy_dets.push(Detection::scored(
                    jittered,
                    noise.score.sample(&mut rng),
                    POD_LABEL,
                )?);
                stats.emitted_pod_detections += 1;
            }
        }

        if noise.false_positive_rate > 0.0 {
            let k = rng.poisson(noise.false_positive_rate);
            for _ in 0..k {
                let pw = rng.uniform(8.0, 16.0);
                let ph = rng.uniform(10.0, 22.0);
                let x = rng.uniform(0.0, w - pw);
                let y = rng.uniform(0.0, config.image_height - ph);
                noisy_dets.push(Detection::scored(
                    BoundingBox::new(x, y, pw, ph)?,
                    noise.score.sample(&mut rng),
                    POD_LABEL,
                )?);
                stats.spurious_detections += 1;
            }
        }

        truth.push(FrameRecord {
            frame_id: frame,
            detections: truth_dets,
        });
        noisy.push(FrameRecord {
            frame_id: frame,
            detections: noisy_dets,
        });
    }

    Ok(RenderedPass {
        side,
        noisy,
        truth,
        stats,
    })
}

/// Truth exported in the pipeline's own file formats.
#[derive(Debug, Clone)]
pub struct ExportedTruth {
    /// One metadata row per plot per side (A and B).
    pub metadata: Vec<PlotMeta>,
    /// Pod annotation boxes per plot id, in plot-local coordinates.
    pub annotations: BTreeMap<String, Vec<Detection>>,
}

/// Export plot metadata and pod annotations for a generated field.
pub fn export_truth(field: &SyntheticField) -> Result<ExportedTruth> {
    let mut metadata = Vec::with_capacity(field.plots.len() * 2);
    let mut annotations = BTreeMap::new();
    for plot in &field.plots {
        for side in [Side::A, Side::B] {
            metadata.push(PlotMeta::new(
                &plot.plot_id,
                side,
                plot.interval.0,
                plot.interval.1,
                plot.true_pod_count,
            )?);
        }
        let local: Vec<Detection> = plot
            .pods
            .iter()
            .map(|p| {
                p.translated(-plot.extent.x(), -plot.extent.y())
                    .map(|b| Detection::ground_truth(b, POD_LABEL))
            })
            .collect::<Result<_>>()?;
        annotations.insert(plot.plot_id.clone(), local);
    }
    Ok(ExportedTruth {
        metadata,
        annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats;

    #[test]
    fn empty_field() {
        let config = FieldConfig {
            n_plots: 0,
            ..FieldConfig::default()
        };
        let field = generate_field(&config).unwrap();
        assert!(field.plots.is_empty());
        let pass = render_pass(&field, Side::A, &NoiseModel::none()).unwrap();
        assert!(pass.noisy.is_empty());
        assert!(pass.truth.is_empty());
    }

    #[test]
    fn same_seed_identical_fields_and_passes() {
        let config = FieldConfig {
            n_plots: 5,
            seed: 11,
            ..FieldConfig::default()
        };
        let f1 = generate_field(&config).unwrap();
        let f2 = generate_field(&config).unwrap();
        for (a, b) in f1.plots.iter().zip(f2.plots.iter()) {
            assert_eq!(a.true_pod_count, b.true_pod_count);
            assert_eq!(a.extent, b.extent);
            assert_eq!(a.pods, b.pods);
            assert_eq!(a.interval, b.interval);
        }
        let noise = NoiseModel {
            miss_rate: 0.2,
            false_positive_rate: 1.0,
            jitter_std: 1.5,
            score: ScoreModel::Beta { alpha: 8.0, beta: 2.0 },
            occlusion: OcclusionModel::Constant { fraction: 0.3 },
        };
        let p1 = render_pass(&f1, Side::A, &noise).unwrap();
        let p2 = render_pass(&f2, Side::A, &noise).unwrap();
        assert_eq!(
            formats::write_detections(&p1.noisy),
            formats::write_detections(&p2.noisy)
        );
        assert_eq!(p1.stats, p2.stats);
    }

    #[test]
    fn sides_draw_independent_noise() {
        let config = FieldConfig {
            n_plots: 3,
            seed: 12,
            ..FieldConfig::default()
        };
        let field = generate_field(&config).unwrap();
        let noise = NoiseModel {
            occlusion: OcclusionModel::Constant { fraction: 0.4 },
            ..NoiseModel::none()
        };
        let a = render_pass(&field, Side::A, &noise).unwrap();
        let b = render_pass(&field, Side::B, &noise).unwrap();
        // Same truth geometry, different occlusion draws.
        assert_eq!(
            formats::write_detections(&a.truth),
            formats::write_detections(&b.truth)
        );
        assert_ne!(
            formats::write_detections(&a.noisy),
            formats::write_detections(&b.noisy)
        );
    }

    #[test]
    fn truncated_counts_respect_bounds_and_mean() {
        let config = FieldConfig {
            n_plots: 500,
            seed: 1234,
            ..FieldConfig::default()
        };
        let field = generate_field(&config).unwrap();
        let counts: Vec<u64> = field.plots.iter().map(|p| p.true_pod_count).collect();
        assert!(counts.iter().all(|&c| (142..=1058).contains(&c)));
        let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
        let se = 196.60 / (500f64).sqrt();
        assert!(
            (mean - 599.9).abs() < 3.0 * se,
            "mean {mean} vs 599.9 +- {}",
            3.0 * se
        );
    }

    #[test]
    fn plot_extents_disjoint_and_intervals_match_visibility() {
        let config = FieldConfig {
            n_plots: 10,
            seed: 5,
            ..FieldConfig::default()
        };
        let field = generate_field(&config).unwrap();
        for pair in field.plots.windows(2) {
            assert!(pair[0].extent.right() < pair[1].extent.x());
            assert!(pair[0].interval.1 < pair[1].interval.0);
        }
        // Visibility window math: plot in view exactly during its interval.
        let v = config.pass_speed;
        let w = config.image_width;
        for plot in &field.plots {
            let (s, e) = plot.interval;
            let visible = |f: u64| {
                let wl = f as f64 * v;
                plot.extent.x() < wl + w && plot.extent.right() > wl
            };
            assert!(visible(s));
            assert!(visible(e));
            assert!(!visible(s - 1));
            assert!(!visible(e + 1));
        }
    }

    #[test]
    fn zero_noise_stream_matches_truth() {
        let config = FieldConfig {
            n_plots: 4,
            seed: 21,
            ..FieldConfig::default()
        };
        let field = generate_field(&config).unwrap();
        let pass = render_pass(&field, Side::A, &NoiseModel::none()).unwrap();
        assert_eq!(pass.noisy.len(), pass.truth.len());
        for (n, t) in pass.noisy.iter().zip(pass.truth.iter()) {
            assert_eq!(n.frame_id, t.frame_id);
            assert_eq!(n.detections.len(), t.detections.len());
            for (nd, td) in n.detections.iter().zip(t.detections.iter()) {
                assert_eq!(nd.bbox, td.bbox);
                assert_eq!(nd.label, td.label);
                assert_eq!(nd.score, Some(1.0));
                assert_eq!(td.score, None);
            }
        }
        assert_eq!(pass.stats.emitted_pod_detections, pass.stats.in_view_pod_appearances);
    }

    #[test]
    fn full_miss_rate_drops_all_pods_keeps_plots() {
        let config = FieldConfig {
            n_plots: 3,
            seed: 22,
            ..FieldConfig::default()
        };
        let field = generate_field(&config).unwrap();
        let noise = NoiseModel {
            miss_rate: 1.0,
            ..NoiseModel::none()
        };
        let pass = render_pass(&field, Side::A, &noise).unwrap();
        let mut saw_plot = false;
        for frame in &pass.noisy {
            for det in &frame.detections {
                assert_eq!(det.label, PLOT_LABEL);
                saw_plot = true;
            }
        }
        assert!(saw_plot);
        assert_eq!(pass.stats.emitted_pod_detections, 0);
    }

    #[test]
    fn miss_rate_binomial_bound() {
        let config = FieldConfig {
            n_plots: 1,
            count_mean: 600.0,
            count_std: 0.0,
            seed: 23,
            frames_per_plot: (20, 20),
            ..FieldConfig::default()
        };
        let field = generate_field(&config).unwrap();
        let noise = NoiseModel {
            miss_rate: 0.2,
            ..NoiseModel::none()
        };
        let pass = render_pass(&field, Side::A, &noise).unwrap();
        let n = pass.stats.in_view_pod_appearances as f64;
        let expected = 0.8 * n;
        let sigma = (n * 0.2 * 0.8).sqrt();
        let got = pass.stats.emitted_pod_detections as f64;
        assert!(
            (got - expected).abs() < 3.0 * sigma,
            "emitted {got}, expected {expected} +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn export_roundtrip_recovers_counts() {
        let config = FieldConfig {
            n_plots: 6,
            seed: 31,
            ..FieldConfig::default()
        };
        let field = generate_field(&config).unwrap();
        let truth = export_truth(&field).unwrap();
        assert_eq!(truth.metadata.len(), 12); // one row per plot per side

        let meta_text = formats::write_plot_meta(&truth.metadata);
        let parsed = formats::parse_plot_meta(&meta_text).unwrap();
        for plot in &field.plots {
            for side in [Side::A, Side::B] {
                let row = parsed
                    .iter()
                    .find(|m| m.plot_id == plot.plot_id && m.side == side)
                    .unwrap();
                assert_eq!(row.ground_truth_pods, plot.true_pod_count);
                assert_eq!((row.frame_start, row.frame_end), plot.interval);
            }
        }

        let ann_text = formats::write_annotations(&truth.annotations);
        let parsed = formats::parse_annotations(&ann_text).unwrap();
        for plot in &field.plots {
            assert_eq!(
                parsed.images[&plot.plot_id].len() as u64,
                plot.true_pod_count
            );
        }
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let config = FieldConfig {
            frames_per_plot: (5, 10),
            pass_speed: 32.0,
            image_width: 320.0,
            ..FieldConfig::default()
        };
        assert!(matches!(
            generate_field(&config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn non_pass_side_rejected() {
        let field = generate_field(&FieldConfig {
            n_plots: 1,
            ..FieldConfig::default()
        })
        .unwrap();
        assert!(render_pass(&field, Side::Front, &NoiseModel::none()).is_err());
    }
}
