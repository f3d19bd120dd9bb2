//! Choosing the representative frames per plot side that feed the fusion
//! regressor.
//!
//! Which frames a human rater would pick is not reproducible, so selection is
//! deterministic instead: `n` frames at evenly spaced interior positions of
//! the plot's frame interval,
//! `index_k = round(start + (end - start) * (k + 1) / (n + 1))`,
//! with round-half-up so results are bit-stable. Extra training samples come
//! from shifting the selected indices within the interval.

use std::collections::BTreeMap;

use crate::data::{PlotMeta, Side};
use crate::error::{Error, Result};

/// Frames chosen from one interval. `short_range` flags duplicate indices,
/// which appear when the interval holds fewer frames than requested.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFrames {
    pub indices: Vec<u64>,
    pub short_range: bool,
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

/// Pick `n` evenly spaced interior frames from `[start, end]`.
pub fn select_frames(start: u64, end: u64, n: usize) -> Result<SelectedFrames> {
    if start > end {
        return Err(Error::InvalidRange { start, end });
    }
    if n == 0 {
        return Err(Error::InvalidValue("cannot select 0 frames".into()));
    }
    let span = (end - start) as f64;
    let indices: Vec<u64> = (0..n)
        .map(|k| round_half_up(start as f64 + span * (k + 1) as f64 / (n + 1) as f64))
        .collect();
    let short_range = indices.windows(2).any(|w| w[0] == w[1]);
    Ok(SelectedFrames {
        indices,
        short_range,
    })
}

/// The frames feeding one regression sample: one or more views per side of
/// one plot. `sample_index` 0 is the base selection; higher indices are
/// shift-augmented variants sharing the plot's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub plot_id: String,
    pub sample_index: u32,
    /// (side, frame id) pairs, sides in canonical order, frames ascending.
    pub views: Vec<(Side, u64)>,
    pub views_per_side: usize,
    pub short_range: bool,
}

/// Augmentation control for [`build_view_sets`]: `factor` samples per plot
/// (1 = base selection only), each extra variant shifting by an alternating
/// multiple of `shift`, clamped into the interval.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub factor: u32,
    pub shift: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { factor: 1, shift: 1 }
    }
}

fn shift_for_sample(sample: u32, shift: u64) -> i64 {
    // 0, +s, -s, +2s, -2s, ...
    if sample == 0 {
        0
    } else if sample % 2 == 1 {
        ((sample as i64 + 1) / 2) * shift as i64
    } else {
        -((sample as i64) / 2) * shift as i64
    }
}

/// Build one `ViewSet` per plot (times the augmentation factor) from plot
/// metadata. Every plot must have a metadata row for each required side.
pub fn build_view_sets(
    plots: &[PlotMeta],
    n_per_side: usize,
    required_sides: &[Side],
    augment: &AugmentConfig,
) -> Result<Vec<ViewSet>> {
    if n_per_side == 0 {
        return Err(Error::InvalidValue("views per side must be >= 1".into()));
    }
    if augment.factor == 0 {
        return Err(Error::InvalidValue("augmentation factor must be >= 1".into()));
    }
    let mut sides = required_sides.to_vec();
    sides.sort();
    sides.dedup();
    if sides.is_empty() {
        return Err(Error::InvalidValue("no required sides".into()));
    }

    // Group rows by plot id, keeping first-appearance order of plots.
    let mut order: Vec<&str> = Vec::new();
    let mut by_plot: BTreeMap<&str, BTreeMap<Side, &PlotMeta>> = BTreeMap::new();
    for meta in plots {
        let entry = by_plot.entry(&meta.plot_id).or_insert_with(|| {
            order.push(&meta.plot_id);
            BTreeMap::new()
        });
        if entry.insert(meta.side, meta).is_some() {
            return Err(Error::InvalidValue(format!(
                "duplicate metadata for plot '{}' side {}",
                meta.plot_id, meta.side
            )));
        }
    }

    let mut out = Vec::with_capacity(order.len() * augment.factor as usize);
    for plot_id in order {
        let rows = &by_plot[plot_id];
        for side in &sides {
            if !rows.contains_key(side) {
                return Err(Error::MissingSide {
                    plot_id: plot_id.to_string(),
                    side: *side,
                });
            }
        }
        for sample in 0..augment.factor {
            let delta = shift_for_sample(sample, augment.shift);
            let mut views = Vec::with_capacity(sides.len() * n_per_side);
            let mut short_range = false;
            for side in &sides {
                let meta = rows[side];
                let selected = select_frames(meta.frame_start, meta.frame_end, n_per_side)?;
                short_range |= selected.short_range;
                for idx in selected.indices {
                    let shifted = (idx as i64 + delta)
                        .clamp(meta.frame_start as i64, meta.frame_end as i64)
                        as u64;
                    views.push((*side, shifted));
                }
            }
            out.push(ViewSet {
                plot_id: plot_id.to_string(),
                sample_index: sample,
                views,
                views_per_side: n_per_side,
                short_range,
            });
        }
    }
    Ok(out)
}

pub const VIEW_MANIFEST_HEADER: &str = "plot_id,side,frame_id,sample_index";

/// View-set manifest as delimited text, one row per view.
pub fn write_view_manifest(sets: &[ViewSet]) -> String {
    let mut out = String::from(VIEW_MANIFEST_HEADER);
    out.push('\n');
    for set in sets {
        for (side, frame) in &set.views {
            out.push_str(&format!(
                "{},{},{},{}\n",
                set.plot_id, side, frame, set.sample_index
            ));
        }
    }
    out
}

/// Rebuild view sets from a manifest. Rows belonging to one
/// (plot, sample_index) pair are collected in file order.
pub fn parse_view_manifest(text: &str) -> Result<Vec<ViewSet>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MalformedDocument("empty view manifest".into()))?;
    if header.trim() != VIEW_MANIFEST_HEADER {
        return Err(Error::MalformedDocument(format!(
            "expected header '{VIEW_MANIFEST_HEADER}', got '{}'",
            header.trim()
        )));
    }
    let mut order: Vec<(String, u32)> = Vec::new();
    let mut groups: BTreeMap<(String, u32), Vec<(Side, u64)>> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedLine {
                line: i + 1,
                msg: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let side: Side = fields[1].parse().map_err(|e| Error::MalformedLine {
            line: i + 1,
            msg: format!("{e}"),
        })?;
        let frame: u64 = fields[2].trim().parse().map_err(|_| Error::MalformedLine {
            line: i + 1,
            msg: format!("invalid frame id '{}'", fields[2]),
        })?;
        let sample: u32 = fields[3].trim().parse().map_err(|_| Error::MalformedLine {
            line: i + 1,
            msg: format!("invalid sample index '{}'", fields[3]),
        })?;
        let key = (fields[0].trim().to_string(), sample);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push((side, frame));
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let views = groups.remove(&key).unwrap();
            let n_sides = views
                .iter()
                .map(|(s, _)| *s)
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            let views_per_side = if n_sides > 0 { views.len() / n_sides } else { 0 };
            ViewSet {
                plot_id: key.0,
                sample_index: key.1,
                views,
                views_per_side,
                short_range: false,
            }
        })
        .collect())
}
