//! Dataset containers and descriptive statistics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Camera side a plot was filmed from. Field passes use `A`/`B`; staged
/// single-plot captures use `Front`/`Left`/`Right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
    Front,
    Left,
    Right,
}

impl Side {
    pub const ALL: [Side; 5] = [Side::A, Side::B, Side::Front, Side::Left, Side::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            Side::A => "A",
            Side::B => "B",
            Side::Front => "FRONT",
            Side::Left => "LEFT",
            Side::Right => "RIGHT",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Side::A),
            "B" => Ok(Side::B),
            "FRONT" => Ok(Side::Front),
            "LEFT" => Ok(Side::Left),
            "RIGHT" => Ok(Side::Right),
            other => Err(Error::InvalidValue(format!("unknown side '{other}'"))),
        }
    }
}

/// One detector output or ground-truth annotation. Ground truth carries no
/// score; evaluation code rejects unscored boxes where predictions are
/// expected.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: Option<f64>,
    pub label: String,
}

impl Detection {
    /// A scored detector output. The score must lie in [0, 1].
    pub fn scored(bbox: BoundingBox, score: f64, label: impl Into<String>) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidValue(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            score: Some(score),
            label: label.into(),
        })
    }

    /// An unscored ground-truth annotation.
    pub fn ground_truth(bbox: BoundingBox, label: impl Into<String>) -> Self {
        Self {
            bbox,
            score: None,
            label: label.into(),
        }
    }
}

/// All detections of one video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub detections: Vec<Detection>,
}

/// Expert-determined frame interval and manual pod count for one plot side.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotMeta {
    pub plot_id: String,
    pub side: Side,
    pub frame_start: u64,
    pub frame_end: u64,
    pub ground_truth_pods: u64,
}

impl PlotMeta {
    pub fn new(
        plot_id: impl Into<String>,
        side: Side,
        frame_start: u64,
        frame_end: u64,
        ground_truth_pods: u64,
    ) -> Result<Self> {
        if frame_start > frame_end {
            return Err(Error::InvalidRange {
                start: frame_start,
                end: frame_end,
            });
        }
        Ok(Self {
            plot_id: plot_id.into(),
            side,
            frame_start,
            frame_end,
            ground_truth_pods,
        })
    }
}

/// Min/max/mean and both standard-deviation conventions for a set of counts.
/// Both deviations are reported because published tables rarely state which
/// denominator they used; `std_sample` divides by n-1, `std_population` by n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std_sample: f64,
    pub std_population: f64,
}

/// Descriptive statistics over pod counts. Errors on empty input. For a
/// single observation the sample deviation is reported as 0.
pub fn dataset_stats(counts: &[u64]) -> Result<DatasetStats> {
    if counts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = counts.len();
    let min = *counts.iter().min().unwrap() as f64;
    let max = *counts.iter().max().unwrap() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
    let ss: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum();
    let std_population = (ss / n as f64).sqrt();
    let std_sample = if n > 1 {
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(DatasetStats {
        n,
        min,
        max,
        mean,
        std_sample,
        std_population,
    })
}
