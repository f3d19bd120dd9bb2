//! Per-view feature grids for the pod-count regressor.
//!
//! The built-in featurizer rasterizes a frame's scored detections onto a
//! coarse cell grid (three channels: centroid counts, mean confidence, mean
//! normalized box area). Grids computed elsewhere — e.g. activation maps
//! dumped from a trained detector backbone — can be loaded from the grid
//! file format with arbitrary channel count and resolution.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::Detection;
use crate::error::{Error, Result};
use crate::geometry::centroid;

/// A channels x height x width grid of finite 32-bit values, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "grid {channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(pos));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Sum over one channel.
    pub fn channel_sum(&self, c: usize) -> f64 {
        let plane = self.height * self.width;
        self.data[c * plane..(c + 1) * plane]
            .iter()
            .map(|&v| f64::from(v))
            .sum()
    }
}

/// Rasterize scored detections into a 3-channel grid:
/// channel 0 counts detection centroids per cell, channel 1 holds the mean
/// confidence of occupied cells, channel 2 the mean box area normalized by
/// the image area. Centroids outside the image are clamped to the border
/// cells.
pub fn detection_heatmap(
    detections: &[Detection],
    image_size: (f64, f64),
    grid_size: (usize, usize),
) -> Result<FeatureGrid> {
    let (img_w, img_h) = image_size;
    let (grid_w, grid_h) = grid_size;
    if !(img_w > 0.0 && img_h > 0.0) {
        return Err(Error::InvalidValue(format!(
            "image size {img_w}x{img_h} must be positive"
        )));
    }
    if grid_w == 0 || grid_h == 0 {
        return Err(Error::InvalidValue("grid size must be positive".into()));
    }

    let mut grid = FeatureGrid::zeros(3, grid_h, grid_w);
    let mut score_sum = vec![0.0f64; grid_h * grid_w];
    let mut area_sum = vec![0.0f64; grid_h * grid_w];

    for det in detections {
        let score = det.score.ok_or(Error::UnscoredDetection)?;
        let c = centroid(&det.bbox);
        let cx = ((c.x / img_w * grid_w as f64).floor() as i64).clamp(0, grid_w as i64 - 1) as usize;
        let cy = ((c.y / img_h * grid_h as f64).floor() as i64).clamp(0, grid_h as i64 - 1) as usize;
        let cell = cy * grid_w + cx;
        grid.set(0, cy, cx, grid.get(0, cy, cx) + 1.0);
        score_sum[cell] += score;
        area_sum[cell] += det.bbox.area() / (img_w * img_h);
    }

    for y in 0..grid_h {
        for x in 0..grid_w {
            let count = f64::from(grid.get(0, y, x));
            if count > 0.0 {
                let cell = y * grid_w + x;
                grid.set(1, y, x, (score_sum[cell] / count) as f32);
                grid.set(2, y, x, (area_sum[cell] / count) as f32);
            }
        }
    }
    Ok(grid)
}

const GRID_MAGIC: &[u8; 4] = b"FGRD";
const GRID_TEXT_MAGIC: &str = "fgrid";

/// Write a grid in the binary format: magic `FGRD`, then four little-endian
/// u32 words (channels, height, width, element count), then the elements as
/// little-endian f32 in channel-major order.
pub fn write_feature_grid(mut w: impl Write, grid: &FeatureGrid) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    for v in [
        grid.channels as u32,
        grid.height as u32,
        grid.width as u32,
        grid.data.len() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &grid.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Write the plain-text variant: `fgrid C H W` on the first line, then one
/// whitespace-separated row of cell values per channel row.
pub fn write_feature_grid_text(grid: &FeatureGrid) -> String {
    let mut out = format!(
        "{GRID_TEXT_MAGIC} {} {} {}\n",
        grid.channels, grid.height, grid.width
    );
    for c in 0..grid.channels {
        for y in 0..grid.height {
            let row: Vec<String> = (0..grid.width)
                .map(|x| format!("{}", grid.get(c, y, x)))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

fn parse_grid_binary(bytes: &[u8]) -> Result<FeatureGrid> {
    let header_len = 4 + 4 * 4;
    if bytes.len() < header_len {
        return Err(Error::MalformedHeader("truncated header".into()));
    }
    let mut words = [0u32; 4];
    for (i, word) in words.iter_mut().enumerate() {
        let off = 4 + i * 4;
        *word = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    }
    let [c, h, w, count] = words.map(|v| v as usize);
    if c * h * w != count {
        return Err(Error::MalformedHeader(format!(
            "element count {count} does not match shape {c}x{h}x{w}"
        )));
    }
    let payload = &bytes[header_len..];
    if payload.len() != count * 4 {
        return Err(Error::ShapeMismatch(format!(
            "header declares {count} elements but payload holds {}",
            payload.len() / 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureGrid::new(c, h, w, data)
}

fn parse_grid_text(text: &str) -> Result<FeatureGrid> {
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some(GRID_TEXT_MAGIC) {
        return Err(Error::MalformedHeader("missing text magic".into()));
    }
    let mut dim = |name: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("missing {name}")))
    };
    let c = dim("channels")?;
    let h = dim("height")?;
    let w = dim("width")?;
    let data: Vec<f32> = tokens
        .map(|t| {
            t.parse::<f32>()
                .map_err(|_| Error::MalformedHeader(format!("bad value '{t}'")))
        })
        .collect::<Result<_>>()?;
    if data.len() != c * h * w {
        return Err(Error::ShapeMismatch(format!(
            "header declares {} elements but file holds {}",
            c * h * w,
            data.len()
        )));
    }
    FeatureGrid::new(c, h, w, data)
}

/// Load a grid file, sniffing binary vs text form from the magic.
pub fn load_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_feature_grid(&bytes)
}

/// Decode a grid from raw bytes (either format).
pub fn read_feature_grid(bytes: &[u8]) -> Result<FeatureGrid> {
    if bytes.starts_with(GRID_MAGIC) {
        parse_grid_binary(bytes)
    } else if bytes.starts_with(GRID_TEXT_MAGIC.as_bytes()) {
        parse_grid_text(
            std::str::from_utf8(bytes)
                .map_err(|_| Error::MalformedHeader("text grid is not UTF-8".into()))?,
        )
    } else {
        Err(Error::MalformedHeader("unrecognized magic".into()))
    }
}

/// Save in binary form.
pub fn save_feature_grid(path: impl AsRef<Path>, grid: &FeatureGrid) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + grid.data.len() * 4);
    write_feature_grid(&mut buf, grid)?;
    std::fs::write(path, buf)?;
    Ok(())
}
