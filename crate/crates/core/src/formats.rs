//! Text file formats for annotations, detection streams and plot metadata.
//!
//! Three formats cross the toolkit boundary:
//!
//! * **Annotations** — a JSON document in the region style of common image
//!   labeling tools: a map of image id to `{ "filename", "regions": [...] }`
//!   where each region holds `shape_attributes` (`name == "rect"`, `x`, `y`,
//!   `width`, `height`) and optional `region_attributes.label`. Non-rectangle
//!   regions are skipped and counted, not treated as errors.
//! * **Detections** — line-delimited JSON, one frame per line:
//!   `{"frame_id": N, "detections": [{"x","y","w","h","score"?,"label"}]}`.
//! * **Plot metadata** — a comma-delimited table with header
//!   `plot_id,side,frame_start,frame_end,ground_truth_pods`.
//!
//! Writers emit a canonical form: parse → write → parse is the identity and
//! write output is byte-stable for identical inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{Detection, FrameRecord, PlotMeta, Side};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Parsed annotation document: detections per image id, plus how many
/// non-rectangle regions were skipped.
#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    pub images: BTreeMap<String, Vec<Detection>>,
    pub skipped_regions: usize,
}

fn region_f64(
    attrs: &serde_json::Map<String, Value>,
    image: &str,
    region: usize,
    field: &'static str,
) -> Result<f64> {
    attrs
        .get(field)
        .and_then(Value::as_f64)
        .ok_or(Error::MissingField {
            image: image.to_string(),
            region,
            field,
        })
}

/// Parse a region-style annotation document. Every rectangle becomes one
/// unscored [`Detection`]; a rectangle with a missing or non-positive
/// `width`/`height` is an error naming the offending region.
pub fn parse_annotations(text: &str) -> Result<AnnotationSet> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| Error::MalformedDocument(format!("not valid JSON: {e}")))?;
    let map = doc
        .as_object()
        .ok_or_else(|| Error::MalformedDocument("top level is not an object".into()))?;

    let mut out = AnnotationSet::default();
    for (image_id, entry) in map {
        let entry_obj = entry.as_object().ok_or_else(|| {
            Error::MalformedDocument(format!("image '{image_id}' entry is not an object"))
        })?;
        // Regions may be a list (newer exports) or an index-keyed map (older
        // exports); accept both.
        let regions: Vec<&Value> = match entry_obj.get("regions") {
            Some(Value::Array(a)) => a.iter().collect(),
            Some(Value::Object(o)) => o.values().collect(),
            None => Vec::new(),
            Some(_) => {
                return Err(Error::MalformedDocument(format!(
                    "image '{image_id}' has a non-list 'regions' field"
                )))
            }
        };

        let mut dets = Vec::with_capacity(regions.len());
        for (idx, region) in regions.iter().enumerate() {
            let shape = region
                .get("shape_attributes")
                .and_then(Value::as_object)
                .ok_or(Error::MissingField {
                    image: image_id.clone(),
                    region: idx,
                    field: "shape_attributes",
                })?;
            if shape.get("name").and_then(Value::as_str) != Some("rect") {
                out.skipped_regions += 1;
                continue;
            }
            let x = region_f64(shape, image_id, idx, "x")?;
            let y = region_f64(shape, image_id, idx, "y")?;
            let w = region_f64(shape, image_id, idx, "width")?;
            let h = region_f64(shape, image_id, idx, "height")?;
            let bbox = BoundingBox::new(x, y, w, h).map_err(|_| Error::MissingField {
                image: image_id.clone(),
                region: idx,
                field: if w <= 0.0 || !w.is_finite() {
                    "width"
                } else {
                    "height"
                },
            })?;
            let label = region
                .get("region_attributes")
                .and_then(|a| a.get("label"))
                .and_then(Value::as_str)
                .unwrap_or("Pod");
            dets.push(Detection::ground_truth(bbox, label));
        }
        out.images.insert(image_id.clone(), dets);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ShapeOut {
    name: &'static str,
    x: f64,
    y: f64,
    width: f64,
    height: f64,
}

#[derive(Serialize)]
struct RegionOut {
    shape_attributes: ShapeOut,
    region_attributes: BTreeMap<&'static str, String>,
}

#[derive(Serialize)]
struct ImageOut {
    filename: String,
    regions: Vec<RegionOut>,
}

/// Write annotations in the canonical region style. Scores are not part of
/// the annotation format and are dropped.
pub fn write_annotations(images: &BTreeMap<String, Vec<Detection>>) -> String {
    let doc: BTreeMap<&String, ImageOut> = images
        .iter()
        .map(|(id, dets)| {
            let regions = dets
                .iter()
                .map(|d| RegionOut {
                    shape_attributes: ShapeOut {
                        name: "rect",
                        x: d.bbox.x(),
                        y: d.bbox.y(),
                        width: d.bbox.w(),
                        height: d.bbox.h(),
                    },
                    region_attributes: BTreeMap::from([("label", d.label.clone())]),
                })
                .collect();
            (
                id,
                ImageOut {
                    filename: id.clone(),
                    regions,
                },
            )
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&doc).expect("annotation serialization");
    s.push('\n');
    s
}

#[derive(Serialize, Deserialize)]
struct DetLine {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    frame_id: u64,
    detections: Vec<DetLine>,
}

/// Parse a line-delimited detection stream. Frames are returned sorted by
/// ascending frame id; a repeated frame id is an error. Blank lines are
/// permitted.
pub fn parse_detections(text: &str) -> Result<Vec<FrameRecord>> {
    let mut frames: Vec<FrameRecord> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FrameLine = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !seen.insert(parsed.frame_id) {
            return Err(Error::DuplicateFrame(parsed.frame_id));
        }
        let mut detections = Vec::with_capacity(parsed.detections.len());
        for d in parsed.detections {
            let bbox = BoundingBox::new(d.x, d.y, d.w, d.h).map_err(|e| Error::MalformedLine {
                line: line_no,
                msg: e.to_string(),
            })?;
            let det = match d.score {
                Some(s) => {
                    Detection::scored(bbox, s, d.label).map_err(|e| Error::MalformedLine {
                        line: line_no,
                        msg: e.to_string(),
                    })?
                }
                None => Detection::ground_truth(bbox, d.label),
            };
            detections.push(det);
        }
        frames.push(FrameRecord {
            frame_id: parsed.frame_id,
            detections,
        });
    }
    frames.sort_by_key(|f| f.frame_id);
    Ok(frames)
}

/// Write a detection stream in canonical form (ascending frame id, one JSON
/// object per line).
pub fn write_detections(frames: &[FrameRecord]) -> String {
    let mut sorted: Vec<&FrameRecord> = frames.iter().collect();
    sorted.sort_by_key(|f| f.frame_id);
    let mut out = String::new();
    for f in sorted {
        let line = FrameLine {
            frame_id: f.frame_id,
            detections: f
                .detections
                .iter()
                .map(|d| DetLine {
                    x: d.bbox.x(),
                    y: d.bbox.y(),
                    w: d.bbox.w(),
                    h: d.bbox.h(),
                    score: d.score,
                    label: d.label.clone(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("frame serialization"));
        out.push('\n');
    }
    out
}

pub const PLOT_META_HEADER: &str = "plot_id,side,frame_start,frame_end,ground_truth_pods";

/// Parse the plot metadata table.
pub fn parse_plot_meta(text: &str) -> Result<Vec<PlotMeta>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| {
        Error::MalformedDocument("empty plot metadata file".into())
    })?;
    if header.trim() != PLOT_META_HEADER {
        return Err(Error::MalformedDocument(format!(
            "expected header '{PLOT_META_HEADER}', got '{}'",
            header.trim()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::MalformedLine {
                line: line_no,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let side: Side = fields[1].parse().map_err(|e| Error::MalformedLine {
            line: line_no,
            msg: format!("{e}"),
        })?;
        let num = |s: &str, what: &str| -> Result<u64> {
            s.trim().parse().map_err(|_| Error::MalformedLine {
                line: line_no,
                msg: format!("invalid {what} '{s}'"),
            })
        };
        rows.push(PlotMeta::new(
            fields[0].trim(),
            side,
            num(fields[2], "frame_start")?,
            num(fields[3], "frame_end")?,
            num(fields[4], "ground_truth_pods")?,
        )?);
    }
    Ok(rows)
}

/// Write the plot metadata table in canonical order (plot id, then side).
pub fn write_plot_meta(rows: &[PlotMeta]) -> String {
    let mut sorted: Vec<&PlotMeta> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.plot_id, a.side).cmp(&(&b.plot_id, b.side)));
    let mut out = String::from(PLOT_META_HEADER);
    out.push('\n');
    for m in sorted {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.plot_id, m.side, m.frame_start, m.frame_end, m.ground_truth_pods
        ));
    }
    out
}

/// Parse a counts file: one nonnegative integer per line, blanks ignored.
pub fn parse_counts(text: &str) -> Result<Vec<u64>> {
    let mut counts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        counts.push(t.parse().map_err(|_| Error::MalformedLine {
            line: i + 1,
            msg: format!("invalid count '{t}'"),
        })?);
    }
    Ok(counts)
}

pub const PREDICTIONS_HEADER: &str = "plot_id,sample_index,predicted_count";

/// Parse a predictions table (`plot_id,sample_index,predicted_count`).
pub fn parse_predictions(text: &str) -> Result<Vec<(String, u32, f64)>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MalformedDocument("empty predictions file".into()))?;
    if header.trim() != PREDICTIONS_HEADER {
        return Err(Error::MalformedDocument(format!(
            "expected header '{PREDICTIONS_HEADER}', got '{}'",
            header.trim()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                line: i + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let sample: u32 = fields[1].trim().parse().map_err(|_| Error::MalformedLine {
            line: i + 1,
            msg: format!("invalid sample index '{}'", fields[1]),
        })?;
        let value: f64 = fields[2].trim().parse().map_err(|_| Error::MalformedLine {
            line: i + 1,
            msg: format!("invalid count '{}'", fields[2]),
        })?;
        rows.push((fields[0].trim().to_string(), sample, value));
    }
    Ok(rows)
}

pub fn write_predictions(rows: &[(String, u32, f64)]) -> String {
    let mut out = String::from(PREDICTIONS_HEADER);
    out.push('\n');
    for (plot, sample, value) in rows {
        out.push_str(&format!("{plot},{sample},{value}\n"));
    }
    out
}
