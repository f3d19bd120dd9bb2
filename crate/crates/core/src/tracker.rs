//! Frame-to-frame plot identity assignment by nearest bounding-box centers.
//!
//! Each detection is reduced to its box center. All (track, detection) pairs
//! within the match radius are sorted by ascending distance and consumed
//! greedily, so matching is globally greedy rather than per-track nearest
//! neighbor; this is deterministic and symmetric in the inputs. Unmatched
//! detections open new tracks with fresh monotonic IDs. A track that goes
//! unmatched accumulates missed frames and is dropped at the step where the
//! count reaches the expiry limit; its last center stays matchable until
//! then. IDs are never reused and there is no re-identification after
//! expiry.

use serde::Serialize;

use crate::data::FrameRecord;
use crate::error::{Error, Result};
use crate::geometry::{centroid, euclidean, BoundingBox, Point2};

/// Tracker tuning. `max_match_distance == None` disables the radius check,
/// which is only sensible for noise-free input; real detector output wants a
/// bound so false positives cannot capture distant tracks.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    pub expiry_frames: u32,
    pub max_match_distance: Option<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            expiry_frames: 5,
            max_match_distance: None,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.expiry_frames == 0 {
            return Err(Error::InvalidConfig("expiry_frames must be >= 1".into()));
        }
        if let Some(d) = self.max_match_distance {
            if !(d > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "max_match_distance {d} must be > 0"
                )));
            }
        }
        Ok(())
    }
}

/// One tracked plot identity.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub last_centroid: Point2,
    pub missed_frames: u32,
    pub first_frame: u64,
    pub last_seen_frame: u64,
    pub centroid_history: Vec<(u64, Point2)>,
}

impl Track {
    pub fn n_observations(&self) -> usize {
        self.centroid_history.len()
    }
}

/// What one tracker step did: which detection got which track id, which ids
/// were created, which expired.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAssignment {
    pub frame_id: u64,
    /// (detection index, track id); injective in both components.
    pub assignments: Vec<(usize, u64)>,
    pub new_ids: Vec<u64>,
    pub expired_ids: Vec<u64>,
}

/// Lifetime summary of a track, for the final table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackSummary {
    pub track_id: u64,
    pub first_frame: u64,
    pub last_seen_frame: u64,
    pub n_observations: usize,
}

/// Single-owner mutable tracker state machine.
#[derive(Debug)]
pub struct CentroidTracker {
    config: TrackerConfig,
    active: Vec<Track>,
    expired: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl CentroidTracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            active: Vec::new(),
            expired: Vec::new(),
            next_id: 0,
            last_frame: None,
        })
    }

    /// Advance one frame. `frame_id` must strictly increase between calls.
    pub fn step(&mut self, frame_id: u64, detections: &[BoundingBox]) -> Result<FrameAssignment> {
        if let Some(prev) = self.last_frame {
            if frame_id <= prev {
                return Err(Error::NonMonotonicFrame {
                    prev,
                    new: frame_id,
                });
            }
        }
        self.last_frame = Some(frame_id);

        let centers: Vec<Point2> = detections.iter().map(centroid).collect();

        // All candidate pairs within radius, ordered by (distance, track id,
        // detection index) for a deterministic greedy pass.
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, track) in self.active.iter().enumerate() {
            for (di, c) in centers.iter().enumerate() {
                let d = euclidean(track.last_centroid, *c);
                if self.config.max_match_distance.map_or(true, |m| d <= m) {
                    pairs.push((d, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
        });

        let mut track_used = vec![false; self.active.len()];
        let mut det_used = vec![false; centers.len()];
        let mut assignments: Vec<(usize, u64)> = Vec::new();
        for &(_, ti, di) in &pairs {
            if track_used[ti] || det_used[di] {
                continue;
            }
            track_used[ti] = true;
            det_used[di] = true;
            let track = &mut self.active[ti];
            track.missed_frames = 0;
            track.last_seen_frame = frame_id;
            track.last_centroid = centers[di];
            track.centroid_history.push((frame_id, centers[di]));
            assignments.push((di, track.id));
        }

        // Unmatched detections spawn fresh tracks.
        let mut new_ids = Vec::new();
        for (di, used) in det_used.iter().enumerate() {
            if !used {
                let id = self.next_id;
                self.next_id += 1;
                self.active.push(Track {
                    id,
                    last_centroid: centers[di],
                    missed_frames: 0,
                    first_frame: frame_id,
                    last_seen_frame: frame_id,
                    centroid_history: vec![(frame_id, centers[di])],
                });
                assignments.push((di, id));
                new_ids.push(id);
            }
        }
        assignments.sort_by_key(|&(di, _)| di);

        // Unmatched tracks age; a track expires (and is archived) the moment
        // its missed count reaches the limit. `track_used` covers only
        // pre-existing tracks; freshly spawned ones were observed this frame.
        let mut expired_ids = Vec::new();
        let expiry = self.config.expiry_frames;
        let mut kept = Vec::with_capacity(self.active.len());
        for (ti, mut track) in std::mem::take(&mut self.active).into_iter().enumerate() {
            let was_matched = ti < track_used.len() && track_used[ti];
            let is_new = ti >= track_used.len();
            if !(was_matched || is_new) {
                track.missed_frames += 1;
                if track.missed_frames >= expiry {
                    expired_ids.push(track.id);
                    self.expired.push(track);
                    continue;
                }
            }
            kept.push(track);
        }
        self.active = kept;

        Ok(FrameAssignment {
            frame_id,
            assignments,
            new_ids,
            expired_ids,
        })
    }

    /// Snapshot of all non-expired tracks, sorted by id.
    pub fn active_tracks(&self) -> Vec<Track> {
        self.active.clone()
    }

    /// Lifetime table over both active and expired tracks, sorted by id.
    pub fn track_table(&self) -> Vec<TrackSummary> {
        let mut all: Vec<TrackSummary> = self
            .active
            .iter()
            .chain(self.expired.iter())
            .map(|t| TrackSummary {
                track_id: t.id,
                first_frame: t.first_frame,
                last_seen_frame: t.last_seen_frame,
                n_observations: t.n_observations(),
            })
            .collect();
        all.sort_by_key(|t| t.track_id);
        all
    }
}

/// Batch driver: fold [`CentroidTracker::step`] over a sorted frame sequence
/// and return per-frame assignments plus the final track table (active and
/// expired).
pub fn run_sequence(
    frames: &[FrameRecord],
    config: &TrackerConfig,
) -> Result<(Vec<FrameAssignment>, Vec<TrackSummary>)> {
    let mut tracker = CentroidTracker::new(config.clone())?;
    let mut assignments = Vec::with_capacity(frames.len());
    for frame in frames {
        let boxes: Vec<BoundingBox> = frame.detections.iter().map(|d| d.bbox).collect();
        assignments.push(tracker.step(frame.frame_id, &boxes)?);
    }
    Ok((assignments, tracker.track_table()))
}

/// Line-delimited assignment records: `{"frame_id","detection_index","track_id"}`.
pub fn write_track_assignments(assignments: &[FrameAssignment]) -> String {
    #[derive(Serialize)]
    struct Row {
        frame_id: u64,
        detection_index: usize,
        track_id: u64,
    }
    let mut out = String::new();
    for fa in assignments {
        for &(di, tid) in &fa.assignments {
            let row = Row {
                frame_id: fa.frame_id,
                detection_index: di,
                track_id: tid,
            };
            out.push_str(&serde_json::to_string(&row).expect("assignment serialization"));
            out.push('\n');
        }
    }
    out
}

/// Track summary table as delimited text.
pub fn write_track_summary(table: &[TrackSummary]) -> String {
    let mut out = String::from("track_id,first_frame,last_seen_frame,n_observations\n");
    for t in table {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.track_id, t.first_frame, t.last_seen_frame, t.n_observations
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Detection;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64) -> BoundingBox {
        BoundingBox::new(x - 5.0, y - 5.0, 10.0, 10.0).unwrap()
    }

    fn tracker() -> CentroidTracker {
        CentroidTracker::new(TrackerConfig::default()).unwrap()
    }

    #[test]
    fn first_frame_spawns_track_zero() {
        let mut t = tracker();
        let fa = t.step(0, &[bb(10.0, 10.0)]).unwrap();
        assert_eq!(fa.assignments, vec![(0, 0)]);
        assert_eq!(fa.new_ids, vec![0]);
        assert!(fa.expired_ids.is_empty());
    }

    #[test]
    fn stationary_detection_keeps_id() {
        let mut t = tracker();
        for f in 0..10 {
            let fa = t.step(f, &[bb(50.0, 50.0)]).unwrap();
            assert_eq!(fa.assignments, vec![(0, 0)]);
        }
        assert_eq!(t.active_tracks().len(), 1);
        assert_eq!(t.active_tracks()[0].n_observations(), 10);
    }

    #[test]
    fn expiry_after_five_missed_frames_and_fresh_id() {
        let mut t = tracker();
        t.step(0, &[bb(50.0, 50.0)]).unwrap();
        for f in 1..5 {
            let fa = t.step(f, &[]).unwrap();
            assert!(fa.expired_ids.is_empty(), "frame {f}");
        }
        let fa = t.step(5, &[]).unwrap();
        assert_eq!(fa.expired_ids, vec![0]);
        assert!(t.active_tracks().is_empty());
        // Reappearance at the same spot gets a new id.
        let fa = t.step(6, &[bb(50.0, 50.0)]).unwrap();
        assert_eq!(fa.new_ids, vec![1]);
    }

    #[test]
    fn track_matchable_during_missed_window() {
        let mut t = tracker();
        t.step(0, &[bb(50.0, 50.0)]).unwrap();
        for f in 1..5 {
            t.step(f, &[]).unwrap();
        }
        // Missed 4 frames so far; still active and matchable at frame 5.
        let fa = t.step(5, &[bb(52.0, 50.0)]).unwrap();
        assert_eq!(fa.assignments, vec![(0, 0)]);
        assert!(fa.new_ids.is_empty());
        assert_eq!(t.active_tracks()[0].missed_frames, 0);
    }

    #[test]
    fn globally_greedy_matching() {
        let mut t = tracker();
        t.step(0, &[bb(0.0, 0.0), bb(100.0, 0.0)]).unwrap();
        // Pairwise distances: (t0,d0)=10, (t0,d1)=60, (t1,d0)=90, (t1,d1)=40.
        // Greedy consumes 10 then 40.
        let fa = t.step(1, &[bb(10.0, 0.0), bb(60.0, 0.0)]).unwrap();
        assert_eq!(fa.assignments, vec![(0, 0), (1, 1)]);
        assert!(fa.new_ids.is_empty());
    }

    #[test]
    fn max_distance_blocks_far_matches() {
        let config = TrackerConfig {
            expiry_frames: 5,
            max_match_distance: Some(20.0),
        };
        let mut t = CentroidTracker::new(config).unwrap();
        t.step(0, &[bb(0.0, 0.0)]).unwrap();
        let fa = t.step(1, &[bb(100.0, 0.0)]).unwrap();
        assert_eq!(fa.new_ids, vec![1]);
        assert_eq!(t.active_tracks().len(), 2);
    }

    #[test]
    fn non_monotonic_frame_rejected() {
        let mut t = tracker();
        t.step(3, &[]).unwrap();
        assert!(matches!(
            t.step(3, &[]),
            Err(Error::NonMonotonicFrame { prev: 3, new: 3 })
        ));
    }

    #[test]
    fn active_tracks_snapshots() {
        let mut t = tracker();
        assert!(t.active_tracks().is_empty());
        t.step(0, &[bb(0.0, 0.0), bb(100.0, 100.0)]).unwrap();
        let snap = t.active_tracks();
        assert_eq!(snap.len(), 2);
        assert_eq!((snap[0].id, snap[1].id), (0, 1));
    }

    #[test]
    fn empty_frame_increments_every_missed_count() {
        let mut t = tracker();
        t.step(0, &[bb(0.0, 0.0), bb(100.0, 100.0), bb(200.0, 0.0)])
            .unwrap();
        t.step(1, &[]).unwrap();
        assert!(t.active_tracks().iter().all(|tr| tr.missed_frames == 1));
    }

    #[test]
    fn run_sequence_empty() {
        let (fas, table) = run_sequence(&[], &TrackerConfig::default()).unwrap();
        assert!(fas.is_empty());
        assert!(table.is_empty());
    }

    #[test]
    fn run_sequence_small_motion() {
        let frames: Vec<FrameRecord> = (0..30)
            .map(|f| FrameRecord {
                frame_id: f,
                detections: vec![Detection::ground_truth(bb(10.0 + 2.0 * f as f64, 40.0), "Plot")],
            })
            .collect();
        let (fas, table) = run_sequence(&frames, &TrackerConfig::default()).unwrap();
        assert_eq!(fas.len(), 30);
        assert_eq!(table.len(), 1);
        assert_eq!(table[0].n_observations, 30);
        assert_eq!((table[0].first_frame, table[0].last_seen_frame), (0, 29));
    }

    #[test]
    fn track_table_includes_expired() {
        let mut t = tracker();
        t.step(0, &[bb(0.0, 0.0)]).unwrap();
        for f in 1..=5 {
            t.step(f, &[]).unwrap();
        }
        t.step(6, &[bb(300.0, 300.0)]).unwrap();
        let table = t.track_table();
        assert_eq!(table.len(), 2);
        assert_eq!(table[0].track_id, 0);
        assert_eq!(table[1].track_id, 1);
    }

    #[test]
    fn assignment_files_roundtrip_shape() {
        let mut t = tracker();
        let fa0 = t.step(0, &[bb(0.0, 0.0), bb(50.0, 0.0)]).unwrap();
        let fa1 = t.step(1, &[bb(2.0, 0.0)]).unwrap();
        let text = write_track_assignments(&[fa0, fa1]);
        assert_eq!(text.lines().count(), 3);
        let summary = write_track_summary(&t.track_table());
        assert!(summary.starts_with("track_id,"));
        assert_eq!(summary.lines().count(), 3);
    }

    proptest! {
        // No detection index and no track id may appear twice within one
        // frame assignment; ids only ever grow.
        #[test]
        fn assignment_injective_and_ids_monotonic(
            frames in proptest::collection::vec(
                proptest::collection::vec((0.0..300.0f64, 0.0..300.0f64), 0..6),
                1..40,
            )
        ) {
            let mut t = tracker();
            let mut max_seen_id: Option<u64> = None;
            for (f, centers) in frames.iter().enumerate() {
                let boxes: Vec<BoundingBox> =
                    centers.iter().map(|&(x, y)| bb(x, y)).collect();
                let fa = t.step(f as u64, &boxes).unwrap();
                let mut det_idx: Vec<usize> = fa.assignments.iter().map(|a| a.0).collect();
                let mut ids: Vec<u64> = fa.assignments.iter().map(|a| a.1).collect();
                det_idx.sort_unstable();
                det_idx.dedup();
                prop_assert_eq!(det_idx.len(), fa.assignments.len());
                ids.sort_unstable();
                ids.dedup();
                prop_assert_eq!(ids.len(), fa.assignments.len());
                for &id in &fa.new_ids {
                    if let Some(prev) = max_seen_id {
                        prop_assert!(id > prev);
                    }
                    max_seen_id = Some(id);
                }
            }
        }

        // Same input, same output, bit for bit.
        #[test]
        fn run_sequence_deterministic(
            frames in proptest::collection::vec(
                proptest::collection::vec((0.0..300.0f64, 0.0..300.0f64), 0..5),
                1..25,
            )
        ) {
            let records: Vec<FrameRecord> = frames
                .iter()
                .enumerate()
                .map(|(f, centers)| FrameRecord {
                    frame_id: f as u64,
                    detections: centers
                        .iter()
                        .map(|&(x, y)| Detection::ground_truth(bb(x, y), "Plot"))
                        .collect(),
                })
                .collect();
            let a = run_sequence(&records, &TrackerConfig::default()).unwrap();
            let b = run_sequence(&records, &TrackerConfig::default()).unwrap();
            prop_assert_eq!(a.0, b.0);
            prop_assert_eq!(a.1, b.1);
        }
    }
}
