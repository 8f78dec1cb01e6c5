//! Observation layout, normalization, the simplified body-frame transform,
//! and the JSON-lines dataset container.
//!
//! A frame is a 48-dimensional vector partitioned into six synchronous
//! streams: right/left hand shape (18 each), right/left hand position (3
//! each) and right/left hand orientation (3 each).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total observation dimension per frame.
pub const FRAME_DIM: usize = 48;
/// Number of synchronous data streams.
pub const STREAM_COUNT: usize = 6;

/// The six feature channels of a glove frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    RightShape,
    LeftShape,
    RightPosition,
    LeftPosition,
    RightOrientation,
    LeftOrientation,
}

impl StreamKind {
    /// Feature dimension carried by this stream.
    pub fn dim(self) -> usize {
        match self {
            StreamKind::RightShape | StreamKind::LeftShape => 18,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::RightShape => "right-shape",
            StreamKind::LeftShape => "left-shape",
            StreamKind::RightPosition => "right-position",
            StreamKind::LeftPosition => "left-position",
            StreamKind::RightOrientation => "right-orientation",
            StreamKind::LeftOrientation => "left-orientation",
        }
    }
}

/// One stream's slot within the 48-dimensional frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub kind: StreamKind,
    pub dim: usize,
    pub offset: usize,
}

/// Partition of the frame vector into the six streams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamLayout {
    streams: Vec<StreamInfo>,
}

impl StreamLayout {
    /// The layout used throughout: shapes first, then positions, then
    /// orientations, right hand before left within each group.
    pub fn standard() -> Self {
        let kinds = [
            StreamKind::RightShape,
            StreamKind::LeftShape,
            StreamKind::RightPosition,
            StreamKind::LeftPosition,
            StreamKind::RightOrientation,
            StreamKind::LeftOrientation,
        ];
        let mut streams = Vec::with_capacity(STREAM_COUNT);
        let mut offset = 0;
        for kind in kinds {
            streams.push(StreamInfo { kind, dim: kind.dim(), offset });
            offset += kind.dim();
        }
        StreamLayout { streams }
    }

    pub fn validate(&self) -> Result<()> {
        if self.streams.len() != STREAM_COUNT {
            return Err(Error::DimensionMismatch { expected: STREAM_COUNT, got: self.streams.len() });
        }
        let mut offset = 0;
        for info in &self.streams {
            if info.dim != info.kind.dim() || info.offset != offset {
                return Err(Error::InvalidConfig(format!(
                    "stream {} must have dim {} at offset {offset}",
                    info.kind.name(),
                    info.kind.dim()
                )));
            }
            offset += info.dim;
        }
        if offset != FRAME_DIM {
            return Err(Error::DimensionMismatch { expected: FRAME_DIM, got: offset });
        }
        Ok(())
    }

    pub fn streams(&self) -> &[StreamInfo] {
        &self.streams
    }

    pub fn stream(&self, s: usize) -> &StreamInfo {
        &self.streams[s]
    }

    /// Borrow stream `s` of a raw frame vector.
    pub fn slice<'a>(&self, values: &'a [f64], s: usize) -> &'a [f64] {
        let info = &self.streams[s];
        &values[info.offset..info.offset + info.dim]
    }
}

impl Default for StreamLayout {
    fn default() -> Self {
        Self::standard()
    }
}

/// One 48-dimensional observation, normalized to the unit hypercube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frame {
    pub values: Vec<f64>,
}

impl Frame {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FRAME_DIM {
            return Err(Error::DimensionMismatch { expected: FRAME_DIM, got: values.len() });
        }
        Ok(Frame { values })
    }

    pub fn zeros() -> Self {
        Frame { values: vec![0.0; FRAME_DIM] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Ground-truth annotation of a sequence: a single sign or a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Sign(String),
    Sentence(Vec<String>),
}

impl Label {
    /// The label as a sign-id list regardless of variant.
    pub fn signs(&self) -> Vec<String> {
        match self {
            Label::Sign(s) => vec![s.clone()],
            Label::Sentence(v) => v.clone(),
        }
    }
}

/// An ordered, non-empty list of frames with an optional label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureSequence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub frames: Vec<Frame>,
}

impl GestureSequence {
    pub fn new(frames: Vec<Frame>, label: Option<Label>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidConfig("gesture sequence must be non-empty".into()));
        }
        Ok(GestureSequence { label, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Per-component min/max over the training set, used to scale raw data to
/// the 0-1 range. Components with max == min are degenerate and map to 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationStats {
    /// Stats that leave already-normalized data unchanged.
    pub fn identity() -> Self {
        NormalizationStats { min: vec![0.0; FRAME_DIM], max: vec![1.0; FRAME_DIM] }
    }

    /// Componentwise min/max over every frame of the training set.
    pub fn fit<'a, I>(frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Frame>,
    {
        let mut min = vec![f64::INFINITY; FRAME_DIM];
        let mut max = vec![f64::NEG_INFINITY; FRAME_DIM];
        let mut seen = false;
        for frame in frames {
            seen = true;
            for (i, &v) in frame.values.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        if !seen {
            return Err(Error::EmptyTrainingSet);
        }
        Ok(NormalizationStats { min, max })
    }

    pub fn is_degenerate(&self, component: usize) -> bool {
        self.max[component] <= self.min[component]
    }

    /// Indices of components with no dynamic range in the training data.
    pub fn degenerate_components(&self) -> Vec<usize> {
        (0..FRAME_DIM).filter(|&i| self.is_degenerate(i)).collect()
    }
}

/// Scale a raw 48-vector to [0,1] componentwise, clamping out-of-range
/// values; degenerate components map to 0.5.
pub fn normalize_frame(raw: &[f64], stats: &NormalizationStats) -> Result<Frame> {
    if raw.len() != FRAME_DIM {
        return Err(Error::DimensionMismatch { expected: FRAME_DIM, got: raw.len() });
    }
    let mut out = Vec::with_capacity(FRAME_DIM);
    for i in 0..FRAME_DIM {
        if stats.is_degenerate(i) {
            out.push(0.5);
        } else {
            let v = (raw[i] - stats.min[i]) / (stats.max[i] - stats.min[i]);
            out.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(Frame { values: out })
}

/// Position and orientation of one tracker receiver in the transmitter frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverPose {
    pub position: Vector3<f64>,
    pub orientation: Matrix3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-6;

impl ReceiverPose {
    pub fn new(position: Vector3<f64>, orientation: Matrix3<f64>) -> Result<Self> {
        let pose = ReceiverPose { position, orientation };
        pose.check_orthonormal()?;
        Ok(pose)
    }

    fn check_orthonormal(&self) -> Result<()> {
        let gram = self.orientation * self.orientation.transpose();
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NonOrthonormalRotation(dev));
        }
        Ok(())
    }
}

/// Express the hand pose relative to the thorax receiver: a translation in
/// the thorax frame plus Z-Y-X Euler angles of the relative rotation.
pub fn to_body_frame(hand: &ReceiverPose, thorax: &ReceiverPose) -> Result<([f64; 3], [f64; 3])> {
    hand.check_orthonormal()?;
    thorax.check_orthonormal()?;
    let rt = thorax.orientation.transpose();
    let position = rt * (hand.position - thorax.position);
    let relative = rt * hand.orientation;
    // (roll, pitch, yaw) with R = Rz(yaw) * Ry(pitch) * Rx(roll)
    let (roll, pitch, yaw) = Rotation3::from_matrix_unchecked(relative).euler_angles();
    Ok(([position.x, position.y, position.z], [roll, pitch, yaw]))
}

/// Split a frame into its six stream vectors in layout order.
pub fn split_streams(frame: &Frame, layout: &StreamLayout) -> Vec<Vec<f64>> {
    (0..STREAM_COUNT).map(|s| layout.slice(&frame.values, s).to_vec()).collect()
}

/// Read a JSON-lines dataset: one `GestureSequence` object per line.
pub fn read_dataset(path: &Path) -> Result<Vec<GestureSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut sequences = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: GestureSequence = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedRecord { line: idx + 1, msg: e.to_string() })?;
        if seq.frames.is_empty() {
            return Err(Error::MalformedRecord { line: idx + 1, msg: "empty frame list".into() });
        }
        for frame in &seq.frames {
            if frame.values.len() != FRAME_DIM {
                return Err(Error::MalformedRecord {
                    line: idx + 1,
                    msg: format!("frame has {} components, expected {FRAME_DIM}", frame.values.len()),
                });
            }
        }
        sequences.push(seq);
    }
    Ok(sequences)
}

pub fn write_dataset(path: &Path, sequences: &[GestureSequence]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for seq in sequences {
        serde_json::to_writer(&mut out, seq)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_layout_covers_frame() {
        let layout = StreamLayout::standard();
        layout.validate().unwrap();
        let dims: Vec<usize> = layout.streams().iter().map(|s| s.dim).collect();
        assert_eq!(dims, vec![18, 18, 3, 3, 3, 3]);
        assert_eq!(layout.stream(0).offset, 0);
        assert_eq!(layout.stream(5).offset, 45);
    }

    #[test]
    fn normalize_bounds_and_clamp() {
        let stats = NormalizationStats { min: vec![0.0; FRAME_DIM], max: vec![255.0; FRAME_DIM] };
        let at_min = normalize_frame(&vec![0.0; FRAME_DIM], &stats).unwrap();
        assert!(at_min.values.iter().all(|&v| v == 0.0));
        let at_max = normalize_frame(&vec![255.0; FRAME_DIM], &stats).unwrap();
        assert!(at_max.values.iter().all(|&v| v == 1.0));
        // out-of-range raw value clamps to 1.0
        let over = normalize_frame(&vec![300.0; FRAME_DIM], &stats).unwrap();
        assert!(over.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn normalize_degenerate_maps_to_half() {
        let mut stats = NormalizationStats { min: vec![0.0; FRAME_DIM], max: vec![1.0; FRAME_DIM] };
        stats.max[7] = 0.0; // component 7 has no range
        let out = normalize_frame(&vec![0.3; FRAME_DIM], &stats).unwrap();
        assert_eq!(out.values[7], 0.5);
        assert_eq!(out.values[8], 0.3);
        assert_eq!(stats.degenerate_components(), vec![7]);
    }

    #[test]
    fn normalize_idempotent_with_identity_stats() {
        let stats = NormalizationStats::identity();
        let raw: Vec<f64> = (0..FRAME_DIM).map(|i| i as f64 / FRAME_DIM as f64).collect();
        let once = normalize_frame(&raw, &stats).unwrap();
        let twice = normalize_frame(&once.values, &stats).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn normalize_rejects_wrong_dimension() {
        let stats = NormalizationStats::identity();
        assert!(normalize_frame(&[0.0; 47], &stats).is_err());
    }

    #[test]
    fn split_zero_frame() {
        let layout = StreamLayout::standard();
        let parts = split_streams(&Frame::zeros(), &layout);
        let dims: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        assert_eq!(dims, vec![18, 18, 3, 3, 3, 3]);
        assert!(parts.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn split_indexing() {
        let layout = StreamLayout::standard();
        let frame = Frame::new((0..FRAME_DIM).map(|i| i as f64).collect()).unwrap();
        let parts = split_streams(&frame, &layout);
        for (s, part) in parts.iter().enumerate() {
            let info = layout.stream(s);
            for (j, &v) in part.iter().enumerate() {
                assert_eq!(v, (info.offset + j) as f64);
            }
        }
    }

    #[test]
    fn split_concat_round_trip() {
        let layout = StreamLayout::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let frame = Frame::new((0..FRAME_DIM).map(|_| rng.random::<f64>()).collect()).unwrap();
            let parts = split_streams(&frame, &layout);
            let concat: Vec<f64> = parts.into_iter().flatten().collect();
            assert_eq!(concat, frame.values);
        }
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> ReceiverPose {
        let rot = Rotation3::from_euler_angles(
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
        );
        let pos = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        ReceiverPose::new(pos, *rot.matrix()).unwrap()
    }

    #[test]
    fn body_frame_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose(&mut rng);
        let (p, o) = to_body_frame(&pose, &pose).unwrap();
        for v in p.iter().chain(o.iter()) {
            assert!(v.abs() < 1e-12, "expected zero feature, got {v}");
        }
    }

    #[test]
    fn body_frame_pass_through() {
        let thorax =
            ReceiverPose::new(Vector3::zeros(), Matrix3::identity()).unwrap();
        let hand =
            ReceiverPose::new(Vector3::new(1.0, 2.0, 3.0), Matrix3::identity()).unwrap();
        let (p, o) = to_body_frame(&hand, &thorax).unwrap();
        assert_eq!(p, [1.0, 2.0, 3.0]);
        assert_eq!(o, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn body_frame_round_trip_recovers_hand_pose() {
        // Oracle: re-compose the thorax transform from the body-frame features
        // and compare against the original hand pose.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let hand = random_pose(&mut rng);
            let thorax = random_pose(&mut rng);
            let (p, o) = to_body_frame(&hand, &thorax).unwrap();

            let recovered_pos = thorax.position + thorax.orientation * Vector3::new(p[0], p[1], p[2]);
            let recovered_rot =
                thorax.orientation * *Rotation3::from_euler_angles(o[0], o[1], o[2]).matrix();

            assert!((recovered_pos - hand.position).abs().max() < 1e-9);
            assert!((recovered_rot - hand.orientation).abs().max() < 1e-9);
        }
    }

    #[test]
    fn body_frame_rejects_non_orthonormal() {
        let bad = ReceiverPose { position: Vector3::zeros(), orientation: Matrix3::identity() * 2.0 };
        let good = ReceiverPose::new(Vector3::zeros(), Matrix3::identity()).unwrap();
        assert!(to_body_frame(&bad, &good).is_err());
        assert!(ReceiverPose::new(Vector3::zeros(), Matrix3::identity() * 2.0).is_err());
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let seqs = vec![
            GestureSequence::new(vec![Frame::zeros()], Some(Label::Sign("a".into()))).unwrap(),
            GestureSequence::new(
                vec![Frame::zeros(), Frame::zeros()],
                Some(Label::Sentence(vec!["a".into(), "b".into()])),
            )
            .unwrap(),
            GestureSequence::new(vec![Frame::zeros()], None).unwrap(),
        ];
        write_dataset(&path, &seqs).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, seqs);

        std::fs::write(&path, "{\"frames\": [[1,2]]}\n").unwrap();
        match read_dataset(&path) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected malformed record, got {other:?}"),
        }
    }
}
