use ndarray::Array2;

use crate::error::{invalid, Result};

/// Video frame rate the visual stream is sampled at.
pub const VIDEO_FPS: f64 = 25.0;

/// Spectrogram frames per video frame (40 ms video frames, 10 ms hop).
pub const FRAMES_PER_VIDEO_FRAME: usize = 4;

/// Per-video-frame feature vectors, `T_v x D_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatureSequence {
    pub values: Array2<f64>,
    pub frame_rate: f64,
}

impl VisualFeatureSequence {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("visual features must be finite");
        }
        Ok(Self { values, frame_rate: VIDEO_FPS })
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `start..start + len`.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_frames() {
            return invalid(format!(
                "segment {start}..{} exceeds {} frames",
                start + len,
                self.n_frames()
            ));
        }
        Ok(Self {
            values: self.values.slice(ndarray::s![start..start + len, ..]).to_owned(),
            frame_rate: self.frame_rate,
        })
    }
}
