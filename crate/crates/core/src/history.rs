// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! Rolling buffer of classifier-validated points, stored in the world frame.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2D};

pub const DEFAULT_HISTORY_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
struct HistoryFrame {
    frame_id: u64,
    points: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionHistory {
    capacity: usize,
    frames: VecDeque<HistoryFrame>,
}

impl Default for DetectionHistory {
    fn default() -> Self {
        Self::new(DEFAULT_HISTORY_LEN).expect("non-zero capacity")
    }
}

impl DetectionHistory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("history capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            frames: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_ids(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.frame_id).collect()
    }

    pub fn point_count(&self) -> usize {
        self.frames.iter().map(|f| f.points.len()).sum()
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// Store `valid_points` (vehicle frame at `pose`) and evict the oldest
    /// frame once over capacity.
    pub fn push(&mut self, valid_points: &[Point2], pose: Pose2D, frame_id: u64) -> Result<()> {
        if let Some(last) = self.frames.back() {
            if frame_id <= last.frame_id {
                return Err(Error::Contract(format!(
                    "frame id {frame_id} does not follow {}",
                    last.frame_id
                )));
            }
        }
        let points = valid_points.iter().map(|&p| pose.transform_point(p)).collect();
        self.frames.push_back(HistoryFrame { frame_id, points });
        while self.frames.len() > self.capacity {
            self.frames.pop_front();
        }
        Ok(())
    }

    /// All buffered points in the vehicle frame at `current_pose`, oldest first.
    pub fn cloud(&self, current_pose: Pose2D) -> Vec<Point2> {
        let mut out = Vec::with_capacity(self.point_count());
        for f in &self.frames {
            out.extend(f.points.iter().map(|&p| current_pose.inverse_transform_point(p)));
        }
        out
    }

    /// Buffered points in the world frame.
    pub fn world_points(&self) -> Vec<Point2> {
        self.frames.iter().flat_map(|f| f.points.iter().copied()).collect()
    }
}
