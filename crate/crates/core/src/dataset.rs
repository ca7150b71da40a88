// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

//! JSON-lines dataset files: one header line, then one record per frame.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Pose2D, SensorExtrinsics, VehicleState};
use crate::preprocess::RadarFrame;

pub const DATASET_FORMAT: &str = "radar-enhance-dataset";
pub const DATASET_VERSION: u32 = 1;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const WORLD_FILE: &str = "world.toml";
pub const MAP_FILE: &str = "map.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    /// World name; distinct names are distinct environments.
    pub world: String,
    pub route: usize,
    pub seed: u64,
    pub frame_rate: f64,
    pub frame_count: usize,
    pub extrinsics: SensorExtrinsics,
}

/// Everything recorded at one frame time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub t: f64,
    /// One frame per radar, in that radar's frame.
    pub radar: Vec<RadarFrame>,
    /// Dead-reckoned pose with the measured speed and yaw rate.
    pub vehicle: VehicleState,
    pub truth: Pose2D,
    /// Lidar returns in the true vehicle frame.
    pub lidar: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<FrameRecord>,
}

/// A record line that could not be parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRecord {
    pub line: usize,
    pub reason: String,
}

pub fn dataset_path(dir: &Path) -> PathBuf {
    dir.join(DATASET_FILE)
}

impl Dataset {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
        put(serde_json::to_string(&self.header)?)?;
        for r in &self.records {
            put(serde_json::to_string(r)?)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Strict read: any bad record is an error.
    pub fn read(path: &Path) -> Result<Self> {
        let (ds, skipped) = Self::read_lenient(path)?;
        if let Some(s) = skipped.first() {
            return Err(Error::Record {
                line: s.line,
                reason: s.reason.clone(),
            });
        }
        Ok(ds)
    }

    /// Read the header strictly and skip unparseable records, reporting them.
    pub fn read_lenient(path: &Path) -> Result<(Self, Vec<SkippedRecord>)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e))?,
            None => {
                return Err(Error::Record {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
        };
        let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| Error::Record {
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(Error::Record {
                line: 1,
                reason: format!("unsupported dataset format {} v{}", header.format, header.version),
            });
        }
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        for (k, line) in lines.enumerate() {
            let line_no = k + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<FrameRecord>(&line) {
                Ok(r) if r.vehicle.is_finite() && r.truth.is_finite() => records.push(r),
                Ok(_) => skipped.push(SkippedRecord {
                    line: line_no,
                    reason: "non-finite vehicle state".into(),
                }),
                Err(e) => skipped.push(SkippedRecord {
                    line: line_no,
                    reason: e.to_string(),
                }),
            }
        }
        for s in &skipped {
            log::warn!("{}:{}: skipped record: {}", path.display(), s.line, s.reason);
        }
        Ok((Self { header, records }, skipped))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RadarDetection;

    fn sample() -> Dataset {
        let header = DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            world: "w".into(),
            route: 0,
            seed: 1,
            frame_rate: 20.0,
            frame_count: 2,
            extrinsics: SensorExtrinsics::default(),
        };
        let rec = |id: u64| FrameRecord {
            frame_id: id,
            t: id as f64 * 0.05,
            radar: vec![RadarFrame {
                timestamp: id as f64 * 0.05,
                sensor_id: "front".into(),
                detections: vec![RadarDetection::planar(2.0 + 0.1, -0.3, -0.47)],
            }],
            vehicle: VehicleState::new(Pose2D::new(0.1, 0.2, 0.3), [0.5, 0.0], 0.01).unwrap(),
            truth: Pose2D::new(0.1, 0.2, 0.3),
            lidar: vec![[1.0 / 3.0, 2.0]],
        };
        Dataset {
            header,
            records: vec![rec(1), rec(2)],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DATASET_FILE);
        let ds = sample();
        ds.write(&path).unwrap();
        assert_eq!(Dataset::read(&path).unwrap(), ds);
    }

    #[test]
    fn corrupt_record_is_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DATASET_FILE);
        sample().write(&path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"frame_id\": 3, \"t\": \n");
        std::fs::write(&path, text).unwrap();
        let (ds, skipped) = Dataset::read_lenient(&path).unwrap();
        assert_eq!(ds.records.len(), 2);
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].line, 4);
        assert!(matches!(Dataset::read(&path), Err(Error::Record { line: 4, .. })));
    }

    #[test]
    fn bad_header_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DATASET_FILE);
        std::fs::write(&path, "{\"format\":\"other\"}\n").unwrap();
        assert!(Dataset::read_lenient(&path).is_err());
        std::fs::write(&path, "").unwrap();
        assert!(Dataset::read_lenient(&path).is_err());
    }
}
