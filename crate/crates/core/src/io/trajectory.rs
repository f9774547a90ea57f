//! Line-oriented trajectory files: one JSON header line, then one JSON
//! record per frame.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const TRAJECTORY_FORMAT: &str = "softfem-trajectory";
pub const TRAJECTORY_VERSION: &str = "1.0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub format: String,
    pub version: String,
    pub scene_hash: String,
    pub dof: usize,
    /// One label per recorded point, in frame order.
    pub markers: Vec<String>,
}

impl TrajectoryHeader {
    pub fn new(scene_hash: impl Into<String>, dof: usize, markers: Vec<String>) -> Self {
        TrajectoryHeader {
            format: TRAJECTORY_FORMAT.to_string(),
            version: TRAJECTORY_VERSION.to_string(),
            scene_hash: scene_hash.into(),
            dof,
            markers,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEnergies {
    pub kinetic: f64,
    pub elastic: f64,
    pub gravity: f64,
    pub muscle: f64,
}

impl FrameEnergies {
    pub fn mechanical(&self) -> f64 {
        self.kinetic + self.elastic + self.gravity
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub t: f64,
    pub positions: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energies: Option<FrameEnergies>,
    pub max_penetration: f64,
    pub solver_iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub frames: Vec<Frame>,
}

impl Trajectory {
    pub fn new(header: TrajectoryHeader) -> Self {
        Trajectory {
            header,
            frames: Vec::new(),
        }
    }

    /// Checks record shape and time ordering.
    pub fn validate(&self) -> Result<()> {
        let n = self.header.markers.len();
        let energies = self.frames.first().map(|f| f.energies.is_some());
        let mut prev = f64::NEG_INFINITY;
        for (i, f) in self.frames.iter().enumerate() {
            let line = i + 2;
            if f.positions.len() != n {
                return Err(SimError::MalformedTrajectory {
                    line,
                    message: format!("expected {n} positions, found {}", f.positions.len()),
                });
            }
            if Some(f.energies.is_some()) != energies {
                return Err(SimError::MalformedTrajectory {
                    line,
                    message: "energy records must be present in all frames or none".into(),
                });
            }
            if !(f.t > prev) {
                return Err(SimError::MalformedTrajectory {
                    line,
                    message: format!("time {} does not increase", f.t),
                });
            }
            prev = f.t;
        }
        Ok(())
    }
}

/// Append-only frame sink.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W, header: &TrajectoryHeader) -> Result<Self> {
        write_line(&mut out, header)?;
        Ok(TrajectoryWriter { out })
    }

    pub fn push(&mut self, frame: &Frame) -> Result<()> {
        write_line(&mut self.out, frame)
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush().map_err(|e| io_error("<trajectory>", e))?;
        Ok(self.out)
    }
}

fn io_error(path: &str, source: std::io::Error) -> SimError {
    SimError::Io {
        path: path.into(),
        source,
    }
}

fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| io_error("<trajectory>", e.into()))?;
    out.write_all(b"\n").map_err(|e| io_error("<trajectory>", e))
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    let file = File::create(path).map_err(|e| io_error(&path.display().to_string(), e))?;
    let mut w = TrajectoryWriter::new(BufWriter::new(file), &trajectory.header)?;
    for f in &trajectory.frames {
        w.push(f)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_trajectory_from(reader: impl BufRead) -> Result<Trajectory> {
    let mut lines = reader.lines().enumerate();
    let malformed = |line: usize, message: String| SimError::MalformedTrajectory { line, message };
    let (_, first) = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?;
    let first = first.map_err(|e| malformed(1, e.to_string()))?;
    let header: TrajectoryHeader =
        serde_json::from_str(&first).map_err(|e| malformed(1, e.to_string()))?;
    if header.format != TRAJECTORY_FORMAT {
        return Err(malformed(1, format!("unknown format {:?}", header.format)));
    }
    if header.version.split('.').next() != TRAJECTORY_VERSION.split('.').next() {
        return Err(malformed(1, format!("unsupported version {:?}", header.version)));
    }
    let mut frames = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| malformed(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(serde_json::from_str(&line).map_err(|e| malformed(i + 1, e.to_string()))?);
    }
    let traj = Trajectory { header, frames };
    traj.validate()?;
    Ok(traj)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| io_error(&path.display().to_string(), e))?;
    read_trajectory_from(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(frames: usize) -> Trajectory {
        let mut t = Trajectory::new(TrajectoryHeader::new("abc", 6, vec!["tip/0".into()]));
        for i in 0..frames {
            t.frames.push(Frame {
                t: i as f64 * 0.01,
                positions: vec![[0.1 * i as f64, -1.0 / 3.0, 1e-300]],
                energies: None,
                max_penetration: 0.0,
                solver_iterations: i,
            });
        }
        t
    }

    fn roundtrip(t: &Trajectory) -> Trajectory {
        let mut buf = Vec::new();
        let mut w = TrajectoryWriter::new(&mut buf, &t.header).unwrap();
        for f in &t.frames {
            w.push(f).unwrap();
        }
        w.finish().unwrap();
        read_trajectory_from(buf.as_slice()).unwrap()
    }

    #[test]
    fn round_trips() {
        for n in [0, 1, 1000] {
            let t = sample(n);
            assert_eq!(roundtrip(&t), t);
        }
    }

    #[test]
    fn malformed_line_is_reported() {
        let mut buf = Vec::new();
        TrajectoryWriter::new(&mut buf, &sample(0).header).unwrap();
        buf.extend_from_slice(b"{\"t\": oops}\n");
        match read_trajectory_from(buf.as_slice()) {
            Err(SimError::MalformedTrajectory { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_increasing_time_rejected() {
        let mut t = sample(2);
        t.frames[1].t = 0.0;
        assert!(t.validate().is_err());
    }
}
