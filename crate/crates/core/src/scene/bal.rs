//! Reader and writer for the plain-text "Bundle Adjustment in the Large" format.
//!
//! ```text
//! <num_cameras> <num_points> <num_observations>
//! <camera_index> <point_index> <x> <y>      (num_observations lines)
//! <camera parameters>                       (9 per camera)
//! <point parameters>                        (3 per point)
//! ```
//!
//! The reader only cares about token order, so any whitespace layout is accepted.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use super::{BAProblem, CameraPose, Observation, Point3, SceneError, CAMERA_PARAMS, POINT_PARAMS};

#[derive(Debug, Error)]
pub enum BalError {
    #[error("line {line}: malformed header, expected `<num_cameras> <num_points> <num_observations>`")]
    MalformedHeader { line: usize },
    #[error("line {line}: expected {expected}, found {found}")]
    CountMismatch { line: usize, expected: String, found: String },
    #[error("line {line}: index {index} out of range for {kind} count {count}")]
    OutOfRange { line: usize, kind: &'static str, index: usize, count: usize },
    #[error("line {line}: non-numeric token `{token}`")]
    NonNumeric { line: usize, token: String },
    #[error("invalid problem: {0}")]
    Invalid(#[from] SceneError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Tokens {
    items: Vec<(usize, String)>,
    pos: usize,
    last_line: usize,
}

impl Tokens {
    fn read(reader: impl BufRead) -> Result<Self, BalError> {
        let mut items = Vec::new();
        let mut last_line = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            last_line = i + 1;
            items.extend(line.split_whitespace().map(|t| (i + 1, t.to_string())));
        }
        Ok(Self { items, pos: 0, last_line })
    }

    fn next_raw(&mut self, what: &str) -> Result<(usize, &str), BalError> {
        match self.items.get(self.pos) {
            Some((line, tok)) => {
                self.pos += 1;
                Ok((*line, tok.as_str()))
            }
            None => Err(BalError::CountMismatch {
                line: self.last_line,
                expected: what.to_string(),
                found: "end of input".to_string(),
            }),
        }
    }

    fn next_f64(&mut self, what: &str) -> Result<f64, BalError> {
        let (line, tok) = self.next_raw(what)?;
        tok.parse::<f64>().map_err(|_| BalError::NonNumeric { line, token: tok.to_string() })
    }

    fn next_index(&mut self, what: &str) -> Result<(usize, usize), BalError> {
        let (line, tok) = self.next_raw(what)?;
        let idx = tok.parse::<usize>().map_err(|_| BalError::NonNumeric { line, token: tok.to_string() })?;
        Ok((line, idx))
    }
}

/// Parses a BAL stream. The resulting problem has unit pixel noise and no
/// ground truth.
pub fn parse_bal(reader: impl Read) -> Result<BAProblem, BalError> {
    let mut tokens = Tokens::read(BufReader::new(reader))?;

    let header_line = tokens.items.first().map(|(l, _)| *l).unwrap_or(1);
    let header: Vec<usize> = tokens
        .items
        .iter()
        .take_while(|(l, _)| *l == header_line)
        .map(|(_, t)| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| BalError::MalformedHeader { line: header_line })?;
    if header.len() != 3 {
        return Err(BalError::MalformedHeader { line: header_line });
    }
    tokens.pos = 3;
    let (num_cameras, num_points, num_observations) = (header[0], header[1], header[2]);

    let mut observations = Vec::with_capacity(num_observations);
    for _ in 0..num_observations {
        let (line, camera_index) = tokens.next_index("observation camera index")?;
        if camera_index >= num_cameras {
            return Err(BalError::OutOfRange { line, kind: "camera", index: camera_index, count: num_cameras });
        }
        let (line, point_index) = tokens.next_index("observation point index")?;
        if point_index >= num_points {
            return Err(BalError::OutOfRange { line, kind: "point", index: point_index, count: num_points });
        }
        let x = tokens.next_f64("observation x")?;
        let y = tokens.next_f64("observation y")?;
        observations.push(Observation { camera_index, point_index, pixel: Vector2::new(x, y) });
    }

    let mut cameras = Vec::with_capacity(num_cameras);
    for _ in 0..num_cameras {
        let mut p = [0.0; CAMERA_PARAMS];
        for v in p.iter_mut() {
            *v = tokens.next_f64("camera parameter")?;
        }
        cameras.push(CameraPose::from_params(&p));
    }

    let mut points = Vec::with_capacity(num_points);
    for _ in 0..num_points {
        let mut p = [0.0; POINT_PARAMS];
        for v in p.iter_mut() {
            *v = tokens.next_f64("point coordinate")?;
        }
        points.push(Point3::from(Vector3::new(p[0], p[1], p[2])));
    }

    if let Some((line, tok)) = tokens.items.get(tokens.pos) {
        return Err(BalError::CountMismatch {
            line: *line,
            expected: "end of input".to_string(),
            found: format!("extra token `{tok}`"),
        });
    }

    Ok(BAProblem::new(cameras, points, observations, 1.0, None)?)
}

/// Writes `problem` in BAL layout, one parameter per line after the observations.
pub fn serialize_bal(problem: &BAProblem, mut writer: impl Write) -> io::Result<()> {
    writeln!(writer, "{} {} {}", problem.num_cameras(), problem.num_points(), problem.observations().len())?;
    for obs in problem.observations() {
        writeln!(writer, "{} {} {:.16e} {:.16e}", obs.camera_index, obs.point_index, obs.pixel.x, obs.pixel.y)?;
    }
    for cam in problem.cameras() {
        for v in cam.to_params() {
            writeln!(writer, "{v:.16e}")?;
        }
    }
    for pt in problem.points() {
        for v in pt.position.iter() {
            writeln!(writer, "{v:.16e}")?;
        }
    }
    Ok(())
}

pub fn read_bal_file(path: impl AsRef<Path>) -> Result<BAProblem, BalError> {
    parse_bal(File::open(path)?)
}

pub fn write_bal_file(problem: &BAProblem, path: impl AsRef<Path>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serialize_bal(problem, &mut w)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic, SyntheticConfig};

    const TINY: &str = "2 3 6
0 0 -1.5 2.0
1 0 0.5 1.0
0 1 3.0 -4.0
1 1 1e1 2.5
0 2 0 0
1 2 -0.25 0.125
0.1
0.2
0.3
1
2
3
500
-0.1
0.01
0 0 0 0 0 -10 400 0 0
1 2 3
4 5 6
7 8 9
";

    #[test]
    fn parses_header_and_blocks() {
        let p = parse_bal(TINY.as_bytes()).unwrap();
        assert_eq!((p.num_cameras(), p.num_points(), p.observations().len()), (2, 3, 6));
        let c = p.cameras()[0];
        assert_eq!(c.to_params(), [0.1, 0.2, 0.3, 1.0, 2.0, 3.0, 500.0, -0.1, 0.01]);
        assert_eq!(p.cameras()[1].translation.z, -10.0);
        assert_eq!(p.points()[2].position, Vector3::new(7.0, 8.0, 9.0));
        assert_eq!(p.observations()[3].pixel, Vector2::new(10.0, 2.5));
        assert_eq!(p.pixel_sigma(), 1.0);
        assert!(p.ground_truth().is_none());
    }

    #[test]
    fn serialize_emits_count_header() {
        let p = parse_bal(TINY.as_bytes()).unwrap();
        let mut out = Vec::new();
        serialize_bal(&p, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next(), Some("2 3 6"));
        assert_eq!(text.lines().count(), 1 + 6 + 2 * 9 + 3 * 3);
    }

    #[test]
    fn synthetic_round_trip_is_exact() {
        let p = generate_synthetic(&SyntheticConfig::new(5, 7, 1.0, 0.1, 9)).unwrap();
        let mut out = Vec::new();
        serialize_bal(&p, &mut out).unwrap();
        let q = parse_bal(out.as_slice()).unwrap();
        for (a, b) in p.cameras().iter().zip(q.cameras()) {
            for (x, y) in a.to_params().iter().zip(b.to_params()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
        for (a, b) in p.points().iter().zip(q.points()) {
            assert!((a.position - b.position).amax() <= 1e-12);
        }
        for (a, b) in p.observations().iter().zip(q.observations()) {
            assert_eq!((a.camera_index, a.point_index), (b.camera_index, b.point_index));
            assert!((a.pixel - b.pixel).amax() <= 1e-12 * a.pixel.amax().max(1.0));
        }
    }

    #[test]
    fn malformed_header() {
        let err = parse_bal("2 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, BalError::MalformedHeader { line: 1 }));
        let err = parse_bal("two 3 6\n".as_bytes()).unwrap_err();
        assert!(matches!(err, BalError::MalformedHeader { line: 1 }));
    }

    #[test]
    fn truncated_stream_is_a_count_mismatch() {
        let truncated: String = TINY.lines().take(19).collect::<Vec<_>>().join("\n");
        let err = parse_bal(truncated.as_bytes()).unwrap_err();
        assert!(matches!(err, BalError::CountMismatch { .. }), "{err}");
    }

    #[test]
    fn trailing_tokens_are_a_count_mismatch() {
        let text = format!("{TINY}42\n");
        let err = parse_bal(text.as_bytes()).unwrap_err();
        assert!(matches!(err, BalError::CountMismatch { line: 21, .. }), "{err}");
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let text = TINY.replacen("1 1 1e1", "1 7 1e1", 1);
        let err = parse_bal(text.as_bytes()).unwrap_err();
        assert!(matches!(err, BalError::OutOfRange { line: 5, kind: "point", index: 7, .. }), "{err}");
    }

    #[test]
    fn non_numeric_token_reports_line() {
        let text = TINY.replacen("500", "5x0", 1);
        let err = parse_bal(text.as_bytes()).unwrap_err();
        assert!(matches!(err, BalError::NonNumeric { line: 14, .. }), "{err}");
    }
}
