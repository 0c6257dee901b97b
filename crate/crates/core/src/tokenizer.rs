//! Text encoding of keypoints and actions for language-model policies.
//!
//! Everything is written as integer millimeters, one point or action per
//! line, so a policy sees short integer tokens instead of long decimals:
//!
//! ```text
//! <preamble>
//!
//! KEYPOINTS:
//! 123 -57 400
//! ...
//! ACTIONS:
//! 412 0 300 412 40 200 412 -40 200 0
//! ...
//!
//! QUERY:
//! 130 -60 400
//! ...
//! ```
//!
//! Decoding is lenient about surrounding prose: it takes the first run of
//! lines that each hold exactly ten integers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{read_file, Action, Demonstration, KeypointSet, Point3, Source, Trajectory, TrajectoryError, ACTION_DIM};

/// Instruction text placed in front of every encoded context.
pub const DEFAULT_PREAMBLE: &str = include_str!("../prompts/default_preamble.txt");

/// Coordinates beyond this magnitude (meters) are rejected before quantization.
pub const MAX_COORDINATE: f64 = 10.0;

const MM_PER_M: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenError {
    #[error("context has no demonstrations")]
    NoDemonstrations,
    #[error("keypoint count mismatch: {what} has {found}, expected {expected}")]
    KeypointCount { what: String, found: usize, expected: usize },
    #[error("coordinate {value} m exceeds the {MAX_COORDINATE} m encoding range")]
    OutOfRange { value: f64 },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Demonstrations plus the keypoints of the scene to act in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub demonstrations: Vec<Demonstration>,
    pub query_keypoints: KeypointSet,
}

impl PolicyContext {
    pub fn new(demonstrations: Vec<Demonstration>, query_keypoints: KeypointSet) -> Result<Self, TokenError> {
        let ctx = Self { demonstrations, query_keypoints };
        ctx.validate()?;
        Ok(ctx)
    }

    /// At least one demonstration, and every keypoint set has the query's size.
    pub fn validate(&self) -> Result<(), TokenError> {
        if self.demonstrations.is_empty() {
            return Err(TokenError::NoDemonstrations);
        }
        let expected = self.query_keypoints.len();
        for (i, d) in self.demonstrations.iter().enumerate() {
            if d.keypoints.len() != expected {
                return Err(TokenError::KeypointCount {
                    what: format!("demonstration {i}"),
                    found: d.keypoints.len(),
                    expected,
                });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TokenError> {
        let ctx: Self = serde_json::from_str(text).map_err(|e| TrajectoryError::Json(e.to_string()))?;
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn load(path: &Path) -> Result<Self, TokenError> {
        Self::from_json(&read_file(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("context serializes")
    }
}

/// Encoder carrying the instruction preamble.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    preamble: String,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new(DEFAULT_PREAMBLE)
    }
}

impl Tokenizer {
    pub fn new(preamble: impl Into<String>) -> Self {
        Self { preamble: preamble.into() }
    }

    /// Reads the preamble from a UTF-8 text file.
    pub fn from_file(path: &Path) -> Result<Self, TokenError> {
        Ok(Self::new(read_file(path)?))
    }

    pub fn preamble(&self) -> &str {
        &self.preamble
    }

    pub fn encode_context(&self, context: &PolicyContext) -> Result<String, TokenError> {
        context.validate()?;
        let mut out = String::new();
        out.push_str(self.preamble.trim_end());
        out.push('\n');
        for demo in &context.demonstrations {
            out.push_str("\nKEYPOINTS:\n");
            write_keypoints(&mut out, &demo.keypoints)?;
            out.push_str("ACTIONS:\n");
            out.push_str(&encode_actions(&demo.trajectory)?);
        }
        out.push_str("\nQUERY:\n");
        write_keypoints(&mut out, &context.query_keypoints)?;
        Ok(out)
    }
}

/// Encodes with the default preamble.
pub fn encode_context(context: &PolicyContext) -> Result<String, TokenError> {
    Tokenizer::default().encode_context(context)
}

/// Round-half-away-from-zero to whole millimeters.
pub fn quantize(meters: f64) -> Result<i64, TokenError> {
    if !meters.is_finite() || meters.abs() > MAX_COORDINATE {
        return Err(TokenError::OutOfRange { value: meters });
    }
    Ok((meters * MM_PER_M).round() as i64)
}

fn write_point(out: &mut String, p: &Point3) -> Result<(), TokenError> {
    write!(out, "{} {} {}", quantize(p[0])?, quantize(p[1])?, quantize(p[2])?).expect("write to String");
    Ok(())
}

fn write_keypoints(out: &mut String, keypoints: &KeypointSet) -> Result<(), TokenError> {
    for p in keypoints.points() {
        write_point(out, p)?;
        out.push('\n');
    }
    Ok(())
}

/// One line per action: nine millimeter coordinates and the gripper bit.
pub fn encode_actions(trajectory: &Trajectory) -> Result<String, TokenError> {
    let mut out = String::new();
    for a in trajectory.actions() {
        for (k, p) in a.points().iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            write_point(&mut out, p)?;
        }
        writeln!(out, " {}", u8::from(a.is_closed())).expect("write to String");
    }
    Ok(out)
}

/// Parses a line of exactly ten integers into an action.
fn parse_action_line(line: &str) -> Option<Result<Action, TokenError>> {
    let tokens: Vec<&str> = line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .collect();
    if tokens.len() != ACTION_DIM {
        return None;
    }
    let ints: Vec<i64> = tokens.iter().map(|t| t.parse().ok()).collect::<Option<_>>()?;
    let g = ints[ACTION_DIM - 1];
    if g != 0 && g != 1 {
        return Some(Err(TokenError::Malformed(format!("gripper token {g} is not 0 or 1 in line {line:?}"))));
    }
    let m: Vec<f64> = ints[..9].iter().map(|&v| v as f64 / MM_PER_M).collect();
    Some(Ok(Action::new([m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]], g as f64)))
}

/// Extracts the first block of consecutive action lines from model output.
pub fn decode_trajectory(text: &str) -> Result<Trajectory, TokenError> {
    let mut block: Vec<Action> = Vec::new();
    for line in text.lines() {
        match parse_action_line(line.trim()) {
            Some(action) => block.push(action?),
            None if block.len() >= 2 => break,
            None => block.clear(),
        }
    }
    if block.len() < 2 {
        return Err(TokenError::Malformed("no block of at least two 10-integer action lines".into()));
    }
    Ok(Trajectory::new(block)?.with_source(Source::Sampled))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn action(x: f64, g: f64) -> Action {
        Action::new([x, 0.02, 0.3], [x, 0.06, 0.2], [x, -0.02, 0.2], g)
    }

    fn context() -> PolicyContext {
        let demo = Demonstration::new(
            KeypointSet::new(vec![[0.1234, -0.0567, 0.4], [0.0, 0.0, 0.0]]).unwrap(),
            Trajectory::new(vec![action(0.1, 0.0), action(0.2, 1.0)]).unwrap(),
        )
        .unwrap();
        PolicyContext::new(vec![demo], KeypointSet::new(vec![[0.2, 0.1, 0.0], [0.3, 0.1, 0.0]]).unwrap()).unwrap()
    }

    #[test]
    fn keypoint_quantization() {
        let text = encode_context(&context()).unwrap();
        assert!(text.contains("\n123 -57 400\n"), "{text}");
        assert!(text.contains("KEYPOINTS:\n") && text.contains("ACTIONS:\n") && text.contains("QUERY:\n"));
        assert!(text.starts_with(DEFAULT_PREAMBLE.trim_end()));
    }

    #[test]
    fn half_millimeters_round_away_from_zero() {
        assert_eq!(quantize(0.0025).unwrap(), 3);
        assert_eq!(quantize(-0.0025).unwrap(), -3);
        assert_eq!(quantize(-0.0004).unwrap(), 0);
        assert!(matches!(quantize(10.5), Err(TokenError::OutOfRange { .. })));
        assert!(quantize(f64::NAN).is_err());
    }

    #[test]
    fn encoding_is_deterministic() {
        assert_eq!(encode_context(&context()).unwrap(), encode_context(&context()).unwrap());
        let custom = Tokenizer::new("Act.\n");
        assert!(custom.encode_context(&context()).unwrap().starts_with("Act.\n\nKEYPOINTS:"));
    }

    #[test]
    fn context_validation() {
        let mut ctx = context();
        ctx.demonstrations.clear();
        assert_eq!(encode_context(&ctx), Err(TokenError::NoDemonstrations));
        let mut ctx = context();
        ctx.query_keypoints = KeypointSet::new(vec![[0.0; 3]]).unwrap();
        assert!(matches!(encode_context(&ctx), Err(TokenError::KeypointCount { .. })));
        let mut ctx = context();
        ctx.query_keypoints = KeypointSet::new(vec![[11.0, 0.0, 0.0], [0.0; 3]]).unwrap();
        assert!(matches!(encode_context(&ctx), Err(TokenError::OutOfRange { .. })));
    }

    #[test]
    fn context_json_roundtrip() {
        let ctx = context();
        assert_eq!(PolicyContext::from_json(&ctx.to_json()).unwrap(), ctx);
    }

    #[test]
    fn decode_skips_prose() {
        let t = Trajectory::new(vec![action(0.1, 0.0), action(0.15, 0.0), action(0.2, 1.0)]).unwrap();
        let reply = format!("Sure! Here is the trajectory:\n\nACTIONS:\n{}\nLet me know.", encode_actions(&t).unwrap());
        let back = decode_trajectory(&reply).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.source(), Some(Source::Sampled));
        for (a, b) in t.actions().iter().zip(back.actions()) {
            assert!(a.to_channels().iter().zip(b.to_channels()).all(|(x, y)| (x - y).abs() <= 5e-4));
        }
    }

    #[test]
    fn decode_accepts_commas_and_skips_stray_lines() {
        let text = "1 2 3 4 5 6 7 8 9 0\nnot an action\n1, 2, 3, 4, 5, 6, 7, 8, 9, 0\n10 20 30 40 50 60 70 80 90 1\n";
        let t = decode_trajectory(text).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.first().p0, [0.001, 0.002, 0.003]);
        assert_eq!(t.last().g, 1.0);
    }

    #[test]
    fn decode_rejects_bad_arity_and_gripper() {
        assert!(matches!(decode_trajectory("1 2 3 4 5 6 7 8 9\n1 2 3 4 5 6 7 8 9\n"), Err(TokenError::Malformed(_))));
        assert!(matches!(decode_trajectory("1 2 3 4 5 6 7 8 9 2\n1 2 3 4 5 6 7 8 9 0\n"), Err(TokenError::Malformed(_))));
        assert!(matches!(decode_trajectory("I cannot help with that."), Err(TokenError::Malformed(_))));
        assert!(matches!(decode_trajectory("1 2 3 4 5 6 7 8 9 0\n"), Err(TokenError::Malformed(_))));
        assert!(matches!(decode_trajectory("1 2 3 4 5 6 7 8 9.5 0\n1 2 3 4 5 6 7 8 9 0\n"), Err(TokenError::Malformed(_))));
    }
}
