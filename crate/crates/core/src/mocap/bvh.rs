//! BVH (BioVision Hierarchy) reader and writer.
//!
//! The reader accepts any rotation-channel order and optional position
//! channels on the root. The writer always emits the canonical layout:
//! root `Xposition Yposition Zposition Zrotation Yrotation Xrotation`,
//! other joints `Zrotation Yrotation Xrotation`, values at 6 decimal places.

use glam::{DQuat, DVec3, EulerRot};
use thiserror::Error;

use super::{Channel, Frame, Joint, RawClip, Skeleton};

#[derive(Debug, Error)]
pub enum BvhError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("joint `{joint}` (line {line}): unsupported channel spec: {msg}")]
    UnsupportedChannels { joint: String, line: usize, msg: String },
    #[error("motion row {row}: expected {expected} values, found {got}")]
    FrameArity { row: usize, expected: usize, got: usize },
    #[error("frame count mismatch: header declares {expected}, found {got} rows")]
    FrameCount { expected: usize, got: usize },
    #[error("invalid clip: {0}")]
    InvalidClip(String),
}

struct Token<'a> {
    text: &'a str,
    line: usize,
    col: usize,
}

struct Tokenizer<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
}

impl<'a> Tokenizer<'a> {
    fn new(text: &'a str) -> Self {
        let mut tokens = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut col = 0;
            for part in line.split_whitespace() {
                // Recover the column of this token within the line.
                let found = line[col..].find(part).map(|o| col + o).unwrap_or(col);
                tokens.push(Token { text: part, line: lineno + 1, col: found + 1 });
                col = found + part.len();
            }
        }
        Tokenizer { tokens, pos: 0 }
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&Token<'a>> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn last_pos(&self) -> (usize, usize) {
        self.tokens
            .last()
            .map(|t| (t.line, t.col + t.text.len()))
            .unwrap_or((1, 1))
    }

    fn expect(&mut self, word: &str) -> Result<(), BvhError> {
        match self.next() {
            Some(t) if t.text == word => Ok(()),
            Some(t) => Err(BvhError::Syntax {
                line: t.line,
                col: t.col,
                msg: format!("expected `{}`, found `{}`", word, t.text),
            }),
            None => {
                let (line, col) = self.last_pos();
                Err(BvhError::Syntax { line, col, msg: format!("expected `{word}`, found end of input") })
            }
        }
    }

    fn word(&mut self, what: &str) -> Result<(String, usize, usize), BvhError> {
        match self.next() {
            Some(t) => Ok((t.text.to_string(), t.line, t.col)),
            None => {
                let (line, col) = self.last_pos();
                Err(BvhError::Syntax { line, col, msg: format!("expected {what}, found end of input") })
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<f64, BvhError> {
        let (text, line, col) = self.word(what)?;
        text.parse::<f64>().map_err(|_| BvhError::Syntax {
            line,
            col,
            msg: format!("expected {what}, found `{text}`"),
        })
    }

    fn integer(&mut self, what: &str) -> Result<usize, BvhError> {
        let (text, line, col) = self.word(what)?;
        text.parse::<usize>().map_err(|_| BvhError::Syntax {
            line,
            col,
            msg: format!("expected {what}, found `{text}`"),
        })
    }
}

fn parse_channel(name: &str) -> Option<Channel> {
    match name {
        "Xposition" => Some(Channel::XPosition),
        "Yposition" => Some(Channel::YPosition),
        "Zposition" => Some(Channel::ZPosition),
        "Xrotation" => Some(Channel::XRotation),
        "Yrotation" => Some(Channel::YRotation),
        "Zrotation" => Some(Channel::ZRotation),
        _ => None,
    }
}

/// Parse a BVH document into a [`RawClip`].
pub fn parse_bvh(text: &str) -> Result<RawClip, BvhError> {
    let mut tk = Tokenizer::new(text);
    tk.expect("HIERARCHY")?;

    let mut joints: Vec<Joint> = Vec::new();
    parse_joint(&mut tk, None, &mut joints, true)?;

    tk.expect("MOTION")?;
    // Accept both `Frames:` as one token and `Frames :` split across two.
    expect_labeled(&mut tk, "Frames")?;
    let frame_count = tk.integer("frame count")?;
    expect_labeled2(&mut tk, "Frame", "Time")?;
    let frame_time = tk.number("frame time")?;
    if frame_time <= 0.0 {
        let (line, col) = tk.last_pos();
        return Err(BvhError::Syntax { line, col, msg: format!("frame time must be positive, got {frame_time}") });
    }

    let total_channels: usize = joints.iter().map(|j| j.channels.len()).sum();

    let mut frames = Vec::with_capacity(frame_count);
    let mut row = 0usize;
    while let Some(t) = tk.peek() {
        let row_line = t.line;
        let mut values = Vec::with_capacity(total_channels);
        // One motion row per source line.
        while let Some(t) = tk.peek() {
            if t.line != row_line {
                break;
            }
            values.push(tk.number("motion value")?);
        }
        row += 1;
        if values.len() != total_channels {
            return Err(BvhError::FrameArity { row, expected: total_channels, got: values.len() });
        }
        frames.push(decode_row(&joints, &values));
    }
    if frames.len() != frame_count {
        return Err(BvhError::FrameCount { expected: frame_count, got: frames.len() });
    }

    let skeleton = Skeleton { joints };
    let clip = RawClip { skeleton, frame_time, frames };
    clip.validate().map_err(BvhError::InvalidClip)?;
    Ok(clip)
}

fn expect_labeled(tk: &mut Tokenizer, label: &str) -> Result<(), BvhError> {
    let (word, line, col) = tk.word(label)?;
    if word == format!("{label}:") {
        return Ok(());
    }
    if word == label {
        return tk.expect(":");
    }
    Err(BvhError::Syntax { line, col, msg: format!("expected `{label}:`, found `{word}`") })
}

fn expect_labeled2(tk: &mut Tokenizer, first: &str, second: &str) -> Result<(), BvhError> {
    tk.expect(first)?;
    expect_labeled(tk, second)
}

fn parse_joint(
    tk: &mut Tokenizer,
    parent: Option<usize>,
    joints: &mut Vec<Joint>,
    root: bool,
) -> Result<(), BvhError> {
    let keyword = if root { "ROOT" } else { "JOINT" };
    tk.expect(keyword)?;
    let (name, _, _) = tk.word("joint name")?;
    tk.expect("{")?;
    tk.expect("OFFSET")?;
    let offset = DVec3::new(
        tk.number("offset x")?,
        tk.number("offset y")?,
        tk.number("offset z")?,
    );
    let (_, ch_line, ch_col) = {
        let t = tk.word("CHANNELS")?;
        if t.0 != "CHANNELS" {
            return Err(BvhError::Syntax { line: t.1, col: t.2, msg: format!("expected `CHANNELS`, found `{}`", t.0) });
        }
        t
    };
    let n = tk.integer("channel count")?;
    let mut channels = Vec::with_capacity(n);
    for _ in 0..n {
        let (word, line, col) = tk.word("channel name")?;
        let ch = parse_channel(&word).ok_or(BvhError::Syntax {
            line,
            col,
            msg: format!("unknown channel `{word}`"),
        })?;
        channels.push(ch);
    }
    if channels.iter().any(|c| c.is_position()) && !root {
        return Err(BvhError::UnsupportedChannels {
            joint: name,
            line: ch_line.max(1),
            msg: format!("position channels are only supported on the root (column {ch_col})"),
        });
    }

    let index = joints.len();
    joints.push(Joint { name, parent, offset, channels, end_site: false });

    loop {
        let t = tk.peek().ok_or_else(|| {
            let (line, col) = tk.last_pos();
            BvhError::Syntax { line, col, msg: "unterminated joint block".into() }
        })?;
        match t.text {
            "JOINT" => parse_joint(tk, Some(index), joints, false)?,
            "End" => {
                tk.next();
                tk.expect("Site")?;
                tk.expect("{")?;
                tk.expect("OFFSET")?;
                let off = DVec3::new(
                    tk.number("offset x")?,
                    tk.number("offset y")?,
                    tk.number("offset z")?,
                );
                tk.expect("}")?;
                let parent_name = joints[index].name.clone();
                joints.push(Joint {
                    name: format!("{parent_name}_End"),
                    parent: Some(index),
                    offset: off,
                    channels: Vec::new(),
                    end_site: true,
                });
            }
            "}" => {
                tk.next();
                return Ok(());
            }
            other => {
                let (line, col) = (t.line, t.col);
                return Err(BvhError::Syntax {
                    line,
                    col,
                    msg: format!("expected `JOINT`, `End Site` or `}}`, found `{other}`"),
                });
            }
        }
    }
}

fn decode_row(joints: &[Joint], values: &[f64]) -> Frame {
    let mut rotations = Vec::with_capacity(joints.len());
    let mut root_pos = DVec3::ZERO;
    let mut cursor = 0usize;
    for joint in joints {
        let mut q = DQuat::IDENTITY;
        for &ch in &joint.channels {
            let v = values[cursor];
            cursor += 1;
            match ch {
                Channel::XPosition => root_pos.x = v,
                Channel::YPosition => root_pos.y = v,
                Channel::ZPosition => root_pos.z = v,
                Channel::XRotation => q *= DQuat::from_rotation_x(v.to_radians()),
                Channel::YRotation => q *= DQuat::from_rotation_y(v.to_radians()),
                Channel::ZRotation => q *= DQuat::from_rotation_z(v.to_radians()),
            }
        }
        rotations.push(q.normalize());
    }
    Frame { root_pos, rotations }
}

/// Serialize a clip to a canonical BVH document.
pub fn write_bvh(clip: &RawClip) -> Result<String, BvhError> {
    clip.validate().map_err(BvhError::InvalidClip)?;
    let skel = &clip.skeleton;
    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    let root = skel
        .joints
        .iter()
        .position(|j| j.parent.is_none())
        .ok_or_else(|| BvhError::InvalidClip("skeleton has no root".into()))?;
    write_joint(skel, root, 0, &mut out);

    out.push_str("MOTION\n");
    out.push_str(&format!("Frames: {}\n", clip.frames.len()));
    out.push_str(&format!("Frame Time: {}\n", clip.frame_time));
    for frame in &clip.frames {
        let mut values: Vec<String> = Vec::new();
        for (i, joint) in skel.joints.iter().enumerate() {
            if joint.end_site {
                continue;
            }
            if joint.parent.is_none() {
                values.push(fmt6(frame.root_pos.x));
                values.push(fmt6(frame.root_pos.y));
                values.push(fmt6(frame.root_pos.z));
            }
            let (z, y, x) = frame.rotations[i].to_euler(EulerRot::ZYX);
            values.push(fmt6(z.to_degrees()));
            values.push(fmt6(y.to_degrees()));
            values.push(fmt6(x.to_degrees()));
        }
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    Ok(out)
}

fn fmt6(v: f64) -> String {
    // Avoid the "-0.000000" artifact so reruns are byte-stable.
    let s = format!("{:.6}", v);
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn write_joint(skel: &Skeleton, index: usize, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    let joint = &skel.joints[index];
    if joint.end_site {
        out.push_str(&format!("{indent}End Site\n{indent}{{\n"));
        out.push_str(&format!(
            "{}  OFFSET {} {} {}\n",
            indent,
            fmt6(joint.offset.x),
            fmt6(joint.offset.y),
            fmt6(joint.offset.z)
        ));
        out.push_str(&format!("{indent}}}\n"));
        return;
    }
    let keyword = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
    out.push_str(&format!("{indent}{keyword} {}\n{indent}{{\n", joint.name));
    out.push_str(&format!(
        "{}  OFFSET {} {} {}\n",
        indent,
        fmt6(joint.offset.x),
        fmt6(joint.offset.y),
        fmt6(joint.offset.z)
    ));
    if joint.parent.is_none() {
        out.push_str(&format!(
            "{}  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation\n",
            indent
        ));
    } else {
        out.push_str(&format!("{indent}  CHANNELS 3 Zrotation Yrotation Xrotation\n"));
    }
    for child in skel.children(index) {
        write_joint(skel, child, depth + 1, out);
    }
    out.push_str(&format!("{indent}}}\n"));
}

/// Quaternion-level clip comparison used by round-trip tests.
#[cfg(test)]
pub fn clips_equal(a: &RawClip, b: &RawClip, tol: f64) -> bool {
    use crate::math::quat_angle;
    if a.skeleton.len() != b.skeleton.len()
        || a.frames.len() != b.frames.len()
        || (a.frame_time - b.frame_time).abs() > 1e-12
    {
        return false;
    }
    for (ja, jb) in a.skeleton.joints.iter().zip(&b.skeleton.joints) {
        if ja.name != jb.name || ja.parent != jb.parent || (ja.offset - jb.offset).length() > tol {
            return false;
        }
    }
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        if (fa.root_pos - fb.root_pos).length() > tol {
            return false;
        }
        for (qa, qb) in fa.rotations.iter().zip(&fb.rotations) {
            if quat_angle(*qa, *qb) > tol {
                return false;
            }
        }
    }
    true
}
