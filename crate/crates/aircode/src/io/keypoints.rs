//! Key-point observations as JSON lines.
//!
//! Line 1 is a header `{"version":1,"n_p":<width>}`; every following line is
//! one object observation. Descriptor widths must match the header.

use crate::error::{Error, Result};
use crate::model::{BoundingBox, KeyPoint, ObjectInstance};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const KEYPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    n_p: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyPointLine {
    xy: [f64; 2],
    desc: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectLine {
    object_id: String,
    frame_id: i64,
    bbox: [f64; 4],
    keypoints: Vec<KeyPointLine>,
}

/// Parsed content of one key-point file.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFile {
    /// Descriptor width declared by the header.
    pub n_p: usize,
    pub objects: Vec<ObjectInstance>,
}

/// Serializes a header plus one line per object. Every object's descriptor
/// width must equal `n_p`.
pub fn keypoints_to_bytes(n_p: usize, objects: &[ObjectInstance]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let header = Header {
        version: KEYPOINT_FORMAT_VERSION,
        n_p,
    };
    out.extend_from_slice(serde_json::to_string(&header).expect("header is serializable").as_bytes());
    out.push(b'\n');
    for obj in objects {
        if obj.descriptor_width() != n_p {
            return Err(Error::contract(format!(
                "object {}: descriptor width {} does not match file n_p {n_p}",
                obj.object_id(),
                obj.descriptor_width()
            )));
        }
        let bbox = obj.bbox();
        let line = ObjectLine {
            object_id: obj.object_id().to_string(),
            frame_id: obj.frame_id(),
            bbox: [bbox.x, bbox.y, bbox.width, bbox.height],
            keypoints: obj
                .keypoints()
                .iter()
                .map(|kp| KeyPointLine {
                    xy: kp.position,
                    desc: kp.descriptor.clone(),
                })
                .collect(),
        };
        out.extend_from_slice(
            serde_json::to_string(&line)
                .map_err(|e| Error::contract(format!("object {}: {e}", obj.object_id())))?
                .as_bytes(),
        );
        out.push(b'\n');
    }
    Ok(out)
}

/// Parses a complete key-point file. Errors name the offending 1-based line.
pub fn keypoints_from_slice(bytes: &[u8]) -> Result<KeypointFile> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(format!("not UTF-8: {e}")))?;
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::parse("empty file, expected a header line"))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| Error::parse(format!("line 1: bad header: {e}")))?;
    if header.version != KEYPOINT_FORMAT_VERSION {
        return Err(Error::parse(format!(
            "line 1: unsupported version {}, expected {KEYPOINT_FORMAT_VERSION}",
            header.version
        )));
    }
    let mut objects = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            return Err(Error::parse(format!("line {line_no}: empty line")));
        }
        let parsed: ObjectLine = serde_json::from_str(line)
            .map_err(|e| Error::parse(format!("line {line_no}: {e}")))?;
        for (k, kp) in parsed.keypoints.iter().enumerate() {
            if kp.desc.len() != header.n_p {
                return Err(Error::parse(format!(
                    "line {line_no}: key-point {k} has width {}, header declares n_p {}",
                    kp.desc.len(),
                    header.n_p
                )));
            }
        }
        let bbox = BoundingBox::new(
            parsed.bbox[0],
            parsed.bbox[1],
            parsed.bbox[2],
            parsed.bbox[3],
        )
        .map_err(|e| Error::parse(format!("line {line_no}: {e}")))?;
        let keypoints = parsed
            .keypoints
            .into_iter()
            .map(|kp| KeyPoint {
                position: kp.xy,
                descriptor: kp.desc,
            })
            .collect();
        let object = ObjectInstance::new(parsed.object_id, parsed.frame_id, bbox, keypoints)
            .map_err(|e| Error::parse(format!("line {line_no}: {e}")))?;
        objects.push(object);
    }
    Ok(KeypointFile {
        n_p: header.n_p,
        objects,
    })
}

pub fn write_keypoints(path: impl AsRef<Path>, n_p: usize, objects: &[ObjectInstance]) -> Result<()> {
    let path = path.as_ref();
    let bytes = keypoints_to_bytes(n_p, objects)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<KeypointFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    keypoints_from_slice(&bytes).map_err(|e| match e {
        Error::Parse(msg) => Error::parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}
