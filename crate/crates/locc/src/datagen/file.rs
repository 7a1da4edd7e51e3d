//! Dataset file format: a text header (magic, config echo, mesh id table,
//! record count) followed by fixed-width little-endian binary records.
//! Writing is byte-deterministic for a fixed (object set, config, seed);
//! reading validates every count against the actual payload length.

use std::path::Path;

use crate::geom::{Pose, Vec3};

use super::{Dataset, DatagenError, GenConfig, LabeledPair};

const MAGIC: &str = "LOCC-DATA 1";
/// id1 u32 + id2 u32 + q1 7×f64 + q2 7×f64 + label u8 + delta f64.
const RECORD_BYTES: usize = 4 + 4 + 56 + 56 + 1 + 8;

pub fn to_bytes(ds: &Dataset) -> Vec<u8> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("seed {}\n", ds.config.seed));
    header.push_str(&format!("sigma {}\n", ds.config.delta_sigma));
    header.push_str(&format!("bound {}\n", ds.config.pose_bound));
    header.push_str(&format!("pairs_per {}\n", ds.config.pairs_per_object_pair));
    header.push_str(&format!("objects {}\n", ds.mesh_ids.len()));
    for id in &ds.mesh_ids {
        header.push_str(&format!("id {id}\n"));
    }
    header.push_str(&format!("count {}\n", ds.pairs.len()));
    header.push_str("DATA\n");

    let mut out = header.into_bytes();
    out.reserve(ds.pairs.len() * RECORD_BYTES);
    for p in &ds.pairs {
        out.extend_from_slice(&p.id1.to_le_bytes());
        out.extend_from_slice(&p.id2.to_le_bytes());
        for v in p.q1.to_vec7() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in p.q2.to_vec7() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(p.label as u8);
        out.extend_from_slice(&p.delta_target.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset, DatagenError> {
    let marker = b"DATA\n";
    let pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| DatagenError::Format("missing DATA marker".into()))?;
    let header = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| DatagenError::Format("header is not UTF-8".into()))?;
    let payload = &bytes[pos + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(DatagenError::Format("bad magic".into()));
    }
    let mut cfg = GenConfig::default();
    let mut mesh_ids: Vec<String> = Vec::new();
    let mut count: Option<usize> = None;
    let mut declared_objects: Option<usize> = None;
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("seed") => cfg.seed = parse(tok.next(), "seed")?,
            Some("sigma") => cfg.delta_sigma = parse(tok.next(), "sigma")?,
            Some("bound") => cfg.pose_bound = parse(tok.next(), "bound")?,
            Some("pairs_per") => cfg.pairs_per_object_pair = parse(tok.next(), "pairs_per")?,
            Some("objects") => declared_objects = Some(parse(tok.next(), "objects")?),
            Some("id") => {
                let id = tok.next().ok_or_else(|| DatagenError::Format("empty id".into()))?;
                // Guard against header-driven allocation blowups.
                if mesh_ids.len() >= 1_000_000 {
                    return Err(DatagenError::Format("too many mesh ids".into()));
                }
                mesh_ids.push(id.to_string());
            }
            Some("count") => count = Some(parse(tok.next(), "count")?),
            Some(other) => {
                return Err(DatagenError::Format(format!("unknown header record `{other}`")))
            }
            None => {}
        }
    }
    let count = count.ok_or_else(|| DatagenError::Format("missing count".into()))?;
    if let Some(n) = declared_objects {
        if n != mesh_ids.len() {
            return Err(DatagenError::Format(format!(
                "declared {n} objects but listed {}",
                mesh_ids.len()
            )));
        }
    }
    let need = count
        .checked_mul(RECORD_BYTES)
        .ok_or_else(|| DatagenError::Format("record count overflow".into()))?;
    if payload.len() != need {
        return Err(DatagenError::Format(format!(
            "payload is {} bytes, {count} records need {need}",
            payload.len()
        )));
    }

    let mut pairs = Vec::with_capacity(count);
    for rec in payload.chunks_exact(RECORD_BYTES) {
        let id1 = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        let id2 = u32::from_le_bytes(rec[4..8].try_into().unwrap());
        if id1 as usize >= mesh_ids.len() || id2 as usize >= mesh_ids.len() {
            return Err(DatagenError::Format(format!(
                "record references mesh {} outside the id table",
                id1.max(id2)
            )));
        }
        let f = |o: usize| f64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
        let pose_at = |o: usize| -> Result<Pose, DatagenError> {
            let vals: Vec<f64> = (0..7).map(|k| f(o + 8 * k)).collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(DatagenError::Format("non-finite pose".into()));
            }
            let norm =
                (vals[0] * vals[0] + vals[1] * vals[1] + vals[2] * vals[2] + vals[3] * vals[3])
                    .sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(DatagenError::Format(format!(
                    "stored quaternion is not unit (norm {norm})"
                )));
            }
            // Stored components came from a unit quaternion; constructing
            // unchecked keeps reads bit-identical to what was written.
            let q = nalgebra::UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(
                vals[0], vals[1], vals[2], vals[3],
            ));
            Ok(Pose::new(q, Vec3::new(vals[4], vals[5], vals[6])))
        };
        let q1 = pose_at(8)?;
        let q2 = pose_at(64)?;
        let label = match rec[120] {
            0 => false,
            1 => true,
            b => return Err(DatagenError::Format(format!("bad label byte {b}"))),
        };
        let delta_target = f(121);
        if !delta_target.is_finite() {
            return Err(DatagenError::Format("non-finite delta".into()));
        }
        pairs.push(LabeledPair {
            id1,
            id2,
            q1,
            q2,
            label,
            delta_target,
        });
    }
    Ok(Dataset {
        mesh_ids,
        config: cfg,
        pairs,
    })
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatagenError> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(ds)).map_err(|source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset, DatagenError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T, DatagenError> {
    tok.ok_or_else(|| DatagenError::Format(format!("missing {what}")))?
        .parse()
        .map_err(|_| DatagenError::Format(format!("bad {what}")))
}
