//! Checkpoint format: a text manifest (meta lines, then one line per
//! parameter with name, shape and byte offset) followed by a `DATA` marker
//! and the flat little-endian f64 payload. Round-trips are bit-exact.
//!
//! The reader treats its input as untrusted: every count is validated
//! against the actual payload length before any allocation.

use std::path::Path;

use super::{NnError, Tensor};

const MAGIC: &str = "LOCC-CKPT 1";
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            debug_assert!(!k.contains(char::is_whitespace));
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.params {
            debug_assert!(!name.contains(char::is_whitespace));
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!(
                "param {name} {} {} {offset}\n",
                t.shape().len(),
                dims.join(" ")
            ));
            offset += t.numel() * 8;
        }
        header.push_str("DATA\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, NnError> {
        let marker = b"DATA\n";
        let data_start = find_subslice(bytes, marker)
            .ok_or_else(|| NnError::Checkpoint("missing DATA marker".into()))?
            + marker.len();
        let header = std::str::from_utf8(&bytes[..data_start - marker.len()])
            .map_err(|_| NnError::Checkpoint("header is not UTF-8".into()))?;
        let payload = &bytes[data_start..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let mut ck = Checkpoint::default();
        for line in lines {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("meta") => {
                    let k = tok
                        .next()
                        .ok_or_else(|| NnError::Checkpoint("meta needs a key".into()))?;
                    let rest: Vec<&str> = tok.collect();
                    ck.meta.push((k.to_string(), rest.join(" ")));
                }
                Some("param") => {
                    let name = tok
                        .next()
                        .ok_or_else(|| NnError::Checkpoint("param needs a name".into()))?;
                    let rank: usize = parse_tok(tok.next(), "rank")?;
                    if rank > MAX_RANK {
                        return Err(NnError::Checkpoint(format!("rank {rank} too large")));
                    }
                    let mut shape = Vec::with_capacity(rank);
                    let mut numel: usize = 1;
                    for _ in 0..rank {
                        let d: usize = parse_tok(tok.next(), "dimension")?;
                        numel = numel
                            .checked_mul(d)
                            .ok_or_else(|| NnError::Checkpoint("shape overflow".into()))?;
                        shape.push(d);
                    }
                    let offset: usize = parse_tok(tok.next(), "offset")?;
                    if tok.next().is_some() {
                        return Err(NnError::Checkpoint("trailing tokens on param line".into()));
                    }
                    let byte_len = numel
                        .checked_mul(8)
                        .ok_or_else(|| NnError::Checkpoint("size overflow".into()))?;
                    let end = offset
                        .checked_add(byte_len)
                        .ok_or_else(|| NnError::Checkpoint("offset overflow".into()))?;
                    if end > payload.len() {
                        return Err(NnError::Checkpoint(format!(
                            "param `{name}` extends past payload ({end} > {})",
                            payload.len()
                        )));
                    }
                    let mut data = Vec::with_capacity(numel);
                    for chunk in payload[offset..end].chunks_exact(8) {
                        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                    }
                    ck.params.push((name.to_string(), Tensor::from_vec(&shape, data)));
                }
                Some(other) => {
                    return Err(NnError::Checkpoint(format!("unknown record `{other}`")))
                }
                None => {}
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| NnError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| NnError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T, NnError> {
    tok.ok_or_else(|| NnError::Checkpoint(format!("missing {what}")))?
        .parse()
        .map_err(|_| NnError::Checkpoint(format!("bad {what}")))
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}
