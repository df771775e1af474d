//! Threat database file format.
//!
//! ```text
//! "BADT" | u16 version = 1 | varint k |
//!   k × ( varint id | varint ℓ | ℓ × 32-byte hash | varint label-len | label | u64 first_seen )
//! ```
//! Fixed-width integers are little-endian. Labels are UTF-8.

use std::collections::BTreeSet;

use serde::Serialize;

use super::db::{AttackSequence, ThreatDatabase, DEFAULT_CAPACITY, DEFAULT_MAX_SEQUENCE_LEN};
use crate::chain::TxHash;
use crate::encoding::{put_bytes, put_varint, DecodeError, Reader};

pub const MAGIC: &[u8; 4] = b"BADT";
pub const VERSION: u16 = 1;

pub fn serialize_db(db: &ThreatDatabase) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_varint(&mut out, db.len() as u64);
    for s in db.sequences() {
        put_varint(&mut out, s.id);
        put_varint(&mut out, s.hashes.len() as u64);
        for h in &s.hashes {
            out.extend_from_slice(h.as_bytes());
        }
        put_bytes(&mut out, s.label.as_bytes());
        out.extend_from_slice(&s.first_seen.to_le_bytes());
    }
    out
}

/// Parses a database file. Capacity is the default, raised to `k` if the
/// file holds more sequences than that.
pub fn deserialize_db(bytes: &[u8]) -> Result<ThreatDatabase, DecodeError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| r.error("missing magic"))? != MAGIC {
        return Err(DecodeError {
            offset: 0,
            reason: "bad magic",
        });
    }
    let version_at = r.offset();
    if r.u16_le()? != VERSION {
        return Err(DecodeError {
            offset: version_at,
            reason: "unsupported version",
        });
    }
    // Smallest record: id, ℓ, one hash, label-len, first_seen.
    let k = r.count(1 + 1 + 32 + 1 + 8)?;
    let mut db = ThreatDatabase::new(DEFAULT_CAPACITY.max(k));
    let mut ids = BTreeSet::new();
    for _ in 0..k {
        let id_at = r.offset();
        let id = r.varint()?;
        if id == u64::MAX || !ids.insert(id) {
            return Err(DecodeError {
                offset: id_at,
                reason: "duplicate or reserved sequence id",
            });
        }
        let len_at = r.offset();
        let len = r.count(32)?;
        if len == 0 || len > DEFAULT_MAX_SEQUENCE_LEN {
            return Err(DecodeError {
                offset: len_at,
                reason: "sequence length out of range",
            });
        }
        let mut hashes = Vec::with_capacity(len);
        for _ in 0..len {
            hashes.push(TxHash(r.array()?));
        }
        let label_at = r.offset();
        let label = std::str::from_utf8(r.bytes()?)
            .map_err(|_| DecodeError {
                offset: label_at,
                reason: "label is not UTF-8",
            })?
            .to_owned();
        let first_seen = r.u64_le()?;
        db.insert_raw(AttackSequence {
            id,
            hashes,
            label,
            first_seen,
        });
    }
    if !r.is_empty() {
        return Err(r.error("trailing bytes"));
    }
    Ok(db)
}

#[derive(Debug, Serialize)]
struct JsonSequence<'a> {
    id: u64,
    length: usize,
    label: &'a str,
    first_seen: u64,
    hashes: &'a [TxHash],
}

#[derive(Debug, Serialize)]
struct JsonDb<'a> {
    version: u16,
    k: usize,
    total_length: usize,
    sequences: Vec<JsonSequence<'a>>,
}

/// Human-readable export with hex hashes.
pub fn export_json(db: &ThreatDatabase) -> String {
    let doc = JsonDb {
        version: VERSION,
        k: db.len(),
        total_length: db.total_length(),
        sequences: db
            .sequences()
            .iter()
            .map(|s| JsonSequence {
                id: s.id,
                length: s.len(),
                label: &s.label,
                first_seen: s.first_seen,
                hashes: &s.hashes,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("plain data serializes")
}
