//! Binary container for parameter vectors and directions.
//!
//! All integers little-endian.
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 8    | magic `LNDSCAPE`                              |
//! | 8      | 4    | format version (u32, currently 1)             |
//! | 12     | 1    | record kind: 0 checkpoint, 1 direction        |
//! | 13     | 3    | zero                                          |
//! | 16     | 32   | model-spec SHA-256 (raw bytes)                |
//! | 48     | 8    | epoch (u64; 0 for directions)                 |
//! | 56     | 4    | metadata entry count M (u32)                  |
//! |        |      | M × (u32 key len, key, u32 value len, value)  |
//! |        | 4    | layer count L (u32)                           |
//! |        |      | L × (u8 layer kind, u32 filter length, u32 region count R, R × (u8 entry kind, u64 start, u64 len)) |
//! |        | 8    | value count N (u64)                           |
//! |        | 8·N  | values (f64)                                  |

use std::path::Path;
use std::sync::Arc;

use crate::directions::{Direction, IgnorePolicy, Scheme};
use crate::error::{Error, Result};
use crate::model::{EntryKind, LayerKind, LayerLayout, Layout, ParamVector, Region};
use crate::surface::{fmt_f64, Metadata};
use crate::train::Checkpoint;

pub const MAGIC: &[u8; 8] = b"LNDSCAPE";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Checkpoint = 0,
    Direction = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub kind: RecordKind,
    pub epoch: u64,
    pub meta: Metadata,
    pub params: ParamVector,
}

fn hash_bytes(hex: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    if hex.is_empty() {
        return Ok(out);
    }
    if hex.len() != 64 {
        return Err(Error::Format(format!("spec hash `{hex}` is not 64 hex digits")));
    }
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::Format(format!("spec hash `{hex}` is not hex")))?;
    }
    Ok(out)
}

fn hash_hex(bytes: &[u8]) -> String {
    if bytes.iter().all(|&b| b == 0) {
        return String::new();
    }
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

pub fn encode(rec: &Record) -> Result<Vec<u8>> {
    let layout = rec.params.layout();
    let mut out = Vec::with_capacity(128 + 8 * rec.params.len());
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend([rec.kind as u8, 0, 0, 0]);
    out.extend(hash_bytes(&layout.spec_hash)?);
    out.extend(rec.epoch.to_le_bytes());
    out.extend((rec.meta.0.len() as u32).to_le_bytes());
    for (k, v) in &rec.meta.0 {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    out.extend((layout.layers.len() as u32).to_le_bytes());
    for l in &layout.layers {
        out.push(l.kind.code());
        out.extend((l.filter_len as u32).to_le_bytes());
        out.extend((l.regions.len() as u32).to_le_bytes());
        for r in &l.regions {
            out.push(r.kind.code());
            out.extend((r.range.start as u64).to_le_bytes());
            out.extend((r.range.len() as u64).to_le_bytes());
        }
    }
    out.extend((rec.params.len() as u64).to_le_bytes());
    for v in &rec.params.values {
        out.extend(v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated record at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("metadata is not UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Record> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let kind = match r.take(4)?[0] {
        0 => RecordKind::Checkpoint,
        1 => RecordKind::Direction,
        k => return Err(Error::Format(format!("unknown record kind {k}"))),
    };
    let spec_hash = hash_hex(r.take(32)?);
    let epoch = r.u64()?;
    let mut meta = Metadata::default();
    for _ in 0..r.u32()? {
        let k = r.string()?;
        let v = r.string()?;
        meta.0.push((k, v));
    }
    let mut layers = Vec::new();
    for _ in 0..r.u32()? {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown layer kind {code}")))?;
        let filter_len = r.u32()? as usize;
        let mut regions = Vec::new();
        for _ in 0..r.u32()? {
            let code = r.u8()?;
            let kind = EntryKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown entry kind {code}")))?;
            let start = r.usize()?;
            let len = r.usize()?;
            regions.push(Region { kind, range: start..start + len });
        }
        layers.push(LayerLayout { kind, regions, filter_len });
    }
    let n = r.usize()?;
    let layout = Layout { layers, len: n, spec_hash };
    layout.validate()?;
    let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("value count overflows".into()))?)?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Record { kind, epoch, meta, params: ParamVector::new(values, Arc::new(layout))? })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Record> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn meta_f64(meta: &Metadata, key: &str) -> Result<f64> {
    meta.get(key)
        .ok_or_else(|| Error::Format(format!("missing metadata `{key}`")))?
        .parse()
        .map_err(|_| Error::Format(format!("metadata `{key}` is not a number")))
}

pub fn checkpoint_record(c: &Checkpoint) -> Record {
    let mut meta = Metadata::default();
    meta.set("train_loss", fmt_f64(c.train_loss));
    meta.set("train_err", fmt_f64(c.train_err));
    meta.set("test_loss", fmt_f64(c.test_loss));
    meta.set("test_err", fmt_f64(c.test_err));
    Record { kind: RecordKind::Checkpoint, epoch: c.epoch as u64, meta, params: c.params.clone() }
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint, extra: &Metadata) -> Result<()> {
    let mut rec = checkpoint_record(c);
    for (k, v) in &extra.0 {
        rec.meta.set(k, v);
    }
    write(path, &encode(&rec)?)
}

/// Reads a checkpoint and any extra metadata stored with it.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Metadata)> {
    let rec = read(path)?;
    if rec.kind != RecordKind::Checkpoint {
        return Err(Error::Format(format!("{} holds a direction, not a checkpoint", path.display())));
    }
    let c = Checkpoint {
        epoch: rec.epoch as usize,
        train_loss: meta_f64(&rec.meta, "train_loss")?,
        train_err: meta_f64(&rec.meta, "train_err")?,
        test_loss: meta_f64(&rec.meta, "test_loss")?,
        test_err: meta_f64(&rec.meta, "test_err")?,
        params: rec.params,
    };
    Ok((c, rec.meta))
}

pub fn direction_record(d: &Direction) -> Record {
    let mut meta = Metadata::default();
    meta.set("scheme", d.scheme);
    meta.set("ignore", d.ignore);
    meta.set("seed", d.seed);
    let params = ParamVector::new(d.values.clone(), d.layout().clone()).expect("direction matches its layout");
    Record { kind: RecordKind::Direction, epoch: 0, meta, params }
}

pub fn save_direction(path: &Path, d: &Direction) -> Result<()> {
    write(path, &encode(&direction_record(d))?)
}

pub fn load_direction(path: &Path) -> Result<Direction> {
    let rec = read(path)?;
    if rec.kind != RecordKind::Direction {
        return Err(Error::Format(format!("{} holds a checkpoint, not a direction", path.display())));
    }
    let field = |k: &str| rec.meta.get(k).ok_or_else(|| Error::Format(format!("missing metadata `{k}`")));
    let scheme: Scheme = field("scheme")?.parse()?;
    let ignore: IgnorePolicy = field("ignore")?.parse()?;
    let seed: u64 = field("seed")?.parse().map_err(|_| Error::Format("seed is not an integer".into()))?;
    let layout = rec.params.layout().clone();
    Direction::new(rec.params.values, layout, scheme, ignore, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directions::random_direction;
    use crate::model::{ModelSpec, Network};

    fn sample() -> Checkpoint {
        let (_, mut p) = Network::build(&ModelSpec::mlp(2, 2, 4, 2, true, true), 9).unwrap();
        p.values[0] = f64::MIN_POSITIVE / 3.0;
        p.values[1] = -0.0;
        Checkpoint { epoch: 7, params: p, train_loss: 0.1, train_err: 0.25, test_loss: f64::NAN, test_err: f64::NAN }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let mut extra = Metadata::default();
        extra.set("lr_drops", "3,5");
        save_checkpoint(&path, &c, &extra).unwrap();
        let (back, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.get("lr_drops"), Some("3,5"));
        assert_eq!(back.epoch, 7);
        assert_eq!(back.params.layout(), c.params.layout());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params.values), bits(&c.params.values));
        assert_eq!(back.train_loss, 0.1);
        assert!(back.test_loss.is_nan());
    }

    #[test]
    fn direction_round_trip_keeps_provenance() {
        let c = sample();
        let d = random_direction(&c.params, 42, Scheme::Filter, IgnorePolicy::BiasBn);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dir");
        save_direction(&path, &d).unwrap();
        let back = load_direction(&path).unwrap();
        assert_eq!(back.values, d.values);
        assert_eq!((back.scheme, back.ignore, back.seed), (Scheme::Filter, IgnorePolicy::BiasBn, 42));
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode(&checkpoint_record(&sample())).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
