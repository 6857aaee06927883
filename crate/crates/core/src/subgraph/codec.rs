//! Compact little-endian batch format for prebuilt subgraphs.
//!
//! Layout: magic, `u32` version, `u32` record count, then length-prefixed
//! records. A record holds the node count, label bytes, node keys, edges
//! (`u32` src, `u32` dst, four `f32` features), the global edge types, the
//! target node indices, the label bit and the target timestamp.

use super::{Edge, EdgeFeatureVector, EnclosingSubgraph, NodeKey, NodeLabel};
use crate::error::{Error, Result};
use crate::store::{ExerciseId, KcId, StudentId};

pub const BATCH_MAGIC: [u8; 4] = *b"DGSB";
pub const BATCH_VERSION: u32 = 1;

pub fn encode_batch(graphs: &[EnclosingSubgraph]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&BATCH_MAGIC);
    out.extend_from_slice(&BATCH_VERSION.to_le_bytes());
    out.extend_from_slice(&(graphs.len() as u32).to_le_bytes());
    let mut record = Vec::new();
    for g in graphs {
        record.clear();
        encode_record(g, &mut record);
        out.extend_from_slice(&(record.len() as u32).to_le_bytes());
        out.extend_from_slice(&record);
    }
    out
}

fn encode_record(g: &EnclosingSubgraph, out: &mut Vec<u8>) {
    let put_u32 = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    put_u32(out, g.nodes.len() as u32);
    out.extend(g.labels.iter().map(|&l| l as u8));
    for key in &g.nodes {
        let (kind, id) = match *key {
            NodeKey::Student(s) => (0u8, s.0),
            NodeKey::Exercise(e) => (1, e.0),
            NodeKey::Kc(k) => (2, k.0),
        };
        out.push(kind);
        put_u32(out, id);
    }
    put_u32(out, g.edges.len() as u32);
    for e in &g.edges {
        put_u32(out, e.src);
        put_u32(out, e.dst);
        for f in e.feature.to_array() {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out.push(g.type_count);
    put_u32(out, g.global_types.len() as u32);
    out.extend_from_slice(&g.global_types);
    put_u32(out, g.target.0);
    put_u32(out, g.target.1);
    out.push(u8::from(g.label));
    out.extend_from_slice(&g.target_timestamp.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::MalformedSubgraph(format!(
                "truncated batch: wanted {n} bytes at offset {}",
                self.pos
            ))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(unit) > self.bytes.len() - self.pos {
            return Err(Error::MalformedSubgraph(format!(
                "count {n} exceeds the remaining {} bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(n)
    }
}

pub fn decode_batch(bytes: &[u8]) -> Result<Vec<EnclosingSubgraph>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| Error::Format {
        expected: "subgraph batch".into(),
        found: "a file shorter than its header".into(),
    })?;
    if magic != BATCH_MAGIC {
        return Err(Error::Format {
            expected: "subgraph batch".into(),
            found: format!("magic {:?}", String::from_utf8_lossy(magic)),
        });
    }
    let version = r.u32()?;
    if version != BATCH_VERSION {
        return Err(Error::Format {
            expected: format!("subgraph batch version {BATCH_VERSION}"),
            found: format!("version {version}"),
        });
    }
    let count = r.count(4)?;
    let mut graphs = Vec::with_capacity(count);
    for i in 0..count {
        let len = r.count(1)?;
        let mut record = Reader {
            bytes: r.take(len)?,
            pos: 0,
        };
        let g = decode_record(&mut record)
            .map_err(|e| Error::MalformedSubgraph(format!("record {i}: {e}")))?;
        if record.pos != len {
            return Err(Error::MalformedSubgraph(format!("record {i}: trailing bytes")));
        }
        g.validate()?;
        graphs.push(g);
    }
    if r.pos != bytes.len() {
        return Err(Error::MalformedSubgraph("trailing bytes after last record".into()));
    }
    Ok(graphs)
}

fn decode_record(r: &mut Reader<'_>) -> Result<EnclosingSubgraph> {
    let n = r.count(6)?;
    let labels = r
        .take(n)?
        .iter()
        .map(|&b| NodeLabel::from_u8(b))
        .collect::<Result<Vec<_>>>()?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = r.u8()?;
        let id = r.u32()?;
        nodes.push(match kind {
            0 => NodeKey::Student(StudentId(id)),
            1 => NodeKey::Exercise(ExerciseId(id)),
            2 => NodeKey::Kc(KcId(id)),
            other => return Err(Error::MalformedSubgraph(format!("node kind {other}"))),
        });
    }
    let edge_count = r.count(24)?;
    let mut edges = Vec::with_capacity(edge_count);
    for _ in 0..edge_count {
        let src = r.u32()?;
        let dst = r.u32()?;
        let mut f = [0f32; 4];
        for v in &mut f {
            *v = r.f32()?;
        }
        edges.push(Edge {
            src,
            dst,
            feature: EdgeFeatureVector::from_array(f),
        });
    }
    let type_count = r.u8()?;
    let global_len = r.count(1)?;
    let global_types = r.take(global_len)?.to_vec();
    let target = (r.u32()?, r.u32()?);
    let label = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::MalformedSubgraph(format!("label byte {other}"))),
    };
    let target_timestamp = r.i64()?;
    Ok(EnclosingSubgraph {
        nodes,
        labels,
        edges,
        global_types,
        type_count,
        target,
        label,
        target_timestamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subgraph::NodeLabel as L;

    fn sample() -> EnclosingSubgraph {
        EnclosingSubgraph {
            nodes: vec![
                NodeKey::Student(StudentId(3)),
                NodeKey::Exercise(ExerciseId(9)),
                NodeKey::Kc(KcId(1)),
            ],
            labels: vec![L::TargetStudent, L::TargetExercise, L::TargetKc],
            edges: vec![
                Edge {
                    src: 1,
                    dst: 2,
                    feature: EdgeFeatureVector::KC_LINK,
                },
                Edge {
                    src: 2,
                    dst: 1,
                    feature: EdgeFeatureVector::KC_LINK,
                },
            ],
            global_types: vec![0, 1, 4],
            type_count: 6,
            target: (0, 1),
            label: true,
            target_timestamp: -5,
        }
    }

    #[test]
    fn round_trip() {
        let graphs = vec![sample(), sample()];
        let bytes = encode_batch(&graphs);
        assert_eq!(&bytes[..4], b"DGSB");
        assert_eq!(decode_batch(&bytes).unwrap(), graphs);
        assert_eq!(encode_batch(&decode_batch(&bytes).unwrap()), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = encode_batch(&[sample()]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_batch(&bad), Err(Error::Format { .. })));
        assert!(decode_batch(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_batch(&[]).is_err());
    }

    #[test]
    fn rejects_out_of_range_label() {
        let mut bytes = encode_batch(&[sample()]);
        // Header (12) + record length (4) + node count (4) = first label byte.
        bytes[20] = 7;
        assert!(decode_batch(&bytes).is_err());
    }
}
