//! Edge and attribute CSV ingestion, and the binary sequence format.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "COEVOSEQ"
//! version   u32      1
//! n         u64
//! r         u64
//! count     u64      number of snapshots (T + 1)
//! window    f64      binning window in seconds, NaN when absent
//! ids       n x (u32 byte length, UTF-8 bytes)
//! per snapshot:
//!   edges   u64 count, then count x (u32 src, u32 dst, f64 weight)
//!   attrs   u64 count, then count x (u32 node, u32 attr, f64 value)
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::sequence::{DynamicGraphSequence, Snapshot};
use super::snapshot::{AttributeMatrix, SnapshotGraph};
use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{CoevoError, Result};

pub const SEQUENCE_MAGIC: &[u8; 8] = b"COEVOSEQ";
pub const SEQUENCE_VERSION: u32 = 1;

/// How timestamps map to snapshot indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Binning {
    /// `floor((ts - min_ts) / seconds)`.
    Window(f64),
    /// The timestamp column already holds integer step indices; the
    /// smallest step becomes snapshot 0.
    ExplicitSteps,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum IdKey<'a> {
    Number(i128),
    Text(&'a str),
}

fn id_key(s: &str) -> IdKey<'_> {
    s.parse::<i128>().map(IdKey::Number).unwrap_or(IdKey::Text(s))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| CoevoError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> CoevoError {
    CoevoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

struct RawEdge {
    src: String,
    dst: String,
    weight: f64,
    ts: f64,
}

fn read_edges(path: &Path) -> Result<Vec<RawEdge>> {
    let mut reader = csv_reader(path)?;
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_error(path, k + 1, e.to_string()))?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        let (src, dst, weight, ts) = match record.len() {
            3 => (&record[0], &record[1], None, &record[2]),
            4 => (&record[0], &record[1], Some(&record[2]), &record[3]),
            c => return Err(parse_error(path, line, format!("expected 3 or 4 columns, found {c}"))),
        };
        let ts_value = match ts.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ if rows.is_empty() && k == 0 => continue,
            _ => return Err(parse_error(path, line, format!("timestamp {ts:?} is not a number"))),
        };
        let weight = match weight {
            None | Some("") => 1.0,
            Some(w) => w
                .parse::<f64>()
                .ok()
                .filter(|w| w.is_finite())
                .ok_or_else(|| parse_error(path, line, format!("weight {w:?} is not a number")))?,
        };
        if src.is_empty() || dst.is_empty() {
            return Err(parse_error(path, line, "empty endpoint"));
        }
        rows.push(RawEdge {
            src: src.to_string(),
            dst: dst.to_string(),
            weight,
            ts: ts_value,
        });
    }
    if rows.is_empty() {
        return Err(parse_error(path, 0, "no edges"));
    }
    Ok(rows)
}

/// Reads a timestamped edge list and bins it into snapshots.
///
/// Rows are `source,target,timestamp` or `source,target,weight,timestamp`;
/// a header line is skipped. Every bin between the first and last timestamp
/// becomes a snapshot, empty or not. Attributes are in/out degrees.
pub fn load_edge_csv(path: impl AsRef<Path>, binning: Binning) -> Result<DynamicGraphSequence> {
    let path = path.as_ref();
    let rows = read_edges(path)?;

    let mut names: Vec<&str> = rows.iter().flat_map(|e| [e.src.as_str(), e.dst.as_str()]).collect();
    names.sort_by(|a, b| match id_key(a).cmp(&id_key(b)) {
        Ordering::Equal => a.cmp(b),
        o => o,
    });
    names.dedup();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n = names.len();

    let min_ts = rows.iter().map(|e| e.ts).fold(f64::INFINITY, f64::min);
    let mut bins: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for e in &rows {
        let bin = match binning {
            Binning::Window(w) => {
                if !(w > 0.0) {
                    return Err(CoevoError::Config(format!("window must be positive, got {w}")));
                }
                ((e.ts - min_ts) / w).floor() as usize
            }
            Binning::ExplicitSteps => {
                if e.ts.fract() != 0.0 {
                    return Err(CoevoError::Format(format!("step index {} is not an integer", e.ts)));
                }
                (e.ts - min_ts) as usize
            }
        };
        bins.entry(bin).or_default().push((index[e.src.as_str()], index[e.dst.as_str()], e.weight));
    }
    let count = bins.keys().next_back().map_or(0, |&b| b + 1);
    let mut snapshots = Vec::with_capacity(count);
    for t in 0..count {
        let edges = bins.remove(&t).unwrap_or_default();
        snapshots.push(Snapshot {
            graph: SnapshotGraph::from_directed(n, edges)?,
            attributes: AttributeMatrix::zeros(n, 0),
        });
    }
    let window = match binning {
        Binning::Window(w) => Some(w),
        Binning::ExplicitSteps => None,
    };
    let ids = names.into_iter().map(str::to_string).collect();
    attach_degree_features(DynamicGraphSequence::new(snapshots, window, Some(ids))?)
}

/// Replaces attributes with attribute 0 = in-degree and attribute 1 = out-degree.
pub fn attach_degree_features(seq: DynamicGraphSequence) -> Result<DynamicGraphSequence> {
    let n = seq.node_count();
    let mut matrices = Vec::with_capacity(seq.len());
    for s in seq.snapshots() {
        let (indeg, outdeg) = s.graph.directed_degrees();
        let mut x = AttributeMatrix::zeros(n, 2);
        for v in 0..n {
            if indeg[v] > 0 {
                x.set(v, 0, indeg[v] as f64)?;
            }
            if outdeg[v] > 0 {
                x.set(v, 1, outdeg[v] as f64)?;
            }
        }
        matrices.push(x);
    }
    seq.with_attributes(matrices)
}

/// Replaces attributes with triplets from `t,node,attr_index,value` rows.
///
/// `node` is an external id resolved through the sequence id map. The
/// attribute count becomes one past the largest index seen, or stays at the
/// current count when that is larger. Duplicate cells keep the last value.
pub fn load_attribute_triplets(path: impl AsRef<Path>, seq: DynamicGraphSequence) -> Result<DynamicGraphSequence> {
    let path = path.as_ref();
    let index: HashMap<&str, usize> = seq.ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut reader = csv_reader(path)?;
    let mut cells = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_error(path, k + 1, e.to_string()))?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        if record.len() != 4 {
            return Err(parse_error(path, line, format!("expected 4 columns, found {}", record.len())));
        }
        let t = record[0].parse::<usize>();
        if k == 0 && t.is_err() {
            continue;
        }
        let t = t.map_err(|_| parse_error(path, line, format!("bad time index {:?}", &record[0])))?;
        if t >= seq.len() {
            return Err(parse_error(path, line, format!("time index {t} beyond last snapshot {}", seq.horizon())));
        }
        let node = *index
            .get(&record[1])
            .ok_or_else(|| parse_error(path, line, format!("unknown node {:?}", &record[1])))?;
        let attr = record[2]
            .parse::<usize>()
            .map_err(|_| parse_error(path, line, format!("bad attribute index {:?}", &record[2])))?;
        let value = record[3]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_error(path, line, format!("bad value {:?}", &record[3])))?;
        cells.push((line, t, node, attr, value));
    }
    let r = cells.iter().map(|c| c.3 + 1).max().unwrap_or(0).max(seq.attribute_count());
    let n = seq.node_count();
    let mut matrices = vec![AttributeMatrix::zeros(n, r); seq.len()];
    for (line, t, node, attr, value) in cells {
        if matrices[t].set(node, attr, value)? {
            log::warn!("{}:{line}: duplicate cell ({t}, {node}, {attr}); keeping the last value", path.display());
        }
    }
    seq.with_attributes(matrices)
}

pub fn sequence_to_bytes(seq: &DynamicGraphSequence) -> Vec<u8> {
    let mut w = ByteWriter::header(SEQUENCE_MAGIC, SEQUENCE_VERSION);
    w.u64(seq.node_count() as u64);
    w.u64(seq.attribute_count() as u64);
    w.u64(seq.len() as u64);
    w.f64(seq.window().unwrap_or(f64::NAN));
    for id in seq.ids() {
        w.string(id);
    }
    for s in seq.snapshots() {
        let edges = s.graph.directed_edges();
        w.u64(edges.len() as u64);
        for &(u, v, weight) in edges {
            w.u32(u);
            w.u32(v);
            w.f64(weight);
        }
        w.u64(s.attributes.nnz() as u64);
        for (v, a, x) in s.attributes.entries() {
            w.u32(v as u32);
            w.u32(a as u32);
            w.f64(x);
        }
    }
    w.bytes
}

pub fn sequence_from_bytes(bytes: &[u8]) -> Result<DynamicGraphSequence> {
    let mut r = ByteReader::new(bytes);
    r.header(SEQUENCE_MAGIC, SEQUENCE_VERSION)?;
    let n = r.u64()? as usize;
    let attrs = r.u64()? as usize;
    let count = r.count(16)?;
    let window = r.f64()?;
    let window = (!window.is_nan()).then_some(window);
    let ids = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let mut snapshots = Vec::with_capacity(count);
    for _ in 0..count {
        let e = r.count(16)?;
        let mut edges = Vec::with_capacity(e);
        for _ in 0..e {
            edges.push((r.u32()? as usize, r.u32()? as usize, r.f64()?));
        }
        let graph = SnapshotGraph::from_directed(n, edges).map_err(|e| CoevoError::Format(e.to_string()))?;
        let k = r.count(16)?;
        let mut x = AttributeMatrix::zeros(n, attrs);
        for _ in 0..k {
            let (v, a, value) = (r.u32()? as usize, r.u32()? as usize, r.f64()?);
            x.set(v, a, value).map_err(|e| CoevoError::Format(e.to_string()))?;
        }
        snapshots.push(Snapshot { graph, attributes: x });
    }
    r.finish()?;
    DynamicGraphSequence::new(snapshots, window, Some(ids))
}

pub fn write_sequence(path: impl AsRef<Path>, seq: &DynamicGraphSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, sequence_to_bytes(seq)).map_err(|e| CoevoError::io(path, e))
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<DynamicGraphSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CoevoError::io(path, e))?;
    sequence_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn window_binning() {
        let f = csv_file("a,b,0\nb,c,10\nc,a,20\n");
        let seq = load_edge_csv(f.path(), Binning::Window(15.0)).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.graph(0).edge_count(), 2);
        assert_eq!(seq.graph(1).edge_count(), 1);
        assert_eq!(seq.attribute_count(), 2);
    }

    #[test]
    fn duplicate_edges_merge_by_sum() {
        let f = csv_file("source,target,weight,timestamp\n1,2,1,5\n1,2,3,6\n2,1,-1,7\n3,1,2,8\n1,2,0.5,9\n");
        let seq = load_edge_csv(f.path(), Binning::Window(100.0)).unwrap();
        assert_eq!(seq.len(), 1);
        let g = seq.graph(0);
        assert_eq!(seq.ids(), &["1", "2", "3"]);
        assert_eq!(g.directed_edges(), &[(0, 1, 4.5), (1, 0, -1.0), (2, 0, 2.0)]);
        assert_eq!(g.neighbors(0), &[1, 2]);
    }

    #[test]
    fn ids_sort_numerically_then_textually() {
        let f = csv_file("10,9,0\nx,2,1\n");
        let seq = load_edge_csv(f.path(), Binning::ExplicitSteps).unwrap();
        assert_eq!(seq.ids(), &["2", "9", "10", "x"]);
        assert_eq!(seq.len(), 2);
    }

    #[test]
    fn empty_bins_are_kept() {
        let f = csv_file("0,1,0\n1,2,30\n");
        let seq = load_edge_csv(f.path(), Binning::Window(10.0)).unwrap();
        assert_eq!(seq.len(), 4);
        assert_eq!(seq.graph(1).edge_count(), 0);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let f = csv_file("0,1,0\n1,2\n");
        match load_edge_csv(f.path(), Binning::Window(1.0)) {
            Err(CoevoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let f = csv_file("0,1,0\n1,2,zz\n");
        assert!(matches!(load_edge_csv(f.path(), Binning::Window(1.0)), Err(CoevoError::Parse { line: 2, .. })));
        let f = csv_file("");
        assert!(matches!(load_edge_csv(f.path(), Binning::Window(1.0)), Err(CoevoError::Parse { .. })));
        assert!(matches!(
            load_edge_csv("/nonexistent/edges.csv", Binning::Window(1.0)),
            Err(CoevoError::Io { .. })
        ));
    }

    #[test]
    fn degree_features() {
        let f = csv_file("a,b,0\na,c,0\nc,a,0\nd,d,5\n");
        let seq = load_edge_csv(f.path(), Binning::Window(100.0)).unwrap();
        let x = seq.attributes(0);
        assert_eq!((x.get(0, 0), x.get(0, 1)), (1.0, 2.0));
        let f = csv_file("a,b,0\nc,d,200\n");
        let seq = load_edge_csv(f.path(), Binning::Window(100.0)).unwrap();
        assert_eq!((seq.attributes(0).get(2, 0), seq.attributes(0).get(2, 1)), (0.0, 0.0));
        for t in 0..seq.len() {
            let indeg: f64 = (0..seq.node_count()).map(|v| seq.attributes(t).get(v, 0)).sum();
            assert_eq!(indeg as usize, seq.graph(t).edge_count());
        }
    }

    #[test]
    fn attribute_triplets() {
        let edges = csv_file("0,1,0\n2,3,1\n");
        let seq = load_edge_csv(edges.path(), Binning::ExplicitSteps).unwrap();

        let empty = csv_file("");
        let x = load_attribute_triplets(empty.path(), seq.clone()).unwrap();
        assert!(x.snapshots().iter().all(|s| s.attributes.nnz() == 0));

        let one = csv_file("0,3,7,2.0\n");
        let x = load_attribute_triplets(one.path(), seq.clone()).unwrap();
        assert_eq!(x.attribute_count(), 8);
        assert_eq!(x.attributes(0).get(3, 7), 2.0);
        assert_eq!(x.attributes(0).nnz() + x.attributes(1).nnz(), 1);

        let dup = csv_file("t,node,attr,value\n1,0,1,1.0\n1,0,1,4.0\n");
        let x = load_attribute_triplets(dup.path(), seq.clone()).unwrap();
        assert_eq!(x.attributes(1).get(0, 1), 4.0);

        let late = csv_file("2,0,0,1.0\n");
        assert!(matches!(load_attribute_triplets(late.path(), seq.clone()), Err(CoevoError::Parse { line: 1, .. })));
        let unknown = csv_file("0,0,0,1\n0,9,0,1\n");
        assert!(matches!(load_attribute_triplets(unknown.path(), seq), Err(CoevoError::Parse { line: 2, .. })));
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let f = csv_file("a,b,2,0\nb,c,1,10\nc,a,1,20\n");
        let seq = load_edge_csv(f.path(), Binning::Window(15.0)).unwrap();
        let bytes = sequence_to_bytes(&seq);
        let back = sequence_from_bytes(&bytes).unwrap();
        assert_eq!(back, seq);
        assert_eq!(sequence_to_bytes(&back), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(sequence_from_bytes(&bad), Err(CoevoError::Format(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(sequence_from_bytes(&bad), Err(CoevoError::Format(_))));
        assert!(sequence_from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
