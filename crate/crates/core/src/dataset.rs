//! Canonical on-disk dataset format and the adapter for the published
//! benchmark archives.
//!
//! A canonical dataset directory holds three files:
//! - `nodes.csv` with header `id,time,label`; ids are dense `0..N-1`.
//! - `edges.csv` with header `src,dst`; pairs are unordered.
//! - `features.txt` with whitespace-separated `node feature value` lines.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ClassId, ClassVocabulary, NodeId, TemporalGraph, Timestamp};
use crate::sparse::CsrMatrix;

pub const NODES_FILE: &str = "nodes.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const FEATURES_FILE: &str = "features.txt";

#[derive(Debug, Deserialize)]
struct NodeRow {
    id: String,
    time: String,
    label: String,
}

#[derive(Debug, Deserialize)]
struct EdgeRow {
    src: String,
    dst: String,
}

fn parse_index(s: &str, location: impl FnOnce() -> String) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Parse {
        location: location(),
        message: format!("expected a non-negative integer, got {s:?}"),
    })
}

/// Build a graph from the three canonical tables. `feature_dim` overrides
/// the dimension inferred as `1 + max feature id`.
pub fn load_graph(
    nodes: impl Read,
    edges: impl Read,
    features: impl Read,
    feature_dim: Option<usize>,
) -> Result<TemporalGraph> {
    let mut rows: Vec<Option<(Timestamp, String)>> = Vec::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(nodes);
    for (line, row) in reader.deserialize::<NodeRow>().enumerate() {
        let row = row?;
        let loc = || format!("{NODES_FILE} record {}", line + 1);
        let id = parse_index(&row.id, loc)?;
        let time: Timestamp = row.time.trim().parse().map_err(|_| Error::InvalidTimestamp {
            node: row.id.clone(),
            value: row.time.clone(),
        })?;
        if id >= rows.len() {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(Error::DuplicateNode(id));
        }
        rows[id] = Some((time, row.label));
    }
    let mut node_time = Vec::with_capacity(rows.len());
    let mut label_names = Vec::with_capacity(rows.len());
    for (id, row) in rows.into_iter().enumerate() {
        let (t, label) = row.ok_or(Error::MissingNode(id))?;
        node_time.push(t);
        label_names.push(label);
    }
    let n = node_time.len();
    let (vocab, labels) = vocabulary_by_first_seen(&node_time, &label_names)?;

    let mut edge_list = Vec::new();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(edges);
    for (line, row) in reader.deserialize::<EdgeRow>().enumerate() {
        let row = row?;
        let loc = || format!("{EDGES_FILE} record {}", line + 1);
        let u = parse_index(&row.src, loc)?;
        let v = parse_index(&row.dst, loc)?;
        for id in [u, v] {
            if id >= n {
                return Err(Error::UnknownNode { id, num_nodes: n });
            }
        }
        edge_list.push((u, v));
    }

    let triplets = read_feature_triplets(features, n)?;
    let max_index = triplets.iter().map(|&(_, j, _)| j + 1).max().unwrap_or(0);
    let dim = match feature_dim {
        Some(d) => {
            if let Some(&(_, j, _)) = triplets.iter().find(|&&(_, j, _)| j >= d) {
                return Err(Error::FeatureIndex { index: j, dim: d });
            }
            d
        }
        None => max_index.max(1),
    };
    let features = CsrMatrix::from_triplets(n, dim, triplets)?;
    TemporalGraph::new(node_time, labels, vocab, edge_list, features)
}

fn read_feature_triplets(features: impl Read, n: usize) -> Result<Vec<(NodeId, usize, f64)>> {
    let mut triplets = Vec::new();
    for (line_no, line) in BufReader::new(features).lines().enumerate() {
        let line = line.map_err(|e| Error::io(FEATURES_FILE, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("{FEATURES_FILE} line {}", line_no + 1);
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                location: loc(),
                message: format!("expected 3 fields, got {}", parts.len()),
            });
        }
        let u = parse_index(parts[0], loc)?;
        if u >= n {
            return Err(Error::UnknownNode { id: u, num_nodes: n });
        }
        let j = parse_index(parts[1], loc)?;
        let v: f64 = parts[2].parse().map_err(|_| Error::Parse {
            location: loc(),
            message: format!("expected a number, got {:?}", parts[2]),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                location: loc(),
                message: "feature value is not finite".into(),
            });
        }
        triplets.push((u, j, v));
    }
    Ok(triplets)
}

/// Class ids ordered by first appearance in time, ties broken by name.
fn vocabulary_by_first_seen(
    node_time: &[Timestamp],
    names: &[String],
) -> Result<(ClassVocabulary, Vec<ClassId>)> {
    let mut first: HashMap<&str, Timestamp> = HashMap::new();
    for (name, &t) in names.iter().zip(node_time) {
        first
            .entry(name.as_str())
            .and_modify(|f| *f = (*f).min(t))
            .or_insert(t);
    }
    let mut order: Vec<(Timestamp, &str)> = first.into_iter().map(|(n, t)| (t, n)).collect();
    order.sort();
    let vocab = ClassVocabulary::new(order.iter().map(|(_, n)| n.to_string()).collect())?;
    let labels = names
        .iter()
        .map(|n| vocab.id(n).expect("every label is in the vocabulary"))
        .collect();
    Ok((vocab, labels))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Load a canonical dataset directory.
pub fn load_dataset_dir(dir: &Path, feature_dim: Option<usize>) -> Result<TemporalGraph> {
    let missing: Vec<String> = [NODES_FILE, EDGES_FILE, FEATURES_FILE]
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnrecognizedLayout {
            dir: dir.to_path_buf(),
            missing,
        });
    }
    load_graph(
        open(&dir.join(NODES_FILE))?,
        open(&dir.join(EDGES_FILE))?,
        open(&dir.join(FEATURES_FILE))?,
        feature_dim,
    )
}

/// Write `g` as a canonical dataset directory, creating it if needed.
pub fn write_dataset_dir(g: &TemporalGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = csv::Writer::from_path(dir.join(NODES_FILE))?;
    w.write_record(["id", "time", "label"])?;
    for u in 0..g.num_nodes() {
        w.write_record([
            u.to_string(),
            g.time(u).to_string(),
            g.class_vocab().name(g.label(u)).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join(NODES_FILE), e))?;

    let mut w = csv::Writer::from_path(dir.join(EDGES_FILE))?;
    w.write_record(["src", "dst"])?;
    for (u, v) in g.edges() {
        w.write_record([u.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir.join(EDGES_FILE), e))?;

    let path = dir.join(FEATURES_FILE);
    let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    let x = g.features();
    for u in 0..x.rows() {
        let (cols, vals) = x.row(u);
        for (j, v) in cols.iter().zip(vals) {
            writeln!(out, "{u} {j} {v}").map_err(|e| Error::io(&path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(&path, e))
}

/// Reference counts of a published benchmark dataset. `None` marks a count
/// that is not reported exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PublishedCounts {
    pub name: &'static str,
    pub nodes: usize,
    pub edges: Option<usize>,
    pub features: usize,
    pub classes: usize,
    pub tasks: usize,
}

pub const PUBLISHED_DATASETS: [PublishedCounts; 3] = [
    PublishedCounts {
        name: "dblp-easy",
        nodes: 45_407,
        edges: Some(112_131),
        features: 2_278,
        classes: 12,
        tasks: 12,
    },
    PublishedCounts {
        name: "dblp-hard",
        nodes: 198_675,
        edges: Some(643_734),
        features: 4_043,
        classes: 73,
        tasks: 12,
    },
    PublishedCounts {
        name: "pharmabio",
        nodes: 68_068,
        edges: None,
        features: 4_829,
        classes: 7,
        tasks: 18,
    },
];

impl PublishedCounts {
    pub fn by_name(name: &str) -> Option<&'static PublishedCounts> {
        let key = name.to_ascii_lowercase().replace('_', "-");
        PUBLISHED_DATASETS.iter().find(|d| d.name == key)
    }
}

/// Files the published archives provide for each dataset.
pub const ARCHIVE_FILES: [&str; 4] = ["X.npy", "y.npy", "t.npy", "adjlist.txt"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptReport {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
    pub timestamps: usize,
    /// Reference dataset the counts were checked against.
    pub reference: Option<&'static str>,
    pub mismatches: Vec<String>,
}

impl AdaptReport {
    pub fn matches_reference(&self) -> bool {
        self.reference.is_some() && self.mismatches.is_empty()
    }
}

/// Convert a published archive directory (`X.npy`, `y.npy`, `t.npy`,
/// `adjlist.txt`) into a canonical dataset under `out_dir` and compare its
/// counts with the reference table. The reference is looked up by `name`,
/// or by the archive directory name when `name` is `None`.
pub fn adapt_published_dataset(archive_dir: &Path, out_dir: &Path, name: Option<&str>) -> Result<(TemporalGraph, AdaptReport)> {
    let g = load_published_archive(archive_dir)?;
    let dir_name = archive_dir.file_name().and_then(|s| s.to_str()).unwrap_or("");
    let reference = PublishedCounts::by_name(name.unwrap_or(dir_name));
    let timestamps = g.timestamps().len();
    let mut report = AdaptReport {
        nodes: g.num_nodes(),
        edges: g.num_edges(),
        features: g.feature_dim(),
        classes: g.num_classes(),
        timestamps,
        reference: reference.map(|r| r.name),
        mismatches: Vec::new(),
    };
    if let Some(r) = reference {
        let mut check = |what: &str, got: usize, want: usize| {
            if got != want {
                report.mismatches.push(format!("{what}: expected {want}, found {got}"));
            }
        };
        check("nodes", g.num_nodes(), r.nodes);
        if let Some(e) = r.edges {
            check("edges", g.num_edges(), e);
        }
        check("features", g.feature_dim(), r.features);
        check("classes", g.num_classes(), r.classes);
    }
    write_dataset_dir(&g, out_dir)?;
    Ok((g, report))
}

/// Read the published archive layout into a graph.
pub fn load_published_archive(dir: &Path) -> Result<TemporalGraph> {
    let missing: Vec<String> = ARCHIVE_FILES
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnrecognizedLayout {
            dir: dir.to_path_buf(),
            missing,
        });
    }
    let (t_shape, t_vals) = read_npy(&dir.join("t.npy"))?;
    let (y_shape, y_vals) = read_npy(&dir.join("y.npy"))?;
    let n = t_vals.len();
    if t_shape.len() != 1 || y_shape.len() != 1 || y_vals.len() != n {
        return Err(Error::Parse {
            location: dir.display().to_string(),
            message: format!("expected 1-d t.npy and y.npy of equal length, got shapes {t_shape:?} and {y_shape:?}"),
        });
    }
    let node_time = t_vals
        .iter()
        .enumerate()
        .map(|(i, &v)| integral(v).ok_or_else(|| Error::InvalidTimestamp { node: i.to_string(), value: v.to_string() }))
        .collect::<Result<Vec<_>>>()?;
    let label_names = y_vals
        .iter()
        .map(|&v| match integral(v) {
            Some(i) => Ok(i.to_string()),
            None => Err(Error::Parse {
                location: "y.npy".into(),
                message: format!("non-integral label {v}"),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let (vocab, labels) = vocabulary_by_first_seen(&node_time, &label_names)?;

    let x_path = dir.join("X.npy");
    let mut triplets = Vec::new();
    let x_shape = for_each_npy_value(&x_path, |row, col, v| {
        if v != 0.0 {
            triplets.push((row, col, v));
        }
    })?;
    if x_shape.len() != 2 || x_shape[0] != n {
        return Err(Error::Parse {
            location: x_path.display().to_string(),
            message: format!("expected shape ({n}, D), got {x_shape:?}"),
        });
    }
    let features = CsrMatrix::from_triplets(n, x_shape[1], triplets)?;

    let edges = read_adjlist(&dir.join("adjlist.txt"), n)?;
    TemporalGraph::new(node_time, labels, vocab, edges, features)
}

fn integral(v: f64) -> Option<i64> {
    (v.is_finite() && v.fract() == 0.0).then_some(v as i64)
}

/// Whitespace-separated adjacency lines `u v1 v2 ...`; `#` starts a
/// comment.
fn read_adjlist(path: &Path, n: usize) -> Result<Vec<(NodeId, NodeId)>> {
    let reader = BufReader::new(open(path)?);
    let mut edges = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let content = line.split('#').next().unwrap_or("");
        let mut ids = content.split_whitespace().map(|s| {
            let id = parse_index(s, || format!("{} line {}", path.display(), line_no + 1))?;
            if id >= n {
                return Err(Error::UnknownNode { id, num_nodes: n });
            }
            Ok(id)
        });
        if let Some(u) = ids.next() {
            let u = u?;
            for v in ids {
                edges.push((u, v?));
            }
        }
    }
    Ok(edges)
}

fn read_npy(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut values = Vec::new();
    let shape = for_each_npy_value(path, |_, _, v| values.push(v))?;
    Ok((shape, values))
}

/// Stream a numeric `.npy` array, calling `f(row, col, value)` per element.
/// One-dimensional arrays report column 0.
fn for_each_npy_value(path: &Path, mut f: impl FnMut(usize, usize, f64)) -> Result<Vec<usize>> {
    let npy = npyz::NpyFile::new(BufReader::new(open(path)?)).map_err(|e| Error::io(path, e))?;
    let shape: Vec<usize> = npy.shape().iter().map(|&s| s as usize).collect();
    let fortran = npy.order() == npyz::Order::Fortran;
    let (rows, cols) = match shape.as_slice() {
        [n] => (*n, 1),
        [n, d] => (*n, *d),
        _ => {
            return Err(Error::Parse {
                location: path.display().to_string(),
                message: format!("unsupported array rank {}", shape.len()),
            })
        }
    };
    let position = |i: usize| if fortran { (i % rows, i / rows) } else { (i / cols.max(1), i % cols.max(1)) };
    let unsupported = |what: String| Error::Parse {
        location: path.display().to_string(),
        message: format!("unsupported dtype {what}"),
    };
    let ts = match npy.dtype() {
        npyz::DType::Plain(ts) => ts,
        other => return Err(unsupported(other.descr())),
    };
    macro_rules! stream {
        ($t:ty) => {{
            let reader = npy.data::<$t>().map_err(|e| unsupported(e.to_string()))?;
            for (i, v) in reader.enumerate() {
                let v = v.map_err(|e| Error::io(path, e))?;
                let (r, c) = position(i);
                f(r, c, v as f64);
            }
        }};
    }
    use npyz::TypeChar;
    match (ts.type_char(), ts.size_field()) {
        (TypeChar::Float, 4) => stream!(f32),
        (TypeChar::Float, 8) => stream!(f64),
        (TypeChar::Int, 1) => stream!(i8),
        (TypeChar::Int, 2) => stream!(i16),
        (TypeChar::Int, 4) => stream!(i32),
        (TypeChar::Int, 8) => stream!(i64),
        (TypeChar::Uint, 1) => stream!(u8),
        (TypeChar::Uint, 2) => stream!(u16),
        (TypeChar::Uint, 4) => stream!(u32),
        (TypeChar::Uint, 8) => stream!(u64),
        (TypeChar::Bool, 1) => {
            let reader = npy.data::<bool>().map_err(|e| unsupported(e.to_string()))?;
            for (i, v) in reader.enumerate() {
                let v = v.map_err(|e| Error::io(path, e))?;
                let (r, c) = position(i);
                f(r, c, if v { 1.0 } else { 0.0 });
            }
        }
        _ => return Err(unsupported(ts.to_string())),
    }
    Ok(shape)
}

/// Per-timestamp node counts, for quick dataset summaries.
pub fn nodes_per_timestamp(g: &TemporalGraph) -> BTreeMap<Timestamp, usize> {
    let mut m = BTreeMap::new();
    for &t in g.node_times() {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use npyz::WriterBuilder;

    fn load(nodes: &str, edges: &str, features: &str) -> Result<TemporalGraph> {
        load_graph(nodes.as_bytes(), edges.as_bytes(), features.as_bytes(), None)
    }

    #[test]
    fn three_nodes_one_edge() {
        let g = load(
            "id,time,label\n0,1,a\n1,2,b\n2,3,a\n",
            "src,dst\n0,1\n1,0\n0,1\n",
            "0 0 1.0\n1 1 2.0\n2 0 0.5\n",
        )
        .unwrap();
        let degrees: Vec<usize> = (0..3).map(|u| g.degree(u)).collect();
        assert_eq!(degrees, vec![1, 1, 0]);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.feature_dim(), 2);
        assert_eq!(g.num_classes(), 2);
        assert_eq!(g.class_vocab().name(g.label(0)), "a");
    }

    #[test]
    fn unknown_node_in_edges() {
        let err = load("id,time,label\n0,1,a\n1,1,a\n2,1,a\n", "src,dst\n0,99\n", "").unwrap_err();
        assert!(err.to_string().contains("unknown node id"), "{err}");
    }

    #[test]
    fn validation_errors() {
        let e = load("id,time,label\n0,abc,a\n", "src,dst\n", "").unwrap_err();
        assert!(matches!(e, Error::InvalidTimestamp { .. }), "{e}");
        let e = load("id,time,label\n0,1,a\n0,2,b\n", "src,dst\n", "").unwrap_err();
        assert!(matches!(e, Error::DuplicateNode(0)), "{e}");
        let e = load("id,time,label\n0,1,a\n2,2,b\n", "src,dst\n", "").unwrap_err();
        assert!(matches!(e, Error::MissingNode(1)), "{e}");
        let e = load_graph(
            "id,time,label\n0,1,a\n".as_bytes(),
            "src,dst\n".as_bytes(),
            "0 5 1.0\n".as_bytes(),
            Some(3),
        )
        .unwrap_err();
        assert!(matches!(e, Error::FeatureIndex { index: 5, dim: 3 }), "{e}");
    }

    #[test]
    fn classes_ordered_by_first_appearance() {
        let g = load("id,time,label\n0,5,zeta\n1,1,beta\n2,1,alpha\n", "src,dst\n", "").unwrap();
        assert_eq!(g.class_vocab().names(), &["alpha", "beta", "zeta"]);
    }

    #[test]
    fn canonical_round_trip() {
        let g = load(
            "id,time,label\n0,1,\"x, y\"\n1,2,b\n2,3,b\n3,3,c\n",
            "src,dst\n0,1\n2,1\n3,0\n",
            "0 0 1.0\n1 1 2.0\n2 0 0.5\n2 3 0.25\n3 2 1e-3\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset_dir(&g, dir.path()).unwrap();
        let back = load_dataset_dir(dir.path(), Some(g.feature_dim())).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn missing_canonical_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(NODES_FILE), "id,time,label\n").unwrap();
        match load_dataset_dir(dir.path(), None).unwrap_err() {
            Error::UnrecognizedLayout { missing, .. } => {
                assert_eq!(missing, vec![EDGES_FILE.to_string(), FEATURES_FILE.to_string()])
            }
            e => panic!("{e}"),
        }
    }

    fn write_archive(dir: &Path) {
        let x: Vec<f32> = vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0];
        let mut w = npyz::WriteOptions::new()
            .default_dtype()
            .shape(&[4, 3])
            .writer(BufWriter::new(File::create(dir.join("X.npy")).unwrap()))
            .begin_nd()
            .unwrap();
        w.extend(x).unwrap();
        w.finish().unwrap();
        npyz::to_file_1d(dir.join("y.npy"), vec![3i64, 3, 7, 3]).unwrap();
        npyz::to_file_1d(dir.join("t.npy"), vec![2000i64, 2001, 2001, 2002]).unwrap();
        fs::write(dir.join("adjlist.txt"), "# comment\n0 1 2\n1\n2 3\n3\n").unwrap();
    }

    #[test]
    fn adapts_archive_layout() {
        let archive = tempfile::tempdir().unwrap();
        write_archive(archive.path());
        let out = tempfile::tempdir().unwrap();
        let (g, report) = adapt_published_dataset(archive.path(), out.path(), Some("unlisted")).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges(), g.feature_dim(), g.num_classes()), (4, 3, 3, 2));
        assert_eq!(report.timestamps, 3);
        assert_eq!(report.reference, None);
        assert_eq!(g.class_vocab().name(g.label(2)), "7");
        let back = load_dataset_dir(out.path(), Some(3)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn reports_count_mismatch_against_reference() {
        let archive = tempfile::tempdir().unwrap();
        write_archive(archive.path());
        let out = tempfile::tempdir().unwrap();
        let (_, report) = adapt_published_dataset(archive.path(), out.path(), Some("dblp-easy")).unwrap();
        assert_eq!(report.reference, Some("dblp-easy"));
        assert_eq!(report.mismatches.len(), 4);
        assert!(report.mismatches[0].contains("45407"));
        assert!(!report.matches_reference());
    }

    #[test]
    fn truncated_archive_lists_missing_files() {
        let archive = tempfile::tempdir().unwrap();
        write_archive(archive.path());
        fs::remove_file(archive.path().join("t.npy")).unwrap();
        fs::remove_file(archive.path().join("adjlist.txt")).unwrap();
        let out = tempfile::tempdir().unwrap();
        match adapt_published_dataset(archive.path(), out.path(), None).unwrap_err() {
            Error::UnrecognizedLayout { missing, .. } => {
                assert_eq!(missing, vec!["t.npy".to_string(), "adjlist.txt".to_string()])
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn reference_counts() {
        let easy = PublishedCounts::by_name("DBLP_easy").unwrap();
        assert_eq!((easy.nodes, easy.edges, easy.features, easy.classes), (45_407, Some(112_131), 2_278, 12));
        let pharma = PublishedCounts::by_name("pharmabio").unwrap();
        assert_eq!((pharma.nodes, pharma.classes, pharma.tasks), (68_068, 7, 18));
    }
}
