//! Line-delimited JSON stream files.
//!
//! The first line is a header; every following line holds one graph:
//!
//! ```text
//! {"format":"graphcd-stream","version":1,"N":7,"F":2,"S":0,"count":2,"tau":1,"seed":3}
//! {"A":[[1,2],[0],[0]],"X":[...row-major...],"E":[[0,1,[0.5]],...],"regime":"nominal"}
//! ```
//!
//! `A` is an adjacency list, `E` holds sparse `(i, j, attributes)` triplets.
//! Floats are written with 17 significant digits.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{Graph, GraphError, GraphStream, Regime, Result};

pub const STREAM_FORMAT: &str = "graphcd-stream";
pub const STREAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub format: String,
    pub version: u32,
    #[serde(rename = "N")]
    pub nodes: usize,
    #[serde(rename = "F")]
    pub node_features: usize,
    #[serde(rename = "S")]
    pub edge_features: usize,
    pub count: usize,
    pub tau: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct GraphRecord {
    #[serde(rename = "A")]
    adjacency: Vec<Vec<usize>>,
    #[serde(rename = "X")]
    x: Vec<f64>,
    #[serde(rename = "E", default)]
    e: Vec<(usize, usize, Vec<f64>)>,
}

fn push_float(out: &mut String, v: f64) -> std::result::Result<(), GraphError> {
    if !v.is_finite() {
        return Err(GraphError::Shape(format!("cannot serialise non-finite value {v}")));
    }
    write!(out, "{v:.16e}").expect("writing to String");
    Ok(())
}

fn graph_line(g: &Graph, regime: Option<Regime>) -> Result<String> {
    let n = g.order();
    let mut s = String::from("{\"A\":[");
    for i in 0..n {
        if i > 0 {
            s.push(',');
        }
        s.push('[');
        let nbrs: Vec<String> = (0..n)
            .filter(|&j| g.adjacency()[[i, j]] == 1.0)
            .map(|j| j.to_string())
            .collect();
        s.push_str(&nbrs.join(","));
        s.push(']');
    }
    s.push_str("],\"X\":[");
    for (k, v) in g.node_attributes().iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        push_float(&mut s, *v)?;
    }
    s.push_str("],\"E\":[");
    let mut first = true;
    if g.edge_features() > 0 {
        for i in 0..n {
            for j in 0..n {
                if g.adjacency()[[i, j]] != 1.0 {
                    continue;
                }
                if !first {
                    s.push(',');
                }
                first = false;
                write!(s, "[{i},{j},[").unwrap();
                for (k, v) in g.edge_attributes().slice(ndarray::s![i, j, ..]).iter().enumerate() {
                    if k > 0 {
                        s.push(',');
                    }
                    push_float(&mut s, *v)?;
                }
                s.push_str("]]");
            }
        }
    }
    s.push(']');
    if let Some(r) = regime {
        write!(s, ",\"regime\":{}", serde_json::to_string(&r).unwrap()).unwrap();
    }
    s.push('}');
    Ok(s)
}

/// Writes a stream; all graphs must share `N`, `F` and `S`.
pub fn write_stream<W: Write>(mut w: W, stream: &GraphStream) -> Result<()> {
    let first = stream
        .graphs
        .first()
        .ok_or_else(|| GraphError::InvalidParameters("cannot write an empty stream".into()))?;
    let dims = (first.order(), first.node_features(), first.edge_features());
    let header = StreamHeader {
        format: STREAM_FORMAT.into(),
        version: STREAM_VERSION,
        nodes: dims.0,
        node_features: dims.1,
        edge_features: dims.2,
        count: stream.len(),
        tau: stream.change_point,
        seed: stream.seed,
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serialises"))?;
    for (t, g) in stream.graphs.iter().enumerate() {
        if (g.order(), g.node_features(), g.edge_features()) != dims {
            return Err(GraphError::Shape(format!("graph {t} differs in N/F/S from the header")));
        }
        writeln!(w, "{}", graph_line(g, stream.regime(t))?)?;
    }
    Ok(())
}

/// Reads a stream written by [`write_stream`] (or produced externally in the same format).
pub fn read_stream<R: BufRead>(r: R) -> Result<GraphStream> {
    let mut lines = r.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(GraphError::Format {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: StreamHeader = serde_json::from_str(&header_line?).map_err(|e| GraphError::Format {
        line: 1,
        message: e.to_string(),
    })?;
    if header.format != STREAM_FORMAT || header.version != STREAM_VERSION {
        return Err(GraphError::Format {
            line: 1,
            message: format!("unsupported format {} v{}", header.format, header.version),
        });
    }
    let (n, f, s) = (header.nodes, header.node_features, header.edge_features);
    let mut graphs = Vec::with_capacity(header.count);
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt_err = |message: String| GraphError::Format { line: idx + 1, message };
        let rec: GraphRecord = serde_json::from_str(&line).map_err(|e| fmt_err(e.to_string()))?;
        if rec.adjacency.len() != n || rec.x.len() != n * f {
            return Err(fmt_err("graph size disagrees with header".into()));
        }
        let mut a = Array2::zeros((n, n));
        for (i, nbrs) in rec.adjacency.iter().enumerate() {
            for &j in nbrs {
                if j >= n {
                    return Err(fmt_err(format!("neighbour {j} out of range")));
                }
                a[[i, j]] = 1.0;
            }
        }
        let x = Array2::from_shape_vec((n, f), rec.x).map_err(|e| fmt_err(e.to_string()))?;
        let mut e = Array3::zeros((n, n, s));
        for (i, j, vals) in rec.e {
            if i >= n || j >= n || vals.len() != s {
                return Err(fmt_err(format!("bad edge attribute triplet ({i}, {j})")));
            }
            for (k, v) in vals.into_iter().enumerate() {
                e[[i, j, k]] = v;
            }
        }
        graphs.push(Graph::new(a, x, e).map_err(|err| fmt_err(err.to_string()))?);
    }
    if graphs.len() != header.count {
        return Err(GraphError::Format {
            line: 1,
            message: format!("header declares {} graphs, found {}", header.count, graphs.len()),
        });
    }
    Ok(GraphStream {
        graphs,
        change_point: header.tau,
        seed: header.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_benchmark_stream, BenchmarkConfig};
    use ndarray::array;

    #[test]
    fn benchmark_stream_roundtrips_bitwise() {
        let cfg = BenchmarkConfig {
            n_train: 5,
            n_operational: 6,
            change_point: 3,
            seed: 1,
            ..Default::default()
        };
        let (_, op) = make_benchmark_stream(&cfg).unwrap();
        let mut buf = Vec::new();
        write_stream(&mut buf, &op).unwrap();
        let back = read_stream(buf.as_slice()).unwrap();
        assert_eq!(back, op);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("\"regime\":\"nominal\""));
    }

    #[test]
    fn edge_attributes_roundtrip() {
        let a = array![[0., 1.], [1., 0.]];
        let mut e = Array3::zeros((2, 2, 2));
        e[[0, 1, 0]] = 0.1;
        e[[1, 0, 1]] = -1.0 / 3.0;
        let g = Graph::new(a, array![[1.0], [2.0]], e).unwrap();
        let stream = GraphStream::new(vec![g]);
        let mut buf = Vec::new();
        write_stream(&mut buf, &stream).unwrap();
        assert_eq!(read_stream(buf.as_slice()).unwrap(), stream);
    }

    #[test]
    fn malformed_lines_report_position() {
        let text = "{\"format\":\"graphcd-stream\",\"version\":1,\"N\":2,\"F\":1,\"S\":0,\"count\":1,\"tau\":null,\"seed\":null}\n{\"A\":[[5],[]],\"X\":[1,2]}\n";
        match read_stream(text.as_bytes()) {
            Err(GraphError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_version = text.replace("\"version\":1", "\"version\":9");
        assert!(read_stream(bad_version.as_bytes()).is_err());
    }
}
