//! JSON graph files.
//!
//! ```json
//! {"n": 3, "features": [[1, 0], [0, 1], [0, 1]], "edges": [[0, 1], [1, 2]], "labels": [1, 2, 2]}
//! ```
//!
//! Connectivity (hop distances) and uniform node weights are derived on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, Result};
use crate::tensor::Tensor;

#[derive(Serialize)]
struct GraphFileOut<'a> {
    n: usize,
    features: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<&'a [usize]>,
}

#[derive(Deserialize)]
struct GraphFileIn {
    n: Option<usize>,
    features: Option<Vec<Vec<f64>>>,
    edges: Option<Vec<[usize; 2]>>,
    labels: Option<Vec<usize>>,
}

pub fn to_json_string(graph: &Graph) -> String {
    let out = GraphFileOut {
        n: graph.n(),
        features: graph.features().to_rows(),
        edges: graph.edges().into_iter().map(|(i, j)| [i, j]).collect(),
        labels: graph.labels(),
    };
    let mut s = serde_json::to_string(&out).expect("graph serialization cannot fail");
    s.push('\n');
    s
}

pub fn save_graph(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json_string(graph)).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_graph(&text)
}

pub fn parse_graph(text: &str) -> Result<Graph> {
    let raw: GraphFileIn = serde_json::from_str(text).map_err(|e| GraphError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let n = raw.n.ok_or(GraphError::MissingField("n"))?;
    let features = raw.features.ok_or(GraphError::MissingField("features"))?;
    let edges = raw.edges.ok_or(GraphError::MissingField("edges"))?;
    if features.len() != n {
        return Err(GraphError::Size {
            what: "features rows",
            expected: n,
            found: features.len(),
        });
    }
    if n == 0 {
        return Err(GraphError::Invalid("graph has no nodes".into()));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(GraphError::Invalid("features have zero columns".into()));
    }
    for (row, f) in features.iter().enumerate() {
        if f.len() != d {
            return Err(GraphError::RowLength {
                row,
                expected: d,
                found: f.len(),
            });
        }
    }
    let features = Tensor::new(n, d, features.concat()).map_err(|e| GraphError::Invalid(e.to_string()))?;
    let edges: Vec<(usize, usize)> = edges.into_iter().map(|[i, j]| (i, j)).collect();
    Graph::from_edges(features, &edges, raw.labels)
}
