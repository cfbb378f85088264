//! Graph JSON:
//! `{"n":..,"d":..,"edges":[[i,j],..],"features":[[..],..],"labels":[..],"labeled":[..],"verified":[..]}`
//! with `i < j` edges and every real printed with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use super::{Graph, GraphError};
use crate::scalar::Scalar;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    n: usize,
    d: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    labels: Vec<i64>,
    #[serde(default)]
    labeled: Vec<usize>,
    #[serde(default)]
    verified: Vec<usize>,
}

/// Decimal with 17 significant digits, which round-trips every `f64`.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_index_list(out: &mut String, idx: &[usize]) {
    out.push('[');
    for (k, i) in idx.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{i}");
    }
    out.push(']');
}

pub fn graph_to_json<T: Scalar>(graph: &Graph<T>) -> Result<String, GraphError> {
    let mut out = String::new();
    let _ = write!(out, "{{\"n\":{},\"d\":{},\"edges\":[", graph.n(), graph.d());
    for (k, (i, j)) in graph.edges().into_iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "[{i},{j}]");
    }
    out.push_str("],\"features\":[");
    for (r, row) in graph.features().rows().into_iter().enumerate() {
        if r > 0 {
            out.push(',');
        }
        out.push('[');
        for (c, v) in row.iter().enumerate() {
            let v = v.to_f64_lossy();
            if !v.is_finite() {
                return Err(GraphError::Malformed(format!("non-finite feature at ({r}, {c})")));
            }
            if c > 0 {
                out.push(',');
            }
            out.push_str(&fmt_real(v));
        }
        out.push(']');
    }
    out.push_str("],\"labels\":[");
    for (k, l) in graph.labels().iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{l}");
    }
    out.push_str("],\"labeled\":");
    write_index_list(&mut out, &graph.labeled_indices());
    out.push_str(",\"verified\":");
    write_index_list(&mut out, &graph.verified_indices());
    out.push_str("}\n");
    Ok(out)
}

pub fn graph_from_json<T: Scalar>(text: &str) -> Result<Graph<T>, GraphError> {
    let file: GraphFile = serde_json::from_str(text)?;
    if file.features.len() != file.n {
        return Err(GraphError::DimensionMismatch(format!(
            "{} feature rows for n={}",
            file.features.len(),
            file.n
        )));
    }
    if let Some(r) = file.features.iter().position(|row| row.len() != file.d) {
        return Err(GraphError::DimensionMismatch(format!(
            "feature row {r} has length {}, expected d={}",
            file.features[r].len(),
            file.d
        )));
    }
    if file.labels.len() != file.n {
        return Err(GraphError::DimensionMismatch(format!(
            "{} labels for n={}",
            file.labels.len(),
            file.n
        )));
    }
    let features = Array2::from_shape_fn((file.n, file.d), |(i, k)| T::lit(file.features[i][k]));
    let edges: Vec<(usize, usize)> = file
        .edges
        .iter()
        .map(|&[i, j]| {
            if i < j {
                Ok((i, j))
            } else {
                Err(GraphError::Malformed(format!("edge [{i},{j}] must satisfy i < j")))
            }
        })
        .collect::<Result<_, _>>()?;
    let mut graph = Graph::from_edges(file.n, &edges, features, file.labels)?;
    graph.set_labeled(&file.labeled)?;
    graph.set_verified(&file.verified)?;
    Ok(graph)
}

pub fn save_graph<T: Scalar>(graph: &Graph<T>, path: impl AsRef<Path>) -> Result<(), GraphError> {
    fs::write(path, graph_to_json(graph)?)?;
    Ok(())
}

pub fn load_graph<T: Scalar>(path: impl AsRef<Path>) -> Result<Graph<T>, GraphError> {
    graph_from_json(&fs::read_to_string(path)?)
}
