//! Text file formats: edge lists, feature rows, label tokens and
//! user/item interaction lists.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use grade_core::{Graph, Labels, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Inconsistent { path: PathBuf, message: String },
    #[error(transparent)]
    Graph(#[from] grade_core::Error),
}

type LoadResult<T> = Result<T, LoadError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    Class,
    Regress,
}

fn read(path: &Path) -> LoadResult<String> {
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> LoadError {
    LoadError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Declared node count, if any, and the edges.
pub type EdgeList = (Option<usize>, Vec<(usize, usize)>);

/// Reads an edge list of `src,dst` lines. A first line `#nodes=<n>` fixes
/// the node count; otherwise it is the largest index plus one.
pub fn read_edges(path: &Path) -> LoadResult<EdgeList> {
    let text = read(path)?;
    let mut declared = None;
    if let Some(first) = text.lines().next() {
        if let Some(rest) = first.trim().strip_prefix("#nodes=") {
            let n = rest
                .trim()
                .parse()
                .map_err(|_| parse_err(path, 1, format!("bad node count {rest:?}")))?;
            declared = Some(n);
        }
    }
    let mut edges = Vec::new();
    for (no, line) in content_lines(&text) {
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, no, format!("expected \"src,dst\", got {line:?}")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, no, format!("bad node index {:?}", s.trim())))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok((declared, edges))
}

/// Reads comma-separated real rows; all rows must have the same width.
pub fn read_features(path: &Path) -> LoadResult<Matrix> {
    let text = read(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (no, line) in content_lines(&text) {
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(path, no, format!("bad feature value {:?}", t.trim())))
            })
            .collect::<LoadResult<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(path, no, format!("expected {w} values, found {}", row.len())))
            }
            _ => {}
        }
        data.extend(row);
        rows += 1;
    }
    Ok(Matrix::from_vec(rows, width.unwrap_or(0), data)?)
}

/// Raw label tokens, one per line.
pub fn read_label_tokens(path: &Path) -> LoadResult<Vec<String>> {
    Ok(content_lines(&read(path)?).map(|(_, l)| l.to_owned()).collect())
}

pub fn read_labels(path: &Path, mode: LabelMode) -> LoadResult<Labels> {
    let text = read(path)?;
    let lines = content_lines(&text);
    match mode {
        LabelMode::Class => lines
            .map(|(no, l)| {
                l.parse::<usize>()
                    .map_err(|_| parse_err(path, no, format!("class label must be a non-negative integer, got {l:?}")))
            })
            .collect::<LoadResult<_>>()
            .map(Labels::Classes),
        LabelMode::Regress => lines
            .map(|(no, l)| {
                l.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(path, no, format!("bad regression target {l:?}")))
            })
            .collect::<LoadResult<_>>()
            .map(Labels::Targets),
    }
}

/// Assembles a graph from an edge list plus optional feature and label
/// files. Without a feature file every node gets the single feature `1`.
pub fn load_graph_csv(
    edge_path: &Path,
    feature_path: Option<&Path>,
    label_path: Option<&Path>,
    mode: LabelMode,
) -> LoadResult<Graph> {
    let (declared, edges) = read_edges(edge_path)?;
    let inferred = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
    let n = match declared {
        Some(n) if n < inferred => {
            return Err(LoadError::Inconsistent {
                path: edge_path.to_path_buf(),
                message: format!("header declares {n} nodes but an edge uses index {}", inferred - 1),
            })
        }
        Some(n) => n,
        None => inferred,
    };
    let features = match feature_path {
        Some(p) => {
            let f = read_features(p)?;
            if f.rows() != n {
                return Err(LoadError::Inconsistent {
                    path: p.to_path_buf(),
                    message: format!("{} feature rows for a {n}-node graph", f.rows()),
                });
            }
            f
        }
        None => Matrix::from_vec(n, 1, vec![1.0; n])?,
    };
    let labels = match label_path {
        Some(p) => {
            let l = read_labels(p, mode)?;
            if l.len() != n {
                return Err(LoadError::Inconsistent {
                    path: p.to_path_buf(),
                    message: format!("{} labels for a {n}-node graph", l.len()),
                });
            }
            Some(l)
        }
        None => None,
    };
    Ok(Graph::new(n, edges, features, labels)?)
}

/// User/item interactions with string ids mapped to dense indices in order
/// of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionData {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub pairs: Vec<(usize, usize)>,
}

pub fn read_interactions(path: &Path) -> LoadResult<InteractionData> {
    let text = read(path)?;
    let mut user_ids = HashMap::new();
    let mut item_ids = HashMap::new();
    let mut data = InteractionData {
        users: Vec::new(),
        items: Vec::new(),
        pairs: Vec::new(),
    };
    for (no, line) in content_lines(&text) {
        let (u, i) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, no, format!("expected \"user_id,item_id\", got {line:?}")))?;
        let (u, i) = (u.trim(), i.trim());
        if u.is_empty() || i.is_empty() {
            return Err(parse_err(path, no, "empty id"));
        }
        let ui = *user_ids.entry(u.to_owned()).or_insert_with(|| {
            data.users.push(u.to_owned());
            data.users.len() - 1
        });
        let ii = *item_ids.entry(i.to_owned()).or_insert_with(|| {
            data.items.push(i.to_owned());
            data.items.len() - 1
        });
        data.pairs.push((ui, ii));
    }
    if data.pairs.is_empty() {
        return Err(LoadError::Inconsistent {
            path: path.to_path_buf(),
            message: "no interactions".into(),
        });
    }
    Ok(data)
}

fn write(path: &Path, text: &str) -> std::io::Result<()> {
    fs::write(path, text)
}

/// Writes the edge list with a `#nodes=` header so isolated nodes survive.
pub fn write_edges(path: &Path, g: &Graph) -> std::io::Result<()> {
    let mut s = format!("#nodes={}\n", g.num_nodes());
    for &(u, v) in g.edges() {
        writeln!(s, "{u},{v}").expect("string write");
    }
    write(path, &s)
}

pub fn write_features(path: &Path, m: &Matrix) -> std::io::Result<()> {
    let mut s = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|x| x.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    write(path, &s)
}

pub fn write_labels(path: &Path, labels: &Labels) -> std::io::Result<()> {
    let s: String = match labels {
        Labels::Classes(c) => c.iter().map(|x| format!("{x}\n")).collect(),
        Labels::Targets(t) => t.iter().map(|x| format!("{x}\n")).collect(),
    };
    write(path, &s)
}
