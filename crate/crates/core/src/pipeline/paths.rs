//! All-pairs structural label paths.

use std::collections::VecDeque;

use crate::penman::AmrGraph;

use super::PipelineError;

/// Path entry for `i == j` and for masked pairs.
pub const NONE_LABEL: &str = "None";
pub const UP: char = '↑';
pub const DOWN: char = '↓';

/// n×n table of direction-annotated label sequences between the concepts
/// of a sequence, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathMatrix {
    nodes: Vec<usize>,
    entries: Vec<Vec<String>>,
}

impl PathMatrix {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Graph node index behind each sequence position.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn get(&self, i: usize, j: usize) -> &[String] {
        &self.entries[i * self.n() + j]
    }

    pub fn entries(&self) -> &[Vec<String>] {
        &self.entries
    }

    pub fn is_none(&self, i: usize, j: usize) -> bool {
        let e = self.get(i, j);
        e.len() == 1 && e[0] == NONE_LABEL
    }

    /// Space-joined form used for display and as feature keys.
    pub fn entry_string(&self, i: usize, j: usize) -> String {
        self.get(i, j).join(" ")
    }
}

/// Swaps the direction symbol of an annotated label.
pub fn flip_direction(label: &str) -> String {
    if let Some(l) = label.strip_suffix(UP) {
        format!("{l}{DOWN}")
    } else if let Some(l) = label.strip_suffix(DOWN) {
        format!("{l}{UP}")
    } else {
        label.to_string()
    }
}

/// Reverses a path and flips every direction symbol.
pub fn reverse_path(path: &[String]) -> Vec<String> {
    path.iter().rev().map(|l| flip_direction(l)).collect()
}

struct Step {
    to: usize,
    label: String,
}

fn undirected_adjacency(g: &AmrGraph) -> Vec<Vec<Step>> {
    let mut adj: Vec<Vec<Step>> = (0..g.len()).map(|_| Vec::new()).collect();
    for e in g.edges() {
        adj[e.source].push(Step {
            to: e.target,
            label: format!("{}{DOWN}", e.label),
        });
        adj[e.target].push(Step {
            to: e.source,
            label: format!("{}{UP}", e.label),
        });
    }
    adj
}

/// Full label paths from `src` to every node, or `None` where unreachable.
fn bfs_paths(adj: &[Vec<Step>], src: usize) -> Vec<Option<Vec<String>>> {
    let n = adj.len();
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[src] = true;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for (k, step) in adj[u].iter().enumerate() {
            if !seen[step.to] {
                seen[step.to] = true;
                prev[step.to] = Some((u, k));
                queue.push_back(step.to);
            }
        }
    }
    (0..n)
        .map(|t| {
            if !seen[t] {
                return None;
            }
            let mut labels = Vec::new();
            let mut cur = t;
            while let Some((p, k)) = prev[cur] {
                labels.push(adj[p][k].label.clone());
                cur = p;
            }
            labels.reverse();
            Some(labels)
        })
        .collect()
}

/// Shortest undirected label path between every ordered pair of positions in
/// `order`. `↓` marks following an edge parent-to-child, `↑` child-to-parent.
///
/// For i < j the path comes from a breadth-first search rooted at position i
/// (neighbours in edge order, first path found wins); entry (j, i) is its
/// reverse with directions flipped. Paths longer than `max_len` keep their
/// first `max_len` labels.
pub fn extract_paths(
    g: &AmrGraph,
    order: &[usize],
    max_len: usize,
) -> Result<PathMatrix, PipelineError> {
    if max_len == 0 {
        return Err(PipelineError::Config("max path length must be at least 1".into()));
    }
    let mut used = vec![false; g.len()];
    for &o in order {
        if o >= g.len() || std::mem::replace(&mut used[o], true) {
            return Err(PipelineError::Config(format!("invalid or repeated node index {o} in order")));
        }
    }
    let n = order.len();
    let adj = undirected_adjacency(g);
    let mut entries = vec![Vec::new(); n * n];
    for i in 0..n {
        entries[i * n + i] = vec![NONE_LABEL.to_string()];
        if i + 1 == n {
            break;
        }
        let paths = bfs_paths(&adj, order[i]);
        for j in i + 1..n {
            let path = paths[order[j]].clone().ok_or_else(|| {
                PipelineError::Disconnected(
                    g.nodes()[order[i]].id.clone(),
                    g.nodes()[order[j]].id.clone(),
                )
            })?;
            let mut back = reverse_path(&path);
            let mut fwd = path;
            fwd.truncate(max_len);
            back.truncate(max_len);
            entries[i * n + j] = fwd;
            entries[j * n + i] = back;
        }
    }
    Ok(PathMatrix {
        nodes: order.to_vec(),
        entries,
    })
}

/// Replaces the entry of every pair not joined by a single edge with `None`.
pub fn mask_indirect(pm: &PathMatrix, g: &AmrGraph) -> PathMatrix {
    let n = pm.n();
    let mut entries = pm.entries.clone();
    for i in 0..n {
        for j in 0..n {
            if i != j && !g.adjacent(pm.nodes[i], pm.nodes[j]) {
                entries[i * n + j] = vec![NONE_LABEL.to_string()];
            }
        }
    }
    PathMatrix {
        nodes: pm.nodes.clone(),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::{parse_penman, simplify, tests::EXAMPLE, SimplifyOptions};
    use crate::pipeline::linearize_concepts;

    fn fig1() -> (AmrGraph, PathMatrix) {
        let g = simplify(&parse_penman(EXAMPLE).unwrap(), SimplifyOptions::default());
        let (_, order) = linearize_concepts(&g);
        let pm = extract_paths(&g, &order, 4).unwrap();
        (g, pm)
    }

    fn pos(g: &AmrGraph, pm: &PathMatrix, concept: &str) -> usize {
        let n = g.find_concept(concept).unwrap();
        pm.nodes().iter().position(|&x| x == n).unwrap()
    }

    #[test]
    fn table_entries() {
        let (g, pm) = fig1();
        let he = pos(&g, &pm, "he");
        assert_eq!(pm.get(he, pos(&g, &pm, "convict")), [":ARG1↑"]);
        assert_eq!(pm.get(he, pos(&g, &pm, "7")), [":ARG1↑", ":ARG2↓", ":quant↓"]);
        assert_eq!(pm.get(he, he), [NONE_LABEL]);
        assert_eq!(pm.get(pos(&g, &pm, "7"), he), [":quant↑", ":ARG2↑", ":ARG1↓"]);
    }

    #[test]
    fn truncation_keeps_near_side() {
        let (g, _) = fig1();
        let (_, order) = linearize_concepts(&g);
        let pm = extract_paths(&g, &order, 2).unwrap();
        let he = pm.nodes().iter().position(|&x| x == g.find_concept("he").unwrap()).unwrap();
        let seven = pm.nodes().iter().position(|&x| x == g.find_concept("7").unwrap()).unwrap();
        assert_eq!(pm.get(he, seven), [":ARG1↑", ":ARG2↓"]);
        assert_eq!(pm.get(seven, he), [":quant↑", ":ARG2↑"]);
        assert!(extract_paths(&g, &order, 0).is_err());
    }

    #[test]
    fn mask_keeps_only_edges() {
        let (g, pm) = fig1();
        let m = mask_indirect(&pm, &g);
        let he = pos(&g, &pm, "he");
        assert!(m.is_none(he, pos(&g, &pm, "7")));
        assert_eq!(m.get(he, pos(&g, &pm, "convict")), [":ARG1↑"]);
        assert_eq!(mask_indirect(&m, &g), m);
    }

    #[test]
    fn direction_flip() {
        assert_eq!(flip_direction(":ARG1↑"), ":ARG1↓");
        assert_eq!(flip_direction(":ARG1↓"), ":ARG1↑");
        assert_eq!(flip_direction(NONE_LABEL), NONE_LABEL);
    }
}
