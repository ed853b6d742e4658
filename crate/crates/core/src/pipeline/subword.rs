use crate::penman::{AmrGraph, Edge, Node};

use super::bpe::BpeModel;
use super::PipelineError;

/// Label of the chain edges created when the root itself is split.
pub const ROOT_LABEL: &str = ":root";

/// BPE pieces for every node concept, indexed like `g.nodes()`.
pub fn segment_nodes(g: &AmrGraph, bpe: &BpeModel) -> Vec<Vec<String>> {
    g.nodes()
        .iter()
        .map(|n| {
            let p = bpe.apply(&n.concept);
            if p.is_empty() {
                vec![n.concept.clone()]
            } else {
                p
            }
        })
        .collect()
}

/// Replaces every node split into k pieces by a chain of k nodes.
///
/// Chain edges carry the label of the node's first incoming edge (`:root`
/// for the root) and point from each piece to the next. The original
/// incoming and outgoing edges attach to the first piece. Chain edges are
/// listed before all other edges, so a depth-first walk emits the pieces of
/// one node contiguously.
pub fn extend_graph_subwords(
    g: &AmrGraph,
    seg: &[Vec<String>],
) -> Result<AmrGraph, PipelineError> {
    if seg.len() != g.len() {
        return Err(PipelineError::Segmentation(format!(
            "{} segmentations for {} nodes",
            seg.len(),
            g.len()
        )));
    }
    if let Some(i) = seg.iter().position(|s| s.is_empty()) {
        return Err(PipelineError::Segmentation(format!(
            "node {:?} has no pieces",
            g.nodes()[i].id
        )));
    }
    let mut first = Vec::with_capacity(g.len());
    let mut nodes: Vec<Node> = Vec::new();
    let mut chain_edges = Vec::new();
    for (i, (node, pieces)) in g.nodes().iter().zip(seg).enumerate() {
        let label = if i == g.root() {
            ROOT_LABEL.to_string()
        } else {
            g.edges()
                .iter()
                .find(|e| e.target == i)
                .map(|e| e.label.clone())
                .unwrap_or_else(|| ROOT_LABEL.to_string())
        };
        first.push(nodes.len());
        for (k, piece) in pieces.iter().enumerate() {
            let id = if k == 0 {
                node.id.clone()
            } else {
                format!("{}~{}", node.id, k)
            };
            if k > 0 {
                chain_edges.push(Edge {
                    source: nodes.len() - 1,
                    label: label.clone(),
                    target: nodes.len(),
                });
            }
            nodes.push(Node {
                id,
                concept: piece.clone(),
                kind: node.kind,
            });
        }
    }
    let mut edges = chain_edges;
    edges.extend(g.edges().iter().map(|e| Edge {
        source: first[e.source],
        label: e.label.clone(),
        target: first[e.target],
    }));
    Ok(AmrGraph::new(nodes, edges, first[g.root()])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::parse_penman;

    #[test]
    fn single_piece_segmentation_is_identity() {
        let g = parse_penman("(a / and :op1 (b / boy) :op2 (c / cat))").unwrap();
        let seg: Vec<Vec<String>> = g.nodes().iter().map(|n| vec![n.concept.clone()]).collect();
        assert_eq!(extend_graph_subwords(&g, &seg).unwrap(), g);
    }

    #[test]
    fn split_root_uses_reserved_label() {
        let g = parse_penman("(s / sentence-01 :ARG1 (h / he))").unwrap();
        let seg = vec![vec!["sent@@".into(), "ence-01".into()], vec!["he".into()]];
        let x = extend_graph_subwords(&g, &seg).unwrap();
        assert_eq!(x.len(), 3);
        let chain = &x.edges()[0];
        assert_eq!(chain.label, ROOT_LABEL);
        assert_eq!(x.nodes()[chain.source].concept, "sent@@");
        assert_eq!(x.nodes()[chain.target].concept, "ence-01");
        assert_eq!(x.nodes()[x.root()].concept, "sent@@");
        // outgoing edge moved to the first piece
        assert_eq!(x.edges()[1].source, x.root());
    }

    #[test]
    fn rejects_bad_segmentation() {
        let g = parse_penman("(h / he)").unwrap();
        assert!(extend_graph_subwords(&g, &[]).is_err());
        assert!(extend_graph_subwords(&g, &[vec![]]).is_err());
    }
}
