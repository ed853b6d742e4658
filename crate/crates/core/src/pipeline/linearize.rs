use crate::penman::AmrGraph;

/// Depth-first linearization with relation labels and brackets.
///
/// The root is written bare, every other node with children is wrapped in
/// `( ... )`, leaves are bare concepts. A reentrant node is written in full
/// at its first visit and as its plain concept afterwards.
pub fn linearize_full(g: &AmrGraph) -> Vec<String> {
    fn walk(g: &AmrGraph, n: usize, root: bool, seen: &mut [bool], out: &mut Vec<String>) {
        let concept = &g.nodes()[n].concept;
        if seen[n] {
            out.push(concept.clone());
            return;
        }
        seen[n] = true;
        let mut children = g.children(n).peekable();
        if children.peek().is_none() {
            out.push(concept.clone());
            return;
        }
        if !root {
            out.push("(".into());
        }
        out.push(concept.clone());
        for e in children {
            out.push(e.label.clone());
            walk(g, e.target, false, seen, out);
        }
        if !root {
            out.push(")".into());
        }
    }
    let mut seen = vec![false; g.len()];
    let mut out = Vec::new();
    walk(g, g.root(), true, &mut seen, &mut out);
    out
}

/// Concepts in depth-first preorder, each node once. The second vector maps
/// sequence positions back to node indices.
pub fn linearize_concepts(g: &AmrGraph) -> (Vec<String>, Vec<usize>) {
    let mut seen = vec![false; g.len()];
    let mut order = Vec::with_capacity(g.len());
    let mut stack = vec![g.root()];
    while let Some(n) = stack.pop() {
        if seen[n] {
            continue;
        }
        seen[n] = true;
        order.push(n);
        let kids: Vec<usize> = g.children(n).map(|e| e.target).collect();
        stack.extend(kids.into_iter().rev());
    }
    let concepts = order.iter().map(|&n| g.nodes()[n].concept.clone()).collect();
    (concepts, order)
}
