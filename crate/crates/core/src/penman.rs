//! PENMAN reader/writer and the AMR graph type.
//!
//! Graphs keep edges in the order they appear in the source text; every
//! downstream traversal relies on that order being stable.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PenmanError {
    #[error("empty input")]
    Empty,
    #[error("line {line}: unbalanced parentheses")]
    Unbalanced { line: usize },
    #[error("line {line}: expected {expected}, found {found:?}")]
    Unexpected {
        line: usize,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: variable {var:?} redefined as {second:?} (was {first:?})")]
    Redefinition {
        line: usize,
        var: String,
        first: String,
        second: String,
    },
    #[error("line {line}: unterminated string literal")]
    UnterminatedString { line: usize },
    #[error("graph is not connected: node {0:?} is unreachable from the root")]
    Disconnected(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Introduced by a `(var / concept ...)` definition.
    Variable,
    /// Bare attribute value such as `7` or `-`.
    Constant,
    /// Double-quoted attribute value; the quotes are not part of the label.
    Quoted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub concept: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub source: usize,
    pub label: String,
    pub target: usize,
}

/// Rooted, directed, edge-labelled concept graph. Reentrant nodes have
/// more than one incoming edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmrGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    root: usize,
}

impl AmrGraph {
    /// Builds a graph and checks its invariants: unique ids, labels starting
    /// with `:`, and every node connected to the root.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, root: usize) -> Result<Self, PenmanError> {
        if nodes.is_empty() {
            return Err(PenmanError::Empty);
        }
        if root >= nodes.len() {
            return Err(PenmanError::Invalid(format!("root index {root} out of range")));
        }
        let mut seen = HashSet::new();
        for n in &nodes {
            if !seen.insert(n.id.as_str()) {
                return Err(PenmanError::Invalid(format!("duplicate node id {:?}", n.id)));
            }
        }
        for e in &edges {
            if e.source >= nodes.len() || e.target >= nodes.len() {
                return Err(PenmanError::Invalid("edge endpoint out of range".into()));
            }
            if !e.label.starts_with(':') || e.label.len() < 2 {
                return Err(PenmanError::Invalid(format!(
                    "relation label {:?} must start with ':'",
                    e.label
                )));
            }
        }
        let g = AmrGraph { nodes, edges, root };
        let reach = g.undirected_reach(root);
        if let Some(i) = reach.iter().position(|r| !r) {
            return Err(PenmanError::Disconnected(g.nodes[i].id.clone()));
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Index of the first node whose concept equals `concept`.
    pub fn find_concept(&self, concept: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.concept == concept)
    }

    /// Outgoing edges of `node` in source order.
    pub fn children(&self, node: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter().filter(move |e| e.source == node)
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.target == node).count()
    }

    /// Number of nodes with two or more parents.
    pub fn reentrancy_count(&self) -> usize {
        let mut indeg = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            indeg[e.target] += 1;
        }
        indeg.iter().filter(|&&d| d >= 2).count()
    }

    /// True if an edge joins `a` and `b` in either direction.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.edges
            .iter()
            .any(|e| (e.source == a && e.target == b) || (e.source == b && e.target == a))
    }

    fn undirected_reach(&self, start: usize) -> Vec<bool> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.source].push(e.target);
            adj[e.target].push(e.source);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplifyOptions {
    pub remove_wiki: bool,
    pub remove_sense_tags: bool,
}

impl Default for SimplifyOptions {
    fn default() -> Self {
        SimplifyOptions {
            remove_wiki: true,
            remove_sense_tags: true,
        }
    }
}

/// Strips a trailing `-NN` sense suffix, e.g. `convict-01` -> `convict`.
pub fn strip_sense_tag(concept: &str) -> &str {
    if let Some(pos) = concept.rfind('-') {
        let (stem, suffix) = (&concept[..pos], &concept[pos + 1..]);
        if !stem.is_empty() && !suffix.is_empty() && suffix.bytes().all(|b| b.is_ascii_digit()) {
            return stem;
        }
    }
    concept
}

/// Drops `:wiki` attributes and/or sense suffixes. Idempotent.
pub fn simplify(g: &AmrGraph, opts: SimplifyOptions) -> AmrGraph {
    let mut drop = vec![false; g.nodes.len()];
    let mut edges: Vec<&Edge> = g.edges.iter().collect();
    if opts.remove_wiki {
        edges.retain(|e| {
            let wiki = e.label == ":wiki" && g.nodes[e.target].kind != NodeKind::Variable;
            if wiki {
                drop[e.target] = true;
            }
            !wiki
        });
        // a wiki constant that is also reached another way stays
        for e in &edges {
            drop[e.target] = false;
        }
        drop[g.root] = false;
    }
    let mut remap = vec![usize::MAX; g.nodes.len()];
    let mut nodes = Vec::with_capacity(g.nodes.len());
    for (i, n) in g.nodes.iter().enumerate() {
        if drop[i] {
            continue;
        }
        remap[i] = nodes.len();
        let concept = if opts.remove_sense_tags && n.kind == NodeKind::Variable {
            strip_sense_tag(&n.concept).to_string()
        } else {
            n.concept.clone()
        };
        nodes.push(Node {
            id: n.id.clone(),
            concept,
            kind: n.kind,
        });
    }
    let edges = edges
        .into_iter()
        .map(|e| Edge {
            source: remap[e.source],
            label: e.label.clone(),
            target: remap[e.target],
        })
        .collect();
    AmrGraph {
        nodes,
        edges,
        root: remap[g.root],
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Slash,
    Role(String),
    Atom(String),
    Str(String),
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, PenmanError> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                out.push((Tok::Open, line));
                chars.next();
            }
            ')' => {
                out.push((Tok::Close, line));
                chars.next();
            }
            '/' => {
                out.push((Tok::Slash, line));
                chars.next();
            }
            '"' => {
                chars.next();
                let start = line;
                let mut s = String::new();
                let mut closed = false;
                while let Some(c) = chars.next() {
                    match c {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\\' => {
                            if let Some(n) = chars.next() {
                                s.push(n);
                            }
                        }
                        '\n' => {
                            line += 1;
                            s.push(c);
                        }
                        _ => s.push(c),
                    }
                }
                if !closed {
                    return Err(PenmanError::UnterminatedString { line: start });
                }
                out.push((Tok::Str(s), start));
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' {
                        break;
                    }
                    // `/` only separates when it stands alone
                    if c == '/' && s.is_empty() {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                if s.starts_with(':') {
                    out.push((Tok::Role(s), line));
                } else {
                    out.push((Tok::Atom(s), line));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug)]
enum Target {
    Node(TreeNode),
    Atom(String),
    Str(String),
}

#[derive(Debug)]
struct TreeNode {
    var: String,
    concept: String,
    line: usize,
    edges: Vec<(String, Target)>,
}

struct TreeParser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl TreeParser {
    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map_or(1, |t| t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.0.clone());
        self.pos += 1;
        t
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn unexpected(&self, expected: &'static str, found: Option<Tok>) -> PenmanError {
        match found {
            None => PenmanError::Unbalanced { line: self.line() },
            Some(t) => PenmanError::Unexpected {
                line: self.line(),
                expected,
                found: format!("{t:?}"),
            },
        }
    }

    fn node(&mut self) -> Result<TreeNode, PenmanError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Open) => {}
            other => return Err(self.unexpected("'('", other)),
        }
        let var = match self.next() {
            Some(Tok::Atom(v)) => v,
            other => return Err(self.unexpected("variable", other)),
        };
        match self.next() {
            Some(Tok::Slash) => {}
            other => return Err(self.unexpected("'/'", other)),
        }
        let concept = match self.next() {
            Some(Tok::Atom(c)) => c,
            Some(Tok::Str(c)) => c,
            other => return Err(self.unexpected("concept", other)),
        };
        let mut edges = Vec::new();
        loop {
            match self.peek() {
                Some(Tok::Close) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Role(_)) => {
                    let Some(Tok::Role(role)) = self.next() else { unreachable!() };
                    let target = match self.peek() {
                        Some(Tok::Open) => Target::Node(self.node()?),
                        Some(Tok::Atom(_)) => {
                            let Some(Tok::Atom(a)) = self.next() else { unreachable!() };
                            Target::Atom(a)
                        }
                        Some(Tok::Str(_)) => {
                            let Some(Tok::Str(s)) = self.next() else { unreachable!() };
                            Target::Str(s)
                        }
                        None => return Err(PenmanError::Unbalanced { line: self.line() }),
                        _ => {
                            let t = self.next();
                            return Err(self.unexpected("relation target", t));
                        }
                    };
                    edges.push((role, target));
                }
                None => return Err(PenmanError::Unbalanced { line: self.line() }),
                _ => {
                    let t = self.next();
                    return Err(self.unexpected("relation or ')'", t));
                }
            }
        }
        Ok(TreeNode {
            var,
            concept,
            line,
            edges,
        })
    }
}

fn collect_defs(
    node: &TreeNode,
    defs: &mut HashMap<String, String>,
) -> Result<(), PenmanError> {
    if let Some(prev) = defs.get(&node.var) {
        if prev != &node.concept {
            return Err(PenmanError::Redefinition {
                line: node.line,
                var: node.var.clone(),
                first: prev.clone(),
                second: node.concept.clone(),
            });
        }
    } else {
        defs.insert(node.var.clone(), node.concept.clone());
    }
    for (_, t) in &node.edges {
        if let Target::Node(n) = t {
            collect_defs(n, defs)?;
        }
    }
    Ok(())
}

struct GraphBuilder<'a> {
    defs: &'a HashMap<String, String>,
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    constants: usize,
}

impl GraphBuilder<'_> {
    fn variable(&mut self, var: &str) -> usize {
        if let Some(&i) = self.index.get(var) {
            return i;
        }
        let i = self.nodes.len();
        self.nodes.push(Node {
            id: var.to_string(),
            concept: self.defs[var].clone(),
            kind: NodeKind::Variable,
        });
        self.index.insert(var.to_string(), i);
        i
    }

    fn constant(&mut self, value: &str, kind: NodeKind) -> usize {
        let i = self.nodes.len();
        let mut id = format!("#c{}", self.constants);
        while self.index.contains_key(&id) || self.defs.contains_key(&id) {
            self.constants += 1;
            id = format!("#c{}", self.constants);
        }
        self.constants += 1;
        self.nodes.push(Node {
            id: id.clone(),
            concept: value.to_string(),
            kind,
        });
        self.index.insert(id, i);
        i
    }

    fn build(&mut self, node: &TreeNode) -> usize {
        let src = self.variable(&node.var);
        for (role, target) in &node.edges {
            let tgt = match target {
                Target::Node(n) => self.build(n),
                Target::Atom(a) if self.defs.contains_key(a) => self.variable(a),
                Target::Atom(a) => self.constant(a, NodeKind::Constant),
                Target::Str(s) => self.constant(s, NodeKind::Quoted),
            };
            self.edges.push(Edge {
                source: src,
                label: role.clone(),
                target: tgt,
            });
        }
        src
    }
}

/// Parses one complete PENMAN expression. A variable used again after its
/// definition (or before it) refers to the same node.
pub fn parse_penman(text: &str) -> Result<AmrGraph, PenmanError> {
    let toks = tokenize(text)?;
    if toks.is_empty() {
        return Err(PenmanError::Empty);
    }
    let mut p = TreeParser { toks, pos: 0 };
    let tree = p.node()?;
    if let Some(t) = p.next() {
        return Err(match t {
            Tok::Close | Tok::Open => PenmanError::Unbalanced { line: p.line() },
            other => PenmanError::Unexpected {
                line: p.line(),
                expected: "end of input",
                found: format!("{other:?}"),
            },
        });
    }
    let mut defs = HashMap::new();
    collect_defs(&tree, &mut defs)?;
    let mut b = GraphBuilder {
        defs: &defs,
        nodes: Vec::new(),
        index: HashMap::new(),
        edges: Vec::new(),
        constants: 0,
    };
    let root = b.build(&tree);
    AmrGraph::new(b.nodes, b.edges, root)
}

fn needs_quotes(s: &str) -> bool {
    s.is_empty()
        || s.chars()
            .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '"' | '/' | ':'))
}

/// Deterministic PENMAN writer. Each node is defined at its first visit in
/// a depth-first walk over outgoing edges; later visits print the variable.
pub fn serialize(g: &AmrGraph) -> Result<String, PenmanError> {
    fn walk(g: &AmrGraph, n: usize, seen: &mut [bool], depth: usize, out: &mut String) {
        let node = &g.nodes[n];
        match node.kind {
            NodeKind::Variable => {
                if seen[n] {
                    out.push_str(&node.id);
                    return;
                }
                seen[n] = true;
                let _ = write!(out, "({} / {}", node.id, node.concept);
                for e in g.children(n) {
                    out.push('\n');
                    out.push_str(&"    ".repeat(depth + 1));
                    out.push_str(&e.label);
                    out.push(' ');
                    walk(g, e.target, seen, depth + 1, out);
                }
                out.push(')');
            }
            NodeKind::Constant if !needs_quotes(&node.concept) => {
                seen[n] = true;
                out.push_str(&node.concept);
            }
            _ => {
                seen[n] = true;
                out.push('"');
                out.push_str(&node.concept.replace('\\', "\\\\").replace('"', "\\\""));
                out.push('"');
            }
        }
    }
    if g.nodes[g.root].kind != NodeKind::Variable {
        return Err(PenmanError::Invalid("root must be a variable node".into()));
    }
    let mut seen = vec![false; g.nodes.len()];
    let mut out = String::new();
    walk(g, g.root, &mut seen, 0, &mut out);
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(PenmanError::Disconnected(g.nodes[i].id.clone()));
    }
    Ok(out)
}

/// One block of an AMR corpus file.
#[derive(Debug, Clone)]
pub struct AmrEntry {
    pub sentence: Option<String>,
    pub graph: AmrGraph,
    /// 1-based line where the block starts.
    pub line: usize,
}

#[derive(Debug, Error)]
#[error("line {line}")]
pub struct CorpusError {
    pub line: usize,
    #[source]
    pub source: PenmanError,
}

/// Reads a corpus file: blank-line separated blocks, `# ::snt ` lines carry
/// the reference sentence, other `#` lines are ignored.
pub fn read_corpus(text: &str) -> Result<Vec<AmrEntry>, CorpusError> {
    let mut entries = Vec::new();
    let mut block: Vec<&str> = Vec::new();
    let mut block_start = 0;
    let mut sentence = None;
    let flush = |block: &mut Vec<&str>,
                     sentence: &mut Option<String>,
                     start: usize,
                     entries: &mut Vec<AmrEntry>|
     -> Result<(), CorpusError> {
        if block.is_empty() {
            *sentence = None;
            return Ok(());
        }
        let text = block.join("\n");
        let graph = parse_penman(&text).map_err(|e| CorpusError {
            line: start + error_line(&e).saturating_sub(1),
            source: e,
        })?;
        entries.push(AmrEntry {
            sentence: sentence.take(),
            graph,
            line: start,
        });
        block.clear();
        Ok(())
    };
    let mut comment_only = true;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut block, &mut sentence, block_start, &mut entries)?;
            comment_only = true;
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(s) = rest.trim_start().strip_prefix("::snt ") {
                sentence = Some(s.trim().to_string());
            }
            continue;
        }
        if comment_only {
            block_start = lineno;
            comment_only = false;
        }
        block.push(line);
    }
    flush(&mut block, &mut sentence, block_start, &mut entries)?;
    if entries.is_empty() {
        return Err(CorpusError {
            line: 1,
            source: PenmanError::Empty,
        });
    }
    Ok(entries)
}

fn error_line(e: &PenmanError) -> usize {
    match e {
        PenmanError::Unbalanced { line }
        | PenmanError::Unexpected { line, .. }
        | PenmanError::Redefinition { line, .. }
        | PenmanError::UnterminatedString { line } => *line,
        _ => 1,
    }
}
