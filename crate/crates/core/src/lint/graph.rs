use crate::messages::MessageKind;
use crate::orchestrator::Deployment;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    /// Index into `Deployment::services`.
    Service(usize),
    Store(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEdge {
    pub from: usize,
    pub to: usize,
    /// Message kind name, or `store` for store access.
    pub via: String,
    pub from_line: usize,
    pub to_line: usize,
}

/// Who feeds whom, derived from the manifest alone.
///
/// One service→service edge per message kind a producer publishes and
/// another service subscribes. Stores are nodes of their own with
/// service→store edges for writers and store→service edges for readers.
/// A service subscribing its own output gets no edge; that is a separate smell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<FlowEdge>,
}

pub fn build_flow_graph(dep: &Deployment) -> FlowGraph {
    let mut nodes: Vec<Node> = (0..dep.services.len()).map(Node::Service).collect();
    let mut edges = Vec::new();
    for (pi, p) in dep.services.iter().enumerate() {
        for kind in MessageKind::ALL {
            let Some(pub_at) = p.publishes.iter().find(|x| x.value == kind) else {
                continue;
            };
            for (ci, c) in dep.services.iter().enumerate() {
                if ci == pi {
                    continue;
                }
                if let Some(sub_at) = c.subscribes.iter().find(|x| x.value == kind) {
                    edges.push(FlowEdge {
                        from: pi,
                        to: ci,
                        via: kind.name().to_string(),
                        from_line: pub_at.line,
                        to_line: sub_at.line,
                    });
                }
            }
        }
    }
    let store_node = |name: &str, nodes: &mut Vec<Node>| -> usize {
        match nodes.iter().position(|n| matches!(n, Node::Store(s) if s == name)) {
            Some(i) => i,
            None => {
                nodes.push(Node::Store(name.to_string()));
                nodes.len() - 1
            }
        }
    };
    for (si, s) in dep.services.iter().enumerate() {
        for w in &s.stores_written {
            let n = store_node(&w.value, &mut nodes);
            edges.push(FlowEdge {
                from: si,
                to: n,
                via: "store".into(),
                from_line: w.line,
                to_line: w.line,
            });
        }
    }
    for (si, s) in dep.services.iter().enumerate() {
        for r in &s.stores_read {
            let n = store_node(&r.value, &mut nodes);
            edges.push(FlowEdge {
                from: n,
                to: si,
                via: "store".into(),
                from_line: r.line,
                to_line: r.line,
            });
        }
    }
    FlowGraph { nodes, edges }
}

impl FlowGraph {
    pub fn label(&self, dep: &Deployment, n: usize) -> String {
        match &self.nodes[n] {
            Node::Service(i) => dep.services[*i].name.clone(),
            Node::Store(s) => format!("store:{s}"),
        }
    }

    /// Successors of a node, deduplicated.
    pub fn successors(&self, n: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.edges.iter().filter(|e| e.from == n).map(|e| e.to).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Node sets of every directed cycle, one per strongly connected component.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let pairs: Vec<(usize, usize)> = self.edges.iter().map(|e| (e.from, e.to)).collect();
        cyclic_components(self.nodes.len(), &pairs)
    }
}

/// Strongly connected components that contain a cycle: two or more nodes,
/// or one node with a self edge. Each component is sorted; components are
/// ordered by their smallest node.
pub fn cyclic_components(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    // iterative Tarjan
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next = 0;
    let mut comps = Vec::new();
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut i)) = work.last_mut() {
            if *i < adj[v].len() {
                let w = adj[v][*i];
                *i += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().unwrap();
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    let cyclic = comp.len() > 1 || adj[v].contains(&v);
                    if cyclic {
                        comp.sort_unstable();
                        comps.push(comp);
                    }
                }
            }
        }
    }
    comps.sort();
    comps
}
