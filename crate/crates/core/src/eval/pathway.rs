use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::balanced_accuracy;
use crate::envpolicy::EpisodeTrace;
use crate::error::{Error, Result};
use crate::synthstudy::view_name;

/// A state of the aggregated pathway graph: the *set* of acquired views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayNode {
    pub views: Vec<usize>,
    pub reaching: usize,
    pub terminating: usize,
    /// Terminal bACC (%) of the studies that stop here; `None` if none do.
    pub as_bacc: Option<f64>,
    pub ef_bacc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayEdge {
    pub from: Vec<usize>,
    pub view: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayTree {
    pub n_views: usize,
    pub n_studies: usize,
    /// Ordered by subset size, then by view list.
    pub nodes: Vec<PathwayNode>,
    pub edges: Vec<PathwayEdge>,
}

fn views_of(code: usize, n: usize) -> Vec<usize> {
    (0..n).filter(|v| code >> v & 1 == 1).collect()
}

impl PathwayTree {
    pub fn build(traces: &[EpisodeTrace], n_views: usize, n_as: usize, n_ef: usize) -> Result<Self> {
        #[derive(Default)]
        struct Acc {
            reaching: usize,
            term: Vec<((usize, usize), (usize, usize))>,
        }
        let mut nodes: BTreeMap<usize, Acc> = BTreeMap::new();
        let mut edges: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in traces {
            let mut code = 0usize;
            nodes.entry(code).or_default().reaching += 1;
            for &v in &t.order {
                if v >= n_views || code >> v & 1 == 1 {
                    return Err(Error::Config(format!("study {}: bad acquisition order {:?}", t.study_id, t.order)));
                }
                *edges.entry((code, v)).or_default() += 1;
                code |= 1 << v;
                nodes.entry(code).or_default().reaching += 1;
            }
            nodes.entry(code).or_default().term.push((t.pred, t.truth));
        }
        let bacc = |pairs: &[((usize, usize), (usize, usize))], task: usize, k: usize| -> Result<Option<f64>> {
            if pairs.is_empty() {
                return Ok(None);
            }
            let (p, y): (Vec<usize>, Vec<usize>) =
                pairs.iter().map(|(p, y)| if task == 0 { (p.0, y.0) } else { (p.1, y.1) }).unzip();
            Ok(Some(100.0 * balanced_accuracy(&p, &y, k)?))
        };
        let mut out_nodes = Vec::with_capacity(nodes.len());
        for (&code, acc) in &nodes {
            out_nodes.push(PathwayNode {
                views: views_of(code, n_views),
                reaching: acc.reaching,
                terminating: acc.term.len(),
                as_bacc: bacc(&acc.term, 0, n_as)?,
                ef_bacc: bacc(&acc.term, 1, n_ef)?,
            });
        }
        out_nodes.sort_by(|a, b| (a.views.len(), &a.views).cmp(&(b.views.len(), &b.views)));
        let mut out_edges: Vec<PathwayEdge> = edges
            .into_iter()
            .map(|((from, view), count)| PathwayEdge { from: views_of(from, n_views), view, count })
            .collect();
        out_edges.sort_by(|a, b| (a.from.len(), &a.from, a.view).cmp(&(b.from.len(), &b.from, b.view)));
        Ok(Self { n_views, n_studies: traces.len(), nodes: out_nodes, edges: out_edges })
    }

    pub fn node(&self, views: &[usize]) -> Option<&PathwayNode> {
        self.nodes.iter().find(|n| n.views == views)
    }

    /// Checks `reaching = terminating + outgoing` at every node, that edge
    /// counts never exceed the parent's reaching count, and that terminal
    /// counts partition the studies. Returns a description of the first
    /// violation.
    pub fn check_integrity(&self) -> std::result::Result<(), String> {
        let total: usize = self.nodes.iter().map(|n| n.terminating).sum();
        if total != self.n_studies {
            return Err(format!("{total} terminations for {} studies", self.n_studies));
        }
        for n in &self.nodes {
            let out: usize = self.edges.iter().filter(|e| e.from == n.views).map(|e| e.count).sum();
            if n.reaching != n.terminating + out {
                return Err(format!("node {:?}: reaching {} != {} + {}", n.views, n.reaching, n.terminating, out));
            }
        }
        for e in &self.edges {
            let parent = self.node(&e.from).map_or(0, |n| n.reaching);
            if e.count > parent {
                return Err(format!("edge {:?}+{} carries {} > {}", e.from, e.view, e.count, parent));
            }
        }
        Ok(())
    }

    fn label(views: &[usize]) -> String {
        if views.is_empty() {
            "start".into()
        } else {
            views.iter().map(|&v| view_name(v)).collect::<Vec<_>>().join("+")
        }
    }

    pub fn to_dot(&self) -> String {
        let id = |views: &[usize]| format!("s{}", views.iter().map(|v| 1usize << v).sum::<usize>());
        let mut s = String::from("digraph pathways {\n  rankdir=LR;\n  node [shape=box];\n");
        for n in &self.nodes {
            let acc = match (n.as_bacc, n.ef_bacc) {
                (Some(a), Some(e)) => format!("\\nAS {a:.1} / EF {e:.1}"),
                _ => String::new(),
            };
            let _ = writeln!(
                s,
                "  {} [label=\"{}\\nreach {} / stop {}{}\"];",
                id(&n.views),
                Self::label(&n.views),
                n.reaching,
                n.terminating,
                acc
            );
        }
        for e in &self.edges {
            let mut to = e.from.clone();
            to.push(e.view);
            to.sort_unstable();
            let _ = writeln!(s, "  {} -> {} [label=\"{}\"];", id(&e.from), id(&to), e.count);
        }
        s.push_str("}\n");
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serialises")
    }
}
