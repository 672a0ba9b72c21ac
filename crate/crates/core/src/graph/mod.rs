//! Member / feature / choice graph and the relational message-passing network
//! that scores member-choice links.

mod network;
mod train;

use std::cell::Cell;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::population::{ChoiceIndex, Dataset, MemberId, QueryId};

pub use network::{
    impute, loss_and_gradient, message_pass, score, EmbeddingTable, GnnParameters, Gradient,
    LayerWeights, Supervision,
};
pub use train::{gradient_check, train, MaskConfig, MaskPlan, TrainConfig, TrainReport, Trained};

/// Node kinds in the global index space `[members | features | choices]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Member,
    Feature,
    Choice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseEdge {
    pub member: MemberId,
    pub query: QueryId,
    pub choice: ChoiceIndex,
}

/// Tri-partite graph. Members link to one feature node per attribute and to
/// at most one choice node per query.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    feature_offset: Vec<usize>,
    feature_labels: Vec<String>,
    choice_offset: Vec<usize>,
    choice_labels: Vec<String>,
    member_features: Vec<Vec<usize>>,
    member_edges: Vec<Vec<usize>>,
    edges: Vec<ResponseEdge>,
}

impl HeteroGraph {
    /// Empty graph over the dataset's schema.
    pub fn with_schema(d: &Dataset) -> Self {
        let mut feature_offset = Vec::with_capacity(d.attributes.len());
        let mut feature_labels = Vec::new();
        for a in &d.attributes {
            feature_offset.push(feature_labels.len());
            feature_labels.extend(a.bins.iter().map(|b| format!("{}={b}", a.name)));
        }
        let mut choice_offset = Vec::with_capacity(d.queries.len());
        let mut choice_labels = Vec::new();
        for q in &d.queries {
            choice_offset.push(choice_labels.len());
            choice_labels.extend(q.choices.iter().map(|c| format!("{}:{c}", q.key)));
        }
        Self {
            feature_offset,
            feature_labels,
            choice_offset,
            choice_labels,
            member_features: Vec::new(),
            member_edges: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Graph of `d`'s members; response edges only when `include_responses`.
    pub fn build(d: &Dataset, include_responses: bool) -> Result<Self> {
        let mut g = Self::with_schema(d);
        g.append_members(d, include_responses)?;
        Ok(g)
    }

    /// Appends `d`'s members (same schema) and returns the index of the first.
    pub fn append_members(&mut self, d: &Dataset, include_responses: bool) -> Result<MemberId> {
        self.check_schema(d)?;
        let first = self.n_members();
        for m in &d.members {
            if m.features.len() != self.feature_offset.len() {
                return Err(Error::Schema(format!(
                    "member {} has {} features, schema has {}",
                    m.key,
                    m.features.len(),
                    self.feature_offset.len()
                )));
            }
            let mut nodes = Vec::with_capacity(m.features.len());
            for (a, &bin) in m.features.iter().enumerate() {
                if bin >= d.attributes[a].bins.len() {
                    return Err(Error::Schema(format!(
                        "member {} has bin {bin} outside attribute {}",
                        m.key, d.attributes[a].name
                    )));
                }
                nodes.push(self.feature_offset[a] + bin);
            }
            self.member_features.push(nodes);
            self.member_edges.push(Vec::new());
        }
        if include_responses {
            for (m, q, c) in d.responses.iter() {
                self.add_observation(first + m, q, c)?;
            }
        }
        Ok(first)
    }

    fn check_schema(&self, d: &Dataset) -> Result<()> {
        let bins: usize = d.attributes.iter().map(|a| a.bins.len()).sum();
        let choices: usize = d.queries.iter().map(|q| q.n_choices()).sum();
        if d.attributes.len() != self.feature_offset.len()
            || d.queries.len() != self.choice_offset.len()
            || bins != self.n_features()
            || choices != self.n_choice_nodes()
        {
            return Err(Error::Schema(
                "dataset schema does not match the graph".into(),
            ));
        }
        Ok(())
    }

    pub fn add_observation(
        &mut self,
        member: MemberId,
        query: QueryId,
        choice: ChoiceIndex,
    ) -> Result<()> {
        if member >= self.n_members()
            || query >= self.n_queries()
            || choice >= self.n_choices(query)
        {
            return Err(Error::Integrity(format!(
                "edge ({member}, {query}, {choice}) references an unknown node"
            )));
        }
        if self.response_of(member, query).is_some() {
            return Err(Error::Integrity(format!(
                "member {member} already answered query {query}"
            )));
        }
        self.member_edges[member].push(self.edges.len());
        self.edges.push(ResponseEdge {
            member,
            query,
            choice,
        });
        Ok(())
    }

    /// Adds every observation or none.
    pub fn add_observations(&mut self, obs: &[(MemberId, QueryId, ChoiceIndex)]) -> Result<()> {
        let mut next = self.clone();
        for &(m, q, c) in obs {
            next.add_observation(m, q, c)?;
        }
        *self = next;
        Ok(())
    }

    pub fn n_members(&self) -> usize {
        self.member_features.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_labels.len()
    }

    pub fn n_choice_nodes(&self) -> usize {
        self.choice_labels.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_members() + self.n_features() + self.n_choice_nodes()
    }

    pub fn n_queries(&self) -> usize {
        self.choice_offset.len()
    }

    pub fn n_choices(&self, q: QueryId) -> usize {
        let end = self
            .choice_offset
            .get(q + 1)
            .copied()
            .unwrap_or(self.n_choice_nodes());
        end - self.choice_offset[q]
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        if node < self.n_members() {
            NodeKind::Member
        } else if node < self.n_members() + self.n_features() {
            NodeKind::Feature
        } else {
            NodeKind::Choice
        }
    }

    pub fn feature_node(&self, local: usize) -> usize {
        self.n_members() + local
    }

    /// Global node id of choice `c` of query `q`.
    pub fn choice_node(&self, q: QueryId, c: ChoiceIndex) -> usize {
        self.n_members() + self.n_features() + self.choice_offset[q] + c
    }

    /// Index of choice node `(q, c)` within the choice block.
    pub fn choice_local(&self, q: QueryId, c: ChoiceIndex) -> usize {
        self.choice_offset[q] + c
    }

    pub fn member_feature_nodes(&self, m: MemberId) -> &[usize] {
        &self.member_features[m]
    }

    pub fn edges(&self) -> &[ResponseEdge] {
        &self.edges
    }

    pub fn member_edge_ids(&self, m: MemberId) -> &[usize] {
        &self.member_edges[m]
    }

    pub fn n_membership_edges(&self) -> usize {
        self.member_features.iter().map(Vec::len).sum()
    }

    pub fn n_response_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn response_of(&self, m: MemberId, q: QueryId) -> Option<ChoiceIndex> {
        self.member_edges[m]
            .iter()
            .map(|&e| self.edges[e])
            .find(|e| e.query == q)
            .map(|e| e.choice)
    }

    /// Writes `nodes.csv` and `edges.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let nodes = dir.join("nodes.csv");
        let mut out = Vec::new();
        writeln!(out, "node,kind,label").expect("write to memory");
        for m in 0..self.n_members() {
            writeln!(out, "{m},member,{m}").expect("write to memory");
        }
        for (i, l) in self.feature_labels.iter().enumerate() {
            writeln!(out, "{},feature,{}", self.feature_node(i), csv_field(l))
                .expect("write to memory");
        }
        let base = self.n_members() + self.n_features();
        for (i, l) in self.choice_labels.iter().enumerate() {
            writeln!(out, "{},choice,{}", base + i, csv_field(l)).expect("write to memory");
        }
        fs::write(&nodes, out).map_err(|e| Error::io(&nodes, e))?;

        let edges = dir.join("edges.csv");
        let mut out = Vec::new();
        writeln!(out, "source,target,relation").expect("write to memory");
        for (m, fs_) in self.member_features.iter().enumerate() {
            for &f in fs_ {
                writeln!(out, "{m},{},membership", self.feature_node(f)).expect("write to memory");
            }
        }
        for e in &self.edges {
            writeln!(
                out,
                "{},{},response",
                e.member,
                self.choice_node(e.query, e.choice)
            )
            .expect("write to memory");
        }
        fs::write(&edges, out).map_err(|e| Error::io(&edges, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Neighbor lists used by message passing. Response edges flagged as hidden
/// are left out; `hidden_reads` counts any hidden edge touched during
/// aggregation and stays at zero unless the view leaks.
#[derive(Debug, Clone)]
pub struct Adjacency {
    n_members: usize,
    feature: Vec<Vec<usize>>,
    response: Vec<Vec<(usize, usize)>>,
    hidden: Vec<bool>,
    reads: Cell<usize>,
}

impl Adjacency {
    /// Every response edge visible.
    pub fn full(g: &HeteroGraph) -> Self {
        Self::with_hidden(g, vec![false; g.n_response_edges()])
    }

    /// `hidden[e]` removes response edge `e` from the view.
    pub fn with_hidden(g: &HeteroGraph, hidden: Vec<bool>) -> Self {
        assert_eq!(
            hidden.len(),
            g.n_response_edges(),
            "one flag per response edge"
        );
        let n = g.n_nodes();
        let mut feature = vec![Vec::new(); n];
        let mut response = vec![Vec::new(); n];
        for m in 0..g.n_members() {
            for &f in g.member_feature_nodes(m) {
                let node = g.feature_node(f);
                feature[m].push(node);
                feature[node].push(m);
            }
        }
        for (id, e) in g.edges().iter().enumerate() {
            if hidden[id] {
                continue;
            }
            let node = g.choice_node(e.query, e.choice);
            response[e.member].push((node, id));
            response[node].push((e.member, id));
        }
        Self {
            n_members: g.n_members(),
            feature,
            response,
            hidden,
            reads: Cell::new(0),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn feature_neighbors(&self, node: usize) -> &[usize] {
        &self.feature[node]
    }

    pub fn response_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.response[node].iter().map(move |&(n, e)| {
            if self.hidden[e] {
                self.reads.set(self.reads.get() + 1);
            }
            n
        })
    }

    pub fn response_degree(&self, node: usize) -> usize {
        self.response[node].len()
    }

    /// Number of hidden edges read so far.
    pub fn hidden_reads(&self) -> usize {
        self.reads.get()
    }
}
