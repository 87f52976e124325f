//! OBO ontology ingestion and reduction of specific terms to category terms
//! by subsumption over the `is_a` hierarchy.

use std::collections::{BTreeSet, HashMap, VecDeque};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OntologyError {
    #[error("line {line}: duplicate term id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: `is_a` outside of a [Term] stanza with an id")]
    OrphanTag { line: usize },
    #[error("is_a edges reference undefined or obsolete terms: {}", .0.join(", "))]
    DanglingParents(Vec<String>),
    #[error("is_a cycle detected through term `{0}`")]
    Cycle(String),
    #[error("unknown term id `{0}`")]
    UnknownTerm(String),
    #[error("category file line {line}: {message}")]
    CategoryLine { line: usize, message: String },
    #[error("category set is empty")]
    EmptyCategories,
}

pub type Result<T> = std::result::Result<T, OntologyError>;

/// Immutable is_a hierarchy. Terms keep their file order; parents keep the
/// order of their `is_a` lines.
#[derive(Debug, Clone)]
pub struct OntologyGraph {
    ids: Vec<String>,
    names: Vec<String>,
    parents: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

#[derive(Default)]
struct Stanza {
    id: Option<(String, usize)>,
    name: Option<String>,
    is_a: Vec<String>,
    obsolete: bool,
}

/// Parse the `[Term]` subset of the OBO flat-file format.
///
/// Only `id`, `name`, `is_a` and `is_obsolete` are interpreted. Obsolete
/// terms are dropped, so an `is_a` edge that points at one is reported as
/// dangling together with every other unresolved target.
pub fn parse_obo(text: &str) -> Result<OntologyGraph> {
    let mut stanzas: Vec<Stanza> = Vec::new();
    let mut current: Option<Stanza> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('!') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            if let Some(stanza) = current.take() {
                stanzas.push(stanza);
            }
            if line == "[Term]" {
                current = Some(Stanza::default());
            }
            continue;
        }
        let Some(stanza) = current.as_mut() else {
            // header lines and non-Term stanzas
            continue;
        };
        let Some((tag, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        match tag.trim() {
            "id" => stanza.id = Some((value.to_string(), lineno)),
            "name" => stanza.name = Some(value.to_string()),
            "is_a" => {
                let target = value.split(" !").next().unwrap_or("").trim();
                let target = target.split_whitespace().next().unwrap_or("");
                if !target.is_empty() {
                    stanza.is_a.push(target.to_string());
                }
            }
            "is_obsolete" => stanza.obsolete = value.eq_ignore_ascii_case("true"),
            _ => {}
        }
    }
    if let Some(stanza) = current.take() {
        stanzas.push(stanza);
    }

    let mut ids = Vec::new();
    let mut names = Vec::new();
    let mut index = HashMap::new();
    let mut seen = HashMap::new();
    let mut live: Vec<Stanza> = Vec::new();
    for stanza in stanzas {
        let Some((id, line)) = stanza.id.clone() else {
            continue;
        };
        if seen.insert(id.clone(), line).is_some() {
            return Err(OntologyError::DuplicateId { id, line });
        }
        if stanza.obsolete {
            continue;
        }
        index.insert(id.clone(), ids.len());
        names.push(stanza.name.clone().unwrap_or_else(|| id.clone()));
        ids.push(id);
        live.push(stanza);
    }

    let mut dangling = BTreeSet::new();
    let mut parents = Vec::with_capacity(live.len());
    for stanza in &live {
        let mut edges = Vec::with_capacity(stanza.is_a.len());
        for target in &stanza.is_a {
            match index.get(target) {
                Some(&p) => {
                    if !edges.contains(&p) {
                        edges.push(p);
                    }
                }
                None => {
                    dangling.insert(target.clone());
                }
            }
        }
        parents.push(edges);
    }
    if !dangling.is_empty() {
        return Err(OntologyError::DanglingParents(dangling.into_iter().collect()));
    }

    let graph = OntologyGraph {
        ids,
        names,
        parents,
        index,
    };
    if let Some(member) = graph.find_cycle() {
        return Err(OntologyError::Cycle(graph.ids[member].clone()));
    }
    Ok(graph)
}

impl OntologyGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn name(&self, id: &str) -> Option<&str> {
        self.index.get(id).map(|&i| self.names[i].as_str())
    }

    /// Term ids in file order.
    pub fn term_ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    /// Direct `is_a` parents in file order.
    pub fn parents(&self, id: &str) -> Result<Vec<&str>> {
        let i = self.require(id)?;
        Ok(self.parents[i].iter().map(|&p| self.ids[p].as_str()).collect())
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    fn require(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| OntologyError::UnknownTerm(id.to_string()))
    }

    /// Transitive closure over parent edges, excluding `id` itself.
    pub fn ancestors(&self, id: &str) -> Result<BTreeSet<String>> {
        let start = self.require(id)?;
        Ok(self
            .hop_distances(start)
            .into_iter()
            .filter(|&(node, _)| node != start)
            .map(|(node, _)| self.ids[node].clone())
            .collect())
    }

    /// BFS over parent edges; returns every reachable node (including the
    /// start at distance 0) with its shortest hop count.
    fn hop_distances(&self, start: usize) -> Vec<(usize, usize)> {
        let mut dist: HashMap<usize, usize> = HashMap::new();
        let mut order = Vec::new();
        let mut queue = VecDeque::new();
        dist.insert(start, 0);
        queue.push_back(start);
        while let Some(node) = queue.pop_front() {
            let d = dist[&node];
            order.push((node, d));
            for &p in &self.parents[node] {
                if !dist.contains_key(&p) {
                    dist.insert(p, d + 1);
                    queue.push_back(p);
                }
            }
        }
        order
    }

    fn find_cycle(&self) -> Option<usize> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let mut marks = vec![Mark::New; self.ids.len()];
        for root in 0..self.ids.len() {
            if marks[root] != Mark::New {
                continue;
            }
            // iterative DFS: (node, next parent slot)
            let mut stack = vec![(root, 0usize)];
            marks[root] = Mark::Open;
            while let Some(top) = stack.last_mut() {
                let (node, slot) = *top;
                top.1 += 1;
                if let Some(&p) = self.parents[node].get(slot) {
                    match marks[p] {
                        Mark::Open => return Some(p),
                        Mark::New => {
                            marks[p] = Mark::Open;
                            stack.push((p, 0));
                        }
                        Mark::Done => {}
                    }
                } else {
                    marks[node] = Mark::Done;
                    stack.pop();
                }
            }
        }
        None
    }
}

/// Ordered set of category terms. File order breaks ties in [`subsume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySet {
    entries: Vec<(String, String)>,
}

impl CategorySet {
    /// Build from `(term-id, display-label)` pairs, validating against the graph.
    pub fn new(graph: &OntologyGraph, entries: Vec<(String, String)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(OntologyError::EmptyCategories);
        }
        let mut seen = BTreeSet::new();
        for (pos, (id, _)) in entries.iter().enumerate() {
            if !graph.contains(id) {
                return Err(OntologyError::CategoryLine {
                    line: pos + 1,
                    message: format!("term `{id}` is not in the ontology"),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(OntologyError::CategoryLine {
                    line: pos + 1,
                    message: format!("duplicate category `{id}`"),
                });
            }
        }
        let set = CategorySet { entries };
        set.warn_nested(graph);
        Ok(set)
    }

    /// Parse a category file: one term id per line, optionally followed by a
    /// TAB and a display label. Missing labels fall back to the term name.
    pub fn parse(text: &str, graph: &OntologyGraph) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (id, label) = match line.split_once('\t') {
                Some((id, label)) => (id.trim(), Some(label.trim())),
                None => (line.trim(), None),
            };
            let err = |message: String| OntologyError::CategoryLine {
                line: lineno + 1,
                message,
            };
            if !graph.contains(id) {
                return Err(err(format!("term `{id}` is not in the ontology")));
            }
            if !seen.insert(id.to_string()) {
                return Err(err(format!("duplicate category `{id}`")));
            }
            let label = match label {
                Some(l) if !l.is_empty() => l.to_string(),
                _ => graph.name(id).unwrap_or(id).to_string(),
            };
            entries.push((id.to_string(), label));
        }
        if entries.is_empty() {
            return Err(OntologyError::EmptyCategories);
        }
        let set = CategorySet { entries };
        set.warn_nested(graph);
        Ok(set)
    }

    fn warn_nested(&self, graph: &OntologyGraph) {
        for (id, _) in &self.entries {
            let Ok(anc) = graph.ancestors(id) else { continue };
            for (other, _) in &self.entries {
                if anc.contains(other) {
                    log::warn!("category `{other}` is an ancestor of category `{id}`; terms under `{id}` are shadowed from `{other}`");
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(_, l)| l.as_str())
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|(c, _)| c == id)
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

/// Map `term` to its nearest category: the term itself if it is a category,
/// otherwise the category ancestor with the fewest `is_a` hops. Equal hop
/// counts go to the category listed first.
pub fn subsume<'c>(
    graph: &OntologyGraph,
    categories: &'c CategorySet,
    term: &str,
) -> Result<Option<&'c str>> {
    let start = graph.require(term)?;
    let mut best: Option<(usize, usize)> = None; // (distance, category position)
    for (node, dist) in graph.hop_distances(start) {
        if let Some(pos) = categories.position(&graph.ids[node]) {
            let candidate = (dist, pos);
            if best.is_none_or(|b| candidate < b) {
                best = Some(candidate);
            }
        }
    }
    Ok(best.map(|(_, pos)| categories.entries[pos].0.as_str()))
}

/// Result of reducing one observation's terms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reduction {
    /// Category positions (indices into the [`CategorySet`]) hit by at least one term.
    pub categories: BTreeSet<usize>,
    /// Known terms with no category at or above them.
    pub dropped: usize,
    /// Terms absent from the ontology (including obsolete ones).
    pub unknown: Vec<String>,
}

/// Union of [`subsume`] over `terms`. Unknown terms are counted and skipped
/// unless `strict`, in which case the first one is an error.
pub fn reduce_terms<S: AsRef<str>>(
    graph: &OntologyGraph,
    categories: &CategorySet,
    terms: &[S],
    strict: bool,
) -> Result<Reduction> {
    let mut out = Reduction::default();
    for term in terms {
        let term = term.as_ref();
        match subsume(graph, categories, term) {
            Ok(Some(cat)) => {
                out.categories.insert(categories.position(cat).expect("category from set"));
            }
            Ok(None) => out.dropped += 1,
            Err(e @ OntologyError::UnknownTerm(_)) => {
                if strict {
                    return Err(e);
                }
                out.unknown.push(term.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
