//! Scene objects, the occlusion graph and its front-to-back ordering.
//!
//! Edges are `(occluder, occluded)`: they point from the object nearer the
//! camera to the object it hides. Objects that no edge orders relative to
//! each other keep their input order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized image coordinates, `x` to the right and
/// `y` downwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const FULL: BBox = BBox {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_array([x0, y0, x1, y1]: [f64; 4]) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// `0 <= x0 < x1 <= 1` and `0 <= y0 < y1 <= 1`. NaN coordinates fail.
    pub fn is_valid(&self) -> bool {
        0.0 <= self.x0 && self.x0 < self.x1 && self.x1 <= 1.0 && 0.0 <= self.y0 && self.y0 < self.y1 && self.y1 <= 1.0
    }

    /// Half-open containment test `[x0, x1) x [y0, y1)`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x < self.x1 && self.y0 <= y && y < self.y1
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    /// May be empty for a blank background prompt.
    pub prompt_tokens: Vec<String>,
    pub subject_index: Option<usize>,
    pub bbox: BBox,
    /// Semantic opacity in `[0, 1)`.
    pub opacity: f64,
    /// Compositor color in `[0, 1]^3`.
    pub color: Option<[f64; 3]>,
    pub embedding_seed: u64,
}

impl SceneObject {
    /// Object with the given box and opacity and no prompt, color or seed.
    pub fn new(id: impl Into<String>, bbox: BBox, opacity: f64) -> Self {
        Self {
            id: id.into(),
            prompt_tokens: Vec::new(),
            subject_index: None,
            bbox,
            opacity,
            color: None,
            embedding_seed: 0,
        }
    }

    pub fn with_prompt<S: Into<String>>(mut self, tokens: impl IntoIterator<Item = S>) -> Self {
        self.prompt_tokens = tokens.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_color(mut self, color: [f64; 3]) -> Self {
        self.color = Some(color);
        self
    }

    pub fn with_subject_index(mut self, index: usize) -> Self {
        self.subject_index = Some(index);
        self
    }

    pub fn with_embedding_seed(mut self, seed: u64) -> Self {
        self.embedding_seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OcclusionGraph {
    pub objects: Vec<SceneObject>,
    /// `(occluder_id, occluded_id)` pairs.
    pub edges: Vec<(String, String)>,
}

impl OcclusionGraph {
    pub fn new(objects: Vec<SceneObject>) -> Self {
        Self {
            objects,
            edges: Vec::new(),
        }
    }

    /// Adds the edge "`front` occludes `back`".
    pub fn occludes(mut self, front: impl Into<String>, back: impl Into<String>) -> Self {
        self.edges.push((front.into(), back.into()));
        self
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Copy of the graph with object `id` and every edge touching it removed.
    pub fn without_object(&self, id: &str) -> Self {
        Self {
            objects: self.objects.iter().filter(|o| o.id != id).cloned().collect(),
            edges: self
                .edges
                .iter()
                .filter(|(a, b)| a != id && b != id)
                .cloned()
                .collect(),
        }
    }
}

/// One problem found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { object: usize, id: String },
    InvalidBox { object: usize, id: String, bbox: [f64; 4] },
    OpacityOutOfRange { object: usize, id: String, opacity: f64 },
    ColorOutOfRange { object: usize, id: String, color: [f64; 3] },
    SubjectIndexOutOfRange { object: usize, id: String, index: usize, tokens: usize },
    DanglingEdge { edge: usize, id: String },
    SelfEdge { edge: usize, id: String },
    Cycle { members: Vec<String> },
}

impl Violation {
    /// Location of the offending field, in scene-file terms.
    pub fn path(&self) -> String {
        match self {
            Violation::DuplicateId { object, .. } => format!("objects[{object}].id"),
            Violation::InvalidBox { object, .. } => format!("objects[{object}].bbox"),
            Violation::OpacityOutOfRange { object, .. } => format!("objects[{object}].opacity"),
            Violation::ColorOutOfRange { object, .. } => format!("objects[{object}].color"),
            Violation::SubjectIndexOutOfRange { object, .. } => format!("objects[{object}].subject_index"),
            Violation::DanglingEdge { edge, .. } | Violation::SelfEdge { edge, .. } => {
                format!("occlusions[{edge}]")
            }
            Violation::Cycle { .. } => "occlusions".to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id, .. } => write!(f, "duplicate object id {id:?}"),
            Violation::InvalidBox { id, bbox, .. } => write!(
                f,
                "object {id:?} has bbox {bbox:?}; need 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1"
            ),
            Violation::OpacityOutOfRange { id, opacity, .. } => {
                write!(f, "object {id:?} has opacity {opacity}; opacity must lie in [0, 1)")
            }
            Violation::ColorOutOfRange { id, color, .. } => {
                write!(f, "object {id:?} has color {color:?}; channels must lie in [0, 1]")
            }
            Violation::SubjectIndexOutOfRange { id, index, tokens, .. } => write!(
                f,
                "object {id:?} has subject_index {index} but only {tokens} prompt tokens"
            ),
            Violation::DanglingEdge { id, .. } => write!(f, "occlusion edge names unknown object id {id:?}"),
            Violation::SelfEdge { id, .. } => write!(f, "object {id:?} cannot occlude itself"),
            Violation::Cycle { members } => write!(f, "occlusion cycle through {members:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn cycles(&self) -> impl Iterator<Item = &[String]> {
        self.violations.iter().filter_map(|v| match v {
            Violation::Cycle { members } => Some(members.as_slice()),
            _ => None,
        })
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(
                self.violations.iter().map(|v| format!("{}: {v}", v.path())).collect(),
            ))
        }
    }
}

/// Checks every graph invariant and reports all violations at once.
pub fn validate_graph(graph: &OcclusionGraph) -> ValidationReport {
    let mut violations = Vec::new();
    let mut first_seen: HashMap<&str, usize> = HashMap::new();

    for (i, obj) in graph.objects.iter().enumerate() {
        if first_seen.insert(obj.id.as_str(), i).is_some() {
            violations.push(Violation::DuplicateId {
                object: i,
                id: obj.id.clone(),
            });
        }
        if !obj.bbox.is_valid() {
            violations.push(Violation::InvalidBox {
                object: i,
                id: obj.id.clone(),
                bbox: obj.bbox.to_array(),
            });
        }
        if !(0.0..1.0).contains(&obj.opacity) {
            violations.push(Violation::OpacityOutOfRange {
                object: i,
                id: obj.id.clone(),
                opacity: obj.opacity,
            });
        }
        if let Some(color) = obj.color {
            if !color.iter().all(|c| (0.0..=1.0).contains(c)) {
                violations.push(Violation::ColorOutOfRange {
                    object: i,
                    id: obj.id.clone(),
                    color,
                });
            }
        }
        if let Some(index) = obj.subject_index {
            if index >= obj.prompt_tokens.len() {
                violations.push(Violation::SubjectIndexOutOfRange {
                    object: i,
                    id: obj.id.clone(),
                    index,
                    tokens: obj.prompt_tokens.len(),
                });
            }
        }
    }

    // Cycle search runs over the well-formed edges only.
    let mut dag = DiGraph::<usize, ()>::with_capacity(graph.objects.len(), graph.edges.len());
    let nodes: Vec<_> = (0..graph.objects.len()).map(|i| dag.add_node(i)).collect();
    for (e, (a, b)) in graph.edges.iter().enumerate() {
        let ia = first_seen.get(a.as_str()).copied();
        let ib = first_seen.get(b.as_str()).copied();
        for (id, idx) in [(a, ia), (b, ib)] {
            if idx.is_none() {
                violations.push(Violation::DanglingEdge { edge: e, id: id.clone() });
            }
        }
        if a == b {
            violations.push(Violation::SelfEdge { edge: e, id: a.clone() });
            continue;
        }
        if let (Some(ia), Some(ib)) = (ia, ib) {
            dag.add_edge(nodes[ia], nodes[ib], ());
        }
    }

    let mut cycles: Vec<Vec<usize>> = tarjan_scc(&dag)
        .into_iter()
        .filter(|scc| scc.len() > 1)
        .map(|scc| {
            let mut members: Vec<usize> = scc.into_iter().map(|n| dag[n]).collect();
            members.sort_unstable();
            members
        })
        .collect();
    cycles.sort();
    violations.extend(cycles.into_iter().map(|members| Violation::Cycle {
        members: members.into_iter().map(|i| graph.objects[i].id.clone()).collect(),
    }));

    ValidationReport { violations }
}

/// Object ids sorted nearest-to-camera first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrontToBackOrder(Vec<String>);

impl FrontToBackOrder {
    pub fn ids(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Zero-based position of `id`, 0 being the front.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.0.iter().position(|x| x == id)
    }

    /// Indices into `graph.objects` in front-to-back order.
    pub fn object_indices(&self, graph: &OcclusionGraph) -> Vec<usize> {
        self.0
            .iter()
            .map(|id| graph.index_of(id).expect("order built from this graph"))
            .collect()
    }

    pub fn into_ids(self) -> Vec<String> {
        self.0
    }
}

/// Kahn's algorithm, always releasing the ready object with the smallest
/// input index.
pub fn topological_order(graph: &OcclusionGraph) -> Result<FrontToBackOrder> {
    let n = graph.objects.len();
    let index: HashMap<&str, usize> = graph
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.id.as_str(), i))
        .collect();

    let mut successors = vec![Vec::new(); n];
    let mut in_degree = vec![0usize; n];
    for (a, b) in &graph.edges {
        let ia = *index.get(a.as_str()).ok_or_else(|| Error::UnknownObject(a.clone()))?;
        let ib = *index.get(b.as_str()).ok_or_else(|| Error::UnknownObject(b.clone()))?;
        successors[ia].push(ib);
        in_degree[ib] += 1;
    }

    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| in_degree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &j in &successors[i] {
            in_degree[j] -= 1;
            if in_degree[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }

    if order.len() < n {
        let stuck = (0..n)
            .filter(|&i| in_degree[i] > 0)
            .map(|i| graph.objects[i].id.clone())
            .collect();
        return Err(Error::Cycle(stuck));
    }
    Ok(FrontToBackOrder(
        order.into_iter().map(|i| graph.objects[i].id.clone()).collect(),
    ))
}
