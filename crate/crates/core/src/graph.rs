//! Computation graph specifications: the declarative, player-editable artifact.
//!
//! A [`GraphSpec`] is plain data and may be inconsistent. [`validate`] checks
//! it, reporting every detectable problem at once, and produces a
//! [`ValidatedGraph`] that carries a topological node order and a shape
//! table. Everything downstream (engine, metrics, complexity, arena) accepts
//! only validated graphs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::shape::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    MatMul,
    AddBias,
    Relu,
    Softmax,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [
        OpKind::MatMul,
        OpKind::AddBias,
        OpKind::Relu,
        OpKind::Softmax,
    ];

    pub fn arity(self) -> usize {
        match self {
            OpKind::MatMul | OpKind::AddBias => 2,
            OpKind::Relu | OpKind::Softmax => 1,
        }
    }

    /// The identifier used in the textual format.
    pub fn keyword(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::AddBias => "addbias",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        OpKind::ALL.into_iter().find(|op| op.keyword() == word)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    /// Uniform on `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
    Glorot,
}

impl Init {
    pub fn keyword(self) -> &'static str {
        match self {
            Init::Zeros => "zeros",
            Init::Glorot => "glorot",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        match word {
            "zeros" => Some(Init::Zeros),
            "glorot" => Some(Init::Glorot),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
}

impl LossKind {
    pub fn keyword(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InputDecl {
    pub name: String,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeDecl {
    pub name: String,
    pub op: OpKind,
    pub operands: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LossDecl {
    pub kind: LossKind,
    pub prediction: String,
}

/// A declarative dataflow graph. Declaration order carries no meaning.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GraphSpec {
    pub name: String,
    pub inputs: Vec<InputDecl>,
    pub params: Vec<ParamDecl>,
    pub nodes: Vec<NodeDecl>,
    pub output: Option<String>,
    pub loss: Option<LossDecl>,
}

impl GraphSpec {
    /// The same spec with every declaration list sorted by name.
    pub fn canonicalized(&self) -> GraphSpec {
        let mut spec = self.clone();
        spec.inputs.sort();
        spec.params.sort();
        spec.nodes.sort();
        spec
    }

    /// Equality up to reordering of the declaration lists.
    pub fn same_structure(&self, other: &GraphSpec) -> bool {
        self.canonicalized() == other.canonicalized()
    }
}

/// Count of inputs, params and nodes. One declaration is one node.
pub fn node_count(spec: &GraphSpec) -> usize {
    spec.inputs.len() + spec.params.len() + spec.nodes.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCategory {
    Cycle,
    UnresolvedReference,
    DuplicateName,
    ShapeMismatch,
    MissingOutput,
    BadLossTarget,
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorCategory::Cycle => "cycle",
            ErrorCategory::UnresolvedReference => "unresolved-reference",
            ErrorCategory::DuplicateName => "duplicate-name",
            ErrorCategory::ShapeMismatch => "shape-mismatch",
            ErrorCategory::MissingOutput => "missing-output",
            ErrorCategory::BadLossTarget => "bad-loss-target",
        })
    }
}

/// One validation problem. `names` lists the offending declarations or
/// references; the first entry is the declaration the problem is reported on.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{category}: {message}")]
pub struct GraphError {
    pub category: ErrorCategory,
    pub names: Vec<String>,
    pub message: String,
}

impl GraphError {
    fn new(category: ErrorCategory, names: Vec<String>, message: String) -> Self {
        GraphError {
            category,
            names,
            message,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Input(usize),
    Param(usize),
    Node(usize),
}

/// A spec that passed validation, with its resolved structure.
///
/// Entities are numbered inputs first, then params, then nodes, each in
/// declaration order.
#[derive(Debug, Clone)]
pub struct ValidatedGraph {
    spec: GraphSpec,
    entities: Vec<(String, EntityKind)>,
    index: HashMap<String, usize>,
    operands: Vec<Vec<usize>>,
    order: Vec<usize>,
    shapes: Vec<Shape>,
    output: usize,
    loss_node: usize,
}

impl ValidatedGraph {
    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Node indices (into `spec().nodes`) so that operands precede consumers.
    pub fn topo_order(&self) -> &[usize] {
        &self.order
    }

    /// Node names in topological order.
    pub fn topo_names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|&n| self.spec.nodes[n].name.as_str())
    }

    /// Inferred shape of every node.
    pub fn node_shapes(&self) -> BTreeMap<String, Shape> {
        self.spec
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.clone(), self.shapes[self.node_entity(i)].clone()))
            .collect()
    }

    /// Shape of any input, param or node.
    pub fn shape_of(&self, name: &str) -> Option<&Shape> {
        self.index.get(name).map(|&e| &self.shapes[e])
    }

    pub fn node_count(&self) -> usize {
        self.entities.len()
    }

    pub fn output_node(&self) -> &NodeDecl {
        match self.entities[self.output].1 {
            EntityKind::Node(n) => &self.spec.nodes[n],
            _ => unreachable!("validated output is a node"),
        }
    }

    pub fn output_shape(&self) -> &Shape {
        &self.shapes[self.output]
    }

    /// The softmax node the cross-entropy loss is attached to.
    pub fn loss_node(&self) -> &NodeDecl {
        match self.entities[self.loss_node].1 {
            EntityKind::Node(n) => &self.spec.nodes[n],
            _ => unreachable!("validated loss target is a node"),
        }
    }

    pub(crate) fn entities(&self) -> &[(String, EntityKind)] {
        &self.entities
    }

    pub(crate) fn entity_shape(&self, entity: usize) -> &Shape {
        &self.shapes[entity]
    }

    pub(crate) fn node_entity(&self, node: usize) -> usize {
        self.spec.inputs.len() + self.spec.params.len() + node
    }

    pub(crate) fn node_operands(&self, node: usize) -> &[usize] {
        &self.operands[node]
    }

    pub(crate) fn output_entity(&self) -> usize {
        self.output
    }

    pub(crate) fn loss_entity(&self) -> usize {
        self.loss_node
    }

    /// Dataflow edges `operand -> consumer` between entity ids, one per operand slot.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (n, ops) in self.operands.iter().enumerate() {
            let consumer = self.node_entity(n);
            edges.extend(ops.iter().map(|&o| (o, consumer)));
        }
        edges
    }

    pub fn entity_names(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(|(n, _)| n.as_str())
    }
}

/// Deterministic byte form of a validated graph: its canonical `.graph` text.
/// Specs equal up to declaration order produce identical bytes.
pub fn canonical_serialize(graph: &ValidatedGraph) -> Vec<u8> {
    crate::dsl::write_canonical(graph.spec()).into_bytes()
}

/// Check a spec, collecting every detectable error.
pub fn validate(spec: &GraphSpec) -> Result<ValidatedGraph, Vec<GraphError>> {
    let analysis = analyze(spec);
    if !analysis.errors.is_empty() {
        return Err(analysis.errors);
    }
    let shapes = analysis
        .shapes
        .into_iter()
        .map(|s| s.expect("shape known when no errors"))
        .collect();
    let output = analysis.index[spec.output.as_deref().expect("checked")];
    let loss_node = analysis.index[spec.loss.as_ref().expect("checked").prediction.as_str()];
    Ok(ValidatedGraph {
        spec: spec.clone(),
        entities: analysis.entities,
        index: analysis.index,
        operands: analysis
            .operands
            .into_iter()
            .map(|ops| ops.into_iter().map(|o| o.expect("resolved")).collect())
            .collect(),
        order: analysis.order,
        shapes,
        output,
        loss_node,
    })
}

/// Shapes of every node. Requires resolvable references and no cycle;
/// reports structural errors as well as shape mismatches otherwise.
pub fn infer_shapes(spec: &GraphSpec) -> Result<BTreeMap<String, Shape>, Vec<GraphError>> {
    let analysis = analyze(spec);
    let structural: Vec<GraphError> = analysis
        .errors
        .iter()
        .filter(|e| {
            matches!(
                e.category,
                ErrorCategory::Cycle
                    | ErrorCategory::UnresolvedReference
                    | ErrorCategory::DuplicateName
                    | ErrorCategory::ShapeMismatch
            )
        })
        .cloned()
        .collect();
    if !structural.is_empty() {
        return Err(structural);
    }
    let offset = spec.inputs.len() + spec.params.len();
    Ok(spec
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let shape = analysis.shapes[offset + i].clone().expect("inferred");
            (n.name.clone(), shape)
        })
        .collect())
}

struct Analysis {
    errors: Vec<GraphError>,
    entities: Vec<(String, EntityKind)>,
    index: HashMap<String, usize>,
    operands: Vec<Vec<Option<usize>>>,
    order: Vec<usize>,
    shapes: Vec<Option<Shape>>,
}

fn analyze(spec: &GraphSpec) -> Analysis {
    let mut errors = Vec::new();

    let mut entities = Vec::new();
    entities.extend(
        spec.inputs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.name.clone(), EntityKind::Input(i))),
    );
    entities.extend(
        spec.params
            .iter()
            .enumerate()
            .map(|(i, d)| (d.name.clone(), EntityKind::Param(i))),
    );
    entities.extend(
        spec.nodes
            .iter()
            .enumerate()
            .map(|(i, d)| (d.name.clone(), EntityKind::Node(i))),
    );
    let node_offset = spec.inputs.len() + spec.params.len();

    // First declaration of a name wins the lookup; later ones are reported.
    let mut index = HashMap::new();
    let mut reported = BTreeSet::new();
    for (id, (name, _)) in entities.iter().enumerate() {
        if index.contains_key(name) {
            if reported.insert(name.clone()) {
                errors.push(GraphError::new(
                    ErrorCategory::DuplicateName,
                    vec![name.clone()],
                    format!("`{name}` is declared more than once"),
                ));
            }
        } else {
            index.insert(name.clone(), id);
        }
    }

    let mut operands = Vec::with_capacity(spec.nodes.len());
    for node in &spec.nodes {
        if node.operands.len() != node.op.arity() {
            errors.push(GraphError::new(
                ErrorCategory::ShapeMismatch,
                vec![node.name.clone()],
                format!(
                    "`{}` expects {} operand(s) but node `{}` has {}",
                    node.op,
                    node.op.arity(),
                    node.name,
                    node.operands.len()
                ),
            ));
        }
        let resolved: Vec<Option<usize>> = node
            .operands
            .iter()
            .map(|op| {
                let found = index.get(op).copied();
                if found.is_none() {
                    errors.push(GraphError::new(
                        ErrorCategory::UnresolvedReference,
                        vec![op.clone(), node.name.clone()],
                        format!("node `{}` references undeclared `{op}`", node.name),
                    ));
                }
                found
            })
            .collect();
        operands.push(resolved);
    }

    let (order, cyclic) = topo_sort(spec, &operands, node_offset);
    for group in cycle_groups(&cyclic, &operands, node_offset) {
        let names: Vec<String> = group.iter().map(|&n| spec.nodes[n].name.clone()).collect();
        errors.push(GraphError::new(
            ErrorCategory::Cycle,
            names.clone(),
            format!("nodes form a cycle: {{{}}}", names.join(", ")),
        ));
    }

    let mut shapes: Vec<Option<Shape>> = vec![None; entities.len()];
    for (i, d) in spec.inputs.iter().enumerate() {
        shapes[i] = Some(d.shape.clone());
    }
    for (i, d) in spec.params.iter().enumerate() {
        if d.shape.has_batch() {
            errors.push(GraphError::new(
                ErrorCategory::ShapeMismatch,
                vec![d.name.clone()],
                format!(
                    "param `{}` must have a concrete shape, got {}",
                    d.name, d.shape
                ),
            ));
        } else {
            shapes[spec.inputs.len() + i] = Some(d.shape.clone());
        }
    }
    for &n in &order {
        let node = &spec.nodes[n];
        if node.operands.len() != node.op.arity() {
            continue;
        }
        let operand_shapes: Option<Vec<&Shape>> = operands[n]
            .iter()
            .map(|o| o.and_then(|id| shapes[id].as_ref()))
            .collect();
        let Some(operand_shapes) = operand_shapes else {
            continue;
        };
        match infer_node(node, &operand_shapes) {
            Ok(shape) => shapes[node_offset + n] = Some(shape),
            Err(e) => errors.push(e),
        }
    }

    match spec.output.as_deref() {
        None => errors.push(GraphError::new(
            ErrorCategory::MissingOutput,
            vec![],
            "graph declares no output".into(),
        )),
        Some(out) => match index.get(out).map(|&id| entities[id].1) {
            Some(EntityKind::Node(_)) => {}
            Some(_) => errors.push(GraphError::new(
                ErrorCategory::MissingOutput,
                vec![out.to_string()],
                format!("output `{out}` must name a node, not an input or param"),
            )),
            None => errors.push(GraphError::new(
                ErrorCategory::MissingOutput,
                vec![out.to_string()],
                format!("unresolved output `{out}`"),
            )),
        },
    }

    match &spec.loss {
        None => errors.push(GraphError::new(
            ErrorCategory::BadLossTarget,
            vec![],
            "graph declares no loss".into(),
        )),
        Some(loss) => {
            let target = &loss.prediction;
            match index.get(target).map(|&id| entities[id].1) {
                Some(EntityKind::Node(n)) if spec.nodes[n].op == OpKind::Softmax => {}
                Some(EntityKind::Node(n)) => errors.push(GraphError::new(
                    ErrorCategory::BadLossTarget,
                    vec![target.clone()],
                    format!(
                        "loss target `{target}` must be a softmax node, found `{}`",
                        spec.nodes[n].op
                    ),
                )),
                Some(_) => errors.push(GraphError::new(
                    ErrorCategory::BadLossTarget,
                    vec![target.clone()],
                    format!("loss target `{target}` must be a softmax node"),
                )),
                None => errors.push(GraphError::new(
                    ErrorCategory::BadLossTarget,
                    vec![target.clone()],
                    format!("unresolved loss target `{target}`"),
                )),
            }
        }
    }

    Analysis {
        errors,
        entities,
        index,
        operands,
        order,
        shapes,
    }
}

/// Kahn's algorithm over node-to-node dependencies. Returns the ordered
/// nodes and the nodes left over (on or downstream of a cycle).
fn topo_sort(
    spec: &GraphSpec,
    operands: &[Vec<Option<usize>>],
    node_offset: usize,
) -> (Vec<usize>, Vec<usize>) {
    let n = spec.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (consumer, ops) in operands.iter().enumerate() {
        for dep in ops.iter().flatten() {
            if *dep >= node_offset {
                indegree[consumer] += 1;
                consumers[dep - node_offset].push(consumer);
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).rev().filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(node) = ready.pop() {
        order.push(node);
        for &c in &consumers[node] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    let leftover = (0..n).filter(|&i| indegree[i] > 0).collect();
    (order, leftover)
}

/// Strongly connected groups among the leftover nodes that actually cycle.
fn cycle_groups(
    leftover: &[usize],
    operands: &[Vec<Option<usize>>],
    node_offset: usize,
) -> Vec<Vec<usize>> {
    let members: BTreeSet<usize> = leftover.iter().copied().collect();
    // depends_on reachability restricted to leftover nodes.
    let reach = |start: usize| -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for dep in operands[v].iter().flatten() {
                if *dep < node_offset {
                    continue;
                }
                let d = dep - node_offset;
                if members.contains(&d) && seen.insert(d) {
                    stack.push(d);
                }
            }
        }
        seen
    };
    let reaches: BTreeMap<usize, BTreeSet<usize>> =
        leftover.iter().map(|&v| (v, reach(v))).collect();
    let mut assigned = BTreeSet::new();
    let mut groups = Vec::new();
    for &v in leftover {
        if assigned.contains(&v) || !reaches[&v].contains(&v) {
            continue;
        }
        let group: Vec<usize> = reaches[&v]
            .iter()
            .copied()
            .filter(|u| reaches[u].contains(&v))
            .collect();
        assigned.extend(group.iter().copied());
        groups.push(group);
    }
    groups
}

fn infer_node(node: &NodeDecl, operands: &[&Shape]) -> Result<Shape, GraphError> {
    let mismatch = |detail: String| {
        let mut names = vec![node.name.clone()];
        names.extend(node.operands.iter().cloned());
        GraphError::new(ErrorCategory::ShapeMismatch, names, detail)
    };
    match node.op {
        OpKind::MatMul => {
            let (a, b) = (operands[0], operands[1]);
            if a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0] || b.has_batch() {
                return Err(mismatch(format!(
                    "matmul `{}`: cannot multiply `{}` {a} by `{}` {b}",
                    node.name, node.operands[0], node.operands[1]
                )));
            }
            Ok(Shape::new(vec![a.dims()[0], b.dims()[1]]).expect("valid dims"))
        }
        OpKind::AddBias => {
            let (a, b) = (operands[0], operands[1]);
            if a.rank() != 2 || b.rank() != 1 || b.dims()[0] != a.dims()[1] {
                return Err(mismatch(format!(
                    "addbias `{}`: bias `{}` {b} does not match rows of `{}` {a}",
                    node.name, node.operands[1], node.operands[0]
                )));
            }
            Ok(a.clone())
        }
        OpKind::Relu => Ok(operands[0].clone()),
        OpKind::Softmax => {
            let a = operands[0];
            if a.rank() != 2 {
                return Err(mismatch(format!(
                    "softmax `{}`: operand `{}` {a} must be a matrix",
                    node.name, node.operands[0]
                )));
            }
            Ok(a.clone())
        }
    }
}
