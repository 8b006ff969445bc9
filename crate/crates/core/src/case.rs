//! Static grid description and the topology value object.
//!
//! A [`GridCase`] is immutable once validated. Substations coincide with the
//! case buses; each substation owns two busbars and every connected element
//! (line end, generator, load) sits on one of them. The live electrical graph
//! therefore has one node per busbar that carries at least one element.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CaseError;

pub const SCHEMA_VERSION: u32 = 1;

const BUNDLED_IEEE14: &str = include_str!("../data/ieee14_modified.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub r_pu: f64,
    pub x_pu: f64,
    pub b_charging_pu: f64,
    pub thermal_limit_mva: f64,
    /// Fixed off-nominal transformer ratio on the `from` side; 1.0 for plain
    /// lines. Not controllable at run time.
    #[serde(default = "unit_tap", skip_serializing_if = "is_unit_tap")]
    pub tap_ratio: f64,
}

fn unit_tap() -> f64 {
    1.0
}

fn is_unit_tap(t: &f64) -> bool {
    *t == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_set_mw: f64,
    pub v_set_pu: f64,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// On-disk layout of a case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    schema_version: u32,
    base_mva: f64,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
}

/// Validated static grid. Element references (`from_bus`, `gen.bus`, ...)
/// hold bus *ids*; [`GridCase::bus_index`] maps them to positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    index: HashMap<usize, usize>,
    slack: usize,
}

impl GridCase {
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
        loads: Vec<Load>,
    ) -> Result<Self, CaseError> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(CaseError::Invalid("base_mva must be positive".into()));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (pos, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, pos).is_some() {
                return Err(CaseError::Invalid(format!("duplicate bus id {}", bus.id)));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.as_slice() {
            [one] => *one,
            [] => return Err(CaseError::Invalid("no slack bus".into())),
            _ => return Err(CaseError::Invalid("multiple slack buses".into())),
        };
        for (pos, line) in lines.iter().enumerate() {
            if line.id != pos {
                return Err(CaseError::Invalid(format!(
                    "line ids must be contiguous from 0 (found {} at position {pos})",
                    line.id
                )));
            }
            for end in [line.from_bus, line.to_bus] {
                if !index.contains_key(&end) {
                    return Err(CaseError::Invalid(format!(
                        "line {} references nonexistent bus {end}",
                        line.id
                    )));
                }
            }
            if line.from_bus == line.to_bus {
                return Err(CaseError::Invalid(format!("line {} is a self-loop", line.id)));
            }
            if !(line.thermal_limit_mva.is_finite() && line.thermal_limit_mva > 0.0) {
                return Err(CaseError::Invalid(format!(
                    "line {} thermal limit must be positive",
                    line.id
                )));
            }
            if !(line.tap_ratio.is_finite() && line.tap_ratio > 0.0) {
                return Err(CaseError::Invalid(format!(
                    "line {} tap ratio must be positive",
                    line.id
                )));
            }
            if line.x_pu == 0.0 || !line.x_pu.is_finite() || !line.r_pu.is_finite() {
                return Err(CaseError::Invalid(format!(
                    "line {} needs a finite nonzero reactance",
                    line.id
                )));
            }
        }
        for (g, gen) in generators.iter().enumerate() {
            if !index.contains_key(&gen.bus) {
                return Err(CaseError::Invalid(format!(
                    "generator {g} references nonexistent bus {}",
                    gen.bus
                )));
            }
            if gen.q_min_mvar > gen.q_max_mvar {
                return Err(CaseError::Invalid(format!("generator {g} has q_min > q_max")));
            }
        }
        if !generators.iter().any(|g| index[&g.bus] == slack) {
            return Err(CaseError::Invalid("slack bus has no generator".into()));
        }
        for (l, load) in loads.iter().enumerate() {
            if !index.contains_key(&load.bus) {
                return Err(CaseError::Invalid(format!(
                    "load {l} references nonexistent bus {}",
                    load.bus
                )));
            }
        }
        Ok(Self { base_mva, buses, lines, generators, loads, index, slack })
    }

    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        let file: CaseFile = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(CaseError::Version {
                found: file.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Self::new(file.base_mva, file.buses, file.lines, file.generators, file.loads)
    }

    pub fn to_json(&self) -> String {
        let file = CaseFile {
            schema_version: SCHEMA_VERSION,
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            generators: self.generators.clone(),
            loads: self.loads.clone(),
        };
        serde_json::to_string_pretty(&file).expect("case serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CaseError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    /// Position of the bus with the given id.
    pub fn bus_index(&self, id: usize) -> usize {
        self.index[&id]
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn line_ends(&self, line: usize) -> (usize, usize) {
        let l = &self.lines[line];
        (self.index[&l.from_bus], self.index[&l.to_bus])
    }

    pub fn gen_sub(&self, gen: usize) -> usize {
        self.index[&self.generators[gen].bus]
    }

    pub fn load_sub(&self, load: usize) -> usize {
        self.index[&self.loads[load].bus]
    }

    /// Elements hosted by a substation, in a fixed order: line origins,
    /// line extremities, generators, loads.
    pub fn substation_elements(&self, sub: usize) -> Vec<Element> {
        let mut out = Vec::new();
        for l in 0..self.n_lines() {
            if self.line_ends(l).0 == sub {
                out.push(Element::LineFrom(l));
            }
        }
        for l in 0..self.n_lines() {
            if self.line_ends(l).1 == sub {
                out.push(Element::LineTo(l));
            }
        }
        for g in 0..self.generators.len() {
            if self.gen_sub(g) == sub {
                out.push(Element::Gen(g));
            }
        }
        for d in 0..self.loads.len() {
            if self.load_sub(d) == sub {
                out.push(Element::Load(d));
            }
        }
        out
    }
}

/// Modified IEEE 14-bus case shipped with the crate.
pub fn bundled_ieee14() -> GridCase {
    GridCase::from_json(BUNDLED_IEEE14).expect("bundled case is valid")
}

pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase, CaseError> {
    let text = std::fs::read_to_string(path)?;
    GridCase::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Element {
    LineFrom(usize),
    LineTo(usize),
    Gen(usize),
    Load(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Busbar {
    One,
    Two,
}

impl Busbar {
    pub fn index(self) -> usize {
        match self {
            Busbar::One => 0,
            Busbar::Two => 1,
        }
    }
}

/// Switching state of the grid: line statuses, busbar assignments and
/// reconnection lockouts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub line_status: Vec<bool>,
    pub line_from_busbar: Vec<Busbar>,
    pub line_to_busbar: Vec<Busbar>,
    pub gen_busbar: Vec<Busbar>,
    pub load_busbar: Vec<Busbar>,
    /// A line may not be reconnected while `t < lockout_until[line]`.
    pub lockout_until: Vec<usize>,
}

impl Topology {
    /// Every line in service, every element on busbar one, no lockouts.
    pub fn nominal(case: &GridCase) -> Self {
        Self {
            line_status: vec![true; case.n_lines()],
            line_from_busbar: vec![Busbar::One; case.n_lines()],
            line_to_busbar: vec![Busbar::One; case.n_lines()],
            gen_busbar: vec![Busbar::One; case.generators.len()],
            load_busbar: vec![Busbar::One; case.loads.len()],
            lockout_until: vec![0; case.n_lines()],
        }
    }

    pub fn busbar_of(&self, element: Element) -> Busbar {
        match element {
            Element::LineFrom(l) => self.line_from_busbar[l],
            Element::LineTo(l) => self.line_to_busbar[l],
            Element::Gen(g) => self.gen_busbar[g],
            Element::Load(d) => self.load_busbar[d],
        }
    }

    pub fn set_busbar(&mut self, element: Element, busbar: Busbar) {
        match element {
            Element::LineFrom(l) => self.line_from_busbar[l] = busbar,
            Element::LineTo(l) => self.line_to_busbar[l] = busbar,
            Element::Gen(g) => self.gen_busbar[g] = busbar,
            Element::Load(d) => self.load_busbar[d] = busbar,
        }
    }

    pub fn in_service(&self) -> usize {
        self.line_status.iter().filter(|&&s| s).count()
    }

    pub fn is_locked(&self, line: usize, t: usize) -> bool {
        t < self.lockout_until[line]
    }

    /// True when some element of `sub` sits on busbar two.
    pub fn is_split(&self, case: &GridCase, sub: usize) -> bool {
        case.substation_elements(sub)
            .into_iter()
            .any(|e| self.busbar_of(e) == Busbar::Two)
    }
}

/// Electrical node of the live graph: one busbar of one substation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node {
    pub sub: usize,
    pub busbar: Busbar,
}

/// Nodes and in-service edges of the electrical graph under a topology.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveGraph {
    pub nodes: Vec<Node>,
    /// `(line id, from node, to node)` for in-service lines only.
    pub edges: Vec<(usize, usize, usize)>,
    node_of: Vec<[Option<usize>; 2]>,
}

impl LiveGraph {
    pub fn node_index(&self, sub: usize, busbar: Busbar) -> Option<usize> {
        self.node_of[sub][busbar.index()]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Node that hosts `element`. Every element has one, since the busbar it
    /// sits on is a node by construction.
    pub fn node_of(&self, case: &GridCase, topo: &Topology, element: Element) -> usize {
        let sub = match element {
            Element::LineFrom(l) => case.line_ends(l).0,
            Element::LineTo(l) => case.line_ends(l).1,
            Element::Gen(g) => case.gen_sub(g),
            Element::Load(d) => case.load_sub(d),
        };
        self.node_of[sub][topo.busbar_of(element).index()].expect("element busbar is a node")
    }

    /// Connected-component label per node, over in-service edges.
    pub fn components(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for &(_, a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Builds the live electrical graph. A busbar becomes a node when at least
/// one element (in service or not) is assigned to it; nodes are ordered by
/// substation, then busbar.
pub fn live_graph(case: &GridCase, topo: &Topology) -> LiveGraph {
    let mut used = vec![[false; 2]; case.n_buses()];
    for l in 0..case.n_lines() {
        let (f, t) = case.line_ends(l);
        used[f][topo.line_from_busbar[l].index()] = true;
        used[t][topo.line_to_busbar[l].index()] = true;
    }
    for g in 0..case.generators.len() {
        used[case.gen_sub(g)][topo.gen_busbar[g].index()] = true;
    }
    for d in 0..case.loads.len() {
        used[case.load_sub(d)][topo.load_busbar[d].index()] = true;
    }
    let mut nodes = Vec::new();
    let mut node_of = vec![[None; 2]; case.n_buses()];
    for (sub, flags) in used.iter().enumerate() {
        // A bus with no elements at all still gets its first busbar.
        let any = flags[0] || flags[1];
        for (b, busbar) in [Busbar::One, Busbar::Two].into_iter().enumerate() {
            if flags[b] || (!any && b == 0) {
                node_of[sub][b] = Some(nodes.len());
                nodes.push(Node { sub, busbar });
            }
        }
    }
    let edges = (0..case.n_lines())
        .filter(|&l| topo.line_status[l])
        .map(|l| {
            let (f, t) = case.line_ends(l);
            let a = node_of[f][topo.line_from_busbar[l].index()].unwrap();
            let b = node_of[t][topo.line_to_busbar[l].index()].unwrap();
            (l, a, b)
        })
        .collect();
    LiveGraph { nodes, edges, node_of }
}
