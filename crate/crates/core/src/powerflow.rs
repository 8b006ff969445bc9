//! AC power flow: π-model admittance assembly and polar Newton–Raphson.
//!
//! Only the island that contains the slack generator is solved. Nodes outside
//! it are de-energized: their loads and generators are shed and reported in
//! the solution. If the slack island serves no load at all the grid is
//! considered lost ([`PowerFlowError::IslandedSlack`]).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::case::{live_graph, BusKind, Element, GridCase, LiveGraph, Node, Topology};
use crate::error::PowerFlowError;

pub const TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 20;

/// Voltages below this after convergence are treated as collapse.
const MIN_PHYSICAL_VOLTAGE: f64 = 0.5;

/// Active/reactive setpoints per element, in MW / MVAr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    pub load_p_mw: Vec<f64>,
    pub load_q_mvar: Vec<f64>,
    pub gen_p_mw: Vec<f64>,
}

impl Injections {
    pub fn nominal(case: &GridCase) -> Self {
        Self {
            load_p_mw: case.loads.iter().map(|l| l.p_mw).collect(),
            load_q_mvar: case.loads.iter().map(|l| l.q_mvar).collect(),
            gen_p_mw: case.generators.iter().map(|g| g.p_set_mw).collect(),
        }
    }

    /// Nominal setpoints with per-load and per-generator multipliers.
    pub fn scaled(case: &GridCase, load_mult: &[f64], gen_mult: &[f64]) -> Self {
        let mut inj = Self::nominal(case);
        for (i, m) in load_mult.iter().enumerate() {
            inj.load_p_mw[i] *= m;
            inj.load_q_mvar[i] *= m;
        }
        for (g, m) in gen_mult.iter().enumerate() {
            inj.gen_p_mw[g] *= m;
        }
        inj
    }
}

/// Sparse complex nodal admittance matrix over live nodes. Diagonal entries
/// are always stored; off-diagonal entries exist only between nodes joined by
/// an in-service line.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    entries: BTreeMap<(usize, usize), Complex64>,
}

impl AdmittanceMatrix {
    fn empty(n: usize) -> Self {
        let entries = (0..n).map(|i| ((i, i), Complex64::new(0.0, 0.0))).collect();
        Self { n, entries }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries.get(&(i, j)).copied().unwrap_or_default()
    }

    /// Number of stored entries (the sparsity pattern size).
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.entries.iter().map(|(&(i, j), &y)| (i, j, y))
    }

    fn add(&mut self, i: usize, j: usize, y: Complex64) {
        *self.entries.entry((i, j)).or_default() += y;
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut out = vec![vec![Complex64::new(0.0, 0.0); self.n]; self.n];
        for (&(i, j), &y) in &self.entries {
            out[i][j] = y;
        }
        out
    }
}

/// Two-port admittances `(y_ff, y_ft, y_tf, y_tt)` of a line, with the
/// fixed tap on the `from` side.
fn branch_admittance(case: &GridCase, line: usize) -> [Complex64; 4] {
    let l = &case.lines[line];
    let ys = Complex64::new(l.r_pu, l.x_pu).inv();
    let half_b = Complex64::new(0.0, l.b_charging_pu / 2.0);
    let a = l.tap_ratio;
    [(ys + half_b) / (a * a), -ys / a, -ys / a, ys + half_b]
}

fn assemble(case: &GridCase, graph: &LiveGraph) -> AdmittanceMatrix {
    let mut y = AdmittanceMatrix::empty(graph.n_nodes());
    for &(line, a, b) in &graph.edges {
        let [ff, ft, tf, tt] = branch_admittance(case, line);
        y.add(a, a, ff);
        y.add(b, b, tt);
        y.add(a, b, ft);
        y.add(b, a, tf);
    }
    y
}

/// Standard π-model assembly over the live graph of `topo`.
pub fn build_ybus(case: &GridCase, topo: &Topology) -> AdmittanceMatrix {
    assemble(case, &live_graph(case, topo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Slack,
    Pv,
    Pq,
    /// Outside the slack island.
    Shed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub nodes: Vec<Node>,
    pub node_kind: Vec<NodeKind>,
    /// PV nodes that hit a reactive limit and were solved as PQ.
    pub q_limited: Vec<bool>,
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    /// Net injections per node in MW / MVAr (generation minus load).
    pub p_inj_mw: Vec<f64>,
    pub q_inj_mvar: Vec<f64>,
    pub line_flow_from: Vec<Complex64>,
    pub line_flow_to: Vec<Complex64>,
    pub rho: Vec<f64>,
    pub gen_p_mw: Vec<f64>,
    pub gen_q_mvar: Vec<f64>,
    pub shed_loads: Vec<usize>,
    pub shed_gens: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

impl PowerFlowSolution {
    pub fn max_rho(&self) -> f64 {
        self.rho.iter().copied().fold(0.0, f64::max)
    }

    pub fn shed_load_mw(&self, inj: &Injections) -> f64 {
        self.shed_loads.iter().map(|&d| inj.load_p_mw[d]).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Start<'a> {
    Flat,
    Warm(&'a PowerFlowSolution),
}

/// Per-line loading: the larger end apparent power over the thermal limit;
/// zero for lines out of service.
pub fn line_loading(sol: &PowerFlowSolution, case: &GridCase) -> Vec<f64> {
    (0..case.n_lines())
        .map(|l| {
            let s = sol.line_flow_from[l].norm().max(sol.line_flow_to[l].norm());
            s / case.lines[l].thermal_limit_mva
        })
        .collect()
}

struct NodeData {
    p: Vec<f64>,
    q: Vec<f64>,
    kind: Vec<NodeKind>,
    v_set: Vec<f64>,
    q_min: Vec<f64>,
    q_max: Vec<f64>,
    /// Load share of each node in pu, needed to recover generator Q.
    q_load: Vec<f64>,
}

/// Solver switches beyond the case data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    /// Convert PV nodes to PQ when their generator exceeds its reactive
    /// limits. When off, PV nodes hold their setpoint unconditionally.
    pub enforce_q_limits: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { enforce_q_limits: true }
    }
}

/// Solves with reactive limits enforced.
pub fn solve(
    case: &GridCase,
    topo: &Topology,
    inj: &Injections,
    start: Start<'_>,
) -> Result<PowerFlowSolution, PowerFlowError> {
    solve_with(case, topo, inj, start, SolveOptions::default())
}

pub fn solve_with(
    case: &GridCase,
    topo: &Topology,
    inj: &Injections,
    start: Start<'_>,
    opts: SolveOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let graph = live_graph(case, topo);
    let n = graph.n_nodes();
    let base = case.base_mva;
    let slack_gen = (0..case.generators.len())
        .find(|&g| case.gen_sub(g) == case.slack_index())
        .expect("validated case has a slack generator");
    let slack = graph.node_of(case, topo, Element::Gen(slack_gen));
    let comp = graph.components();
    let energized: Vec<bool> = (0..n).map(|i| comp[i] == comp[slack]).collect();

    let mut data = NodeData {
        p: vec![0.0; n],
        q: vec![0.0; n],
        kind: vec![NodeKind::Pq; n],
        v_set: vec![1.0; n],
        q_min: vec![0.0; n],
        q_max: vec![0.0; n],
        q_load: vec![0.0; n],
    };
    let mut shed_loads = Vec::new();
    let mut shed_gens = Vec::new();
    let mut served_loads = 0usize;
    for d in 0..case.loads.len() {
        let i = graph.node_of(case, topo, Element::Load(d));
        if !energized[i] {
            shed_loads.push(d);
            continue;
        }
        served_loads += 1;
        data.p[i] -= inj.load_p_mw[d] / base;
        data.q[i] -= inj.load_q_mvar[d] / base;
        data.q_load[i] += inj.load_q_mvar[d] / base;
    }
    if served_loads == 0 {
        return Err(PowerFlowError::IslandedSlack);
    }
    let mut regulating = vec![false; n];
    for g in 0..case.generators.len() {
        let i = graph.node_of(case, topo, Element::Gen(g));
        if !energized[i] {
            shed_gens.push(g);
            continue;
        }
        let gen = &case.generators[g];
        data.p[i] += inj.gen_p_mw[g] / base;
        let kind = case.buses[case.gen_sub(g)].kind;
        if kind != BusKind::Pq {
            if !regulating[i] {
                data.v_set[i] = gen.v_set_pu;
            }
            regulating[i] = true;
            data.q_min[i] += gen.q_min_mvar / base;
            data.q_max[i] += gen.q_max_mvar / base;
        }
    }
    for i in 0..n {
        data.kind[i] = if !energized[i] {
            NodeKind::Shed
        } else if i == slack {
            NodeKind::Slack
        } else if regulating[i] {
            NodeKind::Pv
        } else {
            NodeKind::Pq
        };
    }

    let ybus = assemble(case, &graph);
    let g_mat = DMatrix::from_fn(n, n, |i, j| ybus.get(i, j).re);
    let b_mat = DMatrix::from_fn(n, n, |i, j| ybus.get(i, j).im);

    let mut v_mag: Vec<f64> = (0..n)
        .map(|i| match data.kind[i] {
            NodeKind::Slack | NodeKind::Pv => data.v_set[i],
            NodeKind::Pq => 1.0,
            NodeKind::Shed => 0.0,
        })
        .collect();
    let mut v_ang = vec![0.0; n];
    let mut q_limited = vec![false; n];
    if let Start::Warm(prev) = start {
        if prev.nodes == graph.nodes && prev.converged {
            for i in 0..n {
                if data.kind[i] == NodeKind::Shed || prev.node_kind[i] == NodeKind::Shed {
                    continue;
                }
                v_ang[i] = prev.v_ang[i];
                if data.kind[i] == NodeKind::Pq
                    || (data.kind[i] == NodeKind::Pv && prev.q_limited[i])
                {
                    v_mag[i] = prev.v_mag[i];
                }
                if data.kind[i] == NodeKind::Pv && prev.q_limited[i] {
                    let q_gen = prev.q_inj_mvar[i] / base + data.q_load[i];
                    data.kind[i] = NodeKind::Pq;
                    data.q[i] = q_gen - data.q_load[i];
                    q_limited[i] = true;
                }
            }
        }
    }

    let mut iterations = 0;
    loop {
        iterations += newton(&g_mat, &b_mat, &data, &mut v_mag, &mut v_ang)?;
        if !opts.enforce_q_limits {
            break;
        }
        // Enforce generator reactive limits: each PV node may switch once.
        let mut switched = false;
        for i in 0..n {
            if data.kind[i] != NodeKind::Pv {
                continue;
            }
            let (_, qi) = injection(&g_mat, &b_mat, &v_mag, &v_ang, &data.kind, i);
            let q_gen = qi + data.q_load[i];
            let limit = if q_gen > data.q_max[i] + 1e-9 {
                Some(data.q_max[i])
            } else if q_gen < data.q_min[i] - 1e-9 {
                Some(data.q_min[i])
            } else {
                None
            };
            if let Some(q_lim) = limit {
                data.kind[i] = NodeKind::Pq;
                data.q[i] = q_lim - data.q_load[i];
                q_limited[i] = true;
                switched = true;
            }
        }
        if !switched {
            break;
        }
    }
    if v_mag
        .iter()
        .zip(&data.kind)
        .any(|(&v, &k)| k != NodeKind::Shed && v < MIN_PHYSICAL_VOLTAGE)
    {
        return Err(PowerFlowError::Diverged { iterations });
    }

    let kind_out: Vec<NodeKind> = (0..n)
        .map(|i| if q_limited[i] { NodeKind::Pv } else { data.kind[i] })
        .collect();
    let mut p_inj_mw = vec![0.0; n];
    let mut q_inj_mvar = vec![0.0; n];
    for i in 0..n {
        if data.kind[i] == NodeKind::Shed {
            continue;
        }
        let (pi, qi) = injection(&g_mat, &b_mat, &v_mag, &v_ang, &data.kind, i);
        p_inj_mw[i] = pi * base;
        q_inj_mvar[i] = qi * base;
    }

    let voltage = |i: usize| Complex64::from_polar(v_mag[i], v_ang[i]);
    let mut line_flow_from = vec![Complex64::new(0.0, 0.0); case.n_lines()];
    let mut line_flow_to = vec![Complex64::new(0.0, 0.0); case.n_lines()];
    for &(line, a, b) in &graph.edges {
        if !energized[a] {
            continue;
        }
        let [ff, ft, tf, tt] = branch_admittance(case, line);
        let (va, vb) = (voltage(a), voltage(b));
        let i_from = ff * va + ft * vb;
        let i_to = tf * va + tt * vb;
        line_flow_from[line] = va * i_from.conj() * base;
        line_flow_to[line] = vb * i_to.conj() * base;
    }

    // Generator dispatch: the slack absorbs the imbalance, regulating nodes
    // split reactive output evenly.
    let mut gen_p_mw = vec![0.0; case.generators.len()];
    let mut gen_q_mvar = vec![0.0; case.generators.len()];
    let mut node_load_p = vec![0.0; n];
    for d in 0..case.loads.len() {
        let i = graph.node_of(case, topo, Element::Load(d));
        if energized[i] {
            node_load_p[i] += inj.load_p_mw[d];
        }
    }
    let mut gens_at = vec![Vec::new(); n];
    for g in 0..case.generators.len() {
        let i = graph.node_of(case, topo, Element::Gen(g));
        if energized[i] {
            gens_at[i].push(g);
        }
    }
    for i in 0..n {
        if gens_at[i].is_empty() {
            continue;
        }
        let q_gen = q_inj_mvar[i] + data.q_load[i] * base;
        let share = q_gen / gens_at[i].len() as f64;
        if i == slack {
            let p_total = p_inj_mw[i] + node_load_p[i];
            let others: f64 = gens_at[i]
                .iter()
                .filter(|&&g| g != slack_gen)
                .map(|&g| inj.gen_p_mw[g])
                .sum();
            for &g in &gens_at[i] {
                gen_p_mw[g] = if g == slack_gen { p_total - others } else { inj.gen_p_mw[g] };
            }
        } else {
            for &g in &gens_at[i] {
                gen_p_mw[g] = inj.gen_p_mw[g];
            }
        }
        for &g in &gens_at[i] {
            gen_q_mvar[g] = share;
        }
    }

    let mut sol = PowerFlowSolution {
        nodes: graph.nodes.clone(),
        node_kind: kind_out,
        q_limited,
        v_mag,
        v_ang,
        p_inj_mw,
        q_inj_mvar,
        line_flow_from,
        line_flow_to,
        rho: Vec::new(),
        gen_p_mw,
        gen_q_mvar,
        shed_loads,
        shed_gens,
        converged: true,
        iterations,
    };
    sol.rho = line_loading(&sol, case);
    Ok(sol)
}

/// Computed injection (P, Q) in pu at node `i`.
fn injection(
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    v: &[f64],
    ang: &[f64],
    kind: &[NodeKind],
    i: usize,
) -> (f64, f64) {
    let mut p = 0.0;
    let mut q = 0.0;
    for k in 0..v.len() {
        if kind[k] == NodeKind::Shed {
            continue;
        }
        let (gik, bik) = (g[(i, k)], b[(i, k)]);
        if gik == 0.0 && bik == 0.0 {
            continue;
        }
        let t = ang[i] - ang[k];
        let (s, c) = t.sin_cos();
        p += v[i] * v[k] * (gik * c + bik * s);
        q += v[i] * v[k] * (gik * s - bik * c);
    }
    (p, q)
}

/// Runs NR iterations until the mismatch falls below [`TOLERANCE`]. Returns
/// the number of mismatch evaluations.
fn newton(
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    data: &NodeData,
    v: &mut [f64],
    ang: &mut [f64],
) -> Result<usize, PowerFlowError> {
    let n = v.len();
    // Unknown ordering: angles of PV+PQ nodes, then magnitudes of PQ nodes.
    let ang_idx: Vec<usize> = (0..n)
        .filter(|&i| matches!(data.kind[i], NodeKind::Pv | NodeKind::Pq))
        .collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&i| data.kind[i] == NodeKind::Pq).collect();
    let na = ang_idx.len();
    let dim = na + mag_idx.len();
    if dim == 0 {
        return Ok(1);
    }

    for iteration in 1..=MAX_ITERATIONS {
        let mut p_calc = vec![0.0; n];
        let mut q_calc = vec![0.0; n];
        for i in 0..n {
            if data.kind[i] != NodeKind::Shed {
                let (p, q) = injection(g, b, v, ang, &data.kind, i);
                p_calc[i] = p;
                q_calc[i] = q;
            }
        }
        let mut mismatch = DVector::zeros(dim);
        for (r, &i) in ang_idx.iter().enumerate() {
            mismatch[r] = data.p[i] - p_calc[i];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            mismatch[na + r] = data.q[i] - q_calc[i];
        }
        let worst = mismatch.amax();
        if !worst.is_finite() {
            return Err(PowerFlowError::Diverged { iterations: iteration });
        }
        if worst <= TOLERANCE {
            return Ok(iteration);
        }
        if iteration == MAX_ITERATIONS {
            break;
        }

        let mut jac = DMatrix::zeros(dim, dim);
        let mut col_ang = vec![usize::MAX; n];
        let mut col_mag = vec![usize::MAX; n];
        for (c, &k) in ang_idx.iter().enumerate() {
            col_ang[k] = c;
        }
        for (c, &k) in mag_idx.iter().enumerate() {
            col_mag[k] = na + c;
        }
        let rows: Vec<(usize, usize, bool)> = ang_idx
            .iter()
            .enumerate()
            .map(|(r, &i)| (r, i, true))
            .chain(mag_idx.iter().enumerate().map(|(r, &i)| (na + r, i, false)))
            .collect();
        for &(r, i, is_p) in &rows {
            for k in 0..n {
                let (ca, cm) = (col_ang[k], col_mag[k]);
                if ca == usize::MAX && cm == usize::MAX {
                    continue;
                }
                let (gik, bik) = (g[(i, k)], b[(i, k)]);
                let (d_ang, d_mag) = if i == k {
                    let (gii, bii) = (gik, bik);
                    if is_p {
                        (-q_calc[i] - bii * v[i] * v[i], p_calc[i] / v[i] + gii * v[i])
                    } else {
                        (p_calc[i] - gii * v[i] * v[i], q_calc[i] / v[i] - bii * v[i])
                    }
                } else {
                    if gik == 0.0 && bik == 0.0 {
                        continue;
                    }
                    let (s, c) = (ang[i] - ang[k]).sin_cos();
                    if is_p {
                        (v[i] * v[k] * (gik * s - bik * c), v[i] * (gik * c + bik * s))
                    } else {
                        (-v[i] * v[k] * (gik * c + bik * s), v[i] * (gik * s - bik * c))
                    }
                };
                if ca != usize::MAX {
                    jac[(r, ca)] = d_ang;
                }
                if cm != usize::MAX {
                    jac[(r, cm)] = d_mag;
                }
            }
        }
        let dx = jac
            .lu()
            .solve(&mismatch)
            .ok_or(PowerFlowError::Diverged { iterations: iteration })?;
        for (c, &k) in ang_idx.iter().enumerate() {
            ang[k] += dx[c];
        }
        for (c, &k) in mag_idx.iter().enumerate() {
            v[k] += dx[na + c];
        }
    }
    Err(PowerFlowError::Diverged { iterations: MAX_ITERATIONS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{bundled_ieee14, Bus, Generator, Line, Load};

    pub(crate) fn two_bus(r: f64, x: f64, p_load: f64, q_load: f64) -> GridCase {
        GridCase::new(
            100.0,
            vec![
                Bus { id: 1, kind: BusKind::Slack, base_kv: 100.0 },
                Bus { id: 2, kind: BusKind::Pq, base_kv: 100.0 },
            ],
            vec![Line {
                id: 0,
                from_bus: 1,
                to_bus: 2,
                r_pu: r,
                x_pu: x,
                b_charging_pu: 0.0,
                thermal_limit_mva: 100.0,
                tap_ratio: 1.0,
            }],
            vec![Generator {
                bus: 1,
                p_set_mw: 0.0,
                v_set_pu: 1.0,
                q_min_mvar: -999.0,
                q_max_mvar: 999.0,
            }],
            vec![Load { bus: 2, p_mw: p_load, q_mvar: q_load }],
        )
        .unwrap()
    }

    #[test]
    fn two_bus_admittance() {
        let case = two_bus(0.0, 0.1, 0.0, 0.0);
        let y = build_ybus(&case, &Topology::nominal(&case));
        assert!((y.get(0, 1) - Complex64::new(0.0, 10.0)).norm() < 1e-12);
        assert!((y.get(0, 0) - Complex64::new(0.0, -10.0)).norm() < 1e-12);
        assert!((y.get(0, 1).norm() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_lines_leave_zero_diagonal() {
        let case = bundled_ieee14();
        let mut topo = Topology::nominal(&case);
        topo.line_status.iter_mut().for_each(|s| *s = false);
        let y = build_ybus(&case, &topo);
        assert_eq!(y.nnz(), 14);
        assert!(y.entries().all(|(i, j, v)| i == j && v.norm() == 0.0));
    }

    #[test]
    fn two_bus_no_load_is_flat() {
        let case = two_bus(0.0, 0.1, 0.0, 0.0);
        let sol = solve(&case, &Topology::nominal(&case), &Injections::nominal(&case), Start::Flat)
            .unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.v_mag, vec![1.0, 1.0]);
        assert_eq!(sol.v_ang, vec![0.0, 0.0]);
        assert_eq!(sol.line_flow_from[0].norm(), 0.0);
        assert_eq!(sol.rho[0], 0.0);
    }

    #[test]
    fn rho_uses_more_loaded_end() {
        let case = two_bus(0.0, 0.1, 0.0, 0.0);
        let mut sol =
            solve(&case, &Topology::nominal(&case), &Injections::nominal(&case), Start::Flat)
                .unwrap();
        sol.line_flow_from[0] = Complex64::new(30.0, 40.0);
        sol.line_flow_to[0] = Complex64::new(-48.0, 0.0);
        assert_eq!(line_loading(&sol, &case), vec![0.5]);
    }

    #[test]
    fn out_of_service_line_has_zero_rho() {
        let case = bundled_ieee14();
        let mut topo = Topology::nominal(&case);
        topo.line_status[5] = false;
        let sol = solve(&case, &topo, &Injections::nominal(&case), Start::Flat).unwrap();
        assert_eq!(sol.rho[5], 0.0);
        assert!(sol.rho.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn slack_without_load_is_islanded() {
        let case = bundled_ieee14();
        let mut topo = Topology::nominal(&case);
        topo.line_status[0] = false;
        topo.line_status[1] = false;
        assert_eq!(
            solve(&case, &topo, &Injections::nominal(&case), Start::Flat).unwrap_err(),
            PowerFlowError::IslandedSlack
        );
    }

    #[test]
    fn island_without_slack_is_shed() {
        let case = bundled_ieee14();
        let mut topo = Topology::nominal(&case);
        // Line 7-8 is the only connection of bus 8 (a condenser).
        topo.line_status[13] = false;
        let sol = solve(&case, &topo, &Injections::nominal(&case), Start::Flat).unwrap();
        assert_eq!(sol.shed_gens, vec![4]);
        assert!(sol.shed_loads.is_empty());
    }
}
