//! SE(3) pose-graph optimization: fuses drift-prone odometry edges with
//! loop-closure edges from the localizer into a consistent trajectory.
//!
//! Conventions. An edge `(i, j, m)` with `i > j` stores the measured
//! transform `m` taking frame-`i` coordinates to frame-`j` coordinates, so a
//! consistent graph satisfies `T_i = T_j · m` and the edge residual is
//! `Log(T_i⁻¹ · T_j · m)`. Nodes are optimized under right perturbations
//! `T ← T · Exp(δ)` with one gauge node held fixed.
//!
//! # Graph text format
//!
//! One record per line, `#` starts a comment:
//!
//! ```text
//! VERTEX_SE3:QUAT id tx ty tz qx qy qz qw
//! EDGE_SE3:QUAT i j tx ty tz qx qy qz qw [w0 w1 w2 w3 w4 w5]
//! ```
//!
//! Vertex ids must cover `0..n` exactly once. Edges require `i > j`; an edge
//! with `i == j + 1` is classified as odometry, anything else as a loop
//! closure. The optional six trailing values are per-edge diagonal weights
//! (translation first, then rotation). Quaternions must be within 1e-3 of
//! unit norm and are renormalized on read.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix6, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{adjoint, se3_exp, se3_log, se3_right_jacobian_inv, PoseSE3};

#[derive(Debug, Error)]
pub enum PoseGraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("bad edge ({i}, {j}): {msg}")]
    BadEdge { i: usize, j: usize, msg: String },
    #[error("gauge index {0} is out of range")]
    BadGauge(usize),
    #[error("{0} nodes unreachable from the gauge through odometry edges")]
    Disconnected(usize),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A relative-pose constraint between nodes `i` and `j` (`i > j`).
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Measured transform taking frame-`i` coordinates to frame-`j`
    /// coordinates.
    pub measurement: PoseSE3,
    /// Optional diagonal weights, translation components first.
    pub weight: Option<[f64; 6]>,
}

impl Edge {
    pub fn new(i: usize, j: usize, measurement: PoseSE3) -> Self {
        Self { i, j, measurement, weight: None }
    }
}

/// Trajectory nodes plus odometry and loop-closure constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub nodes: Vec<PoseSE3>,
    pub odometry: Vec<Edge>,
    pub loops: Vec<Edge>,
    /// Node held fixed during optimization.
    pub gauge: usize,
}

impl PoseGraph {
    pub fn new(nodes: Vec<PoseSE3>) -> Self {
        Self { nodes, odometry: Vec::new(), loops: Vec::new(), gauge: 0 }
    }

    fn check_edge(&self, i: usize, j: usize) -> Result<(), PoseGraphError> {
        if i <= j {
            return Err(PoseGraphError::BadEdge { i, j, msg: "requires i > j".into() });
        }
        if i >= self.nodes.len() {
            return Err(PoseGraphError::BadEdge { i, j, msg: "node index out of range".into() });
        }
        Ok(())
    }

    pub fn add_odometry(&mut self, i: usize, j: usize, m: PoseSE3) -> Result<(), PoseGraphError> {
        self.check_edge(i, j)?;
        self.odometry.push(Edge::new(i, j, m));
        Ok(())
    }

    pub fn add_loop(&mut self, i: usize, j: usize, m: PoseSE3) -> Result<(), PoseGraphError> {
        self.check_edge(i, j)?;
        self.loops.push(Edge::new(i, j, m));
        Ok(())
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.odometry.iter().chain(self.loops.iter())
    }

    /// Checks structural invariants: a gauge inside the graph, well-formed
    /// edges, and every node reachable from the gauge through odometry.
    pub fn validate(&self) -> Result<(), PoseGraphError> {
        if self.nodes.is_empty() {
            return Err(PoseGraphError::Empty);
        }
        if self.gauge >= self.nodes.len() {
            return Err(PoseGraphError::BadGauge(self.gauge));
        }
        for e in self.edges() {
            self.check_edge(e.i, e.j)?;
            if let Some(w) = e.weight {
                if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                    return Err(PoseGraphError::BadEdge {
                        i: e.i,
                        j: e.j,
                        msg: "weights must be positive and finite".into(),
                    });
                }
            }
        }
        let n = self.nodes.len();
        let mut adjacency = vec![Vec::new(); n];
        for e in &self.odometry {
            adjacency[e.i].push(e.j);
            adjacency[e.j].push(e.i);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.gauge]);
        seen[self.gauge] = true;
        while let Some(k) = queue.pop_front() {
            for &next in &adjacency[k] {
                if !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        let unreached = seen.iter().filter(|s| !**s).count();
        if unreached > 0 {
            return Err(PoseGraphError::Disconnected(unreached));
        }
        Ok(())
    }
}

/// Edge residual `Log(T_i⁻¹ · T_j · m)`; zero on a consistent graph.
pub fn residual(nodes: &[PoseSE3], edge: &Edge) -> Vector6<f64> {
    let e = nodes[edge.i].inverse().compose(&nodes[edge.j]).compose(&edge.measurement);
    se3_log(&e)
}

/// Residual plus its Jacobians with respect to right perturbations of the
/// two incident nodes.
pub fn residual_jacobians(
    nodes: &[PoseSE3],
    edge: &Edge,
) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let e = nodes[edge.i].inverse().compose(&nodes[edge.j]).compose(&edge.measurement);
    let r = se3_log(&e);
    let jr_inv = se3_right_jacobian_inv(&r);
    let d_j = jr_inv * adjoint(&edge.measurement.inverse());
    let d_i = -jr_inv * adjoint(&e.inverse());
    (r, d_i, d_j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the gradient infinity norm and the step
    /// infinity norm.
    pub tolerance: f64,
    /// Huber kernel width applied to loop edges only; `None` keeps the
    /// plain quadratic cost.
    pub huber: Option<f64>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-10, huber: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub nodes: Vec<PoseSE3>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Robustified cost of one edge given its weighted squared residual norm.
fn rho(s: f64, huber: Option<f64>) -> f64 {
    match huber {
        Some(delta) if s.sqrt() > delta => 2.0 * delta * s.sqrt() - delta * delta,
        _ => s,
    }
}

fn weighted_sq_norm(r: &Vector6<f64>, weight: &Option<[f64; 6]>) -> f64 {
    match weight {
        Some(w) => r.iter().zip(w).map(|(v, wi)| wi * v * v).sum(),
        None => r.norm_squared(),
    }
}

fn graph_cost(graph: &PoseGraph, nodes: &[PoseSE3], huber: Option<f64>) -> f64 {
    let mut cost = 0.0;
    for e in &graph.odometry {
        cost += weighted_sq_norm(&residual(nodes, e), &e.weight);
    }
    for e in &graph.loops {
        cost += rho(weighted_sq_norm(&residual(nodes, e), &e.weight), huber);
    }
    cost
}

/// Levenberg-Marquardt over the product manifold. The gauge node stays
/// fixed; accepted steps never increase the cost.
pub fn optimize(graph: &PoseGraph, cfg: &OptimizeConfig) -> Result<OptimizeResult, PoseGraphError> {
    graph.validate()?;
    let n = graph.nodes.len();
    let dof = 6 * (n - 1);
    let slot = |k: usize| -> Option<usize> {
        if k == graph.gauge {
            None
        } else if k < graph.gauge {
            Some(6 * k)
        } else {
            Some(6 * (k - 1))
        }
    };

    let mut nodes = graph.nodes.clone();
    let initial_cost = graph_cost(graph, &nodes, cfg.huber);
    if dof == 0 {
        return Ok(OptimizeResult {
            nodes,
            initial_cost,
            final_cost: initial_cost,
            iterations: 0,
            converged: true,
        });
    }

    let mut cost = initial_cost;
    let mut lambda = 1e-6;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iterations {
        iterations = it;
        let mut h = DMatrix::<f64>::zeros(dof, dof);
        let mut g = DVector::<f64>::zeros(dof);

        let mut accumulate = |edge: &Edge, robust: bool| {
            let (r, d_i, d_j) = residual_jacobians(&nodes, edge);
            // Diagonal weights fold into the residual and Jacobian rows;
            // the Huber kernel adds one scalar IRLS factor per edge.
            let mut w = [1.0f64; 6];
            if let Some(ew) = edge.weight {
                w = ew;
            }
            if robust {
                if let Some(delta) = cfg.huber {
                    let s = weighted_sq_norm(&r, &edge.weight);
                    if s.sqrt() > delta {
                        let k = delta / s.sqrt();
                        for wi in &mut w {
                            *wi *= k;
                        }
                    }
                }
            }
            for (block, node) in [(d_i, edge.i), (d_j, edge.j)] {
                let Some(b) = slot(node) else { continue };
                for (block2, node2) in [(d_i, edge.i), (d_j, edge.j)] {
                    let Some(b2) = slot(node2) else { continue };
                    for row in 0..6 {
                        for a in 0..6 {
                            for c in 0..6 {
                                h[(b + a, b2 + c)] += block[(row, a)] * w[row] * block2[(row, c)];
                            }
                        }
                    }
                }
                for row in 0..6 {
                    for a in 0..6 {
                        g[b + a] += block[(row, a)] * w[row] * r[row];
                    }
                }
            }
        };
        for e in &graph.odometry {
            accumulate(e, false);
        }
        for e in &graph.loops {
            accumulate(e, true);
        }

        if g.amax() < cfg.tolerance {
            converged = true;
            break;
        }

        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = h.clone();
            for d in 0..dof {
                damped[(d, d)] += lambda * (1.0 + h[(d, d)]);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let mut candidate = nodes.clone();
            for (k, node) in candidate.iter_mut().enumerate() {
                if let Some(b) = slot(k) {
                    let delta = Vector6::from_fn(|d, _| step[b + d]);
                    *node = node.compose(&se3_exp(&delta));
                }
            }
            let new_cost = graph_cost(graph, &candidate, cfg.huber);
            if new_cost <= cost {
                assert!(new_cost <= cost + 1e-9 * (1.0 + cost), "accepted step raised cost");
                nodes = candidate;
                let step_small = step.amax() < cfg.tolerance;
                cost = new_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if step_small || cost < 1e-24 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || converged {
            converged = converged || !accepted && g.amax() < cfg.tolerance.max(1e-8);
            break;
        }
    }

    Ok(OptimizeResult { nodes, initial_cost, final_cost: cost, iterations, converged })
}

fn pose_tokens(p: &PoseSE3) -> String {
    let t = p.translation();
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*p.rotation()));
    format!(
        "{} {} {} {} {} {} {}",
        t.x, t.y, t.z, q.i, q.j, q.k, q.w
    )
}

/// Writes the graph in the text format documented at module level.
pub fn write_g2o(path: impl AsRef<Path>, graph: &PoseGraph) -> Result<(), PoseGraphError> {
    let mut out = String::new();
    for (id, node) in graph.nodes.iter().enumerate() {
        writeln!(out, "VERTEX_SE3:QUAT {id} {}", pose_tokens(node)).expect("string write");
    }
    for e in graph.edges() {
        write!(out, "EDGE_SE3:QUAT {} {} {}", e.i, e.j, pose_tokens(&e.measurement))
            .expect("string write");
        if let Some(w) = e.weight {
            for v in w {
                write!(out, " {v}").expect("string write");
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a graph written by [`write_g2o`]. Vertices must cover `0..n`;
/// edges are classified as odometry when `i == j + 1`.
pub fn read_g2o(path: impl AsRef<Path>) -> Result<PoseGraph, PoseGraphError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let perr = |line: usize, msg: String| PoseGraphError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let parse_pose = |line: usize, tokens: &[&str]| -> Result<PoseSE3, PoseGraphError> {
        let v: Vec<f64> = tokens
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| perr(line, format!("bad number: {e}")))?;
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
            return Err(perr(line, format!("quaternion norm {norm} too far from 1")));
        }
        let rotation = UnitQuaternion::new_normalize(q).to_rotation_matrix();
        PoseSE3::new(rotation.into_inner(), Vector3::new(v[0], v[1], v[2]))
            .map_err(|e| perr(line, e.to_string()))
    };

    let mut vertices: Vec<(usize, PoseSE3)> = Vec::new();
    let mut edges: Vec<Edge> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = body.split_whitespace().collect();
        match tokens[0] {
            "VERTEX_SE3:QUAT" => {
                if tokens.len() != 9 {
                    return Err(perr(line, format!("vertex needs 9 tokens, got {}", tokens.len())));
                }
                let id: usize =
                    tokens[1].parse().map_err(|e| perr(line, format!("bad id: {e}")))?;
                vertices.push((id, parse_pose(line, &tokens[2..9])?));
            }
            "EDGE_SE3:QUAT" => {
                if tokens.len() != 10 && tokens.len() != 16 {
                    return Err(perr(
                        line,
                        format!("edge needs 10 or 16 tokens, got {}", tokens.len()),
                    ));
                }
                let i: usize = tokens[1].parse().map_err(|e| perr(line, format!("bad id: {e}")))?;
                let j: usize = tokens[2].parse().map_err(|e| perr(line, format!("bad id: {e}")))?;
                let measurement = parse_pose(line, &tokens[3..10])?;
                let weight = if tokens.len() == 16 {
                    let mut w = [0.0; 6];
                    for (slot, t) in w.iter_mut().zip(&tokens[10..16]) {
                        *slot = t.parse().map_err(|e| perr(line, format!("bad weight: {e}")))?;
                    }
                    Some(w)
                } else {
                    None
                };
                edges.push(Edge { i, j, measurement, weight });
            }
            other => return Err(perr(line, format!("unknown record {other:?}"))),
        }
    }

    vertices.sort_by_key(|(id, _)| *id);
    for (expect, (id, _)) in vertices.iter().enumerate() {
        if *id != expect {
            return Err(perr(0, format!("vertex ids must cover 0..n, missing or duplicate near {id}")));
        }
    }
    let mut graph = PoseGraph::new(vertices.into_iter().map(|(_, p)| p).collect());
    for e in edges {
        graph.check_edge(e.i, e.j)?;
        if e.i == e.j + 1 {
            graph.odometry.push(e);
        } else {
            graph.loops.push(e);
        }
    }
    Ok(graph)
}
