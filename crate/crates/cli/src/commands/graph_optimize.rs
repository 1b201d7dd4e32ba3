//! `lgl graph-optimize`: nonlinear refinement of a g2o pose graph.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use lgl_core::pose_graph::{optimize, read_g2o, write_g2o, PoseGraph};

use crate::config::RunConfig;

/// Optimize a pose graph and write the refined graph back out.
#[derive(Debug, Args)]
pub struct GraphOptimizeArgs {
    /// Input graph in g2o text format.
    #[arg(long)]
    pub input: PathBuf,
    /// Output path for the refined graph, same format.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional manifest-format trajectory export of the refined poses.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

pub fn run(config: &RunConfig, args: &GraphOptimizeArgs) -> anyhow::Result<usize> {
    let graph = read_g2o(&args.input)?;
    let result = optimize(&graph, &config.optimize)?;
    let refined = PoseGraph { nodes: result.nodes.clone(), ..graph.clone() };
    write_g2o(&args.output, &refined)?;

    if let Some(path) = &args.trajectory {
        // Manifest row layout: path, then the rotation rows interleaved with
        // the translation, then a timestamp. The node index stands in for
        // both the path and the timestamp.
        let mut out = String::new();
        for (i, node) in refined.nodes.iter().enumerate() {
            let r = node.rotation();
            let t = node.translation();
            write!(out, "node_{i:04}").expect("string write");
            for row in 0..3 {
                write!(
                    out,
                    " {} {} {} {}",
                    r[(row, 0)],
                    r[(row, 1)],
                    r[(row, 2)],
                    t[row]
                )
                .expect("string write");
            }
            writeln!(out, " {i}").expect("string write");
        }
        std::fs::write(path, out)?;
    }

    println!(
        "nodes: {} odometry edges: {} loop edges: {}",
        refined.nodes.len(),
        refined.odometry.len(),
        refined.loops.len()
    );
    println!("cost: {} -> {}", result.initial_cost, result.final_cost);
    println!("iterations: {} converged: {}", result.iterations, result.converged);
    Ok(0)
}
