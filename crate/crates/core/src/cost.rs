//! Analytic per-layer and whole-model cost accounting: parameter counts,
//! multiply-accumulate counts at a given input size, and diffs between
//! two models.
//!
//! Parameters count conv kernels, conv biases, and the two affine
//! batchnorm vectors. MACs count convolutions only (`k^2 * c_in/g * c_out`
//! per output element); GFLOPs is `2 * MACs / 1e9`.

use crate::blocks::BlockError;
use crate::graph::ModelGraph;
use crate::blocks::{expansion_macs, expansion_params, step_out_hw};
use serde::Serialize;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("input {h}x{w} must be positive multiples of 32")]
    InputSize { h: usize, w: usize },
    #[error("node {node} ({kind}): {source}")]
    Node {
        node: usize,
        kind: &'static str,
        source: BlockError,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub i: usize,
    pub kind: &'static str,
    /// Total input channels (summed over inputs for Concat and Detect).
    pub c_in: usize,
    pub c_out: usize,
    /// Spatial dims of the node output; for Detect, of its finest scale.
    pub out_h: usize,
    pub out_w: usize,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostTotals {
    pub params: u64,
    pub macs: u64,
    pub gflops: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    /// Input spatial dims as `[h, w]`.
    pub input: [usize; 2],
    pub rows: Vec<CostRow>,
    pub totals: CostTotals,
}

pub fn gflops_of_macs(macs: u64) -> f64 {
    2.0 * macs as f64 / 1e9
}

/// Count parameters and MACs for every node of a graph at the given
/// input size. Purely analytic: nothing is allocated or executed.
pub fn count_model(graph: &ModelGraph, in_hw: (usize, usize)) -> Result<CostReport, CostError> {
    let (h, w) = in_hw;
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(CostError::InputSize { h, w });
    }

    let mut out_hws: Vec<Vec<(usize, usize)>> = Vec::with_capacity(graph.nodes.len());
    let mut rows = Vec::with_capacity(graph.nodes.len());
    let mut total_params = 0u64;
    let mut total_macs = 0u64;

    for node in &graph.nodes {
        let kind = node.spec.kind.name();
        let node_err = |source: BlockError| CostError::Node {
            node: node.index,
            kind,
            source,
        };
        let in_sizes: Vec<(usize, usize)> = node
            .inputs
            .iter()
            .map(|&i| {
                if i < 0 {
                    (h, w)
                } else {
                    out_hws[i as usize][0]
                }
            })
            .collect();

        let mut params = expansion_params(&node.expansion);
        let mut macs = expansion_macs(kind, &node.expansion, &in_sizes).map_err(node_err)?;
        let mut sizes = step_out_hw(kind, &node.expansion, &in_sizes).map_err(node_err)?;
        if let Some(rep) = &node.rep_expansion {
            let rep_params = expansion_params(rep);
            for _ in 1..node.repeat {
                params += rep_params;
                macs += expansion_macs(kind, rep, &sizes).map_err(node_err)?;
                sizes = step_out_hw(kind, rep, &sizes).map_err(node_err)?;
            }
        }

        rows.push(CostRow {
            i: node.index,
            kind,
            c_in: node.spec.c_ins.iter().sum(),
            c_out: node.c_out,
            out_h: sizes[0].0,
            out_w: sizes[0].1,
            params,
            macs,
        });
        total_params += params;
        total_macs += macs;
        out_hws.push(sizes);
    }

    Ok(CostReport {
        input: [h, w],
        rows,
        totals: CostTotals {
            params: total_params,
            macs: total_macs,
            gflops: gflops_of_macs(total_macs),
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffRow {
    pub i: usize,
    pub kind_a: &'static str,
    pub kind_b: &'static str,
    pub params_a: u64,
    pub params_b: u64,
    pub params_delta: i64,
    pub macs_a: u64,
    pub macs_b: u64,
    pub macs_delta: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffTotals {
    pub params_a: u64,
    pub params_b: u64,
    pub params_delta_pct: f64,
    pub macs_a: u64,
    pub macs_b: u64,
    pub macs_delta_pct: f64,
    pub gflops_a: f64,
    pub gflops_b: f64,
    pub gflops_delta_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffReport {
    pub rows: Vec<DiffRow>,
    pub node_count_a: usize,
    pub node_count_b: usize,
    pub totals: DiffTotals,
}

fn delta_pct(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        (b - a) / a * 100.0
    }
}

/// Per-node and total deltas between two cost reports. Percentages are
/// signed relative to report `a`: a lighter `b` gives negative values.
pub fn diff_reports(a: &CostReport, b: &CostReport) -> DiffReport {
    let rows = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| DiffRow {
            i: ra.i,
            kind_a: ra.kind,
            kind_b: rb.kind,
            params_a: ra.params,
            params_b: rb.params,
            params_delta: rb.params as i64 - ra.params as i64,
            macs_a: ra.macs,
            macs_b: rb.macs,
            macs_delta: rb.macs as i64 - ra.macs as i64,
        })
        .collect();
    DiffReport {
        rows,
        node_count_a: a.rows.len(),
        node_count_b: b.rows.len(),
        totals: DiffTotals {
            params_a: a.totals.params,
            params_b: b.totals.params,
            params_delta_pct: delta_pct(a.totals.params as f64, b.totals.params as f64),
            macs_a: a.totals.macs,
            macs_b: b.totals.macs,
            macs_delta_pct: delta_pct(a.totals.macs as f64, b.totals.macs as f64),
            gflops_a: a.totals.gflops,
            gflops_b: b.totals.gflops,
            gflops_delta_pct: delta_pct(a.totals.gflops, b.totals.gflops),
        },
    }
}

/// Aligned human-readable table for one model.
pub fn render_cost_table(report: &CostReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>3}  {:<16} {:>5} {:>6} {:>11} {:>12} {:>14}",
        "i", "kind", "c_in", "c_out", "out", "params", "macs"
    );
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:>3}  {:<16} {:>5} {:>6} {:>11} {:>12} {:>14}",
            r.i,
            r.kind,
            r.c_in,
            r.c_out,
            format!("{}x{}", r.out_h, r.out_w),
            r.params,
            r.macs
        );
    }
    let t = &report.totals;
    let _ = writeln!(
        out,
        "input {}x{}  params {}  macs {}  gflops {:.3}",
        report.input[0], report.input[1], t.params, t.macs, t.gflops
    );
    out
}

/// Aligned human-readable diff table, percentages with two decimals.
pub fn render_diff_table(diff: &DiffReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>3}  {:<26} {:>12} {:>12} {:>14} {:>14}",
        "i", "kind", "params_a", "params_b", "macs_a", "macs_b"
    );
    for r in &diff.rows {
        let kind = if r.kind_a == r.kind_b {
            r.kind_a.to_string()
        } else {
            format!("{} -> {}", r.kind_a, r.kind_b)
        };
        let _ = writeln!(
            out,
            "{:>3}  {:<26} {:>12} {:>12} {:>14} {:>14}",
            r.i, kind, r.params_a, r.params_b, r.macs_a, r.macs_b
        );
    }
    if diff.node_count_a != diff.node_count_b {
        let _ = writeln!(
            out,
            "note: node counts differ ({} vs {}); extra rows not shown",
            diff.node_count_a, diff.node_count_b
        );
    }
    let t = &diff.totals;
    let _ = writeln!(
        out,
        "params {} -> {} ({:+.2}%)",
        t.params_a, t.params_b, t.params_delta_pct
    );
    let _ = writeln!(
        out,
        "macs {} -> {} ({:+.2}%)",
        t.macs_a, t.macs_b, t.macs_delta_pct
    );
    let _ = writeln!(
        out,
        "gflops {:.3} -> {:.3} ({:+.2}%)",
        t.gflops_a, t.gflops_b, t.gflops_delta_pct
    );
    out
}
