//! Whole-model weight initialization and forward execution over a
//! resolved [`ModelGraph`].

use super::ModelGraph;
use crate::blocks::{
    expansion_params, forward_expansion, init_block_weights, BlockError, BlockSpec, BlockWeights,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("bad input shape {shape:?}: {why}")]
    InputShape { shape: [usize; 4], why: &'static str },
    #[error("weights cover {got} nodes, graph has {expected}")]
    WeightCount { expected: usize, got: usize },
    #[error("node {node} expects {expected} weight sets, got {got}")]
    NodeWeightCount {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("node {node} ({kind}): {source}")]
    Node {
        node: usize,
        kind: &'static str,
        source: BlockError,
    },
}

/// Weights for every node of a graph, one [`BlockWeights`] per sequential
/// repetition.
#[derive(Debug, Clone)]
pub struct ModelWeights<S: Scalar> {
    pub nodes: Vec<Vec<BlockWeights<S>>>,
}

impl<S: Scalar> ModelWeights<S> {
    /// Total number of stored floats, which equals the model's analytic
    /// parameter count.
    pub fn float_count(&self) -> u64 {
        self.nodes
            .iter()
            .flat_map(|reps| reps.iter())
            .map(|w| w.float_count())
            .sum()
    }
}

/// Deterministically initialize weights for every node from one seed.
/// Kernels and biases draw uniformly from ±sqrt(1/fan_in); batchnorm
/// starts at identity.
pub fn init_model_weights<S: Scalar>(graph: &ModelGraph, seed: u64) -> ModelWeights<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = graph
        .nodes
        .iter()
        .map(|node| {
            let mut reps = vec![init_block_weights(&node.expansion, &mut rng)];
            if let Some(rep) = &node.rep_expansion {
                for _ in 1..node.repeat {
                    reps.push(init_block_weights(rep, &mut rng));
                }
            }
            reps
        })
        .collect();
    ModelWeights { nodes }
}

/// Run the full model on one input batch and return the raw per-scale
/// detection maps, finest stride first. The input must have 3 channels
/// and spatial dims that are positive multiples of 32; this is checked
/// before any node executes.
pub fn forward_graph<S: Scalar>(
    graph: &ModelGraph,
    weights: &ModelWeights<S>,
    input: &Tensor<S>,
) -> Result<Vec<Tensor<S>>, ForwardError> {
    let shape = input.shape();
    let [n, c, h, w] = shape;
    let bad = |why: &'static str| ForwardError::InputShape { shape, why };
    if n == 0 {
        return Err(bad("batch must be at least 1"));
    }
    if c != 3 {
        return Err(bad("expected 3 input channels"));
    }
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(bad("spatial dims must be positive multiples of 32"));
    }
    if weights.nodes.len() != graph.nodes.len() {
        return Err(ForwardError::WeightCount {
            expected: graph.nodes.len(),
            got: weights.nodes.len(),
        });
    }

    let mut cache: Vec<Option<Tensor<S>>> = Vec::with_capacity(graph.nodes.len());
    for _ in 0..graph.nodes.len() {
        cache.push(None);
    }

    for node in &graph.nodes {
        let reps = &weights.nodes[node.index];
        if reps.len() != node.repeat {
            return Err(ForwardError::NodeWeightCount {
                node: node.index,
                expected: node.repeat,
                got: reps.len(),
            });
        }
        let node_err = |source: BlockError| ForwardError::Node {
            node: node.index,
            kind: node.spec.kind.name(),
            source,
        };

        let inputs: Vec<&Tensor<S>> = node
            .inputs
            .iter()
            .map(|&i| {
                if i < 0 {
                    input
                } else {
                    cache[i as usize].as_ref().expect("topological order")
                }
            })
            .collect();
        let mut outs =
            forward_expansion(&node.spec, &node.expansion, &reps[0], &inputs).map_err(node_err)?;
        if let Some(rep_exp) = &node.rep_expansion {
            let rep_spec = BlockSpec {
                kind: node.spec.kind.clone(),
                c_ins: vec![node.c_out],
                c_out: node.c_out,
            };
            for rep_weights in &reps[1..] {
                let prev = outs.pop().expect("repeated blocks have one output");
                outs = forward_expansion(&rep_spec, rep_exp, rep_weights, &[&prev])
                    .map_err(node_err)?;
            }
        }

        if node.index == graph.detect_index {
            return Ok(outs);
        }
        debug_assert_eq!(outs.len(), 1);
        cache[node.index] = Some(outs.swap_remove(0));
    }
    unreachable!("build_graph guarantees a trailing Detect node")
}

/// Analytic parameter count of the whole graph, counting repeated blocks
/// once per repetition.
pub fn graph_params(graph: &ModelGraph) -> u64 {
    graph
        .nodes
        .iter()
        .map(|node| {
            let first = expansion_params(&node.expansion);
            match &node.rep_expansion {
                Some(rep) => first + (node.repeat as u64 - 1) * expansion_params(rep),
                None => first,
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, parse_model_config};

    const TINY: &str = "\
nc: 2
depth_multiple: 1.0
width_multiple: 1.0
anchors:
  - [10, 13, 16, 30, 33, 23]
  - [30, 61, 62, 45, 59, 119]
  - [116, 90, 156, 198, 373, 326]
backbone:
  - [-1, 1, Conv, [16, 3, 2]]
  - [-1, 1, Conv, [32, 3, 2]]
  - [-1, 2, C3, [32]]
  - [-1, 1, Conv, [64, 3, 2]]
head:
  - [[2, 2], 1, Concat, [1]]
  - [[4, 2, 3], 1, Detect, [nc, anchors]]
";

    fn tiny_graph() -> crate::graph::ModelGraph {
        build_graph(&parse_model_config(TINY).unwrap()).unwrap()
    }

    #[test]
    fn forward_returns_one_map_per_scale_with_expected_shapes() {
        let g = tiny_graph();
        let w = init_model_weights::<f32>(&g, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = Tensor::from_rng_uniform([1, 3, 32, 32], &mut rng, -1.0, 1.0);
        let maps = forward_graph(&g, &w, &input).unwrap();
        assert_eq!(maps.len(), 3);
        assert_eq!(maps[0].shape(), [1, 3 * 7, 8, 8]);
        assert_eq!(maps[1].shape(), [1, 3 * 7, 8, 8]);
        assert_eq!(maps[2].shape(), [1, 3 * 7, 4, 4]);
        assert!(maps.iter().all(|m| m.all_finite()));
    }

    #[test]
    fn same_seed_gives_bitwise_identical_maps() {
        let g = tiny_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = Tensor::from_rng_uniform([1, 3, 32, 32], &mut rng, -1.0, 1.0);
        let a = forward_graph(&g, &init_model_weights::<f32>(&g, 42), &input).unwrap();
        let b = forward_graph(&g, &init_model_weights::<f32>(&g, 42), &input).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
        let c = forward_graph(&g, &init_model_weights::<f32>(&g, 43), &input).unwrap();
        assert_ne!(a[0].data(), c[0].data());
    }

    #[test]
    fn input_shape_is_validated_before_execution() {
        let g = tiny_graph();
        let w = init_model_weights::<f32>(&g, 0);
        for shape in [[1, 3, 33, 32], [1, 3, 0, 32], [1, 1, 32, 32], [0, 3, 32, 32]] {
            let input = Tensor::<f32>::zeros(shape);
            assert!(matches!(
                forward_graph(&g, &w, &input),
                Err(ForwardError::InputShape { .. })
            ));
        }
    }

    #[test]
    fn initialized_float_count_matches_analytic_params() {
        let g = tiny_graph();
        let w = init_model_weights::<f32>(&g, 0);
        assert_eq!(w.float_count(), graph_params(&g));
    }

    #[test]
    fn sequential_repetition_chains_weight_sets() {
        let text = TINY.replace("[-1, 2, C3, [32]]", "[-1, 2, Bottleneck, [32]]");
        let g = build_graph(&parse_model_config(&text).unwrap()).unwrap();
        assert_eq!(g.nodes[2].repeat, 2);
        let w = init_model_weights::<f32>(&g, 0);
        assert_eq!(w.nodes[2].len(), 2);
        assert_eq!(w.float_count(), graph_params(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = Tensor::from_rng_uniform([1, 3, 32, 32], &mut rng, -1.0, 1.0);
        let maps = forward_graph(&g, &w, &input).unwrap();
        assert_eq!(maps.len(), 3);
        assert!(maps.iter().all(|m| m.all_finite()));
    }
}
