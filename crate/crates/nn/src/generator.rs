//! Nested U-Net (U-Net++) generator over 3-D tiles.
//!
//! Node `(i, j)` sits at resolution level `i` (halved `i` times) and column
//! `j`. Column 0 is the encoder; every later node reads its same-row
//! predecessors followed by the ×2-upsampled output of node `(i + 1, j − 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::layers::{Cache, Layer, LayerSpec, Sequential};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Number of 2× down-samplings.
    pub depth: usize,
    /// Channels at level 0; level `i` gets `base_channels << i` unless
    /// `channels` lists all `depth + 1` widths explicitly.
    pub base_channels: usize,
    pub channels: Option<Vec<usize>>,
    /// All same-row predecessors feed a node; otherwise only the nearest.
    pub dense_skips: bool,
    pub kernel: usize,
    pub prelu_init: f64,
    pub norm_eps: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            depth: 4,
            base_channels: 20,
            channels: None,
            dense_skips: true,
            kernel: 3,
            prelu_init: 0.25,
            norm_eps: 1e-5,
        }
    }
}

impl GeneratorConfig {
    /// Reduced widths for quick experiments.
    pub fn toy() -> Self {
        GeneratorConfig {
            base_channels: 4,
            ..Self::default()
        }
    }

    pub fn channel_schedule(&self) -> Vec<usize> {
        match &self.channels {
            Some(c) => c.clone(),
            None => (0..=self.depth).map(|i| self.base_channels << i).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ch = self.channel_schedule();
        if self.depth == 0 || ch.len() != self.depth + 1 || ch.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "generator needs depth >= 1 and {} nonzero channel widths, got {:?}",
                self.depth + 1,
                ch
            )));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(NnError::InvalidConfig(format!("kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }

    /// Columns `k` whose outputs at row `i` feed node `(i, j)`.
    fn row_inputs(&self, j: usize) -> std::ops::Range<usize> {
        if self.dense_skips {
            0..j
        } else {
            j - 1..j
        }
    }

    fn node_in_channels(&self, ch: &[usize], i: usize, j: usize) -> usize {
        match (i, j) {
            (0, 0) => 1,
            (_, 0) => ch[i - 1],
            _ => self.row_inputs(j).len() * ch[i] + ch[i + 1],
        }
    }

    fn block_specs(&self, ci: usize, co: usize) -> Vec<LayerSpec> {
        let conv = |ci, co| LayerSpec::Conv3d {
            in_channels: ci,
            out_channels: co,
            kernel: self.kernel,
            stride: 1,
            padding: self.kernel / 2,
            bias: true,
        };
        let norm = LayerSpec::InstanceNorm {
            channels: co,
            eps: self.norm_eps,
            affine: true,
        };
        let act = LayerSpec::Prelu {
            channels: co,
            init: self.prelu_init,
        };
        vec![conv(ci, co), norm.clone(), act.clone(), conv(co, co), norm, act]
    }

    fn head_specs(&self, ch0: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv3d {
                in_channels: ch0,
                out_channels: 1,
                kernel: 1,
                stride: 1,
                padding: 0,
                bias: true,
            },
            LayerSpec::Sigmoid,
        ]
    }

    /// `(i, j)` in evaluation order.
    fn node_order(&self) -> Vec<(usize, usize)> {
        (0..=self.depth)
            .flat_map(|j| (0..=self.depth - j).map(move |i| (i, j)))
            .collect()
    }

    pub fn count_parameters(&self) -> Result<usize, NnError> {
        self.validate()?;
        let ch = self.channel_schedule();
        let nodes: usize = self
            .node_order()
            .into_iter()
            .flat_map(|(i, j)| self.block_specs(self.node_in_channels(&ch, i, j), ch[i]))
            .map(|s| s.param_count())
            .sum();
        Ok(nodes + self.head_specs(ch[0]).iter().map(|s| s.param_count()).sum::<usize>())
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    i: usize,
    j: usize,
    /// max-pool for `(i > 0, 0)`, upsample for `j > 0`
    pre: Option<Layer<T>>,
    block: Sequential<T>,
}

#[derive(Debug, Clone)]
pub struct Generator<T> {
    cfg: GeneratorConfig,
    ch: Vec<usize>,
    nodes: Vec<Node<T>>,
    /// `index[i][j]` into `nodes`
    index: Vec<Vec<usize>>,
    head: Sequential<T>,
}

/// Activations kept by [`Generator::forward_train`].
pub struct GeneratorTape<T> {
    pre: Vec<Option<Cache<T>>>,
    blocks: Vec<Vec<Cache<T>>>,
    head: Vec<Cache<T>>,
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<(), NnError> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl<T: Real> Generator<T> {
    pub fn new(cfg: &GeneratorConfig, rng: &mut impl Rng) -> Result<Self, NnError> {
        cfg.validate()?;
        let ch = cfg.channel_schedule();
        let mut index = vec![vec![usize::MAX; cfg.depth + 1]; cfg.depth + 1];
        let mut nodes = Vec::new();
        for (i, j) in cfg.node_order() {
            let pre = match (i, j) {
                (0, 0) => None,
                (_, 0) => Some(LayerSpec::Maxpool3d.build(rng)?),
                _ => Some(LayerSpec::TrilinearUp.build(rng)?),
            };
            let block = Sequential::build(&cfg.block_specs(cfg.node_in_channels(&ch, i, j), ch[i]), rng)?;
            index[i][j] = nodes.len();
            nodes.push(Node { i, j, pre, block });
        }
        let head = Sequential::build(&cfg.head_specs(ch[0]), rng)?;
        Ok(Generator {
            cfg: cfg.clone(),
            ch,
            nodes,
            index,
            head,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        let [_, c, d, h, w] = x.dims5()?;
        let m = 1usize << self.cfg.depth;
        if c != 1 || d % m != 0 || h % m != 0 || w % m != 0 || d == 0 || h == 0 || w == 0 {
            return Err(NnError::ShapeMismatch {
                expected: format!("[N, 1, D, H, W] with spatial dims divisible by {m}"),
                actual: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    fn node_input(
        &self,
        node: &Node<T>,
        x: &Tensor<T>,
        outs: &[Option<Tensor<T>>],
        mut pre: impl FnMut(&Layer<T>, &Tensor<T>) -> Result<Tensor<T>, NnError>,
    ) -> Result<Tensor<T>, NnError> {
        let (i, j) = (node.i, node.j);
        let get = |i: usize, j: usize| outs[self.index[i][j]].as_ref().expect("node evaluated out of order");
        match (i, j, &node.pre) {
            (0, 0, _) => Ok(x.clone()),
            (_, 0, Some(p)) => pre(p, get(i - 1, 0)),
            (_, _, Some(p)) => {
                let up = pre(p, get(i + 1, j - 1))?;
                let mut parts: Vec<&Tensor<T>> = self.cfg.row_inputs(j).map(|k| get(i, k)).collect();
                parts.push(&up);
                Tensor::concat_channels(&parts)
            }
            _ => unreachable!("non-root node without a pre layer"),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let mut outs: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (n, node) in self.nodes.iter().enumerate() {
            let input = self.node_input(node, x, &outs, |l, t| l.infer(t))?;
            outs[n] = Some(node.block.infer(&input)?);
        }
        let last = outs[self.index[0][self.cfg.depth]].take().expect("final node");
        self.head.infer(&last)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, GeneratorTape<T>), NnError> {
        self.check_input(x)?;
        let count = self.nodes.len();
        let mut outs: Vec<Option<Tensor<T>>> = vec![None; count];
        let mut pre_caches: Vec<Option<Cache<T>>> = Vec::with_capacity(count);
        let mut blocks = Vec::with_capacity(count);
        for (n, node) in self.nodes.iter().enumerate() {
            let mut pc = None;
            let input = self.node_input(node, x, &outs, |l, t| {
                let (y, c) = l.forward(t)?;
                pc = Some(c);
                Ok(y)
            })?;
            pre_caches.push(pc);
            let (y, caches) = node.block.forward(&input)?;
            blocks.push(caches);
            outs[n] = Some(y);
        }
        let last = outs[self.index[0][self.cfg.depth]].take().expect("final node");
        let (y, head) = self.head.forward(&last)?;
        Ok((
            y,
            GeneratorTape {
                pre: pre_caches,
                blocks,
                head,
            },
        ))
    }

    /// Returns the input gradient and parameter gradients in [`Generator::params`] order.
    pub fn backward(&self, tape: &GeneratorTape<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        let count = self.nodes.len();
        if tape.blocks.len() != count || tape.pre.len() != count {
            return Err(NnError::InvalidConfig("tape does not match this generator".into()));
        }
        let (d_last, head_grads) = self.head.backward(&tape.head, dy)?;
        let mut douts: Vec<Option<Tensor<T>>> = vec![None; count];
        douts[self.index[0][self.cfg.depth]] = Some(d_last);
        let mut node_grads: Vec<Vec<Tensor<T>>> = vec![Vec::new(); count];
        let mut dx = None;
        for n in (0..count).rev() {
            let node = &self.nodes[n];
            let (i, j) = (node.i, node.j);
            let g = douts[n].take().ok_or_else(|| NnError::InvalidConfig(format!("node ({i},{j}) received no gradient")))?;
            let (d_in, grads) = node.block.backward(&tape.blocks[n], &g)?;
            node_grads[n] = grads;
            let pre_cache = tape.pre[n].as_ref();
            match (i, j, &node.pre, pre_cache) {
                (0, 0, _, _) => dx = Some(d_in),
                (_, 0, Some(p), Some(c)) => {
                    let (d, _) = p.backward(c, &d_in)?;
                    accumulate(&mut douts[self.index[i - 1][0]], d)?;
                }
                (_, _, Some(p), Some(c)) => {
                    let row = self.cfg.row_inputs(j);
                    let mut sizes = vec![self.ch[i]; row.len()];
                    sizes.push(self.ch[i + 1]);
                    let mut parts = d_in.split_channels(&sizes)?;
                    let d_up = parts.pop().expect("upsample part");
                    for (k, part) in row.zip(parts) {
                        accumulate(&mut douts[self.index[i][k]], part)?;
                    }
                    let (d, _) = p.backward(c, &d_up)?;
                    accumulate(&mut douts[self.index[i + 1][j - 1]], d)?;
                }
                _ => return Err(NnError::InvalidConfig(format!("missing cache for node ({i},{j})"))),
            }
        }
        let mut grads: Vec<Tensor<T>> = node_grads.into_iter().flatten().collect();
        grads.extend(head_grads);
        Ok((dx.expect("root node visited"), grads))
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p: Vec<&Tensor<T>> = self.nodes.iter().flat_map(|n| n.block.params()).collect();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p: Vec<&mut Tensor<T>> = self.nodes.iter_mut().flat_map(|n| n.block.params_mut()).collect();
        p.extend(self.head.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}
