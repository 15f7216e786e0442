//! The 4-node, 6-edge, 5-operator cell topology space and its macro skeleton.

use crate::engine::{BlockKind, Layout, Network, NetworkBuilder, Scalar};
use crate::error::{Error, Result};
use crate::rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Number of distinct cells: 5 operators on 6 edges.
pub const SPACE_SIZE: u32 = 15_625;

/// Edges `(from, to)` in canonical order; position `k` is the base-5 digit
/// of weight `5^k` in the [`ArchId`].
pub const EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Zeroize = 0,
    SkipConnection = 1,
    Conv1x1 = 2,
    Conv3x3 = 3,
    AvgPool3x3 = 4,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::Zeroize,
        OpKind::SkipConnection,
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::AvgPool3x3,
    ];

    pub fn index(self) -> u32 {
        self as u32
    }

    pub fn from_index(i: u32) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    /// Operator name used in benchmark-style cell strings.
    pub fn bench_name(self) -> &'static str {
        match self {
            OpKind::Zeroize => "none",
            OpKind::SkipConnection => "skip_connect",
            OpKind::Conv1x1 => "nor_conv_1x1",
            OpKind::Conv3x3 => "nor_conv_3x3",
            OpKind::AvgPool3x3 => "avg_pool_3x3",
        }
    }

    pub fn from_bench_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.bench_name() == name)
    }
}

/// Encoded cell, `sum(op_k * 5^k)` over [`EDGES`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchId(u32);

impl ArchId {
    pub fn new(id: u32) -> Result<Self> {
        if id >= SPACE_SIZE {
            return Err(Error::Domain(format!("arch id {id} outside [0, {SPACE_SIZE})")));
        }
        Ok(Self(id))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn decode(self) -> CellSpec {
        let mut rest = self.0;
        let mut edge_ops = [OpKind::Zeroize; 6];
        for op in &mut edge_ops {
            *op = OpKind::from_index(rest % 5).expect("digit < 5");
            rest /= 5;
        }
        CellSpec { edge_ops }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Accepts either a decimal id or a benchmark-style cell string.
impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(id) = s.parse::<u32>() {
            return ArchId::new(id);
        }
        Ok(s.parse::<CellSpec>()?.encode())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellSpec {
    pub edge_ops: [OpKind; 6],
}

impl CellSpec {
    pub fn uniform(op: OpKind) -> Self {
        Self { edge_ops: [op; 6] }
    }

    pub fn encode(&self) -> ArchId {
        let id = self
            .edge_ops
            .iter()
            .rev()
            .fold(0u32, |acc, op| acc * 5 + op.index());
        ArchId(id)
    }

    pub fn op(&self, from: usize, to: usize) -> OpKind {
        let k = EDGES
            .iter()
            .position(|&e| e == (from, to))
            .expect("edge exists");
        self.edge_ops[k]
    }
}

/// `|op~0|+|op~0|op~1|+|op~0|op~1|op~2|`, grouped by target node.
impl fmt::Display for CellSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let groups: Vec<String> = (1..4)
            .map(|to| {
                let ops: String = (0..to)
                    .map(|from| format!("{}~{}|", self.op(from, to).bench_name(), from))
                    .collect();
                format!("|{ops}")
            })
            .collect();
        write!(f, "{}", groups.join("+"))
    }
}

impl FromStr for CellSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Domain(format!("cell string {s:?}: {why}"));
        let groups: Vec<&str> = s.trim().split('+').collect();
        if groups.len() != 3 {
            return Err(bad("expected 3 node groups"));
        }
        let mut edge_ops = [OpKind::Zeroize; 6];
        for (g, group) in groups.iter().enumerate() {
            let to = g + 1;
            let inner = group
                .strip_prefix('|')
                .and_then(|x| x.strip_suffix('|'))
                .ok_or_else(|| bad("group not delimited by '|'"))?;
            let items: Vec<&str> = inner.split('|').collect();
            if items.len() != to {
                return Err(bad("wrong number of edges in group"));
            }
            for item in items {
                let (name, from) = item.split_once('~').ok_or_else(|| bad("missing '~'"))?;
                let from: usize = from.parse().map_err(|_| bad("bad source index"))?;
                if from >= to {
                    return Err(bad("source index out of range"));
                }
                let op = OpKind::from_bench_name(name).ok_or_else(|| bad("unknown operator"))?;
                let k = EDGES.iter().position(|&e| e == (from, to)).expect("edge");
                edge_ops[k] = op;
            }
        }
        Ok(CellSpec { edge_ops })
    }
}

/// Every id in the space, in increasing order.
pub fn enumerate_space() -> impl Iterator<Item = ArchId> {
    (0..SPACE_SIZE).map(ArchId)
}

/// Outer skeleton: stem, `stages` stages of `cells_per_stage` cells with
/// residual downsampling between stages, and a head of batchnorm, relu,
/// global pooling and a linear classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroConfig {
    pub stages: usize,
    pub cells_per_stage: usize,
    pub init_channels: usize,
    pub num_classes: usize,
    pub image_hw: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
}

fn default_in_channels() -> usize {
    3
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl MacroConfig {
    pub fn desk() -> Self {
        Self {
            stages: 3,
            cells_per_stage: 1,
            init_channels: 8,
            num_classes: 10,
            image_hw: 16,
            in_channels: 3,
        }
    }

    /// The benchmark's own skeleton (3 x 5 cells, 16/32/64 channels).
    pub fn benchmark() -> Self {
        Self {
            stages: 3,
            cells_per_stage: 5,
            init_channels: 16,
            num_classes: 10,
            image_hw: 32,
            in_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.stages,
            self.cells_per_stage,
            self.init_channels,
            self.num_classes,
            self.image_hw,
            self.in_channels,
        ];
        if fields.contains(&0) {
            return Err(Error::Config(format!("macro fields must be positive: {self:?}")));
        }
        if self.image_hw >> (self.stages - 1) == 0 {
            return Err(Error::Config(format!(
                "image of {} pixels cannot be downsampled {} times",
                self.image_hw,
                self.stages - 1
            )));
        }
        Ok(())
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.init_channels << stage
    }
}

fn relu_conv_bn<T: Scalar>(
    b: &mut NetworkBuilder<'_, T>,
    x: usize,
    cout: usize,
    k: usize,
    stride: usize,
    label: &str,
) -> usize {
    let r = b.relu(x, label);
    let c = b.conv(r, cout, k, stride, k / 2, label);
    b.batchnorm(c, label)
}

fn build_cell<T: Scalar>(b: &mut NetworkBuilder<'_, T>, input: usize, spec: &CellSpec, label: &str) -> usize {
    let layout = b.layout(input);
    let Layout::Spatial { c, .. } = layout else { unreachable!() };
    let mut nodes = vec![input];
    for to in 1..4 {
        let mut terms = Vec::new();
        for from in 0..to {
            let src = nodes[from];
            let edge = format!("{label}.e{from}{to}");
            match spec.op(from, to) {
                OpKind::Zeroize => {}
                OpKind::SkipConnection => terms.push(src),
                OpKind::Conv1x1 => terms.push(relu_conv_bn(b, src, c, 1, 1, &edge)),
                OpKind::Conv3x3 => terms.push(relu_conv_bn(b, src, c, 3, 1, &edge)),
                OpKind::AvgPool3x3 => terms.push(b.avgpool3x3(src, &edge)),
            }
        }
        let node = if terms.is_empty() {
            b.zero(layout, &format!("{label}.n{to}"))
        } else {
            b.add(terms, &format!("{label}.n{to}"))
        };
        nodes.push(node);
    }
    nodes[3]
}

fn build_downsample<T: Scalar>(b: &mut NetworkBuilder<'_, T>, x: usize, cout: usize, label: &str) -> usize {
    let a = relu_conv_bn(b, x, cout, 3, 2, &format!("{label}.a"));
    let main = relu_conv_bn(b, a, cout, 3, 1, &format!("{label}.b"));
    let short = b.conv(x, cout, 1, 2, 0, &format!("{label}.shortcut"));
    b.add(vec![main, short], label)
}

/// Instantiates `spec` in `macro_cfg`. Initialization is drawn from the
/// named stream `("init", arch id)` under `seed`.
pub fn build_network<T: Scalar>(spec: &CellSpec, macro_cfg: &MacroConfig, seed: u64) -> Result<Network<T>> {
    macro_cfg.validate()?;
    let mut rng = rng::stream(seed, "init", u64::from(spec.encode().get()));
    let hw = macro_cfg.image_hw;
    let mut b = NetworkBuilder::<T>::new(
        Layout::Spatial {
            c: macro_cfg.in_channels,
            h: hw,
            w: hw,
        },
        &mut rng,
    );
    b.begin_block(BlockKind::Stem, "stem");
    let stem = b.conv(b.input(), macro_cfg.init_channels, 3, 1, 1, "stem");
    let mut x = b.batchnorm(stem, "stem");
    for stage in 0..macro_cfg.stages {
        if stage > 0 {
            let label = format!("s{stage}.down");
            b.begin_block(BlockKind::Downsample { stage }, label.clone());
            x = build_downsample(&mut b, x, macro_cfg.channels(stage), &label);
        }
        for index in 0..macro_cfg.cells_per_stage {
            let label = format!("s{stage}.c{index}");
            b.begin_block(BlockKind::Cell { stage, index }, label.clone());
            x = build_cell(&mut b, x, spec, &label);
        }
    }
    b.begin_block(BlockKind::Head, "head");
    let bn = b.batchnorm(x, "head");
    let act = b.relu(bn, "head");
    let pooled = b.global_avg_pool(act, "head");
    let logits = b.linear(pooled, macro_cfg.num_classes, "head");
    Ok(b.finish(logits))
}

/// Block indices of cells and downsampling blocks, input to output. These
/// are the units a freeze boundary counts.
pub fn body_units<T: Scalar>(net: &Network<T>) -> Vec<usize> {
    net.blocks()
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b.kind, BlockKind::Cell { .. } | BlockKind::Downsample { .. }))
        .map(|(i, _)| i)
        .collect()
}

fn prefix_blocks<T: Scalar>(net: &Network<T>, boundary: usize) -> Vec<usize> {
    let units = body_units(net);
    net.blocks()
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BlockKind::Stem)
        .map(|(i, _)| i)
        .chain(units.into_iter().take(boundary))
        .collect()
}

/// Fraction of all parameters held by the stem and the first `boundary`
/// body units.
pub fn param_fraction_up_to<T: Scalar>(net: &Network<T>, boundary: usize) -> Result<f64> {
    let units = body_units(net).len();
    if boundary > units {
        return Err(Error::Domain(format!("boundary {boundary} beyond {units} body units")));
    }
    let count: usize = prefix_blocks(net, boundary)
        .into_iter()
        .flat_map(|b| net.blocks()[b].params.iter())
        .map(|&p| net.params()[p].len())
        .sum();
    Ok(count as f64 / net.num_params() as f64)
}

/// Smallest boundary whose prefix covers at least `target` of the
/// parameters; all body units when none does.
pub fn boundary_for_fraction<T: Scalar>(net: &Network<T>, target: f64) -> usize {
    let units = body_units(net).len();
    (0..=units)
        .find(|&b| param_fraction_up_to(net, b).map_or(false, |f| f >= target))
        .unwrap_or(units)
}

/// Freezes the stem and the first `boundary` body units, including their
/// batch-norm running statistics.
pub fn freeze_prefix<T: Scalar>(net: &mut Network<T>, boundary: usize) {
    let blocks = prefix_blocks(net, boundary);
    net.freeze_blocks(blocks);
}

/// Deterministic cost of one forward+backward+update step on `batch` samples.
pub fn cost_units<T: Scalar>(net: &Network<T>, batch: usize) -> u64 {
    net.step_cost(batch)
}
