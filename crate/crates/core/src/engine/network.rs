//! Executable layer graphs.
//!
//! A [`Network`] is a list of nodes in topological order. Parameters are
//! registered in the same order, so a prefix of the node list owns a prefix of
//! the parameter list and "freeze everything before block b" is well defined.

use super::loss::{argmax, softmax_cross_entropy};
use super::ops::{self, ConvGeom};
use super::{ParamGroup, ParamKind, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Per-sample activation layout of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Spatial { c: usize, h: usize, w: usize },
    Flat { f: usize },
}

impl Layout {
    pub fn per_sample(&self) -> usize {
        match *self {
            Layout::Spatial { c, h, w } => c * h * w,
            Layout::Flat { f } => f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Input,
    Zero,
    Conv2d { weight: usize, k: usize, stride: usize, pad: usize },
    BatchNorm2d { gamma: usize, beta: usize, stats: usize },
    Relu,
    AvgPool3x3,
    GlobalAvgPool,
    Linear { weight: usize, bias: usize },
    Add,
}

impl Layer {
    fn params(&self) -> Vec<usize> {
        match *self {
            Layer::Conv2d { weight, .. } => vec![weight],
            Layer::BatchNorm2d { gamma, beta, .. } => vec![gamma, beta],
            Layer::Linear { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub layer: Layer,
    pub inputs: Vec<usize>,
    pub layout: Layout,
    pub block: usize,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum BlockKind {
    Stem,
    Cell { stage: usize, index: usize },
    Downsample { stage: usize },
    Head,
    Body,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub kind: BlockKind,
    pub label: String,
    pub params: Vec<usize>,
    pub bn: Vec<usize>,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics.
    Train,
    /// Running statistics.
    Eval,
    /// Pass-through (gamma=1, beta=0, mean=0, var=1).
    Identity,
}

enum Aux<T> {
    None,
    Cols(Vec<T>),
    Bn { xhat: Vec<T>, inv_std: Vec<T> },
}

/// Activations and caches of one forward pass.
pub struct Pass<T> {
    acts: Vec<Vec<T>>,
    aux: Vec<Aux<T>>,
    batch: usize,
    mode: BnMode,
}

impl<T: Scalar> Pass<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Output of node `id` in the engine's internal layout.
    pub fn activation(&self, id: usize) -> &[T] {
        &self.acts[id]
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradRequest {
    /// Also return the gradient with respect to the input batch.
    pub input: bool,
    /// Return output gradients of these nodes (internal layout).
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Grads<T> {
    /// Sample-major, same layout as the batch passed to `forward`.
    pub input: Option<Vec<T>>,
    pub nodes: Vec<(usize, Vec<T>)>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    nodes: Vec<Node>,
    params: Vec<ParamGroup<T>>,
    bn: Vec<BnStats<T>>,
    blocks: Vec<Block>,
    num_classes: usize,
    output: usize,
    bn_momentum: f64,
}

impl<T: Scalar> Network<T> {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[ParamGroup<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamGroup<T>] {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[BnStats<T>] {
        &self.bn
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_layout(&self) -> Layout {
        self.nodes[0].layout
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(ParamGroup::len).sum()
    }

    pub fn num_trainable_params(&self) -> usize {
        self.params.iter().filter(|p| !p.frozen).map(ParamGroup::len).sum()
    }

    /// Freeze or unfreeze every parameter group and batch-norm layer.
    pub fn set_all_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
            if frozen {
                p.tensor.clear_grad();
            }
        }
        for s in &mut self.bn {
            s.frozen = frozen;
        }
    }

    /// Freeze the parameters and running statistics of every block in `blocks`.
    pub fn freeze_blocks(&mut self, blocks: impl IntoIterator<Item = usize>) {
        for b in blocks {
            let block = &self.blocks[b];
            for &p in &block.params {
                self.params[p].frozen = true;
                self.params[p].tensor.clear_grad();
            }
            for &s in &block.bn {
                self.bn[s].frozen = true;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if p.frozen {
                p.tensor.clear_grad();
            } else {
                p.tensor.grad_mut().iter_mut().for_each(|g| *g = T::zero());
            }
        }
    }

    /// `input` is sample-major (`[N][C][H][W]` or `[N][F]`).
    pub fn forward(&mut self, input: &[T], batch: usize, mode: BnMode, update_stats: bool) -> Result<Pass<T>> {
        let in_layout = self.nodes[0].layout;
        if batch == 0 || input.len() != batch * in_layout.per_sample() {
            return Err(Error::Shape(format!(
                "input of {} values does not hold {batch} samples of {in_layout:?}",
                input.len()
            )));
        }
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.nodes.len());
        let mut aux: Vec<Aux<T>> = Vec::with_capacity(self.nodes.len());
        let momentum = T::from_f64_lossy(self.bn_momentum);
        for node in &self.nodes {
            let n = batch;
            let (out, a) = match node.layer {
                Layer::Input => match node.layout {
                    Layout::Spatial { c, h, w } => (ops::swap_leading(input, n, c, h * w), Aux::None),
                    Layout::Flat { .. } => (input.to_vec(), Aux::None),
                },
                Layer::Zero => (vec![T::zero(); n * node.layout.per_sample()], Aux::None),
                Layer::Conv2d { weight, k, stride, pad } => {
                    let g = self.geom(node, n, k, stride, pad);
                    let (y, cols) = ops::conv_forward(&acts[node.inputs[0]], self.params[weight].tensor.values(), &g);
                    (y, cols.map_or(Aux::None, Aux::Cols))
                }
                Layer::BatchNorm2d { gamma, beta, stats } => {
                    let Layout::Spatial { c, h, w } = node.layout else {
                        unreachable!("batch norm on flat layout")
                    };
                    let x = &acts[node.inputs[0]];
                    let per = n * h * w;
                    match mode {
                        BnMode::Train => {
                            if n < 2 {
                                return Err(Error::Shape(format!(
                                    "{}: training-mode batch norm needs a batch of at least 2",
                                    node.label
                                )));
                            }
                            let b = ops::bn_train_forward(
                                x,
                                c,
                                per,
                                self.params[gamma].tensor.values(),
                                self.params[beta].tensor.values(),
                            );
                            let st = &mut self.bn[stats];
                            if update_stats && !st.frozen {
                                let unbias = T::from_f64_lossy(per as f64 / (per as f64 - 1.0));
                                for ch in 0..c {
                                    st.mean[ch] = (T::one() - momentum) * st.mean[ch] + momentum * b.mean[ch];
                                    st.var[ch] = (T::one() - momentum) * st.var[ch] + momentum * b.var[ch] * unbias;
                                }
                            }
                            (b.y, Aux::Bn { xhat: b.xhat, inv_std: b.inv_std })
                        }
                        BnMode::Eval => {
                            let st = &self.bn[stats];
                            let (y, xhat) = ops::bn_fixed_forward(
                                x,
                                per,
                                self.params[gamma].tensor.values(),
                                self.params[beta].tensor.values(),
                                &st.mean,
                                &st.var,
                            );
                            (y, Aux::Bn { xhat, inv_std: Vec::new() })
                        }
                        BnMode::Identity => (x.clone(), Aux::None),
                    }
                }
                Layer::Relu => (
                    acts[node.inputs[0]].iter().map(|&v| v.max(T::zero())).collect(),
                    Aux::None,
                ),
                Layer::AvgPool3x3 => {
                    let Layout::Spatial { c, h, w } = node.layout else {
                        unreachable!("pool on flat layout")
                    };
                    (ops::avgpool3_forward(&acts[node.inputs[0]], c * n, h, w), Aux::None)
                }
                Layer::GlobalAvgPool => {
                    let Layout::Spatial { c, h, w } = self.nodes[node.inputs[0]].layout else {
                        unreachable!("global pool on flat layout")
                    };
                    (ops::gap_forward(&acts[node.inputs[0]], c, n, h * w), Aux::None)
                }
                Layer::Linear { weight, bias } => {
                    let f = self.nodes[node.inputs[0]].layout.per_sample();
                    let o = node.layout.per_sample();
                    (
                        ops::linear_forward(
                            &acts[node.inputs[0]],
                            self.params[weight].tensor.values(),
                            self.params[bias].tensor.values(),
                            n,
                            f,
                            o,
                        ),
                        Aux::None,
                    )
                }
                Layer::Add => {
                    let mut y = acts[node.inputs[0]].clone();
                    for &i in &node.inputs[1..] {
                        for (d, &s) in y.iter_mut().zip(&acts[i]) {
                            *d += s;
                        }
                    }
                    (y, Aux::None)
                }
            };
            acts.push(out);
            aux.push(a);
        }
        let pass = Pass { acts, aux, batch, mode };
        if !pass.acts[self.output].iter().all(|v| v.is_finite()) {
            let culprit = pass
                .acts
                .iter()
                .position(|a| !a.iter().all(|v| v.is_finite()))
                .unwrap_or(self.output);
            return Err(Error::Numeric {
                location: self.nodes[culprit].label.clone(),
            });
        }
        Ok(pass)
    }

    /// Logits of a pass, `[N][classes]`.
    pub fn logits<'p>(&self, pass: &'p Pass<T>) -> &'p [T] {
        &pass.acts[self.output]
    }

    fn geom(&self, node: &Node, n: usize, k: usize, stride: usize, pad: usize) -> ConvGeom {
        let Layout::Spatial { c: cin, h, w } = self.nodes[node.inputs[0]].layout else {
            unreachable!("conv on flat layout")
        };
        let Layout::Spatial { c: cout, .. } = node.layout else {
            unreachable!("conv on flat layout")
        };
        ConvGeom { cin, cout, k, stride, pad, n, h, w }
    }

    /// Which node outputs need a gradient: anything downstream of a trainable
    /// parameter, a requested node, or (if requested) the input.
    fn requires_grad(&self, req: &GradRequest) -> Vec<bool> {
        let mut rg = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let source = (i == 0 && req.input)
                || req.nodes.contains(&i)
                || node.layer.params().iter().any(|&p| !self.params[p].frozen);
            rg[i] = source || node.inputs.iter().any(|&j| rg[j]);
        }
        rg
    }

    /// Backpropagates `dlogits` through the pass, accumulating into the
    /// gradients of non-frozen parameters. Frozen parameters, and every node
    /// that only depends on frozen parameters, are skipped entirely.
    pub fn backward(&mut self, pass: &Pass<T>, dlogits: &[T], req: &GradRequest) -> Result<Grads<T>> {
        let n = pass.batch;
        if dlogits.len() != pass.acts[self.output].len() {
            return Err(Error::Shape("logit gradient does not match logits".into()));
        }
        let rg = self.requires_grad(req);
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(dlogits.to_vec());
        let mut out = Grads::default();

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            if req.nodes.contains(&i) {
                out.nodes.push((i, g.clone()));
            }
            let node = &self.nodes[i];
            match node.layer {
                Layer::Input => {
                    if req.input {
                        out.input = Some(match node.layout {
                            Layout::Spatial { c, h, w } => ops::swap_leading(&g, c, n, h * w),
                            Layout::Flat { .. } => g,
                        });
                    }
                }
                Layer::Zero => {}
                Layer::Conv2d { weight, k, stride, pad } => {
                    let geom = self.geom(node, n, k, stride, pad);
                    let x = node.inputs[0];
                    let cols: &[T] = match &pass.aux[i] {
                        Aux::Cols(c) => c,
                        _ => &pass.acts[x],
                    };
                    let mut dw = take_grad(&mut self.params[weight]);
                    let dx = rg[x].then(|| slot(&mut grads, x, pass.acts[x].len()));
                    ops::conv_backward(&g, cols, self.params[weight].tensor.values(), &geom, dw.as_deref_mut(), dx);
                    put_grad(&mut self.params[weight], dw);
                }
                Layer::BatchNorm2d { gamma, beta, stats } => {
                    let Layout::Spatial { h, w, .. } = node.layout else { unreachable!() };
                    let per = n * h * w;
                    let x = node.inputs[0];
                    let mut dg = take_grad(&mut self.params[gamma]);
                    let mut db = take_grad(&mut self.params[beta]);
                    let dx = rg[x].then(|| slot(&mut grads, x, pass.acts[x].len()));
                    match (&pass.aux[i], pass.mode) {
                        (Aux::Bn { xhat, inv_std }, BnMode::Train) => ops::bn_train_backward(
                            &g,
                            xhat,
                            inv_std,
                            self.params[gamma].tensor.values(),
                            per,
                            dg.as_deref_mut(),
                            db.as_deref_mut(),
                            dx,
                        ),
                        (Aux::Bn { xhat, .. }, BnMode::Eval) => ops::bn_fixed_backward(
                            &g,
                            xhat,
                            per,
                            self.params[gamma].tensor.values(),
                            &self.bn[stats].var,
                            dg.as_deref_mut(),
                            db.as_deref_mut(),
                            dx,
                        ),
                        _ => {
                            if let Some(dx) = dx {
                                add_into(dx, &g);
                            }
                        }
                    }
                    put_grad(&mut self.params[gamma], dg);
                    put_grad(&mut self.params[beta], db);
                }
                Layer::Relu => {
                    let x = node.inputs[0];
                    if rg[x] {
                        let y = &pass.acts[i];
                        let dx = slot(&mut grads, x, y.len());
                        for ((d, &gv), &yv) in dx.iter_mut().zip(&g).zip(y) {
                            if yv > T::zero() {
                                *d += gv;
                            }
                        }
                    }
                }
                Layer::AvgPool3x3 => {
                    let x = node.inputs[0];
                    if rg[x] {
                        let Layout::Spatial { c, h, w } = node.layout else { unreachable!() };
                        let dx = slot(&mut grads, x, g.len());
                        ops::avgpool3_backward(&g, c * n, h, w, dx);
                    }
                }
                Layer::GlobalAvgPool => {
                    let x = node.inputs[0];
                    if rg[x] {
                        let Layout::Spatial { c, h, w } = self.nodes[x].layout else { unreachable!() };
                        let dx = slot(&mut grads, x, pass.acts[x].len());
                        ops::gap_backward(&g, c, n, h * w, dx);
                    }
                }
                Layer::Linear { weight, bias } => {
                    let x = node.inputs[0];
                    let f = self.nodes[x].layout.per_sample();
                    let o = node.layout.per_sample();
                    let mut dw = take_grad(&mut self.params[weight]);
                    let mut db = take_grad(&mut self.params[bias]);
                    let dx = rg[x].then(|| slot(&mut grads, x, pass.acts[x].len()));
                    ops::linear_backward(
                        &g,
                        &pass.acts[x],
                        self.params[weight].tensor.values(),
                        n,
                        f,
                        o,
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                        dx,
                    );
                    put_grad(&mut self.params[weight], dw);
                    put_grad(&mut self.params[bias], db);
                }
                Layer::Add => {
                    for &x in &node.inputs {
                        if rg[x] {
                            add_into(slot(&mut grads, x, g.len()), &g);
                        }
                    }
                }
            }
        }
        for p in &self.params {
            if let Some(g) = p.tensor.grad() {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric {
                        location: "parameter gradient".into(),
                    });
                }
            }
        }
        Ok(out)
    }

    /// One training-mode forward/backward on a batch. Populates gradients of
    /// every non-frozen parameter group and returns `(mean loss, accuracy)`.
    pub fn loss_and_backward(&mut self, images: &[T], labels: &[usize]) -> Result<(f64, f64)> {
        self.check_labels(labels)?;
        self.zero_grad();
        let pass = self.forward(images, labels.len(), BnMode::Train, true)?;
        let ce = softmax_cross_entropy(self.logits(&pass), labels, self.num_classes);
        if !ce.loss.is_finite() {
            return Err(Error::Numeric {
                location: self.nodes[self.output].label.clone(),
            });
        }
        if self.params.iter().any(|p| !p.frozen) {
            self.backward(&pass, &ce.grad, &GradRequest::default())?;
        }
        Ok((ce.loss, ce.correct as f64 / labels.len() as f64))
    }

    /// Evaluation-mode loss without touching gradients or statistics.
    pub fn evaluate(&mut self, images: &[T], labels: &[usize]) -> Result<(f64, usize)> {
        self.check_labels(labels)?;
        let pass = self.forward(images, labels.len(), BnMode::Eval, false)?;
        let ce = softmax_cross_entropy(self.logits(&pass), labels, self.num_classes);
        Ok((ce.loss, ce.correct))
    }

    /// Predicted classes in evaluation mode.
    pub fn predict(&mut self, images: &[T], batch: usize) -> Result<Vec<usize>> {
        let pass = self.forward(images, batch, BnMode::Eval, false)?;
        Ok(self
            .logits(&pass)
            .chunks(self.num_classes)
            .map(|row| argmax(row).0)
            .collect())
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Domain(format!(
                "label {bad} outside [0, {})",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Forward multiply-accumulates per sample of each node. Only layers with
    /// parameters are counted.
    pub fn node_macs(&self) -> Vec<u64> {
        self.nodes
            .iter()
            .map(|node| match node.layer {
                Layer::Conv2d { k, .. } => {
                    let Layout::Spatial { c: cin, .. } = self.nodes[node.inputs[0]].layout else { unreachable!() };
                    let Layout::Spatial { c: cout, h, w } = node.layout else { unreachable!() };
                    (k * k * cin * cout * h * w) as u64
                }
                Layer::BatchNorm2d { .. } => 2 * node.layout.per_sample() as u64,
                Layer::Linear { .. } => {
                    (self.nodes[node.inputs[0]].layout.per_sample() * node.layout.per_sample()) as u64
                }
                _ => 0,
            })
            .collect()
    }

    /// Deterministic cost of one optimizer step on `batch` samples:
    /// forward MACs, plus one forward-equivalent for the weight gradient of
    /// every trainable layer and one for every input gradient that actually
    /// has to be propagated, plus three operations per trainable parameter for
    /// the update itself. Frozen prefixes therefore cost forward only.
    pub fn step_cost(&self, batch: usize) -> u64 {
        let macs = self.node_macs();
        let rg = self.requires_grad(&GradRequest::default());
        let mut per_sample = 0u64;
        for (i, node) in self.nodes.iter().enumerate() {
            let fwd = macs[i];
            per_sample += fwd;
            if fwd == 0 || !rg[i] {
                continue;
            }
            if node.layer.params().iter().any(|&p| !self.params[p].frozen) {
                per_sample += fwd;
            }
            if node.inputs.iter().any(|&x| rg[x]) {
                per_sample += fwd;
            }
        }
        per_sample * batch as u64 + 3 * self.num_trainable_params() as u64
    }

    /// Cost of an inference-only pass over `samples` samples.
    pub fn forward_cost(&self, samples: usize) -> u64 {
        self.node_macs().iter().sum::<u64>() * samples as u64
    }

    /// Node ids of ReLU outputs, the post-activation feature maps.
    pub fn relu_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.layer == Layer::Relu)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn node_layout(&self, id: usize) -> Layout {
        self.nodes[id].layout
    }

    /// Flattened copy of all parameter values, in registration order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.tensor.values().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        for p in &mut self.params {
            let len = p.len();
            p.tensor.values_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
    }

    /// Flattened copy of all parameter gradients; zero where absent.
    pub fn flat_grads(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| match p.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.len()],
            })
            .collect()
    }

    /// Converts the network to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect::<Vec<U>>();
        Network {
            nodes: self.nodes.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    let mut g = ParamGroup::new(
                        Tensor::new(p.tensor.shape().to_vec(), conv(p.tensor.values())).expect("same shape"),
                        p.kind,
                    );
                    g.frozen = p.frozen;
                    g.momentum_buffer = conv(&p.momentum_buffer);
                    g
                })
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|s| BnStats {
                    mean: conv(&s.mean),
                    var: conv(&s.var),
                    frozen: s.frozen,
                })
                .collect(),
            blocks: self.blocks.clone(),
            num_classes: self.num_classes,
            output: self.output,
            bn_momentum: self.bn_momentum,
        }
    }
}

fn take_grad<T: Scalar>(p: &mut ParamGroup<T>) -> Option<Vec<T>> {
    if p.frozen {
        None
    } else {
        Some(std::mem::take(p.tensor.grad_mut()))
    }
}

fn put_grad<T: Scalar>(p: &mut ParamGroup<T>, g: Option<Vec<T>>) {
    if let Some(g) = g {
        *p.tensor.grad_mut() = g;
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut [T] {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Incremental graph construction with Kaiming-normal initialization.
pub struct NetworkBuilder<'r, T> {
    nodes: Vec<Node>,
    params: Vec<ParamGroup<T>>,
    bn: Vec<BnStats<T>>,
    blocks: Vec<Block>,
    rng: &'r mut Rng,
}

impl<'r, T: Scalar> NetworkBuilder<'r, T> {
    /// Starts a graph whose node 0 is the input.
    pub fn new(input: Layout, rng: &'r mut Rng) -> Self {
        let mut b = Self {
            nodes: Vec::new(),
            params: Vec::new(),
            bn: Vec::new(),
            blocks: Vec::new(),
            rng,
        };
        b.begin_block(BlockKind::Body, "input");
        b.push(Layer::Input, vec![], input, "input".into());
        b
    }

    pub fn input(&self) -> usize {
        0
    }

    pub fn layout(&self, id: usize) -> Layout {
        self.nodes[id].layout
    }

    /// Subsequent nodes and parameters belong to a new block.
    pub fn begin_block(&mut self, kind: BlockKind, label: impl Into<String>) {
        self.blocks.push(Block {
            kind,
            label: label.into(),
            params: Vec::new(),
            bn: Vec::new(),
        });
    }

    fn push(&mut self, layer: Layer, inputs: Vec<usize>, layout: Layout, label: String) -> usize {
        self.nodes.push(Node {
            layer,
            inputs,
            layout,
            block: self.blocks.len() - 1,
            label,
        });
        self.nodes.len() - 1
    }

    fn param(&mut self, shape: Vec<usize>, kind: ParamKind, init: impl Fn(&mut Rng) -> f64) -> usize {
        let len: usize = shape.iter().product();
        let values = (0..len).map(|_| T::from_f64_lossy(init(self.rng))).collect();
        self.params
            .push(ParamGroup::new(Tensor::new(shape, values).expect("positive shape"), kind));
        let id = self.params.len() - 1;
        self.blocks.last_mut().expect("block").params.push(id);
        id
    }

    fn spatial(&self, x: usize) -> (usize, usize, usize) {
        match self.nodes[x].layout {
            Layout::Spatial { c, h, w } => (c, h, w),
            Layout::Flat { .. } => panic!("{} is not spatial", self.nodes[x].label),
        }
    }

    pub fn conv(&mut self, x: usize, cout: usize, k: usize, stride: usize, pad: usize, label: &str) -> usize {
        let (cin, h, w) = self.spatial(x);
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let weight = self.param(vec![cout, cin, k, k], ParamKind::ConvWeight, |r| {
            std * Distribution::<f64>::sample(&StandardNormal, r)
        });
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        self.push(
            Layer::Conv2d { weight, k, stride, pad },
            vec![x],
            Layout::Spatial { c: cout, h: ho, w: wo },
            format!("{label}.conv{k}x{k}"),
        )
    }

    pub fn batchnorm(&mut self, x: usize, label: &str) -> usize {
        let (c, _, _) = self.spatial(x);
        let gamma = self.param(vec![c], ParamKind::BnGamma, |_| 1.0);
        let beta = self.param(vec![c], ParamKind::BnBeta, |_| 0.0);
        self.bn.push(BnStats {
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
            frozen: false,
        });
        let stats = self.bn.len() - 1;
        self.blocks.last_mut().expect("block").bn.push(stats);
        let layout = self.nodes[x].layout;
        self.push(Layer::BatchNorm2d { gamma, beta, stats }, vec![x], layout, format!("{label}.bn"))
    }

    pub fn relu(&mut self, x: usize, label: &str) -> usize {
        let layout = self.nodes[x].layout;
        self.push(Layer::Relu, vec![x], layout, format!("{label}.relu"))
    }

    pub fn avgpool3x3(&mut self, x: usize, label: &str) -> usize {
        self.spatial(x);
        let layout = self.nodes[x].layout;
        self.push(Layer::AvgPool3x3, vec![x], layout, format!("{label}.avgpool3x3"))
    }

    pub fn global_avg_pool(&mut self, x: usize, label: &str) -> usize {
        let (c, _, _) = self.spatial(x);
        self.push(Layer::GlobalAvgPool, vec![x], Layout::Flat { f: c }, format!("{label}.gap"))
    }

    pub fn linear(&mut self, x: usize, out: usize, label: &str) -> usize {
        let f = self.nodes[x].layout.per_sample();
        let std = (2.0 / f as f64).sqrt();
        let weight = self.param(vec![out, f], ParamKind::LinearWeight, |r| {
            std * Distribution::<f64>::sample(&StandardNormal, r)
        });
        let bias = self.param(vec![out], ParamKind::LinearBias, |_| 0.0);
        self.push(
            Layer::Linear { weight, bias },
            vec![x],
            Layout::Flat { f: out },
            format!("{label}.linear"),
        )
    }

    pub fn zero(&mut self, layout: Layout, label: &str) -> usize {
        self.push(Layer::Zero, vec![], layout, format!("{label}.zero"))
    }

    pub fn add(&mut self, inputs: Vec<usize>, label: &str) -> usize {
        assert!(!inputs.is_empty(), "add needs at least one input");
        let layout = self.nodes[inputs[0]].layout;
        assert!(
            inputs.iter().all(|&i| self.nodes[i].layout == layout),
            "add over mismatched layouts"
        );
        if inputs.len() == 1 {
            return inputs[0];
        }
        self.push(Layer::Add, inputs, layout, format!("{label}.add"))
    }

    /// Finishes the graph; `output` must be a flat node.
    pub fn finish(self, output: usize) -> Network<T> {
        let Layout::Flat { f: num_classes } = self.nodes[output].layout else {
            panic!("network output must be flat");
        };
        Network {
            nodes: self.nodes,
            params: self.params,
            bn: self.bn,
            blocks: self.blocks,
            num_classes,
            output,
            bn_momentum: 0.1,
        }
    }
}
