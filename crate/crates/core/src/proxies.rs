//! Zero-cost proxy scores computed from a single minibatch without training.

use crate::engine::{softmax_cross_entropy, BnMode, GradRequest, Layout, Network, Scalar};
use crate::error::{Error, Result};
use crate::space::ArchId;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyKind {
    GradNorm,
    Snip,
    Grasp,
    Fisher,
    Synflow,
    SynflowBn,
    JacobCov,
}

impl ProxyKind {
    pub const ALL: [ProxyKind; 7] = [
        ProxyKind::GradNorm,
        ProxyKind::Snip,
        ProxyKind::Grasp,
        ProxyKind::Fisher,
        ProxyKind::Synflow,
        ProxyKind::SynflowBn,
        ProxyKind::JacobCov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProxyKind::GradNorm => "grad_norm",
            ProxyKind::Snip => "snip",
            ProxyKind::Grasp => "grasp",
            ProxyKind::Fisher => "fisher",
            ProxyKind::Synflow => "synflow",
            ProxyKind::SynflowBn => "synflow_bn",
            ProxyKind::JacobCov => "jacob_cov",
        }
    }
}

impl fmt::Display for ProxyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProxyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProxyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown proxy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyScore {
    pub score: f64,
    pub cost_units: u64,
}

pub const JACOB_COV_EPS: f64 = 1e-5;

fn convert<T: Scalar>(x: &[f32]) -> Vec<T> {
    x.iter().map(|&v| T::from_f64_lossy(f64::from(v))).collect()
}

fn weight_ids<T: Scalar>(net: &Network<T>) -> Vec<usize> {
    (0..net.params().len()).filter(|&p| net.params()[p].kind.is_weight()).collect()
}

/// Training-mode forward, softmax cross-entropy and backward without
/// touching running statistics; leaves gradients in the parameter groups.
fn loss_backward<T: Scalar>(net: &mut Network<T>, x: &[T], y: &[usize], req: &GradRequest) -> Result<crate::engine::Grads<T>> {
    net.zero_grad();
    let pass = net.forward(x, y.len(), BnMode::Train, false)?;
    let ce = softmax_cross_entropy(net.logits(&pass), y, net.num_classes());
    net.backward(&pass, &ce.grad, req)
}

fn weight_grads<T: Scalar>(net: &mut Network<T>, x: &[T], y: &[usize]) -> Result<Vec<Vec<f64>>> {
    loss_backward(net, x, y, &GradRequest::default())?;
    Ok(weight_ids(net)
        .into_iter()
        .map(|p| {
            let g = net.params()[p].tensor.grad();
            match g {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; net.params()[p].len()],
            }
        })
        .collect())
}

fn weight_values<T: Scalar>(net: &Network<T>) -> Vec<Vec<f64>> {
    weight_ids(net)
        .into_iter()
        .map(|p| net.params()[p].tensor.values().iter().map(|v| v.as_f64()).collect())
        .collect()
}

/// Per-weight-tensor contributions for the saliency proxies, in parameter
/// order. `jacob_cov` and `fisher` are not tensor sums and are rejected.
pub fn saliency_per_tensor<T: Scalar>(kind: ProxyKind, net: &Network<T>, x: &[f32], y: &[usize]) -> Result<Vec<f64>> {
    match kind {
        ProxyKind::GradNorm | ProxyKind::Snip => {
            let mut n = net.clone();
            n.set_all_frozen(false);
            let g = weight_grads(&mut n, &convert::<T>(x), y)?;
            let w = weight_values(&n);
            Ok(g.iter()
                .zip(&w)
                .map(|(g, w)| match kind {
                    ProxyKind::GradNorm => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    _ => g.iter().zip(w).map(|(g, w)| (g * w).abs()).sum(),
                })
                .collect())
        }
        ProxyKind::Grasp => grasp_per_tensor(net, x, y),
        ProxyKind::Synflow | ProxyKind::SynflowBn => synflow_per_tensor(net, kind == ProxyKind::SynflowBn),
        ProxyKind::Fisher | ProxyKind::JacobCov => {
            Err(Error::Domain(format!("{kind} is not a per-weight saliency")))
        }
    }
}

/// `-(H g) . theta` per weight tensor, with `H g` from central differences
/// of the gradient along the unit direction of `g`.
fn grasp_per_tensor<T: Scalar>(net: &Network<T>, x: &[f32], y: &[usize]) -> Result<Vec<f64>> {
    let mut n: Network<f64> = net.cast();
    n.set_all_frozen(false);
    let xs = convert::<f64>(x);
    let ids = weight_ids(&n);
    let theta = weight_values(&n);
    let g = weight_grads(&mut n, &xs, y)?;
    let gnorm = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if gnorm == 0.0 {
        return Ok(vec![0.0; ids.len()]);
    }
    let inf = theta.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-3 * (1.0 + inf);
    let mut shifted = |sign: f64| -> Result<Vec<Vec<f64>>> {
        for ((&p, t), gv) in ids.iter().zip(&theta).zip(&g) {
            let vals = n.params_mut()[p].tensor.values_mut();
            for ((v, &t), &gv) in vals.iter_mut().zip(t).zip(gv) {
                *v = t + sign * h * gv / gnorm;
            }
        }
        weight_grads(&mut n, &xs, y)
    };
    let plus = shifted(1.0)?;
    let minus = shifted(-1.0)?;
    Ok(theta
        .iter()
        .zip(plus.iter().zip(&minus))
        .map(|(t, (gp, gm))| {
            -t.iter()
                .zip(gp.iter().zip(gm))
                .map(|(t, (a, b))| gnorm * (a - b) / (2.0 * h) * t)
                .sum::<f64>()
        })
        .collect())
}

/// `|theta| . dR/d|theta|` per weight tensor for `R` = sum of logits on an
/// all-ones input. Batchnorm is the identity, or batch-statistics training
/// mode when `bn_train` is set.
fn synflow_per_tensor<T: Scalar>(net: &Network<T>, bn_train: bool) -> Result<Vec<f64>> {
    let mut n: Network<f64> = net.cast();
    n.set_all_frozen(false);
    for p in n.params_mut() {
        for v in p.tensor.values_mut() {
            *v = v.abs();
        }
    }
    let (batch, mode) = if bn_train { (2, BnMode::Train) } else { (1, BnMode::Identity) };
    let x = vec![1.0f64; batch * n.input_layout().per_sample()];
    n.zero_grad();
    let pass = n.forward(&x, batch, mode, false)?;
    let ones = vec![1.0f64; n.logits(&pass).len()];
    n.backward(&pass, &ones, &GradRequest::default())?;
    Ok(weight_ids(&n)
        .into_iter()
        .map(|p| {
            let pg = &n.params()[p];
            match pg.tensor.grad() {
                Some(g) => pg.tensor.values().iter().zip(g).map(|(w, g)| w * g).sum(),
                None => 0.0,
            }
        })
        .collect())
}

/// Sum over post-relu maps of `sum_c mean_n (sum_hw a * dL/da)^2`.
fn fisher<T: Scalar>(net: &Network<T>, x: &[f32], y: &[usize]) -> Result<f64> {
    let mut n = net.clone();
    n.set_all_frozen(false);
    let relus = n.relu_nodes();
    let xs = convert::<T>(x);
    n.zero_grad();
    let pass = n.forward(&xs, y.len(), BnMode::Train, false)?;
    let ce = softmax_cross_entropy(n.logits(&pass), y, n.num_classes());
    let grads = n.backward(
        &pass,
        &ce.grad,
        &GradRequest {
            input: false,
            nodes: relus,
        },
    )?;
    let batch = y.len();
    let mut total = 0.0;
    for (id, g) in &grads.nodes {
        let a = pass.activation(*id);
        let (c, plane) = match n.node_layout(*id) {
            Layout::Spatial { c, h, w } => (c, h * w),
            Layout::Flat { f } => (f, 1),
        };
        for ch in 0..c {
            let mut sq = 0.0;
            for s in 0..batch {
                let (lo, hi) = match n.node_layout(*id) {
                    // Channel-major: [C][N][HW].
                    Layout::Spatial { .. } => ((ch * batch + s) * plane, (ch * batch + s + 1) * plane),
                    // Sample-major: [N][F].
                    Layout::Flat { .. } => (s * c + ch, s * c + ch + 1),
                };
                let v: f64 = a[lo..hi].iter().zip(&g[lo..hi]).map(|(a, g)| a.as_f64() * g.as_f64()).sum();
                sq += v * v;
            }
            total += sq / batch as f64;
        }
    }
    Ok(total)
}

/// Per-sample Jacobians of the summed logits with respect to the input,
/// one flattened row per sample.
pub fn input_jacobians<T: Scalar>(net: &Network<T>, x: &[f32], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut n = net.clone();
    let xs = convert::<T>(x);
    let pass = n.forward(&xs, batch, BnMode::Train, false)?;
    let ones = vec![T::one(); n.logits(&pass).len()];
    let grads = n.backward(
        &pass,
        &ones,
        &GradRequest {
            input: true,
            nodes: vec![],
        },
    )?;
    let d = n.input_layout().per_sample();
    let gin = grads.input.unwrap_or_else(|| vec![T::zero(); batch * d]);
    Ok(gin.chunks(d).map(|row| row.iter().map(|v| v.as_f64()).collect()).collect())
}

/// `-sum_i [ln(l_i + eps) + 1 / (l_i + eps)]` over the eigenvalues of the
/// correlation matrix of `rows`. A zero-variance row correlates only with
/// itself.
pub fn jacob_cov_from_rows(rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Domain("jacob_cov needs at least two inputs".into()));
    }
    let centered: Vec<Option<Vec<f64>>> = rows
        .iter()
        .map(|r| {
            let m = r.iter().sum::<f64>() / r.len() as f64;
            let c: Vec<f64> = r.iter().map(|v| v - m).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm > 0.0).then(|| c.iter().map(|v| v / norm).collect())
        })
        .collect();
    let corr = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 1.0;
        }
        match (&centered[i], &centered[j]) {
            (Some(a), Some(b)) => a.iter().zip(b).map(|(a, b)| a * b).sum(),
            _ => 0.0,
        }
    });
    let eig = SymmetricEigen::new(corr).eigenvalues;
    let score = -eig
        .iter()
        .map(|&l| {
            let l = l.max(0.0) + JACOB_COV_EPS;
            l.ln() + 1.0 / l
        })
        .sum::<f64>();
    Ok(score)
}

/// One proxy on one minibatch. `x` is sample-major with `y.len()` samples.
pub fn compute_proxy<T: Scalar>(kind: ProxyKind, net: &Network<T>, x: &[f32], y: &[usize]) -> Result<ProxyScore> {
    let batch = y.len();
    if batch == 0 || x.len() != batch * net.input_layout().per_sample() {
        return Err(Error::Shape(format!("proxy batch of {} values for {batch} labels", x.len())));
    }
    let step = net.step_cost(batch);
    let (score, cost_units) = match kind {
        ProxyKind::Fisher => (fisher(net, x, y)?, step),
        ProxyKind::JacobCov => (jacob_cov_from_rows(&input_jacobians(net, x, batch)?)?, step + net.forward_cost(batch)),
        ProxyKind::Synflow => (saliency_per_tensor(kind, net, x, y)?.iter().sum(), net.step_cost(1)),
        ProxyKind::SynflowBn => (saliency_per_tensor(kind, net, x, y)?.iter().sum(), net.step_cost(2)),
        ProxyKind::Grasp => (saliency_per_tensor(kind, net, x, y)?.iter().sum(), 3 * step),
        ProxyKind::GradNorm | ProxyKind::Snip => (saliency_per_tensor(kind, net, x, y)?.iter().sum(), step),
    };
    if !score.is_finite() {
        return Err(Error::Numeric {
            location: format!("proxy {kind}"),
        });
    }
    Ok(ProxyScore { score, cost_units })
}

/// Scores of the three voting proxies for one architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteInput {
    pub arch: ArchId,
    pub synflow: f64,
    pub jacob_cov: f64,
    pub snip: f64,
}

/// Pairwise majority over synflow, jacob_cov and snip: an architecture
/// wins a pair when at least two proxies strictly prefer it. Ranked by
/// wins (Copeland score), then synflow, then id. Returns `(arch, wins)`
/// best first.
pub fn vote_ranking(entries: &[VoteInput]) -> Vec<(ArchId, usize)> {
    let prefers = |a: &VoteInput, b: &VoteInput| {
        [a.synflow > b.synflow, a.jacob_cov > b.jacob_cov, a.snip > b.snip]
            .iter()
            .filter(|&&p| p)
            .count()
            >= 2
    };
    let mut ranked: Vec<(usize, usize)> = entries
        .iter()
        .enumerate()
        .map(|(i, a)| (i, entries.iter().filter(|b| prefers(a, b)).count()))
        .collect();
    ranked.sort_by(|&(i, wi), &(j, wj)| {
        wj.cmp(&wi)
            .then_with(|| entries[j].synflow.partial_cmp(&entries[i].synflow).unwrap_or(Ordering::Equal))
            .then_with(|| entries[i].arch.cmp(&entries[j].arch))
    });
    ranked.into_iter().map(|(i, w)| (entries[i].arch, w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{BlockKind, NetworkBuilder};
    use crate::rng;
    use crate::space::{build_network, CellSpec, MacroConfig, OpKind};
    use proptest::prelude::*;

    fn tiny_macro() -> MacroConfig {
        MacroConfig {
            init_channels: 3,
            image_hw: 4,
            stages: 2,
            num_classes: 3,
            ..MacroConfig::desk()
        }
    }

    fn batch(seed: u64, n: usize) -> (Vec<f32>, Vec<usize>) {
        use rand::Rng as _;
        let mut r = rng::stream(seed, "proxy-test", 0);
        let x = (0..n * 48).map(|_| r.random_range(-1.0f32..1.0)).collect();
        let y = (0..n).map(|i| i % 3).collect();
        (x, y)
    }

    fn mlp(sizes: &[usize], seed: u64) -> Network<f64> {
        let mut r = rng::stream(seed, "mlp", 0);
        let mut b = NetworkBuilder::new(Layout::Flat { f: sizes[0] }, &mut r);
        b.begin_block(BlockKind::Head, "mlp");
        let mut x = b.input();
        for (i, &s) in sizes[1..].iter().enumerate() {
            x = b.linear(x, s, &format!("fc{i}"));
            if i + 2 < sizes.len() {
                x = b.relu(x, &format!("fc{i}"));
            }
        }
        b.finish(x)
    }

    #[test]
    fn synflow_single_linear_layer() {
        let mut net = mlp(&[2, 2], 0);
        net.params_mut()[0].tensor.values_mut().copy_from_slice(&[1.0, -2.0, 3.0, 4.0]);
        let s = compute_proxy(ProxyKind::Synflow, &net, &[0.5, 0.5], &[0]).unwrap();
        assert_eq!(s.score, 10.0);
    }

    #[test]
    fn snip_of_a_zero_tensor_is_zero() {
        let mut net: Network<f32> = build_network(&CellSpec::uniform(OpKind::Conv3x3), &tiny_macro(), 1).unwrap();
        let target = weight_ids(&net)[3];
        net.params_mut()[target].tensor.values_mut().fill(0.0);
        let (x, y) = batch(0, 4);
        let per = saliency_per_tensor(ProxyKind::Snip, &net, &x, &y).unwrap();
        assert_eq!(per[3], 0.0);
        assert!(per.iter().sum::<f64>() > 0.0);
    }

    /// `-theta . H g` with `H` and `g` both from finite differences of the
    /// loss alone.
    fn grasp_oracle(net: &Network<f64>, x: &[f64], y: &[usize]) -> f64 {
        let mut n = net.clone();
        let ids = weight_ids(&n);
        let mut flat_ix = Vec::new();
        for &p in &ids {
            for k in 0..n.params()[p].len() {
                flat_ix.push((p, k));
            }
        }
        let base: Vec<f64> = flat_ix.iter().map(|&(p, k)| n.params()[p].tensor.values()[k]).collect();
        let loss = |n: &mut Network<f64>, theta: &[f64]| {
            for (&(p, k), &v) in flat_ix.iter().zip(theta) {
                n.params_mut()[p].tensor.values_mut()[k] = v;
            }
            let pass = n.forward(x, y.len(), BnMode::Train, false).unwrap();
            softmax_cross_entropy(n.logits(&pass), y, n.num_classes()).loss
        };
        let d = base.len();
        let h = 1e-4;
        let mut g = vec![0.0; d];
        for i in 0..d {
            let mut t = base.clone();
            t[i] += h;
            let lp = loss(&mut n, &t);
            t[i] -= 2.0 * h;
            g[i] = (lp - loss(&mut n, &t)) / (2.0 * h);
        }
        let hh = 1e-3;
        let mut hg = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                let mut t = base.clone();
                let f = |t: &mut Vec<f64>, si: f64, sj: f64| {
                    t[i] += si * hh;
                    t[j] += sj * hh;
                };
                f(&mut t, 1.0, 1.0);
                let pp = loss(&mut n, &t);
                let mut t = base.clone();
                f(&mut t, 1.0, -1.0);
                let pm = loss(&mut n, &t);
                let mut t = base.clone();
                f(&mut t, -1.0, 1.0);
                let mp = loss(&mut n, &t);
                let mut t = base.clone();
                f(&mut t, -1.0, -1.0);
                let mm = loss(&mut n, &t);
                hg[i] += (pp - pm - mp + mm) / (4.0 * hh * hh) * g[j];
            }
        }
        -(0..d).map(|i| hg[i] * base[i]).sum::<f64>()
    }

    #[test]
    fn grasp_matches_finite_difference_hessian() {
        let net = mlp(&[3, 4, 3], 7);
        let x = [0.3, -1.2, 0.8, 1.1, 0.4, -0.5, -0.9, 0.2, 0.6];
        let y = [0, 2, 1];
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let got = compute_proxy(ProxyKind::Grasp, &net, &xf, &y).unwrap().score;
        let xd: Vec<f64> = xf.iter().map(|&v| f64::from(v)).collect();
        let want = grasp_oracle(&net, &xd, &y);
        assert!((got - want).abs() <= 1e-3 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn jacob_cov_closed_forms() {
        let n = 5;
        let eps = JACOB_COV_EPS;
        let same: Vec<Vec<f64>> = vec![vec![0.3, -1.0, 2.0, 0.7]; n];
        let want = -((n as f64 + eps).ln() + 1.0 / (n as f64 + eps)) - (n as f64 - 1.0) * (eps.ln() + 1.0 / eps);
        let got = jacob_cov_from_rows(&same).unwrap();
        assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
        // Rows of a Hadamard matrix other than the constant one: zero mean
        // and mutually orthogonal.
        let h8: Vec<Vec<f64>> = (1..8)
            .map(|i: u32| (0..8u32).map(|j| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 }).collect())
            .collect();
        let got = jacob_cov_from_rows(&h8).unwrap();
        let want = -7.0 * ((1.0 + eps).ln() + 1.0 / (1.0 + eps));
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn jacob_cov_identity_is_the_maximum() {
        let n = 4;
        let best = -(n as f64) * ((1.0 + JACOB_COV_EPS).ln() + 1.0 / (1.0 + JACOB_COV_EPS));
        let mut r = rng::stream(3, "jc", 0);
        use rand::Rng as _;
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            assert!(jacob_cov_from_rows(&rows).unwrap() < best);
        }
    }

    #[test]
    fn jacob_cov_zero_row_is_uncorrelated() {
        let rows = vec![vec![0.0; 3], vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]];
        // Rows 1 and 2 correlate at -1; row 0 is isolated: eigenvalues 1, 2, 0.
        let e = JACOB_COV_EPS;
        let want = -[1.0, 2.0, 0.0].iter().map(|&l: &f64| (l + e).ln() + 1.0 / (l + e)).sum::<f64>();
        let got = jacob_cov_from_rows(&rows).unwrap();
        assert!((got - want).abs() <= 1e-6 * want.abs());
    }

    #[test]
    fn identical_network_inputs_give_the_all_ones_structure() {
        let net: Network<f64> = build_network(&ArchId::new(9999).unwrap().decode(), &tiny_macro(), 0).unwrap();
        let (x1, _) = batch(2, 1);
        let n = 4;
        let x: Vec<f32> = (0..n).flat_map(|_| x1.clone()).collect();
        let got = compute_proxy(ProxyKind::JacobCov, &net, &x, &[0, 1, 2, 0]).unwrap().score;
        let eps = JACOB_COV_EPS;
        let want = -((n as f64 + eps).ln() + 1.0 / (n as f64 + eps)) - (n as f64 - 1.0) * (eps.ln() + 1.0 / eps);
        assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn jacob_cov_is_permutation_invariant() {
        let net: Network<f64> = build_network(&ArchId::new(1234).unwrap().decode(), &tiny_macro(), 0).unwrap();
        let (x, y) = batch(5, 4);
        let a = compute_proxy(ProxyKind::JacobCov, &net, &x, &y).unwrap().score;
        let perm = [2usize, 0, 3, 1];
        let xp: Vec<f32> = perm.iter().flat_map(|&i| x[i * 48..(i + 1) * 48].to_vec()).collect();
        let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        let b = compute_proxy(ProxyKind::JacobCov, &net, &xp, &yp).unwrap().score;
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn synflow_ignores_the_data() {
        let net: Network<f32> = build_network(&ArchId::new(5555).unwrap().decode(), &tiny_macro(), 0).unwrap();
        let (x1, y1) = batch(1, 4);
        let (x2, y2) = batch(2, 4);
        for kind in [ProxyKind::Synflow, ProxyKind::SynflowBn] {
            let a = compute_proxy(kind, &net, &x1, &y1).unwrap().score;
            let b = compute_proxy(kind, &net, &x2, &y2).unwrap().score;
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn scores_are_deterministic_and_leave_the_network_untouched() {
        let net: Network<f32> = build_network(&ArchId::new(2024).unwrap().decode(), &tiny_macro(), 0).unwrap();
        let before = net.flat_params();
        let (x, y) = batch(3, 4);
        for kind in ProxyKind::ALL {
            let a = compute_proxy(kind, &net, &x, &y).unwrap();
            let b = compute_proxy(kind, &net, &x, &y).unwrap();
            assert_eq!(a, b, "{kind}");
            assert!(a.cost_units > 0);
        }
        assert_eq!(net.flat_params(), before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn non_negative_proxies(id in 0u32..15625, seed in 0u64..1000) {
            let net: Network<f32> = build_network(&ArchId::new(id).unwrap().decode(), &tiny_macro(), seed).unwrap();
            let (x, y) = batch(seed, 4);
            for kind in [ProxyKind::GradNorm, ProxyKind::Snip, ProxyKind::Fisher] {
                prop_assert!(compute_proxy(kind, &net, &x, &y).unwrap().score >= 0.0);
            }
        }
    }

    fn vote_oracle(entries: &[VoteInput]) -> Vec<usize> {
        let mut wins = vec![0; entries.len()];
        for i in 0..entries.len() {
            for j in 0..entries.len() {
                let mut votes = 0;
                votes += usize::from(entries[i].synflow > entries[j].synflow);
                votes += usize::from(entries[i].jacob_cov > entries[j].jacob_cov);
                votes += usize::from(entries[i].snip > entries[j].snip);
                if votes >= 2 {
                    wins[i] += 1;
                }
            }
        }
        wins
    }

    #[test]
    fn vote_follows_unanimous_order() {
        let entries: Vec<VoteInput> = (0..5)
            .map(|i| VoteInput {
                arch: ArchId::new(i).unwrap(),
                synflow: i as f64,
                jacob_cov: 10.0 * i as f64,
                snip: -1.0 / (1.0 + i as f64),
            })
            .collect();
        let order: Vec<u32> = vote_ranking(&entries).iter().map(|(a, _)| a.get()).collect();
        assert_eq!(order, vec![4, 3, 2, 1, 0]);
    }

    #[test]
    fn vote_follows_two_of_three_majorities() {
        // synflow and snip agree on 0 < 1 < 2; jacob_cov dissents.
        let e = |i: u32, s: f64, j: f64, n: f64| VoteInput {
            arch: ArchId::new(i).unwrap(),
            synflow: s,
            jacob_cov: j,
            snip: n,
        };
        let entries = [e(0, 1.0, 9.0, 1.0), e(1, 2.0, 5.0, 2.0), e(2, 3.0, 1.0, 3.0)];
        let order: Vec<u32> = vote_ranking(&entries).iter().map(|(a, _)| a.get()).collect();
        assert_eq!(order, vec![2, 1, 0]);
    }

    proptest! {
        #[test]
        fn vote_matches_brute_force_pairwise_oracle(
            table in proptest::collection::vec((0i32..4, 0i32..4, 0i32..4), 5)
        ) {
            let entries: Vec<VoteInput> = table
                .iter()
                .enumerate()
                .map(|(i, &(s, j, n))| VoteInput {
                    arch: ArchId::new(i as u32).unwrap(),
                    synflow: f64::from(s),
                    jacob_cov: f64::from(j),
                    snip: f64::from(n),
                })
                .collect();
            let wins = vote_oracle(&entries);
            let ranked = vote_ranking(&entries);
            for (a, w) in &ranked {
                prop_assert_eq!(*w, wins[a.get() as usize]);
            }
            for pair in ranked.windows(2) {
                let (a, b) = (pair[0].0.get() as usize, pair[1].0.get() as usize);
                let key = |i: usize| (std::cmp::Reverse(wins[i]), std::cmp::Reverse(table[i].0), i);
                prop_assert!(key(a) < key(b));
            }
        }
    }
}
