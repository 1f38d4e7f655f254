//! FE -> AFE1 -> AFE2 trunk with classification and prediction heads.
//!
//! Activations of a batch are stacked item-major into one matrix per stage,
//! so batch normalization sees every grouped point of every item while
//! attention and pooling stay per item.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::attention::{attention_backward, attention_forward, AttentionCache, AttentionKind, AttentionWeights};
use super::config::{AttnSlot, NetworkConfig, Task};
use super::layers::{
    batch_norm, batch_norm_backward, gather_concat, gather_concat_backward, linear, linear_backward, max_pool_backward,
    max_pool_groups, relu, relu_backward, sigmoid, update_running, BnCache,
};
use super::params::{ParamStore, Tensor};
use crate::cloud::sub;
use crate::error::{Error, Result};
use crate::geometry::{ball_query, farthest_point_sampling};
use crate::kce::{KeyClusterSet, MEMBER_FEATURES};

pub const N_LEVELS: usize = 3;

/// FPS centroids and ball-query groups of one AFE stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    /// Indices of the centroids among the previous stage's points.
    pub centroids: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
    /// `n_centroids * k_group` member indices, group-major.
    pub members: Vec<usize>,
    /// Member position minus centroid position, one row per member.
    pub rel: Array2<f64>,
}

pub fn group_points(positions: &[[f64; 3]], n_centroids: usize, k_group: usize, radius: f64) -> Result<Grouping> {
    let centroids = farthest_point_sampling(positions, n_centroids, 0)?;
    let mut members = Vec::with_capacity(n_centroids * k_group);
    let mut rel = Array2::zeros((n_centroids * k_group, 3));
    for (g, &c) in centroids.iter().enumerate() {
        let nb = ball_query(positions, positions[c], radius, k_group)?;
        for (m, &j) in nb.members.iter().enumerate() {
            let d = sub(positions[j], positions[c]);
            rel.row_mut(g * k_group + m).assign(&ndarray::aview1(&d));
            members.push(j);
        }
    }
    let pos = centroids.iter().map(|&c| positions[c]).collect();
    Ok(Grouping {
        centroids,
        positions: pos,
        members,
        rel,
    })
}

/// Network input for one cloud: flattened key clusters plus the groupings of
/// both AFE stages, which depend only on key-point positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedItem {
    pub name: String,
    pub key_positions: Vec<[f64; 3]>,
    /// `(beta * K) x 6`.
    pub input: Array2<f64>,
    pub afe1: Grouping,
    pub afe2: Grouping,
}

pub fn prepare_item(set: &KeyClusterSet, config: &NetworkConfig, task: Task) -> Result<PreparedItem> {
    if set.beta != config.beta || set.k != config.k {
        return Err(Error::ShapeMismatch(format!(
            "key clusters are {}x{}, network expects {}x{}",
            set.beta, set.k, config.beta, config.k
        )));
    }
    let input = Array2::from_shape_vec((set.beta * set.k, MEMBER_FEATURES), set.clusters.clone())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let r = config.radius(task);
    let afe1 = group_points(&set.key_positions, config.afe1.n_centroids, config.afe1.k_group, r)?;
    let afe2 = group_points(&afe1.positions, config.afe2.n_centroids, config.afe2.k_group, r)?;
    Ok(PreparedItem {
        name: set.source_name.clone(),
        key_positions: set.key_positions.clone(),
        input,
        afe1,
        afe2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageTag {
    Fe,
    Afe1,
    Afe2,
}

/// Per-point features after a stage, aligned with their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub stage: StageTag,
    pub positions: Vec<[f64; 3]>,
    pub features: Array2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum Mode {
    /// Batch statistics in BN, dropout masks drawn from the seed.
    Train { dropout_seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct LinearIds {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    w1: Option<usize>,
    w2: Option<usize>,
    wsq: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    lin: LinearIds,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
    after_bn: Option<AttnIds>,
    after_relu: Option<AttnIds>,
}

#[derive(Debug, Clone)]
struct Arch {
    fe: Vec<ConvLayer>,
    afe1: Vec<ConvLayer>,
    afe2: Vec<ConvLayer>,
    cls: Vec<LinearIds>,
    pred: Vec<LinearIds>,
}

enum Init {
    Uniform(f64),
    Const(f64),
}

struct Builder<'a> {
    params: ParamStore,
    buffers: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn tensor(&mut self, shape: &[usize], init: Init) -> Tensor {
        let mut t = Tensor::zeros(shape);
        match init {
            Init::Uniform(b) => t.data.iter_mut().for_each(|v| *v = self.rng.random_range(-b..=b)),
            Init::Const(c) => t.data.iter_mut().for_each(|v| *v = c),
        }
        t
    }

    fn param(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let t = self.tensor(shape, init);
        self.params.push(name, t)
    }

    fn linear(&mut self, prefix: &str, cin: usize, cout: usize) -> LinearIds {
        let b = 1.0 / (cin as f64).sqrt();
        LinearIds {
            w: self.param(format!("{prefix}/w"), &[cin, cout], Init::Uniform(b)),
            b: self.param(format!("{prefix}/b"), &[cout], Init::Uniform(b)),
        }
    }

    fn attention(&mut self, prefix: &str, kind: AttentionKind, c: usize) -> Option<AttnIds> {
        if kind == AttentionKind::None {
            return None;
        }
        let (w1, w2) = if kind.has_channel() {
            (
                Some(self.param(format!("{prefix}/w1"), &[c, c / 2], Init::Uniform(1.0 / ((c / 2).max(1) as f64).sqrt()))),
                Some(self.param(format!("{prefix}/w2"), &[c / 2, c], Init::Uniform(1.0 / (c as f64).sqrt()))),
            )
        } else {
            (None, None)
        };
        let wsq = kind
            .has_spatial()
            .then(|| self.param(format!("{prefix}/wsq"), &[c], Init::Uniform(1.0 / (c as f64).sqrt())));
        Some(AttnIds { w1, w2, wsq })
    }

    fn conv_stage(
        &mut self,
        prefix: &str,
        cin: usize,
        channels: &[usize],
        slots: impl Fn(usize) -> (AttentionKind, Vec<AttnSlot>),
    ) -> Vec<ConvLayer> {
        let mut layers = Vec::new();
        let mut c_prev = cin;
        for (l, &c) in channels.iter().enumerate() {
            let p = format!("{prefix}/{l}");
            let lin = self.linear(&format!("{p}/linear"), c_prev, c);
            let gamma = self.param(format!("{p}/bn/gamma"), &[c], Init::Const(1.0));
            let beta = self.param(format!("{p}/bn/beta"), &[c], Init::Const(0.0));
            let running_mean = self.buffers.push(format!("{p}/bn/running_mean"), Tensor::zeros(&[c]));
            let t = self.tensor(&[c], Init::Const(1.0));
            let running_var = self.buffers.push(format!("{p}/bn/running_var"), t);
            let (kind, sl) = slots(l);
            let after_bn = if sl.contains(&AttnSlot::AfterBn) {
                self.attention(&format!("{p}/attn_bn"), kind, c)
            } else {
                None
            };
            let after_relu = if sl.contains(&AttnSlot::AfterRelu) {
                self.attention(&format!("{p}/attn_relu"), kind, c)
            } else {
                None
            };
            layers.push(ConvLayer {
                lin,
                gamma,
                beta,
                running_mean,
                running_var,
                after_bn,
                after_relu,
            });
            c_prev = c;
        }
        layers
    }

    fn head(&mut self, prefix: &str, cin: usize, widths: &[usize], out: usize) -> Vec<LinearIds> {
        let mut c_prev = cin;
        let mut layers = Vec::new();
        for (l, &w) in widths.iter().chain(std::iter::once(&out)).enumerate() {
            layers.push(self.linear(&format!("{prefix}/{l}"), c_prev, w));
            c_prev = w;
        }
        layers
    }
}

fn build(config: &NetworkConfig, seed: u64) -> (Arch, ParamStore, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        params: ParamStore::default(),
        buffers: ParamStore::default(),
        rng: &mut rng,
    };
    let n_fe = config.fe_channels.len();
    let fe = b.conv_stage("trunk/fe", MEMBER_FEATURES, &config.fe_channels, |l| {
        let slot = if l + 1 == n_fe { vec![AttnSlot::AfterBn] } else { vec![] };
        (config.fe_attention, slot)
    });
    let c_fe = *config.fe_channels.last().unwrap();
    let n1 = config.afe1.channels.len();
    let afe1 = b.conv_stage("trunk/afe1", 3 + c_fe, &config.afe1.channels, |l| {
        (config.attention, config.afe_slots(1, l, n1))
    });
    let c1 = *config.afe1.channels.last().unwrap();
    let n2 = config.afe2.channels.len();
    let afe2 = b.conv_stage("trunk/afe2", 3 + c1, &config.afe2.channels, |l| {
        (config.attention, config.afe_slots(2, l, n2))
    });
    let c2 = *config.afe2.channels.last().unwrap();
    let cls = b.head("cls", c2, &config.head_widths, N_LEVELS);
    let pred = b.head("pred", c2, &config.head_widths, 1);
    let Builder { params, buffers, .. } = b;
    (
        Arch {
            fe,
            afe1,
            afe2,
            cls,
            pred,
        },
        params,
        buffers,
    )
}

struct LayerCache {
    x_in: Array2<f64>,
    bn: BnCache,
    attn_bn: Vec<AttentionCache>,
    relu_in: Array2<f64>,
    attn_relu: Vec<AttentionCache>,
}

struct StageCache {
    layers: Vec<LayerCache>,
    pool_arg: Vec<u32>,
    pool_in_rows: usize,
}

struct HeadCache {
    inputs: Vec<Array2<f64>>,
    pre_relu: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    pooled_arg: Vec<u32>,
    pooled_in_rows: usize,
}

/// Result of a batched forward pass; keep it to run the backward pass or
/// update BN running statistics.
pub struct Forward {
    pub task: Task,
    /// `B x 3` logits, or `B x 1` sigmoid outputs in `(0, 1)`.
    pub output: Array2<f64>,
    batch: usize,
    fe: StageCache,
    afe1: StageCache,
    afe2: StageCache,
    src1: Vec<usize>,
    src2: Vec<usize>,
    head: HeadCache,
}

#[derive(Debug, Clone)]
pub struct QaModel {
    pub config: NetworkConfig,
    pub params: ParamStore,
    /// BN running statistics.
    pub buffers: ParamStore,
    arch: Arch,
}

impl PartialEq for QaModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.buffers == other.buffers
    }
}

impl QaModel {
    /// Random initialization: weights and biases `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// BN scale 1 and shift 0.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (arch, params, buffers) = build(&config, seed);
        Ok(Self {
            config,
            params,
            buffers,
            arch,
        })
    }

    /// Model whose parameters and buffers are replaced by the given stores;
    /// names and shapes must match the config exactly.
    pub fn from_parts(config: NetworkConfig, params: ParamStore, buffers: ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        for (mine, theirs, what) in [(&m.params, &params, "parameter"), (&m.buffers, &buffers, "buffer")] {
            if mine.names != theirs.names {
                return Err(Error::Checkpoint(format!("{what} names do not match the config")));
            }
            for ((n, a), b) in mine.iter().zip(&theirs.tensors) {
                if a.shape != b.shape || b.data.len() != b.shape.iter().product::<usize>() {
                    return Err(Error::Checkpoint(format!("{what} {n}: shape {:?}, expected {:?}", b.shape, a.shape)));
                }
            }
        }
        m.params = params;
        m.buffers = buffers;
        Ok(m)
    }

    /// Copies every `trunk/` parameter and buffer from `other`.
    pub fn transplant_trunk(&mut self, other: &QaModel) -> Result<()> {
        if let Some(msg) = self.config.trunk_mismatch(&other.config) {
            return Err(Error::ConfigMismatch(msg));
        }
        let trunk = |n: &str| n.starts_with("trunk/");
        self.params.copy_from(&other.params, trunk)?;
        self.buffers.copy_from(&other.buffers, trunk)?;
        Ok(())
    }

    fn attn_weights(&self, ids: &AttnIds) -> AttentionWeights<'_> {
        AttentionWeights {
            w1: ids.w1.map(|i| self.params.view2(i)),
            w2: ids.w2.map(|i| self.params.view2(i)),
            wsq: ids.wsq.map(|i| self.params.view1(i)),
        }
    }

    fn attention_per_item(
        &self,
        ids: &AttnIds,
        x: &Array2<f64>,
        batch: usize,
    ) -> Result<(Array2<f64>, Vec<AttentionCache>)> {
        let rows = x.nrows() / batch;
        let w = self.attn_weights(ids);
        let parts: Vec<(Array2<f64>, AttentionCache)> = (0..batch)
            .into_par_iter()
            .map(|b| attention_forward(x.slice(s![b * rows..(b + 1) * rows, ..]), &w))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros(x.raw_dim());
        let mut caches = Vec::with_capacity(batch);
        for (b, (o, c)) in parts.into_iter().enumerate() {
            out.slice_mut(s![b * rows..(b + 1) * rows, ..]).assign(&o);
            caches.push(c);
        }
        Ok((out, caches))
    }

    fn attention_backward_per_item(
        &self,
        ids: &AttnIds,
        caches: &[AttentionCache],
        dy: &Array2<f64>,
        grads: &mut ParamStore,
    ) -> Array2<f64> {
        let batch = caches.len();
        let rows = dy.nrows() / batch;
        let w = self.attn_weights(ids);
        let parts: Vec<_> = (0..batch)
            .into_par_iter()
            .map(|b| attention_backward(&w, &caches[b], dy.slice(s![b * rows..(b + 1) * rows, ..])))
            .collect();
        let mut dx = Array2::zeros(dy.raw_dim());
        for (b, (d, g)) in parts.into_iter().enumerate() {
            dx.slice_mut(s![b * rows..(b + 1) * rows, ..]).assign(&d);
            if let (Some(i), Some(gw)) = (ids.w1, &g.dw1) {
                grads.add_to2(i, gw.view());
            }
            if let (Some(i), Some(gw)) = (ids.w2, &g.dw2) {
                grads.add_to2(i, gw.view());
            }
            if let (Some(i), Some(gw)) = (ids.wsq, &g.dwsq) {
                grads.add_to1(i, gw.view());
            }
        }
        dx
    }

    fn stage_forward(
        &self,
        layers: &[ConvLayer],
        mut x: Array2<f64>,
        batch: usize,
        group: usize,
        train: bool,
    ) -> Result<(Array2<f64>, StageCache)> {
        let mut caches = Vec::with_capacity(layers.len());
        for l in layers {
            let z = linear(x.view(), self.params.view2(l.lin.w), self.params.view1(l.lin.b));
            let running = (!train).then(|| (self.buffers.view1(l.running_mean), self.buffers.view1(l.running_var)));
            let (mut y, bn) = batch_norm(z.view(), self.params.view1(l.gamma), self.params.view1(l.beta), running);
            let mut attn_bn = Vec::new();
            if let Some(ids) = &l.after_bn {
                let (o, c) = self.attention_per_item(ids, &y, batch)?;
                y = o;
                attn_bn = c;
            }
            let mut r = relu(&y);
            let mut attn_relu = Vec::new();
            if let Some(ids) = &l.after_relu {
                let (o, c) = self.attention_per_item(ids, &r, batch)?;
                r = o;
                attn_relu = c;
            }
            debug_assert!(r.iter().all(|v| v.is_finite()), "non-finite activation");
            caches.push(LayerCache {
                x_in: x,
                bn,
                attn_bn,
                relu_in: y,
                attn_relu,
            });
            x = r;
        }
        let pool_in_rows = x.nrows();
        let (pooled, pool_arg) = max_pool_groups(x.view(), group);
        Ok((
            pooled,
            StageCache {
                layers: caches,
                pool_arg,
                pool_in_rows,
            },
        ))
    }

    fn stage_backward(
        &self,
        layers: &[ConvLayer],
        cache: &StageCache,
        dpooled: ArrayView2<f64>,
        grads: &mut ParamStore,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        let mut dy = max_pool_backward(&cache.pool_arg, dpooled, cache.pool_in_rows);
        for (i, (l, c)) in layers.iter().zip(&cache.layers).enumerate().rev() {
            if let Some(ids) = &l.after_relu {
                dy = self.attention_backward_per_item(ids, &c.attn_relu, &dy, grads);
            }
            dy = relu_backward(&c.relu_in, dy.view());
            if let Some(ids) = &l.after_bn {
                dy = self.attention_backward_per_item(ids, &c.attn_bn, &dy, grads);
            }
            let (dz, dgamma, dbeta) = batch_norm_backward(&c.bn, self.params.view1(l.gamma), dy.view());
            grads.add_to1(l.gamma, dgamma.view());
            grads.add_to1(l.beta, dbeta.view());
            let w = self.params.view2(l.lin.w);
            if i == 0 && !need_dx {
                grads.add_to2(l.lin.w, c.x_in.t().dot(&dz).view());
                grads.add_to1(l.lin.b, dz.sum_axis(Axis(0)).view());
                return None;
            }
            let (dx, dw, db) = linear_backward(c.x_in.view(), w, dz.view());
            grads.add_to2(l.lin.w, dw.view());
            grads.add_to1(l.lin.b, db.view());
            dy = dx;
        }
        Some(dy)
    }

    fn head_layers(&self, task: Task) -> &[LinearIds] {
        match task {
            Task::Classification => &self.arch.cls,
            Task::Prediction => &self.arch.pred,
        }
    }

    /// Batched forward pass over prepared items.
    pub fn forward(&self, items: &[&PreparedItem], task: Task, mode: Mode) -> Result<Forward> {
        let batch = items.len();
        if batch == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let cfg = &self.config;
        for it in items {
            if it.input.dim() != (cfg.beta * cfg.k, MEMBER_FEATURES)
                || it.afe1.members.len() != cfg.afe1.n_centroids * cfg.afe1.k_group
                || it.afe2.members.len() != cfg.afe2.n_centroids * cfg.afe2.k_group
            {
                return Err(Error::ShapeMismatch(format!("item `{}` was prepared for another config", it.name)));
            }
        }
        let train = matches!(mode, Mode::Train { .. });
        let views: Vec<_> = items.iter().map(|it| it.input.view()).collect();
        let x0 = ndarray::concatenate(Axis(0), &views).expect("same widths");
        let (f1, fe) = self.stage_forward(&self.arch.fe, x0, batch, cfg.k, train)?;

        let (g1, src1) = Self::group_batch(items, |it| &it.afe1, cfg.beta, &f1);
        let (f2, afe1) = self.stage_forward(&self.arch.afe1, g1, batch, cfg.afe1.k_group, train)?;

        let (g2, src2) = Self::group_batch(items, |it| &it.afe2, cfg.afe1.n_centroids, &f2);
        let (f3, afe2) = self.stage_forward(&self.arch.afe2, g2, batch, cfg.afe2.k_group, train)?;

        let (pooled, pooled_arg) = max_pool_groups(f3.view(), cfg.afe2.n_centroids);
        let mut rng = match mode {
            Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
            Mode::Eval => None,
        };
        let layers = self.head_layers(task);
        let mut h = pooled;
        let mut head = HeadCache {
            inputs: Vec::new(),
            pre_relu: Vec::new(),
            masks: Vec::new(),
            pooled_arg,
            pooled_in_rows: f3.nrows(),
        };
        for (i, l) in layers.iter().enumerate() {
            let z = linear(h.view(), self.params.view2(l.w), self.params.view1(l.b));
            head.inputs.push(h);
            if i + 1 == layers.len() {
                h = z;
                break;
            }
            let mut a = relu(&z);
            let mask = match (&mut rng, cfg.dropout) {
                (Some(rng), p) if p > 0.0 => {
                    let keep = 1.0 - p;
                    let m = Array2::from_shape_fn(a.raw_dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            head.pre_relu.push(z);
            head.masks.push(mask);
            h = a;
        }
        if task == Task::Prediction {
            h.mapv_inplace(sigmoid);
        }
        Ok(Forward {
            task,
            output: h,
            batch,
            fe,
            afe1,
            afe2,
            src1,
            src2,
            head,
        })
    }

    fn group_batch(
        items: &[&PreparedItem],
        grouping: impl Fn(&PreparedItem) -> &Grouping,
        n_prev: usize,
        features: &Array2<f64>,
    ) -> (Array2<f64>, Vec<usize>) {
        let rels: Vec<_> = items.iter().map(|it| grouping(it).rel.view()).collect();
        let rel = ndarray::concatenate(Axis(0), &rels).expect("same widths");
        let src: Vec<usize> = items
            .iter()
            .enumerate()
            .flat_map(|(b, it)| grouping(it).members.iter().map(move |&j| b * n_prev + j))
            .collect();
        (gather_concat(rel.view(), features.view(), &src), src)
    }

    /// Gradients of `sum(d_output * output)` with respect to every parameter.
    /// For prediction, `d_output` is taken with respect to the sigmoid output.
    pub fn backward(&self, fwd: &Forward, d_output: ArrayView2<f64>) -> Result<ParamStore> {
        if d_output.dim() != fwd.output.dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} for output {:?}",
                d_output.dim(),
                fwd.output.dim()
            )));
        }
        let mut grads = self.params.zeros_like();
        let mut dh = d_output.to_owned();
        if fwd.task == Task::Prediction {
            dh.zip_mut_with(&fwd.output, |d, &s| *d *= s * (1.0 - s));
        }
        let layers = self.head_layers(fwd.task);
        for (i, l) in layers.iter().enumerate().rev() {
            if i + 1 < layers.len() {
                if let Some(m) = &fwd.head.masks[i] {
                    dh *= m;
                }
                dh = relu_backward(&fwd.head.pre_relu[i], dh.view());
            }
            let (dx, dw, db) = linear_backward(fwd.head.inputs[i].view(), self.params.view2(l.w), dh.view());
            grads.add_to2(l.w, dw.view());
            grads.add_to1(l.b, db.view());
            dh = dx;
        }
        let cfg = &self.config;
        let df3 = max_pool_backward(&fwd.head.pooled_arg, dh.view(), fwd.head.pooled_in_rows);
        let dg2 = self
            .stage_backward(&self.arch.afe2, &fwd.afe2, df3.view(), &mut grads, true)
            .expect("dx requested");
        let df2 = gather_concat_backward(dg2.view(), 3, &fwd.src2, fwd.batch * cfg.afe1.n_centroids);
        let dg1 = self
            .stage_backward(&self.arch.afe1, &fwd.afe1, df2.view(), &mut grads, true)
            .expect("dx requested");
        let df1 = gather_concat_backward(dg1.view(), 3, &fwd.src1, fwd.batch * cfg.beta);
        self.stage_backward(&self.arch.fe, &fwd.fe, df1.view(), &mut grads, false);
        Ok(grads)
    }

    /// Folds the batch statistics of a training forward pass into the BN
    /// running estimates.
    pub fn update_running_stats(&mut self, fwd: &Forward) {
        let stages = [
            (&self.arch.fe, &fwd.fe),
            (&self.arch.afe1, &fwd.afe1),
            (&self.arch.afe2, &fwd.afe2),
        ];
        let mut updates = Vec::new();
        for (layers, cache) in stages {
            for (l, c) in layers.iter().zip(&cache.layers) {
                if let Some((m, v)) = &c.bn.batch_stats {
                    updates.push((l.running_mean, l.running_var, m.clone(), v.clone(), c.x_in.nrows()));
                }
            }
        }
        for (im, iv, m, v, rows) in updates {
            let (lo, hi) = self.buffers.tensors.split_at_mut(iv);
            update_running(&mut lo[im].data, &mut hi[0].data, m.view(), v.view(), rows);
        }
    }

    /// Inference logits for one item.
    pub fn classify(&self, item: &PreparedItem) -> Result<[f64; N_LEVELS]> {
        let f = self.forward(&[item], Task::Classification, Mode::Eval)?;
        Ok([f.output[[0, 0]], f.output[[0, 1]], f.output[[0, 2]]])
    }

    /// Inference output in normalized MOS space `(0, 1)`.
    pub fn predict(&self, item: &PreparedItem) -> Result<f64> {
        let f = self.forward(&[item], Task::Prediction, Mode::Eval)?;
        Ok(f.output[[0, 0]])
    }

    /// Inference feature maps after FE, AFE1 and AFE2 for one item.
    pub fn feature_maps(&self, item: &PreparedItem) -> Result<[FeatureMap; 3]> {
        let cfg = &self.config;
        let (f1, _) = self.stage_forward(&self.arch.fe, item.input.clone(), 1, cfg.k, false)?;
        let (g1, _) = Self::group_batch(&[item], |it| &it.afe1, cfg.beta, &f1);
        let (f2, _) = self.stage_forward(&self.arch.afe1, g1, 1, cfg.afe1.k_group, false)?;
        let (g2, _) = Self::group_batch(&[item], |it| &it.afe2, cfg.afe1.n_centroids, &f2);
        let (f3, _) = self.stage_forward(&self.arch.afe2, g2, 1, cfg.afe2.k_group, false)?;
        Ok([
            FeatureMap {
                stage: StageTag::Fe,
                positions: item.key_positions.clone(),
                features: f1,
            },
            FeatureMap {
                stage: StageTag::Afe1,
                positions: item.afe1.positions.clone(),
                features: f2,
            },
            FeatureMap {
                stage: StageTag::Afe2,
                positions: item.afe2.positions.clone(),
                features: f3,
            },
        ])
    }

    /// Names of all learnable parameters, in storage order.
    pub fn param_names(&self) -> &[String] {
        &self.params.names
    }

    pub fn param_count(&self) -> usize {
        self.params.total_len()
    }
}

/// Index of the largest logit; the first wins on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
