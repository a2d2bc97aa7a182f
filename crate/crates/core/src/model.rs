//! The assembled network: stem convolution, MBConv blocks with
//! squeeze-and-excitation, a 1×1 top convolution, global pooling and the
//! two-layer classifier head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::{ArchSpec, StageOp};
use crate::error::{arg_err, dim_err, Result};
use crate::ops::{
    self, activation_backward, batch_norm, batch_norm_backward, conv2d, conv2d_backward,
    depthwise_conv2d, depthwise_conv2d_backward, drop_path, dropout, fully_connected,
    fully_connected_backward, global_avg_pool, global_avg_pool_backward, se_reduced_channels,
    softmax_rows, squeeze_excite, squeeze_excite_backward, ActKind, BatchNormCache, BnStats,
    DropMask, Mode, Padding, SeCache, SeWeights,
};
use crate::params::{LayerParams, ParamId, ParamRole};
use crate::tensor::{c, Scalar, Tensor};

pub const BN_EPSILON: f64 = ops::norm::DEFAULT_EPSILON;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

/// Convolution followed by batch norm and optionally swish.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvBn {
    weight: ParamId,
    bn: BnIds,
    stride: usize,
    depthwise: bool,
    act: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct SeIds {
    ratio: usize,
    reduce_w: ParamId,
    reduce_b: ParamId,
    expand_w: ParamId,
    expand_b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Block {
    skip: bool,
    expand: Option<ConvBn>,
    dw: ConvBn,
    se: Option<SeIds>,
    project: ConvBn,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Head {
    fc1: (ParamId, ParamId),
    bn1: BnIds,
    fc2: (ParamId, ParamId),
    bn2: BnIds,
    out: (ParamId, ParamId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    stem: ConvBn,
    blocks: Vec<Block>,
    top: ConvBn,
    head: Head,
}

/// A named activation inside the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Stem,
    /// Output of the `i`-th MBConv block (zero-based, counting repeats).
    Block(usize),
    /// Output of the final 1×1 convolution, the input to global pooling.
    Top,
}

impl Feature {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "top" => Ok(Feature::Top),
            "stem" => Ok(Feature::Stem),
            _ => name
                .strip_prefix("block")
                .map(|s| s.trim_start_matches(['.', 's']))
                .and_then(|s| s.parse().ok())
                .map(Feature::Block)
                .ok_or_else(|| arg_err!("unknown layer {name:?}")),
        }
    }
}

/// Parameter initializer: fan-in scaled normal weights, identity batch norm.
struct Init<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Init<'_> {
    fn weight<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        match self.rng.as_deref_mut() {
            None => Tensor::zeros(shape),
            Some(rng) => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| c(normal.sample(rng))).collect();
                Tensor::from_vec(shape, data).unwrap()
            }
        }
    }
}

struct Builder<'a, T> {
    params: LayerParams<T>,
    init: Init<'a>,
}

impl<T: Scalar> Builder<'_, T> {
    fn bn(&mut self, prefix: &str, ch: usize) -> Result<BnIds> {
        Ok(BnIds {
            gamma: self.params.push(
                format!("{prefix}.gamma"),
                ParamRole::BnGamma,
                Tensor::full(&[ch], T::one()),
            )?,
            beta: self
                .params
                .push(format!("{prefix}.beta"), ParamRole::BnBeta, Tensor::zeros(&[ch]))?,
            mean: self.params.push(
                format!("{prefix}.running_mean"),
                ParamRole::RunningMean,
                Tensor::zeros(&[ch]),
            )?,
            var: self.params.push(
                format!("{prefix}.running_var"),
                ParamRole::RunningVar,
                Tensor::full(&[ch], T::one()),
            )?,
        })
    }

    fn conv_bn(
        &mut self,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        act: bool,
    ) -> Result<ConvBn> {
        let w = self.init.weight(&[cout, cin, kernel, kernel], cin * kernel * kernel);
        let weight = self
            .params
            .push(format!("{prefix}.conv.weight"), ParamRole::Weight, w)?;
        Ok(ConvBn {
            weight,
            bn: self.bn(&format!("{prefix}.bn"), cout)?,
            stride,
            depthwise: false,
            act,
        })
    }

    fn depthwise_bn(&mut self, prefix: &str, ch: usize, kernel: usize, stride: usize) -> Result<ConvBn> {
        let w = self.init.weight(&[ch, 1, kernel, kernel], kernel * kernel);
        let weight = self
            .params
            .push(format!("{prefix}.conv.weight"), ParamRole::Weight, w)?;
        Ok(ConvBn {
            weight,
            bn: self.bn(&format!("{prefix}.bn"), ch)?,
            stride,
            depthwise: true,
            act: true,
        })
    }

    fn fc(&mut self, prefix: &str, cin: usize, cout: usize) -> Result<(ParamId, ParamId)> {
        let w = self.init.weight(&[cin, cout], cin);
        Ok((
            self.params
                .push(format!("{prefix}.weight"), ParamRole::Weight, w)?,
            self.params
                .push(format!("{prefix}.bias"), ParamRole::Bias, Tensor::zeros(&[cout]))?,
        ))
    }
}

fn assemble<T: Scalar>(spec: &ArchSpec, rng: Option<&mut ChaCha8Rng>) -> Result<(LayerParams<T>, Layout)> {
    spec.validate()?;
    let mut b = Builder {
        params: LayerParams::new(),
        init: Init { rng },
    };
    let stages = &spec.stages;
    let stem_stage = &stages[0];
    for (i, s) in stages.iter().enumerate() {
        let inner = i > 0 && i + 1 < stages.len();
        if inner != s.op.is_mbconv() {
            return Err(arg_err!(
                "stage {} must be {}",
                i + 1,
                if inner { "an MBConv stage" } else { "a convolution" }
            ));
        }
        if s.op == StageOp::Conv && s.repeats != 1 {
            return Err(arg_err!("convolution stage {} must have one layer", i + 1));
        }
    }
    let stem = b.conv_bn("stem", 3, stem_stage.channels, stem_stage.kernel, stem_stage.stride, true)?;

    let mut cin = stem_stage.channels;
    let mut blocks = Vec::new();
    for s in &stages[1..stages.len() - 1] {
        for r in 0..s.repeats {
            let idx = blocks.len();
            let stride = s.stride_of(r);
            let expanded = cin * s.op.expansion();
            let prefix = format!("blocks.{idx}");
            let expand = if s.op.expansion() != 1 {
                Some(b.conv_bn(&format!("{prefix}.expand"), cin, expanded, 1, 1, true)?)
            } else {
                None
            };
            let dw = b.depthwise_bn(&format!("{prefix}.dw"), expanded, s.kernel, stride)?;
            let se = match s.se_ratio {
                Some(ratio) => {
                    let red = se_reduced_channels(expanded, ratio)?;
                    let (reduce_w, reduce_b) = b.fc(&format!("{prefix}.se.reduce"), expanded, red)?;
                    let (expand_w, expand_b) = b.fc(&format!("{prefix}.se.expand"), red, expanded)?;
                    Some(SeIds {
                        ratio,
                        reduce_w,
                        reduce_b,
                        expand_w,
                        expand_b,
                    })
                }
                None => None,
            };
            let project = b.conv_bn(&format!("{prefix}.project"), expanded, s.channels, 1, 1, false)?;
            blocks.push(Block {
                skip: s.skip && stride == 1 && cin == s.channels,
                expand,
                dw,
                se,
                project,
            });
            cin = s.channels;
        }
    }
    let top_ch = spec.top_channels();
    let top = b.conv_bn("top", cin, top_ch, 1, 1, true)?;

    let units = spec.head_units;
    let fc1 = b.fc("head.fc1", top_ch, units)?;
    let bn1 = b.bn("head.bn1", units)?;
    let fc2 = b.fc("head.fc2", units, units)?;
    let bn2 = b.bn("head.bn2", units)?;
    let out = b.fc("head.out", units, spec.num_classes)?;
    b.params.set_regularized(fc1.0, true);
    b.params.set_regularized(fc2.0, true);

    Ok((
        b.params,
        Layout {
            stem,
            blocks,
            top,
            head: Head {
                fc1,
                bn1,
                fc2,
                bn2,
                out,
            },
        },
    ))
}

/// Architecture plus every parameter tensor it implies.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    spec: ArchSpec,
    params: LayerParams<T>,
    layout: Layout,
}

/// Builds and initializes a model deterministically from `seed`.
pub fn build_model<T: Scalar>(spec: &ArchSpec, seed: u64) -> Result<ModelParams<T>> {
    let factor = spec.downsampling();
    if spec.resolution < factor {
        return Err(arg_err!(
            "resolution {} is smaller than the total downsampling factor {}",
            spec.resolution,
            factor
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (params, layout) = assemble(spec, Some(&mut rng))?;
    Ok(ModelParams {
        spec: spec.clone(),
        params,
        layout,
    })
}

/// Number of trainable scalars (running statistics excluded).
pub fn param_count<T: Scalar>(model: &ModelParams<T>) -> usize {
    model.params.trainable_count()
}

#[derive(Clone, Debug)]
struct ConvBnCache<T> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    pre_act: Tensor<T>,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    input: Tensor<T>,
    expand: Option<ConvBnCache<T>>,
    dw: ConvBnCache<T>,
    se: Option<(Tensor<T>, SeCache<T>)>,
    project: ConvBnCache<T>,
    drop: DropMask<T>,
}

#[derive(Clone, Debug)]
struct HeadCache<T> {
    pooled: Tensor<T>,
    bn1: BatchNormCache<T>,
    pre1: Tensor<T>,
    mask1: DropMask<T>,
    hidden1: Tensor<T>,
    bn2: BatchNormCache<T>,
    pre2: Tensor<T>,
    mask2: DropMask<T>,
    hidden2: Tensor<T>,
}

/// Everything one forward pass produced, kept for backward and Grad-CAM.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub mode: Mode,
    stem: ConvBnCache<T>,
    blocks: Vec<BlockCache<T>>,
    top: ConvBnCache<T>,
    top_out: Tensor<T>,
    head: HeadCache<T>,
}

impl<T: Scalar> ForwardPass<T> {
    /// The activation tensor of a named backbone layer.
    pub fn feature(&self, f: Feature) -> Result<&Tensor<T>> {
        match f {
            Feature::Top => Ok(&self.top_out),
            Feature::Stem => Ok(self.blocks.first().map_or(&self.top.input, |b| &b.input)),
            Feature::Block(i) if i < self.blocks.len() => {
                Ok(self.blocks.get(i + 1).map_or(&self.top.input, |b| &b.input))
            }
            Feature::Block(i) => Err(arg_err!(
                "block {i} does not exist ({} blocks)",
                self.blocks.len()
            )),
        }
    }
}

/// Per-parameter gradients aligned with [`LayerParams`] ids. Entries for
/// running statistics stay empty.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    fn for_params(params: &LayerParams<T>) -> Self {
        Gradients {
            grads: params
                .iter()
                .map(|(_, p)| {
                    if p.role.trainable() {
                        vec![T::zero(); p.value.len()]
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
        }
    }

    fn acc(&mut self, id: ParamId, g: &[T]) {
        for (a, &b) in self.grads[id.0].iter_mut().zip(g) {
            *a = *a + b;
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.grads[id.0]
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Allocates a model with the right shapes but zero weights; used when
    /// loading stored parameters.
    pub fn empty(spec: &ArchSpec) -> Result<Self> {
        let (params, layout) = assemble(spec, None)?;
        Ok(ModelParams {
            spec: spec.clone(),
            params,
            layout,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn params(&self) -> &LayerParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut LayerParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> LayerParams<T> {
        self.params
    }

    /// Replaces all parameter values; names and shapes must match.
    pub fn load_params(&mut self, values: &LayerParams<T>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(dim_err!(
                "parameter count {} does not match architecture ({})",
                values.len(),
                self.params.len()
            ));
        }
        for ((_, dst), (_, src)) in self.params.iter_mut().zip(values.iter()) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(dim_err!(
                    "parameter {:?} {:?} does not match {:?} {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                ));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        self.layout.blocks.len()
    }

    /// Whether block `i` adds its input back to the residual branch.
    pub fn block_has_skip(&self, i: usize) -> bool {
        self.layout.blocks.get(i).is_some_and(|b| b.skip)
    }

    /// Name prefix shared by the parameters of block `i`.
    pub fn block_prefix(i: usize) -> String {
        format!("blocks.{i}")
    }

    fn stats(&self, bn: &BnIds) -> BnStats<T> {
        BnStats {
            mean: self.params.get(bn.mean).data().to_vec(),
            var: self.params.get(bn.var).data().to_vec(),
        }
    }

    fn conv_bn_forward(
        &self,
        l: &ConvBn,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, ConvBnCache<T>)> {
        let w = self.params.get(l.weight);
        let z = if l.depthwise {
            depthwise_conv2d(x, w, l.stride, Padding::Same)?
        } else {
            conv2d(x, w, l.stride, Padding::Same)?
        };
        let (pre_act, bn) = batch_norm(
            &z,
            self.params.get(l.bn.gamma).data(),
            self.params.get(l.bn.beta).data(),
            &self.stats(&l.bn),
            c(BN_EPSILON),
            mode,
        )?;
        let out = if l.act {
            ops::activation(ActKind::Swish, &pre_act)
        } else {
            pre_act.clone()
        };
        Ok((
            out,
            ConvBnCache {
                input: x.clone(),
                bn,
                pre_act,
            },
        ))
    }

    fn conv_bn_backward(
        &self,
        l: &ConvBn,
        cache: &ConvBnCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let g = if l.act {
            activation_backward(ActKind::Swish, &cache.pre_act, grad_out)?
        } else {
            grad_out.clone()
        };
        let (dz, dgamma, dbeta) = batch_norm_backward(&g, self.params.get(l.bn.gamma).data(), &cache.bn)?;
        grads.acc(l.bn.gamma, &dgamma);
        grads.acc(l.bn.beta, &dbeta);
        let w = self.params.get(l.weight);
        let (dx, dw) = if l.depthwise {
            depthwise_conv2d_backward(&cache.input, w, l.stride, Padding::Same, &dz)?
        } else {
            conv2d_backward(&cache.input, w, l.stride, Padding::Same, &dz)?
        };
        grads.acc(l.weight, dw.data());
        Ok(dx)
    }

    fn se_weights(&self, se: &SeIds) -> SeWeights<'_, T> {
        SeWeights {
            reduce_w: self.params.get(se.reduce_w),
            reduce_b: self.params.get(se.reduce_b).data(),
            expand_w: self.params.get(se.expand_w),
            expand_b: self.params.get(se.expand_b).data(),
        }
    }

    fn block_forward<R: Rng + ?Sized>(
        &self,
        b: &Block,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, BlockCache<T>)> {
        let (h, expand) = match &b.expand {
            Some(l) => {
                let (h, cache) = self.conv_bn_forward(l, x, mode)?;
                (h, Some(cache))
            }
            None => (x.clone(), None),
        };
        let (h, dw) = self.conv_bn_forward(&b.dw, &h, mode)?;
        let (h, se) = match &b.se {
            Some(ids) => {
                let (out, cache) = squeeze_excite(&h, ids.ratio, self.se_weights(ids))?;
                (out, Some((h, cache)))
            }
            None => (h, None),
        };
        let (branch, project) = self.conv_bn_forward(&b.project, &h, mode)?;
        let (out, drop) = if b.skip {
            let (dropped, mask) = drop_path(&branch, self.spec.residual_dropout, mode, rng)?;
            (dropped.add(x)?, mask)
        } else {
            (branch, DropMask::identity())
        };
        Ok((
            out,
            BlockCache {
                input: x.clone(),
                expand,
                dw,
                se,
                project,
                drop,
            },
        ))
    }

    fn block_backward(
        &self,
        b: &Block,
        cache: &BlockCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let d_branch = if b.skip {
            cache.drop.backward(grad_out)?
        } else {
            grad_out.clone()
        };
        let mut d = self.conv_bn_backward(&b.project, &cache.project, &d_branch, grads)?;
        if let (Some(ids), Some((se_in, se_cache))) = (&b.se, &cache.se) {
            let (dx, sg) = squeeze_excite_backward(se_in, self.se_weights(ids), se_cache, &d)?;
            grads.acc(ids.reduce_w, sg.reduce_w.data());
            grads.acc(ids.reduce_b, &sg.reduce_b);
            grads.acc(ids.expand_w, sg.expand_w.data());
            grads.acc(ids.expand_b, &sg.expand_b);
            d = dx;
        }
        d = self.conv_bn_backward(&b.dw, &cache.dw, &d, grads)?;
        if let (Some(l), Some(c)) = (&b.expand, &cache.expand) {
            d = self.conv_bn_backward(l, c, &d, grads)?;
        }
        if b.skip {
            d = d.add(grad_out)?;
        }
        Ok(d)
    }

    /// Runs the network on an `N×3×R×R` batch.
    ///
    /// Training mode normalizes with batch statistics and applies dropout drawn
    /// from `rng`; running statistics are not touched here (see
    /// [`ModelParams::update_running_stats`]). Inference mode never reads `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardPass<T>> {
        let (_, ch, h, w) = batch.dims4()?;
        let r = self.spec.resolution;
        if ch != 3 || h != r || w != r {
            return Err(dim_err!(
                "batch is {ch}x{h}x{w}, model expects 3x{r}x{r}"
            ));
        }
        let (mut x, stem) = self.conv_bn_forward(&self.layout.stem, batch, mode)?;
        let mut blocks = Vec::with_capacity(self.layout.blocks.len());
        for b in &self.layout.blocks {
            let (y, cache) = self.block_forward(b, &x, mode, rng)?;
            blocks.push(cache);
            x = y;
        }
        let (top_out, top) = self.conv_bn_forward(&self.layout.top, &x, mode)?;

        let hd = &self.layout.head;
        let p = &self.params;
        let eps: T = c(BN_EPSILON);
        let pooled = global_avg_pool(&top_out)?;
        let z1 = fully_connected(&pooled, p.get(hd.fc1.0), p.get(hd.fc1.1).data())?;
        let (pre1, bn1) = batch_norm(
            &z1,
            p.get(hd.bn1.gamma).data(),
            p.get(hd.bn1.beta).data(),
            &self.stats(&hd.bn1),
            eps,
            mode,
        )?;
        let (hidden1, mask1) = dropout(
            &ops::activation(ActKind::Swish, &pre1),
            self.spec.head_dropout,
            mode,
            rng,
        )?;
        let z2 = fully_connected(&hidden1, p.get(hd.fc2.0), p.get(hd.fc2.1).data())?;
        let (pre2, bn2) = batch_norm(
            &z2,
            p.get(hd.bn2.gamma).data(),
            p.get(hd.bn2.beta).data(),
            &self.stats(&hd.bn2),
            eps,
            mode,
        )?;
        let (hidden2, mask2) = dropout(
            &ops::activation(ActKind::Swish, &pre2),
            self.spec.head_dropout,
            mode,
            rng,
        )?;
        let logits = fully_connected(&hidden2, p.get(hd.out.0), p.get(hd.out.1).data())?;
        let probs = softmax_rows(&logits)?;
        Ok(ForwardPass {
            logits,
            probs,
            mode,
            stem,
            blocks,
            top,
            top_out,
            head: HeadCache {
                pooled,
                bn1,
                pre1,
                mask1,
                hidden1,
                bn2,
                pre2,
                mask2,
                hidden2,
            },
        })
    }

    /// Inference-mode forward pass.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<ForwardPass<T>> {
        self.forward(batch, Mode::Inference, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Softmax probabilities for a batch, in inference mode.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.infer(batch)?.probs)
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn update_running_stats(&mut self, pass: &ForwardPass<T>) {
        let momentum: T = c(self.spec.bn_momentum);
        let mut pairs: Vec<(BnIds, &BatchNormCache<T>)> = Vec::new();
        let l = &self.layout;
        pairs.push((l.stem.bn, &pass.stem.bn));
        for (b, cache) in l.blocks.iter().zip(&pass.blocks) {
            if let (Some(e), Some(ec)) = (&b.expand, &cache.expand) {
                pairs.push((e.bn, &ec.bn));
            }
            pairs.push((b.dw.bn, &cache.dw.bn));
            pairs.push((b.project.bn, &cache.project.bn));
        }
        pairs.push((l.top.bn, &pass.top.bn));
        pairs.push((l.head.bn1, &pass.head.bn1));
        pairs.push((l.head.bn2, &pass.head.bn2));

        for (ids, cache) in pairs {
            let mut stats = self.stats(&ids);
            stats.update(cache, momentum);
            self.params.get_mut(ids.mean).data_mut().copy_from_slice(&stats.mean);
            self.params.get_mut(ids.var).data_mut().copy_from_slice(&stats.var);
        }
    }

    /// Backpropagates `grad_logits` through the head; returns the gradient at
    /// the top activation.
    fn head_backward(
        &self,
        pass: &ForwardPass<T>,
        grad_logits: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let hd = &self.layout.head;
        let p = &self.params;
        let hc = &pass.head;
        if grad_logits.shape() != pass.logits.shape() {
            return Err(dim_err!(
                "logit gradient {:?} does not match logits {:?}",
                grad_logits.shape(),
                pass.logits.shape()
            ));
        }
        let (d, dw, db) = fully_connected_backward(&hc.hidden2, p.get(hd.out.0), grad_logits)?;
        grads.acc(hd.out.0, dw.data());
        grads.acc(hd.out.1, &db);
        let d = activation_backward(ActKind::Swish, &hc.pre2, &hc.mask2.backward(&d)?)?;
        let (d, dg, dbt) = batch_norm_backward(&d, p.get(hd.bn2.gamma).data(), &hc.bn2)?;
        grads.acc(hd.bn2.gamma, &dg);
        grads.acc(hd.bn2.beta, &dbt);
        let (d, dw, db) = fully_connected_backward(&hc.hidden1, p.get(hd.fc2.0), &d)?;
        grads.acc(hd.fc2.0, dw.data());
        grads.acc(hd.fc2.1, &db);
        let d = activation_backward(ActKind::Swish, &hc.pre1, &hc.mask1.backward(&d)?)?;
        let (d, dg, dbt) = batch_norm_backward(&d, p.get(hd.bn1.gamma).data(), &hc.bn1)?;
        grads.acc(hd.bn1.gamma, &dg);
        grads.acc(hd.bn1.beta, &dbt);
        let (d, dw, db) = fully_connected_backward(&hc.pooled, p.get(hd.fc1.0), &d)?;
        grads.acc(hd.fc1.0, dw.data());
        grads.acc(hd.fc1.1, &db);
        global_avg_pool_backward(&d, pass.top_out.shape())
    }

    fn backward_impl(
        &self,
        pass: &ForwardPass<T>,
        grad_logits: &Tensor<T>,
        stop: Option<Feature>,
        grads: &mut Gradients<T>,
    ) -> Result<Option<Tensor<T>>> {
        if pass.blocks.len() != self.layout.blocks.len() {
            return Err(dim_err!("forward pass does not belong to this model"));
        }
        let mut d = self.head_backward(pass, grad_logits, grads)?;
        if stop == Some(Feature::Top) {
            return Ok(Some(d));
        }
        d = self.conv_bn_backward(&self.layout.top, &pass.top, &d, grads)?;
        for (i, (b, cache)) in self.layout.blocks.iter().zip(&pass.blocks).enumerate().rev() {
            if stop == Some(Feature::Block(i)) {
                return Ok(Some(d));
            }
            d = self.block_backward(b, cache, &d, grads)?;
        }
        if stop == Some(Feature::Stem) {
            return Ok(Some(d));
        }
        if let Some(f) = stop {
            return Err(arg_err!("layer {f:?} not found"));
        }
        self.conv_bn_backward(&self.layout.stem, &pass.stem, &d, grads)?;
        Ok(None)
    }

    /// Gradients of every trainable parameter given `d loss / d logits`.
    pub fn backward(&self, pass: &ForwardPass<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let mut grads = Gradients::for_params(&self.params);
        self.backward_impl(pass, grad_logits, None, &mut grads)?;
        Ok(grads)
    }

    /// Gradient of the scalar behind `grad_logits` with respect to a named
    /// backbone activation. Parameters are not modified.
    pub fn feature_gradient(
        &self,
        pass: &ForwardPass<T>,
        grad_logits: &Tensor<T>,
        feature: Feature,
    ) -> Result<Tensor<T>> {
        pass.feature(feature)?;
        let mut scratch = Gradients::for_params(&self.params);
        self.backward_impl(pass, grad_logits, Some(feature), &mut scratch)?
            .ok_or_else(|| arg_err!("layer {feature:?} not found"))
    }
}
