//! Declarative stage tables and compound scaling.
//!
//! A network is described stage by stage (operator, kernel, stride, output
//! channels, repeats). Compound scaling multiplies depth by `alpha^phi`, width
//! by `beta^phi` and input resolution by `gamma^phi`.

use std::fmt;

use crate::error::{arg_err, Result};
use crate::ops::norm::DEFAULT_MOMENTUM;

pub const DEFAULT_ALPHA: f64 = 1.2;
pub const DEFAULT_BETA: f64 = 1.1;
pub const DEFAULT_GAMMA: f64 = 1.15;

/// Channel counts are rounded to a multiple of this.
pub const CHANNEL_DIVISOR: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub phi: f64,
}

impl Default for ScalingCoefficients {
    fn default() -> Self {
        ScalingCoefficients {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            phi: 0.0,
        }
    }
}

impl ScalingCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma: f64, phi: f64) -> Result<Self> {
        let c = ScalingCoefficients {
            alpha,
            beta,
            gamma,
            phi,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_phi(phi: f64) -> Result<Self> {
        Self::new(DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_GAMMA, phi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0 && self.beta >= 1.0 && self.gamma >= 1.0) {
            return Err(arg_err!(
                "scaling bases must be >= 1 (alpha {}, beta {}, gamma {})",
                self.alpha,
                self.beta,
                self.gamma
            ));
        }
        if !(self.phi >= 0.0) || !self.phi.is_finite() {
            return Err(arg_err!("compound coefficient phi must be >= 0, got {}", self.phi));
        }
        Ok(())
    }

    pub fn depth(&self) -> f64 {
        self.alpha.powf(self.phi)
    }

    pub fn width(&self) -> f64 {
        self.beta.powf(self.phi)
    }

    pub fn resolution(&self) -> f64 {
        self.gamma.powf(self.phi)
    }

    /// `alpha * beta^2 * gamma^2`, nominally 2.
    pub fn constraint_product(&self) -> f64 {
        self.alpha * self.beta * self.beta * self.gamma * self.gamma
    }

    /// True when the constraint product is within 10% of 2.
    pub fn constraint_ok(&self) -> bool {
        (self.constraint_product() - 2.0).abs() <= 0.2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOp {
    Conv,
    MbConv1,
    MbConv6,
}

impl StageOp {
    pub fn expansion(self) -> usize {
        match self {
            StageOp::Conv | StageOp::MbConv1 => 1,
            StageOp::MbConv6 => 6,
        }
    }

    pub fn is_mbconv(self) -> bool {
        !matches!(self, StageOp::Conv)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub op: StageOp,
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    pub repeats: usize,
    /// Squeeze-excite reduction ratio applied to the expanded channel count.
    pub se_ratio: Option<usize>,
    /// Residual connections are allowed in this stage (still subject to
    /// stride 1 and matching channels).
    pub skip: bool,
}

impl Stage {
    pub fn conv(kernel: usize, stride: usize, channels: usize) -> Self {
        Stage {
            op: StageOp::Conv,
            kernel,
            stride,
            channels,
            repeats: 1,
            se_ratio: None,
            skip: false,
        }
    }

    pub fn mb(op: StageOp, kernel: usize, stride: usize, channels: usize, repeats: usize) -> Self {
        let (se_ratio, skip) = match op {
            StageOp::MbConv1 => (Some(4), false),
            _ => (Some(24), true),
        };
        Stage {
            op,
            kernel,
            stride,
            channels,
            repeats,
            se_ratio,
            skip,
        }
    }

    /// Stride of the `index`-th repeat: only the first repeat downsamples.
    pub fn stride_of(&self, index: usize) -> usize {
        if index == 0 {
            self.stride
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    pub stages: Vec<Stage>,
    pub resolution: usize,
    pub num_classes: usize,
    /// Width of the two hidden classifier layers.
    pub head_units: usize,
    pub head_dropout: f64,
    /// Drop rate on MBConv residual branches (training only).
    pub residual_dropout: f64,
    /// Weight on the old value when folding batch statistics into the
    /// running averages.
    pub bn_momentum: f64,
    pub scaling: ScalingCoefficients,
}

/// Input resolutions used by the named presets B0..B5.
pub const PRESET_RESOLUTIONS: [usize; 6] = [224, 240, 260, 360, 380, 456];

impl ArchSpec {
    /// The baseline nine-stage table at 224×224.
    pub fn b0(num_classes: usize) -> Self {
        use StageOp::*;
        ArchSpec {
            name: "b0".into(),
            stages: vec![
                Stage::conv(3, 2, 32),
                Stage::mb(MbConv1, 3, 1, 16, 1),
                Stage::mb(MbConv6, 3, 2, 24, 2),
                Stage::mb(MbConv6, 5, 2, 40, 2),
                Stage::mb(MbConv6, 3, 2, 80, 3),
                Stage::mb(MbConv6, 5, 1, 112, 3),
                Stage::mb(MbConv6, 5, 2, 192, 4),
                Stage::mb(MbConv6, 3, 1, 320, 1),
                Stage::conv(1, 1, 1280),
            ],
            resolution: 224,
            num_classes,
            head_units: 512,
            head_dropout: 0.3,
            residual_dropout: 0.2,
            bn_momentum: DEFAULT_MOMENTUM,
            scaling: ScalingCoefficients::default(),
        }
    }

    /// Small network for 48×48 toy data, under 200k parameters. Wide, shallow
    /// stages and a faster batch-norm momentum let it converge within the
    /// default 25-epoch schedule.
    pub fn micro(num_classes: usize) -> Self {
        use StageOp::*;
        ArchSpec {
            name: "micro".into(),
            stages: vec![
                Stage::conv(3, 2, 32),
                Stage::mb(MbConv1, 3, 1, 16, 1),
                Stage::mb(MbConv6, 5, 2, 24, 1),
                Stage::mb(MbConv6, 5, 2, 40, 1),
                Stage::mb(MbConv6, 5, 2, 64, 1),
                Stage::mb(MbConv6, 5, 2, 96, 1),
                Stage::conv(1, 1, 192),
            ],
            resolution: 48,
            num_classes,
            head_units: 96,
            head_dropout: 0.3,
            residual_dropout: 0.2,
            bn_momentum: 0.9,
            scaling: ScalingCoefficients::default(),
        }
    }

    /// `b0`..`b5` (compound coefficient 0..5 with the tabulated resolutions) or `micro`.
    pub fn preset(name: &str, num_classes: usize) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        if lower == "micro" {
            return Ok(Self::micro(num_classes));
        }
        let idx = lower
            .strip_prefix('b')
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|&d| d < PRESET_RESOLUTIONS.len())
            .ok_or_else(|| arg_err!("unknown preset {name:?} (expected b0..b5 or micro)"))?;
        let mut spec = scale_arch(&Self::b0(num_classes), ScalingCoefficients::with_phi(idx as f64)?)?;
        spec.resolution = PRESET_RESOLUTIONS[idx];
        spec.name = lower;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (first, last) = match (self.stages.first(), self.stages.last()) {
            (Some(f), Some(l)) if self.stages.len() >= 2 => (f, l),
            _ => return Err(arg_err!("architecture needs at least a stem and a top stage")),
        };
        if first.op != StageOp::Conv || last.op != StageOp::Conv || last.kernel != 1 {
            return Err(arg_err!(
                "architecture must start with a convolution and end with a 1x1 convolution"
            ));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.kernel == 0 || s.kernel % 2 == 0 || s.stride == 0 || s.channels == 0 || s.repeats == 0
            {
                return Err(arg_err!("stage {} has an invalid shape: {:?}", i + 1, s));
            }
            if s.op.is_mbconv() && s.se_ratio == Some(0) {
                return Err(arg_err!("stage {} has squeeze-excite ratio 0", i + 1));
            }
        }
        if self.num_classes == 0 || self.head_units == 0 {
            return Err(arg_err!("classes and head width must be positive"));
        }
        for p in [self.head_dropout, self.residual_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(arg_err!("dropout rate {p} outside [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(arg_err!("batch-norm momentum {} outside [0, 1)", self.bn_momentum));
        }
        Ok(())
    }

    /// Product of all stage strides.
    pub fn downsampling(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    /// Spatial extent entering each stage.
    pub fn stage_resolutions(&self) -> Vec<usize> {
        let mut r = self.resolution;
        self.stages
            .iter()
            .map(|s| {
                let here = r;
                r = r.div_ceil(s.stride);
                here
            })
            .collect()
    }

    /// Number of MBConv blocks after expanding repeats.
    pub fn block_count(&self) -> usize {
        self.stages
            .iter()
            .filter(|s| s.op.is_mbconv())
            .map(|s| s.repeats)
            .sum()
    }

    pub fn top_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.channels)
    }
}

impl fmt::Display for ArchSpec {
    /// The stage table: stage, operator, input resolution, output maps, layers.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<6}{:<28}{:<12}{:<10}{}",
            "Stage", "Operator", "Resolution", "Channels", "Layers"
        )?;
        let last = self.stages.len() - 1;
        for (i, (s, r)) in self.stages.iter().zip(self.stage_resolutions()).enumerate() {
            let op = match s.op {
                StageOp::Conv if i == last && last > 0 => {
                    format!("Conv {0}x{0} & Pooling & FC", s.kernel)
                }
                StageOp::Conv => format!("Conv {0}x{0}", s.kernel),
                StageOp::MbConv1 => format!("MBConv1, k{0}x{0}", s.kernel),
                StageOp::MbConv6 => format!("MBConv6, k{0}x{0}", s.kernel),
            };
            writeln!(
                f,
                "{:<6}{:<28}{:<12}{:<10}{}",
                i + 1,
                op,
                format!("{r}x{r}"),
                s.channels,
                s.repeats
            )?;
        }
        Ok(())
    }
}

/// Rounds `channels * multiplier` to a multiple of [`CHANNEL_DIVISOR`], never
/// dropping below 90% of the unrounded value.
pub fn round_channels(channels: usize, multiplier: f64) -> usize {
    let d = CHANNEL_DIVISOR as f64;
    let v = channels as f64 * multiplier;
    let mut rounded = (((v + d / 2.0) / d).floor() * d).max(d);
    if rounded < 0.9 * v {
        rounded += d;
    }
    rounded as usize
}

pub fn round_repeats(repeats: usize, multiplier: f64) -> usize {
    // Guard against 2.0000000000000004-style products rounding up.
    let v = repeats as f64 * multiplier;
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r as usize
    } else {
        v.ceil() as usize
    }
}

/// Applies compound scaling to a base table. Convolution stages (stem and top)
/// keep a single layer; MBConv stages get `ceil(repeats * d)` layers. Every
/// stage's channels are widened by `w`, and the resolution becomes
/// `round(resolution * r)`.
pub fn scale_arch(base: &ArchSpec, coeffs: ScalingCoefficients) -> Result<ArchSpec> {
    coeffs.validate()?;
    if !coeffs.constraint_ok() {
        log::warn!(
            "scaling constraint alpha*beta^2*gamma^2 = {:.4} is more than 10% away from 2",
            coeffs.constraint_product()
        );
    }
    let mut spec = base.clone();
    spec.scaling = coeffs;
    if coeffs.phi == 0.0 {
        return Ok(spec);
    }
    let (d, w, r) = (coeffs.depth(), coeffs.width(), coeffs.resolution());
    for s in &mut spec.stages {
        s.channels = round_channels(s.channels, w);
        if s.op.is_mbconv() {
            s.repeats = round_repeats(s.repeats, d);
        }
    }
    spec.resolution = (base.resolution as f64 * r).round() as usize;
    spec.name = format!("{}@phi={}", base.name, coeffs.phi);
    Ok(spec)
}
