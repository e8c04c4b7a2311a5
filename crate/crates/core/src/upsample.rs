//! Coarse-to-fine depth upsampling: three 2x stages, each fusing the
//! upsampled depth and features with a higher-resolution context map and
//! predicting a residual over bilinear depth.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::io::WeightSet;
use crate::maps::{DepthMap, FeatureMap};
use crate::nn::{relu_in_place, upsample2x_depth, upsample2x_features, Conv2d};
use crate::refine::DEFAULT_MIN_DEPTH;

/// Default channel counts of `F1` (1/2), `F2` (1/4) and `F3` (1/8).
pub const CONTEXT_CHANNELS: [usize; 3] = [32, 48, 64];

/// Context features at 1/2, 1/4 and 1/8 of the output resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextPyramid {
    levels: [FeatureMap; 3],
}

impl ContextPyramid {
    /// `f1` is the finest map; each next map halves both dimensions.
    pub fn new(f1: FeatureMap, f2: FeatureMap, f3: FeatureMap) -> Result<Self> {
        for (fine, coarse) in [(&f1, &f2), (&f2, &f3)] {
            if (fine.height(), fine.width()) != (2 * coarse.height(), 2 * coarse.width()) {
                return Err(Error::shape(format!(
                    "context maps {}x{} and {}x{} do not halve",
                    fine.height(),
                    fine.width(),
                    coarse.height(),
                    coarse.width()
                )));
            }
        }
        Ok(Self { levels: [f1, f2, f3] })
    }

    /// `scale` 1, 2 or 3 for `F1`, `F2`, `F3`.
    pub fn level(&self, scale: usize) -> &FeatureMap {
        &self.levels[scale - 1]
    }

    pub fn channels(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.levels[i].channels())
    }
}

/// Weights of one 2x stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DffmStageWeights {
    pub fuse1: Conv2d,
    pub fuse2: Conv2d,
    pub head1: Conv2d,
    pub head2: Conv2d,
}

impl DffmStageWeights {
    fn build(
        feat_in: usize,
        context_in: usize,
        fused: usize,
        head_hidden: usize,
        make: &mut impl FnMut(usize, usize, usize) -> Conv2d,
    ) -> Self {
        Self {
            fuse1: make(1 + feat_in + context_in, fused, 3),
            fuse2: make(fused, fused, 3),
            head1: make(fused, head_hidden, 3),
            head2: make(head_hidden, 1, 3),
        }
    }

    pub fn zeros(feat_in: usize, context_in: usize, fused: usize, head_hidden: usize) -> Self {
        Self::build(feat_in, context_in, fused, head_hidden, &mut Conv2d::zeros)
    }

    /// Channels of the fused feature this stage emits.
    pub fn fused_channels(&self) -> usize {
        self.fuse2.out_channels()
    }

    fn layers(&self) -> [(&'static str, &Conv2d); 4] {
        [
            ("fuse1", &self.fuse1),
            ("fuse2", &self.fuse2),
            ("head1", &self.head1),
            ("head2", &self.head2),
        ]
    }

    fn validate(&self) -> Result<()> {
        let chain = [
            (&self.fuse1, &self.fuse2),
            (&self.fuse2, &self.head1),
            (&self.head1, &self.head2),
        ];
        if chain.iter().any(|(a, b)| a.out_channels() != b.in_channels()) || self.head2.out_channels() != 1 {
            return Err(Error::shape("dffm stage layer widths do not chain"));
        }
        Ok(())
    }
}

/// Stage weights for 1/8 -> 1/4, 1/4 -> 1/2 and 1/2 -> 1/1.
#[derive(Debug, Clone, PartialEq)]
pub struct DffmWeights {
    pub stages: [DffmStageWeights; 3],
}

const FUSED: [usize; 3] = [48, 32, 16];
const HEAD_HIDDEN: [usize; 3] = [32, 32, 16];

impl DffmWeights {
    fn build(context: [usize; 3], mut make: impl FnMut(usize, usize, usize) -> Conv2d) -> Self {
        let s0 = DffmStageWeights::build(context[2], context[1], FUSED[0], HEAD_HIDDEN[0], &mut make);
        let s1 = DffmStageWeights::build(FUSED[0], context[0], FUSED[1], HEAD_HIDDEN[1], &mut make);
        let s2 = DffmStageWeights::build(FUSED[1], 0, FUSED[2], HEAD_HIDDEN[2], &mut make);
        Self { stages: [s0, s1, s2] }
    }

    /// All-zero weights for context widths `[C1, C2, C3]`.
    pub fn zeros(context: [usize; 3]) -> Self {
        Self::build(context, Conv2d::zeros)
    }

    pub fn seeded(context: [usize; 3], seed: u64, scale: f32) -> Self {
        let mut rng = SplitMix64::seed_from_u64(seed);
        Self::build(context, |i, o, k| Conv2d::random(i, o, k, scale, &mut rng))
    }

    /// Entries `{prefix}stage{s}.{layer}.weight/.bias`.
    pub fn to_set(&self, prefix: &str) -> Result<WeightSet> {
        let mut set = WeightSet::new();
        for (s, stage) in self.stages.iter().enumerate() {
            for (name, conv) in stage.layers() {
                conv.insert_into(&mut set, &format!("{prefix}stage{s}.{name}"))?;
            }
        }
        Ok(set)
    }

    pub fn from_set(set: &WeightSet, prefix: &str) -> Result<Self> {
        let stage = |s: usize| -> Result<DffmStageWeights> {
            let conv = |name: &str| Conv2d::from_set(set, &format!("{prefix}stage{s}.{name}"));
            let w = DffmStageWeights {
                fuse1: conv("fuse1")?,
                fuse2: conv("fuse2")?,
                head1: conv("head1")?,
                head2: conv("head2")?,
            };
            w.validate()?;
            Ok(w)
        };
        Ok(Self {
            stages: [stage(0)?, stage(1)?, stage(2)?],
        })
    }
}

/// One 2x stage. Returns the fused feature `F~` and the upsampled depth
/// `bilinear2x(depth_lo) + head(F~)`.
///
/// Pixels whose bilinear depth is invalid stay invalid; the rest are floored at `min_depth`.
pub fn dffm(
    depth_lo: &DepthMap,
    feat_lo: &FeatureMap,
    context_hi: Option<&FeatureMap>,
    w: &DffmStageWeights,
    min_depth: f64,
) -> Result<(FeatureMap, DepthMap)> {
    let (h, wd) = (depth_lo.height(), depth_lo.width());
    if (feat_lo.height(), feat_lo.width()) != (h, wd) {
        return Err(Error::shape(format!(
            "stage feature is {}x{}, depth is {h}x{wd}",
            feat_lo.height(),
            feat_lo.width()
        )));
    }
    if let Some(ctx) = context_hi {
        if (ctx.height(), ctx.width()) != (2 * h, 2 * wd) {
            return Err(Error::shape(format!(
                "context is {}x{}, expected {}x{}",
                ctx.height(),
                ctx.width(),
                2 * h,
                2 * wd
            )));
        }
    }
    let context_channels = context_hi.map_or(0, FeatureMap::channels);
    let expected = 1 + feat_lo.channels() + context_channels;
    if w.fuse1.in_channels() != expected {
        return Err(Error::shape(format!(
            "stage input has {expected} channels, weights expect {}",
            w.fuse1.in_channels()
        )));
    }
    w.validate()?;

    let depth_up = upsample2x_depth(depth_lo);
    let feat_up = upsample2x_features(feat_lo);
    let depth_feat = depth_up.to_feature_map();
    let mut parts = vec![&depth_feat, &feat_up];
    if let Some(ctx) = context_hi {
        parts.push(ctx);
    }
    let x = FeatureMap::concat_channels(&parts)?;
    let mut fused = w.fuse1.forward(&x)?;
    relu_in_place(&mut fused);
    fused = w.fuse2.forward(&fused)?;
    relu_in_place(&mut fused);
    let mut mid = w.head1.forward(&fused)?;
    relu_in_place(&mut mid);
    let residual = w.head2.forward(&mid)?;

    let mut depth_hi = depth_up;
    for (d, r) in depth_hi.data_mut().iter_mut().zip(residual.data()) {
        if *d > 0.0 {
            *d = (*d + *r as f64).max(min_depth);
        }
    }
    Ok((fused, depth_hi))
}

/// Runs the three stages from 1/8 to full resolution.
pub fn upsample_depth(depth: &DepthMap, context: &ContextPyramid, w: &DffmWeights) -> Result<DepthMap> {
    upsample_depth_with(depth, context, w, DEFAULT_MIN_DEPTH)
}

pub fn upsample_depth_with(
    depth: &DepthMap,
    context: &ContextPyramid,
    w: &DffmWeights,
    min_depth: f64,
) -> Result<DepthMap> {
    let f3 = context.level(3);
    if (f3.height(), f3.width()) != (depth.height(), depth.width()) {
        return Err(Error::shape(format!(
            "F3 is {}x{}, depth is {}x{}",
            f3.height(),
            f3.width(),
            depth.height(),
            depth.width()
        )));
    }
    let (feat, d) = dffm(depth, f3, Some(context.level(2)), &w.stages[0], min_depth)?;
    let (feat, d) = dffm(&d, &feat, Some(context.level(1)), &w.stages[1], min_depth)?;
    let (_, d) = dffm(&d, &feat, None, &w.stages[2], min_depth)?;
    Ok(d)
}

/// Three chained half-pixel bilinear 2x upsamplings.
pub fn bilinear_upsample8x(depth: &DepthMap) -> DepthMap {
    upsample2x_depth(&upsample2x_depth(&upsample2x_depth(depth)))
}
