//! Convolutional GRU depth updater.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use super::{floor_depth, DepthUpdater, UpdateStep};
use crate::correlation::CorrelationFeatureMap;
use crate::error::{Error, Result};
use crate::io::{Tensor, WeightSet};
use crate::maps::{DepthMap, FeatureMap};
use crate::nn::{relu_in_place, sigmoid_in_place, tanh_in_place, Conv2d};

/// Channel widths of the recurrent updater.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruChannels {
    /// Hidden state width.
    pub hidden: usize,
    /// Length of the fused correlation vector fed in.
    pub correlation: usize,
    /// Output width of the correlation pre-convolution.
    pub correlation_out: usize,
    /// Output width of the depth pre-convolution.
    pub depth_out: usize,
    /// Channels of the context feature map.
    pub context: usize,
    /// Context channels concatenated into the GRU input.
    pub context_out: usize,
    /// Hidden width of the depth head.
    pub head_hidden: usize,
}

impl Default for GruChannels {
    fn default() -> Self {
        Self {
            hidden: 64,
            correlation: 196,
            correlation_out: 64,
            depth_out: 16,
            context: 64,
            context_out: 16,
            head_hidden: 64,
        }
    }
}

impl GruChannels {
    /// Width of the update input `x`.
    pub fn input(&self) -> usize {
        self.correlation_out + self.depth_out + self.context_out
    }

    fn as_array(&self) -> [usize; 7] {
        [
            self.hidden,
            self.correlation,
            self.correlation_out,
            self.depth_out,
            self.context,
            self.context_out,
            self.head_hidden,
        ]
    }

    fn from_array(v: [usize; 7]) -> Self {
        Self {
            hidden: v[0],
            correlation: v[1],
            correlation_out: v[2],
            depth_out: v[3],
            context: v[4],
            context_out: v[5],
            head_hidden: v[6],
        }
    }
}

/// Parameters of the updater. Every layer is 3x3 except the two 1x1
/// context projections.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub channels: GruChannels,
    pub correlation_pre: Conv2d,
    pub depth_pre: Conv2d,
    pub context_proj: Conv2d,
    /// Projects context to the initial hidden state; zeros when absent.
    pub hidden_init: Option<Conv2d>,
    pub gate_update: Conv2d,
    pub gate_reset: Conv2d,
    pub candidate: Conv2d,
    pub head1: Conv2d,
    pub head2: Conv2d,
}

const LAYERS: [&str; 8] = [
    "correlation_pre",
    "depth_pre",
    "context_proj",
    "gate_update",
    "gate_reset",
    "candidate",
    "head1",
    "head2",
];

impl GruWeights {
    fn build(channels: GruChannels, mut make: impl FnMut(usize, usize, usize) -> Conv2d) -> Self {
        let c = channels;
        let gate_in = c.hidden + c.input();
        Self {
            correlation_pre: make(c.correlation, c.correlation_out, 3),
            depth_pre: make(1, c.depth_out, 3),
            context_proj: make(c.context, c.context_out, 1),
            hidden_init: Some(make(c.context, c.hidden, 1)),
            gate_update: make(gate_in, c.hidden, 3),
            gate_reset: make(gate_in, c.hidden, 3),
            candidate: make(gate_in, c.hidden, 3),
            head1: make(c.hidden, c.head_hidden, 3),
            head2: make(c.head_hidden, 1, 3),
            channels,
        }
    }

    pub fn zeros(channels: GruChannels) -> Self {
        Self::build(channels, Conv2d::zeros)
    }

    /// Uniform weights in `[-scale, scale]` from a SplitMix64 stream seeded with `seed`.
    pub fn seeded(channels: GruChannels, seed: u64, scale: f32) -> Self {
        let mut rng = SplitMix64::seed_from_u64(seed);
        Self::build(channels, |i, o, k| Conv2d::random(i, o, k, scale, &mut rng))
    }

    fn layers(&self) -> [(&'static str, &Conv2d); 8] {
        [
            (LAYERS[0], &self.correlation_pre),
            (LAYERS[1], &self.depth_pre),
            (LAYERS[2], &self.context_proj),
            (LAYERS[3], &self.gate_update),
            (LAYERS[4], &self.gate_reset),
            (LAYERS[5], &self.candidate),
            (LAYERS[6], &self.head1),
            (LAYERS[7], &self.head2),
        ]
    }

    /// Checks every layer against the declared channel widths.
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        let gate_in = c.hidden + c.input();
        let expect = [
            (c.correlation, c.correlation_out, 3),
            (1, c.depth_out, 3),
            (c.context, c.context_out, 1),
            (gate_in, c.hidden, 3),
            (gate_in, c.hidden, 3),
            (gate_in, c.hidden, 3),
            (c.hidden, c.head_hidden, 3),
            (c.head_hidden, 1, 3),
        ];
        for ((name, conv), (i, o, k)) in self.layers().iter().zip(expect) {
            if (conv.in_channels(), conv.out_channels(), conv.kernel()) != (i, o, k) {
                return Err(Error::shape(format!(
                    "gru layer {name} is {}->{} k{}, expected {i}->{o} k{k}",
                    conv.in_channels(),
                    conv.out_channels(),
                    conv.kernel()
                )));
            }
        }
        if let Some(init) = &self.hidden_init {
            if (init.in_channels(), init.out_channels(), init.kernel()) != (c.context, c.hidden, 1) {
                return Err(Error::shape("gru layer hidden_init does not match channel header"));
            }
        }
        Ok(())
    }

    /// Entries `{prefix}channels` plus `{prefix}{layer}.weight/.bias`.
    pub fn to_set(&self, prefix: &str) -> Result<WeightSet> {
        let mut set = WeightSet::new();
        let header = self.channels.as_array().iter().map(|v| *v as f32).collect();
        set.insert(format!("{prefix}channels"), Tensor::new(vec![7], header)?)?;
        for (name, conv) in self.layers() {
            conv.insert_into(&mut set, &format!("{prefix}{name}"))?;
        }
        if let Some(init) = &self.hidden_init {
            init.insert_into(&mut set, &format!("{prefix}hidden_init"))?;
        }
        Ok(set)
    }

    pub fn from_set(set: &WeightSet, prefix: &str) -> Result<Self> {
        let header = set.require(&format!("{prefix}channels"))?;
        if header.dims() != [7] {
            return Err(Error::shape(format!("{prefix}channels must hold 7 sizes")));
        }
        let mut sizes = [0usize; 7];
        for (slot, v) in sizes.iter_mut().zip(header.data()) {
            if !(*v >= 1.0 && v.fract() == 0.0) {
                return Err(Error::shape(format!("{prefix}channels has invalid size {v}")));
            }
            *slot = *v as usize;
        }
        let conv = |name: &str| Conv2d::from_set(set, &format!("{prefix}{name}"));
        let hidden_init = if set.get(&format!("{prefix}hidden_init.weight")).is_some() {
            Some(conv("hidden_init")?)
        } else {
            None
        };
        let weights = Self {
            channels: GruChannels::from_array(sizes),
            correlation_pre: conv(LAYERS[0])?,
            depth_pre: conv(LAYERS[1])?,
            context_proj: conv(LAYERS[2])?,
            hidden_init,
            gate_update: conv(LAYERS[3])?,
            gate_reset: conv(LAYERS[4])?,
            candidate: conv(LAYERS[5])?,
            head1: conv(LAYERS[6])?,
            head2: conv(LAYERS[7])?,
        };
        weights.validate()?;
        Ok(weights)
    }
}

/// Hidden state carried across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub hidden: FeatureMap,
}

impl GruState {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            hidden: FeatureMap::zeros(height, width, channels),
        }
    }

    /// `tanh(hidden_init(context))`, or zeros without context or projection.
    pub fn initial(context: Option<&FeatureMap>, w: &GruWeights, height: usize, width: usize) -> Result<Self> {
        match (context, &w.hidden_init) {
            (Some(ctx), Some(init)) => {
                check_context(ctx, w, height, width)?;
                let mut hidden = init.forward(ctx)?;
                tanh_in_place(&mut hidden);
                Ok(Self { hidden })
            }
            _ => Ok(Self::zeros(height, width, w.channels.hidden)),
        }
    }
}

fn check_context(ctx: &FeatureMap, w: &GruWeights, height: usize, width: usize) -> Result<()> {
    if (ctx.height(), ctx.width()) != (height, width) {
        return Err(Error::shape(format!(
            "context is {}x{}, depth grid is {height}x{width}",
            ctx.height(),
            ctx.width()
        )));
    }
    if ctx.channels() != w.channels.context {
        return Err(Error::shape(format!(
            "context has {} channels, weights expect {}",
            ctx.channels(),
            w.channels.context
        )));
    }
    Ok(())
}

/// One GRU step:
///
/// ```text
/// z  = sigmoid(conv_z([h, x]))
/// r  = sigmoid(conv_r([h, x]))
/// h~ = tanh(conv_h([r * h, x]))
/// h' = (1 - z) * h + z * h~
/// ```
pub fn gru_cell(state: &GruState, x: &FeatureMap, w: &GruWeights) -> Result<GruState> {
    let h = &state.hidden;
    if h.channels() != w.channels.hidden {
        return Err(Error::shape(format!(
            "hidden state has {} channels, weights expect {}",
            h.channels(),
            w.channels.hidden
        )));
    }
    if x.channels() != w.channels.input() {
        return Err(Error::shape(format!(
            "update input has {} channels, weights expect {}",
            x.channels(),
            w.channels.input()
        )));
    }
    if !h.same_grid(x) {
        return Err(Error::shape("hidden state and update input differ in size"));
    }
    let hx = FeatureMap::concat_channels(&[h, x])?;
    let mut z = w.gate_update.forward(&hx)?;
    sigmoid_in_place(&mut z);
    let mut r = w.gate_reset.forward(&hx)?;
    sigmoid_in_place(&mut r);
    let mut rh = r;
    rh.data_mut().iter_mut().zip(h.data()).for_each(|(r, h)| *r *= h);
    let mut q = w.candidate.forward(&FeatureMap::concat_channels(&[&rh, x])?)?;
    tanh_in_place(&mut q);
    let mut next = z;
    next.data_mut()
        .iter_mut()
        .zip(h.data().iter().zip(q.data()))
        .for_each(|(z, (h, q))| *z = (1.0 - *z) * h + *z * q);
    Ok(GruState { hidden: next })
}

/// Builds `x = [relu(pre_v(V)), relu(pre_d(D)), relu(proj(F))]`.
pub fn update_input(
    depth: &DepthMap,
    correlation: &CorrelationFeatureMap,
    context: Option<&FeatureMap>,
    w: &GruWeights,
) -> Result<FeatureMap> {
    let (h, wd) = (depth.height(), depth.width());
    if (correlation.height(), correlation.width()) != (h, wd) {
        return Err(Error::shape(format!(
            "correlation map is {}x{}, depth is {h}x{wd}",
            correlation.height(),
            correlation.width()
        )));
    }
    if correlation.len() != w.channels.correlation {
        return Err(Error::shape(format!(
            "correlation vectors have length {}, weights expect {}",
            correlation.len(),
            w.channels.correlation
        )));
    }
    let mut cv = w.correlation_pre.forward(&correlation.to_feature_map())?;
    relu_in_place(&mut cv);
    let mut cd = w.depth_pre.forward(&depth.to_feature_map())?;
    relu_in_place(&mut cd);
    let ctx_in = match context {
        Some(ctx) => {
            check_context(ctx, w, h, wd)?;
            w.context_proj.forward(ctx)?
        }
        None => w.context_proj.forward(&FeatureMap::zeros(h, wd, w.channels.context))?,
    };
    let mut cc = ctx_in;
    relu_in_place(&mut cc);
    FeatureMap::concat_channels(&[&cv, &cd, &cc])
}

/// Residual depth from the hidden state: `head2(relu(head1(h)))`.
pub fn depth_residual(state: &GruState, w: &GruWeights) -> Result<FeatureMap> {
    let mut mid = w.head1.forward(&state.hidden)?;
    relu_in_place(&mut mid);
    w.head2.forward(&mid)
}

/// `D_t = max(D_{t-1} + delta, min_depth)` on valid pixels, with the updated state.
pub fn depth_update_step(
    depth: &DepthMap,
    correlation: &CorrelationFeatureMap,
    context: Option<&FeatureMap>,
    state: &GruState,
    w: &GruWeights,
    min_depth: f64,
) -> Result<(DepthMap, GruState)> {
    let x = update_input(depth, correlation, context, w)?;
    let next = gru_cell(state, &x, w)?;
    let delta = depth_residual(&next, w)?;
    let mut out = depth.clone();
    for (d, r) in out.data_mut().iter_mut().zip(delta.data()) {
        if *d > 0.0 {
            *d = floor_depth(*d + *r as f64, min_depth);
        }
    }
    Ok((out, next))
}

/// [`DepthUpdater`] running the GRU; the hidden state persists across iterations.
pub struct GruUpdater<'a> {
    weights: &'a GruWeights,
    context: Option<&'a FeatureMap>,
    state: Option<GruState>,
    min_depth: f64,
}

impl<'a> GruUpdater<'a> {
    pub fn new(weights: &'a GruWeights, context: Option<&'a FeatureMap>, min_depth: f64) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            weights,
            context,
            state: None,
            min_depth,
        })
    }

    pub fn state(&self) -> Option<&GruState> {
        self.state.as_ref()
    }
}

impl DepthUpdater for GruUpdater<'_> {
    fn update(&mut self, step: &UpdateStep<'_>) -> Result<DepthMap> {
        let state = match self.state.take() {
            Some(s) => s,
            None => GruState::initial(self.context, self.weights, step.depth.height(), step.depth.width())?,
        };
        let (depth, next) = depth_update_step(
            step.depth,
            step.fused,
            self.context,
            &state,
            self.weights,
            self.min_depth,
        )?;
        self.state = Some(next);
        Ok(depth)
    }
}
