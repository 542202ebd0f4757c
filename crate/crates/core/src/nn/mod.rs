//! Policy-value network with hand-written reverse-mode gradients.
//!
//! Two patches go through a small convolutional encoder (shared weights by
//! default), the flattened maps are concatenated and fed to ReLU dense
//! layers, an LSTM cell, and two heads: `mu = tanh(W_a h + b_a)` (four action
//! components) and a linear scalar value.
//!
//! All parameters live in one flat vector; [`Layout`] names the blocks.
//! Gradients use the same layout. Backpropagation through time runs over a
//! [`Tape`] of recorded steps; the recurrent state entering the first taped
//! step is treated as a constant.

pub mod check;
pub mod layers;
pub mod loss;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::ActionDelta;
use crate::mdp::Observation;
use crate::rng::PortableRng;
use layers::{ConvShape, LstmCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub channels: usize,
    pub conv: Vec<ConvSpec>,
    pub fc: Vec<usize>,
    pub recurrent: usize,
    pub shared_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            channels: 1,
            conv: vec![
                ConvSpec {
                    filters: 8,
                    kernel: 3,
                    stride: 2,
                },
                ConvSpec {
                    filters: 16,
                    kernel: 3,
                    stride: 2,
                },
            ],
            fc: vec![64, 64],
            recurrent: 64,
            shared_encoder: true,
        }
    }
}

pub const ACTION_DIM: usize = 4;

impl ModelConfig {
    /// Smallest sensible network, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            patch_size: 8,
            channels: 1,
            conv: vec![
                ConvSpec {
                    filters: 2,
                    kernel: 3,
                    stride: 2,
                },
                ConvSpec {
                    filters: 3,
                    kernel: 3,
                    stride: 1,
                },
            ],
            fc: vec![5, 4],
            recurrent: 3,
            shared_encoder: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 || self.channels == 0 {
            return Err(Error::Config(
                "patch_size >= 8 and channels >= 1 required".into(),
            ));
        }
        if self.fc.iter().any(|w| *w == 0) || self.recurrent == 0 {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        let mut hw = self.patch_size;
        for c in &self.conv {
            if c.filters == 0 || c.kernel == 0 || c.stride == 0 || c.kernel > hw {
                return Err(Error::Config(format!(
                    "conv layer {c:?} does not fit a {hw}x{hw} map"
                )));
            }
            hw = (hw - c.kernel) / c.stride + 1;
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        let conv: Vec<String> = self
            .conv
            .iter()
            .map(|c| format!("{}x{}s{}", c.filters, c.kernel, c.stride))
            .collect();
        let fc: Vec<String> = self.fc.iter().map(|v| v.to_string()).collect();
        format!(
            "patch_size={}\nchannels={}\nconv={}\nfc={}\nrecurrent={}\nshared_encoder={}\n",
            self.patch_size,
            self.channels,
            conv.join(";"),
            fc.join(";"),
            self.recurrent,
            self.shared_encoder
        )
    }

    /// Sets one field from text; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value `{value}` for model key `{key}`"));
        let v = value.trim();
        match key {
            "patch_size" => self.patch_size = v.parse().map_err(|_| bad())?,
            "channels" => self.channels = v.parse().map_err(|_| bad())?,
            "recurrent" => self.recurrent = v.parse().map_err(|_| bad())?,
            "shared_encoder" => self.shared_encoder = v.parse().map_err(|_| bad())?,
            "fc" => {
                self.fc = v
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.trim().parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?
            }
            "conv" => {
                self.conv = v
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        let (f, rest) = s.split_once('x').ok_or_else(bad)?;
                        let (k, st) = rest.split_once('s').ok_or_else(bad)?;
                        Ok(ConvSpec {
                            filters: f.trim().parse().map_err(|_| bad())?,
                            kernel: k.trim().parse().map_err(|_| bad())?,
                            stride: st.trim().parse().map_err(|_| bad())?,
                        })
                    })
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown model key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One named parameter block inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub total: usize,
}

impl Layout {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        let spec = ParamSpec {
            name,
            shape,
            offset,
        };
        self.total += spec.len();
        self.specs.push(spec);
        offset
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvPlan {
    shape: ConvShape,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct DensePlan {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

impl DensePlan {
    fn w_len(&self) -> usize {
        self.n_in * self.n_out
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmPlan {
    n_in: usize,
    hidden: usize,
    w_ih: usize,
    w_hh: usize,
    b: usize,
}

/// Offsets of every layer, derived from the config.
#[derive(Debug, Clone)]
struct Plan {
    branches: [Vec<ConvPlan>; 2],
    fc: Vec<DensePlan>,
    lstm: LstmPlan,
    head_action: DensePlan,
    head_value: DensePlan,
    feature_len: usize,
}

fn build_plan(cfg: &ModelConfig) -> (Plan, Layout) {
    let mut layout = Layout::default();
    let conv_branch = |layout: &mut Layout, prefix: &str| {
        let mut plans = Vec::new();
        let (mut c, mut hw) = (cfg.channels, cfg.patch_size);
        for (i, spec) in cfg.conv.iter().enumerate() {
            let out_hw = (hw - spec.kernel) / spec.stride + 1;
            let shape = ConvShape {
                in_c: c,
                in_hw: hw,
                out_c: spec.filters,
                out_hw,
                kernel: spec.kernel,
                stride: spec.stride,
            };
            let w = layout.push(
                format!("{prefix}.conv{}.weight", i + 1),
                vec![spec.filters, c, spec.kernel, spec.kernel],
            );
            let b = layout.push(format!("{prefix}.conv{}.bias", i + 1), vec![spec.filters]);
            plans.push(ConvPlan { shape, w, b });
            c = spec.filters;
            hw = out_hw;
        }
        (plans, c * hw * hw)
    };
    let (first, flat) = if cfg.shared_encoder {
        conv_branch(&mut layout, "encoder")
    } else {
        conv_branch(&mut layout, "encoder_prev")
    };
    let second = if cfg.shared_encoder {
        first.clone()
    } else {
        conv_branch(&mut layout, "encoder_cur").0
    };
    let feature_len = 2 * flat;

    let dense = |layout: &mut Layout, name: &str, n_in: usize, n_out: usize| {
        let w = layout.push(format!("{name}.weight"), vec![n_out, n_in]);
        let b = layout.push(format!("{name}.bias"), vec![n_out]);
        DensePlan { n_in, n_out, w, b }
    };
    let mut fc = Vec::new();
    let mut width = feature_len;
    for (i, &n) in cfg.fc.iter().enumerate() {
        fc.push(dense(&mut layout, &format!("fc{}", i + 1), width, n));
        width = n;
    }
    let hid = cfg.recurrent;
    let w_ih = layout.push("lstm.weight_ih".into(), vec![4 * hid, width]);
    let w_hh = layout.push("lstm.weight_hh".into(), vec![4 * hid, hid]);
    let b = layout.push("lstm.bias".into(), vec![4 * hid]);
    let lstm = LstmPlan {
        n_in: width,
        hidden: hid,
        w_ih,
        w_hh,
        b,
    };
    let head_action = dense(&mut layout, "head.action", hid, ACTION_DIM);
    let head_value = dense(&mut layout, "head.value", hid, 1);
    (
        Plan {
            branches: [first, second],
            fc,
            lstm,
            head_action,
            head_value,
            feature_len,
        },
        layout,
    )
}

/// LSTM hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(width: usize) -> Self {
        Self {
            hidden: vec![0.0; width],
            cell: vec![0.0; width],
        }
    }
}

/// Network outputs for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub mu: ActionDelta,
    pub value: f64,
}

/// Loss gradient w.r.t. the outputs of one taped step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputGrad {
    pub d_mu: [f64; ACTION_DIM],
    pub d_value: f64,
}

#[derive(Debug, Clone)]
struct StepCache {
    /// Per branch: input patch followed by each conv activation.
    maps: [Vec<Vec<f64>>; 2],
    /// Input of every dense layer plus the final dense activation.
    fc_acts: Vec<Vec<f64>>,
    lstm: LstmCache,
    mu: [f64; ACTION_DIM],
}

/// Recorded forward steps of one rollout, oldest first.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    steps: Vec<StepCache>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn len(&self) -> usize {
        self.steps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
    pub fn clear(&mut self) {
        self.steps.clear();
    }
}

/// The parameters `theta` together with the architecture they belong to.
#[derive(Debug, Clone)]
pub struct PolicyValueNet {
    cfg: ModelConfig,
    plan: Plan,
    layout: Layout,
    pub params: Vec<f64>,
}

impl PartialEq for PolicyValueNet {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.params == other.params
    }
}

impl PolicyValueNet {
    /// All-zero parameters: `mu = 0` and `value = 0` for every input.
    pub fn zeroed(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (plan, layout) = build_plan(cfg);
        let params = vec![0.0; layout.total];
        Ok(Self {
            cfg: cfg.clone(),
            plan,
            layout,
            params,
        })
    }

    /// Fan-in scaled uniform initialization, forget-gate bias 1, biases 0.
    ///
    /// ReLU layers draw from `U(-sqrt(6/fan_in), sqrt(6/fan_in))`; the LSTM and
    /// the value head from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; the action head
    /// uses a tenth of that so an untrained policy starts near the zero action.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(cfg)?;
        let mut rng = PortableRng::derive(seed, 0x1417);
        let specs = net.layout.specs.clone();
        for spec in &specs {
            if spec.name.ends_with(".bias") {
                continue;
            }
            let fan_in: usize = spec.shape[1..].iter().product();
            let bound = if spec.name.starts_with("encoder") || spec.name.starts_with("fc") {
                libm::sqrt(6.0 / fan_in as f64)
            } else if spec.name == "head.action.weight" {
                0.1 / libm::sqrt(fan_in as f64)
            } else {
                1.0 / libm::sqrt(fan_in as f64)
            };
            for v in &mut net.params[spec.range()] {
                *v = rng.range(-bound, bound);
            }
        }
        let hid = cfg.recurrent;
        let fb = net.plan.lstm.b + hid;
        net.params[fb..fb + hid].iter_mut().for_each(|v| *v = 1.0);
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.cfg.recurrent)
    }

    /// Named read access to a parameter block.
    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| &self.params[s.range()])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.get(name)?.range();
        Some(&mut self.params[r])
    }

    fn check_obs(&self, obs: &Observation, rs: &RecurrentState) -> Result<()> {
        let want = self.cfg.channels * self.cfg.patch_size * self.cfg.patch_size;
        if obs.channels != self.cfg.channels
            || obs.size != self.cfg.patch_size
            || obs.patch_prev.len() != want
            || obs.patch_cur.len() != want
        {
            return Err(Error::Shape {
                expected: format!(
                    "{}x{}x{}",
                    self.cfg.channels, self.cfg.patch_size, self.cfg.patch_size
                ),
                found: format!("{}x{}x{}", obs.channels, obs.size, obs.size),
            });
        }
        if rs.hidden.len() != self.cfg.recurrent || rs.cell.len() != self.cfg.recurrent {
            return Err(Error::Shape {
                expected: format!("recurrent width {}", self.cfg.recurrent),
                found: format!("{}/{}", rs.hidden.len(), rs.cell.len()),
            });
        }
        Ok(())
    }

    fn run(
        &self,
        obs: &Observation,
        rs: &RecurrentState,
    ) -> Result<(StepCache, StepOutput, RecurrentState)> {
        self.check_obs(obs, rs)?;
        let p = &self.params;
        let encode = |plans: &[ConvPlan], input: &[f64]| {
            let mut maps = Vec::with_capacity(plans.len() + 1);
            maps.push(input.to_vec());
            for cp in plans {
                let mut out = vec![0.0; cp.shape.out_len()];
                let w = &p[cp.w..cp.w + cp.shape.weight_len()];
                let b = &p[cp.b..cp.b + cp.shape.out_c];
                layers::conv_relu_forward(&cp.shape, w, b, maps.last().unwrap(), &mut out);
                maps.push(out);
            }
            maps
        };
        let m0 = encode(&self.plan.branches[0], &obs.patch_prev);
        let m1 = encode(&self.plan.branches[1], &obs.patch_cur);
        let mut features = Vec::with_capacity(self.plan.feature_len);
        features.extend_from_slice(m0.last().unwrap());
        features.extend_from_slice(m1.last().unwrap());

        let mut fc_acts = Vec::with_capacity(self.plan.fc.len() + 1);
        fc_acts.push(features);
        for d in &self.plan.fc {
            let mut out = vec![0.0; d.n_out];
            layers::dense_forward(
                &p[d.w..d.w + d.w_len()],
                &p[d.b..d.b + d.n_out],
                fc_acts.last().unwrap(),
                &mut out,
            );
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            fc_acts.push(out);
        }

        let l = &self.plan.lstm;
        let lstm = layers::lstm_forward(
            &p[l.w_ih..l.w_ih + 4 * l.hidden * l.n_in],
            &p[l.w_hh..l.w_hh + 4 * l.hidden * l.hidden],
            &p[l.b..l.b + 4 * l.hidden],
            fc_acts.last().unwrap(),
            &rs.hidden,
            &rs.cell,
        );

        let ha = &self.plan.head_action;
        let mut z = [0.0; ACTION_DIM];
        layers::dense_forward(
            &p[ha.w..ha.w + ha.w_len()],
            &p[ha.b..ha.b + ACTION_DIM],
            &lstm.h,
            &mut z,
        );
        let mu = z.map(libm::tanh);
        let hv = &self.plan.head_value;
        let mut v = [0.0; 1];
        layers::dense_forward(
            &p[hv.w..hv.w + hv.w_len()],
            &p[hv.b..hv.b + 1],
            &lstm.h,
            &mut v,
        );

        let next = RecurrentState {
            hidden: lstm.h.clone(),
            cell: lstm.c.clone(),
        };
        let out = StepOutput {
            mu: ActionDelta(mu),
            value: v[0],
        };
        let cache = StepCache {
            maps: [m0, m1],
            fc_acts,
            lstm,
            mu,
        };
        Ok((cache, out, next))
    }

    /// Evaluates `pi(s)` and `v(s)`; pure in `(params, obs, rs)`.
    pub fn forward(
        &self,
        obs: &Observation,
        rs: &RecurrentState,
    ) -> Result<(StepOutput, RecurrentState)> {
        let (_, out, next) = self.run(obs, rs)?;
        Ok((out, next))
    }

    /// Like [`PolicyValueNet::forward`], appending what backward needs to `tape`.
    pub fn forward_recorded(
        &self,
        obs: &Observation,
        rs: &RecurrentState,
        tape: &mut Tape,
    ) -> Result<(StepOutput, RecurrentState)> {
        let (cache, out, next) = self.run(obs, rs)?;
        tape.steps.push(cache);
        Ok((out, next))
    }

    /// Backpropagates per-step output gradients through the taped rollout,
    /// accumulating into `grads` (same layout as `params`).
    pub fn backward(&self, tape: &Tape, d_out: &[OutputGrad], grads: &mut [f64]) -> Result<()> {
        if tape.is_empty() {
            return Err(Error::State("backward without a recorded forward pass"));
        }
        if d_out.len() != tape.len() {
            return Err(Error::Length {
                what: "output gradients vs taped steps",
                left: d_out.len(),
                right: tape.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::Length {
                what: "gradient buffer",
                left: grads.len(),
                right: self.params.len(),
            });
        }
        let p = &self.params;
        let hid = self.cfg.recurrent;
        let mut d_h_next = vec![0.0; hid];
        let mut d_c_next = vec![0.0; hid];

        for (step, dout) in tape.steps.iter().zip(d_out).rev() {
            // heads
            let mut d_h = d_h_next.clone();
            let ha = &self.plan.head_action;
            let d_z: [f64; ACTION_DIM] =
                core::array::from_fn(|k| dout.d_mu[k] * (1.0 - step.mu[k] * step.mu[k]));
            {
                let (gw, gb) = split2(grads, ha.w, ha.w_len(), ha.b, ACTION_DIM);
                layers::dense_backward(
                    &p[ha.w..ha.w + ha.w_len()],
                    &step.lstm.h,
                    &d_z,
                    gw,
                    gb,
                    Some(&mut d_h),
                );
            }
            let hv = &self.plan.head_value;
            {
                let (gw, gb) = split2(grads, hv.w, hv.w_len(), hv.b, 1);
                layers::dense_backward(
                    &p[hv.w..hv.w + hv.w_len()],
                    &step.lstm.h,
                    &[dout.d_value],
                    gw,
                    gb,
                    Some(&mut d_h),
                );
            }

            // recurrent cell
            let l = &self.plan.lstm;
            let (d_x, d_h_prev, d_c_prev) = {
                let n_ih = 4 * hid * l.n_in;
                let n_hh = 4 * hid * hid;
                let (g_ih, g_hh, g_b) = split3(grads, l.w_ih, n_ih, l.w_hh, n_hh, l.b, 4 * hid);
                layers::lstm_backward(
                    &p[l.w_ih..l.w_ih + n_ih],
                    &p[l.w_hh..l.w_hh + n_hh],
                    &step.lstm,
                    &d_h,
                    &d_c_next,
                    g_ih,
                    g_hh,
                    g_b,
                )
            };
            d_h_next = d_h_prev;
            d_c_next = d_c_prev;

            // dense stack (ReLU after each layer)
            let mut d_act = d_x;
            for (i, d) in self.plan.fc.iter().enumerate().rev() {
                let out = &step.fc_acts[i + 1];
                let d_pre: Vec<f64> = d_act
                    .iter()
                    .zip(out)
                    .map(|(g, o)| if *o > 0.0 { *g } else { 0.0 })
                    .collect();
                let mut d_in = vec![0.0; d.n_in];
                let (gw, gb) = split2(grads, d.w, d.w_len(), d.b, d.n_out);
                layers::dense_backward(
                    &p[d.w..d.w + d.w_len()],
                    &step.fc_acts[i],
                    &d_pre,
                    gw,
                    gb,
                    Some(&mut d_in),
                );
                d_act = d_in;
            }

            // encoders
            let half = self.plan.feature_len / 2;
            for (branch, d_feat) in [&d_act[..half], &d_act[half..]].into_iter().enumerate() {
                let plans = &self.plan.branches[branch];
                let maps = &step.maps[branch];
                let mut d_map = d_feat.to_vec();
                for (li, cp) in plans.iter().enumerate().rev() {
                    let mut d_in = if li > 0 {
                        Some(vec![0.0; cp.shape.in_len()])
                    } else {
                        None
                    };
                    let (gw, gb) = split2(grads, cp.w, cp.shape.weight_len(), cp.b, cp.shape.out_c);
                    layers::conv_relu_backward(
                        &cp.shape,
                        &p[cp.w..cp.w + cp.shape.weight_len()],
                        &maps[li],
                        &maps[li + 1],
                        &d_map,
                        gw,
                        gb,
                        d_in.as_deref_mut(),
                    );
                    match d_in {
                        Some(v) => d_map = v,
                        None => break,
                    }
                }
            }
        }
        Ok(())
    }
}

/// Two disjoint mutable windows of the gradient buffer.
fn split2(
    buf: &mut [f64],
    a: usize,
    a_len: usize,
    b: usize,
    b_len: usize,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + a_len <= b);
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + a_len], &mut hi[..b_len])
}

fn split3(
    buf: &mut [f64],
    a: usize,
    a_len: usize,
    b: usize,
    b_len: usize,
    c: usize,
    c_len: usize,
) -> (&mut [f64], &mut [f64], &mut [f64]) {
    debug_assert!(a + a_len <= b && b + b_len <= c);
    let (lo, rest) = buf.split_at_mut(b);
    let (mid, hi) = rest.split_at_mut(c - b);
    (&mut lo[a..a + a_len], &mut mid[..b_len], &mut hi[..c_len])
}
