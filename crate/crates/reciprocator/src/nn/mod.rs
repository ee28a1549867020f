//! Small dense networks with hand-rolled backpropagation.
//!
//! Every network keeps its parameters in one flat [`ParamVec`] (values plus
//! accumulated gradients), which keeps the optimizer and checkpointing
//! trivial. Layers are lightweight descriptors holding offsets into that
//! vector. The networks here are deliberately tiny — a few dozen units — so
//! plain `Vec<f64>` arithmetic is more than fast enough.

mod adam;
mod gru;

pub use adam::{clip_grad_norm, Adam};
pub use gru::{GruCache, GruCell};

use rand::Rng;

/// Flat parameter storage: values in `w`, accumulated gradients in `g`.
#[derive(Clone, Debug, Default)]
pub struct ParamVec {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
}

impl ParamVec {
    /// Reserve `n` zero-initialized slots, returning their base offset.
    pub fn alloc(&mut self, n: usize) -> usize {
        let off = self.w.len();
        self.w.resize(off + n, 0.0);
        self.g.resize(off + n, 0.0);
        off
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(0.0);
    }
}

/// Fill a weight slice with the uniform Xavier/Glorot distribution, scaled by
/// `gain`.
fn init_uniform<R: Rng>(w: &mut [f64], fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) {
    let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in w.iter_mut() {
        *x = rng.random_range(-bound..bound);
    }
}

/// Dense layer `y = W x + b`, parameters held in an external [`ParamVec`].
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    w_off: usize,
    b_off: usize,
}

impl Linear {
    pub fn new<R: Rng>(p: &mut ParamVec, in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        let w_off = p.alloc(in_dim * out_dim);
        let b_off = p.alloc(out_dim);
        init_uniform(&mut p.w[w_off..w_off + in_dim * out_dim], in_dim, out_dim, gain, rng);
        Linear {
            in_dim,
            out_dim,
            w_off,
            b_off,
        }
    }

    pub fn forward(&self, p: &ParamVec, x: &[f64], y: &mut [f64]) {
        let w = &p.w[self.w_off..];
        for (o, yo) in y.iter_mut().enumerate().take(self.out_dim) {
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = p.w[self.b_off + o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *yo = acc;
        }
    }

    /// Accumulate parameter gradients for upstream gradient `dy`, and add the
    /// input gradient into `dx` when given.
    pub fn backward(&self, p: &mut ParamVec, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        for (o, dyo) in dy.iter().enumerate().take(self.out_dim) {
            p.g[self.b_off + o] += dyo;
            let grow = &mut p.g[self.w_off + o * self.in_dim..self.w_off + (o + 1) * self.in_dim];
            for (gi, xi) in grow.iter_mut().zip(x) {
                *gi += dyo * xi;
            }
        }
        if let Some(dx) = dx {
            let w = &p.w[self.w_off..];
            for (o, dyo) in dy.iter().enumerate().take(self.out_dim) {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += dyo * wi;
                }
            }
        }
    }
}

/// Feedforward network with tanh hidden layers and a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub params: ParamVec,
    layers: Vec<Linear>,
}

/// Per-layer activations saved by [`Mlp::forward_cached`]: the input followed
/// by each layer's post-activation output.
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty cache")
    }
}

impl Mlp {
    /// `dims` lists input, hidden, and output sizes, e.g. `[8, 32, 32, 1]`.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut params = ParamVec::default();
        let layers = dims
            .windows(2)
            .map(|d| Linear::new(&mut params, d[0], d[1], 1.0, rng))
            .collect();
        Mlp { params, layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).acts.pop().unwrap()
    }

    fn forward_cached(&self, x: &[f64]) -> MlpCache {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; layer.out_dim];
            layer.forward(&self.params, acts.last().unwrap(), &mut y);
            if i != last {
                for v in y.iter_mut() {
                    *v = v.tanh();
                }
            }
            acts.push(y);
        }
        MlpCache { acts }
    }

    /// Forward pass that keeps activations for [`Mlp::backward`].
    pub fn forward_train(&self, x: &[f64]) -> MlpCache {
        self.forward_cached(x)
    }

    /// Accumulate parameter gradients for upstream gradient `dout`; returns
    /// the gradient with respect to the input.
    pub fn backward(&mut self, cache: &MlpCache, dout: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut dy = dout.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i != last {
                // Output of this layer passed through tanh; cache holds the
                // post-activation value a, with d tanh = 1 - a^2.
                for (d, a) in dy.iter_mut().zip(&cache.acts[i + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let mut dx = vec![0.0; layer.in_dim];
            layer.backward(&mut self.params, &cache.acts[i], &dy, Some(&mut dx));
            dy = dx;
        }
        dy
    }
}

/// Policy/value network: tanh trunk, optional GRU, and two linear heads.
///
/// With a GRU the network is recurrent and callers thread a hidden state
/// through [`ActorCritic::step`]; without one the hidden state is empty and
/// steps are independent.
#[derive(Clone, Debug)]
pub struct ActorCritic {
    pub params: ParamVec,
    trunk: Vec<Linear>,
    gru: Option<GruCell>,
    policy: Linear,
    value: Linear,
    pub obs_dim: usize,
    pub n_actions: usize,
}

/// Outputs of one forward step.
pub struct StepOut {
    pub logits: Vec<f64>,
    pub value: f64,
    pub h_next: Vec<f64>,
}

/// Intermediate activations of one step, needed to backpropagate it.
pub struct StepCache {
    /// Input plus each trunk layer's post-tanh output.
    trunk_acts: Vec<Vec<f64>>,
    gru: Option<GruCache>,
    /// Feature vector fed to both heads.
    feat: Vec<f64>,
}

impl ActorCritic {
    /// Purely feedforward actor-critic with tanh hidden layers.
    pub fn feedforward<R: Rng>(obs_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut R) -> Self {
        Self::build(obs_dim, hidden, None, n_actions, rng)
    }

    /// Trunk followed by a GRU of size `gru_dim`, for partially observable or
    /// history-dependent tasks.
    pub fn recurrent<R: Rng>(
        obs_dim: usize,
        hidden: &[usize],
        gru_dim: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Self {
        Self::build(obs_dim, hidden, Some(gru_dim), n_actions, rng)
    }

    fn build<R: Rng>(
        obs_dim: usize,
        hidden: &[usize],
        gru_dim: Option<usize>,
        n_actions: usize,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamVec::default();
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut dim = obs_dim;
        for &h in hidden {
            trunk.push(Linear::new(&mut params, dim, h, 1.0, rng));
            dim = h;
        }
        let gru = gru_dim.map(|g| {
            let cell = GruCell::new(&mut params, dim, g, rng);
            dim = g;
            cell
        });
        // A near-zero policy head starts the policy close to uniform, which
        // keeps early exploration broad regardless of the trunk init.
        let policy = Linear::new(&mut params, dim, n_actions, 0.01, rng);
        let value = Linear::new(&mut params, dim, 1, 1.0, rng);
        ActorCritic {
            params,
            trunk,
            gru,
            policy,
            value,
            obs_dim,
            n_actions,
        }
    }

    /// Size of the recurrent state (zero for feedforward networks).
    pub fn hidden_dim(&self) -> usize {
        self.gru.as_ref().map_or(0, |g| g.hid)
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.hidden_dim()]
    }

    pub fn step(&self, obs: &[f64], h: &[f64]) -> (StepOut, StepCache) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        let mut trunk_acts = Vec::with_capacity(self.trunk.len() + 1);
        trunk_acts.push(obs.to_vec());
        for layer in &self.trunk {
            let mut y = vec![0.0; layer.out_dim];
            layer.forward(&self.params, trunk_acts.last().unwrap(), &mut y);
            for v in y.iter_mut() {
                *v = v.tanh();
            }
            trunk_acts.push(y);
        }
        let (feat, gru_cache, h_next) = match &self.gru {
            Some(cell) => {
                let (h_new, cache) = cell.forward(&self.params, trunk_acts.last().unwrap(), h);
                (h_new.clone(), Some(cache), h_new)
            }
            None => (trunk_acts.last().unwrap().clone(), None, Vec::new()),
        };
        let mut logits = vec![0.0; self.n_actions];
        self.policy.forward(&self.params, &feat, &mut logits);
        let mut value = [0.0];
        self.value.forward(&self.params, &feat, &mut value);
        (
            StepOut {
                logits,
                value: value[0],
                h_next,
            },
            StepCache {
                trunk_acts,
                gru: gru_cache,
                feat,
            },
        )
    }

    /// Backpropagate one step. `dh_future` is the gradient flowing into this
    /// step's output hidden state from later steps (empty for feedforward
    /// networks); the return value is the gradient for the previous hidden
    /// state, to be passed as `dh_future` when processing the step before.
    pub fn backward_step(
        &mut self,
        cache: &StepCache,
        dlogits: &[f64],
        dvalue: f64,
        dh_future: &[f64],
    ) -> Vec<f64> {
        let mut dfeat = vec![0.0; cache.feat.len()];
        self.policy
            .backward(&mut self.params, &cache.feat, dlogits, Some(&mut dfeat));
        self.value
            .backward(&mut self.params, &cache.feat, &[dvalue], Some(&mut dfeat));
        let (mut dtrunk_out, dh_prev) = match (&self.gru, &cache.gru) {
            (Some(cell), Some(gcache)) => {
                for (d, f) in dfeat.iter_mut().zip(dh_future) {
                    *d += f;
                }
                cell.backward(&mut self.params, gcache, &dfeat)
            }
            _ => (dfeat, Vec::new()),
        };
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            for (d, a) in dtrunk_out.iter_mut().zip(&cache.trunk_acts[i + 1]) {
                *d *= 1.0 - a * a;
            }
            let mut dx = vec![0.0; layer.in_dim];
            layer.backward(&mut self.params, &cache.trunk_acts[i], &dtrunk_out, Some(&mut dx));
            dtrunk_out = dx;
        }
        dh_prev
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|l| l - log_z).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|l| l.exp()).collect()
}

/// Entropy of the categorical distribution given by `logits`.
pub fn entropy(logits: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .map(|lp| -lp.exp() * lp)
        .sum()
}

/// Sample an action index from the categorical distribution given by `logits`.
pub fn sample_from_logits<R: Rng>(logits: &[f64], rng: &mut R) -> usize {
    let probs = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
