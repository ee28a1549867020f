//! Gated recurrent unit with hand-derived backward pass.

use rand::Rng;

use super::{init_uniform, ParamVec};

/// Single GRU cell:
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)        update gate
/// r  = sigmoid(Wr x + Ur h + br)        reset gate
/// hb = tanh(Wh x + Uh (r*h) + bh)       candidate
/// h' = (1 - z)*h + z*hb
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub in_dim: usize,
    pub hid: usize,
    // Offsets of the three gates' input weights, recurrent weights, biases.
    w: [usize; 3],
    u: [usize; 3],
    b: [usize; 3],
}

/// Forward activations needed to backpropagate one GRU step.
pub struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    hb: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng>(p: &mut ParamVec, in_dim: usize, hid: usize, rng: &mut R) -> Self {
        let mut w = [0; 3];
        let mut u = [0; 3];
        let mut b = [0; 3];
        for gate in 0..3 {
            w[gate] = p.alloc(hid * in_dim);
            init_uniform(&mut p.w[w[gate]..w[gate] + hid * in_dim], in_dim, hid, 1.0, rng);
            u[gate] = p.alloc(hid * hid);
            init_uniform(&mut p.w[u[gate]..u[gate] + hid * hid], hid, hid, 1.0, rng);
            b[gate] = p.alloc(hid);
        }
        GruCell { in_dim, hid, w, u, b }
    }

    /// Pre-activation of one gate: `W x + U v + b`.
    fn gate_pre(&self, p: &ParamVec, gate: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        let w = &p.w[self.w[gate]..];
        let u = &p.w[self.u[gate]..];
        for (o, slot) in out.iter_mut().enumerate().take(self.hid) {
            let mut acc = p.w[self.b[gate] + o];
            for (wi, xi) in w[o * self.in_dim..(o + 1) * self.in_dim].iter().zip(x) {
                acc += wi * xi;
            }
            for (ui, vi) in u[o * self.hid..(o + 1) * self.hid].iter().zip(v) {
                acc += ui * vi;
            }
            *slot = acc;
        }
    }

    pub fn forward(&self, p: &ParamVec, x: &[f64], h: &[f64]) -> (Vec<f64>, GruCache) {
        let sigmoid = |a: f64| 1.0 / (1.0 + (-a).exp());
        let mut z = vec![0.0; self.hid];
        let mut r = vec![0.0; self.hid];
        self.gate_pre(p, 0, x, h, &mut z);
        self.gate_pre(p, 1, x, h, &mut r);
        for v in z.iter_mut() {
            *v = sigmoid(*v);
        }
        for v in r.iter_mut() {
            *v = sigmoid(*v);
        }
        let rh: Vec<f64> = r.iter().zip(h).map(|(ri, hi)| ri * hi).collect();
        let mut hb = vec![0.0; self.hid];
        self.gate_pre(p, 2, x, &rh, &mut hb);
        for v in hb.iter_mut() {
            *v = v.tanh();
        }
        let h_next: Vec<f64> = (0..self.hid)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * hb[i])
            .collect();
        let cache = GruCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            z,
            r,
            hb,
        };
        (h_next, cache)
    }

    /// Accumulate one gate's parameter gradients for pre-activation gradient
    /// `da`, adding input-side gradients into `dx` and `dv`.
    fn gate_backward(
        &self,
        p: &mut ParamVec,
        gate: usize,
        x: &[f64],
        v: &[f64],
        da: &[f64],
        dx: &mut [f64],
        dv: &mut [f64],
    ) {
        for (o, dao) in da.iter().enumerate().take(self.hid) {
            p.g[self.b[gate] + o] += dao;
            let wrow = self.w[gate] + o * self.in_dim;
            for (k, xi) in x.iter().enumerate() {
                p.g[wrow + k] += dao * xi;
            }
            let urow = self.u[gate] + o * self.hid;
            for (k, vi) in v.iter().enumerate() {
                p.g[urow + k] += dao * vi;
            }
        }
        for (o, dao) in da.iter().enumerate().take(self.hid) {
            let wrow = &p.w[self.w[gate] + o * self.in_dim..self.w[gate] + (o + 1) * self.in_dim];
            for (dxi, wi) in dx.iter_mut().zip(wrow) {
                *dxi += dao * wi;
            }
            let urow = &p.w[self.u[gate] + o * self.hid..self.u[gate] + (o + 1) * self.hid];
            for (dvi, ui) in dv.iter_mut().zip(urow) {
                *dvi += dao * ui;
            }
        }
    }

    /// Backpropagate one step given `dh_next`; returns `(dx, dh_prev)`.
    pub fn backward(&self, p: &mut ParamVec, c: &GruCache, dh_next: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.hid;
        let mut dx = vec![0.0; self.in_dim];
        let mut dh = vec![0.0; n];

        let mut daz = vec![0.0; n];
        let mut dah = vec![0.0; n];
        for i in 0..n {
            let dz = dh_next[i] * (c.hb[i] - c.h_prev[i]);
            daz[i] = dz * c.z[i] * (1.0 - c.z[i]);
            dah[i] = dh_next[i] * c.z[i] * (1.0 - c.hb[i] * c.hb[i]);
            dh[i] += dh_next[i] * (1.0 - c.z[i]);
        }

        // Candidate gate: inputs are x and r*h.
        let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(r, h)| r * h).collect();
        let mut drh = vec![0.0; n];
        self.gate_backward(p, 2, &c.x, &rh, &dah, &mut dx, &mut drh);
        let mut dar = vec![0.0; n];
        for i in 0..n {
            dh[i] += drh[i] * c.r[i];
            let dr = drh[i] * c.h_prev[i];
            dar[i] = dr * c.r[i] * (1.0 - c.r[i]);
        }

        self.gate_backward(p, 0, &c.x, &c.h_prev, &daz, &mut dx, &mut dh);
        self.gate_backward(p, 1, &c.x, &c.h_prev, &dar, &mut dx, &mut dh);
        (dx, dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn multi_step_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut p = ParamVec::default();
        let cell = GruCell::new(&mut p, 3, 4, &mut rng);
        let xs = [[0.2, -0.5, 0.8], [0.7, 0.1, -0.3], [-0.6, 0.4, 0.5]];
        let coef: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();

        // Loss: sum over steps of coef_t . h_t, from h_0 = 0.
        let loss = |p: &ParamVec, h0: &[f64]| -> f64 {
            let mut h = h0.to_vec();
            let mut total = 0.0;
            for (x, c) in xs.iter().zip(&coef) {
                let (hn, _) = cell.forward(p, x, &h);
                h = hn;
                total += h.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            }
            total
        };

        let h0 = [0.05, -0.1, 0.2, 0.0];
        let mut caches = Vec::new();
        let mut h = h0.to_vec();
        for x in &xs {
            let (hn, cache) = cell.forward(&p, x, &h);
            h = hn;
            caches.push(cache);
        }
        let mut dh = vec![0.0; 4];
        for t in (0..3).rev() {
            // Direct loss term on h_t plus gradient from later steps.
            let dh_t: Vec<f64> = dh.iter().zip(&coef[t]).map(|(a, b)| a + b).collect();
            let (_, dh_prev) = cell.backward(&mut p, &caches[t], &dh_t);
            dh = dh_prev;
        }

        let step = 1e-6;
        for k in 0..p.len() {
            let orig = p.w[k];
            p.w[k] = orig + step;
            let up = loss(&p, &h0);
            p.w[k] = orig - step;
            let dn = loss(&p, &h0);
            p.w[k] = orig;
            let fd = (up - dn) / (2.0 * step);
            assert!(
                (p.g[k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                "param {k}: analytic {} vs fd {fd}",
                p.g[k]
            );
        }
        // Initial-hidden gradient as well.
        for k in 0..4 {
            let mut hp = h0;
            hp[k] += step;
            let up = loss(&p, &hp);
            hp[k] -= 2.0 * step;
            let dn = loss(&p, &hp);
            let fd = (up - dn) / (2.0 * step);
            assert!((dh[k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn zero_update_gate_keeps_hidden_state() {
        // Forcing bz very negative makes z ~ 0, so h' ~ h.
        let mut rng = StdRng::seed_from_u64(9);
        let mut p = ParamVec::default();
        let cell = GruCell::new(&mut p, 2, 3, &mut rng);
        for i in 0..3 {
            p.w[cell.b[0] + i] = -50.0;
        }
        // Zero the update gate's weights so the bias dominates exactly.
        for k in 0..6 {
            p.w[cell.w[0] + k] = 0.0;
        }
        for k in 0..9 {
            p.w[cell.u[0] + k] = 0.0;
        }
        let h = [0.3, -0.7, 0.5];
        let (hn, _) = cell.forward(&p, &[1.0, -1.0], &h);
        for (a, b) in hn.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
