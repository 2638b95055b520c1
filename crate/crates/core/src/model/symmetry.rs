//! Projection of the weights onto the mirror-equivariant subspace.
//!
//! Each feature channel `c` gets a type `(partner, sign)` meaning that on the
//! mirrored input, channel `c` equals `sign` times the mirrored channel
//! `partner` of the original input. Heatmap channels pair by `lr_swap`, PAF
//! channels pair by the mirrored limb with x-components negated, and the
//! channels feeding a pixel shuffle pair sub-pixel columns `b` and `1 - b`.
//! A convolution preserves these relations iff
//! `W[p(o), p(i)] = s_o s_i mirror(W[o, i])` and `b[p(o)] = s_o b[o]`.

use super::{Conv, Model};
use crate::tensor::Real;

type Types = Vec<(usize, i8)>;

fn plain(n: usize) -> Types {
    (0..n).map(|c| (c, 1)).collect()
}

fn pre_shuffle(n: usize) -> Types {
    (0..n).map(|c| (c ^ 1, 1)).collect()
}

impl<T: Real> Model<T> {
    fn symmetrize_conv(&mut self, conv: &Conv, out_t: &Types, in_t: &Types) {
        let p = self.params.get_mut(conv.w);
        let shape = p.value.shape().to_vec();
        let (co, ci, k) = (shape[0], shape[1], shape[2]);
        assert_eq!((co, ci), (out_t.len(), in_t.len()), "channel types match layer");
        let old = p.value.data().to_vec();
        let half = T::cst(0.5);
        let idx = |o: usize, i: usize, y: usize, x: usize| ((o * ci + i) * k + y) * k + x;
        let data = p.value.data_mut();
        for (o, &(po, so)) in out_t.iter().enumerate() {
            for (i, &(pi, si)) in in_t.iter().enumerate() {
                let s = T::cst((so * si) as f64);
                for y in 0..k {
                    for x in 0..k {
                        data[idx(o, i, y, x)] = half * (old[idx(o, i, y, x)] + s * old[idx(po, pi, y, k - 1 - x)]);
                    }
                }
            }
        }
        let b = self.params.get_mut(conv.b);
        let old = b.value.data().to_vec();
        for (o, &(po, so)) in out_t.iter().enumerate() {
            b.value.data_mut()[o] = half * (old[o] + T::cst(so as f64) * old[po]);
        }
    }

    fn symmetrize_chain(&mut self, layers: &[Conv], mut in_t: Types, last_t: Types) {
        for (n, conv) in layers.iter().enumerate() {
            let cout = self.params.get(conv.b).value.len();
            let out_t = if n + 1 == layers.len() { last_t.clone() } else { plain(cout) };
            self.symmetrize_conv(conv, &out_t, &in_t);
            in_t = out_t;
        }
    }

    /// Makes the network exactly mirror-equivariant: for a mirrored input it
    /// produces the mirrored maps with left/right channels exchanged.
    pub fn symmetrize(&mut self) {
        let topo = self.cfg.topology.clone();
        let mut c = 1;
        for stage in self.sr.clone() {
            let last = self.params.get(stage.last().expect("nonempty stage").b).value.len();
            self.symmetrize_chain(&stage, plain(c), pre_shuffle(last));
            c = last / 4;
        }
        if let Some(head) = self.sr_head {
            self.symmetrize_conv(&head, &plain(1), &plain(c));
        }
        let feat: Vec<Conv> = self.feat.iter().map(|(conv, _)| *conv).collect();
        let fc = self.cfg.feature_channels();
        self.symmetrize_chain(&feat, plain(c), plain(fc));

        let heat_t: Types = topo.lr_swap.iter().map(|&j| (j, 1)).collect();
        let paf_t: Types = topo
            .limb_swap()
            .iter()
            .flat_map(|&m| [(2 * m, -1), (2 * m + 1, 1)])
            .collect();
        let (t1, t2) = self.cfg.tap_channels();
        let base = fc + t1 + t2;
        for (t, stage) in self.stages.clone().iter().enumerate() {
            let mut in_t = plain(base);
            if t > 0 {
                in_t.extend(paf_t.iter().map(|&(p, s)| (p + base, s)));
                let off = base + paf_t.len();
                in_t.extend(heat_t.iter().map(|&(p, s)| (p + off, s)));
            }
            self.symmetrize_chain(&stage.paf, in_t.clone(), paf_t.clone());
            self.symmetrize_chain(&stage.heat, in_t, heat_t.clone());
        }
    }
}
