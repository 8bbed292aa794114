//! Single-layer GRU, gate order (reset, update, new):
//!
//! ```text
//! r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use super::{matvec_add, outer_backward, sigmoid, Tensor};
use crate::SEQ_LEN;

pub(super) struct Cache {
    r: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    /// `W_hn h + b_hn` per step.
    hn: Vec<Vec<f64>>,
    hs: Vec<Vec<f64>>,
}

pub(super) fn forward(t: &[Tensor], x: &[f64], f: usize, h: usize) -> (Vec<f64>, Cache) {
    let (w_ih, w_hh, b_ih, b_hh) = (&t[0].data, &t[1].data, &t[2].data, &t[3].data);
    let mut cache = Cache {
        r: Vec::with_capacity(SEQ_LEN),
        z: Vec::with_capacity(SEQ_LEN),
        n: Vec::with_capacity(SEQ_LEN),
        hn: Vec::with_capacity(SEQ_LEN),
        hs: vec![vec![0.0; h]],
    };
    for step in 0..SEQ_LEN {
        let xt = &x[step * f..(step + 1) * f];
        let hp = &cache.hs[step];
        let mut gi = b_ih.clone();
        matvec_add(w_ih, xt, &mut gi);
        let mut gh = b_hh.clone();
        matvec_add(w_hh, hp, &mut gh);
        let r: Vec<f64> = (0..h).map(|j| sigmoid(gi[j] + gh[j])).collect();
        let z: Vec<f64> = (0..h).map(|j| sigmoid(gi[h + j] + gh[h + j])).collect();
        let hn: Vec<f64> = gh[2 * h..].to_vec();
        let n: Vec<f64> = (0..h).map(|j| (gi[2 * h + j] + r[j] * hn[j]).tanh()).collect();
        let hnext: Vec<f64> = (0..h).map(|j| (1.0 - z[j]) * n[j] + z[j] * hp[j]).collect();
        cache.r.push(r);
        cache.z.push(z);
        cache.n.push(n);
        cache.hn.push(hn);
        cache.hs.push(hnext);
    }
    (cache.hs[SEQ_LEN].clone(), cache)
}

pub(super) fn backward(
    t: &[Tensor],
    x: &[f64],
    cache: &Cache,
    dh_last: &[f64],
    g: &mut [Vec<f64>],
    f: usize,
    h: usize,
) {
    let [gw_ih, gw_hh, gb_ih, gb_hh] = g else {
        unreachable!("gru body has four tensors")
    };
    let mut dh = dh_last.to_vec();
    let mut dgi = vec![0.0; 3 * h];
    let mut dgh = vec![0.0; 3 * h];
    for step in (0..SEQ_LEN).rev() {
        let (r, z, n, hn, hp) = (
            &cache.r[step],
            &cache.z[step],
            &cache.n[step],
            &cache.hn[step],
            &cache.hs[step],
        );
        let mut dh_prev = vec![0.0; h];
        for j in 0..h {
            let dn = dh[j] * (1.0 - z[j]);
            let dz = dh[j] * (hp[j] - n[j]);
            dh_prev[j] = dh[j] * z[j];
            let dan = dn * (1.0 - n[j] * n[j]);
            let dr = dan * hn[j];
            let dar = dr * r[j] * (1.0 - r[j]);
            let daz = dz * z[j] * (1.0 - z[j]);
            dgi[j] = dar;
            dgi[h + j] = daz;
            dgi[2 * h + j] = dan;
            dgh[j] = dar;
            dgh[h + j] = daz;
            dgh[2 * h + j] = dan * r[j];
        }
        for (b, &d) in gb_ih.iter_mut().zip(&dgi) {
            *b += d;
        }
        for (b, &d) in gb_hh.iter_mut().zip(&dgh) {
            *b += d;
        }
        let xt = &x[step * f..(step + 1) * f];
        outer_backward(&t[0].data, xt, &dgi, gw_ih, None);
        outer_backward(&t[1].data, hp, &dgh, gw_hh, Some(&mut dh_prev));
        dh = dh_prev;
    }
}
