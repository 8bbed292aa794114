//! Single-layer LSTM, gate order (input, forget, cell, output).

use super::{matvec_add, outer_backward, sigmoid, Tensor};
use crate::SEQ_LEN;

pub(super) struct Cache {
    /// Gate activations per step, `[i | f | g | o]`, each `h` wide.
    gates: Vec<Vec<f64>>,
    /// Hidden and cell states, `SEQ_LEN + 1` entries starting at zero.
    hs: Vec<Vec<f64>>,
    cs: Vec<Vec<f64>>,
}

pub(super) fn forward(t: &[Tensor], x: &[f64], f: usize, h: usize) -> (Vec<f64>, Cache) {
    let (w_ih, w_hh, bias) = (&t[0].data, &t[1].data, &t[2].data);
    let mut hs = vec![vec![0.0; h]];
    let mut cs = vec![vec![0.0; h]];
    let mut gates = Vec::with_capacity(SEQ_LEN);
    for step in 0..SEQ_LEN {
        let xt = &x[step * f..(step + 1) * f];
        let mut pre = bias.clone();
        matvec_add(w_ih, xt, &mut pre);
        matvec_add(w_hh, &hs[step], &mut pre);
        for (j, p) in pre.iter_mut().enumerate() {
            *p = if (2 * h..3 * h).contains(&j) { p.tanh() } else { sigmoid(*p) };
        }
        let c_prev = &cs[step];
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            c[j] = pre[h + j] * c_prev[j] + pre[j] * pre[2 * h + j];
            hn[j] = pre[3 * h + j] * c[j].tanh();
        }
        gates.push(pre);
        cs.push(c);
        hs.push(hn);
    }
    (hs[SEQ_LEN].clone(), Cache { gates, hs, cs })
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
    let w_hh = &t[1].data;
    let [gw_ih, gw_hh, gb] = g else {
        unreachable!("lstm body has three tensors")
    };
    let mut dh = dh_last.to_vec();
    let mut dc = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for step in (0..SEQ_LEN).rev() {
        let gt = &cache.gates[step];
        let c = &cache.cs[step + 1];
        let c_prev = &cache.cs[step];
        for j in 0..h {
            let (i, fg, gg, o) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
            let tc = c[j].tanh();
            let d_o = dh[j] * tc;
            let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
            da[j] = dcj * gg * i * (1.0 - i);
            da[h + j] = dcj * c_prev[j] * fg * (1.0 - fg);
            da[2 * h + j] = dcj * i * (1.0 - gg * gg);
            da[3 * h + j] = d_o * o * (1.0 - o);
            dc[j] = dcj * fg;
        }
        for (b, &d) in gb.iter_mut().zip(&da) {
            *b += d;
        }
        let xt = &x[step * f..(step + 1) * f];
        outer_backward(&t[0].data, xt, &da, gw_ih, None);
        let mut dh_prev = vec![0.0; h];
        outer_backward(w_hh, &cache.hs[step], &da, gw_hh, Some(&mut dh_prev));
        dh = dh_prev;
    }
}
