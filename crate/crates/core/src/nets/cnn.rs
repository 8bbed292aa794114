//! Two stacked same-padded temporal convolutions with ReLU and a global
//! max-pool. Activations are time-major: `act[t * channels + c]`.

use super::Tensor;
use crate::SEQ_LEN;

pub(super) struct Cache {
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    argmax: Vec<usize>,
}

impl Cache {
    pub(super) fn margin(&self, channels: usize) -> f64 {
        let relu = self
            .a1
            .iter()
            .chain(&self.a2)
            .fold(f64::INFINITY, |m, a| m.min(a.abs()));
        let mut pool = f64::INFINITY;
        for c in 0..channels {
            let best = self.h2[self.argmax[c] * channels + c];
            if best <= 0.0 {
                continue;
            }
            let runner_up = (0..SEQ_LEN)
                .filter(|&t| t != self.argmax[c])
                .map(|t| self.h2[t * channels + c])
                .fold(f64::NEG_INFINITY, f64::max);
            pool = pool.min(best - runner_up);
        }
        relu.min(pool)
    }
}

fn pad_left(k: usize) -> usize {
    (k - 1) / 2
}

/// Input position feeding output `t` through tap `k`, if inside the sequence.
#[inline]
fn source(t: usize, k: usize, pl: usize) -> Option<usize> {
    let s = (t + k).checked_sub(pl)?;
    (s < SEQ_LEN).then_some(s)
}

fn conv(input: &[f64], cin: usize, w: &[f64], b: &[f64], cout: usize, k: usize) -> Vec<f64> {
    let pl = pad_left(k);
    let mut out = vec![0.0; SEQ_LEN * cout];
    for t in 0..SEQ_LEN {
        for c in 0..cout {
            let mut s = b[c];
            for tap in 0..k {
                let Some(src) = source(t, tap, pl) else { continue };
                let row = &input[src * cin..(src + 1) * cin];
                for (i, &v) in row.iter().enumerate() {
                    s += w[(c * cin + i) * k + tap] * v;
                }
            }
            out[t * cout + c] = s;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    da: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let pl = pad_left(k);
    for t in 0..SEQ_LEN {
        for c in 0..cout {
            let g = da[t * cout + c];
            if g == 0.0 {
                continue;
            }
            db[c] += g;
            for tap in 0..k {
                let Some(src) = source(t, tap, pl) else { continue };
                for i in 0..cin {
                    let wi = (c * cin + i) * k + tap;
                    dw[wi] += g * input[src * cin + i];
                    if let Some(d) = dinput.as_deref_mut() {
                        d[src * cin + i] += g * w[wi];
                    }
                }
            }
        }
    }
}

pub(super) fn forward(t: &[Tensor], x: &[f64], f: usize, h: usize, k: usize) -> (Vec<f64>, Cache) {
    let a1 = conv(x, f, &t[0].data, &t[1].data, h, k);
    let h1: Vec<f64> = a1.iter().map(|&a| a.max(0.0)).collect();
    let a2 = conv(&h1, h, &t[2].data, &t[3].data, h, k);
    let h2: Vec<f64> = a2.iter().map(|&a| a.max(0.0)).collect();
    let mut pooled = vec![0.0; h];
    let mut argmax = vec![0; h];
    for c in 0..h {
        let mut best = 0;
        for step in 1..SEQ_LEN {
            if h2[step * h + c] > h2[best * h + c] {
                best = step;
            }
        }
        argmax[c] = best;
        pooled[c] = h2[best * h + c];
    }
    (
        pooled,
        Cache {
            a1,
            h1,
            a2,
            h2,
            argmax,
        },
    )
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward(
    t: &[Tensor],
    x: &[f64],
    cache: &Cache,
    dpooled: &[f64],
    g: &mut [Vec<f64>],
    f: usize,
    h: usize,
    k: usize,
) {
    let mut da2 = vec![0.0; SEQ_LEN * h];
    for c in 0..h {
        let idx = cache.argmax[c] * h + c;
        if cache.a2[idx] > 0.0 {
            da2[idx] = dpooled[c];
        }
    }
    let [gw1, gb1, gw2, gb2] = g else {
        unreachable!("cnn body has four tensors")
    };
    let mut dh1 = vec![0.0; SEQ_LEN * h];
    conv_backward(&cache.h1, h, &t[2].data, h, k, &da2, gw2, gb2, Some(&mut dh1));
    let da1: Vec<f64> = dh1
        .iter()
        .zip(&cache.a1)
        .map(|(&d, &a)| if a > 0.0 { d } else { 0.0 })
        .collect();
    conv_backward(x, f, &t[0].data, h, k, &da1, gw1, gb1, None);
}
