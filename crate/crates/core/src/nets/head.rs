//! Dense classifier head: optional ReLU layer, then one logit.

use super::{matvec_add, outer_backward, Tensor};

pub(super) struct Cache {
    /// Pre-activations of the ReLU layer (empty without one).
    pre: Vec<f64>,
    /// Its outputs, or the head input when there is no hidden layer.
    act: Vec<f64>,
}

impl Cache {
    pub(super) fn relu_margin(&self) -> f64 {
        self.pre.iter().fold(f64::INFINITY, |m, a| m.min(a.abs()))
    }
}

pub(super) fn forward(t: &[Tensor], rep: &[f64], hidden: usize) -> (f64, Cache) {
    if hidden == 0 {
        let z = t[1].data[0] + dot(&t[0].data, rep);
        return (
            z,
            Cache {
                pre: Vec::new(),
                act: rep.to_vec(),
            },
        );
    }
    let mut pre = t[1].data.clone();
    matvec_add(&t[0].data, rep, &mut pre);
    let act: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
    let z = t[3].data[0] + dot(&t[2].data, &act);
    (z, Cache { pre, act })
}

/// Accumulates head gradients for logit gradient `dz`; returns d(rep).
pub(super) fn backward(
    t: &[Tensor],
    cache: &Cache,
    rep: &[f64],
    dz: f64,
    g: &mut [Vec<f64>],
    hidden: usize,
) -> Vec<f64> {
    if hidden == 0 {
        for (d, &a) in g[0].iter_mut().zip(&cache.act) {
            *d += dz * a;
        }
        g[1][0] += dz;
        return t[0].data.iter().map(|w| w * dz).collect();
    }
    for (d, &a) in g[2].iter_mut().zip(&cache.act) {
        *d += dz * a;
    }
    g[3][0] += dz;
    let dpre: Vec<f64> = t[2]
        .data
        .iter()
        .zip(&cache.pre)
        .map(|(w, &a)| if a > 0.0 { w * dz } else { 0.0 })
        .collect();
    for (d, &v) in g[1].iter_mut().zip(&dpre) {
        *d += v;
    }
    let mut drep = vec![0.0; rep.len()];
    let (gw, _) = g.split_at_mut(1);
    outer_backward(&t[0].data, rep, &dpre, &mut gw[0], Some(&mut drep));
    drep
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
