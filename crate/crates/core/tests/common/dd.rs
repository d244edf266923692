//! Double-double arithmetic and a naive network forward pass in it, used as
//! a roundoff-free finite-difference oracle for the analytic gradients.

use freqct::denoiser::ConvNet;
use freqct::Grid2D;

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub fn from(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn scale(self, k: f64) -> Dd {
        self.mul(Dd::from(k))
    }

    pub fn div_f64(self, d: f64) -> Dd {
        let q1 = self.hi / d;
        let r = self.sub(Dd::from(q1).mul(Dd::from(d)));
        let q2 = r.hi / d;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_positive(self) -> bool {
        self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
    }
}

/// Direct-loop forward pass with weights `w + perturbation` at one index.
pub fn forward_dd(net: &ConvNet, x: &Grid2D, bump: Option<(usize, usize, f64)>) -> Vec<Dd> {
    let (h, w) = x.shape();
    let mut act: Vec<Dd> = x.data().iter().map(|&v| Dd::from(v)).collect();
    let n_layers = net.layers.len();
    for (l, layer) in net.layers.iter().enumerate() {
        let weights: Vec<Dd> = layer
            .weights
            .iter()
            .enumerate()
            .map(|(i, &v)| match bump {
                Some((bl, bi, d)) if bl == l && bi == i => Dd::from(v).add(Dd::from(d)),
                _ => Dd::from(v),
            })
            .collect();
        let mut out = vec![Dd::default(); layer.c_out * h * w];
        for co in 0..layer.c_out {
            for r in 0..h {
                for c in 0..w {
                    let mut acc = Dd::default();
                    for ci in 0..layer.c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let rr = r as isize + ky as isize - 1;
                                let cc = c as isize + kx as isize - 1;
                                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                    continue;
                                }
                                let wv = weights[((co * layer.c_in + ci) * 3 + ky) * 3 + kx];
                                acc =
                                    acc.add(wv.mul(act[(ci * h + rr as usize) * w + cc as usize]));
                            }
                        }
                    }
                    let relu = l + 1 < n_layers || net.final_relu;
                    out[(co * h + r) * w + c] = if relu && !acc.is_positive() {
                        Dd::default()
                    } else {
                        acc
                    };
                }
            }
        }
        act = out;
    }
    act
}

pub fn mse_dd(net: &ConvNet, x: &Grid2D, t: &Grid2D, bump: Option<(usize, usize, f64)>) -> Dd {
    let y = forward_dd(net, x, bump);
    let mut acc = Dd::default();
    for (yv, &tv) in y.iter().zip(t.data()) {
        let r = yv.sub(Dd::from(tv));
        acc = acc.add(r.mul(r));
    }
    acc.div_f64(t.len() as f64)
}

/// Central difference `(L(w + h) - L(w - h)) / 2h` evaluated in double-double.
pub fn central_difference(
    net: &ConvNet,
    x: &Grid2D,
    t: &Grid2D,
    layer: usize,
    index: usize,
    h: f64,
) -> f64 {
    let plus = mse_dd(net, x, t, Some((layer, index, h)));
    let minus = mse_dd(net, x, t, Some((layer, index, -h)));
    plus.sub(minus).div_f64(2.0 * h).to_f64()
}

/// Largest `|fd - g| / |g|` over weights with `|g| > floor`, and how many were checked.
pub fn max_relative_gradient_error(
    net: &ConvNet,
    x: &Grid2D,
    t: &Grid2D,
    grads: &[Vec<f64>],
    h: f64,
    floor: f64,
) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (l, g) in grads.iter().enumerate() {
        for (i, &gv) in g.iter().enumerate() {
            if gv.abs() <= floor {
                continue;
            }
            let fd = central_difference(net, x, t, l, i, h);
            worst = worst.max((fd - gv).abs() / gv.abs());
            checked += 1;
        }
    }
    (worst, checked)
}
