//! Plain-loop numeric kernels behind the tape operations.

pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `g [n, m] x b^T` where `b` is `[k, m]`.
pub(crate) fn matmul_a_bt(g: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let gi = &g[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] = gi.iter().zip(&b[p * m..(p + 1) * m]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T x g` where `a` is `[n, k]` and `g` is `[n, m]`.
pub(crate) fn matmul_at_b(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let gi = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &gv) in out[p * m..(p + 1) * m].iter_mut().zip(gi) {
                *o += aip * gv;
            }
        }
    }
    out
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn oh(&self) -> usize {
        self.h - self.k + 1
    }
    pub fn ow(&self) -> usize {
        self.w - self.k + 1
    }
}

pub(crate) fn conv2d_forward(x: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow, k) = (g.oh(), g.ow(), g.k);
    let mut out = vec![0.0; g.n * g.o * oh * ow];
    for n in 0..g.n {
        for o in 0..g.o {
            let dst = &mut out[(n * g.o + o) * oh * ow..(n * g.o + o + 1) * oh * ow];
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                let ker = &kernel[(o * g.c + c) * k * k..(o * g.c + c + 1) * k * k];
                for u in 0..k {
                    for v in 0..k {
                        let kv = ker[u * k + v];
                        for i in 0..oh {
                            let srow = &src[(i + u) * g.w + v..(i + u) * g.w + v + ow];
                            for (d, s) in dst[i * ow..(i + 1) * ow].iter_mut().zip(srow) {
                                *d += kv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_grad_input(gy: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow, k) = (g.oh(), g.ow(), g.k);
    let mut dx = vec![0.0; g.n * g.c * g.h * g.w];
    for n in 0..g.n {
        for o in 0..g.o {
            let gsrc = &gy[(n * g.o + o) * oh * ow..(n * g.o + o + 1) * oh * ow];
            for c in 0..g.c {
                let dst = &mut dx[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                let ker = &kernel[(o * g.c + c) * k * k..(o * g.c + c + 1) * k * k];
                for u in 0..k {
                    for v in 0..k {
                        let kv = ker[u * k + v];
                        for i in 0..oh {
                            let drow = &mut dst[(i + u) * g.w + v..(i + u) * g.w + v + ow];
                            for (d, s) in drow.iter_mut().zip(&gsrc[i * ow..(i + 1) * ow]) {
                                *d += kv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn conv2d_grad_kernel(gy: &[f64], x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow, k) = (g.oh(), g.ow(), g.k);
    let mut dk = vec![0.0; g.o * g.c * k * k];
    for n in 0..g.n {
        for o in 0..g.o {
            let gsrc = &gy[(n * g.o + o) * oh * ow..(n * g.o + o + 1) * oh * ow];
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                for u in 0..k {
                    for v in 0..k {
                        let mut acc = 0.0;
                        for i in 0..oh {
                            let srow = &src[(i + u) * g.w + v..(i + u) * g.w + v + ow];
                            acc += srow.iter().zip(&gsrc[i * ow..(i + 1) * ow]).map(|(a, b)| a * b).sum::<f64>();
                        }
                        dk[((o * g.c + c) * k + u) * k + v] += acc;
                    }
                }
            }
        }
    }
    dk
}

/// Returns pooled values and, per output, the flat index of the selected input
/// (first maximum in row-major window order).
pub(crate) fn maxpool_forward(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

pub(crate) fn log_softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}

pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
