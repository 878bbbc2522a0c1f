//! Raw numeric kernels over row-major slices. The tape ops call into these.

/// `a[m x k] * b[k x n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[m x k] * b[n x k]^T`.
pub fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[k x m]^T * b[k x n]`.
pub fn matmul_at_b(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Geometry of a square-kernel, zero-padded ("same"-style) 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub height: usize,
    pub width: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding() - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding() - self.kernel) / self.stride + 1
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.c_out * self.out_height() * self.out_width()
    }
}

pub fn conv2d_forward(x: &[f64], weights: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, k, s) = (g.height as isize, g.width as isize, g.kernel, g.stride);
    let pad = g.padding() as isize;
    let mut out = vec![0.0; g.output_len()];
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let obase = ((b * g.c_out) + o) * ho * wo;
            for c in 0..g.c_in {
                let xbase = ((b * g.c_in) + c) * g.height * g.width;
                let kbase = ((o * g.c_in) + c) * k * k;
                for u in 0..k {
                    for v in 0..k {
                        let wv = weights[kbase + u * k + v];
                        for i in 0..ho {
                            let y = (i * s) as isize + u as isize - pad;
                            if y < 0 || y >= h {
                                continue;
                            }
                            let xrow = xbase + y as usize * g.width;
                            let orow = obase + i * wo;
                            for j in 0..wo {
                                let xc = (j * s) as isize + v as isize - pad;
                                if xc >= 0 && xc < w {
                                    out[orow + j] += wv * x[xrow + xc as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of the convolution wrt its input and its kernel.
pub fn conv2d_backward(dy: &[f64], x: &[f64], weights: &[f64], g: &ConvGeometry) -> (Vec<f64>, Vec<f64>) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, k, s) = (g.height as isize, g.width as isize, g.kernel, g.stride);
    let pad = g.padding() as isize;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weights.len()];
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let obase = ((b * g.c_out) + o) * ho * wo;
            for c in 0..g.c_in {
                let xbase = ((b * g.c_in) + c) * g.height * g.width;
                let kbase = ((o * g.c_in) + c) * k * k;
                for u in 0..k {
                    for v in 0..k {
                        let wv = weights[kbase + u * k + v];
                        let mut acc = 0.0;
                        for i in 0..ho {
                            let y = (i * s) as isize + u as isize - pad;
                            if y < 0 || y >= h {
                                continue;
                            }
                            let xrow = xbase + y as usize * g.width;
                            let orow = obase + i * wo;
                            for j in 0..wo {
                                let xc = (j * s) as isize + v as isize - pad;
                                if xc >= 0 && xc < w {
                                    let d = dy[orow + j];
                                    acc += d * x[xrow + xc as usize];
                                    dx[xrow + xc as usize] += d * wv;
                                }
                            }
                        }
                        dw[kbase + u * k + v] += acc;
                    }
                }
            }
        }
    }
    (dx, dw)
}
