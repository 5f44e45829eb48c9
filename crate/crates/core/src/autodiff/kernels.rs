//! Raw numeric kernels shared by the tape and the inference path.

/// `c = a (m x k) * b (k x n)`, overwriting `c`.
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths match the row-major strides passed below.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `da += dc (m x n) * b^T` where `b` is `k x n`.
pub fn matmul_grad_a(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    if m == 0 || k == 0 {
        return;
    }
    // SAFETY: b^T is expressed through swapped strides of the k x n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            k,
            1.0,
            dc.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            1.0,
            da.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `db += a^T * dc` where `a` is `m x k` and `dc` is `m x n`.
pub fn matmul_grad_b(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    if k == 0 || n == 0 {
        return;
    }
    // SAFETY: a^T is expressed through swapped strides of the m x k buffer.
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            dc.as_ptr(),
            n as isize,
            1,
            1.0,
            db.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        let eh = self.h + 2 * self.pad;
        let ew = self.w + 2 * self.pad;
        if self.stride == 0 || eh < self.k || ew < self.k {
            return None;
        }
        Some((
            (eh - self.k) / self.stride + 1,
            (ew - self.k) / self.stride + 1,
        ))
    }

    fn input_at(&self, oy: usize, ky: usize) -> Option<usize> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        (y < self.h).then_some(y)
    }

    fn input_at_x(&self, ox: usize, kx: usize) -> Option<usize> {
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (x < self.w).then_some(x)
    }
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let (oh, ow) = g.out_hw().expect("geometry checked by caller");
    let k = g.k;
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let obase = ((n * g.out_ch) + o) * oh * ow;
            for v in &mut out[obase..obase + oh * ow] {
                *v = b[o];
            }
            for c in 0..g.in_ch {
                let xbase = ((n * g.in_ch) + c) * g.h * g.w;
                let wbase = ((o * g.in_ch) + c) * k * k;
                for oy in 0..oh {
                    for ky in 0..k {
                        let Some(y) = g.input_at(oy, ky) else {
                            continue;
                        };
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for kx in 0..k {
                                if let Some(xx) = g.input_at_x(ox, kx) {
                                    acc += w[wbase + ky * k + kx] * x[xbase + y * g.w + xx];
                                }
                            }
                            out[obase + oy * ow + ox] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let (oh, ow) = g.out_hw().expect("geometry checked by caller");
    let k = g.k;
    if let Some(db) = db {
        for n in 0..g.batch {
            for o in 0..g.out_ch {
                let obase = ((n * g.out_ch) + o) * oh * ow;
                db[o] += dout[obase..obase + oh * ow].iter().sum::<f64>();
            }
        }
    }
    let mut dx = dx;
    let mut dw = dw;
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let obase = ((n * g.out_ch) + o) * oh * ow;
            for c in 0..g.in_ch {
                let xbase = ((n * g.in_ch) + c) * g.h * g.w;
                let wbase = ((o * g.in_ch) + c) * k * k;
                for oy in 0..oh {
                    for ky in 0..k {
                        let Some(y) = g.input_at(oy, ky) else {
                            continue;
                        };
                        for ox in 0..ow {
                            let d = dout[obase + oy * ow + ox];
                            if d == 0.0 {
                                continue;
                            }
                            for kx in 0..k {
                                if let Some(xx) = g.input_at_x(ox, kx) {
                                    let xi = xbase + y * g.w + xx;
                                    let wi = wbase + ky * k + kx;
                                    if let Some(dw) = dw.as_deref_mut() {
                                        dw[wi] += d * x[xi];
                                    }
                                    if let Some(dx) = dx.as_deref_mut() {
                                        dx[xi] += d * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-wise softmax restricted to `mask`; masked entries get probability 0.
/// Rows with no unmasked entry are left all-zero.
pub fn masked_softmax_rows(x: &[f64], mask: &[bool], cols: usize, out: &mut [f64]) {
    for ((row, m), o) in x
        .chunks(cols)
        .zip(mask.chunks(cols))
        .zip(out.chunks_mut(cols))
    {
        let max = row
            .iter()
            .zip(m)
            .filter(|(_, &ok)| ok)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for ((v, &ok), p) in row.iter().zip(m).zip(o.iter_mut()) {
            *p = if ok { (v - max).exp() } else { 0.0 };
            z += *p;
        }
        if z > 0.0 {
            for p in o.iter_mut() {
                *p /= z;
            }
        }
    }
}

/// Log of [`masked_softmax_rows`]; masked entries are `-inf`.
pub fn masked_log_softmax_rows(x: &[f64], mask: &[bool], cols: usize, out: &mut [f64]) {
    for ((row, m), o) in x
        .chunks(cols)
        .zip(mask.chunks(cols))
        .zip(out.chunks_mut(cols))
    {
        let max = row
            .iter()
            .zip(m)
            .filter(|(_, &ok)| ok)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(v, _)| (v - max).exp())
                .sum::<f64>()
                .ln();
        for ((v, &ok), p) in row.iter().zip(m).zip(o.iter_mut()) {
            *p = if ok { v - lse } else { f64::NEG_INFINITY };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    c[i * n + j] += a[i * k + t] * b[t * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_triple_loop() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let mut c = vec![0.0; m * n];
        matmul(&a, &b, &mut c, m, k, n);
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
        let dc: Vec<f64> = (0..m * n).map(|i| i as f64 - 3.0).collect();
        let mut da = vec![0.0; m * k];
        matmul_grad_a(&dc, &b, &mut da, m, k, n);
        for i in 0..m {
            for t in 0..k {
                let expect: f64 = (0..n).map(|j| dc[i * n + j] * b[t * n + j]).sum();
                assert!((da[i * k + t] - expect).abs() < 1e-12);
            }
        }
        let mut db = vec![0.0; k * n];
        matmul_grad_b(&a, &dc, &mut db, m, k, n);
        for t in 0..k {
            for j in 0..n {
                let expect: f64 = (0..m).map(|i| a[i * k + t] * dc[i * n + j]).sum();
                assert!((db[t * n + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let g = ConvGeom {
            batch: 1,
            in_ch: 1,
            h: 4,
            w: 4,
            out_ch: 1,
            k: 3,
            stride: 1,
            pad: 0,
        };
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let mut out = vec![0.0; 4];
        conv2d_forward(&g, &x, &w, &[0.5], &mut out);
        assert_eq!(out, vec![5.5, 6.5, 9.5, 10.5]);
    }

    #[test]
    fn masked_softmax_zeroes_masked() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let mask = [true, false, true, false];
        let mut p = [0.0; 4];
        masked_softmax_rows(&x, &mask, 4, &mut p);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[3], 0.0);
        assert!((p[0] + p[2] - 1.0).abs() < 1e-15);
        let mut lp = [0.0; 4];
        masked_log_softmax_rows(&x, &mask, 4, &mut lp);
        assert!((lp[2].exp() - p[2]).abs() < 1e-15);
        assert_eq!(lp[1], f64::NEG_INFINITY);
    }
}
