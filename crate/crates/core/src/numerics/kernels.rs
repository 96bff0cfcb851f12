//! Forward kernels on plain tensors. The tape in [`super::graph`] reuses these
//! and adds the matching backward rules.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::math;
use crate::{Error, Result};

/// Layer-norm epsilon used throughout the detector.
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape {
            op,
            lhs: s.to_vec(),
            rhs: vec![],
        }),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` for row-major `a: m×k`, `b: n×k`.
pub(crate) fn matmul_nt_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
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

/// `aᵀ · b` for row-major `a: k×m`, `b: k×n`.
pub(crate) fn matmul_tn_raw(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in a[p * m..(p + 1) * m].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

pub(crate) fn softmax_rows_raw(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = math::exp(v - max);
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = require_matrix("softmax_rows", x)?;
    Tensor::new(vec![m, n], softmax_rows_raw(x.data(), m, n))
}

pub(crate) fn conv1d_raw(
    x: &[f64],
    kernel: &[f64],
    t_len: usize,
    width: usize,
    c_in: usize,
    c_out: usize,
) -> Vec<f64> {
    let pad = width / 2;
    let mut out = vec![0.0; t_len * c_out];
    for t in 0..t_len {
        let orow = &mut out[t * c_out..(t + 1) * c_out];
        for j in 0..width {
            let src = t + j;
            if src < pad || src - pad >= t_len {
                continue;
            }
            let xrow = &x[(src - pad) * c_in..(src - pad + 1) * c_in];
            let kslab = &kernel[j * c_in * c_out..(j + 1) * c_in * c_out];
            for (c, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let krow = &kslab[c * c_out..(c + 1) * c_out];
                for (o, &kv) in orow.iter_mut().zip(krow) {
                    *o += xv * kv;
                }
            }
        }
    }
    out
}

pub(crate) fn conv1d_dims(x: &Tensor, kernel: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (t_len, c_in) = require_matrix("conv1d", x)?;
    let [width, k_in, c_out] = kernel.shape() else {
        return Err(Error::Shape {
            op: "conv1d",
            lhs: x.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    };
    if *k_in != c_in {
        return Err(Error::Shape {
            op: "conv1d",
            lhs: x.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    if width % 2 == 0 {
        return Err(Error::config(alloc::format!(
            "conv1d kernel width must be odd, got {width}"
        )));
    }
    Ok((t_len, *width, c_in, *c_out))
}

/// Same-padded temporal cross-correlation: `x: T×C_in`, `kernel: k×C_in×C_out`.
pub fn conv1d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (t_len, width, c_in, c_out) = conv1d_dims(x, kernel)?;
    Tensor::new(
        vec![t_len, c_out],
        conv1d_raw(x.data(), kernel.data(), t_len, width, c_in, c_out),
    )
}

/// Normalised rows plus the per-row reciprocal standard deviation.
pub(crate) fn layer_norm_raw(x: &[f64], m: usize, n: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; m * n];
    let mut rstd = vec![0.0; m];
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let r = 1.0 / math::sqrt(var + eps);
        rstd[i] = r;
        for (o, &v) in xhat[i * n..(i + 1) * n].iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
    }
    (xhat, rstd)
}

pub(crate) fn check_layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let (m, n) = require_matrix("layer_norm", x)?;
    if gain.numel() != n || bias.numel() != n {
        return Err(Error::Shape {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: vec![gain.numel(), bias.numel()],
        });
    }
    if n == 0 {
        return Err(Error::config("layer_norm needs at least one channel"));
    }
    Ok((m, n))
}

/// Per-row normalisation followed by the affine `gain`, `bias` map.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (m, n) = check_layer_norm(x, gain, bias)?;
    let (mut xhat, _) = layer_norm_raw(x.data(), m, n, eps);
    for i in 0..m {
        for j in 0..n {
            let v = &mut xhat[i * n + j];
            *v = *v * gain.data()[j] + bias.data()[j];
        }
    }
    Tensor::new(vec![m, n], xhat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_returns_input() {
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, -6.0]]).unwrap();
        let out = matmul(&Tensor::identity(3), &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn scalar_matmul() {
        let a = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        match matmul(&a, &b).unwrap_err() {
            Error::Shape { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn softmax_closed_forms() {
        let single = softmax_rows(&Tensor::new(vec![3, 1], vec![-4.0, 0.0, 9.0]).unwrap()).unwrap();
        assert_eq!(single.data(), &[1.0, 1.0, 1.0]);

        let flat = softmax_rows(&Tensor::new(vec![1, 3], vec![2.5; 3]).unwrap()).unwrap();
        for v in flat.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let two = softmax_rows(&Tensor::new(vec![1, 2], vec![0.0, core::f64::consts::LN_2]).unwrap())
            .unwrap();
        assert!((two.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((two.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let x = Tensor::new(vec![1, 3], vec![1000.0, 1001.0, 999.0]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert!(y.all_finite());
        assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conv1d_identity_and_zero() {
        let x = Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0], &[4.0, 0.0]]).unwrap();
        let mut k = Tensor::zeros(&[1, 2, 2]);
        k.data_mut()[0] = 1.0;
        k.data_mut()[3] = 1.0;
        assert_eq!(conv1d(&x, &k).unwrap(), x);

        let zero = Tensor::zeros(&[4, 2]);
        let k3 = Tensor::new(vec![3, 2, 5], (0..30).map(|i| i as f64 * 0.1).collect()).unwrap();
        assert!(conv1d(&zero, &k3).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv1d_rejects_even_width() {
        let x = Tensor::zeros(&[4, 2]);
        let k = Tensor::zeros(&[2, 2, 2]);
        assert!(matches!(conv1d(&x, &k), Err(Error::Config(_))));
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let zeros = Tensor::zeros(&[2]);

        let constant = Tensor::from_rows(&[&[3.0, 3.0]]).unwrap();
        let y = layer_norm(&constant, &ones, &zeros, LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);

        // variance of [1, -1] is 1, so the output is [1, -1] / sqrt(1 + eps).
        let pm = Tensor::from_rows(&[&[1.0, -1.0]]).unwrap();
        let y = layer_norm(&pm, &ones, &zeros, LAYER_NORM_EPS).unwrap();
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-15);
        assert!((y.data()[1] + expected).abs() < 1e-15);
        assert!((y.data()[0] - 1.0).abs() < 1e-5);

        let bias = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
        let y = layer_norm(&pm, &zeros, &bias, LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[0.3, -0.7]);
    }
}
