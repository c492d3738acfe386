//! Orthonormal DCT-II along the time axis.

use super::scene::Sequence;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `n×n` orthonormal DCT-II matrix: row `k` is the `k`-th basis vector,
/// `D[k][i] = s_k·cos(π(2i+1)k / 2n)` with `s_0 = √(1/n)`, `s_k = √(2/n)`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    let nf = n as f64;
    for k in 0..n {
        let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            d[k * n + i] = s * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
        }
    }
    d
}

/// First `k` rows of the DCT matrix as a `k×n` tensor.
pub fn dct_tensor(n: usize, k: usize) -> Tensor {
    let d = dct_matrix(n);
    Tensor::new([k, n], d[..k * n].to_vec()).expect("k <= n")
}

/// Transpose of the first `k` DCT rows: `n×k`, maps coefficients to samples.
pub fn idct_tensor(n: usize, k: usize) -> Tensor {
    let d = dct_matrix(n);
    let mut t = vec![0.0; n * k];
    for i in 0..n {
        for c in 0..k {
            t[i * k + c] = d[c * n + i];
        }
    }
    Tensor::new([n, k], t).expect("k <= n")
}

/// First `k` DCT coefficients of `x`, viewed as `n × width` (time-major).
pub fn dct_time(x: &[f64], n: usize, k: usize) -> Result<Vec<f64>> {
    check_k(k, n)?;
    if n == 0 || !x.len().is_multiple_of(n) {
        return Err(Error::dim("dct_time", &[x.len()], &[n]));
    }
    let width = x.len() / n;
    let d = dct_matrix(n);
    let mut out = vec![0.0; k * width];
    for c in 0..k {
        let row = &d[c * n..(c + 1) * n];
        let o = &mut out[c * width..(c + 1) * width];
        for (i, &w) in row.iter().enumerate() {
            o.iter_mut()
                .zip(&x[i * width..(i + 1) * width])
                .for_each(|(a, v)| *a += w * v);
        }
    }
    Ok(out)
}

/// Zero-pads `k` coefficients (each `width` wide) to `n` and applies the
/// inverse transform.
pub fn idct_time(coeffs: &[f64], k: usize, n: usize) -> Result<Vec<f64>> {
    check_k(k, n)?;
    if !coeffs.len().is_multiple_of(k) {
        return Err(Error::dim("idct_time", &[coeffs.len()], &[k]));
    }
    let width = coeffs.len() / k;
    let d = dct_matrix(n);
    let mut out = vec![0.0; n * width];
    for i in 0..n {
        let o = &mut out[i * width..(i + 1) * width];
        for c in 0..k {
            let w = d[c * n + i];
            o.iter_mut()
                .zip(&coeffs[c * width..(c + 1) * width])
                .for_each(|(a, v)| *a += w * v);
        }
    }
    Ok(out)
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("DCT keep count {k} outside 1..={n}")));
    }
    Ok(())
}

/// Low-pass filter: keep the first `k` temporal DCT coefficients. `k = T`
/// returns the input unchanged.
pub fn lowpass_smooth(y: &Sequence, k: usize) -> Result<Sequence> {
    let n = y.frames();
    check_k(k, n)?;
    if k == n {
        return Ok(y.clone());
    }
    let coeffs = dct_time(y.data(), n, k)?;
    Sequence::new(n, y.joints(), idct_time(&coeffs, k, n)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_signal_has_only_dc() {
        let n = 7;
        let x = vec![2.5; n];
        let c = dct_time(&x, n, n).unwrap();
        assert!((c[0] - (n as f64).sqrt() * 2.5).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn basis_vector_maps_to_unit_coefficient() {
        let n = 9;
        let d = dct_matrix(n);
        for k in 0..n {
            // Basis vector built directly from the cosine formula.
            let s = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            let basis: Vec<f64> = (0..n)
                .map(|i| s * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .collect();
            let c = dct_time(&basis, n, n).unwrap();
            for (j, v) in c.iter().enumerate() {
                let e = if j == k { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-12, "k={k} j={j} v={v}");
            }
            assert!(basis.iter().zip(&d[k * n..]).all(|(a, b)| (a - b).abs() < 1e-15));
        }
    }

    #[test]
    fn e0_inverts_to_constant() {
        let n = 6;
        let mut c = vec![0.0; n];
        c[0] = 1.0;
        let x = idct_time(&c, n, n).unwrap();
        assert!(x.iter().all(|v| (v - 1.0 / (n as f64).sqrt()).abs() < 1e-12));
    }

    #[test]
    fn k_range_checked() {
        assert!(dct_time(&[1.0; 4], 4, 0).is_err());
        assert!(dct_time(&[1.0; 4], 4, 5).is_err());
        assert!(idct_time(&[1.0; 5], 5, 4).is_err());
    }

    #[test]
    fn alternating_signal_k1_gives_mean() {
        let n = 8;
        let x: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 3.0 } else { -1.0 } + 0.5 * i as f64)
            .collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let seq = Sequence::new(n, 1, x.iter().flat_map(|&v| [v, v, v]).collect()).unwrap();
        let out = lowpass_smooth(&seq, 1).unwrap();
        assert!(out.data().iter().all(|v| (v - mean).abs() < 1e-12));
    }
}
