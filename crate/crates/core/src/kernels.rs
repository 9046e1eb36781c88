//! Dense kernels over a single real plane laid out as `[rows, channels]`.
//! Quaternion layers call these once per component channel.

/// `out[r, u] = Σ_v weight[u, v] · input[r, v]`.
pub(crate) fn mix_channels(input: &[f64], rows: usize, d_in: usize, weight: &[f64], d_out: usize) -> Vec<f64> {
    debug_assert_eq!(input.len(), rows * d_in);
    debug_assert_eq!(weight.len(), d_out * d_in);
    let mut out = vec![0.0; rows * d_out];
    for r in 0..rows {
        let x = &input[r * d_in..(r + 1) * d_in];
        let y = &mut out[r * d_out..(r + 1) * d_out];
        for (u, yu) in y.iter_mut().enumerate() {
            let wu = &weight[u * d_in..(u + 1) * d_in];
            *yu = wu.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Accumulates `dW[u, v] += Σ_r g[r, u] · x[r, v]` and returns `dx`.
pub(crate) fn mix_channels_backward(
    input: &[f64],
    grad_out: &[f64],
    rows: usize,
    d_in: usize,
    weight: &[f64],
    d_out: usize,
    grad_weight: &mut [f64],
) -> Vec<f64> {
    let mut grad_in = vec![0.0; rows * d_in];
    for r in 0..rows {
        let x = &input[r * d_in..(r + 1) * d_in];
        let g = &grad_out[r * d_out..(r + 1) * d_out];
        let gx = &mut grad_in[r * d_in..(r + 1) * d_in];
        for (u, &gu) in g.iter().enumerate() {
            if gu == 0.0 {
                continue;
            }
            let wu = &weight[u * d_in..(u + 1) * d_in];
            let dwu = &mut grad_weight[u * d_in..(u + 1) * d_in];
            for v in 0..d_in {
                dwu[v] += gu * x[v];
                gx[v] += gu * wu[v];
            }
        }
    }
    grad_in
}

/// Gathers rows of a `[n, c]` plane.
pub(crate) fn gather_rows(input: &[f64], c: usize, index: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(index.len() * c);
    for &i in index {
        out.extend_from_slice(&input[i * c..(i + 1) * c]);
    }
    out
}

/// Adjoint of [`gather_rows`].
pub(crate) fn scatter_rows(grad: &[f64], c: usize, index: &[usize], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for (k, &i) in index.iter().enumerate() {
        for j in 0..c {
            out[i * c + j] += grad[k * c + j];
        }
    }
    out
}

/// Concatenates two planes along the channel axis.
pub(crate) fn concat_channels(a: &[f64], ca: usize, b: &[f64], cb: usize, rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * (ca + cb));
    for r in 0..rows {
        out.extend_from_slice(&a[r * ca..(r + 1) * ca]);
        out.extend_from_slice(&b[r * cb..(r + 1) * cb]);
    }
    out
}

/// Splits a plane produced by [`concat_channels`].
pub(crate) fn split_channels(x: &[f64], ca: usize, cb: usize, rows: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(rows * ca);
    let mut b = Vec::with_capacity(rows * cb);
    let c = ca + cb;
    for r in 0..rows {
        a.extend_from_slice(&x[r * c..r * c + ca]);
        b.extend_from_slice(&x[r * c + ca..(r + 1) * c]);
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_matches_hand_product() {
        // rows = 2, d_in = 2, d_out = 1, W = [1, 2]
        let out = mix_channels(&[1.0, 1.0, 3.0, -1.0], 2, 2, &[1.0, 2.0], 1);
        assert_eq!(out, vec![3.0, 1.0]);
    }

    #[test]
    fn gather_scatter_adjoint() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let idx = [2, 0, 2];
        let g = gather_rows(&x, 2, &idx);
        assert_eq!(g, vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let back = scatter_rows(&[1.0; 6], 2, &idx, 3);
        assert_eq!(back, vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0, 5.0, 6.0];
        let c = concat_channels(&a, 1, &b, 2, 2);
        assert_eq!(c, vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(split_channels(&c, 1, 2, 2), (a.to_vec(), b.to_vec()));
    }
}
