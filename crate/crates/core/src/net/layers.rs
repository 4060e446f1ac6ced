//! Dense kernels on channel-major `c × s × s` planes.

pub(super) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(super) fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

pub(super) fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Zero-pads each plane by one pixel on every side.
pub(super) fn pad(x: &[f64], c: usize, s: usize) -> Vec<f64> {
    let p = s + 2;
    let mut out = vec![0.0; c * p * p];
    for ch in 0..c {
        for y in 0..s {
            let src = &x[ch * s * s + y * s..][..s];
            out[ch * p * p + (y + 1) * p + 1..][..s].copy_from_slice(src);
        }
    }
    out
}

/// 3×3 "same" convolution of a padded input. Weights are `[cout, cin, 3, 3]`.
pub(super) fn conv3x3(xp: &[f64], w: &[f64], bias: &[f64], cin: usize, cout: usize, s: usize) -> Vec<f64> {
    let p = s + 2;
    let mut out = vec![0.0; cout * s * s];
    for o in 0..cout {
        let plane = &mut out[o * s * s..(o + 1) * s * s];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..cin {
            let k = &w[(o * cin + i) * 9..][..9];
            let src = &xp[i * p * p..(i + 1) * p * p];
            for y in 0..s {
                let row = &mut plane[y * s..(y + 1) * s];
                for ky in 0..3 {
                    let line = &src[(y + ky) * p..(y + ky) * p + p];
                    for kx in 0..3 {
                        let wv = k[ky * 3 + kx];
                        for (r, v) in row.iter_mut().zip(&line[kx..kx + s]) {
                            *r += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients. When `want_input` is set, returns
/// the gradient with respect to the unpadded input.
#[allow(clippy::too_many_arguments)]
pub(super) fn conv3x3_backward(
    xp: &[f64],
    w: &[f64],
    d_out: &[f64],
    cin: usize,
    cout: usize,
    s: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    want_input: bool,
) -> Vec<f64> {
    let p = s + 2;
    let mut d_xp = if want_input { vec![0.0; cin * p * p] } else { Vec::new() };
    for o in 0..cout {
        let d_plane = &d_out[o * s * s..(o + 1) * s * s];
        gb[o] += d_plane.iter().sum::<f64>();
        for i in 0..cin {
            let base = (o * cin + i) * 9;
            let src = &xp[i * p * p..(i + 1) * p * p];
            for y in 0..s {
                let d_row = &d_plane[y * s..(y + 1) * s];
                for ky in 0..3 {
                    let off = (y + ky) * p;
                    for kx in 0..3 {
                        let line = &src[off + kx..off + kx + s];
                        gw[base + ky * 3 + kx] += d_row.iter().zip(line).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            if want_input {
                let k = &w[base..base + 9];
                let dst = &mut d_xp[i * p * p..(i + 1) * p * p];
                for y in 0..s {
                    let d_row = &d_plane[y * s..(y + 1) * s];
                    for ky in 0..3 {
                        let off = (y + ky) * p;
                        for kx in 0..3 {
                            let wv = k[ky * 3 + kx];
                            for (t, d) in dst[off + kx..off + kx + s].iter_mut().zip(d_row) {
                                *t += wv * d;
                            }
                        }
                    }
                }
            }
        }
    }
    if !want_input {
        return d_xp;
    }
    let mut d_x = vec![0.0; cin * s * s];
    for ch in 0..cin {
        for y in 0..s {
            d_x[ch * s * s + y * s..][..s].copy_from_slice(&d_xp[ch * p * p + (y + 1) * p + 1..][..s]);
        }
    }
    d_x
}

/// 2×2 average pooling with stride 2.
pub(super) fn avg_pool2(x: &[f64], c: usize, s: usize) -> Vec<f64> {
    let h = s / 2;
    let mut out = vec![0.0; c * h * h];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..h {
                let i = ch * s * s + 2 * y * s + 2 * xx;
                out[ch * h * h + y * h + xx] = 0.25 * (x[i] + x[i + 1] + x[i + s] + x[i + s + 1]);
            }
        }
    }
    out
}

/// Gradient of [`avg_pool2`]; `h` is the pooled side length.
pub(super) fn avg_pool2_backward(d: &[f64], c: usize, h: usize) -> Vec<f64> {
    let s = 2 * h;
    let mut out = vec![0.0; c * s * s];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..h {
                let g = 0.25 * d[ch * h * h + y * h + xx];
                let i = ch * s * s + 2 * y * s + 2 * xx;
                out[i] = g;
                out[i + 1] = g;
                out[i + s] = g;
                out[i + s + 1] = g;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct conv with explicit bounds checks instead of padding.
    fn conv_direct(x: &[f64], w: &[f64], b: &[f64], cin: usize, cout: usize, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * s * s];
        for o in 0..cout {
            for y in 0..s as isize {
                for xx in 0..s as isize {
                    let mut acc = b[o];
                    for i in 0..cin {
                        for ky in -1..=1isize {
                            for kx in -1..=1isize {
                                let (yy, xq) = (y + ky, xx + kx);
                                if yy < 0 || xq < 0 || yy >= s as isize || xq >= s as isize {
                                    continue;
                                }
                                let wv = w[(o * cin + i) * 9 + ((ky + 1) * 3 + kx + 1) as usize];
                                acc += wv * x[i * s * s + yy as usize * s + xq as usize];
                            }
                        }
                    }
                    out[o * s * s + y as usize * s + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct() {
        let (cin, cout, s) = (3, 2, 5);
        let x: Vec<f64> = (0..cin * s * s).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let w: Vec<f64> = (0..cout * cin * 9).map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.3).collect();
        let b = [0.5, -1.0];
        let fast = conv3x3(&pad(&x, cin, s), &w, &b, cin, cout, s);
        let slow = conv_direct(&x, &w, &b, cin, cout, s);
        for (a, c) in fast.iter().zip(&slow) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_input_gradient_is_adjoint() {
        // <conv(x), d> = <x, conv^T(d)> for the bias-free part.
        let (cin, cout, s) = (2, 3, 4);
        let x: Vec<f64> = (0..cin * s * s).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..cout * cin * 9).map(|i| (i as f64 * 0.11).cos()).collect();
        let d: Vec<f64> = (0..cout * s * s).map(|i| (i as f64 * 0.23).sin()).collect();
        let y = conv3x3(&pad(&x, cin, s), &w, &[0.0; 3], cin, cout, s);
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; cout];
        let dx = conv3x3_backward(&pad(&x, cin, s), &w, &d, cin, cout, s, &mut gw, &mut gb, true);
        let lhs: f64 = y.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // Linear in w as well.
        let rhs_w: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn pooling_round_trip() {
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let p = avg_pool2(&x, 1, 4);
        assert_eq!(p, vec![2.5, 4.5, 10.5, 12.5]);
        let g = avg_pool2_backward(&[1.0, 0.0, 0.0, 4.0], 1, 2);
        assert_eq!(g[0], 0.25);
        assert_eq!(g[15], 1.0);
    }

    #[test]
    fn silu_derivative() {
        for z in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let num = (silu(z + 1e-6) - silu(z - 1e-6)) / 2e-6;
            assert!((num - silu_grad(z)).abs() < 1e-8);
        }
    }
}
