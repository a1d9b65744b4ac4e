//! Direct 1-D correlation kernels behind [`super::layers::ConvTime`].
//!
//! Buffers are flat row-major `[channel][row][time]` slices. Inputs are
//! zero-padded copies (`lp` samples per row) so the inner loops need no
//! bounds logic; output rows are padded to a multiple of `TB` and channel
//! counts to a multiple of `OB`.

use super::layers::Real;

/// Output channels per register block.
pub(crate) const OB: usize = 4;
/// Time samples per register block.
pub(crate) const TB: usize = 16;

pub(crate) fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Copies `src` (`[ch][rows][w]`) into a zeroed `[ch_pad][rows][lp]` buffer,
/// shifting every row right by `left`.
pub(crate) fn pad_rows<F: Real>(
    src: &[F],
    ch: usize,
    rows: usize,
    w: usize,
    ch_pad: usize,
    left: usize,
    lp: usize,
) -> Vec<F> {
    debug_assert!(left + w <= lp);
    let mut out = vec![F::zero(); ch_pad * rows * lp];
    for r in 0..ch * rows {
        out[r * lp + left..r * lp + left + w].copy_from_slice(&src[r * w..(r + 1) * w]);
    }
    out
}

/// Shapes shared by the kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub n_out: usize,
    pub n_in: usize,
    pub k: usize,
    pub rows: usize,
    /// Padded input row length.
    pub lp: usize,
    /// Padded output row length, a multiple of `TB`.
    pub wpad: usize,
}

/// `out[o][f][t] = sum_c sum_j w[o][c][j] * xp[c][f][t + j]`.
///
/// `n_out` must be a multiple of `OB` and `lp >= wpad + k - 1`.
pub(crate) fn correlate<F: Real>(g: Geometry, w: &[F], xp: &[F], out: &mut [F]) {
    correlate_t::<F, TB>(g, w, xp, out)
}

fn correlate_t<F: Real, const T: usize>(g: Geometry, w: &[F], xp: &[F], out: &mut [F]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were detected above.
        unsafe { correlate_avx2::<F, T>(g, w, xp, out) };
        return;
    }
    correlate_body::<F, false, T>(g, w, xp, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn correlate_avx2<F: Real, const T: usize>(g: Geometry, w: &[F], xp: &[F], out: &mut [F]) {
    correlate_body::<F, true, T>(g, w, xp, out)
}

#[inline(always)]
fn fmadd<F: Real, const FMA: bool>(a: F, b: F, acc: F) -> F {
    if FMA { a.mul_add(b, acc) } else { acc + a * b }
}

#[inline(always)]
fn correlate_body<F: Real, const FMA: bool, const TB: usize>(g: Geometry, w: &[F], xp: &[F], out: &mut [F]) {
    let Geometry { n_out, n_in, k, rows, lp, wpad } = g;
    assert!(n_out % OB == 0 && wpad % TB == 0 && lp + 1 >= wpad + k);
    assert!(w.len() >= n_out * n_in * k && xp.len() >= n_in * rows * lp);
    assert!(out.len() >= n_out * rows * wpad);
    let stride = n_in * k;
    for ob in (0..n_out).step_by(OB) {
        for f in 0..rows {
            for t0 in (0..wpad).step_by(TB) {
                let mut acc = [[F::zero(); TB]; OB];
                for c in 0..n_in {
                    let row = &xp[(c * rows + f) * lp..(c * rows + f + 1) * lp];
                    let wbase = ob * stride + c * k;
                    for j in 0..k {
                        let xs: &[F; TB] = row[t0 + j..t0 + j + TB].try_into().unwrap();
                        for (o, acc_o) in acc.iter_mut().enumerate() {
                            let wv = w[wbase + o * stride + j];
                            for l in 0..TB {
                                acc_o[l] = fmadd::<F, FMA>(wv, xs[l], acc_o[l]);
                            }
                        }
                    }
                }
                for (o, acc_o) in acc.iter().enumerate() {
                    let base = ((ob + o) * rows + f) * wpad + t0;
                    out[base..base + TB].copy_from_slice(acc_o);
                }
            }
        }
    }
}

/// `dw[o][c][j] += sum_f sum_t dy[o][f][t] * xp[c][f][t + j]` for `j < k`.
///
/// `g` describes the forward correlation; `dy` is `[g.n_out][rows][width]`
/// and `xp` the padded forward input. Runs as a correlation with the roles
/// of taps and time swapped.
pub(crate) fn weight_grad<F: Real>(g: Geometry, width: usize, dy: &[F], xp: &[F], dw: &mut [F]) {
    let Geometry { n_out, n_in, k, rows, lp, .. } = g;
    if k <= 8 {
        weight_grad_blocked::<F, 8>(n_out, n_in, k, rows, lp, width, dy, xp, dw)
    } else {
        weight_grad_blocked::<F, TB>(n_out, n_in, k, rows, lp, width, dy, xp, dw)
    }
}

#[allow(clippy::too_many_arguments)]
fn weight_grad_blocked<F: Real, const T: usize>(
    n_out: usize,
    n_in: usize,
    k: usize,
    rows: usize,
    lp: usize,
    width: usize,
    dy: &[F],
    xp: &[F],
    dw: &mut [F],
) {
    let kpad = round_up(k, T);
    // xt[f][c][u] = xp[c][f][u], zero past the forward padding.
    let lt = kpad + width;
    let mut xt = vec![F::zero(); rows * n_in * lt];
    let copy = lp.min(lt);
    for c in 0..n_in {
        for f in 0..rows {
            let src = &xp[(c * rows + f) * lp..][..copy];
            xt[(f * n_in + c) * lt..][..copy].copy_from_slice(src);
        }
    }
    let gt = Geometry {
        n_out,
        n_in: rows,
        k: width,
        rows: n_in,
        lp: lt,
        wpad: kpad,
    };
    let mut out = vec![F::zero(); n_out * n_in * kpad];
    correlate_t::<F, T>(gt, dy, &xt, &mut out);
    for o in 0..n_out.min(dw.len() / (n_in * k)) {
        for c in 0..n_in {
            let src = &out[(o * n_in + c) * kpad..][..k];
            for (d, &v) in dw[(o * n_in + c) * k..][..k].iter_mut().zip(src) {
                *d += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(w: &[f64], x: &[f64], n_out: usize, n_in: usize, k: usize, rows: usize, width: usize, pad: usize) -> Vec<f64> {
        let mut y = vec![0.0; n_out * rows * width];
        for o in 0..n_out {
            for f in 0..rows {
                for t in 0..width {
                    let mut s = 0.0;
                    for c in 0..n_in {
                        for j in 0..k {
                            let u = t as isize + j as isize - pad as isize;
                            if (0..width as isize).contains(&u) {
                                s += w[(o * n_in + c) * k + j] * x[(c * rows + f) * width + u as usize];
                            }
                        }
                    }
                    y[(o * rows + f) * width + t] = s;
                }
            }
        }
        y
    }

    #[test]
    fn correlate_matches_naive_same_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(n_out, n_in, k, rows, width) in &[(4, 3, 5, 2, 21), (8, 1, 16, 3, 40), (4, 2, 1, 1, 16), (4, 2, 12, 2, 7)] {
            let w: Vec<f64> = (0..n_out * n_in * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..n_in * rows * width).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pad = (k - 1) / 2;
            let wpad = round_up(width, TB);
            let lp = wpad + k;
            let g = Geometry { n_out, n_in, k, rows, lp, wpad };
            let xp = pad_rows(&x, n_in, rows, width, n_in, pad, lp);
            let mut out = vec![0.0; n_out * rows * wpad];
            correlate(g, &w, &xp, &mut out);
            let expect = naive(&w, &x, n_out, n_in, k, rows, width, pad);
            for o in 0..n_out {
                for f in 0..rows {
                    for t in 0..width {
                        let a = out[(o * rows + f) * wpad + t];
                        let b = expect[(o * rows + f) * width + t];
                        assert!((a - b).abs() < 1e-12, "k={k} o={o} f={f} t={t}");
                    }
                }
            }
        }
    }
}
