//! NHWC compute kernels. Convolutions go through per-image im2col and
//! a register-blocked GEMM whose microkernel is monomorphized over the
//! output-channel count, so the hot f32 paths compile to straight-line
//! FMA streams. Dense layers use axpy/dot over contiguous weight rows;
//! zero inputs (common after ReLU) skip their run.

use super::Scalar;

/// Pixel rows processed together by one GEMM tile.
const MR: usize = 4;

/// Patch matrix of one image: row (y*w + x) holds the 3x3 receptive
/// field of that pixel as [tap][ci], zero-padded at the borders. Matches
/// the [3,3,ci,co] weight layout flattened to [9*ci, co].
fn im2col<S: Scalar>(img: &[S], h: usize, w: usize, ci: usize, patches: &mut [S]) {
    let k_len = 9 * ci;
    debug_assert_eq!(img.len(), h * w * ci);
    debug_assert_eq!(patches.len(), h * w * k_len);
    for y in 0..h {
        for x in 0..w {
            let row = &mut patches[(y * w + x) * k_len..(y * w + x + 1) * k_len];
            for dy in 0..3usize {
                let y_ok = match dy {
                    0 => y >= 1,
                    1 => true,
                    _ => y + 1 < h,
                };
                for dx in 0..3usize {
                    let dst = &mut row[(dy * 3 + dx) * ci..(dy * 3 + dx + 1) * ci];
                    let x_ok = match dx {
                        0 => x >= 1,
                        1 => true,
                        _ => x + 1 < w,
                    };
                    if y_ok && x_ok {
                        let src = ((y + dy - 1) * w + (x + dx - 1)) * ci;
                        dst.copy_from_slice(&img[src..src + ci]);
                    } else {
                        dst.fill(S::zero());
                    }
                }
            }
        }
    }
}

/// Scatter-add of a patch-gradient matrix back onto the image grid;
/// exact adjoint of `im2col`. Overwrites dimg.
fn col2im_add<S: Scalar>(dpatch: &[S], h: usize, w: usize, ci: usize, dimg: &mut [S]) {
    let k_len = 9 * ci;
    debug_assert_eq!(dimg.len(), h * w * ci);
    dimg.fill(S::zero());
    for y in 0..h {
        for x in 0..w {
            let row = &dpatch[(y * w + x) * k_len..(y * w + x + 1) * k_len];
            for dy in 0..3usize {
                let y_ok = match dy {
                    0 => y >= 1,
                    1 => true,
                    _ => y + 1 < h,
                };
                if !y_ok {
                    continue;
                }
                for dx in 0..3usize {
                    let x_ok = match dx {
                        0 => x >= 1,
                        1 => true,
                        _ => x + 1 < w,
                    };
                    if !x_ok {
                        continue;
                    }
                    let src = &row[(dy * 3 + dx) * ci..(dy * 3 + dx + 1) * ci];
                    let base = ((y + dy - 1) * w + (x + dx - 1)) * ci;
                    let dst = &mut dimg[base..base + ci];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn finish_row<S: Scalar, const N: usize>(acc: &[S; N], relu: bool, dst: &mut [S]) {
    let dst = &mut dst[..N];
    if relu {
        for (d, &v) in dst.iter_mut().zip(acc) {
            *d = if v < S::zero() { S::zero() } else { v };
        }
    } else {
        dst.copy_from_slice(acc);
    }
}

/// Four rows of C = A x B (+ bias), N columns wide. A rows start at
/// stride a_stride, B rows at b_stride, C rows at c_stride; `red` is
/// the reduction length. Separate accumulator arrays per row keep the
/// tile in registers.
#[inline]
#[allow(clippy::too_many_arguments)]
fn mm_tile4<S: Scalar, const N: usize>(
    a: &[S],
    a_stride: usize,
    red: usize,
    b: &[S],
    b_stride: usize,
    bias: Option<&[S]>,
    relu: bool,
    c: &mut [S],
    c_stride: usize,
) {
    let mut acc0 = [S::zero(); N];
    let mut acc1 = [S::zero(); N];
    let mut acc2 = [S::zero(); N];
    let mut acc3 = [S::zero(); N];
    if let Some(bias) = bias {
        acc0.copy_from_slice(bias);
        acc1.copy_from_slice(bias);
        acc2.copy_from_slice(bias);
        acc3.copy_from_slice(bias);
    }
    for r in 0..red {
        let brow: &[S; N] = b[r * b_stride..r * b_stride + N].try_into().unwrap();
        let (v0, v1, v2, v3) =
            (a[r], a[a_stride + r], a[2 * a_stride + r], a[3 * a_stride + r]);
        for j in 0..N {
            let bj = brow[j];
            acc0[j] += v0 * bj;
            acc1[j] += v1 * bj;
            acc2[j] += v2 * bj;
            acc3[j] += v3 * bj;
        }
    }
    finish_row(&acc0, relu, &mut c[0..]);
    finish_row(&acc1, relu, &mut c[c_stride..]);
    finish_row(&acc2, relu, &mut c[2 * c_stride..]);
    finish_row(&acc3, relu, &mut c[3 * c_stride..]);
}

#[inline]
fn mm_tile1<S: Scalar, const N: usize>(
    a: &[S],
    red: usize,
    b: &[S],
    b_stride: usize,
    bias: Option<&[S]>,
    relu: bool,
    c: &mut [S],
) {
    let mut acc0 = [S::zero(); N];
    if let Some(bias) = bias {
        acc0.copy_from_slice(bias);
    }
    for r in 0..red {
        let brow: &[S; N] = b[r * b_stride..r * b_stride + N].try_into().unwrap();
        let v0 = a[r];
        for j in 0..N {
            acc0[j] += v0 * brow[j];
        }
    }
    finish_row(&acc0, relu, c);
}

fn conv_gemm<S: Scalar, const N: usize>(
    patches: &[S],
    hw: usize,
    k_len: usize,
    wgt: &[S],
    bias: &[S],
    relu: bool,
    out: &mut [S],
) {
    let mut p = 0;
    while p + MR <= hw {
        mm_tile4::<S, N>(
            &patches[p * k_len..],
            k_len,
            k_len,
            wgt,
            N,
            Some(bias),
            relu,
            &mut out[p * N..],
            N,
        );
        p += MR;
    }
    while p < hw {
        mm_tile1::<S, N>(&patches[p * k_len..], k_len, wgt, N, Some(bias), relu, &mut out[p * N..]);
        p += 1;
    }
}

/// Fallback for channel counts without a monomorphized tile.
fn conv_gemm_dyn<S: Scalar>(
    patches: &[S],
    hw: usize,
    k_len: usize,
    wgt: &[S],
    bias: &[S],
    co: usize,
    relu: bool,
    out: &mut [S],
) {
    for p in 0..hw {
        let dst = &mut out[p * co..(p + 1) * co];
        dst.copy_from_slice(bias);
        let arow = &patches[p * k_len..(p + 1) * k_len];
        for (k, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &wgt[k * co..(k + 1) * co];
            for (d, &bv) in dst.iter_mut().zip(brow) {
                *d += av * bv;
            }
        }
        if relu {
            for d in dst.iter_mut() {
                if *d < S::zero() {
                    *d = S::zero();
                }
            }
        }
    }
}

/// 3x3 stride-1 same-padding convolution, optional fused ReLU.
/// inp: [n,h,w,ci], wgt: [3,3,ci,co], bias: [co], out: [n,h,w,co].
pub fn conv3x3_forward<S: Scalar>(
    inp: &[S],
    n: usize,
    h: usize,
    w: usize,
    ci: usize,
    wgt: &[S],
    bias: &[S],
    co: usize,
    relu: bool,
    out: &mut [S],
) {
    debug_assert_eq!(inp.len(), n * h * w * ci);
    debug_assert_eq!(wgt.len(), 9 * ci * co);
    debug_assert_eq!(out.len(), n * h * w * co);
    let k_len = 9 * ci;
    let hw = h * w;
    let mut patches = vec![S::zero(); hw * k_len];
    for ni in 0..n {
        im2col(&inp[ni * hw * ci..(ni + 1) * hw * ci], h, w, ci, &mut patches);
        let o = &mut out[ni * hw * co..(ni + 1) * hw * co];
        match co {
            16 => conv_gemm::<S, 16>(&patches, hw, k_len, wgt, bias, relu, o),
            32 => conv_gemm::<S, 32>(&patches, hw, k_len, wgt, bias, relu, o),
            48 => conv_gemm::<S, 48>(&patches, hw, k_len, wgt, bias, relu, o),
            64 => conv_gemm::<S, 64>(&patches, hw, k_len, wgt, bias, relu, o),
            _ => conv_gemm_dyn(&patches, hw, k_len, wgt, bias, co, relu, o),
        }
    }
}

/// dW += patches^T x dout for one image, four pixel rows per pass so
/// each dW row is loaded once per four pixels.
fn acc_dw<S: Scalar, const N: usize>(patches: &[S], hw: usize, k_len: usize, dout: &[S], dwgt: &mut [S]) {
    let mut p = 0;
    while p + MR <= hw {
        let a = &patches[p * k_len..];
        let g = &dout[p * N..(p + MR) * N];
        for k in 0..k_len {
            // no zero-skip: the gated row is only N wide, so the branch
            // costs more than the multiplies it saves
            let (v0, v1, v2, v3) = (a[k], a[k_len + k], a[2 * k_len + k], a[3 * k_len + k]);
            let dw = &mut dwgt[k * N..(k + 1) * N];
            for j in 0..N {
                dw[j] += v0 * g[j] + v1 * g[N + j] + v2 * g[2 * N + j] + v3 * g[3 * N + j];
            }
        }
        p += MR;
    }
    while p < hw {
        let a = &patches[p * k_len..];
        let grow = &dout[p * N..(p + 1) * N];
        for k in 0..k_len {
            let v = a[k];
            let dw = &mut dwgt[k * N..(k + 1) * N];
            for j in 0..N {
                dw[j] += v * grow[j];
            }
        }
        p += 1;
    }
}

fn acc_dw_dyn<S: Scalar>(patches: &[S], hw: usize, k_len: usize, dout: &[S], co: usize, dwgt: &mut [S]) {
    for p in 0..hw {
        let arow = &patches[p * k_len..(p + 1) * k_len];
        let grow = &dout[p * co..(p + 1) * co];
        for (k, &v) in arow.iter().enumerate() {
            if v == S::zero() {
                continue;
            }
            let dw = &mut dwgt[k * co..(k + 1) * co];
            for (d, &gv) in dw.iter_mut().zip(grow) {
                *d += v * gv;
            }
        }
    }
}

/// dpatch = dout x W^T for one image: a GEMM with reduction over output
/// channels, tiled in 16-column chunks of the patch axis (9*ci is a
/// multiple of 16 for all the standard widths).
fn dpatch_pass<S: Scalar>(
    dout: &[S],
    wgt_t: &[S],
    hw: usize,
    k_len: usize,
    co: usize,
    dpatch: &mut [S],
) {
    if k_len % 16 == 0 {
        let mut p = 0;
        while p + MR <= hw {
            let a = &dout[p * co..];
            let c = &mut dpatch[p * k_len..];
            for kc in (0..k_len).step_by(16) {
                mm_tile4::<S, 16>(a, co, co, &wgt_t[kc..], k_len, None, false, &mut c[kc..], k_len);
            }
            p += MR;
        }
        while p < hw {
            let a = &dout[p * co..];
            let c = &mut dpatch[p * k_len..];
            for kc in (0..k_len).step_by(16) {
                mm_tile1::<S, 16>(a, co, &wgt_t[kc..], k_len, None, false, &mut c[kc..]);
            }
            p += 1;
        }
        return;
    }
    // odd widths: per-channel axpy over transposed filter rows
    dpatch.fill(S::zero());
    for p in 0..hw {
        let row = &mut dpatch[p * k_len..(p + 1) * k_len];
        for o in 0..co {
            let g = dout[p * co + o];
            if g == S::zero() {
                continue;
            }
            let wrow = &wgt_t[o * k_len..(o + 1) * k_len];
            for (r, &wv) in row.iter_mut().zip(wrow) {
                *r += g * wv;
            }
        }
    }
}

/// Backward of the convolution. `dout` must already be masked by the
/// layer's ReLU (see `relu_mask_inplace`). Accumulates into dwgt/dbias;
/// overwrites din when given (pass None for the first layer, whose
/// input gradient nobody consumes).
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<S: Scalar>(
    inp: &[S],
    n: usize,
    h: usize,
    w: usize,
    ci: usize,
    wgt: &[S],
    co: usize,
    dout: &[S],
    mut din: Option<&mut [S]>,
    dwgt: &mut [S],
    dbias: &mut [S],
) {
    debug_assert_eq!(dwgt.len(), wgt.len());
    debug_assert_eq!(dbias.len(), co);
    if let Some(d) = &din {
        debug_assert_eq!(d.len(), inp.len());
    }
    let k_len = 9 * ci;
    let hw = h * w;
    let mut patches = vec![S::zero(); hw * k_len];
    let mut dpatch = Vec::new();
    let mut wgt_t = Vec::new();
    if din.is_some() {
        dpatch = vec![S::zero(); hw * k_len];
        wgt_t = vec![S::zero(); k_len * co];
        for k in 0..k_len {
            for o in 0..co {
                wgt_t[o * k_len + k] = wgt[k * co + o];
            }
        }
    }
    for ni in 0..n {
        let img = &inp[ni * hw * ci..(ni + 1) * hw * ci];
        let g = &dout[ni * hw * co..(ni + 1) * hw * co];
        im2col(img, h, w, ci, &mut patches);
        for grow in g.chunks_exact(co) {
            for (db, &gv) in dbias.iter_mut().zip(grow) {
                *db += gv;
            }
        }
        match co {
            16 => acc_dw::<S, 16>(&patches, hw, k_len, g, dwgt),
            32 => acc_dw::<S, 32>(&patches, hw, k_len, g, dwgt),
            48 => acc_dw::<S, 48>(&patches, hw, k_len, g, dwgt),
            64 => acc_dw::<S, 64>(&patches, hw, k_len, g, dwgt),
            _ => acc_dw_dyn(&patches, hw, k_len, g, co, dwgt),
        }
        if let Some(d) = din.as_deref_mut() {
            dpatch_pass(g, &wgt_t, hw, k_len, co, &mut dpatch);
            col2im_add(&dpatch, h, w, ci, &mut d[ni * hw * ci..(ni + 1) * hw * ci]);
        }
    }
}

/// 2x2 max pool, stride 2, floor semantics (odd trailing row/col
/// dropped). Ties resolve to the first element in (y, x) scan order.
/// Returns argmax as flat indices into `inp`.
pub fn maxpool2_forward<S: Scalar>(
    inp: &[S],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    out: &mut [S],
    idx: &mut Vec<u32>,
) {
    let oh = h / 2;
    let ow = w / 2;
    debug_assert_eq!(out.len(), n * oh * ow * c);
    debug_assert!(inp.len() <= u32::MAX as usize);
    idx.clear();
    idx.resize(n * oh * ow * c, 0);
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let obase = ((ni * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    let mut best = S::neg_infinity();
                    let mut best_i = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let iy = oy * 2 + dy;
                            let ix = ox * 2 + dx;
                            let i = ((ni * h + iy) * w + ix) * c + ch;
                            if inp[i] > best {
                                best = inp[i];
                                best_i = i;
                            }
                        }
                    }
                    out[obase + ch] = best;
                    idx[obase + ch] = best_i as u32;
                }
            }
        }
    }
}

/// Routes each output gradient to its argmax input position.
pub fn maxpool2_backward<S: Scalar>(dout: &[S], idx: &[u32], din: &mut [S]) {
    debug_assert_eq!(dout.len(), idx.len());
    for v in din.iter_mut() {
        *v = S::zero();
    }
    for (&g, &i) in dout.iter().zip(idx) {
        din[i as usize] += g;
    }
}

/// Fully connected layer, optional fused ReLU.
/// inp: [n,fi], wgt: [fi,fo], bias: [fo], out: [n,fo]. The input-index
/// loop is outermost so each weight row streams once per batch.
pub fn dense_forward<S: Scalar>(
    inp: &[S],
    n: usize,
    fi: usize,
    wgt: &[S],
    bias: &[S],
    fo: usize,
    relu: bool,
    out: &mut [S],
) {
    debug_assert_eq!(inp.len(), n * fi);
    debug_assert_eq!(wgt.len(), fi * fo);
    debug_assert_eq!(out.len(), n * fo);
    for ni in 0..n {
        out[ni * fo..(ni + 1) * fo].copy_from_slice(bias);
    }
    for f in 0..fi {
        let wrow = &wgt[f * fo..(f + 1) * fo];
        for ni in 0..n {
            let v = inp[ni * fi + f];
            if v == S::zero() {
                continue;
            }
            let dst = &mut out[ni * fo..(ni + 1) * fo];
            for (d, &wv) in dst.iter_mut().zip(wrow) {
                *d += v * wv;
            }
        }
    }
    if relu {
        for d in out.iter_mut() {
            if *d < S::zero() {
                *d = S::zero();
            }
        }
    }
}

/// Backward of the dense layer; `dout` premasked by ReLU. Pass din as
/// None when the input gradient has no consumer (first weighted layer).
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<S: Scalar>(
    inp: &[S],
    n: usize,
    fi: usize,
    wgt: &[S],
    fo: usize,
    dout: &[S],
    din: Option<&mut [S]>,
    dwgt: &mut [S],
    dbias: &mut [S],
) {
    debug_assert_eq!(dout.len(), n * fo);
    for ni in 0..n {
        let g = &dout[ni * fo..(ni + 1) * fo];
        for (db, &gv) in dbias.iter_mut().zip(g) {
            *db += gv;
        }
    }
    match din {
        Some(din) => {
            debug_assert_eq!(din.len(), n * fi);
            for f in 0..fi {
                let wrow = &wgt[f * fo..(f + 1) * fo];
                let dwrow = &mut dwgt[f * fo..(f + 1) * fo];
                for ni in 0..n {
                    let v = inp[ni * fi + f];
                    let g = &dout[ni * fo..(ni + 1) * fo];
                    let mut acc = S::zero();
                    if v == S::zero() {
                        for (&wv, &gv) in wrow.iter().zip(g) {
                            acc += wv * gv;
                        }
                    } else {
                        for ((dw, &wv), &gv) in dwrow.iter_mut().zip(wrow).zip(g) {
                            *dw += v * gv;
                            acc += wv * gv;
                        }
                    }
                    din[ni * fi + f] = acc;
                }
            }
        }
        None => {
            for f in 0..fi {
                let dwrow = &mut dwgt[f * fo..(f + 1) * fo];
                for ni in 0..n {
                    let v = inp[ni * fi + f];
                    if v == S::zero() {
                        continue;
                    }
                    let g = &dout[ni * fo..(ni + 1) * fo];
                    for (dw, &gv) in dwrow.iter_mut().zip(g) {
                        *dw += v * gv;
                    }
                }
            }
        }
    }
}

/// Zeroes gradient entries whose forward output was clamped by ReLU.
pub fn relu_mask_inplace<S: Scalar>(dout: &mut [S], out: &[S]) {
    debug_assert_eq!(dout.len(), out.len());
    for (g, &o) in dout.iter_mut().zip(out) {
        if o <= S::zero() {
            *g = S::zero();
        }
    }
}

/// Row-wise softmax from logits, numerically stable.
pub fn softmax_rows<S: Scalar>(logits: &[S], n: usize, k: usize, out: &mut [S]) {
    debug_assert_eq!(logits.len(), n * k);
    for ni in 0..n {
        let row = &logits[ni * k..(ni + 1) * k];
        let dst = &mut out[ni * k..(ni + 1) * k];
        let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut sum = S::zero();
        for (d, &l) in dst.iter_mut().zip(row) {
            *d = (l - m).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d = *d / sum;
        }
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Mean cross-entropy over the batch and d(loss)/d(logits).
/// Returns (loss, dlogits).
pub fn ce_loss_from_logits<S: Scalar>(logits: &[S], n: usize, k: usize, targets: &[u32]) -> (S, Vec<S>) {
    debug_assert_eq!(targets.len(), n);
    let mut dlogits = vec![S::zero(); n * k];
    softmax_rows(logits, n, k, &mut dlogits);
    let inv_n = S::one() / S::from_usize(n);
    let mut loss = S::zero();
    for ni in 0..n {
        let row = &logits[ni * k..(ni + 1) * k];
        let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&l| (l - m).exp()).fold(S::zero(), |a, b| a + b).ln();
        let y = targets[ni] as usize;
        debug_assert!(y < k);
        loss += lse - row[y];
        let drow = &mut dlogits[ni * k..(ni + 1) * k];
        drow[y] -= S::one();
        for d in drow.iter_mut() {
            *d *= inv_n;
        }
    }
    (loss * inv_n, dlogits)
}

/// Mean binary cross-entropy for a single-logit head; targets in {0,1}.
pub fn bce_loss_from_logits<S: Scalar>(logits: &[S], n: usize, targets: &[u32]) -> (S, Vec<S>) {
    debug_assert_eq!(logits.len(), n);
    debug_assert_eq!(targets.len(), n);
    let inv_n = S::one() / S::from_usize(n);
    let mut loss = S::zero();
    let mut dlogits = vec![S::zero(); n];
    for ni in 0..n {
        let l = logits[ni];
        let y = S::from_usize(targets[ni] as usize);
        debug_assert!(targets[ni] <= 1);
        // max(l,0) - l*y + ln(1 + exp(-|l|))
        loss += l.max(S::zero()) - l * y + (S::one() + (-l.abs()).exp()).ln();
        dlogits[ni] = (sigmoid(l) - y) * inv_n;
    }
    (loss * inv_n, dlogits)
}
