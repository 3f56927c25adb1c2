//! Layer primitives for the fixed architecture: 3x3 same-padding convolution,
//! ReLU, 2x2 max pooling, global average pooling, and their backward passes.
//!
//! All loops run in a fixed order so results are bit-deterministic. The
//! convolutions process one output row at a time with all nine kernel taps
//! fused into the element update: each output element accumulates its taps
//! in ascending (dy, dx) order via `f64::mul_add`. Fused multiply-add is
//! part of the accumulation contract, not an optimization detail — IEEE 754
//! specifies fma exactly, so hardware FMA and the software fallback produce
//! identical bits, and the explicit call keeps the compiler from splitting
//! it back into a rounding mul + add. The test module keeps naive per-tap
//! references (same tap order, same mul_add) and asserts bit equality.
//!
//! On x86-64 machines with AVX-512 the plane update runs eight columns per
//! register; each lane executes the identical tap sequence (edge lanes skip
//! their out-of-range taps through the fma write mask, which leaves the
//! accumulator bits untouched), so the vector and scalar paths agree to the
//! bit and the dispatch is invisible to callers.

/// out[o,y,x] = bias[o] + sum_{i,dy,dx} w[o,i,dy,dx] * in[i, y+dy-1, x+dx-1]
/// with zero padding of one pixel. `out` must hold `c_out * h * w` elements.
pub fn conv3x3_forward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    out: &mut [f64],
) {
    assert_eq!(input.len(), c_in * h * w);
    assert_eq!(weight.len(), c_out * c_in * 9);
    assert_eq!(bias.len(), c_out);
    assert_eq!(out.len(), c_out * h * w);

    for o in 0..c_out {
        let out_plane = &mut out[o * h * w..(o + 1) * h * w];
        out_plane.fill(bias[o]);
        for i in 0..c_in {
            let in_plane = &input[i * h * w..(i + 1) * h * w];
            let k: &[f64; 9] = weight[(o * c_in + i) * 9..][..9].try_into().unwrap();
            add_conv_plane(out_plane, in_plane, h, w, k);
        }
    }
}

/// dst_plane += conv3x3(src_plane, k), row by row. Rows whose width is a
/// multiple of eight take the AVX-512 path where the hardware has it; the
/// widths the model actually uses otherwise get monomorphized scalar
/// instantiations so their loop bounds are compile-time constants. The
/// arithmetic is identical on every path.
#[inline]
fn add_conv_plane(dst_plane: &mut [f64], src_plane: &[f64], h: usize, w: usize, k: &[f64; 9]) {
    #[cfg(target_arch = "x86_64")]
    if w > 0 && w % 8 == 0 && avx512::supported() {
        // SAFETY: avx512f presence was just checked.
        unsafe { avx512::add_conv_plane(dst_plane, src_plane, h, w, k) };
        return;
    }
    match w {
        8 => add_conv_plane_w::<8>(dst_plane, src_plane, h, w, k),
        16 => add_conv_plane_w::<16>(dst_plane, src_plane, h, w, k),
        32 => add_conv_plane_w::<32>(dst_plane, src_plane, h, w, k),
        _ => add_conv_plane_w::<0>(dst_plane, src_plane, h, w, k),
    }
}

/// `W` is the compile-time row width, or 0 when only `w` at run time knows
/// it; the branch below folds away per instantiation.
fn add_conv_plane_w<const W: usize>(
    dst_plane: &mut [f64],
    src_plane: &[f64],
    h: usize,
    w: usize,
    k: &[f64; 9],
) {
    let w = if W == 0 { w } else { W };
    for y in 0..h {
        let up = (y > 0).then(|| &src_plane[(y - 1) * w..y * w]);
        let mid = &src_plane[y * w..(y + 1) * w];
        let down = (y + 1 < h).then(|| &src_plane[(y + 1) * w..(y + 2) * w]);
        conv_row(&mut dst_plane[y * w..(y + 1) * w], up, mid, down, k);
    }
}

/// dst[x] += sum of the 3x3 taps centered on (row, x), taken in ascending
/// (dy, dx) order; `up`/`down` are absent at the vertical borders and the
/// first/last columns drop their out-of-range horizontal taps.
#[inline]
fn conv_row(dst: &mut [f64], up: Option<&[f64]>, mid: &[f64], down: Option<&[f64]>, k: &[f64; 9]) {
    let w = dst.len();
    let last = w - 1;

    {
        let mut acc = dst[0];
        if let Some(u) = up {
            acc = k[1].mul_add(u[0], acc);
            if w > 1 {
                acc = k[2].mul_add(u[1], acc);
            }
        }
        acc = k[4].mul_add(mid[0], acc);
        if w > 1 {
            acc = k[5].mul_add(mid[1], acc);
        }
        if let Some(d) = down {
            acc = k[7].mul_add(d[0], acc);
            if w > 1 {
                acc = k[8].mul_add(d[1], acc);
            }
        }
        dst[0] = acc;
    }
    if w == 1 {
        return;
    }

    match (up, down) {
        (Some(u), Some(d)) => {
            for x in 1..last {
                let mut acc = dst[x];
                acc = k[0].mul_add(u[x - 1], acc);
                acc = k[1].mul_add(u[x], acc);
                acc = k[2].mul_add(u[x + 1], acc);
                acc = k[3].mul_add(mid[x - 1], acc);
                acc = k[4].mul_add(mid[x], acc);
                acc = k[5].mul_add(mid[x + 1], acc);
                acc = k[6].mul_add(d[x - 1], acc);
                acc = k[7].mul_add(d[x], acc);
                acc = k[8].mul_add(d[x + 1], acc);
                dst[x] = acc;
            }
        }
        (Some(u), None) => {
            for x in 1..last {
                let mut acc = dst[x];
                acc = k[0].mul_add(u[x - 1], acc);
                acc = k[1].mul_add(u[x], acc);
                acc = k[2].mul_add(u[x + 1], acc);
                acc = k[3].mul_add(mid[x - 1], acc);
                acc = k[4].mul_add(mid[x], acc);
                acc = k[5].mul_add(mid[x + 1], acc);
                dst[x] = acc;
            }
        }
        (None, Some(d)) => {
            for x in 1..last {
                let mut acc = dst[x];
                acc = k[3].mul_add(mid[x - 1], acc);
                acc = k[4].mul_add(mid[x], acc);
                acc = k[5].mul_add(mid[x + 1], acc);
                acc = k[6].mul_add(d[x - 1], acc);
                acc = k[7].mul_add(d[x], acc);
                acc = k[8].mul_add(d[x + 1], acc);
                dst[x] = acc;
            }
        }
        (None, None) => {
            for x in 1..last {
                let mut acc = dst[x];
                acc = k[3].mul_add(mid[x - 1], acc);
                acc = k[4].mul_add(mid[x], acc);
                acc = k[5].mul_add(mid[x + 1], acc);
                dst[x] = acc;
            }
        }
    }

    {
        let mut acc = dst[last];
        if let Some(u) = up {
            acc = k[0].mul_add(u[last - 1], acc);
            acc = k[1].mul_add(u[last], acc);
        }
        acc = k[3].mul_add(mid[last - 1], acc);
        acc = k[4].mul_add(mid[last], acc);
        if let Some(d) = down {
            acc = k[6].mul_add(d[last - 1], acc);
            acc = k[7].mul_add(d[last], acc);
        }
        dst[last] = acc;
    }
}

/// Lane-parallel rendition of the plane update. Eight consecutive output
/// columns share one accumulator register; every lane receives its taps in
/// the scalar order, one fused multiply-add per tap. The first and last
/// columns of a row must skip their out-of-range horizontal taps, so those
/// taps go through `_mm512_mask3_fmadd_pd` with the edge lane masked off —
/// the masked lane's accumulator is not written at all, which is exactly
/// the scalar skip. Neighbor vectors at the row edges come from lane
/// rotations of the already-loaded row chunk, so no load ever reaches past
/// the slice.
#[cfg(target_arch = "x86_64")]
mod avx512 {
    use core::arch::x86_64::*;

    #[inline]
    pub(super) fn supported() -> bool {
        std::arch::is_x86_feature_detected!("avx512f")
    }

    /// Same contract as the scalar `add_conv_plane`; `w` must be a positive
    /// multiple of eight and the caller must have verified `supported()`.
    #[target_feature(enable = "avx512f")]
    pub(super) fn add_conv_plane(
        dst_plane: &mut [f64],
        src_plane: &[f64],
        h: usize,
        w: usize,
        k: &[f64; 9],
    ) {
        debug_assert!(w > 0 && w % 8 == 0);
        let kv: [__m512d; 9] = core::array::from_fn(|t| _mm512_set1_pd(k[t]));
        for y in 0..h {
            let up = (y > 0).then(|| &src_plane[(y - 1) * w..y * w]);
            let mid = &src_plane[y * w..(y + 1) * w];
            let down = (y + 1 < h).then(|| &src_plane[(y + 1) * w..(y + 2) * w]);
            let dst = &mut dst_plane[y * w..(y + 1) * w];
            for x in (0..w).step_by(8) {
                // SAFETY: x + 8 <= w, so all eight lanes are in bounds.
                let mut acc = unsafe { _mm512_loadu_pd(dst.as_ptr().add(x)) };
                if let Some(u) = up {
                    acc = row_taps(acc, u, x, kv[0], kv[1], kv[2]);
                }
                acc = row_taps(acc, mid, x, kv[3], kv[4], kv[5]);
                if let Some(d) = down {
                    acc = row_taps(acc, d, x, kv[6], kv[7], kv[8]);
                }
                // SAFETY: as above.
                unsafe { _mm512_storeu_pd(dst.as_mut_ptr().add(x), acc) };
            }
        }
    }

    /// Adds one source row's three taps, ascending dx, for output columns
    /// x..x+8.
    #[inline]
    #[target_feature(enable = "avx512f")]
    fn row_taps(
        mut acc: __m512d,
        row: &[f64],
        x: usize,
        kl: __m512d,
        km: __m512d,
        kr: __m512d,
    ) -> __m512d {
        // SAFETY: x + 8 <= row.len() for every chunk the caller forms.
        let cur = unsafe { _mm512_loadu_pd(row.as_ptr().add(x)) };
        if x == 0 {
            // lane j wants row[j - 1]: rotate cur so lanes 1..7 hold
            // row[0..6]; lane 0 is garbage and masked off
            acc = _mm512_mask3_fmadd_pd(rotate::<7>(cur), kl, acc, 0xFE);
        } else {
            // SAFETY: x >= 8, so x - 1 .. x + 7 are in bounds.
            let left = unsafe { _mm512_loadu_pd(row.as_ptr().add(x - 1)) };
            acc = _mm512_fmadd_pd(left, kl, acc);
        }
        acc = _mm512_fmadd_pd(cur, km, acc);
        if x + 8 == row.len() {
            // lane j wants row[x + j + 1]: lanes 0..6 hold the rotated
            // chunk's tail; lane 7 is garbage and masked off
            acc = _mm512_mask3_fmadd_pd(rotate::<1>(cur), kr, acc, 0x7F);
        } else {
            // SAFETY: not the last chunk, so x + 1 .. x + 9 are in bounds.
            let right = unsafe { _mm512_loadu_pd(row.as_ptr().add(x + 1)) };
            acc = _mm512_fmadd_pd(right, kr, acc);
        }
        acc
    }

    /// Lane rotation: lane j takes lane (j + BY) % 8.
    #[inline]
    #[target_feature(enable = "avx512f")]
    fn rotate<const BY: i32>(v: __m512d) -> __m512d {
        let vi = _mm512_castpd_si512(v);
        _mm512_castsi512_pd(_mm512_alignr_epi64::<BY>(vi, vi))
    }
}

/// d_weight[o,i,dy,dx] += sum_{y,x} d_out[o,y,x] * in[i, y+dy-1, x+dx-1]
/// d_bias[o] += sum_{y,x} d_out[o,y,x]
///
/// Each of the nine tap sums accumulates in ascending (y, x) order.
pub fn conv3x3_param_grads(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    d_out: &[f64],
    c_out: usize,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
) {
    for o in 0..c_out {
        let d_plane = &d_out[o * h * w..(o + 1) * h * w];
        d_bias[o] += d_plane.iter().sum::<f64>();
        for i in 0..c_in {
            let in_plane = &input[i * h * w..(i + 1) * h * w];
            let mut acc = [0.0f64; 9];
            param_plane(&mut acc, d_plane, in_plane, h, w);
            let w_base = (o * c_in + i) * 9;
            for (t, a) in acc.iter().enumerate() {
                d_weight[w_base + t] += a;
            }
        }
    }
}

#[inline]
fn param_plane(acc: &mut [f64; 9], d_plane: &[f64], in_plane: &[f64], h: usize, w: usize) {
    match w {
        8 => param_plane_w::<8>(acc, d_plane, in_plane, h, w),
        16 => param_plane_w::<16>(acc, d_plane, in_plane, h, w),
        32 => param_plane_w::<32>(acc, d_plane, in_plane, h, w),
        _ => param_plane_w::<0>(acc, d_plane, in_plane, h, w),
    }
}

fn param_plane_w<const W: usize>(
    acc: &mut [f64; 9],
    d_plane: &[f64],
    in_plane: &[f64],
    h: usize,
    w: usize,
) {
    let w = if W == 0 { w } else { W };
    for y in 0..h {
        let up = (y > 0).then(|| &in_plane[(y - 1) * w..y * w]);
        let mid = &in_plane[y * w..(y + 1) * w];
        let down = (y + 1 < h).then(|| &in_plane[(y + 1) * w..(y + 2) * w]);
        param_row(acc, &d_plane[y * w..(y + 1) * w], up, mid, down);
    }
}

/// acc[dy*3+dx] += sum_x d_row[x] * in[y+dy-1, x+dx-1] for one output row.
#[inline]
fn param_row(acc: &mut [f64; 9], d_row: &[f64], up: Option<&[f64]>, mid: &[f64], down: Option<&[f64]>) {
    let w = d_row.len();
    let last = w - 1;

    {
        let dv = d_row[0];
        if let Some(u) = up {
            acc[1] = dv.mul_add(u[0], acc[1]);
            if w > 1 {
                acc[2] = dv.mul_add(u[1], acc[2]);
            }
        }
        acc[4] = dv.mul_add(mid[0], acc[4]);
        if w > 1 {
            acc[5] = dv.mul_add(mid[1], acc[5]);
        }
        if let Some(d) = down {
            acc[7] = dv.mul_add(d[0], acc[7]);
            if w > 1 {
                acc[8] = dv.mul_add(d[1], acc[8]);
            }
        }
    }
    if w == 1 {
        return;
    }

    match (up, down) {
        (Some(u), Some(d)) => {
            for x in 1..last {
                let dv = d_row[x];
                acc[0] = dv.mul_add(u[x - 1], acc[0]);
                acc[1] = dv.mul_add(u[x], acc[1]);
                acc[2] = dv.mul_add(u[x + 1], acc[2]);
                acc[3] = dv.mul_add(mid[x - 1], acc[3]);
                acc[4] = dv.mul_add(mid[x], acc[4]);
                acc[5] = dv.mul_add(mid[x + 1], acc[5]);
                acc[6] = dv.mul_add(d[x - 1], acc[6]);
                acc[7] = dv.mul_add(d[x], acc[7]);
                acc[8] = dv.mul_add(d[x + 1], acc[8]);
            }
        }
        (Some(u), None) => {
            for x in 1..last {
                let dv = d_row[x];
                acc[0] = dv.mul_add(u[x - 1], acc[0]);
                acc[1] = dv.mul_add(u[x], acc[1]);
                acc[2] = dv.mul_add(u[x + 1], acc[2]);
                acc[3] = dv.mul_add(mid[x - 1], acc[3]);
                acc[4] = dv.mul_add(mid[x], acc[4]);
                acc[5] = dv.mul_add(mid[x + 1], acc[5]);
            }
        }
        (None, Some(d)) => {
            for x in 1..last {
                let dv = d_row[x];
                acc[3] = dv.mul_add(mid[x - 1], acc[3]);
                acc[4] = dv.mul_add(mid[x], acc[4]);
                acc[5] = dv.mul_add(mid[x + 1], acc[5]);
                acc[6] = dv.mul_add(d[x - 1], acc[6]);
                acc[7] = dv.mul_add(d[x], acc[7]);
                acc[8] = dv.mul_add(d[x + 1], acc[8]);
            }
        }
        (None, None) => {
            for x in 1..last {
                let dv = d_row[x];
                acc[3] = dv.mul_add(mid[x - 1], acc[3]);
                acc[4] = dv.mul_add(mid[x], acc[4]);
                acc[5] = dv.mul_add(mid[x + 1], acc[5]);
            }
        }
    }

    {
        let dv = d_row[last];
        if let Some(u) = up {
            acc[0] = dv.mul_add(u[last - 1], acc[0]);
            acc[1] = dv.mul_add(u[last], acc[1]);
        }
        acc[3] = dv.mul_add(mid[last - 1], acc[3]);
        acc[4] = dv.mul_add(mid[last], acc[4]);
        if let Some(d) = down {
            acc[6] = dv.mul_add(d[last - 1], acc[6]);
            acc[7] = dv.mul_add(d[last], acc[7]);
        }
    }
}

/// d_in[i,y,x] = sum_{o,dy,dx} w[o,i,dy,dx] * d_out[o, y-dy+1, x-dx+1]
/// — the gather form of routing d_out through the kernel. Per element the
/// outer sum runs over o ascending, and within one (o, i) pair the taps run
/// over the d_out rows above, level with, and below (y, x), i.e. the 180°-
/// rotated kernel in ascending (row, column) order.
pub fn conv3x3_input_grads(
    d_out: &[f64],
    c_out: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_in: usize,
    d_in: &mut [f64],
) {
    for o in 0..c_out {
        let d_plane = &d_out[o * h * w..(o + 1) * h * w];
        for i in 0..c_in {
            let k = &weight[(o * c_in + i) * 9..(o * c_in + i) * 9 + 9];
            // rotate 180°: tap j of the gather reads kernel entry 8 - j
            let kf: [f64; 9] = std::array::from_fn(|j| k[8 - j]);
            let in_grad = &mut d_in[i * h * w..(i + 1) * h * w];
            add_conv_plane(in_grad, d_plane, h, w, &kf);
        }
    }
}

pub fn relu(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// d_pre = d_post where pre > 0, else 0. ReLU'(0) is taken as 0.
pub fn relu_backward(pre: &[f64], d_post: &[f64], d_pre: &mut [f64]) {
    for ((p, d), o) in pre.iter().zip(d_post).zip(d_pre.iter_mut()) {
        *o = if *p > 0.0 { *d } else { 0.0 };
    }
}

/// 2x2 max pooling with stride 2. When `argmax` is given, it receives the
/// flat input index of each window maximum (first maximum wins on ties,
/// scanning the window row-major).
pub fn maxpool2(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
    mut argmax: Option<&mut [usize]>,
) {
    let oh = h / 2;
    let ow = w / 2;
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let mut best_idx = (2 * y) * w + 2 * x;
                let mut best = plane[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * y + dy) * w + (2 * x + dx);
                    if plane[idx] > best {
                        best = plane[idx];
                        best_idx = idx;
                    }
                }
                let out_idx = (c * oh + y) * ow + x;
                out[out_idx] = best;
                if let Some(am) = argmax.as_deref_mut() {
                    am[out_idx] = c * h * w + best_idx;
                }
            }
        }
    }
}

/// Routes each pooled gradient back to the position recorded in `argmax`.
pub fn maxpool2_backward(d_out: &[f64], argmax: &[usize], d_in: &mut [f64]) {
    for (d, &src) in d_out.iter().zip(argmax) {
        d_in[src] += *d;
    }
}

/// Per-channel mean over the spatial plane.
pub fn global_avg_pool(input: &[f64], channels: usize, spatial: usize, out: &mut [f64]) {
    for c in 0..channels {
        let plane = &input[c * spatial..(c + 1) * spatial];
        out[c] = plane.iter().sum::<f64>() / spatial as f64;
    }
}
