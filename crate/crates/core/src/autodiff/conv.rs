//! Grouped 3D convolution (cross-correlation, no kernel flip).
//!
//! Two forward algorithms are provided. `Direct` is the obvious seven-loop
//! reference; `Im2col` lowers each (sample, group) to a column matrix and
//! multiplies. The im2col matmul accumulates its inner dimension in
//! increasing order, which is the same order the direct loops visit
//! (channel, kz, ky, kx), so the two paths produce identical values — the
//! only difference is that padded taps contribute an explicit `0.0 * w`
//! term instead of being skipped, which cannot change a sum.
//!
//! The backward pass always uses the im2col formulation: recompute the
//! columns, then dW = dY · colᵀ and dX = scatter(Wᵀ · dY).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{AutodiffError, Op, Tape, Tensor};
use crate::real::Real;

/// Forward algorithm selector for [`Tape::conv3d_with_algo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvAlgo {
    /// Seven-loop reference implementation.
    Direct,
    /// Column-lowering + matrix multiply. Identical output, much faster.
    Im2col,
}

/// Resolved and validated convolution geometry.
struct Dims {
    n: usize,
    cin: usize,
    cout: usize,
    groups: usize,
    cin_g: usize,
    cout_g: usize,
    in_dhw: [usize; 3],
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
}

impl Dims {
    fn resolve(
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        stride: [usize; 3],
        pad: [usize; 3],
        groups: usize,
    ) -> Result<Self, AutodiffError> {
        if input.len() != 5 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv3d input must be [N,Cin,D,H,W], got {input:?}"
            )));
        }
        if weight.len() != 5 {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv3d weight must be [Cout,Cin/g,kD,kH,kW], got {weight:?}"
            )));
        }
        let (n, cin) = (input[0], input[1]);
        let cout = weight[0];
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(AutodiffError::GroupDivisibility);
        }
        let cin_g = cin / groups;
        if weight[1] != cin_g {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv3d weight channel dim {} != Cin/groups = {}",
                weight[1], cin_g
            )));
        }
        if let Some(b) = bias {
            if b != [cout] {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "conv3d bias must be [{cout}], got {b:?}"
                )));
            }
        }
        if stride.iter().any(|&s| s == 0) {
            return Err(AutodiffError::ShapeMismatch("conv3d stride must be >= 1".into()));
        }
        let in_dhw = [input[2], input[3], input[4]];
        let k = [weight[2], weight[3], weight[4]];
        let mut out = [0usize; 3];
        for a in 0..3 {
            let padded = in_dhw[a] + 2 * pad[a];
            if k[a] == 0 || padded < k[a] {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "conv3d kernel {:?} does not fit padded input {:?} + 2*{:?}",
                    k, in_dhw, pad
                )));
            }
            out[a] = (padded - k[a]) / stride[a] + 1;
        }
        Ok(Self { n, cin, cout, groups, cin_g, cout_g: cout / groups, in_dhw, k, stride, pad, out })
    }

    fn kvol(&self) -> usize {
        self.cin_g * self.k[0] * self.k[1] * self.k[2]
    }

    fn ovol(&self) -> usize {
        self.out[0] * self.out[1] * self.out[2]
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward<T: Real>(
    tape: &mut Tape<T>,
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: [usize; 3],
    padding: [usize; 3],
    groups: usize,
    algo: ConvAlgo,
) -> Result<Tensor, AutodiffError> {
    let d = Dims::resolve(
        &input.shape,
        &weight.shape,
        bias.map(|b| b.shape.as_slice()),
        stride,
        padding,
        groups,
    )?;
    let x = &tape.node(input.id).values;
    let w = &tape.node(weight.id).values;
    let bv = bias.map(|b| tape.node(b.id).values.as_slice());
    let out = match algo {
        ConvAlgo::Direct => forward_direct(&d, x, w, bv),
        ConvAlgo::Im2col => forward_im2col(&d, x, w, bv),
    };
    let out_shape = vec![d.n, d.cout, d.out[0], d.out[1], d.out[2]];
    let mut ids = vec![input.id, weight.id];
    if let Some(b) = bias {
        ids.push(b.id);
    }
    let rg = tape.requires(&ids);
    Ok(tape.push(
        out_shape,
        out,
        rg,
        Op::Conv3d {
            input: input.id,
            weight: weight.id,
            bias: bias.map(|b| b.id),
            stride,
            padding,
            groups,
        },
    ))
}

fn forward_direct<T: Real>(d: &Dims, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let [di, hi, wi] = d.in_dhw;
    let [kd, kh, kw] = d.k;
    let [sz, sy, sx] = d.stride;
    let [pz, py, px] = d.pad;
    let [od, oh, ow] = d.out;
    let kvol = d.cin_g * kd * kh * kw;
    let mut out = vec![T::zero(); d.n * d.cout * od * oh * ow];
    for n in 0..d.n {
        for co in 0..d.cout {
            let g = co / d.cout_g;
            let b = bias.map_or(T::zero(), |bv| bv[co]);
            let wbase = co * kvol;
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = T::zero();
                        for cil in 0..d.cin_g {
                            let ci = g * d.cin_g + cil;
                            let xbase = (n * d.cin + ci) * di * hi * wi;
                            for kz in 0..kd {
                                let iz = (oz * sz + kz) as isize - pz as isize;
                                if iz < 0 || iz >= di as isize {
                                    continue;
                                }
                                for ky in 0..kh {
                                    let iy = (oy * sy + ky) as isize - py as isize;
                                    if iy < 0 || iy >= hi as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * sx + kx) as isize - px as isize;
                                        if ix < 0 || ix >= wi as isize {
                                            continue;
                                        }
                                        let xv = x[xbase
                                            + (iz as usize * hi + iy as usize) * wi
                                            + ix as usize];
                                        let wv =
                                            w[wbase + ((cil * kd + kz) * kh + ky) * kw + kx];
                                        acc = acc + xv * wv;
                                    }
                                }
                            }
                        }
                        out[(((n * d.cout + co) * od + oz) * oh + oy) * ow + ox] = acc + b;
                    }
                }
            }
        }
    }
    out
}

/// out[m x n] += a[m x k] · b[k x n], walking k in increasing order per
/// output element. The inner loop runs over independent columns, so the
/// compiler may vectorize it without reassociating any sum.
fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// Fill `col` (kvol rows x ovol cols) for one (sample, group): row r holds
/// the (cil, kz, ky, kx) tap across all output positions, zero where the
/// tap falls outside the input.
fn fill_col<T: Real>(d: &Dims, x: &[T], n: usize, g: usize, col: &mut [T]) {
    let [di, hi, wi] = d.in_dhw;
    let [kd, kh, kw] = d.k;
    let [sz, sy, sx] = d.stride;
    let [pz, py, px] = d.pad;
    let [od, oh, ow] = d.out;
    let v = d.ovol();
    let mut r = 0usize;
    for cil in 0..d.cin_g {
        let ci = g * d.cin_g + cil;
        let xbase = (n * d.cin + ci) * di * hi * wi;
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &mut col[r * v..(r + 1) * v];
                    let mut vi = 0usize;
                    for oz in 0..od {
                        let iz = (oz * sz + kz) as isize - pz as isize;
                        let z_ok = iz >= 0 && iz < di as isize;
                        for oy in 0..oh {
                            let iy = (oy * sy + ky) as isize - py as isize;
                            let zy_ok = z_ok && iy >= 0 && iy < hi as isize;
                            for ox in 0..ow {
                                let ix = (ox * sx + kx) as isize - px as isize;
                                row[vi] = if zy_ok && ix >= 0 && ix < wi as isize {
                                    x[xbase + (iz as usize * hi + iy as usize) * wi + ix as usize]
                                } else {
                                    T::zero()
                                };
                                vi += 1;
                            }
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

fn forward_im2col<T: Real>(d: &Dims, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let v = d.ovol();
    let kvol = d.kvol();
    let mut out = vec![T::zero(); d.n * d.cout * v];
    let mut col = vec![T::zero(); kvol * v];
    for n in 0..d.n {
        for g in 0..d.groups {
            fill_col(d, x, n, g, &mut col);
            let wg = &w[g * d.cout_g * kvol..(g + 1) * d.cout_g * kvol];
            let obase = (n * d.cout + g * d.cout_g) * v;
            let og = &mut out[obase..obase + d.cout_g * v];
            matmul_acc(wg, &col, og, d.cout_g, kvol, v);
            if let Some(bv) = bias {
                for col_c in 0..d.cout_g {
                    let b = bv[g * d.cout_g + col_c];
                    for e in &mut og[col_c * v..(col_c + 1) * v] {
                        *e = *e + b;
                    }
                }
            }
        }
    }
    out
}

/// Transposed column matrix (ovol rows x kvol cols) used by the backward
/// pass so both backward matmuls stream contiguously.
fn fill_colt<T: Real>(d: &Dims, x: &[T], n: usize, g: usize, colt: &mut [T]) {
    let [di, hi, wi] = d.in_dhw;
    let [kd, kh, kw] = d.k;
    let [sz, sy, sx] = d.stride;
    let [pz, py, px] = d.pad;
    let [od, oh, ow] = d.out;
    let kvol = d.kvol();
    let mut vi = 0usize;
    for oz in 0..od {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut colt[vi * kvol..(vi + 1) * kvol];
                let mut r = 0usize;
                for cil in 0..d.cin_g {
                    let ci = g * d.cin_g + cil;
                    let xbase = (n * d.cin + ci) * di * hi * wi;
                    for kz in 0..kd {
                        let iz = (oz * sz + kz) as isize - pz as isize;
                        let z_ok = iz >= 0 && iz < di as isize;
                        for ky in 0..kh {
                            let iy = (oy * sy + ky) as isize - py as isize;
                            let zy_ok = z_ok && iy >= 0 && iy < hi as isize;
                            for kx in 0..kw {
                                let ix = (ox * sx + kx) as isize - px as isize;
                                row[r] = if zy_ok && ix >= 0 && ix < wi as isize {
                                    x[xbase + (iz as usize * hi + iy as usize) * wi + ix as usize]
                                } else {
                                    T::zero()
                                };
                                r += 1;
                            }
                        }
                    }
                }
                vi += 1;
            }
        }
    }
}

/// Scatter a transposed gradient column matrix back onto the input grid
/// (col2im). Taps that fell in padding are dropped.
fn scatter_colt<T: Real>(d: &Dims, dcolt: &[T], n: usize, g: usize, dx: &mut [T]) {
    let [di, hi, wi] = d.in_dhw;
    let [kd, kh, kw] = d.k;
    let [sz, sy, sx] = d.stride;
    let [pz, py, px] = d.pad;
    let [od, oh, ow] = d.out;
    let kvol = d.kvol();
    let mut vi = 0usize;
    for oz in 0..od {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &dcolt[vi * kvol..(vi + 1) * kvol];
                let mut r = 0usize;
                for cil in 0..d.cin_g {
                    let ci = g * d.cin_g + cil;
                    let xbase = (n * d.cin + ci) * di * hi * wi;
                    for kz in 0..kd {
                        let iz = (oz * sz + kz) as isize - pz as isize;
                        let z_ok = iz >= 0 && iz < di as isize;
                        for ky in 0..kh {
                            let iy = (oy * sy + ky) as isize - py as isize;
                            let zy_ok = z_ok && iy >= 0 && iy < hi as isize;
                            for kx in 0..kw {
                                let ix = (ox * sx + kx) as isize - px as isize;
                                if zy_ok && ix >= 0 && ix < wi as isize {
                                    let xi = xbase
                                        + (iz as usize * hi + iy as usize) * wi
                                        + ix as usize;
                                    dx[xi] = dx[xi] + row[r];
                                }
                                r += 1;
                            }
                        }
                    }
                }
                vi += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Real>(
    tape: &Tape<T>,
    input: usize,
    weight: usize,
    bias: Option<usize>,
    stride: [usize; 3],
    padding: [usize; 3],
    groups: usize,
    gout: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let d = Dims::resolve(
        &tape.node(input).shape,
        &tape.node(weight).shape,
        None,
        stride,
        padding,
        groups,
    )
    .expect("conv geometry was validated at forward time");
    let v = d.ovol();
    let kvol = d.kvol();

    if let Some(bid) = bias {
        if let Some(gb) = grads[bid].as_mut() {
            for n in 0..d.n {
                for co in 0..d.cout {
                    let row = &gout[(n * d.cout + co) * v..(n * d.cout + co + 1) * v];
                    let mut acc = T::zero();
                    for &g in row {
                        acc = acc + g;
                    }
                    gb[co] = gb[co] + acc;
                }
            }
        }
    }

    let need_dx = grads[input].is_some();
    let need_dw = grads[weight].is_some();
    if !need_dx && !need_dw {
        return;
    }
    let x = &tape.node(input).values;
    let w = &tape.node(weight).values;

    let mut colt = if need_dw { vec![T::zero(); v * kvol] } else { Vec::new() };
    let mut dcolt = if need_dx { vec![T::zero(); v * kvol] } else { Vec::new() };
    let mut dw = if need_dw { vec![T::zero(); w.len()] } else { Vec::new() };
    let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };

    for n in 0..d.n {
        for g in 0..d.groups {
            let gbase = (n * d.cout + g * d.cout_g) * v;
            let go = &gout[gbase..gbase + d.cout_g * v];
            if need_dw {
                fill_colt(&d, x, n, g, &mut colt);
                // dW[co][r] += sum_v go[co][v] * colt[v][r]
                let dwg = &mut dw[g * d.cout_g * kvol..(g + 1) * d.cout_g * kvol];
                for co in 0..d.cout_g {
                    let orow = &mut dwg[co * kvol..(co + 1) * kvol];
                    let gorow = &go[co * v..(co + 1) * v];
                    for (vv, &a) in gorow.iter().enumerate() {
                        let crow = &colt[vv * kvol..(vv + 1) * kvol];
                        for (o, &c) in orow.iter_mut().zip(crow) {
                            *o = *o + a * c;
                        }
                    }
                }
            }
            if need_dx {
                for e in dcolt.iter_mut() {
                    *e = T::zero();
                }
                // dcolt[v][r] += sum_co go[co][v] * W[co][r]
                let wg = &w[g * d.cout_g * kvol..(g + 1) * d.cout_g * kvol];
                for co in 0..d.cout_g {
                    let wrow = &wg[co * kvol..(co + 1) * kvol];
                    let gorow = &go[co * v..(co + 1) * v];
                    for (vv, &a) in gorow.iter().enumerate() {
                        let drow = &mut dcolt[vv * kvol..(vv + 1) * kvol];
                        for (o, &ww) in drow.iter_mut().zip(wrow) {
                            *o = *o + a * ww;
                        }
                    }
                }
                scatter_colt(&d, &dcolt, n, g, &mut dx);
            }
        }
    }

    if need_dw {
        let g = grads[weight].as_mut().unwrap();
        for (gi, &di) in g.iter_mut().zip(&dw) {
            *gi = *gi + di;
        }
    }
    if need_dx {
        let g = grads[input].as_mut().unwrap();
        for (gi, &di) in g.iter_mut().zip(&dx) {
            *gi = *gi + di;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn hand_computed_1d_slice() {
        // input [1,2,3] along W, kernel [10,20,30], pad 1 on W, bias 5
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![1.0, 2.0, 3.0], &[1, 1, 1, 1, 3], false).unwrap();
        let w = t.leaf(vec![10.0, 20.0, 30.0], &[1, 1, 1, 1, 3], false).unwrap();
        let b = t.leaf(vec![5.0], &[1], false).unwrap();
        let y = t.conv3d(&x, &w, Some(&b), [1, 1, 1], [0, 0, 1], 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 3]);
        // [0*10+1*20+2*30, 1*10+2*20+3*30, 2*10+3*20+0*30] + 5
        assert_eq!(t.value(&y), &[85.0, 145.0, 85.0]);
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t: Tape<f64> = Tape::new();
        let xv = randv(&mut rng, 2 * 3 * 4 * 5);
        let x = t.leaf(xv.clone(), &[1, 2, 3, 4, 5], false).unwrap();
        // depthwise identity: groups = 2, each 1x1x1 kernel = 1
        let w = t.leaf(vec![1.0, 1.0], &[2, 1, 1, 1, 1], false).unwrap();
        let y = t.conv3d(&x, &w, None, [1, 1, 1], [0, 0, 0], 2).unwrap();
        assert_eq!(t.value(&y), xv.as_slice());
    }

    #[test]
    fn output_dims_follow_floor_formula() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![0.0; 5 * 6 * 7], &[1, 1, 5, 6, 7], false).unwrap();
        let w = t.leaf(vec![0.0; 27], &[1, 1, 3, 3, 3], false).unwrap();
        let y = t.conv3d(&x, &w, None, [2, 2, 2], [1, 1, 1], 1).unwrap();
        // (in + 2p - k)/s + 1 = (4/2+1, 5/2+1, 6/2+1)
        assert_eq!(y.shape(), &[1, 1, 3, 3, 4]);
    }

    #[test]
    fn direct_and_im2col_agree_exactly_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        // (cin, cout, groups, k, stride, pad, dims)
        let cases: &[(usize, usize, usize, [usize; 3], [usize; 3], [usize; 3], [usize; 3])] = &[
            (1, 2, 1, [3, 3, 3], [1, 1, 1], [1, 1, 1], [4, 5, 6]),
            (4, 6, 2, [3, 3, 3], [2, 2, 2], [1, 1, 1], [5, 5, 5]),
            (4, 4, 4, [1, 3, 3], [1, 2, 2], [0, 1, 1], [3, 6, 7]),
            (2, 2, 1, [1, 1, 1], [1, 1, 1], [0, 0, 0], [2, 3, 4]),
            (3, 9, 3, [2, 2, 2], [1, 1, 1], [0, 0, 0], [4, 4, 4]),
        ];
        for &(cin, cout, g, k, s, p, dims) in cases {
            let n = 2;
            let xlen = n * cin * dims[0] * dims[1] * dims[2];
            let wlen = cout * (cin / g) * k[0] * k[1] * k[2];
            let xv = randv(&mut rng, xlen);
            let wv = randv(&mut rng, wlen);
            let bv = randv(&mut rng, cout);
            let mut t: Tape<f64> = Tape::new();
            let x = t
                .leaf(xv, &[n, cin, dims[0], dims[1], dims[2]], false)
                .unwrap();
            let w = t
                .leaf(wv, &[cout, cin / g, k[0], k[1], k[2]], false)
                .unwrap();
            let b = t.leaf(bv, &[cout], false).unwrap();
            let yd = t
                .conv3d_with_algo(&x, &w, Some(&b), s, p, g, ConvAlgo::Direct)
                .unwrap();
            let yi = t
                .conv3d_with_algo(&x, &w, Some(&b), s, p, g, ConvAlgo::Im2col)
                .unwrap();
            assert_eq!(t.value(&yd), t.value(&yi), "mismatch for case {cin},{cout},{g},{k:?}");
        }
    }

    #[test]
    fn grouped_conv_equals_independent_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (cin, cout, g) = (4usize, 6usize, 2usize);
        let dims = [3usize, 4, 4];
        let xv = randv(&mut rng, cin * dims[0] * dims[1] * dims[2]);
        let wv = randv(&mut rng, cout * (cin / g) * 27);
        let bv = randv(&mut rng, cout);

        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(xv, &[1, cin, dims[0], dims[1], dims[2]], false).unwrap();
        let w = t.leaf(wv.clone(), &[cout, cin / g, 3, 3, 3], false).unwrap();
        let b = t.leaf(bv.clone(), &[cout], false).unwrap();
        let y = t.conv3d(&x, &w, Some(&b), [1, 1, 1], [1, 1, 1], g).unwrap();

        // same thing as g separate convolutions on channel slices
        let mut parts = Vec::new();
        for gi in 0..g {
            let xs = t.slice_channels(&x, gi * cin / g, (gi + 1) * cin / g).unwrap();
            let wlen = (cout / g) * (cin / g) * 27;
            let ws = t
                .leaf(wv[gi * wlen..(gi + 1) * wlen].to_vec(), &[cout / g, cin / g, 3, 3, 3], false)
                .unwrap();
            let bs = t
                .leaf(bv[gi * cout / g..(gi + 1) * cout / g].to_vec(), &[cout / g], false)
                .unwrap();
            parts.push(t.conv3d(&xs, &ws, Some(&bs), [1, 1, 1], [1, 1, 1], 1).unwrap());
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let cat = t.concat(&refs, 1).unwrap();
        assert_eq!(t.value(&y), t.value(&cat));
    }

    #[test]
    fn group_divisibility_enforced() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![0.0; 3 * 8], &[1, 3, 2, 2, 2], false).unwrap();
        let w = t.leaf(vec![0.0; 2 * 1 * 1], &[2, 1, 1, 1, 1], false).unwrap();
        assert_eq!(
            t.conv3d(&x, &w, None, [1, 1, 1], [0, 0, 0], 2).unwrap_err(),
            AutodiffError::GroupDivisibility
        );
    }

    #[test]
    fn oversized_kernel_rejected() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![0.0; 8], &[1, 1, 2, 2, 2], false).unwrap();
        let w = t.leaf(vec![0.0; 125], &[1, 1, 5, 5, 5], false).unwrap();
        assert!(matches!(
            t.conv3d(&x, &w, None, [1, 1, 1], [1, 1, 1], 1),
            Err(AutodiffError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn weight_channel_mismatch_rejected() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.leaf(vec![0.0; 4 * 8], &[1, 4, 2, 2, 2], false).unwrap();
        let w = t.leaf(vec![0.0; 2 * 3], &[2, 3, 1, 1, 1], false).unwrap();
        assert!(matches!(
            t.conv3d(&x, &w, None, [1, 1, 1], [0, 0, 0], 1),
            Err(AutodiffError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn bias_grad_counts_output_positions() {
        // d(sum y)/d bias_c = number of output positions per channel
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t: Tape<f64> = Tape::new();
        let xv = randv(&mut rng, 2 * 2 * 27);
        let wv = randv(&mut rng, 3 * 2 * 27);
        let x = t.leaf(xv, &[2, 2, 3, 3, 3], false).unwrap();
        let w = t.leaf(wv, &[3, 2, 3, 3, 3], false).unwrap();
        let b = t.leaf(vec![0.1, 0.2, 0.3], &[3], true).unwrap();
        let y = t.conv3d(&x, &w, Some(&b), [1, 1, 1], [1, 1, 1], 1).unwrap();
        let loss = t.sum(&y);
        t.backward(&loss).unwrap();
        // 2 samples * 27 positions each
        assert_eq!(t.grad(&b).unwrap(), &[54.0, 54.0, 54.0]);
    }
}
