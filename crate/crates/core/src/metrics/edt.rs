//! Exact squared Euclidean distance transform on an anisotropic grid.
//!
//! Felzenszwalb–Huttenlocher lower-envelope algorithm, run separably along
//! x, y, z with sample positions in millimetres (`index * spacing`). The
//! parabola-intersection form works for arbitrary strictly increasing
//! sample positions, so anisotropic spacing needs no special casing.

use alloc::vec;
use alloc::vec::Vec;

/// 1D squared-distance transform of sampled parabolas.
///
/// `f[i]` is the input cost at position `pos[i]`; `out[i]` becomes
/// `min_j (pos[i] - pos[j])^2 + f[j]`. Infinite costs are skipped while
/// building the envelope (a parabola at +inf never contributes).
fn edt_1d(f: &[f64], pos: &[f64], out: &mut [f64]) {
    let n = f.len();
    debug_assert_eq!(pos.len(), n);
    debug_assert_eq!(out.len(), n);

    // indices of parabolas forming the lower envelope, and the boundaries
    // z[k]..z[k+1] where envelope parabola k is minimal
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);

    for q in 0..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
            z.push(f64::INFINITY);
            continue;
        }
        loop {
            let r = *v.last().unwrap();
            // intersection of parabola q with envelope top r
            let s = ((f[q] + pos[q] * pos[q]) - (f[r] + pos[r] * pos[r]))
                / (2.0 * pos[q] - 2.0 * pos[r]);
            if s <= z[v.len() - 1] {
                v.pop();
                z.pop();
                if v.is_empty() {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    z.push(f64::INFINITY);
                    break;
                }
            } else {
                *z.last_mut().unwrap() = s;
                v.push(q);
                z.push(f64::INFINITY);
                break;
            }
        }
    }

    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for i in 0..n {
        while z[k + 1] < pos[i] {
            k += 1;
        }
        let j = v[k];
        let d = pos[i] - pos[j];
        out[i] = d * d + f[j];
    }
}

/// Squared mm distance from every voxel center to the nearest seed voxel
/// center. Voxels where `seed` is true get 0.
pub(crate) fn squared_edt_mm(
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    seed: &[bool],
) -> Vec<f64> {
    let (d, h, w) = dims;
    assert_eq!(seed.len(), d * h * w);
    let mut grid: Vec<f64> =
        seed.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();

    let max_extent = w.max(h).max(d);
    let mut f = vec![0.0f64; max_extent];
    let mut pos = vec![0.0f64; max_extent];
    let mut out = vec![0.0f64; max_extent];

    // pass 1: along x
    for (i, p) in pos.iter_mut().enumerate().take(w) {
        *p = i as f64 * spacing.2;
    }
    for zy in 0..d * h {
        let row = &mut grid[zy * w..(zy + 1) * w];
        f[..w].copy_from_slice(row);
        edt_1d(&f[..w], &pos[..w], &mut out[..w]);
        row.copy_from_slice(&out[..w]);
    }

    // pass 2: along y
    for (i, p) in pos.iter_mut().enumerate().take(h) {
        *p = i as f64 * spacing.1;
    }
    for zi in 0..d {
        for x in 0..w {
            for y in 0..h {
                f[y] = grid[(zi * h + y) * w + x];
            }
            edt_1d(&f[..h], &pos[..h], &mut out[..h]);
            for y in 0..h {
                grid[(zi * h + y) * w + x] = out[y];
            }
        }
    }

    // pass 3: along z
    for (i, p) in pos.iter_mut().enumerate().take(d) {
        *p = i as f64 * spacing.0;
    }
    for y in 0..h {
        for x in 0..w {
            for zi in 0..d {
                f[zi] = grid[(zi * h + y) * w + x];
            }
            edt_1d(&f[..d], &pos[..d], &mut out[..d]);
            for zi in 0..d {
                grid[(zi * h + y) * w + x] = out[zi];
            }
        }
    }

    grid
}
