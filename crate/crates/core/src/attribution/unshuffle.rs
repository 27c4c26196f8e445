//! Space-to-channel rearrangement and the reduction of an image-sized
//! attribution map to one value per tabular feature.

use crate::error::{Error, Result};
use nncore::NnError;

fn shape_error(msg: String) -> Error {
    Error::Nn(NnError::Shape(msg))
}

/// `[C, H, W] -> [C*r*r, H/r, W/r]`. Output channel `c*r*r + dy*r + dx` at
/// `(i, j)` holds input channel `c` at `(i*r + dy, j*r + dx)`.
pub fn pixel_unshuffle<T: Copy>(x: &[T], c: usize, h: usize, w: usize, r: usize) -> Result<Vec<T>> {
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(shape_error(format!("pixel unshuffle of {h}x{w} by factor {r}")));
    }
    if x.len() != c * h * w {
        return Err(shape_error(format!("{} values for a {c}x{h}x{w} tensor", x.len())));
    }
    let (oh, ow) = (h / r, w / r);
    let mut out = Vec::with_capacity(x.len());
    for ci in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                for i in 0..oh {
                    for j in 0..ow {
                        out.push(x[(ci * h + i * r + dy) * w + j * r + dx]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_unshuffle`]: `[C*r*r, H, W] -> [C, H*r, W*r]`.
pub fn pixel_shuffle<T: Copy>(x: &[T], c: usize, h: usize, w: usize, r: usize) -> Result<Vec<T>> {
    if r == 0 || c % (r * r) != 0 {
        return Err(shape_error(format!("pixel shuffle of {c} channels by factor {r}")));
    }
    if x.len() != c * h * w {
        return Err(shape_error(format!("{} values for a {c}x{h}x{w} tensor", x.len())));
    }
    let (oc, oh, ow) = (c / (r * r), h * r, w * r);
    let mut out = Vec::with_capacity(x.len());
    for ci in 0..oc {
        for y in 0..oh {
            for xo in 0..ow {
                let src_c = ci * r * r + (y % r) * r + xo % r;
                out.push(x[(src_c * h + y / r) * w + xo / r]);
            }
        }
    }
    Ok(out)
}

/// Halves a single-channel map by unshuffling with `r = 2` and averaging
/// the four resulting channels.
fn unshuffle_mean(x: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
    let u = pixel_unshuffle(x, 1, h, w, 2)?;
    let plane = h * w / 4;
    Ok((0..plane).map(|k| (u[k] + u[plane + k] + u[2 * plane + k] + u[3 * plane + k]) / 4.0).collect())
}

/// Number of halving stages [`match_length`] applies to a `side x side` map.
pub fn reduction_stages(side: usize, n: usize) -> usize {
    let (mut h, mut stages) = (side, 0);
    while h % 2 == 0 && (h / 2) * (h / 2) >= n {
        h /= 2;
        stages += 1;
    }
    stages
}

/// Reduces a `side x side` map to `n` values. Halving stages run while the
/// side is even and the halved map still has at least `n` entries; the
/// flattened result of length `L` is then split into `n` contiguous
/// intervals of width `L/n` and each output is the overlap-weighted mean of
/// its interval. Every step is an average, so the global mean is preserved.
pub fn match_length(q: &[f64], side: usize, n: usize) -> Result<Vec<f64>> {
    let pixels = side * side;
    if q.len() != pixels {
        return Err(shape_error(format!("{} values for a {side}x{side} map", q.len())));
    }
    if n == 0 || n > pixels {
        return Err(Error::Unsupported(format!("cannot reduce {pixels} values to {n}")));
    }
    let mut cur = q.to_vec();
    let mut h = side;
    for _ in 0..reduction_stages(side, n) {
        cur = unshuffle_mean(&cur, h, h)?;
        h /= 2;
    }
    let len = cur.len();
    if len == n {
        return Ok(cur);
    }
    let width = len as f64 / n as f64;
    Ok((0..n)
        .map(|g| {
            let (lo, hi) = (g as f64 * width, (g + 1) as f64 * width);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(len);
            (first..last)
                .map(|k| {
                    let overlap = (hi.min(k as f64 + 1.0) - lo.max(k as f64)).max(0.0);
                    cur[k] * overlap
                })
                .sum::<f64>()
                / width
        })
        .collect())
}

/// [`match_length`] as sparse rows `(input index, weight)`, obtained by
/// applying it to every basis vector.
pub fn match_length_map(side: usize, n: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let pixels = side * side;
    let mut rows = vec![Vec::new(); n];
    let mut basis = vec![0.0; pixels];
    for i in 0..pixels {
        basis[i] = 1.0;
        for (g, v) in match_length(&basis, side, n)?.into_iter().enumerate() {
            if v != 0.0 {
                rows[g].push((i, v));
            }
        }
        basis[i] = 0.0;
    }
    Ok(rows)
}
