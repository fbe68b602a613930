//! Bias-free 2-D cross-correlation kernels.
//!
//! Everything is expressed over one geometry: a "big" NCHW map and a "small"
//! map with `small = floor((big + 2p - k) / s) + 1`. Convolution goes big to
//! small, transposed convolution small to big, and the three kernels below
//! cover both directions plus the weight gradient.

/// Spatial bookkeeping shared by the conv kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub big_channels: usize,
    pub big_h: usize,
    pub big_w: usize,
    pub small_channels: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// `(n - 1) s - 2p + k + output_padding`, or `None` if it would be empty.
pub fn tconv_out_len(
    n: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (n - 1) * stride + kernel + output_padding;
    if full <= 2 * padding {
        return None;
    }
    Some(full - 2 * padding)
}

/// Half-open range of small indices `o` with `0 <= o*s + k - p < big`.
fn valid_range(k: usize, pad: usize, stride: usize, big: usize, small: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if big + pad > k { ((big - 1 + pad - k) / stride + 1).min(small) } else { 0 };
    (lo, hi.max(lo))
}

impl ConvGeom {
    fn ranges(&self) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let rows = (0..self.kernel)
            .map(|k| valid_range(k, self.padding, self.stride, self.big_h, self.small_h))
            .collect();
        let cols = (0..self.kernel)
            .map(|k| valid_range(k, self.padding, self.stride, self.big_w, self.small_w))
            .collect();
        (rows, cols)
    }

    fn big_len(&self) -> usize {
        self.batch * self.big_channels * self.big_h * self.big_w
    }

    fn small_len(&self) -> usize {
        self.batch * self.small_channels * self.small_h * self.small_w
    }

    fn weight_len(&self) -> usize {
        self.small_channels * self.big_channels * self.kernel * self.kernel
    }
}

/// `small[n,o,i,j] = sum_{c,a,b} big[n,c,i*s+a-p,j*s+b-p] * w[o,c,a,b]`.
pub fn corr_forward(big: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    debug_assert_eq!(big.len(), g.big_len());
    debug_assert_eq!(weight.len(), g.weight_len());
    let (rows, cols) = g.ranges();
    let (s, p, k) = (g.stride, g.padding, g.kernel);
    let big_plane = g.big_h * g.big_w;
    let small_plane = g.small_h * g.small_w;
    let mut out = vec![0.0; g.small_len()];
    for n in 0..g.batch {
        for o in 0..g.small_channels {
            let ob = (n * g.small_channels + o) * small_plane;
            let out_map = &mut out[ob..ob + small_plane];
            for c in 0..g.big_channels {
                let ib = (n * g.big_channels + c) * big_plane;
                let in_map = &big[ib..ib + big_plane];
                let wb = (o * g.big_channels + c) * k * k;
                for a in 0..k {
                    let (r0, r1) = rows[a];
                    for b in 0..k {
                        let wv = weight[wb + a * k + b];
                        let (c0, c1) = cols[b];
                        for i in r0..r1 {
                            let in_row = &in_map[(i * s + a - p) * g.big_w..];
                            let out_row = &mut out_map[i * g.small_w..(i + 1) * g.small_w];
                            for j in c0..c1 {
                                out_row[j] += wv * in_row[j * s + b - p];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`corr_forward`] with respect to `big`.
pub fn corr_backward_input(small: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    debug_assert_eq!(small.len(), g.small_len());
    debug_assert_eq!(weight.len(), g.weight_len());
    let (rows, cols) = g.ranges();
    let (s, p, k) = (g.stride, g.padding, g.kernel);
    let big_plane = g.big_h * g.big_w;
    let small_plane = g.small_h * g.small_w;
    let mut out = vec![0.0; g.big_len()];
    for n in 0..g.batch {
        for o in 0..g.small_channels {
            let sb = (n * g.small_channels + o) * small_plane;
            let small_map = &small[sb..sb + small_plane];
            for c in 0..g.big_channels {
                let bb = (n * g.big_channels + c) * big_plane;
                let big_map = &mut out[bb..bb + big_plane];
                let wb = (o * g.big_channels + c) * k * k;
                for a in 0..k {
                    let (r0, r1) = rows[a];
                    for b in 0..k {
                        let wv = weight[wb + a * k + b];
                        let (c0, c1) = cols[b];
                        for i in r0..r1 {
                            let row_start = (i * s + a - p) * g.big_w;
                            let small_row = &small_map[i * g.small_w..(i + 1) * g.small_w];
                            let big_row = &mut big_map[row_start..row_start + g.big_w];
                            for j in c0..c1 {
                                big_row[j * s + b - p] += wv * small_row[j];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `<small_grad, corr_forward(big, w)>` with respect to `w`.
pub fn corr_backward_weight(big: &[f64], small: &[f64], g: &ConvGeom) -> Vec<f64> {
    debug_assert_eq!(big.len(), g.big_len());
    debug_assert_eq!(small.len(), g.small_len());
    let (rows, cols) = g.ranges();
    let (s, p, k) = (g.stride, g.padding, g.kernel);
    let big_plane = g.big_h * g.big_w;
    let small_plane = g.small_h * g.small_w;
    let mut out = vec![0.0; g.weight_len()];
    for n in 0..g.batch {
        for o in 0..g.small_channels {
            let sb = (n * g.small_channels + o) * small_plane;
            let small_map = &small[sb..sb + small_plane];
            for c in 0..g.big_channels {
                let bb = (n * g.big_channels + c) * big_plane;
                let big_map = &big[bb..bb + big_plane];
                let wb = (o * g.big_channels + c) * k * k;
                for a in 0..k {
                    let (r0, r1) = rows[a];
                    for b in 0..k {
                        let (c0, c1) = cols[b];
                        let mut acc = 0.0;
                        for i in r0..r1 {
                            let big_row = &big_map[(i * s + a - p) * g.big_w..];
                            let small_row = &small_map[i * g.small_w..(i + 1) * g.small_w];
                            for j in c0..c1 {
                                acc += small_row[j] * big_row[j * s + b - p];
                            }
                        }
                        out[wb + a * k + b] += acc;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_length_laws() {
        assert_eq!(conv_out_len(28, 5, 2, 2), Some(14));
        assert_eq!(conv_out_len(7, 5, 2, 2), Some(4));
        assert_eq!(conv_out_len(2, 5, 1, 0), None);
        assert_eq!(tconv_out_len(7, 4, 2, 1, 0), Some(14));
        assert_eq!(tconv_out_len(4, 5, 2, 2, 0), Some(7));
        assert_eq!(tconv_out_len(7, 5, 2, 2, 1), Some(14));
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for big in 1..12 {
            for k in 1..6 {
                for s in 1..4 {
                    for p in 0..3 {
                        let Some(small) = conv_out_len(big, k, s, p) else { continue };
                        for a in 0..k {
                            let (lo, hi) = valid_range(a, p, s, big, small);
                            for o in 0..small {
                                let pos = (o * s + a) as isize - p as isize;
                                let inside = pos >= 0 && (pos as usize) < big;
                                assert_eq!(inside, o >= lo && o < hi, "big {big} k {k} s {s} p {p} a {a} o {o}");
                            }
                        }
                    }
                }
            }
        }
    }
}
