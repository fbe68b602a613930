//! Single-plane image resampling helpers. Images are row-major `h * w` slices.

/// Bilinear sample with zero outside the image.
pub fn sample_bilinear(img: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let (dy, dx) = (y - y0, x - x0);
    let at = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
            0.0
        } else {
            img[r as usize * w + c as usize]
        }
    };
    (1.0 - dy) * ((1.0 - dx) * at(y0, x0) + dx * at(y0, x0 + 1.0))
        + dy * ((1.0 - dx) * at(y0 + 1.0, x0) + dx * at(y0 + 1.0, x0 + 1.0))
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(img: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    if (h, w) == (nh, nw) {
        return img.to_vec();
    }
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    let mut out = Vec::with_capacity(nh * nw);
    for r in 0..nh {
        let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        for c in 0..nw {
            let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (dy, dx) = (y - y0 as f64, x - x0 as f64);
            let top = (1.0 - dx) * img[y0 * w + x0] + dx * img[y0 * w + x1];
            let bot = (1.0 - dx) * img[y1 * w + x0] + dx * img[y1 * w + x1];
            out.push((1.0 - dy) * top + dy * bot);
        }
    }
    out
}

pub fn hflip(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    (0..h).flat_map(|r| (0..w).rev().map(move |c| img[r * w + c])).collect()
}

pub fn vflip(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    (0..h).rev().flat_map(|r| img[r * w..(r + 1) * w].iter().copied()).collect()
}

/// Rotation about the image centre, bilinear resampling, zero fill.
pub fn rotate(img: &[f64], h: usize, w: usize, degrees: f64) -> Vec<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            let (dy, dx) = (r as f64 - cy, col as f64 - cx);
            let sy = c * dy - s * dx + cy;
            let sx = s * dy + c * dx + cx;
            out.push(sample_bilinear(img, h, w, sy, sx));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flips_are_involutions() {
        let img: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(hflip(&hflip(&img, 3, 4), 3, 4), img);
        assert_eq!(vflip(&vflip(&img, 3, 4), 3, 4), img);
        assert_eq!(hflip(&img, 3, 4)[..4], [3.0, 2.0, 1.0, 0.0]);
        assert_eq!(vflip(&img, 3, 4)[..4], [8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img: Vec<f64> = (0..25).map(|v| v as f64 / 25.0).collect();
        let r = rotate(&img, 5, 5, 0.0);
        for (a, b) in r.iter().zip(&img) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_moves_pixels() {
        let mut img = vec![0.0; 9];
        img[1] = 1.0;
        let r = rotate(&img, 3, 3, 90.0);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(r[1] < 1e-9);
    }

    #[test]
    fn resize_preserves_constants_and_identity() {
        let img = vec![0.7; 16];
        for v in resize_bilinear(&img, 4, 4, 9, 7) {
            assert!((v - 0.7).abs() < 1e-12);
        }
        let ramp: Vec<f64> = (0..16).map(|v| v as f64).collect();
        assert_eq!(resize_bilinear(&ramp, 4, 4, 4, 4), ramp);
        assert_eq!(resize_bilinear(&ramp, 4, 4, 2, 2), vec![2.5, 4.5, 10.5, 12.5]);
    }
}
