//! Gaussian-window SSIM on single-channel images, with its gradient.
//!
//! The window is an 11-tap separable Gaussian (σ = 1.5) applied as a
//! zero-padded "same" convolution. The kernel is symmetric, so the adjoint
//! of the filter is the filter itself.

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Separable zero-padded Gaussian filter.
pub fn gaussian_filter(img: &[f64], width: usize, height: usize) -> Vec<f64> {
    let k = kernel();
    let r = RADIUS as isize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..height {
        let row = &img[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += kv * row[xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..height {
        for (i, kv) in k.iter().enumerate() {
            let yy = y as isize + i as isize - r;
            if yy < 0 || yy as usize >= height {
                continue;
            }
            let src = &tmp[yy as usize * width..(yy as usize + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

struct Moments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    e_xx: Vec<f64>,
    e_yy: Vec<f64>,
    e_xy: Vec<f64>,
}

fn moments(x: &[f64], y: &[f64], w: usize, h: usize) -> Moments {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    Moments {
        mu_x: gaussian_filter(x, w, h),
        mu_y: gaussian_filter(y, w, h),
        e_xx: gaussian_filter(&sq(x, x), w, h),
        e_yy: gaussian_filter(&sq(y, y), w, h),
        e_xy: gaussian_filter(&sq(x, y), w, h),
    }
}

/// Mean SSIM of `x` against `y` (dynamic range 1).
pub fn ssim(x: &[f64], y: &[f64], width: usize, height: usize) -> f64 {
    ssim_with_grad(x, y, width, height, false).0
}

/// Mean SSIM and, if requested, its gradient with respect to `x`.
pub fn ssim_with_grad(x: &[f64], y: &[f64], width: usize, height: usize, want_grad: bool) -> (f64, Vec<f64>) {
    assert_eq!(x.len(), width * height);
    assert_eq!(y.len(), width * height);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let m = moments(x, y, width, height);
    let n = x.len() as f64;
    let mut total = 0.0;
    let (mut ga, mut gb, mut gc) = if want_grad {
        (vec![0.0; x.len()], vec![0.0; x.len()], vec![0.0; x.len()])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..x.len() {
        let (mx, my) = (m.mu_x[p], m.mu_y[p]);
        let sxy = m.e_xy[p] - mx * my;
        let sxx = m.e_xx[p] - mx * mx;
        let syy = m.e_yy[p] - my * my;
        let n1 = 2.0 * mx * my + c1;
        let n2 = 2.0 * sxy + c2;
        let d1 = mx * mx + my * my + c1;
        let d2 = sxx + syy + c2;
        let s = n1 * n2 / (d1 * d2);
        total += s;
        if want_grad {
            ga[p] = (2.0 * my * (n2 - n1) / (d1 * d2) - 2.0 * mx * s * (1.0 / d1 - 1.0 / d2)) / n;
            gb[p] = -s / d2 / n;
            gc[p] = 2.0 * n1 / (d1 * d2) / n;
        }
    }
    if !want_grad {
        return (total / n, Vec::new());
    }
    let fa = gaussian_filter(&ga, width, height);
    let fb = gaussian_filter(&gb, width, height);
    let fc = gaussian_filter(&gc, width, height);
    let grad = (0..x.len()).map(|q| fa[q] + 2.0 * x[q] * fb[q] + y[q] * fc[q]).collect();
    (total / n, grad)
}
