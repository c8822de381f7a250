//! SSIM with an 11×11 Gaussian window (σ = 1.5) and its gradient with
//! respect to the first image.
//!
//! Filtering uses zero-padded "same" convolution with a separable kernel.
//! The kernel is symmetric, so the filter is its own adjoint, which keeps the
//! backward pass a plain re-filter of the per-pixel gradient fields.

use crate::img::ImageRgb;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01; // (K1 L)², L = 1
const C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable zero-padded filter of a single-channel plane.
fn filter_plane(src: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let xi = x as isize + t as isize - half as isize;
                if xi >= 0 && (xi as usize) < w {
                    s += kv * row[xi as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let yi = y as isize + t as isize - half as isize;
                if yi >= 0 && (yi as usize) < h {
                    s += kv * tmp[yi as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Mean SSIM over pixels and channels of two same-size images.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> f64 {
    ssim_impl(a, b, false).0
}

/// Mean SSIM and d(meanSSIM)/d(a) as an image-shaped gradient.
pub fn ssim_with_grad(a: &ImageRgb, b: &ImageRgb) -> (f64, ImageRgb) {
    let (v, g) = ssim_impl(a, b, true);
    (v, g.expect("gradient requested"))
}

fn ssim_impl(a: &ImageRgb, b: &ImageRgb, want_grad: bool) -> (f64, Option<ImageRgb>) {
    assert!(a.same_size(b), "ssim inputs must match in size");
    let (w, h) = (a.width, a.height);
    let kernel = gaussian_kernel();
    let n = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| ImageRgb::new(w, h));

    let mut xs = vec![0.0; w * h];
    let mut ys = vec![0.0; w * h];
    let mut xx = vec![0.0; w * h];
    let mut yy = vec![0.0; w * h];
    let mut xy = vec![0.0; w * h];
    for ch in 0..3 {
        for p in 0..w * h {
            let xv = a.data[p * 3 + ch];
            let yv = b.data[p * 3 + ch];
            xs[p] = xv;
            ys[p] = yv;
            xx[p] = xv * xv;
            yy[p] = yv * yv;
            xy[p] = xv * yv;
        }
        let m1 = filter_plane(&xs, w, h, &kernel); // E[x]
        let mu_y = filter_plane(&ys, w, h, &kernel); // E[y]
        let m2 = filter_plane(&xx, w, h, &kernel); // E[x²]
        let e_yy = filter_plane(&yy, w, h, &kernel);
        let m3 = filter_plane(&xy, w, h, &kernel); // E[xy]

        let mut f1 = want_grad.then(|| vec![0.0; w * h]);
        let mut f2 = want_grad.then(|| vec![0.0; w * h]);
        let mut f3 = want_grad.then(|| vec![0.0; w * h]);

        for p in 0..w * h {
            let (m1p, myp) = (m1[p], mu_y[p]);
            let a1 = 2.0 * m1p * myp + C1;
            let a2 = 2.0 * (m3[p] - m1p * myp) + C2;
            let b1 = m1p * m1p + myp * myp + C1;
            let b2 = (m2[p] - m1p * m1p) + (e_yy[p] - myp * myp) + C2;
            let denom = b1 * b2;
            let s = a1 * a2 / denom;
            total += s;
            if want_grad {
                let u = 1.0 / n; // d(mean)/d(s_p)
                let ds_dm1 = (2.0 * myp * a2 - 2.0 * myp * a1) / denom
                    - s * (2.0 * m1p / b1 - 2.0 * m1p / b2);
                let ds_dm2 = -s / b2;
                let ds_dm3 = 2.0 * a1 / denom;
                f1.as_mut().unwrap()[p] = u * ds_dm1;
                f2.as_mut().unwrap()[p] = u * ds_dm2;
                f3.as_mut().unwrap()[p] = u * ds_dm3;
            }
        }

        if let (Some(f1), Some(f2), Some(f3), Some(gr)) =
            (f1.as_ref(), f2.as_ref(), f3.as_ref(), grad.as_mut())
        {
            // adjoint of each filtered moment: m1 ← G∗f1, m2 ← 2x·G∗f2, m3 ← y·G∗f3
            let g1 = filter_plane(f1, w, h, &kernel);
            let g2 = filter_plane(f2, w, h, &kernel);
            let g3 = filter_plane(f3, w, h, &kernel);
            for p in 0..w * h {
                gr.data[p * 3 + ch] = g1[p] + 2.0 * xs[p] * g2[p] + ys[p] * g3[p];
            }
        }
    }
    (total / n, grad.map(|g| g))
}

/// Mean SSIM restricted to luminance-free full-image mean; kept for metric
/// reporting symmetry with PSNR.
pub fn ssim_metric(a: &ImageRgb, b: &ImageRgb) -> f64 {
    ssim(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut StdRng, w: usize, h: usize) -> ImageRgb {
        let mut img = ImageRgb::new(w, h);
        for v in &mut img.data {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn identical_images_score_one_with_zero_grad() {
        let mut rng = StdRng::seed_from_u64(31);
        let a = random_image(&mut rng, 24, 18);
        let (v, g) = ssim_with_grad(&a, &a.clone());
        assert!((v - 1.0).abs() < 1e-12);
        assert!(g.data.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(32);
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        let (_, g) = ssim_with_grad(&a, &b);
        let h = 1e-5;
        for trial in 0..40 {
            let p = rng.gen_range(0..a.data.len());
            let mut ap = a.clone();
            ap.data[p] += h;
            let mut am = a.clone();
            am.data[p] -= h;
            let fd = (ssim(&ap, &b) - ssim(&am, &b)) / (2.0 * h);
            let ga = g.data[p];
            let denom = fd.abs().max(ga.abs()).max(1e-8);
            assert!(
                (fd - ga).abs() / denom < 1e-5,
                "trial {trial}: fd {fd} vs analytic {ga}"
            );
        }
    }

    #[test]
    fn lower_for_distorted_images() {
        let mut rng = StdRng::seed_from_u64(33);
        let a = random_image(&mut rng, 20, 20);
        let mut b = a.clone();
        for v in &mut b.data {
            *v = (*v + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0);
        }
        assert!(ssim(&a, &b) < 0.999);
        assert!(ssim(&a, &b) > -1.0);
    }
}
