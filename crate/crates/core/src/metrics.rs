//! Reconstruction metrics.

use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Argument("metrics need at least one value".into()));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    mse(pred, truth).map(f64::sqrt)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// `10·log10(peak²/MSE)`; `+∞` when the inputs are identical.
pub fn psnr(pred: &[f64], truth: &[f64], peak: f64) -> Result<f64> {
    let m = mse(pred, truth)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / m).log10() })
}

/// `‖pred − truth‖_F / ‖truth‖_F`.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let norm = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Argument("nrmse needs a non-zero reference".into()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt() / norm)
}

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable valid-region filtering of a row-major `h x w` image.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..WINDOW).map(|j| k[j] * img[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..WINDOW).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM of one `h x w` slice (11x11 Gaussian window, σ = 1.5).
pub fn ssim_2d(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> Result<f64> {
    check(a, b)?;
    if a.len() != h * w {
        return Err(Error::Argument(format!("{} values for a {h}x{w} image", a.len())));
    }
    if h < WINDOW || w < WINDOW {
        return Err(Error::Argument(format!("image {h}x{w} is smaller than the {WINDOW}x{WINDOW} window")));
    }
    let k = gaussian_kernel();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter(a, h, w, &k);
    let mu_b = filter(b, h, w, &k);
    let aa = filter(&prod(a, a), h, w, &k);
    let bb = filter(&prod(b, b), h, w, &k);
    let ab = filter(&prod(a, b), h, w, &k);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM of `H x W` or `H x W x B` images, averaged over bands.
pub fn ssim(pred: &DenseTensor, truth: &DenseTensor, peak: f64) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::Argument(format!("shape mismatch: {:?} vs {:?}", pred.dims(), truth.dims())));
    }
    let (h, w, bands) = match *truth.dims() {
        [h, w] => (h, w, 1),
        [h, w, b] => (h, w, b),
        ref d => return Err(Error::Argument(format!("ssim needs 2-D or 3-D images, got {d:?}"))),
    };
    let band = |t: &DenseTensor, k: usize| t.values().iter().skip(k).step_by(bands).copied().collect::<Vec<_>>();
    let per_band = (0..bands)
        .into_par_iter()
        .map(|k| ssim_2d(&band(pred, k), &band(truth, k), h, w, peak))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_band.iter().sum::<f64>() / bands as f64)
}

/// Total variation `½·Σ|p − q|·Δx` between two densities on the same even
/// grid spanning `width`; each is renormalized on the grid first.
pub fn tv_distance(p: &[f64], q: &[f64], width: f64) -> Result<f64> {
    check(p, q)?;
    if p.len() < 2 || !(width > 0.0) {
        return Err(Error::Argument("total variation needs a grid of at least two points".into()));
    }
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    if !(sp > 0.0 && sq > 0.0) {
        return Err(Error::Argument("densities must have positive mass on the grid".into()));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a / sp - b / sq).abs()).sum::<f64>())
}

/// Strict interior local maxima of a sampled curve, ignoring bumps below 1%
/// of the peak.
pub fn local_maxima(y: &[f64]) -> usize {
    let top = y.iter().copied().fold(0.0f64, f64::max);
    let floor = 0.01 * top;
    let mut count = 0;
    let mut k = 1;
    while k + 1 < y.len() {
        if y[k] > y[k - 1] && y[k] > floor {
            // Walk across a plateau.
            let mut j = k;
            while j + 1 < y.len() && y[j + 1] == y[k] {
                j += 1;
            }
            if j + 1 < y.len() && y[j + 1] < y[k] {
                count += 1;
            }
            k = j + 1;
        } else {
            k += 1;
        }
    }
    count
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub nrmse: Option<f64>,
    /// Number of evaluated values.
    pub count: usize,
}

impl MetricReport {
    /// RMSE and MAE over a set of entries.
    pub fn entries(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self { rmse: Some(rmse(pred, truth)?), mae: Some(mae(pred, truth)?), count: pred.len(), ..Self::default() })
    }

    /// PSNR, SSIM and NRMSE over whole images.
    pub fn image(pred: &DenseTensor, truth: &DenseTensor, peak: f64) -> Result<Self> {
        Ok(Self {
            psnr: Some(psnr(pred.values(), truth.values(), peak)?),
            ssim: Some(ssim(pred, truth, peak)?),
            nrmse: Some(nrmse(pred.values(), truth.values())?),
            count: truth.len(),
            ..Self::default()
        })
    }

    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        for (name, v) in [("rmse", self.rmse), ("mae", self.mae), ("psnr", self.psnr), ("ssim", self.ssim), ("nrmse", self.nrmse)] {
            if let Some(v) = v {
                out.push((name, v));
            }
        }
        out
    }

    /// `metric,value` lines; an infinite PSNR is written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (name, v) in self.rows() {
            let _ = writeln!(s, "{name},{v}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texture(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|k| 0.5 + 0.3 * ((k / w) as f64 * 0.7).sin() * ((k % w) as f64 * 0.45).cos()).collect()
    }

    #[test]
    fn entry_metrics() {
        let t = [1.0, 2.0];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        let p = [4.0, 6.0];
        assert!((rmse(&p, &t).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&p, &t).unwrap(), 3.5);
        let shifted: Vec<f64> = t.iter().map(|v| v - 0.25).collect();
        assert_eq!(rmse(&shifted, &t).unwrap(), 0.25);
        assert_eq!(mae(&shifted, &t).unwrap(), 0.25);
        assert!(rmse(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn psnr_conventions() {
        let truth = vec![0.5; 100];
        let pred: Vec<f64> = truth.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&pred, &truth, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&truth, &truth, 1.0).unwrap(), f64::INFINITY);
        let worse: Vec<f64> = truth.iter().map(|v| v + 0.1 * 2f64.sqrt()).collect();
        let drop = psnr(&pred, &truth, 1.0).unwrap() - psnr(&worse, &truth, 1.0).unwrap();
        assert!((drop - 10.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn nrmse_conventions() {
        let t = [1.0, -2.0, 3.0];
        assert_eq!(nrmse(&t, &t).unwrap(), 0.0);
        assert_eq!(nrmse(&[0.0; 3], &t).unwrap(), 1.0);
        assert!((nrmse(&[2.0, -4.0, 6.0], &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(nrmse(&[1.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn ssim_conventions() {
        let (h, w) = (24, 20);
        let a = texture(h, w);
        assert!((ssim_2d(&a, &a, h, w, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ssim_2d(&a, &neg, h, w, 1.0).unwrap() < 0.0);
        assert!(ssim_2d(&a[..100], &a[..100], 10, 10, 1.0).is_err());

        let cube = DenseTensor::new(vec![h, w, 2], a.iter().flat_map(|&v| [v, 1.0 - v]).collect()).unwrap();
        let flat = DenseTensor::new(vec![h, w, 2], a.iter().flat_map(|&v| [v, v]).collect()).unwrap();
        let s = ssim(&cube, &flat, 1.0).unwrap();
        let expect = 0.5 * (1.0 + ssim_2d(&neg, &a, h, w, 1.0).unwrap());
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_direct_window_sum() {
        let (h, w) = (13, 12);
        let a = texture(h, w);
        let b: Vec<f64> = a.iter().enumerate().map(|(k, v)| v * 0.8 + 0.05 * (k % 7) as f64).collect();
        let k = gaussian_kernel();
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        let mut n = 0.0;
        for r0 in 0..=h - WINDOW {
            for c0 in 0..=w - WINDOW {
                let mut m = [0.0; 5];
                for i in 0..WINDOW {
                    for j in 0..WINDOW {
                        let wt = k[i] * k[j];
                        let (x, y) = (a[(r0 + i) * w + c0 + j], b[(r0 + i) * w + c0 + j]);
                        for (slot, v) in m.iter_mut().zip([x, y, x * x, y * y, x * y]) {
                            *slot += wt * v;
                        }
                    }
                }
                let (va, vb, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
                total += ((2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2)) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
                n += 1.0;
            }
        }
        assert!((ssim_2d(&a, &b, h, w, 1.0).unwrap() - total / n).abs() < 1e-12);
    }

    #[test]
    fn report_csv() {
        let t = DenseTensor::new(vec![11, 11], texture(11, 11)).unwrap();
        let r = MetricReport::image(&t, &t, 1.0).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,value\n"));
        assert!(csv.contains("psnr,inf\n"));
        assert!(csv.contains("ssim,1\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn density_helpers() {
        assert_eq!(tv_distance(&[1.0, 1.0], &[2.0, 2.0], 1.0).unwrap(), 0.0);
        assert!((tv_distance(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(local_maxima(&[0.0, 1.0, 0.5, 2.0, 0.0]), 2);
        assert_eq!(local_maxima(&[0.0, 1.0, 1.0, 0.0]), 1);
        assert_eq!(local_maxima(&[3.0, 2.0, 1.0]), 0);
        let two: Vec<f64> = (0..200).map(|k| {
            let x = k as f64 / 100.0 - 1.0;
            (-(x - 0.5f64).powi(2) / 0.02).exp() + 0.5 * (-(x + 0.4f64).powi(2) / 0.05).exp()
        }).collect();
        assert_eq!(local_maxima(&two), 2);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40)) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            prop_assert!(rmse(&p, &t).unwrap() + 1e-12 >= mae(&p, &t).unwrap());
        }

        #[test]
        fn psnr_decreases_with_error(a in 0.001f64..1.0, b in 0.001f64..1.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let t = [0.0; 4];
            let pa = psnr(&[a; 4], &t, 1.0).unwrap();
            let pb = psnr(&[b; 4], &t, 1.0).unwrap();
            prop_assert_eq!(a < b, pa > pb);
        }

        #[test]
        fn nrmse_is_scale_invariant(v in prop::collection::vec((-5.0f64..5.0, 0.5f64..5.0), 1..20), c in 0.1f64..10.0) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let ps: Vec<f64> = p.iter().map(|x| x * c).collect();
            let ts: Vec<f64> = t.iter().map(|x| x * c).collect();
            prop_assert!((nrmse(&p, &t).unwrap() - nrmse(&ps, &ts).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ssim_symmetric_and_bounded(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..144).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..144).map(|_| rng.random::<f64>()).collect();
            let ab = ssim_2d(&a, &b, 12, 12, 1.0).unwrap();
            let ba = ssim_2d(&b, &a, 12, 12, 1.0).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((ssim_2d(&a, &a, 12, 12, 1.0).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
