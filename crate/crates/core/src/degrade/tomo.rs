use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Parallel-beam projections of an `n x n` slice; `values` is angle-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub angles: Vec<f64>,
    pub n_det: usize,
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn row(&self, a: usize) -> &[f64] {
        &self.values[a * self.n_det..(a + 1) * self.n_det]
    }
}

/// `m` angles evenly spaced over `[0, pi)`.
pub fn uniform_angles(m: usize) -> Vec<f64> {
    (0..m).map(|k| PI * k as f64 / m as f64).collect()
}

const RAY_STEP: f64 = 1.0 / 3.0;
/// Rays per detector bin. Together with the step above the samples form a
/// lattice of spacing 1/3, fine enough that sums over a bilinear pixel
/// miss its mass by well under 1% at every angle.
const SUB_RAYS: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];

/// Slice copied into a zero border two pixels wide, so interpolation near
/// the edge needs no bounds checks.
struct Padded {
    w: usize,
    data: Vec<f64>,
}

const PAD: usize = 2;

impl Padded {
    fn new(img: &[f64], n: usize) -> Self {
        let w = n + 2 * PAD;
        let mut data = vec![0.0; w * w];
        for y in 0..n {
            data[(y + PAD) * w + PAD..(y + PAD) * w + PAD + n].copy_from_slice(&img[y * n..(y + 1) * n]);
        }
        Padded { w, data }
    }

    /// Bilinear sample; `x` and `y` must lie within a pixel of the slice.
    #[inline]
    fn sample(&self, x: f64, y: f64) -> f64 {
        let (xp, yp) = (x + PAD as f64, y + PAD as f64);
        // both are positive, so truncation is floor
        let (x0, y0) = (xp as usize, yp as usize);
        let (fx, fy) = (xp - x0 as f64, yp - y0 as f64);
        let i = y0 * self.w + x0;
        let d = &self.data[i..i + self.w + 2];
        (1.0 - fy) * ((1.0 - fx) * d[0] + fx * d[1]) + fy * ((1.0 - fx) * d[self.w] + fx * d[self.w + 1])
    }
}

/// Parameter interval where `p0 + s * d` stays within `[lo, hi]` on one axis.
fn slab(p0: f64, d: f64, lo: f64, hi: f64) -> (f64, f64) {
    if d.abs() < 1e-12 {
        if p0 >= lo && p0 <= hi {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (1.0, -1.0)
        }
    } else {
        let (a, b) = ((lo - p0) / d, (hi - p0) / d);
        (a.min(b), a.max(b))
    }
}

/// Line integrals by ray-driven sampling of the bilinear interpolant.
/// Detector spacing equals the pixel spacing and the detector is centred on
/// the slice centre.
pub fn radon2d(slice: &[f64], n: usize, angles: &[f64]) -> Result<Sinogram> {
    if slice.len() != n * n {
        return Err(Error::LengthMismatch {
            expected: n * n,
            found: slice.len(),
        });
    }
    let n_det = n;
    let c = (n as f64 - 1.0) / 2.0;
    let img = Padded::new(slice, n);
    let mut values = vec![0.0; angles.len() * n_det];
    for (a, &th) in angles.iter().enumerate() {
        let (st, ct) = th.sin_cos();
        for j in 0..n_det {
            let mut acc = 0.0;
            for off in SUB_RAYS {
                let t = j as f64 - c + off;
                let (px, py) = (c + t * ct, c + t * st);
                let (dx, dy) = (-st, ct);
                let (ax, bx) = slab(px, dx, -1.0, n as f64);
                let (ay, by) = slab(py, dy, -1.0, n as f64);
                let (s0, s1) = (ax.max(ay), bx.min(by));
                if s0 >= s1 {
                    continue;
                }
                let k0 = (s0 / RAY_STEP).ceil() as i64;
                let k1 = (s1 / RAY_STEP).floor() as i64;
                // rounding can put the end samples a hair outside [-1, n];
                // the two-pixel border absorbs that
                for k in k0..=k1 {
                    let s = k as f64 * RAY_STEP;
                    acc += img.sample(px + s * dx, py + s * dy);
                }
            }
            values[a * n_det + j] = acc * RAY_STEP / SUB_RAYS.len() as f64;
        }
    }
    Ok(Sinogram {
        angles: angles.to_vec(),
        n_det,
        values,
    })
}

/// Ram-Lak ramp filter in its band-limited spatial form, applied by FFT with
/// zero padding so the convolution is linear.
#[derive(Clone)]
pub struct FbpFilter {
    n_det: usize,
    len: usize,
    kernel: Vec<Complex<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FbpFilter {
    pub fn new(n_det: usize) -> Self {
        let len = (2 * n_det).next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let h = |k: i64| -> f64 {
            if k == 0 {
                0.25
            } else if k % 2 == 0 {
                0.0
            } else {
                -1.0 / (PI * PI * (k * k) as f64)
            }
        };
        let mut kernel: Vec<Complex<f64>> = (0..len)
            .map(|i| {
                let k = if i <= len / 2 { i as i64 } else { i as i64 - len as i64 };
                Complex::new(h(k), 0.0)
            })
            .collect();
        fwd.process(&mut kernel);
        FbpFilter {
            n_det,
            len,
            kernel,
            fwd,
            inv,
        }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = row
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.len)
            .collect();
        self.fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel) {
            *b *= k;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        buf[..row.len()].iter().map(|c| c.re * scale).collect()
    }
}

/// Filtered backprojection onto an `n_det x n_det` slice; pixels outside the
/// reconstruction circle are zero.
pub fn fbp2d(s: &Sinogram, filter: &FbpFilter) -> Result<Vec<f64>> {
    if s.angles.len() < 2 {
        return Err(Error::invalid("filtered backprojection needs at least 2 angles"));
    }
    if filter.n_det != s.n_det || s.values.len() != s.angles.len() * s.n_det {
        return Err(Error::LengthMismatch {
            expected: s.angles.len() * filter.n_det,
            found: s.values.len(),
        });
    }
    let n = s.n_det;
    let c = (n as f64 - 1.0) / 2.0;
    let r2 = (n as f64 / 2.0).powi(2);
    let mut out = vec![0.0; n * n];
    for (a, &th) in s.angles.iter().enumerate() {
        let q = filter.apply(s.row(a));
        let (st, ct) = th.sin_cos();
        for y in 0..n {
            let yc = y as f64 - c;
            for x in 0..n {
                let xc = x as f64 - c;
                if xc * xc + yc * yc > r2 {
                    continue;
                }
                let t = xc * ct + yc * st + c;
                let t0 = t.floor();
                let f = t - t0;
                let i = t0 as isize;
                let at = |k: isize| if k < 0 || k >= n as isize { 0.0 } else { q[k as usize] };
                out[y * n + x] += (1.0 - f) * at(i) + f * at(i + 1);
            }
        }
    }
    let w = PI / s.angles.len() as f64;
    out.iter_mut().for_each(|v| *v *= w);
    Ok(out)
}
