//! Channel-wise 2D discrete Fourier transform of feature tensors and the
//! amplitude/phase split.
//!
//! The forward transform is unnormalized,
//! `F(m, n) = sum_{h,w} z(h, w) exp(-2πi (mh/H + nw/W))`, and the inverse
//! carries the `1/(HW)` factor. Frequencies keep the DC-corner layout (no
//! shift). Each axis uses a radix-2 FFT when its length is a power of two
//! and direct summation otherwise.

use std::f64::consts::PI;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Shape, Tensor};

/// Complex spectrum of a feature tensor, stored as separate real and
/// imaginary planes of the same `(N, C, H, W)` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T: Real> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Real> Spectrum<T> {
    pub fn shape(&self) -> Shape {
        self.re.shape()
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> Complex<T> {
        Complex::new(self.re.at(idx), self.im.at(idx))
    }
}

/// Per-bin magnitudes; `(N, C, H, W)`, or `(1, C, H, W)` for a prototype.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeMap<T: Real>(pub Tensor<T>);

/// Per-bin angles in `(-π, π]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMap<T: Real>(pub Tensor<T>);

impl<T: Real> AmplitudeMap<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        if t.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidArgument("amplitude values must be >= 0".into()));
        }
        Ok(AmplitudeMap(t))
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

impl<T: Real> PhaseMap<T> {
    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

/// Which algorithm evaluates each 1D transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Path {
    /// Radix-2 FFT for power-of-two lengths, direct summation otherwise.
    Auto,
    /// Direct summation for every length.
    Direct,
}

struct Plan<T> {
    n: usize,
    /// `exp(-2πi k / n)` for `k in 0..n`.
    twiddles: Vec<Complex<T>>,
    fast: bool,
}

impl<T: Real> Plan<T> {
    fn new(n: usize, path: Path) -> Self {
        let twiddles = (0..n)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                Complex::new(lit(a.cos()), lit(a.sin()))
            })
            .collect();
        Plan {
            n,
            twiddles,
            fast: path == Path::Auto && n.is_power_of_two(),
        }
    }

    #[inline]
    fn twiddle(&self, k: usize, inverse: bool) -> Complex<T> {
        let t = self.twiddles[k % self.n];
        if inverse {
            t.conj()
        } else {
            t
        }
    }

    /// Unnormalized in-place transform of `buf` (length `n`).
    fn run(&self, buf: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>, inverse: bool) {
        let n = self.n;
        if n == 1 {
            return;
        }
        if self.fast {
            let bits = n.trailing_zeros();
            for i in 0..n {
                let j = i.reverse_bits() >> (usize::BITS - bits);
                if j > i {
                    buf.swap(i, j);
                }
            }
            let mut len = 2;
            while len <= n {
                let stride = n / len;
                for start in (0..n).step_by(len) {
                    for k in 0..len / 2 {
                        let w = self.twiddle(k * stride, inverse);
                        let a = buf[start + k];
                        let b = buf[start + k + len / 2] * w;
                        buf[start + k] = a + b;
                        buf[start + k + len / 2] = a - b;
                    }
                }
                len <<= 1;
            }
        } else {
            scratch.clear();
            scratch.extend_from_slice(buf);
            for (k, out) in buf.iter_mut().enumerate() {
                let mut acc = Complex::new(T::zero(), T::zero());
                for (j, &x) in scratch.iter().enumerate() {
                    acc = acc + x * self.twiddle(j * k, inverse);
                }
                *out = acc;
            }
        }
    }
}

/// Unnormalized 2D transform of every `(H, W)` plane in `planes`.
fn transform_planes<T: Real>(planes: &mut [Complex<T>], h: usize, w: usize, inverse: bool, path: Path) {
    let rows = Plan::<T>::new(w, path);
    let cols = Plan::<T>::new(h, path);
    let mut scratch = Vec::with_capacity(h.max(w));
    let mut column = vec![Complex::new(T::zero(), T::zero()); h];
    for plane in planes.chunks_exact_mut(h * w) {
        for row in plane.chunks_exact_mut(w) {
            rows.run(row, &mut scratch, inverse);
        }
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            cols.run(&mut column, &mut scratch, inverse);
            for y in 0..h {
                plane[y * w + x] = column[y];
            }
        }
    }
}

fn to_complex<T: Real>(re: &Tensor<T>, im: Option<&Tensor<T>>) -> Vec<Complex<T>> {
    match im {
        Some(im) => re
            .data()
            .iter()
            .zip(im.data())
            .map(|(&a, &b)| Complex::new(a, b))
            .collect(),
        None => re.data().iter().map(|&a| Complex::new(a, T::zero())).collect(),
    }
}

fn split<T: Real>(shape: Shape, buf: &[Complex<T>], scale: T) -> (Tensor<T>, Tensor<T>) {
    let re = buf.iter().map(|c| c.re * scale).collect();
    let im = buf.iter().map(|c| c.im * scale).collect();
    (
        Tensor::from_vec(shape, re).expect("shape preserved"),
        Tensor::from_vec(shape, im).expect("shape preserved"),
    )
}

/// Forward transform of each channel of `z`.
pub fn dft2d<T: Real>(z: &Tensor<T>) -> Spectrum<T> {
    dft2d_with(z, Path::Auto)
}

pub fn dft2d_with<T: Real>(z: &Tensor<T>, path: Path) -> Spectrum<T> {
    let [_, _, h, w] = z.shape();
    let mut buf = to_complex(z, None);
    transform_planes(&mut buf, h, w, false, path);
    let (re, im) = split(z.shape(), &buf, T::one());
    Spectrum { re, im }
}

/// Normalized inverse transform of a complex spectrum; returns `(re, im)`.
pub fn idft2d<T: Real>(s: &Spectrum<T>) -> (Tensor<T>, Tensor<T>) {
    let [_, _, h, w] = s.shape();
    let mut buf = to_complex(&s.re, Some(&s.im));
    transform_planes(&mut buf, h, w, true, Path::Auto);
    split(s.shape(), &buf, T::one() / lit::<T>((h * w) as f64))
}

/// Amplitude `sqrt(re² + im²)` and phase `atan2(im, re)` in `(-π, π]`.
/// A zero bin has phase 0.
pub fn decompose<T: Real>(s: &Spectrum<T>) -> (AmplitudeMap<T>, PhaseMap<T>) {
    let amp = s.re.zip_map(&s.im, |r, i| r.hypot(i)).expect("same shape");
    let phase = s.re.zip_map(&s.im, phase_of).expect("same shape");
    (AmplitudeMap(amp), PhaseMap(phase))
}

#[inline]
fn phase_of<T: Real>(re: T, im: T) -> T {
    if re == T::zero() && im == T::zero() {
        return T::zero();
    }
    let p = im.atan2(re);
    if p == -lit::<T>(PI) {
        lit(PI)
    } else {
        p
    }
}

/// Output of [`reconstruct`]: the real part of the inverse transform and the
/// largest absolute imaginary component that was discarded.
#[derive(Clone, Debug)]
pub struct Reconstruction<T: Real> {
    pub tensor: Tensor<T>,
    pub imag_residual: T,
}

/// Polar-to-rectangular conversion, broadcasting a batch-1 amplitude.
pub fn polar<T: Real>(amp: &AmplitudeMap<T>, phase: &PhaseMap<T>) -> Result<Spectrum<T>> {
    let (a, p) = (amp.tensor(), phase.tensor());
    let [pn, c, h, w] = p.shape();
    let [an, ac, ah, aw] = a.shape();
    if (an != pn && an != 1) || [ac, ah, aw] != [c, h, w] {
        return Err(Error::shape("reconstruct", [pn, c, h, w], a.shape()));
    }
    let len = c * h * w;
    let mut re = Tensor::zeros(p.shape());
    let mut im = Tensor::zeros(p.shape());
    for n in 0..pn {
        let arow = if an == 1 { a.item(0) } else { a.item(n) };
        let prow = p.item(n);
        let rrow = re.item_mut(n);
        for i in 0..len {
            rrow[i] = arow[i] * prow[i].cos();
        }
        let irow = im.item_mut(n);
        for i in 0..len {
            irow[i] = arow[i] * prow[i].sin();
        }
    }
    Ok(Spectrum { re, im })
}

/// Inverse transform of `amp · exp(i · phase)` using the default residual
/// tolerance of the precision (1e-3 for f32, 1e-8 for f64).
pub fn reconstruct<T: Real>(amp: &AmplitudeMap<T>, phase: &PhaseMap<T>) -> Result<Reconstruction<T>> {
    reconstruct_with_tolerance(amp, phase, T::RESIDUAL_TOLERANCE)
}

/// The residual limit is `tolerance · max(1, max |output|)`, so large
/// activations do not trip it through roundoff alone.
pub fn reconstruct_with_tolerance<T: Real>(
    amp: &AmplitudeMap<T>,
    phase: &PhaseMap<T>,
    tolerance: f64,
) -> Result<Reconstruction<T>> {
    let spec = polar(amp, phase)?;
    let (re, im) = idft2d(&spec);
    let imag_residual = im.max_abs();
    let limit = tolerance * re.max_abs().to_f64_lossy().max(1.0);
    if !(imag_residual.to_f64_lossy() <= limit) {
        return Err(Error::NumericalIntegrity {
            residual: imag_residual.to_f64_lossy(),
            tolerance: limit,
        });
    }
    Ok(Reconstruction {
        tensor: re,
        imag_residual,
    })
}

/// Adjoint of `z -> dft2d(z)` as a map from real input to the `(re, im)`
/// pair: `HW · Re(idft2d(g_re + i g_im))`.
pub fn dft2d_adjoint<T: Real>(g_re: &Tensor<T>, g_im: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = g_re.shape();
    let mut buf = to_complex(g_re, Some(g_im));
    transform_planes(&mut buf, h, w, true, Path::Auto);
    split(g_re.shape(), &buf, T::one()).0
}

/// Adjoint of `(re, im) -> Re(idft2d(re + i im))`: returns
/// `dft2d(g) / (HW)` split into real and imaginary parts.
pub fn real_idft_adjoint<T: Real>(g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let [_, _, h, w] = g.shape();
    let mut buf = to_complex(g, None);
    transform_planes(&mut buf, h, w, false, Path::Auto);
    split(g.shape(), &buf, T::one() / lit::<T>((h * w) as f64))
}

/// Index of the conjugate-symmetric partner bin `((H-m) mod H, (W-n) mod W)`.
#[inline]
pub fn mirror(h: usize, w: usize, m: usize, n: usize) -> (usize, usize) {
    ((h - m) % h, (w - n) % w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(vals: &[(f64, f64)]) -> Spectrum<f64> {
        let shape = [1, 1, 1, vals.len()];
        Spectrum {
            re: Tensor::from_vec(shape, vals.iter().map(|v| v.0).collect()).unwrap(),
            im: Tensor::from_vec(shape, vals.iter().map(|v| v.1).collect()).unwrap(),
        }
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let s = dft2d(&Tensor::<f64>::full([1, 1, 2, 2], 1.5));
        assert_eq!(s.re.data(), &[6.0, 0.0, 0.0, 0.0]);
        assert!(s.im.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut z = Tensor::<f64>::zeros([1, 1, 2, 2]);
        z.set([0, 0, 0, 0], 1.0);
        let s = dft2d(&z);
        assert_eq!(s.re.data(), &[1.0; 4]);
        assert!(s.im.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decompose_reference_bins() {
        let (a, p) = decompose(&spectrum(&[(3.0, 4.0), (-2.0, 0.0), (0.0, 1.0), (0.0, 0.0), (-1.0, -0.0)]));
        let a = a.tensor().data();
        let p = p.tensor().data();
        assert!((a[0] - 5.0).abs() < 1e-15);
        assert!((p[0] - 4f64.atan2(3.0)).abs() < 1e-15);
        assert!((p[0] - 0.92730).abs() < 1e-5);
        assert_eq!(a[1], 2.0);
        assert_eq!(p[1], PI);
        assert_eq!(a[2], 1.0);
        assert!((p[2] - PI / 2.0).abs() < 1e-15);
        assert_eq!((a[3], p[3]), (0.0, 0.0));
        assert_eq!(p[4], PI, "-π is folded onto π");
    }

    #[test]
    fn zero_amplitude_reconstructs_zero() {
        let amp = AmplitudeMap(Tensor::<f32>::zeros([2, 3, 4, 4]));
        let phase = PhaseMap(Tensor::from_fn([2, 3, 4, 4], |[a, b, c, d]| (a + b + c * d) as f32 * 0.3));
        let r = reconstruct(&amp, &phase).unwrap();
        assert!(r.tensor.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn asymmetric_spectrum_is_flagged() {
        let amp = AmplitudeMap(Tensor::<f64>::ones([1, 1, 4, 4]));
        let phase = PhaseMap(Tensor::from_fn([1, 1, 4, 4], |[_, _, c, d]| (c * 4 + d) as f64 * 0.1));
        let err = reconstruct(&amp, &phase).unwrap_err();
        assert!(matches!(err, Error::NumericalIntegrity { .. }), "{err}");
    }

    #[test]
    fn prototype_amplitude_broadcasts() {
        let z = Tensor::<f64>::from_fn([3, 2, 4, 3], |[a, b, c, d]| ((a * 7 + b * 3 + c * 2 + d) as f64).sin());
        let (_, p) = decompose(&dft2d(&z));
        let proto = AmplitudeMap(Tensor::ones([1, 2, 4, 3]));
        assert_eq!(reconstruct(&proto, &p).unwrap().tensor.shape(), [3, 2, 4, 3]);
        let bad = AmplitudeMap(Tensor::ones([2, 2, 4, 3]));
        assert!(matches!(reconstruct(&bad, &p), Err(Error::ShapeMismatch { .. })));
    }
}
