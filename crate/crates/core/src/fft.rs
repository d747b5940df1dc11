//! Low-level discrete Fourier transform kernels.
//!
//! Power-of-two lengths run through an iterative radix-2 FFT; every other
//! length falls back to naive summation with precomputed twiddle tables.
//! The fallback matters because the model's downsampled sequence lengths
//! (496, 247, 123, 61 under the default configuration) are not powers of
//! two. Plans are cached per length in thread-local storage.
//!
//! All kernels here are unscaled; the 1/L convention of the inverse
//! transform is applied by the callers in [`crate::spectral`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::Real;

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sign {
    /// e^{−2πikn/L} — the analysis direction.
    Forward,
    /// e^{+2πikn/L} — the synthesis direction (unscaled).
    Inverse,
}

enum Kind {
    Radix2 {
        rev: Vec<usize>,
        // tw[j] = e^{−2πij/n} for j < n/2
        tw_re: Vec<Real>,
        tw_im: Vec<Real>,
    },
    Naive {
        // tables of cos(2πj/n), sin(2πj/n) for j < n
        cos: Vec<Real>,
        sin: Vec<Real>,
    },
}

pub(crate) struct Plan {
    n: usize,
    kind: Kind,
}

thread_local! {
    static PLAN_CACHE: RefCell<HashMap<usize, Rc<Plan>>> = RefCell::new(HashMap::new());
}

pub(crate) fn plan(n: usize) -> Rc<Plan> {
    PLAN_CACHE.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| Rc::new(Plan::new(n)))
            .clone()
    })
}

fn tau() -> Real {
    2.0 * std::f64::consts::PI as Real
}

impl Plan {
    fn new(n: usize) -> Plan {
        assert!(n >= 1, "transform length must be positive");
        let kind = if n.is_power_of_two() && n >= 2 {
            let bits = n.trailing_zeros();
            let rev = (0..n)
                .map(|i| (i.reverse_bits() >> (usize::BITS - bits)) as usize)
                .collect();
            let mut tw_re = Vec::with_capacity(n / 2);
            let mut tw_im = Vec::with_capacity(n / 2);
            for j in 0..n / 2 {
                let theta = -tau() * j as Real / n as Real;
                tw_re.push(theta.cos());
                tw_im.push(theta.sin());
            }
            Kind::Radix2 { rev, tw_re, tw_im }
        } else {
            let mut cos = Vec::with_capacity(n);
            let mut sin = Vec::with_capacity(n);
            for j in 0..n {
                let theta = tau() * j as Real / n as Real;
                cos.push(theta.cos());
                sin.push(theta.sin());
            }
            Kind::Naive { cos, sin }
        };
        Plan { n, kind }
    }

    /// In-place unscaled complex DFT of length `n`.
    pub(crate) fn fft(&self, re: &mut [Real], im: &mut [Real], sign: Sign) {
        debug_assert_eq!(re.len(), self.n);
        debug_assert_eq!(im.len(), self.n);
        match &self.kind {
            Kind::Radix2 { rev, tw_re, tw_im } => {
                let n = self.n;
                for i in 0..n {
                    let j = rev[i];
                    if i < j {
                        re.swap(i, j);
                        im.swap(i, j);
                    }
                }
                let mut len = 2;
                while len <= n {
                    let half = len / 2;
                    let step = n / len;
                    for base in (0..n).step_by(len) {
                        for j in 0..half {
                            let (wr, wi) = match sign {
                                Sign::Forward => (tw_re[j * step], tw_im[j * step]),
                                Sign::Inverse => (tw_re[j * step], -tw_im[j * step]),
                            };
                            let (ur, ui) = (re[base + j], im[base + j]);
                            let (xr, xi) = (re[base + j + half], im[base + j + half]);
                            let vr = xr * wr - xi * wi;
                            let vi = xr * wi + xi * wr;
                            re[base + j] = ur + vr;
                            im[base + j] = ui + vi;
                            re[base + j + half] = ur - vr;
                            im[base + j + half] = ui - vi;
                        }
                    }
                    len *= 2;
                }
            }
            Kind::Naive { cos, sin } => {
                let n = self.n;
                let mut out_re = vec![0.0; n];
                let mut out_im = vec![0.0; n];
                for (k, (or, oi)) in out_re.iter_mut().zip(out_im.iter_mut()).enumerate() {
                    let mut sr = 0.0;
                    let mut si = 0.0;
                    for t in 0..n {
                        let idx = (k * t) % n;
                        let (c, s) = (cos[idx], sin[idx]);
                        // e^{∓2πikt/n} = c ∓ i·s
                        match sign {
                            Sign::Forward => {
                                sr += re[t] * c + im[t] * s;
                                si += -re[t] * s + im[t] * c;
                            }
                            Sign::Inverse => {
                                sr += re[t] * c - im[t] * s;
                                si += re[t] * s + im[t] * c;
                            }
                        }
                    }
                    *or = sr;
                    *oi = si;
                }
                re.copy_from_slice(&out_re);
                im.copy_from_slice(&out_im);
            }
        }
    }

    /// Number of Hermitian-reduced bins for this length: ⌊n/2⌋+1.
    pub(crate) fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Real-input forward transform into `bins()` complex values.
    /// `im_out[0]` is exactly zero, and so is the Nyquist bin for even `n`.
    pub(crate) fn rdft_row(&self, x: &[Real], re_out: &mut [Real], im_out: &mut [Real]) {
        let n = self.n;
        let k_bins = self.bins();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(re_out.len(), k_bins);
        debug_assert_eq!(im_out.len(), k_bins);
        match &self.kind {
            Kind::Radix2 { .. } => {
                let mut re = x.to_vec();
                let mut im = vec![0.0; n];
                self.fft(&mut re, &mut im, Sign::Forward);
                re_out.copy_from_slice(&re[..k_bins]);
                im_out.copy_from_slice(&im[..k_bins]);
            }
            Kind::Naive { cos, sin } => {
                for k in 0..k_bins {
                    let mut sr = 0.0;
                    let mut si = 0.0;
                    for (t, &v) in x.iter().enumerate() {
                        let idx = (k * t) % n;
                        sr += v * cos[idx];
                        si -= v * sin[idx];
                    }
                    re_out[k] = sr;
                    im_out[k] = si;
                }
            }
        }
        // These bins are real for any real input; clear rounding dust so
        // the invariant holds exactly.
        im_out[0] = 0.0;
        if n % 2 == 0 {
            im_out[k_bins - 1] = 0.0;
        }
    }

    /// Adjoint of `rdft_row`: maps cotangents of the reduced bins back to
    /// the time domain. `gx[n] += Σₖ gre[k]·cos(2πkn/L) − gim[k]·sin(2πkn/L)`.
    pub(crate) fn rdft_grad_row(&self, g_re: &[Real], g_im: &[Real], gx: &mut [Real]) {
        let n = self.n;
        let k_bins = self.bins();
        match &self.kind {
            Kind::Radix2 { .. } => {
                let mut re = vec![0.0; n];
                let mut im = vec![0.0; n];
                re[..k_bins].copy_from_slice(g_re);
                im[..k_bins].copy_from_slice(g_im);
                self.fft(&mut re, &mut im, Sign::Inverse);
                for (o, r) in gx.iter_mut().zip(re) {
                    *o += r;
                }
            }
            Kind::Naive { cos, sin } => {
                for (t, o) in gx.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..k_bins {
                        let idx = (k * t) % n;
                        acc += g_re[k] * cos[idx] - g_im[k] * sin[idx];
                    }
                    *o += acc;
                }
            }
        }
    }

    /// Inverse transform from reduced bins; Hermitian symmetry is imposed,
    /// so any imaginary content in the DC/Nyquist bins is ignored. Applies
    /// the 1/L convention.
    pub(crate) fn irdft_row(&self, re: &[Real], im: &[Real], x_out: &mut [Real]) {
        let n = self.n;
        let k_bins = self.bins();
        debug_assert_eq!(re.len(), k_bins);
        debug_assert_eq!(x_out.len(), n);
        let inv_n = 1.0 / n as Real;
        match &self.kind {
            Kind::Radix2 { .. } => {
                let mut fr = vec![0.0; n];
                let mut fi = vec![0.0; n];
                fr[..k_bins].copy_from_slice(re);
                fi[..k_bins].copy_from_slice(im);
                for k in 1..k_bins {
                    let mirror = n - k;
                    if mirror >= k_bins {
                        fr[mirror] = re[k];
                        fi[mirror] = -im[k];
                    }
                }
                self.fft(&mut fr, &mut fi, Sign::Inverse);
                for (o, r) in x_out.iter_mut().zip(fr) {
                    *o = r * inv_n;
                }
            }
            Kind::Naive { cos, sin } => {
                let even = n % 2 == 0;
                for (t, o) in x_out.iter_mut().enumerate() {
                    let mut acc = re[0];
                    let doubled_end = if even { k_bins - 1 } else { k_bins };
                    for k in 1..doubled_end {
                        let idx = (k * t) % n;
                        acc += 2.0 * (re[k] * cos[idx] - im[k] * sin[idx]);
                    }
                    if even {
                        let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                        acc += re[k_bins - 1] * sign;
                    }
                    *o = acc * inv_n;
                }
            }
        }
    }

    /// Adjoint of `irdft_row`. Doubled interior bins pick up a factor 2/L,
    /// DC and Nyquist 1/L, and the imaginary parts of DC/Nyquist get no
    /// gradient because the forward pass ignores them.
    pub(crate) fn irdft_grad_row(&self, g: &[Real], g_re: &mut [Real], g_im: &mut [Real]) {
        let n = self.n;
        let k_bins = self.bins();
        let even = n % 2 == 0;
        let inv_n = 1.0 / n as Real;
        match &self.kind {
            Kind::Radix2 { .. } => {
                let mut re = g.to_vec();
                let mut im = vec![0.0; n];
                self.fft(&mut re, &mut im, Sign::Forward);
                for k in 0..k_bins {
                    let doubled = k != 0 && !(even && k == k_bins - 1);
                    let w = if doubled { 2.0 * inv_n } else { inv_n };
                    g_re[k] += w * re[k];
                    if doubled {
                        g_im[k] += w * im[k];
                    }
                }
            }
            Kind::Naive { cos, sin } => {
                for k in 0..k_bins {
                    let doubled = k != 0 && !(even && k == k_bins - 1);
                    let w = if doubled { 2.0 * inv_n } else { inv_n };
                    let mut sr = 0.0;
                    let mut si = 0.0;
                    for (t, &gv) in g.iter().enumerate() {
                        let idx = (k * t) % n;
                        sr += gv * cos[idx];
                        si -= gv * sin[idx];
                    }
                    g_re[k] += w * sr;
                    if doubled {
                        g_im[k] += w * si;
                    }
                }
            }
        }
    }
}
