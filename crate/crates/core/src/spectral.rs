//! Differentiable real-input spectra, learnable complex filters, and the
//! filter-reconstruct operator.
//!
//! A spectrum is carried as one tensor whose last axis packs the
//! Hermitian-reduced bins: `[re[0..K] | im[0..K]]` with `K = ⌊L/2⌋+1`.
//! Keeping both parts in a single tape node means one graph edge per
//! transform and keeps tensors within rank 3.
//!
//! Conventions, fixed so tests are bit-stable: the forward transform is
//! unnormalized, the inverse applies 1/L. The inverse imposes Hermitian
//! symmetry, so it always returns a real signal and ignores imaginary
//! content a filter may have introduced in the DC and Nyquist bins; those
//! entries correspondingly receive zero gradient.

use crate::error::{Error, Result};
use crate::fft;
use crate::tensor::{GradStore, Op, Tensor};
use crate::Real;

/// Hermitian-reduced spectrum of a real multi-channel signal, still
/// attached to the differentiation tape.
#[derive(Clone)]
pub struct ComplexSpectrum {
    packed: Tensor,
    channels: usize,
    bins: usize,
    original_length: usize,
}

impl ComplexSpectrum {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    /// The underlying `[.., channels, 2·bins]` tensor.
    pub fn packed(&self) -> &Tensor {
        &self.packed
    }

    fn row_offset(&self, channel: usize) -> Result<usize> {
        if self.packed.rank() != 2 {
            return Err(Error::contract(
                "per-channel accessors need an unbatched spectrum",
            ));
        }
        if channel >= self.channels {
            return Err(Error::dim(format!(
                "channel {channel} out of range for {} channels",
                self.channels
            )));
        }
        Ok(channel * 2 * self.bins)
    }

    pub fn re(&self, channel: usize, bin: usize) -> Result<Real> {
        let base = self.row_offset(channel)?;
        if bin >= self.bins {
            return Err(Error::dim(format!("bin {bin} out of range")));
        }
        Ok(self.packed.data()[base + bin])
    }

    pub fn im(&self, channel: usize, bin: usize) -> Result<Real> {
        let base = self.row_offset(channel)?;
        if bin >= self.bins {
            return Err(Error::dim(format!("bin {bin} out of range")));
        }
        Ok(self.packed.data()[base + self.bins + bin])
    }

    pub fn magnitude(&self, channel: usize, bin: usize) -> Result<Real> {
        let (r, i) = (self.re(channel, bin)?, self.im(channel, bin)?);
        Ok((r * r + i * i).sqrt())
    }

    /// CSV rows `(channel, bin, frequency_hz, re, im, magnitude)` for an
    /// unbatched spectrum.
    pub fn to_csv(&self, sample_rate: Real) -> Result<String> {
        let mut out = String::from("channel,bin,frequency_hz,re,im,magnitude\n");
        for c in 0..self.channels {
            for k in 0..self.bins {
                let freq = sample_rate * k as Real / self.original_length as Real;
                let (r, i) = (self.re(c, k)?, self.im(c, k)?);
                out.push_str(&format!(
                    "{c},{k},{freq},{r},{i},{}\n",
                    (r * r + i * i).sqrt()
                ));
            }
        }
        Ok(out)
    }
}

/// Learnable per-channel, per-bin complex filter coefficients, stored as
/// independent real and imaginary parameters.
#[derive(Clone)]
pub struct SpectralWeight {
    packed: Tensor,
    channels: usize,
    bins: usize,
}

impl SpectralWeight {
    /// Identity filter: re = 1, im = 0 everywhere, so that filtering is a
    /// pass-through at step 0.
    pub fn identity(channels: usize, bins: usize) -> Result<SpectralWeight> {
        if channels == 0 || bins == 0 {
            return Err(Error::dim("spectral weight needs channels ≥ 1, bins ≥ 1"));
        }
        let mut data = Vec::with_capacity(channels * 2 * bins);
        for _ in 0..channels {
            data.extend(std::iter::repeat(1.0).take(bins));
            data.extend(std::iter::repeat(0.0).take(bins));
        }
        Ok(SpectralWeight {
            packed: Tensor::param(data, &[channels, 2 * bins])?,
            channels,
            bins,
        })
    }

    pub fn from_parts(re: &[Real], im: &[Real], channels: usize, bins: usize) -> Result<SpectralWeight> {
        if re.len() != channels * bins || im.len() != channels * bins {
            return Err(Error::dim(format!(
                "weight parts must be {channels}×{bins} = {} values, got {} re / {} im",
                channels * bins,
                re.len(),
                im.len()
            )));
        }
        let mut data = Vec::with_capacity(channels * 2 * bins);
        for c in 0..channels {
            data.extend_from_slice(&re[c * bins..(c + 1) * bins]);
            data.extend_from_slice(&im[c * bins..(c + 1) * bins]);
        }
        Ok(SpectralWeight {
            packed: Tensor::param(data, &[channels, 2 * bins])?,
            channels,
            bins,
        })
    }

    /// Wraps an existing `[channels, 2·bins]` parameter tensor (used when
    /// loading checkpoints).
    pub fn from_packed(packed: Tensor) -> Result<SpectralWeight> {
        if packed.rank() != 2 || packed.shape()[1] % 2 != 0 {
            return Err(Error::dim(format!(
                "packed spectral weight must be [channels, 2·bins], got {:?}",
                packed.shape()
            )));
        }
        let channels = packed.shape()[0];
        let bins = packed.shape()[1] / 2;
        Ok(SpectralWeight { packed, channels, bins })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// The learnable `[channels, 2·bins]` tensor.
    pub fn packed(&self) -> &Tensor {
        &self.packed
    }

    pub fn re(&self, channel: usize, bin: usize) -> Real {
        self.packed.data()[channel * 2 * self.bins + bin]
    }

    pub fn im(&self, channel: usize, bin: usize) -> Real {
        self.packed.data()[channel * 2 * self.bins + self.bins + bin]
    }

    pub fn magnitude(&self, channel: usize, bin: usize) -> Real {
        let (r, i) = (self.re(channel, bin), self.im(channel, bin));
        (r * r + i * i).sqrt()
    }
}

fn signal_dims(x: &Tensor) -> Result<(usize, usize)> {
    match x.rank() {
        2 => Ok((x.shape()[0], x.shape()[1])),
        3 => Ok((x.shape()[1], x.shape()[2])),
        _ => Err(Error::dim(format!(
            "spectral ops need [channels, length] or [batch, channels, length], got {:?}",
            x.shape()
        ))),
    }
}

/// Forward transform of a real `[C, L]` or `[B, C, L]` signal into its
/// Hermitian-reduced spectrum. Unnormalized; differentiable.
pub fn rdft(x: &Tensor) -> Result<ComplexSpectrum> {
    let (channels, len) = signal_dims(x)?;
    if len < 2 {
        return Err(Error::dim(format!("rdft needs length ≥ 2, got {len}")));
    }
    let plan = fft::plan(len);
    let bins = plan.bins();
    let rows = x.len() / len;
    let mut out = vec![0.0; rows * 2 * bins];
    {
        let data = x.data();
        for r in 0..rows {
            let row = &data[r * len..(r + 1) * len];
            let (head, tail) = out[r * 2 * bins..(r + 1) * 2 * bins].split_at_mut(bins);
            plan.rdft_row(row, head, tail);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = 2 * bins;
    let packed = Tensor::from_op(shape, out, Op::Rdft { x: x.clone() });
    Ok(ComplexSpectrum { packed, channels, bins, original_length: len })
}

/// Inverse transform back to a real signal of the spectrum's original
/// length. Applies 1/L; differentiable.
pub fn irdft(s: &ComplexSpectrum) -> Result<Tensor> {
    let len = s.original_length;
    let plan = fft::plan(len);
    let bins = plan.bins();
    if bins != s.bins {
        return Err(Error::dim(format!(
            "spectrum has {} bins but length {len} implies {bins}",
            s.bins
        )));
    }
    let rows = s.packed.len() / (2 * bins);
    let mut out = vec![0.0; rows * len];
    {
        let data = s.packed.data();
        for r in 0..rows {
            let row = &data[r * 2 * bins..(r + 1) * 2 * bins];
            plan.irdft_row(&row[..bins], &row[bins..], &mut out[r * len..(r + 1) * len]);
        }
    }
    let mut shape = s.packed.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    Ok(Tensor::from_op(
        shape,
        out,
        Op::Irdft { packed: s.packed.clone(), original_len: len },
    ))
}

/// Complex elementwise product of a spectrum with a filter:
/// `(A+iB)·(wʳ+iwᵐ) = (A·wʳ−B·wᵐ) + i(A·wᵐ+B·wʳ)` per bin. The filter is
/// shared across the batch dimension when the spectrum is batched.
pub fn complex_hadamard(s: &ComplexSpectrum, w: &SpectralWeight) -> Result<ComplexSpectrum> {
    if s.channels != w.channels || s.bins != w.bins {
        return Err(Error::dim(format!(
            "spectrum is {}ch × {} bins but weight is {}ch × {} bins",
            s.channels, s.bins, w.channels, w.bins
        )));
    }
    let packed = complex_mul(&s.packed, &w.packed)?;
    Ok(ComplexSpectrum {
        packed,
        channels: s.channels,
        bins: s.bins,
        original_length: s.original_length,
    })
}

/// Complex product of packed `[.., 2K]` tensors; `rhs` may be `[C, 2K]`
/// against a batched `[B, C, 2K]` lhs.
pub(crate) fn complex_mul(lhs: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    let ok = lhs.shape() == rhs.shape()
        || (lhs.rank() == 3 && rhs.rank() == 2 && lhs.shape()[1..] == *rhs.shape());
    if !ok {
        return Err(Error::dim(format!(
            "cannot complex-multiply shapes {:?} and {:?}",
            lhs.shape(),
            rhs.shape()
        )));
    }
    let two_k = *lhs.shape().last().unwrap();
    if two_k % 2 != 0 {
        return Err(Error::dim("packed complex tensors need an even last axis"));
    }
    let k = two_k / 2;
    let rows = lhs.len() / two_k;
    let rhs_rows = rhs.len() / two_k;
    let mut out = vec![0.0; lhs.len()];
    {
        let a = lhs.data();
        let b = rhs.data();
        for r in 0..rows {
            let ab = r * two_k;
            let bb = (r % rhs_rows) * two_k;
            for j in 0..k {
                let (ar, ai) = (a[ab + j], a[ab + k + j]);
                let (br, bi) = (b[bb + j], b[bb + k + j]);
                out[ab + j] = ar * br - ai * bi;
                out[ab + k + j] = ar * bi + ai * br;
            }
        }
    }
    Ok(Tensor::from_op(
        lhs.shape().to_vec(),
        out,
        Op::ComplexMul { lhs: lhs.clone(), rhs: rhs.clone() },
    ))
}

/// The filter-reconstruct operator: `γ · irdft(W ⊙ rdft(x))`. Callers add
/// the result onto whatever feature map it refines.
pub fn far_reconstruct(x: &Tensor, w: &SpectralWeight, gamma: Real) -> Result<Tensor> {
    let filtered = complex_hadamard(&rdft(x)?, w)?;
    Ok(irdft(&filtered)?.scale(gamma))
}

// ── backward rules (dispatched from tensor.rs) ──────────────────────────

pub(crate) fn rdft_backward(x: &Tensor, g: &[Real], store: &mut GradStore) {
    let len = *x.shape().last().unwrap();
    let plan = fft::plan(len);
    let bins = plan.bins();
    let rows = x.len() / len;
    store.with_slot(x, |gx| {
        for r in 0..rows {
            let grow = &g[r * 2 * bins..(r + 1) * 2 * bins];
            plan.rdft_grad_row(
                &grow[..bins],
                &grow[bins..],
                &mut gx[r * len..(r + 1) * len],
            );
        }
    });
}

pub(crate) fn irdft_backward(packed: &Tensor, original_len: usize, g: &[Real], store: &mut GradStore) {
    let plan = fft::plan(original_len);
    let bins = plan.bins();
    let rows = packed.len() / (2 * bins);
    store.with_slot(packed, |gp| {
        for r in 0..rows {
            let grow = &g[r * original_len..(r + 1) * original_len];
            let (head, tail) = gp[r * 2 * bins..(r + 1) * 2 * bins].split_at_mut(bins);
            plan.irdft_grad_row(grow, head, tail);
        }
    });
}

pub(crate) fn complex_mul_backward(lhs: &Tensor, rhs: &Tensor, g: &[Real], store: &mut GradStore) {
    let two_k = *lhs.shape().last().unwrap();
    let k = two_k / 2;
    let rows = lhs.len() / two_k;
    let rhs_rows = rhs.len() / two_k;
    {
        // ∂/∂lhs = g ⊗ conj(rhs)
        let b = rhs.data();
        store.with_slot(lhs, |gl| {
            for r in 0..rows {
                let ab = r * two_k;
                let bb = (r % rhs_rows) * two_k;
                for j in 0..k {
                    let (gr, gi) = (g[ab + j], g[ab + k + j]);
                    let (br, bi) = (b[bb + j], b[bb + k + j]);
                    gl[ab + j] += gr * br + gi * bi;
                    gl[ab + k + j] += gi * br - gr * bi;
                }
            }
        });
    }
    let a = lhs.data();
    store.with_slot(rhs, |gw| {
        for r in 0..rows {
            let ab = r * two_k;
            let bb = (r % rhs_rows) * two_k;
            for j in 0..k {
                let (gr, gi) = (g[ab + j], g[ab + k + j]);
                let (ar, ai) = (a[ab + j], a[ab + k + j]);
                gw[bb + j] += gr * ar + gi * ai;
                gw[bb + k + j] += gi * ar - gr * ai;
            }
        }
    });
}
