use crate::error::{Error, Result};
use crate::grid::{RealImage, Rng};

use super::check_sigma;

/// Floating-point element type of the network. `f32` is the fast path used
/// for training and sampling; `f64` exists for gradient checks.
pub trait Scalar:
    num_traits::Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// tanh
    fn activation(self) -> Self;

    /// `c = alpha * a b + beta * c` on strided matrices.
    ///
    /// # Safety
    /// The strides must describe valid, in-bounds views of the buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    /// Rational minimax tanh, absolute error below 5e-7; libm's `tanhf`
    /// dominated evaluation time.
    fn activation(self) -> f32 {
        const ALPHA: [f32; 7] = [
            4.893_524_6e-3,
            6.372_619_3e-4,
            1.485_722_4e-5,
            5.122_297e-8,
            -8.604_672e-11,
            2.000_188e-13,
            -2.760_768_5e-16,
        ];
        const BETA: [f32; 4] = [4.893_525e-3, 2.268_434_6e-3, 1.185_347_1e-4, 1.198_258_4e-6];
        let x = self.clamp(-7.905_311, 7.905_311);
        let x2 = x * x;
        let mut p = ALPHA[6];
        for &c in ALPHA[..6].iter().rev() {
            p = p * x2 + c;
        }
        let mut q = BETA[3];
        for &c in BETA[..3].iter().rev() {
            q = q * x2 + c;
        }
        x * p / q
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn activation(self) -> f64 {
        self.tanh()
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided matrix view into a slice: element `(i, j)` lives at
/// `offset + i * rs + j * cs`.
#[derive(Clone, Copy)]
struct View {
    offset: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn row_major(cols: usize) -> Self {
        View {
            offset: 0,
            rs: cols,
            cs: 1,
        }
    }

    fn transposed(rows: usize) -> Self {
        View {
            offset: 0,
            rs: 1,
            cs: rows,
        }
    }

    /// One past the largest index touched by a `rows x cols` view.
    fn end(self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs + 1
    }
}

/// `c = a b + beta c` with `a: m x k`, `b: k x n`, `c: m x n` given as views.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    av: View,
    b: &[T],
    bv: View,
    c: &mut [T],
    cv: View,
    accumulate: bool,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(av.end(m, k) <= a.len() && bv.end(k, n) <= b.len() && cv.end(m, n) <= c.len());
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the assertion bounds every index reachable through the views.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}

/// `c (m x n) = op(a) op(b) (+ c)`, all row-major. `a` is `m x k` (stored
/// `k x m` when transposed), `b` is `k x n` (stored `n x k` when transposed).
#[allow(clippy::too_many_arguments)]
fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let av = if a_t { View::transposed(m) } else { View::row_major(k) };
    let bv = if b_t { View::transposed(k) } else { View::row_major(n) };
    gemm(m, k, n, a, av, b, bv, c, View::row_major(n), accumulate);
}

/// Calls `f(tap, dst, src, len)` for every 3x3 tap and image row, where
/// `dst..dst + len` are output pixels whose zero-padded neighbor at `tap`
/// is the in-bounds run `src..src + len`.
fn for_each_tap(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    for ky in 0..3 {
        for kx in 0..3 {
            let tap = ky * 3 + kx;
            let x_lo = usize::from(kx == 0);
            let x_hi = if kx == 2 { w - 1 } else { w };
            if x_hi <= x_lo {
                continue;
            }
            let (y_lo, y_hi) = (usize::from(ky == 0), if ky == 2 { h - 1 } else { h });
            for y in y_lo..y_hi {
                let sy = y + ky - 1;
                f(tap, y * w + x_lo, sy * w + x_lo + kx - 1, x_hi - x_lo);
            }
        }
    }
}

/// Unfolds `channels x h x w` into a `(channels * 9) x (h * w)` matrix of
/// zero-padded 3x3 neighborhoods.
fn im2col<T: Scalar>(input: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut col = vec![T::zero(); channels * 9 * hw];
    for ch in 0..channels {
        let src = &input[ch * hw..(ch + 1) * hw];
        let block = &mut col[ch * 9 * hw..(ch + 1) * 9 * hw];
        for_each_tap(h, w, |tap, d, s, n| {
            block[tap * hw + d..tap * hw + d + n].copy_from_slice(&src[s..s + n]);
        });
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im<T: Scalar>(col: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); channels * hw];
    for ch in 0..channels {
        let dst = &mut out[ch * hw..(ch + 1) * hw];
        let block = &col[ch * 9 * hw..(ch + 1) * 9 * hw];
        for_each_tap(h, w, |tap, d, s, n| {
            for (o, &v) in dst[s..s + n].iter_mut().zip(&block[tap * hw + d..tap * hw + d + n]) {
                *o = *o + v;
            }
        });
    }
    out
}

/// Single-output-channel convolution, done directly: a one-row GEMM is slow.
fn conv_to_one<T: Scalar>(input: &[T], channels: usize, h: usize, w: usize, weight: &[T], out: &mut [T]) {
    let hw = h * w;
    for ch in 0..channels {
        let src = &input[ch * hw..(ch + 1) * hw];
        for_each_tap(h, w, |tap, d, s, n| {
            let wv = weight[ch * 9 + tap];
            for (o, &v) in out[d..d + n].iter_mut().zip(&src[s..s + n]) {
                *o = *o + wv * v;
            }
        });
    }
}

/// Gradients of [`conv_to_one`] with respect to its weights and input.
fn conv_to_one_backward<T: Scalar>(
    input: &[T],
    channels: usize,
    h: usize,
    w: usize,
    weight: &[T],
    delta: &[T],
    grad_weight: &mut [T],
    grad_input: Option<&mut [T]>,
) {
    let hw = h * w;
    for ch in 0..channels {
        let src = &input[ch * hw..(ch + 1) * hw];
        for_each_tap(h, w, |tap, d, s, n| {
            let dot: T = delta[d..d + n].iter().zip(&src[s..s + n]).map(|(&a, &b)| a * b).sum();
            grad_weight[ch * 9 + tap] = grad_weight[ch * 9 + tap] + dot;
        });
    }
    if let Some(gi) = grad_input {
        for ch in 0..channels {
            let dst = &mut gi[ch * hw..(ch + 1) * hw];
            for_each_tap(h, w, |tap, d, s, n| {
                let wv = weight[ch * 9 + tap];
                for (o, &v) in dst[s..s + n].iter_mut().zip(&delta[d..d + n]) {
                    *o = *o + wv * v;
                }
            });
        }
    }
}

/// A stack of 3x3 same-padded convolutions with tanh between them.
///
/// Input channels are the scaled image `x / sqrt(sigma_data^2 + sigma^2)` and
/// a constant plane holding the normalized noise level
/// `(ln sigma - ln sigma_min) / (ln sigma_max - ln sigma_min)`. The raw output
/// `F` is turned into a score by
/// `s = sigma_data F / (sigma c) - x / c^2` with `c^2 = sigma_data^2 + sigma^2`,
/// so that an untrained network already returns the score of a Gaussian with
/// the data's scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvScoreNet<T> {
    widths: Vec<usize>,
    params: Vec<T>,
    sigma_data: f64,
    sigma_min: f64,
    sigma_max: f64,
}

struct Forward<T> {
    /// Input of every layer: the network input, then the hidden activations.
    inputs: Vec<Vec<T>>,
    out: Vec<T>,
}

impl<T: Scalar> ConvScoreNet<T> {
    /// Fresh network `2 -> width -> width -> 1` with fan-in-scaled uniform
    /// initialization.
    pub fn new(
        width: usize,
        sigma_data: f64,
        sigma_min: f64,
        sigma_max: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let widths = vec![2, width, width, 1];
        let count = Self::param_count(&widths);
        let mut net = Self::from_parts(widths, vec![T::zero(); count], sigma_data, sigma_min, sigma_max)?;
        let mut offset = 0;
        for l in 0..net.widths.len() - 1 {
            let (cin, cout) = (net.widths[l], net.widths[l + 1]);
            let bound = 1.0 / ((cin * 9) as f64).sqrt();
            for p in &mut net.params[offset..offset + cout * cin * 9 + cout] {
                *p = T::of(bound * (2.0 * rng.uniform() - 1.0));
            }
            offset += cout * cin * 9 + cout;
        }
        Ok(net)
    }

    pub fn from_parts(
        widths: Vec<usize>,
        params: Vec<T>,
        sigma_data: f64,
        sigma_min: f64,
        sigma_max: f64,
    ) -> Result<Self> {
        if widths.len() < 2 || widths[0] != 2 || *widths.last().unwrap_or(&0) != 1 {
            return Err(Error::param("widths", "layer widths must run from 2 to 1"));
        }
        if widths.contains(&0) {
            return Err(Error::param("widths", "layer widths must be positive"));
        }
        if params.len() != Self::param_count(&widths) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", Self::param_count(&widths)),
                got: format!("{} parameters", params.len()),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("params", "non-finite parameter"));
        }
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(Error::param("sigma_data", "must be positive"));
        }
        if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
            return Err(Error::param("sigma_max", "need 0 < sigma_min < sigma_max"));
        }
        Ok(Self {
            widths,
            params,
            sigma_data,
            sigma_min,
            sigma_max,
        })
    }

    fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|p| p[1] * p[0] * 9 + p[1]).sum()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// `(name, shape)` of every weight and bias tensor in storage order.
    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (l, p) in self.widths.windows(2).enumerate() {
            out.push((format!("conv{}.weight", l + 1), vec![p[1], p[0], 3, 3]));
            out.push((format!("conv{}.bias", l + 1), vec![p[1]]));
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ConvScoreNet<U> {
        ConvScoreNet {
            widths: self.widths.clone(),
            params: self.params.iter().map(|p| U::of(p.as_f64())).collect(),
            sigma_data: self.sigma_data,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
        }
    }

    fn level(&self, sigma: f64) -> f64 {
        (sigma.ln() - self.sigma_min.ln()) / (self.sigma_max.ln() - self.sigma_min.ln())
    }

    /// `(c_in, c_out, c_skip)` with `s = c_out F - c_skip x`.
    fn coefficients(&self, sigma: f64) -> (f64, f64, f64) {
        let c2 = self.sigma_data * self.sigma_data + sigma * sigma;
        let c = c2.sqrt();
        (1.0 / c, self.sigma_data / (sigma * c), 1.0 / c2)
    }

    /// Runs the network. With `cache` the layer inputs are kept for
    /// backpropagation.
    fn forward(&self, x: &RealImage, sigma: f64, cache: bool) -> Forward<T> {
        let (h, w) = x.shape();
        let hw = h * w;
        let (c_in, _, _) = self.coefficients(sigma);
        let mut input = Vec::with_capacity(2 * hw);
        input.extend(x.data().iter().map(|&v| T::of(v * c_in)));
        input.extend(std::iter::repeat(T::of(self.level(sigma))).take(hw));

        let layers = self.widths.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut current = input;
        let mut offset = 0;
        for l in 0..layers {
            let (cin, cout) = (self.widths[l], self.widths[l + 1]);
            let k = cin * 9;
            let weight = &self.params[offset..offset + cout * k];
            let bias = &self.params[offset + cout * k..offset + cout * k + cout];
            offset += cout * k + cout;
            let mut out = vec![T::zero(); cout * hw];
            for (row, &b) in out.chunks_mut(hw).zip(bias) {
                row.fill(b);
            }
            if cout == 1 {
                conv_to_one(&current, cin, h, w, weight, &mut out);
            } else {
                let col = im2col(&current, cin, h, w);
                matmul(cout, k, hw, weight, false, &col, false, &mut out, true);
            }
            if l + 1 < layers {
                for v in &mut out {
                    *v = v.activation();
                }
            }
            let prev = std::mem::replace(&mut current, out);
            if cache {
                inputs.push(prev);
            }
        }
        Forward {
            inputs,
            out: current,
        }
    }

    /// Inference-only forward pass. Activations live on a zero-bordered
    /// `(h + 2) x (w + 2)` grid so each 3x3 tap is a GEMM on a shifted view of
    /// the previous layer, avoiding the unfolded matrix.
    fn forward_padded(&self, x: &RealImage, sigma: f64) -> Vec<T> {
        let (h, w) = x.shape();
        let pw = w + 2;
        let plane = (h + 2) * pw;
        // outputs are computed for the contiguous run of padded indices that
        // covers the interior; border entries are overwritten with zeros after
        let start = pw + 1;
        let len = plane - 2 * pw - 2;
        let (c_in, _, _) = self.coefficients(sigma);
        let level = T::of(self.level(sigma));

        let mut current = vec![T::zero(); 2 * plane];
        for r in 0..h {
            for c in 0..w {
                let p = (r + 1) * pw + c + 1;
                current[p] = T::of(x.get(r, c) * c_in);
                current[plane + p] = level;
            }
        }
        let zero_border = |buf: &mut [T]| {
            for ch in buf.chunks_mut(plane) {
                ch[..pw].fill(T::zero());
                ch[plane - pw..].fill(T::zero());
                for r in 1..=h {
                    ch[r * pw] = T::zero();
                    ch[r * pw + w + 1] = T::zero();
                }
            }
        };

        let layers = self.widths.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (cin, cout) = (self.widths[l], self.widths[l + 1]);
            let k = cin * 9;
            let weight = &self.params[offset..offset + cout * k];
            let bias = &self.params[offset + cout * k..offset + cout * k + cout];
            offset += cout * k + cout;
            let mut out = vec![T::zero(); cout * plane];
            for (row, &b) in out.chunks_mut(plane).zip(bias) {
                row.fill(b);
            }
            for ky in 0..3 {
                for kx in 0..3 {
                    let tap = ky * 3 + kx;
                    let src = start + ky * pw + kx - pw - 1;
                    if cout == 1 {
                        for ch in 0..cin {
                            let wv = weight[ch * 9 + tap];
                            let input = &current[ch * plane + src..ch * plane + src + len];
                            for (o, &v) in out[start..start + len].iter_mut().zip(input) {
                                *o = *o + wv * v;
                            }
                        }
                    } else {
                        let wv = View {
                            offset: tap,
                            rs: k,
                            cs: 9,
                        };
                        let bv = View {
                            offset: src,
                            rs: plane,
                            cs: 1,
                        };
                        let cv = View {
                            offset: start,
                            rs: plane,
                            cs: 1,
                        };
                        gemm(cout, cin, len, weight, wv, &current, bv, &mut out, cv, true);
                    }
                }
            }
            if l + 1 < layers {
                for v in &mut out {
                    *v = v.activation();
                }
                zero_border(&mut out);
            }
            current = out;
        }
        let mut flat = Vec::with_capacity(h * w);
        for r in 0..h {
            flat.extend_from_slice(&current[(r + 1) * pw + 1..(r + 1) * pw + 1 + w]);
        }
        flat
    }

    pub fn score(&self, x: &RealImage, sigma: f64) -> Result<RealImage> {
        check_sigma(sigma)?;
        let out = self.forward_padded(x, sigma);
        let (_, c_out, c_skip) = self.coefficients(sigma);
        let data = out
            .iter()
            .zip(x.data())
            .map(|(f, &x)| c_out * f.as_f64() - c_skip * x)
            .collect();
        RealImage::from_vec(x.height(), x.width(), data)
    }

    /// Denoising loss `|sigma s(x0 + sigma z, sigma) + z|^2` and its gradient
    /// with respect to the parameters.
    pub fn dsm_loss_grad(&self, x0: &RealImage, sigma: f64, z: &RealImage) -> Result<(f64, Vec<T>)> {
        check_sigma(sigma)?;
        z.ensure_shape(x0.shape())?;
        let (h, w) = x0.shape();
        let hw = h * w;
        let mut xt = x0.clone();
        xt.axpy(sigma, z);
        let fwd = self.forward(&xt, sigma, true);
        let (_, c_out, c_skip) = self.coefficients(sigma);

        let mut loss = 0.0;
        let mut grad_out = Vec::with_capacity(hw);
        for ((f, &x), &z) in fwd.out.iter().zip(xt.data()).zip(z.data()) {
            let r = sigma * (c_out * f.as_f64() - c_skip * x) + z;
            loss += r * r;
            grad_out.push(T::of(2.0 * r * sigma * c_out));
        }

        let mut grad = vec![T::zero(); self.params.len()];
        let layers = self.widths.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.widths[l + 1] * self.widths[l] * 9 + self.widths[l + 1];
        }
        let mut delta = grad_out;
        for l in (0..layers).rev() {
            let (cin, cout) = (self.widths[l], self.widths[l + 1]);
            let k = cin * 9;
            let off = offsets[l];
            let input = &fwd.inputs[l];
            let weight = &self.params[off..off + cout * k];
            let (gw, rest) = grad[off..].split_at_mut(cout * k);
            for (gb, row) in rest[..cout].iter_mut().zip(delta.chunks(hw)) {
                *gb = row.iter().copied().sum();
            }
            let mut dinput = if l == 0 {
                None
            } else {
                Some(vec![T::zero(); cin * hw])
            };
            if cout == 1 {
                conv_to_one_backward(input, cin, h, w, weight, &delta, gw, dinput.as_deref_mut());
            } else {
                let col = im2col(input, cin, h, w);
                matmul(cout, hw, k, &delta, false, &col, true, gw, false);
                if dinput.is_some() {
                    let mut dcol = vec![T::zero(); k * hw];
                    matmul(k, cout, hw, weight, true, &delta, false, &mut dcol, false);
                    dinput = Some(col2im(&dcol, cin, h, w));
                }
            }
            let Some(mut dact) = dinput else { break };
            for (d, a) in dact.iter_mut().zip(input) {
                *d = *d * (T::one() - *a * *a);
            }
            delta = dact;
        }
        Ok((loss, grad))
    }
}
