//! Differentiable operations recorded on the tape.
//!
//! Each op validates shapes up front, computes the forward value, and appends
//! a node whose backward closure maps the upstream gradient to one gradient
//! per parent. Kernels are plain loops; the shapes in play are desk-scale.

use std::rc::Rc;

use super::{e, Elem, Graph, Tensor};
use crate::error::{Error, Result};

/// Forward bilinear resampling with half-pixel centers, shared by the
/// differentiable op and the data pipeline.
pub fn bilinear_kernel<E: Elem>(
    input: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let mut out = vec![E::zero(); n * c * oh * ow];
    let taps = bilinear_taps(h, w, oh, ow);
    for img in 0..n * c {
        let src = &input[img * h * w..(img + 1) * h * w];
        let dst = &mut out[img * oh * ow..(img + 1) * oh * ow];
        for (o, tap) in taps.iter().enumerate() {
            let mut acc = E::zero();
            for &(idx, wt) in tap {
                acc = acc + src[idx] * e::<E>(wt);
            }
            dst[o] = acc;
        }
    }
    out
}

/// Per-output-pixel source taps (index into an h*w plane, weight).
fn bilinear_taps(h: usize, w: usize, oh: usize, ow: usize) -> Vec<[(usize, f64); 4]> {
    let coords = |size: usize, osize: usize, o: usize| -> (usize, usize, f64) {
        if size == osize {
            return (o, o, 0.0);
        }
        let scale = size as f64 / osize as f64;
        let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (size - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(size - 1);
        (lo, hi, s - lo as f64)
    };
    let mut taps = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let (y0, y1, fy) = coords(h, oh, oy);
        for ox in 0..ow {
            let (x0, x1, fx) = coords(w, ow, ox);
            taps.push([
                (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * w + x1, (1.0 - fy) * fx),
                (y1 * w + x0, fy * (1.0 - fx)),
                (y1 * w + x1, fy * fx),
            ]);
        }
    }
    taps
}

fn check_same_shape<E: Elem>(op: &str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<E: Elem> Graph<E> {
    fn binary_elementwise(
        &self,
        a: &Tensor<E>,
        b: &Tensor<E>,
        fwd: impl Fn(E, E) -> E,
        back: impl Fn(&[E], &[E], &[E]) -> (Vec<E>, Vec<E>) + 'static,
    ) -> Tensor<E> {
        let pa = self.register(a);
        let pb = self.register(b);
        let out: Vec<E> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| fwd(x, y))
            .collect();
        let (da, db) = (Rc::clone(&a.data), Rc::clone(&b.data));
        self.record(
            a.shape().to_vec(),
            out,
            vec![pa, pb],
            Box::new(move |g| {
                let (ga, gb) = back(g, &da, &db);
                vec![ga, gb]
            }),
        )
    }

    pub fn add(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        check_same_shape("add", a, b)?;
        Ok(self.binary_elementwise(a, b, |x, y| x + y, |g, _, _| (g.to_vec(), g.to_vec())))
    }

    pub fn sub(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        check_same_shape("sub", a, b)?;
        Ok(self.binary_elementwise(
            a,
            b,
            |x, y| x - y,
            |g, _, _| (g.to_vec(), g.iter().map(|&v| -v).collect()),
        ))
    }

    pub fn mul(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        check_same_shape("mul", a, b)?;
        Ok(self.binary_elementwise(
            a,
            b,
            |x, y| x * y,
            |g, da, db| {
                let ga = g.iter().zip(db).map(|(&gi, &y)| gi * y).collect();
                let gb = g.iter().zip(da).map(|(&gi, &x)| gi * x).collect();
                (ga, gb)
            },
        ))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&self, a: &Tensor<E>, factor: f64) -> Tensor<E> {
        let pa = self.register(a);
        let c = e::<E>(factor);
        let out: Vec<E> = a.data().iter().map(|&x| x * c).collect();
        self.record(
            a.shape().to_vec(),
            out,
            vec![pa],
            Box::new(move |g| vec![g.iter().map(|&v| v * c).collect()]),
        )
    }

    pub fn relu(&self, a: &Tensor<E>) -> Tensor<E> {
        let pa = self.register(a);
        let out: Vec<E> = a.data().iter().map(|&x| x.max(E::zero())).collect();
        let da = Rc::clone(&a.data);
        self.record(
            a.shape().to_vec(),
            out,
            vec![pa],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(da.iter())
                    .map(|(&gi, &x)| if x > E::zero() { gi } else { E::zero() })
                    .collect()]
            }),
        )
    }

    /// Natural log with the argument clamped at 1e-12.
    pub fn log_clamped(&self, a: &Tensor<E>) -> Tensor<E> {
        let pa = self.register(a);
        let floor = e::<E>(1e-12);
        let out: Vec<E> = a.data().iter().map(|&x| x.max(floor).ln()).collect();
        let da = Rc::clone(&a.data);
        self.record(
            a.shape().to_vec(),
            out,
            vec![pa],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(da.iter())
                    .map(|(&gi, &x)| gi / x.max(floor))
                    .collect()]
            }),
        )
    }

    pub fn sum_all(&self, a: &Tensor<E>) -> Tensor<E> {
        let pa = self.register(a);
        let total: E = a.data().iter().copied().sum();
        let n = a.numel();
        self.record(
            vec![1],
            vec![total],
            vec![pa],
            Box::new(move |g| vec![vec![g[0]; n]]),
        )
    }

    pub fn mean_all(&self, a: &Tensor<E>) -> Tensor<E> {
        let s = self.sum_all(a);
        self.scale(&s, 1.0 / a.numel() as f64)
    }

    /// Fully connected layer: `input` N×C, `weight` K×C, `bias` K → N×K.
    pub fn linear(
        &self,
        input: &Tensor<E>,
        weight: &Tensor<E>,
        bias: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let (n, c) = match input.shape() {
            [n, c] => (*n, *c),
            s => return Err(Error::ShapeMismatch(format!("linear input rank {:?}", s))),
        };
        let (k, cw) = match weight.shape() {
            [k, cw] => (*k, *cw),
            s => return Err(Error::ShapeMismatch(format!("linear weight rank {:?}", s))),
        };
        if cw != c {
            return Err(Error::ShapeMismatch(format!(
                "linear: input features {c} vs weight features {cw}"
            )));
        }
        if bias.shape() != [k] {
            return Err(Error::ShapeMismatch(format!(
                "linear: bias {:?} vs {k} outputs",
                bias.shape()
            )));
        }
        let pi = self.register(input);
        let pw = self.register(weight);
        let pb = self.register(bias);
        let (di, dw, db) = (
            Rc::clone(&input.data),
            Rc::clone(&weight.data),
            Rc::clone(&bias.data),
        );
        let mut out = vec![E::zero(); n * k];
        for i in 0..n {
            for j in 0..k {
                let mut acc = db[j];
                for l in 0..c {
                    acc = acc + di[i * c + l] * dw[j * c + l];
                }
                out[i * k + j] = acc;
            }
        }
        Ok(self.record(
            vec![n, k],
            out,
            vec![pi, pw, pb],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); n * c];
                let mut gw = vec![E::zero(); k * c];
                let mut gb = vec![E::zero(); k];
                for i in 0..n {
                    for j in 0..k {
                        let go = g[i * k + j];
                        gb[j] = gb[j] + go;
                        for l in 0..c {
                            gi[i * c + l] = gi[i * c + l] + go * dw[j * c + l];
                            gw[j * c + l] = gw[j * c + l] + go * di[i * c + l];
                        }
                    }
                }
                vec![gi, gw, gb]
            }),
        ))
    }

    /// 2D convolution, NCHW input against C'×C×kh×kw kernel.
    pub fn conv2d(
        &self,
        input: &Tensor<E>,
        kernel: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<E>> {
        let (n, c, h, w) = match input.shape() {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d input must be N×C×H×W, got {:?}",
                    s
                )))
            }
        };
        let (co, ci, kh, kw) = match kernel.shape() {
            [co, ci, kh, kw] => (*co, *ci, *kh, *kw),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d kernel must be C'×C×kh×kw, got {:?}",
                    s
                )))
            }
        };
        if ci != c {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: input channels {c} vs kernel channels {ci}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::ShapeMismatch(format!(
                "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d: bias {:?} vs {co} output channels",
                    b.shape()
                )));
            }
        }
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;

        let mut parents = vec![self.register(input), self.register(kernel)];
        if let Some(b) = bias {
            parents.push(self.register(b));
        }
        let di = Rc::clone(&input.data);
        let dk = Rc::clone(&kernel.data);
        let has_bias = bias.is_some();

        let mut out = vec![E::zero(); n * co * ho * wo];
        for b in 0..n {
            for oc in 0..co {
                let base = bias.map(|t| t.data()[oc]).unwrap_or_else(E::zero);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = base;
                        for ic in 0..c {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc = acc
                                        + di[((b * c + ic) * h + iy as usize) * w + ix as usize]
                                            * dk[((oc * c + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((b * co + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }

        Ok(self.record(
            vec![n, co, ho, wo],
            out,
            parents,
            Box::new(move |g| {
                let mut gi = vec![E::zero(); n * c * h * w];
                let mut gk = vec![E::zero(); co * c * kh * kw];
                let mut gb = vec![E::zero(); co];
                for b in 0..n {
                    for oc in 0..co {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let go = g[((b * co + oc) * ho + oy) * wo + ox];
                                gb[oc] = gb[oc] + go;
                                for ic in 0..c {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix =
                                                (ox * stride + kx) as isize - padding as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            let ii = ((b * c + ic) * h + iy as usize) * w
                                                + ix as usize;
                                            let ki = ((oc * c + ic) * kh + ky) * kw + kx;
                                            gi[ii] = gi[ii] + go * dk[ki];
                                            gk[ki] = gk[ki] + go * di[ii];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![gi, gk];
                if has_bias {
                    grads.push(gb);
                }
                grads
            }),
        ))
    }

    /// 2×2 max pooling with stride 2. Spatial extents must be even.
    pub fn maxpool2(&self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, c, h, w) = match input.shape() {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "maxpool2 input must be N×C×H×W, got {:?}",
                    s
                )))
            }
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "maxpool2: spatial extents {h}x{w} must be even"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let pa = self.register(input);
        let di = input.data();
        let mut out = vec![E::zero(); n * c * ho * wo];
        let mut argmax = vec![0usize; n * c * ho * wo];
        for img in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = E::neg_infinity();
                    let mut best_idx = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = img * h * w + (oy * 2 + dy) * w + (ox * 2 + dx);
                            if di[idx] > best {
                                best = di[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[img * ho * wo + oy * wo + ox] = best;
                    argmax[img * ho * wo + oy * wo + ox] = best_idx;
                }
            }
        }
        let in_len = input.numel();
        Ok(self.record(
            vec![n, c, ho, wo],
            out,
            vec![pa],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); in_len];
                for (o, &src) in argmax.iter().enumerate() {
                    gi[src] = gi[src] + g[o];
                }
                vec![gi]
            }),
        ))
    }

    /// Mean over the spatial dimensions: N×C×H×W → N×C.
    pub fn global_avg_pool(&self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, c, h, w) = match input.shape() {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "global_avg_pool input must be N×C×H×W, got {:?}",
                    s
                )))
            }
        };
        let pa = self.register(input);
        let hw = h * w;
        let inv = e::<E>(1.0 / hw as f64);
        let mut out = vec![E::zero(); n * c];
        for (img, o) in out.iter_mut().enumerate() {
            let s: E = input.data()[img * hw..(img + 1) * hw].iter().copied().sum();
            *o = s * inv;
        }
        Ok(self.record(
            vec![n, c],
            out,
            vec![pa],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); n * c * hw];
                for (img, &go) in g.iter().enumerate() {
                    let gv = go * inv;
                    for v in &mut gi[img * hw..(img + 1) * hw] {
                        *v = gv;
                    }
                }
                vec![gi]
            }),
        ))
    }

    /// Bilinear resampling with half-pixel centers. Exact identity when the
    /// target size equals the source size.
    pub fn bilinear_resize(&self, input: &Tensor<E>, oh: usize, ow: usize) -> Result<Tensor<E>> {
        let (n, c, h, w) = match input.shape() {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "bilinear_resize input must be N×C×H×W, got {:?}",
                    s
                )))
            }
        };
        if oh == 0 || ow == 0 {
            return Err(Error::ShapeMismatch(
                "bilinear_resize: target extents must be positive".into(),
            ));
        }
        let pa = self.register(input);
        let out = bilinear_kernel(input.data(), n, c, h, w, oh, ow);
        let taps = bilinear_taps(h, w, oh, ow);
        Ok(self.record(
            vec![n, c, oh, ow],
            out,
            vec![pa],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); n * c * h * w];
                for img in 0..n * c {
                    let gsrc = &g[img * taps.len()..(img + 1) * taps.len()];
                    for (o, tap) in taps.iter().enumerate() {
                        for &(idx, wt) in tap {
                            let ii = img * h * w + idx;
                            gi[ii] = gi[ii] + gsrc[o] * e::<E>(wt);
                        }
                    }
                }
                vec![gi]
            }),
        ))
    }

    /// Row-wise softmax over an N×K tensor, stabilized by max subtraction.
    pub fn softmax(&self, logits: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, k) = match logits.shape() {
            [n, k] => (*n, *k),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "softmax input must be N×K, got {:?}",
                    s
                )))
            }
        };
        if logits.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("NaN logits passed to softmax".into()));
        }
        let pa = self.register(logits);
        let mut out = vec![E::zero(); n * k];
        for row in 0..n {
            let r = &logits.data()[row * k..(row + 1) * k];
            let m = r.iter().copied().fold(E::neg_infinity(), E::max);
            let exps: Vec<E> = r.iter().map(|&v| (v - m).exp()).collect();
            let s: E = exps.iter().copied().sum();
            for (j, ex) in exps.into_iter().enumerate() {
                out[row * k + j] = ex / s;
            }
        }
        let probs = Rc::new(out.clone());
        Ok(self.record(
            vec![n, k],
            out,
            vec![pa],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); n * k];
                for row in 0..n {
                    let p = &probs[row * k..(row + 1) * k];
                    let gr = &g[row * k..(row + 1) * k];
                    let dot: E = p.iter().zip(gr).map(|(&pi, &gi)| pi * gi).sum();
                    for j in 0..k {
                        gi[row * k + j] = p[j] * (gr[j] - dot);
                    }
                }
                vec![gi]
            }),
        ))
    }

    /// Per-map min-max normalization over the trailing two dimensions.
    /// A constant map (max == min) normalizes to all zeros.
    pub fn minmax_normalize_maps(&self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = input.shape();
        if shape.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "minmax_normalize_maps needs rank >= 2, got {:?}",
                shape
            )));
        }
        let map_len: usize = shape[shape.len() - 2] * shape[shape.len() - 1];
        let n_maps = input.numel() / map_len;
        let pa = self.register(input);
        let mut out = vec![E::zero(); input.numel()];
        // (imin, imax, range) per map; range zero marks a degenerate map.
        let mut meta = Vec::with_capacity(n_maps);
        for m in 0..n_maps {
            let src = &input.data()[m * map_len..(m + 1) * map_len];
            let mut imin = 0;
            let mut imax = 0;
            for (i, &v) in src.iter().enumerate() {
                if v < src[imin] {
                    imin = i;
                }
                if v > src[imax] {
                    imax = i;
                }
            }
            let lo = src[imin];
            let range = src[imax] - lo;
            if range > E::zero() {
                for i in 0..map_len {
                    out[m * map_len + i] = (src[i] - lo) / range;
                }
            }
            meta.push((imin, imax, range));
        }
        let norm = Rc::new(out.clone());
        Ok(self.record(
            shape.to_vec(),
            out,
            vec![pa],
            Box::new(move |g| {
                let mut gi = vec![E::zero(); n_maps * map_len];
                for (m, &(imin, imax, range)) in meta.iter().enumerate() {
                    if range <= E::zero() {
                        continue;
                    }
                    let gm = &g[m * map_len..(m + 1) * map_len];
                    let ym = &norm[m * map_len..(m + 1) * map_len];
                    let gsum: E = gm.iter().copied().sum();
                    let gysum: E = gm.iter().zip(ym).map(|(&a, &b)| a * b).sum();
                    let dst = &mut gi[m * map_len..(m + 1) * map_len];
                    for i in 0..map_len {
                        dst[i] = dst[i] + gm[i] / range;
                    }
                    dst[imin] = dst[imin] - gsum / range + gysum / range;
                    dst[imax] = dst[imax] - gysum / range;
                }
                vec![gi]
            }),
        ))
    }

    /// Gradient-weighted channel sum for class-activation maps:
    /// `features` N×C×H×W combined with constant `weights` N×K×C into
    /// raw maps N×K×H×W. Gradient flows into the features only.
    pub fn cam_weighted_sum(
        &self,
        features: &Tensor<E>,
        weights: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let (n, c, h, w) = match features.shape() {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "cam_weighted_sum features must be N×C×H×W, got {:?}",
                    s
                )))
            }
        };
        let (nw, k, cw) = match weights.shape() {
            [nw, k, cw] => (*nw, *k, *cw),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "cam_weighted_sum weights must be N×K×C, got {:?}",
                    s
                )))
            }
        };
        if nw != n || cw != c {
            return Err(Error::ShapeMismatch(format!(
                "cam_weighted_sum: features {:?} vs weights {:?}",
                features.shape(),
                weights.shape()
            )));
        }
        let pf = self.register(features);
        let df = Rc::clone(&features.data);
        let dw = Rc::clone(&weights.data);
        let hw = h * w;
        let mut out = vec![E::zero(); n * k * hw];
        for b in 0..n {
            for cls in 0..k {
                for ch in 0..c {
                    let alpha = dw[(b * k + cls) * c + ch];
                    if alpha == E::zero() {
                        continue;
                    }
                    let src = &df[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    let dst = &mut out[(b * k + cls) * hw..(b * k + cls + 1) * hw];
                    for i in 0..hw {
                        dst[i] = dst[i] + alpha * src[i];
                    }
                }
            }
        }
        Ok(self.record(
            vec![n, k, h, w],
            out,
            vec![pf],
            Box::new(move |g| {
                let mut gf = vec![E::zero(); n * c * hw];
                for b in 0..n {
                    for cls in 0..k {
                        let gm = &g[(b * k + cls) * hw..(b * k + cls + 1) * hw];
                        for ch in 0..c {
                            let alpha = dw[(b * k + cls) * c + ch];
                            if alpha == E::zero() {
                                continue;
                            }
                            let dst = &mut gf[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                            for i in 0..hw {
                                dst[i] = dst[i] + alpha * gm[i];
                            }
                        }
                    }
                }
                vec![gf]
            }),
        ))
    }
}
