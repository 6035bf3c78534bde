//! Layer forward/backward implementations.
//!
//! Convolution runs as im2col plus a blocked matmul; backward recomputes
//! the column matrix instead of capturing it, so closures stay small.
//! All loops are single-threaded: one graph belongs to one worker, and
//! determinism comes free.

use super::graph::{BackwardFn, Graph, Var};
use super::tensor::{Element, Tensor};
use super::AutodiffError;

/// Spatial padding for conv2d.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size = ceil(input / stride); zero-pads evenly,
    /// extra pixel at the bottom/right.
    Same,
    /// No padding; every kernel placement stays in bounds.
    Valid,
}

/// Batch-norm behavior switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize by batch statistics and update the running ones.
    Train,
    /// Normalize by the running statistics; nothing is updated.
    Eval,
}

/// Direction of the distillation KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlDirection {
    /// KL(student || teacher): the student's own distribution leads.
    Forward,
    /// KL(teacher || student).
    Reverse,
}

/// Running batch-norm statistics, one value per channel. Owned by the
/// model, mutated by train-mode forward passes, serialized in
/// checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<E: Element> {
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
}

impl<E: Element> BnStats<E> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::filled(vec![channels], E::ONE),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// c[m x n] = a[m x k] * b[k x n], row-major, ikj loop order.
pub(crate) fn matmul<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![E::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// c[m x n] = a[m x k] * b[n x k]^T: rows of `a` dotted with rows of `b`.
pub(crate) fn matmul_bt<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![E::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = E::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv = acc;
        }
    }
    c
}

/// c[m x n] = a[k x m]^T * b[k x n].
pub(crate) fn matmul_at<E: Element>(a: &[E], b: &[E], k: usize, m: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![E::ZERO; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[l * m + i];
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfold one sample (c x h x w) into a (c*kh*kw) x (oh*ow) matrix.
fn im2col<E: Element>(x: &[E], g: &ConvGeom) -> Vec<E> {
    let l = g.col_cols();
    let mut col = vec![E::ZERO; g.col_rows() * l];
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * l;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let xrow = (ci * g.h + iy as usize) * g.w;
                    let out = row + oy * g.ow;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        col[out + ox] = x[xrow + ix as usize];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add a column matrix back onto a (c x h x w) sample.
fn col2im<E: Element>(col: &[E], g: &ConvGeom, x: &mut [E]) {
    let l = g.col_cols();
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * l;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let xrow = (ci * g.h + iy as usize) * g.w;
                    let out = row + oy * g.ow;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        x[xrow + ix as usize] += col[out + ox];
                    }
                }
            }
        }
    }
}

fn out_dim(input: usize, kernel: usize, stride: usize, pad: Padding) -> (usize, usize) {
    match pad {
        Padding::Valid => ((input - kernel) / stride + 1, 0),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (out, total / 2)
        }
    }
}

impl<E: Element> Graph<E> {
    /// 2-D convolution, no bias: x (n,c,h,w) * w (o,c,kh,kw) -> (n,o,oh,ow).
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, AutodiffError> {
        const OP: &str = "conv2d";
        if stride == 0 {
            return Err(AutodiffError::Parameter("conv2d stride must be >= 1".into()));
        }
        let (n, c, h, wd) = self.value(x).dims4(OP)?;
        let (o, wc, kh, kw) = self.value(w).dims4(OP)?;
        if wc != c {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!(
                    "input shape {:?} has {c} channels, weight shape {:?} expects {wc}",
                    self.value(x).shape(),
                    self.value(w).shape()
                ),
            });
        }
        if padding == Padding::Valid && (h < kh || wd < kw) {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!(
                    "valid padding cannot fit kernel {:?} on input {:?}",
                    self.value(w).shape(),
                    self.value(x).shape()
                ),
            });
        }
        let (oh, pad_top) = out_dim(h, kh, stride, padding);
        let (ow, pad_left) = out_dim(wd, kw, stride, padding);
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            oh,
            ow,
        };

        let sample_in = c * h * wd;
        let sample_out = o * oh * ow;
        let l = geom.col_cols();
        let ck = geom.col_rows();
        let mut out = vec![E::ZERO; n * sample_out];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for s in 0..n {
                let col = im2col(&xv[s * sample_in..(s + 1) * sample_in], &geom);
                let y = matmul(wv, &col, o, ck, l);
                out[s * sample_out..(s + 1) * sample_out].copy_from_slice(&y);
            }
        }
        let value = Tensor::new(vec![n, o, oh, ow], out)?;

        let track_x = self.requires_grad(x);
        let track_w = self.requires_grad(w);
        let backward: Option<BackwardFn<E>> = if track_x || track_w {
            let (xid, wid) = (x.id, w.id);
            Some(Box::new(move |values, gout| {
                let xv = values[xid].data();
                let wv = values[wid].data();
                let gy = gout.data();
                let mut dx = track_x.then(|| vec![E::ZERO; n * sample_in]);
                let mut dw = track_w.then(|| vec![E::ZERO; o * ck]);
                for s in 0..n {
                    let gy_s = &gy[s * sample_out..(s + 1) * sample_out];
                    if let Some(dw) = dw.as_mut() {
                        let col = im2col(&xv[s * sample_in..(s + 1) * sample_in], &geom);
                        let part = matmul_bt(gy_s, &col, o, l, ck);
                        for (d, p) in dw.iter_mut().zip(&part) {
                            *d += *p;
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dcol = matmul_at(wv, gy_s, o, ck, l);
                        col2im(&dcol, &geom, &mut dx[s * sample_in..(s + 1) * sample_in]);
                    }
                }
                vec![
                    dx.map(|d| Tensor::new(vec![n, c, h, wd], d).expect("conv dx shape")),
                    dw.map(|d| Tensor::new(vec![o, c, kh, kw], d).expect("conv dw shape")),
                ]
            }))
        } else {
            None
        };
        self.push(OP, value, vec![x, w], backward)
    }

    /// Elementwise max(x, 0).
    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let value = self.value(x).map(|v| v.max_of(E::ZERO));
        let backward: Option<BackwardFn<E>> = self.requires_grad(x).then(|| {
            let xid = x.id;
            Box::new(move |values: &[Tensor<E>], gout: &Tensor<E>| {
                let dx = Tensor::new(
                    values[xid].shape().to_vec(),
                    values[xid]
                        .data()
                        .iter()
                        .zip(gout.data())
                        .map(|(&v, &g)| if v > E::ZERO { g } else { E::ZERO })
                        .collect(),
                )
                .expect("relu dx shape");
                vec![Some(dx)]
            }) as BackwardFn<E>
        });
        self.push("relu", value, vec![x], backward)
    }

    /// Elementwise sum of two same-shape tensors (residual connections).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        const OP: &str = "add";
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!("lhs shape {:?} vs rhs shape {:?}", ta.shape(), tb.shape()),
            });
        }
        let value = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect(),
        )?;
        let backward: Option<BackwardFn<E>> = (self.requires_grad(a) || self.requires_grad(b))
            .then(|| {
                Box::new(move |_values: &[Tensor<E>], gout: &Tensor<E>| {
                    vec![Some(gout.clone()), Some(gout.clone())]
                }) as BackwardFn<E>
            });
        self.push(OP, value, vec![a, b], backward)
    }

    /// Max pooling with a square window, valid placement only.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var, AutodiffError> {
        const OP: &str = "max_pool2d";
        if kernel == 0 || stride == 0 {
            return Err(AutodiffError::Parameter(
                "max_pool2d kernel and stride must be >= 1".into(),
            ));
        }
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if h < kernel || w < kernel {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!(
                    "window {kernel}x{kernel} does not fit input shape {:?}",
                    self.value(x).shape()
                ),
            });
        }
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let mut out = vec![E::ZERO; n * c * oh * ow];
        let mut argmax: Vec<u32> = vec![0; out.len()];
        {
            let xv = self.value(x).data();
            let mut idx = 0;
            for s in 0..n {
                for ci in 0..c {
                    let plane = (s * c + ci) * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = plane + oy * stride * w + ox * stride;
                            let mut best_v = xv[best];
                            for ky in 0..kernel {
                                let row = plane + (oy * stride + ky) * w + ox * stride;
                                for kx in 0..kernel {
                                    let v = xv[row + kx];
                                    if v > best_v {
                                        best_v = v;
                                        best = row + kx;
                                    }
                                }
                            }
                            out[idx] = best_v;
                            argmax[idx] = best as u32;
                            idx += 1;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let in_len = n * c * h * w;
        let backward: Option<BackwardFn<E>> = self.requires_grad(x).then(|| {
            let shape = self.value(x).shape().to_vec();
            Box::new(move |_values: &[Tensor<E>], gout: &Tensor<E>| {
                let mut dx = vec![E::ZERO; in_len];
                for (&src, &g) in argmax.iter().zip(gout.data()) {
                    dx[src as usize] += g;
                }
                vec![Some(Tensor::new(shape, dx).expect("max_pool2d dx shape"))]
            }) as BackwardFn<E>
        });
        self.push(OP, value, vec![x], backward)
    }

    /// Mean over the spatial axes: (n,c,h,w) -> (n,c).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        const OP: &str = "global_avg_pool";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        let area = h * w;
        let inv = E::ONE / E::from_f64(area as f64);
        let xv = self.value(x).data();
        let mut out = vec![E::ZERO; n * c];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = E::ZERO;
            for &v in &xv[i * area..(i + 1) * area] {
                acc += v;
            }
            *o = acc * inv;
        }
        let value = Tensor::new(vec![n, c], out)?;
        let backward: Option<BackwardFn<E>> = self.requires_grad(x).then(|| {
            Box::new(move |_values: &[Tensor<E>], gout: &Tensor<E>| {
                let mut dx = vec![E::ZERO; n * c * area];
                for (i, &g) in gout.data().iter().enumerate() {
                    let spread = g * inv;
                    for d in &mut dx[i * area..(i + 1) * area] {
                        *d = spread;
                    }
                }
                vec![Some(Tensor::new(vec![n, c, h, w], dx).expect("gap dx shape"))]
            }) as BackwardFn<E>
        });
        self.push(OP, value, vec![x], backward)
    }

    /// Fully connected layer: x (n,f) * w (o,f)^T + b (o) -> (n,o).
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        const OP: &str = "linear";
        let (n, f) = self.value(x).dims2(OP)?;
        let (o, wf) = self.value(w).dims2(OP)?;
        if wf != f {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!(
                    "input shape {:?} vs weight shape {:?}",
                    self.value(x).shape(),
                    self.value(w).shape()
                ),
            });
        }
        if self.value(b).shape() != [o] {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!(
                    "bias shape {:?} vs weight shape {:?}",
                    self.value(b).shape(),
                    self.value(w).shape()
                ),
            });
        }
        let mut out = matmul_bt(self.value(x).data(), self.value(w).data(), n, f, o);
        {
            let bv = self.value(b).data();
            for row in out.chunks_exact_mut(o) {
                for (v, &bias) in row.iter_mut().zip(bv) {
                    *v += bias;
                }
            }
        }
        let value = Tensor::new(vec![n, o], out)?;
        let track = (self.requires_grad(x), self.requires_grad(w), self.requires_grad(b));
        let backward: Option<BackwardFn<E>> = (track.0 || track.1 || track.2).then(|| {
            let (xid, wid) = (x.id, w.id);
            Box::new(move |values: &[Tensor<E>], gout: &Tensor<E>| {
                let gy = gout.data();
                let dx = track.0.then(|| {
                    Tensor::new(
                        vec![n, f],
                        matmul(gy, values[wid].data(), n, o, f),
                    )
                    .expect("linear dx shape")
                });
                let dw = track.1.then(|| {
                    Tensor::new(
                        vec![o, f],
                        matmul_at(gy, values[xid].data(), n, o, f),
                    )
                    .expect("linear dw shape")
                });
                let db = track.2.then(|| {
                    let mut acc = vec![E::ZERO; o];
                    for row in gy.chunks_exact(o) {
                        for (a, &g) in acc.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    Tensor::new(vec![o], acc).expect("linear db shape")
                });
                vec![dx, dw, db]
            }) as BackwardFn<E>
        });
        self.push(OP, value, vec![x, w, b], backward)
    }

    /// Batch normalization over (n,h,w) per channel.
    ///
    /// Train mode normalizes by batch statistics (biased variance) and
    /// updates `stats` with momentum; the running variance uses the
    /// unbiased estimate. Eval mode normalizes by `stats` and leaves it
    /// untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats<E>,
        mode: Mode,
        momentum: f64,
        eps: f64,
    ) -> Result<Var, AutodiffError> {
        const OP: &str = "batch_norm";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!(
                    "input shape {:?} needs gamma/beta of shape [{c}], got {:?} and {:?}",
                    self.value(x).shape(),
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            });
        }
        if stats.channels() != c {
            return Err(AutodiffError::Shape {
                op: OP,
                detail: format!(
                    "running stats cover {} channels, input shape {:?} has {c}",
                    stats.channels(),
                    self.value(x).shape()
                ),
            });
        }
        let area = h * w;
        let count = n * area;
        if mode == Mode::Train && count < 2 {
            return Err(AutodiffError::Parameter(
                "batch_norm training needs at least 2 values per channel".into(),
            ));
        }

        // per-channel mean/var, accumulated in f64 for stability
        let (mean, invstd) = match mode {
            Mode::Train => {
                let xv = self.value(x).data();
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ci in 0..c {
                    let mut acc = 0.0;
                    for s in 0..n {
                        let base = (s * c + ci) * area;
                        for &v in &xv[base..base + area] {
                            acc += v.to_f64();
                        }
                    }
                    mean[ci] = acc / count as f64;
                    let mut sq = 0.0;
                    for s in 0..n {
                        let base = (s * c + ci) * area;
                        for &v in &xv[base..base + area] {
                            let d = v.to_f64() - mean[ci];
                            sq += d * d;
                        }
                    }
                    var[ci] = sq / count as f64;
                }
                for ci in 0..c {
                    let rm = stats.running_mean.data_mut();
                    rm[ci] = E::from_f64(
                        (1.0 - momentum) * rm[ci].to_f64() + momentum * mean[ci],
                    );
                    let unbiased = var[ci] * count as f64 / (count as f64 - 1.0);
                    let rv = stats.running_var.data_mut();
                    rv[ci] = E::from_f64(
                        (1.0 - momentum) * rv[ci].to_f64() + momentum * unbiased,
                    );
                }
                let invstd: Vec<E> = var
                    .iter()
                    .map(|&v| E::from_f64(1.0 / (v + eps).sqrt()))
                    .collect();
                (mean.iter().map(|&m| E::from_f64(m)).collect::<Vec<E>>(), invstd)
            }
            Mode::Eval => {
                let mean = stats.running_mean.data().to_vec();
                let invstd: Vec<E> = stats
                    .running_var
                    .data()
                    .iter()
                    .map(|&v| E::from_f64(1.0 / (v.to_f64() + eps).sqrt()))
                    .collect();
                (mean, invstd)
            }
        };

        let mut out = vec![E::ZERO; n * c * area];
        {
            let xv = self.value(x).data();
            let gv = self.value(gamma).data();
            let bv = self.value(beta).data();
            for s in 0..n {
                for ci in 0..c {
                    let base = (s * c + ci) * area;
                    let (m, istd, g, b) = (mean[ci], invstd[ci], gv[ci], bv[ci]);
                    for i in base..base + area {
                        out[i] = (xv[i] - m) * istd * g + b;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;

        let track =
            (self.requires_grad(x), self.requires_grad(gamma), self.requires_grad(beta));
        let backward: Option<BackwardFn<E>> = (track.0 || track.1 || track.2).then(|| {
            let (xid, gid) = (x.id, gamma.id);
            let (mean, invstd) = (mean.clone(), invstd.clone());
            Box::new(move |values: &[Tensor<E>], gout: &Tensor<E>| {
                let xv = values[xid].data();
                let gv = values[gid].data();
                let gy = gout.data();
                let count_e = E::from_f64(count as f64);

                // per-channel sums of dy and dy * xhat
                let mut sum_dy = vec![E::ZERO; c];
                let mut sum_dy_xhat = vec![E::ZERO; c];
                for s in 0..n {
                    for ci in 0..c {
                        let base = (s * c + ci) * area;
                        let (m, istd) = (mean[ci], invstd[ci]);
                        let mut acc = E::ZERO;
                        let mut acc_x = E::ZERO;
                        for i in base..base + area {
                            acc += gy[i];
                            acc_x += gy[i] * (xv[i] - m) * istd;
                        }
                        sum_dy[ci] += acc;
                        sum_dy_xhat[ci] += acc_x;
                    }
                }

                let dx = track.0.then(|| {
                    let mut dx = vec![E::ZERO; n * c * area];
                    match mode {
                        Mode::Train => {
                            for s in 0..n {
                                for ci in 0..c {
                                    let base = (s * c + ci) * area;
                                    let (m, istd, g) = (mean[ci], invstd[ci], gv[ci]);
                                    let scale = g * istd / count_e;
                                    for i in base..base + area {
                                        let xhat = (xv[i] - m) * istd;
                                        dx[i] = scale
                                            * (count_e * gy[i]
                                                - sum_dy[ci]
                                                - xhat * sum_dy_xhat[ci]);
                                    }
                                }
                            }
                        }
                        Mode::Eval => {
                            for s in 0..n {
                                for ci in 0..c {
                                    let base = (s * c + ci) * area;
                                    let scale = gv[ci] * invstd[ci];
                                    for i in base..base + area {
                                        dx[i] = gy[i] * scale;
                                    }
                                }
                            }
                        }
                    }
                    Tensor::new(vec![n, c, h, w], dx).expect("batch_norm dx shape")
                });
                let dgamma = track
                    .1
                    .then(|| Tensor::new(vec![c], sum_dy_xhat.clone()).expect("dgamma shape"));
                let dbeta =
                    track.2.then(|| Tensor::new(vec![c], sum_dy.clone()).expect("dbeta shape"));
                vec![dx, dgamma, dbeta]
            }) as BackwardFn<E>
        });
        self.push(OP, value, vec![x, gamma, beta], backward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::graph::ParamId;

    fn t4(n: usize, c: usize, h: usize, w: usize, f: impl FnMut(usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(vec![n, c, h, w], f)
    }

    #[test]
    fn identity_one_by_one_kernel_reproduces_input() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(t4(2, 3, 4, 5, |i| (i as f64 * 0.7).sin()));
        let mut w = Tensor::zeros(vec![3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let w = g.constant(w);
        let y = g.conv2d(x, w, 1, Padding::Same).unwrap();
        assert_eq!(g.value(y).shape(), g.value(x).shape());
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_shapes_same_and_valid() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 7, 5]));
        let w = g.constant(Tensor::zeros(vec![4, 2, 3, 3]));
        let same = g.conv2d(x, w, 2, Padding::Same).unwrap();
        assert_eq!(g.value(same).shape(), [1, 4, 4, 3]);
        let valid = g.conv2d(x, w, 1, Padding::Valid).unwrap();
        assert_eq!(g.value(valid).shape(), [1, 4, 5, 3]);
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![4, 3, 3, 3]));
        let err = g.conv2d(x, w, 1, Padding::Same).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv2d"), "{msg}");
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[4, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn relu_blocks_gradient_below_zero() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(
            Tensor::new(vec![1, 4], vec![-2.0, -0.5, 0.5, 2.0]).unwrap(),
            ParamId(0),
        );
        let y = g.relu(x).unwrap();
        let p = g.global_sum_for_tests(y);
        let grads = g.backward(p).unwrap();
        let dx = grads.for_param(ParamId(0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn max_pool_picks_window_maxima() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(
            Tensor::new(
                vec![1, 1, 4, 4],
                vec![
                    1.0, 2.0, 5.0, 6.0, //
                    3.0, 4.0, 7.0, 8.0, //
                    9.0, 10.0, 13.0, 14.0, //
                    11.0, 12.0, 15.0, 16.0,
                ],
            )
            .unwrap(),
        );
        let y = g.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).shape(), [1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[4.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn global_avg_pool_means_each_plane() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(t4(1, 2, 2, 2, |i| i as f64).cast());
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).shape(), [1, 2]);
        assert_eq!(g.value(y).data(), &[1.5, 5.5]);
    }

    #[test]
    fn linear_matches_hand_computation() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.constant(
            Tensor::new(vec![2, 3], vec![1.0, 0.0, -1.0, 0.5, 0.5, 0.5]).unwrap(),
        );
        let b = g.constant(Tensor::new(vec![2], vec![10.0, -10.0]).unwrap());
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[8.0, -7.0]);
    }

    #[test]
    fn batch_norm_train_standardizes_the_batch() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(t4(4, 2, 3, 3, |i| ((i * 37) % 17) as f64 - 8.0));
        let gamma = g.constant(Tensor::filled(vec![2], 1.0));
        let beta = g.constant(Tensor::zeros(vec![2]));
        let mut stats = BnStats::new(2);
        let y = g
            .batch_norm(x, gamma, beta, &mut stats, Mode::Train, 0.1, 1e-5)
            .unwrap();
        let yv = g.value(y);
        let (n, c, h, w) = yv.dims4("t").unwrap();
        let area = h * w;
        for ci in 0..c {
            let mut mean = 0.0;
            let mut var = 0.0;
            for s in 0..n {
                let base = (s * c + ci) * area;
                for i in base..base + area {
                    mean += yv.data()[i];
                }
            }
            mean /= (n * area) as f64;
            for s in 0..n {
                let base = (s * c + ci) * area;
                for i in base..base + area {
                    let d = yv.data()[i] - mean;
                    var += d * d;
                }
            }
            var /= (n * area) as f64;
            assert!(mean.abs() < 1e-10, "channel {ci} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ci} var {var}");
        }
        // running stats moved toward the batch statistics
        assert!(stats.running_mean.data().iter().any(|&m| m != 0.0));
        assert!(stats.running_var.data().iter().any(|&v| v != 1.0));
    }

    #[test]
    fn batch_norm_eval_uses_running_stats_and_leaves_them_alone() {
        let mut stats = BnStats::new(1);
        stats.running_mean.data_mut()[0] = 2.0;
        stats.running_var.data_mut()[0] = 4.0;
        let snapshot = stats.clone();
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 1, 2], vec![2.0, 4.0]).unwrap());
        let gamma = g.constant(Tensor::filled(vec![1], 3.0));
        let beta = g.constant(Tensor::filled(vec![1], 1.0));
        let y = g
            .batch_norm(x, gamma, beta, &mut stats, Mode::Eval, 0.1, 0.0)
            .unwrap();
        // (2-2)/2*3+1 = 1, (4-2)/2*3+1 = 4
        let yv = g.value(y).data();
        assert!((yv[0] - 1.0).abs() < 1e-12);
        assert!((yv[1] - 4.0).abs() < 1e-12);
        assert_eq!(stats, snapshot);
    }

    #[test]
    fn non_finite_op_output_is_reported() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1], vec![f32::MAX]).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1], vec![f32::MAX]).unwrap());
        let b = g.constant(Tensor::zeros(vec![1]));
        let err = g.linear(x, w, b).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { op: "linear" }));
    }

    #[test]
    fn matmul_variants_agree() {
        let m = 3;
        let k = 4;
        let n = 5;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.31).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.17).cos()).collect();
        let c = matmul(&a, &b, m, k, n);
        // b^T stored as [n x k]
        let mut bt = vec![0.0; n * k];
        for r in 0..k {
            for cc in 0..n {
                bt[cc * k + r] = b[r * n + cc];
            }
        }
        let c2 = matmul_bt(&a, &bt, m, k, n);
        // a^T stored as [k x m]
        let mut at = vec![0.0; k * m];
        for r in 0..m {
            for cc in 0..k {
                at[cc * m + r] = a[r * k + cc];
            }
        }
        let c3 = matmul_at(&at, &b, k, m, n);
        for i in 0..m * n {
            assert!((c[i] - c2[i]).abs() < 1e-12);
            assert!((c[i] - c3[i]).abs() < 1e-12);
        }
    }
}

#[cfg(test)]
impl<E: Element> Graph<E> {
    /// Sum all elements to a scalar; test-only scaffolding for backward.
    pub(crate) fn global_sum_for_tests(&mut self, x: Var) -> Var {
        let total = self
            .value(x)
            .data()
            .iter()
            .fold(E::ZERO, |acc, &v| acc + v);
        let shape = self.value(x).shape().to_vec();
        let backward: Option<BackwardFn<E>> = Some(Box::new(move |_vals, gout| {
            let g = gout.item();
            vec![Some(Tensor::filled(shape, g))]
        }));
        self.push("sum", Tensor::scalar(total), vec![x], backward)
            .expect("sum is finite")
    }
}
