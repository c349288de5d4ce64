use ndarray::{Array3, Axis, Ix2};

use super::{BnMode, BnState, Graph, Op, Scalar, Var};
use crate::error::{invalid, Result};

pub(crate) const PAIR_EPS: f64 = 1e-8;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

fn slice<T>(a: &Array3<T>) -> &[T] {
    a.as_slice().expect("graph tensors are contiguous")
}

fn slice_mut<T>(a: &mut Array3<T>) -> &mut [T] {
    a.as_slice_mut().expect("graph tensors are contiguous")
}

fn as_matrix<T: Scalar>(a: &Array3<T>) -> ndarray::ArrayView2<'_, T> {
    let (b, t, c) = a.dim();
    a.view().into_shape_with_order((b * t, c)).expect("contiguous").into_dimensionality::<Ix2>().unwrap()
}

fn to_tensor<T: Scalar>(m: ndarray::Array2<T>, b: usize, t: usize) -> Array3<T> {
    let c = m.ncols();
    let m = if m.is_standard_layout() { m } else { m.as_standard_layout().into_owned() };
    m.into_shape_with_order((b, t, c)).expect("row count is b*t")
}

/// `y[t] += sum_j k[j] x[t*stride + j - pad]` per channel, zero outside.
fn depthwise_forward<T: Scalar>(x: &[T], k: &[T], y: &mut [T], dims: (usize, usize, usize), kw: usize, stride: usize, t_out: usize) {
    let (b, t, c) = dims;
    let pad = (kw - 1) / 2;
    for bi in 0..b {
        for to in 0..t_out {
            let yrow = &mut y[(bi * t_out + to) * c..][..c];
            for j in 0..kw {
                let Some(ti) = (to * stride + j).checked_sub(pad).filter(|ti| *ti < t) else { continue };
                let xrow = &x[(bi * t + ti) * c..][..c];
                let krow = &k[j * c..][..c];
                for ((yv, xv), kv) in yrow.iter_mut().zip(xrow).zip(krow) {
                    *yv += *kv * *xv;
                }
            }
        }
    }
}

/// Adjoint of [`depthwise_forward`]: given `gy`, accumulates into `gx` and `gk`.
#[allow(clippy::too_many_arguments)]
fn depthwise_adjoint<T: Scalar>(
    x: &[T],
    k: &[T],
    gy: &[T],
    gx: Option<&mut [T]>,
    gk: Option<&mut [T]>,
    dims: (usize, usize, usize),
    kw: usize,
    stride: usize,
    t_out: usize,
) {
    let (b, t, c) = dims;
    let pad = (kw - 1) / 2;
    if let Some(gx) = gx {
        for bi in 0..b {
            for to in 0..t_out {
                let grow = &gy[(bi * t_out + to) * c..][..c];
                for j in 0..kw {
                    let Some(ti) = (to * stride + j).checked_sub(pad).filter(|ti| *ti < t) else { continue };
                    let xrow = &mut gx[(bi * t + ti) * c..][..c];
                    let krow = &k[j * c..][..c];
                    for ((xv, gv), kv) in xrow.iter_mut().zip(grow).zip(krow) {
                        *xv += *kv * *gv;
                    }
                }
            }
        }
    }
    if let Some(gk) = gk {
        for bi in 0..b {
            for to in 0..t_out {
                let grow = &gy[(bi * t_out + to) * c..][..c];
                for j in 0..kw {
                    let Some(ti) = (to * stride + j).checked_sub(pad).filter(|ti| *ti < t) else { continue };
                    let xrow = &x[(bi * t + ti) * c..][..c];
                    let krow = &mut gk[j * c..][..c];
                    for ((kv, gv), xv) in krow.iter_mut().zip(grow).zip(xrow) {
                        *kv += *xv * *gv;
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<'_, T> {
    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires_grad(*v))
    }

    fn record(&mut self, value: Array3<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = self.any_grad(inputs);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return invalid(format!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let y = self.value(x).mapv(f);
        self.record(y, op, &[x])
    }

    /// Per-channel temporal convolution with zero same-padding. The kernel
    /// has shape `1 x k x C` with `k` odd; `stride` is 1 or 2.
    pub fn depthwise_conv(&mut self, x: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (b, t, c) = self.shape(x);
        let (_, kw, kc) = self.shape(kernel);
        if kc != c || kw % 2 == 0 {
            return invalid(format!("depthwise kernel {kw}x{kc} does not fit {c} channels (width must be odd)"));
        }
        if !(stride == 1 || stride == 2) || t % stride != 0 {
            return invalid(format!("stride {stride} does not divide {t} frames"));
        }
        let t_out = t / stride;
        let mut y = Array3::zeros((b, t_out, c));
        depthwise_forward(slice(self.value(x)), slice(self.value(kernel)), slice_mut(&mut y), (b, t, c), kw, stride, t_out);
        Ok(self.record(y, Op::DepthwiseConv { x, kernel, stride }, &[x, kernel]))
    }

    /// Per-channel transposed convolution doubling the time axis: the exact
    /// adjoint of [`Graph::depthwise_conv`] with stride 2.
    pub fn depthwise_conv_up(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (b, t, c) = self.shape(x);
        let (_, kw, kc) = self.shape(kernel);
        if kc != c || kw % 2 == 0 {
            return invalid(format!("depthwise kernel {kw}x{kc} does not fit {c} channels (width must be odd)"));
        }
        if t == 0 {
            return invalid("transposed convolution of an empty sequence");
        }
        let mut y = Array3::zeros((b, 2 * t, c));
        depthwise_adjoint(&[], slice(self.value(kernel)), slice(self.value(x)), Some(slice_mut(&mut y)), None, (b, 2 * t, c), kw, 2, t);
        Ok(self.record(y, Op::DepthwiseConvUp { x, kernel }, &[x, kernel]))
    }

    /// Per-time-step channel projection by a `1 x C_in x C_out` weight.
    pub fn project(&mut self, x: Var, w: Var) -> Result<Var> {
        let (b, t, c) = self.shape(x);
        let (_, ci, _) = self.shape(w);
        if ci != c {
            return invalid(format!("projection expects {ci} input channels, got {c}"));
        }
        let wm = self.value(w).index_axis(Axis(0), 0);
        let y = to_tensor(as_matrix(self.value(x)).dot(&wm), b, t);
        Ok(self.record(y, Op::Project { x, w }, &[x, w]))
    }

    /// Depthwise-separable convolution: [`Graph::depthwise_conv`] followed
    /// by [`Graph::project`], with no nonlinearity in between.
    pub fn sep_conv1d(&mut self, x: Var, depthwise: Var, pointwise: Var, stride: usize) -> Result<Var> {
        let h = self.depthwise_conv(x, depthwise, stride)?;
        self.project(h, pointwise)
    }

    /// Separable transposed convolution doubling the time axis.
    pub fn transposed_conv1d(&mut self, x: Var, depthwise: Var, pointwise: Var) -> Result<Var> {
        let h = self.depthwise_conv_up(x, depthwise)?;
        self.project(h, pointwise)
    }

    /// Adds a `1 x 1 x C` bias to every time step.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, _, c) = self.shape(x);
        if self.shape(bias) != (1, 1, c) {
            return invalid(format!("bias {:?} does not fit {c} channels", self.shape(bias)));
        }
        let y = self.value(x) + self.value(bias);
        Ok(self.record(y, Op::AddBias { x, bias }, &[x, bias]))
    }

    /// Batch normalization over batch and time per channel. Train mode uses
    /// the biased statistics of `x` and folds them into `state` with
    /// momentum 0.9 (unbiased variance); eval mode uses `state`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BnState<T>, mode: BnMode) -> Result<Var> {
        let (b, t, c) = self.shape(x);
        if state.channels() != c || self.shape(gamma) != (1, 1, c) || self.shape(beta) != (1, 1, c) {
            return invalid(format!("batch norm over {c} channels has mismatched parameters or state"));
        }
        let n = b * t;
        if n == 0 {
            return invalid("batch norm of an empty tensor");
        }
        let xv = self.value(x);
        let eps = T::of(BN_EPS);
        let (mean, var) = match mode {
            BnMode::Train => {
                let nt = T::of(n as f64);
                let mut mean = vec![T::zero(); c];
                for row in slice(xv).chunks_exact(c) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += *v);
                }
                mean.iter_mut().for_each(|m| *m = *m / nt);
                let mut var = vec![T::zero(); c];
                for row in slice(xv).chunks_exact(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = *v - *m;
                        *s += d * d;
                    }
                }
                let mom = T::of(BN_MOMENTUM);
                let unbias = if n > 1 { nt / T::of((n - 1) as f64) } else { T::one() };
                for ch in 0..c {
                    let biased = var[ch] / nt;
                    state.mean[ch] = mom * state.mean[ch] + (T::one() - mom) * mean[ch];
                    state.var[ch] = mom * state.var[ch] + (T::one() - mom) * biased * unbias;
                    var[ch] = biased;
                }
                (mean, var)
            }
            BnMode::Eval => (state.mean.clone(), state.var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for row in slice_mut(&mut xhat).chunks_exact_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - *m) * *s;
            }
        }
        let g = slice(self.value(gamma));
        let be = slice(self.value(beta));
        let mut y = xhat.clone();
        for row in slice_mut(&mut y).chunks_exact_mut(c) {
            for ((v, gv), bv) in row.iter_mut().zip(g).zip(be) {
                *v = *v * *gv + *bv;
            }
        }
        let train = mode == BnMode::Train;
        Ok(self.record(y, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, &[x, gamma, beta]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, |v| v.abs(), Op::Abs(x))
    }

    /// `ln(1 + x)`; inputs must exceed -1.
    pub fn log1p(&mut self, x: Var) -> Result<Var> {
        if self.value(x).iter().any(|v| *v <= -T::one()) {
            return invalid("log1p of a value not greater than -1");
        }
        Ok(self.map(x, |v| v.ln_1p(), Op::Log1p(x)))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.map(x, move |v| v * s, Op::Scale(x, s))
    }

    /// Mean of adjacent time pairs.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (b, t, c) = self.shape(x);
        if t % 2 != 0 {
            return invalid(format!("average pooling needs an even frame count, got {t}"));
        }
        let xv = slice(self.value(x));
        let half = T::of(0.5);
        let mut y = Array3::zeros((b, t / 2, c));
        let ys = slice_mut(&mut y);
        for (r, yrow) in ys.chunks_exact_mut(c).enumerate() {
            let (bi, to) = (r / (t / 2), r % (t / 2));
            let a = &xv[(bi * t + 2 * to) * c..][..2 * c];
            for (ch, yv) in yrow.iter_mut().enumerate() {
                *yv = (a[ch] + a[c + ch]) * half;
            }
        }
        Ok(self.record(y, Op::AvgPool2(x), &[x]))
    }

    /// Repeats every time step twice.
    pub fn repeat2(&mut self, x: Var) -> Var {
        let (b, t, c) = self.shape(x);
        let xv = slice(self.value(x));
        let mut y = Array3::zeros((b, 2 * t, c));
        for (r, yrow) in slice_mut(&mut y).chunks_exact_mut(c).enumerate() {
            yrow.copy_from_slice(&xv[(r / 2) * c..][..c]);
        }
        self.record(y, Op::Repeat2(x), &[x])
    }

    /// Channels of `a` followed by channels of `b`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ta, ca) = self.shape(a);
        let (bb, tb, cb) = self.shape(b);
        if (ba, ta) != (bb, tb) {
            return invalid(format!("cannot concatenate {ba}x{ta} and {bb}x{tb} frames"));
        }
        let mut y = Array3::zeros((ba, ta, ca + cb));
        let (av, bv) = (slice(self.value(a)), slice(self.value(b)));
        for (r, yrow) in slice_mut(&mut y).chunks_exact_mut(ca + cb).enumerate() {
            yrow[..ca].copy_from_slice(&av[r * ca..][..ca]);
            yrow[ca..].copy_from_slice(&bv[r * cb..][..cb]);
        }
        Ok(self.record(y, Op::Concat { a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a) + self.value(b);
        Ok(self.record(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.value(a) - self.value(b);
        Ok(self.record(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a) * self.value(b);
        Ok(self.record(y, Op::Mul(a, b), &[a, b]))
    }

    /// Treats channel `f` and `F + f` of a `2F`-channel tensor as a 2-vector
    /// and scales it to unit length. Pairs shorter than 1e-8 become `(1, 0)`
    /// and pass no gradient.
    pub fn pair_normalize(&mut self, x: Var) -> Result<Var> {
        let (b, t, c2) = self.shape(x);
        if c2 % 2 != 0 {
            return invalid(format!("pair normalization needs an even channel count, got {c2}"));
        }
        let f = c2 / 2;
        let eps = T::of(PAIR_EPS);
        let mut y = self.value(x).clone();
        let mut norms = Vec::with_capacity(b * t * f);
        for row in slice_mut(&mut y).chunks_exact_mut(c2) {
            let (re, im) = row.split_at_mut(f);
            for (r, i) in re.iter_mut().zip(im.iter_mut()) {
                let n = r.hypot(*i);
                norms.push(n);
                if n < eps {
                    *r = T::one();
                    *i = T::zero();
                } else {
                    *r = *r / n;
                    *i = *i / n;
                }
            }
        }
        Ok(self.record(y, Op::PairNormalize { x, norms }, &[x]))
    }

    /// Per-pair dot product of two `2F`-channel tensors, giving `F` channels.
    pub fn pair_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "pair dot")?;
        let (bs, t, c2) = self.shape(a);
        if c2 % 2 != 0 {
            return invalid(format!("pair dot needs an even channel count, got {c2}"));
        }
        let f = c2 / 2;
        let mut y = Array3::zeros((bs, t, f));
        let (av, bv) = (slice(self.value(a)), slice(self.value(b)));
        for (r, yrow) in slice_mut(&mut y).chunks_exact_mut(f).enumerate() {
            let (ar, br) = (&av[r * c2..][..c2], &bv[r * c2..][..c2]);
            for (k, yv) in yrow.iter_mut().enumerate() {
                *yv = ar[k] * br[k] + ar[f + k] * br[f + k];
            }
        }
        Ok(self.record(y, Op::PairDot(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.record(Array3::from_elem((1, 1, 1), s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / T::of(v.len().max(1) as f64);
        self.record(Array3::from_elem((1, 1, 1), s), Op::Mean(x), &[x])
    }

    pub(super) fn backprop(&self, i: usize, g: &Array3<T>, grads: &mut [Option<Array3<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::DepthwiseConv { x, kernel, stride } => {
                let (x, kernel, stride) = (*x, *kernel, *stride);
                let dims = self.shape(x);
                let kw = self.shape(kernel).1;
                let mut gx = self.requires_grad(x).then(|| Array3::zeros(dims));
                let mut gk = self.requires_grad(kernel).then(|| Array3::zeros(self.shape(kernel)));
                depthwise_adjoint(
                    slice(self.value(x)),
                    slice(self.value(kernel)),
                    slice(g),
                    gx.as_mut().map(slice_mut),
                    gk.as_mut().map(slice_mut),
                    dims,
                    kw,
                    stride,
                    dims.1 / stride,
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, x, gx);
                }
                if let Some(gk) = gk {
                    self.accumulate(grads, kernel, gk);
                }
            }
            Op::DepthwiseConvUp { x, kernel } => {
                let (x, kernel) = (*x, *kernel);
                let (b, t, c) = self.shape(x);
                let kw = self.shape(kernel).1;
                let k = slice(self.value(kernel));
                if self.requires_grad(x) {
                    let mut gx = Array3::zeros((b, t, c));
                    depthwise_forward(slice(g), k, slice_mut(&mut gx), (b, 2 * t, c), kw, 2, t);
                    self.accumulate(grads, x, gx);
                }
                if self.requires_grad(kernel) {
                    let mut gk = Array3::zeros(self.shape(kernel));
                    // kernel gradient of the adjoint equals that of the forward
                    // conv with input and output gradient swapped
                    depthwise_adjoint(slice(g), k, slice(self.value(x)), None, Some(slice_mut(&mut gk)), (b, 2 * t, c), kw, 2, t);
                    self.accumulate(grads, kernel, gk);
                }
            }
            Op::Project { x, w } => {
                let (x, w) = (*x, *w);
                let (b, t, _) = self.shape(x);
                let gm = as_matrix(g);
                if self.requires_grad(x) {
                    let wm = self.value(w).index_axis(Axis(0), 0);
                    self.accumulate(grads, x, to_tensor(gm.dot(&wm.t()), b, t));
                }
                if self.requires_grad(w) {
                    let gw = as_matrix(self.value(x)).t().dot(&gm);
                    self.accumulate(grads, w, gw.insert_axis(Axis(0)).as_standard_layout().into_owned());
                }
            }
            Op::AddBias { x, bias } => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*bias) {
                    let c = g.dim().2;
                    let gb = as_matrix(g).sum_axis(Axis(0)).into_shape_with_order((1, 1, c)).unwrap();
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let c = g.dim().2;
                let n = g.len() / c.max(1);
                let gs = slice(g);
                let xh = slice(xhat);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (grow, xrow) in gs.chunks_exact(c).zip(xh.chunks_exact(c)) {
                    for ch in 0..c {
                        sum_g[ch] += grow[ch];
                        sum_gx[ch] += grow[ch] * xrow[ch];
                    }
                }
                if self.requires_grad(*x) {
                    let gamma_v = slice(self.value(*gamma));
                    let mut gx = Array3::zeros(g.dim());
                    let nt = T::of(n as f64);
                    for ((out, grow), xrow) in slice_mut(&mut gx).chunks_exact_mut(c).zip(gs.chunks_exact(c)).zip(xh.chunks_exact(c)) {
                        for ch in 0..c {
                            let s = inv_std[ch] * gamma_v[ch];
                            out[ch] = if *train {
                                s * (grow[ch] - sum_g[ch] / nt - xrow[ch] * sum_gx[ch] / nt)
                            } else {
                                s * grow[ch]
                            };
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                let to3 = |v: Vec<T>| Array3::from_shape_vec((1, 1, c), v).unwrap();
                self.accumulate(grads, *gamma, to3(sum_gx));
                self.accumulate(grads, *beta, to3(sum_g));
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                gx.zip_mut_with(self.value(*x), |gv, xv| {
                    if *xv <= T::zero() {
                        *gv = T::zero();
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.as_ref().expect("computed node");
                let mut gx = g.clone();
                gx.zip_mut_with(y, |gv, yv| *gv = *gv * *yv * (T::one() - *yv));
                self.accumulate(grads, *x, gx);
            }
            Op::Abs(x) => {
                let mut gx = g.clone();
                gx.zip_mut_with(self.value(*x), |gv, xv| *gv = if *xv == T::zero() { T::zero() } else { *gv * xv.signum() });
                self.accumulate(grads, *x, gx);
            }
            Op::Log1p(x) => {
                let mut gx = g.clone();
                gx.zip_mut_with(self.value(*x), |gv, xv| *gv = *gv / (T::one() + *xv));
                self.accumulate(grads, *x, gx);
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g * *s),
            Op::AvgPool2(x) => {
                let (b, t, c) = self.shape(*x);
                let half = T::of(0.5);
                let mut gx = Array3::zeros((b, t, c));
                for (r, grow) in slice_mut(&mut gx).chunks_exact_mut(c).enumerate() {
                    let src = &slice(g)[(r / 2) * c..][..c];
                    grow.iter_mut().zip(src).for_each(|(o, s)| *o = *s * half);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Repeat2(x) => {
                let (b, t, c) = self.shape(*x);
                let gs = slice(g);
                let mut gx = Array3::zeros((b, t, c));
                for (r, grow) in slice_mut(&mut gx).chunks_exact_mut(c).enumerate() {
                    let pair = &gs[2 * r * c..][..2 * c];
                    for ch in 0..c {
                        grow[ch] = pair[ch] + pair[c + ch];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat { a, b } => {
                let (ca, cb) = (self.shape(*a).2, self.shape(*b).2);
                let gs = slice(g);
                for (v, off, w) in [(*a, 0, ca), (*b, ca, cb)] {
                    if !self.requires_grad(v) {
                        continue;
                    }
                    let mut part = Array3::zeros(self.shape(v));
                    for (r, row) in slice_mut(&mut part).chunks_exact_mut(w.max(1)).enumerate() {
                        row.copy_from_slice(&gs[r * (ca + cb) + off..][..w]);
                    }
                    self.accumulate(grads, v, part);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::PairNormalize { x, norms } => {
                let y = self.nodes[i].value.as_ref().expect("computed node");
                let c2 = g.dim().2;
                let f = c2 / 2;
                let eps = T::of(PAIR_EPS);
                let mut gx = Array3::zeros(g.dim());
                let rows = slice_mut(&mut gx).chunks_exact_mut(c2).zip(slice(g).chunks_exact(c2)).zip(slice(y).chunks_exact(c2));
                for (r, ((out, grow), yrow)) in rows.enumerate() {
                    for k in 0..f {
                        let n = norms[r * f + k];
                        if n < eps {
                            continue;
                        }
                        let (yr, yi) = (yrow[k], yrow[f + k]);
                        let proj = yr * grow[k] + yi * grow[f + k];
                        out[k] = (grow[k] - yr * proj) / n;
                        out[f + k] = (grow[f + k] - yi * proj) / n;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::PairDot(a, b) => {
                let f = g.dim().2;
                let gs = slice(g);
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if !self.requires_grad(v) {
                        continue;
                    }
                    let ov = slice(self.value(other));
                    let mut gv = Array3::zeros(self.shape(v));
                    for (r, row) in slice_mut(&mut gv).chunks_exact_mut(2 * f).enumerate() {
                        let orow = &ov[r * 2 * f..][..2 * f];
                        for k in 0..f {
                            let gk = gs[r * f + k];
                            row[k] = gk * orow[k];
                            row[f + k] = gk * orow[f + k];
                        }
                    }
                    self.accumulate(grads, v, gv);
                }
            }
            Op::Sum(x) => {
                let s = g[[0, 0, 0]];
                self.accumulate(grads, *x, Array3::from_elem(self.shape(*x), s));
            }
            Op::Mean(x) => {
                let shape = self.shape(*x);
                let n = T::of((shape.0 * shape.1 * shape.2).max(1) as f64);
                self.accumulate(grads, *x, Array3::from_elem(shape, g[[0, 0, 0]] / n));
            }
        }
    }
}
