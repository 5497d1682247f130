//! Layer kernels. Batch-level functions validate shapes and loop over
//! per-sample kernels; the network calls the kernels directly.

use super::{CnnError, Result, Scalar, Tensor};

/// Geometry of a valid, stride-1 convolution over one sample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn oh(&self) -> usize {
        self.h - self.k + 1
    }
    pub fn ow(&self) -> usize {
        self.w - self.k + 1
    }
    pub fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }
    pub fn out_len(&self) -> usize {
        self.o * self.oh() * self.ow()
    }
}

/// Cross-correlation plus bias for one sample.
pub(crate) fn conv_kernel<T: Scalar>(d: ConvDims, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let (oh, ow) = (d.oh(), d.ow());
    for o in 0..d.o {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..d.c {
            let src = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let wv = w[((o * d.c + c) * d.k + ky) * d.k + kx];
                    for oy in 0..oh {
                        let xs = &src[(oy + ky) * d.w + kx..][..ow];
                        let os = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ov, &xv) in os.iter_mut().zip(xs) {
                            *ov += wv * xv;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates parameter gradients (and input gradients when `gx` is given)
/// for one sample.
pub(crate) fn conv_back_kernel<T: Scalar>(
    d: ConvDims,
    x: &[T],
    w: &[T],
    g: &[T],
    gw: &mut [T],
    gb: &mut [T],
    mut gx: Option<&mut [T]>,
) {
    let (oh, ow) = (d.oh(), d.ow());
    for o in 0..d.o {
        let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += gplane.iter().copied().sum::<T>();
        for c in 0..d.c {
            let src = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let wi = ((o * d.c + c) * d.k + ky) * d.k + kx;
                    let mut acc = T::zero();
                    for oy in 0..oh {
                        let xs = &src[(oy + ky) * d.w + kx..][..ow];
                        let gs = &gplane[oy * ow..(oy + 1) * ow];
                        acc += xs.iter().zip(gs).map(|(&a, &b)| a * b).sum::<T>();
                    }
                    gw[wi] += acc;
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = w[wi];
                        let dst = &mut gx[c * d.h * d.w..(c + 1) * d.h * d.w];
                        for oy in 0..oh {
                            let gs = &gplane[oy * ow..(oy + 1) * ow];
                            let ds = &mut dst[(oy + ky) * d.w + kx..][..ow];
                            for (dv, &gv) in ds.iter_mut().zip(gs) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max pooling for one sample. `idx` receives, per output,
/// the flat input index of the maximum (first in row-major order on ties).
pub(crate) fn pool_kernel<T: Scalar>(c: usize, h: usize, w: usize, x: &[T], out: &mut [T], idx: &mut [u32]) {
    let (ph, pw) = (h / 2, w / 2);
    for ch in 0..c {
        let base = ch * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let i0 = base + 2 * py * w + 2 * px;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                let o = (ch * ph + py) * pw + px;
                out[o] = x[best];
                idx[o] = best as u32;
            }
        }
    }
}

/// `y = x·W + b` for one sample; `W` is `d_in × d_out` row-major.
pub(crate) fn fc_kernel<T: Scalar>(x: &[T], w: &[T], b: &[T], y: &mut [T]) {
    let m = b.len();
    y.copy_from_slice(b);
    for (i, &xv) in x.iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        for (yv, &wv) in y.iter_mut().zip(&w[i * m..(i + 1) * m]) {
            *yv += xv * wv;
        }
    }
}

/// Parameter gradients for one sample; returns `dL/dx` when asked.
pub(crate) fn fc_back_kernel<T: Scalar>(x: &[T], w: &[T], g: &[T], gw: &mut [T], gb: &mut [T], gx: Option<&mut [T]>) {
    let m = g.len();
    for (b, &gv) in gb.iter_mut().zip(g) {
        *b += gv;
    }
    for (i, &xv) in x.iter().enumerate() {
        for (gwv, &gv) in gw[i * m..(i + 1) * m].iter_mut().zip(g) {
            *gwv += xv * gv;
        }
    }
    if let Some(gx) = gx {
        for (i, gxv) in gx.iter_mut().enumerate() {
            *gxv = w[i * m..(i + 1) * m].iter().zip(g).map(|(&a, &b)| a * b).sum();
        }
    }
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, ConvDims)> {
    x.expect_rank(4, "conv input")?;
    w.expect_rank(4, "conv weight")?;
    let (xs, ws) = (x.shape(), w.shape());
    if ws[2] != ws[3] || ws[1] != xs[1] || ws[2] > xs[2] || ws[3] > xs[3] || b.len() != ws[0] {
        return Err(CnnError::Shape(format!(
            "conv input {:?} incompatible with weight {:?} and bias {:?}",
            xs,
            ws,
            b.shape()
        )));
    }
    Ok((xs[0], ConvDims { c: xs[1], h: xs[2], w: xs[3], o: ws[0], k: ws[2] }))
}

/// Valid, stride-1 cross-correlation: `x (N,C,H,W)`, `w (O,C,k,k)`, `b (O)`.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = conv_dims(x, w, b)?;
    let mut out = Tensor::zeros(&[n, d.o, d.oh(), d.ow()]);
    for s in 0..n {
        conv_kernel(
            d,
            &x.data()[s * d.in_len()..(s + 1) * d.in_len()],
            w.data(),
            b.data(),
            &mut out.data_mut()[s * d.out_len()..(s + 1) * d.out_len()],
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

pub fn conv_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    let bias = Tensor::zeros(&[w.shape().first().copied().unwrap_or(0)]);
    let (n, d) = conv_dims(x, w, &bias)?;
    if grad_out.shape() != [n, d.o, d.oh(), d.ow()] {
        return Err(CnnError::Shape(format!(
            "conv grad_out {:?}, expected {:?}",
            grad_out.shape(),
            [n, d.o, d.oh(), d.ow()]
        )));
    }
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_w = Tensor::zeros(w.shape());
    let mut grad_b = Tensor::zeros(&[d.o]);
    for s in 0..n {
        conv_back_kernel(
            d,
            &x.data()[s * d.in_len()..(s + 1) * d.in_len()],
            w.data(),
            &grad_out.data()[s * d.out_len()..(s + 1) * d.out_len()],
            grad_w.data_mut(),
            grad_b.data_mut(),
            Some(&mut grad_x.data_mut()[s * d.in_len()..(s + 1) * d.in_len()]),
        );
    }
    Ok(ConvGrads { grad_x, grad_w, grad_b })
}

/// 2×2 stride-2 max pooling over `(N,C,H,W)`; indices are flat into `x`.
pub fn pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    x.expect_rank(4, "pool input")?;
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CnnError::Shape(format!("2x2 pooling needs even spatial dims, got {h}x{w}")));
    }
    let (il, ol) = (c * h * w, c * (h / 2) * (w / 2));
    let mut out = Tensor::zeros(&[n, c, h / 2, w / 2]);
    let mut idx = vec![0u32; n * ol];
    for s in 0..n {
        pool_kernel(
            c,
            h,
            w,
            &x.data()[s * il..(s + 1) * il],
            &mut out.data_mut()[s * ol..(s + 1) * ol],
            &mut idx[s * ol..(s + 1) * ol],
        );
    }
    let flat = idx.iter().enumerate().map(|(o, &i)| (o / ol) * il + i as usize).collect();
    Ok((out, flat))
}

/// Routes each output gradient to its stored argmax.
pub fn pool_backward<T: Scalar>(grad_out: &Tensor<T>, indices: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    if indices.len() != grad_out.len() {
        return Err(CnnError::Shape(format!(
            "{} pooling indices for {} gradients",
            indices.len(),
            grad_out.len()
        )));
    }
    let mut gx = Tensor::zeros(input_shape);
    for (&i, &g) in indices.iter().zip(grad_out.data()) {
        if i >= gx.len() {
            return Err(CnnError::Shape(format!("pool index {i} outside input {input_shape:?}")));
        }
        gx.data_mut()[i] += g;
    }
    Ok(gx)
}

fn fc_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    x.expect_rank(2, "fc input")?;
    w.expect_rank(2, "fc weight")?;
    if x.shape()[1] != w.shape()[0] {
        return Err(CnnError::Shape(format!("fc input {:?} vs weight {:?}", x.shape(), w.shape())));
    }
    Ok((x.shape()[0], w.shape()[0], w.shape()[1]))
}

/// `y = x·W + b` with `x (N,D)`, `W (D,M)`, `b (M)`.
pub fn fc_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, m) = fc_dims(x, w)?;
    if b.len() != m {
        return Err(CnnError::Shape(format!("fc bias {:?} for {m} outputs", b.shape())));
    }
    let mut y = Tensor::zeros(&[n, m]);
    for s in 0..n {
        fc_kernel(&x.data()[s * d..(s + 1) * d], w.data(), b.data(), &mut y.data_mut()[s * m..(s + 1) * m]);
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

pub fn fc_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, grad_out: &Tensor<T>) -> Result<FcGrads<T>> {
    let (n, d, m) = fc_dims(x, w)?;
    if grad_out.shape() != [n, m] {
        return Err(CnnError::Shape(format!("fc grad_out {:?}, expected {:?}", grad_out.shape(), [n, m])));
    }
    let mut grad_x = Tensor::zeros(&[n, d]);
    let mut grad_w = Tensor::zeros(&[d, m]);
    let mut grad_b = Tensor::zeros(&[m]);
    for s in 0..n {
        fc_back_kernel(
            &x.data()[s * d..(s + 1) * d],
            w.data(),
            &grad_out.data()[s * m..(s + 1) * m],
            grad_w.data_mut(),
            grad_b.data_mut(),
            Some(&mut grad_x.data_mut()[s * d..(s + 1) * d]),
        );
    }
    Ok(FcGrads { grad_x, grad_w, grad_b })
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor { shape: x.shape().to_vec(), data: x.data().iter().map(|&v| v.max(T::zero())).collect() }
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(CnnError::Shape(format!("relu input {:?} vs grad {:?}", x.shape(), grad_out.shape())));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Row-wise softmax with the row maximum subtracted first.
pub(crate) fn softmax_row<T: Scalar>(z: &[T], p: &mut [T]) {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (pv, &zv) in p.iter_mut().zip(z) {
        *pv = (zv - m).exp();
        s += *pv;
    }
    for pv in p.iter_mut() {
        *pv = *pv / s;
    }
}

pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_rank(2, "logits")?;
    let k = logits.shape()[1];
    let mut p = Tensor::zeros(logits.shape());
    for (z, pr) in logits.data().chunks(k).zip(p.data_mut().chunks_mut(k)) {
        softmax_row(z, pr);
    }
    Ok(p)
}

/// Per-sample loss `−log p[label]` and its gradient, with the gradient
/// divided by `scale` (the batch size when summing over a batch).
pub(crate) fn xent_row<T: Scalar>(z: &[T], label: usize, scale: T, grad: &mut [T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = z.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
    for (i, (g, &zv)) in grad.iter_mut().zip(z).enumerate() {
        let p = (zv - lse).exp();
        let y = if i == label { T::one() } else { T::zero() };
        *g = (p - y) / scale;
    }
    lse - z[label]
}

/// Mean softmax cross-entropy over the batch and `(p − onehot)/N`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    logits.expect_rank(2, "logits")?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(CnnError::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(CnnError::Label(bad, k));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let scale = T::of(n as f64);
    let mut loss = T::zero();
    for (s, &l) in labels.iter().enumerate() {
        loss += xent_row(&logits.data()[s * k..(s + 1) * k], l, scale, &mut grad.data_mut()[s * k..(s + 1) * k]);
    }
    Ok((loss / scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, v).unwrap()
    }

    fn rand_t(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        t(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct quadruple loop.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        let (oh, ow) = (h - k + 1, wd - k + 1);
        let mut out = vec![];
        for s in 0..n {
            for f in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b.data()[f];
                        for ch in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    acc += w.data()[((f * c + ch) * k + ky) * k + kx]
                                        * x.data()[((s * c + ch) * h + y + ky) * wd + xx + kx];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_examples() {
        let x = t(&[1, 1, 3, 3], vec![1.0; 9]);
        let w = t(&[1, 1, 2, 2], vec![1.0; 4]);
        let y = conv_forward(&x, &w, &t(&[1], vec![0.0])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
        let x = rand_t(&mut crate::seed::rng(1, &[]), &[2, 1, 4, 5]);
        let id = conv_forward(&x, &t(&[1, 1, 1, 1], vec![1.0]), &t(&[1], vec![0.0])).unwrap();
        assert_eq!(id.data(), x.data());
        let bad = conv_forward(&x, &t(&[1, 2, 1, 1], vec![1.0; 2]), &t(&[1], vec![0.0]));
        assert!(matches!(bad, Err(CnnError::Shape(_))));
    }

    #[test]
    fn conv_matches_oracle_on_random_shapes() {
        let mut rng = crate::seed::rng(7, &[]);
        for _ in 0..100 {
            let (n, c, o, k) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
            let (h, w) = (rng.gen_range(k..k + 6), rng.gen_range(k..k + 6));
            let x = rand_t(&mut rng, &[n, c, h, w]);
            let wt = rand_t(&mut rng, &[o, c, k, k]);
            let b = rand_t(&mut rng, &[o]);
            let y = conv_forward(&x, &wt, &b).unwrap();
            for (a, e) in y.data().iter().zip(conv_oracle(&x, &wt, &b)) {
                assert!((a - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn conv_backward_basics() {
        let mut rng = crate::seed::rng(8, &[]);
        let x = rand_t(&mut rng, &[2, 2, 5, 6]);
        let w = rand_t(&mut rng, &[3, 2, 3, 3]);
        let zero = Tensor::zeros(&[2, 3, 3, 4]);
        let g = conv_backward(&x, &w, &zero).unwrap();
        assert!(g.grad_x.data().iter().chain(g.grad_w.data()).chain(g.grad_b.data()).all(|&v| v == 0.0));
        let go = rand_t(&mut rng, &[2, 3, 3, 4]);
        let g = conv_backward(&x, &w, &go).unwrap();
        for f in 0..3 {
            let expect: f64 = (0..2).map(|s| go.data()[(s * 3 + f) * 12..(s * 3 + f + 1) * 12].iter().sum::<f64>()).sum();
            assert!((g.grad_b.data()[f] - expect).abs() < 1e-12);
        }
        assert!(conv_backward(&x, &w, &Tensor::zeros(&[2, 3, 3, 3])).is_err());
    }

    /// Central differences of `sum(forward · probe)` with respect to `param`.
    fn numeric_grad(param: &mut Tensor<f64>, f: &mut dyn FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
        let eps = 1e-4;
        (0..param.len())
            .map(|i| {
                let v = param.data()[i];
                param.data_mut()[i] = v + eps;
                let up = f(param);
                param.data_mut()[i] = v - eps;
                let down = f(param);
                param.data_mut()[i] = v;
                (up - down) / (2.0 * eps)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = crate::seed::rng(9, &[]);
        let mut x = rand_t(&mut rng, &[2, 2, 6, 5]);
        let mut w = rand_t(&mut rng, &[3, 2, 3, 3]);
        let mut b = rand_t(&mut rng, &[3]);
        let probe = rand_t(&mut rng, &[2, 3, 4, 3]);
        let g = conv_backward(&x, &w, &probe).unwrap();
        let (w0, b0, x0) = (w.clone(), b.clone(), x.clone());
        let nx = numeric_grad(&mut x, &mut |xx| dot(&conv_forward(xx, &w0, &b0).unwrap(), &probe));
        let nw = numeric_grad(&mut w, &mut |ww| dot(&conv_forward(&x0, ww, &b0).unwrap(), &probe));
        let nb = numeric_grad(&mut b, &mut |bb| dot(&conv_forward(&x0, &w0, bb).unwrap(), &probe));
        for (a, n) in g.grad_x.data().iter().zip(nx).chain(g.grad_w.data().iter().zip(nw)).chain(g.grad_b.data().iter().zip(nb)) {
            assert!(rel_err(*a, n) < 1e-4, "{a} vs {n}");
        }
    }

    #[test]
    fn pool_examples() {
        let (y, idx) = pool_forward(&t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!((y.data(), idx.as_slice()), (&[4.0][..], &[3usize][..]));
        let (_, idx) = pool_forward(&t(&[1, 1, 2, 2], vec![5.0; 4])).unwrap();
        assert_eq!(idx, vec![0]);
        assert!(pool_forward(&t(&[1, 1, 3, 2], vec![0.0; 6])).is_err());
    }

    #[test]
    fn pool_gradients_match_finite_differences() {
        let mut rng = crate::seed::rng(10, &[]);
        let mut x = rand_t(&mut rng, &[2, 3, 4, 6]);
        let probe = rand_t(&mut rng, &[2, 3, 2, 3]);
        let (_, idx) = pool_forward(&x).unwrap();
        let g = pool_backward(&probe, &idx, x.shape()).unwrap();
        let n = numeric_grad(&mut x, &mut |xx| dot(&pool_forward(xx).unwrap().0, &probe));
        for (a, e) in g.data().iter().zip(n) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn fc_examples_and_gradients() {
        let x = t(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(fc_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());
        let b = t(&[2], vec![0.25, -3.0]);
        let y = fc_forward(&Tensor::zeros(&[1, 4]), &Tensor::zeros(&[4, 2]), &b).unwrap();
        assert_eq!(y.data(), b.data());

        let mut rng = crate::seed::rng(12, &[]);
        let mut x = rand_t(&mut rng, &[3, 5]);
        let mut w = rand_t(&mut rng, &[5, 4]);
        let mut b = rand_t(&mut rng, &[4]);
        let probe = rand_t(&mut rng, &[3, 4]);
        let g = fc_backward(&x, &w, &probe).unwrap();
        let (x0, w0, b0) = (x.clone(), w.clone(), b.clone());
        let nx = numeric_grad(&mut x, &mut |xx| dot(&fc_forward(xx, &w0, &b0).unwrap(), &probe));
        let nw = numeric_grad(&mut w, &mut |ww| dot(&fc_forward(&x0, ww, &b0).unwrap(), &probe));
        let nb = numeric_grad(&mut b, &mut |bb| dot(&fc_forward(&x0, &w0, bb).unwrap(), &probe));
        for (a, n) in g.grad_x.data().iter().zip(nx).chain(g.grad_w.data().iter().zip(nw)).chain(g.grad_b.data().iter().zip(nb)) {
            assert!(rel_err(*a, n) < 1e-4, "{a} vs {n}");
        }
        assert!(fc_forward(&x0, &Tensor::zeros(&[4, 4]), &b0).is_err());
    }

    #[test]
    fn relu_examples_and_gradient() {
        let x = t(&[1, 3], vec![0.0, 2.0, 5.5]);
        assert_eq!(relu_forward(&x), x);
        let neg = t(&[1, 1], vec![-1.0]);
        assert_eq!(relu_forward(&neg).data(), &[0.0]);
        assert_eq!(relu_backward(&neg, &t(&[1, 1], vec![3.0])).unwrap().data(), &[0.0]);
        assert_eq!(relu_backward(&t(&[1, 1], vec![0.0]), &t(&[1, 1], vec![3.0])).unwrap().data(), &[0.0]);

        let mut rng = crate::seed::rng(13, &[]);
        let mut x = rand_t(&mut rng, &[4, 6]);
        x.data_mut().iter_mut().for_each(|v| if v.abs() < 1e-2 { *v = 0.5 });
        let probe = rand_t(&mut rng, &[4, 6]);
        let g = relu_backward(&x, &probe).unwrap();
        let n = numeric_grad(&mut x, &mut |xx| dot(&relu_forward(xx), &probe));
        for (a, e) in g.data().iter().zip(n) {
            assert!((a - e).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_xent_examples() {
        let (loss, g) = softmax_xent(&t(&[1, 3], vec![0.0; 3]), &[1]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((loss - 1.0986).abs() < 1e-4);
        assert!((g.data()[1] - (1.0 / 3.0 - 1.0)).abs() < 1e-12);
        let (loss, g) = softmax_xent(&t(&[1, 3], vec![1000.0, 0.0, 0.0]), &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);
        assert!(g.is_finite());
        let z = t(&[2, 3], vec![0.3, -1.2, 2.0, 5.0, 5.5, 4.0]);
        let shifted = t(&[2, 3], z.data().iter().map(|v| v + 123.0).collect());
        let (l1, g1) = softmax_xent(&z, &[2, 0]).unwrap();
        let (l2, g2) = softmax_xent(&shifted, &[2, 0]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = softmax(&z).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(matches!(softmax_xent(&z, &[0, 3]), Err(CnnError::Label(3, 3))));
    }
}
