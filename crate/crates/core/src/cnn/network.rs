use rand::Rng;

use super::layers::{conv_back_kernel, conv_kernel, fc_back_kernel, fc_kernel, pool_kernel, xent_row, ConvDims};
use super::{CnnError, Result, Scalar, Tensor};
use crate::par::{self, Exec};

/// Layer sizes of the C-S-C-S-FC-FC network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ArchConfig {
    pub in_channels: usize,
    /// Square input side.
    pub in_size: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub kernel: usize,
    pub fc1: usize,
    pub classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { in_channels: 1, in_size: 72, conv1: 6, conv2: 2, kernel: 5, fc1: 120, classes: 3 }
    }
}

impl ArchConfig {
    pub fn with_channels(conv1: usize, conv2: usize) -> Self {
        ArchConfig { conv1, conv2, ..Default::default() }
    }

    /// Spatial side after each layer: input, conv1, pool1, conv2, pool2.
    pub fn spatial_chain(&self) -> Result<[usize; 5]> {
        let k = self.kernel;
        let step = |s: usize, what: &str| -> Result<(usize, usize)> {
            if k == 0 || s < k {
                return Err(CnnError::Arch(format!("{k}x{k} kernel does not fit {s}x{s} {what}")));
            }
            let c = s - k + 1;
            if !c.is_multiple_of(2) {
                return Err(CnnError::Arch(format!("{what} conv output {c} is odd; 2x2 pooling needs even")));
            }
            Ok((c, c / 2))
        };
        let (c1, p1) = step(self.in_size, "input")?;
        let (c2, p2) = step(p1, "pool1 output")?;
        Ok([self.in_size, c1, p1, c2, p2])
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("conv1", self.conv1),
            ("conv2", self.conv2),
            ("fc1", self.fc1),
            ("classes", self.classes),
        ] {
            if v == 0 {
                return Err(CnnError::Arch(format!("{name} must be positive")));
            }
        }
        self.spatial_chain().map(|_| ())
    }

    pub fn flat_features(&self) -> Result<usize> {
        let s = self.spatial_chain()?[4];
        Ok(self.conv2 * s * s)
    }

    /// Parameter tensor shapes in declaration order.
    pub fn param_shapes(&self) -> Result<[Vec<usize>; 8]> {
        self.validate()?;
        let k = self.kernel;
        Ok([
            vec![self.conv1, self.in_channels, k, k],
            vec![self.conv1],
            vec![self.conv2, self.conv1, k, k],
            vec![self.conv2],
            vec![self.flat_features()?, self.fc1],
            vec![self.fc1],
            vec![self.fc1, self.classes],
            vec![self.classes],
        ])
    }

    fn conv1_dims(&self, chain: &[usize; 5]) -> ConvDims {
        ConvDims { c: self.in_channels, h: chain[0], w: chain[0], o: self.conv1, k: self.kernel }
    }

    fn conv2_dims(&self, chain: &[usize; 5]) -> ConvDims {
        ConvDims { c: self.conv1, h: chain[2], w: chain[2], o: self.conv2, k: self.kernel }
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_size * self.in_size
    }
}

pub const PARAM_NAMES: [&str; 8] = ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b"];

/// Weights plus biases over all layers.
pub fn param_count(arch: &ArchConfig) -> Result<usize> {
    Ok(arch.param_shapes()?.iter().map(|s| s.iter().product::<usize>()).sum())
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    arch: ArchConfig,
    params: Vec<Tensor<T>>,
    seed: u64,
}

/// Pooling choices of both pool layers, then ReLU on/off masks of conv1,
/// conv2 and fc1.
pub type Signature = (Vec<u32>, Vec<u32>, Vec<bool>, Vec<bool>, Vec<bool>);

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace<T> {
    pub conv1: Vec<T>,
    pub pool1: Vec<T>,
    pub pool1_idx: Vec<u32>,
    pub conv2: Vec<T>,
    pub pool2: Vec<T>,
    pub pool2_idx: Vec<u32>,
    pub fc1: Vec<T>,
    pub hidden: Vec<T>,
    pub logits: Vec<T>,
}

impl<T> SampleTrace<T> {
    /// ReLU on/off pattern and pooling choices; equal signatures mean the
    /// forward map is locally the same smooth function.
    pub fn signature(&self) -> Signature
    where
        T: Scalar,
    {
        let on = |v: &[T]| v.iter().map(|&x| x > T::zero()).collect();
        (self.pool1_idx.clone(), self.pool2_idx.clone(), on(&self.conv1), on(&self.conv2), on(&self.fc1))
    }
}

impl<T: Scalar> Network<T> {
    /// Glorot-uniform weights and zero biases, drawn from `seed`.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        let shapes = arch.param_shapes()?;
        let mut rng = crate::seed::rng(seed, &[0x1417]);
        let k2 = arch.kernel * arch.kernel;
        let fans = [
            (arch.in_channels * k2, arch.conv1 * k2),
            (arch.conv1 * k2, arch.conv2 * k2),
            (arch.flat_features()?, arch.fc1),
            (arch.fc1, arch.classes),
        ];
        let mut params = Vec::with_capacity(8);
        for (layer, &(fan_in, fan_out)) in fans.iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let ws = &shapes[2 * layer];
            let n: usize = ws.iter().product();
            let w = (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
            params.push(Tensor::new(ws, w)?);
            params.push(Tensor::zeros(&shapes[2 * layer + 1]));
        }
        Ok(Network { arch, params, seed })
    }

    pub fn from_params(arch: ArchConfig, params: Vec<Tensor<T>>, seed: u64) -> Result<Self> {
        let shapes = arch.param_shapes()?;
        if params.len() != shapes.len() {
            return Err(CnnError::Shape(format!("{} parameter tensors, expected 8", params.len())));
        }
        for (i, (p, s)) in params.iter().zip(&shapes).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(CnnError::Shape(format!("{} has shape {:?}, expected {s:?}", PARAM_NAMES[i], p.shape())));
            }
        }
        Ok(Network { arch, params, seed })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network { arch: self.arch, params: self.params.iter().map(Tensor::cast).collect(), seed: self.seed }
    }

    /// Zero-filled tensors shaped like the parameters.
    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.arch.input_len() {
            return Err(CnnError::Shape(format!(
                "sample has {} values, network expects {}",
                x.len(),
                self.arch.input_len()
            )));
        }
        Ok(())
    }

    /// Full forward pass for one sample: conv1 → relu → pool → conv2 → relu →
    /// pool → fc1 → relu → fc2.
    pub fn trace(&self, x: &[T]) -> Result<SampleTrace<T>> {
        self.check_input(x)?;
        let a = &self.arch;
        let chain = a.spatial_chain()?;
        let (d1, d2) = (a.conv1_dims(&chain), a.conv2_dims(&chain));
        let p = &self.params;

        let mut conv1 = vec![T::zero(); d1.out_len()];
        conv_kernel(d1, x, p[0].data(), p[1].data(), &mut conv1);
        let act1: Vec<T> = conv1.iter().map(|&v| v.max(T::zero())).collect();
        let n1 = a.conv1 * chain[2] * chain[2];
        let (mut pool1, mut pool1_idx) = (vec![T::zero(); n1], vec![0u32; n1]);
        pool_kernel(a.conv1, chain[1], chain[1], &act1, &mut pool1, &mut pool1_idx);

        let mut conv2 = vec![T::zero(); d2.out_len()];
        conv_kernel(d2, &pool1, p[2].data(), p[3].data(), &mut conv2);
        let act2: Vec<T> = conv2.iter().map(|&v| v.max(T::zero())).collect();
        let n2 = a.conv2 * chain[4] * chain[4];
        let (mut pool2, mut pool2_idx) = (vec![T::zero(); n2], vec![0u32; n2]);
        pool_kernel(a.conv2, chain[3], chain[3], &act2, &mut pool2, &mut pool2_idx);

        let mut fc1 = vec![T::zero(); a.fc1];
        fc_kernel(&pool2, p[4].data(), p[5].data(), &mut fc1);
        let hidden: Vec<T> = fc1.iter().map(|&v| v.max(T::zero())).collect();
        let mut logits = vec![T::zero(); a.classes];
        fc_kernel(&hidden, p[6].data(), p[7].data(), &mut logits);
        Ok(SampleTrace { conv1, pool1, pool1_idx, conv2, pool2, pool2_idx, fc1, hidden, logits })
    }

    /// Accumulates `dL/dparams` for one sample into `grads`, given
    /// `dL/dlogits`.
    pub fn backward(&self, x: &[T], t: &SampleTrace<T>, dlogits: &[T], grads: &mut [Tensor<T>]) -> Result<()> {
        self.check_input(x)?;
        let a = &self.arch;
        let chain = a.spatial_chain()?;
        let (d1, d2) = (a.conv1_dims(&chain), a.conv2_dims(&chain));
        let p = &self.params;
        let [g0, g1, g2, g3, g4, g5, g6, g7] = grads else {
            return Err(CnnError::Shape("gradient buffer must hold 8 tensors".into()));
        };

        let mut dhidden = vec![T::zero(); a.fc1];
        fc_back_kernel(&t.hidden, p[6].data(), dlogits, g6.data_mut(), g7.data_mut(), Some(&mut dhidden));
        for (d, &z) in dhidden.iter_mut().zip(&t.fc1) {
            if z <= T::zero() {
                *d = T::zero();
            }
        }
        let mut dpool2 = vec![T::zero(); t.pool2.len()];
        fc_back_kernel(&t.pool2, p[4].data(), &dhidden, g4.data_mut(), g5.data_mut(), Some(&mut dpool2));

        let mut dconv2 = vec![T::zero(); t.conv2.len()];
        for (&i, &g) in t.pool2_idx.iter().zip(&dpool2) {
            dconv2[i as usize] += g;
        }
        for (d, &z) in dconv2.iter_mut().zip(&t.conv2) {
            if z <= T::zero() {
                *d = T::zero();
            }
        }
        let mut dpool1 = vec![T::zero(); t.pool1.len()];
        conv_back_kernel(d2, &t.pool1, p[2].data(), &dconv2, g2.data_mut(), g3.data_mut(), Some(&mut dpool1));

        let mut dconv1 = vec![T::zero(); t.conv1.len()];
        for (&i, &g) in t.pool1_idx.iter().zip(&dpool1) {
            dconv1[i as usize] += g;
        }
        for (d, &z) in dconv1.iter_mut().zip(&t.conv1) {
            if z <= T::zero() {
                *d = T::zero();
            }
        }
        conv_back_kernel(d1, x, p[0].data(), &dconv1, g0.data_mut(), g1.data_mut(), None);
        Ok(())
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.trace(x)?.logits)
    }

    /// Logits for a batch `(N, C, H, W)`; rows follow input order.
    pub fn forward(&self, batch: &Tensor<T>, exec: Exec) -> Result<Tensor<T>> {
        let a = &self.arch;
        if batch.shape().len() != 4 || batch.shape()[1..] != [a.in_channels, a.in_size, a.in_size] {
            return Err(CnnError::Shape(format!(
                "batch {:?}, expected (N, {}, {}, {})",
                batch.shape(),
                a.in_channels,
                a.in_size,
                a.in_size
            )));
        }
        let samples: Vec<&[T]> = batch.data().chunks(a.input_len()).collect();
        let rows = par::map(exec, &samples, |x| self.logits(x));
        let mut out = Vec::with_capacity(samples.len() * a.classes);
        for r in rows {
            out.extend(r?);
        }
        Tensor::new(&[samples.len(), a.classes], out)
    }

    pub fn predict(&self, batch: &Tensor<T>, exec: Exec) -> Result<Vec<usize>> {
        let z = self.forward(batch, exec)?;
        Ok(z.data().chunks(self.arch.classes).map(argmax).collect())
    }

    /// Mean cross-entropy over the samples and its parameter gradient.
    ///
    /// Per-sample gradients may be computed in parallel; they are summed in
    /// sample order so the result does not depend on `exec`.
    pub fn loss_and_grads(&self, inputs: &[&[T]], labels: &[usize], exec: Exec) -> Result<(T, Vec<Tensor<T>>)> {
        if inputs.len() != labels.len() || inputs.is_empty() {
            return Err(CnnError::Shape(format!("{} inputs with {} labels", inputs.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.arch.classes) {
            return Err(CnnError::Label(bad, self.arch.classes));
        }
        let scale = T::of(inputs.len() as f64);
        let per_sample = par::map_range(exec, inputs.len(), |i| -> Result<(T, Vec<Tensor<T>>)> {
            let t = self.trace(inputs[i])?;
            let mut dl = vec![T::zero(); self.arch.classes];
            let loss = xent_row(&t.logits, labels[i], scale, &mut dl);
            let mut g = self.zero_grads();
            self.backward(inputs[i], &t, &dl, &mut g)?;
            Ok((loss, g))
        });
        let mut total = self.zero_grads();
        let mut loss = T::zero();
        for r in per_sample {
            let (l, g) = r?;
            loss += l;
            for (acc, gi) in total.iter_mut().zip(&g) {
                for (a, &b) in acc.data_mut().iter_mut().zip(gi.data()) {
                    *a += b;
                }
            }
        }
        Ok((loss / scale, total))
    }
}
