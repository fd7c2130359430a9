//! Fixed-topology dense networks with hand-derived reverse-mode gradients,
//! the Adam optimizer, running input normalization, and the binary network
//! format.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! row-major (`out × in`) followed by its bias.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! b"DNET"  u32 version  u32 layers  u32 sizes[layers + 1]
//! u8 activation[layers]  u64 parameter count  f64 parameters[count]
//! ```

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NET_MAGIC: &[u8; 4] = b"DNET";
pub const NET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// σ'(z) given z and a = σ(z).
    #[inline]
    fn first(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// σ''(z) given a = σ(z).
    #[inline]
    fn second(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => -2.0 * a * (1.0 - a * a),
            Activation::Relu | Activation::Identity => 0.0,
        }
    }

    /// Orthogonal-init gain.
    pub fn gain(self) -> f64 {
        match self {
            Activation::Tanh => 5.0 / 3.0,
            Activation::Relu => std::f64::consts::SQRT_2,
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Identity),
            other => Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    /// Start of each layer's weights; biases follow immediately.
    offsets: Vec<usize>,
}

/// Pre- and post-activation values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl ForwardRecord {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }

    fn layer_input(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }
}

/// Gradients aligned with a network's parameter layout, plus the input
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn layout(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len().saturating_sub(1));
    let mut at = 0;
    for w in sizes.windows(2) {
        offsets.push(at);
        at += w[0] * w[1] + w[1];
    }
    (offsets, at)
}

impl DenseNet {
    /// Network with all parameters zero.
    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(
                "a network needs at least an input and an output size".into(),
            ));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::dim("activations per layer", sizes.len() - 1, activations.len()));
        }
        if sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let (offsets, count) = layout(sizes);
        Ok(DenseNet {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; count],
            offsets,
        })
    }

    /// Orthogonal weights scaled by each layer's activation gain, zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activations)?;
        for l in 0..net.layers() {
            net.init_layer_orthogonal(l, activations[l].gain(), rng);
        }
        Ok(net)
    }

    /// Re-draws layer `l` as an orthogonal matrix times `gain`; bias zeroed.
    pub fn init_layer_orthogonal<R: Rng + ?Sized>(&mut self, l: usize, gain: f64, rng: &mut R) {
        let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
        let tall = rows >= cols;
        let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
        let a = DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
        let qr = a.qr();
        let mut q = qr.q();
        let rr = qr.r();
        for j in 0..c {
            if rr[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let w = if tall { q } else { q.transpose() };
        let off = self.offsets[l];
        for i in 0..rows {
            for j in 0..cols {
                self.params[off + i * cols + j] = gain * w[(i, j)];
            }
        }
        let b = off + rows * cols;
        self.params[b..b + rows].fill(0.0);
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }
    pub fn layers(&self) -> usize {
        self.activations.len()
    }
    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }
    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }
    pub fn param_count(&self) -> usize {
        self.params.len()
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dim("network parameters", self.params.len(), params.len()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Row-major weights of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let off = self.offsets[l];
        &self.params[off..off + self.sizes[l] * self.sizes[l + 1]]
    }
    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.offsets[l];
        let n = self.sizes[l] * self.sizes[l + 1];
        &mut self.params[off..off + n]
    }
    pub fn bias(&self, l: usize) -> &[f64] {
        let off = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        &self.params[off..off + self.sizes[l + 1]]
    }
    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        let n = self.sizes[l + 1];
        &mut self.params[off..off + n]
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.sizes[0] {
            return Err(Error::dim("network input", self.sizes[0], input.len()));
        }
        Ok(())
    }

    fn affine(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (cols, rows) = (self.sizes[l], self.sizes[l + 1]);
        let w = self.weights(l);
        let b = self.bias(l);
        out.clear();
        out.extend((0..rows).map(|i| {
            let row = &w[i * cols..(i + 1) * cols];
            b[i] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
        }));
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for l in 0..self.layers() {
            self.affine(l, &x, &mut z);
            let act = self.activations[l];
            x.clear();
            x.extend(z.iter().map(|v| act.apply(*v)));
        }
        Ok(x)
    }

    pub fn forward_record(&self, input: &[f64]) -> Result<ForwardRecord> {
        self.check_input(input)?;
        let mut pre = Vec::with_capacity(self.layers());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers());
        for l in 0..self.layers() {
            let mut z = Vec::new();
            self.affine(l, post.last().map(Vec::as_slice).unwrap_or(input), &mut z);
            let act = self.activations[l];
            post.push(z.iter().map(|v| act.apply(*v)).collect());
            pre.push(z);
        }
        Ok(ForwardRecord {
            input: input.to_vec(),
            pre,
            post,
        })
    }

    fn check_record(&self, rec: &ForwardRecord) -> Result<()> {
        let ok = rec.input.len() == self.sizes[0]
            && rec.pre.len() == self.layers()
            && rec.post.len() == self.layers()
            && (0..self.layers())
                .all(|l| rec.pre[l].len() == self.sizes[l + 1] && rec.post[l].len() == self.sizes[l + 1]);
        if ok {
            Ok(())
        } else {
            Err(Error::Insufficient(
                "forward record does not belong to this network".into(),
            ))
        }
    }

    /// Reverse pass with `injected[l]` added to the gradient of layer `l`'s
    /// pre-activation. Accumulates into `param_grad`; returns the input
    /// gradient when `want_input`.
    fn reverse(
        &self,
        rec: &ForwardRecord,
        out_grad: &[f64],
        injected: Option<&[Vec<f64>]>,
        param_grad: &mut [f64],
        want_input: bool,
    ) -> Vec<f64> {
        let mut post_grad = out_grad.to_vec();
        let mut input_grad = Vec::new();
        for l in (0..self.layers()).rev() {
            let act = self.activations[l];
            let mut dz: Vec<f64> = rec.pre[l]
                .iter()
                .zip(&rec.post[l])
                .zip(&post_grad)
                .map(|((z, a), g)| g * act.first(*z, *a))
                .collect();
            if let Some(inj) = injected {
                for (d, e) in dz.iter_mut().zip(&inj[l]) {
                    *d += e;
                }
            }
            let (cols, rows) = (self.sizes[l], self.sizes[l + 1]);
            let x = rec.layer_input(l);
            let off = self.offsets[l];
            for i in 0..rows {
                let d = dz[i];
                if d != 0.0 {
                    let g = &mut param_grad[off + i * cols..off + (i + 1) * cols];
                    for (gj, xj) in g.iter_mut().zip(x) {
                        *gj += d * xj;
                    }
                }
                param_grad[off + rows * cols + i] += d;
            }
            if l > 0 || want_input {
                let w = self.weights(l);
                let mut prev = vec![0.0; cols];
                for i in 0..rows {
                    let d = dz[i];
                    if d != 0.0 {
                        for (p, wij) in prev.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                            *p += d * wij;
                        }
                    }
                }
                if l == 0 {
                    input_grad = prev;
                } else {
                    post_grad = prev;
                }
            }
        }
        input_grad
    }

    pub fn backward(&self, rec: &ForwardRecord, out_grad: &[f64]) -> Result<GradientTape> {
        self.check_record(rec)?;
        if out_grad.len() != self.output_dim() {
            return Err(Error::dim("output gradient", self.output_dim(), out_grad.len()));
        }
        let mut params = vec![0.0; self.param_count()];
        let input = self.reverse(rec, out_grad, None, &mut params, true);
        Ok(GradientTape { params, input })
    }

    /// Adds the parameter gradient of `out_grad · output` into `param_grad`.
    pub fn accumulate_backward(&self, rec: &ForwardRecord, out_grad: &[f64], param_grad: &mut [f64]) -> Result<()> {
        self.check_record(rec)?;
        if param_grad.len() != self.param_count() {
            return Err(Error::dim("gradient buffer", self.param_count(), param_grad.len()));
        }
        self.reverse(rec, out_grad, None, param_grad, false);
        Ok(())
    }

    /// Gradient of a scalar-output network with respect to its input.
    pub fn input_gradient(&self, input: &[f64]) -> Result<Vec<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::dim("input gradient needs scalar output", 1, self.output_dim()));
        }
        let rec = self.forward_record(input)?;
        let mut scratch = vec![0.0; self.param_count()];
        Ok(self.reverse(&rec, &[1.0], None, &mut scratch, true))
    }

    /// For a scalar-output network: returns `(y, ‖∇ₓy‖²)` and adds
    /// `scale · ∂‖∇ₓy‖²/∂θ` into `param_grad`.
    ///
    /// The input gradient is the backward recursion
    /// `δ_l = σ'(z_l) ⊙ g_l`, `g_{l-1} = W_lᵀ δ_l` seeded with `g_L = 1`;
    /// its parameter derivative runs reverse mode through that recursion,
    /// producing direct weight terms and injected pre-activation gradients
    /// that a second ordinary reverse pass carries back through the forward
    /// computation.
    pub fn gradient_penalty_backward(&self, input: &[f64], scale: f64, param_grad: &mut [f64]) -> Result<(f64, f64)> {
        if self.output_dim() != 1 {
            return Err(Error::dim("gradient penalty needs scalar output", 1, self.output_dim()));
        }
        if param_grad.len() != self.param_count() {
            return Err(Error::dim("gradient buffer", self.param_count(), param_grad.len()));
        }
        let rec = self.forward_record(input)?;
        let layers = self.layers();
        // backward recursion, keeping g_l (gradient wrt post-activation of
        // layer l, g_L = 1) and δ_l for every layer
        let mut g_post: Vec<Vec<f64>> = vec![Vec::new(); layers];
        let mut delta: Vec<Vec<f64>> = vec![Vec::new(); layers];
        g_post[layers - 1] = vec![1.0];
        let mut g_in = Vec::new();
        for l in (0..layers).rev() {
            let act = self.activations[l];
            delta[l] = rec.pre[l]
                .iter()
                .zip(&rec.post[l])
                .zip(&g_post[l])
                .map(|((z, a), g)| g * act.first(*z, *a))
                .collect();
            let (cols, rows) = (self.sizes[l], self.sizes[l + 1]);
            let w = self.weights(l);
            let mut prev = vec![0.0; cols];
            for i in 0..rows {
                for j in 0..cols {
                    prev[j] += w[i * cols + j] * delta[l][i];
                }
            }
            if l == 0 {
                g_in = prev;
            } else {
                g_post[l - 1] = prev;
            }
        }
        let penalty: f64 = g_in.iter().map(|v| v * v).sum();

        // adjoint of the backward recursion, walking from the input side
        let mut g_bar: Vec<f64> = g_in.iter().map(|v| 2.0 * scale * v).collect();
        let mut injected: Vec<Vec<f64>> = vec![Vec::new(); layers];
        for l in 0..layers {
            let act = self.activations[l];
            let (cols, rows) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let w = self.weights(l);
            // g_{l-1} = W_lᵀ δ_l
            let mut delta_bar = vec![0.0; rows];
            for i in 0..rows {
                let mut acc = 0.0;
                for j in 0..cols {
                    param_grad[off + i * cols + j] += delta[l][i] * g_bar[j];
                    acc += w[i * cols + j] * g_bar[j];
                }
                delta_bar[i] = acc;
            }
            // δ_l = σ'(z_l) ⊙ g_l
            injected[l] = (0..rows)
                .map(|i| delta_bar[i] * act.second(rec.post[l][i]) * g_post[l][i])
                .collect();
            g_bar = (0..rows)
                .map(|i| delta_bar[i] * act.first(rec.pre[l][i], rec.post[l][i]))
                .collect();
        }
        // carry the injected pre-activation gradients back through the
        // forward pass; no gradient arrives at the output itself
        self.reverse(&rec, &[0.0], Some(&injected), param_grad, false);
        Ok((rec.output()[0], penalty))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(NET_MAGIC)?;
        w.write_all(&NET_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers() as u32).to_le_bytes())?;
        for s in &self.sizes {
            w.write_all(&(*s as u32).to_le_bytes())?;
        }
        for a in &self.activations {
            w.write_all(&[a.code()])?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != NET_MAGIC {
            return Err(Error::Checkpoint("bad network magic bytes".into()));
        }
        let version = read_u32(r)?;
        if version != NET_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "network format version {version}, supported {NET_FORMAT_VERSION}"
            )));
        }
        let layers = read_u32(r)? as usize;
        if layers == 0 || layers > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {layers}")));
        }
        let sizes = (0..=layers)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if sizes.iter().any(|s| *s == 0 || *s > 1 << 20) {
            return Err(Error::Checkpoint("implausible layer size".into()));
        }
        let mut codes = vec![0u8; layers];
        read_exact(r, &mut codes)?;
        let activations = codes
            .into_iter()
            .map(Activation::from_code)
            .collect::<Result<Vec<_>>>()?;
        let mut net = DenseNet::zeros(&sizes, &activations)?;
        let count = read_u64(r)? as usize;
        if count != net.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match layer sizes ({})",
                net.param_count()
            )));
        }
        for p in net.params.iter_mut() {
            *p = read_f64(r)?;
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let net = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after network".into()));
        }
        Ok(net)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated data: {e}")))
}
pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
pub(crate) fn read_f64_vec<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    if n > 1 << 28 {
        return Err(Error::Checkpoint(format!("implausible vector length {n}")));
    }
    (0..n).map(|_| read_f64(r)).collect()
}
pub(crate) fn write_f64_vec<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `params` along `-grad`. Rejects non-finite gradients
    /// before touching any state.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::dim("optimizer state", self.m.len(), grad.len()));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient at parameter {i}: {}",
                grad[i]
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical("parameters became non-finite".into()));
        }
        Ok(())
    }

    pub fn update(&mut self, net: &mut DenseNet, tape: &GradientTape) -> Result<()> {
        self.step(net.params_mut(), &tape.params)
    }
}

/// Running per-dimension mean and (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
    pub var_floor: f64,
    /// Symmetric clip applied after standardizing.
    pub clip: Option<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        RunningNorm {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
            var_floor: 1e-8,
            clip: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges a batch into the statistics.
    pub fn update<V: AsRef<[f64]>>(&mut self, batch: &[V]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let d = self.dim();
        let n = batch.len() as f64;
        let mut bmean = vec![0.0; d];
        for x in batch {
            let x = x.as_ref();
            if x.len() != d {
                return Err(Error::dim("normalizer input", d, x.len()));
            }
            for (m, v) in bmean.iter_mut().zip(x) {
                *m += v;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= n);
        let mut bvar = vec![0.0; d];
        for x in batch {
            for ((s, v), m) in bvar.iter_mut().zip(x.as_ref()).zip(&bmean) {
                *s += (v - m) * (v - m);
            }
        }
        bvar.iter_mut().for_each(|s| *s /= n);
        if self.count == 0.0 {
            self.mean = bmean;
            self.var = bvar;
            self.count = n;
            return Ok(());
        }
        let total = self.count + n;
        for i in 0..d {
            let delta = bmean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bvar[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
        Ok(())
    }

    pub fn scale(&self, i: usize) -> f64 {
        self.var[i].max(self.var_floor).sqrt()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i]) / self.scale(i))
            .collect();
        if let Some(c) = self.clip {
            out.iter_mut().for_each(|v| *v = v.clamp(-c, c));
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.count.to_le_bytes())?;
        w.write_all(&self.var_floor.to_le_bytes())?;
        w.write_all(&self.clip.unwrap_or(0.0).to_le_bytes())?;
        write_f64_vec(w, &self.mean)?;
        write_f64_vec(w, &self.var)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let count = read_f64(r)?;
        let var_floor = read_f64(r)?;
        let clip = read_f64(r)?;
        let mean = read_f64_vec(r)?;
        let var = read_f64_vec(r)?;
        if mean.len() != var.len() {
            return Err(Error::Checkpoint("normalizer mean and variance lengths differ".into()));
        }
        Ok(RunningNorm {
            mean,
            var,
            count,
            var_floor,
            clip: (clip > 0.0).then_some(clip),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent forward pass over explicit nested matrices.
    fn oracle_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in 0..net.layers() {
            let (n_in, n_out) = (net.sizes()[l], net.sizes()[l + 1]);
            let flat = net.weights(l);
            let w: Vec<Vec<f64>> = (0..n_out).map(|i| flat[i * n_in..(i + 1) * n_in].to_vec()).collect();
            let b = net.bias(l);
            let mut next = Vec::new();
            for i in 0..n_out {
                let mut z = b[i];
                for j in 0..n_in {
                    z += w[i][j] * a[j];
                }
                next.push(match net.activations()[l] {
                    Activation::Tanh => z.tanh(),
                    Activation::Relu => {
                        if z > 0.0 {
                            z
                        } else {
                            0.0
                        }
                    }
                    Activation::Identity => z,
                });
            }
            a = next;
        }
        a
    }

    fn random_net(rng: &mut ChaCha8Rng, acts: &[Activation], out: usize) -> DenseNet {
        let mut sizes = vec![rng.gen_range(1..8)];
        for _ in 1..acts.len() {
            sizes.push(rng.gen_range(1..12));
        }
        sizes.push(out);
        let mut net = DenseNet::zeros(&sizes, acts).unwrap();
        for p in net.params_mut() {
            *p = rng.gen_range(-1.0..1.0);
        }
        net
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-4 * a.abs().max(b.abs()) + 1e-6
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut net = DenseNet::zeros(&[3, 3], &[Activation::Identity]).unwrap();
        for i in 0..3 {
            net.weights_mut(0)[i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn zero_weights_give_activated_bias() {
        let mut net = DenseNet::zeros(&[2, 3], &[Activation::Tanh]).unwrap();
        net.bias_mut(0).copy_from_slice(&[0.5, -1.0, 2.0]);
        let y = net.forward(&[7.0, -3.0]).unwrap();
        assert_eq!(y, vec![0.5f64.tanh(), (-1.0f64).tanh(), 2.0f64.tanh()]);
    }

    #[test]
    fn forward_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let net = random_net(&mut rng, &[Activation::Tanh, Activation::Relu, Activation::Identity], 3);
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (a, b) = (net.forward(&x).unwrap(), oracle_forward(&net, &x));
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_derivatives() {
        let mut net = DenseNet::zeros(&[3, 1], &[Activation::Identity]).unwrap();
        net.weights_mut(0).copy_from_slice(&[0.5, -1.0, 2.0]);
        let x = [1.0, 2.0, 3.0];
        let tape = net.backward(&net.forward_record(&x).unwrap(), &[1.0]).unwrap();
        assert_eq!(&tape.params[..3], &x);
        assert_eq!(tape.params[3], 1.0);
        assert_eq!(tape.input, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn dimension_errors() {
        let net = DenseNet::zeros(&[3, 2], &[Activation::Tanh]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
        let other = DenseNet::zeros(&[4, 2], &[Activation::Tanh]).unwrap();
        let rec = other.forward_record(&[0.0; 4]).unwrap();
        assert!(net.backward(&rec, &[1.0, 1.0]).is_err());
        assert!(DenseNet::zeros(&[3], &[]).is_err());
        assert!(DenseNet::zeros(&[3, 2], &[]).is_err());
    }

    #[test]
    fn parameter_and_input_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-5;
        for trial in 0..20 {
            let acts: Vec<Activation> = match trial % 3 {
                0 => vec![Activation::Tanh, Activation::Identity],
                1 => vec![Activation::Tanh, Activation::Tanh, Activation::Identity],
                _ => vec![Activation::Relu, Activation::Tanh, Activation::Identity],
            };
            let net = random_net(&mut rng, &acts, 2);
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let og = [0.7, -1.3];
            let f = |n: &DenseNet, x: &[f64]| {
                let y = n.forward(x).unwrap();
                og[0] * y[0] + og[1] * y[1]
            };
            let tape = net.backward(&net.forward_record(&x).unwrap(), &og).unwrap();
            for i in 0..net.param_count() {
                let (mut p, mut m) = (net.clone(), net.clone());
                p.params_mut()[i] += h;
                m.params_mut()[i] -= h;
                let fd = (f(&p, &x) - f(&m, &x)) / (2.0 * h);
                assert!(close(fd, tape.params[i]), "param {i}: {fd} vs {}", tape.params[i]);
            }
            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let fd = (f(&net, &xp) - f(&net, &xm)) / (2.0 * h);
                assert!(close(fd, tape.input[i]));
            }
        }
    }

    #[test]
    fn gradient_penalty_parameter_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for trial in 0..10 {
            let acts: Vec<Activation> = if trial % 2 == 0 {
                vec![Activation::Tanh, Activation::Tanh, Activation::Identity]
            } else {
                vec![Activation::Tanh, Activation::Identity]
            };
            let net = random_net(&mut rng, &acts, 1);
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pen = |n: &DenseNet| n.input_gradient(&x).unwrap().iter().map(|g| g * g).sum::<f64>();
            let mut grad = vec![0.0; net.param_count()];
            let (_, p) = net.gradient_penalty_backward(&x, 1.0, &mut grad).unwrap();
            assert!((p - pen(&net)).abs() < 1e-12);
            for i in 0..net.param_count() {
                let (mut a, mut b) = (net.clone(), net.clone());
                a.params_mut()[i] += h;
                b.params_mut()[i] -= h;
                let fd = (pen(&a) - pen(&b)) / (2.0 * h);
                assert!(close(fd, grad[i]), "trial {trial} param {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn adam_behaviour() {
        let mut w = vec![0.3, -0.2];
        let mut adam = Adam::new(2, 0.1);
        adam.step(&mut w, &[0.0, 0.0]).unwrap();
        assert_eq!(w, vec![0.3, -0.2]);

        let mut w = vec![1.0];
        let mut adam = Adam::new(1, 0.1);
        let g = [2.0 * w[0]];
        adam.step(&mut w, &g).unwrap();
        assert!(w[0].abs() < 1.0);

        let mut adam = Adam::new(2, 0.1);
        let mut w = vec![0.0, 0.0];
        assert!(adam.step(&mut w, &[f64::NAN, 0.0]).unwrap_err().is_numerical());
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let c = [1.0, 4.0, 0.25, 9.0];
        let mut w = vec![1.0, -1.5, 2.0, 0.5];
        let mut adam = Adam::new(4, 0.05);
        for _ in 0..500 {
            let g: Vec<f64> = w.iter().zip(&c).map(|(x, k)| 2.0 * k * x).collect();
            adam.step(&mut w, &g).unwrap();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "{norm}");
    }

    #[test]
    fn orthogonal_init_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::orthogonal(&[5, 8, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        // columns of the tall 8×5 matrix are orthonormal up to the gain
        let w = net.weights(0);
        let g2 = 2.0;
        for a in 0..5 {
            for b in 0..5 {
                let dot: f64 = (0..8).map(|i| w[i * 5 + a] * w[i * 5 + b]).sum();
                let want = if a == b { g2 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
        // rows of the wide 3×8 matrix are orthonormal
        let w = net.weights(1);
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..8).map(|j| w[a * 8 + j] * w[b * 8 + j]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        assert!(net.bias(0).iter().all(|b| *b == 0.0));
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::orthogonal(&[4, 6, 2], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let bytes = net.to_bytes();
        assert_eq!(&bytes[..4], NET_MAGIC);
        assert_eq!(DenseNet::from_bytes(&bytes).unwrap(), net);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DenseNet::from_bytes(&bad).is_err());
        assert!(DenseNet::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn normalizer_statistics() {
        let mut n = RunningNorm::new(2);
        n.update(&vec![vec![3.0, -1.0]; 10]).unwrap();
        let y = n.normalize(&[3.0, -1.0]);
        assert_eq!(y, vec![0.0, 0.0]);
        assert_eq!(n.scale(0), 1e-4);

        // merged batches agree with a single two-pass computation
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![rng.gen_range(-1.0..3.0), rng.gen_range(5.0..6.0)])
            .collect();
        let mut n = RunningNorm::new(2);
        for chunk in data.chunks(137) {
            n.update(chunk).unwrap();
        }
        for d in 0..2 {
            let mean = data.iter().map(|x| x[d]).sum::<f64>() / 1000.0;
            let var = data.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / 1000.0;
            assert!((n.mean[d] - mean).abs() < 1e-10);
            assert!((n.var[d] - var).abs() < 1e-10);
        }
        let mut bytes = Vec::new();
        n.write_to(&mut bytes).unwrap();
        assert_eq!(RunningNorm::read_from(&mut bytes.as_slice()).unwrap(), n);
    }

    proptest! {
        #[test]
        fn forward_is_deterministic_and_shaped(
            sizes in prop::collection::vec(1usize..10, 2..5),
            seed in any::<u64>(),
        ) {
            let acts: Vec<Activation> = (0..sizes.len() - 1)
                .map(|i| [Activation::Tanh, Activation::Relu, Activation::Identity][i % 3])
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = DenseNet::orthogonal(&sizes, &acts, &mut rng).unwrap();
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = net.forward(&x).unwrap();
            prop_assert_eq!(a.len(), *sizes.last().unwrap());
            prop_assert_eq!(a.clone(), net.forward(&x).unwrap());
            prop_assert_eq!(a, net.forward_record(&x).unwrap().output().to_vec());
            prop_assert!(net.forward(&vec![0.0; sizes[0] + 1]).is_err());
        }
    }
}
