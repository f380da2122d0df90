use super::kernels::{self, ConvGeom};
use super::{DiffError, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Rsqrt(Var),
    Tanh(Var),
    LeakyRelu(Var, f32),
    Softplus(Var),
    Sigmoid(Var),
    SumAll(Var),
    Expand(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Reshape(Var),
    SumRows(Var),
    BroadcastRows(Var),
    Conv { x: Var, w: Var, stride: usize, pad: usize },
    ConvInputGrad { dy: Var, w: Var, stride: usize, pad: usize },
    ConvWeightGrad { x: Var, dy: Var, stride: usize, pad: usize },
    Upsample2(Var),
    SumPool2(Var),
    SpatialSum(Var),
    BroadcastSpatial(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match *self {
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![a, b],
            MatMul { a, b, .. } => vec![a, b],
            Conv { x, w, .. } => vec![x, w],
            ConvInputGrad { dy, w, .. } => vec![dy, w],
            ConvWeightGrad { x, dy, .. } => vec![x, dy],
            Scale(a, _)
            | AddScalar(a)
            | Abs(a)
            | Square(a)
            | Rsqrt(a)
            | Tanh(a)
            | LeakyRelu(a, _)
            | Softplus(a)
            | Sigmoid(a)
            | SumAll(a)
            | Expand(a)
            | Reshape(a)
            | SumRows(a)
            | BroadcastRows(a)
            | Upsample2(a)
            | SumPool2(a)
            | SpatialSum(a)
            | BroadcastSpatial(a) => vec![a],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Option<Op>,
    tracked: bool,
}

/// Records executed operations so gradients can be replayed in reverse.
///
/// Values live in the tape's arena; a [`Var`] is an index into it. A node is
/// tracked when it is a leaf created with `requires_grad` or when any of its
/// inputs is tracked while recording is enabled. Every vector-Jacobian
/// product is itself expressed with tape operations, so gradients taken
/// with `create_graph = true` can be differentiated again.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
    recording: bool,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            recording: true,
            backward_done: false,
        }
    }
}

impl Tape<f32> {
    pub fn new() -> Self {
        Self::default()
    }
}

fn shape_err(msg: String) -> DiffError {
    DiffError::Shape(msg)
}

impl<T: Real> Tape<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: None,
            tracked: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Gradient deposited on a leaf by [`Tape::backward`].
    pub fn grad_of(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let tracked = self.recording && op.inputs().iter().any(|i| self.nodes[i.0].tracked);
        self.nodes.push(Node {
            value,
            op: if tracked { Some(op) } else { None },
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{what}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op) -> Result<Var, DiffError> {
        self.same_shape(a, b, what)?;
        let v = self.value(a).zip_map(self.value(b), f);
        Ok(self.push(v, op))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let v = self.value(a).map(f);
        self.push(v, op)
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let k = T::from_f32(c);
        self.unary(a, |x| x * k, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let k = T::from_f32(c);
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    /// Absolute value; its subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, T::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn rsqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::ONE / x.sqrt(), Op::Rsqrt(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, T::tanh, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Var {
        let k = T::from_f32(slope);
        self.unary(a, |x| if x > T::ZERO { x } else { k * x }, Op::LeakyRelu(a, slope))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    // ----- reductions and reshapes -----

    /// Sum of all elements (64-bit accumulation) as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = T::from_f64(self.value(a).sum_f64());
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f32)
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        if self.value(a).len() != 1 {
            return Err(shape_err(format!("expand needs one element, got {:?}", self.shape(a))));
        }
        let v = Tensor::full(shape, self.value(a).item());
        Ok(self.push(v, Op::Expand(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// `[M, N] -> [N]` column sums.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(shape_err(format!("sum_rows expects rank 2, got {:?}", t.shape())));
        }
        let (m, n) = (t.shape()[0], t.shape()[1]);
        let mut acc = vec![0f64; n];
        for row in t.data().chunks_exact(n.max(1)).take(m) {
            for (s, &v) in acc.iter_mut().zip(row) {
                *s += v.to_f64();
            }
        }
        let v = Tensor::new(&[n], acc.into_iter().map(T::from_f64).collect())?;
        Ok(self.push(v, Op::SumRows(a)))
    }

    /// `[N] -> [M, N]` by repeating rows.
    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.rank() != 1 {
            return Err(shape_err(format!("broadcast_rows expects rank 1, got {:?}", t.shape())));
        }
        let n = t.len();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(t.data());
        }
        let v = Tensor::new(&[m, n], data)?;
        Ok(self.push(v, Op::BroadcastRows(a)))
    }

    // ----- linear algebra -----

    /// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err(format!(
                "matmul expects rank-2 operands, got {sa:?} and {sb:?}"
            )));
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(shape_err(format!(
                "matmul inner dimensions differ: {k} vs {k2} (shapes {sa:?}, {sb:?})"
            )));
        }
        let mut out = vec![T::ZERO; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            &mut out,
            false,
        );
        let v = Tensor::new(&[m, n], out)?;
        Ok(self.push(v, Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.matmul_t(a, b, false, false)
    }

    /// Affine map `input · weight + bias` for `input: [N, Din]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, DiffError> {
        let din = self.shape(weight).first().copied().unwrap_or(0);
        let si = self.shape(input).to_vec();
        if si.len() != 2 || si[1] != din {
            return Err(shape_err(format!(
                "dense: input {:?} incompatible with weight {:?}",
                si,
                self.shape(weight)
            )));
        }
        let sb = self.shape(bias).to_vec();
        let dout = self.shape(weight)[1];
        if sb != [dout] {
            return Err(shape_err(format!(
                "dense: bias {sb:?} does not match output width {dout}"
            )));
        }
        let y = self.matmul(input, weight)?;
        let b = self.broadcast_rows(bias, si[0])?;
        self.add(y, b)
    }

    // ----- convolution -----

    fn conv_geom(&self, input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<ConvGeom, DiffError> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(shape_err(format!(
                "conv2d expects input [N,H,W,C] and kernel [kh,kw,Cin,Cout], got {input:?} and {kernel:?}"
            )));
        }
        ConvGeom::new(
            [input[0], input[1], input[2], input[3]],
            [kernel[0], kernel[1], kernel[2], kernel[3]],
            stride,
            pad,
        )
        .map_err(|e| shape_err(format!("conv2d: {e}")))
    }

    /// Cross-correlation with zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, DiffError> {
        let g = self.conv_geom(self.shape(x), self.shape(w), stride, pad)?;
        let out = kernels::conv_forward(self.value(x).data(), self.value(w).data(), &g);
        let v = Tensor::new(&g.output_shape(), out)?;
        Ok(self.push(v, Op::Conv { x, w, stride, pad }))
    }

    fn conv_input_grad(
        &mut self,
        dy: Var,
        w: Var,
        x_shape: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Var, DiffError> {
        let g = self.conv_geom(x_shape, self.shape(w), stride, pad)?;
        let dx = kernels::conv_input_grad(self.value(dy).data(), self.value(w).data(), &g);
        let v = Tensor::new(x_shape, dx)?;
        Ok(self.push(v, Op::ConvInputGrad { dy, w, stride, pad }))
    }

    fn conv_weight_grad(
        &mut self,
        x: Var,
        dy: Var,
        w_shape: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Var, DiffError> {
        let g = self.conv_geom(self.shape(x), w_shape, stride, pad)?;
        let dw = kernels::conv_weight_grad(self.value(x).data(), self.value(dy).data(), &g);
        let v = Tensor::new(w_shape, dw)?;
        Ok(self.push(v, Op::ConvWeightGrad { x, dy, stride, pad }))
    }

    // ----- spatial resampling and per-channel broadcasts on N,H,W,C -----

    fn nhwc(&self, a: Var, what: &str) -> Result<[usize; 4], DiffError> {
        let s = self.shape(a);
        if s.len() != 4 {
            return Err(shape_err(format!("{what} expects [N,H,W,C], got {s:?}")));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    pub fn upsample2(&mut self, a: Var) -> Result<Var, DiffError> {
        let [n, h, w, c] = self.nhwc(a, "upsample2")?;
        let out = kernels::upsample2(self.value(a).data(), n, h, w, c);
        let v = Tensor::new(&[n, 2 * h, 2 * w, c], out)?;
        Ok(self.push(v, Op::Upsample2(a)))
    }

    pub fn sumpool2(&mut self, a: Var) -> Result<Var, DiffError> {
        let [n, h, w, c] = self.nhwc(a, "sumpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(format!("2x pooling needs even extents, got {h}x{w}")));
        }
        let out = kernels::sumpool2(self.value(a).data(), n, h, w, c);
        let v = Tensor::new(&[n, h / 2, w / 2, c], out)?;
        Ok(self.push(v, Op::SumPool2(a)))
    }

    /// Mean over non-overlapping 2x2 windows.
    pub fn avgpool2(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.sumpool2(a)?;
        Ok(self.scale(s, 0.25))
    }

    /// `[N,H,W,C] -> [N,C]` sum over spatial positions.
    pub fn spatial_sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let [n, h, w, c] = self.nhwc(a, "spatial_sum")?;
        let data = self.value(a).data();
        let mut out = vec![T::ZERO; n * c];
        for b in 0..n {
            let mut acc = vec![0f64; c];
            for px in data[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c.max(1)) {
                for (s, &v) in acc.iter_mut().zip(px) {
                    *s += v.to_f64();
                }
            }
            for (o, s) in out[b * c..(b + 1) * c].iter_mut().zip(acc) {
                *o = T::from_f64(s);
            }
        }
        let v = Tensor::new(&[n, c], out)?;
        Ok(self.push(v, Op::SpatialSum(a)))
    }

    pub fn spatial_mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let [_, h, w, _] = self.nhwc(a, "spatial_mean")?;
        let s = self.spatial_sum(a)?;
        Ok(self.scale(s, 1.0 / (h * w) as f32))
    }

    /// `[N,C] -> [N,H,W,C]` by repeating each sample's channel vector.
    pub fn broadcast_spatial(&mut self, a: Var, h: usize, w: usize) -> Result<Var, DiffError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(shape_err(format!("broadcast_spatial expects [N,C], got {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(n * h * w * c);
        for b in 0..n {
            for _ in 0..h * w {
                data.extend_from_slice(&src[b * c..(b + 1) * c]);
            }
        }
        let v = Tensor::new(&[n, h, w, c], data)?;
        Ok(self.push(v, Op::BroadcastSpatial(a)))
    }

    /// Multiplies every spatial position of `x: [N,H,W,C]` by `v: [N,C]`.
    pub fn scale_channels(&mut self, x: Var, v: Var) -> Result<Var, DiffError> {
        let [n, h, w, c] = self.nhwc(x, "scale_channels")?;
        if self.shape(v) != [n, c] {
            return Err(shape_err(format!(
                "scale_channels: factors {:?} do not match [N,C] = [{n},{c}]",
                self.shape(v)
            )));
        }
        let b = self.broadcast_spatial(v, h, w)?;
        self.mul(x, b)
    }

    // ----- differentiation -----

    fn seed_and_propagate(&mut self, output: Var, create_graph: bool) -> Result<Vec<Option<Var>>, DiffError> {
        if !self.nodes[output.0].tracked {
            return Err(DiffError::Untracked);
        }
        let saved = self.recording;
        self.recording = create_graph;
        let result = self.propagate(output);
        self.recording = saved;
        result
    }

    fn propagate(&mut self, output: Var) -> Result<Vec<Option<Var>>, DiffError> {
        let seed = Tensor::full(self.shape(output), T::ONE);
        let mut grads: Vec<Option<Var>> = vec![None; output.0 + 1];
        grads[output.0] = Some(self.constant(seed));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i] else { continue };
            let Some(op) = self.nodes[i].op.clone() else { continue };
            for (input, gi) in self.vjp(&op, Var(i), g)? {
                grads[input.0] = Some(match grads[input.0] {
                    None => gi,
                    Some(prev) => self.add(prev, gi)?,
                });
            }
        }
        Ok(grads)
    }

    /// Fills the gradient of every tracked leaf with dLoss/dLeaf.
    ///
    /// A tape supports one `backward`; a second call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if self.backward_done {
            return Err(DiffError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(DiffError::NotScalar(self.shape(loss).to_vec()));
        }
        let grads = self.seed_and_propagate(loss, false)?;
        self.leaf_grads = vec![None; grads.len()];
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[i].op.is_none() && self.nodes[i].tracked {
                    self.leaf_grads[i] = Some(self.value(g).clone());
                }
            }
        }
        self.backward_done = true;
        Ok(())
    }

    /// Gradients of `output` summed over its elements with respect to `wrt`.
    ///
    /// With `create_graph` the returned gradients are themselves tracked and
    /// can feed a later loss. Unreached inputs get zero gradients.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>, DiffError> {
        let grads = self.seed_and_propagate(output, create_graph)?;
        Ok(wrt
            .iter()
            .map(|&v| match grads.get(v.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = Tensor::zeros(self.shape(v));
                    self.constant(z)
                }
            })
            .collect())
    }

    fn vjp(&mut self, op: &Op, out: Var, dy: Var) -> Result<Vec<(Var, Var)>, DiffError> {
        let mut res = Vec::with_capacity(2);
        let t = |tape: &Tape<T>, v: Var| tape.nodes[v.0].tracked;
        match *op {
            Op::Add(a, b) => {
                if t(self, a) {
                    res.push((a, dy));
                }
                if t(self, b) {
                    res.push((b, dy));
                }
            }
            Op::Sub(a, b) => {
                if t(self, a) {
                    res.push((a, dy));
                }
                if t(self, b) {
                    res.push((b, self.neg(dy)));
                }
            }
            Op::Mul(a, b) => {
                if t(self, a) {
                    res.push((a, self.mul(dy, b)?));
                }
                if t(self, b) {
                    res.push((b, self.mul(dy, a)?));
                }
            }
            Op::Scale(a, c) => res.push((a, self.scale(dy, c))),
            Op::AddScalar(a) => res.push((a, dy)),
            Op::Abs(a) => {
                let sign = self.value(a).map(|x| {
                    if x > T::ZERO {
                        T::ONE
                    } else if x < T::ZERO {
                        -T::ONE
                    } else {
                        T::ZERO
                    }
                });
                let s = self.constant(sign);
                res.push((a, self.mul(dy, s)?));
            }
            Op::Square(a) => {
                let p = self.mul(dy, a)?;
                res.push((a, self.scale(p, 2.0)));
            }
            Op::Rsqrt(a) => {
                // d/dx x^{-1/2} = -y^3 / 2
                let y2 = self.mul(out, out)?;
                let y3 = self.mul(y2, out)?;
                let d = self.scale(y3, -0.5);
                res.push((a, self.mul(dy, d)?));
            }
            Op::Tanh(a) => {
                let y2 = self.square(out);
                let ny2 = self.neg(y2);
                let d = self.add_scalar(ny2, 1.0);
                res.push((a, self.mul(dy, d)?));
            }
            Op::LeakyRelu(a, slope) => {
                let k = T::from_f32(slope);
                let mask = self.value(a).map(|x| if x > T::ZERO { T::ONE } else { k });
                let m = self.constant(mask);
                res.push((a, self.mul(dy, m)?));
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a);
                res.push((a, self.mul(dy, s)?));
            }
            Op::Sigmoid(a) => {
                let ns = self.neg(out);
                let one_minus = self.add_scalar(ns, 1.0);
                let d = self.mul(out, one_minus)?;
                res.push((a, self.mul(dy, d)?));
            }
            Op::SumAll(a) => {
                let shape = self.shape(a).to_vec();
                res.push((a, self.expand(dy, &shape)?));
            }
            Op::Expand(a) => {
                let s = self.sum_all(dy);
                let shape = self.shape(a).to_vec();
                res.push((a, self.reshape(s, &shape)?));
            }
            Op::MatMul { a, b, ta, tb } => {
                if t(self, a) {
                    let da = if ta {
                        self.matmul_t(b, dy, tb, true)?
                    } else {
                        self.matmul_t(dy, b, false, !tb)?
                    };
                    res.push((a, da));
                }
                if t(self, b) {
                    let db = if tb {
                        self.matmul_t(dy, a, true, ta)?
                    } else {
                        self.matmul_t(a, dy, !ta, false)?
                    };
                    res.push((b, db));
                }
            }
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                res.push((a, self.reshape(dy, &shape)?));
            }
            Op::SumRows(a) => {
                let m = self.shape(a)[0];
                res.push((a, self.broadcast_rows(dy, m)?));
            }
            Op::BroadcastRows(a) => res.push((a, self.sum_rows(dy)?)),
            Op::Conv { x, w, stride, pad } => {
                if t(self, x) {
                    let xs = self.shape(x).to_vec();
                    res.push((x, self.conv_input_grad(dy, w, &xs, stride, pad)?));
                }
                if t(self, w) {
                    let ws = self.shape(w).to_vec();
                    res.push((w, self.conv_weight_grad(x, dy, &ws, stride, pad)?));
                }
            }
            Op::ConvInputGrad { dy: up, w, stride, pad } => {
                if t(self, up) {
                    res.push((up, self.conv2d(dy, w, stride, pad)?));
                }
                if t(self, w) {
                    let ws = self.shape(w).to_vec();
                    res.push((w, self.conv_weight_grad(dy, up, &ws, stride, pad)?));
                }
            }
            Op::ConvWeightGrad { x, dy: up, stride, pad } => {
                if t(self, x) {
                    let xs = self.shape(x).to_vec();
                    res.push((x, self.conv_input_grad(up, dy, &xs, stride, pad)?));
                }
                if t(self, up) {
                    res.push((up, self.conv2d(x, dy, stride, pad)?));
                }
            }
            Op::Upsample2(a) => res.push((a, self.sumpool2(dy)?)),
            Op::SumPool2(a) => res.push((a, self.upsample2(dy)?)),
            Op::SpatialSum(a) => {
                let [_, h, w, _] = self.nhwc(a, "spatial_sum")?;
                res.push((a, self.broadcast_spatial(dy, h, w)?));
            }
            Op::BroadcastSpatial(a) => res.push((a, self.spatial_sum(dy)?)),
        }
        Ok(res)
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    if x > T::ZERO {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}
