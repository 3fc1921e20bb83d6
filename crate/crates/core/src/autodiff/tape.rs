use super::kernels;
use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    AddBias,
    Add,
    Relu,
    Conv2d,
    MaxPool2d,
    Flatten,
    Softmax,
    LogSoftmax,
    CrossEntropy,
    BinaryCrossEntropy,
    Scale,
    GradReverse,
    GatherRows,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::AddBias => "add_bias",
            OpKind::Add => "add",
            OpKind::Relu => "relu",
            OpKind::Conv2d => "conv2d",
            OpKind::MaxPool2d => "maxpool2d",
            OpKind::Flatten => "flatten",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::BinaryCrossEntropy => "binary_cross_entropy",
            OpKind::Scale => "scale",
            OpKind::GradReverse => "grad_reverse",
            OpKind::GatherRows => "gather_rows",
        }
    }
}

#[derive(Debug, Clone)]
enum Saved {
    None,
    /// Row-wise softmax of the input (softmax, log_softmax, cross_entropy).
    Probs(Vec<f64>),
    Targets {
        classes: Vec<usize>,
        weights: Option<Vec<f64>>,
        probs: Vec<f64>,
    },
    BinaryTargets {
        targets: Vec<f64>,
        weights: Option<Vec<f64>>,
    },
    Factor(f64),
    Indices(Vec<usize>),
}

#[derive(Debug, Clone)]
struct Record {
    kind: OpKind,
    inputs: Vec<usize>,
    output: usize,
    saved: Saved,
}

/// Linear record of executed operations for reverse-mode differentiation.
///
/// Node ids are assigned in execution order, so every record's inputs
/// precede its output and one reverse sweep over `records` is a valid
/// topological traversal.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    records: Vec<Record>,
}

fn mismatch(op: OpKind, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch { op: op.name(), detail: detail.into() }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an input or parameter tensor.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(tensor);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad()
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        let node = &self.nodes[v.0];
        node.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; node.numel()])
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    pub fn record_kinds(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.records.iter().map(|r| r.kind)
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(Tensor::zero_grad);
    }

    fn push(
        &mut self,
        kind: OpKind,
        inputs: &[Var],
        shape: Vec<usize>,
        values: Vec<f64>,
        saved: Saved,
    ) -> Result<Var, AutodiffError> {
        let mut out = Tensor::new(shape, values)?;
        out.set_requires_grad(inputs.iter().any(|v| self.nodes[v.0].requires_grad()));
        self.nodes.push(out);
        let output = self.nodes.len() - 1;
        self.records.push(Record { kind, inputs: inputs.iter().map(|v| v.0).collect(), output, saved });
        Ok(Var(output))
    }

    fn dims2(&self, op: OpKind, v: Var) -> Result<(usize, usize), AutodiffError> {
        match self.nodes[v.0].shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(mismatch(op, format!("expected a 2-D input, got shape {s:?}"))),
        }
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let op = OpKind::MatMul;
        let (n, k) = self.dims2(op, a)?;
        let (k2, m) = self.dims2(op, b)?;
        if k != k2 {
            return Err(mismatch(op, format!("inner dimensions differ: [{n}, {k}] x [{k2}, {m}]")));
        }
        let out = kernels::matmul(self.nodes[a.0].values(), self.nodes[b.0].values(), n, k, m);
        self.push(op, &[a, b], vec![n, m], out, Saved::None)
    }

    /// Adds a per-column bias to `[n, m]` or a per-channel bias to `[n, c, h, w]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let op = OpKind::AddBias;
        let xs = self.nodes[x.0].shape().to_vec();
        let bs = self.nodes[bias.0].shape().to_vec();
        let (channels, inner) = match xs.as_slice() {
            [_, m] => (*m, 1),
            [_, c, h, w] => (*c, h * w),
            _ => return Err(mismatch(op, format!("unsupported input shape {xs:?}"))),
        };
        if bs != [channels] {
            return Err(mismatch(op, format!("bias shape {bs:?} does not match {channels} channels of {xs:?}")));
        }
        let b = self.nodes[bias.0].values();
        let mut out = self.nodes[x.0].values().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += b[(i / inner) % channels];
        }
        self.push(op, &[x, bias], xs, out, Saved::None)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let op = OpKind::Add;
        let (sa, sb) = (self.nodes[a.0].shape(), self.nodes[b.0].shape());
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        let shape = sa.to_vec();
        let out = self.nodes[a.0].values().iter().zip(self.nodes[b.0].values()).map(|(x, y)| x + y).collect();
        self.push(op, &[a, b], shape, out, Saved::None)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let shape = self.nodes[x.0].shape().to_vec();
        let out = self.nodes[x.0].values().iter().map(|v| v.max(0.0)).collect();
        self.push(OpKind::Relu, &[x], shape, out, Saved::None)
    }

    /// Valid (unpadded) stride-1 convolution: `[n, c, h, w] * [o, c, k, k]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var) -> Result<Var, AutodiffError> {
        let op = OpKind::Conv2d;
        let xs = self.nodes[x.0].shape().to_vec();
        let ks = self.nodes[kernel.0].shape().to_vec();
        let ([n, c, h, w], [o, kc, kh, kw]) = (xs.as_slice(), ks.as_slice()) else {
            return Err(mismatch(op, format!("expected 4-D input and kernel, got {xs:?} and {ks:?}")));
        };
        if c != kc || kh != kw {
            return Err(mismatch(op, format!("input channels {c} vs kernel {ks:?} (square kernel required)")));
        }
        if kh > h || kw > w {
            return Err(mismatch(op, format!("kernel {kh}x{kw} larger than input {h}x{w}")));
        }
        let geom = kernels::ConvGeom { n: *n, c: *c, h: *h, w: *w, o: *o, k: *kh };
        let out = kernels::conv2d_forward(self.nodes[x.0].values(), self.nodes[kernel.0].values(), &geom);
        self.push(op, &[x, kernel], vec![*n, *o, geom.oh(), geom.ow()], out, Saved::None)
    }

    /// 2x2 max pooling with stride 2 (trailing odd rows/columns dropped).
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let op = OpKind::MaxPool2d;
        let xs = self.nodes[x.0].shape().to_vec();
        let [n, c, h, w] = xs.as_slice() else {
            return Err(mismatch(op, format!("expected 4-D input, got {xs:?}")));
        };
        if *h < 2 || *w < 2 {
            return Err(mismatch(op, format!("spatial size {h}x{w} below the 2x2 window")));
        }
        let (out, argmax) = kernels::maxpool_forward(self.nodes[x.0].values(), *n, *c, *h, *w);
        self.push(op, &[x], vec![*n, *c, h / 2, w / 2], out, Saved::Indices(argmax))
    }

    /// `[n, ...] -> [n, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = &self.nodes[x.0];
        let shape = vec![t.rows(), t.row_width()];
        let out = t.values().to_vec();
        self.push(OpKind::Flatten, &[x], shape, out, Saved::None)
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (_, cols) = self.dims2(OpKind::Softmax, x)?;
        let probs = kernels::softmax_rows(self.nodes[x.0].values(), cols);
        let shape = self.nodes[x.0].shape().to_vec();
        self.push(OpKind::Softmax, &[x], shape, probs.clone(), Saved::Probs(probs))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (_, cols) = self.dims2(OpKind::LogSoftmax, x)?;
        let out = kernels::log_softmax_rows(self.nodes[x.0].values(), cols);
        let probs = out.iter().map(|v| v.exp()).collect();
        let shape = self.nodes[x.0].shape().to_vec();
        self.push(OpKind::LogSoftmax, &[x], shape, out, Saved::Probs(probs))
    }

    /// `(1/B) * sum_s w_s * -log softmax(logits_s)[t_s]`, computed from
    /// logits through a fused log-softmax. `weights = None` means all ones.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<Var, AutodiffError> {
        let op = OpKind::CrossEntropy;
        let (rows, cols) = self.dims2(op, logits)?;
        if targets.len() != rows {
            return Err(mismatch(op, format!("{} targets for {rows} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(mismatch(op, format!("target class {bad} outside {cols} columns")));
        }
        check_weights(op, weights, rows)?;
        let logp = kernels::log_softmax_rows(self.nodes[logits.0].values(), cols);
        let mut total = 0.0;
        for (s, &t) in targets.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[s]);
            total += w * -logp[s * cols + t];
        }
        let value = total / rows as f64;
        let probs = logp.iter().map(|v| v.exp()).collect();
        self.push(
            op,
            &[logits],
            vec![1],
            vec![value],
            Saved::Targets { classes: targets.to_vec(), weights: weights.map(<[f64]>::to_vec), probs },
        )
    }

    /// `(1/B) * sum_s w_s * BCE(sigmoid(z_s), t_s)` on logits of shape `[B]`
    /// or `[B, 1]`, evaluated in the overflow-free softplus form.
    pub fn binary_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[f64],
        weights: Option<&[f64]>,
    ) -> Result<Var, AutodiffError> {
        let op = OpKind::BinaryCrossEntropy;
        let shape = self.nodes[logits.0].shape().to_vec();
        let rows = match shape.as_slice() {
            [b] | [b, 1] => *b,
            s => return Err(mismatch(op, format!("expected [B] or [B, 1] logits, got {s:?}"))),
        };
        if targets.len() != rows {
            return Err(mismatch(op, format!("{} targets for {rows} rows", targets.len())));
        }
        if let Some(bad) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(mismatch(op, format!("target {bad} outside [0, 1]")));
        }
        check_weights(op, weights, rows)?;
        let z = self.nodes[logits.0].values();
        let mut total = 0.0;
        for (s, (&zs, &t)) in z.iter().zip(targets).enumerate() {
            let w = weights.map_or(1.0, |w| w[s]);
            total += w * (kernels::softplus(zs) - t * zs);
        }
        let value = total / rows as f64;
        self.push(
            op,
            &[logits],
            vec![1],
            vec![value],
            Saved::BinaryTargets { targets: targets.to_vec(), weights: weights.map(<[f64]>::to_vec) },
        )
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutodiffError> {
        let shape = self.nodes[x.0].shape().to_vec();
        let out = self.nodes[x.0].values().iter().map(|v| v * factor).collect();
        self.push(OpKind::Scale, &[x], shape, out, Saved::Factor(factor))
    }

    /// Identity forward; multiplies the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Result<Var, AutodiffError> {
        if !lambda.is_finite() {
            return Err(mismatch(OpKind::GradReverse, format!("lambda {lambda} not finite")));
        }
        let shape = self.nodes[x.0].shape().to_vec();
        let out = self.nodes[x.0].values().to_vec();
        self.push(OpKind::GradReverse, &[x], shape, out, Saved::Factor(lambda))
    }

    /// Selects rows (first-axis slices) in the given order; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let op = OpKind::GatherRows;
        let t = &self.nodes[x.0];
        if rows.is_empty() {
            return Err(mismatch(op, "empty row selection"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(mismatch(op, format!("row {bad} out of {} rows", t.rows())));
        }
        let width = t.row_width();
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(t.row(r));
        }
        self.push(op, &[x], shape, out, Saved::Indices(rows.to_vec()))
    }

    /// Sum of several scalars, folded left to right.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Result<Option<Var>, AutodiffError> {
        let mut iter = terms.iter().copied();
        let Some(mut acc) = iter.next() else {
            return Ok(None);
        };
        for t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(Some(acc))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every node that
    /// requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let out = &self.nodes[loss.0];
        if out.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: out.shape().to_vec() });
        }
        self.nodes[loss.0].accumulate_grad(&[1.0]);
        for idx in (0..self.records.len()).rev() {
            let record = &self.records[idx];
            if record.output > loss.0 {
                continue;
            }
            let Some(upstream) = self.nodes[record.output].grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let contributions = self.local_grads(record, &upstream);
            let inputs = record.inputs.clone();
            for (input, delta) in inputs.into_iter().zip(contributions) {
                if let (Some(delta), true) = (delta, self.nodes[input].requires_grad()) {
                    self.nodes[input].accumulate_grad(&delta);
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, record: &Record, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let wants = |i: usize| self.nodes[record.inputs[i]].requires_grad();
        let input = |i: usize| &self.nodes[record.inputs[i]];
        match (record.kind, &record.saved) {
            (OpKind::MatMul, _) => {
                let (a, b) = (input(0), input(1));
                let (n, k) = (a.shape()[0], a.shape()[1]);
                let m = b.shape()[1];
                let da = wants(0).then(|| kernels::matmul_a_bt(g, b.values(), n, m, k));
                let db = wants(1).then(|| kernels::matmul_at_b(a.values(), g, n, k, m));
                vec![da, db]
            }
            (OpKind::AddBias, _) => {
                let xs = input(0).shape();
                let (channels, inner) = match xs {
                    [_, m] => (*m, 1),
                    [_, c, h, w] => (*c, h * w),
                    _ => unreachable!("validated in forward"),
                };
                let db = wants(1).then(|| {
                    let mut db = vec![0.0; channels];
                    for (i, v) in g.iter().enumerate() {
                        db[(i / inner) % channels] += v;
                    }
                    db
                });
                vec![wants(0).then(|| g.to_vec()), db]
            }
            (OpKind::Add, _) => vec![wants(0).then(|| g.to_vec()), wants(1).then(|| g.to_vec())],
            (OpKind::Relu, _) => {
                let x = input(0).values();
                let dx = x.iter().zip(g).map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 }).collect();
                vec![Some(dx)]
            }
            (OpKind::Conv2d, _) => {
                let (x, k) = (input(0), input(1));
                let [n, c, h, w] = x.shape() else { unreachable!() };
                let [o, _, kk, _] = k.shape() else { unreachable!() };
                let geom = kernels::ConvGeom { n: *n, c: *c, h: *h, w: *w, o: *o, k: *kk };
                let dx = wants(0).then(|| kernels::conv2d_grad_input(g, k.values(), &geom));
                let dk = wants(1).then(|| kernels::conv2d_grad_kernel(g, x.values(), &geom));
                vec![dx, dk]
            }
            (OpKind::MaxPool2d, Saved::Indices(argmax)) => {
                let mut dx = vec![0.0; input(0).numel()];
                for (&src, &gi) in argmax.iter().zip(g) {
                    dx[src] += gi;
                }
                vec![Some(dx)]
            }
            (OpKind::Flatten, _) => vec![Some(g.to_vec())],
            (OpKind::Softmax, Saved::Probs(p)) => {
                let cols = input(0).shape()[1];
                let mut dx = vec![0.0; p.len()];
                for r in 0..p.len() / cols {
                    let span = r * cols..(r + 1) * cols;
                    let dot: f64 = p[span.clone()].iter().zip(&g[span.clone()]).map(|(a, b)| a * b).sum();
                    for i in span {
                        dx[i] = p[i] * (g[i] - dot);
                    }
                }
                vec![Some(dx)]
            }
            (OpKind::LogSoftmax, Saved::Probs(p)) => {
                let cols = input(0).shape()[1];
                let mut dx = vec![0.0; p.len()];
                for r in 0..p.len() / cols {
                    let span = r * cols..(r + 1) * cols;
                    let total: f64 = g[span.clone()].iter().sum();
                    for i in span {
                        dx[i] = g[i] - p[i] * total;
                    }
                }
                vec![Some(dx)]
            }
            (OpKind::CrossEntropy, Saved::Targets { classes, weights, probs }) => {
                let rows = classes.len();
                let cols = probs.len() / rows;
                let scale = g[0] / rows as f64;
                let mut dx = vec![0.0; probs.len()];
                for (s, &t) in classes.iter().enumerate() {
                    let coef = weights.as_ref().map_or(1.0, |w| w[s]) * scale;
                    for c in 0..cols {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        dx[s * cols + c] = coef * (probs[s * cols + c] - onehot);
                    }
                }
                vec![Some(dx)]
            }
            (OpKind::BinaryCrossEntropy, Saved::BinaryTargets { targets, weights }) => {
                let rows = targets.len();
                let scale = g[0] / rows as f64;
                let z = input(0).values();
                let dx = (0..rows)
                    .map(|s| {
                        let coef = weights.as_ref().map_or(1.0, |w| w[s]) * scale;
                        coef * (kernels::sigmoid(z[s]) - targets[s])
                    })
                    .collect();
                vec![Some(dx)]
            }
            (OpKind::Scale, Saved::Factor(f)) => vec![Some(g.iter().map(|v| v * f).collect())],
            (OpKind::GradReverse, Saved::Factor(lambda)) => {
                vec![Some(g.iter().map(|v| -lambda * v).collect())]
            }
            (OpKind::GatherRows, Saved::Indices(rows)) => {
                let x = input(0);
                let width = x.row_width();
                let mut dx = vec![0.0; x.numel()];
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..width {
                        dx[r * width + c] += g[i * width + c];
                    }
                }
                vec![Some(dx)]
            }
            (kind, saved) => unreachable!("{kind:?} recorded with {saved:?}"),
        }
    }
}

fn check_weights(op: OpKind, weights: Option<&[f64]>, rows: usize) -> Result<(), AutodiffError> {
    match weights {
        Some(w) if w.len() != rows => Err(mismatch(op, format!("{} weights for {rows} rows", w.len()))),
        Some(w) if w.iter().any(|v| !v.is_finite() || *v < 0.0) => {
            Err(mismatch(op, "weights must be finite and non-negative"))
        }
        _ => Ok(()),
    }
}
