//! Tape-style computation graph. Ops execute eagerly and record what the
//! backward pass needs; `backward` walks the tape in reverse and
//! accumulates gradients for every node that (transitively) depends on a
//! differentiable leaf, including designated input tensors — pose
//! gradients ride the same path as parameter gradients.

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

enum Op {
    Leaf,
    MatMul(VarId, VarId),
    AddBias(VarId, VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Conv3d {
        x: VarId,
        k: VarId,
        pad: Padding,
    },
    Deconv3d {
        x: VarId,
        k: VarId,
        pad: Padding,
    },
    ScatterMaxPool {
        x: VarId,
        /// argmax point index per (cell, channel), -1 for empty cells.
        argmax: Vec<i64>,
    },
    RowsMean {
        x: VarId,
        rows: Vec<usize>,
    },
    GridMean(VarId),
    GridMax {
        x: VarId,
        argmax: Vec<usize>,
    },
    ConcatVec(VarId, VarId),
    ConcatRows {
        a: VarId,
        b: VarId,
        ca: usize,
        cb: usize,
    },
    BroadcastConcat {
        grid: VarId,
        vec: VarId,
    },
    MaxElem {
        a: VarId,
        b: VarId,
        take_a: Vec<bool>,
    },
    Bce {
        p: VarId,
        label: f64,
    },
    SumSquaresScaled {
        x: VarId,
        scale: f64,
    },
    WeightedSum(Vec<(VarId, f64)>),
    Reshape(VarId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: VarId) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros if it is disconnected from the loss.
    pub fn get_or_zeros(&self, v: VarId, shape: &[usize]) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

const BCE_CLAMP: f64 = 1e-7;

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.leaf(value, false)
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<VarId, NnError> {
        if !value.all_finite() {
            return Err(NnError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(VarId(self.nodes.len() - 1))
    }

    fn rg(&self, v: VarId) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `[N,I] × [I,O] -> [N,O]`
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NnError::Shape {
                op: "matmul",
                msg: format!("{sa:?} × {sb:?}"),
            });
        }
        let (n, i, o) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * o];
        let (da, db) = (ta.data(), tb.data());
        for r in 0..n {
            let arow = &da[r * i..(r + 1) * i];
            let orow = &mut out[r * o..(r + 1) * o];
            for (ii, &av) in arow.iter().enumerate() {
                let brow = &db[ii * o..(ii + 1) * o];
                for (ov, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *ov += av * bv;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(&[n, o], out), Op::MatMul(a, b), rg, "matmul")
    }

    /// `[N,O] + [O]`
    pub fn add_bias(&mut self, x: VarId, b: VarId) -> Result<VarId, NnError> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        let (sx, sb) = (tx.shape(), tb.shape());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(NnError::Shape {
                op: "add_bias",
                msg: format!("{sx:?} + {sb:?}"),
            });
        }
        let o = sx[1];
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(o) {
            for (v, &bv) in row.iter_mut().zip(tb.data()) {
                *v += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        let shape = sx.to_vec();
        self.push(Tensor::from_vec(&shape, out), Op::AddBias(x, b), rg, "add_bias")
    }

    pub fn relu(&mut self, x: VarId) -> Result<VarId, NnError> {
        let tx = &self.nodes[x.0].value;
        let out: Vec<f64> = tx.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = tx.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::from_vec(&shape, out), Op::Relu(x), rg, "relu")
    }

    pub fn sigmoid(&mut self, x: VarId) -> Result<VarId, NnError> {
        let tx = &self.nodes[x.0].value;
        let out: Vec<f64> = tx.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let shape = tx.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::from_vec(&shape, out), Op::Sigmoid(x), rg, "sigmoid")
    }

    /// Cross-correlation of `[D,H,W,Ci]` with `[3,3,3,Ci,Co]`.
    /// `Valid` shrinks each spatial dim by 2, `Same` zero-pads.
    pub fn conv3d(&mut self, x: VarId, k: VarId, pad: Padding) -> Result<VarId, NnError> {
        let (tx, tk) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
        check_conv_shapes(tx, tk, pad, false)?;
        let out = conv_forward(tx, tk, pad);
        let rg = self.rg(x) || self.rg(k);
        self.push(out, Op::Conv3d { x, k, pad }, rg, "conv3d")
    }

    /// Transposed convolution: the exact adjoint of [`Graph::conv3d`] with
    /// the same kernel layout. Input channels sit in the kernel's Co slot;
    /// `Valid` grows each spatial dim by 2.
    pub fn deconv3d(&mut self, x: VarId, k: VarId, pad: Padding) -> Result<VarId, NnError> {
        let (tx, tk) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
        check_conv_shapes(tx, tk, pad, true)?;
        let out = conv_input_grad(tx, tk, pad);
        let rg = self.rg(x) || self.rg(k);
        self.push(out, Op::Deconv3d { x, k, pad }, rg, "deconv3d")
    }

    /// Scatter `[K,H]` point features into `cells` (values in
    /// `0..grid_cells`) with per-channel max; empty cells stay zero.
    pub fn scatter_max_pool(
        &mut self,
        x: VarId,
        cells: &[usize],
        grid_cells: usize,
    ) -> Result<VarId, NnError> {
        let tx = &self.nodes[x.0].value;
        let sx = tx.shape();
        if sx.len() != 2 || sx[0] != cells.len() {
            return Err(NnError::Shape {
                op: "scatter_max_pool",
                msg: format!("{sx:?} with {} cell ids", cells.len()),
            });
        }
        let h = sx[1];
        let mut out = vec![0.0; grid_cells * h];
        let mut argmax = vec![-1i64; grid_cells * h];
        let data = tx.data();
        for (kp, &cell) in cells.iter().enumerate() {
            debug_assert!(cell < grid_cells);
            let row = &data[kp * h..(kp + 1) * h];
            let base = cell * h;
            for (c, &v) in row.iter().enumerate() {
                if argmax[base + c] < 0 || v > out[base + c] {
                    out[base + c] = v;
                    argmax[base + c] = kp as i64;
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::from_vec(&[grid_cells, h], out),
            Op::ScatterMaxPool { x, argmax },
            rg,
            "scatter_max_pool",
        )
    }

    /// Mean over a fixed subset of rows of `[R,C]`; empty subset gives
    /// zeros (the empty-selection contract of the collision predictor).
    pub fn rows_mean(&mut self, x: VarId, rows: &[usize]) -> Result<VarId, NnError> {
        let tx = &self.nodes[x.0].value;
        let sx = tx.shape();
        if sx.len() != 2 {
            return Err(NnError::Shape {
                op: "rows_mean",
                msg: format!("{sx:?}"),
            });
        }
        let c = sx[1];
        let mut out = vec![0.0; c];
        if !rows.is_empty() {
            let data = tx.data();
            for &r in rows {
                debug_assert!(r < sx[0]);
                for (o, &v) in out.iter_mut().zip(&data[r * c..(r + 1) * c]) {
                    *o += v;
                }
            }
            let inv = 1.0 / rows.len() as f64;
            for o in &mut out {
                *o *= inv;
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::from_vec(&[c], out),
            Op::RowsMean {
                x,
                rows: rows.to_vec(),
            },
            rg,
            "rows_mean",
        )
    }

    /// Global average over the cells of `[D,H,W,C] -> [C]`.
    pub fn grid_mean(&mut self, x: VarId) -> Result<VarId, NnError> {
        let tx = &self.nodes[x.0].value;
        let sx = tx.shape();
        if sx.len() != 4 {
            return Err(NnError::Shape {
                op: "grid_mean",
                msg: format!("{sx:?}"),
            });
        }
        let c = sx[3];
        let cells = sx[0] * sx[1] * sx[2];
        let mut out = vec![0.0; c];
        for cell in 0..cells {
            for (o, &v) in out.iter_mut().zip(&tx.data()[cell * c..(cell + 1) * c]) {
                *o += v;
            }
        }
        let inv = 1.0 / cells as f64;
        for o in &mut out {
            *o *= inv;
        }
        let rg = self.rg(x);
        self.push(Tensor::from_vec(&[c], out), Op::GridMean(x), rg, "grid_mean")
    }

    /// Global per-channel max over the cells of `[D,H,W,C] -> [C]`.
    pub fn grid_max(&mut self, x: VarId) -> Result<VarId, NnError> {
        let tx = &self.nodes[x.0].value;
        let sx = tx.shape();
        if sx.len() != 4 {
            return Err(NnError::Shape {
                op: "grid_max",
                msg: format!("{sx:?}"),
            });
        }
        let c = sx[3];
        let cells = sx[0] * sx[1] * sx[2];
        if cells == 0 {
            return Err(NnError::Shape {
                op: "grid_max",
                msg: "empty pooling scope".into(),
            });
        }
        let mut out = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for cell in 0..cells {
            let row = &tx.data()[cell * c..(cell + 1) * c];
            for (ch, &v) in row.iter().enumerate() {
                if v > out[ch] {
                    out[ch] = v;
                    argmax[ch] = cell;
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::from_vec(&[c], out),
            Op::GridMax { x, argmax },
            rg,
            "grid_max",
        )
    }

    /// `[a] ++ [b] -> [a+b]`
    pub fn concat_vec(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 1 || tb.shape().len() != 1 {
            return Err(NnError::Shape {
                op: "concat_vec",
                msg: format!("{:?} ++ {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut out = ta.data().to_vec();
        out.extend_from_slice(tb.data());
        let n = out.len();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(&[n], out), Op::ConcatVec(a, b), rg, "concat_vec")
    }

    /// Row-wise channel concatenation: `[R,Ca] ++ [R,Cb] -> [R,Ca+Cb]`.
    pub fn concat_rows(
        &mut self,
        a: VarId,
        b: VarId,
        rows: usize,
        ca: usize,
        cb: usize,
    ) -> Result<VarId, NnError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != [rows, ca] || tb.shape() != [rows, cb] {
            return Err(NnError::Shape {
                op: "concat_rows",
                msg: format!("{:?} ++ {:?} as {rows}×({ca}+{cb})", ta.shape(), tb.shape()),
            });
        }
        let mut out = vec![0.0; rows * (ca + cb)];
        for r in 0..rows {
            out[r * (ca + cb)..r * (ca + cb) + ca]
                .copy_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            out[r * (ca + cb) + ca..(r + 1) * (ca + cb)]
                .copy_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::from_vec(&[rows, ca + cb], out),
            Op::ConcatRows { a, b, ca, cb },
            rg,
            "concat_rows",
        )
    }

    /// Append `vec` (`[G]`) to every cell of `grid` (`[D,H,W,C]`).
    pub fn broadcast_concat(&mut self, grid: VarId, vec: VarId) -> Result<VarId, NnError> {
        let (tg, tv) = (&self.nodes[grid.0].value, &self.nodes[vec.0].value);
        let sg = tg.shape();
        if sg.len() != 4 || tv.shape().len() != 1 {
            return Err(NnError::Shape {
                op: "broadcast_concat",
                msg: format!("{:?} with {:?}", sg, tv.shape()),
            });
        }
        let (d, h, w, c) = (sg[0], sg[1], sg[2], sg[3]);
        let g = tv.shape()[0];
        let cells = d * h * w;
        let mut out = vec![0.0; cells * (c + g)];
        for cell in 0..cells {
            out[cell * (c + g)..cell * (c + g) + c]
                .copy_from_slice(&tg.data()[cell * c..(cell + 1) * c]);
            out[cell * (c + g) + c..(cell + 1) * (c + g)].copy_from_slice(tv.data());
        }
        let rg = self.rg(grid) || self.rg(vec);
        self.push(
            Tensor::from_vec(&[d, h, w, c + g], out),
            Op::BroadcastConcat { grid, vec },
            rg,
            "broadcast_concat",
        )
    }

    /// Elementwise max of two same-shape tensors (ties go to `a`).
    pub fn max_elem(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(NnError::Shape {
                op: "max_elem",
                msg: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut out = Vec::with_capacity(ta.numel());
        let mut take_a = Vec::with_capacity(ta.numel());
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let ta_wins = x >= y;
            out.push(if ta_wins { x } else { y });
            take_a.push(ta_wins);
        }
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::from_vec(&shape, out),
            Op::MaxElem { a, b, take_a },
            rg,
            "max_elem",
        )
    }

    /// Binary cross-entropy of a scalar prediction in (0,1) against a 0/1
    /// label; the prediction is clamped to `[1e-7, 1-1e-7]` first.
    pub fn bce(&mut self, p: VarId, label: f64) -> Result<VarId, NnError> {
        let tp = &self.nodes[p.0].value;
        if tp.numel() != 1 {
            return Err(NnError::Shape {
                op: "bce",
                msg: format!("{:?}", tp.shape()),
            });
        }
        let pc = tp.item().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let loss = -(label * pc.ln() + (1.0 - label) * (1.0 - pc).ln());
        let rg = self.rg(p);
        self.push(Tensor::scalar(loss), Op::Bce { p, label }, rg, "bce")
    }

    /// `scale · Σ x²` as a scalar.
    pub fn sum_squares_scaled(&mut self, x: VarId, scale: f64) -> Result<VarId, NnError> {
        let tx = &self.nodes[x.0].value;
        let v = scale * tx.sum_squares();
        let rg = self.rg(x);
        self.push(
            Tensor::scalar(v),
            Op::SumSquaresScaled { x, scale },
            rg,
            "sum_squares_scaled",
        )
    }

    /// Weighted sum of scalars.
    pub fn weighted_sum(&mut self, terms: &[(VarId, f64)]) -> Result<VarId, NnError> {
        let mut v = 0.0;
        let mut rg = false;
        for &(t, wgt) in terms {
            let tt = &self.nodes[t.0].value;
            if tt.numel() != 1 {
                return Err(NnError::Shape {
                    op: "weighted_sum",
                    msg: format!("{:?}", tt.shape()),
                });
            }
            v += wgt * tt.item();
            rg |= self.rg(t);
        }
        self.push(
            Tensor::scalar(v),
            Op::WeightedSum(terms.to_vec()),
            rg,
            "weighted_sum",
        )
    }

    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId, NnError> {
        let tx = &self.nodes[x.0].value;
        if tx.numel() != shape.iter().product::<usize>() {
            return Err(NnError::Shape {
                op: "reshape",
                msg: format!("{:?} -> {:?}", tx.shape(), shape),
            });
        }
        let out = tx.reshaped(shape);
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    /// MLP helper: affine + ReLU per layer; the last layer stays linear
    /// when `final_linear`.
    pub fn mlp(
        &mut self,
        mut x: VarId,
        layers: &[(VarId, VarId)],
        final_linear: bool,
    ) -> Result<VarId, NnError> {
        for (i, &(w, b)) in layers.iter().enumerate() {
            x = self.matmul(x, w)?;
            x = self.add_bias(x, b)?;
            if !(final_linear && i + 1 == layers.len()) {
                x = self.relu(x)?;
            }
        }
        Ok(x)
    }

    /// Reverse-mode gradients from a scalar loss.
    pub fn backward(&self, loss: VarId) -> Result<Gradients, NnError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NnError::Shape {
                op: "backward",
                msg: "loss must be scalar".into(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = grads[idx].take().unwrap();
            self.accumulate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], v: VarId, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), NnError> {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (n, i, o) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0; n * i];
                    for r in 0..n {
                        let grow = &g.data()[r * o..(r + 1) * o];
                        let darow = &mut da[r * i..(r + 1) * i];
                        for (ii, dv) in darow.iter_mut().enumerate() {
                            let brow = &tb.data()[ii * o..(ii + 1) * o];
                            let mut acc = 0.0;
                            for (&gv, &bv) in grow.iter().zip(brow) {
                                acc += gv * bv;
                            }
                            *dv = acc;
                        }
                    }
                    self.add_grad(grads, *a, Tensor::from_vec(&[n, i], da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; i * o];
                    for r in 0..n {
                        let arow = &ta.data()[r * i..(r + 1) * i];
                        let grow = &g.data()[r * o..(r + 1) * o];
                        for (ii, &av) in arow.iter().enumerate() {
                            let dbrow = &mut db[ii * o..(ii + 1) * o];
                            for (dv, &gv) in dbrow.iter_mut().zip(grow) {
                                *dv += av * gv;
                            }
                        }
                    }
                    self.add_grad(grads, *b, Tensor::from_vec(&[i, o], db));
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    self.add_grad(grads, *x, g.clone());
                }
                if self.rg(*b) {
                    let o = self.nodes[b.0].value.shape()[0];
                    let mut db = vec![0.0; o];
                    for row in g.data().chunks(o) {
                        for (dv, &gv) in db.iter_mut().zip(row) {
                            *dv += gv;
                        }
                    }
                    self.add_grad(grads, *b, Tensor::from_vec(&[o], db));
                }
            }
            Op::Relu(x) => {
                let tx = &self.nodes[x.0].value;
                let dx: Vec<f64> = tx
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.add_grad(grads, *x, Tensor::from_vec(tx.shape(), dx));
            }
            Op::Sigmoid(x) => {
                let ty = &self.nodes[idx].value;
                let dx: Vec<f64> = ty
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                self.add_grad(grads, *x, Tensor::from_vec(ty.shape(), dx));
            }
            Op::Conv3d { x, k, pad } => {
                let (tx, tk) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
                if self.rg(*x) {
                    self.add_grad(grads, *x, conv_input_grad(g, tk, *pad));
                }
                if self.rg(*k) {
                    self.add_grad(grads, *k, conv_kernel_grad(tx, g, *pad, tk.shape()));
                }
            }
            Op::Deconv3d { x, k, pad } => {
                let (tx, tk) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
                if self.rg(*x) {
                    self.add_grad(grads, *x, conv_forward(g, tk, *pad));
                }
                if self.rg(*k) {
                    // deconv(x) = convᵀ(x): ∂⟨g, convᵀ(x)⟩/∂k with the
                    // roles of input and output swapped.
                    self.add_grad(grads, *k, conv_kernel_grad(g, tx, *pad, tk.shape()));
                }
            }
            Op::ScatterMaxPool { x, argmax } => {
                let tx = &self.nodes[x.0].value;
                let h = tx.shape()[1];
                let mut dx = vec![0.0; tx.numel()];
                for (slot, &src) in argmax.iter().enumerate() {
                    if src >= 0 {
                        let ch = slot % h;
                        dx[src as usize * h + ch] += g.data()[slot];
                    }
                }
                self.add_grad(grads, *x, Tensor::from_vec(tx.shape(), dx));
            }
            Op::RowsMean { x, rows } => {
                if rows.is_empty() {
                    return Ok(());
                }
                let tx = &self.nodes[x.0].value;
                let c = tx.shape()[1];
                let inv = 1.0 / rows.len() as f64;
                let mut dx = vec![0.0; tx.numel()];
                for &r in rows {
                    for (dv, &gv) in dx[r * c..(r + 1) * c].iter_mut().zip(g.data()) {
                        *dv += gv * inv;
                    }
                }
                self.add_grad(grads, *x, Tensor::from_vec(tx.shape(), dx));
            }
            Op::GridMean(x) => {
                let tx = &self.nodes[x.0].value;
                let c = *tx.shape().last().unwrap();
                let cells = tx.numel() / c;
                let inv = 1.0 / cells as f64;
                let mut dx = vec![0.0; tx.numel()];
                for cell in 0..cells {
                    for (dv, &gv) in dx[cell * c..(cell + 1) * c].iter_mut().zip(g.data()) {
                        *dv = gv * inv;
                    }
                }
                self.add_grad(grads, *x, Tensor::from_vec(tx.shape(), dx));
            }
            Op::GridMax { x, argmax } => {
                let tx = &self.nodes[x.0].value;
                let c = *tx.shape().last().unwrap();
                let mut dx = vec![0.0; tx.numel()];
                for (ch, &cell) in argmax.iter().enumerate() {
                    dx[cell * c + ch] += g.data()[ch];
                }
                self.add_grad(grads, *x, Tensor::from_vec(tx.shape(), dx));
            }
            Op::ConcatRows { a, b, ca, cb } => {
                let rows = self.nodes[a.0].value.shape()[0];
                let (ca, cb) = (*ca, *cb);
                if self.rg(*a) {
                    let mut da = vec![0.0; rows * ca];
                    for r in 0..rows {
                        da[r * ca..(r + 1) * ca]
                            .copy_from_slice(&g.data()[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                    self.add_grad(grads, *a, Tensor::from_vec(&[rows, ca], da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; rows * cb];
                    for r in 0..rows {
                        db[r * cb..(r + 1) * cb].copy_from_slice(
                            &g.data()[r * (ca + cb) + ca..(r + 1) * (ca + cb)],
                        );
                    }
                    self.add_grad(grads, *b, Tensor::from_vec(&[rows, cb], db));
                }
            }
            Op::ConcatVec(a, b) => {
                let na = self.nodes[a.0].value.numel();
                let nb = self.nodes[b.0].value.numel();
                if self.rg(*a) {
                    self.add_grad(
                        grads,
                        *a,
                        Tensor::from_vec(&[na], g.data()[..na].to_vec()),
                    );
                }
                if self.rg(*b) {
                    self.add_grad(
                        grads,
                        *b,
                        Tensor::from_vec(&[nb], g.data()[na..].to_vec()),
                    );
                }
            }
            Op::BroadcastConcat { grid, vec } => {
                let tg = &self.nodes[grid.0].value;
                let tv = &self.nodes[vec.0].value;
                let c = *tg.shape().last().unwrap();
                let gdim = tv.shape()[0];
                let cells = tg.numel() / c;
                if self.rg(*grid) {
                    let mut dg = vec![0.0; tg.numel()];
                    for cell in 0..cells {
                        dg[cell * c..(cell + 1) * c]
                            .copy_from_slice(&g.data()[cell * (c + gdim)..cell * (c + gdim) + c]);
                    }
                    self.add_grad(grads, *grid, Tensor::from_vec(tg.shape(), dg));
                }
                if self.rg(*vec) {
                    let mut dv = vec![0.0; gdim];
                    for cell in 0..cells {
                        let base = cell * (c + gdim) + c;
                        for (dvv, &gv) in dv.iter_mut().zip(&g.data()[base..base + gdim]) {
                            *dvv += gv;
                        }
                    }
                    self.add_grad(grads, *vec, Tensor::from_vec(&[gdim], dv));
                }
            }
            Op::MaxElem { a, b, take_a } => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                if self.rg(*a) {
                    let da: Vec<f64> = take_a
                        .iter()
                        .zip(g.data())
                        .map(|(&t, &gv)| if t { gv } else { 0.0 })
                        .collect();
                    self.add_grad(grads, *a, Tensor::from_vec(&shape, da));
                }
                if self.rg(*b) {
                    let db: Vec<f64> = take_a
                        .iter()
                        .zip(g.data())
                        .map(|(&t, &gv)| if t { 0.0 } else { gv })
                        .collect();
                    self.add_grad(grads, *b, Tensor::from_vec(&shape, db));
                }
            }
            Op::Bce { p, label } => {
                let pv = self.nodes[p.0].value.item();
                // Zero gradient in the clamped region.
                let d = if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&pv) {
                    -label / pv + (1.0 - label) / (1.0 - pv)
                } else {
                    0.0
                };
                self.add_grad(grads, *p, Tensor::scalar(d * g.item()));
            }
            Op::SumSquaresScaled { x, scale } => {
                let tx = &self.nodes[x.0].value;
                let gv = g.item();
                let dx: Vec<f64> = tx.data().iter().map(|&v| 2.0 * scale * v * gv).collect();
                self.add_grad(grads, *x, Tensor::from_vec(tx.shape(), dx));
            }
            Op::WeightedSum(terms) => {
                let gv = g.item();
                for &(t, wgt) in terms {
                    if self.rg(t) {
                        self.add_grad(grads, t, Tensor::scalar(wgt * gv));
                    }
                }
            }
            Op::Reshape(x) => {
                let tx = &self.nodes[x.0].value;
                self.add_grad(grads, *x, Tensor::from_vec(tx.shape(), g.data().to_vec()));
            }
        }
        Ok(())
    }
}

fn check_conv_shapes(
    x: &Tensor,
    k: &Tensor,
    pad: Padding,
    transposed: bool,
) -> Result<(), NnError> {
    let op: &'static str = if transposed { "deconv3d" } else { "conv3d" };
    let (sx, sk) = (x.shape(), k.shape());
    if sx.len() != 4 || sk.len() != 5 || sk[0] != 3 || sk[1] != 3 || sk[2] != 3 {
        return Err(NnError::Shape {
            op,
            msg: format!("x {sx:?}, kernel {sk:?}"),
        });
    }
    let chan = if transposed { sk[4] } else { sk[3] };
    if sx[3] != chan {
        return Err(NnError::Shape {
            op,
            msg: format!("x channels {} vs kernel {}", sx[3], chan),
        });
    }
    if !transposed && pad == Padding::Valid && (sx[0] < 3 || sx[1] < 3 || sx[2] < 3) {
        return Err(NnError::Shape {
            op,
            msg: format!("spatial dims {sx:?} too small for valid padding"),
        });
    }
    Ok(())
}

/// out[od,oh,ow,co] = Σ x[od+kd-off, ...][ci] · k[kd,kh,kw,ci,co]
fn conv_forward(x: &Tensor, k: &Tensor, pad: Padding) -> Tensor {
    let s = x.shape();
    let (d, h, w, ci) = (s[0], s[1], s[2], s[3]);
    let co = k.shape()[4];
    let (dd, hh, ww, off) = match pad {
        Padding::Same => (d, h, w, 1i64),
        Padding::Valid => (d - 2, h - 2, w - 2, 0i64),
    };
    let mut out = vec![0.0; dd * hh * ww * co];
    let xd = x.data();
    let kd = k.data();
    for od in 0..dd {
        for oh in 0..hh {
            for ow in 0..ww {
                let obase = ((od * hh + oh) * ww + ow) * co;
                for tkd in 0..3usize {
                    let id = od as i64 + tkd as i64 - off;
                    if id < 0 || id >= d as i64 {
                        continue;
                    }
                    for tkh in 0..3usize {
                        let ih = oh as i64 + tkh as i64 - off;
                        if ih < 0 || ih >= h as i64 {
                            continue;
                        }
                        for tkw in 0..3usize {
                            let iw = ow as i64 + tkw as i64 - off;
                            if iw < 0 || iw >= w as i64 {
                                continue;
                            }
                            let ibase =
                                (((id as usize) * h + ih as usize) * w + iw as usize) * ci;
                            let kbase = ((tkd * 3 + tkh) * 3 + tkw) * ci * co;
                            for c_in in 0..ci {
                                let a = xd[ibase + c_in];
                                if a == 0.0 {
                                    continue;
                                }
                                let krow = kbase + c_in * co;
                                let orow = &mut out[obase..obase + co];
                                let ks = &kd[krow..krow + co];
                                for (ov, &kv) in orow.iter_mut().zip(ks) {
                                    *ov += a * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[dd, hh, ww, co], out)
}

/// Adjoint of `conv_forward` in its input argument: maps conv-output-space
/// `y` back to conv-input-space. Also the forward pass of `deconv3d`.
fn conv_input_grad(y: &Tensor, k: &Tensor, pad: Padding) -> Tensor {
    let s = y.shape();
    let (dd, hh, ww, co) = (s[0], s[1], s[2], s[3]);
    let ci = k.shape()[3];
    let (d, h, w, off) = match pad {
        Padding::Same => (dd, hh, ww, 1i64),
        Padding::Valid => (dd + 2, hh + 2, ww + 2, 0i64),
    };
    let mut out = vec![0.0; d * h * w * ci];
    let yd = y.data();
    let kd = k.data();
    for od in 0..dd {
        for oh in 0..hh {
            for ow in 0..ww {
                let obase = ((od * hh + oh) * ww + ow) * co;
                for tkd in 0..3usize {
                    let id = od as i64 + tkd as i64 - off;
                    if id < 0 || id >= d as i64 {
                        continue;
                    }
                    for tkh in 0..3usize {
                        let ih = oh as i64 + tkh as i64 - off;
                        if ih < 0 || ih >= h as i64 {
                            continue;
                        }
                        for tkw in 0..3usize {
                            let iw = ow as i64 + tkw as i64 - off;
                            if iw < 0 || iw >= w as i64 {
                                continue;
                            }
                            let ibase =
                                (((id as usize) * h + ih as usize) * w + iw as usize) * ci;
                            let kbase = ((tkd * 3 + tkh) * 3 + tkw) * ci * co;
                            let yrow = &yd[obase..obase + co];
                            for c_in in 0..ci {
                                let krow = kbase + c_in * co;
                                let ks = &kd[krow..krow + co];
                                let mut acc = 0.0;
                                for (&yv, &kv) in yrow.iter().zip(ks) {
                                    acc += yv * kv;
                                }
                                out[ibase + c_in] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[d, h, w, ci], out)
}

/// ∂⟨y, conv(x;k)⟩/∂k — gradient of the kernel given conv input `x` and
/// upstream gradient `y` in conv-output space.
fn conv_kernel_grad(x: &Tensor, y: &Tensor, pad: Padding, kshape: &[usize]) -> Tensor {
    let s = x.shape();
    let (d, h, w, ci) = (s[0], s[1], s[2], s[3]);
    let sy = y.shape();
    let (dd, hh, ww, co) = (sy[0], sy[1], sy[2], sy[3]);
    let off = match pad {
        Padding::Same => 1i64,
        Padding::Valid => 0i64,
    };
    let mut out = vec![0.0; 27 * ci * co];
    let xd = x.data();
    let yd = y.data();
    for od in 0..dd {
        for oh in 0..hh {
            for ow in 0..ww {
                let obase = ((od * hh + oh) * ww + ow) * co;
                for tkd in 0..3usize {
                    let id = od as i64 + tkd as i64 - off;
                    if id < 0 || id >= d as i64 {
                        continue;
                    }
                    for tkh in 0..3usize {
                        let ih = oh as i64 + tkh as i64 - off;
                        if ih < 0 || ih >= h as i64 {
                            continue;
                        }
                        for tkw in 0..3usize {
                            let iw = ow as i64 + tkw as i64 - off;
                            if iw < 0 || iw >= w as i64 {
                                continue;
                            }
                            let ibase =
                                (((id as usize) * h + ih as usize) * w + iw as usize) * ci;
                            let kbase = ((tkd * 3 + tkh) * 3 + tkw) * ci * co;
                            let yrow = &yd[obase..obase + co];
                            for c_in in 0..ci {
                                let a = xd[ibase + c_in];
                                if a == 0.0 {
                                    continue;
                                }
                                let krow = kbase + c_in * co;
                                let kout = &mut out[krow..krow + co];
                                for (kv, &yv) in kout.iter_mut().zip(yrow) {
                                    *kv += a * yv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(kshape, out)
}
