use std::cell::RefCell;
use std::fmt;

use super::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryOp {
    Neg,
    Tanh,
    Relu,
    Exp,
    Log,
    Square,
    Sqrt,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReduceOp {
    Sum,
    Mean,
    Var,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Binary(BinaryOp, usize, usize),
    Unary(UnaryOp, usize),
    Scale(usize, T),
    Offset(usize),
    Clamp(usize, T, T),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Linear(usize, usize, usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Transpose(usize),
    Reduce(ReduceOp, usize, Option<usize>),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Nodes are appended as operations run and never change afterwards.
/// Gradients accumulate across [`Tape::backward`] calls until
/// [`Tape::zero_grad`].
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Vec<T>>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that receives gradients.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf excluded from the reverse pass.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Every node reachable from `loss` that requires a gradient has the
    /// contribution of this pass added to its accumulator.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<(), TensorError> {
        assert!(std::ptr::eq(loss.tape, self), "loss belongs to another tape");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let mut pass: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        if root.requires_grad {
            pass[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = pass[id].take() else {
                continue;
            };
            propagate(&nodes, id, &g, &mut pass);
            let mut acc = self.grads.borrow_mut();
            if acc.len() < nodes.len() {
                acc.resize(nodes.len(), None);
            }
            match &mut acc[id] {
                Some(a) => a.iter_mut().zip(&g).for_each(|(a, &g)| *a += g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn grad_slot<'a, T: Real>(nodes: &[Node<T>], pass: &'a mut [Option<Vec<T>>], id: usize) -> Option<&'a mut Vec<T>> {
    if !nodes[id].requires_grad {
        return None;
    }
    Some(pass[id].get_or_insert_with(|| vec![T::zero(); nodes[id].value.numel()]))
}

fn propagate<T: Real>(nodes: &[Node<T>], id: usize, g: &[T], pass: &mut [Option<Vec<T>>]) {
    let node = &nodes[id];
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        &Op::Binary(op, a, b) => {
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let shape = node.value.shape();
            let la = Layout::new(av.shape(), shape);
            let lb = Layout::new(bv.shape(), shape);
            let (ad, bd) = (av.data(), bv.data());
            if let Some(ga) = grad_slot(nodes, pass, a) {
                let one = T::one();
                match op {
                    BinaryOp::Add | BinaryOp::Sub => accumulate(ga, &la, g, ad, &lb, bd, |_, _| one),
                    BinaryOp::Mul => accumulate(ga, &la, g, ad, &lb, bd, |_, y| y),
                    BinaryOp::Div => accumulate(ga, &la, g, ad, &lb, bd, |_, y| one / y),
                    BinaryOp::Min => accumulate(ga, &la, g, ad, &lb, bd, |x, y| if x <= y { one } else { T::zero() }),
                }
            }
            if let Some(gb) = grad_slot(nodes, pass, b) {
                let one = T::one();
                match op {
                    BinaryOp::Add => accumulate(gb, &lb, g, bd, &la, ad, |_, _| one),
                    BinaryOp::Sub => accumulate(gb, &lb, g, bd, &la, ad, |_, _| -one),
                    BinaryOp::Mul => accumulate(gb, &lb, g, bd, &la, ad, |_, x| x),
                    BinaryOp::Div => accumulate(gb, &lb, g, bd, &la, ad, |y, x| -x / (y * y)),
                    BinaryOp::Min => accumulate(gb, &lb, g, bd, &la, ad, |y, x| if x <= y { T::zero() } else { one }),
                }
            }
        }
        &Op::Unary(op, x) => {
            let xd = nodes[x].value.data();
            if let Some(gx) = grad_slot(nodes, pass, x) {
                let one = T::one();
                let two = one + one;
                let each = |gx: &mut [T], d: &dyn Fn(usize) -> T| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * d(i);
                    }
                };
                match op {
                    UnaryOp::Neg => gx.iter_mut().zip(g).for_each(|(a, &g)| *a -= g),
                    UnaryOp::Tanh => each(gx, &|i| one - out[i] * out[i]),
                    UnaryOp::Relu => gx.iter_mut().zip(g).zip(xd).for_each(|((a, &g), &x)| {
                        if x > T::zero() {
                            *a += g
                        }
                    }),
                    UnaryOp::Exp => each(gx, &|i| out[i]),
                    UnaryOp::Log => each(gx, &|i| one / xd[i]),
                    UnaryOp::Square => each(gx, &|i| two * xd[i]),
                    UnaryOp::Sqrt => each(gx, &|i| one / (two * out[i])),
                    UnaryOp::Softplus => each(gx, &|i| one / (one + (-xd[i]).exp())),
                }
            }
        }
        &Op::Scale(x, c) => {
            if let Some(gx) = grad_slot(nodes, pass, x) {
                gx.iter_mut().zip(g).for_each(|(a, &g)| *a += g * c);
            }
        }
        &Op::Offset(x) => {
            if let Some(gx) = grad_slot(nodes, pass, x) {
                gx.iter_mut().zip(g).for_each(|(a, &g)| *a += g);
            }
        }
        &Op::Clamp(x, lo, hi) => {
            let xd = nodes[x].value.data();
            if let Some(gx) = grad_slot(nodes, pass, x) {
                for i in 0..g.len() {
                    if xd[i] >= lo && xd[i] <= hi {
                        gx[i] += g[i];
                    }
                }
            }
        }
        &Op::MatMul(a, b) => {
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let (m, k) = av.dims2().expect("recorded matmul operand");
            let n = bv.dims2().expect("recorded matmul operand").1;
            let (ad, bd) = (av.data(), bv.data());
            if let Some(ga) = grad_slot(nodes, pass, a) {
                // ga += g . b^T
                T::gemm(m, n, k, g, n, 1, bd, 1, n, ga, true);
            }
            if let Some(gb) = grad_slot(nodes, pass, b) {
                // gb += a^T . g
                T::gemm(k, m, n, ad, 1, k, g, n, 1, gb, true);
            }
        }
        &Op::MatMulT(a, b) => {
            // out = a . b^T with a: m x k, b: n x k
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let (m, k) = av.dims2().expect("recorded matmul operand");
            let n = bv.dims2().expect("recorded matmul operand").0;
            let (ad, bd) = (av.data(), bv.data());
            if let Some(ga) = grad_slot(nodes, pass, a) {
                // ga += g . b
                T::gemm(m, n, k, g, n, 1, bd, k, 1, ga, true);
            }
            if let Some(gb) = grad_slot(nodes, pass, b) {
                // gb += g^T . a
                T::gemm(n, m, k, g, 1, n, ad, k, 1, gb, true);
            }
        }
        &Op::Linear(x, w, b) => {
            let xv = &nodes[x].value;
            let (m, k) = xv.dims2().expect("recorded linear input");
            let n = node.value.shape()[1];
            let (xd, wd) = (xv.data(), nodes[w].value.data());
            if let Some(gx) = grad_slot(nodes, pass, x) {
                T::gemm(m, n, k, g, n, 1, wd, k, 1, gx, true);
            }
            if let Some(gw) = grad_slot(nodes, pass, w) {
                T::gemm(n, m, k, g, 1, n, xd, k, 1, gw, true);
            }
            if let Some(gb) = grad_slot(nodes, pass, b) {
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
            train,
        } => {
            let (x, gamma, beta, train) = (*x, *gamma, *beta, *train);
            let xv = &nodes[x].value;
            let (rows, d) = xv.dims2().expect("recorded batchnorm input");
            let xd = xv.data();
            let gd = nodes[gamma].value.data();
            let mut sum_dy = vec![T::zero(); d];
            let mut sum_dy_xhat = vec![T::zero(); d];
            for (gr, xr) in g.chunks_exact(d).zip(xd.chunks_exact(d)) {
                for j in 0..d {
                    let xhat = (xr[j] - mean[j]) * inv_std[j];
                    sum_dy[j] += gr[j];
                    sum_dy_xhat[j] += gr[j] * xhat;
                }
            }
            if let Some(gg) = grad_slot(nodes, pass, gamma) {
                gg.iter_mut().zip(&sum_dy_xhat).for_each(|(a, &s)| *a += s);
            }
            if let Some(gb) = grad_slot(nodes, pass, beta) {
                gb.iter_mut().zip(&sum_dy).for_each(|(a, &s)| *a += s);
            }
            if let Some(gx) = grad_slot(nodes, pass, x) {
                let scale: Vec<T> = (0..d).map(|j| gd[j] * inv_std[j]).collect();
                if train {
                    let n = T::from_usize(rows).expect("extent fits");
                    let inv_n = T::one() / n;
                    for ((gxr, gr), xr) in gx.chunks_exact_mut(d).zip(g.chunks_exact(d)).zip(xd.chunks_exact(d)) {
                        for j in 0..d {
                            let xhat = (xr[j] - mean[j]) * inv_std[j];
                            gxr[j] += scale[j] * inv_n * (n * gr[j] - sum_dy[j] - xhat * sum_dy_xhat[j]);
                        }
                    }
                } else {
                    for (gxr, gr) in gx.chunks_exact_mut(d).zip(g.chunks_exact(d)) {
                        for j in 0..d {
                            gxr[j] += scale[j] * gr[j];
                        }
                    }
                }
            }
        }
        &Op::Transpose(x) => {
            if let Some(gx) = grad_slot(nodes, pass, x) {
                let (r, c) = node.value.dims2().expect("recorded transpose");
                // out is r x c, input is c x r
                for i in 0..r {
                    for j in 0..c {
                        gx[j * r + i] += g[i * c + j];
                    }
                }
            }
        }
        &Op::Reduce(op, x, axis) => {
            let xv = &nodes[x].value;
            let xd = xv.data();
            let (outer, len, inner) = axis_split(xv.shape(), axis);
            if let Some(gx) = grad_slot(nodes, pass, x) {
                let nlen = T::from_usize(len).expect("extent fits");
                for o in 0..outer {
                    for i in 0..inner {
                        let oi = o * inner + i;
                        let mean = if op == ReduceOp::Var {
                            (0..len).map(|j| xd[(o * len + j) * inner + i]).sum::<T>() / nlen
                        } else {
                            T::zero()
                        };
                        for j in 0..len {
                            let idx = (o * len + j) * inner + i;
                            gx[idx] += match op {
                                ReduceOp::Sum => g[oi],
                                ReduceOp::Mean => g[oi] / nlen,
                                ReduceOp::Var => g[oi] * (xd[idx] - mean) * (T::one() + T::one()) / nlen,
                            };
                        }
                    }
                }
            }
        }
        Op::Concat(parts, axis) => {
            let (_, total_cols) = node.value.dims2().expect("recorded concat");
            let mut offset = 0;
            for &p in parts {
                let (r, c) = nodes[p].value.dims2().expect("recorded concat");
                if let Some(gp) = grad_slot(nodes, pass, p) {
                    if *axis == 0 {
                        let start = offset * total_cols;
                        gp.iter_mut().zip(&g[start..start + r * c]).for_each(|(a, &g)| *a += g);
                    } else {
                        for i in 0..r {
                            for j in 0..c {
                                gp[i * c + j] += g[i * total_cols + offset + j];
                            }
                        }
                    }
                }
                offset += if *axis == 0 { r } else { c };
            }
        }
        &Op::Slice(x, axis, start, _end) => {
            let (_, cols) = nodes[x].value.dims2().expect("recorded slice");
            let (r, c) = node.value.dims2().expect("recorded slice");
            if let Some(gx) = grad_slot(nodes, pass, x) {
                for i in 0..r {
                    for j in 0..c {
                        let src = if axis == 0 {
                            (start + i) * cols + j
                        } else {
                            i * cols + start + j
                        };
                        gx[src] += g[i * c + j];
                    }
                }
            }
        }
    }
}

/// Position of a (possibly broadcast) operand inside an output viewed as
/// `rows x cols`, where `cols` is the last output extent.
struct Layout {
    /// Start of each output row; `None` means `r * row_stride`.
    table: Option<Vec<usize>>,
    row_stride: usize,
    col_stride: usize,
    rows: usize,
    cols: usize,
}

impl Layout {
    fn new(src: &[usize], out: &[usize]) -> Self {
        let rank = out.len();
        let mut strides = vec![0usize; rank];
        let mut s = 1;
        for k in (0..rank).rev() {
            let d = if k + src.len() >= rank {
                src[k + src.len() - rank]
            } else {
                1
            };
            strides[k] = if d == 1 { 0 } else { s };
            s *= d;
        }
        let (cols, col_stride) = match rank {
            0 => (1, 0),
            _ => (out[rank - 1], strides[rank - 1]),
        };
        let lead = &out[..rank.saturating_sub(1)];
        let rows: usize = lead.iter().product();
        if lead.len() <= 1 {
            return Self {
                table: None,
                row_stride: strides.first().copied().filter(|_| rank == 2).unwrap_or(0),
                col_stride,
                rows,
                cols,
            };
        }
        let mut table = Vec::with_capacity(rows);
        let mut counter = vec![0usize; lead.len()];
        let mut pos = 0usize;
        for _ in 0..rows {
            table.push(pos);
            for k in (0..lead.len()).rev() {
                counter[k] += 1;
                pos += strides[k];
                if counter[k] < lead[k] {
                    break;
                }
                pos -= strides[k] * counter[k];
                counter[k] = 0;
            }
        }
        Self {
            table: Some(table),
            row_stride: 0,
            col_stride,
            rows,
            cols,
        }
    }

    #[inline]
    fn base(&self, r: usize) -> usize {
        match &self.table {
            None => r * self.row_stride,
            Some(t) => t[r],
        }
    }
}

fn zip_map<T: Real>(ad: &[T], la: &Layout, bd: &[T], lb: &Layout, f: impl Fn(T, T) -> T) -> Vec<T> {
    let cols = la.cols;
    let mut out = Vec::with_capacity(la.rows * cols);
    for r in 0..la.rows {
        let (ra, rb) = (la.base(r), lb.base(r));
        match (la.col_stride, lb.col_stride) {
            (1, 1) => out.extend(ad[ra..ra + cols].iter().zip(&bd[rb..rb + cols]).map(|(&x, &y)| f(x, y))),
            (1, 0) => {
                let y = bd[rb];
                out.extend(ad[ra..ra + cols].iter().map(|&x| f(x, y)))
            }
            (0, 1) => {
                let x = ad[ra];
                out.extend(bd[rb..rb + cols].iter().map(|&y| f(x, y)))
            }
            (ca, cb) => out.extend((0..cols).map(|c| f(ad[ra + c * ca], bd[rb + c * cb]))),
        }
    }
    out
}

/// `gx[own] += g * d(own value, other value)` over every output position.
fn accumulate<T: Real>(gx: &mut [T], lx: &Layout, g: &[T], xd: &[T], ly: &Layout, yd: &[T], d: impl Fn(T, T) -> T) {
    let cols = lx.cols;
    for r in 0..lx.rows {
        let (rx, ry) = (lx.base(r), ly.base(r));
        let gr = &g[r * cols..(r + 1) * cols];
        match (lx.col_stride, ly.col_stride) {
            (1, 1) => {
                for (((a, &gi), &x), &y) in gx[rx..rx + cols]
                    .iter_mut()
                    .zip(gr)
                    .zip(&xd[rx..rx + cols])
                    .zip(&yd[ry..ry + cols])
                {
                    *a += gi * d(x, y);
                }
            }
            (1, 0) => {
                let y = yd[ry];
                for ((a, &gi), &x) in gx[rx..rx + cols].iter_mut().zip(gr).zip(&xd[rx..rx + cols]) {
                    *a += gi * d(x, y);
                }
            }
            (cx, cy) => {
                let mut acc = T::zero();
                for (c, &gi) in gr.iter().enumerate() {
                    let (ix, iy) = (rx + c * cx, ry + c * cy);
                    if cx == 0 {
                        acc += gi * d(xd[ix], yd[iy]);
                    } else {
                        gx[ix] += gi * d(xd[ix], yd[iy]);
                    }
                }
                if cx == 0 {
                    gx[rx] += acc;
                }
            }
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k + a.len() >= rank { a[k + a.len() - rank] } else { 1 };
        let db = if k + b.len() >= rank { b[k + b.len() - rank] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn axis_split(shape: &[usize], axis: Option<usize>) -> (usize, usize, usize) {
    match axis {
        None => (1, shape.iter().product(), 1),
        Some(k) => (shape[..k].iter().product(), shape[k], shape[k + 1..].iter().product()),
    }
}

// fallible, so these cannot be the std operator traits
#[allow(clippy::should_implement_trait)]
impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient; `None` when this node does not require one.
    pub fn grad(&self) -> Option<Tensor<T>> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        if !node.requires_grad {
            return None;
        }
        let grads = self.tape.grads.borrow();
        let data = grads
            .get(self.id)
            .and_then(Option::clone)
            .unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
        Some(Tensor::from_vec(node.value.shape(), data).expect("gradient matches value shape"))
    }

    fn check_same_tape(&self, other: &Var<'t, T>) {
        assert!(std::ptr::eq(self.tape, other.tape), "operands live on different tapes");
    }

    fn binary(self, other: Var<'t, T>, op: BinaryOp, name: &'static str) -> Result<Self, TensorError> {
        self.check_same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let shape =
                broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::shape(name, a.shape(), b.shape()))?;
            let la = Layout::new(a.shape(), &shape);
            let lb = Layout::new(b.shape(), &shape);
            let (ad, bd) = (a.data(), b.data());
            let out = match op {
                BinaryOp::Add => zip_map(ad, &la, bd, &lb, |x, y| x + y),
                BinaryOp::Sub => zip_map(ad, &la, bd, &lb, |x, y| x - y),
                BinaryOp::Mul => zip_map(ad, &la, bd, &lb, |x, y| x * y),
                BinaryOp::Div => {
                    if bd.iter().any(|&y| y == T::zero()) {
                        return Err(TensorError::domain(name, "division by exact zero"));
                    }
                    zip_map(ad, &la, bd, &lb, |x, y| x / y)
                }
                BinaryOp::Min => zip_map(ad, &la, bd, &lb, |x, y| if x <= y { x } else { y }),
            };
            Tensor::from_vec(&shape, out)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Binary(op, self.id, other.id), rg))
    }

    fn unary(self, op: UnaryOp) -> Result<Self, TensorError> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if matches!(op, UnaryOp::Log | UnaryOp::Sqrt) {
                if let Some(bad) = x.data().iter().find(|&&v| v < T::zero()) {
                    let name = if op == UnaryOp::Log { "log" } else { "sqrt" };
                    return Err(TensorError::domain(name, format!("negative input {bad}")));
                }
            }
            match op {
                UnaryOp::Neg => x.map(|v| -v),
                UnaryOp::Tanh => x.map(|v| v.tanh()),
                UnaryOp::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
                UnaryOp::Exp => x.map(|v| v.exp()),
                UnaryOp::Log => x.map(|v| v.ln()),
                UnaryOp::Square => x.map(|v| v * v),
                UnaryOp::Sqrt => x.map(|v| v.sqrt()),
                UnaryOp::Softplus => x.map(|v| v.max(T::zero()) + (-v.abs()).exp().ln_1p()),
            }
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Unary(op, self.id), rg))
    }

    fn infallible_unary(self, op: UnaryOp) -> Self {
        self.unary(op).expect("operation has no domain restriction")
    }

    fn derived(self, value: Tensor<T>, op: Op<T>) -> Self {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Self, TensorError> {
        self.binary(other, BinaryOp::Add, "add")
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Self, TensorError> {
        self.binary(other, BinaryOp::Sub, "sub")
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Self, TensorError> {
        self.binary(other, BinaryOp::Mul, "mul")
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Self, TensorError> {
        self.binary(other, BinaryOp::Div, "div")
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(self, other: Var<'t, T>) -> Result<Self, TensorError> {
        self.binary(other, BinaryOp::Min, "minimum")
    }

    pub fn neg(self) -> Self {
        self.infallible_unary(UnaryOp::Neg)
    }

    pub fn tanh(self) -> Self {
        self.infallible_unary(UnaryOp::Tanh)
    }

    /// Rectifier with derivative 0 at exactly 0.
    pub fn relu(self) -> Self {
        self.infallible_unary(UnaryOp::Relu)
    }

    pub fn exp(self) -> Self {
        self.infallible_unary(UnaryOp::Exp)
    }

    pub fn log(self) -> Result<Self, TensorError> {
        self.unary(UnaryOp::Log)
    }

    pub fn square(self) -> Self {
        self.infallible_unary(UnaryOp::Square)
    }

    pub fn sqrt(self) -> Result<Self, TensorError> {
        self.unary(UnaryOp::Sqrt)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Self {
        self.infallible_unary(UnaryOp::Softplus)
    }

    pub fn scale(self, c: T) -> Self {
        let value = self.tape.nodes.borrow()[self.id].value.scaled(c);
        self.derived(value, Op::Scale(self.id, c))
    }

    pub fn offset(self, c: T) -> Self {
        let value = self.tape.nodes.borrow()[self.id].value.map(|x| x + c);
        self.derived(value, Op::Offset(self.id))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the input lies outside.
    pub fn clamp(self, lo: T, hi: T) -> Self {
        let value = self.tape.nodes.borrow()[self.id].value.map(|x| x.max(lo).min(hi));
        self.derived(value, Op::Clamp(self.id, lo, hi))
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Self, TensorError> {
        self.check_same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul(&nodes[other.id].value)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    /// `self . other^T`, without materialising the transpose.
    pub fn matmul_t(self, other: Var<'t, T>) -> Result<Self, TensorError> {
        self.check_same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (m, k) = a.dims2()?;
            let (n, k2) = b.dims2()?;
            if k != k2 {
                return Err(TensorError::shape("matmul_t", a.shape(), b.shape()));
            }
            let mut out = vec![T::zero(); m * n];
            T::gemm(m, k, n, a.data(), k, 1, b.data(), 1, k, &mut out, false);
            Tensor::from_vec(&[m, n], out)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMulT(self.id, other.id), rg))
    }

    /// Affine layer `self . weight^T + bias` with `weight` as `out x in`.
    pub fn linear(self, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Self, TensorError> {
        self.check_same_tape(&weight);
        self.check_same_tape(&bias);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, w, b) = (&nodes[self.id].value, &nodes[weight.id].value, &nodes[bias.id].value);
            let (m, k) = x.dims2()?;
            let (n, k2) = w.dims2()?;
            if k != k2 {
                return Err(TensorError::shape("linear", x.shape(), w.shape()));
            }
            if b.shape() != [n] {
                return Err(TensorError::shape("linear", w.shape(), b.shape()));
            }
            let mut out = Vec::with_capacity(m * n);
            for _ in 0..m {
                out.extend_from_slice(b.data());
            }
            T::gemm(m, k, n, x.data(), k, 1, w.data(), 1, k, &mut out, true);
            Tensor::from_vec(&[m, n], out)?
        };
        let rg = self.tape.requires(&[self.id, weight.id, bias.id]);
        Ok(self.tape.push(value, Op::Linear(self.id, weight.id, bias.id), rg))
    }

    /// Batch normalisation over rows of a 2-D value.
    ///
    /// With `stats == None` the mean and biased variance of the batch are used
    /// and returned; otherwise the given `(mean, var)` are treated as constants.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: T,
        stats: Option<(&[T], &[T])>,
    ) -> Result<(Self, Vec<T>, Vec<T>), TensorError> {
        self.check_same_tape(&gamma);
        self.check_same_tape(&beta);
        let (value, mean, var, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (rows, d) = x.dims2()?;
            for p in [&nodes[gamma.id].value, &nodes[beta.id].value] {
                if p.shape() != [d] {
                    return Err(TensorError::shape("batch_norm", x.shape(), p.shape()));
                }
            }
            let xd = x.data();
            let (mean, var) = match stats {
                Some((m, v)) => {
                    if m.len() != d || v.len() != d {
                        return Err(TensorError::contract(
                            "batch_norm",
                            "statistics do not match the feature count",
                        ));
                    }
                    (m.to_vec(), v.to_vec())
                }
                None => {
                    if rows == 0 {
                        return Err(TensorError::contract("batch_norm", "empty batch"));
                    }
                    let n = T::from_usize(rows).expect("extent fits");
                    let mut mean = vec![T::zero(); d];
                    for r in xd.chunks_exact(d) {
                        mean.iter_mut().zip(r).for_each(|(m, &v)| *m += v);
                    }
                    mean.iter_mut().for_each(|m| *m /= n);
                    let mut var = vec![T::zero(); d];
                    for r in xd.chunks_exact(d) {
                        for j in 0..d {
                            let c = r[j] - mean[j];
                            var[j] += c * c;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= n);
                    (mean, var)
                }
            };
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            if inv_std.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::domain("batch_norm", "variance plus eps is not positive"));
            }
            let (gd, bd) = (nodes[gamma.id].value.data(), nodes[beta.id].value.data());
            let mut out = Vec::with_capacity(rows * d);
            for r in xd.chunks_exact(d) {
                for j in 0..d {
                    out.push((r[j] - mean[j]) * inv_std[j] * gd[j] + bd[j]);
                }
            }
            (Tensor::from_vec(&[rows, d], out)?, mean, var, inv_std)
        };
        let rg = self.tape.requires(&[self.id, gamma.id, beta.id]);
        let op = Op::BatchNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            mean: mean.clone(),
            inv_std,
            train: stats.is_none(),
        };
        Ok((self.tape.push(value, op, rg), mean, var))
    }

    /// Runs `f` on the value without copying it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn transpose(self) -> Result<Self, TensorError> {
        let value = self.tape.nodes.borrow()[self.id].value.transpose()?;
        Ok(self.derived(value, Op::Transpose(self.id)))
    }

    fn reduce(self, op: ReduceOp, axis: Option<usize>) -> Result<Self, TensorError> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let name = match op {
                ReduceOp::Sum => "sum",
                ReduceOp::Mean => "mean",
                ReduceOp::Var => "var",
            };
            if let Some(k) = axis {
                if k >= x.rank() {
                    return Err(TensorError::contract(
                        name,
                        format!("axis {k} out of range for shape {:?}", x.shape()),
                    ));
                }
            }
            let (outer, len, inner) = axis_split(x.shape(), axis);
            if len == 0 {
                return Err(TensorError::contract(name, "reduction over an empty axis"));
            }
            let nlen = T::from_usize(len).expect("extent fits");
            let xd = x.data();
            let mut out = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let items = (0..len).map(|j| xd[(o * len + j) * inner + i]);
                    let total: T = items.clone().sum();
                    out.push(match op {
                        ReduceOp::Sum => total,
                        ReduceOp::Mean => total / nlen,
                        ReduceOp::Var => {
                            let mean = total / nlen;
                            items.map(|v| (v - mean) * (v - mean)).sum::<T>() / nlen
                        }
                    });
                }
            }
            let shape = match axis {
                None => Vec::new(),
                Some(k) => {
                    let mut s = x.shape().to_vec();
                    s[k] = 1;
                    s
                }
            };
            Tensor::from_vec(&shape, out)?
        };
        Ok(self.derived(value, Op::Reduce(op, self.id, axis)))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Self {
        self.reduce(ReduceOp::Sum, None).expect("full reduction")
    }

    pub fn mean(self) -> Self {
        self.reduce(ReduceOp::Mean, None).expect("full reduction")
    }

    /// Biased variance of all elements.
    pub fn var(self) -> Self {
        self.reduce(ReduceOp::Var, None).expect("full reduction")
    }

    /// Sum along `axis`, keeping it as a singleton dimension.
    pub fn sum_axis(self, axis: usize) -> Result<Self, TensorError> {
        self.reduce(ReduceOp::Sum, Some(axis))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Self, TensorError> {
        self.reduce(ReduceOp::Mean, Some(axis))
    }

    /// Biased (divide by N) variance along `axis`.
    pub fn var_axis(self, axis: usize) -> Result<Self, TensorError> {
        self.reduce(ReduceOp::Var, Some(axis))
    }

    /// Value copy that the reverse pass does not traverse.
    pub fn stop_gradient(self) -> Self {
        let value = self.value();
        self.tape.constant(value)
    }

    fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Self, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::contract("concat", "no inputs"))?;
        for p in parts {
            first.check_same_tape(p);
        }
        let value = {
            let nodes = first.tape.nodes.borrow();
            let values: Vec<&Tensor<T>> = parts.iter().map(|p| &nodes[p.id].value).collect();
            if axis == 0 {
                Tensor::vstack(&values)?
            } else {
                Tensor::hstack(&values)?
            }
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = first.tape.requires(&ids);
        Ok(first.tape.push(value, Op::Concat(ids, axis), rg))
    }

    /// Stack 2-D operands vertically.
    pub fn concat_rows(parts: &[Var<'t, T>]) -> Result<Self, TensorError> {
        Self::concat(parts, 0)
    }

    /// Stack 2-D operands side by side.
    pub fn concat_cols(parts: &[Var<'t, T>]) -> Result<Self, TensorError> {
        Self::concat(parts, 1)
    }

    fn slice(self, axis: usize, start: usize, end: usize) -> Result<Self, TensorError> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (r, c) = x.dims2()?;
            let extent = if axis == 0 { r } else { c };
            if start >= end || end > extent {
                return Err(TensorError::contract(
                    "slice",
                    format!("range {start}..{end} invalid for extent {extent}"),
                ));
            }
            let xd = x.data();
            if axis == 0 {
                Tensor::from_vec(&[end - start, c], xd[start * c..end * c].to_vec())?
            } else {
                let mut out = Vec::with_capacity(r * (end - start));
                for i in 0..r {
                    out.extend_from_slice(&xd[i * c + start..i * c + end]);
                }
                Tensor::from_vec(&[r, end - start], out)?
            }
        };
        Ok(self.derived(value, Op::Slice(self.id, axis, start, end)))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Self, TensorError> {
        self.slice(0, start, end)
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Self, TensorError> {
        self.slice(1, start, end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 3], &[1, 3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 3], &[4, 1]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 3], &[]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[4, 3], &[4]), None);
    }

    #[test]
    fn bias_broadcast_gradient_sums_rows() {
        let tape = Tape::new();
        let x = tape.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let b = tape.param(t(&[2], &[10., 20.]));
        let y = x.add(b).unwrap();
        assert_eq!(y.value().data(), &[11., 22., 13., 24., 15., 26.]);
        tape.backward(y.sum()).unwrap();
        assert_eq!(b.grad().unwrap().data(), &[3., 3.]);
        assert!(x.grad().is_none());
    }

    #[test]
    fn column_broadcast_gradient() {
        let tape = Tape::new();
        let x = tape.param(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let c = tape.param(t(&[2, 1], &[2., 3.]));
        let y = x.mul(c).unwrap();
        tape.backward(y.sum()).unwrap();
        assert_eq!(c.grad().unwrap().data(), &[6., 15.]);
        assert_eq!(x.grad().unwrap().data(), &[2., 2., 2., 3., 3., 3.]);
    }

    #[test]
    fn domain_errors() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[1., -1.]));
        assert!(matches!(x.log(), Err(TensorError::Domain { .. })));
        assert!(matches!(x.sqrt(), Err(TensorError::Domain { .. })));
        let z = tape.constant(t(&[2], &[1., 0.]));
        assert!(matches!(x.div(z), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn shape_and_axis_errors() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        assert!(matches!(a.matmul(b), Err(TensorError::ShapeMismatch { .. })));
        assert!(matches!(a.sum_axis(2), Err(TensorError::Contract { .. })));
        assert!(matches!(tape.backward(a), Err(TensorError::Contract { .. })));
    }

    #[test]
    fn slices_and_concats_route_gradients() {
        let tape = Tape::new();
        let x = tape.param(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let left = x.slice_cols(0, 1).unwrap();
        let bottom = x.slice_rows(1, 2).unwrap();
        assert_eq!(left.value().data(), &[1., 4.]);
        assert_eq!(bottom.value().data(), &[4., 5., 6.]);
        let both = Var::concat_cols(&[left, left.scale(2.0)]).unwrap();
        let loss = both.sum().add(bottom.sum()).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[3., 0., 0., 4., 1., 1.]);
    }

    #[test]
    fn minimum_routes_to_smaller_operand() {
        let tape = Tape::new();
        let a = tape.param(t(&[3], &[1., 5., 2.]));
        let b = tape.param(t(&[3], &[2., 4., 2.]));
        let m = a.minimum(b).unwrap();
        assert_eq!(m.value().data(), &[1., 4., 2.]);
        tape.backward(m.sum()).unwrap();
        assert_eq!(a.grad().unwrap().data(), &[1., 0., 1.]);
        assert_eq!(b.grad().unwrap().data(), &[0., 1., 0.]);
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let tape = Tape::new();
        let x = tape.param(t(&[3], &[-30., 0.5, 7.]));
        let y = x.clamp(-20., 2.);
        assert_eq!(y.value().data(), &[-20., 0.5, 2.]);
        tape.backward(y.sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0., 1., 0.]);
    }

    #[test]
    fn softplus_is_stable() {
        let tape = Tape::new();
        let x = tape.param(t(&[3], &[-800., 0., 800.]));
        let y = x.softplus();
        let v = y.value();
        assert_eq!(v.data()[0], 0.0);
        assert!((v.data()[1] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(v.data()[2], 800.0);
        tape.backward(y.sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[0., 0.5, 1.]);
    }

    fn grads_of(vars: &[Var<'_, f64>]) -> Vec<Vec<f64>> {
        vars.iter().map(|v| v.grad().unwrap().into_data()).collect()
    }

    fn close(a: &[Vec<f64>], b: &[Vec<f64>]) {
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn fused_linear_matches_composite() {
        let x = t(&[3, 2], &[1., -2., 0.5, 3., -1., 0.25]);
        let w = t(&[4, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8]);
        let b = t(&[4], &[1., 2., 3., 4.]);
        let run = |fused: bool| {
            let tape = Tape::new();
            let vars = [tape.param(x.clone()), tape.param(w.clone()), tape.param(b.clone())];
            let y = if fused {
                vars[0].linear(vars[1], vars[2]).unwrap()
            } else {
                vars[0]
                    .matmul(vars[1].transpose().unwrap())
                    .unwrap()
                    .add(vars[2])
                    .unwrap()
            };
            let loss = y.square().sum();
            tape.backward(loss).unwrap();
            (y.value().into_data(), grads_of(&vars))
        };
        let (ya, ga) = run(true);
        let (yb, gb) = run(false);
        close(&[ya], &[yb]);
        close(&ga, &gb);
    }

    #[test]
    fn fused_batch_norm_matches_composite() {
        let x = t(&[4, 3], &[1., 2., -1., 0.5, -3., 2., 4., 1., 0., -2., 0.5, 1.5]);
        let gamma = t(&[3], &[1.5, -0.5, 2.]);
        let beta = t(&[3], &[0.1, 0.2, 0.3]);
        let weights = t(&[4, 3], &[1., -2., 3., 0.5, 1., -1., 2., 0., 1., -1., 1., 0.25]);
        for train in [true, false] {
            let run = |fused: bool| {
                let tape = Tape::new();
                let vars = [
                    tape.param(x.clone()),
                    tape.param(gamma.clone()),
                    tape.param(beta.clone()),
                ];
                let (rm, rv) = ([0.3, -0.2, 1.0], [2.0, 0.5, 1.5]);
                let y = if fused {
                    let stats = if train { None } else { Some((&rm[..], &rv[..])) };
                    vars[0].batch_norm(vars[1], vars[2], 1e-5, stats).unwrap().0
                } else {
                    let (mean, var) = if train {
                        (vars[0].mean_axis(0).unwrap(), vars[0].var_axis(0).unwrap())
                    } else {
                        (tape.constant(t(&[3], &rm)), tape.constant(t(&[3], &rv)))
                    };
                    let std = var.offset(1e-5).sqrt().unwrap();
                    vars[0]
                        .sub(mean)
                        .unwrap()
                        .div(std)
                        .unwrap()
                        .mul(vars[1])
                        .unwrap()
                        .add(vars[2])
                        .unwrap()
                };
                let loss = y.mul(tape.constant(weights.clone())).unwrap().square().sum();
                tape.backward(loss).unwrap();
                (y.value().into_data(), grads_of(&vars))
            };
            let (ya, ga) = run(true);
            let (yb, gb) = run(false);
            close(&[ya], &[yb]);
            close(&ga, &gb);
        }
    }
}
