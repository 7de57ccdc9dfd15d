//! Reverse-mode automatic differentiation over small dense f64 matrices.
//!
//! A forward pass records every operation onto a [`Tape`]; [`Tape::backward`]
//! walks the recorded nodes in reverse and accumulates gradients into a
//! [`GradStore`] for every leaf registered with [`Tape::param`]. Nodes whose
//! ancestors contain no parameters record no backward closure and cost nothing
//! during the reverse sweep, so teacher-forcing targets and other constants
//! stay cheap.
//!
//! Everything is double precision with a fixed summation order, so repeated
//! runs are bitwise identical.

use std::cell::RefCell;

/// Dense row-major matrix. Vectors are 1xN or Nx1 as convenient.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self @ other`, shapes (m,k) x (k,n) -> (m,n).
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (kk, &a) in arow.iter().enumerate().take(k) {
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(kk);
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        out
    }
}

/// dst += dy @ b^T, shapes: dst (m,k), dy (m,n), b (k,n).
fn add_matmul_nt(dst: &mut Tensor, dy: &Tensor, b: &Tensor) {
    let (m, n, k) = (dy.rows, dy.cols, b.rows);
    debug_assert_eq!(dst.rows, m);
    debug_assert_eq!(dst.cols, k);
    for i in 0..m {
        let dyrow = dy.row(i);
        let drow = dst.row_mut(i);
        for (kk, d) in drow.iter_mut().enumerate().take(k) {
            let brow = b.row(kk);
            let mut acc = 0.0;
            for j in 0..n {
                acc += dyrow[j] * brow[j];
            }
            *d += acc;
        }
    }
}

/// dst += a^T @ dy, shapes: dst (k,n), a (m,k), dy (m,n).
fn add_matmul_tn(dst: &mut Tensor, a: &Tensor, dy: &Tensor) {
    let (m, k, n) = (a.rows, a.cols, dy.cols);
    debug_assert_eq!(dst.rows, k);
    debug_assert_eq!(dst.cols, n);
    for i in 0..m {
        let arow = a.row(i);
        let dyrow = dy.row(i);
        for (kk, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let drow = dst.row_mut(kk);
            for j in 0..n {
                drow[j] += av * dyrow[j];
            }
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Tensor, &[Tensor], &mut GradStore)>;

/// Per-node gradient slots populated by [`Tape::backward`].
pub struct GradStore {
    slots: Vec<Option<Tensor>>,
}

impl GradStore {
    fn new(n: usize) -> Self {
        GradStore {
            slots: (0..n).map(|_| None).collect(),
        }
    }

    fn slot(&mut self, idx: usize, rows: usize, cols: usize) -> &mut Tensor {
        let s = &mut self.slots[idx];
        if s.is_none() {
            *s = Some(Tensor::zeros(rows, cols));
        }
        s.as_mut().expect("grad slot just initialized")
    }

    /// Gradient of the backward root with respect to `v`, if any path existed.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.slots[v.0].as_ref()
    }
}

/// Records a computation graph; nodes are append-only so indices are a
/// topological order.
#[derive(Default)]
pub struct Tape {
    values: RefCell<Vec<Tensor>>,
    backs: RefCell<Vec<Option<BackFn>>>,
    needs: RefCell<Vec<bool>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, needs: bool, back: Option<BackFn>) -> Var {
        let mut values = self.values.borrow_mut();
        let idx = values.len();
        values.push(value);
        self.backs.borrow_mut().push(if needs { back } else { None });
        self.needs.borrow_mut().push(needs);
        Var(idx)
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, t: Tensor) -> Var {
        self.push(t, true, None)
    }

    /// Leaf treated as a constant; no gradient is ever accumulated for it.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, false, None)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.values.borrow()[v.0].clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let values = self.values.borrow();
        (values[v.0].rows, values[v.0].cols)
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let values = self.values.borrow();
        let t = &values[v.0];
        assert_eq!(t.len(), 1, "scalar_value on non-scalar node");
        t.data[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.needs.borrow()[v.0]
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (ai, bi) = (a.0, b.0);
        let (an, bn) = (self.needs(a), self.needs(b));
        let out = {
            let values = self.values.borrow();
            let (av, bv) = (&values[ai], &values[bi]);
            assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "add shape mismatch");
            let mut out = av.clone();
            for (o, x) in out.data.iter_mut().zip(&bv.data) {
                *o += x;
            }
            out
        };
        self.push(
            out,
            an || bn,
            Some(Box::new(move |g, values, grads| {
                for (idx, needed) in [(ai, an), (bi, bn)] {
                    if needed {
                        let (r, c) = (values[idx].rows, values[idx].cols);
                        let slot = grads.slot(idx, r, c);
                        for (s, gv) in slot.data.iter_mut().zip(&g.data) {
                            *s += gv;
                        }
                    }
                }
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (ai, bi) = (a.0, b.0);
        let (an, bn) = (self.needs(a), self.needs(b));
        let out = {
            let values = self.values.borrow();
            let (av, bv) = (&values[ai], &values[bi]);
            assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "sub shape mismatch");
            let mut out = av.clone();
            for (o, x) in out.data.iter_mut().zip(&bv.data) {
                *o -= x;
            }
            out
        };
        self.push(
            out,
            an || bn,
            Some(Box::new(move |g, values, grads| {
                if an {
                    let (r, c) = (values[ai].rows, values[ai].cols);
                    let slot = grads.slot(ai, r, c);
                    for (s, gv) in slot.data.iter_mut().zip(&g.data) {
                        *s += gv;
                    }
                }
                if bn {
                    let (r, c) = (values[bi].rows, values[bi].cols);
                    let slot = grads.slot(bi, r, c);
                    for (s, gv) in slot.data.iter_mut().zip(&g.data) {
                        *s -= gv;
                    }
                }
            })),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (ai, bi) = (a.0, b.0);
        let (an, bn) = (self.needs(a), self.needs(b));
        let out = {
            let values = self.values.borrow();
            let (av, bv) = (&values[ai], &values[bi]);
            assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "mul shape mismatch");
            let mut out = av.clone();
            for (o, x) in out.data.iter_mut().zip(&bv.data) {
                *o *= x;
            }
            out
        };
        self.push(
            out,
            an || bn,
            Some(Box::new(move |g, values, grads| {
                if an {
                    let (r, c) = (values[ai].rows, values[ai].cols);
                    let bv = values[bi].data.clone();
                    let slot = grads.slot(ai, r, c);
                    for ((s, gv), x) in slot.data.iter_mut().zip(&g.data).zip(&bv) {
                        *s += gv * x;
                    }
                }
                if bn {
                    let (r, c) = (values[bi].rows, values[bi].cols);
                    let av = values[ai].data.clone();
                    let slot = grads.slot(bi, r, c);
                    for ((s, gv), x) in slot.data.iter_mut().zip(&g.data).zip(&av) {
                        *s += gv * x;
                    }
                }
            })),
        )
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let ai = a.0;
        let an = self.needs(a);
        let out = {
            let values = self.values.borrow();
            let mut out = values[ai].clone();
            for o in out.data.iter_mut() {
                *o *= k;
            }
            out
        };
        self.push(
            out,
            an,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ai].rows, values[ai].cols);
                let slot = grads.slot(ai, r, c);
                for (s, gv) in slot.data.iter_mut().zip(&g.data) {
                    *s += gv * k;
                }
            })),
        )
    }

    pub fn add_scalar(&self, a: Var, k: f64) -> Var {
        let ai = a.0;
        let an = self.needs(a);
        let out = {
            let values = self.values.borrow();
            let mut out = values[ai].clone();
            for o in out.data.iter_mut() {
                *o += k;
            }
            out
        };
        self.push(
            out,
            an,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ai].rows, values[ai].cols);
                let slot = grads.slot(ai, r, c);
                for (s, gv) in slot.data.iter_mut().zip(&g.data) {
                    *s += gv;
                }
            })),
        )
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (ai, bi) = (a.0, b.0);
        let (an, bn) = (self.needs(a), self.needs(b));
        let out = {
            let values = self.values.borrow();
            values[ai].matmul(&values[bi])
        };
        self.push(
            out,
            an || bn,
            Some(Box::new(move |g, values, grads| {
                if an {
                    let (r, c) = (values[ai].rows, values[ai].cols);
                    let b = values[bi].clone();
                    add_matmul_nt(grads.slot(ai, r, c), g, &b);
                }
                if bn {
                    let (r, c) = (values[bi].rows, values[bi].cols);
                    let a = values[ai].clone();
                    add_matmul_tn(grads.slot(bi, r, c), &a, g);
                }
            })),
        )
    }

    /// `a` (n,m) plus a 1xm bias broadcast over rows.
    pub fn add_bias(&self, a: Var, bias: Var) -> Var {
        let (ai, bi) = (a.0, bias.0);
        let (an, bn) = (self.needs(a), self.needs(bias));
        let out = {
            let values = self.values.borrow();
            let (av, bv) = (&values[ai], &values[bi]);
            assert_eq!(bv.rows, 1, "bias must be a row vector");
            assert_eq!(av.cols, bv.cols, "bias width mismatch");
            let mut out = av.clone();
            for r in 0..out.rows {
                for (o, x) in out.row_mut(r).iter_mut().zip(&bv.data) {
                    *o += x;
                }
            }
            out
        };
        self.push(
            out,
            an || bn,
            Some(Box::new(move |g, values, grads| {
                if an {
                    let (r, c) = (values[ai].rows, values[ai].cols);
                    let slot = grads.slot(ai, r, c);
                    for (s, gv) in slot.data.iter_mut().zip(&g.data) {
                        *s += gv;
                    }
                }
                if bn {
                    let cols = values[bi].cols;
                    let slot = grads.slot(bi, 1, cols);
                    for r in 0..g.rows {
                        for (s, gv) in slot.data.iter_mut().zip(g.row(r)) {
                            *s += gv;
                        }
                    }
                }
            })),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let ai = a.0;
        let an = self.needs(a);
        let out = {
            let values = self.values.borrow();
            let mut out = values[ai].clone();
            for o in out.data.iter_mut() {
                *o = o.tanh();
            }
            out
        };
        let yi = self.len();
        self.push(
            out,
            an,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ai].rows, values[ai].cols);
                let y = values[yi].data.clone();
                let slot = grads.slot(ai, r, c);
                for ((s, gv), yv) in slot.data.iter_mut().zip(&g.data).zip(&y) {
                    *s += gv * (1.0 - yv * yv);
                }
            })),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let ai = a.0;
        let an = self.needs(a);
        let out = {
            let values = self.values.borrow();
            let mut out = values[ai].clone();
            for o in out.data.iter_mut() {
                *o = 1.0 / (1.0 + (-*o).exp());
            }
            out
        };
        let yi = self.len();
        self.push(
            out,
            an,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ai].rows, values[ai].cols);
                let y = values[yi].data.clone();
                let slot = grads.slot(ai, r, c);
                for ((s, gv), yv) in slot.data.iter_mut().zip(&g.data).zip(&y) {
                    *s += gv * yv * (1.0 - yv);
                }
            })),
        )
    }

    /// Elementwise square root; inputs must be positive.
    pub fn sqrt(&self, a: Var) -> Var {
        let ai = a.0;
        let an = self.needs(a);
        let out = {
            let values = self.values.borrow();
            let mut out = values[ai].clone();
            for o in out.data.iter_mut() {
                *o = o.sqrt();
            }
            out
        };
        let yi = self.len();
        self.push(
            out,
            an,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ai].rows, values[ai].cols);
                let y = values[yi].data.clone();
                let slot = grads.slot(ai, r, c);
                for ((s, gv), yv) in slot.data.iter_mut().zip(&g.data).zip(&y) {
                    *s += gv * 0.5 / yv;
                }
            })),
        )
    }

    /// Concatenate along columns; all parts share a row count.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let idxs: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let needed: Vec<bool> = parts.iter().map(|v| self.needs(*v)).collect();
        let any = needed.iter().any(|&n| n);
        let out = {
            let values = self.values.borrow();
            let rows = values[idxs[0]].rows;
            let cols: usize = idxs.iter().map(|&i| values[i].cols).sum();
            let mut out = Tensor::zeros(rows, cols);
            for r in 0..rows {
                let orow = out.row_mut(r);
                let mut off = 0;
                for &i in &idxs {
                    let p = &values[i];
                    assert_eq!(p.rows, rows, "concat_cols row mismatch");
                    orow[off..off + p.cols].copy_from_slice(p.row(r));
                    off += p.cols;
                }
            }
            out
        };
        self.push(
            out,
            any,
            Some(Box::new(move |g, values, grads| {
                let mut off = 0;
                for (&i, &needed) in idxs.iter().zip(&needed) {
                    let (r, c) = (values[i].rows, values[i].cols);
                    if needed {
                        let slot = grads.slot(i, r, c);
                        for rr in 0..r {
                            for (s, gv) in slot
                                .row_mut(rr)
                                .iter_mut()
                                .zip(&g.row(rr)[off..off + c])
                            {
                                *s += gv;
                            }
                        }
                    }
                    off += c;
                }
            })),
        )
    }

    /// Stack along rows; all parts share a column count.
    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let idxs: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let needed: Vec<bool> = parts.iter().map(|v| self.needs(*v)).collect();
        let any = needed.iter().any(|&n| n);
        let out = {
            let values = self.values.borrow();
            let cols = values[idxs[0]].cols;
            let rows: usize = idxs.iter().map(|&i| values[i].rows).sum();
            let mut out = Tensor::zeros(rows, cols);
            let mut r0 = 0;
            for &i in &idxs {
                let p = &values[i];
                assert_eq!(p.cols, cols, "concat_rows column mismatch");
                out.data[r0 * cols..(r0 + p.rows) * cols].copy_from_slice(&p.data);
                r0 += p.rows;
            }
            out
        };
        self.push(
            out,
            any,
            Some(Box::new(move |g, values, grads| {
                let mut r0 = 0;
                for (&i, &needed) in idxs.iter().zip(&needed) {
                    let (r, c) = (values[i].rows, values[i].cols);
                    if needed {
                        let slot = grads.slot(i, r, c);
                        for (s, gv) in slot
                            .data
                            .iter_mut()
                            .zip(&g.data[r0 * c..(r0 + r) * c])
                        {
                            *s += gv;
                        }
                    }
                    r0 += r;
                }
            })),
        )
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let ai = a.0;
        let an = self.needs(a);
        let out = {
            let values = self.values.borrow();
            let av = &values[ai];
            assert!(start + len <= av.cols, "slice_cols out of range");
            let mut out = Tensor::zeros(av.rows, len);
            for r in 0..av.rows {
                out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
            }
            out
        };
        self.push(
            out,
            an,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ai].rows, values[ai].cols);
                let slot = grads.slot(ai, r, c);
                for rr in 0..r {
                    for (s, gv) in slot.row_mut(rr)[start..start + g.cols]
                        .iter_mut()
                        .zip(g.row(rr))
                    {
                        *s += gv;
                    }
                }
            })),
        )
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        let ai = a.0;
        let an = self.needs(a);
        let out = {
            let values = self.values.borrow();
            let av = &values[ai];
            assert!(start + len <= av.rows, "slice_rows out of range");
            Tensor::from_vec(
                len,
                av.cols,
                av.data[start * av.cols..(start + len) * av.cols].to_vec(),
            )
        };
        self.push(
            out,
            an,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ai].rows, values[ai].cols);
                let slot = grads.slot(ai, r, c);
                for (s, gv) in slot.data[start * c..(start + g.rows) * c]
                    .iter_mut()
                    .zip(&g.data)
                {
                    *s += gv;
                }
            })),
        )
    }

    /// Row lookup by index list; backward scatter-adds into the table.
    pub fn gather_rows(&self, table: Var, ids: &[usize]) -> Var {
        let ti = table.0;
        let tn = self.needs(table);
        let ids: Vec<usize> = ids.to_vec();
        let out = {
            let values = self.values.borrow();
            let tv = &values[ti];
            let mut out = Tensor::zeros(ids.len(), tv.cols);
            for (r, &id) in ids.iter().enumerate() {
                assert!(id < tv.rows, "gather_rows id out of range");
                out.row_mut(r).copy_from_slice(tv.row(id));
            }
            out
        };
        self.push(
            out,
            tn,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ti].rows, values[ti].cols);
                let slot = grads.slot(ti, r, c);
                for (rr, &id) in ids.iter().enumerate() {
                    for (s, gv) in slot.row_mut(id).iter_mut().zip(g.row(rr)) {
                        *s += gv;
                    }
                }
            })),
        )
    }

    /// Repeat row i `counts[i]` times, preserving order.
    pub fn repeat_rows(&self, a: Var, counts: &[usize]) -> Var {
        let ai = a.0;
        let an = self.needs(a);
        let counts: Vec<usize> = counts.to_vec();
        let out = {
            let values = self.values.borrow();
            let av = &values[ai];
            assert_eq!(av.rows, counts.len(), "repeat_rows count mismatch");
            let total: usize = counts.iter().sum();
            let mut out = Tensor::zeros(total, av.cols);
            let mut r0 = 0;
            for (i, &cnt) in counts.iter().enumerate() {
                for _ in 0..cnt {
                    out.row_mut(r0).copy_from_slice(av.row(i));
                    r0 += 1;
                }
            }
            out
        };
        self.push(
            out,
            an,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ai].rows, values[ai].cols);
                let slot = grads.slot(ai, r, c);
                let mut r0 = 0;
                for (i, &cnt) in counts.iter().enumerate() {
                    for _ in 0..cnt {
                        for (s, gv) in slot.row_mut(i).iter_mut().zip(g.row(r0)) {
                            *s += gv;
                        }
                        r0 += 1;
                    }
                }
            })),
        )
    }

    /// Mean over consecutive row segments of sizes `counts`.
    pub fn segment_mean_rows(&self, a: Var, counts: &[usize]) -> Var {
        let ai = a.0;
        let an = self.needs(a);
        let counts: Vec<usize> = counts.to_vec();
        let out = {
            let values = self.values.borrow();
            let av = &values[ai];
            let total: usize = counts.iter().sum();
            assert_eq!(av.rows, total, "segment_mean_rows count mismatch");
            let mut out = Tensor::zeros(counts.len(), av.cols);
            let mut r0 = 0;
            for (i, &cnt) in counts.iter().enumerate() {
                assert!(cnt > 0, "segment_mean_rows zero segment");
                for _ in 0..cnt {
                    for (o, x) in out.row_mut(i).iter_mut().zip(av.row(r0)) {
                        *o += x;
                    }
                    r0 += 1;
                }
                let inv = 1.0 / cnt as f64;
                for o in out.row_mut(i) {
                    *o *= inv;
                }
            }
            out
        };
        self.push(
            out,
            an,
            Some(Box::new(move |g, values, grads| {
                let (r, c) = (values[ai].rows, values[ai].cols);
                let slot = grads.slot(ai, r, c);
                let mut r0 = 0;
                for (i, &cnt) in counts.iter().enumerate() {
                    let inv = 1.0 / cnt as f64;
                    for _ in 0..cnt {
                        for (s, gv) in slot.row_mut(r0).iter_mut().zip(g.row(i)) {
                            *s += gv * inv;
                        }
                        r0 += 1;
                    }
                }
            })),
        )
    }

    /// 1D convolution along rows with zero padding ("same" output length).
    /// `x` is (n, cin); `w` is (kernel*cin, cout) with tap t occupying rows
    /// [t*cin, (t+1)*cin); `b` is (1, cout). Kernel must be odd.
    pub fn conv1d_same(&self, x: Var, w: Var, b: Var, kernel: usize) -> Var {
        assert!(kernel % 2 == 1, "conv1d kernel must be odd");
        let (xi, wi, bi) = (x.0, w.0, b.0);
        let (xn, wn, bn) = (self.needs(x), self.needs(w), self.needs(b));
        let out = {
            let values = self.values.borrow();
            let (xv, wv, bv) = (&values[xi], &values[wi], &values[bi]);
            let (n, cin) = (xv.rows, xv.cols);
            let cout = wv.cols;
            assert_eq!(wv.rows, kernel * cin, "conv1d weight shape mismatch");
            assert_eq!(bv.cols, cout, "conv1d bias shape mismatch");
            let half = (kernel / 2) as isize;
            let mut out = Tensor::zeros(n, cout);
            for t in 0..n {
                out.row_mut(t).copy_from_slice(bv.row(0));
            }
            for t in 0..n as isize {
                for dt in 0..kernel as isize {
                    let s = t + dt - half;
                    if s < 0 || s >= n as isize {
                        continue;
                    }
                    let xrow = xv.row(s as usize);
                    for ci in 0..cin {
                        let xval = xrow[ci];
                        if xval == 0.0 {
                            continue;
                        }
                        let wrow = wv.row(dt as usize * cin + ci);
                        let orow =
                            &mut out.data[t as usize * cout..(t as usize + 1) * cout];
                        for j in 0..cout {
                            orow[j] += xval * wrow[j];
                        }
                    }
                }
            }
            out
        };
        self.push(
            out,
            xn || wn || bn,
            Some(Box::new(move |g, values, grads| {
                let xv = values[xi].clone();
                let wv = values[wi].clone();
                let (n, cin) = (xv.rows, xv.cols);
                let cout = wv.cols;
                let half = (kernel / 2) as isize;
                if bn {
                    let slot = grads.slot(bi, 1, cout);
                    for t in 0..n {
                        for (s, gv) in slot.data.iter_mut().zip(g.row(t)) {
                            *s += gv;
                        }
                    }
                }
                if wn {
                    let slot = grads.slot(wi, kernel * cin, cout);
                    for t in 0..n as isize {
                        let grow = g.row(t as usize);
                        for dt in 0..kernel as isize {
                            let s = t + dt - half;
                            if s < 0 || s >= n as isize {
                                continue;
                            }
                            let xrow = xv.row(s as usize);
                            for ci in 0..cin {
                                let xval = xrow[ci];
                                if xval == 0.0 {
                                    continue;
                                }
                                let srow = slot.row_mut(dt as usize * cin + ci);
                                for j in 0..cout {
                                    srow[j] += xval * grow[j];
                                }
                            }
                        }
                    }
                }
                if xn {
                    let slot = grads.slot(xi, n, cin);
                    for t in 0..n as isize {
                        let grow = g.row(t as usize).to_vec();
                        for dt in 0..kernel as isize {
                            let s = t + dt - half;
                            if s < 0 || s >= n as isize {
                                continue;
                            }
                            let srow = slot.row_mut(s as usize);
                            for ci in 0..cin {
                                let wrow = wv.row(dt as usize * cin + ci);
                                let mut acc = 0.0;
                                for j in 0..cout {
                                    acc += grow[j] * wrow[j];
                                }
                                srow[ci] += acc;
                            }
                        }
                    }
                }
            })),
        )
    }

    /// Sum of squared residuals against a constant target; returns a 1x1 node.
    pub fn sq_err_sum(&self, pred: Var, target: &Tensor) -> Var {
        let pi = pred.0;
        let pn = self.needs(pred);
        let target = target.clone();
        let out = {
            let values = self.values.borrow();
            let pv = &values[pi];
            assert_eq!(
                (pv.rows, pv.cols),
                (target.rows, target.cols),
                "sq_err_sum shape mismatch"
            );
            let mut acc = 0.0;
            for (p, t) in pv.data.iter().zip(&target.data) {
                let d = p - t;
                acc += d * d;
            }
            Tensor::scalar(acc)
        };
        self.push(
            out,
            pn,
            Some(Box::new(move |g, values, grads| {
                let gv = g.data[0];
                let (r, c) = (values[pi].rows, values[pi].cols);
                let pv = values[pi].data.clone();
                let slot = grads.slot(pi, r, c);
                for ((s, p), t) in slot.data.iter_mut().zip(&pv).zip(&target.data) {
                    *s += gv * 2.0 * (p - t);
                }
            })),
        )
    }

    /// Reverse sweep seeding d(root)/d(root) = 1. Root must be 1x1.
    pub fn backward(&self, root: Var) -> GradStore {
        let values = self.values.borrow();
        let backs = self.backs.borrow();
        assert_eq!(values[root.0].len(), 1, "backward root must be scalar");
        let mut grads = GradStore::new(values.len());
        grads.slots[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            if let Some(back) = &backs[i] {
                if let Some(g) = grads.slots[i].take() {
                    back(&g, &values, &mut grads);
                }
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_tensor(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-0.9..0.9)).collect(),
        )
    }

    /// Composite function exercising most ops, used for finite-difference
    /// checks below.
    fn composite_loss(p0: &Tensor, p1: &Tensor, p2: &Tensor) -> f64 {
        let tape = Tape::new();
        let (a, w, b) = (
            tape.param(p0.clone()),
            tape.param(p1.clone()),
            tape.param(p2.clone()),
        );
        let h = tape.tanh(tape.conv1d_same(a, w, b, 3));
        let pooled = tape.segment_mean_rows(h, &[2, 3]);
        let up = tape.repeat_rows(pooled, &[2, 3]);
        let gathered = tape.gather_rows(a, &[0, 2, 4, 1, 3]);
        let cat = tape.concat_cols(&[up, gathered]);
        let left = tape.slice_cols(cat, 0, 2);
        let right = tape.slice_cols(cat, 2, 2);
        let prod = tape.mul(tape.sigmoid(left), right);
        let target = Tensor::filled(5, 2, 0.25);
        let loss = tape.scale(tape.sq_err_sum(prod, &target), 0.1);
        tape.scalar_value(loss)
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let p0 = random_tensor(&mut rng, 5, 2);
        let p1 = random_tensor(&mut rng, 6, 2);
        let p2 = random_tensor(&mut rng, 1, 2);

        let tape = Tape::new();
        let (a, w, b) = (
            tape.param(p0.clone()),
            tape.param(p1.clone()),
            tape.param(p2.clone()),
        );
        let h = tape.tanh(tape.conv1d_same(a, w, b, 3));
        let pooled = tape.segment_mean_rows(h, &[2, 3]);
        let up = tape.repeat_rows(pooled, &[2, 3]);
        let gathered = tape.gather_rows(a, &[0, 2, 4, 1, 3]);
        let cat = tape.concat_cols(&[up, gathered]);
        let left = tape.slice_cols(cat, 0, 2);
        let right = tape.slice_cols(cat, 2, 2);
        let prod = tape.mul(tape.sigmoid(left), right);
        let target = Tensor::filled(5, 2, 0.25);
        let loss = tape.scale(tape.sq_err_sum(prod, &target), 0.1);
        let grads = tape.backward(loss);

        let eps = 1e-6;
        for (which, base) in [(0usize, &p0), (1, &p1), (2, &p2)] {
            let var = [a, w, b][which];
            let analytic = grads.get(var).expect("param grad missing");
            for idx in 0..base.len() {
                let mut plus = base.clone();
                plus.data_mut()[idx] += eps;
                let mut minus = base.clone();
                minus.data_mut()[idx] -= eps;
                let (fp, fm) = match which {
                    0 => (
                        composite_loss(&plus, &p1, &p2),
                        composite_loss(&minus, &p1, &p2),
                    ),
                    1 => (
                        composite_loss(&p0, &plus, &p2),
                        composite_loss(&p0, &minus, &p2),
                    ),
                    _ => (
                        composite_loss(&p0, &p1, &plus),
                        composite_loss(&p0, &p1, &minus),
                    ),
                };
                let numeric = (fp - fm) / (2.0 * eps);
                let a = analytic.data()[idx];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < 1e-6,
                    "param {which} coord {idx}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let p = tape.param(Tensor::filled(2, 2, 0.5));
        let c = tape.constant(Tensor::filled(2, 2, 2.0));
        let y = tape.mul(p, c);
        let loss = tape.sq_err_sum(y, &Tensor::zeros(2, 2));
        let grads = tape.backward(loss);
        assert!(grads.get(c).is_none());
        assert!(grads.get(p).is_some());
    }

    #[test]
    fn matmul_and_bias_shapes() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]));
        let w = tape.param(Tensor::from_vec(3, 2, vec![1., 0., 0., 1., 1., 1.]));
        let b = tape.param(Tensor::from_vec(1, 2, vec![10., 20.]));
        let y = tape.add_bias(tape.matmul(x, w), b);
        let v = tape.value(y);
        assert_eq!((v.rows(), v.cols()), (2, 2));
        assert_eq!(v.row(0), &[1. + 3. + 10., 2. + 3. + 20.]);
        assert_eq!(v.row(1), &[4. + 6. + 10., 5. + 6. + 20.]);
    }

    #[test]
    fn repeated_use_of_a_var_accumulates() {
        // d/dx of (x*x) summed = 2x elementwise.
        let tape = Tape::new();
        let x = tape.param(Tensor::from_vec(1, 3, vec![1.0, -2.0, 3.0]));
        let y = tape.mul(x, x);
        let loss = tape.sq_err_sum(y, &Tensor::zeros(1, 3));
        let grads = tape.backward(loss);
        // d/dx sum((x^2)^2) = 4 x^3
        let g = grads.get(x).unwrap();
        assert_eq!(g.data(), &[4.0, 4.0 * 8.0 * -1.0, 4.0 * 27.0]);
    }
}
