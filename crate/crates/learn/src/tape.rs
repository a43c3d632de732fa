//! Reverse-mode automatic differentiation over 2-D real tensors.
//!
//! Every tensor is a `batch × features` matrix. Operations are recorded on a
//! [`Tape`] in creation order, so a single reverse sweep propagates
//! gradients. Complex numbers are carried as interleaved `(re, im)` column
//! pairs.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::error::{shape, Error, Result};

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Select { x: Var, cols: Arc<Vec<usize>> },
    GroupSum { x: Var, groups: Arc<Vec<usize>> },
    SumSquares(Var),
    ComplexMul(Var, Var),
    RowNormalize { x: Var, norms: Vec<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Denominator guard used by [`Tape::row_normalize`].
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zero-filled when `v` does not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::UnknownVariable(format!("index {} on a tape of {} nodes", v.0, self.nodes.len())))
    }

    /// Records an input or parameter. Constants are leaves whose gradient is ignored.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Array2<f64>> {
        Ok(&self.node(v)?.value)
    }

    /// `x · w + b` with `x: batch × in`, `w: in × out`, `b: 1 × out` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (&self.node(x)?.value, &self.node(w)?.value, &self.node(b)?.value);
        if xv.ncols() != wv.nrows() || bv.dim() != (1, wv.ncols()) {
            return Err(shape(format!(
                "affine: x {:?}, w {:?}, b {:?}",
                xv.dim(),
                wv.dim(),
                bv.dim()
            )));
        }
        let out = xv.dot(wv) + bv;
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.node(x)?.value.mapv(|v| v.max(0.0));
        Ok(self.push(out, Op::Relu(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.node(x)?.value.mapv(f64::tanh);
        Ok(self.push(out, Op::Tanh(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        same_shape(av, bv, "add")?;
        let out = av + bv;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        same_shape(av, bv, "sub")?;
        let out = av - bv;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        same_shape(av, bv, "mul")?;
        let out = av * bv;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = &self.node(x)?.value * c;
        Ok(self.push(out, Op::Scale(x, c)))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape("concat of nothing"));
        }
        let views = parts
            .iter()
            .map(|&p| self.node(p).map(|n| n.value.view()))
            .collect::<Result<Vec<_>>>()?;
        let out = ndarray::concatenate(Axis(1), &views).map_err(|e| shape(format!("concat: {e}")))?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Output column `j` is input column `cols[j]`. Indices may repeat.
    pub fn select_columns(&mut self, x: Var, cols: Arc<Vec<usize>>) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if let Some(&bad) = cols.iter().find(|&&c| c >= xv.ncols()) {
            return Err(shape(format!("select: column {bad} of {}", xv.ncols())));
        }
        let out = xv.select(Axis(1), &cols);
        Ok(self.push(out, Op::Select { x, cols }))
    }

    /// Sums input column `i` into output column `groups[i]`; output width is `max + 1`.
    pub fn group_sum(&mut self, x: Var, groups: Arc<Vec<usize>>) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if groups.len() != xv.ncols() {
            return Err(shape(format!("group_sum: {} labels for {} columns", groups.len(), xv.ncols())));
        }
        let width = groups.iter().max().map_or(0, |m| m + 1);
        let mut out = Array2::zeros((xv.nrows(), width));
        for (i, &g) in groups.iter().enumerate() {
            let src = xv.column(i);
            let mut dst = out.column_mut(g);
            dst += &src;
        }
        Ok(self.push(out, Op::GroupSum { x, groups }))
    }

    /// Scalar `Σ x²` as a 1 × 1 tensor.
    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.iter().map(|v| v * v).sum::<f64>();
        Ok(self.push(Array2::from_elem((1, 1), s), Op::SumSquares(x)))
    }

    /// Product of interleaved complex pairs: `(a + jb)(c + jd)` column pair by column pair.
    pub fn complex_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        same_shape(av, bv, "complex_mul")?;
        if av.ncols() % 2 != 0 {
            return Err(shape(format!("complex_mul: odd width {}", av.ncols())));
        }
        let mut out = Array2::zeros(av.dim());
        Zip::from(out.rows_mut())
            .and(av.rows())
            .and(bv.rows())
            .for_each(|mut o, x, y| {
                for k in (0..x.len()).step_by(2) {
                    let (xr, xi, yr, yi) = (x[k], x[k + 1], y[k], y[k + 1]);
                    o[k] = xr * yr - xi * yi;
                    o[k + 1] = xr * yi + xi * yr;
                }
            });
        Ok(self.push(out, Op::ComplexMul(a, b)))
    }

    /// Divides each row by its Euclidean norm plus [`NORMALIZE_EPS`].
    pub fn row_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let norms: Vec<f64> = xv.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut out = xv.clone();
        for (mut row, &n) in out.rows_mut().into_iter().zip(&norms) {
            row /= n + NORMALIZE_EPS;
        }
        Ok(self.push(out, Op::RowNormalize { x, norms }))
    }

    /// Reverse sweep from a 1 × 1 output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.node(output)?;
        if out.value.dim() != (1, 1) {
            return Err(Error::NotScalar(format!("output has shape {:?}", out.value.dim())));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Affine { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    accumulate(&mut grads[w.0], xv.t().dot(&g));
                    accumulate(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads[x.0], g.dot(&wv.t()));
                }
                Op::Relu(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(&node.value).for_each(|gv, &y| {
                        if y <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx).and(&node.value).for_each(|gv, &y| *gv *= 1.0 - y * y);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], -&g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Scale(x, c) => accumulate(&mut grads[x.0], &g * *c),
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        let piece = g.slice(ndarray::s![.., start..start + w]).to_owned();
                        accumulate(&mut grads[p.0], piece);
                        start += w;
                    }
                }
                Op::Select { x, cols } => {
                    let mut gx = Array2::zeros(self.nodes[x.0].value.dim());
                    for (j, &c) in cols.iter().enumerate() {
                        let mut dst = gx.column_mut(c);
                        dst += &g.column(j);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::GroupSum { x, groups } => {
                    let gx = g.select(Axis(1), groups);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::SumSquares(x) => {
                    accumulate(&mut grads[x.0], &self.nodes[x.0].value * (2.0 * g[[0, 0]]));
                }
                Op::ComplexMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let mut ga = Array2::zeros(av.dim());
                    let mut gb = Array2::zeros(bv.dim());
                    // dL/da = g · conj(b) and dL/db = g · conj(a) in pair form.
                    Zip::from(ga.rows_mut())
                        .and(gb.rows_mut())
                        .and(g.rows())
                        .and(av.rows())
                        .and(bv.rows())
                        .for_each(|mut ga, mut gb, g, x, y| {
                            for k in (0..x.len()).step_by(2) {
                                let (gr, gi) = (g[k], g[k + 1]);
                                ga[k] = gr * y[k] + gi * y[k + 1];
                                ga[k + 1] = -gr * y[k + 1] + gi * y[k];
                                gb[k] = gr * x[k] + gi * x[k + 1];
                                gb[k + 1] = -gr * x[k + 1] + gi * x[k];
                            }
                        });
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::RowNormalize { x, norms } => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = Array2::zeros(xv.dim());
                    for (((mut gr, xr), gor), &n) in gx.rows_mut().into_iter().zip(xv.rows()).zip(g.rows()).zip(norms) {
                        let d = n + NORMALIZE_EPS;
                        gr.assign(&(&gor / d));
                        if n > 0.0 {
                            let coef = xr.dot(&gor) / (n * d * d);
                            gr.scaled_add(-coef, &xr);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_squares_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[3.0, 4.0]]);
        let s = tape.sum_squares(x).unwrap();
        assert_eq!(tape.value(s).unwrap()[[0, 0]], 25.0);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &array![[6.0, 8.0]]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]]);
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let mut other = Tape::new();
        other.leaf(array![[1.0]]);
        let v = other.leaf(array![[1.0]]);
        let mut tape = Tape::new();
        assert!(matches!(tape.relu(v), Err(Error::UnknownVariable(_))));
        assert!(matches!(tape.backward(v), Err(Error::UnknownVariable(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array2::zeros((2, 3)));
        let b = tape.leaf(Array2::zeros((3, 2)));
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
        assert!(matches!(tape.affine(a, a, b), Err(Error::Shape(_))));
        let odd = tape.leaf(Array2::zeros((1, 3)));
        assert!(matches!(tape.complex_mul(odd, odd), Err(Error::Shape(_))));
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0]]);
        let unused = tape.leaf(array![[2.0]]);
        let s = tape.sum_squares(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(unused, (1, 1)), array![[0.0]]);
    }

    #[test]
    fn reused_variable_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[2.0]]);
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let s = tape.sum_squares(z).unwrap();
        // s = (x² + x)², ds/dx = 2(x² + x)(2x + 1) = 2·6·5
        let g = tape.backward(s).unwrap();
        assert!((g.get(x).unwrap()[[0, 0]] - 60.0).abs() < 1e-12);
    }
}
