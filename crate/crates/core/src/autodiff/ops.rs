use super::TapeError;
use crate::scalar::{self, Scalar};

/// Primitive operations supported by the tape.
///
/// Buffers are row-major. `Affine` computes `x · w (+ b)` with `x: B×I`,
/// `w: I×O` and an optional row bias `b: 1×O` broadcast over rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Op<T> {
    Leaf,
    Constant,
    Affine {
        bias: bool,
    },
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Softplus,
    Ln,
    Sqrt,
    /// Subgradient 0 at the kink.
    Abs,
    Exp,
    /// Quadratic below `delta`, linear above.
    Huber(T),
    Sum,
    Mean,
    /// `Σ m·x / Σ m` over all entries; the mask is a constant.
    MaskedMean(Vec<T>),
    /// Per-row `Σ_l m·x / Σ_l m`, producing `B×1`; rows with no weight give 0.
    MaskedRowMean(Vec<T>),
    ConcatCols,
    Scale(T),
    Offset(T),
    GradReverse(T),
}

impl<T: Scalar> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Affine { .. } => "affine",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Softplus => "softplus",
            Op::Ln => "ln",
            Op::Sqrt => "sqrt",
            Op::Abs => "abs",
            Op::Exp => "exp",
            Op::Huber(_) => "huber",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::MaskedMean(_) => "masked_mean",
            Op::MaskedRowMean(_) => "masked_row_mean",
            Op::ConcatCols => "concat_cols",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::GradReverse(_) => "grad_reverse",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Leaf | Op::Constant => 0,
            Op::Affine { bias: true } => 3,
            Op::Affine { bias: false } | Op::Add | Op::Sub | Op::Mul | Op::ConcatCols => 2,
            _ => 1,
        }
    }

    pub(super) fn output_shape(&self, shapes: &[[usize; 2]]) -> Result<[usize; 2], TapeError> {
        let op = self.name();
        if shapes.len() != self.arity() || matches!(self, Op::Leaf | Op::Constant) {
            return Err(TapeError::Arity {
                op,
                expected: self.arity(),
                got: shapes.len(),
            });
        }
        let mismatch = |left: [usize; 2], right: [usize; 2]| TapeError::ShapeMismatch { op, left, right };
        match self {
            Op::Affine { bias } => {
                let [x, w] = [shapes[0], shapes[1]];
                if x[1] != w[0] {
                    return Err(mismatch(x, w));
                }
                if *bias && shapes[2] != [1, w[1]] {
                    return Err(mismatch([1, w[1]], shapes[2]));
                }
                Ok([x[0], w[1]])
            }
            Op::Add | Op::Sub | Op::Mul => {
                if shapes[0] != shapes[1] {
                    return Err(mismatch(shapes[0], shapes[1]));
                }
                Ok(shapes[0])
            }
            Op::ConcatCols => {
                if shapes[0][0] != shapes[1][0] {
                    return Err(mismatch(shapes[0], shapes[1]));
                }
                Ok([shapes[0][0], shapes[0][1] + shapes[1][1]])
            }
            Op::Sum | Op::Mean => Ok([1, 1]),
            Op::MaskedMean(mask) => {
                let n = shapes[0][0] * shapes[0][1];
                if mask.len() != n {
                    return Err(mismatch(shapes[0], [1, mask.len()]));
                }
                if mask.iter().copied().sum::<T>() <= T::zero() {
                    return Err(TapeError::EmptyMask { op });
                }
                Ok([1, 1])
            }
            Op::MaskedRowMean(mask) => {
                let n = shapes[0][0] * shapes[0][1];
                if mask.len() != n {
                    return Err(mismatch(shapes[0], [1, mask.len()]));
                }
                Ok([shapes[0][0], 1])
            }
            _ => Ok(shapes[0]),
        }
    }

    pub(super) fn eval(&self, inputs: &[&[T]], shapes: &[[usize; 2]]) -> Vec<T> {
        match self {
            Op::Leaf | Op::Constant => unreachable!("inputs carry their own buffers"),
            Op::Affine { bias } => {
                let [rows, inner] = shapes[0];
                let cols = shapes[1][1];
                let (x, w) = (inputs[0], inputs[1]);
                let mut out = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    let out_row = &mut out[r * cols..(r + 1) * cols];
                    if *bias {
                        out_row.copy_from_slice(inputs[2]);
                    }
                    for k in 0..inner {
                        let xv = x[r * inner + k];
                        if xv == T::zero() {
                            continue;
                        }
                        let w_row = &w[k * cols..(k + 1) * cols];
                        for (o, &wv) in out_row.iter_mut().zip(w_row) {
                            *o += xv * wv;
                        }
                    }
                }
                out
            }
            Op::Add => zip_map(inputs[0], inputs[1], |a, b| a + b),
            Op::Sub => zip_map(inputs[0], inputs[1], |a, b| a - b),
            Op::Mul => zip_map(inputs[0], inputs[1], |a, b| a * b),
            Op::Sigmoid => map(inputs[0], scalar::sigmoid),
            Op::Tanh => map(inputs[0], T::tanh),
            Op::Softplus => map(inputs[0], scalar::softplus),
            Op::Ln => map(inputs[0], T::ln),
            Op::Sqrt => map(inputs[0], T::sqrt),
            Op::Abs => map(inputs[0], T::abs),
            Op::Exp => map(inputs[0], T::exp),
            Op::Huber(delta) => {
                let d = *delta;
                let half = T::lit(0.5);
                map(inputs[0], |r| {
                    let a = r.abs();
                    if a <= d {
                        half * r * r
                    } else {
                        d * (a - half * d)
                    }
                })
            }
            Op::Sum => vec![inputs[0].iter().copied().sum()],
            Op::Mean => {
                let n = T::from_usize(inputs[0].len()).unwrap();
                vec![inputs[0].iter().copied().sum::<T>() / n]
            }
            Op::MaskedMean(mask) => {
                let total: T = mask.iter().copied().sum();
                let acc: T = inputs[0].iter().zip(mask).map(|(&x, &m)| x * m).sum();
                vec![acc / total]
            }
            Op::MaskedRowMean(mask) => {
                let [rows, cols] = shapes[0];
                (0..rows)
                    .map(|r| {
                        let xs = &inputs[0][r * cols..(r + 1) * cols];
                        let ms = &mask[r * cols..(r + 1) * cols];
                        let total: T = ms.iter().copied().sum();
                        if total <= T::zero() {
                            T::zero()
                        } else {
                            xs.iter().zip(ms).map(|(&x, &m)| x * m).sum::<T>() / total
                        }
                    })
                    .collect()
            }
            Op::ConcatCols => {
                let [rows, ca] = shapes[0];
                let cb = shapes[1][1];
                let mut out = Vec::with_capacity(rows * (ca + cb));
                for r in 0..rows {
                    out.extend_from_slice(&inputs[0][r * ca..(r + 1) * ca]);
                    out.extend_from_slice(&inputs[1][r * cb..(r + 1) * cb]);
                }
                out
            }
            Op::Scale(c) => map(inputs[0], |x| x * *c),
            Op::Offset(c) => map(inputs[0], |x| x + *c),
            Op::GradReverse(_) => inputs[0].to_vec(),
        }
    }

    /// Vector-Jacobian products for each input. `wants[i]` false skips input `i`.
    pub(super) fn vjp(
        &self,
        inputs: &[&[T]],
        shapes: &[[usize; 2]],
        out: &[T],
        g: &[T],
        wants: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let want = |i: usize| wants.get(i).copied().unwrap_or(false);
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Affine { bias } => {
                let [rows, inner] = shapes[0];
                let cols = shapes[1][1];
                let (x, w) = (inputs[0], inputs[1]);
                let dx = want(0).then(|| {
                    let mut dx = vec![T::zero(); rows * inner];
                    for r in 0..rows {
                        let g_row = &g[r * cols..(r + 1) * cols];
                        for k in 0..inner {
                            let w_row = &w[k * cols..(k + 1) * cols];
                            dx[r * inner + k] = g_row.iter().zip(w_row).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    dx
                });
                let dw = want(1).then(|| {
                    let mut dw = vec![T::zero(); inner * cols];
                    for r in 0..rows {
                        let g_row = &g[r * cols..(r + 1) * cols];
                        for k in 0..inner {
                            let xv = x[r * inner + k];
                            if xv == T::zero() {
                                continue;
                            }
                            for (d, &gv) in dw[k * cols..(k + 1) * cols].iter_mut().zip(g_row) {
                                *d += xv * gv;
                            }
                        }
                    }
                    dw
                });
                let mut res = vec![dx, dw];
                if *bias {
                    res.push(want(2).then(|| {
                        let mut db = vec![T::zero(); cols];
                        for r in 0..rows {
                            for (d, &gv) in db.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                                *d += gv;
                            }
                        }
                        db
                    }));
                }
                res
            }
            Op::Add => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.to_vec())],
            Op::Sub => vec![want(0).then(|| g.to_vec()), want(1).then(|| map(g, |v| -v))],
            Op::Mul => vec![
                want(0).then(|| zip_map(g, inputs[1], |a, b| a * b)),
                want(1).then(|| zip_map(g, inputs[0], |a, b| a * b)),
            ],
            Op::Sigmoid => vec![Some(zip_map(g, out, |gv, y| gv * y * (T::one() - y)))],
            Op::Tanh => vec![Some(zip_map(g, out, |gv, y| gv * (T::one() - y * y)))],
            Op::Softplus => vec![Some(zip_map(g, inputs[0], |gv, x| gv * scalar::sigmoid(x)))],
            Op::Ln => vec![Some(zip_map(g, inputs[0], |gv, x| gv / x))],
            Op::Sqrt => vec![Some(zip_map(g, out, |gv, y| gv / (y + y)))],
            Op::Abs => vec![Some(zip_map(g, inputs[0], |gv, x| gv * sign(x)))],
            Op::Exp => vec![Some(zip_map(g, out, |gv, y| gv * y))],
            Op::Huber(delta) => {
                let d = *delta;
                vec![Some(zip_map(g, inputs[0], |gv, r| {
                    if r.abs() <= d {
                        gv * r
                    } else {
                        gv * d * sign(r)
                    }
                }))]
            }
            Op::Sum => vec![Some(vec![g[0]; inputs[0].len()])],
            Op::Mean => {
                let n = T::from_usize(inputs[0].len()).unwrap();
                vec![Some(vec![g[0] / n; inputs[0].len()])]
            }
            Op::MaskedMean(mask) => {
                let total: T = mask.iter().copied().sum();
                let s = g[0] / total;
                vec![Some(mask.iter().map(|&m| m * s).collect())]
            }
            Op::MaskedRowMean(mask) => {
                let [rows, cols] = shapes[0];
                let mut dx = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    let ms = &mask[r * cols..(r + 1) * cols];
                    let total: T = ms.iter().copied().sum();
                    if total <= T::zero() {
                        continue;
                    }
                    let s = g[r] / total;
                    for (d, &m) in dx[r * cols..(r + 1) * cols].iter_mut().zip(ms) {
                        *d = m * s;
                    }
                }
                vec![Some(dx)]
            }
            Op::ConcatCols => {
                let [rows, ca] = shapes[0];
                let cb = shapes[1][1];
                let width = ca + cb;
                let da = want(0).then(|| {
                    (0..rows)
                        .flat_map(|r| g[r * width..r * width + ca].iter().copied())
                        .collect()
                });
                let db = want(1).then(|| {
                    (0..rows)
                        .flat_map(|r| g[r * width + ca..(r + 1) * width].iter().copied())
                        .collect()
                });
                vec![da, db]
            }
            Op::Scale(c) => vec![Some(map(g, |v| v * *c))],
            Op::Offset(_) => vec![Some(g.to_vec())],
            Op::GradReverse(alpha) => vec![Some(map(g, |v| -(*alpha) * v))],
        }
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn map<T: Copy>(a: &[T], f: impl Fn(T) -> T) -> Vec<T> {
    a.iter().map(|&x| f(x)).collect()
}

fn zip_map<T: Copy>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
