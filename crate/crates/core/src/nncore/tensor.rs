use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Most operations treat a tensor as a matrix: shape `[n]` is one row of
/// `n` columns and shape `[r, c]` is `r` rows of `c` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Usage(format!(
                "shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Matrix from rows of equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Usage("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    /// Column vector `[n, 1]`.
    pub fn column(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Usage(format!(
                "expected a single value, shape is {:?}",
                self.shape
            )))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.data.len(), other.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `x · w + bias` for `x: [n, k]`, `w: [k, m]`, `bias: [m]`.
///
/// Zero entries of `x` are skipped, which makes one-hot inputs cheap.
pub(crate) fn affine(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let (n, k, m) = (x.rows(), x.cols(), w.cols());
    debug_assert_eq!(k, w.rows());
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        let out_row = &mut out[r * m..(r + 1) * m];
        if let Some(b) = bias {
            out_row.copy_from_slice(&b.data);
        }
        let x_row = &x.data[r * k..(r + 1) * k];
        for (i, &xv) in x_row.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let w_row = &w.data[i * m..(i + 1) * m];
            for (o, &wv) in out_row.iter_mut().zip(w_row) {
                *o += xv * wv;
            }
        }
    }
    Tensor {
        shape: vec![n, m],
        data: out,
    }
}

/// Gradients of `y = x · w` given `dy`: returns `(dx, dw)`. `dx` is skipped
/// when `need_dx` is false.
pub(crate) fn affine_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Tensor) {
    let (n, k, m) = (x.rows(), x.cols(), w.cols());
    let mut dw = vec![0.0; k * m];
    for r in 0..n {
        let dy_row = &dy.data[r * m..(r + 1) * m];
        let x_row = &x.data[r * k..(r + 1) * k];
        for (i, &xv) in x_row.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let dw_row = &mut dw[i * m..(i + 1) * m];
            for (d, &g) in dw_row.iter_mut().zip(dy_row) {
                *d += xv * g;
            }
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; n * k];
        for r in 0..n {
            let dy_row = &dy.data[r * m..(r + 1) * m];
            for i in 0..k {
                let w_row = &w.data[i * m..(i + 1) * m];
                dx[r * k + i] = w_row.iter().zip(dy_row).map(|(a, b)| a * b).sum();
            }
        }
        Tensor {
            shape: vec![n, k],
            data: dx,
        }
    });
    (
        dx,
        Tensor {
            shape: w.shape.clone(),
            data: dw,
        },
    )
}
