use std::fmt;

/// Dense row-major array of `f64` with an explicit shape.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            data.len(),
            "shape {shape:?} needs {n} elements, got {}",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
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
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            self.data.len(),
            "cannot reshape {:?} to {shape:?}",
            self.shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects item `index` along the leading axis, keeping it as a size-1 axis.
    pub fn select_batch(&self, index: usize) -> Tensor {
        let n = self.shape[0];
        assert!(index < n, "batch index {index} out of range {n}");
        let stride = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor {
            shape,
            data: self.data[index * stride..(index + 1) * stride].to_vec(),
        }
    }

    /// Concatenates tensors along their leading (batch) axis.
    pub fn stack_batch(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "stack_batch of nothing");
        let inner = &items[0].shape[1..];
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            assert_eq!(&t.shape[1..], inner, "stack_batch shape mismatch");
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(inner);
        Tensor { shape, data }
    }

    /// Softmax across axis 1 of an `[N, C, ...]` tensor.
    pub fn softmax_axis1(&self) -> Tensor {
        assert!(self.rank() >= 2, "softmax_axis1 needs rank >= 2");
        let n = self.shape[0];
        let c = self.shape[1];
        let inner: usize = self.shape[2..].iter().product();
        let mut out = vec![0.0; self.data.len()];
        for b in 0..n {
            let base = b * c * inner;
            for p in 0..inner {
                let mut m = f64::NEG_INFINITY;
                for k in 0..c {
                    m = m.max(self.data[base + k * inner + p]);
                }
                let mut s = 0.0;
                for k in 0..c {
                    let e = (self.data[base + k * inner + p] - m).exp();
                    out[base + k * inner + p] = e;
                    s += e;
                }
                for k in 0..c {
                    out[base + k * inner + p] /= s;
                }
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data: out,
        }
    }
}
