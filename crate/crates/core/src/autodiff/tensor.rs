use super::AdError;

/// Dense row-major tensor of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AdError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AdError::Shape {
                op: "tensor",
                detail: format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    /// Builds an `[rows.len(), width]` matrix; every row must have `width` entries.
    pub fn from_rows<const W: usize>(rows: &[[f64; W]]) -> Self {
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self { shape: vec![rows.len(), W], data }
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64, AdError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(AdError::Shape {
                op: "item",
                detail: format!("expected one element, shape is {:?}", self.shape),
            })
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, AdError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(AdError::Shape {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape.last().copied().unwrap_or(1);
        &self.data[i * w..(i + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
