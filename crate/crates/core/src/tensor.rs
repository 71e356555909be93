//! Dense row-major tensors, the vector products used to assemble CP
//! tensors, and normalized coordinate axes.

use crate::error::{invalid, Error, Result};

/// A dense D-dimensional array of `f64` in row-major order (last index
/// fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return invalid("tensor order must be at least 1");
    }
    if let Some(d) = shape.iter().position(|&n| n == 0) {
        return invalid(format!("dimension {d} has size 0"));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if data.len() != len {
            return invalid(format!(
                "data length {} does not match shape {:?} ({} entries)",
                data.len(),
                shape,
                len
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = validate_shape(shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment_index(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
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

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = self.flat_index(idx);
        self.data[k] = value;
    }

    /// Reinterprets the data under a new shape with the same entry count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            ));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|a| alpha * a)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of the 2D slice `[:, :, t]` of a third-order tensor.
    pub fn frame(&self, t: usize) -> Result<Tensor> {
        if self.order() != 3 {
            return invalid("frame() requires a third-order tensor");
        }
        let (n1, n2, n3) = (self.shape[0], self.shape[1], self.shape[2]);
        if t >= n3 {
            return invalid(format!("frame {t} out of range (n3 = {n3})"));
        }
        let data = (0..n1 * n2).map(|p| self.data[p * n3 + t]).collect();
        Tensor::from_vec(&[n1, n2], data)
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Advances a row-major multi-index, wrapping to zero after the last entry.
pub(crate) fn increment_index(idx: &mut [usize], shape: &[usize]) {
    for d in (0..shape.len()).rev() {
        idx[d] += 1;
        if idx[d] < shape[d] {
            return;
        }
        idx[d] = 0;
    }
}

/// Iterated outer product of `vs`; entry `[i_1,…,i_D]` is `∏_d vs[d][i_d]`.
pub fn outer_product(vs: &[&[f64]]) -> Result<Tensor> {
    if vs.is_empty() {
        return invalid("outer product of an empty vector sequence");
    }
    if let Some(d) = vs.iter().position(|v| v.is_empty()) {
        return invalid(format!("factor {d} is empty"));
    }
    let shape: Vec<usize> = vs.iter().map(|v| v.len()).collect();
    // Expand one factor at a time so the last factor varies fastest.
    let mut data = vs[0].to_vec();
    for v in &vs[1..] {
        let mut next = Vec::with_capacity(data.len() * v.len());
        for &a in &data {
            next.extend(v.iter().map(|&b| a * b));
        }
        data = next;
    }
    Tensor::from_vec(&shape, data)
}

/// Sum over ranks of the outer products of `factors[r][d]`.
pub fn cp_assemble(factors: &[Vec<Vec<f64>>]) -> Result<Tensor> {
    let first = factors
        .first()
        .ok_or_else(|| Error::InvalidArgument("CP rank must be at least 1".into()))?;
    let shape: Vec<usize> = first.iter().map(|h| h.len()).collect();
    for (r, term) in factors.iter().enumerate() {
        if term.len() != shape.len() {
            return invalid(format!(
                "rank term {r} has {} factors, expected {}",
                term.len(),
                shape.len()
            ));
        }
        for (d, h) in term.iter().enumerate() {
            if h.len() != shape[d] {
                return invalid(format!(
                    "factor ({r}, {d}) has length {}, expected {}",
                    h.len(),
                    shape[d]
                ));
            }
        }
    }
    let mut acc = Tensor::zeros(&shape)?;
    for term in factors {
        let views: Vec<&[f64]> = term.iter().map(|h| h.as_slice()).collect();
        let rank_one = outer_product(&views)?;
        for (a, b) in acc.data.iter_mut().zip(rank_one.data) {
            *a += b;
        }
    }
    Ok(acc)
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return invalid(format!(
            "hadamard length mismatch: {} vs {}",
            a.len(),
            b.len()
        ));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Per-axis sample positions of a tensor, each strictly increasing in [0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    axes: Vec<Vec<f64>>,
}

impl CoordinateGrid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return invalid("coordinate grid needs at least one axis");
        }
        for (d, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return invalid(format!("axis {d} is empty"));
            }
            for &v in axis {
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::OutOfDomain { axis: d, value: v });
                }
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return invalid(format!("axis {d} is not strictly increasing"));
            }
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, d: usize) -> &[f64] {
        &self.axes[d]
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn point_count(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }
}

/// Axis `d` is `(0, 1/n_d, …, (n_d − 1)/n_d)`.
pub fn uniform_coordinates(shape: &[usize]) -> Result<CoordinateGrid> {
    validate_shape(shape)?;
    let axes = shape
        .iter()
        .map(|&n| (0..n).map(|i| i as f64 / n as f64).collect())
        .collect();
    Ok(CoordinateGrid { axes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_outer(vs: &[Vec<f64>]) -> Vec<f64> {
        let shape: Vec<usize> = vs.iter().map(|v| v.len()).collect();
        let total: usize = shape.iter().product();
        let mut out = Vec::new();
        for flat in 0..total {
            let mut rem = flat;
            let mut prod = 1.0;
            for d in (0..vs.len()).rev() {
                let i = rem % shape[d];
                rem /= shape[d];
                prod *= vs[d][i];
            }
            out.push(prod);
        }
        out
    }

    #[test]
    fn outer_product_two_vectors() {
        let t = outer_product(&[&[2.0, 3.0], &[5.0, 7.0]]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[10.0, 14.0, 15.0, 21.0]);
        let ones = outer_product(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert!(ones.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn outer_product_three_factors_matches_loops() {
        let t = outer_product(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0]]).unwrap();
        assert_eq!(t.shape(), &[2, 2, 1]);
        let mut expected = Vec::new();
        for a in [1.0, 2.0] {
            for b in [3.0, 4.0] {
                for c in [5.0] {
                    expected.push(a * b * c);
                }
            }
        }
        assert_eq!(t.data(), expected.as_slice());
        assert_eq!(t.data(), &[15.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn outer_product_rejects_empty() {
        assert!(matches!(outer_product(&[]), Err(Error::InvalidArgument(_))));
        assert!(outer_product(&[&[1.0], &[]]).is_err());
    }

    #[test]
    fn cp_assemble_cases() {
        let t = cp_assemble(&[vec![vec![1.0, 0.0], vec![1.0, 0.0]]]).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0]);

        let f1 = vec![vec![1.0, -2.0, 0.5], vec![3.0, 1.0, -1.0]];
        let f2 = vec![vec![0.25, 4.0, 2.0], vec![-1.0, 0.0, 1.5]];
        let t = cp_assemble(&[f1.clone(), f2.clone()]).unwrap();
        let a = brute_outer(&f1);
        let b = brute_outer(&f2);
        for (k, v) in t.data().iter().enumerate() {
            assert_eq!(*v, a[k] + b[k]);
        }

        let z = cp_assemble(&[
            vec![vec![0.0, 0.0], vec![3.0, 1.0]],
            vec![vec![5.0, 2.0], vec![0.0, 0.0]],
        ])
        .unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cp_assemble_rejects_mismatched_lengths() {
        let r = cp_assemble(&[
            vec![vec![1.0, 2.0], vec![1.0]],
            vec![vec![1.0, 2.0, 3.0], vec![1.0]],
        ]);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn uniform_coordinates_values() {
        let g = uniform_coordinates(&[1, 4, 3]).unwrap();
        assert_eq!(g.axis(0), &[0.0]);
        assert_eq!(g.axis(1), &[0.0, 0.25, 0.5, 0.75]);
        assert_eq!(g.axis(2), &[0.0, 1.0 / 3.0, 2.0 / 3.0]);
        assert!(g.axis(2)[2] < 1.0);
        assert!(uniform_coordinates(&[3, 0]).is_err());
    }

    #[test]
    fn hadamard_and_concat() {
        assert_eq!(hadamard(&[1.0, 1.0], &[3.5, -2.0]).unwrap(), vec![3.5, -2.0]);
        assert_eq!(hadamard(&[2.0, 3.0], &[4.0, 5.0]).unwrap(), vec![8.0, 15.0]);
        assert!(hadamard(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(concat(&[1.0, 2.0], &[3.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn tensor_validation() {
        assert!(Tensor::zeros(&[]).is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::from_fn(&[2, 3], |i| (i[0] * 10 + i[1]) as f64).unwrap();
        assert_eq!(t.get(&[1, 2]), 12.0);
        assert_eq!(t.strides(), vec![3, 1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn factor_set() -> impl Strategy<Value = Vec<Vec<f64>>> {
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 1..4), 1..4)
        }

        proptest! {
            #[test]
            fn rank_one_cp_equals_outer(f in factor_set()) {
                let views: Vec<&[f64]> = f.iter().map(|v| v.as_slice()).collect();
                let outer = outer_product(&views).unwrap();
                let cp = cp_assemble(&[f.clone()]).unwrap();
                prop_assert_eq!(outer, cp);
            }

            #[test]
            fn outer_is_multilinear(f in factor_set(), alpha in -4.0f64..4.0) {
                let views: Vec<&[f64]> = f.iter().map(|v| v.as_slice()).collect();
                let base = outer_product(&views).unwrap();
                let scaled0: Vec<f64> = f[0].iter().map(|x| alpha * x).collect();
                let mut views2 = views.clone();
                views2[0] = &scaled0;
                let scaled = outer_product(&views2).unwrap();
                for (a, b) in base.data().iter().zip(scaled.data()) {
                    prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }

            #[test]
            fn coordinates_increase_within_unit(shape in prop::collection::vec(1usize..50, 1..4)) {
                let g = uniform_coordinates(&shape).unwrap();
                for axis in g.axes() {
                    prop_assert!(axis.windows(2).all(|w| w[0] < w[1]));
                    prop_assert!(axis.iter().all(|&v| (0.0..1.0).contains(&v)));
                }
            }
        }
    }
}
