//! Two-layer ramp MLP `f(h) = W2 · max(0, W1 h + b)` applied row-wise to a
//! batch of input vectors.

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::params::{BlockId, ParamKind, ParamStore};
use crate::rng::Rng;

/// `C = alpha·A·B + beta·C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    assert!(b.len() >= (k.max(1) - 1) * rsb + (n - 1) * csb + 1 || k == 0);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub w1: BlockId,
    pub b1: BlockId,
    pub w2: BlockId,
}

impl Mlp {
    /// Registers `<prefix>.w1` (hidden×input), `<prefix>.b1` and
    /// `<prefix>.w2` (1×hidden), uniform in ±1/√fan_in. With `zero_output`
    /// the output row starts at zero so the network is identically 0.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        kind: ParamKind,
        zero_output: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return invalid("MLP widths must be positive");
        }
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let w1 = (0..hidden * input).map(|_| rng.random_range(-a1..=a1)).collect();
        let b1 = (0..hidden).map(|_| rng.random_range(-a1..=a1)).collect();
        let w2 = if zero_output {
            vec![0.0; hidden]
        } else {
            (0..hidden).map(|_| rng.random_range(-a2..=a2)).collect()
        };
        Ok(Self {
            input,
            hidden,
            w1: store.add(&format!("{prefix}.w1"), &[hidden, input], kind, w1)?,
            b1: store.add(&format!("{prefix}.b1"), &[hidden], kind, b1)?,
            w2: store.add(&format!("{prefix}.w2"), &[1, hidden], kind, w2)?,
        })
    }

    /// Returns the ramp activations (rows×hidden) and the outputs.
    pub fn forward(&self, store: &ParamStore, h: &[f64], rows: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if h.len() != rows * self.input {
            return invalid(format!(
                "decoder expects width {}, got {} values for {rows} rows",
                self.input,
                h.len()
            ));
        }
        let (w1, b1, w2) = (store.value(self.w1), store.value(self.b1), store.value(self.w2));
        let nh = self.hidden;
        let mut act = vec![0.0; rows * nh];
        gemm(rows, self.input, nh, h, (self.input, 1), w1, (1, self.input), 0.0, &mut act);
        let mut out = vec![0.0; rows];
        for (row, o) in act.chunks_mut(nh).zip(out.iter_mut()) {
            let mut acc = 0.0;
            for j in 0..nh {
                let z = (row[j] + b1[j]).max(0.0);
                row[j] = z;
                acc += w2[j] * z;
            }
            *o = acc;
        }
        Ok((act, out))
    }

    /// Accumulates parameter gradients and returns `∂loss/∂h`.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        h: &[f64],
        act: &[f64],
        dout: &[f64],
    ) -> Vec<f64> {
        let rows = dout.len();
        let nh = self.hidden;
        let w2 = store.value(self.w2).to_vec();
        let mut da = vec![0.0; rows * nh];
        {
            let gw2 = store.grad_mut(self.w2);
            for p in 0..rows {
                let g = dout[p];
                let a = &act[p * nh..(p + 1) * nh];
                let d = &mut da[p * nh..(p + 1) * nh];
                for j in 0..nh {
                    gw2[j] += g * a[j];
                    if a[j] > 0.0 {
                        d[j] = g * w2[j];
                    }
                }
            }
        }
        {
            let gb = store.grad_mut(self.b1);
            for row in da.chunks(nh) {
                gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        gemm(
            nh,
            rows,
            self.input,
            &da,
            (1, nh),
            h,
            (self.input, 1),
            1.0,
            store.grad_mut(self.w1),
        );
        let mut dh = vec![0.0; rows * self.input];
        gemm(
            rows,
            nh,
            self.input,
            &da,
            (nh, 1),
            store.value(self.w1),
            (self.input, 1),
            0.0,
            &mut dh,
        );
        dh
    }

    /// Entrywise L1 norms of W1 and W2 multiplied, the `η` of the
    /// smoothness bound.
    pub fn weight_l1_product(&self, store: &ParamStore) -> f64 {
        let l1 = |id| store.value(id).iter().map(|v: &f64| v.abs()).sum::<f64>();
        l1(self.w1) * l1(self.w2)
    }
}
