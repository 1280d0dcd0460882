//! Gated recurrent unit with a hand-written backward pass.
//!
//! ```text
//! z  = sigmoid(W_xz x_t + W_hz h_{t-1} + b_z)
//! r  = sigmoid(W_xr x_t + W_hr h_{t-1} + b_r)
//! h~ = tanh(W_xh x_t + r * (W_hh h_{t-1}) + b_h)
//! h_t = z * h_{t-1} + (1 - z) * h~
//! ```
//!
//! Weight matrices are stored as `(d_in, d_h)` so a projection is `xᵀ W`.

use rand::Rng;

use super::{axpy, axpy_rows, dot, sigmoid, Module, Param, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GruCell<T> {
    pub w_xz: Param<T>,
    pub w_hz: Param<T>,
    pub b_z: Param<T>,
    pub w_xr: Param<T>,
    pub w_hr: Param<T>,
    pub b_r: Param<T>,
    pub w_xh: Param<T>,
    pub w_hh: Param<T>,
    pub b_h: Param<T>,
}

/// Activations of one direction over a whole sequence, indexed by time.
#[derive(Clone, Debug)]
pub struct GruStepCache<T> {
    reverse: bool,
    x: Tensor<T>,
    h_prev: Tensor<T>,
    z: Tensor<T>,
    r: Tensor<T>,
    hh: Tensor<T>,
    cand: Tensor<T>,
    h: Tensor<T>,
}

impl<T: Real> GruStepCache<T> {
    /// Hidden states `(T, d_h)` in input order.
    pub fn hidden(&self) -> &Tensor<T> {
        &self.h
    }

    /// Inputs the direction consumed, `(T, d_in)`.
    pub fn input(&self) -> &Tensor<T> {
        &self.x
    }
}

impl<T: Real> GruCell<T> {
    pub fn new(prefix: &str, d_in: usize, d_h: usize, range: f64, rng: &mut impl Rng) -> Self {
        let mut p = |n: &str, shape: &[usize]| Param::uniform(format!("{prefix}.{n}"), shape, range, rng);
        Self {
            w_xz: p("w_xz", &[d_in, d_h]),
            w_hz: p("w_hz", &[d_h, d_h]),
            b_z: p("b_z", &[d_h]),
            w_xr: p("w_xr", &[d_in, d_h]),
            w_hr: p("w_hr", &[d_h, d_h]),
            b_r: p("b_r", &[d_h]),
            w_xh: p("w_xh", &[d_in, d_h]),
            w_hh: p("w_hh", &[d_h, d_h]),
            b_h: p("b_h", &[d_h]),
        }
    }

    pub fn zeroed(prefix: &str, d_in: usize, d_h: usize) -> Self {
        let p = |n: &str, shape: &[usize]| Param::zeros(format!("{prefix}.{n}"), shape);
        Self {
            w_xz: p("w_xz", &[d_in, d_h]),
            w_hz: p("w_hz", &[d_h, d_h]),
            b_z: p("b_z", &[d_h]),
            w_xr: p("w_xr", &[d_in, d_h]),
            w_hr: p("w_hr", &[d_h, d_h]),
            b_r: p("b_r", &[d_h]),
            w_xh: p("w_xh", &[d_in, d_h]),
            w_hh: p("w_hh", &[d_h, d_h]),
            b_h: p("b_h", &[d_h]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xz.value.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hz.value.rows()
    }

    /// One recurrence step.
    pub fn step(&self, x: &[T], h_prev: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("gru input", self.input_dim(), x.len()));
        }
        if h_prev.len() != self.hidden_dim() {
            return Err(Error::dim("gru state", self.hidden_dim(), h_prev.len()));
        }
        let xs = Tensor::from_vec(&[1, x.len()], x.to_vec())?;
        let cache = self.run(xs, false, Some(h_prev));
        Ok(cache.h.row(0).to_vec())
    }

    /// Runs over `xs` (shape `(T, d_in)`), right-to-left when `reverse`.
    pub fn forward(&self, xs: Tensor<T>, reverse: bool) -> Result<GruStepCache<T>> {
        if xs.cols() != self.input_dim() {
            return Err(Error::dim("gru input", self.input_dim(), xs.cols()));
        }
        Ok(self.run(xs, reverse, None))
    }

    fn run(&self, x: Tensor<T>, reverse: bool, h0: Option<&[T]>) -> GruStepCache<T> {
        let len = x.rows();
        let d_h = self.hidden_dim();
        let mut az = self.project_inputs(&x, &self.w_xz, &self.b_z);
        let mut ar = self.project_inputs(&x, &self.w_xr, &self.b_r);
        let ah = self.project_inputs(&x, &self.w_xh, &self.b_h);
        let mut h_prev_all = Tensor::zeros(&[len, d_h]);
        let mut hh_all = Tensor::zeros(&[len, d_h]);
        let mut cand_all = Tensor::zeros(&[len, d_h]);
        let mut h_all = Tensor::zeros(&[len, d_h]);

        let mut h: Vec<T> = h0.map_or_else(|| vec![T::zero(); d_h], <[T]>::to_vec);
        let mut hh = vec![T::zero(); d_h];
        for step in 0..len {
            let t = if reverse { len - 1 - step } else { step };
            h_prev_all.row_mut(t).copy_from_slice(&h);
            let zt = az.row_mut(t);
            let rt = ar.row_mut(t);
            hh.iter_mut().for_each(|v| *v = T::zero());
            axpy_rows(&h, self.w_hz.value.data(), zt);
            axpy_rows(&h, self.w_hr.value.data(), rt);
            axpy_rows(&h, self.w_hh.value.data(), &mut hh);
            zt.iter_mut().for_each(|v| *v = sigmoid(*v));
            rt.iter_mut().for_each(|v| *v = sigmoid(*v));
            let ct = cand_all.row_mut(t);
            for j in 0..d_h {
                ct[j] = (ah.row(t)[j] + rt[j] * hh[j]).tanh();
                h[j] = zt[j] * h[j] + (T::one() - zt[j]) * ct[j];
            }
            hh_all.row_mut(t).copy_from_slice(&hh);
            h_all.row_mut(t).copy_from_slice(&h);
        }
        GruStepCache {
            reverse,
            x,
            h_prev: h_prev_all,
            z: az,
            r: ar,
            hh: hh_all,
            cand: cand_all,
            h: h_all,
        }
    }

    fn project_inputs(&self, x: &Tensor<T>, w: &Param<T>, b: &Param<T>) -> Tensor<T> {
        let len = x.rows();
        let d_h = self.hidden_dim();
        let mut out = Tensor::zeros(&[len, d_h]);
        for t in 0..len {
            out.row_mut(t).copy_from_slice(b.value.data());
        }
        for i in 0..x.cols() {
            let wi = w.value.row(i);
            for t in 0..len {
                let xi = x.row(t)[i];
                if xi != T::zero() {
                    axpy(xi, wi, out.row_mut(t));
                }
            }
        }
        out
    }

    /// Backpropagates `d_h` (shape `(T, d_h)`, gradient w.r.t. each emitted
    /// hidden state) through the sequence. Accumulates parameter gradients and
    /// adds the input gradient into `d_x` (shape `(T, d_in)`).
    pub fn backward(&mut self, cache: &GruStepCache<T>, d_h: &Tensor<T>, d_x: &mut Tensor<T>) {
        let len = cache.x.rows();
        let dim = self.hidden_dim();
        let mut da_z = Tensor::zeros(&[len, dim]);
        let mut da_r = Tensor::zeros(&[len, dim]);
        let mut da_h = Tensor::zeros(&[len, dim]);
        let mut da_hh = Tensor::zeros(&[len, dim]);
        let mut carry = vec![T::zero(); dim];
        let mut dh_prev = vec![T::zero(); dim];
        for step in (0..len).rev() {
            let t = if cache.reverse { len - 1 - step } else { step };
            let (z, r, cand, hp, hh) = (
                cache.z.row(t),
                cache.r.row(t),
                cache.cand.row(t),
                cache.h_prev.row(t),
                cache.hh.row(t),
            );
            let (gz, gr, gh, dhh) = (da_z.row_mut(t), da_r.row_mut(t), da_h.row_mut(t), da_hh.row_mut(t));
            for j in 0..dim {
                let dh = d_h.row(t)[j] + carry[j];
                dh_prev[j] = dh * z[j];
                let dz = dh * (hp[j] - cand[j]);
                let dcand = dh * (T::one() - z[j]);
                let dah = dcand * (T::one() - cand[j] * cand[j]);
                gh[j] = dah;
                dhh[j] = dah * r[j];
                let dr = dah * hh[j];
                gr[j] = dr * r[j] * (T::one() - r[j]);
                gz[j] = dz * z[j] * (T::one() - z[j]);
            }
            for i in 0..dim {
                dh_prev[i] += dot(self.w_hz.value.row(i), gz)
                    + dot(self.w_hr.value.row(i), gr)
                    + dot(self.w_hh.value.row(i), dhh);
            }
            std::mem::swap(&mut carry, &mut dh_prev);
        }
        // Recurrent weight gradients once the sequence is done, one weight
        // row at a time.
        let mut col = vec![T::zero(); len];
        for i in 0..dim {
            for (t, c) in col.iter_mut().enumerate() {
                *c = cache.h_prev.row(t)[i];
            }
            axpy_rows(&col, da_z.data(), self.w_hz.grad.row_mut(i));
            axpy_rows(&col, da_r.data(), self.w_hr.grad.row_mut(i));
            axpy_rows(&col, da_hh.data(), self.w_hh.grad.row_mut(i));
        }
        Self::input_backward(&mut self.w_xz, &mut self.b_z, &cache.x, &da_z, d_x);
        Self::input_backward(&mut self.w_xr, &mut self.b_r, &cache.x, &da_r, d_x);
        Self::input_backward(&mut self.w_xh, &mut self.b_h, &cache.x, &da_h, d_x);
    }

    fn input_backward(
        w: &mut Param<T>,
        b: &mut Param<T>,
        x: &Tensor<T>,
        da: &Tensor<T>,
        d_x: &mut Tensor<T>,
    ) {
        let len = x.rows();
        for t in 0..len {
            axpy(T::one(), da.row(t), b.grad.data_mut());
        }
        let mut col = vec![T::zero(); len];
        for i in 0..x.cols() {
            for (t, c) in col.iter_mut().enumerate() {
                *c = x.row(t)[i];
                d_x.row_mut(t)[i] += dot(w.value.row(i), da.row(t));
            }
            axpy_rows(&col, da.data(), w.grad.row_mut(i));
        }
    }
}

impl<T: Real> Module<T> for GruCell<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for p in [
            &self.w_xz, &self.w_hz, &self.b_z, &self.w_xr, &self.w_hr, &self.b_r, &self.w_xh,
            &self.w_hh, &self.b_h,
        ] {
            f(p);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for p in [
            &mut self.w_xz,
            &mut self.w_hz,
            &mut self.b_z,
            &mut self.w_xr,
            &mut self.w_hr,
            &mut self.b_r,
            &mut self.w_xh,
            &mut self.w_hh,
            &mut self.b_h,
        ] {
            f(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-loop re-implementation of one step with `W` stored `(d_in, d_h)`.
    fn reference_step(cell: &GruCell<f64>, x: &[f64], h: &[f64]) -> Vec<f64> {
        let d_h = h.len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let proj = |w: &Param<f64>, v: &[f64], j: usize| -> f64 {
            (0..v.len()).map(|i| w.value.data()[i * d_h + j] * v[i]).sum()
        };
        let mut out = vec![0.0; d_h];
        for j in 0..d_h {
            let z = sig(proj(&cell.w_xz, x, j) + proj(&cell.w_hz, h, j) + cell.b_z.value.data()[j]);
            let r = sig(proj(&cell.w_xr, x, j) + proj(&cell.w_hr, h, j) + cell.b_r.value.data()[j]);
            let c = (proj(&cell.w_xh, x, j) + r * proj(&cell.w_hh, h, j) + cell.b_h.value.data()[j]).tanh();
            out[j] = z * h[j] + (1.0 - z) * c;
        }
        out
    }

    #[test]
    fn zero_weights_halve_state() {
        let cell = GruCell::<f64>::zeroed("c", 2, 1);
        let h = cell.step(&[3.0, -7.0], &[1.0]).unwrap();
        assert_eq!(h, vec![0.5]);
    }

    #[test]
    fn saturated_update_gate_carries_state() {
        let mut cell = GruCell::<f64>::zeroed("c", 1, 2);
        cell.b_z.value.fill(20.0);
        let h = cell.step(&[5.0], &[0.3, -0.7]).unwrap();
        assert!((h[0] - 0.3).abs() < 1e-8);
        assert!((h[1] + 0.7).abs() < 1e-8);
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = GruCell::<f64>::new("c", 3, 3, 0.8, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = cell.step(&x, &h).unwrap();
        let want = reference_step(&cell, &x, &h);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let cell = GruCell::<f64>::zeroed("c", 2, 2);
        assert!(cell.step(&[1.0], &[0.0, 0.0]).is_err());
        assert!(cell.step(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn output_bounded_by_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cell = GruCell::<f64>::new("c", 4, 5, 2.0, &mut rng);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let h: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let bound = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for v in cell.step(&x, &h).unwrap() {
                assert!(v.abs() <= bound);
            }
        }
    }
}
