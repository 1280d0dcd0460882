//! Stacked bidirectional GRU with vertical (inter-layer) dropout.

use rand::{Rng, RngCore};

use super::{GruCell, GruStepCache, Module, Param, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BiGruStack<T> {
    pub layers: Vec<(GruCell<T>, GruCell<T>)>,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
struct LayerCache<T> {
    fwd: GruStepCache<T>,
    bwd: GruStepCache<T>,
    /// Dropout mask applied to this layer's input (already scaled).
    mask: Option<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct BiGruCache<T> {
    layers: Vec<LayerCache<T>>,
    /// Top-layer outputs, `(T, 2 d_h)`.
    pub hidden: Tensor<T>,
    /// Forward state at the last token followed by backward state at the first.
    pub final_state: Vec<T>,
}

impl<T: Real> BiGruStack<T> {
    pub fn new(
        prefix: &str,
        d_in: usize,
        d_h: usize,
        num_layers: usize,
        dropout: f64,
        range: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let input = if l == 0 { d_in } else { 2 * d_h };
                (
                    GruCell::new(&format!("{prefix}.l{l}.fwd"), input, d_h, range, rng),
                    GruCell::new(&format!("{prefix}.l{l}.bwd"), input, d_h, range, rng),
                )
            })
            .collect();
        Self { layers, dropout }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].0.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    /// Encodes `(T, d_in)` inputs. Dropout masks are drawn only when `rng` is
    /// given (training); inference is deterministic.
    pub fn forward(&self, inputs: Tensor<T>, mut rng: Option<&mut dyn RngCore>) -> Result<BiGruCache<T>> {
        if inputs.rows() == 0 {
            return Err(Error::Empty("bigru input sequence"));
        }
        let len = inputs.rows();
        let d_h = self.hidden_dim();
        let mut x = inputs;
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            let mask = match rng.as_deref_mut() {
                Some(r) if l > 0 && self.dropout > 0.0 => {
                    let keep = 1.0 - self.dropout;
                    let scale = T::lit(1.0 / keep);
                    let m: Vec<T> = (0..x.cols())
                        .map(|_| if r.gen::<f64>() < keep { scale } else { T::zero() })
                        .collect();
                    for t in 0..len {
                        for (v, &k) in x.row_mut(t).iter_mut().zip(&m) {
                            *v *= k;
                        }
                    }
                    Some(m)
                }
                _ => None,
            };
            let fc = fwd.forward(x.clone(), false)?;
            let bc = bwd.forward(x, true)?;
            let mut out = Tensor::zeros(&[len, 2 * d_h]);
            for t in 0..len {
                let row = out.row_mut(t);
                row[..d_h].copy_from_slice(fc.hidden().row(t));
                row[d_h..].copy_from_slice(bc.hidden().row(t));
            }
            caches.push(LayerCache { fwd: fc, bwd: bc, mask });
            x = out;
        }
        let mut final_state = x.row(len - 1)[..d_h].to_vec();
        final_state.extend_from_slice(&x.row(0)[d_h..]);
        Ok(BiGruCache {
            layers: caches,
            hidden: x,
            final_state,
        })
    }

    /// Backward pass. `d_hidden` is the gradient w.r.t. the top-layer output
    /// sequence, `d_final` w.r.t. the final state. Returns the input gradient.
    pub fn backward(
        &mut self,
        cache: &BiGruCache<T>,
        d_hidden: Option<&Tensor<T>>,
        d_final: Option<&[T]>,
    ) -> Tensor<T> {
        let len = cache.hidden.rows();
        let d_h = self.hidden_dim();
        let mut d_out = match d_hidden {
            Some(d) => d.clone(),
            None => Tensor::zeros(&[len, 2 * d_h]),
        };
        if let Some(df) = d_final {
            for j in 0..d_h {
                d_out.row_mut(len - 1)[j] += df[j];
                d_out.row_mut(0)[d_h + j] += df[d_h + j];
            }
        }
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            let (fwd, bwd) = &mut self.layers[l];
            let mut d_f = Tensor::zeros(&[len, d_h]);
            let mut d_b = Tensor::zeros(&[len, d_h]);
            for t in 0..len {
                let row = d_out.row(t);
                d_f.row_mut(t).copy_from_slice(&row[..d_h]);
                d_b.row_mut(t).copy_from_slice(&row[d_h..]);
            }
            let mut d_x = Tensor::zeros(&[len, fwd.input_dim()]);
            fwd.backward(&lc.fwd, &d_f, &mut d_x);
            bwd.backward(&lc.bwd, &d_b, &mut d_x);
            if let Some(mask) = &lc.mask {
                for t in 0..len {
                    for (v, &k) in d_x.row_mut(t).iter_mut().zip(mask) {
                        *v *= k;
                    }
                }
            }
            d_out = d_x;
        }
        d_out
    }
}

impl<T: Real> Module<T> for BiGruStack<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for (a, b) in &self.layers {
            a.visit_params(f);
            b.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for (a, b) in &mut self.layers {
            a.visit_params_mut(f);
            b.visit_params_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Tensor<f64> {
        Tensor::uniform(&[len, dim], 1.0, rng)
    }

    #[test]
    fn single_step_final_equals_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stack = BiGruStack::<f64>::new("s", 3, 2, 2, 0.5, 0.5, &mut rng);
        let x = random_inputs(&mut rng, 1, 3);
        let c = stack.forward(x, None).unwrap();
        assert_eq!(c.final_state, c.hidden.row(0).to_vec());
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stack = BiGruStack::<f64>::new("s", 3, 2, 2, 0.5, 0.5, &mut rng);
        assert!(stack.forward(Tensor::zeros(&[0, 3]), None).is_err());
    }

    #[test]
    fn inference_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stack = BiGruStack::<f32>::new("s", 4, 3, 2, 0.5, 0.5, &mut rng);
        let x = Tensor::uniform(&[5, 4], 1.0, &mut rng);
        let a = stack.forward(x.clone(), None).unwrap();
        let b = stack.forward(x, None).unwrap();
        assert_eq!(a.hidden, b.hidden);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn matches_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stack = BiGruStack::<f64>::new("s", 3, 2, 2, 0.0, 0.5, &mut rng);
        let x = random_inputs(&mut rng, 3, 3);
        let got = stack.forward(x.clone(), None).unwrap();

        let mut layer_in: Vec<Vec<f64>> = (0..3).map(|t| x.row(t).to_vec()).collect();
        for (fwd, bwd) in &stack.layers {
            let mut f = vec![vec![0.0; 2]; 3];
            let mut h = vec![0.0; 2];
            for t in 0..3 {
                h = fwd.step(&layer_in[t], &h).unwrap();
                f[t] = h.clone();
            }
            let mut b = vec![vec![0.0; 2]; 3];
            let mut h = vec![0.0; 2];
            for t in (0..3).rev() {
                h = bwd.step(&layer_in[t], &h).unwrap();
                b[t] = h.clone();
            }
            layer_in = (0..3).map(|t| [f[t].clone(), b[t].clone()].concat()).collect();
        }
        for t in 0..3 {
            for (g, w) in got.hidden.row(t).iter().zip(&layer_in[t]) {
                assert!((g - w).abs() < 1e-12);
            }
        }
        let want_final = [&layer_in[2][..2], &layer_in[0][2..]].concat();
        assert_eq!(got.final_state.len(), 4);
        for (g, w) in got.final_state.iter().zip(&want_final) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_preserves_expected_activation() {
        // The masked boundary is the second layer's input.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = 0.5;
        let stack = BiGruStack::<f64>::new("s", 2, 2, 2, p, 0.5, &mut rng);
        let x = random_inputs(&mut rng, 2, 2);
        let clean = stack.forward(x.clone(), None).unwrap();
        let reference: f64 = clean.layers[1].fwd.input().data().iter().sum();
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let c = stack.forward(x.clone(), Some(&mut rng)).unwrap();
            acc += c.layers[1].fwd.input().data().iter().sum::<f64>();
        }
        let mean = acc / n as f64;
        assert!(((mean - reference) / reference).abs() < 0.02, "{mean} vs {reference}");
    }
}
