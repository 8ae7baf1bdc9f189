use super::Matrix;
use crate::error::{Error, Result};

/// A model whose trainable tensors can be enumerated by name in a fixed order.
///
/// The same type doubles as its own gradient container.
pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    fn named(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        self.visit(&mut |n, m| out.push((n.to_string(), m.clone())));
        out
    }

    fn flat(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        self.visit(&mut |_, m| out.push(m.clone()));
        out
    }

    /// Overwrites every tensor from `values`, in visit order.
    fn load_flat(&mut self, values: &[Matrix]) -> Result<()> {
        let mut it = values.iter();
        let mut err = None;
        self.visit_mut(&mut |name, m| match it.next() {
            Some(v) if v.shape() == m.shape() => *m = v.clone(),
            Some(v) => {
                err.get_or_insert_with(|| {
                    Error::shape(
                        "load_flat",
                        format!("{name}: {:?} vs {:?}", m.shape(), v.shape()),
                    )
                });
            }
            None => {
                err.get_or_insert_with(|| Error::shape("load_flat", "too few tensors"));
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if it.next().is_some() {
            return Err(Error::shape("load_flat", "too many tensors"));
        }
        Ok(())
    }

    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.visit_mut(&mut |_, m| *m = Matrix::zeros(m.rows(), m.cols()));
        z
    }

    fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m| n += m.data().len());
        n
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, m| ok &= m.is_finite());
        ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimiser state for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: u64,
}

impl Adam {
    pub fn new<P: ParamSet>(config: AdamConfig, params: &P) -> Self {
        let mut first = Vec::new();
        params.visit(&mut |_, m| first.push(Matrix::zeros(m.rows(), m.cols())));
        Self {
            config,
            second: first.clone(),
            first,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.flat();
        if g.len() != self.first.len() {
            return Err(Error::shape("adam", "gradient tensor count mismatch"));
        }
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        let mut idx = 0;
        let first = &mut self.first;
        let second = &mut self.second;
        params.visit_mut(&mut |_, p| {
            let (m, v, g) = (&mut first[idx], &mut second[idx], &g[idx]);
            for (((w, mi), vi), gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
            idx += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Quad {
        w: Matrix,
    }

    impl ParamSet for Quad {
        fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
            f("w", &self.w);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
            f("w", &mut self.w);
        }
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut q = Quad {
            w: Matrix::row_vector(&[3.0, -2.0]),
        };
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..Default::default()
            },
            &q,
        );
        for _ in 0..500 {
            let g = Quad { w: q.w.scale(2.0) };
            opt.step(&mut q, &g).unwrap();
        }
        assert!(q.w.max_abs() < 1e-2, "{:?}", q.w);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut q = Quad {
            w: Matrix::row_vector(&[1.0]),
        };
        let mut opt = Adam::new(AdamConfig::default(), &q);
        opt.step(&mut q, &Quad { w: Matrix::row_vector(&[10.0]) })
            .unwrap();
        assert!((q.w.get(0, 0) - (1.0 - 5e-4)).abs() < 1e-9);
    }

    #[test]
    fn load_flat_round_trip() {
        let mut q = Quad {
            w: Matrix::row_vector(&[1.0, 2.0]),
        };
        let flat = vec![Matrix::row_vector(&[5.0, 6.0])];
        q.load_flat(&flat).unwrap();
        assert_eq!(q.flat(), flat);
        assert!(q.load_flat(&[Matrix::zeros(2, 2)]).is_err());
    }
}
