use crate::scalar::Scalar;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, shapes: &[usize]) -> Self {
        Adam {
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
            eps: T::lit(1e-8),
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Vec<T>>, grads: &[Vec<T>], lr: T) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter tensor");
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // After one step the bias-corrected ratio m/sqrt(v) is sign(g).
        let mut p = vec![1.0f64, -2.0];
        let mut adam = Adam::new(0.9, 0.999, &[2]);
        adam.step(vec![&mut p], &[vec![0.5, -3.0]], 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 1.99).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![5.0f64];
        let mut adam = Adam::new(0.9, 0.999, &[1]);
        for _ in 0..3000 {
            let g = vec![2.0 * (p[0] - 1.5)];
            adam.step(vec![&mut p], &[g], 0.05);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }
}
