/// Adam moment estimates with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, h: &AdamHyper, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - h.beta1.powi(t);
        let c2 = 1.0 - h.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = h.beta1 * *m + (1.0 - h.beta1) * g;
            *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: AdamHyper = AdamHyper { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };

    #[test]
    fn first_step_moves_by_lr() {
        // Bias correction makes the first update ±lr regardless of gradient size.
        let mut s = AdamState::new(3);
        let mut p = vec![1.0, 1.0, 1.0];
        s.step(&H, &mut p, &[5.0, -0.01, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert_eq!(p[2], 1.0);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(2);
        let mut p = vec![0.3, -0.7];
        for _ in 0..5 {
            s.step(&H, &mut p, &[0.0, 0.0]);
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn constant_gradient_step_is_lr() {
        let mut s = AdamState::new(1);
        let mut p = vec![0.0];
        let mut prev = 0.0;
        for _ in 0..200 {
            s.step(&H, &mut p, &[0.37]);
            let delta = prev - p[0];
            assert!((delta - H.lr).abs() < 1e-6 * H.lr + 1e-9);
            prev = p[0];
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let mut s = AdamState::new(2);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            s.step(&H, &mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2), "{p:?}");
    }
}
