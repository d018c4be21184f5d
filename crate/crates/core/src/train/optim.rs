use crate::model::Parameters;

/// Decoupled-weight-decay Adam.
///
/// Weight decay applies only to tensors with more than one row and column;
/// biases, norm gains and the classifier row vector are not decayed.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    first: Parameters,
    second: Parameters,
    steps: u64,
}

impl AdamW {
    pub fn new(shape_of: &Parameters, weight_decay: f64) -> Self {
        let mut first = shape_of.clone();
        first.zero_();
        let second = first.clone();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            first,
            second,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let grads = grads.named_tensors();
        let firsts = self.first.tensors_mut();
        let seconds = self.second.tensors_mut();
        for (((p, (_, _, g)), m), v) in params.tensors_mut().into_iter().zip(grads).zip(firsts).zip(seconds) {
            let decay = if p.rows > 1 && p.cols > 1 { self.weight_decay } else { 0.0 };
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                p.data[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * p.data[i]);
            }
        }
    }
}

/// Linear warmup over the first `warmup` steps, then constant.
pub fn warmup_lr(base: f64, step: usize, warmup: usize) -> f64 {
    if warmup == 0 || step >= warmup {
        base
    } else {
        base * (step + 1) as f64 / warmup as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = ModelConfig {
            vocab_size: 270,
            max_len: 8,
            hidden: 8,
            heads: 2,
            intermediate: 8,
            proj_dim: 4,
            num_layers: 1,
            ..ModelConfig::desk()
        };
        let mut p = Parameters::init(&cfg);
        let before = p.clone();
        let mut g = p.clone();
        g.zero_();
        g.bc_b.data[0] = 3.0;
        g.proj_b.data[1] = -0.5;
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &g, 0.01);
        assert!((p.bc_b.data[0] - (before.bc_b.data[0] - 0.01)).abs() < 1e-9);
        assert!((p.proj_b.data[1] - (before.proj_b.data[1] + 0.01)).abs() < 1e-9);
        assert_eq!(p.proj_b.data[0], before.proj_b.data[0]);
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_lr(1.0, 0, 4), 0.25);
        assert_eq!(warmup_lr(1.0, 3, 4), 1.0);
        assert_eq!(warmup_lr(1.0, 10, 4), 1.0);
        assert_eq!(warmup_lr(1.0, 0, 0), 1.0);
    }
}
