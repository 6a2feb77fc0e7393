use super::config::{ExperimentConfig, GroupHyper, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Aggregator,
    Heads,
}

#[derive(Debug, Clone)]
struct SlotState {
    group: Group,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Momentum SGD or Adam with decoupled weight decay, over named parameter slots
/// split into two hyperparameter groups.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    aggregator: GroupHyper,
    heads: GroupHyper,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    slots: Vec<SlotState>,
}

impl Optimizer {
    pub fn new(cfg: &ExperimentConfig, slots: &[(usize, Group)]) -> Self {
        Self {
            kind: cfg.optimizer,
            aggregator: cfg.aggregator,
            heads: cfg.heads,
            momentum: cfg.momentum,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            slots: slots
                .iter()
                .map(|&(n, group)| SlotState {
                    group,
                    m: vec![0.0; n],
                    v: if cfg.optimizer == OptimizerKind::Adam {
                        vec![0.0; n]
                    } else {
                        Vec::new()
                    },
                })
                .collect(),
        }
    }

    /// Advances the step counter; call once before the slot updates of a step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, slot: usize, values: &mut [f64], grad: &[f64]) {
        let s = &mut self.slots[slot];
        let hp = match s.group {
            Group::Aggregator => self.aggregator,
            Group::Heads => self.heads,
        };
        debug_assert_eq!(values.len(), grad.len());
        let decay = hp.lr * hp.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for ((w, &g), m) in values.iter_mut().zip(grad).zip(s.m.iter_mut()) {
                    *m = self.momentum * *m + g;
                    *w -= hp.lr * *m + decay * *w;
                }
            }
            OptimizerKind::Adam => {
                let t = self.t.max(1) as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (((w, &g), m), v) in values.iter_mut().zip(grad).zip(s.m.iter_mut()).zip(s.v.iter_mut()) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let step = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                    *w -= hp.lr * step + decay * *w;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: OptimizerKind) -> ExperimentConfig {
        ExperimentConfig {
            optimizer: kind,
            momentum: 0.5,
            aggregator: GroupHyper {
                lr: 0.1,
                weight_decay: 0.0,
            },
            heads: GroupHyper {
                lr: 0.0,
                weight_decay: 0.5,
            },
            ..Default::default()
        }
    }

    #[test]
    fn sgd_momentum_by_hand() {
        let mut opt = Optimizer::new(&cfg(OptimizerKind::Sgd), &[(1, Group::Aggregator)]);
        let mut w = [1.0];
        opt.begin_step();
        opt.update(0, &mut w, &[2.0]);
        assert!((w[0] - 0.8).abs() < 1e-15);
        opt.begin_step();
        opt.update(0, &mut w, &[2.0]);
        // m = 0.5·2 + 2 = 3
        assert!((w[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut opt = Optimizer::new(&cfg(OptimizerKind::Adam), &[(2, Group::Aggregator)]);
        let mut w = [0.0, 0.0];
        opt.begin_step();
        opt.update(0, &mut w, &[3.0, -1e-3]);
        assert!((w[0] + 0.1).abs() < 1e-6);
        assert!((w[1] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn zero_lr_freezes_group_despite_decay() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(&cfg(kind), &[(1, Group::Heads)]);
            let mut w = [0.7];
            for _ in 0..3 {
                opt.begin_step();
                opt.update(0, &mut w, &[5.0]);
            }
            assert_eq!(w[0], 0.7);
        }
    }
}
