use serde_json::json;

/// Learning-rate schedules used for pre-training and fine-tuning.
#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    /// Linear warmup to `peak_lr`, then linear decay to zero at `total_steps`.
    WarmupLinearDecay {
        warmup_steps: u64,
        peak_lr: f64,
        total_steps: u64,
    },
    /// Linear warmup to `peak_lr`; linear decay to `peak_lr / 2` at the end of
    /// epoch `decay_epochs`; then halved at the start of every later epoch.
    /// Epochs are 1-based. Steps past `total_epochs` keep the last value.
    WarmupHoldHalve {
        warmup_steps: u64,
        peak_lr: f64,
        steps_per_epoch: u64,
        decay_epochs: u64,
        total_epochs: u64,
    },
}

impl LrSchedule {
    pub fn peak_lr(&self) -> f64 {
        match *self {
            LrSchedule::WarmupLinearDecay { peak_lr, .. }
            | LrSchedule::WarmupHoldHalve { peak_lr, .. } => peak_lr,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::WarmupLinearDecay {
                warmup_steps,
                peak_lr,
                total_steps,
            } => {
                let step = step.min(total_steps);
                if step <= warmup_steps {
                    warmup(peak_lr, step, warmup_steps)
                } else {
                    let span = (total_steps - warmup_steps) as f64;
                    (peak_lr * (total_steps - step) as f64 / span).max(0.0)
                }
            }
            LrSchedule::WarmupHoldHalve {
                warmup_steps,
                peak_lr,
                steps_per_epoch,
                decay_epochs,
                total_epochs,
            } => {
                let spe = steps_per_epoch.max(1);
                let step = step.min(total_epochs.max(1) * spe - 1);
                let decay_end = decay_epochs * spe;
                if step <= warmup_steps {
                    warmup(peak_lr, step, warmup_steps)
                } else if step <= decay_end {
                    let frac = (step - warmup_steps) as f64 / (decay_end - warmup_steps) as f64;
                    peak_lr * (1.0 - 0.5 * frac)
                } else {
                    let epoch = step / spe + 1;
                    0.5 * peak_lr * 0.5f64.powi((epoch - decay_epochs - 1) as i32)
                }
            }
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match *self {
            LrSchedule::WarmupLinearDecay {
                warmup_steps,
                peak_lr,
                total_steps,
            } => {
                json!({"kind": "warmup-linear-decay", "warmup_steps": warmup_steps, "peak_lr": peak_lr, "total_steps": total_steps})
            }
            LrSchedule::WarmupHoldHalve {
                warmup_steps,
                peak_lr,
                steps_per_epoch,
                decay_epochs,
                total_epochs,
            } => {
                json!({"kind": "warmup-hold-halve", "warmup_steps": warmup_steps, "peak_lr": peak_lr,
                "steps_per_epoch": steps_per_epoch, "decay_epochs": decay_epochs, "total_epochs": total_epochs})
            }
        }
    }
}

fn warmup(peak: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        peak
    } else {
        peak * step as f64 / warmup_steps as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fine_tune() -> LrSchedule {
        LrSchedule::WarmupHoldHalve {
            warmup_steps: 8000,
            peak_lr: 0.0007,
            steps_per_epoch: 10_000,
            decay_epochs: 15,
            total_epochs: 30,
        }
    }

    #[test]
    fn warmup_midpoint_and_peak() {
        let s = LrSchedule::WarmupLinearDecay {
            warmup_steps: 8000,
            peak_lr: 0.0005,
            total_steps: 400_000,
        };
        assert!((s.lr_at(4000) - 0.00025).abs() < 1e-15);
        assert_eq!(s.lr_at(8000), 0.0005);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(400_000), 0.0);
        assert_eq!(s.lr_at(900_000), 0.0);
        assert!((s.lr_at(204_000) - 0.00025).abs() < 1e-12);
    }

    #[test]
    fn hold_halve_boundaries() {
        let s = fine_tune();
        let peak = 0.0007;
        assert_eq!(s.lr_at(8000), peak);
        // end of epoch 15 meets the first halving plateau continuously
        assert!((s.lr_at(150_000) - peak / 2.0).abs() < 1e-15);
        assert!((s.lr_at(150_001) - peak / 2.0).abs() < 1e-15);
        // start of epoch 17
        assert!((s.lr_at(160_000) - peak / 2.0 * 0.5).abs() < 1e-15);
        assert!((s.lr_at(170_000) - peak / 2.0 * 0.25).abs() < 1e-15);
        // past the last epoch: clamps
        assert_eq!(s.lr_at(10_000_000), s.lr_at(299_999));
    }

    #[test]
    fn never_negative_and_continuous_in_decay() {
        let s = fine_tune();
        let mut prev = s.lr_at(8000);
        for step in (8001..150_000).step_by(97) {
            let lr = s.lr_at(step);
            assert!(lr >= 0.0 && lr <= prev + 1e-18);
            assert!((prev - lr).abs() < 5e-7);
            prev = lr;
        }
    }
}
