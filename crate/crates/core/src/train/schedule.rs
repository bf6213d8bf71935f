use super::TrainConfig;

/// Step decay: `lr · decay^⌊epoch / every⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps = epoch / cfg.lr_decay_every.max(1);
    let mut factor = 1.0;
    for _ in 0..steps {
        factor *= cfg.lr_decay;
    }
    cfg.lr * factor
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decays_every_forty_epochs() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-4);
        assert_eq!(lr_at(39, &cfg), 1e-4);
        assert_eq!(lr_at(40, &cfg), 7e-5);
        assert_eq!(lr_at(80, &cfg), 4.9e-5);
    }

    #[test]
    fn non_increasing_and_positive() {
        let cfg = TrainConfig::default();
        let mut prev = f64::INFINITY;
        for e in 0..2000 {
            let lr = lr_at(e, &cfg);
            assert!(lr > 0.0 && lr <= prev);
            prev = lr;
        }
    }
}
