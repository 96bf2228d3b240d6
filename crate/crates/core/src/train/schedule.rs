use crate::{Error, Result};

/// Cosine-annealed learning rate for `epoch` in `0..max_epochs`.
pub fn lr_schedule(epoch: usize, base_lr: f64, max_epochs: usize) -> Result<f64> {
    if epoch >= max_epochs {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside 0..{max_epochs}")));
    }
    let t = epoch as f64 / max_epochs as f64;
    Ok(0.5 * base_lr * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(lr_schedule(0, 1e-3, 300).unwrap(), 1e-3);
        assert!((lr_schedule(150, 1e-3, 300).unwrap() - 5e-4).abs() < 1e-15);
        let last = lr_schedule(299, 1e-3, 300).unwrap();
        assert!(last > 0.0 && last < 1e-7);
        assert!(lr_schedule(300, 1e-3, 300).is_err());
    }

    #[test]
    fn non_increasing() {
        let v: Vec<f64> = (0..300).map(|e| lr_schedule(e, 1e-3, 300).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] <= w[0]));
    }
}
