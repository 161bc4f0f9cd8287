//! Robbins–Monro tuning of proposal scales toward a target acceptance rate.

use serde::{Deserialize, Serialize};

/// A proposal scale adapted on the log scale. With `bolder_when_larger`
/// false (a concentration such as the VMF κ) the update direction flips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    log_scale: f64,
    bounds: (f64, f64),
    bolder_when_larger: bool,
    window_accepted: usize,
    window_proposed: usize,
    windows: usize,
    total_accepted: usize,
    total_proposed: usize,
}

impl Adapter {
    pub fn new(scale: f64, lo: f64, hi: f64, bolder_when_larger: bool) -> Self {
        Adapter {
            log_scale: scale.ln(),
            bounds: (lo.ln(), hi.ln()),
            bolder_when_larger,
            window_accepted: 0,
            window_proposed: 0,
            windows: 0,
            total_accepted: 0,
            total_proposed: 0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn record(&mut self, accepted: bool) {
        self.window_proposed += 1;
        self.total_proposed += 1;
        if accepted {
            self.window_accepted += 1;
            self.total_accepted += 1;
        }
    }

    /// Closes the current window; moves the scale when `adapt` is set.
    pub fn end_window(&mut self, target: f64, adapt: bool) {
        if self.window_proposed > 0 && adapt {
            self.windows += 1;
            let rate = self.window_accepted as f64 / self.window_proposed as f64;
            let gain = 2.0 / (self.windows as f64).sqrt();
            let dir = if self.bolder_when_larger { 1.0 } else { -1.0 };
            self.log_scale = (self.log_scale + dir * gain * (rate - target)).clamp(self.bounds.0, self.bounds.1);
        }
        self.window_accepted = 0;
        self.window_proposed = 0;
    }

    /// Restarts the gain sequence and the acceptance counters.
    pub fn restart(&mut self) {
        self.windows = 0;
        self.reset_counts();
    }

    pub fn reset_counts(&mut self) {
        self.window_accepted = 0;
        self.window_proposed = 0;
        self.total_accepted = 0;
        self.total_proposed = 0;
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.total_proposed > 0).then(|| self.total_accepted as f64 / self.total_proposed as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_moves_toward_target() {
        let mut a = Adapter::new(1.0, 1e-3, 1e3, true);
        for _ in 0..10 {
            a.record(true);
        }
        a.end_window(0.3, true);
        assert!(a.scale() > 1.0);
        let mut k = Adapter::new(1.0, 1e-3, 1e3, false);
        k.record(true);
        k.end_window(0.3, true);
        assert!(k.scale() < 1.0);
        let before = k.scale();
        k.record(false);
        k.end_window(0.3, false);
        assert_eq!(k.scale(), before);
        assert_eq!(k.acceptance_rate(), Some(0.5));
    }

    #[test]
    fn bounds_hold() {
        let mut a = Adapter::new(1.0, 0.5, 2.0, true);
        for _ in 0..100 {
            a.record(true);
            a.end_window(0.3, true);
        }
        assert!((a.scale() - 2.0).abs() < 1e-12);
    }
}
