/// Per-sample one-pole coefficient for time constant `tau_ms`: `exp(-1 / (tau * sr / 1000))`.
/// A zero time constant gives 0, i.e. an immediate jump.
pub fn smoothing_coefficient(tau_ms: f64, sample_rate: f64) -> f64 {
    let samples = tau_ms * sample_rate / 1000.0;
    if samples <= 0.0 {
        0.0
    } else {
        (-1.0 / samples).exp()
    }
}

/// One-pole smoothed parameter: `current <- target + alpha * (current - target)` per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedParam {
    current: f64,
    target: f64,
    alpha: f64,
    tau_ms: f64,
}

impl SmoothedParam {
    pub fn new(initial: f64, tau_ms: f64, sample_rate: f64) -> Self {
        Self {
            current: initial,
            target: initial,
            alpha: smoothing_coefficient(tau_ms, sample_rate),
            tau_ms,
        }
    }

    pub fn set_time_constant(&mut self, tau_ms: f64, sample_rate: f64) {
        self.tau_ms = tau_ms;
        self.alpha = smoothing_coefficient(tau_ms, sample_rate);
    }

    pub fn set_target(&mut self, target: f64) {
        self.target = target;
        if self.alpha == 0.0 {
            self.current = target;
        }
    }

    /// Jump straight to `value`.
    pub fn snap(&mut self, value: f64) {
        self.current = value;
        self.target = value;
    }

    #[inline]
    pub fn next(&mut self) -> f64 {
        if self.current != self.target {
            let gap = self.current - self.target;
            let next = self.target + self.alpha * gap;
            // settle exactly once the step falls below f64 resolution of the target
            self.current = if (next - self.target).abs() < 1e-12 * self.target.abs().max(1.0) {
                self.target
            } else {
                next
            };
        }
        self.current
    }

    /// Advance `n` samples and return the final value.
    pub fn advance(&mut self, n: usize) -> f64 {
        for _ in 0..n {
            if self.is_settled() {
                break;
            }
            self.next();
        }
        self.current
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn tau_ms(&self) -> f64 {
        self.tau_ms
    }

    pub fn is_settled(&self) -> bool {
        self.current == self.target
    }
}
