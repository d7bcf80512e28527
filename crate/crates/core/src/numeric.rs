//! Small numeric helpers shared across modules.

/// Compensated (Kahan–Babuška/Neumaier) summation.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Running compensated sum, used where values arrive one at a time.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanAccumulator {
    sum: f64,
    comp: f64,
}

impl KahanAccumulator {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        let values = std::iter::once(1.0).chain(std::iter::repeat(1e-16).take(10_000));
        let s = kahan_sum(values);
        assert!((s - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn accumulator_matches_batch() {
        let xs: Vec<f64> = (0..384).map(|i| std::f64::consts::PI / 384.0 + i as f64 * 1e-17).collect();
        let mut acc = KahanAccumulator::default();
        xs.iter().for_each(|&x| acc.add(x));
        assert_eq!(acc.value(), kahan_sum(xs.iter().copied()));
    }
}
