/// Running count, sum and sum of squares of a term stream.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PartialStats {
    pub k: usize,
    pub sum: f64,
    pub sumsq: f64,
}

impl PartialStats {
    pub fn from_terms(terms: impl IntoIterator<Item = f64>) -> Self {
        let mut s = Self::default();
        for x in terms {
            s.push(x);
        }
        s
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.k += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    /// `k·Σx² − (Σx)²`, i.e. k² times the biased sample variance.
    #[inline]
    pub fn dispersion(&self) -> f64 {
        self.k as f64 * self.sumsq - self.sum * self.sum
    }

    /// Rounding allowance below which a stream counts as zero-variance.
    #[inline]
    pub fn dispersion_eps(&self) -> f64 {
        1e-12 * self.k as f64 * self.sumsq.max(1.0)
    }

    #[inline]
    pub fn is_degenerate(&self) -> bool {
        self.dispersion() <= self.dispersion_eps()
    }
}
