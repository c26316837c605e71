use crate::error::{ensure_domain, Result};

/// Token usage histogram over a codebook of `counts.len()` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodebookStats {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl CodebookStats {
    pub fn new(codebook_size: usize) -> Self {
        Self {
            counts: vec![0; codebook_size],
            total: 0,
        }
    }

    pub fn update(&mut self, indices: &[u32]) -> Result<()> {
        let k = self.counts.len();
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= k) {
            ensure_domain!(false, "index {bad} outside codebook of {k}");
        }
        for &i in indices {
            self.counts[i as usize] += 1;
        }
        self.total += indices.len() as u64;
        Ok(())
    }

    /// Fraction of entries used at least once.
    pub fn utilization(&self) -> f64 {
        let used = self.counts.iter().filter(|&&c| c > 0).count();
        used as f64 / self.counts.len() as f64
    }

    pub fn merge(&mut self, other: &CodebookStats) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }
}

pub fn update_stats(mut stats: CodebookStats, indices: &[u32]) -> Result<CodebookStats> {
    stats.update(indices)?;
    Ok(stats)
}

pub fn utilization(stats: &CodebookStats) -> f64 {
    stats.utilization()
}
