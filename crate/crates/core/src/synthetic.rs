//! Exact low-rank test tensors.

use crate::driver::init_value;
use crate::error::{Error, Result};
use crate::tensor::{reconstruct, DenseTensor, FactorSet, Matrix};

/// Largest tensor (in elements) [`generate_synthetic`] builds: 2 GiB of doubles.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 28;

// Keeps ground truth and solver initialization on different streams for equal seeds.
const TRUTH_SALT: u64 = 0x5eed_7a75_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorDistribution {
    /// Entries uniform in `[0, 1)`.
    #[default]
    Uniform,
    /// Every entry 1.
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub seed: u64,
    pub distribution: FactorDistribution,
}

impl SyntheticSpec {
    pub fn new(dims: Vec<usize>, rank: usize, seed: u64) -> Self {
        Self { dims, rank, seed, distribution: FactorDistribution::Uniform }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DenseTensor, FactorSet)> {
    generate_synthetic_with_budget(spec, DEFAULT_MEMORY_BUDGET)
}

/// `X = [[H_1, .., H_N]]` with nonnegative factors and unit weights, no noise.
pub fn generate_synthetic_with_budget(spec: &SyntheticSpec, budget: usize) -> Result<(DenseTensor, FactorSet)> {
    if spec.rank == 0 {
        return Err(Error::InvalidConfig("synthetic rank must be at least 1".into()));
    }
    if spec.dims.len() < 2 || spec.dims.contains(&0) {
        return Err(Error::InvalidShape(format!("synthetic dims {:?}", spec.dims)));
    }
    let elems = spec.dims.iter().fold(1u128, |acc, &d| acc.saturating_mul(d as u128));
    if elems > budget as u128 {
        return Err(Error::MemoryBudget { elems, budget });
    }
    let factors = spec
        .dims
        .iter()
        .enumerate()
        .map(|(n, &d)| match spec.distribution {
            FactorDistribution::Uniform => {
                Matrix::from_fn(d, spec.rank, |i, c| init_value(spec.seed ^ TRUTH_SALT, n, i, c))
            }
            FactorDistribution::Ones => Matrix::from_element(d, spec.rank, 1.0),
        })
        .collect();
    let truth = FactorSet::with_unit_weights(factors)?;
    Ok((reconstruct(&truth)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_give_ones() {
        let spec = SyntheticSpec {
            distribution: FactorDistribution::Ones,
            ..SyntheticSpec::new(vec![2, 3, 2], 1, 0)
        };
        let (x, _) = generate_synthetic(&spec).unwrap();
        assert!(x.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn deterministic_and_nonnegative() {
        let spec = SyntheticSpec::new(vec![4, 5, 3], 2, 11);
        let (a, ta) = generate_synthetic(&spec).unwrap();
        let (b, tb) = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.data().iter().all(|&v| v >= 0.0));
        let (c, _) = generate_synthetic(&SyntheticSpec::new(vec![4, 5, 3], 2, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn budget_is_enforced() {
        let spec = SyntheticSpec::new(vec![100, 100, 100], 1, 0);
        assert!(matches!(
            generate_synthetic_with_budget(&spec, 999_999),
            Err(Error::MemoryBudget { elems: 1_000_000, .. })
        ));
        let huge = SyntheticSpec::new(vec![1 << 20, 1 << 20, 1 << 20], 1, 0);
        assert!(matches!(generate_synthetic(&huge), Err(Error::MemoryBudget { .. })));
    }
}
