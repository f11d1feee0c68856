//! Exhaustive enumeration of environment sequences.
//!
//! Sequences are visited in lexicographic order and never materialized as a
//! whole; the work is cut into a fixed number of prefix chunks so that the
//! reduction order (and therefore every rounding) is independent of the
//! number of workers.

use rayon::prelude::*;

use crate::environment::EnvironmentLaw;
use crate::error::{Error, Result};

/// Minimum number of prefix chunks handed to the worker pool.
const MIN_CHUNKS: usize = 256;

/// One visited sequence.
pub struct SeqView<'a> {
    /// Atom indices `Q_1..Q_n`.
    pub atoms: &'a [usize],
    /// `S_0..S_n`.
    pub sums: &'a [f64],
    /// Probability of the sequence under the enumerated law.
    pub weight: f64,
}

pub fn enumeration_size(atoms: usize, n: usize) -> f64 {
    (atoms as f64).powi(n as i32)
}

pub fn check_budget(atoms: usize, n: usize, budget: f64) -> Result<f64> {
    let size = enumeration_size(atoms, n);
    if size > budget {
        Err(Error::SizeLimit { size, budget })
    } else {
        Ok(size)
    }
}

/// Fold `step` over all `atoms^n` sequences of `env` with walk start `start`.
pub fn fold_sequences<A, I, S, M>(
    env: &EnvironmentLaw,
    n: usize,
    start: f64,
    budget: f64,
    init: I,
    step: S,
    mut merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, &SeqView) + Sync,
    M: FnMut(&mut A, A),
{
    let k = env.len();
    check_budget(k, n, budget)?;
    let weights = env.weights();
    let xs = env.log_means();

    let mut depth = 0;
    let mut chunks = 1usize;
    while depth < n && chunks < MIN_CHUNKS {
        depth += 1;
        chunks *= k;
    }

    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let mut atoms = vec![0usize; n];
            let mut rem = c;
            for pos in (0..depth).rev() {
                atoms[pos] = rem % k;
                rem /= k;
            }
            let mut wp = vec![1.0; n + 1];
            let mut sums = vec![start; n + 1];
            let refresh = |from: usize, atoms: &[usize], wp: &mut [f64], sums: &mut [f64]| {
                for i in from..n {
                    wp[i + 1] = wp[i] * weights[atoms[i]];
                    sums[i + 1] = sums[i] + xs[atoms[i]];
                }
            };
            refresh(0, &atoms, &mut wp, &mut sums);
            loop {
                step(
                    &mut acc,
                    &SeqView {
                        atoms: &atoms,
                        sums: &sums,
                        weight: wp[n],
                    },
                );
                // odometer over the free suffix
                let mut pos = n;
                loop {
                    if pos == depth {
                        return acc;
                    }
                    pos -= 1;
                    atoms[pos] += 1;
                    if atoms[pos] < k {
                        break;
                    }
                    atoms[pos] = 0;
                }
                refresh(pos, &atoms, &mut wp, &mut sums);
            }
        })
        .collect();

    let mut parts = parts.into_iter();
    let mut acc = parts.next().expect("at least one chunk");
    for p in parts {
        merge(&mut acc, p);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::CompensatedSum;

    #[test]
    fn visits_every_sequence_once_in_order() {
        let env = EnvironmentLaw::geometric(&[0.2, 0.3, 0.5], &[-1.0, 0.5, 2.0]).unwrap();
        let seen = fold_sequences(
            &env,
            6,
            0.0,
            1e6,
            Vec::new,
            |acc: &mut Vec<Vec<usize>>, v| acc.push(v.atoms.to_vec()),
            |a, b| a.extend(b),
        )
        .unwrap();
        assert_eq!(seen.len(), 729);
        let mut sorted = seen.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, seen);
    }

    #[test]
    fn weights_and_sums_are_consistent() {
        let env = EnvironmentLaw::geometric(&[0.7, 0.3], &[-1.0, 1.0]).unwrap();
        let total = fold_sequences(
            &env,
            10,
            2.0,
            1e6,
            CompensatedSum::new,
            |acc, v| {
                let expect: f64 = v.atoms.iter().map(|&a| [0.7, 0.3][a]).product();
                assert!((v.weight - expect).abs() < 1e-15);
                let s: f64 = 2.0 + v.atoms.iter().map(|&a| [-1.0, 1.0][a]).sum::<f64>();
                assert_eq!(v.sums[10], s);
                acc.add(v.weight);
            },
            |a, b| a.add_sum(&b),
        )
        .unwrap();
        assert!((total.value() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_length_and_budget() {
        let env = EnvironmentLaw::geometric(&[0.7, 0.3], &[-1.0, 1.0]).unwrap();
        let count = fold_sequences(&env, 0, 0.0, 1.0, || 0u32, |a, v| {
            assert_eq!(v.weight, 1.0);
            *a += 1
        }, |a, b| *a += b)
        .unwrap();
        assert_eq!(count, 1);
        let err = fold_sequences(&env, 30, 0.0, 1e7, || (), |_, _| {}, |_, _| {});
        assert!(matches!(err, Err(Error::SizeLimit { .. })));
    }
}
