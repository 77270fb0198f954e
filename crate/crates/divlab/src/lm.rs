//! Discrete probability model of design diversity: programs drawn from
//! development methodologies fail on a random input, and the joint failure
//! probability of two independently drawn programs decomposes into the
//! product of marginals plus the covariance of the per-input difficulty
//! functions. Exact enumeration plus a Monte Carlo companion.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Finite world: an input distribution and per-program failure indicators.
/// `failure[p][x]` says whether program p fails on input x.
#[derive(Debug, Clone, PartialEq)]
pub struct LmWorld {
    pub input_probs: Vec<f64>,
    pub failure: Vec<Vec<bool>>,
}

impl LmWorld {
    pub fn validate(&self) -> Result<()> {
        check_distribution("input distribution", &self.input_probs)?;
        if self.failure.is_empty() {
            return Err(Error::InvalidConfig("world needs at least one program".into()));
        }
        let n = self.input_probs.len();
        for (p, row) in self.failure.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "program {p} has {} failure entries for {n} inputs",
                    row.len()
                )));
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.input_probs.len()
    }

    pub fn programs(&self) -> usize {
        self.failure.len()
    }

    /// Checks that a methodology distribution matches this world.
    pub fn check_methodology(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.programs() {
            return Err(Error::InvalidConfig(format!(
                "methodology covers {} programs, world has {}",
                s.len(),
                self.programs()
            )));
        }
        check_distribution("methodology", s)
    }
}

fn check_distribution(what: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidConfig(format!("{what} is empty")));
    }
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidConfig(format!("{what} has probabilities outside [0,1]")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidConfig(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Difficulty function of a methodology: the probability that a program
/// drawn from it fails on each input.
pub fn difficulty(world: &LmWorld, methodology: &[f64]) -> Result<Vec<f64>> {
    world.validate()?;
    world.check_methodology(methodology)?;
    let n = world.inputs();
    let mut theta = vec![0.0; n];
    for (p, &sp) in methodology.iter().enumerate() {
        for x in 0..n {
            if world.failure[p][x] {
                theta[x] += sp;
            }
        }
    }
    Ok(theta)
}

/// Exact joint failure probability of two independently developed programs
/// on one random input, with its covariance decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointFailure {
    pub p_both: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub covariance: f64,
}

pub fn joint_failure_exact(world: &LmWorld, meth_a: &[f64], meth_b: &[f64]) -> Result<JointFailure> {
    let theta_a = difficulty(world, meth_a)?;
    let theta_b = difficulty(world, meth_b)?;
    let q = &world.input_probs;
    let mean_a: f64 = q.iter().zip(&theta_a).map(|(p, t)| p * t).sum();
    let mean_b: f64 = q.iter().zip(&theta_b).map(|(p, t)| p * t).sum();
    let p_both: f64 = (0..world.inputs()).map(|x| q[x] * theta_a[x] * theta_b[x]).sum();
    let covariance: f64 = (0..world.inputs())
        .map(|x| q[x] * (theta_a[x] - mean_a) * (theta_b[x] - mean_b))
        .sum();
    Ok(JointFailure { p_both, mean_a, mean_b, covariance })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Monte Carlo estimate of the joint failure probability: each trial draws
/// one program per methodology and one input, and scores whether both fail.
pub fn joint_failure_mc(
    world: &LmWorld,
    meth_a: &[f64],
    meth_b: &[f64],
    trials: u64,
    seed: u64,
) -> Result<McEstimate> {
    world.validate()?;
    world.check_methodology(meth_a)?;
    world.check_methodology(meth_b)?;
    if trials == 0 {
        return Err(Error::InvalidConfig("monte carlo needs at least 1 trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..trials {
        let pa = sample_index(meth_a, &mut rng);
        let pb = sample_index(meth_b, &mut rng);
        let x = sample_index(&world.input_probs, &mut rng);
        if world.failure[pa][x] && world.failure[pb][x] {
            hits += 1;
        }
    }
    let mean = hits as f64 / trials as f64;
    Ok(McEstimate {
        mean,
        std_error: (mean * (1.0 - mean) / trials as f64).sqrt(),
        trials,
    })
}

/// Two-input, two-program reference world: program 0 fails only on input 0,
/// program 1 only on input 1, uniform input distribution.
pub fn reference_world() -> LmWorld {
    LmWorld {
        input_probs: vec![0.5, 0.5],
        failure: vec![vec![true, false], vec![false, true]],
    }
}

/// Methodology pair with anti-correlated difficulty on the reference world:
/// joint failure probability drops below the product of marginals.
pub fn reference_methodologies() -> (Vec<f64>, Vec<f64>) {
    (vec![0.9, 0.1], vec![0.1, 0.9])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difficulty_hand_cases() {
        let w = reference_world();
        // point mass reproduces that program's failure indicator
        assert_eq!(difficulty(&w, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        // weighted sum
        let theta = difficulty(&w, &[0.9, 0.1]).unwrap();
        assert!((theta[0] - 0.9).abs() < 1e-15 && (theta[1] - 0.1).abs() < 1e-15);
        // all programs fail everywhere
        let sat = LmWorld {
            input_probs: vec![0.25, 0.75],
            failure: vec![vec![true, true], vec![true, true]],
        };
        assert_eq!(difficulty(&sat, &[0.4, 0.6]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn mirrored_methodologies_give_negative_covariance() {
        let w = reference_world();
        let (sa, sb) = reference_methodologies();
        let jf = joint_failure_exact(&w, &sa, &sb).unwrap();
        assert!((jf.mean_a - 0.5).abs() < 1e-15);
        assert!((jf.mean_b - 0.5).abs() < 1e-15);
        assert!((jf.p_both - 0.09).abs() < 1e-15);
        assert!(jf.covariance < 0.0);
        assert!(jf.p_both < jf.mean_a * jf.mean_b);
    }

    #[test]
    fn shared_methodology_fails_dependently() {
        let w = reference_world();
        let sa = vec![0.9, 0.1];
        let jf = joint_failure_exact(&w, &sa, &sa).unwrap();
        assert!((jf.p_both - 0.41).abs() < 1e-15);
        assert!(jf.p_both >= jf.mean_a * jf.mean_b);
    }

    #[test]
    fn constant_difficulty_has_zero_covariance() {
        // both programs fail on exactly input 0 and input 1 symmetric: make
        // theta constant by having each program fail on one input and
        // weights 0.5/0.5
        let w = reference_world();
        let s = vec![0.5, 0.5];
        let jf = joint_failure_exact(&w, &s, &s).unwrap();
        assert!(jf.covariance.abs() < 1e-15);
        assert!((jf.p_both - jf.mean_a * jf.mean_b).abs() < 1e-15);
    }

    fn random_world(rng: &mut ChaCha8Rng) -> (LmWorld, Vec<f64>, Vec<f64>) {
        let n = rng.random_range(2..6);
        let m = rng.random_range(2..5);
        let dist = |rng: &mut ChaCha8Rng, k: usize| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect::<Vec<_>>()
        };
        let world = LmWorld {
            input_probs: dist(rng, n),
            failure: (0..m)
                .map(|_| (0..n).map(|_| rng.random_range(0..2) == 1).collect())
                .collect(),
        };
        let sa = dist(rng, m);
        let sb = dist(rng, m);
        (world, sa, sb)
    }

    #[test]
    fn decomposition_identity_on_random_worlds() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let (w, sa, sb) = random_world(&mut rng);
            let jf = joint_failure_exact(&w, &sa, &sb).unwrap();
            assert!(
                (jf.p_both - (jf.mean_a * jf.mean_b + jf.covariance)).abs() < 1e-12,
                "{jf:?}"
            );
            // same methodology: covariance is a variance
            let same = joint_failure_exact(&w, &sa, &sa).unwrap();
            assert!(same.covariance >= -1e-15);
            assert!(same.p_both + 1e-15 >= same.mean_a * same.mean_a);
        }
    }

    #[test]
    fn mc_matches_exact_within_four_standard_errors() {
        let w = reference_world();
        let (sa, sb) = reference_methodologies();
        let exact = joint_failure_exact(&w, &sa, &sb).unwrap();
        let est = joint_failure_mc(&w, &sa, &sb, 200_000, 99).unwrap();
        assert!(
            (est.mean - exact.p_both).abs() <= 4.0 * est.std_error,
            "estimate {} vs exact {} (se {})",
            est.mean,
            exact.p_both,
            est.std_error
        );
        // determinism
        let again = joint_failure_mc(&w, &sa, &sb, 200_000, 99).unwrap();
        assert_eq!(est, again);
    }

    #[test]
    fn degenerate_world_is_exact_under_mc() {
        let w = LmWorld { input_probs: vec![1.0], failure: vec![vec![true]] };
        let est = joint_failure_mc(&w, &[1.0], &[1.0], 100, 1).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn invalid_distributions_rejected() {
        let w = LmWorld { input_probs: vec![0.5, 0.4], failure: vec![vec![true, false]] };
        assert!(w.validate().is_err());
        let w = reference_world();
        assert!(difficulty(&w, &[0.7, 0.2]).is_err());
        assert!(difficulty(&w, &[0.5, 0.5, 0.0]).is_err());
    }
}
