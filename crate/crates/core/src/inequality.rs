//! CHSH and chained Bell expressions in correlator form, their local bounds
//! by enumeration of deterministic strategies, numerically optimized quantum
//! values, and the local-weight mixture analysis.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::sync::OnceLock;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{born_behavior, make_singlet, two_party_correlator, Behavior, StateVector};

pub const MAX_ENUMERATED_N: usize = 8;
pub const MAX_OPTIMIZED_N: usize = 12;
pub const SEARCH_STARTS: usize = 32;
pub const SEARCH_SEED: u64 = 0x5eed_c4a1;
const SWEEP_IMPROVEMENT_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100_000;

/// One correlator E(alice, bob) entering a Bell expression with `sign`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainTerm {
    pub alice: usize,
    pub bob: usize,
    pub sign: f64,
}

/// E(a1,b1) + E(b1,a2) + E(a2,b2) + … + E(aN,bN) − E(bN,a1), with settings
/// numbered from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n: usize,
    pub terms: Vec<ChainTerm>,
}

impl ChainSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("chain needs N >= 2, got {n}")));
        }
        let mut terms = Vec::with_capacity(2 * n);
        for k in 0..n {
            terms.push(ChainTerm {
                alice: k,
                bob: k,
                sign: 1.0,
            });
            if k + 1 < n {
                terms.push(ChainTerm {
                    alice: k + 1,
                    bob: k,
                    sign: 1.0,
                });
            }
        }
        terms.push(ChainTerm {
            alice: 0,
            bob: n - 1,
            sign: -1.0,
        });
        let spec = ChainSpec { n, terms };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.terms.len() != 2 * self.n {
            return bad(format!("{} terms for N = {}", self.terms.len(), self.n));
        }
        if self.terms.iter().filter(|t| t.sign < 0.0).count() != 1 {
            return bad("exactly one term must be negative".into());
        }
        if self.terms.iter().any(|t| t.sign.abs() != 1.0) {
            return bad("signs must be ±1".into());
        }
        for s in 0..self.n {
            let a = self.terms.iter().filter(|t| t.alice == s).count();
            let b = self.terms.iter().filter(|t| t.bob == s).count();
            if a != 2 || b != 2 {
                return bad(format!("setting {s} must appear in exactly two terms per party"));
            }
        }
        Ok(())
    }

    /// Angles that walk the chain a1, b1, a2, … in equal steps of π/(2N), with
    /// Bob's angles turned by π so that every singlet term is positive.
    pub fn equally_spaced_angles(&self) -> (Vec<f64>, Vec<f64>) {
        let step = PI / (2 * self.n) as f64;
        let alice = (0..self.n).map(|k| (2 * k) as f64 * step).collect();
        let bob = (0..self.n).map(|k| (2 * k + 1) as f64 * step + PI).collect();
        (alice, bob)
    }
}

fn require_bipartite(b: &Behavior, needed: usize) -> Result<()> {
    if b.parties() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "expected a bipartite behavior, got {} parties",
            b.parties()
        )));
    }
    if b.settings_per_party().iter().any(|&m| m < needed) {
        return Err(Error::IndexOutOfRange(format!(
            "need {needed} settings per party, have {:?}",
            b.settings_per_party()
        )));
    }
    Ok(())
}

/// S = E(a,b) + E(a,b′) + E(a′,b) − E(a′,b′).
pub fn chsh_value(b: &Behavior, a: usize, a_p: usize, bb: usize, bb_p: usize) -> Result<f64> {
    require_bipartite(b, 1)?;
    Ok(b.correlator(&[a, bb])? + b.correlator(&[a, bb_p])? + b.correlator(&[a_p, bb])? - b.correlator(&[a_p, bb_p])?)
}

pub fn chain_value(b: &Behavior, spec: &ChainSpec) -> Result<f64> {
    require_bipartite(b, spec.n)?;
    spec.terms
        .iter()
        .map(|t| Ok(t.sign * b.correlator(&[t.alice, t.bob])?))
        .sum()
}

/// Maximum of the chain expression over deterministic local strategies.
pub fn local_bound(spec: &ChainSpec) -> Result<f64> {
    if spec.n > MAX_ENUMERATED_N {
        return Err(Error::TooLarge(format!(
            "N = {} exceeds the enumeration limit {MAX_ENUMERATED_N}",
            spec.n
        )));
    }
    let n = spec.n;
    let value = |alice: u32, bob: u32| -> f64 {
        spec.terms
            .iter()
            .map(|t| {
                let a = if alice >> t.alice & 1 == 0 { 1.0 } else { -1.0 };
                let b = if bob >> t.bob & 1 == 0 { 1.0 } else { -1.0 };
                t.sign * a * b
            })
            .sum()
    };
    let best = (0..1u32 << n)
        .into_par_iter()
        .map(|alice| {
            (0..1u32 << n)
                .map(|bob| value(alice, bob))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOptimum {
    pub n: usize,
    pub value: f64,
    pub alice: Vec<f64>,
    pub bob: Vec<f64>,
}

/// Maximize Σ sign·E(θa, θb) over all angles for a two-qubit `state`.
///
/// Each angle enters the objective as c0 + A cos θ + B sin θ, so a coordinate
/// step evaluates the terms touching that angle at θ = 0, π/2, π and jumps to
/// the exact maximizer. Sweeps repeat until one improves the value by less
/// than 1e-10. Starts are drawn from a fixed seed and run in parallel; the
/// best start wins, ties going to the lower start index.
pub fn optimize_correlator_sum(
    state: &StateVector,
    terms: &[ChainTerm],
    alice_settings: usize,
    bob_settings: usize,
    starts: usize,
    seed: u64,
) -> (f64, Vec<f64>, Vec<f64>) {
    assert_eq!(state.qubits(), 2);
    let objective = |a: &[f64], b: &[f64]| -> f64 {
        terms
            .iter()
            .map(|t| t.sign * two_party_correlator(state, a[t.alice], b[t.bob]))
            .sum()
    };
    let run = |start: usize| -> (f64, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(start as u64);
        let mut a: Vec<f64> = (0..alice_settings).map(|_| rng.random::<f64>() * TAU).collect();
        let mut b: Vec<f64> = (0..bob_settings).map(|_| rng.random::<f64>() * TAU).collect();
        let mut current = objective(&a, &b);
        for _ in 0..MAX_SWEEPS {
            for k in 0..alice_settings {
                let partial = |th: f64| -> f64 {
                    terms
                        .iter()
                        .filter(|t| t.alice == k)
                        .map(|t| t.sign * two_party_correlator(state, th, b[t.bob]))
                        .sum()
                };
                a[k] = sinusoid_argmax(partial(0.0), partial(FRAC_PI_2), partial(PI));
            }
            for k in 0..bob_settings {
                let partial = |th: f64| -> f64 {
                    terms
                        .iter()
                        .filter(|t| t.bob == k)
                        .map(|t| t.sign * two_party_correlator(state, a[t.alice], th))
                        .sum()
                };
                b[k] = sinusoid_argmax(partial(0.0), partial(FRAC_PI_2), partial(PI));
            }
            let next = objective(&a, &b);
            let improvement = next - current;
            current = next;
            if improvement < SWEEP_IMPROVEMENT_TOL {
                break;
            }
        }
        (current, a, b)
    };
    let results: Vec<_> = (0..starts).into_par_iter().map(run).collect();
    results
        .into_iter()
        .reduce(|best, r| if r.0 > best.0 { r } else { best })
        .expect("at least one start")
}

// f(θ) = c0 + A cos θ + B sin θ sampled at 0, π/2, π.
fn sinusoid_argmax(f0: f64, f_half: f64, f_pi: f64) -> f64 {
    let c0 = 0.5 * (f0 + f_pi);
    let a = 0.5 * (f0 - f_pi);
    let b = f_half - c0;
    b.atan2(a).rem_euclid(TAU)
}

/// Optimal CHSH value of the singlet with angles (a, a′) for Alice and
/// (b, b′) for Bob, in that setting order.
pub fn chsh_optimum() -> ChainOptimum {
    let terms = [
        ChainTerm {
            alice: 0,
            bob: 0,
            sign: 1.0,
        },
        ChainTerm {
            alice: 0,
            bob: 1,
            sign: 1.0,
        },
        ChainTerm {
            alice: 1,
            bob: 0,
            sign: 1.0,
        },
        ChainTerm {
            alice: 1,
            bob: 1,
            sign: -1.0,
        },
    ];
    let singlet = make_singlet();
    let (_, alice, bob) = optimize_correlator_sum(&singlet, &terms, 2, 2, SEARCH_STARTS, SEARCH_SEED);
    let behavior = born_behavior(&singlet, &[alice.clone(), bob.clone()]).expect("two parties");
    let value = chsh_value(&behavior, 0, 1, 0, 1).expect("bipartite");
    ChainOptimum {
        n: 2,
        value,
        alice,
        bob,
    }
}

/// Maximal singlet chain value over all 2N angles.
pub fn quantum_chain_optimum(n: usize) -> Result<ChainOptimum> {
    if !(2..=MAX_OPTIMIZED_N).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "N must be in 2..={MAX_OPTIMIZED_N}, got {n}"
        )));
    }
    static CACHE: [OnceLock<ChainOptimum>; MAX_OPTIMIZED_N + 1] = [const { OnceLock::new() }; MAX_OPTIMIZED_N + 1];
    Ok(CACHE[n]
        .get_or_init(|| {
            let spec = ChainSpec::new(n).expect("n >= 2");
            let singlet = make_singlet();
            let (_, alice, bob) = optimize_correlator_sum(&singlet, &spec.terms, n, n, SEARCH_STARTS, SEARCH_SEED);
            let behavior = born_behavior(&singlet, &[alice.clone(), bob.clone()]).expect("two parties");
            let value = chain_value(&behavior, &spec).expect("bipartite");
            ChainOptimum { n, value, alice, bob }
        })
        .clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub p: f64,
}

impl MixtureSpec {
    pub fn new(p: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p) {
            Ok(MixtureSpec { p })
        } else {
            Err(Error::InvalidArgument(format!("local weight p = {p} outside [0, 1]")))
        }
    }
}

fn quantum_and_local(n: usize) -> Result<(f64, f64)> {
    let q = quantum_chain_optimum(n)?.value;
    let l = local_bound(&ChainSpec::new(n)?)?;
    Ok((q, l))
}

/// p·(Q_N − L_N): how far a mixture with local weight p falls below the
/// quantum chain optimum, assuming its local part saturates the local bound.
pub fn mixture_deviation(mix: MixtureSpec, n: usize) -> Result<f64> {
    let (q, l) = quantum_and_local(n)?;
    Ok(mix.p * (q - l))
}

/// (1 − p)·Q_N + p·L_N, computed as Q_N − deviation.
pub fn mixture_max_value(mix: MixtureSpec, n: usize) -> Result<f64> {
    let (q, _) = quantum_and_local(n)?;
    Ok(q - mixture_deviation(mix, n)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub p: f64,
    pub epsilon: f64,
    /// Smallest N whose deviation reaches epsilon, if any N ≤ 12 does.
    pub n: Option<usize>,
    /// (N, deviation) for N = 2..=12.
    pub deviations: Vec<(usize, f64)>,
}

pub fn detection_threshold_n(p: f64, epsilon: f64) -> Result<ThresholdReport> {
    let mix = MixtureSpec::new(p)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    // Enumeration stops at N = 8; beyond that the local bound is taken from
    // the enumerated pattern 2N − 2, which the test suite checks up to N = 8.
    let deviations = (2..=MAX_OPTIMIZED_N)
        .map(|n| {
            let q = quantum_chain_optimum(n)?.value;
            let l = if n <= MAX_ENUMERATED_N {
                local_bound(&ChainSpec::new(n)?)?
            } else {
                (2 * n - 2) as f64
            };
            Ok((n, mix.p * (q - l)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = deviations.iter().find(|(_, d)| *d >= epsilon).map(|(n, _)| *n);
    Ok(ThresholdReport {
        p,
        epsilon,
        n,
        deviations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::make_ghz3;

    #[test]
    fn chain_terms_shape() {
        let spec = ChainSpec::new(3).unwrap();
        let pairs: Vec<_> = spec.terms.iter().map(|t| (t.alice, t.bob, t.sign)).collect();
        assert_eq!(
            pairs,
            vec![
                (0, 0, 1.0),
                (1, 0, 1.0),
                (1, 1, 1.0),
                (2, 1, 1.0),
                (2, 2, 1.0),
                (0, 2, -1.0)
            ]
        );
        assert!(ChainSpec::new(1).is_err());
        let mut broken = spec.clone();
        broken.terms[0].sign = -1.0;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn chain_two_is_chsh() {
        let singlet = make_singlet();
        let b = born_behavior(&singlet, &[vec![0.1, 1.3], vec![0.7, 2.9]]).unwrap();
        let chain = chain_value(&b, &ChainSpec::new(2).unwrap()).unwrap();
        let chsh = chsh_value(&b, 1, 0, 0, 1).unwrap();
        assert!((chain - chsh).abs() < 1e-15);
    }

    #[test]
    fn deterministic_values() {
        let plus = Behavior::deterministic(vec![2, 2], &[vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(chsh_value(&plus, 0, 1, 0, 1).unwrap(), 2.0);
        let plus4 = Behavior::deterministic(vec![4, 4], &[vec![1; 4], vec![1; 4]]).unwrap();
        assert_eq!(chain_value(&plus4, &ChainSpec::new(4).unwrap()).unwrap(), 6.0);
    }

    #[test]
    fn noise_gives_zero() {
        let u = Behavior::product(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(chsh_value(&u, 0, 1, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let ghz = born_behavior(&make_ghz3(), &[vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        assert!(matches!(chsh_value(&ghz, 0, 0, 0, 0), Err(Error::DimensionMismatch(_))));
        let small = Behavior::product(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(chain_value(&small, &ChainSpec::new(3).unwrap()).is_err());
        assert!(matches!(
            local_bound(&ChainSpec::new(9).unwrap()),
            Err(Error::TooLarge(_))
        ));
        assert!(quantum_chain_optimum(13).is_err());
        assert!(MixtureSpec::new(1.5).is_err());
        assert!(detection_threshold_n(0.5, 0.0).is_err());
    }

    #[test]
    fn equally_spaced_chain() {
        let spec = ChainSpec::new(4).unwrap();
        let (a, b) = spec.equally_spaced_angles();
        let beh = born_behavior(&make_singlet(), &[a, b]).unwrap();
        let v = chain_value(&beh, &spec).unwrap();
        assert!((v - 8.0 * (PI / 8.0).cos()).abs() < 1e-6);
        assert!((v - 7.391_04).abs() < 1e-5);
    }

    #[test]
    fn local_bounds_small() {
        assert_eq!(local_bound(&ChainSpec::new(2).unwrap()).unwrap(), 2.0);
        assert_eq!(local_bound(&ChainSpec::new(4).unwrap()).unwrap(), 6.0);
        assert_eq!(local_bound(&ChainSpec::new(6).unwrap()).unwrap(), 10.0);
    }

    #[test]
    fn optimum_self_consistent() {
        let opt = quantum_chain_optimum(3).unwrap();
        let beh = born_behavior(&make_singlet(), &[opt.alice.clone(), opt.bob.clone()]).unwrap();
        let v = chain_value(&beh, &ChainSpec::new(3).unwrap()).unwrap();
        assert!((v - opt.value).abs() < 1e-9);
        assert!((opt.value - 6.0 * (PI / 6.0).cos()).abs() < 1e-6);
    }

    #[test]
    fn chsh_tsirelson() {
        let opt = chsh_optimum();
        assert!((opt.value - 2.0 * 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn sinusoid_fit_is_exact() {
        let f = |t: f64| 0.3 + 1.2 * t.cos() - 0.7 * t.sin();
        let arg = sinusoid_argmax(f(0.0), f(FRAC_PI_2), f(PI));
        let want = (-0.7f64).atan2(1.2).rem_euclid(TAU);
        assert!((arg - want).abs() < 1e-14);
    }

    #[test]
    fn mixture_endpoints() {
        let n = 4;
        assert_eq!(mixture_deviation(MixtureSpec::new(0.0).unwrap(), n).unwrap(), 0.0);
        let q = quantum_chain_optimum(n).unwrap().value;
        let full = mixture_deviation(MixtureSpec::new(1.0).unwrap(), n).unwrap();
        assert_eq!(full, q - 6.0);
        let d = mixture_deviation(MixtureSpec::new(0.1).unwrap(), n).unwrap();
        assert!((d - 0.139_10).abs() < 1e-5);
        let m = mixture_max_value(MixtureSpec::new(0.1).unwrap(), n).unwrap();
        assert!((m - (0.9 * q + 0.1 * 6.0)).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let r = detection_threshold_n(1.0, 0.5).unwrap();
        assert_eq!(r.n, Some(2));
        assert_eq!(r.deviations.len(), 11);
        assert!((r.deviations[0].1 - (2.0 * 2f64.sqrt() - 2.0)).abs() < 1e-6);
        assert_eq!(detection_threshold_n(0.5, 5.0).unwrap().n, None);
        assert_eq!(detection_threshold_n(0.0, 1e-3).unwrap().n, None);
    }
}
