//! Small state vectors and Born-rule behaviors.
//!
//! Party `i` measured at angle θ means the ±1-valued observable
//! cos θ·σz + sin θ·σx on qubit `i`. With this convention the singlet
//! correlator is −cos(θa − θb).
//!
//! Index conventions (used by every table in the crate): qubit 0 is the most
//! significant bit of an amplitude index; setting tuples are mixed-radix
//! numbers with party 0 most significant; outcome tuples are bit strings with
//! party 0 most significant and bit 0 meaning +1, so +1 sorts before −1.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 4;
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// Wraps amplitudes that are already normalized.
    pub fn new(amps: Vec<Complex64>) -> Result<Self> {
        let n = qubit_count(amps.len())?;
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if !norm.is_finite() || (norm - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidState(format!("squared norm {norm} is not 1")));
        }
        Ok(StateVector { n, amps })
    }

    /// Normalizes arbitrary non-zero amplitudes.
    pub fn normalized(mut amps: Vec<Complex64>) -> Result<Self> {
        qubit_count(amps.len())?;
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidState("amplitudes have zero or non-finite norm".into()));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        StateVector::new(amps)
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }
}

fn qubit_count(len: usize) -> Result<usize> {
    if !len.is_power_of_two() || len < 2 {
        return Err(Error::InvalidState(format!("{len} amplitudes is not 2^n with n >= 1")));
    }
    let n = len.trailing_zeros() as usize;
    if n > MAX_QUBITS {
        return Err(Error::InvalidState(format!(
            "{n} qubits exceeds the maximum of {MAX_QUBITS}"
        )));
    }
    Ok(n)
}

/// (|01⟩ − |10⟩)/√2
pub fn make_singlet() -> StateVector {
    let h = FRAC_1_SQRT_2;
    StateVector {
        n: 2,
        amps: [0.0, h, -h, 0.0].map(|r| Complex64::new(r, 0.0)).to_vec(),
    }
}

/// (|000⟩ + |111⟩)/√2
pub fn make_ghz3() -> StateVector {
    let mut amps = vec![Complex64::new(0.0, 0.0); 8];
    amps[0] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    amps[7] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    StateVector { n: 3, amps }
}

/// cos α|000⟩ + sin α|111⟩
pub fn make_weighted_ghz3(alpha: f64) -> StateVector {
    let mut amps = vec![Complex64::new(0.0, 0.0); 8];
    amps[0] = Complex64::new(alpha.cos(), 0.0);
    amps[7] = Complex64::new(alpha.sin(), 0.0);
    StateVector { n: 3, amps }
}

/// A measurement angle for one party, reduced modulo 2π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub party: usize,
    pub theta: f64,
}

impl Setting {
    pub fn new(party: usize, theta: f64) -> Self {
        Setting {
            party,
            theta: theta.rem_euclid(TAU),
        }
    }

    /// Eigenvectors (+1, −1) of cos θ·σz + sin θ·σx in the computational basis.
    fn eigenvectors(&self) -> [[f64; 2]; 2] {
        let (s, c) = (self.theta / 2.0).sin_cos();
        [[c, s], [-s, c]]
    }
}

/// Conditional outcome table P(outcomes | settings) for binary ±1 outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BehaviorRepr")]
pub struct Behavior {
    parties: usize,
    settings_per_party: Vec<usize>,
    table: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct BehaviorRepr {
    parties: usize,
    settings_per_party: Vec<usize>,
    table: Vec<Vec<f64>>,
}

impl TryFrom<BehaviorRepr> for Behavior {
    type Error = Error;

    fn try_from(r: BehaviorRepr) -> Result<Self> {
        if r.parties != r.settings_per_party.len() {
            return Err(Error::InvalidBehavior(format!(
                "parties = {} but {} setting counts given",
                r.parties,
                r.settings_per_party.len()
            )));
        }
        Behavior::new(r.settings_per_party, r.table)
    }
}

impl Behavior {
    pub fn new(settings_per_party: Vec<usize>, table: Vec<Vec<f64>>) -> Result<Self> {
        let b = Behavior::from_parts_unchecked(settings_per_party, table)?;
        b.validate(NORMALIZATION_TOLERANCE)?;
        Ok(b)
    }

    /// Shape checks only; the distributions are not verified.
    pub(crate) fn from_parts_unchecked(settings_per_party: Vec<usize>, table: Vec<Vec<f64>>) -> Result<Self> {
        let parties = settings_per_party.len();
        if parties == 0 || parties > MAX_QUBITS {
            return Err(Error::InvalidBehavior(format!(
                "{parties} parties (allowed 1..={MAX_QUBITS})"
            )));
        }
        if settings_per_party.contains(&0) {
            return Err(Error::InvalidBehavior("every party needs at least one setting".into()));
        }
        let tuples: usize = settings_per_party.iter().product();
        if table.len() != tuples || table.iter().any(|row| row.len() != 1 << parties) {
            return Err(Error::InvalidBehavior(format!(
                "table must be {tuples} rows of {} probabilities",
                1 << parties
            )));
        }
        Ok(Behavior {
            parties,
            settings_per_party,
            table,
        })
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        for (i, row) in self.table.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < -tol) {
                return Err(Error::InvalidBehavior(format!("negative probability in row {i}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::InvalidBehavior(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Deterministic behavior: `strategy[i][x]` is party i's outcome (+1 or −1) at setting x.
    pub fn deterministic(settings_per_party: Vec<usize>, strategy: &[Vec<i8>]) -> Result<Self> {
        if strategy.len() != settings_per_party.len()
            || strategy.iter().zip(&settings_per_party).any(|(s, &m)| s.len() != m)
        {
            return Err(Error::DimensionMismatch("strategy shape differs from settings".into()));
        }
        let parties = settings_per_party.len();
        let tuples: usize = settings_per_party.iter().product();
        let mut table = vec![vec![0.0; 1 << parties]; tuples];
        for (s, row) in table.iter_mut().enumerate() {
            let settings = decode_settings(s, &settings_per_party);
            let mut idx = 0;
            for (party, &x) in settings.iter().enumerate() {
                idx = (idx << 1) | usize::from(strategy[party][x] < 0);
            }
            row[idx] = 1.0;
        }
        Behavior::new(settings_per_party, table)
    }

    /// Independent parties: `local[i][x]` is P(outcome = +1 | setting x) for
    /// party i.
    pub fn product(local: &[Vec<f64>]) -> Result<Self> {
        let settings_per_party: Vec<usize> = local.iter().map(Vec::len).collect();
        let parties = local.len();
        let tuples: usize = settings_per_party.iter().product();
        let mut table = Vec::with_capacity(tuples);
        for s in 0..tuples {
            let settings = decode_settings(s, &settings_per_party);
            let row = (0..1usize << parties)
                .map(|o| {
                    (0..parties)
                        .map(|i| {
                            let p_plus = local[i][settings[i]];
                            if outcome_bit(o, i, parties) == 0 {
                                p_plus
                            } else {
                                1.0 - p_plus
                            }
                        })
                        .product()
                })
                .collect();
            table.push(row);
        }
        Behavior::new(settings_per_party, table)
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn settings_per_party(&self) -> &[usize] {
        &self.settings_per_party
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn num_setting_tuples(&self) -> usize {
        self.table.len()
    }

    pub fn num_outcomes(&self) -> usize {
        1 << self.parties
    }

    pub fn setting_index(&self, settings: &[usize]) -> Result<usize> {
        if settings.len() != self.parties {
            return Err(Error::IndexOutOfRange(format!(
                "{} setting indices for {} parties",
                settings.len(),
                self.parties
            )));
        }
        let mut idx = 0;
        for (party, (&x, &m)) in settings.iter().zip(&self.settings_per_party).enumerate() {
            if x >= m {
                return Err(Error::IndexOutOfRange(format!(
                    "setting {x} for party {party} (has {m})"
                )));
            }
            idx = idx * m + x;
        }
        Ok(idx)
    }

    pub fn setting_tuple(&self, idx: usize) -> Vec<usize> {
        decode_settings(idx, &self.settings_per_party)
    }

    pub fn distribution(&self, settings: &[usize]) -> Result<&[f64]> {
        Ok(&self.table[self.setting_index(settings)?])
    }

    /// Expectation of the product of all outcomes at the given setting tuple.
    pub fn correlator(&self, settings: &[usize]) -> Result<f64> {
        let row = self.distribution(settings)?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(o, p)| if (o.count_ones() & 1) == 0 { *p } else { -*p })
            .sum())
    }

    /// Marginal over `subset` with the complementary parties' settings fixed.
    pub fn marginal_at(&self, subset: &[usize], complement_settings: &[usize]) -> Result<Behavior> {
        let (subset, complement) = self.split(subset)?;
        if complement_settings.len() != complement.len() {
            return Err(Error::IndexOutOfRange(format!(
                "{} complementary settings for {} parties",
                complement_settings.len(),
                complement.len()
            )));
        }
        let sub_settings: Vec<usize> = subset.iter().map(|&p| self.settings_per_party[p]).collect();
        let k = subset.len();
        let tuples: usize = sub_settings.iter().product();
        let mut full = vec![0usize; self.parties];
        for (&p, &x) in complement.iter().zip(complement_settings) {
            full[p] = x;
        }
        let mut table = Vec::with_capacity(tuples);
        for s in 0..tuples {
            for (&p, x) in subset.iter().zip(decode_settings(s, &sub_settings)) {
                full[p] = x;
            }
            let row = self.distribution(&full)?;
            let mut out = vec![0.0; 1 << k];
            for (o, &prob) in row.iter().enumerate() {
                let mut idx = 0;
                for &p in &subset {
                    idx = (idx << 1) | outcome_bit(o, p, self.parties);
                }
                out[idx] += prob;
            }
            table.push(out);
        }
        Behavior::from_parts_unchecked(sub_settings, table)
    }

    /// One marginal per setting tuple of the complementary parties. Nothing is
    /// averaged, so any dependence on remote settings stays visible.
    pub fn marginal(&self, subset: &[usize]) -> Result<MarginalFamily> {
        let (subset, complement) = self.split(subset)?;
        let comp_settings: Vec<usize> = complement.iter().map(|&p| self.settings_per_party[p]).collect();
        let tuples: usize = comp_settings.iter().product();
        let members = (0..tuples)
            .map(|s| {
                let cs = decode_settings(s, &comp_settings);
                let m = self.marginal_at(&subset, &cs)?;
                Ok((cs, m))
            })
            .collect::<Result<_>>()?;
        Ok(MarginalFamily {
            subset,
            complement,
            members,
        })
    }

    /// True when, for every proper subset of parties, the marginal does not
    /// depend on the remaining parties' settings (within `tol`, entrywise).
    pub fn is_no_signaling(&self, tol: f64) -> bool {
        proper_subsets(self.parties).all(|subset| {
            let family = self.marginal(&subset).expect("proper subset");
            family.max_abs_spread() <= tol
        })
    }

    fn split(&self, subset: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut s = subset.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.is_empty() || s.len() >= self.parties {
            return Err(Error::InvalidSubset(format!(
                "subset {subset:?} must be non-empty and proper for {} parties",
                self.parties
            )));
        }
        if let Some(&bad) = s.iter().find(|&&p| p >= self.parties) {
            return Err(Error::InvalidSubset(format!("party {bad} does not exist")));
        }
        let complement = (0..self.parties).filter(|p| !s.contains(p)).collect();
        Ok((s, complement))
    }
}

/// Marginals over `subset`, one per setting tuple of `complement`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalFamily {
    pub subset: Vec<usize>,
    pub complement: Vec<usize>,
    pub members: Vec<(Vec<usize>, Behavior)>,
}

impl MarginalFamily {
    /// Largest entrywise difference between any two members.
    pub fn max_abs_spread(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (_, first) in &self.members {
            for (_, other) in &self.members {
                for (r1, r2) in first.table.iter().zip(&other.table) {
                    for (p, q) in r1.iter().zip(r2) {
                        worst = worst.max((p - q).abs());
                    }
                }
            }
        }
        worst
    }
}

pub(crate) fn decode_settings(mut idx: usize, settings_per_party: &[usize]) -> Vec<usize> {
    let mut out = vec![0; settings_per_party.len()];
    for (slot, &m) in out.iter_mut().zip(settings_per_party).rev() {
        *slot = idx % m;
        idx /= m;
    }
    out
}

/// 0 for +1, 1 for −1.
#[inline]
pub(crate) fn outcome_bit(outcome: usize, party: usize, parties: usize) -> usize {
    (outcome >> (parties - 1 - party)) & 1
}

/// ±1 value of `party` in outcome index `outcome`.
#[inline]
pub fn outcome_value(outcome: usize, party: usize, parties: usize) -> i8 {
    if outcome_bit(outcome, party, parties) == 0 {
        1
    } else {
        -1
    }
}

pub(crate) fn proper_subsets(parties: usize) -> impl Iterator<Item = Vec<usize>> {
    (1..(1usize << parties) - 1).map(move |mask| (0..parties).filter(|p| mask >> p & 1 == 1).collect())
}

/// Born-rule behavior of `state` with `angles[i]` the measurement angles of
/// party i.
pub fn born_behavior(state: &StateVector, angles: &[Vec<f64>]) -> Result<Behavior> {
    let n = state.n;
    if angles.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "state has {n} qubits but {} parties were given settings",
            angles.len()
        )));
    }
    if angles.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("every party needs at least one angle".into()));
    }
    let settings_per_party: Vec<usize> = angles.iter().map(Vec::len).collect();
    let tuples: usize = settings_per_party.iter().product();
    let mut table = Vec::with_capacity(tuples);
    for s in 0..tuples {
        let xs = decode_settings(s, &settings_per_party);
        let vecs: Vec<[[f64; 2]; 2]> = xs
            .iter()
            .enumerate()
            .map(|(p, &x)| Setting::new(p, angles[p][x]).eigenvectors())
            .collect();
        let row: Vec<f64> = (0..1usize << n)
            .map(|o| {
                let amp: Complex64 = state
                    .amps
                    .iter()
                    .enumerate()
                    .map(|(idx, a)| {
                        let w: f64 = (0..n)
                            .map(|p| vecs[p][outcome_bit(o, p, n)][outcome_bit(idx, p, n)])
                            .product();
                        a * w
                    })
                    .sum();
                amp.norm_sqr()
            })
            .collect();
        table.push(row);
    }
    Behavior::new(settings_per_party, table)
}

/// ⟨ψ| A(θa) ⊗ B(θb) |ψ⟩ for a two-qubit state, without building a table.
pub fn two_party_correlator(state: &StateVector, theta_a: f64, theta_b: f64) -> f64 {
    debug_assert_eq!(state.n, 2);
    let (sa, ca) = theta_a.sin_cos();
    let (sb, cb) = theta_b.sin_cos();
    // Single-qubit observable cos θ σz + sin θ σx as a real 2×2 matrix.
    let oa = [[ca, sa], [sa, -ca]];
    let ob = [[cb, sb], [sb, -cb]];
    let psi = &state.amps;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            let w = oa[i >> 1][j >> 1] * ob[i & 1][j & 1];
            if w != 0.0 {
                acc += psi[i].conj() * psi[j] * w;
            }
        }
    }
    acc.re
}
