//! Hidden-influence models: which device pairs keep their nonlocal
//! coordination in a given geometry, the behavior a model then produces, and
//! reproducible sampling of run records.

use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inequality::ChainTerm;
use crate::quantum::{decode_settings, outcome_value, Behavior};
use crate::spacetime::{Boost, Event, Metric, TimingScenario};

/// Trials per sampling chunk. Chunk `j` draws from ChaCha8 seeded with the
/// run seed on stream `j`.
pub const CHUNK_TRIALS: u64 = 1 << 16;

/// Record and CSV support is limited to three parties (a, b, c).
pub const MAX_RECORD_PARTIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Device {
    /// Arrival of the particle at the device.
    pub event: Event,
    /// Rest-frame velocity of the device along x.
    pub boost: Boost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub devices: Vec<Device>,
    #[serde(default)]
    pub metric: Metric,
}

impl Geometry {
    pub fn new(devices: Vec<Device>, metric: Metric) -> Result<Self> {
        let g = Geometry { devices, metric };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::InvalidArgument("geometry has no devices".into()));
        }
        for d in &self.devices {
            d.event.validate()?;
            Boost::new(d.boost.beta())?;
        }
        for (i, j) in self.pairs() {
            if self.separation(i, j) <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "devices {i} and {j} are at the same place"
                )));
            }
        }
        Ok(())
    }

    pub fn parties(&self) -> usize {
        self.devices.len()
    }

    /// Pairs (i, j) with i < j in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.devices.len();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }

    pub fn separation(&self, i: usize, j: usize) -> f64 {
        self.devices[i].event.spatial_distance(&self.devices[j].event)
    }

    /// Speed at which the pair recedes, taken as the smaller of the two
    /// devices' velocity components along the separation, pointing away from
    /// the partner; approaching devices count as zero.
    pub fn recession_speed(&self, i: usize, j: usize) -> f64 {
        let l = self.separation(i, j);
        let away = |me: usize, other: usize| -> f64 {
            let dx = self.devices[me].event.x - self.devices[other].event.x;
            (self.devices[me].boost.beta() * self.metric.c * dx / l).max(0.0)
        };
        away(i, j).min(away(j, i))
    }

    /// Timing scenario of a pair with influence speed `v`.
    pub fn pair_timing(&self, i: usize, j: usize, v: f64) -> Result<TimingScenario> {
        let dt = (self.devices[i].event.t - self.devices[j].event.t).abs();
        TimingScenario::with_c(self.separation(i, j), dt, self.recession_speed(i, j), v, self.metric.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coordination {
    #[serde(rename = "ON")]
    On,
    #[serde(rename = "OFF")]
    Off,
}

impl Coordination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Coordination::On => "ON",
            Coordination::Off => "OFF",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixtureSchedule {
    /// Each trial is local with probability p, independently.
    Coin,
    /// Period of `k` trials; the first round(p·k) of each period are local.
    Blocks { k: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Quantum,
    Local,
    /// Influence at speed `v` (m/s) in the lab frame.
    FiniteSpeed {
        v: f64,
    },
    /// Each device's rest frame decides the time order.
    Multisim,
    /// Local with weight `p`, quantum otherwise.
    Mixture {
        p: f64,
        schedule: MixtureSchedule,
    },
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelConfig::FiniteSpeed { v } if !(v > 0.0 && v.is_finite()) => Err(Error::NonPositiveSpeed(v)),
            ModelConfig::Mixture { p, .. } if !(0.0..=1.0).contains(&p) => {
                Err(Error::InvalidArgument(format!("mixture weight p = {p} outside [0, 1]")))
            }
            ModelConfig::Mixture {
                schedule: MixtureSchedule::Blocks { k: 0 },
                ..
            } => Err(Error::InvalidArgument("block length must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationMap {
    pub parties: usize,
    pub pairs: Vec<((usize, usize), Coordination)>,
}

impl CoordinationMap {
    pub fn uniform(parties: usize, c: Coordination) -> Self {
        let pairs = (0..parties)
            .flat_map(|i| (i + 1..parties).map(move |j| ((i, j), c)))
            .collect();
        CoordinationMap { parties, pairs }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<Coordination> {
        let key = (i.min(j), i.max(j));
        self.pairs.iter().find(|(p, _)| *p == key).map(|(_, c)| *c)
    }

    pub fn off_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .filter(|(_, c)| *c == Coordination::Off)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn all_on(&self) -> bool {
        self.off_pairs().is_empty()
    }

    /// (ab, ac, bc) entries, `None` for pairs that do not exist.
    fn record_slots(&self) -> [Option<Coordination>; 3] {
        [self.get(0, 1), self.get(0, 2), self.get(1, 2)].map(|c| c.filter(|_| self.parties > 1))
    }
}

/// Coordination in effect: fixed by the geometry, or switched per trial for
/// mixtures.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordinationPlan {
    Fixed {
        map: CoordinationMap,
    },
    Switched {
        p: f64,
        schedule: MixtureSchedule,
        on: CoordinationMap,
        off: CoordinationMap,
    },
}

pub fn coordination_map(model: &ModelConfig, g: &Geometry) -> Result<CoordinationPlan> {
    model.validate()?;
    g.validate()?;
    let n = g.parties();
    let per_pair = |off: &dyn Fn(usize, usize) -> Result<bool>| -> Result<CoordinationMap> {
        let pairs = g
            .pairs()
            .into_iter()
            .map(|(i, j)| {
                let c = if off(i, j)? {
                    Coordination::Off
                } else {
                    Coordination::On
                };
                Ok(((i, j), c))
            })
            .collect::<Result<_>>()?;
        Ok(CoordinationMap { parties: n, pairs })
    };
    let map = match *model {
        ModelConfig::Quantum => CoordinationMap::uniform(n, Coordination::On),
        ModelConfig::Local => CoordinationMap::uniform(n, Coordination::Off),
        ModelConfig::FiniteSpeed { v } => {
            per_pair(&|i, j| Ok(crate::spacetime::finite_speed_cut(&g.pair_timing(i, j, v)?)))?
        }
        ModelConfig::Multisim => {
            // The influence speed does not enter the before-before test.
            per_pair(&|i, j| Ok(crate::spacetime::before_before(&g.pair_timing(i, j, 1.0)?)))?
        }
        ModelConfig::Mixture { p, schedule } => {
            return Ok(CoordinationPlan::Switched {
                p,
                schedule,
                on: CoordinationMap::uniform(n, Coordination::On),
                off: CoordinationMap::uniform(n, Coordination::Off),
            });
        }
    };
    Ok(CoordinationPlan::Fixed { map })
}

/// Marginal over `subset`, averaged uniformly over the other parties'
/// settings. Exact for no-signaling targets.
fn averaged_marginal(target: &Behavior, subset: &[usize]) -> Behavior {
    let family = target.marginal(subset).expect("proper subset");
    let count = family.members.len() as f64;
    let mut table = family.members[0].1.table().to_vec();
    table.iter_mut().flatten().for_each(|p| *p = 0.0);
    for (_, m) in &family.members {
        for (acc_row, row) in table.iter_mut().zip(m.table()) {
            for (acc, p) in acc_row.iter_mut().zip(row) {
                *acc += p / count;
            }
        }
    }
    Behavior::from_parts_unchecked(family.members[0].1.settings_per_party().to_vec(), table).expect("shape preserved")
}

fn p_plus(single: &Behavior) -> Vec<f64> {
    single.table().iter().map(|row| row[0]).collect()
}

/// Behavior the model produces when `map` is in effect.
///
/// * every pair ON: the target;
/// * one OFF pair {i, j} among three parties: the third party k is sampled
///   jointly with i from the target's k–i marginal, then j from the target's
///   k–j marginal conditioned on k's outcome. The k–i and k–j marginals are
///   exact and the i–j part is local for each setting of k;
/// * a party in two OFF pairs is decoupled and sampled from its own marginal;
/// * bipartite OFF, or all three pairs OFF: product of single-party marginals.
pub fn apply_coordination(map: &CoordinationMap, target: &Behavior) -> Result<Behavior> {
    let n = target.parties();
    if map.parties != n {
        return Err(Error::DimensionMismatch(format!(
            "coordination map for {} parties, target has {n}",
            map.parties
        )));
    }
    target.validate(1e-9)?;
    let off = map.off_pairs();
    if off.is_empty() {
        return Ok(target.clone());
    }
    let singles: Vec<Vec<f64>> = (0..n).map(|p| p_plus(&averaged_marginal(target, &[p]))).collect();
    match (n, off.len()) {
        (2, _) | (3, 3) => Behavior::product(&singles),
        (3, 2) => {
            let isolated = (0..3)
                .find(|p| off.iter().all(|&(i, j)| i == *p || j == *p))
                .expect("two pairs share a party");
            let rest: Vec<usize> = (0..3).filter(|p| *p != isolated).collect();
            let pair = averaged_marginal(target, &rest);
            let single = &singles[isolated];
            build_table(target.settings_per_party(), |xs, outcome| {
                let bits = |p: usize| (outcome >> (2 - p)) & 1;
                let pair_row = pair.distribution(&[xs[rest[0]], xs[rest[1]]]).expect("index");
                let p_single = if bits(isolated) == 0 {
                    single[xs[isolated]]
                } else {
                    1.0 - single[xs[isolated]]
                };
                pair_row[bits(rest[0]) << 1 | bits(rest[1])] * p_single
            })
        }
        (3, 1) => {
            let (i, j) = off[0];
            let k = 3 - i - j;
            let ki = averaged_marginal(target, &sorted(k, i));
            let kj = averaged_marginal(target, &sorted(k, j));
            let hub = averaged_marginal(target, &[k]);
            build_table(target.settings_per_party(), |xs, outcome| {
                let bits = |p: usize| (outcome >> (2 - p)) & 1;
                let joint = |m: &Behavior, other: usize| -> f64 {
                    let (first, second) = if k < other { (k, other) } else { (other, k) };
                    let row = m.distribution(&[xs[first], xs[second]]).expect("index");
                    row[bits(first) << 1 | bits(second)]
                };
                let p_hub = hub.distribution(&[xs[k]]).expect("index")[bits(k)];
                let p_ki = joint(&ki, i);
                let p_j_given_k = if p_hub > 0.0 {
                    joint(&kj, j) / p_hub
                } else {
                    let s = singles[j][xs[j]];
                    if bits(j) == 0 {
                        s
                    } else {
                        1.0 - s
                    }
                };
                p_ki * p_j_given_k
            })
        }
        _ => Err(Error::Unsupported(format!("{} OFF pairs among {n} parties", off.len()))),
    }
}

fn sorted(a: usize, b: usize) -> [usize; 2] {
    [a.min(b), a.max(b)]
}

fn build_table(settings: &[usize], f: impl Fn(&[usize], usize) -> f64) -> Result<Behavior> {
    let parties = settings.len();
    let tuples: usize = settings.iter().product();
    let table = (0..tuples)
        .map(|s| {
            let xs = decode_settings(s, settings);
            (0..1usize << parties).map(|o| f(&xs, o)).collect()
        })
        .collect();
    let b = Behavior::from_parts_unchecked(settings.to_vec(), table)?;
    b.validate(1e-9)?;
    Ok(b)
}

/// Behavior the model produces for `target` in geometry `g`. For mixtures
/// this is the per-trial average (1 − p)·quantum + p·local.
pub fn effective_behavior(model: &ModelConfig, g: &Geometry, target: &Behavior) -> Result<Behavior> {
    if g.parties() != target.parties() {
        return Err(Error::DimensionMismatch(format!(
            "geometry has {} devices, target has {} parties",
            g.parties(),
            target.parties()
        )));
    }
    match coordination_map(model, g)? {
        CoordinationPlan::Fixed { map } => apply_coordination(&map, target),
        CoordinationPlan::Switched { p, on, off, .. } => {
            let quantum = apply_coordination(&on, target)?;
            let local = apply_coordination(&off, target)?;
            let table = quantum
                .table()
                .iter()
                .zip(local.table())
                .map(|(q, l)| q.iter().zip(l).map(|(a, b)| (1.0 - p) * a + p * b).collect())
                .collect();
            Behavior::from_parts_unchecked(target.settings_per_party().to_vec(), table)
        }
    }
}

/// How setting tuples are chosen for each trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SettingsSchedule {
    /// Each party picks a setting uniformly at random.
    Uniform,
    /// Trial t uses `tuples[t % len]`.
    Cycle { tuples: Vec<Vec<usize>> },
}

impl SettingsSchedule {
    /// Cycle over the (Alice, Bob) pairs of a Bell expression.
    pub fn from_terms(terms: &[ChainTerm]) -> Self {
        SettingsSchedule::Cycle {
            tuples: terms.iter().map(|t| vec![t.alice, t.bob]).collect(),
        }
    }

    fn validate(&self, settings: &[usize]) -> Result<()> {
        if let SettingsSchedule::Cycle { tuples } = self {
            if tuples.is_empty() {
                return Err(Error::InvalidArgument("empty settings cycle".into()));
            }
            for t in tuples {
                if t.len() != settings.len() || t.iter().zip(settings).any(|(x, m)| x >= m) {
                    return Err(Error::IndexOutOfRange(format!(
                        "setting tuple {t:?} does not fit {settings:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunRecord {
    pub trial: u64,
    pub parties: usize,
    settings: [usize; MAX_RECORD_PARTIES],
    outcomes: [i8; MAX_RECORD_PARTIES],
    /// (ab, ac, bc); `None` for pairs that do not exist.
    pub coordination: [Option<Coordination>; 3],
}

impl RunRecord {
    pub fn settings(&self) -> &[usize] {
        &self.settings[..self.parties]
    }

    pub fn outcomes(&self) -> &[i8] {
        &self.outcomes[..self.parties]
    }
}

/// Sample `trials` records. Output depends only on the arguments, never on the
/// number of worker threads.
pub fn sample_runs(
    model: &ModelConfig,
    g: &Geometry,
    target: &Behavior,
    schedule: &SettingsSchedule,
    trials: u64,
    seed: u64,
) -> Result<Vec<RunRecord>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let parties = target.parties();
    if parties > MAX_RECORD_PARTIES {
        return Err(Error::Unsupported(format!(
            "sampling supports at most {MAX_RECORD_PARTIES} parties"
        )));
    }
    if g.parties() != parties {
        return Err(Error::DimensionMismatch(format!(
            "geometry has {} devices, target has {parties} parties",
            g.parties()
        )));
    }
    schedule.validate(target.settings_per_party())?;

    // (behavior, coordination slots) for the nonlocal and local branches.
    let plan = coordination_map(model, g)?;
    let (primary, local, mixing) = match &plan {
        CoordinationPlan::Fixed { map } => ((apply_coordination(map, target)?, map.record_slots()), None, None),
        CoordinationPlan::Switched { p, schedule, on, off } => (
            (apply_coordination(on, target)?, on.record_slots()),
            Some((apply_coordination(off, target)?, off.record_slots())),
            Some((*p, *schedule)),
        ),
    };
    let settings_per_party = target.settings_per_party().to_vec();

    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let out: Vec<Vec<RunRecord>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let start = chunk * CHUNK_TRIALS;
            let end = (start + CHUNK_TRIALS).min(trials);
            let mut records = Vec::with_capacity((end - start) as usize);
            for trial in start..end {
                let is_local = match mixing {
                    None => false,
                    Some((p, MixtureSchedule::Coin)) => rng.random::<f64>() < p,
                    Some((p, MixtureSchedule::Blocks { k })) => (trial % k) < (p * k as f64).round() as u64,
                };
                let (behavior, slots) = if is_local {
                    let (b, s) = local.as_ref().expect("mixture has a local branch");
                    (b, *s)
                } else {
                    (&primary.0, primary.1)
                };
                let xs: Vec<usize> = match schedule {
                    SettingsSchedule::Uniform => settings_per_party.iter().map(|&m| rng.random_range(0..m)).collect(),
                    SettingsSchedule::Cycle { tuples } => tuples[(trial % tuples.len() as u64) as usize].clone(),
                };
                let row = behavior.distribution(&xs).expect("validated settings");
                let u: f64 = rng.random();
                let outcome = sample_index(row, u);
                let mut settings = [0; MAX_RECORD_PARTIES];
                let mut outcomes = [0; MAX_RECORD_PARTIES];
                for p in 0..parties {
                    settings[p] = xs[p];
                    outcomes[p] = outcome_value(outcome, p, parties);
                }
                records.push(RunRecord {
                    trial,
                    parties,
                    settings,
                    outcomes,
                    coordination: slots,
                });
            }
            records
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the total; take the last outcome with mass.
    row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1)
}

/// Write records as CSV with header
/// `trial,x,y,z,a,b,c,coord_ab,coord_ac,coord_bc`; absent parties and pairs
/// are blank.
pub fn write_csv<W: Write>(records: &[RunRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "trial,x,y,z,a,b,c,coord_ab,coord_ac,coord_bc")?;
    let mut line = String::with_capacity(64);
    for r in records {
        use std::fmt::Write as _;
        line.clear();
        write!(line, "{}", r.trial).unwrap();
        for p in 0..MAX_RECORD_PARTIES {
            line.push(',');
            if p < r.parties {
                write!(line, "{}", r.settings[p]).unwrap();
            }
        }
        for p in 0..MAX_RECORD_PARTIES {
            line.push(',');
            if p < r.parties {
                write!(line, "{}", r.outcomes[p]).unwrap();
            }
        }
        for c in r.coordination {
            line.push(',');
            if let Some(c) = c {
                line.push_str(c.as_str());
            }
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub count: u64,
}

/// Mean of the outcome product over records with the given settings.
pub fn estimate_correlator(records: &[RunRecord], settings: &[usize]) -> Estimate {
    let mut count = 0u64;
    let mut sum = 0i64;
    for r in records.iter().filter(|r| r.settings() == settings) {
        count += 1;
        sum += r.outcomes().iter().map(|&o| o as i64).product::<i64>();
    }
    if count == 0 {
        return Estimate {
            value: f64::NAN,
            stderr: f64::NAN,
            count,
        };
    }
    let mean = sum as f64 / count as f64;
    let stderr = ((1.0 - mean * mean).max(0.0) / count as f64).sqrt();
    Estimate {
        value: mean,
        stderr,
        count,
    }
}

/// Σ sign·E over a bipartite Bell expression, with standard error from
/// independent per-term estimates.
pub fn estimate_expression(records: &[RunRecord], terms: &[ChainTerm]) -> Estimate {
    let mut value = 0.0;
    let mut var = 0.0;
    let mut count = 0;
    for t in terms {
        let e = estimate_correlator(records, &[t.alice, t.bob]);
        value += t.sign * e.value;
        var += e.stderr * e.stderr;
        count += e.count;
    }
    Estimate {
        value,
        stderr: var.sqrt(),
        count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{born_behavior, make_ghz3, make_singlet};
    use crate::spacetime::SPEED_OF_LIGHT;

    fn at_rest(points: &[(f64, f64, f64)]) -> Geometry {
        Geometry::new(
            points
                .iter()
                .map(|&(t, x, y)| Device {
                    event: Event { t, x, y },
                    boost: Boost::REST,
                })
                .collect(),
            Metric::si(),
        )
        .unwrap()
    }

    fn fixed(plan: CoordinationPlan) -> CoordinationMap {
        match plan {
            CoordinationPlan::Fixed { map } => map,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multisim_at_rest_is_all_on() {
        let g = at_rest(&[(0.0, 0.0, 0.0), (0.0, 100.0, 0.0), (1e-9, 0.0, 50.0)]);
        assert!(fixed(coordination_map(&ModelConfig::Multisim, &g).unwrap()).all_on());
    }

    #[test]
    fn finite_speed_cuts_long_pair() {
        let g = at_rest(&[(0.0, 0.0, 0.0), (1e-9, 1000.0, 0.0)]);
        let m = fixed(
            coordination_map(
                &ModelConfig::FiniteSpeed {
                    v: 100.0 * SPEED_OF_LIGHT,
                },
                &g,
            )
            .unwrap(),
        );
        assert_eq!(m.get(0, 1), Some(Coordination::Off));
        let m = fixed(
            coordination_map(
                &ModelConfig::FiniteSpeed {
                    v: 1e5 * SPEED_OF_LIGHT,
                },
                &g,
            )
            .unwrap(),
        );
        assert_eq!(m.get(0, 1), Some(Coordination::On));
    }

    #[test]
    fn quantum_and_local_maps() {
        let g = at_rest(&[(0.0, 0.0, 0.0), (5.0, 1.0, 0.0), (0.0, 2.0, 0.0)]);
        assert!(fixed(coordination_map(&ModelConfig::Quantum, &g).unwrap()).all_on());
        assert_eq!(
            fixed(coordination_map(&ModelConfig::Local, &g).unwrap())
                .off_pairs()
                .len(),
            3
        );
    }

    #[test]
    fn model_validation() {
        let g = at_rest(&[(0.0, 0.0, 0.0), (0.0, 1.0, 0.0)]);
        assert!(coordination_map(&ModelConfig::FiniteSpeed { v: 0.0 }, &g).is_err());
        let bad_mix = ModelConfig::Mixture {
            p: 1.2,
            schedule: MixtureSchedule::Coin,
        };
        assert!(coordination_map(&bad_mix, &g).is_err());
        assert!(Geometry::new(vec![], Metric::si()).is_err());
    }

    #[test]
    fn receding_pair_is_cut_by_multisim() {
        let beta = 1e-5;
        let g = Geometry::new(
            vec![
                Device {
                    event: Event {
                        t: 0.0,
                        x: -5e3,
                        y: 0.0,
                    },
                    boost: Boost::new(-beta).unwrap(),
                },
                Device {
                    event: Event { t: 0.0, x: 5e3, y: 0.0 },
                    boost: Boost::new(beta).unwrap(),
                },
            ],
            Metric::si(),
        )
        .unwrap();
        assert!((g.recession_speed(0, 1) - beta * SPEED_OF_LIGHT).abs() < 1e-9);
        assert_eq!(
            fixed(coordination_map(&ModelConfig::Multisim, &g).unwrap()).get(0, 1),
            Some(Coordination::Off)
        );
    }

    #[test]
    fn all_on_is_identity_and_bipartite_off_is_product() {
        let target = born_behavior(&make_singlet(), &[vec![0.0, 1.0], vec![0.5, 2.0]]).unwrap();
        let on = CoordinationMap::uniform(2, Coordination::On);
        assert_eq!(apply_coordination(&on, &target).unwrap(), target);
        let off = CoordinationMap::uniform(2, Coordination::Off);
        let local = apply_coordination(&off, &target).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                assert!(local.correlator(&[x, y]).unwrap().abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tripartite_off_keeps_hub_marginals() {
        let target = born_behavior(&make_ghz3(), &[vec![0.0, 1.3], vec![0.2, 1.7], vec![0.4, 2.2]]).unwrap();
        let map = CoordinationMap {
            parties: 3,
            pairs: vec![
                ((0, 1), Coordination::On),
                ((0, 2), Coordination::On),
                ((1, 2), Coordination::Off),
            ],
        };
        let out = apply_coordination(&map, &target).unwrap();
        for subset in [[0, 1], [0, 2]] {
            let want = target.marginal(&subset).unwrap();
            let got = out.marginal(&subset).unwrap();
            for ((_, w), (_, g)) in want.members.iter().zip(&got.members) {
                for (rw, rg) in w.table().iter().zip(g.table()) {
                    for (a, b) in rw.iter().zip(rg) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
        // BC marginal now depends on Alice's setting.
        assert!(out.marginal(&[1, 2]).unwrap().max_abs_spread() > 1e-3);
    }

    #[test]
    fn two_and_three_off_pairs() {
        let target = born_behavior(&make_ghz3(), &[vec![0.0, 1.0], vec![0.3], vec![0.5]]).unwrap();
        let map = CoordinationMap {
            parties: 3,
            pairs: vec![
                ((0, 1), Coordination::Off),
                ((0, 2), Coordination::On),
                ((1, 2), Coordination::Off),
            ],
        };
        let out = apply_coordination(&map, &target).unwrap();
        let want = target.marginal(&[0, 2]).unwrap();
        let got = out.marginal(&[0, 2]).unwrap();
        assert!((want.members[0].1.table()[0][0] - got.members[0].1.table()[0][0]).abs() < 1e-12);
        assert!(out.is_no_signaling(1e-12));
        let all = apply_coordination(&CoordinationMap::uniform(3, Coordination::Off), &target).unwrap();
        assert!(all.is_no_signaling(1e-12));
    }

    #[test]
    fn unsupported_four_party_off() {
        use crate::quantum::StateVector;
        use num_complex::Complex64;
        let mut amps = vec![Complex64::new(0.0, 0.0); 16];
        amps[0] = Complex64::new(1.0, 0.0);
        let s = StateVector::new(amps).unwrap();
        let target = born_behavior(&s, &[vec![0.0], vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        let map = CoordinationMap::uniform(4, Coordination::Off);
        assert!(matches!(apply_coordination(&map, &target), Err(Error::Unsupported(_))));
    }

    #[test]
    fn sampling_is_deterministic_and_blocks_follow_schedule() {
        let target = born_behavior(&make_singlet(), &[vec![0.0, 1.0], vec![0.5, 2.0]]).unwrap();
        let g = at_rest(&[(0.0, 0.0, 0.0), (0.0, 10.0, 0.0)]);
        let model = ModelConfig::Mixture {
            p: 0.25,
            schedule: MixtureSchedule::Blocks { k: 4 },
        };
        let a = sample_runs(&model, &g, &target, &SettingsSchedule::Uniform, 1000, 9).unwrap();
        let b = sample_runs(&model, &g, &target, &SettingsSchedule::Uniform, 1000, 9).unwrap();
        assert_eq!(a, b);
        for r in &a {
            let local = r.trial % 4 == 0;
            assert_eq!(
                r.coordination[0],
                Some(if local { Coordination::Off } else { Coordination::On })
            );
            assert_eq!(r.coordination[1], None);
        }
        let c = sample_runs(&model, &g, &target, &SettingsSchedule::Uniform, 1000, 10).unwrap();
        assert_ne!(a, c);
        assert!(sample_runs(&model, &g, &target, &SettingsSchedule::Uniform, 0, 9).is_err());
    }

    #[test]
    fn csv_layout() {
        let target = born_behavior(&make_singlet(), &[vec![0.0], vec![0.0]]).unwrap();
        let g = at_rest(&[(0.0, 0.0, 0.0), (0.0, 10.0, 0.0)]);
        let recs = sample_runs(&ModelConfig::Quantum, &g, &target, &SettingsSchedule::Uniform, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "trial,x,y,z,a,b,c,coord_ab,coord_ac,coord_bc");
        assert_eq!(lines.len(), 4);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 10);
        assert_eq!(&fields[..4], &["0", "0", "0", ""]);
        assert_eq!(fields[6], "");
        assert_eq!(&fields[7..], &["ON", "", ""]);
        // singlet at equal angles: opposite outcomes
        assert_eq!(fields[4].parse::<i32>().unwrap(), -fields[5].parse::<i32>().unwrap());
    }

    #[test]
    fn sample_index_edges() {
        assert_eq!(sample_index(&[0.5, 0.5, 0.0, 0.0], 0.999_999_999_999_999_9), 1);
        assert_eq!(sample_index(&[0.0, 1.0], 0.0), 1);
    }
}
