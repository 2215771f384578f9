//! Signaling detection, local-polytope membership, and the local-parts
//! feasibility program for tripartite behaviors.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hvmodels::{apply_coordination, Coordination, CoordinationMap};
use crate::lp::{LinearProgram, LpOutcome, Relation, FEASIBILITY_TOLERANCE};
use crate::quantum::{
    born_behavior, decode_settings, make_ghz3, make_weighted_ghz3, outcome_bit, Behavior, StateVector,
};
use crate::spacetime::{Event, Metric};

/// Largest settings count per side for vertex enumeration.
pub const MAX_POLYTOPE_SETTINGS: usize = 4;
/// Largest settings count per party in the local-parts program.
pub const MAX_LOCALPARTS_SETTINGS: usize = 3;
/// Upper limit on the visibility variable, so fully random-looking targets
/// stay bounded.
pub const VISIBILITY_CAP: f64 = 16.0;

/// Largest total-variation distance between the `receivers` marginals at two
/// different settings of the remaining parties, maximized over the receivers'
/// own settings.
pub fn signaling_distance(b: &Behavior, receivers: &[usize]) -> Result<f64> {
    let family = b.marginal(receivers)?;
    let mut worst: f64 = 0.0;
    for (i, (_, m1)) in family.members.iter().enumerate() {
        for (_, m2) in &family.members[i + 1..] {
            for (r1, r2) in m1.table().iter().zip(m2.table()) {
                let tv = 0.5 * r1.iter().zip(r2).map(|(p, q)| (p - q).abs()).sum::<f64>();
                worst = worst.max(tv);
            }
        }
    }
    Ok(worst)
}

/// Deterministic two-party strategy: bit x of `alice` is Alice's outcome bit
/// at setting x, likewise for `bob`.
fn vertex_table(ma: usize, mb: usize, alice: usize, bob: usize) -> Vec<Vec<f64>> {
    let mut table = vec![vec![0.0; 4]; ma * mb];
    for x in 0..ma {
        for y in 0..mb {
            let o = ((alice >> x) & 1) << 1 | ((bob >> y) & 1);
            table[x * mb + y][o] = 1.0;
        }
    }
    table
}

/// Linear functional Σ coeffs·P on a bipartite behavior, with its maximum over
/// local deterministic strategies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BellInequality {
    pub settings: [usize; 2],
    /// Same layout as a behavior table.
    pub coeffs: Vec<Vec<f64>>,
    pub local_bound: f64,
    pub value: f64,
    /// value − local_bound.
    pub margin: f64,
}

impl BellInequality {
    pub fn evaluate(&self, b: &Behavior) -> f64 {
        self.coeffs
            .iter()
            .zip(b.table())
            .map(|(c, row)| c.iter().zip(row).map(|(a, p)| a * p).sum::<f64>())
            .sum()
    }

    /// Maximum over every deterministic strategy.
    pub fn enumerate_local_bound(&self) -> f64 {
        let [ma, mb] = self.settings;
        let mut best = f64::NEG_INFINITY;
        for sa in 0..1usize << ma {
            for sb in 0..1usize << mb {
                let v: f64 = vertex_table(ma, mb, sa, sb)
                    .iter()
                    .zip(&self.coeffs)
                    .map(|(row, c)| row.iter().zip(c).map(|(p, a)| p * a).sum::<f64>())
                    .sum();
                best = best.max(v);
            }
        }
        best
    }
}

impl fmt::Display for BellInequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mb = self.settings[1];
        let mut first = true;
        for (s, row) in self.coeffs.iter().enumerate() {
            for (o, &c) in row.iter().enumerate() {
                if c.abs() < 1e-9 {
                    continue;
                }
                let sign = if c < 0.0 {
                    "-"
                } else if first {
                    ""
                } else {
                    "+"
                };
                let sep = if first { "" } else { " " };
                let a = if o >> 1 == 0 { '+' } else { '-' };
                let b = if o & 1 == 0 { '+' } else { '-' };
                write!(f, "{sep}{sign}{:.4}·P({a}{b}|{}{})", c.abs(), s / mb, s % mb)?;
                first = false;
            }
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, " <= {:.6} (observed {:.6})", self.local_bound, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolytopeMembership {
    Local {
        /// Weight per deterministic strategy, index `alice << mb | bob`.
        weights: Vec<f64>,
        residual: f64,
    },
    Nonlocal {
        inequality: BellInequality,
    },
}

impl PolytopeMembership {
    pub fn is_local(&self) -> bool {
        matches!(self, PolytopeMembership::Local { .. })
    }
}

/// Whether a bipartite binary-outcome behavior is a mixture of deterministic
/// local strategies. Returns weights, or a separating inequality with
/// coefficients in [−1, 1] and its margin re-computed by enumeration.
pub fn local_polytope_member(bc: &Behavior) -> Result<PolytopeMembership> {
    if bc.parties() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "expected 2 parties, got {}",
            bc.parties()
        )));
    }
    let (ma, mb) = (bc.settings_per_party()[0], bc.settings_per_party()[1]);
    if ma > MAX_POLYTOPE_SETTINGS || mb > MAX_POLYTOPE_SETTINGS {
        return Err(Error::TooLarge(format!(
            "{ma}x{mb} settings; vertex enumeration supports at most {MAX_POLYTOPE_SETTINGS} per side"
        )));
    }
    bc.validate(1e-9)?;
    let vertices: Vec<Vec<f64>> = (0..1usize << ma)
        .flat_map(|sa| (0..1usize << mb).map(move |sb| vertex_table(ma, mb, sa, sb).concat()))
        .collect();
    let target: Vec<f64> = bc.table().concat();
    let entries = target.len();

    let mut lp = LinearProgram::new(vertices.len());
    for e in 0..entries {
        let terms: Vec<(usize, f64)> = vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v[e] != 0.0)
            .map(|(k, v)| (k, v[e]))
            .collect();
        lp.add_sparse(&terms, Relation::Eq, target[e]);
    }
    lp.add(vec![1.0; vertices.len()], Relation::Eq, 1.0);
    if let LpOutcome::Optimal { x, .. } = lp.solve()? {
        let residual = lp.residual(&x);
        if residual <= FEASIBILITY_TOLERANCE {
            return Ok(PolytopeMembership::Local { weights: x, residual });
        }
    }

    // Separating functional: maximize β·P − β0 subject to β·V ≤ β0 for every
    // vertex and |β| ≤ 1, with β = u − 1, u ∈ [0, 2] and β0 = s⁺ − s⁻.
    let (s_plus, s_minus) = (entries, entries + 1);
    let mut sep = LinearProgram::new(entries + 2);
    sep.objective[..entries].copy_from_slice(&target);
    sep.objective[s_plus] = -1.0;
    sep.objective[s_minus] = 1.0;
    for v in &vertices {
        let mut row = v.clone();
        row.push(-1.0);
        row.push(1.0);
        sep.add(row, Relation::Le, v.iter().sum());
    }
    for e in 0..entries {
        sep.add_sparse(&[(e, 1.0)], Relation::Le, 2.0);
    }
    let x = match sep.solve()? {
        LpOutcome::Optimal { x, .. } => x,
        other => return Err(Error::Lp(format!("separation program ended {other:?}"))),
    };
    let coeffs: Vec<Vec<f64>> = x[..entries]
        .chunks(4)
        .map(|c| c.iter().map(|u| u - 1.0).collect())
        .collect();
    let mut inequality = BellInequality {
        settings: [ma, mb],
        coeffs,
        local_bound: 0.0,
        value: 0.0,
        margin: 0.0,
    };
    inequality.local_bound = inequality.enumerate_local_bound();
    inequality.value = inequality.evaluate(bc);
    inequality.margin = inequality.value - inequality.local_bound;
    if inequality.margin <= FEASIBILITY_TOLERANCE {
        return Err(Error::Lp(format!(
            "membership program infeasible but separation margin is only {:e}",
            inequality.margin
        )));
    }
    Ok(PolytopeMembership::Nonlocal { inequality })
}

/// What a constraint row of the local-parts program fixes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowLabel {
    /// Pair marginal of Q at a full setting triple, matched to the target.
    Matched {
        pair: [usize; 2],
        settings: Vec<usize>,
        outcomes: [i8; 2],
    },
    /// Pair marginal of Q equal to the strategy mixture, for every setting of
    /// the third party.
    Decomposed {
        pair: [usize; 2],
        settings: Vec<usize>,
        outcomes: [i8; 2],
    },
    /// Strategy weights sum to one.
    Weights,
}

const PARTY_NAMES: [char; 3] = ['A', 'B', 'C'];

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = |o: i8| if o > 0 { '+' } else { '-' };
        match self {
            RowLabel::Matched {
                pair,
                settings,
                outcomes,
            }
            | RowLabel::Decomposed {
                pair,
                settings,
                outcomes,
            } => {
                let xs: Vec<String> = settings.iter().map(|x| x.to_string()).collect();
                write!(
                    f,
                    "P_{}{}({}{}|{})",
                    PARTY_NAMES[pair[0]],
                    PARTY_NAMES[pair[1]],
                    sign(outcomes[0]),
                    sign(outcomes[1]),
                    xs.join(",")
                )
            }
            RowLabel::Weights => write!(f, "sum(w)"),
        }
    }
}

/// Linear system for "a tripartite Q matches the target on the two ON pairs,
/// and its OFF-pair marginal is one mixture of deterministic strategies for
/// every setting of the third party".
///
/// Variables: Q(abc|xyz) for every setting triple and outcome, then one weight
/// per deterministic strategy of the OFF pair.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityProblem {
    pub off_pair: [usize; 2],
    pub hub: usize,
    pub settings_per_party: Vec<usize>,
    pub lp: LinearProgram,
    pub rows: Vec<RowLabel>,
    pub q_vars: usize,
    pub strategy_vars: usize,
}

impl FeasibilityProblem {
    pub fn new(target: &Behavior, off_pair: (usize, usize)) -> Result<Self> {
        Self::build(target, off_pair, false)
    }

    /// Variant with one extra variable t: ON-pair marginals must equal
    /// t·target + (1 − t)·uniform. Maximizing t gives the visibility.
    pub fn visibility(target: &Behavior, off_pair: (usize, usize)) -> Result<Self> {
        Self::build(target, off_pair, true)
    }

    fn build(target: &Behavior, off_pair: (usize, usize), with_visibility: bool) -> Result<Self> {
        if target.parties() != 3 {
            return Err(Error::DimensionMismatch(format!(
                "expected 3 parties, got {}",
                target.parties()
            )));
        }
        let settings = target.settings_per_party().to_vec();
        if settings.iter().any(|&m| m > MAX_LOCALPARTS_SETTINGS) {
            return Err(Error::TooLarge(format!(
                "settings {settings:?}; at most {MAX_LOCALPARTS_SETTINGS} per party"
            )));
        }
        let (i, j) = (off_pair.0.min(off_pair.1), off_pair.0.max(off_pair.1));
        if i == j || j > 2 {
            return Err(Error::InvalidSubset(format!("off pair {off_pair:?}")));
        }
        target.validate(1e-9)?;
        let hub = 3 - i - j;
        let tuples = target.num_setting_tuples();
        let q_vars = tuples * 8;
        let strategy_vars = 1usize << (settings[i] + settings[j]);
        let t_var = q_vars + strategy_vars;
        let num_vars = t_var + usize::from(with_visibility);

        let mut lp = LinearProgram::new(num_vars);
        let mut rows = Vec::new();
        let bits_of = |o: usize, p: usize| outcome_bit(o, p, 3);
        let value = |b: usize| if b == 0 { 1i8 } else { -1 };
        for t in 0..tuples {
            let xs = decode_settings(t, &settings);
            let row = &target.table()[t];
            for pair in [[hub.min(i), hub.max(i)], [hub.min(j), hub.max(j)]] {
                for ob in 0..4usize {
                    let (b0, b1) = (ob >> 1, ob & 1);
                    let mut terms = Vec::with_capacity(2);
                    let mut rhs = 0.0;
                    for o in (0..8).filter(|&o| bits_of(o, pair[0]) == b0 && bits_of(o, pair[1]) == b1) {
                        terms.push((t * 8 + o, 1.0));
                        rhs += row[o];
                    }
                    if with_visibility {
                        terms.push((t_var, -(rhs - 0.25)));
                        rhs = 0.25;
                    }
                    lp.add_sparse(&terms, Relation::Eq, rhs);
                    rows.push(RowLabel::Matched {
                        pair,
                        settings: xs.clone(),
                        outcomes: [value(b0), value(b1)],
                    });
                }
            }
            for ob in 0..4usize {
                let (bi, bj) = (ob >> 1, ob & 1);
                let mut terms: Vec<(usize, f64)> = (0..8)
                    .filter(|&o| bits_of(o, i) == bi && bits_of(o, j) == bj)
                    .map(|o| (t * 8 + o, 1.0))
                    .collect();
                for lambda in 0..strategy_vars {
                    let (si, sj) = (lambda >> settings[j], lambda & ((1 << settings[j]) - 1));
                    if (si >> xs[i]) & 1 == bi && (sj >> xs[j]) & 1 == bj {
                        terms.push((q_vars + lambda, -1.0));
                    }
                }
                lp.add_sparse(&terms, Relation::Eq, 0.0);
                rows.push(RowLabel::Decomposed {
                    pair: [i, j],
                    settings: xs.clone(),
                    outcomes: [value(bi), value(bj)],
                });
            }
        }
        let weights: Vec<(usize, f64)> = (0..strategy_vars).map(|l| (q_vars + l, 1.0)).collect();
        lp.add_sparse(&weights, Relation::Eq, 1.0);
        rows.push(RowLabel::Weights);
        if with_visibility {
            lp.objective[t_var] = 1.0;
            lp.add_sparse(&[(t_var, 1.0)], Relation::Le, VISIBILITY_CAP);
        }
        Ok(FeasibilityProblem {
            off_pair: [i, j],
            hub,
            settings_per_party: settings,
            lp,
            rows,
            q_vars,
            strategy_vars,
        })
    }

    /// Every feasible point has Σx ≤ this bound: Q sums to one per setting
    /// triple and the weights sum to one.
    pub fn mass_bound(&self) -> f64 {
        (self.q_vars / 8 + 1) as f64
    }

    pub fn check_witness(&self, x: &[f64]) -> f64 {
        if x.len() != self.lp.num_vars {
            return f64::INFINITY;
        }
        self.lp.residual(x)
    }

    pub fn check_certificate(&self, y: &[f64]) -> f64 {
        self.lp.farkas_margin(y, self.mass_bound())
    }

    pub fn solve(&self) -> Result<LocalPartsOutcome> {
        match self.lp.solve()? {
            LpOutcome::Optimal { x, .. } => {
                let residual = self.check_witness(&x);
                if residual > FEASIBILITY_TOLERANCE {
                    return Err(Error::Lp(format!("witness residual {residual:e} exceeds tolerance")));
                }
                let table = x[..self.q_vars]
                    .chunks(8)
                    .map(|c| c.iter().map(|p| p.max(0.0)).collect())
                    .collect();
                let witness = Behavior::from_parts_unchecked(self.settings_per_party.clone(), table)?;
                Ok(LocalPartsOutcome::Feasible {
                    strategy_weights: x[self.q_vars..].to_vec(),
                    witness,
                    residual,
                })
            }
            LpOutcome::Infeasible { farkas } => {
                let scale = farkas.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if scale == 0.0 {
                    return Err(Error::Lp("empty infeasibility certificate".into()));
                }
                let y: Vec<f64> = farkas.iter().map(|v| v / scale).collect();
                let margin = self.check_certificate(&y);
                if margin <= FEASIBILITY_TOLERANCE {
                    return Err(Error::Lp(format!(
                        "certificate margin {margin:e} does not exceed tolerance"
                    )));
                }
                let inequality = self.render_certificate(&y);
                Ok(LocalPartsOutcome::Infeasible {
                    certificate: Certificate { y, margin, inequality },
                })
            }
            LpOutcome::Unbounded => Err(Error::Lp("feasibility program reported unbounded".into())),
        }
    }

    fn render_certificate(&self, y: &[f64]) -> String {
        let mut terms: Vec<(usize, f64)> = y
            .iter()
            .enumerate()
            .filter(|(r, v)| v.abs() > 1e-9 && self.lp.constraints[*r].rhs != 0.0)
            .map(|(r, v)| (r, *v))
            .collect();
        terms.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
        let shown = 24.min(terms.len());
        let mut s = String::new();
        for (k, &(r, v)) in terms[..shown].iter().enumerate() {
            let sign = if v < 0.0 {
                "-"
            } else if k == 0 {
                ""
            } else {
                "+"
            };
            if k > 0 {
                s.push(' ');
            }
            s.push_str(&format!("{sign}{:.4}·{}", v.abs(), self.rows[r]));
        }
        if terms.len() > shown {
            s.push_str(&format!(" ... ({} more terms)", terms.len() - shown));
        }
        let yt_b: f64 = y.iter().zip(&self.lp.constraints).map(|(v, c)| v * c.rhs).sum();
        let bound = yt_b - self.check_certificate(y);
        format!("{s} <= {bound:.6} for every local-parts model; the target gives {yt_b:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// Farkas multipliers, one per constraint row, scaled to max |y| = 1.
    pub y: Vec<f64>,
    /// Re-checked contradiction margin.
    pub margin: f64,
    pub inequality: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalPartsOutcome {
    Feasible {
        witness: Behavior,
        strategy_weights: Vec<f64>,
        residual: f64,
    },
    Infeasible {
        certificate: Certificate,
    },
}

impl LocalPartsOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, LocalPartsOutcome::Feasible { .. })
    }
}

pub fn localparts_feasible(target: &Behavior, off_pair: (usize, usize)) -> Result<LocalPartsOutcome> {
    FeasibilityProblem::new(target, off_pair)?.solve()
}

/// Largest t ≤ [`VISIBILITY_CAP`] for which the target's ON-pair marginals,
/// mixed with white noise as t·P + (1 − t)/4, admit a local-parts model.
/// The program is feasible exactly when this is ≥ 1.
pub fn localparts_visibility(target: &Behavior, off_pair: (usize, usize)) -> Result<f64> {
    let problem = FeasibilityProblem::visibility(target, off_pair)?;
    match problem.lp.solve()? {
        LpOutcome::Optimal { value, .. } => Ok(value),
        other => Err(Error::Lp(format!("visibility program ended {other:?}"))),
    }
}

/// Signaling distance of the {B, C} marginal in the constructive model where
/// only `off_pair` loses coordination.
pub fn constructive_signaling(target: &Behavior, off_pair: (usize, usize)) -> Result<f64> {
    let (i, j) = (off_pair.0.min(off_pair.1), off_pair.0.max(off_pair.1));
    let map = CoordinationMap {
        parties: 3,
        pairs: [(0, 1), (0, 2), (1, 2)]
            .into_iter()
            .map(|p| {
                (
                    p,
                    if p == (i, j) {
                        Coordination::Off
                    } else {
                        Coordination::On
                    },
                )
            })
            .collect(),
    };
    let model = apply_coordination(&map, target)?;
    signaling_distance(&model, &[i, j])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    /// Grid points per party for the second setting angle, kπ/grid, k = 1..=grid.
    pub grid: usize,
    /// Step-halving rounds of the local refinement.
    pub refine_rounds: usize,
    /// Grid used for each member of the widened state family.
    pub widened_grid: usize,
    /// Weights α of cos α|000⟩ + sin α|111⟩ tried when GHZ yields nothing.
    pub alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: 16,
            refine_rounds: 6,
            widened_grid: 8,
            alphas: (1..8).map(|k| k as f64 * PI / 32.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub state: String,
    pub alpha: Option<f64>,
    /// Chosen angles, two per party (the first is always 0).
    pub angles: Vec<Vec<f64>>,
    pub visibility: f64,
    pub constructive_signaling: f64,
    pub cells_evaluated: usize,
    pub outcome: LocalPartsOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub off_pair: [usize; 2],
    pub ghz: SweepResult,
    /// Filled only when GHZ gave no infeasible instance.
    pub widened: Vec<SweepResult>,
    pub found_infeasible: bool,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    index: usize,
    second: [f64; 3],
    visibility: f64,
    signaling: f64,
}

fn angles_of(second: [f64; 3]) -> Vec<Vec<f64>> {
    second.iter().map(|&t| vec![0.0, t]).collect()
}

fn evaluate(state: &StateVector, off_pair: (usize, usize), index: usize, second: [f64; 3]) -> Result<Cell> {
    let target = born_behavior(state, &angles_of(second))?;
    Ok(Cell {
        index,
        second,
        visibility: localparts_visibility(&target, off_pair)?,
        signaling: constructive_signaling(&target, off_pair)?,
    })
}

/// Lower visibility wins; within 1e-9, larger constructive signaling; then
/// grid order.
fn better(a: &Cell, b: &Cell) -> bool {
    if (a.visibility - b.visibility).abs() > 1e-9 {
        return a.visibility < b.visibility;
    }
    if (a.signaling - b.signaling).abs() > 1e-12 {
        return a.signaling > b.signaling;
    }
    a.index < b.index
}

/// Grid search over second-setting angles, then coordinate refinement around
/// the best cell, then the exact program at the chosen point.
pub fn sweep_state(
    state: &StateVector,
    label: &str,
    alpha: Option<f64>,
    off_pair: (usize, usize),
    grid: usize,
    refine_rounds: usize,
) -> Result<SweepResult> {
    if state.qubits() != 3 || grid == 0 {
        return Err(Error::InvalidArgument(
            "sweep needs a 3-qubit state and a non-empty grid".into(),
        ));
    }
    let step = PI / grid as f64;
    let cells: Vec<Cell> = (0..grid * grid * grid)
        .into_par_iter()
        .map(|idx| {
            let k = [idx / (grid * grid), (idx / grid) % grid, idx % grid];
            evaluate(state, off_pair, idx, k.map(|k| (k + 1) as f64 * step))
        })
        .collect::<Result<_>>()?;
    let mut best = cells[0];
    for c in &cells[1..] {
        if better(c, &best) {
            best = *c;
        }
    }
    let mut evaluated = cells.len();

    let mut delta = step / 2.0;
    for _ in 0..refine_rounds {
        let mut improved = true;
        while improved {
            improved = false;
            for p in 0..3 {
                for dir in [-1.0, 1.0] {
                    let mut second = best.second;
                    second[p] += dir * delta;
                    let cand = evaluate(state, off_pair, usize::MAX, second)?;
                    evaluated += 1;
                    if cand.visibility < best.visibility - 1e-9 {
                        best = cand;
                        improved = true;
                    }
                }
            }
        }
        delta /= 2.0;
    }

    let angles = angles_of(best.second);
    let target = born_behavior(state, &angles)?;
    Ok(SweepResult {
        state: label.to_string(),
        alpha,
        angles,
        visibility: best.visibility,
        constructive_signaling: best.signaling,
        cells_evaluated: evaluated,
        outcome: localparts_feasible(&target, off_pair)?,
    })
}

/// GHZ sweep, widened to the weighted-GHZ family if no infeasible instance
/// turns up. Whatever is found is reported as is.
pub fn search_infeasible(off_pair: (usize, usize), config: &SweepConfig) -> Result<SearchReport> {
    let ghz = sweep_state(&make_ghz3(), "ghz3", None, off_pair, config.grid, config.refine_rounds)?;
    let mut found = !ghz.outcome.is_feasible();
    let mut widened = Vec::new();
    if !found {
        for &alpha in &config.alphas {
            let r = sweep_state(
                &make_weighted_ghz3(alpha),
                "weighted_ghz3",
                Some(alpha),
                off_pair,
                config.widened_grid,
                config.refine_rounds,
            )?;
            found |= !r.outcome.is_feasible();
            widened.push(r);
            if found {
                break;
            }
        }
    }
    Ok(SearchReport {
        off_pair: [off_pair.0.min(off_pair.1), off_pair.0.max(off_pair.1)],
        ghz,
        widened,
        found_infeasible: found,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FtlReport {
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Behavior>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
    /// Constructive OFF model, joint marginal of the OFF pair.
    pub signaling_distance: f64,
    /// Same model, each OFF-pair party on its own.
    pub single_receiver_distances: [f64; 2],
    pub settings: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<Vec<f64>>>,
    /// Per-use total-variation bias of the binary channel.
    pub bias: f64,
    pub channel: bool,
    /// Time by which D precedes a light signal from A, in the metric's units.
    pub advantage_seconds: f64,
    pub point_d: Event,
    pub statement: String,
}

/// Compose the local-parts program, the constructive OFF model and the point-D
/// geometry (`events` in party order) into a report.
pub fn ftl_protocol_report(
    target: &Behavior,
    off_pair: (usize, usize),
    events: [Event; 3],
    metric: &Metric,
    angles: Option<Vec<Vec<f64>>>,
) -> Result<FtlReport> {
    let (i, j) = (off_pair.0.min(off_pair.1), off_pair.0.max(off_pair.1));
    if i == j || j > 2 {
        return Err(Error::InvalidSubset(format!("off pair {off_pair:?}")));
    }
    let hub = 3 - i - j;
    let d = metric
        .find_point_d(&events[hub], &events[i], &events[j])
        .ok_or(Error::NoPointD)?;
    let outcome = localparts_feasible(target, (i, j))?;
    let map = CoordinationMap {
        parties: 3,
        pairs: [(0, 1), (0, 2), (1, 2)]
            .into_iter()
            .map(|p| {
                (
                    p,
                    if p == (i, j) {
                        Coordination::Off
                    } else {
                        Coordination::On
                    },
                )
            })
            .collect(),
    };
    let model = apply_coordination(&map, target)?;
    let distance = signaling_distance(&model, &[i, j])?;
    let single = [signaling_distance(&model, &[i])?, signaling_distance(&model, &[j])?];
    let channel = distance > 1e-12;
    let names = (PARTY_NAMES[hub], PARTY_NAMES[i], PARTY_NAMES[j]);
    let statement = if channel {
        format!(
            "{0}'s setting shifts the joint {1}{2} marginal by total variation {3:.6} (bias {4:.6} per use). \
             Pooling outcomes at D gets the message {5:.6e} time units ahead of light from {0}. \
             Neither {1} nor {2} alone receives it: single-party shifts {6:.1e} and {7:.1e}.",
            names.0,
            names.1,
            names.2,
            distance,
            distance / 2.0,
            d.advantage,
            single[0],
            single[1]
        )
    } else {
        format!(
            "no channel: the joint {}{} marginal does not depend on {}'s setting",
            names.1, names.2, names.0
        )
    };
    let (feasible, witness, certificate) = match outcome {
        LocalPartsOutcome::Feasible { witness, .. } => (true, Some(witness), None),
        LocalPartsOutcome::Infeasible { certificate } => (false, None, Some(certificate)),
    };
    Ok(FtlReport {
        feasible,
        witness,
        certificate,
        signaling_distance: distance,
        single_receiver_distances: single,
        settings: target.settings_per_party().to_vec(),
        angles,
        bias: distance / 2.0,
        channel,
        advantage_seconds: d.advantage,
        point_d: d.event,
        statement,
    })
}

/// Tripartite box with a uniform, b = a ⊕ xy, c = a ⊕ xz: both A-pairs are
/// PR-type, which no local-parts model can match. Used to exercise the
/// infeasible branch.
pub fn pr_fan_box() -> Behavior {
    let mut table = vec![vec![0.0; 8]; 8];
    for (t, row) in table.iter_mut().enumerate() {
        let (x, y, z) = (t >> 2, (t >> 1) & 1, t & 1);
        for a in 0..2 {
            let b = a ^ (x & y);
            let c = a ^ (x & z);
            row[a << 2 | b << 1 | c] = 0.5;
        }
    }
    Behavior::new(vec![2, 2, 2], table).expect("valid box")
}

/// Bipartite PR box: uniform marginals, a ⊕ b = x·y.
pub fn pr_box() -> Behavior {
    let table = (0..4)
        .map(|t| {
            let xy = (t >> 1) & t & 1;
            (0..4)
                .map(|o| if ((o >> 1) ^ (o & 1)) == xy { 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    Behavior::new(vec![2, 2], table).expect("valid box")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inequality::{chsh_optimum, chsh_value};
    use crate::quantum::make_singlet;

    #[test]
    fn product_has_zero_distance_and_is_local() {
        let exact = Behavior::product(&[vec![0.25, 0.875], vec![0.5, 0.125, 0.75]]).unwrap();
        assert_eq!(signaling_distance(&exact, &[0]).unwrap(), 0.0);
        assert_eq!(signaling_distance(&exact, &[1]).unwrap(), 0.0);
        let b = Behavior::product(&[vec![0.3, 0.9], vec![0.6, 0.1, 0.5]]).unwrap();
        assert!(signaling_distance(&b, &[0]).unwrap() < 1e-15);
        match local_polytope_member(&b).unwrap() {
            PolytopeMembership::Local { residual, .. } => assert!(residual <= 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pr_box_rejected_with_margin_two() {
        let b = pr_box();
        assert!((chsh_value(&b, 0, 1, 0, 1).unwrap() - 4.0).abs() < 1e-12);
        match local_polytope_member(&b).unwrap() {
            PolytopeMembership::Nonlocal { inequality } => {
                assert!(inequality.margin >= 2.0 - 1e-9, "{}", inequality.margin);
                assert!(inequality.coeffs.iter().flatten().all(|c| c.abs() <= 1.0 + 1e-9));
                assert!(inequality.to_string().contains("<="));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn singlet_chsh_optimum_rejected() {
        let opt = chsh_optimum();
        let b = born_behavior(&make_singlet(), &[opt.alice.clone(), opt.bob.clone()]).unwrap();
        assert!(!local_polytope_member(&b).unwrap().is_local());
    }

    #[test]
    fn too_many_settings() {
        let b = Behavior::product(&[vec![0.5; 5], vec![0.5]]).unwrap();
        assert!(matches!(local_polytope_member(&b), Err(Error::TooLarge(_))));
    }

    #[test]
    fn product_target_is_its_own_witness() {
        let b = Behavior::product(&[vec![0.2, 0.7], vec![0.5, 0.4], vec![0.9, 0.3]]).unwrap();
        match localparts_feasible(&b, (1, 2)).unwrap() {
            LocalPartsOutcome::Feasible { residual, witness, .. } => {
                assert!(residual <= 1e-9);
                assert_eq!(witness.settings_per_party(), &[2, 2, 2]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pr_fan_box_is_infeasible_with_certificate() {
        let problem = FeasibilityProblem::new(&pr_fan_box(), (1, 2)).unwrap();
        match problem.solve().unwrap() {
            LocalPartsOutcome::Infeasible { certificate } => {
                assert!(certificate.margin > 1e-9);
                assert!((problem.check_certificate(&certificate.y) - certificate.margin).abs() < 1e-12);
                assert!(certificate.inequality.contains("local-parts"));
            }
            other => panic!("{other:?}"),
        }
        assert!(constructive_signaling(&pr_fan_box(), (1, 2)).unwrap() > 0.4);
        assert!(localparts_visibility(&pr_fan_box(), (1, 2)).unwrap() < 1.0);
    }

    #[test]
    fn ghz_target_feasible_and_visibility_at_least_one() {
        let b = born_behavior(&make_ghz3(), &[vec![0.0, 1.1], vec![0.0, 0.7], vec![0.0, 2.3]]).unwrap();
        assert!(localparts_feasible(&b, (1, 2)).unwrap().is_feasible());
        assert!(localparts_visibility(&b, (1, 2)).unwrap() >= 1.0 - 1e-9);
        assert!(constructive_signaling(&b, (1, 2)).unwrap() > 0.0);
        assert!(signaling_distance(&b, &[1, 2]).unwrap() < 1e-12);
    }

    #[test]
    fn size_limits() {
        let b = Behavior::product(&[vec![0.5; 4], vec![0.5], vec![0.5]]).unwrap();
        assert!(matches!(localparts_feasible(&b, (1, 2)), Err(Error::TooLarge(_))));
        let b = Behavior::product(&[vec![0.5], vec![0.5], vec![0.5]]).unwrap();
        assert!(localparts_feasible(&b, (1, 1)).is_err());
    }

    #[test]
    fn report_collinear_advantage() {
        let metric = Metric::natural();
        let events = [
            Event { t: 0.0, x: 0.0, y: 0.0 },
            Event {
                t: 0.0,
                x: 10.0,
                y: 0.0,
            },
            Event {
                t: 0.0,
                x: 20.0,
                y: 0.0,
            },
        ];
        let target = born_behavior(&make_ghz3(), &[vec![0.0, 1.1], vec![0.0, 0.7], vec![0.0, 2.3]]).unwrap();
        let r = ftl_protocol_report(&target, (1, 2), events, &metric, None).unwrap();
        assert_eq!(r.advantage_seconds, 10.0);
        assert!(r.channel);
        assert!((r.bias - r.signaling_distance / 2.0).abs() < 1e-15);
        assert!(r.single_receiver_distances.iter().all(|d| *d < 1e-12));

        let quiet = Behavior::product(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let r = ftl_protocol_report(&quiet, (1, 2), events, &metric, None).unwrap();
        assert!(!r.channel);
        assert!(r.statement.starts_with("no channel"));

        let mid = [events[1], events[0], events[2]];
        assert!(matches!(
            ftl_protocol_report(&target, (1, 2), mid, &metric, None),
            Err(Error::NoPointD)
        ));
    }
}
