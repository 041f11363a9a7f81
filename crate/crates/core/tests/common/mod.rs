#![allow(dead_code)]

use std::path::PathBuf;

use fairaudit::config::AuditConfig;
use fairaudit::dataset::{Dataset, Header};
use fairaudit::dsl::{CmpOp, Literal, Operand, PredicateExpr};
use fairaudit::measures::MeasureId;
use rand::Rng;

pub fn compas_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/compas-scores-two-years.csv")
}

pub fn stub_path() -> &'static str {
    env!("CARGO_BIN_EXE_fairaudit-stub-predictor")
}

pub fn cli_path() -> &'static str {
    env!("CARGO_BIN_EXE_fairaudit")
}

/// The COMPAS audit setup, with ground truth read from `truth_column`.
pub fn compas_config(truth_column: &str) -> AuditConfig {
    AuditConfig {
        dataset: Some(compas_path()),
        epsilon: 0.2,
        privileged: Some(r#"col("race") != "African-American""#.into()),
        positive: Some(r#"col("score_text") in {"Medium", "High"}"#.into()),
        truth: Some(format!(r#"col("{truth_column}") == "1""#)),
        score: Some(r#"int(col("decile_score"))"#.into()),
        legitimate: Some(r#"int(col("priors_count")) > $1"#.into()),
        legitimate_args: vec![Literal::Int(0)],
        calibration: Some(
            r#"int(col("decile_score")) >= $1 and int(col("decile_score")) <= $2"#.into(),
        ),
        calibration_args: vec![Literal::Int(5), Literal::Int(7)],
        ..AuditConfig::default()
    }
}

/// One row of a small synthetic audit dataset.
#[derive(Debug, Clone, Copy)]
pub struct Synth {
    pub g: bool,
    pub p: bool,
    pub y: bool,
    pub v: i64,
    pub l: bool,
}

fn bit(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

pub fn random_synth<R: Rng>(rng: &mut R, max_rows: usize) -> Vec<Synth> {
    let n = rng.random_range(0..=max_rows);
    (0..n)
        .map(|_| Synth {
            g: rng.random_bool(0.5),
            p: rng.random_bool(0.5),
            y: rng.random_bool(0.5),
            v: rng.random_range(1..=10),
            l: rng.random_bool(0.5),
        })
        .collect()
}

pub fn synth_dataset(rows: &[Synth]) -> Dataset {
    let header = Header::new(["g", "p", "y", "v", "l"]).unwrap();
    let records = rows
        .iter()
        .map(|r| vec![bit(r.g), bit(r.p), bit(r.y), r.v.to_string(), bit(r.l)])
        .collect();
    Dataset::new(header, records).unwrap()
}

/// Calibration window used with synthetic data.
pub const CAL_LOW: i64 = 3;
pub const CAL_HIGH: i64 = 7;

pub fn synth_config() -> AuditConfig {
    AuditConfig {
        privileged: Some(r#"col("g") == "1""#.into()),
        positive: Some(r#"col("p") == "1""#.into()),
        truth: Some(r#"col("y") == "1""#.into()),
        score: Some(r#"int(col("v"))"#.into()),
        legitimate: Some(r#"col("l") == $1"#.into()),
        legitimate_args: vec![Literal::Str("1".into())],
        calibration: Some(r#"int(col("v")) >= $1 and int(col("v")) <= $2"#.into()),
        calibration_args: vec![Literal::Int(CAL_LOW), Literal::Int(CAL_HIGH)],
        measures: Some(MeasureId::ALL.to_vec()),
        ..AuditConfig::default()
    }
}

/// Brute-force recount of one measure straight from the synthetic rows:
/// the named lines and, given the thresholds, the verdict (`None` = UNDEF).
pub struct Recount {
    pub lines: Vec<(&'static str, Option<f64>)>,
    pub passed: Option<bool>,
}

pub fn recount(
    id: MeasureId,
    rows: &[Synth],
    privileged: impl Fn(&Synth) -> bool,
    epsilon: f64,
    balance_threshold: Option<f64>,
) -> Recount {
    let rate = |in_group: bool, cond: &dyn Fn(&Synth) -> bool, event: &dyn Fn(&Synth) -> bool| {
        let mut total = 0u64;
        let mut hits = 0u64;
        for r in rows {
            if privileged(r) == in_group && cond(r) {
                total += 1;
                if event(r) {
                    hits += 1;
                }
            }
        }
        if total == 0 {
            None
        } else {
            Some(hits as f64 / total as f64)
        }
    };
    let mean = |in_group: bool, cond: &dyn Fn(&Synth) -> bool| {
        let mut total = 0u64;
        let mut sum = 0.0;
        for r in rows {
            if privileged(r) == in_group && cond(r) {
                total += 1;
                sum += r.v as f64;
            }
        }
        if total == 0 {
            None
        } else {
            Some(sum / total as f64)
        }
    };
    let gap = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    let diff = |cond: &dyn Fn(&Synth) -> bool, event: &dyn Fn(&Synth) -> bool| {
        gap(rate(true, cond, event), rate(false, cond, event))
    };
    let all = |_: &Synth| true;
    let pos = |r: &Synth| r.p;
    let neg = |r: &Synth| !r.p;
    let yes = |r: &Synth| r.y;
    let no = |r: &Synth| !r.y;

    let lines: Vec<(&'static str, Option<f64>)> = match id {
        MeasureId::DisparateImpact => {
            let ratio = match (rate(false, &all, &pos), rate(true, &all, &pos)) {
                (Some(u), Some(p)) if p != 0.0 => Some(u / p),
                _ => None,
            };
            vec![("ratio", ratio)]
        }
        MeasureId::DemographicParity | MeasureId::MeanDifference => {
            vec![("difference", diff(&all, &pos))]
        }
        MeasureId::ConditionalStatisticalParity => vec![("difference", diff(&|r| r.l, &pos))],
        MeasureId::OverallAccuracyEquality => vec![("difference", diff(&all, &|r| r.p == r.y))],
        MeasureId::EqualizedOdds => vec![
            ("true_positive", diff(&yes, &pos)),
            ("false_positive", diff(&no, &pos)),
        ],
        MeasureId::EqualOpportunity => vec![("true_positive", diff(&yes, &pos))],
        MeasureId::PredictiveEquality => vec![("false_positive", diff(&no, &pos))],
        MeasureId::ConditionalUseAccuracyEquality => {
            vec![("ppv", diff(&pos, &yes)), ("npv", diff(&neg, &no))]
        }
        MeasureId::PredictiveParity => vec![("ppv", diff(&pos, &yes))],
        MeasureId::EqualCalibration => vec![(
            "difference",
            diff(&|r| r.v >= CAL_LOW && r.v <= CAL_HIGH, &yes),
        )],
        MeasureId::PositiveBalance => {
            vec![("difference", gap(mean(true, &yes), mean(false, &yes)))]
        }
        MeasureId::NegativeBalance => vec![("difference", gap(mean(true, &no), mean(false, &no)))],
    };

    let threshold = if id.is_balance() {
        balance_threshold
    } else {
        Some(epsilon)
    };
    let passed = match threshold {
        Some(t) if lines.iter().all(|(_, v)| v.is_some()) => Some(lines.iter().all(|(_, v)| {
            let v = v.unwrap();
            if id == MeasureId::DisparateImpact {
                v >= 1.0 - t
            } else {
                v <= t
            }
        })),
        _ => None,
    };
    Recount { lines, passed }
}

const NAME_POOL: &[&str] = &[
    "a",
    "b",
    "c",
    "two words",
    "quo\"te",
    "back\\slash",
    "tab\there",
    "é",
];
const STR_POOL: &[char] = &[
    'a', 'Z', ' ', '"', '\\', '\n', '\t', '\r', 'é', '€', '\u{1}', '{', '$',
];

fn random_string<R: Rng>(rng: &mut R) -> String {
    let len = rng.random_range(0..6);
    (0..len)
        .map(|_| STR_POOL[rng.random_range(0..STR_POOL.len())])
        .collect()
}

fn random_real<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(-10.0..10.0),
        1 => f64::from(rng.random_range(-100i32..100)) / 4.0,
        2 => {
            let x = f64::from_bits(rng.random::<u64>());
            if x.is_finite() {
                x
            } else {
                1e300
            }
        }
        _ => [0.0, -0.0, 0.1, 1e-300, f64::MAX, f64::MIN_POSITIVE][rng.random_range(0..6)],
    }
}

pub fn random_literal<R: Rng>(rng: &mut R, numeric: Option<bool>) -> Literal {
    let numeric = numeric.unwrap_or_else(|| rng.random_bool(0.6));
    if !numeric {
        return Literal::Str(random_string(rng));
    }
    if rng.random_bool(0.5) {
        match rng.random_range(0..3) {
            0 => Literal::Int(rng.random_range(-20..20)),
            1 => Literal::Int(rng.random()),
            _ => Literal::Int([i64::MIN, i64::MAX, 0][rng.random_range(0..3)]),
        }
    } else {
        Literal::Real(random_real(rng))
    }
}

fn random_operand<R: Rng>(rng: &mut R, names: &[&str], max_param: usize) -> Operand {
    let name = names[rng.random_range(0..names.len())].to_string();
    match rng.random_range(0..6) {
        0 | 1 => Operand::Column(name),
        2 => Operand::IntOf(name),
        3 => Operand::RealOf(name),
        4 if max_param > 0 => Operand::Param(rng.random_range(1..=max_param)),
        _ => Operand::Literal(random_literal(rng, None)),
    }
}

const OPS: [CmpOp; 6] = [
    CmpOp::Eq,
    CmpOp::Ne,
    CmpOp::Lt,
    CmpOp::Le,
    CmpOp::Gt,
    CmpOp::Ge,
];

fn random_atom<R: Rng>(rng: &mut R, names: &[&str], max_param: usize) -> PredicateExpr {
    if rng.random_bool(0.25) {
        let numeric = rng.random_bool(0.5);
        let n = rng.random_range(1..4);
        PredicateExpr::Member {
            operand: random_operand(rng, names, max_param),
            set: (0..n).map(|_| random_literal(rng, Some(numeric))).collect(),
        }
    } else {
        PredicateExpr::Compare {
            left: random_operand(rng, names, max_param),
            op: OPS[rng.random_range(0..OPS.len())],
            right: random_operand(rng, names, max_param),
        }
    }
}

/// A random predicate over `names`, using `$1..=$max_param`.
pub fn random_predicate_over<R: Rng>(
    rng: &mut R,
    depth: u32,
    names: &[&str],
    max_param: usize,
) -> PredicateExpr {
    if depth == 0 || rng.random_bool(0.25) {
        return random_atom(rng, names, max_param);
    }
    let sub = |rng: &mut R| Box::new(random_predicate_over(rng, depth - 1, names, max_param));
    match rng.random_range(0..3) {
        0 => PredicateExpr::Or(sub(rng), sub(rng)),
        1 => PredicateExpr::And(sub(rng), sub(rng)),
        _ => PredicateExpr::Not(sub(rng)),
    }
}

pub fn random_predicate<R: Rng>(rng: &mut R, depth: u32) -> PredicateExpr {
    random_predicate_over(rng, depth, NAME_POOL, 3)
}

/// Column names and cell values for evaluation tests.
pub const EVAL_COLUMNS: &[&str] = &["a", "b", "c"];
const CELL_POOL: &[&str] = &["1", "2", "-3", "x", "2.5", " 4 ", "", "1e3", "Medium"];

pub fn random_eval_row<R: Rng>(rng: &mut R) -> fairaudit::dataset::Row {
    fairaudit::dataset::Row::from_pairs(
        EVAL_COLUMNS
            .iter()
            .map(|c| (*c, CELL_POOL[rng.random_range(0..CELL_POOL.len())])),
    )
    .unwrap()
}

pub fn eval_args() -> Vec<Literal> {
    vec![
        Literal::Int(2),
        Literal::Str("x".into()),
        Literal::Real(2.5),
    ]
}
