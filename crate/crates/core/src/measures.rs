//! Empirical probabilities over a dataset and the group fairness measures
//! built from them.
//!
//! Every measure compares a privileged group (S=1, rows where the
//! privileged predicate holds) against the rest (S≠1). Ŷ=1 iff the positive
//! predicate holds, Y=1 iff the truth predicate holds, and V̂ is the score.
//! Counts are exact integers; each probability is `hits / total` in `f64`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Row};
use crate::dsl::{BoundPredicate, EvalError, ScoreExpr};

/// Boolean test on a row. `index` is the row's position in the dataset,
/// which lets a test read per-row side data such as model predictions.
pub trait RowTest: Sync {
    fn test(&self, index: usize, row: &Row) -> Result<bool, EvalError>;
}

/// Real-valued score of a row.
pub trait RowScore: Sync {
    fn score(&self, index: usize, row: &Row) -> Result<f64, EvalError>;
}

impl RowTest for BoundPredicate {
    fn test(&self, _index: usize, row: &Row) -> Result<bool, EvalError> {
        self.eval(row)
    }
}

impl RowScore for ScoreExpr {
    fn score(&self, _index: usize, row: &Row) -> Result<f64, EvalError> {
        self.eval(row)
    }
}

impl<F> RowTest for F
where
    F: Fn(usize, &Row) -> Result<bool, EvalError> + Sync,
{
    fn test(&self, index: usize, row: &Row) -> Result<bool, EvalError> {
        self(index, row)
    }
}

/// 1.0 where the wrapped test holds, else 0.0.
pub struct Indicator<'a>(pub &'a dyn RowTest);

impl RowScore for Indicator<'_> {
    fn score(&self, index: usize, row: &Row) -> Result<f64, EvalError> {
        Ok(if self.0.test(index, row)? { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("conditioning set is empty")]
    EmptyCondition,
    #[error("row {index}: {source}")]
    Eval {
        index: usize,
        #[source]
        source: EvalError,
    },
}

/// Event and condition counts behind one conditional probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub hits: u64,
    pub total: u64,
}

impl Tally {
    pub fn ratio(self) -> Result<f64, ProbError> {
        if self.total == 0 {
            Err(ProbError::EmptyCondition)
        } else {
            Ok(self.hits as f64 / self.total as f64)
        }
    }
}

/// Counts rows satisfying `given`, and among them those satisfying `event`.
/// `event` is only evaluated on rows where `given` holds.
pub fn tally(d: &Dataset, event: &dyn RowTest, given: &dyn RowTest) -> Result<Tally, ProbError> {
    let mut t = Tally { hits: 0, total: 0 };
    for (index, row) in d.rows().iter().enumerate() {
        let wrap = |source| ProbError::Eval { index, source };
        if given.test(index, row).map_err(wrap)? {
            t.total += 1;
            if event.test(index, row).map_err(wrap)? {
                t.hits += 1;
            }
        }
    }
    Ok(t)
}

/// P[event | given] as an empirical frequency over `d`.
pub fn cond_prob(d: &Dataset, event: &dyn RowTest, given: &dyn RowTest) -> Result<f64, ProbError> {
    tally(d, event, given)?.ratio()
}

/// E[score | given]: the arithmetic mean of `score` over rows where `given` holds.
pub fn cond_expect(
    d: &Dataset,
    score: &dyn RowScore,
    given: &dyn RowTest,
) -> Result<f64, ProbError> {
    let (sum, count) = sum_over(d, score, given)?;
    if count == 0 {
        Err(ProbError::EmptyCondition)
    } else {
        Ok(sum / count as f64)
    }
}

fn sum_over(
    d: &Dataset,
    score: &dyn RowScore,
    given: &dyn RowTest,
) -> Result<(f64, u64), ProbError> {
    let mut sum = 0.0;
    let mut count = 0u64;
    for (index, row) in d.rows().iter().enumerate() {
        let wrap = |source| ProbError::Eval { index, source };
        if given.test(index, row).map_err(wrap)? {
            sum += score.score(index, row).map_err(wrap)?;
            count += 1;
        }
    }
    Ok((sum, count))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureId {
    DisparateImpact,
    DemographicParity,
    ConditionalStatisticalParity,
    OverallAccuracyEquality,
    MeanDifference,
    EqualizedOdds,
    EqualOpportunity,
    PredictiveEquality,
    ConditionalUseAccuracyEquality,
    PredictiveParity,
    EqualCalibration,
    PositiveBalance,
    NegativeBalance,
}

impl MeasureId {
    pub const ALL: [MeasureId; 13] = [
        MeasureId::DisparateImpact,
        MeasureId::DemographicParity,
        MeasureId::ConditionalStatisticalParity,
        MeasureId::OverallAccuracyEquality,
        MeasureId::MeanDifference,
        MeasureId::EqualizedOdds,
        MeasureId::EqualOpportunity,
        MeasureId::PredictiveEquality,
        MeasureId::ConditionalUseAccuracyEquality,
        MeasureId::PredictiveParity,
        MeasureId::EqualCalibration,
        MeasureId::PositiveBalance,
        MeasureId::NegativeBalance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureId::DisparateImpact => "disparate_impact",
            MeasureId::DemographicParity => "demographic_parity",
            MeasureId::ConditionalStatisticalParity => "conditional_statistical_parity",
            MeasureId::OverallAccuracyEquality => "overall_accuracy_equality",
            MeasureId::MeanDifference => "mean_difference",
            MeasureId::EqualizedOdds => "equalized_odds",
            MeasureId::EqualOpportunity => "equal_opportunity",
            MeasureId::PredictiveEquality => "predictive_equality",
            MeasureId::ConditionalUseAccuracyEquality => "conditional_use_accuracy_equality",
            MeasureId::PredictiveParity => "predictive_parity",
            MeasureId::EqualCalibration => "equal_calibration",
            MeasureId::PositiveBalance => "positive_balance",
            MeasureId::NegativeBalance => "negative_balance",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            MeasureId::DisparateImpact => "Disparate Impact",
            MeasureId::DemographicParity => "Demographic Parity",
            MeasureId::ConditionalStatisticalParity => "Conditional Statistical Parity",
            MeasureId::OverallAccuracyEquality => "Overall Accuracy Equality",
            MeasureId::MeanDifference => "Mean Difference",
            MeasureId::EqualizedOdds => "Equalized Odds",
            MeasureId::EqualOpportunity => "Equal Opportunity",
            MeasureId::PredictiveEquality => "Predictive Equality",
            MeasureId::ConditionalUseAccuracyEquality => "Conditional Use Accuracy Equality",
            MeasureId::PredictiveParity => "Predictive Parity",
            MeasureId::EqualCalibration => "Equal Calibration",
            MeasureId::PositiveBalance => "Positive Balance",
            MeasureId::NegativeBalance => "Negative Balance",
        }
    }

    pub fn needs_legitimate(self) -> bool {
        self == MeasureId::ConditionalStatisticalParity
    }

    pub fn needs_calibration(self) -> bool {
        self == MeasureId::EqualCalibration
    }

    pub fn needs_score(self) -> bool {
        matches!(
            self,
            MeasureId::PositiveBalance | MeasureId::NegativeBalance
        )
    }

    /// Balances compare mean scores, not probabilities; they get a threshold
    /// only when one is set for them explicitly.
    pub fn is_balance(self) -> bool {
        self.needs_score()
    }
}

impl fmt::Display for MeasureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown measure {0:?}")]
pub struct UnknownMeasure(pub String);

impl FromStr for MeasureId {
    type Err = UnknownMeasure;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().replace([' ', '-'], "_").to_ascii_lowercase();
        MeasureId::ALL
            .into_iter()
            .find(|m| m.name() == wanted)
            .ok_or_else(|| UnknownMeasure(s.to_string()))
    }
}

/// One named line of a measure. `value` is `None` when the line is
/// undefined (an empty conditioning subgroup, or a zero denominator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    pub name: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureResult {
    pub measure: MeasureId,
    pub values: Vec<MeasureValue>,
    /// Threshold the values were checked against; `None` when no threshold applies.
    pub epsilon: Option<f64>,
    /// `None` is the undefined verdict; `reason` says why.
    pub passed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub group_sizes: BTreeMap<String, u64>,
    #[serde(default)]
    pub notes: Vec<String>,
    /// Conditional use accuracy equality only: PPV line strictly below the NPV line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppv_below_npv: Option<bool>,
}

impl MeasureResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.values
            .iter()
            .find(|v| v.name == name)
            .and_then(|v| v.value)
    }

    /// The first line's value; most measures have exactly one.
    pub fn primary(&self) -> Option<f64> {
        self.values.first().and_then(|v| v.value)
    }

    pub fn verdict(&self) -> Verdict {
        match self.passed {
            Some(true) => Verdict::Pass,
            Some(false) => Verdict::Fail,
            None => Verdict::Undef,
        }
    }

    /// Result for a measure that could not be evaluated at all.
    pub fn undefined(measure: MeasureId, epsilon: Option<f64>, reason: impl Into<String>) -> Self {
        MeasureResult {
            measure,
            values: Vec::new(),
            epsilon,
            passed: None,
            reason: Some(reason.into()),
            group_sizes: BTreeMap::new(),
            notes: Vec::new(),
            ppv_below_npv: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Undef,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Undef => "UNDEF",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("{0} needs a legitimate-attribute predicate")]
    MissingLegitimate(MeasureId),
    #[error("{0} needs a calibration predicate")]
    MissingCalibration(MeasureId),
    #[error("{0} does not take an extra predicate")]
    UnexpectedExtra(MeasureId),
    #[error("{0} needs a score expression")]
    MissingScore(MeasureId),
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    Epsilon(f64),
    #[error("balance threshold must be positive and finite, got {0}")]
    BalanceThreshold(f64),
    #[error("{measure}: row {index}: {source}")]
    Eval {
        measure: MeasureId,
        index: usize,
        #[source]
        source: EvalError,
    },
}

pub const DISPARATE_IMPACT_NOTE: &str =
    "disparate impact assumes a positive prediction is an advantage; \
     when positive marks a disadvantage the ratio reads inverted, interpret with care";
pub const NPV_ALIAS_NOTE: &str = "the npv line is also labelled \"true negative\"";
pub const NO_THRESHOLD: &str = "no threshold set";

/// Everything a measure needs: the rows and the bound random variables.
#[derive(Clone, Copy)]
pub struct AuditContext<'a> {
    pub dataset: &'a Dataset,
    /// S=1 iff true.
    pub privileged: &'a dyn RowTest,
    /// Ŷ=1 iff true.
    pub positive: &'a dyn RowTest,
    /// Y=1 iff true.
    pub truth: &'a dyn RowTest,
    /// V̂, for the balance measures.
    pub score: Option<&'a dyn RowScore>,
    epsilon: f64,
    balance_epsilon: Option<f64>,
}

impl<'a> AuditContext<'a> {
    pub fn new(
        dataset: &'a Dataset,
        privileged: &'a dyn RowTest,
        positive: &'a dyn RowTest,
        truth: &'a dyn RowTest,
        epsilon: f64,
    ) -> Result<Self, MeasureError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(MeasureError::Epsilon(epsilon));
        }
        Ok(AuditContext {
            dataset,
            privileged,
            positive,
            truth,
            score: None,
            epsilon,
            balance_epsilon: None,
        })
    }

    pub fn with_score(mut self, score: &'a dyn RowScore) -> Self {
        self.score = Some(score);
        self
    }

    /// Threshold for the balance measures, which otherwise report UNDEF.
    pub fn with_balance_epsilon(mut self, threshold: f64) -> Result<Self, MeasureError> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(MeasureError::BalanceThreshold(threshold));
        }
        self.balance_epsilon = Some(threshold);
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self, MeasureError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(MeasureError::Epsilon(epsilon));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn balance_epsilon(&self) -> Option<f64> {
        self.balance_epsilon
    }
}

/// One conjunct of a condition: a test required to be true or false.
#[derive(Clone, Copy)]
struct Lit<'a> {
    test: &'a dyn RowTest,
    want: bool,
    label: &'static str,
}

/// Conjunction of literals.
struct Conj<'a>(Vec<Lit<'a>>);

impl RowTest for Conj<'_> {
    fn test(&self, index: usize, row: &Row) -> Result<bool, EvalError> {
        for lit in &self.0 {
            if lit.test.test(index, row)? != lit.want {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl Conj<'_> {
    fn label(&self) -> String {
        self.0.iter().map(|l| l.label).collect::<Vec<_>>().join(",")
    }
}

/// Y == Ŷ.
struct Accurate<'a> {
    positive: &'a dyn RowTest,
    truth: &'a dyn RowTest,
}

impl RowTest for Accurate<'_> {
    fn test(&self, index: usize, row: &Row) -> Result<bool, EvalError> {
        Ok(self.positive.test(index, row)? == self.truth.test(index, row)?)
    }
}

enum Event<'a> {
    Prob(&'a dyn RowTest),
    Mean(&'a dyn RowScore),
}

/// Accumulates group sizes and the first undefined subgroup while a
/// measure's lines are computed.
struct Work<'c, 'a> {
    ctx: &'c AuditContext<'a>,
    measure: MeasureId,
    group_sizes: BTreeMap<String, u64>,
    undefined: Option<String>,
}

impl<'a> Work<'_, 'a> {
    fn group(&self, privileged: bool, extra: &[Lit<'a>]) -> Conj<'a> {
        let mut lits = vec![Lit {
            test: self.ctx.privileged,
            want: privileged,
            label: if privileged { "S=1" } else { "S!=1" },
        }];
        lits.extend_from_slice(extra);
        Conj(lits)
    }

    /// Conditional probability or mean on one side of the comparison;
    /// `None` records the empty subgroup.
    fn side(&mut self, event: &Event<'_>, given: &Conj<'_>) -> Result<Option<f64>, MeasureError> {
        let label = given.label();
        let d = self.ctx.dataset;
        let outcome = match event {
            Event::Prob(e) => tally(d, *e, given).map(|t| (t.total, t.ratio().ok())),
            Event::Mean(s) => {
                sum_over(d, *s, given).map(|(sum, n)| (n, (n > 0).then(|| sum / n as f64)))
            }
        };
        let (total, value) = outcome.map_err(|e| self.eval_error(e))?;
        self.group_sizes.insert(label.clone(), total);
        if value.is_none() && self.undefined.is_none() {
            self.undefined = Some(format!("empty condition: no rows in subgroup {label}"));
        }
        Ok(value)
    }

    /// |privileged side − unprivileged side|.
    fn difference(
        &mut self,
        event: Event<'_>,
        extra: &[Lit<'a>],
    ) -> Result<Option<f64>, MeasureError> {
        let privileged = self.group(true, extra);
        let unprivileged = self.group(false, extra);
        let a = self.side(&event, &privileged)?;
        let b = self.side(&event, &unprivileged)?;
        Ok(match (a, b) {
            (Some(a), Some(b)) => Some((a - b).abs()),
            _ => None,
        })
    }

    fn eval_error(&self, e: ProbError) -> MeasureError {
        match e {
            ProbError::Eval { index, source } => MeasureError::Eval {
                measure: self.measure,
                index,
                source,
            },
            // tally never reports an empty condition
            ProbError::EmptyCondition => unreachable!(),
        }
    }
}

/// Computes one measure. `extra` is the bound legitimate predicate for
/// conditional statistical parity or the bound calibration predicate for
/// equal calibration, and must be absent otherwise.
pub fn evaluate_measure(
    id: MeasureId,
    ctx: &AuditContext<'_>,
    extra: Option<&dyn RowTest>,
) -> Result<MeasureResult, MeasureError> {
    match (
        id.needs_legitimate(),
        id.needs_calibration(),
        extra.is_some(),
    ) {
        (true, _, false) => return Err(MeasureError::MissingLegitimate(id)),
        (_, true, false) => return Err(MeasureError::MissingCalibration(id)),
        (false, false, true) => return Err(MeasureError::UnexpectedExtra(id)),
        _ => {}
    }
    if id.needs_score() && ctx.score.is_none() {
        return Err(MeasureError::MissingScore(id));
    }

    let mut w = Work {
        ctx,
        measure: id,
        group_sizes: BTreeMap::new(),
        undefined: None,
    };
    let y = |want: bool| Lit {
        test: ctx.truth,
        want,
        label: if want { "Y=1" } else { "Y=0" },
    };
    let yhat = |want: bool| Lit {
        test: ctx.positive,
        want,
        label: if want { "Yhat=1" } else { "Yhat=0" },
    };
    let positive = Event::Prob(ctx.positive);
    let truth = Event::Prob(ctx.truth);
    let negated_truth = |index: usize, row: &Row| ctx.truth.test(index, row).map(|t| !t);

    let mut notes = Vec::new();
    let mut ppv_below_npv = None;
    let mut epsilon = Some(ctx.epsilon);
    let mut zero_denominator = None;

    let values: Vec<(&str, Option<f64>)> = match id {
        MeasureId::DisparateImpact => {
            notes.push(DISPARATE_IMPACT_NOTE.to_string());
            let privileged = w.group(true, &[]);
            let unprivileged = w.group(false, &[]);
            let unpriv_rate = w.side(&positive, &unprivileged)?;
            let priv_rate = w.side(&positive, &privileged)?;
            let ratio = match (unpriv_rate, priv_rate) {
                (Some(_), Some(0.0)) => {
                    zero_denominator = Some("privileged selection rate is zero".to_string());
                    None
                }
                (Some(u), Some(p)) => Some(u / p),
                _ => None,
            };
            vec![("ratio", ratio)]
        }
        MeasureId::DemographicParity => vec![("difference", w.difference(positive, &[])?)],
        MeasureId::ConditionalStatisticalParity => {
            let l = Lit {
                test: extra.expect("checked above"),
                want: true,
                label: "L",
            };
            vec![("difference", w.difference(positive, &[l])?)]
        }
        MeasureId::OverallAccuracyEquality => {
            let accurate = Accurate {
                positive: ctx.positive,
                truth: ctx.truth,
            };
            vec![("difference", w.difference(Event::Prob(&accurate), &[])?)]
        }
        MeasureId::MeanDifference => {
            let indicator = Indicator(ctx.positive);
            vec![("difference", w.difference(Event::Mean(&indicator), &[])?)]
        }
        MeasureId::EqualizedOdds => {
            let tp = w.difference(Event::Prob(ctx.positive), &[y(true)])?;
            let fp = w.difference(Event::Prob(ctx.positive), &[y(false)])?;
            vec![("true_positive", tp), ("false_positive", fp)]
        }
        MeasureId::EqualOpportunity => {
            vec![("true_positive", w.difference(positive, &[y(true)])?)]
        }
        MeasureId::PredictiveEquality => {
            vec![("false_positive", w.difference(positive, &[y(false)])?)]
        }
        MeasureId::ConditionalUseAccuracyEquality => {
            let ppv = w.difference(Event::Prob(ctx.truth), &[yhat(true)])?;
            let npv = w.difference(Event::Prob(&negated_truth), &[yhat(false)])?;
            if let (Some(p), Some(n)) = (ppv, npv) {
                ppv_below_npv = Some(p < n);
            }
            notes.push(NPV_ALIAS_NOTE.to_string());
            vec![("ppv", ppv), ("npv", npv)]
        }
        MeasureId::PredictiveParity => vec![("ppv", w.difference(truth, &[yhat(true)])?)],
        MeasureId::EqualCalibration => {
            let c = Lit {
                test: extra.expect("checked above"),
                want: true,
                label: "C",
            };
            vec![("difference", w.difference(truth, &[c])?)]
        }
        MeasureId::PositiveBalance | MeasureId::NegativeBalance => {
            epsilon = ctx.balance_epsilon;
            let score = ctx.score.expect("checked above");
            let want = id == MeasureId::PositiveBalance;
            vec![("difference", w.difference(Event::Mean(score), &[y(want)])?)]
        }
    };

    let values: Vec<MeasureValue> = values
        .into_iter()
        .map(|(name, value)| MeasureValue {
            name: name.to_string(),
            value,
        })
        .collect();

    let reason = w.undefined.take().or(zero_denominator);
    let all_defined = values.iter().all(|v| v.value.is_some());
    let (passed, reason) = match (reason, epsilon) {
        (Some(r), _) => (None, Some(r)),
        (None, _) if !all_defined => (None, Some("undefined value".to_string())),
        (None, None) => (None, Some(NO_THRESHOLD.to_string())),
        (None, Some(eps)) => {
            let ok = values.iter().all(|v| {
                let x = v.value.expect("all defined");
                if id == MeasureId::DisparateImpact {
                    x >= 1.0 - eps
                } else {
                    x <= eps
                }
            });
            (Some(ok), None)
        }
    };

    Ok(MeasureResult {
        measure: id,
        values,
        epsilon,
        passed,
        reason,
        group_sizes: w.group_sizes,
        notes,
        ppv_below_npv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Header;
    use crate::dsl::parse_predicate;

    /// r1, r2 privileged; r3, r4 not. Predictions 1,0,1,1; truths 1,0,0,1;
    /// scores 10,2,4,8.
    fn four_rows() -> Dataset {
        let header = Header::new(["s", "p", "y", "v"]).unwrap();
        let rows = [
            ["1", "1", "1", "10"],
            ["1", "0", "0", "2"],
            ["0", "1", "0", "4"],
            ["0", "1", "1", "8"],
        ]
        .iter()
        .map(|r| r.iter().map(|c| c.to_string()).collect())
        .collect();
        Dataset::new(header, rows).unwrap()
    }

    fn bind(text: &str) -> BoundPredicate {
        BoundPredicate::unary(parse_predicate(text).unwrap()).unwrap()
    }

    struct Preds {
        s: BoundPredicate,
        p: BoundPredicate,
        y: BoundPredicate,
        v: ScoreExpr,
    }

    fn preds() -> Preds {
        Preds {
            s: bind(r#"col("s") == "1""#),
            p: bind(r#"col("p") == "1""#),
            y: bind(r#"col("y") == "1""#),
            v: crate::dsl::parse_score(r#"int(col("v"))"#).unwrap(),
        }
    }

    fn eval(id: MeasureId, d: &Dataset, pr: &Preds, extra: Option<&dyn RowTest>) -> MeasureResult {
        let ctx = AuditContext::new(d, &pr.s, &pr.p, &pr.y, 0.2)
            .unwrap()
            .with_score(&pr.v);
        evaluate_measure(id, &ctx, extra).unwrap()
    }

    #[test]
    fn cond_prob_by_enumeration() {
        let d = four_rows();
        let pr = preds();
        let not_s = |i: usize, r: &Row| pr.s.test(i, r).map(|b| !b);
        assert_eq!(cond_prob(&d, &pr.p, &pr.s).unwrap(), 0.5);
        assert_eq!(cond_prob(&d, &pr.p, &not_s).unwrap(), 1.0);
        let always = |_: usize, _: &Row| Ok(true);
        assert_eq!(cond_prob(&d, &always, &pr.s).unwrap(), 1.0);
    }

    #[test]
    fn cond_prob_empty_condition() {
        let d = four_rows();
        let never = |_: usize, _: &Row| Ok(false);
        let always = |_: usize, _: &Row| Ok(true);
        assert_eq!(
            cond_prob(&d, &always, &never).unwrap_err(),
            ProbError::EmptyCondition
        );
        assert_eq!(
            cond_expect(&d, &crate::dsl::parse_score("5").unwrap(), &never).unwrap_err(),
            ProbError::EmptyCondition
        );
    }

    #[test]
    fn cond_expect_by_hand() {
        let d = four_rows();
        let pr = preds();
        let not_s = |i: usize, r: &Row| pr.s.test(i, r).map(|b| !b);
        assert_eq!(cond_expect(&d, &pr.v, &pr.s).unwrap(), 6.0);
        assert_eq!(cond_expect(&d, &pr.v, &not_s).unwrap(), 6.0);
        let five = crate::dsl::parse_score("5").unwrap();
        assert_eq!(cond_expect(&d, &five, &pr.s).unwrap(), 5.0);
    }

    #[test]
    fn cond_prob_propagates_row_errors() {
        let d = four_rows();
        let bad = bind(r#"int(col("s")) > 0 and int(col("missing")) > 0"#);
        let always = |_: usize, _: &Row| Ok(true);
        let err = cond_prob(&d, &bad, &always).unwrap_err();
        assert!(matches!(err, ProbError::Eval { index: 0, .. }));
    }

    #[test]
    fn four_row_measures() {
        let d = four_rows();
        let pr = preds();
        let pe = eval(MeasureId::PredictiveEquality, &d, &pr, None);
        assert_eq!(pe.primary(), Some(1.0));
        assert_eq!(pe.passed, Some(false));
        let eo = eval(MeasureId::EqualOpportunity, &d, &pr, None);
        assert_eq!(eo.primary(), Some(0.0));
        assert_eq!(eo.passed, Some(true));
        let oae = eval(MeasureId::OverallAccuracyEquality, &d, &pr, None);
        assert_eq!(oae.primary(), Some(0.5));
        let dp = eval(MeasureId::DemographicParity, &d, &pr, None);
        assert_eq!(dp.primary(), Some(0.5));
        assert_eq!(dp.group_sizes["S=1"], 2);
        assert_eq!(dp.group_sizes["S!=1"], 2);
        let di = eval(MeasureId::DisparateImpact, &d, &pr, None);
        assert_eq!(di.primary(), Some(2.0));
        assert_eq!(di.passed, Some(true));
        assert_eq!(di.notes, vec![DISPARATE_IMPACT_NOTE.to_string()]);
        let pb = eval(MeasureId::PositiveBalance, &d, &pr, None);
        // E[V|Y=1,S=1] = 10, E[V|Y=1,S!=1] = 8
        assert_eq!(pb.primary(), Some(2.0));
        assert_eq!(pb.passed, None);
        assert_eq!(pb.reason.as_deref(), Some(NO_THRESHOLD));
        assert_eq!(pb.epsilon, None);
    }

    #[test]
    fn balance_threshold_applies_when_set() {
        let d = four_rows();
        let pr = preds();
        let ctx = AuditContext::new(&d, &pr.s, &pr.p, &pr.y, 0.2)
            .unwrap()
            .with_score(&pr.v)
            .with_balance_epsilon(2.5)
            .unwrap();
        let pb = evaluate_measure(MeasureId::PositiveBalance, &ctx, None).unwrap();
        assert_eq!(pb.passed, Some(true));
        assert_eq!(pb.epsilon, Some(2.5));
        // E[V|Y=0,S=1] = 2, E[V|Y=0,S!=1] = 4
        let nb = evaluate_measure(MeasureId::NegativeBalance, &ctx, None).unwrap();
        assert_eq!(nb.primary(), Some(2.0));
    }

    #[test]
    fn cuae_lines_and_ordering_flag() {
        let d = four_rows();
        let pr = preds();
        let r = eval(MeasureId::ConditionalUseAccuracyEquality, &d, &pr, None);
        // PPV: S=1,Yhat=1 -> r1 (Y=1) = 1; S!=1,Yhat=1 -> r3,r4 = 0.5
        assert_eq!(r.value("ppv"), Some(0.5));
        // NPV: S=1,Yhat=0 -> r2 (Y=0) = 1; S!=1,Yhat=0 -> empty
        assert_eq!(r.value("npv"), None);
        assert_eq!(r.passed, None);
        assert_eq!(
            r.reason.as_deref(),
            Some("empty condition: no rows in subgroup S!=1,Yhat=0")
        );
        assert_eq!(r.group_sizes["S!=1,Yhat=0"], 0);
        assert_eq!(r.ppv_below_npv, None);
    }

    #[test]
    fn extra_predicates_required_and_used() {
        let d = four_rows();
        let pr = preds();
        let ctx = AuditContext::new(&d, &pr.s, &pr.p, &pr.y, 0.2).unwrap();
        assert_eq!(
            evaluate_measure(MeasureId::ConditionalStatisticalParity, &ctx, None).unwrap_err(),
            MeasureError::MissingLegitimate(MeasureId::ConditionalStatisticalParity)
        );
        assert_eq!(
            evaluate_measure(MeasureId::EqualCalibration, &ctx, None).unwrap_err(),
            MeasureError::MissingCalibration(MeasureId::EqualCalibration)
        );
        assert_eq!(
            evaluate_measure(MeasureId::PositiveBalance, &ctx, None).unwrap_err(),
            MeasureError::MissingScore(MeasureId::PositiveBalance)
        );
        let l = parse_predicate(r#"int(col("v")) > $1"#)
            .unwrap()
            .bind(vec![crate::dsl::Literal::Int(3)])
            .unwrap();
        assert_eq!(
            evaluate_measure(MeasureId::DemographicParity, &ctx, Some(&l)).unwrap_err(),
            MeasureError::UnexpectedExtra(MeasureId::DemographicParity)
        );
        // L drops r2: S=1,L -> r1 (Yhat=1) = 1; S!=1,L -> r3,r4 = 1
        let csp =
            evaluate_measure(MeasureId::ConditionalStatisticalParity, &ctx, Some(&l)).unwrap();
        assert_eq!(csp.primary(), Some(0.0));
        assert_eq!(csp.group_sizes["S=1,L"], 1);
        // same window as calibration: S=1,C -> r1 Y=1 = 1; S!=1,C -> r3 0, r4 1 = 0.5
        let ec = evaluate_measure(MeasureId::EqualCalibration, &ctx, Some(&l)).unwrap();
        assert_eq!(ec.primary(), Some(0.5));
    }

    #[test]
    fn epsilon_bounds() {
        let d = four_rows();
        let pr = preds();
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(AuditContext::new(&d, &pr.s, &pr.p, &pr.y, bad).is_err());
        }
    }

    #[test]
    fn inclusive_threshold() {
        // DP value is exactly 0.5 on the fixture
        let d = four_rows();
        let pr = preds();
        let ctx = AuditContext::new(&d, &pr.s, &pr.p, &pr.y, 0.5).unwrap();
        let dp = evaluate_measure(MeasureId::DemographicParity, &ctx, None).unwrap();
        assert_eq!(dp.passed, Some(true));
    }

    #[test]
    fn disparate_impact_zero_denominator() {
        let d = four_rows();
        let pr = preds();
        let never = bind(r#"col("s") == "nobody""#);
        let ctx = AuditContext::new(&d, &pr.s, &never, &pr.y, 0.2).unwrap();
        let di = evaluate_measure(MeasureId::DisparateImpact, &ctx, None).unwrap();
        assert_eq!(di.passed, None);
        assert_eq!(di.primary(), None);
        assert_eq!(
            di.reason.as_deref(),
            Some("privileged selection rate is zero")
        );
    }

    #[test]
    fn measure_names_parse() {
        for id in MeasureId::ALL {
            assert_eq!(id.name().parse::<MeasureId>().unwrap(), id);
            assert_eq!(id.title().parse::<MeasureId>().unwrap(), id);
        }
        assert!("fairness".parse::<MeasureId>().is_err());
        assert_eq!(
            serde_json::to_string(&MeasureId::EqualizedOdds).unwrap(),
            "\"equalized_odds\""
        );
    }

    #[test]
    fn constant_predictions_give_zero_differences() {
        let d = four_rows();
        let pr = preds();
        let always = bind("1 == 1");
        let ctx = AuditContext::new(&d, &pr.s, &always, &pr.y, 0.2).unwrap();
        for id in [
            MeasureId::DemographicParity,
            MeasureId::MeanDifference,
            MeasureId::EqualizedOdds,
        ] {
            let r = evaluate_measure(id, &ctx, None).unwrap();
            assert!(r.values.iter().all(|v| v.value == Some(0.0)), "{id}");
        }
        let di = evaluate_measure(MeasureId::DisparateImpact, &ctx, None).unwrap();
        assert_eq!(di.primary(), Some(1.0));
    }
}
