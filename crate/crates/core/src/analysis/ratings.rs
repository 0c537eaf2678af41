use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{descriptor_distance, fdr_correct, friedman_test, wilcoxon_signed_rank};
use super::{AnalysisError, DescriptorRating};

/// One participant's ratings of one condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingRow {
    pub participant: String,
    pub condition: String,
    pub rating: DescriptorRating,
    pub similarity: Option<f64>,
}

#[derive(Deserialize)]
struct CsvRow {
    participant: String,
    condition: String,
    sweet: u8,
    savory: u8,
    sour: u8,
    burnt_smoked: u8,
    fresh: u8,
    chemical_artificial: u8,
    similarity: Option<f64>,
}

/// Parses a ratings CSV with a header row.
pub fn read_ratings(reader: impl Read) -> Result<Vec<RatingRow>, AnalysisError> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for result in csv.deserialize::<CsvRow>() {
        let raw = result?;
        let rating = DescriptorRating::new([
            raw.sweet,
            raw.savory,
            raw.sour,
            raw.burnt_smoked,
            raw.fresh,
            raw.chemical_artificial,
        ])
        .map_err(|e| AnalysisError::BadRow {
            // Header is line 1.
            line: rows.len() as u64 + 2,
            detail: e.to_string(),
        })?;
        rows.push(RatingRow {
            participant: raw.participant,
            condition: raw.condition,
            rating,
            similarity: raw.similarity,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quartiles {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl fmt::Display for Quartiles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} [{:.2}, {:.2}]", self.median, self.q1, self.q3)
    }
}

/// Linear-interpolation quantiles.
fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some(Quartiles {
        median: at(0.5),
        q1: at(0.25),
        q3: at(0.75),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub participants: usize,
    /// Distance to the same participant's reference rating.
    pub distance: Option<Quartiles>,
    pub similarity: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestSummary {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseComparison {
    pub a: String,
    pub b: String,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub effect_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingsSummary {
    pub reference: String,
    pub conditions: Vec<ConditionSummary>,
    pub distance_friedman: Option<TestSummary>,
    pub distance_pairwise: Vec<PairwiseComparison>,
    pub similarity_friedman: Option<TestSummary>,
    pub similarity_pairwise: Vec<PairwiseComparison>,
}

type Table = BTreeMap<String, HashMap<String, f64>>;

fn friedman(table: &Table, conditions: &[String]) -> Option<TestSummary> {
    let rows: Vec<Vec<f64>> = table
        .values()
        .filter_map(|by| conditions.iter().map(|c| by.get(c).copied()).collect())
        .collect();
    let r = friedman_test::<f64, _>(&rows).ok()?;
    Some(TestSummary {
        statistic: r.statistic,
        df: r.df,
        p_value: r.p_value,
        subjects: r.subjects,
    })
}

fn pairwise(table: &Table, conditions: &[String]) -> Vec<PairwiseComparison> {
    let mut out = Vec::new();
    for (i, a) in conditions.iter().enumerate() {
        for b in &conditions[i + 1..] {
            let pairs: Vec<(f64, f64)> = table
                .values()
                .filter_map(|by| Some((*by.get(a)?, *by.get(b)?)))
                .collect();
            match wilcoxon_signed_rank(&pairs) {
                Ok(r) => out.push(PairwiseComparison {
                    a: a.clone(),
                    b: b.clone(),
                    n: r.n,
                    statistic: r.statistic,
                    p_value: r.p_value,
                    p_adjusted: r.p_value,
                    effect_r: r.effect_r,
                }),
                Err(e) => tracing::debug!(%a, %b, %e, "comparison skipped"),
            }
        }
    }
    let raw: Vec<f64> = out.iter().map(|c| c.p_value).collect();
    let adjusted = fdr_correct(&raw).expect("exact p-values lie in [0, 1]");
    for (c, p) in out.iter_mut().zip(adjusted) {
        c.p_adjusted = p;
    }
    out
}

/// Distances to `reference`, similarity, and the rank tests across the
/// remaining conditions.
pub fn summarize_ratings(rows: &[RatingRow], reference: &str) -> RatingsSummary {
    let mut conditions: Vec<String> = Vec::new();
    for r in rows {
        if r.condition != reference && !conditions.contains(&r.condition) {
            conditions.push(r.condition.clone());
        }
    }
    let refs: HashMap<&str, &DescriptorRating> = rows
        .iter()
        .filter(|r| r.condition == reference)
        .map(|r| (r.participant.as_str(), &r.rating))
        .collect();

    let mut distance = Table::new();
    let mut similarity = Table::new();
    for r in rows.iter().filter(|r| r.condition != reference) {
        if let Some(base) = refs.get(r.participant.as_str()) {
            distance
                .entry(r.participant.clone())
                .or_default()
                .insert(r.condition.clone(), descriptor_distance(base, &r.rating));
        }
        if let Some(s) = r.similarity {
            similarity
                .entry(r.participant.clone())
                .or_default()
                .insert(r.condition.clone(), s);
        }
    }

    let column = |table: &Table, c: &str| -> Vec<f64> {
        table.values().filter_map(|by| by.get(c).copied()).collect()
    };
    let summaries = conditions
        .iter()
        .map(|c| ConditionSummary {
            condition: c.clone(),
            participants: rows.iter().filter(|r| &r.condition == c).count(),
            distance: quartiles(&column(&distance, c)),
            similarity: quartiles(&column(&similarity, c)),
        })
        .collect();

    RatingsSummary {
        reference: reference.to_owned(),
        conditions: summaries,
        distance_friedman: friedman(&distance, &conditions),
        distance_pairwise: pairwise(&distance, &conditions),
        similarity_friedman: friedman(&similarity, &conditions),
        similarity_pairwise: pairwise(&similarity, &conditions),
    }
}

fn write_tests(
    f: &mut fmt::Formatter<'_>,
    label: &str,
    omnibus: &Option<TestSummary>,
    pairs: &[PairwiseComparison],
) -> fmt::Result {
    if let Some(t) = omnibus {
        writeln!(
            f,
            "{label} Friedman: chi2({}) = {:.2}, p = {:.4} (n = {})",
            t.df, t.statistic, t.p_value, t.subjects
        )?;
    }
    for c in pairs {
        writeln!(
            f,
            "{label} {} vs {}: W = {}, p = {:.4}, p(FDR) = {:.4}, r = {:.2}",
            c.a, c.b, c.statistic, c.p_value, c.p_adjusted, c.effect_r
        )?;
    }
    Ok(())
}

impl fmt::Display for RatingsSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Median [IQR] against {}:", self.reference)?;
        for c in &self.conditions {
            let show = |q: &Option<Quartiles>| q.map_or_else(|| "n/a".into(), |q| q.to_string());
            writeln!(
                f,
                "  {}: distance {}, similarity {}",
                c.condition,
                show(&c.distance),
                show(&c.similarity)
            )?;
        }
        write_tests(
            f,
            "Distance",
            &self.distance_friedman,
            &self.distance_pairwise,
        )?;
        write_tests(
            f,
            "Similarity",
            &self.similarity_friedman,
            &self.similarity_pairwise,
        )
    }
}
