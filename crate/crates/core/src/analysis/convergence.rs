use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Serialize;

use crate::session::{LogEvent, LogRecord, SessionId};

/// Thresholds reported as "converged within k refinement turns".
const WITHIN: [u32; 3] = [0, 1, 2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnSummary {
    pub session_id: SessionId,
    pub refinement_turns: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinerStats {
    pub count: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub min: u32,
    pub max: u32,
}

/// Refinement effort over satisfied sessions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStats {
    /// Satisfied sessions in log order.
    pub sessions: Vec<TurnSummary>,
    /// Sessions seen in the log, satisfied or not.
    pub logged: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n - 1).
    pub sd: Option<f64>,
    /// Fraction of satisfied sessions with at most k refinement turns.
    pub fraction_within: BTreeMap<u32, f64>,
    /// Same statistics restricted to sessions with at least one refinement.
    pub refiners: Option<RefinerStats>,
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    (Some(mean), sd)
}

/// Counts refinement turns (turn 0 excluded) per satisfied session.
pub fn convergence_stats(records: &[LogRecord]) -> ConvergenceStats {
    let mut order: Vec<&SessionId> = Vec::new();
    let mut turns: HashMap<&SessionId, u32> = HashMap::new();
    let mut satisfied: HashMap<&SessionId, Option<u32>> = HashMap::new();
    for r in records {
        if !turns.contains_key(&r.session_id) {
            order.push(&r.session_id);
            turns.insert(&r.session_id, 0);
        }
        match r.event {
            LogEvent::Turn => *turns.get_mut(&r.session_id).expect("inserted") += 1,
            LogEvent::Satisfied => {
                satisfied.insert(&r.session_id, r.refinement_turns);
            }
            LogEvent::Created | LogEvent::Abandoned => {}
        }
    }

    let sessions: Vec<TurnSummary> = order
        .iter()
        .filter_map(|id| {
            let declared = satisfied.get(id)?;
            Some(TurnSummary {
                session_id: (*id).clone(),
                refinement_turns: declared.unwrap_or(turns[id]),
            })
        })
        .collect();

    let all: Vec<f64> = sessions
        .iter()
        .map(|s| f64::from(s.refinement_turns))
        .collect();
    let (mean, sd) = mean_sd(&all);
    let fraction_within = if sessions.is_empty() {
        BTreeMap::new()
    } else {
        WITHIN
            .iter()
            .map(|&k| {
                let hits = sessions.iter().filter(|s| s.refinement_turns <= k).count();
                (k, hits as f64 / sessions.len() as f64)
            })
            .collect()
    };

    let nonzero: Vec<u32> = sessions
        .iter()
        .map(|s| s.refinement_turns)
        .filter(|&t| t > 0)
        .collect();
    let refiners = (!nonzero.is_empty()).then(|| {
        let values: Vec<f64> = nonzero.iter().map(|&t| f64::from(t)).collect();
        let (mean, sd) = mean_sd(&values);
        RefinerStats {
            count: nonzero.len(),
            mean: mean.expect("nonempty"),
            sd,
            min: *nonzero.iter().min().expect("nonempty"),
            max: *nonzero.iter().max().expect("nonempty"),
        }
    });

    ConvergenceStats {
        sessions,
        logged: order.len(),
        mean,
        sd,
        fraction_within,
        refiners,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.2}"))
}

impl fmt::Display for ConvergenceStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.sessions.len();
        writeln!(f, "Satisfied sessions: {n} (of {} logged)", self.logged)?;
        if n == 0 {
            return Ok(());
        }
        writeln!(
            f,
            "Refinement turns: mean {} (SD {})",
            opt(self.mean),
            opt(self.sd)
        )?;
        if let Some(r) = &self.refiners {
            writeln!(
                f,
                "Sessions with feedback: {}, mean {:.2} (SD {}, range {}-{})",
                r.count,
                r.mean,
                opt(r.sd),
                r.min,
                r.max
            )?;
        }
        for (&k, &frac) in &self.fraction_within {
            let hits = self
                .sessions
                .iter()
                .filter(|s| s.refinement_turns <= k)
                .count();
            let label = match k {
                0 => "Converged with no refinement".to_owned(),
                1 => "Converged within one refinement turn".to_owned(),
                2 => "Converged within two refinement turns".to_owned(),
                k => format!("Converged within {k} refinement turns"),
            };
            writeln!(f, "{label}: {:.1}% (n = {hits})", frac * 100.0)?;
        }
        Ok(())
    }
}
