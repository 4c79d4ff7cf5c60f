//! Line-delimited episode logs: one tagged record per line, diff-able and
//! replayable. STEP records trace the trajectory, SPEAK records the
//! speaker activations (with the ground truth needed for evaluation),
//! CAPTION the generated sentences, SUMMARY the per-episode accounting.

use thiserror::Error;

use crate::speaker::PolicyKind;
use crate::world::{Action, AgentPose};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {0}: {1}")]
    Malformed(usize, String),
    #[error("step indices must increase strictly: {0} after {1}")]
    NonMonotonicStep(usize, usize),
    #[error("CAPTION at step {0} without a SPEAK at the same step")]
    OrphanCaption(usize),
}

/// One ground-truth category visible at a SPEAK event.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibleCategory {
    pub name: String,
    pub area_frac: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LogRecord {
    Step {
        step: usize,
        action: Action,
        raw_surprisal: f64,
        penalty: f64,
        net: f64,
        pose: AgentPose,
    },
    Speak {
        step: usize,
        policy: PolicyKind,
        threshold: f64,
        value: f64,
        /// Categories in view with their area fractions; the evaluation
        /// ground truth for this event.
        visible: Vec<VisibleCategory>,
    },
    Caption {
        step: usize,
        tokens: Vec<usize>,
        log_prob: f64,
        text: String,
    },
    Summary {
        steps: usize,
        speaks: usize,
        visited_coverage: f64,
        mean_surprisal: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeLog {
    records: Vec<LogRecord>,
}

impl EpisodeLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    /// Appends a record, enforcing the log invariants.
    pub fn push(&mut self, record: LogRecord) -> Result<(), LogError> {
        match &record {
            LogRecord::Step { step, .. } => {
                if let Some(last) = self.last_step_index() {
                    if *step <= last {
                        return Err(LogError::NonMonotonicStep(*step, last));
                    }
                }
            }
            LogRecord::Caption { step, .. } => {
                let spoken = self.records.iter().rev().any(
                    |r| matches!(r, LogRecord::Speak { step: s, .. } if s == step),
                );
                if !spoken {
                    return Err(LogError::OrphanCaption(*step));
                }
            }
            LogRecord::Speak { .. } | LogRecord::Summary { .. } => {}
        }
        self.records.push(record);
        Ok(())
    }

    fn last_step_index(&self) -> Option<usize> {
        self.records.iter().rev().find_map(|r| match r {
            LogRecord::Step { step, .. } => Some(*step),
            _ => None,
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = &LogRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, LogRecord::Step { .. }))
    }

    pub fn speaks(&self) -> impl Iterator<Item = &LogRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, LogRecord::Speak { .. }))
    }

    pub fn captions(&self) -> impl Iterator<Item = &LogRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, LogRecord::Caption { .. }))
    }

    /// Raw surprisal stream, in step order.
    pub fn surprisals(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Step { raw_surprisal, .. } => Some(*raw_surprisal),
                _ => None,
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&render_record(r));
            out.push('\n');
        }
        out
    }

    /// Parses a rendered log, re-validating every invariant.
    pub fn parse(text: &str) -> Result<Self, LogError> {
        let mut log = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let record = parse_record(line).map_err(|e| LogError::Malformed(i + 1, e))?;
            log.push(record)?;
        }
        Ok(log)
    }
}

fn render_record(r: &LogRecord) -> String {
    match r {
        LogRecord::Step {
            step,
            action,
            raw_surprisal,
            penalty,
            net,
            pose,
        } => format!(
            "STEP step={step} action={} surprisal={raw_surprisal} penalty={penalty} net={net} x={} y={} heading={}",
            action.name(),
            pose.x,
            pose.y,
            pose.heading_deg
        ),
        LogRecord::Speak {
            step,
            policy,
            threshold,
            value,
            visible,
        } => {
            let cats = visible
                .iter()
                .map(|v| format!("{}:{}", v.name, v.area_frac))
                .collect::<Vec<_>>()
                .join(",");
            format!(
                "SPEAK step={step} policy={} threshold={threshold} value={value} cats={cats}",
                policy.name()
            )
        }
        LogRecord::Caption {
            step,
            tokens,
            log_prob,
            text,
        } => {
            let toks = tokens
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(",");
            format!("CAPTION step={step} tokens={toks} logprob={log_prob} text={text}")
        }
        LogRecord::Summary {
            steps,
            speaks,
            visited_coverage,
            mean_surprisal,
        } => format!(
            "SUMMARY steps={steps} speaks={speaks} visited_coverage={visited_coverage} mean_surprisal={mean_surprisal}"
        ),
    }
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str, String> {
    line.split(' ')
        .find_map(|tok| tok.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v))
        .ok_or_else(|| format!("missing field {key}"))
}

fn num<T: std::str::FromStr>(line: &str, key: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    field(line, key)?
        .parse()
        .map_err(|e| format!("bad {key}: {e}"))
}

fn parse_record(line: &str) -> Result<LogRecord, String> {
    let tag = line.split(' ').next().unwrap_or("");
    match tag {
        "STEP" => Ok(LogRecord::Step {
            step: num(line, "step")?,
            action: Action::from_name(field(line, "action")?)
                .ok_or_else(|| format!("unknown action {:?}", field(line, "action").unwrap()))?,
            raw_surprisal: num(line, "surprisal")?,
            penalty: num(line, "penalty")?,
            net: num(line, "net")?,
            pose: AgentPose {
                x: num(line, "x")?,
                y: num(line, "y")?,
                heading_deg: num(line, "heading")?,
            },
        }),
        "SPEAK" => {
            let cats_raw = field(line, "cats")?;
            let visible = if cats_raw.is_empty() {
                Vec::new()
            } else {
                cats_raw
                    .split(',')
                    .map(|pair| {
                        let (name, area) = pair
                            .split_once(':')
                            .ok_or_else(|| format!("bad category entry {pair:?}"))?;
                        Ok(VisibleCategory {
                            name: name.to_string(),
                            area_frac: area.parse().map_err(|e| format!("bad area: {e}"))?,
                        })
                    })
                    .collect::<Result<_, String>>()?
            };
            Ok(LogRecord::Speak {
                step: num(line, "step")?,
                policy: PolicyKind::from_name(field(line, "policy")?)
                    .ok_or_else(|| "unknown policy kind".to_string())?,
                threshold: num(line, "threshold")?,
                value: num(line, "value")?,
                visible,
            })
        }
        "CAPTION" => {
            let toks_raw = field(line, "tokens")?;
            let tokens = if toks_raw.is_empty() {
                Vec::new()
            } else {
                toks_raw
                    .split(',')
                    .map(|t| t.parse().map_err(|e| format!("bad token id: {e}")))
                    .collect::<Result<_, String>>()?
            };
            let text = line
                .split_once(" text=")
                .map(|(_, t)| t.to_string())
                .ok_or_else(|| "missing field text".to_string())?;
            Ok(LogRecord::Caption {
                step: num(line, "step")?,
                tokens,
                log_prob: num(line, "logprob")?,
                text,
            })
        }
        "SUMMARY" => Ok(LogRecord::Summary {
            steps: num(line, "steps")?,
            speaks: num(line, "speaks")?,
            visited_coverage: num(line, "visited_coverage")?,
            mean_surprisal: num(line, "mean_surprisal")?,
        }),
        other => Err(format!("unknown record tag {other:?}")),
    }
}
