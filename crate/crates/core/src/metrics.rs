//! The training log: one `key=value` line per optimizer step, plus event
//! lines at stage boundaries. Floats are written in shortest round-trip
//! form, so a log parses back to exactly the values that were recorded and
//! identical runs give byte-identical files.

use std::fmt;

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub stage: usize,
    /// Step within the stage, from 1.
    pub step: usize,
    pub teacher: String,
    pub loss: LossBreakdown,
}

impl MetricsRecord {
    /// Whether `total = gt + α·distill` holds to 1e-6 relative.
    pub fn total_consistent(&self, alpha: f64) -> bool {
        let want = self.loss.gt + alpha * self.loss.distill;
        (self.loss.total - want).abs() <= 1e-6 * want.abs().max(1e-12)
    }
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.loss;
        write!(
            f,
            "stage={} step={} teacher={} total={} gt={} distill={} recon={} me={} sfa={}",
            self.stage, self.step, self.teacher, l.total, l.gt, l.distill, l.recon, l.me, l.sfa
        )
    }
}

/// Stage-boundary markers.
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    StageStart {
        stage: usize,
        teacher: String,
        checksum: u64,
    },
    StageEnd {
        stage: usize,
        teacher: String,
        checksum: u64,
    },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, stage, teacher, checksum) = match self {
            Event::StageStart {
                stage,
                teacher,
                checksum,
            } => ("stage_start", stage, teacher, checksum),
            Event::StageEnd {
                stage,
                teacher,
                checksum,
            } => ("stage_end", stage, teacher, checksum),
        };
        write!(f, "event={name} stage={stage} teacher={teacher} student_checksum={checksum:016x}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LogLine {
    Record(MetricsRecord),
    Event(Event),
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogLine::Record(r) => r.fmt(f),
            LogLine::Event(e) => e.fmt(f),
        }
    }
}

fn fields(line: &str) -> Result<Vec<(&str, &str)>> {
    line.split_whitespace()
        .map(|kv| {
            kv.split_once('=').ok_or_else(|| Error::Parse {
                what: "metrics line".into(),
                message: format!("{kv:?} is not key=value"),
            })
        })
        .collect()
}

fn get<'a>(fs: &[(&str, &'a str)], key: &str) -> Result<&'a str> {
    fs.iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Parse {
            what: "metrics line".into(),
            message: format!("missing {key}"),
        })
}

fn num<T: std::str::FromStr>(fs: &[(&str, &str)], key: &str) -> Result<T> {
    get(fs, key)?.parse().map_err(|_| Error::Parse {
        what: "metrics line".into(),
        message: format!("bad value for {key}"),
    })
}

impl std::str::FromStr for LogLine {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fs = fields(line)?;
        if let Ok(name) = get(&fs, "event") {
            let stage = num(&fs, "stage")?;
            let teacher = get(&fs, "teacher")?.to_string();
            let checksum = u64::from_str_radix(get(&fs, "student_checksum")?, 16).map_err(|_| Error::Parse {
                what: "metrics line".into(),
                message: "bad checksum".into(),
            })?;
            return match name {
                "stage_start" => Ok(LogLine::Event(Event::StageStart {
                    stage,
                    teacher,
                    checksum,
                })),
                "stage_end" => Ok(LogLine::Event(Event::StageEnd {
                    stage,
                    teacher,
                    checksum,
                })),
                other => Err(Error::Parse {
                    what: "metrics line".into(),
                    message: format!("unknown event {other}"),
                }),
            };
        }
        Ok(LogLine::Record(MetricsRecord {
            stage: num(&fs, "stage")?,
            step: num(&fs, "step")?,
            teacher: get(&fs, "teacher")?.to_string(),
            loss: LossBreakdown {
                total: num(&fs, "total")?,
                gt: num(&fs, "gt")?,
                distill: num(&fs, "distill")?,
                recon: num(&fs, "recon")?,
                me: num(&fs, "me")?,
                sfa: num(&fs, "sfa")?,
            },
        }))
    }
}

/// Parses a whole log, skipping blank lines.
pub fn parse_log(text: &str) -> Result<Vec<LogLine>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

pub fn records(lines: &[LogLine]) -> impl Iterator<Item = &MetricsRecord> {
    lines.iter().filter_map(|l| match l {
        LogLine::Record(r) => Some(r),
        LogLine::Event(_) => None,
    })
}

pub fn render_log(lines: &[LogLine]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}
