use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lifecycle state of a job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Finished,
    Crashed,
}

impl JobStatus {
    pub const ALL: [JobStatus; 4] =
        [JobStatus::Pending, JobStatus::Running, JobStatus::Finished, JobStatus::Crashed];

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Finished | JobStatus::Crashed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Pending => "pending",
            JobStatus::Running => "running",
            JobStatus::Finished => "finished",
            JobStatus::Crashed => "crashed",
        }
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobEvent {
    Start,
    Succeed,
    Fail,
}

impl JobEvent {
    pub const ALL: [JobEvent; 3] = [JobEvent::Start, JobEvent::Succeed, JobEvent::Fail];
}

impl fmt::Display for JobEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobEvent::Start => "start",
            JobEvent::Succeed => "succeed",
            JobEvent::Fail => "fail",
        })
    }
}

/// The job state machine: `pending -start-> running -succeed-> finished`,
/// `running -fail-> crashed`. Everything else is rejected.
pub fn transition(current: JobStatus, event: JobEvent) -> Result<JobStatus> {
    use JobEvent::*;
    use JobStatus::*;
    match (current, event) {
        (Pending, Start) => Ok(Running),
        (Running, Succeed) => Ok(Finished),
        (Running, Fail) => Ok(Crashed),
        (from, ev) => Err(Error::IllegalTransition(format!("{from} + {ev}"))),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeSet, VecDeque};

    use super::*;

    // Declared relation, written out independently of `transition`.
    const LEGAL: [(JobStatus, JobEvent, JobStatus); 3] = [
        (JobStatus::Pending, JobEvent::Start, JobStatus::Running),
        (JobStatus::Running, JobEvent::Succeed, JobStatus::Finished),
        (JobStatus::Running, JobEvent::Fail, JobStatus::Crashed),
    ];

    #[test]
    fn exhaustive_table_has_exactly_three_edges() {
        let mut edges = 0;
        for s in JobStatus::ALL {
            for e in JobEvent::ALL {
                let expected = LEGAL.iter().find(|(f, ev, _)| *f == s && *ev == e).map(|t| t.2);
                match (transition(s, e), expected) {
                    (Ok(to), Some(exp)) => {
                        assert_eq!(to, exp);
                        edges += 1;
                    }
                    (Err(Error::IllegalTransition(_)), None) => {}
                    (got, exp) => panic!("{s}+{e}: got {got:?}, expected {exp:?}"),
                }
            }
        }
        assert_eq!(edges, 3);
    }

    #[test]
    fn reachability_covers_all_states() {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([JobStatus::Pending]);
        while let Some(s) = queue.pop_front() {
            if !seen.insert(s.as_str()) {
                continue;
            }
            for e in JobEvent::ALL {
                if let Ok(n) = transition(s, e) {
                    queue.push_back(n);
                }
            }
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn terminal_states_absorb() {
        assert!(transition(JobStatus::Finished, JobEvent::Fail).is_err());
        assert!(transition(JobStatus::Crashed, JobEvent::Start).is_err());
        assert_eq!(transition(JobStatus::Pending, JobEvent::Start).unwrap(), JobStatus::Running);
    }
}
