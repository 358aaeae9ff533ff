//! Offline datasets: single-stage `(s, a, r)` tuples and T-stage
//! trajectories with a terminal reward.
//!
//! Both serialize to the same columnar CSV layout. For stage `t` (1-based)
//! the columns are `s{t}_1 … s{t}_{d_t}`, `a{t}` and `prop{t}`, followed by a
//! single `reward` column. Actions are 0-based indices. Reals are written
//! with 17 significant digits so a write/read cycle is bit-exact; an absent
//! propensity is an empty field.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, PblError, Result};
use crate::features::encode_history;

/// Offline contextual-bandit data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Behavior probability of each logged action, when known.
    pub propensities: Option<Vec<f64>>,
    pub action_count: usize,
}

impl Dataset {
    pub fn new(
        states: Vec<Vec<f64>>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        propensities: Option<Vec<f64>>,
        action_count: usize,
    ) -> Result<Self> {
        let n = states.len();
        if actions.len() != n || rewards.len() != n {
            return Err(shape_err(format!(
                "{} states, {} actions, {} rewards",
                n,
                actions.len(),
                rewards.len()
            )));
        }
        if let Some(p) = &propensities {
            if p.len() != n {
                return Err(shape_err(format!("{} propensities for {n} rows", p.len())));
            }
        }
        if let Some(d) = states.first().map(Vec::len) {
            if states.iter().any(|s| s.len() != d) {
                return Err(shape_err("states have inconsistent dimensions"));
            }
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= action_count) {
            return Err(domain_err(format!("action {a} out of range for {action_count} actions")));
        }
        Ok(Self {
            states,
            actions,
            rewards,
            propensities,
            action_count,
        })
    }

    pub fn empty(action_count: usize) -> Self {
        Self {
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            propensities: None,
            action_count,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.states.first().map(Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            states: idx.iter().map(|&i| self.states[i].clone()).collect(),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            propensities: self
                .propensities
                .as_ref()
                .map(|p| idx.iter().map(|&i| p[i]).collect()),
            action_count: self.action_count,
        }
    }

    pub fn into_trajectories(self) -> TrajectoryDataset {
        TrajectoryDataset {
            stages: vec![StageRecords {
                states: self.states,
                actions: self.actions,
                propensities: self.propensities,
            }],
            rewards: self.rewards,
            action_count: self.action_count,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.clone().into_trajectories().write_csv(w)
    }

    pub fn read_csv<R: BufRead>(r: R, action_count: usize) -> Result<Self> {
        let traj = TrajectoryDataset::read_csv(r, action_count)?;
        traj.into_single_stage()
    }
}

/// Per-stage columns of a trajectory dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecords {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub propensities: Option<Vec<f64>>,
}

/// `n` trajectories of `T` stages with a terminal reward.
///
/// Histories `h⁽ᵗ⁾ = (s⁽¹⁾, a⁽¹⁾, …, s⁽ᵗ⁾)` are derived on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    pub stages: Vec<StageRecords>,
    pub rewards: Vec<f64>,
    pub action_count: usize,
}

impl TrajectoryDataset {
    pub fn new(stages: Vec<StageRecords>, rewards: Vec<f64>, action_count: usize) -> Result<Self> {
        if stages.is_empty() {
            return Err(domain_err("trajectory dataset needs at least one stage"));
        }
        let n = rewards.len();
        for (t, st) in stages.iter().enumerate() {
            if st.states.len() != n || st.actions.len() != n {
                return Err(shape_err(format!("stage {} has mismatched row counts", t + 1)));
            }
            if st.propensities.as_ref().is_some_and(|p| p.len() != n) {
                return Err(shape_err(format!("stage {} propensities mismatch", t + 1)));
            }
            if let Some(d) = st.states.first().map(Vec::len) {
                if st.states.iter().any(|s| s.len() != d) {
                    return Err(shape_err(format!("stage {} states have inconsistent dims", t + 1)));
                }
            }
            if st.actions.iter().any(|&a| a >= action_count) {
                return Err(domain_err(format!("stage {} has out-of-range actions", t + 1)));
            }
        }
        Ok(Self {
            stages,
            rewards,
            action_count,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn state_dims(&self) -> Vec<usize> {
        self.stages
            .iter()
            .map(|s| s.states.first().map_or(0, Vec::len))
            .collect()
    }

    /// Encoded history `h⁽ᵗ⁾` of trajectory `i`, `stage` 0-based.
    pub fn history(&self, i: usize, stage: usize) -> Result<Vec<f64>> {
        let states: Vec<&[f64]> = self.stages[..=stage]
            .iter()
            .map(|s| s.states[i].as_slice())
            .collect();
        let actions: Vec<usize> = self.stages[..stage].iter().map(|s| s.actions[i]).collect();
        encode_history(&states, &actions, self.action_count)
    }

    pub fn histories(&self, stage: usize) -> Result<Vec<Vec<f64>>> {
        (0..self.len()).map(|i| self.history(i, stage)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> TrajectoryDataset {
        TrajectoryDataset {
            stages: self
                .stages
                .iter()
                .map(|st| StageRecords {
                    states: idx.iter().map(|&i| st.states[i].clone()).collect(),
                    actions: idx.iter().map(|&i| st.actions[i]).collect(),
                    propensities: st
                        .propensities
                        .as_ref()
                        .map(|p| idx.iter().map(|&i| p[i]).collect()),
                })
                .collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            action_count: self.action_count,
        }
    }

    pub fn into_single_stage(mut self) -> Result<Dataset> {
        if self.stages.len() != 1 {
            return Err(domain_err(format!(
                "expected a single-stage dataset, found {} stages",
                self.stages.len()
            )));
        }
        let st = self.stages.pop().expect("one stage");
        Dataset::new(st.states, st.actions, self.rewards, st.propensities, self.action_count)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut cols = Vec::new();
        for (t, d) in self.state_dims().into_iter().enumerate() {
            let t = t + 1;
            cols.extend((1..=d).map(|j| format!("s{t}_{j}")));
            cols.push(format!("a{t}"));
            cols.push(format!("prop{t}"));
        }
        cols.push("reward".into());
        cols
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.csv_header().join(","))?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            for st in &self.stages {
                for v in &st.states[i] {
                    write!(line, "{},", fmt_real(*v)).expect("string write");
                }
                write!(line, "{},", st.actions[i]).expect("string write");
                if let Some(p) = &st.propensities {
                    line.push_str(&fmt_real(p[i]));
                }
                line.push(',');
            }
            line.push_str(&fmt_real(self.rewards[i]));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, action_count: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| PblError::Format("empty CSV".into()))??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.last() != Some(&"reward") {
            return Err(PblError::Format("last column must be `reward`".into()));
        }
        // stage layout from the header
        let mut layout: Vec<usize> = Vec::new();
        let mut dim = 0usize;
        let mut idx = 0;
        while idx + 1 < cols.len() {
            let t = layout.len() + 1;
            let c = cols[idx];
            if c == format!("a{t}") {
                if cols.get(idx + 1) != Some(&format!("prop{t}").as_str()) {
                    return Err(PblError::Format(format!("expected prop{t} after a{t}")));
                }
                layout.push(dim);
                dim = 0;
                idx += 2;
            } else if c == format!("s{t}_{}", dim + 1) {
                dim += 1;
                idx += 1;
            } else {
                return Err(PblError::Format(format!("unexpected column `{c}`")));
            }
        }
        if layout.is_empty() || dim != 0 {
            return Err(PblError::Format("malformed header".into()));
        }

        let mut stages: Vec<StageRecords> = layout
            .iter()
            .map(|_| StageRecords {
                states: Vec::new(),
                actions: Vec::new(),
                propensities: Some(Vec::new()),
            })
            .collect();
        let mut prop_present: Vec<Option<bool>> = vec![None; layout.len()];
        let mut rewards = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(PblError::Format(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 1,
                    fields.len(),
                    cols.len()
                )));
            }
            let mut f = 0;
            for (t, &d) in layout.iter().enumerate() {
                let s: Vec<f64> = fields[f..f + d]
                    .iter()
                    .map(|x| parse_real(x))
                    .collect::<Result<_>>()?;
                f += d;
                let a: usize = fields[f]
                    .parse()
                    .map_err(|_| PblError::Format(format!("bad action `{}`", fields[f])))?;
                f += 1;
                let present = !fields[f].is_empty();
                match prop_present[t] {
                    None => prop_present[t] = Some(present),
                    Some(p) if p != present => {
                        return Err(PblError::Format(format!(
                            "stage {} propensities partially missing",
                            t + 1
                        )))
                    }
                    _ => {}
                }
                if present {
                    stages[t]
                        .propensities
                        .as_mut()
                        .expect("initialized")
                        .push(parse_real(fields[f])?);
                }
                f += 1;
                stages[t].states.push(s);
                stages[t].actions.push(a);
            }
            rewards.push(parse_real(fields[f])?);
        }
        for (st, present) in stages.iter_mut().zip(prop_present) {
            if present != Some(true) {
                st.propensities = None;
            }
        }
        TrajectoryDataset::new(stages, rewards, action_count)
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_real(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| PblError::Format(format!("bad number `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::new(
            vec![vec![0.1, -2.5], vec![1.0 / 3.0, 1e-300]],
            vec![0, 1],
            vec![std::f64::consts::PI, -0.0],
            Some(vec![0.95, 0.05]),
            2,
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = sample();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), 2).unwrap();
        assert_eq!(back.states, d.states);
        assert_eq!(back.rewards.iter().map(|r| r.to_bits()).collect::<Vec<_>>(),
                   d.rewards.iter().map(|r| r.to_bits()).collect::<Vec<_>>());
        assert_eq!(back, d);
    }

    #[test]
    fn header_layout() {
        let d = sample();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s1_1,s1_2,a1,prop1,reward\n"));
    }

    #[test]
    fn missing_propensities_round_trip() {
        let mut d = sample();
        d.propensities = None;
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), 2).unwrap();
        assert_eq!(back.propensities, None);
    }

    #[test]
    fn history_encoding() {
        let t = TrajectoryDataset::new(
            vec![
                StageRecords {
                    states: vec![vec![1.0, 2.0]],
                    actions: vec![1],
                    propensities: None,
                },
                StageRecords {
                    states: vec![vec![3.0]],
                    actions: vec![0],
                    propensities: None,
                },
            ],
            vec![5.0],
            2,
        )
        .unwrap();
        assert_eq!(t.history(0, 0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(t.history(0, 1).unwrap(), vec![1.0, 2.0, 0.0, 1.0, 3.0]);
    }

    #[test]
    fn rejects_inconsistent_input() {
        assert!(Dataset::new(vec![vec![1.0]], vec![0, 1], vec![1.0], None, 2).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![2], vec![1.0], None, 2).is_err());
        assert!(Dataset::read_csv("x,reward\n".as_bytes(), 2).is_err());
    }
}
