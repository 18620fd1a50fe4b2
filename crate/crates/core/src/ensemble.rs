//! Hard majority vote and the jointly trained concatenation ensemble.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::nn::{GraphBuilder, Network, NodeId};
use crate::optim::evaluate;

pub const VOTE_DISPLAY_NAME: &str = "Majority Vote";
pub const CONCAT_DISPLAY_NAME: &str = "Concatenation Ensemble";
/// Name prefix of joint models; the full name lists the members,
/// e.g. `concat_ensemble[mini_resnet+mini_inception]`.
pub const CONCAT_NETWORK_NAME: &str = "concat_ensemble";
/// Dropout rate in front of the joint output layer.
pub const JOINT_DROPOUT: f64 = 0.2;

/// Resolution of an evenly split vote.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Follow the single most confident model (score farthest from the
    /// threshold). An exact tie in confidence between opposite votes goes positive.
    #[default]
    HigherConfidence,
    Positive,
    Negative,
}

impl std::str::FromStr for TieBreak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher_confidence" => Ok(TieBreak::HigherConfidence),
            "positive" => Ok(TieBreak::Positive),
            "negative" => Ok(TieBreak::Negative),
            other => Err(Error::param(format!(
                "unknown tie break {other:?} (expected higher_confidence, positive or negative)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteConfig {
    pub threshold: f64,
    pub tie_break: TieBreak,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig {
            threshold: 0.5,
            tie_break: TieBreak::default(),
        }
    }
}

/// Per-sample majority of thresholded member scores.
pub fn majority_vote(score_sets: &[Vec<f64>], cfg: &VoteConfig) -> Result<Vec<u8>> {
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::param(format!("vote threshold {} must lie in (0, 1)", cfg.threshold)));
    }
    if score_sets.len() < 2 {
        return Err(Error::param(format!(
            "a vote needs at least two members, got {}",
            score_sets.len()
        )));
    }
    let n = score_sets[0].len();
    if let Some(bad) = score_sets.iter().find(|s| s.len() != n) {
        return Err(Error::param(format!("score sets of lengths {n} and {}", bad.len())));
    }
    let t = cfg.threshold;
    Ok((0..n)
        .map(|i| {
            let (mut pos, mut neg) = (0usize, 0usize);
            let (mut pos_conf, mut neg_conf) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for set in score_sets {
                let s = set[i];
                if s >= t {
                    pos += 1;
                    pos_conf = pos_conf.max(s - t);
                } else {
                    neg += 1;
                    neg_conf = neg_conf.max(t - s);
                }
            }
            let positive = match pos.cmp(&neg) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => match cfg.tie_break {
                    TieBreak::HigherConfidence => pos_conf >= neg_conf,
                    TieBreak::Positive => true,
                    TieBreak::Negative => false,
                },
            };
            u8::from(positive)
        })
        .collect())
}

/// Nodes `target` depends on, including itself and the input.
fn ancestors(net: &Network, target: NodeId) -> HashSet<NodeId> {
    let mut seen = HashSet::from([target]);
    let mut stack = vec![target];
    while let Some(i) = stack.pop() {
        for &j in &net.nodes()[i].inputs {
            if seen.insert(j) {
                stack.push(j);
            }
        }
    }
    seen
}

/// Join members at their penultimate features: the shared input feeds every
/// member up to its penultimate node, whose outputs are concatenated and
/// followed by dropout(0.2) → dense(1) → sigmoid.
///
/// Member weights are copied, so the joint network starts from whatever the
/// members learned; every copied parameter stays trainable. Member node
/// names are prefixed with the member name (plus an index on repeats).
pub fn build_concat_ensemble(members: &[&Network], seed: u64) -> Result<Network> {
    if members.len() < 2 {
        return Err(Error::param(format!(
            "a concatenation ensemble needs at least two members, got {}",
            members.len()
        )));
    }
    let input_shape = members[0].input_shape();
    if let Some(m) = members.iter().find(|m| m.input_shape() != input_shape) {
        return Err(Error::dim(format!(
            "member {} takes {:?} but {} takes {input_shape:?}",
            m.name(),
            m.input_shape(),
            members[0].name()
        )));
    }
    let names: Vec<&str> = members.iter().map(|m| m.name()).collect();
    let name = format!("{CONCAT_NETWORK_NAME}[{}]", names.join("+"));
    let mut b = GraphBuilder::new(name, input_shape, seed);
    let mut seen_names: HashMap<&str, usize> = HashMap::new();
    let mut features = Vec::with_capacity(members.len());
    for member in members {
        let count = seen_names.entry(member.name()).or_default();
        *count += 1;
        let prefix = match *count {
            1 => format!("{}.", member.name()),
            k => format!("{}_{k}.", member.name()),
        };
        let keep = ancestors(member, member.penultimate());
        let mut map: HashMap<NodeId, NodeId> = HashMap::from([(0, b.input())]);
        for (i, node) in member.nodes().iter().enumerate().skip(1) {
            if !keep.contains(&i) {
                continue;
            }
            let op = node.op.clone().expect("non-input node");
            let inputs: Vec<NodeId> = node.inputs.iter().map(|j| map[j]).collect();
            let id = b.push(format!("{prefix}{}", node.name), op, &inputs, node.params.clone())?;
            map.insert(i, id);
        }
        features.push(map[&member.penultimate()]);
    }
    let joined = b.concat("joint.concat", &features)?;
    b.binary_head("joint.", joined, JOINT_DROPOUT)?;
    b.finish(joined)
}

/// Member scores and the combined labels of a vote.
#[derive(Clone, Debug, PartialEq)]
pub struct VotePredictions {
    pub member_names: Vec<String>,
    pub member_scores: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl VotePredictions {
    /// CSV with columns `id`, one score column per member, `label`.
    pub fn write_csv(&self, ids: &[String], path: &Path) -> Result<()> {
        if ids.len() != self.labels.len() {
            return Err(Error::param(format!("{} ids for {} predictions", ids.len(), self.labels.len())));
        }
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec!["id".to_string()];
            header.extend(self.member_names.iter().cloned());
            header.push("label".into());
            let failed = |e: csv::Error| Error::io(path, std::io::Error::other(e));
            w.write_record(&header).map_err(failed)?;
            for (i, id) in ids.iter().enumerate() {
                let mut row = vec![id.clone()];
                row.extend(self.member_scores.iter().map(|s| s[i].to_string()));
                row.push(self.labels[i].to_string());
                w.write_record(&row).map_err(failed)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

fn require_trained(net: &Network) -> Result<()> {
    if net.trained_epochs() == 0 {
        return Err(Error::State(format!("model {} has not been trained", net.name())));
    }
    Ok(())
}

/// Score every member, vote, and report without AUC.
pub fn evaluate_vote(
    members: &[&Network],
    dataset: &LabeledDataset,
    cfg: &VoteConfig,
    batch_size: usize,
) -> Result<(MetricsReport, VotePredictions)> {
    for m in members {
        require_trained(m)?;
    }
    let member_scores = members
        .iter()
        .map(|m| evaluate(m, dataset, batch_size).map(|(_, s)| s))
        .collect::<Result<Vec<_>>>()?;
    let labels = majority_vote(&member_scores, cfg)?;
    let report = MetricsReport::from_labels(VOTE_DISPLAY_NAME, &labels, dataset.labels())?;
    let names = members.iter().map(|m| m.name().to_string()).collect();
    Ok((
        report,
        VotePredictions {
            member_names: names,
            member_scores,
            labels,
        },
    ))
}

/// Report for a trained joint network, AUC included.
pub fn evaluate_concat(joint: &Network, dataset: &LabeledDataset, threshold: f64, batch_size: usize) -> Result<MetricsReport> {
    require_trained(joint)?;
    let (_, scores) = evaluate(joint, dataset, batch_size)?;
    MetricsReport::from_scores(CONCAT_DISPLAY_NAME, &scores, dataset.labels(), threshold)
}
