use super::{AnswerUnit, OperatorContext, OperatorError};
use crate::chain::NodeId;
use crate::prompts::LINK;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Edges at or above this strength are highlighted by clients.
    pub display_threshold: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig { display_threshold: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkEdge {
    pub hypothesis_id: u64,
    pub premise_id: NodeId,
    pub strength: f64,
}

/// At most one edge per answer unit, ordered by hypothesis id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkMap {
    pub edges: Vec<LinkEdge>,
}

impl LinkMap {
    pub fn for_hypothesis(&self, id: u64) -> Option<&LinkEdge> {
        self.edges.iter().find(|e| e.hypothesis_id == id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkOutcome {
    pub map: LinkMap,
    /// Why no map could be produced, when the provider failed or its output
    /// could not be read.
    pub unavailable: Option<String>,
    /// One message per dropped edge.
    pub dropped: Vec<String>,
}

fn strip_fences(s: &str) -> &str {
    let t = s.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

fn as_id(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads the linker's JSON. Accepts a bare array, code fences, a single
/// object, or an object wrapping the array under one key.
pub fn parse_link_completion(
    completion: &str,
    premises: &BTreeSet<NodeId>,
    hypotheses: &BTreeSet<u64>,
) -> Result<(LinkMap, Vec<String>), String> {
    let body = strip_fences(completion);
    let value: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(first_err) => {
            let (Some(a), Some(b)) = (body.find('['), body.rfind(']')) else {
                return Err(format!("not JSON: {first_err}"));
            };
            if a >= b {
                return Err(format!("not JSON: {first_err}"));
            }
            serde_json::from_str(&body[a..=b]).map_err(|e| format!("not JSON: {e}"))?
        }
    };
    let items = match value {
        Value::Array(items) => items,
        Value::Object(ref m) if m.contains_key("hypothesis_id") => vec![value],
        Value::Object(m) => match m.into_iter().find_map(|(_, v)| match v {
            Value::Array(a) => Some(a),
            _ => None,
        }) {
            Some(a) => a,
            None => return Err("JSON object without a link array".into()),
        },
        _ => return Err("JSON is not an array of links".into()),
    };
    let mut best: BTreeMap<u64, LinkEdge> = BTreeMap::new();
    let mut dropped = Vec::new();
    for item in items {
        let h = item.get("hypothesis_id").and_then(as_id);
        let premise = item.get("entailing_premise");
        let p = premise.and_then(|p| p.get("premise_id")).and_then(as_id);
        let s = premise
            .and_then(|p| p.get("entailment_strength"))
            .and_then(|s| match s {
                Value::String(t) => t.trim().parse::<f64>().ok(),
                other => other.as_f64(),
            });
        let (Some(h), Some(p), Some(s)) = (h, p, s) else {
            dropped.push(format!("incomplete link entry: {item}"));
            continue;
        };
        if !hypotheses.contains(&h) {
            dropped.push(format!("unknown hypothesis id {h}"));
            continue;
        }
        if !premises.contains(&NodeId(p)) {
            dropped.push(format!("unknown premise id {p} for hypothesis {h}"));
            continue;
        }
        if !(s.is_finite() && (0.0..=1.0).contains(&s)) {
            dropped.push(format!("strength {s} out of range for hypothesis {h}"));
            continue;
        }
        let edge = LinkEdge { hypothesis_id: h, premise_id: NodeId(p), strength: s };
        match best.get(&h) {
            Some(prev) if prev.strength >= s => {
                dropped.push(format!("weaker duplicate edge for hypothesis {h}"));
            }
            Some(_) => {
                dropped.push(format!("weaker duplicate edge for hypothesis {h}"));
                best.insert(h, edge);
            }
            None => {
                best.insert(h, edge);
            }
        }
    }
    Ok((LinkMap { edges: best.into_values().collect() }, dropped))
}

/// Associates each answer unit with the reasoning node that best entails it.
pub async fn link(
    ctx: &OperatorContext,
    nodes: &[(NodeId, String)],
    units: &[AnswerUnit],
) -> Result<LinkOutcome, OperatorError> {
    let unavailable = |why: String| {
        tracing::warn!(reason = %why, "links unavailable");
        LinkOutcome { map: LinkMap::default(), unavailable: Some(why), dropped: Vec::new() }
    };
    if nodes.is_empty() || units.is_empty() {
        return Ok(unavailable("nothing to link".into()));
    }
    let premises = Value::Array(
        nodes.iter().map(|(id, text)| json!({"id": id.0, "content": text})).collect(),
    );
    let hypotheses = Value::Array(
        units.iter().map(|u| json!({"id": u.id, "content": u.text})).collect(),
    );
    let premises_s = serde_json::to_string_pretty(&premises).expect("json");
    let hypotheses_s = serde_json::to_string_pretty(&hypotheses).expect("json");
    let completion = match ctx
        .call(LINK, &[("premises", &premises_s), ("hypotheses", &hypotheses_s)])
        .await?
    {
        Ok(c) => c,
        Err(e) => return Ok(unavailable(e.to_string())),
    };
    let pids: BTreeSet<NodeId> = nodes.iter().map(|(id, _)| *id).collect();
    let hids: BTreeSet<u64> = units.iter().map(|u| u.id).collect();
    match parse_link_completion(&completion, &pids, &hids) {
        Ok((map, dropped)) => {
            for d in &dropped {
                tracing::warn!(edge = %d, "link edge dropped");
            }
            Ok(LinkOutcome { map, unavailable: None, dropped })
        }
        Err(e) => Ok(unavailable(e)),
    }
}
