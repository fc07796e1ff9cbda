//! Client for an external scoring service (COMET, attribute classifier).

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Comet,
    AttributeClassifier,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Comet => "comet",
            ScorerKind::AttributeClassifier => "attribute-classifier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    pub src: String,
    pub hyp: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub lang: String,
    pub attribute: String,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    scorer: &'a str,
    pairs: &'a [ScorePair],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

pub struct RemoteScorer {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        RemoteScorer {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    /// One score per pair, in pair order.
    pub fn score(&self, pairs: &[ScorePair], scorer: ScorerKind) -> Result<Vec<f64>, EvalError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let url = format!("{}/score", self.base_url);
        let body = serde_json::to_value(ScoreRequest { scorer: scorer.as_str(), pairs })
            .map_err(|e| EvalError::ScorerUnavailable(e.to_string()))?;
        let resp: ScoreResponse = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| EvalError::ScorerUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| EvalError::ScorerUnavailable(format!("bad response: {e}")))?;
        if resp.scores.len() != pairs.len() {
            return Err(EvalError::ScorerUnavailable(format!(
                "expected {} scores, got {}",
                pairs.len(),
                resp.scores.len()
            )));
        }
        if resp.scores.iter().any(|s| !s.is_finite()) {
            return Err(EvalError::ScorerUnavailable("non-finite score".into()));
        }
        Ok(resp.scores)
    }
}
