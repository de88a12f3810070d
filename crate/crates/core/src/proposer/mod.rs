//! Sources of candidate dynamics programs: the built-in registry, and an
//! optional remote language-model endpoint whose replies are parsed,
//! validated and smoke-tested before use.
//!
//! Returned text is only ever handed to the DSL parser; nothing else
//! interprets it.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::GRAMMAR_REFERENCE;
use crate::dynamics::{builtin_templates, transition, DynamicsProgram};
use crate::env::EnvKind;
use crate::model::{Param, ParamVector, State, StateSchema, Trajectory};

const PROMPT_TEMPLATE: &str = include_str!("prompt.txt");
pub const MAX_EXAMPLES: usize = 3;
pub const MAX_EXAMPLE_STATES: usize = 20;
pub const DEFAULT_MAX_CANDIDATES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProposeError {
    #[error("unsupported environment `{0}`")]
    UnsupportedEnv(String),
    #[error("max_candidates must be at least 1")]
    NoCandidatesRequested,
}

#[derive(Debug, Clone)]
pub struct ProposalRequest {
    pub env_id: String,
    pub description: String,
    pub schema: Arc<StateSchema>,
    pub examples: Vec<Trajectory>,
    pub max_candidates: usize,
}

impl ProposalRequest {
    /// Keeps at most three examples, each truncated to twenty states.
    pub fn new(env: EnvKind, examples: &[Trajectory], max_candidates: usize) -> Result<Self, ProposeError> {
        if max_candidates == 0 {
            return Err(ProposeError::NoCandidatesRequested);
        }
        Ok(ProposalRequest {
            env_id: env.as_str().to_string(),
            description: env.description().to_string(),
            schema: env.schema(),
            examples: examples
                .iter()
                .take(MAX_EXAMPLES)
                .map(|t| t.truncated(MAX_EXAMPLE_STATES))
                .collect(),
            max_candidates,
        })
    }

    fn env(&self) -> Result<EnvKind, ProposeError> {
        self.env_id
            .parse()
            .map_err(|_| ProposeError::UnsupportedEnv(self.env_id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireParam {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub default: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub program: String,
    #[serde(default)]
    pub params: Vec<WireParam>,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalResponse {
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Clone, Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_candidates: usize,
}

/// Every registry template for the request's environment, distractor
/// included, in registry order.
pub fn registry_propose(request: &ProposalRequest) -> Result<Vec<DynamicsProgram>, ProposeError> {
    let env = request.env()?;
    Ok(builtin_templates().lookup(env).into_iter().cloned().collect())
}

pub fn build_prompt(request: &ProposalRequest) -> String {
    let mut schema = String::new();
    for a in request.schema.attributes() {
        let unit = serde_json::to_value(a.unit).ok();
        let role = serde_json::to_value(a.role).ok();
        let _ = writeln!(
            schema,
            "{}, {}, {}, {}, {}",
            a.name,
            role.as_ref().and_then(|v| v.as_str()).unwrap_or("?"),
            unit.as_ref().and_then(|v| v.as_str()).unwrap_or("?"),
            a.lower,
            a.upper
        );
    }
    let mut examples = String::new();
    for (i, t) in request.examples.iter().enumerate() {
        let _ = writeln!(examples, "trajectory {}:", i + 1);
        for s in t.states() {
            let row: Vec<String> = s.values().iter().map(|v| format!("{v:.5}")).collect();
            let _ = writeln!(examples, "  {}", row.join(", "));
        }
    }
    PROMPT_TEMPLATE
        .replace("{description}", &request.description)
        .replace("{schema}", schema.trim_end())
        .replace("{examples}", examples.trim_end())
        .replace("{grammar}", GRAMMAR_REFERENCE)
        .replace("{k}", &request.max_candidates.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Environment variable holding a bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            api_key_env: None,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProposalOutcome {
    pub programs: Vec<DynamicsProgram>,
    /// Why candidates were dropped or the registry was used instead.
    pub diagnostics: Vec<String>,
    pub used_fallback: bool,
}

fn send(request: &ProposalRequest, config: &RemoteConfig) -> Result<ProposalResponse, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
        .build()
        .into();
    let prompt = build_prompt(request);
    let mut req = agent.post(&config.endpoint);
    if let Some(var) = &config.api_key_env {
        match std::env::var(var) {
            Ok(key) => req = req.header("Authorization", &format!("Bearer {key}")),
            Err(_) => return Err(format!("environment variable `{var}` is not set")),
        }
    }
    let mut resp = req
        .send_json(WireRequest {
            prompt: &prompt,
            max_candidates: request.max_candidates,
        })
        .map_err(|e| format!("request failed: {e}"))?;
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| format!("reading response failed: {e}"))?;
    serde_json::from_str(&body).map_err(|e| format!("malformed response: {e}"))
}

/// A mid-range state used for the smoke test when no example is available.
fn probe_state(request: &ProposalRequest) -> State {
    match request.examples.first().and_then(|t| t.states().first()) {
        Some(s) => s.clone(),
        None => {
            let values = request
                .schema
                .attributes()
                .iter()
                .map(|a| {
                    if a.role.is_rate() {
                        0.0
                    } else {
                        0.5 * (a.lower + a.upper)
                    }
                })
                .collect();
            State::new_unchecked(request.schema.clone(), values)
        }
    }
}

/// Parses, validates and smoke-tests one returned candidate.
pub fn accept_candidate(
    id: &str,
    candidate: &WireCandidate,
    request: &ProposalRequest,
) -> Result<DynamicsProgram, String> {
    let params = ParamVector::new(
        candidate
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                value: p.default,
                lower: p.lower,
                upper: p.upper,
            })
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let prog = DynamicsProgram::from_source(id, request.schema.clone(), params, &candidate.program)
        .map_err(|e| e.to_string())?;
    transition(&prog, &probe_state(request)).map_err(|e| format!("smoke test failed: {e}"))?;
    Ok(prog)
}

/// Asks the remote endpoint for candidates. Never fails once the request is
/// well formed: any transport or validation problem falls back to the
/// registry. The distractor template is always appended.
pub fn remote_propose(
    request: &ProposalRequest,
    config: &RemoteConfig,
) -> Result<ProposalOutcome, ProposeError> {
    let env = request.env()?;
    let mut diagnostics = Vec::new();
    let mut programs = Vec::new();
    match send(request, config) {
        Ok(resp) => {
            if resp.candidates.len() > request.max_candidates {
                diagnostics.push(format!(
                    "endpoint returned {} candidates, keeping the first {}",
                    resp.candidates.len(),
                    request.max_candidates
                ));
            }
            for (i, c) in resp.candidates.iter().take(request.max_candidates).enumerate() {
                let id = format!("remote-{}", i + 1);
                match accept_candidate(&id, c, request) {
                    Ok(p) => programs.push(p),
                    Err(e) => diagnostics.push(format!("{id} rejected: {e}")),
                }
            }
        }
        Err(e) => diagnostics.push(e),
    }

    let used_fallback = programs.is_empty();
    let registry = builtin_templates();
    if used_fallback {
        diagnostics.push("no remote candidate survived; using the registry".into());
        programs = registry.lookup(env).into_iter().cloned().collect();
    } else {
        programs.push(registry.distractor(env).clone());
    }
    for d in &diagnostics {
        warn!("proposer: {d}");
    }
    Ok(ProposalOutcome {
        programs,
        diagnostics,
        used_fallback,
    })
}
