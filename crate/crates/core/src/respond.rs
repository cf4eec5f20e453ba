//! Collecting reasoning-model solutions for matched problems and judging
//! them against the verified reference solutions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::AuditNote;
use crate::extract::ExtractedItem;
use crate::matching::parse_verification;
use crate::prompts;
use crate::provider::{ChatGateway, ChatRequest, Reask};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSolution {
    pub problem_id: String,
    pub model_name: String,
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judged_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_response: Option<String>,
    /// Set when the model could not be reached; `response_text` is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

pub fn build_solve_prompt(problem: &ExtractedItem) -> String {
    prompts::render(prompts::SOLVE_PROBLEM, &[("problem", &problem.body)])
}

pub fn build_judge_prompt(problem: &str, reference: &str, candidate: &str) -> String {
    prompts::render(
        prompts::JUDGE_SOLUTION,
        &[("problem", problem), ("reference", reference), ("candidate", candidate)],
    )
}

pub fn collect_solution(gateway: &ChatGateway, problem: &ExtractedItem, model_name: &str) -> ModelSolution {
    let request = ChatRequest::new(model_name, build_solve_prompt(problem));
    let (response_text, failure) = match gateway.complete(&request) {
        Ok(r) => (r.text, None),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    ModelSolution {
        problem_id: problem.item_id.clone(),
        model_name: model_name.to_string(),
        response_text,
        judged_correct: None,
        judge_response: None,
        failure,
    }
}

/// One solution per (problem, model), ordered by problem then model.
pub fn collect_solutions(gateway: &ChatGateway, problems: &[ExtractedItem], models: &[String]) -> Vec<ModelSolution> {
    let jobs: Vec<(&ExtractedItem, &String)> = problems.iter().flat_map(|p| models.iter().map(move |m| (p, m))).collect();
    jobs.par_iter().map(|(p, m)| collect_solution(gateway, p, m)).collect()
}

/// Asks the judge model whether `solution` agrees with `reference`.
/// `None` (plus a note) when no verdict parses after one re-ask.
pub fn judge_solution(
    gateway: &ChatGateway,
    judge_model: &str,
    problem: &ExtractedItem,
    solution: &ModelSolution,
    reference: &ExtractedItem,
) -> (Option<bool>, Option<String>, Option<AuditNote>) {
    let request = ChatRequest::new(judge_model, build_judge_prompt(&problem.body, &reference.body, &solution.response_text));
    let subject = format!("{}@{}", solution.problem_id, solution.model_name);
    match gateway.complete_parsed(&request, prompts::REASK_VERDICT, parse_verification) {
        Ok(Reask::Parsed { value, response, .. }) => (Some(value), Some(response), None),
        Ok(Reask::Unparsed { response, error }) => {
            (None, Some(response), Some(AuditNote::new("judge", subject, format!("verdict left unset: {error}"))))
        }
        Err(e) => (None, None, Some(AuditNote::new("judge", subject, format!("verdict left unset: provider: {e}")))),
    }
}
