//! Final dataset rows.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::extract::ExtractedItem;
use crate::matching::{normalize_identifier, VerifiedPair};
use crate::respond::ModelSolution;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub model: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judged_correct: Option<bool>,
}

/// One dataset line. Field order here is the serialized key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub problem: String,
    pub solution: String,
    pub problem_number: String,
    pub doc_id: String,
    pub pathway: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_solutions: Option<Vec<ModelAnswer>>,
    /// Not serialized; kept for ordering.
    #[serde(skip)]
    pub problem_id: String,
}

fn sort_key(r: &PairRecord) -> (String, Vec<u64>, String) {
    let parts = normalize_identifier(&r.problem_number).map(|k| k.parts).unwrap_or_default();
    (r.doc_id.clone(), parts, r.problem_id.clone())
}

/// Rows for verified pairs, sorted by document, normalized problem
/// number, then problem id. `model_solutions` is present only when
/// response models are configured; failed collections are left out.
pub fn build_records(
    pairs: &[VerifiedPair],
    items: &HashMap<String, ExtractedItem>,
    judged: &[ModelSolution],
    models: &[String],
) -> Result<Vec<PairRecord>, String> {
    let mut answers: HashMap<&str, Vec<&ModelSolution>> = HashMap::new();
    for s in judged {
        answers.entry(s.problem_id.as_str()).or_default().push(s);
    }
    let mut records = pairs
        .iter()
        .map(|p| {
            let problem = items.get(&p.problem_id).ok_or_else(|| format!("unknown problem {}", p.problem_id))?;
            let solution = items.get(&p.solution_id).ok_or_else(|| format!("unknown solution {}", p.solution_id))?;
            let model_solutions = (!models.is_empty()).then(|| {
                let mut list: Vec<ModelAnswer> = answers
                    .get(p.problem_id.as_str())
                    .map(|v| {
                        v.iter()
                            .map(|s| ModelAnswer {
                                model: s.model_name.clone(),
                                text: s.response_text.clone(),
                                judged_correct: s.judged_correct,
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                list.sort_by_key(|a| models.iter().position(|m| *m == a.model).unwrap_or(usize::MAX));
                list
            });
            Ok(PairRecord {
                problem: problem.body.clone(),
                solution: solution.body.clone(),
                problem_number: problem.raw_identifier.clone(),
                doc_id: p.doc_id.clone(),
                pathway: p.pathway.as_str().to_string(),
                model_solutions,
                problem_id: p.problem_id.clone(),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    records.sort_by_cached_key(sort_key);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::ItemKind;
    use crate::matching::Pathway;

    fn item(id: &str, kind: ItemKind, num: &str, body: &str, doc: &str) -> ExtractedItem {
        ExtractedItem {
            item_id: id.into(),
            kind,
            raw_identifier: num.into(),
            body: body.into(),
            doc_id: doc.into(),
            chunk_id: 0,
        }
    }

    fn pair(p: &str, s: &str, doc: &str) -> VerifiedPair {
        VerifiedPair {
            problem_id: p.into(),
            solution_id: s.into(),
            verdict_response: String::new(),
            pathway: Pathway::Numerical,
            candidate_rank: 1,
            doc_id: doc.into(),
        }
    }

    #[test]
    fn ordering_uses_numeric_identifier_parts() {
        let items: HashMap<String, ExtractedItem> = [
            item("b/p1", ItemKind::Problem, "10.2", "P b10", "b"),
            item("b/p2", ItemKind::Problem, "2.1", "P b2", "b"),
            item("a/p1", ItemKind::Problem, "3", "P a3", "a"),
            item("s", ItemKind::Solution, "", "S", "b"),
        ]
        .into_iter()
        .map(|i| (i.item_id.clone(), i))
        .collect();
        let pairs = vec![pair("b/p1", "s", "b"), pair("b/p2", "s", "b"), pair("a/p1", "s", "a")];
        let rows = build_records(&pairs, &items, &[], &[]).unwrap();
        let order: Vec<&str> = rows.iter().map(|r| r.problem.as_str()).collect();
        assert_eq!(order, ["P a3", "P b2", "P b10"]);
        assert!(rows.iter().all(|r| r.model_solutions.is_none()));
    }

    #[test]
    fn key_order_is_stable() {
        let r = PairRecord {
            problem: "p".into(),
            solution: "s".into(),
            problem_number: "1".into(),
            doc_id: "d".into(),
            pathway: "semantic".into(),
            model_solutions: Some(vec![ModelAnswer { model: "m".into(), text: "t".into(), judged_correct: Some(true) }]),
            problem_id: "x".into(),
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"problem":"p","solution":"s","problem_number":"1","doc_id":"d","pathway":"semantic","model_solutions":[{"model":"m","text":"t","judged_correct":true}]}"#
        );
    }
}
