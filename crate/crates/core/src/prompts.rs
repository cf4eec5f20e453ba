//! Prompt templates shipped with the crate.
//!
//! Templates use `{{name}}` placeholders. Rendering is a single left-to-right
//! pass, so placeholder-looking text inside an interpolated value is never
//! expanded a second time.

pub const FILTER_DOCUMENTS: &str = include_str!("../prompts/filter_documents.txt");
pub const TRANSCRIBE_PAGE: &str = include_str!("../prompts/transcribe_page.txt");
pub const DETECT_BOUNDARIES: &str = include_str!("../prompts/detect_boundaries.txt");
pub const EXTRACT_ITEMS: &str = include_str!("../prompts/extract_items.txt");
pub const VERIFY_PAIR: &str = include_str!("../prompts/verify_pair.txt");
pub const SOLVE_PROBLEM: &str = include_str!("../prompts/solve_problem.txt");
pub const JUDGE_SOLUTION: &str = include_str!("../prompts/judge_solution.txt");
pub const CHECK_COMPLETENESS: &str = include_str!("../prompts/check_completeness.txt");

/// Appended to a request when the previous answer could not be parsed.
pub const REASK_DETERMINATION: &str = "Your previous answer did not end with the required block. \
Reply again and finish with exactly [Determine Begin]Yes[Determine End] or [Determine Begin]No[Determine End].";
pub const REASK_JSON_LIST: &str = "Your previous answer did not contain a fenced ```json block holding a JSON list. \
Reply again and finish with the list in a ```json fenced block.";
pub const REASK_VERDICT: &str = "Your previous answer did not end with the required block. \
Reply again and finish with exactly [Begin]True[End] or [Begin]False[End].";

/// Substitutes `{{key}}` placeholders. Unknown placeholders are left as-is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let name = &after[..close];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => {
                        out.push_str("{{");
                        out.push_str(name);
                        out.push_str("}}");
                    }
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Marks a prompt as a re-ask of `original`.
pub fn with_reask(original: &str, note: &str) -> String {
    format!("{original}\n\n{note}")
}
