//! Stage bodies. Each reads its inputs from upstream stage files and
//! returns the files it would write plus the counts it observed.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::audit::{AuditNote, Quarantined};
use crate::corpus::{filter_documents, load_catalog, retrieve_candidates, DocumentMeta};
use crate::extract::{extract_chunks, filter_items, ExtractedItem, ItemKind};
use crate::jsonl::{to_jsonl, write_atomic};
use crate::matching::{match_document, CandidateSolution, MatchContext, UnmatchedProblem, VerificationRecord, VerifiedPair};
use crate::render::{load_page, render_pages, store_pages, transcribe_pages, MarkdownPage, PageAudit, PageRecord};
use crate::respond::{collect_solutions, judge_solution, ModelSolution};
use crate::segment::{build_chunks, detect_all, line_count, BoundaryMarker, Chunk, WordSymbolEstimator};

use super::counts::*;
use super::dataset::build_records;
use super::manifest::{Stage, StageCounts};
use super::Pipeline;

pub struct StageOutput {
    pub files: Vec<(&'static str, Vec<u8>)>,
    pub counts: StageCounts,
}

impl StageOutput {
    fn new(counts: StageCounts) -> Self {
        Self { files: Vec::new(), counts }
    }

    fn file<T: Serialize>(mut self, name: &'static str, records: &[T]) -> Self {
        self.files.push((name, to_jsonl(records).expect("records serialize")));
        self
    }

    pub fn primary(&self) -> &[u8] {
        &self.files[0].1
    }
}

type StageResult = Result<StageOutput, String>;

fn wanted(filter: Option<&str>, doc_id: &str) -> bool {
    filter.map_or(true, |d| d == doc_id)
}

fn group_by_doc<T, F: Fn(&T) -> &str>(records: Vec<T>, key: F) -> Vec<(String, Vec<T>)> {
    let mut groups: Vec<(String, Vec<T>)> = Vec::new();
    let mut at: HashMap<String, usize> = HashMap::new();
    for r in records {
        let k = key(&r).to_string();
        let i = *at.entry(k.clone()).or_insert_with(|| {
            groups.push((k, Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push(r);
    }
    groups
}

impl Pipeline {
    pub(super) fn compute(&self, stage: Stage, doc: Option<&str>) -> StageResult {
        match stage {
            Stage::Retrieve => self.retrieve(doc),
            Stage::FilterDocs => self.filter_docs(doc),
            Stage::Render => self.render(doc),
            Stage::Transcribe => self.transcribe(doc),
            Stage::Segment => self.segment(doc),
            Stage::Extract => self.extract(doc),
            Stage::FilterItems => self.filter_items(doc),
            Stage::Match => self.match_stage(doc),
            Stage::Collect => self.collect(doc),
            Stage::Judge => self.judge(doc),
            Stage::Emit => self.emit(doc),
        }
    }

    fn retrieve(&self, doc: Option<&str>) -> StageResult {
        let catalog_path = self.loaded.resolve(&self.config().corpus.catalog);
        let catalog: Vec<DocumentMeta> = load_catalog(&catalog_path)
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter(|d| wanted(doc, &d.doc_id))
            .collect();
        let candidates = retrieve_candidates(&catalog, &self.config().corpus.keywords).map_err(|e| e.to_string())?;
        let hit: HashSet<&str> = candidates.iter().map(|d| d.doc_id.as_str()).collect();
        let misses: Vec<&DocumentMeta> = catalog.iter().filter(|d| !hit.contains(d.doc_id.as_str())).collect();
        let mut c = StageCounts { inputs: catalog.len() as u64, kept: candidates.len() as u64, ..Default::default() };
        c.drop("no_keyword", misses.len() as u64);
        Ok(StageOutput::new(c).file(CANDIDATES, &candidates).file(NO_KEYWORD, &misses))
    }

    fn filter_docs(&self, doc: Option<&str>) -> StageResult {
        let candidates: Vec<DocumentMeta> = read(&self.run_dir, Stage::Retrieve, CANDIDATES)?
            .into_iter()
            .filter(|d: &DocumentMeta| wanted(doc, &d.doc_id))
            .collect();
        let run = filter_documents(&self.gateway, &self.config().provider.models.filter, &candidates);
        let accepted = run.decisions.iter().filter(|d| d.accepted).count() as u64;
        let mut c = StageCounts { inputs: candidates.len() as u64, kept: accepted, ..Default::default() };
        c.drop("rejected", run.decisions.len() as u64 - accepted);
        c.drop("quarantined", run.quarantined.len() as u64);
        for q in &run.quarantined {
            log::warn!("filter-docs quarantined {}: {}", q.subject, q.reason);
        }
        Ok(StageOutput::new(c).file(DECISIONS, &run.decisions).file(QUARANTINE, &run.quarantined))
    }

    fn render(&self, doc: Option<&str>) -> StageResult {
        let docs: Vec<DocumentMeta> =
            accepted_documents(&self.run_dir)?.into_iter().filter(|d| wanted(doc, &d.doc_id)).collect();
        let rendered: Vec<Result<Vec<PageRecord>, Quarantined>> = docs
            .par_iter()
            .map(|d| {
                let fail = |reason: String| Quarantined {
                    stage: "render".into(),
                    subject: d.doc_id.clone(),
                    reason,
                    raw_response: String::new(),
                };
                let pages = render_pages(d, &self.config().render).map_err(|e| fail(e.to_string()))?;
                let records = store_pages(&self.doc_dir(&d.doc_id), &pages).map_err(|e| fail(e.to_string()))?;
                Ok(records
                    .into_iter()
                    .map(|mut r| {
                        r.path = r.path.strip_prefix(&self.run_dir).map(|p| p.to_path_buf()).unwrap_or(r.path);
                        r
                    })
                    .collect())
            })
            .collect();
        let mut pages = Vec::new();
        let mut failures = Vec::new();
        for r in rendered {
            match r {
                Ok(p) => pages.extend(p),
                Err(q) => {
                    log::warn!("render failed for {}: {}", q.subject, q.reason);
                    failures.push(q);
                }
            }
        }
        let rendered_docs = docs.len() - failures.len();
        let mut c = StageCounts { inputs: docs.len() as u64, kept: rendered_docs as u64, ..Default::default() };
        c.drop("render_failed", failures.len() as u64);
        c.extra.insert("pages".into(), pages.len() as u64);
        Ok(StageOutput::new(c).file(PAGES, &pages).file(FAILURES, &failures))
    }

    fn transcribe(&self, doc: Option<&str>) -> StageResult {
        let records: Vec<PageRecord> = read(&self.run_dir, Stage::Render, PAGES)?;
        let records: Vec<PageRecord> = records.into_iter().filter(|r| wanted(doc, &r.doc_id)).collect();
        let model = &self.config().provider.models.transcribe;
        let mut pages: Vec<MarkdownPage> = Vec::new();
        let mut audits: Vec<PageAudit> = Vec::new();
        for (doc_id, group) in group_by_doc(records, |r| r.doc_id.as_str()) {
            let images = group
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.path = self.run_dir.join(&r.path);
                    load_page(&r).map_err(|e| format!("{}: {e}", r.path.display()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let done = transcribe_pages(&self.gateway, model, &images);
            let md_dir = self.doc_dir(&doc_id).join("md");
            let mut doc_audits = Vec::new();
            for (page, audit) in done {
                if !page.failed {
                    let path = md_dir.join(format!("{:04}.md", page.page_index));
                    write_atomic(&path, page.markdown.as_bytes()).map_err(|e| format!("{}: {e}", path.display()))?;
                } else {
                    log::warn!("transcription failed for {} page {}", page.doc_id, page.page_index);
                }
                pages.push(page);
                doc_audits.push(audit);
            }
            let sidecar = md_dir.join("audit.jsonl");
            write_atomic(&sidecar, &to_jsonl(&doc_audits).expect("audits serialize"))
                .map_err(|e| format!("{}: {e}", sidecar.display()))?;
            audits.extend(doc_audits);
        }
        let failed = pages.iter().filter(|p| p.failed).count() as u64;
        let mut c = StageCounts { inputs: pages.len() as u64, kept: pages.len() as u64 - failed, ..Default::default() };
        c.drop("transcription_failed", failed);
        c.extra.insert("empty_pages".into(), pages.iter().filter(|p| p.is_empty && !p.failed).count() as u64);
        Ok(StageOutput::new(c).file(MARKDOWN, &pages).file(AUDIT, &audits))
    }

    fn segment(&self, doc: Option<&str>) -> StageResult {
        let pages: Vec<MarkdownPage> = read(&self.run_dir, Stage::Transcribe, MARKDOWN)?;
        let pages: Vec<MarkdownPage> = pages.into_iter().filter(|p| !p.failed && wanted(doc, &p.doc_id)).collect();
        let content: Vec<MarkdownPage> = pages.iter().filter(|p| p.has_content()).cloned().collect();
        let detected = detect_all(&self.gateway, &self.config().provider.models.segment, &content);
        let mut boundaries: Vec<BoundaryMarker> = Vec::new();
        let mut notes: Vec<AuditNote> = Vec::new();
        for (markers, note) in detected {
            boundaries.extend(markers);
            notes.extend(note);
        }
        let mut chunks: Vec<Chunk> = Vec::new();
        let mut by_doc: HashMap<&str, Vec<BoundaryMarker>> = HashMap::new();
        for b in &boundaries {
            by_doc.entry(b.doc_id.as_str()).or_default().push(b.clone());
        }
        for (doc_id, doc_pages) in group_by_doc(content.clone(), |p| p.doc_id.as_str()) {
            let markers = by_doc.remove(doc_id.as_str()).unwrap_or_default();
            let built = build_chunks(&doc_pages, &markers, self.config().segment.max_tokens, &WordSymbolEstimator)
                .map_err(|e| format!("{doc_id}: {e}"))?;
            chunks.extend(built);
        }
        let content_pages: Vec<ContentPage> = content
            .iter()
            .map(|p| ContentPage { doc_id: p.doc_id.clone(), page_index: p.page_index, lines: line_count(&p.markdown) })
            .collect();
        let mut c = StageCounts { inputs: pages.len() as u64, kept: content.len() as u64, ..Default::default() };
        c.drop("empty_page", (pages.len() - content.len()) as u64);
        c.extra.insert("chunks".into(), chunks.len() as u64);
        c.extra.insert("boundaries".into(), boundaries.len() as u64);
        Ok(StageOutput::new(c)
            .file(CHUNKS, &chunks)
            .file(BOUNDARIES, &boundaries)
            .file(CONTENT_PAGES, &content_pages)
            .file(NOTES, &notes))
    }

    fn extract(&self, doc: Option<&str>) -> StageResult {
        let chunks: Vec<Chunk> = read(&self.run_dir, Stage::Segment, CHUNKS)?;
        let chunks: Vec<Chunk> = chunks.into_iter().filter(|c| wanted(doc, &c.doc_id)).collect();
        let results = extract_chunks(&self.gateway, &self.config().provider.models.extract, &chunks);
        let mut items: Vec<ExtractedItem> = Vec::new();
        let mut done: Vec<ExtractedChunk> = Vec::new();
        let mut failures: Vec<Quarantined> = Vec::new();
        let mut notes: Vec<AuditNote> = Vec::new();
        for r in results {
            match r.failure {
                Some(q) => {
                    log::warn!("extraction quarantined {}: {}", q.subject, q.reason);
                    failures.push(q);
                }
                None => {
                    done.push(ExtractedChunk {
                        doc_id: r.doc_id,
                        chunk_id: r.chunk_id,
                        items: r.items.len(),
                        notes: r.notes.len(),
                    });
                    items.extend(r.items);
                    notes.extend(r.notes);
                }
            }
        }
        let problems = items.iter().filter(|i| i.kind == ItemKind::Problem).count() as u64;
        let mut c = StageCounts { inputs: chunks.len() as u64, kept: done.len() as u64, ..Default::default() };
        c.drop("extraction_failed", failures.len() as u64);
        c.extra.insert("items".into(), items.len() as u64);
        c.extra.insert("problems".into(), problems);
        c.extra.insert("solutions".into(), items.len() as u64 - problems);
        Ok(StageOutput::new(c)
            .file(ITEMS, &items)
            .file(EXTRACTED_CHUNKS, &done)
            .file(FAILURES, &failures)
            .file(NOTES, &notes))
    }

    fn filter_items(&self, doc: Option<&str>) -> StageResult {
        let items: Vec<ExtractedItem> = read(&self.run_dir, Stage::Extract, ITEMS)?;
        let items: Vec<ExtractedItem> = items.into_iter().filter(|i| wanted(doc, &i.doc_id)).collect();
        let cfg = self.config();
        let double_check = cfg.extract.llm_double_check.then_some((&self.gateway, cfg.provider.models.completeness.as_str()));
        let outcomes = filter_items(&items, &self.rules, double_check);
        let mut c = StageCounts { inputs: items.len() as u64, ..Default::default() };
        for o in &outcomes {
            if o.kept {
                c.kept += 1;
            } else {
                c.drop(o.reason.as_str(), 1);
            }
        }
        Ok(StageOutput::new(c).file(OUTCOMES, &outcomes))
    }

    fn match_stage(&self, doc: Option<&str>) -> StageResult {
        let kept: Vec<ExtractedItem> = kept_items(&self.run_dir)?.into_iter().filter(|i| wanted(doc, &i.doc_id)).collect();
        let ctx = MatchContext {
            gateway: &self.gateway,
            embedder: &self.embedder,
            verify_model: &self.config().provider.models.verify,
            config: &self.config().matching,
        };
        let groups = group_by_doc(kept, |i| i.doc_id.as_str());
        let results: Vec<_> = groups
            .par_iter()
            .map(|(_, items)| {
                let (problems, solutions): (Vec<ExtractedItem>, Vec<ExtractedItem>) =
                    items.iter().cloned().partition(|i| i.kind == ItemKind::Problem);
                (problems.len(), solutions.len(), match_document(&ctx, &problems, &solutions))
            })
            .collect();
        let mut pairs: Vec<VerifiedPair> = Vec::new();
        let mut unmatched: Vec<UnmatchedProblem> = Vec::new();
        let mut candidates: Vec<CandidateSolution> = Vec::new();
        let mut verifications: Vec<VerificationRecord> = Vec::new();
        let mut notes: Vec<AuditNote> = Vec::new();
        let (mut problems, mut solutions) = (0u64, 0u64);
        for (p, s, m) in results {
            problems += p as u64;
            solutions += s as u64;
            pairs.extend(m.pairs);
            unmatched.extend(m.unmatched);
            candidates.extend(m.candidates);
            verifications.extend(m.verifications);
            notes.extend(m.notes);
        }
        let mut c = StageCounts { inputs: problems, kept: pairs.len() as u64, ..Default::default() };
        c.drop("unmatched", unmatched.len() as u64);
        c.extra.insert("solutions".into(), solutions);
        c.extra.insert("candidates".into(), candidates.len() as u64);
        c.extra.insert("verifications".into(), verifications.len() as u64);
        Ok(StageOutput::new(c)
            .file(PAIRS, &pairs)
            .file(CANDIDATES, &candidates)
            .file(VERIFICATIONS, &verifications)
            .file(UNMATCHED, &unmatched)
            .file(NOTES, &notes))
    }

    fn matched_problems(&self, doc: Option<&str>) -> Result<(Vec<VerifiedPair>, HashMap<String, ExtractedItem>), String> {
        let pairs: Vec<VerifiedPair> = read(&self.run_dir, Stage::Match, PAIRS)?;
        let pairs: Vec<VerifiedPair> = pairs.into_iter().filter(|p| wanted(doc, &p.doc_id)).collect();
        let items: Vec<ExtractedItem> = read(&self.run_dir, Stage::Extract, ITEMS)?;
        let by_id = items.into_iter().map(|i| (i.item_id.clone(), i)).collect();
        Ok((pairs, by_id))
    }

    fn collect(&self, doc: Option<&str>) -> StageResult {
        let (pairs, items) = self.matched_problems(doc)?;
        let problems = pairs
            .iter()
            .map(|p| items.get(&p.problem_id).cloned().ok_or_else(|| format!("pair names unknown problem {}", p.problem_id)))
            .collect::<Result<Vec<_>, _>>()?;
        let models = &self.config().respond.models;
        let solutions = collect_solutions(&self.gateway, &problems, models);
        let failed = solutions.iter().filter(|s| s.failure.is_some()).count() as u64;
        let mut c = StageCounts {
            inputs: (problems.len() * models.len()) as u64,
            kept: solutions.len() as u64 - failed,
            ..Default::default()
        };
        c.drop("collect_failed", failed);
        let distinct = solutions.iter().map(|s| s.model_name.as_str()).collect::<HashSet<_>>().len();
        c.extra.insert("models".into(), distinct as u64);
        Ok(StageOutput::new(c).file(SOLUTIONS, &solutions))
    }

    fn judge(&self, doc: Option<&str>) -> StageResult {
        let (pairs, items) = self.matched_problems(doc)?;
        let reference: HashMap<&str, &str> = pairs.iter().map(|p| (p.problem_id.as_str(), p.solution_id.as_str())).collect();
        let solutions: Vec<ModelSolution> = read(&self.run_dir, Stage::Collect, SOLUTIONS)?;
        let solutions: Vec<ModelSolution> =
            solutions.into_iter().filter(|s| s.failure.is_none() && reference.contains_key(s.problem_id.as_str())).collect();
        let judge_model = &self.config().provider.models.judge;
        let judged: Vec<(ModelSolution, Option<AuditNote>)> = solutions
            .par_iter()
            .map(|s| {
                let problem = &items[&s.problem_id];
                let solution = &items[reference[s.problem_id.as_str()]];
                let (verdict, response, note) = judge_solution(&self.gateway, judge_model, problem, s, solution);
                (ModelSolution { judged_correct: verdict, judge_response: response, ..s.clone() }, note)
            })
            .collect();
        let (judged, notes): (Vec<ModelSolution>, Vec<Option<AuditNote>>) = judged.into_iter().unzip();
        let notes: Vec<AuditNote> = notes.into_iter().flatten().collect();
        let set = judged.iter().filter(|s| s.judged_correct.is_some()).count() as u64;
        let mut c = StageCounts { inputs: judged.len() as u64, kept: set, ..Default::default() };
        c.drop("unjudged", judged.len() as u64 - set);
        c.extra.insert("judged_correct".into(), judged.iter().filter(|s| s.judged_correct == Some(true)).count() as u64);
        Ok(StageOutput::new(c).file(JUDGED, &judged).file(NOTES, &notes))
    }

    fn emit(&self, doc: Option<&str>) -> StageResult {
        let (pairs, items) = self.matched_problems(doc)?;
        let judged: Vec<ModelSolution> = read(&self.run_dir, Stage::Judge, JUDGED)?;
        let models = &self.config().respond.models;
        let records = build_records(&pairs, &items, &judged, models)?;
        if records.is_empty() {
            log::warn!("no verified pairs; the dataset is empty");
        }
        let c = StageCounts { inputs: pairs.len() as u64, kept: records.len() as u64, ..Default::default() };
        Ok(StageOutput::new(c).file(DATASET, &records))
    }
}

/// Per-reason drop tallies across finished stages, keyed `stage/reason`.
pub fn drop_histogram(stages: &[(Stage, StageCounts)]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for (stage, c) in stages {
        for (reason, n) in &c.dropped {
            out.insert(format!("{}/{reason}", stage.name()), *n);
        }
    }
    out
}

