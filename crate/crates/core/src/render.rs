//! Rasterizing documents to page images and transcribing pages to markdown.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocFormat, DocumentMeta};
use crate::jsonl::{sha256_hex, write_atomic};
use crate::prompts;
use crate::provider::{ChatGateway, ChatRequest, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageImage {
    pub doc_id: String,
    pub page_index: usize,
    pub image_bytes: Vec<u8>,
    pub width: u32,
    pub height: u32,
    pub dpi: u32,
}

/// On-disk record of a stored page image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    pub doc_id: String,
    pub page_index: usize,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub dpi: u32,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkdownPage {
    pub doc_id: String,
    pub page_index: usize,
    pub markdown: String,
    pub is_empty: bool,
    /// Placeholder for a page whose transcription failed; its markdown is
    /// always empty and the failure lives in the audit sidecar.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl MarkdownPage {
    /// True when the page contributes text downstream.
    pub fn has_content(&self) -> bool {
        !self.is_empty && !self.failed
    }
}

pub const TRANSCRIPTION_FAILED: &str = "TRANSCRIPTION_FAILED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageAudit {
    pub doc_id: String,
    pub page_index: usize,
    pub attempts: u32,
    pub from_cache: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub dpi: u32,
    pub min_dpi: u32,
    /// Rasterizer command per format. `{input}`, `{outdir}` and `{dpi}` are
    /// substituted; the command must leave numbered PNGs in `{outdir}`.
    pub commands: BTreeMap<DocFormat, String>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { dpi: 200, min_dpi: 72, commands: BTreeMap::new() }
    }
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("no renderer registered for format `{0}`")]
    UnsupportedFormat(String),
    #[error("renderer failed for {doc_id}: {message}")]
    RendererFailed { doc_id: String, message: String },
    #[error("document {0} rendered zero pages")]
    ZeroPages(String),
    #[error("dpi {dpi} is below the configured minimum {min}")]
    DpiTooLow { dpi: u32, min: u32 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Width and height from a PNG header.
pub fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    const SIG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    if bytes.len() < 24 || bytes[..8] != SIG || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
    Some((w, h))
}

/// Page number taken from the last digit run of a file stem.
fn page_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

fn collect_pngs(dir: &Path, doc_id: &str, dpi: u32) -> Result<Vec<PageImage>, RenderError> {
    let io = |source| RenderError::Io { path: dir.to_path_buf(), source };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort_by(|a, b| (page_number(a), a.file_name()).cmp(&(page_number(b), b.file_name())));
    let mut pages = Vec::with_capacity(files.len());
    for (index, file) in files.iter().enumerate() {
        let bytes = std::fs::read(file).map_err(|source| RenderError::Io { path: file.clone(), source })?;
        let (width, height) = png_dimensions(&bytes).ok_or_else(|| RenderError::RendererFailed {
            doc_id: doc_id.to_string(),
            message: format!("{} is not a PNG", file.display()),
        })?;
        pages.push(PageImage { doc_id: doc_id.to_string(), page_index: index, image_bytes: bytes, width, height, dpi });
    }
    if pages.is_empty() {
        return Err(RenderError::ZeroPages(doc_id.to_string()));
    }
    Ok(pages)
}

/// One image per physical page, ordered by page number and indexed from 0.
///
/// A document whose path is a directory is treated as pre-rendered and its
/// PNGs are read directly. Otherwise the format's command template runs
/// into a scratch directory.
pub fn render_pages(doc: &DocumentMeta, config: &RenderConfig) -> Result<Vec<PageImage>, RenderError> {
    if config.dpi < config.min_dpi {
        return Err(RenderError::DpiTooLow { dpi: config.dpi, min: config.min_dpi });
    }
    if doc.path.is_dir() {
        return collect_pngs(&doc.path, &doc.doc_id, config.dpi);
    }
    let template = config
        .commands
        .get(&doc.format)
        .ok_or_else(|| RenderError::UnsupportedFormat(doc.format.as_str().to_string()))?;
    let scratch = tempfile::tempdir().map_err(|source| RenderError::Io { path: std::env::temp_dir(), source })?;
    let dpi = config.dpi.to_string();
    let input = doc.path.to_string_lossy();
    let outdir = scratch.path().to_string_lossy();
    let args: Vec<String> = template
        .split_whitespace()
        .map(|a| a.replace("{input}", &input).replace("{outdir}", &outdir).replace("{dpi}", &dpi))
        .collect();
    let failed = |message: String| RenderError::RendererFailed { doc_id: doc.doc_id.clone(), message };
    let (program, rest) = args.split_first().ok_or_else(|| failed("empty command template".into()))?;
    let output = Command::new(program).args(rest).output().map_err(|e| failed(format!("{program}: {e}")))?;
    if !output.status.success() {
        return Err(failed(format!(
            "{program} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    collect_pngs(scratch.path(), &doc.doc_id, config.dpi)
}

/// Writes pages to `<doc_dir>/pages/NNNN.png`.
pub fn store_pages(doc_dir: &Path, pages: &[PageImage]) -> std::io::Result<Vec<PageRecord>> {
    pages
        .iter()
        .map(|p| {
            let path = doc_dir.join("pages").join(format!("{:04}.png", p.page_index));
            write_atomic(&path, &p.image_bytes)?;
            Ok(PageRecord {
                doc_id: p.doc_id.clone(),
                page_index: p.page_index,
                path,
                width: p.width,
                height: p.height,
                dpi: p.dpi,
                sha256: sha256_hex(&p.image_bytes),
            })
        })
        .collect()
}

pub fn load_page(record: &PageRecord) -> std::io::Result<PageImage> {
    Ok(PageImage {
        doc_id: record.doc_id.clone(),
        page_index: record.page_index,
        image_bytes: std::fs::read(&record.path)?,
        width: record.width,
        height: record.height,
        dpi: record.dpi,
    })
}

/// Whether a transcription response marks a blank page.
pub fn is_blank_response(text: &str) -> bool {
    let t = text.trim();
    t == "empty" || t == "`empty`"
}

pub fn transcribe_page(
    gateway: &ChatGateway,
    model: &str,
    image: &PageImage,
) -> Result<(MarkdownPage, PageAudit), ProviderError> {
    let request = ChatRequest::new(model, prompts::TRANSCRIBE_PAGE).with_image(image.image_bytes.clone());
    let response = gateway.complete(&request)?;
    let is_empty = is_blank_response(&response.text);
    let page = MarkdownPage {
        doc_id: image.doc_id.clone(),
        page_index: image.page_index,
        markdown: if is_empty { String::new() } else { response.text },
        is_empty,
        failed: false,
    };
    let audit = PageAudit {
        doc_id: image.doc_id.clone(),
        page_index: image.page_index,
        attempts: response.attempts,
        from_cache: response.from_cache,
        marker: None,
        error: None,
    };
    Ok((page, audit))
}

/// Transcribes every page concurrently. A page that still fails after
/// retries becomes an empty `failed` placeholder so indices stay dense.
pub fn transcribe_pages(gateway: &ChatGateway, model: &str, images: &[PageImage]) -> Vec<(MarkdownPage, PageAudit)> {
    images
        .par_iter()
        .map(|image| match transcribe_page(gateway, model, image) {
            Ok(done) => done,
            Err(e) => {
                let attempts = match &e {
                    ProviderError::RetriesExhausted { attempts, .. } => *attempts,
                    _ => 1,
                };
                (
                    MarkdownPage {
                        doc_id: image.doc_id.clone(),
                        page_index: image.page_index,
                        markdown: String::new(),
                        is_empty: false,
                        failed: true,
                    },
                    PageAudit {
                        doc_id: image.doc_id.clone(),
                        page_index: image.page_index,
                        attempts,
                        from_cache: false,
                        marker: Some(TRANSCRIPTION_FAILED.to_string()),
                        error: Some(e.to_string()),
                    },
                )
            }
        })
        .collect()
}
