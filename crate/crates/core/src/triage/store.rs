use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::case::{Action, CaseSummary, DecidedBy, TriageCase};
use super::decision::{CaseState, Rule};
use super::pipeline::Assessment;
use crate::datasets::LabelTaxonomy;
use crate::image_model::write_ppm;
use crate::{Error, Result};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const HEATMAP_DIR: &str = "heatmaps";
pub const IMAGE_DIR: &str = "images";
pub const DEFAULT_PAGE_SIZE: usize = 20;

/// Source of case timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
    /// Called with every timestamp replayed from a journal.
    fn observe(&self, _at: u64) {}
}

/// Counts ticks; each `now()` is one more than the largest value seen.
#[derive(Debug, Default)]
pub struct LogicalClock(AtomicU64);

impl Clock for LogicalClock {
    fn now(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst) + 1
    }

    fn observe(&self, at: u64) {
        self.0.fetch_max(at, Ordering::SeqCst);
    }
}

/// Milliseconds since the Unix epoch.
#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    CaseCreated {
        case: Box<TriageCase>,
    },
    AutoResolved {
        case_id: String,
        rule: Option<Rule>,
        reason: String,
        decision: Action,
    },
    Escalated {
        case_id: String,
        rule: Option<Rule>,
        reason: String,
    },
    AnalystResolved {
        case_id: String,
        action: Action,
        analyst_id: String,
    },
}

impl JournalEvent {
    pub fn case_id(&self) -> &str {
        match self {
            JournalEvent::CaseCreated { case } => &case.id,
            JournalEvent::AutoResolved { case_id, .. }
            | JournalEvent::Escalated { case_id, .. }
            | JournalEvent::AnalystResolved { case_id, .. } => case_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub at: u64,
    #[serde(flatten)]
    pub event: JournalEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<CaseSummary>,
    /// 1-based.
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub pages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub by_state: BTreeMap<String, usize>,
    /// Keyed by predicted text class; `(none)` for cases without a comment.
    pub by_predicted_class: BTreeMap<String, usize>,
}

/// Case states as a fold over journal entries.
#[derive(Debug, Clone, Default)]
struct Ledger {
    cases: Vec<TriageCase>,
    index: HashMap<String, usize>,
    entries: Vec<JournalEntry>,
}

impl Ledger {
    fn case_mut(&mut self, id: &str) -> Result<&mut TriageCase> {
        let i = *self.index.get(id).ok_or_else(|| Error::UnknownCase(id.to_string()))?;
        Ok(&mut self.cases[i])
    }

    fn apply(&mut self, entry: JournalEntry) -> Result<()> {
        let bad_transition = |case: &TriageCase, to: &str| {
            Err(Error::InvalidArgument(format!(
                "case {} cannot move from {} to {to}",
                case.id,
                case.state.as_str()
            )))
        };
        match &entry.event {
            JournalEvent::CaseCreated { case } => {
                if self.index.contains_key(&case.id) {
                    return Err(Error::InvalidArgument(format!("case {} created twice", case.id)));
                }
                if case.state != CaseState::New {
                    return bad_transition(case, "new");
                }
                self.index.insert(case.id.clone(), self.cases.len());
                let mut case = (**case).clone();
                case.created_at = entry.at;
                case.updated_at = entry.at;
                self.cases.push(case);
            }
            JournalEvent::AutoResolved {
                case_id,
                rule,
                reason,
                decision,
            } => {
                let case = self.case_mut(case_id)?;
                if case.state != CaseState::New {
                    return bad_transition(case, "auto_resolved");
                }
                case.state = CaseState::AutoResolved;
                case.rule = *rule;
                case.reason = Some(reason.clone());
                case.decision = Some(decision.clone());
                case.decided_by = Some(DecidedBy::System);
                case.updated_at = entry.at;
            }
            JournalEvent::Escalated { case_id, rule, reason } => {
                let case = self.case_mut(case_id)?;
                if case.state != CaseState::New {
                    return bad_transition(case, "escalated");
                }
                case.state = CaseState::Escalated;
                case.rule = *rule;
                case.reason = Some(reason.clone());
                case.updated_at = entry.at;
            }
            JournalEvent::AnalystResolved {
                case_id,
                action,
                analyst_id,
            } => {
                let case = self.case_mut(case_id)?;
                if case.state != CaseState::Escalated {
                    return bad_transition(case, "analyst_resolved");
                }
                case.state = CaseState::AnalystResolved;
                if let Action::Reassign { label } = action {
                    case.label = Some(label.clone());
                }
                case.decision = Some(action.clone());
                case.decided_by = Some(DecidedBy::Analyst(analyst_id.clone()));
                case.updated_at = entry.at;
            }
        }
        self.entries.push(entry);
        Ok(())
    }
}

struct Inner {
    ledger: Ledger,
    journal: BufWriter<File>,
}

/// Journal-backed case store. Mutations are serialized behind one write
/// lock (the single writer); readers see a consistent snapshot.
pub struct CaseStore {
    dir: PathBuf,
    taxonomy: LabelTaxonomy,
    clock: Arc<dyn Clock>,
    inner: RwLock<Inner>,
}

/// Replays journal text into case states.
pub fn fold_journal(text: &str) -> Result<(Vec<TriageCase>, Vec<JournalEntry>)> {
    let mut ledger = Ledger::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let journal_err = |message: String| Error::Journal { line: i + 1, message };
        let entry: JournalEntry = serde_json::from_str(line).map_err(|e| journal_err(e.to_string()))?;
        ledger.apply(entry).map_err(|e| journal_err(e.to_string()))?;
    }
    Ok((ledger.cases, ledger.entries))
}

impl CaseStore {
    /// Opens (creating if needed) the store under `dir` and replays its
    /// journal.
    pub fn open(dir: impl AsRef<Path>, taxonomy: LabelTaxonomy, clock: Arc<dyn Clock>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        for sub in [HEATMAP_DIR, IMAGE_DIR] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(&dir, e))?;
        }
        let path = dir.join(JOURNAL_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let (cases, entries) = fold_journal(&text)?;
        for e in &entries {
            clock.observe(e.at);
        }
        let index = cases.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir,
            taxonomy,
            clock,
            inner: RwLock::new(Inner {
                ledger: Ledger { cases, index, entries },
                journal: BufWriter::new(file),
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn taxonomy(&self) -> &LabelTaxonomy {
        &self.taxonomy
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|p| p.into_inner())
    }

    /// Writes the events, then folds them in; the journal line lands before
    /// the in-memory state changes.
    fn append(&self, inner: &mut Inner, events: Vec<JournalEvent>) -> Result<()> {
        let path = self.dir.join(JOURNAL_FILE);
        let first_seq = inner.ledger.entries.len() as u64 + 1;
        let entries: Vec<JournalEntry> = events
            .into_iter()
            .zip(first_seq..)
            .map(|(event, seq)| JournalEntry {
                seq,
                at: self.clock.now(),
                event,
            })
            .collect();
        let mut lines = Vec::new();
        for entry in &entries {
            serde_json::to_writer(&mut lines, entry)?;
            lines.push(b'\n');
        }
        inner.journal.write_all(&lines).map_err(|e| Error::io(&path, e))?;
        inner.journal.flush().map_err(|e| Error::io(&path, e))?;
        for entry in entries {
            inner.ledger.apply(entry)?;
        }
        Ok(())
    }

    /// Stores a pipeline result as a new case, copying its image under
    /// `images/` and its heatmap (if any) under `heatmaps/`. A record with an
    /// empty id takes the case id.
    pub fn create(&self, mut assessment: Assessment) -> Result<TriageCase> {
        let mut inner = self.write();
        let id = format!("case-{:06}", inner.ledger.cases.len() + 1);
        if assessment.record.id.is_empty() {
            assessment.record.id = id.clone();
        }
        let image_path = match &assessment.image {
            Some(img) => {
                let rel = format!("{IMAGE_DIR}/{id}.ppm");
                write_ppm(img, self.dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        let heatmap_path = match &assessment.heatmap {
            Some(h) => {
                let rel = format!("{HEATMAP_DIR}/{id}.pgm");
                h.write_pgm(self.dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        let case = TriageCase {
            id: id.clone(),
            record: assessment.record,
            label: assessment.text_prediction.as_ref().map(|p| p.class.clone()),
            text_prediction: assessment.text_prediction,
            image_relevance: assessment.image_relevance,
            image_damage: assessment.image_damage,
            image_path,
            heatmap_path,
            state: CaseState::New,
            rule: None,
            reason: None,
            decision: None,
            decided_by: None,
            warnings: assessment.warnings,
            created_at: 0,
            updated_at: 0,
        };
        let outcome = match assessment.state {
            CaseState::AutoResolved => JournalEvent::AutoResolved {
                case_id: id.clone(),
                rule: assessment.rule,
                reason: assessment.reason,
                decision: Action::ApproveRefund,
            },
            _ => JournalEvent::Escalated {
                case_id: id.clone(),
                rule: assessment.rule,
                reason: assessment.reason,
            },
        };
        self.append(
            &mut inner,
            vec![JournalEvent::CaseCreated { case: Box::new(case) }, outcome],
        )?;
        let i = inner.ledger.index[&id];
        Ok(inner.ledger.cases[i].clone())
    }

    /// Records an analyst decision on an escalated case.
    pub fn analyst_resolve(&self, id: &str, action: Action, analyst_id: &str) -> Result<TriageCase> {
        if let Action::Reassign { label } = &action {
            if self.taxonomy.index_of(label).is_none() {
                return Err(Error::UnknownClass(label.clone()));
            }
        }
        let mut inner = self.write();
        let state = inner.ledger.case_mut(id)?.state;
        if state != CaseState::Escalated {
            return Err(Error::NotEscalated(id.to_string()));
        }
        self.append(
            &mut inner,
            vec![JournalEvent::AnalystResolved {
                case_id: id.to_string(),
                action,
                analyst_id: analyst_id.to_string(),
            }],
        )?;
        let i = inner.ledger.index[id];
        Ok(inner.ledger.cases[i].clone())
    }

    pub fn get(&self, id: &str) -> Option<TriageCase> {
        let inner = self.read();
        inner.ledger.index.get(id).map(|&i| inner.ledger.cases[i].clone())
    }

    pub fn cases(&self) -> Vec<TriageCase> {
        self.read().ledger.cases.clone()
    }

    pub fn entries(&self) -> Vec<JournalEntry> {
        self.read().ledger.entries.clone()
    }

    /// Journal entries concerning one case, in order.
    pub fn audit(&self, id: &str) -> Vec<JournalEntry> {
        self.read()
            .ledger
            .entries
            .iter()
            .filter(|e| e.event.case_id() == id)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.read().ledger.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cases (optionally of one state) ordered by creation time then id.
    pub fn queue(&self, state: Option<CaseState>, page: usize, page_size: usize) -> Result<Page> {
        if page == 0 || page_size == 0 {
            return Err(Error::InvalidArgument("page and page_size start at 1".into()));
        }
        let inner = self.read();
        let mut matching: Vec<&TriageCase> = inner
            .ledger
            .cases
            .iter()
            .filter(|c| state.is_none_or(|s| c.state == s))
            .collect();
        matching.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        let total = matching.len();
        let items = matching
            .iter()
            .skip((page - 1) * page_size)
            .take(page_size)
            .map(|c| CaseSummary::from(*c))
            .collect();
        Ok(Page {
            items,
            page,
            page_size,
            total,
            pages: total.div_ceil(page_size),
        })
    }

    pub fn stats(&self) -> Stats {
        let inner = self.read();
        let mut by_state: BTreeMap<String, usize> = [
            CaseState::AutoResolved,
            CaseState::Escalated,
            CaseState::AnalystResolved,
        ]
        .iter()
        .map(|s| (s.as_str().to_string(), 0))
        .collect();
        let mut by_predicted_class = BTreeMap::new();
        for c in &inner.ledger.cases {
            *by_state.entry(c.state.as_str().to_string()).or_default() += 1;
            let class = c.text_prediction.as_ref().map_or("(none)", |p| p.class.as_str());
            *by_predicted_class.entry(class.to_string()).or_default() += 1;
        }
        Stats {
            total: inner.ledger.cases.len(),
            by_state,
            by_predicted_class,
        }
    }
}
