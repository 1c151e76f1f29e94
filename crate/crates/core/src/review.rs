//! Human review queues: two rounds of segmentation verification and
//! adjudication of judge disagreements.
//!
//! Queue state is derived from the store on every call. Decisions are
//! appended to the decisions stage and carry the item version the
//! reviewer saw; a decision id is `<item>@v<version>`, so a replayed or
//! racing decision collides with the first one and is rejected.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{RawReport, RecordStore, Stage, StageRecord, StoreError};
use crate::decompose::{
    submit_verification, Dimension, DimensionDecision, HierarchicalRecord, Round, VerificationDecision, VerifiedRecord,
};
use crate::medihall::{Adjudication, HallucinationLabel, JudgmentRecord};

pub const DEFAULT_PAGE_SIZE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewKind {
    SegmentationRound1,
    SegmentationRound2,
    Adjudication,
}

impl ReviewKind {
    pub const ALL: [ReviewKind; 3] =
        [ReviewKind::SegmentationRound1, ReviewKind::SegmentationRound2, ReviewKind::Adjudication];

    pub fn as_str(self) -> &'static str {
        match self {
            ReviewKind::SegmentationRound1 => "segmentation_round1",
            ReviewKind::SegmentationRound2 => "segmentation_round2",
            ReviewKind::Adjudication => "adjudication",
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            ReviewKind::SegmentationRound1 => "seg1:",
            ReviewKind::SegmentationRound2 => "seg2:",
            ReviewKind::Adjudication => "adj:",
        }
    }

    fn of_item(item_id: &str) -> Option<(ReviewKind, &str)> {
        ReviewKind::ALL.into_iter().find_map(|k| item_id.strip_prefix(k.prefix()).map(|rest| (k, rest)))
    }
}

impl fmt::Display for ReviewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReviewKind {
    type Err = ReviewError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReviewKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| ReviewError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemState {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub kind: ReviewKind,
    pub version: u64,
    pub state: ItemState,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Decision {
    Segmentation {
        round: Round,
        #[serde(default)]
        dimensions: BTreeMap<Dimension, DimensionDecision>,
    },
    Adjudication {
        label: HallucinationLabel,
    },
    /// Promotion of round-1-complete records into the round-2 queue.
    Advance {
        report_ids: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision_id: String,
    pub item_id: String,
    pub reviewer_id: String,
    /// The item version the reviewer saw.
    pub version: u64,
    pub decision: Decision,
}

impl StageRecord for DecisionRecord {
    const STAGE: Stage = Stage::Decisions;

    fn record_id(&self) -> String {
        self.decision_id.clone()
    }

    fn parent(&self) -> Option<(Stage, String)> {
        match ReviewKind::of_item(&self.item_id) {
            Some((ReviewKind::Adjudication, judgment_id)) => Some((Stage::Judgments, judgment_id.to_string())),
            Some((_, report_id)) => Some((Stage::Decomposed, report_id.to_string())),
            None => None,
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.reviewer_id.trim().is_empty() {
            return Err("reviewer_id is empty".into());
        }
        let kind = ReviewKind::of_item(&self.item_id).map(|(k, _)| k);
        match (&self.decision, kind) {
            (Decision::Segmentation { round: Round::One, .. }, Some(ReviewKind::SegmentationRound1))
            | (Decision::Segmentation { round: Round::Two, .. }, Some(ReviewKind::SegmentationRound2))
            | (Decision::Adjudication { .. }, Some(ReviewKind::Adjudication))
            | (Decision::Advance { .. }, None) => Ok(()),
            _ => Err(format!("decision does not fit item {}", self.item_id)),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown queue kind {0:?} (segmentation_round1, segmentation_round2, adjudication)")]
    UnknownKind(String),
    #[error("unknown item {0}")]
    NotFound(String),
    #[error("item {item_id} is at version {current_version} ({state:?}); refetch before deciding")]
    Conflict { item_id: String, current_version: u64, state: ItemState },
    #[error("invalid decision: {0}")]
    Invalid(String),
    #[error("reviewer {0:?} is not on the reviewer list")]
    UnknownReviewer(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuePage {
    pub kind: ReviewKind,
    pub items: Vec<ReviewItem>,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueCounts {
    pub pending: usize,
    pub done: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub queues: BTreeMap<ReviewKind, QueueCounts>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvanceOutcome {
    pub promoted: Vec<String>,
}

/// Everything the queues need, read from the store in one pass.
struct Snapshot {
    items: Vec<ReviewItem>,
    latest: HashMap<String, HierarchicalRecord>,
    promoted: HashSet<String>,
    advances: usize,
}

impl Snapshot {
    fn load(store: &RecordStore) -> Result<Self, StoreError> {
        let raw: HashMap<String, RawReport> =
            store.read::<RawReport>()?.into_iter().map(|r| (r.report_id.clone(), r)).collect();
        let report_text = |id: &str| raw.get(id).map(|r| r.report_text.clone()).unwrap_or_default();

        let decomposed: Vec<HierarchicalRecord> = store.read()?;
        let order: Vec<String> = decomposed.iter().map(|r| r.report_id.clone()).collect();
        let mut latest: HashMap<String, HierarchicalRecord> =
            decomposed.into_iter().map(|r| (r.report_id.clone(), r)).collect();
        for VerifiedRecord(r) in store.read::<VerifiedRecord>()? {
            if latest.get(&r.report_id).is_none_or(|cur| r.version > cur.version) {
                latest.insert(r.report_id.clone(), r);
            }
        }

        let decisions: Vec<DecisionRecord> = store.read()?;
        let mut promoted_order = Vec::new();
        let mut promoted = HashSet::new();
        let mut adjudicated: HashMap<String, Adjudication> = HashMap::new();
        let mut advances = 0;
        for d in &decisions {
            match &d.decision {
                Decision::Advance { report_ids } => {
                    advances += 1;
                    for id in report_ids {
                        if promoted.insert(id.clone()) {
                            promoted_order.push(id.clone());
                        }
                    }
                }
                Decision::Adjudication { label } => {
                    adjudicated.insert(
                        d.item_id.clone(),
                        Adjudication { label: *label, adjudicator_id: d.reviewer_id.clone() },
                    );
                }
                Decision::Segmentation { .. } => {}
            }
        }

        let mut items = Vec::new();
        let seg_item = |kind: ReviewKind, r: &HierarchicalRecord, pending: bool| ReviewItem {
            item_id: format!("{}{}", kind.prefix(), r.report_id),
            kind,
            version: r.version,
            state: if pending { ItemState::Pending } else { ItemState::Done },
            payload: json!({ "record": r, "report_text": report_text(&r.report_id) }),
        };
        for id in &order {
            let r = &latest[id];
            items.push(seg_item(ReviewKind::SegmentationRound1, r, r.verification.next_round() == Some(Round::One)));
        }
        for id in &promoted_order {
            if let Some(r) = latest.get(id) {
                items.push(seg_item(
                    ReviewKind::SegmentationRound2,
                    r,
                    r.verification.next_round() == Some(Round::Two),
                ));
            }
        }
        for rec in store.read::<JudgmentRecord>()? {
            let agreed = matches!(
                (rec.judgment.verdicts[0].label(), rec.judgment.verdicts[1].label()),
                (Some(a), Some(b)) if a == b
            );
            if agreed {
                continue;
            }
            let item_id = format!("{}{}", ReviewKind::Adjudication.prefix(), rec.record_id());
            let mut judgment = rec.judgment.clone();
            let done = match adjudicated.get(&item_id) {
                Some(a) => {
                    let _ = judgment.adjudicate(a);
                    true
                }
                None => false,
            };
            items.push(ReviewItem {
                item_id,
                kind: ReviewKind::Adjudication,
                version: u64::from(done),
                state: if done { ItemState::Done } else { ItemState::Pending },
                payload: json!({
                    "run_id": rec.run_id,
                    "judgment": judgment,
                    "reference_text": report_text(&judgment.report_id),
                }),
            });
        }
        Ok(Snapshot { items, latest, promoted, advances })
    }
}

/// Pending items of `kind` in creation order, starting after `cursor`.
pub fn list_queue(
    store: &RecordStore,
    kind: ReviewKind,
    cursor: Option<&str>,
    limit: usize,
) -> Result<QueuePage, ReviewError> {
    let snap = Snapshot::load(store)?;
    let of_kind: Vec<&ReviewItem> = snap.items.iter().filter(|i| i.kind == kind).collect();
    let start = match cursor.filter(|c| !c.is_empty()) {
        None => 0,
        Some(c) => of_kind
            .iter()
            .position(|i| i.item_id == c)
            .map(|p| p + 1)
            .ok_or_else(|| ReviewError::Invalid(format!("unknown cursor {c:?}")))?,
    };
    let limit = limit.max(1);
    let pending: Vec<&ReviewItem> =
        of_kind[start..].iter().copied().filter(|i| i.state == ItemState::Pending).collect();
    let items: Vec<ReviewItem> = pending.iter().take(limit).map(|i| (*i).clone()).collect();
    let next_cursor = if pending.len() > limit { items.last().map(|i| i.item_id.clone()) } else { None };
    Ok(QueuePage { kind, items, next_cursor })
}

pub fn get_item(store: &RecordStore, item_id: &str) -> Result<ReviewItem, ReviewError> {
    Snapshot::load(store)?
        .items
        .into_iter()
        .find(|i| i.item_id == item_id)
        .ok_or_else(|| ReviewError::NotFound(item_id.to_string()))
}

pub fn progress(store: &RecordStore) -> Result<Progress, ReviewError> {
    let snap = Snapshot::load(store)?;
    let mut queues: BTreeMap<ReviewKind, QueueCounts> =
        ReviewKind::ALL.iter().map(|k| (*k, QueueCounts::default())).collect();
    for item in &snap.items {
        let c = queues.entry(item.kind).or_default();
        match item.state {
            ItemState::Pending => c.pending += 1,
            ItemState::Done => c.done += 1,
        }
    }
    Ok(Progress { queues })
}

/// Applies a reviewer decision to a pending item at `version`.
///
/// `decision` is the kind-specific body: a [`VerificationDecision`] for
/// segmentation items, `{"label": ...}` for adjudication items.
pub fn submit_decision(
    store: &mut RecordStore,
    item_id: &str,
    version: u64,
    reviewer_id: &str,
    decision: &Value,
) -> Result<ReviewItem, ReviewError> {
    store.refresh()?;
    let snap = Snapshot::load(store)?;
    let item =
        snap.items.iter().find(|i| i.item_id == item_id).ok_or_else(|| ReviewError::NotFound(item_id.to_string()))?;
    if item.state == ItemState::Done || item.version != version {
        return Err(ReviewError::Conflict {
            item_id: item_id.to_string(),
            current_version: item.version,
            state: item.state,
        });
    }
    if reviewer_id.trim().is_empty() {
        return Err(ReviewError::Invalid("reviewer_id is required".into()));
    }
    let decision_id = format!("{item_id}@v{version}");
    let conflict = |e: StoreError| match e {
        StoreError::Duplicate { .. } => {
            ReviewError::Conflict { item_id: item_id.to_string(), current_version: version, state: ItemState::Done }
        }
        other => ReviewError::Store(other),
    };

    match item.kind {
        ReviewKind::SegmentationRound1 | ReviewKind::SegmentationRound2 => {
            let round = if item.kind == ReviewKind::SegmentationRound1 { Round::One } else { Round::Two };
            let parsed: VerificationDecision =
                serde_json::from_value(decision.clone()).map_err(|e| ReviewError::Invalid(e.to_string()))?;
            let (_, report_id) = ReviewKind::of_item(item_id).expect("item id has a kind prefix");
            let current = &snap.latest[report_id];
            let next = submit_verification(current, &parsed, reviewer_id, round)
                .map_err(|e| ReviewError::Invalid(e.to_string()))?;
            let record = DecisionRecord {
                decision_id,
                item_id: item_id.to_string(),
                reviewer_id: reviewer_id.to_string(),
                version,
                decision: Decision::Segmentation { round, dimensions: parsed.dimensions },
            };
            store.append(&[record]).map_err(conflict)?;
            store.append(&[VerifiedRecord(next)])?;
        }
        ReviewKind::Adjudication => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct Body {
                label: HallucinationLabel,
            }
            let body: Body =
                serde_json::from_value(decision.clone()).map_err(|e| ReviewError::Invalid(e.to_string()))?;
            let record = DecisionRecord {
                decision_id,
                item_id: item_id.to_string(),
                reviewer_id: reviewer_id.to_string(),
                version,
                decision: Decision::Adjudication { label: body.label },
            };
            store.append(&[record]).map_err(conflict)?;
        }
    }
    get_item(store, item_id)
}

/// Promotes every record that finished round 1 into the round-2 queue.
pub fn advance_round(store: &mut RecordStore, reviewer_id: &str) -> Result<AdvanceOutcome, ReviewError> {
    if reviewer_id.trim().is_empty() {
        return Err(ReviewError::Invalid("reviewer_id is required".into()));
    }
    store.refresh()?;
    let snap = Snapshot::load(store)?;
    let mut promoted: Vec<String> = snap
        .latest
        .values()
        .filter(|r| r.verification.next_round() == Some(Round::Two) && !snap.promoted.contains(&r.report_id))
        .map(|r| r.report_id.clone())
        .collect();
    promoted.sort();
    if !promoted.is_empty() {
        store.append(&[DecisionRecord {
            decision_id: format!("advance:{}", snap.advances + 1),
            item_id: "rounds".into(),
            reviewer_id: reviewer_id.to_string(),
            version: snap.advances as u64,
            decision: Decision::Advance { report_ids: promoted.clone() },
        }])?;
    }
    Ok(AdvanceOutcome { promoted })
}

/// Judgment records with human adjudications applied, in store order.
pub fn resolved_judgments(store: &RecordStore) -> Result<Vec<JudgmentRecord>, StoreError> {
    let adjudications: HashMap<String, Adjudication> = store
        .read::<DecisionRecord>()?
        .into_iter()
        .filter_map(|d| match d.decision {
            Decision::Adjudication { label } => {
                Some((d.item_id, Adjudication { label, adjudicator_id: d.reviewer_id }))
            }
            _ => None,
        })
        .collect();
    let mut out: Vec<JudgmentRecord> = store.read()?;
    for rec in &mut out {
        let item_id = format!("{}{}", ReviewKind::Adjudication.prefix(), rec.record_id());
        if let Some(a) = adjudications.get(&item_id) {
            let _ = rec.judgment.adjudicate(a);
        }
    }
    Ok(out)
}
