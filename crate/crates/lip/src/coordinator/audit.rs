//! The semantic audit log.
//!
//! Every pipeline stage appends one immutable record with a strictly
//! increasing sequence number. Records carry the reasoning context —
//! scores, rationales, entropy values, policy reasons — so the question
//! "why did this coordination outcome happen" can be answered after the
//! interaction is gone. Audit records deliberately survive dissolution:
//! they are governance records, not coordination artifacts, and are
//! excluded from residual-coupling accounting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CoordinatorError;
use crate::protocol::canonical::to_canonical_string;
use crate::protocol::{transition, InteractionState, MessageType, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditEvent {
    IntentReceived,
    Adjudicated,
    RoundCompleted,
    NonProgress,
    PolicyDecision,
    PlanComposed,
    Stabilized,
    ExecutionStarted,
    ExecutionCompleted,
    FailureSignal,
    FallbackTriggered,
    Dissolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub interaction_id: String,
    pub event: AuditEvent,
    pub detail: Value,
    pub at: i64,
}

/// Append-only audit log, optionally mirrored to one line-delimited
/// canonical-JSON file per day under a directory.
#[derive(Debug, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    seq: u64,
    dir: Option<PathBuf>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Self, CoordinatorError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| CoordinatorError::Audit(format!("{}: {e}", dir.display())))?;
        Ok(AuditLog {
            dir: Some(dir),
            ..AuditLog::default()
        })
    }

    pub fn append(
        &mut self,
        interaction_id: &str,
        event: AuditEvent,
        detail: Value,
        at: i64,
    ) -> Result<&AuditRecord, CoordinatorError> {
        self.seq += 1;
        let record = AuditRecord {
            seq: self.seq,
            interaction_id: interaction_id.to_string(),
            event,
            detail,
            at,
        };
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("audit-{}.log", date_stamp(at)));
            let line = to_canonical_string(&record)
                .map_err(|e| CoordinatorError::Audit(e.to_string()))?;
            let mut file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| CoordinatorError::Audit(format!("{}: {e}", path.display())))?;
            writeln!(file, "{line}")
                .map_err(|e| CoordinatorError::Audit(format!("{}: {e}", path.display())))?;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    /// All records for one interaction, in sequence order. Dissolved
    /// interactions remain queryable; an unknown id yields an empty list.
    pub fn query(&self, interaction_id: &str) -> Vec<&AuditRecord> {
        self.records
            .iter()
            .filter(|r| r.interaction_id == interaction_id)
            .collect()
    }

    /// Current audit file path for the given timestamp, when file-backed.
    pub fn file_for(&self, at: i64) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("audit-{}.log", date_stamp(at))))
    }
}

/// Parse an audit file, enforcing strictly increasing sequence numbers.
/// Corrupt lines and sequence disorder are structural errors, not
/// invariant failures.
pub fn load_audit_file(path: &Path) -> Result<Vec<AuditRecord>, CoordinatorError> {
    let data = fs::read_to_string(path)
        .map_err(|e| CoordinatorError::Audit(format!("{}: {e}", path.display())))?;
    parse_audit_lines(&data)
}

pub fn parse_audit_lines(data: &str) -> Result<Vec<AuditRecord>, CoordinatorError> {
    let mut records = Vec::new();
    let mut last_seq = 0u64;
    for (idx, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AuditRecord = serde_json::from_str(line).map_err(|e| {
            CoordinatorError::CorruptAudit {
                line: idx + 1,
                detail: e.to_string(),
            }
        })?;
        if record.seq <= last_seq {
            return Err(CoordinatorError::CorruptAudit {
                line: idx + 1,
                detail: format!("seq {} not after {}", record.seq, last_seq),
            });
        }
        last_seq = record.seq;
        records.push(record);
    }
    Ok(records)
}

/// Map one audit event onto the state machine. Events that do not change
/// lifecycle state return `None`.
fn event_transition(
    state: InteractionState,
    record: &AuditRecord,
) -> Option<(MessageType, Role)> {
    let detail_bool = |key: &str| record.detail.get(key).and_then(Value::as_bool).unwrap_or(false);
    match record.event {
        AuditEvent::RoundCompleted | AuditEvent::NonProgress
            if matches!(state, InteractionState::Proposed | InteractionState::Renegotiating) =>
        {
            Some((MessageType::Offer, Role::Responder))
        }
        AuditEvent::Stabilized => {
            let role = if detail_bool("pre_agreed") {
                Role::Coordinator
            } else {
                Role::Responder
            };
            Some((MessageType::Accept, role))
        }
        AuditEvent::ExecutionStarted => Some((MessageType::Execute, Role::Initiator)),
        AuditEvent::ExecutionCompleted => {
            let role = if detail_bool("by_coordinator") {
                Role::Coordinator
            } else {
                Role::Responder
            };
            Some((MessageType::Complete, role))
        }
        AuditEvent::FailureSignal => {
            let role = if state == InteractionState::Negotiating {
                Role::Coordinator
            } else {
                Role::Responder
            };
            Some((MessageType::Reject, role))
        }
        AuditEvent::Dissolved => Some((MessageType::Dissolve, Role::Coordinator)),
        _ => None,
    }
}

/// Replay an audit log through the state machine, yielding the final
/// state per interaction. Fails on any illegal implied transition.
pub fn fold_states(
    records: &[AuditRecord],
) -> Result<BTreeMap<String, InteractionState>, CoordinatorError> {
    let mut states: BTreeMap<String, InteractionState> = BTreeMap::new();
    for record in records {
        let id = record.interaction_id.clone();
        match record.event {
            AuditEvent::IntentReceived => {
                if states.contains_key(&id) {
                    return Err(CoordinatorError::ReplayViolation {
                        seq: record.seq,
                        detail: format!("duplicate intent for {id}"),
                    });
                }
                states.insert(id, InteractionState::Proposed);
            }
            _ => {
                let Some(state) = states.get(&id).copied() else {
                    return Err(CoordinatorError::ReplayViolation {
                        seq: record.seq,
                        detail: format!("event for unknown interaction {id}"),
                    });
                };
                if let Some((msg, role)) = event_transition(state, record) {
                    let next = transition(state, msg, role).map_err(|e| {
                        CoordinatorError::ReplayViolation {
                            seq: record.seq,
                            detail: e.to_string(),
                        }
                    })?;
                    states.insert(id, next);
                }
            }
        }
    }
    Ok(states)
}

/// One named invariant check of an audit verification run.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditVerification {
    pub checks: Vec<InvariantCheck>,
    pub interactions: usize,
}

impl AuditVerification {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Verify protocol invariants over a recorded audit log:
/// mandatory dissolution, zero residual coupling, state-machine legality
/// of the implied trace, signature presence on binding events, and grant
/// revocation at dissolution.
pub fn verify_audit(records: &[AuditRecord]) -> Result<AuditVerification, CoordinatorError> {
    let mut ids: Vec<String> = Vec::new();
    for r in records {
        if r.event == AuditEvent::IntentReceived {
            ids.push(r.interaction_id.clone());
        }
    }

    let mut checks = Vec::new();

    // State-machine legality (and per-interaction final states).
    let fold = fold_states(records);
    let (legal, final_states) = match &fold {
        Ok(states) => (
            InvariantCheck {
                name: "state_machine_legality".to_string(),
                passed: true,
                violations: vec![],
            },
            states.clone(),
        ),
        Err(e) => (
            InvariantCheck {
                name: "state_machine_legality".to_string(),
                passed: false,
                violations: vec![e.to_string()],
            },
            BTreeMap::new(),
        ),
    };
    checks.push(legal);

    // Invariant II: mandatory temporal dissolution.
    let mut undissolved: Vec<String> = Vec::new();
    for id in &ids {
        let dissolved = records
            .iter()
            .any(|r| r.interaction_id == *id && r.event == AuditEvent::Dissolved);
        let final_ok = final_states
            .get(id)
            .map(|s| *s == InteractionState::Dissolved)
            .unwrap_or(false);
        if !dissolved || (fold.is_ok() && !final_ok) {
            undissolved.push(id.clone());
        }
    }
    checks.push(InvariantCheck {
        name: "mandatory_dissolution".to_string(),
        passed: undissolved.is_empty(),
        violations: undissolved,
    });

    // Invariant III: zero residual coupling at dissolution.
    let mut residual_violations = Vec::new();
    for r in records.iter().filter(|r| r.event == AuditEvent::Dissolved) {
        let residual = r.detail.get("residual_coupling").and_then(Value::as_u64);
        if residual != Some(0) {
            residual_violations.push(format!(
                "{} dissolved with residual_coupling {:?}",
                r.interaction_id, residual
            ));
        }
    }
    checks.push(InvariantCheck {
        name: "zero_residual_coupling".to_string(),
        passed: residual_violations.is_empty(),
        violations: residual_violations,
    });

    // Signatures on binding events.
    let mut signature_violations = Vec::new();
    for r in records {
        match r.event {
            AuditEvent::Stabilized => {
                if let Some(accepts) = r.detail.get("accepts").and_then(Value::as_array) {
                    for a in accepts {
                        if a.get("signed").and_then(Value::as_bool) != Some(true) {
                            signature_violations
                                .push(format!("{} unsigned accept in seq {}", r.interaction_id, r.seq));
                        }
                    }
                }
            }
            AuditEvent::ExecutionStarted => {
                if r.detail.get("signed").and_then(Value::as_bool) != Some(true) {
                    signature_violations
                        .push(format!("{} unsigned execute in seq {}", r.interaction_id, r.seq));
                }
            }
            AuditEvent::ExecutionCompleted => {
                if let Some(steps) = r.detail.get("steps").and_then(Value::as_array) {
                    for s in steps {
                        if s.get("signed").and_then(Value::as_bool) != Some(true) {
                            signature_violations.push(format!(
                                "{} unsigned complete in seq {}",
                                r.interaction_id, r.seq
                            ));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    checks.push(InvariantCheck {
        name: "binding_signatures".to_string(),
        passed: signature_violations.is_empty(),
        violations: signature_violations,
    });

    // Grant revocation at dissolution.
    let mut revocation_violations = Vec::new();
    for r in records.iter().filter(|r| r.event == AuditEvent::Dissolved) {
        if r.detail.get("live_grants_after").and_then(Value::as_u64) != Some(0) {
            revocation_violations.push(format!("{} has live grants after dissolution", r.interaction_id));
        }
    }
    checks.push(InvariantCheck {
        name: "grant_revocation".to_string(),
        passed: revocation_violations.is_empty(),
        violations: revocation_violations,
    });

    Ok(AuditVerification {
        checks,
        interactions: ids.len(),
    })
}

/// Civil date (UTC) for an epoch-milliseconds timestamp, as `YYYYMMDD`.
fn date_stamp(at_ms: i64) -> String {
    let days = at_ms.div_euclid(86_400_000);
    let (y, m, d) = civil_from_days(days);
    format!("{y:04}{m:02}{d:02}")
}

// Days-to-civil conversion (proleptic Gregorian), after Hinnant.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn record(seq: u64, id: &str, event: AuditEvent, detail: Value) -> AuditRecord {
        AuditRecord {
            seq,
            interaction_id: id.to_string(),
            event,
            detail,
            at: seq as i64,
        }
    }

    fn happy_path(id: &str, start: u64) -> Vec<AuditRecord> {
        vec![
            record(start, id, AuditEvent::IntentReceived, json!({})),
            record(start + 1, id, AuditEvent::Adjudicated, json!({})),
            record(start + 2, id, AuditEvent::RoundCompleted, json!({})),
            record(start + 3, id, AuditEvent::PlanComposed, json!({})),
            record(
                start + 4,
                id,
                AuditEvent::Stabilized,
                json!({"accepts": [{"agent": "a", "signed": true}]}),
            ),
            record(start + 5, id, AuditEvent::ExecutionStarted, json!({"signed": true})),
            record(
                start + 6,
                id,
                AuditEvent::ExecutionCompleted,
                json!({"steps": [{"signed": true}]}),
            ),
            record(
                start + 7,
                id,
                AuditEvent::Dissolved,
                json!({"residual_coupling": 0, "live_grants_after": 0}),
            ),
        ]
    }

    #[test]
    fn fold_reproduces_happy_path() {
        let states = fold_states(&happy_path("i-1", 1)).unwrap();
        assert_eq!(states["i-1"], InteractionState::Dissolved);
    }

    #[test]
    fn verification_passes_on_clean_log() {
        let v = verify_audit(&happy_path("i-1", 1)).unwrap();
        assert!(v.all_passed(), "{:?}", v.checks);
    }

    #[test]
    fn missing_dissolve_fails_invariant_ii() {
        let mut records = happy_path("i-1", 1);
        records.pop();
        let v = verify_audit(&records).unwrap();
        let check = v.checks.iter().find(|c| c.name == "mandatory_dissolution").unwrap();
        assert!(!check.passed);
    }

    #[test]
    fn unsigned_binding_event_fails() {
        let mut records = happy_path("i-1", 1);
        records[5] = record(6, "i-1", AuditEvent::ExecutionStarted, json!({"signed": false}));
        let v = verify_audit(&records).unwrap();
        assert!(!v.checks.iter().find(|c| c.name == "binding_signatures").unwrap().passed);
    }

    #[test]
    fn out_of_order_seq_is_corrupt() {
        let mut text = String::new();
        for r in happy_path("i-1", 1) {
            text.push_str(&to_canonical_string(&r).unwrap());
            text.push('\n');
        }
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(2, 3);
        let shuffled = lines.join("\n");
        assert!(matches!(
            parse_audit_lines(&shuffled),
            Err(CoordinatorError::CorruptAudit { .. })
        ));
    }

    #[test]
    fn execution_before_stabilization_is_a_replay_violation() {
        let records = vec![
            record(1, "i-1", AuditEvent::IntentReceived, json!({})),
            record(2, "i-1", AuditEvent::ExecutionStarted, json!({"signed": true})),
        ];
        assert!(matches!(
            fold_states(&records),
            Err(CoordinatorError::ReplayViolation { .. })
        ));
    }

    #[test]
    fn date_stamps() {
        assert_eq!(date_stamp(0), "19700101");
        assert_eq!(date_stamp(86_400_000), "19700102");
        // 2026-08-09 in epoch ms.
        assert_eq!(date_stamp(1_786_579_200_000), "20260813");
    }
}
