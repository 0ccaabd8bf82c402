//! Report files: rendering, folder routing, naming, and retention.
//!
//! Selected records are rendered into at most two report files per run, one
//! per destination folder. Entries carry the key name and the public
//! algorithm parameters in the clear plus the payload bits packed
//! little-endian and base64-encoded; raw datum strings never appear.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ResolvedKey};
use crate::store::PrivatizedRecord;

/// Filename timestamps can be shifted forward by this much.
pub const REPORT_SHIFT_SECONDS: u64 = 7 * 3_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FolderClass {
    /// Keyboard/frequency records: `DiagnosticReports/`.
    Diagnostic,
    /// Search records: `DifferentialPrivacy/Reports/`.
    Parsec,
}

impl FolderClass {
    pub fn directory(self) -> &'static str {
        match self {
            FolderClass::Diagnostic => "DiagnosticReports",
            FolderClass::Parsec => "DifferentialPrivacy/Reports",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            FolderClass::Diagnostic => ".dpsub.json",
            FolderClass::Parsec => ".json.anon",
        }
    }
}

/// Folder routing is a pure function of the PropertiesName: Search goes to
/// the parsec folder, everything else to the diagnostic folder.
pub fn folder_for_properties(properties_name: &str) -> FolderClass {
    if properties_name == "Search" {
        FolderClass::Parsec
    } else {
        FolderClass::Diagnostic
    }
}

/// How long emitted report files are kept on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub max_age_seconds: u64,
}

impl RetentionPolicy {
    /// Desktop profile: one month.
    pub const MACOS: Self = Self {
        max_age_seconds: 30 * 86_400,
    };
    /// Phone profile: one week.
    pub const IOS: Self = Self {
        max_age_seconds: 7 * 86_400,
    };
}

/// One record as it appears in a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub key_name: String,
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub m: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_index: Option<u32>,
    /// Payload bits, packed little-endian and base64-encoded.
    pub payload: String,
}

/// An emitted report document plus its routing metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    /// Path relative to the working directory, including the folder.
    pub path: String,
    pub created_at: u64,
    pub folder_class: FolderClass,
    pub entries: Vec<ReportEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("selection is empty")]
    EmptySelection,
}

/// Pack bits little-endian: bit `i` lands in byte `i / 8` at position `i % 8`.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut bytes = alloc::vec![0u8; bits.len().div_ceil(8)];
    for (i, bit) in bits.iter().enumerate() {
        if *bit {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    bytes
}

/// Inverse of [`pack_bits`] for a known width; rejects wrong lengths and
/// nonzero padding bits.
pub fn unpack_bits(bytes: &[u8], m: usize) -> Option<Vec<bool>> {
    if bytes.len() != m.div_ceil(8) {
        return None;
    }
    let mut bits = alloc::vec![false; m];
    for (i, bit) in bits.iter_mut().enumerate() {
        *bit = bytes[i / 8] & (1 << (i % 8)) != 0;
    }
    for i in m..bytes.len() * 8 {
        if bytes[i / 8] & (1 << (i % 8)) != 0 {
            return None;
        }
    }
    Some(bits)
}

pub fn encode_payload(bits: &[bool]) -> String {
    BASE64.encode(pack_bits(bits))
}

pub fn decode_payload(payload: &str, m: usize) -> Option<Vec<bool>> {
    let bytes = BASE64.decode(payload).ok()?;
    unpack_bits(&bytes, m)
}

/// Deterministic report path: folder, timestamp-bearing name, extension.
/// `shift` moves the embedded timestamp forward by seven hours.
pub fn report_path(folder: FolderClass, now: u64, shift: bool) -> String {
    report_path_with_seq(folder, now, shift, 0)
}

fn report_path_with_seq(folder: FolderClass, now: u64, shift: bool, seq: u32) -> String {
    let stamp = if shift { now + REPORT_SHIFT_SECONDS } else { now };
    let suffix = if seq == 0 {
        String::new()
    } else {
        format!("-{seq}")
    };
    format!(
        "{}/report_{}{}{}",
        folder.directory(),
        format_timestamp(stamp),
        suffix,
        folder.extension()
    )
}

/// First path not already taken: same-second collisions get `-1`, `-2`, ...
pub fn next_free_report_path(
    folder: FolderClass,
    now: u64,
    shift: bool,
    taken: &BTreeSet<String>,
) -> String {
    let mut seq = 0;
    loop {
        let path = report_path_with_seq(folder, now, shift, seq);
        if !taken.contains(&path) {
            return path;
        }
        seq += 1;
    }
}

/// Render the selected records into one report file per folder class.
///
/// Entries are ordered by (key name, record id) so identical selections
/// render byte-identically.
pub fn render_reports(
    records: &[(&PrivatizedRecord, &ResolvedKey)],
    now: u64,
    shift: bool,
    taken: &BTreeSet<String>,
) -> Result<Vec<ReportFile>, RenderError> {
    if records.is_empty() {
        return Err(RenderError::EmptySelection);
    }
    let mut ordered: Vec<&(&PrivatizedRecord, &ResolvedKey)> = records.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.0.key_name, a.0.record_id).cmp(&(&b.0.key_name, b.0.record_id))
    });

    let mut files: Vec<ReportFile> = Vec::new();
    let mut taken = taken.clone();
    for class in [FolderClass::Diagnostic, FolderClass::Parsec] {
        let entries: Vec<ReportEntry> = ordered
            .iter()
            .filter(|(_, resolved)| folder_for_properties(&resolved.properties_name) == class)
            .map(|(record, resolved)| ReportEntry {
                key_name: record.key_name.clone(),
                algorithm: resolved.algorithm,
                epsilon: record.epsilon,
                m: resolved.m,
                k: match resolved.algorithm {
                    Algorithm::OneBitHistogram => None,
                    Algorithm::CountMedianSketch => Some(resolved.k),
                },
                row_index: record.payload.row_index(),
                payload: encode_payload(record.payload.bits()),
            })
            .collect();
        if entries.is_empty() {
            continue;
        }
        let path = next_free_report_path(class, now, shift, &taken);
        taken.insert(path.clone());
        files.push(ReportFile {
            path,
            created_at: now,
            folder_class: class,
            entries,
        });
    }
    Ok(files)
}

/// Drop files older than the retention limit; returns the deleted paths.
pub fn report_files_maintenance(
    files: &mut Vec<ReportFile>,
    now: u64,
    policy: RetentionPolicy,
) -> Vec<String> {
    let mut deleted = Vec::new();
    files.retain(|file| {
        if now.saturating_sub(file.created_at) > policy.max_age_seconds {
            deleted.push(file.path.clone());
            false
        } else {
            true
        }
    });
    deleted
}

/// Civil timestamp `YYYY-MM-DDTHH-MM-SS` for a count of seconds from the
/// epoch 1970-01-01T00:00:00. Dashes instead of colons keep names portable.
pub fn format_timestamp(seconds: u64) -> String {
    let days = seconds / 86_400;
    let rem = seconds % 86_400;
    let (year, month, day) = civil_from_days(days as i64);
    format!(
        "{:04}-{:02}-{:02}T{:02}-{:02}-{:02}",
        year,
        month,
        day,
        rem / 3_600,
        (rem % 3_600) / 60,
        rem % 60
    )
}

/// Gregorian date from days since 1970-01-01 (Howard Hinnant's algorithm).
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1_460 + doe / 36_524 - doe / 146_096) / 365;
    let year = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (year + i64::from(month <= 2), month, day)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_formatting_matches_calendar() {
        assert_eq!(format_timestamp(0), "1970-01-01T00-00-00");
        assert_eq!(format_timestamp(86_400), "1970-01-02T00-00-00");
        assert_eq!(format_timestamp(86_400 + 3_661), "1970-01-02T01-01-01");
        // Leap year check: 1972-02-29 is day 789.
        assert_eq!(format_timestamp(789 * 86_400), "1972-02-29T00-00-00");
    }

    #[test]
    fn shift_flag_moves_name_forward_seven_hours() {
        let plain = report_path(FolderClass::Diagnostic, 86_400, false);
        let shifted = report_path(FolderClass::Diagnostic, 86_400, true);
        assert_eq!(plain, "DiagnosticReports/report_1970-01-02T00-00-00.dpsub.json");
        assert_eq!(
            shifted,
            "DiagnosticReports/report_1970-01-02T07-00-00.dpsub.json"
        );
    }

    #[test]
    fn same_second_collision_gets_numeric_suffix() {
        let mut taken = BTreeSet::new();
        let first = next_free_report_path(FolderClass::Parsec, 60, false, &taken);
        taken.insert(first.clone());
        let second = next_free_report_path(FolderClass::Parsec, 60, false, &taken);
        assert_eq!(first, "DifferentialPrivacy/Reports/report_1970-01-01T00-01-00.json.anon");
        assert_eq!(
            second,
            "DifferentialPrivacy/Reports/report_1970-01-01T00-01-00-1.json.anon"
        );
    }

    #[test]
    fn bit_packing_round_trips_and_rejects_padding_garbage() {
        let bits = alloc::vec![true, false, false, true, true, false, false, false, true, true];
        let bytes = pack_bits(&bits);
        assert_eq!(bytes.len(), 2);
        assert_eq!(bytes[0], 0b0001_1001);
        assert_eq!(bytes[1], 0b0000_0011);
        assert_eq!(unpack_bits(&bytes, 10).unwrap(), bits);
        assert!(unpack_bits(&bytes, 9).is_none()); // padding bit set
        assert!(unpack_bits(&bytes, 20).is_none()); // wrong length
    }

    #[test]
    fn payload_encoding_round_trips() {
        let bits: alloc::vec::Vec<bool> = (0..37).map(|i| i % 3 == 0).collect();
        let encoded = encode_payload(&bits);
        assert_eq!(decode_payload(&encoded, 37).unwrap(), bits);
        assert!(decode_payload(&encoded, 36).is_none());
        assert!(decode_payload("!!!not base64", 37).is_none());
    }

    #[test]
    fn retention_drops_only_expired_files() {
        let file = |path: &str, created_at: u64| ReportFile {
            path: path.into(),
            created_at,
            folder_class: FolderClass::Diagnostic,
            entries: alloc::vec![],
        };
        let mut files = alloc::vec![
            file("a", 0),
            file("b", 86_400),
            file("c", 2 * 86_400),
        ];
        let now = 31 * 86_400;
        let deleted = report_files_maintenance(&mut files, now, RetentionPolicy::MACOS);
        assert_eq!(deleted, alloc::vec!["a".to_string()]);
        assert_eq!(files.len(), 2);

        let deleted = report_files_maintenance(&mut files, now, RetentionPolicy::IOS);
        assert_eq!(deleted.len(), 2);
        assert!(files.is_empty());
    }
}
