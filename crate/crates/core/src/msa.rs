//! Alignment ingestion, cleaning and family statistics.
//!
//! Residues are stored as uppercase ASCII bytes. The working alphabet is the
//! 20 canonical amino acids in the order `ARNDCQEGHILKMFPSTWYV` plus the gap
//! byte `-`. That order is also the tie-break order everywhere an argmax over
//! residues is taken.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical amino acids in tie-break order.
pub const AMINO_ACIDS: &[u8; 20] = b"ARNDCQEGHILKMFPSTWYV";
pub const GAP: u8 = b'-';
/// Number of symbols when the gap is counted as a 21st state.
pub const N_SYMBOLS_WITH_GAP: usize = 21;

const NON_CANONICAL: &[u8] = b"BJOUXZ";

/// Index of a canonical residue in [`AMINO_ACIDS`].
#[inline]
pub fn aa_index(residue: u8) -> Option<usize> {
    match residue {
        b'A' => Some(0),
        b'R' => Some(1),
        b'N' => Some(2),
        b'D' => Some(3),
        b'C' => Some(4),
        b'Q' => Some(5),
        b'E' => Some(6),
        b'G' => Some(7),
        b'H' => Some(8),
        b'I' => Some(9),
        b'L' => Some(10),
        b'K' => Some(11),
        b'M' => Some(12),
        b'F' => Some(13),
        b'P' => Some(14),
        b'S' => Some(15),
        b'T' => Some(16),
        b'W' => Some(17),
        b'Y' => Some(18),
        b'V' => Some(19),
        _ => None,
    }
}

/// Symbol index with the gap as state 20.
#[inline]
pub fn symbol_index(residue: u8) -> Option<usize> {
    if residue == GAP {
        Some(20)
    } else {
        aa_index(residue)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Stockholm,
    Fasta,
}

/// What to do with the ambiguity codes B, J, O, U, X and Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonCanonical {
    /// Replace with a gap and count the replacement.
    ReplaceWithGap,
    /// Fail with [`Error::Character`].
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub seq: Vec<u8>,
}

/// A parsed, normalized but not yet cleaned alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAlignment {
    pub records: Vec<Record>,
    pub source_format: SourceFormat,
    /// Number of ambiguity codes that were mapped to gaps.
    pub replaced_non_canonical: usize,
}

impl RawAlignment {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn width(&self) -> usize {
        self.records.first().map_or(0, |r| r.seq.len())
    }
}

fn normalize_residues(
    record: &str,
    raw: &str,
    policy: NonCanonical,
    replaced: &mut usize,
    out: &mut Vec<u8>,
) -> Result<()> {
    for ch in raw.chars() {
        if ch.is_whitespace() {
            continue;
        }
        let position = out.len() + 1;
        let b = if ch.is_ascii() { ch as u8 } else { 0 };
        let up = b.to_ascii_uppercase();
        let normalized = match up {
            b'.' | b'-' => GAP,
            _ if aa_index(up).is_some() => up,
            _ if NON_CANONICAL.contains(&up) => match policy {
                NonCanonical::ReplaceWithGap => {
                    *replaced += 1;
                    GAP
                }
                NonCanonical::Reject => {
                    return Err(Error::Character {
                        record: record.to_string(),
                        position,
                        ch,
                    })
                }
            },
            _ => {
                return Err(Error::Character {
                    record: record.to_string(),
                    position,
                    ch,
                })
            }
        };
        out.push(normalized);
    }
    Ok(())
}

fn check_equal_lengths(records: &[Record]) -> Result<()> {
    let Some(first) = records.first() else {
        return Err(Error::Structure("no sequences".into()));
    };
    for r in records {
        if r.seq.is_empty() {
            return Err(Error::Structure(format!("record '{}' is empty", r.id)));
        }
        if r.seq.len() != first.seq.len() {
            return Err(Error::Structure(format!(
                "record '{}' has length {} but '{}' has length {}",
                r.id,
                r.seq.len(),
                first.id,
                first.seq.len()
            )));
        }
    }
    Ok(())
}

/// Parse a Stockholm (Pfam seed dialect) alignment, mapping ambiguity codes to gaps.
pub fn parse_stockholm(text: &str) -> Result<RawAlignment> {
    parse_stockholm_with(text, NonCanonical::ReplaceWithGap)
}

pub fn parse_stockholm_with(text: &str, policy: NonCanonical) -> Result<RawAlignment> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, String> = HashMap::new();
    let mut seen_content = false;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        if line == "//" {
            break;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let tokens: Vec<&str> = rest.split_whitespace().collect();
            if tokens.first() == Some(&"STOCKHOLM") {
                if seen_content || tokens.len() != 2 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "malformed '# STOCKHOLM <version>' header".into(),
                    });
                }
            } else if rest.starts_with('=') && tokens.len() < 2 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("markup line without content: {line:?}"),
                });
            }
            seen_content = true;
            continue;
        }
        seen_content = true;
        let mut fields = line.split_whitespace();
        let (Some(name), Some(seq), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected '<name> <aligned sequence>', got {line:?}"),
            });
        };
        match rows.get_mut(name) {
            Some(s) => s.push_str(seq),
            None => {
                order.push(name.to_string());
                rows.insert(name.to_string(), seq.to_string());
            }
        }
    }

    let mut replaced = 0;
    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let mut seq = Vec::new();
        normalize_residues(&id, &rows[&id], policy, &mut replaced, &mut seq)?;
        records.push(Record { id, seq });
    }
    check_equal_lengths(&records)?;
    Ok(RawAlignment {
        records,
        source_format: SourceFormat::Stockholm,
        replaced_non_canonical: replaced,
    })
}

/// Parse aligned FASTA. Ambiguity codes are rejected.
pub fn parse_fasta(text: &str) -> Result<RawAlignment> {
    parse_fasta_with(text, NonCanonical::Reject)
}

pub fn parse_fasta_with(text: &str, policy: NonCanonical) -> Result<RawAlignment> {
    let mut records: Vec<Record> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut replaced = 0;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("");
            if id.is_empty() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "record header without identifier".into(),
                });
            }
            if ids.insert(id.to_string(), lineno).is_some() {
                return Err(Error::Structure(format!("duplicate record id '{id}'")));
            }
            records.push(Record {
                id: id.to_string(),
                seq: Vec::new(),
            });
            continue;
        }
        let Some(current) = records.last_mut() else {
            return Err(Error::Parse {
                line: lineno,
                message: "sequence data before the first '>' header".into(),
            });
        };
        normalize_residues(&current.id, line, policy, &mut replaced, &mut current.seq)?;
    }
    if records.is_empty() {
        return Err(Error::Structure("empty FASTA input".into()));
    }
    check_equal_lengths(&records)?;
    Ok(RawAlignment {
        records,
        source_format: SourceFormat::Fasta,
        replaced_non_canonical: replaced,
    })
}

/// Render records as single-line FASTA.
pub fn write_fasta<'a, I>(records: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a [u8])>,
{
    let mut out = String::new();
    for (header, seq) in records {
        out.push('>');
        out.push_str(header);
        out.push('\n');
        out.push_str(&String::from_utf8_lossy(seq));
        out.push('\n');
    }
    out
}

/// A gap-filtered alignment over the 20 canonical residues plus `-`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanAlignment {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<u8>>,
    /// Positions of the retained columns in the source alignment.
    pub kept_column_indices: Vec<usize>,
}

impl CleanAlignment {
    /// Build directly from already-aligned rows, validating the alphabet and widths.
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyFamily("no sequences".into()));
        }
        if ids.len() != rows.len() {
            return Err(Error::Dimension(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(Error::EmptyFamily("zero-length rows".into()));
        }
        for (id, row) in ids.iter().zip(&rows) {
            if row.len() != width {
                return Err(Error::Structure(format!(
                    "row '{id}' has length {} (expected {width})",
                    row.len()
                )));
            }
            if let Some(pos) = row.iter().position(|&b| symbol_index(b).is_none()) {
                return Err(Error::Character {
                    record: id.clone(),
                    position: pos + 1,
                    ch: row[pos] as char,
                });
            }
        }
        Ok(Self {
            ids,
            rows,
            kept_column_indices: (0..width).collect(),
        })
    }

    /// Number of sequences.
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    /// Number of columns.
    pub fn l(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = u8> + '_ {
        self.rows.iter().map(move |r| r[col])
    }

    pub fn to_raw(&self) -> RawAlignment {
        RawAlignment {
            records: self
                .ids
                .iter()
                .zip(&self.rows)
                .map(|(id, seq)| Record {
                    id: id.clone(),
                    seq: seq.clone(),
                })
                .collect(),
            source_format: SourceFormat::Fasta,
            replaced_non_canonical: 0,
        }
    }

    /// Keep only the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyFamily("row selection is empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.k()) {
            return Err(Error::Dimension(format!(
                "row {bad} out of range for K = {}",
                self.k()
            )));
        }
        Ok(Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            kept_column_indices: self.kept_column_indices.clone(),
        })
    }

    pub fn to_fasta(&self) -> String {
        write_fasta(self.ids.iter().map(String::as_str).zip(self.rows.iter().map(Vec::as_slice)))
    }
}

fn gap_fraction<I: Iterator<Item = u8>>(symbols: I) -> f64 {
    let (mut gaps, mut n) = (0usize, 0usize);
    for s in symbols {
        n += 1;
        if s == GAP {
            gaps += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        gaps as f64 / n as f64
    }
}

/// Remove gappy columns, then gappy sequences (strict `>` on both thresholds).
///
/// The column/sequence pass is repeated until nothing changes, so every
/// retained column and row satisfies its threshold on the final alignment.
pub fn clean(raw: &RawAlignment, col_gap_max: f64, seq_gap_max: f64) -> Result<CleanAlignment> {
    if raw.is_empty() {
        return Err(Error::EmptyFamily("alignment has no records".into()));
    }
    let width = raw.width();
    let mut rows: Vec<usize> = (0..raw.len()).collect();
    let mut cols: Vec<usize> = (0..width).collect();
    loop {
        let next_cols: Vec<usize> = cols
            .iter()
            .copied()
            .filter(|&c| gap_fraction(rows.iter().map(|&r| raw.records[r].seq[c])) <= col_gap_max)
            .collect();
        if next_cols.is_empty() {
            return Err(Error::EmptyFamily(format!(
                "every column exceeds the {col_gap_max} gap threshold"
            )));
        }
        let next_rows: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| {
                let seq = &raw.records[r].seq;
                gap_fraction(next_cols.iter().map(|&c| seq[c])) <= seq_gap_max
            })
            .collect();
        if next_rows.is_empty() {
            return Err(Error::EmptyFamily(format!(
                "every sequence exceeds the {seq_gap_max} gap threshold"
            )));
        }
        let stable = next_rows.len() == rows.len() && next_cols.len() == cols.len();
        rows = next_rows;
        cols = next_cols;
        if stable {
            break;
        }
    }
    Ok(CleanAlignment {
        ids: rows.iter().map(|&r| raw.records[r].id.clone()).collect(),
        rows: rows
            .iter()
            .map(|&r| cols.iter().map(|&c| raw.records[r].seq[c]).collect())
            .collect(),
        kept_column_indices: cols,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnEntropy {
    pub per_column: Vec<f64>,
    pub mean: f64,
}

/// Shannon entropy (nats) of every column, with the gap as a 21st symbol.
pub fn column_entropy(aln: &CleanAlignment) -> ColumnEntropy {
    let k = aln.k() as f64;
    let per_column: Vec<f64> = (0..aln.l())
        .map(|c| {
            let mut counts = [0usize; N_SYMBOLS_WITH_GAP];
            for s in aln.column(c) {
                counts[symbol_index(s).expect("clean alphabet")] += 1;
            }
            counts
                .iter()
                .filter(|&&n| n > 0)
                .map(|&n| {
                    let f = n as f64 / k;
                    -f * f.ln()
                })
                .sum()
        })
        .collect();
    let mean = per_column.iter().sum::<f64>() / per_column.len().max(1) as f64;
    ColumnEntropy { per_column, mean }
}

#[inline]
pub(crate) fn identity_unchecked(a: &[u8], b: &[u8]) -> f64 {
    let matches = a.iter().zip(b).filter(|(x, y)| x == y).count();
    matches as f64 / a.len() as f64
}

/// Fraction of matching positions. Gap against gap counts as a match.
pub fn pairwise_identity(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Dimension("empty sequences".into()));
    }
    Ok(identity_unchecked(a, b))
}

/// Number of sequences after down-weighting each row by the size of its
/// identity neighbourhood (self included).
pub fn effective_sequences(aln: &CleanAlignment, identity_threshold: f64) -> f64 {
    let k = aln.k();
    let mut neighbours = vec![1usize; k];
    for i in 0..k {
        for j in (i + 1)..k {
            if identity_unchecked(&aln.rows[i], &aln.rows[j]) >= identity_threshold {
                neighbours[i] += 1;
                neighbours[j] += 1;
            }
        }
    }
    neighbours.iter().map(|&n| 1.0 / n as f64).sum()
}

/// Most frequent non-gap residue per column; ties go to the earlier residue
/// in [`AMINO_ACIDS`].
pub fn consensus(aln: &CleanAlignment) -> Result<Vec<u8>> {
    (0..aln.l())
        .map(|c| {
            let mut counts = [0usize; 20];
            for s in aln.column(c) {
                if let Some(i) = aa_index(s) {
                    counts[i] += 1;
                }
            }
            let (best, &n) = counts
                .iter()
                .enumerate()
                .fold((0, &0), |acc, (i, n)| if n > acc.1 { (i, n) } else { acc });
            if n == 0 {
                return Err(Error::Degenerate(format!("column {c} contains only gaps")));
            }
            Ok(AMINO_ACIDS[best])
        })
        .collect()
}

/// Shuffle every column independently with a seeded Fisher-Yates pass.
///
/// Columns are processed left to right; within a column, for `i` from
/// `K - 1` down to 1, row `i` is swapped with a uniform draw from `0..=i`.
pub fn permute_columns(aln: &CleanAlignment, seed: u64) -> CleanAlignment {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = aln.rows.clone();
    let k = rows.len();
    for c in 0..aln.l() {
        for i in (1..k).rev() {
            let j = rng.random_range(0..=i);
            let tmp = rows[i][c];
            rows[i][c] = rows[j][c];
            rows[j][c] = tmp;
        }
    }
    CleanAlignment {
        ids: aln.ids.clone(),
        rows,
        kept_column_indices: aln.kept_column_indices.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub k: usize,
    pub l: usize,
    pub mean_column_entropy: f64,
    pub column_entropies: Vec<f64>,
    pub k_eff: f64,
    pub mean_pairwise_identity: f64,
    /// Leading eigenvalue of the one-hot covariance over its trace.
    pub spectral_concentration: f64,
}

/// Family summary used by the temperature regression and reports.
pub fn alignment_stats(aln: &CleanAlignment) -> AlignmentStats {
    let entropy = column_entropy(aln);
    let k = aln.k();

    // Gram matrix of one-hot vectors: shared non-gap residues.
    let mut gram = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let shared = aln.rows[i]
                .iter()
                .zip(&aln.rows[j])
                .filter(|(a, b)| a == b && **a != GAP)
                .count() as f64;
            gram[(i, j)] = shared;
            gram[(j, i)] = shared;
        }
    }
    let row_means: Vec<f64> = (0..k).map(|i| gram.row(i).sum() / k as f64).collect();
    let grand = row_means.iter().sum::<f64>() / k as f64;
    let centered = DMatrix::from_fn(k, k, |i, j| gram[(i, j)] - row_means[i] - row_means[j] + grand);
    let trace = centered.trace();
    let spectral_concentration = if trace > 0.0 {
        let eig = SymmetricEigen::new(centered);
        let lambda1 = eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
        (lambda1 / trace).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let mean_pairwise_identity = if k < 2 {
        1.0
    } else {
        let mut total = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                total += identity_unchecked(&aln.rows[i], &aln.rows[j]);
            }
        }
        total / (k * (k - 1) / 2) as f64
    };

    AlignmentStats {
        k,
        l: aln.l(),
        mean_column_entropy: entropy.mean,
        column_entropies: entropy.per_column,
        k_eff: effective_sequences(aln, 0.8),
        mean_pairwise_identity,
        spectral_concentration,
    }
}

pub const STATS_TSV_HEADER: &str = "family\tK\tL\tmean_column_entropy\tk_eff\tspectral_concentration";

pub fn stats_tsv_row(family: &str, stats: &AlignmentStats) -> String {
    format!(
        "{family}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
        stats.k, stats.l, stats.mean_column_entropy, stats.k_eff, stats.spectral_concentration
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aln(rows: &[&str]) -> CleanAlignment {
        CleanAlignment::from_rows(
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            rows.iter().map(|r| r.as_bytes().to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn stockholm_minimal() {
        let text = "# STOCKHOLM 1.0\n#=GF ID test\nseq1 AC.DE\nseq2 ac-DE\n//\n";
        let raw = parse_stockholm(text).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.records[0].seq, b"AC-DE");
        assert_eq!(raw.records[1].seq, b"AC-DE");
    }

    #[test]
    fn stockholm_interleaved_blocks_concatenate() {
        let text = "# STOCKHOLM 1.0\na AC\nb AD\n\na EF\nb EG\n//\nc IGNORED\n";
        let raw = parse_stockholm(text).unwrap();
        assert_eq!(raw.records[0].seq, b"ACEF");
        assert_eq!(raw.records[1].seq, b"ADEG");
        assert_eq!(raw.len(), 2);
    }

    #[test]
    fn stockholm_unequal_rows() {
        let err = parse_stockholm("# STOCKHOLM 1.0\na ACD\nb AC\n//\n").unwrap_err();
        assert!(matches!(err, Error::Structure(_)), "{err}");
    }

    #[test]
    fn stockholm_malformed_header_reports_line() {
        let err = parse_stockholm("\n# STOCKHOLM\na AC\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_stockholm("# STOCKHOLM 1.0\na AC extra\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn stockholm_replaces_ambiguity_codes() {
        let raw = parse_stockholm("# STOCKHOLM 1.0\na AXB\nb ACD\n//").unwrap();
        assert_eq!(raw.records[0].seq, b"A--");
        assert_eq!(raw.replaced_non_canonical, 2);
    }

    #[test]
    fn fasta_basic() {
        let raw = parse_fasta(">a\nACD-\n>b\nAC-E\n").unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.width(), 4);
    }

    #[test]
    fn fasta_illegal_character_names_position() {
        let err = parse_fasta(">a\nACJD\n>b\nACDE\n").unwrap_err();
        match err {
            Error::Character { record, position, ch } => {
                assert_eq!(record, "a");
                assert_eq!(position, 3);
                assert_eq!(ch, 'J');
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn fasta_errors() {
        assert!(matches!(parse_fasta(""), Err(Error::Structure(_))));
        assert!(matches!(parse_fasta(">a\nAC\n>b\nA\n"), Err(Error::Structure(_))));
        assert!(matches!(parse_fasta("AC\n>a\nAC\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_fasta(">a\nAC\n>a\nAC\n"), Err(Error::Structure(_))));
    }

    #[test]
    fn fasta_round_trip() {
        let a = aln(&["ACDE", "AC-E", "WYVV"]);
        let raw = parse_fasta(&a.to_fasta()).unwrap();
        assert_eq!(raw.records.len(), 3);
        assert_eq!(raw.records[1].seq, b"AC-E");
    }

    #[test]
    fn clean_gap_free_is_identity() {
        let a = aln(&["ACDE", "ACDF", "GCDE"]);
        let c = clean(&a.to_raw(), 0.5, 0.3).unwrap();
        assert_eq!(c.rows, a.rows);
        assert_eq!(c.kept_column_indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn clean_synthetic_recount() {
        // Column 1 is 75% gap (dropped). Row 3 is gappy on retained columns.
        let rows = ["A-CDEF", "A-CDEF", "AACD-F", "--CD-F"];
        let raw = aln(&rows).to_raw();
        let c = clean(&raw, 0.5, 0.3).unwrap();

        // Brute-force recount of every threshold on the output.
        for col in 0..c.l() {
            let g = c.column(col).filter(|&s| s == GAP).count() as f64 / c.k() as f64;
            assert!(g <= 0.5);
        }
        for row in &c.rows {
            let g = row.iter().filter(|&&s| s == GAP).count() as f64 / row.len() as f64;
            assert!(g <= 0.3);
        }
        assert_eq!(c.kept_column_indices, vec![0, 2, 3, 4, 5]);
        assert_eq!(c.ids, vec!["s0", "s1", "s2"]);
        assert_eq!(c.rows[2], b"ACD-F");
    }

    #[test]
    fn clean_all_removed() {
        let raw = aln(&["A---", "-A--"]).to_raw();
        assert!(matches!(clean(&raw, 0.5, 0.3), Err(Error::EmptyFamily(_))));
    }

    #[test]
    fn entropy_cases() {
        let a = aln(&["A", "A", "A"]);
        assert_eq!(column_entropy(&a).mean, 0.0);
        let rows: Vec<String> = AMINO_ACIDS.iter().map(|&b| (b as char).to_string()).collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let u = column_entropy(&aln(&refs));
        assert!((u.mean - 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn effective_sequence_limits() {
        let same = aln(&["ACDE", "ACDE", "ACDE"]);
        assert!((effective_sequences(&same, 0.8) - 1.0).abs() < 1e-12);
        let distinct = aln(&["AAAA", "CCCC", "DDDD"]);
        assert!((effective_sequences(&distinct, 0.8) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn consensus_tie_break() {
        let a = aln(&["A", "A", "A", "C", "C", "C", "D"]);
        assert_eq!(consensus(&a).unwrap(), b"A");
        // alphabet order puts R before C even though C sorts first in ASCII
        let b = aln(&["C", "R"]);
        assert_eq!(consensus(&b).unwrap(), b"R");
        let gapped = aln(&["-", "-"]);
        assert!(consensus(&gapped).is_err());
    }

    #[test]
    fn identity_cases() {
        assert_eq!(pairwise_identity(b"ACDE", b"ACDE").unwrap(), 1.0);
        assert_eq!(pairwise_identity(b"AAAA", b"CCCC").unwrap(), 0.0);
        assert_eq!(pairwise_identity(b"AC-D", b"AC-E").unwrap(), 0.75);
        assert!(pairwise_identity(b"AC", b"ACD").is_err());
    }

    #[test]
    fn permutation_single_row_is_identity() {
        let a = aln(&["ACDEF"]);
        assert_eq!(permute_columns(&a, 9), a);
    }

    #[test]
    fn permutation_matches_scripted_trace() {
        let a = aln(&["AC", "DE", "FG"]);
        let p = permute_columns(&a, 1234);
        // Scripted Fisher-Yates with the same generator, swaps recorded by hand.
        let mut rng = ChaCha20Rng::seed_from_u64(1234);
        let mut expected: Vec<Vec<u8>> = vec![b"AC".to_vec(), b"DE".to_vec(), b"FG".to_vec()];
        for c in 0..2 {
            let j2: usize = rng.random_range(0..=2);
            let tmp = expected[2][c];
            expected[2][c] = expected[j2][c];
            expected[j2][c] = tmp;
            let j1: usize = rng.random_range(0..=1);
            let tmp = expected[1][c];
            expected[1][c] = expected[j1][c];
            expected[j1][c] = tmp;
        }
        assert_eq!(p.rows, expected);
    }

    #[test]
    fn stats_bounds() {
        let a = aln(&["ACDE", "ACDF", "GCDE", "WWYY"]);
        let s = alignment_stats(&a);
        assert!(s.k_eff >= 1.0 && s.k_eff <= 4.0);
        assert!(s.spectral_concentration > 0.0 && s.spectral_concentration <= 1.0);
        for h in &s.column_entropies {
            assert!(*h >= 0.0 && *h <= 21f64.ln());
        }
        assert!(stats_tsv_row("toy", &s).starts_with("toy\t4\t4\t"));
    }
}
