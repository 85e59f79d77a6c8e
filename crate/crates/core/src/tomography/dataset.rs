use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_binomial, PreparationError, ProbabilityTable};
use crate::error::{Error, Result};

/// Number of preparations (and of measurement settings).
pub const SETTINGS: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Simulated { seed: u64, source: String, preparation: PreparationError },
    Resampled { seed: u64, index: u64 },
    Exact,
    Loaded { path: PathBuf },
}

/// Click counts `n_ij` out of `N` shots per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographyDataset {
    counts: Vec<u64>,
    shots: u64,
    /// Exact frequencies when they are not `n/N` (noiseless datasets).
    frequencies: Option<Vec<f64>>,
    provenance: Provenance,
}

impl TomographyDataset {
    /// `counts[i][j]`, zero-based preparation `i` and measurement `j`.
    pub fn new(counts: [[u64; SETTINGS]; SETTINGS], shots: u64, provenance: Provenance) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidParameter("shots must be at least 1".into()));
        }
        for (k, &n) in counts.iter().flatten().enumerate() {
            if n > shots {
                return Err(Error::Range { line: k + 2, n, shots });
            }
        }
        Ok(Self { counts: counts.iter().flatten().copied().collect(), shots, frequencies: None, provenance })
    }

    pub(crate) fn sample(
        table: &ProbabilityTable,
        shots: u64,
        rng: &mut ChaCha8Rng,
        provenance: Provenance,
    ) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidParameter("shots must be at least 1".into()));
        }
        let counts = table.iter().flatten().map(|&p| sample_binomial(rng, shots, p)).collect();
        Ok(Self { counts, shots, frequencies: None, provenance })
    }

    pub(crate) fn from_probabilities(table: &ProbabilityTable, shots: u64) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidParameter("shots must be at least 1".into()));
        }
        let freqs: Vec<f64> = table.iter().flatten().copied().collect();
        let counts = freqs.iter().map(|&p| (p * shots as f64).round() as u64).collect();
        Ok(Self { counts, shots, frequencies: Some(freqs), provenance: Provenance::Exact })
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn counts(&self) -> [[u64; SETTINGS]; SETTINGS] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.counts[i * SETTINGS + j]))
    }

    /// Zero-based count of cell `(i, j)`.
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * SETTINGS + j]
    }

    /// Row-major `f_ij`.
    pub fn frequencies(&self) -> Vec<f64> {
        match &self.frequencies {
            Some(f) => f.clone(),
            None => self.counts.iter().map(|&n| n as f64 / self.shots as f64).collect(),
        }
    }

    /// Row-major counts as used by the likelihood: exact datasets carry
    /// fractional counts `N·p`.
    pub(crate) fn effective_counts(&self) -> Vec<f64> {
        match &self.frequencies {
            Some(f) => f.iter().map(|p| p * self.shots as f64).collect(),
            None => self.counts.iter().map(|&n| n as f64).collect(),
        }
    }

    /// Header `i,j,n,N` and 81 rows with one-based `i`, `j`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,n,N\n");
        for i in 0..SETTINGS {
            for j in 0..SETTINGS {
                writeln!(out, "{},{},{},{}", i + 1, j + 1, self.count(i, j), self.shots).unwrap();
            }
        }
        out
    }

    pub fn from_csv(text: &str, path: Option<&Path>) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if columns != ["i", "j", "n", "N"] {
            return Err(Error::Parse { line, message: format!("expected header `i,j,n,N`, got `{header}`") });
        }
        let mut counts: [[Option<u64>; SETTINGS]; SETTINGS] = [[None; SETTINGS]; SETTINGS];
        let mut shots: Option<u64> = None;
        let mut rows = 0;
        for (line, text) in lines {
            let fields: Vec<&str> = text.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Parse { line, message: format!("expected 4 fields, got {}", fields.len()) });
            }
            let parse = |s: &str, name: &str| {
                s.parse::<u64>()
                    .map_err(|_| Error::Parse { line, message: format!("{name} `{s}` is not a non-negative integer") })
            };
            let i = parse(fields[0], "i")? as usize;
            let j = parse(fields[1], "j")? as usize;
            let n = parse(fields[2], "n")?;
            let big_n = parse(fields[3], "N")?;
            if !(1..=SETTINGS).contains(&i) || !(1..=SETTINGS).contains(&j) {
                return Err(Error::Parse { line, message: format!("setting ({i},{j}) outside 1..=9") });
            }
            if big_n == 0 {
                return Err(Error::Parse { line, message: "N must be positive".into() });
            }
            match shots {
                None => shots = Some(big_n),
                Some(s) if s != big_n => {
                    return Err(Error::Parse { line, message: format!("N = {big_n} differs from earlier N = {s}") })
                }
                _ => {}
            }
            if n > big_n {
                return Err(Error::Range { line, n, shots: big_n });
            }
            let cell = &mut counts[i - 1][j - 1];
            if cell.is_some() {
                return Err(Error::Parse { line, message: format!("duplicate setting ({i},{j})") });
            }
            *cell = Some(n);
            rows += 1;
        }
        if rows != SETTINGS * SETTINGS {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("expected 81 data rows, got {rows}"),
            });
        }
        let shots = shots.expect("81 rows read");
        let counts = counts.map(|row| row.map(|c| c.expect("all 81 cells present")));
        let provenance = Provenance::Loaded { path: path.map(Path::to_path_buf).unwrap_or_default() };
        Self::new(counts, shots, provenance)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(path.to_path_buf(), e))?;
        Ok(Self::from_csv(&text, Some(path))?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Format(#[from] Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::measurement_channel;
    use crate::numeric::C64;
    use crate::tomography::simulate_dataset;

    #[test]
    fn csv_round_trip_preserves_counts() {
        let chi = measurement_channel(C64::new(0.5, 0.0)).unwrap();
        let data = simulate_dataset(&chi, 1000, 5).unwrap();
        let csv = data.to_csv();
        assert_eq!(csv.lines().count(), 82);
        let back = TomographyDataset::from_csv(&csv, None).unwrap();
        assert_eq!(back.counts(), data.counts());
        assert_eq!(back.shots(), 1000);
        assert!(matches!(back.provenance(), Provenance::Loaded { .. }));
    }

    fn well_formed() -> String {
        let mut s = String::from("i,j,n,N\n");
        for i in 1..=9 {
            for j in 1..=9 {
                s.push_str(&format!("{i},{j},{},1000\n", 10 * i + j));
            }
        }
        s
    }

    #[test]
    fn parses_well_formed_file() {
        let data = TomographyDataset::from_csv(&well_formed(), None).unwrap();
        assert_eq!(data.count(2, 4), 35);
    }

    #[test]
    fn count_above_shots_is_a_range_error() {
        let text = well_formed().replace("1,1,11,1000", "1,1,1500,1000");
        match TomographyDataset::from_csv(&text, None) {
            Err(Error::Range { line: 2, n: 1500, shots: 1000 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = well_formed().replace("3,3,33,1000", "3,3,x,1000");
        match TomographyDataset::from_csv(&text, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2 + 2 * 9 + 2),
            other => panic!("unexpected {other:?}"),
        }
        let missing: String = well_formed().lines().take(80).map(|l| format!("{l}\n")).collect();
        assert!(matches!(TomographyDataset::from_csv(&missing, None), Err(Error::Parse { .. })));
        let bad_header = well_formed().replace("i,j,n,N", "a,b,c,d");
        assert!(matches!(TomographyDataset::from_csv(&bad_header, None), Err(Error::Parse { line: 1, .. })));
        let out_of_range = well_formed().replace("9,9,99,1000", "10,9,99,1000");
        assert!(matches!(TomographyDataset::from_csv(&out_of_range, None), Err(Error::Parse { .. })));
    }
}
