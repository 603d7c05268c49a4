//! Observation schema, CSV ingestion, derived columns and group-mean imputation.
//!
//! Outcomes and productivity are analysed on the log10 scale. Productivity is a
//! count that can be zero, so its derived column is `log10(count + 1)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! level_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            /// All levels in declared (alphabetical) order; the first is the reference level.
            pub const LEVELS: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim() {
                    $($label => Ok($name::$variant),)+
                    other => Err(format!(
                        "`{}` is not a valid {} (expected one of: {})",
                        other,
                        stringify!($name),
                        [$($label),+].join(", ")
                    )),
                }
            }
        }
    };
}

level_enum!(
    /// Academic rank.
    Title { Assistant => "Assistant", Associate => "Associate", Full => "Full" }
);

level_enum!(
    /// Institution type: teaching-focused (bachelor/master), doctoral/high research, very high research.
    UniversityClass { BM => "BM", DRUH => "DRUH", DUVA => "DUVA" }
);

level_enum!(
    /// Broad discipline group.
    Department {
        AH => "AH",
        B => "B",
        MHS => "MHS",
        NS => "NS",
        SS => "SS",
        TE => "TE",
    }
);

/// One observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    /// Yearly salary in currency units; strictly positive.
    pub salary: f64,
    pub treated: bool,
    pub title: Title,
    pub university_class: UniversityClass,
    pub department: Department,
    pub working_years: f64,
    /// Productivity count (i10-index); the only nullable field.
    pub productivity_raw: Option<f64>,
    pub has_profile: bool,
}

/// Fields a formula or a grouping rule can refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Treatment,
    Title,
    UniversityClass,
    Department,
    WorkingYears,
    ProductivityLog,
    HasProfile,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Treatment => "treatment",
            Field::Title => "title",
            Field::UniversityClass => "university_class",
            Field::Department => "department",
            Field::WorkingYears => "working_years",
            Field::ProductivityLog => "productivity_log",
            Field::HasProfile => "has_profile",
        }
    }

    pub fn is_factor(self) -> bool {
        matches!(self, Field::Title | Field::UniversityClass | Field::Department)
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "treatment" | "gender" => Field::Treatment,
            "title" => Field::Title,
            "university_class" => Field::UniversityClass,
            "department" => Field::Department,
            "working_years" => Field::WorkingYears,
            "productivity_log" => Field::ProductivityLog,
            "has_profile" | "has_scholar_id" => Field::HasProfile,
            other => return Err(Error::Formula(format!("unknown field `{other}`"))),
        })
    }
}

/// Log transform applied to productivity counts; defined at zero.
pub fn productivity_log_of(raw: f64) -> f64 {
    (raw + 1.0).log10()
}

/// A validated collection of records plus derived (never ingested) columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<UnitRecord>,
    outcome_log: Vec<f64>,
    productivity_log: Vec<Option<f64>>,
    imputed: Vec<bool>,
}

impl Dataset {
    pub fn new(records: Vec<UnitRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if !(r.salary.is_finite() && r.salary > 0.0) {
                return Err(Error::invalid(format!("record {i}: salary must be positive")));
            }
            if !(r.working_years.is_finite() && r.working_years >= 0.0) {
                return Err(Error::invalid(format!("record {i}: working_years must be nonnegative")));
            }
            if let Some(p) = r.productivity_raw {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::invalid(format!("record {i}: productivity must be nonnegative")));
                }
            }
        }
        let outcome_log = records.iter().map(|r| r.salary.log10()).collect();
        let productivity_log = records.iter().map(|r| r.productivity_raw.map(productivity_log_of)).collect();
        let imputed = vec![false; records.len()];
        Ok(Dataset { records, outcome_log, productivity_log, imputed })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn outcome_log(&self) -> &[f64] {
        &self.outcome_log
    }

    pub fn productivity_log(&self) -> &[Option<f64>] {
        &self.productivity_log
    }

    /// Which rows had productivity filled in by imputation.
    pub fn imputed(&self) -> &[bool] {
        &self.imputed
    }

    /// Productivity on the log scale, failing if any value is still missing.
    pub fn productivity_complete(&self) -> Result<Vec<f64>> {
        self.productivity_log.iter().map(|p| p.ok_or(Error::MissingProductivity)).collect()
    }

    pub fn treatment(&self) -> Vec<f64> {
        self.records.iter().map(|r| if r.treated { 1.0 } else { 0.0 }).collect()
    }

    pub fn treated_mask(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.treated).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.records.iter().filter(|r| r.treated).count()
    }

    /// Every estimator needs at least two rows and both arms.
    pub fn ensure_estimable(&self) -> Result<()> {
        let nt = self.n_treated();
        if self.len() < 2 || nt == 0 || nt == self.len() {
            return Err(Error::SingleArm(format!("{} treated of {} rows", nt, self.len())));
        }
        Ok(())
    }

    /// Mean raw salary of (control, treated) units.
    pub fn arm_salary_means(&self) -> Result<(f64, f64)> {
        self.ensure_estimable()?;
        let (mut sc, mut nc, mut st, mut nt) = (0.0, 0usize, 0.0, 0usize);
        for r in &self.records {
            if r.treated {
                st += r.salary;
                nt += 1;
            } else {
                sc += r.salary;
                nc += 1;
            }
        }
        Ok((sc / nc as f64, st / nt as f64))
    }

    /// Rows `indices` in the given order; imputed values carry over.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            outcome_log: indices.iter().map(|&i| self.outcome_log[i]).collect(),
            productivity_log: indices.iter().map(|&i| self.productivity_log[i]).collect(),
            imputed: indices.iter().map(|&i| self.imputed[i]).collect(),
        }
    }

    /// Numeric value of a non-factor field for row `i`.
    pub fn numeric(&self, field: Field, i: usize) -> Result<f64> {
        let r = &self.records[i];
        Ok(match field {
            Field::Treatment => f64::from(u8::from(r.treated)),
            Field::WorkingYears => r.working_years,
            Field::ProductivityLog => self.productivity_log[i].ok_or(Error::MissingProductivity)?,
            Field::HasProfile => f64::from(u8::from(r.has_profile)),
            f => return Err(Error::Formula(format!("`{}` is categorical", f.name()))),
        })
    }

    /// Level index and level count of a factor field for row `i`.
    pub fn level(&self, field: Field, i: usize) -> Option<usize> {
        let r = &self.records[i];
        match field {
            Field::Title => Some(r.title.index()),
            Field::UniversityClass => Some(r.university_class.index()),
            Field::Department => Some(r.department.index()),
            _ => None,
        }
    }
}

/// Level labels for a factor field.
pub fn factor_levels(field: Field) -> &'static [&'static str] {
    match field {
        Field::Title => &["Assistant", "Associate", "Full"],
        Field::UniversityClass => &["BM", "DRUH", "DUVA"],
        Field::Department => &["AH", "B", "MHS", "NS", "SS", "TE"],
        _ => &[],
    }
}

/// Maps logical columns to CSV header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub salary: String,
    pub gender: String,
    pub title: String,
    pub university_class: String,
    pub department: String,
    pub working_years: String,
    pub i10_index: String,
    pub has_scholar_id: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            salary: "salary".into(),
            gender: "gender".into(),
            title: "title".into(),
            university_class: "university_class".into(),
            department: "department".into(),
            working_years: "working_years".into(),
            i10_index: "i10_index".into(),
            has_scholar_id: "has_scholar_id".into(),
        }
    }
}

impl ColumnMap {
    fn ordered(&self) -> [&str; 8] {
        [
            &self.salary,
            &self.gender,
            &self.title,
            &self.university_class,
            &self.department,
            &self.working_years,
            &self.i10_index,
            &self.has_scholar_id,
        ]
    }
}

/// Counts from ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_below_floor: usize,
    pub rows_kept: usize,
    pub missing_productivity: usize,
    pub imputed: usize,
}

impl LoadReport {
    pub fn to_text(&self) -> String {
        format!(
            "rows_read: {}\ndropped: {}\nrows_kept: {}\nmissing_productivity: {}\nimputed: {}\n",
            self.rows_read, self.dropped_below_floor, self.rows_kept, self.missing_productivity, self.imputed
        )
    }
}

/// Plain integer or decimal; no signs, separators or exponents.
fn parse_plain_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() || s.starts_with('.') || s.ends_with('.') {
        return None;
    }
    let mut dots = 0;
    for c in s.chars() {
        match c {
            '0'..='9' => {}
            '.' => dots += 1,
            _ => return None,
        }
    }
    if dots > 1 {
        return None;
    }
    s.parse().ok()
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim() {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Reads the input CSV, dropping rows whose salary is below `salary_floor`.
///
/// Lines starting with `#` are treated as comments.
pub fn load_dataset(path: impl AsRef<Path>, columns: &ColumnMap, salary_floor: f64) -> Result<(Dataset, LoadReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset(file, columns, salary_floor)
}

pub fn read_dataset<R: std::io::Read>(reader: R, columns: &ColumnMap, salary_floor: f64) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 8];
    for (slot, name) in idx.iter_mut().zip(columns.ordered()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = |k: usize| row.get(idx[k]).unwrap_or("");
        let err = |k: usize, what: String| Error::Row { line, message: format!("column `{}`: {}", columns.ordered()[k], what) };
        report.rows_read += 1;

        let salary = parse_plain_number(cell(0)).ok_or_else(|| err(0, format!("`{}` is not a plain number", cell(0))))?;
        let treated = parse_flag(cell(1)).ok_or_else(|| err(1, format!("`{}` is not 0 or 1", cell(1))))?;
        let title: Title = cell(2).parse().map_err(|e| err(2, e))?;
        let university_class: UniversityClass = cell(3).parse().map_err(|e| err(3, e))?;
        let department: Department = cell(4).parse().map_err(|e| err(4, e))?;
        let working_years =
            parse_plain_number(cell(5)).ok_or_else(|| err(5, format!("`{}` is not a nonnegative number", cell(5))))?;
        let productivity_raw = match cell(6).trim() {
            "" => None,
            s => Some(parse_plain_number(s).ok_or_else(|| err(6, format!("`{s}` is not a nonnegative number")))?),
        };
        let has_profile = parse_flag(cell(7)).ok_or_else(|| err(7, format!("`{}` is not 0 or 1", cell(7))))?;

        if salary < salary_floor || salary <= 0.0 {
            report.dropped_below_floor += 1;
            continue;
        }
        if productivity_raw.is_none() {
            report.missing_productivity += 1;
        }
        records.push(UnitRecord {
            salary,
            treated,
            title,
            university_class,
            department,
            working_years,
            productivity_raw,
            has_profile,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    report.rows_kept = records.len();
    Ok((Dataset::new(records)?, report))
}

/// Writes raw fields in the input schema. `preamble` lines are emitted as `#` comments.
pub fn write_dataset(path: impl AsRef<Path>, d: &Dataset, columns: &ColumnMap, preamble: &[String]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for line in preamble {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns.ordered())?;
    for r in d.records() {
        w.write_record([
            r.salary.to_string(),
            u8::from(r.treated).to_string(),
            r.title.to_string(),
            r.university_class.to_string(),
            r.department.to_string(),
            r.working_years.to_string(),
            r.productivity_raw.map(|p| p.to_string()).unwrap_or_default(),
            u8::from(r.has_profile).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scale on which group means are taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeScale {
    #[default]
    Log,
    Raw,
}

pub fn default_impute_keys() -> Vec<Field> {
    vec![Field::Treatment, Field::Department, Field::Title]
}

fn group_key(d: &Dataset, keys: &[Field], i: usize) -> Vec<usize> {
    let r = &d.records[i];
    keys.iter()
        .map(|k| match k {
            Field::Treatment => usize::from(r.treated),
            Field::HasProfile => usize::from(r.has_profile),
            Field::Title => r.title.index(),
            Field::UniversityClass => r.university_class.index(),
            Field::Department => r.department.index(),
            // Continuous keys would make singleton groups; rejected upstream.
            Field::WorkingYears | Field::ProductivityLog => 0,
        })
        .collect()
}

/// Replaces missing productivity by the mean over units sharing `keys`,
/// falling back to the global mean when a group has no observed value.
/// Returns the new dataset and the number of filled rows.
pub fn impute_group_mean(d: &Dataset, keys: &[Field], scale: ImputeScale) -> Result<(Dataset, usize)> {
    if keys.is_empty() {
        return Err(Error::invalid("imputation needs at least one group key"));
    }
    if let Some(k) = keys.iter().find(|k| matches!(k, Field::WorkingYears | Field::ProductivityLog)) {
        return Err(Error::invalid(format!("`{}` cannot be an imputation group key", k.name())));
    }
    let value = |i: usize| -> Option<f64> {
        match scale {
            ImputeScale::Log => d.productivity_log[i],
            ImputeScale::Raw => d.records[i].productivity_raw,
        }
    };
    let (mut gsum, mut gcnt) = (0.0, 0usize);
    let mut groups: BTreeMap<Vec<usize>, (f64, usize)> = BTreeMap::new();
    for i in 0..d.len() {
        if let Some(v) = value(i) {
            gsum += v;
            gcnt += 1;
            let e = groups.entry(group_key(d, keys, i)).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    if gcnt == 0 {
        return Err(Error::NothingToImpute);
    }
    let global = gsum / gcnt as f64;

    let mut out = d.clone();
    let mut filled = 0;
    for i in 0..d.len() {
        if d.productivity_log[i].is_some() {
            continue;
        }
        let mean = groups.get(&group_key(d, keys, i)).map_or(global, |&(s, c)| s / c as f64);
        out.productivity_log[i] = Some(match scale {
            ImputeScale::Log => mean,
            ImputeScale::Raw => productivity_log_of(mean),
        });
        out.imputed[i] = true;
        filled += 1;
    }
    Ok((out, filled))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(salary: f64, treated: bool, dept: Department, title: Title, prod: Option<f64>) -> UnitRecord {
        UnitRecord {
            salary,
            treated,
            title,
            university_class: UniversityClass::DUVA,
            department: dept,
            working_years: 5.0,
            productivity_raw: prod,
            has_profile: prod.is_some(),
        }
    }

    const HEADER: &str = "salary,gender,title,university_class,department,working_years,i10_index,has_scholar_id\n";

    #[test]
    fn floor_drops_rows_and_counts_them() {
        let csv = format!("{HEADER}50000,1,Assistant,BM,AH,3,4,1\n20000,0,Full,DUVA,NS,20,,0\n90000,0,Full,DRUH,TE,12,30,1\n");
        let (d, rep) = read_dataset(csv.as_bytes(), &ColumnMap::default(), 27000.0).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(rep.dropped_below_floor, 1);
        assert!(rep.to_text().contains("dropped: 1"));
    }

    #[test]
    fn bad_department_is_a_row_error_with_line() {
        let csv = format!("{HEADER}50000,1,Assistant,BM,XX,3,4,1\n");
        match read_dataset(csv.as_bytes(), &ColumnMap::default(), 0.0) {
            Err(Error::Row { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("department"), "{message}");
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "salary,gender\n1,1\n";
        match read_dataset(csv.as_bytes(), &ColumnMap::default(), 0.0) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "title"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn thousands_separator_rejected() {
        let csv = format!("{HEADER}\"50,000\",1,Assistant,BM,AH,3,4,1\n");
        assert!(matches!(read_dataset(csv.as_bytes(), &ColumnMap::default(), 0.0), Err(Error::Row { .. })));
        assert_eq!(parse_plain_number("1e5"), None);
        assert_eq!(parse_plain_number("-3"), None);
        assert_eq!(parse_plain_number("12.50"), Some(12.5));
    }

    #[test]
    fn all_rows_below_floor_is_fatal() {
        let csv = format!("{HEADER}100,1,Assistant,BM,AH,3,4,1\n");
        assert!(matches!(read_dataset(csv.as_bytes(), &ColumnMap::default(), 27000.0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn renamed_columns_via_map() {
        let csv = "pay,female,rank,cls,dept,yrs,i10,gs\n60000,0,Full,BM,B,10,0,1\n";
        let map = ColumnMap {
            salary: "pay".into(),
            gender: "female".into(),
            title: "rank".into(),
            university_class: "cls".into(),
            department: "dept".into(),
            working_years: "yrs".into(),
            i10_index: "i10".into(),
            has_scholar_id: "gs".into(),
        };
        let (d, _) = read_dataset(csv.as_bytes(), &map, 0.0).unwrap();
        assert_eq!(d.productivity_log()[0], Some(0.0));
        assert_eq!(d.records()[0].department, Department::B);
    }

    #[test]
    fn group_mean_arithmetic() {
        // Log-scale values 1.0 and 3.0: raw counts 9 and 999.
        let d = Dataset::new(vec![
            rec(5e4, true, Department::AH, Title::Full, Some(9.0)),
            rec(5e4, true, Department::AH, Title::Full, Some(999.0)),
            rec(5e4, true, Department::AH, Title::Full, None),
        ])
        .unwrap();
        let (out, n) = impute_group_mean(&d, &default_impute_keys(), ImputeScale::Log).unwrap();
        assert_eq!(n, 1);
        assert!((out.productivity_log()[2].unwrap() - 2.0).abs() < 1e-12);
        assert!(out.imputed()[2]);
        assert!(!out.records()[2].has_profile);
    }

    #[test]
    fn empty_group_falls_back_to_global_mean() {
        // Group (treated, AH, Full) observed {0.5, 2.5}; group (control, NS, Full) all null.
        let a = 10f64.powf(0.5) - 1.0;
        let b = 10f64.powf(2.5) - 1.0;
        let d = Dataset::new(vec![
            rec(5e4, true, Department::AH, Title::Full, Some(a)),
            rec(5e4, true, Department::AH, Title::Full, Some(b)),
            rec(5e4, false, Department::NS, Title::Full, None),
            rec(5e4, false, Department::NS, Title::Full, None),
        ])
        .unwrap();
        let (out, n) = impute_group_mean(&d, &default_impute_keys(), ImputeScale::Log).unwrap();
        assert_eq!(n, 2);
        for i in 2..4 {
            assert!((out.productivity_log()[i].unwrap() - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn imputation_without_nulls_is_identity_and_idempotent() {
        let d = Dataset::new(vec![
            rec(5e4, true, Department::AH, Title::Full, Some(3.0)),
            rec(6e4, false, Department::B, Title::Assistant, None),
            rec(7e4, false, Department::B, Title::Assistant, Some(7.0)),
        ])
        .unwrap();
        let (once, _) = impute_group_mean(&d, &default_impute_keys(), ImputeScale::Log).unwrap();
        let (twice, n) = impute_group_mean(&once, &default_impute_keys(), ImputeScale::Log).unwrap();
        assert_eq!(n, 0);
        assert_eq!(once, twice);
    }

    #[test]
    fn raw_scale_imputation() {
        let d = Dataset::new(vec![
            rec(5e4, true, Department::AH, Title::Full, Some(9.0)),
            rec(5e4, true, Department::AH, Title::Full, Some(99.0)),
            rec(5e4, true, Department::AH, Title::Full, None),
        ])
        .unwrap();
        let (out, _) = impute_group_mean(&d, &default_impute_keys(), ImputeScale::Raw).unwrap();
        assert!((out.productivity_log()[2].unwrap() - 55f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn all_null_is_fatal() {
        let d = Dataset::new(vec![rec(5e4, true, Department::AH, Title::Full, None)]).unwrap();
        assert!(matches!(
            impute_group_mean(&d, &default_impute_keys(), ImputeScale::Log),
            Err(Error::NothingToImpute)
        ));
    }

    #[test]
    fn field_names_parse() {
        assert_eq!("department".parse::<Field>().unwrap(), Field::Department);
        assert!(matches!("dept".parse::<Field>(), Err(Error::Formula(_))));
    }
}
