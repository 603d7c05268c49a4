//! Model formulas and dummy-coded, interaction-expanded design matrices.
//!
//! A formula is an optional intercept plus terms; each term is a product of
//! fields written `a:b:c`. A factor standing alone is treatment-coded against
//! its first level. A factor that appears inside a product gets its full
//! indicator set, so `title:working_years` yields one slope per title.

use std::fmt;
use std::str::FromStr;

use crate::data::{factor_levels, Dataset, Field};
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Matrix { nrows, ncols, data: vec![0.0; nrows * ncols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        Ok(Matrix { nrows: rows.len(), ncols, data: rows.concat() })
    }

    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let nrows = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != nrows) {
            return Err(Error::invalid("columns differ in length"));
        }
        let mut m = Matrix::zeros(nrows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                m.data[i * m.ncols + j] = v;
            }
        }
        Ok(m)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Matrix { nrows: rows.len(), ncols: self.ncols, data }
    }
}

/// One product term of a formula.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub fields: Vec<Field>,
}

impl Term {
    pub fn new(fields: impl Into<Vec<Field>>) -> Self {
        Term { fields: fields.into() }
    }

    fn full_dummies(&self) -> bool {
        self.fields.len() > 1
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.fields.iter().map(|x| x.name()).collect();
        f.write_str(&names.join(":"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    pub intercept: bool,
    pub terms: Vec<Term>,
}

impl Formula {
    pub fn intercept_only() -> Self {
        Formula { intercept: true, terms: Vec::new() }
    }

    pub fn new(terms: Vec<Term>) -> Self {
        Formula { intercept: true, terms }
    }

    /// Same formula with the treatment indicator as the first term (column 1).
    pub fn with_treatment(&self) -> Formula {
        let mut terms = vec![Term::new([Field::Treatment])];
        terms.extend(self.terms.iter().filter(|t| t.fields != [Field::Treatment]).cloned());
        Formula { intercept: self.intercept, terms }
    }

    pub fn with_term(&self, term: Term) -> Formula {
        let mut f = self.clone();
        if !f.terms.contains(&term) {
            f.terms.push(term);
        }
        f
    }

    pub fn without_field(&self, field: Field) -> Formula {
        Formula {
            intercept: self.intercept,
            terms: self.terms.iter().filter(|t| !t.fields.contains(&field)).cloned().collect(),
        }
    }

    pub fn references(&self, field: Field) -> bool {
        self.terms.iter().any(|t| t.fields.contains(&field))
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        parts.push(if self.intercept { "1".into() } else { "0".into() });
        parts.extend(self.terms.iter().map(|t| t.to_string()));
        f.write_str(&parts.join(" + "))
    }
}

impl FromStr for Formula {
    type Err = Error;

    /// Parses `1 + title + title:working_years`; `0` drops the intercept.
    fn from_str(s: &str) -> Result<Self> {
        let mut intercept = true;
        let mut terms = Vec::new();
        for raw in s.split('+') {
            let raw = raw.trim();
            match raw {
                "" => return Err(Error::Formula(format!("empty term in `{s}`"))),
                "1" => intercept = true,
                "0" | "-1" => intercept = false,
                _ => {
                    let fields = raw.split(':').map(str::parse).collect::<Result<Vec<Field>>>()?;
                    let mut seen = fields.clone();
                    seen.sort();
                    seen.dedup();
                    if seen.len() != fields.len() {
                        return Err(Error::Formula(format!("field repeated in term `{raw}`")));
                    }
                    let term = Term::new(fields);
                    if !terms.contains(&term) {
                        terms.push(term);
                    }
                }
            }
        }
        Ok(Formula { intercept, terms })
    }
}

/// Where a design column came from: indicators of `factors` times `numerics`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSource {
    pub factors: Vec<(Field, usize)>,
    pub numerics: Vec<Field>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub labels: Vec<String>,
    pub sources: Vec<ColumnSource>,
    pub values: Matrix,
    pub has_intercept: bool,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Wraps a raw matrix with generated labels `x0, x1, ...`.
    pub fn from_matrix(values: Matrix, has_intercept: bool) -> Self {
        let labels = (0..values.ncols()).map(|j| format!("x{j}")).collect();
        let sources = vec![ColumnSource { factors: vec![], numerics: vec![] }; values.ncols()];
        DesignMatrix { labels, sources, values, has_intercept }
    }

    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        DesignMatrix {
            labels: self.labels.clone(),
            sources: self.sources.clone(),
            values: self.values.select_rows(rows),
            has_intercept: self.has_intercept,
        }
    }
}

fn expand_term(term: &Term) -> Vec<ColumnSource> {
    let factors: Vec<Field> = term.fields.iter().copied().filter(|f| f.is_factor()).collect();
    let numerics: Vec<Field> = term.fields.iter().copied().filter(|f| !f.is_factor()).collect();
    let mut combos: Vec<Vec<(Field, usize)>> = vec![vec![]];
    for &f in &factors {
        let nlev = factor_levels(f).len();
        let start = if term.full_dummies() { 0 } else { 1 };
        combos = combos
            .into_iter()
            .flat_map(|c| {
                (start..nlev).map(move |l| {
                    let mut c = c.clone();
                    c.push((f, l));
                    c
                })
            })
            .collect();
    }
    combos.into_iter().map(|factors| ColumnSource { factors, numerics: numerics.clone() }).collect()
}

fn label_of(src: &ColumnSource, term: &Term) -> String {
    term.fields
        .iter()
        .map(|&f| {
            if f.is_factor() {
                let lvl = src.factors.iter().find(|(g, _)| *g == f).map(|&(_, l)| l).unwrap_or(0);
                format!("{}[{}]", f.name(), factor_levels(f)[lvl])
            } else {
                f.name().to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(":")
}

/// Expands `formula` over the rows of `d`. The intercept, when present, is column 0.
pub fn build_design(d: &Dataset, formula: &Formula) -> Result<DesignMatrix> {
    let mut labels = Vec::new();
    let mut sources = Vec::new();
    if formula.intercept {
        labels.push("(Intercept)".to_string());
        sources.push(ColumnSource { factors: vec![], numerics: vec![] });
    }
    for term in &formula.terms {
        for src in expand_term(term) {
            labels.push(label_of(&src, term));
            sources.push(src);
        }
    }
    {
        let mut sorted = labels.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Formula(format!("duplicate column `{}`", w[0])));
        }
    }

    let n = d.len();
    let p = labels.len();
    let mut values = Matrix::zeros(n, p);
    for (j, src) in sources.iter().enumerate() {
        for i in 0..n {
            let hit = src.factors.iter().all(|&(f, l)| d.level(f, i) == Some(l));
            let mut v = if hit { 1.0 } else { 0.0 };
            if hit {
                for &nf in &src.numerics {
                    v *= d.numeric(nf, i)?;
                }
            }
            values.set(i, j, v);
        }
    }
    Ok(DesignMatrix { labels, sources, values, has_intercept: formula.intercept })
}

/// `1 + university_class:department:productivity_log + title:working_years`.
pub fn default_ps_spec() -> Formula {
    Formula::new(vec![
        Term::new([Field::UniversityClass, Field::Department, Field::ProductivityLog]),
        Term::new([Field::Title, Field::WorkingYears]),
    ])
}

/// Main-effects benchmark regression with the treatment indicator.
pub fn baseline_ols_spec() -> Formula {
    Formula::new(vec![
        Term::new([Field::Treatment]),
        Term::new([Field::Title]),
        Term::new([Field::UniversityClass]),
        Term::new([Field::Department]),
        Term::new([Field::WorkingYears]),
        Term::new([Field::ProductivityLog]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{generate, DgpSpec};

    fn sample() -> Dataset {
        generate(&DgpSpec::canonical(300, 7)).unwrap().0
    }

    #[test]
    fn intercept_only_is_ones() {
        let d = sample();
        let x = build_design(&d, &Formula::intercept_only()).unwrap();
        assert_eq!(x.ncols(), 1);
        assert!(x.values.column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn title_by_years_gives_three_slopes() {
        let d = sample();
        let f: Formula = "0 + title:working_years".parse().unwrap();
        let x = build_design(&d, &f).unwrap();
        assert_eq!(
            x.labels,
            vec![
                "title[Assistant]:working_years",
                "title[Associate]:working_years",
                "title[Full]:working_years"
            ]
        );
    }

    #[test]
    fn class_by_department_by_productivity_gives_eighteen() {
        let d = sample();
        let f: Formula = "0 + university_class:department:productivity_log".parse().unwrap();
        let x = build_design(&d, &f).unwrap();
        assert_eq!(x.ncols(), 3 * 6);
    }

    #[test]
    fn ps_spec_width_and_unique_cells() {
        let d = sample();
        let x = build_design(&d, &default_ps_spec()).unwrap();
        assert_eq!(x.ncols(), 1 + 18 + 3);
        assert_eq!(x.labels[0], "(Intercept)");
        for c in ["BM", "DRUH", "DUVA"] {
            for dep in ["AH", "B", "MHS", "NS", "SS", "TE"] {
                let key = format!("university_class[{c}]:department[{dep}]:productivity_log");
                assert_eq!(x.labels.iter().filter(|l| **l == key).count(), 1);
            }
        }
        assert!(!default_ps_spec().references(Field::HasProfile));
    }

    #[test]
    fn main_effect_factor_drops_reference() {
        let d = sample();
        let x = build_design(&d, &baseline_ols_spec()).unwrap();
        assert_eq!(x.labels[1], "treatment");
        assert!(x.column_index("title[Assistant]").is_none());
        assert!(x.column_index("title[Associate]").is_some());
        assert!(x.column_index("department[AH]").is_none());
        // 1 + treatment + 2 + 2 + 5 + years + productivity
        assert_eq!(x.ncols(), 13);
    }

    #[test]
    fn unknown_field_is_formula_error() {
        assert!(matches!("1 + university_class:dept:productivity_log".parse::<Formula>(), Err(Error::Formula(_))));
        assert!(matches!("1 + title:title".parse::<Formula>(), Err(Error::Formula(_))));
    }

    #[test]
    fn with_treatment_puts_indicator_second() {
        let f = default_ps_spec().with_treatment();
        assert_eq!(f.to_string(), "1 + treatment + university_class:department:productivity_log + title:working_years");
        let round: Formula = f.to_string().parse().unwrap();
        assert_eq!(round, f);
    }

    #[test]
    fn interaction_columns_are_products_of_parents() {
        let d = sample();
        let x = build_design(&d, &default_ps_spec().with_treatment()).unwrap();
        for i in 0..d.len() {
            for (j, src) in x.sources.iter().enumerate() {
                let mut expect = 1.0;
                for &(f, l) in &src.factors {
                    expect *= if d.level(f, i) == Some(l) { 1.0 } else { 0.0 };
                }
                for &nf in &src.numerics {
                    expect *= d.numeric(nf, i).unwrap();
                }
                assert_eq!(x.values.get(i, j), expect);
            }
        }
    }

    #[test]
    fn dummy_blocks_sum_to_at_most_one() {
        let d = sample();
        let full = build_design(&d, &"0 + title:has_profile".parse().unwrap()).unwrap();
        let reduced = build_design(&d, &"1 + title".parse().unwrap()).unwrap();
        for i in 0..d.len() {
            let s: f64 = full.values.row(i).iter().sum();
            assert_eq!(s, d.numeric(Field::HasProfile, i).unwrap());
            let r: f64 = reduced.values.row(i)[1..].iter().sum();
            assert!(r <= 1.0);
        }
    }
}
