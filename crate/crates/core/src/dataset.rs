//! Observational data ingest: variable roles, CSV parsing and missing-value
//! filtering.
//!
//! A frame only ever holds units that are complete on every role-bearing
//! variable (id, outcome, exposure, confounders). Passenger variables may
//! carry missing values; they ride along for reporting.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Id,
    Outcome,
    Exposure,
    Confounder,
    Passenger,
}

impl Role {
    /// Missingness on a role-bearing variable drops the unit.
    pub fn is_role_bearing(self) -> bool {
        !matches!(self, Role::Passenger)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_range: Option<[f64; 2]>,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        VariableSpec {
            name: name.into(),
            role,
            declared_range: None,
        }
    }

    pub fn with_range(mut self, min: f64, max: f64) -> Self {
        self.declared_range = Some([min, max]);
        self
    }
}

/// Validated list of variables with their roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VariableSpec>", into = "Vec<VariableSpec>")]
pub struct VariableSchema {
    variables: Vec<VariableSpec>,
}

impl TryFrom<Vec<VariableSpec>> for VariableSchema {
    type Error = LcError;

    fn try_from(variables: Vec<VariableSpec>) -> Result<Self> {
        VariableSchema::new(variables)
    }
}

impl From<VariableSchema> for Vec<VariableSpec> {
    fn from(schema: VariableSchema) -> Self {
        schema.variables
    }
}

impl VariableSchema {
    pub fn new(variables: Vec<VariableSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &variables {
            if v.name.trim().is_empty() {
                return Err(LcError::Schema("variable names must be non-empty".into()));
            }
            if !seen.insert(v.name.as_str()) {
                return Err(LcError::Schema(format!("duplicate variable `{}`", v.name)));
            }
            if let Some([lo, hi]) = v.declared_range {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(LcError::Schema(format!(
                        "declared range of `{}` must be finite with min <= max",
                        v.name
                    )));
                }
            }
        }
        for (role, label) in [
            (Role::Id, "id"),
            (Role::Outcome, "outcome"),
            (Role::Exposure, "exposure"),
        ] {
            let count = variables.iter().filter(|v| v.role == role).count();
            if count != 1 {
                return Err(LcError::Schema(format!(
                    "exactly one {label} variable required, found {count}"
                )));
            }
        }
        let confounders = variables
            .iter()
            .filter(|v| v.role == Role::Confounder)
            .count();
        if confounders < 2 {
            return Err(LcError::Schema(format!(
                "at least two confounders required, found {confounders}"
            )));
        }
        Ok(VariableSchema { variables })
    }

    /// Convenience constructor from role-grouped names.
    pub fn from_roles(
        id: &str,
        outcome: &str,
        exposure: &str,
        confounders: &[&str],
        passengers: &[&str],
    ) -> Result<Self> {
        let mut vars = vec![
            VariableSpec::new(id, Role::Id),
            VariableSpec::new(outcome, Role::Outcome),
            VariableSpec::new(exposure, Role::Exposure),
        ];
        vars.extend(confounders.iter().map(|c| VariableSpec::new(*c, Role::Confounder)));
        vars.extend(passengers.iter().map(|p| VariableSpec::new(*p, Role::Passenger)));
        VariableSchema::new(vars)
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    fn name_with_role(&self, role: Role) -> &str {
        self.variables
            .iter()
            .find(|v| v.role == role)
            .map(|v| v.name.as_str())
            .expect("schema invariant: role present")
    }

    pub fn id(&self) -> &str {
        self.name_with_role(Role::Id)
    }

    pub fn outcome(&self) -> &str {
        self.name_with_role(Role::Outcome)
    }

    pub fn exposure(&self) -> &str {
        self.name_with_role(Role::Exposure)
    }

    pub fn confounders(&self) -> Vec<&str> {
        self.variables
            .iter()
            .filter(|v| v.role == Role::Confounder)
            .map(|v| v.name.as_str())
            .collect()
    }
}

/// One experimental unit. `values` is aligned with the schema's variable
/// order; the id slot carries the id itself.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub id: u64,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisFrame {
    schema: VariableSchema,
    units: Vec<UnitRecord>,
    n_dropped: usize,
    warnings: Vec<String>,
}

impl AnalysisFrame {
    /// Filters incomplete units and orders the rest by ascending id.
    pub fn new(schema: VariableSchema, units: Vec<UnitRecord>) -> Result<Self> {
        Self::with_dropped(schema, units, 0)
    }

    fn with_dropped(
        schema: VariableSchema,
        units: Vec<UnitRecord>,
        already_dropped: usize,
    ) -> Result<Self> {
        let bearing: Vec<usize> = schema
            .variables()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.role.is_role_bearing())
            .map(|(i, _)| i)
            .collect();
        let mut kept = Vec::with_capacity(units.len());
        let mut n_dropped = already_dropped;
        for unit in units {
            if unit.values.len() != schema.len() {
                return Err(LcError::LengthMismatch(unit.values.len(), schema.len()));
            }
            if unit.values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(LcError::Parameter(format!(
                    "unit {} holds a non-finite value",
                    unit.id
                )));
            }
            let complete = unit.id > 0 && bearing.iter().all(|&i| unit.values[i].is_some());
            if complete {
                kept.push(unit);
            } else {
                n_dropped += 1;
            }
        }
        if kept.is_empty() {
            return Err(LcError::NoUnits);
        }
        kept.sort_by_key(|u| u.id);
        if let Some(w) = kept.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(LcError::DuplicateId(w[0].id));
        }

        let mut warnings = Vec::new();
        for (j, spec) in schema.variables().iter().enumerate() {
            let Some([lo, hi]) = spec.declared_range else {
                continue;
            };
            let outside = kept
                .iter()
                .filter_map(|u| u.values[j])
                .filter(|&v| v < lo || v > hi)
                .count();
            if outside > 0 {
                let msg = format!(
                    "{outside} value(s) of `{}` outside declared range [{lo}, {hi}]",
                    spec.name
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }

        Ok(AnalysisFrame {
            schema,
            units: kept,
            n_dropped,
            warnings,
        })
    }

    /// Builds a frame from complete columns, one per schema variable except
    /// the id, given in schema order.
    pub fn from_columns(schema: VariableSchema, ids: &[u64], columns: &[Vec<f64>]) -> Result<Self> {
        let id_index = schema.index_of(schema.id()).expect("id present");
        if columns.len() + 1 != schema.len() {
            return Err(LcError::LengthMismatch(columns.len() + 1, schema.len()));
        }
        if let Some(col) = columns.iter().find(|c| c.len() != ids.len()) {
            return Err(LcError::LengthMismatch(col.len(), ids.len()));
        }
        let units = ids
            .iter()
            .enumerate()
            .map(|(row, &id)| {
                let mut values = Vec::with_capacity(schema.len());
                let mut col = columns.iter();
                for j in 0..schema.len() {
                    if j == id_index {
                        values.push(Some(id as f64));
                    } else {
                        values.push(Some(col.next().expect("checked")[row]));
                    }
                }
                UnitRecord { id, values }
            })
            .collect();
        AnalysisFrame::new(schema, units)
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn n_dropped(&self) -> usize {
        self.n_dropped
    }

    /// Declared-range violations observed at construction.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.units.iter().map(|u| u.id).collect()
    }

    /// Values of one variable in frame order. Fails on passenger columns
    /// that still hold missing values; see [`AnalysisFrame::column_with_missing`].
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.column_with_missing(name)?
            .into_iter()
            .map(|v| v.ok_or_else(|| LcError::MissingValues(name.to_string())))
            .collect()
    }

    pub fn column_with_missing(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let j = self
            .schema
            .index_of(name)
            .ok_or_else(|| LcError::UnknownVariable(name.to_string()))?;
        Ok(self.units.iter().map(|u| u.values[j]).collect())
    }

    /// Frame restricted to the given row positions (frame order preserved).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let units = rows.iter().map(|&r| self.units[r].clone()).collect();
        AnalysisFrame::new(self.schema.clone(), units)
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_id(raw: &str) -> Option<u64> {
    let t = raw.trim();
    if let Ok(id) = t.parse::<u64>() {
        return (id > 0).then_some(id);
    }
    // ids exported through spreadsheets sometimes arrive as "1001.0"
    let v = parse_cell(t)?;
    (v >= 1.0 && v.fract() == 0.0 && v < u64::MAX as f64).then_some(v as u64)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &VariableSchema) -> Result<AnalysisFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| LcError::io(path, e))?;
    load_csv_reader(file, schema)
}

/// Parses RFC-4180 CSV with a header row. Columns not in the schema are
/// ignored.
pub fn load_csv_reader<R: Read>(reader: R, schema: &VariableSchema) -> Result<AnalysisFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let positions: Vec<usize> = schema
        .variables()
        .iter()
        .map(|v| {
            headers
                .iter()
                .position(|h| h == v.name)
                .ok_or_else(|| LcError::MissingColumn(v.name.clone()))
        })
        .collect::<Result<_>>()?;
    let id_slot = schema.index_of(schema.id()).expect("id present");

    let mut units = Vec::new();
    let mut unparseable_ids = 0;
    for record in rdr.records() {
        let record = record?;
        let Some(id) = parse_id(record.get(positions[id_slot]).unwrap_or("")) else {
            unparseable_ids += 1;
            continue;
        };
        let values = positions
            .iter()
            .enumerate()
            .map(|(slot, &col)| {
                if slot == id_slot {
                    Some(id as f64)
                } else {
                    record.get(col).and_then(parse_cell)
                }
            })
            .collect();
        units.push(UnitRecord { id, values });
    }
    AnalysisFrame::with_dropped(schema.clone(), units, unparseable_ids)
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(LcError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(LcError::TooFew {
            needed: 2,
            got: x.len(),
        });
    }
    pearson_unchecked(x, y).ok_or(LcError::UndefinedCorrelation)
}

/// Two-pass centered formula; `None` when either input is constant.
pub(crate) fn pearson_unchecked(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Id => "id",
            Role::Outcome => "outcome",
            Role::Exposure => "exposure",
            Role::Confounder => "confounder",
            Role::Passenger => "passenger",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> VariableSchema {
        VariableSchema::from_roles("FIPS", "y", "e", &["c1", "c2"], &["p"]).unwrap()
    }

    fn load(text: &str) -> Result<AnalysisFrame> {
        load_csv_reader(text.as_bytes(), &schema())
    }

    #[test]
    fn schema_invariants() {
        assert!(VariableSchema::from_roles("id", "y", "e", &["c1"], &[]).is_err());
        let dup = vec![
            VariableSpec::new("id", Role::Id),
            VariableSpec::new("y", Role::Outcome),
            VariableSpec::new("e", Role::Exposure),
            VariableSpec::new("c", Role::Confounder),
            VariableSpec::new("c", Role::Confounder),
        ];
        assert!(VariableSchema::new(dup).is_err());
        let two_outcomes = vec![
            VariableSpec::new("id", Role::Id),
            VariableSpec::new("y", Role::Outcome),
            VariableSpec::new("y2", Role::Outcome),
            VariableSpec::new("e", Role::Exposure),
            VariableSpec::new("c1", Role::Confounder),
            VariableSpec::new("c2", Role::Confounder),
        ];
        assert!(VariableSchema::new(two_outcomes).is_err());
        assert!(VariableSchema::from_roles("id", "y", "e", &["c1", ""], &[]).is_err());
    }

    #[test]
    fn schema_json_roundtrip_validates() {
        let json = serde_json::to_string(&schema()).unwrap();
        let back: VariableSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, schema());
        let bad = r#"[{"name":"id","role":"id"},{"name":"y","role":"outcome"}]"#;
        assert!(serde_json::from_str::<VariableSchema>(bad).is_err());
    }

    #[test]
    fn clean_three_rows() {
        let f = load("FIPS,y,e,c1,c2,p\n3,1,2,3,4,5\n1,1,2,3,4,5\n2,1,2,3,4,5\n").unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.n_dropped(), 0);
        assert_eq!(f.ids(), vec![1, 2, 3]);
    }

    #[test]
    fn drops_missing_exposure() {
        let text = "FIPS,y,e,c1,c2,p\n1,1,,3,4,5\n2,1,2,3,4,5\n3,1,NA,3,4,5\n4,1,2,3,4,5\n5,1,2,3,4,5\n";
        let f = load(text).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.n_dropped(), 2);
    }

    #[test]
    fn passenger_missing_is_kept() {
        let f = load("FIPS,y,e,c1,c2,p\n1,1,2,3,4,NA\n2,1,2,3,4,NaN\n").unwrap();
        assert_eq!(f.len(), 2);
        assert!(matches!(f.column("p"), Err(LcError::MissingValues(_))));
        assert_eq!(f.column_with_missing("p").unwrap(), vec![None, None]);
    }

    #[test]
    fn nonfinite_text_is_missing() {
        let f = load("FIPS,y,e,c1,c2,p\n1,inf,2,3,4,5\n2,1,2,3,4,5\n").unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.n_dropped(), 1);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(
            load("FIPS,y,e,c1,p\n1,1,2,3,4\n"),
            Err(LcError::MissingColumn(c)) if c == "c2"
        ));
        assert!(matches!(
            load("FIPS,y,e,c1,c2,p\n1,1,2,3,4,5\n1,1,2,3,4,5\n"),
            Err(LcError::DuplicateId(1))
        ));
        assert!(matches!(
            load("FIPS,y,e,c1,c2,p\n1,NA,2,3,4,5\n"),
            Err(LcError::NoUnits)
        ));
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &schema()),
            Err(LcError::Io { .. })
        ));
    }

    #[test]
    fn column_lookup() {
        let f = load("FIPS,y,e,c1,c2,p\n7,1.5,2,3,4,5\n").unwrap();
        assert_eq!(f.column("y").unwrap(), vec![1.5]);
        assert!(matches!(f.column("zzz"), Err(LcError::UnknownVariable(_))));
    }

    #[test]
    fn declared_range_warns_only() {
        let vars = vec![
            VariableSpec::new("FIPS", Role::Id),
            VariableSpec::new("y", Role::Outcome),
            VariableSpec::new("e", Role::Exposure).with_range(0.0, 1.0),
            VariableSpec::new("c1", Role::Confounder),
            VariableSpec::new("c2", Role::Confounder),
        ];
        let s = VariableSchema::new(vars).unwrap();
        let f = load_csv_reader("FIPS,y,e,c1,c2\n1,1,2,3,4\n".as_bytes(), &s).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.warnings().len(), 1);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        // textbook sum formula: (n Σxy − ΣxΣy) / sqrt((nΣx² − (Σx)²)(nΣy² − (Σy)²))
        let y = [2.0, 1.0, 4.0, 3.0];
        let n = 4.0;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let oracle = (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
        assert!((pearson(&x, &y).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 0.6).abs() < 1e-12);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(LcError::UndefinedCorrelation)
        ));
        assert!(matches!(pearson(&[1.0], &[1.0, 2.0]), Err(LcError::LengthMismatch(1, 2))));
    }

    fn csv_of(rows: &[(u64, [f64; 5])]) -> String {
        let mut s = String::from("FIPS,y,e,c1,c2,p\n");
        for (id, v) in rows {
            s.push_str(&format!(
                "{id},{:?},{:?},{:?},{:?},{:?}\n",
                v[0], v[1], v[2], v[3], v[4]
            ));
        }
        s
    }

    fn rows_strategy() -> impl Strategy<Value = Vec<(u64, [f64; 5])>> {
        prop::collection::btree_map(1u64..100_000, prop::array::uniform5(-1e6f64..1e6), 1..30)
            .prop_map(|m| m.into_iter().collect())
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent(rows in rows_strategy()) {
            let f = load(&csv_of(&rows)).unwrap();
            let again = AnalysisFrame::new(f.schema().clone(), f.units().to_vec()).unwrap();
            prop_assert_eq!(again.n_dropped(), 0);
            prop_assert_eq!(again.units(), f.units());
        }

        #[test]
        fn row_order_does_not_matter(rows in rows_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(load(&csv_of(&rows)).unwrap(), load(&csv_of(&shuffled)).unwrap());
        }

        #[test]
        fn column_roundtrips_text(rows in rows_strategy()) {
            let f = load(&csv_of(&rows)).unwrap();
            let col = f.column("c1").unwrap();
            // re-serialize and re-parse
            let text: Vec<String> = col.iter().map(|v| format!("{v:?}")).collect();
            for ((_, orig), t) in rows.iter().zip(&text) {
                let back: f64 = t.parse().unwrap();
                prop_assert!((back - orig[2]).abs() <= 1e-12 * orig[2].abs().max(1.0));
            }
        }

        #[test]
        fn pearson_symmetry_and_affine(
            xs in prop::collection::vec(-100.0f64..100.0, 3..40),
            a in prop::sample::select(vec![-3.5, -1.0, 0.25, 2.0, 17.0]),
            b in -50.0f64..50.0,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ys: Vec<f64> = xs.iter().map(|x| x * 0.3 + rng.random_range(-50.0..50.0)).collect();
            if let (Ok(r), Ok(r2)) = (pearson(&xs, &ys), pearson(&ys, &xs)) {
                prop_assert!((r - r2).abs() < 1e-12);
                let ax: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let ra = pearson(&ax, &ys).unwrap();
                prop_assert!((ra - a.signum() * r).abs() < 1e-12);
            }
        }
    }
}
