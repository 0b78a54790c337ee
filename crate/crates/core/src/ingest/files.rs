//! CSV cohort, ontology and mapping files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Demographics, PatientRecord, Sex, Visit};
use crate::ontology::{ConceptMapping, Ontology, SourceKind};

pub const PATIENTS_FILE: &str = "patients.csv";
pub const DIAGNOSES_FILE: &str = "diagnoses.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const ONTOLOGY_FILE: &str = "ontology.csv";
pub const MAPPING_FILE: &str = "mapping.csv";

const PATIENTS_HEADER: [&str; 5] = ["patient_id", "age", "sex", "index_date", "label"];
const DIAGNOSES_HEADER: [&str; 4] = ["patient_id", "visit_id", "time", "ccs_code"];
const MEASUREMENTS_HEADER: [&str; 5] = ["patient_id", "visit_id", "time", "item_id", "value"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortFiles {
    pub patients_path: PathBuf,
    pub diagnoses_path: PathBuf,
    pub measurements_path: PathBuf,
}

impl CohortFiles {
    /// The standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            patients_path: dir.join(PATIENTS_FILE),
            diagnoses_path: dir.join(DIAGNOSES_FILE),
            measurements_path: dir.join(MEASUREMENTS_FILE),
        }
    }
}

/// Header-indexed CSV reader that reports errors with file and line.
struct Table<R: Read> {
    path: PathBuf,
    reader: csv::Reader<R>,
    columns: Vec<usize>,
    names: &'static [&'static str],
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: csv::StringRecord,
    columns: &'a [usize],
    names: &'static [&'static str],
}

impl<'a> Row<'a> {
    fn str(&self, k: usize) -> Result<&str> {
        self.record
            .get(self.columns[k])
            .map(str::trim)
            .ok_or_else(|| Error::MissingColumn {
                path: self.path.to_path_buf(),
                line: self.line,
                column: self.names[k].to_string(),
            })
    }

    fn parse<T: FromStr>(&self, k: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(k)?;
        raw.parse::<T>().map_err(|e| Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            column: self.names[k].to_string(),
            value: raw.to_string(),
            reason: e.to_string(),
        })
    }

    fn finite(&self, k: usize) -> Result<f64> {
        let v: f64 = self.parse(k)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Parse {
                path: self.path.to_path_buf(),
                line: self.line,
                column: self.names[k].to_string(),
                value: self.str(k)?.to_string(),
                reason: "value is not finite".into(),
            })
        }
    }
}

impl<R: Read> Table<R> {
    fn new(path: &Path, input: R, names: &'static [&'static str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let header = reader.headers()?.clone();
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let idx = header
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    line: 1,
                    column: name.to_string(),
                })?;
            columns.push(idx);
        }
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            columns,
            names,
        })
    }

    fn for_each(&mut self, mut f: impl FnMut(&Row<'_>) -> Result<()>) -> Result<()> {
        for rec in self.reader.records() {
            let record = rec?;
            let line = record.position().map_or(0, |p| p.line());
            if record.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            let row = Row {
                path: &self.path,
                line,
                record,
                columns: &self.columns,
                names: self.names,
            };
            f(&row)?;
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Default)]
struct VisitAcc {
    time: i64,
    diagnoses: BTreeSet<String>,
    measurements: Vec<(String, f64)>,
}

fn visit_entry<'m>(
    visits: &'m mut HashMap<String, BTreeMap<String, VisitAcc>>,
    patient: &str,
    visit: &str,
    time: i64,
    path: &Path,
    line: u64,
) -> Result<&'m mut VisitAcc> {
    let Some(per_patient) = visits.get_mut(patient) else {
        return Err(Error::Data {
            path: path.to_path_buf(),
            message: format!("line {line}: unknown patient `{patient}`"),
        });
    };
    let acc = per_patient.entry(visit.to_string()).or_insert_with(|| VisitAcc {
        time,
        ..Default::default()
    });
    if acc.time != time {
        return Err(Error::Data {
            path: path.to_path_buf(),
            message: format!(
                "line {line}: visit `{visit}` of patient `{patient}` has times {} and {time}",
                acc.time
            ),
        });
    }
    Ok(acc)
}

/// Reads the three cohort CSVs. Records come back sorted by patient id, with
/// visits sorted by time and duplicate diagnosis rows collapsed.
pub fn load_cohort(files: &CohortFiles) -> Result<Vec<PatientRecord>> {
    let mut patients: BTreeMap<String, (Demographics, i64, bool)> = BTreeMap::new();
    let mut table = Table::new(&files.patients_path, open(&files.patients_path)?, &PATIENTS_HEADER)?;
    table.for_each(|row| {
        let id = row.str(0)?.to_string();
        let age = row.finite(1)?;
        let sex: Sex = row.parse(2)?;
        let index_date: i64 = row.parse(3)?;
        let label = match row.str(4)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    path: files.patients_path.clone(),
                    line: row.line,
                    column: "label".into(),
                    value: other.into(),
                    reason: "expected 0 or 1".into(),
                })
            }
        };
        let demo = Demographics::new(age, sex).map_err(|e| Error::Parse {
            path: files.patients_path.clone(),
            line: row.line,
            column: "age".into(),
            value: age.to_string(),
            reason: e.to_string(),
        })?;
        if patients.insert(id.clone(), (demo, index_date, label)).is_some() {
            return Err(Error::DuplicatePatient(id));
        }
        Ok(())
    })?;

    let mut visits: HashMap<String, BTreeMap<String, VisitAcc>> =
        patients.keys().map(|k| (k.clone(), BTreeMap::new())).collect();

    let path = &files.diagnoses_path;
    let mut table = Table::new(path, open(path)?, &DIAGNOSES_HEADER)?;
    table.for_each(|row| {
        let time: i64 = row.parse(2)?;
        let acc = visit_entry(&mut visits, row.str(0)?, row.str(1)?, time, path, row.line)?;
        acc.diagnoses.insert(row.str(3)?.to_string());
        Ok(())
    })?;

    let path = &files.measurements_path;
    let mut table = Table::new(path, open(path)?, &MEASUREMENTS_HEADER)?;
    table.for_each(|row| {
        let time: i64 = row.parse(2)?;
        let value = row.finite(4)?;
        let item = row.str(3)?.to_string();
        let acc = visit_entry(&mut visits, row.str(0)?, row.str(1)?, time, path, row.line)?;
        acc.measurements.push((item, value));
        Ok(())
    })?;

    let mut records = Vec::with_capacity(patients.len());
    for (id, (demo, index_date, label)) in patients {
        let vs = visits
            .remove(&id)
            .unwrap_or_default()
            .into_iter()
            .map(|(vid, acc)| Visit::new(vid, acc.time, acc.diagnoses, acc.measurements))
            .collect();
        records.push(PatientRecord::new(id, demo, vs, index_date, label)?);
    }
    Ok(records)
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

/// Writes the three cohort CSVs into `dir`. Every visit must carry at least one
/// diagnosis or measurement, since visits only exist through their rows.
pub fn write_cohort(dir: &Path, records: &[PatientRecord]) -> Result<CohortFiles> {
    std::fs::create_dir_all(dir)?;
    let files = CohortFiles::in_dir(dir);
    let mut p = create(&files.patients_path)?;
    let mut d = create(&files.diagnoses_path)?;
    let mut m = create(&files.measurements_path)?;
    p.write_record(PATIENTS_HEADER)?;
    d.write_record(DIAGNOSES_HEADER)?;
    m.write_record(MEASUREMENTS_HEADER)?;
    for r in records {
        p.write_record([
            r.patient_id.as_str(),
            &r.demographics.age.to_string(),
            r.demographics.sex.code(),
            &r.index_date.to_string(),
            if r.label { "1" } else { "0" },
        ])?;
        for v in &r.visits {
            if v.diagnoses.is_empty() && v.measurements.is_empty() {
                return Err(Error::InvalidRecord {
                    patient: r.patient_id.clone(),
                    reason: format!("visit `{}` has no rows to write", v.visit_id),
                });
            }
            let time = v.time.to_string();
            for c in &v.diagnoses {
                d.write_record([r.patient_id.as_str(), &v.visit_id, &time, c])?;
            }
            for (item, value) in &v.measurements {
                m.write_record([r.patient_id.as_str(), &v.visit_id, &time, item, &value.to_string()])?;
            }
        }
    }
    p.flush()?;
    d.flush()?;
    m.flush()?;
    Ok(files)
}

/// Reads `child_id,parent_id` rows.
pub fn load_ontology(path: &Path) -> Result<Ontology> {
    const HEADER: [&str; 2] = ["child_id", "parent_id"];
    let mut edges = Vec::new();
    Table::new(path, open(path)?, &HEADER)?.for_each(|row| {
        edges.push((row.str(0)?.to_string(), row.str(1)?.to_string()));
        Ok(())
    })?;
    Ontology::from_edges(&edges)
}

pub fn write_ontology(path: &Path, onto: &Ontology) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["child_id", "parent_id"])?;
    for (c, p) in onto.edges() {
        w.write_record([c, p])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `source_kind,source_id,concept_id` rows against `onto`.
pub fn load_mapping(path: &Path, onto: &Ontology) -> Result<ConceptMapping> {
    const HEADER: [&str; 3] = ["source_kind", "source_id", "concept_id"];
    let mut rows = Vec::new();
    Table::new(path, open(path)?, &HEADER)?.for_each(|row| {
        let kind: SourceKind = row.parse(0)?;
        rows.push((kind, row.str(1)?.to_string(), row.str(2)?.to_string()));
        Ok(())
    })?;
    ConceptMapping::from_rows(onto, &rows)
}

/// Writes raw mapping rows, including multi-candidate measurement rows.
pub fn write_mapping_rows(path: &Path, rows: &[(SourceKind, String, String)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["source_kind", "source_id", "concept_id"])?;
    for (k, s, c) in rows {
        w.write_record([k.name(), s, c])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mapping(path: &Path, mapping: &ConceptMapping) -> Result<()> {
    let rows: Vec<(SourceKind, String, String)> = mapping
        .rows()
        .into_iter()
        .map(|(k, s, c)| (k, s.to_string(), c.to_string()))
        .collect();
    write_mapping_rows(path, &rows)
}
