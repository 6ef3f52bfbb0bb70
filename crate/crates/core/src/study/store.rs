use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Exact CSV header.
pub const HEADER: [&str; 9] =
    ["run_id", "world", "method", "hparam_name", "hparam_value", "seed", "metric", "value", "status"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One score of one trained model. Failed runs carry `NaN` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub run_id: String,
    pub world: String,
    pub method: String,
    pub hparam_name: String,
    pub hparam_value: f64,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub status: Status,
}

impl ScoreRecord {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    fn check(&self) -> Result<()> {
        if self.is_ok() && !self.value.is_finite() {
            return Err(Error::Validation(format!("{}/{}: ok record with non-finite value", self.run_id, self.metric)));
        }
        if !self.hparam_value.is_finite() {
            return Err(Error::Validation(format!("{}: non-finite hyperparameter value", self.run_id)));
        }
        Ok(())
    }
}

/// Append-only score collection. The CSV form is canonical: rows sorted by
/// `(run_id, metric)`, so write → read → write is byte-identical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordStore {
    records: Vec<ScoreRecord>,
}

impl RecordStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn run_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.run_id.as_str()).collect()
    }

    /// Appends the records of one or more runs. Runs already in the store are
    /// rejected with [`Error::Duplicate`] unless `force` is set, in which case
    /// their old rows are dropped first.
    pub fn append(&mut self, records: Vec<ScoreRecord>, force: bool) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &records {
            r.check()?;
            if !seen.insert((r.run_id.as_str(), r.metric.as_str())) {
                return Err(Error::Validation(format!("duplicate record {}/{} in batch", r.run_id, r.metric)));
            }
        }
        let incoming: BTreeSet<&str> = records.iter().map(|r| r.run_id.as_str()).collect();
        let clashes: Vec<String> = self.run_ids().intersection(&incoming).map(|s| s.to_string()).collect();
        if !clashes.is_empty() {
            if !force {
                return Err(Error::Duplicate(clashes));
            }
            self.remove_runs(&clashes);
        }
        self.records.extend(records);
        Ok(())
    }

    pub fn remove_runs(&mut self, run_ids: &[String]) {
        let drop: HashSet<&str> = run_ids.iter().map(String::as_str).collect();
        self.records.retain(|r| !drop.contains(r.run_id.as_str()));
    }

    /// Records sorted by `(run_id, metric)`.
    pub fn canonical(&self) -> Vec<&ScoreRecord> {
        let mut v: Vec<&ScoreRecord> = self.records.iter().collect();
        v.sort_by(|a, b| (&a.run_id, &a.metric).cmp(&(&b.run_id, &b.metric)));
        v
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(HEADER).map_err(csv_error)?;
        for r in self.canonical() {
            out.serialize(r).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = reader.headers().map_err(csv_error)?.clone();
        if header.iter().ne(HEADER) {
            return Err(Error::Format(format!("score CSV header must be {}", HEADER.join(","))));
        }
        let mut records = Vec::new();
        for row in reader.deserialize() {
            records.push(row.map_err(csv_error)?);
        }
        let mut store = Self::new();
        store.append(records, false)?;
        Ok(store)
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("csv.tmp");
        fs::write(&tmp, self.to_csv_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(fs::File::open(path)?)
    }

    /// Ok records of one metric, optionally restricted to one world.
    pub fn ok_values<'a>(&'a self, world: Option<&'a str>, metric: &'a str) -> impl Iterator<Item = &'a ScoreRecord> {
        self.records.iter().filter(move |r| r.is_ok() && r.metric == metric && world.is_none_or(|w| r.world == w))
    }

    pub fn worlds(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.world.as_str()).collect()
    }

    pub fn metrics(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.metric.as_str()).collect()
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("score CSV: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(run: &str, metric: &str, value: f64) -> ScoreRecord {
        ScoreRecord {
            run_id: run.into(),
            world: "w".into(),
            method: "beta_vae".into(),
            hparam_name: "beta".into(),
            hparam_value: 4.0,
            seed: 1,
            metric: metric.into(),
            value,
            status: Status::Ok,
        }
    }

    #[test]
    fn header_and_sorting() {
        let mut s = RecordStore::new();
        s.append(vec![record("b", "mig", 0.5), record("a", "sap", 0.25), record("a", "dci", 1.0)], false).unwrap();
        let text = String::from_utf8(s.to_csv_bytes().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "run_id,world,method,hparam_name,hparam_value,seed,metric,value,status");
        assert!(lines[1].starts_with("a,") && lines[1].contains(",dci,"));
        assert!(lines[3].starts_with("b,"));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let mut s = RecordStore::new();
        let mut failed = record("c", "mig", f64::NAN);
        failed.status = Status::Failed;
        s.append(vec![record("a", "mig", 0.1 + 0.2), record("b", "mig", 1e-300), failed], false).unwrap();
        let bytes = s.to_csv_bytes().unwrap();
        let back = RecordStore::read_csv(bytes.as_slice()).unwrap();
        assert_eq!(back.to_csv_bytes().unwrap(), bytes);
        assert_eq!(back.records()[0].value, 0.1 + 0.2);
    }

    #[test]
    fn duplicates_need_force() {
        let mut s = RecordStore::new();
        s.append(vec![record("a", "mig", 0.1)], false).unwrap();
        let err = s.append(vec![record("a", "mig", 0.2)], false).unwrap_err();
        assert!(matches!(err, Error::Duplicate(ref ids) if ids == &["a".to_string()]));
        assert_eq!(s.records()[0].value, 0.1);
        s.append(vec![record("a", "mig", 0.2)], true).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.records()[0].value, 0.2);
    }

    #[test]
    fn ok_record_must_be_finite() {
        let mut s = RecordStore::new();
        assert!(s.append(vec![record("a", "mig", f64::NAN)], false).is_err());
        assert!(s.is_empty());
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "run,world\n";
        assert!(matches!(RecordStore::read_csv(text.as_bytes()), Err(Error::Format(_))));
    }
}
