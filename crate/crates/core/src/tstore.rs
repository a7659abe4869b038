//! Append-only CSV time-series store.
//!
//! Layout under the store root:
//!
//! ```text
//! {device_id}/{YYYY-MM-DD}.csv   timestamp,device_id,metric,value,unit
//! rooms.csv                      device_id,room_id
//! ```
//!
//! Values carry exactly two fraction digits. Rows of one device are appended
//! in non-decreasing timestamp order; an older timestamp is rejected. On open,
//! a final line without its terminating LF (or one that does not parse) is
//! treated as a torn write and truncated away.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use tracing::warn;

use crate::model::{format_ts, parse_ts, validate_reading, Metric, Reading, Violation};

pub const HEADER: &str = "timestamp,device_id,metric,value,unit";
const ROOMS_FILE: &str = "rooms.csv";
const ROOMS_HEADER: &str = "device_id,room_id";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid reading: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("OUT_OF_ORDER: {device} at {ts} is older than the last appended row ({last})")]
    OutOfOrder {
        device: String,
        ts: DateTime<Utc>,
        last: DateTime<Utc>,
    },
    #[error("device id `{0}` cannot be used as a directory name")]
    BadDeviceId(String),
    #[error("{path}: bad header")]
    BadHeader { path: PathBuf },
    #[error("{path}:{line}: malformed row")]
    BadRow { path: PathBuf, line: usize },
    #[error("query range has from > to")]
    BadRange,
    #[error("bucket width must be positive")]
    ZeroBucket,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SyncMode {
    /// fsync after every append.
    #[default]
    Always,
    /// Leave flushing to the OS.
    Never,
}

/// Half-open `[from, to)` query with optional device and metric filters.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRange {
    pub device: Option<String>,
    pub metric: Option<Metric>,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

impl QueryRange {
    pub fn new(from: DateTime<Utc>, to: DateTime<Utc>) -> Result<Self, StoreError> {
        if from > to {
            return Err(StoreError::BadRange);
        }
        Ok(QueryRange {
            device: None,
            metric: None,
            from,
            to,
        })
    }

    pub fn device(mut self, d: impl Into<String>) -> Self {
        self.device = Some(d.into());
        self
    }

    pub fn metric(mut self, m: Metric) -> Self {
        self.metric = Some(m);
        self
    }

    fn matches(&self, r: &Reading) -> bool {
        r.ts >= self.from
            && r.ts < self.to
            && self.metric.is_none_or(|m| m == r.metric)
            && self.device.as_deref().is_none_or(|d| d == r.device_id)
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryReport {
    pub files: usize,
    pub rows: usize,
    pub torn_rows_dropped: usize,
}

/// Formats hundredths with the same ties-away rounding as the wire encoding.
pub fn format_value(v: f64) -> String {
    let cents = (v * 100.0).round() as i64;
    let sign = if cents < 0 { "-" } else { "" };
    let abs = cents.unsigned_abs();
    format!("{sign}{}.{:02}", abs / 100, abs % 100)
}

pub fn format_row(r: &Reading) -> String {
    format!(
        "{},{},{},{},{}\n",
        format_ts(&r.ts),
        r.device_id,
        r.metric,
        format_value(r.value),
        r.metric.unit()
    )
}

/// Parses one row (without its LF). The room is not part of the row.
pub fn parse_row(line: &str) -> Option<Reading> {
    let mut it = line.split(',');
    let ts = parse_ts(it.next()?)?;
    let device = it.next()?;
    let metric: Metric = it.next()?.parse().ok()?;
    let value: f64 = it.next()?.parse().ok()?;
    let unit = it.next()?;
    if it.next().is_some() || unit != metric.unit() || device.is_empty() {
        return None;
    }
    let r = Reading::new(device, "", metric, value, ts);
    validate_reading(&r).ok()?;
    Some(r)
}

fn valid_device_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug)]
struct DeviceLog {
    dir: PathBuf,
    open: Option<(NaiveDate, File)>,
    last_ts: Option<DateTime<Utc>>,
}

impl DeviceLog {
    fn file_for(&mut self, day: NaiveDate) -> io::Result<&mut File> {
        if self.open.as_ref().map(|(d, _)| *d) != Some(day) {
            fs::create_dir_all(&self.dir)?;
            let path = self.dir.join(format!("{}.csv", day.format("%Y-%m-%d")));
            let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
            if f.metadata()?.len() == 0 {
                f.write_all(format!("{HEADER}\n").as_bytes())?;
            }
            self.open = Some((day, f));
        }
        Ok(&mut self.open.as_mut().expect("just opened").1)
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    sync: SyncMode,
    devices: Mutex<HashMap<String, Arc<Mutex<DeviceLog>>>>,
    rooms: Mutex<BTreeMap<String, String>>,
}

impl Store {
    /// Opens (creating if needed) a store, repairing torn final rows.
    pub fn open(root: impl AsRef<Path>) -> Result<(Self, RecoveryReport), StoreError> {
        Self::open_with(root, SyncMode::Always)
    }

    pub fn open_with(root: impl AsRef<Path>, sync: SyncMode) -> Result<(Self, RecoveryReport), StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut report = RecoveryReport::default();
        let mut devices = HashMap::new();
        for dir in device_dirs(&root)? {
            let id = dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let mut last_ts = None;
            for file in day_files(&dir)? {
                let rows = recover_file(&file, &mut report)?;
                if let Some(r) = rows.last() {
                    last_ts = last_ts.max(Some(r.ts));
                }
            }
            devices.insert(
                id,
                Arc::new(Mutex::new(DeviceLog {
                    dir,
                    open: None,
                    last_ts,
                })),
            );
        }
        let rooms = load_rooms(&root)?;
        Ok((
            Store {
                root,
                sync,
                devices: Mutex::new(devices),
                rooms: Mutex::new(rooms),
            },
            report,
        ))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Records which room a device belongs to (persisted in `rooms.csv`).
    pub fn register_room(&self, device: &str, room: &str) -> Result<(), StoreError> {
        if !valid_device_id(device) {
            return Err(StoreError::BadDeviceId(device.to_string()));
        }
        let mut rooms = self.rooms.lock().expect("rooms lock");
        if rooms.get(device).map(String::as_str) == Some(room) {
            return Ok(());
        }
        let path = self.root.join(ROOMS_FILE);
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        if f.metadata()?.len() == 0 {
            f.write_all(format!("{ROOMS_HEADER}\n").as_bytes())?;
        }
        f.write_all(format!("{device},{room}\n").as_bytes())?;
        if self.sync == SyncMode::Always {
            f.sync_data()?;
        }
        rooms.insert(device.to_string(), room.to_string());
        Ok(())
    }

    pub fn rooms(&self) -> BTreeMap<String, String> {
        self.rooms.lock().expect("rooms lock").clone()
    }

    pub fn devices_in_room(&self, room: &str) -> Vec<String> {
        self.rooms
            .lock()
            .expect("rooms lock")
            .iter()
            .filter(|(_, r)| r.as_str() == room)
            .map(|(d, _)| d.clone())
            .collect()
    }

    fn log_for(&self, device: &str) -> Result<Arc<Mutex<DeviceLog>>, StoreError> {
        if !valid_device_id(device) {
            return Err(StoreError::BadDeviceId(device.to_string()));
        }
        let mut devices = self.devices.lock().expect("device map lock");
        Ok(devices
            .entry(device.to_string())
            .or_insert_with(|| {
                Arc::new(Mutex::new(DeviceLog {
                    dir: self.root.join(device),
                    open: None,
                    last_ts: None,
                }))
            })
            .clone())
    }

    /// Appends one validated reading; durable before returning under `SyncMode::Always`.
    pub fn append(&self, r: &Reading) -> Result<(), StoreError> {
        validate_reading(r).map_err(StoreError::Invalid)?;
        let log = self.log_for(&r.device_id)?;
        let mut log = log.lock().expect("device log lock");
        if let Some(last) = log.last_ts {
            if r.ts < last {
                return Err(StoreError::OutOfOrder {
                    device: r.device_id.clone(),
                    ts: r.ts,
                    last,
                });
            }
        }
        let row = format_row(r);
        let sync = self.sync;
        let f = log.file_for(r.ts.date_naive())?;
        f.write_all(row.as_bytes())?;
        if sync == SyncMode::Always {
            f.sync_data()?;
        }
        log.last_ts = Some(r.ts);
        if !r.room_id.is_empty() {
            self.register_room(&r.device_id, &r.room_id)?;
        }
        Ok(())
    }

    /// Readings with `ts` in `[from, to)` matching the filters, ordered by timestamp.
    pub fn query(&self, q: &QueryRange) -> Result<Vec<Reading>, StoreError> {
        if q.from >= q.to {
            return Ok(Vec::new());
        }
        let rooms = self.rooms();
        let first_day = q.from.date_naive();
        let last_day = (q.to - chrono::Duration::nanoseconds(1)).date_naive();
        let mut out = Vec::new();
        for dir in device_dirs(&self.root)? {
            let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if q.device.as_deref().is_some_and(|d| d != id) {
                continue;
            }
            for file in day_files(&dir)? {
                let Some(day) = file_day(&file) else { continue };
                if day < first_day || day > last_day {
                    continue;
                }
                for mut r in read_complete_rows(&file)? {
                    if q.matches(&r) {
                        r.room_id = rooms.get(&r.device_id).cloned().unwrap_or_default();
                        out.push(r);
                    }
                }
            }
        }
        out.sort_by_key(|r| r.ts);
        Ok(out)
    }

    /// Every stored reading, timestamp-ordered.
    pub fn all(&self) -> Result<Vec<Reading>, StoreError> {
        let min = DateTime::<Utc>::MIN_UTC;
        let max = DateTime::<Utc>::MAX_UTC;
        self.query(&QueryRange::new(min, max)?)
    }

    /// Bucketed arithmetic means for plotting; empty buckets are omitted.
    pub fn export_plot_series(
        &self,
        q: &QueryRange,
        bucket: Duration,
    ) -> Result<Vec<(DateTime<Utc>, f64)>, StoreError> {
        bucket_means(&self.query(q)?, bucket)
    }
}

/// Groups readings into `bucket`-wide windows aligned to the Unix epoch.
pub fn bucket_means(rows: &[Reading], bucket: Duration) -> Result<Vec<(DateTime<Utc>, f64)>, StoreError> {
    let width = bucket.as_secs() as i64;
    if width <= 0 {
        return Err(StoreError::ZeroBucket);
    }
    let mut sums: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let start = r.ts.timestamp().div_euclid(width) * width;
        let e = sums.entry(start).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(start, (sum, n))| (crate::model::ts_from_epoch(start), sum / n as f64))
        .collect())
}

fn device_dirs(root: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn day_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| file_day(p).is_some())
        .collect();
    out.sort();
    Ok(out)
}

fn file_day(p: &Path) -> Option<NaiveDate> {
    if p.extension()? != "csv" {
        return None;
    }
    NaiveDate::parse_from_str(p.file_stem()?.to_str()?, "%Y-%m-%d").ok()
}

/// Rows of LF-terminated lines; a trailing partial line is invisible.
fn read_complete_rows(path: &Path) -> Result<Vec<Reading>, StoreError> {
    let text = fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut lines = complete.lines();
    match lines.next() {
        Some(HEADER) => {}
        None => return Ok(Vec::new()),
        Some(_) => {
            return Err(StoreError::BadHeader {
                path: path.to_path_buf(),
            })
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            parse_row(line).ok_or_else(|| StoreError::BadRow {
                path: path.to_path_buf(),
                line: i + 2,
            })
        })
        .collect()
}

/// Drops a torn final row (missing LF or unparsable) and returns the remaining rows.
fn recover_file(path: &Path, report: &mut RecoveryReport) -> Result<Vec<Reading>, StoreError> {
    report.files += 1;
    let bytes = fs::read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let header_line = format!("{HEADER}\n");
    if bytes.len() < header_line.len() {
        if header_line.as_bytes().starts_with(&bytes) {
            warn!(path = %path.display(), "torn header rewritten");
            fs::write(path, &header_line)?;
            return Ok(Vec::new());
        }
        return Err(StoreError::BadHeader {
            path: path.to_path_buf(),
        });
    }
    let mut keep = bytes.len();
    if !text.ends_with('\n') {
        keep = text.rfind('\n').map_or(0, |i| i + 1);
    } else {
        let body = &text[..text.len() - 1];
        let last_start = body.rfind('\n').map_or(0, |i| i + 1);
        if last_start >= header_line.len() && parse_row(&body[last_start..]).is_none() {
            keep = last_start;
        }
    }
    if keep < bytes.len() {
        warn!(path = %path.display(), dropped_bytes = bytes.len() - keep, "torn row dropped");
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(keep as u64)?;
        f.sync_all()?;
        report.torn_rows_dropped += 1;
    }
    let rows = read_complete_rows(path)?;
    report.rows += rows.len();
    Ok(rows)
}

fn load_rooms(root: &Path) -> Result<BTreeMap<String, String>, StoreError> {
    let path = root.join(ROOMS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(e.into()),
    };
    let mut rooms = BTreeMap::new();
    for line in text.lines().skip(1) {
        if let Some((d, r)) = line.split_once(',') {
            rooms.insert(d.to_string(), r.to_string());
        }
    }
    Ok(rooms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ts_from_epoch;

    const T0: i64 = 1_488_326_400; // 2017-03-01T00:00:00Z

    fn r(dev: &str, metric: Metric, v: f64, t: i64) -> Reading {
        Reading::new(dev, "lab", metric, v, ts_from_epoch(t))
    }

    fn store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let (s, _) = Store::open_with(dir.path(), SyncMode::Never).unwrap();
        (dir, s)
    }

    #[test]
    fn first_reading_creates_file() {
        let (dir, s) = store();
        s.append(&r("tag1", Metric::Temperature, 21.5, T0 + 3600)).unwrap();
        let text = fs::read_to_string(dir.path().join("tag1/2017-03-01.csv")).unwrap();
        assert_eq!(
            text,
            "timestamp,device_id,metric,value,unit\n2017-03-01T01:00:00Z,tag1,temperature,21.50,C\n"
        );
    }

    #[test]
    fn day_boundary_splits_files() {
        let (dir, s) = store();
        s.append(&r("tag1", Metric::Humidity, 28.0, T0 + 86_399)).unwrap();
        s.append(&r("tag1", Metric::Humidity, 28.0, T0 + 86_401)).unwrap();
        assert!(dir.path().join("tag1/2017-03-01.csv").exists());
        assert!(dir.path().join("tag1/2017-03-02.csv").exists());
        let all = s.all().unwrap();
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|x| x.room_id == "lab"));
    }

    #[test]
    fn out_of_order_rejected() {
        let (_d, s) = store();
        s.append(&r("tag1", Metric::Light, 100.0, T0 + 60)).unwrap();
        let err = s.append(&r("tag1", Metric::Light, 100.0, T0)).unwrap_err();
        assert!(matches!(err, StoreError::OutOfOrder { .. }));
        // Equal timestamps are fine.
        s.append(&r("tag1", Metric::Pressure, 1000.0, T0 + 60)).unwrap();
    }

    #[test]
    fn invalid_reading_rejected() {
        let (_d, s) = store();
        assert!(matches!(
            s.append(&r("tag1", Metric::Humidity, 130.0, T0)),
            Err(StoreError::Invalid(_))
        ));
        assert!(matches!(
            s.append(&r("../x", Metric::Humidity, 30.0, T0)),
            Err(StoreError::BadDeviceId(_))
        ));
    }

    #[test]
    fn query_half_open() {
        let (_d, s) = store();
        s.append(&r("tag1", Metric::Light, 100.0, T0 + 60)).unwrap();
        let at = ts_from_epoch(T0 + 60);
        let one = s.query(&QueryRange::new(at, ts_from_epoch(T0 + 61)).unwrap()).unwrap();
        assert_eq!(one.len(), 1);
        assert!(s.query(&QueryRange::new(at, at).unwrap()).unwrap().is_empty());
        assert!(QueryRange::new(ts_from_epoch(T0 + 1), ts_from_epoch(T0)).is_err());
    }

    #[test]
    fn full_day_of_minutes() {
        let (_d, s) = store();
        for i in 0..1440 {
            s.append(&r("tag1", Metric::Temperature, 20.0 + (i % 7) as f64, T0 + 60 * i)).unwrap();
        }
        let q = QueryRange::new(ts_from_epoch(T0), ts_from_epoch(T0 + 86_400)).unwrap();
        let rows = s.query(&q).unwrap();
        assert_eq!(rows.len(), 1440);
        assert!(rows.windows(2).all(|w| w[0].ts < w[1].ts));
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(23.45), "23.45");
        assert_eq!(format_value(-1.0), "-1.00");
        assert_eq!(format_value(-0.001), "0.00");
        assert_eq!(format_value(-0.005), "-0.01");
        assert_eq!(format_value(0.125), "0.13");
        assert_eq!(format_value(1013.2), "1013.20");
    }

    #[test]
    fn bucket_examples() {
        let rows = vec![
            r("d", Metric::Temperature, 10.0, T0),
            r("d", Metric::Temperature, 30.0, T0 + 1800),
            r("d", Metric::Temperature, 20.0, T0 + 7200),
        ];
        let series = bucket_means(&rows, Duration::from_secs(3600)).unwrap();
        assert_eq!(
            series,
            vec![(ts_from_epoch(T0), 20.0), (ts_from_epoch(T0 + 7200), 20.0)]
        );
        assert!(matches!(bucket_means(&rows, Duration::ZERO), Err(StoreError::ZeroBucket)));
    }

    #[test]
    fn torn_row_dropped_on_open() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (s, _) = Store::open(dir.path()).unwrap();
            for i in 0..5 {
                s.append(&r("tag1", Metric::Humidity, 28.0, T0 + 60 * i)).unwrap();
            }
        }
        let path = dir.path().join("tag1/2017-03-01.csv");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        let (s, report) = Store::open(dir.path()).unwrap();
        assert_eq!(report.torn_rows_dropped, 1);
        assert_eq!(s.all().unwrap().len(), 4);
        // Appending continues after the repaired tail.
        s.append(&r("tag1", Metric::Humidity, 29.0, T0 + 600)).unwrap();
        assert_eq!(s.all().unwrap().len(), 5);
    }

    #[test]
    fn readers_ignore_partial_tail() {
        let (dir, s) = store();
        s.append(&r("tag1", Metric::Humidity, 28.0, T0)).unwrap();
        let path = dir.path().join("tag1/2017-03-01.csv");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"2017-03-01T00:01:00Z,tag1,hum").unwrap();
        assert_eq!(s.all().unwrap().len(), 1);
    }

    #[test]
    fn reopen_restores_order_gate() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (s, _) = Store::open(dir.path()).unwrap();
            s.append(&r("tag1", Metric::Humidity, 28.0, T0 + 120)).unwrap();
        }
        let (s, _) = Store::open(dir.path()).unwrap();
        assert!(matches!(
            s.append(&r("tag1", Metric::Humidity, 28.0, T0)),
            Err(StoreError::OutOfOrder { .. })
        ));
        assert_eq!(s.devices_in_room("lab"), vec!["tag1".to_string()]);
    }
}
