//! Wide-format daily-views panels.
//!
//! The on-disk layout is one row per page: a `Page` column followed by one
//! column per calendar day (`YYYY-MM-DD`). Empty cells are missing values.
//! Missing cells are kept distinct from zeros at load time; the zero-fill
//! happens in [`crate::transform::fill_missing`].

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{s, Array2, ArrayView1};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// A page identifier of the form `name_project_access_agent`.
///
/// The article name may itself contain underscores, so the key is split on
/// its last three underscores.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PageKey {
    pub name: String,
    pub project: String,
    pub access: String,
    pub agent: String,
    pub raw: String,
}

impl PageKey {
    pub fn parse(raw: &str) -> Result<Self> {
        let mut parts = raw.rsplitn(4, '_');
        let agent = parts.next();
        let access = parts.next();
        let project = parts.next();
        let name = parts.next();
        let (Some(name), Some(project), Some(access), Some(agent)) = (name, project, access, agent)
        else {
            return Err(Error::PageKey {
                raw: raw.to_owned(),
                reason: "expected at least 3 underscores".into(),
            });
        };
        for (field, value) in [("project", project), ("access", access), ("agent", agent)] {
            if value.is_empty() {
                return Err(Error::PageKey {
                    raw: raw.to_owned(),
                    reason: format!("empty {field} token"),
                });
            }
        }
        Ok(PageKey {
            name: name.to_owned(),
            project: project.to_owned(),
            access: access.to_owned(),
            agent: agent.to_owned(),
            raw: raw.to_owned(),
        })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }
}

impl fmt::Display for PageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Free-function form of [`PageKey::parse`].
pub fn parse_page_key(raw: &str) -> Result<PageKey> {
    PageKey::parse(raw)
}

/// A pages × dates panel of daily view counts.
///
/// Missing cells are stored as `NaN` inside a dense grid; use [`SeriesTable::get`]
/// for the `Option` view. Dates are contiguous and strictly increasing by one
/// day.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pages: Vec<PageKey>,
    dates: Vec<NaiveDate>,
    values: Array2<f64>,
}

impl SeriesTable {
    /// Builds a table, checking every structural invariant.
    pub fn new(pages: Vec<PageKey>, dates: Vec<NaiveDate>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != pages.len() || values.ncols() != dates.len() {
            return Err(Error::Shape(format!(
                "grid is {}x{} but there are {} pages and {} dates",
                values.nrows(),
                values.ncols(),
                pages.len(),
                dates.len()
            )));
        }
        check_contiguous(&dates)?;
        let mut seen = HashSet::with_capacity(pages.len());
        for page in &pages {
            if !seen.insert(page.raw.as_str()) {
                return Err(Error::Data(format!("duplicate page {:?}", page.raw)));
            }
        }
        for ((row, col), v) in values.indexed_iter() {
            if *v < 0.0 || v.is_infinite() {
                return Err(Error::Data(format!(
                    "invalid value {v} at row {row}, column {col}"
                )));
            }
        }
        Ok(SeriesTable {
            pages,
            dates,
            values,
        })
    }

    /// Convenience constructor for a contiguous range starting at `start`.
    pub fn from_start(pages: Vec<PageKey>, start: NaiveDate, values: Array2<f64>) -> Result<Self> {
        let dates = date_range(start, values.ncols());
        Self::new(pages, dates, values)
    }

    pub fn pages(&self) -> &[PageKey] {
        &self.pages
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    /// The raw grid, `NaN` marking missing cells.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn n_pages(&self) -> usize {
        self.pages.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    pub fn get(&self, page: usize, date: usize) -> Option<f64> {
        let v = self.values[[page, date]];
        (!v.is_nan()).then_some(v)
    }

    pub fn row(&self, page: usize) -> ArrayView1<'_, f64> {
        self.values.row(page)
    }

    pub fn page_index(&self, raw: &str) -> Option<usize> {
        self.pages.iter().position(|p| p.raw == raw)
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        let first = self.first_date()?;
        let offset = (date - first).num_days();
        (offset >= 0 && (offset as usize) < self.dates.len()).then_some(offset as usize)
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    /// Same pages and dates with a replacement grid.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        Self::new(self.pages.clone(), self.dates.clone(), values)
    }

    /// Restricts the table to a column range.
    pub fn slice_columns(&self, cols: Range<usize>) -> Result<Self> {
        if cols.start > cols.end || cols.end > self.n_dates() {
            return Err(Error::Shape(format!(
                "column range {cols:?} outside table of {} dates",
                self.n_dates()
            )));
        }
        Ok(SeriesTable {
            pages: self.pages.clone(),
            dates: self.dates[cols.clone()].to_vec(),
            values: self.values.slice(s![.., cols]).to_owned(),
        })
    }

    /// Restricts the table to an inclusive calendar range.
    pub fn slice_dates(&self, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        match (self.date_index(start), self.date_index(end)) {
            (Some(a), Some(b)) if a <= b => self.slice_columns(a..b + 1),
            _ => Err(Error::Alignment(format!(
                "date range {start}..{end} is not inside the table's {}..{}",
                fmt_opt_date(self.first_date()),
                fmt_opt_date(self.last_date())
            ))),
        }
    }

    /// Number of missing cells in each row.
    pub fn missing_per_page(&self) -> Vec<usize> {
        self.values
            .rows()
            .into_iter()
            .map(|r| r.iter().filter(|v| v.is_nan()).count())
            .collect()
    }

    /// Number of missing cells in each date column.
    pub fn missing_per_date(&self) -> Vec<usize> {
        self.values
            .columns()
            .into_iter()
            .map(|c| c.iter().filter(|v| v.is_nan()).count())
            .collect()
    }
}

fn fmt_opt_date(d: Option<NaiveDate>) -> String {
    d.map(|d| d.to_string()).unwrap_or_else(|| "<empty>".into())
}

/// `len` consecutive days starting at `start`.
pub fn date_range(start: NaiveDate, len: usize) -> Vec<NaiveDate> {
    start.iter_days().take(len).collect()
}

fn check_contiguous(dates: &[NaiveDate]) -> Result<()> {
    for pair in dates.windows(2) {
        if pair[0].succ_opt() != Some(pair[1]) {
            return Err(Error::Format(format!(
                "date {} does not follow {} by exactly one day",
                pair[1], pair[0]
            )));
        }
    }
    Ok(())
}

fn parse_header(headers: &csv::StringRecord) -> Result<Vec<NaiveDate>> {
    let first = headers.get(0).unwrap_or_default();
    if first.trim_start_matches('\u{feff}') != "Page" {
        return Err(Error::Format(format!(
            "first header must be `Page`, found {first:?}"
        )));
    }
    let mut dates: Vec<NaiveDate> = Vec::with_capacity(headers.len().saturating_sub(1));
    for field in headers.iter().skip(1) {
        let date = NaiveDate::parse_from_str(field.trim(), DATE_FORMAT)
            .map_err(|_| Error::Format(format!("unparseable date header {field:?}")))?;
        if let Some(prev) = dates.last() {
            if prev.succ_opt() != Some(date) {
                return Err(Error::Format(format!(
                    "date header {field:?} breaks the daily sequence after {prev}"
                )));
            }
        }
        dates.push(date);
    }
    Ok(dates)
}

fn parse_cell(field: &[u8], row: usize, col: usize, date: NaiveDate) -> Result<f64> {
    let text = std::str::from_utf8(field)
        .map_err(|_| Error::Data(format!("row {row}, column {col}: cell is not UTF-8")))?
        .trim();
    if text.is_empty() {
        return Ok(f64::NAN);
    }
    let v: f64 = text.parse().map_err(|_| {
        Error::Data(format!(
            "row {row}, column {col} ({date}): not a number: {text:?}"
        ))
    })?;
    if v.is_nan() {
        return Ok(f64::NAN);
    }
    if v < 0.0 || v.is_infinite() {
        return Err(Error::Data(format!(
            "row {row}, column {col} ({date}): invalid view count {text}"
        )));
    }
    Ok(v)
}

fn open_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::with_capacity(1 << 20, file)))
}

/// Loads a wide-format CSV (`Page,YYYY-MM-DD,...`).
///
/// The file is read twice: once to count rows, once to fill a grid allocated
/// at its final size. Row order is preserved. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn load_wide_csv(path: impl AsRef<Path>) -> Result<SeriesTable> {
    let path = path.as_ref();

    let mut counter = open_reader(path)?;
    let dates = parse_header(counter.headers()?)?;
    let mut record = csv::ByteRecord::new();
    let mut n_rows = 0usize;
    while counter.read_byte_record(&mut record)? {
        n_rows += 1;
    }
    drop(counter);

    let n_cols = dates.len();
    let mut reader = open_reader(path)?;
    reader.headers()?;
    let mut values = Array2::<f64>::zeros((n_rows, n_cols));
    let mut pages = Vec::with_capacity(n_rows);
    let mut seen = HashSet::with_capacity(n_rows);
    let mut row = 0usize;
    while reader.read_byte_record(&mut record)? {
        if row >= n_rows {
            return Err(Error::Data(format!("{} changed while reading", path.display())));
        }
        let raw = std::str::from_utf8(&record[0])
            .map_err(|_| Error::Data(format!("row {}: page name is not UTF-8", row + 1)))?;
        let key = PageKey::parse(raw)?;
        if !seen.insert(key.raw.clone()) {
            return Err(Error::Data(format!(
                "row {}: duplicate page {:?}",
                row + 1,
                key.raw
            )));
        }
        pages.push(key);
        let mut out = values.row_mut(row);
        for (col, field) in record.iter().skip(1).enumerate() {
            out[col] = parse_cell(field, row + 1, col + 1, dates[col])?;
        }
        row += 1;
    }
    if row != n_rows {
        return Err(Error::Data(format!("{} changed while reading", path.display())));
    }
    drop(seen);
    Ok(SeriesTable {
        pages,
        dates,
        values,
    })
}

/// Loads an answer key and aligns its rows to `reference`'s page order.
///
/// The key must cover exactly `horizon` days, the first of which is the day
/// after `reference`'s last date.
pub fn load_answer_key(
    path: impl AsRef<Path>,
    reference: &SeriesTable,
    horizon: usize,
) -> Result<SeriesTable> {
    let key = load_wide_csv(path)?;
    align_answer_key(key, reference, horizon)
}

/// Alignment step of [`load_answer_key`], for keys already in memory.
pub fn align_answer_key(
    key: SeriesTable,
    reference: &SeriesTable,
    horizon: usize,
) -> Result<SeriesTable> {
    let last = reference
        .last_date()
        .ok_or_else(|| Error::Alignment("reference table has no dates".into()))?;
    let first_key = key
        .first_date()
        .ok_or_else(|| Error::Alignment("answer key has no dates".into()))?;
    if first_key <= last {
        return Err(Error::Alignment(format!(
            "answer key starts at {first_key}, overlapping the training range ending {last}"
        )));
    }
    if Some(first_key) != last.succ_opt() {
        return Err(Error::Alignment(format!(
            "answer key starts at {first_key}, expected {}",
            fmt_opt_date(last.succ_opt())
        )));
    }
    if key.n_dates() != horizon {
        return Err(Error::Alignment(format!(
            "answer key covers {} days, expected a horizon of {horizon}",
            key.n_dates()
        )));
    }
    if key.n_pages() != reference.n_pages() {
        let missing = reference
            .pages()
            .iter()
            .find(|p| key.page_index(&p.raw).is_none());
        return Err(Error::Alignment(match missing {
            Some(p) => format!("page {:?} is missing from the answer key", p.raw),
            None => format!(
                "answer key has {} pages, reference has {}",
                key.n_pages(),
                reference.n_pages()
            ),
        }));
    }
    let index: std::collections::HashMap<&str, usize> = key
        .pages()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.raw.as_str(), i))
        .collect();
    let mut values = Array2::<f64>::zeros((reference.n_pages(), horizon));
    for (row, page) in reference.pages().iter().enumerate() {
        let src = *index.get(page.raw.as_str()).ok_or_else(|| {
            Error::Alignment(format!("page {:?} is missing from the answer key", page.raw))
        })?;
        values.row_mut(row).assign(&key.values().row(src));
    }
    Ok(SeriesTable {
        pages: reference.pages().to_vec(),
        dates: key.dates().to_vec(),
        values,
    })
}

/// Writes a grid in the wide layout. `values` may contain `NaN`, written as
/// empty cells. Floats use the shortest representation that parses back to
/// the same bits.
pub fn write_wide_csv<'a>(
    path: impl AsRef<Path>,
    pages: impl IntoIterator<Item = &'a str>,
    dates: &[NaiveDate],
    values: &Array2<f64>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = Vec::with_capacity(dates.len() + 1);
    header.push("Page".to_owned());
    header.extend(dates.iter().map(|d| d.format(DATE_FORMAT).to_string()));
    writer.write_record(&header)?;
    let mut record = Vec::with_capacity(dates.len() + 1);
    for (row, page) in pages.into_iter().enumerate() {
        record.clear();
        record.push(page.to_owned());
        record.extend(values.row(row).iter().map(|v| {
            if v.is_nan() {
                String::new()
            } else {
                v.to_string()
            }
        }));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl SeriesTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_wide_csv(
            path,
            self.pages.iter().map(|p| p.raw.as_str()),
            &self.dates,
            &self.values,
        )
    }
}
