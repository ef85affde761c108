//! Median predictors: the 60-day benchmark, the last-week median, weekday
//! medians over trailing and calendar windows, and the cellwise median
//! combine.
//!
//! All medians are computed on zero-filled views (not log space) and anchor
//! at the table's last date.

use std::fmt;
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use ndarray::Array2;

use crate::data::{date_range, load_wide_csv, write_wide_csv, PageKey, SeriesTable};
use crate::error::{Error, Result};
use crate::stats::median_in_place;

pub const DEFAULT_HORIZON: usize = 60;
pub const BENCHMARK_WINDOW: usize = 60;

/// Per-page predicted views over explicit future dates.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pages: Vec<String>,
    dates: Vec<NaiveDate>,
    values: Array2<f64>,
    pub label: String,
}

impl Forecast {
    pub fn new(
        pages: Vec<String>,
        dates: Vec<NaiveDate>,
        values: Array2<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if values.dim() != (pages.len(), dates.len()) {
            return Err(Error::Shape(format!(
                "forecast grid is {:?}, expected {} pages x {} dates",
                values.dim(),
                pages.len(),
                dates.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[0].succ_opt() != Some(pair[1]) {
                return Err(Error::Format(format!(
                    "forecast dates not contiguous at {}",
                    pair[1]
                )));
            }
        }
        Ok(Forecast {
            pages,
            dates,
            values,
            label: label.into(),
        })
    }

    pub fn pages(&self) -> &[String] {
        &self.pages
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn horizon(&self) -> usize {
        self.dates.len()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn is_aligned_with(&self, other: &Forecast) -> bool {
        self.pages == other.pages && self.dates == other.dates
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_wide_csv(
            path,
            self.pages.iter().map(String::as_str),
            &self.dates,
            &self.values,
        )
    }

    pub fn read_csv(path: impl AsRef<Path>, label: impl Into<String>) -> Result<Self> {
        let table = load_wide_csv(path)?;
        if table.has_missing() {
            return Err(Error::Data("forecast file contains empty cells".into()));
        }
        Self::from_table(table, label)
    }

    pub fn from_table(table: SeriesTable, label: impl Into<String>) -> Result<Self> {
        let pages = table.pages().iter().map(|p| p.raw.clone()).collect();
        let dates = table.dates().to_vec();
        Forecast::new(pages, dates, table.into_values(), label)
    }

    pub fn to_table(&self) -> Result<SeriesTable> {
        let pages = self
            .pages
            .iter()
            .map(|p| PageKey::parse(p))
            .collect::<Result<Vec<_>>>()?;
        SeriesTable::new(pages, self.dates.clone(), self.values.clone())
    }
}

/// The horizon following a table's last date.
pub fn horizon_dates(table: &SeriesTable, horizon: usize) -> Result<Vec<NaiveDate>> {
    let last = table
        .last_date()
        .ok_or(Error::TooShort { required: 1, actual: 0 })?;
    Ok(date_range(last.succ_opt().expect("date in range"), horizon))
}

fn page_names(table: &SeriesTable) -> Vec<String> {
    table.pages().iter().map(|p| p.raw.clone()).collect()
}

fn require_filled(table: &SeriesTable) -> Result<()> {
    if table.has_missing() {
        return Err(Error::Data(
            "median baselines need a zero-filled table".into(),
        ));
    }
    Ok(())
}

fn require_columns(table: &SeriesTable, required: usize) -> Result<()> {
    if table.n_dates() < required || required == 0 {
        return Err(Error::TooShort {
            required: required.max(1),
            actual: table.n_dates(),
        });
    }
    Ok(())
}

/// Per-page median of the last `window` values.
fn trailing_median(table: &SeriesTable, window: usize) -> Result<Vec<f64>> {
    require_filled(table)?;
    require_columns(table, window)?;
    let start = table.n_dates() - window;
    let mut buf = Vec::with_capacity(window);
    Ok(table
        .values()
        .rows()
        .into_iter()
        .map(|row| {
            buf.clear();
            buf.extend(row.iter().skip(start).copied());
            median_in_place(&mut buf).expect("window is non-empty")
        })
        .collect())
}

/// Median of each page's previous 60 days, repeated over the horizon.
pub fn benchmark_forecast(table: &SeriesTable, horizon: usize) -> Result<Forecast> {
    let medians = trailing_median(table, BENCHMARK_WINDOW)?;
    let dates = horizon_dates(table, horizon)?;
    expand_to_horizon(&MedianSource::Scalar(medians), &page_names(table), &dates)
        .map(|f| f.with_label("benchmark"))
}

/// Per-page median of the final 7 values.
pub fn last_week_median(table: &SeriesTable) -> Result<Vec<f64>> {
    trailing_median(table, 7)
}

/// Per-page, per-weekday medians (Monday = 0 .. Sunday = 6).
#[derive(Debug, Clone, PartialEq)]
pub struct WeekdayMedianTable {
    values: Vec<[f64; 7]>,
    /// Names the lookback window; carries an `empty-buckets` marker when a
    /// fallback was used.
    pub provenance: String,
    /// Weekdays whose bucket was empty and fell back to the slice median.
    pub empty_weekdays: Vec<usize>,
}

impl WeekdayMedianTable {
    pub fn n_pages(&self) -> usize {
        self.values.len()
    }

    pub fn page(&self, page: usize) -> &[f64; 7] {
        &self.values[page]
    }

    pub fn get(&self, page: usize, weekday: usize) -> f64 {
        self.values[page][weekday]
    }
}

fn weekday_index(date: NaiveDate) -> usize {
    date.weekday().num_days_from_monday() as usize
}

fn bucket_medians(table: &SeriesTable, provenance: String) -> WeekdayMedianTable {
    let weekdays: Vec<usize> = table.dates().iter().copied().map(weekday_index).collect();
    let mut present = [false; 7];
    for &w in &weekdays {
        present[w] = true;
    }
    let empty_weekdays: Vec<usize> = (0..7).filter(|&w| !present[w]).collect();

    let mut buckets: [Vec<f64>; 7] = Default::default();
    let mut all = Vec::with_capacity(table.n_dates());
    let values = table
        .values()
        .rows()
        .into_iter()
        .map(|row| {
            buckets.iter_mut().for_each(Vec::clear);
            for (v, &w) in row.iter().zip(&weekdays) {
                buckets[w].push(*v);
            }
            let fallback = if empty_weekdays.is_empty() {
                0.0
            } else {
                all.clear();
                all.extend(row.iter().copied());
                median_in_place(&mut all).unwrap_or(0.0)
            };
            let mut out = [0.0; 7];
            for (w, bucket) in buckets.iter_mut().enumerate() {
                out[w] = median_in_place(bucket).unwrap_or(fallback);
            }
            out
        })
        .collect();

    let provenance = if empty_weekdays.is_empty() {
        provenance
    } else {
        format!("{provenance};empty-buckets={empty_weekdays:?}")
    };
    WeekdayMedianTable {
        values,
        provenance,
        empty_weekdays,
    }
}

/// Weekday medians over the last `window_days` columns.
pub fn weekday_median(table: &SeriesTable, window_days: usize) -> Result<WeekdayMedianTable> {
    require_filled(table)?;
    require_columns(table, window_days)?;
    let slice = table.slice_columns(table.n_dates() - window_days..table.n_dates())?;
    Ok(bucket_medians(&slice, format!("last-{window_days}-days")))
}

/// Weekday medians over the inclusive calendar range `[start, end]`.
pub fn calendar_weekday_median(
    table: &SeriesTable,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<WeekdayMedianTable> {
    require_filled(table)?;
    let slice = table.slice_dates(start, end)?;
    Ok(bucket_medians(&slice, format!("calendar-{start}..{end}")))
}

/// The same calendar span as the horizon, one year earlier. For a horizon of
/// 2017-01-01..2017-03-01 this is 2016-01-01..2016-03-01.
pub fn year_before_window(horizon: &[NaiveDate]) -> Option<(NaiveDate, NaiveDate)> {
    let first = horizon.first()?.checked_sub_months(Months::new(12))?;
    let last = horizon.last()?.checked_sub_months(Months::new(12))?;
    Some((first, last))
}

/// Input to [`expand_to_horizon`].
#[derive(Debug, Clone)]
pub enum MedianSource {
    /// One value per page, used for every horizon day.
    Scalar(Vec<f64>),
    Weekday(WeekdayMedianTable),
}

impl MedianSource {
    fn n_pages(&self) -> usize {
        match self {
            MedianSource::Scalar(v) => v.len(),
            MedianSource::Weekday(t) => t.n_pages(),
        }
    }
}

/// Lays a per-page source across the horizon dates, picking each date's
/// weekday value for weekday tables.
pub fn expand_to_horizon(
    source: &MedianSource,
    pages: &[String],
    horizon_dates: &[NaiveDate],
) -> Result<Forecast> {
    if source.n_pages() != pages.len() {
        return Err(Error::Shape(format!(
            "median source has {} pages, expected {}",
            source.n_pages(),
            pages.len()
        )));
    }
    let values = match source {
        MedianSource::Scalar(v) => {
            Array2::from_shape_fn((pages.len(), horizon_dates.len()), |(i, _)| v[i])
        }
        MedianSource::Weekday(t) => {
            let weekdays: Vec<usize> = horizon_dates.iter().copied().map(weekday_index).collect();
            Array2::from_shape_fn((pages.len(), horizon_dates.len()), |(i, j)| {
                t.get(i, weekdays[j])
            })
        }
    };
    let label = match source {
        MedianSource::Scalar(_) => "scalar".to_owned(),
        MedianSource::Weekday(t) => t.provenance.clone(),
    };
    Forecast::new(pages.to_vec(), horizon_dates.to_vec(), values, label)
}

/// Cellwise median across aligned forecasts.
pub fn median_combine(forecasts: &[&Forecast]) -> Result<Forecast> {
    let first = *forecasts
        .first()
        .ok_or_else(|| Error::Alignment("median_combine needs at least one forecast".into()))?;
    for f in &forecasts[1..] {
        if !f.is_aligned_with(first) {
            return Err(Error::Alignment(format!(
                "forecast {:?} is not aligned with {:?}",
                f.label, first.label
            )));
        }
    }
    let mut cell = Vec::with_capacity(forecasts.len());
    let values = Array2::from_shape_fn(first.values.dim(), |idx| {
        cell.clear();
        cell.extend(forecasts.iter().map(|f| f.values[idx]));
        median_in_place(&mut cell).expect("non-empty")
    });
    Forecast::new(
        first.pages.clone(),
        first.dates.clone(),
        values,
        "median-combine",
    )
}

/// The five medians labelled a–e.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MedianKind {
    /// Last 7 days, weekday-independent.
    LastWeek,
    /// Last 21 days by weekday.
    ThreeWeeks,
    /// Last 63 days by weekday.
    NineWeeks,
    /// Last 365 days by weekday.
    Year,
    /// A calendar window by weekday.
    Calendar,
}

impl MedianKind {
    pub const ALL: [MedianKind; 5] = [
        MedianKind::LastWeek,
        MedianKind::ThreeWeeks,
        MedianKind::NineWeeks,
        MedianKind::Year,
        MedianKind::Calendar,
    ];

    pub fn letter(self) -> char {
        match self {
            MedianKind::LastWeek => 'a',
            MedianKind::ThreeWeeks => 'b',
            MedianKind::NineWeeks => 'c',
            MedianKind::Year => 'd',
            MedianKind::Calendar => 'e',
        }
    }

    pub fn window_days(self) -> Option<usize> {
        match self {
            MedianKind::LastWeek => Some(7),
            MedianKind::ThreeWeeks => Some(21),
            MedianKind::NineWeeks => Some(63),
            MedianKind::Year => Some(365),
            MedianKind::Calendar => None,
        }
    }
}

impl fmt::Display for MedianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "median_{}", self.letter())
    }
}

/// Computes medians a–e over a zero-filled table and expands each across
/// the horizon. `calendar` defaults to [`year_before_window`].
pub fn five_medians(
    table: &SeriesTable,
    horizon: usize,
    calendar: Option<(NaiveDate, NaiveDate)>,
) -> Result<[Forecast; 5]> {
    let dates = horizon_dates(table, horizon)?;
    let pages = page_names(table);
    let (start, end) = match calendar {
        Some(range) => range,
        None => year_before_window(&dates).ok_or_else(|| {
            Error::Config("cannot derive the calendar median window".into())
        })?,
    };
    let build = |kind: MedianKind| -> Result<Forecast> {
        let source = match kind {
            MedianKind::LastWeek => MedianSource::Scalar(last_week_median(table)?),
            MedianKind::Calendar => {
                MedianSource::Weekday(calendar_weekday_median(table, start, end)?)
            }
            _ => MedianSource::Weekday(weekday_median(
                table,
                kind.window_days().expect("trailing window"),
            )?),
        };
        expand_to_horizon(&source, &pages, &dates).map(|f| f.with_label(kind.to_string()))
    };
    Ok([
        build(MedianKind::LastWeek)?,
        build(MedianKind::ThreeWeeks)?,
        build(MedianKind::NineWeeks)?,
        build(MedianKind::Year)?,
        build(MedianKind::Calendar)?,
    ])
}

/// Median of the five medians.
pub fn medians_forecast(
    table: &SeriesTable,
    horizon: usize,
    calendar: Option<(NaiveDate, NaiveDate)>,
) -> Result<Forecast> {
    let five = five_medians(table, horizon, calendar)?;
    let refs: Vec<&Forecast> = five.iter().collect();
    median_combine(&refs).map(|f| f.with_label("medians"))
}
