// Naive reference implementations used as test oracles. Deliberately written
// with plain loops over Vec<Vec<f64>> and no library helpers, so they share
// no code with the implementations under test.
#![allow(dead_code)]

use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    // insertion sort
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    let n = v.len();
    assert!(n > 0);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn future_dates(last: NaiveDate, horizon: usize) -> Vec<NaiveDate> {
    (1..=horizon as i64).map(|k| last + Duration::days(k)).collect()
}

/// Median of the last `window` values, repeated over the horizon.
pub fn trailing(rows: &[Vec<f64>], window: usize, horizon: usize) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let m = median(&r[r.len() - window..]);
            vec![m; horizon]
        })
        .collect()
}

/// Weekday medians over the columns `cols`, looked up for each future date.
/// Weekdays absent from the window use the median of the whole window.
pub fn weekday(
    rows: &[Vec<f64>],
    dates: &[NaiveDate],
    cols: &[usize],
    future: &[NaiveDate],
) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for r in rows {
        let all: Vec<f64> = cols.iter().map(|&c| r[c]).collect();
        let mut line = Vec::new();
        for d in future {
            let mut same = Vec::new();
            for &c in cols {
                if dates[c].weekday() == d.weekday() {
                    same.push(r[c]);
                }
            }
            line.push(if same.is_empty() { median(&all) } else { median(&same) });
        }
        out.push(line);
    }
    out
}

pub fn last_cols(n: usize, window: usize) -> Vec<usize> {
    (n - window..n).collect()
}

pub fn calendar_cols(dates: &[NaiveDate], start: NaiveDate, end: NaiveDate) -> Vec<usize> {
    let mut cols = Vec::new();
    for (i, d) in dates.iter().enumerate() {
        if *d >= start && *d <= end {
            cols.push(i);
        }
    }
    cols
}

/// Same calendar days one year earlier; Feb 29 maps to Feb 28.
pub fn year_before(d: NaiveDate) -> NaiveDate {
    let y = d.year() - 1;
    NaiveDate::from_ymd_opt(y, d.month(), d.day())
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(y, d.month(), 28).unwrap())
}

/// Cellwise median of several grids.
pub fn combine(grids: &[&Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let rows = grids[0].len();
    let cols = grids[0][0].len();
    let mut out = vec![vec![0.0; cols]; rows];
    for i in 0..rows {
        for j in 0..cols {
            let cell: Vec<f64> = grids.iter().map(|g| g[i][j]).collect();
            out[i][j] = median(&cell);
        }
    }
    out
}

/// Mean of `200 |y - p| / (|y| + |p|)` with 0 for 0/0, summed in a plain
/// loop.
pub fn smape(y: &[Vec<f64>], p: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ry, rp) in y.iter().zip(p) {
        for (a, b) in ry.iter().zip(rp) {
            let d = a.abs() + b.abs();
            if d != 0.0 {
                sum += 200.0 * (a - b).abs() / d;
            }
            n += 1;
        }
    }
    sum / n as f64
}

pub fn mae(y: &[Vec<f64>], p: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ry, rp) in y.iter().zip(p) {
        for (a, b) in ry.iter().zip(rp) {
            sum += (a - b).abs();
            n += 1;
        }
    }
    sum / n as f64
}

/// A random small panel: view counts with frequent zeros and ties, and a
/// random start date between 2012 and 2019.
pub struct RandomPanel {
    pub pages: Vec<String>,
    pub start: NaiveDate,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<Vec<f64>>,
}

pub fn random_panel<R: Rng>(rng: &mut R, max_pages: usize, min_days: usize, max_days: usize) -> RandomPanel {
    let n_pages = rng.random_range(1..=max_pages);
    let n_days = rng.random_range(min_days..=max_days);
    let start = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap()
        + Duration::days(rng.random_range(0..365 * 8));
    let dates: Vec<NaiveDate> = (0..n_days as i64).map(|k| start + Duration::days(k)).collect();
    let rows = (0..n_pages)
        .map(|_| {
            let scale = [1.0, 10.0, 1000.0][rng.random_range(0..3)];
            (0..n_days)
                .map(|_| match rng.random_range(0..10) {
                    0 | 1 => 0.0,
                    2 => (rng.random::<f64>() * scale * 100.0).floor() / 100.0 + 0.25,
                    _ => rng.random_range(0..20) as f64 * scale,
                })
                .collect()
        })
        .collect();
    let pages = (0..n_pages)
        .map(|i| format!("Page_{i}_xx.wikipedia.org_all-access_all-agents"))
        .collect();
    RandomPanel { pages, start, dates, rows }
}

pub fn to_rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}
