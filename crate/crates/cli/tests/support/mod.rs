// Synthetic panels shaped like the real data: weekly seasonality, noise,
// leading gaps and a few all-zero pages.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Panel {
    pub pages: Vec<String>,
    pub start: NaiveDate,
    /// `history + horizon` days per page; `None` marks a missing cell.
    pub rows: Vec<Vec<Option<f64>>>,
    pub history: usize,
    pub horizon: usize,
}

pub fn page_name(i: usize) -> String {
    let lang = ["en", "fr", "de", "ja"][i % 4];
    let access = ["all-access_all-agents", "desktop_all-agents", "mobile-web_all-agents", "all-access_spider"][i / 4 % 4];
    format!("Topic_{i}_{lang}.wikipedia.org_{access}")
}

pub fn weekly_panel(n_pages: usize, history: usize, horizon: usize, seed: u64) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2015, 7, 1).unwrap();
    let days = history + horizon;
    let rows = (0..n_pages)
        .map(|i| {
            if i % 50 == 7 {
                return vec![Some(0.0); days];
            }
            let level = (rng.random::<f64>() * 7.0 + 1.0).exp();
            let amp = rng.random::<f64>() * 0.6;
            let phase = rng.random::<f64>() * 7.0;
            let trend = (rng.random::<f64>() - 0.5) * 0.6 / days as f64;
            let gap = if i % 5 == 0 { rng.random_range(0..120) } else { 0 };
            (0..days)
                .map(|d| {
                    if d < gap {
                        return None;
                    }
                    let season = 1.0 + amp * (std::f64::consts::TAU * (d as f64 + phase) / 7.0).sin();
                    let noise = (rng.random::<f64>() - 0.5) * 0.3;
                    let v = level * season * (1.0 + trend * d as f64) * (1.0 + noise);
                    Some(v.max(0.0).round())
                })
                .collect()
        })
        .collect();
    Panel {
        pages: (0..n_pages).map(page_name).collect(),
        start,
        rows,
        history,
        horizon,
    }
}

fn write_wide(path: &Path, start: NaiveDate, pages: &[String], rows: &[&[Option<f64>]]) {
    let mut text = String::from("Page");
    for k in 0..rows[0].len() {
        let _ = write!(text, ",{}", start + Duration::days(k as i64));
    }
    text.push('\n');
    for (p, r) in pages.iter().zip(rows) {
        text.push_str(p);
        for v in r.iter() {
            text.push(',');
            if let Some(v) = v {
                let _ = write!(text, "{v}");
            }
        }
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

impl Panel {
    /// Writes `train.csv` (history) and `answer_key.csv` (horizon, rows in
    /// reverse order) into `dir`.
    pub fn write(&self, dir: &Path) -> (PathBuf, PathBuf) {
        let train = dir.join("train.csv");
        let key = dir.join("answer_key.csv");
        let hist: Vec<&[Option<f64>]> = self.rows.iter().map(|r| &r[..self.history]).collect();
        write_wide(&train, self.start, &self.pages, &hist);
        let mut pages = self.pages.clone();
        let mut fut: Vec<&[Option<f64>]> = self.rows.iter().map(|r| &r[self.history..]).collect();
        pages.reverse();
        fut.reverse();
        write_wide(&key, self.start + Duration::days(self.history as i64), &pages, &fut);
        (train, key)
    }
}
