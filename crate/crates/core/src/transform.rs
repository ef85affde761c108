//! Preprocessing: zero-fill, log1p, IQR clipping, window splitting and
//! min-max scaling.
//!
//! The pipeline order is fill → log1p → split → fit the scaler on `X_train`
//! → scale every `X` slice. Targets stay in log1p space, unscaled.

use std::fs;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{date_range, SeriesTable};
use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Replaces every missing cell with 0.
pub fn fill_missing(table: &SeriesTable) -> SeriesTable {
    let values = table.values().mapv(|v| if v.is_nan() { 0.0 } else { v });
    table
        .with_values(values)
        .expect("zero-filling preserves table invariants")
}

/// Elementwise `ln(1 + x)`.
pub fn log1p_apply(x: &Array2<f64>) -> Result<Array2<f64>> {
    if let Some(((r, c), v)) = x.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Domain(format!(
            "log1p needs nonnegative finite input, got {v} at ({r}, {c})"
        )));
    }
    Ok(x.mapv(f64::ln_1p))
}

/// Elementwise `exp(x) - 1`, clamped below at 0.
pub fn log1p_invert(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.exp_m1().max(0.0))
}

/// Clips one series into `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`, with the lower fence
/// floored at 0. Quartiles use linear interpolation between order statistics.
pub fn iqr_clip(series: &[f64]) -> Vec<f64> {
    let Some((lo, hi)) = iqr_fences(series) else {
        return series.to_vec();
    };
    series.iter().map(|v| v.clamp(lo, hi)).collect()
}

/// The fences used by [`iqr_clip`]; `None` for an empty series.
pub fn iqr_fences(series: &[f64]) -> Option<(f64, f64)> {
    if series.is_empty() {
        return None;
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    Some(((q1 - 1.5 * iqr).max(0.0), q3 + 1.5 * iqr))
}

/// Column layout of a [`WindowSplit`] within its source table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitLayout {
    pub total_columns: usize,
    pub horizon: usize,
    pub x_train: Range<usize>,
    pub y_train: Range<usize>,
    pub x_validate: Range<usize>,
    pub y_validate: Range<usize>,
    pub x_test: Range<usize>,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub future_dates: Vec<NaiveDate>,
}

impl SplitLayout {
    /// `[X_train, y_train, X_validate, y_validate, X_test]` column ranges for
    /// a table of `total` columns.
    pub fn ranges(total: usize, horizon: usize) -> Result<[Range<usize>; 5]> {
        let required = 2 * horizon + 1;
        if horizon == 0 || total < required {
            return Err(Error::TooShort {
                required: required.max(3),
                actual: total,
            });
        }
        let (t, h) = (total, horizon);
        Ok([0..t - 2 * h, t - 2 * h..t - h, h..t - h, t - h..t, 2 * h..t])
    }

    pub fn x_width(&self) -> usize {
        self.x_train.len()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }
}

/// The five aligned slices: `X_train`, `y_train`, `X_validate`, `y_validate`
/// and `X_test`.
#[derive(Debug, Clone)]
pub struct WindowSplit {
    pub x_train: Array2<f64>,
    pub y_train: Array2<f64>,
    pub x_validate: Array2<f64>,
    pub y_validate: Array2<f64>,
    pub x_test: Array2<f64>,
    pub layout: SplitLayout,
}

/// Splits a (filled, usually log1p-transformed) table into training,
/// validation and test windows.
///
/// With `T` columns and horizon `h`: `X_train = [0, T-2h)`,
/// `y_train = [T-2h, T-h)`, `X_validate = [h, T-h)`, `y_validate = [T-h, T)`,
/// `X_test = [2h, T)`.
pub fn make_windows(table: &SeriesTable, horizon: usize) -> Result<WindowSplit> {
    let [xt, yt, xv, yv, xs] = SplitLayout::ranges(table.n_dates(), horizon)?;
    let values = table.values();
    let take = |r: &Range<usize>| values.slice(s![.., r.clone()]).to_owned();
    let last = table.last_date().expect("non-empty table");
    let layout = SplitLayout {
        total_columns: table.n_dates(),
        horizon,
        first_date: table.first_date().expect("non-empty table"),
        last_date: last,
        future_dates: date_range(last.succ_opt().expect("date in range"), horizon),
        x_train: xt.clone(),
        y_train: yt.clone(),
        x_validate: xv.clone(),
        y_validate: yv.clone(),
        x_test: xs.clone(),
    };
    Ok(WindowSplit {
        x_train: take(&xt),
        y_train: take(&yt),
        x_validate: take(&xv),
        y_validate: take(&yv),
        x_test: take(&xs),
        layout,
    })
}

/// Per-column extrema fitted by [`fit_minmax`], plus the target range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub range: (f64, f64),
}

impl ScalerParams {
    pub fn n_columns(&self) -> usize {
        self.mins.len()
    }

    fn check(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.n_columns() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} columns, got {}",
                self.n_columns(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let params: Self = read_json(path.as_ref())?;
        if params.mins.len() != params.maxs.len() {
            return Err(Error::Format("scaler mins/maxs lengths differ".into()));
        }
        Ok(params)
    }
}

/// Fits per-column minima and maxima onto the default `(0, 1)` range.
pub fn fit_minmax(x: &Array2<f64>) -> Result<ScalerParams> {
    fit_minmax_range(x, (0.0, 1.0))
}

pub fn fit_minmax_range(x: &Array2<f64>, range: (f64, f64)) -> Result<ScalerParams> {
    if x.is_empty() {
        return Err(Error::Shape("cannot fit a scaler on an empty matrix".into()));
    }
    if !(range.0 < range.1) {
        return Err(Error::Config(format!("invalid scaling range {range:?}")));
    }
    let mins = x
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let maxs = x
        .axis_iter(Axis(1))
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(ScalerParams { mins, maxs, range })
}

/// Maps each column onto the target range. Constant columns map to the lower
/// bound.
pub fn apply_minmax(x: &Array2<f64>, params: &ScalerParams) -> Result<Array2<f64>> {
    params.check(x)?;
    let (lo, hi) = params.range;
    let mut out = x.clone();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (min, max) = (params.mins[j], params.maxs[j]);
        let span = max - min;
        if span > 0.0 {
            col.mapv_inplace(|v| lo + (v - min) / span * (hi - lo));
        } else {
            col.fill(lo);
        }
    }
    Ok(out)
}

/// Inverse of [`apply_minmax`]. Constant columns map back to their minimum.
pub fn invert_minmax(x: &Array2<f64>, params: &ScalerParams) -> Result<Array2<f64>> {
    params.check(x)?;
    let (lo, hi) = params.range;
    let mut out = x.clone();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (min, max) = (params.mins[j], params.maxs[j]);
        let span = max - min;
        if span > 0.0 {
            col.mapv_inplace(|v| (v - lo) / (hi - lo) * span + min);
        } else {
            col.fill(min);
        }
    }
    Ok(out)
}

/// Output of [`prepare`]: the split with every `X` slice scaled.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: WindowSplit,
    pub scaler: ScalerParams,
}

/// Runs the default preprocessing pipeline on a raw table.
pub fn prepare(table: &SeriesTable, horizon: usize, range: (f64, f64)) -> Result<Prepared> {
    let filled = fill_missing(table);
    let logged = filled.with_values(log1p_apply(filled.values())?)?;
    let mut split = make_windows(&logged, horizon)?;
    let scaler = fit_minmax_range(&split.x_train, range)?;
    split.x_train = apply_minmax(&split.x_train, &scaler)?;
    split.x_validate = apply_minmax(&split.x_validate, &scaler)?;
    split.x_test = apply_minmax(&split.x_test, &scaler)?;
    Ok(Prepared { split, scaler })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PageKey;
    use ndarray::array;
    use proptest::prelude::*;

    fn table(values: Array2<f64>) -> SeriesTable {
        let pages = (0..values.nrows())
            .map(|i| PageKey::parse(&format!("p{i}_en.wikipedia.org_desktop_user")).unwrap())
            .collect();
        SeriesTable::from_start(pages, NaiveDate::from_ymd_opt(2015, 7, 1).unwrap(), values).unwrap()
    }

    #[test]
    fn fill_is_identity_without_missing() {
        let t = table(array![[1.0, 2.0], [3.0, 0.0]]);
        assert_eq!(fill_missing(&t), t);
    }

    #[test]
    fn fill_replaces_missing() {
        let nan = f64::NAN;
        let t = table(array![[nan, nan, 48.0], [nan, nan, nan]]);
        let f = fill_missing(&t);
        assert_eq!(f.values(), &array![[0.0, 0.0, 48.0], [0.0, 0.0, 0.0]]);
        assert!(!f.has_missing());
    }

    #[test]
    fn log1p_values() {
        let out = log1p_apply(&array![[0.0, 18.0, std::f64::consts::E - 1.0]]).unwrap();
        assert_eq!(out[[0, 0]], 0.0);
        assert!((out[[0, 1]] - 2.944_438_979_166_440_5).abs() < 1e-12);
        assert!((out[[0, 2]] - 1.0).abs() < 1e-15);
        assert!(matches!(log1p_apply(&array![[-1.0]]), Err(Error::Domain(_))));
        assert!(log1p_apply(&array![[f64::NAN]]).is_err());
    }

    #[test]
    fn log1p_invert_clamps() {
        let out = log1p_invert(&array![[0.0, -0.5]]);
        assert_eq!(out, array![[0.0, 0.0]]);
    }

    proptest! {
        #[test]
        fn log1p_round_trip(v in 0.0f64..1e8) {
            let back = log1p_invert(&log1p_apply(&array![[v]]).unwrap())[[0, 0]];
            prop_assert!((back - v).abs() <= 1e-9 * v.max(1.0));
        }
    }

    #[test]
    fn iqr_examples() {
        assert_eq!(iqr_clip(&[5.0; 6]), vec![5.0; 6]);
        assert_eq!(iqr_clip(&[1.0, 2.0, 3.0, 4.0, 100.0]), vec![1.0, 2.0, 3.0, 4.0, 7.0]);
        assert_eq!(iqr_fences(&[1.0, 2.0, 3.0, 4.0, 100.0]), Some((0.0, 7.0)));
        assert_eq!(iqr_clip(&[3.0, 4.0, 5.0, 4.0]), vec![3.0, 4.0, 5.0, 4.0]);
        assert!(iqr_clip(&[]).is_empty());
    }

    proptest! {
        #[test]
        fn iqr_output_inside_fences(series in proptest::collection::vec(0.0f64..1e4, 1..80)) {
            let (lo, hi) = iqr_fences(&series).unwrap();
            let clipped = iqr_clip(&series);
            let mut sorted = series.clone();
            sorted.sort_by(f64::total_cmp);
            let median = quantile_sorted(&sorted, 0.5);
            for (before, after) in series.iter().zip(&clipped) {
                prop_assert!(*after >= lo && *after <= hi);
                if *before >= lo && *before <= hi {
                    prop_assert_eq!(before, after);
                }
                // Clipping only ever pulls a value toward the middle.
                prop_assert!((after - median).abs() <= (before - median).abs());
                if *before > hi {
                    prop_assert!(after.abs() <= before.abs());
                }
            }
        }
    }

    #[test]
    fn windows_for_real_layout() {
        let t = table(Array2::zeros((2, 550)));
        let w = make_windows(&t, 60).unwrap();
        let l = &w.layout;
        assert_eq!(l.x_train, 0..430);
        assert_eq!(l.y_train, 430..490);
        assert_eq!(l.x_validate, 60..490);
        assert_eq!(l.y_validate, 490..550);
        assert_eq!(l.x_test, 120..550);
        for x in [&w.x_train, &w.x_validate, &w.x_test] {
            assert_eq!(x.ncols(), 430);
        }
        assert_eq!(w.y_train.ncols(), 60);
        assert_eq!(w.y_validate.ncols(), 60);
        assert_eq!(l.future_dates.first(), NaiveDate::from_ymd_opt(2017, 1, 1).as_ref());
        assert_eq!(l.future_dates.last(), NaiveDate::from_ymd_opt(2017, 3, 1).as_ref());
    }

    #[test]
    fn windows_minimal_length() {
        let t = table(Array2::from_shape_fn((1, 121), |(_, j)| j as f64));
        let w = make_windows(&t, 60).unwrap();
        assert_eq!(w.layout.x_train, 0..1);
        assert_eq!(w.layout.y_train, 1..61);
        assert_eq!(w.layout.y_validate, 61..121);
        assert_eq!(w.x_test[[0, 0]], 120.0);
        let short = table(Array2::zeros((1, 120)));
        assert!(matches!(
            make_windows(&short, 60),
            Err(Error::TooShort { required: 121, actual: 120 })
        ));
    }

    proptest! {
        #[test]
        fn window_layout_invariants(h in 1usize..80, extra in 1usize..200) {
            let t = 2 * h + extra;
            let [xt, yt, xv, yv, xs] = SplitLayout::ranges(t, h).unwrap();
            prop_assert_eq!(xt.len(), t - 2 * h);
            prop_assert_eq!(xv.len(), t - 2 * h);
            prop_assert_eq!(xs.len(), t - 2 * h);
            prop_assert_eq!(yt.len(), h);
            prop_assert_eq!(yv.len(), h);
            prop_assert_eq!(yt.end, yv.start);
            prop_assert_eq!(xs.end, t);
            prop_assert_eq!(xt.end, yt.start);
            prop_assert_eq!(xv.end, yv.start);
        }
    }

    #[test]
    fn minmax_examples() {
        let p = fit_minmax(&array![[0.0], [2.0], [4.0]]).unwrap();
        assert_eq!((p.mins.clone(), p.maxs.clone()), (vec![0.0], vec![4.0]));
        assert_eq!(
            apply_minmax(&array![[0.0], [2.0], [4.0]], &p).unwrap(),
            array![[0.0], [0.5], [1.0]]
        );
        assert_eq!(invert_minmax(&array![[0.0], [1.0]], &p).unwrap(), array![[0.0], [4.0]]);

        // Column-wise, not global.
        let x = array![[1.0, 10.0], [3.0, 30.0]];
        let p = fit_minmax(&x).unwrap();
        assert_eq!(p.mins, vec![1.0, 10.0]);
        assert_eq!(p.maxs, vec![3.0, 30.0]);
        assert_eq!(apply_minmax(&x, &p).unwrap(), array![[0.0, 0.0], [1.0, 1.0]]);
    }

    #[test]
    fn minmax_degenerate_column() {
        let x = array![[3.0], [3.0]];
        let p = fit_minmax(&x).unwrap();
        assert_eq!((p.mins[0], p.maxs[0]), (3.0, 3.0));
        assert_eq!(apply_minmax(&x, &p).unwrap(), array![[0.0], [0.0]]);
        assert_eq!(invert_minmax(&array![[0.7], [-2.0]], &p).unwrap(), array![[3.0], [3.0]]);
    }

    #[test]
    fn minmax_alternative_range() {
        let x = array![[0.0], [2.0], [4.0]];
        let p = fit_minmax_range(&x, (-1.0, 1.0)).unwrap();
        assert_eq!(apply_minmax(&x, &p).unwrap(), array![[-1.0], [0.0], [1.0]]);
        let c = fit_minmax_range(&array![[5.0], [5.0]], (-1.0, 1.0)).unwrap();
        assert_eq!(apply_minmax(&array![[5.0]], &c).unwrap(), array![[-1.0]]);
    }

    #[test]
    fn minmax_column_mismatch() {
        let p = fit_minmax(&array![[0.0, 1.0]]).unwrap();
        assert!(matches!(apply_minmax(&array![[0.0]], &p), Err(Error::Shape(_))));
        assert!(matches!(invert_minmax(&array![[0.0]], &p), Err(Error::Shape(_))));
        assert!(fit_minmax(&Array2::zeros((0, 3))).is_err());
    }

    proptest! {
        #[test]
        fn minmax_round_trip(
            rows in 2usize..8,
            cols in 1usize..6,
            seed in proptest::collection::vec(-1e3f64..1e3, 48),
        ) {
            let x = Array2::from_shape_fn((rows, cols), |(i, j)| seed[i * 6 + j] + (i as f64) * 1e-3);
            for range in [(0.0, 1.0), (-1.0, 1.0)] {
                let p = fit_minmax_range(&x, range).unwrap();
                let back = invert_minmax(&apply_minmax(&x, &p).unwrap(), &p).unwrap();
                for (a, b) in x.iter().zip(back.iter()) {
                    prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn scaler_json_round_trip_is_exact() {
        let x = array![[0.1 + 0.2, 1.0 / 3.0], [7.25, 1e-17]];
        let p = fit_minmax(&x).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        p.write_json(f.path()).unwrap();
        let back = ScalerParams::read_json(f.path()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn prepare_keeps_targets_in_log_space() {
        let raw = Array2::from_shape_fn((3, 130), |(i, j)| ((i + 1) * (j % 7 + 1)) as f64);
        let t = table(raw.clone());
        let p = prepare(&t, 60, (0.0, 1.0)).unwrap();
        let yt = &p.split.y_train;
        for i in 0..3 {
            for (k, j) in (10..70).enumerate() {
                assert_eq!(yt[[i, k]], raw[[i, j]].ln_1p());
            }
        }
        let scaled = &p.split.x_train;
        assert!(scaled.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(p.scaler.n_columns(), 10);
    }
}
