//! Copied-segment localization on a similarity matrix.
//!
//! Four classical temporal-alignment baselines (Hough voting, temporal
//! network, dynamic programming, DTW) and a deterministic connected-component
//! box detector. All methods first min-max normalize the matrix so that
//! thresholds do not depend on its scale, work in grid cells, and convert to
//! seconds through the matrix scale factors with end-exclusive cell ranges.

mod components;
mod dp;
mod dtw;
mod hough;
mod network;
mod nms;

use std::collections::BTreeMap;
use std::str::FromStr;

use ndarray::Array2;

pub use components::cc_detect;
pub use dp::dyn_prog;
pub use dtw::dtw_align;
pub use hough::hough_voting;
pub use network::temporal_network;
pub use nms::nms;

use crate::annotations::SegmentBox;
use crate::error::{Error, Result};
use crate::simgen::{minmax_normalized, SimMatrix};

/// Hyperparameters shared by the localization methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Binarization threshold on the min-max normalized matrix.
    pub t_bin: f64,
    /// Node threshold for the temporal network.
    pub t_node: f64,
    /// Largest frame step allowed between consecutive matches.
    pub gap: usize,
    /// Minimum votes for a Hough offset bin to count as a peak.
    pub v_min: usize,
    /// Width of a Hough offset bin, in cells.
    pub bin_width: usize,
    /// Minimum chain length, in cells.
    pub l_min: usize,
    /// Minimum mean normalized similarity of an emitted segment.
    pub s_min: f64,
    /// Minimum box area, in cells.
    pub a_min: usize,
    pub nms_iou: f64,
    pub dp_gap_penalty: f64,
    /// Largest gap, in seconds, that the component detector bridges inside one segment.
    pub cc_link: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            t_bin: 0.5,
            t_node: 0.5,
            gap: 5,
            v_min: 3,
            bin_width: 2,
            l_min: 3,
            s_min: 0.3,
            a_min: 9,
            nms_iou: 0.3,
            dp_gap_penalty: 0.1,
            cc_link: 1.5,
        }
    }
}

impl DetectorParams {
    pub const KEYS: [&'static str; 11] = [
        "t_bin",
        "t_node",
        "gap",
        "v_min",
        "bin_width",
        "l_min",
        "s_min",
        "a_min",
        "nms_iou",
        "dp_gap_penalty",
        "cc_link",
    ];

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("t_bin", self.t_bin)?;
        unit("t_node", self.t_node)?;
        unit("s_min", self.s_min)?;
        unit("nms_iou", self.nms_iou)?;
        if self.gap < 1 {
            return Err(Error::InvalidParam("gap must be >= 1".into()));
        }
        if self.bin_width < 1 {
            return Err(Error::InvalidParam("bin_width must be >= 1".into()));
        }
        if self.l_min < 1 {
            return Err(Error::InvalidParam("l_min must be >= 1".into()));
        }
        if !(self.dp_gap_penalty >= 0.0 && self.dp_gap_penalty.is_finite()) {
            return Err(Error::InvalidParam("dp_gap_penalty must be >= 0".into()));
        }
        if !(self.cc_link >= 0.0 && self.cc_link.is_finite()) {
            return Err(Error::InvalidParam("cc_link must be >= 0".into()));
        }
        Ok(())
    }

    /// Sets one parameter from its textual `key=value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParam(format!("cannot parse {key}={value}")))
        }
        match key.trim() {
            "t_bin" => self.t_bin = parse(key, value)?,
            "t_node" => self.t_node = parse(key, value)?,
            "gap" => self.gap = parse(key, value)?,
            "v_min" => self.v_min = parse(key, value)?,
            "bin_width" => self.bin_width = parse(key, value)?,
            "l_min" | "L_min" => self.l_min = parse(key, value)?,
            "s_min" => self.s_min = parse(key, value)?,
            "a_min" => self.a_min = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            "dp_gap_penalty" => self.dp_gap_penalty = parse(key, value)?,
            "cc_link" => self.cc_link = parse(key, value)?,
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown detector parameter {other:?}"
                )))
            }
        }
        self.validate()
    }

    pub fn to_map(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([
            ("t_bin", self.t_bin),
            ("t_node", self.t_node),
            ("gap", self.gap as f64),
            ("v_min", self.v_min as f64),
            ("bin_width", self.bin_width as f64),
            ("l_min", self.l_min as f64),
            ("s_min", self.s_min),
            ("a_min", self.a_min as f64),
            ("nms_iou", self.nms_iou),
            ("dp_gap_penalty", self.dp_gap_penalty),
            ("cc_link", self.cc_link),
        ])
    }

    /// Score a chain must reach before it is worth extracting.
    pub(crate) fn chain_threshold(&self) -> f64 {
        self.l_min as f64 * self.s_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Hough,
    Network,
    DynProg,
    Dtw,
    Components,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Hough,
        Method::Network,
        Method::DynProg,
        Method::Dtw,
        Method::Components,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Hough => "hv",
            Method::Network => "tn",
            Method::DynProg => "dp",
            Method::Dtw => "dtw",
            Method::Components => "cc",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidParam(format!(
                    "unknown method {s:?}; expected hv, tn, dp, dtw or cc"
                ))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Runs `method` and applies non-maximum suppression to its output.
pub fn detect(s: &SimMatrix, method: Method, p: &DetectorParams) -> Result<Vec<SegmentBox>> {
    p.validate()?;
    let boxes = match method {
        Method::Hough => hough_voting(s, p),
        Method::Network => temporal_network(s, p),
        Method::DynProg => dyn_prog(s, p),
        Method::Dtw => dtw_align(s, p),
        Method::Components => return cc_detect(s, p),
    };
    Ok(nms(&boxes, p.nms_iou))
}

/// Bounding box of a set of cells, end-exclusive, in seconds.
pub(crate) fn cells_to_box(cells: &[(usize, usize)], s: &SimMatrix, score: f64) -> SegmentBox {
    let m0 = cells.iter().map(|c| c.0).min().expect("non-empty chain");
    let m1 = cells.iter().map(|c| c.0).max().unwrap() + 1;
    let n0 = cells.iter().map(|c| c.1).min().unwrap();
    let n1 = cells.iter().map(|c| c.1).max().unwrap() + 1;
    SegmentBox::from_cells(m0..m1, n0..n1, s.scale_q(), s.scale_r(), score)
        .expect("non-empty cell range")
}

pub(crate) fn normalized(s: &SimMatrix) -> Array2<f64> {
    minmax_normalized(s.values().view())
}

/// Sorts by score descending, breaking ties by `(ts_q, ts_r)`.
pub(crate) fn sort_by_score(boxes: &mut [SegmentBox]) {
    boxes.sort_by(|a, b| {
        b.score()
            .total_cmp(&a.score())
            .then(a.ts_q().total_cmp(&b.ts_q()))
            .then(a.ts_r().total_cmp(&b.ts_r()))
    });
}
