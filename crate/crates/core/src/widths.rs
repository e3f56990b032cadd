//! Width factors and the channel-connectivity masks that make every width a
//! self-contained sub-network.
//!
//! A width-factor `alpha` in (0, 1] scales the number of active channels in
//! every layer simultaneously. A layer with `m` channels runs its first
//! `active_count(alpha, m)` channels. For the network to work at *every*
//! alpha with a single set of accumulated normalization statistics, an
//! active output channel must never read an input channel that is inactive
//! at some alpha; zeroing those connections yields a lower-triangular
//! weight matrix in the square case and its staircase generalization when
//! the two layers differ in size.

use crate::error::{Error, Result};

/// Network-wide width factor, a real in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct WidthFactor(f64);

impl WidthFactor {
    pub const FULL: WidthFactor = WidthFactor(1.0);

    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha > 1.0 {
            return Err(Error::Arg(format!(
                "width factor must lie in (0, 1], got {alpha}"
            )));
        }
        Ok(WidthFactor(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A layer's total channel count and its active prefix at the current width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerWidth {
    pub total: usize,
    pub active: usize,
}

impl LayerWidth {
    pub fn at(alpha: WidthFactor, total: usize) -> Self {
        LayerWidth {
            total,
            active: active_count(alpha, total),
        }
    }
}

/// Number of active channels out of `m` at width `alpha`: ceil(alpha * m),
/// clamped to [1, m]. The ceiling keeps at least one channel active for any
/// positive alpha and makes the count right-continuous in alpha.
///
/// The product is nudged down by 1e-9 before the ceiling so that
/// breakpoint widths alpha = j/m evaluate to exactly j even when the
/// float product lands a hair above the integer. Without the nudge, two
/// layers of different sizes can round inconsistently at the same alpha
/// (one staircase up, the other not), which would let an active output
/// read a not-yet-active input. The nudge is far above the product's
/// rounding error (~1e-10 at m = 10^6) and far below the spacing of
/// meaningful width fractions.
///
/// Panics if `m` is zero.
pub fn active_count(alpha: WidthFactor, m: usize) -> usize {
    assert!(m >= 1, "active_count: channel count must be >= 1");
    let k = (alpha.value() * m as f64 - 1e-9).ceil() as usize;
    k.clamp(1, m)
}

/// Channel-connectivity mask between a layer of `m_in` channels and one of
/// `m_out` channels: output channel `s` (0-based) may read input channels
/// `t < t_max(s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriangularMask {
    m_out: usize,
    m_in: usize,
    /// Per output channel, the count of permitted input channels (equivalently
    /// the 1-based maximal permitted input index).
    t_max: Vec<usize>,
}

impl TriangularMask {
    /// The maximal mask that is safe at every width:
    /// t_max(s) = floor(s * m_in / m_out) + 1 (0-based s).
    ///
    /// In the square case this is exactly the lower triangle. Panics if
    /// either extent is zero.
    pub fn new(m_out: usize, m_in: usize) -> Self {
        assert!(m_out >= 1 && m_in >= 1, "mask extents must be positive");
        let t_max = (0..m_out).map(|s| s * m_in / m_out + 1).collect();
        TriangularMask { m_out, m_in, t_max }
    }

    /// Build from an explicit t_max table (used to probe unsafe masks).
    pub fn from_t_max(m_out: usize, m_in: usize, t_max: Vec<usize>) -> Result<Self> {
        if t_max.len() != m_out {
            return Err(Error::Arg(format!(
                "t_max has {} entries for {m_out} output channels",
                t_max.len()
            )));
        }
        if t_max.iter().any(|&t| t < 1 || t > m_in) {
            return Err(Error::Arg(format!(
                "t_max entries must lie in [1, {m_in}], got {t_max:?}"
            )));
        }
        Ok(TriangularMask { m_out, m_in, t_max })
    }

    pub fn m_out(&self) -> usize {
        self.m_out
    }

    pub fn m_in(&self) -> usize {
        self.m_in
    }

    /// Count of permitted input channels for output channel `s` (0-based).
    pub fn t_max(&self, s: usize) -> usize {
        self.t_max[s]
    }

    #[inline]
    pub fn is_allowed(&self, s: usize, t: usize) -> bool {
        t < self.t_max[s]
    }

    /// Total permitted connections, i.e. active weight entries per kernel tap.
    pub fn allowed_connections(&self) -> usize {
        self.t_max.iter().sum()
    }

    /// A copy with one extra connection on row `s`, if room remains.
    pub fn with_extra_connection(&self, s: usize) -> Option<Self> {
        if self.t_max[s] >= self.m_in {
            return None;
        }
        let mut t_max = self.t_max.clone();
        t_max[s] += 1;
        Some(TriangularMask {
            m_out: self.m_out,
            m_in: self.m_in,
            t_max,
        })
    }
}

/// True iff no active output channel ever reads an inactive input channel,
/// for every width on a dense grid of step 1/(m_out*m_in) together with all
/// breakpoints j/m_out and j/m_in of the two active-count staircases and
/// the midpoints between consecutive breakpoints.
///
/// Both active counts are constant on the open intervals between adjacent
/// breakpoints, so the midpoints witness every interval. The breakpoints
/// alone are not enough in floating point: at alpha = j/m the product
/// alpha*m can land a hair above j and ceil one channel too high, hiding a
/// violation that covers the whole interval below it.
pub fn validate_any_width_safety(mask: &TriangularMask) -> bool {
    let (m_out, m_in) = (mask.m_out(), mask.m_in());
    let check = |alpha: f64| -> bool {
        let alpha = WidthFactor::new(alpha).expect("alpha grid stays in (0,1]");
        let k_out = active_count(alpha, m_out);
        let k_in = active_count(alpha, m_in);
        (0..k_out).all(|s| mask.t_max(s) <= k_in)
    };

    let mut breakpoints: Vec<f64> = (1..=m_out)
        .map(|j| j as f64 / m_out as f64)
        .chain((1..=m_in).map(|j| j as f64 / m_in as f64))
        .collect();
    breakpoints.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    for pair in breakpoints.windows(2) {
        if !check(0.5 * (pair[0] + pair[1])) {
            return false;
        }
    }
    if !breakpoints.iter().all(|&b| check(b)) {
        return false;
    }
    let steps = m_out * m_in;
    (1..=steps).all(|i| check(i as f64 / steps as f64))
}
