use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two anchors a segment runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorId {
    Small,
    Large,
}

impl AnchorId {
    pub fn other(self) -> AnchorId {
        match self {
            AnchorId::Small => AnchorId::Large,
            AnchorId::Large => AnchorId::Small,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    SmallToLarge,
    LargeToSmall,
}

impl Direction {
    pub fn source(self) -> AnchorId {
        match self {
            Direction::SmallToLarge => AnchorId::Small,
            Direction::LargeToSmall => AnchorId::Large,
        }
    }

    pub fn target(self) -> AnchorId {
        self.source().other()
    }
}

/// A (direction, boundary) pair at which activations change anchors.
///
/// The boundary is given at small-anchor granularity `l ∈ [1, L_small − 1]`;
/// the paired large-anchor boundary is `m = l · L_large / L_small`. Each
/// crossing owns exactly one stitching layer, shared by every route that
/// passes through it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CrossingId {
    pub direction: Direction,
    pub small_boundary: usize,
}

impl CrossingId {
    pub fn small_to_large(l: usize) -> Self {
        CrossingId {
            direction: Direction::SmallToLarge,
            small_boundary: l,
        }
    }

    pub fn large_to_small(l: usize) -> Self {
        CrossingId {
            direction: Direction::LargeToSmall,
            small_boundary: l,
        }
    }

    pub fn large_boundary(&self, depth_ratio: usize) -> usize {
        self.small_boundary * depth_ratio
    }
}

impl fmt::Display for CrossingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::SmallToLarge => "s2l",
            Direction::LargeToSmall => "l2s",
        };
        write!(f, "{dir}.{}", self.small_boundary)
    }
}

impl FromStr for CrossingId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad crossing id {s:?}, expected s2l.<l> or l2s.<l>"));
        let (dir, l) = s.split_once('.').ok_or_else(bad)?;
        let l: usize = l.parse().map_err(|_| bad())?;
        match dir {
            "s2l" => Ok(CrossingId::small_to_large(l)),
            "l2s" => Ok(CrossingId::large_to_small(l)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for CrossingId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CrossingId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Route family of a stitch. "Fast" is the small anchor, "slow" the large.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StitchKind {
    AnchorSmall,
    AnchorLarge,
    FS,
    SF,
    FSF,
    SFS,
}

impl StitchKind {
    pub fn is_anchor(self) -> bool {
        matches!(self, StitchKind::AnchorSmall | StitchKind::AnchorLarge)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StitchKind::AnchorSmall => "AnchorSmall",
            StitchKind::AnchorLarge => "AnchorLarge",
            StitchKind::FS => "FS",
            StitchKind::SF => "SF",
            StitchKind::FSF => "FSF",
            StitchKind::SFS => "SFS",
        }
    }
}

/// Blocks `[from, to)` of one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub anchor: AnchorId,
    pub from: usize,
    pub to: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.to - self.from
    }

    pub fn is_empty(&self) -> bool {
        self.from == self.to
    }
}

/// One routed network through the two anchors.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StitchConfig {
    pub kind: StitchKind,
    pub segments: Vec<Segment>,
    pub crossings: Vec<CrossingId>,
}

impl StitchConfig {
    /// The anchor whose patch embedding starts the route.
    pub fn entry_anchor(&self) -> AnchorId {
        self.segments[0].anchor
    }

    /// The anchor whose final norm and head terminate the route.
    pub fn head_anchor(&self) -> AnchorId {
        self.segments[self.segments.len() - 1].anchor
    }

    /// Builds the route for a kind and its crossing boundaries (small-anchor
    /// granularity): none for anchors, `[l]` for FS/SF, `[l1, l2]` with
    /// `l1 < l2` for FSF/SFS.
    pub fn from_kind(
        kind: StitchKind,
        boundaries: &[usize],
        small_depth: usize,
        large_depth: usize,
    ) -> Result<Self> {
        let r = depth_ratio(small_depth, large_depth)?;
        let seg = |anchor, from, to| Segment { anchor, from, to };
        use AnchorId::{Large, Small};
        let cfg = match (kind, boundaries) {
            (StitchKind::AnchorSmall, []) => StitchConfig {
                kind,
                segments: vec![seg(Small, 0, small_depth)],
                crossings: vec![],
            },
            (StitchKind::AnchorLarge, []) => StitchConfig {
                kind,
                segments: vec![seg(Large, 0, large_depth)],
                crossings: vec![],
            },
            (StitchKind::FS, &[l]) => StitchConfig {
                kind,
                segments: vec![seg(Small, 0, l), seg(Large, l * r, large_depth)],
                crossings: vec![CrossingId::small_to_large(l)],
            },
            (StitchKind::SF, &[l]) => StitchConfig {
                kind,
                segments: vec![seg(Large, 0, l * r), seg(Small, l, small_depth)],
                crossings: vec![CrossingId::large_to_small(l)],
            },
            (StitchKind::FSF, &[a, b]) => StitchConfig {
                kind,
                segments: vec![
                    seg(Small, 0, a),
                    seg(Large, a * r, b * r),
                    seg(Small, b, small_depth),
                ],
                crossings: vec![CrossingId::small_to_large(a), CrossingId::large_to_small(b)],
            },
            (StitchKind::SFS, &[a, b]) => StitchConfig {
                kind,
                segments: vec![
                    seg(Large, 0, a * r),
                    seg(Small, a, b),
                    seg(Large, b * r, large_depth),
                ],
                crossings: vec![CrossingId::large_to_small(a), CrossingId::small_to_large(b)],
            },
            _ => {
                return Err(Error::Config(format!(
                    "{} takes a different number of boundaries than {boundaries:?}",
                    kind.as_str()
                )))
            }
        };
        cfg.validate(small_depth, large_depth)?;
        Ok(cfg)
    }

    /// Checks the structural invariants of a route.
    pub fn validate(&self, small_depth: usize, large_depth: usize) -> Result<()> {
        let r = depth_ratio(small_depth, large_depth)?;
        let bad = |msg: String| Err(Error::Config(format!("invalid route: {msg}")));
        if self.segments.is_empty() {
            return bad("no segments".into());
        }
        if self.crossings.len() + 1 != self.segments.len() {
            return bad(format!(
                "{} crossings for {} segments",
                self.crossings.len(),
                self.segments.len()
            ));
        }
        let depth_of = |a: AnchorId| match a {
            AnchorId::Small => small_depth,
            AnchorId::Large => large_depth,
        };
        for (i, s) in self.segments.iter().enumerate() {
            if s.from >= s.to || s.to > depth_of(s.anchor) {
                return bad(format!("segment {i} {s:?} is empty or out of range"));
            }
        }
        for (i, c) in self.crossings.iter().enumerate() {
            let (prev, next) = (self.segments[i], self.segments[i + 1]);
            if prev.anchor == next.anchor {
                return bad(format!("segments {i} and {} share an anchor", i + 1));
            }
            if c.direction.source() != prev.anchor || c.direction.target() != next.anchor {
                return bad(format!("crossing {c} does not join {prev:?} to {next:?}"));
            }
            let l = c.small_boundary;
            if l == 0 || l >= small_depth {
                return bad(format!("crossing {c} outside [1, {}]", small_depth - 1));
            }
            // Leaving at boundary l (or m) and resuming at the paired one.
            let (exit, entry) = match c.direction {
                Direction::SmallToLarge => (l, l * r),
                Direction::LargeToSmall => (l * r, l),
            };
            if prev.to != exit || next.from != entry {
                return bad(format!("crossing {c} does not match segment boundaries"));
            }
        }
        let first = self.segments[0];
        let last = self.segments[self.segments.len() - 1];
        if first.from != 0 || last.to != depth_of(last.anchor) {
            return bad("route must start at block 0 and end at the last block".into());
        }
        let expected = match (self.segments.len(), first.anchor) {
            (1, AnchorId::Small) => StitchKind::AnchorSmall,
            (1, AnchorId::Large) => StitchKind::AnchorLarge,
            (2, AnchorId::Small) => StitchKind::FS,
            (2, AnchorId::Large) => StitchKind::SF,
            (3, AnchorId::Small) => StitchKind::FSF,
            (3, AnchorId::Large) => StitchKind::SFS,
            (n, _) => return bad(format!("{n} segments")),
        };
        if expected != self.kind {
            return bad(format!("kind {:?} but route shape is {:?}", self.kind, expected));
        }
        Ok(())
    }

    /// Compact label such as `FSF(1,3)`.
    pub fn label(&self) -> String {
        let ls: Vec<String> = self
            .crossings
            .iter()
            .map(|c| c.small_boundary.to_string())
            .collect();
        if ls.is_empty() {
            self.kind.as_str().to_string()
        } else {
            format!("{}({})", self.kind.as_str(), ls.join(","))
        }
    }
}

/// Space families: the single-direction space of the original stitching
/// scheme, or the two-way space with round trips.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceMode {
    #[serde(rename = "V1-FS")]
    V1Fs,
    #[serde(rename = "TWS")]
    Tws,
}

impl FromStr for SpaceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "V1-FS" | "v1-fs" | "v1fs" => Ok(SpaceMode::V1Fs),
            "TWS" | "tws" => Ok(SpaceMode::Tws),
            _ => Err(Error::Config(format!("unknown space mode {s:?}, expected V1-FS or TWS"))),
        }
    }
}

/// `L_large / L_small`, which must be a positive integer.
pub fn depth_ratio(small_depth: usize, large_depth: usize) -> Result<usize> {
    if small_depth == 0 || large_depth < small_depth || !large_depth.is_multiple_of(small_depth) {
        return Err(Error::Unsupported(format!(
            "large depth {large_depth} is not an integer multiple of small depth {small_depth}"
        )));
    }
    Ok(large_depth / small_depth)
}

/// Every route of the space, in a fixed order: the two anchors, then FS and
/// SF for each boundary, then FSF and SFS for each boundary pair.
pub fn enumerate_configs(
    small_depth: usize,
    large_depth: usize,
    mode: SpaceMode,
) -> Result<Vec<StitchConfig>> {
    depth_ratio(small_depth, large_depth)?;
    let mk = |kind, b: &[usize]| StitchConfig::from_kind(kind, b, small_depth, large_depth);
    let mut out = vec![mk(StitchKind::AnchorSmall, &[])?, mk(StitchKind::AnchorLarge, &[])?];
    for l in 1..small_depth {
        out.push(mk(StitchKind::FS, &[l])?);
        if mode == SpaceMode::Tws {
            out.push(mk(StitchKind::SF, &[l])?);
        }
    }
    if mode == SpaceMode::Tws {
        for a in 1..small_depth {
            for b in a + 1..small_depth {
                out.push(mk(StitchKind::FSF, &[a, b])?);
                out.push(mk(StitchKind::SFS, &[a, b])?);
            }
        }
    }
    Ok(out)
}

/// Closed-form size of the space for a small anchor of depth `l`.
pub fn space_size(small_depth: usize, mode: SpaceMode) -> usize {
    let k = small_depth.saturating_sub(1);
    match mode {
        SpaceMode::V1Fs => 2 + k,
        SpaceMode::Tws => 2 + 2 * k + k * k.saturating_sub(1),
    }
}
