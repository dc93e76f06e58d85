//! Lattice geometry and configuration storage.
//!
//! The microscopic domain is a strip `{-N,...,N} x {0,...,L-1}^(d-1)` whose
//! transverse directions are periodic. In reservoir mode the two faces
//! `x1 = +-N` exchange particles with boundary baths; in torus mode the e1
//! axis wraps as well and there is no boundary.
//!
//! Each site carries one of four states:
//!
//! * `0` — empty,
//! * `1` — wild particle only (`xi = 1`),
//! * `2` — sterile particle only (`omega = 1`),
//! * `3` — both (`xi = omega = 1`).
//!
//! States are packed two bits per site in a flat array, row-major with the
//! e1 axis fastest, which keeps nearest-neighbour reads in cache in the
//! event loop.

use arrayvec::ArrayVec;
use thiserror::Error;

/// Flat site index into a [`Geometry`].
pub type Site = usize;

/// Per-site state in `{0,1,2,3}`.
pub type State = u8;

/// Combine occupation bits into a state: bit 0 is `xi`, bit 1 is `omega`.
#[inline]
pub fn encode(xi: u8, omega: u8) -> State {
    debug_assert!(xi <= 1 && omega <= 1);
    xi | (omega << 1)
}

/// Split a state back into `(xi, omega)` occupation bits.
#[inline]
pub fn decode(state: State) -> (u8, u8) {
    debug_assert!(state <= 3);
    (state & 1, state >> 1)
}

/// `xi` bit of a state.
#[inline]
pub fn xi(state: State) -> u8 {
    state & 1
}

/// `omega` bit of a state.
#[inline]
pub fn omega(state: State) -> u8 {
    state >> 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Strip with particle reservoirs on the two faces `x1 = +-N`.
    Reservoirs,
    /// All directions periodic, no boundary sites.
    Torus,
}

/// Which face of the strip a boundary site belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    Minus,
    Plus,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("dimension {0} unsupported (d must be 1 or 2)")]
    BadDimension(u8),
    #[error("transverse length must be >= 1")]
    BadTransverseLen,
}

/// Strip/torus lattice with `2N+1` sites along e1 and `L^(d-1)` transverse
/// sites, transverse directions periodic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    d: u8,
    half_width: u32,
    transverse_len: u32,
    mode: BoundaryMode,
}

impl Geometry {
    pub fn new(
        d: u8,
        half_width: u32,
        transverse_len: u32,
        mode: BoundaryMode,
    ) -> Result<Self, GeometryError> {
        if d != 1 && d != 2 {
            return Err(GeometryError::BadDimension(d));
        }
        if d == 2 && transverse_len == 0 {
            return Err(GeometryError::BadTransverseLen);
        }
        Ok(Self {
            d,
            half_width,
            transverse_len: if d == 1 { 1 } else { transverse_len },
            mode,
        })
    }

    pub fn strip_1d(half_width: u32) -> Self {
        Self::new(1, half_width, 1, BoundaryMode::Reservoirs).unwrap()
    }

    pub fn torus_1d(half_width: u32) -> Self {
        Self::new(1, half_width, 1, BoundaryMode::Torus).unwrap()
    }

    #[inline]
    pub fn d(&self) -> u8 {
        self.d
    }

    #[inline]
    pub fn half_width(&self) -> u32 {
        self.half_width
    }

    #[inline]
    pub fn transverse_len(&self) -> u32 {
        self.transverse_len
    }

    #[inline]
    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    /// Number of sites along e1.
    #[inline]
    pub fn e1_len(&self) -> usize {
        2 * self.half_width as usize + 1
    }

    #[inline]
    pub fn site_count(&self) -> usize {
        self.e1_len() * self.transverse_len as usize
    }

    /// Macroscopic length scale: coordinates are `x / N` (1 for `N = 0`).
    #[inline]
    pub fn scale(&self) -> f64 {
        self.half_width.max(1) as f64
    }

    /// Coordinates `(x1, y)` of a site, `x1` in `-N..=N`, `y` in `0..L`.
    #[inline]
    pub fn coords(&self, site: Site) -> (i64, u32) {
        let e1 = self.e1_len();
        let x1 = (site % e1) as i64 - self.half_width as i64;
        let y = (site / e1) as u32;
        (x1, y)
    }

    #[inline]
    pub fn site_at(&self, x1: i64, y: u32) -> Site {
        debug_assert!(x1.unsigned_abs() <= self.half_width as u64);
        debug_assert!(y < self.transverse_len);
        y as usize * self.e1_len() + (x1 + self.half_width as i64) as usize
    }

    /// Macroscopic coordinates `x / N` of a site.
    #[inline]
    pub fn macro_coord(&self, site: Site) -> [f64; 2] {
        let (x1, y) = self.coords(site);
        let s = self.scale();
        [x1 as f64 / s, y as f64 / s]
    }

    /// Nearest neighbours of a site, e1 first. Across e1 the list is
    /// truncated at `x1 = +-N` in reservoir mode and wraps in torus mode;
    /// transverse directions always wrap. Wraps onto the site itself
    /// (axis of length 1) are dropped; on an axis of length 2 the single
    /// other site appears twice, once per lattice direction.
    pub fn neighbors(&self, site: Site) -> ArrayVec<Site, 4> {
        let mut out = ArrayVec::new();
        let (x1, y) = self.coords(site);
        let n = self.half_width as i64;
        match self.mode {
            BoundaryMode::Reservoirs => {
                if x1 > -n {
                    out.push(self.site_at(x1 - 1, y));
                }
                if x1 < n {
                    out.push(self.site_at(x1 + 1, y));
                }
            }
            BoundaryMode::Torus => {
                if self.e1_len() > 1 {
                    let wrap = |v: i64| {
                        let len = 2 * n + 1;
                        let mut w = v;
                        if w < -n {
                            w += len;
                        }
                        if w > n {
                            w -= len;
                        }
                        w
                    };
                    out.push(self.site_at(wrap(x1 - 1), y));
                    out.push(self.site_at(wrap(x1 + 1), y));
                }
            }
        }
        if self.d == 2 && self.transverse_len > 1 {
            let l = self.transverse_len;
            out.push(self.site_at(x1, (y + l - 1) % l));
            out.push(self.site_at(x1, (y + 1) % l));
        }
        out
    }

    /// True when the site sits on the reservoir boundary `Gamma_N`.
    #[inline]
    pub fn is_boundary(&self, site: Site) -> bool {
        match self.mode {
            BoundaryMode::Torus => false,
            BoundaryMode::Reservoirs => {
                let (x1, _) = self.coords(site);
                x1.unsigned_abs() == self.half_width as u64
            }
        }
    }

    /// Face of a boundary site. For the degenerate `N = 0` column (a single
    /// layer that is both faces) the plus face is used.
    #[inline]
    pub fn face(&self, site: Site) -> Face {
        let (x1, _) = self.coords(site);
        if x1 >= self.half_width as i64 {
            Face::Plus
        } else {
            Face::Minus
        }
    }

    pub fn boundary_sites(&self) -> Vec<Site> {
        (0..self.site_count())
            .filter(|&s| self.is_boundary(s))
            .collect()
    }

    /// All lattice bonds with a canonical orientation (tail to head along
    /// the positive lattice direction). On a periodic axis of length 2 both
    /// directed wraps are kept, so the pair is joined by two parallel bonds.
    pub fn bonds(&self) -> Vec<Bond> {
        let mut out = Vec::new();
        let n = self.half_width as i64;
        for site in 0..self.site_count() {
            let (x1, y) = self.coords(site);
            match self.mode {
                BoundaryMode::Reservoirs => {
                    if x1 < n {
                        out.push(Bond {
                            tail: site,
                            head: self.site_at(x1 + 1, y),
                            dir: 0,
                        });
                    }
                }
                BoundaryMode::Torus => {
                    if self.e1_len() > 1 {
                        let head_x = if x1 + 1 > n { -n } else { x1 + 1 };
                        out.push(Bond {
                            tail: site,
                            head: self.site_at(head_x, y),
                            dir: 0,
                        });
                    }
                }
            }
            if self.d == 2 && self.transverse_len > 1 {
                out.push(Bond {
                    tail: site,
                    head: self.site_at(x1, (y + 1) % self.transverse_len),
                    dir: 1,
                });
            }
        }
        out
    }

    /// Transverse ring distance of a site from the e1 axis (0 when d = 1).
    #[inline]
    pub fn transverse_dist(&self, site: Site) -> u32 {
        if self.d == 1 {
            return 0;
        }
        let (_, y) = self.coords(site);
        y.min(self.transverse_len - y)
    }
}

/// Oriented nearest-neighbour bond; `dir` is the lattice direction index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub tail: Site,
    pub head: Site,
    pub dir: u8,
}

/// Centered transverse box of radius `M`: the sites whose transverse ring
/// distance is at most `M`. In d = 1 every site is inside any box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransverseBox {
    pub radius: u32,
}

impl TransverseBox {
    pub fn new(radius: u32) -> Self {
        Self { radius }
    }

    /// Box size `M = N^(1 + 1/d)` rounded down.
    pub fn scaling(n: u32, d: u8) -> Self {
        let m = (n as f64).powf(1.0 + 1.0 / d as f64).floor() as u32;
        Self { radius: m }
    }

    #[inline]
    pub fn contains(&self, geom: &Geometry, site: Site) -> bool {
        geom.transverse_dist(site) <= self.radius
    }

    pub fn covers(&self, geom: &Geometry) -> bool {
        (0..geom.site_count()).all(|s| self.contains(geom, s))
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot header malformed: {0}")]
    BadHeader(String),
    #[error("snapshot body has {got} digits, lattice has {want} sites")]
    BadLength { got: usize, want: usize },
    #[error("invalid state digit {0:?}")]
    BadDigit(char),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Full microscopic configuration: a geometry plus one state per site,
/// packed four sites per byte.
#[derive(Clone, PartialEq, Eq)]
pub struct Configuration {
    geom: Geometry,
    packed: Vec<u8>,
}

impl Configuration {
    pub fn constant(geom: Geometry, state: State) -> Self {
        debug_assert!(state <= 3);
        let fill = state | state << 2 | state << 4 | state << 6;
        Self {
            geom,
            packed: vec![fill; geom.site_count().div_ceil(4)],
        }
    }

    pub fn empty(geom: Geometry) -> Self {
        Self::constant(geom, 0)
    }

    pub fn from_states(geom: Geometry, states: &[State]) -> Self {
        assert_eq!(states.len(), geom.site_count());
        let mut cfg = Self::empty(geom);
        for (site, &s) in states.iter().enumerate() {
            cfg.set(site, s);
        }
        cfg
    }

    #[inline]
    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    #[inline]
    pub fn get(&self, site: Site) -> State {
        (self.packed[site >> 2] >> ((site & 3) << 1)) & 3
    }

    #[inline]
    pub fn set(&mut self, site: Site, state: State) {
        debug_assert!(state <= 3);
        let byte = &mut self.packed[site >> 2];
        let shift = (site & 3) << 1;
        *byte = (*byte & !(3 << shift)) | (state << shift);
    }

    #[inline]
    pub fn swap(&mut self, a: Site, b: Site) {
        let sa = self.get(a);
        let sb = self.get(b);
        self.set(a, sb);
        self.set(b, sa);
    }

    /// Number of sites in each of the four states.
    pub fn occupancy_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for site in 0..self.geom.site_count() {
            counts[self.get(site) as usize] += 1;
        }
        counts
    }

    /// ASCII snapshot: a one-line header `d N L mode` followed by base-4
    /// digits row-major (one line per transverse row).
    pub fn write_snapshot(&self) -> String {
        let mode = match self.geom.mode {
            BoundaryMode::Reservoirs => "reservoirs",
            BoundaryMode::Torus => "torus",
        };
        let mut out = format!(
            "{} {} {} {}\n",
            self.geom.d, self.geom.half_width, self.geom.transverse_len, mode
        );
        let e1 = self.geom.e1_len();
        for row in 0..self.geom.transverse_len as usize {
            for j in 0..e1 {
                let s = self.get(row * e1 + j);
                out.push(char::from(b'0' + s));
            }
            out.push('\n');
        }
        out
    }

    pub fn read_snapshot(text: &str) -> Result<Self, SnapshotError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| SnapshotError::BadHeader("empty input".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(SnapshotError::BadHeader(header.into()));
        }
        let parse = |s: &str| -> Result<u32, SnapshotError> {
            s.parse()
                .map_err(|_| SnapshotError::BadHeader(header.into()))
        };
        let d = parse(fields[0])? as u8;
        let n = parse(fields[1])?;
        let l = parse(fields[2])?;
        let mode = match fields[3] {
            "reservoirs" => BoundaryMode::Reservoirs,
            "torus" => BoundaryMode::Torus,
            other => return Err(SnapshotError::BadHeader(other.into())),
        };
        let geom = Geometry::new(d, n, l, mode)?;
        let mut cfg = Self::empty(geom);
        let mut site = 0usize;
        for line in lines {
            for ch in line.trim().chars() {
                if site >= geom.site_count() {
                    return Err(SnapshotError::BadLength {
                        got: site + 1,
                        want: geom.site_count(),
                    });
                }
                let digit = ch
                    .to_digit(4)
                    .ok_or(SnapshotError::BadDigit(ch))? as State;
                cfg.set(site, digit);
                site += 1;
            }
        }
        if site != geom.site_count() {
            return Err(SnapshotError::BadLength {
                got: site,
                want: geom.site_count(),
            });
        }
        Ok(cfg)
    }
}

impl std::fmt::Debug for Configuration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Configuration({:?}, ", self.geom)?;
        for site in 0..self.geom.site_count() {
            write!(f, "{}", self.get(site))?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_are_inverse() {
        for xi_bit in 0..2u8 {
            for om in 0..2u8 {
                let s = encode(xi_bit, om);
                assert_eq!(decode(s), (xi_bit, om));
            }
        }
        for s in 0..4u8 {
            let (a, b) = decode(s);
            assert_eq!(encode(a, b), s);
        }
        assert_eq!(encode(0, 0), 0);
        assert_eq!(encode(1, 0), 1);
        assert_eq!(encode(0, 1), 2);
        assert_eq!(encode(1, 1), 3);
    }

    #[test]
    fn strip_neighbors_truncate_at_edges() {
        let g = Geometry::strip_1d(2);
        let right_edge = g.site_at(2, 0);
        let nbrs = g.neighbors(right_edge);
        assert_eq!(nbrs.as_slice(), &[g.site_at(1, 0)]);
        let center = g.site_at(0, 0);
        assert_eq!(
            g.neighbors(center).as_slice(),
            &[g.site_at(-1, 0), g.site_at(1, 0)]
        );
    }

    #[test]
    fn transverse_wrap() {
        let g = Geometry::new(2, 0, 4, BoundaryMode::Reservoirs).unwrap();
        let s = g.site_at(0, 3);
        let nbrs = g.neighbors(s);
        assert!(nbrs.contains(&g.site_at(0, 0)));
        assert!(nbrs.contains(&g.site_at(0, 2)));
    }

    #[test]
    fn neighbors_symmetric_with_multiplicity() {
        let geoms = [
            Geometry::strip_1d(3),
            Geometry::torus_1d(2),
            Geometry::new(2, 1, 4, BoundaryMode::Reservoirs).unwrap(),
            Geometry::new(2, 0, 2, BoundaryMode::Reservoirs).unwrap(),
            Geometry::new(2, 2, 3, BoundaryMode::Torus).unwrap(),
        ];
        for g in geoms {
            for x in 0..g.site_count() {
                for &y in g.neighbors(x).iter() {
                    let back = g.neighbors(y).iter().filter(|&&z| z == x).count();
                    let forth = g.neighbors(x).iter().filter(|&&z| z == y).count();
                    assert_eq!(back, forth, "asymmetric bond {x}-{y} in {g:?}");
                }
            }
        }
    }

    #[test]
    fn site_count_and_boundary_sets() {
        let g = Geometry::new(2, 3, 5, BoundaryMode::Reservoirs).unwrap();
        assert_eq!(g.site_count(), 7 * 5);
        let boundary = g.boundary_sites();
        assert_eq!(boundary.len(), 2 * 5);
        for s in boundary {
            let (x1, _) = g.coords(s);
            assert_eq!(x1.unsigned_abs(), 3);
        }
        let torus = Geometry::new(2, 3, 5, BoundaryMode::Torus).unwrap();
        assert!(torus.boundary_sites().is_empty());
    }

    #[test]
    fn occupancy_partition() {
        let g = Geometry::strip_1d(2);
        assert_eq!(Configuration::empty(g).occupancy_counts(), [5, 0, 0, 0]);
        assert_eq!(
            Configuration::constant(g, 3).occupancy_counts(),
            [0, 0, 0, 5]
        );
        let cfg = Configuration::from_states(g, &[0, 1, 2, 3, 1]);
        let counts = cfg.occupancy_counts();
        assert_eq!(counts.iter().sum::<usize>(), g.site_count());
        assert_eq!(counts, [1, 2, 1, 1]);
    }

    #[test]
    fn bonds_match_neighbor_multiplicity() {
        let geoms = [
            Geometry::strip_1d(2),
            Geometry::torus_1d(1),
            Geometry::new(2, 0, 2, BoundaryMode::Reservoirs).unwrap(),
            Geometry::new(2, 1, 4, BoundaryMode::Torus).unwrap(),
        ];
        for g in geoms {
            let bonds = g.bonds();
            for x in 0..g.site_count() {
                let incident = bonds
                    .iter()
                    .filter(|b| b.tail == x || b.head == x)
                    .count();
                assert_eq!(incident, g.neighbors(x).len(), "site {x} in {g:?}");
            }
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let g = Geometry::new(2, 1, 3, BoundaryMode::Torus).unwrap();
        let states: Vec<State> = (0..g.site_count()).map(|i| (i % 4) as State).collect();
        let cfg = Configuration::from_states(g, &states);
        let text = cfg.write_snapshot();
        let back = Configuration::read_snapshot(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn snapshot_rejects_garbage() {
        assert!(Configuration::read_snapshot("").is_err());
        assert!(Configuration::read_snapshot("1 2 1 reservoirs\n0123").is_err());
        assert!(Configuration::read_snapshot("1 1 1 reservoirs\n045").is_err());
    }
}
