//! Local-equilibrium sampling, empirical fields, and current ledgers.
//!
//! The empirical density field assigns mass `N^-d` to each particle of
//! type `i` at its rescaled position `x/N`; pairings against test
//! functions are plain sums over the lattice. Currents are integer
//! ledgers: `W` counts net signed crossings per bond and type, `Q` counts
//! net creations per site and type, kept separately for bulk reaction
//! events and reservoir events. Their martingale compensators are
//! integrated exactly (the integrands are piecewise constant between
//! events).

use crate::kmc::{Event, Observer};
use crate::lattice::{Bond, Configuration, Geometry, Site, State};
use crate::params::ModelParams;
use crate::rates;
use crate::rng::StreamSeed;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("profile value {rho:?} at u1 = {u1} is outside the simplex")]
    OutsideSimplex { u1: f64, rho: [f64; 3] },
    #[error("unknown name {0:?}")]
    UnknownName(String),
    #[error("event inconsistent with configuration: {0}")]
    InconsistentEvent(String),
}

// ---------------------------------------------------------------------------
// Density profiles
// ---------------------------------------------------------------------------

/// Closed-form initial density profiles, identified by name in config
/// files.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Zero,
    Constant([f64; 3]),
    /// `rho_i(u1) = base_i + amp_i (1 - u1^2)`: smooth, simplex-valued for
    /// the default coefficients, and equal to `base` on the faces.
    ParabolicBlend { base: [f64; 3], amp: [f64; 3] },
}

impl Profile {
    /// The smooth simplex profile used by the convergence experiments;
    /// matches the standard bath densities `(0.3, 0.2, 0.1)` on the faces.
    pub fn default_blend() -> Self {
        Profile::ParabolicBlend {
            base: [0.3, 0.2, 0.1],
            amp: [0.2, -0.1, 0.05],
        }
    }

    pub fn eval(&self, u1: f64) -> [f64; 3] {
        match self {
            Profile::Zero => [0.0; 3],
            Profile::Constant(rho) => *rho,
            Profile::ParabolicBlend { base, amp } => {
                let s = 1.0 - u1 * u1;
                [base[0] + amp[0] * s, base[1] + amp[1] * s, base[2] + amp[2] * s]
            }
        }
    }

    /// Parse `zero`, `constant:a,b,c`, or `parabolic-blend`.
    pub fn parse(name: &str) -> Result<Self, MeasureError> {
        if name == "zero" {
            return Ok(Profile::Zero);
        }
        if name == "parabolic-blend" {
            return Ok(Profile::default_blend());
        }
        if let Some(rest) = name.strip_prefix("constant:") {
            let parts: Vec<f64> = rest
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| MeasureError::UnknownName(name.into()))?;
            if parts.len() == 3 {
                return Ok(Profile::Constant([parts[0], parts[1], parts[2]]));
            }
        }
        Err(MeasureError::UnknownName(name.into()))
    }
}

/// Sample the product measure with marginals `P(state = i) = rho_i(x/N)`;
/// sites are independent.
pub fn sample_product_measure(
    profile: &Profile,
    geom: Geometry,
    seed: StreamSeed,
) -> Result<Configuration, MeasureError> {
    let mut rng = seed.rng();
    let mut cfg = Configuration::empty(geom);
    for site in 0..geom.site_count() {
        let u1 = geom.macro_coord(site)[0];
        let rho = profile.eval(u1);
        let sum: f64 = rho.iter().sum();
        if rho.iter().any(|&p| p < 0.0) || sum > 1.0 + 1e-12 {
            return Err(MeasureError::OutsideSimplex { u1, rho });
        }
        let u = rng.gen::<f64>();
        let state: State = if u < rho[0] {
            1
        } else if u < rho[0] + rho[1] {
            2
        } else if u < sum {
            3
        } else {
            0
        };
        cfg.set(site, state);
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// Spatial factor of a test function; all shapes depend on `u1` only and
/// extend constantly across the transverse torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Zero,
    One,
    /// Dirichlet mode `sin(n pi (u1 + 1) / 2)`, L2-normalized on `[-1, 1]`.
    SineMode(u32),
    /// `1 - u1^2`.
    Parabola,
    /// `exp(1 - 1/(1 - (u1/a)^2))` inside `|u1| < a`, zero outside.
    Bump { radius: f64 },
}

impl Shape {
    pub fn eval(&self, u1: f64) -> f64 {
        match *self {
            Shape::Zero => 0.0,
            Shape::One => 1.0,
            Shape::SineMode(n) => (n as f64 * std::f64::consts::FRAC_PI_2 * (u1 + 1.0)).sin(),
            Shape::Parabola => 1.0 - u1 * u1,
            Shape::Bump { radius } => {
                let v = u1 / radius;
                if v.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - v * v)).exp()
                }
            }
        }
    }

    pub fn d1(&self, u1: f64) -> f64 {
        match *self {
            Shape::Zero | Shape::One => 0.0,
            Shape::SineMode(n) => {
                let k = n as f64 * std::f64::consts::FRAC_PI_2;
                k * (k * (u1 + 1.0)).cos()
            }
            Shape::Parabola => -2.0 * u1,
            Shape::Bump { radius } => {
                let v = u1 / radius;
                if v.abs() >= 1.0 {
                    0.0
                } else {
                    let den = 1.0 - v * v;
                    self.eval(u1) * (-2.0 * v / (den * den)) / radius
                }
            }
        }
    }

    pub fn laplacian(&self, u1: f64) -> f64 {
        match *self {
            Shape::Zero | Shape::One => 0.0,
            Shape::SineMode(n) => {
                let k = n as f64 * std::f64::consts::FRAC_PI_2;
                -k * k * self.eval(u1)
            }
            Shape::Parabola => -2.0,
            Shape::Bump { radius } => {
                let v = u1 / radius;
                if v.abs() >= 1.0 {
                    0.0
                } else {
                    let den = 1.0 - v * v;
                    let w1 = -2.0 * v / (den * den);
                    let w2 = -2.0 * (1.0 + 3.0 * v * v) / (den * den * den);
                    self.eval(u1) * (w1 * w1 + w2) / (radius * radius)
                }
            }
        }
    }

    /// Vanishes on the faces `u1 = +-1`.
    pub fn boundary_vanishing(&self) -> bool {
        matches!(
            self,
            Shape::Zero | Shape::SineMode(_) | Shape::Parabola | Shape::Bump { .. }
        )
    }

    /// Half-width of the declared support.
    pub fn support_radius(&self) -> f64 {
        match *self {
            Shape::Zero => 0.0,
            Shape::Bump { radius } => radius,
            _ => 1.0,
        }
    }
}

/// Separable time factor of a test function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeFactor {
    One,
    /// `exp(-k t)`.
    ExpDecay(f64),
}

impl TimeFactor {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeFactor::One => 1.0,
            TimeFactor::ExpDecay(k) => (-k * t).exp(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            TimeFactor::One => 0.0,
            TimeFactor::ExpDecay(k) => -k * (-k * t).exp(),
        }
    }
}

/// Closed-form test function `G(t, u) = T(t) g(u1)` with analytic time and
/// space derivatives. Evaluations outside the declared support are zero by
/// construction of the shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub shape: Shape,
    pub time: TimeFactor,
}

impl TestFunction {
    pub fn of(shape: Shape) -> Self {
        Self {
            shape,
            time: TimeFactor::One,
        }
    }

    pub fn zero() -> Self {
        Self::of(Shape::Zero)
    }

    pub fn eval(&self, t: f64, u1: f64) -> f64 {
        self.time.value(t) * self.shape.eval(u1)
    }

    pub fn dt(&self, t: f64, u1: f64) -> f64 {
        self.time.derivative(t) * self.shape.eval(u1)
    }

    pub fn d1(&self, t: f64, u1: f64) -> f64 {
        self.time.value(t) * self.shape.d1(u1)
    }

    pub fn laplacian(&self, t: f64, u1: f64) -> f64 {
        self.time.value(t) * self.shape.laplacian(u1)
    }

    pub fn boundary_vanishing(&self) -> bool {
        self.shape.boundary_vanishing()
    }

    /// Parse `zero`, `one`, `sine:n`, `parabola`, or `bump:radius`.
    pub fn parse(name: &str) -> Result<Self, MeasureError> {
        let shape = match name {
            "zero" => Shape::Zero,
            "one" => Shape::One,
            "parabola" => Shape::Parabola,
            _ => {
                if let Some(n) = name.strip_prefix("sine:") {
                    Shape::SineMode(
                        n.parse()
                            .map_err(|_| MeasureError::UnknownName(name.into()))?,
                    )
                } else if let Some(a) = name.strip_prefix("bump:") {
                    Shape::Bump {
                        radius: a
                            .parse()
                            .map_err(|_| MeasureError::UnknownName(name.into()))?,
                    }
                } else {
                    return Err(MeasureError::UnknownName(name.into()));
                }
            }
        };
        Ok(Self::of(shape))
    }
}

/// One test function per particle type.
pub type TestTriple = [TestFunction; 3];

/// Triple with a single active component.
pub fn single_type_triple(i: usize, f: TestFunction) -> TestTriple {
    let mut triple = [TestFunction::zero(); 3];
    triple[i] = f;
    triple
}

/// Empirical pairing `N^-d sum_i sum_x G_i(x/N) eta_i(x)`.
pub fn empirical_pairing(cfg: &Configuration, g: &TestTriple, t: f64) -> f64 {
    let geom = cfg.geometry();
    let scale = geom.scale().powi(geom.d() as i32);
    let mut acc = 0.0;
    for site in 0..geom.site_count() {
        let state = cfg.get(site);
        if state == 0 {
            continue;
        }
        let u1 = geom.macro_coord(site)[0];
        acc += g[state as usize - 1].eval(t, u1);
    }
    acc / scale
}

// ---------------------------------------------------------------------------
// Current ledgers
// ---------------------------------------------------------------------------

/// Integer current bookkeeping. `w[bond][i]` is the net number of type-i
/// crossings in the bond's canonical direction; `q_bulk[x][i]` and
/// `q_boundary[x][i]` are net type-i creations at `x` from reaction and
/// reservoir events. For every site and type the discrete continuity
/// identity
///
/// `eta_i,t(x) - eta_i,0(x) = (W inflow - W outflow) + Q_bulk + Q_boundary`
///
/// holds exactly at all times.
#[derive(Debug, Clone)]
pub struct CurrentLedger {
    geom: Geometry,
    bonds: Vec<Bond>,
    incoming: Vec<Vec<u32>>,
    outgoing: Vec<Vec<u32>>,
    pub w: Vec<[i64; 3]>,
    pub q_bulk: Vec<[i64; 3]>,
    pub q_boundary: Vec<[i64; 3]>,
}

impl CurrentLedger {
    pub fn new(geom: Geometry) -> Self {
        let bonds = geom.bonds();
        let sites = geom.site_count();
        let mut incoming = vec![Vec::new(); sites];
        let mut outgoing = vec![Vec::new(); sites];
        for (b, bond) in bonds.iter().enumerate() {
            incoming[bond.head].push(b as u32);
            outgoing[bond.tail].push(b as u32);
        }
        Self {
            geom,
            w: vec![[0; 3]; bonds.len()],
            q_bulk: vec![[0; 3]; sites],
            q_boundary: vec![[0; 3]; sites],
            bonds,
            incoming,
            outgoing,
        }
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// Fold one event into the ledgers. The configuration must be in its
    /// pre-event state.
    pub fn apply(&mut self, event: &Event, before: &Configuration) -> Result<(), MeasureError> {
        match *event {
            Event::Exchange { bond, tail, head } => {
                let b = self
                    .bonds
                    .get(bond)
                    .ok_or_else(|| MeasureError::InconsistentEvent(format!("bond {bond}")))?;
                if b.tail != tail || b.head != head {
                    return Err(MeasureError::InconsistentEvent(format!(
                        "bond {bond} endpoints"
                    )));
                }
                let a = before.get(tail);
                let c = before.get(head);
                if a == c {
                    return Err(MeasureError::InconsistentEvent(
                        "exchange of equal states".into(),
                    ));
                }
                // The tail state crosses forward, the head state back.
                if a != 0 {
                    self.w[bond][a as usize - 1] += 1;
                }
                if c != 0 {
                    self.w[bond][c as usize - 1] -= 1;
                }
            }
            Event::Reaction { site, from, to } | Event::Boundary { site, from, to } => {
                if before.get(site) != from || from == to {
                    return Err(MeasureError::InconsistentEvent(format!(
                        "flip at site {site}"
                    )));
                }
                let q = match event {
                    Event::Reaction { .. } => &mut self.q_bulk,
                    _ => &mut self.q_boundary,
                };
                if from != 0 {
                    q[site][from as usize - 1] -= 1;
                }
                if to != 0 {
                    q[site][to as usize - 1] += 1;
                }
            }
        }
        Ok(())
    }

    /// Continuity defect at one site: max over types of the absolute
    /// difference between the occupation change and the ledger flows.
    pub fn continuity_defect_at(
        &self,
        site: Site,
        init: &Configuration,
        now: &Configuration,
    ) -> i64 {
        let mut worst = 0i64;
        for i in 1..=3u8 {
            let mut flow = 0i64;
            for &b in &self.incoming[site] {
                flow += self.w[b as usize][i as usize - 1];
            }
            for &b in &self.outgoing[site] {
                flow -= self.w[b as usize][i as usize - 1];
            }
            flow += self.q_bulk[site][i as usize - 1] + self.q_boundary[site][i as usize - 1];
            let change = (now.get(site) == i) as i64 - (init.get(site) == i) as i64;
            worst = worst.max((change - flow).abs());
        }
        worst
    }

    /// Largest continuity defect over the whole lattice (zero when the
    /// ledgers are consistent).
    pub fn continuity_defect(&self, init: &Configuration, now: &Configuration) -> i64 {
        (0..self.geom.site_count())
            .map(|s| self.continuity_defect_at(s, init, now))
            .max()
            .unwrap_or(0)
    }

    /// Conservative-current pairing
    /// `N^-(d+1) sum_i sum_bonds W(bond, i) G_i(x_tail / N)`, with the test
    /// triple read as the e1 component of a vector field (transverse
    /// components zero), so transverse bonds do not contribute.
    pub fn current_pairing(&self, g: &TestTriple, t: f64) -> f64 {
        let geom = &self.geom;
        let scale = geom.scale().powi(geom.d() as i32 + 1);
        let mut acc = 0.0;
        for (b, bond) in self.bonds.iter().enumerate() {
            if bond.dir != 0 {
                continue;
            }
            let u1 = geom.macro_coord(bond.tail)[0];
            for i in 0..3 {
                let w = self.w[b][i];
                if w != 0 {
                    acc += w as f64 * g[i].eval(t, u1);
                }
            }
        }
        acc / scale
    }

    /// Non-conservative pairing `N^-d sum_i sum_x Q(x, i) H_i(x/N)` over
    /// the bulk ledger (reservoir events are booked separately).
    pub fn q_pairing(&self, h: &TestTriple, t: f64) -> f64 {
        let geom = &self.geom;
        let scale = geom.scale().powi(geom.d() as i32);
        let mut acc = 0.0;
        for site in 0..geom.site_count() {
            let u1 = geom.macro_coord(site)[0];
            for i in 0..3 {
                let q = self.q_bulk[site][i];
                if q != 0 {
                    acc += q as f64 * h[i].eval(t, u1);
                }
            }
        }
        acc / scale
    }
}

impl Observer for CurrentLedger {
    fn on_event(&mut self, _t: f64, event: &Event, before: &Configuration) {
        self.apply(event, before).expect("ledger saw an impossible event");
    }
}

// ---------------------------------------------------------------------------
// Compensators
// ---------------------------------------------------------------------------

/// Exact compensator and quadratic-variation integrals for the tracked
/// bond currents and bulk creation counts. Integrands are piecewise
/// constant between events, so each event settles the elapsed interval in
/// closed form. Intended for small systems where every bond and site is
/// tracked.
#[derive(Debug, Clone)]
pub struct CompensatorTracker {
    params: ModelParams,
    geom: Geometry,
    bonds: Vec<Bond>,
    shadow: Configuration,
    last_t: f64,
    pub w_comp: Vec<[f64; 3]>,
    pub w_qvar: Vec<[f64; 3]>,
    pub q_comp: Vec<[f64; 3]>,
    pub q_qvar: Vec<[f64; 3]>,
}

impl CompensatorTracker {
    pub fn new(init: &Configuration, params: ModelParams) -> Self {
        let geom = *init.geometry();
        let bonds = geom.bonds();
        Self {
            params,
            geom,
            shadow: init.clone(),
            last_t: 0.0,
            w_comp: vec![[0.0; 3]; bonds.len()],
            w_qvar: vec![[0.0; 3]; bonds.len()],
            q_comp: vec![[0.0; 3]; geom.site_count()],
            q_qvar: vec![[0.0; 3]; geom.site_count()],
            bonds,
        }
    }

    fn settle(&mut self, t: f64) {
        let dt = t - self.last_t;
        if dt <= 0.0 {
            self.last_t = t;
            return;
        }
        let sq = self.params.sq_scale();
        if self.params.exchange_on {
            for (b, bond) in self.bonds.iter().enumerate() {
                let a = self.shadow.get(bond.tail);
                let c = self.shadow.get(bond.head);
                for i in 1..=3u8 {
                    let ta = (a == i) as i8;
                    let tc = (c == i) as i8;
                    if ta == tc {
                        continue;
                    }
                    self.w_comp[b][i as usize - 1] += sq * (ta - tc) as f64 * dt;
                    self.w_qvar[b][i as usize - 1] += sq * dt;
                }
            }
        }
        if self.params.reaction_on {
            for site in 0..self.geom.site_count() {
                let state = self.shadow.get(site);
                let beta = rates::beta(&self.shadow, site, &self.params);
                let r = self.params.r;
                let e = |i: State| (state == i) as i8 as f64;
                let drift = [
                    beta * e(0) + e(3) - (r + 1.0) * e(1),
                    r * e(0) + e(3) - beta * e(2) - e(2),
                    beta * e(2) + r * e(1) - 2.0 * e(3),
                ];
                let act = [
                    beta * e(0) + e(3) + (r + 1.0) * e(1),
                    r * e(0) + e(3) + beta * e(2) + e(2),
                    beta * e(2) + r * e(1) + 2.0 * e(3),
                ];
                for i in 0..3 {
                    self.q_comp[site][i] += drift[i] * dt;
                    self.q_qvar[site][i] += act[i] * dt;
                }
            }
        }
        self.last_t = t;
    }
}

impl Observer for CompensatorTracker {
    fn on_event(&mut self, t: f64, event: &Event, _before: &Configuration) {
        self.settle(t);
        match *event {
            Event::Exchange { tail, head, .. } => self.shadow.swap(tail, head),
            Event::Reaction { site, to, .. } | Event::Boundary { site, to, .. } => {
                self.shadow.set(site, to)
            }
        }
    }

    fn finalize(&mut self, t_end: f64, final_config: &Configuration) {
        self.settle(t_end);
        debug_assert!(self.shadow == *final_config);
    }
}

/// CSV dump of the ledgers with their compensators:
/// `bond_or_site,type,W_or_Q,compensator,quad_variation`.
pub fn ledger_csv(ledger: &CurrentLedger, comp: Option<&CompensatorTracker>) -> String {
    let mut out = String::from("bond_or_site,type,W_or_Q,compensator,quad_variation\n");
    for (b, bond) in ledger.bonds().iter().enumerate() {
        for i in 0..3 {
            let (c, v) = comp.map_or((0.0, 0.0), |c| (c.w_comp[b][i], c.w_qvar[b][i]));
            out.push_str(&format!(
                "bond:{}-{},{},{},{:.12e},{:.12e}\n",
                bond.tail,
                bond.head,
                i + 1,
                ledger.w[b][i],
                c,
                v
            ));
        }
    }
    for site in 0..ledger.q_bulk.len() {
        for i in 0..3 {
            let (c, v) = comp.map_or((0.0, 0.0), |c| (c.q_comp[site][i], c.q_qvar[site][i]));
            out.push_str(&format!(
                "site:{},{},{},{:.12e},{:.12e}\n",
                site,
                i + 1,
                ledger.q_bulk[site][i],
                c,
                v
            ));
        }
    }
    out
}
