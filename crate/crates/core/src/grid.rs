//! Network data model, the JSON case format, per-unit conversion and
//! contingency enumeration.
//!
//! A [`Grid`] is immutable once built. Element collections keep file order;
//! everything downstream addresses elements by their position in those
//! vectors, while the `id` fields carry the user-facing numbering.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("malformed case document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid {element}: {message}")]
    Validation { element: String, message: String },
    #[error("system base must be positive, got {0} MVA")]
    NonPositiveBase(f64),
    #[error("grid is already in {0} units")]
    UnitMismatch(Units),
    #[error("contingency {id} references missing {kind} {element}")]
    MissingElement {
        id: usize,
        kind: ContingencyKind,
        element: usize,
    },
}

fn invalid(element: impl Into<String>, message: impl Into<String>) -> GridError {
    GridError::Validation {
        element: element.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    /// MW, MVAr, currency/MWh.
    Physical,
    /// Per-unit on the system base.
    PerUnit,
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Units::Physical => "physical",
            Units::PerUnit => "per-unit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    /// Shunt conductance, drawn power at 1 p.u. voltage.
    #[serde(rename = "gFS")]
    pub g_fs: f64,
    #[serde(rename = "bFS")]
    pub b_fs: f64,
    pub vmin_base: f64,
    pub vmax_base: f64,
    pub vmin_ctg: f64,
    pub vmax_ctg: f64,
    pub p_load: f64,
    pub q_load: f64,
}

/// One piece of a convex piecewise-linear cost: from `breakpoint` upward the
/// cost grows at `marginal` until the next segment starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSegment {
    pub breakpoint: f64,
    pub marginal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    pub alpha: f64,
    pub cost: Vec<CostSegment>,
}

impl Generator {
    /// Cost at each segment start, with the first breakpoint costing zero.
    pub fn segment_offsets(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cost.len());
        let mut acc = 0.0;
        for (k, seg) in self.cost.iter().enumerate() {
            if k > 0 {
                let prev = &self.cost[k - 1];
                acc += prev.marginal * (seg.breakpoint - prev.breakpoint);
            }
            out.push(acc);
        }
        out
    }

    /// Evaluate the piecewise-linear cost (the max of its affine pieces).
    pub fn cost_at(&self, p: f64) -> f64 {
        self.segment_offsets()
            .iter()
            .zip(&self.cost)
            .map(|(c0, seg)| c0 + seg.marginal * (p - seg.breakpoint))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Line {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    pub bch: f64,
    pub rating_base: f64,
    pub rating_ctg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Transformer {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    #[serde(rename = "gM")]
    pub g_m: f64,
    #[serde(rename = "bM")]
    pub b_m: f64,
    pub tau: f64,
    pub tr: f64,
    pub ti: f64,
    pub tm: f64,
    pub rating_base: f64,
    pub rating_ctg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContingencyKind {
    GeneratorOutage,
    LineOutage,
    TransformerOutage,
}

impl fmt::Display for ContingencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContingencyKind::GeneratorOutage => "generator",
            ContingencyKind::LineOutage => "line",
            ContingencyKind::TransformerOutage => "transformer",
        })
    }
}

/// Contingency as written in a case file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContingencySpec {
    pub id: usize,
    pub kind: ContingencyKind,
    /// Id of the outaged element.
    pub element: usize,
}

/// A resolved contingency. Active sets hold positions into the grid's
/// element vectors, in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub id: usize,
    pub kind: ContingencyKind,
    pub element: usize,
    pub participating: Vec<usize>,
    pub active_gens: Vec<usize>,
    pub active_lines: Vec<usize>,
    pub active_xfmrs: Vec<usize>,
}

impl Contingency {
    pub fn spec(&self) -> ContingencySpec {
        ContingencySpec {
            id: self.id,
            kind: self.kind,
            element: self.element,
        }
    }

    /// Position of the outaged generator, if this is a generator outage.
    pub fn outaged_gen(&self, grid: &Grid) -> Option<usize> {
        match self.kind {
            ContingencyKind::GeneratorOutage => grid.gen_position(self.element),
            _ => None,
        }
    }
}

/// On-disk case document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CaseFile {
    #[serde(rename = "baseMVA")]
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub lines: Vec<Line>,
    #[serde(default)]
    pub transformers: Vec<Transformer>,
    #[serde(default)]
    pub contingencies: Vec<ContingencySpec>,
}

/// How to pick the contingency set.
#[derive(Debug, Clone, PartialEq)]
pub enum ContingencySelection {
    Explicit(Vec<ContingencySpec>),
    AllBranches,
    AllGenerators,
    AllN1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub base_mva: f64,
    pub units: Units,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
    pub transformers: Vec<Transformer>,
    pub contingencies: Vec<Contingency>,
    bus_pos: BTreeMap<usize, usize>,
    gen_pos: BTreeMap<usize, usize>,
    line_pos: BTreeMap<usize, usize>,
    xfmr_pos: BTreeMap<usize, usize>,
}

/// Parse a case document and return the validated grid in per-unit.
pub fn parse_case(bytes: &[u8]) -> Result<Grid, GridError> {
    let file: CaseFile = serde_json::from_slice(bytes)?;
    Grid::from_case(file, Units::Physical)?.to_per_unit()
}

fn index_ids<T>(
    items: &[T],
    kind: &str,
    id: impl Fn(&T) -> usize,
) -> Result<BTreeMap<usize, usize>, GridError> {
    let mut map = BTreeMap::new();
    for (pos, item) in items.iter().enumerate() {
        if map.insert(id(item), pos).is_some() {
            return Err(invalid(format!("{kind} {}", id(item)), "duplicate id"));
        }
    }
    Ok(map)
}

fn check_finite(element: &str, values: &[f64]) -> Result<(), GridError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(element, "non-finite numeric field"))
    }
}

impl Grid {
    /// Build and validate a grid from file data expressed in `units`.
    pub fn from_case(file: CaseFile, units: Units) -> Result<Grid, GridError> {
        let bus_pos = index_ids(&file.buses, "bus", |b| b.id)?;
        let gen_pos = index_ids(&file.generators, "generator", |g| g.id)?;
        let line_pos = index_ids(&file.lines, "line", |l| l.id)?;
        let xfmr_pos = index_ids(&file.transformers, "transformer", |t| t.id)?;
        let mut grid = Grid {
            base_mva: file.base_mva,
            units,
            buses: file.buses,
            generators: file.generators,
            lines: file.lines,
            transformers: file.transformers,
            contingencies: Vec::new(),
            bus_pos,
            gen_pos,
            line_pos,
            xfmr_pos,
        };
        grid.validate()?;
        grid.contingencies =
            grid.enumerate_contingencies(&ContingencySelection::Explicit(file.contingencies))?;
        Ok(grid)
    }

    fn validate(&self) -> Result<(), GridError> {
        if !(self.base_mva > 0.0) {
            return Err(GridError::NonPositiveBase(self.base_mva));
        }
        if self.buses.is_empty() {
            return Err(invalid("grid", "no buses"));
        }
        for b in &self.buses {
            let name = format!("bus {}", b.id);
            check_finite(
                &name,
                &[
                    b.g_fs, b.b_fs, b.vmin_base, b.vmax_base, b.vmin_ctg, b.vmax_ctg, b.p_load,
                    b.q_load,
                ],
            )?;
            if !(b.vmin_base > 0.0 && b.vmin_base <= b.vmax_base) {
                return Err(invalid(name, "base voltage bounds must satisfy 0 < vminBase <= vmaxBase"));
            }
            if !(b.vmin_ctg > 0.0 && b.vmin_ctg <= b.vmax_ctg) {
                return Err(invalid(name, "contingency voltage bounds must satisfy 0 < vminCtg <= vmaxCtg"));
            }
            if b.vmin_ctg > b.vmin_base || b.vmax_ctg < b.vmax_base {
                return Err(invalid(name, "contingency voltage bounds are tighter than base bounds"));
            }
        }
        let mut gen_buses = BTreeSet::new();
        for g in &self.generators {
            let name = format!("generator {}", g.id);
            check_finite(&name, &[g.pmin, g.pmax, g.qmin, g.qmax, g.alpha])?;
            if !self.bus_pos.contains_key(&g.bus) {
                return Err(invalid(name, format!("connects to missing bus {}", g.bus)));
            }
            if !gen_buses.insert(g.bus) {
                return Err(invalid(name, format!("bus {} already hosts a generator", g.bus)));
            }
            if g.pmin > g.pmax {
                return Err(invalid(name, "pmin exceeds pmax"));
            }
            if g.qmin > g.qmax {
                return Err(invalid(name, "qmin exceeds qmax"));
            }
            if g.alpha < 0.0 {
                return Err(invalid(name, "negative participation factor"));
            }
            if g.cost.is_empty() {
                return Err(invalid(name, "empty cost curve"));
            }
            for seg in &g.cost {
                check_finite(&name, &[seg.breakpoint, seg.marginal])?;
            }
            for w in g.cost.windows(2) {
                if w[1].breakpoint <= w[0].breakpoint {
                    return Err(invalid(name, "cost breakpoints must be strictly increasing"));
                }
                if w[1].marginal < w[0].marginal {
                    return Err(invalid(name, "cost marginals must be nondecreasing"));
                }
            }
        }
        for l in &self.lines {
            let name = format!("line {}", l.id);
            check_finite(&name, &[l.g, l.b, l.bch, l.rating_base, l.rating_ctg])?;
            self.check_branch(&name, l.from, l.to, l.rating_base, l.rating_ctg)?;
        }
        for t in &self.transformers {
            let name = format!("transformer {}", t.id);
            check_finite(
                &name,
                &[t.g, t.b, t.g_m, t.b_m, t.tau, t.tr, t.ti, t.tm, t.rating_base, t.rating_ctg],
            )?;
            self.check_branch(&name, t.from, t.to, t.rating_base, t.rating_ctg)?;
            if !(t.tm > 0.0) {
                return Err(invalid(name, "tap magnitude must be positive"));
            }
            if (t.tm * t.tm - (t.tr * t.tr + t.ti * t.ti)).abs() > 1e-9 {
                return Err(invalid(name, "tm² must equal tr² + ti²"));
            }
        }
        Ok(())
    }

    fn check_branch(
        &self,
        name: &str,
        from: usize,
        to: usize,
        rating_base: f64,
        rating_ctg: f64,
    ) -> Result<(), GridError> {
        for bus in [from, to] {
            if !self.bus_pos.contains_key(&bus) {
                return Err(invalid(name, format!("connects to missing bus {bus}")));
            }
        }
        if from == to {
            return Err(invalid(name, "from and to buses coincide"));
        }
        if !(rating_base > 0.0) {
            return Err(invalid(name, "rating must be positive"));
        }
        if rating_base > rating_ctg {
            return Err(invalid(name, "base rating exceeds contingency rating"));
        }
        Ok(())
    }

    pub fn bus_position(&self, id: usize) -> Option<usize> {
        self.bus_pos.get(&id).copied()
    }

    pub fn gen_position(&self, id: usize) -> Option<usize> {
        self.gen_pos.get(&id).copied()
    }

    pub fn line_position(&self, id: usize) -> Option<usize> {
        self.line_pos.get(&id).copied()
    }

    pub fn xfmr_position(&self, id: usize) -> Option<usize> {
        self.xfmr_pos.get(&id).copied()
    }

    /// Bus position of generator `g` (a position, not an id).
    pub fn gen_bus(&self, g: usize) -> usize {
        self.bus_pos[&self.generators[g].bus]
    }

    pub fn line_ends(&self, e: usize) -> (usize, usize) {
        let l = &self.lines[e];
        (self.bus_pos[&l.from], self.bus_pos[&l.to])
    }

    pub fn xfmr_ends(&self, f: usize) -> (usize, usize) {
        let t = &self.transformers[f];
        (self.bus_pos[&t.from], self.bus_pos[&t.to])
    }

    /// Number of loads (buses with nonzero demand).
    pub fn num_loads(&self) -> usize {
        self.buses
            .iter()
            .filter(|b| b.p_load != 0.0 || b.q_load != 0.0)
            .count()
    }

    /// Serialize back to the case format (physical units).
    pub fn to_case_file(&self) -> CaseFile {
        let g = match self.units {
            Units::Physical => self.clone(),
            Units::PerUnit => self.from_per_unit().expect("per-unit grid converts back"),
        };
        CaseFile {
            base_mva: g.base_mva,
            buses: g.buses,
            generators: g.generators,
            lines: g.lines,
            transformers: g.transformers,
            contingencies: g.contingencies.iter().map(Contingency::spec).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_case_file()).expect("case serializes")
    }

    fn rescale(&self, target: Units) -> Result<Grid, GridError> {
        if !(self.base_mva > 0.0) {
            return Err(GridError::NonPositiveBase(self.base_mva));
        }
        if self.units == target {
            return Err(GridError::UnitMismatch(target));
        }
        let f = match target {
            Units::PerUnit => 1.0 / self.base_mva,
            Units::Physical => self.base_mva,
        };
        let mut g = self.clone();
        g.units = target;
        for b in &mut g.buses {
            b.g_fs *= f;
            b.b_fs *= f;
            b.p_load *= f;
            b.q_load *= f;
        }
        for gen in &mut g.generators {
            gen.pmin *= f;
            gen.pmax *= f;
            gen.qmin *= f;
            gen.qmax *= f;
            for seg in &mut gen.cost {
                seg.breakpoint *= f;
                seg.marginal /= f;
            }
        }
        for l in &mut g.lines {
            l.rating_base *= f;
            l.rating_ctg *= f;
        }
        for t in &mut g.transformers {
            t.rating_base *= f;
            t.rating_ctg *= f;
        }
        Ok(g)
    }

    /// Divide all power quantities by the system base.
    pub fn to_per_unit(&self) -> Result<Grid, GridError> {
        self.rescale(Units::PerUnit)
    }

    pub fn from_per_unit(&self) -> Result<Grid, GridError> {
        self.rescale(Units::Physical)
    }

    /// Resolve a contingency selection against this grid. Enumerated
    /// contingencies are numbered from 1: lines, then transformers, then
    /// generators.
    pub fn enumerate_contingencies(
        &self,
        selection: &ContingencySelection,
    ) -> Result<Vec<Contingency>, GridError> {
        let lines = || {
            self.lines
                .iter()
                .map(|l| (ContingencyKind::LineOutage, l.id))
                .chain(
                    self.transformers
                        .iter()
                        .map(|t| (ContingencyKind::TransformerOutage, t.id)),
                )
        };
        let gens = || {
            self.generators
                .iter()
                .map(|g| (ContingencyKind::GeneratorOutage, g.id))
        };
        let specs: Vec<ContingencySpec> = match selection {
            ContingencySelection::Explicit(list) => list.clone(),
            ContingencySelection::AllBranches => number(lines()),
            ContingencySelection::AllGenerators => number(gens()),
            ContingencySelection::AllN1 => number(lines().chain(gens())),
        };
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(specs.len());
        for spec in specs {
            if !seen.insert(spec.id) {
                return Err(invalid(format!("contingency {}", spec.id), "duplicate id"));
            }
            out.push(self.resolve(spec)?);
        }
        Ok(out)
    }

    fn resolve(&self, spec: ContingencySpec) -> Result<Contingency, GridError> {
        let missing = || GridError::MissingElement {
            id: spec.id,
            kind: spec.kind,
            element: spec.element,
        };
        let mut active_gens: Vec<usize> = (0..self.generators.len()).collect();
        let mut active_lines: Vec<usize> = (0..self.lines.len()).collect();
        let mut active_xfmrs: Vec<usize> = (0..self.transformers.len()).collect();
        match spec.kind {
            ContingencyKind::GeneratorOutage => {
                let pos = self.gen_position(spec.element).ok_or_else(missing)?;
                active_gens.retain(|&g| g != pos);
            }
            ContingencyKind::LineOutage => {
                let pos = self.line_position(spec.element).ok_or_else(missing)?;
                active_lines.retain(|&e| e != pos);
            }
            ContingencyKind::TransformerOutage => {
                let pos = self.xfmr_position(spec.element).ok_or_else(missing)?;
                active_xfmrs.retain(|&f| f != pos);
            }
        }
        let participating = active_gens
            .iter()
            .copied()
            .filter(|&g| self.generators[g].alpha > 0.0)
            .collect();
        Ok(Contingency {
            id: spec.id,
            kind: spec.kind,
            element: spec.element,
            participating,
            active_gens,
            active_lines,
            active_xfmrs,
        })
    }

    fn connected(&self, lines: &[usize], xfmrs: &[usize]) -> bool {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for &e in lines {
            let (i, j) = self.line_ends(e);
            adj[i].push(j);
            adj[j].push(i);
        }
        for &f in xfmrs {
            let (i, j) = self.xfmr_ends(f);
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }

    /// Whether the base network is a single connected component.
    pub fn is_connected(&self) -> bool {
        let lines: Vec<usize> = (0..self.lines.len()).collect();
        let xfmrs: Vec<usize> = (0..self.transformers.len()).collect();
        self.connected(&lines, &xfmrs)
    }
}

fn number(items: impl Iterator<Item = (ContingencyKind, usize)>) -> Vec<ContingencySpec> {
    items
        .enumerate()
        .map(|(k, (kind, element))| ContingencySpec {
            id: k + 1,
            kind,
            element,
        })
        .collect()
}

/// Returns `true` when the outage splits the network into islands.
pub fn validate_connectivity(grid: &Grid, ctg: &Contingency) -> bool {
    !grid.connected(&ctg.active_lines, &ctg.active_xfmrs)
}
