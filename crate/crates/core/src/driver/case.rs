//! Case files: line-oriented `section.key = value` text.
//!
//! ```text
//! # loam column
//! grid.cells = 1 1 100
//! grid.spacing = 0.01 0.01 0.01
//! soil.loam.ks = 2.89e-6
//! soil.loam.alpha = 3.6
//! soil.loam.n = 1.56
//! soil.loam.theta_s = 0.43
//! soil.loam.theta_r = 0.078
//! initial.type = uniform
//! initial.head = -1
//! patch.top.face = z+
//! patch.top.type = dirichlet
//! patch.top.head = 0.01
//! ...
//! ```
//!
//! See `docs/case-format.md` for the full grammar. Times are in seconds,
//! lengths in metres, fluxes in m/s (positive outward).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::constitutive::{SoilModel, DEFAULT_STORATIVITY};
use crate::error::{Diagnostic, Error, Result};
use crate::grid::{Axis, Face, GridSpec};
use crate::stepper::{PicardConfig, TimeControlConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CaseGrid {
    pub cells: [usize; 3],
    pub spacing: [f64; 3],
    /// Lower corner of the domain.
    pub origin: [f64; 3],
    pub vertical: Axis,
    pub slope_deg: [f64; 2],
}

impl CaseGrid {
    pub fn to_spec(&self) -> GridSpec {
        let centre = std::array::from_fn(|a| self.origin[a] + 0.5 * self.spacing[a]);
        GridSpec::new(self.cells, self.spacing)
            .with_origin(centre)
            .with_vertical(self.vertical)
            .with_slope(self.slope_deg)
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().product()
    }
}

/// Cells a soil zone applies to.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    All,
    /// Half-open index ranges along x, y, z.
    Box([(usize, usize); 3]),
    /// Cells whose centre elevation lies in `[lo, hi)`.
    Layer { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoilZone {
    pub name: String,
    pub model: SoilModel<f64>,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomField {
    /// Zone whose Ks is replaced cell by cell.
    pub zone: String,
    pub geo_mean: f64,
    pub sigma_log10: f64,
    pub clamp: (f64, f64),
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Uniform { head: f64 },
    /// `h = z_wt - z` for a water table at elevation `z_wt`.
    Hydrostatic { water_table: f64 },
    /// One head value per line, cells in lexicographic order (x fastest).
    File { path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditionSpec {
    Dirichlet { head: f64 },
    Flux { q: f64 },
    FreeDrainage,
    /// CSV path (relative to the case file) and optional coverage end.
    FluxSeries { path: String, end: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec {
    pub name: String,
    /// `None` only for the default patch.
    pub face: Option<Face>,
    pub region: Option<[(usize, usize); 2]>,
    pub condition: ConditionSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Numerics {
    pub picard: PicardConfig<f64>,
    pub time: TimeControlConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub interval: Option<f64>,
    pub snapshots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub cell: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub grid: CaseGrid,
    pub soils: Vec<SoilZone>,
    pub random: Option<RandomField>,
    pub initial: InitialCondition,
    pub patches: Vec<PatchSpec>,
    /// Patch receiving every exterior face not claimed by another patch.
    pub default_patch: Option<String>,
    pub numerics: Numerics,
    pub t_end: f64,
    pub output: OutputSpec,
    pub probes: Vec<Probe>,
}

impl CaseSpec {
    /// Output times implied by `output.interval` (always including 0).
    pub fn output_times(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        if let Some(dt) = self.output.interval {
            let mut k = 1u64;
            loop {
                let t = k as f64 * dt;
                if t >= self.t_end {
                    break;
                }
                out.push(t);
                k += 1;
            }
        }
        out.push(self.t_end);
        out
    }
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Reader {
    entries: BTreeMap<String, Entry>,
    diags: Vec<Diagnostic>,
}

impl Reader {
    fn new(text: &str) -> Self {
        let mut entries = BTreeMap::new();
        let mut diags = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                diags.push(Diagnostic { line, message: format!("expected `section.key = value`, found `{content}`") });
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !k.contains('.') || k.split('.').any(|p| p.is_empty() || p.contains(char::is_whitespace)) {
                diags.push(Diagnostic { line, message: format!("malformed key `{k}`") });
                continue;
            }
            if v.is_empty() {
                diags.push(Diagnostic { line, message: format!("key `{k}` has no value") });
                continue;
            }
            if let Some(prev) = entries.get(k) {
                let prev: &Entry = prev;
                diags.push(Diagnostic { line, message: format!("duplicate key `{k}` (first set on line {})", prev.line) });
                continue;
            }
            entries.insert(k.to_string(), Entry { value: v.to_string(), line, used: false });
        }
        Reader { entries, diags }
    }

    fn error(&mut self, line: usize, message: impl Into<String>) {
        self.diags.push(Diagnostic { line, message: message.into() });
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        let e = self.entries.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    /// Names `x` of keys `prefix.x.*`, ordered by first appearance.
    fn groups(&self, prefix: &str) -> Vec<(String, usize)> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (k, e) in &self.entries {
            if let Some(rest) = k.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) {
                if let Some((name, _)) = rest.split_once('.') {
                    let l = seen.entry(name.to_string()).or_insert(e.line);
                    *l = (*l).min(e.line);
                }
            }
        }
        let mut v: Vec<(String, usize)> = seen.into_iter().collect();
        v.sort_by_key(|(_, l)| *l);
        v
    }

    fn parse<V: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<V> {
        let (v, line) = self.raw(key)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                self.error(line, format!("`{key}` must be {what}, found `{v}`"));
                None
            }
        }
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        let v: f64 = self.parse(key, "a number")?;
        if !v.is_finite() {
            let l = self.line_of(key);
            self.error(l, format!("`{key}` must be finite"));
            return None;
        }
        Some(v)
    }

    fn required_number(&mut self, key: &str) -> Option<f64> {
        if !self.entries.contains_key(key) {
            self.error(0, format!("missing mandatory key `{key}`"));
            return None;
        }
        self.number(key)
    }

    fn positive(&mut self, key: &str, required: bool) -> Option<f64> {
        let v = if required { self.required_number(key)? } else { self.number(key)? };
        if v <= 0.0 {
            let l = self.line_of(key);
            self.error(l, format!("`{key}` must be positive (got {v})"));
            return None;
        }
        Some(v)
    }

    fn list<V: std::str::FromStr>(&mut self, key: &str, n: usize, what: &str) -> Option<Vec<V>> {
        let (v, line) = self.raw(key)?;
        let parts: Vec<&str> = v.split_whitespace().collect();
        let parsed: Option<Vec<V>> = parts.iter().map(|p| p.parse().ok()).collect();
        match parsed {
            Some(x) if x.len() == n => Some(x),
            _ => {
                self.error(line, format!("`{key}` must be {n} {what}, found `{v}`"));
                None
            }
        }
    }

    fn finish(mut self) -> Vec<Diagnostic> {
        for (k, e) in &self.entries {
            if !e.used {
                self.diags.push(Diagnostic { line: e.line, message: format!("unknown key `{k}`") });
            }
        }
        self.diags.sort_by_key(|d| d.line);
        self.diags
    }
}

fn parse_region(r: &mut Reader, key: &str) -> Option<Region> {
    let (v, line) = r.raw(key)?;
    let toks: Vec<&str> = v.split_whitespace().collect();
    match toks.as_slice() {
        ["all"] => Some(Region::All),
        ["box", rest @ ..] if rest.len() == 6 => {
            let n: Option<Vec<usize>> = rest.iter().map(|t| t.parse().ok()).collect();
            match n {
                Some(n) if n[0] < n[1] && n[2] < n[3] && n[4] < n[5] => {
                    Some(Region::Box([(n[0], n[1]), (n[2], n[3]), (n[4], n[5])]))
                }
                _ => {
                    r.error(line, format!("`{key}`: box needs six indices i0 i1 j0 j1 k0 k1 with i0 < i1 etc."));
                    None
                }
            }
        }
        ["layer", lo, hi] => match (lo.parse::<f64>(), hi.parse::<f64>()) {
            (Ok(lo), Ok(hi)) if lo < hi => Some(Region::Layer { lo, hi }),
            _ => {
                r.error(line, format!("`{key}`: layer needs two elevations lo < hi"));
                None
            }
        },
        _ => {
            r.error(line, format!("`{key}` must be `all`, `box i0 i1 j0 j1 k0 k1` or `layer lo hi`, found `{v}`"));
            None
        }
    }
}

fn parse_soil(r: &mut Reader, name: &str, line: usize) -> Option<SoilZone> {
    let k = |s: &str| format!("soil.{name}.{s}");
    let model = r.raw(&k("model")).map(|(v, l)| (v, l));
    let is_gardner = match &model {
        None => false,
        Some((v, _)) if v == "van_genuchten" => false,
        Some((v, _)) if v == "gardner" => true,
        Some((v, l)) => {
            r.error(*l, format!("unknown soil model `{v}` (expected van_genuchten or gardner)"));
            return None;
        }
    };
    let ks = r.required_number(&k("ks"));
    let alpha = r.required_number(&k("alpha"));
    let n = if is_gardner { None } else { r.required_number(&k("n")) };
    let theta_s = r.required_number(&k("theta_s"));
    let theta_r = r.required_number(&k("theta_r"));
    let s = if r.entries.contains_key(&k("storativity")) {
        r.number(&k("storativity"))
    } else {
        Some(DEFAULT_STORATIVITY)
    };
    let region = if r.entries.contains_key(&k("region")) { parse_region(r, &k("region")) } else { Some(Region::All) };
    let (ks, alpha, theta_s, theta_r, s, region) = (ks?, alpha?, theta_s?, theta_r?, s?, region?);
    let model = if is_gardner {
        SoilModel::gardner(ks, alpha, theta_s, theta_r, s)
    } else {
        SoilModel::van_genuchten(ks, alpha, n?, theta_s, theta_r, s)
    };
    match model {
        Ok(model) => Some(SoilZone { name: name.to_string(), model, region }),
        Err(e) => {
            r.error(line, format!("soil `{name}`: {e}"));
            None
        }
    }
}

fn parse_condition(r: &mut Reader, name: &str) -> Option<ConditionSpec> {
    let k = |s: &str| format!("patch.{name}.{s}");
    let Some((ty, line)) = r.raw(&k("type")) else {
        r.error(r.groups("patch").iter().find(|g| g.0 == name).map_or(0, |g| g.1), format!("patch `{name}` has no `type`"));
        return None;
    };
    match ty.as_str() {
        "dirichlet" => Some(ConditionSpec::Dirichlet { head: r.required_number(&k("head"))? }),
        "flux" => Some(ConditionSpec::Flux { q: r.required_number(&k("flux"))? }),
        "free_drainage" => Some(ConditionSpec::FreeDrainage),
        "flux_series" => {
            let Some((path, _)) = r.raw(&k("series")) else {
                r.error(line, format!("patch `{name}` of type flux_series needs `series`"));
                return None;
            };
            let end = if r.entries.contains_key(&k("series_end")) { Some(r.positive(&k("series_end"), true)?) } else { None };
            Some(ConditionSpec::FluxSeries { path, end })
        }
        other => {
            r.error(line, format!("unknown patch type `{other}` (expected dirichlet, flux, free_drainage or flux_series)"));
            None
        }
    }
}

fn parse_bool(r: &mut Reader, key: &str) -> Option<bool> {
    r.parse(key, "true or false")
}

/// Parses and validates a case file, reporting every problem found.
pub fn parse_case(text: &str) -> Result<CaseSpec> {
    let mut r = Reader::new(text);

    let cells = r.list::<usize>("grid.cells", 3, "positive integers");
    if !r.entries.contains_key("grid.cells") {
        r.error(0, "missing mandatory key `grid.cells`");
    }
    let spacing = r.list::<f64>("grid.spacing", 3, "numbers");
    if !r.entries.contains_key("grid.spacing") {
        r.error(0, "missing mandatory key `grid.spacing`");
    }
    let origin = if r.entries.contains_key("grid.origin") { r.list::<f64>("grid.origin", 3, "numbers") } else { Some(vec![0.0; 3]) };
    let vertical = match r.raw("grid.vertical") {
        None => Some(Axis::Z),
        Some((v, l)) => match v.as_str() {
            "x" => Some(Axis::X),
            "y" => Some(Axis::Y),
            "z" => Some(Axis::Z),
            _ => {
                r.error(l, format!("`grid.vertical` must be x, y or z, found `{v}`"));
                None
            }
        },
    };
    let slope = if r.entries.contains_key("grid.slope") { r.list::<f64>("grid.slope", 2, "angles in degrees") } else { Some(vec![0.0; 2]) };
    let grid = match (cells, spacing, origin, vertical, slope) {
        (Some(c), Some(s), Some(o), Some(v), Some(sl)) => {
            let g = CaseGrid {
                cells: [c[0], c[1], c[2]],
                spacing: [s[0], s[1], s[2]],
                origin: [o[0], o[1], o[2]],
                vertical: v,
                slope_deg: [sl[0], sl[1]],
            };
            match crate::grid::build_grid(&g.to_spec()) {
                Ok(_) => Some(g),
                Err(e) => {
                    let l = r.line_of("grid.cells");
                    r.error(l, e.to_string());
                    None
                }
            }
        }
        _ => None,
    };

    let mut soils = Vec::new();
    let soil_groups = r.groups("soil");
    if soil_groups.is_empty() {
        r.error(0, "at least one `soil.<name>` zone is required");
    }
    for (name, line) in &soil_groups {
        if let Some(z) = parse_soil(&mut r, name, *line) {
            soils.push(z);
        }
    }

    let random = if r.entries.keys().any(|k| k.starts_with("random.")) {
        let zone = r.raw("random.zone").map(|v| v.0);
        if zone.is_none() {
            r.error(r.entries.iter().find(|(k, _)| k.starts_with("random.")).map_or(0, |e| e.1.line), "`random.zone` is required");
        }
        let geo_mean = if r.entries.contains_key("random.geo_mean") { r.positive("random.geo_mean", true) } else { Some(1e-6) };
        let sigma = if r.entries.contains_key("random.sigma_log10") { r.number("random.sigma_log10") } else { Some(1.17) };
        let clamp = if r.entries.contains_key("random.clamp") { r.list::<f64>("random.clamp", 2, "numbers") } else { Some(vec![1e-10, 1e-3]) };
        let seed = if r.entries.contains_key("random.seed") { r.parse::<u64>("random.seed", "an unsigned integer") } else { Some(0) };
        match (zone, geo_mean, sigma, clamp, seed) {
            (Some(zone), Some(geo_mean), Some(sigma_log10), Some(c), Some(seed)) => {
                let l = r.line_of("random.zone");
                if !soils.iter().any(|s| s.name == zone) && soil_groups.iter().all(|g| g.0 != zone) {
                    r.error(l, format!("`random.zone` names unknown soil zone `{zone}`"));
                }
                if sigma_log10 < 0.0 || !(c[0] > 0.0 && c[0] < c[1]) {
                    r.error(l, "random field needs sigma_log10 >= 0 and 0 < clamp min < clamp max");
                }
                Some(RandomField { zone, geo_mean, sigma_log10, clamp: (c[0], c[1]), seed })
            }
            _ => None,
        }
    } else {
        None
    };

    let initial = match r.raw("initial.type") {
        None => {
            r.error(0, "missing mandatory key `initial.type`");
            None
        }
        Some((t, l)) => match t.as_str() {
            "uniform" => r.required_number("initial.head").map(|head| InitialCondition::Uniform { head }),
            "hydrostatic" => r.required_number("initial.water_table").map(|water_table| InitialCondition::Hydrostatic { water_table }),
            "file" => match r.raw("initial.file") {
                Some((path, _)) => Some(InitialCondition::File { path }),
                None => {
                    r.error(l, "initial.type = file needs `initial.file`");
                    None
                }
            },
            other => {
                r.error(l, format!("unknown initial condition `{other}` (expected uniform, hydrostatic or file)"));
                None
            }
        },
    };

    let default_patch = r.raw("boundary.default");
    let mut patches = Vec::new();
    let patch_groups = r.groups("patch");
    for (name, line) in &patch_groups {
        let is_default = default_patch.as_ref().is_some_and(|d| &d.0 == name);
        let face = match r.raw(&format!("patch.{name}.face")) {
            Some((v, l)) => match Face::parse(&v) {
                Some(f) => Some(f),
                None => {
                    r.error(l, format!("patch `{name}`: unknown face `{v}` (expected x-, x+, y-, y+, z- or z+)"));
                    continue;
                }
            },
            None if is_default => None,
            None => {
                r.error(*line, format!("patch `{name}` needs a `face`"));
                continue;
            }
        };
        let key = format!("patch.{name}.region");
        let region = if r.entries.contains_key(&key) {
            match r.list::<usize>(&key, 4, "indices a0 a1 b0 b1") {
                Some(v) if v[0] < v[1] && v[2] < v[3] => Some([(v[0], v[1]), (v[2], v[3])]),
                Some(_) => {
                    let l = r.line_of(&key);
                    r.error(l, format!("patch `{name}`: region ranges must be non-empty"));
                    continue;
                }
                None => continue,
            }
        } else {
            None
        };
        if let Some(condition) = parse_condition(&mut r, name) {
            patches.push(PatchSpec { name: name.clone(), face, region, condition });
        }
    }
    if let Some((d, l)) = &default_patch {
        if patch_groups.iter().all(|g| &g.0 != d) {
            r.error(*l, format!("`boundary.default` names unknown patch `{d}`"));
        }
    }

    let tol_picard = r.positive("numerics.tol_picard", true);
    let pcg_tol = r.positive("numerics.pcg_tol", true);
    let dt_init = r.positive("numerics.dt_init", true);
    let dt_max = r.positive("numerics.dt_max", true);
    let numerics = match (tol_picard, pcg_tol, dt_init, dt_max) {
        (Some(tp), Some(tl), Some(di), Some(dm)) => {
            let mut picard = PicardConfig::new(tp, tl);
            let mut time = TimeControlConfig::new(di, dm);
            macro_rules! opt {
                ($key:literal, $field:expr, $parse:expr) => {
                    if r.entries.contains_key($key) {
                        if let Some(v) = $parse {
                            $field = v;
                        }
                    }
                };
            }
            opt!("numerics.dt_min", time.dt_min, r.positive("numerics.dt_min", true));
            opt!("numerics.grow_factor", time.grow_factor, r.positive("numerics.grow_factor", true));
            opt!("numerics.quick_iters", time.quick_iters, r.parse::<usize>("numerics.quick_iters", "an integer"));
            opt!("numerics.streak", time.streak_needed, r.parse::<usize>("numerics.streak", "an integer"));
            opt!("numerics.max_picard_iters", picard.max_picard_iters, r.parse::<usize>("numerics.max_picard_iters", "an integer"));
            opt!("numerics.pcg_max_iter", picard.pcg_max_iter, r.parse::<usize>("numerics.pcg_max_iter", "an integer"));
            let l = r.line_of("numerics.tol_picard");
            if let Err(e) = picard.validate() {
                r.error(l, e.to_string());
            }
            if let Err(e) = time.validate() {
                let l = r.line_of("numerics.dt_init");
                r.error(l, e.to_string());
            }
            Some(Numerics { picard, time })
        }
        _ => None,
    };

    let t_end = r.positive("time.end", true);
    let interval = if r.entries.contains_key("output.interval") { r.positive("output.interval", true).map(Some) } else { Some(None) };
    let snapshots = if r.entries.contains_key("output.snapshots") { parse_bool(&mut r, "output.snapshots") } else { Some(true) };

    let mut probes = Vec::new();
    for (name, _) in r.groups("probe") {
        if let Some(c) = r.list::<usize>(&format!("probe.{name}.cell"), 3, "cell indices") {
            probes.push(Probe { name, cell: [c[0], c[1], c[2]] });
        } else if !r.entries.contains_key(&format!("probe.{name}.cell")) {
            let l = r.groups("probe").iter().find(|g| g.0 == name).map_or(0, |g| g.1);
            r.error(l, format!("probe `{name}` needs `cell = i j k`"));
        }
    }

    // cross-field checks
    if let Some(g) = &grid {
        check_zones(&mut r, g, &soils, &soil_groups);
        for p in &probes {
            if (0..3).any(|a| p.cell[a] >= g.cells[a]) {
                let l = r.line_of(&format!("probe.{}.cell", p.name));
                r.error(l, format!("probe `{}` cell {:?} lies outside the {:?} grid", p.name, p.cell, g.cells));
            }
        }
        check_patches(&mut r, g, &patches, default_patch.as_ref().map(|d| d.0.as_str()));
    }

    let diags = r.finish();
    if !diags.is_empty() {
        return Err(Error::Parse(diags));
    }
    Ok(CaseSpec {
        grid: grid.unwrap(),
        soils,
        random,
        initial: initial.unwrap(),
        patches,
        default_patch: default_patch.map(|d| d.0),
        numerics: numerics.unwrap(),
        t_end: t_end.unwrap(),
        output: OutputSpec { interval: interval.unwrap(), snapshots: snapshots.unwrap() },
        probes,
    })
}

/// Soil zone index of every cell, or the list of coverage problems.
pub fn zone_of_cells(grid: &CaseGrid, soils: &[SoilZone]) -> std::result::Result<Vec<usize>, Vec<String>> {
    let g = match crate::grid::build_grid(&grid.to_spec()) {
        Ok(g) => g,
        Err(e) => return Err(vec![e.to_string()]),
    };
    let mut zone = vec![usize::MAX; g.n_cells()];
    let mut problems = Vec::new();
    for c in 0..g.n_cells() {
        let ijk = g.ijk(c);
        for (zi, z) in soils.iter().enumerate() {
            let inside = match &z.region {
                Region::All => true,
                Region::Box(b) => (0..3).all(|a| ijk[a] >= b[a].0 && ijk[a] < b[a].1),
                Region::Layer { lo, hi } => {
                    let e = g.elevation(c);
                    e >= *lo && e < *hi
                }
            };
            if inside {
                if zone[c] != usize::MAX {
                    problems.push(format!("soil zones `{}` and `{}` overlap at cell {ijk:?}", soils[zone[c]].name, z.name));
                    return Err(problems);
                }
                zone[c] = zi;
            }
        }
        if zone[c] == usize::MAX {
            problems.push(format!("cell {ijk:?} is not covered by any soil zone"));
            return Err(problems);
        }
    }
    Ok(zone)
}

fn check_zones(r: &mut Reader, grid: &CaseGrid, soils: &[SoilZone], groups: &[(String, usize)]) {
    if soils.len() != groups.len() {
        return;
    }
    for z in soils {
        if let Region::Box(b) = &z.region {
            if (0..3).any(|a| b[a].1 > grid.cells[a]) {
                let l = r.line_of(&format!("soil.{}.region", z.name));
                r.error(l, format!("soil `{}` box exceeds the grid", z.name));
                return;
            }
        }
    }
    if let Err(p) = zone_of_cells(grid, soils) {
        for m in p {
            r.error(groups.first().map_or(0, |g| g.1), m);
        }
    }
}

fn check_patches(r: &mut Reader, grid: &CaseGrid, patches: &[PatchSpec], default: Option<&str>) {
    let g = crate::grid::build_grid(&grid.to_spec()).expect("grid validated");
    for p in patches {
        if matches!(p.condition, ConditionSpec::FreeDrainage) {
            if let Some(f) = p.face {
                if g.downward_component(f) <= 0.0 {
                    let l = r.line_of(&format!("patch.{}.type", p.name));
                    r.error(l, format!("patch `{}`: free drainage needs a face pointing downward, {} does not", p.name, f.name()));
                }
            }
        }
    }
    if let Err(e) = build_patch_set(&g, patches, default) {
        let l = patches.first().map_or(0, |p| r.line_of(&format!("patch.{}.face", p.name)));
        r.error(l, e.to_string());
    }
}

/// Builds the patch lookup for `patches`, in declaration order.
pub fn build_patch_set(grid: &crate::grid::Grid, patches: &[PatchSpec], default: Option<&str>) -> Result<crate::grid::PatchSet> {
    use crate::grid::Patch;
    let list: Vec<Patch> = patches
        .iter()
        .map(|p| Patch { name: p.name.clone(), face: p.face.unwrap_or(Face::XMin), region: p.region })
        .collect();
    let fallback = default.and_then(|d| patches.iter().position(|p| p.name == d));
    crate::grid::PatchSet::new(grid, list, fallback)
}

fn fmt3<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Renders a spec in the case format; `parse_case(&render_case(s)) == s`.
pub fn render_case(s: &CaseSpec) -> String {
    let mut o = String::new();
    let g = &s.grid;
    let _ = writeln!(o, "grid.cells = {}", fmt3(&g.cells));
    let _ = writeln!(o, "grid.spacing = {}", fmt3(&g.spacing));
    let _ = writeln!(o, "grid.origin = {}", fmt3(&g.origin));
    let _ = writeln!(o, "grid.vertical = {}", g.vertical.name());
    let _ = writeln!(o, "grid.slope = {}", fmt3(&g.slope_deg));
    for z in &s.soils {
        let n = &z.name;
        match z.model {
            SoilModel::VanGenuchten { ks, alpha, n: nn, theta_s, theta_r, storativity } => {
                let _ = writeln!(o, "soil.{n}.model = van_genuchten");
                let _ = writeln!(o, "soil.{n}.ks = {ks}\nsoil.{n}.alpha = {alpha}\nsoil.{n}.n = {nn}");
                let _ = writeln!(o, "soil.{n}.theta_s = {theta_s}\nsoil.{n}.theta_r = {theta_r}\nsoil.{n}.storativity = {storativity}");
            }
            SoilModel::Gardner { ks, alpha, theta_s, theta_r, storativity } => {
                let _ = writeln!(o, "soil.{n}.model = gardner");
                let _ = writeln!(o, "soil.{n}.ks = {ks}\nsoil.{n}.alpha = {alpha}");
                let _ = writeln!(o, "soil.{n}.theta_s = {theta_s}\nsoil.{n}.theta_r = {theta_r}\nsoil.{n}.storativity = {storativity}");
            }
        }
        let region = match &z.region {
            Region::All => "all".to_string(),
            Region::Box(b) => format!("box {} {} {} {} {} {}", b[0].0, b[0].1, b[1].0, b[1].1, b[2].0, b[2].1),
            Region::Layer { lo, hi } => format!("layer {lo} {hi}"),
        };
        let _ = writeln!(o, "soil.{n}.region = {region}");
    }
    if let Some(rf) = &s.random {
        let _ = writeln!(o, "random.zone = {}\nrandom.geo_mean = {}\nrandom.sigma_log10 = {}", rf.zone, rf.geo_mean, rf.sigma_log10);
        let _ = writeln!(o, "random.clamp = {} {}\nrandom.seed = {}", rf.clamp.0, rf.clamp.1, rf.seed);
    }
    match &s.initial {
        InitialCondition::Uniform { head } => {
            let _ = writeln!(o, "initial.type = uniform\ninitial.head = {head}");
        }
        InitialCondition::Hydrostatic { water_table } => {
            let _ = writeln!(o, "initial.type = hydrostatic\ninitial.water_table = {water_table}");
        }
        InitialCondition::File { path } => {
            let _ = writeln!(o, "initial.type = file\ninitial.file = {path}");
        }
    }
    for p in &s.patches {
        let n = &p.name;
        if let Some(f) = p.face {
            let _ = writeln!(o, "patch.{n}.face = {}", f.name());
        }
        if let Some(r) = p.region {
            let _ = writeln!(o, "patch.{n}.region = {} {} {} {}", r[0].0, r[0].1, r[1].0, r[1].1);
        }
        match &p.condition {
            ConditionSpec::Dirichlet { head } => {
                let _ = writeln!(o, "patch.{n}.type = dirichlet\npatch.{n}.head = {head}");
            }
            ConditionSpec::Flux { q } => {
                let _ = writeln!(o, "patch.{n}.type = flux\npatch.{n}.flux = {q}");
            }
            ConditionSpec::FreeDrainage => {
                let _ = writeln!(o, "patch.{n}.type = free_drainage");
            }
            ConditionSpec::FluxSeries { path, end } => {
                let _ = writeln!(o, "patch.{n}.type = flux_series\npatch.{n}.series = {path}");
                if let Some(e) = end {
                    let _ = writeln!(o, "patch.{n}.series_end = {e}");
                }
            }
        }
    }
    if let Some(d) = &s.default_patch {
        let _ = writeln!(o, "boundary.default = {d}");
    }
    let (p, t) = (&s.numerics.picard, &s.numerics.time);
    let _ = writeln!(o, "numerics.tol_picard = {}\nnumerics.pcg_tol = {}", p.tol_picard, p.pcg_tol);
    let _ = writeln!(o, "numerics.max_picard_iters = {}\nnumerics.pcg_max_iter = {}", p.max_picard_iters, p.pcg_max_iter);
    let _ = writeln!(o, "numerics.dt_init = {}\nnumerics.dt_max = {}\nnumerics.dt_min = {}", t.dt_init, t.dt_max, t.dt_min);
    let _ = writeln!(o, "numerics.grow_factor = {}\nnumerics.quick_iters = {}\nnumerics.streak = {}", t.grow_factor, t.quick_iters, t.streak_needed);
    let _ = writeln!(o, "time.end = {}", s.t_end);
    if let Some(i) = s.output.interval {
        let _ = writeln!(o, "output.interval = {i}");
    }
    let _ = writeln!(o, "output.snapshots = {}", s.output.snapshots);
    for pr in &s.probes {
        let _ = writeln!(o, "probe.{}.cell = {}", pr.name, fmt3(&pr.cell));
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LOAM: &str = include_str!("../../cases/loam_column.case");
    const MONSOON: &str = include_str!("../../cases/monsoon_layers.case");
    const SLOPE: &str = include_str!("../../cases/slope.case");
    const STEEP: &str = include_str!("../../cases/steep_front.case");

    #[test]
    fn bundled_loam_case() {
        let c = parse_case(LOAM).unwrap();
        assert_eq!(c.grid.cells, [1, 1, 100]);
        assert_eq!(c.grid.spacing[2], 0.01);
        assert_eq!(c.soils.len(), 1);
        assert_eq!(c.soils[0].model, SoilModel::van_genuchten(2.89e-6, 3.6, 1.56, 0.43, 0.078, 1e-5).unwrap());
        assert_eq!(c.initial, InitialCondition::Uniform { head: -1.0 });
        assert_eq!(c.numerics.time.dt_init, 300.0);
        assert_eq!(c.numerics.time.dt_max, 3600.0);
        let top = c.patches.iter().find(|p| p.face == Some(Face::ZMax)).unwrap();
        assert_eq!(top.condition, ConditionSpec::Dirichlet { head: 0.01 });
        let bottom = c.patches.iter().find(|p| p.face == Some(Face::ZMin)).unwrap();
        assert_eq!(bottom.condition, ConditionSpec::FreeDrainage);
    }

    #[test]
    fn bundled_monsoon_case() {
        let c = parse_case(MONSOON).unwrap();
        let ks: Vec<f64> = c.soils.iter().map(|z| z.model.ks()).collect();
        assert_eq!(ks, vec![1e-3, 1e-5, 1e-6]);
        let expect = [(2.3, 1.2, 0.45, 0.08), (2.1, 2.4, 0.5, 0.2), (1.7, 1.9, 0.55, 0.15)];
        for (z, &(a, n, ts, tr)) in c.soils.iter().zip(&expect) {
            match z.model {
                SoilModel::VanGenuchten { alpha, n: nn, theta_s, theta_r, .. } => {
                    assert_eq!((alpha, nn, theta_s, theta_r), (a, n, ts, tr));
                }
                _ => panic!("expected van Genuchten"),
            }
        }
        assert!(zone_of_cells(&c.grid, &c.soils).is_ok());
    }

    fn expect_error(text: &str, needle: &str) -> Vec<Diagnostic> {
        match parse_case(text) {
            Err(Error::Parse(d)) => {
                assert!(d.iter().any(|d| d.message.contains(needle)), "no `{needle}` in {d:?}");
                d
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn theta_r_above_theta_s_is_rejected() {
        let bad = LOAM.replace("soil.loam.theta_r = 0.078", "soil.loam.theta_r = 0.5");
        let d = expect_error(&bad, "theta_r");
        assert!(d.iter().all(|d| d.line > 0));
    }

    #[test]
    fn diagnostics_carry_lines() {
        let bad = format!("{LOAM}\nnumerics.bogus = 3\npatch.nowhere.face = q+\n");
        let d = expect_error(&bad, "unknown key `numerics.bogus`");
        let n = LOAM.lines().count();
        assert!(d.iter().any(|d| d.line == n + 2));
        expect_error(&bad, "unknown face `q+`");
        expect_error(&LOAM.replace("time.end", "#time.end"), "missing mandatory key `time.end`");
        expect_error(&format!("{LOAM}\ngrid.cells = 1 1 1\n"), "duplicate key");
        expect_error(&format!("{LOAM}\njust words\n"), "expected `section.key = value`");
        expect_error(&LOAM.replace("boundary.default = sides", "boundary.default = ghost"), "unknown patch `ghost`");
    }

    #[test]
    fn overlapping_zones_are_rejected() {
        let extra = "soil.b.ks = 1e-6\nsoil.b.alpha = 1\nsoil.b.n = 2\nsoil.b.theta_s = 0.4\nsoil.b.theta_r = 0.1\nsoil.b.region = box 0 1 0 1 0 10\n";
        expect_error(&format!("{LOAM}{extra}"), "overlap");
        let gap = LOAM.replace("soil.loam.region = all", "soil.loam.region = box 0 1 0 1 0 99");
        expect_error(&gap, "not covered");
    }

    #[test]
    fn probe_outside_grid_fails_at_parse() {
        expect_error(&format!("{LOAM}probe.deep.cell = 0 0 100\n"), "outside");
    }

    #[test]
    fn free_drainage_must_point_down() {
        let bad = LOAM.replace("patch.top.type = dirichlet", "patch.top.type = free_drainage");
        expect_error(&bad, "free drainage");
    }

    #[test]
    fn output_times() {
        let mut c = parse_case(LOAM).unwrap();
        c.t_end = 10.0;
        c.output.interval = Some(3.0);
        assert_eq!(c.output_times(), vec![0.0, 3.0, 6.0, 9.0, 10.0]);
        c.output.interval = None;
        assert_eq!(c.output_times(), vec![0.0, 10.0]);
    }

    #[test]
    fn bundled_round_trip() {
        for text in [LOAM, MONSOON, SLOPE, STEEP] {
            let c = parse_case(text).unwrap();
            assert_eq!(parse_case(&render_case(&c)).unwrap(), c);
        }
    }

    #[test]
    fn bundled_3d_cases_resolve() {
        for (text, cells) in [(SLOPE, 128_000), (STEEP, 65_536)] {
            let c = parse_case(text).unwrap();
            let p = crate::driver::simulation::Problem::from_case(&c, std::path::Path::new(".")).unwrap();
            assert_eq!(p.n_cells(), cells);
        }
    }

    fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
        lo..hi
    }

    prop_compose! {
        fn arb_case()(nx in 1usize..5, ny in 1usize..5, nz in 2usize..9,
                      dx in finite(0.01, 5.0), dz in finite(0.001, 1.0),
                      ox in finite(-100.0, 100.0), slope in finite(-30.0, 30.0),
                      ks in finite(1e-9, 1e-3), alpha in finite(0.1, 10.0), n in finite(1.05, 3.0),
                      ts in finite(0.3, 0.6), tr in finite(0.0, 0.25), s in finite(0.0, 1e-3),
                      split in 1usize..8, gardner in any::<bool>(),
                      head in finite(-10.0, 1.0), q in finite(-1e-5, 1e-5),
                      tp in finite(1e-6, 1e-2), dt in finite(0.01, 100.0), tend in finite(1.0, 1e7),
                      random in any::<bool>(), seed in any::<u64>(), interval in proptest::option::of(finite(1.0, 1000.0)),
                      probe in any::<bool>())
            -> CaseSpec {
            let split = split.min(nz - 1);
            let m1 = SoilModel::van_genuchten(ks, alpha, n, ts, tr, s).unwrap();
            let m2 = if gardner { SoilModel::gardner(ks * 2.0, alpha, ts, tr, s).unwrap() } else { m1 };
            CaseSpec {
                grid: CaseGrid { cells: [nx, ny, nz], spacing: [dx, dx * 1.5, dz], origin: [ox, 0.0, -ox], vertical: Axis::Z, slope_deg: [slope, 0.0] },
                soils: vec![
                    SoilZone { name: "upper".into(), model: m1, region: Region::Box([(0, nx), (0, ny), (split, nz)]) },
                    SoilZone { name: "lower".into(), model: m2, region: Region::Box([(0, nx), (0, ny), (0, split)]) },
                ],
                random: random.then(|| RandomField { zone: "upper".into(), geo_mean: ks, sigma_log10: 0.5, clamp: (1e-10, 1e-3), seed }),
                initial: InitialCondition::Uniform { head },
                patches: vec![
                    PatchSpec { name: "top".into(), face: Some(Face::ZMax), region: None, condition: ConditionSpec::Flux { q } },
                    PatchSpec { name: "bottom".into(), face: Some(Face::ZMin), region: None, condition: ConditionSpec::Dirichlet { head } },
                    PatchSpec { name: "walls".into(), face: None, region: None, condition: ConditionSpec::Flux { q: 0.0 } },
                ],
                default_patch: Some("walls".into()),
                numerics: Numerics { picard: PicardConfig::new(tp, tp / 10.0), time: TimeControlConfig::new(dt, dt * 10.0) },
                t_end: tend,
                output: OutputSpec { interval, snapshots: !probe },
                probes: if probe { vec![Probe { name: "p".into(), cell: [0, 0, nz - 1] }] } else { vec![] },
            }
        }
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(c in arb_case()) {
            let text = render_case(&c);
            prop_assert_eq!(parse_case(&text).unwrap(), c);
        }
    }
}
