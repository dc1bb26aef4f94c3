//! Pipe graph, network description documents and the global state layout.
//!
//! The global state vector is ordered pipe-major, variable-second:
//! `[pipe 0: ρA (N₀) | pipe 0: ρuA (N₀) | pipe 1: ρA (N₁) | …]`.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Which end of a pipe a port refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    Start,
    End,
}

impl End {
    /// Outward normal of the pipe at this end: `-1` at the start, `+1` at the end.
    pub fn normal(self) -> f64 {
        match self {
            End::Start => -1.0,
            End::End => 1.0,
        }
    }
}

/// Reference to one end of one pipe (index into [`Network::pipes`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortRef {
    pub pipe: usize,
    pub end: End,
}

impl PortRef {
    pub fn new(pipe: usize, end: End) -> Self {
        Self { pipe, end }
    }

    pub fn normal(&self) -> f64 {
        self.end.normal()
    }

    /// Grid index of the port inside its pipe.
    pub fn point(&self, net: &Network) -> usize {
        match self.end {
            End::Start => 0,
            End::End => net.pipes[self.pipe].n_points - 1,
        }
    }
}

/// Boundary condition at an exterior pipe end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BoundaryKind {
    #[default]
    #[serde(rename = "non-reflecting")]
    NonReflecting,
    #[serde(rename = "closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipe {
    pub id: String,
    pub length: f64,
    pub n_points: usize,
    pub area: f64,
}

impl Pipe {
    pub fn dx(&self) -> f64 {
        self.length / (self.n_points - 1) as f64
    }

    /// Local coordinate of grid point `i`.
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    pub ports: Vec<PortRef>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExteriorPort {
    pub port: PortRef,
    pub bc: BoundaryKind,
}

/// Validated pipe network. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    sound_speed: f64,
    pipes: Vec<Pipe>,
    junctions: Vec<Junction>,
    exterior: Vec<ExteriorPort>,
    offsets: Vec<usize>,
}

/// Conserved variable selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    /// `ρA`, mass per length.
    RhoA,
    /// `ρuA`, mass flux.
    MA,
}

impl Network {
    pub fn new(
        sound_speed: f64,
        pipes: Vec<Pipe>,
        junctions: Vec<Junction>,
        exterior: Vec<ExteriorPort>,
    ) -> Result<Self> {
        let bad = |location: String, message: String| Error::Parse { location, message };
        if !(sound_speed > 0.0) || !sound_speed.is_finite() {
            return Err(bad(
                "sound_speed".into(),
                format!("must be positive, got {sound_speed}"),
            ));
        }
        let mut ids = HashSet::new();
        for (i, p) in pipes.iter().enumerate() {
            let loc = format!("pipes[{i}] ({})", p.id);
            if !ids.insert(p.id.as_str()) {
                return Err(bad(loc, "duplicate pipe id".into()));
            }
            if !(p.length > 0.0) || !p.length.is_finite() {
                return Err(bad(loc, format!("length must be positive, got {}", p.length)));
            }
            if p.n_points < 3 {
                return Err(bad(loc, format!("n_points must be >= 3, got {}", p.n_points)));
            }
            if !(p.area > 0.0) || !p.area.is_finite() {
                return Err(bad(loc, format!("area must be positive, got {}", p.area)));
            }
        }
        let mut jids = HashSet::new();
        let mut owner: HashMap<PortRef, String> = HashMap::new();
        for (k, j) in junctions.iter().enumerate() {
            let loc = format!("junctions[{k}] ({})", j.id);
            if !jids.insert(j.id.as_str()) {
                return Err(bad(loc, "duplicate junction id".into()));
            }
            if j.ports.len() < 2 {
                return Err(bad(loc, "a junction needs at least two ports".into()));
            }
            for port in &j.ports {
                if port.pipe >= pipes.len() {
                    return Err(bad(loc, format!("unknown pipe index {}", port.pipe)));
                }
                if let Some(prev) = owner.insert(*port, loc.clone()) {
                    return Err(bad(
                        loc,
                        format!(
                            "pipe {} {:?} is already attached to {prev}",
                            pipes[port.pipe].id, port.end
                        ),
                    ));
                }
            }
        }
        for (e, ext) in exterior.iter().enumerate() {
            let loc = format!("exterior[{e}]");
            if ext.port.pipe >= pipes.len() {
                return Err(bad(loc, format!("unknown pipe index {}", ext.port.pipe)));
            }
            if let Some(prev) = owner.insert(ext.port, loc.clone()) {
                return Err(bad(
                    loc,
                    format!(
                        "pipe {} {:?} is already attached to {prev}",
                        pipes[ext.port.pipe].id, ext.port.end
                    ),
                ));
            }
        }
        for (i, p) in pipes.iter().enumerate() {
            for end in [End::Start, End::End] {
                if !owner.contains_key(&PortRef::new(i, end)) {
                    return Err(bad(
                        format!("pipes[{i}] ({})", p.id),
                        format!("dangling pipe end {end:?}: not attached to a junction or exterior port"),
                    ));
                }
            }
        }
        let mut offsets = Vec::with_capacity(pipes.len() + 1);
        let mut acc = 0;
        for p in &pipes {
            offsets.push(acc);
            acc += 2 * p.n_points;
        }
        offsets.push(acc);
        Ok(Self {
            sound_speed,
            pipes,
            junctions,
            exterior,
            offsets,
        })
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    pub fn pipes(&self) -> &[Pipe] {
        &self.pipes
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn exterior(&self) -> &[ExteriorPort] {
        &self.exterior
    }

    pub fn pipe_index(&self, id: &str) -> Option<usize> {
        self.pipes.iter().position(|p| p.id == id)
    }

    /// Total number of degrees of freedom of a network state.
    pub fn dof(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Offset of pipe `p`'s block in the global vector.
    pub fn pipe_offset(&self, p: usize) -> usize {
        self.offsets[p]
    }

    /// Range of pipe `p`'s `ρA` and `ρuA` entries.
    pub(crate) fn pipe_range(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p]..self.offsets[p + 1]
    }

    pub(crate) fn index_unchecked(&self, pipe: usize, var: Variable, point: usize) -> usize {
        let n = self.pipes[pipe].n_points;
        self.offsets[pipe]
            + match var {
                Variable::RhoA => 0,
                Variable::MA => n,
            }
            + point
    }

    /// Flat index of `(pipe, variable, point)`; `point` is zero-based.
    pub fn global_index(&self, pipe: usize, var: Variable, point: usize) -> Result<usize> {
        let p = self
            .pipes
            .get(pipe)
            .ok_or_else(|| Error::invalid(format!("pipe index {pipe} out of range")))?;
        if point >= p.n_points {
            return Err(Error::invalid(format!(
                "point {point} out of range for pipe {} with {} points",
                p.id, p.n_points
            )));
        }
        Ok(self.index_unchecked(pipe, var, point))
    }

    /// Inverse of [`Network::global_index`].
    pub fn locate(&self, index: usize) -> Result<(usize, Variable, usize)> {
        if index >= self.dof() {
            return Err(Error::invalid(format!("flat index {index} out of range")));
        }
        let pipe = self.offsets.partition_point(|&o| o <= index) - 1;
        let local = index - self.offsets[pipe];
        let n = self.pipes[pipe].n_points;
        Ok(if local < n {
            (pipe, Variable::RhoA, local)
        } else {
            (pipe, Variable::MA, local - n)
        })
    }

    /// Flat index of the `ρA` / `ρuA` entry at a port.
    pub fn port_index(&self, port: PortRef, var: Variable) -> usize {
        self.index_unchecked(port.pipe, var, port.point(self))
    }

    /// Uniform state with density `rho` and velocity `u` in every pipe.
    pub fn uniform_state(&self, rho: f64, u: f64) -> NetworkState {
        let mut values = vec![0.0; self.dof()];
        for (p, pipe) in self.pipes.iter().enumerate() {
            let off = self.offsets[p];
            let n = pipe.n_points;
            values[off..off + n].fill(rho * pipe.area);
            values[off + n..off + 2 * n].fill(rho * u * pipe.area);
        }
        NetworkState { values }
    }

    pub fn to_document(&self) -> NetworkDocument {
        let pid = |p: usize| self.pipes[p].id.clone();
        NetworkDocument {
            sound_speed: self.sound_speed,
            pipes: self
                .pipes
                .iter()
                .map(|p| PipeDoc {
                    id: p.id.clone(),
                    length: p.length,
                    n_points: p.n_points,
                    area: p.area,
                })
                .collect(),
            junctions: self
                .junctions
                .iter()
                .map(|j| JunctionDoc {
                    id: j.id.clone(),
                    ports: j
                        .ports
                        .iter()
                        .map(|pr| PortDoc {
                            pipe: pid(pr.pipe),
                            end: pr.end,
                        })
                        .collect(),
                })
                .collect(),
            exterior: self
                .exterior
                .iter()
                .map(|e| ExteriorDoc {
                    pipe: pid(e.port.pipe),
                    end: e.port.end,
                    bc: e.bc,
                })
                .collect(),
        }
    }

    /// Serializes to the JSON network description format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("network document serializes")
    }
}

/// Serialized form of a network (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub sound_speed: f64,
    pub pipes: Vec<PipeDoc>,
    #[serde(default)]
    pub junctions: Vec<JunctionDoc>,
    #[serde(default)]
    pub exterior: Vec<ExteriorDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipeDoc {
    pub id: String,
    pub length: f64,
    pub n_points: usize,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JunctionDoc {
    pub id: String,
    pub ports: Vec<PortDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortDoc {
    pub pipe: String,
    pub end: End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExteriorDoc {
    pub pipe: String,
    pub end: End,
    #[serde(default)]
    pub bc: BoundaryKind,
}

impl NetworkDocument {
    pub fn into_network(self) -> Result<Network> {
        let lookup: HashMap<&str, usize> = self
            .pipes
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.as_str(), i))
            .collect();
        let resolve = |loc: String, id: &str| {
            lookup.get(id).copied().ok_or_else(|| Error::Parse {
                location: loc,
                message: format!("reference to unknown pipe '{id}'"),
            })
        };
        let mut junctions = Vec::with_capacity(self.junctions.len());
        for (k, j) in self.junctions.iter().enumerate() {
            let mut ports = Vec::with_capacity(j.ports.len());
            for (q, p) in j.ports.iter().enumerate() {
                let pipe = resolve(format!("junctions[{k}].ports[{q}]"), &p.pipe)?;
                ports.push(PortRef::new(pipe, p.end));
            }
            junctions.push(Junction {
                id: j.id.clone(),
                ports,
            });
        }
        let mut exterior = Vec::with_capacity(self.exterior.len());
        for (e, x) in self.exterior.iter().enumerate() {
            let pipe = resolve(format!("exterior[{e}]"), &x.pipe)?;
            exterior.push(ExteriorPort {
                port: PortRef::new(pipe, x.end),
                bc: x.bc,
            });
        }
        let pipes = self
            .pipes
            .into_iter()
            .map(|p| Pipe {
                id: p.id,
                length: p.length,
                n_points: p.n_points,
                area: p.area,
            })
            .collect();
        Network::new(self.sound_speed, pipes, junctions, exterior)
    }
}

/// Parses and validates a JSON network description.
pub fn parse_network(text: &str) -> Result<Network> {
    let doc: NetworkDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    doc.into_network()
}

/// Concatenated conserved variables of all pipes at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub values: Vec<f64>,
}

impl NetworkState {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(ρA, ρuA)` slices of pipe `p`.
    pub fn pipe<'a>(&'a self, net: &Network, p: usize) -> (&'a [f64], &'a [f64]) {
        let n = net.pipes[p].n_points;
        self.values[net.pipe_range(p)].split_at(n)
    }

    pub fn pipe_mut<'a>(&'a mut self, net: &Network, p: usize) -> (&'a mut [f64], &'a mut [f64]) {
        let n = net.pipes[p].n_points;
        self.values[net.pipe_range(p)].split_at_mut(n)
    }

    /// Checks dimensions and positivity of `ρA`.
    pub fn check(&self, net: &Network) -> Result<()> {
        check_len("network state", self.values.len(), net.dof())?;
        for (p, pipe) in net.pipes.iter().enumerate() {
            let (rho_a, m_a) = self.pipe(net, p);
            if let Some(i) = rho_a.iter().position(|&r| !(r > 0.0) || !r.is_finite()) {
                return Err(Error::state(format!(
                    "non-positive density {} in pipe {} at point {i}",
                    rho_a[i], pipe.id
                )));
            }
            if let Some(i) = m_a.iter().position(|m| !m.is_finite()) {
                return Err(Error::state(format!(
                    "non-finite mass flux in pipe {} at point {i}",
                    pipe.id
                )));
            }
        }
        Ok(())
    }
}

/// Coupling-condition defects at one junction.
#[derive(Debug, Clone, PartialEq)]
pub struct JunctionDefect {
    pub junction: String,
    /// `max ρ - min ρ` over the ports (equal-pressure condition).
    pub density_spread: f64,
    /// `Σ (ρuA) n` over the ports (Kirchhoff condition).
    pub kirchhoff_defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingDiagnostics {
    pub junctions: Vec<JunctionDefect>,
    pub tolerance: f64,
    pub passed: bool,
}

impl CouplingDiagnostics {
    pub fn max_density_spread(&self) -> f64 {
        self.junctions.iter().map(|j| j.density_spread).fold(0.0, f64::max)
    }

    pub fn max_kirchhoff_defect(&self) -> f64 {
        self.junctions
            .iter()
            .map(|j| j.kirchhoff_defect.abs())
            .fold(0.0, f64::max)
    }
}

/// Evaluates both coupling conditions at every junction.
pub fn junction_defects(net: &Network, q: &NetworkState) -> Result<Vec<JunctionDefect>> {
    check_len("network state", q.len(), net.dof())?;
    Ok(net
        .junctions
        .iter()
        .map(|j| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut flux = 0.0;
            for port in &j.ports {
                let a = net.pipes[port.pipe].area;
                let rho = q.values[net.port_index(*port, Variable::RhoA)] / a;
                lo = lo.min(rho);
                hi = hi.max(rho);
                flux += q.values[net.port_index(*port, Variable::MA)] * port.normal();
            }
            JunctionDefect {
                junction: j.id.clone(),
                density_spread: hi - lo,
                kirchhoff_defect: flux,
            }
        })
        .collect())
}

/// Checks that the coupling conditions hold (to `tol`) in an initial state.
pub fn validate_initial_state(
    net: &Network,
    q: &NetworkState,
    tol: f64,
) -> Result<CouplingDiagnostics> {
    let junctions = junction_defects(net, q)?;
    let passed = junctions
        .iter()
        .all(|j| j.density_spread <= tol && j.kirchhoff_defect.abs() <= tol);
    Ok(CouplingDiagnostics {
        junctions,
        tolerance: tol,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_PIPES: &str = r#"{
        "sound_speed": 1.0,
        "pipes": [
            {"id": "I", "length": 6.283185307179586, "n_points": 200, "area": 1.0},
            {"id": "II", "length": 6.283185307179586, "n_points": 200, "area": 1.0},
            {"id": "III", "length": 6.283185307179586, "n_points": 200, "area": 1.0}
        ],
        "junctions": [
            {"id": "J1", "ports": [{"pipe": "I", "end": "end"}, {"pipe": "II", "end": "start"}]},
            {"id": "J2", "ports": [{"pipe": "II", "end": "end"}, {"pipe": "III", "end": "start"}]}
        ],
        "exterior": [
            {"pipe": "I", "end": "start", "bc": "non-reflecting"},
            {"pipe": "III", "end": "end"}
        ]
    }"#;

    #[test]
    fn parses_three_pipes_in_series() {
        let net = parse_network(THREE_PIPES).unwrap();
        assert_eq!(net.pipes().len(), 3);
        assert_eq!(net.junctions().len(), 2);
        assert_eq!(net.exterior().len(), 2);
        assert_eq!(net.exterior()[1].bc, BoundaryKind::NonReflecting);
        assert_eq!(net.dof(), 1200);
    }

    #[test]
    fn single_pipe_has_no_junctions() {
        let text = r#"{"sound_speed": 1.0,
            "pipes": [{"id": "a", "length": 1.0, "n_points": 5, "area": 2.0}],
            "exterior": [{"pipe": "a", "end": "start", "bc": "closed"},
                         {"pipe": "a", "end": "end", "bc": "closed"}]}"#;
        let net = parse_network(text).unwrap();
        assert!(net.junctions().is_empty());
        assert_eq!(net.pipes()[0].dx(), 0.25);
    }

    #[test]
    fn rejects_invalid_documents() {
        let twice = THREE_PIPES.replace(
            r#"{"pipe": "III", "end": "end"}"#,
            r#"{"pipe": "II", "end": "end"}"#,
        );
        let err = parse_network(&twice).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");

        let dangling = THREE_PIPES.replace(r#",
            {"pipe": "III", "end": "end"}"#, "");
        assert!(parse_network(&dangling).unwrap_err().to_string().contains("dangling"));

        let dup = THREE_PIPES.replace(r#""id": "III""#, r#""id": "II""#);
        assert!(parse_network(&dup).is_err());

        let per_pipe_c = THREE_PIPES.replace(
            r#""area": 1.0}"#,
            r#""area": 1.0, "sound_speed": 2.0}"#,
        );
        assert!(parse_network(&per_pipe_c).is_err());

        assert!(parse_network("{ not json").is_err());
        let unknown = THREE_PIPES.replace(r#""sound_speed": 1.0,"#, r#""sound_speed": 1.0, "x": 1,"#);
        assert!(parse_network(&unknown).is_err());
    }

    #[test]
    fn serialize_round_trip() {
        let net = parse_network(THREE_PIPES).unwrap();
        let again = parse_network(&net.to_json()).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn global_index_layout() {
        let net = parse_network(THREE_PIPES).unwrap();
        let n = 200;
        assert_eq!(net.global_index(0, Variable::RhoA, 0).unwrap(), 0);
        assert_eq!(net.global_index(0, Variable::MA, 0).unwrap(), n);
        assert_eq!(net.global_index(1, Variable::RhoA, 0).unwrap(), 2 * n);
        assert!(net.global_index(3, Variable::RhoA, 0).is_err());
        assert!(net.global_index(0, Variable::MA, n).is_err());
        for idx in 0..net.dof() {
            let (p, v, i) = net.locate(idx).unwrap();
            assert_eq!(net.global_index(p, v, i).unwrap(), idx);
        }
        assert!(net.locate(net.dof()).is_err());
    }

    #[test]
    fn initial_state_diagnostics() {
        let net = parse_network(THREE_PIPES).unwrap();
        let q = net.uniform_state(1.0, 0.0);
        let d = validate_initial_state(&net, &q, 1e-12).unwrap();
        assert!(d.passed);
        assert_eq!(d.max_density_spread(), 0.0);
        assert_eq!(d.max_kirchhoff_defect(), 0.0);

        let mut q2 = q.clone();
        let idx = net.port_index(PortRef::new(0, End::End), Variable::RhoA);
        q2.values[idx] += 1e-3;
        let d = validate_initial_state(&net, &q2, 1e-6).unwrap();
        assert!(!d.passed);
        assert!((d.junctions[0].density_spread - 1e-3).abs() < 1e-15);
        assert_eq!(d.junctions[1].density_spread, 0.0);

        let short = NetworkState::new(vec![1.0; 10]);
        assert!(validate_initial_state(&net, &short, 1e-6).is_err());
    }
}
