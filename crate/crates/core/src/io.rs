//! CSV products: trajectories, junction fluxes, objective history, forcing
//! fields and the coupling matrix.
//!
//! Numbers are written as `{:.16e}` (17 significant digits), so a value
//! round-trips exactly and identical runs give byte-identical files.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::coupling::CouplingMatrix;
use crate::error::{Error, Result};
use crate::forcing::ForcingField;
use crate::integrate::Trajectory;
use crate::network::Network;

/// Which pipes and time levels to write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Pipe indices; `None` selects all pipes.
    pub pipes: Option<Vec<usize>>,
    /// Every `stride`-th time level is written, starting at level 0.
    pub stride: usize,
}

impl Default for Selection {
    fn default() -> Self {
        Self {
            pipes: None,
            stride: 1,
        }
    }
}

impl Selection {
    fn check(&self, net: &Network) -> Result<Vec<usize>> {
        if self.stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        let pipes = match &self.pipes {
            Some(p) => p.clone(),
            None => (0..net.pipes().len()).collect(),
        };
        if let Some(&p) = pipes.iter().find(|&&p| p >= net.pipes().len()) {
            return Err(Error::invalid(format!("pipe index {p} out of range")));
        }
        Ok(pipes)
    }

    fn levels(&self, count: usize) -> impl Iterator<Item = usize> {
        (0..count).step_by(self.stride)
    }
}

fn num(v: f64) -> String {
    format!("{:.16e}", v + 0.0)
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish<W: Write>(w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, io::Error::from(e))
}

/// Writes `t,pipe,x,rhoA,mA`, time-major, then pipe, then grid point.
pub fn write_trajectory_csv(
    traj: &Trajectory,
    net: &Network,
    selection: &Selection,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let pipes = selection.check(net)?;
    let mut w = create(path)?;
    let e = csv_err(path);
    w.write_record(["t", "pipe", "x", "rhoA", "mA"]).map_err(&e)?;
    for n in selection.levels(traj.states.len()) {
        let t = num(traj.times[n]);
        let q = &traj.states[n];
        for &p in &pipes {
            let pipe = &net.pipes()[p];
            let (rho_a, m_a) = q.pipe(net, p);
            for i in 0..pipe.n_points {
                w.write_record([
                    t.as_str(),
                    pipe.id.as_str(),
                    &num(pipe.x(i)),
                    &num(rho_a[i]),
                    &num(m_a[i]),
                ])
                .map_err(&e)?;
            }
        }
    }
    finish(w, path)
}

/// Column labels `junction:pipe:end` of [`write_junction_fluxes_csv`].
pub fn junction_flux_columns(net: &Network) -> Vec<String> {
    net.junctions()
        .iter()
        .flat_map(|j| {
            j.ports.iter().map(move |port| {
                let end = match port.end {
                    crate::network::End::Start => "start",
                    crate::network::End::End => "end",
                };
                format!("{}:{}:{}", j.id, net.pipes()[port.pipe].id, end)
            })
        })
        .collect()
}

/// Per time level and junction port, the mass flux `(ρuA) n` leaving the
/// pipe through that end (positive into the junction).
pub fn junction_fluxes(traj: &Trajectory, net: &Network, level: usize) -> Vec<f64> {
    let q = &traj.states[level];
    net.junctions()
        .iter()
        .flat_map(|j| {
            j.ports.iter().map(move |&port| {
                let i = net.port_index(port, crate::network::Variable::MA);
                q.values[i] * port.normal()
            })
        })
        .collect()
}

/// Wide table: `t` followed by one column per junction port.
pub fn write_junction_fluxes_csv(
    traj: &Trajectory,
    net: &Network,
    stride: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let sel = Selection {
        pipes: None,
        stride,
    };
    sel.check(net)?;
    let mut w = create(path)?;
    let e = csv_err(path);
    let mut header = vec!["t".to_string()];
    header.extend(junction_flux_columns(net));
    w.write_record(&header).map_err(&e)?;
    for n in sel.levels(traj.states.len()) {
        let mut row = vec![num(traj.times[n])];
        row.extend(junction_fluxes(traj, net, n).into_iter().map(num));
        w.write_record(&row).map_err(&e)?;
    }
    finish(w, path)
}

/// `iteration,J,J_over_J1`, iterations counted from 1.
pub fn write_j_history_csv(history: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let e = csv_err(path);
    w.write_record(["iteration", "J", "J_over_J1"]).map_err(&e)?;
    let j1 = history.first().copied().unwrap_or(0.0);
    for (k, &j) in history.iter().enumerate() {
        let rel = if j1 > 0.0 { j / j1 } else { 0.0 };
        w.write_record([(k + 1).to_string(), num(j), num(rel)])
            .map_err(&e)?;
    }
    finish(w, path)
}

/// `step,t,pipe,x,r_rho,r_m` for every forced pipe.
pub fn write_forcing_csv(
    forcing: &ForcingField,
    net: &Network,
    dt: f64,
    stride: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let mut w = create(path)?;
    let e = csv_err(path);
    w.write_record(["step", "t", "pipe", "x", "r_rho", "r_m"])
        .map_err(&e)?;
    for n in (0..forcing.steps()).step_by(stride) {
        for pf in forcing.pipes() {
            let pipe = &net.pipes()[pf.pipe];
            for i in 0..pipe.n_points {
                w.write_record([
                    n.to_string(),
                    num(n as f64 * dt),
                    pipe.id.clone(),
                    num(pipe.x(i)),
                    num(pf.r_rho[(n, i)]),
                    num(pf.r_m[(n, i)]),
                ])
                .map_err(&e)?;
            }
        }
    }
    finish(w, path)
}

/// `row,col,value` triplets of the coupling matrix.
pub fn write_coupling_csv(c: &CouplingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let e = csv_err(path);
    w.write_record(["row", "col", "value"]).map_err(&e)?;
    for &(r, col, v) in c.entries() {
        w.write_record([r.to_string(), col.to_string(), num(v)])
            .map_err(&e)?;
    }
    finish(w, path)
}

/// `step,t,J_t`: the objective integrand per time level.
pub fn write_series_csv(
    name: &str,
    values: &[f64],
    dt: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let e = csv_err(path);
    w.write_record(["step", "t", name]).map_err(&e)?;
    for (n, &v) in values.iter().enumerate() {
        w.write_record([n.to_string(), num(n as f64 * dt), num(v)])
            .map_err(&e)?;
    }
    finish(w, path)
}
