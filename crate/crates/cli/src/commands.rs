use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use trimer::classical::{chaos_profile, energy_range, poincare_section, seed_grid, zero_point};
use trimer::classifier::classify_all;
use trimer::export::{write_csv_matrix, write_pgm};
use trimer::fock::solve;
use trimer::meanfield::{classify_basis_grid, detect_locking, evolve, hamiltonian, AmplitudeState};
use trimer::torusfield::{density, phase, synthesize};
use trimer::{ChaosProfile, Classification, EigenSystem, FockBasis};

use crate::config::RunConfig;
use crate::CliError;

/// Writes artifacts under `<out>/<command>/` with a metadata file beside each one.
pub struct Artifacts {
    dir: PathBuf,
    command: &'static str,
    config_hash: String,
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(config: &RunConfig, command: &'static str) -> Result<Self, CliError> {
        let dir = config.out_dir.join(command);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            command,
            config_hash: config.hash(),
            written: Vec::new(),
        })
    }

    pub fn write(
        &mut self,
        file: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(file);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
        let meta = json!({
            "command": self.command,
            "artifact": file,
            "config_sha256": self.config_hash,
            "trimer_version": env!("CARGO_PKG_VERSION"),
        });
        let meta_path = self.dir.join(format!("{file}.meta.json"));
        fs::write(
            &meta_path,
            serde_json::to_string_pretty(&meta).unwrap() + "\n",
        )
        .map_err(|e| CliError::io(&meta_path, e))?;
        self.written.push(path);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<(), CliError> {
        let text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Model(e.to_string()))?;
        self.write(file, |w| writeln!(w, "{text}"))
    }
}

fn spectrum_rows(eig: &EigenSystem) -> impl Iterator<Item = String> + '_ {
    eig.energies
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{},{e:.12}", i + 1))
}

pub fn spectrum(config: &RunConfig) -> Result<Artifacts, CliError> {
    let (_, eig) = solve(&config.model);
    let mut out = Artifacts::new(config, "spectrum")?;
    out.write("spectrum.csv", |w| {
        writeln!(w, "index,energy")?;
        spectrum_rows(&eig).try_for_each(|row| writeln!(w, "{row}"))
    })?;
    Ok(out)
}

pub fn wavefn(config: &RunConfig, states: &[usize]) -> Result<Artifacts, CliError> {
    let (basis, eig) = solve(&config.model);
    for &k in states {
        if k == 0 || k > eig.len() {
            return Err(CliError::Usage(format!(
                "state {k} outside 1..={}",
                eig.len()
            )));
        }
    }
    let mut out = Artifacts::new(config, "wavefn")?;
    for &k in states {
        let field = synthesize(&eig.state(k), &basis, &config.grid)
            .map_err(|e| CliError::Model(e.to_string()))?;
        let rho = density(&field);
        out.write(&format!("phi{k}_density.csv"), |w| {
            write_csv_matrix(w, &rho)
        })?;
        out.write(&format!("phi{k}_phase.csv"), |w| {
            write_csv_matrix(w, &phase(&field))
        })?;
        out.write(&format!("phi{k}.pgm"), |w| write_pgm(w, &rho))?;
    }
    Ok(out)
}

fn chaos(config: &RunConfig) -> ChaosProfile {
    let (lo, hi) = energy_range(&config.model, config.starts, config.seed);
    chaos_profile(&config.model, lo, hi, &config.chaos, config.tolerances)
}

fn classification(
    config: &RunConfig,
    with_chaos: bool,
) -> (FockBasis, EigenSystem, Classification, Option<ChaosProfile>) {
    let (basis, eig) = solve(&config.model);
    let profile = with_chaos.then(|| chaos(config));
    let classes = classify_all(
        &eig,
        &basis,
        &config.grid,
        &config.thresholds,
        profile.as_ref(),
    );
    (basis, eig, classes, profile)
}

pub fn classify(config: &RunConfig, with_chaos: bool) -> Result<Artifacts, CliError> {
    let (_, _, classes, profile) = classification(config, with_chaos);
    let mut out = Artifacts::new(config, "classify")?;
    out.write("assignments.csv", |w| {
        writeln!(w, "index,energy,center,qn1,qn2,confidence")?;
        for a in &classes.assignments {
            let (q1, q2) = a
                .quantum_numbers
                .map_or((String::new(), String::new()), |(x, y)| {
                    (x.to_string(), y.to_string())
                });
            writeln!(
                w,
                "{},{:.12},{},{q1},{q2},{:.6}",
                a.state_index, a.energy, a.center, a.confidence
            )?;
        }
        Ok(())
    })?;
    out.write_json(
        "summary.json",
        &json!({ "counts": classes.counts, "assigned": classes.assigned(), "chaos_profile": profile }),
    )?;
    Ok(out)
}

pub fn poincare(
    config: &RunConfig,
    energy: f64,
    seeds: (usize, usize),
    crossings: usize,
) -> Result<Artifacts, CliError> {
    let p = &config.model;
    let starts = seed_grid(energy, p, seeds.0, seeds.1);
    if starts.is_empty() {
        return Err(CliError::Model(format!(
            "no accessible seeds at energy {energy}"
        )));
    }
    let section = poincare_section(energy, p, &starts, crossings, config.tolerances);
    let mut out = Artifacts::new(config, "poincare")?;
    let label = format!("section_e{energy}");
    out.write(&format!("{label}.csv"), |w| {
        writeln!(w, "seed,t,psi1,psi2,j1,j2,energy")?;
        for c in &section.crossings {
            writeln!(
                w,
                "{},{:.12},{:.3e},{:.12},{:.12},{:.12},{:.12}",
                c.seed_id, c.t, c.psi1, c.psi2, c.j1, c.j2, c.energy
            )?;
        }
        Ok(())
    })?;
    out.write_json(
        &format!("{label}.json"),
        &json!({ "energy": energy, "seeds": starts.len(), "crossings": section.crossings.len(), "failures": section.failures }),
    )?;
    Ok(out)
}

pub fn evolve_cmd(
    config: &RunConfig,
    ic: AmplitudeState,
    label: &str,
    t_end: f64,
) -> Result<Artifacts, CliError> {
    let p = &config.model;
    let lock = &config.lock;
    let traj = evolve(&ic, p, t_end, lock.sample_dt, config.tolerances)
        .map_err(|e| CliError::Model(e.to_string()))?;
    let report = detect_locking(&traj, lock).map_err(|e| CliError::Model(e.to_string()))?;
    let zp = zero_point(p);
    let mut out = Artifacts::new(config, "evolve")?;
    out.write(&format!("{label}.csv"), |w| {
        writeln!(w, "t,re_c1,im_c1,re_c2,im_c2,re_c3,im_c3,n1,n2,n3,energy")?;
        for (t, s) in traj.t.iter().zip(&traj.states) {
            let n = s.actions();
            write!(w, "{t:.6}")?;
            for c in s.c {
                write!(w, ",{:.12},{:.12}", c.re, c.im)?;
            }
            writeln!(
                w,
                ",{:.12},{:.12},{:.12},{:.12}",
                n[0],
                n[1],
                n[2],
                hamiltonian(s, p) - zp
            )?;
        }
        Ok(())
    })?;
    out.write_json(&format!("{label}_locks.json"), &report)?;
    Ok(out)
}

pub fn gridmap(config: &RunConfig, with_chaos: bool) -> Result<Artifacts, CliError> {
    let (basis, eig, classes, _) = classification(config, with_chaos);
    let grid = classify_basis_grid(
        &config.model,
        &basis,
        &eig,
        &classes.assignments,
        &config.lock,
        config.tolerances,
    );
    let (agreement, both) = grid.agreement();
    let mut out = Artifacts::new(config, "gridmap")?;
    out.write("grid.csv", |w| {
        writeln!(w, "n1,n2,n3,classical,quantum")?;
        for c in &grid.cells {
            let n2 = config.model.n_particles - c.n1 - c.n3;
            writeln!(w, "{},{n2},{},{},{}", c.n1, c.n3, c.classical, c.quantum)?;
        }
        Ok(())
    })?;
    out.write_json(
        "summary.json",
        &json!({ "agreement": agreement, "mutually_assigned": both, "cells": grid.cells.len() }),
    )?;
    Ok(out)
}

pub fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .display()
        .to_string()
}
