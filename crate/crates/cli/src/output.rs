use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use liegal_core::propagate::TrajectoryRecord;
use liegal_core::synth::PhysicalControl;
use serde::Serialize;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One row per interval: `s_start, s_end, u_1, ..., u_p`.
pub fn write_control_csv(path: &Path, c: &PhysicalControl) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let p = c.l1_norms.len();
    let mut header = vec!["s_start".to_string(), "s_end".to_string()];
    header.extend((1..=p).map(|j| format!("u{j}")));
    w.write_record(&header)?;
    for (i, u) in c.u.iter().enumerate() {
        let mut row = vec![c.breakpoints[i].to_string(), c.breakpoints[i + 1].to_string()];
        row.extend(u.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a control written by `write_control_csv`. The schedule duration is
/// unknown, so `t_schedule` is set to the physical duration.
pub fn read_control_csv(path: &Path) -> Result<PhysicalControl> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let p = r.headers()?.len().checked_sub(2).filter(|&p| p > 0).context("control CSV needs s_start, s_end and at least one u column")?;
    let mut bp = vec![];
    let mut u = vec![];
    let mut l1 = vec![0.0; p];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec.iter().map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().with_context(|| format!("row {}", i + 1))?;
        if vals.len() != p + 2 {
            bail!("row {} has {} fields, expected {}", i + 1, vals.len(), p + 2);
        }
        match bp.last() {
            None => bp.push(vals[0]),
            Some(&last) if last != vals[0] => bail!("row {} starts at {} but the previous row ends at {last}", i + 1, vals[0]),
            _ => {}
        }
        bp.push(vals[1]);
        for j in 0..p {
            l1[j] += vals[2 + j].abs() * (vals[1] - vals[0]);
        }
        u.push(vals[2..].to_vec());
    }
    if bp.is_empty() {
        bp.push(0.0);
    }
    let t = bp[bp.len() - 1] - bp[0];
    Ok(PhysicalControl { breakpoints: bp, u, total_time: t, t_schedule: t, l1_norms: l1 })
}

/// `t, re_1, im_1, ..., re_N, im_N, p_1, ..., p_N`.
pub fn write_trajectory_csv(path: &Path, rec: &TrajectoryRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let n = rec.states.first().map_or(0, |s| s.len());
    let mut header = vec!["t".to_string()];
    for k in 1..=n {
        header.push(format!("re{k}"));
        header.push(format!("im{k}"));
    }
    header.extend((1..=n).map(|k| format!("p{k}")));
    w.write_record(&header)?;
    for (i, t) in rec.times.iter().enumerate() {
        let mut row = vec![t.to_string()];
        for z in rec.states[i].iter() {
            row.push(z.re.to_string());
            row.push(z.im.to_string());
        }
        row.extend(rec.populations[i].iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
