//! Batch CSV files: `bs_index,t,rho,sigma`, one measurement per row.

use std::io::{Read, Write};

use anyhow::{ensure, Context};
use serde::{Deserialize, Serialize};

use seqloc::model::{Measurement, MeasurementBatch};

use crate::output::fmt_float;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    bs_index: usize,
    t: f64,
    rho: f64,
    sigma: f64,
}

pub fn read_measurements<R: Read>(reader: R) -> anyhow::Result<Vec<Measurement>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    ensure!(
        headers.iter().eq(["bs_index", "t", "rho", "sigma"]),
        "batch header must be bs_index,t,rho,sigma, got {}",
        headers.iter().collect::<Vec<_>>().join(",")
    );
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("batch row {}", i + 1))?;
        out.push(Measurement {
            bs_index: row.bs_index,
            t: row.t,
            rho: row.rho,
            sigma: row.sigma,
        });
    }
    ensure!(!out.is_empty(), "batch file has no measurements");
    Ok(out)
}

/// Times and ranges are written with 17 significant digits so a batch
/// survives a round trip exactly.
pub fn write_batch<W: Write>(writer: W, batch: &MeasurementBatch) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bs_index", "t", "rho", "sigma"])?;
    for m in batch.entries() {
        w.write_record([
            m.bs_index.to_string(),
            format!("{:.16e}", m.t),
            format!("{:.16e}", m.rho),
            fmt_float(m.sigma),
        ])?;
    }
    w.flush()?;
    Ok(())
}
