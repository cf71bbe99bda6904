use std::io::{Read, Write};

use crate::odesolve::csv_err;
use crate::Result;

pub const HEADER: [&str; 9] = [
    "run_id", "controller", "seed", "energy", "r_final", "r_mean", "r_min", "peak_infected", "t_peak",
];

/// One evaluation run. Quantities that do not apply to the experiment are
/// `None` and written as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub controller: String,
    pub seed: u64,
    pub energy: f64,
    pub r_final: Option<f64>,
    pub r_mean: Option<f64>,
    pub r_min: Option<f64>,
    pub peak_infected: Option<f64>,
    pub t_peak: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| crate::Error::Io(format!("bad number '{s}' in metrics table")))
}

/// CSV cells of a row in [`HEADER`] order.
pub fn metrics_fields(r: &MetricsRow) -> [String; 9] {
    [
        r.run_id.clone(),
        r.controller.clone(),
        r.seed.to_string(),
        r.energy.to_string(),
        cell(r.r_final),
        cell(r.r_mean),
        cell(r.r_min),
        cell(r.peak_infected),
        cell(r.t_peak),
    ]
}

pub fn write_metrics_csv(rows: &[MetricsRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(metrics_fields(r)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(input: impl Read) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(crate::Error::Io(format!("unexpected metrics header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |k: usize| parse_cell(&rec[k]);
        rows.push(MetricsRow {
            run_id: rec[0].to_string(),
            controller: rec[1].to_string(),
            seed: rec[2]
                .parse()
                .map_err(|_| crate::Error::Io(format!("bad seed '{}'", &rec[2])))?,
            energy: f(3)?.unwrap_or(f64::NAN),
            r_final: f(4)?,
            r_mean: f(5)?,
            r_min: f(6)?,
            peak_infected: f(7)?,
            t_peak: f(8)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = vec![
            MetricsRow {
                run_id: "a".into(),
                controller: "NODEC".into(),
                seed: 3,
                energy: 1.0 / 3.0,
                r_final: Some(0.99),
                r_mean: Some(0.5),
                r_min: Some(0.1),
                peak_infected: None,
                t_peak: None,
            },
            MetricsRow {
                run_id: "b".into(),
                controller: "F".into(),
                seed: 3,
                energy: 0.0,
                r_final: None,
                r_mean: None,
                r_min: None,
                peak_infected: Some(0.53),
                t_peak: Some(1.25),
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("run_id,controller,seed,energy,"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);
    }
}
