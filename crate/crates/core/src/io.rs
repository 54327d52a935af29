//! Plain-text stream files and run outputs.
//!
//! Stream files are CSV with the header `t,i,group,score,y,x1,...,xD`,
//! preceded by optional `#` comment lines. Floats are written in Rust's
//! shortest round-trip form so a written stream reads back bit-exactly.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::engine::RunHistory;
use crate::error::{Error, Result};
use crate::metrics::StepMetrics;
use crate::scalar::Real;
use crate::simulator::StreamBatch;

fn fmt_opt<T: Real>(v: Option<T>) -> String {
    v.map(|x| x.as_f64().to_string()).unwrap_or_default()
}

/// Writes `batches` as a stream file with the given comment lines.
pub fn write_stream<W: Write>(mut out: W, batches: &[StreamBatch], comments: &[String]) -> Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let d = batches.first().map_or(0, |b| b.x.ncols());
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "i".into(), "group".into(), "score".into(), "y".into()];
    header.extend((1..=d).map(|j| format!("x{j}")));
    wtr.write_record(&header)?;
    for b in batches {
        if b.x.ncols() != d {
            return Err(Error::invalid("all batches of a stream need the same number of variables"));
        }
        for i in 0..b.len() {
            let mut rec = Vec::with_capacity(5 + d);
            rec.push(b.t.to_string());
            rec.push((i + 1).to_string());
            rec.push(b.group.as_ref().map(|g| g[i].to_string()).unwrap_or_default());
            rec.push(b.score[i].to_string());
            rec.push(b.y[i].to_string());
            rec.extend(b.x.row(i).iter().map(f64::to_string));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// A parsed stream file.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFile {
    pub comments: Vec<String>,
    pub batches: Vec<StreamBatch>,
}

fn parse<V: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<V> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what}: {field:?}"),
    })
}

/// Reads a stream file. Steps must be numbered `1, 2, …` without gaps;
/// refit labels equal the outcomes.
pub fn read_stream<R: BufRead>(input: R) -> Result<StreamFile> {
    let mut comments = Vec::new();
    let mut body = String::new();
    let mut first_body_line = 0;
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if body.is_empty() {
            if let Some(c) = line.strip_prefix('#') {
                comments.push(c.strip_prefix(' ').unwrap_or(c).to_string());
                continue;
            }
            first_body_line = k + 1;
        }
        body.push_str(&line);
        body.push('\n');
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    let fixed = ["t", "i", "group", "score", "y"];
    if headers.len() < fixed.len() || headers.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Parse {
            line: first_body_line,
            message: "header must start with t,i,group,score,y".into(),
        });
    }
    let d = headers.len() - fixed.len();
    for (j, h) in headers.iter().skip(fixed.len()).enumerate() {
        if h != format!("x{}", j + 1) {
            return Err(Error::Parse {
                line: first_body_line,
                message: format!("expected column x{}, found {h:?}", j + 1),
            });
        }
    }

    struct Pending {
        t: usize,
        x: Vec<f64>,
        group: Vec<Option<usize>>,
        score: Vec<f64>,
        y: Vec<u8>,
    }
    let finish = |p: Pending, line: usize| -> Result<StreamBatch> {
        let n = p.y.len();
        let group = if p.group.iter().all(Option::is_some) {
            Some(p.group.into_iter().flatten().collect())
        } else if p.group.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::Parse {
                line,
                message: format!("step {} mixes rows with and without a group", p.t),
            });
        };
        Ok(StreamBatch {
            t: p.t,
            x: DMatrix::from_row_slice(n, d, &p.x),
            group,
            score: p.score,
            refit_y: p.y.clone(),
            y: p.y,
        })
    };

    let mut batches = Vec::new();
    let mut current: Option<Pending> = None;
    for (k, rec) in rdr.records().enumerate() {
        let line = first_body_line + 1 + k;
        let rec = rec?;
        let t: usize = parse(&rec[0], "t", line)?;
        let group = match rec[2].trim() {
            "" => None,
            g => Some(parse::<usize>(g, "group", line)?),
        };
        let score: f64 = parse(&rec[3], "score", line)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Parse {
                line,
                message: format!("score {score} outside [0, 1]"),
            });
        }
        let y: u8 = parse(&rec[4], "y", line)?;
        if y > 1 {
            return Err(Error::Parse {
                line,
                message: format!("outcome {y} is not 0 or 1"),
            });
        }
        if current.as_ref().is_some_and(|p| p.t != t) {
            let done = current.take().expect("checked above");
            batches.push(finish(done, line)?);
        }
        let p = current.get_or_insert_with(|| Pending {
            t,
            x: Vec::new(),
            group: Vec::new(),
            score: Vec::new(),
            y: Vec::new(),
        });
        if p.y.is_empty() && p.t != batches.len() + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected step {}, found {t}", batches.len() + 1),
            });
        }
        for j in 0..d {
            p.x.push(parse(&rec[5 + j], "variable", line)?);
        }
        p.group.push(group);
        p.score.push(score);
        p.y.push(y);
    }
    if let Some(p) = current {
        batches.push(finish(p, first_body_line)?);
    }
    Ok(StreamFile { comments, batches })
}

/// Per-step windowed metrics: `t,eci_window,auc_window,nll`.
pub fn write_metrics_csv<W: Write, T: Real>(out: W, metrics: &[StepMetrics<T>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["t", "eci_window", "auc_window", "nll"])?;
    for m in metrics {
        wtr.write_record([m.t.to_string(), fmt_opt(m.eci), fmt_opt(m.auc), fmt_opt(m.nll)])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Deployed revision per step: `t,theta1..thetaD,w0,w1`.
pub fn write_params_csv<W: Write, T: Real>(out: W, history: &RunHistory<T>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let d = history.steps.first().map_or(0, |s| s.mean.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("theta{j}")));
    header.extend(["w0".to_string(), "w1".to_string()]);
    wtr.write_record(&header)?;
    for s in &history.steps {
        let mut rec = vec![s.t.to_string()];
        rec.extend(s.mean.iter().map(|v| v.as_f64().to_string()));
        rec.extend(s.branch_weights.iter().map(|v| v.as_f64().to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Prequential predictions: `t,i,prob,y`.
pub fn write_predictions_csv<W: Write, T: Real>(out: W, history: &RunHistory<T>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["t", "i", "prob", "y"])?;
    for s in &history.steps {
        for (i, (p, y)) in s.probs.iter().zip(&s.outcomes).enumerate() {
            wtr.write_record([s.t.to_string(), (i + 1).to_string(), p.as_f64().to_string(), y.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Per-step predictions read back from [`write_predictions_csv`] output.
pub fn read_predictions_csv<R: BufRead>(input: R) -> Result<(Vec<Vec<f64>>, Vec<Vec<u8>>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut probs: Vec<Vec<f64>> = Vec::new();
    let mut outcomes: Vec<Vec<u8>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::Parse {
                line,
                message: "expected t,i,prob,y".into(),
            });
        }
        let t: usize = parse(&rec[0], "t", line)?;
        if t == 0 || t > probs.len() + 1 {
            return Err(Error::Parse {
                line,
                message: format!("step {t} out of order"),
            });
        }
        if t == probs.len() + 1 {
            probs.push(Vec::new());
            outcomes.push(Vec::new());
        }
        probs[t - 1].push(parse(&rec[2], "prob", line)?);
        outcomes[t - 1].push(parse(&rec[3], "y", line)?);
    }
    Ok((probs, outcomes))
}
