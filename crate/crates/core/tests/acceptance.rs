//! Acceptance run: one PASS/FAIL line per criterion at the default configuration.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use plap::abp::m_tilde;
use plap::experiments::{
    abp_suite, barrier_calibrate, contact_suite, geometry_selftest, harnack_sweep, infconv_demo, level_decay_suite,
    measure_estimate, ExperimentConfig, SharpCase,
};
use plap::report::{CheckRow, Status};
use plap::Result;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn count(rows: &[&CheckRow], status: Status) -> usize {
    rows.iter().filter(|r| r.status == status).count()
}

/// All selected rows PASS and there is at least one.
fn all_pass(rows: &[&CheckRow], elapsed: Duration, limit: Option<Duration>) -> Verdict {
    let pass = count(rows, Status::Pass);
    let within = limit.is_none_or(|l| elapsed < l);
    let detail = format!(
        "rows={} pass={pass} fail={} inconclusive={} skip={} ({:.1} s)",
        rows.len(),
        count(rows, Status::Fail),
        count(rows, Status::Inconclusive),
        count(rows, Status::Skip),
        elapsed.as_secs_f64()
    );
    verdict(pass > 0 && pass == rows.len() && within, detail)
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, Duration)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed()))
}

fn run() -> Result<Vec<(u32, &'static str, Verdict)>> {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.mesh.fine_n_r, 128);
    assert_eq!(cfg.params.p, [1.5, 2.0, 3.0]);
    assert_eq!(cfg.run.instances, 30);
    let mut out = Vec::new();

    let mut sharp = Vec::new();
    let mut ok = true;
    let mut detail = Vec::new();
    for &p in &cfg.params.p {
        let (case, dt) = timed(|| SharpCase::run(&cfg, p))?;
        let dev = (case.report.ratio - 1.0).abs();
        ok &= dev <= 0.05 && dt < Duration::from_secs(30);
        detail.push(format!("p={p} ratio={:.4} ({:.1} s)", case.report.ratio, dt.as_secs_f64()));
        sharp.push(case);
    }
    out.push((1, "ABP sharpness", verdict(ok, detail.join(", "))));

    let (suite, dt) = timed(|| abp_suite(&cfg))?;
    let rows: Vec<&CheckRow> = suite.rows.iter().collect();
    let audited = rows.iter().filter(|r| r.status != Status::Inconclusive).count();
    let ok = count(&rows, Status::Fail) == 0 && audited > 0 && rows.len() == 180 && dt < Duration::from_secs(300);
    let detail = format!("rows={} audited={audited} fail={} ({:.1} s)", rows.len(), count(&rows, Status::Fail), dt.as_secs_f64());
    out.push((2, "ABP inequality suite", verdict(ok, detail)));

    let (measure, dt) = timed(|| measure_estimate(&cfg))?;
    let formula = (m_tilde(2.0) - 4.5).abs() <= 1e-12 && (m_tilde(3.0) - 2.0 * 3f64.sqrt()).abs() <= 1e-12;
    let rows: Vec<&CheckRow> = measure.rows.iter().filter(|r| r.status != Status::Skip).collect();
    let mut v = all_pass(&rows, dt, None);
    v.pass &= formula;
    out.push((3, "Measure estimate", v));

    let (barrier, dt) = timed(|| barrier_calibrate(&cfg))?;
    out.push((4, "Barrier", all_pass(&barrier.rows.iter().collect::<Vec<_>>(), dt, None)));

    let (infconv, dt) = timed(|| infconv_demo(&cfg))?;
    out.push((5, "Inf-convolution", all_pass(&infconv.rows.iter().collect::<Vec<_>>(), dt, None)));

    let (contact, dt) = timed(|| contact_suite(&cfg))?;
    let jac: Vec<&CheckRow> = contact.rows.iter().filter(|r| r.anchor == "prop-jacobian-factorization").collect();
    let mut v = all_pass(&jac, dt, None);
    v.pass &= jac.iter().any(|r| r.params.contains("exact-2^n")) && jac.iter().any(|r| r.params.contains("pooled"));
    out.push((6, "Jacobian factorization", v));

    let sharp_rows: Vec<CheckRow> = sharp.iter().flat_map(|c| c.rows(&cfg)).collect();
    let psd: Vec<&CheckRow> =
        sharp_rows.iter().chain(&contact.rows).filter(|r| r.anchor == "prop-jacobian-psd").collect();
    out.push((7, "PSD certificates", all_pass(&psd, dt, None)));

    let (decay, dt) = timed(|| level_decay_suite(&cfg))?;
    let rows: Vec<&CheckRow> = decay.rows.iter().filter(|r| r.anchor == "thm-l-epsilon").collect();
    let log_rows = rows.iter().filter(|r| r.params.starts_with("log-profile")).count();
    let ok = count(&rows, Status::Fail) == 0 && count(&rows, Status::Inconclusive) == 0 && log_rows >= 2;
    let detail = format!(
        "rows={} pass={} skip={} log-profile={log_rows} ({:.1} s)",
        rows.len(),
        count(&rows, Status::Pass),
        count(&rows, Status::Skip),
        dt.as_secs_f64()
    );
    out.push((8, "Level decay", verdict(ok, detail)));

    let (harnack, dt) = timed(|| harnack_sweep(&cfg))?;
    let checked: Vec<&CheckRow> = harnack.rows.iter().filter(|r| r.tolerance.is_finite()).collect();
    let mut v = all_pass(&checked, dt, None);
    v.pass &= count(&harnack.rows.iter().collect::<Vec<_>>(), Status::Fail) == 0
        && checked.iter().filter(|r| r.params.contains("stability")).count() > 0
        && checked.iter().filter(|r| !r.params.contains("stability")).count() == 2;
    out.push((9, "Harnack quotient", v));

    let (geo, dt) = timed(|| geometry_selftest(&cfg))?;
    out.push((10, "Geometry self-test", all_pass(&geo.rows.iter().collect::<Vec<_>>(), dt, Some(Duration::from_secs(10)))));

    Ok(out)
}

fn main() -> ExitCode {
    let start = Instant::now();
    let results = match run() {
        Ok(r) => r,
        Err(e) => {
            println!("acceptance: error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut failed = 0;
    for (k, name, v) in &results {
        let status = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!("criterion {k:>2} {status} {name}: {}", v.detail);
    }
    println!("acceptance: {}/{} PASS ({:.1} s)", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
