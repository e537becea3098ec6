//! Acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Property suites gate the exit status. Trend checks train small models on
//! a synthetic proxy (or on CIFAR-10 when `FREQCODA_CIFAR10_DIR` is set) and
//! only report; set `FREQCODA_ACCEPTANCE_TRENDS=0` to skip them.

mod properties;
mod trends;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

fn guarded(check: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Verdict::new(false, format!("panicked: {msg}"))
    })
}

fn report(id: u8, name: &str, v: &Verdict, seconds: f64, gating: bool) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    let tag = if gating { "" } else { " [trend]" };
    println!("{status} {id:>2} {name}{tag}: {} ({seconds:.1}s)", v.detail);
}

fn main() -> ExitCode {
    // The default hook would print every caught panic twice.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in properties::ALL {
        let t = Instant::now();
        let v = guarded(check);
        report(id, name, &v, t.elapsed().as_secs_f64(), true);
        failed += usize::from(!v.pass);
    }

    let run_trends = std::env::var("FREQCODA_ACCEPTANCE_TRENDS").map_or(true, |v| v != "0");
    if run_trends {
        let t = Instant::now();
        match catch_unwind(trends::run) {
            Ok(lines) => {
                let seconds = t.elapsed().as_secs_f64();
                println!("trend scale: {}", lines.scale);
                for (id, name, v) in &lines.verdicts {
                    report(*id, name, v, seconds, false);
                }
            }
            Err(_) => {
                for (id, name) in trends::NAMES {
                    report(id, name, &Verdict::new(false, "trend run aborted"), 0.0, false);
                }
            }
        }
    } else {
        for (id, name) in trends::NAMES {
            println!("SKIP {id:>2} {name} [trend]: FREQCODA_ACCEPTANCE_TRENDS=0");
        }
    }

    if failed > 0 {
        println!("{failed} property suite(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
