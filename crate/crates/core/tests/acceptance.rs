use std::io::Write;

use netuq::fem_diffusion::NewtonOptions;
use netuq::verify::{run_verify, VerifyContext, CRITERIA};

#[test]
fn acceptance_criteria() {
    let ids: Vec<u8> = CRITERIA.iter().map(|(id, _)| *id).collect();
    let mut ctx = VerifyContext::new(NewtonOptions::default());
    // Written straight to stderr so the lines show up without --nocapture.
    let report = run_verify(&ids, &mut ctx, |r| {
        let mut err = std::io::stderr();
        let _ = writeln!(err, "{}", r.line());
    });
    let failed: Vec<u8> = report.criteria.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
