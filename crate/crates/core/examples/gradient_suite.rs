//! Runs the finite-difference suite: every primitive, every loss, and a
//! reduced generator plus discriminator stack.
//!
//! `cargo run --release --example gradient_suite -- [seed]`

fn main() -> ssgan::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let report = ssgan::gradcheck::run_suite(seed)?;
    print!("{}", report.text());
    if !report.passed() {
        std::process::exit(3);
    }
    Ok(())
}
