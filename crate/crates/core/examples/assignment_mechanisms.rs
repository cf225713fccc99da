//! Drawing from complete, block and Bernoulli mechanisms, and enumerating
//! every complete-randomization assignment of a small design.

use ivrt::mechanism::{binomial, domain_tag, enumerate_complete, AssignmentSampler, DrawStream, MechanismSpec};

fn show(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stream = DrawStream::new(42, domain_tag("example"));

    let complete = MechanismSpec::complete(10, 4)?;
    let labels: Vec<String> =
        ["a", "a", "a", "a", "b", "b", "b", "c", "c", "c"].iter().map(|s| s.to_string()).collect();
    let block = MechanismSpec::block(&labels, &[("a".into(), 2), ("b".into(), 1), ("c".into(), 2)])?;
    let bernoulli = MechanismSpec::bernoulli(vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.8, 0.3, 0.7, 0.6, 0.4], 1_000)?;

    for mech in [&complete, &block, &bernoulli] {
        println!("{}: {:?}", mech.label(), mech.summary());
        for m in 0..3 {
            let draw = mech.sample(&mut stream.rng(m))?;
            println!("  draw {m}: {} (redraws {})", show(draw.assignment.values()), draw.redraws);
        }
    }

    println!("C(6, 2) = {}", binomial(6, 2).unwrap());
    for a in enumerate_complete(6, 2, 1_000)? {
        println!("  {}", show(a.values()));
    }
    Ok(())
}
