use monomt::pipeline::{Origin, SynthesisMode, SyntheticPair};

pub fn pair(iteration: usize, line: usize, cleanliness: f64) -> SyntheticPair {
    SyntheticPair {
        src: vec![format!("s{line}")],
        tgt: vec![format!("t{line}")],
        origin: Origin {
            iteration,
            system: "usmt-00/bwd".into(),
            mode: SynthesisMode::Back,
            line,
        },
        cleanliness,
    }
}

/// Rank by counting the pairs that beat each one; no sorting involved.
pub fn rank_oracle(acc: &[SyntheticPair], keep: usize) -> Vec<usize> {
    let beats = |a: usize, b: usize| {
        let (p, q) = (&acc[a], &acc[b]);
        (p.cleanliness > q.cleanliness)
            || (p.cleanliness == q.cleanliness
                && (p.origin.iteration, p.origin.line, a) < (q.origin.iteration, q.origin.line, b))
    };
    (0..acc.len())
        .filter(|&i| (0..acc.len()).filter(|&j| beats(j, i)).count() < keep)
        .collect()
}
