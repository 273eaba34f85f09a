mod common;

use mango_core::{Example, ReplayBuffer};
use rand::Rng;

fn ex(i: usize) -> Example {
    Example {
        features: vec![i as f64],
        label: i,
        task_id: 0,
    }
}

#[test]
fn exhaustive_two_slots_four_items() {
    // Items 0 and 1 fill the buffer; item 2 draws from 0..=2, item 3 from 0..=3.
    let mut included = [0u32; 4];
    let mut outcomes = 0u32;
    for d2 in 0..=2 {
        for d3 in 0..=3 {
            let mut buf = ReplayBuffer::new(2, 0);
            buf.insert(ex(0));
            buf.insert(ex(1));
            buf.insert_with_draw(ex(2), d2);
            buf.insert_with_draw(ex(3), d3);
            outcomes += 1;
            for item in buf.items() {
                included[item.label] += 1;
            }
        }
    }
    assert_eq!(outcomes, 12);
    for (i, &n) in included.iter().enumerate() {
        assert_eq!(2 * n, outcomes, "item {i} kept in {n} of {outcomes} outcomes");
    }
}

#[test]
fn inclusion_probability_is_uniform_over_arrival_order() {
    let (m, n, trials) = (20usize, 1_000usize, 2_000u64);
    let mut counts = vec![0u32; n];
    for trial in 0..trials {
        let mut buf = ReplayBuffer::new(m, trial);
        for i in 0..n {
            buf.insert(ex(i));
        }
        assert_eq!(buf.len(), m);
        assert_eq!(buf.seen(), n as u64);
        for item in buf.items() {
            counts[item.label] += 1;
        }
    }
    let p = m as f64 / n as f64;
    // Arrival-order deciles: each pools 100 items × `trials` Bernoulli(p).
    for (d, chunk) in counts.chunks(n / 10).enumerate() {
        let k = (chunk.len() as u64 * trials) as f64;
        let freq = chunk.iter().map(|&c| c as f64).sum::<f64>() / k;
        let sigma = (p * (1.0 - p) / k).sqrt();
        assert!((freq - p).abs() < 3.0 * sigma, "decile {d}: {freq} vs {p}");
    }
}

#[test]
fn sampling_is_uniform_over_slots() {
    let mut buf = ReplayBuffer::new(10, 0);
    for i in 0..10 {
        buf.insert(ex(i));
    }
    let mut r = common::rng(8);
    let draws = 100_000;
    let mut counts = [0u32; 10];
    for e in buf.sample(draws, &mut r).unwrap() {
        counts[e.label] += 1;
    }
    let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - draws as f64 * 0.1).abs() < 3.0 * sigma, "slot {i}: {c}");
    }
}

#[test]
fn replacement_draw_hits_every_slot() {
    let mut buf = ReplayBuffer::new(3, 1);
    for i in 0..3 {
        buf.insert(ex(i));
    }
    let mut r = common::rng(2);
    for i in 3..200 {
        let draw = r.random_range(0..=buf.seen());
        let before = buf.items().to_vec();
        buf.insert_with_draw(ex(i), draw);
        let changed = before.iter().zip(buf.items()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, usize::from(draw < 3));
    }
}
