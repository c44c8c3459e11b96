use mtrcnet::synth::{
    derive_seed, generate_workflow, render_frame, sample_tools, WorkflowSpec, CHANNELS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn empirical_cooccurrence_matches_spec() {
    let spec = WorkflowSpec::default();
    let mut present = vec![vec![0usize; 7]; 7];
    let mut frames = [0usize; 7];
    let mut total = 0;
    let mut seed = 0;
    while total < 100_000 {
        let phases = generate_workflow(&spec, derive_seed(seed, 0)).unwrap();
        let tools = sample_tools(&phases, &spec, derive_seed(seed, 1)).unwrap();
        for (&z, y) in phases.iter().zip(&tools) {
            frames[z] += 1;
            for c in 0..7 {
                present[c][z] += y[c] as usize;
            }
        }
        total += phases.len();
        seed += 1;
    }
    for c in 0..7 {
        for z in 0..7 {
            let f = present[c][z] as f64 / frames[z] as f64;
            let want = spec.tool_given_phase[c][z];
            assert!((f - want).abs() <= 0.03, "tool {c} phase {z}: {f:.4} vs {want}");
        }
    }
}

#[test]
fn mean_episode_length_matches_persistence() {
    let mut spec = WorkflowSpec::default();
    for row in spec.tool_given_phase.iter_mut() {
        row.fill(0.3);
    }
    spec.duration_range = vec![(400, 400); 7];
    let phases = generate_workflow(&spec, 1).unwrap();
    let tools = sample_tools(&phases, &spec, 2).unwrap();
    let (mut episodes, mut on) = (0usize, 0usize);
    for c in 0..7 {
        for t in 0..tools.len() {
            let v = tools[t][c];
            on += v as usize;
            if v == 1 && (t == 0 || tools[t - 1][c] == 0 || phases[t - 1] != phases[t]) {
                episodes += 1;
            }
        }
    }
    let mean = on as f64 / episodes as f64;
    assert!((mean - spec.tool_persistence).abs() < 0.3, "mean episode {mean}");
}

#[test]
fn nearest_centroid_recovers_phase() {
    let spec = WorkflowSpec {
        noise_level: 0.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stats = |img: &[f32]| -> Vec<f64> {
        let n = img.len() / CHANNELS;
        (0..CHANNELS)
            .map(|ch| img[ch * n..(ch + 1) * n].iter().map(|&v| v as f64).sum::<f64>() / n as f64)
            .collect()
    };
    let mut sample = |k: u64| -> (usize, Vec<f64>) {
        let z = rng.random_range(0..7);
        let tools: Vec<u8> = (0..7)
            .map(|c| (rng.random::<f64>() < spec.tool_given_phase[c][z]) as u8)
            .collect();
        (z, stats(&render_frame(z, &tools, &spec, k)))
    };
    let train: Vec<_> = (0..500).map(&mut sample).collect();
    let test: Vec<_> = (500..1000).map(&mut sample).collect();
    let mut centroids = vec![vec![0.0; CHANNELS]; 7];
    let mut counts = [0usize; 7];
    for (z, s) in &train {
        counts[*z] += 1;
        for (a, b) in centroids[*z].iter_mut().zip(s) {
            *a += b;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let correct = test
        .iter()
        .filter(|(z, s)| {
            let d = |c: &Vec<f64>| c.iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..7)
                .min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b])))
                .unwrap();
            best == *z
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc > 0.95, "centroid accuracy {acc}");
}
