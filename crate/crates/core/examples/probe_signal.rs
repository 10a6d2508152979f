// Scratch: raw separability of the planted bins from simple image statistics.
use graspformer_core::data::{generate_grasp, planted_params, SyntheticSpec};

fn main() {
    let spec = SyntheticSpec {
        samples: 120,
        tactile_height: 32, tactile_width: 24,
        visual_height: 32, visual_width: 24,
        seed: 33, class_margin: 0.08,
        ..SyntheticSpec::default()
    };
    let samples = generate_grasp(&spec).unwrap();
    let mut blob_by_hbin: Vec<Vec<f32>> = vec![vec![]; 3];
    let mut grad_by_tbin: Vec<Vec<f32>> = vec![vec![]; 2];
    let mut green_by_tbin: Vec<Vec<f32>> = vec![vec![]; 2];
    for (i, s) in samples.iter().enumerate() {
        let p = planted_params(&spec, i);
        let h_bin = ((p.safe_lo - 5) / 3) as usize;
        let t_bin = ((p.safe_hi - p.safe_lo - 2) / 2) as usize;
        // (a) final-frame mean intensity of the pinch blob
        let seq = &s.pinch_tactile;
        let f = seq.frames() - 1;
        let mut mean = 0.0f32;
        for y in 0..seq.height() { for x in 0..seq.width() { mean += seq.pixel(f, y, x, 0); } }
        mean /= (seq.height() * seq.width()) as f32;
        blob_by_hbin[h_bin].push(mean);
        // (b) slide tactile horizontal gradient magnitude (stripe frequency proxy)
        let seq = &s.slide_tactile;
        let mut grad = 0.0f32;
        for y in 0..seq.height() { for x in 1..seq.width() {
            grad += (seq.pixel(0, y, x, 0) - seq.pixel(0, y, x - 1, 0)).abs();
        } }
        grad /= (seq.height() * (seq.width() - 1)) as f32;
        grad_by_tbin[t_bin].push(grad);
        // (c) visual G-channel mean
        let seq = &s.pinch_visual;
        let mut g = 0.0f32;
        for y in 0..seq.height() { for x in 0..seq.width() { g += seq.pixel(0, y, x, 1); } }
        g /= (seq.height() * seq.width()) as f32;
        green_by_tbin[t_bin].push(g);
    }
    let stats = |v: &[f32]| {
        let m = v.iter().sum::<f32>() / v.len() as f32;
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f32>() / v.len() as f32).sqrt();
        (m, sd)
    };
    for (b, v) in blob_by_hbin.iter().enumerate() {
        let (m, sd) = stats(v);
        println!("pinch-tactile mean @h_bin{b}: {m:.4} +/- {sd:.4} (n={})", v.len());
    }
    for (b, v) in grad_by_tbin.iter().enumerate() {
        let (m, sd) = stats(v);
        println!("slide-tactile |dI/dx| @t_bin{b}: {m:.4} +/- {sd:.4}");
    }
    for (b, v) in green_by_tbin.iter().enumerate() {
        let (m, sd) = stats(v);
        println!("visual green mean @t_bin{b}: {m:.4} +/- {sd:.4}");
    }
}
