//! Microbenchmark of the conv kernels at the three layer shapes of the
//! default net, batch 32. Prints GFLOP/s per pass.

use gcl_core::nn::kernels::{conv3x3_backward, conv3x3_forward, dense_backward, dense_forward};
use std::time::Instant;

fn fill(v: &mut [f32], seed: u32, sparsity: f32) {
    let mut s = seed;
    for x in v.iter_mut() {
        s = s.wrapping_mul(1664525).wrapping_add(1013904223);
        let u = (s >> 8) as f32 / (1 << 24) as f32;
        *x = if u < sparsity { 0.0 } else { u - 0.5 };
    }
}

fn conv_case(name: &str, n: usize, h: usize, w: usize, ci: usize, co: usize, sparsity: f32) {
    let mut inp = vec![0.0f32; n * h * w * ci];
    let mut wgt = vec![0.0f32; 9 * ci * co];
    let mut bias = vec![0.0f32; co];
    fill(&mut inp, 1, sparsity);
    fill(&mut wgt, 2, 0.0);
    fill(&mut bias, 3, 0.0);
    let mut out = vec![0.0f32; n * h * w * co];
    let mut dout = vec![0.0f32; n * h * w * co];
    fill(&mut dout, 4, sparsity);
    let mut din = vec![0.0f32; inp.len()];
    let mut dw = vec![0.0f32; wgt.len()];
    let mut db = vec![0.0f32; co];

    let macs = (n * h * w * ci * co * 9) as f64;
    let reps = (2e9 / macs).ceil().max(1.0) as usize;

    let t = Instant::now();
    for _ in 0..reps {
        conv3x3_forward(&inp, n, h, w, ci, &wgt, &bias, co, true, &mut out);
    }
    let fwd = t.elapsed().as_secs_f64() / reps as f64;

    let t = Instant::now();
    for _ in 0..reps {
        conv3x3_backward(&inp, n, h, w, ci, &wgt, co, &dout, Some(&mut din), &mut dw, &mut db);
    }
    let bwd = t.elapsed().as_secs_f64() / reps as f64;

    let t = Instant::now();
    for _ in 0..reps {
        conv3x3_backward(&inp, n, h, w, ci, &wgt, co, &dout, None, &mut dw, &mut db);
    }
    let bwd_nodin = t.elapsed().as_secs_f64() / reps as f64;

    println!(
        "{name}: fwd {:.1} ms ({:.1} GF/s)  bwd {:.1} ms ({:.1} GF/s)  bwd-nodin {:.1} ms ({:.1} GF/s)",
        fwd * 1e3,
        2.0 * macs / fwd / 1e9,
        bwd * 1e3,
        4.0 * macs / bwd / 1e9,
        bwd_nodin * 1e3,
        2.0 * macs / bwd_nodin / 1e9,
    );
}

fn dense_case(name: &str, n: usize, fi: usize, fo: usize, sparsity: f32) {
    let mut inp = vec![0.0f32; n * fi];
    let mut wgt = vec![0.0f32; fi * fo];
    let mut bias = vec![0.0f32; fo];
    fill(&mut inp, 1, sparsity);
    fill(&mut wgt, 2, 0.0);
    fill(&mut bias, 3, 0.0);
    let mut out = vec![0.0f32; n * fo];
    let mut dout = vec![0.0f32; n * fo];
    fill(&mut dout, 4, sparsity);
    let mut din = vec![0.0f32; inp.len()];
    let mut dw = vec![0.0f32; wgt.len()];
    let mut db = vec![0.0f32; fo];

    let macs = (n * fi * fo) as f64;
    let reps = (2e9 / macs).ceil().max(1.0) as usize;

    let t = Instant::now();
    for _ in 0..reps {
        dense_forward(&inp, n, fi, &wgt, &bias, fo, true, &mut out);
    }
    let fwd = t.elapsed().as_secs_f64() / reps as f64;
    let t = Instant::now();
    for _ in 0..reps {
        dense_backward(&inp, n, fi, &wgt, fo, &dout, Some(&mut din), &mut dw, &mut db);
    }
    let bwd = t.elapsed().as_secs_f64() / reps as f64;
    println!(
        "{name}: fwd {:.1} ms ({:.1} GF/s)  bwd {:.1} ms ({:.1} GF/s)",
        fwd * 1e3,
        2.0 * macs / fwd / 1e9,
        bwd * 1e3,
        4.0 * macs / bwd / 1e9,
    );
}

fn main() {
    for sparsity in [0.0f32, 0.6] {
        println!("-- sparsity {sparsity}");
        conv_case("L1 150x150  3->16", 32, 150, 150, 3, 16, if sparsity > 0.0 { 0.0 } else { 0.0 });
        conv_case("L2  75x75  16->32", 32, 75, 75, 16, 32, sparsity);
        conv_case("L3  37x37  32->48", 32, 37, 37, 32, 48, sparsity);
        dense_case("FC 15552->512", 32, 15552, 512, sparsity);
    }
}
