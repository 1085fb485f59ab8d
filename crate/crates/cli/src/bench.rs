//! Throughput of the model on synthetic batches. Timings vary between runs
//! and machines; `--repeats` reports the median.

use std::time::Instant;

use anyhow::Result;
use clap::Args;
use qanet_core::model::{ModelRng, QaNet};
use qanet_core::synthetic::{generate, SyntheticConfig};
use qanet_core::tensor::Tape;
use qanet_core::train::build_featurizer;
use qanet_core::text::sequential_batches;
use rand::SeedableRng;
use serde_json::json;

use crate::ConfigArgs;

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Batches timed per repeat.
    #[arg(long, default_value_t = 3)]
    batches: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Longest synthetic context, in tokens.
    #[arg(long, default_value_t = 30)]
    context: usize,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

pub fn run(args: &BenchArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let bs = config.optim.batch_size;
    let data = generate(&SyntheticConfig {
        examples: bs * args.batches.max(1),
        max_context: args.context.max(8),
        seed: config.seed,
        ..Default::default()
    });
    let (feat, table) = build_featurizer(&config, &data, &[])?;
    let model = QaNet::new(config.model.clone(), table, feat.chars.len(), config.seed)?;
    let batches = sequential_batches(&data, &feat, bs);
    let examples: usize = batches.iter().map(|b| b.size).sum();
    let mut rng = ModelRng::seed_from_u64(config.seed);

    let mut fwd = Vec::new();
    let mut fwd_bwd = Vec::new();
    for _ in 0..args.repeats.max(1) {
        let t0 = Instant::now();
        for b in &batches {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            model.loss(&mut tape, &bound, b, None)?;
        }
        fwd.push(t0.elapsed().as_secs_f64());
        let t0 = Instant::now();
        for b in &batches {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let loss = model.loss(&mut tape, &bound, b, Some(&mut rng))?;
            tape.backward(loss)?;
        }
        fwd_bwd.push(t0.elapsed().as_secs_f64());
    }
    let (f, fb) = (median(fwd), median(fwd_bwd));
    let n = batches.len() as f64;
    let report = json!({
        "batch_size": bs,
        "batches": batches.len(),
        "repeats": args.repeats.max(1),
        "forward_examples_per_sec": examples as f64 / f,
        "forward_backward_examples_per_sec": examples as f64 / fb,
        "forward_batches_per_sec": n / f,
        "forward_backward_batches_per_sec": n / fb,
    });
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "forward: {:.2} examples/s ({:.3} batches/s)",
            examples as f64 / f,
            n / f
        );
        println!(
            "forward+backward: {:.2} examples/s ({:.3} batches/s)",
            examples as f64 / fb,
            n / fb
        );
        println!("median of {} repeats; expect run-to-run variation", args.repeats.max(1));
    }
    Ok(())
}
