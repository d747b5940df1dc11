//! `vibra gradcheck` — finite-difference verification of every layer kind
//! plus the assembled network, printed as a pass/fail table. Exits 1 if any
//! component's gradients disagree with the central-difference oracle.

use std::process::ExitCode;
use std::time::Instant;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vibra_core::model::{Model, ModelConfig};
use vibra_core::nn::{maxpool1d, softmax, BatchNorm1d, Conv1d, Linear, Mode};
use vibra_core::spectral::{complex_hadamard, far_reconstruct, rdft, SpectralWeight};
use vibra_core::tensor::{gradcheck_named, GradReport};
use vibra_core::train::cross_entropy;
use vibra_core::{Real, Result, Tensor};

#[derive(Args)]
pub struct GradcheckArgs {
    /// Finite-difference step size
    #[arg(long, default_value_t = 1e-5)]
    step: Real,

    /// Maximum accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    tolerance: Real,

    /// Seed for probe shapes and values
    #[arg(long, default_value_t = 1234)]
    seed: u64,
}

struct Suite<'a> {
    rng: ChaCha8Rng,
    step: Real,
    tol: Real,
    results: Vec<(&'a str, GradReport)>,
}

impl<'a> Suite<'a> {
    fn random(&mut self, shape: &[usize], lo: Real, hi: Real) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<Real> = (0..n).map(|_| self.rng.gen_range(lo..hi)).collect();
        Tensor::param(data, shape).expect("probe shapes are valid")
    }

    fn constant(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<Real> = (0..n).map(|_| self.rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(data, shape).expect("probe shapes are valid")
    }

    fn check(
        &mut self,
        name: &'a str,
        loss: impl FnMut() -> Result<Tensor>,
        params: &[(String, Tensor)],
        probes: Option<usize>,
    ) -> Result<()> {
        let report = gradcheck_named(loss, params, self.step, self.tol, probes, &mut self.rng)?;
        self.results.push((name, report));
        Ok(())
    }
}

fn named_subset(model: &Model, prefix: &str) -> Vec<(String, Tensor)> {
    model
        .named_parameters()
        .into_iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .collect()
}

fn with_input(x: &Tensor, rest: Vec<(String, Tensor)>) -> Vec<(String, Tensor)> {
    let mut params = vec![(String::from("x"), x.clone())];
    params.extend(rest);
    params
}

pub fn run(args: &GradcheckArgs) -> Result<ExitCode> {
    let started = Instant::now();
    let mut suite = Suite {
        rng: ChaCha8Rng::seed_from_u64(args.seed),
        step: args.step,
        tol: args.tolerance,
        results: Vec::new(),
    };

    {
        let conv = Conv1d::new(2, 3, 3, 1, 1, &mut suite.rng)?;
        let x = suite.random(&[2, 2, 8], -1.0, 1.0);
        let c = suite.constant(&[2, 3, 8]);
        let params = with_input(
            &x,
            vec![
                (String::from("weight"), conv.weights.clone()),
                (String::from("bias"), conv.bias.clone()),
            ],
        );
        suite.check("conv1d", || Ok(conv.forward(&x)?.mul(&c)?.sum()), &params, None)?;
    }
    {
        let conv = Conv1d::new(2, 2, 4, 2, 1, &mut suite.rng)?;
        let x = suite.random(&[1, 2, 12], -1.0, 1.0);
        let c = suite.constant(conv.forward(&x)?.shape());
        let params = with_input(
            &x,
            vec![
                (String::from("weight"), conv.weights.clone()),
                (String::from("bias"), conv.bias.clone()),
            ],
        );
        suite.check(
            "conv1d strided",
            || Ok(conv.forward(&x)?.mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let conv = Conv1d::new_depthwise(3, 3, &mut suite.rng)?;
        let x = suite.random(&[2, 3, 10], -1.0, 1.0);
        let c = suite.constant(&[2, 3, 10]);
        let params = with_input(
            &x,
            vec![
                (String::from("weight"), conv.weights.clone()),
                (String::from("bias"), conv.bias.clone()),
            ],
        );
        suite.check(
            "conv1d depthwise",
            || Ok(conv.forward(&x)?.mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let layer = Linear::new(6, 4, &mut suite.rng)?;
        let x = suite.random(&[2, 6], -1.0, 1.0);
        let c = suite.constant(&[2, 4]);
        let params = with_input(
            &x,
            vec![
                (String::from("weight"), layer.weights.clone()),
                (String::from("bias"), layer.bias.clone()),
            ],
        );
        suite.check("linear", || Ok(layer.forward(&x)?.mul(&c)?.sum()), &params, None)?;
    }
    {
        let norm = BatchNorm1d::new(3)?;
        let x = suite.random(&[2, 3, 6], -2.0, 2.0);
        let c = suite.constant(&[2, 3, 6]);
        let params = with_input(
            &x,
            vec![
                (String::from("scale"), norm.scale.clone()),
                (String::from("shift"), norm.shift.clone()),
            ],
        );
        suite.check(
            "batchnorm",
            || Ok(norm.forward(&x, Mode::Train)?.mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let x = suite.random(&[2, 5], -2.0, 2.0);
        let c = suite.constant(&[2, 5]);
        let params = with_input(&x, Vec::new());
        suite.check("gelu", || Ok(x.gelu().mul(&c)?.sum()), &params, None)?;
    }
    {
        let x = suite.random(&[1, 2, 6], -2.0, 2.0);
        let c = suite.constant(&[1, 2, 6]);
        let params = with_input(&x, Vec::new());
        suite.check("softmax", || Ok(softmax(&x, 2)?.mul(&c)?.sum()), &params, None)?;
    }
    {
        let x = suite.random(&[1, 2, 9], -1.0, 1.0);
        let c = suite.constant(maxpool1d(&x, 3, 2)?.shape());
        let params = with_input(&x, Vec::new());
        suite.check(
            "maxpool",
            || Ok(maxpool1d(&x, 3, 2)?.mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let x = suite.random(&[2, 8], -1.0, 1.0);
        let c = suite.constant(&[2, 10]);
        let params = with_input(&x, Vec::new());
        suite.check(
            "spectrum (rdft)",
            || Ok(rdft(&x)?.packed().mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let x = suite.random(&[2, 6], -1.0, 1.0);
        let w_packed = suite.random(&[2, 8], -1.0, 1.0);
        let w = SpectralWeight::from_packed(w_packed.clone())?;
        let c = suite.constant(&[2, 8]);
        let params = with_input(&x, vec![(String::from("w"), w_packed)]);
        suite.check(
            "complex hadamard",
            || Ok(complex_hadamard(&rdft(&x)?, &w)?.packed().mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let x = suite.random(&[2, 8], -1.0, 1.0);
        let w_packed = suite.random(&[2, 10], -1.0, 1.0);
        let w = SpectralWeight::from_packed(w_packed.clone())?;
        let c = suite.constant(&[2, 8]);
        let params = with_input(&x, vec![(String::from("w"), w_packed)]);
        suite.check(
            "filter reconstruct",
            || Ok(far_reconstruct(&x, &w, 0.7)?.mul(&c)?.sum()),
            &params,
            None,
        )?;
    }

    let config = ModelConfig {
        input_length: 100,
        embed_channels: 3,
        embed_kernel: 7,
        num_blocks: 2,
        num_classes: 3,
        classifier_hidden: 8,
        ..ModelConfig::default()
    };
    let model = Model::new(&config, args.seed)?;
    {
        let x = suite.random(&[1, 1, 100], -1.0, 1.0);
        let c = suite.constant(&[1, 3, 100]);
        let params = with_input(&x, named_subset(&model, "embed."));
        suite.check(
            "spectral embedding",
            || Ok(model.embedding.forward(&x)?.mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let attn = &model.blocks[0].attention[0];
        let x = suite.random(&[1, 3, 9], -1.0, 1.0);
        let c = suite.constant(&[1, 3, 9]);
        let params = with_input(&x, named_subset(&model, "block0.attn0."));
        suite.check(
            "multiscale attention",
            || Ok(attn.forward(&x)?.mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let ffn = &model.blocks[0].feedforward[0];
        let x = suite.random(&[1, 3, 9], -1.0, 1.0);
        let c = suite.constant(&[1, 3, 9]);
        let params = with_input(&x, named_subset(&model, "block0.ffn0."));
        suite.check(
            "time-frequency feedforward",
            || Ok(ffn.forward(&x)?.mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let down = &model.downsamples[0];
        let x = suite.random(&[1, 3, 68], -1.0, 1.0);
        let c = suite.constant(down.forward(&x)?.shape());
        let params = with_input(&x, named_subset(&model, "down0."));
        suite.check(
            "downsample wide",
            || Ok(down.forward(&x)?.mul(&c)?.sum()),
            &params,
            Some(24),
        )?;
    }
    {
        let down = &model.downsamples[1];
        let x = suite.random(&[1, 3, 9], -1.0, 1.0);
        let c = suite.constant(down.forward(&x)?.shape());
        let params = with_input(&x, named_subset(&model, "down1."));
        suite.check(
            "downsample deep",
            || Ok(down.forward(&x)?.mul(&c)?.sum()),
            &params,
            None,
        )?;
    }
    {
        let x = suite.random(&[2, 1, 100], -1.0, 1.0);
        let labels = [0usize, 2];
        let params = with_input(&x, model.named_parameters());
        suite.check(
            "full model with cross entropy",
            || cross_entropy(&model.forward(&x, Mode::Train)?, &labels),
            &params,
            Some(3),
        )?;
    }

    let elapsed = started.elapsed().as_secs_f64();
    println!("{:<30} {:>12}  result", "component", "max rel err");
    let mut failures = Vec::new();
    for (name, report) in &suite.results {
        // Probes whose true gradient is indistinguishable from zero pass on
        // absolute error; their relative error is noise, so leave them out
        // of the displayed maximum.
        let shown = report
            .probes
            .iter()
            .filter(|p| p.analytic.abs().max(p.numeric.abs()) >= 1e-8)
            .map(|p| p.rel_err)
            .fold(0.0, Real::max);
        println!(
            "{name:<30} {shown:>12.3e}  {}",
            if report.passed { "pass" } else { "FAIL" }
        );
        if !report.passed {
            failures.push(*name);
        }
    }
    println!(
        "{} components in {elapsed:.1} s (step {}, tolerance {})",
        suite.results.len(),
        args.step,
        args.tolerance
    );

    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: {}", failures.join(", "));
        Ok(ExitCode::from(1))
    }
}
