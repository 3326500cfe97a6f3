use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::classical::{run_mcmc, McmcConfig};
use crate::error::{invalid, Result};
use crate::model::{Dataset, PriorSpec};
use crate::nbe::NbeModel;
use crate::npe::NpeModel;

/// Mean and sample standard deviation of `repeats` stopwatch measurements of `f`.
pub fn time_repeated(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<(f64, f64)> {
    if repeats == 0 {
        return Err(invalid("repeats must be at least 1"));
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / repeats as f64;
    let sd = if repeats > 1 {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, sd))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(invalid("a linear fit needs at least 3 paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("x values are all equal"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(LinearFit { intercept, slope, slope_se: (rss / (n - 2.0) / sxx).sqrt() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    /// MCMC iterations per chain, NPE samples; ignored by NBE.
    pub size: usize,
    /// Mean seconds per dataset.
    pub mean_seconds: f64,
    pub sd_seconds: f64,
    pub repeats: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    /// Time against size, per method.
    pub fits: Vec<(String, LinearFit)>,
}

impl TimingReport {
    pub fn fit(&self, method: &str) -> Option<&LinearFit> {
        self.fits.iter().find(|(m, _)| m == method).map(|(_, f)| f)
    }
}

#[derive(Clone, Copy, Default)]
pub struct TimingTargets<'a> {
    pub nbe: Option<&'a NbeModel>,
    pub npe: Option<&'a NpeModel>,
    pub mcmc: Option<(&'a PriorSpec, &'a McmcConfig)>,
}

/// Mean inference time per dataset for every method and size. MCMC runs use
/// a burn-in of one fifth of the iterations.
pub fn timing_harness(targets: TimingTargets<'_>, datasets: &[Dataset], sizes: &[usize], repeats: usize) -> Result<TimingReport> {
    if datasets.is_empty() || sizes.is_empty() {
        return Err(invalid("timing needs datasets and sizes"));
    }
    let per_dataset = datasets.len() as f64;
    let mut rows = Vec::new();
    let mut push = |method: &str, size: usize, f: &mut dyn FnMut() -> Result<()>| -> Result<()> {
        let (mean, sd) = time_repeated(repeats, f)?;
        rows.push(TimingRow {
            method: method.to_string(),
            size,
            mean_seconds: mean / per_dataset,
            sd_seconds: sd / per_dataset,
            repeats,
        });
        Ok(())
    };
    for &size in sizes {
        if let Some(nbe) = targets.nbe {
            push("nbe", size, &mut || datasets.iter().try_for_each(|d| nbe.estimate(d).map(drop)))?;
        }
        if let Some(npe) = targets.npe {
            push("npe", size, &mut || datasets.iter().try_for_each(|d| npe.sample_posterior(d, size, 0).map(drop)))?;
        }
        if let Some((prior, base)) = targets.mcmc {
            let cfg = McmcConfig { n_iterations: size, n_burnin: size / 5, ..base.clone() };
            push("mcmc", size, &mut || datasets.iter().try_for_each(|d| run_mcmc(d, prior, &cfg).map(drop)))?;
        }
    }
    let mut fits = Vec::new();
    if sizes.len() >= 3 {
        for method in ["nbe", "npe", "mcmc"] {
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| r.method == method).map(|r| (r.size as f64, r.mean_seconds)).unzip();
            if xs.len() >= 3 {
                fits.push((method.to_string(), linear_fit(&xs, &ys)?));
            }
        }
    }
    Ok(TimingReport { rows, fits })
}
