use hfl_core::semlabel::{self, ClassProbabilityStack};
use hfl_core::spectral::{AffinityOptions, EigenOptions, SpectralOptions};
use hfl_core::spectral;

use crate::args::{LabelArgs, SpectralArgs};
use crate::error::{AtPath, CliError, CliResult};
use crate::io;
use crate::manifest::{manifest_path_for, Manifest};

pub fn spectral(a: &SpectralArgs, jobs: usize) -> CliResult<()> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be positive".into()));
    }
    let map = io::load_boundary(&a.boundary)?;
    let opts = SpectralOptions {
        affinity: AffinityOptions {
            radius: a.radius,
            sigma: a.sigma,
            sigma_frac: a.sigma_frac,
            neighborhood: a.neighborhood.into(),
            line: a.line.into(),
        },
        eigen: EigenOptions {
            k: a.k,
            tol: a.tol,
            max_iter: a.max_iter,
            seed: a.seed,
        },
        decimate_max: (a.decimate_max > 0).then_some(a.decimate_max),
        drop_trivial: a.drop_trivial,
    };
    let (emb, channels) = spectral::spectral_channels(&map, &opts).at(&a.boundary)?;
    io::save_tensor(&channels, &a.out)?;

    let mut m = Manifest::new("spectral", jobs);
    m.option("k", a.k);
    m.option("radius", a.radius);
    m.option("sigma", a.sigma.map_or("auto".to_string(), |s| s.to_string()));
    m.option("sigma_frac", a.sigma_frac);
    m.option("neighborhood", format!("{:?}", a.neighborhood).to_lowercase());
    m.option("line", format!("{:?}", a.line).to_lowercase());
    m.option("decimate_max", a.decimate_max);
    m.option("tol", a.tol);
    m.option("max_iter", a.max_iter);
    m.option("seed", a.seed);
    m.option("drop_trivial", a.drop_trivial);
    m.input("boundary", &a.boundary)?;
    m.output("channels", &a.out);
    m.result("working_dims", format!("{}x{}", emb.dims.0, emb.dims.1));
    m.result("iterations", emb.iterations);
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:.12e}")).collect::<Vec<_>>().join(",");
    m.result("eigenvalues", list(&emb.eigenvalues));
    m.result("residuals", list(&emb.residuals));
    m.write(&manifest_path_for(&a.out))
}

pub fn label(a: &LabelArgs, jobs: usize) -> CliResult<()> {
    let bmap = io::load_boundary(&a.boundary)?;
    let (labeled, source) = match (&a.probs, &a.seg) {
        (Some(p), _) => {
            let probs = ClassProbabilityStack::from_tensor(io::load_tensor(p)?).at(p)?;
            let out = semlabel::label_with_probs(&bmap, &probs, a.grid, a.bthresh).at(p)?;
            (out, p)
        }
        (None, Some(s)) => {
            let seg = io::load_labels(s)?;
            let out = semlabel::label_with_segmentation(&bmap, &seg, a.grid, a.bthresh).at(s)?;
            (out, s)
        }
        (None, None) => return Err(CliError::Usage("one of --probs or --seg is required".into())),
    };
    let conf_path = io::sibling(&a.out, ".confidence.hflt");
    io::save_tensor(&labeled.labels.to_tensor(), &a.out)?;
    io::save_tensor(&labeled.confidence.to_tensor(), &conf_path)?;

    let mut m = Manifest::new("label", jobs);
    m.option("grid", a.grid);
    m.option("bthresh", a.bthresh);
    m.option("source", if a.probs.is_some() { "probs" } else { "seg" });
    m.input("boundary", &a.boundary)?;
    m.input(if a.probs.is_some() { "probs" } else { "seg" }, source)?;
    m.output("labels", &a.out);
    m.output("confidence", &conf_path);
    m.result("labeled_pixels", labeled.support().iter().filter(|&&b| b).count());
    m.write(&manifest_path_for(&a.out))
}
