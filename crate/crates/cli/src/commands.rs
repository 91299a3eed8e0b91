use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nalgebra::DVector;
use serde::Serialize;

use relight_core::bounds::BoundTrial;
use relight_core::campaign::{
    bounds_campaign, factor_campaign, regret_campaign, Factor, FactorTrial, PerturbationRanges,
    SceneSource, SimilarSceneConfig,
};
use relight_core::conefit::{fit_approx, fit_exact, normalize_shading};
use relight_core::egm::{
    dirichlet_second_moment, egm_fit, egm_loss, radiosity_basis, second_moment,
};
use relight_core::io::{
    load_embeddings, load_scene, read_csv_matrix, read_csv_vector, EmbeddingFormat,
};
use relight_core::metrics::{
    fid, fid_infinity_bootstrap_se, fid_infinity_fit, local_fid_ranking, msd, DEFAULT_FID_SIZES,
};
use relight_core::radiosity::{weighted_norm_with, NormKind, DEFAULT_MAX_BOUNCES};
use relight_core::scenegen::SceneGenConfig;
use relight_core::{
    write_csv, CsvRecord, EmbeddingSet, GeneratorSet, LuminaireModel, RadiosityField, Scene,
    Transport,
};

use crate::{Cli, Command, FactorArg, FormatArg};

pub enum Outcome {
    Clean,
    Violations,
}

/// `--set` values; every key must be claimed by the command.
struct Overrides(BTreeMap<String, f64>);

impl Overrides {
    fn new(pairs: Vec<(String, f64)>) -> Self {
        Self(pairs.into_iter().collect())
    }

    fn take(&mut self, key: &str, default: f64) -> f64 {
        self.0.remove(key).unwrap_or(default)
    }

    fn take_count(&mut self, key: &str, default: usize) -> Result<usize> {
        let v = self.take(key, default as f64);
        ensure!(
            v >= 0.0 && v.fract() == 0.0,
            "{key} must be a non-negative integer, got {v}"
        );
        Ok(v as usize)
    }

    fn finish(self, command: &str) -> Result<()> {
        if !self.0.is_empty() {
            let keys: Vec<&str> = self.0.keys().map(String::as_str).collect();
            bail!("unknown --set key(s) for {command}: {}", keys.join(", "));
        }
        Ok(())
    }
}

/// The report sink. The one-line summary goes to stdout unless the report does.
struct Sink {
    out: Option<PathBuf>,
}

impl Sink {
    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn csv<R: CsvRecord>(&self, rows: &[R]) -> Result<()> {
        let mut w = self.writer()?;
        write_csv(rows, &mut w)?;
        w.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&self, value: &T) -> Result<()> {
        let mut w = self.writer()?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn summary(&self, line: String) {
        if self.out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
}

fn scene_at(path: &Path) -> Result<Scene> {
    Ok(load_scene(path)
        .with_context(|| format!("loading scene {}", path.display()))?
        .scene)
}

fn scene_source(path: Option<&PathBuf>) -> Result<SceneSource> {
    Ok(match path {
        Some(p) => SceneSource::Fixed(scene_at(p)?),
        None => SceneSource::Random(SceneGenConfig::default()),
    })
}

fn ranges(ov: &mut Overrides) -> PerturbationRanges {
    let d = PerturbationRanges::default();
    PerturbationRanges {
        max_cond: ov.take("max_cond", d.max_cond),
        max_eps_e: ov.take("max_eps_e", d.max_eps_e),
        max_eps_rho: ov.take("max_eps_rho", d.max_eps_rho),
    }
}

fn embeddings(path: &Path, format: Option<FormatArg>) -> Result<EmbeddingSet> {
    let format = match format {
        Some(FormatArg::Csv) => EmbeddingFormat::Csv,
        Some(FormatArg::Binary) => EmbeddingFormat::Binary,
        None => EmbeddingFormat::from_path(path),
    };
    load_embeddings(path, format).with_context(|| format!("loading embeddings {}", path.display()))
}

fn rows_of(path: &Path) -> Result<Vec<DVector<f64>>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let m = read_csv_matrix(file, path)?;
    Ok(m.row_iter().map(|r| r.transpose()).collect())
}

fn with_alpha(scene: Scene, alpha: f64) -> Result<Scene> {
    let lum = LuminaireModel::new(scene.luminaires().basis().to_vec(), alpha, &scene.areas())?;
    Ok(Scene::with_kernel_cap(
        scene.patches().to_vec(),
        lum,
        scene.kernel_cap(),
    )?)
}

fn outcome(violations: usize) -> Outcome {
    if violations == 0 {
        Outcome::Clean
    } else {
        Outcome::Violations
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let mut ov = Overrides::new(cli.overrides);
    let sink = Sink { out: cli.out };
    let seed = cli.seed;
    match cli.command {
        Command::Render { scene, theta } => {
            let tol = ov.take("neumann_tol", 1e-12);
            let max_bounces = ov.take_count("max_bounces", DEFAULT_MAX_BOUNCES)?;
            ov.finish("render")?;
            let scene = scene_at(&scene)?;
            let lum = scene.luminaires();
            ensure!(!lum.is_empty(), "scene has no luminaires");
            let theta = theta.unwrap_or_else(|| vec![1.0 / lum.len() as f64; lum.len()]);
            let e = RadiosityField::new(lum.mix(&theta)?);
            let t = Transport::new(&scene)?;
            let direct = t.solve_direct(&e)?;
            let neumann = t.solve_neumann(&e, tol, max_bounces)?;
            let areas = scene.areas();
            let diff = weighted_norm_with(
                &(neumann.field.values() - direct.values()),
                &areas,
                NormKind::L2,
            )?;
            let norm = weighted_norm_with(direct.values(), &areas, NormKind::L2)?;
            let mut w = sink.writer()?;
            direct.write_csv(&mut w)?;
            w.flush()?;
            sink.summary(format!(
                "render: {} patches, {} bounces, neumann/direct relative difference {:.3e}",
                scene.len(),
                neumann.bounces,
                diff / norm.max(f64::MIN_POSITIVE)
            ));
            Ok(Outcome::Clean)
        }
        Command::Perturb { scene, factor } => {
            let r = ranges(&mut ov);
            ov.finish("perturb")?;
            let factor = match factor {
                FactorArg::Luminaire => Factor::Luminaire,
                FactorArg::Albedo => Factor::Albedo,
                FactorArg::Geometry => Factor::Geometry,
            };
            let trials = cli.trials.unwrap_or(1000);
            let rows = factor_campaign(seed, trials, &scene_source(scene.as_ref())?, factor, &r)?;
            sink.csv(&rows)?;
            let bad = rows.iter().filter(|t: &&FactorTrial| !t.holds).count();
            sink.summary(format!(
                "perturb: {trials} {} trials, {bad} bound violations",
                factor.name()
            ));
            Ok(outcome(bad))
        }
        Command::VerifyBounds { scene } => {
            let r = ranges(&mut ov);
            ov.finish("verify-bounds")?;
            let trials = cli.trials.unwrap_or(1000);
            let rows = bounds_campaign(seed, trials, &scene_source(scene.as_ref())?, &r)?;
            sink.csv(&rows)?;
            let bad = rows
                .iter()
                .filter(|t: &&BoundTrial| !t.report.holds)
                .count();
            let worst = rows
                .iter()
                .map(|t| t.report.actual_diff / t.report.bound)
                .fold(0.0, f64::max);
            sink.summary(format!(
                "verify-bounds: {trials} trials, {bad} bound violations, largest actual/bound {worst:.4}"
            ));
            Ok(outcome(bad))
        }
        Command::Egm { scene, rank, alpha } => match cli.trials {
            Some(trials) => {
                let d = SimilarSceneConfig::default();
                let scenes = match scene {
                    Some(p) => {
                        let s = scene_at(&p)?;
                        SceneSource::Fixed(match alpha {
                            Some(a) => with_alpha(s, a)?,
                            None => s,
                        })
                    }
                    None => match d.scenes {
                        SceneSource::Random(mut g) => {
                            g.dirichlet_alpha = alpha.unwrap_or(g.dirichlet_alpha);
                            SceneSource::Random(g)
                        }
                        fixed => fixed,
                    },
                };
                let cfg = SimilarSceneConfig {
                    scenes,
                    rank,
                    min_k: ov.take_count("min_k", d.min_k)?,
                    max_k: ov.take_count("max_k", d.max_k)?,
                    max_cond: ov.take("max_cond", d.max_cond),
                    max_eps_rho: ov.take("max_eps_rho", d.max_eps_rho),
                };
                ov.finish("egm")?;
                let rows = regret_campaign(seed, trials, &cfg)?;
                sink.csv(&rows)?;
                let negative = rows.iter().filter(|t| t.regret < -1e-10).count();
                let loose = rows.iter().filter(|t| !t.loose_holds).count();
                let lp = rows.iter().filter(|t| !t.lp_holds).count();
                sink.summary(format!(
                    "egm: {trials} trials, {negative} negative regrets, {loose} loose-bound violations, {lp} lp-bound violations"
                ));
                Ok(outcome(negative + loose + lp))
            }
            None => {
                ov.finish("egm")?;
                let path = scene
                    .context("egm needs --scene to fit, or --trials for the regret campaign")?;
                let mut s = scene_at(&path)?;
                if let Some(a) = alpha {
                    s = with_alpha(s, a)?;
                }
                let lum = s.luminaires();
                let c = second_moment(
                    &radiosity_basis(&s)?,
                    &dirichlet_second_moment(lum.len(), lum.dirichlet_alpha())?,
                )?;
                let g = egm_fit(&c, rank)?;
                let loss = egm_loss(&g, &c)?;
                #[derive(Serialize)]
                struct Report {
                    rank: usize,
                    trace: f64,
                    loss: f64,
                    eigenvalues: Vec<f64>,
                    generators: Vec<Vec<f64>>,
                }
                sink.json(&Report {
                    rank,
                    trace: c.trace(),
                    loss,
                    eigenvalues: c.eigvals().iter().copied().collect(),
                    generators: g
                        .matrix()
                        .column_iter()
                        .map(|col| col.iter().copied().collect())
                        .collect(),
                })?;
                sink.summary(format!(
                    "egm: rank {rank}, loss {loss:.6e} of trace {:.6e}",
                    c.trace()
                ));
                Ok(Outcome::Clean)
            }
        },
        Command::Conefit {
            target,
            generators,
            ngd,
        } => {
            ov.finish("conefit")?;
            let t = normalize_shading(&read_csv_vector(&target)?)?;
            let gens: Vec<DVector<f64>> = rows_of(&generators)?;
            let gens = GeneratorSet::new(&gens)?;
            let fit = match ngd {
                Some(k) => fit_approx(&t, &gens, k)?,
                None => fit_exact(&t, &gens)?,
            };
            sink.json(&fit)?;
            sink.summary(format!(
                "conefit: residual {:.6e} after {} steps",
                fit.residual_sq, fit.steps_taken
            ));
            Ok(Outcome::Clean)
        }
        Command::Fid {
            embeddings: paths,
            format,
        } => {
            let n_sizes = ov.take_count("sizes", DEFAULT_FID_SIZES)?;
            ov.finish("fid")?;
            ensure!(
                paths.len() == 2,
                "fid needs exactly two --embeddings files, got {}",
                paths.len()
            );
            let a = embeddings(&paths[0], format)?;
            let b = embeddings(&paths[1], format)?;
            let full = fid(&a, &b)?;
            let fit = fid_infinity_fit(&a, &b, n_sizes, seed)?;
            let bootstrap_se = match cli.trials {
                Some(n) => Some(fid_infinity_bootstrap_se(&a, &b, n_sizes, seed, n)?),
                None => None,
            };
            #[derive(Serialize)]
            struct Report {
                fid: f64,
                fid_infinity: f64,
                slope: f64,
                intercept_se: f64,
                bootstrap_se: Option<f64>,
                sizes: Vec<usize>,
                fids: Vec<f64>,
            }
            sink.json(&Report {
                fid: full,
                fid_infinity: fit.intercept,
                slope: fit.slope,
                intercept_se: fit.intercept_se,
                bootstrap_se,
                sizes: fit.sizes.clone(),
                fids: fit.fids.clone(),
            })?;
            sink.summary(format!(
                "fid: {full:.6e}, fid_infinity {:.6e} (se {:.2e})",
                fit.intercept, fit.intercept_se
            ));
            Ok(Outcome::Clean)
        }
        Command::Lfid {
            embeddings: path,
            candidates,
            format,
            eig_floor,
        } => {
            ov.finish("lfid")?;
            let base = embeddings(&path, format)?;
            let cand = embeddings(&candidates, format)?;
            ensure!(
                cand.len() <= base.len(),
                "{} candidates for a base set of {} points",
                cand.len(),
                base.len()
            );
            let pairs: Vec<(usize, DVector<f64>)> =
                (0..cand.len()).map(|i| (i, cand.point(i))).collect();
            let ranking = local_fid_ranking(&base, &pairs, eig_floor)?;
            sink.csv(&ranking)?;
            let best = &ranking[0];
            sink.summary(format!(
                "lfid: ranked {} candidates, best index {} (lfid {:.6e})",
                ranking.len(),
                best.index,
                best.lfid
            ));
            Ok(Outcome::Clean)
        }
        Command::Msd {
            originals,
            relights,
        } => {
            ov.finish("msd")?;
            let value = msd(&rows_of(&originals)?, &rows_of(&relights)?)?;
            #[derive(Serialize)]
            struct Report {
                msd: f64,
            }
            sink.json(&Report { msd: value })?;
            sink.summary(format!("msd: {value:.6e}"));
            Ok(Outcome::Clean)
        }
    }
}
