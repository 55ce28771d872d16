use std::fs;
use std::path::{Path, PathBuf};

use latent_render::graph::topological_order;
use latent_render::harness::{composite_pixels, opacity_sweep, run_generation};
use latent_render::pnm::{write_pgm, write_ppm};
use latent_render::scene::{parse_scene_unchecked, Diagnostic, SceneFile};
use latent_render::schedule::schedule_table;
use serde_json::{json, Value};

use crate::{Cli, Command, TableFormat};

/// What a command printed and what went wrong.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
}

struct Failure(Vec<Diagnostic>);

impl From<latent_render::Error> for Failure {
    fn from(e: latent_render::Error) -> Self {
        Failure(vec![Diagnostic::error("$", e.to_string())])
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure(vec![Diagnostic::error(path.display().to_string(), e.to_string())])
}

pub fn run(cli: &Cli) -> Outcome {
    let scene = match load_scene(cli) {
        Ok(scene) => scene,
        Err(Failure(diagnostics)) => {
            return Outcome {
                stdout: None,
                diagnostics,
            }
        }
    };
    let diagnostics = scene.diagnostics();

    if matches!(cli.command, Command::Validate) {
        return validate(&scene, diagnostics, cli.json_diagnostics);
    }
    if diagnostics.iter().any(Diagnostic::is_error) {
        return Outcome {
            stdout: None,
            diagnostics,
        };
    }

    let result = match &cli.command {
        Command::Validate => unreachable!("handled above"),
        Command::Sort => sort(&scene),
        Command::Schedule { format } => schedule(&scene, *format, cli.out.as_deref()),
        Command::Maps => maps(&scene, &out_dir(cli)),
        Command::Render => render(&scene, &out_dir(cli)),
        Command::Simulate => simulate(&scene, &out_dir(cli)),
        Command::Sweep { object, alphas } => sweep(&scene, object, alphas, &out_dir(cli)),
    };
    match result {
        Ok(stdout) => Outcome {
            stdout: Some(stdout),
            diagnostics,
        },
        Err(Failure(mut errors)) => {
            errors.extend(diagnostics);
            Outcome {
                stdout: None,
                diagnostics: errors,
            }
        }
    }
}

fn load_scene(cli: &Cli) -> Result<SceneFile, Failure> {
    let path = cli
        .scene
        .as_deref()
        .ok_or_else(|| Failure(vec![Diagnostic::error("--scene", "a scene file is required")]))?;
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let mut scene = parse_scene_unchecked(&text).map_err(|e| Failure(e.diagnostics()))?;
    if let Some(steps) = cli.steps {
        scene.schedule.steps = steps;
    }
    if let Some(seed) = cli.seed {
        scene.simulate.seed = seed;
    }
    if cli.no_attention_shaping {
        scene.render.attention_shaping = false;
    }
    Ok(scene)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn pretty(value: &Value) -> String {
    serde_json::to_string_pretty(value).expect("json values serialize")
}

fn validate(scene: &SceneFile, diagnostics: Vec<Diagnostic>, json: bool) -> Outcome {
    let errors = diagnostics.iter().filter(|d| d.is_error()).count();
    let stdout = if json {
        pretty(&json!({
            "valid": errors == 0,
            "objects": scene.objects.len(),
            "diagnostics": diagnostics,
        }))
    } else if errors == 0 {
        format!(
            "scene is valid: {} objects, {} warnings",
            scene.objects.len(),
            diagnostics.len()
        )
    } else {
        format!("scene is invalid: {errors} errors")
    };
    Outcome {
        stdout: Some(stdout),
        diagnostics,
    }
}

fn sort(scene: &SceneFile) -> Result<String, Failure> {
    let order = topological_order(&scene.graph())?;
    Ok(serde_json::to_string(order.ids()).expect("ids serialize"))
}

fn schedule_csv(scene: &SceneFile, table: &[Vec<f64>]) -> Result<String, Failure> {
    let steps = scene.schedule.steps;
    let mut writer = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once("id".to_string()).chain((1..=steps).rev().map(|t| format!("t{t}")));
    let csv_failure = |e: csv::Error| Failure(vec![Diagnostic::error("schedule", e.to_string())]);
    writer.write_record(header).map_err(csv_failure)?;
    for (obj, row) in scene.objects.iter().zip(table) {
        let record = std::iter::once(obj.id.clone()).chain(row.iter().map(|v| format!("{v:?}")));
        writer.write_record(record).map_err(csv_failure)?;
    }
    let bytes = writer.into_inner().map_err(|e| Failure(vec![Diagnostic::error("schedule", e.to_string())]))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8").trim_end().to_string())
}

fn schedule(scene: &SceneFile, format: TableFormat, out: Option<&Path>) -> Result<String, Failure> {
    let steps = scene.schedule.steps;
    let schedules = scene.schedules()?;
    let table = schedule_table(&schedules, steps)?;
    let (text, file) = match format {
        TableFormat::Csv => (schedule_csv(scene, &table)?, "schedule.csv"),
        TableFormat::Json => {
            let rows: Vec<Value> = scene
                .objects
                .iter()
                .zip(&schedules)
                .zip(&table)
                .map(|((obj, s), row)| json!({ "id": obj.id, "density": s.density, "sigma": row }))
                .collect();
            let body = json!({
                "kind": scene.schedule.kind,
                "steps": steps,
                "t": (1..=steps).rev().collect::<Vec<_>>(),
                "objects": rows,
            });
            (pretty(&body), "schedule.json")
        }
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_text(&dir.join(file), &format!("{text}\n"))?;
    }
    Ok(text)
}

fn maps(scene: &SceneFile, dir: &Path) -> Result<String, Failure> {
    ensure_dir(dir)?;
    let composite = composite_pixels(&scene.graph(), &scene.composite_options())?;
    let diag = &composite.diagnostics;
    let mut written = Vec::new();
    for (pos, id) in composite.order.ids().iter().enumerate() {
        for (prefix, map) in [
            ("transmittance", &composite.masks[pos]),
            ("visibility", &diag.transmittance[pos]),
            ("weight", &diag.weights[pos]),
        ] {
            let path = dir.join(format!("{prefix}_{pos:02}_{id}.pgm"));
            write_pgm(&path, map).map_err(|e| io_failure(&path, e))?;
            written.push(path);
        }
    }
    let path = dir.join("normalization.pgm");
    write_pgm(&path, &diag.normalization).map_err(|e| io_failure(&path, e))?;
    written.push(path);

    let path = dir.join("diagnostics.json");
    let body = json!({
        "order": composite.order,
        "densities": composite.densities,
        "transmittance_maps": composite.masks,
        "accumulated_transmittance": diag.transmittance,
        "weights": diag.weights,
        "normalization": diag.normalization,
    });
    write_text(&path, &serde_json::to_string(&body).expect("maps serialize"))?;
    written.push(path);

    Ok(pretty(&json!({ "written": written })))
}

fn render(scene: &SceneFile, dir: &Path) -> Result<String, Failure> {
    ensure_dir(dir)?;
    let composite = composite_pixels(&scene.graph(), &scene.composite_options())?;
    let path = dir.join("composite.ppm");
    write_ppm(&path, &composite.image).map_err(|e| io_failure(&path, e))?;
    Ok(pretty(&json!({
        "order": composite.order,
        "width": composite.image.width(),
        "height": composite.image.height(),
        "written": path,
    })))
}

fn simulate(scene: &SceneFile, dir: &Path) -> Result<String, Failure> {
    ensure_dir(dir)?;
    let config = scene.denoiser_config();
    let generation = run_generation(&scene.graph(), &config)?;
    let path = dir.join("trace.json");
    let trace = json!({ "config": config, "order": generation.order, "steps": generation.traces });
    write_text(&path, &serde_json::to_string_pretty(&trace).expect("trace serializes"))?;

    let values = generation.latent.values();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(pretty(&json!({
        "order": generation.order,
        "steps": generation.traces.len(),
        "final_latent": {
            "width": generation.latent.width(),
            "height": generation.latent.height(),
            "channels": generation.latent.channels(),
            "norm": generation.latent.norm(),
            "mean": mean,
            "min": min,
            "max": max,
        },
        "trace": path,
    })))
}

fn sweep(scene: &SceneFile, object: &str, alphas: &[f64], dir: &Path) -> Result<String, Failure> {
    ensure_dir(dir)?;
    let frames = opacity_sweep(&scene.graph(), object, alphas, &scene.composite_options())?;
    let mut summary = Vec::with_capacity(frames.len());
    for (k, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("sweep_{k:02}_{object}.ppm"));
        write_ppm(&path, &frame.image).map_err(|e| io_failure(&path, e))?;
        summary.push(json!({ "alpha": frame.alpha, "weight_share": frame.weight_share, "written": path }));
    }
    Ok(pretty(&json!({ "object": object, "frames": summary })))
}
