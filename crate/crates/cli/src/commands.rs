//! The four workflows behind the subcommands.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use dpca_core::{
    anomaly, build_graph, fit_concentration, linalg, message_stats, spectrum, synth,
    DecomposableGraph, MessageLog, SampleSet,
};

use crate::io;

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_inputs(graph: &Path, data: &Path, center: bool) -> Result<(DecomposableGraph, SampleSet)> {
    let graph = io::load_graph(graph)?;
    let data = io::load_samples(data)?;
    if data.p() != graph.p() {
        bail!(
            "data has {} columns but graph expects p={}",
            data.p(),
            graph.p()
        );
    }
    Ok((graph, if center { data.centered() } else { data }))
}

/// Dense-EVD eigenvalues in ascending order (oracle comparisons).
fn dense_eigenvalues(k: &dpca_core::BlockSparseConcentration) -> Vec<f64> {
    let eig = SymmetricEigen::new(k.dense());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    vals
}

// ---------------------------------------------------------------- gen

pub fn cmd_gen(preset: &str, seed: u64, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut rng = synth::rng(seed);

    let (graph, samples, injections) = match preset {
        "paper-tracking" => {
            let graph = synth::tracking_graph();
            let samples = synth::standard_normal_matrix(5500, graph.p(), &mut rng);
            (graph, samples, Vec::new())
        }
        "two-clique-toy" => {
            let graph = build_graph(3, &[vec![0, 1], vec![1, 2]])?;
            let truth = synth::random_concentration(&graph, &mut rng)?;
            let samples = synth::sample_gaussian(&truth, 200, &mut rng)?;
            (graph, samples.matrix().clone(), Vec::new())
        }
        "anomaly" => {
            let graph = synth::clique_chain_graph(3, 12, 3)?;
            let truth = synth::random_concentration(&graph, &mut rng)?;
            let clean = synth::sample_gaussian(&truth, 1000, &mut rng)?;
            // spike deep in the residual subspace, each injection along a
            // different low-variance direction so the refit on contaminated
            // data cannot absorb them into the principal subspace; amplitude
            // pegged above the clean detection quantile
            let model = anomaly::fit_model(&clean, &graph, 2)?;
            let clean_res = anomaly::residual_norms(&model, &clean)?;
            let baseline = anomaly::quantile(&clean_res.norms, 0.995);
            let eig = SymmetricEigen::new(truth.dense());
            let mut order: Vec<usize> = (0..truth.p()).collect();
            order.sort_by(|&a, &b| {
                eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap()
            });
            let injections = vec![100usize, 300, 500, 700, 900];
            let mut contaminated = clean.matrix().clone();
            for (i, &t) in injections.iter().enumerate() {
                let direction: DVector<f64> = eig.eigenvectors.column(order[i]).into();
                synth::inject_spike(&mut contaminated, t, &direction, 3.0 * baseline);
            }
            (graph, contaminated, injections)
        }
        other => bail!(
            "unknown preset '{other}' (expected paper-tracking, two-clique-toy, or anomaly)"
        ),
    };

    io::save_graph(&out.join("graph.json"), &graph)?;
    io::save_samples(&out.join("samples.csv"), &samples)?;

    // ground truth: the generating concentration as clique blocks (identity
    // for the white-noise preset), plus injection times
    let true_k = match preset {
        "paper-tracking" => {
            let identity = DMatrix::<f64>::identity(graph.p(), graph.p());
            dpca_core::BlockSparseConcentration::from_dense(&graph, &identity)?
        }
        _ => {
            // regenerate from the same seed so the manifest matches the data
            let mut rng = synth::rng(seed);
            synth::random_concentration(&graph, &mut rng)?
        }
    };
    let blocks: Vec<Vec<f64>> = (0..graph.num_cliques())
        .map(|k| {
            true_k
                .clique_block(k)
                .row_iter()
                .flat_map(|row| row.iter().copied().collect::<Vec<f64>>())
                .collect()
        })
        .collect();
    let manifest = serde_json::json!({
        "preset": preset,
        "seed": seed,
        "n": samples.nrows(),
        "p": graph.p(),
        "injections": injections,
        "true_concentration_blocks": blocks,
    });
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

// ---------------------------------------------------------------- eig

#[allow(clippy::too_many_arguments)]
pub fn cmd_eig(
    graph: &Path,
    data: &Path,
    components: usize,
    tol: f64,
    oracle: bool,
    center: bool,
    out: Option<&Path>,
) -> Result<()> {
    let (graph, data) = load_inputs(graph, data, center)?;
    if components == 0 || components > graph.p() {
        bail!(
            "components must be in 1..={}, got {components}",
            graph.p()
        );
    }
    let k = fit_concentration(&data, &graph)?;
    let mut log = MessageLog::new();
    let pairs = spectrum(&k, components, tol, &mut log)?;
    let stats = message_stats(&log, graph.p());
    let oracle_vals = oracle.then(|| dense_eigenvalues(&k));

    let mut report = String::new();
    for (i, pair) in pairs.iter().enumerate() {
        report += &format!(
            "component {}: lambda={} bracket_width={} iterations={}",
            i + 1,
            io::fmt(pair.lambda),
            io::fmt(pair.bracket_width),
            pair.iterations
        );
        if let Some(vals) = &oracle_vals {
            report += &format!(" oracle_delta={}", io::fmt((pair.lambda - vals[i]).abs()));
        }
        report.push('\n');
    }
    report += &format!(
        "messages: count={} max_dim={} total_entries={} total_bytes={} centralized_dim={}\n",
        stats.count, stats.max_dim, stats.total_entries, stats.total_bytes, stats.centralized_dim
    );

    if let Some(path) = out {
        let mut csv = String::from("component,lambda,bracket_width,iterations");
        if oracle {
            csv += ",oracle_delta";
        }
        csv.push('\n');
        for (i, pair) in pairs.iter().enumerate() {
            csv += &format!(
                "{},{},{},{}",
                i + 1,
                io::fmt(pair.lambda),
                io::fmt(pair.bracket_width),
                pair.iterations
            );
            if let Some(vals) = &oracle_vals {
                csv += &format!(",{}", io::fmt((pair.lambda - vals[i]).abs()));
            }
            csv.push('\n');
        }
        write_output(Some(path), &csv)?;
    }
    print!("{report}");
    Ok(())
}

// ---------------------------------------------------------------- track

#[allow(clippy::too_many_arguments)]
pub fn cmd_track(
    graph: &Path,
    data: &Path,
    window: usize,
    overlap: usize,
    tol: f64,
    warm_margin: f64,
    oracle: bool,
    iters: bool,
    center: bool,
    out: Option<&Path>,
) -> Result<()> {
    let (graph, data) = load_inputs(graph, data, center)?;
    let trace = anomaly::track(&data, &graph, window, overlap, tol, warm_margin)?;
    let max_iters = trace.windows.iter().map(|w| w.history.len()).max().unwrap_or(0);

    let mut csv = String::from("window_start,lambda,bracket_width,iterations,messages_bytes");
    if oracle {
        csv += ",oracle_delta";
    }
    if iters {
        for i in 1..=max_iters {
            csv += &format!(",t_{i}");
        }
    }
    csv.push('\n');

    for w in &trace.windows {
        csv += &format!(
            "{},{},{},{},{}",
            w.start,
            io::fmt(w.lambda),
            io::fmt(w.bracket_width),
            w.iterations,
            w.message_bytes
        );
        if oracle {
            let chunk = data.window(w.start, window)?;
            let k = fit_concentration(&chunk, &graph)?;
            let exact = linalg::sym_eig_min(&k.dense())?;
            csv += &format!(",{}", io::fmt((w.lambda - exact).abs()));
        }
        if iters {
            for i in 0..max_iters {
                match w.history.get(i) {
                    Some(rec) => csv += &format!(",{}", io::fmt(rec.t)),
                    None => csv.push(','),
                }
            }
        }
        csv.push('\n');
    }
    write_output(out, &csv)
}

// ---------------------------------------------------------------- detect

const DETECT_QUANTILE: f64 = 0.995;

pub fn cmd_detect(
    graph: &Path,
    data: &Path,
    components: usize,
    compare: &[PathBuf],
    center: bool,
    out: Option<&Path>,
) -> Result<()> {
    let (graph, data) = load_inputs(graph, data, center)?;
    if components == 0 || components > graph.p() {
        bail!(
            "components must be in 1..={}, got {components}",
            graph.p()
        );
    }
    let model = anomaly::fit_model(&data, &graph, components)?;
    let series = anomaly::residual_norms(&model, &data)?;
    let flagged = anomaly::detect(&series, anomaly::DetectRule::Quantile(DETECT_QUANTILE))?;

    let mut compare_series: Vec<Vec<f64>> = Vec::new();
    for path in compare {
        let alt_graph = io::load_graph(path)?;
        if alt_graph.p() != graph.p() {
            bail!(
                "compare graph {} has p={} but data has p={}",
                path.display(),
                alt_graph.p(),
                graph.p()
            );
        }
        let alt_model = anomaly::fit_model(&data, &alt_graph, components)?;
        compare_series.push(anomaly::residual_norms(&alt_model, &data)?.norms);
    }

    let mut csv = String::from("index,residual");
    for i in 1..=compare_series.len() {
        csv += &format!(",residual_compare_{i}");
    }
    csv += ",flagged\n";
    for (i, &norm) in series.norms.iter().enumerate() {
        csv += &format!("{},{}", i, io::fmt(norm));
        for alt in &compare_series {
            csv += &format!(",{}", io::fmt(alt[i]));
        }
        csv += &format!(",{}\n", usize::from(flagged.binary_search(&i).is_ok()));
    }
    write_output(out, &csv)?;

    if out.is_some() {
        let list: Vec<String> = flagged.iter().map(|i| i.to_string()).collect();
        println!("anomalies: {}", list.join(","));
    }
    Ok(())
}
