use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use surfstokes::geometry::Surface;
use surfstokes::postprocess::write_study_outputs;
use surfstokes::spaces::Placement;
use surfstokes::study::{geometric_rates, run_diagnostics, run_study, StudyConfig};

/// Velocity levels above this size skip the dense inf-sup estimate.
const INFSUP_MAX_DOFS: usize = 6000;

/// Convergence studies for Taylor-Hood surface Stokes elements.
#[derive(Debug, Parser)]
#[command(name = "surfstokes", version)]
struct Args {
    /// Surface, `sphere:R` or `ellipsoid:a,b,c`.
    #[arg(long, default_value = "ellipsoid:1.1,1.2,1.3")]
    surface: Surface,
    /// Velocity degree; pressure uses `r - 1`.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=4))]
    r: u8,
    /// Geometry degree.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=5))]
    k: u8,
    /// Placement of the velocity nodes on element edges.
    #[arg(long, default_value = "gauss-lobatto")]
    dofs: Placement,
    /// Inclusive refinement range `a:b`.
    #[arg(long, default_value = "1:4", value_parser = parse_levels)]
    levels: (usize, usize),
    /// Assembly quadrature degree [default: 2r + 2].
    #[arg(long)]
    quad_degree: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also run the geometric, conformity, inf-sup and node-transfer probes.
    #[arg(long)]
    diagnostics: bool,
    /// Worker threads for assembly [default: all cores].
    #[arg(long)]
    threads: Option<usize>,
    /// Coarse OFF mesh refined `level` times instead of the icosphere.
    #[arg(long)]
    base_mesh: Option<PathBuf>,
}

fn parse_levels(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected a:b")?;
    let a: usize = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a > b {
        return Err(format!("empty range {a}:{b}"));
    }
    Ok((a, b))
}

fn run(args: Args) -> Result<()> {
    if let Some(n) = args.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let config = StudyConfig {
        surface: args.surface,
        r: args.r as usize,
        k: args.k as usize,
        placement: args.dofs,
        levels: args.levels,
        quad_degree: args.quad_degree,
        error_quad_degree: None,
        base_mesh: args.base_mesh,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let records = run_study(&config)?;
    println!("level        h   dofs   energy_err       l2_err  eoc_E  eoc_L2");
    for r in &records {
        let fmt = |v: Option<f64>| {
            v.map(|x| format!("{x:6.2}"))
                .unwrap_or_else(|| "     -".into())
        };
        println!(
            "{:5} {:8.4} {:6} {:12.4e} {:12.4e} {} {}",
            r.level,
            r.h,
            r.dofs,
            r.energy_error,
            r.l2_error,
            fmt(r.energy_eoc),
            fmt(r.l2_eoc)
        );
    }
    let [csv, json] =
        write_study_outputs(&records, &args.out, config.r, config.k, config.placement)?;
    println!("wrote {} and {}", csv.display(), json.display());

    if args.diagnostics {
        let diag = run_diagnostics(&config, INFSUP_MAX_DOFS)?;
        if diag.geometric.len() >= 2 {
            let [nu, d, mu] = geometric_rates(&diag.geometric)?;
            println!(
                "geometric rates (last interval): normal {:.2}, distance {:.2}, area factor {:.2}",
                nu.last().unwrap(),
                d.last().unwrap(),
                mu.last().unwrap()
            );
        }
        for (level, c) in &diag.conformity {
            println!(
                "level {level}: co-normal jump {:.2e} relative, {:.2e} nodal",
                c.max_relative_jump, c.max_nodal_jump
            );
        }
        for s in &diag.infsup {
            println!("level {}: inf-sup {:.5}", s.level, s.beta);
        }
        let path = args.out.join(format!(
            "diagnostics_r{}_k{}_{}.json",
            config.r, config.k, config.placement
        ));
        fs::write(&path, serde_json::to_string_pretty(&diag)?)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
