use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;
use rmvl_core::training::EvalSummary;

/// PSNR against forecast step for the coarse and (if present) refined clips.
pub fn psnr_per_step_svg(summary: &EvalSummary, path: &Path) -> Result<()> {
    let coarse = &summary.psnr_coarse_per_step;
    let refined = summary.psnr_refined_per_step.as_deref();
    let all = coarse.iter().chain(refined.unwrap_or(&[]));
    let (lo, hi) = all.fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo <= hi { (lo.floor() - 1.0, hi.ceil() + 1.0) } else { (0.0, 1.0) };
    let steps = coarse.len().max(1) as f64;

    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("PSNR per forecast step", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(1.0..steps, lo..hi)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("PSNR (dB)")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    let series = |v: &[f64]| v.iter().enumerate().map(|(i, &p)| (i as f64 + 1.0, p)).collect::<Vec<_>>();
    chart
        .draw_series(LineSeries::new(series(coarse), &BLUE))
        .map_err(|e| anyhow!("{e}"))?
        .label("coarse")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    if let Some(r) = refined {
        chart
            .draw_series(LineSeries::new(series(r), &RED))
            .map_err(|e| anyhow!("{e}"))?
            .label("refined")
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}
