//! Synthetic stand-in for the blood-pressure survey extract.
//!
//! Columns are `SBP` (mmHg), `BMI`, `Age` (years) and `Alcohol` (drinks per
//! day, `NA` when unreported). Alcohol is missing for a fixed share of rows,
//! preferentially for heavier drinkers, so the missingness is not at random.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::CliResult;
use crate::io::{fmt17, ColumnSpec, Transform, TransformOp, MISSING_TOKEN};

pub const SURVEY_ROWS: usize = 7104;
pub const SURVEY_MISSING_RATE: f64 = 0.5329;

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRow {
    pub sbp: f64,
    pub bmi: f64,
    pub age: f64,
    pub alcohol: Option<f64>,
}

/// Draws `n` rows; exactly `round(SURVEY_MISSING_RATE · n)` have `Alcohol` missing.
pub fn survey_like(n: usize, seed: u64) -> Vec<SurveyRow> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bmi_dist: Normal<f64> = Normal::new(28.5, 6.5).expect("valid");
    let drinks_dist: LogNormal<f64> = LogNormal::new(0.3, 0.8).expect("valid");
    let noise = Normal::new(0.0, 12.0).expect("valid");
    let mut rows = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let age = f64::from(rng.random_range(18u8..=80));
        let bmi = bmi_dist.sample(&mut rng).clamp(15.0, 60.0);
        let bmi = (bmi * 10.0).round() / 10.0;
        let drinks = if rng.random::<f64>() < 0.3 {
            0.0
        } else {
            ((drinks_dist.sample(&mut rng) - 1.0).max(0.0) * 100.0).round() / 100.0
        };
        let a = (age - 50.0) / 10.0;
        let spread = 1.0 + 0.15 * a.abs();
        let sbp = 118.0 + 0.5 * (bmi - 28.0) + 5.0 * a + 2.0 * a * a + 2.5 * drinks.ln_1p()
            + spread * noise.sample(&mut rng);
        let u: f64 = rng.random_range(1e-12..1.0);
        latent.push(1.2 * drinks.ln_1p() + (u / (1.0 - u)).ln());
        rows.push(SurveyRow {
            sbp: sbp.round(),
            bmi,
            age,
            alcohol: Some(drinks),
        });
    }
    let n_missing = (SURVEY_MISSING_RATE * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| latent[j].total_cmp(&latent[i]).then(i.cmp(&j)));
    for &i in &order[..n_missing] {
        rows[i].alcohol = None;
    }
    rows
}

pub fn write_survey<W: Write>(out: W, rows: &[SurveyRow], comment: &[String]) -> CliResult<()> {
    let mut out = out;
    for line in comment {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["SBP", "BMI", "Age", "Alcohol"])?;
    for r in rows {
        w.write_record([
            fmt17(r.sbp),
            fmt17(r.bmi),
            fmt17(r.age),
            r.alcohol.map(fmt17).unwrap_or_else(|| MISSING_TOKEN.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `Y = SBP`, `X = log(1 + Alcohol)`, `Z = (BMI, (Age − 50)/10, (Age − 50)²/100)`.
pub fn survey_spec() -> ColumnSpec {
    ColumnSpec {
        response: "SBP".into(),
        always_observed: vec!["BMI".into(), "Age".into(), "Age2".into()],
        missing_covariates: vec!["Alcohol".into()],
        transforms: vec![
            Transform {
                target: "Alcohol".into(),
                source: None,
                op: TransformOp::Log1p,
            },
            Transform {
                target: "Age".into(),
                source: None,
                op: TransformOp::Affine {
                    shift: 50.0,
                    scale: 10.0,
                },
            },
            Transform {
                target: "Age2".into(),
                source: Some("Age".into()),
                op: TransformOp::CenteredSquare {
                    center: 50.0,
                    scale: 100.0,
                },
            },
        ],
    }
}
