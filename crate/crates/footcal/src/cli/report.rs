//! Human-readable summary of the calibration results.

use super::artifacts::{read_toml, MANUAL_SCHEMA, RESULT_SCHEMA};
use super::stages::ResultFile;
use super::{PipelineConfig, PipelineError};
use crate::selfcal::{Role, Variant};

/// Render the MAE tables from the result artifacts in the config's
/// output directory: the self-calibration variants by role, and the
/// manual-calibration table when present.
pub fn render_report(config: &PipelineConfig) -> Result<String, PipelineError> {
    let result_path = config.out_dir.join("selfcal_result.toml");
    let result: ResultFile = read_toml(&result_path, RESULT_SCHEMA)?;

    let mut out = String::new();
    out.push_str(&format!("self-calibration result (seed {})\n", result.seed));
    out.push_str(&format!(
        "initial guess: scale {:.4} N/V, offset {:.4} N\n\n",
        result.initial_scale, result.initial_offset
    ));

    let has_test = result.rows.iter().any(|r| r.role == Role::Test);
    if !has_test {
        out.push_str("warning: no test datasets; training columns only\n\n");
    }
    let roles: &[Role] = if has_test {
        &[Role::Train, Role::Test]
    } else {
        &[Role::Train]
    };

    out.push_str(&format!("{:<12}", "variant"));
    for role in roles {
        let name = match role {
            Role::Train => "train",
            Role::Test => "test",
        };
        out.push_str(&format!(
            "{:>16}{:>16}",
            format!("{name} GRF (N)"),
            format!("{name} CoP (mm)")
        ));
    }
    out.push('\n');
    for variant in Variant::ALL {
        out.push_str(&format!("{:<12}", variant.name()));
        for role in roles {
            match result
                .rows
                .iter()
                .find(|r| r.variant == variant && r.role == *role)
            {
                Some(row) => {
                    out.push_str(&format!(
                        "{:>16}{:>16}",
                        format!("{:.3} ± {:.3}", row.grf.mean, row.grf.std),
                        format!("{:.2} ± {:.2}", row.cop.mean, row.cop.std)
                    ));
                }
                None => out.push_str(&format!("{:>16}{:>16}", "-", "-")),
            }
        }
        out.push('\n');
    }

    // Manual calibration table, when that stage has run.
    let manual_path = config.out_dir.join("manual_cal.toml");
    if manual_path.exists() {
        #[derive(serde::Deserialize)]
        struct Shoe {
            side: String,
            raw_cop_mae: crate::manual_cal::MaeReport,
            corrected_cop_mae: crate::manual_cal::MaeReport,
            grf_mae: crate::manual_cal::MaeReport,
        }
        #[derive(serde::Deserialize)]
        struct ManualFile {
            #[allow(dead_code)]
            schema: String,
            shoes: Vec<Shoe>,
        }
        let manual: ManualFile = read_toml(&manual_path, MANUAL_SCHEMA)?;
        out.push_str("\nmanual calibration (grid protocol)\n");
        out.push_str(&format!(
            "{:<8}{:>16}{:>20}{:>20}\n",
            "shoe", "GRF MAE (N)", "measured CoP (mm)", "corrected CoP (mm)"
        ));
        for shoe in manual.shoes {
            out.push_str(&format!(
                "{:<8}{:>16}{:>20}{:>20}\n",
                shoe.side,
                format!("{:.3} ± {:.3}", shoe.grf_mae.mean, shoe.grf_mae.std),
                format!("{:.2} ± {:.2}", shoe.raw_cop_mae.mean, shoe.raw_cop_mae.std),
                format!(
                    "{:.2} ± {:.2}",
                    shoe.corrected_cop_mae.mean, shoe.corrected_cop_mae.std
                ),
            ));
        }
    }
    Ok(out)
}
