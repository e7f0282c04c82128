//! Table, wall and obstacle reached in sequence over five trials, learning
//! each contact's location and approach velocity.

use contactflux::harness::{parse_config_str, run_experiment, Scenario};

const CONFIG: &str = r#"
experiment = "full_task"
name = "three_contacts"
seed = 41
trials = 5

[trajectory]
generator = "sliding"
"#;

fn main() -> contactflux::Result<()> {
    let sc = Scenario::new(parse_config_str(CONFIG, &[])?)?;
    let result = run_experiment(&sc)?;
    for r in result.reports() {
        println!(
            "trial {}: completion {:.3} s, max commanded accel {:.3} m/s², anomalies {}",
            r.trial,
            r.completion_time,
            r.max_command_accel,
            r.anomalies.len()
        );
        for c in &r.contacts {
            println!(
                "    {:<9} v {:.4} m/s  peak {:>6.2} N  location error {:.4} m",
                c.contact_id,
                c.approach_velocity,
                c.impact_peak.unwrap_or(f64::NAN),
                c.position_error.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
