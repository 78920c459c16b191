use clap::CommandFactory;
use pourplan::cli::Cli;
use pourplan::containers::default_specs;
use pourplan::sweep::{
    build_grid, run_sweep, save_database, Axis, ContainerAxes, GridSpec, SweepSettings,
};
use std::path::Path;
use std::process::{Command, Output};

fn pourplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pourplan"))
        .args(args)
        .env_remove("POURPLAN_SPECS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Small flask database written to `dir/pours.csv`.
fn small_db(dir: &Path) -> String {
    let grid = GridSpec {
        containers: vec![ContainerAxes {
            container: "flask".into(),
            v_start: Axis::Values(vec![50.0, 100.0]),
            theta_stop_deg: Axis::Values(vec![60.0, 120.0]),
            t_stop: Axis::Values(vec![1.0]),
        }],
        omega_deg_s: 30.0,
    };
    let params = build_grid(&grid, 3).unwrap();
    let db = run_sweep(&params, &default_specs(), &SweepSettings::default(), 1).unwrap();
    let path = dir.join("pours.csv");
    save_database(&db, &path).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn every_flag_is_in_help() {
    let cmd = Cli::command();
    for sub in cmd.get_subcommands() {
        let name = sub.get_name();
        let out = pourplan(&[name, "--help"]);
        assert!(out.status.success(), "{name}");
        let help = stdout(&out);
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(
                    help.contains(&format!("--{long}")),
                    "{name} --help lacks --{long}"
                );
            }
        }
    }
}

#[test]
fn upright_simulation_keeps_everything() {
    let out = pourplan(&[
        "simulate",
        "--container",
        "flask",
        "--v-start",
        "100",
        "--theta-stop",
        "0",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let field = |k: &str| row[header.iter().position(|h| *h == k).unwrap()];
    assert_eq!(field("v_remaining_ml"), "100");
    assert_eq!(field("v_received_ml"), "0");
    assert_eq!(field("v_spill_ml"), "0");
}

#[test]
fn simulate_writes_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dump.csv");
    let out = pourplan(&[
        "simulate",
        "--container",
        "flask",
        "--v-start",
        "30",
        "--theta-stop",
        "0",
        "--dump",
        dump.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&dump).unwrap();
    assert!(text.starts_with("step,particle_id,x_m,y_m,z_m,class\n"));
    assert!(text.lines().count() > 30);
}

#[test]
fn query_cost_map_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let db = small_db(dir.path());
    let traj = dir.path().join("traj.csv");
    let out = pourplan(&[
        "query",
        "--db",
        &db,
        "--container",
        "flask",
        "--start",
        "100",
        "--goal",
        "50",
        "--trajectory",
        traj.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.starts_with(
        "record_index,container,v_start_ml,theta_stop_deg,t_stop_s,v_received_ml,v_spill_ml,cost_ml\n"
    ));
    let trajectory = std::fs::read_to_string(&traj).unwrap();
    assert!(trajectory.starts_with("t_s,x_m,y_m,z_m,theta_deg\n"));
    assert!(trajectory.lines().count() > 100);

    let out = pourplan(&[
        "cost-map",
        "--db",
        &db,
        "--container",
        "flask",
        "--step",
        "5",
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("v_start_ml,v_goal_ml,min_cost_ml,record_index\n"));

    let out = pourplan(&["report", "--db", &db]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 5);

    let real = dir.path().join("real.csv");
    std::fs::write(
        &real,
        "container,v_start_real_ml,v_goal_ml,record_index,v_received_real_ml,v_spill_real_ml\n\
         flask,100,50,0,40,0\n",
    )
    .unwrap();
    let out = pourplan(&["report", "--db", &db, "--real", real.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("rmse_ml,"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("RMSE is "));

    // same flags, same bytes
    let again = pourplan(&[
        "cost-map",
        "--db",
        &db,
        "--container",
        "flask",
        "--step",
        "5",
    ]);
    let first = pourplan(&[
        "cost-map",
        "--db",
        &db,
        "--container",
        "flask",
        "--step",
        "5",
    ]);
    assert_eq!(again.stdout, first.stdout);
}

#[test]
fn exit_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pourplan(&["query", "--nope"]).status.code(), Some(1));
    assert_eq!(
        pourplan(&["sweep", "--preset", "huge"]).status.code(),
        Some(1)
    );
    let missing = pourplan(&["report", "--db", "/no/such/pours.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(msg.lines().count(), 1, "{msg}");
    assert!(msg.contains("/no/such/pours.csv"));

    let junk = dir.path().join("junk.csv");
    std::fs::write(&junk, "# pourdb v9; particle_volume_ml=1\n").unwrap();
    let out = pourplan(&["report", "--db", junk.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("v9"));

    let out = pourplan(&[
        "simulate",
        "--container",
        "beaker",
        "--v-start",
        "10",
        "--theta-stop",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn specs_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[container]\nid = flask\nkind = teapot\n").unwrap();
    let run = |path: &Path| {
        Command::new(env!("CARGO_BIN_EXE_pourplan"))
            .args([
                "simulate",
                "--container",
                "flask",
                "--v-start",
                "10",
                "--theta-stop",
                "0",
            ])
            .env("POURPLAN_SPECS", path)
            .output()
            .unwrap()
    };
    assert_eq!(run(&bad).status.code(), Some(2));
    assert_eq!(run(&dir.path().join("absent.cfg")).status.code(), Some(1));
}
