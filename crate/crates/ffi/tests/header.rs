//! The checked-in header must compile as C and C++ and declare every exported function.

use std::path::Path;
use std::process::Command;

fn header() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("failprob.h")
}

#[test]
fn declares_exports() {
    let text = std::fs::read_to_string(header()).unwrap();
    for f in [
        "fp_last_error",
        "fp_version",
        "fp_scenario_new",
        "fp_scenario_free",
        "fp_scenario_dimension",
        "fp_scenario_default_epsilon",
        "fp_rollout",
        "fp_log_posterior_grad",
        "fp_mean_dispersion",
        "fp_run_new",
        "fp_run_free",
        "fp_run_num_draws",
        "fp_run_num_failures",
        "fp_run_dispersion",
        "fp_run_draw",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(text.contains("typedef struct FpScenario FpScenario;"));
    assert!(text.contains("FP_STATUS_OK = 0"));
}

fn compiles(compiler: &str, flags: &[&str]) {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"failprob.h\"\n\
         int use(void) {\n\
           FpScenario *s = 0;\n\
           if (fp_scenario_new(FP_SCENARIO_KIND_TOY, &s) != FP_STATUS_OK) return 1;\n\
           double x = 6.0, d = 0.0; bool failed = false;\n\
           FpStatus st = fp_rollout(s, &x, fp_scenario_dimension(s), &d, 0, &failed);\n\
           fp_scenario_free(s);\n\
           return st == FP_STATUS_OK && failed ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = header();
    let include = include.parent().unwrap();
    let out = match Command::new(compiler)
        .args(flags)
        .arg("-fsyntax-only")
        .arg("-Werror")
        .arg("-I")
        .arg(include)
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("{compiler} not available; skipping");
            return;
        }
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn compiles_as_c() {
    compiles("cc", &["-std=c99", "-Wall"]);
}

#[test]
fn compiles_as_cpp() {
    compiles("c++", &["-x", "c++", "-std=c++11", "-Wall"]);
}
