use std::process::Command;

fn git(args: &[&str]) -> Option<String> {
    let out = Command::new("git").args(args).output().ok()?;
    if !out.status.success() {
        return None;
    }
    let s = String::from_utf8(out.stdout).ok()?.trim().to_string();
    (!s.is_empty()).then_some(s)
}

fn main() {
    let pkg = env!("CARGO_PKG_VERSION");
    // `git describe` output when a tag exists, otherwise `<pkg>-g<hash>[-dirty]`.
    let version = match git(&["describe", "--tags", "--always", "--dirty"]) {
        Some(d) if d.starts_with('v') => d,
        Some(d) => format!("{pkg}-g{d}"),
        None => pkg.to_string(),
    };
    println!("cargo:rustc-env=UNTANGLE_VERSION={version}");
    if let Some(dir) = git(&["rev-parse", "--git-dir"]) {
        println!("cargo:rerun-if-changed={dir}/HEAD");
        println!("cargo:rerun-if-changed={dir}/index");
    }
    println!("cargo:rerun-if-changed=build.rs");
}
