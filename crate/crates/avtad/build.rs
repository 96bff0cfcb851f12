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
    let pkg = std::env::var("CARGO_PKG_VERSION").unwrap_or_default();
    // `git describe` when tags exist, otherwise `v<version>-g<hash>[-dirty]`.
    let version = git(&["describe", "--tags", "--always", "--dirty", "--match", "v*"])
        .filter(|d| d.starts_with('v'))
        .or_else(|| {
            let hash = git(&["rev-parse", "--short", "HEAD"])?;
            let dirty = git(&["status", "--porcelain", "--untracked-files=no"]).map_or("", |_| "-dirty");
            Some(format!("v{pkg}-g{hash}{dirty}"))
        })
        .unwrap_or_else(|| format!("v{pkg}"));
    println!("cargo:rustc-env=AVTAD_VERSION={version}");
    if let Some(dir) = git(&["rev-parse", "--git-dir"]) {
        println!("cargo:rerun-if-changed={dir}/HEAD");
        println!("cargo:rerun-if-changed={dir}/index");
    }
    println!("cargo:rerun-if-changed=build.rs");
}
