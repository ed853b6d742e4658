use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use amrsat_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    amrsat_string_free(s);
    out
}

unsafe fn last_error() -> String {
    CStr::from_ptr(amrsat_last_error()).to_str().unwrap().to_string()
}

const EXAMPLE: &str = "(p / possible
    :domain (s / sentence-01
        :ARG1 (h / he)
        :ARG2 (t / temporal-quantity :quant 7 :unit (y / year))
        :location (p2 / prison)
        :condition (c / convict-01 :ARG1 h)))";

#[test]
fn graph_and_paths_round_trip() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(amrsat_graph_parse(c(EXAMPLE).as_ptr(), &mut g), AmrsatStatus::Ok);
        let mut n = 0;
        assert_eq!(amrsat_graph_node_count(g, &mut n), AmrsatStatus::Ok);
        assert_eq!(n, 8);

        let (mut he, mut seven) = (0, 0);
        assert_eq!(amrsat_graph_find(g, c("h").as_ptr(), &mut he), AmrsatStatus::Ok);
        assert_eq!(amrsat_graph_find(g, c("7").as_ptr(), &mut seven), AmrsatStatus::Ok);

        let mut p = ptr::null_mut();
        assert_eq!(amrsat_paths_extract(g, 4, false, &mut p), AmrsatStatus::Ok);
        let mut size = 0;
        assert_eq!(amrsat_paths_size(p, &mut size), AmrsatStatus::Ok);
        assert_eq!(size, 8);
        let mut s = ptr::null_mut();
        assert_eq!(amrsat_paths_entry(p, he, seven, &mut s), AmrsatStatus::Ok);
        assert_eq!(take(s), ":ARG1↑ :ARG2↓ :quant↓");
        assert_eq!(amrsat_paths_entry(p, he, he, &mut s), AmrsatStatus::Ok);
        assert_eq!(take(s), "None");
        assert_eq!(amrsat_paths_entry(p, 8, 0, &mut s), AmrsatStatus::OutOfRange);
        assert!(last_error().contains("outside"));
        amrsat_paths_free(p);

        assert_eq!(amrsat_paths_extract(g, 4, true, &mut p), AmrsatStatus::Ok);
        assert_eq!(amrsat_paths_entry(p, he, seven, &mut s), AmrsatStatus::Ok);
        assert_eq!(take(s), "None");
        amrsat_paths_free(p);

        let mut simple = ptr::null_mut();
        assert_eq!(amrsat_graph_simplify(g, true, true, &mut simple), AmrsatStatus::Ok);
        assert_eq!(amrsat_graph_serialize(simple, &mut s), AmrsatStatus::Ok);
        let text = take(s);
        assert!(text.contains("sentence") && !text.contains("sentence-01"), "{text}");
        amrsat_graph_free(simple);
        amrsat_graph_free(g);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(amrsat_graph_parse(c("(a / b").as_ptr(), &mut g), AmrsatStatus::Parse);
        assert!(g.is_null());
        assert!(last_error().contains("unbalanced"));
        assert_eq!(amrsat_graph_parse(ptr::null(), &mut g), AmrsatStatus::NullPointer);
        assert_eq!(amrsat_graph_parse(c("(a / b)").as_ptr(), ptr::null_mut()), AmrsatStatus::NullPointer);
        let bad = [0xffu8, 0];
        assert_eq!(amrsat_graph_parse(bad.as_ptr().cast(), &mut g), AmrsatStatus::InvalidUtf8);
        let mut n = 0;
        assert_eq!(amrsat_graph_node_count(ptr::null(), &mut n), AmrsatStatus::NullPointer);
        let mut score = 0.0;
        assert_eq!(
            amrsat_bleu(c("a b\nc d\n").as_ptr(), c("a b\n").as_ptr(), &mut score),
            AmrsatStatus::InvalidArgument
        );
        amrsat_graph_free(ptr::null_mut());
        amrsat_string_free(ptr::null_mut());
    }
}

#[test]
fn bpe_and_bleu() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(amrsat_bpe_load(c("s e\nse n\n").as_ptr(), &mut b), AmrsatStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(amrsat_bpe_apply(b, c("sent sen").as_ptr(), &mut s), AmrsatStatus::Ok);
        assert_eq!(take(s), "sen@@ t sen");
        amrsat_bpe_free(b);

        let mut score = 0.0;
        let h = c("the cat sat on the mat\nhello there general kenobi\n");
        assert_eq!(amrsat_bleu(h.as_ptr(), h.as_ptr(), &mut score), AmrsatStatus::Ok);
        assert_eq!(score, 100.0);
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let lib = target_dir().join("libamrsat_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let Ok(cc) = which_cc() else {
        eprintln!("skipping: no C compiler");
        return;
    };
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = tempfile_path("amrsat_smoke");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}

fn which_cc() -> Result<String, ()> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).arg("--version").output() {
        Ok(o) if o.status.success() => Ok(cc),
        _ => Err(()),
    }
}

fn tempfile_path(stem: &str) -> PathBuf {
    std::env::temp_dir().join(format!("{stem}_{}", std::process::id()))
}
