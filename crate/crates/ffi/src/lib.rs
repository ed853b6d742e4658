//! C ABI over the graph, path, BPE and BLEU parts of `amrsat`.
//!
//! Every fallible call returns an [`AmrsatStatus`]; on failure the message is
//! available from [`amrsat_last_error`] until the next failing call on the
//! same thread. Objects are opaque handles released with their `_free`
//! function. Strings returned through `out` pointers are owned by the caller
//! and released with [`amrsat_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use amrsat::eval;
use amrsat::penman::{self, AmrGraph, SimplifyOptions};
use amrsat::pipeline::{self, BpeModel, PathMatrix};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmrsatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    OutOfRange = 5,
    Panic = 6,
}

/// Parsed AMR graph.
pub struct AmrsatGraph(AmrGraph);

/// All-pairs path table of a graph.
pub struct AmrsatPaths(PathMatrix);

/// Learned BPE merge list.
pub struct AmrsatBpe(BpeModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(AmrsatStatus, String);

impl Fail {
    fn new(status: AmrsatStatus, e: impl std::fmt::Display) -> Self {
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AmrsatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmrsatStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AmrsatStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(AmrsatStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail::new(AmrsatStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail::new(AmrsatStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::new(AmrsatStatus::NullPointer, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|e| Fail::new(AmrsatStatus::InvalidArgument, e))?;
    put(out, c.into_raw())
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call; do not free.
#[no_mangle]
pub extern "C" fn amrsat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn amrsat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses one graph in PENMAN notation.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_graph_parse(
    text: *const c_char,
    out: *mut *mut AmrsatGraph,
) -> AmrsatStatus {
    guard(|| {
        let t = cstr(text, "text")?;
        let g = penman::parse_penman(t).map_err(|e| Fail::new(AmrsatStatus::Parse, e))?;
        put(out, Box::into_raw(Box::new(AmrsatGraph(g))))
    })
}

/// # Safety
/// `g` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn amrsat_graph_free(g: *mut AmrsatGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of nodes, constants included.
///
/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_graph_node_count(
    g: *const AmrsatGraph,
    out: *mut usize,
) -> AmrsatStatus {
    guard(|| put(out, handle(g, "graph")?.0.len()))
}

/// Number of extra incoming edges summed over all nodes.
///
/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_graph_reentrancy_count(
    g: *const AmrsatGraph,
    out: *mut usize,
) -> AmrsatStatus {
    guard(|| put(out, handle(g, "graph")?.0.reentrancy_count()))
}

/// Returns a new graph without wiki links and/or sense tags.
///
/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_graph_simplify(
    g: *const AmrsatGraph,
    remove_wiki: bool,
    remove_sense_tags: bool,
    out: *mut *mut AmrsatGraph,
) -> AmrsatStatus {
    guard(|| {
        let opts = SimplifyOptions {
            remove_wiki,
            remove_sense_tags,
        };
        let s = penman::simplify(&handle(g, "graph")?.0, opts);
        put(out, Box::into_raw(Box::new(AmrsatGraph(s))))
    })
}

/// PENMAN text of the graph.
///
/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_graph_serialize(
    g: *const AmrsatGraph,
    out: *mut *mut c_char,
) -> AmrsatStatus {
    guard(|| {
        let s = penman::serialize(&handle(g, "graph")?.0)
            .map_err(|e| Fail::new(AmrsatStatus::InvalidArgument, e))?;
        put_string(out, s)
    })
}

/// Index of the node with the given variable, or else the first node with
/// the given concept.
///
/// # Safety
/// `g` must be a live graph handle, `key` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_graph_find(
    g: *const AmrsatGraph,
    key: *const c_char,
    out: *mut usize,
) -> AmrsatStatus {
    guard(|| {
        let g = &handle(g, "graph")?.0;
        let k = cstr(key, "key")?;
        let i = g
            .node_index(k)
            .or_else(|| g.find_concept(k))
            .ok_or_else(|| Fail::new(AmrsatStatus::OutOfRange, format!("no node {k:?}")))?;
        put(out, i)
    })
}

/// Path table over every node in index order, truncated to `max_len` labels.
/// With `direct_only`, pairs that are not adjacent get the `None` entry.
///
/// # Safety
/// `g` must be a live graph handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_paths_extract(
    g: *const AmrsatGraph,
    max_len: usize,
    direct_only: bool,
    out: *mut *mut AmrsatPaths,
) -> AmrsatStatus {
    guard(|| {
        let g = &handle(g, "graph")?.0;
        let order: Vec<usize> = (0..g.len()).collect();
        let mut pm = pipeline::extract_paths(g, &order, max_len)
            .map_err(|e| Fail::new(AmrsatStatus::InvalidArgument, e))?;
        if direct_only {
            pm = pipeline::mask_indirect(&pm, g);
        }
        put(out, Box::into_raw(Box::new(AmrsatPaths(pm))))
    })
}

/// # Safety
/// `p` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn amrsat_paths_free(p: *mut AmrsatPaths) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Side length of the table.
///
/// # Safety
/// `p` must be a live path handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_paths_size(p: *const AmrsatPaths, out: *mut usize) -> AmrsatStatus {
    guard(|| put(out, handle(p, "paths")?.0.n()))
}

/// Space-joined labels of entry (i, j), e.g. `:ARG0↑ :ARG1↓`, or `None`.
///
/// # Safety
/// `p` must be a live path handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_paths_entry(
    p: *const AmrsatPaths,
    i: usize,
    j: usize,
    out: *mut *mut c_char,
) -> AmrsatStatus {
    guard(|| {
        let pm = &handle(p, "paths")?.0;
        if i >= pm.n() || j >= pm.n() {
            return Err(Fail::new(
                AmrsatStatus::OutOfRange,
                format!("entry ({i}, {j}) outside a {0}x{0} table", pm.n()),
            ));
        }
        put_string(out, pm.entry_string(i, j))
    })
}

/// Loads a merge list in the text format written by `preprocess`.
///
/// # Safety
/// `codes` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_bpe_load(
    codes: *const c_char,
    out: *mut *mut AmrsatBpe,
) -> AmrsatStatus {
    guard(|| {
        let t = cstr(codes, "codes")?;
        let bpe = BpeModel::from_text(t).map_err(|e| Fail::new(AmrsatStatus::Parse, e))?;
        put(out, Box::into_raw(Box::new(AmrsatBpe(bpe))))
    })
}

/// # Safety
/// `b` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn amrsat_bpe_free(b: *mut AmrsatBpe) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Segments whitespace-separated tokens; pieces other than the last of a
/// word end in `@@`.
///
/// # Safety
/// `b` must be a live BPE handle, `line` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_bpe_apply(
    b: *const AmrsatBpe,
    line: *const c_char,
    out: *mut *mut c_char,
) -> AmrsatStatus {
    guard(|| {
        let bpe = &handle(b, "bpe")?.0;
        let tokens: Vec<&str> = cstr(line, "line")?.split_whitespace().collect();
        put_string(out, bpe.apply_all(&tokens).join(" "))
    })
}

/// Corpus BLEU-4 on a 0–100 scale of newline-separated hypotheses against
/// the same number of newline-separated references.
///
/// # Safety
/// `hyps` and `refs` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn amrsat_bleu(
    hyps: *const c_char,
    refs: *const c_char,
    out: *mut f64,
) -> AmrsatStatus {
    guard(|| {
        let h: Vec<Vec<String>> = cstr(hyps, "hyps")?.lines().map(eval::tokenize).collect();
        let r: Vec<Vec<String>> = cstr(refs, "refs")?.lines().map(eval::tokenize).collect();
        let score = eval::bleu(&h, &r).map_err(|e| Fail::new(AmrsatStatus::InvalidArgument, e))?;
        put(out, score)
    })
}
