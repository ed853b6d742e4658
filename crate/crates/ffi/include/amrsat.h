#ifndef AMRSAT_H
#define AMRSAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum AmrsatStatus {
  AMRSAT_STATUS_OK = 0,
  AMRSAT_STATUS_NULL_POINTER = 1,
  AMRSAT_STATUS_INVALID_UTF8 = 2,
  AMRSAT_STATUS_PARSE = 3,
  AMRSAT_STATUS_INVALID_ARGUMENT = 4,
  AMRSAT_STATUS_OUT_OF_RANGE = 5,
  AMRSAT_STATUS_PANIC = 6,
} AmrsatStatus;

// Learned BPE merge list.
typedef struct AmrsatBpe AmrsatBpe;

// Parsed AMR graph.
typedef struct AmrsatGraph AmrsatGraph;

// All-pairs path table of a graph.
typedef struct AmrsatPaths AmrsatPaths;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the next
// failing call; do not free.
const char *amrsat_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void amrsat_string_free(char *s);

// Parses one graph in PENMAN notation.
//
// # Safety
// `text` must be a NUL-terminated string and `out` writable.
enum AmrsatStatus amrsat_graph_parse(const char *text, struct AmrsatGraph **out);

// # Safety
// `g` must come from this library and not be freed twice. Null is ignored.
void amrsat_graph_free(struct AmrsatGraph *g);

// Number of nodes, constants included.
//
// # Safety
// `g` must be a live graph handle and `out` writable.
enum AmrsatStatus amrsat_graph_node_count(const struct AmrsatGraph *g, size_t *out);

// Number of extra incoming edges summed over all nodes.
//
// # Safety
// `g` must be a live graph handle and `out` writable.
enum AmrsatStatus amrsat_graph_reentrancy_count(const struct AmrsatGraph *g, size_t *out);

// Returns a new graph without wiki links and/or sense tags.
//
// # Safety
// `g` must be a live graph handle and `out` writable.
enum AmrsatStatus amrsat_graph_simplify(const struct AmrsatGraph *g,
                                        bool remove_wiki,
                                        bool remove_sense_tags,
                                        struct AmrsatGraph **out);

// PENMAN text of the graph.
//
// # Safety
// `g` must be a live graph handle and `out` writable.
enum AmrsatStatus amrsat_graph_serialize(const struct AmrsatGraph *g, char **out);

// Index of the node with the given variable, or else the first node with
// the given concept.
//
// # Safety
// `g` must be a live graph handle, `key` NUL-terminated and `out` writable.
enum AmrsatStatus amrsat_graph_find(const struct AmrsatGraph *g, const char *key, size_t *out);

// Path table over every node in index order, truncated to `max_len` labels.
// With `direct_only`, pairs that are not adjacent get the `None` entry.
//
// # Safety
// `g` must be a live graph handle and `out` writable.
enum AmrsatStatus amrsat_paths_extract(const struct AmrsatGraph *g,
                                       size_t max_len,
                                       bool direct_only,
                                       struct AmrsatPaths **out);

// # Safety
// `p` must come from this library and not be freed twice. Null is ignored.
void amrsat_paths_free(struct AmrsatPaths *p);

// Side length of the table.
//
// # Safety
// `p` must be a live path handle and `out` writable.
enum AmrsatStatus amrsat_paths_size(const struct AmrsatPaths *p, size_t *out);

// Space-joined labels of entry (i, j), e.g. `:ARG0↑ :ARG1↓`, or `None`.
//
// # Safety
// `p` must be a live path handle and `out` writable.
enum AmrsatStatus amrsat_paths_entry(const struct AmrsatPaths *p, size_t i, size_t j, char **out);

// Loads a merge list in the text format written by `preprocess`.
//
// # Safety
// `codes` must be NUL-terminated and `out` writable.
enum AmrsatStatus amrsat_bpe_load(const char *codes, struct AmrsatBpe **out);

// # Safety
// `b` must come from this library and not be freed twice. Null is ignored.
void amrsat_bpe_free(struct AmrsatBpe *b);

// Segments whitespace-separated tokens; pieces other than the last of a
// word end in `@@`.
//
// # Safety
// `b` must be a live BPE handle, `line` NUL-terminated and `out` writable.
enum AmrsatStatus amrsat_bpe_apply(const struct AmrsatBpe *b, const char *line, char **out);

// Corpus BLEU-4 on a 0–100 scale of newline-separated hypotheses against
// the same number of newline-separated references.
//
// # Safety
// `hyps` and `refs` must be NUL-terminated and `out` writable.
enum AmrsatStatus amrsat_bleu(const char *hyps, const char *refs, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMRSAT_H */
