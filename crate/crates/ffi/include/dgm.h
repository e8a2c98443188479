#ifndef DGM_H
#define DGM_H

#pragma once

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum DgmStatus {
  DGM_STATUS_OK = 0,
  DGM_STATUS_NULL_POINTER = 1,
  DGM_STATUS_INVALID_ARGUMENT = 2,
  DGM_STATUS_IO = 3,
  DGM_STATUS_PARSE = 4,
  DGM_STATUS_INVALID_MESH = 5,
  DGM_STATUS_NUMERICAL = 6,
  DGM_STATUS_BUFFER_TOO_SMALL = 7,
  DGM_STATUS_PANIC = 8,
} DgmStatus;

/**
 * A per-vertex descriptor matrix, row-major.
 */
typedef struct DgmDescriptors DgmDescriptors;

/**
 * A preprocessed triangle mesh.
 */
typedef struct DgmMesh DgmMesh;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dgm_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library from this thread.
 */
const char *dgm_last_error(void);

/**
 * Load an OFF or OBJ file and preprocess it.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DgmStatus dgm_mesh_load(const char *path, struct DgmMesh **out);

/**
 * Build a mesh from `n_vertices` xyz triples and `n_faces` index triples,
 * then preprocess it.
 *
 * # Safety
 * `vertices` must hold `3 * n_vertices` doubles, `faces` `3 * n_faces`
 * indices and `out` must be a valid pointer.
 */
enum DgmStatus dgm_mesh_from_arrays(const double *vertices,
                                    size_t n_vertices,
                                    const uint32_t *faces,
                                    size_t n_faces,
                                    struct DgmMesh **out);

/**
 * Vertex count after preprocessing; 0 for NULL.
 *
 * # Safety
 * `mesh` must be NULL or a live handle.
 */
size_t dgm_mesh_n_vertices(const struct DgmMesh *mesh);

/**
 * # Safety
 * `mesh` must be NULL or a handle not yet freed.
 */
void dgm_mesh_free(struct DgmMesh *mesh);

/**
 * Extract local descriptors of `family` (e.g. "dgm", "hks", "wks").
 * `config_json` is an optional JSON descriptor configuration; NULL uses
 * the defaults and missing keys take default values.
 *
 * # Safety
 * `mesh` must be a live handle, `family` and `config_json` (if not NULL)
 * NUL-terminated strings, and `out` a valid pointer.
 */
enum DgmStatus dgm_extract(const struct DgmMesh *mesh,
                           const char *family,
                           const char *config_json,
                           struct DgmDescriptors **out);

/**
 * # Safety
 * `d` must be NULL or a live handle.
 */
size_t dgm_descriptors_n_rows(const struct DgmDescriptors *d);

/**
 * # Safety
 * `d` must be NULL or a live handle.
 */
size_t dgm_descriptors_dim(const struct DgmDescriptors *d);

/**
 * Copy the row-major values into `buf`, which must hold
 * `n_rows * dim` doubles.
 *
 * # Safety
 * `d` must be a live handle and `buf` valid for `len` writes.
 */
enum DgmStatus dgm_descriptors_copy(const struct DgmDescriptors *d, double *buf, size_t len);

/**
 * # Safety
 * `d` must be NULL or a handle not yet freed.
 */
void dgm_descriptors_free(struct DgmDescriptors *d);

/**
 * Leave-one-out cosine retrieval mAP over `n` row-major global vectors of
 * length `dim` with integer class labels.
 *
 * # Safety
 * `vectors` must hold `n * dim` doubles, `labels` `n` values, and
 * `out_map` must be a valid pointer.
 */
enum DgmStatus dgm_retrieval_map(const double *vectors,
                                 size_t n,
                                 size_t dim,
                                 const uint32_t *labels,
                                 double *out_map);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DGM_H */
