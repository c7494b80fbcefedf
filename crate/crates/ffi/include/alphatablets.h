#ifndef ALPHATABLETS_H
#define ALPHATABLETS_H

#include <stddef.h>
#include <stdint.h>

typedef enum AtStatus {
  AT_STATUS_OK = 0,
  AT_STATUS_INVALID_ARGUMENT = 1,
  AT_STATUS_IO = 2,
  AT_STATUS_PARSE = 3,
  AT_STATUS_NOT_FOUND = 4,
  AT_STATUS_NUMERIC = 5,
  AT_STATUS_BUFFER_TOO_SMALL = 6,
  AT_STATUS_PANIC = 7,
} AtStatus;

// Reconstructed planes with the cameras and configuration used to render them.
typedef struct AtPlanes AtPlanes;

// Input views of a scene.
typedef struct AtScene AtScene;

// Geometry summary of one plane.
typedef struct AtPlaneInfo {
  double center[3];
  double normal[3];
  double up[3];
  // Half extents along up and right, meters.
  double extents[2];
  uint64_t source_camera;
  uint32_t texture_width;
  uint32_t texture_height;
} AtPlaneInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *at_last_error(void);

// Loads a scene directory (manifest + intrinsics).
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum AtStatus at_scene_load(const char *dir, struct AtScene **out);

// Builds a synthetic scene: `preset` is "box" or "quad". When `dir` is not
// null the scene and its ground truth are also written there.
//
// # Safety
// `preset` must be a NUL-terminated string, `dir` null or NUL-terminated,
// `out` writable.
enum AtStatus at_scene_synth(const char *preset,
                             uint32_t views,
                             uint32_t width,
                             uint32_t height,
                             const char *dir,
                             struct AtScene **out);

// # Safety
// `scene` must be a live handle or null.
size_t at_scene_view_count(const struct AtScene *scene);

// # Safety
// `scene` must come from this library and not be used afterwards.
void at_scene_free(struct AtScene *scene);

// Runs the reconstruction. `config_path` may be null for defaults; `seed`
// overrides the configured seed.
//
// # Safety
// `scene` must be live, `config_path` null or NUL-terminated, `out` writable.
enum AtStatus at_reconstruct(const struct AtScene *scene,
                             const char *config_path,
                             uint64_t seed,
                             struct AtPlanes **out);

// Reconstructs and writes a full output directory in one call.
//
// # Safety
// As [`at_reconstruct`]; `dir` must be NUL-terminated.
enum AtStatus at_reconstruct_to_dir(const struct AtScene *scene,
                                    const char *config_path,
                                    uint64_t seed,
                                    const char *dir);

// Loads the planes of a reconstruction output directory.
//
// # Safety
// `dir` must be NUL-terminated; `out` writable.
enum AtStatus at_planes_load(const char *dir, struct AtPlanes **out);

// Writes planes, mesh, atlas, point cloud and renders to `dir`.
//
// # Safety
// `planes` must be live; `dir` NUL-terminated.
enum AtStatus at_planes_export(const struct AtPlanes *planes, const char *dir);

// # Safety
// `planes` must be a live handle or null.
size_t at_planes_count(const struct AtPlanes *planes);

// # Safety
// `planes` must be a live handle or null.
size_t at_planes_camera_count(const struct AtPlanes *planes);

// # Safety
// `planes` must be live; `out` writable.
enum AtStatus at_plane_info(const struct AtPlanes *planes, size_t id, struct AtPlaneInfo *out);

// Renders camera `view` as 8-bit RGB, row-major, top row first. Width and
// height are always written; with a null `rgb` or a short buffer only the
// size is reported (`AT_STATUS_BUFFER_TOO_SMALL` for the short buffer).
//
// # Safety
// `planes` must be live; `width` and `height` writable; `rgb` null or
// valid for `capacity` bytes.
enum AtStatus at_render(const struct AtPlanes *planes,
                        size_t view,
                        uint8_t *rgb,
                        size_t capacity,
                        uint32_t *width,
                        uint32_t *height);

// Sets every texel color of plane `id`; alpha and geometry are unchanged.
//
// # Safety
// `planes` must be live.
enum AtStatus at_edit_solid(struct AtPlanes *planes, size_t id, double r, double g, double b);

// Multiplies plane `id`'s texel colors per channel, clamping to [0, 1].
//
// # Safety
// `planes` must be live.
enum AtStatus at_edit_tint(struct AtPlanes *planes, size_t id, double r, double g, double b);

// # Safety
// `planes` must come from this library and not be used afterwards.
void at_planes_free(struct AtPlanes *planes);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALPHATABLETS_H */
