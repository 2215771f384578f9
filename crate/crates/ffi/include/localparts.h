#ifndef LOCALPARTS_H
#define LOCALPARTS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LocalpartsStatus {
  LOCALPARTS_STATUS_OK = 0,
  LOCALPARTS_STATUS_NULL_POINTER = 1,
  LOCALPARTS_STATUS_INVALID_ARGUMENT = 2,
  LOCALPARTS_STATUS_DIMENSION_MISMATCH = 3,
  LOCALPARTS_STATUS_TOO_LARGE = 4,
  LOCALPARTS_STATUS_UNSUPPORTED = 5,
  LOCALPARTS_STATUS_NO_POINT_D = 6,
  LOCALPARTS_STATUS_NUMERICAL = 7,
  LOCALPARTS_STATUS_PANIC = 8,
} LocalpartsStatus;

typedef enum LocalpartsState {
  LOCALPARTS_STATE_SINGLET = 0,
  LOCALPARTS_STATE_GHZ3 = 1,
} LocalpartsState;

/*
 Opaque behavior handle.
 */
typedef struct LocalpartsBehavior LocalpartsBehavior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failure on this thread, or NULL. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *localparts_last_error(void);

/*
 # Safety
 `s` must come from this library and not have been freed.
 */
void localparts_string_free(char *s);

/*
 Recession speed c²/v equivalent to an influence at speed `v`.

 # Safety
 `out` must be valid for writes.
 */
enum LocalpartsStatus localparts_equivalent_vbb(double v, double c, double *out);

/*
 Whether each criterion switches coordination off for a pair at distance
 `l`, arrival difference `dt`, recession speed `v_bb` and influence speed `v`.

 # Safety
 Both out pointers must be valid for writes.
 */
enum LocalpartsStatus localparts_timing(double l,
                                        double dt,
                                        double v_bb,
                                        double v,
                                        double c,
                                        bool *finite_speed_off,
                                        bool *before_before_off);

/*
 # Safety
 `out` must be valid for writes.
 */
enum LocalpartsStatus localparts_chain_local_bound(size_t n, double *out);

/*
 # Safety
 `out` must be valid for writes.
 */
enum LocalpartsStatus localparts_chain_quantum_optimum(size_t n, double *out);

/*
 # Safety
 `out` must be valid for writes.
 */
enum LocalpartsStatus localparts_mixture_deviation(double p, size_t n, double *out);

/*
 Point D for events given as {t, x, y}, with light speed `c`. Returns
 `NoPointD` when no such point exists.

 # Safety
 `a`, `b`, `c_ev` must point to 3 readable doubles; `d_out` to 3 writable
 doubles; `advantage` must be valid for writes.
 */
enum LocalpartsStatus localparts_point_d(const double *a,
                                         const double *b,
                                         const double *c_ev,
                                         double c,
                                         double *d_out,
                                         double *advantage);

/*
 Born-rule behavior of a built-in state. `angles` holds every party's
 angles back to back; `counts[i]` is party i's number of settings.

 # Safety
 `counts` must point to `parties` readable values, `angles` to their sum,
 and `out` must be valid for writes.
 */
enum LocalpartsStatus localparts_behavior_born(enum LocalpartsState state,
                                               const double *angles,
                                               const size_t *counts,
                                               size_t parties,
                                               struct LocalpartsBehavior **out);

/*
 Behavior from its JSON form `{"parties", "settings_per_party", "table"}`.

 # Safety
 `json` must be a NUL-terminated string; `out` valid for writes.
 */
enum LocalpartsStatus localparts_behavior_from_json(const char *json,
                                                    struct LocalpartsBehavior **out);

/*
 JSON form of a behavior; free the result with
 [`localparts_string_free`].

 # Safety
 `b` must be a live handle; `out` valid for writes.
 */
enum LocalpartsStatus localparts_behavior_to_json(const struct LocalpartsBehavior *b, char **out);

/*
 # Safety
 `b` must be NULL or a handle from this library that was not freed yet.
 */
void localparts_behavior_free(struct LocalpartsBehavior *b);

/*
 # Safety
 `b` must be a live handle; `out` valid for writes.
 */
enum LocalpartsStatus localparts_behavior_parties(const struct LocalpartsBehavior *b, size_t *out);

/*
 Correlator ⟨∏ outcomes⟩ at one setting per party.

 # Safety
 `settings` must point to one value per party; `out` valid for writes.
 */
enum LocalpartsStatus localparts_behavior_correlator(const struct LocalpartsBehavior *b,
                                                     const size_t *settings,
                                                     double *out);

/*
 Largest total-variation shift of the `receivers` marginal caused by the
 other parties' settings.

 # Safety
 `receivers` must point to `count` values; `out` valid for writes.
 */
enum LocalpartsStatus localparts_signaling_distance(const struct LocalpartsBehavior *b,
                                                    const size_t *receivers,
                                                    size_t count,
                                                    double *out);

/*
 Local-polytope membership of a bipartite behavior. On rejection `margin`
 receives the separating inequality's violation, otherwise 0.

 # Safety
 `b` must be a live handle; out pointers valid for writes.
 */
enum LocalpartsStatus localparts_is_local(const struct LocalpartsBehavior *b,
                                          bool *is_local,
                                          double *margin);

/*
 Local-parts program for a tripartite behavior with the pair (i, j)
 uncoordinated. `residual_or_margin` receives the witness residual when
 feasible and the certificate margin otherwise.

 # Safety
 `b` must be a live handle; out pointers valid for writes.
 */
enum LocalpartsStatus localparts_localparts_feasible(const struct LocalpartsBehavior *b,
                                                     size_t i,
                                                     size_t j,
                                                     bool *feasible,
                                                     double *residual_or_margin);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOCALPARTS_H */
