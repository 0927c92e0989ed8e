/* C interface for the mdplp approximation library.
 *
 * Conventions:
 *   - every constructor has a matching *_free; handles are opaque
 *   - functions return MDPLP_OK (0) on success; on failure, call
 *     mdplp_last_error_message() on the same thread for a description
 *   - strings returned through out-parameters are released with
 *     mdplp_string_free; the error-message pointer is borrowed
 *   - criterion tags: 0 = average cost, 1 = discounted (pass tau in (0,1))
 *   - route tags: 0 = scenario, 1 = smoothing
 */
#ifndef MDPLP_H
#define MDPLP_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define MDPLP_OK 0
#define MDPLP_ERR_NULL 1
#define MDPLP_ERR_CONFIG 2
#define MDPLP_ERR_NUMERICAL 3
#define MDPLP_ERR_ENCODING 4
#define MDPLP_ERR_PANIC 5

typedef struct MdplpModel MdplpModel;
typedef struct MdplpBasis MdplpBasis;

typedef struct MdplpScenarioResult {
  double objective;
  double rho_star;
  double alpha_norm;
  double kkt_stationarity;
  double kkt_primal;
  double kkt_complementarity;
  double certificate;
  uint64_t samples_required;
  int samples_sufficient;
  int converged;
  int ball_active;
} MdplpScenarioResult;

typedef struct MdplpSmoothingResult {
  double j_lb;
  double j_ub;
  double gap;
  double eta;
  uint64_t iterations;
} MdplpSmoothingResult;

const char *mdplp_version(void);
const char *mdplp_last_error_message(void);

/* params_json: NULL for the shipped preset, else a JSON object with the
 * model parameters (see the library documentation for field names). */
int mdplp_model_new_lqg(const char *params_json, int criterion_tag, double tau,
                        size_t quad_nodes, MdplpModel **out);
int mdplp_model_new_fisheries(const char *params_json, int criterion_tag,
                              double tau, size_t quad_nodes, MdplpModel **out);
void mdplp_model_free(MdplpModel *model);

int mdplp_theta_default(const MdplpModel *model, double *out);

int mdplp_basis_new(const MdplpModel *model, size_t n, MdplpBasis **out);
void mdplp_basis_free(MdplpBasis *basis);

int mdplp_sample_size(uint64_t n_dims, double eps, double beta, uint64_t *out);
int mdplp_dual_bound(int criterion_tag, double tau, double theta_p,
                     double cost_sup, double cost_lip, double *out);

int mdplp_bounds_report_json(const MdplpModel *model, const MdplpBasis *basis,
                             double theta_p, double residual_d,
                             double residual_rate, double eps, double beta,
                             int route_tag, char **out);
void mdplp_string_free(char *s);

int mdplp_scenario_solve(const MdplpModel *model, const MdplpBasis *basis,
                         double theta_p, size_t n_samples, uint64_t seed,
                         double tolerance, double eps, double beta,
                         MdplpScenarioResult *out);

int mdplp_smoothing_run(const MdplpModel *model, const MdplpBasis *basis,
                        double theta_p, double eta, uint64_t iterations,
                        size_t grid_nodes, MdplpSmoothingResult *out);

#ifdef __cplusplus
}
#endif

#endif /* MDPLP_H */
