#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace prefopt {

enum class ObjectiveKind { DPO, SimPO, DPONLL, CAPO };

std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);

// Sequence-level scores for one preference pair. Log-likelihoods are in
// nats and nonpositive for a proper model; reference fields are required by
// DPO/DPONLL only and must be set together.
struct PairScores {
  double logp_w = 0.0;
  double logp_l = 0.0;
  std::optional<double> ref_logp_w;
  std::optional<double> ref_logp_l;
  int len_w = 1;
  int len_l = 1;
};

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::CAPO;
  double beta = 0.1;
  double alpha = 2.0;        // RRM weight, CAPO only
  double gamma = 0.0;        // target margin, SimPO only
  double lambda_nll = 1.0;   // NLL weight, DPONLL only
  double epsilon = 1e-8;     // guard on the RRM denominator

  void validate() const;  // throws ConfigError
};

// Per-pair loss with closed-form gradients w.r.t. the policy
// log-likelihoods. z is the pre-sigmoid argument; rrm is set for CAPO.
struct LossResult {
  double loss = 0.0;
  double grad_logp_w = 0.0;
  double grad_logp_l = 0.0;
  double z = 0.0;
  std::optional<double> rrm;
};

// ln(1 + e^x), stable for large |x|.
double softplus(double x);
double sigmoid(double x);

// Ratio of log-likelihoods with a sign-preserving clamp on the denominator;
// sign(0) is taken as -1 since log-likelihoods are nonpositive.
double rrm(double logp_w, double logp_l, double epsilon);

LossResult dpo_loss(const PairScores& s, const ObjectiveConfig& cfg);
LossResult simpo_loss(const PairScores& s, const ObjectiveConfig& cfg);
LossResult dponll_loss(const PairScores& s, const ObjectiveConfig& cfg);
LossResult capo_loss(const PairScores& s, const ObjectiveConfig& cfg);

// Dispatch on cfg.kind.
LossResult pair_loss(const PairScores& s, const ObjectiveConfig& cfg);

// Mean loss plus per-pair results in input order.
std::pair<double, std::vector<LossResult>> batch_loss(std::span<const PairScores> batch,
                                                      const ObjectiveConfig& cfg);

// The quantity histogrammed in the reward-difference analysis: reference
// ratios for DPO/DPONLL, plain (SimPO: length-normalized) log-likelihood
// difference otherwise.
double reward_difference(const PairScores& s, const ObjectiveConfig& cfg);

}  // namespace prefopt
