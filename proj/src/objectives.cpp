#include "prefopt/objectives.hpp"

#include <cmath>
#include <stdexcept>

#include "prefopt/errors.hpp"

namespace prefopt {

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::DPO: return "dpo";
    case ObjectiveKind::SimPO: return "simpo";
    case ObjectiveKind::DPONLL: return "dponll";
    case ObjectiveKind::CAPO: return "capo";
  }
  throw std::logic_error("unreachable objective kind");
}

ObjectiveKind objective_kind_from_string(const std::string& name) {
  if (name == "dpo") return ObjectiveKind::DPO;
  if (name == "simpo") return ObjectiveKind::SimPO;
  if (name == "dponll") return ObjectiveKind::DPONLL;
  if (name == "capo") return ObjectiveKind::CAPO;
  throw ConfigError("unknown objective '" + name + "'; expected one of dpo, simpo, dponll, capo");
}

void ObjectiveConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (!(lambda_nll >= 0.0)) throw ConfigError("lambda_nll must be >= 0");
}

double softplus(double x) {
  // -ln sigma(-x) without cancellation at |x| > 30.
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double rrm(double logp_w, double logp_l, double epsilon) {
  if (std::abs(logp_l) >= epsilon) return logp_w / logp_l;
  const double sign = logp_l > 0.0 ? 1.0 : -1.0;  // sign(0) := -1
  return logp_w / (sign * epsilon);
}

namespace {

void check_lengths(const PairScores& s) {
  if (s.len_w < 1 || s.len_l < 1)
    throw std::invalid_argument("response token lengths must be >= 1");
  if (s.ref_logp_w.has_value() != s.ref_logp_l.has_value())
    throw std::invalid_argument("reference log-likelihoods must be set together");
}

void require_reference(const PairScores& s, const char* objective) {
  if (!s.ref_logp_w || !s.ref_logp_l)
    throw ConfigError(std::string(objective) +
                      " requires reference log-likelihoods (ref_logp_w, ref_logp_l)");
}

LossResult from_z(double z, double dz_dw, double dz_dl) {
  LossResult r;
  r.z = z;
  r.loss = softplus(-z);
  const double one_minus_sig = 1.0 - sigmoid(z);
  r.grad_logp_w = -one_minus_sig * dz_dw;
  r.grad_logp_l = -one_minus_sig * dz_dl;
  return r;
}

}  // namespace

LossResult dpo_loss(const PairScores& s, const ObjectiveConfig& cfg) {
  check_lengths(s);
  require_reference(s, "dpo");
  const double z = cfg.beta * ((s.logp_w - *s.ref_logp_w) - (s.logp_l - *s.ref_logp_l));
  return from_z(z, cfg.beta, -cfg.beta);
}

LossResult simpo_loss(const PairScores& s, const ObjectiveConfig& cfg) {
  check_lengths(s);
  const double z =
      cfg.beta * (s.logp_w / s.len_w) - cfg.beta * (s.logp_l / s.len_l) - cfg.gamma;
  return from_z(z, cfg.beta / s.len_w, -cfg.beta / s.len_l);
}

LossResult dponll_loss(const PairScores& s, const ObjectiveConfig& cfg) {
  check_lengths(s);
  require_reference(s, "dponll");
  LossResult r = dpo_loss(s, cfg);
  // Length-normalized NLL of the preferred response.
  r.loss += cfg.lambda_nll * (-s.logp_w / s.len_w);
  r.grad_logp_w += -cfg.lambda_nll / s.len_w;
  return r;
}

LossResult capo_loss(const PairScores& s, const ObjectiveConfig& cfg) {
  check_lengths(s);
  const bool guard_active = std::abs(s.logp_l) < cfg.epsilon;
  const double denom =
      guard_active ? (s.logp_l > 0.0 ? cfg.epsilon : -cfg.epsilon) : s.logp_l;
  const double rrm_value = s.logp_w / denom;
  const double z = cfg.beta * (s.logp_w - s.logp_l) + cfg.alpha * rrm_value;
  const double dz_dw = cfg.beta + cfg.alpha / denom;
  // The clamp is treated as constant, so the ratio contributes no gradient
  // through logp_l while the guard is active.
  const double dz_dl =
      -cfg.beta - (guard_active ? 0.0 : cfg.alpha * s.logp_w / (denom * denom));
  LossResult r = from_z(z, dz_dw, dz_dl);
  r.rrm = rrm_value;
  return r;
}

LossResult pair_loss(const PairScores& s, const ObjectiveConfig& cfg) {
  switch (cfg.kind) {
    case ObjectiveKind::DPO: return dpo_loss(s, cfg);
    case ObjectiveKind::SimPO: return simpo_loss(s, cfg);
    case ObjectiveKind::DPONLL: return dponll_loss(s, cfg);
    case ObjectiveKind::CAPO: return capo_loss(s, cfg);
  }
  throw std::logic_error("unreachable objective kind");
}

std::pair<double, std::vector<LossResult>> batch_loss(std::span<const PairScores> batch,
                                                      const ObjectiveConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("batch_loss requires a nonempty batch");
  std::vector<LossResult> results;
  results.reserve(batch.size());
  double sum = 0.0;
  for (const PairScores& s : batch) {
    results.push_back(pair_loss(s, cfg));
    sum += results.back().loss;
  }
  return {sum / static_cast<double>(batch.size()), std::move(results)};
}

double reward_difference(const PairScores& s, const ObjectiveConfig& cfg) {
  check_lengths(s);
  switch (cfg.kind) {
    case ObjectiveKind::DPO:
    case ObjectiveKind::DPONLL:
      require_reference(s, to_string(cfg.kind).c_str());
      return cfg.beta * ((s.logp_w - *s.ref_logp_w) - (s.logp_l - *s.ref_logp_l));
    case ObjectiveKind::SimPO:
      return cfg.beta * (s.logp_w / s.len_w - s.logp_l / s.len_l);
    case ObjectiveKind::CAPO:
      return cfg.beta * (s.logp_w - s.logp_l);
  }
  throw std::logic_error("unreachable objective kind");
}

}  // namespace prefopt
