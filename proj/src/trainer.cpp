#include "prefopt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "prefopt/errors.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {

void TrainConfig::validate() const {
  objective.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
  if (clip_grad_norm < 0.0) throw ConfigError("clip_grad_norm must be >= 0");
}

double cosine_lr(int step, int total_steps, double base_lr) {
  if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total_steps) + "]");
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps));
}

AdamState make_adam_state(const TinyLMParams& params) {
  return AdamState{zeros_like(params), zeros_like(params), 0};
}

void adam_step(TinyLMParams& params, const TinyLMParams& grads, AdamState& state, double lr,
               const TrainConfig& cfg) {
  auto p_list = named_tensors(params);
  auto g_list = named_tensors(grads);
  auto m_list = named_tensors(state.m);
  auto v_list = named_tensors(state.v);
  if (p_list.size() != g_list.size() || p_list.size() != m_list.size() ||
      p_list.size() != v_list.size())
    throw std::logic_error("adam_step: tensor lists out of sync");

  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < p_list.size(); ++i) {
    Tensor& p = *p_list[i].tensor;
    const Tensor& g = *g_list[i].tensor;
    Tensor& m = *m_list[i].tensor;
    Tensor& v = *v_list[i].tensor;
    if (p.rows != g.rows || p.cols != g.cols)
      throw std::logic_error("adam_step: gradient shape mismatch for " + p_list[i].name);
    for (size_t k = 0; k < p.data.size(); ++k) {
      m.data[k] = cfg.adam_beta1 * m.data[k] + (1.0 - cfg.adam_beta1) * g.data[k];
      v.data[k] = cfg.adam_beta2 * v.data[k] + (1.0 - cfg.adam_beta2) * g.data[k] * g.data[k];
      const double m_hat = m.data[k] / bc1;
      const double v_hat = v.data[k] / bc2;
      p.data[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

namespace {

double grad_global_norm(const TinyLMParams& grads) {
  double sum = 0.0;
  for (const auto& nt : named_tensors(grads))
    for (double g : nt.tensor->data) sum += g * g;
  return std::sqrt(sum);
}

void scale_grads(TinyLMParams& grads, double factor) {
  for (auto& nt : named_tensors(grads))
    for (double& g : nt.tensor->data) g *= factor;
}

}  // namespace

TrainResult train(const TinyLMConfig& model_cfg, const std::optional<TinyLMParams>& ref_params,
                  const std::vector<TokenizedPair>& dataset, const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train requires a nonempty dataset");
  const bool need_ref =
      cfg.objective.kind == ObjectiveKind::DPO || cfg.objective.kind == ObjectiveKind::DPONLL;
  if (need_ref && !ref_params)
    throw ConfigError("objective '" + to_string(cfg.objective.kind) +
                      "' requires a reference policy");

  TrainResult result;
  result.params = init_params(model_cfg);
  std::optional<TinyLMParams> ref = ref_params;
  AdamState adam = make_adam_state(result.params);

  const size_t n = dataset.size();
  const int steps_per_epoch =
      static_cast<int>((n + cfg.batch_size - 1) / static_cast<size_t>(cfg.batch_size));
  const int total_steps = cfg.epochs * steps_per_epoch;
  // One shuffle stream across epochs; the lr schedule reaches the cosine
  // endpoint exactly at the final step.
  const int schedule_span = std::max(total_steps - 1, 1);
  DetRng shuffle_rng(cfg.shuffle_seed);

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<TokenizedPair> batch;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(n, start + static_cast<size_t>(cfg.batch_size));
      batch.clear();
      for (size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);

      const double lr = cosine_lr(step, schedule_span, cfg.base_lr);
      const auto t0 = std::chrono::steady_clock::now();
      BatchBackward bb = backward(result.params, ref ? &*ref : nullptr, batch, cfg.objective);
      if (cfg.clip_grad_norm > 0.0) {
        const double norm = grad_global_norm(bb.grads);
        if (norm > cfg.clip_grad_norm) scale_grads(bb.grads, cfg.clip_grad_norm / norm);
      }
      adam_step(result.params, bb.grads, adam, lr, cfg);
      if (!cfg.freeze_reference && ref) *ref = result.params;
      const auto t1 = std::chrono::steady_clock::now();

      StepRecord rec;
      rec.step = step;
      rec.lr = lr;
      rec.loss = bb.mean_loss;
      double z_sum = 0.0;
      for (const LossResult& r : bb.per_pair) z_sum += r.z;
      rec.mean_z = z_sum / static_cast<double>(bb.per_pair.size());
      double dr_sum = 0.0;
      for (double dr : bb.delta_r) dr_sum += dr;
      rec.mean_delta_r = dr_sum / static_cast<double>(bb.delta_r.size());
      rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
      result.history.steps.push_back(rec);
      ++step;
    }
  }
  return result;
}

}  // namespace prefopt
