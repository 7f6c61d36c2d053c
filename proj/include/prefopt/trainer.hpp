#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "prefopt/objectives.hpp"
#include "prefopt/tinylm.hpp"

namespace prefopt {

struct TrainConfig {
  ObjectiveConfig objective;
  int epochs = 1;
  int batch_size = 16;
  double base_lr = 1e-4;  // tiny-model default; preset "paper" uses 1e-6
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t shuffle_seed = 0;
  bool freeze_reference = true;
  double clip_grad_norm = 0.0;  // 0 disables clipping

  void validate() const;
};

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double mean_z = 0.0;
  double mean_delta_r = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
};

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(int step, int total_steps, double base_lr);

struct AdamState {
  TinyLMParams m;
  TinyLMParams v;
  long t = 0;
};

AdamState make_adam_state(const TinyLMParams& params);

// Standard Adam with bias correction, no weight decay.
void adam_step(TinyLMParams& params, const TinyLMParams& grads, AdamState& state, double lr,
               const TrainConfig& cfg);

struct TrainResult {
  TinyLMParams params;
  TrainHistory history;
};

// Deterministic mini-batch loop: seeded shuffle per epoch, partial final
// batch kept, cosine-scheduled Adam, per-step history. The schedule is laid
// out so the last step sits at the cosine endpoint (lr exactly 0 when there
// is more than one step). A frozen reference is never touched; with
// freeze_reference off it is re-snapshotted from the policy after each step.
TrainResult train(const TinyLMConfig& model_cfg, const std::optional<TinyLMParams>& ref_params,
                  const std::vector<TokenizedPair>& dataset, const TrainConfig& cfg);

}  // namespace prefopt
