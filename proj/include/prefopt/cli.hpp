#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace prefopt {

// Exit codes: 0 success, 1 user/config error, 2 internal error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitInternalError = 2;

struct ModelOptions {
  int vocab_size = 260;
  int d_model = 32;
  int n_layers = 1;
  int n_heads = 1;
  int d_ff = 128;
  int max_context = 256;
  uint64_t seed = 0;
};

struct PrepareOptions {
  std::string input;  // JSONL path; empty when --synthetic
  bool synthetic = false;
  int directions = 4;
  int pairs_per_direction = 100;
  std::vector<double> corruption_rates = {0.3};
  int min_chars = 50;
  int per_direction = -1;  // -1: 100 for file input, pairs_per_direction for synthetic
  uint64_t seed = 0;
  std::string split = "train";  // file-input mode only
  std::string out_dir;
};

struct TrainOptions {
  std::string data_path;
  std::string objective = "capo";
  double beta = 0.1;
  double alpha = 2.0;
  double gamma = 0.0;
  double lambda_nll = 1.0;
  double epsilon = 1e-8;
  int epochs = 1;
  int batch_size = 16;
  double base_lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t shuffle_seed = 0;
  double clip_grad_norm = 0.0;
  bool ref_init_from_policy = false;
  std::string ref_checkpoint;
  std::string preset;  // "paper" pins lr 1e-6, batch 16, 1 epoch, beta 0.1
  ModelOptions model;
  std::string out_dir;
};

struct EvalOptions {
  std::vector<std::string> checkpoints;  // one, or two for a comparison
  std::string ref_checkpoint;
  std::string data_path;
  std::string objective = "capo";
  double beta = 0.1;
  double gamma = 0.0;
  double epsilon = 1e-8;
  int bins = 60;
  std::string out_dir;
};

struct SweepOptions {
  std::vector<double> alphas;
  std::string train_path;
  std::string val_path;
  double beta = 0.1;
  double epsilon = 1e-8;
  int epochs = 1;
  int batch_size = 16;
  double base_lr = 1e-4;
  uint64_t shuffle_seed = 0;
  ModelOptions model;
  std::string out_dir;
};

int cmd_prepare(const PrepareOptions& opts);
int cmd_train(const TrainOptions& opts);
int cmd_eval(const EvalOptions& opts);
int cmd_sweep(const SweepOptions& opts);

// Relative output directories resolve against $PREFOPT_OUTPUT_ROOT when set.
std::string resolve_out_dir(const std::string& out_dir);

}  // namespace prefopt
