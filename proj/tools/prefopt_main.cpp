#include <CLI11.hpp>

#include "prefopt/cli.hpp"
#include "prefopt/version.hpp"

namespace {

void add_model_flags(CLI::App* cmd, prefopt::ModelOptions& model) {
  cmd->add_option("--vocab-size", model.vocab_size, "Vocabulary size");
  cmd->add_option("--d-model", model.d_model, "Embedding width");
  cmd->add_option("--n-layers", model.n_layers, "Transformer blocks");
  cmd->add_option("--n-heads", model.n_heads, "Attention heads");
  cmd->add_option("--d-ff", model.d_ff, "Feed-forward width");
  cmd->add_option("--max-context", model.max_context, "Maximum sequence length");
  cmd->add_option("--model-seed", model.seed, "Parameter initialization seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-optimization toolkit: DPO, SimPO, DPONLL and CAPO on a tiny policy model"};
  app.set_version_flag("--version", prefopt::kVersion);
  app.require_subcommand(1);

  prefopt::PrepareOptions prep;
  CLI::App* prepare = app.add_subcommand("prepare", "Filter, balance and split preference data");
  prepare->add_option("--input", prep.input, "Input JSONL of preference pairs");
  prepare->add_flag("--synthetic", prep.synthetic, "Generate the synthetic fixture corpus");
  prepare->add_option("--directions", prep.directions, "Synthetic direction count (1-8)");
  prepare->add_option("--pairs-per-direction", prep.pairs_per_direction,
                      "Synthetic pairs generated per direction");
  prepare->add_option("--corruption-rate", prep.corruption_rates,
                      "Corruption rate, one value or one per direction")
      ->delimiter(',');
  prepare->add_option("--min-chars", prep.min_chars, "Keep sources longer than this");
  prepare->add_option("--per-direction", prep.per_direction, "Balanced pairs per direction");
  prepare->add_option("--seed", prep.seed, "Sampling seed");
  prepare->add_option("--split", prep.split, "Split name for file input");
  prepare->add_option("--out", prep.out_dir, "Output directory")->required();

  prefopt::TrainOptions tr;
  CLI::App* train = app.add_subcommand("train", "Train the policy with a preference objective");
  train->add_option("--data", tr.data_path, "Prepared JSONL split")->required();
  train->add_option("--objective", tr.objective, "dpo, simpo, dponll or capo");
  auto* beta_opt = train->add_option("--beta", tr.beta, "Temperature beta");
  train->add_option("--alpha", tr.alpha, "RRM weight (capo)");
  train->add_option("--gamma", tr.gamma, "Target margin (simpo)");
  train->add_option("--lambda-nll", tr.lambda_nll, "NLL weight (dponll)");
  train->add_option("--epsilon", tr.epsilon, "RRM denominator guard");
  auto* epochs_opt = train->add_option("--epochs", tr.epochs, "Training epochs");
  auto* batch_opt = train->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  auto* lr_opt = train->add_option("--lr", tr.base_lr, "Base learning rate");
  train->add_option("--adam-beta1", tr.adam_beta1, "Adam beta1");
  train->add_option("--adam-beta2", tr.adam_beta2, "Adam beta2");
  train->add_option("--adam-eps", tr.adam_eps, "Adam epsilon");
  train->add_option("--shuffle-seed", tr.shuffle_seed, "Epoch shuffle seed");
  train->add_option("--clip-grad-norm", tr.clip_grad_norm, "Global gradient clip (0 = off)");
  train->add_flag("--ref-init-from-policy", tr.ref_init_from_policy,
                  "Freeze the initial policy as the reference");
  train->add_option("--ref-checkpoint", tr.ref_checkpoint, "Reference checkpoint path");
  train->add_option("--preset", tr.preset, "'paper' pins lr 1e-6, batch 16, 1 epoch, beta 0.1");
  add_model_flags(train, tr.model);
  train->add_option("--out", tr.out_dir, "Run directory")->required();

  prefopt::EvalOptions ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate one checkpoint or compare two");
  eval_cmd->add_option("--checkpoint", ev.checkpoints, "Checkpoint path (repeat to compare)")
      ->required()
      ->expected(1, 2);
  eval_cmd->add_option("--ref-checkpoint", ev.ref_checkpoint,
                       "Reference checkpoint for dpo/dponll reward differences");
  eval_cmd->add_option("--data", ev.data_path, "Evaluation JSONL split")->required();
  eval_cmd->add_option("--objective", ev.objective, "Objective whose delta-r form to use");
  eval_cmd->add_option("--beta", ev.beta, "Temperature beta");
  eval_cmd->add_option("--gamma", ev.gamma, "Target margin (simpo)");
  eval_cmd->add_option("--epsilon", ev.epsilon, "RRM denominator guard");
  eval_cmd->add_option("--bins", ev.bins, "Histogram bin count");
  eval_cmd->add_option("--out", ev.out_dir, "Output directory")->required();

  prefopt::SweepOptions sw;
  CLI::App* sweep = app.add_subcommand("sweep", "CAPO alpha sweep");
  sweep->add_option("--alphas", sw.alphas, "Comma-separated alpha values")
      ->required()
      ->delimiter(',');
  sweep->add_option("--train", sw.train_path, "Training JSONL split")->required();
  sweep->add_option("--val", sw.val_path, "Validation JSONL split")->required();
  sweep->add_option("--beta", sw.beta, "Temperature beta");
  sweep->add_option("--epsilon", sw.epsilon, "RRM denominator guard");
  sweep->add_option("--epochs", sw.epochs, "Training epochs per run");
  sweep->add_option("--batch-size", sw.batch_size, "Mini-batch size");
  sweep->add_option("--lr", sw.base_lr, "Base learning rate");
  sweep->add_option("--shuffle-seed", sw.shuffle_seed, "Epoch shuffle seed");
  add_model_flags(sweep, sw.model);
  sweep->add_option("--out", sw.out_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (prepare->parsed()) return prefopt::cmd_prepare(prep);
  if (train->parsed()) {
    if (!tr.preset.empty()) {
      if (tr.preset != "paper") {
        fprintf(stderr, "error: unknown preset '%s'\n", tr.preset.c_str());
        return prefopt::kExitUserError;
      }
      // Preset values yield to flags given explicitly.
      if (lr_opt->count() == 0) tr.base_lr = 1e-6;
      if (batch_opt->count() == 0) tr.batch_size = 16;
      if (epochs_opt->count() == 0) tr.epochs = 1;
      if (beta_opt->count() == 0) tr.beta = 0.1;
    }
    return prefopt::cmd_train(tr);
  }
  if (eval_cmd->parsed()) return prefopt::cmd_eval(ev);
  if (sweep->parsed()) return prefopt::cmd_sweep(sw);
  return prefopt::kExitUserError;
}
